"""Synthetic 3D scene model: primitive geometry, analytic SDFs, surface sampling,
and rule-based global scene graph extraction.

Scenes are unions of rigid primitives (box / cylinder / sphere) standing on a
rectangular floor at z=0 with +z up.  All distances are meters, angles radians.
The canonical frame for spatial predicates is the scene frame itself: smaller x
is "left", smaller y is "in front" (viewer at -y looking toward +y).
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np
import torch
import yaml
from scipy.spatial.transform import Rotation

SCENE_FORMAT_VERSION = 1

SHAPES = ("box", "cylinder", "sphere")

FLOOR_ID = "floor"
FLOOR_SEMANTIC = 0


class SceneError(ValueError):
    """Raised for malformed scene documents or invariant violations."""


@dataclass(frozen=True)
class Primitive:
    shape: str
    position: np.ndarray        # (3,) center in world
    rotation: np.ndarray        # (3,3) orthonormal, det +1
    dimensions: np.ndarray      # box: (sx,sy,sz) full sizes; cylinder: (radius, height); sphere: (radius,)

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise SceneError(f"unknown primitive shape {self.shape!r}")
        if np.any(np.asarray(self.dimensions) <= 0):
            raise SceneError(f"{self.shape} dimensions must be strictly positive")
        R = np.asarray(self.rotation)
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-6) or not np.isclose(np.linalg.det(R), 1.0, atol=1e-6):
            raise SceneError("primitive rotation must be orthonormal with det +1")

    def surface_area(self) -> float:
        d = self.dimensions
        if self.shape == "box":
            sx, sy, sz = d
            return 2.0 * (sx * sy + sx * sz + sy * sz)
        if self.shape == "cylinder":
            r, h = d
            return 2.0 * np.pi * r * h + 2.0 * np.pi * r * r
        r = d[0]
        return 4.0 * np.pi * r * r

    def aabb(self) -> tuple[np.ndarray, np.ndarray]:
        """World axis-aligned bounds (conservative for rotated cylinders)."""
        if self.shape == "box":
            half = np.abs(self.rotation) @ (self.dimensions / 2.0)
        elif self.shape == "cylinder":
            r, h = self.dimensions
            half = np.abs(self.rotation) @ np.array([r, r, h / 2.0])
        else:
            half = np.full(3, self.dimensions[0])
        return self.position - half, self.position + half


@dataclass(frozen=True)
class SceneObject:
    id: str
    category: str
    primitives: list[Primitive]
    semantic_label: int

    def aabb(self) -> tuple[np.ndarray, np.ndarray]:
        los, his = zip(*(p.aabb() for p in self.primitives))
        return np.min(los, axis=0), np.max(his, axis=0)

    def centroid(self) -> np.ndarray:
        """Volume-weighted mean of primitive centers."""
        vols, centers = [], []
        for p in self.primitives:
            d = p.dimensions
            if p.shape == "box":
                v = float(np.prod(d))
            elif p.shape == "cylinder":
                v = float(np.pi * d[0] ** 2 * d[1])
            else:
                v = float(4.0 / 3.0 * np.pi * d[0] ** 3)
            vols.append(v)
            centers.append(p.position)
        w = np.asarray(vols) / sum(vols)
        return np.asarray(centers).T @ w


@dataclass
class Scene:
    objects: list[SceneObject]
    floor_extent: tuple[float, float, float, float]   # xmin, ymin, xmax, ymax
    name: str = "scene"
    _surface_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        ids = [o.id for o in self.objects]
        dupes = {i for i in ids if ids.count(i) > 1}
        if dupes:
            raise SceneError(f"duplicate id: {sorted(dupes)}")
        if FLOOR_ID in ids:
            raise SceneError(f"object id {FLOOR_ID!r} is reserved")
        xmin, ymin, xmax, ymax = self.floor_extent
        if not (xmax > xmin and ymax > ymin):
            raise SceneError("floor_extent must span a positive area")
        for o in self.objects:
            lo, hi = o.aabb()
            if lo[0] < xmin - 1e-9 or lo[1] < ymin - 1e-9 or hi[0] > xmax + 1e-9 or hi[1] > ymax + 1e-9:
                raise SceneError(f"object {o.id!r} footprint outside floor extent")

    def object(self, obj_id: str) -> SceneObject:
        for o in self.objects:
            if o.id == obj_id:
                return o
        raise KeyError(obj_id)

    def floor_center(self) -> np.ndarray:
        xmin, ymin, xmax, ymax = self.floor_extent
        return np.array([(xmin + xmax) / 2.0, (ymin + ymax) / 2.0, 0.0])


@dataclass(frozen=True)
class LabeledPointCloud:
    points: np.ndarray          # (N,3)
    semantics: np.ndarray       # (N,) int labels
    source_object: np.ndarray   # (N,) object id strings (FLOOR_ID for floor points)

    def __post_init__(self):
        if len(self.points) == 0:
            raise SceneError("point cloud must be non-empty")


# ---------------------------------------------------------------------------
# construction / serialization

def build_scene(doc: dict) -> Scene:
    """Build a validated Scene from a parsed scene-description document."""
    if not isinstance(doc, dict):
        raise SceneError("scene document must be a mapping")
    if doc.get("format") != SCENE_FORMAT_VERSION:
        raise SceneError(f"unsupported scene format {doc.get('format')!r}, expected {SCENE_FORMAT_VERSION}")
    if "floor_extent" not in doc or "objects" not in doc:
        raise SceneError("scene document needs 'floor_extent' and 'objects'")
    extent = tuple(float(v) for v in doc["floor_extent"])
    if len(extent) != 4:
        raise SceneError("floor_extent must be [xmin, ymin, xmax, ymax]")

    raw_objects = doc["objects"]
    categories = sorted({str(ro.get("category", "")) for ro in raw_objects})
    default_label = {c: i + 1 for i, c in enumerate(categories)}   # 0 is the floor

    objects = []
    for ro in raw_objects:
        try:
            oid = str(ro["id"])
            category = str(ro["category"])
            prims = []
            for rp in ro["primitives"]:
                rot = Rotation.from_euler("xyz", rp.get("rotation", [0.0, 0.0, 0.0])).as_matrix()
                prims.append(Primitive(
                    shape=str(rp["shape"]),
                    position=np.asarray(rp["position"], dtype=float),
                    rotation=rot,
                    dimensions=np.asarray(rp["dimensions"], dtype=float),
                ))
        except (KeyError, TypeError) as exc:
            raise SceneError(f"malformed object entry: {exc}") from exc
        if not prims:
            raise SceneError(f"object {oid!r} has no primitives")
        label = int(ro.get("semantic_label", default_label[category]))
        objects.append(SceneObject(id=oid, category=category, primitives=prims, semantic_label=label))
    return Scene(objects=objects, floor_extent=extent, name=str(doc.get("name", "scene")))


def scene_to_doc(scene: Scene) -> dict:
    objects = []
    for o in scene.objects:
        prims = []
        for p in o.primitives:
            prims.append({
                "shape": p.shape,
                "position": [float(v) for v in p.position],
                "rotation": [float(v) for v in Rotation.from_matrix(p.rotation).as_euler("xyz")],
                "dimensions": [float(v) for v in p.dimensions],
            })
        objects.append({
            "id": o.id, "category": o.category,
            "semantic_label": o.semantic_label, "primitives": prims,
        })
    return {
        "format": SCENE_FORMAT_VERSION,
        "name": scene.name,
        "floor_extent": [float(v) for v in scene.floor_extent],
        "objects": objects,
    }


def load_scene(path) -> Scene:
    with open(path, "r", encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    return build_scene(doc)


def save_scene(scene: Scene, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(scene_to_doc(scene), fh, sort_keys=False)


# ---------------------------------------------------------------------------
# signed distance field

def _sdf_primitive_torch(prim: Primitive, pts: torch.Tensor) -> torch.Tensor:
    R = torch.as_tensor(prim.rotation, dtype=pts.dtype, device=pts.device)
    c = torch.as_tensor(prim.position, dtype=pts.dtype, device=pts.device)
    local = (pts - c) @ R      # R^T applied row-wise
    d = prim.dimensions
    if prim.shape == "box":
        half = torch.as_tensor(d / 2.0, dtype=pts.dtype, device=pts.device)
        q = local.abs() - half
        outside = torch.linalg.norm(torch.clamp(q, min=0.0), dim=-1)
        inside = torch.clamp(q.max(dim=-1).values, max=0.0)
        return outside + inside
    if prim.shape == "cylinder":
        radius, height = float(d[0]), float(d[1])
        dr = torch.linalg.norm(local[..., :2], dim=-1) - radius
        dz = local[..., 2].abs() - height / 2.0
        dd = torch.stack([dr, dz], dim=-1)
        outside = torch.linalg.norm(torch.clamp(dd, min=0.0), dim=-1)
        inside = torch.clamp(dd.max(dim=-1).values, max=0.0)
        return outside + inside
    return torch.linalg.norm(local, dim=-1) - float(d[0])


def object_sdf(obj: SceneObject, points) -> torch.Tensor | np.ndarray | float:
    """SDF of one object (union of its primitives), excluding the floor."""
    pts, restore = _as_points(points)
    vals = torch.stack([_sdf_primitive_torch(p, pts) for p in obj.primitives])
    return restore(vals.min(dim=0).values)


def sdf_points(scene: Scene, points) -> torch.Tensor | np.ndarray | float:
    """Union SDF over all objects plus the floor half-space (solid below z=0).

    Negative inside any object or below the floor, positive outside all,
    zero on surfaces.  Accepts a (3,) point or an (N,3) batch, numpy or torch;
    torch inputs keep their autograd graph.
    """
    pts, restore = _as_points(points)
    parts = [pts[..., 2]]      # floor half-space
    for obj in scene.objects:
        for p in obj.primitives:
            parts.append(_sdf_primitive_torch(p, pts))
    return restore(torch.stack(parts).min(dim=0).values)


def scene_sdf(scene: Scene, point) -> float:
    """Signed distance (meters) from one 3D point to the scene union."""
    if len(scene.objects) == 0:
        raise SceneError("scene_sdf requires a non-empty scene")
    return float(sdf_points(scene, np.asarray(point, dtype=float)))


def _as_points(points):
    """Normalize input to an (N,3) torch tensor and return an inverse mapper."""
    if isinstance(points, torch.Tensor):
        if points.dim() == 1:
            return points.unsqueeze(0), lambda v: v.squeeze(0)
        return points, lambda v: v
    arr = np.asarray(points, dtype=float)
    single = arr.ndim == 1
    t = torch.as_tensor(arr.reshape(-1, 3), dtype=torch.float64)
    if single:
        return t, lambda v: float(v.squeeze(0).item())
    return t, lambda v: v.numpy()


# ---------------------------------------------------------------------------
# surface sampling

def _sample_on_primitive(prim: Primitive, n: int, rng: np.random.Generator) -> np.ndarray:
    d = prim.dimensions
    if prim.shape == "box":
        sx, sy, sz = d / 2.0
        areas = np.array([sy * sz, sy * sz, sx * sz, sx * sz, sx * sy, sx * sy])
        face = rng.choice(6, size=n, p=areas / areas.sum())
        u = rng.uniform(-1.0, 1.0, size=(n, 2))
        local = np.empty((n, 3))
        axis = face // 2
        sign = np.where(face % 2 == 0, 1.0, -1.0)
        half = np.array([sx, sy, sz])
        for i in range(n):
            a = axis[i]
            others = [j for j in range(3) if j != a]
            local[i, a] = sign[i] * half[a]
            local[i, others[0]] = u[i, 0] * half[others[0]]
            local[i, others[1]] = u[i, 1] * half[others[1]]
    elif prim.shape == "cylinder":
        radius, height = d
        lat = 2 * np.pi * radius * height
        cap = np.pi * radius ** 2
        which = rng.choice(3, size=n, p=np.array([lat, cap, cap]) / (lat + 2 * cap))
        theta = rng.uniform(0.0, 2 * np.pi, size=n)
        local = np.empty((n, 3))
        for i in range(n):
            if which[i] == 0:
                z = rng.uniform(-height / 2.0, height / 2.0)
                local[i] = [radius * np.cos(theta[i]), radius * np.sin(theta[i]), z]
            else:
                r = radius * np.sqrt(rng.uniform())
                z = height / 2.0 if which[i] == 1 else -height / 2.0
                local[i] = [r * np.cos(theta[i]), r * np.sin(theta[i]), z]
    else:
        v = rng.normal(size=(n, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        local = v * d[0]
    return local @ prim.rotation.T + prim.position


def sample_scene_points(scene: Scene, n: int, seed: int, include_floor: bool = False) -> LabeledPointCloud:
    """Sample n area-weighted points on object surfaces, deterministic per seed.

    With include_floor=True the floor rectangle participates in the area
    weighting and contributes points labeled FLOOR_SEMANTIC.
    """
    if n < 1:
        raise SceneError("n must be >= 1")
    rng = np.random.default_rng(seed)
    entries = []   # (area, object or None, primitive or None)
    for obj in scene.objects:
        for prim in obj.primitives:
            entries.append((prim.surface_area(), obj, prim))
    if include_floor:
        xmin, ymin, xmax, ymax = scene.floor_extent
        entries.append(((xmax - xmin) * (ymax - ymin), None, None))
    areas = np.array([e[0] for e in entries])
    counts = rng.multinomial(n, areas / areas.sum())

    pts, sems, srcs = [], [], []
    for (area, obj, prim), k in zip(entries, counts):
        if k == 0:
            continue
        if obj is None:
            xmin, ymin, xmax, ymax = scene.floor_extent
            xy = rng.uniform([xmin, ymin], [xmax, ymax], size=(k, 2))
            pts.append(np.column_stack([xy, np.zeros(k)]))
            sems.append(np.full(k, FLOOR_SEMANTIC))
            srcs.extend([FLOOR_ID] * k)
        else:
            pts.append(_sample_on_primitive(prim, k, rng))
            sems.append(np.full(k, obj.semantic_label))
            srcs.extend([obj.id] * k)
    return LabeledPointCloud(
        points=np.concatenate(pts, axis=0),
        semantics=np.concatenate(sems, axis=0).astype(int),
        source_object=np.asarray(srcs, dtype=object),
    )


# ---------------------------------------------------------------------------
# global scene graph

@dataclass(frozen=True)
class RelationThresholds:
    near_gap: float = 0.5       # max surface gap for "near"
    on_gap: float = 0.02        # max vertical gap for "on"
    axis_margin: float = 0.1    # min centroid offset for left/right/front/behind


_GAP_SAMPLES = 192


def _object_surface_samples(scene: Scene, obj: SceneObject) -> np.ndarray:
    key = obj.id
    if key not in scene._surface_cache:
        rng = np.random.default_rng(zlib.crc32(obj.id.encode()) & 0xFFFFFFFF)
        per = max(1, _GAP_SAMPLES // len(obj.primitives))
        pts = np.concatenate([_sample_on_primitive(p, per, rng) for p in obj.primitives])
        scene._surface_cache[key] = pts
    return scene._surface_cache[key]


def surface_gap(scene: Scene, a: SceneObject, b: SceneObject) -> float:
    """Approximate min distance between the surfaces of two objects.

    Evaluated as the min SDF of each object over deterministic surface samples
    of the other; negative when the objects interpenetrate.
    """
    gap_ab = float(np.min(np.asarray(object_sdf(b, _object_surface_samples(scene, a)))))
    gap_ba = float(np.min(np.asarray(object_sdf(a, _object_surface_samples(scene, b)))))
    return min(gap_ab, gap_ba)


def _footprint_overlap(a: SceneObject, b: SceneObject) -> float:
    alo, ahi = a.aabb()
    blo, bhi = b.aabb()
    w = min(ahi[0], bhi[0]) - max(alo[0], blo[0])
    d = min(ahi[1], bhi[1]) - max(alo[1], blo[1])
    return max(w, 0.0) * max(d, 0.0)


def global_scene_graph(scene: Scene, thresholds: RelationThresholds | None = None):
    """Derive the global scene graph from geometry with deterministic predicates.

    One node per object plus a floor node; directed edges over the relation set
    {left of, right of, in front of, behind, above, on, near}.  Left/right and
    front/behind are mirror-consistent; near is emitted in both directions.
    """
    from . import graphs   # deferred: graphs lazily uses scene for MHSI updates

    th = thresholds or RelationThresholds()
    g = graphs.SceneGraph()
    g.add_node(FLOOR_ID, kind="floor", category="floor", position=scene.floor_center())
    for obj in scene.objects:
        g.add_node(obj.id, kind="object", category=obj.category,
                   bound_id=obj.id, position=obj.centroid())

    for obj in scene.objects:
        lo, _ = obj.aabb()
        if lo[2] <= th.on_gap:
            g.add_edge(obj.id, "on", FLOOR_ID)

    for a in scene.objects:
        for b in scene.objects:
            if a.id == b.id:
                continue
            ca, cb = a.centroid(), b.centroid()
            if cb[0] - ca[0] > th.axis_margin:
                g.add_edge(a.id, "left of", b.id)
            if ca[0] - cb[0] > th.axis_margin:
                g.add_edge(a.id, "right of", b.id)
            if cb[1] - ca[1] > th.axis_margin:
                g.add_edge(a.id, "in front of", b.id)
            if ca[1] - cb[1] > th.axis_margin:
                g.add_edge(a.id, "behind", b.id)
            alo, ahi = a.aabb()
            blo, bhi = b.aabb()
            overlap = _footprint_overlap(a, b)
            vgap = alo[2] - bhi[2]
            if overlap > 0.0 and abs(vgap) <= th.on_gap:
                g.add_edge(a.id, "on", b.id)
            elif overlap > 0.0 and vgap > th.on_gap:
                g.add_edge(a.id, "above", b.id)
            if surface_gap(scene, a, b) <= th.near_gap:
                g.add_edge(a.id, "near", b.id)
    return g
