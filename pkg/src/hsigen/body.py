"""Simplified articulated parametric body: a 21-joint kinematic tree skinned
with per-bone capsules (642 vertices), continuous 6-d global orientation,
shape multipliers, and rule-based per-vertex contact labels.

The parameter interface is (t, r, beta, p, h): global translation, 6-d
orientation, 10 shape multipliers, 21x3 axis-angle joint rotations, and a
4-d hand-opening placeholder.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field, replace
from importlib import resources

import numpy as np
import torch
import yaml

N_JOINTS = 21
POSE_DIM = 63
SHAPE_DIM = 10
HAND_DIM = 4
VERTEX_COUNT = 642

BETA_MIN, BETA_MAX = 0.5, 1.5

PART_NAMES = ("head", "torso", "left_arm", "right_arm",
              "left_hand", "right_hand", "left_lower", "right_lower")

REGION_NAMES = ("foot_l_sole", "foot_r_sole", "pelvis_thighs",
                "hand_l_palm", "hand_r_palm", "torso_back", "upper_back")

# joints governed by each body part, in PART_NAMES order
PART_JOINT_INDICES: dict[str, tuple[int, ...]] = {
    "head": (3, 4),
    "torso": (0, 1, 2),
    "left_arm": (13, 14),
    "right_arm": (17, 18),
    "left_hand": (15, 16),
    "right_hand": (19, 20),
    "left_lower": (5, 6, 7, 8),
    "right_lower": (9, 10, 11, 12),
}

_MIRROR = np.diag([-1.0, 1.0, 1.0])


class BodyError(ValueError):
    pass


# ---------------------------------------------------------------------------
# parameters

def _as_vec(value, n: int, name: str) -> torch.Tensor:
    t = torch.as_tensor(value, dtype=torch.float64).reshape(-1)
    if t.numel() != n:
        raise BodyError(f"{name} must have {n} entries, got {t.numel()}")
    return t


@dataclass
class BodyParams:
    t: torch.Tensor        # (3,)
    r: torch.Tensor        # (6,)
    beta: torch.Tensor     # (10,)
    p: torch.Tensor        # (63,)
    h: torch.Tensor        # (4,)

    def __post_init__(self):
        self.t = _as_vec(self.t, 3, "t")
        self.r = _as_vec(self.r, 6, "r")
        self.beta = _as_vec(self.beta, SHAPE_DIM, "beta")
        self.p = _as_vec(self.p, POSE_DIM, "p")
        self.h = _as_vec(self.h, HAND_DIM, "h")
        b = self.beta.detach()
        if bool((b < BETA_MIN - 1e-9).any() or (b > BETA_MAX + 1e-9).any()):
            raise BodyError(f"beta components must lie in [{BETA_MIN}, {BETA_MAX}]")

    @classmethod
    def rest(cls) -> "BodyParams":
        return cls(t=torch.zeros(3, dtype=torch.float64),
                   r=torch.tensor([1.0, 0, 0, 0, 1.0, 0], dtype=torch.float64),
                   beta=torch.ones(SHAPE_DIM, dtype=torch.float64),
                   p=torch.zeros(POSE_DIM, dtype=torch.float64),
                   h=torch.zeros(HAND_DIM, dtype=torch.float64))

    def clone(self) -> "BodyParams":
        return BodyParams(t=self.t.detach().clone(), r=self.r.detach().clone(),
                          beta=self.beta.detach().clone(), p=self.p.detach().clone(),
                          h=self.h.detach().clone())

    def to_dict(self) -> dict:
        return {k: [float(v) for v in getattr(self, k).detach()]
                for k in ("t", "r", "beta", "p", "h")}

    @classmethod
    def from_dict(cls, d: dict) -> "BodyParams":
        return cls(**{k: torch.tensor(d[k], dtype=torch.float64)
                      for k in ("t", "r", "beta", "p", "h")})


@dataclass
class BodyMesh:
    vertices: torch.Tensor          # (V,3)
    faces: np.ndarray               # (F,3) int
    parts: np.ndarray               # (V,) int index into PART_NAMES
    contact_mask: np.ndarray        # (V,) bool
    contact_types: np.ndarray       # (V,) int, 0 = none, else REGION_NAMES index + 1
    capsules: tuple | None = None   # (starts, ends, radii) world-space bone capsules

    def vertices_np(self) -> np.ndarray:
        return self.vertices.detach().cpu().numpy()

    def with_contact(self, labels: "ContactLabels") -> "BodyMesh":
        return replace(self, contact_mask=labels.mask.copy(),
                       contact_types=labels.types.copy())


@dataclass(frozen=True)
class ContactLabels:
    mask: np.ndarray
    types: np.ndarray


# ---------------------------------------------------------------------------
# rotations

def rot6d_to_matrix(r) -> torch.Tensor:
    """Orthonormal rotation from a continuous 6-d representation: Gram-Schmidt
    over the two embedded columns plus their cross product."""
    r = torch.as_tensor(r, dtype=torch.float64) if not isinstance(r, torch.Tensor) else r
    if r.numel() != 6:
        raise BodyError("rotation input must have 6 entries")
    a1, a2 = r.reshape(2, 3)[0], r.reshape(2, 3)[1]
    n1 = torch.linalg.norm(a1)
    if float(n1.detach()) < 1e-8:
        raise BodyError("degenerate 6d rotation: first column is zero")
    b1 = a1 / n1
    a2p = a2 - (b1 @ a2) * b1
    n2 = torch.linalg.norm(a2p)
    if float(n2.detach()) < 1e-8:
        raise BodyError("degenerate 6d rotation: columns are parallel")
    b2 = a2p / n2
    b3 = torch.linalg.cross(b1, b2)
    return torch.stack([b1, b2, b3], dim=1)


def matrix_to_rot6d(m) -> torch.Tensor:
    m = torch.as_tensor(m, dtype=torch.float64) if not isinstance(m, torch.Tensor) else m
    return torch.cat([m[:, 0], m[:, 1]])


def axis_angle_to_matrix(aa: torch.Tensor) -> torch.Tensor:
    """Rodrigues formula over a batch (...,3) of axis-angle vectors."""
    theta = torch.sqrt((aa * aa).sum(dim=-1) + 1e-24)
    k = aa / theta.unsqueeze(-1)
    kx, ky, kz = k[..., 0], k[..., 1], k[..., 2]
    zero = torch.zeros_like(kx)
    K = torch.stack([
        torch.stack([zero, -kz, ky], dim=-1),
        torch.stack([kz, zero, -kx], dim=-1),
        torch.stack([-ky, kx, zero], dim=-1),
    ], dim=-2)
    eye = torch.eye(3, dtype=aa.dtype, device=aa.device).expand(K.shape)
    s = torch.sin(theta)[..., None, None]
    c = torch.cos(theta)[..., None, None]
    return eye + s * K + (1.0 - c) * (K @ K)


# ---------------------------------------------------------------------------
# template

@dataclass(frozen=True)
class _BoneSpec:
    name: str
    parent_joint: int
    child_joint: int
    radius: float
    rings: int
    segments: int
    part: int
    girth_scale: int
    mirror_of: str | None


@dataclass(frozen=True)
class BodyTemplate:
    joint_names: tuple[str, ...]
    parents: np.ndarray                 # (J,)
    offsets: np.ndarray                 # (J,3) rest offsets
    length_scales: np.ndarray           # (J,) beta index or -1
    bones: tuple[_BoneSpec, ...]
    bone_dirs: np.ndarray               # (B,3) rest unit axis
    bone_e1: np.ndarray                 # (B,3)
    bone_e2: np.ndarray                 # (B,3)
    vert_bone: np.ndarray               # (V,)
    vert_axial: np.ndarray              # (V,) fraction along the bone
    vert_c1: np.ndarray                 # (V,) radial cos component
    vert_c2: np.ndarray                 # (V,) radial sin component
    vert_cap: np.ndarray                # (V,) pole extension sign
    faces: np.ndarray                   # (F,3)
    parts: np.ndarray                   # (V,)
    regions: dict[str, np.ndarray]

    @property
    def joint_index(self) -> dict[str, int]:
        return {n: i for i, n in enumerate(self.joint_names)}


def _bone_frame(direction: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    u = direction / np.linalg.norm(direction)
    if np.linalg.norm(u[:2]) < 1e-8:
        e1 = np.array([1.0, 0.0, 0.0])
    else:
        e1 = np.cross(u, np.array([0.0, 0.0, 1.0]))
        e1 /= np.linalg.norm(e1)
    e2 = np.cross(u, e1)
    return e1, e2


@functools.lru_cache(maxsize=1)
def body_template() -> BodyTemplate:
    with resources.files("hsigen.data").joinpath("body_template.yaml").open("r") as fh:
        raw = yaml.safe_load(fh)

    joints = raw["joints"]
    joint_names = tuple(j["name"] for j in joints)
    parents = np.array([j["parent"] for j in joints])
    offsets = np.array([j["offset"] for j in joints], dtype=float)
    length_scales = np.array([-1 if j["length_scale"] is None else j["length_scale"]
                              for j in joints])

    part_idx = {p: i for i, p in enumerate(PART_NAMES)}
    bones = tuple(_BoneSpec(
        name=b["name"], parent_joint=b["joints"][0], child_joint=b["joints"][1],
        radius=float(b["radius"]), rings=int(b["rings"]), segments=int(b["segments"]),
        part=part_idx[b["part"]], girth_scale=int(b["girth_scale"]),
        mirror_of=b.get("mirror_of")) for b in raw["bones"])
    bone_index = {b.name: i for i, b in enumerate(bones)}

    # rest joint positions at neutral shape
    rest = np.zeros((N_JOINTS, 3))
    for j in range(N_JOINTS):
        if parents[j] >= 0:
            rest[j] = rest[parents[j]] + offsets[j]

    dirs = np.zeros((len(bones), 3))
    e1s = np.zeros((len(bones), 3))
    e2s = np.zeros((len(bones), 3))
    for i, b in enumerate(bones):
        axis = rest[b.child_joint] - rest[b.parent_joint]
        dirs[i] = axis / np.linalg.norm(axis)
        if b.mirror_of is None:
            e1s[i], e2s[i] = _bone_frame(axis)
    for i, b in enumerate(bones):
        if b.mirror_of is not None:
            tw = bone_index[b.mirror_of]
            e1s[i] = _MIRROR @ e1s[tw]
            e2s[i] = _MIRROR @ e2s[tw]

    vb, va, vc1, vc2, vcap, vpart = [], [], [], [], [], []
    faces = []
    for i, b in enumerate(bones):
        base = len(vb)
        vb.append(i); va.append(0.0); vc1.append(0.0); vc2.append(0.0)
        vcap.append(-1.0); vpart.append(b.part)                    # start pole
        for ring in range(b.rings):
            s = (ring + 1) / (b.rings + 1)
            for seg in range(b.segments):
                th = 2.0 * np.pi * seg / b.segments
                vb.append(i); va.append(s); vc1.append(np.cos(th)); vc2.append(np.sin(th))
                vcap.append(0.0); vpart.append(b.part)
        vb.append(i); va.append(1.0); vc1.append(0.0); vc2.append(0.0)
        vcap.append(1.0); vpart.append(b.part)                     # end pole
        ring0 = base + 1
        end_pole = base + 1 + b.rings * b.segments
        for seg in range(b.segments):
            faces.append([base, ring0 + seg, ring0 + (seg + 1) % b.segments])
        for ring in range(b.rings - 1):
            r0 = ring0 + ring * b.segments
            r1 = r0 + b.segments
            for seg in range(b.segments):
                a, bb = r0 + seg, r0 + (seg + 1) % b.segments
                c, d = r1 + seg, r1 + (seg + 1) % b.segments
                faces.append([a, bb, d])
                faces.append([a, d, c])
        last = ring0 + (b.rings - 1) * b.segments
        for seg in range(b.segments):
            faces.append([end_pole, last + (seg + 1) % b.segments, last + seg])

    vert_bone = np.array(vb)
    vert_axial = np.array(va)
    vert_c1 = np.array(vc1)
    vert_c2 = np.array(vc2)
    vert_cap = np.array(vcap)
    parts_arr = np.array(vpart)
    if len(vert_bone) != VERTEX_COUNT:
        raise BodyError(f"template produced {len(vert_bone)} vertices, expected {VERTEX_COUNT}")

    # neutral rest vertex positions drive the contact-region index sets
    radial = vert_c1[:, None] * e1s[vert_bone] + vert_c2[:, None] * e2s[vert_bone]
    starts = rest[[bones[i].parent_joint for i in vert_bone]]
    ends = rest[[bones[i].child_joint for i in vert_bone]]
    radii = np.array([bones[i].radius for i in vert_bone])
    rest_verts = (starts + vert_axial[:, None] * (ends - starts)
                  + radii[:, None] * radial
                  + (vcap_col := vert_cap[:, None]) * radii[:, None] * dirs[vert_bone])
    del vcap_col

    def bone_verts(name: str) -> np.ndarray:
        return np.flatnonzero(vert_bone == bone_index[name])

    regions: dict[str, np.ndarray] = {}
    for side in ("l", "r"):
        idx = bone_verts(f"foot_{side}")
        zmin = rest_verts[idx, 2].min()
        regions[f"foot_{side}_sole"] = idx[rest_verts[idx, 2] <= zmin + 1e-4]
    pelvis_pole = bone_verts("pelvis_spine")[vert_cap[bone_verts("pelvis_spine")] < 0]
    thigh_back = []
    for name in ("thigh_l", "thigh_r"):
        idx = bone_verts(name)
        thigh_back.append(idx[(radial[idx, 1] <= -0.5) & (vert_axial[idx] <= 0.45)])
    regions["pelvis_thighs"] = np.concatenate([pelvis_pole, *thigh_back])
    regions["hand_l_palm"] = bone_verts("hand_l")
    regions["hand_r_palm"] = bone_verts("hand_r")
    back = []
    for name in ("pelvis_spine", "spine_chest", "neck_head"):
        idx = bone_verts(name)
        back.append(idx[radial[idx, 1] <= -0.8])
    regions["torso_back"] = np.concatenate(back)
    idx = bone_verts("chest_neck")
    regions["upper_back"] = idx[radial[idx, 1] <= -0.8]

    return BodyTemplate(
        joint_names=joint_names, parents=parents, offsets=offsets,
        length_scales=length_scales, bones=bones, bone_dirs=dirs,
        bone_e1=e1s, bone_e2=e2s, vert_bone=vert_bone, vert_axial=vert_axial,
        vert_c1=vert_c1, vert_c2=vert_c2, vert_cap=vert_cap,
        faces=np.array(faces, dtype=int), parts=parts_arr, regions=regions)


def joint_index(name: str) -> int:
    return body_template().joint_index[name]


# ---------------------------------------------------------------------------
# kinematics

# per-joint axis-angle bounds; hinge joints get tight off-axis bounds
_DEFAULT_LIMIT = (-2.9, 2.9)
_JOINT_LIMITS: dict[str, list[tuple[float, float]]] = {
    "l_knee": [(-2.7, 2.7), (-0.5, 0.5), (-0.5, 0.5)],
    "r_knee": [(-2.7, 2.7), (-0.5, 0.5), (-0.5, 0.5)],
    "l_elbow": [(-0.5, 0.5), (-2.7, 2.7), (-2.7, 2.7)],
    "r_elbow": [(-0.5, 0.5), (-2.7, 2.7), (-2.7, 2.7)],
    "l_ankle": [(-1.2, 1.2), (-1.2, 1.2), (-1.2, 1.2)],
    "r_ankle": [(-1.2, 1.2), (-1.2, 1.2), (-1.2, 1.2)],
}


def joint_limits() -> np.ndarray:
    tpl = body_template()
    table = np.tile(np.array(_DEFAULT_LIMIT), (N_JOINTS, 3, 1))
    for name, rows in _JOINT_LIMITS.items():
        table[tpl.joint_index[name]] = np.array(rows)
    return table


def check_joint_limits(params: BodyParams) -> list[tuple[str, int]]:
    """Soft joint-limit report: list of (joint name, axis) outside the table."""
    tpl = body_template()
    pose = params.p.detach().numpy().reshape(N_JOINTS, 3)
    table = joint_limits()
    out = []
    for j in range(N_JOINTS):
        for a in range(3):
            if not (table[j, a, 0] <= pose[j, a] <= table[j, a, 1]):
                out.append((tpl.joint_names[j], a))
    return out


def _scaled_offsets(beta: torch.Tensor) -> torch.Tensor:
    tpl = body_template()
    off = torch.as_tensor(tpl.offsets, dtype=beta.dtype)
    scale = torch.ones(N_JOINTS, dtype=beta.dtype)
    idx = tpl.length_scales >= 0
    scale = scale.clone()
    scale[torch.as_tensor(idx)] = beta[torch.as_tensor(tpl.length_scales[idx])]
    return off * scale.unsqueeze(-1)


def forward_kinematics(params: BodyParams) -> tuple[torch.Tensor, torch.Tensor]:
    """World transforms of all joints: rotations (21,3,3) and positions (21,3).

    The root frame is (rot6d(r) composed with the pelvis axis-angle, t); child
    frames compose down the fixed tree with bone offsets scaled by beta.
    """
    tpl = body_template()
    pose = params.p.reshape(N_JOINTS, 3)
    local = axis_angle_to_matrix(pose)
    offsets = _scaled_offsets(params.beta)

    rots: list[torch.Tensor] = [torch.empty(0)] * N_JOINTS
    poss: list[torch.Tensor] = [torch.empty(0)] * N_JOINTS
    rots[0] = rot6d_to_matrix(params.r) @ local[0]
    poss[0] = params.t.to(local.dtype)
    for j in range(1, N_JOINTS):
        par = int(tpl.parents[j])
        poss[j] = poss[par] + rots[par] @ offsets[j]
        rots[j] = rots[par] @ local[j]
    return torch.stack(rots), torch.stack(poss)


def body_mesh(params: BodyParams) -> BodyMesh:
    """Deterministic capsule-skinned mesh for the given parameters."""
    tpl = body_template()
    rots, poss = forward_kinematics(params)
    dtype = poss.dtype

    n_bones = len(tpl.bones)
    lengths = torch.empty(n_bones, dtype=dtype)
    radii = torch.empty(n_bones, dtype=dtype)
    offsets = _scaled_offsets(params.beta)
    for i, b in enumerate(tpl.bones):
        lengths[i] = torch.linalg.norm(offsets[b.child_joint])
        radii[i] = b.radius * params.beta[b.girth_scale]

    dirs = torch.as_tensor(tpl.bone_dirs, dtype=dtype)
    e1 = torch.as_tensor(tpl.bone_e1, dtype=dtype)
    e2 = torch.as_tensor(tpl.bone_e2, dtype=dtype)
    vb = torch.as_tensor(tpl.vert_bone)
    axial = torch.as_tensor(tpl.vert_axial, dtype=dtype)
    c1 = torch.as_tensor(tpl.vert_c1, dtype=dtype)
    c2 = torch.as_tensor(tpl.vert_c2, dtype=dtype)
    cap = torch.as_tensor(tpl.vert_cap, dtype=dtype)

    # vertex offsets in the parent joint's rest frame
    along = (axial * lengths[vb] + cap * radii[vb]).unsqueeze(-1) * dirs[vb]
    radial = radii[vb].unsqueeze(-1) * (c1.unsqueeze(-1) * e1[vb] + c2.unsqueeze(-1) * e2[vb])
    local = along + radial

    parent = torch.as_tensor(np.array([tpl.bones[i].parent_joint for i in tpl.vert_bone]))
    verts = poss[parent] + torch.einsum("vij,vj->vi", rots[parent], local)
    caps_start = torch.stack([poss[b.parent_joint] for b in tpl.bones])
    caps_end = torch.stack([poss[b.child_joint] for b in tpl.bones])
    return BodyMesh(vertices=verts, faces=tpl.faces.copy(), parts=tpl.parts.copy(),
                    contact_mask=np.zeros(VERTEX_COUNT, dtype=bool),
                    contact_types=np.zeros(VERTEX_COUNT, dtype=int),
                    capsules=(caps_start.detach(), caps_end.detach(), radii.detach()))


# ---------------------------------------------------------------------------
# contact labels

_LOCOMOTION = {"stand", "stand up", "walk", "run", "move", "step", "step up",
               "step down", "step back", "turn around", "crouch"}
_HAND_TOOL = {"touch", "use", "hold", "support", "supported", "type", "write", "open"}
_NO_CONTACT = {"stretch", "bend", "straight", "raise", "put",
               "head up", "head down", "head left", "head right"}


def _regions_for(action: str, side: str | None) -> list[str]:
    if action in ("sit", "sit down"):
        return ["pelvis_thighs"]
    if action in ("lie", "lie down"):
        return ["torso_back"]
    if action == "lean":
        return ["upper_back"]
    if action in _LOCOMOTION:
        return ["foot_l_sole", "foot_r_sole"]
    if action in _HAND_TOOL:
        if side == "left":
            return ["hand_l_palm"]
        if side == "right" or side is None:     # tool actions default right
            return ["hand_r_palm"]
    if action in _NO_CONTACT:
        return []
    raise BodyError(f"no contact rule for action {action!r}")


def assign_contact_labels(actions: list[tuple[str, str | None]]) -> ContactLabels:
    """Per-vertex contact labels from the action rule table.

    Labels are unions of fixed template regions, so repeated assignment is
    idempotent.  Unknown actions raise.
    """
    from . import pla

    tpl = body_template()
    mask = np.zeros(VERTEX_COUNT, dtype=bool)
    types = np.zeros(VERTEX_COUNT, dtype=int)
    for action, side in actions:
        if action not in pla.action_vocab():
            raise pla.UnknownActionError(f"action {action!r} not in vocabulary")
        for region in _regions_for(action, side):
            idx = tpl.regions[region]
            newly = idx[~mask[idx]]
            mask[idx] = True
            types[newly] = REGION_NAMES.index(region) + 1
    return ContactLabels(mask=mask, types=types)


# ---------------------------------------------------------------------------
# capsules and export

def body_capsules(params: BodyParams) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """World-space capsules (starts, ends, radii) of every bone, as used for
    person-to-person signed distances."""
    tpl = body_template()
    rots, poss = forward_kinematics(params)
    starts = torch.stack([poss[b.parent_joint] for b in tpl.bones])
    ends = torch.stack([poss[b.child_joint] for b in tpl.bones])
    radii = torch.stack([b.radius * params.beta[b.girth_scale] for b in tpl.bones])
    return starts, ends, radii


def capsules_sdf(points: torch.Tensor, capsules: tuple[torch.Tensor, torch.Tensor, torch.Tensor]) -> torch.Tensor:
    """Signed distance from (N,3) points to a capsule union."""
    starts, ends, radii = capsules
    p = points.unsqueeze(1)                      # (N,1,3)
    a = starts.unsqueeze(0).to(points.dtype)     # (1,B,3)
    b = ends.unsqueeze(0).to(points.dtype)
    ab = b - a
    denom = (ab * ab).sum(dim=-1).clamp_min(1e-12)
    t = ((p - a) * ab).sum(dim=-1) / denom
    t = t.clamp(0.0, 1.0)
    closest = a + t.unsqueeze(-1) * ab
    d = torch.linalg.norm(p - closest, dim=-1) - radii.unsqueeze(0).to(points.dtype)
    return d.min(dim=1).values


def export_mesh_obj(mesh: BodyMesh, path) -> None:
    """ASCII OBJ with per-vertex part/contact attributes as comment records."""
    verts = mesh.vertices_np()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# capsule body mesh\n")
        fh.write(f"# vertices {len(verts)} faces {len(mesh.faces)}\n")
        fh.write("# vattr <index> <part> <contact:0|1> <contact_type>\n")
        for v in verts:
            fh.write(f"v {v[0]:.6f} {v[1]:.6f} {v[2]:.6f}\n")
        for i in range(len(verts)):
            ctype = REGION_NAMES[mesh.contact_types[i] - 1] if mesh.contact_types[i] else "-"
            fh.write(f"# vattr {i} {PART_NAMES[mesh.parts[i]]} "
                     f"{int(mesh.contact_mask[i])} {ctype}\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")
