"""Procedural synthetic dataset: template scenes with seats and props,
rule-posed bodies placed to satisfy the described relations, and template
text emission.  Every emitted sample passes its own contact and
non-collision checks, and its text re-binds to the instances the body was
actually placed on, so training targets stay consistent with matching.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import body, graphs, textparse
from .scene import Scene, SceneObject, Primitive, build_scene, global_scene_graph, save_scene
from .metrics import contact_score, non_collision_score

HALF_PI = float(np.pi / 2)


@dataclass(frozen=True)
class SeatInfo:
    top_z: float
    center: np.ndarray      # world xy of the sitting/lying surface center
    yaw: float              # facing direction of a seated body
    long_axis_yaw: float    # yaw aligning a lying body with the long axis
    kind: str               # "sit", "lie" or "both"


@dataclass
class SceneTemplate:
    scene: Scene
    seats: dict[str, SeatInfo]
    gsg: graphs.SceneGraph = None

    def __post_init__(self):
        if self.gsg is None:
            self.gsg = global_scene_graph(self.scene)


# ---------------------------------------------------------------------------
# object builders

def _rotz(yaw: float) -> np.ndarray:
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _box(center, dims, yaw=0.0) -> Primitive:
    return Primitive(shape="box", position=np.asarray(center, dtype=float),
                     rotation=_rotz(yaw), dimensions=np.asarray(dims, dtype=float))


def _cyl(center, radius, height) -> Primitive:
    return Primitive(shape="cylinder", position=np.asarray(center, dtype=float),
                     rotation=np.eye(3), dimensions=np.array([radius, height], dtype=float))


def _sphere(center, radius) -> Primitive:
    return Primitive(shape="sphere", position=np.asarray(center, dtype=float),
                     rotation=np.eye(3), dimensions=np.array([radius], dtype=float))


def _seat_obj(oid: str, category: str, xy, yaw: float, seat_dims, seat_top: float,
              back: bool = True) -> tuple[SceneObject, SeatInfo]:
    """A seat: solid base with an optional thin backrest on the local -y side."""
    x, y = xy
    w, d = seat_dims
    prims = [_box([x, y, seat_top / 2.0], [w, d, seat_top], yaw)]
    if back:
        off = _rotz(yaw) @ np.array([0.0, -(d / 2.0 + 0.03), 0.0])
        prims.append(_box([x + off[0], y + off[1], seat_top + 0.25],
                          [w, 0.06, 0.5], yaw))
    obj = SceneObject(id=oid, category=category, primitives=prims, semantic_label=0)
    info = SeatInfo(top_z=seat_top, center=np.array([x, y]), yaw=yaw,
                    long_axis_yaw=yaw + (HALF_PI if w >= d else 0.0),
                    kind="both" if max(w, d) >= 1.2 else "sit")
    return obj, info


def _chair(oid, xy, yaw, category="chair"):
    return _seat_obj(oid, category, xy, yaw, (0.5, 0.5), 0.45)


def _armchair(oid, xy, yaw):
    return _seat_obj(oid, "armchair", xy, yaw, (0.6, 0.55), 0.42)


def _sofa(oid, xy, yaw):
    return _seat_obj(oid, "sofa", xy, yaw, (1.5, 0.6), 0.42)


def _bench(oid, xy, yaw):
    return _seat_obj(oid, "bench", xy, yaw, (1.2, 0.4), 0.45, back=False)


def _stool(oid, xy):
    obj = SceneObject(id=oid, category="stool",
                      primitives=[_cyl([xy[0], xy[1], 0.23], 0.19, 0.46)],
                      semantic_label=0)
    return obj, SeatInfo(top_z=0.46, center=np.asarray(xy, dtype=float), yaw=0.0,
                         long_axis_yaw=0.0, kind="sit")


def _bed(oid, xy, yaw):
    obj = SceneObject(id=oid, category="bed",
                      primitives=[_box([xy[0], xy[1], 0.225], [1.35, 1.95, 0.45], yaw)],
                      semantic_label=0)
    return obj, SeatInfo(top_z=0.45, center=np.asarray(xy, dtype=float), yaw=yaw,
                         long_axis_yaw=yaw, kind="lie")


def _table(oid, xy, category="table"):
    return SceneObject(id=oid, category=category, primitives=[
        _cyl([xy[0], xy[1], 0.34], 0.07, 0.68),
        _box([xy[0], xy[1], 0.705], [0.85, 0.85, 0.05]),
    ], semantic_label=0)


def _block(oid, category, xy, dims, yaw=0.0):
    return SceneObject(id=oid, category=category,
                       primitives=[_box([xy[0], xy[1], dims[2] / 2.0], dims, yaw)],
                       semantic_label=0)


def _plant(oid, xy):
    return SceneObject(id=oid, category="plant", primitives=[
        _cyl([xy[0], xy[1], 0.13], 0.12, 0.26),
        _sphere([xy[0], xy[1], 0.46], 0.2),
    ], semantic_label=0)


def _window(oid, xy, yaw):
    return SceneObject(id=oid, category="window",
                       primitives=[_box([xy[0], xy[1], 1.5], [1.2, 0.08, 1.1], yaw)],
                       semantic_label=0)


# ---------------------------------------------------------------------------
# scene templates

def _assemble(name: str, parts: list) -> SceneTemplate:
    objects, seats = [], {}
    for part in parts:
        if isinstance(part, tuple):
            obj, info = part
            seats[obj.id] = info
        else:
            obj = part
        objects.append(obj)
    # rebuild through the document path so semantic labels are assigned
    scene = Scene(objects=objects, floor_extent=(-3.0, -3.0, 3.0, 3.0), name=name)
    doc_scene = build_scene(_scene_doc(scene))
    return SceneTemplate(scene=doc_scene, seats=seats)


def _scene_doc(scene: Scene) -> dict:
    from .scene import scene_to_doc
    return scene_to_doc(scene)


def make_templates() -> list[SceneTemplate]:
    t = []
    t.append(_assemble("living_room", [
        _sofa("sofa_0", (0.0, -1.9), np.pi),
        _table("table_0", (0.0, -0.6)),
        _chair("chair_0", (-1.5, -0.5), -HALF_PI),
        _chair("chair_1", (1.5, -0.5), HALF_PI),
        _window("window_0", (0.0, 2.9), 0.0),
        _plant("plant_0", (2.4, 2.2)),
    ]))
    t.append(_assemble("dining_room", [
        _table("table_0", (0.0, 0.0)),
        _chair("chair_0", (0.0, -1.1), 0.0),
        _chair("chair_1", (0.0, 1.1), np.pi),
        _chair("chair_2", (-1.1, 0.0), -HALF_PI),
        _chair("chair_3", (1.1, 0.0), HALF_PI),
        _block("cabinet_0", "cabinet", (-2.5, 2.4), (0.55, 0.45, 1.15)),
        _window("window_0", (2.9, 0.0), HALF_PI),
    ]))
    t.append(_assemble("bedroom", [
        _bed("bed_0", (-1.5, 1.6), 0.0),
        _block("nightstand_0", "nightstand", (-2.6, 2.5), (0.45, 0.42, 0.55)),
        _chair("chair_0", (1.0, -1.0), 0.0),
        _window("window_0", (0.5, 2.9), 0.0),
        _plant("plant_0", (2.4, -2.3)),
    ]))
    t.append(_assemble("office", [
        _table("desk_0", (0.0, 1.2), category="desk"),
        _chair("chair_0", (0.0, 0.3), np.pi),
        _block("cabinet_0", "cabinet", (2.5, 2.4), (0.55, 0.45, 1.15)),
        _block("shelf_0", "shelf", (-2.55, 1.5), (0.85, 0.28, 1.5)),
        _window("window_0", (0.0, 2.9), 0.0),
    ]))
    t.append(_assemble("lounge", [
        _sofa("sofa_0", (-1.2, -1.9), np.pi),
        _sofa("sofa_1", (1.2, 0.8), 0.0),
        _table("table_0", (0.0, -0.4)),
        _plant("plant_0", (-2.4, 2.2)),
        _window("window_0", (2.9, -0.5), HALF_PI),
    ]))
    t.append(_assemble("studio", [
        _bed("bed_0", (1.9, 1.8), 0.0),
        _table("table_0", (-1.0, -0.6)),
        _chair("chair_0", (-1.0, -1.7), 0.0),
        _stool("stool_0", (0.4, -0.6)),
        _block("cabinet_0", "cabinet", (-2.5, 2.3), (0.55, 0.45, 1.15)),
    ]))
    t.append(_assemble("reading_room", [
        _armchair("armchair_0", (-0.8, 0.2), HALF_PI),
        _block("shelf_0", "shelf", (-2.55, 0.0), (0.85, 0.28, 1.5)),
        _table("table_0", (0.6, 0.6)),
        _plant("plant_0", (1.8, 1.8)),
        _window("window_0", (0.0, 2.9), 0.0),
    ]))
    t.append(_assemble("bare_room", [
        _chair("chair_0", (-0.6, 0.0), 0.0),
        _table("table_0", (0.9, 0.0)),
    ]))
    t.append(_assemble("garden_room", [
        _plant("plant_0", (1.8, 1.8)),
        _plant("plant_1", (2.35, 1.25)),
        _plant("plant_2", (1.35, 1.05)),
        _bench("bench_0", (-1.2, -1.0), HALF_PI),
        _stool("stool_0", (0.5, -1.6)),
        _window("window_0", (-2.9, 0.0), HALF_PI),
    ]))
    t.append(_assemble("den", [
        _sofa("sofa_0", (0.0, -2.1), np.pi),
        _armchair("armchair_0", (-1.9, -0.6), -HALF_PI),
        _table("table_0", (0.0, -0.9)),
        _block("cabinet_0", "cabinet", (2.5, 2.2), (0.55, 0.45, 1.15)),
        _plant("plant_0", (-2.4, 2.3)),
        _window("window_0", (0.5, 2.9), 0.0),
    ]))
    return t


# ---------------------------------------------------------------------------
# pose templates

def _pose_vec(entries: dict[str, tuple[float, float, float]]) -> np.ndarray:
    p = np.zeros((body.N_JOINTS, 3))
    for name, aa in entries.items():
        p[body.joint_index(name)] = aa
    return p


def _arms(rng: np.random.Generator, mode: str) -> dict:
    jit = rng.uniform(-0.1, 0.1, 4)
    a = np.deg2rad(75)
    if mode == "knees":    # forearms forward, hands above the knees
        return {"l_shoulder": (0, -a + jit[0], 0), "r_shoulder": (0, a + jit[1], 0),
                "l_elbow": (0, 0, -HALF_PI + jit[2]), "r_elbow": (0, 0, HALF_PI + jit[3])}
    return {"l_shoulder": (0, -a + jit[0], 0), "r_shoulder": (0, a + jit[1], 0)}


def _legs(rng: np.random.Generator, hip_x: float, knee_x: float,
          jitter: float = 0.04) -> dict:
    out = {}
    for side in ("l", "r"):
        dh = float(rng.uniform(-jitter, jitter))
        dk = float(rng.uniform(-jitter, jitter))
        hip, knee = hip_x + dh, knee_x + dk
        ankle = -(hip + knee)       # keeps the foot sole level
        out[f"{side}_hip"] = (hip, 0, 0)
        out[f"{side}_knee"] = (knee, 0, 0)
        out[f"{side}_ankle"] = (ankle, 0, 0)
    return out


def pose_template(action: str, rng: np.random.Generator) -> np.ndarray:
    if action == "sit":
        # knees past ninety degrees keep the feet clear of low seat fronts
        return _pose_vec({**_legs(rng, HALF_PI, -np.deg2rad(100), jitter=0.03),
                          **_arms(rng, "knees")})
    if action == "stand":
        return _pose_vec({**_legs(rng, 0.0, 0.0, jitter=0.02), **_arms(rng, "hang")})
    if action == "lie":
        return _pose_vec({**_legs(rng, 0.0, 0.0, jitter=0.03), **_arms(rng, "hang")})
    if action == "crouch":
        return _pose_vec({**_legs(rng, np.deg2rad(120), -np.deg2rad(150), jitter=0.04),
                          **_arms(rng, "knees")})
    raise ValueError(f"no pose template for action {action!r}")


def _yaw_params(yaw: float, pose: np.ndarray, beta: np.ndarray,
                lie: bool = False) -> body.BodyParams:
    rot = _rotz(yaw)
    if lie:
        rx = np.array([[1.0, 0, 0], [0, 0, -1.0], [0, 1.0, 0]])   # +90 deg about x
        rot = rot @ rx
    return body.BodyParams(t=torch.zeros(3, dtype=torch.float64),
                           r=body.matrix_to_rot6d(torch.as_tensor(rot, dtype=torch.float64)),
                           beta=torch.as_tensor(beta, dtype=torch.float64),
                           p=torch.as_tensor(pose.reshape(-1), dtype=torch.float64),
                           h=torch.zeros(4, dtype=torch.float64))


def place_on_surface(params: body.BodyParams, region: np.ndarray,
                     target_xy: np.ndarray, surface_z: float) -> body.BodyParams:
    """Translate so the contact region's centroid sits over target_xy and its
    lowest vertex touches surface_z."""
    mesh = body.body_mesh(params)
    verts = mesh.vertices_np()
    cen = verts[region].mean(axis=0)
    zmin = verts[region][:, 2].min()
    t = torch.tensor([target_xy[0] - cen[0], target_xy[1] - cen[1], surface_z - zmin],
                     dtype=torch.float64)
    return body.BodyParams(t=t, r=params.r, beta=params.beta, p=params.p, h=params.h)


# ---------------------------------------------------------------------------
# sample synthesis

ACTION_MIX = (("sit", 0.45), ("stand", 0.25), ("crouch", 0.15), ("lie", 0.15))
NEAR_WORDS = ("near", "by", "beside", "next to", "close to")
_AXIS_RELS = ("left of", "right of", "in front of", "behind")

PREP_FOR = {"sit": "on", "lie": "on", "crouch": "on", "stand": "on", "lean": "against"}


@dataclass
class SynthConfig:
    n_samples: int = 2000
    max_retries: int = 25
    min_contact: float = 0.9
    min_noncollision: float = 0.99
    relation_prob: float = 0.8


@dataclass
class SynthSample:
    scene: Scene
    text: str
    params: body.BodyParams
    action: str
    target_id: str | None
    anchor_ids: tuple[str, ...] = ()


@dataclass
class SynthDataset:
    samples: list[SynthSample]
    scenes: dict[str, Scene]
    skipped: int = 0

    def triples(self) -> list[tuple[Scene, str, body.BodyParams]]:
        return [(s.scene, s.text, s.params) for s in self.samples]


def _near_word(rng) -> str:
    return NEAR_WORDS[rng.integers(len(NEAR_WORDS))]


def _relation_candidates(gsg: graphs.SceneGraph, src_id: str) -> list[tuple[str, str]]:
    out = []
    for s, r, d in gsg.edges:
        if s == src_id and r in ("near", *_AXIS_RELS):
            node = gsg.nodes[d]
            if node.kind == "object":
                out.append((r, node.category))
    return sorted(set(out))


def _subject(rng) -> str:
    return ("a person", "the person", "a man", "a woman", "someone")[rng.integers(5)]


def _surface_relation(rng, rel: str) -> str:
    return _near_word(rng) if rel == "near" else rel


def _slots_for(rng, action: str, object_class: str | None, relation: str | None,
               anchors: tuple[tuple[str, int], ...]) -> textparse.PersonSlots:
    return textparse.PersonSlots(
        subject=_subject(rng), action=action,
        object_class=object_class,
        object_prep=PREP_FOR[action] if object_class else None,
        relation=relation, rel_anchors=anchors)


def _relation_offset(rng, rel: str, half: np.ndarray) -> np.ndarray:
    gap = rng.uniform(0.25, 0.55)
    side = rng.uniform(-0.3, 0.3)
    if rel == "left of":
        return np.array([-(half[0] + gap), side])
    if rel == "right of":
        return np.array([half[0] + gap, side])
    if rel == "in front of":
        return np.array([side, -(half[1] + gap)])
    if rel == "behind":
        return np.array([side, half[1] + gap])
    ang = rng.uniform(0, 2 * np.pi)
    d = np.array([np.cos(ang), np.sin(ang)])
    return d * (np.abs(half[:2] @ np.abs(d)) + gap)


def _human_relation_holds(verts: np.ndarray, scene: Scene, anchor_id: str, rel: str) -> bool:
    from .scene import object_sdf, RelationThresholds
    th = RelationThresholds()
    obj = scene.object(anchor_id)
    if rel == "near":
        return float(np.min(np.asarray(object_sdf(obj, verts)))) <= th.near_gap
    c = verts.mean(axis=0)
    a = obj.centroid()
    if rel == "left of":
        return c[0] < a[0] - th.axis_margin
    if rel == "right of":
        return c[0] > a[0] + th.axis_margin
    if rel == "in front of":
        return c[1] < a[1] - th.axis_margin
    if rel == "behind":
        return c[1] > a[1] + th.axis_margin
    return True


def synth_sample(template: SceneTemplate, rng: np.random.Generator,
                 lexicon: graphs.ConceptLexicon,
                 config: SynthConfig) -> SynthSample | None:
    scene, gsg = template.scene, template.gsg
    names = [a for a, _ in ACTION_MIX]
    probs = np.array([w for _, w in ACTION_MIX])
    action = names[rng.choice(len(names), p=probs / probs.sum())]

    sit_ids = sorted(i for i, s in template.seats.items() if s.kind in ("sit", "both"))
    lie_ids = sorted(i for i, s in template.seats.items() if s.kind in ("lie", "both"))
    if action == "sit" and not sit_ids:
        action = "stand"
    if action == "lie" and not lie_ids:
        action = "crouch"

    # girth components move together so the seated/lying contact plane stays flat
    beta = rng.uniform(0.85, 1.2, body.SHAPE_DIM)
    girth = rng.uniform(0.85, 1.2)
    beta[[3, 4, 5, 7]] = girth
    beta[1] = rng.uniform(0.85, 1.0)

    for _ in range(config.max_retries):
        if action in ("sit", "lie"):
            pool = sit_ids if action == "sit" else lie_ids
            target = pool[rng.integers(len(pool))]
            category = scene.object(target).category
            rels = _relation_candidates(gsg, target)
            relation = None
            anchors: tuple = ()
            if rels and rng.uniform() < config.relation_prob:
                rel, anchor_cat = rels[rng.integers(len(rels))]
                relation = _surface_relation(rng, rel)
                anchors = ((anchor_cat, 1),)
            slots = _slots_for(rng, action, category, relation, anchors)
        else:
            object_class = "floor" if (action == "crouch" or rng.uniform() < 0.5) else None
            objs = sorted(o.id for o in scene.objects if o.category != "window")
            anchor_id_pick = objs[rng.integers(len(objs))]
            anchor_cat = scene.object(anchor_id_pick).category
            qty = 1
            same_cat = [o.id for o in scene.objects if o.category == anchor_cat]
            if len(same_cat) >= 2 and rng.uniform() < 0.25:
                qty = int(rng.integers(2, min(3, len(same_cat)) + 1))
            rel = "near" if rng.uniform() < 0.7 else _AXIS_RELS[rng.integers(4)]
            relation = _surface_relation(rng, rel)
            slots = _slots_for(rng, action, object_class, relation, ((anchor_cat, qty),))

        text = textparse.render_description([slots])
        parsed = textparse.parse_description(text)[0]
        lsg = textparse.build_local_graph(parsed)
        try:
            _, binding = graphs.match_and_insert_human(gsg, lsg, lexicon)
        except graphs.GraphError:
            continue

        pose = pose_template(action, rng)
        if action in ("sit", "lie"):
            bound_target = binding.mapping.get(parsed.object_class)
            if bound_target is None or bound_target not in template.seats:
                continue
            seat = template.seats[bound_target]
            if action == "sit":
                yaw = seat.yaw + rng.uniform(-0.12, 0.12)
                params0 = _yaw_params(yaw, pose, beta)
                fwd = _rotz(yaw) @ np.array([0.0, 1.0, 0.0])
                # forward of the seat center so the torso clears the backrest
                target_xy = seat.center + fwd[:2] * rng.uniform(0.04, 0.08)
                region = body.body_template().regions["pelvis_thighs"]
                params = place_on_surface(params0, region, target_xy, seat.top_z)
            else:
                yaw = seat.long_axis_yaw + (0.0 if rng.uniform() < 0.5 else np.pi) \
                    + rng.uniform(-0.08, 0.08)
                params0 = _yaw_params(yaw, pose, beta, lie=True)
                region = body.body_template().regions["torso_back"]
                params = place_on_surface(params0, region, seat.center, seat.top_z)
            target_id = bound_target
            anchor_ids = tuple(g for n, g in sorted(binding.mapping.items())
                               if n != parsed.object_class)
        else:
            bound_anchors = [g for n, g in sorted(binding.mapping.items())
                             if gsg.nodes[g].kind == "object"]
            if not bound_anchors:
                continue
            anchor_objs = [scene.object(g) for g in bound_anchors]
            center = np.mean([o.centroid()[:2] for o in anchor_objs], axis=0)
            los, his = zip(*(o.aabb() for o in anchor_objs))
            lo, hi = np.min(los, axis=0), np.max(his, axis=0)
            half = (hi - lo)[:2] / 2.0
            rel_canon = parsed.spatial_relation
            rel_canon = {w: "near" for w in NEAR_WORDS}.get(rel_canon, rel_canon)
            pos = center + _relation_offset(rng, rel_canon, half)
            xmin, ymin, xmax, ymax = scene.floor_extent
            if not (xmin + 0.4 <= pos[0] <= xmax - 0.4 and ymin + 0.4 <= pos[1] <= ymax - 0.4):
                continue
            yaw = rng.uniform(0, 2 * np.pi)
            params0 = _yaw_params(yaw, pose, beta)
            region = np.concatenate([body.body_template().regions["foot_l_sole"],
                                     body.body_template().regions["foot_r_sole"]])
            params = place_on_surface(params0, region, pos, 0.0)
            target_id = None
            anchor_ids = tuple(bound_anchors)

        labels = body.assign_contact_labels([(a.lemma, a.side) for a in parsed.actions])
        mesh = body.body_mesh(params).with_contact(labels)
        try:
            c_score = contact_score(mesh, scene)
        except ValueError:
            c_score = 1.0
        nc_score = non_collision_score(mesh, scene)
        if c_score < config.min_contact or nc_score < config.min_noncollision:
            continue
        verts = mesh.vertices_np()
        rel_canon = parsed.spatial_relation
        if rel_canon is not None:
            rel_canon = {w: "near" for w in NEAR_WORDS}.get(rel_canon, rel_canon)
            if action in ("stand", "crouch") and anchor_ids \
                    and not all(_human_relation_holds(verts, scene, a, rel_canon)
                                for a in anchor_ids):
                continue
        return SynthSample(scene=scene, text=text, params=params, action=action,
                           target_id=target_id, anchor_ids=anchor_ids)
    return None


def synth_dataset(config: SynthConfig, seed: int,
                  templates: list[SceneTemplate] | None = None,
                  lexicon: graphs.ConceptLexicon | None = None) -> SynthDataset:
    """Procedurally sample (scene, text, body) triples; deterministic per seed."""
    templates = templates or make_templates()
    lexicon = lexicon or graphs.default_lexicon()
    samples: list[SynthSample] = []
    skipped = 0
    i = 0
    while len(samples) < config.n_samples:
        rng = np.random.default_rng((seed, i))
        template = templates[rng.integers(len(templates))]
        sample = synth_sample(template, rng, lexicon, config)
        if sample is None:
            skipped += 1
            if skipped > 20 * config.n_samples:
                raise RuntimeError("placement failure rate too high")
        else:
            samples.append(sample)
        i += 1
    scenes = {t.scene.name: t.scene for t in templates}
    return SynthDataset(samples=samples, scenes=scenes, skipped=skipped)


# ---------------------------------------------------------------------------
# on-disk format

def save_dataset(ds: SynthDataset, out_dir) -> None:
    out = Path(out_dir)
    (out / "scenes").mkdir(parents=True, exist_ok=True)
    for name, scene in ds.scenes.items():
        save_scene(scene, out / "scenes" / f"{name}.yaml")
    with open(out / "samples.jsonl", "w", encoding="utf-8") as fh:
        for s in ds.samples:
            fh.write(json.dumps({
                "scene": s.scene.name, "text": s.text, "action": s.action,
                "target_id": s.target_id, "anchor_ids": list(s.anchor_ids),
                "params": s.params.to_dict(),
            }) + "\n")


def load_dataset(in_dir) -> SynthDataset:
    from .scene import load_scene

    root = Path(in_dir)
    scenes = {}
    for path in sorted((root / "scenes").glob("*.yaml")):
        scene = load_scene(path)
        scenes[scene.name] = scene
    samples = []
    with open(root / "samples.jsonl", "r", encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            samples.append(SynthSample(
                scene=scenes[rec["scene"]], text=rec["text"],
                params=body.BodyParams.from_dict(rec["params"]),
                action=rec["action"], target_id=rec["target_id"],
                anchor_ids=tuple(rec["anchor_ids"])))
    return SynthDataset(samples=samples, scenes=scenes)
