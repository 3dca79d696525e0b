"""End-to-end orchestration: single-person generation, the sequential
multi-human strategy with graph updates, and run configuration."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np
import torch
import yaml

from . import body, graphs, optimize as opt, textparse
from .generator import InteractionVAE, prepare_condition, condition_features
from .metrics import contact_score, non_collision_score, diversity  # noqa: F401  (re-export)
from .scene import Scene, RelationThresholds, global_scene_graph, object_sdf
from .synth import NEAR_WORDS


class PipelineError(RuntimeError):
    pass


@dataclass
class RunConfig:
    weights: opt.LossWeights = field(default_factory=opt.LossWeights)
    steps: int = 300
    lr: float = 0.01
    momentum: float = 0.9
    ibs_every: int = 10
    ibs_samples: int = 8000
    ibs_tol: float = 0.02
    accept_threshold: float = 0.05
    contact_eps: float = 0.02

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        if "weights" in d and isinstance(d["weights"], dict):
            d["weights"] = opt.LossWeights(**d["weights"])
        return cls(**d)


def load_run_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return RunConfig.from_dict(yaml.safe_load(fh) or {})


def save_run_config(config: RunConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(config.to_dict(), fh, sort_keys=False)


@dataclass
class Interaction:
    person_index: int
    text: str
    parsed: textparse.ParsedInteraction | None = None
    params: body.BodyParams | None = None
    mesh: body.BodyMesh | None = None
    binding: graphs.Binding | None = None
    losses: dict = field(default_factory=dict)
    total_loss: float = float("nan")
    accepted: bool = False
    improved: bool = False
    relation_satisfied: bool | None = None
    error: str | None = None
    curve: list = field(default_factory=list)
    gsg_nodes_before: list = field(default_factory=list)

    def manifest(self) -> dict:
        out = {
            "person_index": self.person_index,
            "text": self.text,
            "accepted": self.accepted,
            "improved": self.improved,
            "total_loss": self.total_loss,
            "losses": self.losses,
            "relation_satisfied": self.relation_satisfied,
            "error": self.error,
            "gsg_nodes_before": self.gsg_nodes_before,
        }
        if self.binding is not None:
            out["binding"] = dict(self.binding.mapping)
            out["binding_hints"] = [list(h) for h in self.binding.hints]
        if self.params is not None:
            out["params"] = self.params.to_dict()
        return out


@dataclass
class CandidateSet:
    entries: list[textparse.ParsedInteraction]

    @property
    def l(self) -> int:
        return len(self.entries)

    def __post_init__(self):
        if not self.entries:
            raise PipelineError("candidate set needs at least one person")


def _relation_holds(scene: Scene, verts: np.ndarray, anchor_obj_id: str | None,
                    relation: str) -> bool:
    th = RelationThresholds()
    canon = {w: "near" for w in NEAR_WORDS}.get(relation, relation)
    if anchor_obj_id is None:
        return canon == "near"
    obj = scene.object(anchor_obj_id)
    if canon in ("near", "at", "above", "on"):
        gap = float(np.min(np.asarray(object_sdf(obj, verts))))
        return gap <= th.near_gap
    c = verts.mean(axis=0)
    a = obj.centroid()
    return {
        "left of": c[0] < a[0] - th.axis_margin,
        "right of": c[0] > a[0] + th.axis_margin,
        "in front of": c[1] < a[1] - th.axis_margin,
        "behind": c[1] > a[1] + th.axis_margin,
    }.get(canon, True)


def _check_relation(scene: Scene, matched: graphs.SceneGraph,
                    binding: graphs.Binding, parsed: textparse.ParsedInteraction,
                    verts: np.ndarray) -> bool | None:
    if parsed.spatial_relation is None or not parsed.anchors:
        return None
    ok = True
    for anchor in parsed.anchors:
        if anchor.label != parsed.spatial_relation:
            continue
        for lsg_id, gsg_id in binding.mapping.items():
            node = matched.nodes[gsg_id]
            if node.kind != "object" or node.bound_id is None:
                continue
            if lsg_id.split("_")[0] != anchor.concept and lsg_id != anchor.concept:
                continue
            ok = ok and _relation_holds(scene, verts, node.bound_id, parsed.spatial_relation)
    return ok


def _attachment_node(binding: graphs.Binding,
                     parsed: textparse.ParsedInteraction) -> str | None:
    """GSG node the person is grounded on: the bound object-class instance,
    else the first bound anchor."""
    if parsed.object_class and parsed.object_class in binding.mapping:
        return binding.mapping[parsed.object_class]
    for _, gsg_id in sorted(binding.mapping.items()):
        return gsg_id
    return None


def _generate_person(scene: Scene, gsg: graphs.SceneGraph,
                     parsed: textparse.ParsedInteraction, text: str, index: int,
                     seed: int, model: InteractionVAE, config: RunConfig,
                     others: list[body.BodyMesh],
                     lexicon: graphs.ConceptLexicon) -> Interaction:
    inter = Interaction(person_index=index, text=text, parsed=parsed,
                        gsg_nodes_before=sorted(gsg.nodes))
    cond = prepare_condition(scene, parsed, gsg, lexicon,
                             n_points=model.config.cloud_points)
    inter.binding = cond.binding
    with torch.no_grad():
        f_ce = condition_features(model, cond)
        rng = np.random.default_rng(seed)
        z = torch.as_tensor(rng.standard_normal(model.config.d_z), dtype=f_ce.dtype)
        beta = torch.ones(body.SHAPE_DIM, dtype=torch.float64)
        init = model.decode(z, f_ce, beta, cond.tokens, origin=cond.origin)

    actions = [(a.lemma, a.side) for a in parsed.actions]
    result = opt.optimize(init, scene, others, actions, weights=config.weights,
                          steps=config.steps, lr=config.lr, momentum=config.momentum,
                          ibs_every=config.ibs_every, ibs_samples=config.ibs_samples,
                          ibs_tol=config.ibs_tol, seed=seed)
    labels = body.assign_contact_labels(actions)
    mesh = body.body_mesh(result.params).with_contact(labels)

    inter.params = result.params
    inter.mesh = mesh
    inter.losses = result.losses
    inter.total_loss = result.total
    inter.improved = result.improved
    inter.curve = result.curve
    inter.accepted = result.total <= config.accept_threshold
    inter.relation_satisfied = _check_relation(scene, cond.matched, cond.binding,
                                               parsed, mesh.vertices_np())
    return inter


def generate_interaction(scene: Scene, text: str, seed: int, model: InteractionVAE,
                         config: RunConfig | None = None,
                         lexicon: graphs.ConceptLexicon | None = None,
                         gsg: graphs.SceneGraph | None = None) -> Interaction:
    """Full single-person pipeline: parse, ground, condition, sample, refine."""
    config = config or RunConfig()
    lexicon = lexicon or graphs.default_lexicon()
    parsed = textparse.parse_description(text)
    if len(parsed) != 1:
        raise PipelineError(f"expected a single-person description, got {len(parsed)}")
    if gsg is None:
        gsg = global_scene_graph(scene)
    return _generate_person(scene, gsg, parsed[0], text, 0, seed, model, config,
                            others=[], lexicon=lexicon)


def run_mhsi(scene: Scene, text: str, seed: int, model: InteractionVAE,
             config: RunConfig | None = None,
             lexicon: graphs.ConceptLexicon | None = None) -> list[Interaction]:
    """Sequential multi-person generation with accept/prune graph updates.

    Person i generates against the current global graph; accepted bodies are
    added as human nodes (biasing later matching away from occupied objects)
    and rejected ones prune their grounded object node.
    """
    config = config or RunConfig()
    lexicon = lexicon or graphs.default_lexicon()
    candidates = CandidateSet(entries=textparse.parse_description(text))
    gsg = global_scene_graph(scene)
    accepted_meshes: list[body.BodyMesh] = []
    results: list[Interaction] = []

    for i, parsed in enumerate(candidates.entries):
        try:
            inter = _generate_person(scene, gsg, parsed, text, i, seed + i, model,
                                     config, others=accepted_meshes, lexicon=lexicon)
        except (graphs.GraphError, opt.OptimizeError) as exc:
            results.append(Interaction(
                person_index=i, text=text, parsed=parsed,
                gsg_nodes_before=sorted(gsg.nodes),
                error=f"{type(exc).__name__}: {exc}"))
            continue
        results.append(inter)
        if inter.accepted:
            gsg = graphs.update_graph(gsg, graphs.Accept(
                vertices=inter.mesh.vertices_np(), scene=scene,
                node_id=f"person_{i}"))
            accepted_meshes.append(inter.mesh)
        else:
            target = _attachment_node(inter.binding, parsed) if inter.binding else None
            if target is not None and target in gsg.nodes \
                    and gsg.nodes[target].kind == "object":
                gsg = graphs.update_graph(gsg, graphs.Reject(node_id=target))
    return results


def write_manifest(interactions: list[Interaction], path) -> None:
    payload = {"format": 1, "interactions": [i.manifest() for i in interactions]}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
