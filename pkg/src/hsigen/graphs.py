"""Scene-graph data model, lexicon-based subgraph matching with virtual-human
insertion, graph feature encoding, and the multi-human graph update rules."""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
import torch
import torch.nn as nn
import yaml

from . import pla
from .nnutil import sorted_sum

NODE_KINDS = ("object", "floor", "human", "virtual_human")

GEOMETRIC_RELATIONS = ("left of", "right of", "in front of", "behind", "above", "on", "near")
SPATIAL_SYNONYMS = ("by", "beside", "next to", "close to", "at")

# LSG relation label -> acceptable GSG labels during matching
REL_COMPAT: dict[str, frozenset[str]] = {
    "near": frozenset({"near"}),
    "by": frozenset({"near"}),
    "beside": frozenset({"near"}),
    "next to": frozenset({"near"}),
    "close to": frozenset({"near"}),
    "at": frozenset({"near"}),
    "left of": frozenset({"left of"}),
    "right of": frozenset({"right of"}),
    "in front of": frozenset({"in front of"}),
    "behind": frozenset({"behind"}),
    "above": frozenset({"above", "on"}),
    "on": frozenset({"on"}),
}

GRAPH_FEATURE_DIM = 128


class GraphError(ValueError):
    pass


class NoBinding(GraphError):
    """No consistent assignment of local-graph nodes to scene-graph nodes."""


class AmbiguousConceptUnknown(GraphError):
    """A queried category is absent from both the lexicon and the scene."""


@dataclass
class GraphNode:
    id: str
    kind: str
    category: str
    bound_id: str | None = None
    position: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in NODE_KINDS:
            raise GraphError(f"unknown node kind {self.kind!r}")


@dataclass
class SceneGraph:
    nodes: dict[str, GraphNode] = field(default_factory=dict)
    edges: list[tuple[str, str, str]] = field(default_factory=list)

    def add_node(self, node_id: str, kind: str, category: str,
                 bound_id: str | None = None, position=None) -> GraphNode:
        if node_id in self.nodes:
            raise GraphError(f"duplicate node id {node_id!r}")
        pos = None if position is None else np.asarray(position, dtype=float)
        node = GraphNode(node_id, kind, category, bound_id, pos)
        if kind == "virtual_human" and sum(n.kind == "virtual_human" for n in self.nodes.values()):
            raise GraphError("at most one virtual human node per graph")
        self.nodes[node_id] = node
        return node

    def add_edge(self, src: str, relation: str, dst: str) -> None:
        if src not in self.nodes or dst not in self.nodes:
            raise GraphError(f"edge endpoints must exist: ({src!r}, {relation!r}, {dst!r})")
        self.edges.append((src, relation, dst))

    def remove_node(self, node_id: str) -> None:
        if node_id not in self.nodes:
            raise GraphError(f"unknown node id {node_id!r}")
        del self.nodes[node_id]
        self.edges = [(s, r, d) for (s, r, d) in self.edges if s != node_id and d != node_id]

    def copy(self) -> "SceneGraph":
        g = SceneGraph()
        for n in self.nodes.values():
            g.nodes[n.id] = GraphNode(n.id, n.kind, n.category, n.bound_id,
                                      None if n.position is None else n.position.copy())
        g.edges = list(self.edges)
        return g

    def nodes_of_kind(self, *kinds: str) -> list[GraphNode]:
        return [n for n in self.nodes.values() if n.kind in kinds]

    def virtual_human(self) -> GraphNode | None:
        vh = self.nodes_of_kind("virtual_human")
        return vh[0] if vh else None

    def fresh_id(self, stem: str) -> str:
        if stem not in self.nodes:
            return stem
        i = 2
        while f"{stem}_{i}" in self.nodes:
            i += 1
        return f"{stem}_{i}"


# ---------------------------------------------------------------------------
# lexicon

@dataclass(frozen=True)
class ConceptLexicon:
    entries: dict[str, dict]

    @property
    def concepts(self) -> tuple[str, ...]:
        return tuple(sorted(self.entries))

    def word_forms(self, concept: str) -> frozenset[str]:
        e = self.entries.get(concept)
        if e is None:
            return frozenset({concept})
        return frozenset({concept, *e.get("lemmas", ()), *e.get("synonyms", ())})

    def hypernym_closure(self, concept: str) -> frozenset[str]:
        seen: set[str] = set()
        frontier = [concept]
        while frontier:
            c = frontier.pop()
            for h in self.entries.get(c, {}).get("hypernyms", ()):
                if h not in seen:
                    seen.add(h)
                    frontier.append(h)
        return frozenset(seen)

    def __contains__(self, concept: str) -> bool:
        return concept in self.entries


@functools.lru_cache(maxsize=1)
def default_lexicon() -> ConceptLexicon:
    with resources.files("hsigen.data").joinpath("lexicon.yaml").open("r") as fh:
        raw = yaml.safe_load(fh)["concepts"]
    return ConceptLexicon(entries=raw)


def concepts_match(a: str, b: str, lexicon: ConceptLexicon) -> bool:
    """True when a and b share word forms or when a is-a b (hypernymy is
    directed: an armchair matches a chair query, not the other way round)."""
    if a == b:
        return True
    if a not in lexicon and b not in lexicon:
        return False
    if lexicon.word_forms(a) & lexicon.word_forms(b):
        return True
    return b in lexicon.hypernym_closure(a)


# ---------------------------------------------------------------------------
# matching

@dataclass
class Binding:
    mapping: dict[str, str]                 # LSG object node -> GSG node
    hints: list[tuple[str, str]]            # (bound GSG node, relation label) for human edges
    cost: float = 0.0

    def __post_init__(self):
        bound = list(self.mapping.values())
        if len(bound) != len(set(bound)):
            raise GraphError("binding must be injective over object nodes")


def _occupied_ids(gsg: SceneGraph) -> set[str]:
    humans = {n.id for n in gsg.nodes_of_kind("human")}
    return {d for (s, r, d) in gsg.edges if s in humans and r == "on"}


def _binding_cost(gsg: SceneGraph, assignment: dict[str, str],
                  occupied: set[str], occupancy_penalty: float) -> float:
    bound = [gsg.nodes[g] for g in assignment.values()]
    cost = occupancy_penalty * sum(1 for n in bound if n.id in occupied)
    placed = [n for n in bound if n.kind != "floor" and n.position is not None]
    for i in range(len(placed)):
        for j in range(i + 1, len(placed)):
            cost += float(np.linalg.norm(placed[i].position - placed[j].position))
    return cost


def match_and_insert_human(gsg: SceneGraph, lsg: SceneGraph, lexicon: ConceptLexicon,
                           occupancy_penalty: float = 5.0) -> tuple[SceneGraph, Binding]:
    """Bind every LSG object node to a distinct, concept- and relation-
    compatible GSG node, then graft the virtual human node onto the GSG with
    its edges retargeted to the bound instances.

    Among consistent bindings the one minimizing summed pairwise centroid
    distance (plus a penalty for already-occupied instances) wins; remaining
    ties break on the lexicographically smallest assignment.
    """
    human = lsg.virtual_human()
    if human is None:
        raise GraphError("local graph must contain exactly one virtual human node")

    lsg_objects = [n for n in lsg.nodes.values() if n.id != human.id]
    gsg_candidates: dict[str, list[str]] = {}
    scene_categories = {n.category for n in gsg.nodes.values()}
    for node in lsg_objects:
        cands = [g.id for g in gsg.nodes.values()
                 if g.kind in ("object", "floor")
                 and concepts_match(g.category, node.category, lexicon)]
        if not cands:
            if node.category not in lexicon and node.category not in scene_categories:
                raise AmbiguousConceptUnknown(
                    f"category {node.category!r} is in neither the lexicon nor the scene")
            raise NoBinding(f"no scene instance compatible with {node.category!r}")
        gsg_candidates[node.id] = sorted(cands)

    # edges between two object nodes constrain the assignment; edges touching
    # the virtual human only shape placement and cost
    oo_edges = [(s, r, d) for (s, r, d) in lsg.edges if s != human.id and d != human.id]
    gsg_rels: dict[tuple[str, str], set[str]] = {}
    for s, r, d in gsg.edges:
        gsg_rels.setdefault((s, d), set()).add(r)

    order = sorted(lsg_objects, key=lambda n: (len(gsg_candidates[n.id]), n.id))
    occupied = _occupied_ids(gsg)
    best: tuple[float, tuple, dict[str, str]] | None = None

    def consistent(assignment: dict[str, str]) -> bool:
        for s, r, d in oo_edges:
            if s in assignment and d in assignment:
                allowed = REL_COMPAT.get(r, frozenset({r}))
                if not (gsg_rels.get((assignment[s], assignment[d]), set()) & allowed):
                    return False
        return True

    def search(i: int, assignment: dict[str, str], used: set[str]) -> None:
        nonlocal best
        if i == len(order):
            cost = _binding_cost(gsg, assignment, occupied, occupancy_penalty)
            key = (cost, tuple(sorted(assignment.items())))
            if best is None or key < best[:2]:
                best = (key[0], key[1], dict(assignment))
            return
        node = order[i]
        for cand in gsg_candidates[node.id]:
            if cand in used:
                continue
            assignment[node.id] = cand
            if consistent(assignment):
                search(i + 1, assignment, used | {cand})
            del assignment[node.id]

    search(0, {}, set())
    if best is None:
        raise NoBinding("no relation-consistent assignment exists")

    mapping = best[2]
    matched = gsg.copy()
    human_id = matched.fresh_id(human.id)
    matched.add_node(human_id, kind="virtual_human", category=human.category)
    hints = []
    for s, r, d in lsg.edges:
        if s == human.id:
            matched.add_edge(human_id, r, mapping[d])
            hints.append((mapping[d], r))
        elif d == human.id:
            matched.add_edge(mapping[s], r, human_id)
            hints.append((mapping[s], r))
    return matched, Binding(mapping=mapping, hints=hints, cost=best[0])


# ---------------------------------------------------------------------------
# graph encoding

@functools.lru_cache(maxsize=1)
def relation_vocab() -> tuple[str, ...]:
    rels = ["<unk>", *GEOMETRIC_RELATIONS, *SPATIAL_SYNONYMS]
    for a in pla.action_vocab():
        rels.append(a)
        rels.append(f"{a} on")
        rels.append(f"{a} against")
    return tuple(rels)


class GraphEncoder(nn.Module):
    """Relational message passing over one-hot kind/category/relation features,
    mean-pooled and concatenated with the virtual-human embedding."""

    def __init__(self, lexicon: ConceptLexicon | None = None,
                 hidden: int = GRAPH_FEATURE_DIM // 2, rounds: int = 3):
        super().__init__()
        self.lexicon = lexicon or default_lexicon()
        self.categories = ("<unk>", *self.lexicon.concepts)
        self.relations = relation_vocab()
        self.rounds = rounds
        self.hidden = hidden
        in_dim = len(NODE_KINDS) + len(self.categories)
        self.in_proj = nn.Linear(in_dim, hidden)
        self.self_proj = nn.Linear(hidden, hidden)
        self.msg_proj = nn.Linear(hidden + len(self.relations), hidden)
        self.out_dim = 2 * hidden

    def _node_features(self, sg: SceneGraph, node_ids: list[str], dtype) -> torch.Tensor:
        feats = np.zeros((len(node_ids), len(NODE_KINDS) + len(self.categories)))
        cat_index = {c: i for i, c in enumerate(self.categories)}
        for row, nid in enumerate(node_ids):
            node = sg.nodes[nid]
            feats[row, NODE_KINDS.index(node.kind)] = 1.0
            feats[row, len(NODE_KINDS) + cat_index.get(node.category, 0)] = 1.0
        return torch.as_tensor(feats, dtype=dtype)

    def forward(self, sg: SceneGraph) -> torch.Tensor:
        if not sg.nodes:
            raise GraphError("cannot encode an empty graph")
        dtype = self.in_proj.weight.dtype
        node_ids = list(sg.nodes)
        index = {nid: i for i, nid in enumerate(node_ids)}
        rel_index = {r: i for i, r in enumerate(self.relations)}
        h = torch.relu(self.in_proj(self._node_features(sg, node_ids, dtype)))

        incoming: dict[int, list[tuple[int, int]]] = {i: [] for i in range(len(node_ids))}
        for s, r, d in sg.edges:
            incoming[index[d]].append((index[s], rel_index.get(r, 0)))

        n_rel = len(self.relations)
        for _ in range(self.rounds):
            nxt = []
            for i in range(len(node_ids)):
                agg = torch.zeros(self.hidden, dtype=dtype)
                if incoming[i]:
                    msgs = []
                    for src, rel in incoming[i]:
                        rel_onehot = torch.zeros(n_rel, dtype=dtype)
                        rel_onehot[rel] = 1.0
                        msgs.append(self.msg_proj(torch.cat([h[src], rel_onehot])))
                    agg = sorted_sum(torch.stack(msgs)) / len(msgs)
                nxt.append(torch.relu(self.self_proj(h[i]) + agg))
            h = torch.stack(nxt)

        pooled = sorted_sum(h) / len(node_ids)
        vh = sg.virtual_human()
        human_part = h[index[vh.id]] if vh is not None else torch.zeros(self.hidden, dtype=dtype)
        return torch.cat([pooled, human_part])


def encode_graph(sg: SceneGraph, weights: GraphEncoder) -> torch.Tensor:
    return weights(sg)


# ---------------------------------------------------------------------------
# multi-human updates

@dataclass
class Accept:
    vertices: np.ndarray      # placed body vertices, world frame
    scene: object             # hsigen.scene.Scene
    node_id: str | None = None


@dataclass
class Reject:
    node_id: str


def update_graph(gsg: SceneGraph, event: Accept | Reject) -> SceneGraph:
    """Copy-on-update MHSI rule: Accept grafts a human node with geometric
    on/near edges from the placed body; Reject prunes the named object node."""
    from . import scene as scene_mod

    g = gsg.copy()
    if isinstance(event, Reject):
        g.remove_node(event.node_id)
        return g

    verts = np.asarray(event.vertices, dtype=float)
    th = scene_mod.RelationThresholds()
    hid = g.fresh_id(event.node_id or "person_1")
    g.add_node(hid, kind="human", category="person", position=verts.mean(axis=0))
    for node in list(g.nodes.values()):
        if node.kind == "object" and node.bound_id is not None:
            obj = event.scene.object(node.bound_id)
            gap = float(np.min(np.asarray(scene_mod.object_sdf(obj, verts))))
        elif node.kind == "floor":
            gap = float(verts[:, 2].min())
        else:
            continue
        if gap <= th.on_gap:
            g.add_edge(hid, "on", node.id)
        elif gap <= th.near_gap:
            g.add_edge(hid, "near", node.id)
    return g


# ---------------------------------------------------------------------------
# debug text serialization

def graph_to_text(sg: SceneGraph) -> str:
    lines = ["# scene-graph format: 1"]
    for n in sg.nodes.values():
        pos = "-" if n.position is None else ",".join(f"{v:.6f}" for v in n.position)
        lines.append("\t".join(["node", n.id, n.kind, n.category, n.bound_id or "-", pos]))
    for s, r, d in sg.edges:
        lines.append("\t".join(["edge", s, r, d]))
    return "\n".join(lines) + "\n"


def graph_from_text(text: str) -> SceneGraph:
    g = SceneGraph()
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if parts[0] == "node":
            _, nid, kind, category, bound, pos = parts
            g.add_node(nid, kind=kind, category=category,
                       bound_id=None if bound == "-" else bound,
                       position=None if pos == "-" else [float(v) for v in pos.split(",")])
        elif parts[0] == "edge":
            _, s, r, d = parts
            g.add_edge(s, r, d)
        else:
            raise GraphError(f"unknown record {parts[0]!r}")
    return g
