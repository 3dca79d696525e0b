"""Transformer conditional VAE over body parameters.

The condition is the concatenation of a hierarchical point-set scene feature,
a scene-graph feature from the matched graph, and a part-level action feature.
The posterior encoder embeds the body mesh with the condition; the decoder
consumes a shape-conditioned body token plus the latent/condition context and
emits (t, r, p, h) with part-token attention restricted by the action mask.

Global translation is decoded relative to the centroid of the bound target
region, which makes placement scene-size invariant.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, asdict, field

import numpy as np
import torch
import torch.nn as nn

from . import body, graphs, pla, textparse
from .nnutil import MLP, TransformerBlock, farthest_point_indices
from .scene import Scene, sample_scene_points

SCENE_FEATURE_DIM = 256
CONDITION_DIM = SCENE_FEATURE_DIM + graphs.GRAPH_FEATURE_DIM + pla.ACTION_FEATURE_DIM

CHECKPOINT_FORMAT = 1


class GeneratorError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 256
    heads: int = 4
    enc_layers: int = 2
    dec_layers: int = 2
    d_z: int = 32
    min_points: int = 256
    cloud_points: int = 1024
    graph_hidden: int = graphs.GRAPH_FEATURE_DIM // 2
    action_hidden: int = 128


@dataclass
class TrainConfig:
    epochs: int = 8
    batch_size: int = 16
    lr: float = 1e-3
    kl_weight: float = 0.1
    kl_anneal_frac: float = 0.2
    param_weight: float = 1.0
    vertex_weight: float = 1.0
    seed: int = 0
    log_path: str | None = None


@dataclass(frozen=True)
class PosteriorParams:
    mu: torch.Tensor
    logvar: torch.Tensor


@dataclass(frozen=True)
class ConditionEmbedding:
    f_s: torch.Tensor
    f_sg: torch.Tensor
    f_a: torch.Tensor

    @property
    def f_ce(self) -> torch.Tensor:
        return build_condition(self.f_s, self.f_sg, self.f_a)


def build_condition(f_s: torch.Tensor, f_sg: torch.Tensor, f_a: torch.Tensor) -> torch.Tensor:
    """Fixed-order concatenation of the three condition features."""
    expected = (SCENE_FEATURE_DIM, graphs.GRAPH_FEATURE_DIM, pla.ACTION_FEATURE_DIM)
    for vec, dim, name in zip((f_s, f_sg, f_a), expected, ("scene", "graph", "action")):
        if vec.numel() != dim:
            raise GeneratorError(f"{name} feature must have length {dim}, got {vec.numel()}")
    return torch.cat([f_s.reshape(-1), f_sg.reshape(-1), f_a.reshape(-1)])


# ---------------------------------------------------------------------------
# scene encoder

@dataclass(frozen=True)
class Grouping:
    """Index structure for the two set-abstraction levels; depends only on
    the point positions, so it can be cached per scene cloud."""
    centers1: np.ndarray      # (C1,) indices into the points
    group1: np.ndarray        # (C1, K1) indices into points, -1 padding
    centers2: np.ndarray      # (C2,) indices into centers1
    group2: np.ndarray        # (C2, K2) indices into centers1


def _radius_knn(points: np.ndarray, centers: np.ndarray, radius: float, k: int) -> np.ndarray:
    """Up to k in-radius neighbors per center, chosen in a canonical order
    (distance, then coordinates) so results ignore input row order."""
    d = np.linalg.norm(points[None, :, :] - centers[:, None, :], axis=-1)
    out = np.full((len(centers), k), -1, dtype=int)
    px, py, pz = points[:, 0], points[:, 1], points[:, 2]
    for c in range(len(centers)):
        cand = np.flatnonzero(d[c] <= radius)
        if len(cand) == 0:
            cand = np.array([int(np.argmin(d[c]))])
        order = np.lexsort((pz[cand], py[cand], px[cand], np.round(d[c][cand], 9)))
        take = cand[order][:k]
        out[c, :len(take)] = take
    return out


class SceneEncoder(nn.Module):
    """Two-level hierarchical point-set encoder: farthest-point subsampling,
    radius grouping, shared per-point feed-forward layers, max pooling per
    group, then a global max pool.  Invariant to input point order.

    Per-point features carry coordinates relative to the grounded target
    region (`origin`), so the feature describes the scene as seen from the
    bound instance rather than in absolute coordinates."""

    def __init__(self, out_dim: int = SCENE_FEATURE_DIM, min_points: int = 256):
        super().__init__()
        self.min_points = min_points
        self.sem_embed = nn.Embedding(64, 8)
        self.mlp1 = MLP([3 + 8 + 3, 32, 64], final_relu=True)
        self.mlp2 = MLP([3 + 64, 128, 128], final_relu=True)
        self.head = MLP([128, 256, out_dim])
        self.centers = (128, 32)
        self.radii = (0.5, 1.0)
        self.group_sizes = (32, 16)

    def build_grouping(self, points: np.ndarray) -> Grouping:
        pos = np.asarray(points, dtype=float)
        c1 = farthest_point_indices(pos, self.centers[0])
        g1 = _radius_knn(pos, pos[c1], self.radii[0], self.group_sizes[0])
        c2 = farthest_point_indices(pos[c1], self.centers[1])
        g2 = _radius_knn(pos[c1], pos[c1][c2], self.radii[1], self.group_sizes[1])
        return Grouping(centers1=c1, group1=g1, centers2=c2, group2=g2)

    @staticmethod
    def _pool(pos: torch.Tensor, feats: torch.Tensor, center_idx: np.ndarray,
              group: np.ndarray, mlp: MLP) -> torch.Tensor:
        gi = torch.as_tensor(np.maximum(group, 0))
        valid = torch.as_tensor(group >= 0)
        centers = pos[torch.as_tensor(center_idx.copy())]
        rel = pos[gi] - centers.unsqueeze(1)
        feat_in = torch.cat([rel, feats[gi]], dim=-1)
        per_point = mlp(feat_in)
        per_point = per_point.masked_fill(~valid.unsqueeze(-1), float("-inf"))
        return per_point.max(dim=1).values

    def forward(self, points, semantics, grouping: Grouping | None = None) -> torch.Tensor:
        dtype = self.sem_embed.weight.dtype
        pos_np = np.asarray(points, dtype=float)
        if pos_np.ndim != 2 or pos_np.shape[0] < self.min_points:
            raise GeneratorError(
                f"scene encoder needs at least {self.min_points} points, got {pos_np.shape}")
        if grouping is None:
            grouping = self.build_grouping(pos_np)
        pos = torch.as_tensor(pos_np, dtype=dtype)
        sem = torch.as_tensor(np.asarray(semantics, dtype=int)).clamp(0, 63)
        feats = self.sem_embed(sem)
        f1 = self._pool(pos, feats, grouping.centers1, grouping.group1, self.mlp1)
        pos1 = pos[torch.as_tensor(grouping.centers1.copy())]
        f2 = self._pool(pos1, f1, grouping.centers2, grouping.group2, self.mlp2)
        return self.head(f2.max(dim=0).values)


def encode_scene(cloud, weights: "SceneEncoder | InteractionVAE",
                 grouping: Grouping | None = None) -> torch.Tensor:
    enc = weights.scene_encoder if isinstance(weights, InteractionVAE) else weights
    return enc(cloud.points, cloud.semantics, grouping)


# ---------------------------------------------------------------------------
# the cVAE

class InteractionVAE(nn.Module):
    def __init__(self, config: ModelConfig | None = None,
                 lexicon: graphs.ConceptLexicon | None = None):
        super().__init__()
        self.config = config or ModelConfig()
        cfg = self.config
        d = cfg.d_model
        self.scene_encoder = SceneEncoder(min_points=cfg.min_points)
        self.graph_encoder = graphs.GraphEncoder(lexicon, hidden=cfg.graph_hidden)
        self.action_encoder = pla.ActionEncoder(hidden=cfg.action_hidden)

        self.mesh_embed = nn.Linear(body.VERTEX_COUNT * 3, d)
        self.ce_embed = nn.Linear(CONDITION_DIM, d)
        self.enc_blocks = nn.ModuleList(TransformerBlock(d, cfg.heads) for _ in range(cfg.enc_layers))
        self.post_head = nn.Linear(d, 2 * cfg.d_z)

        self.body_embed = nn.Linear(body.SHAPE_DIM, d)
        self.ctx_embed = nn.Linear(cfg.d_z + CONDITION_DIM, d)
        self.part_embed = nn.Embedding(len(pla.PARTS), d)
        self.act_embed = nn.Linear(len(pla.action_vocab()) + len(pla.PARTS), d)
        self.dec_blocks = nn.ModuleList(TransformerBlock(d, cfg.heads) for _ in range(cfg.dec_layers))
        self.trh_head = nn.Linear(d, 3 + 6 + body.HAND_DIM)
        self.pose_heads = nn.ModuleDict({
            part: nn.Linear(d, 3 * len(joints))
            for part, joints in body.PART_JOINT_INDICES.items()})
        rest_r = torch.tensor([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])
        self.register_buffer("rest_r", rest_r)
        self.double()

    # -- posterior ---------------------------------------------------------

    def encode_posterior(self, mesh, f_ce: torch.Tensor,
                         origin=None) -> PosteriorParams:
        verts = mesh.vertices if isinstance(mesh, body.BodyMesh) else mesh
        verts = verts.to(self.rest_r.dtype)
        if origin is not None:
            verts = verts - torch.as_tensor(origin, dtype=verts.dtype)
        tokens = torch.stack([self.mesh_embed(verts.reshape(-1)),
                              self.ce_embed(f_ce.to(verts.dtype))])
        for block in self.enc_blocks:
            tokens = block(tokens)
        mu, logvar = self.post_head(tokens.mean(dim=0)).chunk(2)
        return PosteriorParams(mu=mu, logvar=logvar)

    # -- decoder -----------------------------------------------------------

    def _decoder_mask(self, tokens: list[pla.ActionToken]) -> torch.Tensor:
        n_parts = len(pla.PARTS)
        part0 = 2
        act0 = part0 + n_parts
        size = act0 + len(tokens)
        allow = torch.ones(size, size, dtype=torch.bool)
        pla_mask = torch.as_tensor(pla.build_attention_mask(tokens))
        allow[act0:, part0:part0 + n_parts] = pla_mask
        allow[part0:part0 + n_parts, act0:] = pla_mask.T
        return allow

    def decode(self, z: torch.Tensor, f_ce: torch.Tensor, beta: torch.Tensor,
               tokens: list[pla.ActionToken], origin=None) -> body.BodyParams:
        dtype = self.rest_r.dtype
        if not tokens:
            raise GeneratorError("decoder needs at least one action token")
        seq = [self.body_embed(beta.to(dtype)),
               self.ctx_embed(torch.cat([z.to(dtype), f_ce.to(dtype)]))]
        seq.extend(self.part_embed(torch.arange(len(pla.PARTS))))
        for tok in tokens:
            onehot = torch.as_tensor(np.concatenate([tok.e_a, tok.e_bp]), dtype=dtype)
            seq.append(self.act_embed(onehot))
        x = torch.stack(seq)
        allow = self._decoder_mask(tokens)
        for block in self.dec_blocks:
            x = block(x, allow)

        trh = self.trh_head(x[1])
        t_rel, r_raw, h = trh[:3], trh[3:9], trh[9:]
        r = r_raw + self.rest_r
        pose = torch.zeros(body.N_JOINTS, 3, dtype=dtype)
        for i, part in enumerate(pla.PARTS):
            joints = body.PART_JOINT_INDICES[part]
            vals = self.pose_heads[part](x[2 + i]).reshape(len(joints), 3)
            pose = pose.index_put((torch.as_tensor(joints),), vals)
        t = t_rel if origin is None else t_rel + torch.as_tensor(origin, dtype=dtype)
        return body.BodyParams(t=t, r=r, beta=beta.detach().to(dtype), p=pose.reshape(-1), h=h)

    def decoder_attention(self) -> list[torch.Tensor]:
        return [blk.attn.last_attn for blk in self.dec_blocks]


def encode_posterior(mesh: body.BodyMesh, f_ce: torch.Tensor,
                     weights: InteractionVAE, origin=None) -> PosteriorParams:
    return weights.encode_posterior(mesh, f_ce, origin)


def reparameterize(post: PosteriorParams, noise) -> torch.Tensor:
    noise = torch.as_tensor(noise, dtype=post.mu.dtype)
    return post.mu + torch.exp(post.logvar / 2.0) * noise


def decode(z: torch.Tensor, f_ce: torch.Tensor, beta: torch.Tensor,
           weights: InteractionVAE, tokens: list[pla.ActionToken],
           origin=None) -> body.BodyParams:
    return weights.decode(z, f_ce, beta, tokens, origin)


# ---------------------------------------------------------------------------
# condition preparation

@dataclass
class PreparedCondition:
    cloud: object
    matched: graphs.SceneGraph
    binding: graphs.Binding
    parsed: textparse.ParsedInteraction
    tokens: list[pla.ActionToken]
    origin: np.ndarray


def scene_cloud(scene: Scene, n_points: int = 1024):
    """Deterministic per-scene point cloud used as encoder input."""
    import zlib
    seed = zlib.crc32(scene.name.encode()) & 0x7FFFFFFF
    return sample_scene_points(scene, n_points, seed=seed, include_floor=True)


def binding_origin(matched: graphs.SceneGraph, binding: graphs.Binding,
                   parsed: textparse.ParsedInteraction) -> np.ndarray:
    """Centroid of the bound target region: the bound object instance when the
    description names one, otherwise the mean of bound anchor centroids."""
    def pos(gid: str):
        node = matched.nodes[gid]
        return None if node.position is None else node.position

    if parsed.object_class and parsed.object_class != "floor":
        gid = binding.mapping.get(parsed.object_class)
        if gid is not None and pos(gid) is not None and matched.nodes[gid].kind != "floor":
            return pos(gid)
    anchor_pos = [pos(g) for n, g in sorted(binding.mapping.items())
                  if matched.nodes[g].kind != "floor" and pos(g) is not None
                  and n != parsed.object_class]
    if anchor_pos:
        return np.mean(anchor_pos, axis=0)
    floor = [n for n in matched.nodes.values() if n.kind == "floor"]
    if floor and floor[0].position is not None:
        return floor[0].position
    return np.zeros(3)


def prepare_condition(scene: Scene, parsed: textparse.ParsedInteraction,
                      gsg: graphs.SceneGraph, lexicon: graphs.ConceptLexicon,
                      n_points: int = 1024) -> PreparedCondition:
    lsg = textparse.build_local_graph(parsed)
    matched, binding = graphs.match_and_insert_human(gsg, lsg, lexicon)
    tokens = pla.action_tokens([(a.lemma, a.side) for a in parsed.actions])
    origin = binding_origin(matched, binding, parsed)
    return PreparedCondition(cloud=scene_cloud(scene, n_points), matched=matched,
                             binding=binding, parsed=parsed, tokens=tokens, origin=origin)


def condition_features(model: InteractionVAE, cond: PreparedCondition,
                       f_s: torch.Tensor | None = None) -> torch.Tensor:
    if f_s is None:
        f_s = encode_scene(cond.cloud, model)
    f_sg = model.graph_encoder(cond.matched)
    f_a = model.action_encoder(cond.tokens)
    return build_condition(f_s, f_sg, f_a)


# ---------------------------------------------------------------------------
# training

@dataclass
class _PreparedSample:
    cond: PreparedCondition
    scene_key: str
    target: body.BodyParams
    target_verts: torch.Tensor
    target_vec: torch.Tensor


def _param_vector(params: body.BodyParams, origin: np.ndarray) -> torch.Tensor:
    t_rel = params.t - torch.as_tensor(origin, dtype=params.t.dtype)
    return torch.cat([t_rel, params.r, params.p, params.h]).detach()


def _pred_vector(params: body.BodyParams, origin: np.ndarray) -> torch.Tensor:
    t_rel = params.t - torch.as_tensor(origin, dtype=params.t.dtype)
    return torch.cat([t_rel, params.r, params.p, params.h])


def kl_divergence(post: PosteriorParams) -> torch.Tensor:
    return 0.5 * torch.sum(post.mu ** 2 + torch.exp(post.logvar) - 1.0 - post.logvar)


def prepare_dataset(dataset, lexicon: graphs.ConceptLexicon | None = None,
                    n_points: int = 1024) -> list[_PreparedSample]:
    lexicon = lexicon or graphs.default_lexicon()
    from .scene import global_scene_graph

    out = []
    gsg_cache: dict[str, graphs.SceneGraph] = {}
    cloud_cache: dict[str, object] = {}
    for scn, text, params in dataset:
        if scn.name not in gsg_cache:
            gsg_cache[scn.name] = global_scene_graph(scn)
            cloud_cache[scn.name] = scene_cloud(scn, n_points)
        parsed = textparse.parse_description(text)
        if len(parsed) != 1:
            raise GeneratorError("training samples must describe exactly one person")
        cond = prepare_condition(scn, parsed[0], gsg_cache[scn.name], lexicon, n_points)
        cond.cloud = cloud_cache[scn.name]
        mesh = body.body_mesh(params)
        out.append(_PreparedSample(
            cond=cond, scene_key=scn.name, target=params,
            target_verts=mesh.vertices.detach(),
            target_vec=_param_vector(params, cond.origin)))
    return out


def training_step(model: InteractionVAE, samples: list[_PreparedSample],
                  kl_weight: float, noise: torch.Tensor | None = None,
                  f_s_cache: dict | None = None,
                  groupings: dict[str, Grouping] | None = None) -> dict:
    """Mean reconstruction (parameter + vertex L2) and KL over one batch."""
    f_s_cache = {} if f_s_cache is None else f_s_cache
    groupings = groupings or {}
    recon_param = 0.0
    recon_vert = 0.0
    kl = 0.0
    for k, smp in enumerate(samples):
        if smp.scene_key not in f_s_cache:
            f_s_cache[smp.scene_key] = encode_scene(smp.cond.cloud, model,
                                                    groupings.get(smp.scene_key))
        f_ce = condition_features(model, smp.cond, f_s=f_s_cache[smp.scene_key])
        post = model.encode_posterior(smp.target_verts, f_ce, origin=smp.cond.origin)
        eps = noise[k] if noise is not None else torch.randn(model.config.d_z, dtype=post.mu.dtype)
        z = reparameterize(post, eps)
        pred = model.decode(z, f_ce, smp.target.beta, smp.cond.tokens, origin=smp.cond.origin)
        pred_vec = _pred_vector(pred, smp.cond.origin)
        recon_param = recon_param + torch.mean((pred_vec - smp.target_vec) ** 2)
        pred_mesh = body.body_mesh(pred)
        recon_vert = recon_vert + torch.mean((pred_mesh.vertices - smp.target_verts) ** 2)
        kl = kl + kl_divergence(post)
    n = len(samples)
    return {"recon_param": recon_param / n, "recon_vert": recon_vert / n,
            "kl": kl / n, "kl_weight": kl_weight}


def train(dataset, config: TrainConfig | None = None,
          model_config: ModelConfig | None = None,
          lexicon: graphs.ConceptLexicon | None = None) -> tuple[InteractionVAE, list[dict]]:
    """Desk-scale training loop; returns the trained model and the loss log."""
    if not dataset:
        raise GeneratorError("training dataset must be non-empty")
    config = config or TrainConfig()
    torch.manual_seed(config.seed)
    model = InteractionVAE(model_config, lexicon)
    prepared = prepare_dataset(dataset, lexicon,
                               n_points=(model_config or ModelConfig()).cloud_points)
    groupings = {}
    for smp in prepared:
        if smp.scene_key not in groupings:
            groupings[smp.scene_key] = model.scene_encoder.build_grouping(smp.cond.cloud.points)
    opt = torch.optim.Adam(model.parameters(), lr=config.lr)
    rng = np.random.default_rng(config.seed)

    steps_total = max(1, config.epochs * ((len(prepared) + config.batch_size - 1) // config.batch_size))
    anneal_steps = max(1, int(config.kl_anneal_frac * steps_total))
    log: list[dict] = []
    step = 0
    t0 = time.time()
    for epoch in range(config.epochs):
        order = rng.permutation(len(prepared))
        for lo in range(0, len(prepared), config.batch_size):
            batch = [prepared[i] for i in order[lo:lo + config.batch_size]]
            kl_w = config.kl_weight * min(1.0, step / anneal_steps)
            terms = training_step(model, batch, kl_w, groupings=groupings)
            loss = (config.param_weight * terms["recon_param"]
                    + config.vertex_weight * terms["recon_vert"]
                    + kl_w * terms["kl"])
            if not torch.isfinite(loss):
                raise GeneratorError(
                    f"non-finite loss at step {step}: "
                    f"recon_param={float(terms['recon_param'].detach())} "
                    f"recon_vert={float(terms['recon_vert'].detach())} "
                    f"kl={float(terms['kl'].detach())}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            log.append({"step": step, "epoch": epoch,
                        "loss": float(loss.detach()),
                        "recon_param": float(terms["recon_param"].detach()),
                        "recon_vert": float(terms["recon_vert"].detach()),
                        "kl": float(terms["kl"].detach()), "kl_weight": kl_w,
                        "elapsed": time.time() - t0})
            step += 1
    if config.log_path:
        write_train_log(log, config.log_path)
    return model, log


def write_train_log(log: list[dict], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(log[0].keys()))
        writer.writeheader()
        writer.writerows(log)


# ---------------------------------------------------------------------------
# sampling

def sample(scene: Scene, text: str, n: int, seed: int, model: InteractionVAE,
           lexicon: graphs.ConceptLexicon | None = None,
           gsg: graphs.SceneGraph | None = None) -> list[tuple[body.BodyParams, graphs.Binding]]:
    """Draw n bodies for a single-person description, seeded and reproducible."""
    from .scene import global_scene_graph

    lexicon = lexicon or graphs.default_lexicon()
    parsed = textparse.parse_description(text)
    if len(parsed) != 1:
        raise GeneratorError("sample() expects a single-person description")
    if gsg is None:
        gsg = global_scene_graph(scene)
    cond = prepare_condition(scene, parsed[0], gsg, lexicon,
                             n_points=model.config.cloud_points)
    with torch.no_grad():
        f_ce = condition_features(model, cond)
        rng = np.random.default_rng(seed)
        out = []
        beta = torch.ones(body.SHAPE_DIM, dtype=torch.float64)
        for _ in range(n):
            z = torch.as_tensor(rng.standard_normal(model.config.d_z), dtype=f_ce.dtype)
            params = model.decode(z, f_ce, beta, cond.tokens, origin=cond.origin)
            out.append((params, cond.binding))
    return out


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(model: InteractionVAE, path, meta: dict | None = None) -> None:
    state = model.state_dict()
    payload = {
        "format": CHECKPOINT_FORMAT,
        "config": asdict(model.config),
        "manifest": {k: list(v.shape) for k, v in state.items()},
        "state_dict": state,
        "meta": meta or {},
    }
    torch.save(payload, path)


def load_checkpoint(path) -> tuple[InteractionVAE, dict]:
    payload = torch.load(path, weights_only=False)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise GeneratorError(f"unsupported checkpoint format {payload.get('format')!r}")
    model = InteractionVAE(ModelConfig(**payload["config"]))
    state = payload["state_dict"]
    manifest = payload["manifest"]
    for name, shape in manifest.items():
        if list(state[name].shape) != shape:
            raise GeneratorError(f"checkpoint manifest mismatch for block {name!r}")
    model.load_state_dict(state)
    model.eval()
    return model, payload.get("meta", {})
