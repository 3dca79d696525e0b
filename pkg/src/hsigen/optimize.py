"""Scene-aware refinement: interaction-bisector point sets, contact /
collision / bisector / regularization / person-to-person losses, and the
gradient descent loop over (t, r, p, h).

The bisector point set is piecewise constant: it is recomputed every few
steps and treated as a constant in between, so its loss term steers the
accept threshold rather than the descent direction.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np
import torch
from scipy.spatial import cKDTree

from . import body
from .scene import Scene, sample_scene_points, sdf_points


class OptimizeError(RuntimeError):
    pass


@dataclass(frozen=True)
class LossWeights:
    w_cont: float = 1.0
    w_coll: float = 5.0
    w_ibs: float = 1.0
    w_reg: float = 0.1
    w_hh: float = 5.0

    def __post_init__(self):
        for name in ("w_cont", "w_coll", "w_ibs", "w_reg", "w_hh"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")


@dataclass
class IbsPointSet:
    points: np.ndarray          # (K,3) equidistant samples
    d_body: np.ndarray          # (K,) distance to the body point set
    d_scene: np.ndarray         # (K,) distance to the scene point set
    penetration: np.ndarray     # (K,) bool
    contact: np.ndarray         # (K,) bool, nearest body vertex carries a contact label
    tol: float

    def __len__(self) -> int:
        return len(self.points)

    @property
    def flagged(self) -> np.ndarray:
        return self.penetration | self.contact


def compute_ibs(body_points, scene_points, n_samples: int = 20000, tol: float = 0.02,
                seed: int = 0, scene: Scene | None = None,
                contact_mask: np.ndarray | None = None,
                contact_band: float = 0.02) -> IbsPointSet:
    """Rejection-sampled equidistant point set between two point sets.

    Candidates are drawn uniformly in the dilated joint bounding box and kept
    when |d_body - d_scene| <= tol * min(1, d_body + d_scene + eps), i.e. the
    acceptance band is relative near contact and capped at tol absolutely.

    Flags need the scene (penetration test at the nearest body vertex) and the
    body's contact mask; without them they stay False.  Both flags also
    require the point to lie within `contact_band` of its nearest body
    vertex: only bisector points at the interaction interface count, far
    bisector sheets do not correspond to any contact or penetration.
    """
    bp = np.asarray(body_points, dtype=float).reshape(-1, 3)
    sp = np.asarray(scene_points, dtype=float).reshape(-1, 3)
    if len(bp) == 0 or len(sp) == 0:
        raise OptimizeError("both point sets must be non-empty")
    if bp.shape == sp.shape and np.allclose(bp, sp):
        raise OptimizeError("point sets must differ for a bisector to exist")

    lo = np.minimum(bp.min(axis=0), sp.min(axis=0))
    hi = np.maximum(bp.max(axis=0), sp.max(axis=0))
    pad = 0.2 * float(np.linalg.norm(hi - lo)) + 0.05
    rng = np.random.default_rng(seed)
    cands = rng.uniform(lo - pad, hi + pad, size=(n_samples, 3))

    body_tree = cKDTree(bp)
    scene_tree = cKDTree(sp)
    d_body, body_idx = body_tree.query(cands)
    d_scene, _ = scene_tree.query(cands)
    keep = np.abs(d_body - d_scene) <= tol * np.minimum(1.0, d_body + d_scene + 1e-6)
    if not keep.any():
        warnings.warn("bisector sampling budget produced no equidistant points")

    pts = cands[keep]
    nearest_body = bp[body_idx[keep]]
    near_interface = d_body[keep] <= contact_band
    if scene is not None and len(pts):
        sdf_at_nearest = np.asarray(sdf_points(scene, nearest_body))
        penetration = (sdf_at_nearest < 0.0) & near_interface
    else:
        penetration = np.zeros(len(pts), dtype=bool)
    if contact_mask is not None and len(pts):
        contact = np.asarray(contact_mask, dtype=bool)[body_idx[keep]] & near_interface
    else:
        contact = np.zeros(len(pts), dtype=bool)
    return IbsPointSet(points=pts, d_body=d_body[keep], d_scene=d_scene[keep],
                       penetration=penetration, contact=contact, tol=tol)


# ---------------------------------------------------------------------------
# loss terms

def loss_contact(mesh: body.BodyMesh, scene: Scene) -> torch.Tensor:
    """Mean squared positive SDF over contact-labeled vertices (0 without labels)."""
    mask = torch.as_tensor(mesh.contact_mask)
    if not bool(mask.any()):
        return torch.zeros((), dtype=mesh.vertices.dtype)
    sdf = sdf_points(scene, mesh.vertices[mask])
    return torch.mean(torch.clamp(sdf, min=0.0) ** 2)


def loss_collision(mesh: body.BodyMesh, scene: Scene) -> torch.Tensor:
    """Mean squared penetration depth over all vertices."""
    sdf = sdf_points(scene, mesh.vertices)
    return torch.mean(torch.clamp(-sdf, min=0.0) ** 2)


def loss_ibs(ibs: IbsPointSet) -> torch.Tensor:
    """Sum of scene distances over bisector points flagged as penetration or
    contact correspondence; constant between bisector recomputations."""
    flagged = ibs.flagged
    if not flagged.any():
        return torch.zeros((), dtype=torch.float64)
    return torch.as_tensor(float(ibs.d_scene[flagged].sum()), dtype=torch.float64)


def loss_reg(params: body.BodyParams, init: body.BodyParams,
             group_weights: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)) -> torch.Tensor:
    """Weighted squared deviation of (t, r, p, h) from the initialization;
    shape is fixed and excluded."""
    w_t, w_r, w_p, w_h = group_weights
    return (w_t * torch.sum((params.t - init.t.detach()) ** 2)
            + w_r * torch.sum((params.r - init.r.detach()) ** 2)
            + w_p * torch.sum((params.p - init.p.detach()) ** 2)
            + w_h * torch.sum((params.h - init.h.detach()) ** 2))


def loss_hh(mesh: body.BodyMesh, others: list[body.BodyMesh]) -> torch.Tensor:
    """Summed squared penetration of this mesh's vertices into the capsule
    unions of other bodies; 0 with no other bodies."""
    if not others:
        return torch.zeros((), dtype=mesh.vertices.dtype)
    total = torch.zeros((), dtype=mesh.vertices.dtype)
    for other in others:
        if other.capsules is None:
            raise OptimizeError("other bodies need capsule primitives for the person loss")
        starts, ends, radii = (c.detach() for c in other.capsules)
        psi = body.capsules_sdf(mesh.vertices, (starts, ends, radii))
        total = total + torch.sum(torch.clamp(-psi, min=0.0) ** 2)
    return total


def total_loss(terms: dict[str, float | torch.Tensor], weights: LossWeights):
    return (weights.w_cont * terms["contact"] + weights.w_coll * terms["collision"]
            + weights.w_ibs * terms["ibs"] + weights.w_reg * terms["reg"]
            + weights.w_hh * terms["hh"])


# ---------------------------------------------------------------------------
# descent loop

@dataclass
class OptimizeResult:
    params: body.BodyParams
    losses: dict[str, float]
    total: float
    improved: bool
    curve: list[dict] = field(default_factory=list)


def _evaluate(params: body.BodyParams, init: body.BodyParams, scene: Scene,
              labels: body.ContactLabels, others: list[body.BodyMesh],
              scene_pts: np.ndarray, ibs: IbsPointSet | None,
              reg_weights, ibs_cfg: dict) -> tuple[dict, IbsPointSet]:
    mesh = body.body_mesh(params).with_contact(labels)
    if ibs is None:
        ibs = compute_ibs(mesh.vertices_np(), scene_pts, scene=scene,
                          contact_mask=labels.mask, **ibs_cfg)
    terms = {
        "contact": loss_contact(mesh, scene),
        "collision": loss_collision(mesh, scene),
        "ibs": loss_ibs(ibs),
        "reg": loss_reg(params, init, reg_weights),
        "hh": loss_hh(mesh, others),
    }
    return terms, ibs


def optimize(init: body.BodyParams, scene: Scene, others: list[body.BodyMesh],
             actions: list[tuple[str, str | None]], weights: LossWeights | None = None,
             steps: int = 300, lr: float = 0.01, momentum: float = 0.9,
             ibs_every: int = 10, ibs_samples: int = 8000, ibs_tol: float = 0.02,
             scene_points: int = 2048, seed: int = 0,
             reg_weights: tuple[float, float, float, float] = (0.1, 1.0, 1.0, 1.0),
             ) -> OptimizeResult:
    """First-order descent with momentum on (t, r, p, h).

    The bisector set is refreshed every `ibs_every` steps.  The refined
    parameters are returned only when their total loss does not exceed the
    initial total; otherwise the initialization is returned unchanged with
    improved=False.
    """
    weights = weights or LossWeights()
    labels = body.assign_contact_labels(actions)
    scene_pts = sample_scene_points(scene, scene_points, seed=seed,
                                    include_floor=True).points
    ibs_cfg = {"n_samples": ibs_samples, "tol": ibs_tol, "seed": seed}

    init = init.clone()
    init_terms, _ = _evaluate(init, init, scene, labels, others, scene_pts,
                              None, reg_weights, ibs_cfg)
    init_total = float(total_loss(init_terms, weights))

    t = init.t.detach().clone().requires_grad_(True)
    r = init.r.detach().clone().requires_grad_(True)
    p = init.p.detach().clone().requires_grad_(True)
    h = init.h.detach().clone().requires_grad_(True)
    opt = torch.optim.SGD([t, r, p, h], lr=lr, momentum=momentum)

    curve: list[dict] = []
    ibs = None
    for step in range(steps):
        params_s = body.BodyParams(t=t, r=r, beta=init.beta, p=p, h=h)
        mesh = body.body_mesh(params_s).with_contact(labels)
        if step % ibs_every == 0:
            ibs = compute_ibs(mesh.vertices_np(), scene_pts, scene=scene,
                              contact_mask=labels.mask, **ibs_cfg)
        terms = {
            "contact": loss_contact(mesh, scene),
            "collision": loss_collision(mesh, scene),
            "ibs": loss_ibs(ibs),
            "reg": loss_reg(params_s, init, reg_weights),
            "hh": loss_hh(mesh, others),
        }
        loss = total_loss(terms, weights)
        opt.zero_grad()
        loss.backward()
        for name, leaf in (("t", t), ("r", r), ("p", p), ("h", h)):
            if leaf.grad is not None and not torch.isfinite(leaf.grad).all():
                raise OptimizeError(
                    f"non-finite gradient in {name} at step {step}; "
                    f"state: t={t.detach().tolist()} r={r.detach().tolist()} "
                    f"losses={ {k: float(v) for k, v in terms.items()} }")
        opt.step()
        curve.append({"step": step,
                      **{k: float(v.detach()) if hasattr(v, "detach") else float(v)
                         for k, v in terms.items()},
                      "total": float(loss.detach())})

    final = body.BodyParams(t=t.detach().clone(), r=r.detach().clone(),
                            beta=init.beta, p=p.detach().clone(), h=h.detach().clone())
    final_terms, _ = _evaluate(final, init, scene, labels, others, scene_pts,
                               None, reg_weights, ibs_cfg)
    final_total = float(total_loss(final_terms, weights))

    if final_total > init_total:
        losses = {k: float(v) for k, v in init_terms.items()}
        return OptimizeResult(params=init, losses=losses, total=init_total,
                              improved=False, curve=curve)
    losses = {k: float(v) for k, v in final_terms.items()}
    return OptimizeResult(params=final, losses=losses, total=final_total,
                          improved=True, curve=curve)


def write_loss_curve(curve: list[dict], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(curve[0].keys()))
        writer.writeheader()
        writer.writerows(curve)
