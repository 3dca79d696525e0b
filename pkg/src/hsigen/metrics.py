"""Physical-plausibility and diversity metrics over generated bodies."""

from __future__ import annotations

import numpy as np

from . import body
from .scene import Scene, sdf_points


class MetricsError(ValueError):
    pass


def contact_score(mesh: body.BodyMesh, scene: Scene, eps: float = 0.02) -> float:
    """Fraction of contact-labeled vertices whose |scene SDF| is within eps."""
    mask = np.asarray(mesh.contact_mask, dtype=bool)
    if not mask.any():
        raise MetricsError("contact score is undefined without contact-labeled vertices")
    sdf = np.asarray(sdf_points(scene, mesh.vertices_np()[mask]))
    return float(np.mean(np.abs(sdf) <= eps))


def non_collision_score(mesh: body.BodyMesh, scene: Scene) -> float:
    """Fraction of all vertices with non-negative scene SDF."""
    sdf = np.asarray(sdf_points(scene, mesh.vertices_np()))
    return float(np.mean(sdf >= 0.0))


def interaction_features(samples: list[body.BodyParams]) -> np.ndarray:
    """Flattened (t, r, p) feature rows used for diversity clustering."""
    rows = [np.concatenate([s.t.detach().numpy(), s.r.detach().numpy(),
                            s.p.detach().numpy()]) for s in samples]
    return np.asarray(rows)


def _kmeans(X: np.ndarray, k: int, seed: int, iters: int = 50,
            restarts: int = 8) -> tuple[np.ndarray, np.ndarray]:
    """Plain k-means with k-means++ seeding; fixed-seed deterministic."""
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(restarts):
        centers = np.empty((k, X.shape[1]))
        centers[0] = X[rng.integers(len(X))]
        d2 = np.sum((X - centers[0]) ** 2, axis=1)
        for j in range(1, k):
            total = d2.sum()
            if total <= 0:
                centers[j] = X[rng.integers(len(X))]
            else:
                centers[j] = X[rng.choice(len(X), p=d2 / total)]
            d2 = np.minimum(d2, np.sum((X - centers[j]) ** 2, axis=1))
        assign = np.zeros(len(X), dtype=int)
        for _ in range(iters):
            dists = np.linalg.norm(X[:, None, :] - centers[None, :, :], axis=-1)
            new_assign = dists.argmin(axis=1)
            if np.array_equal(new_assign, assign) and _ > 0:
                assign = new_assign
                break
            assign = new_assign
            for j in range(k):
                members = X[assign == j]
                if len(members):
                    centers[j] = members.mean(axis=0)
        inertia = float(np.sum((X - centers[assign]) ** 2))
        if best is None or inertia < best[0]:
            best = (inertia, assign.copy(), centers.copy())
    return best[1], best[2]


def diversity(samples: list[body.BodyParams], k: int, seed: int = 0) -> tuple[float, float]:
    """Cluster-based diversity: (entropy of the cluster histogram in bits,
    mean member-to-center distance)."""
    if len(samples) < k:
        raise MetricsError(f"need at least k={k} samples, got {len(samples)}")
    X = interaction_features(samples)
    assign, centers = _kmeans(X, k, seed)
    counts = np.bincount(assign, minlength=k).astype(float)
    p = counts[counts > 0] / counts.sum()
    entropy = float(-(p * np.log2(p)).sum())
    cluster_size = float(np.mean(np.linalg.norm(X - centers[assign], axis=1)))
    return entropy, cluster_size
