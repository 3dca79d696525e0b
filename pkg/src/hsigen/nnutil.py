"""Small neural-net building blocks shared by the encoders and the cVAE."""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F


def sorted_sum(rows: torch.Tensor) -> torch.Tensor:
    """Sum of rows in a canonical (value-sorted) order.

    Floating-point addition is order dependent; summing rows after a
    lexicographic sort makes pooled reductions bitwise invariant to the
    caller's row ordering (node relabeling, token permutation).
    """
    if rows.shape[0] <= 1:
        return rows.sum(dim=0)
    keys = rows.detach().cpu().numpy()
    order = np.lexsort(tuple(keys[:, i] for i in reversed(range(keys.shape[1]))))
    return rows[torch.as_tensor(order.copy(), device=rows.device)].sum(dim=0)


def farthest_point_indices(points: np.ndarray, k: int) -> np.ndarray:
    """Deterministic farthest point sampling over an (N,3) array.

    The start point and all argmax ties are resolved by lexicographic
    coordinate order, so the selected POINTS depend only on the point set,
    not on its row order.
    """
    n = len(points)
    k = min(k, n)
    order = np.lexsort((points[:, 2], points[:, 1], points[:, 0]))
    centroid = points.mean(axis=0)
    d0 = np.linalg.norm(points - centroid, axis=1)
    chosen = [_argmax_lex(d0, points, order)]
    dists = np.linalg.norm(points - points[chosen[0]], axis=1)
    for _ in range(k - 1):
        idx = _argmax_lex(dists, points, order)
        chosen.append(idx)
        dists = np.minimum(dists, np.linalg.norm(points - points[idx], axis=1))
    return np.asarray(chosen)


def _argmax_lex(values: np.ndarray, points: np.ndarray, order: np.ndarray) -> int:
    best = values.max()
    cands = np.flatnonzero(values >= best - 1e-12)
    if len(cands) == 1:
        return int(cands[0])
    ranks = {int(i): r for r, i in enumerate(order)}
    return int(min(cands, key=lambda i: ranks[int(i)]))


class MLP(nn.Module):
    def __init__(self, dims: list[int], final_relu: bool = False):
        super().__init__()
        layers: list[nn.Module] = []
        for a, b in zip(dims[:-1], dims[1:]):
            layers += [nn.Linear(a, b), nn.ReLU()]
        if not final_relu:
            layers.pop()
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return self.net(x)


class MultiHeadSelfAttention(nn.Module):
    """Self-attention that records its last attention weights and supports a
    boolean allow-mask; disallowed logits are -inf so their normalized
    attention is exactly zero."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads:
            raise ValueError("dim must be divisible by heads")
        self.dim, self.heads = dim, heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.out = nn.Linear(dim, dim)
        self.last_attn: torch.Tensor | None = None

    def forward(self, x: torch.Tensor, allow: torch.Tensor | None = None) -> torch.Tensor:
        s, d = x.shape
        h = self.heads
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        q = q.view(s, h, d // h).transpose(0, 1)
        k = k.view(s, h, d // h).transpose(0, 1)
        v = v.view(s, h, d // h).transpose(0, 1)
        logits = q @ k.transpose(-2, -1) / (d // h) ** 0.5
        if allow is not None:
            logits = logits.masked_fill(~allow.unsqueeze(0), float("-inf"))
        attn = F.softmax(logits, dim=-1)
        self.last_attn = attn.detach()
        y = (attn @ v).transpose(0, 1).reshape(s, d)
        return self.out(y)


class TransformerBlock(nn.Module):
    def __init__(self, dim: int, heads: int, ff_mult: int = 2):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = MultiHeadSelfAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.ff = nn.Sequential(nn.Linear(dim, ff_mult * dim), nn.ReLU(),
                                nn.Linear(ff_mult * dim, dim))

    def forward(self, x: torch.Tensor, allow: torch.Tensor | None = None) -> torch.Tensor:
        x = x + self.attn(self.norm1(x), allow)
        return x + self.ff(self.norm2(x))
