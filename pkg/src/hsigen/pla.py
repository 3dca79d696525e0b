"""Part-level action vocabulary: action to body-part correspondence, token
encodings, the action feature encoder, and attention-mask construction."""

from __future__ import annotations

import functools
from dataclasses import dataclass
from importlib import resources

import numpy as np
import torch
import torch.nn as nn
import yaml

from .nnutil import sorted_sum

PARTS = ("head", "torso", "left_arm", "right_arm",
         "left_hand", "right_hand", "left_lower", "right_lower")
PART_INDEX = {p: i for i, p in enumerate(PARTS)}

SIDED_GROUPS = {"arm": ("left_arm", "right_arm"),
                "hand": ("left_hand", "right_hand"),
                "lower": ("left_lower", "right_lower")}

ACTION_FEATURE_DIM = 64


class UnknownActionError(ValueError):
    """Raised when an action word is not in the vocabulary."""


@functools.lru_cache(maxsize=1)
def _load_groups() -> dict:
    with resources.files("hsigen.data").joinpath("actions.yaml").open("r") as fh:
        return yaml.safe_load(fh)["groups"]


@functools.lru_cache(maxsize=1)
def action_vocab() -> tuple[str, ...]:
    """Sorted unique action lemmas."""
    seen = set()
    for group in _load_groups().values():
        seen.update(group["actions"])
    return tuple(sorted(seen))


@functools.lru_cache(maxsize=1)
def _action_groups() -> dict[str, tuple[str, ...]]:
    table: dict[str, list[str]] = {}
    for name, group in _load_groups().items():
        for action in group["actions"]:
            table.setdefault(action, []).append(name)
    return {a: tuple(g) for a, g in table.items()}


def action_index(action: str) -> int:
    vocab = action_vocab()
    try:
        return vocab.index(action)
    except ValueError:
        raise UnknownActionError(f"action {action!r} not in vocabulary") from None


def part_of(action: str, side: str | None = None) -> frozenset[str]:
    """Body parts governed by an action word.

    Sided groups map to both left and right parts unless `side` narrows them.
    Actions listed in several groups resolve to the union of those groups.
    """
    groups = _action_groups().get(action)
    if groups is None:
        raise UnknownActionError(f"action {action!r} not in vocabulary")
    if side not in (None, "left", "right"):
        raise ValueError(f"side must be 'left', 'right' or None, got {side!r}")
    parts: set[str] = set()
    for g in groups:
        if g in SIDED_GROUPS:
            left, right = SIDED_GROUPS[g]
            if side == "left":
                parts.add(left)
            elif side == "right":
                parts.add(right)
            else:
                parts.update((left, right))
        else:
            parts.add(g if g in PARTS else {"head": "head", "torso": "torso"}[g])
    return frozenset(parts)


def _tool_only(action: str) -> bool:
    return all(g in ("arm", "hand") for g in _action_groups()[action])


def resolve_sides(action: str, side: str | None) -> frozenset[str]:
    """Side resolution for token emission: explicit hint wins, hand/arm tool
    actions default to the right side, everything else keeps both sides."""
    if side is None and _tool_only(action):
        side = "right"
    return part_of(action, side)


@dataclass(frozen=True)
class ActionToken:
    action: str
    part: str
    side: str | None
    allowed_parts: frozenset[str]

    def __post_init__(self):
        if self.part not in PART_INDEX:
            raise ValueError(f"unknown part {self.part!r}")

    @property
    def e_a(self) -> np.ndarray:
        v = np.zeros(len(action_vocab()))
        v[action_index(self.action)] = 1.0
        return v

    @property
    def e_bp(self) -> np.ndarray:
        v = np.zeros(len(PARTS))
        v[PART_INDEX[self.part]] = 1.0
        return v


def action_tokens(actions: list[tuple[str, str | None]]) -> list[ActionToken]:
    """Expand (action, side hint) pairs into one token per governed part."""
    tokens = []
    for action, side in actions:
        parts = resolve_sides(action, side)
        for part in sorted(parts, key=PART_INDEX.get):
            resolved = side
            if resolved is None and part.startswith(("left_", "right_")):
                resolved = part.split("_")[0]
            tokens.append(ActionToken(action=action, part=part, side=resolved,
                                      allowed_parts=parts))
    return tokens


def build_attention_mask(tokens: list[ActionToken]) -> np.ndarray:
    """Boolean (n_tokens, n_parts) mask: True entries may attend."""
    if not tokens:
        raise ValueError("attention mask needs at least one action token")
    mask = np.zeros((len(tokens), len(PARTS)), dtype=bool)
    for i, tok in enumerate(tokens):
        for part in tok.allowed_parts:
            mask[i, PART_INDEX[part]] = True
    return mask


class ActionEncoder(nn.Module):
    """Two-layer feed-forward encoder over concatenated (E^a, E^bp) one-hots,
    mean-pooled to the fixed action feature."""

    def __init__(self, out_dim: int = ACTION_FEATURE_DIM, hidden: int = 128):
        super().__init__()
        in_dim = len(action_vocab()) + len(PARTS)
        self.net = nn.Sequential(nn.Linear(in_dim, hidden), nn.ReLU(),
                                 nn.Linear(hidden, out_dim))
        self.out_dim = out_dim

    def forward(self, tokens: list[ActionToken]) -> torch.Tensor:
        if not tokens:
            raise ValueError("cannot encode an empty action list")
        dtype = self.net[0].weight.dtype
        onehots = torch.stack([
            torch.as_tensor(np.concatenate([t.e_a, t.e_bp]), dtype=dtype)
            for t in tokens])
        emb = self.net(onehots)
        return sorted_sum(emb) / len(tokens)


def encode_actions(tokens: list[ActionToken], weights: ActionEncoder) -> torch.Tensor:
    return weights(tokens)
