"""Ranking explored configurations by effective accuracy and memory."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .curves import Basis, BitConfig, CurveParams, LayerGrid, bits_for_layers
from .dsconv import DEFAULT_BLOCK_SIZE
from .networks import NetworkSpec, model_size_bytes

DEFAULT_PENALTY = 100.0
BASELINE_BITS = 4


def effective_accuracy(a: float, bits: Sequence[int], k: float = DEFAULT_PENALTY) -> float:
    """``a - (sum(bits) - 4 n) / k``: each bit above a uniform 4-bit budget costs ``1/k``.

    ``a`` is a fraction, so ``k = 100`` means one percentage point per bit.
    """
    if k <= 0:
        raise ValueError("penalty constant k must be positive")
    bits = list(bits)
    return a - (sum(bits) - BASELINE_BITS * len(bits)) / k


def naive_loss(a: float, bits: Sequence[int]) -> float:
    """Negative accuracy per bit."""
    total = sum(bits)
    if total <= 0:
        raise ValueError("bit sum must be positive")
    return -a / total


@dataclass(frozen=True)
class RankedConfig:
    weights: CurveParams
    bits: BitConfig
    predicted_accuracy: float
    predicted_std: float
    bit_sum: int
    memory_bytes: float
    effective_accuracy: float
    naive_loss: float

    @property
    def memory_mb(self) -> float:
        return self.memory_bytes / 1e6

    def record(self, rank: int) -> dict:
        return {
            "rank": rank,
            "weights": list(self.weights.weights),
            "bits": str(self.bits),
            "bit_sum": self.bit_sum,
            "memory_MB": self.memory_mb,
            "pred_acc": self.predicted_accuracy,
            "pred_std": self.predicted_std,
            "E": self.effective_accuracy,
        }


def build_ranked(weights: Sequence[Sequence[float]], means, stds, spec: NetworkSpec, basis: Basis | str,
                 k: float = DEFAULT_PENALTY, grid: LayerGrid | str = LayerGrid.ENDPOINTS,
                 block_size: int = DEFAULT_BLOCK_SIZE, beta: float = 0.0) -> list[RankedConfig]:
    """Score each weight vector given predicted accuracy mean/std, unsorted.

    With ``beta > 0`` the accuracy entering the effective accuracy is the
    pessimistic ``mean - beta * std``.
    """
    n = spec.n_conv
    out = []
    for w, mu, sd in zip(weights, np.asarray(means, dtype=float), np.asarray(stds, dtype=float)):
        params = CurveParams(basis, tuple(w))
        bits = bits_for_layers(params, n, grid)
        a = float(np.clip(mu, 0.0, 1.0))
        a_rank = a - beta * float(sd)
        out.append(RankedConfig(
            weights=params,
            bits=bits,
            predicted_accuracy=a,
            predicted_std=float(sd),
            bit_sum=bits.total,
            memory_bytes=model_size_bytes(spec, bits.bits, block_size),
            effective_accuracy=effective_accuracy(a_rank, bits.bits, k),
            naive_loss=naive_loss(a_rank, bits.bits),
        ))
    return out


def sort_ranked(configs: Sequence[RankedConfig]) -> list[RankedConfig]:
    """Ascending loss ``-E``; ties by lower memory, then lexicographic weights."""
    return sorted(configs, key=lambda c: (-c.effective_accuracy, c.memory_bytes, c.weights.weights))


def rank_configs(model, pool, spec: NetworkSpec, basis: Basis | str, k: float = DEFAULT_PENALTY,
                 top_k: int | None = None, grid: LayerGrid | str = LayerGrid.ENDPOINTS,
                 block_size: int = DEFAULT_BLOCK_SIZE, beta: float = 0.0) -> list[RankedConfig]:
    """Rank every pool point by the target-task posterior mean (optionally pessimistic)."""
    points = np.asarray(getattr(pool, "points", pool), dtype=float)
    if len(points) == 0:
        raise ValueError("candidate pool is empty")
    post = model.predict(points, model.m)
    ranked = sort_ranked(build_ranked(points, post.mean, post.std, spec, basis, k, grid, block_size, beta))
    return ranked if top_k is None else ranked[:top_k]


def pareto_front(points: Sequence[tuple[float, float]]) -> list[int]:
    """Indices of the non-dominated ``(memory, accuracy)`` points, in input order.

    A point is dominated when another has no more memory and no less
    accuracy, with at least one strict. Runs in ``O(n log n)``.
    """
    pts = [(float(mem), float(acc)) for mem, acc in points]
    if not pts:
        raise ValueError("need at least one point")
    order = sorted(range(len(pts)), key=lambda i: (pts[i][0], -pts[i][1]))
    keep = set()
    best_acc = -np.inf
    i = 0
    while i < len(order):
        # group equal memory; within a group only the top accuracy can survive
        j = i
        mem = pts[order[i]][0]
        while j < len(order) and pts[order[j]][0] == mem:
            j += 1
        group_best = pts[order[i]][1]
        if group_best > best_acc:
            for idx in order[i:j]:
                if pts[idx][1] == group_best:
                    keep.add(idx)
            best_acc = group_best
        i = j
    return sorted(keep)
