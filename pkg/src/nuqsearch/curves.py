"""Parameterised curves that map a few weights to a per-layer bit configuration.

Two bases are supported:

* Bezier curves over ``x in [0, 1]``, ``B(x; w) = w^T phi(x)`` with the
  Bernstein feature vector ``phi``.
* A shifted Chebyshev series over ``x in [-1, 1]``,
  ``T(x; w) = ((w - 0.5)^T phi_d(x) + 1) / 2``.

The curve value is turned into a bit width in ``1..8`` by :func:`constrain`.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import comb

MIN_BITS = 1
MAX_BITS = 8


class DomainError(ValueError):
    """Raised when a curve is evaluated outside its domain."""


class Basis(str, enum.Enum):
    BEZIER = "bezier"
    CHEBYSHEV = "chebyshev"


class LayerGrid(str, enum.Enum):
    # t_i = (i - 1) / (n - 1): both curve endpoints land on a layer.
    ENDPOINTS = "endpoints"
    # t_i = i / n, the literal layer grid; t = 0 is never evaluated.
    FRACTIONAL = "fractional"


@dataclass(frozen=True)
class CurveParams:
    """A point in the constrained search space.

    For ``BEZIER`` the weights are the ``degree + 1`` control values; for
    ``CHEBYSHEV`` they multiply ``T_0 .. T_{d-1}``.
    """

    basis: Basis
    weights: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "basis", Basis(self.basis))
        w = tuple(float(v) for v in np.atleast_1d(np.asarray(self.weights, dtype=float)))
        if len(w) < 1:
            raise DomainError("curve needs at least one weight")
        for v in w:
            if not (0.0 <= v <= 1.0):
                raise DomainError(f"curve weight {v!r} outside [0, 1]")
        object.__setattr__(self, "weights", w)

    @property
    def dim(self) -> int:
        return len(self.weights)

    @property
    def degree(self) -> int:
        if self.basis is Basis.BEZIER:
            return self.dim - 1
        return self.dim

    def as_array(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=float)


@dataclass(frozen=True)
class BitConfig:
    bits: tuple[int, ...]

    def __post_init__(self):
        b = tuple(int(v) for v in self.bits)
        if len(b) < 1:
            raise ValueError("bit configuration needs at least one layer")
        bad = [v for v in b if not MIN_BITS <= v <= MAX_BITS]
        if bad:
            raise ValueError(f"bit widths out of range [{MIN_BITS}, {MAX_BITS}]: {bad}")
        object.__setattr__(self, "bits", b)

    @property
    def layer_count(self) -> int:
        return len(self.bits)

    @property
    def total(self) -> int:
        return sum(self.bits)

    def __len__(self) -> int:
        return len(self.bits)

    def __iter__(self):
        return iter(self.bits)

    def __str__(self) -> str:
        return bits_to_string(self.bits)

    @classmethod
    def parse(cls, text: str) -> "BitConfig":
        return cls(parse_bits(text))


def parse_bits(text: str) -> tuple[int, ...]:
    """Parse ``"6555443332211"``, ``"6,5,5,4"`` or ``"4x21,3x27,2x16"``."""
    text = text.strip()
    if not text:
        raise ValueError("empty bits string")
    if "," not in text and "x" not in text and text.isdigit():
        return tuple(int(c) for c in text)
    out: list[int] = []
    for part in text.replace(" ", "").split(","):
        if not part:
            continue
        if "x" in part:
            value, count = part.split("x", 1)
            out.extend([int(value)] * int(count))
        else:
            out.append(int(part))
    return tuple(out)


def bits_to_string(bits: Sequence[int]) -> str:
    return "".join(str(b) for b in bits) if all(b < 10 for b in bits) else ",".join(map(str, bits))


def bernstein_features(x, degree: int) -> np.ndarray:
    """Bernstein basis of the given degree; shape ``(..., degree + 1)``."""
    x = np.asarray(x, dtype=float)
    k = np.arange(degree + 1)
    xe = x[..., None]
    return comb(degree, k) * xe**k * (1.0 - xe) ** (degree - k)


def chebyshev_features(x, order: int) -> np.ndarray:
    """``[T_0(x), ..., T_{order-1}(x)]`` via the three-term recurrence."""
    x = np.asarray(x, dtype=float)
    feats = np.empty(x.shape + (order,))
    feats[..., 0] = 1.0
    if order > 1:
        feats[..., 1] = x
    for n in range(2, order):
        feats[..., n] = 2.0 * x * feats[..., n - 1] - feats[..., n - 2]
    return feats


def _check_domain(x, lo: float, hi: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)) or np.any(x < lo) or np.any(x > hi):
        raise DomainError(f"curve argument outside [{lo}, {hi}]")
    return x


def eval_bezier(params: CurveParams, x):
    if params.basis is not Basis.BEZIER:
        raise DomainError("eval_bezier needs a BEZIER curve")
    x = _check_domain(x, 0.0, 1.0)
    val = bernstein_features(x, params.degree) @ params.as_array()
    return float(val) if val.ndim == 0 else val


def eval_chebyshev(params: CurveParams, x):
    if params.basis is not Basis.CHEBYSHEV:
        raise DomainError("eval_chebyshev needs a CHEBYSHEV curve")
    x = _check_domain(x, -1.0, 1.0)
    series = chebyshev_features(x, params.dim) @ (params.as_array() - 0.5)
    val = (series + 1.0) / 2.0
    return float(val) if val.ndim == 0 else val


def constrain(p_value: float) -> int:
    """Clamp-and-round a curve value to a bit width: ``round(clamp(8p + 1, 1, 8))``.

    Ties round away from zero, so ``p = 0.4375`` (8p + 1 = 4.5) gives 5.
    """
    p = float(p_value)
    if not math.isfinite(p):
        raise DomainError(f"curve value {p_value!r} is not finite")
    v = min(max(8.0 * p + 1.0, float(MIN_BITS)), float(MAX_BITS))
    return int(math.floor(v + 0.5))


def layer_positions(n: int, grid: LayerGrid | str = LayerGrid.ENDPOINTS) -> np.ndarray:
    """Unit-interval position of each of ``n`` layers."""
    if n < 1:
        raise ValueError("layer count must be >= 1")
    grid = LayerGrid(grid)
    if grid is LayerGrid.FRACTIONAL:
        return np.arange(1, n + 1) / n
    if n == 1:
        return np.zeros(1)
    return np.arange(n) / (n - 1)


def curve_values(params: CurveParams, n: int, grid: LayerGrid | str = LayerGrid.ENDPOINTS) -> np.ndarray:
    t = layer_positions(n, grid)
    if params.basis is Basis.BEZIER:
        return np.atleast_1d(eval_bezier(params, t))
    return np.atleast_1d(eval_chebyshev(params, np.clip(2.0 * t - 1.0, -1.0, 1.0)))


def bits_for_layers(params: CurveParams, n: int, grid: LayerGrid | str = LayerGrid.ENDPOINTS) -> BitConfig:
    return BitConfig(tuple(constrain(p) for p in curve_values(params, n, grid)))
