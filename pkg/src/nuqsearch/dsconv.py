"""Depthwise blockwise quantization of weights and activations.

Weights are split into blocks of ``block_size`` consecutive input channels.
Each block becomes a signed integer kernel (VQK) plus one real scale (KDS)
chosen to minimise the blockwise L2 reconstruction error. Activations use a
block floating point layout: one shared exponent per block and a short signed
mantissa per element.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DEFAULT_BLOCK_SIZE = 32
# Exponent stored for an all-zero BFP block.
BFP_ZERO_EXPONENT = -126
# Returned by reconstruction_snr when the original tensor carries no energy.
NO_SIGNAL = float("nan")
# residual energy below this fraction of the signal is float rounding, reported as exact
EXACT_REL_ENERGY = (16 * np.finfo(np.float64).eps) ** 2


def _check_bits(bits: int) -> int:
    if isinstance(bits, bool) or int(bits) != bits or not 1 <= int(bits) <= 8:
        raise ValueError(f"bit width must be an integer in [1, 8], got {bits!r}")
    return int(bits)


def _check_block(block_size: int) -> int:
    if int(block_size) != block_size or int(block_size) < 1:
        raise ValueError(f"block size must be a positive integer, got {block_size!r}")
    return int(block_size)


def _depth_axis(ndim: int, axis: int | None) -> int:
    if axis is None:
        return 1 if ndim >= 2 else 0
    return axis % ndim


def _to_blocks(data: np.ndarray, block_size: int, axis: int) -> tuple[np.ndarray, int]:
    """View ``data`` as ``(..., n_blocks, block_size)`` with depth moved last.

    The last block is zero padded; zeros change neither the block maximum nor
    either sum in the scale formula.
    """
    moved = np.moveaxis(data, axis, -1)
    depth = moved.shape[-1]
    n_blocks = -(-depth // block_size)
    pad = n_blocks * block_size - depth
    if pad:
        moved = np.concatenate([moved, np.zeros(moved.shape[:-1] + (pad,), dtype=moved.dtype)], axis=-1)
    return moved.reshape(moved.shape[:-1] + (n_blocks, block_size)), depth


def _from_blocks(blocks: np.ndarray, depth: int, axis: int) -> np.ndarray:
    flat = blocks.reshape(blocks.shape[:-2] + (-1,))[..., :depth]
    return np.moveaxis(flat, -1, axis)


@dataclass(frozen=True)
class QuantizedLayer:
    """Integer kernel plus per-block scales for one weight tensor.

    ``kds`` has the source shape with the depth axis replaced by the number
    of blocks (``ceil(depth / block_size)``).
    """

    bits: int
    block_size: int
    vqk: np.ndarray
    kds: np.ndarray
    source_shape: tuple[int, ...]
    axis: int

    @property
    def n_blocks(self) -> int:
        return self.kds.shape[self.axis]


def quantize_weights(weights, bits: int, block_size: int = DEFAULT_BLOCK_SIZE, axis: int | None = None) -> QuantizedLayer:
    """Quantize ``weights`` blockwise along the depth axis.

    Per block, with ``s = 2**(bits-1) / max|w|``::

        vqk = clip(floor(w * s), -2**(bits-1), 2**(bits-1) - 1)
        kds = sum(w * vqk) / sum(vqk**2)

    A block whose ``vqk`` is all zero gets a scale of 0.
    """
    bits = _check_bits(bits)
    block_size = _check_block(block_size)
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim == 0 or w.size == 0:
        raise ValueError("weights must be a non-empty tensor")
    axis = _depth_axis(w.ndim, axis)
    blocks, depth = _to_blocks(w, block_size, axis)

    lo, hi = -(2 ** (bits - 1)), 2 ** (bits - 1) - 1
    peak = np.max(np.abs(blocks), axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(peak > 0, 2.0 ** (bits - 1) / peak, 0.0)
    q = np.clip(np.floor(blocks * scale), lo, hi)

    num = np.sum(blocks * q, axis=-1)
    den = np.sum(q * q, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        xi = np.where(den > 0, num / den, 0.0)

    vqk = _from_blocks(q.astype(np.int8), depth, axis)
    kds = np.moveaxis(xi, -1, axis)
    return QuantizedLayer(bits, block_size, vqk, kds, tuple(w.shape), axis)


def dequantize(layer: QuantizedLayer) -> np.ndarray:
    scale = np.repeat(layer.kds, layer.block_size, axis=layer.axis)
    depth = layer.source_shape[layer.axis]
    scale = np.take(scale, np.arange(depth), axis=layer.axis)
    return layer.vqk.astype(np.float64) * scale


def block_residual_dot(weights, layer: QuantizedLayer) -> np.ndarray:
    """Per-block ``sum((w - w_hat) * vqk)``; zero up to rounding by construction of the scale."""
    w = np.asarray(weights, dtype=np.float64)
    resid = w - dequantize(layer)
    rb, _ = _to_blocks(resid, layer.block_size, layer.axis)
    qb, _ = _to_blocks(layer.vqk.astype(np.float64), layer.block_size, layer.axis)
    return np.sum(rb * qb, axis=-1)


def reconstruction_snr(original, layer: QuantizedLayer) -> float:
    """Signal-to-quantization-noise ratio in dB.

    Returns ``inf`` for a reconstruction exact up to float rounding and :data:`NO_SIGNAL` (NaN)
    when the original tensor is identically zero.
    """
    w = np.asarray(original, dtype=np.float64)
    if w.shape != tuple(layer.source_shape):
        raise ValueError(f"shape mismatch: {w.shape} vs {layer.source_shape}")
    signal = float(np.sum(w * w))
    if signal == 0.0:
        return NO_SIGNAL
    noise = float(np.sum((w - dequantize(layer)) ** 2))
    if noise <= EXACT_REL_ENERGY * signal:
        return math.inf
    return 10.0 * math.log10(signal / noise)


def block_snr(original, layer: QuantizedLayer) -> np.ndarray:
    """Per-block SNR in dB, flattened; same conventions as :func:`reconstruction_snr`."""
    w = np.asarray(original, dtype=np.float64)
    wb, _ = _to_blocks(w, layer.block_size, layer.axis)
    rb, _ = _to_blocks(w - dequantize(layer), layer.block_size, layer.axis)
    sig = np.sum(wb * wb, axis=-1).ravel()
    err = np.sum(rb * rb, axis=-1).ravel()
    out = np.full(sig.shape, NO_SIGNAL)
    exact = (sig > 0) & (err <= EXACT_REL_ENERGY * sig)
    out[exact] = math.inf
    ok = (sig > 0) & ~exact
    out[ok] = 10.0 * np.log10(sig[ok] / err[ok])
    return out


@dataclass(frozen=True)
class BfpTensor:
    """Block floating point tensor.

    Element value is ``mantissa * 2**(exponent - (bits - 1))`` where the
    exponent is shared by all elements of a block.
    """

    bits: int
    block_size: int
    shared_exponents: np.ndarray
    mantissas: np.ndarray
    source_shape: tuple[int, ...]
    axis: int


def quantize_activation_bfp(values, bits: int, block_size: int = DEFAULT_BLOCK_SIZE, axis: int | None = None) -> BfpTensor:
    """Quantize to block floating point.

    The shared exponent ``e`` satisfies ``max|x| < 2**e`` (``frexp`` of the
    block maximum), and mantissas are rounded to nearest (ties to even) on
    the grid ``2**(e - bits + 1)``, then clipped to ``bits``-bit two's
    complement.
    """
    bits = _check_bits(bits)
    block_size = _check_block(block_size)
    x = np.asarray(values, dtype=np.float64)
    if x.ndim == 0 or x.size == 0:
        raise ValueError("activations must be a non-empty tensor")
    axis = _depth_axis(x.ndim, axis)
    blocks, depth = _to_blocks(x, block_size, axis)

    peak = np.max(np.abs(blocks), axis=-1)
    _, exp = np.frexp(peak)
    exp = np.where(peak > 0, exp, BFP_ZERO_EXPONENT).astype(np.int32)
    step = np.ldexp(1.0, exp - (bits - 1))[..., None]
    lo, hi = -(2 ** (bits - 1)), 2 ** (bits - 1) - 1
    mant = np.clip(np.rint(blocks / step), lo, hi).astype(np.int16)

    return BfpTensor(
        bits=bits,
        block_size=block_size,
        shared_exponents=np.moveaxis(exp, -1, axis),
        mantissas=_from_blocks(mant, depth, axis),
        source_shape=tuple(x.shape),
        axis=axis,
    )


def dequantize_bfp(t: BfpTensor) -> np.ndarray:
    step = np.ldexp(1.0, t.shared_exponents - (t.bits - 1))
    step = np.repeat(step, t.block_size, axis=t.axis)
    step = np.take(step, np.arange(t.source_shape[t.axis]), axis=t.axis)
    return t.mantissas.astype(np.float64) * step
