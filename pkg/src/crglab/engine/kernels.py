"""Dense float64 kernels with a fixed reduction order.

Every kernel is a pure function of its inputs.  Reductions never depend on
thread count or BLAS blocking, so two runs on the same inputs agree bit for bit.
"""
from __future__ import annotations

import math

import numpy as np

from ..errors import InputError, NumericalError, ShapeError

RMS_EPS = 1e-6


def as_tensor(a) -> np.ndarray:
    """Coerce to a C-contiguous 2-D float64 array."""
    t = np.ascontiguousarray(a, dtype=np.float64)
    if t.ndim == 1:
        t = t.reshape(1, -1)
    if t.ndim != 2:
        raise ShapeError(f"expected a 2-D tensor, got shape {t.shape}")
    return t


def check_finite(t: np.ndarray, where: str) -> np.ndarray:
    if not np.isfinite(t).all():
        raise NumericalError(f"non-finite value produced by {where}")
    return t


def matmul(a, b) -> np.ndarray:
    """Dense product accumulated over the inner index in ascending order.

    Entry (i, j) is built as ``((a[i,0]*b[0,j]) + a[i,1]*b[1,j]) + ...`` which is
    exactly the rounding sequence of the textbook triple loop.
    """
    a = as_tensor(a)
    b = as_tensor(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} x {b.shape}")
    rows, inner = a.shape
    cols = b.shape[1]
    out = np.zeros((rows, cols))
    tmp = np.empty((rows, cols))
    for k in range(inner):
        np.multiply(a[:, k : k + 1], b[k : k + 1, :], out=tmp)
        out += tmp
    return check_finite(out, "matmul")


def causal_mask(rows: int, cols: int) -> np.ndarray:
    """Boolean mask of *allowed* positions; query rows are right-aligned to keys."""
    offset = cols - rows
    i = np.arange(rows)[:, None]
    j = np.arange(cols)[None, :]
    return j <= i + offset


def masked_softmax(logits, causal: bool = True, allowed: np.ndarray | None = None) -> np.ndarray:
    """Row softmax with -inf masking and row-max subtraction.

    ``causal`` masks keys above the (right-aligned) diagonal.  ``allowed`` is an
    optional extra boolean mask combined with the causal one.  Masked entries of
    the result are exactly 0.
    """
    z = np.array(logits, dtype=np.float64, ndmin=2)
    if z.ndim != 2:
        raise ShapeError(f"masked_softmax expects a 2-D tensor, got {z.shape}")
    if np.isnan(z).any() or (z == np.inf).any():
        raise NumericalError("masked_softmax: NaN or +inf logit")
    mask = z != -np.inf
    if causal:
        mask &= causal_mask(*z.shape)
    if allowed is not None:
        mask &= np.asarray(allowed, dtype=bool)
    if not mask.any(axis=1).all():
        bad = int(np.flatnonzero(~mask.any(axis=1))[0])
        raise InputError(f"masked_softmax: row {bad} has no valid key")
    z = np.where(mask, z, -np.inf)
    z = z - z.max(axis=1, keepdims=True)
    e = np.where(mask, np.exp(z), 0.0)
    out = e / e.sum(axis=1, keepdims=True)
    return check_finite(out, "masked_softmax")


def softmax_backward(alpha: np.ndarray, d_alpha: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. pre-softmax logits; masked entries stay 0."""
    inner = (d_alpha * alpha).sum(axis=1, keepdims=True)
    return alpha * (d_alpha - inner)


def rms(x: np.ndarray, eps: float = RMS_EPS) -> np.ndarray:
    """Per-row root mean square, shape (rows, 1)."""
    return np.sqrt((x * x).mean(axis=1, keepdims=True) + eps)


def rmsnorm(x, gain, eps: float = RMS_EPS) -> np.ndarray:
    x = as_tensor(x)
    return check_finite(x / rms(x, eps) * np.asarray(gain).reshape(1, -1), "rmsnorm")


def rmsnorm_backward(x: np.ndarray, gain: np.ndarray, d_out: np.ndarray, eps: float = RMS_EPS):
    """Return (d_x, d_gain) for ``y = gain * x / rms(x)``."""
    r = rms(x, eps)
    xhat = x / r
    d_gain = (d_out * xhat).sum(axis=0)
    d_xhat = d_out * gain.reshape(1, -1)
    dim = x.shape[1]
    proj = (d_xhat * xhat).sum(axis=1, keepdims=True)
    d_x = (d_xhat - xhat * proj / dim) / r
    return d_x, d_gain


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def logsumexp(z: np.ndarray) -> float:
    z = np.asarray(z, dtype=np.float64).ravel()
    top = z.max()
    return float(top + math.log(math.fsum(np.exp(z - top))))


def frobenius(a, b) -> float:
    """Correctly rounded Frobenius inner product <a, b>."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"frobenius: {a.shape} vs {b.shape}")
    return math.fsum((a * b).ravel())


def frobenius_norm(a) -> float:
    return math.sqrt(frobenius(a, a))
