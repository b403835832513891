"""Deterministic float64 kernels.

The reverse sweep over the decoder lives in :mod:`crglab.engine.sweep`; it is
not re-exported here to keep the import graph acyclic.
"""
from .kernels import (
    RMS_EPS,
    as_tensor,
    causal_mask,
    check_finite,
    frobenius,
    frobenius_norm,
    logsumexp,
    masked_softmax,
    matmul,
    relu,
    rms,
    rmsnorm,
    rmsnorm_backward,
    softmax_backward,
)

__all__ = [
    "RMS_EPS",
    "as_tensor",
    "causal_mask",
    "check_finite",
    "frobenius",
    "frobenius_norm",
    "logsumexp",
    "masked_softmax",
    "matmul",
    "relu",
    "rms",
    "rmsnorm",
    "rmsnorm_backward",
    "softmax_backward",
]
