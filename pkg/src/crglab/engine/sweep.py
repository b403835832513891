"""Hand-derived reverse sweep over the fixed decoder graph.

One pass yields ``G_{l,h} = d loss / d O~_{l,h}`` for every head (the gradient at
the pre-W^O tensor), the derivative with respect to every gate scalar, and
optionally the gradient of every parameter.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels as K
from ..errors import StateError
from ..model.decoder import DecoderModel, RouteCache
from ..model.objective import ObjectiveKind, objective, objective_grad


@dataclass
class SensitivityBundle:
    value: float
    head_grads: dict[tuple[int, int], np.ndarray]
    gate_grads: dict[tuple[int, int], tuple[float, float]]
    param_grads: dict[str, np.ndarray] | None = None


def backward_sweep(
    model: DecoderModel,
    cache: RouteCache | None,
    kind: ObjectiveKind,
    with_params: bool = False,
) -> SensitivityBundle:
    if cache is None or not cache.layers:
        raise StateError("backward_sweep needs the trace of a completed forward pass")
    cfg = model.config
    P = model.params
    dh = cfg.head_dim
    scale = 1.0 / math.sqrt(dh)
    grads: dict[str, np.ndarray] = {}

    d_logits = objective_grad(cache.logits, kind).reshape(1, -1)
    d_xnf = K.matmul(d_logits, P["unembed"].T)
    if with_params:
        grads["unembed"] = K.matmul(cache.xn_final.T, d_logits)
    if cfg.final_norm:
        d_last, d_gain = K.rmsnorm_backward(cache.x_final, P["norm_f"], d_xnf)
        if with_params:
            grads["norm_f"] = d_gain
    else:
        d_last = d_xnf
        if with_params:
            grads["norm_f"] = np.zeros(cfg.model_dim)

    dx = np.zeros_like(cache.layers[-1].x_out)
    dx[-1] = d_last[0]
    head_grads: dict[tuple[int, int], np.ndarray] = {}
    gate_grads: dict[tuple[int, int], tuple[float, float]] = {}
    layout = cache.layout
    vis_rows = layout.vis_mask[:, None]
    txt_rows = layout.txt_mask[:, None]

    for l in reversed(range(cfg.layers)):
        p = f"layers.{l}."
        lt = cache.layers[l]
        # MLP block: x_out = x_mid + relu(xn2 W1) W2
        d_hpost = K.matmul(dx, P[p + "w2"].T)
        d_hpre = d_hpost * (lt.h_pre > 0)
        d_xn2 = K.matmul(d_hpre, P[p + "w1"].T)
        d_mid_norm, d_norm2 = K.rmsnorm_backward(lt.x_mid, P[p + "norm2"], d_xn2)
        d_xmid = dx + d_mid_norm
        if with_params:
            grads[p + "w2"] = K.matmul(lt.h_post.T, dx)
            grads[p + "w1"] = K.matmul(lt.xn2.T, d_hpre)
            grads[p + "norm2"] = d_norm2
        # attention block: x_mid = x_in + concat(O~) W^O
        d_concat = K.matmul(d_xmid, P[p + "wo"].T)
        if with_params:
            grads[p + "wo"] = K.matmul(lt.concat.T, d_xmid)
        need_input_grad = with_params or l > 0
        d_xn1 = np.zeros_like(lt.xn1)
        dwq = np.zeros_like(P[p + "wq"]) if with_params else None
        dwk = np.zeros_like(P[p + "wk"]) if with_params else None
        dwv = np.zeros_like(P[p + "wv"]) if with_params else None
        for h, hr in enumerate(lt.heads):
            G = d_concat[:, h * dh : (h + 1) * dh].copy()
            head_grads[(l, h)] = G
            gate_grads[(l, h)] = (K.frobenius(G, hr.o_vis), K.frobenius(G, hr.o_txt))
            if not need_input_grad:
                continue
            d_ovis = hr.g_vis * G
            d_otxt = hr.g_txt * G
            v_vis = np.where(vis_rows, hr.v, 0.0)
            v_txt = np.where(txt_rows, hr.v, 0.0)
            d_alpha = K.matmul(d_ovis, v_vis.T) + K.matmul(d_otxt, v_txt.T)
            d_v = np.where(vis_rows, K.matmul(hr.alpha.T, d_ovis), 0.0) + np.where(
                txt_rows, K.matmul(hr.alpha.T, d_otxt), 0.0
            )
            d_scores = K.softmax_backward(hr.alpha, d_alpha) * scale
            d_q = K.matmul(d_scores, hr.k)
            d_k = K.matmul(d_scores.T, hr.q)
            d_xn1 += (
                K.matmul(d_q, P[p + "wq"][h].T)
                + K.matmul(d_k, P[p + "wk"][h].T)
                + K.matmul(d_v, P[p + "wv"][h].T)
            )
            if with_params:
                dwq[h] = K.matmul(lt.xn1.T, d_q)
                dwk[h] = K.matmul(lt.xn1.T, d_k)
                dwv[h] = K.matmul(lt.xn1.T, d_v)
        if not need_input_grad:
            break
        d_in_norm, d_norm1 = K.rmsnorm_backward(lt.x_in, P[p + "norm1"], d_xn1)
        dx = d_xmid + d_in_norm
        if with_params:
            grads[p + "wq"], grads[p + "wk"], grads[p + "wv"] = dwq, dwk, dwv
            grads[p + "norm1"] = d_norm1

    if with_params:
        d_embed = np.zeros_like(P["embed"])
        np.add.at(d_embed, list(cache.tokens), dx)
        grads["embed"] = d_embed

    return SensitivityBundle(
        value=objective(cache.logits, kind),
        head_grads=head_grads,
        gate_grads=gate_grads,
        param_grads=grads if with_params else None,
    )
