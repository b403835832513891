"""Gated, route-decomposed causal decoder.

Architecture (fixed): token embedding, then per layer
``RMSNorm -> gated MHA -> residual -> RMSNorm -> ReLU MLP -> residual``,
then a final RMSNorm and an untied LM head.  No positional embedding.

Each head forms one joint causal softmax ``alpha`` and splits its output into
``alpha @ (S_vis V)`` and ``alpha @ (S_txt V)``; the gates scale those two
cached pieces before the output projection.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..engine import kernels as K
from ..errors import ConfigError, InputError
from .config import GateTable, ModalityLayout, ModelConfig


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Ordered parameter manifest; iteration order is the serialization order."""
    D, H, dh, F, V = cfg.model_dim, cfg.heads, cfg.head_dim, cfg.mlp_dim, cfg.vocab
    shapes: dict[str, tuple[int, ...]] = {"embed": (V, D)}
    for l in range(cfg.layers):
        p = f"layers.{l}."
        shapes[p + "norm1"] = (D,)
        shapes[p + "wq"] = (H, D, dh)
        shapes[p + "wk"] = (H, D, dh)
        shapes[p + "wv"] = (H, D, dh)
        shapes[p + "wo"] = (H * dh, D)
        shapes[p + "norm2"] = (D,)
        shapes[p + "w1"] = (D, F)
        shapes[p + "w2"] = (F, D)
    shapes["norm_f"] = (D,)
    shapes["unembed"] = (D, V)
    return shapes


def is_gain(name: str) -> bool:
    return name.endswith(("norm1", "norm2", "norm_f"))


@dataclass
class DecoderModel:
    config: ModelConfig
    params: dict[str, np.ndarray]

    def __post_init__(self):
        shapes = param_shapes(self.config)
        if set(shapes) != set(self.params):
            missing = set(shapes) ^ set(self.params)
            raise ConfigError(f"parameter set mismatch: {sorted(missing)}")
        clean = {}
        for name, shape in shapes.items():
            arr = np.array(self.params[name], dtype=np.float64)
            if arr.shape != shape:
                raise ConfigError(f"{name}: expected shape {shape}, got {arr.shape}")
            if not np.isfinite(arr).all():
                raise ConfigError(f"{name}: non-finite weights")
            arr.setflags(write=False)
            clean[name] = arr
        self.params = clean

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def replace(self, **updates: np.ndarray) -> "DecoderModel":
        params = dict(self.params)
        params.update(updates)
        return DecoderModel(self.config, params)

    def ones_gates(self) -> GateTable:
        return GateTable.ones(self.config.layers, self.config.heads)


def init_random(config: ModelConfig) -> DecoderModel:
    """Uniform(-s, s) weights with s = sqrt(1/model_dim); RMSNorm gains start at 1."""
    rng = np.random.default_rng(config.seed)
    s = math.sqrt(1.0 / config.model_dim)
    params = {}
    for name, shape in param_shapes(config).items():
        if is_gain(name):
            params[name] = np.ones(shape)
        else:
            params[name] = rng.uniform(-s, s, size=shape)
    return DecoderModel(config, params)


@dataclass
class HeadRoutes:
    alpha: np.ndarray
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    o_vis: np.ndarray
    o_txt: np.ndarray
    o_gated: np.ndarray
    g_vis: float
    g_txt: float


@dataclass
class LayerTrace:
    x_in: np.ndarray
    xn1: np.ndarray
    heads: list[HeadRoutes]
    concat: np.ndarray
    y_attn: np.ndarray
    x_mid: np.ndarray
    xn2: np.ndarray
    h_pre: np.ndarray
    h_post: np.ndarray
    x_out: np.ndarray


@dataclass
class RouteCache:
    """Everything a forward pass leaves behind for estimators and the reverse sweep."""

    tokens: tuple[int, ...]
    layout: ModalityLayout
    gates: GateTable
    layers: list[LayerTrace]
    x_final: np.ndarray
    xn_final: np.ndarray
    logits: np.ndarray
    heads: dict[tuple[int, int], HeadRoutes] = field(default_factory=dict)

    def __post_init__(self):
        if not self.heads:
            self.heads = {
                (l, h): hr for l, lt in enumerate(self.layers) for h, hr in enumerate(lt.heads)
            }


def _check_inputs(cfg: ModelConfig, tokens: Sequence[int], layout: ModalityLayout) -> tuple[int, ...]:
    toks = tuple(int(t) for t in tokens)
    if not toks:
        raise InputError("empty token sequence")
    for t in toks:
        if not 0 <= t < cfg.vocab:
            raise InputError(f"token {t} outside vocab of size {cfg.vocab}")
    if layout.total_len != len(toks):
        raise InputError(f"layout covers {layout.total_len} positions, sequence has {len(toks)}")
    return toks


def attention_head(xn: np.ndarray, wq, wk, wv, layout: ModalityLayout, g_vis: float, g_txt: float) -> HeadRoutes:
    q = K.matmul(xn, wq)
    k = K.matmul(xn, wk)
    v = K.matmul(xn, wv)
    scores = K.matmul(q, k.T) / math.sqrt(wq.shape[1])
    alpha = K.masked_softmax(scores, causal=True)
    # One joint softmax; the route split only masks rows of V.
    v_vis = np.where(layout.vis_mask[:, None], v, 0.0)
    v_txt = np.where(layout.txt_mask[:, None], v, 0.0)
    o_vis = K.matmul(alpha, v_vis)
    o_txt = K.matmul(alpha, v_txt)
    o_gated = g_vis * o_vis + g_txt * o_txt
    return HeadRoutes(alpha, q, k, v, o_vis, o_txt, o_gated, float(g_vis), float(g_txt))


def forward(
    model: DecoderModel,
    tokens: Sequence[int],
    layout: ModalityLayout,
    gates: GateTable | None = None,
) -> tuple[np.ndarray, RouteCache]:
    """Next-token logits at the final position plus the full route cache."""
    cfg = model.config
    toks = _check_inputs(cfg, tokens, layout)
    if gates is None:
        gates = model.ones_gates()
    if gates.shape != (cfg.layers, cfg.heads):
        raise InputError(f"gate table shape {gates.shape} != {(cfg.layers, cfg.heads)}")
    P = model.params
    x = P["embed"][list(toks)].copy()
    traces = []
    for l in range(cfg.layers):
        p = f"layers.{l}."
        xn1 = K.rmsnorm(x, P[p + "norm1"])
        heads = [
            attention_head(
                xn1, P[p + "wq"][h], P[p + "wk"][h], P[p + "wv"][h], layout,
                gates.vis[l, h], gates.txt[l, h],
            )
            for h in range(cfg.heads)
        ]
        concat = np.concatenate([hr.o_gated for hr in heads], axis=1)
        y_attn = K.matmul(concat, P[p + "wo"])
        x_mid = x + y_attn
        xn2 = K.rmsnorm(x_mid, P[p + "norm2"])
        h_pre = K.matmul(xn2, P[p + "w1"])
        h_post = K.relu(h_pre)
        x_out = x_mid + K.matmul(h_post, P[p + "w2"])
        traces.append(LayerTrace(x, xn1, heads, concat, y_attn, x_mid, xn2, h_pre, h_post, x_out))
        x = x_out
    last = x[-1:]
    xn_final = K.rmsnorm(last, P["norm_f"]) if cfg.final_norm else last.copy()
    logits = K.matmul(xn_final, P["unembed"])[0]
    cache = RouteCache(toks, layout, gates.copy(), traces, last, xn_final, logits)
    return logits, cache


def forward_ungated(model: DecoderModel, tokens: Sequence[int]) -> np.ndarray:
    """Reference forward with ``O = alpha V`` and no route split or gates."""
    cfg = model.config
    toks = _check_inputs(cfg, tokens, ModalityLayout(len(tokens)))
    P = model.params
    x = P["embed"][list(toks)].copy()
    for l in range(cfg.layers):
        p = f"layers.{l}."
        xn1 = K.rmsnorm(x, P[p + "norm1"])
        outs = []
        for h in range(cfg.heads):
            q = K.matmul(xn1, P[p + "wq"][h])
            k = K.matmul(xn1, P[p + "wk"][h])
            v = K.matmul(xn1, P[p + "wv"][h])
            alpha = K.masked_softmax(K.matmul(q, k.T) / math.sqrt(cfg.head_dim))
            outs.append(K.matmul(alpha, v))
        x = x + K.matmul(np.concatenate(outs, axis=1), P[p + "wo"])
        xn2 = K.rmsnorm(x, P[p + "norm2"])
        x = x + K.matmul(K.relu(K.matmul(xn2, P[p + "w1"])), P[p + "w2"])
    last = x[-1:]
    xn = K.rmsnorm(last, P["norm_f"]) if cfg.final_norm else last
    return K.matmul(xn, P["unembed"])[0]


def mha_route_split(model: DecoderModel, cache: RouteCache, layer: int) -> tuple[np.ndarray, np.ndarray]:
    """(Y_vis, Y_txt): the gated visual and text routes pushed through W^O."""
    lt = cache.layers[layer]
    wo = model[f"layers.{layer}.wo"]
    y_vis = K.matmul(np.concatenate([hr.g_vis * hr.o_vis for hr in lt.heads], axis=1), wo)
    y_txt = K.matmul(np.concatenate([hr.g_txt * hr.o_txt for hr in lt.heads], axis=1), wo)
    return y_vis, y_txt
