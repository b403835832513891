"""Hand-built single-layer decoders whose heads realize chosen route-sign regimes.

Residual coordinates used by the construction::

    0 image marker     1 visual evidence (+ present / - absent)
    2 cue marker       3 cue evidence (+ yes / - no)
    4 query            5 answer axis (read by the LM head)
    6 answer tokens    7 background patch   8.. fillers

A *vis-copy* head attends from the query to the image block and copies the
visual evidence onto the answer axis.  A *txt-prior* head splits its attention
between the image block and the text cue and copies both, with the cue weighted
more heavily; it is the head that turns a misleading cue into a wrong answer and
shows the Conflict-A/B sign patterns when cue and image disagree.  The MLP is
zero, and the large query embedding keeps the final RMSNorm close to linear, so
every effect keeps its designed sign.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import ConfigError
from ..vocab import DEFAULT_VOCAB, TokenVocab
from .config import ModelConfig
from .decoder import DecoderModel, param_shapes

IMG, VIS, CUE_MARK, CUE, QUERY, ANSWER, ANS_TOK, BG, FILL0 = range(9)


@dataclass(frozen=True)
class PlantedSpec:
    heads: int = 4
    head_dim: int = 4
    mlp_dim: int = 16
    vis_copy: tuple[int, ...] = (0,)
    txt_prior: tuple[int, ...] = (1,)
    vis_copy_gain: float = 1.0
    prior_vis_gain: float = 0.5
    prior_txt_gain: float = 2.0
    n_visual: int = 4
    sharpness: float = 10.0
    query_scale: float = 10.0
    vocab: TokenVocab = field(default_factory=TokenVocab)
    seed: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["vis_copy"] = list(self.vis_copy)
        d["txt_prior"] = list(self.txt_prior)
        d["vocab"] = self.vocab.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PlantedSpec":
        d = dict(d)
        for key in ("vis_copy", "txt_prior"):
            if key in d:
                d[key] = tuple(d[key])
        if "vocab" in d:
            d["vocab"] = TokenVocab.from_dict(d["vocab"])
        return cls(**d)


def init_planted(spec: PlantedSpec = PlantedSpec()) -> DecoderModel:
    H, dh = spec.heads, spec.head_dim
    D = H * dh
    vocab: TokenVocab = spec.vocab
    designated = list(spec.vis_copy) + list(spec.txt_prior)
    if len(designated) > H:
        raise ConfigError(f"{len(designated)} planted heads requested but the model has {H}")
    if len(set(designated)) != len(designated):
        raise ConfigError("a head cannot be both vis-copy and txt-prior")
    if any(not 0 <= h < H for h in designated):
        raise ConfigError(f"planted head index outside [0, {H})")
    if dh < 2:
        raise ConfigError("planted heads need head_dim >= 2")
    if D < FILL0 + len(vocab.fillers):
        raise ConfigError(f"model_dim {D} too small for the planted residual layout")
    if spec.n_visual < 1:
        raise ConfigError("planted model needs at least one visual token")

    cfg = ModelConfig(
        layers=1, heads=H, model_dim=D, head_dim=dh, mlp_dim=spec.mlp_dim,
        vocab=vocab.size, yes_token=vocab.yes, no_token=vocab.no, seed=spec.seed,
    )
    params = {name: np.zeros(shape) for name, shape in param_shapes(cfg).items()}
    for gain in ("layers.0.norm1", "layers.0.norm2", "norm_f"):
        params[gain] = np.ones(D)

    E = params["embed"]
    E[vocab.img_pos, [IMG, VIS]] = (1.0, 1.0)
    E[vocab.img_neg, [IMG, VIS]] = (1.0, -1.0)
    E[vocab.img_bg, [IMG, BG]] = (1.0, 1.0)
    E[vocab.cue_yes, [CUE_MARK, CUE]] = (1.0, 1.0)
    E[vocab.cue_no, [CUE_MARK, CUE]] = (1.0, -1.0)
    E[vocab.query, QUERY] = spec.query_scale
    E[vocab.yes, ANS_TOK] = 1.0
    E[vocab.no, ANS_TOK] = -1.0
    for i, tok in enumerate(vocab.fillers):
        E[tok, FILL0 + i] = 1.0

    # RMSNorm scales: two-hot tokens -> sqrt(D/2) per coordinate, one-hot -> sqrt(D).
    two_hot = math.sqrt(D / 2)
    one_hot = math.sqrt(D)
    key_scale = spec.sharpness * math.sqrt(dh) / (one_hot * two_hot)
    # Cue logit offset log(n_visual) gives the cue about the same mass as the image block.
    cue_boost = 1.0 + math.log(spec.n_visual) / spec.sharpness

    wq, wk, wv, wo = (params["layers.0." + n] for n in ("wq", "wk", "wv", "wo"))
    for h in designated:
        wq[h, QUERY, 0] = key_scale
        wk[h, IMG, 0] = 1.0
        wo[h * dh + 1, ANSWER] = 1.0
    for h in spec.vis_copy:
        wv[h, VIS, 1] = spec.vis_copy_gain / two_hot
    for h in spec.txt_prior:
        wk[h, CUE_MARK, 0] = cue_boost
        # each route receives ~half the attention mass, hence the factor 2
        wv[h, VIS, 1] = 2.0 * spec.prior_vis_gain / two_hot
        wv[h, CUE, 1] = 2.0 * spec.prior_txt_gain / two_hot

    # margin ~= 2*lam*c*sqrt(D)/query_scale for a small answer-axis value c
    lam = spec.query_scale / (2.0 * one_hot)
    params["unembed"][ANSWER, vocab.yes] = lam
    params["unembed"][ANSWER, vocab.no] = -lam
    return DecoderModel(cfg, params)
