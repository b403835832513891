from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterable, Iterator

import numpy as np

from ..errors import ConfigError, InputError


@dataclass(frozen=True)
class ModelConfig:
    """Sizes of the fixed decoder architecture.

    ``final_norm=False`` replaces the final RMSNorm by the identity; it exists so
    tests can build decoders whose decision score is exactly linear in the gates.
    """

    layers: int = 2
    heads: int = 4
    model_dim: int = 16
    head_dim: int = 4
    mlp_dim: int = 32
    vocab: int = 16
    yes_token: int = 0
    no_token: int = 1
    seed: int = 0
    final_norm: bool = True

    def __post_init__(self):
        for name in ("layers", "heads", "model_dim", "head_dim", "mlp_dim", "vocab"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.model_dim != self.heads * self.head_dim:
            raise ConfigError(
                f"model_dim ({self.model_dim}) must equal heads*head_dim "
                f"({self.heads}*{self.head_dim})"
            )
        if self.vocab < 4:
            raise ConfigError("vocab must be at least 4")
        if self.yes_token == self.no_token:
            raise ConfigError("yes_token and no_token must differ")
        for tok in (self.yes_token, self.no_token):
            if not 0 <= tok < self.vocab:
                raise ConfigError(f"answer token {tok} outside vocab")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


class ModalityLayout:
    """Split of sequence positions into visual and textual index sets.

    Stored as a boolean vector over positions; ``vis_mask`` and ``txt_mask`` are the
    diagonals of the selection matrices S_vis and S_txt.
    """

    def __init__(self, total_len: int, visual: Iterable[int] = ()):
        if total_len < 1:
            raise InputError("layout must cover at least one position")
        vis = np.zeros(total_len, dtype=bool)
        for i in visual:
            if not 0 <= i < total_len:
                raise InputError(f"visual index {i} outside [0, {total_len})")
            vis[i] = True
        self._vis = vis
        self._vis.setflags(write=False)

    @classmethod
    def prefix(cls, n_visual: int, total_len: int) -> "ModalityLayout":
        return cls(total_len, range(n_visual))

    @property
    def total_len(self) -> int:
        return len(self._vis)

    @property
    def vis_mask(self) -> np.ndarray:
        return self._vis

    @property
    def txt_mask(self) -> np.ndarray:
        return ~self._vis

    @property
    def visual_indices(self) -> list[int]:
        return np.flatnonzero(self._vis).tolist()

    @property
    def text_indices(self) -> list[int]:
        return np.flatnonzero(~self._vis).tolist()

    def selection_matrices(self) -> tuple[np.ndarray, np.ndarray]:
        s_vis = np.diag(self._vis.astype(np.float64))
        return s_vis, np.eye(self.total_len) - s_vis

    def extend(self, n: int = 1) -> "ModalityLayout":
        """Layout for the sequence grown by ``n`` generated (textual) tokens."""
        return ModalityLayout(self.total_len + n, self.visual_indices)

    def to_dict(self) -> dict:
        return {"total_len": self.total_len, "visual": self.visual_indices}

    @classmethod
    def from_dict(cls, d: dict) -> "ModalityLayout":
        return cls(d["total_len"], d["visual"])

    def __eq__(self, other) -> bool:
        return isinstance(other, ModalityLayout) and np.array_equal(self._vis, other._vis)

    def __repr__(self) -> str:
        return f"ModalityLayout(total_len={self.total_len}, visual={self.visual_indices})"


@dataclass
class GateTable:
    """Per-head (g_vis, g_txt) gates, arrays of shape (layers, heads)."""

    vis: np.ndarray
    txt: np.ndarray

    def __post_init__(self):
        self.vis = np.array(self.vis, dtype=np.float64)
        self.txt = np.array(self.txt, dtype=np.float64)
        if self.vis.shape != self.txt.shape or self.vis.ndim != 2:
            raise InputError("gate arrays must share a (layers, heads) shape")
        if not (np.isfinite(self.vis).all() and np.isfinite(self.txt).all()):
            raise InputError("gates must be finite")
        if (self.vis < 0).any() or (self.txt < 0).any():
            raise InputError("gates must be nonnegative")

    @classmethod
    def ones(cls, layers: int, heads: int) -> "GateTable":
        return cls(np.ones((layers, heads)), np.ones((layers, heads)))

    @property
    def shape(self) -> tuple[int, int]:
        return self.vis.shape

    def copy(self) -> "GateTable":
        return GateTable(self.vis.copy(), self.txt.copy())

    def with_gate(self, layer: int, head: int, vis: float | None = None, txt: float | None = None) -> "GateTable":
        out = self.copy()
        if vis is not None:
            if vis < 0:
                raise InputError("gates must be nonnegative")
            out.vis[layer, head] = vis
        if txt is not None:
            if txt < 0:
                raise InputError("gates must be nonnegative")
            out.txt[layer, head] = txt
        return out

    def patch(self, text_gates: dict[tuple[int, int], float]) -> "GateTable":
        out = self.copy()
        for (layer, head), g in text_gates.items():
            out.txt[layer, head] = g
        GateTable(out.vis, out.txt)  # validates
        return out

    def is_identity(self) -> bool:
        return bool((self.vis == 1.0).all() and (self.txt == 1.0).all())

    def __iter__(self) -> Iterator[tuple[int, int, float, float]]:
        layers, heads = self.shape
        for l in range(layers):
            for h in range(heads):
                yield l, h, float(self.vis[l, h]), float(self.txt[l, h])

    def to_dict(self) -> dict:
        return {"vis": self.vis.tolist(), "txt": self.txt.tolist()}

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, GateTable)
            and np.array_equal(self.vis, other.vis)
            and np.array_equal(self.txt, other.txt)
        )
