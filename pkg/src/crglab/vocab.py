"""Token ids shared by planted models and the synthetic probe tasks."""
from __future__ import annotations

from dataclasses import asdict, dataclass


@dataclass(frozen=True)
class TokenVocab:
    yes: int = 0
    no: int = 1
    img_pos: int = 2
    img_neg: int = 3
    img_bg: int = 4
    cue_yes: int = 5
    cue_no: int = 6
    query: int = 7
    fillers: tuple[int, ...] = (8, 9, 10, 11)

    @property
    def size(self) -> int:
        return max(self.yes, self.no, self.img_pos, self.img_neg, self.img_bg,
                   self.cue_yes, self.cue_no, self.query, *self.fillers) + 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fillers"] = list(self.fillers)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TokenVocab":
        d = dict(d)
        if "fillers" in d:
            d["fillers"] = tuple(d["fillers"])
        return cls(**d)


DEFAULT_VOCAB = TokenVocab()
