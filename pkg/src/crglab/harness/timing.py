"""Per-decoding-step runtime breakdown of the CRG pipeline."""
from __future__ import annotations

import time
from dataclasses import dataclass

from ..errors import InputError
from ..gating import SchedulePolicy, StepTimer, crg_step
from ..model.decoder import DecoderModel
from ..model.objective import YesNoMargin
from ..reports import write_csv
from .tasks import TaskInstance

BLOCKS = ("base_forward", "grad", "compute_CRE", "gate_compute", "gated_forward", "other")


@dataclass
class TimingTable:
    steps: int
    mean_ms: dict[str, float]
    share: dict[str, float]

    @property
    def total_ms(self) -> float:
        return sum(self.mean_ms.values())

    @property
    def estimator_share(self) -> float:
        """Share spent on the sensitivity sweep, the estimator and gate planning."""
        return self.share["grad"] + self.share["compute_CRE"] + self.share["gate_compute"]

    def rows(self) -> list[dict]:
        return [{"block": b, "mean_ms": self.mean_ms[b], "share_pct": self.share[b]} for b in BLOCKS]

    def to_csv(self, path=None) -> str:
        return write_csv(path, self.rows(), ("block", "mean_ms", "share_pct"))


def timing_breakdown(
    model: DecoderModel,
    task: TaskInstance,
    policy: SchedulePolicy | None = None,
    steps: int = 20,
    warmup: int = 2,
) -> TimingTable:
    """Average milliseconds per block over ``steps`` repeated CRG steps on one prefix.

    ``other`` is the wall time of the step not covered by the five named blocks.
    """
    if steps < 1:
        raise InputError("timing_breakdown needs steps >= 1")
    policy = policy or SchedulePolicy()
    kind = YesNoMargin(model.config.yes_token, model.config.no_token)
    for _ in range(warmup):
        crg_step(model, task.tokens, task.layout, kind, policy)
    timer = StepTimer()
    wall = 0.0
    for _ in range(steps):
        t0 = time.perf_counter()
        crg_step(model, task.tokens, task.layout, kind, policy, timer)
        wall += time.perf_counter() - t0
    mean = {b: timer.blocks.get(b, 0.0) / steps for b in BLOCKS[:-1]}
    mean["other"] = max(wall * 1e3 / steps - sum(mean.values()), 0.0)
    total = sum(mean.values())
    share = {b: 100.0 * mean[b] / total for b in BLOCKS}
    return TimingTable(steps, mean, share)
