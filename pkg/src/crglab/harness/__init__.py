"""Synthetic probes, decoding loops, metrics and the validation experiments."""
from .decode import DISCRIMINATIVE, GENERATIVE, Transcript, decode, decode_all
from .metrics import Confusion, EvalSummary, evaluate
from .tasks import TaskInstance, TaskSpec, generate_tasks, make_instance
from .timing import TimingTable, timing_breakdown
from .validation import SampleSpec, exact_validation

__all__ = [
    "Confusion",
    "DISCRIMINATIVE",
    "EvalSummary",
    "GENERATIVE",
    "SampleSpec",
    "TaskInstance",
    "TaskSpec",
    "TimingTable",
    "Transcript",
    "decode",
    "decode_all",
    "evaluate",
    "exact_validation",
    "generate_tasks",
    "make_instance",
    "timing_breakdown",
]
