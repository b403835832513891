from .config import GateTable, ModalityLayout, ModelConfig
from .decoder import (
    DecoderModel,
    HeadRoutes,
    LayerTrace,
    RouteCache,
    forward,
    forward_ungated,
    init_random,
    mha_route_split,
    param_shapes,
)
from .objective import ObjectiveKind, TokenLogProb, YesNoMargin, objective, objective_from_dict

__all__ = [
    "DecoderModel",
    "GateTable",
    "HeadRoutes",
    "LayerTrace",
    "ModalityLayout",
    "ModelConfig",
    "ObjectiveKind",
    "RouteCache",
    "TokenLogProb",
    "YesNoMargin",
    "forward",
    "forward_ungated",
    "init_random",
    "mha_route_split",
    "objective",
    "objective_from_dict",
    "param_shapes",
]
