"""Benchmark POMDPs and the simulator contract."""
from __future__ import annotations

import json
import sys
from pathlib import Path

from .base import (
    ContractError,
    DegenerateBeliefError,
    PomdpModel,
    StepResult,
    TabularPomdp,
)
from .tiger import TigerModel
from .velreg import VelocityRegulationModel

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

MODELS = {
    TigerModel.model_id: TigerModel,
    VelocityRegulationModel.model_id: VelocityRegulationModel,
}


def make_model(model_id: str, config: dict | None = None) -> PomdpModel:
    try:
        cls = MODELS[model_id]
    except KeyError:
        raise ValueError(f"unknown model {model_id!r}; known: {sorted(MODELS)}") from None
    return cls.from_config(config or {})


def load_model_config(path: str | Path) -> PomdpModel:
    """Build a model from a JSON or TOML file with a top-level ``model`` key.

    Every other key overrides the built-in parameterization.
    """
    path = Path(path)
    if path.suffix == ".toml":
        data = tomllib.loads(path.read_text())
    else:
        data = json.loads(path.read_text())
    data = dict(data)
    model_id = data.pop("model")
    return make_model(model_id, data)


__all__ = [
    "ContractError",
    "DegenerateBeliefError",
    "MODELS",
    "PomdpModel",
    "StepResult",
    "TabularPomdp",
    "TigerModel",
    "VelocityRegulationModel",
    "load_model_config",
    "make_model",
]
