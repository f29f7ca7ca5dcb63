# SPDX-License-Identifier: Apache-2.0
# SPDX-FileCopyrightText: © 2026 The moesim Authors
"""Python access to the moesim simulator core."""

import json
from os import PathLike
from typing import Iterable, Optional, Union

from . import _core
from ._core import ConfigError, DataError, InvariantViolation, TraceSet

__all__ = [
    "ConfigError",
    "DataError",
    "InvariantViolation",
    "TraceSet",
    "resolve_config",
    "load_config",
    "traces",
    "load_traces",
    "preset",
    "cross_layer",
    "cross_token",
    "coactivation",
    "frequency",
    "spearman",
    "simulate",
]

Config = Union[dict, str, PathLike]


def _as_dict(config: Config) -> dict:
    if isinstance(config, dict):
        return resolve_config(config)
    return load_config(config)


def resolve_config(config: dict) -> dict:
    return json.loads(_core.resolve_config(json.dumps(config)))


def load_config(path: Union[str, PathLike]) -> dict:
    return json.loads(_core.load_config(path))


def traces(config: Config) -> TraceSet:
    """Traces described by a config: synthetic from its seed, or its trace files."""
    return _core.materialize_traces(json.dumps(_as_dict(config)))


def load_traces(path: Union[str, PathLike]) -> TraceSet:
    return _core.load_traces(path)


def preset(name: str) -> dict:
    return json.loads(_core.preset(name))


def cross_layer(ts: TraceSet, layer: int, phase: str = "both") -> list:
    return _core.cross_layer(ts, layer, phase)


def cross_token(ts: TraceSet, layer: int, phase: str = "both") -> list:
    return _core.cross_token(ts, layer, phase)


def coactivation(ts: TraceSet, layer: int, phase: str = "both") -> list:
    return _core.coactivation(ts, layer, phase)


def frequency(ts: TraceSet, layer: int, phase: str = "both") -> list:
    return _core.frequency(ts, layer, phase)


def spearman(a: Iterable[float], b: Iterable[float]) -> Optional[float]:
    return _core.spearman(list(a), list(b))


def simulate(config: Config, strategies: Iterable[str] = (), ts: Optional[TraceSet] = None) -> dict:
    """Runs the strategies and returns {"config", "seed", "reports", "comparison"}.

    "comparison" is present only when base is among the strategies.
    """
    cfg = _as_dict(config)
    if ts is None:
        ts = traces(cfg)
    return json.loads(_core.simulate(ts, json.dumps(cfg), list(strategies)))
