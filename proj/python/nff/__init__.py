"""Normalizing field flows and physics-informed stochastic elliptic solvers.

Thin bindings over the C++ core; file-level entry points mirror the `nff`
command-line tool.
"""

import json as _json

from ._nff import (
    ConfigError,
    DataMismatchError,
    Experiment,
    NumericalError,
    ShapeError,
    generate,
    gp_sample,
    infer,
    lowrank_logpdf,
    posterior_xi,
    solve_elliptic_1d,
    solve_elliptic_2d,
    train,
)
from ._nff import _evaluate_json


def evaluate(experiment, checkpoint, out_dir, oracle_self=False):
    """Writes metrics.json and the CSV files to out_dir; returns the metrics."""
    return _json.loads(_evaluate_json(experiment, checkpoint, out_dir, oracle_self))


__all__ = [
    "ConfigError",
    "DataMismatchError",
    "Experiment",
    "NumericalError",
    "ShapeError",
    "evaluate",
    "generate",
    "gp_sample",
    "infer",
    "lowrank_logpdf",
    "posterior_xi",
    "solve_elliptic_1d",
    "solve_elliptic_2d",
    "train",
]
