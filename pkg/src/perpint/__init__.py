"""Almost-sure finiteness of perpetual integrals of one-dimensional diffusions.

Submodules:

* ``coefficients``: expression parser, evaluation and endpoint asymptotics
* ``scale_speed``: scale function, speed density and boundary behaviour
* ``classifier``: verdicts on perpetual integrals, moment bounds, fixation
* ``simulate``: Monte Carlo paths, ensembles and time changes
* ``experiments``: simulation campaigns and cross checks
* ``cli``: the ``perpint`` command
"""
from __future__ import annotations

try:
    from importlib.metadata import PackageNotFoundError, version as _version

    __version__ = _version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.0.0+local"

from .classifier import (
    CriterionInapplicable,
    MomentBound,
    NovikovConditionError,
    Outcome,
    Verdict,
    classify_fixation_before_extinction,
    classify_perpetual_two_sided,
    classify_perpetual_zero,
    girsanov_reduce,
    moment_bound,
)
from .coefficients import CoefficientExpr, DomainError, ParseError, parse_expr
from .rng import DEFAULT_SEED
from .scale_speed import DiffusionSpec, ScaleSpeed, build_scale_speed, classify_boundaries

__all__ = [
    "DEFAULT_SEED",
    "CoefficientExpr",
    "CriterionInapplicable",
    "DiffusionSpec",
    "DomainError",
    "MomentBound",
    "NovikovConditionError",
    "Outcome",
    "ParseError",
    "ScaleSpeed",
    "Verdict",
    "build_scale_speed",
    "classify_boundaries",
    "classify_fixation_before_extinction",
    "classify_perpetual_two_sided",
    "classify_perpetual_zero",
    "girsanov_reduce",
    "moment_bound",
    "parse_expr",
]
