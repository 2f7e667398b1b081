"""Treatment-response trajectories with errors-in-variables."""

import json

import numpy as np

from . import _core
from ._core import (
    DomainError,
    Fit,
    InputError,
    NumericalError,
    PatientData,
    StructuralError,
    TreatmentEvent,
    ingest,
    mann_whitney_u,
    response_area,
)

__all__ = [
    "DomainError",
    "Fit",
    "InputError",
    "NumericalError",
    "PatientData",
    "StructuralError",
    "TreatmentEvent",
    "evaluate",
    "fit",
    "ingest",
    "mann_whitney_u",
    "psis_loo",
    "response_area",
    "response_curve",
    "simulate",
    "summary",
]


def simulate(sim=None, model=None):
    """Toy or generative dataset; returns (patients, truth dict)."""
    data, truth = _core.simulate(json.dumps(sim or {}), json.dumps(model or {}))
    return data, json.loads(truth)


def fit(data, model=None, sampler=None):
    """Samples the posterior; `model` and `sampler` are dicts of config fields."""
    return _core.fit(data, json.dumps(model or {}), json.dumps(sampler or {}))


def summary(result):
    return json.loads(result.summary_json())


def evaluate(result, baseline=None):
    return json.loads(_core.evaluate(result, baseline))


def psis_loo(loglik):
    return json.loads(_core.psis_loo(np.asarray(loglik, dtype=float)))


def response_curve(lags, h, l):
    return np.asarray(_core.response_curve(np.asarray(lags, dtype=float).tolist(), h, l))
