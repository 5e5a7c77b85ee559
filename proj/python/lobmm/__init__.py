"""Queue-reactive limit order book models and market-making strategies."""

import json as _json

from . import _lobmm
from ._lobmm import (
    ConfigError,
    ParseError,
    __version__,
    cli,
    file_hash,
    market_size_pmf,

    value_iterate,
    verify_manifest,
)

__all__ = [
    "ConfigError",
    "ParseError",
    "__version__",
    "calibrate",
    "cli",
    "file_hash",
    "load_model",
    "market_size_pmf",
    "monte_carlo_naive",
    "save_model",
    "simulate",
    "solve_pair",
    "synthetic_model",
    "value_iterate",
    "verify_manifest",
]


def _text(model):
    # Models are passed as model.v1 dicts (or JSON text).
    return model if isinstance(model, str) else _json.dumps(model)


def synthetic_model(cap=20):
    return _json.loads(_lobmm.synthetic_model(cap))


def load_model(path):
    return _json.loads(_lobmm.load_model(str(path)))


def save_model(path, model):
    _lobmm.save_model(str(path), _text(model))


def calibrate(files, qmax=50):
    return _json.loads(_lobmm.calibrate([str(f) for f in files], qmax))


def simulate(model, variant, horizon, seed=0, events_out=None):
    out = None if events_out is None else str(events_out)
    return _json.loads(_lobmm.simulate(_text(model), variant, horizon, seed, out))


def solve_pair(model, variant="II", tol=1e-9, extended=False, seed=0):
    return _lobmm.solve_pair(_text(model), variant, tol, extended, seed)


def monte_carlo_naive(model, variant, runs, horizon, qmin=0, seed=0):
    return _json.loads(_lobmm.monte_carlo_naive(_text(model), variant, runs, horizon, qmin, seed))
