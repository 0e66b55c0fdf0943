"""Run configuration: a single JSON document, validated before any run.

Schema (version 1)::

    {
      "schema_version": 1,
      "chain": "cma" | "csa",
      "objective": {"name": "sphere", "params": {}},
      "es": {"d": 2, "lam": null, "mu": null, "weights": "equal",
             "c": null, "d_sigma": 1.0, "mu_eff": null},
      "seed": 0,
      "steps": 500,
      "burn_in": null,
      "replicas": 20,
      "x_star": null,
      "initial": {"m": null, "C": null, "sigma": 1.0},
      "output_dir": "out",
      "workers": 1,
      "verify": {...},
      "estimate": {...}
    }

``null`` entries take the library defaults.  ``mu_eff`` may also be
``"sum_squares"`` (sum of squared weights) or ``"conventional"`` (its inverse).
The ``NORMES_SEED`` and ``NORMES_OUTPUT_DIR`` environment variables override
the file; command-line flags override both.
"""

from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .analysis import parse_functional, parse_lyapunov
from .es import ESParams, ParamsError, RawCmaState, RawCsaState
from .linalg import NotSpdError, spd_eigh
from .objectives import Objective, ObjectiveError, make_builtin, shifted

SCHEMA_VERSION = 1
ENV_SEED = "NORMES_SEED"
ENV_OUTPUT_DIR = "NORMES_OUTPUT_DIR"

DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "chain": "cma",
    "objective": {"name": "sphere", "params": {}},
    "es": {"d": 2, "lam": None, "mu": None, "weights": "equal", "c": None, "d_sigma": 1.0, "mu_eff": None},
    "seed": 0,
    "steps": 500,
    "burn_in": None,
    "replicas": 20,
    "x_star": None,
    "initial": {"m": None, "C": None, "sigma": 1.0},
    "output_dir": "out",
    "workers": 1,
    "verify": {
        "steps": 100,
        "seeds": 10,
        "T": 200,
        "mc_samples": 1000000,
        "density_batches": 100,
        "starts": 100,
        "closure_trials": 500,
        "rank_paths": 5,
        "k": None,
    },
    "estimate": {
        "T": 2000,
        "functional": "log_norm_z",
        "lyapunov": "sqrt_pair",
        "probe_norms": [0.001, 0.1, 1.0, 10.0, 1000.0],
        "mc_per_state": 2000,
    },
}


class ConfigError(ValueError):
    """Invalid configuration; ``errors`` lists one message per offending field."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.errors))


def _merge(base, override, path, errors):
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            errors.append(f"{where}: unknown field")
        elif isinstance(base[key], dict) and key not in ("params",):
            if not isinstance(value, dict):
                errors.append(f"{where}: expected an object")
            else:
                out[key] = _merge(base[key], value, where, errors)
        else:
            out[key] = value
    return out


@dataclass
class RunConfig:
    chain: str
    objective: Objective
    base_objective: Objective
    params: ESParams
    seed: int
    steps: int
    burn_in: int | None
    replicas: int
    x_star: np.ndarray
    raw0: object
    output_dir: str
    workers: int
    verify: dict
    estimate: dict
    document: dict = field(repr=False)

    @property
    def d(self) -> int:
        return self.params.d


def _int(doc, key, errors, minimum=0, allow_none=False):
    v = doc[key]
    if v is None and allow_none:
        return None
    if isinstance(v, bool) or not isinstance(v, int) or v < minimum:
        errors.append(f"{key}: expected an integer >= {minimum}, got {v!r}")
        return None
    return v


def build_config(document: dict | None = None, overrides: dict | None = None, environ=None) -> RunConfig:
    """Validate a config document (plus env and flag overrides) into a :class:`RunConfig`."""
    errors: list[str] = []
    document = document or {}
    if not isinstance(document, dict):
        raise ConfigError(["<root>: expected a JSON object"])
    version = document.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        errors.append(f"schema_version: unsupported version {version!r} (expected {SCHEMA_VERSION})")
    doc = _merge(DEFAULTS, document, "", errors)
    environ = os.environ if environ is None else environ
    if environ.get(ENV_SEED):
        try:
            doc["seed"] = int(environ[ENV_SEED])
        except ValueError:
            errors.append(f"{ENV_SEED}: expected an integer, got {environ[ENV_SEED]!r}")
    if environ.get(ENV_OUTPUT_DIR):
        doc["output_dir"] = environ[ENV_OUTPUT_DIR]
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key in ("d", "lam", "mu", "c"):
            doc["es"][key] = value
        elif key == "objective":
            doc["objective"] = {"name": value, "params": {}}
        else:
            doc[key] = value

    chain = doc["chain"]
    if chain not in ("cma", "csa"):
        errors.append(f"chain: expected 'cma' or 'csa', got {chain!r}")
    seed = doc["seed"]
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        errors.append(f"seed: expected a 64-bit unsigned integer, got {seed!r}")
    steps = _int(doc, "steps", errors, 0)
    burn_in = _int(doc, "burn_in", errors, 0, allow_none=True)
    replicas = _int(doc, "replicas", errors, 1)
    workers = _int(doc, "workers", errors, 1)
    if not isinstance(doc["output_dir"], str) or not doc["output_dir"]:
        errors.append("output_dir: expected a non-empty path")

    params = None
    es = dict(doc["es"])
    try:
        params = ESParams.create(**es)
    except ParamsError as exc:
        errors.extend(f"es.{msg}" for msg in str(exc).split("; "))
    except (TypeError, ValueError) as exc:
        errors.append(f"es: {exc}")

    objective = None
    obj = doc["objective"]
    if not isinstance(obj, dict) or "name" not in obj:
        errors.append("objective: expected {\"name\": ..., \"params\": {...}}")
    elif params is not None:
        try:
            objective = make_builtin(obj["name"], params.d, obj.get("params") or {})
        except ObjectiveError as exc:
            errors.append(f"objective: {exc}")

    x_star = raw0 = None
    if params is not None:
        d = params.d
        x_star = _vector(doc["x_star"], d, "x_star", errors, default=np.zeros(d))
        init = doc["initial"]
        m = _vector(init.get("m"), d, "initial.m", errors, default=x_star + np.ones(d) / np.sqrt(d)
                    if x_star is not None else None)
        if chain == "cma":
            C = init.get("C")
            try:
                C = np.eye(d) if C is None else np.asarray(C, dtype=float)
                if C.shape != (d, d):
                    raise ValueError(f"expected a {d}x{d} matrix")
                spd_eigh(C)
            except (ValueError, NotSpdError) as exc:
                errors.append(f"initial.C: {exc}")
                C = None
            if m is not None and C is not None:
                raw0 = RawCmaState(m, C)
        else:
            sigma = init.get("sigma", 1.0)
            if not isinstance(sigma, (int, float)) or not sigma > 0:
                errors.append(f"initial.sigma: expected a positive number, got {sigma!r}")
            elif m is not None:
                raw0 = RawCsaState(m, float(sigma))

    est = doc["estimate"]
    for key, parse in (("functional", parse_functional), ("lyapunov", parse_lyapunov)):
        try:
            parse(est[key])
        except ValueError as exc:
            errors.append(f"estimate.{key}: {exc}")
    if not isinstance(est["T"], int) or est["T"] < 20:
        errors.append(f"estimate.T: expected an integer >= 20, got {est['T']!r}")

    if errors:
        raise ConfigError(errors)
    base = objective
    if np.any(x_star):
        objective = shifted(base, x_star)
    return RunConfig(chain, objective, base, params, seed, steps, burn_in, replicas, x_star, raw0,
                     doc["output_dir"], workers, doc["verify"], doc["estimate"], doc)


def _vector(value, d, name, errors, default=None):
    if value is None:
        return default
    try:
        v = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        errors.append(f"{name}: expected a list of {d} numbers")
        return None
    if v.shape != (d,) or not np.all(np.isfinite(v)):
        errors.append(f"{name}: expected a list of {d} finite numbers")
        return None
    return v


def load_config(path, overrides=None, environ=None) -> RunConfig:
    if path is None:
        return build_config({}, overrides, environ)
    try:
        with open(path, encoding="utf-8") as fp:
            document = json.load(fp)
    except OSError as exc:
        raise ConfigError([f"config file: {exc}"]) from exc
    except json.JSONDecodeError as exc:
        raise ConfigError([f"config file: invalid JSON ({exc})"]) from exc
    return build_config(document, overrides, environ)
