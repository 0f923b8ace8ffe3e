"""JSON run configuration: loading, dot-path overrides and default resolution.

A config is one JSON document with the sections ``scenario``, ``driver``,
``rates``, ``experiment`` (plus ``simulate`` / ``estimate`` for those
subcommands).  ``resolve`` fills every default so the echoed document alone
reproduces a run.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

from .drivers import ThetaBox, builtin_driver
from .errors import ConfigError
from .sde_sim import scenario_from_config

SCENARIO_DEFAULTS = {
    "vasicek_1d": {
        "factor_params": {"a": 2.0, "b": 0.3, "sigma": 0.025, "x0": 0.3},
        "theta0": [1.0],
        "y0": [1.0],
        "shared_noise": False,
        "driver": {"name": "vasicek_sqrt", "params": {}},
        "theta_box": {"lower": [-20.0], "upper": [20.0]},
    },
    "heston_2d": {
        "factor_params": {"L": 1.0, "beta": 1.5, "sigma": 0.5, "nu0": 1.5},
        "theta0": [5.0, 5.0],
        "y0": [1.0, 1.0],
        "vol_matrix": [[0.4, 0.0], [0.4, 0.4]],
        "driver": {"name": "heston_price", "params": {"mu": 0.0}},
        "theta_box": {"lower": [-20.0, -20.0], "upper": [20.0, 20.0]},
    },
}


def load_config(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}", key="--config")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})", key="--config") from None


def apply_overrides(cfg: dict, overrides) -> dict:
    """Apply ``a.b.c=value`` assignments; values are parsed as JSON when possible."""
    out = copy.deepcopy(cfg)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value", key=item)
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = out
        parts = key.strip().split(".")
        for part in parts[:-1]:
            nxt = node.setdefault(part, {})
            if not isinstance(nxt, dict):
                raise ConfigError(f"cannot assign into non-table {part!r}", key=key)
            node = nxt
        node[parts[-1]] = value
    return out


def resolve(cfg: dict) -> tuple:
    """Fill defaults; returns ``(resolved_config, notes)``."""
    cfg = copy.deepcopy(cfg)
    notes = []
    scen = cfg.setdefault("scenario", {})
    name = scen.get("name")
    if name is None:
        raise ConfigError("scenario.name is required", key="scenario.name")
    defaults = SCENARIO_DEFAULTS.get(name, {})
    for key in ("factor_params", "theta0", "y0", "shared_noise", "vol_matrix"):
        if key in defaults:
            if key == "factor_params":
                merged = dict(defaults[key])
                merged.update(scen.get(key, {}))
                scen[key] = merged
            else:
                scen.setdefault(key, copy.deepcopy(defaults[key]))
    scen.setdefault("substeps", 1)
    user_mu = "mu" in cfg.get("driver", {}).get("params", {})
    drv = cfg.setdefault("driver", copy.deepcopy(defaults.get("driver", {"name": "zero", "params": {}})))
    drv.setdefault("params", {})
    if drv.get("name") == "heston_price" and (not user_mu or drv.get("mu_defaulted")):
        # the flag travels with the echoed config so a re-run reports the same note
        drv["params"].setdefault("mu", 0.0)
        drv["mu_defaulted"] = True
        notes.append("driver.params.mu not given; using mu = 0")
    rates = cfg.setdefault("rates", {})
    rates.setdefault("lk_pairs", [[13, 4]])
    rates.setdefault("allow_invalid", False)
    exp = cfg.setdefault("experiment", {})
    if "theta_box" not in exp and "theta_box" in defaults:
        exp["theta_box"] = copy.deepcopy(defaults["theta_box"])
    exp.setdefault("n_set", [100000])
    exp.setdefault("reps", 10)
    exp.setdefault("base_seed", 0)
    exp.setdefault("gamma", None)
    return cfg, notes


def require(section: dict, key: str, where: str):
    if key not in section:
        raise ConfigError(f"{where}.{key} is required", key=f"{where}.{key}")
    return section[key]


def build_scenario(cfg: dict):
    return scenario_from_config(cfg["scenario"], cfg.get("driver"))


def build_driver(cfg: dict):
    drv = cfg["driver"]
    return builtin_driver(require(drv, "name", "driver"), drv.get("params", {}))


def build_box(cfg: dict) -> ThetaBox:
    box = require(cfg["experiment"], "theta_box", "experiment")
    return ThetaBox(require(box, "lower", "experiment.theta_box"), require(box, "upper", "experiment.theta_box"))
