"""Scenario documents: one JSON file fully determines a run.

Layout::

    {
      "market": {
        "intensity": [[-1, 1], [2, -2]],
        "initial_state": 1,
        "r": [...], "mu0": [...], "sigma0": [...],
        "levy": {"intensity": 1.0, "marks": [...], "probs": [...], "gamma": [[...]]},
        "switch": {"marks": [[...], ...], "probs": [[...], ...]},
        "mu_markov": ..., "mu_power": ..., "mu_impulse": ..., ...
      },
      "run": {"horizon": 1.0, "n_paths": 100000, "seed": 0, "K": 1, "L": 0, ...}
    }

Regimes are numbered from 1 in documents and reports. Unknown keys are
rejected. Schema problems raise ``ConfigError``; values that break a model
invariant raise ``SpecError`` naming the field.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .chain import RegimeChain
from .errors import ConfigError, SpecError
from .jumps import LevyJumpSpec, SwitchJumpSpec
from .market import MarketSpec
from .wealth import UtilitySpec

MARKET_KEYS = {
    "intensity", "initial_state", "initial_distribution", "r", "mu0", "sigma0", "s0", "levy", "switch",
    "mu_markov", "sigma_markov", "s_markov", "mu_power", "sigma_power", "s_power",
    "mu_impulse", "sigma_impulse", "s_impulse", "require_premium",
}
LEVY_KEYS = {"intensity", "marks", "probs", "gamma"}
SWITCH_KEYS = {"marks", "probs"}
RUN_KEYS = {
    "horizon", "dt", "n_paths", "seed", "K", "L", "checkpoints", "utility", "alpha", "z0",
    "export_paths", "oracle", "hedge",
}
ORACLE_KEYS = {"bounds", "points"}
HEDGE_KEYS = {"h0", "h_markov", "h_power", "h_impulse", "m0", "n_paths"}
REQUIRED_MARKET = ("intensity", "r", "mu0", "sigma0")


@dataclass(frozen=True)
class OracleConfig:
    bounds: dict
    points: int = 41


@dataclass(frozen=True)
class HedgeConfig:
    """Per-regime representation coefficients, each with a leading regime axis."""

    h0: object = 0.0
    h_markov: object = 0.0
    h_power: object = 0.0
    h_impulse: object = 0.0
    m0: float = 1.0
    n_paths: int = 100


@dataclass(frozen=True)
class RunConfig:
    horizon: float = 1.0
    dt: float | None = None
    n_paths: int = 100000
    seed: int = 0
    K: int = 1
    L: int = 0
    checkpoints: tuple = (0.25, 0.5, 1.0)
    utility: UtilitySpec = field(default_factory=UtilitySpec)
    z0: float = 1.0
    export_paths: int = 1
    oracle: OracleConfig | None = None
    hedge: HedgeConfig | None = None


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    market: MarketSpec
    run: RunConfig
    sha256: str
    source: dict


def _check_keys(block: dict, allowed: set, where: str) -> None:
    if not isinstance(block, dict):
        raise ConfigError(f"{where}: expected an object")
    extra = sorted(set(block) - allowed)
    if extra:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(extra)}")


def _number(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}: expected a number")
    return float(value)


def _integer(value, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{where}: expected an integer")
    return int(value)


def _array(value, where: str):
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: expected numbers") from None
    if arr.dtype == object:
        raise ConfigError(f"{where}: ragged array")
    return arr


def _market(block: dict) -> MarketSpec:
    _check_keys(block, MARKET_KEYS, "market")
    for key in REQUIRED_MARKET:
        if key not in block:
            raise ConfigError(f"market: missing key {key}")
    lam = _array(block["intensity"], "market.intensity")
    if "initial_state" in block and "initial_distribution" in block:
        raise ConfigError("market: give initial_state or initial_distribution, not both")
    if "initial_distribution" in block:
        initial = _array(block["initial_distribution"], "market.initial_distribution")
    else:
        state = _integer(block.get("initial_state", 1), "market.initial_state")
        n = lam.shape[0] if lam.ndim == 2 else 1
        if not 1 <= state <= n:
            raise SpecError("initial_state", f"must be in 1..{n}")
        initial = state - 1
    chain = RegimeChain(lam, initial)
    n = chain.n_regimes

    if "levy" in block:
        lv = block["levy"]
        _check_keys(lv, LEVY_KEYS, "market.levy")
        for key in LEVY_KEYS:
            if key not in lv:
                raise ConfigError(f"market.levy: missing key {key}")
        levy = LevyJumpSpec(_number(lv["intensity"], "market.levy.intensity"), _array(lv["marks"], "market.levy.marks"),
                            _array(lv["probs"], "market.levy.probs"), _array(lv["gamma"], "market.levy.gamma"))
    else:
        levy = LevyJumpSpec.none(n)
    if "switch" in block:
        sw = block["switch"]
        _check_keys(sw, SWITCH_KEYS, "market.switch")
        for key in SWITCH_KEYS:
            if key not in sw or not isinstance(sw[key], list):
                raise ConfigError(f"market.switch: {key} must be a list with one entry per regime")
        switch = SwitchJumpSpec(tuple(_array(u, "market.switch.marks") for u in sw["marks"]),
                                tuple(_array(q, "market.switch.probs") for q in sw["probs"]))
    else:
        switch = SwitchJumpSpec.none(n)

    kwargs = {}
    for key in ("r", "mu0", "sigma0", "mu_markov", "sigma_markov", "s_markov", "mu_power", "sigma_power", "s_power",
                "mu_impulse", "sigma_impulse", "s_impulse"):
        if key in block:
            kwargs[key] = _array(block[key], f"market.{key}")
    if "s0" in block:
        kwargs["s0"] = _number(block["s0"], "market.s0")
    if "require_premium" in block:
        if not isinstance(block["require_premium"], bool):
            raise ConfigError("market.require_premium: expected true or false")
        kwargs["require_premium"] = block["require_premium"]
    return MarketSpec(chain, levy, switch, **kwargs)


def _run(block: dict, spec: MarketSpec) -> RunConfig:
    _check_keys(block, RUN_KEYS, "run")
    out = {}
    for key in ("horizon", "dt", "z0"):
        if key in block:
            out[key] = _number(block[key], f"run.{key}")
    for key in ("n_paths", "seed", "K", "L", "export_paths"):
        if key in block:
            out[key] = _integer(block[key], f"run.{key}")
    horizon = out.get("horizon", 1.0)
    if not horizon > 0:
        raise SpecError("horizon", "must be > 0")
    if "dt" in out and not 0 < out["dt"] <= horizon:
        raise SpecError("dt", "must be in (0, horizon]")
    if out.get("z0", 1.0) <= 0:
        raise SpecError("z0", "must be > 0")
    if out.get("n_paths", 1) < 1:
        raise SpecError("n_paths", "must be >= 1")
    if out.get("seed", 0) < 0:
        raise SpecError("seed", "must be >= 0")
    if out.get("export_paths", 1) < 0:
        raise SpecError("export_paths", "must be >= 0")
    spec.check_orders(out.get("K", 1), out.get("L", 0))

    if "checkpoints" in block:
        ck = _array(block["checkpoints"], "run.checkpoints").ravel()
        if ck.size == 0 or np.any(ck <= 0) or np.any(np.diff(ck) <= 0) or ck[-1] > horizon:
            raise SpecError("checkpoints", "must be increasing in (0, horizon]")
        out["checkpoints"] = tuple(float(c) for c in ck)
    else:
        out["checkpoints"] = tuple(c for c in (0.25 * horizon, 0.5 * horizon, horizon))

    kind = block.get("utility", "log")
    if kind not in ("log", "power"):
        raise ConfigError("run.utility: expected 'log' or 'power'")
    if kind == "power" and "alpha" not in block:
        raise ConfigError("run.alpha: required for power utility")
    alpha = _number(block["alpha"], "run.alpha") if kind == "power" else None
    if kind == "log" and "alpha" in block:
        raise ConfigError("run.alpha: only allowed with power utility")
    out["utility"] = UtilitySpec(kind, alpha)

    if "oracle" in block:
        ob = block["oracle"]
        _check_keys(ob, ORACLE_KEYS, "run.oracle")
        if not isinstance(ob.get("bounds"), dict) or not ob["bounds"]:
            raise ConfigError("run.oracle.bounds: expected a non-empty object")
        bounds = {}
        for name, pair in ob["bounds"].items():
            lo_hi = _array(pair, f"run.oracle.bounds.{name}")
            if lo_hi.shape != (2,) or not lo_hi[0] < lo_hi[1]:
                raise SpecError("oracle.bounds", f"{name} needs [low, high] with low < high")
            bounds[name] = (float(lo_hi[0]), float(lo_hi[1]))
        points = _integer(ob.get("points", 41), "run.oracle.points")
        if points < 2:
            raise SpecError("oracle.points", "must be >= 2")
        out["oracle"] = OracleConfig(bounds, points)

    if "hedge" in block:
        hb = block["hedge"]
        _check_keys(hb, HEDGE_KEYS, "run.hedge")
        kw = {k: _array(hb[k], f"run.hedge.{k}") for k in ("h0", "h_markov", "h_power", "h_impulse") if k in hb}
        if "m0" in hb:
            kw["m0"] = _number(hb["m0"], "run.hedge.m0")
        if "n_paths" in hb:
            kw["n_paths"] = _integer(hb["n_paths"], "run.hedge.n_paths")
            if kw["n_paths"] < 1:
                raise SpecError("hedge.n_paths", "must be >= 1")
        out["hedge"] = HedgeConfig(**kw)
    return RunConfig(**out)


def parse_config(text: str) -> ScenarioConfig:
    """Parse and validate a scenario document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from None
    _check_keys(doc, {"market", "run"}, "document")
    if "market" not in doc:
        raise ConfigError("document: missing key market")
    spec = _market(doc["market"])
    run = _run(doc.get("run", {}), spec)
    return ScenarioConfig(spec, run, hashlib.sha256(text.encode()).hexdigest(), doc)


def load_config(path) -> ScenarioConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text)
