"""Change of measure to the martingale measure and its Monte-Carlo checks.

The density is

    l(t) = exp( int psi0 dW - 1/2 int psi0^2 ds - sum_j int psi_j dphi_j )
           * prod over transitions into j of (1 + psi_j),

with ``psi0 = (r - mu0) / sigma0`` and, while the chain sits in ``i != j``,
``psi_j = (r_i - mu_j^i) / (sigma_j^i lambda_ij)``. The entry ``psi_j`` is not
defined while the chain sits in ``j`` and is stored as NaN.

Expectations under the new measure are computed from simulations under the
original one, weighting each path by ``l``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import SpecError
from .market import (
    MarketSpec,
    ScenarioPath,
    _parse_name,
    asset_names,
    impulse_name,
    initial_price,
    log_discounted_functional,
)
from .montecarlo import PathFunctional, mean_and_stderr, simulate_statistics

MIN_ZTEST_PATHS = 100


@dataclass(frozen=True, eq=False)
class GirsanovSpec:
    """Market prices of diffusion and regime-switch risk.

    Attributes
    ----------
    psi0 : ndarray, shape (N,)
    psij : ndarray, shape (N, N)
        ``psij[i, j]`` applies while the chain sits in ``i``; the diagonal is NaN.
    intensity : ndarray, shape (N, N)
        Chain intensities, needed for the compensator of the switch counts.
    """

    psi0: np.ndarray
    psij: np.ndarray
    intensity: np.ndarray

    def psi_j(self, i: int, j: int) -> float:
        if i == j:
            raise ValueError("psi_j is not defined while the chain sits in regime j")
        return float(self.psij[i, j])

    def log_density_functional(self, n_switch_marks: int, n_levy_marks: int) -> PathFunctional:
        n = self.psi0.size
        off = ~np.eye(n, dtype=bool)
        lam = np.where(off, self.intensity, 0.0)
        psi = np.where(off, self.psij, 0.0)
        drift = -0.5 * self.psi0**2 - (psi * lam).sum(axis=1)
        sw = np.zeros((n, n, n_switch_marks))
        sw[off] = np.log1p(psi[off])[:, None]
        return PathFunctional(0.0, drift, self.psi0.copy(), sw, np.zeros((n, n_levy_marks)))


def girsanov_parameters(spec: MarketSpec) -> GirsanovSpec:
    """Measure-change parameters implied by the stock and the Markovian jump securities."""
    n = spec.n_regimes
    psi0 = (spec.r - spec.mu0) / spec.sigma0
    psij = np.full((n, n), np.nan)
    lam = spec.chain.intensity
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            psij[i, j] = (spec.r[i] - spec.mu_markov[j, i]) / (spec.sigma_markov[j, i] * lam[i, j])
            if not 1.0 + psij[i, j] > 0:
                raise SpecError("mu_markov", f"1 + psi_j <= 0 at regime i={i + 1}, j={j + 1}")
    return GirsanovSpec(psi0, psij, lam.copy())


@dataclass(frozen=True, eq=False)
class DensityPath:
    time: np.ndarray
    values: np.ndarray


def density_path(gir: GirsanovSpec, path: ScenarioPath) -> DensityPath:
    """Density ``l`` on the nodes of a scenario path."""
    st = path.stats
    f = gir.log_density_functional(st.switch_counts.shape[-1], st.poisson_counts.shape[-1])
    return DensityPath(path.time, f.exp(st)[0])


@dataclass(frozen=True)
class ZScore:
    checkpoint: float
    asset: str
    mean: float
    stderr: float
    z: float


def martingale_ztest(spec: MarketSpec, gir: GirsanovSpec, assets, checkpoints, n_paths: int, seed: int,
                     threads: int = 1) -> list[ZScore]:
    """z-scores of ``E[l(t) S(t)/B(t)] - S(0)`` for the selected assets.

    Parameters
    ----------
    assets : str or sequence of str
        Asset names as in CSV headers, or ``"all"``.

    Notes
    -----
    The discounted money market is identically one, so its row is reported
    with zero standard error and ``z = 0`` without simulation.
    """
    if n_paths < MIN_ZTEST_PATHS:
        raise SpecError("n_paths", f"at least {MIN_ZTEST_PATHS} paths are required")
    names = asset_names(spec) if assets == "all" else [assets] if isinstance(assets, str) else list(assets)
    for a in names:
        _parse_name(spec, a)
    ck = np.asarray(checkpoints, dtype=float)
    st = simulate_statistics(spec.chain, spec.levy, spec.switch, ck, n_paths, seed, threads)
    log_l = gir.log_density_functional(spec.switch.max_marks, spec.levy.n_marks)
    rows = []
    for a in names:
        if a == "B":
            rows += [ZScore(float(t), a, 1.0, 0.0, 0.0) for t in ck]
            continue
        s_init = initial_price(spec, a)
        mean, se = mean_and_stderr((log_l + log_discounted_functional(spec, a)).exp(st))
        for c, t in enumerate(ck):
            rows.append(ZScore(float(t), a, float(mean[c]), float(se[c]), float((mean[c] - s_init) / se[c])))
    return rows


def density_moments(spec: MarketSpec, gir: GirsanovSpec, horizon: float, n_paths: int, seed: int,
                    threads: int = 1) -> tuple[float, float]:
    """Monte-Carlo mean and standard error of ``l(horizon)``."""
    st = simulate_statistics(spec.chain, spec.levy, spec.switch, [horizon], n_paths, seed, threads)
    mean, se = mean_and_stderr(gir.log_density_functional(spec.switch.max_marks, spec.levy.n_marks).exp(st))
    return float(mean[0]), float(se[0])


def switch_mark_drift(spec: MarketSpec, gir: GirsanovSpec) -> dict:
    """Drift of each discounted price under the weighted measure caused by switch marks.

    The density tilts the intensity of a transition ``i -> j`` by
    ``1 + psij[i, j]`` but leaves the switch-mark compensators at their
    original values. Assets whose jumps at transitions include a switch mark
    therefore keep a residual relative drift
    ``sum_{j != i} lambda_ij psij[i, j] E[(U^(j))^l]`` (times the asset's
    volatility) in regime ``i``. Returns per-regime drift rates keyed by asset.
    """
    n = spec.n_regimes
    off = ~np.eye(n, dtype=bool)
    tilt = np.where(off, gir.psij * spec.chain.intensity, 0.0)
    out = {a: np.zeros(n) for a in asset_names(spec)}
    out["S0"] = tilt @ spec.switch.moment(1)
    for i in range(n):
        for l in range(1, spec.l_max + 1):
            out[impulse_name(i, l)] = spec.sigma_impulse[i, l - 1] * tilt[:, i] * spec.switch.moment(l)[i]
    return out


def ztest_csv(rows: list[ZScore]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["checkpoint", "asset", "mean", "stderr", "z"])
    for r in rows:
        w.writerow([repr(r.checkpoint), r.asset, repr(r.mean), repr(r.stderr), repr(r.z)])
    return buf.getvalue()
