"""Wealth of constant-proportion strategies and its expected utility.

A strategy holds fixed fractions of wealth in each risky asset while the chain
sits in a given regime. Log-wealth is then linear in the path statistics:

* drift ``r + pi . (mu - r) - pi0**2 sigma0**2 / 2`` minus the compensators of
  every jump exposure,
* volatility ``pi0 sigma0``,
* ``log(1 + y_m)`` per Lévy event with mark ``m``, where
  ``y_m = pi0 gamma_m + sum_k pi^(k) sigma^(k) gamma_m**k``,
* ``log(1 + pi_j sigma_j) + log(1 + z)`` per transition into ``j``, where
  ``z = pi0 u + sum_l pi_j^(l) sigma_j^(l) u**l`` for the drawn switch mark ``u``.

The last item multiplies the Markovian-jump factor and the switch-mark factor
of a transition separately, matching the additive generator used by the
optimisers. Both factors must stay positive, which is the admissibility
condition checked before any evaluation.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .chain import occupation_expectation
from .errors import SpecError
from .market import MarketSpec, ScenarioPath
from .montecarlo import PathFunctional, mean_and_stderr, simulate_statistics

MIN_MC_PATHS = 100
MONOTONE_TOL = 1e-9


class AdmissibilityError(ValueError):
    """A wealth jump factor ``1 + exposure`` is not positive on the support."""


@dataclass(frozen=True, eq=False)
class PortfolioWeights:
    """Fractions of wealth held in each risky asset.

    Attributes
    ----------
    pi0 : float
        Stock.
    pij : ndarray, shape (N,)
        Markovian jump securities.
    pik : ndarray, shape (K - 1,)
        Power-jump securities of orders ``2..K``.
    pil : ndarray, shape (N, L)
        Impulse securities ``[regime i, order l - 1]``.
    """

    pi0: float
    pij: np.ndarray
    pik: np.ndarray
    pil: np.ndarray

    def __post_init__(self):
        pij = np.atleast_1d(np.asarray(self.pij, dtype=float))
        pik = np.atleast_1d(np.asarray(self.pik, dtype=float))
        pil = np.asarray(self.pil, dtype=float).reshape(pij.size, -1)
        if pij.ndim != 1 or pik.ndim != 1:
            raise ValueError("pij and pik must be vectors")
        vals = np.concatenate([[self.pi0], pij, pik, pil.ravel()])
        if not np.all(np.isfinite(vals)):
            raise ValueError("weights must be finite")
        object.__setattr__(self, "pi0", float(self.pi0))
        object.__setattr__(self, "pij", pij)
        object.__setattr__(self, "pik", pik)
        object.__setattr__(self, "pil", pil)

    @property
    def n_regimes(self) -> int:
        return self.pij.size

    @property
    def K(self) -> int:
        return self.pik.size + 1

    @property
    def L(self) -> int:
        return self.pil.shape[1]

    @classmethod
    def zeros(cls, n_regimes: int, K: int = 1, L: int = 0) -> "PortfolioWeights":
        return cls(0.0, np.zeros(n_regimes), np.zeros(K - 1), np.zeros((n_regimes, L)))

    def to_vector(self) -> np.ndarray:
        """Ordering ``(pi0, pi_1..pi_N, pi^(2)..pi^(K), pi_i^(l))`` with ``i`` outer."""
        return np.concatenate([[self.pi0], self.pij, self.pik, self.pil.ravel()])

    @classmethod
    def from_vector(cls, v, n_regimes: int, K: int, L: int) -> "PortfolioWeights":
        v = np.asarray(v, dtype=float)
        if v.shape != (1 + n_regimes + (K - 1) + n_regimes * L,):
            raise ValueError("weight vector has the wrong length")
        n = n_regimes
        return cls(v[0], v[1 : 1 + n], v[1 + n : n + K], v[n + K :].reshape(n, L))

    def padded(self, K: int, L: int) -> "PortfolioWeights":
        """The same strategy with zero weight on the extra securities up to ``K``, ``L``."""
        if K < self.K or L < self.L:
            raise ValueError("cannot pad to lower orders")
        pik = np.concatenate([self.pik, np.zeros(K - self.K)])
        pil = np.concatenate([self.pil, np.zeros((self.n_regimes, L - self.L))], axis=1)
        return PortfolioWeights(self.pi0, self.pij, pik, pil)


@dataclass(frozen=True)
class UtilitySpec:
    """``log`` or power utility ``z**alpha`` with ``0 < alpha < 1``."""

    kind: str = "log"
    alpha: float | None = None

    def __post_init__(self):
        if self.kind not in ("log", "power"):
            raise SpecError("utility", "must be 'log' or 'power'")
        if self.kind == "power":
            if self.alpha is None or not 0.0 < self.alpha < 1.0:
                raise SpecError("alpha", "power utility needs 0 < alpha < 1")
        elif self.alpha is not None:
            raise SpecError("alpha", "only used with power utility")

    def __call__(self, wealth):
        return np.log(wealth) if self.kind == "log" else np.power(wealth, self.alpha)

    @property
    def label(self) -> str:
        return "log" if self.kind == "log" else f"power({self.alpha!r})"


@dataclass(frozen=True, eq=False)
class WealthPath:
    time: np.ndarray
    values: np.ndarray


def as_policy(spec: MarketSpec, pi) -> list[PortfolioWeights]:
    """One weight set per regime; a single ``PortfolioWeights`` is used in every regime."""
    n = spec.n_regimes
    policy = [pi] * n if isinstance(pi, PortfolioWeights) else list(pi)
    if len(policy) != n:
        raise ValueError(f"need one weight set per regime ({n})")
    for w in policy:
        if w.n_regimes != n:
            raise ValueError("weights sized for a different number of regimes")
        spec.check_orders(w.K, w.L)
    return policy


@dataclass(frozen=True, eq=False)
class JumpExposures:
    """Relative wealth jumps of one weight set while the chain sits in ``regime``.

    Attributes
    ----------
    markov : ndarray, shape (N,)
        ``pi_j sigma_j`` at a transition into ``j``; zero at ``j = regime``.
    levy : ndarray, shape (Ml,)
        ``y_m`` at a Lévy event with mark ``m``.
    switch : ndarray, shape (N, Ms)
        ``z`` at a transition into ``i`` with switch mark ``m``; zero at ``i = regime``.
    """

    markov: np.ndarray
    levy: np.ndarray
    switch: np.ndarray


def jump_exposures(spec: MarketSpec, w: PortfolioWeights, regime: int) -> JumpExposures:
    a = regime
    n = spec.n_regimes
    gamma = spec.levy.gamma[a]
    u_tab, _ = spec.switch.mark_table()
    markov = w.pij * spec.sigma_markov[:, a]
    markov[a] = 0.0
    levy = w.pi0 * gamma
    for k in range(2, w.K + 1):
        levy = levy + w.pik[k - 2] * spec.sigma_power[k - 2, a] * gamma**k
    switch = w.pi0 * u_tab
    for l in range(1, w.L + 1):
        switch = switch + (w.pil[:, l - 1] * spec.sigma_impulse[:, l - 1, a])[:, None] * u_tab**l
    switch[a] = 0.0
    return JumpExposures(markov, levy, switch.reshape(n, -1))


def check_admissible(spec: MarketSpec, pi, regimes=None) -> None:
    """Raise ``AdmissibilityError`` naming the first non-positive jump factor."""
    policy = as_policy(spec, pi)
    _, q_tab = spec.switch.mark_table()
    regimes = range(spec.n_regimes) if regimes is None else regimes
    for a in regimes:
        x = jump_exposures(spec, policy[a], a)
        bad = np.flatnonzero(1.0 + x.markov <= 0)
        if bad.size:
            raise AdmissibilityError(f"markov factor 1 + pi_j sigma_j <= 0 in regime {a + 1} for j={bad[0] + 1}")
        bad = np.flatnonzero(1.0 + x.levy <= 0)
        if bad.size:
            raise AdmissibilityError(f"levy factor 1 + y <= 0 in regime {a + 1} for mark {bad[0] + 1}")
        bad = np.argwhere((1.0 + x.switch <= 0) & (q_tab > 0))
        if bad.size:
            i, m = bad[0]
            raise AdmissibilityError(f"switch factor 1 + z <= 0 in regime {a + 1} entering {i + 1}, mark {m + 1}")


def is_admissible(spec: MarketSpec, pi, regimes=None) -> bool:
    try:
        check_admissible(spec, pi, regimes)
    except AdmissibilityError:
        return False
    return True


def _excess_return(spec: MarketSpec, w: PortfolioWeights, a: int) -> float:
    r = spec.r[a]
    out = w.pi0 * (spec.mu0[a] - r) + w.pij @ (spec.mu_markov[:, a] - r)
    out += w.pik @ (spec.mu_power[: w.K - 1, a] - r)
    out += np.sum(w.pil * (spec.mu_impulse[:, : w.L, a] - r))
    return float(out)


def _log_drift(spec: MarketSpec, w: PortfolioWeights, a: int, x: JumpExposures) -> float:
    lam = spec.offdiag_intensity[a]
    _, q_tab = spec.switch.mark_table()
    comp = lam @ x.markov + spec.levy.intensity * spec.levy.probs @ x.levy + lam @ (q_tab * x.switch).sum(axis=1)
    return spec.r[a] + _excess_return(spec, w, a) - 0.5 * (w.pi0 * spec.sigma0[a]) ** 2 - comp


def log_wealth_functional(spec: MarketSpec, pi, z0: float = 1.0) -> PathFunctional:
    """``log R`` as a functional of the path statistics."""
    if not z0 > 0:
        raise SpecError("z0", "initial wealth must be > 0")
    policy = as_policy(spec, pi)
    check_admissible(spec, policy)
    n = spec.n_regimes
    off = ~np.eye(n, dtype=bool)
    ms, ml = spec.switch.max_marks, spec.levy.n_marks
    drift, vol = np.zeros(n), np.zeros(n)
    sw, pois = np.zeros((n, n, ms)), np.zeros((n, ml))
    for a, w in enumerate(policy):
        x = jump_exposures(spec, w, a)
        drift[a] = _log_drift(spec, w, a, x)
        vol[a] = w.pi0 * spec.sigma0[a]
        pois[a] = np.log1p(x.levy)
        sw[a] = np.log1p(x.markov)[:, None] + np.log1p(x.switch)
        sw[a][~off[a]] = 0.0
    return PathFunctional(float(np.log(z0)), drift, vol, sw, pois)


def simulate_wealth(spec: MarketSpec, pi, path: ScenarioPath, z0: float = 1.0) -> WealthPath:
    """Wealth on the nodes of ``path`` from the exact exponential solution."""
    f = log_wealth_functional(spec, pi, z0)
    return WealthPath(path.time, f.exp(path.stats)[0])


def expected_utility_mc(spec: MarketSpec, pi, util: UtilitySpec, z0: float, horizon: float, n_paths: int,
                        seed: int, threads: int = 1) -> tuple[float, float]:
    """Monte-Carlo mean and standard error of ``U(R(horizon))``."""
    if n_paths < MIN_MC_PATHS:
        raise SpecError("n_paths", f"at least {MIN_MC_PATHS} paths are required")
    f = log_wealth_functional(spec, pi, z0)
    st = simulate_statistics(spec.chain, spec.levy, spec.switch, [horizon], n_paths, seed, threads)
    log_r = f.linear(st)[:, 0]
    u = log_r if util.kind == "log" else np.exp(util.alpha * log_r)
    mean, se = mean_and_stderr(u)
    if np.ptp(u) == 0.0:
        se = 0.0
    return float(mean), float(se)


def regime_log_rate(spec: MarketSpec, w: PortfolioWeights, regime: int) -> float:
    """Expected growth rate of ``log R`` while the chain sits in ``regime``."""
    check_admissible(spec, [w] * spec.n_regimes, [regime])
    a = regime
    x = jump_exposures(spec, w, a)
    lam = spec.offdiag_intensity[a]
    _, q_tab = spec.switch.mark_table()
    jumps = lam @ np.log1p(x.markov) + spec.levy.intensity * spec.levy.probs @ np.log1p(x.levy)
    jumps += lam @ (q_tab * np.log1p(x.switch)).sum(axis=1)
    return float(_log_drift(spec, w, a, x) + jumps)


def regime_power_rate(spec: MarketSpec, w: PortfolioWeights, regime: int, alpha: float) -> float:
    """Power-utility rate with Markovian and switch-mark jumps treated as separate terms.

    ``alpha (r + pi.(mu - r)) + alpha (alpha - 1) pi0**2 sigma0**2 / 2``
    plus ``(1 + x)**alpha - 1 - alpha x`` integrated against the intensity of
    every jump exposure ``x``.
    """
    check_admissible(spec, [w] * spec.n_regimes, [regime])
    a = regime
    x = jump_exposures(spec, w, a)
    lam = spec.offdiag_intensity[a]
    _, q_tab = spec.switch.mark_table()

    def g(e):
        return np.power(1.0 + e, alpha) - 1.0 - alpha * e

    rate = alpha * (spec.r[a] + _excess_return(spec, w, a))
    rate += 0.5 * alpha * (alpha - 1.0) * (w.pi0 * spec.sigma0[a]) ** 2
    rate += lam @ g(x.markov) + spec.levy.intensity * spec.levy.probs @ g(x.levy)
    rate += lam @ (q_tab * g(x.switch)).sum(axis=1)
    return float(rate)


def _initial(spec: MarketSpec, initial) -> np.ndarray:
    if initial is None:
        return spec.chain.initial_distribution
    if np.ndim(initial) == 0:
        p0 = np.zeros(spec.n_regimes)
        p0[int(initial)] = 1.0
        return p0
    return np.asarray(initial, dtype=float)


def deterministic_expected_log(spec: MarketSpec, pi, z0: float = 1.0, horizon: float = 1.0, initial=None,
                               util: UtilitySpec | None = None) -> float:
    """``E[log R(horizon)]`` from per-regime rates and expected occupation times.

    Parameters
    ----------
    initial : int or array_like, optional
        Starting regime or distribution; defaults to the chain's own.
    util : UtilitySpec, optional
        Only log utility is supported; power utility raises ``NotImplementedError``
        because the wealth level does not factor out of its expectation.
    """
    if util is not None and util.kind != "log":
        raise NotImplementedError("the deterministic objective is regime-local only for log utility")
    if not z0 > 0:
        raise SpecError("z0", "initial wealth must be > 0")
    policy = as_policy(spec, pi)
    tau = occupation_expectation(spec.chain.with_initial(_initial(spec, initial)), horizon)
    rates = np.array([regime_log_rate(spec, w, a) for a, w in enumerate(policy)])
    return float(np.log(z0) + rates @ tau)


def expected_power_exact(spec: MarketSpec, pi, alpha: float, z0: float = 1.0, horizon: float = 1.0,
                         initial=None) -> float:
    """Exact ``E[R(horizon)**alpha]`` by the Feynman-Kac matrix exponential.

    ``R**alpha`` is multiplicative over regime sojourns and transitions, so its
    expectation is ``z0**alpha p0 exp(T A) 1`` with ``A[a, a] = lambda_aa + g_a``
    and ``A[a, j] = lambda_aj E[((1 + x_j)(1 + z))**alpha]``.
    """
    policy = as_policy(spec, pi)
    check_admissible(spec, policy)
    n = spec.n_regimes
    lam = spec.chain.intensity
    _, q_tab = spec.switch.mark_table()
    gen = np.zeros((n, n))
    for a, w in enumerate(policy):
        x = jump_exposures(spec, w, a)
        sig = w.pi0 * spec.sigma0[a]
        gen[a, a] = lam[a, a] + alpha * _log_drift(spec, w, a, x) + 0.5 * (alpha * sig) ** 2
        gen[a, a] += spec.levy.intensity * spec.levy.probs @ (np.power(1.0 + x.levy, alpha) - 1.0)
        for j in range(n):
            if j != a:
                fac = (1.0 + x.markov[j]) * (1.0 + x.switch[j])
                gen[a, j] = lam[a, j] * (q_tab[j] @ np.power(fac, alpha))
    p0 = _initial(spec, initial)
    return float(z0**alpha * p0 @ expm(horizon * gen) @ np.ones(n))


@dataclass(frozen=True)
class TruncationReport:
    objective_low: float
    objective_high: float
    difference: float
    monotone: bool


def truncation_diagnostic(objective_low: float, objective_high: float, tol: float = MONOTONE_TOL) -> TruncationReport:
    """Check that the optimal objective does not drop when the truncation order grows."""
    diff = float(objective_high - objective_low)
    return TruncationReport(float(objective_low), float(objective_high), diff, diff >= -tol)


def objective_csv(rows) -> str:
    """CSV with columns regime, K, L, objective, stderr from matching tuples (regime 1-based)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["regime", "K", "L", "objective", "stderr"])
    for regime, K, L, obj, se in rows:
        w.writerow([int(regime), int(K), int(L), repr(float(obj)), repr(float(se))])
    return buf.getvalue()
