"""Optimal constant-proportion strategies for log and power utility.

While the chain sits in regime ``a`` the expected-utility rate of a strategy
``pi`` depends only on ``pi`` and regime ``a``:

* log: ``r + pi.e - sigma0**2 pi0**2 / 2 + sum_rows w (log(1 + y) - y)``,
* power: ``alpha (r + pi.e + (alpha - 1) sigma0**2 pi0**2 / 2)
  + sum_rows w ((1 + y)**alpha - 1 - alpha y)``,

where ``e`` are the excess returns and every jump exposure ``y = A pi`` is a
row of a design matrix with intensity weight ``w``. Rows are: one per
Markovian jump ``a -> j`` (``sigma_j`` on ``pi_j``), one per Lévy mark
(``gamma`` on ``pi0``, ``sigma^(k) gamma**k`` on ``pi^(k)``), and one per switch
mark ``u`` into ``i != a`` (``u`` on ``pi0``, ``sigma_i^(l) u**l`` on
``pi_i^(l)``). All jump integrals are finite sums.

The first-order conditions are the analytic gradient of this rate. Weights on
columns with no exposure and no excess return are flat directions and are held
at zero.
"""

from __future__ import annotations

import csv
import io
from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import ConvergenceError, SpecError
from .market import MarketSpec
from .wealth import AdmissibilityError, PortfolioWeights, UtilitySpec

MAX_GRID_POINTS = 10**8
GRID_CHUNK = 1 << 16
ORIGINAL_TOL = 1e-12


def coordinate_names(n_regimes: int, K: int, L: int) -> list[str]:
    """Names of the weight coordinates in vector order."""
    names = ["pi0"] + [f"pi_{j + 1}" for j in range(n_regimes)]
    names += [f"pi^({k})" for k in range(2, K + 1)]
    names += [f"pi_{i + 1}^({l})" for i in range(n_regimes) for l in range(1, L + 1)]
    return names


@dataclass(frozen=True, eq=False)
class RegimeModel:
    """Expected-utility rate of constant weights in one regime.

    Attributes
    ----------
    excess : ndarray, shape (D,)
    design : ndarray, shape (R, D)
        Jump exposures ``y = design @ pi``.
    weights : ndarray, shape (R,)
        Intensity of each exposure row.
    """

    spec: MarketSpec
    regime: int
    utility: UtilitySpec
    K: int = 1
    L: int = 0
    z0: float = 1.0
    excess: np.ndarray = field(init=False, repr=False)
    design: np.ndarray = field(init=False, repr=False)
    weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        spec, a, K, L = self.spec, self.regime, self.K, self.L
        spec.check_orders(K, L)
        if not 0 <= a < spec.n_regimes:
            raise SpecError("regime", f"must be in 1..{spec.n_regimes}")
        if not self.z0 > 0:
            raise SpecError("z0", "initial wealth must be > 0")
        n = spec.n_regimes
        d = 1 + n + (K - 1) + n * L
        r = spec.r[a]
        excess = np.concatenate([
            [spec.mu0[a] - r],
            spec.mu_markov[:, a] - r,
            spec.mu_power[: K - 1, a] - r,
            (spec.mu_impulse[:, :L, a] - r).ravel(),
        ])
        rows, wts = [], []
        lam = spec.chain.intensity[a]
        for j in range(n):
            if j != a:
                row = np.zeros(d)
                row[1 + j] = spec.sigma_markov[j, a]
                rows.append(row)
                wts.append(lam[j])
        gamma = spec.levy.gamma[a]
        for m in range(spec.levy.n_marks):
            row = np.zeros(d)
            row[0] = gamma[m]
            for k in range(2, K + 1):
                row[1 + n + k - 2] = spec.sigma_power[k - 2, a] * gamma[m] ** k
            rows.append(row)
            wts.append(spec.levy.intensity * spec.levy.probs[m])
        for i in range(n):
            if i == a:
                continue
            for u, q in zip(spec.switch.marks[i], spec.switch.probs[i]):
                row = np.zeros(d)
                row[0] = u
                for l in range(1, L + 1):
                    row[n + K + i * L + l - 1] = spec.sigma_impulse[i, l - 1, a] * u**l
                rows.append(row)
                wts.append(lam[i] * q)
        object.__setattr__(self, "excess", excess)
        object.__setattr__(self, "design", np.array(rows).reshape(len(rows), d))
        object.__setattr__(self, "weights", np.array(wts, dtype=float))

    @property
    def dim(self) -> int:
        return self.excess.size

    @property
    def names(self) -> list[str]:
        return coordinate_names(self.spec.n_regimes, self.K, self.L)

    @property
    def _scale(self) -> float:
        return 1.0 if self.utility.kind == "log" else self.z0**self.utility.alpha

    def exposures(self, v: np.ndarray) -> np.ndarray:
        return v @ self.design.T

    def admissible(self, v: np.ndarray) -> np.ndarray:
        """Whether every exposure row keeps ``1 + y > 0``; vectorised over leading axes."""
        return np.all(1.0 + self.exposures(v) > 0.0, axis=-1)

    def _check(self, v: np.ndarray) -> None:
        if not self.admissible(v):
            raise AdmissibilityError(f"weights not admissible in regime {self.regime + 1}")

    def objective(self, v) -> np.ndarray:
        """Rate at weights ``v``; ``-inf`` where inadmissible. Vectorised over leading axes."""
        v = np.asarray(v, dtype=float)
        y = self.exposures(v)
        ok = np.all(1.0 + y > 0.0, axis=-1)
        y = np.where(ok[..., None], y, 0.0)
        s2 = self.spec.sigma0[self.regime] ** 2
        r = self.spec.r[self.regime]
        lin = r + v @ self.excess
        if self.utility.kind == "log":
            val = np.log(self.z0) + lin - 0.5 * s2 * v[..., 0] ** 2 + (np.log1p(y) - y) @ self.weights
        else:
            al = self.utility.alpha
            val = al * (lin + 0.5 * (al - 1.0) * s2 * v[..., 0] ** 2)
            val = val + (np.power(1.0 + y, al) - 1.0 - al * y) @ self.weights
            val = self._scale * val
        return np.where(ok, val, -np.inf)

    def gradient(self, v) -> np.ndarray:
        """Analytic gradient of the rate at an admissible point."""
        v = np.asarray(v, dtype=float)
        self._check(v)
        y = self.exposures(v)
        s2 = self.spec.sigma0[self.regime] ** 2
        g = self.excess.copy()
        if self.utility.kind == "log":
            g[0] -= s2 * v[0]
            g += self.design.T @ (self.weights * (1.0 / (1.0 + y) - 1.0))
            return g
        al = self.utility.alpha
        g[0] += (al - 1.0) * s2 * v[0]
        g = al * g + self.design.T @ (self.weights * al * (np.power(1.0 + y, al - 1.0) - 1.0))
        return self._scale * g

    def active(self) -> np.ndarray:
        """Columns with a jump exposure, plus the stock."""
        act = np.any((self.design != 0.0) & (self.weights[:, None] > 0.0), axis=0)
        act[0] = True
        return act


@dataclass(frozen=True, eq=False)
class FocProblem:
    """First-order conditions of one regime.

    ``z0`` scales the power-utility objective by ``z0**alpha`` and shifts the
    log objective by ``log z0``; the optimal weights do not depend on it.
    """

    spec: MarketSpec
    regime: int
    utility: UtilitySpec
    K: int = 1
    L: int = 0
    z0: float = 1.0
    max_iter: int = 100
    tol: float = 1e-10
    damping: float = 0.5
    fd_step: float = 1e-7

    def __post_init__(self):
        if not self.tol > 0:
            raise SpecError("tol", "must be > 0")
        if not 0.0 < self.damping < 1.0:
            raise SpecError("damping", "must be in (0, 1)")
        if self.max_iter < 1:
            raise SpecError("max_iter", "must be >= 1")

    def model(self) -> RegimeModel:
        return RegimeModel(self.spec, self.regime, self.utility, self.K, self.L, self.z0)


@dataclass(frozen=True, eq=False)
class FocSolution:
    weights: PortfolioWeights
    residual_norm: float
    iterations: int
    converged: bool
    objective: float
    message: str = ""


def foc_residual(problem: FocProblem, pi: PortfolioWeights) -> np.ndarray:
    """Gradient of the regime rate, ordered as ``PortfolioWeights.to_vector``."""
    if (pi.K, pi.L, pi.n_regimes) != (problem.K, problem.L, problem.spec.n_regimes):
        raise ValueError("weights do not match the problem's orders")
    return problem.model().gradient(pi.to_vector())


def merton_closed_form(spec: MarketSpec, regime: int, utility: UtilitySpec) -> float:
    """No-jump optimal stock weight ``(mu0 - r) / ((1 - alpha) sigma0**2)``, ``alpha = 0`` for log."""
    a = regime
    risk = 1.0 if utility.kind == "log" else 1.0 - utility.alpha
    return float((spec.mu0[a] - spec.r[a]) / (risk * spec.sigma0[a] ** 2))


def closed_form_markov_weight(spec: MarketSpec, regime: int, j: int, utility: UtilitySpec) -> float:
    """Stationary weight of ``S_j`` alone, solving its own first-order condition.

    Log: ``(mu_j - r) / ((r - mu_j) sigma_j + lambda_j sigma_j**2)``.
    Power: ``((1 - (mu_j - r) / (lambda_j sigma_j))**(1 / (alpha - 1)) - 1) / sigma_j``.
    Returns NaN where the formula has no real value, and raises for ``j == regime``.
    """
    a = regime
    if j == a:
        raise ValueError("S_j has no jump exposure while the chain sits in j")
    e = spec.mu_markov[j, a] - spec.r[a]
    sig = spec.sigma_markov[j, a]
    lam = spec.chain.intensity[a, j]
    if utility.kind == "log":
        return float(e / (-e * sig + lam * sig**2))
    base = 1.0 - e / (lam * sig)
    if base <= 0:
        return float("nan")
    return float((base ** (1.0 / (utility.alpha - 1.0)) - 1.0) / sig)


def _fd_jacobian(grad, v: np.ndarray, g: np.ndarray, step: float, admissible) -> np.ndarray:
    d = v.size
    jac = np.empty((d, d))
    for c in range(d):
        e = np.zeros(d)
        e[c] = step
        if admissible(v + e):
            jac[:, c] = (grad(v + e) - g) / step
        else:
            jac[:, c] = (g - grad(v - e)) / step
    return jac


def _newton(grad, admissible, v: np.ndarray, problem: FocProblem):
    """Damped Newton on ``grad = 0``; returns (point, residual norm, iterations, converged)."""
    g = grad(v)
    norm = float(np.linalg.norm(g))
    it = 0
    while norm > problem.tol and it < problem.max_iter:
        it += 1
        jac = _fd_jacobian(grad, v, g, problem.fd_step, admissible)
        step = -np.linalg.lstsq(jac, g, rcond=None)[0]
        t = 1.0
        while t > 1e-14:
            cand = v + t * step
            if admissible(cand):
                g_c = grad(cand)
                n_c = float(np.linalg.norm(g_c))
                if n_c < norm:
                    v, g, norm = cand, g_c, n_c
                    break
            t *= problem.damping
        else:
            return v, norm, it, False
    converged = norm <= problem.tol
    if converged:
        for _ in range(3):
            jac = _fd_jacobian(grad, v, g, problem.fd_step, admissible)
            cand = v - np.linalg.lstsq(jac, g, rcond=None)[0]
            if not admissible(cand):
                break
            g_c = grad(cand)
            n_c = float(np.linalg.norm(g_c))
            if n_c >= norm:
                break
            v, g, norm = cand, g_c, n_c
    return v, norm, it, converged


def solve_enlarged(problem: FocProblem) -> FocSolution:
    """Damped Newton on the first-order conditions of the enlarged market.

    The Jacobian is differenced forward from the analytic gradient; the line
    search halves the step until the iterate is admissible and the residual norm
    drops. A flat direction with nonzero excess return makes the rate unbounded;
    the solution is then returned unconverged.
    """
    model = problem.model()
    n, K, L = problem.spec.n_regimes, problem.K, problem.L
    act = model.active()
    v = np.zeros(model.dim)
    flat = np.flatnonzero(~act & (model.excess != 0.0))
    if flat.size:
        name = model.names[flat[0]]
        return FocSolution(PortfolioWeights.from_vector(v, n, K, L), float("inf"), 0, False, float("nan"),
                           f"objective unbounded along {name}: no jump exposure but nonzero excess return")
    idx = np.flatnonzero(act)

    def embed(x):
        full = np.zeros(model.dim)
        full[idx] = x
        return full

    def grad(x):
        return model.gradient(embed(x))[idx]

    def admissible(x):
        return bool(model.admissible(embed(x)))

    x = np.zeros(idx.size)
    x[0] = merton_closed_form(problem.spec, problem.regime, problem.utility)
    while not admissible(x):
        x[0] *= 0.5
    x, norm, it, ok = _newton(grad, admissible, x, problem)
    full = embed(x)
    msg = "" if ok else f"residual {norm!r} above tolerance after {it} iterations"
    return FocSolution(PortfolioWeights.from_vector(full, n, K, L), norm, it, ok,
                       float(model.objective(full)), msg)


def _original_rows(spec: MarketSpec, regime: int) -> tuple[np.ndarray, np.ndarray]:
    model = RegimeModel(spec, regime, UtilitySpec(), 1, 0)
    keep = model.design[:, 0] != 0.0
    return model.design[keep, 0], model.weights[keep]


def original_interval(spec: MarketSpec, regime: int) -> tuple[float, float]:
    """Open interval of stock weights keeping ``1 + pi0 x > 0`` for every jump ``x``."""
    x, _ = _original_rows(spec, regime)
    lo = max([-1.0 / v for v in x if v > 0], default=-np.inf)
    hi = min([-1.0 / v for v in x if v < 0], default=np.inf)
    return lo, hi


def original_foc(spec: MarketSpec, regime: int, utility: UtilitySpec, pi0: float) -> tuple[float, float]:
    """First-order condition of the stock-only market and its derivative at ``pi0``."""
    x, w = _original_rows(spec, regime)
    a = regime
    e = spec.mu0[a] - spec.r[a]
    s2 = spec.sigma0[a] ** 2
    f = 1.0 + pi0 * x
    if np.any(f <= 0):
        raise AdmissibilityError(f"stock weight {pi0!r} not admissible in regime {a + 1}")
    if utility.kind == "log":
        return (float(e - s2 * pi0 + w @ (x / f - x)), float(-s2 - w @ (x**2 / f**2)))
    al = utility.alpha
    val = al * (e + (al - 1.0) * s2 * pi0) + w @ (al * x * (f ** (al - 1.0) - 1.0))
    der = al * (al - 1.0) * (s2 + w @ (x**2 * f ** (al - 2.0)))
    return float(val), float(der)


def solve_original(spec: MarketSpec, regime: int, utility: UtilitySpec) -> float:
    """Optimal stock weight when only the money market and the stock trade.

    The condition is strictly decreasing on the admissible interval, so a sign
    change is bracketed, located by Brent's method and polished by Newton steps.
    """
    lo, hi = original_interval(spec, regime)
    if not lo < hi:
        raise ConvergenceError(f"no admissible stock weight in regime {regime + 1}")

    def foc(p):
        return original_foc(spec, regime, utility, p)[0]

    x0 = min(max(merton_closed_form(spec, regime, utility), lo), hi)
    x0 = 0.0 if not np.isfinite(x0) or x0 in (lo, hi) else x0
    if foc(x0) == 0.0:
        return float(x0)
    if foc(x0) > 0:
        a = x0
        b = x0 + 1.0 if not np.isfinite(hi) else 0.5 * (x0 + hi)
        while foc(b) > 0:
            a = b
            b = 2.0 * b - x0 + 1.0 if not np.isfinite(hi) else 0.5 * (b + hi)
            if np.isfinite(hi) and hi - b < 1e-300:
                raise ConvergenceError(f"no sign change of the condition in regime {regime + 1}")
    else:
        b = x0
        a = x0 - 1.0 if not np.isfinite(lo) else 0.5 * (x0 + lo)
        while foc(a) < 0:
            b = a
            a = 2.0 * a - x0 - 1.0 if not np.isfinite(lo) else 0.5 * (a + lo)
            if np.isfinite(lo) and a - lo < 1e-300:
                raise ConvergenceError(f"no sign change of the condition in regime {regime + 1}")
    p = brentq(foc, a, b, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    for _ in range(5):
        val, der = original_foc(spec, regime, utility, p)
        if abs(val) < ORIGINAL_TOL * 1e-3 or der == 0.0:
            break
        cand = p - val / der
        if not lo < cand < hi or abs(foc(cand)) >= abs(val):
            break
        p = cand
    if abs(foc(p)) >= ORIGINAL_TOL:
        raise ConvergenceError(f"stock-only condition residual {foc(p)!r} in regime {regime + 1}")
    return float(p)


@dataclass(frozen=True, eq=False)
class OracleResult:
    weights: PortfolioWeights
    objective: float
    steps: dict
    n_points: int


def grid_oracle(spec: MarketSpec, regime: int, utility: UtilitySpec, bounds: Mapping, points: int = 41,
                K: int = 1, L: int = 0, z0: float = 1.0) -> OracleResult:
    """Exhaustive maximisation of the regime rate over a rectangular grid.

    Parameters
    ----------
    bounds : mapping of coordinate name to (low, high)
        Coordinates not listed are held at zero. Names follow
        ``coordinate_names``, e.g. ``"pi0"``, ``"pi_2"``, ``"pi^(2)"``, ``"pi_1^(1)"``.
    """
    model = RegimeModel(spec, regime, utility, K, L, z0)
    names = model.names
    for name in bounds:
        if name not in names:
            raise KeyError(f"unknown coordinate {name!r}")
    if points < 2:
        raise ValueError("points must be >= 2")
    total = points ** len(bounds)
    if total > MAX_GRID_POINTS:
        raise ValueError(f"grid of {total} points exceeds the {MAX_GRID_POINTS} guard")
    cols = [names.index(n) for n in bounds]
    axes = [np.linspace(lo, hi, points) for lo, hi in bounds.values()]
    best, best_v = -np.inf, np.zeros(model.dim)
    for start in range(0, total, GRID_CHUNK):
        flat = np.arange(start, min(start + GRID_CHUNK, total))
        v = np.zeros((flat.size, model.dim))
        for c, ax, sub in zip(cols, axes, np.unravel_index(flat, (points,) * len(cols))):
            v[:, c] = ax[sub]
        obj = model.objective(v)
        k = int(np.argmax(obj))
        if obj[k] > best:
            best, best_v = float(obj[k]), v[k]
    steps = {n: (hi - lo) / (points - 1) for n, (lo, hi) in bounds.items()}
    n = spec.n_regimes
    return OracleResult(PortfolioWeights.from_vector(best_v, n, K, L), best, steps, total)


def solution_csv(rows) -> str:
    """CSV report from ``(regime, utility, K, L, FocSolution, oracle_gap)`` rows.

    Weight columns follow the largest orders present; missing weights are blank.
    ``oracle_gap`` may be None.
    """
    rows = list(rows)
    n = rows[0][4].weights.n_regimes if rows else 0
    k_max = max((r[2] for r in rows), default=1)
    l_max = max((r[3] for r in rows), default=0)
    names = coordinate_names(n, k_max, l_max)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["regime", "utility", "K", "L"] + names + ["residual_norm", "objective", "converged", "oracle_gap"])
    for regime, util, K, L, sol, gap in rows:
        vals = dict(zip(coordinate_names(n, K, L), sol.weights.to_vector()))
        w.writerow([int(regime) + 1, util.label, int(K), int(L)]
                   + [repr(float(vals[c])) if c in vals else "" for c in names]
                   + [repr(float(sol.residual_norm)), repr(float(sol.objective)), str(bool(sol.converged)).lower(),
                      "" if gap is None else repr(float(gap))])
    return buf.getvalue()
