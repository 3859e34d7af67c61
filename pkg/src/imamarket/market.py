"""Regime-switching jump-diffusion market and its completion securities.

Traded assets:

* ``B``: money market, ``dB = r B dt``.
* ``S0``: stock with diffusion, Lévy jumps and a jump at every regime switch.
* ``S_j`` (j = 1..N): Markovian jump security driven by the compensated count of
  entries into regime ``j``.
* ``S^(k)`` (k = 2..K): power-jump security driven by the compensated sum of
  ``gamma**k`` over Lévy events.
* ``S_{i}^{(l)}`` (i = 1..N, l = 1..L): impulse security driven by the
  compensated sum of ``u**l`` over switch marks on entry into ``i``.

All coefficients are frozen at the pre-jump regime. Between events every
log-price is affine in the occupation times and the regime-split Brownian
integral, so prices are evaluated exactly at every grid node.

Array conventions (0-based regimes): ``mu_markov[j, i]`` is the drift of
``S_j`` in regime ``i``; ``mu_power[k - 2, i]``; ``mu_impulse[i, l - 1, j]``
is the drift of ``S_i^(l)`` in regime ``j``. The same layout holds for the
volatilities.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .chain import ChainPath, RegimeChain, _frozen, simulate_chain
from .errors import SpecError
from .jumps import JumpEventLog, LevyJumpSpec, SwitchJumpSpec, simulate_jumps
from .montecarlo import PathFunctional, PathStatistics

DEFAULT_HORIZON = 1.0
DEFAULT_STEPS = 2000
NO_ARBITRAGE_TOL = 1e-12


def markov_name(j: int) -> str:
    return f"S_{j + 1}"


def power_name(k: int) -> str:
    return f"S^({k})"


def impulse_name(i: int, l: int) -> str:
    return f"S_{{{i + 1}}}^{{({l})}}"


def _vector(value, n: int, name: str) -> np.ndarray:
    v = np.asarray(value, dtype=float)
    if v.ndim == 0:
        v = np.full(n, float(v))
    if v.shape != (n,):
        raise SpecError(name, f"must have length {n}")
    if not np.all(np.isfinite(v)):
        raise SpecError(name, "entries must be finite")
    return v


def _block(value, shape: tuple, name: str, positive: bool = False) -> np.ndarray:
    v = np.asarray(value, dtype=float)
    try:
        v = np.broadcast_to(v, shape).copy()
    except ValueError:
        raise SpecError(name, f"must have shape {shape}") from None
    if not np.all(np.isfinite(v)):
        raise SpecError(name, "entries must be finite")
    if positive and np.any(v <= 0):
        raise SpecError(name, "entries must be > 0")
    return v


@dataclass(frozen=True, eq=False)
class MarketSpec:
    """Complete set of market coefficients.

    Parameters
    ----------
    chain, levy, switch :
        Regime chain, Lévy jump component and switch-mark laws.
    r, mu0, sigma0 : array_like, shape (N,)
        Short rate, stock drift and stock volatility per regime.
    s0 : float
        Initial stock price.
    mu_markov, sigma_markov : array_like, shape (N, N)
        Markovian jump securities, ``[asset j, regime i]``. Defaults: drift equal
        to the short rate, unit volatility.
    s_markov : array_like, shape (N,)
    mu_power, sigma_power : array_like, shape (K_max - 1, N)
        Power-jump securities for orders ``k = 2..K_max``. Default: none.
    s_power : array_like, shape (K_max - 1,)
    mu_impulse, sigma_impulse : array_like, shape (N, L_max, N)
        Impulse securities ``[asset i, order l - 1, regime j]``. Default: none.
    s_impulse : array_like, shape (N, L_max)
    require_premium : bool
        Enforce a positive stock risk premium ``mu0 > r`` in every regime.
    """

    chain: RegimeChain
    levy: LevyJumpSpec
    switch: SwitchJumpSpec
    r: np.ndarray
    mu0: np.ndarray
    sigma0: np.ndarray
    s0: float = 1.0
    mu_markov: np.ndarray | None = None
    sigma_markov: np.ndarray | None = None
    s_markov: np.ndarray | None = None
    mu_power: np.ndarray | None = None
    sigma_power: np.ndarray | None = None
    s_power: np.ndarray | None = None
    mu_impulse: np.ndarray | None = None
    sigma_impulse: np.ndarray | None = None
    s_impulse: np.ndarray | None = None
    require_premium: bool = field(default=True, repr=False)

    def __post_init__(self):
        n = self.chain.n_regimes
        if self.levy.n_regimes != n:
            raise SpecError("levy.gamma", f"needs {n} rows, one per regime")
        if self.switch.n_regimes != n:
            raise SpecError("switch.marks", f"needs {n} entries, one per regime")
        r = _vector(self.r, n, "r")
        mu0 = _vector(self.mu0, n, "mu0")
        sigma0 = _vector(self.sigma0, n, "sigma0")
        if np.any(sigma0 <= 0):
            raise SpecError("sigma0", "must be > 0 in every regime")
        if self.require_premium and np.any(mu0 <= r):
            raise SpecError("mu0", "must exceed r in every regime")
        if not (np.isfinite(self.s0) and self.s0 > 0):
            raise SpecError("s0", "must be > 0")

        mu_m = _block(r[None, :] if self.mu_markov is None else self.mu_markov, (n, n), "mu_markov")
        sig_m = _block(1.0 if self.sigma_markov is None else self.sigma_markov, (n, n), "sigma_markov", True)
        s_m = _block(1.0 if self.s_markov is None else self.s_markov, (n,), "s_markov", True)

        if self.mu_power is None:
            mu_p = np.zeros((0, n))
        else:
            mu_p = np.atleast_2d(np.asarray(self.mu_power, dtype=float))
        kk = mu_p.shape[0]
        mu_p = _block(mu_p, (kk, n), "mu_power")
        sig_p = _block(np.ones((kk, n)) if self.sigma_power is None else self.sigma_power, (kk, n), "sigma_power", True)
        s_p = _block(1.0 if self.s_power is None else self.s_power, (kk,), "s_power", True)

        if self.mu_impulse is None:
            mu_i = np.zeros((n, 0, n))
        else:
            mu_i = np.asarray(self.mu_impulse, dtype=float)
            if mu_i.ndim != 3:
                raise SpecError("mu_impulse", "must have shape (N, L_max, N)")
        ll = mu_i.shape[1]
        mu_i = _block(mu_i, (n, ll, n), "mu_impulse")
        sig_i = _block(np.ones((n, ll, n)) if self.sigma_impulse is None else self.sigma_impulse, (n, ll, n), "sigma_impulse", True)
        s_i = _block(1.0 if self.s_impulse is None else self.s_impulse, (n, ll), "s_impulse", True)

        gamma = self.levy.gamma
        for k in range(2, kk + 2):
            if np.any(1.0 + sig_p[k - 2][:, None] * gamma**k <= 0):
                raise SpecError("sigma_power", f"order {k}: jump factor 1 + sigma*gamma^k must stay > 0")
        u_tab, q_tab = self.switch.mark_table()
        for l in range(1, ll + 1):
            fac = 1.0 + sig_i[:, l - 1, :][:, :, None] * (u_tab**l)[:, None, :]
            if np.any(fac[np.broadcast_to(q_tab[:, None, :] > 0, fac.shape)] <= 0):
                raise SpecError("sigma_impulse", f"order {l}: jump factor 1 + sigma*u^l must stay > 0")

        for name, val in [
            ("r", r), ("mu0", mu0), ("sigma0", sigma0), ("mu_markov", mu_m), ("sigma_markov", sig_m),
            ("s_markov", s_m), ("mu_power", mu_p), ("sigma_power", sig_p), ("s_power", s_p),
            ("mu_impulse", mu_i), ("sigma_impulse", sig_i), ("s_impulse", s_i),
        ]:
            object.__setattr__(self, name, _frozen(val))
        object.__setattr__(self, "s0", float(self.s0))

    @property
    def n_regimes(self) -> int:
        return self.chain.n_regimes

    @property
    def k_max(self) -> int:
        return self.mu_power.shape[0] + 1

    @property
    def l_max(self) -> int:
        return self.mu_impulse.shape[1]

    @property
    def offdiag_intensity(self) -> np.ndarray:
        lam = self.chain.intensity.copy()
        np.fill_diagonal(lam, 0.0)
        return lam

    def stock_compensator(self) -> np.ndarray:
        """Per-regime drift removed from ``S0`` by its compensated jump terms."""
        return self.levy.compensator_rate(1) + self.offdiag_intensity @ self.switch.moment(1)

    def replace(self, **changes) -> "MarketSpec":
        kwargs = {f: getattr(self, f) for f in self.__dataclass_fields__}
        kwargs.update(changes)
        return MarketSpec(**kwargs)

    def check_orders(self, K: int, L: int) -> None:
        if not 1 <= K <= self.k_max:
            raise SpecError("K", f"must be in 1..{self.k_max}")
        if not 0 <= L <= self.l_max:
            raise SpecError("L", f"must be in 0..{self.l_max}")


def asset_names(spec: MarketSpec, K: int | None = None, L: int | None = None) -> list[str]:
    """Asset names in CSV column order."""
    K = spec.k_max if K is None else K
    L = spec.l_max if L is None else L
    n = spec.n_regimes
    names = ["B", "S0"] + [markov_name(j) for j in range(n)]
    names += [power_name(k) for k in range(2, K + 1)]
    names += [impulse_name(i, l) for i in range(n) for l in range(1, L + 1)]
    return names


def _zero(spec: MarketSpec) -> PathFunctional:
    return PathFunctional.zero(spec.n_regimes, spec.switch.max_marks, spec.levy.n_marks)


def _parse_name(spec: MarketSpec, name: str):
    n = spec.n_regimes
    if name in ("B", "S0"):
        return (name,)
    for j in range(n):
        if name == markov_name(j):
            return ("markov", j)
    for k in range(2, spec.k_max + 1):
        if name == power_name(k):
            return ("power", k)
    for i in range(n):
        for l in range(1, spec.l_max + 1):
            if name == impulse_name(i, l):
                return ("impulse", i, l)
    raise KeyError(f"unknown asset {name!r}")


def log_price_functional(spec: MarketSpec, name: str) -> PathFunctional:
    """Log-price of asset ``name`` as a functional of the path statistics."""
    key = _parse_name(spec, name)
    f = _zero(spec)
    lam = spec.offdiag_intensity
    n = spec.n_regimes
    off = ~np.eye(n, dtype=bool)
    gamma = spec.levy.gamma
    u_tab, _ = spec.switch.mark_table()
    if key[0] == "B":
        return PathFunctional(0.0, spec.r.copy(), f.vol, f.switch, f.poisson)
    if key[0] == "S0":
        drift = spec.mu0 - 0.5 * spec.sigma0**2 - spec.stock_compensator()
        sw = np.where(off[:, :, None], np.log1p(u_tab)[None, :, :], 0.0)
        return PathFunctional(np.log(spec.s0), drift, spec.sigma0.copy(), sw, np.log1p(gamma))
    if key[0] == "markov":
        j = key[1]
        sig = spec.sigma_markov[j]
        sw = f.switch.copy()
        sw[off[:, j], j, :] = np.log1p(sig[off[:, j]])[:, None]
        drift = spec.mu_markov[j] - sig * lam[:, j]
        return PathFunctional(np.log(spec.s_markov[j]), drift, f.vol, sw, f.poisson)
    if key[0] == "power":
        k = key[1]
        sig = spec.sigma_power[k - 2]
        drift = spec.mu_power[k - 2] - sig * spec.levy.compensator_rate(k)
        pois = np.log1p(sig[:, None] * gamma**k)
        return PathFunctional(np.log(spec.s_power[k - 2]), drift, f.vol, f.switch, pois)
    i, l = key[1], key[2]
    sig = spec.sigma_impulse[i, l - 1]
    drift = spec.mu_impulse[i, l - 1] - sig * spec.switch.moment(l)[i] * lam[:, i]
    sw = f.switch.copy()
    sw[off[:, i], i, :] = np.log1p(sig[off[:, i], None] * (u_tab[i] ** l)[None, :])
    return PathFunctional(np.log(spec.s_impulse[i, l - 1]), drift, f.vol, sw, f.poisson)


def log_discounted_functional(spec: MarketSpec, name: str) -> PathFunctional:
    return log_price_functional(spec, name) - log_price_functional(spec, "B")


def initial_price(spec: MarketSpec, name: str) -> float:
    key = _parse_name(spec, name)
    if key[0] == "B":
        return 1.0
    if key[0] == "S0":
        return spec.s0
    if key[0] == "markov":
        return float(spec.s_markov[key[1]])
    if key[0] == "power":
        return float(spec.s_power[key[1] - 2])
    return float(spec.s_impulse[key[1], key[2] - 1])


@dataclass(frozen=True, eq=False)
class ScenarioPath:
    """One simulated trajectory on a uniform grid merged with all event times.

    Every event time appears twice: a pre-jump node holding left limits and a
    post-jump node holding the values after the jump. Node ``kind`` is 0 for
    grid nodes, 1 for pre-jump nodes and 2 for post-jump nodes.

    Attributes
    ----------
    time, kind, regime : ndarray, shape (G,)
        ``regime`` is the pre-jump regime at pre-jump nodes, ``J(t)`` otherwise.
    brownian : ndarray, shape (G,)
        Cumulative Brownian motion ``W`` at the nodes.
    event, event_mark, event_target : ndarray, shape (G,)
        At post-jump nodes: event type (1 regime switch, 2 Lévy jump), mark
        index, and regime entered; zero elsewhere.
    stats : PathStatistics
        Single-path statistics at every node.
    prices : dict of ndarray
        Price series keyed by asset name.
    """

    spec: MarketSpec
    horizon: float
    dt: float
    K: int
    L: int
    time: np.ndarray
    kind: np.ndarray
    grid_index: np.ndarray
    regime: np.ndarray
    brownian: np.ndarray
    event: np.ndarray
    event_mark: np.ndarray
    event_target: np.ndarray
    stats: PathStatistics
    chain_path: ChainPath
    events: JumpEventLog
    prices: dict

    @property
    def names(self) -> list[str]:
        return asset_names(self.spec, self.K, self.L)

    def price(self, name: str) -> np.ndarray:
        return self.prices[name]

    def coarsen(self, factor: int) -> "ScenarioPath":
        """The same path observed on a grid ``factor`` times coarser.

        Prices at retained nodes are exact functions of the Brownian path and
        events, so dropping grid nodes yields the path a coarser simulation
        would have produced from the same randomness.
        """
        keep = (self.kind != 0) | (self.grid_index % factor == 0) | (self.time == self.horizon)
        st = self.stats
        sub = PathStatistics(
            times=st.times[keep],
            occupation=st.occupation[:, keep],
            brownian=st.brownian[:, keep],
            switch_counts=st.switch_counts[:, keep],
            poisson_counts=st.poisson_counts[:, keep],
            initial_state=st.initial_state,
        )
        gi = np.where(self.grid_index >= 0, self.grid_index // factor, -1)
        return ScenarioPath(
            spec=self.spec, horizon=self.horizon, dt=self.dt * factor, K=self.K, L=self.L,
            time=self.time[keep], kind=self.kind[keep], grid_index=gi[keep], regime=self.regime[keep],
            brownian=self.brownian[keep], event=self.event[keep], event_mark=self.event_mark[keep],
            event_target=self.event_target[keep], stats=sub, chain_path=self.chain_path,
            events=self.events, prices={k: v[keep] for k, v in self.prices.items()},
        )

    def to_csv(self) -> str:
        """CSV text with columns time, regime (1-based), then every price."""
        names = self.names
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time", "regime"] + names)
        cols = [self.prices[n] for n in names]
        for g in range(self.time.size):
            w.writerow([repr(float(self.time[g])), int(self.regime[g]) + 1] + [repr(float(c[g])) for c in cols])
        return buf.getvalue()


def _seeds(seed: int, n: int) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(n)]


def grid_statistics(chain_path: ChainPath, events: JumpEventLog, horizon: float, dt: float,
                    n_switch_marks: int, n_levy_marks: int, rng: np.random.Generator):
    """Node layout and cumulative path statistics on the merged grid."""
    n_steps = max(1, int(np.ceil(horizon / dt - 1e-9)))
    grid = np.minimum(np.arange(n_steps + 1) * dt, horizon)
    ep, pt = chain_path.epochs, events.poisson_times
    ev_time = np.concatenate([ep, pt])
    ev_type = np.concatenate([np.ones(ep.size, int), np.full(pt.size, 2)])
    ev_idx = np.concatenate([np.arange(ep.size), np.arange(pt.size)])

    time = np.concatenate([grid, ev_time, ev_time])
    kind = np.concatenate([np.zeros(grid.size, int), np.ones(ev_time.size, int), np.full(ev_time.size, 2)])
    etype = np.concatenate([np.zeros(grid.size, int), ev_type, ev_type])
    eidx = np.concatenate([np.zeros(grid.size, int), ev_idx, ev_idx])
    gidx = np.concatenate([np.arange(grid.size), np.full(2 * ev_time.size, -1)])
    order = np.lexsort((kind, time))
    time, kind, etype, eidx, gidx = time[order], kind[order], etype[order], eidx[order], gidx[order]

    regime = np.where(kind == 1, chain_path.state_before(time), chain_path.state_at(time))
    post = kind == 2
    event = np.where(post, etype, 0)
    event_target = np.zeros_like(event)
    event_mark = np.zeros_like(event)
    sw = post & (etype == 1)
    lv = post & (etype == 2)
    event_target[sw] = events.switch_targets[eidx[sw]]
    event_mark[sw] = events.switch_marks[eidx[sw]]
    event_mark[lv] = events.poisson_marks[eidx[lv]]

    n_nodes, n_reg = time.size, chain_path.chain.n_regimes
    d_t = np.diff(time)
    d_w = np.sqrt(d_t) * rng.standard_normal(d_t.size)
    onehot = np.eye(n_reg)[regime[:-1]]
    occ = np.zeros((n_nodes, n_reg))
    bw = np.zeros((n_nodes, n_reg))
    occ[1:] = np.cumsum(onehot * d_t[:, None], axis=0)
    bw[1:] = np.cumsum(onehot * d_w[:, None], axis=0)

    sc = np.zeros((n_nodes, n_reg, n_reg, n_switch_marks))
    pc = np.zeros((n_nodes, n_reg, n_levy_marks))
    for g in np.flatnonzero(sw):
        sc[g, regime[g - 1], event_target[g], event_mark[g]] += 1
    for g in np.flatnonzero(lv):
        pc[g, regime[g - 1], event_mark[g]] += 1
    stats = PathStatistics(
        times=time, occupation=occ[None], brownian=bw[None],
        switch_counts=np.cumsum(sc, axis=0)[None], poisson_counts=np.cumsum(pc, axis=0)[None],
        initial_state=np.array([chain_path.states[0]]),
    )
    brownian = np.concatenate([[0.0], np.cumsum(d_w)])
    return dict(time=time, kind=kind, grid_index=gidx, regime=regime, brownian=brownian,
                event=event, event_mark=event_mark, event_target=event_target, stats=stats)


def simulate_assets(spec: MarketSpec, horizon: float = DEFAULT_HORIZON, dt: float | None = None,
                    K: int = 1, L: int = 0, seed: int = 0) -> ScenarioPath:
    """Simulate one scenario path of every asset up to orders ``K`` and ``L``.

    Parameters
    ----------
    dt : float, optional
        Uniform grid step; defaults to ``horizon / 2000``.
    """
    if horizon <= 0:
        raise ValueError("horizon must be > 0")
    dt = horizon / DEFAULT_STEPS if dt is None else float(dt)
    if dt <= 0:
        raise ValueError("dt must be > 0")
    spec.check_orders(K, L)
    s_chain, s_jump, s_bm = _seeds(seed, 3)
    cp = simulate_chain(spec.chain, horizon, s_chain)
    ev = simulate_jumps(spec.levy, spec.switch, cp, s_jump)
    nodes = grid_statistics(cp, ev, horizon, dt, spec.switch.max_marks, spec.levy.n_marks,
                            np.random.default_rng(np.random.SeedSequence(s_bm)))
    names = asset_names(spec, K, L)
    prices = {}
    for n in names:
        f = log_price_functional(spec, n)
        prices[n] = initial_price(spec, n) * np.exp(f.linear(nodes["stats"])[0] - f.offset)
    for n, v in prices.items():
        if not np.all(v > 0) or not np.all(np.isfinite(v)):
            raise SpecError(n, "simulated price left the positive reals")
    return ScenarioPath(spec=spec, horizon=float(horizon), dt=dt, K=K, L=L, chain_path=cp, events=ev,
                        prices=prices, **nodes)


def discount(path: ScenarioPath) -> dict:
    """Discounted prices ``S / B`` keyed by asset name."""
    b = path.prices["B"]
    return {n: v / b for n, v in path.prices.items()}


@dataclass(frozen=True)
class NoArbitrageReport:
    """Outcome of the static drift conditions on the completion securities."""

    passed: bool
    violations: tuple

    def __str__(self) -> str:
        return "pass" if self.passed else "fail: " + "; ".join(self.violations)


def check_no_arbitrage(spec: MarketSpec, tol: float = NO_ARBITRAGE_TOL) -> NoArbitrageReport:
    """Check the drift conditions that make every discounted price a martingale.

    Conditions: ``S_j`` earns the short rate while the chain sits in ``j``;
    power-jump securities earn ``r`` in every regime; impulse securities earn
    ``r`` of the current regime. Violations are reported with 1-based indices.
    """
    out = []
    n = spec.n_regimes
    for j in range(n):
        if abs(spec.mu_markov[j, j] - spec.r[j]) > tol:
            out.append(f"markov j={j + 1}")
    for k in range(2, spec.k_max + 1):
        for i in range(n):
            if abs(spec.mu_power[k - 2, i] - spec.r[i]) > tol:
                out.append(f"power k={k} regime={i + 1}")
    for i in range(n):
        for l in range(1, spec.l_max + 1):
            for j in range(n):
                if abs(spec.mu_impulse[i, l - 1, j] - spec.r[j]) > tol:
                    out.append(f"impulse i={i + 1} l={l} regime={j + 1}")
    return NoArbitrageReport(not out, tuple(out))
