"""Replication of a martingale by a self-financing portfolio of traded assets.

A martingale under the weighted measure is given through its representation
coefficients ``h`` against the martingale drivers of the market:

* ``X``: the stock's discounted return, diffusion plus both compensated jump
  families,
* ``Phi_j``: the count of entries into regime ``j`` minus its compensator under
  the new measure, ``(1 + psi_j) lambda_j dt``,
* ``X^(k)``: the compensated sum of ``gamma**k`` over Lévy events,
* ``Psi_i^(l)``: the compensated sum of ``u**l`` over switch marks into ``i``.

The replicating portfolio holds ``h / (sigma S~)`` units of each security and
keeps the rest in the money market. Its gains are accumulated from price
increments on the scenario grid, positions fixed at the left node of every
interval. Jumps sit on zero-length intervals between the pre- and post-jump
nodes, so they are captured exactly; the only error comes from the
compensator terms between events and is first order in the grid step.

The diffusion driver over an interval is the exact discounted stock return
``expm1(sigma0 (dW - psi0 dt) - sigma0**2 dt / 2)`` rather than its first-order
part ``sigma0 dW^Q``, so paths with no jump activity replicate to rounding
error.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .market import ScenarioPath, impulse_name, markov_name, power_name
from .measure import GirsanovSpec


def _on_grid(value, shape: tuple, name: str) -> np.ndarray:
    v = np.asarray(value, dtype=float)
    try:
        v = np.broadcast_to(v, shape).copy()
    except ValueError:
        raise ValueError(f"{name}: grid mismatch, expected shape {shape}") from None
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name}: entries must be finite")
    return v


@dataclass(frozen=True, eq=False)
class RepresentationCoefficients:
    """Integrands of a martingale on the nodes of one scenario path.

    ``h[n]`` applies on the interval from node ``n`` to node ``n + 1``.

    Attributes
    ----------
    h0 : ndarray, shape (G,)
    h_markov : ndarray, shape (G, N)
    h_power : ndarray, shape (G, K - 1)
    h_impulse : ndarray, shape (G, N, L)
    m0 : float
        Initial value of the martingale.
    """

    h0: np.ndarray
    h_markov: np.ndarray
    h_power: np.ndarray
    h_impulse: np.ndarray
    m0: float

    @classmethod
    def constant(cls, path: ScenarioPath, h0=0.0, h_markov=0.0, h_power=0.0, h_impulse=0.0,
                 m0: float = 1.0) -> "RepresentationCoefficients":
        """Coefficients constant in time, broadcast to the grid of ``path``."""
        g, n = path.time.size, path.spec.n_regimes
        return cls(
            _on_grid(h0, (g,), "h0"),
            _on_grid(h_markov, (g, n), "h_markov"),
            _on_grid(h_power, (g, path.K - 1), "h_power"),
            _on_grid(h_impulse, (g, n, path.L), "h_impulse"),
            float(m0),
        )

    @classmethod
    def by_regime(cls, path: ScenarioPath, h0=0.0, h_markov=0.0, h_power=0.0, h_impulse=0.0,
                  m0: float = 1.0) -> "RepresentationCoefficients":
        """Coefficients that depend on the regime in force at each node.

        Each argument carries a leading regime axis of length N, e.g.
        ``h_markov[a, j]``.
        """
        n, a = path.spec.n_regimes, path.regime
        return cls(
            _on_grid(h0, (n,), "h0")[a],
            _on_grid(h_markov, (n, n), "h_markov")[a],
            _on_grid(h_power, (n, path.K - 1), "h_power")[a],
            _on_grid(h_impulse, (n, n, path.L), "h_impulse")[a],
            float(m0),
        )

    def check_grid(self, path: ScenarioPath) -> None:
        g, n = path.time.size, path.spec.n_regimes
        expected = {"h0": (g,), "h_markov": (g, n), "h_power": (g, path.K - 1), "h_impulse": (g, n, path.L)}
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name}: grid mismatch, expected shape {shape}")


@dataclass(frozen=True, eq=False)
class MartingaleDrivers:
    """Increments of the martingale drivers over every grid interval, first axis G - 1."""

    stock: np.ndarray
    markov: np.ndarray
    power: np.ndarray
    impulse: np.ndarray


def martingale_drivers(path: ScenarioPath, gir: GirsanovSpec) -> MartingaleDrivers:
    spec = path.spec
    n = spec.n_regimes
    a = path.regime[:-1]
    d_t = np.diff(path.time)
    d_w = np.diff(path.brownian)
    ev, mark, target = path.event[1:], path.event_mark[1:], path.event_target[1:]
    is_sw, is_lv = ev == 1, ev == 2
    u_tab, _ = spec.switch.mark_table()
    gamma = spec.levy.gamma
    lam = spec.offdiag_intensity
    levy_jump = np.where(is_lv, gamma[a, np.where(is_lv, mark, 0)], 0.0)
    switch_jump = np.where(is_sw, u_tab[target, np.where(is_sw, mark, 0)], 0.0)

    sig0 = spec.sigma0[a]
    stock = np.expm1(sig0 * (d_w - gir.psi0[a] * d_t) - 0.5 * sig0**2 * d_t) - spec.stock_compensator()[a] * d_t
    stock += levy_jump + switch_jump

    tilt = np.where(lam > 0, (1.0 + np.nan_to_num(gir.psij)) * lam, 0.0)
    entered = is_sw[:, None] & (target[:, None] == np.arange(n)[None, :])
    markov = entered - tilt[a] * d_t[:, None]

    power = np.zeros((d_t.size, path.K - 1))
    for k in range(2, path.K + 1):
        power[:, k - 2] = np.where(is_lv, levy_jump**k, 0.0) - spec.levy.compensator_rate(k)[a] * d_t

    impulse = np.zeros((d_t.size, n, path.L))
    for l in range(1, path.L + 1):
        jump = np.where(entered, (switch_jump**l)[:, None], 0.0)
        impulse[:, :, l - 1] = jump - spec.switch.moment(l)[None, :] * lam[a] * d_t[:, None]
    return MartingaleDrivers(stock, markov, power, impulse)


def synth_martingale(coeffs: RepresentationCoefficients, path: ScenarioPath, gir: GirsanovSpec) -> np.ndarray:
    """The martingale ``M`` built from ``coeffs`` on the nodes of ``path``."""
    coeffs.check_grid(path)
    d = martingale_drivers(path, gir)
    inc = (
        coeffs.h0[:-1] * d.stock
        + np.einsum("gj,gj->g", coeffs.h_markov[:-1], d.markov)
        + np.einsum("gk,gk->g", coeffs.h_power[:-1], d.power)
        + np.einsum("gil,gil->g", coeffs.h_impulse[:-1], d.impulse)
    )
    return coeffs.m0 + np.concatenate([[0.0], np.cumsum(inc)])


@dataclass(frozen=True, eq=False)
class HedgePortfolio:
    """Units held in each asset at every node, keyed by asset name.

    ``units["B"]`` is the money-market holding; ``martingale`` is ``M`` on the
    same nodes.
    """

    time: np.ndarray
    units: dict
    martingale: np.ndarray

    def value(self, path: ScenarioPath) -> np.ndarray:
        return sum(self.units[n] * path.prices[n] for n in self.units)


def hedge_portfolio(coeffs: RepresentationCoefficients, path: ScenarioPath, gir: GirsanovSpec) -> HedgePortfolio:
    """Replicating positions on every node of ``path``.

    Positions at node ``n`` use the regime in force on the following interval,
    which at a pre-jump node is the regime before the jump.
    """
    spec = path.spec
    a = path.regime
    b = path.prices["B"]
    m = synth_martingale(coeffs, path, gir)
    units = {"S0": coeffs.h0 * b / path.prices["S0"]}
    for j in range(spec.n_regimes):
        name = markov_name(j)
        units[name] = coeffs.h_markov[:, j] * b / (spec.sigma_markov[j, a] * path.prices[name])
    for k in range(2, path.K + 1):
        name = power_name(k)
        units[name] = coeffs.h_power[:, k - 2] * b / (spec.sigma_power[k - 2, a] * path.prices[name])
    for i in range(spec.n_regimes):
        for l in range(1, path.L + 1):
            name = impulse_name(i, l)
            units[name] = coeffs.h_impulse[:, i, l - 1] * b / (spec.sigma_impulse[i, l - 1, a] * path.prices[name])
    risky = sum(units[n] * path.prices[n] / b for n in units)
    units = {"B": m - risky, **units}
    return HedgePortfolio(path.time, units, m)


def replication_weights(coeffs: RepresentationCoefficients, path: ScenarioPath, gir: GirsanovSpec,
                        t: float) -> dict:
    """Positions held at time ``t``, taken at the last node with time ``<= t``."""
    if not 0.0 <= t <= path.horizon:
        raise ValueError(f"t={t} outside [0, {path.horizon}]")
    g = int(np.searchsorted(path.time, t, side="right")) - 1
    port = hedge_portfolio(coeffs, path, gir)
    return {n: float(v[g]) for n, v in port.units.items()}


def rebalancing_cost(port: HedgePortfolio, path: ScenarioPath) -> np.ndarray:
    """Cumulative cost of changing positions, ``sum_m sum_a (theta_a(m) - theta_a(m-1)) P_a(m)``."""
    step = sum(np.diff(port.units[n]) * path.prices[n][1:] for n in port.units)
    return np.concatenate([[0.0], np.cumsum(step)])


def gain_process(port: HedgePortfolio, path: ScenarioPath) -> np.ndarray:
    """Trading gains with positions fixed at the left node of every interval.

    Evaluated by summation by parts, ``G = V - V(0) - C`` with ``C`` the
    rebalancing cost, so positions that never change add no rounding error.
    """
    value = port.value(path)
    return value - value[0] - rebalancing_cost(port, path)


def selffinancing_residual(coeffs: RepresentationCoefficients, path: ScenarioPath, gir: GirsanovSpec) -> np.ndarray:
    """Relative gap ``|G + M(0) - M B| / (1 + |M B|)`` at every node."""
    port = hedge_portfolio(coeffs, path, gir)
    target = port.martingale * path.prices["B"]
    value = port.value(path)
    gap = (value - target) - (value[0] - coeffs.m0) - rebalancing_cost(port, path)
    return np.abs(gap) / (1.0 + np.abs(target))


def selffinancing_check(coeffs: RepresentationCoefficients, path: ScenarioPath, gir: GirsanovSpec) -> float:
    """Maximum over the grid of the relative self-financing residual."""
    return float(selffinancing_residual(coeffs, path, gir).max())


def residual_csv(rows) -> str:
    """CSV with columns path_id, max_residual, dt from ``(path_id, residual, dt)`` rows."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["path_id", "max_residual", "dt"])
    for pid, res, dt in rows:
        w.writerow([int(pid), repr(float(res)), repr(float(dt))])
    return buf.getvalue()
