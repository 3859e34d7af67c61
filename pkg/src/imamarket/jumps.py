"""Lévy jumps, regime-switch marks, power-jump and impulse processes.

The Lévy part is a compound Poisson measure with finitely many marks, so every
integral against it is a finite sum. Its regime-dependent return impact is the
table ``gamma[i, m]``. Switch marks are drawn from a per-regime discrete law
each time the chain enters that regime.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chain import ChainPath, RegimeChain, _frozen
from .errors import SpecError
from .montecarlo import PathFunctional


@dataclass(frozen=True, eq=False)
class LevyJumpSpec:
    """Finite-activity jump component.

    Parameters
    ----------
    intensity : float
        Poisson rate of jump events, > 0.
    marks : array_like, shape (M,)
        Distinct support points of the mark distribution (labels only).
    probs : array_like, shape (M,)
        Mark probabilities.
    gamma : array_like, shape (N, M)
        Relative price impact of mark ``m`` while the chain is in regime ``i``;
        every entry is > -1.

    Notes
    -----
    With finite discrete support every exponential moment of the Lévy measure
    is finite, so no separate integrability check is needed.
    """

    intensity: float
    marks: np.ndarray
    probs: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        marks = np.atleast_1d(np.asarray(self.marks, dtype=float))
        probs = np.atleast_1d(np.asarray(self.probs, dtype=float))
        gamma = np.atleast_2d(np.asarray(self.gamma, dtype=float))
        if not (np.isfinite(self.intensity) and self.intensity > 0):
            raise SpecError("levy.intensity", "must be > 0; use gamma = 0 to switch jumps off")
        if marks.ndim != 1 or probs.shape != marks.shape or marks.size == 0:
            raise SpecError("levy.probs", "need one probability per mark")
        if np.unique(marks).size != marks.size:
            raise SpecError("levy.marks", "marks must be distinct")
        if np.any(probs <= 0) or abs(probs.sum() - 1.0) > 1e-12:
            raise SpecError("levy.probs", "must be positive and sum to 1")
        if gamma.ndim != 2 or gamma.shape[1] != marks.size:
            raise SpecError("levy.gamma", "must have shape (regimes, marks)")
        if not np.all(np.isfinite(gamma)) or np.any(gamma <= -1.0):
            raise SpecError("levy.gamma", "entries must be finite and > -1")
        object.__setattr__(self, "intensity", float(self.intensity))
        object.__setattr__(self, "marks", _frozen(marks))
        object.__setattr__(self, "probs", _frozen(probs))
        object.__setattr__(self, "gamma", _frozen(gamma))

    @classmethod
    def none(cls, n_regimes: int) -> "LevyJumpSpec":
        """A jump component with zero price impact."""
        return cls(1.0, [0.0], [1.0], np.zeros((n_regimes, 1)))

    @property
    def n_regimes(self) -> int:
        return self.gamma.shape[0]

    @property
    def n_marks(self) -> int:
        return self.marks.size

    def compensator_rate(self, k: int) -> np.ndarray:
        """Per-regime ``lambda_P * sum_m p_m gamma[i, m]**k``."""
        return self.intensity * (self.gamma**k) @ self.probs

    def sample_batch(self, horizon: float, n_paths: int, rng: np.random.Generator):
        """Event times (sorted, ``inf``-padded) and mark indices for many paths."""
        counts = rng.poisson(self.intensity * horizon, n_paths)
        width = int(counts.max()) if n_paths else 0
        times = rng.random((n_paths, width)) * horizon
        times[np.arange(width)[None, :] >= counts[:, None]] = np.inf
        times.sort(axis=1)
        cum = np.cumsum(self.probs)
        cum[-1] = np.inf
        marks = np.searchsorted(cum, rng.random((n_paths, width)), side="right")
        return times, np.minimum(marks, self.n_marks - 1).astype(np.int64)


@dataclass(frozen=True, eq=False)
class SwitchJumpSpec:
    """Discrete laws of the price jump triggered by entering each regime.

    Parameters
    ----------
    marks : sequence of array_like
        ``marks[i]`` lists the possible relative jumps ``u > -1`` on entry
        into regime ``i``.
    probs : sequence of array_like
        Matching probabilities, each list positive and summing to one.
    """

    marks: tuple
    probs: tuple

    def __post_init__(self):
        if len(self.marks) != len(self.probs) or len(self.marks) == 0:
            raise SpecError("switch.probs", "need one probability list per regime")
        marks, probs = [], []
        for i, (u, q) in enumerate(zip(self.marks, self.probs)):
            u = np.atleast_1d(np.asarray(u, dtype=float))
            q = np.atleast_1d(np.asarray(q, dtype=float))
            if u.ndim != 1 or u.size == 0 or q.shape != u.shape:
                raise SpecError("switch.probs", f"regime {i}: one probability per mark")
            if np.any(q <= 0) or abs(q.sum() - 1.0) > 1e-12:
                raise SpecError("switch.probs", f"regime {i}: must be positive and sum to 1")
            if not np.all(np.isfinite(u)) or np.any(u <= -1.0):
                raise SpecError("switch.marks", f"regime {i}: marks must be > -1")
            marks.append(_frozen(u))
            probs.append(_frozen(q))
        object.__setattr__(self, "marks", tuple(marks))
        object.__setattr__(self, "probs", tuple(probs))

    @classmethod
    def none(cls, n_regimes: int) -> "SwitchJumpSpec":
        """Switch marks concentrated at zero."""
        return cls(tuple([0.0] for _ in range(n_regimes)), tuple([1.0] for _ in range(n_regimes)))

    @property
    def n_regimes(self) -> int:
        return len(self.marks)

    @property
    def max_marks(self) -> int:
        return max(u.size for u in self.marks)

    def mark_table(self) -> tuple[np.ndarray, np.ndarray]:
        """Marks and probabilities padded with zeros to shape (N, max_marks)."""
        n, m = self.n_regimes, self.max_marks
        u = np.zeros((n, m))
        q = np.zeros((n, m))
        for i in range(n):
            u[i, : self.marks[i].size] = self.marks[i]
            q[i, : self.probs[i].size] = self.probs[i]
        return u, q

    def moment(self, l: int) -> np.ndarray:
        """Per-regime ``E[U**l]`` as an exact finite sum."""
        return np.array([q @ u**l for u, q in zip(self.marks, self.probs)])

    def sample_batch(self, targets: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Mark indices for transitions into the regimes ``targets``."""
        _, q = self.mark_table()
        cum = np.cumsum(q, axis=1)
        for i, qi in enumerate(self.probs):
            cum[i, qi.size - 1 :] = np.inf
        u = rng.random(targets.shape)
        return (u[..., None] >= cum[targets]).sum(axis=-1).astype(np.int64)


@dataclass(frozen=True, eq=False)
class JumpEventLog:
    """Jump events of one path.

    Attributes
    ----------
    poisson_times, poisson_marks : ndarray
        Lévy jump times in ``[0, horizon]`` and their mark indices.
    switch_times, switch_targets, switch_marks : ndarray
        Chain epochs, the regimes entered, and the index of the drawn switch mark.
    switch_values : ndarray
        The drawn relative jumps ``u``.
    """

    poisson_times: np.ndarray
    poisson_marks: np.ndarray
    switch_times: np.ndarray
    switch_targets: np.ndarray
    switch_marks: np.ndarray
    switch_values: np.ndarray


def simulate_jumps(levy: LevyJumpSpec, switch: SwitchJumpSpec, chain_path: ChainPath, seed: int) -> JumpEventLog:
    """Sample Lévy events on ``[0, T]`` and one switch mark per chain epoch."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    times, marks = levy.sample_batch(chain_path.horizon, 1, rng)
    k = int(np.isfinite(times[0]).sum())
    targets = chain_path.states[1:]
    idx = switch.sample_batch(targets[None, :], rng)[0]
    table, _ = switch.mark_table()
    return JumpEventLog(
        poisson_times=times[0, :k],
        poisson_marks=marks[0, :k],
        switch_times=chain_path.epochs.copy(),
        switch_targets=targets.copy(),
        switch_marks=idx,
        switch_values=table[targets, idx],
    )


def power_jump_path(events: JumpEventLog, levy: LevyJumpSpec, chain_path: ChainPath, k: int, t: float):
    """Power-jump sum of order ``k`` and its compensated version at ``t``.

    Returns
    -------
    (float, float)
        ``X^(k)(t)``, the sum of ``gamma**k`` over Lévy events up to ``t``, and
        ``X^(k)(t)`` minus its compensator accumulated over regime occupation.
    """
    if k < 2:
        raise ValueError("power-jump order k must be >= 2")
    chain_path._check_time(t)
    hit = events.poisson_times <= t
    regimes = chain_path.state_before(events.poisson_times[hit])
    total = float(np.sum(levy.gamma[regimes, events.poisson_marks[hit]] ** k))
    comp = float(chain_path.occupation(t) @ levy.compensator_rate(k))
    return total, total - comp


def impulse_path(events: JumpEventLog, switch: SwitchJumpSpec, chain_path: ChainPath, i: int, l: int, t: float):
    """Impulse sum of order ``l`` for entries into regime ``i``, raw and compensated."""
    if l < 1:
        raise ValueError("impulse order l must be >= 1")
    if not 0 <= i < switch.n_regimes:
        raise ValueError(f"regime {i} out of range")
    chain_path._check_time(t)
    hit = (events.switch_times <= t) & (events.switch_targets == i)
    total = float(np.sum(events.switch_values[hit] ** l))
    rates = chain_path.chain.intensity[:, i].copy()
    rates[i] = 0.0
    phi = float(chain_path.occupation(t) @ rates)
    return total, total - switch.moment(l)[i] * phi


def teugels_functional(levy: LevyJumpSpec, chain: RegimeChain, n_switch_marks: int, k: int) -> PathFunctional:
    """Compensated power-jump sum of order ``k`` as a functional of the path statistics."""
    if k < 1:
        raise ValueError("power-jump order k must be >= 1")
    n = chain.n_regimes
    return PathFunctional(0.0, -levy.compensator_rate(k), np.zeros(n), np.zeros((n, n, n_switch_marks)),
                          levy.gamma**k)


def impulse_functional(switch: SwitchJumpSpec, chain: RegimeChain, n_levy_marks: int, i: int, l: int) -> PathFunctional:
    """Compensated impulse sum of order ``l`` for entries into ``i`` as a path functional."""
    if l < 1:
        raise ValueError("impulse order l must be >= 1")
    n = chain.n_regimes
    u_tab, _ = switch.mark_table()
    rates = chain.intensity[:, i].copy()
    rates[i] = 0.0
    sw = np.zeros((n, n, switch.max_marks))
    sw[:, i, :] = u_tab[i] ** l
    sw[i, i, :] = 0.0
    return PathFunctional(0.0, -switch.moment(l)[i] * rates, np.zeros(n), sw, np.zeros((n, n_levy_marks)))
