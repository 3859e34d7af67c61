"""Continuous-time finite-state Markov chain driving the market regime.

Paths are stored event by event (transition epochs plus visited states), so
every integral against the transition intensities is an exact piecewise-linear
sum. A transition exactly at a query time ``t`` belongs to the past of ``t``:
``state_at(t)`` is the post-jump state and ``state_before(t)`` the pre-jump one.

Regimes are 0-based inside the library.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import SpecError

ROW_SUM_TOL = 1e-12
UNIFORMIZATION_TAIL = 1e-14


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class RegimeChain:
    """Markov chain with intensity matrix ``intensity`` and initial law.

    Parameters
    ----------
    intensity : array_like, shape (N, N)
        Generator matrix. Rows sum to zero, off-diagonal entries are strictly
        positive when N > 1; for N = 1 the matrix is ``[[0]]``.
    initial : int or array_like
        Either a starting regime index or a probability vector of length N.
    """

    intensity: np.ndarray
    initial: int | np.ndarray = 0
    initial_distribution: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        lam = np.atleast_2d(np.asarray(self.intensity, dtype=float))
        n = lam.shape[0]
        if lam.ndim != 2 or lam.shape != (n, n) or n < 1:
            raise SpecError("intensity", "must be a square matrix")
        if not np.all(np.isfinite(lam)):
            raise SpecError("intensity", "entries must be finite")
        if np.any(np.abs(lam.sum(axis=1)) > ROW_SUM_TOL):
            raise SpecError("intensity", "every row must sum to 0")
        off = ~np.eye(n, dtype=bool)
        if n > 1 and np.any(lam[off] <= 0.0):
            raise SpecError("intensity", "off-diagonal rates must be > 0")
        if n == 1 and lam[0, 0] != 0.0:
            raise SpecError("intensity", "a single-regime chain has intensity [[0]]")

        if np.ndim(self.initial) == 0:
            idx = int(self.initial)
            if idx != self.initial or not 0 <= idx < n:
                raise SpecError("initial_state", f"must be a regime index in 0..{n - 1}")
            p0 = np.zeros(n)
            p0[idx] = 1.0
        else:
            p0 = np.asarray(self.initial, dtype=float)
            if p0.shape != (n,):
                raise SpecError("initial_distribution", f"must have length {n}")
            if np.any(p0 < 0) or abs(p0.sum() - 1.0) > 1e-12:
                raise SpecError("initial_distribution", "must be a probability vector")
        object.__setattr__(self, "intensity", _frozen(lam))
        object.__setattr__(self, "initial_distribution", _frozen(p0))

    @property
    def n_regimes(self) -> int:
        return self.intensity.shape[0]

    @property
    def exit_rates(self) -> np.ndarray:
        """Holding-time rates ``-lambda_ii``."""
        return -np.diag(self.intensity)

    def jump_matrix(self) -> np.ndarray:
        """Embedded jump chain, ``lambda_ij / (-lambda_ii)`` off the diagonal."""
        n = self.n_regimes
        if n == 1:
            return np.zeros((1, 1))
        p = self.intensity / self.exit_rates[:, None]
        np.fill_diagonal(p, 0.0)
        return p

    def with_initial(self, initial) -> "RegimeChain":
        return RegimeChain(self.intensity, initial)

    def sample_batch(self, horizon: float, n_paths: int, rng: np.random.Generator):
        """Draw ``n_paths`` independent chain paths on ``[0, horizon]``.

        Returns
        -------
        epochs : ndarray, shape (n_paths, E)
            Transition times, padded with ``inf``.
        states : ndarray of int, shape (n_paths, E + 1)
            Initial state followed by the state entered at each epoch; padded
            entries repeat the last state.
        """
        n = self.n_regimes
        cum0 = np.cumsum(self.initial_distribution)
        cum0[-1] = np.inf
        state = np.searchsorted(cum0, rng.random(n_paths), side="right")
        state = np.minimum(state, n - 1)
        if n == 1:
            return np.empty((n_paths, 0)), state[:, None].astype(np.int64)

        jump = self.jump_matrix()
        cum = np.cumsum(jump, axis=1)
        for i in range(n):
            last = np.flatnonzero(jump[i] > 0)[-1]
            cum[i, last:] = np.inf
        rates = self.exit_rates

        t = np.zeros(n_paths)
        alive = np.ones(n_paths, dtype=bool)
        epochs, states = [], [state]
        while True:
            t = t + rng.standard_exponential(n_paths) / rates[state]
            alive &= t <= horizon
            u = rng.random(n_paths)
            if not alive.any():
                break
            nxt = (u[:, None] >= cum[state]).sum(axis=1)
            state = np.where(alive, nxt, state)
            epochs.append(np.where(alive, t, np.inf))
            states.append(state)
        if not epochs:
            return np.empty((n_paths, 0)), state[:, None].astype(np.int64)
        return np.stack(epochs, axis=1), np.stack(states, axis=1).astype(np.int64)


@dataclass(frozen=True, eq=False)
class ChainPath:
    """One realisation of the regime chain on ``[0, horizon]``.

    Attributes
    ----------
    chain : RegimeChain
    horizon : float
    epochs : ndarray, shape (E,)
        Strictly increasing transition times in ``(0, horizon]``.
    states : ndarray of int, shape (E + 1,)
        Initial state followed by the post-jump state at each epoch.
    """

    chain: RegimeChain
    horizon: float
    epochs: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        ep = np.asarray(self.epochs, dtype=float)
        st = np.asarray(self.states, dtype=np.int64)
        if st.shape != (ep.size + 1,):
            raise SpecError("states", "need one more state than epochs")
        if ep.size and (np.any(np.diff(ep) <= 0) or ep[0] <= 0 or ep[-1] > self.horizon):
            raise SpecError("epochs", "must be strictly increasing in (0, horizon]")
        if np.any(st[1:] == st[:-1]):
            raise SpecError("states", "consecutive states must differ")
        object.__setattr__(self, "epochs", _frozen(ep))
        st.setflags(write=False)
        object.__setattr__(self, "states", st)

    def _check_time(self, t: float) -> None:
        if not 0.0 <= t <= self.horizon:
            raise ValueError(f"t={t} outside [0, {self.horizon}]")

    def state_at(self, t):
        """Post-jump state ``J(t)``; vectorised over ``t``."""
        return self.states[np.searchsorted(self.epochs, t, side="right")]

    def state_before(self, t):
        """Pre-jump state ``J(t-)``; at ``t = 0`` this is the initial state."""
        idx = np.maximum(np.searchsorted(self.epochs, t, side="left"), 0)
        return self.states[idx]

    def occupation(self, t: float) -> np.ndarray:
        """Time spent in each regime during ``[0, t]``."""
        self._check_time(t)
        bounds = np.concatenate(([0.0], np.minimum(self.epochs, t), [t]))
        occ = np.zeros(self.chain.n_regimes)
        np.add.at(occ, self.states, np.diff(bounds))
        return occ

    def transitions(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        """Source and target regimes of the transitions at epochs ``<= t``."""
        k = np.searchsorted(self.epochs, t, side="right")
        return self.states[:k], self.states[1 : k + 1]


def simulate_chain(chain: RegimeChain, horizon: float, seed: int) -> ChainPath:
    """Sample one chain path; deterministic given ``seed``."""
    if horizon <= 0:
        raise ValueError("horizon must be > 0")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    ep, st = chain.sample_batch(horizon, 1, rng)
    k = int(np.isfinite(ep[0]).sum())
    return ChainPath(chain, float(horizon), ep[0, :k], st[0, : k + 1])


def lambda_j(path: ChainPath, j: int, t: float) -> float:
    """Intensity of a transition into ``j`` given the state just before ``t``.

    Returns ``lambda_{J(t-), j}``, which is 0 while the chain sits in ``j``.
    """
    path._check_time(t)
    i = int(path.state_before(t))
    return 0.0 if i == j else float(path.chain.intensity[i, j])


def counting_and_compensator(path: ChainPath, j: int, t: float) -> tuple[int, float]:
    """Number of entries into ``j`` up to ``t`` and its compensator.

    The compensator ``int_0^t lambda_j(s) ds`` is evaluated exactly from the
    occupation times, so ``count - compensator`` carries no time-stepping error.
    """
    path._check_time(t)
    _, targets = path.transitions(t)
    rates = path.chain.intensity[:, j].copy()
    rates[j] = 0.0
    return int(np.sum(targets == j)), float(path.occupation(t) @ rates)


def _poisson_weights(rate_time: float, tol: float) -> np.ndarray:
    """Survival probabilities ``P(N > n)`` of Poisson(rate_time) until below ``tol``."""
    n_max = int(np.ceil(rate_time + 12.0 * np.sqrt(rate_time) + 60.0))
    sf = stats.poisson.sf(np.arange(n_max + 1), rate_time)
    keep = np.flatnonzero(sf >= tol)
    return sf[: (keep[-1] + 2 if keep.size else 1)]


def transition_matrix(chain: RegimeChain, t: float, tol: float = UNIFORMIZATION_TAIL) -> np.ndarray:
    """``exp(t * intensity)`` by uniformization."""
    n = chain.n_regimes
    q = float(chain.exit_rates.max())
    if q == 0.0 or t == 0.0:
        return np.eye(n)
    p = np.eye(n) + chain.intensity / q
    n_max = int(np.ceil(q * t + 12.0 * np.sqrt(q * t) + 60.0))
    pmf = stats.poisson.pmf(np.arange(n_max + 1), q * t)
    sf = stats.poisson.sf(np.arange(n_max + 1), q * t)
    out = np.zeros((n, n))
    power = np.eye(n)
    for k in range(n_max + 1):
        out += pmf[k] * power
        if sf[k] < tol:
            break
        power = power @ p
    return out


def occupation_expectation(chain: RegimeChain, horizon: float, tol: float = UNIFORMIZATION_TAIL) -> np.ndarray:
    """Expected time spent in each regime during ``[0, horizon]``.

    Uses ``int_0^T exp(s L) ds = q^{-1} sum_n P(N_{qT} > n) P^n`` with the
    uniformized chain ``P = I + L / q``; the series stops once the Poisson tail
    drops below ``tol``.
    """
    if horizon <= 0:
        raise ValueError("horizon must be > 0")
    p0 = chain.initial_distribution
    q = float(chain.exit_rates.max())
    if q == 0.0:
        return p0 * horizon
    p = np.eye(chain.n_regimes) + chain.intensity / q
    weights = _poisson_weights(q * horizon, tol)
    row = p0.copy()
    acc = np.zeros_like(p0)
    for w in weights:
        acc += w * row
        row = row @ p
    return acc / q
