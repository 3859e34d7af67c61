"""Path statistics and the block-parallel Monte-Carlo engine.

Every price, density and wealth process in the model is the exponential of a
quantity that is linear in four path statistics:

* time spent in each regime,
* the Brownian integral split by regime,
* counts of regime transitions ``a -> j`` tagged by the switch-mark index,
* counts of Lévy events tagged by (regime at the event, mark index).

Because the coefficients are piecewise constant in the regime, these statistics
are sampled exactly at arbitrary checkpoints, so Monte-Carlo estimates carry no
time-discretisation error. Paths are generated in fixed-size blocks, each with
its own seed derived from ``(seed, block index)``; blocks are concatenated in
index order, which makes results independent of the number of threads.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from .chain import RegimeChain
    from .jumps import LevyJumpSpec, SwitchJumpSpec

BLOCK_SIZE = 8192


@dataclass(frozen=True, eq=False)
class PathStatistics:
    """Sufficient statistics of ``n`` paths at ``C`` observation times.

    Attributes
    ----------
    times : ndarray, shape (C,)
    occupation : ndarray, shape (n, C, N)
    brownian : ndarray, shape (n, C, N)
        ``int_0^t 1{J(s-) = a} dW(s)``.
    switch_counts : ndarray, shape (n, C, N, N, Ms)
        Transitions ``a -> j`` up to ``t`` whose switch mark has index ``m``.
    poisson_counts : ndarray, shape (n, C, N, Ml)
        Lévy events up to ``t`` occurring in regime ``a`` with mark ``m``.
    initial_state : ndarray of int, shape (n,)
    """

    times: np.ndarray
    occupation: np.ndarray
    brownian: np.ndarray
    switch_counts: np.ndarray
    poisson_counts: np.ndarray
    initial_state: np.ndarray

    @property
    def n_paths(self) -> int:
        return self.occupation.shape[0]

    def transition_counts(self) -> np.ndarray:
        """Transition counts ``a -> j`` summed over marks, shape (n, C, N, N)."""
        return self.switch_counts.sum(axis=-1)

    @staticmethod
    def concatenate(parts: list["PathStatistics"]) -> "PathStatistics":
        return PathStatistics(
            times=parts[0].times,
            occupation=np.concatenate([p.occupation for p in parts]),
            brownian=np.concatenate([p.brownian for p in parts]),
            switch_counts=np.concatenate([p.switch_counts for p in parts]),
            poisson_counts=np.concatenate([p.poisson_counts for p in parts]),
            initial_state=np.concatenate([p.initial_state for p in parts]),
        )


@dataclass(frozen=True, eq=False)
class PathFunctional:
    """A quantity linear in the path statistics.

    ``value = offset + drift . occupation + vol . brownian
    + sum switch * switch_counts + sum poisson * poisson_counts``.

    Used directly for compensated sums and log-wealth, and through ``exp`` for
    prices and densities.
    """

    offset: float
    drift: np.ndarray
    vol: np.ndarray
    switch: np.ndarray
    poisson: np.ndarray

    def linear(self, st: PathStatistics) -> np.ndarray:
        """Evaluate on every path and checkpoint, shape (n, C)."""
        out = self.offset + st.occupation @ self.drift + st.brownian @ self.vol
        out = out + np.einsum("ncabm,abm->nc", st.switch_counts, self.switch)
        out = out + np.einsum("ncam,am->nc", st.poisson_counts, self.poisson)
        return out

    def exp(self, st: PathStatistics) -> np.ndarray:
        return np.exp(self.linear(st))

    def __add__(self, other: "PathFunctional") -> "PathFunctional":
        return PathFunctional(
            self.offset + other.offset,
            self.drift + other.drift,
            self.vol + other.vol,
            self.switch + other.switch,
            self.poisson + other.poisson,
        )

    def __neg__(self) -> "PathFunctional":
        return PathFunctional(-self.offset, -self.drift, -self.vol, -self.switch, -self.poisson)

    def __sub__(self, other: "PathFunctional") -> "PathFunctional":
        return self + (-other)

    @classmethod
    def zero(cls, n_regimes: int, n_switch_marks: int, n_levy_marks: int) -> "PathFunctional":
        n = n_regimes
        return cls(0.0, np.zeros(n), np.zeros(n), np.zeros((n, n, n_switch_marks)), np.zeros((n, n_levy_marks)))


def _block_statistics(
    chain: RegimeChain,
    levy: LevyJumpSpec,
    switch: SwitchJumpSpec,
    checkpoints: np.ndarray,
    n: int,
    rng: np.random.Generator,
) -> PathStatistics:
    horizon = float(checkpoints[-1])
    n_reg, ms, ml = chain.n_regimes, switch.max_marks, levy.n_marks
    rows = np.arange(n)
    n_ck = checkpoints.size

    epochs, states = chain.sample_batch(horizon, n, rng)
    p_times, p_marks = levy.sample_batch(horizon, n, rng)
    s_marks = switch.sample_batch(states[:, 1:], rng)

    # Brownian pieces between consecutive knots (epochs and checkpoints).
    knots = np.sort(np.concatenate([epochs, np.broadcast_to(checkpoints, (n, n_ck))], axis=1), axis=1)
    starts = np.concatenate([np.zeros((n, 1)), knots[:, :-1]], axis=1)
    lengths = np.minimum(knots, horizon) - np.minimum(starts, horizon)
    piece_state = states[rows[:, None], (epochs[:, None, :] <= starts[:, :, None]).sum(axis=2)]
    d_w = np.sqrt(lengths) * rng.standard_normal(lengths.shape)

    occ = np.zeros((n, n_ck, n_reg))
    bw = np.zeros((n, n_ck, n_reg))
    for a in range(n_reg):
        in_a = piece_state == a
        for c, t in enumerate(checkpoints):
            mask = in_a & (knots <= t)
            occ[:, c, a] = np.where(mask, lengths, 0.0).sum(axis=1)
            bw[:, c, a] = np.where(mask, d_w, 0.0).sum(axis=1)

    sc = np.zeros((n, n_ck, n_reg * n_reg * ms))
    flat = (states[:, :-1] * n_reg + states[:, 1:]) * ms + s_marks
    for e in range(epochs.shape[1]):
        for c, t in enumerate(checkpoints):
            sc[rows, c, flat[:, e]] += epochs[:, e] <= t

    pc = np.zeros((n, n_ck, n_reg * ml))
    p_state = states[rows[:, None], (epochs[:, None, :] < p_times[:, :, None]).sum(axis=2)]
    p_flat = p_state * ml + p_marks
    for e in range(p_times.shape[1]):
        for c, t in enumerate(checkpoints):
            pc[rows, c, p_flat[:, e]] += p_times[:, e] <= t

    return PathStatistics(
        times=checkpoints,
        occupation=occ,
        brownian=bw,
        switch_counts=sc.reshape(n, n_ck, n_reg, n_reg, ms),
        poisson_counts=pc.reshape(n, n_ck, n_reg, ml),
        initial_state=states[:, 0],
    )


def block_rng(seed: int, block: int) -> np.random.Generator:
    """Generator for block ``block`` of a run seeded with ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(block,)))


def simulate_statistics(
    chain: RegimeChain,
    levy: LevyJumpSpec,
    switch: SwitchJumpSpec,
    checkpoints,
    n_paths: int,
    seed: int,
    threads: int = 1,
    block_size: int = BLOCK_SIZE,
) -> PathStatistics:
    """Simulate path statistics for ``n_paths`` paths at ``checkpoints``.

    The last checkpoint is the simulation horizon. Output is bit-identical for
    any ``threads`` value.
    """
    ck = np.asarray(checkpoints, dtype=float).ravel()
    if ck.size == 0 or np.any(ck <= 0) or np.any(np.diff(ck) <= 0):
        raise ValueError("checkpoints must be positive and strictly increasing")
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    sizes = [min(block_size, n_paths - s) for s in range(0, n_paths, block_size)]

    def run(b: int) -> PathStatistics:
        return _block_statistics(chain, levy, switch, ck, sizes[b], block_rng(seed, b))

    if threads <= 1 or len(sizes) == 1:
        parts = [run(b) for b in range(len(sizes))]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, range(len(sizes))))
    return PathStatistics.concatenate(parts)


def mean_and_stderr(samples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sample mean and standard error along the first axis."""
    n = samples.shape[0]
    mean = samples.mean(axis=0)
    if n < 2:
        return mean, np.full_like(mean, np.nan)
    return mean, samples.std(axis=0, ddof=1) / np.sqrt(n)
