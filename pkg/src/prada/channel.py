"""Finite-state Markov model of a Rayleigh fading channel.

The received SNR is quantized into N contiguous intervals.  Each interval is
a channel state; the state is held for one frame and moves to a neighbouring
state between frames with probabilities derived from the level crossing rate
of the fading envelope.

SNR values are linear inside this module.  ``db_to_linear`` and
``linear_to_db`` convert at the edges.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

#: Upper edge of the last state.  IEEE infinity, never a large finite float.
INF = math.inf


class ChannelModelError(ValueError):
    """Raised for invalid partitions or parameters outside the model's validity."""


class ConvergenceError(ArithmeticError):
    """Raised when an iterative solver fails; carries the final residual."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual


def db_to_linear(value_db: float) -> float:
    if value_db == -INF:
        return 0.0
    return 10.0 ** (value_db / 10.0)


def linear_to_db(value: float) -> float:
    if value == 0.0:
        return -INF
    if value == INF:
        return INF
    return 10.0 * math.log10(value)


@dataclass(frozen=True)
class SnrPartition:
    """Ordered SNR boundaries ``[0, G_2, ..., G_N, inf]`` (linear scale)."""

    boundaries: tuple[float, ...]

    def __post_init__(self):
        b = tuple(float(x) for x in self.boundaries)
        object.__setattr__(self, "boundaries", b)
        if len(b) < 2:
            raise ChannelModelError("partition needs at least one state (two boundaries)")
        if b[0] != 0.0:
            raise ChannelModelError(f"first boundary must be exactly 0, got {b[0]!r}")
        if b[-1] != INF:
            raise ChannelModelError("last boundary must be the infinity sentinel")
        for j in range(len(b) - 1):
            if not b[j] < b[j + 1]:
                raise ChannelModelError(
                    f"boundaries must be strictly increasing (index {j}: {b[j]!r} >= {b[j + 1]!r})"
                )

    @classmethod
    def from_interior_db(cls, interior_db: Sequence[float]) -> "SnrPartition":
        """Build from the N-1 finite, nonzero boundaries given in dB."""
        return cls((0.0, *(db_to_linear(x) for x in interior_db), INF))

    @property
    def n_states(self) -> int:
        return len(self.boundaries) - 1

    @property
    def interior(self) -> tuple[float, ...]:
        return self.boundaries[1:-1]

    def interior_db(self) -> list[float]:
        return [linear_to_db(x) for x in self.interior]

    def state_of(self, snr: float) -> int:
        """Zero-based index of the state containing ``snr``."""
        if snr < 0:
            raise ChannelModelError("SNR must be non-negative")
        return int(np.searchsorted(self.boundaries, snr, side="right")) - 1


def _check_avg_snr(avg_snr: float) -> None:
    if not avg_snr > 0 or not math.isfinite(avg_snr):
        raise ChannelModelError(f"average SNR must be positive and finite, got {avg_snr!r}")


def _tail(snr: float, avg_snr: float) -> float:
    # P[gamma >= snr] for an exponential SNR with mean avg_snr
    return 0.0 if snr == INF else math.exp(-snr / avg_snr)


def stationary_probabilities(partition: SnrPartition, avg_snr: float) -> np.ndarray:
    """Probability mass of the exponential SNR density on each state interval."""
    _check_avg_snr(avg_snr)
    tails = np.array([_tail(g, avg_snr) for g in partition.boundaries])
    pi = tails[:-1] - tails[1:]
    return pi


def level_crossing_rate(snr_level: float, avg_snr: float, doppler_hz: float) -> float:
    """Expected crossings per second of ``snr_level`` in one direction."""
    if snr_level < 0:
        raise ChannelModelError("SNR level must be non-negative")
    if doppler_hz < 0:
        raise ChannelModelError("Doppler frequency must be non-negative")
    _check_avg_snr(avg_snr)
    if snr_level == 0.0 or snr_level == INF or doppler_hz == 0.0:
        return 0.0
    rho = snr_level / avg_snr
    return math.sqrt(2.0 * math.pi * rho) * doppler_hz * math.exp(-rho)


@dataclass(frozen=True)
class FsmcChannel:
    """Immutable FSMC: partition, stationary law and per-frame transition matrix."""

    partition: SnrPartition
    avg_snr: float
    doppler_hz: float
    frame_period_s: float
    stationary: np.ndarray = field(repr=False)
    transition: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.stationary.setflags(write=False)
        self.transition.setflags(write=False)

    @property
    def n_states(self) -> int:
        return self.partition.n_states

    @property
    def avg_snr_db(self) -> float:
        return linear_to_db(self.avg_snr)

    def validate(self, atol: float = 1e-12) -> None:
        """Numeric self-check of the structural invariants."""
        pi, P = self.stationary, self.transition
        n = self.n_states
        if P.shape != (n, n) or pi.shape != (n,):
            raise ChannelModelError("dimension mismatch between partition and matrices")
        if abs(pi.sum() - 1.0) > atol or np.any(pi < 0) or np.any(pi > 1):
            raise ChannelModelError("stationary vector is not a probability vector")
        if np.any(P < 0) or np.any(np.abs(P.sum(axis=1) - 1.0) > atol):
            raise ChannelModelError("transition matrix is not row-stochastic")
        if np.any(np.triu(P, 2)) or np.any(np.tril(P, -2)):
            raise ChannelModelError("transition matrix is not tridiagonal")
        if np.max(np.abs(pi @ P - pi)) > 1e-9:
            raise ChannelModelError("stationary vector is not a fixed point of the transition matrix")


def crossing_rates(partition: SnrPartition, avg_snr: float, doppler_hz: float) -> np.ndarray:
    """Level crossing rate at every boundary (zero at both ends)."""
    return np.array([level_crossing_rate(g, avg_snr, doppler_hz) for g in partition.boundaries])


def build_transition_matrix(
    partition: SnrPartition,
    avg_snr: float,
    doppler_hz: float,
    frame_period_s: float,
) -> FsmcChannel:
    """Birth-death transition matrix from level crossings during one frame."""
    if frame_period_s <= 0:
        raise ChannelModelError("frame period must be positive")
    pi = stationary_probabilities(partition, avg_snr)
    n = partition.n_states
    rates = crossing_rates(partition, avg_snr, doppler_hz) * frame_period_s
    P = np.zeros((n, n))
    for i in range(n):
        # crossing of the upper edge moves up, of the lower edge moves down
        if i + 1 < n:
            P[i, i + 1] = rates[i + 1] / pi[i]
        if i > 0:
            P[i, i - 1] = rates[i] / pi[i]
        off = P[i].sum()
        if off > 1.0:
            raise ChannelModelError(
                f"state {i + 1}: leaving probability {off:.4f} exceeds 1; "
                "the slow-fading assumption fails, use a smaller frame period"
            )
        P[i, i] = 1.0 - off
    return FsmcChannel(partition, float(avg_snr), float(doppler_hz), float(frame_period_s), pi, P)


def channel_from_rates(
    partition: SnrPartition,
    avg_snr: float,
    doppler_hz: float,
    up_per_hz: Sequence[float],
    down_per_hz: Sequence[float],
    frame_period_s: float = float("nan"),
) -> FsmcChannel:
    """Channel from tabulated per-Hz neighbour transition probabilities.

    ``up_per_hz[i]`` is P(i -> i+1)/f for i = 0..N-2 and ``down_per_hz[i]`` is
    P(i+1 -> i)/f.  The stationary vector is the fixed point of the resulting
    chain, which need not equal the exponential interval masses.
    """
    n = partition.n_states
    up = np.asarray(up_per_hz, float) * doppler_hz
    down = np.asarray(down_per_hz, float) * doppler_hz
    if up.shape != (n - 1,) or down.shape != (n - 1,):
        raise ChannelModelError(f"expected {n - 1} up and down rates")
    P = np.diag(up, 1) + np.diag(down, -1)
    off = P.sum(axis=1)
    if np.any(off > 1.0):
        i = int(np.argmax(off > 1.0))
        raise ChannelModelError(f"state {i + 1}: leaving probability {off[i]:.4f} exceeds 1")
    P += np.diag(1.0 - off)
    pi = birth_death_stationary(P)
    _check_avg_snr(avg_snr)
    return FsmcChannel(partition, float(avg_snr), float(doppler_hz), frame_period_s, pi, P)


def birth_death_stationary(P: np.ndarray) -> np.ndarray:
    """Stationary law of a tridiagonal chain by detailed balance.

    Falls back to a point mass on state 0 when the chain cannot leave it.
    """
    n = P.shape[0]
    w = np.ones(n)
    for i in range(n - 1):
        if P[i + 1, i] == 0.0:
            if P[i, i + 1] == 0.0:
                w[i + 1 :] = 0.0
                break
            raise ChannelModelError(f"state {i + 2} cannot return to state {i + 1}")
        w[i + 1] = w[i] * P[i, i + 1] / P[i + 1, i]
    return w / w.sum()


def calibrate_frame_period(
    partition: SnrPartition,
    avg_snr: float,
    doppler_hz: float,
    up: Sequence[float],
    down: Sequence[float],
) -> float:
    """Least-squares frame period matching tabulated neighbour transitions.

    ``up[i]`` is the target P(i -> i+1) and ``down[i]`` the target P(i+1 -> i)
    at ``doppler_hz``.  The model is linear in the frame period, so the fit has
    a closed form.
    """
    pi = stationary_probabilities(partition, avg_snr)
    rates = crossing_rates(partition, avg_snr, doppler_hz)[1:-1]
    x = np.concatenate([rates / pi[:-1], rates / pi[1:]])
    y = np.concatenate([np.asarray(up, float), np.asarray(down, float)])
    if x.shape != y.shape:
        raise ChannelModelError(f"expected {len(rates)} up and down targets")
    return float(x @ y / (x @ x))


def state_durations(partition: SnrPartition, avg_snr: float, doppler_hz: float) -> np.ndarray:
    """Mean sojourn time (seconds) in each state: pi_i / (N(G_i) + N(G_i+1))."""
    pi = stationary_probabilities(partition, avg_snr)
    rates = crossing_rates(partition, avg_snr, doppler_hz)
    return pi / (rates[:-1] + rates[1:])


def partition_equal_duration(
    n_states: int,
    avg_snr: float,
    doppler_hz: float = 1.0,
    rtol: float = 1e-6,
    max_iter: int = 200,
) -> SnrPartition:
    """Boundaries giving every state the same mean sojourn time.

    For a trial duration ``tau`` the boundaries are placed one at a time from
    ``G_1 = 0`` upward so that each of the first N-1 states lasts ``tau``; a
    bisection on ``tau`` then makes the open last state last ``tau`` too.
    ``doppler_hz`` scales every duration by the same factor and cannot move
    the solution; it is accepted only to mirror the channel constructor.
    """
    if n_states < 2:
        raise ChannelModelError("n_states must be >= 2")
    if doppler_hz < 0:
        raise ChannelModelError("Doppler frequency must be non-negative")
    _check_avg_snr(avg_snr)
    g0 = avg_snr

    def lcr(x):
        return 0.0 if x == 0.0 or x == INF else math.sqrt(2 * math.pi * x / g0) * math.exp(-x / g0)

    def duration(lo, hi):
        return (_tail(lo, g0) - _tail(hi, g0)) / (lcr(lo) + lcr(hi))

    def sweep(tau):
        # boundaries and last-state mismatch; -inf when tau is too long to fit N states
        bounds = [0.0]
        for _ in range(n_states - 1):
            lo = bounds[-1]
            if lo > 0 and duration(lo, INF) <= tau:
                return bounds, -INF
            start = lo if lo > 0 else 1e-300
            hi = 2 * max(lo, g0)
            while duration(lo, hi) < tau:
                hi *= 2
            bounds.append(brentq(lambda x: duration(lo, x) - tau, start, hi, xtol=1e-14, rtol=1e-15))
        return bounds, duration(bounds[-1], INF) - tau

    tau_hi = 1.0
    while sweep(tau_hi)[1] > 0:
        tau_hi *= 2
    tau_lo = tau_hi / 2
    while sweep(tau_lo)[1] <= 0:
        tau_lo /= 2
        if tau_lo < 1e-300:
            raise ConvergenceError("could not bracket the state duration", float("nan"))

    bounds, mismatch = sweep(tau_lo)
    residual = abs(mismatch) / tau_lo
    for _ in range(max_iter):
        mid = 0.5 * (tau_lo + tau_hi)
        b, m = sweep(mid)
        if m > 0:
            tau_lo, bounds, residual = mid, b, m / mid
        else:
            tau_hi = mid
            if m != -INF and -m / mid < residual:
                bounds, residual = b, -m / mid
        if residual < rtol * 1e-3:
            break
    if residual > rtol:
        raise ConvergenceError("equal-duration boundaries did not converge", residual)
    return SnrPartition((*bounds, INF))
