"""Runtime decision rules and their analytical long-run throughput.

Ties between settings are broken toward the higher index (lower rate).

Throughput figures are per transmitted frame: with ``active`` given, the
expected delivered bits are divided by the stationary probability of being in
a transmitting state.  Passing ``active=None`` counts every frame slot.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import connected_components

from .adaptation import (
    ChainBuilder,
    ThresholdSet,
    ThresholdTable,
    k_horizon_throughput,
)
from .channel import FsmcChannel
from .link import FerTable, SettingTable, first_frame_throughputs
from .prediction import ErrorCountDistribution

TIE_RTOL = 1e-12


def _argmax_robust(values: np.ndarray) -> int:
    """Index of the maximum, preferring the largest index among ties."""
    top = values.max()
    tied = np.flatnonzero(values >= top - TIE_RTOL * max(1.0, abs(top)))
    return int(tied[-1])


def prada_a_select(csi_state: int, xi: np.ndarray) -> int:
    """Setting maximising the expected throughput of the coming period."""
    return _argmax_robust(xi[:, csi_state])


def prada_b_switch(current: int, errors: int, thresholds: ThresholdSet) -> int:
    """Next setting after a period with ``errors`` erroneous frames."""
    if errors <= thresholds.down[current]:
        return current - 1
    if errors > thresholds.up[current]:
        return current + 1
    return current


def prada_b_threshold_update(csi_state: int, current: int, table: ThresholdTable) -> ThresholdSet:
    return table.lookup(current, csi_state)


def greedy_first_frame_select(
    csi_state: int, settings: SettingTable, fer: FerTable, transition: np.ndarray | None = None
) -> int:
    """Setting maximising the expected throughput of the next frame only.

    When several settings tie (for instance in a state where every FER is 1)
    and ``transition`` is given, the tie is broken by the expected throughput
    of the frame after, one channel step ahead; remaining ties go to the
    higher index.
    """
    first = first_frame_throughputs(settings, fer)
    values = first[:, csi_state]
    top = values.max()
    tied = np.flatnonzero(values >= top - TIE_RTOL * max(1.0, abs(top)))
    if len(tied) > 1 and transition is not None:
        ahead = first[tied] @ transition[csi_state]
        return int(tied[_argmax_robust(ahead)])
    return int(tied[-1])


@dataclass
class PolicyState:
    """Mutable per-run state of a policy; owned by one simulation lane."""

    current_setting: int = 0
    frames_into_period: int = 0
    error_count_this_period: int = 0
    periods_into_block: int = 0
    active_thresholds: ThresholdSet | None = None
    active_doppler_model: int = 0


def _normaliser(channel: FsmcChannel, active: np.ndarray | None) -> float:
    if active is None:
        return 1.0
    return float(channel.stationary @ active.astype(float))


def analytical_throughput_fixed(
    channel: FsmcChannel, settings: SettingTable, fer: FerTable, r: int, active: np.ndarray | None = None
) -> float:
    bits = settings.rates[r] * float(channel.stationary @ (1.0 - fer.fer[r]))
    return bits / _normaliser(channel, active)


def analytical_throughput_prada_a(
    channel: FsmcChannel, xi: np.ndarray, active: np.ndarray | None = None
) -> float:
    """Stationary average of the chosen setting's period throughput.

    Period starts are distributed as the channel's stationary law, which is
    invariant under every power of the transition matrix.
    """
    picks = [prada_a_select(i, xi) for i in range(channel.n_states)]
    bits = sum(channel.stationary[i] * xi[r, i] for i, r in enumerate(picks))
    return float(bits) / _normaliser(channel, active)


def analytical_throughput_greedy(
    channel: FsmcChannel,
    settings: SettingTable,
    fer: FerTable,
    xi: np.ndarray,
    active: np.ndarray | None = None,
) -> float:
    """Greedy first-frame choice held for a whole period; ``xi`` at that period length."""
    picks = [
        greedy_first_frame_select(i, settings, fer, channel.transition) for i in range(channel.n_states)
    ]
    bits = sum(channel.stationary[i] * xi[r, i] for i, r in enumerate(picks))
    return float(bits) / _normaliser(channel, active)


@dataclass(frozen=True)
class BlockAnalysis:
    throughput: float
    block_stationary: np.ndarray | None
    simulated: bool


def block_chain(
    F: ErrorCountDistribution, channel: FsmcChannel, table: ThresholdTable, K: int
) -> np.ndarray:
    """Block-to-block transition matrix: row m is row m of ``P(theta(m))^K``."""
    builder = ChainBuilder(F, channel)
    R, N = F.n_settings, F.n_states
    Q = np.zeros((R * N, R * N))
    cache: dict[ThresholdSet, np.ndarray] = {}
    for m in range(R * N):
        th = table.lookup(m // N, m % N)
        if th not in cache:
            cache[th] = np.linalg.matrix_power(builder.build(th), K)
        Q[m] = cache[th][m]
    return Q


def unique_stationary(Q: np.ndarray) -> np.ndarray | None:
    """Stationary law if the chain has exactly one closed class, else None."""
    n = Q.shape[0]
    n_comp, labels = connected_components(Q > 0, directed=True, connection="strong")
    closed = []
    for c in range(n_comp):
        members = labels == c
        if Q[np.ix_(members, ~members)].sum() == 0.0:
            closed.append(c)
    if len(closed) != 1:
        return None
    A = np.vstack([Q.T - np.eye(n), np.ones((1, n))])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    mu, *_ = np.linalg.lstsq(A, b, rcond=None)
    mu = np.clip(mu, 0.0, None)
    return mu / mu.sum()


def analytical_throughput_prada_b(
    channel: FsmcChannel,
    F: ErrorCountDistribution,
    xi: np.ndarray,
    table: ThresholdTable,
    K: int,
    active: np.ndarray | None = None,
    fallback_periods: int = 10**6,
    seed: int = 0,
) -> BlockAnalysis:
    """Long-run throughput of the block process driven by a threshold table.

    Each block starts in some (s_r, w_i), uses that pair's threshold set for K
    periods and lands in the next block start.  The per-block expectation is
    averaged under the stationary law of that block chain.  If the block chain
    has more than one closed class the average is estimated by simulating the
    block chain instead and ``simulated`` is set.
    """
    Q = block_chain(F, channel, table, K)
    R, N = F.n_settings, F.n_states
    builder = ChainBuilder(F, channel)
    per_block = np.array(
        [
            k_horizon_throughput(builder.build(table.lookup(m // N, m % N)), xi, m, K)
            for m in range(R * N)
        ]
    )
    norm = _normaliser(channel, active)
    mu = unique_stationary(Q)
    if mu is not None:
        return BlockAnalysis(float(mu @ per_block) / norm, mu, False)

    rng = np.random.default_rng(seed)
    n_blocks = max(1, fallback_periods // K)
    cum = np.cumsum(Q, axis=1)
    u = rng.random(n_blocks)
    # first block: s_1 in a state drawn from the channel's stationary law
    m = int(np.searchsorted(np.cumsum(channel.stationary), rng.random(), side="right"))
    m = min(m, N - 1)
    total = 0.0
    for b in range(n_blocks):
        total += per_block[m]
        m = min(int(np.searchsorted(cum[m], u[b], side="right")), R * N - 1)
    return BlockAnalysis(total / n_blocks / norm, None, True)
