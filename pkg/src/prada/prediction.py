"""Error-count distributions over an M-frame adaptation period.

A polynomial in the formal variable ``w`` is a dense coefficient array whose
index is the power of ``w``; a matrix of polynomials is an ``(N, N, D+1)``
array.  With ``psi`` the diagonal matrix of per-state Bernoulli generating
functions ``(1 - E) + E w`` and ``G = P psi``, the product ``psi G^(M-1)``
holds in entry (i, k) the generating function of the number of frame errors
jointly with the channel ending in state k, given that it started in state i.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .channel import FsmcChannel
from .link import FerTable, SettingTable


def poly_matmul(a: np.ndarray, b: np.ndarray, max_degree: int | None = None) -> np.ndarray:
    """Product of two polynomial matrices, truncated at ``max_degree``."""
    deg = a.shape[2] - 1 + b.shape[2] - 1
    if max_degree is not None:
        deg = min(deg, max_degree)
    out = np.zeros((a.shape[0], b.shape[1], deg + 1))
    for p in range(b.shape[2]):
        if p > deg:
            break
        # w^p term of b shifts a's coefficients up by p
        term = np.einsum("ijl,jk->ikl", a[:, :, : deg + 1 - p], b[:, :, p])
        out[:, :, p : p + term.shape[2]] += term
    return out


def psi_matrix(r: int, fer: FerTable) -> np.ndarray:
    """Diagonal polynomial matrix of single-frame error generating functions."""
    e = fer.fer[r]
    n = e.shape[0]
    psi = np.zeros((n, n, 2))
    idx = np.arange(n)
    psi[idx, idx, 0] = 1.0 - e
    psi[idx, idx, 1] = e
    return psi


def g_matrix(transition: np.ndarray, psi: np.ndarray) -> np.ndarray:
    """``P psi``: entry (i, j) is ``P[i, j] * psi_j``."""
    diag = np.einsum("jjl->jl", psi)
    return transition[:, :, None] * diag[None, :, :]


def error_count_distribution(channel: FsmcChannel, fer: FerTable, r: int, horizon: int) -> np.ndarray:
    """``F[i, k, l]`` for setting ``r``: P(l errors, period ends in k | starts in i)."""
    if horizon < 1:
        raise ValueError("horizon M must be >= 1")
    psi = psi_matrix(r, fer)
    g = g_matrix(channel.transition, psi)
    h = psi
    for _ in range(horizon - 1):
        h = poly_matmul(h, g, max_degree=horizon)
    if h.shape[2] < horizon + 1:
        h = np.concatenate([h, np.zeros(h.shape[:2] + (horizon + 1 - h.shape[2],))], axis=2)
    return h


@dataclass(frozen=True)
class ErrorCountDistribution:
    """Joint law of error count and end state for every setting.

    ``F[r, i, k, l]`` with r the setting, i the start state, k the state of
    the last frame of the period and l the number of erroneous frames.
    """

    horizon: int
    F: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.F.setflags(write=False)

    @property
    def n_settings(self) -> int:
        return self.F.shape[0]

    @property
    def n_states(self) -> int:
        return self.F.shape[1]

    def mean_errors(self) -> np.ndarray:
        """Expected error count per (setting, start state)."""
        return np.einsum("rikl,l->ri", self.F, np.arange(self.horizon + 1))


_CACHE: dict[str, ErrorCountDistribution] = {}


def _content_key(channel: FsmcChannel, fer: FerTable, horizon: int) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(channel.transition, dtype=float).tobytes())
    h.update(np.ascontiguousarray(fer.fer, dtype=float).tobytes())
    h.update(str(horizon).encode())
    return h.hexdigest()


def error_count_distributions(channel: FsmcChannel, fer: FerTable, horizon: int) -> ErrorCountDistribution:
    """All settings at once; memoised on the content of the inputs."""
    if fer.shape[1] != channel.n_states:
        raise ValueError(f"FER table has {fer.shape[1]} states, channel has {channel.n_states}")
    key = _content_key(channel, fer, horizon)
    hit = _CACHE.get(key)
    if hit is None:
        F = np.stack([error_count_distribution(channel, fer, r, horizon) for r in range(fer.shape[0])])
        hit = _CACHE[key] = ErrorCountDistribution(horizon, F)
    return hit


def clear_cache() -> None:
    _CACHE.clear()


def expected_period_throughput(F: ErrorCountDistribution, settings: SettingTable) -> np.ndarray:
    """``xi[r, i]``: expected data bits per frame over one period started in (s_r, w_i)."""
    M = F.horizon
    if len(settings) != F.n_settings:
        raise ValueError("settings and error-count distribution disagree on R")
    frac = (M - np.arange(M + 1)) / M
    return settings.rates[:, None] * np.einsum("rikl,l->ri", F.F, frac)


def expected_active_fraction(channel: FsmcChannel, active: np.ndarray, horizon: int) -> np.ndarray:
    """Expected fraction of the M frames spent in transmitting states, per start state."""
    acc = np.zeros(channel.n_states)
    row = np.eye(channel.n_states)
    for _ in range(horizon):
        acc += row @ active.astype(float)
        row = row @ channel.transition
    return acc / horizon
