"""Threshold-driven setting switching as a Markov chain over (setting, state).

At the end of a period that used setting s_r and saw ``l`` erroneous frames,
the transmitter moves to s_(r-1) if ``l <= down[r]``, to s_(r+1) if
``l > up[r]``, and stays otherwise.  The chain below is indexed by period
start pairs ``m = r * N + i``.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .channel import FsmcChannel
from .prediction import ErrorCountDistribution


class ThresholdError(ValueError):
    pass


@dataclass(frozen=True)
class ThresholdSet:
    """Integer error-count thresholds ``down[r]`` (to s_(r-1)) and ``up[r]`` (to s_(r+1)).

    ``down[0] == -1`` and ``up[-1] == M`` are fixed sentinels.  Free
    coordinates are ordered ``down[1..R-1]`` followed by ``up[0..R-2]``.
    """

    down: tuple[int, ...]
    up: tuple[int, ...]
    horizon: int

    def __post_init__(self):
        object.__setattr__(self, "down", tuple(int(x) for x in self.down))
        object.__setattr__(self, "up", tuple(int(x) for x in self.up))
        R, M = len(self.down), self.horizon
        if len(self.up) != R or R < 1:
            raise ThresholdError("down and up must both have R >= 1 entries")
        if self.down[0] != -1 or self.up[-1] != M:
            raise ThresholdError(f"sentinels must be down[0] = -1 and up[R-1] = {M}")
        for r in range(R):
            if not -1 <= self.down[r] <= self.up[r] <= M:
                raise ThresholdError(
                    f"s{r + 1}: need -1 <= down ({self.down[r]}) <= up ({self.up[r]}) <= {M}"
                )

    @classmethod
    def no_switching(cls, n_settings: int, horizon: int) -> "ThresholdSet":
        return cls((-1,) * n_settings, (horizon,) * n_settings, horizon)

    @classmethod
    def from_free(cls, free: Sequence[int], n_settings: int, horizon: int) -> "ThresholdSet":
        k = n_settings - 1
        return cls((-1, *free[:k]), (*free[k:], horizon), horizon)

    @property
    def n_settings(self) -> int:
        return len(self.down)

    def free(self) -> tuple[int, ...]:
        return self.down[1:] + self.up[:-1]

    def fractional(self) -> tuple[tuple[float, ...], tuple[float, ...]]:
        """The same thresholds as FER fractions ``L / M``."""
        M = self.horizon
        return tuple(d / M for d in self.down), tuple(u / M for u in self.up)

    def neighbours(self) -> Iterator["ThresholdSet"]:
        """Feasible sets one unit away, coordinate by coordinate, -1 before +1."""
        free = list(self.free())
        for c in range(len(free)):
            for step in (-1, 1):
                cand = free.copy()
                cand[c] += step
                try:
                    yield ThresholdSet.from_free(cand, self.n_settings, self.horizon)
                except ThresholdError:
                    continue


@dataclass(frozen=True)
class InducedChain:
    n_settings: int
    n_states: int
    transition: np.ndarray = field(repr=False)

    def index(self, r: int, i: int) -> int:
        return r * self.n_states + i


def _check(F: ErrorCountDistribution, channel: FsmcChannel, thresholds: ThresholdSet) -> None:
    if F.horizon != thresholds.horizon:
        raise ThresholdError(f"F horizon {F.horizon} != threshold horizon {thresholds.horizon}")
    if F.n_states != channel.n_states or F.n_settings != thresholds.n_settings:
        raise ThresholdError("inconsistent dimensions between F, channel and thresholds")


class ChainBuilder:
    """Precomputed cumulative blocks so a chain costs O((RN)^2) per threshold set.

    ``cum[r, L + 1] = sum_{l <= L} F[r, :, :, l] @ P`` for L = -1..M.
    """

    def __init__(self, F: ErrorCountDistribution, channel: FsmcChannel):
        self.F = F
        self.M = F.horizon
        self.R, self.N = F.n_settings, F.n_states
        cdf = np.cumsum(F.F, axis=3)
        cdf = np.concatenate([np.zeros(cdf.shape[:3] + (1,)), cdf], axis=3)
        self.cum = np.einsum("rikl,kj->rlij", cdf, channel.transition)

    def build(self, thresholds: ThresholdSet) -> np.ndarray:
        R, N, M = self.R, self.N, self.M
        P = np.zeros((R * N, R * N))
        for r in range(R):
            lo = self.cum[r, thresholds.down[r] + 1]
            mid = self.cum[r, thresholds.up[r] + 1]
            full = self.cum[r, M + 1]
            rows = slice(r * N, (r + 1) * N)
            down, stay, up = lo, mid - lo, full - mid
            # sentinels make the out-of-range masses zero; fold any remainder into stay
            if r == 0:
                stay, down = stay + down, None
            if r == R - 1:
                stay, up = stay + up, None
            P[rows, r * N : (r + 1) * N] = stay
            if down is not None:
                P[rows, (r - 1) * N : r * N] = down
            if up is not None:
                P[rows, (r + 1) * N : (r + 2) * N] = up
        return P

    def evaluate(self, start: int, downs: np.ndarray, ups: np.ndarray, xi: np.ndarray, K: int) -> np.ndarray:
        """K-period objective from ``start`` for a batch of threshold sets.

        ``downs`` and ``ups`` are (B, R) integer arrays.  Equivalent to
        ``k_horizon_throughput(build(th), xi, start, K)`` for each row, without
        assembling the chain: a distribution over (s_r, w_i) is pushed one
        period forward through the down/stay/up blocks directly.
        """
        R, N, M = self.R, self.N, self.M
        B = downs.shape[0]
        rr = np.arange(R)
        cd = self.cum[rr, downs + 1]  # (B, R, N, N)
        cu = self.cum[rr, ups + 1]
        cf = self.cum[:, M + 1]
        v = np.asarray(xi, float).reshape(R, N)
        x = np.zeros((B, R, N))
        x[:, start // N, start % N] = 1.0
        total = np.zeros(B)
        for t in range(K):
            total += np.einsum("brn,rn->b", x, v)
            if t + 1 == K:
                break
            a = np.einsum("brn,brnk->brk", x, cd)
            b = np.einsum("brn,brnk->brk", x, cu)
            c = np.einsum("brn,rnk->brk", x, cf)
            y = b - a
            y[:, :-1] += a[:, 1:]
            y[:, 1:] += (c - b)[:, :-1]
            x = y
        return total / K


def build_induced_chain(
    F: ErrorCountDistribution, channel: FsmcChannel, thresholds: ThresholdSet
) -> InducedChain:
    _check(F, channel, thresholds)
    P = ChainBuilder(F, channel).build(thresholds)
    return InducedChain(F.n_settings, F.n_states, P)


def k_horizon_throughput(chain: InducedChain | np.ndarray, xi: np.ndarray, start: int, K: int) -> float:
    """Mean over K periods of the expected per-period throughput from ``start``.

    ``start`` is a flat chain index; ``xi`` is R x N (flattened row-major).
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    P = chain.transition if isinstance(chain, InducedChain) else chain
    v = np.asarray(xi, float).reshape(-1)
    x = np.zeros(P.shape[0])
    x[start] = 1.0
    total = 0.0
    for t in range(K):
        total += x @ v
        if t + 1 < K:
            x = x @ P
    return total / K


def random_threshold_set(n_settings: int, horizon: int, rng: np.random.Generator) -> ThresholdSet:
    R, M = n_settings, horizon
    down, up = [-1] * R, [M] * R
    for r in range(R):
        lo_free, hi_free = r > 0, r < R - 1
        if lo_free and hi_free:
            a, b = sorted(rng.integers(-1, M + 1, size=2))
            down[r], up[r] = int(a), int(b)
        elif lo_free:
            down[r] = int(rng.integers(-1, M + 1))
        elif hi_free:
            up[r] = int(rng.integers(-1, M + 1))
    return ThresholdSet(tuple(down), tuple(up), M)


@dataclass
class SearchTrace:
    """Objective values visited by each restart, for diagnostics."""

    paths: list[list[float]] = field(default_factory=list)


def _neighbour_arrays(down: np.ndarray, up: np.ndarray, M: int) -> tuple[np.ndarray, np.ndarray]:
    """Feasible unit moves as (B, R) arrays, in the order of ``ThresholdSet.neighbours``."""
    R = len(down)
    free = np.concatenate([down[1:], up[:-1]])
    n = len(free)
    cand = np.repeat(free[None], 2 * n, axis=0)
    cand[np.arange(2 * n), np.repeat(np.arange(n), 2)] += np.tile([-1, 1], n)
    downs = np.concatenate([np.full((2 * n, 1), -1), cand[:, : R - 1]], axis=1)
    ups = np.concatenate([cand[:, R - 1 :], np.full((2 * n, 1), M)], axis=1)
    ok = np.all((downs >= -1) & (downs <= ups) & (ups <= M), axis=1)
    return downs[ok], ups[ok]


def local_search_thresholds(
    F: ErrorCountDistribution,
    channel: FsmcChannel,
    xi: np.ndarray,
    start: int,
    K: int,
    restarts: int = 8,
    rng_seed: int | np.random.SeedSequence | None = 0,
    builder: ChainBuilder | None = None,
    trace: SearchTrace | None = None,
) -> tuple[ThresholdSet, float]:
    """Steepest-ascent hill climbing over integer thresholds, best of ``restarts``."""
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    builder = builder or ChainBuilder(F, channel)
    R, M = F.n_settings, F.horizon

    def values(sets: list[ThresholdSet]) -> np.ndarray:
        downs = np.array([th.down for th in sets])
        ups = np.array([th.up for th in sets])
        return builder.evaluate(start, downs, ups, xi, K)

    if R == 1:
        th = ThresholdSet.no_switching(1, M)
        return th, float(values([th])[0])

    rng = np.random.default_rng(rng_seed)
    best, best_val = None, -np.inf
    for _ in range(restarts):
        cur = random_threshold_set(R, M, rng)
        down, up = np.array(cur.down), np.array(cur.up)
        cur_val = float(builder.evaluate(start, down[None], up[None], xi, K)[0])
        path = [cur_val]
        while True:
            downs, ups = _neighbour_arrays(down, up, M)
            if not len(downs):
                break
            vals = builder.evaluate(start, downs, ups, xi, K)
            # first maximum in neighbour order: lowest coordinate, -1 before +1
            j = int(np.argmax(vals))
            if vals[j] <= cur_val:
                break
            down, up, cur_val = downs[j], ups[j], float(vals[j])
            path.append(cur_val)
        if trace is not None:
            trace.paths.append(path)
        if cur_val > best_val:
            best, best_val = ThresholdSet(tuple(down), tuple(up), M), cur_val
    return best, best_val


@dataclass(frozen=True)
class ThresholdTable:
    """Optimised threshold set for every block-start pair (s_r, w_i), 0-based keys."""

    horizon: int
    periods: int
    entries: dict[tuple[int, int], ThresholdSet]
    objective: dict[tuple[int, int], float]

    def lookup(self, r: int, i: int) -> ThresholdSet:
        try:
            return self.entries[(r, i)]
        except KeyError:
            raise ThresholdError(f"threshold table has no entry for (s{r + 1}, w{i + 1})") from None

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        R = next(iter(self.entries.values())).n_settings
        w.writerow(
            ["setting", "state"]
            + [f"L_down_{r + 1}" for r in range(R)]
            + [f"L_up_{r + 1}" for r in range(R)]
            + ["objective"]
        )
        for (r, i) in sorted(self.entries):
            th = self.entries[(r, i)]
            w.writerow([r + 1, i + 1, *th.down, *th.up, f"{self.objective[(r, i)]:.6f}"])
        return out.getvalue()

    @classmethod
    def from_csv(cls, text: str, horizon: int, periods: int) -> "ThresholdTable":
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], [r for r in rows[1:] if r]
        R = sum(1 for h in header if h.startswith("L_down_"))
        entries, objective = {}, {}
        for row in body:
            r, i = int(row[0]) - 1, int(row[1]) - 1
            vals = [int(x) for x in row[2 : 2 + 2 * R]]
            entries[(r, i)] = ThresholdSet(tuple(vals[:R]), tuple(vals[R:]), horizon)
            objective[(r, i)] = float(row[2 + 2 * R])
        return cls(horizon, periods, entries, objective)


def compile_threshold_table(
    F: ErrorCountDistribution,
    channel: FsmcChannel,
    xi: np.ndarray,
    K: int,
    restarts: int = 8,
    rng_seed: int = 0,
    workers: int | None = None,
) -> ThresholdTable:
    """Run the local search for every block-start pair.

    Each start state gets its own child seed, so the table does not depend on
    evaluation order or on ``workers``.
    """
    builder = ChainBuilder(F, channel)
    R, N = F.n_settings, F.n_states
    seeds = np.random.SeedSequence(rng_seed).spawn(R * N)

    def solve(m: int):
        return local_search_thresholds(F, channel, xi, m, K, restarts, seeds[m], builder)

    if workers and workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(solve, range(R * N)))
    else:
        results = [solve(m) for m in range(R * N)]
    entries = {(m // N, m % N): th for m, (th, _) in enumerate(results)}
    objective = {(m // N, m % N): val for m, (_, val) in enumerate(results)}
    return ThresholdTable(F.horizon, K, entries, objective)
