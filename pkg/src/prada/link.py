"""Modulation/coding settings and their per-state frame error rates."""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence, TextIO

import numpy as np
from scipy.integrate import quad

from .channel import INF, ConvergenceError, FsmcChannel


class LinkTableError(ValueError):
    """Raised when settings or FER data are malformed."""


@dataclass(frozen=True)
class Setting:
    label: str
    frame_symbols: int
    data_bits_per_frame: int


@dataclass(frozen=True)
class SettingTable:
    """Settings s_1..s_R, ordered from highest to lowest data rate."""

    settings: tuple[Setting, ...]

    def __post_init__(self):
        object.__setattr__(self, "settings", tuple(self.settings))
        if not self.settings:
            raise LinkTableError("at least one setting is required")
        rates = [s.data_bits_per_frame for s in self.settings]
        for r in range(1, len(rates)):
            if rates[r] > rates[r - 1]:
                raise LinkTableError(
                    f"data rates must be non-increasing: s_{r + 1} ({rates[r]}) > s_{r} ({rates[r - 1]})"
                )

    @classmethod
    def from_records(cls, records: Iterable[dict]) -> "SettingTable":
        return cls(
            tuple(
                Setting(str(d["label"]), int(d["frame_symbols"]), int(d["data_bits_per_frame"]))
                for d in records
            )
        )

    def __len__(self) -> int:
        return len(self.settings)

    @property
    def ids(self) -> list[str]:
        return [f"s{r + 1}" for r in range(len(self.settings))]

    @property
    def rates(self) -> np.ndarray:
        return np.array([s.data_bits_per_frame for s in self.settings], dtype=float)


@dataclass(frozen=True)
class FerTable:
    """R x N matrix of frame error rates, ``fer[r, i]`` for setting r in state i."""

    fer: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.fer.setflags(write=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.fer.shape


def validate_fer(fer: np.ndarray, strict_monotone: bool = True) -> None:
    bad = np.argwhere(~((fer >= 0.0) & (fer <= 1.0)))
    if len(bad):
        r, i = bad[0]
        raise LinkTableError(f"FER out of [0, 1] at state {i + 1}, setting s{r + 1}: {fer[r, i]!r}")
    # a lower-rate setting must never be worse than a higher-rate one in the same state
    viol = np.argwhere(np.diff(fer, axis=0) > 0.0)
    if len(viol):
        r, i = viol[0]
        msg = (
            f"FER increases from s{r + 1} to s{r + 2} in state {i + 1} "
            f"({fer[r, i]} -> {fer[r + 1, i]})"
        )
        if strict_monotone:
            raise LinkTableError(msg)
        warnings.warn(msg, stacklevel=3)


def load_fer_table(
    source: TextIO | str,
    settings: SettingTable,
    channel: FsmcChannel | int,
    strict_monotone: bool = True,
) -> FerTable:
    """Read a CSV with one header row of setting ids and one row per channel state."""
    if isinstance(source, str):
        source = io.StringIO(source)
    n_states = channel if isinstance(channel, int) else channel.n_states
    rows = [row for row in csv.reader(source) if row and any(c.strip() for c in row)]
    if not rows:
        raise LinkTableError("empty FER table")
    header, body = rows[0], rows[1:]
    if len(header) != len(settings):
        raise LinkTableError(f"header has {len(header)} columns, expected {len(settings)} settings")
    if len(body) != n_states:
        raise LinkTableError(f"FER table has {len(body)} state rows, channel has {n_states} states")
    values = np.empty((len(settings), n_states))
    for i, row in enumerate(body):
        if len(row) != len(settings):
            raise LinkTableError(f"row {i + 1}: {len(row)} values, expected {len(settings)}")
        for r, cell in enumerate(row):
            try:
                values[r, i] = float(cell)
            except ValueError:
                raise LinkTableError(f"row {i + 1}, column {r + 1}: not a number: {cell!r}") from None
    validate_fer(values, strict_monotone)
    return FerTable(values)


def dump_fer_table(fer: FerTable, settings: SettingTable) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(settings.ids)
    for col in fer.fer.T:
        w.writerow([f"{v:.4f}" for v in col])
    return out.getvalue()


def state_fer_from_curve(
    curve: Callable[[float], float],
    state_index: int,
    channel: FsmcChannel,
    rtol: float = 1e-8,
) -> float:
    """Average a frame-error curve over the SNR interval of one state.

    The curve is weighted by the exponential SNR density restricted to the
    interval.  ``state_index`` is 1-based.  For the open last interval the
    substitution ``gamma = lo + g0 * t / (1 - t)`` maps it onto ``[0, 1)``.
    """
    n = channel.n_states
    if not 1 <= state_index <= n:
        raise IndexError(f"state index {state_index} outside 1..{n}")
    lo, hi = channel.partition.boundaries[state_index - 1 : state_index + 1]
    g0 = channel.avg_snr

    if hi == INF:
        # exp(-(lo + g0 u)/g0)/g0 * g0 du, renormalised by exp(-lo/g0); u = t/(1-t)
        def weight(t):
            u = t / (1.0 - t)
            return math.exp(-u) / (1.0 - t) ** 2

        def snr(t):
            return lo + g0 * t / (1.0 - t)

        a, b = 0.0, 1.0
    else:
        # density relative to exp(-lo/g0), keeps the weight O(1) for large lo
        def weight(x):
            return math.exp(-(x - lo) / g0)

        def snr(x):
            return x

        a, b = lo, hi

    def integrand(x):
        if hi == INF and x >= 1.0:
            return 0.0
        return curve(snr(x)) * weight(x)

    num, num_err = quad(integrand, a, b, epsabs=0.0, epsrel=rtol, limit=200)
    den, den_err = quad(lambda x: 0.0 if hi == INF and x >= 1.0 else weight(x), a, b,
                        epsabs=0.0, epsrel=rtol, limit=200)
    if den <= 0:
        raise ConvergenceError("state interval carries no probability mass", den_err)
    if num_err > max(rtol * abs(num), 1e-14) * 100 or den_err > rtol * den * 100:
        raise ConvergenceError("FER quadrature did not reach tolerance", max(num_err, den_err))
    return min(max(num / den, 0.0), 1.0)


def first_frame_throughput(r: int, i: int, settings: SettingTable, fer: FerTable) -> float:
    """Expected data bits of one frame with setting ``r`` in state ``i`` (0-based)."""
    R, N = fer.shape
    if not (0 <= r < R and 0 <= i < N):
        raise IndexError(f"(setting, state) = ({r}, {i}) outside {R}x{N}")
    return settings.settings[r].data_bits_per_frame * (1.0 - fer.fer[r, i])


def first_frame_throughputs(settings: SettingTable, fer: FerTable) -> np.ndarray:
    """All first-frame throughputs as an R x N array."""
    return settings.rates[:, None] * (1.0 - fer.fer)


def active_mask(n_states: int, silent_states: Sequence[int]) -> np.ndarray:
    """Boolean mask of states (0-based) in which the transmitter sends frames.

    ``silent_states`` holds 1-based state indices.
    """
    mask = np.ones(n_states, dtype=bool)
    for s in silent_states:
        if not 1 <= s <= n_states:
            raise LinkTableError(f"silent state {s} outside 1..{n_states}")
        mask[s - 1] = False
    return mask
