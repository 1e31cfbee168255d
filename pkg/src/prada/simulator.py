"""Frame-level Monte Carlo of adaptive and fixed transmission over an FSMC.

All scenarios of a comparison see the same channel trace and, by default,
the same per-frame uniform variates (common random numbers).  Frame ``t``
succeeds iff ``u[t] >= E[r, state[t]]``, so a setting with a lower FER in the
current state succeeds whenever a higher-FER one does.

Long runs are streamed in chunks aligned to every period, block and window
boundary; the random streams are consumed sequentially, so results do not
depend on the chunk size.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numba
import numpy as np

from .adaptation import ThresholdTable, compile_threshold_table
from .channel import FsmcChannel
from .link import FerTable, SettingTable
from .policies import greedy_first_frame_select, prada_a_select
from .prediction import error_count_distributions, expected_period_throughput

POLICY_KINDS = ("fixed", "prada_a", "prada_b", "greedy")
DEFAULT_CHUNK = 1 << 20


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    kind: str
    total_frames: int
    M: int = 1
    K: int = 1
    setting: int = 0  # 0-based, fixed policy only

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ScenarioError(f"unknown policy kind {self.kind!r}; expected one of {POLICY_KINDS}")
        if self.M < 1 or self.K < 1:
            raise ScenarioError("M and K must be >= 1")
        if self.kind != "prada_b" and self.K != 1:
            raise ScenarioError(f"{self.name}: K applies to prada_b only")
        if self.total_frames < 1 or self.total_frames % (self.K * self.M):
            raise ScenarioError(
                f"{self.name}: total_frames {self.total_frames} is not a multiple of K*M = {self.K * self.M}"
            )

    @property
    def block_frames(self) -> int:
        return self.K * self.M

    @property
    def csi_feedback_interval(self) -> int | None:
        """Frames between CSI reports (None: the policy never uses CSI)."""
        if self.kind == "fixed":
            return None
        return self.K * self.M


@dataclass(frozen=True)
class LinkSystem:
    """Channel-independent link description shared by every scenario."""

    settings: SettingTable
    fer: FerTable
    active: np.ndarray  # bool per state; False where the transmitter stays silent

    @property
    def n_settings(self) -> int:
        return len(self.settings)


@dataclass(frozen=True)
class PolicyArtifacts:
    """Offline tables one policy needs for one channel model.

    ``choice[i]`` is the setting picked at a period start in state i by the
    CSI-only policies; ``table`` drives prada_b.
    """

    xi: np.ndarray | None = None
    table: ThresholdTable | None = None
    choice: np.ndarray | None = None


def prepare_artifacts(
    scenario: ScenarioConfig,
    channel: FsmcChannel,
    system: LinkSystem,
    restarts: int = 8,
    optimizer_seed: int = 0,
) -> PolicyArtifacts:
    N = channel.n_states
    if scenario.kind == "fixed":
        return PolicyArtifacts()
    if scenario.kind == "greedy":
        choice = [greedy_first_frame_select(i, system.settings, system.fer, channel.transition) for i in range(N)]
        return PolicyArtifacts(choice=np.array(choice))
    F = error_count_distributions(channel, system.fer, scenario.M)
    xi = expected_period_throughput(F, system.settings)
    if scenario.kind == "prada_a":
        return PolicyArtifacts(xi=xi, choice=np.array([prada_a_select(i, xi) for i in range(N)]))
    table = compile_threshold_table(F, channel, xi, scenario.K, restarts, optimizer_seed)
    return PolicyArtifacts(xi=xi, table=table)


@dataclass
class SimulationReport:
    scenario: str
    average_throughput: float  # data bits per transmitted frame
    slot_throughput: float  # data bits per frame slot, silent frames included
    delivered_bits: int
    total_frames: int
    transmitted_frames: int
    frame_error_total: int
    window_series: np.ndarray = field(repr=False)
    window_active: np.ndarray = field(repr=False)  # transmitted frames per window
    cdf_samples: np.ndarray = field(repr=False)
    setting_occupancy: np.ndarray = field(repr=False)
    settings_path: np.ndarray = field(repr=False)  # setting used in each period
    seeds: dict = field(default_factory=dict)
    config_hash: str = ""

    @property
    def fer(self) -> float:
        return self.frame_error_total / self.total_frames

    def standard_error(self, n_batches: int = 50) -> float:
        """Batch-means standard error of ``average_throughput``.

        Windows are grouped into ``n_batches`` consecutive batches and the
        bits-per-transmitted-frame ratio of each batch is treated as one
        sample; batches much longer than the channel coherence time make the
        samples nearly independent.
        """
        n = len(self.window_series) // n_batches * n_batches
        if n_batches < 2 or n == 0:
            return math.nan
        bits = np.nan_to_num(self.window_series[:n]) * self.window_active[:n]
        act = self.window_active[:n].reshape(n_batches, -1).sum(axis=1)
        ratio = bits.reshape(n_batches, -1).sum(axis=1) / np.maximum(act, 1)
        return float(ratio.std(ddof=1) / math.sqrt(n_batches))

    def fingerprint(self) -> str:
        """Hash of every numeric field, for reproducibility checks."""
        h = hashlib.sha256()
        for arr in (self.window_series, self.window_active, self.cdf_samples, self.setting_occupancy,
                    self.settings_path):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(
            json.dumps(
                [self.average_throughput, self.slot_throughput, self.delivered_bits,
                 self.transmitted_frames, self.frame_error_total],
            ).encode()
        )
        return h.hexdigest()


# -- channel traces ---------------------------------------------------------


def _cumulative_rows(P: np.ndarray) -> np.ndarray:
    cum = np.cumsum(P, axis=1)
    cum[:, -1] = np.inf  # guard against rounding in the last column
    return cum


@numba.njit(cache=True)
def _markov_fill(cum_stack, frame_model, u, prev, out):
    n = cum_stack.shape[1]
    s = prev
    for t in range(u.shape[0]):
        row = cum_stack[frame_model[t], s]
        j = 0
        while j < n - 1 and row[j] <= u[t]:
            j += 1
        s = j
        out[t] = s
    return s


class _TraceStream:
    """Sequential channel-state generator over possibly varying models."""

    def __init__(self, channels: Sequence[FsmcChannel], rng: np.random.Generator, first_model: int = 0):
        self.cum = np.stack([_cumulative_rows(ch.transition) for ch in channels])
        self.init = np.cumsum(channels[first_model].stationary)
        self.rng = rng
        self.prev = -1

    def next(self, frame_model: np.ndarray) -> np.ndarray:
        n = len(frame_model)
        u = self.rng.random(n)
        out = np.empty(n, dtype=np.int64)
        if n == 0:
            return out
        if self.prev < 0:
            s0 = min(int(np.searchsorted(self.init, u[0], side="right")), len(self.init) - 1)
            out[0] = s0
            self.prev = _markov_fill(self.cum, frame_model[1:], u[1:], s0, out[1:]) if n > 1 else s0
        else:
            self.prev = _markov_fill(self.cum, frame_model, u, self.prev, out)
        return out


def sample_channel_trace(
    channel: FsmcChannel, n_frames: int, seed: int | np.random.Generator | np.random.SeedSequence
) -> np.ndarray:
    """State index per frame: first from the stationary law, then Markov steps."""
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return _TraceStream([channel], rng).next(np.zeros(n_frames, dtype=np.int64))


def sample_varying_trace(
    channels: Sequence[FsmcChannel],
    block_model: np.ndarray,
    block_frames: int,
    n_frames: int,
    seed: int | np.random.Generator | np.random.SeedSequence,
) -> np.ndarray:
    """Trace whose transition matrix is ``channels[block_model[b]]`` inside block b.

    The step into frame t uses the model of the block containing t.
    """
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    frame_model = np.repeat(np.asarray(block_model, dtype=np.int64), block_frames)[:n_frames]
    return _TraceStream(channels, rng, int(block_model[0])).next(frame_model)


# -- policy lanes -----------------------------------------------------------


@numba.njit(cache=True)
def _prada_b_periods(err_counts, csi, model, down, up, K, setting, phase, cur_down, cur_up, out):
    """Setting per period for prada_b; returns the state carried to the next chunk."""
    for p in range(csi.shape[0]):
        if phase == 0:
            m, s = model[p], csi[p]
            for q in range(down.shape[3]):
                cur_down[q] = down[m, setting, s, q]
                cur_up[q] = up[m, setting, s, q]
        out[p] = setting
        l = err_counts[setting, p]
        if l <= cur_down[setting]:
            setting -= 1
        elif l > cur_up[setting]:
            setting += 1
        phase += 1
        if phase == K:
            phase = 0
    return setting, phase


class _Lane:
    """Streaming accumulator for one scenario."""

    def __init__(self, scenario: ScenarioConfig, system: LinkSystem,
                 artifacts: Sequence[PolicyArtifacts], window: int):
        self.sc = scenario
        self.system = system
        self.window = window
        self.fer = system.fer.fer
        self.rates = system.settings.rates.astype(np.int64)
        kind = scenario.kind
        if kind == "prada_b":
            if any(a.table is None for a in artifacts):
                raise ScenarioError(f"{scenario.name}: prada_b needs a threshold table per channel model")
            R, N = self.fer.shape
            self.down = np.empty((len(artifacts), R, N, R), dtype=np.int64)
            self.up = np.empty_like(self.down)
            for j, a in enumerate(artifacts):
                for r in range(R):
                    for i in range(N):
                        th = a.table.lookup(r, i)
                        self.down[j, r, i], self.up[j, r, i] = th.down, th.up
            self.b_state = (0, 0)  # initial setting s_1, start of a block
            self.cur_down = np.zeros(R, dtype=np.int64)
            self.cur_up = np.zeros(R, dtype=np.int64)
        elif kind in ("prada_a", "greedy"):
            if any(a.choice is None for a in artifacts):
                raise ScenarioError(f"{scenario.name}: {kind} needs a per-state choice per channel model")
            self.choice = np.stack([a.choice for a in artifacts]).astype(np.int64)
        self.bits = 0
        self.errors = 0
        self.active_frames = 0
        self.frames = 0
        self.occupancy = np.zeros(len(self.rates), dtype=np.int64)
        self.windows: list[np.ndarray] = []
        self.window_active: list[np.ndarray] = []
        self.paths: list[np.ndarray] = []

    def _periods(self, trace, u, frame_model):
        M = self.sc.M
        starts = slice(0, None, M)
        kind = self.sc.kind
        n_p = len(trace) // M
        if kind == "fixed":
            return np.full(n_p, self.sc.setting, dtype=np.int64)
        if kind in ("prada_a", "greedy"):
            return self.choice[frame_model[starts], trace[starts]]
        err_counts = (u[None, :] < self.fer[:, trace]).reshape(len(self.rates), n_p, M).sum(axis=2)
        out = np.empty(n_p, dtype=np.int64)
        setting, phase = _prada_b_periods(
            err_counts, trace[starts], frame_model[starts], self.down, self.up, self.sc.K,
            self.b_state[0], self.b_state[1], self.cur_down, self.cur_up, out,
        )
        self.b_state = (int(setting), int(phase))
        return out

    def consume(self, trace: np.ndarray, u: np.ndarray, frame_model: np.ndarray) -> None:
        M, W = self.sc.M, self.window
        sp = self._periods(trace, u, frame_model)
        r_frame = np.repeat(sp, M)
        err = u < self.fer[r_frame, trace]
        bits = np.where(err, 0, self.rates[r_frame])
        active = self.system.active[trace]
        self.bits += int(bits.sum())
        self.errors += int(err.sum())
        self.active_frames += int(active.sum())
        self.frames += len(trace)
        self.occupancy += np.bincount(sp, minlength=len(self.rates)) * M
        n_w = len(trace) // W
        wb = bits[: n_w * W].reshape(n_w, W).sum(axis=1)
        wa = active[: n_w * W].reshape(n_w, W).sum(axis=1)
        self.windows.append(np.where(wa > 0, wb / np.maximum(wa, 1), np.nan))
        self.window_active.append(wa.astype(np.int32))
        self.paths.append(sp.astype(np.int8))

    def report(self) -> SimulationReport:
        series = np.concatenate(self.windows) if self.windows else np.zeros(0)
        return SimulationReport(
            scenario=self.sc.name,
            average_throughput=self.bits / self.active_frames if self.active_frames else math.nan,
            slot_throughput=self.bits / self.frames,
            delivered_bits=self.bits,
            total_frames=self.frames,
            transmitted_frames=self.active_frames,
            frame_error_total=self.errors,
            window_series=series,
            window_active=np.concatenate(self.window_active) if self.window_active else np.zeros(0, np.int32),
            cdf_samples=np.sort(series[~np.isnan(series)]),
            setting_occupancy=self.occupancy / self.frames,
            settings_path=np.concatenate(self.paths) if self.paths else np.zeros(0, np.int8),
            config_hash=hashlib.sha256(json.dumps(asdict(self.sc), sort_keys=True).encode()).hexdigest()[:16],
        )


def run_scenario(
    scenario: ScenarioConfig,
    trace: np.ndarray,
    uniforms: np.ndarray,
    system: LinkSystem,
    artifacts: Sequence[PolicyArtifacts] | PolicyArtifacts,
    frame_model: np.ndarray | None = None,
    window: int = 30,
) -> SimulationReport:
    """Drive one policy over an in-memory trace and uniform stream.

    ``artifacts[j]`` holds the tables for channel model j and
    ``frame_model[t]`` names the model active at frame t (all zeros when the
    channel is fixed).
    """
    T = scenario.total_frames
    if len(trace) < T or len(uniforms) < T:
        raise ScenarioError("trace or uniform stream shorter than total_frames")
    if T % window:
        raise ScenarioError(f"total_frames {T} is not a multiple of the window {window}")
    if isinstance(artifacts, PolicyArtifacts):
        artifacts = [artifacts]
    if frame_model is None:
        frame_model = np.zeros(T, dtype=np.int64)
    lane = _Lane(scenario, system, artifacts, window)
    lane.consume(np.asarray(trace[:T], dtype=np.int64), uniforms[:T], np.asarray(frame_model[:T], dtype=np.int64))
    return lane.report()


# -- comparisons ------------------------------------------------------------


def _check_frames(scenarios: Sequence[ScenarioConfig], window: int) -> int:
    if not scenarios:
        raise ScenarioError("no scenarios given")
    totals = {s.total_frames for s in scenarios}
    if len(totals) != 1:
        raise ScenarioError(f"scenarios disagree on total_frames: {sorted(totals)}")
    T = totals.pop()
    if T % window:
        raise ScenarioError(f"total_frames {T} is not a multiple of the window {window}")
    return T


def _chunk_size(scenarios: Sequence[ScenarioConfig], extra: Sequence[int], target: int) -> int:
    step = math.lcm(*(s.block_frames for s in scenarios), *extra)
    return step * max(1, target // step)


def _run_streams(
    scenarios, system, artifacts_per_scenario, channels, schedule, block_frames,
    master_seed, shared_error_stream, window, chunk,
) -> list[SimulationReport]:
    T = scenarios[0].total_frames
    ss = np.random.SeedSequence(master_seed)
    n_err = 1 if shared_error_stream else len(scenarios)
    channel_ss, *error_ss = ss.spawn(1 + n_err)
    err_rngs = [np.random.default_rng(s) for s in error_ss]
    lanes = [_Lane(sc, system, artifacts_per_scenario[j], window) for j, sc in enumerate(scenarios)]
    traces = _TraceStream(channels, np.random.default_rng(channel_ss), int(schedule[0]))
    size = _chunk_size(scenarios, [window, block_frames], chunk)
    for t0 in range(0, T, size):
        t1 = min(T, t0 + size)
        frame_model = schedule[np.arange(t0, t1) // block_frames]
        trace = traces.next(frame_model)
        us = [r.random(t1 - t0) for r in err_rngs]
        for j, lane in enumerate(lanes):
            lane.consume(trace, us[0] if shared_error_stream else us[j], frame_model)
    return [lane.report() for lane in lanes]


def run_comparison(
    scenarios: Sequence[ScenarioConfig],
    master_seed: int,
    channel: FsmcChannel,
    system: LinkSystem,
    artifacts: Mapping[str, PolicyArtifacts] | None = None,
    restarts: int = 8,
    optimizer_seed: int = 0,
    shared_error_stream: bool = True,
    window: int = 30,
    chunk: int = DEFAULT_CHUNK,
) -> list[SimulationReport]:
    """Run every scenario on one shared channel trace and error stream.

    Two independent streams are split from ``master_seed``: one drives the
    channel, the other the frame errors.  With ``shared_error_stream=False``
    each scenario gets its own error stream instead.
    """
    T = _check_frames(scenarios, window)
    artifacts = dict(artifacts or {})
    for sc in scenarios:
        if sc.name not in artifacts:
            artifacts[sc.name] = prepare_artifacts(sc, channel, system, restarts, optimizer_seed)
    per_scenario = [[artifacts[sc.name]] for sc in scenarios]
    schedule = np.zeros(1, dtype=np.int64)
    reports = _run_streams(scenarios, system, per_scenario, [channel], schedule, T,
                           master_seed, shared_error_stream, window, chunk)
    for rep in reports:
        rep.seeds = {"master_seed": master_seed, "optimizer_seed": optimizer_seed,
                     "shared_error_stream": shared_error_stream}
    return reports


def doppler_schedule(n_blocks: int, n_values: int, schedule_seed: int) -> np.ndarray:
    """Index of the Doppler value used in each block, uniform over the list."""
    return np.random.default_rng(schedule_seed).integers(0, n_values, size=n_blocks)


def run_doppler_variation(
    scenarios: Sequence[ScenarioConfig],
    doppler_values: Sequence[float],
    block_frames: int,
    schedule_seed: int,
    master_seed: int,
    channels: Mapping[float, FsmcChannel],
    system: LinkSystem,
    artifacts: Mapping[tuple[str, float], PolicyArtifacts] | None = None,
    restarts: int = 8,
    optimizer_seed: int = 0,
    shared_error_stream: bool = True,
    window: int = 30,
    chunk: int = DEFAULT_CHUNK,
) -> list[SimulationReport]:
    """Comparison in which the Doppler frequency is redrawn every block.

    The transmitter knows the current Doppler value and uses the tables
    precomputed for it.
    """
    T = _check_frames(scenarios, window)
    if T % block_frames:
        raise ScenarioError(f"total_frames {T} is not a multiple of block_frames {block_frames}")
    for sc in scenarios:
        if block_frames % sc.M:
            raise ScenarioError(f"{sc.name}: block_frames {block_frames} is not a multiple of M = {sc.M}")
    missing = [f for f in doppler_values if f not in channels]
    if missing:
        raise ScenarioError(f"no channel model for Doppler values {missing}")
    models = [channels[f] for f in doppler_values]
    artifacts = dict(artifacts or {})
    for sc in scenarios:
        for f in doppler_values:
            if (sc.name, f) not in artifacts:
                artifacts[(sc.name, f)] = prepare_artifacts(sc, channels[f], system, restarts, optimizer_seed)
    per_scenario = [[artifacts[(sc.name, f)] for f in doppler_values] for sc in scenarios]
    schedule = doppler_schedule(T // block_frames, len(doppler_values), schedule_seed)
    reports = _run_streams(scenarios, system, per_scenario, models, schedule, block_frames,
                           master_seed, shared_error_stream, window, chunk)
    for rep in reports:
        rep.seeds = {"master_seed": master_seed, "schedule_seed": schedule_seed,
                     "optimizer_seed": optimizer_seed, "shared_error_stream": shared_error_stream}
    return reports
