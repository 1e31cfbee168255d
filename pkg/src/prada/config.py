"""Run configuration: one YAML file describing channel, link, policies and runs.

Relative file paths inside a config are resolved against the config file's
directory.  ``fer_table: builtin`` selects the packaged reference table.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

import yaml

from . import presets
from .channel import (
    ChannelModelError,
    FsmcChannel,
    SnrPartition,
    build_transition_matrix,
    calibrate_frame_period,
    db_to_linear,
    partition_equal_duration,
)
from .link import FerTable, LinkTableError, SettingTable, active_mask, load_fer_table
from .simulator import POLICY_KINDS, LinkSystem, ScenarioConfig, ScenarioError


class ConfigError(ValueError):
    """Invalid run configuration; the message names the offending key."""


@dataclass(frozen=True)
class Calibration:
    """Tabulated neighbour transitions the frame period is fitted to."""

    doppler_hz: float
    up: tuple[float, ...]
    down: tuple[float, ...]


@dataclass(frozen=True)
class ChannelConfig:
    n_states: int
    avg_snr_db: float
    doppler_hz: float
    boundaries_db: tuple[float, ...] | None = None
    frame_period_s: float | None = None
    calibration: Calibration | None = None

    def partition(self, avg_snr_db: float | None = None) -> SnrPartition:
        if self.boundaries_db is not None:
            return SnrPartition.from_interior_db(self.boundaries_db)
        snr = self.avg_snr_db if avg_snr_db is None else avg_snr_db
        return partition_equal_duration(self.n_states, db_to_linear(snr))

    def resolved_frame_period(self) -> float:
        if self.frame_period_s is not None:
            return self.frame_period_s
        c = self.calibration
        return calibrate_frame_period(self.partition(), db_to_linear(self.avg_snr_db), c.doppler_hz, c.up, c.down)

    def build(self, doppler_hz: float | None = None, avg_snr_db: float | None = None) -> FsmcChannel:
        """Channel at the configured point, optionally moved in Doppler or mean SNR.

        The frame period is a property of the air interface and stays fixed.
        """
        snr = self.avg_snr_db if avg_snr_db is None else avg_snr_db
        f = self.doppler_hz if doppler_hz is None else doppler_hz
        return build_transition_matrix(self.partition(snr), db_to_linear(snr), f, self.resolved_frame_period())


@dataclass(frozen=True)
class PolicySpec:
    name: str
    kind: str
    M: int = 1
    K: int = 1
    setting: int = 0  # 0-based

    def scenario(self, total_frames: int) -> ScenarioConfig:
        return ScenarioConfig(self.name, self.kind, total_frames, self.M, self.K, self.setting)

    @property
    def block_frames(self) -> int:
        return self.M * self.K


@dataclass(frozen=True)
class SimulationConfig:
    total_frames: int = 1_000_080
    seed: int = 1
    window: int = 30
    shared_error_stream: bool = True


@dataclass(frozen=True)
class VariationConfig:
    doppler_hz: tuple[float, ...]
    schedule_seed: int
    block_frames: int


@dataclass(frozen=True)
class RunConfig:
    source: Path | None
    channel: ChannelConfig
    settings: SettingTable
    fer: FerTable
    silent_states: tuple[int, ...]
    policies: tuple[PolicySpec, ...]
    restarts: int = 8
    optimizer_seed: int = 0
    simulation: SimulationConfig = SimulationConfig()
    sweep_snr_db: tuple[float, ...] = ()
    sweep_doppler_hz: tuple[float, ...] = ()
    variation: VariationConfig | None = None
    output_dir: Path = Path("out")
    hashes: dict[str, str] = field(default_factory=dict)

    @property
    def system(self) -> LinkSystem:
        return LinkSystem(self.settings, self.fer, active_mask(self.channel.n_states, self.silent_states))

    def frame_step(self) -> int:
        """Every run length must be a multiple of this."""
        steps = [p.block_frames for p in self.policies] + [self.simulation.window]
        if self.variation is not None:
            steps.append(self.variation.block_frames)
        return math.lcm(*steps)

    def scenarios(self, total_frames: int | None = None) -> list[ScenarioConfig]:
        T = self.simulation.total_frames if total_frames is None else total_frames
        return [p.scenario(T) for p in self.policies]


def round_up_frames(n: int, step: int) -> int:
    return max(step, -(-n // step) * step)


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _get(d: dict, key: str, where: str, default: Any = ...) -> Any:
    if key in d and d[key] is not None:
        return d[key]
    if default is ...:
        raise ConfigError(f"{where}: missing required key {key!r}")
    return default


def _floats(values: Any, where: str) -> tuple[float, ...]:
    if not isinstance(values, (list, tuple)):
        raise ConfigError(f"{where}: expected a list of numbers")
    try:
        return tuple(float(v) for v in values)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: expected a list of numbers, got {values!r}") from None


def _channel(d: Any) -> ChannelConfig:
    if not isinstance(d, dict):
        raise ConfigError("channel: expected a mapping")
    boundaries = d.get("boundaries_db")
    boundaries = None if boundaries is None else _floats(boundaries, "channel.boundaries_db")
    n_states = int(_get(d, "n_states", "channel", len(boundaries) + 1 if boundaries else ...))
    if boundaries is not None and len(boundaries) != n_states - 1:
        raise ConfigError(f"channel.boundaries_db: {len(boundaries)} values, need n_states - 1 = {n_states - 1}")
    fp = _get(d, "frame_period_s", "channel")
    calibration = None
    if fp == "calibrate":
        c = _get(d, "calibration", "channel")
        calibration = Calibration(
            float(_get(c, "doppler_hz", "channel.calibration")),
            _floats(_get(c, "up", "channel.calibration"), "channel.calibration.up"),
            _floats(_get(c, "down", "channel.calibration"), "channel.calibration.down"),
        )
        fp = None
    else:
        try:
            fp = float(fp)
        except (TypeError, ValueError):
            raise ConfigError(f"channel.frame_period_s: expected seconds or 'calibrate', got {fp!r}") from None
        if not fp > 0:
            raise ConfigError("channel.frame_period_s: must be positive")
    cfg = ChannelConfig(
        n_states=n_states,
        avg_snr_db=float(_get(d, "avg_snr_db", "channel")),
        doppler_hz=float(_get(d, "doppler_hz", "channel")),
        boundaries_db=boundaries,
        frame_period_s=fp,
        calibration=calibration,
    )
    if cfg.doppler_hz < 0:
        raise ConfigError("channel.doppler_hz: must be non-negative")
    try:
        cfg.partition()
    except ChannelModelError as e:
        raise ConfigError(f"channel.boundaries_db: {e}") from None
    return cfg


def _policies(items: Any, n_settings: int) -> tuple[PolicySpec, ...]:
    if not isinstance(items, list) or not items:
        raise ConfigError("policies: expected a non-empty list")
    out = []
    for j, p in enumerate(items):
        where = f"policies[{j}]"
        kind = str(_get(p, "kind", where))
        if kind not in POLICY_KINDS:
            raise ConfigError(f"{where}.kind: {kind!r} is not one of {POLICY_KINDS}")
        setting = int(p.get("setting", 1)) - 1
        if kind == "fixed" and not 0 <= setting < n_settings:
            raise ConfigError(f"{where}.setting: {setting + 1} outside 1..{n_settings}")
        name = str(p.get("name", f"s{setting + 1}" if kind == "fixed" else kind))
        spec = PolicySpec(name, kind, int(p.get("M", 1)), int(p.get("K", 1)), setting)
        try:
            spec.scenario(spec.block_frames)
        except ScenarioError as e:
            raise ConfigError(f"{where}: {e}") from None
        out.append(spec)
    names = [p.name for p in out]
    if len(set(names)) != len(names):
        raise ConfigError(f"policies: duplicate names in {names}")
    return tuple(out)


def _fer_table(ref: Any, base: Path | None, settings: SettingTable, n_states: int) -> tuple[FerTable, str]:
    if ref == "builtin":
        text = presets.fer_csv()
    else:
        path = Path(str(ref))
        if not path.is_absolute() and base is not None:
            path = base / path
        if not path.is_file():
            raise ConfigError(f"fer_table: file not found: {path}")
        text = path.read_text()
    try:
        table = load_fer_table(text, settings, n_states)
    except LinkTableError as e:
        raise ConfigError(f"fer_table: {e}") from None
    return table, _sha256(text.encode())


def parse_config(data: dict, source: Path | None = None) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config: expected a mapping at the top level")
    base = source.parent if source is not None else None
    channel = _channel(_get(data, "channel", "config"))
    try:
        settings = SettingTable.from_records(_get(data, "settings", "config"))
    except (KeyError, TypeError, LinkTableError) as e:
        raise ConfigError(f"settings: {e}") from None
    fer, fer_hash = _fer_table(_get(data, "fer_table", "config"), base, settings, channel.n_states)
    silent = tuple(int(s) for s in data.get("silent_states", ()))
    try:
        active_mask(channel.n_states, silent)
    except LinkTableError as e:
        raise ConfigError(f"silent_states: {e}") from None
    policies = _policies(_get(data, "policies", "config"), len(settings))

    opt = data.get("optimizer") or {}
    sim = data.get("simulation") or {}
    simulation = SimulationConfig(
        total_frames=int(sim.get("total_frames", SimulationConfig.total_frames)),
        seed=int(sim.get("seed", SimulationConfig.seed)),
        window=int(sim.get("window", SimulationConfig.window)),
        shared_error_stream=bool(sim.get("shared_error_stream", True)),
    )
    if simulation.window < 1:
        raise ConfigError("simulation.window: must be >= 1")

    sweep = data.get("sweep") or {}
    variation = None
    if data.get("doppler_variation"):
        v = data["doppler_variation"]
        dopplers = _floats(_get(v, "doppler_hz", "doppler_variation"), "doppler_variation.doppler_hz")
        if not dopplers:
            raise ConfigError("doppler_variation.doppler_hz: empty list")
        default_block = math.lcm(*(p.block_frames for p in policies))
        variation = VariationConfig(
            dopplers, int(v.get("schedule_seed", simulation.seed)), int(v.get("block_frames", default_block))
        )
        for p in policies:
            if variation.block_frames % p.M:
                raise ConfigError(
                    f"doppler_variation.block_frames: {variation.block_frames} is not a multiple of "
                    f"{p.name}'s M = {p.M}"
                )

    cfg = RunConfig(
        source=source,
        channel=channel,
        settings=settings,
        fer=fer,
        silent_states=silent,
        policies=policies,
        restarts=int(opt.get("restarts", 8)),
        optimizer_seed=int(opt.get("seed", 0)),
        simulation=simulation,
        sweep_snr_db=_floats(sweep.get("snr_db", []), "sweep.snr_db"),
        sweep_doppler_hz=_floats(sweep.get("doppler_hz", []), "sweep.doppler_hz"),
        variation=variation,
        output_dir=Path(str(data.get("output_dir", "out"))),
        hashes={"fer_table": fer_hash},
    )
    if cfg.restarts < 1:
        raise ConfigError("optimizer.restarts: must be >= 1")
    try:
        cfg.channel.build()
    except ChannelModelError as e:
        raise ConfigError(f"channel: {e}") from None
    return cfg


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise ConfigError(f"{path}: {e.strerror}") from None
    try:
        data = yaml.safe_load(raw)
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: not valid YAML: {e}") from None
    try:
        cfg = parse_config(data, path)
    except ConfigError as e:
        raise ConfigError(f"{path}: {e}") from None
    cfg.hashes["config"] = _sha256(raw)
    return cfg


def reference_config_text() -> str:
    """The packaged example config for the reference 7-state system."""
    return resources.files("prada.data").joinpath("reference.yaml").read_text()


def default_doppler_grid(values: Sequence[float], fallback: float) -> tuple[float, ...]:
    return tuple(values) if values else (fallback,)
