"""Command-line entry point.

Every subcommand reads one run config (the packaged reference config when
``--config`` is omitted), writes CSV files into the output directory and a
``manifest_<command>.json`` with the seeds and the hashes of inputs and outputs.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import sys
from dataclasses import replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .adaptation import ThresholdError, compile_threshold_table
from .channel import ChannelModelError, FsmcChannel, linear_to_db
from .config import ConfigError, RunConfig, load_config, round_up_frames
from .link import LinkTableError
from .policies import (
    analytical_throughput_fixed,
    analytical_throughput_greedy,
    analytical_throughput_prada_a,
    analytical_throughput_prada_b,
)
from .prediction import error_count_distributions, expected_period_throughput
from .simulator import (
    ScenarioError,
    SimulationReport,
    prepare_artifacts,
    run_comparison,
    run_doppler_variation,
)

USER_ERRORS = (ConfigError, ChannelModelError, LinkTableError, ScenarioError, ThresholdError)


def f6(v: float) -> str:
    return f"{v:.6f}"


def g6(v: float) -> str:
    return f"{v:.6g}"


class Output:
    """Writes CSV files into one directory and remembers their hashes."""

    def __init__(self, directory: Path):
        self.dir = directory
        self.dir.mkdir(parents=True, exist_ok=True)
        self.files: dict[str, str] = {}

    def csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence]) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
        return self.text(name, buf.getvalue())

    def text(self, name: str, text: str) -> str:
        path = self.dir / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
        self.files[name] = hashlib.sha256(text.encode()).hexdigest()
        return text

    def manifest(self, command: str, cfg: RunConfig, extra: dict) -> None:
        doc = {
            "command": command,
            "version": __version__,
            "config": str(cfg.source) if cfg.source else None,
            "input_sha256": dict(sorted(cfg.hashes.items())),
            "frame_period_s": cfg.channel.resolved_frame_period(),
            **extra,
            "outputs": dict(sorted(self.files.items())),
        }
        (self.dir / f"manifest_{command}.json").write_text(json.dumps(doc, indent=2) + "\n")


def _state_ids(n: int) -> list[str]:
    return [f"w{i + 1}" for i in range(n)]


def _channel_csvs(ch: FsmcChannel) -> tuple[list[str], list[list[str]], list[str], list[list[str]]]:
    b = ch.partition.boundaries
    pi_rows = [
        [f"w{i + 1}", f6(linear_to_db(b[i])) if b[i] > 0 else "-inf", f6(linear_to_db(b[i + 1])), f6(p)]
        for i, p in enumerate(ch.stationary)
    ]
    p_rows = [[f"w{i + 1}", *map(f6, row)] for i, row in enumerate(ch.transition)]
    return ["state", "snr_low_db", "snr_high_db", "probability"], pi_rows, ["state", *_state_ids(ch.n_states)], p_rows


def cmd_channel(cfg: RunConfig, args, out: Output) -> dict:
    ch = cfg.channel.build()
    pi_head, pi_rows, p_head, p_rows = _channel_csvs(ch)
    sys.stdout.write(out.csv("channel_stationary.csv", pi_head, pi_rows))
    sys.stdout.write(out.csv("channel_transition.csv", p_head, p_rows))
    return {"doppler_hz": ch.doppler_hz, "avg_snr_db": cfg.channel.avg_snr_db}


def _horizons(cfg: RunConfig) -> list[int]:
    return sorted({p.M for p in cfg.policies if p.kind in ("prada_a", "prada_b", "greedy")})


def cmd_predict(cfg: RunConfig, args, out: Output) -> dict:
    ch = cfg.channel.build()
    horizons = _horizons(cfg) or [1]
    ids = _state_ids(ch.n_states)
    for M in horizons:
        F = error_count_distributions(ch, cfg.fer, M)
        xi = expected_period_throughput(F, cfg.settings)
        out.csv(f"xi_M{M}.csv", ["setting", *ids],
                [[sid, *map(g6, row)] for sid, row in zip(cfg.settings.ids, xi)])
        if args.tensor:
            R, N = F.n_settings, F.n_states
            rows = (
                [f"s{r + 1}", f"w{i + 1}", f"w{k + 1}", l, repr(float(F.F[r, i, k, l]))]
                for r in range(R) for i in range(N) for k in range(N) for l in range(M + 1)
            )
            out.csv(f"error_counts_M{M}.csv", ["setting", "start_state", "end_state", "errors", "probability"], rows)
    return {"horizons": horizons}


def cmd_optimize(cfg: RunConfig, args, out: Output) -> dict:
    ch = cfg.channel.build()
    done = []
    for p in cfg.policies:
        if p.kind != "prada_b":
            continue
        F = error_count_distributions(ch, cfg.fer, p.M)
        xi = expected_period_throughput(F, cfg.settings)
        table = compile_threshold_table(F, ch, xi, p.K, cfg.restarts, cfg.optimizer_seed)
        out.text(f"thresholds_{p.name}.csv", table.to_csv())
        done.append({"policy": p.name, "M": p.M, "K": p.K})
    if not done:
        raise ConfigError("optimize: the config has no prada_b policy")
    return {"optimizer_seed": cfg.optimizer_seed, "restarts": cfg.restarts, "tables": done}


def _analytical(cfg: RunConfig, ch: FsmcChannel) -> list[tuple[str, float]]:
    system = cfg.system
    out = []
    for p in cfg.policies:
        if p.kind == "fixed":
            v = analytical_throughput_fixed(ch, cfg.settings, cfg.fer, p.setting, system.active)
        else:
            F = error_count_distributions(ch, cfg.fer, p.M)
            xi = expected_period_throughput(F, cfg.settings)
            if p.kind == "prada_a":
                v = analytical_throughput_prada_a(ch, xi, system.active)
            elif p.kind == "greedy":
                v = analytical_throughput_greedy(ch, cfg.settings, cfg.fer, xi, system.active)
            else:
                table = compile_threshold_table(F, ch, xi, p.K, cfg.restarts, cfg.optimizer_seed)
                v = analytical_throughput_prada_b(ch, F, xi, table, p.K, system.active).throughput
        out.append((p.name, v))
    return out


def cmd_analyze(cfg: RunConfig, args, out: Output) -> dict:
    grid = cfg.sweep_doppler_hz or (cfg.channel.doppler_hz,)
    rows = []
    for f in grid:
        ch = cfg.channel.build(doppler_hz=f)
        rows += [[g6(f), name, g6(v)] for name, v in _analytical(cfg, ch)]
    sys.stdout.write(out.csv("analysis.csv", ["doppler_hz", "policy", "throughput"], rows))
    return {"doppler_hz": list(grid), "optimizer_seed": cfg.optimizer_seed, "restarts": cfg.restarts}


def _frames(cfg: RunConfig, args) -> int:
    step = cfg.frame_step()
    n = cfg.simulation.total_frames if args.frames is None else args.frames
    T = round_up_frames(n, step)
    if T != n:
        print(f"note: frames rounded up from {n} to {T} (multiple of {step})", file=sys.stderr)
    return T


def _write_reports(out: Output, prefix: str, reports: list[SimulationReport], settings_ids: list[str]) -> None:
    summary = []
    cdf_rows = []
    for rep in reports:
        out.csv(f"{prefix}window_{rep.scenario}.csv", ["window_index", "avg_bits_per_frame"],
                ([j, "nan" if np.isnan(v) else g6(v)] for j, v in enumerate(rep.window_series)))
        values, counts = np.unique(rep.cdf_samples, return_counts=True)
        cum = np.cumsum(counts) / max(1, counts.sum())
        cdf_rows += [[rep.scenario, g6(v), g6(c)] for v, c in zip(values, cum)]
        summary.append([rep.scenario, g6(rep.average_throughput), g6(rep.fer), *map(g6, rep.setting_occupancy)])
    out.csv(f"{prefix}cdf.csv", ["scenario", "avg_bits_per_frame", "cumulative_probability"], cdf_rows)
    out.csv(f"{prefix}summary.csv",
            ["scenario", "avg_throughput", "fer", *(f"occupancy_{s}" for s in settings_ids)], summary)


def _simulate_at(cfg: RunConfig, ch: FsmcChannel, T: int) -> list[SimulationReport]:
    sim = cfg.simulation
    return run_comparison(
        cfg.scenarios(T), sim.seed, ch, cfg.system, restarts=cfg.restarts,
        optimizer_seed=cfg.optimizer_seed, shared_error_stream=sim.shared_error_stream, window=sim.window,
    )


def cmd_simulate(cfg: RunConfig, args, out: Output) -> dict:
    T = _frames(cfg, args)
    sim = cfg.simulation
    reports = _simulate_at(cfg, cfg.channel.build(), T)
    _write_reports(out, "", reports, cfg.settings.ids)
    extra = {"total_frames": T, "master_seed": sim.seed, "optimizer_seed": cfg.optimizer_seed,
             "shared_error_stream": sim.shared_error_stream, "window": sim.window}
    if args.variation:
        v = cfg.variation
        if v is None:
            raise ConfigError("simulate --variation: the config has no doppler_variation block")
        channels = {f: cfg.channel.build(doppler_hz=f) for f in v.doppler_hz}
        reports = run_doppler_variation(
            cfg.scenarios(T), v.doppler_hz, v.block_frames, v.schedule_seed, sim.seed, channels, cfg.system,
            restarts=cfg.restarts, optimizer_seed=cfg.optimizer_seed,
            shared_error_stream=sim.shared_error_stream, window=sim.window,
        )
        _write_reports(out, "variation_", reports, cfg.settings.ids)
        extra["variation"] = {"doppler_hz": list(v.doppler_hz), "schedule_seed": v.schedule_seed,
                              "block_frames": v.block_frames}
    for rep in reports:
        print(f"{rep.scenario},{g6(rep.average_throughput)}")
    return extra


def cmd_sweep(cfg: RunConfig, args, out: Output) -> dict:
    if not cfg.sweep_snr_db and not cfg.sweep_doppler_hz:
        raise ConfigError("sweep: both snr_db and doppler_hz grids are empty")
    T = _frames(cfg, args)
    fixed = [p.name for p in cfg.policies if p.kind == "fixed"]
    rows, gains = [], []
    grids = [("snr_db", v, dict(avg_snr_db=v)) for v in cfg.sweep_snr_db]
    grids += [("doppler_hz", v, dict(doppler_hz=v)) for v in cfg.sweep_doppler_hz]
    for axis, value, kw in grids:
        reports = _simulate_at(cfg, cfg.channel.build(**kw), T)
        avg = {r.scenario: r.average_throughput for r in reports}
        rows += [[axis, g6(value), r.scenario, g6(r.average_throughput)] for r in reports]
        if fixed:
            best = max(avg[n] for n in fixed)
            gains += [[axis, g6(value), p.name, g6(avg[p.name] / best)] for p in cfg.policies if p.kind != "fixed"]
    out.csv("sweep.csv", ["axis", "value", "scenario", "avg_throughput"], rows)
    if gains:
        out.csv("sweep_gain.csv", ["axis", "value", "scenario", "gain"], gains)
    return {"total_frames": T, "master_seed": cfg.simulation.seed, "optimizer_seed": cfg.optimizer_seed,
            "snr_db": list(cfg.sweep_snr_db), "doppler_hz": list(cfg.sweep_doppler_hz)}


COMMANDS = {
    "channel": (cmd_channel, "build the channel model; print stationary law and transition matrix"),
    "predict": (cmd_predict, "expected period throughput per setting and start state"),
    "optimize": (cmd_optimize, "compile threshold tables for every prada_b policy"),
    "analyze": (cmd_analyze, "analytical long-run throughput per policy and Doppler"),
    "simulate": (cmd_simulate, "Monte Carlo comparison of every configured policy"),
    "sweep": (cmd_sweep, "simulations over the configured SNR and Doppler grids"),
}


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prada", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, help="run config (default: packaged reference config)")
        p.add_argument("--out", type=Path, help="output directory (overrides output_dir)")
        p.add_argument("--seed", type=_u64, help="master simulation seed (overrides simulation.seed)")
        p.add_argument("--frames", type=int, help="frames per run, rounded up to a whole number of blocks")
        if name == "predict":
            p.add_argument("--tensor", action="store_true", help="also write the full error-count tensor")
        if name == "simulate":
            p.add_argument("--variation", action="store_true", help="also run the Doppler-variation scenario")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    fn = COMMANDS[args.command][0]
    try:
        if args.config is None:
            with resources.as_file(resources.files("prada.data").joinpath("reference.yaml")) as path:
                cfg = load_config(path)
        else:
            cfg = load_config(args.config)
        if args.seed is not None:
            cfg = replace(cfg, simulation=replace(cfg.simulation, seed=args.seed))
        if args.frames is not None and args.frames < 1:
            raise ConfigError("--frames must be positive")
        out = Output(args.out if args.out is not None else cfg.output_dir)
        extra = fn(cfg, args, out)
        out.manifest(args.command, cfg, extra)
    except USER_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
