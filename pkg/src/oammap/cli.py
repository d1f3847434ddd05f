"""Command-line surface: config parsing, subcommands, deterministic seeding.

Subcommands:
  gain-field   link-gain CSV over the configured (beta, z) grid
  design       one constellation at a position, plus a JSON summary
  map          full grid design -> clustering -> map file + assignment CSV
  verify       sampled bound / chain checks with an aggregate JSON report
  ser          Monte-Carlo symbol error rate at a position

Config files are flat key-value text (``key = value``); unknown keys are
rejected.  Every subcommand is deterministic given (config, seed).
Exit codes: 0 success, 2 validation error, 3 verification failure, 4 I/O.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._io import atomic_write_text, digest_lines, f17
from .analysis import (
    appendix_a_chain,
    appendix_b_chain,
    monte_carlo_ser,
    theorem1_check,
    theorem2_check,
)
from .beams import (
    Position,
    ReferenceFrame,
    SystemConfig,
    channel_matrix,
    write_gain_field_csv,
)
from .designer import (
    DesignOptions,
    design_fixed_power,
    design_total_power,
    extract_power,
    independent_qpsk,
    save_constellation,
)
from .mapping import Grid, build_map, config_hash, design_grid, save_map, write_assignments_csv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_VERIFY = 3
EXIT_IO = 4

_SCHEMA = "oammap-report v1"


class ConfigError(ValueError):
    """Invalid configuration file or command arguments."""


class VerificationFailure(RuntimeError):
    """A sampled bound or chain check was violated."""


@dataclass(frozen=True)
class RunConfig:
    frequencies_ghz: tuple[float, ...] = (60.0, 61.0)
    modes: tuple[int, ...] = (0, 1)
    rayleigh_distance_m: float = 4.0
    noise_power: float = 1e-10
    power_budget: float = 1.0
    symbol_count: int = 64
    antenna_gain: object = 1.0
    frame_carrier: int = 1  # 1-based carrier index of the reference frame
    frame_mode: int = 1
    beta_lo: float = 0.2
    beta_hi: float = 2.2
    beta_step: float = 0.1
    z_lo: float = 0.5
    z_hi: float = 4.0
    z_step: float = 0.25
    tau: float = 0.15
    cluster_trials: int = 100
    restarts: int = 10
    max_iterations: int = 200
    sca_tol: float = 1e-6
    seed: int = 0

    def system(self) -> SystemConfig:
        return SystemConfig(
            frequencies_hz=tuple(f * 1e9 for f in self.frequencies_ghz),
            modes=self.modes,
            rayleigh_distance_m=self.rayleigh_distance_m,
            noise_power=self.noise_power,
            power_budget=self.power_budget,
            symbol_count=self.symbol_count,
            antenna_gain=self.antenna_gain,
        )

    def frame(self, system: SystemConfig) -> ReferenceFrame:
        if not 1 <= self.frame_carrier <= system.carrier_count:
            raise ConfigError(f"frame_carrier {self.frame_carrier} outside 1..{system.carrier_count}")
        return ReferenceFrame.for_carrier(system, self.frame_carrier - 1, self.frame_mode)

    def grid(self, system: SystemConfig) -> Grid:
        return Grid.from_ranges(
            self.beta_lo, self.beta_hi, self.beta_step,
            self.z_lo, self.z_hi, self.z_step,
            frame=self.frame(system),
        )

    def options(self, seed: int | None = None) -> DesignOptions:
        return DesignOptions(
            restarts=self.restarts,
            max_iterations=self.max_iterations,
            tol=self.sca_tol,
            seed=self.seed if seed is None else seed,
        )

    def digest(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                text = ",".join(f17(v) if isinstance(v, float) else str(v) for v in value)
            elif isinstance(value, float):
                text = f17(value)
            else:
                text = str(value)
            lines.append(f"{f.name}={text}")
        return digest_lines(lines)


_INT_KEYS = {"symbol_count", "frame_carrier", "frame_mode", "cluster_trials",
             "restarts", "max_iterations", "seed"}
_FLOAT_KEYS = {"rayleigh_distance_m", "noise_power", "power_budget", "beta_lo", "beta_hi",
               "beta_step", "z_lo", "z_hi", "z_step", "tau", "sca_tol"}


def _parse_entry(key: str, text: str):
    try:
        if key == "frequencies_ghz":
            return tuple(float(v) for v in text.split(","))
        if key == "modes":
            return tuple(int(v) for v in text.split(","))
        if key == "antenna_gain":
            if ";" in text or "," in text:
                return tuple(tuple(float(v) for v in row.split(",")) for row in text.split(";"))
            return float(text)
        if key in _INT_KEYS:
            return int(text)
        if key in _FLOAT_KEYS:
            return float(text)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {text!r}") from exc
    raise ConfigError(f"unknown config key: {key}")


def load_run_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    entries = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for ln, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{ln}: expected key = value")
        key, _, value = line.partition("=")
        key = key.strip()
        entries[key] = _parse_entry(key, value.strip())
    try:
        cfg = RunConfig(**entries)
        cfg.system()  # validate physical parameters eagerly
        return cfg
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _write_json(path: Path, payload: dict) -> None:
    payload = {"schema": _SCHEMA, **payload}
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _derived_seed(seed: int, *key: int) -> int:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(key))
    return int.from_bytes(ss.generate_state(4, np.uint32).tobytes(), "little")


def cmd_gain_field(cfg: RunConfig, out: Path) -> int:
    system = cfg.system()
    grid = cfg.grid(system)
    write_gain_field_csv(system, grid.frame, grid.betas, grid.zs, out / "gain_field.csv")
    return EXIT_OK


def cmd_design(cfg: RunConfig, beta: float, z: float, power_vector, out: Path) -> int:
    system = cfg.system()
    frame = cfg.frame(system)
    position = Position.from_beta(beta, z, system, frame)
    channel = channel_matrix(system, position)
    options = cfg.options()
    if power_vector is None:
        result = design_total_power(channel, options)
    else:
        power = np.asarray(power_vector, dtype=float)
        result = design_fixed_power(channel, power, options)
    save_constellation(out / "constellation.txt", result.constellation, system,
                       position=position, d_min=result.d_min)
    _write_json(out / "design_summary.json", {
        "config_hash": config_hash(system),
        "run_config_hash": cfg.digest(),
        "beta": beta,
        "z_m": z,
        "d_min": result.d_min,
        "iterations": result.iterations,
        "restart_index": result.restart_index,
        "restarts": options.restarts,
        "status": "converged" if result.converged else "max_iterations",
        "power": [float(p) for p in extract_power(result.constellation)],
    })
    return EXIT_OK


def cmd_map(cfg: RunConfig, workers: int | None, out: Path) -> int:
    system = cfg.system()
    grid = cfg.grid(system)
    designs = design_grid(system, grid, cfg.options(), workers=workers)
    cmap = build_map(designs, cfg.tau, cfg.cluster_trials, cfg.seed)
    save_map(out / "constellation_map.txt", cmap)
    write_assignments_csv(out / "assignments.csv", cmap)
    _write_json(out / "map_summary.json", {
        "config_hash": cmap.config_digest,
        "run_config_hash": cfg.digest(),
        "grid": {"betas": len(grid.betas), "zs": len(grid.zs)},
        "categories": len(cmap.categories),
        "quarantined": list(cmap.quarantined),
        "total_distortion": cmap.total_distortion,
        "winning_trial": cmap.winning_trial,
        "trials": cmap.trials,
    })
    return EXIT_OK


def _sample_nodes(grid: Grid, rng: np.random.Generator, count: int) -> list[int]:
    return [int(v) for v in rng.integers(grid.size, size=count)]


def cmd_verify(cfg: RunConfig, theorem: str, samples: int, out: Path) -> int:
    if samples < 1:
        raise ConfigError("--samples must be positive")
    system = cfg.system()
    grid = cfg.grid(system)
    positions = grid.positions(system)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed, spawn_key=(9000,)))
    reports = []
    chain_reports = []

    for k in range(samples):
        options = cfg.options(_derived_seed(cfg.seed, 9100, k))
        if theorem in ("1", "chains"):
            i, j = rng.integers(grid.size, size=2)
            ch1 = channel_matrix(system, positions[int(i)])
            ch2 = channel_matrix(system, positions[int(j)])
            report = theorem1_check(ch1, ch2, system, options)
            reports.append(report)
            if theorem == "chains":
                chain_reports.append(appendix_a_chain(
                    ch1, ch2, report.components["alpha"],
                    report.artifacts["c1"], report.artifacts["c2"], system,
                ))
        if theorem in ("2", "chains"):
            i = int(rng.integers(grid.size))
            channel = channel_matrix(system, positions[i])
            base = design_total_power(channel, options)
            p_o = extract_power(base.constellation)
            wobble = rng.uniform(-1.0, 1.0, size=p_o.size)
            p_f = np.clip(p_o * (1.0 + 0.1 * wobble), 0.0, None)
            report = theorem2_check(channel, p_o, p_f, system, options)
            reports.append(report)
            if theorem == "chains":
                chain_reports.append(appendix_b_chain(
                    channel, p_o, p_f,
                    report.artifacts["s_o"], report.artifacts["s_f"], system,
                ))

    holds_count = sum(1 for r in reports if r.holds)
    chain_ok = sum(1 for c in chain_reports if c.overall)
    worst = min((r.rhs - r.lhs for r in reports), default=0.0)
    flagged = sum(1 for r in reports if r.flags)
    _write_json(out / "verify_report.json", {
        "run_config_hash": cfg.digest(),
        "theorem": theorem,
        "samples": samples,
        "holds_count": holds_count,
        "worst_margin": worst,
        "flagged": flagged,
        "chains_overall_count": chain_ok if theorem == "chains" else None,
        "reports": [r.to_dict() for r in reports],
        "chains": [c.to_dict() for c in chain_reports],
    })
    if holds_count < len(reports) or (theorem == "chains" and chain_ok < len(chain_reports)):
        raise VerificationFailure(
            f"{len(reports) - holds_count} bound violations, "
            f"{len(chain_reports) - chain_ok} chain violations (see verify_report.json)"
        )
    return EXIT_OK


def cmd_ser(cfg: RunConfig, beta: float, z: float, baseline: bool, trials: int, out: Path) -> int:
    if trials < 1:
        raise ConfigError("--trials must be positive")
    system = cfg.system()
    frame = cfg.frame(system)
    position = Position.from_beta(beta, z, system, frame)
    channel = channel_matrix(system, position)
    result = design_total_power(channel, cfg.options())
    ser = monte_carlo_ser(channel, result.constellation, system.noise_power, trials,
                          seed=_derived_seed(cfg.seed, 9200))
    payload = {
        "run_config_hash": cfg.digest(),
        "beta": beta,
        "z_m": z,
        "trials": trials,
        "noise_power": system.noise_power,
        "designed_ser": ser,
        "designed_d_min": result.d_min,
    }
    if baseline:
        reference = independent_qpsk(system)
        payload["baseline_ser"] = monte_carlo_ser(
            channel, reference, system.noise_power, trials,
            seed=_derived_seed(cfg.seed, 9201),
        )
    _write_json(out / "ser_report.json", payload)
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="oammap",
        description="Multi-dimensional constellation maps for OAM/WDM links",
    )
    parser.add_argument("--config", help="flat key-value config file")
    parser.add_argument("--seed", type=int, help="override config seed")
    parser.add_argument("--out", default=".", help="output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("gain-field", help="export the link-gain CSV over the grid")

    p = sub.add_parser("design", help="design one constellation at a position")
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--z", type=float, required=True)
    p.add_argument("--power-vector", help="comma list of per-sub-channel powers")

    p = sub.add_parser("map", help="build and save the constellation map")
    p.add_argument("--workers", type=int)

    p = sub.add_parser("verify", help="sampled bound and chain checks")
    p.add_argument("--theorem", choices=("1", "2", "chains"), required=True)
    p.add_argument("--samples", type=int, default=10)

    p = sub.add_parser("ser", help="Monte-Carlo symbol error rate at a position")
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--z", type=float, required=True)
    p.add_argument("--baseline", action="store_true",
                   help="also simulate the independent-QPSK equal-power baseline")
    p.add_argument("--trials", type=int, default=100_000)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_run_config(args.config)
        if args.seed is not None:
            cfg = dataclasses.replace(cfg, seed=args.seed)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "gain-field":
            return cmd_gain_field(cfg, out)
        if args.command == "design":
            power = None
            if args.power_vector:
                power = [float(v) for v in args.power_vector.split(",")]
            return cmd_design(cfg, args.beta, args.z, power, out)
        if args.command == "map":
            return cmd_map(cfg, args.workers, out)
        if args.command == "verify":
            return cmd_verify(cfg, args.theorem, args.samples, out)
        if args.command == "ser":
            return cmd_ser(cfg, args.beta, args.z, args.baseline, args.trials, out)
        raise ConfigError(f"unknown command {args.command}")
    except VerificationFailure as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    raise SystemExit(main())
