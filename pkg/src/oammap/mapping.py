"""Constellation maps over a position grid.

A map is built in three passes: design one constellation per grid position,
cluster positions that can share a constellation with bounded minimum-distance
loss, then keep one representative constellation per category.  Receivers look
up the nearest grid node and use its category's representative.

Positions are gridded in normalized radius beta (fixed reference frame) and
axial distance z.  Grid index convention: index = i_beta * len(zs) + i_z.
"""
from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from ._io import atomic_write_text, digest_lines, f17
from .beams import (
    Z_GUARD_M,
    ChannelMatrix,
    Position,
    ReferenceFrame,
    SystemConfig,
    channel_matrix,
)
from .designer import (
    Constellation,
    DesignOptions,
    DesignResult,
    constellation_text,
    design_total_power,
    parse_constellation,
)

_MAP_MAGIC = "oammap-map v1"


class MapFormatError(ValueError):
    """Raised for structurally invalid map files."""


class MapVersionError(MapFormatError):
    """Raised when a map file declares an unsupported format version."""


class MapHashError(MapFormatError):
    """Raised when a map file was built for a different system configuration."""


def _gain_text(antenna_gain) -> str:
    arr = np.asarray(antenna_gain, dtype=float)
    if arr.ndim == 0:
        return f17(arr)
    return ";".join(",".join(f17(v) for v in row) for row in np.atleast_2d(arr))


def _gain_parse(text: str):
    if ";" in text or "," in text:
        return tuple(tuple(float(v) for v in row.split(",")) for row in text.split(";"))
    return float(text)


def config_hash(config: SystemConfig) -> str:
    """Order-independent 16-hex-digit fingerprint of the system configuration."""
    lines = [
        "frequencies_hz=" + ",".join(f17(f) for f in config.frequencies_hz),
        "modes=" + ",".join(str(l) for l in config.modes),
        "rayleigh_distance_m=" + f17(config.rayleigh_distance_m),
        "noise_power=" + f17(config.noise_power),
        "power_budget=" + f17(config.power_budget),
        "symbol_count=" + str(config.symbol_count),
        "antenna_gain=" + _gain_text(config.antenna_gain),
    ]
    return digest_lines(lines)


def _round12(values) -> tuple[float, ...]:
    return tuple(round(float(v), 12) for v in values)


@dataclass(frozen=True)
class Grid:
    """Rectangular (beta, z) grid in a fixed reference frame, beta-major ordering."""

    betas: tuple[float, ...]
    zs: tuple[float, ...]
    frame: ReferenceFrame

    def __post_init__(self):
        object.__setattr__(self, "betas", _round12(self.betas))
        object.__setattr__(self, "zs", _round12(self.zs))
        if not self.betas or not self.zs:
            raise ValueError("grid needs at least one beta and one z")
        if any(b <= 0 for b in self.betas):
            raise ValueError("grid betas must be positive")
        if any(z < Z_GUARD_M for z in self.zs):
            raise ValueError(f"grid z values must be >= {Z_GUARD_M}")

    @classmethod
    def from_ranges(cls, beta_lo, beta_hi, beta_step, z_lo, z_hi, z_step,
                    frame: ReferenceFrame) -> "Grid":
        if beta_step <= 0 or z_step <= 0:
            raise ValueError("grid steps must be positive")
        nb = int(math.floor((beta_hi - beta_lo) / beta_step + 1e-9)) + 1
        nz = int(math.floor((z_hi - z_lo) / z_step + 1e-9)) + 1
        return cls(
            betas=tuple(beta_lo + i * beta_step for i in range(nb)),
            zs=tuple(z_lo + i * z_step for i in range(nz)),
            frame=frame,
        )

    @property
    def size(self) -> int:
        return len(self.betas) * len(self.zs)

    def index_of(self, i_beta: int, i_z: int) -> int:
        return i_beta * len(self.zs) + i_z

    def coords(self, index: int) -> tuple[float, float]:
        return self.betas[index // len(self.zs)], self.zs[index % len(self.zs)]

    def positions(self, config: SystemConfig) -> list[Position]:
        return [
            Position.from_beta(b, z, config, self.frame)
            for b in self.betas
            for z in self.zs
        ]

    def nearest_index(self, beta: float, z: float) -> int:
        ib = int(np.argmin([abs(b - beta) for b in self.betas]))
        iz = int(np.argmin([abs(v - z) for v in self.zs]))
        return self.index_of(ib, iz)


def _position_seed(seed: int, index: int) -> int:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(index,))
    return int.from_bytes(ss.generate_state(4, np.uint32).tobytes(), "little")


def _design_one(args):
    index, config, position, options = args
    channel = channel_matrix(config, position)
    opts = dataclasses.replace(options, seed=_position_seed(options.seed, index))
    try:
        return index, channel, design_total_power(channel, opts)
    except (ValueError, FloatingPointError) as exc:  # quarantine, keep going
        return index, channel, f"{type(exc).__name__}: {exc}"


@dataclass(eq=False)
class GridDesigns:
    """Per-position channels and designed constellations for one grid."""

    config: SystemConfig
    grid: Grid
    channels: tuple[ChannelMatrix, ...]
    results: tuple[DesignResult | None, ...]
    failed: tuple[tuple[int, str], ...]  # (position index, reason)

    @property
    def live_indices(self) -> np.ndarray:
        return np.array([i for i, r in enumerate(self.results) if r is not None], dtype=int)


def design_grid(
    config: SystemConfig,
    grid: Grid,
    options: DesignOptions | None = None,
    workers: int | None = None,
) -> GridDesigns:
    """Design one constellation per grid position.

    Positions are independent; `workers` > 1 farms them out to processes.
    Results are identical for any worker count because every position draws
    from its own seed stream.
    """
    options = options or DesignOptions()
    positions = grid.positions(config)
    tasks = [(i, config, p, options) for i, p in enumerate(positions)]
    channels: list = [None] * len(tasks)
    results: list = [None] * len(tasks)
    failed: list[tuple[int, str]] = []

    if workers is not None and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_design_one, tasks))
    else:
        outcomes = [_design_one(t) for t in tasks]
    for index, channel, outcome in outcomes:
        channels[index] = channel
        if isinstance(outcome, str):
            failed.append((index, outcome))
        else:
            results[index] = outcome
    return GridDesigns(
        config=config,
        grid=grid,
        channels=tuple(channels),
        results=tuple(results),
        failed=tuple(sorted(failed)),
    )


class Category(NamedTuple):
    representative: int  # grid position index
    beta: float
    z_m: float
    d_min: float
    constellation: Constellation
    member_count: int


@dataclass(eq=False)
class ConstellationMap:
    """Clustered constellation lookup table over a position grid."""

    config: SystemConfig
    grid: Grid
    tau: float
    trials: int
    seed: int | None  # base seed of the trial sweep; None for a single direct pass
    winning_trial: int | None
    assignment: np.ndarray  # (grid.size,) category id = representative index, -1 quarantined
    distortion: np.ndarray  # (grid.size,) recorded distance loss
    categories: dict[int, Category]
    quarantined: tuple[int, ...]
    total_distortion: float
    config_digest: str

    @property
    def representatives(self) -> tuple[int, ...]:
        return tuple(sorted(self.categories))

    def lookup(self, beta: float, z: float) -> tuple[Constellation, int]:
        """Representative constellation for the nearest grid node."""
        index = self.grid.nearest_index(beta, z)
        rep = int(self.assignment[index])
        if rep < 0:
            raise ValueError(f"position index {index} is quarantined")
        return self.categories[rep].constellation, rep


def _cluster_pass(designs: GridDesigns, tau: float, rng: np.random.Generator):
    """One randomized clustering pass over live positions.

    Repeatedly draws an unclassified position as representative and absorbs
    every unclassified position whose distance loss under the representative's
    constellation stays below tau (the representative always joins its own
    category).  Returns (assignment, distortion) over all grid positions.
    """
    live = designs.live_indices
    if live.size == 0:
        raise ValueError("no successful designs to cluster")
    gains2 = np.stack([designs.channels[i].amplitudes**2 for i in live])
    d_own = np.array([designs.results[i].d_min for i in live])
    if (d_own <= 0).any():
        bad = live[d_own <= 0].tolist()
        raise ValueError(f"degenerate designs at positions {bad}")

    assignment = np.full(designs.grid.size, -1, dtype=int)
    distortion = np.zeros(designs.grid.size)
    unclassified = np.ones(live.size, dtype=bool)
    while unclassified.any():
        candidates = np.flatnonzero(unclassified)
        qa = int(candidates[rng.integers(candidates.size)])
        pts = designs.results[live[qa]].constellation.points
        iu, ju = np.triu_indices(pts.shape[0], 1)
        diffs = pts[iu] - pts[ju]
        diff2 = diffs.real**2 + diffs.imag**2  # (K, U)
        cross = np.sqrt((diff2 @ gains2[candidates].T).min(axis=0))
        loss = np.abs(1.0 - cross / d_own[candidates])
        take = loss < tau
        take[candidates == qa] = True
        chosen = candidates[take]
        assignment[live[chosen]] = live[qa]
        distortion[live[chosen]] = loss[take]
        unclassified[chosen] = False
    return assignment, distortion


def _assemble(designs, tau, assignment, distortion, trials, seed, winning_trial):
    categories = {}
    for rep in np.unique(assignment[assignment >= 0]):
        rep = int(rep)
        beta, z = designs.grid.coords(rep)
        result = designs.results[rep]
        categories[rep] = Category(
            representative=rep,
            beta=beta,
            z_m=z,
            d_min=result.d_min,
            constellation=result.constellation,
            member_count=int((assignment == rep).sum()),
        )
    assignment = assignment.copy()
    assignment.setflags(write=False)
    distortion = distortion.copy()
    distortion.setflags(write=False)
    return ConstellationMap(
        config=designs.config,
        grid=designs.grid,
        tau=tau,
        trials=trials,
        seed=seed,
        winning_trial=winning_trial,
        assignment=assignment,
        distortion=distortion,
        categories=categories,
        quarantined=tuple(int(i) for i, _ in designs.failed),
        total_distortion=float(distortion.sum()),
        config_digest=config_hash(designs.config),
    )


def cluster_once(designs: GridDesigns, tau: float, rng: np.random.Generator) -> ConstellationMap:
    """Single clustering pass packaged as a map.

    tau = 0 degenerates to one category per position (nothing but the
    representative itself passes a strict threshold).
    """
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    assignment, distortion = _cluster_pass(designs, tau, rng)
    return _assemble(designs, tau, assignment, distortion, 1, None, None)


def build_map(
    designs: GridDesigns,
    tau: float,
    trials: int = 100,
    seed: int = 0,
) -> ConstellationMap:
    """Best clustering over independent randomized trials.

    The winner minimizes total recorded distortion; ties keep the lowest
    trial index, so a fixed seed yields a fixed map.
    """
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    if trials < 1:
        raise ValueError("trials must be positive")
    best = None
    for trial in range(trials):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(trial,)))
        assignment, distortion = _cluster_pass(designs, tau, rng)
        total = float(distortion.sum())
        if best is None or total < best[0]:
            best = (total, trial, assignment, distortion)
    _, winning_trial, assignment, distortion = best
    return _assemble(designs, tau, assignment, distortion, trials, seed, winning_trial)


def _opt_int(value) -> str:
    return "none" if value is None else str(value)


def map_text(cmap: ConstellationMap) -> str:
    config = cmap.config
    lines = [
        _MAP_MAGIC,
        f"config_hash = {cmap.config_digest}",
        "frequencies_hz = " + ",".join(f17(f) for f in config.frequencies_hz),
        "modes = " + ",".join(str(l) for l in config.modes),
        f"rayleigh_distance_m = {f17(config.rayleigh_distance_m)}",
        f"noise_power = {f17(config.noise_power)}",
        f"power_budget = {f17(config.power_budget)}",
        f"symbol_count = {config.symbol_count}",
        f"antenna_gain = {_gain_text(config.antenna_gain)}",
        f"frame_wavelength_m = {f17(cmap.grid.frame.wavelength_m)}",
        f"frame_mode = {cmap.grid.frame.mode}",
        "betas = " + ",".join(f17(b) for b in cmap.grid.betas),
        "zs = " + ",".join(f17(z) for z in cmap.grid.zs),
        f"tau = {f17(cmap.tau)}",
        f"trials = {cmap.trials}",
        f"seed = {_opt_int(cmap.seed)}",
        f"winning_trial = {_opt_int(cmap.winning_trial)}",
        f"total_distortion = {f17(cmap.total_distortion)}",
        "quarantined = " + ",".join(str(i) for i in cmap.quarantined),
        "categories:",
    ]
    for rep in cmap.representatives:
        cat = cmap.categories[rep]
        lines.append(f"category {rep} {f17(cat.beta)} {f17(cat.z_m)} {f17(cat.d_min)}")
        lines.append(constellation_text(cat.constellation, config).rstrip("\n"))
    lines.append("assignments:")
    for i in range(cmap.grid.size):
        beta, z = cmap.grid.coords(i)
        lines.append(
            f"{i} {f17(beta)} {f17(z)} {int(cmap.assignment[i])} {f17(cmap.distortion[i])}"
        )
    lines.append("end")
    return "\n".join(lines) + "\n"


def save_map(path: str | Path, cmap: ConstellationMap) -> None:
    atomic_write_text(path, map_text(cmap))


def _header_value(lines, i, key):
    if i >= len(lines):
        raise MapFormatError(f"truncated header, expected {key!r}")
    line = lines[i].strip()
    prefix = key + " ="
    if not line.startswith(prefix):
        raise MapFormatError(f"expected {key!r} on line {i + 1}, found {line!r}")
    return line[len(prefix):].strip()


def load_map(path: str | Path, config: SystemConfig | None = None) -> ConstellationMap:
    """Read a map file; with a config given, refuse one built for another system."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise MapFormatError("empty map file")
    if lines[0].strip() != _MAP_MAGIC:
        if lines[0].startswith("oammap-map"):
            raise MapVersionError(f"unsupported map version: {lines[0].strip()!r}")
        raise MapFormatError("not a constellation map file")
    stored_hash = _header_value(lines, 1, "config_hash")
    file_config = SystemConfig(
        frequencies_hz=tuple(float(v) for v in _header_value(lines, 2, "frequencies_hz").split(",")),
        modes=tuple(int(v) for v in _header_value(lines, 3, "modes").split(",")),
        rayleigh_distance_m=float(_header_value(lines, 4, "rayleigh_distance_m")),
        noise_power=float(_header_value(lines, 5, "noise_power")),
        power_budget=float(_header_value(lines, 6, "power_budget")),
        symbol_count=int(_header_value(lines, 7, "symbol_count")),
        antenna_gain=_gain_parse(_header_value(lines, 8, "antenna_gain")),
    )
    frame = ReferenceFrame(
        wavelength_m=float(_header_value(lines, 9, "frame_wavelength_m")),
        mode=int(_header_value(lines, 10, "frame_mode")),
    )
    grid = Grid(
        betas=tuple(float(v) for v in _header_value(lines, 11, "betas").split(",")),
        zs=tuple(float(v) for v in _header_value(lines, 12, "zs").split(",")),
        frame=frame,
    )
    tau = float(_header_value(lines, 13, "tau"))
    trials = int(_header_value(lines, 14, "trials"))
    seed_text = _header_value(lines, 15, "seed")
    seed = None if seed_text == "none" else int(seed_text)
    wt_text = _header_value(lines, 16, "winning_trial")
    winning_trial = None if wt_text == "none" else int(wt_text)
    total_distortion = float(_header_value(lines, 17, "total_distortion"))
    quarantined_text = _header_value(lines, 18, "quarantined")
    quarantined = tuple(int(v) for v in quarantined_text.split(",")) if quarantined_text else ()
    if config_hash(file_config) != stored_hash:
        raise MapHashError("map header does not match its stored config hash")
    if config is not None and config_hash(config) != stored_hash:
        raise MapHashError("map was built for a different system configuration")

    if 19 >= len(lines) or lines[19].strip() != "categories:":
        raise MapFormatError("missing categories section")
    i = 20
    parsed: dict[int, tuple[float, float, float, Constellation]] = {}
    while i < len(lines) and lines[i].strip() != "assignments:":
        parts = lines[i].split()
        if len(parts) != 5 or parts[0] != "category":
            raise MapFormatError(f"bad category header on line {i + 1}")
        rep = int(parts[1])
        beta, z, d_min = (float(v) for v in parts[2:])
        constellation, _, i = parse_constellation(lines, i + 1)
        parsed[rep] = (beta, z, d_min, constellation)
    if i >= len(lines):
        raise MapFormatError("missing assignments section")
    i += 1
    if i + grid.size > len(lines):
        raise MapFormatError("truncated assignment table")
    assignment = np.full(grid.size, -1, dtype=int)
    distortion = np.zeros(grid.size)
    for k in range(grid.size):
        parts = lines[i + k].split()
        if len(parts) != 5 or int(parts[0]) != k:
            raise MapFormatError(f"bad assignment row {k}")
        assignment[k] = int(parts[3])
        distortion[k] = float(parts[4])
    i += grid.size
    if i >= len(lines) or lines[i].strip() != "end":
        raise MapFormatError("missing end marker")

    categories = {}
    for rep in np.unique(assignment[assignment >= 0]):
        rep = int(rep)
        if rep not in parsed:
            raise MapFormatError(f"assignment references missing category {rep}")
        beta, z, d_min, constellation = parsed[rep]
        categories[rep] = Category(
            representative=rep,
            beta=beta,
            z_m=z,
            d_min=d_min,
            constellation=constellation,
            member_count=int((assignment == rep).sum()),
        )
    assignment.setflags(write=False)
    distortion.setflags(write=False)
    return ConstellationMap(
        config=file_config,
        grid=grid,
        tau=tau,
        trials=trials,
        seed=seed,
        winning_trial=winning_trial,
        assignment=assignment,
        distortion=distortion,
        categories=categories,
        quarantined=quarantined,
        total_distortion=total_distortion,
        config_digest=stored_hash,
    )


def write_assignments_csv(path: str | Path, cmap: ConstellationMap) -> None:
    rows = ["beta,z_m,category,distortion"]
    for i in range(cmap.grid.size):
        beta, z = cmap.grid.coords(i)
        rows.append(f"{f17(beta)},{f17(z)},{int(cmap.assignment[i])},{f17(cmap.distortion[i])}")
    atomic_write_text(path, "\n".join(rows) + "\n")
