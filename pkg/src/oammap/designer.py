"""Max-min distance constellation design over parallel diagonal sub-channels.

A constellation is M joint symbols, each a length-U complex vector (one
coordinate per sub-channel).  The design objective is the minimum Euclidean
distance (MED) between received symbol pairs,

    d_min = min_{m<n} || H (x_m - x_n) ||_2,

maximized under either one total average-power budget or per-sub-channel
average-power caps.  The quadratic pair constraints are linearized at the
previous iterate (a supporting hyperplane, so iterates never get worse) and
the resulting max-min affine subproblem is solved exactly; restarts from
independent Gaussian initializations guard against poor local optima.

Real stacking convention: symbol m occupies the block
x[m*2U : (m+1)*2U] = [Re x_m, Im x_m].
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._io import atomic_write_text, f17
from .beams import ChannelMatrix, SystemConfig
from .socp import SubproblemSpec, solve_subproblem

_TIE_EPS = 1e-12  # restart ties go to the lowest index within this margin


class ConstellationFormatError(ValueError):
    """Raised for malformed or wrong-version constellation files."""


def stack(points: np.ndarray) -> np.ndarray:
    """(M, U) complex points -> (M*2U,) real vector, [Re, Im] per symbol block."""
    points = np.asarray(points)
    return np.hstack([points.real, points.imag]).reshape(-1)


def unstack(x: np.ndarray, subchannels: int) -> np.ndarray:
    """Inverse of stack."""
    arr = np.asarray(x, dtype=float).reshape(-1, 2 * subchannels)
    return arr[:, :subchannels] + 1j * arr[:, subchannels:]


@dataclass(eq=False)
class Constellation:
    """M joint symbols over U sub-channels, stored as an (M, U) complex array."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=complex)
        if pts.ndim != 2 or pts.shape[0] < 2:
            raise ValueError("points must be (M, U) with M >= 2")
        self.points = pts
        self.points.setflags(write=False)

    @property
    def symbol_count(self) -> int:
        return self.points.shape[0]

    @property
    def subchannel_count(self) -> int:
        return self.points.shape[1]

    def stacked(self) -> np.ndarray:
        return stack(self.points)

    @classmethod
    def from_stacked(cls, x: np.ndarray, subchannels: int) -> "Constellation":
        return cls(unstack(x, subchannels))


def _amps_of(channel) -> np.ndarray:
    return np.asarray(getattr(channel, "amplitudes", channel), dtype=float)


def _pair_sq_dists(gains: np.ndarray, points: np.ndarray, iu, ju) -> np.ndarray:
    diffs = points[iu] - points[ju]
    return ((diffs.real**2 + diffs.imag**2) * gains).sum(axis=1)


def min_distance(channel, constellation: Constellation) -> tuple[float, tuple[int, int]]:
    """Received MED and its symbol pair under a diagonal channel."""
    amps = _amps_of(channel)
    pts = constellation.points
    if pts.shape[0] < 2:
        raise ValueError("need at least two symbols")
    iu, ju = np.triu_indices(pts.shape[0], 1)
    q = _pair_sq_dists(amps**2, pts, iu, ju)
    k = int(np.argmin(q))
    return math.sqrt(float(q[k])), (int(iu[k]), int(ju[k]))


def min_distance_with_power(channel, power: np.ndarray, s_points: Constellation) -> tuple[float, tuple[int, int]]:
    """MED of an unscaled constellation after applying per-sub-channel powers."""
    amps = _amps_of(channel) * np.sqrt(np.asarray(power, dtype=float))
    return min_distance(amps, s_points)


def pair_quadratic(channel, constellation: Constellation, m: int, n: int) -> float:
    """Squared received distance of one symbol pair, computed blockwise."""
    pts = constellation.points
    if not 0 <= m < n < pts.shape[0]:
        raise ValueError("require 0 <= m < n < M")
    amps = _amps_of(channel)
    diff = pts[m] - pts[n]
    return float(((diff.real**2 + diff.imag**2) * amps**2).sum())


def subchannel_groups(symbols: int, subchannels: int) -> tuple[np.ndarray, ...]:
    """Stacked-coordinate index sets of each sub-channel (Re and Im slots, all symbols)."""
    d = 2 * subchannels
    base = np.arange(symbols) * d
    return tuple(np.concatenate([base + u, base + subchannels + u]) for u in range(subchannels))


def linearize(
    channel,
    constellation: Constellation,
    *,
    ball_bound: float | None = None,
    group_caps: tuple[tuple[np.ndarray, float], ...] | None = None,
    pair_rows: tuple[np.ndarray, np.ndarray] | None = None,
) -> SubproblemSpec:
    """Supporting-hyperplane subproblem at the given iterate.

    Row k states 2 x_prev' E_k x - x_prev' E_k x_prev >= s, which
    under-estimates the pair's true squared distance everywhere and matches
    it at x_prev.
    """
    amps = _amps_of(channel)
    pts = constellation.points
    m_sym, u_sub = pts.shape
    d = 2 * u_sub
    iu, ju = pair_rows if pair_rows is not None else np.triu_indices(m_sym, 1)
    gains = amps**2
    diffs = pts[iu] - pts[ju]
    wre = gains * diffs.real
    wim = gains * diffs.imag
    k = iu.size
    rows = np.arange(k)
    gb = np.zeros((k, m_sym, d))
    gb[rows, iu, :u_sub] = 2.0 * wre
    gb[rows, iu, u_sub:] = 2.0 * wim
    gb[rows, ju, :u_sub] = -2.0 * wre
    gb[rows, ju, u_sub:] = -2.0 * wim
    q = ((diffs.real**2 + diffs.imag**2) * gains).sum(axis=1)
    return SubproblemSpec(
        coeffs=gb.reshape(k, m_sym * d),
        offsets=-q,
        ball_bound=ball_bound,
        group_caps=group_caps,
    )


@dataclass(frozen=True)
class DesignOptions:
    restarts: int = 10
    max_iterations: int = 200
    tol: float = 1e-6  # relative d_min change declaring convergence
    seed: int = 0
    prune_fraction: float | None = None  # keep only this fraction of closest pairs per iteration

    def __post_init__(self):
        if self.restarts < 1 or self.max_iterations < 1:
            raise ValueError("restarts and max_iterations must be positive")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.prune_fraction is not None and not 0 < self.prune_fraction <= 1:
            raise ValueError("prune_fraction must lie in (0, 1]")


@dataclass(eq=False)
class DesignResult:
    constellation: Constellation
    d_min: float
    med_pair: tuple[int, int]
    iterations: int
    restart_index: int
    converged: bool
    history: np.ndarray  # winning restart's per-iteration d_min (normalized channel)
    restart_histories: tuple[np.ndarray, ...]


def _sca_run(a_norm, x0, m_sym, u_sub, ball, caps, options):
    """One SCA descent; returns (x, d_final, history, iterations, converged)."""
    gains = a_norm**2
    iu_all, ju_all = np.triu_indices(m_sym, 1)
    pts = unstack(x0, u_sub)
    q = _pair_sq_dists(gains, pts, iu_all, ju_all)
    d_prev = math.sqrt(float(q.min()))
    hist = [d_prev]
    x = x0
    converged = False
    hint = None
    iters = 0
    force_full = False
    for _ in range(options.max_iterations):
        iters += 1
        pruned = False
        if options.prune_fraction is not None and not force_full:
            keep = max(2 * m_sym, int(math.ceil(options.prune_fraction * q.size)))
            if keep < q.size:
                sel = np.sort(np.argpartition(q, keep - 1)[:keep])
                rows = (iu_all[sel], ju_all[sel])
                pruned = True
            else:
                rows = (iu_all, ju_all)
        else:
            rows = (iu_all, ju_all)
        spec = linearize(a_norm, Constellation(pts), ball_bound=ball, group_caps=caps, pair_rows=rows)
        sol = solve_subproblem(spec, warm_start=x, gap_hint=hint)
        if sol.status == "infeasible":
            raise ValueError("power budget admits no signal")
        pts_new = unstack(sol.x, u_sub)
        q_new = _pair_sq_dists(gains, pts_new, iu_all, ju_all)
        d_new = math.sqrt(float(q_new.min()))
        if d_new < d_prev:
            if pruned:
                # an unconstrained pair collapsed; redo this step with every pair
                force_full = True
                continue
            # subproblem tolerance noise; keep the previous iterate
            converged = True
            break
        force_full = False
        x, pts, q = sol.x, pts_new, q_new
        hist.append(d_new)
        improvement = d_new - d_prev
        hint = max(4.0 * (d_new * d_new - d_prev * d_prev), 1e-8 * max(1.0, d_new * d_new))
        d_prev = d_new
        if improvement <= options.tol * max(d_prev, 1e-300):
            converged = True
            break
    return x, d_prev, np.asarray(hist), iters, converged


def _design(channel, ball, power, options):
    config: SystemConfig = channel.config
    amps = channel.amplitudes
    hmax = float(amps.max())
    if hmax <= 0:
        raise ValueError("channel carries no energy at this position")
    a_norm = amps / hmax
    m_sym = config.symbol_count
    u_sub = amps.size
    n = m_sym * 2 * u_sub

    caps = None
    if power is not None:
        groups = subchannel_groups(m_sym, u_sub)
        caps = tuple((groups[u], m_sym * float(power[u])) for u in range(u_sub))

    best = None
    histories = []
    for r in range(options.restarts):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=options.seed, spawn_key=(r,)))
        x0 = rng.standard_normal(n)
        if power is None:
            x0 *= math.sqrt(m_sym * config.power_budget / float(x0 @ x0))
        else:
            groups = subchannel_groups(m_sym, u_sub)
            for u in range(u_sub):
                block = x0[groups[u]]
                e = float(block @ block)
                if power[u] > 0:
                    x0[groups[u]] = block * math.sqrt(m_sym * float(power[u]) / e)
                else:
                    x0[groups[u]] = 0.0
        x, d_fin, hist, iters, conv = _sca_run(a_norm, x0, m_sym, u_sub, ball, caps, options)
        histories.append(hist)
        if best is None or d_fin > best[0] + _TIE_EPS * max(1.0, best[0]):
            best = (d_fin, r, x, iters, conv)

    _, r_best, x_best, iters, conv = best
    constellation = Constellation.from_stacked(x_best, u_sub)
    d_true, pair = min_distance(channel, constellation)
    return DesignResult(
        constellation=constellation,
        d_min=d_true,
        med_pair=pair,
        iterations=iters,
        restart_index=r_best,
        converged=conv,
        history=histories[r_best],
        restart_histories=tuple(histories),
    )


def design_total_power(channel: ChannelMatrix, options: DesignOptions | None = None) -> DesignResult:
    """Best found constellation under one total average-power budget."""
    options = options or DesignOptions()
    ball = channel.config.symbol_count * channel.config.power_budget
    return _design(channel, ball, None, options)


def design_fixed_power(
    channel: ChannelMatrix,
    power: np.ndarray,
    options: DesignOptions | None = None,
) -> DesignResult:
    """Best found constellation under per-sub-channel average-power caps.

    The returned points already include the power allocation; divide by
    sqrt(power) (see s_form) for the unit-power shape.
    """
    options = options or DesignOptions()
    power = np.asarray(power, dtype=float)
    if power.shape != (channel.config.subchannel_count,):
        raise ValueError("power must have one entry per sub-channel")
    if not np.isfinite(power).all() or (power < 0).any():
        raise ValueError("power entries must be finite and nonnegative")
    if power.sum() <= 0:
        raise ValueError("at least one sub-channel needs positive power")
    return _design(channel, None, power, options)


def polish(
    channel: ChannelMatrix,
    start: Constellation,
    options: DesignOptions | None = None,
    power: np.ndarray | None = None,
) -> DesignResult:
    """Re-run the descent from a given constellation instead of random restarts.

    The descent never accepts a distance decrease, so the result is at least
    as good as the start under this channel.  Useful when a design produced
    for a nearby channel is suspected to dominate the current one.
    """
    options = options or DesignOptions()
    config: SystemConfig = channel.config
    amps = channel.amplitudes
    hmax = float(amps.max())
    if hmax <= 0:
        raise ValueError("channel carries no energy at this position")
    m_sym = config.symbol_count
    u_sub = amps.size
    pts = np.asarray(start.points, dtype=complex)
    if pts.shape != (m_sym, u_sub):
        raise ValueError("start constellation does not match the channel layout")
    x0 = stack(pts)
    if float(x0 @ x0) <= 0:
        raise ValueError("start constellation carries no signal")

    ball = None
    caps = None
    if power is None:
        ball = m_sym * config.power_budget
        e = float(x0 @ x0)
        if e > ball * (1.0 + 1e-9):
            x0 = x0 * math.sqrt(ball / e)
    else:
        power = np.asarray(power, dtype=float)
        if power.shape != (u_sub,):
            raise ValueError("power must have one entry per sub-channel")
        groups = subchannel_groups(m_sym, u_sub)
        caps = tuple((groups[u], m_sym * float(power[u])) for u in range(u_sub))
        for u in range(u_sub):
            block = x0[groups[u]]
            e = float(block @ block)
            cap = m_sym * float(power[u])
            if cap <= 0:
                x0[groups[u]] = 0.0
            elif e > cap * (1.0 + 1e-9):
                x0[groups[u]] = block * math.sqrt(cap / e)
        if float(x0 @ x0) <= 0:
            raise ValueError("power caps leave no signal")

    x, _, hist, iters, conv = _sca_run(amps / hmax, x0, m_sym, u_sub, ball, caps, options)
    constellation = Constellation.from_stacked(x, u_sub)
    d_true, pair = min_distance(channel, constellation)
    return DesignResult(
        constellation=constellation,
        d_min=d_true,
        med_pair=pair,
        iterations=iters,
        restart_index=0,
        converged=conv,
        history=hist,
        restart_histories=(hist,),
    )


def extract_power(constellation: Constellation) -> np.ndarray:
    """Per-sub-channel average power of a constellation."""
    pts = constellation.points
    return (pts.real**2 + pts.imag**2).mean(axis=0)


def s_form(constellation: Constellation, power: np.ndarray) -> Constellation:
    """Strip a power allocation: points / sqrt(power), zero where power is zero."""
    power = np.asarray(power, dtype=float)
    scale = np.zeros_like(power)
    np.divide(1.0, np.sqrt(power), out=scale, where=power > 0)
    return Constellation(constellation.points * scale)


def normalized_distance_diff(channel, rep: Constellation, opt: Constellation) -> float:
    """|1 - med(H, rep) / med(H, opt)|: the distance loss from reusing rep in place of opt."""
    d_opt, _ = min_distance(channel, opt)
    if d_opt == 0:
        raise ValueError("reference constellation has zero minimum distance under this channel")
    d_rep, _ = min_distance(channel, rep)
    return abs(1.0 - d_rep / d_opt)


def independent_qpsk(config: SystemConfig) -> Constellation:
    """Equal-power per-sub-channel QPSK reference; requires M == 4**U."""
    u_sub = config.subchannel_count
    if config.symbol_count != 4**u_sub:
        raise ValueError("independent QPSK needs symbol_count == 4**subchannel_count")
    radius = math.sqrt(config.power_budget / u_sub)
    phases = np.exp(1j * (np.pi / 4 + np.pi / 2 * np.arange(4)))
    grids = np.meshgrid(*([phases] * u_sub), indexing="ij")
    pts = radius * np.stack([g.reshape(-1) for g in grids], axis=1)
    return Constellation(pts)


_CONSTELLATION_MAGIC = "oammap-constellation v1"


def constellation_text(
    constellation: Constellation,
    config: SystemConfig,
    position=None,
    d_min: float | None = None,
) -> str:
    pts = constellation.points
    lines = [
        _CONSTELLATION_MAGIC,
        f"symbols = {pts.shape[0]}",
        f"subchannels = {pts.shape[1]}",
        "frequencies_hz = " + ",".join(f17(f) for f in config.frequencies_hz),
        "modes = " + ",".join(str(l) for l in config.modes),
        f"position_r_m = {f17(position.r_m) if position is not None else 'none'}",
        f"position_z_m = {f17(position.z_m) if position is not None else 'none'}",
        f"d_min = {f17(d_min) if d_min is not None else 'none'}",
        "points:",
    ]
    for row in pts:
        lines.append(" ".join(f"{f17(v.real)} {f17(v.imag)}" for v in row))
    return "\n".join(lines) + "\n"


def save_constellation(path: str | Path, constellation: Constellation, config: SystemConfig,
                       position=None, d_min: float | None = None) -> None:
    atomic_write_text(path, constellation_text(constellation, config, position, d_min))


def parse_constellation(lines: list[str], start: int = 0) -> tuple[Constellation, dict, int]:
    """Parse a constellation block; returns (constellation, metadata, next line index)."""
    if start >= len(lines) or lines[start].strip() != _CONSTELLATION_MAGIC:
        raise ConstellationFormatError("bad or unsupported constellation header")
    meta: dict = {}
    i = start + 1
    while i < len(lines) and lines[i].strip() != "points:":
        line = lines[i].strip()
        if "=" not in line:
            raise ConstellationFormatError(f"malformed header line: {line!r}")
        key, _, value = line.partition("=")
        meta[key.strip()] = value.strip()
        i += 1
    if i >= len(lines):
        raise ConstellationFormatError("missing points section")
    i += 1
    try:
        m_sym = int(meta["symbols"])
        u_sub = int(meta["subchannels"])
    except (KeyError, ValueError) as exc:
        raise ConstellationFormatError("missing or bad symbols/subchannels header") from exc
    if i + m_sym > len(lines):
        raise ConstellationFormatError("truncated points section")
    pts = np.empty((m_sym, u_sub), dtype=complex)
    for k in range(m_sym):
        vals = lines[i + k].split()
        if len(vals) != 2 * u_sub:
            raise ConstellationFormatError(f"point line {k} has {len(vals)} values, expected {2 * u_sub}")
        arr = np.array([float(v) for v in vals])
        pts[k] = arr[0::2] + 1j * arr[1::2]
    return Constellation(pts), meta, i + m_sym


def load_constellation(path: str | Path) -> tuple[Constellation, dict]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    constellation, meta, _ = parse_constellation(lines)
    return constellation, meta
