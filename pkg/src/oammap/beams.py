"""Geometry and link gains for orbital-angular-momentum beams on mmWave carriers.

A link multiplexes I carriers and L helical modes into U = I*L parallel
sub-channels, ordered carrier-major / mode-minor.  All beams share one
Rayleigh distance z_R, so the waist of carrier i is omega_i = sqrt(z_R *
lambda_i / pi).  A receiver position is (r, z): radial offset from the beam
axis and axial distance.  Positions are also addressed by the normalized
offset beta = r / r_ref(z), where r_ref is the peak-intensity ring radius of
a designated reference carrier/mode pair at the same z.

For mode l at carrier i the received power gain is

    g = zeta * (lambda_i / (4 pi d_m))^2 * (r / r_max)^(2|l|)
        * exp(2 (r_max^2 - r^2) / w(z)^2),

with w(z) the beam spot, r_max the ring radius of peak intensity,
d_m = sqrt(r_max^2 + z^2) the slant range, and the convention 0^0 := 1 so
that l = 0 reduces to the plain Friis gain at r = 0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ._io import atomic_write_text, f17

C_LIGHT = 299792458.0  # m/s
Z_GUARD_M = 0.05  # the paraxial model is not trusted closer than this
BEAM_EXTENT_FACTOR = 3.0  # r beyond this many spot radii counts as outside the beam
_FOUR_PI = 4.0 * math.pi


@dataclass(frozen=True)
class SystemConfig:
    """Static description of one multiplexed link.

    frequencies_hz must be strictly increasing; modes are distinct signed
    integers (mode 0 is a plain Gaussian beam).  antenna_gain is either a
    scalar applied to every sub-channel or an I x L table indexed like the
    sub-channel grid.  symbol_count must be a power of two.
    """

    frequencies_hz: tuple[float, ...] = (60e9, 61e9)
    modes: tuple[int, ...] = (0, 1)
    rayleigh_distance_m: float = 4.0
    noise_power: float = 1e-10
    power_budget: float = 1.0
    symbol_count: int = 64
    antenna_gain: float | tuple[tuple[float, ...], ...] = 1.0
    antenna_spacing_m: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "frequencies_hz", tuple(float(f) for f in self.frequencies_hz))
        object.__setattr__(self, "modes", tuple(int(l) for l in self.modes))
        if not self.frequencies_hz:
            raise ValueError("at least one carrier frequency is required")
        if any(f <= 0 for f in self.frequencies_hz):
            raise ValueError("carrier frequencies must be positive")
        if any(b <= a for a, b in zip(self.frequencies_hz, self.frequencies_hz[1:])):
            raise ValueError("carrier frequencies must be strictly increasing")
        if not self.modes:
            raise ValueError("at least one mode is required")
        if len(set(self.modes)) != len(self.modes):
            raise ValueError("modes must be distinct")
        if self.rayleigh_distance_m <= 0:
            raise ValueError("rayleigh_distance_m must be positive")
        if self.noise_power <= 0:
            raise ValueError("noise_power must be positive")
        if self.power_budget <= 0:
            raise ValueError("power_budget must be positive")
        m = self.symbol_count
        if m < 2 or (m & (m - 1)) != 0:
            raise ValueError("symbol_count must be a power of two, at least 2")
        if not isinstance(self.antenna_gain, (int, float)):
            table = tuple(tuple(float(g) for g in row) for row in self.antenna_gain)
            if len(table) != self.carrier_count or any(len(row) != self.mode_count for row in table):
                raise ValueError("antenna_gain table must be carrier_count x mode_count")
            if any(g <= 0 for row in table for g in row):
                raise ValueError("antenna gains must be positive")
            object.__setattr__(self, "antenna_gain", table)
        elif self.antenna_gain <= 0:
            raise ValueError("antenna gains must be positive")

    @property
    def carrier_count(self) -> int:
        return len(self.frequencies_hz)

    @property
    def mode_count(self) -> int:
        return len(self.modes)

    @property
    def subchannel_count(self) -> int:
        return self.carrier_count * self.mode_count

    @property
    def wavelengths_m(self) -> tuple[float, ...]:
        return tuple(C_LIGHT / f for f in self.frequencies_hz)

    @property
    def waists_m(self) -> tuple[float, ...]:
        zr = self.rayleigh_distance_m
        return tuple(math.sqrt(zr * lam / math.pi) for lam in self.wavelengths_m)

    @property
    def subchannels(self) -> tuple[tuple[int, int], ...]:
        """(carrier_index, mode) pairs in carrier-major, mode-minor order."""
        return tuple((i, l) for i in range(self.carrier_count) for l in self.modes)

    def zeta(self, carrier: int, mode: int) -> float:
        """Antenna gain for one (carrier, mode) pair; 1.0 for modes outside the set."""
        if isinstance(self.antenna_gain, (int, float)):
            return float(self.antenna_gain)
        if mode not in self.modes:
            return 1.0
        return self.antenna_gain[carrier][self.modes.index(mode)]


@dataclass(frozen=True)
class ReferenceFrame:
    """Reference carrier wavelength and mode fixing the beta parameterization."""

    wavelength_m: float
    mode: int

    def __post_init__(self):
        if self.wavelength_m <= 0:
            raise ValueError("reference wavelength must be positive")
        if self.mode == 0:
            raise ValueError("reference mode must be nonzero (mode 0 has no ring)")

    @classmethod
    def for_carrier(cls, config: SystemConfig, carrier: int, mode: int = 1) -> "ReferenceFrame":
        return cls(config.wavelengths_m[carrier], mode)


def default_frame(config: SystemConfig) -> ReferenceFrame:
    """First carrier, mode +1."""
    return ReferenceFrame.for_carrier(config, 0, 1)


def _check_frame(config: SystemConfig, frame: ReferenceFrame) -> None:
    lams = config.wavelengths_m
    if not any(math.isclose(frame.wavelength_m, lam, rel_tol=1e-9) for lam in lams):
        raise ValueError("frame wavelength is not one of the system's carrier wavelengths")


@dataclass(frozen=True)
class Position:
    """Receiver position: radial offset r and axial distance z, both in meters."""

    r_m: float
    z_m: float

    def __post_init__(self):
        if self.r_m < 0:
            raise ValueError("r_m must be nonnegative")
        if self.z_m < Z_GUARD_M:
            raise ValueError(f"z_m must be at least the {Z_GUARD_M} m model guard")

    @classmethod
    def from_beta(cls, beta: float, z: float, config: SystemConfig, frame: ReferenceFrame) -> "Position":
        if beta < 0:
            raise ValueError("beta must be nonnegative")
        return cls(beta * frame_radius(config, frame, z), z)

    def beta_of(self, config: SystemConfig, frame: ReferenceFrame) -> float:
        return self.r_m / frame_radius(config, frame, self.z_m)


def beam_spot(config: SystemConfig, carrier: int, z: float) -> float:
    """Beam spot radius w_i(z) = omega_i * sqrt(1 + (z/z_R)^2)."""
    if z <= 0:
        raise ValueError("z must be positive")
    zr = config.rayleigh_distance_m
    return config.waists_m[carrier] * math.sqrt(1.0 + (z / zr) ** 2)


def peak_radius(config: SystemConfig, carrier: int, mode: int, z: float) -> float:
    """Radius of the peak-intensity ring; 0 for mode 0 (on-axis peak)."""
    if z <= 0:
        raise ValueError("z must be positive")
    if mode == 0:
        return 0.0
    zr = config.rayleigh_distance_m
    return config.waists_m[carrier] * math.sqrt((abs(mode) / 2.0) * (1.0 + (z / zr) ** 2))


def frame_radius(config: SystemConfig, frame: ReferenceFrame, z: float) -> float:
    """Ring radius of the reference carrier/mode at z (the beta = 1 radius)."""
    _check_frame(config, frame)
    if z <= 0:
        raise ValueError("z must be positive")
    zr = config.rayleigh_distance_m
    waist = math.sqrt(zr * frame.wavelength_m / math.pi)
    return waist * math.sqrt((abs(frame.mode) / 2.0) * (1.0 + (z / zr) ** 2))


def link_gain(config: SystemConfig, carrier: int, mode: int, r: float, z: float) -> float:
    """Received power gain of one sub-channel at radial offset r, distance z.

    Args:
        carrier: 0-based carrier index.
        mode: helical mode l (any integer; need not be in config.modes).
        r: radial offset from the beam axis, m.
        z: axial distance, m; must be at least the model guard.
    """
    if z < Z_GUARD_M:
        raise ValueError(f"z must be at least the {Z_GUARD_M} m model guard")
    if r < 0:
        raise ValueError("r must be nonnegative")
    lam = config.wavelengths_m[carrier]
    zr = config.rayleigh_distance_m
    spread = 1.0 + (z / zr) ** 2
    rmax2 = (zr * lam / math.pi) * (abs(mode) / 2.0) * spread
    dm2 = rmax2 + z * z
    spot2 = (zr * lam / math.pi) * spread
    friis = config.zeta(carrier, mode) * (lam / _FOUR_PI) ** 2 / dm2
    if mode == 0:
        radial = 1.0  # 0^0 convention: no ring, on-axis peak
    else:
        radial = (r * r / rmax2) ** abs(mode)
    return friis * radial * math.exp(2.0 * (rmax2 - r * r) / spot2)


def link_gain_at_beta(
    config: SystemConfig,
    carrier: int,
    mode: int,
    frame: ReferenceFrame,
    beta: float,
    z: float,
) -> float:
    """Link gain with the radial offset given as beta in the reference frame.

    Evaluates the closed form in beta,

        g = zeta * (lambda_i / (4 pi d_m))^2
            * (lambda_a |l_m| / (lambda_i |l|))^|l| * beta^(2|l|) * e^|l|
            * exp(-(lambda_a |l_m| / lambda_i) * beta^2),

    which is algebraically identical to link_gain at r = beta * frame_radius.
    """
    _check_frame(config, frame)
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    if z < Z_GUARD_M:
        raise ValueError(f"z must be at least the {Z_GUARD_M} m model guard")
    lam = config.wavelengths_m[carrier]
    lam_a = frame.wavelength_m
    lm = abs(frame.mode)
    zr = config.rayleigh_distance_m
    spread = 1.0 + (z / zr) ** 2
    rmax2 = (zr * lam / math.pi) * (abs(mode) / 2.0) * spread
    dm2 = rmax2 + z * z
    friis = config.zeta(carrier, mode) * (lam / _FOUR_PI) ** 2 / dm2
    if mode == 0:
        ring = 1.0
    else:
        ring = (lam_a * lm / (lam * abs(mode))) ** abs(mode) * beta ** (2 * abs(mode)) * math.exp(abs(mode))
    return friis * ring * math.exp(-(lam_a * lm / lam) * beta * beta)


def beta_peak(config: SystemConfig, carrier: int, mode: int, frame: ReferenceFrame) -> float:
    """beta maximizing the gain of (carrier, mode): sqrt(lambda_i |l| / (lambda_a |l_m|)).

    Returns 0.0 for mode 0, whose gain decreases monotonically in beta.
    """
    _check_frame(config, frame)
    if mode == 0:
        return 0.0
    lam = config.wavelengths_m[carrier]
    return math.sqrt(lam * abs(mode) / (frame.wavelength_m * abs(frame.mode)))


def carrier_ratio_z_term(config: SystemConfig, i: int, j: int, mode: int, z: float) -> float:
    """Axial factor of the same-mode gain ratio: slant-range ratio d_jm^2 / d_im^2.

    Increases monotonically with z toward 1 when lambda_i > lambda_j.
    """
    if z <= 0:
        raise ValueError("z must be positive")
    zr = config.rayleigh_distance_m
    spread = (abs(mode) / 2.0) * (1.0 + (z / zr) ** 2)
    wi2 = zr * config.wavelengths_m[i] / math.pi
    wj2 = zr * config.wavelengths_m[j] / math.pi
    return (wj2 * spread + z * z) / (wi2 * spread + z * z)


def carrier_gain_ratio(
    config: SystemConfig,
    i: int,
    j: int,
    mode: int,
    frame: ReferenceFrame,
    beta: float,
    z: float,
    variant: str = "exact",
) -> float:
    """Gain ratio of two carriers at the same mode and the same position.

    Requires lambda_i > lambda_j (pass the lower-frequency carrier first);
    i == j degenerates to 1.  The exact variant is

        (lambda_j/lambda_i)^(|l|-2) * z_term * exp(beta^2 |l_m| lambda_a (1/lambda_j - 1/lambda_i))

    and equals the direct quotient of link gains; the approx variant drops the
    z_term, which tends to 1 with distance.
    """
    _check_frame(config, frame)
    if variant not in ("exact", "approx"):
        raise ValueError("variant must be 'exact' or 'approx'")
    lam_i = config.wavelengths_m[i]
    lam_j = config.wavelengths_m[j]
    if i == j:
        return 1.0
    if lam_i <= lam_j:
        raise ValueError("carrier i must have the longer wavelength (lower frequency)")
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    lam_a = frame.wavelength_m
    lm = abs(frame.mode)
    value = (lam_j / lam_i) ** (abs(mode) - 2) * math.exp(
        beta * beta * lm * lam_a * (1.0 / lam_j - 1.0 / lam_i)
    )
    if variant == "exact":
        value *= carrier_ratio_z_term(config, i, j, mode, z)
    return value


def mode_gain_ratio(
    config: SystemConfig,
    carrier: int,
    l1: int,
    l2: int,
    frame: ReferenceFrame,
    beta: float,
    z: float,
) -> float:
    """Approximate gain ratio of two modes on one carrier at the same position.

    Requires |l1| > |l2| and beta > 0.  The slant-range factor is dropped;
    with the 0^0 := 1 convention for l2 = 0,

        (lambda_a/lambda_i)^(|l1|-|l2|) * (beta^2 |l_m|)^(|l1|-|l2|)
        * |l2|^|l2| / |l1|^|l1| * e^(|l1|-|l2|).
    """
    _check_frame(config, frame)
    if abs(l1) <= abs(l2):
        raise ValueError("|l1| must exceed |l2|")
    if beta <= 0:
        raise ValueError("beta must be positive")
    if z <= 0:
        raise ValueError("z must be positive")
    lam = config.wavelengths_m[carrier]
    lam_a = frame.wavelength_m
    lm = abs(frame.mode)
    diff = abs(l1) - abs(l2)
    small = 1.0 if l2 == 0 else abs(l2) ** abs(l2)
    return (lam_a / lam) ** diff * (beta * beta * lm) ** diff * small / abs(l1) ** abs(l1) * math.exp(diff)


def carrier_ratio_across_positions(
    config: SystemConfig,
    i: int,
    j: int,
    frame: ReferenceFrame,
    beta1: float,
    beta2: float,
) -> float:
    """How the same-mode carrier ratio changes between two radial positions.

    exp(|l_m| lambda_a (1/lambda_j - 1/lambda_i) (beta1^2 - beta2^2)); the
    z and mode dependence cancels.
    """
    _check_frame(config, frame)
    lam_i = config.wavelengths_m[i]
    lam_j = config.wavelengths_m[j]
    lm = abs(frame.mode)
    return math.exp(lm * frame.wavelength_m * (1.0 / lam_j - 1.0 / lam_i) * (beta1 ** 2 - beta2 ** 2))


def mode_ratio_across_positions(l1: int, l2: int, beta1: float, beta2: float) -> float:
    """How the same-carrier mode ratio changes between two radial positions: (beta1/beta2)^(2(|l1|-|l2|))."""
    if beta1 <= 0 or beta2 <= 0:
        raise ValueError("betas must be positive")
    return (beta1 / beta2) ** (2 * (abs(l1) - abs(l2)))


def boundary_asymmetry(
    config: SystemConfig,
    carrier: int,
    mode: int,
    frame: ReferenceFrame,
    dbeta: float,
    z: float,
) -> float:
    """Gain ratio across the two sides of a mode's peak ring, g(beta_max + dbeta) / g(beta_max - dbeta).

    Exact (z-independent) quotient,

        (1 + 2 dbeta / (beta_max - dbeta))^(2|l|)
        * exp(-(|l_m| lambda_a / lambda_i) * 4 dbeta beta_max),

    always > 1 for 0 < dbeta < beta_max: the inner flank decays faster.
    """
    _check_frame(config, frame)
    if mode == 0:
        raise ValueError("mode 0 has no ring boundary")
    if z < Z_GUARD_M:
        raise ValueError(f"z must be at least the {Z_GUARD_M} m model guard")
    bmax = beta_peak(config, carrier, mode, frame)
    if not 0 < dbeta < bmax:
        raise ValueError("dbeta must lie strictly between 0 and beta_max")
    lam = config.wavelengths_m[carrier]
    lm = abs(frame.mode)
    ring = (1.0 + 2.0 * dbeta / (bmax - dbeta)) ** (2 * abs(mode))
    return ring * math.exp(-(lm * frame.wavelength_m / lam) * 4.0 * dbeta * bmax)


def channel_response(
    config: SystemConfig,
    carrier: int,
    mode: int,
    r: float,
    phi: float,
    z: float,
) -> complex:
    """Complex sub-channel response including curvature, range, and helical phases.

    The magnitude squared equals link_gain; the three phase factors are the
    wavefront curvature term, the propagation delay over the slant range, and
    the helical phase -l*phi.  Diagnostic only: constellation distances never
    depend on these phases.
    """
    gain = link_gain(config, carrier, mode, r, z)
    lam = config.wavelengths_m[carrier]
    zr = config.rayleigh_distance_m
    spread = 1.0 + (z / zr) ** 2
    rmax2 = (zr * lam / math.pi) * (abs(mode) / 2.0) * spread
    dm = math.sqrt(rmax2 + z * z)
    curvature = z * (1.0 + (zr / z) ** 2)
    phase = -math.pi * (r * r - rmax2) / (lam * curvature) - 2.0 * math.pi * dm / lam - mode * phi
    return math.sqrt(gain) * complex(math.cos(phase), math.sin(phase))


@dataclass(eq=False)
class ChannelMatrix:
    """Diagonal channel: one amplitude per sub-channel at a fixed position.

    amplitudes[u] = sqrt(gain of sub-channel u), carrier-major order.  For
    positions outside the beam extent every sub-channel falls back to the
    aligned plain-wave (mode 0, r = 0) gain of its carrier.
    """

    config: SystemConfig
    position: Position
    amplitudes: np.ndarray
    inside_beam: bool

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=float)
        if self.amplitudes.shape != (self.config.subchannel_count,):
            raise ValueError("amplitudes must have one entry per sub-channel")
        self.amplitudes.setflags(write=False)

    @property
    def gains(self) -> np.ndarray:
        return self.amplitudes ** 2


def channel_matrix(config: SystemConfig, position: Position) -> ChannelMatrix:
    """Evaluate all sub-channel amplitudes at a position."""
    z = position.z_m
    extent = BEAM_EXTENT_FACTOR * max(beam_spot(config, i, z) for i in range(config.carrier_count))
    inside = position.r_m <= extent
    amps = np.empty(config.subchannel_count)
    for u, (i, l) in enumerate(config.subchannels):
        if inside:
            amps[u] = math.sqrt(link_gain(config, i, l, position.r_m, z))
        else:
            amps[u] = math.sqrt(link_gain(config, i, 0, 0.0, z))
    return ChannelMatrix(config, position, amps, inside)


def write_gain_field_csv(
    config: SystemConfig,
    frame: ReferenceFrame,
    betas: Sequence[float],
    zs: Sequence[float],
    path: str | Path,
) -> None:
    """Dump per-sub-channel gains over a (beta, z) grid as CSV."""
    rows = ["beta,z_m,subchannel_index,carrier_hz,mode,gain,amplitude"]
    for beta in betas:
        for z in zs:
            pos = Position.from_beta(beta, z, config, frame)
            ch = channel_matrix(config, pos)
            for u, (i, l) in enumerate(config.subchannels):
                g = ch.gains[u]
                rows.append(
                    f"{f17(beta)},{f17(z)},{u},{f17(config.frequencies_hz[i])},{l},{f17(g)},{f17(ch.amplitudes[u])}"
                )
    atomic_write_text(path, "\n".join(rows) + "\n")
