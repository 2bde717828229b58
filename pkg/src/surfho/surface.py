"""Huygens metasurface model: meta-atom response, array factor, beam patterns.

Angle convention (1-D aperture along x, normal along z): every angle is the
signed angle from the surface normal, in degrees.  For a path through element
n at position x_n (in wavelengths) arriving from ``incident`` and leaving
toward ``angle``, the accumulated spatial phase is

    phi_n = 2*pi * x_n * (sin(angle) + sin(incident))

so the array factor sum(c_n * exp(-j*phi_n)) is symmetric in the two angles:
uplink and downlink evaluations are identical (angular reciprocity).  With
this convention a uniform aperture reflects an incident wave at ``-incident``
(specular), and a transmitted beam measured on the far side uses that side's
mirror-oriented frame, so "straight through" is also ``-incident``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DomainError

VOLTAGE_MIN = 0.0
VOLTAGE_MAX = 16.0
BAND_GHZ = (25.0, 27.0)
STEER_LIMIT_DEG = 70.0

MODE_SINGLE_T = "single-transmissive"
MODE_DUAL_TR = "dual-transflective"
MODE_DUAL_TT = "dual-transmissive"
MODE_OFF = "off"
CONFIG_MODES = (MODE_SINGLE_T, MODE_DUAL_TR, MODE_DUAL_TT, MODE_OFF)

SIDE_T = "transmissive"
SIDE_R = "reflective"

# Pattern gains are never reported below this floor (perfect nulls otherwise
# produce -inf dB).
GAIN_FLOOR_DB = -80.0


@dataclass(frozen=True)
class ResonatorParams:
    """Constants of the two voltage-tuned resonators (GHz, GHz/V, unitless).

    Tuned once so that at 26 GHz the (u_m, u_e) square provides transmissive
    phases covering the full circle at |c_t| >= 0.5, strong reflective
    regions, and a specular uniform state; both resonances cross the carrier
    inside the 0-16 V range.
    """

    f_e0: float = 24.5
    slope_e: float = 0.24
    gamma_e: float = 0.25
    couple_e: float = 0.8
    f_m0: float = 23.9
    slope_m: float = 0.24
    gamma_m: float = 0.25
    couple_m: float = 0.8

    def as_tuple(self) -> tuple[float, ...]:
        return (
            self.f_e0, self.slope_e, self.gamma_e, self.couple_e,
            self.f_m0, self.slope_m, self.gamma_m, self.couple_m,
        )


@dataclass(frozen=True)
class MetaAtomResponse:
    """One meta-atom's complex coefficients at a bias/frequency point."""

    u_m: float
    u_e: float
    f_ghz: float
    c_t: complex
    c_r: complex


class CoupledResonatorModel:
    """Parametric voltage-to-coefficient model (the default atom model)."""

    def __init__(self, params: ResonatorParams | None = None):
        self.params = params or ResonatorParams()

    def coefficients(self, u_m, u_e, f_ghz: float):
        """Vectorized (c_t, c_r); no domain validation (hot path)."""
        return kernels.atom_coefficients(u_m, u_e, f_ghz, self.params.as_tuple())


class MeasuredGridModel:
    """Atom model backed by a measured (u_m, u_e) -> (c_t, c_r) table.

    File format: header ``u_m,u_e,f_ghz,re_ct,im_ct,re_cr,im_cr`` then one
    row per grid point, row-major over a rectangular voltage grid.  Lookup is
    bilinear in (u_m, u_e) on the plane whose frequency is nearest to the
    query.
    """

    def __init__(self, u_m_grid, u_e_grid, f_ghz: float, c_t, c_r):
        self.u_m_grid = np.asarray(u_m_grid, dtype=float)
        self.u_e_grid = np.asarray(u_e_grid, dtype=float)
        self.f_ghz = float(f_ghz)
        self.c_t = np.asarray(c_t, dtype=complex)
        self.c_r = np.asarray(c_r, dtype=complex)
        if self.c_t.shape != (self.u_m_grid.size, self.u_e_grid.size):
            raise DomainError("grid shape does not match voltage axes")

    @classmethod
    def from_file(cls, path) -> "MeasuredGridModel":
        raw = np.genfromtxt(path, delimiter=",", names=True)
        if raw.size == 0:
            raise DomainError(f"empty response grid: {path}")
        req = ("u_m", "u_e", "f_ghz", "re_ct", "im_ct", "re_cr", "im_cr")
        if raw.dtype.names != req:
            raise DomainError(
                f"response grid header must be {','.join(req)}, "
                f"got {','.join(raw.dtype.names or ())}")
        f_vals = np.unique(raw["f_ghz"])
        if f_vals.size != 1:
            raise DomainError("response grid must hold a single frequency plane")
        um = np.unique(raw["u_m"])
        ue = np.unique(raw["u_e"])
        if um.size * ue.size != raw.size:
            raise DomainError("response grid is not rectangular over (u_m, u_e)")
        order = np.lexsort((raw["u_e"], raw["u_m"]))
        ct = (raw["re_ct"] + 1j * raw["im_ct"])[order].reshape(um.size, ue.size)
        cr = (raw["re_cr"] + 1j * raw["im_cr"])[order].reshape(um.size, ue.size)
        return cls(um, ue, float(f_vals[0]), ct, cr)

    def _interp(self, table, u_m, u_e):
        im = np.clip(np.searchsorted(self.u_m_grid, u_m) - 1, 0, self.u_m_grid.size - 2)
        ie = np.clip(np.searchsorted(self.u_e_grid, u_e) - 1, 0, self.u_e_grid.size - 2)
        m0, m1 = self.u_m_grid[im], self.u_m_grid[im + 1]
        e0, e1 = self.u_e_grid[ie], self.u_e_grid[ie + 1]
        wm = np.clip((u_m - m0) / (m1 - m0), 0.0, 1.0)
        we = np.clip((u_e - e0) / (e1 - e0), 0.0, 1.0)
        return ((1 - wm) * (1 - we) * table[im, ie]
                + wm * (1 - we) * table[im + 1, ie]
                + (1 - wm) * we * table[im, ie + 1]
                + wm * we * table[im + 1, ie + 1])

    def coefficients(self, u_m, u_e, f_ghz: float):
        u_m = np.asarray(u_m, dtype=float)
        u_e = np.asarray(u_e, dtype=float)
        return self._interp(self.c_t, u_m, u_e), self._interp(self.c_r, u_m, u_e)


DEFAULT_ATOM_MODEL = CoupledResonatorModel()


def atom_response(u_m: float, u_e: float, f_ghz: float,
                  model=DEFAULT_ATOM_MODEL) -> MetaAtomResponse:
    """Validated scalar response of one meta-atom."""
    if not (VOLTAGE_MIN <= u_m <= VOLTAGE_MAX and VOLTAGE_MIN <= u_e <= VOLTAGE_MAX):
        raise DomainError(f"bias voltages ({u_m}, {u_e}) outside "
                          f"[{VOLTAGE_MIN}, {VOLTAGE_MAX}] V")
    if not (BAND_GHZ[0] <= f_ghz <= BAND_GHZ[1]):
        raise DomainError(f"frequency {f_ghz} GHz outside model band {BAND_GHZ}")
    c_t, c_r = model.coefficients(u_m, u_e, f_ghz)
    return MetaAtomResponse(float(u_m), float(u_e), float(f_ghz),
                            complex(c_t), complex(c_r))


@dataclass(frozen=True)
class SurfaceGeometry:
    """1-D linear aperture: element count, spacing (wavelengths), carrier."""

    n_elements: int = 64
    spacing_wl: float = 0.5
    carrier_ghz: float = 26.0

    def __post_init__(self):
        if self.n_elements < 1:
            raise DomainError(f"n_elements must be >= 1, got {self.n_elements}")
        if self.spacing_wl <= 0:
            raise DomainError(f"spacing must be > 0, got {self.spacing_wl}")

    def positions_wl(self) -> np.ndarray:
        return np.arange(self.n_elements, dtype=float) * self.spacing_wl

    def fingerprint(self) -> str:
        text = f"{self.n_elements}|{self.spacing_wl!r}|{self.carrier_ghz!r}"
        return hashlib.sha256(text.encode()).hexdigest()[:12]


@dataclass(frozen=True)
class SurfaceConfig:
    """Per-element (u_m, u_e) bias pairs plus the operating mode."""

    voltages: tuple[tuple[float, float], ...]
    mode: str = MODE_SINGLE_T

    def __post_init__(self):
        if self.mode not in CONFIG_MODES:
            raise DomainError(f"unknown surface mode: {self.mode!r}")
        for um, ue in self.voltages:
            if not (VOLTAGE_MIN <= um <= VOLTAGE_MAX
                    and VOLTAGE_MIN <= ue <= VOLTAGE_MAX):
                raise DomainError(f"voltage pair ({um}, {ue}) outside "
                                  f"[{VOLTAGE_MIN}, {VOLTAGE_MAX}] V")

    @classmethod
    def from_arrays(cls, u_m, u_e, mode: str) -> "SurfaceConfig":
        pairs = tuple((float(m), float(e)) for m, e in zip(u_m, u_e, strict=True))
        return cls(pairs, mode)

    @classmethod
    def off(cls, n_elements: int) -> "SurfaceConfig":
        """Unprogrammed baseline: every element at 0 V (specular mirror)."""
        return cls(((0.0, 0.0),) * n_elements, MODE_OFF)

    @property
    def n_elements(self) -> int:
        return len(self.voltages)

    def u_m(self) -> np.ndarray:
        return np.array([v[0] for v in self.voltages])

    def u_e(self) -> np.ndarray:
        return np.array([v[1] for v in self.voltages])


@dataclass(frozen=True, eq=False)
class BeamPattern:
    """Per-angle transmissive/reflective gains (dB, 0 dB = coherent aperture)."""

    angles_deg: np.ndarray
    gain_t_db: np.ndarray
    gain_r_db: np.ndarray
    incident_deg: float = 0.0

    def peak(self, side: str) -> tuple[float, float]:
        g = self.gain_t_db if side == SIDE_T else self.gain_r_db
        i = int(np.argmax(g))
        return float(self.angles_deg[i]), float(g[i])


def steering_phases(geometry: SurfaceGeometry, angle_deg, incident_deg) -> np.ndarray:
    """Spatial phase phi_n for each element along the (incident -> angle) path."""
    x = geometry.positions_wl()
    s = np.sin(np.radians(angle_deg)) + np.sin(np.radians(incident_deg))
    return 2.0 * np.pi * np.multiply.outer(np.atleast_1d(np.asarray(s, dtype=float)), x)


def array_factor(config: SurfaceConfig, geometry: SurfaceGeometry, angle_deg: float,
                 side: str, incident_deg: float = 0.0,
                 model=DEFAULT_ATOM_MODEL, f_ghz: float | None = None) -> complex:
    """Complex aperture sum toward ``angle_deg`` for a wave from ``incident_deg``."""
    if side not in (SIDE_T, SIDE_R):
        raise DomainError(f"side must be '{SIDE_T}' or '{SIDE_R}', got {side!r}")
    if abs(angle_deg) > 90.0 or abs(incident_deg) > 90.0:
        raise DomainError("angles must lie within +/-90 degrees of the normal")
    if config.n_elements != geometry.n_elements:
        raise DomainError(f"config has {config.n_elements} elements, "
                          f"geometry has {geometry.n_elements}")
    f = geometry.carrier_ghz if f_ghz is None else f_ghz
    c_t, c_r = model.coefficients(config.u_m(), config.u_e(), f)
    c = c_t if side == SIDE_T else c_r
    phi = steering_phases(geometry, angle_deg, incident_deg)[0]
    return complex(np.sum(c * np.exp(-1j * phi)))


def _pattern_gains(c: np.ndarray, phi: np.ndarray, n: int) -> np.ndarray:
    af = np.exp(-1j * phi) @ c
    mag = np.maximum(np.abs(af) / n, 10 ** (GAIN_FLOOR_DB / 20.0))
    return 20.0 * np.log10(mag)


def beam_pattern(config: SurfaceConfig, geometry: SurfaceGeometry,
                 incident_deg: float = 0.0, grid_deg=None,
                 model=DEFAULT_ATOM_MODEL, f_ghz: float | None = None) -> BeamPattern:
    """Both-side gain patterns over an angle grid (default 1 degree, +/-70)."""
    if grid_deg is None:
        grid_deg = default_angle_grid()
    grid = np.asarray(grid_deg, dtype=float)
    if grid.size == 0:
        raise DomainError("angle grid is empty")
    if np.any(np.abs(grid) > 90.0):
        raise DomainError("angle grid must lie within +/-90 degrees")
    f = geometry.carrier_ghz if f_ghz is None else f_ghz
    c_t, c_r = model.coefficients(config.u_m(), config.u_e(), f)
    phi = steering_phases(geometry, grid, incident_deg)
    n = geometry.n_elements
    return BeamPattern(grid, _pattern_gains(np.asarray(c_t), phi, n),
                       _pattern_gains(np.asarray(c_r), phi, n), incident_deg)


def default_angle_grid(step_deg: float = 1.0) -> np.ndarray:
    return np.arange(-STEER_LIMIT_DEG, STEER_LIMIT_DEG + step_deg / 2, step_deg)


def beam_peak(pattern: BeamPattern, side: str, near_deg: float,
              geometry: SurfaceGeometry) -> tuple[float, float]:
    """(angle, gain) of the pattern peak inside the main-lobe window at
    ``near_deg``.

    The window is the null-to-null neighborhood in sin-space, so a beam's
    peak can be tracked even when an unrelated lobe (e.g. specular leakage)
    is globally stronger, as happens for strongly asymmetric power splits.
    """
    gains = pattern.gain_t_db if side == SIDE_T else pattern.gain_r_db
    sin_grid = np.sin(np.radians(pattern.angles_deg))
    halfwidth = 1.5 / (geometry.n_elements * geometry.spacing_wl)
    window = np.abs(sin_grid - np.sin(np.radians(near_deg))) < halfwidth
    if not window.any():
        raise DomainError(f"no grid points near {near_deg} degrees")
    idx = np.flatnonzero(window)
    j = idx[int(np.argmax(gains[idx]))]
    return float(pattern.angles_deg[j]), float(gains[j])


def realized_gains(config: SurfaceConfig, geometry: SurfaceGeometry,
                   theta_t_deg: float, theta_r_deg: float,
                   incident_deg: float = 0.0, model=DEFAULT_ATOM_MODEL,
                   f_ghz: float | None = None) -> tuple[float, float]:
    """(G_w_tra, G_w_ref) in dB: pattern values at the two target angles.

    These are exactly the values the handover decision subtracts from its
    measurements, one per beam side.
    """
    for a in (theta_t_deg, theta_r_deg):
        if abs(a) > STEER_LIMIT_DEG:
            raise DomainError(f"target angle {a} outside steering range "
                              f"+/-{STEER_LIMIT_DEG}")
    n = geometry.n_elements
    af_t = array_factor(config, geometry, theta_t_deg, SIDE_T, incident_deg,
                        model, f_ghz)
    af_r = array_factor(config, geometry, theta_r_deg, SIDE_R, incident_deg,
                        model, f_ghz)
    floor = 10 ** (GAIN_FLOOR_DB / 20.0)
    g_t = 20.0 * np.log10(max(abs(af_t) / n, floor))
    g_r = 20.0 * np.log10(max(abs(af_r) / n, floor))
    return float(g_t), float(g_r)
