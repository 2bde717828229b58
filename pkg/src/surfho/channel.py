"""Propagation and link-budget layer: FSPL, SNR sums, geometry, RSRP paths.

RSRP composition follows the dB-sum decomposition used by the handover
decision: every received power splits into a gNB-side link aggregate

    X = EIRP + sector_gain(bearing) - FSPL(gnb..surface) - window loss

plus surface gains plus the in-vehicle (or gNB-side receive) terms.  All "L"
path-loss symbols contribute with a negative sign.  The ground-truth X values
are exposed only for tests and the synthetic engine; the protocol code sees
nothing but measurement samples.

Geometry convention: world coordinates in meters, angles in degrees.  Surface
bearings are signed angles from the outward surface normal (positive
counter-clockwise); array-factor evaluations use the bearings directly on
both sides, so specular reflection of a wave from bearing b peaks at -b.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from .codebook import CodebookEntry
from .errors import DomainError
from .surface import SIDE_R, SIDE_T, SurfaceGeometry, array_factor

C_M_PER_S = 299792458.0

PATH_DIRECT = "direct"
PATH_SURFACE_T = "via-surface-transmissive"
PATH_SURFACE_R = "via-surface-reflective"
PATHS = (PATH_DIRECT, PATH_SURFACE_T, PATH_SURFACE_R)


def fspl(d_m: float, f_ghz: float) -> float:
    """Free-space path loss 20*log10(4*pi*d*f/c) in dB."""
    if d_m <= 0:
        raise DomainError(f"distance must be positive, got {d_m}")
    if f_ghz <= 0:
        raise DomainError(f"frequency must be positive, got {f_ghz}")
    return 20.0 * math.log10(4.0 * math.pi * d_m * f_ghz * 1e9 / C_M_PER_S)


@dataclass(frozen=True)
class LinkBudgetParams:
    """Inputs of the worst-case downlink / gNB-to-gNB SNR sums (all dB/dBm).

    Defaults are the bus-deployment constants: 60 dBm EIRP, 103 dB gNB path
    loss (0.15 km), 3 dB window, 24 dBi surface capture and beamforming
    gains, 72 dB in-vehicle loss (4 m), 8 dBi UE gain, 29.5 dB serving-gNB
    receive gain, -89 dBm noise floor.
    """

    p_gnb_dbm: float = 60.0
    l_gnb_db: float = 103.0
    l_window_db: float = 3.0
    g_ris_rx_dbi: float = 24.0
    g_ris_tx_dbi: float = 24.0
    l_ue_db: float = 72.0
    g_ue_dbi: float = 8.0
    g_gnb_rx_dbi: float = 29.5
    p_nf_dbm: float = -89.0

    def __post_init__(self):
        for name in ("l_gnb_db", "l_window_db", "l_ue_db"):
            if getattr(self, name) < 0:
                raise DomainError(f"{name} must be >= 0 dB")

    @classmethod
    def from_distances(cls, d_gnb_m: float, d_ue_m: float, f_ghz: float = 26.0,
                       **kwargs) -> "LinkBudgetParams":
        return cls(l_gnb_db=fspl(d_gnb_m, f_ghz), l_ue_db=fspl(d_ue_m, f_ghz),
                   **kwargs)


def snr_ue(p: LinkBudgetParams) -> float:
    """Downlink SNR at the in-vehicle UE (dB)."""
    return (p.p_gnb_dbm - p.l_gnb_db - p.l_window_db + p.g_ris_rx_dbi
            + p.g_ris_tx_dbi - p.l_ue_db + p.g_ue_dbi - p.p_nf_dbm)


def snr_gnb(p: LinkBudgetParams) -> float:
    """Reflected neighbor-gNB SNR measured at the serving gNB (dB).

    The signal crosses the window twice (entry and exit).
    """
    return (p.p_gnb_dbm - p.l_gnb_db - p.l_window_db + p.g_ris_rx_dbi
            + p.g_ris_tx_dbi - p.l_window_db - p.l_gnb_db + p.g_gnb_rx_dbi
            - p.p_nf_dbm)


def in_vehicle_loss_bounds(d_min_m: float = 0.3, d_max_m: float = 1.0,
                           f_ghz: float = 26.0) -> tuple[float, float]:
    """Signed in-vehicle path-loss bounds (l_min, l_max) for the decision
    module; the maximum distance yields the most negative bound l_min."""
    if d_min_m > d_max_m:
        raise DomainError(f"d_min {d_min_m} exceeds d_max {d_max_m}")
    return -fspl(d_max_m, f_ghz), -fspl(d_min_m, f_ghz)


def snr_ue_terms(p: LinkBudgetParams) -> list[tuple[str, float]]:
    return [("P_gNB", p.p_gnb_dbm), ("-L_gNB", -p.l_gnb_db),
            ("-L_window", -p.l_window_db), ("+G_RIS_Rx", p.g_ris_rx_dbi),
            ("+G_RIS_Tx", p.g_ris_tx_dbi), ("-L_UE", -p.l_ue_db),
            ("+G_UE", p.g_ue_dbi), ("-P_nf", -p.p_nf_dbm)]


def snr_gnb_terms(p: LinkBudgetParams) -> list[tuple[str, float]]:
    return [("P_gNB_n", p.p_gnb_dbm), ("-L_gNB_n", -p.l_gnb_db),
            ("-L_window", -p.l_window_db), ("+G_RIS_Rx", p.g_ris_rx_dbi),
            ("+G_RIS_Tx", p.g_ris_tx_dbi), ("-L_window", -p.l_window_db),
            ("-L_gNB_s", -p.l_gnb_db), ("+G_gNB_s", p.g_gnb_rx_dbi),
            ("-P_nf", -p.p_nf_dbm)]


@dataclass(frozen=True)
class GnbSite:
    """A roadside base station with a sector-limited scanning antenna.

    Transmit and receive are treated as symmetric (reciprocal beams), so
    the EIRP-level aggregate serves both directions.
    """

    gnb_id: str
    x_m: float
    y_m: float
    eirp_dbm: float = 60.0
    carrier_ghz: float = 26.0
    boresight_deg: float = -90.0
    scan_range_deg: float = 60.0
    rolloff_db_per_deg: float = 1.5

    def sector_gain_db(self, toward_xy: tuple[float, float]) -> float:
        """0 dB inside the beam-scan sector, linear rolloff beyond its edge."""
        az = math.degrees(math.atan2(toward_xy[1] - self.y_m,
                                     toward_xy[0] - self.x_m))
        off = abs((az - self.boresight_deg + 180.0) % 360.0 - 180.0)
        excess = max(0.0, off - self.scan_range_deg)
        return -self.rolloff_db_per_deg * excess


@dataclass(frozen=True)
class VehiclePose:
    x_m: float
    y_m: float
    heading_deg: float


@dataclass(frozen=True)
class SurfaceMount:
    """Surface placement on the vehicle: offset and outward normal, both in
    the vehicle frame (x forward, y left; normal 90 = facing left)."""

    offset_x_m: float = 0.0
    offset_y_m: float = 0.9
    normal_deg: float = 90.0


@dataclass(frozen=True)
class UePlacement:
    """A user inside the vehicle (offsets in the vehicle frame)."""

    ue_id: str
    zone: str
    offset_x_m: float
    offset_y_m: float
    gain_dbi: float = 8.0


@dataclass(frozen=True)
class NodeGeometry:
    """Scenario-static node layout plus the moving vehicle pose."""

    gnbs: tuple[GnbSite, ...]
    pose: VehiclePose
    mount: SurfaceMount = SurfaceMount()
    ues: tuple[UePlacement, ...] = ()
    vehicle_half_length_m: float = 2.6
    vehicle_half_width_m: float = 1.1

    def __post_init__(self):
        if not self.gnbs:
            raise DomainError("at least one gNB is required")
        ids = [g.gnb_id for g in self.gnbs]
        if len(set(ids)) != len(ids):
            raise DomainError(f"duplicate gNB ids: {ids}")
        for ue in self.ues:
            if (abs(ue.offset_x_m) > self.vehicle_half_length_m
                    or abs(ue.offset_y_m) > self.vehicle_half_width_m):
                raise DomainError(
                    f"UE {ue.ue_id} offset outside the vehicle bounding box")

    def gnb(self, gnb_id: str) -> GnbSite:
        for g in self.gnbs:
            if g.gnb_id == gnb_id:
                return g
        raise DomainError(f"unknown gNB id: {gnb_id}")

    def _vehicle_to_world(self, dx: float, dy: float) -> tuple[float, float]:
        h = math.radians(self.pose.heading_deg)
        return (self.pose.x_m + dx * math.cos(h) - dy * math.sin(h),
                self.pose.y_m + dx * math.sin(h) + dy * math.cos(h))

    def surface_position(self) -> tuple[float, float]:
        return self._vehicle_to_world(self.mount.offset_x_m, self.mount.offset_y_m)

    def surface_normal_deg(self) -> float:
        return (self.pose.heading_deg + self.mount.normal_deg + 180.0) % 360.0 - 180.0

    def ue_position(self, ue_id: str) -> tuple[float, float]:
        for ue in self.ues:
            if ue.ue_id == ue_id:
                return self._vehicle_to_world(ue.offset_x_m, ue.offset_y_m)
        raise DomainError(f"unknown UE id: {ue_id}")

    def ue(self, ue_id: str) -> UePlacement:
        for ue in self.ues:
            if ue.ue_id == ue_id:
                return ue
        raise DomainError(f"unknown UE id: {ue_id}")

    def ue_distance_m(self, ue_id: str) -> float:
        sx, sy = self.surface_position()
        ux, uy = self.ue_position(ue_id)
        return math.hypot(ux - sx, uy - sy)

    def gnb_distance_m(self, gnb_id: str) -> float:
        g = self.gnb(gnb_id)
        sx, sy = self.surface_position()
        return math.hypot(g.x_m - sx, g.y_m - sy)


def incident_angle(geometry: NodeGeometry, gnb_id: str) -> float | None:
    """Signed bearing of a gNB from the surface normal, or None (back side).

    Range is the open interval (-90, 90); a gNB at or behind the surface
    plane yields the explicit back-side marker None.
    """
    g = geometry.gnb(gnb_id)
    sx, sy = geometry.surface_position()
    vx, vy = g.x_m - sx, g.y_m - sy
    n = math.radians(geometry.surface_normal_deg())
    nx, ny = math.cos(n), math.sin(n)
    along = vx * nx + vy * ny
    across = -vx * ny + vy * nx
    if along <= 0.0:
        return None
    return math.degrees(math.atan2(across, along))


@dataclass(frozen=True)
class ShadowingModel:
    """Seeded zero-mean Gaussian shadowing, counter-addressed by
    (ue, gnb, tick, path) so sampling order can never change the values."""

    sigma_db: float = 2.0
    seed: int = 0

    def sample(self, ue_id: str | None, gnb_id: str, t_ms: int, path: str) -> float:
        if self.sigma_db == 0.0:
            return 0.0
        key = (self.seed & 0xFFFFFFFF,
               zlib.crc32((ue_id or "-").encode()),
               zlib.crc32(gnb_id.encode()),
               int(t_ms) & 0xFFFFFFFF,
               PATHS.index(path))
        u = np.random.SeedSequence(key).generate_state(2)
        u1 = (u[0] + 1.0) / 4294967297.0
        u2 = u[1] / 4294967296.0
        z = math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)
        return self.sigma_db * z


@dataclass(frozen=True)
class BlockageMap:
    """Vehicle-body blockage for direct paths into the cabin.

    Blocked zones lose the direct path entirely (or take a large fixed
    attenuation if configured); unblocked zones pay the body penetration
    loss.  Surface paths bypass the body and pay the window loss instead.
    """

    blocked_zones: frozenset = frozenset({"cargo"})
    penetration_db: float = 34.0
    blocked_attenuation_db: float | None = None

    def direct_loss_db(self, zone: str) -> float | None:
        if zone in self.blocked_zones:
            return self.blocked_attenuation_db
        return self.penetration_db


@dataclass(frozen=True)
class RsrpSample:
    """One received-power observation; value None marks an outage."""

    t_ms: int
    source_gnb: str
    path: str
    value_dbm: float | None
    ue_id: str | None = None
    beam: tuple = ()

    @property
    def outage(self) -> bool:
        return self.value_dbm is None


@dataclass(frozen=True)
class ChannelParams:
    """Scenario-wide propagation constants."""

    window_loss_db: float = 3.0
    g_ris_rx_dbi: float = 24.0
    g_ris_tx_dbi: float = 24.0
    noise_floor_dbm: float = -89.0
    blockage: BlockageMap = BlockageMap()


class Channel:
    """Evaluates RSRP for the three path types over a scenario snapshot."""

    def __init__(self, params: ChannelParams, surface: SurfaceGeometry,
                 noise: ShadowingModel, atom_model=None):
        from .surface import DEFAULT_ATOM_MODEL
        self.params = params
        self.surface = surface
        self.noise = noise
        self.atom_model = atom_model or DEFAULT_ATOM_MODEL
        self._gain_cache: dict = {}

    # -- ground truths (hidden from the protocol code; used by the engine
    #    to compose measurements and by tests to check decompositions) -----

    def link_aggregate_db(self, geometry: NodeGeometry, gnb_id: str) -> float | None:
        """X for one gNB: EIRP + sector gain - FSPL - window loss (dB)."""
        bearing = incident_angle(geometry, gnb_id)
        if bearing is None:
            return None
        g = geometry.gnb(gnb_id)
        d = geometry.gnb_distance_m(gnb_id)
        return (g.eirp_dbm + g.sector_gain_db(geometry.surface_position())
                - fspl(d, g.carrier_ghz) - self.params.window_loss_db)

    def _pattern_gain_db(self, entry: CodebookEntry, side: str, out_deg: float,
                         inc_deg: float, f_ghz: float) -> float:
        key = (id(entry), side, round(out_deg, 2), round(inc_deg, 2),
               round(f_ghz, 3))
        hit = self._gain_cache.get(key)
        if hit is None:
            af = array_factor(entry.config, self.surface, out_deg, side,
                              inc_deg, self.atom_model, f_ghz)
            mag = max(abs(af) / self.surface.n_elements, 1e-9)
            hit = 20.0 * math.log10(mag)
            self._gain_cache[key] = hit
        return hit

    def surface_gain_tra_db(self, entry: CodebookEntry, bearing_deg: float,
                            f_ghz: float) -> float:
        """Full transmissive surface gain toward the cabin for a wave arriving
        at ``bearing_deg``: aperture constants plus the realized pattern value.

        Every transmissive beam refracts to the cabin broadside, so the
        pattern is evaluated at out-angle 0; for a dual-transmissive entry
        this naturally captures whichever of the two beams the arriving
        bearing aligns with.
        """
        rel = self._pattern_gain_db(entry, SIDE_T, 0.0, bearing_deg, f_ghz)
        return self.params.g_ris_rx_dbi + self.params.g_ris_tx_dbi + rel

    def surface_gain_ref_db(self, entry: CodebookEntry, bearing_in_deg: float,
                            bearing_out_deg: float, f_ghz: float) -> float:
        """Full reflective surface gain from one outdoor bearing to another.

        Coherence requires the stored profile angle to satisfy
        sin(theta_r) = sin(bearing_out) + sin(bearing_in); a uniform surface
        (profile 0) therefore reflects specularly to -bearing_in.
        """
        rel = self._pattern_gain_db(entry, SIDE_R, bearing_out_deg,
                                    bearing_in_deg, f_ghz)
        return self.params.g_ris_rx_dbi + self.params.g_ris_tx_dbi + rel

    # -- RSRP --------------------------------------------------------------

    def rsrp(self, geometry: NodeGeometry, gnb_id: str, path: str,
             ue_id: str | None = None, entry: CodebookEntry | None = None,
             rx_gnb_id: str | None = None, t_ms: int = 0,
             with_noise: bool = True) -> RsrpSample:
        """Received power on one path; blocked/back-side paths yield outage."""
        if path not in PATHS:
            raise DomainError(f"unknown path {path!r}")
        gnb = geometry.gnb(gnb_id)
        noise = (self.noise.sample(ue_id, gnb_id, t_ms, path)
                 if with_noise else 0.0)
        beam: tuple = ()

        if path == PATH_DIRECT:
            if ue_id is None:
                raise DomainError("direct path requires a UE")
            ue = geometry.ue(ue_id)
            loss = self.params.blockage.direct_loss_db(ue.zone)
            if loss is None:
                return RsrpSample(t_ms, gnb_id, path, None, ue_id)
            ux, uy = geometry.ue_position(ue_id)
            d = math.hypot(gnb.x_m - ux, gnb.y_m - uy)
            value = (gnb.eirp_dbm + gnb.sector_gain_db((ux, uy))
                     - fspl(d, gnb.carrier_ghz) - loss + ue.gain_dbi + noise)
            return RsrpSample(t_ms, gnb_id, path, value, ue_id)

        if entry is None:
            raise DomainError(f"{path} requires a codebook entry")
        x_in = self.link_aggregate_db(geometry, gnb_id)
        bearing_in = incident_angle(geometry, gnb_id)
        if x_in is None or bearing_in is None:
            return RsrpSample(t_ms, gnb_id, path, None, ue_id)

        if path == PATH_SURFACE_T:
            if ue_id is None:
                raise DomainError("transmissive path requires a UE")
            ue = geometry.ue(ue_id)
            g_w = self.surface_gain_tra_db(entry, bearing_in, gnb.carrier_ghz)
            l_ue = fspl(geometry.ue_distance_m(ue_id), gnb.carrier_ghz)
            value = x_in + g_w + ue.gain_dbi - l_ue + noise
            beam = (entry.key.theta_t_deg, entry.key.theta_r_deg, entry.key.alpha)
            return RsrpSample(t_ms, gnb_id, path, value, ue_id, beam)

        # reflective: gnb_id is the neighbor source, rx_gnb_id the listener.
        # The receive leg reuses the transmit-side aggregate (reciprocal
        # beams, symmetric link budget), which is exactly what makes the
        # serving-link term in M_r identical to the one in M_s.
        if rx_gnb_id is None:
            raise DomainError("reflective path requires the receiving gNB")
        bearing_out = incident_angle(geometry, rx_gnb_id)
        x_out = self.link_aggregate_db(geometry, rx_gnb_id)
        if bearing_out is None or x_out is None:
            return RsrpSample(t_ms, gnb_id, path, None, ue_id)
        g_w = self.surface_gain_ref_db(entry, bearing_in, bearing_out,
                                       gnb.carrier_ghz)
        value = x_in + g_w + x_out + noise
        beam = (entry.key.theta_t_deg, entry.key.theta_r_deg, entry.key.alpha)
        return RsrpSample(t_ms, gnb_id, path, value, None, beam)

    def sinr_db(self, rsrp_dbm: float | None) -> float | None:
        if rsrp_dbm is None:
            return None
        return rsrp_dbm - self.params.noise_floor_dbm
