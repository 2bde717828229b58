"""Deterministic discrete-event engine driving mobility, scans, handovers,
and an abstract data plane; also replays exported PHY traces.

The master clock ticks at 1 ms; every protocol timer (5/20/150/160 ms) is an
integer multiple of it.  All randomness flows through two seeded streams:
counter-addressed shadowing (order-independent) and a packet-loss stream
drawn in tick order, so a (scenario, seed) pair reproduces byte-identical
traces and metrics.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import channel as ch
from . import handover as ho
from .codebook import (
    Codebook,
    CodebookKey,
    GaSettings,
    SynthCache,
    load_codebook,
)
from .errors import ConfigError, DomainError
from .surface import STEER_LIMIT_DEG, SurfaceGeometry

WINDOW_MS = 100

MODE_SYNTHETIC = "synthetic"
MODE_REPLAY = "trace-replay"

TRACE_HEADER = ("t_ms,ue_id,gnb_id,path,gnb_beam,surf_t_deg,surf_r_deg,"
                "alpha,rsrp_dbm,sinr_db,per,event")


# --------------------------------------------------------------------------
# Scenario
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TimingParams:
    ssb_period_ms: int = 20
    burst_ms: int = 5
    mr_period_ms: int = 160

    def __post_init__(self):
        if self.burst_ms > self.ssb_period_ms or self.mr_period_ms <= 0:
            raise DomainError("invalid timing: burst must fit the SSB period")


@dataclass(frozen=True)
class ProtocolParams:
    name: str = ho.PROTO_WS
    h_db: float = 10.0
    ttt_ms: float = 150.0
    scan_blackout_ms: float = 20.0
    scan_aftermath_ms: float = 50.0
    rach_gap_ms: float = 40.0
    xn_delay_ms: float = 5.0
    mbb_ms: float = 200.0
    reorder_window_ms: float = 100.0
    d_min_m: float = 0.3
    d_max_m: float = 1.0
    ping_pong_window_ms: float = 1000.0
    bandwidth_hz: float = 100e6
    efficiency: float = 0.6
    outage_threshold_dbm: float = -100.0
    base_rtt_ms: float = 20.0
    packet_bits: int = 12000

    def __post_init__(self):
        if self.name not in (ho.PROTO_SA, ho.PROTO_WS):
            raise DomainError(f"unknown protocol {self.name!r}")


@dataclass(frozen=True)
class SurfaceParams:
    n_elements: int = 16
    spacing_wl: float = 0.5
    key_grid_deg: float = 5.0
    alpha_slot1: float = 0.75
    alpha_slot2: float = 0.25
    mbb_alpha: float = 0.5
    reconfig_ms: float = 0.2
    codebook: str = "auto"          # "auto" or a saved codebook path
    codebook_seed: int = 7
    ga_generations: int = 300
    ga_population: int = 128

    def geometry(self, carrier_ghz: float = 26.0) -> SurfaceGeometry:
        return SurfaceGeometry(self.n_elements, self.spacing_wl, carrier_ghz)


@dataclass(frozen=True)
class Scenario:
    name: str
    gnbs: tuple[ch.GnbSite, ...]
    ues: tuple[ch.UePlacement, ...]
    waypoints: tuple[tuple[float, float], ...]
    speed_kmh: float
    duration_s: float
    protocol: ProtocolParams = ProtocolParams()
    timing: TimingParams = TimingParams()
    surface: SurfaceParams = SurfaceParams()
    mount: ch.SurfaceMount = ch.SurfaceMount()
    blocked_zones: tuple[str, ...] = ("cargo",)
    penetration_db: float = 34.0
    window_loss_db: float = 3.0
    g_ris_rx_dbi: float = 24.0
    g_ris_tx_dbi: float = 24.0
    noise_floor_dbm: float = -89.0
    shadowing_sigma_db: float = 2.0
    seed: int = 1
    mode: str = MODE_SYNTHETIC
    replay_trace: str | None = None
    trace_offset_db: float = 0.0

    def __post_init__(self):
        if self.speed_kmh <= 0:
            raise DomainError(f"speed must be > 0, got {self.speed_kmh}")
        if self.duration_s <= 0:
            raise DomainError(f"duration must be > 0, got {self.duration_s}")
        if self.duration_ms % WINDOW_MS != 0:
            raise DomainError(
                f"duration must tile {WINDOW_MS} ms windows exactly")
        if not self.waypoints:
            raise DomainError("trajectory needs at least one waypoint")
        if not self.gnbs:
            raise DomainError("at least one gNB is required")
        ids = [g.gnb_id for g in self.gnbs]
        if len(ids) != len(set(ids)):
            raise DomainError(f"duplicate gNB ids: {ids}")
        freqs = [g.carrier_ghz for g in self.gnbs]
        if len(freqs) != len(set(freqs)):
            raise DomainError(
                "nearby gNBs must broadcast on distinct frequencies")
        uids = [u.ue_id for u in self.ues]
        if len(uids) != len(set(uids)):
            raise DomainError(f"duplicate UE ids: {uids}")
        if self.mode not in (MODE_SYNTHETIC, MODE_REPLAY):
            raise DomainError(f"unknown mode {self.mode!r}")
        if self.mode == MODE_REPLAY and not self.replay_trace:
            raise DomainError("trace-replay mode requires a trace path")

    @property
    def duration_ms(self) -> int:
        return int(round(self.duration_s * 1000))


# --------------------------------------------------------------------------
# Mobility
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Trajectory:
    """Piecewise-linear waypoint path; the vehicle parks at the last
    waypoint once traversal finishes."""

    waypoints: tuple[tuple[float, float], ...]
    speed_m_s: float
    duration_ms: int

    @classmethod
    def from_scenario(cls, sc: Scenario) -> "Trajectory":
        return cls(sc.waypoints, sc.speed_kmh / 3.6, sc.duration_ms)

    def segment_ends_ms(self) -> list[float]:
        out = [0.0]
        for (x0, y0), (x1, y1) in zip(self.waypoints, self.waypoints[1:]):
            out.append(out[-1] + math.hypot(x1 - x0, y1 - y0)
                       / self.speed_m_s * 1000.0)
        return out


def mobility_step(traj: Trajectory, t_ms: float) -> ch.VehiclePose:
    """Pose at time t; heading follows the active segment."""
    if t_ms < 0 or t_ms > traj.duration_ms:
        raise DomainError(f"t={t_ms} ms outside [0, {traj.duration_ms}]")
    ends = traj.segment_ends_ms()
    if len(traj.waypoints) == 1:
        x, y = traj.waypoints[0]
        return ch.VehiclePose(x, y, 0.0)
    for i in range(len(traj.waypoints) - 1):
        t0, t1 = ends[i], ends[i + 1]
        (x0, y0), (x1, y1) = traj.waypoints[i], traj.waypoints[i + 1]
        heading = math.degrees(math.atan2(y1 - y0, x1 - x0))
        if t_ms <= t1 or i == len(traj.waypoints) - 2:
            if t_ms >= t1:  # parked at (or past) the segment end
                if i == len(traj.waypoints) - 2:
                    return ch.VehiclePose(x1, y1, heading)
                continue
            frac = (t_ms - t0) / (t1 - t0)
            return ch.VehiclePose(x0 + frac * (x1 - x0),
                                  y0 + frac * (y1 - y0), heading)
    raise AssertionError("unreachable")


# --------------------------------------------------------------------------
# Data-plane models
# --------------------------------------------------------------------------

def goodput_model(sinr_db: float | None, bandwidth_hz: float,
                  state: str = "ok", efficiency: float = 0.6) -> float:
    """Shannon-capped abstract goodput in Mb/s.

    state: "ok" | "aftermath" (halved, post-scan recovery) | "blackout" |
    "outage" (zero).
    """
    if sinr_db is None or state in ("blackout", "outage"):
        return 0.0
    rate = efficiency * bandwidth_hz * math.log2(1.0 + 10 ** (sinr_db / 10.0))
    if state == "aftermath":
        rate *= 0.5
    return rate / 1e6


def per_model(sinr_db: float | None) -> float:
    """Packet error rate proxy: 10^(-sinr/10), capped to [0, 1]."""
    if sinr_db is None:
        return 1.0
    return float(min(1.0, 10 ** (-sinr_db / 10.0)))


def rtt_model(sinr_db: float | None, per: float, base_rtt_ms: float,
              rate_mbps: float, packet_bits: int) -> float | None:
    """Base latency + serialization + retransmission penalty; None in outage."""
    if sinr_db is None or rate_mbps <= 0.0:
        return None
    serialization = packet_bits / (rate_mbps * 1e6) * 1000.0
    retx = min(per / max(1e-9, 1.0 - per), 10.0)
    return base_rtt_ms + serialization + retx * base_rtt_ms


# --------------------------------------------------------------------------
# Trace records
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TraceRecord:
    t_ms: int
    ue_id: str
    gnb_id: str
    path: str
    gnb_beam: int = 0
    surf_t_deg: float | None = None
    surf_r_deg: float | None = None
    alpha: float | None = None
    rsrp_dbm: float | None = None
    sinr_db: float | None = None
    per: float | None = None
    event: str = ""

    def to_csv(self) -> str:
        def f(v):
            return "" if v is None else repr(float(v))
        return (f"{self.t_ms},{self.ue_id},{self.gnb_id},{self.path},"
                f"{self.gnb_beam},{f(self.surf_t_deg)},{f(self.surf_r_deg)},"
                f"{f(self.alpha)},{f(self.rsrp_dbm)},{f(self.sinr_db)},"
                f"{f(self.per)},{self.event}")

    @classmethod
    def from_csv(cls, line: str) -> "TraceRecord":
        parts = line.split(",")
        if len(parts) != 12:
            raise ConfigError(f"trace row needs 12 columns: {line!r}")
        def g(v):
            return None if v == "" else float(v)
        return cls(int(parts[0]), parts[1], parts[2], parts[3], int(parts[4]),
                   g(parts[5]), g(parts[6]), g(parts[7]), g(parts[8]),
                   g(parts[9]), g(parts[10]), parts[11])

    def replay_key(self) -> tuple:
        return (self.t_ms, self.ue_id, self.gnb_id, self.path,
                self.surf_t_deg, self.surf_r_deg, self.alpha)


def write_trace(records, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(TRACE_HEADER + "\n")
        for r in records:
            fh.write(r.to_csv() + "\n")


def read_trace(path) -> list[TraceRecord]:
    with open(path, "r", encoding="ascii") as fh:
        head = fh.readline().rstrip("\n")
        if head != TRACE_HEADER:
            raise ConfigError(f"unexpected trace header in {path}")
        return [TraceRecord.from_csv(line.rstrip("\n"))
                for line in fh if line.strip()]


# --------------------------------------------------------------------------
# Metrics
# --------------------------------------------------------------------------

@dataclass
class Metrics:
    duration_ms: int
    window_ms: int
    ue_ids: tuple[str, ...]
    throughput_mbps: dict
    rtt_ms: dict
    per: dict
    mbb_link_per: dict            # ue -> list[(window, per1, per2, combined)]
    ho_count: int
    ho_actions: int
    decisions: int
    ping_pong_count: int
    outage_ms: dict
    interruption_ms: dict
    interruption_by_cause: dict
    reconfig_count: int
    sent_bits: dict
    delivered_bits: dict
    lost_bits: dict

    @property
    def n_windows(self) -> int:
        return self.duration_ms // self.window_ms

    def summary_lines(self) -> list[str]:
        out = [f"duration_ms={self.duration_ms}",
               f"ho_count={self.ho_count}",
               f"ho_actions={self.ho_actions}",
               f"decisions={self.decisions}",
               f"ping_pong_count={self.ping_pong_count}",
               f"reconfig_count={self.reconfig_count}"]
        for ue in self.ue_ids:
            med = sorted(self.throughput_mbps[ue])[len(self.throughput_mbps[ue]) // 2]
            out.append(f"outage_ms[{ue}]={self.outage_ms[ue]}")
            out.append(f"interruption_ms[{ue}]={self.interruption_ms[ue]!r}")
            for cause, v in sorted(self.interruption_by_cause[ue].items()):
                out.append(f"interruption_ms[{ue}][{cause}]={v!r}")
            out.append(f"median_throughput_mbps[{ue}]={med!r}")
            out.append(f"delivered_bits[{ue}]={self.delivered_bits[ue]}")
            out.append(f"sent_bits[{ue}]={self.sent_bits[ue]}")
            out.append(f"lost_bits[{ue}]={self.lost_bits[ue]}")
        return out


def write_metrics(metrics: Metrics, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write("window_start_ms,ue_id,throughput_mbps,rtt_ms,per\n")
        for w in range(metrics.n_windows):
            for ue in metrics.ue_ids:
                rtt = metrics.rtt_ms[ue][w]
                per = metrics.per[ue][w]
                fh.write(f"{w * metrics.window_ms},{ue},"
                         f"{metrics.throughput_mbps[ue][w]!r},"
                         f"{'' if rtt is None else repr(rtt)},"
                         f"{'' if per is None else repr(per)}\n")
        fh.write("\n# summary\n")
        for line in metrics.summary_lines():
            fh.write(f"# {line}\n")


@dataclass(frozen=True)
class SimResult:
    scenario: Scenario
    metrics: Metrics
    trace: tuple[TraceRecord, ...]


# --------------------------------------------------------------------------
# Engine internals
# --------------------------------------------------------------------------

def quantize_angle(angle_deg: float, grid_deg: float) -> float:
    q = round(angle_deg / grid_deg) * grid_deg
    return float(max(-STEER_LIMIT_DEG, min(STEER_LIMIT_DEG, q)))


class _ReplaySource:
    """Answers channel queries from an exported trace."""

    def __init__(self, records, offset_db: float):
        self.table = {}
        for r in records:
            if r.path in ch.PATHS and (r.rsrp_dbm is not None or r.event == "outage"):
                self.table[r.replay_key()] = r
        self.offset_db = offset_db

    def lookup(self, key) -> tuple[float | None, float | None, float | None]:
        rec = self.table.get(key)
        if rec is None:
            raise ConfigError(f"replay trace has no sample for {key}")
        if rec.rsrp_dbm is None:
            return None, None, rec.per
        return (rec.rsrp_dbm + self.offset_db,
                None if rec.sinr_db is None else rec.sinr_db + self.offset_db,
                rec.per)


class _Engine:
    def __init__(self, scenario: Scenario, codebook: Codebook | None = None):
        self.sc = scenario
        self.proto = scenario.protocol
        self.traj = Trajectory.from_scenario(scenario)
        self.surface_geom = scenario.surface.geometry(scenario.gnbs[0].carrier_ghz)
        blockage = ch.BlockageMap(frozenset(scenario.blocked_zones),
                                  scenario.penetration_db)
        params = ch.ChannelParams(scenario.window_loss_db,
                                  scenario.g_ris_rx_dbi, scenario.g_ris_tx_dbi,
                                  scenario.noise_floor_dbm, blockage)
        self.channel = ch.Channel(params, self.surface_geom,
                                  ch.ShadowingModel(scenario.shadowing_sigma_db,
                                                    scenario.seed))
        self.loss_rng = np.random.default_rng(
            np.random.SeedSequence([scenario.seed & 0xFFFFFFFF, 0x10C5]))
        sp = scenario.surface
        settings = GaSettings(population=sp.ga_population,
                              generations=sp.ga_generations)
        self.is_ws = self.proto.name == ho.PROTO_WS
        if self.is_ws:
            if codebook is not None:
                self.cache = SynthCache(self.surface_geom, sp.codebook_seed,
                                        settings=settings, preloaded=codebook)
            elif sp.codebook != "auto":
                book = load_codebook(sp.codebook, self.surface_geom)
                self.cache = SynthCache(self.surface_geom, sp.codebook_seed,
                                        settings=settings, preloaded=book)
            else:
                self.cache = SynthCache(self.surface_geom, sp.codebook_seed,
                                        settings=settings)
        else:
            self.cache = None
        self.replay = None
        if scenario.mode == MODE_REPLAY:
            self.replay = _ReplaySource(read_trace(scenario.replay_trace),
                                        scenario.trace_offset_db)

        self.trace: list[TraceRecord] = []
        self.events: list = []   # heap of (t, seq, kind, payload)
        self._seq = 0
        d = scenario.duration_ms
        nw = d // WINDOW_MS
        ues = tuple(u.ue_id for u in scenario.ues)
        self.ue_ids = ues
        self.win_delivered = {u: [0] * nw for u in ues}
        self.win_sent = {u: [0] * nw for u in ues}
        self.win_lost = {u: [0] * nw for u in ues}
        self.win_rtt = {u: [[] for _ in range(nw)] for u in ues}
        self.mbb_link_stats = {u: {} for u in ues}  # window -> [s1,l1,s2,l2,sc,lc]
        self.outage_ms = {u: 0 for u in ues}
        self.interruption: dict = {u: {} for u in ues}
        self.pause_until = {u: 0.0 for u in ues}
        self.aftermath_until = {u: 0.0 for u in ues}
        self.packet_credit = {u: 0.0 for u in ues}
        self.next_seq = {u: 0 for u in ues}
        self.daps: dict = {}
        self.ho_count = 0
        self.ho_actions = 0
        self.decisions = 0
        self.ping_pong = 0
        self.reconfig_count = 0
        self.reconfig_until = 0.0
        self.last_ho: tuple[float, str] | None = None
        self.mbb_active = False
        self.mbb_target: str | None = None
        self.mbb_gen = 0
        self.scan_override: list = []  # (t0, t1, entry) surface overrides

    # -- infrastructure ---------------------------------------------------

    def push(self, t: float, kind: str, payload=None):
        heapq.heappush(self.events, (t, self._seq, kind, payload))
        self._seq += 1

    def log(self, **kw):
        self.trace.append(TraceRecord(**kw))

    def geometry_at(self, t_ms: float) -> ch.NodeGeometry:
        pose = mobility_step(self.traj, t_ms)
        return ch.NodeGeometry(self.sc.gnbs, pose, self.sc.mount, self.sc.ues)

    def bearing(self, geo: ch.NodeGeometry, gnb_id: str) -> float | None:
        return ch.incident_angle(geo, gnb_id)

    def serving_key(self, geo: ch.NodeGeometry, gnb_id: str) -> CodebookKey:
        b = self.bearing(geo, gnb_id)
        q = quantize_angle(0.0 if b is None else b, self.sc.surface.key_grid_deg)
        return CodebookKey.single(q)

    def scan_angle_set(self, geo: ch.NodeGeometry, serving: str) -> tuple[float, ...]:
        """Eight reflective scan angles biased toward the known gNB bearings."""
        grid = self.sc.surface.key_grid_deg
        b_s = self.bearing(geo, serving)
        cands: list[float] = []
        if b_s is not None:
            for g in self.sc.gnbs:
                if g.gnb_id == serving:
                    continue
                b_n = self.bearing(geo, g.gnb_id)
                if b_n is None:
                    continue
                s = math.sin(math.radians(b_n)) + math.sin(math.radians(b_s))
                if abs(s) > 1.0:
                    continue
                center = quantize_angle(math.degrees(math.asin(s)), grid)
                for off in (0.0, -grid, grid):
                    a = max(-STEER_LIMIT_DEG, min(STEER_LIMIT_DEG, center + off))
                    if a not in cands:
                        cands.append(a)
        for a in ho.SCAN_ANGLES_8:
            if len(cands) >= 8:
                break
            if a not in cands:
                cands.append(a)
        return tuple(sorted(cands[:8]))

    # -- channel facade (synthetic computes + records; replay looks up) ----

    def sample(self, t: int, geo, gnb_id: str, path: str, ue_id: str | None,
               entry=None, rx_gnb: str | None = None, event: str = "") \
            -> tuple[float | None, float | None, float]:
        key_t = key_r = key_a = None
        if entry is not None:
            key_t, key_r, key_a = (entry.key.theta_t_deg, entry.key.theta_r_deg,
                                   entry.key.alpha)
        if self.replay is not None:
            rsrp, sinr, per = self.replay.lookup(
                (t, ue_id or "", gnb_id, path, key_t, key_r, key_a))
            if per is None:
                per = per_model(sinr)
            return rsrp, sinr, per
        s = self.channel.rsrp(geo, gnb_id, path, ue_id, entry, rx_gnb, t)
        sinr = self.channel.sinr_db(s.value_dbm)
        if s.value_dbm is not None and s.value_dbm < self.proto.outage_threshold_dbm:
            sinr = None
        per = per_model(sinr)
        self.log(t_ms=t, ue_id=ue_id or "", gnb_id=gnb_id, path=path,
                 surf_t_deg=key_t, surf_r_deg=key_r, alpha=key_a,
                 rsrp_dbm=s.value_dbm, sinr_db=sinr,
                 per=None if s.value_dbm is None else per,
                 event=event or ("outage" if s.value_dbm is None else ""))
        return s.value_dbm, sinr, per

    # -- setup -------------------------------------------------------------

    def initial_serving(self) -> dict:
        geo = self.geometry_at(0.0)
        gnbs = sorted(self.sc.gnbs, key=lambda g: g.gnb_id)
        if self.is_ws:
            best = None
            for g in gnbs:
                entry = self.cache.entry(self.serving_key(geo, g.gnb_id))
                s = self.channel.rsrp(geo, g.gnb_id, ch.PATH_SURFACE_T,
                                      self.ue_ids[0], entry, with_noise=False)
                v = -math.inf if s.value_dbm is None else s.value_dbm
                if best is None or v > best[0]:
                    best = (v, g.gnb_id)
            return {"vehicle": best[1]}
        out = {}
        for ue in self.ue_ids:
            best = None
            for g in gnbs:
                s = self.channel.rsrp(geo, g.gnb_id, ch.PATH_DIRECT, ue,
                                      with_noise=False)
                v = -math.inf if s.value_dbm is None else s.value_dbm
                if best is None or v > best[0]:
                    best = (v, g.gnb_id)
            out[ue] = best[1]
        return out

    # -- interruption bookkeeping ------------------------------------------

    def add_interruption(self, ue: str, start: float, dur: float, cause: str):
        end = min(start + dur, self.sc.duration_ms)
        span = max(0.0, end - start)
        self.interruption[ue][cause] = self.interruption[ue].get(cause, 0.0) + span
        if cause in ("scan", "rach"):
            self.pause_until[ue] = max(self.pause_until[ue], end)
        if cause == "aftermath":
            self.aftermath_until[ue] = max(self.aftermath_until[ue], end)

    def charge_reconfig(self, t: float):
        self.reconfig_count += 1
        self.reconfig_until = max(self.reconfig_until,
                                  t + self.sc.surface.reconfig_ms)

    # -- the main loop ------------------------------------------------------

    def run(self) -> SimResult:
        sc = self.sc
        serving = self.initial_serving()
        geo0 = self.geometry_at(0.0)
        if self.is_ws:
            b = self.bearing(geo0, serving["vehicle"])
            machine = ho.WsMachine(
                serving["vehicle"], self.ue_ids,
                ho.WsParams(self.proto.h_db, self.proto.ttt_ms,
                            *ch.in_vehicle_loss_bounds(self.proto.d_min_m,
                                                       self.proto.d_max_m),
                            sc.surface.alpha_slot1, sc.surface.alpha_slot2,
                            sc.surface.mbb_alpha, self.proto.mbb_ms),
                serving_theta_deg=quantize_angle(0.0 if b is None else b,
                                                 sc.surface.key_grid_deg))
            self.ws = machine
            self.data_key = self.serving_key(geo0, machine.serving)
            self.data_entry = self.cache.entry(self.data_key)
        else:
            self.sa = {
                ue: ho.SaUeMachine(ue, serving[ue],
                                   ho.SaParams(self.proto.h_db, self.proto.ttt_ms,
                                               self.proto.scan_blackout_ms,
                                               self.proto.scan_aftermath_ms,
                                               self.proto.rach_gap_ms))
                for ue in self.ue_ids}

        for t_mr in range(sc.timing.mr_period_ms, sc.duration_ms,
                          sc.timing.mr_period_ms):
            self.push(float(t_mr), "mr-tick")

        for t in range(sc.duration_ms):
            geo = self.geometry_at(float(t))
            if self.is_ws and t % sc.timing.ssb_period_ms == 0:
                self.track_serving_beam(t, geo)
            while self.events and self.events[0][0] <= t:
                _, _, kind, payload = heapq.heappop(self.events)
                self.dispatch(t, geo, kind, payload)
            self.data_tick(t, geo)
        return self.finish()

    def track_serving_beam(self, t: int, geo):
        if self.mbb_active or self.ws.state != ho.ATTACHED:
            return
        key = self.serving_key(geo, self.ws.serving)
        if key != self.data_key:
            self.data_key = key
            self.data_entry = self.cache.entry(key)
            self.charge_reconfig(float(t))
            self.ws = replace(self.ws, serving_theta_deg=key.theta_t_deg)
            self.log(t_ms=t, ue_id="", gnb_id=self.ws.serving, path="",
                     surf_t_deg=key.theta_t_deg, event="reconfig")

    # -- event dispatch ------------------------------------------------------

    def dispatch(self, t: int, geo, kind: str, payload):
        if kind == "mr-tick":
            if self.is_ws:
                self.ws_mr_tick(t, geo)
            else:
                self.sa_mr_tick(t, geo)
        elif kind == "sa-scan-done":
            self.sa_scan_done(t, geo, payload)
        elif kind == "rach-done":
            ue = payload
            machine, actions = ho.step_sa(self.sa[ue], ho.RachDone(float(t)), float(t))
            self.sa[ue] = machine
            self.handle_actions(t, geo, actions, ue)
        elif kind == "ws-scan":
            self.ws_scan(t, geo, payload)
        elif kind == "ws-scan-finish":
            self.dispatch_ws_finish(t, geo, payload)
        elif kind == "xn-ack":
            machine, actions = ho.step_ws(self.ws, ho.XnAck(float(t), payload),
                                          float(t))
            self.ws = machine
            self.handle_actions(t, geo, actions)
        elif kind == "mbb-timeout":
            if self.ws.state == ho.EXECUTING_MBB and payload == self.mbb_gen:
                machine, actions = ho.step_ws(self.ws, ho.MbbTimeout(float(t)),
                                              float(t))
                self.ws = machine
                self.handle_actions(t, geo, actions)
        else:
            raise AssertionError(f"unknown event {kind}")

    def sa_mr_tick(self, t: int, geo):
        for ue in self.ue_ids:
            machine, actions = ho.step_sa(self.sa[ue], ho.MrTick(float(t)),
                                          float(t))
            self.sa[ue] = machine
            self.handle_actions(t, geo, actions, ue)

    def ws_mr_tick(self, t: int, geo):
        if self.ws.state == ho.EXECUTING_MBB:
            entry = self.data_entry
            m_s, _, _ = self.sample(t, geo, self.ws.serving, ch.PATH_SURFACE_T,
                                    self.ue_ids[0], entry, event="mbb-a3")
            m_n, _, _ = self.sample(t, geo, self.ws.target, ch.PATH_SURFACE_T,
                                    self.ue_ids[0], entry, event="mbb-a3")
            machine, actions = ho.step_ws(
                self.ws, ho.MbbA3Sample(float(t), m_s, m_n), float(t))
            self.ws = machine
            self.handle_actions(t, geo, actions)
            return
        if self.ws.state != ho.ATTACHED:
            return
        machine, actions = ho.step_ws(self.ws, ho.MrTick(float(t)), float(t))
        self.ws = machine
        self.handle_actions(t, geo, actions)

    def ws_scan(self, t: int, geo, payload):
        """Two-slot measurement: reflective sweep now, slot-2 next burst."""
        sc = self.sc
        serving = self.ws.serving
        b_s = self.bearing(geo, serving)
        theta_t = quantize_angle(0.0 if b_s is None else b_s,
                                 sc.surface.key_grid_deg)
        angles = self.scan_angle_set(geo, serving)
        book = self.cache.book
        for a in angles:  # ensure entries exist (lazy synthesis)
            self.cache.entry(CodebookKey(theta_t, a, sc.surface.alpha_slot1))
        reflected = []
        g_w_ref = {}
        neighbors = [g for g in sc.gnbs if g.gnb_id != serving]
        for g in sorted(neighbors, key=lambda g: g.gnb_id):
            def oracle(theta_r, _g=g):
                entry = self.cache.entry(
                    CodebookKey(theta_t, theta_r, sc.surface.alpha_slot1))
                rsrp, _, _ = self.sample(t, geo, _g.gnb_id, ch.PATH_SURFACE_R,
                                         None, entry, rx_gnb=serving,
                                         event="scan-slot1")
                return rsrp
            result = ho.neighbor_scan(theta_t, book, oracle, angles,
                                      sc.surface.alpha_slot1,
                                      sc.timing.burst_ms)
            best = None
            for theta_r, m_r in result.samples:
                entry = self.cache.entry(
                    CodebookKey(theta_t, theta_r, sc.surface.alpha_slot1))
                g_w_ref[(g.gnb_id, theta_r)] = (sc.g_ris_rx_dbi + sc.g_ris_tx_dbi
                                                + entry.g_w_ref_db)
                if m_r is not None and (best is None or m_r > best[1]):
                    best = (theta_r, m_r)
            if best is not None:
                reflected.append((g.gnb_id, best[0], best[1]))
        # slot 2 next burst: refraction-heavy entry toward the best candidate
        slot2_t = t + sc.timing.ssb_period_ms
        if slot2_t + sc.timing.burst_ms >= sc.duration_ms:
            self.ws = replace(self.ws, state=ho.ATTACHED)
            return
        best_ref = max(reflected, key=lambda r: r[2], default=None)
        theta_r2 = best_ref[1] if best_ref else angles[0]
        slot2_entry = self.cache.entry(
            CodebookKey(theta_t, theta_r2, sc.surface.alpha_slot2))
        slot1_entry = self.cache.entry(
            CodebookKey(theta_t, angles[0], sc.surface.alpha_slot1))
        self.scan_override.append((float(t), float(t + sc.timing.burst_ms),
                                   slot1_entry))
        self.scan_override.append((float(slot2_t),
                                   float(slot2_t + sc.timing.burst_ms),
                                   slot2_entry))
        self.charge_reconfig(float(t))
        self.charge_reconfig(float(slot2_t))
        self.push(float(slot2_t + sc.timing.burst_ms), "ws-scan-finish",
                  (reflected, g_w_ref, slot2_entry, slot2_t))

    def dispatch_ws_finish(self, t: int, geo, payload):
        sc = self.sc
        reflected, g_w_ref, slot2_entry, slot2_t = payload
        geo2 = self.geometry_at(float(slot2_t))
        slot2 = []
        for ue in self.ue_ids:
            rsrp, _, _ = self.sample(slot2_t, geo2, self.ws.serving,
                                     ch.PATH_SURFACE_T, ue, slot2_entry,
                                     event="scan-slot2")
            slot2.append((ue, rsrp))
        g_w_tra = (sc.g_ris_rx_dbi + sc.g_ris_tx_dbi + slot2_entry.g_w_tra_db)
        g_ue = tuple(self.sc.ues[i].gain_dbi for i in range(len(self.ue_ids)))
        event = ho.WsScanDone(float(t), tuple(reflected), tuple(slot2),
                              g_w_ref, g_w_tra, g_ue)
        was_scanning = self.ws.state == ho.SCANNING
        machine, actions = ho.step_ws(self.ws, event, float(t))
        self.ws = machine
        if was_scanning and machine.state == ho.PREPARING:
            self.decisions += 1
        self.handle_actions(t, geo, actions)

    def sa_scan_done(self, t: int, geo, ue: str):
        serving = self.sa[ue].serving
        m_s, _, _ = self.sample(t, geo, serving, ch.PATH_DIRECT, ue,
                                event="scan")
        neighbors = []
        for g in sorted(self.sc.gnbs, key=lambda g: g.gnb_id):
            if g.gnb_id == serving:
                continue
            m_n, _, _ = self.sample(t, geo, g.gnb_id, ch.PATH_DIRECT, ue,
                                    event="scan")
            neighbors.append((g.gnb_id, m_n))
        machine, actions = ho.step_sa(
            self.sa[ue], ho.SaScanDone(float(t), m_s, tuple(neighbors)),
            float(t))
        if self.sa[ue].state == ho.SCANNING and machine.state == ho.EXECUTING_RACH:
            self.decisions += 1
        self.sa[ue] = machine
        self.handle_actions(t, geo, actions, ue)

    # -- actions -------------------------------------------------------------

    def handle_actions(self, t: int, geo, actions, ue: str | None = None):
        for act in actions:
            if isinstance(act, ho.PauseData):
                self.add_interruption(act.ue_id, float(t), act.blackout_ms,
                                      "scan")
                self.add_interruption(act.ue_id, float(t) + act.blackout_ms,
                                      act.aftermath_ms, "aftermath")
                self.push(float(t) + act.blackout_ms, "sa-scan-done", act.ue_id)
            elif isinstance(act, ho.MeasureRequest):
                if act.kind == "ws-scan":
                    self.push(float(t), "ws-scan", None)
            elif isinstance(act, ho.HandoverRequest):
                b = self.bearing(geo, act.target)
                self.ws = replace(self.ws, target_theta_deg=quantize_angle(
                    0.0 if b is None else b, self.sc.surface.key_grid_deg))
                self.push(float(t) + self.proto.xn_delay_ms, "xn-ack",
                          act.target)
                self.log(t_ms=t, ue_id="", gnb_id=act.target, path="",
                         event="ho-request")
            elif isinstance(act, ho.ExecuteHandover):
                self.ho_actions += 1
                self.log(t_ms=t, ue_id=";".join(act.ue_ids), gnb_id=act.target,
                         path="", event=f"ho-exec:{act.source}->{act.target}")
                if self.is_ws:
                    self.mbb_active = True
                    self.mbb_target = act.target
                    self.mbb_gen += 1
                    for u in act.ue_ids:
                        self.daps[u] = ho.DapsBuffer(self.proto.reorder_window_ms)
                    self.push(float(t) + self.proto.mbb_ms, "mbb-timeout",
                              self.mbb_gen)
            elif isinstance(act, ho.StartRach):
                self.add_interruption(act.ue_id, float(t), act.gap_ms, "rach")
                self.push(float(t) + act.gap_ms, "rach-done", act.ue_id)
            elif isinstance(act, ho.SurfaceReconfig):
                if act.key is not None:
                    self.data_key = act.key
                    self.data_entry = self.cache.entry(act.key)
                    self.charge_reconfig(float(t))
            elif isinstance(act, ho.Revert):
                self.mbb_active = False
                self.mbb_target = None
                self.daps.clear()
                self.log(t_ms=t, ue_id="", gnb_id=act.serving, path="",
                         event=f"revert:{act.reason}")
            elif isinstance(act, ho.HandoverComplete):
                self.ho_count += 1
                if (self.last_ho is not None
                        and self.last_ho[1] == act.target
                        and float(t) - self.last_ho[0]
                        <= self.proto.ping_pong_window_ms):
                    self.ping_pong += 1
                self.last_ho = (float(t), act.source)
                self.mbb_active = False
                self.mbb_target = None
                self.daps.clear()
                self.log(t_ms=t, ue_id=";".join(act.ue_ids), gnb_id=act.target,
                         path="", event=f"ho-complete:{act.source}->{act.target}")
            else:
                raise AssertionError(f"unhandled action {act}")

    # -- data plane ----------------------------------------------------------

    def active_entry(self, t: float):
        self.scan_override = [(a, b, e) for (a, b, e) in self.scan_override
                              if b > t]
        for a, b, entry in self.scan_override:
            if a <= t < b:
                return entry
        return self.data_entry

    def data_tick(self, t: int, geo):
        window = t // WINDOW_MS
        reconfig_scale = 1.0
        if t < self.reconfig_until:
            reconfig_scale = max(0.0, 1.0 - (self.reconfig_until - t))
        for ue in self.ue_ids:
            if self.is_ws:
                self.ws_data_tick(t, geo, ue, window, reconfig_scale)
            else:
                self.sa_data_tick(t, geo, ue, window)

    def sa_data_tick(self, t: int, geo, ue: str, window: int):
        machine = self.sa[ue]
        state = "ok"
        if t < self.pause_until[ue] or machine.state == ho.EXECUTING_RACH:
            state = "blackout"
        elif t < self.aftermath_until[ue]:
            state = "aftermath"
        rsrp, sinr, per = self.sample(t, geo, machine.serving, ch.PATH_DIRECT,
                                      ue, event="data")
        if sinr is None:
            self.outage_ms[ue] += 1
            return
        if state == "blackout":
            return
        rate = goodput_model(sinr, self.proto.bandwidth_hz, state,
                             self.proto.efficiency)
        self.deliver_simple(t, ue, window, rate, per, sinr)

    def ws_data_tick(self, t: int, geo, ue: str, window: int, scale: float):
        entry = self.active_entry(float(t))
        if self.mbb_active:
            self.ws_mbb_tick(t, geo, ue, window, entry, scale)
            return
        serving = self.ws.serving
        rsrp, sinr, per = self.sample(t, geo, serving, ch.PATH_SURFACE_T, ue,
                                      entry, event="data")
        if sinr is None:
            self.outage_ms[ue] += 1
            return
        rate = goodput_model(sinr, self.proto.bandwidth_hz, "ok",
                             self.proto.efficiency) * scale
        self.deliver_simple(t, ue, window, rate, per, sinr)

    def deliver_simple(self, t: int, ue: str, window: int, rate_mbps: float,
                       per: float, sinr: float):
        bits = rate_mbps * 1e6 * 1e-3
        self.packet_credit[ue] += bits / self.proto.packet_bits
        n = int(self.packet_credit[ue])
        self.packet_credit[ue] -= n
        if n <= 0:
            return
        lost = int(self.loss_rng.binomial(n, per))
        sent_bits = n * self.proto.packet_bits
        self.win_sent[ue][window] += sent_bits
        self.win_lost[ue][window] += lost * self.proto.packet_bits
        self.win_delivered[ue][window] += (n - lost) * self.proto.packet_bits
        self.next_seq[ue] += n
        rtt = rtt_model(sinr, per, self.proto.base_rtt_ms, rate_mbps,
                        self.proto.packet_bits)
        if rtt is not None:
            self.win_rtt[ue][window].append(rtt)

    def ws_mbb_tick(self, t: int, geo, ue: str, window: int, entry,
                    scale: float):
        serving, target = self.ws.serving, self.mbb_target
        r1, s1, p1 = self.sample(t, geo, serving, ch.PATH_SURFACE_T, ue, entry,
                                 event="mbb-data")
        r2, s2, p2 = self.sample(t, geo, target, ch.PATH_SURFACE_T, ue, entry,
                                 event="mbb-data")
        if s1 is None and s2 is None:
            self.outage_ms[ue] += 1
            return
        rate = max(goodput_model(s1, self.proto.bandwidth_hz, "ok",
                                 self.proto.efficiency),
                   goodput_model(s2, self.proto.bandwidth_hz, "ok",
                                 self.proto.efficiency)) * scale
        bits = rate * 1e6 * 1e-3
        self.packet_credit[ue] += bits / self.proto.packet_bits
        n = int(self.packet_credit[ue])
        self.packet_credit[ue] -= n
        if n <= 0:
            return
        buf = self.daps.get(ue)
        stats = self.mbb_link_stats[ue].setdefault(window, [0, 0, 0, 0, 0, 0])
        delivered = 0
        for _ in range(n):
            seq = self.next_seq[ue]
            self.next_seq[ue] += 1
            lost1 = s1 is None or self.loss_rng.random() < p1
            lost2 = s2 is None or self.loss_rng.random() < p2
            stats[0] += 1
            stats[1] += int(lost1)
            stats[2] += 1
            stats[3] += int(lost2)
            stats[4] += 1
            got = []
            if buf is not None:
                if not lost1:
                    got += ho.daps_deliver(buf, "serving", seq, float(t))
                if not lost2:
                    got += ho.daps_deliver(buf, "target", seq, float(t))
                delivered += len(got)
                if lost1 and lost2:
                    stats[5] += 1
            else:
                if not (lost1 and lost2):
                    delivered += 1
                else:
                    stats[5] += 1
        sent_bits = n * self.proto.packet_bits
        self.win_sent[ue][window] += sent_bits
        self.win_delivered[ue][window] += delivered * self.proto.packet_bits
        self.win_lost[ue][window] += (stats[5]) * self.proto.packet_bits
        best_s = s1 if (s2 is None or (s1 is not None and s1 >= s2)) else s2
        comb_per = p1 * p2
        rtt = rtt_model(best_s, comb_per, self.proto.base_rtt_ms, rate,
                        self.proto.packet_bits)
        if rtt is not None:
            self.win_rtt[ue][window].append(rtt)

    # -- wrap-up ---------------------------------------------------------------

    def finish(self) -> SimResult:
        for ue, buf in self.daps.items():
            buf.flush(float(self.sc.duration_ms) + self.proto.reorder_window_ms)
        nw = self.sc.duration_ms // WINDOW_MS
        throughput = {}
        rtts = {}
        pers = {}
        mbb = {}
        for ue in self.ue_ids:
            throughput[ue] = [self.win_delivered[ue][w] / (WINDOW_MS / 1000.0)
                              / 1e6 for w in range(nw)]
            rtts[ue] = [
                (sum(self.win_rtt[ue][w]) / len(self.win_rtt[ue][w]))
                if self.win_rtt[ue][w] else None for w in range(nw)]
            pers[ue] = [
                (self.win_lost[ue][w] / self.win_sent[ue][w])
                if self.win_sent[ue][w] else None for w in range(nw)]
            mbb[ue] = [
                (w, st[1] / st[0], st[3] / st[2], st[5] / st[4])
                for w, st in sorted(self.mbb_link_stats[ue].items())
                if st[0] and st[2] and st[4]]
        interruption_ms = {
            ue: sum(v for c, v in self.interruption[ue].items()
                    if c in ("scan", "rach"))
            for ue in self.ue_ids}
        metrics = Metrics(
            self.sc.duration_ms, WINDOW_MS, self.ue_ids, throughput, rtts,
            pers, mbb, self.ho_count, self.ho_actions, self.decisions,
            self.ping_pong, dict(self.outage_ms), interruption_ms,
            {u: dict(self.interruption[u]) for u in self.ue_ids},
            self.reconfig_count,
            {u: sum(self.win_sent[u]) for u in self.ue_ids},
            {u: sum(self.win_delivered[u]) for u in self.ue_ids},
            {u: sum(self.win_lost[u]) for u in self.ue_ids})
        return SimResult(self.sc, metrics, tuple(self.trace))


def run(scenario: Scenario, codebook: Codebook | None = None) -> SimResult:
    """Execute a scenario; deterministic for a fixed (scenario, seed)."""
    return _Engine(scenario, codebook).run()


# --------------------------------------------------------------------------
# Comparison
# --------------------------------------------------------------------------

def percentile(values, pct: float) -> float:
    """Nearest-rank percentile (matches a plain sorted-array oracle)."""
    data = sorted(values)
    if not data:
        raise DomainError("empty series")
    k = max(1, math.ceil(pct / 100.0 * len(data)))
    return float(data[k - 1])


@dataclass(frozen=True)
class ProtocolSummary:
    protocol: str
    metrics: Metrics

    def throughput_stats(self, ue: str) -> tuple[float, float, float]:
        xs = self.metrics.throughput_mbps[ue]
        return (percentile(xs, 10), percentile(xs, 50), percentile(xs, 90))

    def rtt_stats(self, ue: str) -> tuple[float, float, float] | None:
        xs = [x for x in self.metrics.rtt_ms[ue] if x is not None]
        if not xs:
            return None
        return (percentile(xs, 10), percentile(xs, 50), percentile(xs, 90))


@dataclass(frozen=True)
class ComparisonReport:
    scenario_name: str
    summaries: tuple[ProtocolSummary, ...]
    results: tuple[SimResult, ...]

    def delta(self, metric: str, ue: str) -> float:
        """Median delta of the second protocol minus the first."""
        a, b = self.summaries[0], self.summaries[1]
        if metric == "throughput":
            return b.throughput_stats(ue)[1] - a.throughput_stats(ue)[1]
        if metric == "rtt":
            sa, sb = a.rtt_stats(ue), b.rtt_stats(ue)
            if sa is None or sb is None:
                return math.nan
            return sb[1] - sa[1]
        raise DomainError(f"unknown metric {metric!r}")


def compare(scenario: Scenario, protocols, codebook: Codebook | None = None) \
        -> ComparisonReport:
    """Run the same scenario under each protocol with identical seeds."""
    protocols = list(protocols)
    if len(protocols) < 2:
        raise DomainError("compare needs at least two protocols")
    results = []
    for name in protocols:
        sc = replace(scenario, protocol=replace(scenario.protocol, name=name))
        results.append(run(sc, codebook))
    summaries = tuple(ProtocolSummary(p, r.metrics)
                      for p, r in zip(protocols, results))
    return ComparisonReport(scenario.name, summaries, tuple(results))
