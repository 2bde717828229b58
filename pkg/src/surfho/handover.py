"""Handover protocol logic: A3 tracking, bounding decision, state machines.

Two protocols are modeled:

* ``sa-baseline``: one machine per UE.  Measurement reports pause the UE's
  data plane, A3 with TTT picks the target, execution goes through a RACH
  gap that interrupts data.
* ``wall-street``: one machine per vehicle.  The surface performs the
  neighbor scan without touching the data plane, the decision bounds the
  serving link from multi-UE measurements and triggers conservatively, and
  execution runs make-before-break with duplicate packets over both cells.

Machines are immutable; ``step_sa``/``step_ws`` are pure functions from
(machine, event) to (machine, actions).  The engine owns all timing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

from .codebook import Codebook, CodebookKey
from .errors import ConfigError, DomainError, ProtocolError

HANDOVER = "handover"
STAY = "stay"

# HoStateMachine states
ATTACHED = "attached"
SCANNING = "scanning"
PREPARING = "preparing"
DECIDING = "deciding"
EXECUTING_MBB = "executing-mbb"
EXECUTING_RACH = "executing-rach"
COMPLETING = "completing"
REVERTING = "reverting"
OUTAGE = "outage"

PROTO_SA = "sa-baseline"
PROTO_WS = "wall-street"


# --------------------------------------------------------------------------
# A3 event tracking
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class A3Tracker:
    """Hysteresis + time-to-trigger tracker for one neighbor relation."""

    h_db: float
    ttt_ms: float
    condition_since: float | None = None
    last_t_ms: float = -math.inf


def a3_update(tracker: A3Tracker, m_n_dbm: float, m_s_dbm: float,
              t_ms: float) -> tuple[A3Tracker, bool]:
    """Advance the tracker with one sample; triggered once the A3 condition
    (m_n > m_s + H) has held continuously for at least TTT."""
    if t_ms < tracker.last_t_ms:
        raise DomainError(
            f"time went backwards: {t_ms} < {tracker.last_t_ms}")
    if m_n_dbm > m_s_dbm + tracker.h_db:
        since = tracker.condition_since if tracker.condition_since is not None else t_ms
        tracker = replace(tracker, condition_since=since, last_t_ms=t_ms)
        return tracker, (t_ms - since) >= tracker.ttt_ms
    return replace(tracker, condition_since=None, last_t_ms=t_ms), False


@dataclass(frozen=True)
class HoldTimer:
    """TTT-style hold on an externally supplied boolean condition."""

    ttt_ms: float
    since: float | None = None

    def update(self, condition: bool, t_ms: float) -> tuple["HoldTimer", bool]:
        if not condition:
            return replace(self, since=None), False
        since = self.since if self.since is not None else t_ms
        return replace(self, since=since), (t_ms - since) >= self.ttt_ms


# --------------------------------------------------------------------------
# Bounding decision
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class XsBounds:
    lb_s: float
    ub_s: float
    consistent: bool


@dataclass(frozen=True)
class BoundEstimate:
    """Everything the two-slot measurement produced for one neighbor."""

    s1: float
    s2: tuple[float, ...]
    lb_s: float
    ub_s: float
    consistent: bool

    @property
    def delta_min(self) -> float:
        return self.s1 - 2.0 * self.ub_s


def slot_aggregates(m_r_slot1: float, m_s_slot2, g_w_ref_db: float,
                    g_w_tra_db: float, g_ue_dbi) -> tuple[float, tuple[float, ...]]:
    """Strip the known surface and UE gains from the raw slot measurements."""
    m_s_slot2 = tuple(m_s_slot2)
    g_ue_dbi = tuple(g_ue_dbi)
    if not m_s_slot2:
        raise DomainError("slot-2 measurements require at least one UE")
    if len(m_s_slot2) != len(g_ue_dbi):
        raise DomainError(
            f"{len(m_s_slot2)} slot-2 samples but {len(g_ue_dbi)} UE gains")
    s1 = m_r_slot1 - g_w_ref_db
    s2 = tuple(m - g_w_tra_db - g for m, g in zip(m_s_slot2, g_ue_dbi))
    return s1, s2


def bound_xs(s2_list, l_min_db: float, l_max_db: float) -> XsBounds:
    """Interval for the serving link aggregate from per-UE slot-2 values."""
    s2 = tuple(s2_list)
    if not s2:
        raise DomainError("bounding requires at least one UE measurement")
    if l_min_db > l_max_db:
        raise DomainError(f"l_min {l_min_db} exceeds l_max {l_max_db}")
    lb = max(s - l_max_db for s in s2)
    ub = min(s - l_min_db for s in s2)
    return XsBounds(lb, ub, lb <= ub)


def decide(s1: float, ub_s: float, h_db: float) -> str:
    """Trigger iff the pessimistic neighbor advantage still clears H."""
    return HANDOVER if s1 - 2.0 * ub_s >= h_db else STAY


# --------------------------------------------------------------------------
# Initial attachment and neighbor scan
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class AttachmentResult:
    best: tuple[int, int, int] | None
    rsrp_dbm: float | None
    elapsed_ms: float


def initial_attachment(rsrp_oracle: Callable[[int, int, int], float | None],
                       n_gnb_beams: int = 8, n_surface_angles: int = 8,
                       n_ue_beams: int = 4,
                       ssb_period_ms: float = 20.0) -> AttachmentResult:
    """Exhaustive sweep over (gNB beam, surface angle, UE beam).

    One burst per UE receive direction, so the sweep always costs
    ``n_ue_beams * ssb_period_ms`` regardless of the measured values.  Ties
    break toward the lowest index triple; an all-outage oracle yields an
    attachment failure (best None).
    """
    elapsed = n_ue_beams * ssb_period_ms
    best: tuple[int, int, int] | None = None
    best_val: float | None = None
    for g in range(n_gnb_beams):
        for s in range(n_surface_angles):
            for u in range(n_ue_beams):
                val = rsrp_oracle(g, s, u)
                if val is None:
                    continue
                if best_val is None or val > best_val:
                    best_val, best = val, (g, s, u)
    return AttachmentResult(best, best_val, elapsed)


SCAN_ANGLES_8 = (-70.0, -50.0, -30.0, -10.0, 10.0, 30.0, 50.0, 70.0)


@dataclass(frozen=True)
class ScanResult:
    samples: tuple[tuple[float, float | None], ...]
    duration_ms: float
    interruption_ms: float = 0.0


def neighbor_scan(serving_theta_t_deg: float, codebook: Codebook,
                  reflect_oracle: Callable[[float], float | None],
                  scan_angles=SCAN_ANGLES_8, alpha: float = 0.75,
                  burst_ms: float = 5.0) -> ScanResult:
    """Sweep the reflective beam through the scan angles within one burst.

    The transmissive data beam stays up for the whole sweep, so the result
    carries zero interruption time.  Every angle must have a stored
    dual-transflective entry.
    """
    samples = []
    for theta_r in scan_angles:
        key = CodebookKey(serving_theta_t_deg, theta_r, alpha)
        if key not in codebook.entries:
            raise ConfigError(f"codebook is missing the scan entry {key}")
        samples.append((theta_r, reflect_oracle(theta_r)))
    return ScanResult(tuple(samples), burst_ms, 0.0)


# --------------------------------------------------------------------------
# Events and actions
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class MrTick:
    t_ms: float


@dataclass(frozen=True)
class SaScanDone:
    t_ms: float
    serving_rsrp_dbm: float | None
    neighbors: tuple[tuple[str, float | None], ...]


@dataclass(frozen=True)
class RachDone:
    t_ms: float


@dataclass(frozen=True)
class WsScanDone:
    """Two-slot scan outcome: per-neighbor reflected power and per-UE slot-2
    serving power, plus the codebook gains the network knows."""

    t_ms: float
    reflected: tuple[tuple[str, float, float | None], ...]  # (gnb, theta_r, m_r)
    slot2: tuple[tuple[str, float | None], ...]             # (ue, m_s)
    g_w_ref_db: dict
    g_w_tra_db: float
    g_ue_dbi: tuple[float, ...]


@dataclass(frozen=True)
class XnAck:
    t_ms: float
    target: str


@dataclass(frozen=True)
class MbbA3Sample:
    t_ms: float
    m_s_dbm: float | None
    m_n_dbm: float | None


@dataclass(frozen=True)
class MbbTimeout:
    t_ms: float


@dataclass(frozen=True)
class PauseData:
    """Per-UE data interruption caused by a measurement scan."""

    ue_id: str
    blackout_ms: float
    aftermath_ms: float


@dataclass(frozen=True)
class MeasureRequest:
    kind: str  # "sa-scan" | "ws-scan"


@dataclass(frozen=True)
class HandoverRequest:
    target: str


@dataclass(frozen=True)
class ExecuteHandover:
    """The single handover action; carries every transferred UE context."""

    ue_ids: tuple[str, ...]
    source: str
    target: str


@dataclass(frozen=True)
class StartRach:
    ue_id: str
    gap_ms: float


@dataclass(frozen=True)
class SurfaceReconfig:
    key: CodebookKey | None  # None = release to plain serving beam


@dataclass(frozen=True)
class Revert:
    serving: str
    reason: str


@dataclass(frozen=True)
class HandoverComplete:
    ue_ids: tuple[str, ...]
    source: str
    target: str


# --------------------------------------------------------------------------
# SA baseline machine (one per UE)
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SaParams:
    h_db: float = 10.0
    ttt_ms: float = 150.0
    scan_blackout_ms: float = 20.0
    scan_aftermath_ms: float = 50.0
    rach_gap_ms: float = 40.0


@dataclass(frozen=True)
class SaUeMachine:
    ue_id: str
    serving: str
    params: SaParams = SaParams()
    state: str = ATTACHED
    target: str | None = None
    trackers: tuple[tuple[str, A3Tracker], ...] = ()

    @property
    def protocol(self) -> str:
        return PROTO_SA


def _sa_tracker(machine: SaUeMachine, gnb: str) -> A3Tracker:
    for gid, tr in machine.trackers:
        if gid == gnb:
            return tr
    return A3Tracker(machine.params.h_db, machine.params.ttt_ms)


def _sa_set_tracker(trackers, gnb, tracker):
    out = [(g, tr) for g, tr in trackers if g != gnb]
    out.append((gnb, tracker))
    return tuple(sorted(out))


def step_sa(machine: SaUeMachine, event, t_ms: float):
    """Pure SA transition; returns (machine', actions)."""
    p = machine.params
    if isinstance(event, MrTick):
        if machine.state != ATTACHED:
            return machine, ()
        return (replace(machine, state=SCANNING),
                (PauseData(machine.ue_id, p.scan_blackout_ms, p.scan_aftermath_ms),
                 MeasureRequest("sa-scan")))
    if isinstance(event, SaScanDone):
        if machine.state != SCANNING:
            raise ProtocolError(f"SA machine in {machine.state} got SaScanDone")
        trackers = machine.trackers
        triggered: list[str] = []
        m_s = event.serving_rsrp_dbm
        for gnb, m_n in sorted(event.neighbors):
            tr = _sa_tracker(machine, gnb)
            if m_n is None or m_s is None:
                tr, fired = a3_update(tr, -math.inf, 0.0, t_ms)
            else:
                tr, fired = a3_update(tr, m_n, m_s, t_ms)
            trackers = _sa_set_tracker(trackers, gnb, tr)
            if fired:
                triggered.append(gnb)
        if not triggered:
            return replace(machine, state=ATTACHED, trackers=trackers), ()
        target = sorted(triggered)[0]
        nxt = replace(machine, state=EXECUTING_RACH, target=target,
                      trackers=())
        return nxt, (ExecuteHandover((machine.ue_id,), machine.serving, target),
                     StartRach(machine.ue_id, p.rach_gap_ms))
    if isinstance(event, RachDone):
        if machine.state != EXECUTING_RACH:
            raise ProtocolError(f"SA machine in {machine.state} got RachDone")
        done = HandoverComplete((machine.ue_id,), machine.serving,
                                machine.target)
        return (replace(machine, serving=machine.target, target=None,
                        state=ATTACHED), (done,))
    raise ProtocolError(
        f"SA machine in state {machine.state} cannot handle {type(event).__name__}")


# --------------------------------------------------------------------------
# Wall-Street machine (one per vehicle)
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class WsParams:
    """Wall-Street decision knobs.

    The in-vehicle loss bounds are SIGNED dB contributions (a loss is
    negative), so the maximum in-vehicle distance sets l_min: the default
    bounds are -fspl(1.0 m) .. -fspl(0.3 m) at 26 GHz.
    """

    h_db: float = 10.0
    ttt_ms: float = 150.0
    l_min_db: float = -60.7472501812997340
    l_max_db: float = -50.2896752756929860
    alpha_slot1: float = 0.75
    alpha_slot2: float = 0.25
    mbb_alpha: float = 0.5
    mbb_ms: float = 200.0


@dataclass(frozen=True)
class WsMachine:
    serving: str
    ue_ids: tuple[str, ...]
    params: WsParams = WsParams()
    state: str = ATTACHED
    target: str | None = None
    hold: HoldTimer | None = None
    serving_theta_deg: float = 0.0
    target_theta_deg: float = 0.0
    last_estimate: BoundEstimate | None = None

    @property
    def protocol(self) -> str:
        return PROTO_WS


def step_ws(machine: WsMachine, event, t_ms: float):
    """Pure Wall-Street transition; returns (machine', actions)."""
    p = machine.params
    if isinstance(event, MrTick):
        if machine.state != ATTACHED:
            return machine, ()
        return (replace(machine, state=SCANNING), (MeasureRequest("ws-scan"),))
    if isinstance(event, WsScanDone):
        if machine.state != SCANNING:
            raise ProtocolError(f"WS machine in {machine.state} got WsScanDone")
        m_s = [m for _, m in event.slot2]
        if any(m is None for m in m_s) or not m_s:
            hold, _ = (machine.hold or HoldTimer(p.ttt_ms)).update(False, t_ms)
            return replace(machine, state=ATTACHED, hold=hold), ()
        best: tuple[float, str, BoundEstimate] | None = None
        for gnb, theta_r, m_r in sorted(event.reflected):
            if m_r is None:
                continue
            s1, s2 = slot_aggregates(m_r, m_s, event.g_w_ref_db[(gnb, theta_r)],
                                     event.g_w_tra_db, event.g_ue_dbi)
            bounds = bound_xs(s2, p.l_min_db, p.l_max_db)
            if not bounds.consistent:
                continue
            est = BoundEstimate(s1, s2, bounds.lb_s, bounds.ub_s, True)
            if best is None or est.delta_min > best[0]:
                best = (est.delta_min, gnb, est)
        fired = False
        hold = machine.hold or HoldTimer(p.ttt_ms)
        if best is not None and best[1] != machine.serving:
            cond = decide(best[2].s1, best[2].ub_s, p.h_db) == HANDOVER
            hold, fired = hold.update(cond, t_ms)
        else:
            hold, _ = hold.update(False, t_ms)
        if not fired:
            return replace(machine, state=ATTACHED, hold=hold,
                           last_estimate=None if best is None else best[2]), ()
        nxt = replace(machine, state=PREPARING, target=best[1],
                      hold=HoldTimer(p.ttt_ms), last_estimate=best[2])
        return nxt, (HandoverRequest(best[1]),)
    if isinstance(event, XnAck):
        if machine.state != PREPARING:
            raise ProtocolError(f"WS machine in {machine.state} got XnAck")
        key = CodebookKey(machine.serving_theta_deg, machine.target_theta_deg,
                          p.mbb_alpha, "dual-transmissive")
        nxt = replace(machine, state=EXECUTING_MBB)
        return nxt, (SurfaceReconfig(key),
                     ExecuteHandover(machine.ue_ids, machine.serving,
                                     machine.target))
    if isinstance(event, MbbA3Sample):
        if machine.state != EXECUTING_MBB:
            raise ProtocolError(f"WS machine in {machine.state} got MbbA3Sample")
        ok = (event.m_n_dbm is not None and event.m_s_dbm is not None
              and event.m_n_dbm > event.m_s_dbm + p.h_db)
        if ok:
            return machine, ()
        # condition lost: fall back to the old cell, no re-attachment
        key = CodebookKey.single(machine.serving_theta_deg)
        nxt = replace(machine, state=ATTACHED, target=None)
        return nxt, (Revert(machine.serving, "a3-lost-during-mbb"),
                     SurfaceReconfig(key))
    if isinstance(event, MbbTimeout):
        if machine.state != EXECUTING_MBB:
            raise ProtocolError(f"WS machine in {machine.state} got MbbTimeout")
        done = HandoverComplete(machine.ue_ids, machine.serving, machine.target)
        key = CodebookKey.single(machine.target_theta_deg)
        nxt = replace(machine, serving=machine.target, target=None,
                      state=ATTACHED,
                      serving_theta_deg=machine.target_theta_deg)
        return nxt, (done, SurfaceReconfig(key))
    raise ProtocolError(
        f"WS machine in state {machine.state} cannot handle {type(event).__name__}")


# --------------------------------------------------------------------------
# DAPS packet duplication / reordering / de-duplication
# --------------------------------------------------------------------------

class DapsBuffer:
    """PDCP-style receive combiner for the two make-before-break links.

    Packets may arrive on either link; each sequence number is delivered
    exactly once, in order, with gaps released after the reordering window.
    """

    def __init__(self, reorder_window_ms: float = 100.0):
        self.reorder_window_ms = reorder_window_ms
        self.watermark = -1          # highest sequence released so far
        self.duplicate_count = 0
        self._pending: dict[int, float] = {}   # seq -> first arrival time

    def flush(self, t_ms: float) -> list[int]:
        """Release in-order packets; skip gaps older than the window."""
        out: list[int] = []
        while True:
            nxt = self.watermark + 1
            if nxt in self._pending:
                del self._pending[nxt]
                self.watermark = nxt
                out.append(nxt)
                continue
            # a gap at nxt: declare it lost once a buffered packet behind it
            # has waited out the reordering window, then resume from there
            stale = [s for s, t0 in self._pending.items()
                     if t_ms - t0 >= self.reorder_window_ms]
            if not stale:
                return out
            skip_to = min(stale)
            del self._pending[skip_to]
            self.watermark = skip_to
            out.append(skip_to)


def daps_deliver(buffer: DapsBuffer, link_id: str, seq: int,
                 t_ms: float) -> list[int]:
    """Register one arrival; returns the sequences newly released in order."""
    if seq < 0:
        raise DomainError(f"sequence numbers are non-negative, got {seq}")
    if seq <= buffer.watermark or seq in buffer._pending:
        buffer.duplicate_count += 1
    else:
        buffer._pending[seq] = t_ms
    return buffer.flush(t_ms)
