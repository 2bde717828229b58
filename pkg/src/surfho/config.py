"""Scenario configuration: TOML parsing with strict validation, canonical
re-emission, and a record of every default that was applied.

Sections: [geometry], [[gnbs]], [[ues]], [surface], [timing], [protocol],
[noise], [output]; unknown keys are rejected with their full path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import channel as ch
from . import sim
from .errors import ConfigError, DomainError

REQUIRED = object()


def _pair(v, path):
    if (not isinstance(v, (list, tuple)) or len(v) != 2
            or not all(isinstance(x, (int, float)) for x in v)):
        raise ConfigError(f"{path}: expected a [x, y] number pair, got {v!r}")
    return (float(v[0]), float(v[1]))


def _num(v, path):
    if not isinstance(v, (int, float)) or isinstance(v, bool):
        raise ConfigError(f"{path}: expected a number, got {v!r}")
    return float(v)


def _int(v, path):
    if not isinstance(v, int) or isinstance(v, bool):
        raise ConfigError(f"{path}: expected an integer, got {v!r}")
    return v


def _str(v, path):
    if not isinstance(v, str):
        raise ConfigError(f"{path}: expected a string, got {v!r}")
    return v


def _str_list(v, path):
    if not isinstance(v, list) or not all(isinstance(x, str) for x in v):
        raise ConfigError(f"{path}: expected a list of strings, got {v!r}")
    return tuple(v)


def _waypoints(v, path):
    if not isinstance(v, list) or not v:
        raise ConfigError(f"{path}: expected a non-empty list of [x, y] pairs")
    return tuple(_pair(p, f"{path}[{i}]") for i, p in enumerate(v))


GEOMETRY_SCHEMA = {
    "waypoints": (_waypoints, REQUIRED),
    "speed_kmh": (_num, REQUIRED),
    "mount_offset": (_pair, (0.0, 0.9)),
    "mount_normal_deg": (_num, 90.0),
    "blocked_zones": (_str_list, ("cargo",)),
    "penetration_db": (_num, 34.0),
}

GNB_SCHEMA = {
    "id": (_str, REQUIRED),
    "position": (_pair, REQUIRED),
    "eirp_dbm": (_num, 60.0),
    "carrier_ghz": (_num, REQUIRED),
    "boresight_deg": (_num, -90.0),
    "scan_range_deg": (_num, 60.0),
    "rolloff_db_per_deg": (_num, 1.5),
}

UE_SCHEMA = {
    "id": (_str, REQUIRED),
    "zone": (_str, REQUIRED),
    "offset": (_pair, REQUIRED),
    "gain_dbi": (_num, 8.0),
}

SURFACE_SCHEMA = {
    "n_elements": (_int, 16),
    "spacing_wl": (_num, 0.5),
    "key_grid_deg": (_num, 5.0),
    "alpha_slot1": (_num, 0.75),
    "alpha_slot2": (_num, 0.25),
    "mbb_alpha": (_num, 0.5),
    "reconfig_ms": (_num, 0.2),
    "codebook": (_str, "auto"),
    "codebook_seed": (_int, 7),
    "ga_generations": (_int, 300),
    "ga_population": (_int, 128),
    "g_ris_rx_dbi": (_num, 24.0),
    "g_ris_tx_dbi": (_num, 24.0),
    "window_loss_db": (_num, 3.0),
}

TIMING_SCHEMA = {
    "ssb_period_ms": (_int, 20),
    "burst_ms": (_int, 5),
    "mr_period_ms": (_int, 160),
    "duration_s": (_num, REQUIRED),
}

PROTOCOL_SCHEMA = {
    "name": (_str, "wall-street"),
    "h_db": (_num, 10.0),
    "ttt_ms": (_num, 150.0),
    "scan_blackout_ms": (_num, 20.0),
    "scan_aftermath_ms": (_num, 50.0),
    "rach_gap_ms": (_num, 40.0),
    "xn_delay_ms": (_num, 5.0),
    "mbb_ms": (_num, 200.0),
    "reorder_window_ms": (_num, 100.0),
    "d_min_m": (_num, 0.3),
    "d_max_m": (_num, 1.0),
    "ping_pong_window_ms": (_num, 1000.0),
    "bandwidth_mhz": (_num, 100.0),
    "efficiency": (_num, 0.6),
    "outage_threshold_dbm": (_num, -100.0),
    "base_rtt_ms": (_num, 20.0),
    "packet_bits": (_int, 12000),
}

NOISE_SCHEMA = {
    "sigma_db": (_num, 2.0),
    "seed": (_int, 1),
    "noise_floor_dbm": (_num, -89.0),
}

OUTPUT_SCHEMA = {
    "mode": (_str, "synthetic"),
    "replay_trace": (_str, ""),
    "trace_offset_db": (_num, 0.0),
}

SECTION_SCHEMAS = {
    "geometry": GEOMETRY_SCHEMA,
    "surface": SURFACE_SCHEMA,
    "timing": TIMING_SCHEMA,
    "protocol": PROTOCOL_SCHEMA,
    "noise": NOISE_SCHEMA,
    "output": OUTPUT_SCHEMA,
}


@dataclass(frozen=True)
class ParsedScenario:
    scenario: sim.Scenario
    applied_defaults: tuple[str, ...]


def _apply_schema(section: dict, schema: dict, path: str, defaults: list):
    out = {}
    for key in section:
        if key not in schema:
            raise ConfigError(f"unknown key {path}.{key}")
    for key, (conv, dflt) in schema.items():
        if key in section:
            out[key] = conv(section[key], f"{path}.{key}")
        elif dflt is REQUIRED:
            raise ConfigError(f"missing required key {path}.{key}")
        else:
            out[key] = dflt
            defaults.append(f"{path}.{key} = {dflt!r}")
    return out


def parse_config_text(text: str, source: str = "<config>") -> ParsedScenario:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: TOML syntax error: {exc}") from exc
    defaults: list[str] = []

    known_top = {"name", "geometry", "gnbs", "ues", "surface", "timing",
                 "protocol", "noise", "output"}
    for key in doc:
        if key not in known_top:
            raise ConfigError(f"unknown key {key}")
    name = _str(doc.get("name", "scenario"), "name")
    if "name" not in doc:
        defaults.append("name = 'scenario'")

    sections = {}
    for sec in ("geometry", "surface", "timing", "protocol", "noise", "output"):
        raw = doc.get(sec, {})
        if not isinstance(raw, dict):
            raise ConfigError(f"{sec} must be a table")
        sections[sec] = _apply_schema(raw, SECTION_SCHEMAS[sec], sec, defaults)

    raw_gnbs = doc.get("gnbs")
    if not isinstance(raw_gnbs, list) or not raw_gnbs:
        raise ConfigError("at least one [[gnbs]] entry is required")
    gnbs = []
    seen = set()
    for i, raw in enumerate(raw_gnbs):
        g = _apply_schema(raw, GNB_SCHEMA, f"gnbs[{i}]", defaults)
        if g["id"] in seen:
            raise ConfigError(f"gnbs[{i}]: duplicate gNB id {g['id']!r}")
        seen.add(g["id"])
        gnbs.append(ch.GnbSite(g["id"], g["position"][0], g["position"][1],
                               g["eirp_dbm"], g["carrier_ghz"],
                               g["boresight_deg"], g["scan_range_deg"],
                               g["rolloff_db_per_deg"]))

    raw_ues = doc.get("ues")
    if not isinstance(raw_ues, list) or not raw_ues:
        raise ConfigError("at least one [[ues]] entry is required")
    ues = []
    seen = set()
    for i, raw in enumerate(raw_ues):
        u = _apply_schema(raw, UE_SCHEMA, f"ues[{i}]", defaults)
        if u["id"] in seen:
            raise ConfigError(f"ues[{i}]: duplicate UE id {u['id']!r}")
        seen.add(u["id"])
        ues.append(ch.UePlacement(u["id"], u["zone"], u["offset"][0],
                                  u["offset"][1], u["gain_dbi"]))

    geo = sections["geometry"]
    sur = sections["surface"]
    tim = sections["timing"]
    pro = sections["protocol"]
    noi = sections["noise"]
    out = sections["output"]

    try:
        scenario = sim.Scenario(
            name=name,
            gnbs=tuple(gnbs),
            ues=tuple(ues),
            waypoints=geo["waypoints"],
            speed_kmh=geo["speed_kmh"],
            duration_s=tim["duration_s"],
            protocol=sim.ProtocolParams(
                pro["name"], pro["h_db"], pro["ttt_ms"],
                pro["scan_blackout_ms"], pro["scan_aftermath_ms"],
                pro["rach_gap_ms"], pro["xn_delay_ms"], pro["mbb_ms"],
                pro["reorder_window_ms"], pro["d_min_m"], pro["d_max_m"],
                pro["ping_pong_window_ms"], pro["bandwidth_mhz"] * 1e6,
                pro["efficiency"], pro["outage_threshold_dbm"],
                pro["base_rtt_ms"], pro["packet_bits"]),
            timing=sim.TimingParams(tim["ssb_period_ms"], tim["burst_ms"],
                                    tim["mr_period_ms"]),
            surface=sim.SurfaceParams(
                sur["n_elements"], sur["spacing_wl"], sur["key_grid_deg"],
                sur["alpha_slot1"], sur["alpha_slot2"], sur["mbb_alpha"],
                sur["reconfig_ms"], sur["codebook"], sur["codebook_seed"],
                sur["ga_generations"], sur["ga_population"]),
            mount=ch.SurfaceMount(geo["mount_offset"][0],
                                  geo["mount_offset"][1],
                                  geo["mount_normal_deg"]),
            blocked_zones=geo["blocked_zones"],
            penetration_db=geo["penetration_db"],
            window_loss_db=sur["window_loss_db"],
            g_ris_rx_dbi=sur["g_ris_rx_dbi"],
            g_ris_tx_dbi=sur["g_ris_tx_dbi"],
            noise_floor_dbm=noi["noise_floor_dbm"],
            shadowing_sigma_db=noi["sigma_db"],
            seed=noi["seed"],
            mode=out["mode"],
            replay_trace=out["replay_trace"] or None,
            trace_offset_db=out["trace_offset_db"],
        )
    except (ValueError, DomainError) as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    return ParsedScenario(scenario, tuple(defaults))


def parse_config(path) -> ParsedScenario:
    """Parse and fully validate a scenario file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return parse_config_text(text, str(path))


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    raise TypeError(f"cannot emit {v!r}")


def emit_config(sc: sim.Scenario) -> str:
    """Canonical TOML for a scenario; parse(emit(x)) == x."""
    p, t, s = sc.protocol, sc.timing, sc.surface
    lines = [f"name = {_fmt(sc.name)}", ""]
    lines += ["[geometry]",
              f"waypoints = {_fmt([list(w) for w in sc.waypoints])}",
              f"speed_kmh = {_fmt(sc.speed_kmh)}",
              f"mount_offset = {_fmt([sc.mount.offset_x_m, sc.mount.offset_y_m])}",
              f"mount_normal_deg = {_fmt(sc.mount.normal_deg)}",
              f"blocked_zones = {_fmt(list(sc.blocked_zones))}",
              f"penetration_db = {_fmt(sc.penetration_db)}", ""]
    for g in sc.gnbs:
        lines += ["[[gnbs]]",
                  f"id = {_fmt(g.gnb_id)}",
                  f"position = {_fmt([g.x_m, g.y_m])}",
                  f"eirp_dbm = {_fmt(g.eirp_dbm)}",
                  f"carrier_ghz = {_fmt(g.carrier_ghz)}",
                  f"boresight_deg = {_fmt(g.boresight_deg)}",
                  f"scan_range_deg = {_fmt(g.scan_range_deg)}",
                  f"rolloff_db_per_deg = {_fmt(g.rolloff_db_per_deg)}", ""]
    for u in sc.ues:
        lines += ["[[ues]]",
                  f"id = {_fmt(u.ue_id)}",
                  f"zone = {_fmt(u.zone)}",
                  f"offset = {_fmt([u.offset_x_m, u.offset_y_m])}",
                  f"gain_dbi = {_fmt(u.gain_dbi)}", ""]
    lines += ["[surface]",
              f"n_elements = {_fmt(s.n_elements)}",
              f"spacing_wl = {_fmt(s.spacing_wl)}",
              f"key_grid_deg = {_fmt(s.key_grid_deg)}",
              f"alpha_slot1 = {_fmt(s.alpha_slot1)}",
              f"alpha_slot2 = {_fmt(s.alpha_slot2)}",
              f"mbb_alpha = {_fmt(s.mbb_alpha)}",
              f"reconfig_ms = {_fmt(s.reconfig_ms)}",
              f"codebook = {_fmt(s.codebook)}",
              f"codebook_seed = {_fmt(s.codebook_seed)}",
              f"ga_generations = {_fmt(s.ga_generations)}",
              f"ga_population = {_fmt(s.ga_population)}",
              f"g_ris_rx_dbi = {_fmt(sc.g_ris_rx_dbi)}",
              f"g_ris_tx_dbi = {_fmt(sc.g_ris_tx_dbi)}",
              f"window_loss_db = {_fmt(sc.window_loss_db)}", ""]
    lines += ["[timing]",
              f"ssb_period_ms = {_fmt(t.ssb_period_ms)}",
              f"burst_ms = {_fmt(t.burst_ms)}",
              f"mr_period_ms = {_fmt(t.mr_period_ms)}",
              f"duration_s = {_fmt(sc.duration_s)}", ""]
    lines += ["[protocol]",
              f"name = {_fmt(p.name)}",
              f"h_db = {_fmt(p.h_db)}",
              f"ttt_ms = {_fmt(p.ttt_ms)}",
              f"scan_blackout_ms = {_fmt(p.scan_blackout_ms)}",
              f"scan_aftermath_ms = {_fmt(p.scan_aftermath_ms)}",
              f"rach_gap_ms = {_fmt(p.rach_gap_ms)}",
              f"xn_delay_ms = {_fmt(p.xn_delay_ms)}",
              f"mbb_ms = {_fmt(p.mbb_ms)}",
              f"reorder_window_ms = {_fmt(p.reorder_window_ms)}",
              f"d_min_m = {_fmt(p.d_min_m)}",
              f"d_max_m = {_fmt(p.d_max_m)}",
              f"ping_pong_window_ms = {_fmt(p.ping_pong_window_ms)}",
              f"bandwidth_mhz = {_fmt(p.bandwidth_hz / 1e6)}",
              f"efficiency = {_fmt(p.efficiency)}",
              f"outage_threshold_dbm = {_fmt(p.outage_threshold_dbm)}",
              f"base_rtt_ms = {_fmt(p.base_rtt_ms)}",
              f"packet_bits = {_fmt(p.packet_bits)}", ""]
    lines += ["[noise]",
              f"sigma_db = {_fmt(sc.shadowing_sigma_db)}",
              f"seed = {_fmt(sc.seed)}",
              f"noise_floor_dbm = {_fmt(sc.noise_floor_dbm)}", ""]
    lines += ["[output]",
              f"mode = {_fmt(sc.mode)}",
              f"replay_trace = {_fmt(sc.replay_trace or '')}",
              f"trace_offset_db = {_fmt(sc.trace_offset_db)}", ""]
    return "\n".join(lines)
