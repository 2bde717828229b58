"""Command-line front door.

Sub-commands: ``codebook synth|eval|export``, ``sim run|compare``,
``linkbudget``, ``trace export``.  Data goes to stdout, diagnostics to
stderr; output files are written atomically (temp + rename).  Exit codes:
0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

from . import channel as ch
from . import sim
from .codebook import (
    Codebook,
    CodebookKey,
    GaSettings,
    MODE_DUAL_TR,
    MODE_DUAL_TT,
    build_codebook,
    export_entries,
    load_codebook,
    realized_gains,
    save_codebook,
)
from .config import emit_config, parse_config
from .errors import ConfigError, SurfhoError
from .surface import SurfaceGeometry


def _atomic_write(path: str, writer) -> None:
    """Write via a temp file and rename, so failures leave no partial file."""
    tmp = f"{path}.tmp-{os.getpid()}"
    try:
        writer(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _load_scenario(args) -> sim.Scenario:
    parsed = parse_config(args.config)
    for line in parsed.applied_defaults:
        _log(f"default: {line}")
    scenario = parsed.scenario
    if getattr(args, "seed", None) is not None:
        scenario = replace(scenario, seed=args.seed)
        _log(f"seed override: {args.seed}")
    if getattr(args, "protocol", None):
        scenario = replace(scenario,
                           protocol=replace(scenario.protocol,
                                            name=args.protocol))
    return scenario


def _out_dir(args) -> str:
    out = args.out_dir or "."
    os.makedirs(out, exist_ok=True)
    return out


def _write_run_outputs(out: str, tag: str, result: sim.SimResult) -> None:
    trace_path = os.path.join(out, f"{tag}trace.csv")
    metrics_path = os.path.join(out, f"{tag}metrics.csv")
    _atomic_write(trace_path, lambda p: sim.write_trace(result.trace, p))
    _atomic_write(metrics_path, lambda p: sim.write_metrics(result.metrics, p))
    _log(f"wrote {trace_path} and {metrics_path}")


def cmd_sim_run(args) -> int:
    scenario = _load_scenario(args)
    out = _out_dir(args)
    _atomic_write(os.path.join(out, "resolved_config.toml"),
                  lambda p: open(p, "w").write(emit_config(scenario)))
    result = sim.run(scenario)
    _write_run_outputs(out, "", result)
    m = result.metrics
    print(f"protocol={scenario.protocol.name} seed={scenario.seed}")
    for line in m.summary_lines():
        print(line)
    return 0


def cmd_sim_compare(args) -> int:
    scenario = _load_scenario(args)
    out = _out_dir(args)
    _atomic_write(os.path.join(out, "resolved_config.toml"),
                  lambda p: open(p, "w").write(emit_config(scenario)))
    book = None
    if any(p == "wall-street" for p in args.protocols):
        book = Codebook(scenario.surface.geometry(scenario.gnbs[0].carrier_ghz))
    report = sim.compare(scenario, args.protocols, book)
    rows = ["metric,ue_id,protocol,p10,median,p90"]
    for summary in report.summaries:
        for ue in summary.metrics.ue_ids:
            p10, p50, p90 = summary.throughput_stats(ue)
            rows.append(f"throughput_mbps,{ue},{summary.protocol},"
                        f"{p10!r},{p50!r},{p90!r}")
            rtt = summary.rtt_stats(ue)
            if rtt is not None:
                rows.append(f"rtt_ms,{ue},{summary.protocol},"
                            f"{rtt[0]!r},{rtt[1]!r},{rtt[2]!r}")
    for summary, result in zip(report.summaries, report.results):
        tag = f"{summary.protocol}."
        _write_run_outputs(out, tag, result)
    report_path = os.path.join(out, "report.csv")
    _atomic_write(report_path,
                  lambda p: open(p, "w").write("\n".join(rows) + "\n"))
    for row in rows:
        print(row)
    for summary in report.summaries:
        m = summary.metrics
        print(f"summary,{summary.protocol},ho={m.ho_count},"
              f"actions={m.ho_actions},ping_pong={m.ping_pong_count},"
              f"outage_ms={sum(m.outage_ms.values())},"
              f"interruption_ms={sum(m.interruption_ms.values())!r}")
    return 0


def cmd_trace_export(args) -> int:
    scenario = _load_scenario(args)
    result = sim.run(scenario)
    _atomic_write(args.out, lambda p: sim.write_trace(result.trace, p))
    _log(f"wrote {args.out} ({len(result.trace)} records)")
    return 0


def cmd_linkbudget(args) -> int:
    params = ch.LinkBudgetParams(
        p_gnb_dbm=args.p_gnb, l_gnb_db=args.l_gnb, l_window_db=args.l_window,
        g_ris_rx_dbi=args.g_ris_rx, g_ris_tx_dbi=args.g_ris_tx,
        l_ue_db=args.l_ue, g_ue_dbi=args.g_ue, g_gnb_rx_dbi=args.g_gnb_rx,
        p_nf_dbm=args.p_nf)
    ue_terms = ch.snr_ue_terms(params)
    gnb_terms = ch.snr_gnb_terms(params)
    print("downlink UE budget:")
    for name, val in ue_terms:
        print(f"  {name:10s} {val:+8.1f} dB")
    print(f"SNR_UE = {ch.snr_ue(params):.1f} dB")
    print("reflected gNB budget:")
    for name, val in gnb_terms:
        print(f"  {name:10s} {val:+8.1f} dB")
    print(f"SNR_gNB = {ch.snr_gnb(params):.1f} dB")
    return 0


def _parse_floats(text: str, what: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip() != ""]
    except ValueError as exc:
        raise ConfigError(f"bad {what} list {text!r}: {exc}") from exc


def cmd_codebook_synth(args) -> int:
    geometry = SurfaceGeometry(args.n_elements, args.spacing, args.carrier)
    settings = GaSettings(population=args.population,
                          generations=args.generations)
    mode = MODE_DUAL_TT if args.dual_transmissive else MODE_DUAL_TR
    book = build_codebook(_parse_floats(args.theta_t, "theta-t"),
                          _parse_floats(args.theta_r, "theta-r"),
                          _parse_floats(args.alphas, "alphas"),
                          geometry, args.seed, args.incident, mode,
                          settings=settings)
    _atomic_write(args.out, lambda p: save_codebook(book, p))
    _log(f"wrote {args.out} ({len(book.entries)} entries)")
    return 0


def cmd_codebook_eval(args) -> int:
    book = load_codebook(args.book)
    print("mode,theta_t_deg,theta_r_deg,alpha,stored_g_t,stored_g_r,"
          "eval_g_t,eval_g_r,objective")
    worst = 0.0
    for entry in book.sorted_entries():
        k = entry.key
        g_t, g_r = realized_gains(entry.config, book.geometry, k.theta_t_deg,
                                  k.theta_r_deg, book.incident_deg)
        worst = max(worst, abs(g_t - entry.g_w_tra_db))
        print(f"{k.mode},{k.theta_t_deg!r},{k.theta_r_deg!r},{k.alpha!r},"
              f"{entry.g_w_tra_db:.3f},{entry.g_w_ref_db:.3f},"
              f"{g_t:.3f},{g_r:.3f},{entry.objective:.4f}")
    _log(f"max |stored - recomputed| transmissive gain: {worst:.4f} dB")
    return 0


def cmd_codebook_export(args) -> int:
    book = load_codebook(args.book)
    _atomic_write(args.out, lambda p: export_entries(book, p))
    _log(f"wrote {args.out} ({len(book.entries)} entries)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="surfho",
        description="Vehicular mmWave handover simulator with an on-vehicle "
                    "dual-beam metasurface")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="scenario TOML file")
    common.add_argument("--seed", type=int, default=None,
                        help="override the scenario seed")
    common.add_argument("--out-dir", default=None, help="output directory")

    p_sim = sub.add_parser("sim", help="run or compare scenarios")
    sim_sub = p_sim.add_subparsers(dest="sim_command", required=True)
    p_run = sim_sub.add_parser("run", parents=[common],
                               help="run one scenario")
    p_run.add_argument("--protocol", default=None,
                       choices=["sa-baseline", "wall-street"])
    p_run.set_defaults(func=cmd_sim_run)
    p_cmp = sim_sub.add_parser("compare", parents=[common],
                               help="run several protocols on one scenario")
    p_cmp.add_argument("--protocols", nargs="+",
                       default=["sa-baseline", "wall-street"])
    p_cmp.set_defaults(func=cmd_sim_compare)

    p_trace = sub.add_parser("trace", help="PHY trace tools")
    trace_sub = p_trace.add_subparsers(dest="trace_command", required=True)
    p_texp = trace_sub.add_parser("export", parents=[common],
                                  help="run a scenario and export its PHY "
                                       "trace for later replay")
    p_texp.add_argument("--out", required=True)
    p_texp.set_defaults(func=cmd_trace_export)

    p_lb = sub.add_parser("linkbudget",
                          help="print the worst-case link-budget breakdown")
    p_lb.add_argument("--p-gnb", type=float, default=60.0)
    p_lb.add_argument("--l-gnb", type=float, default=103.0)
    p_lb.add_argument("--l-window", type=float, default=3.0)
    p_lb.add_argument("--g-ris-rx", type=float, default=24.0)
    p_lb.add_argument("--g-ris-tx", type=float, default=24.0)
    p_lb.add_argument("--l-ue", type=float, default=72.0)
    p_lb.add_argument("--g-ue", type=float, default=8.0)
    p_lb.add_argument("--g-gnb-rx", type=float, default=29.5)
    p_lb.add_argument("--p-nf", type=float, default=-89.0)
    p_lb.set_defaults(func=cmd_linkbudget)

    p_cb = sub.add_parser("codebook", help="codebook synthesis and inspection")
    cb_sub = p_cb.add_subparsers(dest="codebook_command", required=True)
    p_syn = cb_sub.add_parser("synth", help="synthesize a codebook")
    p_syn.add_argument("--out", required=True)
    p_syn.add_argument("--theta-t", required=True,
                       help="comma-separated degrees")
    p_syn.add_argument("--theta-r", required=True,
                       help="comma-separated degrees")
    p_syn.add_argument("--alphas", default="0.25,0.5,0.75")
    p_syn.add_argument("--n-elements", type=int, default=64)
    p_syn.add_argument("--spacing", type=float, default=0.5)
    p_syn.add_argument("--carrier", type=float, default=26.0)
    p_syn.add_argument("--incident", type=float, default=0.0)
    p_syn.add_argument("--seed", type=int, default=0)
    p_syn.add_argument("--generations", type=int, default=300)
    p_syn.add_argument("--population", type=int, default=128)
    p_syn.add_argument("--dual-transmissive", action="store_true")
    p_syn.set_defaults(func=cmd_codebook_synth)
    p_ev = cb_sub.add_parser("eval", help="re-evaluate stored entries")
    p_ev.add_argument("--book", required=True)
    p_ev.set_defaults(func=cmd_codebook_eval)
    p_ex = cb_sub.add_parser("export", help="export entries as CSV")
    p_ex.add_argument("--book", required=True)
    p_ex.add_argument("--out", required=True)
    p_ex.set_defaults(func=cmd_codebook_export)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        _log(f"configuration error: {exc}")
        return 2
    except SurfhoError as exc:
        _log(f"error: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
