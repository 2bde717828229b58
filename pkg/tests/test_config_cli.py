import os
import subprocess
import sys
from pathlib import Path

import pytest

from surfho.cli import main
from surfho.config import emit_config, parse_config, parse_config_text
from surfho.errors import ConfigError

SCENARIOS = Path(__file__).parent.parent / "scenarios"

MINIMAL = """
[geometry]
waypoints = [[0.0, 0.0], [10.0, 0.0]]
speed_kmh = 5.0

[[gnbs]]
id = "g1"
position = [0.0, 15.0]
carrier_ghz = 26.0

[[ues]]
id = "ue1"
zone = "rear-seat"
offset = [-0.5, 0.5]

[timing]
duration_s = 2.0
"""


class TestParseConfig:
    def test_minimal_config_gets_documented_defaults(self):
        parsed = parse_config_text(MINIMAL)
        sc = parsed.scenario
        assert sc.protocol.h_db == 10.0
        assert sc.protocol.ttt_ms == 150.0
        assert sc.timing.mr_period_ms == 160
        joined = "\n".join(parsed.applied_defaults)
        assert "protocol.h_db = 10.0" in joined
        assert "protocol.ttt_ms = 150.0" in joined
        assert "timing.mr_period_ms = 160" in joined

    def test_duplicate_gnb_id_rejected(self):
        text = MINIMAL + """
[[gnbs]]
id = "g1"
position = [5.0, 15.0]
carrier_ghz = 26.1
"""
        with pytest.raises(ConfigError, match="duplicate gNB id"):
            parse_config_text(text)

    def test_unknown_key_named_with_path(self):
        with pytest.raises(ConfigError, match="geometry.speeed"):
            parse_config_text(MINIMAL.replace("speed_kmh", "speeed"))

    def test_syntax_error_carries_location(self):
        with pytest.raises(ConfigError, match="line"):
            parse_config_text("[geometry\nwaypoints = 3")

    def test_round_trip_canonical_emit(self):
        first = parse_config_text(MINIMAL).scenario
        emitted = emit_config(first)
        second = parse_config_text(emitted).scenario
        assert first == second
        # a second emit is byte-identical (canonical form is a fixed point)
        assert emit_config(second) == emitted

    def test_semantic_error_wrapped_as_config_error(self):
        with pytest.raises(ConfigError, match="distinct frequencies"):
            parse_config_text(MINIMAL + """
[[gnbs]]
id = "g2"
position = [5.0, 15.0]
carrier_ghz = 26.0
""")

    def test_shipped_scenarios_parse(self):
        for name in ("outdoor_crossover.toml", "outdoor_blocked_cargo.toml",
                     "outdoor_blocked_cargo_5kmh.toml",
                     "outdoor_blocked_cargo_15kmh.toml", "indoor_4gnb.toml"):
            parsed = parse_config(SCENARIOS / name)
            assert parsed.scenario.duration_s > 0


class TestLinkbudgetCli:
    def test_paper_defaults(self, capsys):
        assert main(["linkbudget"]) == 0
        out = capsys.readouterr().out
        assert "SNR_UE = 27.0 dB" in out
        assert "SNR_gNB = 14.5 dB" in out

    def test_terms_sum_to_total(self, capsys):
        main(["linkbudget"])
        out = capsys.readouterr().out.splitlines()
        total = 0.0
        state = None
        sums = {}
        for line in out:
            if line.endswith("budget:"):
                state = line
                sums[state] = 0.0
            elif line.strip().startswith(("P_", "-L", "+G", "-P")):
                sums[state] += float(line.split()[-2])
            elif line.startswith("SNR_UE"):
                assert float(line.split()[2]) == pytest.approx(
                    sums["downlink UE budget:"], abs=0.05)
            elif line.startswith("SNR_gNB"):
                assert float(line.split()[2]) == pytest.approx(
                    sums["reflected gNB budget:"], abs=0.05)

    def test_missing_parameter_is_usage_error(self):
        proc = subprocess.run(
            [sys.executable, "-m", "surfho.cli", "linkbudget", "--p-gnb"],
            capture_output=True)
        assert proc.returncode == 2


def write_tiny_scenario(tmp_path, protocol="wall-street", seed=1):
    text = MINIMAL + f"""
[protocol]
name = "{protocol}"

[surface]
ga_generations = 20

[noise]
seed = {seed}
"""
    path = tmp_path / "scenario.toml"
    path.write_text(text)
    return path


class TestSimCli:
    def test_run_twice_same_seed_identical_files(self, tmp_path):
        cfg = write_tiny_scenario(tmp_path)
        out1, out2 = tmp_path / "r1", tmp_path / "r2"
        assert main(["sim", "run", "--config", str(cfg), "--seed", "3",
                     "--out-dir", str(out1)]) == 0
        assert main(["sim", "run", "--config", str(cfg), "--seed", "3",
                     "--out-dir", str(out2)]) == 0
        for name in ("trace.csv", "metrics.csv", "resolved_config.toml"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()

    def test_seed_changes_output(self, tmp_path):
        cfg = write_tiny_scenario(tmp_path)
        out1, out2 = tmp_path / "a", tmp_path / "b"
        main(["sim", "run", "--config", str(cfg), "--seed", "3",
              "--out-dir", str(out1)])
        main(["sim", "run", "--config", str(cfg), "--seed", "4",
              "--out-dir", str(out2)])
        assert (out1 / "trace.csv").read_bytes() != (out2 / "trace.csv").read_bytes()

    def test_bad_config_exits_2_and_leaves_no_outputs(self, tmp_path):
        cfg = tmp_path / "bad.toml"
        cfg.write_text("[geometry]\nspeeed = 1\n")
        out = tmp_path / "out"
        assert main(["sim", "run", "--config", str(cfg),
                     "--out-dir", str(out)]) == 2
        assert not (out / "trace.csv").exists()
        assert not any(p.name.startswith("trace.csv.tmp")
                       for p in out.glob("*")) if out.exists() else True

    def test_trace_export_then_replay(self, tmp_path):
        cfg = write_tiny_scenario(tmp_path)
        trace = tmp_path / "phy.csv"
        assert main(["trace", "export", "--config", str(cfg), "--seed", "3",
                     "--out", str(trace)]) == 0
        replay_cfg = tmp_path / "replay.toml"
        replay_cfg.write_text(cfg.read_text() + f"""
[output]
mode = "trace-replay"
replay_trace = "{trace}"
""")
        out_a, out_b = tmp_path / "sy", tmp_path / "re"
        main(["sim", "run", "--config", str(cfg), "--seed", "3",
              "--out-dir", str(out_a)])
        assert main(["sim", "run", "--config", str(replay_cfg), "--seed", "3",
                     "--out-dir", str(out_b)]) == 0
        assert (out_a / "metrics.csv").read_text() == \
            (out_b / "metrics.csv").read_text()

    def test_compare_writes_report(self, tmp_path, capsys):
        cfg = write_tiny_scenario(tmp_path)
        out = tmp_path / "cmp"
        assert main(["sim", "compare", "--config", str(cfg), "--seed", "3",
                     "--protocols", "sa-baseline", "wall-street",
                     "--out-dir", str(out)]) == 0
        report = (out / "report.csv").read_text().splitlines()
        assert report[0] == "metric,ue_id,protocol,p10,median,p90"
        assert any("wall-street" in line for line in report[1:])
        assert (out / "sa-baseline.metrics.csv").exists()
        assert (out / "wall-street.metrics.csv").exists()


class TestCodebookCli:
    def test_synth_eval_export_round_trip(self, tmp_path, capsys):
        book_path = tmp_path / "book.cb"
        assert main(["codebook", "synth", "--out", str(book_path),
                     "--theta-t", "0", "--theta-r=-20,20",
                     "--alphas", "0.5", "--n-elements", "8",
                     "--generations", "20", "--seed", "5"]) == 0
        assert book_path.exists()
        assert main(["codebook", "eval", "--book", str(book_path)]) == 0
        out = capsys.readouterr().out.splitlines()
        assert out[0].startswith("mode,theta_t_deg")
        # stored and recomputed transmissive gains agree within 0.1 dB
        for line in out[1:]:
            cols = line.split(",")
            assert abs(float(cols[4]) - float(cols[6])) < 0.1
        csv_path = tmp_path / "entries.csv"
        assert main(["codebook", "export", "--book", str(book_path),
                     "--out", str(csv_path)]) == 0
        assert csv_path.read_text().startswith("mode,theta_t_deg")

    def test_eval_missing_book_is_runtime_error(self, tmp_path):
        missing = tmp_path / "none.cb"
        missing.write_text("not a codebook\n")
        assert main(["codebook", "eval", "--book", str(missing)]) == 1
