import csv
import json
import math

import pytest

from warplab.cli import RunConfig, load_run_config, main, parse_levels
from warplab.errors import ConfigurationError

FAST = {"resolution": 16, "depth": 8, "metric_resolution": 6, "n_pairs": 20}


def write_config(tmp_path, doc, run=None, name="cfg.json"):
    doc = dict(doc)
    doc["run"] = {**FAST, **(run or {})}
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def run(tmp_path, *argv):
    return main([*argv, "--out", str(tmp_path / "out")])


def test_parse_levels():
    assert parse_levels("1,2,4") == [1, 2, 4]
    assert parse_levels("1-3,8") == [1, 2, 3, 8]
    with pytest.raises(ConfigurationError):
        parse_levels("a-b")


def test_run_config_validation():
    with pytest.raises(ConfigurationError):
        load_run_config({"case": "equator", "run": {"levels": []}})
    with pytest.raises(ConfigurationError):
        load_run_config({"case": "equator", "run": {"levels": [2, 1]}})
    with pytest.raises(ConfigurationError):
        load_run_config({"case": "equator", "run": {"bogus": 1}})
    cfg = load_run_config({"case": "constant", "value": 2.0})
    assert isinstance(cfg, RunConfig) and cfg.case == "constant"


def test_validate_default_and_sabotaged(tmp_path, capsys):
    assert run(tmp_path, "validate", "--case", "equator") == 0
    bad = write_config(tmp_path, {"case": "equator", "offset_rule": {"kind": "explicit", "values": [1.0]}})
    assert run(tmp_path, "validate", "--config", bad) == 1
    assert "b_1" in capsys.readouterr().out


def test_verify_equator_passes(tmp_path):
    cfg = write_config(tmp_path, {"case": "equator"}, {"levels": [1, 2, 3, 4, 5, 6, 7, 8]})
    assert run(tmp_path, "verify", "--config", cfg) == 0
    report = json.loads((tmp_path / "out" / "verify.json").read_text())
    assert report["status"] == "pass"
    claims = {r["claim"] for r in report["records"]}
    for needed in ("laplacian_inequality", "level8.scalar_curvature_nonnegative", "level8.warp_lower_bound",
                   "level8.volume_bounds", "level8.integral_bound", "level8.distance_bound",
                   "level8.diameter_bound", "level8.admissible_terms.term_value_at_least_2"):
        assert needed in claims
    assert all(r["passed"] for r in report["records"])
    with open(tmp_path / "out" / "verify.csv") as fh:
        assert next(csv.reader(fh))[0] == "claim"


def test_verify_sabotaged_fails(tmp_path, capsys):
    bad = write_config(tmp_path, {"case": "equator", "offset_rule": {"kind": "explicit", "values": [1.0]}},
                       {"levels": [1, 2]})
    assert run(tmp_path, "verify", "--config", bad) == 1
    out = capsys.readouterr().out
    assert "FAIL  level1.admissible_terms.term_value_at_least_2" in out


def test_verify_is_deterministic(tmp_path):
    cfg = write_config(tmp_path, {"case": "converging"}, {"levels": [1, 2]})
    main(["verify", "--config", cfg, "--out", str(tmp_path / "a")])
    main(["verify", "--config", cfg, "--out", str(tmp_path / "b")])
    a = (tmp_path / "a" / "verify.json").read_bytes()
    assert a == (tmp_path / "b" / "verify.json").read_bytes()


def test_empty_levels_is_config_error(tmp_path):
    assert run(tmp_path, "verify", "--case", "equator", "--levels", "") == 2


def test_bad_json_reports_position(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text('{"case": "equator",\n "K": }')
    assert run(tmp_path, "validate", "--config", str(path)) == 2
    assert "broken.json:2:" in capsys.readouterr().err


def test_field_scalar_of_constant_warp(tmp_path):
    assert run(tmp_path, "field", "--case", "constant", "--kind", "scalar", "--resolution", "16") == 0
    with open(tmp_path / "out" / "field_scalar_level1.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert rows and all(abs(float(r["value"]) - 2.0) <= 1e-9 for r in rows)


def test_field_warp_minimum(tmp_path):
    assert run(tmp_path, "field", "--case", "converging", "--kind", "warp", "--level", "1", "--resolution", "32") == 0
    with open(tmp_path / "out" / "field_warp_level1.csv") as fh:
        rows = list(csv.DictReader(fh))
    best = min(rows, key=lambda r: float(r["value"]))
    # one unit-offset term of weight 1/2; its minimum 2 A_1 = 1 lies on the circle 90 degrees from the pole
    assert float(best["value"]) == pytest.approx(1.0, abs=1e-3)


def test_unknown_kind_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as exc:
        run(tmp_path, "field", "--kind", "pressure")
    assert exc.value.code == 2


def test_converge_refuses_equator(tmp_path, capsys):
    assert run(tmp_path, "converge", "--case", "equator") == 2
    assert "no explicit limit" in capsys.readouterr().err


def test_converge_single_pole(tmp_path):
    cfg = write_config(tmp_path, {"case": "custom", "points": [[0.6, 0.2]],
                                  "weight_rule": {"kind": "explicit", "values": [1.0]}},
                       {"levels": [1, 2, 4, 8], "resolution": 32})
    assert run(tmp_path, "converge", "--config", cfg) == 0
    payload = json.loads((tmp_path / "out" / "convergence.json").read_text())
    assert payload["decreasing"] == {"Lq1": True, "W1p1": True}
    assert (tmp_path / "out" / "convergence.csv").exists()


def test_probe_constant(tmp_path):
    cfg = write_config(tmp_path, {"case": "constant", "value": 1.0}, {"probe_shape": [41, 41, 41]})
    assert run(tmp_path, "probe", "--config", cfg) == 0
    payload = json.loads((tmp_path / "out" / "probe.json").read_text())
    assert payload["probes"][0]["calibrated"] == pytest.approx(2.0, abs=0.3)


def test_probe_too_few_radii(tmp_path):
    assert run(tmp_path, "probe", "--case", "constant", "--radii", "0.1,0.2,0.3") == 2


def test_probe_skips_center_near_pole(tmp_path, capsys):
    code = run(tmp_path, "probe", "--case", "converging", "--level", "1", "--center", "1.0,0.0")
    assert code == 1
    assert "skipped" in capsys.readouterr().err


def test_report_merges(tmp_path):
    assert run(tmp_path, "report") == 2
    cfg = write_config(tmp_path, {"case": "equator"}, {"levels": [1, 2]})
    run(tmp_path, "verify", "--config", cfg)
    assert run(tmp_path, "report") == 0
    merged = json.loads((tmp_path / "out" / "report.json").read_text())
    assert merged["summary"] == {"parts": ["verify"], "status": "pass"}


def test_constant_profile_verify(tmp_path):
    cfg = write_config(tmp_path, {"case": "constant", "value": 1.0}, {"levels": [1]})
    assert run(tmp_path, "verify", "--config", cfg) in (0, 1)
    assert math.isfinite(json.loads((tmp_path / "out" / "verify.json").read_text())["records"][0]["measured"])
