import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from psimarket.cli import ComparisonReport, UsageError, compare_regimes, run_cli
from psimarket.dynamics import file_digest
from psimarket.errors import MissingFieldError, RangeViolationError, ScenarioSyntaxError, UnknownKeyError
from psimarket.scenario import parse_scenario, serialize_scenario

MINIMAL = {"regime": "Psi", "agents": 10, "horizon": 100, "seed": 1}
SMALL = {"regime": "Psi", "agents": {"count": 12}, "horizon": 60, "seed": 5}


def _write(tmp_path, name, data):
    path = tmp_path / name
    path.write_text(json.dumps(data) if not isinstance(data, str) else data, encoding="utf-8")
    return str(path)


def test_minimal_config_gets_defaults():
    cfg = parse_scenario(json.dumps(MINIMAL))
    assert cfg.agents.count == 10
    assert cfg.trade.price_step == 0.1
    assert cfg.marketability.rate == 0.05


def test_missing_regime():
    with pytest.raises(MissingFieldError):
        parse_scenario(json.dumps({"agents": 10, "horizon": 1, "seed": 1}))


def test_tax_rate_out_of_range():
    with pytest.raises(RangeViolationError) as err:
        parse_scenario(json.dumps({**MINIMAL, "regime": "Fiat", "fiat": {"tax_rate": 1.5}}))
    assert err.value.key == "fiat.tax_rate"


def test_unknown_key_and_bad_json():
    with pytest.raises(UnknownKeyError) as err:
        parse_scenario(json.dumps({**MINIMAL, "trade": {"lots": 2}}))
    assert err.value.key == "trade.lots"
    with pytest.raises(ScenarioSyntaxError):
        parse_scenario("{not json")


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(["Psi", "Fiat", "BarterOnly"]), st.integers(0, 500), st.integers(0, 2**63 - 1),
       st.floats(0.01, 1.0), st.booleans())
def test_parse_serialize_idempotent(regime, n, seed, phi, ious):
    text = json.dumps({"regime": regime, "agents": n, "horizon": 10, "seed": seed,
                       "trade": {"budget_fraction": phi, "iou_issue": ious}})
    once = serialize_scenario(parse_scenario(text))
    assert serialize_scenario(parse_scenario(once)) == once


def test_cli_validate(tmp_path):
    assert run_cli(["validate", "--scenario", _write(tmp_path, "ok.json", MINIMAL)]) == 0


def test_cli_malformed_names_key(tmp_path, capsys):
    bad = _write(tmp_path, "bad.json", {**MINIMAL, "psi": {"vote_threshold": 2}})
    assert run_cli(["run", "--scenario", bad, "--out", str(tmp_path / "o")]) == 2
    assert "psi.vote_threshold" in capsys.readouterr().err


def test_cli_usage_errors(tmp_path):
    assert run_cli([]) == 1
    assert run_cli(["frobnicate"]) == 1
    path = _write(tmp_path, "ok.json", SMALL)
    assert run_cli(["compare", "--a", path, "--b", path, "--seeds", "", "--out", str(tmp_path / "c")]) == 1


def test_cli_run_twice_same_digests(tmp_path):
    path = _write(tmp_path, "s.json", SMALL)
    digests = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        assert run_cli(["run", "--scenario", path, "--out", str(out)]) == 0
        digests.append([file_digest(out / f) for f in ("events.csv", "metrics.csv", "summary.json")])
    assert digests[0] == digests[1]
    summary = json.loads((tmp_path / "run0" / "summary.json").read_text())
    assert summary["frames"] == 61


def test_compare_identical_configs_zero_diffs():
    cfg = parse_scenario(json.dumps(SMALL))
    report = compare_regimes(cfg, cfg, [1, 2])
    assert len(report.rows) == 2
    for row in report.rows:
        for key, val in row.items():
            if key.endswith("_diff") and val is not None:
                assert val == 0


def test_compare_rows_and_tally(tmp_path):
    fiat = parse_scenario(json.dumps({"regime": "Fiat", "agents": 12, "horizon": 40, "seed": 1,
                                      "fiat": {"expansion_rate": 0.02, "expansion_start": 5}}))
    psi = parse_scenario(json.dumps(SMALL))
    seeds = list(range(1, 11))
    report = compare_regimes(fiat, psi, seeds)
    assert isinstance(report, ComparisonReport)
    assert [r["seed"] for r in report.rows] == seeds
    assert report.tally_line().startswith("sign tally")
    assert sum(report.tallies["gini_slope"].values()) == 10


def test_compare_empty_seeds():
    cfg = parse_scenario(json.dumps(SMALL))
    with pytest.raises(UsageError):
        compare_regimes(cfg, cfg, [])


def test_cli_compare_writes_report(tmp_path, capsys):
    path = _write(tmp_path, "s.json", SMALL)
    out = tmp_path / "cmp"
    assert run_cli(["compare", "--a", path, "--b", path, "--seeds", "1,2,3", "--out", str(out)]) == 0
    assert "sign tally" in capsys.readouterr().out
    rows = (out / "compare.csv").read_text().splitlines()
    assert len(rows) == 4
    assert json.loads((out / "compare.json").read_text())["seeds"] == [1, 2, 3]
