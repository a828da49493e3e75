import json
import math

import pytest

from guidedppl.cli import main

from helpers import DICE_FE_TARGET


def invoke(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr().out
    return code, out


def invoke_json(capsys, *argv):
    code, out = invoke(capsys, *argv)
    return code, json.loads(out)


class TestOracleCommand:
    def test_three_dice_golden_values(self, capsys):
        code, doc = invoke_json(capsys, "oracle", "--model", "three_dice")
        assert code == 0
        assert doc["command"] == "oracle"
        assert doc["results"]["paths"] == 216
        assert doc["results"]["evidence"] == pytest.approx(15 / 216, abs=1e-12)
        assert doc["results"]["conditional_h"] == pytest.approx(1 / 15, abs=1e-12)

    def test_guide_report_included(self, capsys):
        code, doc = invoke_json(
            capsys, "oracle", "--model", "three_dice", "--guide", "posterior"
        )
        assert code == 0
        g = doc["results"]["guide"]
        assert g["free_energy"] == pytest.approx(DICE_FE_TARGET, abs=1e-9)
        assert g["kl"] == pytest.approx(0.0, abs=1e-9)
        assert g["acceptance_rate"] == pytest.approx(1.0, abs=1e-12)

    def test_monkey_reports_dp_evidence(self, capsys):
        code, doc = invoke_json(
            capsys, "oracle", "--model", "monkey", "--length", "8", "--pattern", "aba"
        )
        assert code == 0
        # The automaton value is exact; enumeration goes through logs.
        assert doc["results"]["evidence"] == pytest.approx(
            doc["results"]["dp_evidence"], abs=1e-12
        )

    def test_zero_evidence_reports_null_conditional(self, capsys):
        code, doc = invoke_json(
            capsys, "oracle", "--model", "monkey", "--length", "4", "--pattern", "aaaaa"
        )
        assert code == 0
        assert doc["results"]["evidence"] == 0.0
        assert doc["results"]["conditional_h"] is None


class TestRunCommand:
    def test_posterior_guide_run(self, capsys):
        code, doc = invoke_json(
            capsys, "run", "--model", "three_dice", "--guide", "posterior",
            "--n", "500", "--seed", "7",
        )
        assert code == 0
        r = doc["results"]
        assert r["adjusted_fe"] == pytest.approx(DICE_FE_TARGET, abs=1e-9)
        assert r["std_error"] <= 1e-12
        assert r["n_accepted"] == 500

    def test_hypothesis_histogram(self, capsys):
        code, doc = invoke_json(
            capsys, "run", "--model", "three_dice", "--guide", "posterior",
            "--n", "400", "--seed", "3", "--report-hypothesis-histogram",
        )
        hist = doc["results"]["hypothesis_histogram"]
        assert set(hist) == {"0", "1"}
        assert sum(hist.values()) == pytest.approx(1.0, abs=1e-9)
        assert hist["1"] == pytest.approx(1 / 15, abs=0.05)

    def test_workers_do_not_change_results(self, capsys):
        _, solo = invoke_json(
            capsys, "run", "--model", "three_dice", "--guide", "prior_reject",
            "--n", "600", "--seed", "9",
        )
        _, multi = invoke_json(
            capsys, "run", "--model", "three_dice", "--guide", "prior_reject",
            "--n", "600", "--seed", "9", "--workers", "3",
        )
        assert solo["results"] == multi["results"]


class TestBoundCommand:
    def test_evidence_bound_valid(self, capsys):
        code, doc = invoke_json(
            capsys, "bound", "--model", "three_dice", "--guide", "prior",
            "--n", "100", "--delta", "0.05", "--seed", "7",
        )
        assert code == 0
        b = doc["results"]["evidence_bound"]
        assert 0.0 <= b["bound"] <= 15 / 216
        assert b["confidence"] == 0.95
        assert b["n"] == 100

    def test_hypothesis_bounds_and_note(self, capsys):
        code, doc = invoke_json(
            capsys, "bound", "--model", "three_dice", "--guide", "posterior",
            "--guide-num", "die1_is_5", "--n", "400", "--delta", "0.05",
            "--seed", "7", "--hypothesis",
        )
        assert code == 0
        h = doc["results"]["hypothesis"]
        assert h["ratio_of_bounds"] == pytest.approx(1 / 15, abs=1e-9)
        assert abs(h["self_normalized"] - 1 / 15) < 0.05
        assert any("estimate" in note for note in doc["stderr_notes"])

    def test_undefined_ratio_is_structured_error(self, capsys):
        code, doc = invoke_json(
            capsys, "bound", "--model", "monkey", "--pattern", "aaaaaaaaaaaaaaa",
            "--guide", "pattern_insert", "--hypothesis", "--n", "50", "--seed", "1",
        )
        assert code == 1
        assert doc["error"]["type"] == "UndefinedRatioError"
        assert doc["error"]["partial"]["denominator_bound"]["bound"] == 0.0


class TestTraceCommand:
    def test_events_decompose_the_free_energy(self, capsys):
        code, doc = invoke_json(
            capsys, "trace", "--model", "three_dice", "--guide", "posterior", "--seed", "3"
        )
        assert code == 0
        r = doc["results"]
        assert r["status"] == "completed"
        assert sum(e["fe"] for e in r["events"]) == pytest.approx(r["one_run_fe"], abs=1e-12)
        assert r["one_run_fe"] == pytest.approx(DICE_FE_TARGET, abs=1e-9)
        kinds = [e["kind"] for e in r["events"]]
        assert kinds == ["choose", "choose", "choose", "evidence"]

    def test_monkey_trace_reports_extras(self, capsys):
        code, doc = invoke_json(
            capsys, "trace", "--model", "monkey", "--guide", "pattern_insert", "--seed", "5"
        )
        assert code == 0
        (extra,) = doc["results"]["extras"]
        assert 0 <= extra["chosen"] <= 9
        assert extra["guide_mass"] == pytest.approx(0.1, abs=1e-12)


class TestOptimizeCommand:
    def test_smoke_and_param_roundtrip(self, capsys, tmp_path):
        params_file = tmp_path / "params.json"
        code, doc = invoke_json(
            capsys, "optimize", "--model", "three_dice", "--budget", "30",
            "--eval-n", "80", "--seed", "4", "--save-params", str(params_file),
        )
        assert code == 0
        assert doc["results"]["evaluations"] == 30
        saved = json.loads(params_file.read_text())
        assert saved == doc["results"]["best_params"]

        code2, doc2 = invoke_json(
            capsys, "run", "--model", "three_dice", "--guide", "tabular",
            "--params", str(params_file), "--ceiling", "30", "--n", "300", "--seed", "8",
        )
        assert code2 == 0
        assert doc2["results"]["n_accepted"] > 0

    def test_model_without_family_exits_2(self, capsys):
        code, out = invoke(capsys, "optimize", "--model", "monkey", "--budget", "5")
        assert code == 2


class TestErrorsAndDeterminism:
    def test_unknown_model_exits_2(self, capsys):
        code, out = invoke(capsys, "run", "--model", "wat", "--n", "5")
        assert code == 2

    def test_unknown_guide_exits_2(self, capsys):
        code, out = invoke(capsys, "run", "--model", "three_dice", "--guide", "wat", "--n", "5")
        assert code == 2

    def test_no_accepted_runs_is_structured(self, capsys):
        code, doc = invoke_json(
            capsys, "run", "--model", "monkey", "--pattern", "aaaaaaaaaaaaaaa",
            "--guide", "prior", "--ceiling", "10", "--n", "20", "--seed", "0",
        )
        assert code == 1
        assert doc["error"]["type"] == "NoAcceptedRunsError"

    @pytest.mark.parametrize(
        "argv",
        [
            ("run", "--model", "three_dice", "--guide", "posterior", "--n", "200", "--seed", "1"),
            ("oracle", "--model", "three_dice", "--guide", "prior_reject"),
            ("bound", "--model", "three_dice", "--guide", "prior", "--n", "150", "--seed", "2"),
            ("trace", "--model", "monkey", "--guide", "pattern_insert", "--seed", "12"),
            ("optimize", "--model", "three_dice", "--budget", "10", "--eval-n", "60", "--seed", "3"),
        ],
    )
    def test_byte_identical_repeats(self, capsys, argv):
        _, first = invoke(capsys, *argv)
        _, second = invoke(capsys, *argv)
        assert first == second

    def test_output_file_matches_stdout(self, capsys, tmp_path):
        path = tmp_path / "doc.json"
        _, out = invoke(
            capsys, "oracle", "--model", "three_dice", "--output", str(path)
        )
        assert path.read_text() == out

    def test_floats_serialized_with_17_digits(self, capsys):
        _, out = invoke(capsys, "oracle", "--model", "three_dice")
        assert '"evidence": 0.069444444444444434' in out

    def test_infinity_serialization_round_trips(self, capsys):
        code, doc = invoke_json(
            capsys, "run", "--model", "three_dice", "--guide", "prior",
            "--n", "50", "--seed", "0",
        )
        assert code == 0
        assert doc["results"]["adjusted_fe"] == math.inf
