import json

import pytest

from modalmux.errors import ScenarioParseError
from modalmux.runtime import GARDEN_SCENARIO
from modalmux.scenario import Scenario, run_scenario, run_scenario_file


class TestParsing:
    def test_bundled_scenario_loads(self):
        scenario = Scenario.load(GARDEN_SCENARIO)
        assert scenario.name == "garden"
        assert scenario.steps
        assert scenario.expectations

    def test_unknown_action(self, tmp_path):
        path = tmp_path / "s.json"
        path.write_text(json.dumps({"steps": [{"action": "dance", "at_ms": 0}]}))
        with pytest.raises(ScenarioParseError):
            Scenario.load(path)

    def test_time_must_not_go_backwards(self, tmp_path):
        path = tmp_path / "s.json"
        path.write_text(json.dumps({"steps": [
            {"action": "say", "at_ms": 100, "payload": {"text": "a"}},
            {"action": "say", "at_ms": 50, "payload": {"text": "b"}},
        ]}))
        with pytest.raises(ScenarioParseError):
            Scenario.load(path)

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "s.json"
        path.write_text("{nope")
        with pytest.raises(ScenarioParseError):
            Scenario.load(path)


class TestRun:
    def test_garden_passes(self):
        report, artifacts = run_scenario_file(GARDEN_SCENARIO)
        assert report.passed, "\n".join(report.summary_lines())
        assert len(report.assertions) == 9
        assert len(artifacts.turns) == 3

    def test_failing_expectation_reported(self):
        scenario = Scenario(
            name="x",
            steps=[{"action": "say", "at_ms": 0, "payload": {"text": "hello"}}],
            expectations=[{"kind": "expert_calls", "modality": "vision", "count": 7}],
        )
        report, _ = run_scenario(scenario)
        assert not report.passed
        assert "got 0" in report.assertions[0].detail

    def test_unknown_expectation_is_failure_not_crash(self):
        scenario = Scenario(
            name="x",
            steps=[],
            expectations=[{"kind": "no_such_check"}],
        )
        report, _ = run_scenario(scenario)
        assert not report.passed

    def test_zero_assertions_warns(self):
        scenario = Scenario(name="x", steps=[], expectations=[])
        report, _ = run_scenario(scenario)
        assert report.warnings

    def test_events_deterministic_across_runs(self):
        scenario = Scenario.load(GARDEN_SCENARIO)
        _, a = run_scenario(scenario, seed=0)
        _, b = run_scenario(scenario, seed=0)
        strip = lambda events: [
            (e["kind"], {k: v for k, v in e["payload"].items()
                         if k not in ("duration_ms",)})
            for e in events
        ]
        assert strip(a.events) == strip(b.events)

    def test_summary_lines_shape(self):
        report, _ = run_scenario_file(GARDEN_SCENARIO)
        lines = report.summary_lines()
        assert lines[0].startswith("scenario garden: PASS")
        assert all(line.startswith("  [") for line in lines[1:])
