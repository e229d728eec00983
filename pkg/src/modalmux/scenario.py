"""Scripted scenario replay: drive a full in-process runtime from a data file.

A scenario is an ordered list of timestamped steps (say / attach_media /
interrupt / expect) plus end-of-run expectations over the recorded turn
results and event log. Time is logical: steps run in at_ms order against
deterministic mocks, so a scenario plus a seed always produces the same
report.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .errors import ExpectationFailure, ScenarioParseError
from .experts import make_labeled_audio
from .orchestrator import INTERRUPT_TAG, Session, TurnResult
from .runtime import RuntimeConfig, build_session

_ACTIONS = {"say", "interrupt", "attach_media", "expect"}


@dataclass
class Scenario:
    name: str
    steps: list[dict]
    expectations: list[dict]

    @classmethod
    def load(cls, path: Path) -> "Scenario":
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise ScenarioParseError(f"{path}: {exc}") from exc
        steps = raw.get("steps", [])
        if not isinstance(steps, list):
            raise ScenarioParseError(f"{path}: 'steps' must be a list")
        last_at = -1
        for i, step in enumerate(steps):
            action = step.get("action")
            if action not in _ACTIONS:
                raise ScenarioParseError(f"{path}: step {i} has unknown action {action!r}")
            at_ms = step.get("at_ms", last_at if last_at >= 0 else 0)
            if at_ms < last_at:
                raise ScenarioParseError(f"{path}: step {i} at_ms goes backwards")
            last_at = at_ms
        return cls(
            name=raw.get("name", path.stem),
            steps=steps,
            expectations=raw.get("expectations", []),
        )


@dataclass
class Assertion:
    description: str
    ok: bool
    detail: str = ""


@dataclass
class ScenarioReport:
    name: str
    assertions: list[Assertion] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(a.ok for a in self.assertions)

    def summary_lines(self) -> list[str]:
        lines = [f"scenario {self.name}: {'PASS' if self.passed else 'FAIL'}"]
        for a in self.assertions:
            mark = "ok " if a.ok else "FAIL"
            lines.append(f"  [{mark}] {a.description}" + (f" -- {a.detail}" if a.detail else ""))
        for w in self.warnings:
            lines.append(f"  [warn] {w}")
        return lines


@dataclass
class RunArtifacts:
    session: Session
    turns: list[TurnResult]
    events: list[dict]  # {kind, payload, order}


def run_scenario(
    scenario: Scenario,
    config: Optional[RuntimeConfig] = None,
    seed: int = 0,
) -> tuple[ScenarioReport, RunArtifacts]:
    config = config or RuntimeConfig()
    session = build_session(config, session_id=f"scenario-{scenario.name}",
                            deterministic=True, seed=seed)
    rng = random.Random(seed)
    events: list[dict] = []
    turns: list[TurnResult] = []
    report = ScenarioReport(name=scenario.name)

    def listener(kind: str, payload: dict) -> None:
        payload = {k: v for k, v in payload.items() if not k.startswith("_")}
        events.append({"kind": kind, "payload": payload, "order": len(events)})

    for step in sorted(scenario.steps, key=lambda s: s.get("at_ms", 0)):
        action = step["action"]
        payload = step.get("payload", {})
        if action == "attach_media":
            label = payload.get("label", "media")
            session.attach_media(
                payload=label.encode("utf-8"),
                modality=payload.get("modality", "vision"),
                content_type=payload.get("content_type", "image/png"),
                context=payload.get("context", ["user_upload"]),
            )
        elif action == "say":
            if "audio_label" in payload:
                user_input: object = make_labeled_audio(payload["audio_label"])
            else:
                user_input = payload["text"]
            turns.append(session.handle_turn(user_input, listener))
        elif action == "interrupt":
            session.interrupt()
            events.append({"kind": "interrupt_sent", "payload": {}, "order": len(events)})
        elif action == "expect":
            _evaluate(step.get("payload", step), turns, events, session, report, rng)

    for expectation in scenario.expectations:
        _evaluate(expectation, turns, events, session, report, rng)
    if not report.assertions:
        report.warnings.append("scenario declared zero assertions")
    return report, RunArtifacts(session=session, turns=turns, events=events)


def run_scenario_file(
    path: Path, config: Optional[RuntimeConfig] = None, seed: int = 0
) -> tuple[ScenarioReport, RunArtifacts]:
    return run_scenario(Scenario.load(path), config=config, seed=seed)


def _turn(turns: list[TurnResult], number: int) -> TurnResult:
    for t in turns:
        if t.turn_id == number:
            return t
    raise ExpectationFailure(f"no recorded turn {number}")


def _evaluate(
    spec: dict,
    turns: list[TurnResult],
    events: list[dict],
    session: Session,
    report: ScenarioReport,
    rng: random.Random,
) -> None:
    kind = spec.get("kind")
    try:
        if kind == "expert_calls":
            modality = spec["modality"]
            want = spec["count"]
            got = sum(
                1
                for t in turns
                for r in t.expert_trace
                if r.modality == modality and r.outcome == "ok"
            )
            _check(report, f"{modality} backend called {want}x", got == want, f"got {got}")
        elif kind == "turn_path":
            t = _turn(turns, spec["turn"])
            _check(report, f"turn {t.turn_id} takes {spec['path']} path",
                   t.path == spec["path"], f"got {t.path}")
        elif kind == "turn_expert_count":
            t = _turn(turns, spec["turn"])
            got = len([r for r in t.expert_trace if r.outcome != "skipped_cached"])
            _check(report, f"turn {t.turn_id} performs {spec['count']} expert calls",
                   got == spec["count"], f"got {got}")
        elif kind == "turn_outcome":
            t = _turn(turns, spec["turn"])
            got = [r.outcome for r in t.expert_trace if r.modality == spec["modality"]]
            _check(
                report,
                f"turn {t.turn_id} {spec['modality']} outcome {spec['outcome']}",
                spec["outcome"] in got,
                f"got {got}",
            )
        elif kind == "final_text_contains":
            t = _turn(turns, spec["turn"])
            _check(
                report,
                f"turn {t.turn_id} final text contains {spec['value']!r}",
                spec["value"] in t.final_text,
                f"got {t.final_text!r}",
            )
        elif kind == "memory_tag_present":
            tag = spec["tag"]
            present = any(tag in it.context for it in session.store.items)
            _check(report, f"memory holds an item tagged {tag!r}", present)
        elif kind == "interrupt_fencing":
            ok, detail = _fencing_holds(events)
            _check(report, "no stale audio after an interruption", ok, detail)
        elif kind == "event_order":
            t = spec["turn"]
            ok, detail = _event_order_holds(events, t)
            _check(report, f"turn {t} event ordering", ok, detail)
        else:
            raise ExpectationFailure(f"unknown expectation kind {kind!r}")
    except ExpectationFailure as exc:
        report.assertions.append(Assertion(description=str(kind), ok=False, detail=str(exc)))


def _check(report: ScenarioReport, description: str, ok: bool, detail: str = "") -> None:
    report.assertions.append(Assertion(description, ok, "" if ok else detail))


def _fencing_holds(events: list[dict]) -> tuple[bool, str]:
    """After an interrupted event, no audio from an earlier generation."""
    interrupted_at: Optional[int] = None
    fence_generation = -1
    for event in events:
        if event["kind"] == "interrupted":
            interrupted_at = event["order"]
            fence_generation = max(
                (e["payload"].get("generation", -1)
                 for e in events
                 if e["kind"] == "audio_chunk_meta" and e["order"] < interrupted_at),
                default=-1,
            )
        elif event["kind"] == "audio_chunk_meta" and interrupted_at is not None:
            if event["payload"].get("generation", 0) <= fence_generation:
                return False, f"stale chunk at event {event['order']}"
    return True, ""


def _event_order_holds(events: list[dict], turn_id: int) -> tuple[bool, str]:
    ranks = {
        "transcript": 0,
        "controls": 1,
        "expert_started": 2,
        "expert_done": 2,
        "fusion_done": 3,
        "segment": 4,
        "audio_chunk_meta": 4,
        "interrupted": 5,
        "turn_failed": 5,
        "turn_done": 5,
    }
    last = -1
    for event in events:
        if event["payload"].get("turn_id") != turn_id:
            continue
        rank = ranks.get(event["kind"])
        if rank is None:
            continue
        if rank < last:
            return False, f"{event['kind']} out of order at {event['order']}"
        last = max(last, rank)
    return True, ""
