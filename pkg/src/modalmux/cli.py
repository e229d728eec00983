"""Command-line interface.

Exit codes: 0 pass, 1 fail, 2 usage error (click's default for bad
invocations).
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import bench as bench_mod
from . import runtime
from .controller import load_mock_table
from .errors import FileMissing, ModalmuxError, ScenarioParseError
from .memory import record_violations
from .scenario import run_scenario_file
from .tts import LatencyModel


@click.group()
def main() -> None:
    """Training-free multimodal orchestration runtime."""


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True, path_type=Path))
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8775, show_default=True)
def serve(config_path: Path | None, host: str, port: int) -> None:
    """Run the gateway server."""
    import uvicorn

    from .gateway import build_app

    app = build_app(runtime.RuntimeConfig.load(config_path))
    uvicorn.run(app, host=host, port=port)


@main.group()
def scenario() -> None:
    """Scripted scenario replay."""


def _resolve(path: str, bundled: Path) -> Path:
    candidate = Path(path)
    if candidate.exists():
        return candidate
    fallback = bundled.parent / path
    if fallback.exists():
        return fallback
    raise FileMissing(f"no such file: {path}")


@scenario.command("run")
@click.argument("scenario_file")
@click.option("--config", "config_path", type=click.Path(exists=True, path_type=Path))
@click.option("--seed", default=0, show_default=True)
def scenario_run(scenario_file: str, config_path: Path | None, seed: int) -> None:
    """Replay a scenario file against the in-process runtime."""
    try:
        path = _resolve(scenario_file, runtime.GARDEN_SCENARIO)
        report, _ = run_scenario_file(
            path, config=runtime.RuntimeConfig.load(config_path), seed=seed
        )
    except (FileMissing, ScenarioParseError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    for line in report.summary_lines():
        click.echo(line)
    sys.exit(0 if report.passed else 1)


@main.group(name="bench")
def bench_group() -> None:
    """Latency benchmarks."""


@bench_group.command("tts")
@click.argument("corpus_file", required=False)
@click.option("--seed", default=42, show_default=True)
@click.option("--workers", default=4, show_default=True)
@click.option("--base-ms", default=50.0, show_default=True)
@click.option("--jitter-ms", default=20.0, show_default=True)
@click.option("--out-dir", type=click.Path(path_type=Path), default=Path("bench_out"),
              show_default=True, help="Where the CSV and figure are written.")
def bench_tts(corpus_file: str | None, seed: int, workers: int,
              base_ms: float, jitter_ms: float, out_dir: Path) -> None:
    """Compare sequential vs parallel-batch synthesis on a corpus."""
    try:
        if corpus_file:
            corpus = bench_mod.load_corpus(_resolve(corpus_file, runtime.DEFAULT_BENCH_CORPUS))
        else:
            corpus = bench_mod.make_corpus(seed=seed)
        result = bench_mod.run_bench(
            corpus,
            model=LatencyModel(base_ms=base_ms, jitter_ms=jitter_ms),
            seed=seed,
            workers=workers,
            out_dir=out_dir,
        )
    except ModalmuxError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    click.echo(bench_mod.format_report(result))
    if "csv" in result:
        click.echo(f"wrote {result['csv']} and {result['figure']}")
    sys.exit(0 if result["ok"] else 1)


@main.group()
def memory() -> None:
    """Memory store files (one JSON record per line)."""


def _iter_records(path: Path):
    if not path.exists():
        raise FileMissing(f"no such file: {path}")
    with path.open(encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if line:
                yield lineno, json.loads(line)


def _validate_store(path: Path) -> int:
    failures = 0
    ids: set[str] = set()
    references: list[tuple[int, str]] = []
    for lineno, record in _iter_records(path):
        problems = record_violations(record)
        for problem in problems:
            click.echo(f"line {lineno}: violation: {problem}")
            failures += 1
        if isinstance(record, dict):
            if isinstance(record.get("id"), str):
                ids.add(record["id"])
            for ref in record.get("references", []) or []:
                references.append((lineno, ref))
    for lineno, ref in references:
        if ref not in ids:
            click.echo(f"line {lineno}: warning: dangling reference {ref}")
    return failures


@memory.command("dump")
@click.argument("store_file", type=click.Path(path_type=Path))
def memory_dump(store_file: Path) -> None:
    """Print records and check them against the schema."""
    try:
        for _, record in _iter_records(store_file):
            click.echo(json.dumps(record))
        failures = _validate_store(store_file)
    except FileMissing as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    sys.exit(1 if failures else 0)


@memory.command("validate")
@click.argument("store_file", type=click.Path(path_type=Path))
def memory_validate(store_file: Path) -> None:
    """Schema-check a store file; dangling references warn, not fail."""
    try:
        failures = _validate_store(store_file)
    except FileMissing as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    click.echo("ok" if not failures else f"{failures} violation(s)")
    sys.exit(1 if failures else 0)


@main.group()
def mock() -> None:
    """Mock backend tables."""


@mock.command("check")
@click.argument("table_file")
def mock_check(table_file: str) -> None:
    """Validate a pattern table (compiles, has a catch-all)."""
    try:
        path = _resolve(table_file, runtime.DEFAULT_CONTROLLER_TABLE)
        table = load_mock_table(path)
    except (FileMissing, ValueError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    click.echo(f"ok: {len(table['entries'])} entries")
    sys.exit(0)


if __name__ == "__main__":
    main()
