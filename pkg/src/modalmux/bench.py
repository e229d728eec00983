"""Speech-latency benchmark driver: sequential vs parallel-batch synthesis.

Runs the simulated-latency engine model over a corpus in both scheduling
modes with paired random draws, prints a comparison, and writes the raw
numbers as CSV plus a matplotlib figure next to them.
"""

from __future__ import annotations

import csv
import random
from pathlib import Path
from typing import Optional

from .errors import CorpusEmpty
from .tts import BenchReport, LatencyModel, benchmark

_CLAUSE_WORDS = [
    "the", "quiet", "garden", "holds", "many", "bright", "flowers", "today",
    "and", "every", "visitor", "stops", "to", "watch", "the", "old", "fountain",
    "while", "morning", "light", "moves", "slowly", "across", "the", "stone", "path",
]


def make_corpus(n: int = 200, clauses: tuple[int, int] = (3, 6),
                words: tuple[int, int] = (8, 12), seed: int = 7) -> list[str]:
    """Synthetic utterances that segment into ``clauses`` pieces each."""
    rng = random.Random(seed)
    corpus = []
    for _ in range(n):
        k = rng.randint(*clauses)
        parts = []
        for _ in range(k):
            w = rng.randint(*words)
            parts.append(" ".join(rng.choice(_CLAUSE_WORDS) for _ in range(w)))
        corpus.append(", ".join(parts) + ".")
    return corpus


def load_corpus(path: Path) -> list[str]:
    lines = [ln.strip() for ln in Path(path).read_text(encoding="utf-8").splitlines()]
    corpus = [ln for ln in lines if ln]
    if not corpus:
        raise CorpusEmpty(f"{path} has no usable utterances")
    return corpus


def run_bench(
    corpus: list[str],
    model: Optional[LatencyModel] = None,
    seed: int = 42,
    workers: int = 4,
    out_dir: Optional[Path] = None,
) -> dict:
    if not corpus:
        raise CorpusEmpty("empty corpus")
    model = model or LatencyModel()
    sequential = benchmark(corpus, "sequential", model, seed=seed, workers=workers)
    parallel = benchmark(corpus, "parallel-batch", model, seed=seed, workers=workers)
    reduction = (
        (sequential.mean_ms - parallel.mean_ms) / sequential.mean_ms
        if sequential.mean_ms
        else 0.0
    )
    result = {
        "sequential": sequential,
        "parallel": parallel,
        "mean_reduction": reduction,
        "variance_ratio": (
            parallel.variance_ms2 / sequential.variance_ms2
            if sequential.variance_ms2
            else 1.0
        ),
        "ok": parallel.mean_ms <= sequential.mean_ms + 1e-9,
    }
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_csv(out_dir / "bench_results.csv", sequential, parallel)
        _write_figure(out_dir / "bench_latency.png", sequential, parallel)
        result["csv"] = str(out_dir / "bench_results.csv")
        result["figure"] = str(out_dir / "bench_latency.png")
    return result


def format_report(result: dict) -> str:
    rows = [result["sequential"].as_row(), result["parallel"].as_row()]
    header = ["mode", "n", "mean_ms", "variance_ms2", "ttfa_mean_ms", "ttfa_variance_ms2"]
    widths = [max(len(h), *(len(str(r[h])) for r in rows)) for h in header]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    for row in rows:
        lines.append("  ".join(str(row[h]).ljust(w) for h, w in zip(header, widths)))
    lines.append(
        f"mean reduction: {result['mean_reduction'] * 100:.1f}%  "
        f"variance ratio: {result['variance_ratio']:.3f}"
    )
    return "\n".join(lines)


def _write_csv(path: Path, *reports: BenchReport) -> None:
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(
            ["mode", "n", "mean_ms", "variance_ms2", "ttfa_mean_ms", "ttfa_variance_ms2"]
        )
        for report in reports:
            row = report.as_row()
            writer.writerow([row[k] for k in
                             ("mode", "n", "mean_ms", "variance_ms2",
                              "ttfa_mean_ms", "ttfa_variance_ms2")])


def _write_figure(path: Path, sequential: BenchReport, parallel: BenchReport) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 4))
    ax1.boxplot(
        [sequential.per_utterance_ms, parallel.per_utterance_ms],
        tick_labels=["sequential", "parallel-batch"],
    )
    ax1.set_ylabel("completion time (ms)")
    ax1.set_title("time until complete audio")
    ax2.bar(
        ["sequential", "parallel-batch"],
        [sequential.ttfa_mean_ms, parallel.ttfa_mean_ms],
        color=["#888888", "#3a7ca5"],
    )
    ax2.set_ylabel("mean time to first audio (ms)")
    ax2.set_title("time to first audio")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
