"""Benchmark harness: quality/speed records, summaries, and curve exports.

Speed is counted in steps: speedup = T / steps_used. The headline metric
trades quality against speed as

    QPS_gamma = speedup * (score / baseline_score) ** gamma

with gamma = 4 by default. Summaries are macro averages (mean score and
mean speedup per variant, QPS computed from those means against a paired
stop=Never baseline run under the same config fingerprint).
"""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .config import RunConfig, Sample, build_provider, build_shared_provider, stop_label
from .engine import DecodeResult, Never, decode
from .errors import ProviderError
from .providers import oracle_truth_accuracy


def speedup(budget: int, steps_used: int) -> float:
    """Step-count speedup T / steps_used, >= 1 for any legal decode."""
    if budget < 1:
        raise ValueError(f"budget must be >= 1, got {budget}")
    if not 1 <= steps_used <= budget:
        raise ValueError(f"steps_used must be in [1, {budget}], got {steps_used}")
    return budget / steps_used


def qps(speedup_value: float, score: float, baseline_score: float, gamma: float = 4.0) -> float:
    """Quality-preserving speedup: speedup discounted by the quality ratio
    raised to gamma."""
    if not speedup_value > 0:
        raise ValueError(f"speedup must be > 0, got {speedup_value}")
    if not baseline_score > 0:
        raise ValueError(f"baseline score must be > 0, got {baseline_score}")
    if score < 0:
        raise ValueError(f"score must be >= 0, got {score}")
    if gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    return speedup_value * (score / baseline_score) ** gamma


@dataclass(frozen=True)
class RunRecord:
    sample_id: str
    seed: int
    score: Optional[float]
    steps_used: int
    budget: int
    speedup: float
    exit_step: Optional[int]
    variant: str
    config: str  # pairing fingerprint (config minus stop policy)

    def to_json_line(self) -> str:
        return json.dumps(
            {
                "sample": self.sample_id,
                "seed": self.seed,
                "score": self.score,
                "steps_used": self.steps_used,
                "budget": self.budget,
                "speedup": self.speedup,
                "exit_step": self.exit_step,
                "variant": self.variant,
                "config": self.config,
            },
            sort_keys=True,
            separators=(",", ":"),
            allow_nan=False,
        )


@dataclass(frozen=True)
class FailureRecord:
    sample_id: str
    seed: int
    error: str
    variant: str
    config: str

    def to_json_line(self) -> str:
        return json.dumps(
            {
                "sample": self.sample_id,
                "seed": self.seed,
                "error": self.error,
                "variant": self.variant,
                "config": self.config,
            },
            sort_keys=True,
            separators=(",", ":"),
            allow_nan=False,
        )


@dataclass(frozen=True)
class EntropyCurve:
    """Per-step mean and population std of the recorded mean entropies,
    over the runs still alive at that step."""

    steps: tuple[int, ...]
    means: tuple[float, ...]
    stds: tuple[float, ...]
    counts: tuple[int, ...]


@dataclass(frozen=True)
class Summary:
    variant: str
    n_records: int
    n_failures: int
    mean_score: Optional[float]
    mean_speedup: float
    baseline_score: Optional[float]
    qps: Optional[float]
    gamma: float
    failures: tuple[FailureRecord, ...] = ()
    entropy: Optional[EntropyCurve] = None


def entropy_curves(results: Iterable[DecodeResult]) -> EntropyCurve:
    """Aggregate recorded per-step mean entropies across runs. Steps past
    a run's exit simply contribute nothing (its trajectory ends there)."""
    per_step: dict[int, list[float]] = {}
    for r in results:
        for tr in r.trajectory:
            if tr.entropy is not None:
                per_step.setdefault(tr.step, []).append(tr.entropy)
    if not per_step:
        raise ValueError("no entropies recorded; decode with record_entropy=True "
                         "and a provider that reports entropy")
    steps = sorted(per_step)
    means = tuple(float(np.mean(per_step[s])) for s in steps)
    stds = tuple(float(np.std(per_step[s])) for s in steps)  # population std
    counts = tuple(len(per_step[s]) for s in steps)
    return EntropyCurve(tuple(steps), means, stds, counts)


def decode_tasks(
    config: RunConfig,
    samples: Sequence[Sample],
    *,
    workers: int = 1,
    on_result: Optional[Callable[[Sample, int, DecodeResult], None]] = None,
) -> tuple[list[RunRecord], list[FailureRecord], list[DecodeResult]]:
    """Decode every (sample, seed) pair and collect records.

    Output is sorted by (sample_id, seed) and identical for any worker
    count; tasks are pure in (sample, seed). Shared providers that are
    not concurrent-safe (the wire client) force serial execution.
    """
    fingerprint = config.fingerprint()
    variant = stop_label(config.stop)
    shared = build_shared_provider(config.provider)
    if shared is not None and not getattr(shared, "concurrent_safe", False):
        workers = 1
    keep_results = config.record_entropy or on_result is not None

    tasks = [(sample, seed) for sample in samples for seed in config.seeds]

    def one(task: tuple[Sample, int]):
        sample, seed = task
        provider = shared if shared is not None else build_provider(config.provider, sample, seed)
        result = decode(
            provider,
            sample.prompt,
            config.gen_len,
            config.budget,
            transfer=config.transfer,
            stop=config.stop,
            commit_mode=config.commit,
            seed=seed,
            record_entropy=config.record_entropy,
        )
        score = oracle_truth_accuracy(result, sample.truth) if sample.truth is not None else None
        record = RunRecord(
            sample_id=sample.id,
            seed=seed,
            score=score,
            steps_used=result.steps_used,
            budget=config.budget,
            speedup=speedup(config.budget, result.steps_used),
            exit_step=result.exit_step,
            variant=variant,
            config=fingerprint,
        )
        return record, result

    records: list[RunRecord] = []
    failures: list[FailureRecord] = []
    results: list[DecodeResult] = []

    def run_one(task):
        try:
            return task, one(task), None
        except ProviderError as e:
            return task, None, e

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(run_one, tasks))
    else:
        outcomes = [run_one(t) for t in tasks]

    order = sorted(range(len(tasks)), key=lambda idx: (tasks[idx][0].id, tasks[idx][1]))
    for idx in order:
        (sample, seed), ok, err = outcomes[idx]
        if err is not None:
            failures.append(FailureRecord(sample.id, seed, str(err), variant, fingerprint))
            continue
        record, result = ok
        records.append(record)
        if keep_results:
            results.append(result)
            if on_result is not None:
                on_result(sample, seed, result)

    if shared is not None and hasattr(shared, "close"):
        shared.close()
    return records, failures, results


def run_benchmark(
    config: RunConfig,
    samples: Sequence[Sample],
    *,
    workers: int = 1,
    baseline: Optional[Summary] = None,
) -> tuple[list[RunRecord], Summary]:
    """One record per (sample, seed), plus a macro summary.

    The QPS in the summary compares this run's mean score against the
    paired stop=Never baseline: passed in via `baseline` (one baseline
    shared across a sweep), computed on the fly when omitted, or this
    run itself when its stop policy already is Never.
    """
    if isinstance(config.stop, Never):
        records, failures, results = decode_tasks(config, samples, workers=workers)
        summary = _summarize(config, records, failures, results, baseline_score=None)
        return records, summary

    if baseline is None:
        base_cfg = _with_stop_never(config)
        _, baseline = run_benchmark(base_cfg, samples, workers=workers)
    records, failures, results = decode_tasks(config, samples, workers=workers)
    summary = _summarize(config, records, failures, results, baseline_score=baseline.mean_score)
    return records, summary


def _with_stop_never(config: RunConfig) -> RunConfig:
    from dataclasses import replace

    return replace(config, stop=Never())


def _summarize(
    config: RunConfig,
    records: list[RunRecord],
    failures: list[FailureRecord],
    results: list[DecodeResult],
    baseline_score: Optional[float],
) -> Summary:
    if not records:
        raise ProviderError(f"no successful decodes ({len(failures)} failures)"
                            + (f"; first: {failures[0].error}" if failures else ""))
    scores = [r.score for r in records if r.score is not None]
    mean_score = float(np.mean(scores)) if len(scores) == len(records) else None
    mean_speedup = float(np.mean([r.speedup for r in records]))
    if isinstance(config.stop, Never):
        baseline_score = mean_score
    value = None
    if mean_score is not None and baseline_score is not None and baseline_score > 0:
        value = qps(mean_speedup, mean_score, baseline_score, config.gamma)
    curve = entropy_curves(results) if config.record_entropy and results else None
    return Summary(
        variant=stop_label(config.stop),
        n_records=len(records),
        n_failures=len(failures),
        mean_score=mean_score,
        mean_speedup=mean_speedup,
        baseline_score=baseline_score,
        qps=value,
        gamma=config.gamma,
        failures=tuple(failures),
        entropy=curve,
    )


# ------------------------------------------------------------------- writers

def write_records_jsonl(path: str, records: Iterable[RunRecord], failures: Iterable[FailureRecord] = ()) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(rec.to_json_line() + "\n")
        for f in failures:
            fh.write(f.to_json_line() + "\n")


def _csv_line(cells: Sequence[str]) -> str:
    # variant labels contain commas, so cells need real CSV quoting
    buf = io.StringIO()
    csv.writer(buf, lineterminator="").writerow(cells)
    return buf.getvalue()


def summary_csv_rows(summaries: Sequence[Summary], stops: dict[str, object]) -> list[str]:
    """CSV lines (header first) for a sweep; floats use repr so reruns are
    byte-identical."""
    gamma = summaries[0].gamma if summaries else 4.0
    rows = [_csv_line(["variant", "tau_high", "tau_low", "k",
                       "mean_score", "mean_speedup", f"qps_gamma{gamma:g}"])]
    for s in summaries:
        stop = stops.get(s.variant)
        tau_high = tau_low = k = ""
        sched = getattr(stop, "schedule", None)
        if sched is not None:
            tau_high, tau_low = repr(sched.tau_high), repr(sched.tau_low)
            k = repr(sched.k) if sched.k is not None else ""
        cells = [
            s.variant,
            tau_high,
            tau_low,
            k,
            "" if s.mean_score is None else repr(s.mean_score),
            repr(s.mean_speedup),
            "" if s.qps is None else repr(s.qps),
        ]
        rows.append(_csv_line(cells))
    return rows


def write_summary_csv(path: str, summaries: Sequence[Summary], stops: dict[str, object]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(summary_csv_rows(summaries, stops)) + "\n")


def write_entropy_csv(path: str, curve: EntropyCurve) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step,mean,std\n")
        for s, m, sd in zip(curve.steps, curve.means, curve.stds):
            fh.write(f"{s},{m!r},{sd!r}\n")


def write_meta_json(path: str, config: RunConfig, variants: Sequence[str]) -> None:
    meta = {
        "config_fingerprint": config.fingerprint(),
        "speedup_definition": "step-ratio",
        "score_averaging": "macro",
        "gamma": config.gamma,
        "variants": list(variants),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
