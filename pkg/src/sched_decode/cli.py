"""Command line front end.

Subcommands: decode (one sequence), sweep (stop-policy grid -> JSONL
records + summary CSV), qps (recompute quality-preserving speedups from
a CSV, with an optional tolerance check against packaged reference
numbers), entropy (per-step entropy curve CSV), serve-check (handshake
and one probe request against a wire server).

Exit codes: 0 success, 1 config error, 2 provider/transport failure,
3 reference-check mismatch. SCHED_SEED sets the default seed.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import shlex
import sys
from dataclasses import replace
from importlib import resources
from typing import Optional, Sequence

from .config import (
    build_grid,
    harness_config_from_dict,
    load_config_file,
    materialize_samples,
    transfer_from_dict,
)
from .confidence import Aggregator
from .diffusion import AnswerRegion, Canvas, Vocabulary
from .engine import Argmax, HardThreshold, Never, Sample as SampleCommit, ScheduledStop, decode
from .errors import CheckMismatch, ConfigError, ProtocolError, ProviderError, TransportError
from .harness import (
    entropy_curves,
    decode_tasks,
    qps,
    run_benchmark,
    write_entropy_csv,
    write_meta_json,
    write_records_jsonl,
    write_summary_csv,
)
from .providers import NgramProvider, OracleConfig, OracleProvider, Growth, WireProvider
from .schedules import Family, ThresholdSchedule


def _default_seed() -> int:
    raw = os.environ.get("SCHED_SEED", "0")
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"SCHED_SEED must be an integer, got {raw!r}") from None


def _ids(text: str, what: str) -> tuple[int, ...]:
    if not text.strip():
        return ()
    try:
        return tuple(int(x) for x in text.replace(" ", "").split(",") if x != "")
    except ValueError:
        raise ConfigError(f"{what} must be comma-separated integers, got {text!r}") from None


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sched-decode", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    d = sub.add_parser("decode", help="decode one sequence and print the result as JSON")
    d.add_argument("--provider", choices=["oracle", "ngram", "wire"], required=True)
    d.add_argument("--gen-len", type=int, required=True)
    d.add_argument("--budget", type=int, required=True)
    d.add_argument("--prompt", default="", help="comma-separated token ids")
    d.add_argument("--prompt-text", default=None, help="ngram only: prompt as text")
    d.add_argument("--truth", default=None, help="oracle: comma-separated true token ids")
    d.add_argument("--vocab-size", type=int, default=32)
    d.add_argument("--margin-floor", type=float, default=0.0)
    d.add_argument("--margin-ceil", type=float, default=9.0)
    d.add_argument("--growth", choices=[g.value for g in Growth], default=Growth.UNMASKED_FRACTION.value)
    d.add_argument("--noise-sd", type=float, default=0.0)
    d.add_argument("--error-rate", type=float, default=0.0)
    d.add_argument("--stabilization", type=float, default=1.0)
    d.add_argument("--corpus", default=None, help="ngram: training text")
    d.add_argument("--spawn", default=None, help="wire: server command line")
    d.add_argument("--host", default=None)
    d.add_argument("--port", type=int, default=None)
    d.add_argument("--schedule", choices=[f.value for f in Family], default=None)
    d.add_argument("--tau-high", type=float, default=7.5)
    d.add_argument("--tau-low", type=float, default=0.0)
    d.add_argument("--k", type=float, default=None)
    d.add_argument("--hard-tau", type=float, default=None, help="constant-threshold stop instead of a schedule")
    d.add_argument("--warmup", type=float, default=0.0)
    d.add_argument("--agg", choices=["mean", "min", "quantile"], default="mean")
    d.add_argument("--q", type=float, default=None)
    d.add_argument("--transfer", default=None, help='JSON, e.g. {"kind":"block","block_size":4}')
    d.add_argument("--region", default=None, help="comma-separated answer-region indices")
    d.add_argument("--commit", choices=["argmax", "sample"], default="argmax")
    d.add_argument("--temperature", type=float, default=1.0)
    d.add_argument("--seed", type=int, default=None)
    d.add_argument("--entropy", action="store_true", help="record per-step mean entropy")

    s = sub.add_parser("sweep", help="run the stop-policy grid from a config file")
    s.add_argument("--config", required=True)
    s.add_argument("--records", default=None, help="JSONL output path (one line per record)")
    s.add_argument("--summary", default=None, help="summary CSV output path")
    s.add_argument("--meta", default=None, help="run metadata JSON output path")
    s.add_argument("--workers", type=int, default=None, help="override config workers")

    q = sub.add_parser("qps", help="recompute QPS from a CSV of scores and speedups")
    q.add_argument("--csv", default=None, help="input CSV; defaults to the packaged reference table")
    q.add_argument("--gamma", type=float, default=4.0)
    q.add_argument("--check", action="store_true", help="fail (exit 3) if any expected_qps is missed")
    q.add_argument("--tol", type=float, default=0.02)
    q.add_argument("--out", default=None, help="write the recomputed table to this CSV")

    e = sub.add_parser("entropy", help="decode with entropy recording and write the per-step curve")
    e.add_argument("--config", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--workers", type=int, default=None)

    c = sub.add_parser("serve-check", help="handshake with a wire server and probe one request")
    c.add_argument("--spawn", default=None, help="server command line")
    c.add_argument("--host", default=None)
    c.add_argument("--port", type=int, default=None)
    c.add_argument("--gen-len", type=int, default=4)
    c.add_argument("--budget", type=int, default=4)
    c.add_argument("--want-entropy", action="store_true")
    c.add_argument("--want-full", action="store_true")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 1
    try:
        if args.command == "decode":
            return _cmd_decode(args)
        if args.command == "sweep":
            return _cmd_sweep(args)
        if args.command == "qps":
            return _cmd_qps(args)
        if args.command == "entropy":
            return _cmd_entropy(args)
        if args.command == "serve-check":
            return _cmd_serve_check(args)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except ValueError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except (TransportError, ProtocolError, ProviderError) as e:
        print(f"provider error: {e}", file=sys.stderr)
        return 2
    except CheckMismatch as e:
        print(f"check failed: {e}", file=sys.stderr)
        return 3


def _stop_from_args(args) -> object:
    agg = {"mean": Aggregator.mean(), "min": Aggregator.minimum()}.get(args.agg)
    if agg is None:
        if args.q is None:
            raise ConfigError("--agg quantile needs --q")
        agg = Aggregator.quantile(args.q)
    if args.hard_tau is not None:
        return HardThreshold(args.hard_tau, args.warmup)
    if args.schedule is None:
        return Never()
    sched = ThresholdSchedule(Family(args.schedule), args.tau_high, args.tau_low, args.k)
    return ScheduledStop(sched, agg)


def _cmd_decode(args) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    stop = _stop_from_args(args)
    transfer = transfer_from_dict(json.loads(args.transfer)) if args.transfer else None
    commit = Argmax() if args.commit == "argmax" else SampleCommit(args.temperature)
    region = AnswerRegion(_ids(args.region, "--region")) if args.region else None

    provider = None
    prompt: tuple[int, ...]
    ngram: Optional[NgramProvider] = None
    if args.provider == "oracle":
        if args.truth is None:
            raise ConfigError("oracle decode needs --truth")
        truth = _ids(args.truth, "--truth")
        if len(truth) != args.gen_len:
            raise ConfigError(f"--truth length {len(truth)} != --gen-len {args.gen_len}")
        cfg = OracleConfig(
            truth=truth,
            vocab=Vocabulary(args.vocab_size, args.vocab_size),
            margin_floor=args.margin_floor,
            margin_ceil=args.margin_ceil,
            growth=Growth(args.growth),
            noise_sd=args.noise_sd,
            distractor_error_rate=args.error_rate,
            stabilization_fraction=args.stabilization,
        )
        provider = OracleProvider(cfg, seed=seed)
        prompt = _ids(args.prompt, "--prompt")
    elif args.provider == "ngram":
        if args.corpus is None:
            raise ConfigError("ngram decode needs --corpus")
        ngram = NgramProvider(args.corpus)
        provider = ngram
        prompt = ngram.encode(args.prompt_text) if args.prompt_text is not None else _ids(args.prompt, "--prompt")
    else:
        provider = _wire_from_args(args)
        prompt = _ids(args.prompt, "--prompt")

    try:
        result = decode(
            provider, prompt, args.gen_len, args.budget,
            transfer=transfer, stop=stop, region=region, commit_mode=commit,
            seed=seed, record_entropy=args.entropy,
        )
    finally:
        if hasattr(provider, "close"):
            provider.close()
    out = result.to_dict()
    if ngram is not None:
        out["text"] = ngram.decode_text(result.tokens)
    print(json.dumps(out, indent=2))
    return 0


def _wire_from_args(args) -> WireProvider:
    if args.spawn:
        return WireProvider.spawn(shlex.split(args.spawn))
    if args.host and args.port is not None:
        return WireProvider.connect(args.host, args.port)
    raise ConfigError("wire provider needs --spawn or --host/--port")


def _cmd_sweep(args) -> int:
    cfg = harness_config_from_dict(load_config_file(args.config))
    workers = args.workers if args.workers is not None else cfg.workers
    samples = materialize_samples(cfg)

    baseline_cfg = replace(cfg.run, stop=Never())
    base_records, base_summary = run_benchmark(baseline_cfg, samples, workers=workers)
    all_records = list(base_records)
    all_failures = list(base_summary.failures)
    summaries = [base_summary]
    stops: dict[str, object] = {"baseline": Never()}
    for label, stop in build_grid(cfg.grid, cfg.run.aggregator):
        run_cfg = replace(cfg.run, stop=stop)
        records, summary = run_benchmark(run_cfg, samples, workers=workers, baseline=base_summary)
        all_records.extend(records)
        all_failures.extend(summary.failures)
        summaries.append(summary)
        stops[label] = stop

    if args.records:
        write_records_jsonl(args.records, all_records, all_failures)
    if args.summary:
        write_summary_csv(args.summary, summaries, stops)
    if args.meta:
        write_meta_json(args.meta, cfg.run, [s.variant for s in summaries])
    for s in summaries:
        score = "-" if s.mean_score is None else f"{s.mean_score:.4f}"
        value = "-" if s.qps is None else f"{s.qps:.4f}"
        print(f"{s.variant:<22} score={score:<8} speedup={s.mean_speedup:<8.4f} qps={value}"
              + (f"  failures={s.n_failures}" if s.n_failures else ""))
    return 0


def _cmd_qps(args) -> int:
    if args.csv is not None:
        with open(args.csv, "r", encoding="utf-8", newline="") as fh:
            rows = list(csv.DictReader(fh))
        source = args.csv
    else:
        ref = resources.files("sched_decode").joinpath("data/golden_qps.csv")
        with ref.open("r", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        source = "packaged reference table"
    if not rows:
        raise ConfigError(f"no rows in {source}")
    for col in ("score", "speedup", "baseline_score"):
        if col not in rows[0]:
            raise ConfigError(f"{source} is missing column {col!r}")

    out_rows = []
    worst = 0.0
    mismatches = []
    for row in rows:
        try:
            value = qps(float(row["speedup"]), float(row["score"]), float(row["baseline_score"]), args.gamma)
        except (TypeError, ValueError, KeyError) as e:
            raise ConfigError(f"bad row {row!r}: {e}") from e
        entry = dict(row)
        entry["qps"] = f"{value:.6f}"
        entry["delta"] = ""  # keep columns uniform across rows
        if row.get("expected_qps"):
            delta = value - float(row["expected_qps"])
            entry["delta"] = f"{delta:+.6f}"
            worst = max(worst, abs(delta))
            if abs(delta) > args.tol:
                mismatches.append((row.get("variant", "?"), row.get("suite", ""), value, float(row["expected_qps"])))
        out_rows.append(entry)

    fields = list(out_rows[0].keys())
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=fields)
            writer.writeheader()
            writer.writerows(out_rows)
    writer = csv.DictWriter(sys.stdout, fieldnames=fields)
    writer.writeheader()
    writer.writerows(out_rows)
    print(f"# max |qps - expected| = {worst:.6f} (tol {args.tol})", file=sys.stderr)
    if args.check and mismatches:
        lines = "; ".join(f"{s}/{v}: got {g:.4f}, expected {e:.4f}" for v, s, g, e in mismatches)
        raise CheckMismatch(f"{len(mismatches)} rows outside tolerance {args.tol}: {lines}")
    return 0


def _cmd_entropy(args) -> int:
    cfg = harness_config_from_dict(load_config_file(args.config))
    workers = args.workers if args.workers is not None else cfg.workers
    run_cfg = replace(cfg.run, record_entropy=True)
    samples = materialize_samples(cfg)
    records, failures, results = decode_tasks(run_cfg, samples, workers=workers)
    if not results:
        raise ProviderError(f"no successful decodes ({len(failures)} failures)")
    curve = entropy_curves(results)
    write_entropy_csv(args.out, curve)
    print(f"wrote {len(curve.steps)} steps over {len(records)} runs to {args.out}")
    return 0


def _cmd_serve_check(args) -> int:
    provider = _wire_from_args(args)
    try:
        print(f"handshake ok: name={provider.name!r} vocab_size={provider.vocab.size} "
              f"mask_id={provider.vocab.mask_id}")
        canvas = Canvas.initial(provider.vocab, (), args.gen_len, args.budget)
        canvas.step = 1
        bundle = provider.query(canvas, 1, want_full=args.want_full, want_entropy=args.want_entropy)
        entry = bundle[0]
        print(f"probe ok: {len(bundle)} positions; position 0 argmax={entry.argmax} "
              f"margin={entry.margin:.6f}"
              + (f" entropy={entry.entropy:.6f}" if entry.entropy is not None else ""))
        return 0
    finally:
        provider.close()


if __name__ == "__main__":
    sys.exit(main())
