"""Run configuration: presets, provider specs, config files, sweep grids.

Config files are JSON or TOML with the same keys; dicts here mirror the
file schema one-to-one, and the same dicts feed the config fingerprint.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .confidence import Aggregator
from .diffusion import (
    BlockDiffusion,
    FixedCount,
    FullSuffix,
    LowConfidenceTopK,
    TransferPolicy,
    Vocabulary,
)
from .engine import Argmax, CommitMode, HardThreshold, Never, Sample, ScheduledStop, StopPolicy
from .errors import ConfigError
from .providers import Growth, NgramProvider, OracleConfig, OracleProvider, WireProvider
from .schedules import Family, ThresholdSchedule

try:
    import tomllib  # py311+
except ModuleNotFoundError:  # pragma: no cover - py310 path
    import tomli as tomllib


@dataclass(frozen=True)
class Preset:
    """Benchmark decode shape: step budget, generation length, block size,
    and few-shot count (metadata only)."""

    budget: int
    gen_len: int
    block_size: Optional[int]
    shots: Optional[int]


_MCQ = Preset(budget=5, gen_len=5, block_size=5, shots=5)

PRESETS: dict[str, Preset] = {
    "mcq": _MCQ,
    "mmlu": _MCQ,
    "hellaswag": _MCQ,
    "piqa": _MCQ,
    "winogrande": _MCQ,
    "gpqa": Preset(budget=128, gen_len=128, block_size=32, shots=8),
    "gsm8k": Preset(budget=256, gen_len=256, block_size=32, shots=8),
    "wmt14_enfr": Preset(budget=256, gen_len=256, block_size=32, shots=5),
    "wmt16_ende": Preset(budget=256, gen_len=256, block_size=32, shots=5),
    "multinews": Preset(budget=512, gen_len=512, block_size=32, shots=0),
    "hotpotqa": Preset(budget=32, gen_len=32, block_size=32, shots=0),
}


@dataclass(frozen=True)
class Sample:
    id: str
    prompt: tuple[int, ...]
    truth: Optional[tuple[int, ...]] = None


@dataclass(frozen=True)
class ProviderSpec:
    kind: str  # oracle | ngram | wire
    options: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in ("oracle", "ngram", "wire"):
            raise ConfigError(f"unknown provider kind {self.kind!r}")


@dataclass(frozen=True)
class RunConfig:
    budget: int
    gen_len: int
    provider: ProviderSpec
    transfer: TransferPolicy
    stop: StopPolicy
    commit: CommitMode
    seeds: tuple[int, ...]
    aggregator: Aggregator = Aggregator.mean()
    block_size: Optional[int] = None
    shots: Optional[int] = None
    gamma: float = 4.0
    record_entropy: bool = False

    def fingerprint(self) -> str:
        """Hash of everything except the stop policy, so a run and its
        stop=Never baseline pair up under the same fingerprint."""
        payload = {
            "budget": self.budget,
            "gen_len": self.gen_len,
            "provider": {"kind": self.provider.kind, "options": self.provider.options},
            "transfer": transfer_to_dict(self.transfer),
            "commit": commit_to_dict(self.commit),
            "seeds": list(self.seeds),
            "aggregator": {"kind": self.aggregator.kind, "q": self.aggregator.q},
            "block_size": self.block_size,
            "gamma": self.gamma,
        }
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


@dataclass(frozen=True)
class SweepGrid:
    tau_high: float = 7.5
    tau_lows: tuple[float, ...] = (0.0, 2.5)
    families: tuple[str, ...] = ("linear", "cosine", "exponential")
    exp_k: tuple[float, ...] = (2.0, 16.0)
    include_hard: bool = False
    hard_tau: float = 3.0
    hard_warmup: float = 0.0


@dataclass(frozen=True)
class HarnessConfig:
    run: RunConfig
    samples: dict
    grid: SweepGrid
    workers: int = 1


def stop_label(stop: StopPolicy) -> str:
    if isinstance(stop, Never):
        return "baseline"
    if isinstance(stop, ScheduledStop):
        return stop.schedule.label()
    if isinstance(stop, HardThreshold):
        return f"hard({stop.tau:g},w{stop.warmup_fraction:g})"
    raise ConfigError(f"unknown stop policy {stop!r}")


def build_grid(grid: SweepGrid, aggregator: Aggregator) -> list[tuple[str, StopPolicy]]:
    """Expand a grid spec into labeled stop policies, schedules first."""
    variants: list[tuple[str, StopPolicy]] = []
    for fam in grid.families:
        if fam == "exponential":
            for k in grid.exp_k:
                for lo in grid.tau_lows:
                    sched = ThresholdSchedule.exponential(grid.tau_high, lo, k)
                    variants.append((sched.label(), ScheduledStop(sched, aggregator)))
        else:
            for lo in grid.tau_lows:
                sched = ThresholdSchedule(Family(fam), grid.tau_high, lo)
                variants.append((sched.label(), ScheduledStop(sched, aggregator)))
    if grid.include_hard:
        hard = HardThreshold(grid.hard_tau, grid.hard_warmup)
        variants.append((stop_label(hard), hard))
    return variants


# ---------------------------------------------------------------- dict codecs

def transfer_to_dict(policy: TransferPolicy) -> dict:
    if isinstance(policy, FullSuffix):
        return {"kind": "full_suffix"}
    if isinstance(policy, FixedCount):
        return {"kind": "fixed_count", "per_step": policy.per_step}
    if isinstance(policy, LowConfidenceTopK):
        return {"kind": "low_confidence_topk", "per_step": policy.per_step}
    if isinstance(policy, BlockDiffusion):
        return {"kind": "block", "block_size": policy.block_size, "inner": transfer_to_dict(policy.inner)}
    raise ConfigError(f"unknown transfer policy {policy!r}")


def transfer_from_dict(d: dict) -> TransferPolicy:
    kind = d.get("kind")
    try:
        if kind == "full_suffix":
            return FullSuffix()
        if kind == "fixed_count":
            return FixedCount(d.get("per_step"))
        if kind == "low_confidence_topk":
            return LowConfidenceTopK(d.get("per_step"))
        if kind == "block":
            inner = transfer_from_dict(d["inner"]) if "inner" in d else LowConfidenceTopK()
            if isinstance(inner, BlockDiffusion):
                raise ConfigError("block policies do not nest")
            return BlockDiffusion(d["block_size"], inner)
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"bad transfer spec {d!r}: {e}") from e
    raise ConfigError(f"unknown transfer kind {kind!r}")


def stop_to_dict(stop: StopPolicy) -> dict:
    if isinstance(stop, Never):
        return {"kind": "never"}
    if isinstance(stop, ScheduledStop):
        s = stop.schedule
        out = {"kind": "sched", "family": s.family.value, "tau_high": s.tau_high, "tau_low": s.tau_low}
        if s.k is not None:
            out["k"] = s.k
        return out
    if isinstance(stop, HardThreshold):
        return {"kind": "hard", "tau": stop.tau, "warmup_fraction": stop.warmup_fraction}
    raise ConfigError(f"unknown stop policy {stop!r}")


def stop_from_dict(d: dict, aggregator: Aggregator) -> StopPolicy:
    kind = d.get("kind")
    try:
        if kind == "never":
            return Never()
        if kind == "sched":
            sched = ThresholdSchedule(
                Family(d["family"]), float(d["tau_high"]), float(d["tau_low"]),
                float(d["k"]) if "k" in d else None,
            )
            return ScheduledStop(sched, aggregator)
        if kind == "hard":
            return HardThreshold(float(d.get("tau", 3.0)), float(d.get("warmup_fraction", 0.0)))
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"bad stop spec {d!r}: {e}") from e
    raise ConfigError(f"unknown stop kind {kind!r}")


def commit_to_dict(mode: CommitMode) -> dict:
    if isinstance(mode, Argmax):
        return {"kind": "argmax"}
    if isinstance(mode, Sample):
        return {"kind": "sample", "temperature": mode.temperature}
    raise ConfigError(f"unknown commit mode {mode!r}")


def commit_from_dict(d: dict) -> CommitMode:
    kind = d.get("kind")
    try:
        if kind == "argmax":
            return Argmax()
        if kind == "sample":
            return Sample(float(d.get("temperature", 1.0)))
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad commit spec {d!r}: {e}") from e
    raise ConfigError(f"unknown commit kind {kind!r}")


def aggregator_from_dict(d: dict) -> Aggregator:
    kind = d.get("kind", "mean")
    if kind == "mean":
        return Aggregator.mean()
    if kind == "min":
        return Aggregator.minimum()
    if kind == "quantile":
        q = d.get("q")
        if q is None or not 0.0 < float(q) < 1.0:
            raise ConfigError(f"quantile aggregator needs q in (0, 1), got {q!r}")
        return Aggregator.quantile(float(q))
    raise ConfigError(f"unknown aggregator kind {kind!r}")


# -------------------------------------------------------------- file handling

def load_config_file(path: str) -> dict:
    try:
        if path.endswith(".toml"):
            with open(path, "rb") as fh:
                return tomllib.load(fh)
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as e:
        raise ConfigError(f"cannot parse config {path}: {e}") from e


def harness_config_from_dict(d: dict) -> HarnessConfig:
    if not isinstance(d, dict):
        raise ConfigError("config root must be a table/object")
    preset = None
    if "preset" in d:
        name = d["preset"]
        preset = PRESETS.get(name)
        if preset is None:
            raise ConfigError(f"unknown preset {name!r}; known: {', '.join(sorted(PRESETS))}")
    try:
        budget = int(d.get("budget", preset.budget if preset else 0))
        gen_len = int(d.get("gen_len", preset.gen_len if preset else 0))
    except (TypeError, ValueError) as e:
        raise ConfigError(f"budget/gen_len invalid: {e}") from e
    if budget < 1 or gen_len < 1:
        raise ConfigError("config needs a preset or explicit budget >= 1 and gen_len >= 1")
    block_size = d.get("block_size", preset.block_size if preset else None)
    shots = d.get("shots", preset.shots if preset else None)

    if "provider" not in d:
        raise ConfigError("config is missing the provider table")
    prov = d["provider"]
    if not isinstance(prov, dict) or "kind" not in prov:
        raise ConfigError(f"provider spec must be a table with a kind, got {prov!r}")
    spec = ProviderSpec(prov["kind"], {k: v for k, v in prov.items() if k != "kind"})

    aggregator = aggregator_from_dict(d.get("aggregator", {"kind": "mean"}))
    if "transfer" in d:
        transfer = transfer_from_dict(d["transfer"])
    elif block_size is not None:
        transfer = BlockDiffusion(int(block_size), LowConfidenceTopK())
    else:
        transfer = LowConfidenceTopK()
    stop = stop_from_dict(d.get("stop", {"kind": "never"}), aggregator)
    commit = commit_from_dict(d.get("commit", {"kind": "argmax"}))

    seeds = d.get("seeds", [0])
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
        raise ConfigError(f"seeds must be a non-empty list of integers, got {seeds!r}")

    grid_d = d.get("grid", {})
    if not isinstance(grid_d, dict):
        raise ConfigError("grid must be a table/object")
    try:
        grid = SweepGrid(
            tau_high=float(grid_d.get("tau_high", 7.5)),
            tau_lows=tuple(float(x) for x in grid_d.get("tau_lows", (0.0, 2.5))),
            families=tuple(grid_d.get("families", ("linear", "cosine", "exponential"))),
            exp_k=tuple(float(x) for x in grid_d.get("exp_k", (2.0, 16.0))),
            include_hard=bool(grid_d.get("include_hard", False)),
            hard_tau=float(grid_d.get("hard_tau", 3.0)),
            hard_warmup=float(grid_d.get("hard_warmup", 0.0)),
        )
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad grid spec: {e}") from e
    for fam in grid.families:
        if fam not in ("linear", "cosine", "exponential"):
            raise ConfigError(f"unknown schedule family {fam!r} in grid")

    samples = d.get("samples", {"kind": "synthetic", "count": 8, "seed": 0, "prompt_len": 0})
    if not isinstance(samples, dict) or samples.get("kind") not in ("synthetic", "jsonl"):
        raise ConfigError(f"samples spec must have kind synthetic or jsonl, got {samples!r}")

    workers = d.get("workers", 1)
    if not isinstance(workers, int) or workers < 1:
        raise ConfigError(f"workers must be a positive integer, got {workers!r}")

    run = RunConfig(
        budget=budget,
        gen_len=gen_len,
        provider=spec,
        transfer=transfer,
        stop=stop,
        commit=commit,
        seeds=tuple(seeds),
        aggregator=aggregator,
        block_size=block_size if block_size is None else int(block_size),
        shots=shots if shots is None else int(shots),
        gamma=float(d.get("gamma", 4.0)),
        record_entropy=bool(d.get("record_entropy", False)),
    )
    return HarnessConfig(run=run, samples=samples, grid=grid, workers=workers)


# ------------------------------------------------------------------- samples

def synthetic_samples(count: int, gen_len: int, vocab_size: int, seed: int, prompt_len: int = 0) -> list[Sample]:
    """Random truth/prompt sequences; sample i depends only on (seed, i)."""
    if count < 1:
        raise ConfigError(f"sample count must be >= 1, got {count}")
    out = []
    for i in range(count):
        rng = np.random.default_rng([seed, i])
        truth = tuple(int(x) for x in rng.integers(0, vocab_size, size=gen_len))
        prompt = tuple(int(x) for x in rng.integers(0, vocab_size, size=prompt_len))
        out.append(Sample(id=f"s{i:04d}", prompt=prompt, truth=truth))
    return out


def samples_from_jsonl(path: str) -> list[Sample]:
    out = []
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for n, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                obj = json.loads(line)
                out.append(
                    Sample(
                        id=str(obj.get("id", f"s{n:04d}")),
                        prompt=tuple(int(x) for x in obj.get("prompt", [])),
                        truth=tuple(int(x) for x in obj["truth"]) if obj.get("truth") is not None else None,
                    )
                )
    except OSError as e:
        raise ConfigError(f"cannot read samples {path}: {e}") from e
    except (json.JSONDecodeError, TypeError, ValueError, KeyError) as e:
        raise ConfigError(f"bad sample line in {path}: {e}") from e
    if not out:
        raise ConfigError(f"no samples in {path}")
    return out


def materialize_samples(cfg: HarnessConfig) -> list[Sample]:
    spec = cfg.samples
    if spec["kind"] == "jsonl":
        if "path" not in spec:
            raise ConfigError("jsonl samples need a path")
        return samples_from_jsonl(spec["path"])
    vocab_size = int(cfg.run.provider.options.get("vocab_size", 32))
    return synthetic_samples(
        count=int(spec.get("count", 8)),
        gen_len=cfg.run.gen_len,
        vocab_size=vocab_size,
        seed=int(spec.get("seed", 0)),
        prompt_len=int(spec.get("prompt_len", 0)),
    )


# ------------------------------------------------------------------ providers

def build_provider(spec: ProviderSpec, sample: Optional[Sample], seed: int):
    """Construct the provider for one decode task. Oracle providers are
    per-sample (they need the truth); ngram and wire come from
    build_shared_provider instead."""
    if spec.kind == "oracle":
        if sample is None or sample.truth is None:
            raise ConfigError("oracle provider needs samples with truth sequences")
        opt = dict(spec.options)
        vocab_size = int(opt.pop("vocab_size", 32))
        growth = Growth(opt.pop("growth", Growth.UNMASKED_FRACTION.value))
        try:
            cfg = OracleConfig(
                truth=sample.truth,
                vocab=Vocabulary(vocab_size, vocab_size),
                growth=growth,
                **{k: float(v) for k, v in opt.items()},
            )
        except (TypeError, ValueError) as e:
            raise ConfigError(f"bad oracle options {spec.options!r}: {e}") from e
        return OracleProvider(cfg, seed=seed)
    raise ConfigError(f"provider kind {spec.kind!r} is shared; use build_shared_provider")


def build_shared_provider(spec: ProviderSpec):
    """One instance reused across samples (ngram, wire); None for oracle."""
    if spec.kind == "oracle":
        return None
    if spec.kind == "ngram":
        try:
            return NgramProvider(str(spec.options["corpus"]), int(spec.options.get("order", 2)))
        except KeyError:
            raise ConfigError("ngram provider needs a corpus") from None
        except (TypeError, ValueError) as e:
            raise ConfigError(f"bad ngram options {spec.options!r}: {e}") from e
    if spec.kind == "wire":
        if "cmd" in spec.options:
            cmd = spec.options["cmd"]
            if not isinstance(cmd, list) or not all(isinstance(c, str) for c in cmd):
                raise ConfigError(f"wire cmd must be a list of strings, got {cmd!r}")
            return WireProvider.spawn(cmd)
        if "host" in spec.options and "port" in spec.options:
            return WireProvider.connect(str(spec.options["host"]), int(spec.options["port"]))
        raise ConfigError("wire provider needs cmd or host+port")
    raise ConfigError(f"unknown provider kind {spec.kind!r}")
