"""Metrics, task fan-out, summaries, writers, and config plumbing."""

import csv
import json
import math

import pytest

from sched_decode.config import (
    PRESETS,
    ProviderSpec,
    RunConfig,
    SweepGrid,
    build_grid,
    harness_config_from_dict,
    load_config_file,
    materialize_samples,
    samples_from_jsonl,
    stop_label,
    synthetic_samples,
)
from sched_decode.confidence import Aggregator
from sched_decode.diffusion import BlockDiffusion, LowConfidenceTopK
from sched_decode.engine import (
    Argmax,
    DecodeResult,
    HardThreshold,
    Never,
    ScheduledStop,
    StepTrace,
)
from sched_decode.errors import ConfigError, ProviderError
from sched_decode.harness import (
    EntropyCurve,
    decode_tasks,
    entropy_curves,
    qps,
    run_benchmark,
    speedup,
    summary_csv_rows,
    write_entropy_csv,
    write_meta_json,
    write_records_jsonl,
    write_summary_csv,
)
from sched_decode.schedules import ThresholdSchedule


def oracle_run(**over):
    base = dict(
        budget=8,
        gen_len=8,
        provider=ProviderSpec("oracle", {"vocab_size": 16}),
        transfer=LowConfidenceTopK(),
        stop=Never(),
        commit=Argmax(),
        seeds=(0, 1),
    )
    base.update(over)
    return RunConfig(**base)


SAMPLES = synthetic_samples(3, 8, 16, seed=0)


class TestMetrics:
    def test_speedup_step_ratio(self):
        assert speedup(64, 16) == 4.0
        assert speedup(5, 5) == 1.0
        with pytest.raises(ValueError):
            speedup(8, 0)
        with pytest.raises(ValueError):
            speedup(8, 9)

    def test_qps_identity_at_baseline_quality(self):
        assert qps(2.5, 60.0, 60.0, 4.0) == 2.5

    def test_qps_reference_points(self):
        # recomputed from published score/speedup pairs; quoted to 2 decimals
        assert qps(2.34, 53.36, 55.31, 4.0) == pytest.approx(2.03, abs=5e-3)
        assert qps(4.48, 57.59, 58.20, 4.0) == pytest.approx(4.30, abs=5e-3)

    def test_gamma_zero_ignores_quality(self):
        assert qps(3.0, 1.0, 100.0, 0.0) == 3.0

    def test_higher_gamma_penalizes_more(self):
        lo = qps(2.0, 50.0, 55.0, 2.0)
        hi = qps(2.0, 50.0, 55.0, 8.0)
        assert hi < lo

    def test_qps_validation(self):
        with pytest.raises(ValueError):
            qps(0.0, 1.0, 1.0)
        with pytest.raises(ValueError):
            qps(1.0, 1.0, 0.0)
        with pytest.raises(ValueError):
            qps(1.0, -1.0, 1.0)
        with pytest.raises(ValueError):
            qps(1.0, 1.0, 1.0, -1.0)


class TestDecodeTasks:
    def test_one_record_per_sample_seed_pair(self):
        records, failures, _ = decode_tasks(oracle_run(), SAMPLES)
        assert len(records) == 6 and not failures
        keys = [(r.sample_id, r.seed) for r in records]
        assert keys == sorted(keys)
        assert all(r.score == 1.0 for r in records)  # noiseless oracle

    def test_worker_count_does_not_change_output(self):
        serial, _, _ = decode_tasks(oracle_run(), SAMPLES, workers=1)
        threaded, _, _ = decode_tasks(oracle_run(), SAMPLES, workers=4)
        assert [r.to_json_line() for r in serial] == [r.to_json_line() for r in threaded]

    def test_failures_become_records(self):
        bad = synthetic_samples(1, 4, 16, seed=5)  # truth length != gen_len
        records, failures, _ = decode_tasks(oracle_run(), SAMPLES[:1] + bad)
        assert len(records) == 2 and len(failures) == 2
        assert all("truth length" in f.error for f in failures)

    def test_all_failing_summary_raises(self):
        bad = synthetic_samples(2, 4, 16, seed=5)
        with pytest.raises(ProviderError, match="no successful decodes"):
            run_benchmark(oracle_run(), bad)


class TestRunBenchmark:
    def test_never_baseline_has_unit_qps(self):
        _, summary = run_benchmark(oracle_run(), SAMPLES)
        assert summary.variant == "baseline"
        assert summary.mean_speedup == 1.0
        assert summary.mean_score == 1.0
        assert summary.qps == 1.0

    def test_scheduled_stop_reuses_baseline(self):
        _, base = run_benchmark(oracle_run(), SAMPLES)
        stop = ScheduledStop(ThresholdSchedule.linear(7.5, 0.0))
        records, summary = run_benchmark(oracle_run(stop=stop), SAMPLES, baseline=base)
        # margins 9(t-1)/8 cross 7.5(1 - t/8) at t=5: speedup 8/5, perfect score
        assert all(r.exit_step == 5 for r in records)
        assert all(r.speedup == 1.6 for r in records)
        assert summary.mean_speedup == pytest.approx(1.6, rel=1e-12)
        assert summary.qps == pytest.approx(1.6, rel=1e-12)
        assert summary.baseline_score == 1.0

    def test_pairing_fingerprint_excludes_stop(self):
        never = oracle_run()
        sched = oracle_run(stop=ScheduledStop(ThresholdSchedule.cosine(7.5, 0.0)))
        hard = oracle_run(stop=HardThreshold(3.0))
        assert never.fingerprint() == sched.fingerprint() == hard.fingerprint()
        assert oracle_run(seeds=(7,)).fingerprint() != never.fingerprint()
        assert oracle_run(gamma=2.0).fingerprint() != never.fingerprint()


class TestEntropyCurves:
    @staticmethod
    def result(entropies):
        traj = tuple(
            StepTrace(step=i + 1, progress=(i + 1) / len(entropies), margin=0.0,
                      threshold=math.inf, masked_remaining=0, entropy=h)
            for i, h in enumerate(entropies)
        )
        return DecodeResult(tokens=(0,), steps_used=len(entropies), exit_step=None,
                            trajectory=traj)

    def test_hand_case(self):
        curve = entropy_curves([self.result([1.0, 5.0]), self.result([3.0])])
        assert curve.steps == (1, 2)
        assert curve.means == (2.0, 5.0)
        assert curve.stds == (1.0, 0.0)  # population std of [1, 3]
        assert curve.counts == (2, 1)

    def test_no_entropy_is_an_error(self):
        with pytest.raises(ValueError, match="no entropies"):
            entropy_curves([self.result([None, None])])

    def test_collected_through_decode_tasks(self):
        cfg = oracle_run(record_entropy=True)
        _, _, results = decode_tasks(cfg, SAMPLES)
        curve = entropy_curves(results)
        assert curve.steps == tuple(range(1, 9))
        assert curve.counts == (6,) * 8
        # ln(16) e^{-3u} with u = (t-1)/8 under one-per-step transfer
        for t, mean in zip(curve.steps, curve.means):
            assert mean == pytest.approx(math.log(16) * math.exp(-3 * (t - 1) / 8), rel=1e-12)
        assert max(curve.stds) == pytest.approx(0.0, abs=1e-15)


class TestGridAndLabels:
    def test_default_grid_is_eight_schedules(self):
        variants = build_grid(SweepGrid(), Aggregator.mean())
        labels = [label for label, _ in variants]
        assert labels == [
            "linear(7.5,0)", "linear(7.5,2.5)",
            "cosine(7.5,0)", "cosine(7.5,2.5)",
            "exp-k2(7.5,0)", "exp-k2(7.5,2.5)",
            "exp-k16(7.5,0)", "exp-k16(7.5,2.5)",
        ]
        assert len(set(labels)) == 8

    def test_hard_variant_appended(self):
        grid = SweepGrid(include_hard=True, hard_tau=3.0, hard_warmup=0.25)
        variants = build_grid(grid, Aggregator.mean())
        assert variants[-1][0] == "hard(3,w0.25)"
        assert isinstance(variants[-1][1], HardThreshold)

    def test_stop_labels(self):
        assert stop_label(Never()) == "baseline"
        sched = ScheduledStop(ThresholdSchedule.exponential(7.5, 0.0, 16.0))
        assert stop_label(sched) == "exp-k16(7.5,0)"
        assert stop_label(HardThreshold(3.0, 0.0)) == "hard(3,w0)"


class TestWriters:
    def test_records_jsonl_round_trip(self, tmp_path):
        records, failures, _ = decode_tasks(oracle_run(), SAMPLES)
        path = tmp_path / "records.jsonl"
        write_records_jsonl(path, records, failures)
        lines = path.read_text().splitlines()
        assert len(lines) == 6
        first = json.loads(lines[0])
        assert first["sample"] == "s0000" and first["seed"] == 0
        assert first["variant"] == "baseline"

    def test_summary_csv_shape(self, tmp_path):
        _, base = run_benchmark(oracle_run(), SAMPLES)
        stop = ScheduledStop(ThresholdSchedule.linear(7.5, 0.0))
        _, lin = run_benchmark(oracle_run(stop=stop), SAMPLES, baseline=base)
        stops = {"baseline": Never(), lin.variant: stop}
        rows = summary_csv_rows([base, lin], stops)
        assert rows[0] == "variant,tau_high,tau_low,k,mean_score,mean_speedup,qps_gamma4"
        assert rows[1].startswith("baseline,,,,")  # no taus on the baseline row
        parsed = next(csv.reader([rows[2]]))  # variant cell itself holds commas
        assert parsed[:4] == ["linear(7.5,0)", "7.5", "0.0", ""]
        path = tmp_path / "summary.csv"
        write_summary_csv(path, [base, lin], stops)
        assert path.read_text() == "\n".join(rows) + "\n"

    def test_entropy_csv(self, tmp_path):
        curve = EntropyCurve(steps=(1, 2), means=(2.0, 0.5), stds=(1.0, 0.0), counts=(2, 2))
        path = tmp_path / "entropy.csv"
        write_entropy_csv(path, curve)
        assert path.read_text() == "step,mean,std\n1,2.0,1.0\n2,0.5,0.0\n"

    def test_meta_json(self, tmp_path):
        cfg = oracle_run()
        path = tmp_path / "meta.json"
        write_meta_json(path, cfg, ["baseline", "linear(7.5,0)"])
        meta = json.loads(path.read_text())
        assert meta["config_fingerprint"] == cfg.fingerprint()
        assert meta["speedup_definition"] == "step-ratio"
        assert meta["score_averaging"] == "macro"
        assert meta["gamma"] == 4.0
        assert meta["variants"] == ["baseline", "linear(7.5,0)"]


class TestPresets:
    def test_pinned_shapes(self):
        assert (PRESETS["mcq"].budget, PRESETS["mcq"].gen_len) == (5, 5)
        assert PRESETS["mcq"].block_size == 5 and PRESETS["mcq"].shots == 5
        assert PRESETS["mmlu"] == PRESETS["hellaswag"] == PRESETS["mcq"]
        assert (PRESETS["gpqa"].budget, PRESETS["gpqa"].block_size, PRESETS["gpqa"].shots) == (128, 32, 8)
        assert (PRESETS["gsm8k"].budget, PRESETS["gsm8k"].gen_len) == (256, 256)
        assert (PRESETS["multinews"].budget, PRESETS["multinews"].shots) == (512, 0)
        assert (PRESETS["hotpotqa"].budget, PRESETS["hotpotqa"].gen_len) == (32, 32)
        assert (PRESETS["wmt14_enfr"].shots, PRESETS["wmt16_ende"].shots) == (5, 5)


class TestConfigFiles:
    JSON_BODY = {
        "preset": "gpqa",
        "provider": {"kind": "oracle", "vocab_size": 16},
        "seeds": [0, 1],
        "samples": {"kind": "synthetic", "count": 2, "seed": 3},
    }

    def test_json_and_toml_agree(self, tmp_path):
        jpath = tmp_path / "run.json"
        jpath.write_text(json.dumps(self.JSON_BODY))
        tpath = tmp_path / "run.toml"
        tpath.write_text(
            'preset = "gpqa"\nseeds = [0, 1]\n'
            '[provider]\nkind = "oracle"\nvocab_size = 16\n'
            '[samples]\nkind = "synthetic"\ncount = 2\nseed = 3\n'
        )
        a = harness_config_from_dict(load_config_file(str(jpath)))
        b = harness_config_from_dict(load_config_file(str(tpath)))
        assert a.run == b.run
        assert a.run.fingerprint() == b.run.fingerprint()
        assert a.run.budget == 128 and a.run.gen_len == 128
        assert a.run.transfer == BlockDiffusion(32, LowConfidenceTopK())
        assert a.run.shots == 8

    def test_explicit_shape_without_preset(self):
        cfg = harness_config_from_dict(
            {"budget": 8, "gen_len": 8, "provider": {"kind": "oracle"}}
        )
        assert cfg.run.transfer == LowConfidenceTopK()
        assert cfg.run.stop == Never()
        assert cfg.run.seeds == (0,)

    def test_config_errors(self):
        with pytest.raises(ConfigError, match="unknown preset"):
            harness_config_from_dict({"preset": "nope", "provider": {"kind": "oracle"}})
        with pytest.raises(ConfigError, match="provider"):
            harness_config_from_dict({"budget": 4, "gen_len": 4})
        with pytest.raises(ConfigError, match="budget"):
            harness_config_from_dict({"provider": {"kind": "oracle"}})
        with pytest.raises(ConfigError, match="seeds"):
            harness_config_from_dict(
                {"budget": 4, "gen_len": 4, "provider": {"kind": "oracle"}, "seeds": []}
            )
        with pytest.raises(ConfigError, match="workers"):
            harness_config_from_dict(
                {"budget": 4, "gen_len": 4, "provider": {"kind": "oracle"}, "workers": 0}
            )
        with pytest.raises(ConfigError, match="family"):
            harness_config_from_dict(
                {"budget": 4, "gen_len": 4, "provider": {"kind": "oracle"},
                 "grid": {"families": ["spiral"]}}
            )
        with pytest.raises(ConfigError, match="unknown provider kind"):
            ProviderSpec("transformer")


class TestSamples:
    def test_synthetic_deterministic_per_index(self):
        a = synthetic_samples(3, 8, 16, seed=0)
        b = synthetic_samples(5, 8, 16, seed=0)
        assert a == b[:3]  # sample i depends only on (seed, i)
        assert all(0 <= t < 16 for s in a for t in s.truth)
        assert synthetic_samples(3, 8, 16, seed=1) != a

    def test_jsonl_samples(self, tmp_path):
        path = tmp_path / "samples.jsonl"
        path.write_text(
            '{"id": "x", "prompt": [1, 2], "truth": [3, 4]}\n'
            '{"prompt": [], "truth": null}\n'
            "\n"
        )
        out = samples_from_jsonl(str(path))
        assert len(out) == 2
        assert out[0].id == "x" and out[0].truth == (3, 4)
        assert out[1].id == "s0002" and out[1].truth is None

    def test_jsonl_errors(self, tmp_path):
        empty = tmp_path / "empty.jsonl"
        empty.write_text("")
        with pytest.raises(ConfigError, match="no samples"):
            samples_from_jsonl(str(empty))
        bad = tmp_path / "bad.jsonl"
        bad.write_text("{broken\n")
        with pytest.raises(ConfigError, match="bad sample line"):
            samples_from_jsonl(str(bad))

    def test_materialize_jsonl_needs_path(self):
        cfg = harness_config_from_dict(
            {"budget": 4, "gen_len": 4, "provider": {"kind": "oracle"},
             "samples": {"kind": "jsonl"}}
        )
        with pytest.raises(ConfigError, match="path"):
            materialize_samples(cfg)
