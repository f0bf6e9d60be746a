"""Backend loading and the built-in tiny transformer."""

import pytest
import torch

from sched_bridge.model import (
    TinyMaskedLM,
    load_model,
    parse_tiny_spec,
    save_checkpoint,
)

TINY = "tiny://vocab_size=16,dim=32,layers=2,max_len=48,seed=7"
PROMPT = [1, 2, 3]


def masked_gen(model, n=6):
    return [model.mask_id] * n


class TestSpecParsing:
    def test_bare_spec_uses_defaults(self):
        params = parse_tiny_spec("tiny://")
        assert params == {
            "vocab_size": 64,
            "dim": 64,
            "layers": 2,
            "heads": 4,
            "max_len": 256,
            "seed": 0,
        }

    def test_overrides_merge_with_defaults(self):
        params = parse_tiny_spec("tiny://vocab_size=8,seed=3")
        assert params["vocab_size"] == 8
        assert params["seed"] == 3
        assert params["dim"] == 64

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError, match="bad tiny:// parameter"):
            parse_tiny_spec("tiny://flavor=9")

    def test_missing_equals_rejected(self):
        with pytest.raises(ValueError, match="bad tiny:// parameter"):
            parse_tiny_spec("tiny://dim")

    def test_non_integer_value_rejected(self):
        with pytest.raises(ValueError, match="must be an integer"):
            parse_tiny_spec("tiny://dim=big")


class TestTinyModel:
    def test_same_spec_gives_bitwise_identical_logits(self):
        a = load_model(TINY)
        b = load_model(TINY)
        gen = masked_gen(a)
        assert torch.equal(a.logits(PROMPT, gen), b.logits(PROMPT, gen))

    def test_seed_changes_the_weights(self):
        a = load_model(TINY)
        b = load_model("tiny://vocab_size=16,dim=32,layers=2,max_len=48,seed=8")
        gen = masked_gen(a)
        assert not torch.equal(a.logits(PROMPT, gen), b.logits(PROMPT, gen))

    def test_mask_gets_the_extra_embedding_row(self):
        m = load_model(TINY)
        assert m.vocab_size == 16
        assert m.mask_id == 16
        rows = m.logits(PROMPT, masked_gen(m, 5))
        # scores real tokens only; the mask is never a prediction target
        assert tuple(rows.shape) == (5, 16)

    def test_repeated_forward_is_deterministic(self):
        m = load_model(TINY)
        gen = [m.mask_id, 4, m.mask_id, 9]
        assert torch.equal(m.logits(PROMPT, gen), m.logits(PROMPT, gen))

    def test_committed_neighbors_change_masked_logits(self):
        m = load_model(TINY)
        base = [m.mask_id, 4, m.mask_id]
        swapped = [m.mask_id, 5, m.mask_id]
        assert not torch.equal(m.logits(PROMPT, base), m.logits(PROMPT, swapped))

    def test_default_spec_is_under_ten_million_parameters(self):
        assert load_model("tiny://").num_parameters() < 10_000_000

    def test_sequence_longer_than_max_len_rejected(self):
        m = load_model("tiny://vocab_size=16,max_len=8")
        with pytest.raises(ValueError, match="exceeds max_len"):
            m.logits([0] * 5, [m.mask_id] * 4)

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"vocab_size": 1},
            {"dim": 30, "heads": 4},
            {"layers": 0},
            {"max_len": 0},
        ],
    )
    def test_bad_hyperparameters_rejected(self, kwargs):
        with pytest.raises(ValueError):
            TinyMaskedLM(**kwargs)


class TestCheckpoint:
    def test_roundtrip_preserves_logits(self, tmp_path):
        m = load_model(TINY)
        path = tmp_path / "weights.pt"
        save_checkpoint(m, str(path))
        loaded = load_model(str(path))
        assert loaded.vocab_size == m.vocab_size
        assert loaded.mask_id == m.mask_id
        assert loaded.max_len == m.max_len
        assert loaded.name == "weights.pt"
        gen = masked_gen(m)
        assert torch.equal(loaded.logits(PROMPT, gen), m.logits(PROMPT, gen))

    def test_foreign_torch_file_rejected(self, tmp_path):
        path = tmp_path / "other.pt"
        torch.save({"weights": torch.zeros(3)}, str(path))
        with pytest.raises(ValueError, match="not a sched-bridge checkpoint"):
            load_model(str(path))

    def test_unknown_spec_rejected(self):
        with pytest.raises(ValueError, match="neither tiny"):
            load_model("carrier-pigeon://fast")

    def test_missing_path_rejected(self):
        with pytest.raises(ValueError, match="neither tiny"):
            load_model("/no/such/checkpoint.pt")
