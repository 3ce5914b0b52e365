import numpy as np
import pytest

from boxner.corpus import Document
from boxner.encoder import Vocabulary
from boxner.model import (CheckpointError, CheckpointVersionError, ModelConfig,
                          encode_sentence, init_model, load_model, save_model)
from boxner.proposal import ProposalConfig


def _state(seed=0, **cfg_kw):
    docs = [Document("s0", ["a", "b", "c"])]
    vocab = Vocabulary.from_documents(docs)
    cfg = ModelConfig(L=10, d_emb=4, d_hidden=3, **cfg_kw)
    proposal = ProposalConfig(mode="interval", lengths=(1, 3), L=10)
    return init_model(vocab, ["PER", "LOC"], proposal, cfg, seed)


def test_init_deterministic():
    a, b = _state(seed=7), _state(seed=7)
    for name in a.params:
        assert np.array_equal(a.params[name], b.params[name])
    c = _state(seed=8)
    assert not np.array_equal(a.params["fw_W"], c.params["fw_W"])


def test_init_parameter_shapes():
    s = _state()
    assert s.params["emb"].shape == (5, 4)          # pad, unk, a, b, c
    assert s.params["fw_W"].shape == (4 + 3, 12)
    assert s.params["cls_W"].shape == (4 * 3, 3)    # boundary rep, 2 types + bg
    assert s.params["reg_W"].shape == (4 * 3, 2)
    assert s.label_of(1) == "PER"
    assert s.label_of(2) == "LOC"


def test_init_bbc_has_no_regression_head():
    s = _state(regression=False)
    assert "reg_W" not in s.params
    assert "reg_b" not in s.params


def test_save_load_round_trip(tmp_path):
    s = _state(seed=3)
    s.step = 17
    s.opt_m = {"fw_W": np.full_like(s.params["fw_W"], 0.25)}
    s.opt_v = {"fw_W": np.full_like(s.params["fw_W"], 0.5)}
    s.train_config = {"learning_rate": 0.001}
    path = tmp_path / "model.npz"
    save_model(s, path)
    back = load_model(path)
    assert back.config == s.config
    assert back.proposal == s.proposal
    assert back.labels == s.labels
    assert back.vocab.tokens == s.vocab.tokens
    assert back.step == 17
    assert back.train_config == {"learning_rate": 0.001}
    for name in s.params:
        assert np.array_equal(back.params[name], s.params[name])
    assert np.array_equal(back.opt_m["fw_W"], s.opt_m["fw_W"])
    assert np.array_equal(back.opt_v["fw_W"], s.opt_v["fw_W"])


def test_round_trip_preserves_predictions(tmp_path):
    s = _state(seed=5)
    path = tmp_path / "m.npz"
    save_model(s, path)
    back = load_model(path)
    fm1 = encode_sentence(s, ["a", "c", "b"])
    fm2 = encode_sentence(back, ["a", "c", "b"])
    assert np.array_equal(fm1.data, fm2.data)


def test_truncated_file_is_corruption_error(tmp_path):
    s = _state()
    path = tmp_path / "m.npz"
    save_model(s, path)
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) // 2])
    with pytest.raises(CheckpointError):
        load_model(path)


def test_not_a_checkpoint(tmp_path):
    path = tmp_path / "junk.npz"
    np.savez(path, foo=np.zeros(3))
    with pytest.raises(CheckpointError):
        load_model(path)


def test_version_mismatch_is_distinct_error(tmp_path):
    s = _state()
    path = tmp_path / "m.npz"
    save_model(s, path)
    data = dict(np.load(path, allow_pickle=False))
    data["format_version"] = np.array(99)
    np.savez(path, **data)
    with pytest.raises(CheckpointVersionError):
        load_model(path)
    # the version error is a checkpoint error too, but not vice versa
    assert issubclass(CheckpointVersionError, CheckpointError)


def test_save_is_atomic(tmp_path, monkeypatch):
    # a failed save must not leave a partial file at the target path
    s = _state()
    path = tmp_path / "m.npz"
    save_model(s, path)
    before = path.read_bytes()

    def boom(*args, **kwargs):
        raise OSError("disk full")

    monkeypatch.setattr(np, "savez", boom)
    with pytest.raises(OSError):
        save_model(s, path)
    assert path.read_bytes() == before
    leftovers = [p for p in path.parent.iterdir() if p.suffix == ".tmp"]
    assert leftovers == []
