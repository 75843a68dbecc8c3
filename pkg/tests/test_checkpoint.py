"""Checkpoint container: byte-exact round trips, truncation, validation."""

import json

import numpy as np
import pytest

from stylebank import Tensor
from stylebank.checkpoint import (
    CheckpointError,
    load_model,
    read_entries,
    save_model,
    write_entries,
)
from stylebank.losses import FeatureExtractor, extract
from stylebank.model import StyleBankModel, stylize


@pytest.fixture()
def model():
    return StyleBankModel.create(["a", "b"], c_max=8, seed=3)


def test_save_load_save_byte_identical(tmp_path, model):
    p1, p2 = tmp_path / "m1.sbnk", tmp_path / "m2.sbnk"
    save_model(p1, model)
    loaded, _ = load_model(p1)
    save_model(p2, loaded)
    assert p1.read_bytes() == p2.read_bytes()


def test_load_then_stylize_bit_exact(tmp_path, model):
    img = Tensor(np.random.default_rng(0).uniform(0, 1, (1, 3, 16, 16)).astype(np.float32))
    before = stylize(model, img, "a").data
    path = tmp_path / "m.sbnk"
    save_model(path, model)
    loaded, _ = load_model(path)
    after = stylize(loaded, img, "a").data
    assert np.array_equal(before, after)


def test_bank_order_preserved(tmp_path):
    model = StyleBankModel.create(["zeta", "alpha", "mid"], c_max=8, seed=1)
    path = tmp_path / "m.sbnk"
    save_model(path, model)
    loaded, _ = load_model(path)
    assert loaded.style_names() == ["zeta", "alpha", "mid"]


def test_truncated_file_rejected(tmp_path, model):
    path = tmp_path / "m.sbnk"
    save_model(path, model)
    blob = path.read_bytes()
    path.write_bytes(blob[:-4])
    with pytest.raises(CheckpointError, match="truncated"):
        load_model(path)


def test_bad_magic_rejected(tmp_path, model):
    path = tmp_path / "m.sbnk"
    save_model(path, model)
    blob = path.read_bytes()
    path.write_bytes(b"XXXX" + blob[4:])
    with pytest.raises(CheckpointError, match="magic"):
        load_model(path)


def test_unknown_version_rejected(tmp_path, model):
    path = tmp_path / "m.sbnk"
    save_model(path, model)
    blob = bytearray(path.read_bytes())
    blob[4] = 99
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="version"):
        load_model(path)


def test_trailing_garbage_rejected(tmp_path, model):
    path = tmp_path / "m.sbnk"
    save_model(path, model)
    path.write_bytes(path.read_bytes() + b"junk")
    with pytest.raises(CheckpointError, match="trailing"):
        load_model(path)


def test_cmax_mismatch_vs_meta_rejected(tmp_path, model):
    path = tmp_path / "m.sbnk"
    save_model(path, model)
    entries = read_entries(path)
    patched = []
    for name, payload in entries:
        if name == "meta/config":
            meta = json.loads(payload.decode())
            meta["c_max"] = 16  # kernels on disk are for c_max=8
            payload = json.dumps(meta, sort_keys=True).encode()
        patched.append((name, payload))
    write_entries(path, patched)
    with pytest.raises(CheckpointError, match="channel chain"):
        load_model(path)


def test_bank_shape_mismatch_rejected(tmp_path, model):
    path = tmp_path / "m.sbnk"
    save_model(path, model)
    entries = [
        (name, np.zeros((8, 8, 5, 5), dtype=np.float32) if name == "bank/a/kernel" else payload)
        for name, payload in read_entries(path)
    ]
    write_entries(path, entries)
    with pytest.raises(CheckpointError, match="bank/a"):
        load_model(path)


def test_missing_entry_rejected(tmp_path, model):
    path = tmp_path / "m.sbnk"
    save_model(path, model)
    entries = [e for e in read_entries(path) if e[0] != "decoder/conv1/kernel"]
    write_entries(path, entries)
    with pytest.raises(CheckpointError, match="missing"):
        load_model(path)


def test_extractor_round_trip(tmp_path, model):
    extractor = FeatureExtractor.random(stage_channels=(4, 4, 8, 8))
    path = tmp_path / "m.sbnk"
    save_model(path, model, extractor)
    _, loaded_ext = load_model(path)
    assert loaded_ext is not None
    img = Tensor(np.random.default_rng(1).uniform(0, 1, (1, 3, 16, 16)).astype(np.float32))
    a = extract(extractor, img)
    b = extract(loaded_ext, img)
    for name in a.tap_names():
        assert np.array_equal(a[name].data, b[name].data)


def test_loaded_parameters_are_trainable(tmp_path, model):
    path = tmp_path / "m.sbnk"
    save_model(path, model)
    loaded, _ = load_model(path)
    assert all(p.requires_grad for _, p in loaded.named_parameters())
