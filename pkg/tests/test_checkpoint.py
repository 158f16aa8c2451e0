import json
import zipfile

import numpy as np
import pytest
import torch

from conftest import tiny_model_config
from hievent.checkpoint import (
    CheckpointError,
    check_vocab,
    load_checkpoint,
    read_manifest,
    save_checkpoint,
    vocab_hashes,
)
from hievent.corpus import Vocab
from hievent.model import HierarchicalEventModel
from hievent.synthetic import SyntheticConfig, generate_synthetic_corpus


@pytest.fixture(scope="module")
def world():
    syn = generate_synthetic_corpus(
        SyntheticConfig(n_scenarios=2, frames_per_scenario=3, n_docs=20, events_per_doc=5),
        np.random.default_rng(1),
    )
    mcfg = tiny_model_config()
    model = HierarchicalEventModel(mcfg, syn.vocab.lex_size, syn.vocab.frame_size, seed=4)
    return syn, model


def test_round_trip_parameters_bitwise(world, tmp_path):
    syn, model = world
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path, syn.vocab, step=17)
    loaded, manifest = load_checkpoint(path)
    assert manifest["step"] == 17
    assert manifest["format_version"] == 1
    orig = dict(model.named_parameters())
    for name, param in loaded.named_parameters():
        assert torch.equal(param, orig[name]), name


def test_manifest_carries_config_and_hashes(world, tmp_path):
    syn, model = world
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path, syn.vocab)
    manifest = read_manifest(path)
    assert manifest["config"]["hidden_dim"] == model.cfg.hidden_dim
    assert manifest["vocab_hashes"] == vocab_hashes(syn.vocab)
    check_vocab(manifest, syn.vocab)  # no raise


def test_vocab_hash_mismatch_detected(world, tmp_path):
    syn, model = world
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path, syn.vocab)
    other = Vocab(["different"], list(syn.graph.names))
    with pytest.raises(CheckpointError, match="vocab"):
        check_vocab(read_manifest(path), other)


def test_parameters_stored_as_little_endian_float32(world, tmp_path):
    syn, model = world
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path, syn.vocab)
    import io

    with zipfile.ZipFile(path) as zf:
        name = next(n for n in zf.namelist() if n.startswith("params/"))
        arr = np.load(io.BytesIO(zf.read(name)))
    assert arr.dtype == np.dtype("<f4")


def test_shape_mismatch_names_parameter(world, tmp_path):
    syn, model = world
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path, syn.vocab)
    # Tamper: shrink the stored hidden size so rebuilt shapes disagree.
    tampered = tmp_path / "bad.ckpt"
    with zipfile.ZipFile(path) as src, zipfile.ZipFile(tampered, "w") as dst:
        for name in src.namelist():
            data = src.read(name)
            if name == "manifest.json":
                manifest = json.loads(data)
                manifest["config"]["hidden_dim"] = model.cfg.hidden_dim * 2
                data = json.dumps(manifest).encode()
            dst.writestr(name, data)
    with pytest.raises(CheckpointError, match="shape mismatch for"):
        load_checkpoint(tampered)


def test_missing_parameter_detected(world, tmp_path):
    syn, model = world
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path, syn.vocab)
    tampered = tmp_path / "missing.ckpt"
    victim = next(f"params/{n}.npy" for n, _ in model.named_parameters())
    with zipfile.ZipFile(path) as src, zipfile.ZipFile(tampered, "w") as dst:
        for name in src.namelist():
            if name != victim:
                dst.writestr(name, src.read(name))
    with pytest.raises(CheckpointError, match="missing"):
        load_checkpoint(tampered)


def test_unknown_format_version_rejected(world, tmp_path):
    syn, model = world
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path, syn.vocab)
    tampered = tmp_path / "vers.ckpt"
    with zipfile.ZipFile(path) as src, zipfile.ZipFile(tampered, "w") as dst:
        for name in src.namelist():
            data = src.read(name)
            if name == "manifest.json":
                manifest = json.loads(data)
                manifest["format_version"] = 99
                data = json.dumps(manifest).encode()
            dst.writestr(name, data)
    with pytest.raises(CheckpointError, match="format"):
        load_checkpoint(tampered)


def test_shared_embedding_checkpoint_round_trip(tmp_path):
    syn = generate_synthetic_corpus(
        SyntheticConfig(n_scenarios=2, frames_per_scenario=3, n_docs=10, events_per_doc=5),
        np.random.default_rng(2),
    )
    mcfg = tiny_model_config(share_frame_emb=True, share_encdec=True)
    model = HierarchicalEventModel(mcfg, syn.vocab.lex_size, syn.vocab.frame_size, seed=8)
    path = tmp_path / "shared.ckpt"
    save_checkpoint(model, path, syn.vocab)
    loaded, _ = load_checkpoint(path)
    assert loaded.comp_layer.frame_emb is loaded.base_layer.frame_emb
    assert torch.equal(loaded.base_layer.frame_emb.weight, model.base_layer.frame_emb.weight)
