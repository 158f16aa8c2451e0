"""Checkpoint archive: one zip holding a JSON manifest plus per-parameter
float32 little-endian arrays, validated shape-by-name on load."""

from __future__ import annotations

import dataclasses
import hashlib
import io
import json
import zipfile

import numpy as np
import torch

from .corpus import Vocab
from .model import HierarchicalEventModel, ModelConfig

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def vocab_hashes(vocab: Vocab) -> dict[str, str]:
    lex = hashlib.sha256("\n".join(vocab.lex_itos).encode()).hexdigest()
    frames = hashlib.sha256("\n".join(vocab.frame_itos).encode()).hexdigest()
    return {"lexical": lex, "frames": frames}


def save_checkpoint(
    model: HierarchicalEventModel,
    path,
    vocab: Vocab,
    step: int = 0,
    extra: dict | None = None,
) -> None:
    manifest = {
        "format_version": FORMAT_VERSION,
        "step": step,
        "config": dataclasses.asdict(model.cfg),
        "lex_size": model.lex_size,
        "n_frames": model.n_frames,
        "vocab_hashes": vocab_hashes(vocab),
    }
    if extra:
        manifest["extra"] = extra
    with zipfile.ZipFile(path, "w", zipfile.ZIP_DEFLATED) as zf:
        zf.writestr("manifest.json", json.dumps(manifest, indent=1, sort_keys=True))
        for name, param in model.named_parameters():
            arr = param.detach().cpu().numpy().astype("<f4")
            buf = io.BytesIO()
            np.save(buf, arr)
            zf.writestr(f"params/{name}.npy", buf.getvalue())


def read_manifest(path) -> dict:
    with zipfile.ZipFile(path) as zf:
        return json.loads(zf.read("manifest.json"))


def load_checkpoint(path) -> tuple[HierarchicalEventModel, dict]:
    """Rebuild the model from the stored config and load every parameter.

    Shape mismatches raise CheckpointError naming the offending parameter.
    """
    with zipfile.ZipFile(path) as zf:
        manifest = json.loads(zf.read("manifest.json"))
        if manifest.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(
                f"unsupported checkpoint format {manifest.get('format_version')!r}"
            )
        cfg = ModelConfig(**manifest["config"])
        model = HierarchicalEventModel(cfg, manifest["lex_size"], manifest["n_frames"])
        stored = {
            n[len("params/") : -len(".npy")]
            for n in zf.namelist()
            if n.startswith("params/") and n.endswith(".npy")
        }
        expected = dict(model.named_parameters())
        missing = sorted(set(expected) - stored)
        surplus = sorted(stored - set(expected))
        if missing or surplus:
            raise CheckpointError(
                f"parameter name mismatch: missing {missing or 'none'}, surplus {surplus or 'none'}"
            )
        with torch.no_grad():
            for name, param in expected.items():
                arr = np.load(io.BytesIO(zf.read(f"params/{name}.npy")))
                if tuple(arr.shape) != tuple(param.shape):
                    raise CheckpointError(
                        f"shape mismatch for {name}: checkpoint {tuple(arr.shape)} "
                        f"vs model {tuple(param.shape)}"
                    )
                param.copy_(torch.from_numpy(arr.astype(np.float32)))
    model.eval()
    return model, manifest


def check_vocab(manifest: dict, vocab: Vocab) -> None:
    want, got = manifest["vocab_hashes"], vocab_hashes(vocab)
    if want != got:
        raise CheckpointError("vocabulary does not match the checkpoint's vocab hashes")
