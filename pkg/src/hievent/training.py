"""Optimization loop: Adam, gradient accumulation, global-norm clipping,
per-epoch mask redraws, early stopping on validation perplexity."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import evaluation
from .checkpoint import save_checkpoint
from .corpus import NOFRAME, EventSequence, Vocab, apply_observation_mask
from .model import (
    Batch,
    HierarchicalEventModel,
    LossBundle,
    ModelConfig,
    RngStreams,
    compute_losses,
    make_batch,
)
from .ontology import FrameGraph


class NumericalError(RuntimeError):
    """A loss term went non-finite; message names the term."""


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    grad_accumulation: int = 8
    patience: int = 10
    grad_clip_norm: float = 5.0
    max_epochs: int = 100
    seed: int = 0
    contrastive_enabled: bool = False
    contrastive_weight: float = 1.0
    contrastive_temperature: float = 0.1
    predicate_dropout: float = 0.7
    freeze_masks: bool = False
    early_stop_metric: str = "combined"  # combined | base | compression
    log_every: int = 1  # optimizer steps between log rows

    def __post_init__(self):
        if self.early_stop_metric not in ("combined", "base", "compression"):
            raise ValueError("early_stop_metric must be combined, base or compression")


@dataclass
class TrainState:
    epoch: int = 0
    global_step: int = 0
    best_val_ppl: float = math.inf
    epochs_since_best: int = 0

    def record_validation(self, val_ppl: float) -> bool:
        """Update early-stopping state; True when this epoch improved."""
        if val_ppl < self.best_val_ppl:
            self.best_val_ppl = val_ppl
            self.epochs_since_best = 0
            return True
        self.epochs_since_best += 1
        return False

    def should_stop(self, patience: int) -> bool:
        return self.epochs_since_best >= patience


def clip_gradients(grads: list[torch.Tensor], max_norm: float) -> list[torch.Tensor]:
    """Scale all gradients by max_norm/g when the global L2 norm g exceeds it."""
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    total = math.sqrt(sum(float((g.detach() ** 2).sum()) for g in grads))
    if total > max_norm:
        scale = max_norm / total
        for g in grads:
            g.detach().mul_(scale)
    return grads


def _epoch_masks(
    corpus: list[EventSequence], epsilon: float, rng: np.random.Generator
):
    return [apply_observation_mask(seq, epsilon, rng) for seq in corpus]


def _batches(
    corpus: list[EventSequence],
    order: np.ndarray,
    batch_size: int,
) -> list[list[int]]:
    """Index batches with a uniform event count per batch (length bucketing)."""
    buckets: dict[int, list[int]] = {}
    for i in order:
        buckets.setdefault(len(corpus[int(i)]), []).append(int(i))
    out = []
    for length in sorted(buckets):
        idxs = buckets[length]
        out.extend(idxs[lo : lo + batch_size] for lo in range(0, len(idxs), batch_size))
    return out


def _check_finite(bundle: LossBundle) -> None:
    for name, value in bundle.to_floats().items():
        if not math.isfinite(value):
            raise NumericalError(f"loss term {name} is non-finite ({value})")


def _contrastive_term(
    model: HierarchicalEventModel,
    corpus: list[EventSequence],
    idxs: list[int],
    vocab: Vocab,
    graph: FrameGraph,
    streams: RngStreams,
    tcfg: TrainConfig,
) -> torch.Tensor | None:
    """In-batch InfoNCE: positives share a gold frame with the query."""
    rng = streams.contrastive
    events, frames = [], []
    for i in idxs:
        seq = corpus[i]
        k = int(rng.integers(len(seq)))
        events.append(seq.events[k])
        frames.append(seq.gold_frames[k])
    reps = evaluation.representation_batch(
        model, events, vocab, graph, streams,
        predicate_dropout=tcfg.predicate_dropout, dropout_rng=rng,
    )
    losses = []
    n = len(events)
    for q in range(n):
        if frames[q] == NOFRAME:
            continue
        pos = [k for k in range(n) if k != q and frames[k] == frames[q]]
        neg = [k for k in range(n) if k != q and frames[k] != frames[q]]
        if not pos or not neg:
            continue
        losses.append(
            evaluation.contrastive_loss(
                reps[q], reps[pos], reps[neg], tcfg.contrastive_temperature
            )
        )
    if not losses:
        return None
    return torch.stack(losses).mean()


@dataclass
class TrainResult:
    state: TrainState
    log_rows: list[dict] = field(default_factory=list)
    best_checkpoint: Path | None = None


def _validation_metric(report: evaluation.PerplexityReport, metric: str) -> float:
    if metric == "base":
        return report.base
    if metric == "compression":
        if report.compression is None:
            raise ValueError("no compression layer for the early-stop metric")
        return report.compression
    return report.combined


def _format_row(row: dict) -> str:
    parts = []
    for key, value in row.items():
        if isinstance(value, float):
            parts.append(f"{key}={value:.6f}")
        else:
            parts.append(f"{key}={value}")
    return " ".join(parts)


def train(
    model: HierarchicalEventModel,
    train_corpus: list[EventSequence],
    val_corpus: list[EventSequence],
    graph: FrameGraph,
    vocab: Vocab,
    mcfg: ModelConfig,
    tcfg: TrainConfig,
    run_dir: Path | str | None = None,
    quiet: bool = True,
    debug_hook=None,
) -> TrainResult:
    run_dir = Path(run_dir) if run_dir is not None else None
    log_fh = None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        log_fh = open(run_dir / "train_log.txt", "a", encoding="utf-8")
    streams = RngStreams(tcfg.seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=tcfg.learning_rate)
    state = TrainState()
    result = TrainResult(state)
    frozen_masks = None
    nan = float("nan")
    last_means = {k: nan for k in ("L_r1", "L_r2", "L_KL1", "L_KL2", "L_c", "total")}
    val_ppls = {"val_ppl_base": nan, "val_ppl_comp": nan, "val_ppl_total": nan}

    def emit(row: dict) -> None:
        result.log_rows.append(row)
        line = _format_row(row)
        if log_fh is not None:
            log_fh.write(line + "\n")
            log_fh.flush()
        if not quiet:
            print(line)

    try:
        for epoch in range(1, tcfg.max_epochs + 1):
            state.epoch = epoch
            model.train()
            if frozen_masks is not None:
                masks = frozen_masks
            else:
                masks = _epoch_masks(train_corpus, mcfg.epsilon, streams.mask)
                if tcfg.freeze_masks:
                    frozen_masks = masks
            order = streams.shuffle.permutation(len(train_corpus))
            micro_batches = _batches(train_corpus, order, tcfg.batch_size)
            optimizer.zero_grad()
            pending, window = 0, []
            for idxs in micro_batches:
                batch = make_batch(
                    [train_corpus[i] for i in idxs], vocab, masks=[masks[i] for i in idxs]
                )
                out = model(batch, graph, streams, train=True)
                if debug_hook is not None:
                    debug_hook(state, batch, out)
                bundle = compute_losses(batch, out, mcfg)
                _check_finite(bundle)
                loss = bundle.total
                if tcfg.contrastive_enabled:
                    extra = _contrastive_term(
                        model, train_corpus, idxs, vocab, graph, streams, tcfg
                    )
                    if extra is not None:
                        if not math.isfinite(float(extra)):
                            raise NumericalError("loss term contrastive is non-finite")
                        loss = loss + tcfg.contrastive_weight * extra.double()
                (loss / tcfg.grad_accumulation).backward()
                window.append(bundle.to_floats())
                pending += 1
                if pending == tcfg.grad_accumulation:
                    grads = [p.grad for p in model.parameters() if p.grad is not None]
                    clip_gradients(grads, tcfg.grad_clip_norm)
                    optimizer.step()
                    optimizer.zero_grad()
                    state.global_step += 1
                    pending = 0
                    last_means = {
                        k: float(np.mean([w[k] for w in window])) for k in window[0]
                    }
                    if state.global_step % tcfg.log_every == 0:
                        emit({"epoch": epoch, "step": state.global_step, **last_means,
                              **val_ppls})
                    window = []
            if pending:  # leftover micro-batches still form one update
                grads = [p.grad for p in model.parameters() if p.grad is not None]
                clip_gradients(grads, tcfg.grad_clip_norm)
                optimizer.step()
                optimizer.zero_grad()
                state.global_step += 1
                if window:
                    last_means = {
                        k: float(np.mean([w[k] for w in window])) for k in window[0]
                    }
                    emit({"epoch": epoch, "step": state.global_step, **last_means,
                          **val_ppls})

            report = evaluation.perplexity(model, val_corpus, vocab, graph,
                                           batch_size=tcfg.batch_size)
            val_ppls = {
                "val_ppl_base": report.base,
                "val_ppl_comp": report.compression if report.compression is not None
                else nan,
                "val_ppl_total": report.combined,
            }
            improved = state.record_validation(
                _validation_metric(report, tcfg.early_stop_metric)
            )
            emit({"epoch": epoch, "step": state.global_step, "event": "validation",
                  **last_means, **val_ppls, "best": state.best_val_ppl,
                  "epochs_since_best": state.epochs_since_best})
            if improved and run_dir is not None:
                ckpt = run_dir / "best.ckpt"
                save_checkpoint(model, ckpt, vocab, step=state.global_step)
                result.best_checkpoint = ckpt
            if state.should_stop(tcfg.patience):
                break
    finally:
        if log_fh is not None:
            log_fh.close()
    return result
