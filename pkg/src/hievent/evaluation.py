"""The four evaluation protocols: perplexity, inverse narrative cloze,
masked-event regeneration, and event-similarity scoring.

Nothing here observes gold frames: evaluation forwards run the deterministic
latent path (no Gumbel noise, softmax means) with a fixed-seed stream for
ontology guidance, so every metric is a pure function of the checkpoint.
"""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from scipy import stats

from .corpus import (
    NOFRAME,
    EventSequence,
    EventTuple,
    IncInstance,
    MaskedInstance,
    UNK,
    Vocab,
    tokenize_sequence,
)
from .model import Batch, HierarchicalEventModel, RngStreams, make_batch, sequence_nll
from .ontology import FrameGraph
from .synthetic import HardSimilarityInstance, TransitiveInstance

EVAL_SEED = 0xE7A1


@dataclass
class PerplexityReport:
    base: float
    compression: float | None
    combined: float
    token_count: int


def combined_perplexity(base: float, compression: float) -> float:
    """Geometric mean: exp((ln base + ln compression) / 2)."""
    return math.exp((math.log(base) + math.log(compression)) / 2.0)


def _bucket_indices(seqs: list[EventSequence]) -> dict[int, list[int]]:
    buckets: dict[int, list[int]] = defaultdict(list)
    for i, s in enumerate(seqs):
        buckets[len(s)].append(i)
    return buckets


def content_guidance_rngs(batch: Batch, eval_seed: int) -> list[np.random.Generator]:
    """One guidance generator per row, seeded from the row's token content,
    so evaluation draws do not depend on dataset order or batch packing."""
    return [
        np.random.default_rng(
            np.random.SeedSequence([eval_seed] + [int(t) for t in row])
        )
        for row in batch.tokens
    ]


@torch.no_grad()
def _corpus_nll(
    model: HierarchicalEventModel,
    inputs: list[EventSequence],
    targets: list[EventSequence] | None,
    vocab: Vocab,
    graph: FrameGraph,
    batch_size: int,
    eval_seed: int,
) -> tuple[np.ndarray, np.ndarray | None, np.ndarray]:
    """Per-sequence (base NLL sums, comp NLL sums, token counts)."""
    model.eval()
    streams = RngStreams(eval_seed)
    n = len(inputs)
    base_nll = np.zeros(n)
    comp_nll = np.zeros(n) if model.has_compression else None
    counts = np.zeros(n, dtype=np.int64)
    for _, idxs in sorted(_bucket_indices(inputs).items()):
        for lo in range(0, len(idxs), batch_size):
            chunk = idxs[lo : lo + batch_size]
            tgt = [targets[i] for i in chunk] if targets is not None else None
            batch = make_batch([inputs[i] for i in chunk], vocab, targets=tgt)
            out = model(
                batch, graph, streams, train=False,
                guidance_rngs=content_guidance_rngs(batch, eval_seed),
            )
            nll, cnt = sequence_nll(out.base_logits, batch.targets)
            for k, i in enumerate(chunk):
                base_nll[i] = float(nll[k])
                counts[i] = int(cnt[k])
            if comp_nll is not None:
                nll2, _ = sequence_nll(out.comp_logits, batch.targets)
                for k, i in enumerate(chunk):
                    comp_nll[i] = float(nll2[k])
    return base_nll, comp_nll, counts


def perplexity(
    model: HierarchicalEventModel,
    dataset: list[EventSequence],
    vocab: Vocab,
    graph: FrameGraph,
    batch_size: int = 64,
    eval_seed: int = EVAL_SEED,
) -> PerplexityReport:
    """Per-word perplexity of each decoder; combined is their geometric mean."""
    if not dataset:
        raise ValueError("empty evaluation dataset")
    base_nll, comp_nll, counts = _corpus_nll(
        model, dataset, None, vocab, graph, batch_size, eval_seed
    )
    total = int(counts.sum())
    base = math.exp(base_nll.sum() / total)
    if comp_nll is None:
        return PerplexityReport(base, None, base, total)
    comp = math.exp(comp_nll.sum() / total)
    return PerplexityReport(base, comp, combined_perplexity(base, comp), total)


def masked_event_perplexity(
    model: HierarchicalEventModel,
    instances: list[MaskedInstance],
    vocab: Vocab,
    graph: FrameGraph,
    batch_size: int = 64,
    eval_seed: int = EVAL_SEED,
) -> PerplexityReport:
    """Encode the impoverished input, score against the full target."""
    if not instances:
        raise ValueError("no masked instances")
    inputs = [inst.impoverished for inst in instances]
    targets = [inst.full_target for inst in instances]
    base_nll, comp_nll, counts = _corpus_nll(
        model, inputs, targets, vocab, graph, batch_size, eval_seed
    )
    total = int(counts.sum())
    base = math.exp(base_nll.sum() / total)
    if comp_nll is None:
        return PerplexityReport(base, None, base, total)
    comp = math.exp(comp_nll.sum() / total)
    return PerplexityReport(base, comp, combined_perplexity(base, comp), total)


def select_candidate(scores: list[float]) -> int:
    """Argmin with ties broken toward the lower index."""
    best, best_score = 0, scores[0]
    for i, s in enumerate(scores[1:], start=1):
        if s < best_score:
            best, best_score = i, s
    return best


def inverse_narrative_cloze(
    model: HierarchicalEventModel,
    instances: list[IncInstance],
    vocab: Vocab,
    graph: FrameGraph,
    layer: str = "combined",
    batch_size: int = 64,
    eval_seed: int = EVAL_SEED,
) -> tuple[float, int]:
    """Accuracy of picking the true continuation by length-normalized NLL."""
    if layer not in ("base", "compression", "combined"):
        raise ValueError(f"unknown scoring layer {layer!r}")
    if layer != "base" and not model.has_compression:
        raise ValueError("model has no compression layer to score with")
    seqs, owner = [], []
    for ii, inst in enumerate(instances):
        for ci, cand in enumerate(inst.candidates):
            events = [inst.seed] + list(cand)
            seqs.append(EventSequence(events, [NOFRAME] * len(events)))
            owner.append((ii, ci))
    base_nll, comp_nll, counts = _corpus_nll(
        model, seqs, None, vocab, graph, batch_size, eval_seed
    )
    scores = np.zeros((len(instances), 6))
    for k, (ii, ci) in enumerate(owner):
        b = base_nll[k] / counts[k]
        if layer == "base":
            s = b
        else:
            c = comp_nll[k] / counts[k]
            s = c if layer == "compression" else b + c
        scores[ii, ci] = s
    correct = sum(
        select_candidate(list(scores[ii])) == inst.answer_index
        for ii, inst in enumerate(instances)
    )
    return correct / len(instances), len(instances)


def unigram_perplexity(
    train: list[EventSequence], dataset: list[EventSequence], vocab: Vocab
) -> float:
    """Add-one-smoothed unigram baseline with the decoder's token accounting."""
    counts: Counter[int] = Counter()
    for seq in train:
        counts.update(tokenize_sequence(seq, vocab)[1:])
    total = sum(counts.values())
    denom = total + vocab.lex_size
    nll, n = 0.0, 0
    for seq in dataset:
        for tok in tokenize_sequence(seq, vocab)[1:]:
            nll -= math.log((counts[tok] + 1) / denom)
            n += 1
    return math.exp(nll / n)


# -- event representations and similarity -----------------------------------


def _single_event_sequences(events: list[EventTuple]) -> list[EventSequence]:
    return [EventSequence([ev], [NOFRAME]) for ev in events]


def representation_batch(
    model: HierarchicalEventModel,
    events: list[EventTuple],
    vocab: Vocab,
    graph: FrameGraph,
    streams: RngStreams,
    predicate_dropout: float = 0.0,
    dropout_rng: np.random.Generator | None = None,
) -> torch.Tensor:
    """Differentiable representations: final base-decoder state concatenated
    with the flattened compression latent embeddings.

    predicate_dropout (used only during contrastive training) replaces the
    predicate token with UNK on the encoder side; the decoder side is clean.
    """
    if not model.has_compression:
        raise ValueError("event representations need the compression layer")
    batch = make_batch(_single_event_sequences(events), vocab)
    enc_tokens = batch.tokens
    if predicate_dropout > 0.0:
        enc_tokens = enc_tokens.clone()
        drops = dropout_rng.random(len(events)) < predicate_dropout
        enc_tokens[torch.from_numpy(drops), 1] = UNK  # predicate sits at position 1
    fwd = Batch(enc_tokens, batch.n_events, batch.gold_frames, batch.observed,
                target_tokens=batch.tokens)
    out = model(
        fwd, graph, streams, train=False,
        guidance_rngs=content_guidance_rngs(fwd, streams.seed),
    )
    comp_emb = model.comp_layer.latent_embeddings(out.comp_chain)  # B x n_comp x d
    final_state = out.base_states[:, -1]  # B x hidden
    return torch.cat([final_state, comp_emb.reshape(comp_emb.shape[0], -1)], dim=-1)


@torch.no_grad()
def event_representation(
    model: HierarchicalEventModel,
    event: EventTuple,
    vocab: Vocab,
    graph: FrameGraph,
    eval_seed: int = EVAL_SEED,
) -> np.ndarray:
    model.eval()
    rep = representation_batch(model, [event], vocab, graph, RngStreams(eval_seed))
    return rep[0].cpu().numpy()


@torch.no_grad()
def representation_matrix(
    model: HierarchicalEventModel,
    events: list[EventTuple],
    vocab: Vocab,
    graph: FrameGraph,
    batch_size: int = 64,
    eval_seed: int = EVAL_SEED,
) -> np.ndarray:
    model.eval()
    chunks = []
    for lo in range(0, len(events), batch_size):
        streams = RngStreams(eval_seed)
        chunks.append(
            representation_batch(
                model, events[lo : lo + batch_size], vocab, graph, streams
            ).cpu().numpy()
        )
    return np.concatenate(chunks, axis=0)


def contrastive_loss(
    query: torch.Tensor,
    positives: torch.Tensor,
    negatives: torch.Tensor,
    temperature: float,
) -> torch.Tensor:
    """Mean cross-entropy over positives under a softmax of cosine/temperature
    scores against all positive and negative candidates."""
    if positives.shape[0] < 1 or negatives.shape[0] < 1:
        raise ValueError("need at least one positive and one negative")
    candidates = torch.cat([positives, negatives], dim=0)
    norms = candidates.detach().norm(dim=-1)
    if float(query.detach().norm()) == 0.0 or bool((norms == 0).any()):
        raise ValueError("zero-norm representation")
    sims = F.cosine_similarity(query.unsqueeze(0), candidates, dim=-1) / temperature
    log_probs = torch.log_softmax(sims, dim=0)
    return -log_probs[: positives.shape[0]].mean()


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    return float(np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v)))


def score_hard_similarity(rep_fn, instances: list[HardSimilarityInstance]) -> float:
    """Accuracy of predicting the more-similar pair by cosine; rep_fn maps an
    EventTuple to a vector."""
    correct = 0
    for inst in instances:
        cos_a = cosine(rep_fn(inst.pair_a[0]), rep_fn(inst.pair_a[1]))
        cos_b = cosine(rep_fn(inst.pair_b[0]), rep_fn(inst.pair_b[1]))
        predicted = "A" if cos_a >= cos_b else "B"
        correct += predicted == inst.label
    return correct / len(instances)


def score_transitive(rep_fn, instances: list[TransitiveInstance]) -> float:
    """Spearman rank correlation between cosine scores and gold scalars."""
    if len(instances) < 2:
        raise ValueError("transitive correlation needs at least 2 instances")
    predicted = [cosine(rep_fn(i.event_1), rep_fn(i.event_2)) for i in instances]
    gold = [i.score for i in instances]
    return float(stats.spearmanr(predicted, gold).statistic)


def _model_rep_fn(model, vocab, graph, eval_seed=EVAL_SEED):
    cache: dict[EventTuple, np.ndarray] = {}

    def rep(ev: EventTuple) -> np.ndarray:
        if ev not in cache:
            cache[ev] = event_representation(model, ev, vocab, graph, eval_seed)
        return cache[ev]

    return rep


def hard_similarity_accuracy(
    model, instances: list[HardSimilarityInstance], vocab, graph, eval_seed: int = EVAL_SEED
) -> float:
    return score_hard_similarity(_model_rep_fn(model, vocab, graph, eval_seed), instances)


def transitive_correlation(
    model, instances: list[TransitiveInstance], vocab, graph, eval_seed: int = EVAL_SEED
) -> float:
    return score_transitive(_model_rep_fn(model, vocab, graph, eval_seed), instances)
