"""Synthetic corpora with planted two-level structure.

Each document draws a latent scenario; its event frames come from that
scenario's child frames (a fixed non-uniform categorical), and each event's
lexical tuple is emitted from frame/scenario-specific token distributions:
predicates identify frames, arguments identify scenarios. The emitted graph
links every child frame to its scenario parent, so the hierarchy is
learnable at desk scale and recoverable through the ontology.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import EventSequence, EventTuple, Vocab, build_vocab
from .ontology import FrameGraph, RelationType


@dataclass
class SyntheticConfig:
    n_scenarios: int = 4
    frames_per_scenario: int = 5
    n_docs: int = 2000
    events_per_doc: int = 5
    predicates_per_frame: int = 3
    args_per_scenario: int = 6
    n_modifiers: int = 4
    modifier_absent_prob: float = 0.5
    # categorical: frames drawn iid from a fixed decreasing categorical;
    # permutation: each document cycles through a fresh permutation of the
    # scenario's children, so a 5-event doc covers all 5 frames exactly once
    # (set-completion structure; uniform marginal).
    frame_sampling: str = "categorical"
    lexical_cap: int = 40_000
    frame_cap: int = 500

    def __post_init__(self):
        for name in ("n_scenarios", "frames_per_scenario", "n_docs", "events_per_doc"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.frame_sampling not in ("categorical", "permutation"):
            raise ValueError("frame_sampling must be 'categorical' or 'permutation'")


@dataclass
class SyntheticCorpus:
    corpus: list[EventSequence]
    graph: FrameGraph
    vocab: Vocab
    config: SyntheticConfig
    doc_scenarios: list[int]  # latent scenario per document
    frame_given_scenario: np.ndarray  # (n_scenarios, frames_per_scenario)
    scenario_ids: list[int]  # frame id of each scenario parent
    child_ids: list[list[int]]  # frame ids of each scenario's children


def _frame_distribution(k: int) -> np.ndarray:
    # Decreasing weights k, k-1, ..., 1 so the categorical is non-trivial.
    w = np.arange(k, 0, -1, dtype=float)
    return w / w.sum()


def generate_synthetic_corpus(cfg: SyntheticConfig, rng: np.random.Generator) -> SyntheticCorpus:
    graph = FrameGraph()
    scenario_ids, child_ids = [], []
    for s in range(cfg.n_scenarios):
        parent = graph.intern(f"Scenario_{s}_scenario")
        scenario_ids.append(parent)
        children = []
        for j in range(cfg.frames_per_scenario):
            child = graph.intern(f"Frame_{s}_{j}")
            relation = RelationType.INHERITANCE if j % 2 == 0 else RelationType.USING
            graph.add_edge(child, relation, parent)
            children.append(child)
        child_ids.append(children)

    frame_dist = _frame_distribution(cfg.frames_per_scenario)
    pred_dist = _frame_distribution(cfg.predicates_per_frame)
    arg_dist = _frame_distribution(cfg.args_per_scenario)

    def draw_frame_indices() -> list[int]:
        if cfg.frame_sampling == "categorical":
            return [
                int(rng.choice(cfg.frames_per_scenario, p=frame_dist))
                for _ in range(cfg.events_per_doc)
            ]
        out: list[int] = []
        while len(out) < cfg.events_per_doc:
            out.extend(int(j) for j in rng.permutation(cfg.frames_per_scenario))
        return out[: cfg.events_per_doc]

    corpus, doc_scenarios = [], []
    for _ in range(cfg.n_docs):
        s = int(rng.integers(cfg.n_scenarios))
        doc_scenarios.append(s)
        events, frames = [], []
        for j in draw_frame_indices():
            fid = child_ids[s][j]
            pred = f"pred{s}_{j}_{int(rng.choice(cfg.predicates_per_frame, p=pred_dist))}"
            subj = f"arg{s}_{int(rng.choice(cfg.args_per_scenario, p=arg_dist))}"
            obj = f"arg{s}_{int(rng.choice(cfg.args_per_scenario, p=arg_dist))}"
            if rng.random() < cfg.modifier_absent_prob:
                mod = None
            else:
                mod = f"mod{int(rng.integers(cfg.n_modifiers))}"
            events.append(EventTuple(pred, subj, obj, mod))
            frames.append(fid)
        corpus.append(EventSequence(events, frames))

    vocab = build_vocab(corpus, graph, cfg.lexical_cap, cfg.frame_cap)
    if cfg.frame_sampling == "permutation":
        marginal = np.full(cfg.frames_per_scenario, 1.0 / cfg.frames_per_scenario)
    else:
        marginal = frame_dist
    fg = np.tile(marginal, (cfg.n_scenarios, 1))
    return SyntheticCorpus(corpus, graph, vocab, cfg, doc_scenarios, fg, scenario_ids, child_ids)


@dataclass
class HardSimilarityInstance:
    pair_a: tuple[EventTuple, EventTuple]
    pair_b: tuple[EventTuple, EventTuple]
    label: str  # "A" or "B": the more-similar pair


@dataclass
class TransitiveInstance:
    event_1: EventTuple
    event_2: EventTuple
    score: float


def _sample_event(syn: SyntheticCorpus, scenario: int, frame_j: int, rng) -> EventTuple:
    cfg = syn.config
    pred = f"pred{scenario}_{frame_j}_{int(rng.integers(cfg.predicates_per_frame))}"
    subj = f"arg{scenario}_{int(rng.integers(cfg.args_per_scenario))}"
    obj = f"arg{scenario}_{int(rng.integers(cfg.args_per_scenario))}"
    return EventTuple(pred, subj, obj, None)


def make_hard_similarity_instances(
    syn: SyntheticCorpus, n: int, rng: np.random.Generator
) -> list[HardSimilarityInstance]:
    """Similar pair: two events of one frame; dissimilar: different scenarios."""
    cfg = syn.config
    if cfg.n_scenarios < 2:
        raise ValueError("needs >= 2 scenarios for dissimilar pairs")
    out = []
    for _ in range(n):
        s = int(rng.integers(cfg.n_scenarios))
        j = int(rng.integers(cfg.frames_per_scenario))
        similar = (_sample_event(syn, s, j, rng), _sample_event(syn, s, j, rng))
        s2 = int(rng.integers(cfg.n_scenarios))
        while s2 == s:
            s2 = int(rng.integers(cfg.n_scenarios))
        dissimilar = (
            _sample_event(syn, s, int(rng.integers(cfg.frames_per_scenario)), rng),
            _sample_event(syn, s2, int(rng.integers(cfg.frames_per_scenario)), rng),
        )
        if rng.random() < 0.5:
            out.append(HardSimilarityInstance(similar, dissimilar, "A"))
        else:
            out.append(HardSimilarityInstance(dissimilar, similar, "B"))
    return out


def make_transitive_instances(
    syn: SyntheticCorpus, n: int, rng: np.random.Generator
) -> list[TransitiveInstance]:
    """Gold relatedness: same frame 0.9, same scenario 0.5, unrelated 0.1 (± jitter)."""
    cfg = syn.config
    out = []
    for _ in range(n):
        s = int(rng.integers(cfg.n_scenarios))
        j = int(rng.integers(cfg.frames_per_scenario))
        e1 = _sample_event(syn, s, j, rng)
        kind = int(rng.integers(3))
        if kind == 0:
            e2, base = _sample_event(syn, s, j, rng), 0.9
        elif kind == 1 and cfg.frames_per_scenario > 1:
            j2 = int(rng.integers(cfg.frames_per_scenario))
            while j2 == j:
                j2 = int(rng.integers(cfg.frames_per_scenario))
            e2, base = _sample_event(syn, s, j2, rng), 0.5
        else:
            s2 = int(rng.integers(cfg.n_scenarios))
            while s2 == s and cfg.n_scenarios > 1:
                s2 = int(rng.integers(cfg.n_scenarios))
            e2, base = _sample_event(syn, s2, int(rng.integers(cfg.frames_per_scenario)), rng), 0.1
        out.append(TransitiveInstance(e1, e2, base + float(rng.uniform(-0.05, 0.05))))
    return out


def _event_fields(ev: EventTuple) -> str:
    return f"{ev.predicate} {ev.subject} {ev.object}"


def save_hard_similarity(instances: list[HardSimilarityInstance], path) -> None:
    """`predA1 sA1 oA1 | predA2 sA2 oA2 | predB1 ... | predB2 ...<TAB>label`"""
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            events = [inst.pair_a[0], inst.pair_a[1], inst.pair_b[0], inst.pair_b[1]]
            fh.write(" | ".join(_event_fields(e) for e in events) + f"\t{inst.label}\n")


def load_hard_similarity(path) -> list[HardSimilarityInstance]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            body, _, label = line.partition("\t")
            if label not in ("A", "B"):
                raise ValueError(f"{path}:{lineno}: label must be A or B")
            chunks = [c.strip().split() for c in body.split("|")]
            if len(chunks) != 4 or any(len(c) != 3 for c in chunks):
                raise ValueError(f"{path}:{lineno}: expected 4 events of 3 fields")
            evs = [EventTuple(c[0], c[1], c[2], None) for c in chunks]
            out.append(HardSimilarityInstance((evs[0], evs[1]), (evs[2], evs[3]), label))
    return out


def save_transitive(instances: list[TransitiveInstance], path) -> None:
    """`pred1 s1 o1<TAB>pred2 s2 o2<TAB>score`"""
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(
                f"{_event_fields(inst.event_1)}\t{_event_fields(inst.event_2)}"
                f"\t{inst.score:.4f}\n"
            )


def load_transitive(path) -> list[TransitiveInstance]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 tab-separated fields")
            f1, f2 = parts[0].split(), parts[1].split()
            if len(f1) != 3 or len(f2) != 3:
                raise ValueError(f"{path}:{lineno}: events need 3 fields")
            out.append(
                TransitiveInstance(
                    EventTuple(f1[0], f1[1], f1[2], None),
                    EventTuple(f2[0], f2[1], f2[2], None),
                    float(parts[2]),
                )
            )
    return out
