"""Event sequences, vocabularies, frame-observation masking, eval instances.

An event is a 4-slot lexical tuple (predicate, subject, object, optional
modifier). Documents are short sequences of events with per-event frame
labels, which may be unannotated (NOFRAME). Token layout for a document:

    <BOS> p1 s1 o1 m1 <TUP> p2 s2 o2 m2 ... <EOS>

so a document with M events tokenizes to 1 + 4*M + (M-1) + 1 = 5*M + 1 ids.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .ontology import NOFRAME, FrameGraph, scenario_connected

PAD, UNK, BOS, EOS, TUP, NONE = 0, 1, 2, 3, 4, 5
LEX_SPECIALS = ("<PAD>", "<UNK>", "<BOS>", "<EOS>", "<TUP>", "<NONE>")
NONE_SURFACE = "-"  # absent modifier / NOFRAME marker in corpus files


@dataclass(frozen=True)
class EventTuple:
    predicate: str
    subject: str
    object: str
    modifier: str | None = None

    def __post_init__(self):
        if not (self.predicate and self.subject and self.object):
            raise ValueError("predicate, subject, object must be non-empty")

    def slots(self) -> tuple[str, str, str, str | None]:
        return (self.predicate, self.subject, self.object, self.modifier)


@dataclass
class EventSequence:
    events: list[EventTuple]
    gold_frames: list[int]  # frame ids, NOFRAME where unannotated

    def __post_init__(self):
        if not self.events:
            raise ValueError("a sequence needs at least one event")
        if len(self.gold_frames) != len(self.events):
            raise ValueError("gold_frames must align 1:1 with events")

    def __len__(self) -> int:
        return len(self.events)

    def without_event(self, index: int) -> "EventSequence":
        """Copy with event `index` and its frame deleted in lockstep."""
        keep = [i for i in range(len(self.events)) if i != index]
        return EventSequence(
            [self.events[i] for i in keep], [self.gold_frames[i] for i in keep]
        )


class Vocab:
    """Lexical token <-> id map plus the frame-name table shared with the graph."""

    def __init__(self, lexical_tokens: list[str], frame_names: list[str]):
        self.lex_itos = list(LEX_SPECIALS) + lexical_tokens
        self.lex_stoi = {t: i for i, t in enumerate(self.lex_itos)}
        self.frame_itos = list(frame_names)
        self.frame_stoi = {n: i for i, n in enumerate(self.frame_itos)}

    @property
    def lex_size(self) -> int:
        return len(self.lex_itos)

    @property
    def frame_size(self) -> int:
        return len(self.frame_itos)

    def encode_token(self, token: str) -> int:
        return self.lex_stoi.get(token, UNK)

    def decode_token(self, idx: int) -> str:
        return self.lex_itos[idx]

    def frame_id(self, name: str) -> int:
        return self.frame_stoi.get(name, NOFRAME)


def build_vocab(
    corpus: list[EventSequence],
    graph: FrameGraph,
    lexical_cap: int = 40_000,
    frame_cap: int = 500,
) -> Vocab:
    """Top-frequency lexical tokens and frames; ties break lexicographically.

    The frame table always contains every graph frame name so ontology
    lookups stay valid; the cap applies to which *gold annotations* survive
    (frames outside the cap remap to NOFRAME, see encode_frames).
    """
    if not corpus:
        raise ValueError("empty corpus")
    lex_counts: Counter[str] = Counter()
    frame_counts: Counter[int] = Counter()
    for seq in corpus:
        for ev in seq.events:
            for slot in ev.slots():
                if slot is not None:
                    lex_counts[slot] += 1
        for fid in seq.gold_frames:
            if fid != NOFRAME:
                frame_counts[fid] += 1
    ranked = sorted(lex_counts.items(), key=lambda kv: (-kv[1], kv[0]))
    lexical = [tok for tok, _ in ranked[:lexical_cap]]
    kept_frames = {
        fid
        for fid, _ in sorted(
            frame_counts.items(), key=lambda kv: (-kv[1], graph.name_of(kv[0]))
        )[:frame_cap]
    }
    vocab = Vocab(lexical, list(graph.names))
    vocab.kept_frames = kept_frames
    return vocab


def encode_frames(vocab: Vocab, gold_frames: list[int]) -> list[int]:
    """Remap frames outside the frequency cap to NOFRAME."""
    kept = getattr(vocab, "kept_frames", None)
    if kept is None:
        return list(gold_frames)
    return [fid if fid in kept else NOFRAME for fid in gold_frames]


def tokenize_sequence(seq: EventSequence, vocab: Vocab) -> list[int]:
    """BOS, events as 4 ids with TUP separators, EOS; length 5*M + 1."""
    ids = [BOS]
    for k, ev in enumerate(seq.events):
        if k > 0:
            ids.append(TUP)
        for slot in ev.slots():
            ids.append(NONE if slot is None else vocab.encode_token(slot))
    ids.append(EOS)
    return ids


def tokenized_length(n_events: int) -> int:
    return 5 * n_events + 1


@dataclass
class ObservationMask:
    observed: list[bool]

    def __post_init__(self):
        self._indices = [i for i, o in enumerate(self.observed) if o]

    def observed_indices(self) -> list[int]:
        return self._indices


def apply_observation_mask(
    seq: EventSequence, epsilon: float, rng: np.random.Generator
) -> ObservationMask:
    """Observe each annotated frame independently with probability epsilon.

    NOFRAME positions are never observed, for any epsilon.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must be in [0, 1], got {epsilon}")
    observed = []
    for fid in seq.gold_frames:
        if fid == NOFRAME:
            observed.append(False)
        else:
            observed.append(bool(rng.random() < epsilon))
    return ObservationMask(observed)


@dataclass
class IncInstance:
    seed: EventTuple
    candidates: list[list[EventTuple]]  # 6 continuations
    answer_index: int


def make_inc_instance(
    corpus: list[EventSequence], rng: np.random.Generator, doc_index: int | None = None
) -> IncInstance:
    """Seed event plus six candidate continuations (one true, five distractors).

    The true continuation is the seed document's own remainder; distractors
    are remainders of five uniformly sampled other documents. Order is
    shuffled; answer_index marks the true candidate.
    """
    if len(corpus) < 6:
        raise ValueError("INC construction needs at least 6 documents")
    usable = [i for i, seq in enumerate(corpus) if len(seq) >= 2]
    if len(usable) < 6:
        raise ValueError("INC construction needs at least 6 documents with >= 2 events")
    if doc_index is None:
        doc_index = usable[int(rng.integers(len(usable)))]
    elif len(corpus[doc_index]) < 2:
        raise ValueError("seed document has no continuation")
    seed_doc = corpus[doc_index]
    others = [i for i in usable if i != doc_index]
    distractor_docs = rng.choice(len(others), size=5, replace=False)
    candidates = [list(seed_doc.events[1:])]
    for d in distractor_docs:
        candidates.append(list(corpus[others[int(d)]].events[1:]))
    order = rng.permutation(6)
    shuffled = [candidates[int(i)] for i in order]
    answer = int(np.flatnonzero(order == 0)[0])
    return IncInstance(seed_doc.events[0], shuffled, answer)


@dataclass
class MaskedInstance:
    impoverished: EventSequence
    full_target: EventSequence
    removed_index: int | None  # None for control instances (nothing removed)


def make_masked_instance(seq: EventSequence, graph: FrameGraph) -> MaskedInstance | None:
    """Delete the later event of the first scenario-connected frame pair.

    Pairs (i, j), i < j, are scanned in lexicographic order; returns None
    when no pair of positions carries scenario-connected frames (the caller
    counts skips).
    """
    n = len(seq)
    for i in range(n):
        if seq.gold_frames[i] == NOFRAME:
            continue
        for j in range(i + 1, n):
            if seq.gold_frames[j] == NOFRAME:
                continue
            if scenario_connected(graph, seq.gold_frames[i], seq.gold_frames[j]):
                return MaskedInstance(seq.without_event(j), seq, j)
    return None


def build_masked_instances(
    corpus: list[EventSequence], graph: FrameGraph
) -> tuple[list[MaskedInstance], int]:
    """All constructible masked instances plus the skipped-document count."""
    instances, skipped = [], 0
    for seq in corpus:
        inst = make_masked_instance(seq, graph)
        if inst is None:
            skipped += 1
        else:
            instances.append(inst)
    return instances, skipped


def save_vocab(vocab: Vocab, path) -> None:
    import json

    payload = {
        "lexical": vocab.lex_itos[len(LEX_SPECIALS):],
        "frames": vocab.frame_itos,
        "kept_frames": sorted(getattr(vocab, "kept_frames", [])),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_vocab(path) -> Vocab:
    import json

    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    vocab = Vocab(payload["lexical"], payload["frames"])
    if payload.get("kept_frames"):
        vocab.kept_frames = set(payload["kept_frames"])
    return vocab


# ---------------------------------------------------------------------------
# Corpus file format: one document per line, events separated by " <TUP> ",
# each event 4 whitespace-separated fields with "-" for an absent modifier.
# A parallel .frames file holds one line per document of whitespace-separated
# frame names ("-" for NOFRAME).
# ---------------------------------------------------------------------------


def _parse_event(fields: list[str]) -> EventTuple:
    if len(fields) != 4:
        raise ValueError(f"expected 4 fields per event, got {len(fields)}: {fields!r}")
    modifier = None if fields[3] == NONE_SURFACE else fields[3]
    return EventTuple(fields[0], fields[1], fields[2], modifier)


def load_corpus(
    path, graph: FrameGraph, frames_path=None, max_events: int | None = None
) -> list[EventSequence]:
    """Read documents (and aligned frame names when frames_path is given).

    Documents longer than max_events are truncated.
    """
    docs: list[list[EventTuple]] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            events = []
            for chunk in line.split(" <TUP> "):
                fields = chunk.split()
                if not fields:
                    raise ValueError(f"{path}:{lineno}: empty event")
                events.append(_parse_event(fields))
            docs.append(events)
    frame_rows: list[list[int]]
    if frames_path is not None:
        frame_rows = []
        with open(frames_path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                names = line.split()
                row = []
                for name in names:
                    if name == NONE_SURFACE:
                        row.append(NOFRAME)
                    else:
                        fid = graph.ids.get(name)
                        if fid is None:
                            raise ValueError(
                                f"{frames_path}:{lineno}: frame {name!r} not in graph"
                            )
                        row.append(fid)
                frame_rows.append(row)
        if len(frame_rows) != len(docs):
            raise ValueError("corpus and .frames files have different document counts")
    else:
        frame_rows = [[NOFRAME] * len(ev) for ev in docs]
    out = []
    for events, frames in zip(docs, frame_rows):
        if len(frames) != len(events):
            raise ValueError("frame annotations misaligned with events")
        if max_events is not None:
            events, frames = events[:max_events], frames[:max_events]
        out.append(EventSequence(events, frames))
    return out


def save_corpus(corpus: list[EventSequence], path, graph: FrameGraph, frames_path=None):
    with open(path, "w", encoding="utf-8") as fh:
        for seq in corpus:
            chunks = []
            for ev in seq.events:
                mod = NONE_SURFACE if ev.modifier is None else ev.modifier
                chunks.append(f"{ev.predicate} {ev.subject} {ev.object} {mod}")
            fh.write(" <TUP> ".join(chunks) + "\n")
    if frames_path is not None:
        with open(frames_path, "w", encoding="utf-8") as fh:
            for seq in corpus:
                names = [
                    NONE_SURFACE if fid == NOFRAME else graph.name_of(fid)
                    for fid in seq.gold_frames
                ]
                fh.write(" ".join(names) + "\n")
