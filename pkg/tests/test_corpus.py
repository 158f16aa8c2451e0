import collections

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hievent.corpus import (
    BOS,
    EOS,
    NONE,
    TUP,
    UNK,
    EventSequence,
    EventTuple,
    Vocab,
    apply_observation_mask,
    build_masked_instances,
    build_vocab,
    encode_frames,
    load_corpus,
    load_vocab,
    make_inc_instance,
    make_masked_instance,
    save_corpus,
    save_vocab,
    tokenize_sequence,
    tokenized_length,
)
from hievent.ontology import NOFRAME, FrameGraph, RelationType, scenario_connected


def ev(i):
    return EventTuple(f"p{i}", f"s{i}", f"o{i}", f"m{i}")


def seq_of(n, frames=None):
    return EventSequence([ev(i) for i in range(n)], frames or [NOFRAME] * n)


@pytest.fixture()
def vocab():
    graph = FrameGraph()
    corpus = [seq_of(5) for _ in range(3)]
    return build_vocab(corpus, graph)


# -- tokenize -------------------------------------------------------------


def test_tokenize_two_events_is_11_tokens(vocab):
    toks = tokenize_sequence(seq_of(2), vocab)
    assert len(toks) == 11 == tokenized_length(2)
    assert toks[0] == BOS and toks[-1] == EOS
    assert toks[5] == TUP


def test_tokenize_five_events_is_26_tokens(vocab):
    toks = tokenize_sequence(seq_of(5), vocab)
    # independent construction: BOS + per-event 4 slots + separators + EOS
    direct = 1 + 5 * 4 + 4 + 1
    assert len(toks) == 26 == direct == tokenized_length(5)


def test_tokenize_unknown_word_becomes_unk(vocab):
    seq = EventSequence([EventTuple("zzz_unseen", "s0", "o0", "m0")], [NOFRAME])
    toks = tokenize_sequence(seq, vocab)
    assert toks[1] == UNK
    assert len(toks) == tokenized_length(1)


def test_tokenize_absent_modifier_is_none_token(vocab):
    seq = EventSequence([EventTuple("p0", "s0", "o0", None)], [NOFRAME])
    assert tokenize_sequence(seq, vocab)[4] == NONE


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 12))
def test_tokenize_length_formula(n):
    vocab = build_vocab([seq_of(5)], FrameGraph())
    assert len(tokenize_sequence(seq_of(n), vocab)) == 5 * n + 1


# -- observation masks -------------------------------------------------------


def frames_seq(frame_ids):
    return EventSequence([ev(i) for i in range(len(frame_ids))], list(frame_ids))


def test_epsilon_one_observes_all_real_frames():
    seq = frames_seq([3, NOFRAME, 4, 5, NOFRAME])
    mask = apply_observation_mask(seq, 1.0, np.random.default_rng(0))
    assert mask.observed == [True, False, True, True, False]


def test_epsilon_zero_observes_nothing():
    seq = frames_seq([3, 4, 5])
    mask = apply_observation_mask(seq, 0.0, np.random.default_rng(0))
    assert mask.observed == [False, False, False]


def test_epsilon_out_of_range_rejected():
    with pytest.raises(ValueError):
        apply_observation_mask(frames_seq([3]), 1.5, np.random.default_rng(0))


def test_epsilon_monte_carlo_fraction():
    rng = np.random.default_rng(7)
    seq = frames_seq([3] * 10)
    observed = 0
    for _ in range(1000):  # 10,000 maskable positions
        observed += sum(apply_observation_mask(seq, 0.4, rng).observed)
    assert abs(observed / 10_000 - 0.4) < 0.02


@settings(max_examples=60, deadline=None)
@given(
    frame_ids=st.lists(st.sampled_from([NOFRAME, 3, 4, 5]), min_size=1, max_size=8),
    epsilon=st.floats(0, 1),
    seed=st.integers(0, 2**31 - 1),
)
def test_mask_never_observes_noframe(frame_ids, epsilon, seed):
    seq = frames_seq(frame_ids)
    mask = apply_observation_mask(seq, epsilon, np.random.default_rng(seed))
    for fid, obs in zip(frame_ids, mask.observed):
        if fid == NOFRAME:
            assert not obs


# -- vocab ---------------------------------------------------------------


def test_vocab_cap_saturation():
    graph = FrameGraph()
    docs = [
        EventSequence([EventTuple(f"p{i}", f"s{i}", f"o{i}", None)], [NOFRAME])
        for i in range(40)
    ]
    vocab = build_vocab(docs, graph, lexical_cap=10, frame_cap=5)
    assert vocab.lex_size == 10 + 6  # cap + specials


def test_vocab_tie_break_lexicographic():
    graph = FrameGraph()
    docs = [
        EventSequence([EventTuple("bbb", "aaa", "ccc", None)], [NOFRAME]),
    ]
    vocab = build_vocab(docs, graph, lexical_cap=2, frame_cap=5)
    kept = set(vocab.lex_itos[6:])
    assert kept == {"aaa", "bbb"}  # ccc loses the tie


def test_vocab_ranking_matches_counting_oracle():
    rng = np.random.default_rng(13)
    tokens = [f"w{i}" for i in range(30)]
    docs = []
    for _ in range(50):
        words = rng.choice(tokens, size=4)
        docs.append(EventSequence([EventTuple(*words)], [NOFRAME]))
    counts = collections.Counter()
    for d in docs:
        counts.update(t for t in d.events[0].slots() if t is not None)
    expected = [w for w, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:12]]
    vocab = build_vocab(docs, FrameGraph(), lexical_cap=12, frame_cap=5)
    assert vocab.lex_itos[6:] == expected


def test_vocab_round_trip_encode_decode():
    graph = FrameGraph()
    docs = [seq_of(3)]
    vocab = build_vocab(docs, graph)
    for tok in ("p0", "s1", "o2"):
        assert vocab.decode_token(vocab.encode_token(tok)) == tok
    assert vocab.decode_token(vocab.encode_token("not_in_vocab")) == "<UNK>"


def test_frame_cap_remaps_rare_frames_to_noframe():
    graph = FrameGraph()
    common, rare = graph.intern("Common"), graph.intern("Rare")
    docs = [frames_seq([common, common, common]), frames_seq([common, rare, NOFRAME])]
    vocab = build_vocab(docs, graph, lexical_cap=100, frame_cap=1)
    assert encode_frames(vocab, [common, rare, NOFRAME]) == [common, NOFRAME, NOFRAME]


def test_vocab_save_load_round_trip(tmp_path, vocab):
    path = tmp_path / "vocab.json"
    vocab.kept_frames = {3, 4}
    save_vocab(vocab, path)
    loaded = load_vocab(path)
    assert loaded.lex_itos == vocab.lex_itos
    assert loaded.frame_itos == vocab.frame_itos
    assert loaded.kept_frames == {3, 4}


# -- INC instances ------------------------------------------------------------


def toy_corpus(n_docs=8, n_events=5):
    return [
        EventSequence(
            [EventTuple(f"p{d}_{i}", f"s{d}", f"o{d}", None) for i in range(n_events)],
            [NOFRAME] * n_events,
        )
        for d in range(n_docs)
    ]


def test_inc_distractors_come_from_other_documents():
    corpus = toy_corpus(6)
    rng = np.random.default_rng(3)
    for _ in range(20):
        inst = make_inc_instance(corpus, rng)
        seed_doc = next(d for d in range(6) if corpus[d].events[0] == inst.seed)
        true_cont = corpus[seed_doc].events[1:]
        assert inst.candidates[inst.answer_index] == true_cont
        for ci, cand in enumerate(inst.candidates):
            if ci != inst.answer_index:
                assert cand != true_cont


def test_inc_needs_six_documents():
    with pytest.raises(ValueError):
        make_inc_instance(toy_corpus(5), np.random.default_rng(0))


def test_inc_deterministic_per_seed():
    corpus = toy_corpus(10)
    a = make_inc_instance(corpus, np.random.default_rng(42))
    b = make_inc_instance(corpus, np.random.default_rng(42))
    assert a == b


def test_inc_random_scorer_is_chance_level():
    corpus = toy_corpus(12)
    rng = np.random.default_rng(5)
    scorer_rng = np.random.default_rng(6)
    hits = 0
    n = 3000
    for _ in range(n):
        inst = make_inc_instance(corpus, rng)
        pick = int(np.argmin(scorer_rng.random(6)))
        hits += pick == inst.answer_index
    assert abs(hits / n - 1 / 6) < 0.02


# -- masked instances -----------------------------------------------------------


def scenario_graph():
    graph = FrameGraph()
    s = graph.intern("S_scenario")
    a, b, c = graph.intern("A"), graph.intern("B"), graph.intern("C")
    graph.add_edge(a, RelationType.INHERITANCE, s)
    graph.add_edge(b, RelationType.USING, s)
    # C has no scenario parent
    plain = graph.intern("Plain")
    graph.add_edge(c, RelationType.INHERITANCE, plain)
    return graph, a, b, c


def test_masked_removes_later_of_first_pair():
    graph, a, b, c = scenario_graph()
    seq = frames_seq([c, a, c, b, c])  # qualifying pair at (1, 3)
    inst = make_masked_instance(seq, graph)
    assert inst.removed_index == 3
    assert len(inst.impoverished.events) == 4
    assert inst.full_target is seq
    kept = [e for i, e in enumerate(seq.events) if i != 3]
    assert inst.impoverished.events == kept
    assert inst.impoverished.gold_frames == [c, a, c, c]


def test_masked_skips_without_pair():
    graph, a, b, c = scenario_graph()
    assert make_masked_instance(frames_seq([c, c, a]), graph) is None
    instances, skipped = build_masked_instances(
        [frames_seq([c, c, a]), frames_seq([a, b, c])], graph
    )
    assert skipped == 1 and len(instances) == 1


def test_masked_pair_detection_matches_double_loop():
    rng = np.random.default_rng(31)
    graph = FrameGraph()
    scen = [graph.intern(f"S{i}_scenario") for i in range(3)]
    kids = [graph.intern(f"K{i}") for i in range(9)]
    for i, k in enumerate(kids):
        graph.add_edge(k, RelationType.INHERITANCE, scen[i % 3])
    for _ in range(50):
        frames = [kids[int(rng.integers(9))] for _ in range(5)]
        seq = frames_seq(frames)
        expected = None
        for i in range(5):
            for j in range(i + 1, 5):
                if scenario_connected(graph, frames[i], frames[j]):
                    expected = j
                    break
            if expected is not None:
                break
        inst = make_masked_instance(seq, graph)
        if expected is None:
            assert inst is None
        else:
            assert inst.removed_index == expected


@settings(max_examples=40, deadline=None)
@given(data=st.data())
def test_masked_preserves_order_and_count(data):
    graph, a, b, c = scenario_graph()
    frames = data.draw(st.lists(st.sampled_from([a, b, c]), min_size=2, max_size=7))
    seq = frames_seq(frames)
    inst = make_masked_instance(seq, graph)
    if inst is None:
        return
    assert len(inst.impoverished.events) == len(seq.events) - 1
    it = iter(seq.events)
    for kept in inst.impoverished.events:  # order preserved: subsequence check
        for orig in it:
            if orig == kept:
                break
        else:
            pytest.fail("retained event out of order")


# -- file round trip -------------------------------------------------------------


def test_corpus_file_round_trip(tmp_path):
    graph, a, b, c = scenario_graph()
    corpus = [
        EventSequence(
            [EventTuple("run", "dog", "park", None), EventTuple("eat", "dog", "bone", "fast")],
            [a, NOFRAME],
        ),
        EventSequence([EventTuple("sit", "cat", "mat", "slow")], [b]),
    ]
    cpath, fpath = tmp_path / "c.txt", tmp_path / "c.frames"
    save_corpus(corpus, cpath, graph, fpath)
    loaded = load_corpus(cpath, graph, fpath)
    assert loaded == corpus


def test_corpus_truncation(tmp_path):
    graph = FrameGraph()
    corpus = [seq_of(7)]
    cpath = tmp_path / "c.txt"
    save_corpus(corpus, cpath, graph)
    loaded = load_corpus(cpath, graph, max_events=5)
    assert len(loaded[0]) == 5


def test_corpus_unknown_frame_name_rejected(tmp_path):
    graph = FrameGraph()
    (tmp_path / "c.txt").write_text("run dog park -\n", encoding="utf-8")
    (tmp_path / "c.frames").write_text("NotAFrame\n", encoding="utf-8")
    with pytest.raises(ValueError, match="NotAFrame"):
        load_corpus(tmp_path / "c.txt", graph, tmp_path / "c.frames")
