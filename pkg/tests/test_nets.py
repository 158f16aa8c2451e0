import numpy as np
import pytest
import torch

from hievent.nets import (
    AttentiveDecoder,
    SequenceEncoder,
    apply_injections,
    attend,
    gumbel_softmax_sample,
    inject_observed,
)


def gen(seed=0):
    return torch.Generator().manual_seed(seed)


# -- gumbel_softmax_sample ---------------------------------------------------


def test_gumbel_sample_is_simplex():
    g = gen(1)
    logits = torch.randn(100, 7, generator=gen(2))
    sample = gumbel_softmax_sample(logits, 0.5, g)
    assert torch.all(sample > 0)
    assert torch.allclose(sample.sum(-1), torch.ones(100), atol=1e-6)


def test_gumbel_rejects_nonpositive_temperature():
    with pytest.raises(ValueError):
        gumbel_softmax_sample(torch.zeros(3), 0.0, gen())
    with pytest.raises(ValueError):
        gumbel_softmax_sample(torch.zeros(3), -1.0, gen())


def test_gumbel_dominant_logit_wins():
    g = gen(3)
    logits = torch.zeros(1000, 5)
    logits[:, 2] = 20.0
    sample = gumbel_softmax_sample(logits, 0.5, g)
    freq = (sample.argmax(-1) == 2).float().mean()
    assert freq > 0.99


def test_gumbel_low_temperature_concentrates():
    g = gen(4)
    logits = torch.tensor([0.0, 5.0, -5.0]).repeat(1000, 1)
    sample = gumbel_softmax_sample(logits, 0.01, g)
    frac = (sample.max(-1).values > 0.99).float().mean()
    assert frac >= 0.99


def test_gumbel_differentiable():
    logits = torch.randn(4, 6, requires_grad=True)
    sample = gumbel_softmax_sample(logits, 0.5, gen(5))
    sample.sum().backward()  # constant, but the graph must exist
    assert logits.grad is not None


def test_gumbel_deterministic_per_seed():
    logits = torch.randn(8, 5, generator=gen(6))
    a = gumbel_softmax_sample(logits, 0.5, gen(7))
    b = gumbel_softmax_sample(logits, 0.5, gen(7))
    assert torch.equal(a, b)


# -- injection -----------------------------------------------------------------


def test_inject_none_is_identity():
    logits = torch.randn(5)
    assert torch.equal(inject_observed(logits, None, 100.0), logits)


def test_inject_arithmetic():
    out = inject_observed(torch.zeros(3), 2, 100.0)
    assert out.argmax() == 2
    assert float(out[2] - out[0]) == 100.0


def test_inject_rejects_out_of_range():
    with pytest.raises(ValueError):
        inject_observed(torch.zeros(3), 3, 100.0)


def test_inject_dominance_randomized():
    rng = np.random.default_rng(17)
    for _ in range(1000):
        logits = torch.from_numpy(rng.uniform(-5, 5, size=12))
        observed = int(rng.integers(12))
        assert int(inject_observed(logits, observed, 100.0).argmax()) == observed


def test_apply_injections_batched():
    logits = torch.zeros(3, 6)
    ids = torch.tensor([[2, -1], [-1, -1], [1, 4]])
    out = apply_injections(logits, ids, 50.0)
    assert out[0].argmax() == 2
    assert torch.equal(out[1], logits[1])
    assert float(out[2, 1]) == 50.0 and float(out[2, 4]) == 50.0


# -- attention -----------------------------------------------------------------


def test_attend_single_state():
    states = torch.randn(2, 1, 8)
    query = torch.randn(2, 8)
    ctx, weights = attend(query, states)
    assert torch.allclose(weights, torch.ones(2, 1))
    assert torch.allclose(ctx, states[:, 0])


def test_attend_identical_states_uniform():
    state = torch.randn(1, 1, 8)
    states = state.repeat(1, 5, 1)
    _, weights = attend(torch.randn(1, 8), states)
    assert torch.allclose(weights, torch.full((1, 5), 0.2), atol=1e-6)


def test_attend_weights_sum_to_one():
    g = gen(9)
    states = torch.randn(4, 7, 16, generator=g)
    query = torch.randn(4, 16, generator=g)
    _, weights = attend(query, states)
    assert torch.allclose(weights.sum(-1), torch.ones(4), atol=1e-6)


# -- encoder --------------------------------------------------------------------


def test_encoder_shape_contract():
    torch.manual_seed(0)
    enc = SequenceEncoder(16, 32, 2)
    states = enc(torch.randn(3, 11, 16))
    assert states.shape == (3, 11, 32)
    assert torch.isfinite(states).all()


def test_encoder_order_sensitive():
    torch.manual_seed(1)
    enc = SequenceEncoder(8, 16, 2)
    x = torch.randn(1, 6, 8)
    y = x.clone()
    y[:, [2, 3]] = y[:, [3, 2]]
    assert not torch.allclose(enc(x), enc(y))


def test_encoder_zero_params_zero_output():
    enc = SequenceEncoder(8, 16, 2)
    with torch.no_grad():
        for p in enc.parameters():
            p.zero_()
    out = enc(torch.randn(2, 5, 8))
    assert torch.allclose(out, torch.zeros_like(out))


def test_encoder_rejects_empty():
    enc = SequenceEncoder(8, 16, 1)
    with pytest.raises(ValueError):
        enc(torch.randn(2, 0, 8))


def test_encoder_rejects_odd_hidden():
    with pytest.raises(ValueError):
        SequenceEncoder(8, 15, 1)


# -- decoder -------------------------------------------------------------------


def make_decoder(vocab=20, hidden=16, emb=8, mem=12):
    torch.manual_seed(2)
    word_emb = torch.nn.Embedding(vocab, emb)
    return AttentiveDecoder(word_emb, hidden, 2, mem, vocab)


def test_decoder_output_shape():
    dec = make_decoder()
    targets = torch.randint(0, 20, (3, 9))
    memory = torch.randn(3, 5, 12)
    logits, states = dec(targets, memory)
    assert logits.shape == (3, 8, 20)
    assert states.shape == (3, 8, 16)


def test_decoder_sensitive_to_memory():
    dec = make_decoder()
    targets = torch.randint(0, 20, (2, 7))
    memory = torch.randn(2, 4, 12)
    logits1, _ = dec(targets, memory)
    bumped = memory.clone()
    bumped[:, 1] += 1.0
    logits2, _ = dec(targets, bumped)
    assert not torch.allclose(logits1, logits2)
