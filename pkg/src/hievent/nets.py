"""Encoder, attention, relaxed categorical sampling, attentive decoder.

All stochastic draws go through explicit torch.Generator objects so runs are
reproducible stream-by-stream.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

_GUMBEL_EPS = 1e-20


def gumbel_softmax_sample(
    logits: torch.Tensor, temperature: float, generator: torch.Generator
) -> torch.Tensor:
    """softmax((logits + Gumbel noise) / temperature); differentiable in logits."""
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    u = torch.rand(logits.shape, generator=generator, dtype=logits.dtype)
    g = -torch.log(-torch.log(u + _GUMBEL_EPS) + _GUMBEL_EPS)
    return torch.softmax((logits + g) / temperature, dim=-1)


def inject_observed(logits: torch.Tensor, observed: int | None, weight: float) -> torch.Tensor:
    """Add weight * onehot(observed) to the final axis; identity when observed is None."""
    if observed is None:
        return logits
    if not 0 <= observed < logits.shape[-1]:
        raise ValueError(f"observed frame {observed} outside logit dimension")
    onehot = torch.zeros_like(logits)
    onehot[..., observed] = 1.0
    return logits + weight * onehot


def apply_injections(logits: torch.Tensor, ids: torch.Tensor, weight: float) -> torch.Tensor:
    """Batched injection: ids is B x K, entries < 0 mean no injection."""
    out = logits
    for k in range(ids.shape[1]):
        col = ids[:, k]
        valid = col >= 0
        if valid.any():
            onehot = torch.zeros_like(logits)
            rows = valid.nonzero(as_tuple=True)[0]
            onehot[rows, col[rows]] = 1.0
            out = out + weight * onehot
    return out


def attend(query: torch.Tensor, states: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Scaled dot-product attention.

    query: (B, H) or (B, Q, H); states: (B, T, H). Returns the weighted
    context with matching leading shape and the softmax weights.
    """
    squeeze = query.dim() == 2
    if squeeze:
        query = query.unsqueeze(1)
    scale = 1.0 / math.sqrt(query.shape[-1])
    scores = torch.bmm(query, states.transpose(1, 2)) * scale  # B x Q x T
    weights = torch.softmax(scores, dim=-1)
    context = torch.bmm(weights, states)
    if squeeze:
        return context.squeeze(1), weights.squeeze(1)
    return context, weights


class SequenceEncoder(nn.Module):
    """Bidirectional GRU producing one hidden_dim state per input position."""

    def __init__(self, input_dim: int, hidden_dim: int, num_layers: int):
        super().__init__()
        if hidden_dim % 2 != 0:
            raise ValueError("hidden_dim must be even (split across directions)")
        self.gru = nn.GRU(
            input_dim,
            hidden_dim // 2,
            num_layers=num_layers,
            bidirectional=True,
            batch_first=True,
        )

    def forward(self, embedded: torch.Tensor) -> torch.Tensor:
        if embedded.shape[1] == 0:
            raise ValueError("empty input sequence")
        states, _ = self.gru(embedded)
        return states


class AttentiveDecoder(nn.Module):
    """Auto-regressive GRU decoder attending over latent frame embeddings.

    Teacher-forced: given targets (BOS ... EOS) it returns logits predicting
    positions 1..T from positions 0..T-1.
    """

    def __init__(
        self,
        word_emb: nn.Embedding,
        hidden_dim: int,
        num_layers: int,
        memory_dim: int,
        vocab_size: int,
    ):
        super().__init__()
        self.word_emb = word_emb
        self.gru = nn.GRU(word_emb.embedding_dim, hidden_dim, num_layers, batch_first=True)
        self.memory_proj = nn.Linear(memory_dim, hidden_dim)
        self.out = nn.Linear(2 * hidden_dim, vocab_size)

    def forward(
        self, targets: torch.Tensor, memory: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """targets: B x T token ids (BOS-initial); memory: B x L x memory_dim.

        Returns (logits B x (T-1) x V, decoder states B x (T-1) x H).
        """
        emb = self.word_emb(targets[:, :-1])
        states, _ = self.gru(emb)
        keys = self.memory_proj(memory)
        context, _ = attend(states, keys)
        logits = self.out(torch.cat([states, context], dim=-1))
        return logits, states

    @torch.no_grad()
    def greedy_decode(
        self, memory: torch.Tensor, bos: int, eos: int, max_len: int
    ) -> list[list[int]]:
        """Greedy generation from BOS until EOS or max_len, per batch row."""
        B = memory.shape[0]
        keys = self.memory_proj(memory)
        tokens = torch.full((B, 1), bos, dtype=torch.long)
        hidden = None
        done = [False] * B
        out: list[list[int]] = [[] for _ in range(B)]
        for _ in range(max_len):
            emb = self.word_emb(tokens)
            states, hidden = self.gru(emb, hidden)
            context, _ = attend(states[:, -1], keys)
            logits = self.out(torch.cat([states[:, -1], context], dim=-1))
            nxt = logits.argmax(dim=-1)
            for b in range(B):
                if not done[b]:
                    tok = int(nxt[b])
                    out[b].append(tok)
                    if tok == eos:
                        done[b] = True
            if all(done):
                break
            tokens = nxt.unsqueeze(1)
        return out
