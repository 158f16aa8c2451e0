"""Two-layer hierarchical event model.

The base layer encodes the token stream and samples one latent frame per
event through an ancestral Gumbel-Softmax chain, with observed gold frames
injected into the sampling logits. The compression layer re-encodes the base
layer's predictions into a shorter chain of abstract frames, guided by
ontology parents of the predicted frames. Each layer reconstructs the full
token stream with its own attentive decoder.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .corpus import PAD, EventSequence, ObservationMask, Vocab, encode_frames, tokenize_sequence
from .nets import AttentiveDecoder, SequenceEncoder, apply_injections, attend, gumbel_softmax_sample
from .ontology import (
    ABSTAIN,
    N_RESERVED_FRAMES,
    FrameGraph,
    RelationFilter,
    sample_abstract_frame,
)

COMP_INPUT_MODES = ("inferred", "lexical")
COMBINE_MODES = ("none", "sum", "cat")


@dataclass
class ModelConfig:
    hidden_dim: int = 512
    encoder_layers: int = 2
    decoder_layers: int = 2
    word_emb_dim: int = 300
    frame_emb_dim: int = 500
    n_base_latents: int = 5
    n_comp_latents: int = 3
    gumbel_temperature: float = 0.5
    comp_gumbel_samples: int = 2
    injection_weight: float = 100.0
    epsilon: float = 0.9
    relation_filter: str = "inheritance"
    comp_input_mode: str = "inferred"
    compression_enabled: bool = True
    alpha1: float = 1.0
    alpha2: float = 1.0
    beta1: float = 1.0
    beta2: float = 1.0
    gamma: float = 0.1
    share_encdec: bool = False
    share_frame_emb: bool = False
    combine_mode: str = "none"
    straight_through: bool = False
    loss_kl_mode: str = "kl"  # "kl" | "cross_entropy" (the E_q[log p]-style variant)

    def __post_init__(self):
        if self.comp_input_mode == "inferred_frames":
            self.comp_input_mode = "inferred"
        if self.comp_input_mode not in COMP_INPUT_MODES:
            raise ValueError(f"comp_input_mode must be one of {COMP_INPUT_MODES}")
        if self.combine_mode not in COMBINE_MODES:
            raise ValueError(f"combine_mode must be one of {COMBINE_MODES}")
        if self.loss_kl_mode not in ("kl", "cross_entropy"):
            raise ValueError("loss_kl_mode must be 'kl' or 'cross_entropy'")
        if self.gumbel_temperature <= 0:
            raise ValueError("gumbel_temperature must be positive")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must be in [0, 1]")
        if self.hidden_dim % 2 != 0:
            raise ValueError("hidden_dim must be even")
        RelationFilter.parse(self.relation_filter)  # validate early

    def filter(self) -> RelationFilter:
        return RelationFilter.parse(self.relation_filter)


class RngStreams:
    """Independent per-consumer random streams derived from one seed.

    Keeping the streams separate means toggling one consumer (e.g. the
    compression layer) cannot shift another consumer's draws.
    """

    def __init__(self, seed: int):
        self.seed = seed
        keys = np.random.SeedSequence(seed).spawn(6)
        self.mask = np.random.default_rng(keys[0])
        self.shuffle = np.random.default_rng(keys[1])
        self.guidance = np.random.default_rng(keys[2])
        self.contrastive = np.random.default_rng(keys[3])
        self.gumbel_base = torch.Generator().manual_seed(int(keys[4].generate_state(1)[0]))
        self.gumbel_comp = torch.Generator().manual_seed(int(keys[5].generate_state(1)[0]))


@dataclass
class Batch:
    """Uniform-shape batch: every row has the same event count."""

    tokens: torch.Tensor  # B x T encoder/decoder-input ids
    n_events: int
    gold_frames: torch.Tensor  # B x M
    observed: torch.Tensor  # B x M bool
    target_tokens: torch.Tensor | None = None  # defaults to tokens
    target_n_events: int | None = None

    @property
    def size(self) -> int:
        return self.tokens.shape[0]

    @property
    def targets(self) -> torch.Tensor:
        return self.tokens if self.target_tokens is None else self.target_tokens


def make_batch(
    seqs: list[EventSequence],
    vocab: Vocab,
    masks: list[ObservationMask] | None = None,
    targets: list[EventSequence] | None = None,
) -> Batch:
    n_events = len(seqs[0])
    if any(len(s) != n_events for s in seqs):
        raise ValueError("batch rows must share an event count")
    tokens = torch.tensor([tokenize_sequence(s, vocab) for s in seqs], dtype=torch.long)
    gold = torch.tensor([encode_frames(vocab, s.gold_frames) for s in seqs], dtype=torch.long)
    if masks is None:
        observed = torch.zeros(len(seqs), n_events, dtype=torch.bool)
    else:
        observed = torch.tensor([m.observed for m in masks], dtype=torch.bool)
        observed &= gold != 0  # NOFRAME is never observable
    target_tokens, target_n = None, None
    if targets is not None:
        target_n = len(targets[0])
        if any(len(t) != target_n for t in targets):
            raise ValueError("target rows must share an event count")
        target_tokens = torch.tensor(
            [tokenize_sequence(t, vocab) for t in targets], dtype=torch.long
        )
    return Batch(tokens, n_events, gold, observed, target_tokens, target_n)


@dataclass
class LatentChain:
    logits: torch.Tensor  # B x n x F, pre-injection scores
    log_q: torch.Tensor  # B x n x F, log softmax of logits
    prior_log: torch.Tensor  # B x n x F, log softmax of the learned prior
    relaxed: torch.Tensor  # B x n x F, simplex vectors
    hard: torch.Tensor  # B x n frame ids
    injected: torch.Tensor  # B x n x K injected ids (< 0 = none)


class FrameChainLayer(nn.Module):
    """One ancestral chain: score, inject, sample, recurse on the hard frame."""

    def __init__(self, n_frames: int, frame_emb_dim: int, hidden_dim: int,
                 frame_emb: nn.Embedding | None = None):
        super().__init__()
        self.n_frames = n_frames
        self.frame_emb = frame_emb if frame_emb is not None else nn.Embedding(
            n_frames, frame_emb_dim)
        self.bos_emb = nn.Parameter(torch.randn(frame_emb_dim) * 0.1)
        self.query_proj = nn.Linear(frame_emb_dim, hidden_dim)
        self.scorer = nn.Linear(2 * hidden_dim, n_frames)
        self.prior_head = nn.Linear(frame_emb_dim, n_frames)

    def _recur_emb(self, relaxed: torch.Tensor, hard: torch.Tensor,
                   straight_through: bool) -> torch.Tensor:
        if straight_through:
            onehot = F.one_hot(hard, self.n_frames).to(relaxed.dtype)
            mix = onehot - relaxed.detach() + relaxed
            return mix @ self.frame_emb.weight
        return self.frame_emb(hard)

    def sample_chain(
        self,
        enc_states: torch.Tensor,
        injections: torch.Tensor | None,
        n_latents: int,
        generator: torch.Generator,
        n_gumbel_samples: int,
        temperature: float,
        injection_weight: float,
        train: bool,
        straight_through: bool = False,
    ) -> LatentChain:
        if n_latents < 1:
            raise ValueError("n_latents must be >= 1")
        if injections is not None and injections.shape[1] != n_latents:
            raise ValueError(
                f"injection table has {injections.shape[1]} steps for {n_latents} latents"
            )
        B = enc_states.shape[0]
        dtype = enc_states.dtype
        prev_emb = self.bos_emb.to(dtype).unsqueeze(0).expand(B, -1)
        logits_l, logq_l, prior_l, relaxed_l, hard_l, inj_l = [], [], [], [], [], []
        for i in range(n_latents):
            query = self.query_proj(prev_emb)
            context, _ = attend(query, enc_states)
            logits = self.scorer(torch.cat([query, context], dim=-1))
            prior_logits = self.prior_head(prev_emb)
            step_inj = (
                injections[:, i]
                if injections is not None
                else torch.full((B, 1), -1, dtype=torch.long)
            )
            sampling_logits = apply_injections(logits, step_inj, injection_weight)
            if train:
                draws = [
                    gumbel_softmax_sample(sampling_logits, temperature, generator)
                    for _ in range(n_gumbel_samples)
                ]
                relaxed = torch.stack(draws).mean(dim=0)
            else:
                relaxed = torch.softmax(sampling_logits, dim=-1)
            hard = relaxed.argmax(dim=-1)
            logits_l.append(logits)
            logq_l.append(torch.log_softmax(logits, dim=-1))
            prior_l.append(torch.log_softmax(prior_logits, dim=-1))
            relaxed_l.append(relaxed)
            hard_l.append(hard)
            inj_l.append(step_inj)
            prev_emb = self._recur_emb(relaxed, hard, straight_through)
        return LatentChain(
            torch.stack(logits_l, 1),
            torch.stack(logq_l, 1),
            torch.stack(prior_l, 1),
            torch.stack(relaxed_l, 1),
            torch.stack(hard_l, 1),
            torch.stack(inj_l, 1),
        )

    def latent_embeddings(self, chain: LatentChain) -> torch.Tensor:
        """Soft frame embeddings (relaxed mixture), the decoder's memory."""
        return chain.relaxed @ self.frame_emb.weight


def observation_injections(
    pairs: list[tuple[int, int]], n_latents: int, batch_size: int = 1
) -> torch.Tensor:
    """Injection table (B x n_latents x 1) from (step index, frame id) pairs."""
    inj = torch.full((batch_size, n_latents, 1), -1, dtype=torch.long)
    for index, fid in pairs:
        if not 0 <= index < n_latents:
            raise ValueError(f"observation index {index} outside chain of {n_latents}")
        inj[:, index, 0] = fid
    return inj


def guidance_span(step: int, n_base: int, n_comp: int) -> range:
    """Base positions guiding compression step `step` (proportional spans)."""
    lo = (step * n_base) // n_comp
    hi = ((step + 1) * n_base) // n_comp
    return range(lo, max(hi, lo + 1) if step < n_comp else hi)


def build_compression_guidance(
    base_hard: torch.Tensor,
    graph: FrameGraph,
    filt: RelationFilter,
    rng: np.random.Generator | list[np.random.Generator],
    n_comp: int,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Ontology parents for each predicted base frame, mapped onto comp steps.

    Returns (injections B x n_comp x 2, abstract B x M). The injection pair
    is (abstract frame, anchoring base frame) at the first span position
    whose guidance is not ABSTAIN; (-1, -1) when the whole span abstains.
    rng may be one shared generator (training) or one per batch row
    (evaluation, where draws must not depend on batch composition).
    """
    B, M = base_hard.shape
    abstract = torch.full((B, M), ABSTAIN, dtype=torch.long)
    for b in range(B):
        row_rng = rng[b] if isinstance(rng, list) else rng
        for m in range(M):
            fid = int(base_hard[b, m])
            if fid >= N_RESERVED_FRAMES:
                abstract[b, m] = sample_abstract_frame(graph, fid, filt, row_rng)
    injections = torch.full((B, n_comp, 2), -1, dtype=torch.long)
    for b in range(B):
        for j in range(n_comp):
            for m in guidance_span(j, M, n_comp):
                if m < M and int(abstract[b, m]) != ABSTAIN:
                    injections[b, j, 0] = abstract[b, m]
                    injections[b, j, 1] = base_hard[b, m]
                    break
    return injections, abstract


def combine_encodings(
    base_memory: torch.Tensor,
    comp_memory: torch.Tensor | None,
    mode: str,
    comp_proj: nn.Linear | None = None,
) -> tuple[torch.Tensor, torch.Tensor | None]:
    """Decoder conditioning sets for (base decoder, compression decoder)."""
    if mode == "none" or comp_memory is None:
        return base_memory, comp_memory
    if mode == "cat":
        combined = torch.cat([base_memory, comp_memory], dim=1)
        return combined, combined
    if mode == "sum":
        if base_memory.shape[-1] != comp_memory.shape[-1]:
            raise ValueError("sum combination needs matching embedding dims")
        if comp_proj is None or comp_proj.out_features != base_memory.shape[1]:
            raise ValueError(
                f"sum combination projects {comp_memory.shape[1]} latents to "
                f"{base_memory.shape[1]}; model was built for "
                f"{comp_proj.out_features if comp_proj else 'no'} base latents"
            )
        projected = comp_proj(comp_memory.transpose(1, 2)).transpose(1, 2)
        combined = base_memory + projected
        return combined, combined
    raise ValueError(f"unknown combine mode {mode!r}")


@dataclass
class ConstructionPlan:
    build_compression: bool
    share_encdec: bool
    share_frame_emb: bool
    combine_mode: str


def apply_ablation(cfg: ModelConfig) -> ConstructionPlan:
    """Resolve the ablation flags into a construction plan."""
    return ConstructionPlan(
        build_compression=cfg.compression_enabled,
        share_encdec=cfg.share_encdec,
        share_frame_emb=cfg.share_frame_emb,
        combine_mode=cfg.combine_mode,
    )


@dataclass
class ModelOutput:
    base_chain: LatentChain
    base_logits: torch.Tensor
    base_states: torch.Tensor
    comp_chain: LatentChain | None = None
    comp_logits: torch.Tensor | None = None
    comp_states: torch.Tensor | None = None
    abstract_frames: torch.Tensor | None = None  # B x M sampled guidance per base frame
    comp_injections: torch.Tensor | None = None  # B x n_comp x 2


@dataclass
class LossBundle:
    recon_base: torch.Tensor
    recon_comp: torch.Tensor
    kl_base: torch.Tensor
    kl_comp: torch.Tensor
    frame_cls: torch.Tensor
    total: torch.Tensor = field(init=False)
    weights: tuple[float, float, float, float, float] = (1.0, 1.0, 1.0, 1.0, 0.1)

    def __post_init__(self):
        a1, a2, b1, b2, g = self.weights
        # float64 accumulation so the total is bitwise recomputable from the parts
        self.total = (
            a1 * self.recon_base.double()
            + a2 * self.recon_comp.double()
            + b1 * self.kl_base.double()
            + b2 * self.kl_comp.double()
            + g * self.frame_cls.double()
        )

    def to_floats(self) -> dict[str, float]:
        return {
            "L_r1": float(self.recon_base.detach()),
            "L_r2": float(self.recon_comp.detach()),
            "L_KL1": float(self.kl_base.detach()),
            "L_KL2": float(self.kl_comp.detach()),
            "L_c": float(self.frame_cls.detach()),
            "total": float(self.total.detach()),
        }


def token_cross_entropy(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Mean cross-entropy per non-PAD predicted token."""
    gold = targets[:, 1:]
    flat = F.cross_entropy(
        logits.reshape(-1, logits.shape[-1]), gold.reshape(-1), reduction="none"
    )
    keep = (gold != PAD).reshape(-1)
    return flat[keep].mean()


def sequence_nll(logits: torch.Tensor, targets: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-row (NLL sum, predicted-token count) over non-PAD positions."""
    gold = targets[:, 1:]
    flat = F.cross_entropy(
        logits.reshape(-1, logits.shape[-1]), gold.reshape(-1), reduction="none"
    ).reshape(gold.shape)
    keep = gold != PAD
    return (flat * keep).sum(dim=1), keep.sum(dim=1)


def _chain_kl(chain: LatentChain, mode: str) -> torch.Tensor:
    q = chain.log_q.exp()
    if mode == "kl":
        per_step = (q * (chain.log_q - chain.prior_log)).sum(dim=-1)
    else:  # cross_entropy: -E_q[log p]
        per_step = -(q * chain.prior_log).sum(dim=-1)
    return per_step.mean()


def _frame_classification(chain: LatentChain, gold: torch.Tensor, observed: torch.Tensor,
                          dtype: torch.dtype) -> torch.Tensor:
    if not bool(observed.any()):
        return torch.zeros((), dtype=dtype)
    log_q = chain.log_q
    picked = log_q.gather(-1, gold.unsqueeze(-1)).squeeze(-1)  # B x M
    return -(picked[observed].mean())


def compute_losses(batch: Batch, out: ModelOutput, cfg: ModelConfig) -> LossBundle:
    """The five-term objective; compression terms are zero when that layer is off."""
    dtype = out.base_logits.dtype
    targets = batch.targets
    recon_base = token_cross_entropy(out.base_logits, targets)
    kl_base = _chain_kl(out.base_chain, cfg.loss_kl_mode)
    frame_cls = _frame_classification(out.base_chain, batch.gold_frames, batch.observed, dtype)
    if out.comp_logits is not None:
        recon_comp = token_cross_entropy(out.comp_logits, targets)
        kl_comp = _chain_kl(out.comp_chain, cfg.loss_kl_mode)
    else:
        recon_comp = torch.zeros((), dtype=dtype)
        kl_comp = torch.zeros((), dtype=dtype)
    return LossBundle(
        recon_base, recon_comp, kl_base, kl_comp, frame_cls,
        weights=(cfg.alpha1, cfg.alpha2, cfg.beta1, cfg.beta2, cfg.gamma),
    )


def _event_token_positions(n_events: int) -> torch.Tensor:
    # Event m occupies token positions 1+5m .. 4+5m in the layout.
    starts = 1 + 5 * torch.arange(n_events)
    return starts.unsqueeze(1) + torch.arange(4).unsqueeze(0)  # M x 4


class HierarchicalEventModel(nn.Module):
    def __init__(self, cfg: ModelConfig, lex_size: int, n_frames: int, seed: int | None = None):
        super().__init__()
        if seed is not None:
            torch.manual_seed(seed)
        self.cfg = cfg
        self.lex_size = lex_size
        self.n_frames = n_frames
        plan = apply_ablation(cfg)
        self.plan = plan

        # Base layer first: its initialization draws must not depend on
        # whether the compression layer is built.
        self.word_emb = nn.Embedding(lex_size, cfg.word_emb_dim, padding_idx=PAD)
        self.base_encoder = SequenceEncoder(cfg.word_emb_dim, cfg.hidden_dim, cfg.encoder_layers)
        self.base_layer = FrameChainLayer(n_frames, cfg.frame_emb_dim, cfg.hidden_dim)
        self.base_decoder = AttentiveDecoder(
            self.word_emb, cfg.hidden_dim, cfg.decoder_layers, cfg.frame_emb_dim, lex_size
        )

        self.has_compression = plan.build_compression
        if plan.build_compression:
            self.comp_in_proj = nn.Linear(cfg.frame_emb_dim, cfg.word_emb_dim)
            self.comp_encoder = (
                self.base_encoder
                if plan.share_encdec
                else SequenceEncoder(cfg.word_emb_dim, cfg.hidden_dim, cfg.encoder_layers)
            )
            shared_emb = self.base_layer.frame_emb if plan.share_frame_emb else None
            self.comp_layer = FrameChainLayer(
                n_frames, cfg.frame_emb_dim, cfg.hidden_dim, frame_emb=shared_emb
            )
            self.comp_decoder = (
                self.base_decoder
                if plan.share_encdec
                else AttentiveDecoder(
                    self.word_emb, cfg.hidden_dim, cfg.decoder_layers,
                    cfg.frame_emb_dim, lex_size,
                )
            )
            if plan.combine_mode == "sum":
                self.comb_proj = nn.Linear(cfg.n_comp_latents, cfg.n_base_latents, bias=False)
            else:
                self.comb_proj = None
        else:
            self.comp_in_proj = None
            self.comp_encoder = None
            self.comp_layer = None
            self.comp_decoder = None
            self.comb_proj = None

    # -- pieces ------------------------------------------------------------

    def encode(self, tokens: torch.Tensor) -> torch.Tensor:
        if tokens.shape[1] == 0:
            raise ValueError("empty token input")
        return self.base_encoder(self.word_emb(tokens))

    def compression_inputs(self, batch: Batch, base_chain: LatentChain) -> torch.Tensor:
        """Per-event input embeddings for the compression encoder."""
        if self.cfg.comp_input_mode == "inferred":
            emb = self.comp_layer._recur_emb(
                base_chain.relaxed, base_chain.hard, self.cfg.straight_through
            )
        else:  # lexical: pooled word embeddings of each original event tuple
            pos = _event_token_positions(batch.n_events)  # M x 4
            tok = batch.tokens[:, pos.reshape(-1)].reshape(batch.size, batch.n_events, 4)
            emb = self.word_emb(tok).mean(dim=2)
            return emb
        return self.comp_in_proj(emb)

    def base_injections(self, batch: Batch, train: bool) -> torch.Tensor | None:
        if not train or not bool(batch.observed.any()):
            return None
        inj = torch.where(batch.observed, batch.gold_frames, torch.full_like(batch.gold_frames, -1))
        return inj.unsqueeze(-1)

    # -- full forward --------------------------------------------------------

    def forward(
        self,
        batch: Batch,
        graph: FrameGraph,
        streams: RngStreams,
        train: bool,
        use_compression: bool | None = None,
        guidance_rngs: list[np.random.Generator] | None = None,
    ) -> ModelOutput:
        cfg = self.cfg
        use_comp = self.has_compression if use_compression is None else (
            use_compression and self.has_compression
        )
        enc = self.encode(batch.tokens)
        base_chain = self.base_layer.sample_chain(
            enc,
            self.base_injections(batch, train),
            batch.n_events,
            streams.gumbel_base,
            1,
            cfg.gumbel_temperature,
            cfg.injection_weight,
            train,
            cfg.straight_through,
        )
        comp_chain = abstract = comp_inj = None
        if use_comp:
            comp_inj, abstract = build_compression_guidance(
                base_chain.hard,
                graph,
                cfg.filter(),
                guidance_rngs if guidance_rngs is not None else streams.guidance,
                cfg.n_comp_latents,
            )
            comp_enc = self.comp_encoder(self.compression_inputs(batch, base_chain))
            comp_chain = self.comp_layer.sample_chain(
                comp_enc,
                comp_inj,
                cfg.n_comp_latents,
                streams.gumbel_comp,
                cfg.comp_gumbel_samples,
                cfg.gumbel_temperature,
                cfg.injection_weight,
                train,
                cfg.straight_through,
            )

        base_memory = self.base_layer.latent_embeddings(base_chain)
        comp_memory = self.comp_layer.latent_embeddings(comp_chain) if use_comp else None
        mem_base, mem_comp = combine_encodings(
            base_memory, comp_memory, cfg.combine_mode if use_comp else "none", self.comb_proj
        )
        targets = batch.targets
        base_logits, base_states = self.base_decoder(targets, mem_base)
        comp_logits = comp_states = None
        if use_comp:
            comp_logits, comp_states = self.comp_decoder(targets, mem_comp)
        return ModelOutput(
            base_chain, base_logits, base_states,
            comp_chain, comp_logits, comp_states, abstract, comp_inj,
        )

    def parameter_manifest(self) -> dict[str, tuple[int, ...]]:
        """Named parameter shapes; shared parameters appear once."""
        return {name: tuple(p.shape) for name, p in self.named_parameters()}
