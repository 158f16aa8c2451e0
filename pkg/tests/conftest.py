import numpy as np
import pytest

from hievent.model import ModelConfig
from hievent.synthetic import SyntheticConfig, generate_synthetic_corpus


def tiny_model_config(**overrides) -> ModelConfig:
    base = dict(
        hidden_dim=32,
        word_emb_dim=16,
        frame_emb_dim=24,
        n_base_latents=5,
        n_comp_latents=3,
        relation_filter="all",
    )
    base.update(overrides)
    return ModelConfig(**base)


@pytest.fixture(scope="session")
def small_synthetic():
    cfg = SyntheticConfig(n_scenarios=3, frames_per_scenario=4, n_docs=60, events_per_doc=5)
    return generate_synthetic_corpus(cfg, np.random.default_rng(11))
