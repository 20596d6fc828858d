import pytest

from retrieval_lab.synthgen import WorldConfig, generate_world


SMALL_WORLD_CONFIG = WorldConfig(
    n_entities=12,
    n_attributes=8,
    n_passages=120,
    n_train_questions=40,
    n_contrast_questions=10,
    n_heldout_questions=10,
    paraphrases_per_question=2,
    meqs_per_question=2,
    vocab_size=60,
    seed=3,
)


@pytest.fixture(scope="session")
def small_world():
    return generate_world(SMALL_WORLD_CONFIG)
