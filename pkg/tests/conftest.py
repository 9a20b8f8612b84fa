import numpy as np
import pytest

from notepheno.corpus import Vocabulary, build_vocabulary
from notepheno.embeddings import EmbeddingMatrix


@pytest.fixture
def small_vocab() -> Vocabulary:
    """PAD, UNK, and six real tokens with deterministic ids."""
    corpus = [["alcohol", "abuse", "denies", "heavy", "use", "pt"]] * 2
    return build_vocabulary(corpus, min_count=1)


@pytest.fixture
def small_embeddings(small_vocab) -> EmbeddingMatrix:
    rng = np.random.default_rng(1234)
    vectors = rng.normal(0.0, 0.4, size=(len(small_vocab), 6))
    vectors[0] = 0.0
    return EmbeddingMatrix(vectors=vectors)
