"""Shared fixtures: a small corpus and trained models, built once per session."""

import pytest

from endgate.arbitrator import train_arbitrator
from endgate.corpus import GenConfig, generate_corpus, split_corpus
from endgate.firstpass import DecoderSim, train_frame_model
from endgate.nnkit import TrainConfig


@pytest.fixture(scope="session")
def small_corpus():
    """Fast corpus for structural tests (no training quality claims)."""
    return generate_corpus(GenConfig(seed=9, n_complete=24, n_hesitation=18,
                                     n_incomplete=18))


@pytest.fixture(scope="session")
def trained_setup():
    """Moderate corpus plus trained frame model, decoder sim and arbitrator.

    Shared by every test that needs realistic posteriors; the split seeds and
    training seeds are fixed so results are reproducible.
    """
    corpus = generate_corpus(GenConfig(seed=1, n_complete=160, n_hesitation=120,
                                       n_incomplete=120))
    train, dev, test = split_corpus(corpus, (0.6, 0.15, 0.25), seed=5)
    frame_model = train_frame_model(
        train, TrainConfig(learning_rate=0.05, epochs=2, batch_size=64, seed=3))
    sim = DecoderSim(seed=11)
    arb = train_arbitrator(
        train, frame_model, sim,
        TrainConfig(learning_rate=0.05, epochs=3, batch_size=32, seed=7))
    return {
        "corpus": corpus,
        "train": train,
        "dev": dev,
        "test": test,
        "frame_model": frame_model,
        "sim": sim,
        "arbitrator": arb,
    }
