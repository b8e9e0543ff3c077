"""Shared fixtures: the committed corpus and a small trained pipeline.

The trained models here are deliberately tiny (a few seconds each); the
acceptance suite trains its own properly sized ones.
"""

from pathlib import Path

import pytest

from toygen import make_toy_corpus
from unitsel.augment import TRANSPOSE_ONLY, AugmentConfig, build_library, transpose_corpus
from unitsel.autoencoder import embed_library, train_autoencoder
from unitsel.corpus import load_corpus
from unitsel.dssm import make_training_pairs, train_dssm
from unitsel.features import build_vocab
from unitsel.lm import build_note_vocab, tokenize, train_lm
from unitsel.nn import TrainConfig

DATA_DIR = Path(__file__).parent / "data"
FIXTURE_CORPUS = DATA_DIR / "fixture.cor"


@pytest.fixture(scope="session")
def fixture_corpus():
    return load_corpus(FIXTURE_CORPUS)


@pytest.fixture(scope="session")
def small_setup():
    """A fully trained (tiny) pipeline over a 20-piece toy corpus."""
    corpus = make_toy_corpus(20, n_measures=12, seed=101)
    cfg = AugmentConfig(
        unit_length=1, transpose_shifts=(-1, 0, 1), mode=TRANSPOSE_ONLY
    )
    lib = build_library(corpus, cfg)
    vocab = build_vocab(lib)
    tcorp = transpose_corpus(corpus, cfg)
    pairs = make_training_pairs(tcorp, 1)
    dssm_model = train_dssm(
        pairs,
        vocab,
        TrainConfig(epochs=20, seed=101, learning_rate=0.2),
        width=64,
        embedding=32,
    )
    note_vocab = build_note_vocab(tcorp)
    streams = [tokenize(p, note_vocab) for p in tcorp.pieces]
    lm_model = train_lm(
        streams,
        note_vocab,
        TrainConfig(epochs=15, seed=101, learning_rate=1.0, dropout_keep=0.8),
        hidden=48,
    )
    ae_model = train_autoencoder(
        lib,
        vocab,
        TrainConfig(epochs=15, seed=101, batch_size=16),
        hidden=64,
        embedding=32,
    )
    return {
        "corpus": corpus,
        "augment_cfg": cfg,
        "lib": lib,
        "vocab": vocab,
        "tcorp": tcorp,
        "pairs": pairs,
        "dssm": dssm_model,
        "lm": lm_model,
        "note_vocab": note_vocab,
        "ae": ae_model,
        "ae_elib": embed_library(ae_model, lib),
        "dssm_elib": embed_library(dssm_model, lib),
    }
