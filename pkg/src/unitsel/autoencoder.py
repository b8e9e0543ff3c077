"""Measure/unit autoencoder and music reconstruction by unit selection.

The encoder compresses a unit's count vector to a 128-length embedding;
the decoder mirrors it back. Training drives the reconstruction to be
more cosine-similar to its own input than reconstructions of random other
units are (softmax over the true candidate plus sampled negatives).
Reconstruction of music then replaces each query unit with the library
unit whose embedding is nearest by cosine similarity -- a target cost
only, no join cost.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._util import chunked_map
from .augment import UnitLibrary
from .corpus import ModelArchive
from .features import FeatureVocabulary, extract, extract_matrix
from .music import Piece, Unit, concatenate_units, slice_units
from .nn import (
    DenseLayer,
    TrainConfig,
    cosine_rows,
    cosine_softmax_grads,
    dropout_mask,
    sgd_step,
    stream_rng,
)

EMBED_DIM_DEFAULT = 128
HIDDEN_DIM_DEFAULT = 512


class AutoencoderModel:
    """Hourglass dense stack; all layers leaky-rectified."""

    kind = "autoencoder"

    def __init__(
        self,
        vocab: FeatureVocabulary,
        hidden: int = HIDDEN_DIM_DEFAULT,
        embedding: int = EMBED_DIM_DEFAULT,
        rng: np.random.Generator | None = None,
    ):
        if rng is None:
            rng = np.random.default_rng(0)
        d = vocab.dimension
        self.vocab = vocab
        self.hidden = hidden
        self.embedding = embedding
        self.enc1 = DenseLayer(d, hidden, "leaky_relu", rng=rng)
        self.enc2 = DenseLayer(hidden, embedding, "leaky_relu", rng=rng)
        self.dec1 = DenseLayer(embedding, hidden, "leaky_relu", rng=rng)
        self.dec2 = DenseLayer(hidden, d, "leaky_relu", rng=rng)
        self.loss_curve: list[float] = []

    @property
    def vocab_hash(self) -> str:
        return self.vocab.hash_hex()

    @property
    def layers(self) -> list[DenseLayer]:
        return [self.enc1, self.enc2, self.dec1, self.dec2]

    @property
    def params(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params]

    def encode_features(self, x: np.ndarray) -> np.ndarray:
        """Deterministic embedding of feature rows (dropout off)."""
        h, _ = self.enc1.forward(x)
        e, _ = self.enc2.forward(h)
        return e

    def encode_unit(self, u: Unit) -> np.ndarray:
        return self.encode_features(extract(u, self.vocab)[None, :])[0]

    def reconstruct_features(self, x: np.ndarray) -> np.ndarray:
        e = self.encode_features(x)
        g, _ = self.dec1.forward(e)
        r, _ = self.dec2.forward(g)
        return r

    def to_archive(self) -> ModelArchive:
        d = self.vocab.dimension
        return ModelArchive(
            kind=self.kind,
            hyperparameters={"hidden": self.hidden, "embedding": self.embedding},
            layer_dims=[d, self.hidden, self.embedding, self.hidden, d],
            weights=[
                ("enc1.w", self.enc1.w),
                ("enc1.b", self.enc1.b),
                ("enc2.w", self.enc2.w),
                ("enc2.b", self.enc2.b),
                ("dec1.w", self.dec1.w),
                ("dec1.b", self.dec1.b),
                ("dec2.w", self.dec2.w),
                ("dec2.b", self.dec2.b),
            ],
            vocabulary=self.vocab.snapshot(),
        )

    @classmethod
    def from_archive(cls, archive: ModelArchive) -> "AutoencoderModel":
        if archive.kind != "autoencoder":
            raise ValueError(f"expected an autoencoder archive, got {archive.kind!r}")
        vocab = FeatureVocabulary.from_snapshot(archive.vocabulary)
        hp = archive.hyperparameters
        model = cls(vocab, hidden=int(hp["hidden"]), embedding=int(hp["embedding"]))
        for layer, name in (
            (model.enc1, "enc1"),
            (model.enc2, "enc2"),
            (model.dec1, "dec1"),
            (model.dec2, "dec2"),
        ):
            w = archive.weight(f"{name}.w")
            b = archive.weight(f"{name}.b")
            if w.shape != layer.w.shape or b.shape != layer.b.shape:
                raise ValueError(f"archive layer {name} has wrong dimensions")
            layer.w = w
            layer.b = b
        return model


def _recon_with_dropout(model, x, masks):
    h1, c1 = model.enc1.forward(x)
    h1d = h1 * masks[0]
    e, c2 = model.enc2.forward(h1d)
    ed = e * masks[1]
    g1, c3 = model.dec1.forward(ed)
    g1d = g1 * masks[2]
    r, c4 = model.dec2.forward(g1d)
    return r, (c1, c2, c3, c4, masks)


def _recon_backward(model, dr, cache):
    c1, c2, c3, c4, masks = cache
    dg1d, dw4, db4 = model.dec2.backward(dr, c4)
    dg1 = dg1d * masks[2]
    ded, dw3, db3 = model.dec1.backward(dg1, c3)
    de = ded * masks[1]
    dh1d, dw2, db2 = model.enc2.backward(de, c2)
    dh1 = dh1d * masks[0]
    _, dw1, db1 = model.enc1.backward(dh1, c1)
    return [dw1, db1, dw2, db2, dw3, db3, dw4, db4]


def autoencoder_batch_loss(
    model: AutoencoderModel,
    x: np.ndarray,
    batch_idx: np.ndarray,
    negatives: np.ndarray,
    masks=None,
) -> tuple[float, list[np.ndarray]]:
    """Mean relevance loss of a batch and gradients for all parameters.

    ``negatives`` is (batch, k) row indices into ``x``; candidate vectors
    are the model's reconstructions of the example itself (truth) and of
    the negative rows. Gradient flows through every reconstruction.
    """
    b = len(batch_idx)
    k = negatives.shape[1]
    rows = np.concatenate([batch_idx, negatives.reshape(-1)])
    if masks is None:
        ones = lambda dim: np.ones((len(rows), dim))
        masks = (ones(model.hidden), ones(model.embedding), ones(model.hidden))
    recon, cache = _recon_with_dropout(model, x[rows], masks)
    cands = np.concatenate(
        [recon[:b][:, None, :], recon[b:].reshape(b, k, -1)], axis=1
    )
    truth = np.zeros(b, dtype=int)
    losses, _, _, dcands = cosine_softmax_grads(
        x[batch_idx], cands, truth, grad_query=False
    )
    dr = np.concatenate(
        [dcands[:, 0, :], dcands[:, 1:, :].reshape(b * k, -1)], axis=0
    ) / b
    grads = _recon_backward(model, dr, cache)
    return float(losses.mean()), grads


def _sample_negatives(
    rng: np.random.Generator, idx: np.ndarray, n_total: int, k: int
) -> np.ndarray:
    """k uniform draws per row from [0, n_total) excluding the row itself."""
    negs = rng.integers(0, n_total - 1, size=(len(idx), k))
    negs[negs >= idx[:, None]] += 1
    return negs


def _eval_loss(model: AutoencoderModel, x: np.ndarray, eval_negs: np.ndarray) -> float:
    n, k = eval_negs.shape
    total = 0.0
    for start in range(0, n, 512):
        idx = np.arange(start, min(start + 512, n))
        rows = np.concatenate([idx, eval_negs[idx].reshape(-1)])
        recon = model.reconstruct_features(x[rows])
        b = len(idx)
        cands = np.concatenate(
            [recon[:b][:, None, :], recon[b:].reshape(b, k, -1)], axis=1
        )
        losses, _, _, _ = cosine_softmax_grads(
            x[idx], cands, np.zeros(b, dtype=int), grad_query=False
        )
        total += float(losses.sum())
    return total / n


def train_autoencoder(
    lib: UnitLibrary,
    vocab: FeatureVocabulary,
    cfg: TrainConfig,
    hidden: int = HIDDEN_DIM_DEFAULT,
    embedding: int = EMBED_DIM_DEFAULT,
) -> AutoencoderModel:
    """SGD training of the relevance-reconstruction objective.

    Negatives are re-sampled each epoch; the recorded per-epoch loss comes
    from an evaluation pass (dropout off, one fixed negative set), so the
    curve is comparable across epochs.
    """
    n = len(lib.units)
    if n < cfg.negatives + 1:
        raise ValueError(
            f"library of {n} units too small for {cfg.negatives} negatives"
        )
    x = extract_matrix(lib.units, vocab)
    model = AutoencoderModel(
        vocab, hidden=hidden, embedding=embedding, rng=stream_rng(cfg.seed, "ae-init")
    )
    eval_negs = _sample_negatives(
        stream_rng(cfg.seed, "ae-eval-negatives"), np.arange(n), n, cfg.negatives
    )
    for epoch in range(cfg.epochs):
        order = stream_rng(cfg.seed, "ae-shuffle", epoch).permutation(n)
        neg_rng = stream_rng(cfg.seed, "ae-negatives", epoch)
        drop_rng = stream_rng(cfg.seed, "ae-dropout", epoch)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            negs = _sample_negatives(neg_rng, idx, n, cfg.negatives)
            rows = len(idx) * (1 + cfg.negatives)
            masks = (
                dropout_mask(drop_rng, (rows, hidden), cfg.dropout_keep),
                dropout_mask(drop_rng, (rows, embedding), cfg.dropout_keep),
                dropout_mask(drop_rng, (rows, hidden), cfg.dropout_keep),
            )
            _, grads = autoencoder_batch_loss(model, x, idx, negs, masks)
            sgd_step(model.params, grads, cfg.learning_rate)
        model.loss_curve.append(_eval_loss(model, x, eval_negs))
    return model


@dataclass
class EmbeddedLibrary:
    """A unit library with precomputed embeddings from one frozen model."""

    library: UnitLibrary
    embeddings: np.ndarray
    vocab_hash: str
    kind: str

    def __len__(self) -> int:
        return len(self.library.units)


def embed_library(model, lib: UnitLibrary, threads: int = 1) -> EmbeddedLibrary:
    """Embed every unit with a frozen model; parallel over fixed chunks."""
    units = lib.units

    def emb_chunk(start: int, stop: int) -> np.ndarray:
        return model.encode_features(
            extract_matrix(units[start:stop], model.vocab)
        )

    chunks = chunked_map(emb_chunk, len(units), threads)
    return EmbeddedLibrary(
        library=lib,
        embeddings=np.vstack(chunks),
        vocab_hash=model.vocab_hash,
        kind=model.kind,
    )


def _require_match(model, elib: EmbeddedLibrary) -> None:
    if model.vocab_hash != elib.vocab_hash:
        raise ValueError(
            "embedded library was built with a different vocabulary than the model"
        )


def library_similarities(
    query_emb: np.ndarray, elib: EmbeddedLibrary, threads: int = 1
) -> np.ndarray:
    """Cosine similarity of one embedding against the whole library."""

    def sims_chunk(start: int, stop: int) -> np.ndarray:
        return cosine_rows(query_emb, elib.embeddings[start:stop])

    return np.concatenate(chunked_map(sims_chunk, len(elib), threads))


def select_nearest(
    query_emb: np.ndarray, elib: EmbeddedLibrary, k: int, threads: int = 1
) -> list[tuple[Unit, float]]:
    """Top-k library units by cosine similarity, ties broken by library order."""
    if len(elib) == 0:
        raise ValueError("empty library")
    sims = library_similarities(query_emb, elib, threads)
    order = np.argsort(-sims, kind="stable")[: min(k, len(sims))]
    return [(elib.library.units[i], float(sims[i])) for i in order]


def reconstruct(
    p: Piece, elib: EmbeddedLibrary, model: AutoencoderModel, threads: int = 1
) -> Piece:
    """Replace each unit of the piece by its nearest library unit."""
    _require_match(model, elib)
    length = elib.library.unit_length
    if len(p.measures) % length != 0:
        raise ValueError(
            f"piece {p.id} has {len(p.measures)} measures, "
            f"not divisible by unit length {length}"
        )
    queries = slice_units(p, length, stride=length)
    q_emb = model.encode_features(extract_matrix(queries, model.vocab))
    chosen = []
    for row in q_emb:
        chosen.append(select_nearest(row, elib, 1, threads)[0][0])
    return concatenate_units(chosen, piece_id=f"{p.id}-recon")


def interpolate(
    a: Unit,
    b: Unit,
    alpha: float,
    elib: EmbeddedLibrary,
    model: AutoencoderModel,
    threads: int = 1,
) -> Unit:
    """Select the unit nearest to the blend (1-alpha)*enc(a) + alpha*enc(b)."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must be in [0, 1]")
    _require_match(model, elib)
    blended = (1.0 - alpha) * model.encode_unit(a) + alpha * model.encode_unit(b)
    if np.linalg.norm(blended) == 0.0:
        raise ValueError("degenerate interpolation: blended embedding is zero")
    return select_nearest(blended, elib, 1, threads)[0][0]


def rank_at_50(
    model: AutoencoderModel,
    elib: EmbeddedLibrary,
    probes: list[Unit],
    seed: int,
    pool_size: int = 50,
) -> tuple[float, float]:
    """Identity-retrieval ranking: each probe against itself plus 49 random
    distractors. Returns (mean_rank, top1_accuracy). Ties (collisions)
    break by seeded random jitter.
    """
    _require_match(model, elib)
    n = len(elib)
    if n < pool_size:
        raise ValueError(f"library of {n} units is smaller than the pool ({pool_size})")
    if not probes:
        raise ValueError("no probes given")
    q_emb = model.encode_features(extract_matrix(probes, model.vocab))
    ranks = np.empty(len(probes))
    for i, probe in enumerate(probes):
        truth_idx = elib.library.index_of(probe)
        if truth_idx is None:
            raise ValueError(f"probe {i} is not in the library")
        rng = stream_rng(seed, "rank50", i)
        draw = rng.choice(n - 1, size=pool_size - 1, replace=False)
        draw[draw >= truth_idx] += 1
        pool = np.concatenate([[truth_idx], draw])
        sims = cosine_rows(q_emb[i], elib.embeddings[pool])
        jitter = rng.random(pool_size)
        better = np.sum(sims > sims[0])
        tied = np.sum((sims == sims[0]) & (jitter < jitter[0]))
        ranks[i] = 1 + better + tied
    return float(ranks.mean()), float(np.mean(ranks == 1))


def collision_rate(
    elib: EmbeddedLibrary, tolerance: float = 1e-9, threads: int = 1
) -> float:
    """Collisions per 100k units.

    A unit collides when some distinct unit's embedding has cosine
    similarity >= 1 - tolerance with it (default tolerance 1e-9).
    """
    n = len(elib)
    if n < 2:
        return 0.0
    norms = np.linalg.norm(elib.embeddings, axis=1)
    if np.any(norms == 0.0):
        raise ValueError("zero-norm embedding in library")
    unit_vecs = elib.embeddings / norms[:, None]

    def collide_chunk(start: int, stop: int) -> int:
        sims = unit_vecs[start:stop] @ unit_vecs.T
        rows = np.arange(start, stop)
        sims[np.arange(stop - start), rows] = -np.inf  # ignore self
        return int(np.sum(sims.max(axis=1) >= 1.0 - tolerance))

    collisions = sum(chunked_map(collide_chunk, n, threads))
    return collisions * 100_000.0 / n
