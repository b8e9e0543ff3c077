"""Note-level LSTM language model and the concatenation cost.

Tokens are (pitch, duration) symbols; barlines are invisible to the token
stream. The model is two stacked LSTM layers over one-hot inputs with a
linear projection to the vocabulary, trained teacher-forced on windows of
36 tokens (each window's targets are its inputs shifted by one). Scoring
contexts shorter than 36 tokens are left-padded with the PAD token, which
is excluded from the training loss.

The join cost between two units is the mean negative log-probability of
the first J notes of the incoming unit given the running 36-token context
(J=1 by default, so only the joining note is scored).
"""

from __future__ import annotations

from fractions import Fraction
from typing import Sequence

import numpy as np

from ._util import canonical_json, chunked_map, sha256_hex
from .corpus import ModelArchive
from .music import Piece, Unit
from .nn import (
    DenseLayer,
    LstmLayer,
    TrainConfig,
    softmax,
    dropout_mask,
    sgd_step,
    stream_rng,
)

PAD = 0
OOV = 1
CONTEXT_LEN = 36

NoteSymbol = tuple[int, Fraction]


class NoteVocabulary:
    """Maps (pitch, duration) symbols to dense token ids; 0=PAD, 1=OOV."""

    def __init__(self, symbols: Sequence[NoteSymbol]):
        self.symbols = tuple(symbols)
        self._map = {s: i + 2 for i, s in enumerate(self.symbols)}
        if len(self._map) != len(self.symbols):
            raise ValueError("duplicate note symbols")

    @property
    def size(self) -> int:
        return len(self.symbols) + 2

    def encode(self, symbol: NoteSymbol) -> int:
        return self._map.get(symbol, OOV)

    def decode(self, token: int) -> NoteSymbol:
        if token < 2 or token >= self.size:
            raise ValueError(f"token {token} has no note symbol")
        return self.symbols[token - 2]

    def snapshot(self) -> dict:
        return {
            "type": "notes",
            "symbols": [[p, d.numerator, d.denominator] for p, d in self.symbols],
        }

    @classmethod
    def from_snapshot(cls, snap: dict) -> "NoteVocabulary":
        if snap.get("type") != "notes":
            raise ValueError("not a note-vocabulary snapshot")
        return cls([(p, Fraction(n, d)) for p, n, d in snap["symbols"]])

    def hash_hex(self) -> str:
        return sha256_hex(canonical_json(self.snapshot()))


def build_note_vocab(pieces: Sequence[Piece]) -> NoteVocabulary:
    pieces = getattr(pieces, "pieces", pieces)
    seen: set[NoteSymbol] = set()
    for p in pieces:
        for n in p.notes:
            seen.add((n.pitch, n.duration))
    if not seen:
        raise ValueError("no notes to build a vocabulary from")
    return NoteVocabulary(sorted(seen))


def tokenize(p: Piece, vocab: NoteVocabulary) -> list[int]:
    """One token per notated note, in order; unseen symbols become OOV."""
    return [vocab.encode((n.pitch, n.duration)) for n in p.notes]


def tokenize_unit(u: Unit, vocab: NoteVocabulary) -> list[int]:
    return [vocab.encode((n.pitch, n.duration)) for n in u.notes]


def detokenize(tokens: Sequence[int], vocab: NoteVocabulary) -> list[NoteSymbol]:
    """Vocabulary inverse; rejects PAD/OOV, which carry no note."""
    return [vocab.decode(t) for t in tokens]


def context_window(history: Sequence[int], length: int = CONTEXT_LEN) -> np.ndarray:
    """The last ``length`` tokens of a history, left-padded with PAD."""
    tail = list(history)[-length:]
    return np.array([PAD] * (length - len(tail)) + tail, dtype=np.int64)


def _one_hot(tokens: np.ndarray, size: int) -> np.ndarray:
    out = np.zeros((len(tokens), size))
    out[np.arange(len(tokens)), tokens] = 1.0
    return out


class LmModel:
    kind = "lstm"

    def __init__(
        self,
        vocab: NoteVocabulary,
        hidden: int = 128,
        context_len: int = CONTEXT_LEN,
        rng: np.random.Generator | None = None,
    ):
        if rng is None:
            rng = np.random.default_rng(0)
        self.vocab = vocab
        self.hidden = hidden
        self.context_len = context_len
        self.lstm1 = LstmLayer(vocab.size, hidden, rng=rng)
        self.lstm2 = LstmLayer(hidden, hidden, rng=rng)
        self.out = DenseLayer(hidden, vocab.size, "linear", rng=rng)
        self.perplexity_curve: list[float] = []

    @property
    def vocab_hash(self) -> str:
        return self.vocab.hash_hex()

    @property
    def params(self) -> list[np.ndarray]:
        return [*self.lstm1.params, *self.lstm2.params, *self.out.params]

    def step_distributions(self, x_tokens: np.ndarray) -> np.ndarray:
        """Per-step next-token distributions for a batch of token windows.

        x_tokens: (batch, T) ints -> (batch, T, vocab) probabilities.
        """
        b, t = x_tokens.shape
        h1, c1 = self.lstm1.zero_state(b)
        h2, c2 = self.lstm2.zero_state(b)
        probs = np.empty((b, t, self.vocab.size))
        for step in range(t):
            x = _one_hot(x_tokens[:, step], self.vocab.size)
            h1, c1, _ = self.lstm1.step(x, h1, c1)
            h2, c2, _ = self.lstm2.step(h1, h2, c2)
            logits, _ = self.out.forward(h2)
            probs[:, step, :] = softmax(logits)
        return probs

    def to_archive(self) -> ModelArchive:
        v = self.vocab.size
        return ModelArchive(
            kind=self.kind,
            hyperparameters={"hidden": self.hidden, "context_len": self.context_len},
            layer_dims=[v, self.hidden, self.hidden, v],
            weights=[
                ("lstm1.w", self.lstm1.w),
                ("lstm1.u", self.lstm1.u),
                ("lstm1.b", self.lstm1.b),
                ("lstm2.w", self.lstm2.w),
                ("lstm2.u", self.lstm2.u),
                ("lstm2.b", self.lstm2.b),
                ("out.w", self.out.w),
                ("out.b", self.out.b),
            ],
            vocabulary=self.vocab.snapshot(),
        )

    @classmethod
    def from_archive(cls, archive: ModelArchive) -> "LmModel":
        if archive.kind != "lstm":
            raise ValueError(f"expected an lstm archive, got {archive.kind!r}")
        vocab = NoteVocabulary.from_snapshot(archive.vocabulary)
        hp = archive.hyperparameters
        model = cls(
            vocab, hidden=int(hp["hidden"]), context_len=int(hp["context_len"])
        )
        for obj, name, attr in (
            (model.lstm1, "lstm1", ("w", "u", "b")),
            (model.lstm2, "lstm2", ("w", "u", "b")),
            (model.out, "out", ("w", "b")),
        ):
            for a in attr:
                arr = archive.weight(f"{name}.{a}")
                if arr.shape != getattr(obj, a).shape:
                    raise ValueError(f"archive weight {name}.{a} has wrong dimensions")
                setattr(obj, a, arr)
        return model


def make_windows(
    streams: Sequence[Sequence[int]], context_len: int = CONTEXT_LEN
) -> tuple[np.ndarray, np.ndarray]:
    """Teacher-forcing windows: inputs and next-token targets, PAD-masked.

    Each stream is prefixed with PAD (so the first real token is predicted
    from an empty context) and cut into non-overlapping windows; a short
    final window is right-padded and the padded targets are ignored by the
    loss (targets equal to PAD are unsupervised).
    """
    xs, ys = [], []
    for toks in streams:
        toks = list(toks)
        if not toks:
            continue
        s = [PAD] + toks
        inputs, targets = s[:-1], s[1:]
        for start in range(0, len(inputs), context_len):
            xw = inputs[start : start + context_len]
            yw = targets[start : start + context_len]
            pad = context_len - len(xw)
            xs.append(xw + [PAD] * pad)
            ys.append(yw + [PAD] * pad)
    if not xs:
        raise ValueError("empty token stream")
    return np.array(xs, dtype=np.int64), np.array(ys, dtype=np.int64)


def lm_batch_loss(
    model: LmModel,
    x: np.ndarray,
    y: np.ndarray,
    masks: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[float, list[np.ndarray]]:
    """Mean next-token log-loss over supervised positions, with gradients.

    ``masks`` are dropout masks for the two hidden-state feeds (shared
    across timesteps); None disables dropout.
    """
    b, t = x.shape
    v = model.vocab.size
    if masks is None:
        masks = (np.ones((b, model.hidden)), np.ones((b, model.hidden)))
    m1, m2 = masks
    supervised = (y != PAD).astype(float)
    total = supervised.sum()
    if total == 0:
        raise ValueError("batch has no supervised positions")
    h1, c1 = model.lstm1.zero_state(b)
    h2, c2 = model.lstm2.zero_state(b)
    caches = []
    probs_steps = np.empty((b, t, v))
    for step in range(t):
        xoh = _one_hot(x[:, step], v)
        h1, c1, cache1 = model.lstm1.step(xoh, h1, c1)
        h1d = h1 * m1
        h2, c2, cache2 = model.lstm2.step(h1d, h2, c2)
        h2d = h2 * m2
        logits, cache_out = model.out.forward(h2d)
        probs_steps[:, step, :] = softmax(logits)
        caches.append((cache1, cache2, cache_out))
    rows = np.arange(b)
    nll = 0.0
    for step in range(t):
        p_true = probs_steps[rows, step, y[:, step]]
        nll -= float(np.sum(np.log(p_true) * supervised[:, step]))
    loss = nll / total

    zeros = [np.zeros_like(p) for p in model.params]
    (dw1, du1, db1, dw2, du2, db2, dwo, dbo) = zeros
    dh1_carry, dc1_carry = model.lstm1.zero_state(b)
    dh2_carry, dc2_carry = model.lstm2.zero_state(b)
    for step in reversed(range(t)):
        cache1, cache2, cache_out = caches[step]
        dlogits = probs_steps[:, step, :].copy()
        dlogits[rows, y[:, step]] -= 1.0
        dlogits *= (supervised[:, step] / total)[:, None]
        dh2d, dwo_s, dbo_s = model.out.backward(dlogits, cache_out)
        dwo += dwo_s
        dbo += dbo_s
        dh2 = dh2d * m2 + dh2_carry
        dh1d, dh2_carry, dc2_carry, dw2_s, du2_s, db2_s = model.lstm2.backward_step(
            dh2, dc2_carry, cache2
        )
        dw2 += dw2_s
        du2 += du2_s
        db2 += db2_s
        dh1 = dh1d * m1 + dh1_carry
        _, dh1_carry, dc1_carry, dw1_s, du1_s, db1_s = model.lstm1.backward_step(
            dh1, dc1_carry, cache1
        )
        dw1 += dw1_s
        du1 += du1_s
        db1 += db1_s
    return loss, [dw1, du1, db1, dw2, du2, db2, dwo, dbo]


def _eval_perplexity(model: LmModel, x: np.ndarray, y: np.ndarray) -> float:
    supervised_total = 0.0
    nll_total = 0.0
    for start in range(0, len(x), 256):
        xb = x[start : start + 256]
        yb = y[start : start + 256]
        probs = model.step_distributions(xb)
        sup = yb != PAD
        rows = np.arange(len(xb))[:, None]
        cols = np.arange(xb.shape[1])[None, :]
        p_true = probs[rows, cols, yb]
        nll_total -= float(np.sum(np.log(p_true[sup])))
        supervised_total += float(sup.sum())
    return float(np.exp(nll_total / supervised_total))


def train_lm(
    streams: Sequence[Sequence[int]],
    vocab: NoteVocabulary,
    cfg: TrainConfig,
    hidden: int = 128,
) -> LmModel:
    """Teacher-forced training over sliding windows; deterministic by seed.

    The recorded curve is evaluation perplexity (dropout off) after each
    epoch.
    """
    if not any(len(s) >= 2 for s in streams):
        raise ValueError("need at least one token sequence of length >= 2")
    x, y = make_windows(streams)
    model = LmModel(vocab, hidden=hidden, rng=stream_rng(cfg.seed, "lm-init"))
    n = len(x)
    for epoch in range(cfg.epochs):
        order = stream_rng(cfg.seed, "lm-shuffle", epoch).permutation(n)
        drop_rng = stream_rng(cfg.seed, "lm-dropout", epoch)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            masks = (
                dropout_mask(drop_rng, (len(idx), hidden), cfg.dropout_keep),
                dropout_mask(drop_rng, (len(idx), hidden), cfg.dropout_keep),
            )
            _, grads = lm_batch_loss(model, x[idx], y[idx], masks)
            sgd_step(model.params, grads, cfg.learning_rate)
        model.perplexity_curve.append(_eval_perplexity(model, x, y))
    return model


def note_distribution(ctx: Sequence[int], model: LmModel) -> np.ndarray:
    """Next-note distribution after a full context window of 36 tokens."""
    ctx = np.asarray(ctx, dtype=np.int64)
    if ctx.shape != (model.context_len,):
        raise ValueError(f"context must have exactly {model.context_len} tokens")
    if np.any(ctx < 0) or np.any(ctx >= model.vocab.size):
        raise ValueError("context contains tokens outside the vocabulary")
    return model.step_distributions(ctx[None, :])[0, -1, :]


def note_distributions(
    contexts: np.ndarray, model: LmModel, threads: int = 1
) -> np.ndarray:
    """Final-step distributions for many contexts; fixed-chunk parallel."""
    contexts = np.asarray(contexts, dtype=np.int64)

    def chunk(start: int, stop: int) -> np.ndarray:
        return model.step_distributions(contexts[start:stop])[:, -1, :]

    return np.vstack(chunked_map(chunk, len(contexts), threads))


def concat_cost(
    prev_context: Sequence[int], u: Unit, j: int, model: LmModel
) -> float:
    """Join cost: mean -log probability of the first ``j`` notes of ``u``
    given the running context (which mixes in the incoming unit's own
    notes as scoring advances past the first one).
    """
    tokens = tokenize_unit(u, model.vocab)
    if not tokens:
        raise ValueError("unit has no notes")
    if j < 1 or j > len(tokens):
        raise ValueError(f"J must be in [1, {len(tokens)}], got {j}")
    history = list(prev_context)
    total = 0.0
    for step in range(j):
        dist = note_distribution(context_window(history, model.context_len), model)
        total -= float(np.log(dist[tokens[step]]))
        history.append(tokens[step])
    return total / j


def first_note_costs(
    prev_context: Sequence[int], units: Sequence[Unit], model: LmModel
) -> np.ndarray:
    """J=1 concatenation costs of many candidate units for one context.

    Equal to concat_cost(prev_context, u, 1, model) per unit, but computes
    the shared context distribution once.
    """
    dist = note_distribution(context_window(prev_context, model.context_len), model)
    firsts = [tokenize_unit(u, model.vocab)[0] for u in units]
    return -np.log(dist[firsts])
