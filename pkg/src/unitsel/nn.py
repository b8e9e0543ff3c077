"""Minimal neural toolkit with manual backpropagation.

Dense layers (linear / rectified / leaky-rectified), an LSTM cell, the
cosine-softmax relevance loss, inverted dropout, plain SGD, and a central
finite-difference gradient checker. Everything is float64 numpy; forward
passes on frozen parameters are pure and thread-safe.

Randomness is reproducible: every stochastic choice draws from a stream
generator derived from one master seed via splitmix64 (see
:func:`stream_rng`), so training is bit-deterministic given
(seed, config, corpus).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

_M64 = (1 << 64) - 1


def _splitmix64(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & _M64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _M64
    return (z ^ (z >> 31)) & _M64


def derive_seed(master: int, *stream: int | str) -> int:
    """Fold a master seed and stream labels through splitmix64.

    String labels are digested to 8 bytes first so the result does not
    depend on the interpreter's hash randomization.
    """
    z = _splitmix64(master & _M64)
    for part in stream:
        if isinstance(part, str):
            part = int.from_bytes(hashlib.sha256(part.encode()).digest()[:8], "little")
        z = _splitmix64(z ^ (int(part) & _M64))
    return z


def stream_rng(master: int, *stream: int | str) -> np.random.Generator:
    """Named random stream: independent generator per (seed, labels) tuple."""
    return np.random.default_rng(derive_seed(master, *stream))


@dataclass
class TrainConfig:
    """Knobs shared by all trainers.

    ``dropout_keep`` is the keep probability on hidden layers (inverted
    scaling, so inference needs no rescaling); ``negatives`` is the number
    of random counterexamples per training case in the relevance losses.
    """

    learning_rate: float = 0.005
    dropout_keep: float = 0.5
    negatives: int = 4
    epochs: int = 100
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.dropout_keep <= 1.0:
            raise ValueError("dropout_keep must be in (0, 1]")
        if self.negatives < 1:
            raise ValueError("negatives must be >= 1")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


def glorot_uniform(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


LEAKY_ALPHA_DEFAULT = 0.001


class DenseLayer:
    """Fully connected layer y = act(x W^T + b) with explicit backward."""

    def __init__(
        self,
        in_dim: int,
        out_dim: int,
        activation: str = "linear",
        alpha: float = LEAKY_ALPHA_DEFAULT,
        rng: np.random.Generator | None = None,
    ):
        if activation not in ("linear", "relu", "leaky_relu"):
            raise ValueError(f"unknown activation {activation!r}")
        if rng is None:
            rng = np.random.default_rng(0)
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.activation = activation
        self.alpha = alpha
        self.w = glorot_uniform(rng, out_dim, in_dim)
        self.b = np.zeros(out_dim)

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, tuple]:
        """x: (batch, in_dim) -> (y, cache)."""
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ValueError(f"expected (batch, {self.in_dim}), got {x.shape}")
        z = x @ self.w.T + self.b
        if self.activation == "linear":
            y = z
        elif self.activation == "relu":
            y = np.maximum(z, 0.0)
        else:
            y = np.where(z > 0.0, z, self.alpha * z)
        return y, (x, z)

    def backward(
        self, dy: np.ndarray, cache: tuple
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Returns (dx, dw, db) for upstream gradient dy."""
        x, z = cache
        if self.activation == "linear":
            dz = dy
        elif self.activation == "relu":
            dz = dy * (z > 0.0)
        else:
            dz = dy * np.where(z > 0.0, 1.0, self.alpha)
        dw = dz.T @ x
        db = dz.sum(axis=0)
        dx = dz @ self.w
        return dx, dw, db

    @property
    def params(self) -> list[np.ndarray]:
        return [self.w, self.b]


class LstmLayer:
    """Single LSTM cell; gates packed as [input, forget, candidate, output]."""

    def __init__(self, in_dim: int, hidden: int, rng: np.random.Generator | None = None):
        if rng is None:
            rng = np.random.default_rng(0)
        self.in_dim = in_dim
        self.hidden = hidden
        self.w = glorot_uniform(rng, 4 * hidden, in_dim)
        self.u = glorot_uniform(rng, 4 * hidden, hidden)
        self.b = np.zeros(4 * hidden)
        # forget-gate bias starts at 1 so early training does not wipe state
        self.b[hidden : 2 * hidden] = 1.0

    def zero_state(self, batch: int) -> tuple[np.ndarray, np.ndarray]:
        return np.zeros((batch, self.hidden)), np.zeros((batch, self.hidden))

    def step(
        self, x: np.ndarray, h: np.ndarray, c: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray, tuple]:
        """One timestep. x: (batch, in_dim); h, c: (batch, hidden)."""
        a = x @ self.w.T + h @ self.u.T + self.b
        hh = self.hidden
        i = _sigmoid(a[:, :hh])
        f = _sigmoid(a[:, hh : 2 * hh])
        g = np.tanh(a[:, 2 * hh : 3 * hh])
        o = _sigmoid(a[:, 3 * hh :])
        c2 = f * c + i * g
        h2 = o * np.tanh(c2)
        cache = (x, h, c, i, f, g, o, c2)
        return h2, c2, cache

    def backward_step(
        self, dh: np.ndarray, dc: np.ndarray, cache: tuple
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Backprop one timestep: returns (dx, dh_prev, dc_prev, dw, du, db)."""
        x, h, c, i, f, g, o, c2 = cache
        tanh_c2 = np.tanh(c2)
        do = dh * tanh_c2
        dc_total = dc + dh * o * (1.0 - tanh_c2 * tanh_c2)
        di = dc_total * g
        df = dc_total * c
        dg = dc_total * i
        dc_prev = dc_total * f
        da = np.concatenate(
            [
                di * i * (1.0 - i),
                df * f * (1.0 - f),
                dg * (1.0 - g * g),
                do * o * (1.0 - o),
            ],
            axis=1,
        )
        dx = da @ self.w
        dh_prev = da @ self.u
        dw = da.T @ x
        du = da.T @ h
        db = da.sum(axis=0)
        return dx, dh_prev, dc_prev, dw, du, db

    @property
    def params(self) -> list[np.ndarray]:
        return [self.w, self.u, self.b]


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def dropout_mask(rng: np.random.Generator, shape: tuple, keep: float) -> np.ndarray:
    """Inverted-dropout mask: entries are 0 or 1/keep."""
    if keep >= 1.0:
        return np.ones(shape)
    return (rng.random(shape) < keep) / keep


def cosine_sim(x: np.ndarray, y: np.ndarray) -> float:
    """Cosine similarity of two vectors; rejects zero-norm input."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    nx = np.linalg.norm(x)
    ny = np.linalg.norm(y)
    if nx == 0.0 or ny == 0.0:
        raise ValueError("cosine similarity undefined for zero-norm vector")
    return float(np.dot(x, y) / (nx * ny))


def cosine_rows(q: np.ndarray, mat: np.ndarray) -> np.ndarray:
    """Cosine similarity of one query against every row of a matrix."""
    nq = np.linalg.norm(q)
    norms = np.linalg.norm(mat, axis=1)
    if nq == 0.0 or np.any(norms == 0.0):
        raise ValueError("cosine similarity undefined for zero-norm vector")
    return (mat @ q) / (norms * nq)


def softmax_relevance(
    q: np.ndarray, candidates: list[np.ndarray] | np.ndarray, truth_index: int
) -> tuple[np.ndarray, float]:
    """Softmax over cosine similarities of candidates to a query.

    Returns (probabilities, loss) where loss = -log P(candidates[truth_index]).
    """
    cands = np.asarray(candidates, dtype=float)
    if not 0 <= truth_index < len(cands):
        raise ValueError("truth_index out of range")
    sims = cosine_rows(np.asarray(q, dtype=float), cands)
    probs = softmax(sims)
    loss = -float(np.log(probs[truth_index]))
    return probs, loss


def softmax(scores: np.ndarray) -> np.ndarray:
    """Row-wise softmax over the last axis."""
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def cosine_softmax_grads(
    q: np.ndarray,
    cands: np.ndarray,
    truth: np.ndarray,
    grad_query: bool,
) -> tuple[np.ndarray, np.ndarray, np.ndarray | None, np.ndarray]:
    """Batched cosine-softmax loss with gradients.

    q: (B, E) queries; cands: (B, K, E) candidate vectors; truth: (B,) index
    of the positive candidate per row. Returns (losses, probs, dq, dcands);
    dq is None when grad_query is False (queries that are raw data).
    """
    qn = np.linalg.norm(q, axis=1)
    cn = np.linalg.norm(cands, axis=2)
    if np.any(qn == 0.0) or np.any(cn == 0.0):
        raise ValueError("cosine similarity undefined for zero-norm vector")
    dots = np.einsum("be,bke->bk", q, cands)
    sims = dots / (qn[:, None] * cn)
    probs = softmax(sims)
    rows = np.arange(len(q))
    losses = -np.log(probs[rows, truth])
    dsims = probs.copy()
    dsims[rows, truth] -= 1.0
    # d sim / d cand = q/(|q||c|) - sim * c/|c|^2
    dcands = dsims[:, :, None] * (
        q[:, None, :] / (qn[:, None, None] * cn[:, :, None])
        - sims[:, :, None] * cands / (cn**2)[:, :, None]
    )
    dq = None
    if grad_query:
        # d sim / d q = c/(|q||c|) - sim * q/|q|^2
        per_cand = cands / (qn[:, None, None] * cn[:, :, None]) - (
            sims / (qn**2)[:, None]
        )[:, :, None] * q[:, None, :]
        dq = np.einsum("bk,bke->be", dsims, per_cand)
    return losses, probs, dq, dcands


def sgd_step(params: list[np.ndarray], grads: list[np.ndarray], lr: float) -> None:
    """Plain gradient descent: p <- p - lr * g, in place."""
    if len(params) != len(grads):
        raise ValueError("params/grads length mismatch")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ValueError(f"shape mismatch {p.shape} vs {g.shape}")
        p -= lr * g


def grad_check(
    params: list[np.ndarray],
    grads: list[np.ndarray],
    loss_fn,
    eps: float = 1e-5,
    rng: np.random.Generator | None = None,
    max_checks_per_param: int = 24,
) -> float:
    """Max relative error between analytic grads and central differences.

    ``loss_fn`` re-evaluates the loss from the current parameter values
    (which are perturbed in place and restored). A sampled subset of
    coordinates is checked per array. Relative error uses
    |num - ana| / max(|num|, |ana|, 1e-6): a gradient off by a factor of
    two reports ~0.5, while the 1e-6 floor keeps difference-quotient
    roundoff on effectively-zero coordinates from registering as error.

    Each coordinate is measured at three step sizes (eps, eps/8, eps/64)
    and the smallest error is kept: a rectifier kink that happens to sit
    inside one step window corrupts that difference quotient but not the
    smaller ones, whereas a genuinely wrong gradient disagrees at every
    scale.
    """
    if rng is None:
        rng = np.random.default_rng(0)

    def rel_error_at(flat_p, k, analytic, step) -> float:
        orig = flat_p[k]
        flat_p[k] = orig + step
        lp = loss_fn()
        flat_p[k] = orig - step
        lm = loss_fn()
        flat_p[k] = orig
        numeric = (lp - lm) / (2.0 * step)
        denom = max(abs(numeric), abs(analytic), 1e-6)
        return abs(numeric - analytic) / denom

    worst = 0.0
    for p, g in zip(params, grads):
        flat_p = p.reshape(-1)
        flat_g = g.reshape(-1)
        n = flat_p.size
        if n <= max_checks_per_param:
            coords = np.arange(n)
        else:
            coords = rng.choice(n, size=max_checks_per_param, replace=False)
        for k in coords:
            err = min(
                rel_error_at(flat_p, k, flat_g[k], eps * scale)
                for scale in (1.0, 0.125, 0.015625)
            )
            worst = max(worst, err)
    return worst
