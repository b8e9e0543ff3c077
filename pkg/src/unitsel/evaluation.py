"""Next-unit ranking evaluation and report files.

Each probe is a (context unit, true successor) pair from held-out pieces.
The truth is ranked among itself plus 49 library distractors under one of
three regimes: join cost alone (lstm), semantic relevance alone (dssm),
or the combined two-stage procedure (dssm+lstm, shortlist of ceil(5% of
50) = 3). A seeded random scorer is available as a calibration control.
Score ties break by seeded random jitter so a constant scorer averages to
the uniform expectation instead of favouring the truth.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .autoencoder import EmbeddedLibrary
from .dssm import DssmModel
from .engine import combined_order
from .features import extract_matrix
from .lm import LmModel, context_window, note_distributions, tokenize_unit
from .music import Unit
from .nn import stream_rng

REGIME_LSTM = "lstm"
REGIME_DSSM = "dssm"
REGIME_COMBINED = "dssm+lstm"
REGIME_RANDOM = "random"

REGIME_ORDER = (REGIME_LSTM, REGIME_DSSM, REGIME_COMBINED, REGIME_RANDOM)

POOL_SIZE = 50
SHORTLIST_FRACTION = 0.05


@dataclass(frozen=True)
class RankingRow:
    regime: str
    unit_length: int
    accuracy: float
    mean_rank: float
    probe_count: int
    seed: int


def _first_tokens(units: Sequence[Unit], lm_model: LmModel) -> np.ndarray:
    return np.array(
        [tokenize_unit(u, lm_model.vocab)[0] for u in units], dtype=np.int64
    )


def next_unit_ranking(
    test_pairs: Sequence[tuple[Unit, Unit]],
    elib: EmbeddedLibrary,
    dssm_model: DssmModel | None,
    lm_model: LmModel | None,
    regime: str,
    seed: int,
    pool_size: int = POOL_SIZE,
    shortlist_fraction: float = SHORTLIST_FRACTION,
    threads: int = 1,
) -> RankingRow:
    """Rank each probe's true successor among seeded random distractors.

    Distractor draws exclude the truth unit and are reproducible by seed;
    re-running with the same inputs gives identical numbers.
    """
    if regime not in REGIME_ORDER:
        raise ValueError(f"unknown regime {regime!r}")
    n_lib = len(elib)
    if n_lib < pool_size:
        raise ValueError(
            f"library has {n_lib} units; need at least {pool_size} candidates"
        )
    if not test_pairs:
        raise ValueError("no probe pairs")
    needs_dssm = regime in (REGIME_DSSM, REGIME_COMBINED)
    needs_lstm = regime in (REGIME_LSTM, REGIME_COMBINED)
    if needs_dssm:
        if dssm_model is None:
            raise ValueError(f"regime {regime} needs a relevance model")
        if elib.kind != "dssm" or elib.vocab_hash != dssm_model.vocab_hash:
            raise ValueError("library must be embedded with the given relevance model")
    if needs_lstm and lm_model is None:
        raise ValueError(f"regime {regime} needs a note language model")

    prevs = [a for a, _ in test_pairs]
    truths = [b for _, b in test_pairs]
    n = len(test_pairs)

    if needs_dssm:
        prev_emb = dssm_model.encode_features(
            extract_matrix(prevs, dssm_model.vocab)
        )
        truth_emb = dssm_model.encode_features(
            extract_matrix(truths, dssm_model.vocab)
        )
    if needs_lstm:
        contexts = np.stack(
            [
                context_window(tokenize_unit(p, lm_model.vocab), lm_model.context_len)
                for p in prevs
            ]
        )
        dists = note_distributions(contexts, lm_model, threads)
        lib_first = _first_tokens(elib.library.units, lm_model)
        truth_first = _first_tokens(truths, lm_model)

    unit_len = elib.library.unit_length
    ranks = np.empty(n)
    for i in range(n):
        rng = stream_rng(seed, "nextunit", i)
        truth_idx = elib.library.index_of(truths[i])
        if truth_idx is None:
            draw = rng.choice(n_lib, size=pool_size - 1, replace=False)
        else:
            draw = rng.choice(n_lib - 1, size=pool_size - 1, replace=False)
            draw[draw >= truth_idx] += 1
        jitter = rng.random(pool_size)
        pool_idx = np.arange(pool_size)

        if needs_dssm:
            cand_emb = np.concatenate(
                [truth_emb[i][None, :], elib.embeddings[draw]], axis=0
            )
            qn = np.linalg.norm(prev_emb[i])
            cn = np.linalg.norm(cand_emb, axis=1)
            sims = (cand_emb @ prev_emb[i]) / (qn * cn)
        if needs_lstm:
            firsts = np.concatenate([[truth_first[i]], lib_first[draw]])
            costs = -np.log(dists[i][firsts])

        if regime == REGIME_DSSM:
            order = np.lexsort((pool_idx, jitter, -sims))
        elif regime == REGIME_LSTM:
            order = np.lexsort((pool_idx, jitter, costs))
        elif regime == REGIME_COMBINED:
            ranking = combined_order(
                sims, lambda idxs: costs[idxs], shortlist_fraction, jitter
            )
            order = ranking.order
        else:
            scores = rng.random(pool_size)
            order = np.lexsort((pool_idx, -scores))
        ranks[i] = int(np.where(order == 0)[0][0]) + 1

    return RankingRow(
        regime=regime,
        unit_length=unit_len,
        accuracy=float(np.mean(ranks == 1)),
        mean_rank=float(ranks.mean()),
        probe_count=n,
        seed=seed,
    )


def _fmt_cell(row: RankingRow | None) -> tuple[str, str, str, str]:
    if row is None:
        return ("—", "—", "—", "—")
    return (
        f"{100.0 * row.accuracy:.1f}%",
        f"{row.mean_rank:.2f}",
        str(row.probe_count),
        str(row.seed),
    )


def report(rows: Sequence[RankingRow], path) -> str:
    """Write the regime-by-unit-length grid: text at ``path``, values at
    ``path``.json. Returns the text. Missing grid cells render as an
    em-dash placeholder."""
    if not rows:
        raise ValueError("no rows to report")
    path = Path(path)
    by_key = {(r.regime, r.unit_length): r for r in rows}
    lengths = sorted({r.unit_length for r in rows}, reverse=True)
    regimes = [rg for rg in REGIME_ORDER if any(r.regime == rg for r in rows)]
    header = f"{'regime':<12}{'measures':<10}{'acc@50':<10}{'mean_rank@50':<14}{'probes':<8}{'seed':<6}"
    lines = [header, "-" * len(header)]
    for length in lengths:
        for regime in regimes:
            acc, mr, probes, seed = _fmt_cell(by_key.get((regime, length)))
            lines.append(
                f"{regime:<12}{length:<10}{acc:<10}{mr:<14}{probes:<8}{seed:<6}"
            )
    text = "\n".join(lines) + "\n"
    path.write_text(text, encoding="utf-8")
    machine = [asdict(r) for r in rows]
    Path(str(path) + ".json").write_text(
        json.dumps(machine, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return text


def load_report(json_path) -> list[RankingRow]:
    """Read back the machine-readable report with identical values."""
    data = json.loads(Path(json_path).read_text(encoding="utf-8"))
    return [RankingRow(**entry) for entry in data]
