"""Generation by ranked unit selection, plus the note-level baseline.

Selection is a four-step ranking: score every library unit's semantic
relevance to the current unit, keep the top fraction (5% by default),
re-rank that shortlist by join cost, then re-rank it again by the sum of
the two ranks and take the head. Only ranks are combined, never raw
scores, so any strictly monotone rescaling of either score leaves the
choice unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .autoencoder import EmbeddedLibrary, library_similarities
from .dssm import DssmModel
from .lm import (
    OOV,
    PAD,
    LmModel,
    context_window,
    first_note_costs,
    note_distribution,
    tokenize_unit,
)
from .music import (
    REST,
    Measure,
    Note,
    Piece,
    Provenance,
    Unit,
    assemble_piece,
    concatenate_units,
)
from .nn import stream_rng

DETERMINISTIC = "deterministic"
SAMPLED = "sampled"


@dataclass(frozen=True)
class GenerationConfig:
    unit_length: int = 1
    n_units: int = 4
    shortlist_fraction: float = 0.05
    mode: str = DETERMINISTIC
    temperature: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.shortlist_fraction <= 1.0:
            raise ValueError("shortlist_fraction must be in (0, 1]")
        if self.mode not in (DETERMINISTIC, SAMPLED):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.temperature <= 0.0:
            raise ValueError("temperature must be positive")


@dataclass
class CombinedRanking:
    """Result of the two-stage procedure over one candidate pool.

    ``order`` lists candidate indices best-first: the shortlist sorted by
    combined key, then everything else in semantic order. Ranks are
    1-based; concat_rank and combined are 0 outside the shortlist.
    """

    order: np.ndarray
    semantic_rank: np.ndarray
    shortlist: np.ndarray
    concat_rank: np.ndarray
    combined: np.ndarray
    costs: np.ndarray


def combined_order(
    sims: np.ndarray,
    cost_fn,
    fraction: float,
    jitter: np.ndarray | None = None,
) -> CombinedRanking:
    """Rank a candidate pool by the combined semantic/join procedure.

    ``cost_fn(indices)`` returns join costs for the shortlisted indices
    only. ``jitter`` (optional, same length as sims) breaks score ties in
    the semantic stage; by default ties break by candidate index.
    """
    n = len(sims)
    if n == 0:
        raise ValueError("empty candidate pool")
    idx = np.arange(n)
    if jitter is None:
        jitter = np.zeros(n)
    sem_order = np.lexsort((idx, jitter, -sims))
    sem_rank = np.empty(n, dtype=np.int64)
    sem_rank[sem_order] = idx + 1
    k = max(1, math.ceil(fraction * n))
    shortlist = sem_order[:k]
    costs_short = np.asarray(cost_fn(shortlist), dtype=float)
    all_costs = np.full(n, np.nan)
    all_costs[shortlist] = costs_short
    by_cost = shortlist[np.lexsort((shortlist, sem_rank[shortlist], costs_short))]
    concat_rank = np.zeros(n, dtype=np.int64)
    concat_rank[by_cost] = np.arange(1, k + 1)
    combined = np.zeros(n, dtype=np.int64)
    combined[shortlist] = sem_rank[shortlist] + concat_rank[shortlist]
    head = shortlist[
        np.lexsort((shortlist, sem_rank[shortlist], combined[shortlist]))
    ]
    order = np.concatenate([head, sem_order[k:]])
    return CombinedRanking(
        order=order,
        semantic_rank=sem_rank,
        shortlist=shortlist,
        concat_rank=concat_rank,
        combined=combined,
        costs=all_costs,
    )


@dataclass
class RankedCandidate:
    index: int
    unit: Unit
    relevance: float
    semantic_rank: int
    concat_rank: int | None = None
    combined_key: int | None = None
    concat_cost: float | None = None


def rank_candidates(
    seed_unit: Unit,
    prev_tokens: list[int],
    elib: EmbeddedLibrary,
    dssm_model: DssmModel,
    lm_model: LmModel,
    cfg: GenerationConfig,
    threads: int = 1,
) -> list[RankedCandidate]:
    """Full library ranking for one selection step, best candidate first.

    All tie-breaks are deterministic: semantic ties by library order, join
    ties by semantic rank then library order.
    """
    if len(elib) == 0:
        raise ValueError("empty library")
    if elib.kind != "dssm" or elib.vocab_hash != dssm_model.vocab_hash:
        raise ValueError("library must be embedded with the given relevance model")
    q = dssm_model.encode_unit(seed_unit)
    sims = library_similarities(q, elib, threads)

    def shortlist_costs(indices: np.ndarray) -> np.ndarray:
        units = [elib.library.units[i] for i in indices]
        return first_note_costs(prev_tokens, units, lm_model)

    ranking = combined_order(sims, shortlist_costs, cfg.shortlist_fraction)
    out = []
    shortlisted = set(int(i) for i in ranking.shortlist)
    for i in ranking.order:
        i = int(i)
        in_short = i in shortlisted
        out.append(
            RankedCandidate(
                index=i,
                unit=elib.library.units[i],
                relevance=float(sims[i]),
                semantic_rank=int(ranking.semantic_rank[i]),
                concat_rank=int(ranking.concat_rank[i]) if in_short else None,
                combined_key=int(ranking.combined[i]) if in_short else None,
                concat_cost=float(ranking.costs[i]) if in_short else None,
            )
        )
    return out


def _pick(
    ranked: list[RankedCandidate], cfg: GenerationConfig, step: int
) -> RankedCandidate:
    if cfg.mode == DETERMINISTIC:
        return ranked[0]
    shortlist = [rc for rc in ranked if rc.combined_key is not None]
    keys = np.array([rc.combined_key for rc in shortlist], dtype=float)
    weights = np.exp(-(keys - keys.min()) / cfg.temperature)
    weights /= weights.sum()
    rng = stream_rng(cfg.seed, "generate-pick", step)
    return shortlist[int(rng.choice(len(shortlist), p=weights))]


def _selection_loop(
    current: Unit,
    context: list[int],
    n_units: int,
    elib: EmbeddedLibrary,
    dssm_model: DssmModel,
    lm_model: LmModel,
    cfg: GenerationConfig,
    threads: int,
    audit: list | None,
) -> list[Unit]:
    picked: list[Unit] = []
    for step in range(n_units):
        ranked = rank_candidates(
            current, context, elib, dssm_model, lm_model, cfg, threads
        )
        pick = _pick(ranked, cfg, step)
        if audit is not None:
            audit.append(
                {
                    "step": step,
                    "selected": pick.index,
                    "shortlist": [
                        {
                            "index": rc.index,
                            "semantic_rank": rc.semantic_rank,
                            "concat_rank": rc.concat_rank,
                            "combined": rc.combined_key,
                            "relevance": rc.relevance,
                            "concat_cost": rc.concat_cost,
                        }
                        for rc in ranked
                        if rc.combined_key is not None
                    ],
                }
            )
        picked.append(pick.unit)
        context.extend(tokenize_unit(pick.unit, lm_model.vocab))
        current = pick.unit
    return picked


def generate(
    seed: Unit,
    n_units: int,
    elib: EmbeddedLibrary,
    dssm_model: DssmModel,
    lm_model: LmModel,
    cfg: GenerationConfig,
    piece_id: str = "generated",
    threads: int = 1,
    audit: list | None = None,
) -> Piece:
    """Iteratively select and append ``n_units`` units after the seed.

    The note context handed to the join cost is the last 36 tokens of
    everything emitted so far, crossing unit boundaries. Pass ``audit`` to
    collect one record per step with the shortlist and both ranks.
    """
    if len(seed.measures) != elib.library.unit_length:
        raise ValueError(
            f"seed has {len(seed.measures)} measures, library units have "
            f"{elib.library.unit_length}"
        )
    context = tokenize_unit(seed, lm_model.vocab)
    picked = _selection_loop(
        seed, context, n_units, elib, dssm_model, lm_model, cfg, threads, audit
    )
    return concatenate_units([seed] + picked, piece_id)


def continue_piece(
    piece: Piece,
    n_units: int,
    elib: EmbeddedLibrary,
    dssm_model: DssmModel,
    lm_model: LmModel,
    cfg: GenerationConfig,
    threads: int = 1,
    audit: list | None = None,
) -> Piece:
    """Extend a whole piece: its last unit seeds the selection, its entire
    note stream primes the join-cost context."""
    length = elib.library.unit_length
    if len(piece.measures) < length:
        raise ValueError(
            f"seed piece needs at least {length} measures, has {len(piece.measures)}"
        )
    current = Unit(
        measures=tuple(piece.measures[-length:]),
        provenance=Provenance(piece.id, len(piece.measures) - length),
    )
    context = [lm_model.vocab.encode((n.pitch, n.duration)) for n in piece.notes]
    picked = _selection_loop(
        current, context, n_units, elib, dssm_model, lm_model, cfg, threads, audit
    )
    measures = list(piece.measures)
    for u in picked:
        measures.extend(u.measures)
    return assemble_piece(measures, f"{piece.id}+{n_units}u")


def _symbols_to_measures(
    symbols: list[tuple[int, Fraction]], meter: Fraction, n_measures: int
) -> list[Measure]:
    """Pack (pitch, duration) events into exactly n_measures measures.

    Events crossing a barline are split and tied (rests split untied); the
    final event is truncated so the last measure completes exactly.
    """
    budget = meter * n_measures
    acc = Fraction(0)
    trimmed: list[tuple[int, Fraction]] = []
    for pitch, dur in symbols:
        take = min(dur, budget - acc)
        if take <= 0:
            break
        trimmed.append((pitch, take))
        acc += take
    if acc != budget:
        raise ValueError("not enough events to fill the requested measures")
    measures: list[Measure] = []
    current: list[Note] = []
    fill = Fraction(0)
    for pitch, dur in trimmed:
        remaining = dur
        first = True
        while remaining > 0:
            take = min(remaining, meter - fill)
            crosses = remaining > take
            current.append(
                Note(
                    pitch,
                    take,
                    tie_from_prev=(not first) and pitch != REST,
                    tie_to_next=crosses and pitch != REST,
                )
            )
            fill += take
            remaining -= take
            first = False
            if fill == meter:
                measures.append(Measure(tuple(current), meter))
                current = []
                fill = Fraction(0)
    return measures


def _note_loop(
    context: list[int],
    meter: Fraction,
    n_measures: int,
    lm_model: LmModel,
    cfg: GenerationConfig,
) -> list[Measure]:
    vocab = lm_model.vocab
    target = meter * n_measures
    acc = Fraction(0)
    symbols: list[tuple[int, Fraction]] = []
    step = 0
    while acc < target:
        dist = note_distribution(context_window(context, lm_model.context_len), lm_model)
        dist = dist.copy()
        dist[PAD] = 0.0
        dist[OOV] = 0.0
        if cfg.mode == DETERMINISTIC:
            tok = int(np.argmax(dist))
        else:
            p = dist ** (1.0 / cfg.temperature)
            p /= p.sum()
            rng = stream_rng(cfg.seed, "generate-notes", step)
            tok = int(rng.choice(len(p), p=p))
        pitch, dur = vocab.decode(tok)
        symbols.append((pitch, dur))
        context.append(tok)
        acc += dur
        step += 1
    return _symbols_to_measures(symbols, meter, n_measures)


def generate_note_level(
    seed: Unit,
    n_measures: int,
    lm_model: LmModel,
    cfg: GenerationConfig,
    piece_id: str = "generated-notes",
) -> Piece:
    """Seed plus ``n_measures`` of note-by-note generation.

    PAD and OOV are masked out of the predictive distribution, so the
    greedy choice is always a real note; sampled mode applies temperature
    to the masked distribution.
    """
    if n_measures < 1:
        raise ValueError("n_measures must be >= 1")
    context = tokenize_unit(seed, lm_model.vocab)
    generated = _note_loop(context, seed.meter, n_measures, lm_model, cfg)
    return assemble_piece(list(seed.measures) + generated, piece_id)


def continue_piece_notes(
    piece: Piece,
    n_measures: int,
    lm_model: LmModel,
    cfg: GenerationConfig,
) -> Piece:
    """Extend a whole piece note by note; the full piece primes the context."""
    if n_measures < 1:
        raise ValueError("n_measures must be >= 1")
    if not piece.measures:
        raise ValueError("seed piece is empty")
    context = [lm_model.vocab.encode((n.pitch, n.duration)) for n in piece.notes]
    meter = piece.measures[0].meter
    generated = _note_loop(context, meter, n_measures, lm_model, cfg)
    return assemble_piece(list(piece.measures) + generated, f"{piece.id}+{n_measures}m")
