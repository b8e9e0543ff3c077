"""Corpus augmentation and unit-library construction.

Transforms: semitone transposition, interval add/multiply (pitches rebuilt
from the first non-rest anchor and superimposed on the original rhythm),
and double-time compression of measure pairs. A transform that pushes any
pitch outside the admissible range returns None, meaning that variant is
dropped, not that the call failed.

``transpose_only`` mode disables the interval and double-time transforms;
it is the mode required when preparing material for the sequential models,
which must see unaltered interval and rhythm structure.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from fractions import Fraction

from .music import (
    LIBRARY_PITCH_RANGE,
    DurationError,
    Measure,
    Piece,
    Provenance,
    Unit,
)

FULL = "full"
TRANSPOSE_ONLY = "transpose_only"


@dataclass(frozen=True)
class AugmentConfig:
    """Settings for library construction.

    ``transpose_shifts`` of None means every semitone shift that keeps the
    unit inside ``pitch_range`` (full coverage); an explicit tuple limits
    the shifts (0 must be listed if untransposed units are wanted).
    """

    unit_length: int = 1
    pitch_range: tuple[int, int] = LIBRARY_PITCH_RANGE
    transpose_shifts: tuple[int, ...] | None = None
    interval_add_constants: tuple[int, ...] = (-2, -1, 1, 2)
    interval_mul_constants: tuple[Fraction, ...] = (Fraction(1, 2), Fraction(2))
    enable_double_time: bool = True
    mode: str = FULL

    def __post_init__(self) -> None:
        if self.unit_length not in (1, 2, 4):
            raise ValueError("unit_length must be 1, 2 or 4")
        if self.mode not in (FULL, TRANSPOSE_ONLY):
            raise ValueError(f"unknown mode {self.mode!r}")
        lo, hi = self.pitch_range
        if not (0 <= lo < hi <= 127):
            raise ValueError(f"bad pitch range {self.pitch_range}")


def _with_tag(prov: Provenance, tag: str) -> Provenance:
    if not tag:
        return prov
    joined = f"{prov.transform};{tag}" if prov.transform else tag
    return replace(prov, transform=joined)


def transpose(
    u: Unit, semitones: int, pitch_range: tuple[int, int] = LIBRARY_PITCH_RANGE
) -> Unit | None:
    """Shift every non-rest pitch; rhythm, rests and ties are untouched.

    Returns None when any resulting pitch leaves ``pitch_range`` (the
    transposition is dropped). Transposing by 0 returns the unit itself.
    """
    if semitones == 0:
        return u
    lo, hi = pitch_range
    new_measures = []
    for m in u.measures:
        notes = []
        for n in m.notes:
            if n.is_rest:
                notes.append(n)
                continue
            p = n.pitch + semitones
            if not lo <= p <= hi:
                return None
            notes.append(replace(n, pitch=p))
        new_measures.append(Measure(notes=tuple(notes), meter=m.meter))
    return Unit(
        measures=tuple(new_measures),
        provenance=_with_tag(u.provenance, f"t{semitones:+d}"),
    )


def _round_half_away(x: Fraction) -> int:
    if x >= 0:
        return int((2 * x + 1) // 2)
    return -int((2 * (-x) + 1) // 2)


def _fix_internal_ties(measures: list[Measure]) -> list[Measure]:
    """Clear ties between adjacent notes whose pitches no longer match.

    Only interior pairs are touched; the unit's outermost tie flags refer
    to context beyond the unit and stay as they are.
    """
    notes = [n for m in measures for n in m.notes]
    for k in range(len(notes) - 1):
        cur, nxt = notes[k], notes[k + 1]
        if cur.tie_to_next and cur.pitch != nxt.pitch:
            notes[k] = replace(cur, tie_to_next=False)
            notes[k + 1] = replace(nxt, tie_from_prev=False)
    out = []
    pos = 0
    for m in measures:
        count = len(m.notes)
        out.append(Measure(notes=tuple(notes[pos : pos + count]), meter=m.meter))
        pos += count
    return out


def interval_transform(
    u: Unit,
    op: str,
    c: int | Fraction,
    pitch_range: tuple[int, int] = LIBRARY_PITCH_RANGE,
) -> Unit | None:
    """Rewrite the melodic intervals: i -> i + c ("add") or round(i * c) ("mul").

    The first non-rest pitch anchors the rebuilt contour; rests pass
    through untouched and contribute no intervals. Multiplication rounds
    to the nearest integer, ties away from zero. Returns None if any new
    pitch leaves ``pitch_range``. A tie that would join two different
    pitches after the rewrite is cleared.
    """
    if op not in ("add", "mul"):
        raise ValueError(f"unknown interval op {op!r}")
    pitched = [n.pitch for n in u.notes if not n.is_rest]
    if not pitched:
        raise ValueError("interval transform needs at least one non-rest note")
    c = Fraction(c)
    lo, hi = pitch_range
    new_pitches = [pitched[0]]
    for prev, cur in zip(pitched, pitched[1:]):
        interval = Fraction(cur - prev)
        if op == "add":
            shifted = interval + c
        else:
            shifted = Fraction(_round_half_away(interval * c))
        new_pitches.append(new_pitches[-1] + int(shifted))
    if any(not lo <= p <= hi for p in new_pitches):
        return None
    it = iter(new_pitches)
    new_measures = []
    for m in u.measures:
        notes = []
        for n in m.notes:
            if n.is_rest:
                notes.append(n)
            else:
                notes.append(replace(n, pitch=next(it)))
        new_measures.append(Measure(notes=tuple(notes), meter=m.meter))
    new_measures = _fix_internal_ties(new_measures)
    if op == "add":
        tag = f"add{int(c):+d}"
    else:
        tag = f"mul{c.numerator}/{c.denominator}" if c.denominator != 1 else f"mul{c.numerator}"
    return Unit(measures=tuple(new_measures), provenance=_with_tag(u.provenance, tag))


def double_time(m1: Measure, m2: Measure) -> Measure:
    """Compress two consecutive measures into one by halving every duration.

    Raises DurationError when halving would exceed the duration grid. A tie
    across the old barline simply becomes an internal tie.
    """
    if m1.meter != m2.meter:
        raise ValueError("double_time needs measures of the same meter")
    notes = []
    for n in list(m1.notes) + list(m2.notes):
        notes.append(replace(n, duration=n.duration / 2))
    return Measure(notes=tuple(notes), meter=m1.meter)


def double_time_piece(p: Piece) -> Piece | None:
    """Half-length piece from non-overlapping measure pairs.

    An odd trailing measure is dropped; returns None when the piece is too
    short or any pair would break the duration grid.
    """
    if len(p.measures) < 2:
        return None
    measures = []
    try:
        for k in range(0, len(p.measures) - 1, 2):
            measures.append(double_time(p.measures[k], p.measures[k + 1]))
    except DurationError:
        return None
    return Piece(id=p.id, measures=tuple(measures))


def transpose_piece(
    p: Piece, semitones: int, pitch_range: tuple[int, int] = LIBRARY_PITCH_RANGE
) -> Piece | None:
    """Whole-piece transposition; None when any pitch would leave the range."""
    if semitones == 0:
        return p
    lo, hi = pitch_range
    new_measures = []
    for m in p.measures:
        notes = []
        for n in m.notes:
            if n.is_rest:
                notes.append(n)
                continue
            pv = n.pitch + semitones
            if not lo <= pv <= hi:
                return None
            notes.append(replace(n, pitch=pv))
        new_measures.append(Measure(notes=tuple(notes), meter=m.meter))
    return Piece(id=f"{p.id}@t{semitones:+d}", measures=tuple(new_measures))


def _coverage_shifts(
    pitches: list[int], pitch_range: tuple[int, int]
) -> list[int]:
    if not pitches:
        return [0]
    lo, hi = pitch_range
    low = lo - min(pitches)
    high = hi - max(pitches)
    if low > high:
        # span wider than the admissible range; no shift can fit it
        return []
    return list(range(low, high + 1))


def _admissible(u: Unit, pitch_range: tuple[int, int]) -> bool:
    lo, hi = pitch_range
    return all(n.is_rest or lo <= n.pitch <= hi for n in u.notes)


def transpose_corpus(c, cfg: AugmentConfig):
    """All in-range transposed copies of every piece (shift 0 included).

    Returns a new Corpus; ids of shifted copies get an ``@t{shift}`` suffix.
    """
    from .corpus import Corpus

    pieces = []
    for p in c.pieces:
        pitched = [n.pitch for n in p.notes if not n.is_rest]
        if cfg.transpose_shifts is None:
            shifts = _coverage_shifts(pitched, cfg.pitch_range)
        else:
            shifts = sorted(set(cfg.transpose_shifts) | {0})
        for k in shifts:
            moved = transpose_piece(p, k, cfg.pitch_range)
            if moved is not None:
                pieces.append(moved)
    return Corpus(pieces=tuple(pieces), meter=c.meter)


@dataclass
class UnitLibrary:
    """Deduplicated set of units; ``origins[i]`` lists every provenance of
    ``units[i]`` (the first one is the unit's own)."""

    units: tuple[Unit, ...]
    origins: tuple[tuple[Provenance, ...], ...]
    unit_length: int
    meter: Fraction
    _index: dict | None = field(default=None, repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.units)

    def index_of(self, u: Unit) -> int | None:
        """Library index of a unit with identical content, if any."""
        if self._index is None:
            self._index = {
                unit.content_key(): i for i, unit in enumerate(self.units)
            }
        return self._index.get(u.content_key())


def _pitch_variants(u: Unit, cfg: AugmentConfig) -> list[Unit]:
    variants = [u]
    if cfg.mode == FULL and any(not n.is_rest for n in u.notes):
        for const in cfg.interval_add_constants:
            v = interval_transform(u, "add", const, cfg.pitch_range)
            if v is not None:
                variants.append(v)
        for const in cfg.interval_mul_constants:
            v = interval_transform(u, "mul", const, cfg.pitch_range)
            if v is not None:
                variants.append(v)
    return variants


def build_library(c, cfg: AugmentConfig) -> UnitLibrary:
    """Slide a unit window over every piece, apply the enabled transforms,
    and deduplicate exact-equal note sequences.

    Window stride is one measure. Results do not depend on evaluation
    order: origins are recorded in piece/window/transform order.
    """
    if not c.pieces:
        raise ValueError("cannot build a library from an empty corpus")
    units: list[Unit] = []
    origins: list[list[Provenance]] = []
    seen: dict = {}
    for piece in c.pieces:
        sources = [(piece, "")]
        if cfg.mode == FULL and cfg.enable_double_time:
            dt = double_time_piece(piece)
            if dt is not None and len(dt.measures) >= cfg.unit_length:
                sources.append((dt, "dt"))
        for source, source_tag in sources:
            for off in range(0, len(source.measures) - cfg.unit_length + 1):
                window = Unit(
                    measures=tuple(source.measures[off : off + cfg.unit_length]),
                    provenance=_with_tag(
                        Provenance(source_id=piece.id, offset=off), source_tag
                    ),
                )
                for variant in _pitch_variants(window, cfg):
                    pitched = [n.pitch for n in variant.notes if not n.is_rest]
                    if cfg.transpose_shifts is None:
                        shifts = _coverage_shifts(pitched, cfg.pitch_range)
                    else:
                        shifts = sorted(set(cfg.transpose_shifts))
                    for k in shifts:
                        moved = transpose(variant, k, cfg.pitch_range)
                        if moved is None or not _admissible(moved, cfg.pitch_range):
                            continue
                        key = moved.content_key()
                        idx = seen.get(key)
                        if idx is None:
                            seen[key] = len(units)
                            units.append(moved)
                            origins.append([moved.provenance])
                        else:
                            origins[idx].append(moved.provenance)
    return UnitLibrary(
        units=tuple(units),
        origins=tuple(tuple(o) for o in origins),
        unit_length=cfg.unit_length,
        meter=c.meter,
    )
