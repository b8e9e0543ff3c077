"""Corpus and model persistence.

Corpus files are UTF-8 with one JSON piece per line; rests use pitch -1
and durations are [numerator, denominator] pairs. Model archives carry a
``UNITSEL-MODEL`` magic header and hex-encoded float64 weights so that
save -> load -> save is byte-identical. Unit libraries persist the same
way under a ``UNITSEL-LIB`` header.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from ._util import canonical_json, sha256_hex
from .music import (
    Measure,
    Note,
    Piece,
    Provenance,
    Unit,
    validate_piece,
)
from .nn import stream_rng

ARCHIVE_MAGIC = "UNITSEL-MODEL"
LIBRARY_MAGIC = "UNITSEL-LIB"
FORMAT_VERSION = 1

MODEL_KINDS = ("autoencoder", "dssm", "lstm")


class CorpusFormatError(ValueError):
    """The file is not parseable as a corpus."""


class CorpusValidationError(ValueError):
    """Pieces parsed but violate model invariants; diagnostics attached."""

    def __init__(self, diagnostics: list[str]):
        super().__init__("; ".join(diagnostics))
        self.diagnostics = diagnostics


class ArchiveError(ValueError):
    """A model or library archive is unreadable, tampered, or unsupported."""


@dataclass(frozen=True)
class Corpus:
    pieces: tuple[Piece, ...]
    meter: Fraction

    def __post_init__(self) -> None:
        ids = [p.id for p in self.pieces]
        if len(set(ids)) != len(ids):
            raise ValueError("piece ids must be unique")
        object.__setattr__(self, "pieces", tuple(self.pieces))


def _fraction_from_pair(pair, what: str) -> Fraction:
    if (
        not isinstance(pair, list)
        or len(pair) != 2
        or not all(isinstance(v, int) for v in pair)
    ):
        raise CorpusFormatError(f"{what} must be an [int, int] pair, got {pair!r}")
    if pair[1] <= 0 or pair[0] <= 0:
        raise CorpusFormatError(f"{what} must be a positive rational, got {pair!r}")
    return Fraction(pair[0], pair[1])


def piece_from_dict(obj: dict) -> Piece:
    if not isinstance(obj, dict) or "id" not in obj or "measures" not in obj:
        raise CorpusFormatError("piece object needs 'id' and 'measures'")
    meter = _fraction_from_pair(obj.get("meter", [1, 1]), "meter")
    measures = []
    for m in obj["measures"]:
        notes = []
        for n in m.get("notes", []):
            dur = _fraction_from_pair(n["dur"], "dur")
            notes.append(
                Note(
                    pitch=int(n["pitch"]),
                    duration=dur,
                    tie_from_prev=bool(n.get("tie_prev", False)),
                    tie_to_next=bool(n.get("tie_next", False)),
                )
            )
        measures.append(Measure(notes=tuple(notes), meter=meter))
    return Piece(id=str(obj["id"]), measures=tuple(measures))


def piece_to_dict(p: Piece) -> dict:
    meter = p.measures[0].meter if p.measures else Fraction(1)
    return {
        "id": p.id,
        "meter": [meter.numerator, meter.denominator],
        "measures": [
            {
                "notes": [
                    {
                        "pitch": n.pitch,
                        "dur": [n.duration.numerator, n.duration.denominator],
                        "tie_prev": n.tie_from_prev,
                        "tie_next": n.tie_to_next,
                    }
                    for n in m.notes
                ]
            }
            for m in p.measures
        ],
    }


def load_corpus(path) -> Corpus:
    """Parse and validate a corpus file; any invalid piece fails the load.

    Raises CorpusFormatError for malformed files and CorpusValidationError
    (with one diagnostic per problem, naming piece and measure) when pieces
    parse but break invariants.
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise CorpusFormatError(f"{path}: empty corpus file")
    pieces: list[Piece] = []
    diagnostics: list[str] = []
    for lineno, line in enumerate(lines, start=1):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusFormatError(f"{path}:{lineno}: not valid JSON ({exc})") from exc
        try:
            piece = piece_from_dict(obj)
        except CorpusFormatError as exc:
            raise CorpusFormatError(f"{path}:{lineno}: {exc}") from exc
        except ValueError as exc:
            diagnostics.append(f"piece {obj.get('id', f'line {lineno}')}: {exc}")
            continue
        for violation in validate_piece(piece):
            diagnostics.append(f"piece {piece.id}: {violation}")
        pieces.append(piece)
    if diagnostics:
        raise CorpusValidationError(diagnostics)
    meters = {p.measures[0].meter for p in pieces if p.measures}
    if len(meters) > 1:
        raise CorpusValidationError(
            [f"mixed meters in corpus: {sorted(str(m) for m in meters)}"]
        )
    meter = meters.pop() if meters else Fraction(1)
    return Corpus(pieces=tuple(pieces), meter=meter)


def save_corpus(c: Corpus, path) -> None:
    Path(path).write_text(
        "".join(canonical_json(piece_to_dict(p)) + "\n" for p in c.pieces),
        encoding="utf-8",
    )


def split_corpus(c: Corpus, train_fraction: float, seed: int) -> tuple[Corpus, Corpus]:
    """Deterministic by-piece split; fractions honored to the nearest piece.

    Never splits a piece across the partition, and both sides keep at
    least one piece.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must be in (0, 1)")
    n = len(c.pieces)
    if n < 2:
        raise ValueError("need at least 2 pieces to split")
    order = stream_rng(seed, "split").permutation(n)
    n_train = int(np.floor(train_fraction * n + 0.5))
    n_train = max(1, min(n - 1, n_train))
    train_idx = sorted(order[:n_train])
    test_idx = sorted(order[n_train:])
    return (
        Corpus(pieces=tuple(c.pieces[i] for i in train_idx), meter=c.meter),
        Corpus(pieces=tuple(c.pieces[i] for i in test_idx), meter=c.meter),
    )


@dataclass
class ModelArchive:
    """Serializable snapshot of a trained model.

    Weights are kept as named float64 arrays; the vocabulary snapshot is
    the exact featurizer state used at training time, hash-checked on load.
    """

    kind: str
    hyperparameters: dict
    layer_dims: list[int]
    weights: list[tuple[str, np.ndarray]]
    vocabulary: dict
    format_version: int = FORMAT_VERSION

    def vocab_hash(self) -> str:
        return sha256_hex(canonical_json(self.vocabulary))

    def weight(self, name: str) -> np.ndarray:
        for wname, arr in self.weights:
            if wname == name:
                return arr
        raise ArchiveError(f"archive has no weight named {name!r}")


def save_model(archive: ModelArchive, path) -> None:
    if archive.kind not in MODEL_KINDS:
        raise ArchiveError(f"unknown model kind {archive.kind!r}")
    payload = {
        "format_version": archive.format_version,
        "kind": archive.kind,
        "hyperparameters": archive.hyperparameters,
        "layer_dims": list(archive.layer_dims),
        "weights": [
            {
                "name": name,
                "shape": list(arr.shape),
                "data": arr.astype("<f8").tobytes().hex(),
            }
            for name, arr in archive.weights
        ],
        "vocabulary": archive.vocabulary,
        "vocab_hash": archive.vocab_hash(),
    }
    text = f"{ARCHIVE_MAGIC} {FORMAT_VERSION}\n" + canonical_json(payload) + "\n"
    Path(path).write_text(text, encoding="utf-8")


def load_model(path) -> ModelArchive:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    header, _, body = text.partition("\n")
    parts = header.split()
    if len(parts) != 2 or parts[0] != ARCHIVE_MAGIC:
        raise ArchiveError(f"{path}: not a model archive (bad magic)")
    if int(parts[1]) != FORMAT_VERSION:
        raise ArchiveError(
            f"{path}: unsupported archive version {parts[1]} (expected {FORMAT_VERSION})"
        )
    try:
        payload = json.loads(body)
    except json.JSONDecodeError as exc:
        raise ArchiveError(f"{path}: corrupt archive payload ({exc})") from exc
    if payload.get("format_version") != FORMAT_VERSION:
        raise ArchiveError(f"{path}: payload version mismatch")
    kind = payload.get("kind")
    if kind not in MODEL_KINDS:
        raise ArchiveError(f"{path}: unknown model kind {kind!r}")
    weights: list[tuple[str, np.ndarray]] = []
    for entry in payload["weights"]:
        shape = tuple(entry["shape"])
        raw = bytes.fromhex(entry["data"])
        expected = int(np.prod(shape, dtype=np.int64)) * 8 if shape else 8
        if len(raw) != expected:
            raise ArchiveError(
                f"{path}: weight {entry['name']!r} has {len(raw)} bytes, "
                f"shape {shape} needs {expected}"
            )
        arr = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
        weights.append((entry["name"], arr))
    archive = ModelArchive(
        kind=kind,
        hyperparameters=payload["hyperparameters"],
        layer_dims=list(payload["layer_dims"]),
        weights=weights,
        vocabulary=payload["vocabulary"],
    )
    if archive.vocab_hash() != payload["vocab_hash"]:
        raise ArchiveError(f"{path}: vocabulary hash mismatch (archive tampered?)")
    return archive


def _unit_to_dict(u: Unit, origins: tuple[Provenance, ...]) -> dict:
    return {
        "measures": piece_to_dict(Piece(id="", measures=u.measures))["measures"],
        "origins": [[o.source_id, o.offset, o.transform] for o in origins],
    }


def save_library(lib, path) -> None:
    """Persist a UnitLibrary (one unit per line, provenance included)."""
    meter = lib.meter
    header = canonical_json(
        {
            "unit_length": lib.unit_length,
            "meter": [meter.numerator, meter.denominator],
            "count": len(lib.units),
        }
    )
    lines = [f"{LIBRARY_MAGIC} {FORMAT_VERSION}", header]
    for u, origins in zip(lib.units, lib.origins):
        lines.append(canonical_json(_unit_to_dict(u, origins)))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_library(path):
    from .augment import UnitLibrary  # local import to avoid a cycle

    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ArchiveError(f"{path}: empty library file")
    parts = lines[0].split()
    if len(parts) != 2 or parts[0] != LIBRARY_MAGIC:
        raise ArchiveError(f"{path}: not a unit library (bad magic)")
    if int(parts[1]) != FORMAT_VERSION:
        raise ArchiveError(f"{path}: unsupported library version {parts[1]}")
    header = json.loads(lines[1])
    meter = _fraction_from_pair(header["meter"], "meter")
    unit_length = int(header["unit_length"])
    units: list[Unit] = []
    origins: list[tuple[Provenance, ...]] = []
    for line in lines[2:]:
        if not line.strip():
            continue
        obj = json.loads(line)
        fake = piece_from_dict({"id": "", "meter": header["meter"], "measures": obj["measures"]})
        provs = tuple(
            Provenance(source_id=o[0], offset=int(o[1]), transform=o[2])
            for o in obj["origins"]
        )
        units.append(Unit(measures=fake.measures, provenance=provs[0]))
        origins.append(provs)
    if len(units) != header["count"]:
        raise ArchiveError(
            f"{path}: header says {header['count']} units, file has {len(units)}"
        )
    return UnitLibrary(
        units=tuple(units),
        origins=tuple(origins),
        unit_length=unit_length,
        meter=meter,
    )
