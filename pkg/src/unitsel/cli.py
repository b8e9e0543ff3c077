"""Command-line surface for the unit-selection pipeline.

Every subcommand writes its artifacts plus a manifest.json (resolved
config, config hash, input-file hashes, seed) into the output directory,
so any artifact can be regenerated bit-exactly from the manifest and the
inputs. Exit codes: 0 success, 1 user error, 2 internal error.
"""

from __future__ import annotations

import argparse
import json
import sys
import traceback
from fractions import Fraction
from pathlib import Path

from . import __version__
from ._util import canonical_json, file_sha256, sha256_hex
from .augment import FULL, TRANSPOSE_ONLY, AugmentConfig, build_library, transpose_corpus
from .autoencoder import (
    AutoencoderModel,
    collision_rate,
    embed_library,
    interpolate,
    rank_at_50,
    reconstruct,
    train_autoencoder,
)
from .corpus import (
    ArchiveError,
    CorpusFormatError,
    CorpusValidationError,
    load_corpus,
    load_library,
    load_model,
    save_corpus,
    save_library,
    save_model,
    split_corpus,
    Corpus,
)
from .dssm import DssmModel, make_training_pairs, train_dssm
from .engine import (
    DETERMINISTIC,
    SAMPLED,
    GenerationConfig,
    continue_piece,
    continue_piece_notes,
)
from .evaluation import REGIME_ORDER, next_unit_ranking, report
from .features import build_vocab
from .lm import LmModel, build_note_vocab, tokenize, train_lm
from .music import Piece, slice_units
from .nn import TrainConfig, stream_rng


class UserError(Exception):
    """Anything the operator can fix: bad paths, bad flags, bad data."""


def _fraction_arg(text: str) -> Fraction:
    if "/" in text:
        num, den = text.split("/", 1)
        return Fraction(int(num), int(den))
    return Fraction(int(text))


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _fraction_list(text: str) -> tuple[Fraction, ...]:
    return tuple(_fraction_arg(v) for v in text.split(",") if v.strip())


def _load_corpus_checked(path: str):
    p = Path(path)
    if not p.exists():
        raise UserError(f"corpus file not found: {p}")
    try:
        return load_corpus(p)
    except (CorpusFormatError, CorpusValidationError) as exc:
        raise UserError(f"invalid corpus {p}: {exc}") from exc


def _load_library_checked(path: str):
    p = Path(path)
    if not p.exists():
        raise UserError(f"library file not found: {p}")
    try:
        return load_library(p)
    except ArchiveError as exc:
        raise UserError(str(exc)) from exc


def _load_model_checked(path: str, expected_kind: str):
    p = Path(path)
    if not p.exists():
        raise UserError(f"model file not found: {p}")
    try:
        archive = load_model(p)
    except ArchiveError as exc:
        raise UserError(str(exc)) from exc
    if archive.kind != expected_kind:
        raise UserError(f"{p} holds a {archive.kind} model, expected {expected_kind}")
    cls = {"autoencoder": AutoencoderModel, "dssm": DssmModel, "lstm": LmModel}[
        expected_kind
    ]
    return cls.from_archive(archive)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(args, out: Path, inputs: dict[str, str]) -> None:
    config = {
        k: (str(v) if isinstance(v, (Fraction, Path)) else v)
        for k, v in sorted(vars(args).items())
        if k not in ("func", "config") and not callable(v)
    }
    config = json.loads(json.dumps(config, default=str))
    manifest = {
        "command": args.command,
        "package_version": __version__,
        "seed": getattr(args, "seed", None),
        "config": config,
        "config_hash": sha256_hex(canonical_json(config)),
        "input_hashes": {
            label: file_sha256(path) for label, path in inputs.items()
        },
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _augment_config(args, mode: str) -> AugmentConfig:
    return AugmentConfig(
        unit_length=args.unit_length,
        transpose_shifts=args.shifts,
        interval_add_constants=args.add_constants,
        interval_mul_constants=args.mul_constants,
        enable_double_time=not args.no_double_time,
        mode=mode,
    )


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        learning_rate=args.learning_rate,
        dropout_keep=args.dropout_keep,
        negatives=args.negatives,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
    )


def cmd_build_lib(args) -> None:
    out = _out_dir(args)
    corpus = _load_corpus_checked(args.corpus)
    cfg = _augment_config(args, args.mode)
    lib = build_library(corpus, cfg)
    save_library(lib, out / "library.lib")
    _write_manifest(args, out, {"corpus": args.corpus})
    print(f"built library of {len(lib)} units -> {out / 'library.lib'}")


def cmd_train_ae(args) -> None:
    out = _out_dir(args)
    lib = _load_library_checked(args.library)
    vocab = build_vocab(lib)
    model = train_autoencoder(
        lib, vocab, _train_config(args), hidden=args.hidden, embedding=args.embedding
    )
    save_model(model.to_archive(), out / "autoencoder.model")
    _write_manifest(args, out, {"library": args.library})
    print(
        f"trained autoencoder ({args.epochs} epochs, final loss "
        f"{model.loss_curve[-1]:.4f}) -> {out / 'autoencoder.model'}"
    )


def cmd_train_dssm(args) -> None:
    out = _out_dir(args)
    corpus = _load_corpus_checked(args.corpus)
    cfg = _augment_config(args, TRANSPOSE_ONLY)
    tcorp = transpose_corpus(corpus, cfg)
    try:
        pairs = make_training_pairs(tcorp, args.unit_length)
    except ValueError as exc:
        raise UserError(str(exc)) from exc
    lib = build_library(tcorp, cfg)
    vocab = build_vocab(lib)
    model = train_dssm(pairs, vocab, _train_config(args))
    save_model(model.to_archive(), out / "dssm.model")
    _write_manifest(args, out, {"corpus": args.corpus})
    print(
        f"trained relevance model on {len(pairs)} pairs (final loss "
        f"{model.loss_curve[-1]:.4f}) -> {out / 'dssm.model'}"
    )


def cmd_train_lm(args) -> None:
    out = _out_dir(args)
    corpus = _load_corpus_checked(args.corpus)
    cfg = _augment_config(args, TRANSPOSE_ONLY)
    tcorp = transpose_corpus(corpus, cfg)
    vocab = build_note_vocab(tcorp)
    streams = [tokenize(p, vocab) for p in tcorp.pieces]
    model = train_lm(streams, vocab, _train_config(args), hidden=args.hidden)
    save_model(model.to_archive(), out / "lstm.model")
    _write_manifest(args, out, {"corpus": args.corpus})
    print(
        f"trained note model (vocab {vocab.size}, final perplexity "
        f"{model.perplexity_curve[-1]:.2f}) -> {out / 'lstm.model'}"
    )


def cmd_reconstruct(args) -> None:
    out = _out_dir(args)
    corpus = _load_corpus_checked(args.corpus)
    lib = _load_library_checked(args.library)
    model = _load_model_checked(args.model, "autoencoder")
    elib = embed_library(model, lib, args.threads)
    pieces = []
    for p in corpus.pieces:
        try:
            pieces.append(reconstruct(p, elib, model, args.threads))
        except ValueError as exc:
            raise UserError(f"cannot reconstruct {p.id}: {exc}") from exc
    save_corpus(Corpus(pieces=tuple(pieces), meter=corpus.meter), out / "reconstructed.cor")
    _write_manifest(
        args, out, {"corpus": args.corpus, "library": args.library, "model": args.model}
    )
    print(f"reconstructed {len(pieces)} pieces -> {out / 'reconstructed.cor'}")


def cmd_interpolate(args) -> None:
    out = _out_dir(args)
    corpus = _load_corpus_checked(args.corpus)
    lib = _load_library_checked(args.library)
    model = _load_model_checked(args.model, "autoencoder")
    by_id = {p.id: p for p in corpus.pieces}
    for which in (args.piece_a, args.piece_b):
        if which not in by_id:
            raise UserError(f"piece {which!r} not in {args.corpus}")
    length = lib.unit_length

    def head_unit(piece_id: str):
        piece = by_id[piece_id]
        units = slice_units(piece, length, stride=length)
        if not units:
            raise UserError(f"piece {piece_id!r} is shorter than one unit")
        return units[0]

    elib = embed_library(model, lib, args.threads)
    a, b = head_unit(args.piece_a), head_unit(args.piece_b)
    pieces = []
    for alpha in args.alphas:
        try:
            unit = interpolate(a, b, float(alpha), elib, model, args.threads)
        except ValueError as exc:
            raise UserError(str(exc)) from exc
        pieces.append(Piece(id=f"interp-{float(alpha):.2f}", measures=unit.measures))
    save_corpus(Corpus(pieces=tuple(pieces), meter=corpus.meter), out / "interpolated.cor")
    _write_manifest(
        args, out, {"corpus": args.corpus, "library": args.library, "model": args.model}
    )
    print(f"interpolated {len(pieces)} blends -> {out / 'interpolated.cor'}")


def _generation_config(args, unit_length: int) -> GenerationConfig:
    return GenerationConfig(
        unit_length=unit_length,
        n_units=getattr(args, "units", 0),
        shortlist_fraction=args.shortlist_fraction,
        mode=SAMPLED if args.sample else DETERMINISTIC,
        temperature=args.temperature,
        seed=args.seed,
    )


def cmd_generate(args) -> None:
    out = _out_dir(args)
    seed_corpus = _load_corpus_checked(args.seed_piece)
    lib = _load_library_checked(args.library)
    dssm_model = _load_model_checked(args.dssm, "dssm")
    lm_model = _load_model_checked(args.lm, "lstm")
    elib = embed_library(dssm_model, lib, args.threads)
    cfg = _generation_config(args, lib.unit_length)
    audit: list = []
    pieces = []
    for piece in seed_corpus.pieces:
        try:
            pieces.append(
                continue_piece(
                    piece, args.units, elib, dssm_model, lm_model, cfg,
                    threads=args.threads, audit=audit,
                )
            )
        except ValueError as exc:
            raise UserError(f"cannot extend {piece.id}: {exc}") from exc
    save_corpus(Corpus(pieces=tuple(pieces), meter=seed_corpus.meter), out / "generated.cor")
    (out / "audit.json").write_text(
        json.dumps(audit, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    _write_manifest(
        args,
        out,
        {
            "seed_piece": args.seed_piece,
            "library": args.library,
            "dssm": args.dssm,
            "lm": args.lm,
        },
    )
    print(f"generated {len(pieces)} pieces -> {out / 'generated.cor'}")


def cmd_generate_notes(args) -> None:
    out = _out_dir(args)
    seed_corpus = _load_corpus_checked(args.seed_piece)
    lm_model = _load_model_checked(args.lm, "lstm")
    cfg = GenerationConfig(
        mode=SAMPLED if args.sample else DETERMINISTIC,
        temperature=args.temperature,
        seed=args.seed,
    )
    pieces = []
    for piece in seed_corpus.pieces:
        try:
            pieces.append(continue_piece_notes(piece, args.measures, lm_model, cfg))
        except ValueError as exc:
            raise UserError(f"cannot extend {piece.id}: {exc}") from exc
    save_corpus(Corpus(pieces=tuple(pieces), meter=seed_corpus.meter), out / "generated-notes.cor")
    _write_manifest(args, out, {"seed_piece": args.seed_piece, "lm": args.lm})
    print(f"generated {len(pieces)} pieces -> {out / 'generated-notes.cor'}")


def cmd_eval_rank50(args) -> None:
    out = _out_dir(args)
    lib = _load_library_checked(args.library)
    model = _load_model_checked(args.model, "autoencoder")
    elib = embed_library(model, lib, args.threads)
    probes = list(lib.units)
    if args.max_probes and len(probes) > args.max_probes:
        sel = stream_rng(args.seed, "rank50-probes").choice(
            len(probes), size=args.max_probes, replace=False
        )
        probes = [probes[i] for i in sorted(sel)]
    try:
        mean_rank, accuracy = rank_at_50(model, elib, probes, args.seed)
    except ValueError as exc:
        raise UserError(str(exc)) from exc
    collisions = collision_rate(elib, threads=args.threads)
    result = {
        "mean_rank_at_50": mean_rank,
        "accuracy_at_50": accuracy,
        "collision_rate_per_100k": collisions,
        "probe_count": len(probes),
        "seed": args.seed,
    }
    text = (
        f"mean rank @ 50      {mean_rank:.4f}\n"
        f"accuracy @ 50       {100.0 * accuracy:.2f}%\n"
        f"collisions per 100k {collisions:.1f}\n"
        f"probes              {len(probes)}\n"
    )
    (out / "rank50.txt").write_text(text, encoding="utf-8")
    (out / "rank50.json").write_text(
        json.dumps(result, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    _write_manifest(args, out, {"library": args.library, "model": args.model})
    print(text, end="")


def cmd_eval_nextunit(args) -> None:
    out = _out_dir(args)
    corpus = _load_corpus_checked(args.corpus)
    lib = _load_library_checked(args.library)
    dssm_model = _load_model_checked(args.dssm, "dssm")
    lm_model = _load_model_checked(args.lm, "lstm")
    elib = embed_library(dssm_model, lib, args.threads)
    probes = make_training_pairs(corpus, lib.unit_length, strict=False)
    if not probes:
        raise UserError("corpus yields no probe pairs at this unit length")
    if args.max_probes and len(probes) > args.max_probes:
        sel = stream_rng(args.seed, "nextunit-probes").choice(
            len(probes), size=args.max_probes, replace=False
        )
        probes = [probes[i] for i in sorted(sel)]
    rows = []
    for regime in args.regimes:
        try:
            rows.append(
                next_unit_ranking(
                    probes, elib, dssm_model, lm_model, regime, args.seed,
                    threads=args.threads,
                )
            )
        except ValueError as exc:
            raise UserError(str(exc)) from exc
    text = report(rows, out / "report.txt")
    _write_manifest(
        args,
        out,
        {
            "corpus": args.corpus,
            "library": args.library,
            "dssm": args.dssm,
            "lm": args.lm,
        },
    )
    print(text, end="")


def cmd_split(args) -> None:
    out = _out_dir(args)
    corpus = _load_corpus_checked(args.corpus)
    try:
        train, test = split_corpus(corpus, args.train_fraction, args.seed)
    except ValueError as exc:
        raise UserError(str(exc)) from exc
    save_corpus(train, out / "train.cor")
    save_corpus(test, out / "test.cor")
    _write_manifest(args, out, {"corpus": args.corpus})
    print(f"split {len(corpus.pieces)} pieces -> {len(train.pieces)} train / {len(test.pieces)} test")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", required=True, help="output directory for artifacts")
    p.add_argument("--seed", type=int, default=0, help="global random seed")
    p.add_argument("--threads", type=int, default=1, help="worker threads for scoring")
    p.add_argument("--config", help="JSON file of flag defaults (flags win)")


def _add_augment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--unit-length", type=int, default=1, choices=(1, 2, 4))
    p.add_argument(
        "--shifts",
        type=_int_list,
        default=None,
        help="comma-separated transpose shifts (default: all in-range)",
    )
    p.add_argument(
        "--add-constants", type=_int_list, default=(-2, -1, 1, 2),
        help="interval addition constants (full mode)",
    )
    p.add_argument(
        "--mul-constants", type=_fraction_list, default=(Fraction(1, 2), Fraction(2)),
        help="interval multiplication constants, e.g. 1/2,2 (full mode)",
    )
    p.add_argument("--no-double-time", action="store_true")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--learning-rate", type=float, default=0.005)
    p.add_argument("--dropout-keep", type=float, default=0.5)
    p.add_argument("--negatives", type=int, default=4)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=32)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="unitsel",
        description="Unit-selection melody engine: build libraries, train models, "
        "reconstruct, generate, and evaluate.",
    )
    parser.add_argument("--version", action="version", version=f"unitsel {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-lib", help="build a unit library from a corpus")
    _add_common(p)
    p.add_argument("--corpus", required=True)
    _add_augment_flags(p)
    p.add_argument("--mode", choices=(FULL, TRANSPOSE_ONLY), default=FULL)
    p.set_defaults(func=cmd_build_lib)

    p = sub.add_parser("train-ae", help="train the autoencoder on a library")
    _add_common(p)
    p.add_argument("--library", required=True)
    _add_train_flags(p)
    p.add_argument("--hidden", type=int, default=512)
    p.add_argument("--embedding", type=int, default=128)
    p.set_defaults(func=cmd_train_ae)

    p = sub.add_parser("train-dssm", help="train the successor-relevance model")
    _add_common(p)
    p.add_argument("--corpus", required=True)
    _add_augment_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train_dssm)

    p = sub.add_parser("train-lm", help="train the note-level language model")
    _add_common(p)
    p.add_argument("--corpus", required=True)
    _add_augment_flags(p)
    _add_train_flags(p)
    p.add_argument("--hidden", type=int, default=128)
    p.set_defaults(func=cmd_train_lm)

    p = sub.add_parser("reconstruct", help="reconstruct pieces by unit selection")
    _add_common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--library", required=True)
    p.add_argument("--model", required=True, help="autoencoder archive")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("interpolate", help="blend two units in embedding space")
    _add_common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--library", required=True)
    p.add_argument("--model", required=True, help="autoencoder archive")
    p.add_argument("--piece-a", required=True)
    p.add_argument("--piece-b", required=True)
    p.add_argument(
        "--alphas", type=lambda t: tuple(float(v) for v in t.split(",")),
        default=(0.0, 0.25, 0.5, 0.75, 1.0),
    )
    p.set_defaults(func=cmd_interpolate)

    p = sub.add_parser("generate", help="extend a seed piece by unit selection")
    _add_common(p)
    p.add_argument("--seed-piece", required=True, help="corpus file of seed pieces")
    p.add_argument("--library", required=True)
    p.add_argument("--dssm", required=True)
    p.add_argument("--lm", required=True)
    p.add_argument("--units", type=int, default=4)
    p.add_argument("--shortlist-fraction", type=float, default=0.05)
    p.add_argument("--sample", action="store_true", help="sample instead of argmax")
    p.add_argument("--temperature", type=float, default=1.0)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("generate-notes", help="extend a seed piece note by note")
    _add_common(p)
    p.add_argument("--seed-piece", required=True)
    p.add_argument("--lm", required=True)
    p.add_argument("--measures", type=int, default=4)
    p.add_argument("--sample", action="store_true")
    p.add_argument("--temperature", type=float, default=1.0)
    p.set_defaults(func=cmd_generate_notes)

    p = sub.add_parser("eval-rank50", help="identity-retrieval ranking of a library")
    _add_common(p)
    p.add_argument("--library", required=True)
    p.add_argument("--model", required=True, help="autoencoder archive")
    p.add_argument("--max-probes", type=int, default=0, help="0 = all units")
    p.set_defaults(func=cmd_eval_rank50)

    p = sub.add_parser("eval-nextunit", help="next-unit ranking on held-out pieces")
    _add_common(p)
    p.add_argument("--corpus", required=True, help="held-out corpus of probe pieces")
    p.add_argument("--library", required=True)
    p.add_argument("--dssm", required=True)
    p.add_argument("--lm", required=True)
    p.add_argument(
        "--regimes",
        type=lambda t: tuple(v.strip() for v in t.split(",")),
        default=("lstm", "dssm", "dssm+lstm"),
        help=f"comma-separated subset of {', '.join(REGIME_ORDER)}",
    )
    p.add_argument("--max-probes", type=int, default=0)
    p.set_defaults(func=cmd_eval_nextunit)

    p = sub.add_parser("split", help="deterministic train/test corpus split")
    _add_common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--train-fraction", type=float, default=0.6)
    p.set_defaults(func=cmd_split)

    return parser


def _apply_config_file(parser: argparse.ArgumentParser, argv: list[str]) -> list[str]:
    """Config file supplies defaults; explicit flags win."""
    if "--config" not in argv:
        return argv
    at = argv.index("--config")
    if at + 1 >= len(argv):
        raise UserError("--config needs a file path")
    cfg_path = Path(argv[at + 1])
    if not cfg_path.exists():
        raise UserError(f"config file not found: {cfg_path}")
    try:
        overrides = json.loads(cfg_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise UserError(f"config file is not valid JSON: {exc}") from exc
    if not isinstance(overrides, dict):
        raise UserError("config file must hold a JSON object of flag values")
    injected: list[str] = []
    for key, value in overrides.items():
        flag = f"--{key.replace('_', '-')}"
        if flag in argv:
            continue  # explicit flag wins
        if isinstance(value, bool):
            if value:
                injected.append(flag)
        else:
            injected.extend([flag, str(value)])
    # insert after the subcommand so argparse scopes them correctly
    return argv[:1] + injected + argv[1:] if injected else argv


def main(argv: list[str] | None = None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    parser = build_parser()
    try:
        argv = _apply_config_file(parser, list(argv))
        args = parser.parse_args(argv)
        args.func(args)
        return 0
    except SystemExit as exc:
        # argparse exits on bad flags (its code 2) and on --help/--version
        # (code 0); bad flags are a user error in our convention
        return 0 if exc.code in (0, None) else 1
    except UserError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 1
    except Exception:
        print("internal error:", file=sys.stderr)
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
