"""Command-line exporter mirroring the engine CLI's flag style."""

from __future__ import annotations

import argparse
import logging
import sys

from . import export
from .encoders import resolve_encoder
from .errors import ExportError

EXIT_CODES = """\
exit codes:
  0  success
  2  bad arguments
  3  input file format error
  4  input/output validation error (empty input, batch dependence, ...)
  5  encoder failure (load error, unusable output)
"""


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="embexport",
        description="Export sentence embeddings to .remb/.meta.jsonl store files.",
        epilog=EXIT_CODES,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--encoder", required=True,
                       help="checkpoint name/path, or hash:<dim> for the built-in test encoder")
        p.add_argument("--out", required=True, help="output store stem")
        p.add_argument("--batch-size", type=int, default=32)
        p.add_argument("--no-normalize", action="store_true",
                       help="store raw encoder outputs (normalized flag unset)")

    p = sub.add_parser("corpus", help="sentence-per-line text file, resumable")
    p.add_argument("--input", required=True, help="text file, one sentence per line")
    p.add_argument("--resume", action="store_true",
                   help="continue a previously interrupted export of the same job")
    p.add_argument("--chunk-rows", type=int, default=export.DEFAULT_CHUNK_ROWS)
    common(p)

    p = sub.add_parser("dataset", help="instances of a dataset JSONL file")
    p.add_argument("--dataset", required=True)
    p.add_argument("--part", choices=("text", "premises", "choices"), default="text",
                   help="closed-set text, or multiple-choice premises/choices")
    p.add_argument("--answer-template", default="the answer is: {label}",
                   help="prefix template rendered around each choice")
    common(p)

    p = sub.add_parser("prompts", help="rendered label prompts of a verbalizer file")
    p.add_argument("--verbalizer", required=True)
    p.add_argument("--include-synonyms", action="store_true",
                   help="also render synonym-substituted prompts (multi-synonym retrieval)")
    common(p)

    return parser


def run(args: argparse.Namespace) -> int:
    if args.batch_size < 1:
        from .errors import UsageError

        raise UsageError(f"--batch-size must be >= 1, got {args.batch_size}")
    if args.command == "corpus":
        rows = export.rows_from_lines(args.input)
    elif args.command == "dataset":
        if args.part == "text":
            rows = export.rows_from_closed_set(args.dataset)
        elif args.part == "premises":
            rows = export.rows_from_premises(args.dataset)
        else:
            rows = export.rows_from_choices(args.dataset, args.answer_template)
    else:
        rows = export.rows_from_verbalizer(args.verbalizer, args.include_synonyms)

    encoder = resolve_encoder(args.encoder)
    job = export.ExportJob(
        encoder=encoder,
        rows=rows,
        out_path=args.out,
        batch_size=args.batch_size,
        normalize=not args.no_normalize,
    )
    if args.command == "corpus":
        remb_path, _ = export.export_corpus(job, resume=args.resume, chunk_rows=args.chunk_rows)
    else:
        remb_path, _ = export.export_texts(job)
    export.print_summary(remb_path, len(rows), encoder.dim, job.normalize)
    return 0


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except ExportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


def entrypoint() -> None:
    sys.exit(main())
