"""Exporter command line: export-store and embed-negatives."""

from __future__ import annotations

import argparse
import sys

from .errors import ExportError
from .export import ExportJob, embed_negatives, export_store, load_manifest


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="embexport")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("export-store", help="encode an image/caption manifest into a store")
    p.add_argument("--manifest", required=True, help="input JSONL (id, image, caption, ...)")
    p.add_argument("--model", default="toy-color", help="encoder identifier")
    p.add_argument("--out", required=True, help="output store directory")
    p.add_argument("--batch-size", type=int, default=32)

    p = sub.add_parser("embed-negatives", help="attach embedded negatives as candidates")
    p.add_argument("--items", required=True, help="items.jsonl from the engine or exporter")
    p.add_argument("--negatives", required=True, help="negatives.jsonl (id -> texts)")
    p.add_argument("--model", default="toy-color", help="encoder identifier")
    p.add_argument("--out", required=True, help="output items-with-candidates JSONL")
    p.add_argument("--batch-size", type=int, default=32)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "export-store":
            job = ExportJob(model=args.model, entries=load_manifest(args.manifest),
                            out_dir=args.out, batch_size=args.batch_size)
            report = export_store(job)
            for reason in report.skipped:
                print(f"skipped {reason}", file=sys.stderr)
            print(f"records={report.exported} items={report.items} "
                  f"skipped={len(report.skipped)}")
        else:
            report = embed_negatives(args.items, args.negatives, args.model, args.out,
                                     batch_size=args.batch_size)
            print(f"embedded={report.exported} unchanged={len(report.skipped)}")
    except ExportError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
