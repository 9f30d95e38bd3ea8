"""Command-line frontend.

Subcommands: evaluate, synth, negatives, build-store, dispersion. Exit
codes: 0 success, 1 structural error (bad files, inconsistent dims), 2 usage
error. All randomness flows from --seed so any run can be replayed from the
"config" echo in its summary JSON plus the input files.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import shutil
import sys
from pathlib import Path

from . import scoring, store, synth
from .errors import EngineError
from .evaluation import (
    FileNegatives,
    LabeledScore,
    LexiconNegatives,
    dispersion_report,
    run_pipeline,
)
from .retrieval import RetrievalConfig, RetrievalVariant
from .scoring import ScoreConfig, ScoreKind
from .textmetrics import CaptionMetric, CaptionMetricConfig

ITEMS_CSV = "items.csv"
CURVE_CSV = "curve.csv"
SUMMARY_JSON = "summary.json"

_SCORE_CHOICES = [k.value for k in ScoreKind]
_VARIANT_CHOICES = [v.value for v in RetrievalVariant]
_METRIC_CHOICES = [m.value for m in CaptionMetric]

# proxy score kinds only pair with variants of the matching proxy modality
_KIND_VARIANTS = {
    ScoreKind.IMAGE_PROXY: {RetrievalVariant.I2IR, RetrievalVariant.T2IR},
    ScoreKind.TEXT_PROXY: {RetrievalVariant.I2TR, RetrievalVariant.T2TR},
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="memsel")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("evaluate", help="score items and write the risk-coverage artifacts")
    p.add_argument("--store", required=True, help="store directory (or manifest.json path)")
    p.add_argument("--items", required=True, help="items.jsonl path")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--score", choices=_SCORE_CHOICES, default="base")
    p.add_argument("--variant", choices=_VARIANT_CHOICES, default="i2tr")
    p.add_argument("--k", type=int, default=15)
    p.add_argument("--weight-floor", type=float, default=0.0)
    p.add_argument("--temperature", type=float, default=0.01)
    p.add_argument("--metric", choices=_METRIC_CHOICES, default="cider")
    p.add_argument("--ngram", type=int, default=4)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--negatives-file", default=None)
    p.add_argument("--lexicon", default=None)
    p.add_argument("--n", type=int, default=10, help="negatives per item when --lexicon is used")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)

    p = sub.add_parser("synth", help="write a synthetic store + items + groups")
    p.add_argument("--out", required=True)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--concepts", type=int, default=8)
    p.add_argument("--retrieval-per-concept", type=int, default=50)
    p.add_argument("--eval-per-concept", type=int, default=40)
    p.add_argument("--wrong-caption-rate", type=float, default=0.3)
    p.add_argument("--image-noise", type=float, default=0.2)
    p.add_argument("--text-noise", type=float, default=0.2)
    p.add_argument("--scale-bias", default="1.0",
                   help="comma-separated biases cycled over concepts")
    p.add_argument("--caption-mode", action="store_true",
                   help="emit reference captions instead of correct flags")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("negatives", help="rule-based hard negatives for an items file")
    p.add_argument("--items", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lexicon", default=None, help="defaults to the bundled lexicon")
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("build-store", help="assemble a store from raw payload files")
    p.add_argument("--images", required=True, help="raw little-endian f32 image rows")
    p.add_argument("--texts", required=True, help="raw little-endian f32 text rows")
    p.add_argument("--records", required=True, help="records.jsonl")
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--normalized", action="store_true",
                   help="payloads are already unit-norm")
    p.add_argument("--out", required=True)

    p = sub.add_parser("dispersion", help="per-group score mean/std report")
    p.add_argument("--scores", required=True, help="items.csv from evaluate")
    p.add_argument("--groups", required=True, help="groups.json")
    p.add_argument("--out", default=None, help="output csv (default stdout)")
    return parser


def _echo_config(args: argparse.Namespace) -> dict:
    config = dict(vars(args))
    config.pop("func", None)
    return config


def cmd_evaluate(args) -> int:
    kind = ScoreKind(args.score)
    variant = RetrievalVariant(args.variant)
    if kind in _KIND_VARIANTS and variant not in _KIND_VARIANTS[kind]:
        print(f"error: --score {args.score} needs a variant producing that proxy "
              f"(one of {sorted(v.value for v in _KIND_VARIANTS[kind])})", file=sys.stderr)
        return 2
    retrieval_set = store.load_retrieval_set(args.store)
    items = store.load_evaluation_items(args.items, retrieval_set.dim)
    negatives_source = None
    if args.negatives_file:
        negatives_source = FileNegatives(scoring.load_negatives(args.negatives_file))
    elif args.lexicon:
        negatives_source = LexiconNegatives(
            lexicon=scoring.NegativeLexicon.from_file(args.lexicon),
            n=args.n, seed=args.seed,
        )
    metric_cfg = CaptionMetricConfig(
        metric=CaptionMetric(args.metric), n=args.ngram, beta=args.beta
    )
    result = run_pipeline(
        items,
        retrieval_set,
        retrieval_cfg=RetrievalConfig(k=args.k, variant=variant, weight_floor=args.weight_floor),
        score_cfg=ScoreConfig(kind=kind, temperature=args.temperature),
        metric_cfg=metric_cfg,
        negatives_source=negatives_source,
        workers=max(1, args.workers),
    )

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with (out / ITEMS_CSV).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "score", "kind", "loss", "excluded"])
        for row in result.items:
            if row.error is not None:
                writer.writerow([row.item_id,
                                 "" if row.record is None else repr(row.record.score),
                                 "" if row.record is None else row.record.kind.value,
                                 "", 1])
            else:
                writer.writerow([row.item_id, repr(row.record.score),
                                 row.record.kind.value, row.loss, 0])
    with (out / CURVE_CSV).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["coverage", "risk", "generalized_risk", "threshold"])
        for pt in result.curve.points:
            writer.writerow([repr(pt.coverage), repr(pt.risk),
                             repr(pt.generalized_risk), repr(pt.threshold)])
    summary = {
        "aurc": result.curve.aurc,
        "augrc": result.curve.augrc,
        "n": result.curve.n_items,
        "excluded": result.excluded,
        "clamped": result.clamped,
        "config": _echo_config(args),
    }
    (out / SUMMARY_JSON).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", "utf-8")
    print(f"scored={result.curve.n_items} excluded={result.excluded} "
          f"aurc={result.curve.aurc:.6f} augrc={result.curve.augrc:.6f}")
    return 0


def cmd_synth(args) -> int:
    if args.concepts < 2:
        print("error: --concepts must be at least 2", file=sys.stderr)
        return 2
    try:
        biases = [float(b) for b in str(args.scale_bias).split(",") if b.strip()]
    except ValueError:
        print(f"error: bad --scale-bias {args.scale_bias!r}", file=sys.stderr)
        return 2
    concepts = synth.random_concepts(
        dim=args.dim, count=args.concepts, seed=args.seed,
        image_noise=args.image_noise, text_noise=args.text_noise,
        scale_biases=biases or None,
    )
    world = synth.generate_world(
        synth.WorldConfig(
            dim=args.dim, concepts=concepts,
            retrieval_per_concept=args.retrieval_per_concept,
            eval_per_concept=args.eval_per_concept,
            wrong_caption_rate=args.wrong_caption_rate,
            seed=args.seed, caption_mode=args.caption_mode,
        )
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    store.save_retrieval_set(world.retrieval_set, out)
    store.save_evaluation_items(world.items, out / "items.jsonl")
    (out / "groups.json").write_text(
        json.dumps(world.groups, indent=2, sort_keys=True) + "\n", "utf-8"
    )
    print(f"records={len(world.retrieval_set)} items={len(world.items)} out={out}")
    return 0


def cmd_negatives(args) -> int:
    items = store.load_evaluation_items(args.items, dim=None)
    lexicon = (scoring.NegativeLexicon.from_file(args.lexicon)
               if args.lexicon else scoring.default_lexicon())
    warned = 0
    with Path(args.out).open("w", encoding="utf-8") as fh:
        for item in items:
            try:
                negatives = scoring.generate_negatives(
                    item.prediction_text, lexicon, n=args.n,
                    seed=scoring.derive_item_seed(args.seed, item.id),
                )
            except EngineError:
                negatives = []
                warned += 1
            fh.write(json.dumps({"id": item.id, "negatives": negatives},
                                ensure_ascii=False) + "\n")
    print(f"items={len(items)} warned={warned}")
    return 0


def cmd_build_store(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records_path = Path(args.records)
    if not records_path.is_file():
        print(f"error: MissingFile: {records_path}", file=sys.stderr)
        return 1
    count = sum(1 for ln in records_path.read_text("utf-8").splitlines() if ln.strip())
    manifest = {"version": store.STORE_VERSION, "dim": args.dim, "count": count,
                "normalized": bool(args.normalized), "dtype": store.STORE_DTYPE}
    (out / store.MANIFEST_NAME).write_text(json.dumps(manifest) + "\n", "utf-8")
    shutil.copyfile(args.images, out / store.IMAGES_NAME)
    shutil.copyfile(args.texts, out / store.TEXTS_NAME)
    if records_path.resolve() != (out / store.RECORDS_NAME).resolve():
        shutil.copyfile(records_path, out / store.RECORDS_NAME)
    # loading validates the assembled store; re-save normalizes if needed
    loaded = store.load_retrieval_set(out)
    if not args.normalized:
        store.save_retrieval_set(loaded, out)
    print(f"records={count} dim={args.dim} out={out}")
    return 0


def cmd_dispersion(args) -> int:
    groups = json.loads(Path(args.groups).read_text("utf-8"))
    scores = []
    with Path(args.scores).open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            if row.get("excluded") == "1":
                continue
            scores.append(LabeledScore(item_id=row["id"], score=float(row["score"]),
                                       loss=int(row["loss"] or 0)))
    report = dispersion_report(scores, groups)
    lines = ["group,mean,std,count"]
    lines += [f"{g.label},{g.mean!r},{g.std!r},{g.count}" for g in report]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, "utf-8")
    else:
        sys.stdout.write(text)
    return 0


_COMMANDS = {
    "evaluate": cmd_evaluate,
    "synth": cmd_synth,
    "negatives": cmd_negatives,
    "build-store": cmd_build_store,
    "dispersion": cmd_dispersion,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except EngineError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
