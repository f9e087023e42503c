"""Command-line entry point.

Every subcommand reads an optional JSON config (``--config``), applies the
command-line overrides and runs the corresponding pipeline stage. Stages
share the on-disk cache, so ``detect`` after ``train`` and ``attack``
reuses their artifacts.

Exit status: 0 on success, 2 on invalid input, 3 on numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import pipeline
from .attacks import dumps_adv_dataset
from .detector import DetectionReport, write_reports_csv
from .nn import accuracy, save_network
from .persistence import write_diagram_csv
from .plots import histogram_svg, line_svg, write_svg

MODE_ALIASES = {"unsup": "unsupervised", "sup": "supervised"}


def _config(args) -> pipeline.ExperimentConfig:
    d = {}
    if args.config:
        with open(args.config) as f:
            d = json.load(f)
    if args.seed is not None:
        d["seed"] = args.seed
    for key in ("feature", "q", "criterion", "layers", "mode"):
        value = getattr(args, key, None)
        if value is not None:
            d[key] = MODE_ALIASES.get(value, value) if key == "mode" else value
    return pipeline.ExperimentConfig.from_dict(d)


def _emit(text, out):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_train(args):
    config = _config(args)
    cache = pipeline.Cache()
    net = pipeline.get_network(config, cache)
    _, _, test = pipeline.load_data(config)
    test = pipeline.match_input_shape(net, test)
    if args.out:
        save_network(net, args.out)
    print(f"test accuracy {accuracy(net, test.x, test.y):.4f}")


def cmd_attack(args):
    config = _config(args)
    cache = pipeline.Cache()
    net = pipeline.get_network(config, cache)
    adv = pipeline.get_adv(config, cache, net)
    if args.out:
        Path(args.out).write_bytes(dumps_adv_dataset(adv, net.digest()))
    print(f"{len(adv)} adversarial examples, success rate {adv.success_rate:.4f}")


def cmd_extract(args):
    config = _config(args)
    clean, bad, adv = pipeline.get_features(config, pipeline.Cache())
    print(f"{len(clean)} clean and {len(bad)} adversarial {config.feature} features")
    if not args.out:
        return
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    named = [("clean", i, f) for i, f in zip(adv.clean.ids, clean)]
    named += [("adv", i, f) for i, f in zip(adv.adv_ids, bad)]
    if config.feature == "pd":
        for kind, i, d in named:
            write_diagram_csv(d, out / f"{kind}_{i}.csv")
    else:
        with open(out / "features.csv", "w", newline="") as f:
            w = csv.writer(f)
            for kind, i, v in named:
                w.writerow([kind, int(i)] + [repr(float(a)) for a in v])


def cmd_detect(args):
    report = pipeline.run_detection(_config(args))
    _emit(report.to_json(), args.out)


def cmd_compare_edges(args):
    under, well = pipeline.run_edge_comparison(_config(args))
    if args.out:
        write_reports_csv([under, well], args.out)
    print(f"under-optimized AUC {under.auc:.4f}, well-optimized AUC {well.auc:.4f}")


def cmd_prune_sweep(args):
    fractions = [float(p) for p in args.fractions.split(",")]
    rows = pipeline.run_pruning_sweep(_config(args), fractions)
    if args.out:
        pipeline.write_rows_csv(rows, args.out)
    else:
        for r in rows:
            print(f"{r['fraction']:.2f} clean {r['clean_accuracy']:.4f} adversarial {r['adversarial_accuracy']:.4f}")
    if args.svg:
        x = [r["fraction"] for r in rows]
        svg = line_svg(
            x,
            {"clean": [r["clean_accuracy"] for r in rows],
             "adversarial": [r["adversarial_accuracy"] for r in rows]},
            title="Accuracy after pruning", xlabel="pruned fraction", ylabel="accuracy",
        )
        write_svg(svg, args.svg)


def cmd_report(args):
    reports = [DetectionReport.from_json(Path(p).read_text()) for p in args.reports]
    if args.out:
        write_reports_csv(reports, args.out)
    for path, r in zip(args.reports, reports):
        print(f"{path}: AUC {r.auc:.4f} [{r.ci_low:.4f}, {r.ci_high:.4f}]")
    if args.svg:
        scores = np.concatenate([r.scores for r in reports])
        labels = np.concatenate([r.labels for r in reports])
        svg = histogram_svg(
            {"clean": scores[labels == 1], "adversarial": scores[labels == 0]},
            title="Detector scores", xlabel="score",
        )
        write_svg(svg, args.svg)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config")
    common.add_argument("--seed", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="dissect", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="train (or load) the network")
    p.add_argument("--out", help="write the network file here")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("attack", parents=[common], help="build the adversarial dataset")
    p.add_argument("--out", help="write the adversarial dataset here")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("extract", parents=[common], help="compute per-input features")
    p.add_argument("--feature", choices=pipeline.FEATURES)
    p.add_argument("--q", type=float)
    p.add_argument("--criterion", choices=("mi", "lf"))
    p.add_argument("--layers", type=lambda s: [int(t) for t in s.split(",")])
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("detect", parents=[common], help="fit the detector and report AUC")
    p.add_argument("--mode", choices=("unsup", "sup"))
    p.add_argument("--feature", choices=pipeline.FEATURES)
    p.add_argument("--out", help="write the JSON report here (default stdout)")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("prune-sweep", parents=[common], help="accuracy after pruning")
    p.add_argument("--fractions", default="0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")
    p.add_argument("--out", help="CSV output")
    p.add_argument("--svg", help="SVG line chart output")
    p.set_defaults(func=cmd_prune_sweep)

    p = sub.add_parser("compare-edges", parents=[common], help="under- vs well-optimized edges")
    p.add_argument("--out", help="CSV output")
    p.set_defaults(func=cmd_compare_edges)

    p = sub.add_parser("report", parents=[common], help="summarize detection reports")
    p.add_argument("reports", nargs="+", help="JSON reports written by detect")
    p.add_argument("--out", help="CSV output")
    p.add_argument("--svg", help="SVG score histogram")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ArithmeticError as e:
        print(f"dissect: numerical failure: {e}", file=sys.stderr)
        return 3
    except (ValueError, OSError) as e:
        print(f"dissect: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
