"""Command-line entry point: ``siamcar gen|train|track|eval|pipeline``."""
import argparse
import logging
import sys
from pathlib import Path

from .data import SyntheticSpec, generate_corpus
from .harness import HarnessError, evaluate, run_pipeline, run_tracker, split_train_config
from .model import SiamCARModel
from .tensor import ShapeError
from .tracker import TrackerHyper
from .train import TrainingDiverged, train

log = logging.getLogger("siamcar")


def cmd_gen(args):
    spec = SyntheticSpec.from_file(args.spec)
    names = generate_corpus(spec, args.out)
    log.info("wrote %d sequences to %s", len(names), args.out)


def log_progress(row):
    if row["step"] % 50 == 0:
        log.info("step %d total %.4f (cls %.4f cen %.4f reg %.4f)",
                 row["step"], row["total"], row["cls"], row["cen"], row["reg"])


def print_report(report):
    print(f"AO {report.ao:.4f}  SR0.5 {report.sr[0.5]:.4f}  SR0.75 {report.sr[0.75]:.4f}  "
          f"AUC {report.auc:.4f}  P@20 {report.precision:.4f}  FPS {report.fps:.1f}")


def cmd_train(args):
    config, model_config = split_train_config(args.config)
    train(args.data, config, out_dir=args.out, model_config=model_config, progress=log_progress)
    log.info("weights and loss_log.csv written to %s", args.out)


def cmd_track(args):
    model = SiamCARModel.load(args.weights)
    hyper = TrackerHyper.from_file(args.config) if args.config else TrackerHyper()
    names = run_tracker(args.data, model, hyper, args.out)
    log.info("tracked %d sequences into %s", len(names), args.out)


def cmd_eval(args):
    print_report(evaluate(args.results, args.data, args.out))


def cmd_pipeline(args):
    run = run_pipeline(args.configs, args.out, progress=log_progress)
    print(f"loss reduction {run.loss_reduction:.1%}")
    print_report(run.report)


def build_parser():
    parser = argparse.ArgumentParser(prog="siamcar", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("gen", help="render a synthetic dataset")
    p.add_argument("--spec", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train the toy model on a dataset")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("track", help="run the tracker over every sequence")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--weights", required=True, type=Path)
    p.add_argument("--config", type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("eval", help="score a results directory against ground truth")
    p.add_argument("--results", required=True, type=Path)
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pipeline", help="gen, train, track and eval from one config directory")
    p.add_argument("--configs", required=True, type=Path,
                   help="directory holding train_corpus.txt, test_corpus.txt, train.txt, track.txt")
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        args.func(args)
    except (HarnessError, TrainingDiverged, ShapeError, ValueError, OSError) as exc:
        print(f"siamcar {args.verb}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
