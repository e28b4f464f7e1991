"""``anneal-cnn`` command line."""
from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from . import annealers, qubo
from .data import DEFAULT_MIRROR, fetch_mnist
from .errors import AnnealCNNError
from .experiments import make_config, read_config, run_experiment

log = logging.getLogger("anneal_cnn")


def _experiment_parser(sub, name, help_text):
    p = sub.add_parser(name, help=help_text)
    p.add_argument("--config", help="INI file with [experiment] [data] [training] [sa] [qa] sections")
    p.add_argument("--regimes", help="comma list of bp,sa,qa")
    p.add_argument("--losses", help="comma list of mse,ce")
    p.add_argument("--lr", dest="learning_rates", help="comma list of learning rates")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--out", dest="out_dir")
    p.add_argument("--data", dest="data_dir", help="directory holding the MNIST IDX files")
    p.add_argument("--full", action="store_true", default=None, help="use all 60,000/10,000 images")
    p.add_argument("--train-cap", type=int)
    p.add_argument("--test-cap", type=int)
    p.add_argument("--folds", type=int)
    p.add_argument("--repeats", type=int, help="datasize: repeat runs and keep the median wall time")
    p.add_argument("--chart", choices=("line", "bar"))
    p.add_argument("--sampler", dest="qa_sampler", choices=("anneal", "qa"),
                   help="QUBO sampler used by the qa regime")
    p.add_argument("--reads", dest="qa_reads", type=int)
    p.set_defaults(handler=cmd_experiment, test=name)
    return p


def build_parser():
    parser = argparse.ArgumentParser(prog="anneal-cnn",
                                     description="CNN training under BP, SA and QUBO-annealing regimes")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    _experiment_parser(sub, "crossval", "k-fold cross-validation at lr 1, 0.1, 0.01")
    _experiment_parser(sub, "epochs", "ten epochs at lr 0.1")
    _experiment_parser(sub, "datasize", "one epoch on growing training subsets")

    q = sub.add_parser("qubo", help="QUBO instance tools")
    qsub = q.add_subparsers(dest="qubo_command", required=True)
    solve = qsub.add_parser("solve", help="sample a QUBO file and print bitstring,energy,occurrences")
    solve.add_argument("file")
    solve.add_argument("--reads", type=int, default=100)
    solve.add_argument("--seed", type=int, default=0)
    solve.add_argument("--sampler", choices=("sa", "qa", "exact"), default="sa")
    solve.set_defaults(handler=cmd_qubo_solve)

    dump = qsub.add_parser("dump", help="write a QUBO instance in text form")
    src = dump.add_mutually_exclusive_group(required=True)
    src.add_argument("--residuals", help="comma list of per-sample residuals")
    src.add_argument("--random", type=int, metavar="N", help="random N-variable instance")
    dump.add_argument("--loss", choices=("mse", "ce"), default="mse")
    dump.add_argument("--form", choices=qubo.FORMS, default="upper_triangular")
    dump.add_argument("--seed", type=int, default=0)
    dump.add_argument("-o", "--output")
    dump.set_defaults(handler=cmd_qubo_dump)

    f = sub.add_parser("fetch", help="download MNIST into a directory")
    f.add_argument("--data", default="data/mnist")
    f.add_argument("--mirror", default=DEFAULT_MIRROR)
    f.set_defaults(handler=cmd_fetch)
    return parser


def cmd_experiment(args):
    file_values = read_config(args.config) if args.config else {}
    keys = ("regimes", "losses", "learning_rates", "seed", "epochs", "out_dir", "data_dir",
            "full", "train_cap", "test_cap", "folds", "repeats", "chart", "qa_sampler", "qa_reads")
    cfg = make_config(args.test, file_values, {k: getattr(args, k) for k in keys})
    table, paths = run_experiment(cfg)
    print(f"{args.test}: {len(table.data_rows())} data rows, {len(table.summary_rows())} summary rows")
    for p in paths.values():
        print(p)
    return 0


def cmd_qubo_solve(args):
    Q = qubo.load(args.file)
    if args.sampler == "exact":
        sample = annealers.exact_sample(Q)
    elif args.sampler == "qa":
        sample = annealers.qa_sample(Q, reads=args.reads, seed=args.seed)
    else:
        sample = annealers.qubo_anneal(Q, reads=args.reads, seed=args.seed)
    sys.stdout.write(sample.to_csv())
    return 0


def cmd_qubo_dump(args):
    if args.residuals is not None:
        res = np.array([float(v) for v in args.residuals.split(",") if v.strip()])
        Q = qubo.encode_loss_qubo(args.loss, res)
    else:
        rng = np.random.default_rng(args.seed)
        q = np.triu(rng.uniform(-1, 1, (args.random, args.random)))
        Q = qubo.QuboMatrix(q, "upper_triangular")
    if args.form == "symmetric":
        Q = qubo.to_symmetric(Q)
    elif args.form == "upper_triangular":
        Q = qubo.to_upper_triangular(Q)
    text = qubo.dumps(Q)
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_fetch(args):
    for p in fetch_mnist(args.data, args.mirror):
        print(p)
    return 0


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.handler(args)
    except (AnnealCNNError, ValueError, ArithmeticError, OSError, KeyError) as exc:
        print(f"anneal-cnn: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
