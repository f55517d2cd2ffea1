"""``ldr`` command line: verify, bench, train, reconstruct.

Exit codes: 0 success, 1 property or runtime failure, 2 usage error.
Every run logs its fully resolved configuration (as JSON) to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys

import numpy as np

from ldr import bench, data, kernels, nn, verify
from ldr.displacement import DEFAULT_REL_TOL, extract_generators, toeplitz_like_reconstruct
from ldr.exceptions import LdrError

log = logging.getLogger("ldr")

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2


class UsageError(Exception):
    pass


def _int_list(text):
    try:
        vals = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _str_list(choices):
    def parse(text):
        vals = [t.strip() for t in text.split(",") if t.strip()]
        bad = [v for v in vals if v not in choices]
        if bad or not vals:
            raise argparse.ArgumentTypeError(f"choose from {','.join(choices)}; got {text!r}")
        return vals

    return parse


def _positive_float(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive: {text!r}")
    return v


def _log_config(args):
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    cfg["kernel_backend"] = kernels.backend()
    log.info("resolved config: %s", json.dumps(cfg, sort_keys=True))
    return cfg


# ---------------------------------------------------------------------------
# verify


def cmd_verify(args):
    results = verify.run_all(seed=args.seed, tolerance=args.tolerance, fault=args.inject_fault)
    report = verify.format_report(results)
    print(report)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(report + "\n")
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAIL


# ---------------------------------------------------------------------------
# bench


def cmd_bench(args):
    try:
        config = bench.SweepConfig(
            n_values=args.n, r_values=args.rank, b_values=args.batch,
            scenarios=args.scenarios, kinds=args.kinds, trials=args.trials,
            warmup=args.warmup, seed=args.seed, dense_mode=args.dense_mode,
        )
    except ValueError as exc:
        raise UsageError(str(exc))
    if args.trials < 5 or args.warmup < 1:
        raise UsageError("--trials must be >= 5 and --warmup >= 1")

    def progress(rec):
        log.info("%s %s n=%d r=%d b=%d median %.0f ns (%d FFTs)",
                 rec.scenario, rec.kind, rec.n, rec.r, rec.b, rec.median_ns, rec.fft_count)

    records = bench.scaling_sweep(config, progress)
    meta = bench.machine_metadata(args.dense_mode)
    meta["config"] = _log_config(args)
    bench.write_csv(args.out, records, meta)
    print(f"wrote {len(records)} records to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train


def _load_datasets(args):
    if args.synthetic:
        try:
            d, n, c = (int(t) for t in args.synthetic.split(","))
        except ValueError:
            raise UsageError("--synthetic expects D,N,C")
        full = data.synthetic_separable(d, n, c, seed=args.seed)
        cut = max(1, int(round(0.8 * n)))
        order = np.random.default_rng(args.seed).permutation(n)
        train_set = full.subset(order[:cut])
        test_set = full.subset(order[cut:]) if cut < n else train_set
        return train_set, test_set
    if args.data_dir:
        return data.load_mnist(args.data_dir, "train"), data.load_mnist(args.data_dir, "test")
    if args.train_images and args.train_labels:
        train_set = data.load_idx_dataset(args.train_images, args.train_labels, args.classes)
        test_set = train_set
        if args.test_images and args.test_labels:
            test_set = data.load_idx_dataset(args.test_images, args.test_labels, args.classes)
        return train_set, test_set
    raise UsageError("give --data-dir, --train-images/--train-labels, or --synthetic")


def _hidden_specs(args, d):
    m = args.hidden if args.hidden is not None else d
    bias = not args.no_hidden_bias
    if args.layer == "none":
        return []
    if args.layer == "dense":
        hidden = nn.Dense(m, bias)
    elif args.layer == "lowrank":
        hidden = nn.LowRank(m, args.rank, bias)
    elif args.layer == "circulant":
        hidden = nn.Circulant(d, bias)
    else:
        hidden = nn.ToeplitzLike(m, d, args.rank, bias)
    return [hidden, nn.Activation("relu")]


def cmd_train(args):
    train_set, test_set = _load_datasets(args)
    specs = _hidden_specs(args, train_set.dim) + [nn.Dense(train_set.class_count)]
    try:
        net = nn.build_network(train_set.dim, specs, seed=args.seed)
    except (ValueError, LdrError) as exc:
        raise UsageError(str(exc))
    steps_per_epoch = math.ceil(len(train_set) / args.batch)
    max_steps = args.steps if args.steps is not None else args.epochs * steps_per_epoch
    config = nn.TrainConfig(
        global_learning_rate=args.global_lr,
        structured_learning_rate=args.structured_lr,
        decay_factor=args.decay_factor,
        decay_interval=args.decay_interval or steps_per_epoch,
        batch_size=args.batch,
        max_steps=max_steps,
        seed=args.seed,
    )
    resolved = _log_config(args)
    log.info("train config: %s", json.dumps(config.to_dict(), sort_keys=True))
    log.info("resolved max_steps=%d (steps per epoch %d)", max_steps, steps_per_epoch)

    def progress(row):
        log.info("epoch %d step %d train_loss %.6f eval_error %.4f",
                 row.epoch, row.step, row.train_loss, row.eval_error)

    net, history = nn.train(net, train_set, config, test_set, progress)
    if args.checkpoint_out:
        nn.save_checkpoint(args.checkpoint_out, net, config, max_steps)
    if args.history_out:
        nn.write_history_csv(args.history_out, history)
    err = nn.evaluate(net, test_set)
    count = nn.parameter_count(net)
    print(f"test_error {err:.4f}")
    print(f"parameter_count {count}")
    if args.summary_out:
        with open(args.summary_out, "w") as fh:
            json.dump({"test_error": err, "parameter_count": count, "config": resolved,
                       "train_config": config.to_dict()}, fh, indent=2, sort_keys=True)
    return EXIT_OK


# ---------------------------------------------------------------------------
# reconstruct


def read_dense_matrix(path):
    """Plain text: first line ``n n``, then ``n`` rows of ``n`` numbers."""
    with open(path) as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise ValueError(f"{path} is empty")
    head = lines[0].split()
    if len(head) != 2 or head[0] != head[1]:
        raise ValueError(f"{path}: first line must be 'n n', got {lines[0]!r}")
    n = int(head[0])
    if len(lines) - 1 != n:
        raise ValueError(f"{path}: expected {n} rows, found {len(lines) - 1}")
    M = np.array([[float(t) for t in ln.split()] for ln in lines[1:]])
    if M.shape != (n, n):
        raise ValueError(f"{path}: rows must have {n} entries")
    return M


def write_dense_matrix(path, M):
    n = M.shape[0]
    with open(path, "w") as fh:
        fh.write(f"{n} {n}\n")
        for row in M:
            fh.write(" ".join(repr(float(x)) for x in row) + "\n")


def cmd_reconstruct(args):
    M = read_dense_matrix(args.input)
    gen = extract_generators(M, args.rel_tol)
    R = toeplitz_like_reconstruct(gen)
    residual = float(np.max(np.abs(R - M))) if M.size else 0.0
    scale = max(1.0, float(np.max(np.abs(M))))
    print(f"n {gen.n}")
    print(f"displacement_rank {gen.r}")
    print(f"reconstruction_residual {residual:.3e}")
    _log_config(args)
    if args.out:
        with open(args.out, "w") as fh:
            json.dump({"n": gen.n, "r": gen.r, "G": gen.G.tolist(), "H": gen.H.tolist(),
                       "rel_tol": args.rel_tol, "residual": residual}, fh)
    return EXIT_OK if residual <= args.check_tol * scale else EXIT_FAIL


# ---------------------------------------------------------------------------
# parser


def build_parser():
    p = argparse.ArgumentParser(prog="ldr", description="Structured (low displacement rank) transforms.")
    p.add_argument("--quiet", action="store_true", help="only log warnings")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    v = sub.add_parser("verify", help="run the displacement property suites",
                       description="Run the displacement property suites and print a report.")
    v.add_argument("--seed", type=int, default=0, help="RNG seed for random fixtures (default 0)")
    v.add_argument("--tolerance", type=_positive_float, default=None,
                   help=f"relative tolerance for equality checks (default {verify.DEFAULT_TOLERANCE})")
    v.add_argument("--inject-fault", action="store_true",
                   help="test hook: perturb the reconstruction's 1/2 factor; the run must fail")
    v.add_argument("--out", default=None, help="also write the report to this file")
    v.set_defaults(func=cmd_verify)

    b = sub.add_parser("bench", help="time dense vs structured transforms",
                       description="Time dense, circulant and Toeplitz-like transforms; write CSV.")
    b.add_argument("--n", type=_int_list, default=[1024], help="comma-separated ascending dimensions, each >= 64")
    b.add_argument("--rank", type=_int_list, default=[1], help="comma-separated displacement ranks")
    b.add_argument("--batch", type=_int_list, default=[1], help="comma-separated batch sizes")
    b.add_argument("--scenarios", type=_str_list(bench.SCENARIOS), default=list(bench.SCENARIOS),
                   help="comma-separated subset of " + ",".join(bench.SCENARIOS))
    b.add_argument("--kinds", type=_str_list(bench.KINDS), default=list(bench.KINDS),
                   help="comma-separated subset of " + ",".join(bench.KINDS))
    b.add_argument("--trials", type=int, default=15, help="timed trials per point (>= 5, default 15)")
    b.add_argument("--warmup", type=int, default=3, help="untimed warmup runs per point (>= 1, default 3)")
    b.add_argument("--seed", type=int, default=0, help="RNG seed for inputs (default 0)")
    b.add_argument("--dense-mode", choices=bench.DENSE_MODES, default="blocked",
                   help="dense baseline: single-threaded blocked product or multi-threaded BLAS")
    b.add_argument("--out", default="bench.csv", help="output CSV path; metadata goes to <out>.meta.json")
    b.set_defaults(func=cmd_bench)

    t = sub.add_parser("train", help="train a one-hidden-layer classifier",
                       description="Train input -> hidden -> rectifier -> dense softmax with minibatch SGD.")
    src = t.add_argument_group("data")
    src.add_argument("--data-dir", default=None, help="directory with the four MNIST IDX files (raw or .gz)")
    src.add_argument("--train-images", default=None, help="IDX3 training images")
    src.add_argument("--train-labels", default=None, help="IDX1 training labels")
    src.add_argument("--test-images", default=None, help="IDX3 evaluation images")
    src.add_argument("--test-labels", default=None, help="IDX1 evaluation labels")
    src.add_argument("--classes", type=int, default=10, help="class count for IDX data (default 10)")
    src.add_argument("--synthetic", default=None, metavar="D,N,C",
                     help="use separable Gaussian blobs: dimension, examples, classes (80/20 split)")
    arch = t.add_argument_group("architecture")
    arch.add_argument("--layer", choices=("toeplitz_like", "circulant", "lowrank", "dense", "none"),
                      default="toeplitz_like", help="hidden layer kind (default toeplitz_like)")
    arch.add_argument("--hidden", type=int, default=None, help="hidden width (default: input dimension)")
    arch.add_argument("--rank", type=int, default=3, help="displacement rank or low rank (default 3)")
    arch.add_argument("--no-hidden-bias", action="store_true", help="omit the hidden layer's bias")
    opt = t.add_argument_group("optimization")
    opt.add_argument("--global-lr", type=_positive_float, default=0.002,
                     help="learning rate of dense layers and biases (default 0.002)")
    opt.add_argument("--structured-lr", type=_positive_float, default=0.0005,
                     help="learning rate of circulant / Toeplitz-like generators (default 0.0005)")
    opt.add_argument("--decay-factor", type=float, default=0.1,
                     help="multiply rates by this every decay interval (default 0.1)")
    opt.add_argument("--decay-interval", type=int, default=None,
                     help="steps between decays (default: one epoch)")
    opt.add_argument("--batch", type=int, default=50, help="minibatch size (default 50)")
    opt.add_argument("--epochs", type=int, default=10, help="epochs to train when --steps is absent (default 10)")
    opt.add_argument("--steps", type=int, default=None, help="total SGD steps (overrides --epochs)")
    opt.add_argument("--seed", type=int, default=0, help="seed for initialization and batch order (default 0)")
    out = t.add_argument_group("output")
    out.add_argument("--checkpoint-out", default=None, help="write the trained model checkpoint here")
    out.add_argument("--history-out", default=None, help="write per-epoch history CSV here")
    out.add_argument("--summary-out", default=None, help="write final error, parameter count and config as JSON")
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("reconstruct", help="dense matrix -> displacement generators",
                       description="Extract Toeplitz-like generators from a dense matrix file and rebuild it.")
    r.add_argument("--input", required=True, help="text file: 'n n' then n rows of n numbers")
    r.add_argument("--rel-tol", type=_positive_float, default=DEFAULT_REL_TOL,
                   help=f"relative singular value cutoff for the rank (default {DEFAULT_REL_TOL})")
    r.add_argument("--check-tol", type=_positive_float, default=1e-8,
                   help="fail (exit 1) if the relative reconstruction residual exceeds this (default 1e-8)")
    r.add_argument("--out", default=None, help="write generators G, H as JSON here")
    r.set_defaults(func=cmd_reconstruct)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        if args.command == "verify":
            _log_config(args)
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"ldr {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"ldr {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (LdrError, ValueError, ArithmeticError) as exc:
        print(f"ldr {args.command}: failed: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
