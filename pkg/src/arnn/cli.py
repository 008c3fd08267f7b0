"""``arnn`` command line: synth, train, eval, gradcheck, bench.

Exit codes: 0 success, 1 validation or data error, 2 internal error.
"""

import argparse
import csv
import json
import logging
import sys

from . import bench, gradcheck
from ._atomic import atomic_open
from .data import SynthConfig, load_manifest, minmax_normalize, synth_generate, write_segments
from .errors import ArnnError, DataError
from .model import ArnnModel, ModelConfig, load, save
from .training import (
    TrainConfig, evaluate, predict_probs, split_train_test, train_on_split, write_log,
)

EXIT_OK, EXIT_INVALID, EXIT_INTERNAL = 0, 1, 2


class UsageError(ArnnError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _show_config(name, **cfg):
    print(f"[{name}] config: {json.dumps(cfg, sort_keys=True)}", flush=True)


def _load(directory, normalize):
    _, segments = load_manifest(directory)
    if normalize:
        for seg in segments:
            seg.data = minmax_normalize(seg.data)
    return segments


# ---------------------------------------------------------------------------


def cmd_synth(args):
    if args.count < 1:
        raise DataError("count must be ≥ 1")
    cfg = SynthConfig(c=args.channels, n=args.length, count=args.count, seed=args.seed,
                      amplitude_ratio=args.amplitude_ratio)
    _show_config("synth", out=args.out, **{k: v for k, v in cfg.__dict__.items()})
    segments = synth_generate(cfg)
    try:
        write_segments(args.out, segments)
    except OSError as e:
        raise DataError(f"cannot write to {args.out}: {e.strerror}") from None
    print(f"wrote {len(segments)} segments + manifest to {args.out}")


def cmd_train(args):
    tcfg = TrainConfig(batch_size=args.batch, lr0=args.lr, epochs=args.epochs,
                       dropout_p=args.dropout, seed=args.seed, split=args.split,
                       verbose=args.verbose)
    _show_config("train", data=args.data, windows=args.windows, states=args.states,
                 normalize=args.normalize, out=args.out, log=args.log, **tcfg.__dict__)
    segments = _load(args.data, args.normalize)
    c, n = segments[0].data.shape
    config = ModelConfig(c, n, args.windows, args.states)
    model = ArnnModel.init(config, args.seed)
    train_set, test_set = split_train_test(segments, tcfg.split, tcfg.seed)
    model, history = train_on_split(model, train_set, test_set, tcfg)
    save(model, args.out)
    write_log(history, args.log)
    last = history[-1] if history else None
    if last is not None:
        print(f"final train_loss={last.train_loss:.6f} "
              f"test_accuracy={last.test_accuracy:.6f} test_f1={last.test_f1:.6f}")


def cmd_eval(args):
    _show_config("eval", model=args.model, data=args.data, predictions=args.predictions,
                 seed=args.seed, split=args.split, all=args.all, normalize=args.normalize)
    model = load(args.model)
    segments = _load(args.data, args.normalize)
    c, n = segments[0].data.shape
    cfg = model.config
    if (c, n) != (cfg.c, cfg.n):
        raise DataError(f"checkpoint expects c={cfg.c}, n={cfg.n} but data has c={c}, n={n}")
    if args.all:
        subset = segments
    else:
        _, subset = split_train_test(segments, args.split, args.seed)
    metrics = evaluate(model, subset)
    for k, v in metrics.as_dict().items():
        print(f"{k}={v!r}" if isinstance(v, float) else f"{k}={v}")
    if args.predictions:
        probs = predict_probs(model, subset)
        with atomic_open(args.predictions) as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["path", "label", "prob", "pred"])
            for seg, p in zip(subset, probs):
                w.writerow([seg.name, seg.label, repr(float(p)), int(p >= 0.5)])


def cmd_gradcheck(args):
    _show_config("gradcheck", config=args.config, eps=args.eps, tol=args.tol, seed=args.seed)
    config = gradcheck.CONFIGS[args.config]
    model, x, y = gradcheck.seeded_problem(config, seed=args.seed)
    worst = gradcheck.check_model(model, x, y, eps=args.eps)
    bad = []
    for name, err in worst.items():
        flag = "ok" if err <= args.tol else "FAIL"
        print(f"{name:8s} {err:.3e} {flag}")
        if err > args.tol:
            bad.append(name)
    if bad:
        print(f"gradient check failed for: {', '.join(bad)}", file=sys.stderr)
        return EXIT_INVALID
    print(f"all {len(worst)} tensors within tol={args.tol}")
    return EXIT_OK


def cmd_bench(args):
    grid = bench.DEFAULT_GRID if args.default_grid else bench.read_grid(args.grid)
    points = bench.validate_grid(grid)
    _show_config("bench", grid=points, repeats=args.repeats, batch=args.batch,
                 seed=args.seed, out=args.out)
    records = bench.sweep(points, repeats=args.repeats, batch=args.batch, seed=args.seed)
    bench.write_csv(records, args.out)
    print(f"{'mechanism':15s} {'c':>4s} {'n':>6s} {'l':>4s} {'s':>4s} {'GFLOP':>9s} "
          f"{'median_ms':>10s} {'std_ms':>8s}")
    for r in records:
        print(f"{r.mechanism:15s} {r.c:4d} {r.n:6d} {r.l:4d} {r.s:4d} {r.flops / 1e9:9.4f} "
              f"{r.median_ms:10.3f} {r.std_ms:8.3f}")


# ---------------------------------------------------------------------------


def build_parser():
    p = _Parser(prog="arnn", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic burst dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--channels", type=int, default=16)
    s.add_argument("--length", type=int, default=1024)
    s.add_argument("--count", type=int, default=100, help="segments per class")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--amplitude-ratio", type=float, default=SynthConfig.amplitude_ratio)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train a classifier on a manifest directory")
    t.add_argument("--data", required=True)
    t.add_argument("--windows", type=int, default=16, help="number of local windows l")
    t.add_argument("--states", type=int, default=32, help="number of state vectors s")
    t.add_argument("--epochs", type=int, default=30)
    t.add_argument("--batch", type=int, default=50)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--dropout", type=float, default=0.3)
    t.add_argument("--split", type=float, default=0.75)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--normalize", action="store_true", help="per-channel min-max scaling")
    t.add_argument("--out", default="model.arnn")
    t.add_argument("--log", default="log.csv")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on the held-out split")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--predictions")
    e.add_argument("--seed", type=int, default=0, help="split seed used at training time")
    e.add_argument("--split", type=float, default=0.75)
    e.add_argument("--all", action="store_true", help="evaluate every segment, not just the test split")
    e.add_argument("--normalize", action="store_true")
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    g.add_argument("--config", choices=sorted(gradcheck.CONFIGS), default="small")
    g.add_argument("--eps", type=float, default=1e-5)
    g.add_argument("--tol", type=float, default=1e-4)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gradcheck)

    b = sub.add_parser("bench", help="time ARNN vs full attention over a grid")
    src = b.add_mutually_exclusive_group(required=True)
    src.add_argument("--grid", help="CSV with header c,n,l,s")
    src.add_argument("--default-grid", action="store_true")
    b.add_argument("--repeats", type=int, default=5)
    b.add_argument("--batch", type=int, default=50)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", default="bench.csv")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        rc = args.func(args)
        return EXIT_OK if rc is None else rc
    except UsageError as e:
        print(f"arnn: error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except (ArnnError, OSError) as e:
        print(f"arnn: error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as e:  # noqa: BLE001
        print(f"arnn: internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
