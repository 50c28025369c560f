"""Command line: ``vesselgan {train,infer,eval,gradcheck}``.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numeric abort.
"""
import argparse
import logging
import sys

from .config import RunConfig
from .errors import ConfigError, DataError, NumericAbort, ShapeError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage, which would collide with the data-error code
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def build_parser():
    parser = _Parser(prog="vesselgan", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress at INFO level")
    verbs = parser.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    train = verbs.add_parser("train", help="adversarial training from a dataset root")
    train.add_argument("--config", required=True, help="flat 'section.key = value' file")
    train.add_argument("--data-root", required=True)
    train.add_argument("--out", required=True)
    train.add_argument("--seed", type=int, help="overrides train.seed")
    train.add_argument("--resume", help="checkpoint to continue from")

    infer = verbs.add_parser("infer", help="probability map for one RGB .ppm image")
    infer.add_argument("--ckpt", required=True)
    infer.add_argument("--image", required=True)
    infer.add_argument("--out", required=True)
    infer.add_argument("--tile", type=int, help="tile size (default: the training patch size; 0 = whole image)")
    infer.add_argument("--stride", type=int, help="tile stride (default: the training patch stride)")
    noise = infer.add_mutually_exclusive_group()
    noise.add_argument("--z-seed", type=int, help="seed of the noise stream (default: train.seed)")
    noise.add_argument("--z-zero", action="store_true", help="use z = 0")

    ev = verbs.add_parser("eval", help="score probability maps against ground truth")
    ev.add_argument("--pred", required=True)
    ev.add_argument("--gt", required=True)
    ev.add_argument("--mask")
    ev.add_argument("--report", required=True, help="JSON-lines output file")
    ev.add_argument("--fixed-threshold", type=float, help="use score > T instead of Otsu")
    ev.add_argument("--binary-out", help="also write binary maps under this directory")
    ev.add_argument("--config", help="take eval.threshold, eval.fixed_threshold and eval.use_mask from a run config")

    gc = verbs.add_parser("gradcheck", help="finite-difference check of every layer and loss")
    gc.add_argument("--module", choices=("all", "conv", "loss", "model"), default="all")
    return parser


def _train(args):
    from .pipeline import train_loop

    cfg = RunConfig.read(args.config)
    if args.seed is not None:
        cfg.train.seed = args.seed
    trainer, reports = train_loop(cfg, args.data_root, args.out, resume=args.resume)
    if reports:
        last = reports[-1]
        print(f"trained {trainer.step} steps; last g_l1_loss {last.g_l1_loss:.4f}, d_loss_total {last.d_loss_total:.4f}")
    else:
        print(f"nothing to do; checkpoint already at step {trainer.step}")
    return EXIT_OK


def _infer(args):
    from .pipeline import infer

    result = infer(args.ckpt, args.image, args.out, tile=args.tile, stride=args.stride, z_seed=args.z_seed, z_zero=args.z_zero)
    print(result.path)
    return EXIT_OK


def _eval(args):
    from .pipeline import evaluate_command

    threshold, mask = args.fixed_threshold, args.mask
    if args.config:
        ev = RunConfig.read(args.config).eval
        if threshold is None and ev.threshold == "fixed":
            threshold = ev.fixed_threshold
        if not ev.use_mask:
            mask = None
    if threshold is not None and not 0 <= threshold <= 1:
        raise ConfigError(f"fixed threshold must lie in [0, 1], got {threshold}")
    reports, pooled = evaluate_command(args.pred, args.gt, args.report, mask, threshold, args.binary_out)
    for r in reports + [pooled]:
        auc = "n/a" if r.auc is None else f"{r.auc:.4f}"
        print(f"{r.id}: Acc {r.acc:.4f} Se {r.se:.4f} Sp {r.sp:.4f} AUC {auc}")
    return EXIT_OK


def _gradcheck(args):
    from .gradcheck import run_suite

    failed = 0
    for label, report in run_suite(args.module):
        status = "ok  " if report.passed else "FAIL"
        failed += not report.passed
        print(f"{status} {label}: {report.summary()}")
    if failed:
        raise NumericAbort(f"{failed} gradient check(s) exceeded tolerance")
    return EXIT_OK


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
        handler = {"train": _train, "infer": _infer, "eval": _eval, "gradcheck": _gradcheck}[args.verb]
        return handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ShapeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericAbort as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        if getattr(exc, "diagnostic_path", None):
            print(f"diagnostic written to {exc.diagnostic_path}; last good checkpoint: {exc.last_good}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
