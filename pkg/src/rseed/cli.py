"""``rseed`` command line: enhance, pretrain, eval, gradcheck.

Exit codes: 0 ok, 1 bad configuration or usage, 2 unreadable input,
3 non-finite loss or gradient, 4 some eval pairs failed, 5 gradient check failed.
"""

import argparse
import contextlib
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from . import decoder as dec
from .config import PRESETS, ConfigError, EnhanceConfig, InitSetting, OptimizationMode, parse_kv
from .imageio import ImageReadError, center_square, list_images, read_image, write_png
from .optim import ImageTooSmallError, NonFiniteError, build_decoders, log_line, run

log = logging.getLogger("rseed")

EXIT_OK, EXIT_CONFIG, EXIT_READ, EXIT_NONFINITE, EXIT_EVAL, EXIT_GRADCHECK = range(6)

DEFAULT_WEIGHTS_R = "default_r.rswt"


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def default_weights_r():
    """Path of the bundled pretrained reflectance decoder, or "" if absent."""
    path = resources.files("rseed") / "data" / DEFAULT_WEIGHTS_R
    return str(path) if path.is_file() else ""


@contextlib.contextmanager
def thread_limit():
    value = os.environ.get("RSEED_THREADS")
    if not value:
        yield
        return
    try:
        n = int(value)
    except ValueError:
        raise CliError(f"RSEED_THREADS must be an integer, got {value!r}", EXIT_CONFIG) from None
    if n < 1:
        raise CliError("RSEED_THREADS must be >= 1", EXIT_CONFIG)
    from threadpoolctl import threadpool_limits
    with threadpool_limits(limits=n):
        yield


# ---------------------------------------------------------------------------
# enhance
# ---------------------------------------------------------------------------

# config field -> (flag, argparse kwargs)
_ENHANCE_FLAGS = {
    "iterations": ("--iterations", dict(type=int)),
    "lr": ("--lr", dict(type=float)),
    "mode": ("--mode", dict(choices=[m.value for m in OptimizationMode])),
    "init": ("--init", dict(choices=[i.value for i in InitSetting])),
    "weights_r": ("--weights-r", dict(metavar="RSWT")),
    "weights_l": ("--weights-l", dict(metavar="RSWT")),
    "lambda_re": ("--lambda-re", dict(type=float)),
    "lambda_e": ("--lambda-e", dict(type=float)),
    "lambda_s": ("--lambda-s", dict(type=float)),
    "lambda_i": ("--lambda-i", dict(type=float)),
    "tau": ("--tau", dict(type=float)),
    "exposure_e": ("--exposure-e", dict(type=float)),
    "gamma_init": ("--gamma-init", dict(type=float)),
    "rng_seed": ("--rng-seed", dict(type=int)),
    "snapshot_every": ("--snapshot-every", dict(type=int, metavar="N")),
    "n_stages": ("--n-stages", dict(type=int)),
    "seed_channels": ("--seed-channels", dict(type=int)),
    "stage_channels": ("--stage-channels", dict(metavar="C1,C2,...")),
    "run_dir": ("--run-dir", dict(metavar="DIR")),
}


def resolve_config(args):
    """Preset, then config file, then explicit flags."""
    try:
        cfg = EnhanceConfig.from_preset(args.preset)
        if args.config:
            try:
                text = Path(args.config).read_text(encoding="utf-8")
            except OSError as exc:
                raise CliError(f"cannot read config file {args.config}: {exc.strerror}", EXIT_READ) from None
            cfg = EnhanceConfig.loads(text, base=cfg)
        overrides = {}
        for key, (flag, _) in _ENHANCE_FLAGS.items():
            value = getattr(args, key, None)
            if value is not None:
                overrides[key] = parse_kv(f"{key} = {value}")[key] if key == "stage_channels" else value
        if getattr(args, "output", None) and len(args.inputs) == 1:
            overrides["output"] = args.output
        return cfg.replace(**overrides)
    except ConfigError as exc:
        raise CliError(f"config error: {exc}", EXIT_CONFIG) from None


def _output_path(src, cfg, args):
    if cfg.output and len(args.inputs) == 1 and not args.out_dir:
        return Path(cfg.output)
    out_dir = Path(args.out_dir) if args.out_dir else src.parent
    return out_dir / f"{src.stem}_enhanced.png"


def _expand_inputs(inputs):
    paths = []
    for item in inputs:
        p = Path(item)
        if p.is_dir():
            try:
                paths.extend(list_images(p))
            except ImageReadError as exc:
                raise CliError(str(exc), EXIT_READ) from None
        else:
            paths.append(p)
    if not paths:
        raise CliError("no input images", EXIT_CONFIG)
    return paths


def enhance_one(src, dst, cfg_text, write_log=True, echo_every=0):
    """Run one image end to end and write its artifacts; returns the run record.

    Takes the config as text so it can be shipped to worker processes.
    """
    cfg = EnhanceConfig.loads(cfg_text)
    image = read_image(src)
    weights_r, weights_l = build_decoders(cfg, default_weights_r=default_weights_r())
    dst = Path(dst)
    dst.parent.mkdir(parents=True, exist_ok=True)
    run_dir = Path(cfg.run_dir) if cfg.run_dir else dst.parent
    lines = []

    def on_iteration(t, rec):
        line = log_line(t, rec)
        lines.append(line)
        if echo_every and t % echo_every == 0:
            print(line, file=sys.stderr, flush=True)

    def snapshot(t, r, l, out, rec):
        snap = run_dir / f"{dst.stem}_snapshots"
        write_png(snap / f"iter{t:06d}_out.png", out)
        write_png(snap / f"iter{t:06d}_R.png", r)
        write_png(snap / f"iter{t:06d}_L.png", l)

    start = time.perf_counter()
    try:
        result = run(image, weights_r, weights_l, cfg, on_iteration=on_iteration,
                     snapshot=snapshot if cfg.snapshot_every else None)
    finally:
        if write_log:
            dst.with_suffix(".log").write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    write_png(dst, result.image)
    record = {
        "input": str(src),
        "output": str(dst),
        "config": cfg.dumps(),
        "gamma_final": result.gamma,
        "iterations": len(result.trace),
        "mean_iter_time_s": result.mean_iter_time,
        "wall_time_s": time.perf_counter() - start,
        "weight_sha256_before": result.weight_hashes_before,
        "weight_sha256_after": result.weight_hashes_after,
        "loss_trace": result.trace,
    }
    dst.with_suffix(".json").write_text(json.dumps(record, indent=1), encoding="utf-8")
    np.savez_compressed(dst.with_suffix(".npz"), reflectance=result.reflectance,
                        illumination=result.illumination, gamma=np.float32(result.gamma),
                        image=result.image)
    return record


def _enhance_guarded(src, dst, cfg_text, echo_every=0):
    """(src, exit status, message) for one image; errors are reported, not raised."""
    try:
        enhance_one(src, dst, cfg_text, echo_every=echo_every)
    except NonFiniteError as exc:
        return (src, EXIT_NONFINITE, f"{exc} (iteration {exc.iteration})")
    except (ImageReadError, dec.WeightFormatError, FileNotFoundError) as exc:
        return (src, EXIT_READ, str(exc))
    except (ConfigError, dec.ArchMismatchError, ImageTooSmallError) as exc:
        return (src, EXIT_CONFIG, str(exc))
    return (src, EXIT_OK, "")


def _enhance_worker(job):
    with thread_limit():
        return _enhance_guarded(*job)


def cmd_enhance(args):
    cfg = resolve_config(args)
    if args.print_config:
        sys.stdout.write(cfg.dumps())
        return EXIT_OK
    if not args.inputs:
        raise CliError("enhance needs at least one input image", EXIT_CONFIG)
    sources = _expand_inputs(args.inputs)
    if args.output and len(sources) > 1:
        raise CliError("--output names a single file; use --out-dir for several inputs", EXIT_CONFIG)
    if args.jobs < 1:
        raise CliError("--jobs must be >= 1", EXIT_CONFIG)
    cfg_text = cfg.dumps()
    jobs = [(str(s), str(_output_path(s, cfg, args)), cfg_text) for s in sources]
    if args.jobs == 1 or len(jobs) == 1:
        results = [_enhance_guarded(*job, echo_every=args.echo_every) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_enhance_worker, jobs))
    codes = set()
    for src, status, message in results:
        if status == EXIT_OK:
            log.info("enhanced %s", src)
        else:
            print(f"error: {src}: {message}", file=sys.stderr)
            codes.add(status)
    # a numerical blow-up is the most specific failure, then unreadable input
    for code in (EXIT_NONFINITE, EXIT_READ, EXIT_CONFIG):
        if code in codes:
            return code
    return EXIT_OK


# ---------------------------------------------------------------------------
# pretrain
# ---------------------------------------------------------------------------

def cmd_pretrain(args):
    from .pretrain import PretrainConfig, pretrain

    corpus_dir = Path(args.corpus)
    if not corpus_dir.is_dir():
        raise CliError(f"corpus directory not found: {corpus_dir}", EXIT_READ)
    try:
        arch = dec.Arch(args.n_stages, args.seed_channels,
                        tuple(int(c) for c in args.stage_channels.split(",")), args.out_channels)
        config = PretrainConfig(lr=args.lr, epochs=args.epochs, batch=args.batch,
                                resolution=args.resolution, rng_seed=args.rng_seed)
        if config.epochs < 0 or config.batch < 1 or config.lr <= 0:
            raise ValueError("epochs must be >= 0, batch >= 1 and lr > 0")
    except ValueError as exc:
        raise CliError(f"config error: {exc}", EXIT_CONFIG) from None
    try:
        paths = list_images(corpus_dir)
        corpus = [center_square(read_image(p), args.resolution) for p in paths]
        if arch.out_channels == 1:
            corpus = [img.max(axis=0, keepdims=True) for img in corpus]
    except ImageReadError as exc:
        raise CliError(str(exc), EXIT_READ) from None
    if not corpus:
        raise CliError(f"no images in {corpus_dir}", EXIT_CONFIG)
    if len(corpus) < 16:
        log.warning("corpus has %d images; at least 16 are recommended", len(corpus))

    log_path = Path(args.log) if args.log else Path(args.output).with_suffix(".log")
    log_path.parent.mkdir(parents=True, exist_ok=True)
    with open(log_path, "w", encoding="utf-8") as fh:
        def on_epoch(epoch, loss):
            fh.write(f"epoch={epoch} loss={loss:.6f}\n")
            fh.flush()
            log.info("epoch %d loss %.6f", epoch, loss)
        try:
            result = pretrain(corpus, arch, config, on_epoch=on_epoch)
        except NonFiniteError as exc:
            raise CliError(str(exc), EXIT_NONFINITE) from None
        except ValueError as exc:
            raise CliError(f"config error: {exc}", EXIT_CONFIG) from None
    dec.save_weights(result.weights, args.output)
    print(f"wrote {args.output} ({len(corpus)} images, {config.epochs} epochs, "
          f"mean fit PSNR {np.mean(result.final_psnr):.2f} dB)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def read_manifest(path):
    manifest = Path(path)
    try:
        text = manifest.read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot read manifest {path}: {exc.strerror}", EXIT_READ) from None
    pairs = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise CliError(f"{path}:{lineno}: expected 'enhanced<TAB>reference'", EXIT_CONFIG)
        a, b = (manifest.parent / p.strip() for p in parts)
        pairs.append((a, b))
    return pairs


def cmd_eval(args):
    from .metrics import psnr, ssim

    pairs = read_manifest(args.manifest)
    if not pairs:
        raise CliError(f"manifest {args.manifest} lists no image pairs", EXIT_CONFIG)
    rows, failed = [], 0
    for enhanced, reference in pairs:
        try:
            x, y = read_image(enhanced), read_image(reference)
            rows.append((str(enhanced), psnr(x, y), ssim(x, y)))
        except (ImageReadError, ValueError) as exc:
            failed += 1
            print(f"error: {enhanced}: {exc}", file=sys.stderr)
    mean_p = float(np.mean([r[1] for r in rows])) if rows else float("nan")
    mean_s = float(np.mean([r[2] for r in rows])) if rows else float("nan")
    if args.format == "csv":
        import csv
        writer = csv.writer(sys.stdout, lineterminator="\n")
        writer.writerow(["path", "psnr_db", "ssim"])
        for name, p, s in rows:
            writer.writerow([name, f"{p:.4f}", f"{s:.6f}"])
        writer.writerow(["mean", f"{mean_p:.4f}", f"{mean_s:.6f}"])
    else:
        width = max([len(r[0]) for r in rows] + [4])
        for name, p, s in rows:
            print(f"{name:<{width}}  {p:8.4f} dB  SSIM {s:.6f}")
        print(f"{'mean':<{width}}  {mean_p:8.4f} dB  SSIM {mean_s:.6f}  ({len(rows)} pairs, {failed} failed)")
    return EXIT_EVAL if failed else EXIT_OK


# ---------------------------------------------------------------------------
# gradcheck
# ---------------------------------------------------------------------------

def cmd_gradcheck(args):
    from . import gradcheck
    from .tensor import OPS, sign_flip

    if args.inject_sign_flip and args.inject_sign_flip not in OPS:
        raise CliError(f"unknown op {args.inject_sign_flip!r}", EXIT_CONFIG)
    ctx = sign_flip(args.inject_sign_flip) if args.inject_sign_flip else contextlib.nullcontext()
    try:
        with ctx:
            report = gradcheck.run_checks(seed=args.seed, instances=args.instances, ops=args.ops or None)
    except KeyError as exc:
        raise CliError(str(exc.args[0]), EXIT_CONFIG) from None
    for line in report.lines():
        print(line)
    if report.passed:
        print(f"gradcheck passed: {len(report.by_op())} ops x {args.instances} instances")
        return EXIT_OK
    for r in report.results:
        if not r.passed:
            print(f"FAILED op={r.op} instance={r.instance} tensor={r.worst_input} index={r.worst_index} "
                  f"max_rel_err={r.max_rel_err:.3e}", file=sys.stderr)
    return EXIT_GRADCHECK


# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="rseed", description="Zero-shot low-light enhancement by seed optimisation.")
    parser.add_argument("--version", action="version", version=f"rseed {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("enhance", help="enhance one or more images")
    p.add_argument("inputs", nargs="*", help="image files or directories")
    p.add_argument("-o", "--output", help="output PNG (single input)")
    p.add_argument("--out-dir", help="directory for <name>_enhanced.png outputs")
    p.add_argument("--preset", default="paired", choices=sorted(PRESETS))
    p.add_argument("--config", help="key = value config file; flags override it")
    p.add_argument("--print-config", action="store_true", help="print the resolved config and exit")
    p.add_argument("--jobs", type=int, default=1, help="images optimised in parallel")
    p.add_argument("--echo-every", type=int, default=0, metavar="N", help="print every Nth loss line to stderr")
    for key, (flag, kwargs) in _ENHANCE_FLAGS.items():
        p.add_argument(flag, dest=key, default=None, **kwargs)
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("pretrain", help="fit a decoder to a corpus of natural images")
    p.add_argument("corpus", help="directory of PNG/JPEG images")
    p.add_argument("-o", "--output", required=True, help="RSWT weight file to write")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=3e-4)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--resolution", type=int, default=128)
    p.add_argument("--rng-seed", type=int, default=0)
    p.add_argument("--n-stages", type=int, default=EnhanceConfig.n_stages)
    p.add_argument("--seed-channels", type=int, default=EnhanceConfig.seed_channels)
    p.add_argument("--stage-channels", default=",".join(str(c) for c in EnhanceConfig().stage_channels))
    p.add_argument("--out-channels", type=int, default=3, choices=(1, 3))
    p.add_argument("--log", help="per-epoch loss log (default: <output>.log)")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("eval", help="PSNR/SSIM over a tab-separated manifest of (enhanced, reference) pairs")
    p.add_argument("manifest")
    p.add_argument("--format", choices=("table", "csv"), default="table")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of every differentiable op")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--ops", nargs="*", help="restrict to these cases")
    p.add_argument("--inject-sign-flip", metavar="OP", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on bad usage, which would read as an unreadable input
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        with thread_limit():
            return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
