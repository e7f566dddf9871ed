"""Command-line entry point: ``audiossl <command> ...``.

Exit codes: 0 success, 1 invalid input or configuration, 2 runtime failure,
3 a self-check found a violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import checks
from .augment import AugmentPipeline
from .config import Config, resolve
from .data import Manifest
from .errors import ConfigError, ContractError, FormatError

log = logging.getLogger("audiossl")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME, EXIT_CHECK = 0, 1, 2, 3


class CheckFailed(Exception):
    pass


def _seed(args) -> int | None:
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get("SSL_SEED")
    if env is None or env == "":
        return None
    try:
        return int(env)
    except ValueError:
        raise ConfigError(f"SSL_SEED must be an integer, got {env!r}") from None


def _overrides(pairs: list[str]) -> dict[str, str]:
    out = {}
    for item in pairs or []:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def _write_matrix(path: Path, m: np.ndarray, fmt: str) -> None:
    if fmt == "csv":
        np.savetxt(path, m, fmt="%.8e", delimiter=",")
    else:
        path.write_bytes(np.ascontiguousarray(m, dtype="<f4").tobytes())


def cmd_features(args) -> int:
    from .frontend import load_clip, logmel

    manifest = Manifest.read(args.manifest)
    if len(manifest) == 0:
        raise ContractError(f"{args.manifest}: manifest has no rows")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ext = "csv" if args.format == "csv" else "f32"
    written = 0
    for i, row in enumerate(manifest.rows):
        try:
            mel = logmel(load_clip(manifest.resolve(row)))
        except (OSError, FormatError, ContractError) as exc:
            log.warning("skipping %s: %s", row.path, exc)
            continue
        _write_matrix(out / f"{i:05d}_{Path(row.path).stem}.{ext}", mel, args.format)
        written += 1
    print(f"wrote {written} of {len(manifest)} feature files to {out}")
    if written == 0:
        raise RuntimeError("no clip could be converted")
    return EXIT_OK


def _pretrain_config(args) -> Config:
    flags = {
        "train.seed": _seed(args),
        "train.epochs": args.epochs,
        "train.batch_size": args.batch_size,
        "train.learning_rate": args.lr,
        "train.tau": args.tau,
        "loss.lambda_diversity": args.lambda_div,
        "loss.lambda_decorrelation": args.lambda_decor,
    }
    flags.update(_overrides(args.set))
    return resolve(args.config, flags)


def cmd_pretrain(args) -> int:
    from .trainer import train

    config = _pretrain_config(args)
    result = train(Manifest.read(args.manifest), config, args.out, resume=args.resume)
    if not result.history:
        print(f"nothing to do: checkpoint already at epoch {config.train.epochs}")
        return EXIT_OK
    last = result.history[-1]
    print(
        f"final epoch {last['epoch']} step {last['step']} "
        f"loss {last['loss_total']:.6f} align {last['loss_align']:.6f} "
        f"div {last['loss_div']:.6f} decor {last['loss_decor']:.6f} eff_rank {last['eff_rank']:.3f}"
    )
    print(f"checkpoint {result.checkpoint}")
    print(f"metrics {result.metrics}")
    return EXIT_OK


def probe_report(args) -> dict:
    from .probe import cross_validate, extract_embeddings, raw_logmel_table

    config = resolve(args.config, _overrides(args.set))
    pc = config.probe
    source = args.source or pc.source
    level = args.level or pc.level
    seed = _seed(args)
    seed = pc.seed if seed is None else seed
    manifest = Manifest.read(args.manifest)
    table = extract_embeddings(args.checkpoint, manifest, source, level, seed)
    if args.embeddings:
        table.write_csv(args.embeddings)
    report = {"source": source, "level": level, "seed": seed, "dim": int(table.embeddings.shape[1])}
    report.update(cross_validate(table, pc))
    if args.baseline:
        report["baseline"] = cross_validate(raw_logmel_table(manifest, seed), pc)
    return report


def cmd_probe(args) -> int:
    report = probe_report(args)
    for fold, r in report["folds"].items():
        print(f"fold {fold}: accuracy {r['accuracy']:.4f} (n={r['n']})")
    print(f"{report['source']} mean accuracy {report['mean']:.4f} +/- {report['std']:.4f}")
    if "baseline" in report:
        print(f"raw log-mel baseline mean accuracy {report['baseline']['mean']:.4f}")
    if args.report:
        Path(args.report).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_synth(args) -> int:
    from .synth import make_corpus

    seed = _seed(args)
    manifest = make_corpus(args.out, args.classes, args.n_per_class, 0 if seed is None else seed)
    print(f"wrote {len(manifest)} clips and manifest.csv to {args.out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    seed = _seed(args) or 0
    results = checks.gradcheck_suite(seed)
    width = max(len(r.name) for r in results)
    print(f"{'check':<{width}}  {'entries':>7}  {'refined':>7}  {'max_rel_err':>11}  {'tol':>7}  result")
    for r in results:
        verdict = "pass" if r.passed else "FAIL"
        print(f"{r.name:<{width}}  {r.checked:7d}  {r.refined:7d}  {r.max_rel_error:11.3e}  {r.tolerance:7.0e}  {verdict}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise CheckFailed(f"gradient check failed: {', '.join(failed)}")
    print(f"all {len(results)} gradient checks passed")
    return EXIT_OK


def cmd_losscheck(args) -> int:
    seed = _seed(args) or 0
    rep = checks.losscheck(args.n, args.d, args.trials, seed)
    doc = {
        "trials": rep.trials,
        "max_n": args.n,
        "max_d": args.d,
        "max_abs_fast_minus_brute": rep.max_fast_vs_brute,
        "max_abs_alignment_minus_cosine": rep.max_align_vs_cosine,
        "max_abs_decorrelation_minus_reference": rep.max_decor_vs_reference,
        "tolerance": rep.tolerance,
        "seconds": rep.seconds,
        "passed": rep.passed,
    }
    print(json.dumps(doc, indent=2))
    if not rep.passed:
        raise CheckFailed("vectorized loss disagrees with its loop oracle")
    return EXIT_OK


def cmd_augment_preview(args) -> int:
    from .frontend import load_clip, logmel

    config = resolve(args.config, _overrides(args.set))
    seed = _seed(args) or 0
    x = logmel(load_clip(args.input))
    pipeline = AugmentPipeline(config.augment)
    (v1, v2), params = pipeline.make_views(x, np.random.default_rng(seed), return_params=True)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, m in (("input", x), ("view1", v1), ("view2", v2)):
        _write_matrix(out / f"{name}.csv", m, "csv")
    print(f"wrote input.csv, view1.csv, view2.csv ({x.shape[0]}x{x.shape[1]}) to {out}")
    for k, p in enumerate(params, start=1):
        print(f"view{k}: {p}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="audiossl", description="Self-supervised audio representation learning on log-mel spectrograms.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def seed_arg(sp):
        sp.add_argument("--seed", type=int, help="random seed (default: $SSL_SEED, then config)")

    def config_args(sp):
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config value (repeatable)")

    sp = sub.add_parser("features", help="convert a manifest's clips to log-mel matrices")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--format", choices=["csv", "f32"], default="csv")
    sp.set_defaults(func=cmd_features)

    sp = sub.add_parser("pretrain", help="self-supervised pretraining")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True, help="directory for checkpoint.sslf and metrics.csv")
    config_args(sp)
    seed_arg(sp)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--batch-size", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--tau", type=float)
    sp.add_argument("--lambda-div", type=float)
    sp.add_argument("--lambda-decor", type=float)
    sp.add_argument("--resume", help="continue from this checkpoint")
    sp.set_defaults(func=cmd_pretrain)

    sp = sub.add_parser("probe", help="linear evaluation of frozen embeddings")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--source", choices=["online", "target"])
    sp.add_argument("--level", choices=["embedding", "projection"])
    sp.add_argument("--report", help="write the JSON report here")
    sp.add_argument("--embeddings", help="also write the embedding table CSV here")
    sp.add_argument("--baseline", action="store_true", help="also probe raw flattened log-mels")
    config_args(sp)
    seed_arg(sp)
    sp.set_defaults(func=cmd_probe)

    sp = sub.add_parser("synth", help="generate a synthetic labelled corpus")
    sp.add_argument("--out", required=True)
    sp.add_argument("--classes", type=int, default=4)
    sp.add_argument("--n-per-class", type=int, default=25)
    seed_arg(sp)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    seed_arg(sp)
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("losscheck", help="compare vectorized losses with loop oracles")
    sp.add_argument("--n", type=int, default=64, help="largest batch size")
    sp.add_argument("--d", type=int, default=32, help="largest dimension")
    sp.add_argument("--trials", type=int, default=100)
    seed_arg(sp)
    sp.set_defaults(func=cmd_losscheck)

    sp = sub.add_parser("augment-preview", help="dump a clip's log-mel and two augmented views as CSV")
    sp.add_argument("--input", required=True, help="WAV file")
    sp.add_argument("--out", required=True)
    config_args(sp)
    seed_arg(sp)
    sp.set_defaults(func=cmd_augment_preview)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CheckFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except (ConfigError, ContractError, FormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
