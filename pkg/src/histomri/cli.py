"""Command-line entry point: ``histomri run|stage|phantom|evaluate|inspect-manifest``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import ConfigInvalid, HistoMRIError, MissingUpstream, StageFailure

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 2, 3
logger = logging.getLogger("histomri")


def _overrides(args) -> dict:
    out = {}
    if getattr(args, "threads", None) is not None:
        out["threads"] = args.threads
    if getattr(args, "output", None) is not None:
        out["output_dir"] = str(Path(args.output).resolve())
    return out


def _load(args):
    from .pipeline import load_config

    return load_config(args.config, _overrides(args))


def cmd_run(args) -> int:
    from .pipeline import run_pipeline

    cfg = _load(args)
    manifest = run_pipeline(cfg)
    print(manifest.path)
    return EXIT_OK


def cmd_stage(args) -> int:
    from .pipeline import run_stage

    for p in run_stage(args.name, _load(args)):
        print(p)
    return EXIT_OK


def cmd_phantom(args) -> int:
    from .phantom import PhantomSpec, generate_phantom, write_phantom

    spec = PhantomSpec.load(args.spec) if args.spec else PhantomSpec()
    if args.seed is not None:
        spec.seed = args.seed
    print(write_phantom(generate_phantom(spec), args.out))
    return EXIT_OK


def _parse_structures(items) -> dict:
    out = {}
    for item in items or []:
        name, _, label = item.partition("=")
        if not label:
            raise ConfigInvalid(f"structure {item!r} must look like name=label")
        out[name] = int(label)
    return out


def cmd_evaluate(args) -> int:
    if args.config:
        from .pipeline import run_stage

        for p in run_stage("evaluate", _load(args)):
            print(p)
        return EXIT_OK
    import numpy as np

    from .core.io import load_volume
    from .evaluation import evaluate_structures
    from .registration import DeformationField

    if not (args.reference and args.registered):
        raise ConfigInvalid("evaluate needs --config, or --reference and --registered label volumes")
    ref, reg = load_volume(args.reference), load_volume(args.registered)
    structures = _parse_structures(args.structure) or {
        f"label_{int(v)}": int(v) for v in np.unique(ref.data) if v > 0}
    field = DeformationField.load(args.field) if args.field else None
    report = evaluate_structures(ref, reg, structures, ref.spacing, args.k, args.p, field)
    print(report.to_table())
    if args.out:
        report.save(args.out)
    return EXIT_OK


def cmd_inspect(args) -> int:
    from .pipeline import STAGE_NAMES, PipelineManifest

    path = Path(args.path)
    m = PipelineManifest.load(path.parent if path.is_file() else path)
    if not m.stages:
        raise ConfigInvalid(f"no manifest at {path}")
    if args.json:
        print(json.dumps(m.to_dict(), indent=2, sort_keys=True))
        return EXIT_OK
    print(f"{'stage':<24}{'status':<10}{'seconds':>10}{'outputs':>9}")
    order = sorted(m.stages, key=lambda n: STAGE_NAMES.index(n) if n in STAGE_NAMES else len(STAGE_NAMES))
    for name in order:
        rec = m.stages[name]
        print(f"{name:<24}{rec.status:<10}{rec.wall_time:>10.2f}{len(rec.outputs):>9}")
        if rec.error:
            print(f"    {rec.error}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    from .pipeline import STAGE_NAMES

    p = argparse.ArgumentParser(prog="histomri", description=__doc__)
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp, required=True):
        sp.add_argument("--config", required=required, help="pipeline config (.toml or .json)")
        sp.add_argument("--threads", type=int, help="override the config thread count")
        sp.add_argument("--output", help="override the output directory")

    run = sub.add_parser("run", help="run the whole pipeline")
    with_config(run)
    run.set_defaults(func=cmd_run)

    st = sub.add_parser("stage", help="run a single stage")
    st.add_argument("name", choices=STAGE_NAMES)
    with_config(st)
    st.set_defaults(func=cmd_stage)

    ph = sub.add_parser("phantom", help="synthetic data")
    phs = ph.add_subparsers(dest="action", required=True)
    gen = phs.add_parser("generate", help="write a phantom dataset")
    gen.add_argument("--spec", help="phantom spec JSON (defaults when omitted)")
    gen.add_argument("--out", required=True, help="output directory")
    gen.add_argument("--seed", type=int, help="override the phantom seed")
    gen.set_defaults(func=cmd_phantom)

    ev = sub.add_parser("evaluate", help="DSC / nWSD / Jacobian report")
    with_config(ev, required=False)
    ev.add_argument("--reference", help="reference label volume (.nvol)")
    ev.add_argument("--registered", help="registered label volume (.nvol)")
    ev.add_argument("--structure", action="append", help="name=label (repeatable)")
    ev.add_argument("--field", help="deformation field (.nvol) for Jacobian statistics")
    ev.add_argument("--k", type=int, default=50, help="number of eigenvalues")
    ev.add_argument("--p", type=float, default=2.0, help="nWSD exponent")
    ev.add_argument("--out", help="write the JSON report here")
    ev.set_defaults(func=cmd_evaluate)

    ins = sub.add_parser("inspect-manifest", help="summarise a run manifest")
    ins.add_argument("path", help="output directory or manifest.json")
    ins.add_argument("--json", action="store_true", help="print the raw manifest")
    ins.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, stream=sys.stderr, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigInvalid as exc:
        logger.error("config error: %s", exc)
        return EXIT_CONFIG
    except (StageFailure, MissingUpstream) as exc:
        logger.error("%s", exc)
        return EXIT_STAGE
    except HistoMRIError as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return EXIT_STAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
