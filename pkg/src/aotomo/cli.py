"""Command-line driver: one subcommand per pipeline stage plus ``pipeline`` and ``validate``.

Exit codes: 0 success, 1 numerical failure, 2 usage or validation error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
import time
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import io
from .acoustics import Sinogram, sweep_measurements
from .config import ConfigError, PipelineConfig, dump_config, load_config
from .errors import AdmissibilityError, ConvergenceError, DivergenceError, GridMismatchError
from .fluence import solve_fluence
from .grid import ScalarField, l2_norm
from .phantom import rasterize
from .reconstruct import fixed_point_reconstruct
from .sphericalmeans import RadonOperator, internal_data
from .validation import SUITES, run_suite

log = logging.getLogger("aotomo")

EXIT_OK, EXIT_NUMERICAL, EXIT_USAGE = 0, 1, 2


class StageError(Exception):
    """Failure inside a named stage; ``code`` is the exit code to use."""

    def __init__(self, stage: str, exc: Exception, code: int):
        super().__init__(f"stage {stage!r} failed: {exc}")
        self.stage = stage
        self.code = code


USAGE_ERRORS = (ConfigError, AdmissibilityError, GridMismatchError, FileNotFoundError, ValueError)
NUMERICAL_ERRORS = (ConvergenceError, DivergenceError, RuntimeError, FloatingPointError, ArithmeticError)


def _stage(name, func, *args, **kw):
    try:
        return func(*args, **kw)
    except StageError:
        raise
    except NUMERICAL_ERRORS as exc:
        raise StageError(name, exc, EXIT_NUMERICAL) from exc
    except USAGE_ERRORS as exc:
        raise StageError(name, exc, EXIT_USAGE) from exc


def _load(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    cfg.validate()
    return cfg


def _echo_config(cfg: PipelineConfig, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "config.txt").write_text(dump_config(cfg), encoding="utf-8")


def _out(args, default: str) -> Path:
    path = Path(args.out) if args.out else Path(args.outdir or ".") / default
    _echo_config(args.cfg, path.parent)
    return path


# stage bodies shared by the single-stage commands and the pipeline

def make_phantom(cfg: PipelineConfig):
    return rasterize(cfg.phantom, cfg.grid)


def make_fluence(cfg: PipelineConfig, a: ScalarField):
    return solve_fluence(a, cfg.boundary.build(), tol=cfg.reconstruct.fluence_tol).phi


def make_sinogram(cfg: PipelineConfig, a: ScalarField, threads: int = 1) -> Sinogram:
    acfg = cfg.acoustics.build(cfg.phantom, n_threads=threads)
    return sweep_measurements(a, cfg.boundary.build(), acfg, ideal=cfg.acoustics.model == "ideal")


def make_internal(cfg: PipelineConfig, sino: Sinogram) -> ScalarField:
    acfg = cfg.acoustics.build(cfg.phantom)
    if sino.values.shape != (len(acfg.centers), len(acfg.radii)):
        raise GridMismatchError(
            f"sinogram has {sino.values.shape[0]} centres x {sino.values.shape[1]} radii, "
            f"config expects {len(acfg.centers)} x {len(acfg.radii)}"
        )
    if not (np.allclose(sino.centers, acfg.centers) and np.allclose(sino.radii, acfg.radii)):
        raise GridMismatchError("sinogram centres or radii differ from the configured sweep")
    mask = cfg.phantom.support_mask(cfg.grid)
    op = RadonOperator.from_config(cfg.grid, acfg, n_theta=cfg.inversion.n_theta, support=mask)
    return internal_data(sino, op, reg=cfg.inversion.reg, mask=mask, maxiter=cfg.inversion.maxiter,
                         offsets=cfg.inversion.offsets)


def make_reconstruction(cfg: PipelineConfig, psi: ScalarField):
    mask = cfg.phantom.support_mask(cfg.grid)
    return fixed_point_reconstruct(psi, cfg.boundary.build(), cfg.reconstruct, mask)


def error_metrics(cfg: PipelineConfig, a_rec: ScalarField, a_true: ScalarField) -> dict:
    """Relative L2 errors over D, its interior (0.1 collar removed) and the collar, plus contrast gains where defined."""
    g = cfg.grid
    mask = cfg.phantom.support_mask(g)
    inner = mask.shrunk(0.1)
    collar = mask.inside & ~inner
    d = a_rec - a_true
    a0 = cfg.phantom.a0
    out = {}
    for name, region in (("", mask), ("_interior", inner), ("_collar", collar)):
        den = l2_norm(a_true, g, region)
        out[f"err_l2{name}"] = l2_norm(d, g, region) / den if den > 0 else float("nan")
    for name, region in (("interior", inner), ("collar", collar)):
        t = a_true.values[region] - a0
        r = a_rec.values[region] - a0
        tt = float(np.sum(t * t))
        # fraction of the true contrast recovered (1 = no attenuation); undefined without contrast
        if tt > 0:
            out[f"contrast_gain_{name}"] = float(np.sum(t * r)) / tt
    return out


# subcommands

def cmd_phantom(args) -> int:
    a = _stage("phantom", make_phantom, args.cfg)
    out = _out(args, "a_true.aotf")
    io.write_field(out, a.field)
    log.info("wrote %s (range %.4g to %.4g)", out, a.values.min(), a.values.max())
    return EXIT_OK


def _read_field(cfg, path, stage):
    return _stage(stage, io.read_field, path, cfg.grid)


def _default_absorption(args):
    if args.input:
        return _read_field(args.cfg, args.input, "read absorption")
    return _stage("phantom", make_phantom, args.cfg).field


def cmd_fluence(args) -> int:
    a = _default_absorption(args)
    phi = _stage("fluence", make_fluence, args.cfg, a)
    out = _out(args, "phi.aotf")
    io.write_field(out, phi)
    return EXIT_OK


def cmd_forward(args) -> int:
    a = _default_absorption(args)
    sino = _stage("forward", make_sinogram, args.cfg, a, args.threads)
    out = _out(args, "sinogram.aots")
    io.write_sinogram(out, sino)
    return EXIT_OK


def cmd_internal(args) -> int:
    if not args.input:
        raise StageError("internal", ValueError("a sinogram file is required"), EXIT_USAGE)
    sino = _stage("read sinogram", io.read_sinogram, args.input)
    psi = _stage("internal", make_internal, args.cfg, sino)
    out = _out(args, "psi.aotf")
    io.write_field(out, psi)
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    if not args.input:
        raise StageError("reconstruct", ValueError("an internal-data field file is required"), EXIT_USAGE)
    psi = _read_field(args.cfg, args.input, "read internal data")
    a_rec, trace = _stage("reconstruct", make_reconstruction, args.cfg, psi)
    out = _out(args, "a_rec.aotf")
    io.write_field(out, a_rec)
    trace_path = Path(args.trace) if args.trace else out.with_name(out.stem + "_trace.csv")
    io.write_trace_csv(trace_path, trace)
    return EXIT_OK


def run_pipeline(cfg: PipelineConfig, outdir: Path, threads: int = 1) -> dict:
    """All stages end to end; writes artifacts and ``report.txt`` into ``outdir`` and returns the report."""
    outdir = Path(outdir)
    _echo_config(cfg, outdir)
    report, timings, files = {}, {}, []

    def timed(name, func, *a):
        t0 = time.perf_counter()
        res = _stage(name, func, *a)
        timings[name] = time.perf_counter() - t0
        return res

    def save(name, writer, obj):
        writer(outdir / name, obj)
        files.append(name)

    a_true = timed("phantom", make_phantom, cfg).field
    save("a_true.aotf", io.write_field, a_true)
    phi = timed("fluence", make_fluence, cfg, a_true)
    save("phi.aotf", io.write_field, phi)
    sino = timed("forward", make_sinogram, cfg, a_true, threads)
    save("sinogram.aots", io.write_sinogram, sino)
    psi = timed("internal", make_internal, cfg, sino)
    save("psi.aotf", io.write_field, psi)
    a_rec, trace = timed("reconstruct", make_reconstruction, cfg, psi)
    save("a_rec.aotf", io.write_field, a_rec)

    save("trace.csv", io.write_trace_csv, trace)
    for name, f in (("a_true", a_true), ("phi", phi), ("psi", psi), ("a_rec", a_rec)):
        save(f"{name}.csv", io.write_field_csv, f)
        save(f"{name}.pgm", lambda p, v: io.write_pgm(p, io.field_to_image(v)), f)
    save("sinogram.csv", io.write_sinogram_csv, sino)
    save("sinogram.pgm", lambda p, s: io.write_pgm(p, s.values.T[::-1]), sino)

    g = cfg.grid
    mask = cfg.phantom.support_mask(g)
    report["norm_M"] = sino.norm()
    report["norm_psi"] = l2_norm(psi, g, mask)
    report.update(error_metrics(cfg, a_rec, a_true))
    report["iterations"] = len(trace)
    report["final_diff_l2"] = trace.diff_l2[-1] if len(trace) else 0.0
    for k, v in timings.items():
        report[f"time_{k}_s"] = v
    report["files"] = ",".join(files + ["report.txt", "config.txt"])
    bad = [k for k, v in report.items() if isinstance(v, float) and not np.isfinite(v)]
    if bad:
        raise StageError("report", FloatingPointError(f"non-finite report entries {bad}"), EXIT_NUMERICAL)
    text = "".join(f"{k} = {repr(v) if isinstance(v, float) else v}\n" for k, v in report.items())
    (outdir / "report.txt").write_text(text, encoding="utf-8")
    return report


def cmd_pipeline(args) -> int:
    outdir = Path(args.outdir or args.out or "aotomo_run")
    report = run_pipeline(args.cfg, outdir, args.threads)
    print(f"err_l2_interior = {report['err_l2_interior']!r}")
    print(f"artifacts in {outdir}")
    return EXIT_OK


def cmd_validate(args) -> int:
    if args.suite not in SUITES:
        print(f"unknown suite {args.suite!r}; choose from {', '.join(SUITES)}", file=sys.stderr)
        return EXIT_USAGE
    kw = {"seed": args.cfg.seed}
    checks = _stage(f"validate {args.suite}", run_suite, args.suite, **kw)
    for c in checks:
        print(c.line())
    return EXIT_OK if all(c.passed for c in checks) else EXIT_NUMERICAL


COMMANDS = {
    "phantom": (cmd_phantom, "rasterise the configured phantom to an AOTF field"),
    "fluence": (cmd_fluence, "solve the fluence for an absorption field (default: the phantom)"),
    "forward": (cmd_forward, "sweep the measurements into an AOTS sinogram"),
    "internal": (cmd_internal, "recover the internal data from a sinogram"),
    "reconstruct": (cmd_reconstruct, "run the fixed-point reconstruction from internal data"),
    "pipeline": (cmd_pipeline, "run every stage and write all artifacts and a report"),
    "validate": (cmd_validate, "run a named numerical check suite"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="key-value configuration file")
    common.add_argument("--out", metavar="PATH", help="output file")
    common.add_argument("--outdir", metavar="DIR", help="output directory")
    common.add_argument("--threads", type=int, default=1, metavar="N", help="thread cap for the measurement sweep")
    common.add_argument("--seed", type=int, default=None, metavar="N", help="override the configured seed")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="aotomo", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_text)
        if name == "validate":
            p.add_argument("suite", help=f"one of: {', '.join(SUITES)}")
        elif name != "phantom" and name != "pipeline":
            p.add_argument("input", nargs="?", help="input file")
        if name == "reconstruct":
            p.add_argument("--trace", metavar="PATH", help="trace CSV (default: next to --out)")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        args.cfg = _load(args)
        return COMMANDS[args.command][0](args)
    except ConfigError as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (FileNotFoundError, GridMismatchError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
