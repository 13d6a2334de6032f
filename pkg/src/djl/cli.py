"""Command-line front end.

Every run writes its outputs plus ``manifest.json`` (the full argument list,
the normalized model and the tool version) into ``--out``;
``djl rerun <manifest>`` regenerates the directory.  Global flags can also be
set through ``DJL_<FLAG>`` environment variables, e.g. ``DJL_QUAD_NODES``.

Exit codes: 1 input/IO, 2 arbitrage, 3 density, 4 quadrature, 5 saddle, 6 Monte Carlo.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, io
from .dupire import TimeChange, local_vol_fd_surface, shifted_local_vol
from .errors import (
    ArbitrageDetected,
    DegenerateDensity,
    DjlError,
    NoSaddle,
    NonFiniteState,
    QuadratureNotConverged,
    RegimeTooSmall,
    SaddleInUnitInterval,
    SingularDensity,
    StripExhausted,
    StripViolation,
    TabulationRangeTooNarrow,
)
from .mc import McConfig, verify_theorem
from .models import load_model, model_from_dict, model_to_dict, require_density
from .pricing import QuadratureConfig, audit_surface, build_surface
from .saddle import blowup_fit, solve_saddle

EXIT_IO, EXIT_ARBITRAGE, EXIT_DENSITY, EXIT_QUADRATURE, EXIT_SADDLE, EXIT_MC = 1, 2, 3, 4, 5, 6

_EXIT_FOR = (
    (ArbitrageDetected, EXIT_ARBITRAGE),
    ((SingularDensity, DegenerateDensity, TabulationRangeTooNarrow), EXIT_DENSITY),
    ((QuadratureNotConverged, StripViolation), EXIT_QUADRATURE),
    ((NoSaddle, StripExhausted, SaddleInUnitInterval, RegimeTooSmall), EXIT_SADDLE),
    (NonFiniteState, EXIT_MC),
)

_GLOBALS = ("seed", "out", "quad_nodes", "contour", "quad_bound", "scheme")


class McRunInvalid(DjlError):
    """A verify run had failing cells or vol-cap hits."""


def parse_grid(text: str, geometric: bool = False) -> np.ndarray:
    """``start:end:count`` (inclusive, linear) or, with ``geometric``, ``start:factor:count``.

    A comma-separated list is accepted too.
    """
    if ":" not in text:
        return np.array([float(v) for v in text.split(",") if v.strip()])
    parts = text.split(":")
    if len(parts) != 3:
        raise ValueError(f"grid {text!r} must be start:{'factor' if geometric else 'end'}:count")
    a, b, n = float(parts[0]), float(parts[1]), int(parts[2])
    if n < 1:
        raise ValueError(f"grid {text!r} needs count >= 1")
    if geometric:
        return a * b ** np.arange(n)
    return np.linspace(a, b, n)


def _env(name, cast, default=None):
    raw = os.environ.get(f"DJL_{name.upper()}")
    return default if raw is None else cast(raw)


class _Parser(argparse.ArgumentParser):
    # usage errors are input errors; argparse's own code 2 is taken by arbitrage
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_IO, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="djl", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"djl {__version__}")
    p.add_argument("--seed", type=int, default=_env("seed", int, 0))
    p.add_argument("--out", default=_env("out", str, "djl-out"), help="output directory")
    p.add_argument("--quad-nodes", type=int, default=_env("quad_nodes", int, 64), help="initial trapezoid nodes")
    p.add_argument("--contour", type=float, default=_env("contour", float), help="fixed contour abscissa (> 1)")
    p.add_argument("--quad-bound", type=float, default=_env("quad_bound", float), help="truncation bound U")
    p.add_argument("--scheme", choices=("trapezoid", "saddle"), default=_env("scheme", str, None),
                   help="contour placement (default: per command)")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("price", help="call price surface with an arbitrage audit")
    c.add_argument("--model-file", required=True)
    c.add_argument("--strikes", required=True, help="start:end:count")
    c.add_argument("--maturities", required=True, help="start:end:count")

    c = sub.add_parser("localvol", help="local variance surface, optionally shifted")
    c.add_argument("--model-file", required=True)
    c.add_argument("--strikes", required=True)
    c.add_argument("--maturities", required=True)
    c.add_argument("--eps", type=float, help="regularization shift; omit for the unshifted surface")
    c.add_argument("--time-change", default="shift", help="shift | affine:a,b")
    c.add_argument("--method", choices=("fourier", "fd"), default="fourier")

    c = sub.add_parser("blowup", help="small-maturity blowup exponent at a fixed strike")
    c.add_argument("--model-file", required=True)
    c.add_argument("--strike", type=float, required=True)
    c.add_argument("--t-grid", default="0.02:0.5:4", help="start:factor:count")
    c.add_argument("--source", choices=("fourier", "ruin", "saddle"), default="fourier")
    c.add_argument("--correction", choices=("none", "merton"), default="none")

    c = sub.add_parser("saddle", help="saddle points and wing local variance")
    c.add_argument("--model-file", required=True)
    c.add_argument("--log-strikes", required=True, help="start:end:count or comma list of k = log(K/S0)")
    c.add_argument("--maturities", required=True)

    c = sub.add_parser("verify", help="Monte Carlo check of the regularized diffusion")
    c.add_argument("--model-file", required=True)
    c.add_argument("--strikes", default="0.9,1.0,1.1")
    c.add_argument("--maturity", type=float, default=0.5)
    c.add_argument("--eps-list", default="0.2,0.1,0.05")
    c.add_argument("--paths", type=int, default=400_000)
    c.add_argument("--steps", type=int, default=200, help="time steps per year")
    c.add_argument("--vol-cap", type=float, default=5.0, help="cap on sigma during stepping (inf disables)")
    c.add_argument("--workers", type=int, default=1)

    c = sub.add_parser("rerun", help="regenerate an output directory from its manifest")
    c.add_argument("manifest")
    return p


def _quad(args, default_scheme):
    return QuadratureConfig(
        contour=args.contour,
        bound=args.quad_bound,
        nodes=args.quad_nodes,
        scheme=args.scheme or default_scheme,
    )


def _canonical_argv(args) -> list[str]:
    """Argument list reproducing this run (output directory excluded, model file replaced by the copy)."""
    out = []
    for name in _GLOBALS:
        if name == "out":
            continue
        v = getattr(args, name)
        if v is not None:
            out += [f"--{name.replace('_', '-')}", repr(v) if isinstance(v, float) else str(v)]
    out.append(args.command)
    for name, v in sorted(vars(args).items()):
        if name in _GLOBALS or name in ("command", "model_file") or v is None:
            continue
        out += [f"--{name.replace('_', '-')}", repr(v) if isinstance(v, float) else str(v)]
    out += ["--model-file", "model.json"]
    return out


def _prepare(args):
    model = load_model(args.model_file)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_json(out / "model.json", model_to_dict(model))
    io.write_json(
        out / "manifest.json",
        {"tool": "djl", "version": __version__, "command": args.command, "argv": _canonical_argv(args),
         "model": model_to_dict(model)},
    )
    return model, out


def cmd_price(args):
    model, out = _prepare(args)
    K, T = parse_grid(args.strikes), parse_grid(args.maturities)
    surface = build_surface(model, K, T, _quad(args, "trapezoid"))
    io.write_surface_csv(out / "surface.csv", surface)
    io.write_json(out / "surface.json", io.surface_to_dict(surface))
    io.write_json(out / "audit.json", audit_surface(surface))
    print(f"wrote {K.size * T.size} prices to {out / 'surface.csv'}")


def cmd_localvol(args):
    model, out = _prepare(args)
    K, T = parse_grid(args.strikes), parse_grid(args.maturities)
    q = _quad(args, "saddle")
    if args.method == "fd":
        if args.eps is not None:
            raise ValueError("--method fd works on the unshifted surface; drop --eps")
        lv = local_vol_fd_surface(build_surface(model, K, T, q))
    elif args.eps is None:
        for t in T:
            require_density(model, t)
        from .dupire import LocalVolSurface, local_vol_fourier

        lv = LocalVolSurface(K, T, np.column_stack([local_vol_fourier(model, K, t, q) for t in T]), "fourier")
    else:
        tc = TimeChange.parse(args.time_change, args.eps)
        lv = shifted_local_vol(model, args.eps, tc, q).surface(K, T)
    io.write_localvol_csv(out / "localvol.csv", lv)
    print(f"wrote {int(lv.valid.sum())} local variances to {out / 'localvol.csv'}")


def cmd_blowup(args):
    model, out = _prepare(args)
    fit = blowup_fit(model, args.strike, parse_grid(args.t_grid, geometric=True), args.source, args.correction,
                     _quad(args, "saddle"))
    io.write_blowup_csv(out / "blowup.csv", fit)
    summary = {"model": fit.model, "K": fit.K, "source": fit.source, "correction": fit.correction,
               "exponent": fit.exponent, "r2": fit.r2, "exp_slope": fit.exp_slope, "exp_r2": fit.exp_r2,
               "local_exponents": [float(v) for v in fit.slopes]}
    io.write_json(out / "blowup.json", summary)
    print(f"exponent {fit.exponent:.4f} (R2 {fit.r2:.4f})")


def cmd_saddle(args):
    model, out = _prepare(args)
    rows = []
    for T in parse_grid(args.maturities):
        for k in parse_grid(args.log_strikes):
            try:
                r = solve_saddle(model, k, T)
                lv = r.local_variance_approx
                rows.append((*map(io.fmt, (k, T, r.s_hat, r.m, r.dm_ds, r.d2m_ds2, r.dm_dT)),
                             "" if lv is None else io.fmt(lv), "ok" if lv is not None else "unit-interval"))
            except (NoSaddle, StripExhausted) as exc:
                rows.append((io.fmt(k), io.fmt(T), "", "", "", "", "", "", type(exc).__name__))
    io.write_rows(out / "saddle.csv", ("k", "T", "s_hat", "m", "dm_ds", "d2m_ds2", "dm_dT",
                                        "local_variance_approx", "status"), rows)
    print(f"wrote {len(rows)} saddle points to {out / 'saddle.csv'}")


def cmd_verify(args):
    model, out = _prepare(args)
    cfg = McConfig(n_paths=args.paths, steps_per_year=args.steps, seed=args.seed, vol_cap=args.vol_cap,
                   workers=args.workers)
    rep = verify_theorem(model, parse_grid(args.strikes), args.maturity, parse_grid(args.eps_list), cfg,
                         _quad(args, "saddle"))
    io.write_json(out / "report.json", io.report_to_dict(rep))
    io.write_report_csv(out / "report.csv", rep)
    print(f"max |z| = {rep.max_abs_z:.3f}, converged = {rep.converged}, passed = {rep.passed}")
    bad = [r for r in rep.rows if r.error or r.cap_hits]
    if bad:
        raise McRunInvalid(f"{len(bad)} cells failed or hit the vol cap; first: {bad[0].error or 'vol cap'}")


def cmd_rerun(args):
    with open(args.manifest) as fh:
        manifest = json.load(fh)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_json(out / "model.json", model_to_dict(model_from_dict(manifest["model"])))
    cwd = os.getcwd()
    os.chdir(out)
    try:
        return main(["--out", ".", *manifest["argv"]])
    finally:
        os.chdir(cwd)


COMMANDS = {"price": cmd_price, "localvol": cmd_localvol, "blowup": cmd_blowup, "saddle": cmd_saddle,
            "verify": cmd_verify, "rerun": cmd_rerun}


def exit_code(exc: BaseException) -> int:
    for kinds, code in _EXIT_FOR:
        if isinstance(exc, kinds):
            return code
    if isinstance(exc, McRunInvalid):
        return EXIT_MC
    return EXIT_IO


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        result = COMMANDS[args.command](args)
        return result or 0
    except FileNotFoundError as exc:
        print(f"djl: cannot read {exc.filename}: {exc.strerror}", file=sys.stderr)
        return EXIT_IO
    except (DjlError, OSError, ValueError, KeyError) as exc:
        print(f"djl: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
