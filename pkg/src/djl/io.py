"""CSV and JSON serialization of surfaces, local-vol tables and reports.

Floats are written with ``repr`` so files round-trip exactly and repeated
runs are byte-identical.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .dupire import LocalVolSurface
from .mc import TheoremReport
from .pricing import SurfaceGrid


def fmt(x):
    x = float(x)
    return repr(x) if math.isfinite(x) else ("nan" if math.isnan(x) else ("inf" if x > 0 else "-inf"))


def _jsonfmt(x):
    x = float(x)
    return x if math.isfinite(x) else None


def write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        w.writerows(rows)


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def write_surface_csv(path, surface: SurfaceGrid):
    """Header K,T,C; rows ordered by maturity, then strike."""
    rows = (
        (fmt(K), fmt(T), fmt(surface.prices[i, j]))
        for j, T in enumerate(surface.maturities)
        for i, K in enumerate(surface.strikes)
    )
    write_rows(path, ("K", "T", "C"), rows)


def surface_to_dict(surface: SurfaceGrid) -> dict:
    return {
        "spot": float(surface.spot),
        "strikes": [float(k) for k in surface.strikes],
        "maturities": [float(t) for t in surface.maturities],
        "prices": [[float(c) for c in row] for row in surface.prices],
    }


def surface_from_dict(d: dict) -> SurfaceGrid:
    return SurfaceGrid(np.array(d["strikes"]), np.array(d["maturities"]), np.array(d["prices"]), d.get("spot", 1.0))


def read_surface_json(path) -> SurfaceGrid:
    with open(Path(path)) as fh:
        return surface_from_dict(json.load(fh))


def write_localvol_csv(path, lv: LocalVolSurface):
    """Header K,T,sigma_loc_sq,provenance; excluded points are left out."""
    rows = (
        (fmt(K), fmt(T), fmt(lv.local_variance[i, j]), lv.provenance)
        for j, T in enumerate(lv.maturities)
        for i, K in enumerate(lv.strikes)
        if lv.valid[i, j]
    )
    write_rows(path, ("K", "T", "sigma_loc_sq", "provenance"), rows)


def report_to_dict(rep: TheoremReport) -> dict:
    return {
        "model": rep.model,
        "strikes": list(rep.strikes),
        "T": rep.T,
        "eps": list(rep.eps),
        "rows": [
            {
                "K": r.K,
                "eps": r.eps,
                "mc_price": _jsonfmt(r.mc_price),
                "stderr": _jsonfmt(r.stderr),
                "analytic": _jsonfmt(r.analytic),
                "z": _jsonfmt(r.z),
                "cap_hits": r.cap_hits,
                "error": r.error,
            }
            for r in rep.rows
        ],
        "limit": [{"K": K, "price": v} for K, v in rep.limit.items()],
        "martingale_z": [{"eps": e, "z": _jsonfmt(z)} for e, z in rep.martingale_z.items()],
        "converged": rep.converged,
        "passed": rep.passed,
    }


def write_report_csv(path, rep: TheoremReport):
    rows = [(fmt(r.K), fmt(r.eps), fmt(r.mc_price), fmt(r.stderr), fmt(r.analytic), fmt(r.z)) for r in rep.rows]
    write_rows(path, ("K", "eps", "mc_price", "stderr", "analytic", "z"), rows)


def write_blowup_csv(path, fit):
    """Header T,sigma_loc_sq,fit_exponent,R2 (the fit columns repeat on each row)."""
    rows = [(fmt(T), fmt(v), fmt(fit.exponent), fmt(fit.r2)) for T, v in zip(fit.T, fit.local_variance)]
    write_rows(path, ("T", "sigma_loc_sq", "fit_exponent", "R2"), rows)
