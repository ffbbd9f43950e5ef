"""Convergence studies: the SOLVE -> ESTIMATE -> MARK -> REFINE loop and slope fits."""

from __future__ import annotations

import csv
import io
import logging
import math
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.optimize import least_squares

from .eigensolver import SpectralTransform, select_closest, solve_smallest
from .estimator import compute_indicators
from .fem import DofMap, assemble
from .mesh import DomainSpec, Mesh, diameters, generate_structured
from .refine import bisect, mark, uniform_refine

log = logging.getLogger(__name__)

CSV_HEADER = ("iter", "n_tets", "n_dofs", "lambda_h", "eta", "err_lambda", "h", "wall_time")

FICHERA_LAMBDA = 12.92
CUBE_LAMBDA = 2.0 * math.pi**2
DEFAULT_DIVISIONS = (4, 4, 4)


class StudyError(RuntimeError):
    """A level failed; ``records`` holds the levels completed before it."""

    def __init__(self, msg, records):
        super().__init__(msg)
        self.records = records


@dataclass(frozen=True)
class RunRecord:
    iteration: int
    n_tets: int
    n_dofs: int
    lambda_h: float
    eta: float
    err_lambda: float
    h: float
    wall_time: float

    def csv_row(self):
        return [str(self.iteration), str(self.n_tets), str(self.n_dofs), repr(self.lambda_h),
                repr(self.eta), repr(self.err_lambda), repr(self.h), repr(self.wall_time)]


_FIELD_ALIASES = {"iter": "iteration", "N": "n_tets"}


def box_lambda(bounds) -> float:
    """Smallest Maxwell eigenvalue of a box: ``pi^2 (m^2/a^2 + n^2/b^2 + p^2/c^2)``
    with at most one zero index."""
    a = np.array([hi - lo for lo, hi in bounds], dtype=float)
    return float(np.pi**2 * np.sort(1.0 / a**2)[1:].sum())


def default_lambda(domain: DomainSpec) -> float:
    if domain.kind == "fichera":
        return FICHERA_LAMBDA
    return box_lambda(domain.bounds)


@dataclass
class StudyConfig:
    """Parameters of a convergence study.

    ``target_lambda`` seeds the eigenvalue tracking on the first level;
    ``lambda_ref`` is the value errors are measured against. Both default to
    12.92 on the Fichera domain and the exact value on boxes. A ``max_tets``
    of 0 means a single solve. With ``record_time=False`` the wall-time
    column is written as 0 so reruns give identical files.
    """

    domain: DomainSpec = field(default_factory=DomainSpec.fichera)
    mode: str = "adaptive"
    theta: float = 0.5
    max_iters: int = 10
    max_tets: int = 200_000
    target_lambda: float | None = None
    lambda_ref: float | None = None
    nev: int = 2
    tol: float = 1e-8
    seed: int = 0
    divisions: tuple | None = None
    initial_mesh: Mesh | None = None
    record_time: bool = True

    def __post_init__(self):
        if self.mode not in ("uniform", "adaptive"):
            raise ValueError(f"mode must be 'uniform' or 'adaptive', got {self.mode!r}")
        if not 0.0 < self.theta <= 1.0:
            raise ValueError(f"theta must lie in (0, 1], got {self.theta}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.max_tets < 0:
            raise ValueError("max_tets must be non-negative")
        if self.target_lambda is None:
            self.target_lambda = default_lambda(self.domain)
        if self.lambda_ref is None:
            self.lambda_ref = default_lambda(self.domain)

    def start_mesh(self) -> Mesh:
        if self.initial_mesh is not None:
            return self.initial_mesh
        return generate_structured(self.domain, self.divisions or DEFAULT_DIVISIONS)


def run_study(config: StudyConfig, out=None, on_level=None) -> list[RunRecord]:
    """Run the study, writing one CSV row per level as soon as it is solved.

    Parameters
    ----------
    config : StudyConfig
    out : path or text stream, optional
        CSV destination; rows are flushed level by level, so a failure
        leaves the completed levels on disk.
    on_level : callable, optional
        Called as ``on_level(record, mesh, pair, indicators)`` after each level.

    Raises
    ------
    StudyError
        When a level fails; carries the completed records.
    """
    handle, close = _open(out)
    try:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        handle.flush()
        return _loop(config, writer, handle, on_level)
    finally:
        if close:
            handle.close()


def _open(out):
    if out is None:
        return io.StringIO(), True
    if hasattr(out, "write"):
        return out, False
    return open(Path(out), "w", newline="", encoding="utf-8"), True


def _loop(config, writer, handle, on_level):
    records = []
    mesh = config.start_mesh()
    target = config.target_lambda
    for it in range(config.max_iters):
        t0 = time.perf_counter()
        try:
            dofmap = DofMap.from_mesh(mesh)
            system = assemble(mesh, dofmap)
            st = SpectralTransform(system)
            nev = min(config.nev, st.n_positive)
            pairs = solve_smallest(system, nev=nev, tol=config.tol, seed=config.seed, transform=st)
            pair = select_closest(pairs, target)
            ind = compute_indicators(mesh, dofmap, pair)
        except Exception as exc:
            raise StudyError(f"level {it} ({mesh.n_tets} tets) failed: {exc}", records) from exc
        target = pair.lambda_h
        wall = time.perf_counter() - t0 if config.record_time else 0.0
        rec = RunRecord(it, mesh.n_tets, dofmap.n_dofs, float(pair.lambda_h), float(ind.eta),
                        abs(float(pair.lambda_h) - config.lambda_ref), float(diameters(mesh)[2]), wall)
        records.append(rec)
        writer.writerow(rec.csv_row())
        handle.flush()
        log.info("level %d: %d tets, %d dofs, lambda_h=%.10g, eta=%.4g", it, rec.n_tets,
                 rec.n_dofs, rec.lambda_h, rec.eta)
        if on_level is not None:
            on_level(rec, mesh, pair, ind)
        if it + 1 >= config.max_iters or mesh.n_tets >= config.max_tets:
            break
        if config.mode == "uniform":
            if 8 * mesh.n_tets > config.max_tets:
                break
            mesh = uniform_refine(mesh)
        else:
            marks = mark(ind, config.theta)
            if len(marks) == 0:
                log.info("all indicators vanish; stopping")
                break
            refined = bisect(mesh, marks)
            if refined.n_tets > config.max_tets:
                break
            mesh = refined
    return records


def read_records(path) -> list[RunRecord]:
    """Load a study CSV written by :func:`run_study`."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [RunRecord(int(r["iter"]), int(r["n_tets"]), int(r["n_dofs"]), float(r["lambda_h"]),
                      float(r["eta"]), float(r["err_lambda"]), float(r["h"]), float(r["wall_time"]))
            for r in rows]


def _column(records, name):
    name = _FIELD_ALIASES.get(name, name)
    try:
        return np.array([getattr(r, name) for r in records], dtype=float)
    except AttributeError:
        raise ValueError(f"unknown record field {name!r}") from None


def fit_slope(records, x: str = "n_tets", y: str = "err_lambda", skip: int = 0):
    """Least-squares line through ``(log x, log y)``.

    Returns ``(slope, intercept, r2)``.
    """
    recs = list(records)[skip:]
    if len(recs) < 3:
        raise ValueError(f"need at least 3 records after skipping {skip}, got {len(recs)}")
    xs, ys = _column(recs, x), _column(recs, y)
    if np.any(xs <= 0) or np.any(ys <= 0):
        raise ValueError(f"non-positive values in {x!r} or {y!r}; cannot take logarithms")
    lx, ly = np.log(xs), np.log(ys)
    (slope, icpt), res, *_ = np.polyfit(lx, ly, 1, full=True)
    ss = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(res[0]) / ss if res.size and ss > 0 else 1.0
    return float(slope), float(icpt), r2


class Extrapolation(NamedTuple):
    lambda_ref: float
    rate: float

    @property
    def degenerate(self) -> bool:
        """True when no convergence rate could be determined."""
        return not math.isfinite(self.rate)


def extrapolate_lambda(records, x: str = "n_tets") -> Extrapolation:
    """Fit ``lambda_h = lambda + C * N**(-r)`` to a refinement sequence.

    The nonlinear least-squares problem is solved with Levenberg-Marquardt
    (damped Gauss-Newton) started from the Aitken extrapolation of the last
    three levels. A constant sequence returns that constant with rate
    ``nan``; a non-monotone one warns and falls back to the last value.
    """
    recs = list(records)
    if len(recs) < 3:
        raise ValueError(f"need at least 3 records, got {len(recs)}")
    N = _column(recs, x)
    lam = _column(recs, "lambda_h")
    d = np.diff(lam)
    scale = max(abs(lam[-1]), 1.0)
    if np.all(np.abs(d) <= 1e-14 * scale):
        return Extrapolation(float(lam[-1]), math.nan)
    if not (np.all(d > 0) or np.all(d < 0)):
        warnings.warn("non-monotone eigenvalue sequence; using the last level as reference",
                      RuntimeWarning, stacklevel=2)
        return Extrapolation(float(lam[-1]), math.nan)
    # Aitken on the last three levels
    rho = d[-1] / d[-2]
    if not 0.0 < rho < 1.0:
        warnings.warn("increments do not contract; using the last level as reference",
                      RuntimeWarning, stacklevel=2)
        return Extrapolation(float(lam[-1]), math.nan)
    r0 = -math.log(rho) / math.log(N[-1] / N[-2])
    lam0 = lam[-1] + d[-1] * rho / (1.0 - rho)
    c0 = (lam[-1] - lam0) * N[-1] ** r0
    logN = np.log(N)

    def resid(p):
        return (p[0] + p[1] * np.exp(-p[2] * logN) - lam) / scale

    def jac(p):
        e = np.exp(-p[2] * logN)
        return np.stack([np.ones_like(e), e, -p[1] * logN * e], axis=1) / scale

    sol = least_squares(resid, [lam0, c0, r0], jac=jac, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15)
    lam_ref, _, rate = sol.x
    if not (sol.success and math.isfinite(lam_ref) and rate > 0):
        return Extrapolation(float(lam0), float(r0))
    return Extrapolation(float(lam_ref), float(rate))
