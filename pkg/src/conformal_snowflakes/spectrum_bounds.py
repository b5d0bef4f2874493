"""Test functions, the test-function lower bound for beta(t), and (k, l) sweeps."""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial import Polynomial

from .conformal_maps import SlitParams, SnowflakeParams, critical_radius
from .errors import FitError, SnowflakeError
from .quadrature import QuadratureScheme
from .transfer_operator import (
    DiscretizationGrid,
    EigenPair,
    TransferMatrix,
    apply_operator,
    bound_from_lambda,
    build_matrix,
    dominant_eigen,
    write_metadata_lines,
)

logger = logging.getLogger(__name__)

# r = 1 is replaced by 1 + S1_OFFSET when s = 1: the kernel is singular there
S1_OFFSET = 1e-4
UNRELIABLE_T = -0.8
CHECK_POINTS = 10_000

# (t, k, l, log_k lambda, beta(t), Kraetzer, t^2/4); None where the table has a dash
REFERENCE_ROWS = (
    (-2.0, 34, 1, 1.262, None, None, 1.0),
    (-1.8, 34, 1, 1.068, None, None, 0.81),
    (-1.6, 34, 1, 0.8761, None, None, 0.64),
    (-1.4, 34, 1, 0.6879, None, 0.476, 0.49),
    (-1.2, 34, 1, 0.5059, None, 0.340, 0.36),
    (-1.0, 34, 1, 0.3354, None, 0.231, 0.25),
    (-0.8, 34, 1, 0.1865, None, 0.149, 0.16),
    (-0.6, 24, 21, 0.0848, 0.0710, 0.085, 0.09),
    (-0.4, 20, 25, 0.0377, 0.0352, 0.037, 0.04),
    (-0.2, 31, 44, 0.0093, 0.0083, 0.0095, 0.01),
    (0.2, 5, 7, 0.0091, 0.00897, 0.0094, 0.01),
    (0.4, 11, 30, 0.0376, 0.03767, 0.037, 0.04),
    (0.6, 14, 68, 0.0851, 0.08442, 0.086, 0.09),
    (0.8, 12, 67, 0.1514, 0.1511, 0.154, 0.16),
    (1.0, 13, 73, 0.2362, 0.2340, 0.242, 0.25),
    (1.2, 10, 67, 0.3425, 0.3350, 0.346, 0.36),
    (1.4, 8, 55, 0.4680, 0.4586, 0.476, 0.49),
    (1.6, 6, 39, 0.6137, 0.6091, None, 0.64),
    (1.8, 6, 39, 0.7790, 0.7713, None, 0.81),
    (2.0, 4, 21, 0.9548, 0.9296, None, 1.0),
)


@dataclass
class TestFunction:
    """Positive radial function on [1, R].

    ``piecewise_linear``: linear interpolation of ``knots`` with constant
    extension.  ``rational``: ``sum num[j] x^j / (den[0] + den[1] x)``.
    """

    __test__ = False  # not a pytest class

    form: str
    domain: Tuple[float, float]
    knots: Optional[Tuple[np.ndarray, np.ndarray]] = None
    num_coeffs: Optional[Tuple[float, ...]] = None
    den_coeffs: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        if self.form == "piecewise_linear":
            if self.knots is None:
                raise ValueError("piecewise_linear test function needs knots")
            r, v = (np.asarray(a, dtype=float) for a in self.knots)
            if r.shape != v.shape or r.ndim != 1 or r.size < 1:
                raise ValueError("knots must be two equal-length 1-d sequences")
            self.knots = (r, v)
        elif self.form == "rational":
            if self.num_coeffs is None or self.den_coeffs is None:
                raise ValueError("rational test function needs numerator and denominator")
            self.num_coeffs = tuple(float(c) for c in self.num_coeffs)
            self.den_coeffs = tuple(float(c) for c in self.den_coeffs)
        else:
            raise ValueError(f"unknown test function form {self.form!r}")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.form == "piecewise_linear":
            out = np.interp(x, *self.knots)
        else:
            out = np.polynomial.polynomial.polyval(x, self.num_coeffs) / np.polynomial.polynomial.polyval(
                x, self.den_coeffs
            )
        return float(out) if out.ndim == 0 else out

    def derivative(self, x, order: int = 1):
        """Exact derivative of the rational form (quotient via polynomial algebra)."""
        if self.form != "rational":
            raise ValueError("derivative is only available for the rational form")
        num, den = Polynomial(self.num_coeffs), Polynomial(self.den_coeffs)
        # nu = num/den; differentiate num = nu * den repeatedly (den is linear)
        x = np.asarray(x, dtype=float)
        d = [self(x)]
        dv, dd = den(x), den.deriv()(x)
        for j in range(1, order + 1):
            d.append((num.deriv(j)(x) - j * dd * d[j - 1]) / dv)
        return d[order]

    def scaled(self, factor: float) -> "TestFunction":
        if not factor > 0:
            raise ValueError("scaling factor must be positive")
        if self.form == "piecewise_linear":
            r, v = self.knots
            return TestFunction(self.form, self.domain, knots=(r, v * factor))
        return TestFunction(
            self.form,
            self.domain,
            num_coeffs=tuple(c * factor for c in self.num_coeffs),
            den_coeffs=self.den_coeffs,
        )

    def monotonicity(self, n: int = CHECK_POINTS) -> Optional[str]:
        """'nondecreasing', 'nonincreasing', 'constant' or None on an n-point scan."""
        d = np.diff(self(np.linspace(*self.domain, n)))
        if np.all(d == 0):
            return "constant"
        if np.all(d >= 0):
            return "nondecreasing"
        if np.all(d <= 0):
            return "nonincreasing"
        return None

    def validate(self, monotone: Optional[str] = "any", n: int = CHECK_POINTS) -> None:
        """Raise :class:`FitError` unless positive (and monotone as requested) on the domain.

        ``monotone`` is one of None (no check), 'any', 'nondecreasing',
        'nonincreasing'.
        """
        x = np.linspace(*self.domain, n)
        if self.form == "rational":
            den = np.polynomial.polynomial.polyval(np.array(self.domain), self.den_coeffs)
            if len(self.den_coeffs) == 2 and den[0] * den[1] <= 0:
                root = -self.den_coeffs[0] / self.den_coeffs[1]
                raise FitError("denominator vanishes on the domain", r=root)
        v = self(x)
        bad = np.flatnonzero(~(v > 0))
        if bad.size:
            raise FitError(f"test function is not positive at r = {x[bad[0]]:.6g}", r=float(x[bad[0]]))
        if monotone is None:
            return
        d = np.diff(v)
        checks = {
            "nondecreasing": d < 0,
            "nonincreasing": d > 0,
        }
        if monotone == "any":
            viol = checks["nondecreasing"] if d.sum() >= 0 else checks["nonincreasing"]
        else:
            viol = checks[monotone]
        bad = np.flatnonzero(viol)
        if bad.size:
            raise FitError(f"test function is not monotone near r = {x[bad[0]]:.6g}", r=float(x[bad[0]]))

    def to_dict(self) -> dict:
        out = {"form": self.form, "domain": list(self.domain)}
        if self.form == "piecewise_linear":
            out["knots_r"] = self.knots[0].tolist()
            out["knots_v"] = self.knots[1].tolist()
        else:
            out["num_coeffs"] = list(self.num_coeffs)
            out["den_coeffs"] = list(self.den_coeffs)
        return out


NU_T1_NUM = (7.1479, 8.9280, -0.07765, 1.733e-3, -2.0598e-5, 9.5353e-8)
NU_T1_DEN = (2.7154, 13.2845)


def nu_t1(R: float = 76.2) -> TestFunction:
    """The published degree (5, 1) rational test function for t = 1, k = 13, l = 73."""
    return TestFunction("rational", (1.0, R), num_coeffs=NU_T1_NUM, den_coeffs=NU_T1_DEN)


def _rational_fit(r: np.ndarray, v: np.ndarray, R: float, deg_num: int, iterations: int = 4):
    """Linearised weighted least squares for p/q with q = 1 + b x on x in [-1, 1].

    Weights 1/(v |q_prev|) target relative error (Sanathanan-Koerner steps).
    Returns monomial coefficients in the original variable.
    """
    a, b0 = 2.0 / (R - 1.0), -(R + 1.0) / (R - 1.0)
    x = a * r + b0
    cols = [x**j for j in range(deg_num + 1)] + [-v * x]
    A = np.column_stack(cols)
    w = 1.0 / v
    coef = None
    for _ in range(iterations):
        coef, *_ = np.linalg.lstsq(A * w[:, None], v * w, rcond=None)
        w = 1.0 / (v * np.abs(1.0 + coef[-1] * x))
    if abs(coef[-1]) >= 1.0:
        coef = _pole_search_fit(x, v, deg_num)
    affine = Polynomial([b0, a])
    num = Polynomial(coef[:-1])(affine)
    den = Polynomial([1.0, coef[-1]])(affine)
    num_c = np.zeros(deg_num + 1)
    num_c[: num.coef.size] = num.coef
    den_c = np.zeros(2)
    den_c[: den.coef.size] = den.coef
    return num_c, den_c


def _pole_search_fit(x: np.ndarray, v: np.ndarray, deg_num: int, n_poles: int = 601) -> np.ndarray:
    """Fallback when the iterated fit puts the pole of 1 + b x inside [-1, 1].

    Scans pole positions x_p outside [-1, 1] (log-spaced distances 1e-8 to
    1e4), solves the linear relative least-squares problem for the numerator
    at each, and keeps the smallest RMS relative residual.  Returns the
    coefficients in the same layout as the iterated fit (numerator, then b).
    """
    V = np.column_stack([x**j for j in range(deg_num + 1)])
    dist = np.logspace(-8.0, 4.0, n_poles)
    best_err, best = np.inf, None
    for xp in np.concatenate([-1.0 - dist, 1.0 + dist]):
        q = 1.0 - x / xp
        c, *_ = np.linalg.lstsq(V / v[:, None], q, rcond=None)
        err = np.sqrt(np.mean((V @ c / (q * v) - 1.0) ** 2))
        if err < best_err:
            best_err, best = err, np.append(c, -1.0 / xp)
    return best


def fit_test_function(
    eig: EigenPair,
    grid: DiscretizationGrid,
    form: str = "rational",
    monotone: Optional[str] = "any",
    deg_num: int = 5,
) -> TestFunction:
    """Turn a Perron eigenvector into a test function on [1, R].

    The rational form is rescaled so its grid mean equals the eigenvector
    mean; the result is validated for positivity and monotonicity.
    """
    r, v = grid.r, np.asarray(eig.vector, dtype=float)
    if v.shape != r.shape:
        raise ValueError("eigenvector length does not match the grid")
    if np.any(v <= 0):
        raise FitError("eigenvector is not strictly positive", r=float(r[np.argmin(v)]))
    domain = (1.0, float(grid.R))
    if form == "piecewise_linear":
        nu = TestFunction(form, domain, knots=(r.copy(), v.copy()))
    elif form == "rational":
        num, den = _rational_fit(r, v, grid.R, deg_num)
        nu = TestFunction(form, domain, num_coeffs=num, den_coeffs=den)
        fitted = nu(r)
        if np.all(np.isfinite(fitted)) and fitted.mean() > 0:
            nu = nu.scaled(v.mean() / fitted.mean())
    else:
        raise ValueError(f"unknown form {form!r}")
    nu.validate(monotone)
    return nu


def constant_test_function(R: float, value: float = 1.0) -> TestFunction:
    return TestFunction("piecewise_linear", (1.0, R), knots=(np.array([1.0, R]), np.array([value, value])))


@dataclass
class BoundResult:
    params: SnowflakeParams
    beta_lower: float
    min_ratio: float
    argmin_r: float
    per_point: List[Tuple[float, float]]
    quad_tol: float
    R: float
    rigor: str = "semi-rigorous"
    notes: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        p = self.params
        return {
            "t": p.t,
            "k": p.k,
            "l": p.slit.l,
            "s": p.slit.s,
            "R": self.R,
            "beta_lower": self.beta_lower,
            "min_ratio": self.min_ratio,
            "argmin_r": self.argmin_r,
            "quad_tol": self.quad_tol,
            "rigor": self.rigor,
            "notes": list(self.notes),
            "per_point": [[float(r), float(q)] for r, q in self.per_point],
        }


def _ratio_at(args):
    params, nu, r, quad = args
    value, _ = apply_operator(params, nu, r, quad)
    return value / nu(r)


def bound_from_test_function(
    params: SnowflakeParams,
    nu: TestFunction,
    R: float,
    n_points: int = 300,
    quad: Optional[QuadratureScheme] = None,
    jobs: int = 1,
) -> BoundResult:
    """min over an r-grid of P nu / nu and the bound log(min)/log(k).

    Semi-rigorous: neither the quadrature error nor the gaps between grid
    points are controlled.
    """
    quad = quad or QuadratureScheme()
    if n_points < 2:
        raise ValueError("need at least two radii")
    rs = np.linspace(1.0, R, n_points)
    notes = ["quadrature and continuity errors are not bounded"]
    if params.slit.s == 1 and params.slit.l > 0:
        rs[0] = 1.0 + S1_OFFSET
        notes.append(f"r = 1 replaced by 1 + {S1_OFFSET:g} (kernel singular at r = 1 for s = 1)")
    tasks = [(params, nu, float(r), quad) for r in rs]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            ratios = list(ex.map(_ratio_at, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        ratios = [_ratio_at(t) for t in tasks]
    ratios = np.asarray(ratios)
    if np.any(~(ratios > 0)):
        raise SnowflakeError("P nu / nu is not positive; the test function is not admissible")
    i = int(np.argmin(ratios))
    if params.t <= UNRELIABLE_T:
        notes.append("t <= -0.8: discretisation is known to be unreliable")
    return BoundResult(
        params=params,
        beta_lower=math.log(ratios[i]) / math.log(params.k),
        min_ratio=float(ratios[i]),
        argmin_r=float(rs[i]),
        per_point=list(zip(rs.tolist(), ratios.tolist())),
        quad_tol=quad.tol,
        R=R,
        notes=notes,
    )


@dataclass
class EigenRun:
    params: SnowflakeParams
    grid: DiscretizationGrid
    matrix: TransferMatrix
    eig: EigenPair

    @property
    def log_k_lambda(self) -> float:
        return self.eig.log_k(self.params.k)


def compute_eigen(
    params: SnowflakeParams,
    N: int,
    M: int,
    R: Optional[float] = None,
    binning: str = "nearest",
    tol: float = 1e-10,
    max_iter: int = 100_000,
) -> EigenRun:
    """Critical radius (unless given), P_N and its Perron pair."""
    if R is None:
        R = critical_radius(params.k, params.slit)
    grid = DiscretizationGrid(N, M, R)
    matrix = build_matrix(params, grid, binning)
    return EigenRun(params, grid, matrix, dominant_eigen(matrix, tol, max_iter))


@dataclass
class SweepRecord:
    t: float
    k: int
    l: float
    log_k_lambda: Optional[float]
    beta_lower: Optional[float] = None
    s: float = 1.0
    R: Optional[float] = None
    error: Optional[str] = None
    warning: Optional[str] = None

    @property
    def kraetzer_value(self) -> float:
        return self.t * self.t / 4


def _sweep_cell(args) -> SweepRecord:
    t, k, l, s, N, M, binning = args
    rec = SweepRecord(t=t, k=k, l=l, log_k_lambda=None, s=s)
    if t <= UNRELIABLE_T:
        rec.warning = "t <= -0.8: eigenvalue estimate unreliable"
    try:
        run = compute_eigen(SnowflakeParams.make(t, k, l, s), N, M, binning=binning)
        rec.R = run.grid.R
        rec.log_k_lambda = run.log_k_lambda
    except (SnowflakeError, ValueError) as exc:
        rec.error = f"{type(exc).__name__}: {exc}"
    return rec


def _sort_key(rec: SweepRecord):
    # failed cells last, then by descending log_k lambda, then (k, l)
    val = rec.log_k_lambda
    return (val is None, -(val if val is not None else 0.0), rec.k, rec.l)


def sweep(
    t: float,
    k_values: Iterable[int],
    l_values: Iterable[float],
    N: int = 1000,
    M: int = 500,
    s: float = 1.0,
    binning: str = "nearest",
    jobs: int = 1,
    bound_best: bool = False,
    n_points: int = 300,
    fit_form: str = "rational",
) -> List[SweepRecord]:
    """Evaluate log_k lambda_N on the (k, l) grid, best cell first.

    Failed cells carry an ``error`` and sort last.  With ``bound_best`` the
    best cell also gets a test-function bound.
    """
    cells = [(float(t), int(k), float(l), float(s), N, M, binning) for k in k_values for l in l_values]
    if not cells:
        return []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            records = list(ex.map(_sweep_cell, cells))
    else:
        records = [_sweep_cell(c) for c in cells]
    records.sort(key=_sort_key)
    if bound_best and records[0].log_k_lambda is not None:
        best = records[0]
        try:
            best.beta_lower = semi_rigorous_bound(
                SnowflakeParams.make(best.t, best.k, best.l, best.s), N, M, binning=binning,
                n_points=n_points, form=fit_form,
            ).beta_lower
        except (SnowflakeError, ValueError) as exc:
            best.error = f"bound failed: {type(exc).__name__}: {exc}"
    return records


def semi_rigorous_bound(
    params: SnowflakeParams,
    N: int,
    M: int,
    R: Optional[float] = None,
    binning: str = "nearest",
    n_points: int = 300,
    form: str = "rational",
    quad: Optional[QuadratureScheme] = None,
    jobs: int = 1,
    monotone: Optional[str] = "any",
) -> BoundResult:
    """Eigenvector -> fitted test function -> min P nu / nu."""
    run = compute_eigen(params, N, M, R, binning)
    nu = fit_test_function(run.eig, run.grid, form, monotone=monotone)
    return bound_from_test_function(params, nu, run.grid.R, n_points, quad, jobs)


SWEEP_COLUMNS = ("t", "k", "l", "log_k_lambda", "beta_lower", "t2_over_4", "note")


def _fmt(x):
    return "" if x is None else repr(float(x))


def write_sweep_csv(records: Sequence[SweepRecord], path, metadata: Optional[dict] = None) -> None:
    with open(path, "w", newline="") as fh:
        write_metadata_lines(fh, metadata)
        w = csv.writer(fh)
        w.writerow(SWEEP_COLUMNS)
        for r in records:
            note = "; ".join(x for x in (r.error, r.warning) if x)
            w.writerow([r.t, r.k, _fmt(r.l), _fmt(r.log_k_lambda), _fmt(r.beta_lower), _fmt(r.kraetzer_value), note])


def write_bound_json(
    result: BoundResult, path, nu: Optional[TestFunction] = None, metadata: Optional[dict] = None
) -> None:
    data = result.to_dict()
    if metadata:
        data["metadata"] = metadata
    if nu is not None:
        data["test_function"] = nu.to_dict()
    Path(path).write_text(json.dumps(data, indent=2) + "\n")
