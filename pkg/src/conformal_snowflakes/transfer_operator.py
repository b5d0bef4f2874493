"""Discretised transfer operator P_N, its Perron eigenpair, and P applied to a test function.

The operator acts on radial functions on [1, R]:

    P nu(r) = r^(1 - (k-1) t / k) * mean_theta[ nu(|phi(w)|) |phi'(w)|^t / |phi(w)| ],
    w = r^(1/k) e^(i theta).
"""

from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Tuple

import numpy as np

from .conformal_maps import SnowflakeParams, slit_map, slit_map_derivative
from .errors import ConvergenceError, SingularPointError
from .quadrature import QuadratureScheme, adaptive_periodic_mean

logger = logging.getLogger(__name__)

BINNING_RULES = ("nearest", "upper")
# rows are assembled in blocks of at most this many kernel samples
_BLOCK_SAMPLES = 2_000_000


@dataclass(frozen=True)
class DiscretizationGrid:
    """r_n = 1 + (R - 1) n / N for n = 1..N, theta_m = 2 pi m / M for m = 0..M-1."""

    N: int
    M: int
    R: float

    def __post_init__(self):
        if self.N < 2 or self.M < 2:
            raise ValueError("N and M must be >= 2")
        if not self.R > 1:
            raise ValueError("outer radius R must exceed 1")

    @property
    def r(self) -> np.ndarray:
        return 1.0 + (self.R - 1.0) * np.arange(1, self.N + 1) / self.N

    @property
    def theta(self) -> np.ndarray:
        return 2.0 * math.pi * np.arange(self.M) / self.M

    def bin_index(self, radius: np.ndarray, rule: str = "nearest") -> np.ndarray:
        """Zero-based column for each image modulus, clamped to [0, N-1].

        ``nearest`` picks the closest r_n' (ties go to the lower index);
        ``upper`` picks the smallest r_n' >= radius.
        """
        pos = (np.asarray(radius) - 1.0) * self.N / (self.R - 1.0)
        if rule == "nearest":
            idx = np.ceil(pos - 0.5)
        elif rule == "upper":
            idx = np.ceil(pos)
        else:
            raise ValueError(f"unknown binning rule {rule!r}; expected one of {BINNING_RULES}")
        return np.clip(idx, 1, self.N).astype(np.int64) - 1


@dataclass
class TransferMatrix:
    params: SnowflakeParams
    grid: DiscretizationGrid
    entries: np.ndarray
    binning: str = "nearest"
    clamped_low: int = 0
    clamped_high: int = 0

    @property
    def row_mass(self) -> np.ndarray:
        return self.entries.sum(axis=1)


@dataclass
class EigenPair:
    lam: float
    vector: np.ndarray
    residual: float
    iterations: int

    def log_k(self, k: int) -> float:
        return bound_from_lambda(self.lam, k)


def kernel_weights(params: SnowflakeParams, r: np.ndarray, theta: np.ndarray):
    """Image moduli |phi| and weights r^(1-t(k-1)/k) |phi'|^t / |phi| on the (r, theta) grid."""
    k, t = params.k, params.t
    z = np.power(r, 1.0 / k)[:, None] * np.exp(1j * theta)[None, :]
    try:
        dphi = slit_map_derivative(z, params.slit)
    except SingularPointError as exc:
        raise SingularPointError(f"{exc}; kernel sample hit a singular point, choose s > 1") from None
    f = slit_map(z, params.slit)
    mod = np.abs(f)
    weight = np.power(r, 1.0 - t * (k - 1) / k)[:, None] * np.abs(dphi) ** t / mod
    if not np.all(np.isfinite(weight)):
        raise SingularPointError("kernel is not finite on the grid; choose s > 1")
    return mod, weight


def build_matrix(
    params: SnowflakeParams,
    grid: DiscretizationGrid,
    binning: str = "nearest",
    clamp_warn_fraction: float = 1e-3,
) -> TransferMatrix:
    """Assemble the N x N matrix P_N.

    Every angular sample of row n sends its weight ``w / M`` to the column
    chosen by ``binning``.  Moduli below r_1 go to column 1, above R to
    column N; a warning is issued if more than ``clamp_warn_fraction`` of
    the samples clamp at the top (R below the critical radius).
    """
    N, M = grid.N, grid.M
    r, theta = grid.r, grid.theta
    entries = np.zeros((N, N))
    low = high = 0
    rows_per_block = max(1, _BLOCK_SAMPLES // M)
    for start in range(0, N, rows_per_block):
        stop = min(N, start + rows_per_block)
        mod, weight = kernel_weights(params, r[start:stop], theta)
        pos = (mod - 1.0) * N / (grid.R - 1.0)
        low += int(np.count_nonzero(pos < 1))
        high += int(np.count_nonzero(pos > N))
        cols = grid.bin_index(mod, binning)
        nb = stop - start
        flat = (np.arange(nb)[:, None] * N + cols).ravel()
        # bincount accumulates in input order, so each row is summed over m in index order
        block = np.bincount(flat, weights=(weight / M).ravel(), minlength=nb * N)
        entries[start:stop] = block.reshape(nb, N)
    if high > clamp_warn_fraction * N * M:
        warnings.warn(
            f"{high} of {N * M} kernel samples exceed R = {grid.R}; "
            "R is probably below the critical radius",
            RuntimeWarning,
            stacklevel=2,
        )
    return TransferMatrix(params, grid, entries, binning, low, high)


def dominant_eigen(m, tol: float = 1e-10, max_iter: int = 100_000) -> EigenPair:
    """Power iteration from the all-ones vector, normalised by the max entry.

    ``m`` is a :class:`TransferMatrix` or a square nonnegative array.  The
    residual is ``||A v - lam v||_inf / lam`` with ``||v||_inf = 1``.
    """
    A = m.entries if isinstance(m, TransferMatrix) else np.asarray(m, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("matrix must be square")
    if np.any(A < 0):
        raise ValueError("power iteration requires a nonnegative matrix")
    if not np.any(A.sum(axis=1) > 0):
        raise ValueError("matrix has no positive row sum")
    v = np.ones(A.shape[0])
    Av = A @ v
    residual = math.inf
    lam = 0.0
    for it in range(1, max_iter + 1):
        lam = float(Av.max())
        if lam <= 0:
            raise ConvergenceError("iterate collapsed to zero (nilpotent part)", last_value=0.0)
        v = Av / lam
        Av = A @ v
        lam_new = float(Av.max())
        if lam_new <= 0:
            raise ConvergenceError("iterate collapsed to zero (nilpotent part)", last_value=0.0)
        residual = float(np.max(np.abs(Av - lam_new * v))) / lam_new
        if residual <= tol:
            return EigenPair(lam_new, v, residual, it)
    raise ConvergenceError(
        f"power iteration did not converge in {max_iter} steps (residual {residual:.3e})",
        last_value=lam,
        last_error=residual,
    )


def bound_from_lambda(lam: float, k: int) -> float:
    """log(lam) / log(k), the eigenvalue lower bound for beta(t)."""
    if not lam > 0:
        raise ValueError("eigenvalue must be positive")
    if k < 2:
        raise ValueError("k must be >= 2")
    return math.log(lam) / math.log(k)


def operator_integrand(params: SnowflakeParams, nu: Callable, r: float) -> Callable[[np.ndarray], np.ndarray]:
    """theta -> nu(|phi|) |phi'|^t / |phi| at w = r^(1/k) e^(i theta)."""
    rk = r ** (1.0 / params.k)
    t = params.t

    def f(theta):
        z = rk * np.exp(1j * theta)
        phi = slit_map(z, params.slit)
        mod = np.abs(phi)
        return nu(mod) * np.abs(slit_map_derivative(z, params.slit)) ** t / mod

    return f


def apply_operator(
    params: SnowflakeParams,
    nu: Callable,
    r: float,
    quad: Optional[QuadratureScheme] = None,
) -> Tuple[float, float]:
    """P nu(r) by the periodic trapezoid rule with node doubling.

    Returns (value, estimated error); the estimate is the last difference
    between successive doublings, already scaled by the radial prefactor.
    """
    quad = quad or QuadratureScheme()
    if r < 1:
        raise ValueError("P nu is defined for r >= 1")
    pref = r ** (1.0 - (params.k - 1) * params.t / params.k)
    try:
        mean, diff, _ = adaptive_periodic_mean(operator_integrand(params, nu, r), quad)
    except ConvergenceError as exc:
        raise ConvergenceError(f"P nu({r}): {exc}", exc.last_value, exc.last_error) from None
    return pref * mean, pref * diff


def write_metadata_lines(fh, metadata: Optional[dict]) -> None:
    """Leading '# key: value' lines of a CSV file."""
    for key, val in (metadata or {}).items():
        fh.write(f"# {key}: {val}\n")


def save_eigenpair(
    eig: EigenPair,
    matrix: TransferMatrix,
    csv_path,
    json_path=None,
    extra: Optional[dict] = None,
    metadata: Optional[dict] = None,
):
    """Write the eigenvector as CSV (index, r, value) and metadata as JSON."""
    grid, p = matrix.grid, matrix.params
    with open(csv_path, "w", newline="") as fh:
        write_metadata_lines(fh, metadata)
        w = csv.writer(fh)
        w.writerow(["n", "r", "v"])
        for n, (rn, vn) in enumerate(zip(grid.r, eig.vector), start=1):
            w.writerow([n, repr(float(rn)), repr(float(vn))])
    if json_path is not None:
        meta = {
            "t": p.t,
            "k": p.k,
            "l": p.slit.l,
            "s": p.slit.s,
            "N": grid.N,
            "M": grid.M,
            "R": grid.R,
            "binning": matrix.binning,
            "lambda": eig.lam,
            "log_k_lambda": eig.log_k(p.k),
            "residual": eig.residual,
            "iterations": eig.iterations,
            "clamped_low": matrix.clamped_low,
            "clamped_high": matrix.clamped_high,
        }
        if extra:
            meta.update(extra)
        Path(json_path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_eigenvector(csv_path) -> Tuple[np.ndarray, np.ndarray]:
    """Read back (r, v) written by :func:`save_eigenpair`."""
    with open(csv_path, newline="") as fh:
        rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    return np.array([float(x["r"]) for x in rows]), np.array([float(x["v"]) for x in rows])
