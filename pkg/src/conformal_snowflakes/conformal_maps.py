"""Straight-slit building block of the exterior disc.

The block is

    phi(z) = mu2( sqrt(mu1(z s)^2 + c) / sqrt(1 + c) ),   c = l^2 / (4 l + 4)

with ``mu1(z) = (z - 1)/(z + 1)`` sending the exterior disc onto the right
half plane and ``mu2`` its inverse.  ``phi`` maps the exterior of the unit
disc onto the exterior minus the radial slit [1, 1 + l], fixes infinity and
has ``phi'(inf) = (1 + c) s > 0``.  The parameter ``s >= 1`` pulls the two
square-root singularities (the preimages of the slit base) inside the unit
circle.

All functions accept Python complex scalars or numpy arrays and return the
same kind.  Infinity is the explicit value :data:`INFINITY`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import (
    BracketError,
    BranchError,
    DegenerateBlockError,
    PoleError,
    SingularPointError,
)

INFINITY = complex(math.inf, 0.0)


def is_infinite(z):
    """Elementwise test for the point at infinity."""
    z = np.asarray(z, dtype=complex)
    return np.isinf(z.real) | np.isinf(z.imag)


def _as_complex(z):
    arr = np.asarray(z, dtype=complex)
    return arr, arr.ndim == 0


def _ret(arr, scalar):
    return complex(arr) if scalar else arr


@dataclass(frozen=True)
class SlitParams:
    """Geometry of the slit block.

    ``printed_k`` switches on the typeset variant of the formula in which the
    constant under the square root is ``l^2/(4k+4)`` while the normaliser
    keeps ``l^2/(4l+4)``.  It exists only for comparison runs; with it set
    the block no longer fixes infinity.
    """

    l: float
    s: float = 1.0
    printed_k: Optional[int] = None

    def __post_init__(self):
        if not (self.l >= 0 and math.isfinite(self.l)):
            raise ValueError(f"slit length must be finite and >= 0, got {self.l}")
        if not self.s >= 1:
            raise ValueError(f"safety scaling s must be >= 1, got {self.s}")

    @property
    def c(self) -> float:
        return self.l * self.l / (4 * self.l + 4)

    @property
    def c_inner(self) -> float:
        """Constant added under the square root."""
        if self.printed_k is None:
            return self.c
        return self.l * self.l / (4 * self.printed_k + 4)

    @property
    def z1(self) -> complex:
        return singular_points(self.l)[0]

    @property
    def z2(self) -> complex:
        return singular_points(self.l)[1]

    @property
    def x(self) -> float:
        return self.z1.real

    @property
    def y(self) -> float:
        # z1 = x + i y in the notation of the t=1 analysis, so y < 0 here
        return self.z1.imag

    @property
    def capacity(self) -> float:
        """phi'(inf)."""
        return (1 + self.c) * self.s

    @property
    def is_identity(self) -> bool:
        return self.l == 0 and self.s == 1 and self.printed_k is None


@dataclass(frozen=True)
class SnowflakeParams:
    """One snowflake experiment: slit block, branching number k, exponent t."""

    slit: SlitParams
    k: int
    t: float

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 2:
            raise ValueError(f"branching number k must be an integer >= 2, got {self.k}")

    @classmethod
    def make(cls, t: float, k: int, l: float, s: float = 1.0) -> "SnowflakeParams":
        return cls(SlitParams(l, s), int(k), float(t))


def mobius_to_halfplane(z):
    """``(z - 1)/(z + 1)``; exterior disc onto the right half plane."""
    arr, scalar = _as_complex(z)
    inf = is_infinite(arr)
    if np.any((arr == -1) & ~inf):
        raise PoleError("mobius_to_halfplane has a pole at z = -1")
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(inf, 1.0 + 0j, (arr - 1) / (arr + 1))
    return _ret(out, scalar)


def mobius_to_disc(w):
    """``(1 + w)/(1 - w)``, the inverse of :func:`mobius_to_halfplane`."""
    arr, scalar = _as_complex(w)
    inf = is_infinite(arr)
    if np.any((arr == 1) & ~inf):
        raise PoleError("mobius_to_disc has a pole at w = 1")
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(inf, -1.0 + 0j, (1 + arr) / (1 - arr))
    return _ret(out, scalar)


def _root_pieces(zs, p: SlitParams):
    """u = mu1(zs) and q = sqrt(u^2 + c) on the branch with Re q >= 0.

    On the open right half plane sign(Im q) = sign(Im u).  Where u^2 + c
    has negative real part (the boundary limit lands on the cut) the
    principal root's sign is decided by rounding, so that rule picks it.
    """
    with np.errstate(invalid="ignore", divide="ignore"):
        u = (zs - 1) / (zs + 1)
    return u, _continued_root(u, p.c_inner)


def _continued_root(u, c):
    """sqrt(u^2 + c) continued from the right half plane of u."""
    with np.errstate(invalid="ignore"):
        rad = u * u + c
        q = np.sqrt(rad)
    return np.where((rad.real < 0) & (q.imag * u.imag < 0), -q, q)


def slit_map(z, p: SlitParams):
    """Evaluate the slit block phi at ``z`` (``|z| >= 1``)."""
    arr, scalar = _as_complex(z)
    inf = is_infinite(arr)
    zs = np.where(inf, 0j, arr) * p.s
    minus_one = zs == -1
    u, q = _root_pieces(np.where(minus_one, 0j, zs), p)
    v = q / math.sqrt(1 + p.c)
    with np.errstate(invalid="ignore", divide="ignore"):
        w = (1 + v) / (1 - v)
    # mu1 has its pole at zs = -1 where phi tends to mu2(inf) = -1
    w = np.where(minus_one, -1.0 + 0j, w)
    w = np.where(inf, INFINITY, w)
    return _ret(w, scalar)


def slit_map_derivative(z, p: SlitParams):
    """phi'(z) by the chain rule; ``phi'(inf) = (1 + c) s``."""
    arr, scalar = _as_complex(z)
    inf = is_infinite(arr)
    zs = np.where(inf, 2.0 + 0j, arr) * p.s
    u, q = _root_pieces(zs, p)
    if p.c_inner == 0:
        # q = u identically, so u/q = 1 even at z s = 1
        u_over_q = np.ones_like(u)
    else:
        if np.any((q == 0) & ~inf):
            raise SingularPointError(
                "phi' blows up at a preimage of the slit base; use s > 1 to move it inside the disc"
            )
        with np.errstate(invalid="ignore", divide="ignore"):
            u_over_q = u / q
    sq = math.sqrt(1 + p.c)
    v = q / sq
    with np.errstate(invalid="ignore", divide="ignore"):
        du = 2 * p.s / (zs + 1) ** 2
        dv = u_over_q * du / sq
        d = 2 / (1 - v) ** 2 * dv
    d = np.where(inf, p.capacity + 0j, d)
    return _ret(d, scalar)


def log_derivative_ratio(z, p: SlitParams):
    """Closed form of ``|phi'(z)/phi(z)|`` for s = 1.

    Equals ``|z - 1| / (|z| sqrt(|z - z1| |z - z2|))``.  For the identity
    block (l = 0) this is ``1/|z|``.
    """
    if p.s != 1:
        raise ValueError("the closed form of |phi'/phi| holds only for s = 1")
    arr = np.asarray(z, dtype=complex)
    if p.l == 0:
        out = 1 / np.abs(arr)
    else:
        z1, z2 = singular_points(p.l)
        den = np.abs(arr) * np.sqrt(np.abs(arr - z1) * np.abs(arr - z2))
        if np.any(den == 0):
            raise SingularPointError("|phi'/phi| is infinite at z1 and z2")
        out = np.abs(arr - 1) / den
    return float(out) if out.ndim == 0 else out


def singular_points(l: float):
    """Preimages (z1, z2) of the slit base for s = 1, with Im z1 < 0.

    They solve ``mu1(z)^2 = -c`` and lie on the unit circle.
    """
    if l <= 0:
        raise DegenerateBlockError("l = 0: both singular points collapse to z = 1")
    c = l * l / (4 * l + 4)
    x = (1 - c) / (1 + c)
    y = 2 * math.sqrt(c) / (1 + c)
    return complex(x, -y), complex(x, y)


def inverse_map(w, p: SlitParams):
    """psi = phi^{-1}: ``(1/s) mu2( sqrt((1 + c) mu1(w)^2 - c) )``.

    Raises :class:`BranchError` for points on the slit itself, where the two
    sides of the slit have different preimages.
    """
    arr, scalar = _as_complex(w)
    inf = is_infinite(arr)
    ww = np.where(inf, 2.0 + 0j, arr)
    with np.errstate(invalid="ignore", divide="ignore"):
        v = (ww - 1) / (ww + 1)
        rad = (1 + p.c) * v * v - p.c_inner
    on_cut = (rad.imag == 0) & (rad.real < 0) & ~inf
    if np.any(on_cut):
        raise BranchError("inverse_map is ambiguous on the slit")
    u = np.sqrt(rad)
    with np.errstate(invalid="ignore", divide="ignore"):
        z = (1 + u) / (1 - u) / p.s
    z = np.where(inf, INFINITY, z)
    return _ret(z, scalar)


def _radius_residual(x: float, k: int, p: SlitParams) -> float:
    # sign of |psi(x)|^k - x, in logs to avoid overflow for large k
    return k * math.log(abs(inverse_map(complex(x), p))) - math.log(x)


def critical_radius(k: int, p: SlitParams, tol: float = 1e-9) -> float:
    """Radius R > 1 with ``psi(R)^k = R`` (k-th power, not iterate).

    ``psi`` is real on the positive axis beyond the slit tip 1 + l and the
    residual ``|psi(x)|^k - x`` changes sign once there.  Bisection stops
    when the bracket is shorter than ``tol``; the upper end is returned, so
    the result never underestimates the root.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if p.l <= 0:
        raise DegenerateBlockError("l = 0: the identity block has no critical radius above 1")
    # at the slit tip psi = 1/s, so the residual is -k log s - log(1 + l) < 0
    lo = 1.0 + p.l
    hi = 2.0 * lo
    while _radius_residual(hi, k, p) <= 0:
        lo, hi = hi, 2.0 * hi
        if hi > 1e300:
            raise BracketError("no sign change of psi(x)^k - x found")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if _radius_residual(mid, k, p) > 0:
            hi = mid
        else:
            lo = mid
    return hi


def safe_radius(R: float, step: float = 0.1) -> float:
    """Round ``R`` up to the next multiple of ``step`` (76.1568 -> 76.2)."""
    n = math.ceil(R / step - 1e-12)
    return round(n * step, 12)
