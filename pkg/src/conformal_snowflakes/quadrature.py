"""Periodic trapezoid quadrature and the Euler-Maclaurin error term."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Callable, List, Tuple

import numpy as np

from .errors import ConvergenceError

TWO_PI = 2.0 * math.pi


@lru_cache(maxsize=None)
def bernoulli_numbers(n: int) -> Tuple[Fraction, ...]:
    """Exact B_0..B_n with the convention B_1 = -1/2."""
    B: List[Fraction] = [Fraction(0)] * (n + 1)
    B[0] = Fraction(1)
    for m in range(1, n + 1):
        B[m] = -sum(math.comb(m + 1, j) * B[j] for j in range(m)) / (m + 1)
    return tuple(B)


def euler_gamma(j: int) -> Fraction:
    """gamma_j = B_j / j!; gamma_2 = 1/12, gamma_4 = -1/720, gamma_6 = 1/30240."""
    return bernoulli_numbers(j)[j] / math.factorial(j)


@dataclass(frozen=True)
class QuadratureScheme:
    """Uniform angular grid on one period.

    ``nodes`` sets the step ``epsilon = 2 pi / nodes``.  ``order`` is the
    Euler order n used by the error bound.  ``tol`` (relative) and ``max_doublings``
    drive the adaptive doubling in :func:`adaptive_periodic_mean`.
    """

    nodes: int = 512
    order: int = 3
    tol: float = 1e-7
    max_doublings: int = 16

    def __post_init__(self):
        if self.nodes < 2:
            raise ValueError("need at least two quadrature nodes")
        if self.order < 1:
            raise ValueError("Euler order must be >= 1")

    @property
    def epsilon(self) -> float:
        return TWO_PI / self.nodes

    @property
    def gamma(self) -> List[float]:
        """[gamma_2, gamma_4, ..., gamma_{2n}] as floats."""
        return [float(euler_gamma(2 * j)) for j in range(1, self.order + 1)]

    def angles(self, centered: bool = False) -> np.ndarray:
        """Node angles; ``centered`` places them on [-pi, pi)."""
        th = TWO_PI * np.arange(self.nodes) / self.nodes
        if centered:
            th = th - math.pi
        return th

    @classmethod
    def from_epsilon(cls, epsilon: float, order: int = 3) -> "QuadratureScheme":
        nodes = int(round(TWO_PI / epsilon))
        if not math.isclose(nodes * epsilon, TWO_PI, rel_tol=1e-12):
            raise ValueError(f"epsilon = {epsilon} does not divide 2 pi")
        return cls(nodes=nodes, order=order)


def euler_error_bound(q: QuadratureScheme, max_f2n: float) -> float:
    """Certified trapezoid error for a periodic integrand, mean-normalised.

    ``|gamma_2n| * max|f^(2n)| * epsilon^(2n)``.  The boundary corrections
    vanish for periodic f; the factor 2 pi of the plain integral cancels
    against the d theta / 2 pi normalisation.
    """
    if max_f2n < 0:
        raise ValueError("max_f2n is a bound on an absolute value")
    n = q.order
    return abs(float(euler_gamma(2 * n))) * max_f2n * q.epsilon ** (2 * n)


def periodic_mean(f: Callable[[np.ndarray], np.ndarray], nodes: int, centered: bool = False) -> float:
    """Trapezoid rule for ``(1/2pi) int f`` over one period (pairwise sum)."""
    th = TWO_PI * np.arange(nodes) / nodes
    if centered:
        th = th - math.pi
    vals = np.asarray(f(th), dtype=float)
    return float(np.sum(vals)) / nodes


def adaptive_periodic_mean(f: Callable[[np.ndarray], np.ndarray], q: QuadratureScheme) -> Tuple[float, float, int]:
    """Double the nodes until successive means differ by less than ``q.tol`` relative to the mean.

    The relative test makes the node count invariant under scaling f by a
    positive constant.

    Returns (value, last difference, nodes used).  Each doubling reuses the
    previous sum and only evaluates the new midpoints.
    """
    n = q.nodes
    total = float(np.sum(np.asarray(f(TWO_PI * np.arange(n) / n), dtype=float)))
    prev = total / n
    diff = math.inf
    for _ in range(q.max_doublings):
        mids = TWO_PI * (np.arange(n) + 0.5) / n
        total += float(np.sum(np.asarray(f(mids), dtype=float)))
        n *= 2
        value = total / n
        diff = abs(value - prev)
        if diff <= q.tol * abs(value):
            return value, diff, n
        prev = value
    raise ConvergenceError(
        f"trapezoid rule did not reach tol={q.tol} after {q.max_doublings} doublings "
        f"({n} nodes, last difference {diff:.3e})",
        last_value=prev,
        last_error=diff,
    )
