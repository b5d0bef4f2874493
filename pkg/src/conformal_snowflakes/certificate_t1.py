"""Rigorous lower bound for beta(1) of the (k=13, l=73, s=1.002) snowflake.

The chain is:

1. ``I(r) = mean_theta nu(|phi|) |phi'/phi|`` at ``w = r^(1/13) e^(i theta)``
   by the trapezoid rule on 10^4 nodes; for a periodic integrand the
   Euler-Maclaurin remainder with n = 3 bounds the error by
   ``|gamma_6| * max|f^(6)| * eps^6`` with the certified sixth-derivative
   bound 1.65e21.
2. ``I'(r) <= 0.0131 r^(1/13 - 1)``: the radial derivative of
   ``|phi'/phi|`` is positive only on ``|theta| <= 1.48`` and at most 0.36.
3. On each ``[r1, r2]``, with nu nonincreasing,
   ``P nu / nu >= r1^(1/k) (min(I1, I2) - err - lip (r2 - r1) r1^(1/k - 1)) / nu(r1)``.

The derivative tables and the Lipschitz constants are certified inputs
carried as data.  The functions below only spot-check them by sampling.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from . import __version__
from .conformal_maps import SlitParams, SnowflakeParams, critical_radius, singular_points, slit_map, slit_map_derivative
from .errors import NoCertifiedConstantsError
from .quadrature import QuadratureScheme, euler_error_bound
from .spectrum_bounds import TestFunction, nu_t1

CERT_T, CERT_K, CERT_L, CERT_S, CERT_R = 1.0, 13, 73.0, 1.002, 76.2
# headline threshold for the verdict, and the sharper published value
BETA_THRESHOLD = 0.23
BETA_PUBLISHED = 0.2308
ROUNDING_ALLOWANCE = 1e-10


@dataclass(frozen=True)
class DerivativeBounds:
    phi_bounds: Tuple[float, ...]
    nu_bounds: Tuple[float, ...]
    f6_bound: float
    s: float
    l: float
    provenance: str = ""


_TABLES = {
    (1.002, 73.0): DerivativeBounds(
        phi_bounds=(55.0, 11800.0, 8.69e6, 1.08e10, 1.90e13, 4.25e16, 1.17e20),
        nu_bounds=(0.28, 0.45, 1.12, 3.69, 15.3, 76.2),
        f6_bound=1.65e21,
        s=1.002,
        l=73.0,
        provenance=(
            "published certified constants: |phi^(j)| on |z|=1 from power series at the singular "
            "points with geometric tail bounds (s=1.002, l=73); |nu^(j)| on [1, 76.2] for the "
            "published rational nu; sixth theta-derivative of nu(|phi|)|phi'|/|phi| by the "
            "triangle inequality"
        ),
    )
}

_LIPSCHITZ = {13: (1.48, 0.36, 0.0131)}


def derivative_bounds_table(s: float, l: float) -> DerivativeBounds:
    """Certified derivative bounds; only (s, l) = (1.002, 73) is available."""
    if not s > 1:
        raise ValueError("derivative bounds need s > 1 (they scale like (s-1)^(1/2-j))")
    try:
        return _TABLES[(round(float(s), 12), round(float(l), 12))]
    except KeyError:
        raise NoCertifiedConstantsError(f"no certified constants for s={s}, l={l}") from None


def radial_lipschitz(k: int) -> Tuple[float, float, float]:
    """(arc half-width, max positive radial derivative, Lipschitz coefficient)."""
    try:
        return _LIPSCHITZ[int(k)]
    except KeyError:
        raise NoCertifiedConstantsError(f"no certified Lipschitz constants for k={k}") from None


def lipschitz_from_arc(arc_halfwidth: float, max_positive_derivative: float, k: int) -> float:
    """2 * arc * max / (2 pi k): the coefficient implied by the arc analysis."""
    return 2 * arc_halfwidth * max_positive_derivative / (2 * math.pi * k)


def radial_quadratic_constant(l: float) -> float:
    """Constant term y^2/(x - 1) of the cos(theta) quadratic (-592/5625 for l = 73)."""
    z1, _ = singular_points(l)
    return z1.imag**2 / (z1.real - 1)


def radial_quadratic(cos_theta, r: float, l: float):
    """cos^2 + cos (r + 1/r)/2 + y^2/(x-1); has the sign of the radial derivative for r > 1."""
    c = np.asarray(cos_theta, dtype=float)
    return c * c + c * (r + 1 / r) / 2 + radial_quadratic_constant(l)


def radial_quadratic_roots(r: float, l: float) -> Tuple[float, float]:
    b = (r + 1 / r) / 2
    c0 = radial_quadratic_constant(l)
    disc = math.sqrt(b * b - 4 * c0)
    return (-b - disc) / 2, (-b + disc) / 2


def positive_arc_halfwidth(r: float, l: float) -> float:
    """theta beyond which the radial derivative of |z-1|/sqrt(|z-z1||z-z2|) is negative."""
    _, root = radial_quadratic_roots(r, l)
    return math.acos(root)


def reduced_ratio(z, l: float):
    """|z - 1| / sqrt(|z - z1| |z - z2|) = |z| |phi'/phi| for s = 1."""
    z = np.asarray(z, dtype=complex)
    if l == 0:
        return np.ones_like(z.real)
    z1, z2 = singular_points(l)
    return np.abs(z - 1) / np.sqrt(np.abs(z - z1) * np.abs(z - z2))


def radial_derivative(r, theta, l: float, reduced: bool = True):
    """d/dr of the reduced ratio (or of |phi'/phi| itself when ``reduced`` is False) at r e^(i theta)."""
    r = np.asarray(r, dtype=float)
    theta = np.asarray(theta, dtype=float)
    z = r * np.exp(1j * theta)
    if l == 0:
        d = np.zeros_like(z.real)
        g = np.ones_like(z.real)
    else:
        z1, z2 = singular_points(l)
        x, y = z1.real, z1.imag
        c, s = np.cos(theta), np.sin(theta)
        g = reduced_ratio(z, l)
        d = g * (
            (r - c) / np.abs(z - 1) ** 2
            - 0.5 * (r - x * c - y * s) / np.abs(z - z1) ** 2
            - 0.5 * (r - x * c + y * s) / np.abs(z - z2) ** 2
        )
    if reduced:
        return d
    return d / r - g / r**2


def max_positive_radial_derivative(
    l: float, r_max: float = 1.4, theta_max: float = math.pi, n_r: int = 200, n_theta: int = 2000, reduced: bool = True
) -> Tuple[float, float, float]:
    """Sampled max of the positive part of the radial derivative on 1 < r <= r_max, |theta| <= theta_max.

    Returns (max, r, theta) at the maximiser; max is 0 when the derivative
    is nowhere positive.
    """
    rr = np.linspace(1.0, r_max, n_r + 1)[1:]
    th = np.linspace(-theta_max, theta_max, n_theta)
    R_, T_ = np.meshgrid(rr, th, indexing="ij")
    d = radial_derivative(R_, T_, l, reduced=reduced)
    i = np.unravel_index(np.argmax(d), d.shape)
    best = float(d[i])
    if best <= 0:
        return 0.0, float("nan"), float("nan")
    return best, float(R_[i]), float(T_[i])


def phi_derivatives(z, p: SlitParams, order: int, n_fft: int = 64, radius: Optional[float] = None):
    """Derivatives 1..order of z -> phi(z) (scaling included) by a Cauchy integral.

    The circle radius defaults to half of ``1 - 1/s``, which keeps it inside
    the analytic region ``|z s| > 1`` for any ``|z| >= 1``.
    """
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    if radius is None:
        if not p.s > 1:
            raise ValueError("default Cauchy radius needs s > 1")
        radius = 0.5 * (1 - 1 / p.s)
    w = np.exp(2j * math.pi * np.arange(n_fft) / n_fft)
    out = np.empty((order, z.size), dtype=complex)
    chunk = max(1, 2_000_000 // n_fft)
    for a in range(0, z.size, chunk):
        zc = z[a : a + chunk]
        vals = slit_map(zc[:, None] + radius * w[None, :], p)
        coef = np.fft.fft(vals, axis=1) / n_fft
        for j in range(1, order + 1):
            out[j - 1, a : a + chunk] = coef[:, j] * math.factorial(j) / radius**j
    return out


def sample_block_derivative_max(p: SlitParams, order: int, n_theta: int = 2**16, n_fft: int = 64) -> List[float]:
    """Sampled max over |w| = s of |phi_0^(j)(w)|, j = 1..order, for the unscaled block phi_0.

    The certified table bounds these derivatives; the chain factor s^j of
    the scaled map is not part of it.
    """
    if not p.s > 1:
        raise ValueError("the unscaled derivatives are finite on |w| = s only for s > 1")
    base = SlitParams(p.l, 1.0)
    w = p.s * np.exp(2j * math.pi * np.arange(n_theta) / n_theta)
    d = phi_derivatives(w, base, order, n_fft=n_fft, radius=0.5 * (p.s - 1))
    return [float(v) for v in np.abs(d).max(axis=1)]


def sample_f6_max(p: SlitParams, nu, k: int, radii, n: int = 2**16, floor: float = 1e-14) -> List[float]:
    """Spectral estimate of max_theta |f^(6)| for f = nu(|phi|)|phi'|/|phi| at w = r^(1/k) e^(i theta).

    Fourier coefficients are cut at the first frequency where they drop
    below ``floor`` times the largest one; multiplying round-off by
    frequency^6 would otherwise swamp the estimate.
    """
    th = 2 * math.pi * np.arange(n) / n
    freq = np.fft.fftfreq(n, 1.0 / n)
    absf = np.abs(freq)
    order = np.argsort(absf, kind="stable")
    out = []
    for r in radii:
        z = float(r) ** (1.0 / k) * np.exp(1j * th)
        phi = slit_map(z, p)
        mod = np.abs(phi)
        c = np.fft.fft(nu(mod) * np.abs(slit_map_derivative(z, p)) / mod)
        a = np.abs(c)
        small = a[order] < floor * a.max()
        cut = absf[order][np.argmax(small)] if small.any() else np.inf
        d6 = np.real(np.fft.ifft(np.where(absf < cut, (1j * freq) ** 6 * c, 0)))
        out.append(float(np.abs(d6).max()))
    return out


def compute_I(r: float, q: QuadratureScheme, nu, p: SlitParams, k: int) -> float:
    """Trapezoid mean of nu(|phi|) |phi'/phi| over the centred grid on [-pi, pi)."""
    z = r ** (1.0 / k) * np.exp(1j * q.angles(centered=True))
    phi = slit_map(z, p)
    mod = np.abs(phi)
    vals = nu(mod) * np.abs(slit_map_derivative(z, p)) / mod
    return float(np.sum(vals)) / q.nodes


def interval_lower_bound(
    I1: float, I2: float, r1: float, r2: float, nu, k: int, quad_err: float, lip: float
) -> float:
    """Lower bound of P nu / nu on [r1, r2] for t = 1.

    Needs nu nonincreasing, so that nu(r) <= nu(r1) on the interval, and
    the one-sided bound ``I' <= lip * r^(1/k - 1)`` evaluated at r1 (its
    largest value on the interval).  A nonpositive result certifies nothing.
    """
    if not 1 <= r1 <= r2:
        raise ValueError("need 1 <= r1 <= r2")
    e = 1.0 / k
    inner = min(I1, I2) - quad_err - lip * (r2 - r1) * r1 ** (e - 1)
    return r1**e * inner / float(nu(r1))


@dataclass
class CertifyConfig:
    t: float = CERT_T
    k: int = CERT_K
    l: float = CERT_L
    s: float = CERT_S
    R: float = CERT_R
    n_points: int = 3000
    nodes: int = 10_000
    euler_order: int = 3
    threshold: float = BETA_THRESHOLD
    jobs: int = 1
    nu: Optional[TestFunction] = None
    # sample the certified constants; results are reported, never used in the bound
    spot_checks: bool = True


@dataclass
class CertificateT1:
    params: SnowflakeParams
    R: float
    quad_error: float
    lipschitz_coeff: float
    n_points: int
    nodes: int
    radii: List[float]
    I_values: List[float]
    interval_minima: List[float]
    min_bound: float
    beta_bound: float
    verdict: str
    failures: List[Tuple[float, float, str]] = field(default_factory=list)
    constants: dict = field(default_factory=dict)
    constants_provenance: str = ""
    checks: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.verdict == "PASS"

    def to_dict(self) -> dict:
        p = self.params
        return {
            "tool_version": __version__,
            "params": {"t": p.t, "k": p.k, "l": p.slit.l, "s": p.slit.s, "R": self.R},
            "n_points": self.n_points,
            "quadrature_nodes": self.nodes,
            "quad_error": self.quad_error,
            "lipschitz_coeff": self.lipschitz_coeff,
            "constants": self.constants,
            "constants_provenance": self.constants_provenance,
            "checks": self.checks,
            "min_bound": self.min_bound,
            "beta_bound": self.beta_bound,
            "threshold": BETA_THRESHOLD,
            "verdict": self.verdict,
            "failures": [list(f) for f in self.failures],
            "radii": self.radii,
            "I_values": self.I_values,
            "interval_minima": self.interval_minima,
        }

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    def report(self) -> str:
        p = self.params
        i = int(np.argmin(self.interval_minima)) if self.interval_minima else 0
        lines = [
            f"beta(1) certificate  t={p.t} k={p.k} l={p.slit.l} s={p.slit.s} R={self.R}",
            f"  radii: {self.n_points} equispaced on [1, {self.R}], quadrature nodes: {self.nodes}",
            f"  quadrature error budget: {self.quad_error:.6g}",
            f"  Lipschitz coefficient:   {self.lipschitz_coeff:.6g}",
        ]
        for name, val in self.checks.items():
            lines.append(f"  check {name}: {val}")
        if self.interval_minima:
            lines.append(
                f"  min P nu/nu >= {self.min_bound:.6f} on [{self.radii[i]:.6f}, {self.radii[i + 1]:.6f}]"
            )
        lines.append(f"  beta(1) >= {self.beta_bound:.6f}   (threshold {BETA_THRESHOLD})")
        for r1, r2, why in self.failures[:10]:
            if math.isnan(r1):
                lines.append(f"  FAILED: {why}")
            else:
                lines.append(f"  FAILED interval [{r1:.6f}, {r2:.6f}]: {why}")
        lines.append(f"  verdict: {self.verdict}")
        return "\n".join(lines)


def _round_up(x: float, digits: int = 2) -> float:
    if x <= 0:
        return 0.0
    e = math.floor(math.log10(x)) - digits + 1
    return math.ceil(x / 10.0**e - 1e-9) * 10.0**e


def _I_chunk(args):
    radii, nodes, nu, p, k = args
    q = QuadratureScheme(nodes=nodes)
    return [compute_I(r, q, nu, p, k) for r in radii]


def spot_check_constants(p: SlitParams, nu, k: int, table: DerivativeBounds, dmax: float) -> dict:
    """Compare the certified constants against sampled values (informational)."""
    phi_max = sample_block_derivative_max(p, len(table.phi_bounds))
    f6 = max(sample_f6_max(p, nu, k, [1.0, 1.0 + 1e-3, 1.01, 2.0, CERT_R]))
    rad, _, _ = max_positive_radial_derivative(p.l)
    sup = 1.0 / abs(1 - singular_points(p.l)[0])
    return {
        "sampled_phi_derivative_max": phi_max,
        "sampled_over_table": [m / b for m, b in zip(phi_max, table.phi_bounds)],
        "sampled_f6_max": f6,
        "f6_within_bound": bool(f6 <= table.f6_bound),
        "sampled_radial_derivative_max": rad,
        "radial_derivative_sup_near_one": sup,
        "radial_derivative_within_published": bool(max(rad, sup) <= dmax),
    }


def certify(config: Optional[CertifyConfig] = None) -> CertificateT1:
    """Run the full t = 1 certificate and return its record (verdict PASS/FAILED)."""
    cfg = config or CertifyConfig()
    if (cfg.t, cfg.k, cfg.l, cfg.s) != (CERT_T, CERT_K, CERT_L, CERT_S):
        raise NoCertifiedConstantsError(
            f"certificate is available only for t={CERT_T}, k={CERT_K}, l={CERT_L}, s={CERT_S}"
        )
    if cfg.n_points < 2:
        raise ValueError("need at least two radii")
    params = SnowflakeParams.make(cfg.t, cfg.k, cfg.l, cfg.s)
    slit = params.slit
    nu = cfg.nu or nu_t1(cfg.R)
    table = derivative_bounds_table(cfg.s, cfg.l)
    arc, dmax, lip = radial_lipschitz(cfg.k)
    q = QuadratureScheme(nodes=cfg.nodes, order=cfg.euler_order)
    raw_err = euler_error_bound(q, table.f6_bound)
    quad_err = _round_up(raw_err) + ROUNDING_ALLOWANCE

    failures: List[Tuple[float, float, str]] = []
    R_crit = critical_radius(cfg.k, slit)
    checks = {
        "critical_radius": R_crit,
        "R_covers_critical_radius": bool(cfg.R >= R_crit),
        "euler_error_raw": raw_err,
        "lipschitz_from_arc": lipschitz_from_arc(arc, dmax, cfg.k),
        "lipschitz_coeff_dominates": bool(lip >= lipschitz_from_arc(arc, dmax, cfg.k)),
        "nu_monotonicity": nu.monotonicity(),
    }
    if cfg.spot_checks:
        checks.update(spot_check_constants(slit, nu, cfg.k, table, dmax))
    if not checks["R_covers_critical_radius"]:
        failures.append((1.0, cfg.R, f"R below critical radius {R_crit}"))
    if checks["nu_monotonicity"] not in ("nonincreasing", "constant"):
        failures.append((1.0, cfg.R, "test function is not nonincreasing on [1, R]"))

    radii = np.linspace(1.0, cfg.R, cfg.n_points)
    if cfg.jobs > 1:
        parts = np.array_split(radii, cfg.jobs * 4)
        with ProcessPoolExecutor(max_workers=cfg.jobs) as ex:
            chunks = ex.map(_I_chunk, [(list(pt), cfg.nodes, nu, slit, cfg.k) for pt in parts])
            I = np.array([v for c in chunks for v in c])
    else:
        I = np.array(_I_chunk((radii, cfg.nodes, nu, slit, cfg.k)))

    minima = []
    for j in range(cfg.n_points - 1):
        b = interval_lower_bound(I[j], I[j + 1], radii[j], radii[j + 1], nu, cfg.k, quad_err, lip)
        minima.append(b)
        if not b > 0:
            failures.append((float(radii[j]), float(radii[j + 1]), f"nonpositive bound {b:.6g}"))
    min_bound = float(min(minima))
    beta = math.log(min_bound) / math.log(cfg.k) if min_bound > 0 else -math.inf
    if not beta > cfg.threshold:
        failures.append((float("nan"), float("nan"), f"beta bound {beta:.6f} does not exceed {cfg.threshold}"))
    constants = {
        "phi_derivative_bounds": list(table.phi_bounds),
        "nu_derivative_bounds": list(table.nu_bounds),
        "f6_bound": table.f6_bound,
        "euler_order": cfg.euler_order,
        "epsilon": q.epsilon,
        "gamma": q.gamma,
        "arc_halfwidth": arc,
        "max_positive_radial_derivative": dmax,
        "lipschitz_coeff": lip,
        "rounding_allowance": ROUNDING_ALLOWANCE,
        "test_function": nu.to_dict(),
    }
    provenance = (
        table.provenance
        + "; Lipschitz: radial derivative of |phi'/phi| positive only for |theta| <= 1.48, "
        "at most 0.36 there (subharmonicity on 1<r<1.4), giving 2*1.48*0.36/(2 pi 13) <= 0.0131"
    )
    return CertificateT1(
        params=params,
        R=cfg.R,
        quad_error=quad_err,
        lipschitz_coeff=lip,
        n_points=cfg.n_points,
        nodes=cfg.nodes,
        radii=radii.tolist(),
        I_values=I.tolist(),
        interval_minima=minima,
        min_bound=min_bound,
        beta_bound=beta,
        verdict="PASS" if not failures else "FAILED",
        failures=failures,
        constants=constants,
        constants_provenance=provenance,
        checks=checks,
    )
