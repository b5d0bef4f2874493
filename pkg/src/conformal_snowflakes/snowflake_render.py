"""Finite snowflake approximations f_n and their Green's lines as SVG.

The n-th approximation is defined recursively by
``f_n = f_{n-1} o K_{k^n} phi_{theta_n}`` with the Koebe transform
``(K_m phi)(z) = phi(z^m)^(1/m)`` and rotated blocks
``phi_theta(z) = e^(i theta) phi(z e^(-i theta))``.  Unrolled,

    w_n = z^(k^n),   w_{j-1} = phi_{theta_j}(w_j)^(1/k),   f_n(z) = phi_{theta_0}(w_0).

Every root is taken as ``w_{j-1} = w_j^(1/k) (phi_{theta_j}(w_j)/w_j)^(1/k)``
and the whole chain is carried in logarithms,

    L_{j-1} = (L_j + Log(phi_{theta_j}(w_j)/w_j)) / k,   L_n = k^n log z.

``phi(w)/w`` never meets the negative axis on ``|w| >= 1`` (its argument
stays below the angle of the slit-base preimage), so the principal Log is
the analytic continuation from infinity and f_n is single valued: a
different branch of ``log z`` shifts every L_j by a multiple of 2 pi i
that cancels in the last exponential.  The ratio is evaluated through
``zeta = 1/(w s)`` and never overflows, which is what allows z^(13^6).
"""

from __future__ import annotations

import csv
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple
from xml.sax.saxutils import escape, quoteattr

import numpy as np

from . import __version__
from .conformal_maps import SnowflakeParams, _continued_root

MAX_DEPTH = 6
MAX_POINTS = 2**20
# the first sweep samples every period of z^(k^n) this many times
_SAMPLES_PER_PERIOD = 4
_MIN_DTHETA = 1e-14


@dataclass(frozen=True)
class SnowflakeRealization:
    """Random angles theta_0..theta_n for one approximation f_n."""

    params: SnowflakeParams
    depth: int
    angles: Tuple[float, ...]
    seed: Optional[int] = None

    def __post_init__(self):
        if self.depth < 0:
            raise ValueError("depth must be >= 0")
        if len(self.angles) != self.depth + 1:
            raise ValueError(f"depth {self.depth} needs {self.depth + 1} angles, got {len(self.angles)}")
        if not all(0 <= a < 2 * math.pi for a in self.angles):
            raise ValueError("angles must lie in [0, 2 pi)")

    @classmethod
    def from_seed(cls, params: SnowflakeParams, depth: int, seed: int, max_depth: int = MAX_DEPTH):
        """Uniform angles from ``numpy.random.default_rng(seed)``.

        The draws are sequential, so a deeper realization with the same
        seed extends a shallower one.
        """
        if depth > max_depth:
            raise ValueError(
                f"depth {depth} exceeds {max_depth}; z^(k^n) is not resolved in double precision"
            )
        rng = np.random.default_rng(seed)
        angles = rng.uniform(0.0, 2 * math.pi, depth + 1)
        return cls(params, depth, tuple(float(a) for a in angles), seed)

    @classmethod
    def fixed(cls, params: SnowflakeParams, depth: int, angle: float = 0.0):
        return cls(params, depth, (float(angle),) * (depth + 1), None)


@dataclass
class RenderScene:
    """Polylines (complex arrays) with one text label each."""

    curves: List[np.ndarray] = field(default_factory=list)
    labels: List[str] = field(default_factory=list)
    closed: List[bool] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def add(self, curve: np.ndarray, label: str, closed: bool) -> None:
        curve = np.asarray(curve, dtype=complex)
        if curve.size < 2:
            raise ValueError("a polyline needs at least two points")
        self.curves.append(curve)
        self.labels.append(label)
        self.closed.append(closed)

    def bounding_box(self) -> Tuple[float, float, float, float]:
        if not self.curves:
            raise ValueError("empty scene")
        pts = np.concatenate(self.curves)
        return float(pts.real.min()), float(pts.imag.min()), float(pts.real.max()), float(pts.imag.max())


def _log_block_ratio(L: np.ndarray, theta: float, params: SnowflakeParams) -> np.ndarray:
    """Principal Log(phi_theta(w)/w) at w = exp(L), for |w| >= 1."""
    slit = params.slit
    c = slit.c
    with np.errstate(under="ignore"):
        zeta = np.exp(-L + 1j * theta) / slit.s
    u = (1 - zeta) / (1 + zeta)
    q = _continued_root(u, c)
    v = q / math.sqrt(1 + c)
    ratio = slit.s * (1 + c) * ((1 + v) * (1 + zeta)) ** 2 / 4
    return np.log(ratio)


def log_chain(real: SnowflakeRealization, log_z) -> List[np.ndarray]:
    """The levels [L_n, ..., L_0, log f_n] for the given values of log z."""
    k = real.params.k
    L = np.asarray(log_z, dtype=complex) * float(k) ** real.depth
    levels = [L]
    for j in range(real.depth, 0, -1):
        L = (L + _log_block_ratio(L, real.angles[j], real.params)) / k
        levels.append(L)
    levels.append(L + _log_block_ratio(L, real.angles[0], real.params))
    return levels


def eval_approximation(real: SnowflakeRealization, z):
    """f_n(z) for |z| >= 1 (scalar or array)."""
    arr = np.asarray(z, dtype=complex)
    if np.any(np.abs(arr) < 1):
        raise ValueError("f_n is defined on |z| >= 1")
    out = np.exp(log_chain(real, np.log(arr))[-1])
    return complex(out) if out.ndim == 0 else out


def eval_on_circle(real: SnowflakeRealization, r: float, theta) -> Tuple[np.ndarray, List[np.ndarray]]:
    """f_n(r e^(i theta)) and the chain levels, with log z = log r + i theta kept unwrapped."""
    th = np.asarray(theta, dtype=float)
    levels = log_chain(real, math.log(r) + 1j * th)
    return np.exp(levels[-1]), levels


def asymptotic_capacity(real: SnowflakeRealization) -> float:
    """lim f_n(z)/z = prod_j (phi'(inf))^(1/k^j)."""
    cap = real.params.slit.capacity
    k = real.params.k
    return float(np.prod([cap ** (1.0 / k**j) for j in range(real.depth + 1)]))


@dataclass
class TracedCurve:
    theta: np.ndarray
    points: np.ndarray
    complete: bool
    max_level_jump: float


def _bad_segments(pts: np.ndarray, levels: List[np.ndarray], tol: float, max_jump: float) -> np.ndarray:
    bad = np.abs(np.diff(pts)) >= tol
    # intermediate k-th roots must move by less than pi/k between neighbours
    for L in levels[1:-1]:
        bad |= np.abs(np.diff(L.imag)) >= max_jump
    return bad


def trace_curve(
    real: SnowflakeRealization,
    r: float,
    theta_start: float,
    theta_end: float,
    tol: float,
    max_points: int = MAX_POINTS,
) -> TracedCurve:
    """Image of the arc {r e^(i theta): theta_start <= theta <= theta_end} refined by chord bisection."""
    if r < 1:
        raise ValueError("curves are traced on |z| >= 1")
    if not tol > 0:
        raise ValueError("chord tolerance must be positive")
    if not theta_end > theta_start:
        raise ValueError("need theta_end > theta_start")
    k = real.params.k
    span = theta_end - theta_start
    periods = span * float(k) ** real.depth / (2 * math.pi)
    n0 = int(min(max_points, max(64, math.ceil(_SAMPLES_PER_PERIOD * k * periods)) + 1))
    theta = np.linspace(theta_start, theta_end, n0)
    pts, levels = eval_on_circle(real, r, theta)
    max_jump = math.pi / k
    complete = True
    while True:
        bad = _bad_segments(pts, levels, tol, max_jump)
        bad &= np.diff(theta) > _MIN_DTHETA
        nbad = int(np.count_nonzero(bad))
        if nbad == 0:
            break
        if theta.size + nbad > max_points:
            complete = False
            warnings.warn(
                f"refinement limit of {max_points} points reached at r={r}; curve is under-resolved",
                RuntimeWarning,
                stacklevel=2,
            )
            break
        idx = np.flatnonzero(bad)
        mid = 0.5 * (theta[idx] + theta[idx + 1])
        mpts, mlev = eval_on_circle(real, r, mid)
        theta = np.insert(theta, idx + 1, mid)
        pts = np.insert(pts, idx + 1, mpts)
        levels = [np.insert(L, idx + 1, M) for L, M in zip(levels, mlev)]
    jumps = [float(np.max(np.abs(np.diff(L.imag)))) for L in levels[1:-1]]
    return TracedCurve(theta, pts, complete, max(jumps, default=0.0))


def trace_green_line(
    real: SnowflakeRealization, r: float, tol: float, max_points: int = MAX_POINTS
) -> np.ndarray:
    """Polyline image of |z| = r (r > 1); first and last points are the image of theta = 0 and 2 pi."""
    if not r > 1:
        raise ValueError("Green's lines need r > 1")
    return trace_curve(real, r, 0.0, 2 * math.pi, tol, max_points).points


def winding_number(poly: np.ndarray, center: complex = 0j) -> int:
    """Winding number of the closed polyline about ``center``."""
    p = np.asarray(poly, dtype=complex) - center
    if np.any(p == 0):
        raise ValueError("polyline passes through the centre")
    closed = np.append(p, p[0])
    return int(round(float(np.sum(np.angle(closed[1:] / closed[:-1]))) / (2 * math.pi)))


def polyline_length(poly: np.ndarray) -> float:
    return float(np.sum(np.abs(np.diff(np.asarray(poly, dtype=complex)))))


def closure_gap(poly: np.ndarray) -> float:
    return float(abs(poly[-1] - poly[0]))


def default_green_radii(k: int, depth: int, levels: Sequence[float] = (0.25, 0.5, 1.0)) -> List[float]:
    """Radii exp(a / k^depth): the Green's lines that resolve the finest generation."""
    return [math.exp(a / float(k) ** depth) for a in levels]


def _render_job(args):
    real, kind, r, t0, t1, tol, max_points = args
    cur = trace_curve(real, r, t0, t1, tol, max_points)
    return kind, r, t0, t1, cur.points, cur.complete


def render_scene(
    real: SnowflakeRealization,
    radii: Optional[Sequence[float]] = None,
    arc: Optional[Tuple[float, float]] = None,
    tol: float = 0.05,
    max_points: int = MAX_POINTS,
    jobs: int = 1,
) -> RenderScene:
    """Green's lines at ``radii`` plus, if given, the boundary arc (theta range on |z| = 1)."""
    if radii is None:
        radii = default_green_radii(real.params.k, real.depth)
    tasks = [(real, "green_line", float(r), 0.0, 2 * math.pi, tol, max_points) for r in radii]
    if arc is not None:
        tasks.append((real, "boundary_arc", 1.0, float(arc[0]), float(arc[1]), tol, max_points))
    if not tasks:
        raise ValueError("nothing to render")
    for t in tasks:
        if t[1] == "green_line" and not t[2] > 1:
            raise ValueError("Green's lines need r > 1")
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_render_job, tasks))
    else:
        results = [_render_job(t) for t in tasks]
    p = real.params
    scene = RenderScene(
        metadata={
            "tool_version": __version__,
            "t": p.t,
            "k": p.k,
            "l": p.slit.l,
            "s": p.slit.s,
            "depth": real.depth,
            "seed": real.seed,
            "angles": list(real.angles),
            "tol": tol,
        }
    )
    for kind, r, t0, t1, pts, complete in results:
        if kind == "green_line":
            label = f"green_line r={r:.9g}"
        else:
            label = f"boundary_arc theta=[{t0:.9g}, {t1:.9g}]"
        if not complete:
            label += " partial"
        scene.add(pts, label, closed=(kind == "green_line"))
    return scene


def _fmt(x: float) -> str:
    return f"{x:.8g}"


def export_svg(scene: RenderScene, path, stroke_width: Optional[float] = None, margin: float = 0.02) -> None:
    """SVG 1.1 with one path per polyline; the y axis points up as in the complex plane."""
    if not scene.curves:
        raise ValueError("cannot export an empty scene")
    x0, y0, x1, y1 = scene.bounding_box()
    w, h = max(x1 - x0, 1e-12), max(y1 - y0, 1e-12)
    pad = margin * max(w, h)
    vb = (x0 - pad, -y1 - pad, w + 2 * pad, h + 2 * pad)
    sw = stroke_width if stroke_width is not None else 1e-3 * max(w, h)
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        '<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'viewBox="{" ".join(_fmt(v) for v in vb)}">',
        f"<metadata>{escape(repr(scene.metadata))}</metadata>",
        f'<g fill="none" stroke="black" stroke-width="{_fmt(sw)}" stroke-linejoin="round">',
    ]
    for i, (curve, label, closed) in enumerate(zip(scene.curves, scene.labels, scene.closed)):
        coords = [f"{_fmt(z.real)},{_fmt(-z.imag)}" for z in curve]
        d = "M" + " L".join(coords) + (" Z" if closed else "")
        out.append(f'<path id="curve{i}" class={quoteattr(label.split()[0])} d="{d}">')
        out.append(f"<title>{escape(label)}</title></path>")
    out.append("</g>")
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")


def export_csv(scene: RenderScene, path) -> None:
    """One row per point: curve_id, re, im; metadata as leading '#' lines."""
    if not scene.curves:
        raise ValueError("cannot export an empty scene")
    with open(path, "w", newline="") as fh:
        for key, val in scene.metadata.items():
            fh.write(f"# {key}: {val}\n")
        for i, label in enumerate(scene.labels):
            fh.write(f"# curve {i}: {label}\n")
        wr = csv.writer(fh)
        wr.writerow(["curve_id", "re", "im"])
        for i, curve in enumerate(scene.curves):
            for z in curve:
                wr.writerow([i, repr(float(z.real)), repr(float(z.imag))])
