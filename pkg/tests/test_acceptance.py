"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

Every check runs at its stated tolerance.  The per-criterion lines are
printed by the test and collected again in the terminal summary.
"""

import math
import time
import xml.etree.ElementTree as ET
from fractions import Fraction

import numpy as np

from conformal_snowflakes.certificate_t1 import CertifyConfig, certify, radial_lipschitz, radial_quadratic_constant
from conformal_snowflakes.conformal_maps import (
    SlitParams,
    SnowflakeParams,
    critical_radius,
    inverse_map,
    singular_points,
    slit_map,
    slit_map_derivative,
)
from conformal_snowflakes.quadrature import QuadratureScheme, euler_error_bound, euler_gamma
from conformal_snowflakes.snowflake_render import (
    SnowflakeRealization,
    closure_gap,
    export_svg,
    render_scene,
    winding_number,
)
from conformal_snowflakes.spectrum_bounds import (
    bound_from_test_function,
    compute_eigen,
    constant_test_function,
    nu_t1,
    semi_rigorous_bound,
)
from conformal_snowflakes.transfer_operator import (
    DiscretizationGrid,
    TransferMatrix,
    apply_operator,
    build_matrix,
    dominant_eigen,
)


def _timed(fn, *args, **kwargs):
    t0 = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - t0


def test_criterion_1_critical_radius(acceptance_record):
    R, dt = _timed(critical_radius, 13, SlitParams(73, 1.002))
    ok = abs(R - 76.1568) <= 0.001 and dt < 1.0
    acceptance_record("1 critical radius", ok, f"R = {R:.6f} (target 76.1568 +- 0.001), {dt:.3f} s (< 1 s)")
    assert ok


def test_criterion_2_discretized_eigenvalue(acceptance_record):
    # The "upper" bin rule is the one that reproduces the s = 1 reference
    # figure; the default "nearest" rule is printed alongside.
    p = SnowflakeParams.make(1.0, 13, 73, 1.002)
    run, dt = _timed(compute_eigen, p, 1000, 500, binning="upper")
    run1, dt1 = _timed(compute_eigen, SnowflakeParams.make(1.0, 13, 73, 1.0), 1000, 500, binning="upper")
    near = compute_eigen(p, 1000, 500).log_k_lambda
    near1 = compute_eigen(SnowflakeParams.make(1.0, 13, 73, 1.0), 1000, 500).log_k_lambda
    a, b = run.log_k_lambda, run1.log_k_lambda
    ok = abs(a - 0.2321) <= 0.002 and abs(b - 0.23492) <= 0.002 and dt < 30 and dt1 < 30
    acceptance_record(
        "2 discretized eigenvalue",
        ok,
        f"s=1.002: {a:.5f} (target 0.2321 +- 0.002), s=1: {b:.5f} (target 0.23492 +- 0.002), "
        f"{dt:.1f} s / {dt1:.1f} s; nearest binning gives {near:.5f} / {near1:.5f}",
    )
    assert ok


def test_criterion_3_table_rows(acceptance_record):
    rows = [(0.2, 5, 7, 0.0091, 0.001), (1.0, 13, 73, 0.2362, 0.005), (2.0, 4, 21, 0.9548, 0.005)]
    t0 = time.perf_counter()
    got = [compute_eigen(SnowflakeParams.make(t, k, l, 1.0), 2000, 1000).log_k_lambda for t, k, l, _, _ in rows]
    dt = time.perf_counter() - t0
    ext = compute_eigen(SnowflakeParams.make(-0.6, 24, 21, 1.0), 3000, 2000).log_k_lambda
    ok_rows = [abs(g - ref) <= tol for g, (_, _, _, ref, tol) in zip(got, rows)]
    ok = all(ok_rows) and dt < 300 and abs(ext - 0.0847) <= 0.002
    parts = [f"t={t}: {g:.5f} (target {ref} +- {tol})" for g, (t, _, _, ref, tol) in zip(got, rows)]
    parts.append(f"extended t=-0.6: {ext:.5f} (target 0.0847 +- 0.002)")
    acceptance_record("3 table rows", ok, "; ".join(parts) + f"; {dt:.1f} s (< 300 s)")
    assert ok


def test_criterion_4_semi_rigorous_bound(acceptance_record):
    p = SnowflakeParams.make(1.0, 13, 73, 1.0)
    res, dt = _timed(semi_rigorous_bound, p, 2000, 1000, n_points=300, jobs=4)
    ok = abs(res.beta_lower - 0.2340) <= 0.003 and dt < 120
    acceptance_record(
        "4 semi-rigorous bound", ok, f"beta(1) >= {res.beta_lower:.5f} (target 0.2340 +- 0.003), {dt:.1f} s (< 120 s)"
    )
    assert ok


def test_criterion_5_rigorous_certificate(acceptance_record):
    cert, dt = _timed(certify, CertifyConfig(n_points=3000, nodes=10_000, jobs=4, spot_checks=False))
    ok = cert.min_bound >= 1.8079 - 0.001 and cert.beta_bound >= 0.2308 - 0.0002 and cert.passed and dt < 600
    acceptance_record(
        "5 rigorous certificate",
        ok,
        f"min_bound {cert.min_bound:.6f} (>= 1.8069), beta {cert.beta_bound:.6f} (>= 0.2306), "
        f"verdict {cert.verdict}, {dt:.1f} s (< 600 s)",
    )
    assert ok


def test_criterion_6_constant_audits(acceptance_record):
    euler = euler_error_bound(QuadratureScheme(nodes=10_000, order=3), 1.65e21)
    arc, dmax, lip = radial_lipschitz(13)
    lip_value = 2 * arc * dmax / (2 * math.pi * 13)
    gamma6 = euler_gamma(6)
    # z1 as printed: (-5033 - 292 i sqrt(74)) / 5625
    x = -5033 / 5625
    y = -292 * math.sqrt(74) / 5625
    z1 = singular_points(73)[0]
    const = radial_quadratic_constant(73)
    checks = {
        "euler <= 0.0034": euler <= 0.0034,
        "lipschitz <= 0.0131": lip_value <= 0.0131 and (arc, dmax, lip) == (1.48, 0.36, 0.0131),
        "gamma_6 = 1/30240": abs(gamma6) == Fraction(1, 30240),
        "-592/5625 = y^2/(x-1)": abs(-592 / 5625 - y * y / (x - 1)) <= 1e-12 and abs(const + 592 / 5625) <= 1e-12,
        "z1 matches": abs(z1 - complex(x, y)) <= 1e-12,
    }
    ok = all(checks.values())
    acceptance_record(
        "6 constant audits",
        ok,
        f"euler {euler:.6g}, lipschitz {lip_value:.6g}, gamma_6 {gamma6}, y^2/(x-1) {y * y / (x - 1):.12f}; "
        + ", ".join(f"{k}: {'ok' if v else 'NO'}" for k, v in checks.items()),
    )
    assert ok


def test_criterion_7_property_suites(acceptance_record):
    rng = np.random.default_rng(7)
    p = SlitParams(73, 1.0)
    rad = 1.0 + rng.exponential(2.0, 1000)
    z = rad * np.exp(1j * rng.uniform(0, 2 * math.pi, 1000))
    roundtrip = float(np.max(np.abs(inverse_map(slit_map(z, p), p) - z)))

    z1 = singular_points(73)[0]
    unit = abs(abs(z1) - 1)

    h = 1e-6
    zz = z[:200]
    fd = (slit_map(zz + h, p) - slit_map(zz - h, p)) / (2 * h)
    deriv = float(np.max(np.abs(fd - slit_map_derivative(zz, p)) / np.abs(slit_map_derivative(zz, p))))

    eig_err = 0.0
    for _ in range(5):
        A = rng.uniform(0, 1, (40, 40))
        ev, vec = np.linalg.eig(A)
        i = int(np.argmax(ev.real))
        oracle = abs(vec[:, i].real)
        oracle /= oracle.max()
        grid = DiscretizationGrid(40, 2, 2.0)
        pair = dominant_eigen(TransferMatrix(None, grid, A), tol=1e-14)
        eig_err = max(eig_err, abs(pair.lam - ev[i].real) / ev[i].real, float(np.max(np.abs(pair.vector - oracle))))

    ident = SnowflakeParams.make(1.0, 5, 0.0, 1.0)
    lam_id = dominant_eigen(build_matrix(ident, DiscretizationGrid(200, 32, 20.0))).lam
    one = constant_test_function(20.0)
    ratio_id = max(abs(apply_operator(ident, one, r)[0] - 1) for r in (1.0, 3.0, 19.5))

    snow = SnowflakeParams.make(1.0, 13, 73, 1.002)
    a = bound_from_test_function(snow, nu_t1(), 76.2, n_points=12)
    b = bound_from_test_function(snow, nu_t1().scaled(37.5), 76.2, n_points=12)
    scale = max(abs(a.beta_lower - b.beta_lower), abs(a.min_ratio - b.min_ratio))

    checks = {
        "psi(phi(z)) = z": roundtrip <= 1e-9,
        "|z1| = 1": unit <= 1e-14,
        "derivative vs finite difference": deriv <= 1e-6,
        "power iteration vs dense oracle": eig_err <= 1e-10,
        "identity block": abs(lam_id - 1) <= 1e-10 and ratio_id <= 1e-10,
        "scale invariance": scale <= 1e-12,
    }
    ok = all(checks.values())
    acceptance_record(
        "7 property suites",
        ok,
        f"roundtrip {roundtrip:.1e}, |z1|-1 {unit:.1e}, derivative {deriv:.1e}, eigen {eig_err:.1e}, "
        f"identity {abs(lam_id - 1):.1e}/{ratio_id:.1e}, scaling {scale:.1e}",
    )
    assert ok


def test_criterion_8_renderer(acceptance_record, tmp_path):
    params = SnowflakeParams.make(1.0, 13, 73, 1.0)
    tol = 0.05
    real = SnowflakeRealization.from_seed(params, 3, 2024)
    scene = render_scene(real, arc=(0.0, 0.05), tol=tol)
    again = render_scene(SnowflakeRealization.from_seed(params, 3, 2024), arc=(0.0, 0.05), tol=tol)
    closed = [c for c, is_closed in zip(scene.curves, scene.closed) if is_closed]
    gaps = [closure_gap(c) for c in closed]
    winds = [winding_number(c) for c in closed]
    same = scene.labels == again.labels and all(np.array_equal(x, y) for x, y in zip(scene.curves, again.curves))
    path = tmp_path / "depth3.svg"
    export_svg(scene, path)
    try:
        root = ET.parse(path).getroot()
        well_formed = root.tag.endswith("svg") and len(root.findall(".//{http://www.w3.org/2000/svg}path")) == len(
            scene.curves
        )
    except ET.ParseError:
        well_formed = False
    ok = bool(closed) and max(gaps) < tol and all(w == 1 for w in winds) and same and well_formed
    acceptance_record(
        "8 renderer",
        ok,
        f"{len(closed)} Green's lines, max closure gap {max(gaps):.2e} (< {tol}), windings {winds}, "
        f"deterministic {same}, SVG well-formed {well_formed}",
    )
    assert ok
