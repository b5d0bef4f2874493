"""Command-line front end: eigen, sweep, bound, table, certify, render.

Options come from three layers: built-in defaults, an optional flat JSON
config file (``--config``), and command-line flags, later layers winning.
Unknown config keys are rejected.

Exit codes: 0 success or PASS, 1 usage error, 2 numerical failure,
3 certificate FAILED.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from . import __version__
from .certificate_t1 import CertifyConfig, certify
from .conformal_maps import SnowflakeParams
from .errors import SnowflakeError
from .quadrature import QuadratureScheme
from .snowflake_render import (
    MAX_DEPTH,
    MAX_POINTS,
    SnowflakeRealization,
    closure_gap,
    export_csv,
    export_svg,
    polyline_length,
    render_scene,
    winding_number,
)
from .spectrum_bounds import (
    REFERENCE_ROWS,
    UNRELIABLE_T,
    compute_eigen,
    bound_from_test_function,
    fit_test_function,
    sweep,
    write_bound_json,
    write_sweep_csv,
)
from .transfer_operator import BINNING_RULES, save_eigenpair, write_metadata_lines

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_CERT_FAILED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _bool(x):
    if isinstance(x, bool):
        return x
    s = str(x).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {x!r}")


def _int(x):
    if isinstance(x, float) and not x.is_integer():
        raise ValueError(f"not an integer: {x!r}")
    return int(x)


def _opt_float(x):
    return None if x is None or str(x).lower() in ("", "none") else float(x)


def _str(x):
    return None if x is None else str(x)


# name -> (type, default, help); names double as config-file keys
_PHYS = {
    "t": (float, 1.0, "exponent t"),
    "k": (_int, 13, "branching number k >= 2"),
    "l": (float, 73.0, "slit length l"),
    "s": (float, 1.0, "safety scaling s >= 1"),
}
_GRID = {
    "N": (_int, 1000, "radial grid size"),
    "M": (_int, 500, "angular grid size"),
    "R": (_opt_float, None, "outer radius (default: critical radius)"),
    "binning": (str, "nearest", f"column rule, one of {', '.join(BINNING_RULES)}"),
}
OPTIONS: Dict[str, Dict[str, Tuple[Callable, object, str]]] = {
    "eigen": {
        **_PHYS,
        **_GRID,
        "tol": (float, 1e-10, "power iteration residual tolerance"),
        "out": (str, ".", "directory for the eigenvector CSV and JSON"),
    },
    "bound": {
        **_PHYS,
        **_GRID,
        "points": (_int, 300, "number of radii where P nu / nu is evaluated"),
        "form": (str, "rational", "test function form: rational or piecewise_linear"),
        "nodes": (_int, 512, "initial quadrature nodes"),
        "quad_tol": (float, 1e-7, "relative quadrature doubling tolerance"),
        "jobs": (_int, 1, "worker processes"),
        "out": (str, "bound.json", "JSON output path"),
    },
    "sweep": {
        "t": _PHYS["t"],
        "s": _PHYS["s"],
        "k_values": (str, "2:20", "k values: comma list or a:b inclusive range"),
        "l_values": (str, "1:80", "l values: comma list or a:b[:step] inclusive range"),
        "N": _GRID["N"],
        "M": _GRID["M"],
        "binning": _GRID["binning"],
        "bound_best": (_bool, False, "also bound the best cell with a fitted test function"),
        "points": (_int, 300, "radii for the best-cell bound"),
        "jobs": (_int, 1, "worker processes"),
        "out": (str, "sweep.csv", "CSV output path"),
    },
    "table": {
        "rows": (str, "all", "t values of the rows to reproduce (comma list), 'all', or empty"),
        "N": (_int, 2000, "radial grid size"),
        "M": (_int, 1000, "angular grid size"),
        "s": _PHYS["s"],
        "binning": _GRID["binning"],
        "bounds": (_bool, False, "also compute fitted test-function bounds"),
        "points": (_int, 300, "radii for the bounds"),
        "jobs": (_int, 1, "worker processes"),
        "out": (str, "table.csv", "CSV output path"),
    },
    "certify": {
        "points": (_int, 3000, "equispaced radii on [1, R]"),
        "nodes": (_int, 10_000, "quadrature nodes"),
        "spot_checks": (_bool, True, "sample the certified constants and report them"),
        "jobs": (_int, 1, "worker processes"),
        "out": (str, "certificate.json", "JSON output path"),
    },
    "render": {
        **_PHYS,
        "depth": (_int, 3, f"approximation depth n (at most {MAX_DEPTH})"),
        "seed": (_int, 0, "seed for the random angles"),
        "radii": (_str, None, "Green's line radii, comma list (default: three just above 1)"),
        "arc": (_str, "0,0.05", "boundary arc theta range 'a,b', or 'none'"),
        "tol": (float, 0.05, "chord tolerance"),
        "max_points": (_int, MAX_POINTS, "refinement cap per curve"),
        "jobs": (_int, 1, "worker processes"),
        "svg": (str, "snowflake.svg", "SVG output path"),
        "csv": (_str, None, "optional CSV of polyline points"),
    },
}


COMMAND_HELP = {
    "eigen": "Perron eigenvalue and eigenvector of the discretized transfer operator",
    "bound": "fitted test-function lower bound for one parameter set",
    "sweep": "eigenvalue scan over a (k, l) grid at fixed t",
    "table": "recompute the reference rows of log_k lambda and beta(t)",
    "certify": "interval certificate of beta(1) > 0.23 for (k, l, s) = (13, 73, 1.002)",
    "render": "draw Green's lines and a boundary arc of a finite approximation as SVG",
}


def _help_with_default(helptext: str, default) -> str:
    return helptext if "default" in helptext else f"{helptext} (default {default})"


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="snowflake", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    for name, opts in OPTIONS.items():
        sp = sub.add_parser(name, help=COMMAND_HELP[name], description=COMMAND_HELP[name])
        sp.add_argument("--config", default=None, help="flat JSON file with option values")
        for key, (typ, default, helptext) in opts.items():
            flag = "--" + key.replace("_", "-")
            if typ is _bool:
                sp.add_argument(
                    flag, dest=key, action=argparse.BooleanOptionalAction, default=argparse.SUPPRESS,
                    help=_help_with_default(helptext, default),
                )
            else:
                sp.add_argument(
                    flag, dest=key, type=typ, default=argparse.SUPPRESS, help=_help_with_default(helptext, default)
                )
    return parser


def resolve_config(command: str, flags: dict, config_path: Optional[str] = None) -> dict:
    """Defaults < config file < flags; unknown config keys are usage errors."""
    opts = OPTIONS[command]
    cfg = {key: option[1] for key, option in opts.items()}
    if config_path is not None:
        try:
            data = json.loads(Path(config_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {config_path}: {exc}") from None
        if not isinstance(data, dict):
            raise UsageError("config file must hold a flat JSON object")
        unknown = sorted(set(data) - set(opts))
        if unknown:
            raise UsageError(f"unknown config keys for {command}: {', '.join(unknown)}")
        for key, val in data.items():
            if isinstance(val, (dict, list)):
                raise UsageError(f"config key {key!r} must hold a scalar")
            try:
                cfg[key] = opts[key][0](val) if val is not None else None
            except (TypeError, ValueError) as exc:
                raise UsageError(f"config key {key!r}: {exc}") from None
    cfg.update(flags)
    validate(command, cfg)
    return cfg


def _need(cond: bool, message: str) -> None:
    if not cond:
        raise UsageError(message)


def parse_values(text: str, kind: Callable = float) -> List:
    """'2,3,5' or 'a:b' / 'a:b:step' (inclusive) into a list."""
    text = text.strip()
    if not text:
        return []
    if ":" in text:
        parts = [float(x) for x in text.split(":")]
        if len(parts) not in (2, 3):
            raise UsageError(f"bad range {text!r}")
        a, b = parts[0], parts[1]
        step = parts[2] if len(parts) == 3 else 1.0
        _need(step > 0, "range step must be positive")
        n = int(math.floor((b - a) / step + 1e-9)) + 1
        return [kind(a + i * step) for i in range(max(n, 0))]
    return [kind(x) for x in text.split(",")]


def validate(command: str, cfg: dict) -> None:
    """Check numeric options against the module preconditions."""
    if "k" in cfg:
        _need(cfg["k"] >= 2, "k must be an integer >= 2")
    if "l" in cfg:
        _need(math.isfinite(cfg["l"]) and cfg["l"] >= 0, "l must be finite and >= 0")
    if "s" in cfg:
        _need(cfg["s"] >= 1, "s must be >= 1")
    for key in ("N", "M", "points", "nodes"):
        if key in cfg:
            _need(cfg[key] >= 2, f"{key} must be >= 2")
    if cfg.get("R") is not None:
        _need(cfg["R"] > 1, "R must exceed 1")
    if "binning" in cfg:
        _need(cfg["binning"] in BINNING_RULES, f"binning must be one of {BINNING_RULES}")
    if "jobs" in cfg:
        _need(cfg["jobs"] >= 1, "jobs must be >= 1")
    for key in ("tol", "quad_tol"):
        if key in cfg:
            _need(cfg[key] > 0, f"{key} must be positive")
    if command in ("eigen", "bound"):
        _need(
            cfg["l"] > 0 or cfg.get("R") is not None,
            "degenerate block: l = 0 is the identity map and has no critical radius",
        )
    if command == "bound":
        _need(cfg["form"] in ("rational", "piecewise_linear"), "form must be rational or piecewise_linear")
    if command == "render":
        _need(0 <= cfg["depth"] <= MAX_DEPTH, f"depth must lie in [0, {MAX_DEPTH}]")
        _need(cfg["max_points"] >= 2, "max_points must be >= 2")
    if command in ("sweep",):
        parse_values(cfg["k_values"], int)
        parse_values(cfg["l_values"], float)


def metadata(command: str, cfg: dict) -> dict:
    return {"tool": "conformal_snowflakes", "tool_version": __version__, "command": command, **cfg}


def _params(cfg: dict) -> SnowflakeParams:
    return SnowflakeParams.make(cfg["t"], cfg["k"], cfg["l"], cfg["s"])


def cmd_eigen(cfg: dict) -> int:
    p = _params(cfg)
    run = compute_eigen(p, cfg["N"], cfg["M"], cfg["R"], cfg["binning"], cfg["tol"])
    outdir = Path(cfg["out"])
    outdir.mkdir(parents=True, exist_ok=True)
    stem = f"eigen_t{p.t:g}_k{p.k}_l{p.slit.l:g}_s{p.slit.s:g}_N{cfg['N']}_M{cfg['M']}"
    meta = metadata("eigen", cfg)
    csv_path, json_path = outdir / f"{stem}.csv", outdir / f"{stem}.json"
    save_eigenpair(run.eig, run.matrix, csv_path, json_path, extra={"metadata": meta}, metadata=meta)
    print(f"R = {run.grid.R:.10g}")
    print(f"lambda = {run.eig.lam:.10g}")
    print(f"log_{p.k} lambda = {run.log_k_lambda:.6f}")
    print(f"residual = {run.eig.residual:.3e} after {run.eig.iterations} iterations")
    print(f"eigenvector: {csv_path}")
    if p.t <= UNRELIABLE_T:
        print(f"warning: t <= {UNRELIABLE_T} is outside the reliable range of the discretisation")
    return EXIT_OK


def cmd_bound(cfg: dict) -> int:
    p = _params(cfg)
    run = compute_eigen(p, cfg["N"], cfg["M"], cfg["R"], cfg["binning"])
    nu = fit_test_function(run.eig, run.grid, cfg["form"])
    quad = QuadratureScheme(nodes=cfg["nodes"], tol=cfg["quad_tol"])
    res = bound_from_test_function(p, nu, run.grid.R, cfg["points"], quad, cfg["jobs"])
    write_bound_json(res, cfg["out"], nu, metadata=metadata("bound", cfg))
    print(f"log_{p.k} lambda = {run.log_k_lambda:.6f}")
    print(f"min P nu / nu = {res.min_ratio:.6f} at r = {res.argmin_r:.6g}")
    print(f"beta({p.t:g}) >= {res.beta_lower:.6f}  ({res.rigor})")
    for note in res.notes:
        print(f"note: {note}")
    return EXIT_OK


def cmd_sweep(cfg: dict) -> int:
    ks = parse_values(cfg["k_values"], int)
    ls = parse_values(cfg["l_values"], float)
    for k in ks:
        _need(k >= 2, "k values must be >= 2")
    recs = sweep(
        cfg["t"], ks, ls, cfg["N"], cfg["M"], cfg["s"], cfg["binning"], cfg["jobs"],
        cfg["bound_best"], cfg["points"],
    )
    write_sweep_csv(recs, cfg["out"], metadata=metadata("sweep", cfg))
    ok = [r for r in recs if r.log_k_lambda is not None]
    print(f"{len(recs)} cells, {len(recs) - len(ok)} failed; results in {cfg['out']}")
    if ok:
        b = ok[0]
        print(f"best: k={b.k} l={b.l:g} log_k lambda = {b.log_k_lambda:.6f}")
    return EXIT_OK


TABLE_COLUMNS = (
    "t", "k", "l", "log_k_lambda", "published_log_k_lambda", "beta_lower", "published_beta",
    "t2_over_4", "note",
)


def select_rows(text: str) -> List[tuple]:
    text = text.strip()
    if text.lower() == "all":
        return list(REFERENCE_ROWS)
    rows = []
    for t in parse_values(text, float) if text else []:
        match = [row for row in REFERENCE_ROWS if math.isclose(row[0], t, abs_tol=1e-9)]
        _need(bool(match), f"no table row with t = {t:g}")
        rows.extend(match)
    return rows


def _table_row(args) -> dict:
    row, N, M, s, binning, bounds, points = args
    t, k, l, pub_lam, pub_beta, _, t2 = row
    rec = {
        "t": t, "k": k, "l": l, "log_k_lambda": None, "published_log_k_lambda": pub_lam,
        "beta_lower": None, "published_beta": pub_beta, "t2_over_4": t2, "note": "",
    }
    notes = []
    if t <= UNRELIABLE_T:
        notes.append(f"t <= {UNRELIABLE_T}: eigenvalue estimate unreliable")
    try:
        p = SnowflakeParams.make(t, k, l, s)
        if bounds and t <= UNRELIABLE_T:
            notes.append("bound skipped")
            rec["log_k_lambda"] = compute_eigen(p, N, M, binning=binning).log_k_lambda
        elif bounds:
            run = compute_eigen(p, N, M, binning=binning)
            rec["log_k_lambda"] = run.log_k_lambda
            nu = fit_test_function(run.eig, run.grid)
            rec["beta_lower"] = bound_from_test_function(p, nu, run.grid.R, points).beta_lower
        else:
            rec["log_k_lambda"] = compute_eigen(p, N, M, binning=binning).log_k_lambda
    except (SnowflakeError, ValueError, ArithmeticError) as exc:
        notes.append(f"{type(exc).__name__}: {exc}")
    rec["note"] = "; ".join(notes)
    return rec


def cmd_table(cfg: dict) -> int:
    rows = select_rows(cfg["rows"])
    tasks = [(row, cfg["N"], cfg["M"], cfg["s"], cfg["binning"], cfg["bounds"], cfg["points"]) for row in rows]
    if cfg["jobs"] > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=cfg["jobs"]) as ex:
            recs = list(ex.map(_table_row, tasks))
    else:
        recs = [_table_row(t) for t in tasks]
    with open(cfg["out"], "w", newline="") as fh:
        write_metadata_lines(fh, metadata("table", cfg))
        w = csv.writer(fh)
        w.writerow(TABLE_COLUMNS)
        for rec in recs:
            w.writerow(["" if rec[c] is None else rec[c] for c in TABLE_COLUMNS])
    for rec in recs:
        val = "failed" if rec["log_k_lambda"] is None else f"{rec['log_k_lambda']:.4f}"
        line = f"t={rec['t']:+.1f} k={rec['k']} l={rec['l']:g}: log_k lambda = {val} (published {rec['published_log_k_lambda']})"
        if rec["beta_lower"] is not None:
            line += f", beta >= {rec['beta_lower']:.5f} (published {rec['published_beta']})"
        if rec["note"]:
            line += f"  [{rec['note']}]"
        print(line)
    print(f"{len(recs)} rows written to {cfg['out']}")
    return EXIT_OK


def cmd_certify(cfg: dict) -> int:
    cert = certify(
        CertifyConfig(n_points=cfg["points"], nodes=cfg["nodes"], jobs=cfg["jobs"], spot_checks=cfg["spot_checks"])
    )
    data = cert.to_dict()
    data["metadata"] = metadata("certify", cfg)
    Path(cfg["out"]).write_text(json.dumps(data, indent=2) + "\n")
    print(cert.report())
    return EXIT_OK if cert.passed else EXIT_CERT_FAILED


def _parse_arc(text: Optional[str]):
    if text is None or text.strip().lower() in ("", "none"):
        return None
    vals = parse_values(text, float)
    _need(len(vals) == 2 and vals[1] > vals[0], "arc must be 'a,b' with a < b")
    return vals[0], vals[1]


def cmd_render(cfg: dict) -> int:
    p = _params(cfg)
    real = SnowflakeRealization.from_seed(p, cfg["depth"], cfg["seed"])
    radii = None if cfg["radii"] is None else parse_values(cfg["radii"], float)
    if radii is not None:
        _need(all(r > 1 for r in radii), "Green's line radii must exceed 1")
    arc = _parse_arc(cfg["arc"])
    _need(bool(radii) or radii is None or arc is not None, "nothing to render")
    scene = render_scene(real, radii, arc, cfg["tol"], cfg["max_points"], cfg["jobs"])
    scene.metadata.update(metadata("render", cfg))
    export_svg(scene, cfg["svg"])
    if cfg["csv"]:
        export_csv(scene, cfg["csv"])
    for curve, label, closed in zip(scene.curves, scene.labels, scene.closed):
        line = f"{label}: {curve.size} points, length {polyline_length(curve):.6g}"
        if closed:
            line += f", closure gap {closure_gap(curve):.2e}, winding number {winding_number(curve)}"
        print(line)
    print(f"SVG written to {cfg['svg']}")
    return EXIT_OK


COMMANDS = {
    "eigen": cmd_eigen,
    "bound": cmd_bound,
    "sweep": cmd_sweep,
    "table": cmd_table,
    "certify": cmd_certify,
    "render": cmd_render,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
        if ns.command is None:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING, format="%(message)s")
        flags = {k: v for k, v in vars(ns).items() if k not in ("command", "config", "verbose")}
        cfg = resolve_config(ns.command, flags, ns.config)
        return COMMANDS[ns.command](cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SnowflakeError, ArithmeticError, ValueError) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
