"""Batch driver: ``hdg-stokes {run,convergence,check-element,inf-sup,mesh}``.

Options come from flags and an optional TOML file (``--config``); flags
win.  Exit codes: 0 success, 1 numerical failure, 2 usage error.
"""
import argparse
import csv
import io
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import analysis
from .assembly import PRESETS, QuadratureOrders, default_alpha, element_family, solve
from .cases import CASES, make_case
from .errors import (
    CondensationError,
    DegenerateGeometryError,
    InvalidArgumentError,
    SingularMatrixError,
    SolverAccuracyError,
)
from .mesh import Mesh, generate_bearing_mesh, generate_square_mesh, generate_trapezoidal_mesh

EXIT_OK, EXIT_NUMERICAL, EXIT_USAGE = 0, 1, 2
NUMERICAL_ERRORS = (CondensationError, DegenerateGeometryError, SingularMatrixError, SolverAccuracyError)
THREADS_ENV = "HDG_STOKES_THREADS"
CSV_COLUMNS = ("case", "family", "k", "nu", "mesh", "h", "dofs", "e_u", "e_p", "e_div", "e_jump", "e_jump_boundary")
MEASURES = ("e_u", "e_p", "e_div", "e_jump")


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    case: str = "manufactured"
    family: str = "pm-rt"
    k: list = field(default_factory=lambda: [1])
    nu: list = field(default_factory=lambda: [1.0])
    alpha: float = None
    mesh: str = "trapezoid:4,8"
    mesh_options: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    output: str = None
    orders: dict = field(default_factory=dict)
    reference_k: int = 3
    max_dofs: int = 3000

    def validate(self):
        if self.family.lower() not in PRESETS:
            raise UsageError(f"unknown element family {self.family!r}; valid presets: {', '.join(PRESETS)}")
        if self.case not in CASES:
            raise UsageError(f"unknown case {self.case!r}; valid cases: {', '.join(CASES)}")
        if not self.k or min(self.k) < 1:
            raise UsageError("k must be >= 1")
        if not self.nu or min(self.nu) <= 0:
            raise UsageError("nu must be positive")
        if self.alpha is not None and self.alpha <= 0:
            raise UsageError("alpha must be positive")
        unknown = set(self.orders) - {"cell_extra", "facet_extra", "source_extra"}
        if unknown:
            raise UsageError(f"unknown quadrature override(s): {', '.join(sorted(unknown))}")
        if not mesh_levels(self):
            raise UsageError("mesh refinement list is empty")
        return self

    def alpha_for(self, k):
        return default_alpha(k) if self.alpha is None else self.alpha

    def resolved(self):
        """Config with defaults made explicit, for the CSV header."""
        d = asdict(self)
        d["family"] = self.family.lower()
        d["alpha"] = {str(k): self.alpha_for(k) for k in self.k}
        d["orders"] = asdict(self.quadrature_orders())
        d["case_params"] = case_params(self)
        return d

    def quadrature_orders(self):
        return QuadratureOrders(**self.orders)


# --- parsing ---------------------------------------------------------------


def _number(text):
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def _key_values(items):
    out = {}
    for item in items or ():
        if "=" not in item:
            raise UsageError(f"expected key=value, got {item!r}")
        key, val = item.split("=", 1)
        out[key.strip()] = _number(val.strip())
    return out


def _list(text, conv):
    if isinstance(text, (list, tuple)):
        return [conv(t) for t in text]
    if isinstance(text, (int, float)):
        return [conv(text)]
    try:
        return [conv(t) for t in str(text).split(",") if t.strip()]
    except ValueError as exc:
        raise UsageError(f"cannot parse list {text!r}: {exc}") from None


def case_params(cfg):
    return dict(cfg.params)


def mesh_levels(cfg):
    """Return ``[(label, builder_args)]``; builders run lazily in workers."""
    spec = cfg.mesh
    if ":" in spec and spec.split(":", 1)[0] in ("trapezoid", "square", "bearing"):
        kind, levels = spec.split(":", 1)
        return [(f"{kind}:{n}", (kind, n)) for n in _list(levels, int)]
    return [(p, ("file", p)) for p in spec.split(",") if p]


def build_mesh(cfg, args):
    kind, n = args
    opts = dict(cfg.mesh_options)
    try:
        if kind == "trapezoid":
            return generate_trapezoidal_mesh(n, **opts)
        if kind == "square":
            return generate_square_mesh(n, **opts)
        if kind == "bearing":
            geo = {key: v for key, v in case_params(cfg).items() if key in ("r_i", "r_o", "e")}
            geo.update(opts)
            geo.setdefault("n_r", max(2, n // 8))
            return generate_bearing_mesh(n_theta=n, **geo)
        return Mesh.load(n)
    except TypeError as exc:
        raise UsageError(f"bad mesh option for {kind}: {exc}") from None
    except OSError as exc:
        raise UsageError(f"cannot read mesh file {n!r}: {exc}") from None


def load_config(path):
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise UsageError(f"invalid TOML in {path}: {exc}") from None


def make_config(ns):
    base = load_config(ns.config) if getattr(ns, "config", None) else {}
    cfg = RunConfig()
    known = set(RunConfig.__dataclass_fields__)
    extra = set(base) - known
    if extra:
        raise UsageError(f"unknown config key(s): {', '.join(sorted(extra))}")
    merged = dict(base)
    for key in ("case", "family", "k", "nu", "alpha", "mesh", "output", "reference_k", "max_dofs"):
        val = getattr(ns, key, None)
        if val is not None:
            merged[key] = val
    for key, attr in (("params", "param"), ("mesh_options", "mesh_opt"), ("orders", "quad")):
        items = getattr(ns, attr, None)
        if items:
            merged[key] = {**merged.get(key, {}), **_key_values(items)}
    if "k" in merged:
        merged["k"] = _list(merged["k"], int)
    if "nu" in merged:
        merged["nu"] = _list(merged["nu"], float)
    if merged.get("alpha") is not None:
        merged["alpha"] = float(merged["alpha"])
    return replace(cfg, **merged).validate()


# --- execution -------------------------------------------------------------


def workers():
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    return max(1, n)


def _case(cfg, nu):
    params = case_params(cfg)
    if cfg.case == "manufactured":
        params["nu"] = nu
    try:
        return make_case(cfg.case, **params)
    except TypeError as exc:
        raise UsageError(f"bad parameter for case {cfg.case}: {exc}") from None


def solve_one(cfg, mesh_args, k, nu):
    """One solve; returns ``(fields, report, wall_time)``."""
    mesh = build_mesh(cfg, mesh_args)
    case = _case(cfg, nu)
    family = element_family(cfg.family, k)
    t0 = time.perf_counter()
    fields, system = solve(mesh, family, case.nu, cfg.alpha_for(k), case.f, case.bc, cfg.quadrature_orders())
    wall = time.perf_counter() - t0
    report = analysis.compute_errors(fields, case, cfg.alpha_for(k), dofs=len(system.free))
    return fields, report, wall


def _task(args):
    cfg, mesh_args, k, nu = args
    _, report, wall = solve_one(cfg, mesh_args, k, nu)
    return report, wall


def run_all(cfg, tasks):
    n = min(workers(), len(tasks))
    if n <= 1:
        return [_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(_task, tasks))


def self_convergence(cfg, k, nu, levels):
    """Differences against a ``reference_k`` solution on the finest mesh."""
    ref, _, _ = solve_one(cfg, levels[-1][1], cfg.reference_k, nu)
    rows = []
    for _, args in levels[:-1]:
        fields, report, wall = solve_one(cfg, args, k, nu)
        report.e_u = analysis.reference_difference(fields, ref)
        rows.append((report, wall))
    return rows


def _fmt(v):
    if isinstance(v, float) or isinstance(v, np.floating):
        return repr(float(v))
    return str(v)


def write_atomic(path, text):
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def csv_text(cfg, header, rows):
    buf = io.StringIO()
    buf.write("# config: " + json.dumps(cfg.resolved(), sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _report_row(cfg, k, nu, label, r):
    return [cfg.case, cfg.family.lower(), k, nu, label, r.h, r.dofs, r.e_u, r.e_p, r.e_div, r.e_jump, r.e_jump_boundary]


def _print_table(header, rows, out=sys.stdout):
    print("  ".join(f"{h:>12}" for h in header), file=out)
    for row in rows:
        cells = [f"{v:>12.4e}" if isinstance(v, float) else f"{str(v):>12}" for v in row]
        print("  ".join(cells), file=out)


def _series(cfg):
    levels = mesh_levels(cfg)
    tasks = [(cfg, args, k, nu) for k in cfg.k for nu in cfg.nu for _, args in levels]
    return levels, tasks


def cmd_run(cfg, with_rates=False):
    levels, tasks = _series(cfg)
    needs_reference = with_rates and not _case(cfg, cfg.nu[0]).has_exact
    if needs_reference:
        if len(levels) < 3:
            raise UsageError("self-convergence needs at least three mesh levels (the finest is the reference)")
        results = []
        for k in cfg.k:
            for nu in cfg.nu:
                results.extend(self_convergence(cfg, k, nu, levels))
        labels = [lab for _ in cfg.k for _ in cfg.nu for lab, _ in levels[:-1]]
        keys = [(k, nu) for k in cfg.k for nu in cfg.nu for _ in levels[:-1]]
    else:
        results = run_all(cfg, tasks)
        labels = [lab for _ in cfg.k for _ in cfg.nu for lab, _ in levels]
        keys = [(k, nu) for k in cfg.k for nu in cfg.nu for _ in levels]
    rows = [_report_row(cfg, k, nu, lab, r) for (k, nu), lab, (r, _) in zip(keys, labels, results)]
    header = list(CSV_COLUMNS)
    summary = []
    if with_rates:
        header += [f"rate_{m}" for m in MEASURES]
        tables = {}
        for (key, (r, _)) in zip(keys, results):
            tables.setdefault(key, analysis.ConvergenceTable()).add(r)
        start = 0
        for key, table in tables.items():
            n = len(table.rows)
            for i in range(n):
                rates = []
                for m in MEASURES:
                    rates.append(float("nan") if i == 0 else float(table.rates(m)[i - 1]))
                rows[start + i] += rates
            if n >= 2:
                ls = {m: table.least_squares_rate(m, min(3, n)) for m in MEASURES}
                summary.append((key, ls))
            start += n
    _print_table(header, rows)
    for (k, nu), ls in summary:
        text = ", ".join(f"{m} {v:.3f}" for m, v in ls.items())
        print(f"least-squares rates (k={k}, nu={nu:g}): {text}")
    if cfg.output:
        write_atomic(cfg.output, csv_text(cfg, header, rows))
        timing = [[lab, k, nu, wall] for (k, nu), lab, (_, wall) in zip(keys, labels, results)]
        write_atomic(
            str(cfg.output) + ".timing.csv", csv_text(cfg, ["mesh", "k", "nu", "wall_time"], timing)
        )
        if with_rates:
            write_gnuplot(cfg, keys, results)
    return rows


def write_gnuplot(cfg, keys, results):
    """One ``<stem>_<measure>.dat`` per measure; one gnuplot index block per series."""
    stem = Path(cfg.output).with_suffix("")
    series = {}
    for key, (r, _) in zip(keys, results):
        series.setdefault(key, []).append(r)
    for m in MEASURES:
        lines = [f"# h {m}"]
        for (k, nu), reports in series.items():
            lines.append(f"# family={cfg.family.lower()} k={k} nu={nu!r}")
            lines.extend(f"{r.h!r} {float(getattr(r, m))!r}" for r in reports)
            lines.extend(["", ""])
        write_atomic(f"{stem}_{m}.dat", "\n".join(lines) + "\n")


def cmd_check_element(cfg):
    out = []
    for k in cfg.k:
        report = analysis.check_element_compatibility(cfg.family.lower(), k)
        d = report.as_dict()
        if not report.divergence_free:
            # fixed non-parallelogram cell
            cell = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.3, 1.2]])
            pairing, div = analysis.counterexample(cell)
            d["counterexample"] = {"pairing": pairing, "div_norm": div}
        print(
            f"{d['family']} k={k}: trace residual {d['trace_residual']:.3e}, "
            f"div residual {d['div_residual']:.3e} -> {d['verdict']}"
        )
        if "counterexample" in d:
            ce = d["counterexample"]
            print(f"  counterexample field: pairing {ce['pairing']:.3e}, ||div v|| {ce['div_norm']:.3e}")
        out.append(d)
    text = json.dumps(out if len(out) > 1 else out[0], indent=2, sort_keys=True)
    print(text)
    if cfg.output:
        write_atomic(cfg.output, text + "\n")
    return out


def cmd_inf_sup(cfg):
    rows = []
    for k in cfg.k:
        family = element_family(cfg.family, k)
        for label, args in mesh_levels(cfg):
            mesh = build_mesh(cfg, args)
            try:
                rep = analysis.estimate_inf_sup(mesh, family, cfg.alpha_for(k), cfg.max_dofs)
            except InvalidArgumentError as exc:
                raise UsageError(str(exc)) from None
            rows.append([cfg.family.lower(), k, label, mesh.h, rep.n_velocity, rep.n_pressure, rep.beta])
    header = ["family", "k", "mesh", "h", "n_velocity", "n_pressure", "beta"]
    _print_table(header, rows)
    betas = [r[-1] for r in rows]
    if len(betas) > 1:
        print(f"beta variation (max/min - 1): {max(betas) / min(betas) - 1:.3f}")
    if cfg.output:
        write_atomic(cfg.output, csv_text(cfg, header, rows))
    return rows


def cmd_mesh(cfg):
    levels = mesh_levels(cfg)
    if not cfg.output:
        raise UsageError("mesh needs --output")
    out = Path(cfg.output)
    paths = []
    for label, args in levels:
        mesh = build_mesh(cfg, args)
        path = out if len(levels) == 1 else out.with_name(f"{out.stem}_{args[1]}{out.suffix or '.json'}")
        mesh.save(path)
        paths.append(path)
        print(f"{label}: {mesh.num_cells} cells, {len(mesh.facets)} facets, h={mesh.h:.4g} -> {path}")
    return paths


# --- argument parser -------------------------------------------------------


def _common(p, mesh=True, case=True):
    p.add_argument("--config", help="TOML file with default options (flags win)")
    p.add_argument("--family", help=f"element preset: {', '.join(PRESETS)}")
    p.add_argument("--k", help="velocity degree, or comma list")
    p.add_argument("--alpha", type=float, help="penalty parameter (default 16 k^2)")
    p.add_argument("--output", "-o", help="output file")
    if case:
        p.add_argument("--case", help=f"problem: {', '.join(CASES)}")
        p.add_argument("--nu", help="viscosity, or comma list")
        p.add_argument("--param", action="append", metavar="KEY=VALUE", help="case parameter")
        p.add_argument("--quad", action="append", metavar="KEY=VALUE", help="quadrature override (cell_extra, ...)")
    if mesh:
        p.add_argument("--mesh", help="trapezoid:4,8 | square:4 | bearing:16,32 | path.json[,path.json]")
        p.add_argument("--mesh-opt", action="append", metavar="KEY=VALUE", help="mesh generator option")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser():
    parser = _Parser(prog="hdg-stokes", description="HDG Stokes experiments on affine and curved cells")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    p = sub.add_parser("run", help="solve once per mesh and report errors")
    _common(p)
    p = sub.add_parser("convergence", help="refinement study with rates and gnuplot data")
    _common(p)
    p.add_argument("--reference-k", type=int, help="degree of the reference solution when no exact solution exists")
    p = sub.add_parser("check-element", help="certify a family's reference spaces")
    _common(p, mesh=False, case=False)
    p = sub.add_parser("inf-sup", help="dense inf-sup estimate per mesh")
    _common(p, case=False)
    p.add_argument("--max-dofs", type=int, help="refuse meshes above this size")
    p = sub.add_parser("mesh", help="generate and write mesh JSON")
    p.add_argument("--config")
    p.add_argument("--mesh", required=True)
    p.add_argument("--mesh-opt", action="append", metavar="KEY=VALUE")
    p.add_argument("--param", action="append", metavar="KEY=VALUE", help="bearing geometry (r_i, r_o, e)")
    p.add_argument("--output", "-o", required=True)
    return parser


COMMANDS = {
    "run": lambda cfg: cmd_run(cfg),
    "convergence": lambda cfg: cmd_run(cfg, with_rates=True),
    "check-element": cmd_check_element,
    "inf-sup": cmd_inf_sup,
    "mesh": cmd_mesh,
}


def main(argv=None):
    try:
        ns = build_parser().parse_args(argv)
        cfg = make_config(ns)
        COMMANDS[ns.command](cfg)
    except UsageError as exc:
        print(f"hdg-stokes: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NUMERICAL_ERRORS as exc:
        print(f"hdg-stokes: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except InvalidArgumentError as exc:
        print(f"hdg-stokes: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
