"""Command-line front end.

    fracfem mesh --cube -n 4 --dim 3 --out out/
    fracfem mesh --info out/cube.node out/cube.ele
    fracfem assemble --preset cube -n 8 --beta 0.8 0.8 0.8 --out out/
    fracfem convergence --preset ball-paper --beta 0.8 0.8 0.8 --levels 3 --out out/
    fracfem trace --cube -n 4 --point 0.3 0.4 0.6 --axis 0 --side left
    fracfem trace --ball -n 6 --seed 7 --axis 2 --side right
    fracfem bench --sizes 4 8 12 --out out/

Settings come from built-in defaults, then a ``[run]`` section of the file
given by ``--config``, then command-line flags.  The resolved settings are
written to ``<out>/config.ini``.  Exit status: 0 success, 2 invalid input,
1 runtime failure.
"""
from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .assembly import assemble, classical_term, matrix_stats
from .io import write_csv, write_matrix_market
from .mesh import generate_ball_mesh, generate_cube_mesh, load_mesh, save_mesh
from .problem import (ball_problem, convergence_study, cube_problem, weak_form_terms,
                      write_convergence_csv)
from .raypath import trace_path

log = logging.getLogger("fracfem")

PRESETS = ("cube", "ball-paper")
LEVELS = {"cube": (4, 8, 16, 24), "ball-paper": (6, 12, 20)}


class ValidationError(ValueError):
    pass


@dataclass
class RunConfig:
    preset: str = "cube"
    dim: int = 3
    beta: list = field(default_factory=lambda: [0.8, 0.8, 0.8])
    coefficients: str = "trig"
    mesh: str = "generate"          # 'generate' or 'file'
    sizes: list = field(default_factory=list)
    levels: int = 0
    node: str = ""
    ele: str = ""
    radius: float = 0.5
    quadrature_degree: int = 2
    solver_tol: float = 1e-10
    max_iter: int = 2000
    threads: int = 0                # 0: all cores
    seed: int = 42
    out: str = "fracfem-out"
    classical: bool = False
    mode: str = "pattern"

    def validate(self):
        if self.preset not in PRESETS:
            raise ValidationError(f"preset must be one of {PRESETS}, got {self.preset!r}")
        if self.dim not in (2, 3):
            raise ValidationError(f"dim must be 2 or 3, got {self.dim}")
        if self.preset == "ball-paper" and self.dim != 3:
            raise ValidationError("the ball-paper preset is three-dimensional")
        if len(self.beta) == 1:
            self.beta = self.beta * self.dim
        if len(self.beta) != self.dim:
            raise ValidationError(f"need {self.dim} beta values, got {len(self.beta)}")
        for b in self.beta:
            if not 0.0 < b < 1.0:
                raise ValidationError(f"beta components must lie in (0, 1), got {b}")
        if self.coefficients not in ("trig", "constant"):
            raise ValidationError("coefficients must be 'trig' or 'constant'")
        if self.mesh not in ("generate", "file"):
            raise ValidationError("mesh must be 'generate' or 'file'")
        if self.mesh == "file" and not (self.node and self.ele):
            raise ValidationError("mesh = file needs node and ele paths")
        if any(n < 1 for n in self.sizes):
            raise ValidationError("mesh sizes must be positive")
        if self.quadrature_degree not in (1, 2, 3, 4):
            raise ValidationError("quadrature degree must be 1..4")
        if not self.solver_tol > 0:
            raise ValidationError("solver tolerance must be positive")
        if self.threads < 0:
            raise ValidationError("threads must be >= 0")
        if self.mode not in ("pattern", "hashmap"):
            raise ValidationError("mode must be 'pattern' or 'hashmap'")
        return self

    @property
    def n_threads(self):
        return self.threads or os.cpu_count() or 1

    def problem(self):
        if self.preset == "cube":
            return cube_problem(self.dim, tuple(self.beta), self.coefficients)
        return ball_problem(tuple(self.beta), self.radius, self.dim)

    def level_sizes(self):
        sizes = list(self.sizes) or list(LEVELS[self.preset])
        if self.levels:
            if self.levels > len(sizes):
                raise ValidationError(f"only {len(sizes)} mesh sizes configured")
            sizes = sizes[:self.levels]
        return sizes

    def write(self, path):
        cp = configparser.ConfigParser()
        cp["run"] = {f.name: _fmt(getattr(self, f.name)) for f in fields(self)}
        with open(path, "w") as fh:
            cp.write(fh)


def _fmt(v):
    if isinstance(v, list):
        return " ".join(repr(x) if isinstance(x, float) else str(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def _coerce(name, text):
    proto = {f.name: f for f in fields(RunConfig)}[name]
    default = RunConfig().__getattribute__(name)
    try:
        if isinstance(default, bool):
            return text.strip().lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, list):
            kind = float if name == "beta" else int
            return [kind(t) for t in text.replace(",", " ").split()]
        return text.strip()
    except ValueError:
        raise ValidationError(f"config key {proto.name!r}: cannot parse {text!r}") from None


def load_config(path) -> dict:
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise ValidationError(f"cannot read config file {path}")
    if "run" not in cp:
        raise ValidationError(f"config file {path} has no [run] section")
    known = {f.name for f in fields(RunConfig)}
    out = {}
    for key, text in cp["run"].items():
        key = key.replace("-", "_")
        if key not in known:
            raise ValidationError(f"unknown config key {key!r} in {path}")
        out[key] = _coerce(key, text)
    return out


def resolve_config(args) -> RunConfig:
    values = {}
    if getattr(args, "config", None):
        values.update(load_config(args.config))
    for f in fields(RunConfig):
        if hasattr(args, f.name):
            values[f.name] = getattr(args, f.name)
    if getattr(args, "n", None) is not None:
        values["sizes"] = list(args.n)
    if getattr(args, "cube", False):
        values["preset"] = "cube"
    if getattr(args, "ball", False):
        values["preset"] = "ball-paper"
    if getattr(args, "mesh_files", None):
        values["mesh"] = "file"
        values["node"], values["ele"] = args.mesh_files
    return RunConfig(**values).validate()


def _out_dir(cfg):
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ValidationError(f"output directory {out} is not writable: {exc}") from None
    if not os.access(out, os.W_OK):
        raise ValidationError(f"output directory {out} is not writable")
    return out


def _mesh_from(cfg, N=None):
    if cfg.mesh == "file":
        return load_mesh(cfg.node, cfg.ele)
    N = N if N is not None else (cfg.sizes[0] if cfg.sizes else LEVELS[cfg.preset][0])
    if cfg.preset == "cube":
        return generate_cube_mesh(N, cfg.dim)
    return generate_ball_mesh(N, cfg.radius, cfg.dim)


def _print_summary(mesh, stream=None):
    stream = stream or sys.stdout
    for k, v in mesh.summary().items():
        print(f"{k:>18}: {v:.6g}" if isinstance(v, float) else f"{k:>18}: {v}", file=stream)


# -- commands -----------------------------------------------------------------

def cmd_mesh(args):
    if args.info:
        mesh = load_mesh(*args.info)
        _print_summary(mesh)
        return 0
    cfg = resolve_config(args)
    out = _out_dir(cfg)
    mesh = _mesh_from(cfg)
    stem = "cube" if cfg.preset == "cube" else "ball"
    save_mesh(mesh, out / f"{stem}.node", out / f"{stem}.ele")
    _print_summary(mesh)
    print(f"wrote {out / stem}.node, {out / stem}.ele", file=sys.stderr)
    return 0


def cmd_assemble(args):
    cfg = resolve_config(args)
    out = _out_dir(cfg)
    mesh = _mesh_from(cfg)
    if cfg.mesh == "generate" and not cfg.sizes:
        cfg.sizes = [LEVELS[cfg.preset][0]]
    cfg.write(out / "config.ini")
    problem = cfg.problem()
    terms = ([classical_term(i) for i in range(cfg.dim)] if cfg.classical
             else weak_form_terms(problem))
    rhs = None if cfg.classical else problem.rhs_field()
    system = assemble(mesh, terms, cfg.quadrature_degree, rhs, "boundary",
                      threads=cfg.n_threads, mode=cfg.mode)
    stats = matrix_stats(system)
    stats["pattern_nnz"] = system.pattern.nnz
    stats["pattern_density"] = system.pattern.density
    stats.update({f"{k}_seconds": v for k, v in system.timings.items()})
    write_matrix_market(out / "matrix.mtx", system.matrix)
    write_matrix_market(out / "pattern.mtx", system.pattern.to_csr(float), pattern_only=True)
    np.savetxt(out / "rhs.txt", system.rhs, fmt="%.17g")
    with open(out / "stats.json", "w") as fh:
        json.dump(stats, fh, indent=2)
    for k, v in stats.items():
        print(f"{k:>22}: {v:.6g}" if isinstance(v, float) else f"{k:>22}: {v}")
    return 0


def format_table(records):
    lines = [f"{'h':>10} {'dofs':>7} {'L2 error':>10} {'order':>6} {'Linf error':>10} {'order':>6}"
             f" {'assembly s':>10} {'solve s':>8}"]
    for r in records:
        o2 = "" if r.l2_order is None else f"{r.l2_order:.2f}"
        oi = "" if r.linf_order is None else f"{r.linf_order:.2f}"
        lines.append(f"{r.h:10.6f} {r.num_dofs:7d} {r.l2_error:10.2e} {o2:>6} {r.linf_error:10.2e}"
                     f" {oi:>6} {r.assembly_seconds:10.2f} {r.solve_seconds:8.2f}")
    return "\n".join(lines)


def cmd_convergence(args):
    cfg = resolve_config(args)
    out = _out_dir(cfg)
    problem = cfg.problem()
    if cfg.mesh == "file":
        levels = [load_mesh(cfg.node, cfg.ele)]
    else:
        levels = cfg.sizes = cfg.level_sizes()
        cfg.levels = 0
    cfg.write(out / "config.ini")
    records = convergence_study(problem, levels, cfg.quadrature_degree, cfg.solver_tol,
                                threads=cfg.n_threads, max_iter=cfg.max_iter,
                                progress=lambda r: log.info("level %d done (h=%.4g)", r.level, r.h),
                                vtk_dir=out)
    write_convergence_csv(records, out / "convergence.csv")
    print(format_table(records))
    return 0


def cmd_trace(args):
    cfg = resolve_config(args)
    mesh = _mesh_from(cfg)
    if args.point is None:
        # seeded random point inside a random simplex
        rng = np.random.default_rng(cfg.seed)
        e = int(rng.integers(mesh.num_simplices))
        point = rng.dirichlet(np.ones(mesh.dim + 1)) @ mesh.vertices[mesh.simplices[e]]
        print(f"point {' '.join(repr(float(c)) for c in point)}", file=sys.stderr)
    else:
        point = np.asarray(args.point, dtype=float)
    if point.shape != (mesh.dim,):
        raise ValidationError(f"point needs {mesh.dim} coordinates")
    if not 0 <= args.axis < mesh.dim:
        raise ValidationError(f"axis must be in 0..{mesh.dim - 1}")
    path = trace_path(mesh, point, args.axis, args.side)
    rows = path.to_csv_rows(mesh)
    header = ("segment_index", "simplex_id", "r_min", "r_max", "exit_entity")
    if args.csv:
        write_csv(args.csv, header, rows)
    else:
        print(",".join(header))
        for r in rows:
            print(",".join(repr(v) if isinstance(v, float) else str(v) for v in r))
    chord = abs(point[args.axis] - path.chord_bound)
    print(f"segments {len(rows)}, sum of lengths {path.length:.17g}, chord length {chord:.17g}, "
          f"difference {abs(path.length - chord):.3e}", file=sys.stderr)
    return 0


def cmd_bench(args):
    from .bench import VARIANTS, backend_comparison, ranking_checks, run_benchmark
    cfg = resolve_config(args)
    out = _out_dir(cfg)
    sizes = cfg.sizes or [4, 8, 12]
    rows = run_benchmark(sizes, cfg.dim, args.variants or VARIANTS, cfg.quadrature_degree,
                         cfg.n_threads, repeats=args.repeats)
    write_csv(out / "bench.csv", ("elements", "variant", "seconds"),
              [(r.elements, r.variant, repr(r.seconds)) for r in rows])
    print("elements,variant,seconds")
    for r in rows:
        print(f"{r.elements},{r.variant},{r.seconds:.6f}")
    for k, v in ranking_checks(rows).items():
        print(f"{k}: {v}", file=sys.stderr)
    if args.backends:
        ne, times = backend_comparison()
        for name, sec in times.items():
            print(f"backend {name} ({ne} elements): {sec:.4f}s", file=sys.stderr)
    return 0


# -- parser -------------------------------------------------------------------

def _common(p, suppress):
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", default=d, help="settings file with a [run] section")
    p.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    p.add_argument("--threads", type=int, default=argparse.SUPPRESS,
                   help="assembly threads (0 = all cores)")
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    p.add_argument("--quadrature-degree", dest="quadrature_degree", type=int,
                   default=argparse.SUPPRESS)
    p.add_argument("--solver-tol", dest="solver_tol", type=float, default=argparse.SUPPRESS)
    p.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS)


def _problem_flags(p):
    p.add_argument("--preset", choices=PRESETS, default=argparse.SUPPRESS)
    p.add_argument("--dim", type=int, default=argparse.SUPPRESS)
    p.add_argument("--beta", type=float, nargs="+", default=argparse.SUPPRESS)
    p.add_argument("--coefficients", choices=("trig", "constant"), default=argparse.SUPPRESS)
    p.add_argument("-n", type=int, nargs="+", default=None, help="mesh subdivisions")
    p.add_argument("--mesh-files", nargs=2, metavar=("NODE", "ELE"), default=None)


def build_parser():
    parser = argparse.ArgumentParser(prog="fracfem", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"fracfem {__version__}")
    _common(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mesh", help="generate or inspect a mesh")
    _common(p, True)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--cube", action="store_true")
    g.add_argument("--ball", action="store_true")
    g.add_argument("--info", nargs=2, metavar=("NODE", "ELE"))
    p.add_argument("-n", type=int, nargs=1, default=None)
    p.add_argument("--dim", type=int, default=argparse.SUPPRESS)
    p.add_argument("-o", dest="out", default=argparse.SUPPRESS)
    p.set_defaults(func=cmd_mesh)

    p = sub.add_parser("assemble", help="assemble and export the stiffness matrix")
    _common(p, True)
    _problem_flags(p)
    p.add_argument("--classical", action="store_true", default=argparse.SUPPRESS)
    p.add_argument("--mode", choices=("pattern", "hashmap"), default=argparse.SUPPRESS)
    p.set_defaults(func=cmd_assemble)

    p = sub.add_parser("convergence", help="manufactured-solution convergence study")
    _common(p, True)
    _problem_flags(p)
    p.add_argument("--levels", type=int, default=argparse.SUPPRESS)
    p.add_argument("--max-iter", dest="max_iter", type=int, default=argparse.SUPPRESS)
    p.set_defaults(func=cmd_convergence)

    p = sub.add_parser("trace", help="dump one integration path as CSV")
    _common(p, True)
    _problem_flags(p)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--cube", action="store_true")
    g.add_argument("--ball", action="store_true")
    p.add_argument("--point", type=float, nargs="+", default=None,
                   help="evaluation point (default: random, from --seed)")
    p.add_argument("--axis", type=int, default=0, help="0-based axis")
    p.add_argument("--side", choices=("left", "right"), default="left")
    p.add_argument("--csv", help="write CSV here instead of standard output")
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("bench", help="time assembly variants")
    _common(p, True)
    p.add_argument("--sizes", dest="n", type=int, nargs="+", default=None)
    p.add_argument("--dim", type=int, default=argparse.SUPPRESS)
    p.add_argument("--variants", nargs="+", default=None)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--backends", action="store_true", help="also compare kernel backends")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.INFO if getattr(args, "verbose", 0) else logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ValueError as exc:
        print(f"fracfem: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"fracfem: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
