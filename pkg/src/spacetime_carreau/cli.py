"""Command-line drivers: solve, sweep, mms, slice and grad-check.

Exit codes: 0 success, 1 usage or configuration error, 2 solver
non-convergence, 3 verification threshold not met.
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, parse_config
from .fem import evaluate_points, l2_norm_Q, mass_matrix
from .io import (
    SolutionData,
    atomic_open,
    read_solution,
    write_csv,
    write_solution,
    write_vtk_mesh,
    write_vtk_structured_points,
)
from .kkt import KKTSolution, cost_functional, solve_kkt
from .mesh import DomainSpec, SimplexMesh, build_tensor_simplex_mesh
from .model import CarreauParams
from .solver import NewtonConfig
from .verify import fd_gradient_check, mms_forward, mms_linear_kkt

__all__ = [
    "EXIT_OK",
    "EXIT_CONFIG",
    "EXIT_NONCONVERGED",
    "EXIT_THRESHOLD",
    "SWEEP_COLUMNS",
    "solution_stats",
    "extract_time_slice",
    "write_slice",
    "mesh_from_solution",
    "cmd_solve",
    "cmd_sweep",
    "cmd_mms",
    "cmd_gradcheck",
    "cmd_slice",
    "main",
]

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_NONCONVERGED, EXIT_THRESHOLD = 0, 1, 2, 3
RATE_THRESHOLD = 1.8
FD_THRESHOLD = 1e-5
MAX_FORWARD_NEWTON = 8
MAX_QUADRATIC_RATIO = 1e3

SWEEP_COLUMNS = ("rho", "J", "tracking", "energy", "max_abs_u", "l2_u", "newton_iters", "converged")


def solution_stats(problem, sol: KKTSolution) -> dict:
    J, tracking, energy = cost_functional(problem, sol.y, sol.u)
    mesh = problem.mesh
    return {
        "rho": problem.rho,
        "J": J,
        "tracking": tracking,
        "energy": energy,
        "max_abs_u": float(np.max(np.abs(sol.u.values))),
        "l2_y": l2_norm_Q(mesh, sol.y),
        "l2_p": l2_norm_Q(mesh, sol.p),
        "l2_u": l2_norm_Q(mesh, sol.u),
        "newton_iters": sol.newton_iters,
        "converged": bool(sol.converged),
        "final_residual": sol.final_residual,
    }


def mesh_from_solution(solution: SolutionData) -> SimplexMesh:
    dom = solution.footer["config"]["domain"]
    d = solution.D - 1
    domain = DomainSpec(d, tuple(dom["lower"]), tuple(dom["upper"]), float(dom["T"]))
    mesh = build_tensor_simplex_mesh(domain, solution.divisions)
    if mesh.n_vertices != solution.n_vertices:
        raise ValueError("solution file does not match its recorded mesh")
    return mesh


def extract_time_slice(solution: SolutionData, t: float, field: str, raster: int,
                       mesh: SimplexMesh | None = None):
    """Sample ``field`` on an ``m^d`` raster spanning the spatial domain at time ``t``.

    Returns ``(axes, values)``: ``d`` coordinate vectors of length ``m``
    (end points included) and an array of shape ``(m,) * d`` indexed
    ``[i0, i1, ...]`` along the spatial axes.
    """
    mesh = mesh if mesh is not None else mesh_from_solution(solution)
    domain = mesh.domain
    if not 0 <= t <= domain.T:
        raise ValueError(f"slice time {t} outside [0, {domain.T}]")
    if raster < 2:
        raise ValueError("raster must be at least 2")
    values = solution.field(field)
    axes = [np.linspace(lo, hi, raster) for lo, hi in zip(domain.lower, domain.upper)]
    grids = np.meshgrid(*axes, indexing="ij")
    pts = np.column_stack([g.ravel() for g in grids] + [np.full(grids[0].size, float(t))])
    samples = evaluate_points(mesh, values, pts)
    return axes, samples.reshape((raster,) * domain.spatial_dim)


def write_slice(out_dir, stem, axes, values, field) -> list[Path]:
    """Write a slice as CSV (coordinates + value) and, for 2d/3d rasters, VTK."""
    out_dir = Path(out_dir)
    d = len(axes)
    grids = np.meshgrid(*axes, indexing="ij")
    rows = zip(*[g.ravel().tolist() for g in grids], values.ravel().tolist())
    written = [out_dir / f"{stem}.csv"]
    write_csv(written[0], [f"x{i}" for i in range(d)] + [field], rows)
    if d in (2, 3):
        spacing = [a[1] - a[0] for a in axes]
        written.append(out_dir / f"{stem}.vtk")
        write_vtk_structured_points(written[1], values, [a[0] for a in axes], spacing, name=field)
    return written


def _slice_stem(field, t):
    return f"slice_{field}_t{t:g}"


def _write_run(out_dir: Path, config: RunConfig, problem, sol: KKTSolution) -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    stats = solution_stats(problem, sol)
    mesh = problem.mesh
    footer = {"config": config.to_dict(), "stats": stats,
              "residual_history": sol.stats.residual_norms if sol.stats else []}
    data = SolutionData(mesh.dim, tuple(problem.divisions), sol.y.values, sol.p.values,
                        sol.u.values, footer)
    write_solution(out_dir / "solution.csto", data)
    write_csv(out_dir / "stats.csv", ["quantity", "value"], stats.items())
    if sol.stats is not None:
        write_csv(out_dir / "history.csv", ["iteration", "residual", "step_length"],
                  sol.stats.records())
    if mesh.dim in (2, 3):
        write_vtk_mesh(out_dir / "solution.vtk", mesh,
                       {"y": sol.y.values, "p": sol.p.values, "u": sol.u.values})
    out = config.output
    for t in out["slices"]:
        for field in out["fields"]:
            axes, vals = extract_time_slice(data, t, field, out["raster"], mesh=mesh)
            write_slice(out_dir, _slice_stem(field, t), axes, vals, field)
    return stats


def _solve(config: RunConfig, problem, initial=None):
    return solve_kkt(problem, config.newton, config.linear, initial=initial)


def cmd_solve(config: RunConfig, out_dir) -> int:
    """Solve the optimality system for the (single) regularization parameter."""
    rhos = config.rho_list
    if len(rhos) != 1:
        log.error("solve needs a single rho; use sweep for rho_list with %d entries", len(rhos))
        return EXIT_CONFIG
    problem = config.problem(rhos[0])
    sol = _solve(config, problem)
    stats = _write_run(Path(out_dir), config, problem, sol)
    print(f"rho={problem.rho:g} converged={sol.converged} newton_iters={sol.newton_iters} "
          f"J={stats['J']:.6e} max|u|={stats['max_abs_u']:.6e}")
    return EXIT_OK if sol.converged else EXIT_NONCONVERGED


def run_sweep(config: RunConfig, out_dir, warm_start: bool = True) -> list[dict]:
    """Solve for every rho in order and return one stats row per rho."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    base = config.problem(config.rho_list[0])
    rows, previous = [], None
    for rho in config.rho_list:
        problem = base.with_rho(rho)
        if config.data["target"]["type"] == "mms_linear" or config.data["source"]["type"] != "zero":
            problem = config.problem(rho)  # rho-dependent data
        try:
            sol = _solve(config, problem, initial=previous if warm_start else None)
        except Exception as exc:  # divergence is reported, never fatal to the sweep
            log.error("rho=%g failed: %s", rho, exc)
            rows.append({"rho": rho, "J": math.nan, "tracking": math.nan, "energy": math.nan,
                         "max_abs_u": math.nan, "l2_u": math.nan, "newton_iters": 0,
                         "converged": False})
            previous = None
            continue
        stats = _write_run(out_dir / f"rho_{rho:.3e}", config, problem, sol)
        rows.append(stats)
        previous = sol if sol.converged else None
        print(f"rho={rho:g} converged={sol.converged} newton_iters={sol.newton_iters} "
              f"max|u|={stats['max_abs_u']:.6e}")
    write_csv(out_dir / "sweep.csv", SWEEP_COLUMNS,
              ([row[c] for c in SWEEP_COLUMNS] for row in rows))
    return rows


def cmd_sweep(config: RunConfig, out_dir, warm_start: bool = True) -> int:
    rows = run_sweep(config, out_dir, warm_start)
    return EXIT_OK if all(r["converged"] for r in rows) else EXIT_NONCONVERGED


def cmd_mms(case: str, dim: int, levels: int | None = None, out_dir=".", n: float = 3.0,
            c: float = 1.0) -> int:
    """Run a manufactured-solution study, print and save its table."""
    if case == "linear-kkt":
        table = mms_linear_kkt(dim, levels or 4)
        ok = table.rate_y[-1] >= RATE_THRESHOLD and table.rate_p[-1] >= RATE_THRESHOLD
    elif case == "forward":
        table = mms_forward(CarreauParams(n, c), dim, levels or 6)
        ratios = [r for r in table.quadratic_ratio if not math.isnan(r)]
        ok = (table.rate_y[-1] >= RATE_THRESHOLD
              and max(table.newton_iters) <= MAX_FORWARD_NEWTON
              and all(r < MAX_QUADRATIC_RATIO for r in ratios))
    else:
        raise ValueError(f"unknown case {case!r}")
    print(table)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with atomic_open(out_dir / f"mms_{case}_d{dim}.csv", "w", newline="") as fh:
        fh.write(table.to_csv())
    print("PASS" if ok else "FAIL", f"(threshold: rate >= {RATE_THRESHOLD})")
    return EXIT_OK if ok else EXIT_THRESHOLD


def cmd_gradcheck(config: RunConfig, seed: int = 0, eps: float = 1e-5) -> int:
    """Finite-difference check of the reduced gradient at a random control."""
    problem = config.problem()
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(problem.mesh.n_vertices)
    ncfg = NewtonConfig(abs_tol=1e-12, rel_tol=1e-12, max_iters=config.newton.max_iters)
    err = fd_gradient_check(problem, u, eps=eps, seed=seed, newton_cfg=ncfg,
                            linear_cfg=config.linear)
    ok = err <= FD_THRESHOLD
    print(f"max relative FD error = {err:.3e}  {'PASS' if ok else 'FAIL'} "
          f"(threshold {FD_THRESHOLD:g})")
    return EXIT_OK if ok else EXIT_THRESHOLD


def cmd_slice(solution_path, t: float, field: str, raster: int, out_dir=None) -> int:
    solution = read_solution(solution_path)
    axes, values = extract_time_slice(solution, t, field, raster)
    out_dir = Path(out_dir) if out_dir else Path(solution_path).parent
    out_dir.mkdir(parents=True, exist_ok=True)
    for path in write_slice(out_dir, _slice_stem(field, t), axes, values, field):
        print(path)
    return EXIT_OK


def _parser():
    parser = argparse.ArgumentParser(
        prog="spacetime-carreau",
        description="Space-time finite elements for optimal control of Carreau-type flow.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve the optimality system for one rho")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="output directory (default: output.dir of the config)")

    p = sub.add_parser("sweep", help="solve for every rho in rho_list with warm starts")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--cold", action="store_true", help="disable warm starts")

    p = sub.add_parser("mms", help="manufactured-solution convergence study")
    p.add_argument("--case", required=True, choices=["linear-kkt", "forward"])
    p.add_argument("--dim", type=int, default=1, choices=[1, 2])
    p.add_argument("--levels", type=int,
                   help="refinement levels (default 4 for linear-kkt, 6 for forward)")
    p.add_argument("--n", type=float, default=3.0, help="flow index for the forward case")
    p.add_argument("--c", type=float, default=1.0, help="Carreau constant for the forward case")
    p.add_argument("--out", default=".")

    p = sub.add_parser("slice", help="sample a stored field at a fixed time")
    p.add_argument("--solution", required=True)
    p.add_argument("--time", type=float, required=True)
    p.add_argument("--field", choices=["y", "p", "u"], default="u")
    p.add_argument("--raster", type=int, default=33)
    p.add_argument("--out")

    p = sub.add_parser("grad-check", help="finite-difference check of the reduced gradient")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _out_dir(args, config: RunConfig):
    out = args.out or config.data["output"].get("dir")
    if not out:
        raise ConfigError(["output/dir: give --out or output.dir"])
    return Path(out)


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "mms":
            return cmd_mms(args.case, args.dim, args.levels, args.out, args.n, args.c)
        if args.command == "slice":
            return cmd_slice(args.solution, args.time, args.field, args.raster, args.out)
        config = parse_config(args.config)
        if args.command == "grad-check":
            return cmd_gradcheck(config, seed=args.seed)
        out = _out_dir(args, config)
        if args.command == "solve":
            return cmd_solve(config, out)
        return cmd_sweep(config, out, warm_start=not args.cold)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
