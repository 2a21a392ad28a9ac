"""Manufactured-solution convergence studies and finite-difference gradient checks."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import presets
from .fem import l2_error, mass_matrix, values_of
from .kkt import OptControlProblem, reduced_cost, reduced_gradient, solve_forward, solve_kkt
from .mesh import DomainSpec
from .model import CarreauParams

__all__ = [
    "ConvergenceTable",
    "convergence_rates",
    "mms_linear_kkt",
    "mms_forward",
    "fd_gradient_check",
]

CSV_COLUMNS = ("level", "h", "err_y", "err_p", "rate_y", "rate_p")


def convergence_rates(errors) -> list[float]:
    """Observed orders ``log(e_{k-1}/e_k) / log(h_{k-1}/h_k)`` for consecutive rows.

    A zero error yields ``math.inf``.
    """
    errors = [(float(h), float(e)) for h, e in errors]
    if len(errors) < 2:
        raise ValueError("need at least two (h, error) rows")
    hs = [h for h, _ in errors]
    if any(b >= a for a, b in zip(hs, hs[1:])):
        raise ValueError("h must be strictly decreasing")
    rates = []
    for (h0, e0), (h1, e1) in zip(errors, errors[1:]):
        if e1 == 0 or e0 == 0:
            rates.append(math.inf)
        else:
            rates.append(math.log(e0 / e1) / math.log(h0 / h1))
    return rates


@dataclass
class ConvergenceTable:
    h: list = field(default_factory=list)
    err_y: list = field(default_factory=list)
    err_p: list = field(default_factory=list)
    newton_iters: list = field(default_factory=list)
    quadratic_ratio: list = field(default_factory=list)

    @property
    def rate_y(self) -> list:
        return [math.nan] + convergence_rates(zip(self.h, self.err_y)) if len(self.h) > 1 else [math.nan]

    @property
    def rate_p(self) -> list:
        if not self.err_p:
            return [math.nan] * len(self.h)
        return [math.nan] + convergence_rates(zip(self.h, self.err_p)) if len(self.h) > 1 else [math.nan]

    def rows(self):
        rate_y, rate_p = self.rate_y, self.rate_p
        for k, h in enumerate(self.h):
            yield {
                "level": k,
                "h": h,
                "err_y": self.err_y[k],
                "err_p": self.err_p[k] if self.err_p else None,
                "rate_y": None if k == 0 else rate_y[k],
                "rate_p": None if k == 0 or not self.err_p else rate_p[k],
            }

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in self.rows():
            writer.writerow(["" if row[c] is None else repr(row[c]) if isinstance(row[c], float)
                             else row[c] for c in CSV_COLUMNS])
        return buf.getvalue()

    def __str__(self):
        lines = [f"{'level':>5} {'h':>10} {'err_y':>12} {'rate_y':>7} {'err_p':>12} {'rate_p':>7}"
                 f" {'newton':>6} {'q_ratio':>9}"]
        for k, row in enumerate(self.rows()):
            its = self.newton_iters[k] if k < len(self.newton_iters) else ""
            qr = self.quadratic_ratio[k] if k < len(self.quadratic_ratio) else math.nan
            def fmt(v, spec):
                return format(v, spec) if v is not None else ""
            lines.append(f"{row['level']:>5} {row['h']:>10.5g} {row['err_y']:>12.4e} "
                         f"{fmt(row['rate_y'], '>7.3f'):>7} {fmt(row['err_p'], '>12.4e'):>12} "
                         f"{fmt(row['rate_p'], '>7.3f'):>7} {its:>6} {qr:>9.3g}")
        return "\n".join(lines)


def _unit_problem(d, N, params, rho, f, y_d):
    return OptControlProblem(DomainSpec.unit(d), (N,) * (d + 1), params, rho, f, y_d)


def mms_linear_kkt(d: int, levels: int, rho: float = 1.0, newton_cfg=None,
                   linear_cfg=None) -> ConvergenceTable:
    """Linear heat-equation optimality system against ``y* = t S(x)``, ``p* = (1-t) S(x)``.

    Meshes have ``h = 1/4, 1/8, ..., 1/2^(levels+1)`` in every direction.
    """
    if d not in (1, 2):
        raise ValueError("manufactured KKT study is for d = 1 or 2")
    if not 1 <= levels <= 5:
        raise ValueError("levels must be between 1 and 5")
    data = presets.mms_linear_kkt_data(d, rho)
    table = ConvergenceTable()
    for k in range(levels):
        N = 2 ** (k + 2)
        problem = _unit_problem(d, N, CarreauParams(1.0, 0.0), rho, data["f"], data["y_d"])
        sol = solve_kkt(problem, newton_cfg, linear_cfg)
        if not sol.converged:
            raise RuntimeError(f"KKT solve failed at h = 1/{N}: {sol.stats.message}")
        table.h.append(1.0 / N)
        table.err_y.append(l2_error(problem.mesh, sol.y, data["y"]))
        table.err_p.append(l2_error(problem.mesh, sol.p, data["p"]))
        table.newton_iters.append(sol.newton_iters)
        ratios = sol.stats.quadratic_ratios()
        table.quadratic_ratio.append(ratios[-1] if ratios else math.nan)
    return table


def mms_forward(params: CarreauParams, d: int, levels: int, newton_cfg=None,
                linear_cfg=None) -> ConvergenceTable:
    """State equation alone with ``u = 0`` against ``y* = t S(x)``."""
    if d not in (1, 2):
        raise ValueError("manufactured forward study is for d = 1 or 2")
    if levels < 1:
        raise ValueError("levels must be positive")
    data = presets.mms_forward_data(params, d)
    table = ConvergenceTable()
    for k in range(levels):
        N = 2 ** (k + 2)
        problem = _unit_problem(d, N, params, 1.0, data["f"], presets.zero)
        y, stats = solve_forward(problem, np.zeros(problem.mesh.n_vertices), newton_cfg,
                                 linear_cfg, return_stats=True)
        if not stats.converged:
            raise RuntimeError(f"forward solve failed at h = 1/{N}: {stats.message}")
        table.h.append(1.0 / N)
        table.err_y.append(l2_error(problem.mesh, y, data["y"]))
        table.newton_iters.append(stats.iterations)
        ratios = stats.quadratic_ratios()
        table.quadratic_ratio.append(ratios[-1] if ratios else math.nan)
    return table


def fd_gradient_check(problem: OptControlProblem, u, num_directions: int = 3,
                      eps: float = 1e-5, seed: int = 0, newton_cfg=None, linear_cfg=None,
                      directions=None) -> float:
    """Worst relative mismatch between ``(grad j(u), du)`` and a central difference of ``j``."""
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError("eps must lie in [1e-7, 1e-3]")
    mesh = problem.mesh
    uv = values_of(u)
    M = mass_matrix(mesh)
    grad = reduced_gradient(problem, uv, newton_cfg, linear_cfg).values
    if directions is None:
        rng = np.random.default_rng(seed)
        directions = [rng.standard_normal(mesh.n_vertices) for _ in range(num_directions)]
    worst = 0.0
    for du in directions:
        du = values_of(du)
        analytic = float(grad @ (M @ du))
        j_plus = reduced_cost(problem, uv + eps * du, newton_cfg, linear_cfg)
        j_minus = reduced_cost(problem, uv - eps * du, newton_cfg, linear_cfg)
        fd = (j_plus - j_minus) / (2 * eps)
        scale = max(abs(analytic), abs(fd))
        if scale > 0:
            worst = max(worst, abs(analytic - fd) / scale)
    return worst
