"""L1-ball-constrained weighted least squares.

The one optimization primitive the trainer needs: minimize a weighted
sum-of-squares residual over an L1 ball (optionally intersected with the
nonnegative orthant), with selected coordinates (the bias) exempt from the
constraint.  Solved by projected gradient with an exact sort-based
projection; no external QP dependency.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, SolverError

MAX_ITERS = 10_000
STEP_TOL = 1e-10
POWER_STEPS = 30


@dataclass
class WlsProblem:
    """Weighted least squares over an L1 ball.

    minimize    sum_m  w_m * (a_m . z - b_m)^2
    subject to  ||z_restricted||_1 <= radius,  z_restricted >= 0 if flagged

    Coordinates listed in ``free_coords`` bypass both constraints.
    """

    design: np.ndarray
    target: np.ndarray
    row_weights: np.ndarray
    radius: float
    free_coords: tuple[int, ...] = ()
    nonnegative: bool = False

    def __post_init__(self):
        self.design = np.atleast_2d(np.asarray(self.design, dtype=float))
        self.target = np.asarray(self.target, dtype=float).ravel()
        self.row_weights = np.asarray(self.row_weights, dtype=float).ravel()
        m, p = self.design.shape
        if self.target.shape != (m,) or self.row_weights.shape != (m,):
            raise ConfigError("design/target/weight shapes inconsistent")
        if not np.all(np.isfinite(self.row_weights)) or np.any(self.row_weights < 0):
            raise ConfigError("row weights must be finite and nonnegative")
        if not self.radius > 0:
            raise ConfigError("radius must be positive")


@dataclass
class SolveReport:
    solution: np.ndarray
    iterations: int
    final_objective: float
    constraint_slack: float
    objective_trace: list[float] = field(default_factory=list)


def project_l1_ball(v, radius, nonnegative=False):
    """Euclidean projection of ``v`` onto {||z||_1 <= radius}.

    When ``nonnegative`` is set, v is first clamped to the nonnegative
    orthant, which makes the result the projection onto the intersection
    of ball and orthant.  Sort-based thresholding, exact up to float error.
    """
    if not radius > 0:
        raise ConfigError("radius must be positive")
    v = np.asarray(v, dtype=float)
    if nonnegative:
        v = np.maximum(v, 0.0)
    mag = np.abs(v)
    if mag.sum() <= radius:
        return v.copy()
    u = np.sort(mag)[::-1]
    css = np.cumsum(u)
    ranks = np.arange(1, v.size + 1)
    rho = np.nonzero(u * ranks > css - radius)[0][-1]
    theta = (css[rho] - radius) / (rho + 1.0)
    return np.sign(v) * np.maximum(mag - theta, 0.0)


def unconstrained_wls(design, target, row_weights, ridge=0.0):
    """Ridge-stabilized weighted least squares via the normal equations.

    Solves (A'WA + ridge*I) z = A'Wb with a dense factorization.
    """
    a = np.atleast_2d(np.asarray(design, dtype=float))
    b = np.asarray(target, dtype=float).ravel()
    w = np.asarray(row_weights, dtype=float).ravel()
    if ridge < 0:
        raise ConfigError("ridge must be nonnegative")
    gram = (a * w[:, None]).T @ a
    if ridge > 0:
        gram = gram + ridge * np.eye(a.shape[1])
    rhs = a.T @ (w * b)
    try:
        return np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError as exc:
        raise SolverError("normal equations numerically singular") from exc


def enumerate_subsets(k, budget):
    """All subsets of {0..k-1} with 1 <= |S| <= budget, lexicographic within size."""
    if budget < 1 or budget > k:
        raise ConfigError(f"subset budget {budget} out of range for k={k}")
    if math.comb(k, budget) > 1_000_000:
        raise ConfigError(f"C({k},{budget}) exceeds the enumeration guard")
    for size in range(1, budget + 1):
        yield from itertools.combinations(range(k), size)


def _quad_objective(gram, lin, const, z):
    return float(z @ gram @ z - 2.0 * lin @ z + const)


def solve(problem: WlsProblem, warm_start=None, collect_trace=False) -> SolveReport:
    """Projected-gradient solve of a WlsProblem.

    Step size 1/L with L estimated by power iteration on the weighted
    normal matrix (10% safety margin).  Stops on iterate change below
    ``STEP_TOL`` or after ``MAX_ITERS`` iterations.  The objective is
    non-increasing from the (projected) warm start.
    """
    a, b, w = problem.design, problem.target, problem.row_weights
    m, p = a.shape
    gram = (a * w[:, None]).T @ a
    lin = a.T @ (w * b)
    const = float(w @ b**2)

    restricted = np.array(
        [j for j in range(p) if j not in problem.free_coords], dtype=int
    )

    def proj(z):
        z = np.asarray(z, dtype=float).copy()
        if restricted.size:
            z[restricted] = project_l1_ball(
                z[restricted], problem.radius, problem.nonnegative
            )
        return z

    z = proj(np.zeros(p) if warm_start is None else warm_start)
    obj0 = _quad_objective(gram, lin, const, z)
    trace = [obj0] if collect_trace else []

    # Lipschitz constant of the gradient: 2 * lambda_max(A'WA).
    rng = np.random.default_rng(0)
    v = rng.standard_normal(p)
    lam = 0.0
    for _ in range(POWER_STEPS):
        hv = gram @ v
        norm = np.linalg.norm(hv)
        if norm == 0.0:
            break
        v = hv / norm
        lam = float(v @ gram @ v)
    if lam <= 0.0:
        # Objective is constant in z (zero design or weights): any feasible
        # point is optimal.
        slack = problem.radius - np.abs(z[restricted]).sum() if restricted.size else 0.0
        return SolveReport(z, 0, obj0, float(slack), trace)

    step = 1.0 / (1.1 * 2.0 * lam)
    iterations = 0
    for iterations in range(1, MAX_ITERS + 1):
        grad = 2.0 * (gram @ z - lin)
        z_new = proj(z - step * grad)
        delta = np.max(np.abs(z_new - z))
        z = z_new
        if collect_trace:
            trace.append(_quad_objective(gram, lin, const, z))
        if delta < STEP_TOL:
            break
    final = _quad_objective(gram, lin, const, z)
    if iterations == MAX_ITERS and final > obj0 + 1e-12:
        raise SolverError("projected gradient failed to decrease the objective")
    slack = problem.radius - np.abs(z[restricted]).sum() if restricted.size else 0.0
    return SolveReport(z, iterations, final, float(slack), trace)
