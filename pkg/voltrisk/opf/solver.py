"""
Centralized reactive dispatch on the LinDistFlow model.

Over the DER setpoints x = q_gen[D] the problem is

    minimize    ½ xᵀ P x + cᵀ x,        P = 2 R_DD,  c = -2 (R q_load)_D
    subject to  -ū <= x <= ū
                A x <= b,               A = [X_:D; -X_:D],  b = [v̄ - h; h - v̲]

with h = R (p_gen - p_load) - X q_load, so A x - b is exactly
constraint_values(). Box projection is closed form; the voltage rows go
through an augmented Lagrangian whose multipliers are raised by dual ascent
while an accelerated projected-gradient loop handles the box. Every outer
step ends with an active-set polish that solves the equality-constrained KKT
system directly, which is what brings residuals down to the tolerance.

When the voltage polytope misses the box, a phase-one LP detects it and the
problem is re-solved with a quadratic penalty on the constraint slack.
"""

import logging
from dataclasses import dataclass
from functools import partial
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.optimize import linprog

from voltrisk.config import get_config
from voltrisk.exceptions import VoltRiskError, check_length
from voltrisk.feeder.models import FeederModel, SensitivityPair
from voltrisk.opf.models import (
    KktResiduals,
    OperatingCondition,
    OpfSolution,
    SolveStatus,
)

logger = logging.getLogger(__name__)

_TINY = 1e-300
# Phase-one optimum above this counts as an empty polytope
_FEASIBILITY_TOL = 1e-10
_NEWTON_STEPS = 30
_FISTA_CHUNK = 500


class SolverError(VoltRiskError):
    """Base exception for LCQP solves."""

    pass


class NotPositiveDefiniteError(SolverError):
    """The resistance matrix is not positive definite."""

    pass


class IterationLimitError(SolverError):
    """The inner iteration cap was reached before the tolerance."""

    pass


def load_offset(oc: OperatingCondition, s: SensitivityPair) -> np.ndarray:
    """Voltage deviation without inverter support, h = R (p_gen - p_load) - X q_load."""
    check_length("operating condition", oc.n_buses, s.n_buses)
    return s.R @ (oc.p_gen - oc.p_load) - s.X @ oc.q_load


def objective_value(q_gen: np.ndarray, q_load: np.ndarray, R: np.ndarray) -> float:
    """
    Ohmic-loss objective (q_gen)ᵀ R q_gen - 2 (q_load)ᵀ R q_gen.

    Args:
        q_gen: Reactive dispatch per bus
        q_load: Reactive consumption per bus
        R: Resistance sensitivity matrix

    Returns:
        Objective value (pu²)
    """
    q_gen = np.asarray(q_gen, dtype=float)
    q_load = np.asarray(q_load, dtype=float)
    check_length("q_gen", q_gen.shape[0], R.shape[0])
    check_length("q_load", q_load.shape[0], R.shape[0])
    Rq = R @ q_gen
    return float(q_gen @ Rq - 2.0 * q_load @ Rq)


def constraint_values(
    q_gen: np.ndarray,
    oc: OperatingCondition,
    s: SensitivityPair,
    v_bounds: Tuple[float, float],
) -> np.ndarray:
    """
    Voltage constraint values [X q + h - v̄; -X q - h + v̲].

    Nonpositive entries are satisfied constraints.

    Args:
        q_gen: Reactive dispatch per bus
        oc: Operating condition
        s: Sensitivity matrices
        v_bounds: (v_lower, v_upper)

    Returns:
        2N-vector, upper limits first
    """
    q_gen = np.asarray(q_gen, dtype=float)
    check_length("q_gen", q_gen.shape[0], s.n_buses)
    v = s.X @ q_gen + load_offset(oc, s)
    lower, upper = v_bounds
    return np.concatenate([v - upper, -v + lower])


@dataclass(frozen=True, eq=False)
class QpProblem:
    """The LCQP restricted to DER variables."""

    P: np.ndarray
    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    der: np.ndarray

    @property
    def n_vars(self) -> int:
        return int(self.c.shape[0])


def build_problem(
    oc: OperatingCondition, s: SensitivityPair, model: FeederModel
) -> QpProblem:
    """Assemble the reduced problem data for one operating condition."""
    check_length("operating condition", oc.n_buses, model.n_buses)
    der = model.der_indices
    h = load_offset(oc, s)
    lower, upper = model.v_bounds
    X_d = s.X[:, der]
    limits = model.reactive_limits(oc.p_gen)[der]
    return QpProblem(
        P=2.0 * s.R[np.ix_(der, der)],
        c=-2.0 * (s.R @ oc.q_load)[der],
        A=np.vstack([X_d, -X_d]),
        b=np.concatenate([upper - h, h - lower]),
        lower=-limits,
        upper=limits,
        der=der,
    )


def qp_residuals(
    problem: QpProblem, x: np.ndarray, mu: np.ndarray, softened: bool = False
) -> KktResiduals:
    """
    KKT residuals at (x, μ).

    For softened solutions the voltage rows carry their own slack, so only
    stationarity of the penalized objective and the box count.
    """
    gradient = problem.P @ x + problem.c + problem.A.T @ mu
    projected = np.clip(x - gradient, problem.lower, problem.upper)
    stationarity = float(np.max(np.abs(x - projected), initial=0.0))
    box = max(
        float(np.max(x - problem.upper, initial=0.0)),
        float(np.max(problem.lower - x, initial=0.0)),
        0.0,
    )
    if softened:
        return KktResiduals(stationarity, box, 0.0, 0.0)
    r = problem.A @ x - problem.b
    primal = max(box, float(np.max(r, initial=0.0)))
    dual = max(float(np.max(-mu, initial=0.0)), 0.0)
    complementarity = float(np.max(np.abs(mu * r), initial=0.0))
    return KktResiduals(stationarity, primal, dual, complementarity)


def kkt_residuals(
    q_gen: np.ndarray,
    duals: np.ndarray,
    oc: OperatingCondition,
    s: SensitivityPair,
    model: FeederModel,
) -> KktResiduals:
    """
    Evaluate the KKT residuals of a full-length dispatch and its multipliers.

    Stationarity is measured by the projected-gradient mapping
    |x - clip(x - (P x + c + Aᵀμ))|, which folds the box multipliers in.
    """
    problem = build_problem(oc, s, model)
    q_gen = np.asarray(q_gen, dtype=float)
    check_length("q_gen", q_gen.shape[0], model.n_buses)
    duals = np.asarray(duals, dtype=float)
    check_length("duals", duals.shape[0], problem.b.shape[0])
    return qp_residuals(problem, q_gen[problem.der], duals)


def _fista(
    grad: Callable[[np.ndarray], np.ndarray],
    x: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    step: float,
    tol: float,
    budget: int,
) -> Tuple[np.ndarray, int]:
    """
    Accelerated projected gradient with gradient-based restart.

    Stops once the gradient mapping |y - clip(y - step g)| / step falls to
    tol. Returns the last iterate and the number of iterations spent.
    """
    y = x.copy()
    t = 1.0
    for k in range(1, budget + 1):
        g = grad(y)
        x_next = np.clip(y - step * g, lower, upper)
        if np.max(np.abs(x_next - y), initial=0.0) / step <= tol:
            return x_next, k
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        if float(g @ (x_next - x)) > 0.0:
            y = x_next
            t_next = 1.0
        else:
            y = x_next + ((t - 1.0) / t_next) * (x_next - x)
        x, t = x_next, t_next
    return x, budget


def _augmented_gradient(
    problem: QpProblem, mu: np.ndarray, rho: float, x: np.ndarray
) -> np.ndarray:
    multipliers = np.maximum(0.0, mu + rho * (problem.A @ x - problem.b))
    return problem.P @ x + problem.c + problem.A.T @ multipliers


def _penalized_gradient(problem: QpProblem, penalty: float, x: np.ndarray) -> np.ndarray:
    slack = np.maximum(0.0, problem.A @ x - problem.b)
    return problem.P @ x + problem.c + penalty * (problem.A.T @ slack)


def _solve_active_set(
    problem: QpProblem, x: np.ndarray, rows: np.ndarray, delta: float
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Solve the KKT system with the given voltage rows held as equalities.

    Variables within delta of a bound are fixed there; the rest, together
    with the multipliers of the selected rows, solve

        [P_FF  A_SFᵀ] [x_F]   [-c_F - P_FB x_B]
        [A_SF   0   ] [μ_S] = [b_S - A_SB x_B ]
    """
    at_upper = x >= problem.upper - delta
    at_lower = (x <= problem.lower + delta) & ~at_upper
    fixed = at_upper | at_lower
    free = ~fixed
    x_new = np.where(at_upper, problem.upper, np.where(at_lower, problem.lower, x))
    mu_new = np.zeros(problem.b.shape[0])
    n_free = int(free.sum())
    if n_free == 0:
        return x_new, mu_new

    A_s = problem.A[rows]
    n_rows = A_s.shape[0]
    A_sf = A_s[:, free]
    kkt = np.zeros((n_free + n_rows, n_free + n_rows))
    kkt[:n_free, :n_free] = problem.P[np.ix_(free, free)]
    kkt[:n_free, n_free:] = A_sf.T
    kkt[n_free:, :n_free] = A_sf
    rhs = np.concatenate(
        [
            -(problem.c[free] + problem.P[np.ix_(free, fixed)] @ x_new[fixed]),
            problem.b[rows] - A_s[:, fixed] @ x_new[fixed],
        ]
    )
    solution = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
    x_new[free] = solution[:n_free]
    mu_new[rows] = solution[n_free:]
    return x_new, mu_new


def _polish(
    problem: QpProblem, x: np.ndarray, mu: np.ndarray, tol: float
) -> Optional[Tuple[np.ndarray, np.ndarray, KktResiduals]]:
    """Try a few active-set guesses; return the first that meets tol."""
    r = problem.A @ x - problem.b
    scale = max(float(np.max(problem.upper, initial=0.0)), 1.0)
    tried = set()
    for delta in (1e-9 * scale, 1e-6 * scale, 1e-4 * scale):
        for rows in (mu > 0.0, r >= -delta, (mu > 0.0) & (r >= -delta)):
            key = (delta, rows.tobytes())
            if key in tried:
                continue
            tried.add(key)
            x_new, mu_new = _solve_active_set(problem, x, rows, delta)
            residuals = qp_residuals(problem, x_new, mu_new)
            if residuals.max <= tol:
                return x_new, mu_new, residuals
    return None


def _solve_hard(
    problem: QpProblem, x0: np.ndarray, tol: float, max_iter: int
) -> Tuple[np.ndarray, np.ndarray, KktResiduals, int]:
    """Augmented Lagrangian with dual ascent on the voltage multipliers."""
    norm_p = max(float(np.linalg.norm(problem.P, 2)), _TINY)
    norm_a2 = max(float(np.linalg.norm(problem.A, 2)) ** 2, _TINY)
    rho = norm_p / norm_a2
    rho_cap = rho * 1e10
    scale = max(
        float(np.max(np.abs(problem.c), initial=0.0)),
        norm_p * float(np.max(problem.upper, initial=0.0)),
        tol,
    )
    inner_tol = max(1e-3 * scale, tol)

    x = np.clip(x0, problem.lower, problem.upper)
    mu = np.zeros(problem.b.shape[0])
    previous_violation = np.inf
    used = 0
    while used < max_iter:
        grad = partial(_augmented_gradient, problem, mu.copy(), rho)
        step = 1.0 / (norm_p + rho * norm_a2)
        x, spent = _fista(grad, x, problem.lower, problem.upper, step, inner_tol, max_iter - used)
        used += spent

        r = problem.A @ x - problem.b
        mu = np.maximum(0.0, mu + rho * r)

        polished = _polish(problem, x, mu, tol)
        if polished is not None:
            return polished[0], polished[1], polished[2], used
        residuals = qp_residuals(problem, x, mu)
        if residuals.max <= tol:
            return x, mu, residuals, used

        violation = max(float(np.max(r, initial=0.0)), 0.0)
        if violation > 0.25 * previous_violation:
            rho = min(rho * 10.0, rho_cap)
        previous_violation = violation
        inner_tol = max(0.1 * inner_tol, 0.01 * tol)

    raise IterationLimitError(
        f"LCQP did not reach tolerance {tol:g} within {max_iter} iterations"
    )


def _newton_soft(
    problem: QpProblem, x: np.ndarray, penalty: float, tol: float
) -> Optional[Tuple[np.ndarray, np.ndarray, KktResiduals]]:
    """Projected semismooth Newton on the penalized objective."""
    delta = 1e-12 * max(float(np.max(problem.upper, initial=0.0)), 1.0)
    for _ in range(_NEWTON_STEPS):
        g = _penalized_gradient(problem, penalty, x)
        violated = problem.A @ x - problem.b > 0.0
        at_upper = (x >= problem.upper - delta) & (g < 0.0)
        at_lower = (x <= problem.lower + delta) & (g > 0.0)
        free = ~(at_upper | at_lower)
        x_new = np.where(at_upper, problem.upper, np.where(at_lower, problem.lower, x))
        if free.any():
            A_v = problem.A[violated]
            hessian = problem.P + penalty * (A_v.T @ A_v)
            linear = problem.c - penalty * (A_v.T @ problem.b[violated])
            fixed = ~free
            rhs = -(linear[free] + hessian[np.ix_(free, fixed)] @ x_new[fixed])
            x_new[free] = np.linalg.lstsq(hessian[np.ix_(free, free)], rhs, rcond=None)[0]
        x_new = np.clip(x_new, problem.lower, problem.upper)
        mu = penalty * np.maximum(0.0, problem.A @ x_new - problem.b)
        residuals = qp_residuals(problem, x_new, mu, softened=True)
        if residuals.max <= tol:
            return x_new, mu, residuals
        if np.array_equal(x_new, x):
            break
        x = x_new
    return None


def _solve_soft(
    problem: QpProblem, x0: np.ndarray, penalty: float, tol: float, max_iter: int
) -> Tuple[np.ndarray, np.ndarray, KktResiduals, int]:
    """Minimize the objective plus (penalty/2)·|max(0, A x - b)|² over the box."""
    norm_p = float(np.linalg.norm(problem.P, 2))
    norm_a2 = float(np.linalg.norm(problem.A, 2)) ** 2
    step = 1.0 / max(norm_p + penalty * norm_a2, _TINY)
    grad = partial(_penalized_gradient, problem, penalty)

    x = np.clip(x0, problem.lower, problem.upper)
    used = 0
    while True:
        result = _newton_soft(problem, x, penalty, tol)
        if result is not None:
            return result[0], result[1], result[2], used
        if used >= max_iter:
            raise IterationLimitError(
                f"Softened LCQP did not reach tolerance {tol:g} within {max_iter} iterations"
            )
        x, spent = _fista(
            grad, x, problem.lower, problem.upper, step, 0.01 * tol,
            min(_FISTA_CHUNK, max_iter - used),
        )
        used += spent
        mu = penalty * np.maximum(0.0, problem.A @ x - problem.b)
        residuals = qp_residuals(problem, x, mu, softened=True)
        if residuals.max <= tol:
            return x, mu, residuals, used


def _phase_one(problem: QpProblem) -> Tuple[np.ndarray, float]:
    """
    Minimize the total voltage violation over the box with an LP.

    Returns a starting point and the minimal total violation (0 when the
    feasible set is nonempty).
    """
    m = problem.n_vars
    rows = problem.b.shape[0]
    result = linprog(
        c=np.concatenate([np.zeros(m), np.ones(rows)]),
        A_ub=np.hstack([problem.A, -np.eye(rows)]),
        b_ub=problem.b,
        bounds=[(lo, hi) for lo, hi in zip(problem.lower, problem.upper)]
        + [(0.0, None)] * rows,
        method="highs",
    )
    if result.status != 0:
        raise SolverError(f"Phase-one LP failed: {result.message}")
    return np.clip(result.x[:m], problem.lower, problem.upper), float(result.fun)


def solve_lcqp(
    oc: OperatingCondition,
    s: SensitivityPair,
    model: FeederModel,
    tol: Optional[float] = None,
    soften: bool = True,
    max_iter: Optional[int] = None,
    penalty: Optional[float] = None,
) -> OpfSolution:
    """
    Solve the reactive dispatch LCQP for one operating condition.

    Args:
        oc: Operating condition
        s: Sensitivity matrices of the feeder
        model: Feeder (DER locations, reactive limits, voltage bounds)
        tol: KKT tolerance, defaults to the configured solver tolerance
        soften: Re-solve with penalized slack when the constraints are empty
        max_iter: Cap on inner iterations
        penalty: Slack penalty weight for softened solves

    Returns:
        OpfSolution with a full-length dispatch (zero off DER buses)

    Raises:
        NotPositiveDefiniteError: If R is not positive definite
        IterationLimitError: If the iteration cap is hit
    """
    config = get_config()
    tol = config.solver_tol if tol is None else tol
    max_iter = config.solver_max_iter if max_iter is None else max_iter
    penalty = config.soft_penalty if penalty is None else penalty
    if tol <= 0:
        raise SolverError(f"Tolerance must be positive, got {tol}")

    try:
        np.linalg.cholesky(s.R)
    except np.linalg.LinAlgError as e:
        raise NotPositiveDefiniteError("Resistance matrix is not positive definite") from e

    problem = build_problem(oc, s, model)
    q_gen = np.zeros(model.n_buses)

    if problem.n_vars == 0:
        g = -problem.b
        violation = np.maximum(0.0, g)
        if not np.any(violation > 0.0):
            return OpfSolution(
                q_gen, 0.0, 0.0, SolveStatus.OPTIMAL, duals=np.zeros_like(g)
            )
        status = SolveStatus.SOFTENED if soften else SolveStatus.INFEASIBLE
        return OpfSolution(
            q_gen,
            0.0,
            0.0 if soften else float(violation.max()),
            status,
            slack_used=float(violation.sum()),
            duals=penalty * violation if soften else None,
        )

    x0, min_violation = _phase_one(problem)

    if min_violation <= _FEASIBILITY_TOL:
        x, mu, residuals, used = _solve_hard(problem, x0, tol, max_iter)
        status = SolveStatus.OPTIMAL
        slack = 0.0
    elif not soften:
        q_gen[problem.der] = x0
        r = problem.A @ x0 - problem.b
        return OpfSolution(
            q_gen,
            objective_value(q_gen, oc.q_load, s.R),
            float(np.max(r, initial=0.0)),
            SolveStatus.INFEASIBLE,
            slack_used=min_violation,
        )
    else:
        logger.debug(
            "Sample %d: voltage limits unreachable (total violation %.3g), softening",
            oc.timestamp,
            min_violation,
        )
        x, mu, residuals, used = _solve_soft(problem, x0, penalty, tol, max_iter)
        status = SolveStatus.SOFTENED
        slack = float(np.maximum(0.0, problem.A @ x - problem.b).sum())

    q_gen[problem.der] = np.clip(x, problem.lower, problem.upper)
    return OpfSolution(
        q_gen=q_gen,
        objective=objective_value(q_gen, oc.q_load, s.R),
        kkt_residual=residuals.max,
        status=status,
        slack_used=slack,
        duals=mu,
        iterations=used,
    )
