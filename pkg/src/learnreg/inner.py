"""Inner identification problem with a network regularizer.

Minimizes ``1/2 ||S(u) - z_hat||^2 + gamma(r(w, u))`` over box-constrained
piecewise-constant conductivities, with gradients from the adjoint state and
an accelerated projected gradient method.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import fem1d, mlp
from .fem1d import ControlField, Mesh, ProblemData

__all__ = [
    "GAMMAS",
    "StagnationError",
    "InnerProblem",
    "InnerEval",
    "InnerSolution",
    "objective",
    "gradient",
    "evaluate",
    "armijo_init",
    "nesterov_solve",
    "project_box",
    "projected_gradient",
    "regularizer_terms",
    "quadratic_regularizer",
]

log = logging.getLogger(__name__)

GAMMAS = ("identity", "half_squared_norm")
ARMIJO_CAP = 60
VALUE_RTOL = 1e-10


class StagnationError(RuntimeError):
    """No decrease found along the negative gradient within the backtracking cap."""


@dataclass(frozen=True)
class InnerProblem:
    mesh: Mesh
    data: ProblemData
    z_hat: np.ndarray
    weights: mlp.WeightVector
    arch: mlp.Architecture
    group_map: np.ndarray
    bounds: tuple = (0.1, 10.0)
    gamma: str = "identity"

    def __post_init__(self):
        if self.gamma not in GAMMAS:
            raise ValueError(f"unknown gamma {self.gamma!r}")
        if self.gamma == "identity" and self.arch.n_out != 1:
            raise ValueError("gamma = identity requires a scalar network output")
        self.weights.check(self.arch)
        z = np.asarray(self.z_hat, dtype=float)
        if z.shape != (self.mesh.N + 1,):
            raise ValueError(f"target state has shape {z.shape}, expected {(self.mesh.N + 1,)}")
        gmap = np.asarray(self.group_map, dtype=int)
        if gmap.shape != (self.mesh.N,):
            raise ValueError("group_map must assign every mesh cell")
        if gmap.max() + 1 != self.arch.n_in:
            raise ValueError(f"{gmap.max() + 1} control groups but network input is {self.arch.n_in}")
        object.__setattr__(self, "z_hat", z)
        object.__setattr__(self, "group_map", gmap)

    @property
    def n_in(self) -> int:
        return self.arch.n_in

    def control(self, values) -> ControlField:
        return ControlField(np.asarray(values, dtype=float), self.group_map, self.bounds)

    def with_weights(self, weights) -> "InnerProblem":
        return InnerProblem(
            self.mesh, self.data, self.z_hat, weights, self.arch, self.group_map, self.bounds, self.gamma
        )


def _values(u) -> np.ndarray:
    if isinstance(u, ControlField):
        return np.asarray(u.values, dtype=float)
    return np.asarray(u, dtype=float).reshape(-1)


def _gamma_derivs(kind, r):
    if kind == "identity":
        return float(r[0]), np.ones(1), np.zeros((1, 1))
    return 0.5 * float(r @ r), r.copy(), np.eye(r.size)


def regularizer_terms(prob: InnerProblem, u, order: int = 1):
    """Value, gradient and (``order=2``) Hessian of ``u -> gamma(r(w, u))``.

    Returns ``(value, grad, hess, tape, gamma1, gamma2)``; ``hess`` is None for
    ``order < 2``.
    """
    r, tape = mlp.forward(prob.weights, _values(u), prob.arch)
    g0, g1, g2 = _gamma_derivs(prob.gamma, r)
    J = mlp.jacobian_u(prob.weights, tape)
    grad = J.T @ g1
    hess = None
    if order >= 2:
        Hr = mlp.hessian_uu(prob.weights, tape)
        hess = np.einsum("o,oij->ij", g1, Hr) + J.T @ g2 @ J
    return g0, grad, hess, tape, g1, g2


@dataclass
class InnerEval:
    objective: float
    grad: np.ndarray
    y: np.ndarray
    p: np.ndarray


def evaluate(prob: InnerProblem, u, with_gradient: bool = True) -> InnerEval:
    """Objective and adjoint gradient at ``u``, sharing one stiffness factorization."""
    vals = _values(u)
    mesh = prob.mesh
    cells = vals[prob.group_map]
    cb = fem1d.assemble_stiffness(cells, mesh).factor()
    y = fem1d._state(cells, prob.data, mesh, cb)
    res = y - prob.z_hat
    reg, reg_grad, *_ = regularizer_terms(prob, vals)
    J = 0.5 * float(res @ fem1d._mass_matvec(res, mesh)) + reg
    if not with_gradient:
        return InnerEval(J, None, y, None)
    p = fem1d._adjoint(res, mesh, cb)
    pde = np.bincount(
        prob.group_map, weights=fem1d.cell_flux_products(y, p, mesh), minlength=prob.n_in
    )
    return InnerEval(J, reg_grad + pde, y, p)


def objective(prob: InnerProblem, u) -> float:
    return evaluate(prob, u, with_gradient=False).objective


def gradient(prob: InnerProblem, u) -> np.ndarray:
    """Reduced gradient: network term plus per-group ``int y' p'`` from the adjoint."""
    return evaluate(prob, u).grad


def project_box(u, bounds):
    """Componentwise clamp to ``[m, M]``; keeps ControlField in, ControlField out."""
    m, M = bounds
    if isinstance(u, ControlField):
        return u.with_values(np.clip(u.values, m, M))
    return np.clip(np.asarray(u, dtype=float), m, M)


def projected_gradient(u, grad, bounds) -> np.ndarray:
    """Gradient with components zeroed where the box blocks descent."""
    m, M = bounds
    u = _values(u)
    pg = np.array(grad, dtype=float)
    pg[(u <= m) & (pg > 0)] = 0.0
    pg[(u >= M) & (pg < 0)] = 0.0
    return pg


def _noise(a, b):
    # objective values closer than this carry no reliable ordering information
    return VALUE_RTOL * max(abs(a), abs(b), 1e-300)


def armijo_init(prob: InnerProblem, u0, G0, alpha: float = 0.5, J0=None, start: float = 1.0):
    """Backtrack ``alpha^n`` from ``start`` until the projected step strictly decreases J.

    When the trial value is within roundoff of ``J0`` the comparison is
    decided by the slope instead: the step is accepted if the gradient at the
    trial point has not swung past ``-0.9 |G0|^2`` along ``G0``.
    Returns ``(u1, step)`` with ``u1`` a value array.
    """
    u0 = _values(u0)
    G0 = np.asarray(G0, dtype=float)
    if not np.any(G0):
        raise ValueError("Armijo initialization needs a nonzero gradient")
    if J0 is None:
        J0 = objective(prob, u0)
    slope0 = float(G0 @ G0)
    step = start
    for _ in range(ARMIJO_CAP + 1):
        trial = project_box(u0 - step * G0, prob.bounds)
        J1 = objective(prob, trial)
        if abs(J1 - J0) <= _noise(J1, J0):
            if float(gradient(prob, trial) @ G0) >= -0.9 * slope0:
                return trial, step
        elif J1 < J0:
            return trial, step
        step *= alpha
    raise StagnationError(f"no decrease after {ARMIJO_CAP} halvings (|G| = {np.sqrt(slope0):.3e})")


@dataclass
class InnerSolution:
    u: ControlField
    y: np.ndarray
    p: np.ndarray
    grad: np.ndarray
    grad_norm: float
    proj_grad_norm: float
    iterations: int
    objective: float
    converged: bool
    on_boundary: bool
    step: float = float("nan")
    restarts: int = 0
    message: str = ""
    trace: list = field(default_factory=list)


def _solution(prob, x, ev, it, tol, step, restarts, message="", trace=None):
    pg = projected_gradient(x, ev.grad, prob.bounds)
    m, M = prob.bounds
    return InnerSolution(
        u=prob.control(x),
        y=ev.y,
        p=ev.p,
        grad=ev.grad,
        grad_norm=float(np.linalg.norm(ev.grad)),
        proj_grad_norm=float(np.linalg.norm(pg)),
        iterations=it,
        objective=ev.objective,
        converged=bool(np.linalg.norm(pg) <= tol),
        on_boundary=bool(np.any((x <= m) | (x >= M))),
        step=step,
        restarts=restarts,
        message=message,
        trace=trace if trace is not None else [ev.objective],
    )


def nesterov_solve(
    prob: InnerProblem,
    u_init,
    tol: float = 1e-10,
    max_iter: int = 5000,
    alpha: float = 0.5,
) -> InnerSolution:
    """Accelerated projected gradient with Armijo-initialized step and restarts.

    The first step size comes from :func:`armijo_init`.  Each iteration takes
    ``x_n = P(v_n - t G(v_n))`` with ``v_{n+1} = x_n + (n-1)/(n+2) (x_n - x_{n-1})``.
    If the objective increases, the momentum is reset and the step is
    re-chosen by backtracking from ``alpha * t``; if only the momentum points
    uphill (``<G(v), x_n - x_{n-1}> > 0``) the momentum is reset alone.
    Stops once the projected gradient norm is at most ``tol``.  The returned
    ``trace`` lists the objective at every accepted iterate.
    """
    x = project_box(_values(u_init), prob.bounds)
    ev = evaluate(prob, x)
    pg_norm = lambda x_, ev_: np.linalg.norm(projected_gradient(x_, ev_.grad, prob.bounds))
    if pg_norm(x, ev) <= tol:
        return _solution(prob, x, ev, 0, tol, float("nan"), 0)
    try:
        x_new, t = armijo_init(prob, x, projected_gradient(x, ev.grad, prob.bounds), alpha, ev.objective)
    except StagnationError as exc:
        return _solution(prob, x, ev, 0, tol, float("nan"), 0, str(exc))
    trace = [ev.objective]
    x_prev, x = x, x_new
    ev = evaluate(prob, x)
    trace.append(ev.objective)
    it, k, restarts = 1, 1, 0
    while pg_norm(x, ev) > tol and it < max_iter:
        beta = (k - 1) / (k + 2)
        if beta > 0:
            v = project_box(x + beta * (x - x_prev), prob.bounds)
            Gv = gradient(prob, v)
        else:
            v, Gv = x, ev.grad
        x_new = project_box(v - t * Gv, prob.bounds)
        ev_new = evaluate(prob, x_new)
        if ev_new.objective - ev.objective > _noise(ev_new.objective, ev.objective):
            restarts += 1
            try:
                x_new, t = armijo_init(
                    prob, x, projected_gradient(x, ev.grad, prob.bounds), alpha, ev.objective, alpha * t
                )
            except StagnationError as exc:
                return _solution(prob, x, ev, it, tol, t, restarts, str(exc), trace)
            ev_new = evaluate(prob, x_new)
            k = 1
        elif beta > 0 and float(Gv @ (x_new - x)) > 0:
            k = 1
        else:
            k += 1
        x_prev, x, ev = x, x_new, ev_new
        trace.append(ev.objective)
        it += 1
    sol = _solution(prob, x, ev, it, tol, t, restarts, trace=trace)
    if not sol.converged:
        sol.message = f"max_iter={max_iter} reached with projected |G| = {sol.proj_grad_norm:.3e}"
        log.debug(sol.message)
    return sol


def quadratic_regularizer(n_in: int, coef: float = 1.5):
    """Network realizing ``u -> coef * |u|^2`` exactly, for use with ``half_squared_norm``.

    Two identity layers ``u -> sqrt(2 coef) u -> sqrt(2 coef) u``.
    Returns ``(arch, weights)``.
    """
    if coef < 0:
        raise ValueError("coefficient must be nonnegative")
    arch = mlp.Architecture((n_in, n_in, n_in), mlp.Activation("identity"))
    s = np.sqrt(2.0 * coef)
    w = mlp.WeightVector(((s * np.eye(n_in), np.zeros(n_in)), (np.eye(n_in), np.zeros(n_in))))
    return arch, w
