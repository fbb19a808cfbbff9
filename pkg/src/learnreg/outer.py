"""Learning regularizer weights from solved identification tasks.

The inner problems are replaced by their stationarity condition
``G(u_k, w, z_k) = 0``.  For fixed weights each ``u_k`` is computed by the
inner solver, the inner Hessian ``G'_u`` is assembled densely, and the costate
``mu_k`` solving ``G'_u^T mu_k = -(u_k - u_hat_k)`` gives the weight gradient

    grad_l = nu w_l + 1/K sum_k  (G'_{w_l}(u_k, w, z_k))^* mu_k.

Weights are trained with a Barzilai-Borwein method bootstrapped by Armijo
backtracking.
"""
from __future__ import annotations

import logging
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import fem1d, inner, mlp
from .fem1d import Mesh, ProblemData

__all__ = [
    "NumericalError",
    "InitializationError",
    "DataSet",
    "OuterConfig",
    "OuterEval",
    "TrainReport",
    "assemble_hessian",
    "epsilon_shift",
    "solve_costate",
    "weight_adjoint",
    "outer_objective",
    "outer_gradient",
    "barzilai_borwein",
    "bb_solve",
    "relative_misfit",
]

log = logging.getLogger(__name__)


class NumericalError(ArithmeticError):
    """Non-finite or inconsistent linear algebra."""


class InitializationError(RuntimeError):
    """Armijo bootstrap of the outer method found no decrease; try other initial weights."""


@dataclass(frozen=True)
class DataSet:
    """K pairs ``(z_hat_k, u_hat_k)`` sharing mesh, problem data and control layout."""

    mesh: Mesh
    data: ProblemData
    z_hats: np.ndarray
    u_hats: np.ndarray
    group_map: np.ndarray
    bounds: tuple = (0.1, 10.0)

    def __post_init__(self):
        z = np.atleast_2d(np.asarray(self.z_hats, dtype=float))
        u = np.atleast_2d(np.asarray(self.u_hats, dtype=float))
        gmap = np.asarray(self.group_map, dtype=int)
        if z.shape[0] != u.shape[0] or z.shape[0] < 1:
            raise ValueError(f"need K >= 1 matching pairs, got {z.shape[0]} states and {u.shape[0]} controls")
        if z.shape[1] != self.mesh.N + 1:
            raise ValueError(f"states have {z.shape[1]} nodes, mesh has {self.mesh.N + 1}")
        if gmap.shape != (self.mesh.N,) or gmap.max() + 1 != u.shape[1]:
            raise ValueError("group_map inconsistent with mesh or control dimension")
        m, M = self.bounds
        if np.any(u < m) or np.any(u > M):
            raise ValueError(f"ground-truth controls leave the admissible box {self.bounds}")
        for a in (z, u, gmap):
            a.setflags(write=False)
        object.__setattr__(self, "z_hats", z)
        object.__setattr__(self, "u_hats", u)
        object.__setattr__(self, "group_map", gmap)
        object.__setattr__(self, "bounds", (float(m), float(M)))

    @property
    def K(self) -> int:
        return self.z_hats.shape[0]

    @property
    def n_in(self) -> int:
        return self.u_hats.shape[1]

    def mean_control(self) -> np.ndarray:
        return self.u_hats.mean(axis=0)

    def problem(self, k: int, weights, arch, gamma: str = "identity") -> inner.InnerProblem:
        return inner.InnerProblem(
            self.mesh, self.data, self.z_hats[k], weights, arch, self.group_map, self.bounds, gamma
        )

    def control_weights(self) -> np.ndarray:
        """Measure of each control group, for the cell-weighted control norm."""
        return np.bincount(self.group_map, minlength=self.n_in) * self.mesh.h


@dataclass
class OuterConfig:
    nu: float = 0.0
    eps_shift: float = 1e-8
    tol: float = 1e-8
    max_steps: int = 100
    beta: float = 0.5
    inner_tol: float = 1e-10
    inner_max_iter: int = 5000
    gamma: str = "identity"
    weighted_norm: bool = False
    bb_bounds: tuple = (1e-8, 1e3)
    bb_fallback: str = "ratio"
    armijo_cap: int = 60
    workers: int = 1
    warm_start: bool = True
    bb_memory: int = 0
    seed: int = 0

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if not 0 < self.beta < 1:
            raise ValueError("beta must lie in (0, 1)")
        if self.nu < 0 or self.eps_shift < 0:
            raise ValueError("nu and eps_shift must be nonnegative")
        if self.bb_memory < 0:
            raise ValueError("bb_memory must be nonnegative")
        if self.bb_fallback not in ("ratio", "previous"):
            raise ValueError(f"bb_fallback must be 'ratio' or 'previous', got {self.bb_fallback!r}")


def assemble_hessian(prob: inner.InnerProblem, u, y, p, symmetrize: bool = True) -> np.ndarray:
    """Dense ``G'_u`` at a state/adjoint pair.

    Sum of the Gauss-Newton term ``S'^T M S'``, the second-order state term
    ``int e_i y_j' p' + e_j y_i' p'`` (``y_j = S'(u) e_j``) and the network
    curvature ``gamma' r_uu + r_u^T gamma'' r_u``.
    """
    uf = u if isinstance(u, fem1d.ControlField) else prob.control(u)
    mesh = prob.mesh
    n = prob.n_in
    basis = np.eye(n)[:, prob.group_map]  # (n_in, N) cell indicator of each group
    yt = fem1d.solve_linearized(uf, y, basis, mesh)  # rows: S'(u) e_j
    Myt = fem1d._mass_matvec(yt.T, mesh).T
    T_gn = yt @ Myt.T
    # flux[j, c] = int_c y_j' p'; summed over cells of group i
    flux = fem1d.cell_flux_products(yt, p[None, :], mesh)
    T_state = basis @ flux.T
    T_state = T_state + T_state.T
    _, _, T_net, *_ = inner.regularizer_terms(prob, uf.values, order=2)
    H = T_gn + T_state + T_net
    if not np.all(np.isfinite(H)):
        raise NumericalError("non-finite entries in the inner Hessian")
    return 0.5 * (H + H.T) if symmetrize else H


def _factorizes(H: np.ndarray) -> bool:
    scale = np.linalg.norm(H)
    if scale == 0.0:
        return False
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, _ = scipy.linalg.lu_factor(H, check_finite=False)
    return bool(np.min(np.abs(np.diag(lu))) > 1e-12 * scale)


def epsilon_shift(H, eps_request: float = 1e-8):
    """Return ``(H, 0)`` if ``H`` factorizes, else ``H + eps I`` with ``eps = eps_request * 2^j`` minimal."""
    H = np.asarray(H, dtype=float)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {H.shape}")
    if _factorizes(H):
        return H, 0.0
    eps = eps_request if eps_request > 0 else 1e-8
    eye = np.eye(H.shape[0])
    while not _factorizes(H + eps * eye):
        eps *= 2.0
    return H + eps * eye, eps


def solve_costate(H, u, u_hat, metric=None) -> np.ndarray:
    """``mu`` with ``H^T mu = -(u - u_hat)`` (or ``-W (u - u_hat)`` for a diagonal metric ``W``)."""
    d = np.asarray(u, dtype=float) - np.asarray(u_hat, dtype=float)
    if metric is not None:
        d = metric * d
    if not np.any(d):
        return np.zeros_like(d)
    Ht = np.asarray(H, dtype=float).T
    lu = scipy.linalg.lu_factor(Ht)
    mu = scipy.linalg.lu_solve(lu, -d)
    for _ in range(2):  # iterative refinement
        res = Ht @ mu + d
        mu = mu - scipy.linalg.lu_solve(lu, res)
    if not np.all(np.isfinite(mu)):
        raise NumericalError("costate solve produced non-finite values")
    return mu


def weight_adjoint(prob: inner.InnerProblem, u, mu) -> np.ndarray:
    """Flat vector ``(G'_w)^* mu`` in :meth:`WeightVector.to_vector` order.

    Built from the network part of the inner gradient, ``r_u^T gamma'(r)``,
    differentiated along every unit weight direction of each layer.
    """
    w = prob.weights
    _, _, _, tape, g1, g2 = inner.regularizer_terms(prob, u, order=1)
    J = mlp.jacobian_u(w, tape)
    Jmu = J @ mu
    parts = []
    for s in range(1, len(w.layers) + 1):
        A_dirs, b_dirs = mlp.layer_basis(w, s)
        dr, dJ = mlp.mixed_and_first(w, tape, s, A_dirs, b_dirs)
        val = np.einsum("o,bok,k->b", g1, dJ, mu)
        if np.any(g2):
            val = val + dr @ (g2 @ Jmu)
        parts.append(val)
    return np.concatenate(parts)


def relative_misfit(u_list, u_hat_list) -> float:
    """Aggregate relative control error in percent."""
    u = np.asarray(u_list, dtype=float)
    uh = np.asarray(u_hat_list, dtype=float)
    if u.shape != uh.shape:
        raise ValueError(f"shape mismatch {u.shape} vs {uh.shape}")
    den = np.sum(uh * uh)
    if den == 0:
        raise ZeroDivisionError("ground-truth controls are all zero")
    return float(100.0 * np.sqrt(np.sum((u - uh) ** 2) / den))


@dataclass
class OuterEval:
    objective: float
    misfit: float
    gradient: mlp.WeightVector | None
    grad_vec: np.ndarray | None
    inner: list
    mus: list = field(default_factory=list)
    eps_used: list = field(default_factory=list)
    costate_residuals: list = field(default_factory=list)

    @property
    def grad_norm(self) -> float:
        return float(np.linalg.norm(self.grad_vec))

    @property
    def inner_iterations(self) -> int:
        return int(sum(s.iterations for s in self.inner))

    @property
    def all_converged(self) -> bool:
        return all(s.converged for s in self.inner)

    @property
    def any_boundary(self) -> bool:
        return any(s.on_boundary for s in self.inner)


def _datum(dataset, k, w, arch, cfg, need_grad, start):
    prob = dataset.problem(k, w, arch, cfg.gamma)
    u0 = dataset.mean_control() if start is None else start[k]
    sol = inner.nesterov_solve(prob, u0, cfg.inner_tol, cfg.inner_max_iter)
    if not sol.converged:
        log.warning("inner problem %d did not converge: %s", k, sol.message)
    if not need_grad:
        return sol, None, None, 0.0, 0.0
    H = assemble_hessian(prob, sol.u, sol.y, sol.p)
    Hs, eps = epsilon_shift(H, cfg.eps_shift)
    metric = dataset.control_weights() if cfg.weighted_norm else None
    d = sol.u.values - dataset.u_hats[k]
    mu = solve_costate(Hs, sol.u.values, dataset.u_hats[k], metric)
    rhs = d if metric is None else metric * d
    den = np.linalg.norm(rhs)
    resid = float(np.linalg.norm(Hs.T @ mu + rhs) / den) if den > 0 else 0.0
    contrib = weight_adjoint(prob, sol.u.values, mu)
    return sol, mu, contrib, eps, resid


def _run(dataset, w, arch, cfg, need_grad, start=None):
    w.check(arch)
    jobs = range(dataset.K)
    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(lambda k: _datum(dataset, k, w, arch, cfg, need_grad, start), jobs))
    else:
        results = [_datum(dataset, k, w, arch, cfg, need_grad, start) for k in jobs]
    sols = [r[0] for r in results]
    U = np.array([s.u.values for s in sols])
    diff = U - dataset.u_hats
    if cfg.weighted_norm:
        sq = np.sum(diff**2 * dataset.control_weights()[None, :])
    else:
        sq = np.sum(diff**2)
    wn = mlp.weight_norm(w)
    obj = 0.5 * sq / dataset.K + 0.5 * cfg.nu * wn**2
    ev = OuterEval(obj, relative_misfit(U, dataset.u_hats), None, None, sols)
    if need_grad:
        g = cfg.nu * w.to_vector()
        for r in results:  # fixed order keeps the reduction reproducible
            g = g + r[2] / dataset.K
        ev.grad_vec = g
        ev.gradient = mlp.WeightVector.from_vector(g, arch.widths)
        ev.mus = [r[1] for r in results]
        ev.eps_used = [r[3] for r in results]
        ev.costate_residuals = [r[4] for r in results]
    return ev


def outer_objective(dataset: DataSet, w, arch, config: OuterConfig | None = None, start=None) -> float:
    """``1/(2K) sum_k |u_k - u_hat_k|^2 + nu/2 |w|^2`` with ``u_k`` from the inner solver.

    ``start`` optionally gives one inner starting control per datum (default:
    the mean ground-truth control).
    """
    return _run(dataset, w, arch, config or OuterConfig(), False, start).objective


def outer_gradient(dataset: DataSet, w, arch, config: OuterConfig | None = None, start=None) -> OuterEval:
    """Objective, misfit, weight gradient and per-datum inner solutions at ``w``."""
    return _run(dataset, w, arch, config or OuterConfig(), True, start)


@dataclass
class TrainReport:
    misfit_percent: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    step_sizes: list = field(default_factory=list)
    inner_iteration_counts: list = field(default_factory=list)
    inner_converged: list = field(default_factory=list)
    boundary_active: list = field(default_factory=list)
    eps_used: list = field(default_factory=list)
    costate_residual: list = field(default_factory=list)
    final_weights: mlp.WeightVector | None = None
    best_weights: mlp.WeightVector | None = None
    best_step: int = 0
    converged: bool = False
    wall_time: float = 0.0

    def record(self, ev: OuterEval, step_size):
        self.misfit_percent.append(ev.misfit)
        self.grad_norm.append(ev.grad_norm)
        self.objective.append(ev.objective)
        self.step_sizes.append(step_size)
        self.inner_iteration_counts.append(ev.inner_iterations)
        self.inner_converged.append(ev.all_converged)
        self.boundary_active.append(ev.any_boundary)
        self.eps_used.append(max(ev.eps_used, default=0.0))
        self.costate_residual.append(max(ev.costate_residuals, default=0.0))

    @property
    def n_steps(self) -> int:
        return len(self.misfit_percent) - 1


def barzilai_borwein(value, value_and_grad, x0, tol, max_steps, beta=0.5, armijo_cap=60,
                     bounds=(1e-8, 1e3), fallback="ratio", on_step=None, memory=0):
    """Gradient descent with one Armijo step followed by safeguarded BB1 steps.

    ``value(x, state)`` returns the objective; ``value_and_grad(x, state)``
    returns ``(objective, gradient, state)`` where ``state`` is an opaque
    object handed back on the next call (used for warm starts).
    ``on_step(n, x, objective, gradient, state, step)`` runs after each
    accepted step, including ``n = 0``.

    With ``memory = M > 0`` a BB step is only accepted if the objective does
    not exceed the largest of the last ``M`` accepted values by more than
    ``-1e-4 * step * |g|^2``; otherwise the step is multiplied by ``beta``
    (at most ``armijo_cap`` times, after which the last trial is kept).
    Rebounds within that window stay allowed.

    Returns ``(x, gradient, converged, n_steps)``.
    """
    x = np.asarray(x0, dtype=float)
    J, g, state = value_and_grad(x, None)
    if on_step:
        on_step(0, x, J, g, state, float("nan"))
    if np.linalg.norm(g) <= tol:
        return x, g, True, 0
    if max_steps <= 0:
        return x, g, False, 0
    step = 1.0
    for _ in range(armijo_cap + 1):
        if value(x - step * g, state) < J:
            break
        step *= beta
    else:
        raise InitializationError(
            f"outer Armijo found no decrease after {armijo_cap} halvings; re-seed the initial weights"
        )
    lo, hi = bounds
    history = [J]
    for n in range(1, max_steps + 1):
        gg = float(g @ g)
        for trial in range(armijo_cap + 1):
            x_new = x - step * g
            J_new, g_new, state_new = value_and_grad(x_new, state)
            if memory <= 0 or n == 1 or J_new <= max(history[-memory:]) - 1e-4 * step * gg:
                break
            if trial < armijo_cap:
                step *= beta
        J, state = J_new, state_new
        history.append(J)
        if on_step:
            on_step(n, x_new, J, g_new, state, step)
        if np.linalg.norm(g_new) <= tol:
            return x_new, g_new, True, n
        s_vec, y_vec = x_new - x, g_new - g
        curv = float(s_vec @ y_vec)
        if curv > 0:
            step = float(np.clip(float(s_vec @ s_vec) / curv, lo, hi))
        elif fallback == "ratio" and np.any(y_vec):
            step = float(np.clip(np.linalg.norm(s_vec) / np.linalg.norm(y_vec), lo, hi))
        x, g = x_new, g_new
    return x, g, False, max_steps


def bb_solve(dataset: DataSet, w0, arch, config: OuterConfig | None = None, callback=None) -> TrainReport:
    """Train weights with :func:`barzilai_borwein` on the outer objective.

    BB steps ``<s, s> / <s, g_n - g_{n-1}>`` are clipped to ``config.bb_bounds``
    and fall back to ``|s| / |y|`` (or keep the previous step, with
    ``bb_fallback='previous'``) when the curvature estimate is not positive.
    Stops when the weight gradient norm is at most ``config.tol`` or after
    ``config.max_steps`` weight updates.  With ``config.warm_start`` each
    inner solve starts from the previous step's solution, which follows the
    branch of stationary points the implicit gradient describes.
    ``callback(n, w, ev)`` is invoked after every evaluation.
    """
    cfg = config or OuterConfig()
    t0 = time.perf_counter()
    report = TrainReport()
    widths = arch.widths
    best = [np.inf, 0, w0]

    def start_of(ev):
        if ev is None or not cfg.warm_start:
            return None
        return [sol.u.values for sol in ev.inner]

    def value(x, ev):
        return outer_objective(dataset, mlp.WeightVector.from_vector(x, widths), arch, cfg, start_of(ev))

    def value_and_grad(x, ev):
        ev = outer_gradient(dataset, mlp.WeightVector.from_vector(x, widths), arch, cfg, start_of(ev))
        return ev.objective, ev.grad_vec, ev

    def on_step(n, x, J, g, ev, step):
        w = mlp.WeightVector.from_vector(x, widths)
        report.record(ev, step)
        if ev.misfit < best[0]:
            best[:] = [ev.misfit, n, w]
        if n:
            log.info("step %d: misfit %.4g%%  |G| %.3e  step %.3e", n, ev.misfit, ev.grad_norm, step)
        if callback:
            callback(n, w, ev)

    x, _, converged, _ = barzilai_borwein(
        value, value_and_grad, w0.to_vector(), cfg.tol, cfg.max_steps, cfg.beta,
        cfg.armijo_cap, cfg.bb_bounds, cfg.bb_fallback, on_step, cfg.bb_memory,
    )
    report.final_weights = mlp.WeightVector.from_vector(x, widths)
    report.best_weights = best[2]
    report.best_step = best[1]
    report.converged = converged
    report.wall_time = time.perf_counter() - t0
    return report
