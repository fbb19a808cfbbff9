"""P1 finite elements for ``-(u y')' = f`` on (0, 1) with Dirichlet data.

The conductivity ``u`` is piecewise constant on the cells; control values are
mapped to cells through a ``group_map`` so the control dimension can be
smaller than the number of cells.  States are plain nodal arrays of length
``N + 1``.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import LinAlgError, cho_solve_banded, cholesky_banded

__all__ = [
    "EllipticityError",
    "Mesh",
    "ControlField",
    "ProblemData",
    "SymTridiag",
    "assemble_stiffness",
    "stiffness_action",
    "solve_state",
    "solve_adjoint",
    "solve_linearized",
    "mass_matrix",
    "l2_inner",
    "l2_norm",
    "h1_seminorm",
    "cell_flux_products",
    "uniform_groups",
]


class EllipticityError(ValueError):
    """Raised when a conductivity is not uniformly positive."""


@dataclass(frozen=True)
class Mesh:
    N: int

    def __post_init__(self):
        if int(self.N) < 2:
            raise ValueError(f"mesh needs at least 2 cells, got {self.N}")
        object.__setattr__(self, "N", int(self.N))

    @property
    def h(self) -> float:
        return 1.0 / self.N

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.N + 1)

    @property
    def midpoints(self) -> np.ndarray:
        return (np.arange(self.N) + 0.5) * self.h


def uniform_groups(N: int, n_groups: int) -> np.ndarray:
    """Map N cells onto ``n_groups`` contiguous blocks of (nearly) equal size."""
    if not 1 <= n_groups <= N:
        raise ValueError(f"cannot split {N} cells into {n_groups} groups")
    return (np.arange(N) * n_groups) // N


@dataclass(frozen=True)
class ControlField:
    """Piecewise-constant conductivity given by one value per control group."""

    values: np.ndarray
    group_map: np.ndarray
    bounds: tuple = (0.1, 10.0)

    def __post_init__(self):
        values = np.array(self.values, dtype=float, ndmin=1)
        gmap = np.asarray(self.group_map, dtype=int)
        m, M = (float(b) for b in self.bounds)
        if not M > m > 0:
            raise ValueError(f"bounds must satisfy M > m > 0, got {(m, M)}")
        if gmap.ndim != 1 or gmap.size == 0:
            raise ValueError("group_map must be a non-empty 1-D array")
        if set(np.unique(gmap)) != set(range(values.size)):
            raise ValueError("group_map must be onto the control indices")
        values.setflags(write=False)
        gmap.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "group_map", gmap)
        object.__setattr__(self, "bounds", (m, M))

    @classmethod
    def constant(cls, value, N: int, n_groups: int = 1, bounds=(0.1, 10.0)):
        return cls(np.full(n_groups, float(value)), uniform_groups(N, n_groups), bounds)

    @property
    def n_in(self) -> int:
        return self.values.size

    def cell_values(self) -> np.ndarray:
        return self.values[self.group_map]

    def with_values(self, values) -> "ControlField":
        return replace(self, values=np.asarray(values, dtype=float))

    def is_admissible(self) -> bool:
        m, M = self.bounds
        return bool(np.all(self.values >= m) and np.all(self.values <= M))


@dataclass(frozen=True)
class ProblemData:
    """Source ``f`` (one value per cell) and Dirichlet pair ``g``."""

    f: np.ndarray
    g: tuple = (0.0, 0.0)

    def __post_init__(self):
        f = np.array(self.f, dtype=float, ndmin=1)
        if not np.all(np.isfinite(f)) or not np.all(np.isfinite(self.g)):
            raise ValueError("problem data must be finite")
        f.setflags(write=False)
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "g", (float(self.g[0]), float(self.g[1])))

    @classmethod
    def constant(cls, mesh: Mesh, f: float = 1.0, g=(0.0, 0.0)):
        return cls(np.full(mesh.N, float(f)), g)


def _cells(u, mesh: Mesh) -> np.ndarray:
    c = u.cell_values() if isinstance(u, ControlField) else np.asarray(u, dtype=float)
    if c.shape != (mesh.N,):
        raise ValueError(f"coefficient has shape {c.shape}, mesh has {mesh.N} cells")
    return c


@dataclass(frozen=True)
class SymTridiag:
    """Symmetric tridiagonal matrix over the interior nodes."""

    diag: np.ndarray
    off: np.ndarray

    @property
    def n(self) -> int:
        return self.diag.size

    def toarray(self) -> np.ndarray:
        return np.diag(self.diag) + np.diag(self.off, 1) + np.diag(self.off, -1)

    def matvec(self, x):
        x = np.asarray(x, dtype=float)
        out = self.diag * x
        out[:-1] += self.off * x[1:]
        out[1:] += self.off * x[:-1]
        return out

    def banded(self) -> np.ndarray:
        ab = np.zeros((2, self.n))
        ab[0, 1:] = self.off
        ab[1] = self.diag
        return ab

    def factor(self) -> np.ndarray:
        """Banded Cholesky factor; raises :class:`EllipticityError` if not SPD."""
        try:
            return cholesky_banded(self.banded(), check_finite=False)
        except LinAlgError as exc:
            raise EllipticityError(f"stiffness matrix is not positive definite: {exc}") from exc

    def solve(self, rhs, factor=None):
        cb = self.factor() if factor is None else factor
        return cho_solve_banded((cb, False), rhs, check_finite=False)


def assemble_stiffness(u, mesh: Mesh) -> SymTridiag:
    """Stiffness ``K(u)_ij = sum_c u_c int phi_i' phi_j'`` restricted to interior nodes."""
    c = _cells(u, mesh)
    if not np.all(np.isfinite(c)) or np.any(c <= 0):
        raise EllipticityError(f"conductivity must be positive, min value {np.min(c)}")
    return _stiffness(c, mesh)


def _stiffness(c, mesh):
    ih = 1.0 / mesh.h
    return SymTridiag(diag=(c[:-1] + c[1:]) * ih, off=-c[1:-1] * ih)


def stiffness_action(coef, y, mesh: Mesh) -> np.ndarray:
    """Nodal vector ``int coef y' phi_i'`` for every node (no boundary elimination)."""
    c = _cells(coef, mesh)
    flux = c * np.diff(y) / mesh.h
    out = np.zeros(mesh.N + 1)
    out[:-1] -= flux
    out[1:] += flux
    return out


def _load(data: ProblemData, mesh: Mesh) -> np.ndarray:
    if data.f.shape != (mesh.N,):
        raise ValueError(f"source has {data.f.size} values, mesh has {mesh.N} cells")
    half = 0.5 * mesh.h * data.f
    return half[:-1] + half[1:]


def solve_state(u, data: ProblemData, mesh: Mesh, factor=None) -> np.ndarray:
    """Nodal P1 solution ``y = S(u)`` with ``y(0), y(1) = g``.

    ``factor`` is an optional banded Cholesky factor of ``K(u)`` (see
    :meth:`SymTridiag.factor`) to share between solves.
    """
    c = _cells(u, mesh)
    if factor is None:
        factor = assemble_stiffness(c, mesh).factor()
    return _state(c, data, mesh, factor)


def _state(c, data, mesh, factor):
    gl, gr = data.g
    rhs = _load(data, mesh)
    rhs[0] += c[0] / mesh.h * gl
    rhs[-1] += c[-1] / mesh.h * gr
    y = np.empty(mesh.N + 1)
    y[0], y[-1] = gl, gr
    y[1:-1] = cho_solve_banded((factor, False), rhs, check_finite=False)
    return y


def mass_matrix(mesh: Mesh):
    """Consistent P1 mass matrix on all nodes, as a sparse CSR matrix."""
    from scipy.sparse import diags

    h = mesh.h
    d = np.full(mesh.N + 1, 2 * h / 3)
    d[0] = d[-1] = h / 3
    o = np.full(mesh.N, h / 6)
    return diags([o, d, o], [-1, 0, 1], format="csr")


def _mass_matvec(a, mesh: Mesh) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    h = mesh.h
    out = np.empty_like(a)
    out[...] = 2 * h / 3 * a
    out[0] = h / 3 * a[0]
    out[-1] = h / 3 * a[-1]
    out[:-1] += h / 6 * a[1:]
    out[1:] += h / 6 * a[:-1]
    return out


def _check_nodal(a, mesh):
    a = np.asarray(a, dtype=float)
    if a.shape[0] != mesh.N + 1:
        raise ValueError(f"nodal field has {a.shape[0]} values, mesh has {mesh.N + 1} nodes")
    return a


def l2_inner(a, b, mesh: Mesh) -> float:
    """Exact L2 inner product of two P1 interpolants."""
    a, b = _check_nodal(a, mesh), _check_nodal(b, mesh)
    return float(a @ _mass_matvec(b, mesh))


def l2_norm(a, mesh: Mesh) -> float:
    return float(np.sqrt(max(l2_inner(a, a, mesh), 0.0)))


def h1_seminorm(a, mesh: Mesh) -> float:
    """``||a'||_{L2}`` of a P1 field."""
    a = _check_nodal(a, mesh)
    return float(np.sqrt(np.sum(np.diff(a) ** 2) / mesh.h))


def solve_adjoint(u, y, z_hat, mesh: Mesh, factor=None) -> np.ndarray:
    """Adjoint ``p`` of the tracking cost: ``K(u) p = -M (y - z_hat)``, ``p = 0`` on the boundary."""
    if factor is None:
        factor = assemble_stiffness(u, mesh).factor()
    return _adjoint(_check_nodal(y, mesh) - _check_nodal(z_hat, mesh), mesh, factor)


def _adjoint(residual, mesh, factor):
    res = _mass_matvec(residual, mesh)
    p = np.zeros(mesh.N + 1)
    p[1:-1] = cho_solve_banded((factor, False), -res[1:-1], check_finite=False)
    return p


def solve_linearized(u, y, u_dir, mesh: Mesh, factor=None) -> np.ndarray:
    """Tangent ``S'(u) . u_dir``: ``K(u) y_t = -K'[u_dir] y`` with zero boundary values.

    ``u_dir`` may be a single cell-coefficient array (or ControlField with the
    same group map) or a 2-D array of cell coefficients, one direction per row.
    """
    if factor is None:
        factor = assemble_stiffness(u, mesh).factor()
    y = _check_nodal(y, mesh)
    dirs = u_dir.cell_values() if isinstance(u_dir, ControlField) else np.asarray(u_dir, dtype=float)
    single = dirs.ndim == 1
    dirs = np.atleast_2d(dirs)
    if dirs.shape[1] != mesh.N:
        raise ValueError(f"direction has {dirs.shape[1]} cell values, mesh has {mesh.N} cells")
    flux = dirs * (np.diff(y) / mesh.h)[None, :]
    rhs = flux[:, :-1] - flux[:, 1:]  # interior rows of K'[u_dir] y
    out = np.zeros((dirs.shape[0], mesh.N + 1))
    out[:, 1:-1] = cho_solve_banded((factor, False), -rhs.T, check_finite=False).T
    return out[0] if single else out


def cell_flux_products(a, b, mesh: Mesh) -> np.ndarray:
    """Per-cell ``int_cell a' b'`` for P1 fields (last axis nodal)."""
    return np.diff(a, axis=-1) * np.diff(b, axis=-1) / mesh.h
