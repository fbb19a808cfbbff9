"""Synthetic data sets for the conductivity identification experiments.

All randomness goes through ``numpy.random.Generator`` (PCG64) seeded from
the configuration, so a data set is a pure function of its config.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import fem1d, inner
from .fem1d import Mesh, ProblemData
from .outer import DataSet

__all__ = [
    "GenerationError",
    "GenConfig",
    "NoiseSpec",
    "sample_controls",
    "gen_l2_dataset",
    "gen_noisy_dataset",
    "default_noise_sigma",
]


class GenerationError(RuntimeError):
    pass


@dataclass
class GenConfig:
    K: int = 5
    n_in: int = 1
    N: int = 100
    u_range: tuple = (0.5, 2.0)
    bounds: tuple = (0.1, 10.0)
    f: float = 1.0
    g: tuple = (0.0, 0.0)
    seed: int = 0
    c_reg: float = 1.5
    gen_tol: float = 1e-12
    gen_max_iter: int = 20000

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be at least 1")
        lo, hi = self.u_range
        m, M = self.bounds
        if not (m <= lo <= hi <= M):
            raise ValueError(f"sampling range {self.u_range} must lie inside bounds {self.bounds}")

    @property
    def mesh(self) -> Mesh:
        return Mesh(self.N)

    @property
    def problem_data(self) -> ProblemData:
        return ProblemData.constant(self.mesh, self.f, self.g)

    @property
    def group_map(self) -> np.ndarray:
        return fem1d.uniform_groups(self.N, self.n_in)


@dataclass
class NoiseSpec:
    sigma: float | None = None  # None: 1% of the largest |y_true|
    seed: int = 1

    def __post_init__(self):
        if self.sigma is not None and self.sigma < 0:
            raise ValueError("sigma must be nonnegative")


def sample_controls(cfg: GenConfig, rng=None) -> list:
    """K i.i.d. uniform controls in ``cfg.u_range``, one value per group."""
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    lo, hi = cfg.u_range
    vals = rng.uniform(lo, hi, size=(cfg.K, cfg.n_in)) if hi > lo else np.full((cfg.K, cfg.n_in), lo)
    return [fem1d.ControlField(v, cfg.group_map, cfg.bounds) for v in vals]


def gen_l2_dataset(cfg: GenConfig) -> DataSet:
    """Targets ``S(u*_k)`` paired with minimizers of the ``c_reg |u|^2``-regularized inner problem."""
    mesh, data = cfg.mesh, cfg.problem_data
    arch, w = inner.quadratic_regularizer(cfg.n_in, cfg.c_reg)
    truths = sample_controls(cfg)
    z_hats, u_hats = [], []
    for u_star in truths:
        z = fem1d.solve_state(u_star, data, mesh)
        prob = inner.InnerProblem(mesh, data, z, w, arch, cfg.group_map, cfg.bounds, "half_squared_norm")
        sol = inner.nesterov_solve(prob, u_star.values, tol=cfg.gen_tol, max_iter=cfg.gen_max_iter)
        if not sol.converged:
            raise GenerationError(f"generator inner solve failed: {sol.message}")
        z_hats.append(z)
        u_hats.append(sol.u.values)
    return DataSet(mesh, data, np.array(z_hats), np.array(u_hats), cfg.group_map, cfg.bounds)


def default_noise_sigma(y_true) -> float:
    return 0.01 * float(np.max(np.abs(y_true)))


def gen_noisy_dataset(cfg: GenConfig, noise: NoiseSpec | None = None) -> DataSet:
    """Ground-truth controls paired with their states corrupted by Gaussian noise.

    Noise is added to interior nodal values only, so the Dirichlet data stay exact.
    """
    noise = noise or NoiseSpec()
    mesh, data = cfg.mesh, cfg.problem_data
    truths = sample_controls(cfg)
    y_true = np.array([fem1d.solve_state(u, data, mesh) for u in truths])
    sigma = default_noise_sigma(y_true) if noise.sigma is None else noise.sigma
    rng = np.random.default_rng(noise.seed)
    z = y_true.copy()
    z[:, 1:-1] += sigma * rng.standard_normal((cfg.K, mesh.N - 1))
    u_hats = np.array([u.values for u in truths])
    return DataSet(mesh, data, z, u_hats, cfg.group_map, cfg.bounds)
