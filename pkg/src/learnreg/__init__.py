"""Learned network regularizers for a 1-D conductivity identification problem.

Submodules: :mod:`mlp` (network and its derivatives), :mod:`fem1d` (P1 state,
adjoint and tangent solves), :mod:`inner` (regularized identification),
:mod:`outer` (weight training), :mod:`datagen` (synthetic data),
:mod:`storage` (JSON/CSV) and :mod:`cli`.
"""
from . import datagen, fem1d, inner, mlp, outer, storage
from .datagen import GenConfig, NoiseSpec, gen_l2_dataset, gen_noisy_dataset
from .fem1d import ControlField, Mesh, ProblemData
from .inner import InnerProblem, nesterov_solve
from .mlp import Architecture, WeightVector, random_weights, zero_weights
from .outer import DataSet, OuterConfig, bb_solve, outer_gradient, outer_objective

__version__ = "0.1.0"
