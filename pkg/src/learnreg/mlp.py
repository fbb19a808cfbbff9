"""Feedforward networks with analytic first- and second-order derivatives.

A network with widths ``[n_1, ..., n_{L+1}]`` is the composition

    r(w, u) = w_L(rho(w_{L-1}(... rho(w_1(u)))))

with affine layers ``w_l(z) = A_l z + b_l``.  All derivatives are computed
from a :class:`ForwardTape` holding the pre-activations of one forward pass.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "Activation",
    "Architecture",
    "WeightVector",
    "ForwardTape",
    "forward",
    "jacobian_u",
    "jacobian_w",
    "hessian_uu",
    "mixed_uw",
    "weight_norm",
    "weight_axpy",
    "lipschitz_bound",
    "zero_weights",
    "random_weights",
    "layer_basis",
]

ACTIVATIONS = ("tanh", "softplus", "identity")


class Activation:
    """Coordinate-wise C^2 activation with its first two derivatives."""

    def __init__(self, kind: str = "tanh"):
        if kind not in ACTIVATIONS:
            raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")
        self.kind = kind

    def __repr__(self):
        return f"Activation({self.kind!r})"

    def __eq__(self, other):
        return isinstance(other, Activation) and other.kind == self.kind

    def __hash__(self):
        return hash(self.kind)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "tanh":
            return np.tanh(x)
        if self.kind == "softplus":
            return np.logaddexp(0.0, x)
        return x.copy()

    def d1(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "tanh":
            return 1.0 - np.tanh(x) ** 2
        if self.kind == "softplus":
            return _sigmoid(x)
        return np.ones_like(x)

    def d2(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "tanh":
            t = np.tanh(x)
            return -2.0 * t * (1.0 - t * t)
        if self.kind == "softplus":
            s = _sigmoid(x)
            return s * (1.0 - s)
        return np.zeros_like(x)

    @property
    def sup_d1(self) -> float:
        """``sup |rho'|`` over the real line."""
        return 1.0


def _sigmoid(x):
    # numerically stable on both tails
    return np.exp(-np.logaddexp(0.0, -x))


@dataclass(frozen=True)
class Architecture:
    widths: tuple
    activation: Activation = Activation("tanh")

    def __post_init__(self):
        widths = tuple(int(n) for n in self.widths)
        if len(widths) < 3:
            raise ValueError("a network needs at least two layers (three widths)")
        if any(n < 1 for n in widths):
            raise ValueError(f"widths must be positive, got {widths}")
        object.__setattr__(self, "widths", widths)
        if isinstance(self.activation, str):
            object.__setattr__(self, "activation", Activation(self.activation))

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    @property
    def n_in(self) -> int:
        return self.widths[0]

    @property
    def n_out(self) -> int:
        return self.widths[-1]

    @property
    def hidden_size(self) -> int:
        """Sum of the first L-1 widths, the exponent of the Lipschitz estimate."""
        return sum(self.widths[: self.n_layers - 1])

    def layer_shapes(self):
        return [(self.widths[l + 1], self.widths[l]) for l in range(self.n_layers)]


@dataclass(frozen=True)
class WeightVector:
    """Affine layers ``(A_l, b_l)``, l = 1..L (stored zero-based)."""

    layers: tuple

    def __post_init__(self):
        layers = tuple(
            (np.array(A, dtype=float, ndmin=2), np.array(b, dtype=float, ndmin=1))
            for A, b in self.layers
        )
        if not layers:
            raise ValueError("empty weight vector")
        for i, (A, b) in enumerate(layers):
            if A.ndim != 2 or b.ndim != 1 or A.shape[0] != b.shape[0]:
                raise ValueError(f"layer {i + 1}: A {A.shape} and b {b.shape} are inconsistent")
            if i > 0 and A.shape[1] != layers[i - 1][0].shape[0]:
                raise ValueError(
                    f"layer {i + 1} expects {A.shape[1]} inputs but layer {i} has "
                    f"{layers[i - 1][0].shape[0]} outputs"
                )
        for A, b in layers:
            A.setflags(write=False)
            b.setflags(write=False)
        object.__setattr__(self, "layers", layers)

    @property
    def widths(self) -> tuple:
        return (self.layers[0][0].shape[1],) + tuple(A.shape[0] for A, _ in self.layers)

    @property
    def size(self) -> int:
        return sum(A.size + b.size for A, b in self.layers)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([np.concatenate([A.ravel(), b]) for A, b in self.layers])

    @classmethod
    def from_vector(cls, vec, widths: Sequence[int]) -> "WeightVector":
        vec = np.asarray(vec, dtype=float).reshape(-1)
        expected = sum(n_next * (n_prev + 1) for n_prev, n_next in zip(widths[:-1], widths[1:]))
        if vec.size != expected:
            raise ValueError(f"vector of size {vec.size} does not match widths {tuple(widths)}")
        layers = []
        pos = 0
        for n_prev, n_next in zip(widths[:-1], widths[1:]):
            A = vec[pos : pos + n_next * n_prev].reshape(n_next, n_prev)
            pos += n_next * n_prev
            b = vec[pos : pos + n_next]
            pos += n_next
            layers.append((A, b))
        return cls(tuple(layers))

    def check(self, arch: Architecture):
        if self.widths != arch.widths:
            raise ValueError(f"weights have widths {self.widths}, architecture expects {arch.widths}")


def zero_weights(arch: Architecture) -> WeightVector:
    return WeightVector(tuple((np.zeros(s), np.zeros(s[0])) for s in arch.layer_shapes()))


def random_weights(arch: Architecture, rng, scale: float = 1e-2) -> WeightVector:
    """I.i.d. normal entries with standard deviation ``scale``."""
    rng = np.random.default_rng(rng)
    return WeightVector(
        tuple(
            (scale * rng.standard_normal(s), scale * rng.standard_normal(s[0]))
            for s in arch.layer_shapes()
        )
    )


@dataclass(frozen=True)
class ForwardTape:
    """Quantities of one forward pass, reused by every derivative.

    ``pre[l]`` is the pre-activation ``r^(l+1)`` (zero-based), ``post[l]`` the
    input fed to layer ``l`` (``post[0] = u``, ``post[l] = rho(pre[l-1])``).
    """

    input: np.ndarray
    pre: tuple
    post: tuple
    activation: Activation


def forward(w: WeightVector, u, arch: Architecture):
    """Evaluate the network; returns ``(value, tape)``."""
    w.check(arch)
    u = np.asarray(u, dtype=float).reshape(-1)
    if u.size != arch.n_in:
        raise ValueError(f"input has dimension {u.size}, network expects {arch.n_in}")
    rho = arch.activation
    pre, post = [], [u]
    z = u
    for l, (A, b) in enumerate(w.layers):
        r = A @ z + b
        pre.append(r)
        if l < len(w.layers) - 1:
            z = rho(r)
            post.append(z)
    tape = ForwardTape(input=u, pre=tuple(pre), post=tuple(post), activation=rho)
    return pre[-1].copy(), tape


def _check_tape(w: WeightVector, tape: ForwardTape):
    if len(tape.pre) != len(w.layers):
        raise ValueError("tape was recorded with a different number of layers")


def jacobian_u(w: WeightVector, tape: ForwardTape) -> np.ndarray:
    """``dr/du`` as an ``n_out x n_in`` matrix."""
    _check_tape(w, tape)
    rho = tape.activation
    L = len(w.layers)
    J = w.layers[0][0]
    for l in range(1, L):
        J = w.layers[l][0] @ (rho.d1(tape.pre[l - 1])[:, None] * J)
    return np.array(J, copy=True)


def _as_batch(w: WeightVector, s: int, A_dir, b_dir):
    A_ref, b_ref = w.layers[s - 1]
    A_dir = np.asarray(A_dir, dtype=float)
    b_dir = np.asarray(b_dir, dtype=float)
    single = A_dir.ndim == 2
    if single:
        A_dir, b_dir = A_dir[None], b_dir[None]
    if A_dir.shape[1:] != A_ref.shape or b_dir.shape[1:] != b_ref.shape:
        raise ValueError(
            f"direction shapes {A_dir.shape[1:]}, {b_dir.shape[1:]} do not match layer {s} "
            f"shapes {A_ref.shape}, {b_ref.shape}"
        )
    return A_dir, b_dir, single


def _check_layer(w: WeightVector, s: int):
    if not 1 <= s <= len(w.layers):
        raise ValueError(f"layer index {s} outside 1..{len(w.layers)}")


def jacobian_w(w: WeightVector, tape: ForwardTape, s: int, A_dir, b_dir) -> np.ndarray:
    """Directional derivative ``dr/dw_s . (A_dir, b_dir)``.

    ``s`` is one-based.  Directions may be stacked along a leading batch axis,
    in which case the result has shape ``(batch, n_out)``.
    """
    _check_tape(w, tape)
    _check_layer(w, s)
    A_dir, b_dir, single = _as_batch(w, s, A_dir, b_dir)
    dr, _, _ = _propagate_weight_direction(w, tape, s, A_dir, b_dir, with_jacobian=False)
    return dr[0] if single else dr


def hessian_uu(w: WeightVector, tape: ForwardTape) -> np.ndarray:
    """``d^2 r/du^2`` as an ``n_out x n_in x n_in`` tensor.

    Obtained by differentiating the layer recursion twice:
    ``d2 rho(r) = rho''(r) dr (x) dr + rho'(r) d2 r``.
    """
    _check_tape(w, tape)
    rho = tape.activation
    n_in = tape.input.size
    J = w.layers[0][0]
    H = np.zeros((J.shape[0], n_in, n_in))
    for l in range(1, len(w.layers)):
        r = tape.pre[l - 1]
        d1, d2 = rho.d1(r), rho.d2(r)
        curv = d2[:, None, None] * (J[:, :, None] * J[:, None, :]) + d1[:, None, None] * H
        A = w.layers[l][0]
        H = np.einsum("ij,jab->iab", A, curv)
        J = A @ (d1[:, None] * J)
    return H


def mixed_uw(w: WeightVector, tape: ForwardTape, s: int, A_dir, b_dir) -> np.ndarray:
    """Directional mixed derivative ``d/dw_s (dr/du) . (A_dir, b_dir)``.

    Returns an ``n_out x n_in`` matrix, or ``(batch, n_out, n_in)`` for
    stacked directions.
    """
    _check_tape(w, tape)
    _check_layer(w, s)
    A_dir, b_dir, single = _as_batch(w, s, A_dir, b_dir)
    _, dJ, _ = _propagate_weight_direction(w, tape, s, A_dir, b_dir, with_jacobian=True)
    return dJ[0] if single else dJ


def mixed_and_first(w: WeightVector, tape: ForwardTape, s: int, A_dir, b_dir):
    """Batched ``(jacobian_w, mixed_uw)`` sharing one propagation."""
    _check_tape(w, tape)
    _check_layer(w, s)
    A_dir, b_dir, single = _as_batch(w, s, A_dir, b_dir)
    dr, dJ, _ = _propagate_weight_direction(w, tape, s, A_dir, b_dir, with_jacobian=True)
    return (dr[0], dJ[0]) if single else (dr, dJ)


def _propagate_weight_direction(w, tape, s, A_dir, b_dir, with_jacobian):
    # Forward-mode sweep of (r, dr/du) and their perturbations along the
    # weight direction; layers below s are untouched.
    rho = tape.activation
    L = len(w.layers)
    n_in = tape.input.size
    # Jacobian of the input of layer s with respect to u
    if with_jacobian:
        Jz = np.eye(n_in)
        J = w.layers[0][0]
        for l in range(1, s):
            Jz = rho.d1(tape.pre[l - 1])[:, None] * J
            J = w.layers[l][0] @ Jz
    z = tape.post[s - 1]
    dr = np.einsum("bij,j->bi", A_dir, z) + b_dir
    dJ = np.einsum("bij,jk->bik", A_dir, Jz) if with_jacobian else None
    J = w.layers[s - 1][0] @ Jz if with_jacobian else None
    for l in range(s, L):
        r = tape.pre[l - 1]
        d1 = rho.d1(r)
        A = w.layers[l][0]
        if with_jacobian:
            d2 = rho.d2(r)
            inner = d2[None, :, None] * dr[:, :, None] * J[None] + d1[None, :, None] * dJ
            dJ = np.einsum("ij,bjk->bik", A, inner)
            J = A @ (d1[:, None] * J)
        dr = np.einsum("ij,bj->bi", A, d1[None, :] * dr)
    return dr, dJ, J


def layer_basis(w: WeightVector, s: int):
    """Unit directions over every entry of layer ``s`` (one-based).

    Returns stacked ``(A_dirs, b_dirs)``: first the ``A`` entries in row-major
    order, then the ``b`` entries, matching :meth:`WeightVector.to_vector`.
    """
    _check_layer(w, s)
    A, b = w.layers[s - 1]
    n = A.size + b.size
    eye = np.eye(n)
    return eye[:, : A.size].reshape(n, *A.shape), eye[:, A.size :]


def weight_norm(w: WeightVector) -> float:
    return float(np.sqrt(sum(np.sum(A * A) + np.sum(b * b) for A, b in w.layers)))


def weight_axpy(a: float, w1: WeightVector, w2: WeightVector) -> WeightVector:
    """Entrywise ``w1 + a * w2``."""
    if w1.widths != w2.widths:
        raise ValueError(f"architecture mismatch: {w1.widths} vs {w2.widths}")
    return WeightVector(
        tuple((A1 + a * A2, b1 + a * b2) for (A1, b1), (A2, b2) in zip(w1.layers, w2.layers))
    )


def lipschitz_bound(w: WeightVector, arch: Architecture) -> float:
    """Upper bound ``prod_l |A_l|_F * sup|rho'|^(hidden size)`` on the input Lipschitz constant.

    The Frobenius norm over-estimates the operator norm, so the bound is loose
    but always valid.
    """
    w.check(arch)
    prod = 1.0
    for A, _ in w.layers:
        prod *= float(np.linalg.norm(A))
    return prod * arch.activation.sup_d1 ** arch.hidden_size
