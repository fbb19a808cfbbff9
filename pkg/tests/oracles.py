"""Independent reference computations shared by the test modules."""
import numpy as np

from learnreg import mlp


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    den = max(np.linalg.norm(b), np.linalg.norm(a), 1e-300)
    return float(np.linalg.norm(a - b) / den)


def central_diff(fun, x, h):
    """Columns ``d fun / d x_i`` by central differences (``fun`` returns an array)."""
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        cols.append((np.asarray(fun(x + e)) - np.asarray(fun(x - e))) / (2 * h))
    return np.stack(cols, axis=-1)


def naive_forward(w, u, kind):
    """Plain recursive evaluation, written independently of :func:`mlp.forward`."""
    act = {"tanh": np.tanh, "softplus": lambda x: np.logaddexp(0.0, x), "identity": lambda x: x}[kind]

    def r(level):
        A, b = w.layers[level]
        z = np.asarray(u, dtype=float) if level == 0 else act(r(level - 1))
        return A @ z + b

    return r(len(w.layers) - 1)


def random_net(rng, widths, kind="tanh"):
    """Weights with i.i.d. entries uniform in [-1, 1]."""
    arch = mlp.Architecture(tuple(widths), mlp.Activation(kind))
    layers = tuple(
        (rng.uniform(-1, 1, s), rng.uniform(-1, 1, s[0])) for s in arch.layer_shapes()
    )
    return arch, mlp.WeightVector(layers)


def random_widths(rng, max_widths=(4, 8, 8, 1)):
    depth = rng.integers(3, len(max_widths) + 1)
    widths = [int(rng.integers(1, max_widths[0] + 1))]
    widths += [int(rng.integers(1, m + 1)) for m in max_widths[1 : depth - 1]]
    widths.append(1)
    return widths
