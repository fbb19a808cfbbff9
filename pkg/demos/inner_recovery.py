"""Why regularize at all: one noisy identification, three regularizers.

A conductivity made of four constant pieces is observed through its state
with a little Gaussian noise.  We identify it by minimizing

    1/2 |y(u) - z|^2 + r(u)

for r = 0, for a weak quadratic r(u) = c |u - 1|^2, and for a network that
has not been trained (small random weights).  The point is the size of the
control error, which is what the training in the other demos improves.

    python demos/inner_recovery.py
"""
import numpy as np

from learnreg import datagen, inner, mlp, outer

cfg = datagen.GenConfig(K=1, n_in=4, N=100, f=1000.0, g=(0.0, 500.0), u_range=(0.9, 1.1), seed=3)
ds = datagen.gen_noisy_dataset(cfg, datagen.NoiseSpec(sigma=1.2, seed=4))
u_true = ds.u_hats[0]
print("true control      ", np.round(u_true, 4))


def shifted_quadratic(n, coef, center):
    # 1/2 |sqrt(2c) (u - center)|^2 as a two-layer identity network
    arch = mlp.Architecture((n, n, n), "identity")
    s = np.sqrt(2 * coef)
    return arch, mlp.WeightVector(((s * np.eye(n), -s * center * np.ones(n)), (np.eye(n), np.zeros(n))))


candidates = {
    "no regularizer": (mlp.Architecture((4, 8, 1), "tanh"), None, "identity"),
    "quadratic c=5": (*shifted_quadratic(4, 5.0, 1.0), "half_squared_norm"),
    "untrained net": (mlp.Architecture((4, 8, 1), "tanh"), "random", "identity"),
}

for label, (arch, w, gamma) in candidates.items():
    if w is None:
        w = mlp.zero_weights(arch)
    elif w == "random":
        w = mlp.random_weights(arch, np.random.default_rng(0), 0.1)
    prob = ds.problem(0, w, arch, gamma)
    sol = inner.nesterov_solve(prob, ds.mean_control(), tol=1e-10, max_iter=50000)
    err = outer.relative_misfit([sol.u.values], [u_true])
    print(f"{label:18s}", np.round(sol.u.values, 4), f"misfit {err:6.2f}%  ({sol.iterations} iterations)")

# The unregularized fit chases the noise; a well-placed quadratic pulls it back.
# Training learns such a penalty from examples instead of guessing c and center.
