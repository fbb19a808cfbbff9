"""Recovering a known regularizer from its own minimizers.

Five targets z_k = S(u*_k) are fitted with the penalty (3/2)|u|^2, giving
controls û_k.  A small tanh network starts near zero and is trained until
its inner minimizers reproduce the û_k.  The penalty is only identifiable
up to a constant and only where the û_k live, so we compare shapes there.

Settings come from demos/configs/experiment1.json, the same file the CLI uses:

    learnreg gen-data --config demos/configs/experiment1.json --out out/experiment1
    learnreg train    --config demos/configs/experiment1.json --out out/experiment1
    learnreg eval     --config demos/configs/experiment1.json --out out/experiment1
"""
from pathlib import Path

import numpy as np

from learnreg import cli, datagen, mlp, outer

cfg = cli.load_config(Path(__file__).parent / "configs" / "experiment1.json")
ds = datagen.gen_l2_dataset(cfg.gen_config())
arch = cfg.architecture(ds.n_in)
w0 = mlp.random_weights(arch, np.random.default_rng(cfg.model["init_seed"]), cfg.model["init_scale"])
print(f"{ds.K} pairs, N = {ds.mesh.N}, controls û = {np.round(ds.u_hats.ravel(), 3)}")

report = outer.bb_solve(ds, w0, arch, cfg.outer_config())
print("\nstep  misfit %   |G|")
for n in range(0, len(report.misfit_percent), 5):
    print(f"{n:4d}  {report.misfit_percent[n]:8.4f}  {report.grad_norm[n]:.2e}")
print(f"final {report.misfit_percent[-1]:.4f}% after {report.n_steps} steps ({report.wall_time:.1f} s)")

# shape check on the range the data actually probe
w = report.final_weights
us = np.linspace(ds.u_hats.min(), ds.u_hats.max(), 6)
r = np.array([mlp.forward(w, [u], arch)[0][0] for u in us])
ref = 1.5 * us**2
offset = np.mean(r - ref)
print("\n    u     r(u)-offset   1.5 u^2")
for u, a, b in zip(us, r - offset, ref):
    print(f"{u:6.3f}  {a:10.4f}  {b:10.4f}")
