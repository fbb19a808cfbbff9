"""Learning a regularizer from noisy measurements.

Ten conductivities, each constant on ten groups of cells, are drawn around 1
and observed through noisy states.  Unregularized fits miss the truth by
about 55%.  A network regularizer r(u) = 1/2 |N(u)|^2 is trained so that the
regularized fits land near the truth.  Misfit is allowed to bounce between
steps (the Barzilai-Borwein iteration is not monotone), so the report keeps
the best weights as well as the last ones.

Same settings as the CLI run

    learnreg gen-data --config demos/configs/experiment2.json --out out/experiment2
    learnreg train    --config demos/configs/experiment2.json --out out/experiment2

Expect a few minutes on one core.
"""
import logging
from pathlib import Path

import numpy as np

from learnreg import cli, datagen, mlp, outer

logging.basicConfig(level=logging.INFO, format="%(message)s")
cfg = cli.load_config(Path(__file__).parent / "configs" / "experiment2.json")
ds = datagen.gen_noisy_dataset(cfg.gen_config(), cfg.noise())
arch = cfg.architecture(ds.n_in)
w0 = mlp.random_weights(arch, np.random.default_rng(cfg.model["init_seed"]), cfg.model["init_scale"])

report = outer.bb_solve(ds, w0, arch, cfg.outer_config())
m = report.misfit_percent
print(f"\nmisfit: start {m[0]:.2f}%, best {min(m):.2f}% at step {report.best_step}, last {m[-1]:.2f}%")
print(f"{report.n_steps} steps in {report.wall_time:.0f} s; "
      f"inner solves all converged: {all(report.inner_converged)}")
