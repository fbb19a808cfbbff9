"""Command-line front end: ``python -m learnreg {gen-data,train,solve-inner,eval}``.

Every subcommand reads a JSON run configuration (``--config``); relative
paths inside it are resolved against the configuration file's directory.
Outputs go to ``--out DIR``, which must already exist.

Exit codes: 0 success, 2 usage or validation error, 3 file error,
4 numerical failure during training, 5 inner solver did not converge.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import datagen, inner, mlp, outer, storage

__all__ = ["RunConfig", "load_config", "main", "EXIT_OK", "EXIT_USAGE", "EXIT_IO", "EXIT_NUMERIC", "EXIT_INNER"]

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC, EXIT_INNER = 0, 2, 3, 4, 5


class UsageError(ValueError):
    pass


@dataclass
class RunConfig:
    """Parsed configuration; each section maps onto a library config object."""

    data: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    inner: dict = field(default_factory=dict)
    eval: dict = field(default_factory=dict)
    paths: dict = field(default_factory=dict)
    base: Path = Path(".")

    def path(self, key, override=None) -> Path:
        value = override if override is not None else self.paths.get(key)
        if value is None:
            raise UsageError(f"no path given for {key!r} (set paths.{key} in the config)")
        p = Path(value)
        return p if p.is_absolute() or override is not None else self.base / p

    def gen_config(self, seed=None) -> datagen.GenConfig:
        known = {f.name for f in fields(datagen.GenConfig)}
        kw = {k: v for k, v in self.data.items() if k in known}
        for key in ("u_range", "bounds", "g"):
            if key in kw:
                kw[key] = tuple(kw[key])
        if seed is not None:
            kw["seed"] = seed
        return datagen.GenConfig(**kw)

    def noise(self):
        spec = self.data.get("noise")
        if spec is None:
            return None
        return datagen.NoiseSpec(spec.get("sigma"), spec.get("seed", 1))

    def architecture(self, n_in: int) -> mlp.Architecture:
        widths = self.model.get("widths") or [n_in, 8, 8, 1]
        if widths[0] != n_in:
            raise UsageError(f"model.widths starts with {widths[0]} but the data has n_in = {n_in}")
        return mlp.Architecture(tuple(widths), mlp.Activation(self.model.get("activation", "tanh")))

    def outer_config(self, workers=None, seed=None) -> outer.OuterConfig:
        known = {f.name for f in fields(outer.OuterConfig)}
        unknown = set(self.train) - known
        if unknown:
            raise UsageError(f"unknown train option(s): {', '.join(sorted(unknown))}")
        kw = dict(self.train)
        if "bb_bounds" in kw:
            kw["bb_bounds"] = tuple(kw["bb_bounds"])
        if workers is not None:
            kw["workers"] = workers
        if seed is not None:
            kw["seed"] = seed
        return outer.OuterConfig(**kw)


_SECTIONS = ("data", "model", "train", "inner", "eval", "paths")


def load_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    doc = storage.load_json(path)
    if not isinstance(doc, dict):
        raise UsageError("configuration must be a JSON object")
    unknown = set(doc) - set(_SECTIONS)
    if unknown:
        raise UsageError(f"unknown configuration section(s): {', '.join(sorted(unknown))}")
    return RunConfig(**{k: dict(doc.get(k, {})) for k in _SECTIONS}, base=path.parent)


def _out_dir(args) -> Path:
    out = Path(args.out)
    if not out.is_dir():
        raise FileNotFoundError(f"output directory does not exist: {out}")
    return out


def cmd_gen_data(args, cfg: RunConfig) -> int:
    out = _out_dir(args)
    gen = cfg.gen_config(args.seed)
    kind = cfg.data.get("kind", "l2")
    if kind == "l2":
        ds = datagen.gen_l2_dataset(gen)
    elif kind == "noisy":
        ds = datagen.gen_noisy_dataset(gen, cfg.noise())
    else:
        raise UsageError(f"data.kind must be 'l2' or 'noisy', got {kind!r}")
    path = storage.save_dataset(ds, out / "dataset.json")
    print(f"wrote {path} (K={ds.K}, n_in={ds.n_in})")
    return EXIT_OK


def _initial_weights(cfg: RunConfig, arch, seed):
    init = cfg.model.get("init_weights")
    if init is not None:
        _, w = storage.load_weights(cfg.base / init)
        w.check(arch)
        return w
    seed = cfg.model.get("init_seed", 0) if seed is None else seed
    return mlp.random_weights(arch, np.random.default_rng(seed), cfg.model.get("init_scale", 1e-2))


def cmd_train(args, cfg: RunConfig) -> int:
    out = _out_dir(args)
    ds = storage.load_dataset(cfg.path("dataset", args.dataset))
    arch = cfg.architecture(ds.n_in)
    ocfg = cfg.outer_config(args.workers, args.seed)
    w0 = _initial_weights(cfg, arch, args.seed)
    try:
        report = outer.bb_solve(ds, w0, arch, ocfg)
    except outer.InitializationError as exc:
        print(f"error in stage armijo-bootstrap: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (outer.NumericalError, np.linalg.LinAlgError, ArithmeticError) as exc:
        print(f"error in stage outer-iteration: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    storage.save_report(report, arch, out / "report.json")
    storage.write_csv(
        out / "misfit.csv",
        ["step", "misfit_percent"],
        [(n, m) for n, m in enumerate(report.misfit_percent)],
    )
    storage.save_weights(report.final_weights, arch, out / "weights.json")
    print(
        f"steps {report.n_steps}  misfit {report.misfit_percent[0]:.4g}% -> "
        f"{report.misfit_percent[-1]:.4g}% (best {min(report.misfit_percent):.4g}% at step {report.best_step})"
    )
    return EXIT_OK


def cmd_solve_inner(args, cfg: RunConfig) -> int:
    out = _out_dir(args)
    ds = storage.load_dataset(cfg.path("dataset", args.dataset))
    arch, w = storage.load_weights(cfg.path("weights", args.weights))
    opts = cfg.inner
    k = int(opts.get("task", 0))
    if not 0 <= k < ds.K:
        raise UsageError(f"inner.task = {k} outside 0..{ds.K - 1}")
    prob = ds.problem(k, w, arch, opts.get("gamma", "identity"))
    u0 = ds.mean_control()
    if args.u_init is not None:
        doc = storage.load_json(args.u_init)
        u0 = np.asarray(doc["u"] if isinstance(doc, dict) else doc, dtype=float)
    elif "u_init" in opts:
        u0 = np.asarray(opts["u_init"], dtype=float)
    sol = inner.nesterov_solve(prob, u0, opts.get("tol", 1e-10), opts.get("max_iter", 5000))
    storage.save_json(
        {
            "task": k,
            "u": sol.u.values.tolist(),
            "y": sol.y.tolist(),
            "grad_norm": sol.proj_grad_norm,
            "iterations": sol.iterations,
            "converged": sol.converged,
            "on_boundary": sol.on_boundary,
        },
        out / "solution.json",
    )
    if not sol.converged:
        print(f"inner solver did not converge: {sol.message}", file=sys.stderr)
        return EXIT_INNER
    print(f"task {k}: {sol.iterations} iterations, |G| = {sol.proj_grad_norm:.3e}")
    return EXIT_OK


def cmd_eval(args, cfg: RunConfig) -> int:
    out = _out_dir(args)
    arch, w = storage.load_weights(cfg.path("weights", args.weights))
    if arch.n_in != 1 or arch.n_out != 1:
        raise UsageError(f"graph mode needs a scalar network, got widths {arch.widths}")
    grid = cfg.eval.get("grid", {})
    num = int(grid.get("num", 101))
    if num < 1:
        raise UsageError("eval.grid.num must be at least 1")
    us = np.linspace(float(grid.get("start", 0.1)), float(grid.get("stop", 3.0)), num)
    r = np.array([mlp.forward(w, [u], arch)[0][0] for u in us])
    header, cols = ["u", "r"], [us, r]
    if cfg.eval.get("reference", False):
        coef = float(cfg.eval.get("reference_coef", 1.5))
        header.append("reference")
        cols.append(coef * us**2)
    path = storage.write_csv(out / "graph.csv", header, zip(*cols))
    print(f"wrote {path} ({num} rows)")
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "solve-inner": cmd_solve_inner,
    "eval": cmd_eval,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="learnreg", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int, help="override the data or initialization seed")
        p.add_argument("--workers", type=int, help="threads for the per-datum pipelines")
        p.add_argument("--out", required=True, help="existing output directory")
        if name in ("train", "solve-inner"):
            p.add_argument("--dataset", help="data set JSON (overrides paths.dataset)")
        if name in ("solve-inner", "eval"):
            p.add_argument("--weights", help="weights JSON (overrides paths.weights)")
        if name == "solve-inner":
            p.add_argument("--u-init", dest="u_init", help="solution JSON to start from")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args.config)
        if args.workers is not None and args.workers < 1:
            raise UsageError("--workers must be at least 1")
        return COMMANDS[args.command](args, cfg)
    except (UsageError, storage.SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except datagen.GenerationError as exc:
        print(f"error in stage generation: {exc}", file=sys.stderr)
        return EXIT_INNER
    except (ValueError, TypeError) as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
