"""Command-line entry point.

Subcommands: doe, train-forward, train-inverse, invert, validate, toy,
mf-study, blade-like. Every subcommand accepts --config <path> (JSON,
defaults apply when omitted) and --seed (overrides the config's seed).
Exit codes: 0 success, 1 usage or configuration error, 2 numeric or
validation failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

import numpy as np

from ..cinn import CinnModel, CinnTrainConfig, InverseQuery, cinn_invert, cinn_train, postprocess
from ..data import HIGH, LOW, Dataset
from ..errors import ConfigurationError, NumericError, RangeError, ShapeError
from ..gp import McmcConfig
from ..mfgp import sobol_pool
from ..numcore import CosineAnneal
from ..problems import BladeLikeProblem, blade_doe, blade_like_eval, mf_pair_dataset
from .artifacts import config_hash, read_json, write_csv, write_json
from .configs import (
    BladeLikeConfig,
    DoeConfig,
    InvertConfig,
    MfStudyConfig,
    ToyConfig,
    TrainForwardConfig,
    TrainInverseConfig,
    ValidateConfig,
    load_config,
    to_doc,
)
from .experiments import StageFailure, derived_seed, run_blade_like, run_mf_study, run_toy
from .metrics import nrmse, r_squared
from .pipeline import ForwardSurrogate, ValidationReport, fit_forward_surrogate


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as exit code 1, not 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _load(cls, args):
    cfg = load_config(cls, args.config) if args.config else cls()
    if getattr(args, "seed", None) is not None:
        if hasattr(cfg, "seeds"):
            cfg = dataclasses.replace(cfg, seeds=(args.seed,))
        elif hasattr(cfg, "seed"):
            cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _box(values, d):
    return np.broadcast_to(np.asarray(values, dtype=float), (d,))


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _cmd_doe(args) -> int:
    cfg = _load(DoeConfig, args)
    if cfg.problem == "mf-pair":
        x_low = sobol_pool(1, 0.0, 1.0, derived_seed(cfg.seed, 1),
                           size=cfg.n_low).ravel()
        x_high = sobol_pool(1, 0.0, 1.0, derived_seed(cfg.seed, 2),
                            size=cfg.n_high).ravel()
        D = mf_pair_dataset(x_low, x_high, cfg.cost_ratio)
    else:
        p = BladeLikeProblem(cfg.problem_seed)
        X_low = sobol_pool(p.d_in, 0.0, 1.0, derived_seed(cfg.seed, 1),
                           size=cfg.n_low)
        X_high = sobol_pool(p.d_in, 0.0, 1.0, derived_seed(cfg.seed, 2),
                            size=cfg.n_high)
        D = blade_doe(p, X_low, X_high, cfg.cost_ratio)
    if cfg.extend and os.path.exists(cfg.out):
        base = Dataset.from_csv(cfg.out, cost_ratio=cfg.cost_ratio)
        if base.d != D.d or base.m != D.m:
            raise ConfigurationError(
                "existing dataset shape does not match the requested problem")
        D = Dataset(np.vstack([base.X, D.X]), np.vstack([base.Y, D.Y]),
                    np.concatenate([base.fidelity, D.fidelity]),
                    x_names=base.x_names, y_names=base.y_names,
                    cost_ratio=cfg.cost_ratio)
    h = config_hash(to_doc(cfg))
    os.makedirs(os.path.dirname(cfg.out) or ".", exist_ok=True)
    D.to_csv(cfg.out, ["schema: doe-v1", f"config_hash: {h}",
                       f"seed: {cfg.seed}"])
    print(f"wrote {cfg.out} ({D.count(LOW)} low / {D.count(HIGH)} high, "
          f"equivalent cost {D.equivalent_cost():g})")
    return 0


def _cmd_train_forward(args) -> int:
    cfg = _load(TrainForwardConfig, args)
    D = Dataset.from_csv(cfg.dataset)
    mcmc = McmcConfig(cfg.mcmc_steps, cfg.mcmc_burn, cfg.mcmc_keep)
    n_high = D.count(HIGH)
    holdout_rows = None
    if cfg.holdout_frac > 0.0 and n_high >= 4:
        n_hold = max(2, int(round(cfg.holdout_frac * n_high)))
        high_idx = np.flatnonzero(D.mask(HIGH))
        hold_idx = high_idx[-n_hold:]
        keep = np.ones(D.n, dtype=bool)
        keep[hold_idx] = False
        holdout_rows = (D.X[hold_idx], D.Y[hold_idx])
        D = Dataset(D.X[keep], D.Y[keep], D.fidelity[keep],
                    x_names=D.x_names, y_names=D.y_names,
                    cost_ratio=D.cost_ratio)
    surrogate = fit_forward_surrogate(
        D, profile_channels=tuple(cfg.profile_channels),
        pca_threshold=cfg.pca_threshold, pca_max_k=cfg.pca_max_k,
        mcmc=mcmc, seed=cfg.seed)
    metrics = None
    if holdout_rows is not None:
        Xh, Yh = holdout_rows
        ns = surrogate.n_scalars
        true_mod = Yh[:, :ns]
        if surrogate.k:
            true_mod = np.hstack([true_mod,
                                  surrogate.encode_profiles(Yh[:, ns:])])
        pred_mod, _ = surrogate.predict_modeled_batch(Xh)
        metrics = [{"name": name,
                    "nrmse": nrmse(pred_mod[:, j], true_mod[:, j]),
                    "r2": r_squared(pred_mod[:, j], true_mod[:, j])}
                   for j, name in enumerate(surrogate.modeled_names())]
    h = config_hash(to_doc(cfg))
    write_json(cfg.out, "forward-bundle-v1", h, cfg.seed,
               {"bundle": surrogate.to_json_dict(),
                "holdout_metrics": metrics})
    kind = "two-fidelity" if D.count(LOW) >= 2 and D.count(HIGH) >= 2 else "single-fidelity"
    print(f"wrote {cfg.out} ({kind}, {len(surrogate.models)} outputs, "
          f"pca k={surrogate.k})")
    return 0


def _read_forward(path: str) -> ForwardSurrogate:
    doc = read_json(path)
    if "bundle" not in doc:
        raise ConfigurationError(f"{path} is not a forward model bundle")
    return ForwardSurrogate.from_json_dict(doc["bundle"])


def _cmd_train_inverse(args) -> int:
    cfg = _load(TrainInverseConfig, args)
    surrogate = _read_forward(cfg.forward_model)
    d = surrogate.d
    lo, hi = _box(cfg.box_lo, d), _box(cfg.box_hi, d)
    Xp = sobol_pool(d, lo, hi, derived_seed(cfg.seed, 1), size=cfg.n_pairs)
    Yp = surrogate.predict_mean_batch(Xp)
    steps_per_epoch = max(1, -(-cfg.n_pairs // cfg.batch_size))
    tcfg = CinnTrainConfig(
        M=d, D_y=Yp.shape[1], D_c=cfg.D_c, L=cfg.L,
        st_hidden=tuple(cfg.st_hidden), cond_hidden=tuple(cfg.cond_hidden),
        batch_size=cfg.batch_size, n_epochs=cfg.n_epochs,
        lr_schedule=CosineAnneal(cfg.lr_start, cfg.lr_end,
                                 cfg.n_epochs * steps_per_epoch),
        weight_decay=cfg.weight_decay, dropout_rate=cfg.dropout_rate,
        seed=cfg.seed)
    model = cinn_train((Xp, Yp), tcfg)
    if model.diverged_at_step is not None:
        raise NumericError(f"training diverged at step {model.diverged_at_step}")
    h = config_hash(to_doc(cfg))
    write_json(cfg.out, "inverse-model-v1", h, cfg.seed,
               {"model": model.to_json_dict(),
                "box_lo": lo.tolist(), "box_hi": hi.tolist(),
                "final_nll": model.training_curve[-1]})
    print(f"wrote {cfg.out} (M={d}, D_y={Yp.shape[1]}, "
          f"final mean NLL {model.training_curve[-1]:.4f})")
    return 0


def _read_inverse(path: str) -> tuple[CinnModel, np.ndarray | None, np.ndarray | None]:
    doc = read_json(path)
    if "model" not in doc:
        raise ConfigurationError(f"{path} is not an inverse model file")
    model = CinnModel.from_json_dict(doc["model"])
    lo = np.asarray(doc["box_lo"], dtype=float) if "box_lo" in doc else None
    hi = np.asarray(doc["box_hi"], dtype=float) if "box_hi" in doc else None
    return model, lo, hi


def _parse_target(args, d_y: int) -> np.ndarray:
    if (args.target is None) == (args.target_file is None):
        raise UsageError("provide exactly one of --target or --target-file")
    if args.target is not None:
        try:
            vals = [float(v) for v in args.target.split(",") if v.strip()]
        except ValueError as err:
            raise UsageError(f"bad --target: {err}") from err
    else:
        try:
            text = open(args.target_file).read()
        except OSError as err:
            raise UsageError(f"cannot read --target-file: {err}") from err
        vals = [float(v) for v in text.replace(",", " ").split()]
    t = np.asarray(vals, dtype=float)
    if t.shape[0] != d_y:
        raise UsageError(f"target has {t.shape[0]} entries, model expects {d_y}")
    return t


def _cmd_invert(args) -> int:
    cfg = _load(InvertConfig, args)
    if args.samples < 1:
        raise UsageError("--samples must be at least 1")
    model, _, _ = _read_inverse(cfg.model)
    target = _parse_target(args, model.D_y)
    seed = args.seed if args.seed is not None else 0
    query = InverseQuery(target, args.samples, seed)
    cands = cinn_invert(model, query)
    columns = ([f"x{i+1}" for i in range(model.M)]
               + [f"z{i+1}" for i in range(model.M)])
    with_forward = bool(cfg.forward_model)
    if with_forward:
        surrogate = _read_forward(cfg.forward_model)
        cands = postprocess(cands, surrogate)
        n_out = cands[0].forward_mean.shape[0]
        columns += ([f"mean_{i+1}" for i in range(n_out)]
                    + [f"std_{i+1}" for i in range(n_out)])
    rows = []
    for c in cands:
        row = list(c.x_hat) + list(c.latent)
        if with_forward:
            row += list(c.forward_mean) + list(c.forward_std)
        rows.append(row)
    h = config_hash(to_doc(cfg))
    write_csv(cfg.out, "candidates-v1", h, seed, columns, rows)
    print(f"wrote {cfg.out} ({len(cands)} candidates)")
    return 0


def _cmd_validate(args) -> int:
    cfg = _load(ValidateConfig, args)
    model, box_lo, box_hi = _read_inverse(cfg.model)
    surrogate = _read_forward(cfg.forward_model)
    d = surrogate.d
    if model.M != d:
        raise ConfigurationError(
            f"inverse model has M={model.M}, forward bundle expects {d} inputs")
    if model.D_y != surrogate.out_dim:
        raise ConfigurationError(
            f"inverse model conditions on {model.D_y} outputs, "
            f"forward bundle produces {surrogate.out_dim}")
    lo = box_lo if box_lo is not None else _box(cfg.box_lo, d)
    hi = box_hi if box_hi is not None else _box(cfg.box_hi, d)
    Xt = sobol_pool(d, lo, hi, derived_seed(cfg.seed, 1), size=cfg.n_targets)
    Yt_raw = surrogate.predict_mean_batch(Xt)
    Yt_mod, _ = surrogate.predict_modeled_batch(Xt)
    q_seeds = np.random.SeedSequence([cfg.seed, 2]).generate_state(cfg.n_targets)
    stacked = []
    for i in range(cfg.n_targets):
        q = InverseQuery(Yt_raw[i], cfg.samples_per_target, int(q_seeds[i]))
        stacked.append(np.stack([c.x_hat for c in cinn_invert(model, q)]))
    X_all = np.vstack(stacked)
    pred_mod = np.empty((X_all.shape[0], len(surrogate.models)))
    for j, m in enumerate(surrogate.models):
        pred_mod[:, j] = m.predict_mean_batch(X_all)
    pred_mod = pred_mod.reshape(cfg.n_targets, cfg.samples_per_target, -1)
    means = pred_mod.mean(axis=1)
    stds = pred_mod.std(axis=1)
    inverse_rows = []
    for j, name in enumerate(surrogate.modeled_names()):
        try:
            r2 = r_squared(means[:, j], Yt_mod[:, j])
        except RangeError as err:
            raise RangeError(
                f"target column {name!r} is constant across validation "
                f"targets; the forward bundle is degenerate") from err
        inverse_rows.append({
            "name": name,
            "r2": r2,
            "mean_abs_error": float(np.mean(np.abs(means[:, j] - Yt_mod[:, j]))),
            "mean_sample_std": float(stds[:, j].mean())})
    report = ValidationReport([], inverse_rows, extras={
        "n_targets": cfg.n_targets,
        "samples_per_target": cfg.samples_per_target,
        "r2_threshold": cfg.r2_threshold})
    h = config_hash(to_doc(cfg))
    write_json(cfg.out, "validation-v1", h, cfg.seed, report.to_json_dict())
    scalar_rows = inverse_rows[:surrogate.n_scalars]
    worst = min(r["r2"] for r in scalar_rows)
    for r in inverse_rows:
        print(f"{r['name']}: r2={r['r2']:.4f} "
              f"mae={r['mean_abs_error']:.4g} std={r['mean_sample_std']:.4g}")
    if worst < cfg.r2_threshold:
        print(f"validation failed: scalar r2 {worst:.4f} "
              f"< threshold {cfg.r2_threshold}", file=sys.stderr)
        return 2
    print(f"wrote {cfg.out} (worst scalar r2 {worst:.4f})")
    return 0


def _cmd_toy(args) -> int:
    cfg = _load(ToyConfig, args)
    result = run_toy(cfg)
    for tag, st in result["target_stats"].items():
        print(f"y={tag}: median radius {st['median_radius']:.3f} "
              f"(true {st['radius_true']:.3f}), "
              f"mean |f-y| {st['mean_abs_forward_error']:.3f}")
    print(f"artifacts in {result['out_dir']}")
    return 0


def _cmd_mf_study(args) -> int:
    cfg = _load(MfStudyConfig, args)
    result = run_mf_study(cfg)
    for r in result["per_seed"]:
        print(f"seed {r['seed']}: mf {r['mf_final_nrmse']:.4f} vs "
              f"single {r['sf_final_nrmse']:.4f} "
              f"({'mf wins' if r['mf_wins'] else 'single wins'})")
    print(f"multi-fidelity wins {result['wins']} of {result['n_seeds']} seeds")
    if result["degenerate_low_budget"]:
        print("note: low-fidelity budget capped at the seed design "
              "(degenerate mode)")
    print(f"artifacts in {result['out_dir']}")
    return 0


def _cmd_blade_like(args) -> int:
    cfg = _load(BladeLikeConfig, args)
    result = run_blade_like(cfg)
    report = result["report"]
    for r in report.forward_rows:
        print(f"forward {r['name']}: nrmse={r['nrmse']:.4f} r2={r['r2']:.4f}")
    for r in report.inverse_rows:
        print(f"inverse {r['name']}: r2={r['r2']:.4f} "
              f"mae={r['mean_abs_error']:.4g}")
    print(f"artifacts in {result['out_dir']}")
    if not result["ok"]:
        worst = min(r["r2"] for r in report.inverse_rows)
        print(f"validation failed: scalar r2 {worst:.4f} "
              f"< threshold {cfg.r2_threshold}", file=sys.stderr)
        return 2
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="inverseflow",
                     description="Probabilistic inverse design: forward "
                                 "surrogates plus an invertible inverse model.")
    sub = parser.add_subparsers(dest="command", metavar="command")

    def add(name, fn, help_text, extra=None):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON config file (defaults if omitted)")
        p.add_argument("--seed", type=int, help="override the config seed")
        if extra:
            extra(p)
        p.set_defaults(fn=fn)
        return p

    add("doe", _cmd_doe, "generate or extend a two-fidelity dataset CSV")
    add("train-forward", _cmd_train_forward,
        "fit per-output surrogates on a dataset CSV")
    add("train-inverse", _cmd_train_inverse,
        "train an inverse model on surrogate-drawn pairs")

    def invert_flags(p):
        p.add_argument("--target", help="comma-separated target vector")
        p.add_argument("--target-file",
                       help="file holding the target vector (whitespace or "
                            "comma separated)")
        p.add_argument("--samples", type=int, default=100,
                       help="candidates to draw (default 100)")

    add("invert", _cmd_invert,
        "sample design candidates for a target", invert_flags)
    add("validate", _cmd_validate,
        "inverse-consistency check of an inverse model against its "
        "forward bundle")
    add("toy", _cmd_toy, "2-D toy study: train, sample, score analytically")
    add("mf-study", _cmd_mf_study,
        "two-fidelity vs single-fidelity cost comparison")
    add("blade-like", _cmd_blade_like,
        "end-to-end pipeline on the synthetic 85-parameter problem")
    return parser


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "fn", None) is None:
            parser.print_help(sys.stderr)
            return 1
        return args.fn(args)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except (ConfigurationError, ShapeError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except RangeError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (ArithmeticError, StageFailure) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
