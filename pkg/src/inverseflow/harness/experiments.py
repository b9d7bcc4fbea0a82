"""Experiment orchestration: the 2-D toy study, the two-fidelity cost
study, and the end-to-end 85-parameter pipeline.

Each run function takes a frozen config, writes its artifacts under the
config's output directory (every file carries a schema/config-hash/seed
header), and returns the in-memory objects alongside summary statistics so
callers and tests can reuse trained models without reloading.
"""

from __future__ import annotations

import dataclasses
import logging
import os

import numpy as np

from ..cinn import CinnTrainConfig, InverseQuery, cinn_invert, cinn_train
from ..data import HIGH, LOW, Dataset
from ..errors import NumericError
from ..gp import McmcConfig, mcmc_fit
from ..mfgp import adaptive_select, sobol_pool, mfgp_fit
from ..numcore import CosineAnneal
from ..problems import (
    BladeLikeProblem,
    ToyProblem,
    blade_doe,
    blade_like_eval,
    mf_pair_dataset,
    synth_mf_pair,
    toy_forward,
    toy_inverse_oracle,
    toy_objective,
    toy_sample_x,
)
from .artifacts import config_hash, write_csv, write_grid_csv, write_json
from .configs import BladeLikeConfig, MfStudyConfig, ToyConfig, to_doc
from .metrics import nrmse, r_squared
from .pipeline import ValidationReport, dimension_scaled_prior, fit_forward_surrogate


log = logging.getLogger(__name__)


def derived_seed(*parts: int) -> int:
    """Stable child seed from a tuple of integers."""
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


# ---------------------------------------------------------------------------
# 2-D toy study
# ---------------------------------------------------------------------------

def run_toy(config: ToyConfig) -> dict:
    """Train the flow on an online stream from the quadratic bowl, then
    sample and score the learned conditionals at each configured target."""
    p = ToyProblem(d_x=config.d_x, L_x=config.domain_width,
                   noise_std=config.noise_std)
    h = config_hash(to_doc(config))
    out = config.out_dir
    os.makedirs(out, exist_ok=True)

    def sampler(rng, n):
        X = toy_sample_x(p, rng, n)
        return X, toy_forward(p, X, rng).reshape(-1, 1)

    tcfg = CinnTrainConfig(
        M=config.d_x, D_y=1, D_c=config.D_c, L=config.L,
        st_hidden=tuple(config.st_hidden), cond_hidden=tuple(config.cond_hidden),
        batch_size=config.batch_size, n_steps=config.n_steps,
        lr_schedule=CosineAnneal(config.lr_start, config.lr_end, config.n_steps),
        seed=config.seed)
    model = cinn_train(sampler, tcfg)
    if model.diverged_at_step is not None:
        tail = (model.training_curve or [])[-3:]
        raise NumericError(
            f"training diverged at step {model.diverged_at_step}; "
            f"last epoch losses: {tail}")

    write_csv(os.path.join(out, "training_curve.csv"), "toy-curve-v1", h,
              config.seed, ["epoch", "mean_nll"],
              [(i, v) for i, v in enumerate(model.training_curve)])
    write_json(os.path.join(out, "model.json"), "toy-model-v1", h,
               config.seed, {"model": model.to_json_dict()})

    hw = config.hist_half_width
    query_seeds = np.random.SeedSequence([config.seed, 3]).generate_state(
        len(config.targets))
    target_stats = {}
    for ti, y0 in enumerate(config.targets):
        q = InverseQuery(np.array([y0]), config.samples_per_target,
                         int(query_seeds[ti]))
        cands = cinn_invert(model, q)
        Xh = np.stack([c.x_hat for c in cands])
        Z = np.stack([c.latent for c in cands])
        center, radius_true = toy_inverse_oracle(p, y0)
        radii = np.linalg.norm(Xh - center, axis=1)
        f_vals = toy_objective(p, Xh)
        stats = {
            "target": float(y0),
            "radius_true": radius_true,
            "median_radius": float(np.median(radii)),
            "median_abs_radius_dev": float(np.median(np.abs(radii - radius_true))),
            "mean_abs_forward_error": float(np.mean(np.abs(f_vals - y0))),
            "frac_inside_2": float(np.mean(radii < 2.0)),
        }
        tag = f"{y0:g}"
        cols = ([f"x{i+1}" for i in range(config.d_x)]
                + [f"z{i+1}" for i in range(config.d_x)] + ["radius"])
        write_csv(os.path.join(out, f"samples_y{tag}.csv"), "toy-samples-v1",
                  h, config.seed, cols,
                  [tuple(Xh[j]) + tuple(Z[j]) + (radii[j],)
                   for j in range(Xh.shape[0])])
        density, e1, e2 = np.histogram2d(
            Xh[:, 0], Xh[:, 1], bins=config.hist_bins,
            range=[[-hw, hw], [-hw, hw]], density=True)
        write_grid_csv(os.path.join(out, f"hist_y{tag}.csv"), "toy-hist-v1",
                       h, config.seed, e1, e2, density)
        target_stats[tag] = stats

    write_json(os.path.join(out, "radius_stats.json"), "toy-stats-v1", h,
               config.seed, {"targets": target_stats})
    return {"target_stats": target_stats, "model": model,
            "curve": model.training_curve, "out_dir": out}


# ---------------------------------------------------------------------------
# Two-fidelity cost study
# ---------------------------------------------------------------------------

def _fit_mf(D: Dataset, mcmc: McmcConfig, seed: int, prior=None):
    return mfgp_fit(D, prior=prior,
                    config=dataclasses.replace(mcmc, seed=seed))


def run_mf_study(config: MfStudyConfig) -> dict:
    """Grow a two-fidelity surrogate by cost-aware acquisition and compare
    its hold-out error against single-fidelity fits of matched equivalent
    cost, over several seeds."""
    h = config_hash(to_doc(config))
    out = config.out_dir
    os.makedirs(out, exist_ok=True)
    mcmc = McmcConfig(config.mcmc_steps, config.mcmc_burn, config.mcmc_keep)
    x_test = np.linspace(0.0, 1.0, config.n_test)
    _, y_test = synth_mf_pair(x_test)
    degenerate = config.max_low is not None and config.max_low <= config.init_low

    per_seed = []
    curve_rows = []
    for seed in config.seeds:
        x_low = sobol_pool(1, 0.0, 1.0, derived_seed(seed, 11),
                           size=config.init_low).ravel()
        x_high = sobol_pool(1, 0.0, 1.0, derived_seed(seed, 12),
                            size=config.init_high).ravel()
        D = mf_pair_dataset(x_low, x_high, config.cost_ratio)

        mf_points = []
        budget_idx = 0
        rounds = 0
        while budget_idx < len(config.budgets) and rounds < 500:
            cost = D.equivalent_cost()
            if cost >= config.budgets[budget_idx] - 1e-9:
                model = _fit_mf(D, mcmc, derived_seed(seed, 31, budget_idx))
                err = nrmse(model.predict_mean_batch(x_test[:, None]), y_test)
                mf_points.append({"budget": config.budgets[budget_idx],
                                  "cost": cost, "n_low": D.count(LOW),
                                  "n_high": D.count(HIGH), "nrmse": err})
                budget_idx += 1
                continue
            model = _fit_mf(D, mcmc, derived_seed(seed, 41, rounds))
            pool = sobol_pool(1, 0.0, 1.0, derived_seed(seed, 51, rounds))
            choice = adaptive_select(model, pool, config.cost_ratio)
            x_new, fid = choice.x, choice.fidelity
            if (config.max_low is not None and fid == LOW
                    and D.count(LOW) >= config.max_low):
                # cheap side capped: fall back to the best expensive candidate
                best_high = int(np.argmax(choice.table[:, 1]))
                x_new, fid = pool[best_high].copy(), HIGH
            y_lo, y_hi = synth_mf_pair(x_new[0])
            D = D.appended(x_new, [y_lo if fid == LOW else y_hi], fid)
            rounds += 1

        sf_points = []
        for bi, budget in enumerate(config.budgets):
            n_h = max(2, int(np.floor(budget + 1e-9)))
            xs = sobol_pool(1, 0.0, 1.0, derived_seed(seed, 61, bi),
                            size=n_h).ravel()
            _, ys = synth_mf_pair(xs)
            Dh = Dataset(xs[:, None], ys[:, None],
                         np.array([HIGH] * n_h, dtype=object),
                         cost_ratio=config.cost_ratio)
            gp = mcmc_fit(Dh, config=dataclasses.replace(
                mcmc, seed=derived_seed(seed, 71, bi)))
            err = nrmse(gp.predict_mean_batch(x_test[:, None]), y_test)
            sf_points.append({"budget": budget, "cost": float(n_h),
                              "n_low": 0, "n_high": n_h, "nrmse": err})

        for row in mf_points:
            curve_rows.append(("mf", seed, row["budget"], row["cost"],
                               row["n_low"], row["n_high"], row["nrmse"]))
        for row in sf_points:
            curve_rows.append(("single", seed, row["budget"], row["cost"],
                               row["n_low"], row["n_high"], row["nrmse"]))
        per_seed.append({"seed": seed,
                         "mf_final_nrmse": mf_points[-1]["nrmse"],
                         "sf_final_nrmse": sf_points[-1]["nrmse"],
                         "mf_wins": mf_points[-1]["nrmse"] <= sf_points[-1]["nrmse"],
                         "mf_curve": mf_points, "sf_curve": sf_points})
        log.info("seed %d: mf %.4f vs single %.4f at final budget", seed,
                 mf_points[-1]["nrmse"], sf_points[-1]["nrmse"])

    wins = sum(1 for r in per_seed if r["mf_wins"])
    write_csv(os.path.join(out, "cost_curves.csv"), "mf-curves-v1", h,
              min(config.seeds),
              ["method", "seed", "budget", "cost", "n_low", "n_high", "nrmse"],
              curve_rows)
    summary = {"wins": wins, "n_seeds": len(config.seeds),
               "degenerate_low_budget": degenerate,
               "per_seed": [{k: v for k, v in r.items()
                             if k not in ("mf_curve", "sf_curve")}
                            for r in per_seed]}
    write_json(os.path.join(out, "summary.json"), "mf-summary-v1", h,
               min(config.seeds), summary)
    return {"wins": wins, "n_seeds": len(config.seeds), "per_seed": per_seed,
            "degenerate_low_budget": degenerate, "out_dir": out}


# ---------------------------------------------------------------------------
# 85-parameter end-to-end pipeline
# ---------------------------------------------------------------------------

class StageFailure(RuntimeError):
    """A pipeline stage failed; carries the stage name for the report."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


def run_blade_like(config: BladeLikeConfig) -> dict:
    """End-to-end inverse-design pipeline on the synthetic 85-parameter
    problem: adaptive two-fidelity DOE, per-output surrogates with profile
    reduction, surrogate-drawn training pairs, flow training, and an
    inverse-consistency validation over held-out targets."""
    h = config_hash(to_doc(config))
    out = config.out_dir
    os.makedirs(out, exist_ok=True)
    p = BladeLikeProblem(config.problem_seed)
    d = p.d_in
    completed: list[str] = []
    state: dict = {}

    def fail(stage: str, err: BaseException):
        write_json(os.path.join(out, "report.json"), "blade-report-v1", h,
                   config.seed, {"failed_stage": stage, "error": str(err),
                                 "completed_stages": completed})
        raise StageFailure(stage, err) from err

    # -- stage: adaptive DOE over both fidelities ---------------------------
    try:
        X_low = sobol_pool(d, 0.0, 1.0, derived_seed(config.seed, 1),
                           size=config.n_low_init)
        X_high_all = sobol_pool(d, 0.0, 1.0, derived_seed(config.seed, 2),
                                size=config.n_high_init)
        n_hold = max(2, int(round(config.holdout_frac * config.n_high_init)))
        X_hold = X_high_all[-n_hold:]
        X_high = X_high_all[:-n_hold]
        D = blade_doe(p, X_low, X_high, config.cost_ratio)
        doe_mcmc = McmcConfig(config.doe_mcmc_steps, config.doe_mcmc_burn,
                              config.doe_mcmc_keep)
        guide_prior = dimension_scaled_prior(d)
        for r in range(config.adaptive_rounds):
            D_eff = Dataset(D.X, D.Y[:, :1], D.fidelity,
                            cost_ratio=config.cost_ratio)
            guide = _fit_mf(D_eff, doe_mcmc, derived_seed(config.seed, 3, r),
                            prior=guide_prior)
            pool = sobol_pool(d, 0.0, 1.0, derived_seed(config.seed, 4, r))
            choice = adaptive_select(guide, pool, config.cost_ratio)
            scal, prof = blade_like_eval(p, choice.x, fidelity=choice.fidelity)
            D = D.appended(choice.x, np.concatenate([scal, prof]),
                           choice.fidelity)
            log.info("doe round %d/%d: picked %s (cost %.2f)", r + 1,
                     config.adaptive_rounds, choice.fidelity,
                     D.equivalent_cost())
        D.to_csv(os.path.join(out, "doe.csv"),
                 ["schema: blade-doe-v1", f"config_hash: {h}",
                  f"seed: {config.seed}"])
        completed.append("doe")
        state["doe"] = {"n_low": D.count(LOW), "n_high": D.count(HIGH),
                        "equivalent_cost": D.equivalent_cost()}
    except StageFailure:
        raise
    except Exception as err:
        fail("doe", err)

    # -- stage: forward surrogates ------------------------------------------
    try:
        log.info("fitting forward surrogates on %d rows", D.n)
        mcmc = McmcConfig(config.mcmc_steps, config.mcmc_burn, config.mcmc_keep)
        surrogate = fit_forward_surrogate(
            D, profile_channels=(100, 100), pca_threshold=config.pca_threshold,
            pca_max_k=config.pca_max_k, mcmc=mcmc,
            seed=derived_seed(config.seed, 5))
        scal_h, prof_h = blade_like_eval(p, X_hold)
        true_modeled = np.hstack([scal_h, surrogate.encode_profiles(prof_h)])
        pred_modeled, _ = surrogate.predict_modeled_batch(X_hold)
        forward_rows = []
        for j, name in enumerate(surrogate.modeled_names()):
            forward_rows.append({
                "name": name,
                "nrmse": nrmse(pred_modeled[:, j], true_modeled[:, j]),
                "r2": r_squared(pred_modeled[:, j], true_modeled[:, j])})
        write_json(os.path.join(out, "forward_model.json"), "blade-forward-v1",
                   h, config.seed, {"bundle": surrogate.to_json_dict()})
        completed.append("forward")
        state["pca_k"] = surrogate.k
        state["pca_energy"] = surrogate.basis.total_energy_captured
    except StageFailure:
        raise
    except Exception as err:
        fail("forward", err)

    # -- stage: surrogate-drawn training pairs -------------------------------
    try:
        log.info("drawing %d surrogate training pairs", config.n_pairs)
        Xp = sobol_pool(d, 0.0, 1.0, derived_seed(config.seed, 6),
                        size=config.n_pairs)
        Yp = surrogate.predict_mean_batch(Xp)
        completed.append("pairs")
    except StageFailure:
        raise
    except Exception as err:
        fail("pairs", err)

    # -- stage: inverse model -------------------------------------------------
    try:
        steps_per_epoch = max(1, -(-config.n_pairs // config.batch_size))
        tcfg = CinnTrainConfig(
            M=d, D_y=surrogate.out_dim, D_c=config.D_c, L=config.L,
            st_hidden=tuple(config.st_hidden),
            cond_hidden=tuple(config.cond_hidden),
            batch_size=config.batch_size, n_epochs=config.n_epochs,
            lr_schedule=CosineAnneal(config.lr_start, config.lr_end,
                                     config.n_epochs * steps_per_epoch),
            weight_decay=config.weight_decay,
            dropout_rate=config.dropout_rate, seed=config.seed)
        model = cinn_train((Xp, Yp), tcfg)
        if model.diverged_at_step is not None:
            raise NumericError(
                f"training diverged at step {model.diverged_at_step}")
        write_csv(os.path.join(out, "training_curve.csv"), "blade-curve-v1",
                  h, config.seed, ["epoch", "mean_nll"],
                  [(i, v) for i, v in enumerate(model.training_curve)])
        completed.append("train-inverse")
    except StageFailure:
        raise
    except Exception as err:
        fail("train-inverse", err)

    # -- stage: inverse-consistency validation -------------------------------
    try:
        log.info("validating on %d held-out targets", config.n_targets)
        Xt = sobol_pool(d, 0.0, 1.0, derived_seed(config.seed, 7),
                        size=config.n_targets)
        Yt = surrogate.predict_mean_batch(Xt)
        q_seeds = np.random.SeedSequence([config.seed, 8]).generate_state(
            config.n_targets)
        all_xhat = []
        for i in range(config.n_targets):
            q = InverseQuery(Yt[i], config.samples_per_target, int(q_seeds[i]))
            cands = cinn_invert(model, q)
            all_xhat.append(np.stack([c.x_hat for c in cands]))
        stacked = np.vstack(all_xhat)
        ns = surrogate.n_scalars
        scal_pred = np.empty((stacked.shape[0], ns))
        for j in range(ns):
            scal_pred[:, j] = surrogate.models[j].predict_mean_batch(stacked)
        scal_pred = scal_pred.reshape(config.n_targets,
                                      config.samples_per_target, ns)
        per_target_mean = scal_pred.mean(axis=1)
        per_target_std = scal_pred.std(axis=1)

        inverse_rows = []
        for j, name in enumerate(surrogate.scalar_names):
            inverse_rows.append({
                "name": name,
                "r2": r_squared(per_target_mean[:, j], Yt[:, j]),
                "mean_abs_error": float(
                    np.mean(np.abs(per_target_mean[:, j] - Yt[:, j]))),
                "mean_sample_std": float(per_target_std[:, j].mean())})

        report = ValidationReport(forward_rows, inverse_rows, extras={
            "pca_k": state["pca_k"],
            "pca_energy_captured": state["pca_energy"],
            "doe": state["doe"],
            "n_targets": config.n_targets,
            "samples_per_target": config.samples_per_target,
            "r2_threshold": config.r2_threshold,
            "completed_stages": completed + ["validate"]})
        write_json(os.path.join(out, "report.json"), "blade-report-v1", h,
                   config.seed, report.to_json_dict())
        write_csv(os.path.join(out, "forward_metrics.csv"),
                  "blade-forward-metrics-v1", h, config.seed,
                  ["name", "nrmse", "r2"], report.forward_csv_rows())
        write_csv(os.path.join(out, "inverse_metrics.csv"),
                  "blade-inverse-metrics-v1", h, config.seed,
                  ["name", "r2", "mean_abs_error", "mean_sample_std"],
                  report.inverse_csv_rows())

        n_ex = min(config.n_profile_examples, config.n_targets)
        prof_rows = []
        for i in range(n_ex):
            target_prof = Yt[i, ns:]
            mean_prof = surrogate.predict_mean_batch(all_xhat[i]).mean(axis=0)[ns:]
            for e in range(target_prof.shape[0]):
                prof_rows.append((i, e, target_prof[e], mean_prof[e]))
        write_csv(os.path.join(out, "profile_examples.csv"),
                  "blade-profiles-v1", h, config.seed,
                  ["target_index", "entry", "target", "candidate_mean"],
                  prof_rows)
        completed.append("validate")
    except StageFailure:
        raise
    except Exception as err:
        fail("validate", err)

    ok = all(row["r2"] >= config.r2_threshold for row in report.inverse_rows)
    return {"report": report, "ok": ok, "surrogate": surrogate,
            "model": model, "dataset": D, "out_dir": out,
            "doe": state["doe"]}
