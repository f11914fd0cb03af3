"""Command line entry point.

``soglab run <config> [--seed N] [--out DIR] [--jobs K]`` runs one experiment
and writes its artifacts; ``soglab plot <trajectories.jsonl> --out f.svg``
draws trajectories over the reference circles.

Exit codes: 0 success, 2 invalid config or input, 3 failure during the run
(a ``failure.json`` is left next to whatever outputs were already written).
"""
from __future__ import annotations

import argparse
import sys
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import checkpoint
from .circles import (
    DEFAULT_CIRCLES,
    CirclesConfig,
    Trajectory,
    generate_expert_dataset,
    load_trajectories,
    save_trajectories,
)
from .config import ConfigError, ExperimentConfig, dump_config, load_config, parse_config
from .em import ToySpec, compare_em_sog, gen_toy_dataset, permutation_accuracy, toy_model
from .imitation import (
    GAIL_METRICS,
    BCConfig,
    ExpertPolicy,
    GailConfig,
    RandomPolicy,
    TrainingDiverged,
    make_discriminator,
    make_policy,
    mode_reward_assignment,
    perturbed_eval,
    rollout,
    sog_bc_train,
    sog_gail_train,
)
from .io import atomic_write_text, write_csv, write_json, write_jsonl
from .latent import ConditionalModel, ContinuousPrior, DiscretePrior, SogConfig, sog_fit
from .nn import DenseNet, TwoHeadPolicyNet
from .svg import line_plot, trajectory_plot
from .circles import CirclesEnv
from .theory import (
    certify_propositions,
    laplace_ll,
    laplace_sigma_sweep,
    linear_gaussian_ll,
    random_linear_instance,
    sweep_instance,
)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


class RunFailure(RuntimeError):
    """Raised inside an experiment with extra context for ``failure.json``."""

    def __init__(self, message: str, details: dict | None = None):
        super().__init__(message)
        self.details = details or {}


# --------------------------------------------------------------------------
# config -> objects


def toy_spec(cfg: ExperimentConfig) -> ToySpec:
    flat = np.asarray(cfg["toy.offsets"], dtype=np.float64) * cfg["toy.offset_scale"]
    offsets = tuple(map(tuple, flat.reshape(-1, 2).tolist()))
    k = len(offsets)
    return ToySpec(n=cfg["toy.n"], offsets=offsets, noise_std=cfg["toy.noise_std"], masses=(1.0 / k,) * k, seed=cfg.seed)


def env_config(cfg: ExperimentConfig) -> CirclesConfig:
    return CirclesConfig(
        episode_length=cfg["env.episode_length"],
        noise_frac=cfg["env.noise_frac"],
        max_action_norm=cfg["env.max_action_norm"],
        bandwidth=cfg["env.bandwidth"],
    )


def bc_config(cfg: ExperimentConfig, seed: int, iterations: int | None = None) -> BCConfig:
    return BCConfig(
        iterations=cfg["bc.iterations"] if iterations is None else iterations,
        pairs_per_traj=cfg["bc.pairs_per_traj"],
        traj_batch=cfg["bc.traj_batch"] or None,
        n_latent_samples=cfg["bc.n_latent_samples"],
        learning_rate=cfg["bc.learning_rate"],
        final_lr_frac=cfg["bc.final_lr_frac"],
        seed=seed,
    )


def gail_config(cfg: ExperimentConfig, seed: int, lambda_s: float | None = None) -> GailConfig:
    return GailConfig(
        iterations=cfg["gail.iterations"],
        gamma=cfg["gail.gamma"],
        clip_eps=cfg["gail.clip_eps"],
        lambda_h=cfg["gail.lambda_h"],
        lambda_s=cfg["gail.lambda_s"] if lambda_s is None else lambda_s,
        ppo_epochs=cfg["gail.ppo_epochs"],
        minibatch=cfg["gail.minibatch"],
        rollouts_per_iter=cfg["gail.rollouts_per_iter"],
        rollout_length=cfg["gail.rollout_length"] or None,
        disc_steps=cfg["gail.disc_steps"],
        disc_lr=cfg["gail.disc_lr"],
        policy_lr=cfg["gail.policy_lr"],
        value_lr=cfg["gail.value_lr"],
        value_steps=cfg["gail.value_steps"],
        sog_pairs_per_traj=cfg["gail.sog_pairs_per_traj"],
        reward_form=cfg["gail.reward_form"],
        sog_loss=cfg["gail.sog_loss"],
        seed=seed,
    )


def new_policy(cfg: ExperimentConfig, k: int, seed: int) -> TwoHeadPolicyNet:
    return make_policy(
        k,
        np.random.default_rng(seed),
        hidden=cfg["policy.hidden"],
        log_std=cfg["policy.log_std"],
        output_scale=cfg["policy.output_scale"],
    )


def expert_data(cfg: ExperimentConfig, env_cfg: CirclesConfig) -> list[Trajectory]:
    if cfg["expert.file"]:
        try:
            return load_trajectories(cfg["expert.file"])
        except (OSError, ValueError) as exc:
            raise ConfigError(f"expert.file: {exc}") from None
    return generate_expert_dataset(env_cfg, cfg["expert.per_mode"], seed=cfg.seed)


def positions_only(trajs) -> list[Trajectory]:
    """Drop the stacked history to keep rollout files small (states become 2-d positions)."""
    return [
        Trajectory(t.states[:, -2:], t.actions, t.latent, None if t.final_state is None else t.final_state[-2:], t.rewards, t.mode)
        for t in trajs
    ]


def eval_rollouts(policy, env_cfg: CirclesConfig, codes, n: int, seed: int, deterministic: bool = False) -> list[Trajectory]:
    rng = np.random.default_rng(seed)
    out = []
    for i, z in enumerate(np.atleast_2d(codes)):
        env = CirclesEnv(env_cfg, n_envs=n, seed=seed + 1 + i)
        out += rollout(policy, env, z, None, rng, deterministic=deterministic)
    return positions_only(out)


def derived_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=(index,)).generate_state(1)[0])


# --------------------------------------------------------------------------
# experiments
#
# Each returns a small summary dict (also written to summary.json). Only
# seed-determined values go into files; wall-clock time is printed instead.


def run_toy_em(cfg: ExperimentConfig, out: Path) -> dict:
    toy = toy_spec(cfg)
    report = compare_em_sog(
        toy,
        sigmas=cfg["em.sigmas"],
        epochs=cfg["em.epochs"],
        learning_rate=cfg["em.learning_rate"],
        init_scale=cfg["em.init_scale"],
        update_prior=cfg["em.update_prior"],
        code_init=cfg["em.code_init"],
    )
    atomic_write_text(out / "metrics.csv", report.to_csv())
    methods = [("soft-em", s) for s in cfg["em.sigmas"]] + [("hard-em", None), ("sog", None)]
    summary = {"methods": []}
    series, onehot = {}, {}
    epochs = np.arange(1, cfg["em.epochs"] + 1)
    for method, sigma in methods:
        label = method if sigma is None else f"{method} sigma={sigma:g}"
        loss = report.curve(method, sigma)
        entry = {
            "method": method,
            "sigma": sigma,
            "final_loss": float(loss[-1]),
            "final_accuracy": report.final(method, sigma, "accuracy"),
        }
        if method == "soft-em":
            oh = report.curve(method, sigma, "onehotness")
            entry["onehotness_epoch2"] = float(oh[1]) if oh.size > 1 else None
            entry["final_onehotness"] = float(oh[-1])
            onehot[label] = (epochs, oh)
        summary["methods"].append(entry)
        series[label] = (epochs, loss)
    write_json(out / "summary.json", summary)
    atomic_write_text(out / "loss_curves.svg", line_plot(series, "training loss", "epoch", "loss", log_y=True))
    if onehot:
        atomic_write_text(out / "onehotness.svg", line_plot(onehot, "posterior one-hotness", "epoch", "mean max responsibility"))
    return summary


def run_sog_fit(cfg: ExperimentConfig, out: Path) -> dict:
    toy = toy_spec(cfg)
    data = gen_toy_dataset(toy)
    rng = np.random.default_rng(cfg.seed + 1)
    if cfg["sog.latent"] == "discrete":
        prior = DiscretePrior.uniform(toy.k)
        model = toy_model(toy.k, 2, 2, rng, cfg["sog.init_scale"])
    else:
        prior = ContinuousPrior(cfg["sog.latent_dim"])
        net = DenseNet.init([prior.dim + 2, cfg["sog.hidden"], 2], rng, hidden_activation="tanh")
        model = ConditionalModel(net, prior.dim)
    sc = SogConfig(
        n_latent_samples=cfg["sog.n_latent_samples"],
        batch_size=cfg["sog.batch_size"] or None,
        epochs=cfg["sog.epochs"],
        optimizer=cfg["sog.optimizer"],
        learning_rate=cfg["sog.learning_rate"],
        seed=cfg.seed,
        search=cfg["sog.search"],
        block_size=cfg["sog.block_size"],
    )
    report = sog_fit(model, data, prior, sc)
    write_jsonl(out / "metrics.jsonl", report.records())
    write_csv(out / "metrics.csv", ("epoch", "loss"), [(i + 1, l) for i, l in enumerate(report.losses)])
    checkpoint.save(model.net, out / "model.ckpt")
    summary = {"final_loss": report.losses[-1], "latent": cfg["sog.latent"]}
    if isinstance(prior, DiscretePrior):
        summary["accuracy"] = permutation_accuracy(report.assignments, data.labels, toy.k)
    epochs = np.arange(1, len(report.losses) + 1)
    atomic_write_text(out / "loss.svg", line_plot({"sog": (epochs, report.losses)}, "SOG training loss", "epoch", "loss", log_y=True))
    write_json(out / "summary.json", summary)
    return summary


def run_theory(cfg: ExperimentConfig, out: Path) -> dict:
    rng = np.random.default_rng(cfg.seed)
    rows = []
    for i in range(50):
        model, x, y = random_linear_instance(rng)
        lap = laplace_ll(model, x, y).full_ll
        exact = linear_gaussian_ll(model, x, y)
        rows.append((i, model.code_dim, y.size, model.sigma, lap, exact, abs(lap - exact)))
    write_csv(out / "laplace_linear.csv", ("instance", "latent_dim", "output_dim", "sigma", "laplace_ll", "exact_ll", "abs_error"), rows)

    model, x, y = sweep_instance(cfg.seed)
    sweep = laplace_sigma_sweep(model, x, y, cfg["theory.sigmas"], cfg["theory.grid_points"])
    keys = ("sigma", "laplace_ll", "quadrature_ll", "first_term_ll", "laplace_error", "first_term_rel_gap", "reliable")
    write_csv(out / "laplace_sweep.csv", keys, [[r[k] for k in keys] for r in sweep])
    sig = [r["sigma"] for r in sweep]
    atomic_write_text(
        out / "laplace_sweep.svg",
        line_plot(
            {"|laplace - quadrature|": (sig, [r["laplace_error"] for r in sweep]),
             "first-term relative gap": (sig, [r["first_term_rel_gap"] for r in sweep])},
            "Laplace accuracy vs sigma", "sigma", "error", log_y=True,
        ),
    )

    reports = certify_propositions(
        seed=cfg.seed,
        n_nets=cfg["theory.n_nets"],
        n_samples=cfg["theory.n_samples"],
        delta_x=cfg["theory.delta_x"],
        delta_y=cfg["theory.delta_y"],
    )
    write_jsonl(out / "propositions.jsonl", [r.to_json() for r in reports])
    props = {}
    for p in (1, 2, 3):
        rs = [r for r in reports if r.proposition == p]
        props[str(p)] = {
            "checks": len(rs),
            "applicable": sum(r.applicable for r in rs),
            "violations": int(sum(r.violations for r in rs)),
        }
    summary = {
        "linear_max_abs_error": max(r[-1] for r in rows),
        "sweep": sweep,
        "propositions": props,
    }
    write_json(out / "summary.json", summary)
    return summary


def run_circles_expert(cfg: ExperimentConfig, out: Path) -> dict:
    env_cfg = env_config(cfg)
    trajs = expert_data(cfg, env_cfg)
    save_trajectories(out / "expert.jsonl", trajs)
    rows = []
    for m in range(env_cfg.n_modes):
        rs = [t.rewards.mean() for t in trajs if t.mode == m and t.rewards is not None]
        rows.append((m, len(rs), float(np.mean(rs)) if rs else float("nan")))
    write_csv(out / "metrics.csv", ("mode", "trajectories", "mean_reward"), rows)
    atomic_write_text(out / "expert.svg", trajectory_plot(trajs, env_cfg.mode_circles, "expert demonstrations"))
    summary = {"n_trajectories": len(trajs), "mean_reward_per_mode": [r[2] for r in rows]}
    write_json(out / "summary.json", summary)
    return summary


def run_sog_bc(cfg: ExperimentConfig, out: Path) -> dict:
    env_cfg = env_config(cfg)
    trajs = expert_data(cfg, env_cfg)
    k = env_cfg.n_modes
    policy = new_policy(cfg, k, cfg.seed)
    try:
        report = sog_bc_train(policy, trajs, DiscretePrior.uniform(k), bc_config(cfg, cfg.seed))
    except TrainingDiverged as exc:
        write_jsonl(out / "metrics.jsonl", exc.metrics)
        raise RunFailure(str(exc), {"iteration": exc.iteration}) from exc
    write_csv(out / "metrics.csv", ("iter", "loss"), [(i + 1, l) for i, l in enumerate(report.losses)])
    checkpoint.save(policy, out / "policy.ckpt")
    codes = np.eye(k)
    n, seed = cfg["eval.n_rollouts"], cfg.seed
    det = cfg["eval.deterministic"]
    learned = mode_reward_assignment(policy, env_cfg, codes, n, seed, deterministic=det)
    baseline = mode_reward_assignment(RandomPolicy(), env_cfg, codes, n, seed)
    labels = np.array([-1 if t.mode is None else t.mode for t in trajs])
    summary = {
        "final_loss": report.losses[-1] if report.losses else None,
        "trajectory_codes": report.assignments.tolist(),
        "trajectory_modes": labels.tolist(),
        "code_accuracy": permutation_accuracy(report.assignments, labels, k) if np.all(labels >= 0) else None,
        "assignment": learned.to_json(),
        "random_baseline": baseline.to_json(),
    }
    write_json(out / "summary.json", summary)
    if report.losses:
        it = np.arange(1, len(report.losses) + 1)
        atomic_write_text(out / "loss.svg", line_plot({"SOG-BC": (it, report.losses)}, "SOG-BC loss", "iteration", "mse", log_y=True))
    rolls = eval_rollouts(policy, env_cfg, codes, 1, seed, det)
    save_trajectories(out / "rollouts.jsonl", rolls)
    atomic_write_text(out / "rollouts.svg", trajectory_plot(rolls, env_cfg.mode_circles, "SOG-BC rollouts"))
    return summary


def _gail_cell(values: dict, lambda_s: float, seed: int, out: str) -> dict:
    """One SOG-GAIL training run; top level so worker processes can import it."""
    cfg = ExperimentConfig(values)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    env_cfg = env_config(cfg)
    trajs = expert_data(cfg, env_cfg)
    k = env_cfg.n_modes
    prior = DiscretePrior.uniform(k)
    codes = np.eye(k)
    n, det, p = cfg["eval.n_rollouts"], cfg["eval.deterministic"], cfg["eval.perturb_p"]

    policy = new_policy(cfg, k, seed)
    disc = make_discriminator(np.random.default_rng(seed + 1), hidden=cfg["policy.hidden"])
    pre = mode_reward_assignment(policy, env_cfg, codes, n, cfg.seed, deterministic=det)
    result = {"lambda_s": lambda_s, "seed": seed, "pre_training": pre.to_json()}
    if cfg["gail.pretrain_iterations"] > 0:
        sog_bc_train(policy, trajs, prior, bc_config(cfg, seed, cfg["gail.pretrain_iterations"]))
        result["after_pretraining"] = mode_reward_assignment(policy, env_cfg, codes, n, cfg.seed, deterministic=det).to_json()
    try:
        report = sog_gail_train(policy, disc, trajs, prior, gail_config(cfg, seed, lambda_s), env_cfg)
    except TrainingDiverged as exc:
        write_csv(out / "metrics.csv", GAIL_METRICS, exc.metrics)
        raise RunFailure(str(exc), {"iteration": exc.iteration, "lambda_s": lambda_s}) from exc
    write_csv(out / "metrics.csv", GAIL_METRICS, report.rows)
    checkpoint.save(policy, out / "policy.ckpt")
    checkpoint.save(disc, out / "discriminator.ckpt")
    post = mode_reward_assignment(policy, env_cfg, codes, n, cfg.seed, deterministic=det)
    perturbed = [perturbed_eval(policy, env_cfg, codes[i], p, n, cfg.seed, mode=post.bijection[i]) for i in range(k)]
    disc_obj = report.column("disc_obj")
    result.update({
        "trained": post.to_json(),
        "perturbed_reward_per_code": perturbed,
        "perturb_p": p,
        "disc_obj_min": float(disc_obj.min()),
        "disc_obj_max": float(disc_obj.max()),
        "improved": post.mean_reward > pre.mean_reward,
    })
    write_json(out / "summary.json", result)
    it = report.column("iter")
    atomic_write_text(
        out / "metrics.svg",
        line_plot({name: (it, report.column(name)) for name in GAIL_METRICS[1:]}, f"SOG-GAIL (lambda_s={lambda_s:g})", "iteration", "value"),
    )
    rolls = eval_rollouts(policy, env_cfg, codes, 1, cfg.seed, det)
    save_trajectories(out / "rollouts.jsonl", rolls)
    atomic_write_text(out / "rollouts.svg", trajectory_plot(rolls, env_cfg.mode_circles, f"SOG-GAIL rollouts (lambda_s={lambda_s:g})"))
    return result


def run_sog_gail(cfg: ExperimentConfig, out: Path, jobs: int = 1) -> dict:
    grid = cfg.lambda_sweep()
    if not grid:
        return _gail_cell(cfg.values, cfg["gail.lambda_s"], cfg.seed, str(out))
    cells = [(lam, derived_seed(cfg.seed, i), str(out / f"lambda_{lam:g}")) for i, lam in enumerate(grid)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_gail_cell, cfg.values, *c) for c in cells]
            results = [f.result() for f in futures]
    else:
        results = [_gail_cell(cfg.values, *c) for c in cells]
    rows = [
        (r["lambda_s"], r["seed"], float(np.mean(r["pre_training"]["per_mode_reward"])),
         float(np.mean(r["trained"]["per_mode_reward"])), float(np.mean(r["perturbed_reward_per_code"])))
        for r in results
    ]
    write_csv(out / "sweep.csv", ("lambda_s", "seed", "pre_reward", "trained_reward", "perturbed_reward"), rows)
    lams = [r[0] for r in rows]
    atomic_write_text(
        out / "sweep.svg",
        line_plot({"trained": (np.log10(lams), [r[3] for r in rows]), "perturbed": (np.log10(lams), [r[4] for r in rows])},
                  "reward vs lambda_s", "log10 lambda_s", "mean per-step reward"),
    )
    summary = {"cells": results}
    write_json(out / "summary.json", summary)
    return summary


def run_eval(cfg: ExperimentConfig, out: Path) -> dict:
    env_cfg = env_config(cfg)
    k = env_cfg.n_modes
    kind = cfg["eval.policy"]
    if kind == "expert":
        policy = ExpertPolicy(tuple(range(k)))
    elif kind == "random":
        policy = RandomPolicy()
    else:
        if not cfg["eval.checkpoint"]:
            raise ConfigError("eval.checkpoint is required when eval.policy = checkpoint")
        try:
            policy = checkpoint.load(cfg["eval.checkpoint"])
        except (OSError, ValueError) as exc:
            raise ConfigError(f"eval.checkpoint: {exc}") from None
        if not isinstance(policy, TwoHeadPolicyNet) or policy.latent_dim != k:
            raise ConfigError(f"eval.checkpoint: expected a policy with a {k}-dim latent head")
    codes = np.eye(k)
    n, seed, p = cfg["eval.n_rollouts"], cfg.seed, cfg["eval.perturb_p"]
    det = cfg["eval.deterministic"]
    ma = mode_reward_assignment(policy, env_cfg, codes, n, seed, deterministic=det)
    perturbed = [perturbed_eval(policy, env_cfg, codes[i], p, n, seed, mode=ma.bijection[i]) for i in range(k)]
    rows = [(i, ma.bijection[i], ma.per_mode_reward[ma.bijection[i]], perturbed[i]) for i in range(k)]
    write_csv(out / "metrics.csv", ("code", "mode", "reward", "perturbed_reward"), rows)
    summary = {"policy": kind, "assignment": ma.to_json(), "perturb_p": p, "perturbed_reward_per_code": perturbed}
    write_json(out / "summary.json", summary)
    rolls = eval_rollouts(policy, env_cfg, codes, 1, seed, det)
    save_trajectories(out / "rollouts.jsonl", rolls)
    atomic_write_text(out / "rollouts.svg", trajectory_plot(rolls, env_cfg.mode_circles, f"{kind} policy rollouts"))
    return summary


EXPERIMENTS = {
    "toy-em": run_toy_em,
    "sog-fit": run_sog_fit,
    "theory": run_theory,
    "circles-expert": run_circles_expert,
    "sog-bc": run_sog_bc,
    "eval": run_eval,
}


def run_experiment(cfg: ExperimentConfig, out: Path, jobs: int = 1) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "config.resolved", dump_config(cfg))
    if cfg.experiment == "sog-gail":
        return run_sog_gail(cfg, out, jobs)
    return EXPERIMENTS[cfg.experiment](cfg, out)


# --------------------------------------------------------------------------
# argument handling


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="soglab", description="SOG experiments: toy EM/SOG, theory checks, Circles imitation.")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run the experiment described by a config file")
    run.add_argument("config", help="key = value config file")
    run.add_argument("--seed", type=int, help="override the config seed")
    run.add_argument("--out", help="output directory (overrides the config's out)")
    run.add_argument("--jobs", type=int, default=1, help="worker processes for sweep cells")
    plot = sub.add_parser("plot", help="draw trajectories from a JSON-lines file as SVG")
    plot.add_argument("trajectories", help="JSON-lines trajectory file")
    plot.add_argument("--out", required=True, help="SVG file to write")
    plot.add_argument("--title", default="", help="plot title")
    return ap


def resolve(args) -> tuple[ExperimentConfig, Path]:
    cfg = load_config(args.config)
    overrides = {}
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be >= 0")
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out"] = args.out
    cfg = cfg.with_overrides(**overrides) if overrides else cfg
    if args.jobs < 1:
        raise ConfigError("--jobs must be >= 1")
    out = cfg["out"] or f"runs/{cfg.experiment}-seed{cfg.seed}"
    cfg = cfg.with_overrides(out=out)
    # the snapshot must parse back to the same values
    parse_config(dump_config(cfg), "<resolved>")
    return cfg, Path(out)


def _failure(out: Path, exc: BaseException) -> None:
    record = {
        "error": type(exc).__name__,
        "message": str(exc),
        "traceback": traceback.format_exception(type(exc), exc, exc.__traceback__),
    }
    if isinstance(exc, RunFailure):
        record.update(exc.details)
    try:
        write_json(out / "failure.json", record)
    except OSError:
        pass


def cmd_run(args) -> int:
    try:
        cfg, out = resolve(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    start = time.perf_counter()
    try:
        summary = run_experiment(cfg, out, args.jobs)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        _failure(out, exc)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - any failure becomes a record plus exit 3
        print(f"run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        _failure(out, exc)
        return EXIT_RUNTIME
    failure = out / "failure.json"
    if failure.exists():
        failure.unlink()
    print(f"{cfg.experiment} seed={cfg.seed} done in {time.perf_counter() - start:.1f}s -> {out}")
    return EXIT_OK if summary is not None else EXIT_RUNTIME


def cmd_plot(args) -> int:
    try:
        trajs = load_trajectories(args.trajectories)
    except OSError as exc:
        print(f"cannot read {args.trajectories}: {exc.strerror}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"bad trajectory file: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    atomic_write_text(args.out, trajectory_plot(trajs, DEFAULT_CIRCLES, args.title))
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "run":
        return cmd_run(args)
    return cmd_plot(args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
