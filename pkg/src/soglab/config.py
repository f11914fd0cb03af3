"""Experiment configuration files.

Grammar (one setting per line)::

    # comment
    experiment = toy-em
    seed = 0
    em.sigmas = 1.0, 0.01

* ``key = value``; whitespace around both is ignored; ``#`` starts a comment
  when it begins a line or follows whitespace.
* Keys are ``name`` or ``section.name`` and must appear in :data:`SCHEMA`.
  Unknown or repeated keys are errors that cite the line number.
* Lists are comma-separated. Booleans are ``true``/``false``.
* ``experiment`` and ``seed`` are mandatory; everything else has a default.

:func:`dump_config` writes every resolved value back in the same grammar, so a
snapshot re-parses to an identical configuration.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

EXPERIMENTS = ("toy-em", "sog-fit", "theory", "circles-expert", "sog-bc", "sog-gail", "eval")
LAMBDA_GRID = (0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0)


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending line where there is one."""


@dataclass(frozen=True)
class Option:
    kind: str  # int | float | str | bool | floats | ints
    default: object
    doc: str
    choices: tuple = ()
    minimum: float | None = None


def _opt(kind, default, doc, choices=(), minimum=None):
    return Option(kind, default, doc, tuple(choices), minimum)


SCHEMA: dict[str, Option] = {
    "experiment": _opt("str", None, "which experiment to run", EXPERIMENTS),
    "seed": _opt("int", None, "master seed", minimum=0),
    "out": _opt("str", "", "output directory (empty: runs/<experiment>-seed<seed>)"),
    # toy data
    "toy.n": _opt("int", 3000, "number of toy pairs", minimum=1),
    "toy.noise_std": _opt("float", 0.01, "toy output noise std", minimum=0.0),
    "toy.offsets": _opt("floats", (3.0, 0.0, -1.5, 2.6, -1.5, -2.6), "mode offsets w_k as x1, y1, x2, y2, ..."),
    "toy.offset_scale": _opt("float", 1.0, "multiplies every offset (smaller = less separation)", minimum=0.0),
    # EM vs SOG comparison
    "em.sigmas": _opt("floats", (1.0, 0.01), "soft-EM noise scales"),
    "em.epochs": _opt("int", 200, "full-batch epochs per method", minimum=1),
    "em.learning_rate": _opt("float", 0.1, "SGD step size", minimum=0.0),
    "em.init_scale": _opt("float", 1e-9, "initial weight scale", minimum=0.0),
    "em.code_init": _opt("str", "spread", "initial code columns", ("spread", "glorot")),
    "em.update_prior": _opt("bool", True, "update mixture weights in soft EM"),
    # SOG fit on toy data
    "sog.latent": _opt("str", "discrete", "latent prior", ("discrete", "continuous")),
    "sog.latent_dim": _opt("int", 2, "continuous latent dimension", minimum=1),
    "sog.n_latent_samples": _opt("int", 64, "candidate codes per datum (continuous)", minimum=1),
    "sog.epochs": _opt("int", 100, "training epochs", minimum=1),
    "sog.batch_size": _opt("int", 0, "minibatch size (0 = full batch)", minimum=0),
    "sog.optimizer": _opt("str", "sgd", "optimizer", ("sgd", "adam")),
    "sog.learning_rate": _opt("float", 0.1, "step size", minimum=0.0),
    "sog.search": _opt("str", "joint", "code search", ("joint", "coordinate")),
    "sog.block_size": _opt("int", 1, "coordinate block size", minimum=1),
    "sog.hidden": _opt("int", 32, "hidden width of the continuous-latent model", minimum=1),
    "sog.init_scale": _opt("float", 1e-9, "initial weight scale of the linear model", minimum=0.0),
    # theory checks
    "theory.n_nets": _opt("int", 20, "random tanh networks for the proposition checks", minimum=1),
    "theory.n_samples": _opt("int", 10000, "neighbourhood samples per check", minimum=1),
    "theory.delta_x": _opt("float", 0.05, "delta_x for proposition 1", minimum=0.0),
    "theory.delta_y": _opt("float", 0.05, "delta_y for proposition 1", minimum=0.0),
    "theory.sigmas": _opt("floats", (0.5, 0.25, 0.1), "noise scales for the Laplace sweep"),
    "theory.grid_points": _opt("int", 801, "quadrature grid points per latent dimension", minimum=101),
    # Circles
    "env.episode_length": _opt("int", 1000, "steps per episode", minimum=1),
    "env.noise_frac": _opt("float", 0.1, "expert noise as a fraction of the chord", minimum=0.0),
    "env.max_action_norm": _opt("float", 0.1, "action clip radius", minimum=0.0),
    "env.bandwidth": _opt("float", 0.2, "reward kernel bandwidth h", minimum=0.0),
    "expert.per_mode": _opt("int", 10, "expert trajectories per mode", minimum=1),
    "expert.file": _opt("str", "", "load expert trajectories from this JSON-lines file instead of generating"),
    "policy.hidden": _opt("ints", (64, 64), "policy hidden widths"),
    "policy.log_std": _opt("float", -5.0, "initial log std"),
    "policy.output_scale": _opt("float", 0.01, "initial scale of the policy output layer", minimum=0.0),
    "bc.iterations": _opt("int", 2000, "SOG-BC iterations", minimum=0),
    "bc.pairs_per_traj": _opt("int", 64, "pairs sampled per trajectory per iteration", minimum=1),
    "bc.traj_batch": _opt("int", 0, "trajectories per iteration (0 = all)", minimum=0),
    "bc.learning_rate": _opt("float", 1e-3, "adam step size", minimum=0.0),
    "bc.final_lr_frac": _opt("float", 0.05, "step size at the last iteration as a fraction of bc.learning_rate", minimum=0.0),
    "bc.n_latent_samples": _opt("int", 16, "candidate codes per trajectory (continuous)", minimum=1),
    "gail.iterations": _opt("int", 50, "SOG-GAIL iterations", minimum=1),
    "gail.gamma": _opt("float", 0.99, "discount"),
    "gail.clip_eps": _opt("float", 0.2, "PPO clip parameter"),
    "gail.lambda_h": _opt("float", 0.0, "entropy coefficient", minimum=0.0),
    "gail.lambda_s": _opt("float", 1.0, "SOG coefficient", minimum=0.0),
    "gail.ppo_epochs": _opt("int", 4, "PPO passes per iteration", minimum=1),
    "gail.minibatch": _opt("int", 500, "PPO minibatch size", minimum=1),
    "gail.rollouts_per_iter": _opt("int", 6, "rollouts per iteration", minimum=1),
    "gail.rollout_length": _opt("int", 0, "steps per rollout (0 = episode length)", minimum=0),
    "gail.disc_steps": _opt("int", 5, "discriminator steps per iteration", minimum=1),
    "gail.disc_lr": _opt("float", 1e-3, "discriminator adam step size", minimum=0.0),
    "gail.policy_lr": _opt("float", 1e-3, "policy adam step size", minimum=0.0),
    "gail.value_lr": _opt("float", 1e-3, "value adam step size", minimum=0.0),
    "gail.value_steps": _opt("int", 20, "value regression steps per iteration", minimum=0),
    "gail.reward_form": _opt("str", "neg_log_d", "policy reward from D", ("neg_log_d", "log_one_minus_d")),
    "gail.sog_loss": _opt("str", "nll", "SOG term: Gaussian NLL or squared error", ("nll", "mse")),
    "gail.sog_pairs_per_traj": _opt("int", 32, "expert pairs per trajectory for each SOG term", minimum=1),
    "gail.pretrain_iterations": _opt("int", 0, "SOG-BC pretraining iterations before GAIL", minimum=0),
    "eval.policy": _opt("str", "expert", "policy to evaluate", ("expert", "random", "checkpoint")),
    "eval.checkpoint": _opt("str", "", "policy checkpoint for eval.policy = checkpoint"),
    "eval.n_rollouts": _opt("int", 5, "rollouts per code", minimum=1),
    "eval.perturb_p": _opt("float", 0.2, "random-action probability for the perturbed evaluation", minimum=0.0),
    "eval.deterministic": _opt("bool", False, "roll out the policy mean instead of sampling"),
    "sweep.lambda": _opt("str", "", "lambda_s sweep: empty, paper-grid (1-2-5 steps from 0.01 to 1), or a comma list"),
}


@dataclass
class ExperimentConfig:
    values: dict

    def __getitem__(self, key: str):
        return self.values[key]

    @property
    def experiment(self) -> str:
        return self.values["experiment"]

    @property
    def seed(self) -> int:
        return self.values["seed"]

    def with_overrides(self, **overrides) -> "ExperimentConfig":
        vals = dict(self.values)
        for k, v in overrides.items():
            key = k.replace("__", ".")
            if key not in SCHEMA:
                raise ConfigError(f"unknown key {key!r}")
            vals[key] = v
        return ExperimentConfig(vals)

    def lambda_sweep(self) -> tuple[float, ...]:
        spec = self.values["sweep.lambda"].strip()
        if not spec:
            return ()
        if spec == "paper-grid":
            return LAMBDA_GRID
        try:
            return tuple(float(v) for v in spec.split(","))
        except ValueError as exc:
            raise ConfigError(f"sweep.lambda: {exc}") from exc


def _parse_value(key: str, raw: str, opt: Option):
    kind = opt.kind
    try:
        if kind == "int":
            v = int(raw)
        elif kind == "float":
            v = float(raw)
        elif kind == "bool":
            low = raw.lower()
            if low not in ("true", "false"):
                raise ValueError(f"expected true or false, got {raw!r}")
            v = low == "true"
        elif kind == "str":
            v = raw
        elif kind in ("floats", "ints"):
            conv = float if kind == "floats" else int
            parts = [p.strip() for p in raw.split(",")] if raw.strip() else []
            if not parts or any(not p for p in parts):
                raise ValueError("expected a non-empty comma-separated list")
            v = tuple(conv(p) for p in parts)
        else:  # pragma: no cover - schema is static
            raise ValueError(f"unsupported kind {kind}")
    except ValueError as exc:
        raise ValueError(f"{key}: {exc}") from None
    if opt.choices and v not in opt.choices:
        raise ValueError(f"{key}: {v!r} not one of {', '.join(opt.choices)}")
    if opt.minimum is not None:
        items = v if isinstance(v, tuple) else (v,)
        if any(x < opt.minimum for x in items):
            raise ValueError(f"{key}: must be >= {opt.minimum}")
    if kind == "float" and v != v:
        raise ValueError(f"{key}: NaN not allowed")
    return v


def _strip_comment(line: str) -> str:
    if line.lstrip().startswith("#"):
        return ""
    for i, ch in enumerate(line):
        if ch == "#" and i > 0 and line[i - 1] in " \t":
            return line[:i]
    return line


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    seen: dict[str, int] = {}
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = _strip_comment(line).strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {body!r}")
        key, raw = (s.strip() for s in body.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"{source}:{lineno}: {key!r} already set on line {seen[key]}")
        seen[key] = lineno
        try:
            values[key] = _parse_value(key, raw, SCHEMA[key])
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
    for required in ("experiment", "seed"):
        if required not in values:
            raise ConfigError(f"{source}: missing required key {required!r}")
    resolved = {k: opt.default for k, opt in SCHEMA.items()}
    resolved.update(values)
    cfg = ExperimentConfig(resolved)
    if len(cfg["toy.offsets"]) % 2:
        raise ConfigError(f"{source}:{seen['toy.offsets']}: toy.offsets needs an even number of values")
    cfg.lambda_sweep()
    return cfg


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {p}: {exc.strerror}") from None
    return parse_config(text, str(p))


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(_format(x) for x in v)
    return str(v)


def dump_config(cfg: ExperimentConfig) -> str:
    """Every key with its resolved value, schema order, in the input grammar."""
    lines = ["# resolved configuration"]
    for key in SCHEMA:
        lines.append(f"{key} = {_format(cfg.values[key])}")
    return "\n".join(lines) + "\n"
