"""Multimodal imitation on Circles: SOG behaviour cloning and SOG-GAIL.

Policies are anything :func:`policy_actions` understands: a
:class:`~soglab.nn.TwoHeadPolicyNet` (Gaussian, learnable ``log_std``), the
scripted :class:`ExpertPolicy`, or :class:`RandomPolicy`.

Codes are selected per trajectory: each candidate code is scored by the mean
squared action error over that trajectory's sampled pairs, never pair by pair.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .circles import (
    STATE_DIM,
    CirclesConfig,
    CirclesEnv,
    Trajectory,
    circle_reward,
    expert_action,
)
from .latent import DiscretePrior, sample_prior
from .nn import DenseNet, OptimizerState, TwoHeadPolicyNet, opt_step

LOG_QUARTER = float(np.log(0.25))


class TrainingDiverged(RuntimeError):
    """Raised when a loss or gradient becomes non-finite; ``metrics`` holds the rows so far."""

    def __init__(self, message: str, iteration: int, metrics: list):
        super().__init__(message)
        self.iteration = iteration
        self.metrics = metrics


# --------------------------------------------------------------------------
# policies and rollouts


def make_policy(
    k: int,
    rng: np.random.Generator,
    hidden=(64, 64),
    log_std: float = -5.0,
    output_scale: float = 0.01,
    state_dim: int = STATE_DIM,
    action_dim: int = 2,
) -> TwoHeadPolicyNet:
    """Two-head Gaussian policy; ``log_std`` starts at the clamp floor (std ~ 0.0067).

    The output layer's initial weights are multiplied by ``output_scale`` so
    initial means are about as small as expert actions. With O(1) initial
    outputs, the first SOG searches all pick whichever code happens to give
    the smallest output, and the remaining codes never receive data.
    """
    policy = TwoHeadPolicyNet.init(state_dim, k, action_dim, list(hidden), rng, log_std=log_std)
    policy.trunk.layers[-1].weight *= output_scale
    return policy


@dataclass
class ExpertPolicy:
    """The scripted expert; the code's argmax picks the mode through ``wiring``."""

    wiring: tuple = (0, 1, 2)
    noise: bool = True

    def act(self, env: CirclesEnv, states, latents, rng, deterministic=False) -> np.ndarray:
        modes = np.asarray(self.wiring)[np.argmax(np.atleast_2d(latents), axis=1)]
        return expert_action(env, modes, rng, noise=self.noise and not deterministic)


@dataclass
class RandomPolicy:
    """Uniform random direction at the maximum action norm."""

    def act(self, env: CirclesEnv, states, latents, rng, deterministic=False) -> np.ndarray:
        return random_actions(env.n_envs, env.config.max_action_norm, rng)


def random_actions(n: int, max_norm: float, rng: np.random.Generator) -> np.ndarray:
    ang = rng.uniform(0.0, 2 * np.pi, n)
    return max_norm * np.stack([np.cos(ang), np.sin(ang)], axis=1)


def policy_actions(policy, env: CirclesEnv, states, latents, rng, deterministic: bool = False) -> np.ndarray:
    if isinstance(policy, TwoHeadPolicyNet):
        mean = policy.forward(states, latents)
        if deterministic:
            return mean
        return mean + np.exp(policy.log_std) * rng.standard_normal(mean.shape)
    return policy.act(env, states, latents, rng, deterministic)


def rollout(
    policy,
    env: CirclesEnv,
    latents,
    T: int | None = None,
    rng: np.random.Generator | None = None,
    modes=None,
    perturb_p: float = 0.0,
    deterministic: bool = False,
) -> list[Trajectory]:
    """One episode per environment copy, each with its own fixed latent row.

    Every copy starts at the origin. With probability ``perturb_p`` a step's
    action is replaced by a uniformly random direction at the maximum norm.
    When ``modes`` is given the per-step reward against each copy's mode
    circle is recorded.
    """
    if not 0.0 <= perturb_p <= 1.0:
        raise ValueError("perturb_p must lie in [0, 1]")
    rng = rng if rng is not None else np.random.default_rng(0)
    T = env.config.episode_length if T is None else T
    if T > env.config.episode_length:
        raise ValueError("T exceeds the episode length")
    n = env.n_envs
    latents = np.broadcast_to(np.atleast_2d(np.asarray(latents, dtype=np.float64)), (n, np.shape(np.atleast_2d(latents))[1])).copy()
    env.reset()
    states = np.empty((T, n, STATE_DIM))
    actions = np.empty((T, n, 2))
    rewards = np.empty((T, n)) if modes is not None else None
    if modes is not None:
        modes = np.broadcast_to(np.asarray(modes, dtype=np.int64), (n,))
    for t in range(T):
        states[t] = env.state()
        a = policy_actions(policy, env, states[t], latents, rng, deterministic)
        if perturb_p > 0:
            swap = rng.random(n) < perturb_p
            rand = random_actions(n, env.config.max_action_norm, rng)
            a = np.where(swap[:, None], rand, a)
        actions[t] = a
        env.step(a)
        if modes is not None:
            pos = env.positions
            for m in np.unique(modes):
                sel = modes == m
                rewards[t, sel] = circle_reward(pos[sel], env.config.mode_circles[m], env.config.bandwidth)
    final = env.state()
    return [
        Trajectory(
            states[:, i], actions[:, i], latents[i], final[i],
            None if rewards is None else rewards[:, i],
            None if modes is None else int(modes[i]),
        )
        for i in range(n)
    ]


def reward_matrix(trajs_by_code, config: CirclesConfig) -> np.ndarray:
    """``M[i, j]`` = mean per-step reward of code ``i``'s rollouts against circle ``j``."""
    k = len(config.mode_circles)
    out = np.zeros((len(trajs_by_code), k))
    for i, trajs in enumerate(trajs_by_code):
        pos = np.vstack([t.positions()[1:] for t in trajs])
        for j, circle in enumerate(config.mode_circles):
            out[i, j] = float(np.mean(circle_reward(pos, circle, config.bandwidth)))
    return out


def best_bijection(matrix) -> tuple[tuple, float]:
    """Permutation ``perm`` maximising ``sum_i M[i, perm[i]]``; ties keep the first in enumeration order."""
    m = np.asarray(matrix, dtype=np.float64)
    k = m.shape[0]
    if m.shape != (k, k):
        raise ValueError("need a square matrix")
    best, best_total = None, -np.inf
    for perm in itertools.permutations(range(k)):
        total = float(sum(m[i, perm[i]] for i in range(k)))
        if total > best_total:
            best, best_total = perm, total
    return best, best_total


@dataclass
class ModeAssignment:
    matrix: np.ndarray
    bijection: tuple  # code i -> mode bijection[i]
    per_mode_reward: np.ndarray  # indexed by mode
    total: float

    @property
    def mean_reward(self) -> float:
        return float(np.mean(self.per_mode_reward))

    def to_json(self) -> dict:
        return {
            "matrix": self.matrix.tolist(),
            "bijection": list(self.bijection),
            "per_mode_reward": self.per_mode_reward.tolist(),
            "total": self.total,
        }


def mode_reward_assignment(
    policy,
    config: CirclesConfig,
    codes,
    n_rollouts: int = 3,
    seed: int = 0,
    perturb_p: float = 0.0,
    T: int | None = None,
    deterministic: bool = False,
) -> ModeAssignment:
    """Score every code against every circle and pick the best code-to-mode bijection."""
    codes = np.atleast_2d(np.asarray(codes, dtype=np.float64))
    k = config.n_modes
    if codes.shape[0] != k:
        raise ValueError(f"need {k} codes, got {codes.shape[0]}")
    rng = np.random.default_rng(seed)
    by_code = []
    for i in range(k):
        env = CirclesEnv(config, n_envs=n_rollouts, seed=seed + 1 + i)
        by_code.append(rollout(policy, env, codes[i], T, rng, perturb_p=perturb_p, deterministic=deterministic))
    m = reward_matrix(by_code, config)
    perm, total = best_bijection(m)
    per_mode = np.empty(k)
    for i, j in enumerate(perm):
        per_mode[j] = m[i, j]
    return ModeAssignment(m, perm, per_mode, total)


def perturbed_eval(
    policy,
    config: CirclesConfig,
    z,
    p: float = 0.2,
    n_rollouts: int = 3,
    seed: int = 0,
    mode: int | None = None,
    T: int | None = None,
) -> float:
    """Mean per-step reward with random-action perturbations at rate ``p``.

    The reward is measured against ``mode``'s circle, or the best circle
    for this code when ``mode`` is None.
    """
    env = CirclesEnv(config, n_envs=n_rollouts, seed=seed + 1)
    trajs = rollout(policy, env, z, T, np.random.default_rng(seed), perturb_p=p)
    row = reward_matrix([trajs], config)[0]
    return float(row[mode] if mode is not None else row.max())


# --------------------------------------------------------------------------
# SOG behaviour cloning


@dataclass
class BCConfig:
    iterations: int = 2000
    pairs_per_traj: int = 64
    traj_batch: int | None = None  # trajectories per iteration; None = all
    n_latent_samples: int = 16  # candidates per trajectory for a continuous prior
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    final_lr_frac: float = 0.05  # linear decay to this fraction of learning_rate by the last iteration
    seed: int = 0

    def lr_at(self, it: int) -> float:
        frac = it / max(1, self.iterations - 1)
        return self.learning_rate * (1.0 - (1.0 - self.final_lr_frac) * frac)

    def make_optimizer(self) -> OptimizerState:
        return OptimizerState(self.optimizer, self.learning_rate)


def _policy_candidates(prior, n_traj: int, n_samples: int, rng) -> np.ndarray:
    """``(n_traj, C, dz)`` candidate codes: every code of a discrete prior, or prior samples."""
    if isinstance(prior, DiscretePrior):
        return np.broadcast_to(np.eye(prior.k), (n_traj, prior.k, prior.k))
    return np.stack([sample_prior(prior, n_samples, rng) for _ in range(n_traj)])


def trajectory_code_losses(policy: TwoHeadPolicyNet, states, actions, candidates) -> np.ndarray:
    """Mean squared action error of each candidate code over one trajectory's pairs.

    ``states`` (P, ds), ``actions`` (P, da), ``candidates`` (C, dz) -> (C,).
    """
    cands = np.atleast_2d(candidates)
    c, p = cands.shape[0], states.shape[0]
    mean = policy.forward(np.tile(states, (c, 1)), np.repeat(cands, p, axis=0))
    err = np.sum((mean - np.tile(actions, (c, 1))) ** 2, axis=1)
    return err.reshape(c, p).mean(axis=1)


def select_trajectory_codes(policy, batch_states, batch_actions, candidates) -> tuple[np.ndarray, np.ndarray]:
    """Per-trajectory argmin of the mean loss (ties to the lowest index).

    ``batch_states`` (B, P, ds), ``batch_actions`` (B, P, da),
    ``candidates`` (B, C, dz). Returns ``(indices, codes)``.
    """
    b, p, _ = batch_states.shape
    c = candidates.shape[1]
    mean = policy.forward(
        np.repeat(batch_states, c, axis=0).reshape(b * c * p, -1),
        np.repeat(candidates.reshape(b * c, -1), p, axis=0),
    )
    err = np.sum((mean.reshape(b, c, p, -1) - batch_actions[:, None]) ** 2, axis=3).mean(axis=2)
    idx = np.argmin(err, axis=1)
    return idx, candidates[np.arange(b), idx]


def _sample_pairs(trajs, idx, n_pairs: int, rng) -> tuple[np.ndarray, np.ndarray]:
    states, actions = [], []
    for i in idx:
        t = trajs[i]
        sel = rng.integers(0, len(t), n_pairs)
        states.append(t.states[sel])
        actions.append(t.actions[sel])
    return np.stack(states), np.stack(actions)


def sog_bc_loss_grads(policy: TwoHeadPolicyNet, batch_states, batch_actions, codes):
    """Mean squared action error at the selected codes and its parameter gradients."""
    b, p, ds = batch_states.shape
    s = batch_states.reshape(b * p, ds)
    a = batch_actions.reshape(b * p, -1)
    z = np.repeat(codes, p, axis=0)
    r = policy.forward(s, z) - a
    n = s.shape[0]
    grads, _ = policy.backward(s, z, 2.0 * r / n)
    return float(np.sum(r * r) / n), grads


def sog_nll_loss_grads(policy: TwoHeadPolicyNet, batch_states, batch_actions, codes):
    """Mean Gaussian negative log-likelihood of expert actions at the selected codes.

    Same minimiser over codes as the squared error (the std is shared), but on
    the log-likelihood scale of the PPO surrogate, so ``lambda_s`` weighs two
    comparable terms. The last gradient entry is for ``log_std``.
    """
    b, p, ds = batch_states.shape
    s = batch_states.reshape(b * p, ds)
    a = batch_actions.reshape(b * p, -1)
    z = np.repeat(codes, p, axis=0)
    var = np.exp(2 * policy.log_std)
    r = policy.forward(s, z) - a
    n = s.shape[0]
    nll = 0.5 * np.sum(r * r / var, axis=1) + np.sum(policy.log_std) + 0.5 * a.shape[1] * np.log(2 * np.pi)
    grads, _ = policy.backward(s, z, r / var / n)
    grads[-1] = np.mean(1.0 - r * r / var, axis=0)
    return float(nll.mean()), grads


@dataclass
class BCReport:
    losses: list = field(default_factory=list)
    assignments: np.ndarray | None = None  # final code index per trajectory (discrete prior)
    codes: np.ndarray | None = None  # final code per trajectory

    def records(self) -> list[dict]:
        return [{"iter": i + 1, "loss": l} for i, l in enumerate(self.losses)]


def sog_bc_train(policy: TwoHeadPolicyNet, trajs, prior, cfg: BCConfig, opt: OptimizerState | None = None) -> BCReport:
    """Multimodal behaviour cloning by per-trajectory code search.

    Each iteration samples ``pairs_per_traj`` pairs from each trajectory in
    the batch, gives every trajectory the candidate code with the smallest
    mean squared action error, and takes one optimizer step on that loss.
    The learning rate decays linearly to ``final_lr_frac`` of its initial
    value, which keeps the final parameters from jittering between runs.
    """
    if not trajs:
        raise ValueError("need at least one expert trajectory")
    rng = np.random.default_rng(cfg.seed)
    opt = opt if opt is not None else cfg.make_optimizer()
    n = len(trajs)
    report = BCReport()
    for it in range(cfg.iterations):
        idx = np.arange(n) if cfg.traj_batch is None else rng.choice(n, size=min(cfg.traj_batch, n), replace=False)
        bs, ba = _sample_pairs(trajs, idx, cfg.pairs_per_traj, rng)
        cands = _policy_candidates(prior, len(idx), cfg.n_latent_samples, rng)
        _, codes = select_trajectory_codes(policy, bs, ba, cands)
        loss, grads = sog_bc_loss_grads(policy, bs, ba, codes)
        if not np.isfinite(loss) or loss > 1e12:
            raise TrainingDiverged(f"SOG-BC diverged at iteration {it + 1} (loss={loss})", it + 1, report.records())
        opt.learning_rate = cfg.lr_at(it)
        opt_step(opt, policy.params()[:-1], grads[:-1])
        report.losses.append(loss)
    report.assignments, report.codes = final_trajectory_codes(policy, trajs, prior, rng, cfg.n_latent_samples)
    return report


def final_trajectory_codes(policy, trajs, prior, rng, n_samples: int = 16):
    """Best code per trajectory using every pair of the trajectory."""
    idx, codes = [], []
    for t in trajs:
        cands = _policy_candidates(prior, 1, n_samples, rng)[0]
        losses = trajectory_code_losses(policy, t.states, t.actions, cands)
        j = int(np.argmin(losses))
        idx.append(j)
        codes.append(cands[j])
    return np.array(idx), np.array(codes)


def trajectory_mse(policy, trajs, codes) -> float:
    """Mean squared action error of ``policy`` on expert pairs at the given per-trajectory codes."""
    tot, cnt = 0.0, 0
    for t, z in zip(trajs, codes):
        r = policy.forward(t.states, np.broadcast_to(z, (len(t), np.size(z)))) - t.actions
        tot += float(np.sum(r * r))
        cnt += len(t)
    return tot / cnt


# --------------------------------------------------------------------------
# GAIL components


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def make_discriminator(rng: np.random.Generator, hidden=(64, 64), state_dim: int = STATE_DIM, action_dim: int = 2) -> DenseNet:
    return DenseNet.init([state_dim + action_dim, *hidden, 1], rng, hidden_activation="tanh")


def disc_features(states, actions, action_scale: float = 1.0) -> np.ndarray:
    """Discriminator input ``[s; a / action_scale]`` (no latent code)."""
    return np.concatenate([np.atleast_2d(states), np.atleast_2d(actions) / action_scale], axis=1)


def disc_prob(disc: DenseNet, features) -> np.ndarray:
    """``D(s, a)``: probability that a pair came from the policy rather than the expert."""
    return sigmoid(disc.forward(features)[:, 0])


def _log_sigmoid(logit):
    return -np.logaddexp(0.0, -logit)


def discriminator_objective(disc: DenseNet, gen_feats, exp_feats, clamp: float = 20.0) -> float:
    """``mean log D(gen) + mean log(1 - D(exp))``, logits clamped to ``+-clamp``."""
    lg = np.clip(disc.forward(gen_feats)[:, 0], -clamp, clamp)
    le = np.clip(disc.forward(exp_feats)[:, 0], -clamp, clamp)
    return float(np.mean(_log_sigmoid(lg)) + np.mean(_log_sigmoid(-le)))


def discriminator_update(disc: DenseNet, gen_feats, exp_feats, opt: OptimizerState, clamp: float = 20.0) -> float:
    """One ascent step on the discriminator objective; returns the pre-step value."""
    gen_feats, exp_feats = np.atleast_2d(gen_feats), np.atleast_2d(exp_feats)
    if gen_feats.shape[0] != exp_feats.shape[0]:
        raise ValueError("generated and expert batches must have the same size")
    n = gen_feats.shape[0]
    x = np.vstack([gen_feats, exp_feats])
    raw = disc.forward(x)[:, 0]
    logit = np.clip(raw, -clamp, clamp)
    inside = (raw > -clamp) & (raw < clamp)
    d = sigmoid(logit)
    obj = float(np.mean(_log_sigmoid(logit[:n])) + np.mean(_log_sigmoid(-logit[n:])))
    # gradient of the negated objective with respect to the raw logits
    g = np.concatenate([-(1.0 - d[:n]), d[n:]]) / n
    g = np.where(inside, g, 0.0)
    grads, _ = disc.backward(x, g[:, None])
    opt_step(opt, disc.params(), grads)
    return obj


def gail_reward(disc: DenseNet, features, form: str = "neg_log_d", clamp: float = 20.0) -> np.ndarray:
    """Per-pair reward: ``-log D`` (default) or ``log(1 - D)``; both rise as pairs look expert."""
    logit = np.clip(disc.forward(features)[:, 0], -clamp, clamp)
    if form == "neg_log_d":
        return -_log_sigmoid(logit)
    if form == "log_one_minus_d":
        return _log_sigmoid(-logit)
    raise ValueError(f"unknown reward form {form!r}")


def clip_value(eps: float, advantage):
    """``g(eps, A) = (1 + eps) A`` for ``A >= 0`` and ``(1 - eps) A`` otherwise."""
    a = np.asarray(advantage, dtype=np.float64)
    return np.where(a >= 0, (1 + eps) * a, (1 - eps) * a)


def ppo_surrogate(ratio, advantage, eps: float):
    """``min(ratio * A, g(eps, A))`` elementwise."""
    r = np.asarray(ratio, dtype=np.float64)
    if np.any(r <= 0):
        raise ValueError("probability ratios must be positive")
    a = np.asarray(advantage, dtype=np.float64)
    out = np.minimum(r * a, clip_value(eps, a))
    return float(out) if out.ndim == 0 else out


def discounted_returns(rewards, gamma: float) -> np.ndarray:
    r = np.asarray(rewards, dtype=np.float64)
    g = np.empty_like(r)
    acc = 0.0
    for t in range(r.size - 1, -1, -1):
        acc = r[t] + gamma * acc
        g[t] = acc
    return g


def normalize(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    std = x.std()
    return (x - x.mean()) / (std if std > 1e-12 else 1.0)


def advantage_estimate(rewards, values, gamma: float, normalize_batch: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """``A_t = G_t - V(s_t)`` with Monte-Carlo returns ``G_t``; returns ``(advantages, returns)``."""
    g = discounted_returns(rewards, gamma)
    adv = g - np.asarray(values, dtype=np.float64)
    return (normalize(adv) if normalize_batch else adv), g


def policy_entropy(policy: TwoHeadPolicyNet, states, latents, actions=None, gamma: float = 1.0) -> float:
    """Discounted causal entropy ``E[sum_t gamma^t (-log pi(a_t | s_t, z))]``.

    With ``actions`` given (sampled from the policy) this is the Monte-Carlo
    estimate over one trajectory; otherwise the closed form per-step entropy
    of the Gaussian is summed with the same discounting.
    """
    states = np.atleast_2d(states)
    disc = gamma ** np.arange(states.shape[0])
    if actions is None:
        return float(np.sum(disc) * policy.entropy())
    return float(np.sum(disc * -policy.log_prob(states, latents, actions)))


def _ppo_grads(policy: TwoHeadPolicyNet, s, z, a, logp_old, adv, eps: float, lambda_h: float):
    """Gradient of ``-mean(min(r A, g(eps, A))) - lambda_h H`` for a Gaussian policy.

    Only pairs on the unclipped branch (``r A <= g``) contribute.
    """
    mean = policy.forward(s, z)
    var = np.exp(2 * policy.log_std)
    diff = a - mean
    logp = -0.5 * np.sum(diff * diff / var, axis=1) - np.sum(policy.log_std) - 0.5 * a.shape[1] * np.log(2 * np.pi)
    ratio = np.exp(np.clip(logp - logp_old, -30, 30))
    surr = np.minimum(ratio * adv, clip_value(eps, adv))
    active = ratio * adv <= clip_value(eps, adv)
    n = s.shape[0]
    coef = np.where(active, -adv * ratio / n, 0.0)
    grads, _ = policy.backward(s, z, coef[:, None] * diff / var)
    grads[-1] = np.sum(coef[:, None] * (diff * diff / var - 1.0), axis=0) - lambda_h
    return float(-surr.mean() - lambda_h * policy.entropy()), grads


def _sog_term(policy, expert_trajs, prior, cfg, rng):
    """SOG loss and gradients on a fresh sample of expert pairs."""
    bs, ba = _sample_pairs(expert_trajs, np.arange(len(expert_trajs)), cfg.sog_pairs_per_traj, rng)
    cands = _policy_candidates(prior, len(expert_trajs), cfg.sog_latent_samples, rng)
    _, sel = select_trajectory_codes(policy, bs, ba, cands)
    if cfg.sog_loss == "nll":
        return sog_nll_loss_grads(policy, bs, ba, sel)
    return sog_bc_loss_grads(policy, bs, ba, sel)


@dataclass
class GailConfig:
    iterations: int = 50
    gamma: float = 0.99
    clip_eps: float = 0.2
    lambda_h: float = 0.0
    lambda_s: float = 1.0
    ppo_epochs: int = 4
    minibatch: int = 500
    rollouts_per_iter: int = 6
    rollout_length: int | None = None  # None = the environment's episode length
    disc_steps: int = 5
    disc_lr: float = 1e-3
    policy_lr: float = 1e-3
    value_lr: float = 1e-3
    value_steps: int = 20
    sog_pairs_per_traj: int = 32
    sog_latent_samples: int = 16
    reward_form: str = "neg_log_d"
    sog_loss: str = "nll"  # nll: Gaussian NLL of expert actions; mse: squared error as in SOG-BC
    hidden: tuple = (64, 64)
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0 < self.clip_eps <= 0.5:
            raise ValueError("clip_eps must lie in (0, 0.5]")
        if self.lambda_s < 0 or self.lambda_h < 0:
            raise ValueError("coefficients must be nonnegative")
        if self.reward_form not in ("neg_log_d", "log_one_minus_d"):
            raise ValueError(f"unknown reward_form {self.reward_form!r}")
        if self.sog_loss not in ("nll", "mse"):
            raise ValueError(f"unknown sog_loss {self.sog_loss!r}")


GAIL_METRICS = ("iter", "disc_obj", "mean_gail_reward", "sog_loss", "env_reward")


@dataclass
class GailReport:
    rows: list = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        j = GAIL_METRICS.index(name)
        return np.array([r[j] for r in self.rows])


def nearest_mode_reward(trajs, config: CirclesConfig) -> float:
    """Mean over trajectories of the per-step reward against the circle each one follows best."""
    return float(np.mean([reward_matrix([[t]], config)[0].max() for t in trajs]))


def sog_gail_train(
    policy: TwoHeadPolicyNet,
    disc: DenseNet,
    expert_trajs,
    prior,
    cfg: GailConfig,
    env_config: CirclesConfig | None = None,
) -> GailReport:
    """SOG-GAIL: adversarial imitation with a per-trajectory SOG term.

    Per iteration: roll out with codes drawn from the prior, update the
    discriminator against equally many expert pairs, compute advantages of
    the ``-log D`` reward with a learned value baseline ``V(s, z)``, then take
    PPO steps on ``L_PPO - lambda_h H + lambda_s L_SOG``.

    The value net is regressed on standardised returns of the current batch;
    since advantages are normalised afterwards, only the relative baseline
    matters.
    """
    env_config = env_config if env_config is not None else CirclesConfig()
    rng = np.random.default_rng(cfg.seed)
    T = env_config.episode_length if cfg.rollout_length is None else cfg.rollout_length
    dz = policy.latent_dim
    value = DenseNet.init([STATE_DIM + dz, *cfg.hidden, 1], np.random.default_rng(cfg.seed + 7), hidden_activation="tanh")
    pol_opt = OptimizerState("adam", cfg.policy_lr)
    disc_opt = OptimizerState("adam", cfg.disc_lr)
    val_opt = OptimizerState("adam", cfg.value_lr)
    scale = env_config.max_action_norm
    exp_s = np.vstack([t.states for t in expert_trajs])
    exp_a = np.vstack([t.actions for t in expert_trajs])
    report = GailReport()

    for it in range(1, cfg.iterations + 1):
        codes = sample_prior(prior, cfg.rollouts_per_iter, rng)
        env = CirclesEnv(env_config, n_envs=cfg.rollouts_per_iter, seed=int(rng.integers(2**31)))
        trajs = rollout(policy, env, codes, T, rng)
        s = np.vstack([t.states for t in trajs])
        a = np.vstack([t.actions for t in trajs])
        z = np.vstack([np.broadcast_to(t.latent, (len(t), dz)) for t in trajs])
        n = s.shape[0]

        gen_f = disc_features(s, a, scale)
        for _ in range(cfg.disc_steps):
            pick = rng.integers(0, exp_s.shape[0], n)
            discriminator_update(disc, gen_f, disc_features(exp_s[pick], exp_a[pick], scale), disc_opt)
        pick = rng.integers(0, exp_s.shape[0], n)
        disc_obj = discriminator_objective(disc, gen_f, disc_features(exp_s[pick], exp_a[pick], scale))

        rew = gail_reward(disc, gen_f, cfg.reward_form)
        returns = np.concatenate([discounted_returns(r, cfg.gamma) for r in np.split(rew, len(trajs))])
        target = normalize(returns)
        vin = np.hstack([s, z])
        for _ in range(cfg.value_steps):
            r = value.forward(vin)[:, 0] - target
            grads, _ = value.backward(vin, (2.0 * r / n)[:, None])
            opt_step(val_opt, value.params(), grads)
        adv = normalize(target - value.forward(vin)[:, 0])
        logp_old = policy.log_prob(s, z, a)

        sog_losses = []
        for _ in range(cfg.ppo_epochs):
            order = rng.permutation(n)
            for start in range(0, n, cfg.minibatch):
                mb = order[start : start + cfg.minibatch]
                _, grads = _ppo_grads(policy, s[mb], z[mb], a[mb], logp_old[mb], adv[mb], cfg.clip_eps, cfg.lambda_h)
                if cfg.lambda_s > 0:
                    sog_loss, sog_grads = _sog_term(policy, expert_trajs, prior, cfg, rng)
                    sog_losses.append(sog_loss)
                    grads = [g + cfg.lambda_s * h for g, h in zip(grads, sog_grads)]
                if not all(np.all(np.isfinite(g)) for g in grads):
                    raise TrainingDiverged(f"non-finite policy gradient at iteration {it}", it, report.rows)
                opt_step(pol_opt, policy.params(), grads)
                policy.clamp_log_std()

        row = (
            it,
            disc_obj,
            float(np.mean(rew)),
            float(np.mean(sog_losses)) if sog_losses else _sog_term(policy, expert_trajs, prior, cfg, rng)[0],
            nearest_mode_reward(trajs, env_config),
        )
        if not all(np.isfinite(v) for v in row[1:]):
            report.rows.append(row)
            raise TrainingDiverged(f"NaN in metrics at iteration {it}", it, report.rows)
        report.rows.append(row)
    return report
