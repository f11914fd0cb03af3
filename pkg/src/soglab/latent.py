"""Latent priors and the self-organizing generative (SOG) estimator.

SOG fits ``y ~ N(f(z, x), sigma^2 I)`` without an encoder: for every datum
it searches a set of candidate codes for the one with the smallest squared
reconstruction error, then takes a gradient step on the error at the
chosen codes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .io import jsonl_text
from .nn import DenseNet, OptimizerState, TwoHeadPolicyNet, opt_step


@dataclass(frozen=True)
class DiscretePrior:
    masses: tuple

    def __post_init__(self):
        m = np.asarray(self.masses, dtype=np.float64)
        if m.ndim != 1 or m.size < 1:
            raise ValueError("need at least one category")
        if np.any(m < 0) or abs(m.sum() - 1.0) > 1e-12:
            raise ValueError(f"masses must be nonnegative and sum to 1, got {m.tolist()}")
        object.__setattr__(self, "masses", tuple(float(v) for v in m))

    @classmethod
    def uniform(cls, k: int) -> "DiscretePrior":
        return cls(tuple([1.0 / k] * k))

    @property
    def k(self) -> int:
        return len(self.masses)

    @property
    def code_dim(self) -> int:
        return self.k


@dataclass(frozen=True)
class ContinuousPrior:
    """Standard normal prior on R^dim."""

    dim: int

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("latent dimension must be >= 1")

    @property
    def code_dim(self) -> int:
        return self.dim


Prior = Union[DiscretePrior, ContinuousPrior]


def one_hot(indices, k: int) -> np.ndarray:
    idx = np.asarray(indices, dtype=np.int64)
    out = np.zeros(idx.shape + (k,))
    np.put_along_axis(out, idx[..., None], 1.0, axis=-1)
    return out


def sample_prior(prior: Prior, n: int, rng: np.random.Generator, exhaustive: bool = False) -> np.ndarray:
    """Draw codes as row vectors: one-hot rows (discrete) or N(0, I) rows.

    With ``exhaustive=True`` a discrete prior returns every code once, in
    order, and ``n`` is ignored.
    """
    if isinstance(prior, DiscretePrior):
        if exhaustive:
            return np.eye(prior.k)
        if n < 1:
            raise ValueError("n must be >= 1")
        return one_hot(rng.choice(prior.k, size=n, p=np.asarray(prior.masses)), prior.k)
    if n < 1:
        raise ValueError("n must be >= 1")
    return rng.standard_normal((n, prior.dim))


@dataclass
class ConditionalModel:
    """Mean function ``f(z, x)`` plus the fixed noise scale ``sigma``.

    A :class:`DenseNet` receives the concatenation ``[z; x]``; a
    :class:`TwoHeadPolicyNet` receives ``x`` as state and ``z`` as latent.
    """

    net: Union[DenseNet, TwoHeadPolicyNet]
    code_dim: int
    sigma: float = 1.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if isinstance(self.net, TwoHeadPolicyNet):
            if self.net.latent_dim != self.code_dim:
                raise ValueError("latent head width does not match code_dim")
        elif self.net.input_dim <= self.code_dim:
            raise ValueError("net input must hold the code and at least one x coordinate")

    @property
    def x_dim(self) -> int:
        if isinstance(self.net, TwoHeadPolicyNet):
            return self.net.state_dim
        return self.net.input_dim - self.code_dim

    def params(self) -> list[np.ndarray]:
        return self.net.params()

    def predict(self, codes, xs) -> np.ndarray:
        codes, xs = np.atleast_2d(codes), np.atleast_2d(xs)
        if isinstance(self.net, TwoHeadPolicyNet):
            return self.net.forward(xs, codes)
        return self.net.forward(np.concatenate([codes, xs], axis=1))

    def backward(self, codes, xs, out_grad):
        """Return ``(param_grads, code_grads)`` for ``sum(out_grad * predict)``."""
        codes, xs = np.atleast_2d(codes), np.atleast_2d(xs)
        if isinstance(self.net, TwoHeadPolicyNet):
            grads, (_, gz) = self.net.backward(xs, codes, out_grad)
            return grads, gz
        grads, gin = self.net.backward(np.concatenate([codes, xs], axis=1), out_grad)
        return grads, gin[:, : self.code_dim]

    def sq_errors(self, codes, xs, ys) -> np.ndarray:
        r = self.predict(codes, xs) - np.atleast_2d(ys)
        return np.sum(r * r, axis=1)


@dataclass
class PairDataset:
    xs: np.ndarray
    ys: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.xs = np.atleast_2d(np.asarray(self.xs, dtype=np.float64))
        self.ys = np.atleast_2d(np.asarray(self.ys, dtype=np.float64))
        if self.xs.shape[0] != self.ys.shape[0]:
            raise ValueError(f"{self.xs.shape[0]} inputs but {self.ys.shape[0]} outputs")
        if not (np.all(np.isfinite(self.xs)) and np.all(np.isfinite(self.ys))):
            raise ValueError("dataset contains non-finite entries")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.xs.shape[0],):
                raise ValueError("labels must have one entry per datum")

    def __len__(self) -> int:
        return self.xs.shape[0]


# --------------------------------------------------------------------------
# latent search


def candidate_losses(model: ConditionalModel, x, y, candidates) -> np.ndarray:
    cands = np.atleast_2d(candidates)
    xs = np.broadcast_to(np.asarray(x, dtype=np.float64), (cands.shape[0], model.x_dim))
    return model.sq_errors(cands, xs, np.broadcast_to(y, (cands.shape[0], np.size(y))))


def best_latent(model: ConditionalModel, x, y, candidates) -> tuple[int, np.ndarray, float]:
    """Candidate with the smallest ``||f(z, x) - y||^2``; ties go to the lowest index.

    Returns ``(index, code, loss)``.
    """
    cands = np.atleast_2d(candidates)
    if cands.shape[0] == 0 or np.size(candidates) == 0:
        raise ValueError("candidate list is empty")
    losses = candidate_losses(model, x, y, cands)
    i = int(np.argmin(losses))
    return i, cands[i].copy(), float(losses[i])


def batch_best_latents(model: ConditionalModel, xs, ys, candidates) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised :func:`best_latent` for a batch.

    ``candidates`` is either ``(C, dz)`` (shared by every datum) or
    ``(B, C, dz)`` (one set per datum). Returns ``(indices, codes, losses)``.
    """
    xs, ys = np.atleast_2d(xs), np.atleast_2d(ys)
    b = xs.shape[0]
    cands = np.asarray(candidates, dtype=np.float64)
    if cands.ndim == 2:
        cands = np.broadcast_to(cands, (b,) + cands.shape)
    c = cands.shape[1]
    if c == 0:
        raise ValueError("candidate list is empty")
    flat = cands.reshape(b * c, -1)
    err = model.sq_errors(flat, np.repeat(xs, c, axis=0), np.repeat(ys, c, axis=0)).reshape(b, c)
    idx = np.argmin(err, axis=1)
    rows = np.arange(b)
    return idx, cands[rows, idx].copy(), err[rows, idx]


def coordinate_search(
    model: ConditionalModel,
    x,
    y,
    dim: int,
    block_size: int,
    n_candidates: int,
    rng: np.random.Generator,
    retain_incumbent: bool = True,
) -> tuple[np.ndarray, list[float]]:
    """Blockwise random search over a continuous code, starting from zero.

    Each block of ``block_size`` coordinates is replaced by ``n_candidates``
    fresh N(0, I) draws; the incumbent block is kept as an extra candidate
    when ``retain_incumbent`` is set, which makes the loss non-increasing.
    Returns the code and the loss before and after each block.
    """
    if block_size < 1 or dim % block_size:
        raise ValueError(f"block size {block_size} does not divide latent dimension {dim}")
    z = np.zeros(dim)
    loss = float(candidate_losses(model, x, y, z)[0])
    history = [loss]
    for b in range(dim // block_size):
        sl = slice(b * block_size, (b + 1) * block_size)
        if n_candidates > 0:
            cands = np.repeat(z[None, :], n_candidates, axis=0)
            cands[:, sl] = rng.standard_normal((n_candidates, block_size))
            _, best, best_loss = best_latent(model, x, y, cands)
            # the incumbent keeps its stored loss, so a re-evaluation in a
            # different batch can never make the sequence increase
            if not retain_incumbent or best_loss < loss:
                z, loss = best, best_loss
        history.append(loss)
    return z, history


def batch_coordinate_search(model, xs, ys, dim, block_size, n_candidates, rng, retain_incumbent=True):
    """:func:`coordinate_search` applied to every row of a batch at once."""
    if block_size < 1 or dim % block_size:
        raise ValueError(f"block size {block_size} does not divide latent dimension {dim}")
    xs, ys = np.atleast_2d(xs), np.atleast_2d(ys)
    z = np.zeros((xs.shape[0], dim))
    losses = model.sq_errors(z, xs, ys)
    if n_candidates == 0:
        return z, losses
    for b in range(dim // block_size):
        sl = slice(b * block_size, (b + 1) * block_size)
        cands = np.repeat(z[:, None, :], n_candidates, axis=1)
        cands[:, :, sl] = rng.standard_normal((xs.shape[0], n_candidates, block_size))
        _, best, best_losses = batch_best_latents(model, xs, ys, cands)
        take = best_losses < losses if retain_incumbent else np.ones(xs.shape[0], dtype=bool)
        z = np.where(take[:, None], best, z)
        losses = np.where(take, best_losses, losses)
    return z, losses


# --------------------------------------------------------------------------
# training


@dataclass
class SogConfig:
    n_latent_samples: int = 64
    batch_size: int | None = None  # None: full batch
    epochs: int = 100
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    seed: int = 0
    reduction: str = "mean"  # gradient of the batch mean ("mean") or sum ("sum")
    search: str = "joint"  # continuous priors only: "joint" or "coordinate"
    block_size: int = 1

    def __post_init__(self):
        if self.n_latent_samples < 1:
            raise ValueError("n_latent_samples must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.reduction not in ("mean", "sum"):
            raise ValueError("reduction must be 'mean' or 'sum'")
        if self.search not in ("joint", "coordinate"):
            raise ValueError("search must be 'joint' or 'coordinate'")

    def make_optimizer(self) -> OptimizerState:
        return OptimizerState(kind=self.optimizer, learning_rate=self.learning_rate)


def search_codes(model, xs, ys, prior: Prior, cfg: SogConfig, rng) -> tuple[np.ndarray, np.ndarray]:
    """Best code per datum: exhaustive for discrete priors, sampled otherwise."""
    if isinstance(prior, DiscretePrior):
        _, codes, losses = batch_best_latents(model, xs, ys, np.eye(prior.k))
        return codes, losses
    if cfg.search == "coordinate":
        return batch_coordinate_search(model, xs, ys, prior.dim, cfg.block_size, cfg.n_latent_samples, rng)
    cands = rng.standard_normal((len(xs), cfg.n_latent_samples, prior.dim))
    _, codes, losses = batch_best_latents(model, xs, ys, cands)
    return codes, losses


def squared_error_step(model: ConditionalModel, codes, xs, ys, opt: OptimizerState, reduction: str = "mean") -> float:
    """One optimizer step on ``sum ||f(z_i, x_i) - y_i||^2`` at fixed codes; returns the pre-step sum."""
    r = model.predict(codes, xs) - ys
    loss = float(np.sum(r * r))
    if not np.isfinite(loss):
        raise FloatingPointError(f"non-finite SOG loss ({loss}) on a batch of {len(xs)}")
    scale = 2.0 / len(xs) if reduction == "mean" else 2.0
    grads, _ = model.backward(codes, xs, scale * r)
    opt_step(opt, model.params(), grads)
    if isinstance(model.net, TwoHeadPolicyNet):
        model.net.clamp_log_std()
    return loss


def sog_minibatch_step(model, xs, ys, prior: Prior, cfg: SogConfig, opt: OptimizerState, rng) -> tuple[float, np.ndarray]:
    """Search a code for each datum, then take one step on the summed loss.

    Returns ``(pre_step_loss, chosen_codes)``.
    """
    xs, ys = np.atleast_2d(xs), np.atleast_2d(ys)
    if xs.shape[0] == 0:
        raise ValueError("empty batch")
    codes, _ = search_codes(model, xs, ys, prior, cfg, rng)
    return squared_error_step(model, codes, xs, ys, opt, cfg.reduction), codes


@dataclass
class TrainReport:
    losses: list = field(default_factory=list)
    histograms: list = field(default_factory=list)
    assignments: np.ndarray | None = None

    def records(self) -> list[dict]:
        return [
            {"epoch": i + 1, "loss": loss, "assignment_histogram": hist}
            for i, (loss, hist) in enumerate(zip(self.losses, self.histograms))
        ]

    def to_jsonl(self) -> str:
        return jsonl_text(self.records())


def code_indices(codes: np.ndarray) -> np.ndarray:
    return np.argmax(codes, axis=1)


def sog_fit(model: ConditionalModel, data: PairDataset, prior: Prior, cfg: SogConfig, opt: OptimizerState | None = None) -> TrainReport:
    """Train ``model`` in place; the report holds the mean per-datum loss per epoch.

    Minibatches are drawn from a per-epoch permutation unless the batch is
    the full dataset, in which case data order is kept.
    """
    n = len(data)
    if n == 0:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(cfg.seed)
    opt = opt or cfg.make_optimizer()
    bs = n if cfg.batch_size is None else min(cfg.batch_size, n)
    report = TrainReport()
    for _ in range(cfg.epochs):
        order = np.arange(n) if bs == n else rng.permutation(n)
        total = 0.0
        hist = np.zeros(prior.k if isinstance(prior, DiscretePrior) else 0, dtype=np.int64)
        for start in range(0, n, bs):
            idx = order[start : start + bs]
            loss, codes = sog_minibatch_step(model, data.xs[idx], data.ys[idx], prior, cfg, opt, rng)
            total += loss
            if isinstance(prior, DiscretePrior):
                hist += np.bincount(code_indices(codes), minlength=prior.k)
        report.losses.append(total / n)
        report.histograms.append(hist.tolist())
    codes, _ = search_codes(model, data.xs, data.ys, prior, cfg, rng)
    report.assignments = code_indices(codes) if isinstance(prior, DiscretePrior) else codes
    return report
