"""Numerical checks of the SOG analysis.

Two groups:

* marginal likelihood of a continuous-latent model by brute-force quadrature,
  its Laplace approximation, and the single squared-error term SOG optimizes;
* sampled certification of the three neighbourhood propositions (a datum's
  distance to its reconstruction is Lipschitz in the datum, winning codes are
  locally stable, and an improving update improves nearby data).

Notation: ``d(x, y, z) = ||f(z, x) - y||``; the neighbourhood
``B(x1, y1; dx, dy)`` holds every ``(x, y)`` with ``||x - x1|| < dx / L`` and
``||y - y1|| < dy``, where ``L`` bounds the Lipschitz constant of ``f``.
"""
from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import checkpoint
from .latent import ConditionalModel, best_latent
from .nn import Dense, DenseNet, TwoHeadPolicyNet

LOG_2PI = float(np.log(2 * np.pi))


# --------------------------------------------------------------------------
# marginal likelihood


def _log_integrand(model: ConditionalModel, x, y, codes: np.ndarray) -> np.ndarray:
    """``log N(y; f(z, x), sigma^2 I) + log N(z; 0, I)`` for each row of ``codes``."""
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    m, d = y.size, codes.shape[1]
    s2 = model.sigma**2
    xs = np.broadcast_to(np.asarray(x, dtype=np.float64), (codes.shape[0], model.x_dim))
    err = model.sq_errors(codes, xs, np.broadcast_to(y, (codes.shape[0], m)))
    return (
        -err / (2 * s2)
        - 0.5 * m * np.log(2 * np.pi * s2)
        - 0.5 * np.sum(codes * codes, axis=1)
        - 0.5 * d * LOG_2PI
    )


def marginal_ll_quadrature(model: ConditionalModel, x, y, grid_points: int = 801, bound: float = 8.0) -> float:
    """``log p(y | x)`` under a standard normal latent, by tensor trapezoid rule.

    The grid spans ``[-bound, bound]`` in each of the ``d <= 2`` latent
    dimensions and the sum is carried out in log space. At the settings used
    in the tests, doubling ``grid_points`` moves the result by < 1e-6.
    """
    d = model.code_dim
    if d > 2:
        raise ValueError(f"quadrature oracle supports d <= 2, got d={d}")
    if grid_points < 101:
        raise ValueError("grid_points must be >= 101")
    g = np.linspace(-bound, bound, grid_points)
    w = np.full(grid_points, g[1] - g[0])
    w[[0, -1]] *= 0.5
    if d == 1:
        codes, logw = g[:, None], np.log(w)
    else:
        a, b = np.meshgrid(g, g, indexing="ij")
        codes = np.stack([a.ravel(), b.ravel()], axis=1)
        logw = np.log(np.outer(w, w).ravel())
    return float(logsumexp(_log_integrand(model, x, y, codes) + logw))


@dataclass
class LaplaceTerms:
    z_star: np.ndarray
    h_at_star: float
    hessian: np.ndarray
    A_det: float
    full_ll: float
    first_term_ll: float
    grad_norm: float
    reliable: bool


def _h_and_grad(model: ConditionalModel, x, y, z: np.ndarray) -> tuple[float, np.ndarray]:
    """``h(z) = ||f(z, x) - y||^2 + sigma^2 ||z||^2`` and its gradient in ``z``."""
    zb = z[None, :]
    xb = np.atleast_2d(np.asarray(x, dtype=np.float64))
    r = model.predict(zb, xb) - np.atleast_2d(y)
    _, gz = model.backward(zb, xb, 2.0 * r)
    s2 = model.sigma**2
    return float(np.sum(r * r) + s2 * z @ z), gz[0] + 2.0 * s2 * z


def _fd_hessian(model: ConditionalModel, x, y, z: np.ndarray) -> np.ndarray:
    """Central differences of the analytic gradient, symmetrised."""
    d = z.size
    eps = 1e-4 * max(1.0, float(np.linalg.norm(z)))
    hess = np.empty((d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = eps
        hess[:, j] = (_h_and_grad(model, x, y, z + e)[1] - _h_and_grad(model, x, y, z - e)[1]) / (2 * eps)
    return 0.5 * (hess + hess.T)


def _minimise_h(model: ConditionalModel, x, y, z: np.ndarray, tol: float, max_iter: int) -> tuple[np.ndarray, float]:
    """Damped Newton with backtracking; gradient steps where the Hessian is not PD."""
    h, g = _h_and_grad(model, x, y, z)
    for _ in range(max_iter):
        if np.linalg.norm(g) < tol:
            break
        hess = _fd_hessian(model, x, y, z)
        try:
            np.linalg.cholesky(hess)
            step = -np.linalg.solve(hess, g)
        except np.linalg.LinAlgError:
            step = -g
        t = 1.0
        while t > 1e-12:
            z_new = z + t * step
            h_new, g_new = _h_and_grad(model, x, y, z_new)
            if h_new <= h - 1e-4 * t * abs(g @ step) or np.linalg.norm(g_new) < np.linalg.norm(g):
                break
            t *= 0.5
        else:
            break
        z, h, g = z_new, h_new, g_new
    return z, float(np.linalg.norm(g))


def laplace_ll(
    model: ConditionalModel,
    x,
    y,
    n_candidates: int = 256,
    rng: np.random.Generator | None = None,
    tol: float = 1e-8,
    max_iter: int = 100,
) -> LaplaceTerms:
    """Laplace approximation of ``log p(y | x)`` with ``t = 2 sigma^2``.

    ``z*`` starts at the best of ``n_candidates`` prior samples (plus the
    origin) by squared error, the same search SOG performs, and is then
    refined on ``h``. With ``A`` the inverse Hessian of ``h`` at ``z*``::

        full_ll = -m/2 log(2 pi sigma^2) - h(z*) / (2 sigma^2)
                  + 1/2 log|A| + d/2 log(2 sigma^2)

    which is exact when ``f`` is affine in ``z``. A Hessian that is not
    positive definite marks the result unreliable and ``full_ll`` is NaN.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    d, m, s2 = model.code_dim, y.size, model.sigma**2
    cands = np.vstack([np.zeros((1, d)), rng.standard_normal((n_candidates, d))])
    _, z0, _ = best_latent(model, x, y, cands)
    z, gnorm = _minimise_h(model, x, y, z0.astype(np.float64), tol, max_iter)
    h, _ = _h_and_grad(model, x, y, z)
    hess = _fd_hessian(model, x, y, z)
    eig = np.linalg.eigvalsh(hess)
    reliable = bool(np.all(eig > 0) and gnorm < tol)
    sq = float(model.sq_errors(z[None, :], np.atleast_2d(x), y[None, :])[0])
    first = -sq / (2 * s2)
    if np.all(eig > 0):
        logdet_a = -float(np.sum(np.log(eig)))
        full = -0.5 * m * np.log(2 * np.pi * s2) - h / (2 * s2) + 0.5 * logdet_a + 0.5 * d * np.log(2 * s2)
        a_det = float(np.exp(logdet_a))
    else:
        full, a_det = float("nan"), float("nan")
    return LaplaceTerms(z, h, hess, a_det, float(full), first, gnorm, reliable)


def laplace_first_term(model: ConditionalModel, x, y, **kwargs) -> float:
    """``-||f(z*, x) - y||^2 / (2 sigma^2)``: the part of the Laplace expansion SOG maximises."""
    return laplace_ll(model, x, y, **kwargs).first_term_ll


def laplace_sigma_sweep(model: ConditionalModel, x, y, sigmas, grid_points: int = 801) -> list[dict]:
    """Laplace, quadrature and first-term values of one ``(x, y)`` at several ``sigma``."""
    rows = []
    for s in sigmas:
        m = ConditionalModel(model.net, model.code_dim, float(s))
        t = laplace_ll(m, x, y)
        q = marginal_ll_quadrature(m, x, y, grid_points)
        rows.append({
            "sigma": float(s),
            "laplace_ll": t.full_ll,
            "quadrature_ll": q,
            "first_term_ll": t.first_term_ll,
            "laplace_error": abs(t.full_ll - q),
            "first_term_rel_gap": abs(t.first_term_ll - t.full_ll) / abs(t.full_ll),
            "reliable": t.reliable,
        })
    return rows


# --------------------------------------------------------------------------
# Lipschitz bound


def spectral_norm(w: np.ndarray, tol: float = 1e-12, max_iter: int = 10000) -> float:
    """Largest singular value by power iteration on ``W^T W``."""
    w = np.asarray(w, dtype=np.float64)
    if w.size == 0 or not np.any(w):
        return 0.0
    v = np.ones(w.shape[1]) / np.sqrt(w.shape[1]) + 1e-3 * np.arange(w.shape[1])
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(max_iter):
        u = w.T @ (w @ v)
        n = np.linalg.norm(u)
        if n == 0.0:
            # start vector in the null space; restart on a coordinate axis
            v = np.eye(w.shape[1])[int(np.argmax(np.linalg.norm(w, axis=0)))]
            continue
        v = u / n
        new = float(np.sqrt(n))
        if abs(new - est) <= tol * new:
            est = new
            break
        est = new
    return float(np.linalg.norm(w @ v))


def lipschitz_upper_bound(net) -> float:
    """Product of per-layer spectral norms; every supported activation has slope <= 1.

    For a two-head net the input map ``(s, z) -> W_s s + W_z z`` has norm
    ``||[W_s W_z]||``.
    """
    if isinstance(net, ConditionalModel):
        net = net.net
    if isinstance(net, TwoHeadPolicyNet):
        head = spectral_norm(np.hstack([net.state_head.weight, net.latent_head.weight]))
        return head * lipschitz_upper_bound(net.trunk)
    bound = 1.0
    for layer in net.layers:
        bound *= spectral_norm(layer.weight)
    return bound


# --------------------------------------------------------------------------
# proposition checks


@dataclass
class NeighborhoodSpec:
    delta_x: float
    delta_y: float
    lipschitz_bound: float

    def __post_init__(self):
        if self.delta_x < 0 or self.delta_y < 0 or self.delta <= 0:
            raise ValueError("need delta_x, delta_y >= 0 with a positive sum")
        if not self.lipschitz_bound > 0:
            raise ValueError("lipschitz_bound must be positive")

    @property
    def delta(self) -> float:
        return self.delta_x + self.delta_y


@dataclass
class PropReport:
    proposition: int
    base_point: dict
    params_hash: str
    n_samples: int
    violations: int
    slack_min: float
    applicable: bool = True
    details: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        out = asdict(self)
        out["slack_min"] = None if not np.isfinite(self.slack_min) else float(self.slack_min)
        return out


def params_hash(*nets) -> str:
    h = hashlib.sha256()
    for net in nets:
        h.update(checkpoint.dumps(net.net if isinstance(net, ConditionalModel) else net).encode())
    return h.hexdigest()[:16]


def distance(model: ConditionalModel, xs, ys, z) -> np.ndarray:
    """``d(x, y, z) = ||f(z, x) - y||`` for each row of ``xs``/``ys``."""
    xs, ys = np.atleast_2d(xs), np.atleast_2d(ys)
    codes = np.broadcast_to(np.asarray(z, dtype=np.float64), (xs.shape[0], model.code_dim))
    return np.sqrt(model.sq_errors(codes, xs, ys))


def sample_ball(center, radius: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` points uniform in the open ball of ``radius`` around ``center``."""
    c = np.atleast_1d(np.asarray(center, dtype=np.float64))
    dirs = rng.standard_normal((n, c.size))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    r = radius * rng.random(n) ** (1.0 / c.size)
    return c + dirs * r[:, None]


def sample_neighborhood(x1, y1, spec: NeighborhoodSpec, n: int, rng: np.random.Generator):
    """Uniform draws from the product ball ``B(x1, y1; delta_x, delta_y)``."""
    xs = sample_ball(x1, spec.delta_x / spec.lipschitz_bound, n, rng)
    ys = sample_ball(y1, spec.delta_y, n, rng)
    return xs, ys


def _base(x1, y1) -> dict:
    return {"x": np.atleast_1d(x1).astype(float).tolist(), "y": np.atleast_1d(y1).astype(float).tolist()}


def check_prop1(model: ConditionalModel, x1, y1, z, spec: NeighborhoodSpec, n_samples: int = 10_000, rng=None) -> PropReport:
    """Count samples violating ``|d(x1, y1, z) - d(x2, y2, z)| < delta``."""
    rng = rng if rng is not None else np.random.default_rng(0)
    xs, ys = sample_neighborhood(x1, y1, spec, n_samples, rng)
    d1 = distance(model, x1, y1, z)[0]
    slack = spec.delta - np.abs(d1 - distance(model, xs, ys, z))
    return PropReport(
        1, _base(x1, y1), params_hash(model), n_samples, int(np.sum(slack <= 0)), float(slack.min()),
        details={"delta": spec.delta, "lipschitz_bound": spec.lipschitz_bound},
    )


def prop2_eta(c: float, tol: float = 1e-14) -> float:
    """Supremum of ``eta`` in ``(0, 1/2)`` with ``(C - eta)(1 - eta / (1 - eta)) > 1``.

    The left side falls monotonically from ``C`` at ``eta = 0`` to 0 at
    ``eta = 1/2``, so the crossing is found by bisection.
    """
    if not c > 1:
        raise ValueError("C must exceed 1")

    def g(eta):
        return (c - eta) * (1 - eta / (1 - eta)) - 1

    lo, hi = 0.0, 0.5
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if g(mid) > 0:
            lo = mid
        else:
            hi = mid
    return lo


def check_prop2(
    model: ConditionalModel,
    x1,
    y1,
    z_i,
    z_j,
    n_samples: int = 10_000,
    rng=None,
    lipschitz_bound: float | None = None,
    shrink: float = 0.99,
    x_share: float = 0.5,
) -> PropReport:
    """Winner stability: if ``d_i / d_j = C > 1`` at the base point, ``z_j`` still wins nearby.

    ``eta`` is taken just inside the crossing from :func:`prop2_eta`, the
    radius is ``delta = shrink * eta * d_j`` and is split between the ``x``
    and ``y`` balls by ``x_share``. ``slack_min`` is the smallest sampled
    ``d_i - d_j``. A zero ``d_j`` or ``C <= 1`` is reported as inapplicable.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    L = lipschitz_upper_bound(model) if lipschitz_bound is None else lipschitz_bound
    d_i = distance(model, x1, y1, z_i)[0]
    d_j = distance(model, x1, y1, z_j)[0]
    base, ph = _base(x1, y1), params_hash(model)
    if not (np.isfinite(d_j) and d_j > 0) or not d_i > d_j:
        c = float(d_i / d_j) if d_j > 0 else float("inf")
        return PropReport(2, base, ph, 0, 0, float("nan"), applicable=False,
                          details={"C": c if np.isfinite(c) else None, "reason": "precondition C > 1 with finite positive d_j unmet"})
    c = float(d_i / d_j)
    eta = shrink * prop2_eta(c)
    delta = shrink * eta * d_j
    spec = NeighborhoodSpec(x_share * delta, (1 - x_share) * delta, L)
    xs, ys = sample_neighborhood(x1, y1, spec, n_samples, rng)
    slack = distance(model, xs, ys, z_i) - distance(model, xs, ys, z_j)
    return PropReport(
        2, base, ph, n_samples, int(np.sum(slack <= 0)), float(slack.min()),
        details={"C": c, "eta": eta, "radius": delta, "lipschitz_bound": L},
    )


def check_prop3(
    model_before: ConditionalModel,
    model_after: ConditionalModel,
    x1,
    y1,
    z,
    spec: NeighborhoodSpec | None = None,
    n_samples: int = 10_000,
    rng=None,
    delta_frac: float = 0.5,
    unit_samples=None,
) -> PropReport:
    """Improvement spreads: every neighbour under ``theta2`` beats the worst neighbour under ``theta1``.

    Requires ``a = d(x1, y1, z; theta1) - d(x1, y1, z; theta2) > 0`` and
    ``delta < a``. Without ``spec`` the radius is ``delta_frac * a`` split
    evenly, with ``L`` the larger bound of the two nets. ``d_max(theta1)`` is
    estimated as the maximum over the sampled neighbours and the base point.
    ``unit_samples`` (a pair of arrays of points in the unit balls) lets a
    caller reuse one draw across several radii.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    base, ph = _base(x1, y1), params_hash(model_before, model_after)
    a = distance(model_before, x1, y1, z)[0] - distance(model_after, x1, y1, z)[0]
    if not a > 0:
        return PropReport(3, base, ph, 0, 0, float("nan"), applicable=False,
                          details={"improvement": float(a), "reason": "update does not improve the base point"})
    if spec is None:
        L = max(lipschitz_upper_bound(model_before), lipschitz_upper_bound(model_after))
        delta = delta_frac * a
        spec = NeighborhoodSpec(delta / 2, delta / 2, L)
    if not spec.delta < a:
        return PropReport(3, base, ph, 0, 0, float("nan"), applicable=False,
                          details={"improvement": float(a), "delta": spec.delta, "reason": "delta >= improvement"})
    if unit_samples is None:
        ux = sample_ball(np.zeros(np.size(x1)), 1.0, n_samples, rng)
        uy = sample_ball(np.zeros(np.size(y1)), 1.0, n_samples, rng)
    else:
        ux, uy = unit_samples
        n_samples = ux.shape[0]
    xs = np.asarray(x1, dtype=np.float64) + ux * (spec.delta_x / spec.lipschitz_bound)
    ys = np.asarray(y1, dtype=np.float64) + uy * spec.delta_y
    d_before = distance(model_before, xs, ys, z)
    d_max = max(float(d_before.max()), float(distance(model_before, x1, y1, z)[0]))
    slack = d_max - distance(model_after, xs, ys, z)
    return PropReport(
        3, base, ph, n_samples, int(np.sum(slack <= 0)), float(slack.min()),
        details={"improvement": float(a), "delta": spec.delta, "d_max_before": d_max, "lipschitz_bound": spec.lipschitz_bound},
    )


# --------------------------------------------------------------------------
# certification suite


def random_tanh_model(rng: np.random.Generator, x_dim: int = 2, z_dim: int = 2, y_dim: int = 2, hidden: int = 16) -> ConditionalModel:
    net = DenseNet.init([z_dim + x_dim, hidden, hidden, y_dim], rng, hidden_activation="tanh")
    for layer in net.layers:
        layer.bias[:] = 0.1 * rng.standard_normal(layer.bias.shape)
    return ConditionalModel(net, code_dim=z_dim)


def improving_step(model: ConditionalModel, x1, y1, z, learning_rate: float = 0.05) -> ConditionalModel:
    """Copy of ``model`` after one SGD step on ``||f(z, x1) - y1||^2``, halving the rate until it improves."""
    xb, zb = np.atleast_2d(x1), np.atleast_2d(z)
    r = model.predict(zb, xb) - np.atleast_2d(y1)
    grads, _ = model.backward(zb, xb, 2.0 * r)
    d0 = distance(model, x1, y1, z)[0]
    lr = learning_rate
    for _ in range(40):
        net = model.net.copy()
        for p, g in zip(net.params(), grads):
            p -= lr * g
        after = ConditionalModel(net, model.code_dim, model.sigma)
        if distance(after, x1, y1, z)[0] < d0:
            return after
        lr *= 0.5
    return after


def certify_propositions(seed: int = 0, n_nets: int = 20, n_samples: int = 10_000, delta_x: float = 0.05, delta_y: float = 0.05) -> list[PropReport]:
    """Run all three checks on ``n_nets`` random tanh networks at random base points."""
    rng = np.random.default_rng(seed)
    reports = []
    for _ in range(n_nets):
        model = random_tanh_model(rng)
        x1 = rng.standard_normal(model.x_dim)
        z = rng.standard_normal(model.code_dim)
        y1 = model.predict(z, x1)[0] + 0.5 * rng.standard_normal(model.net.output_dim)
        L = lipschitz_upper_bound(model)
        reports.append(check_prop1(model, x1, y1, z, NeighborhoodSpec(delta_x, delta_y, L), n_samples, rng))
        z_j = z
        z_i = rng.standard_normal(model.code_dim)
        if distance(model, x1, y1, z_i)[0] < distance(model, x1, y1, z_j)[0]:
            z_i, z_j = z_j, z_i
        reports.append(check_prop2(model, x1, y1, z_i, z_j, n_samples, rng, lipschitz_bound=L))
        after = improving_step(model, x1, y1, z)
        reports.append(check_prop3(model, after, x1, y1, z, n_samples=n_samples, rng=rng))
    return reports


# --------------------------------------------------------------------------
# reference instances


def linear_gaussian_ll(model: ConditionalModel, x, y) -> float:
    """Closed-form ``log p(y | x)`` for an affine one-layer model.

    With ``f(z, x) = M z + c(x)`` and ``z ~ N(0, I)`` the output is Gaussian
    with mean ``c(x)`` and covariance ``sigma^2 I + M M^T``.
    """
    net = model.net
    if not isinstance(net, DenseNet) or len(net.layers) != 1 or net.layers[0].activation != "identity":
        raise ValueError("closed form needs a single affine layer")
    d = model.code_dim
    w, b = net.layers[0].weight, net.layers[0].bias
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    m = y.size
    M = w[:, :d]
    r = y - (w[:, d:] @ np.asarray(x, dtype=np.float64).reshape(-1) + b)
    cov = model.sigma**2 * np.eye(m) + M @ M.T
    _, logdet = np.linalg.slogdet(cov)
    return float(-0.5 * (m * LOG_2PI + logdet + r @ np.linalg.solve(cov, r)))


def random_linear_instance(rng: np.random.Generator, x_dim: int = 2):
    """Random affine model with ``d`` in {1, 2}, output dim in ``[d, 3]``, plus an ``(x, y)`` pair."""
    d = int(rng.integers(1, 3))
    m = int(rng.integers(d, 4))
    w = rng.standard_normal((m, d + x_dim))
    b = rng.standard_normal(m)
    sigma = float(rng.choice([0.1, 0.5, 1.0]))
    model = ConditionalModel(DenseNet([Dense(w, b, "identity")]), d, sigma)
    return model, rng.standard_normal(x_dim), rng.standard_normal(m)


def sweep_instance(seed: int = 0, hidden: int = 8):
    """Small tanh model with a 1-d latent and a fixed ``(x, y)`` for sigma sweeps."""
    net = DenseNet.init([2, hidden, 2], np.random.default_rng(seed), hidden_activation="tanh")
    return ConditionalModel(net, 1), np.array([0.3]), np.array([0.8, -0.6])
