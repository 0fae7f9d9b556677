"""Cost evaluation and continuous maximum-entropy IRL training.

The cost of a trajectory is a weighted sum of its aggregate features,
C(theta, xi) = theta . f(xi), with theta constrained to the probability
simplex. Training minimizes the Laplace-approximated negative log-likelihood
sum_k [ 1/2 g_k' H_k^-1 g_k - 1/2 log|H_k| ], where g and H are the gradient
and Hessian of the cost along each demonstration with respect to its per-step
(lateral offset, longitudinal speed) variables, obtained by central finite
differences of the feature map.

Because the cost is linear in theta, each demonstration's per-feature
gradient/Hessian is computed once and any theta's (g, H) is assembled by
weighting, which is what makes projected-gradient training affordable.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .core.types import ManeuverLabel
from .errors import DomainError, NumericalError
from .features import (
    N_FEATURES,
    FeatureScaler,
    TrajectoryTemplate,
    rebuild_trajectory_features,
    trajectory_features,
)


@dataclass(frozen=True)
class CostWeights:
    """Simplex-constrained feature weights for one maneuver class."""

    theta: tuple
    maneuver: ManeuverLabel

    def __post_init__(self):
        th = np.asarray(self.theta, dtype=float)
        if th.shape != (N_FEATURES,):
            raise DomainError(f"theta must have {N_FEATURES} entries, got {th.shape}")
        if np.any(th < -1e-12):
            raise DomainError(f"theta must be non-negative: {th}")
        if abs(th.sum() - 1.0) > 1e-9:
            raise DomainError(f"theta must sum to 1, got {th.sum():.12f}")
        object.__setattr__(self, "theta", tuple(np.maximum(th, 0.0)))

    def as_array(self):
        return np.asarray(self.theta, dtype=float)


@dataclass(frozen=True)
class Demonstration:
    traj: object
    ctx_seq: tuple
    label: ManeuverLabel

    def __post_init__(self):
        object.__setattr__(self, "ctx_seq", tuple(self.ctx_seq))
        if len(self.ctx_seq) != len(self.traj):
            raise DomainError("demonstration context/trajectory length mismatch")


@dataclass(frozen=True)
class IrlConfig:
    hessian_ridge: float = 1e-4
    max_ridge: float = 2.0
    fd_step: float = 1e-3
    max_iters: int = 500
    learning_rate: float = 0.05
    seed: int = 0
    n_restarts: int = 3
    theta_fd_step: float = 1e-5
    flip_logdet_sign: bool = False  # sensitivity check on the log|H| sign
    patience: int = 40

    def __post_init__(self):
        if self.hessian_ridge <= 0 or self.fd_step <= 0:
            raise DomainError("hessian_ridge and fd_step must be positive")


def cost(theta, feats):
    """Dot product of weights and features; both may be vectors or value types."""
    th = theta.as_array() if isinstance(theta, CostWeights) else np.asarray(theta, float)
    f = feats.as_array() if hasattr(feats, "as_array") else np.asarray(feats, float)
    if th.shape != f.shape:
        raise DomainError(f"arity mismatch: theta {th.shape} vs features {f.shape}")
    return float(th @ f)


# ---------------------------------------------------------------------------
# Finite differences.
# ---------------------------------------------------------------------------


def finite_diff_grad_hess(fn, x0, step):
    """Dense central-difference gradient and Hessian of a scalar function."""
    x0 = np.asarray(x0, dtype=float)
    m = x0.size
    f0 = fn(x0)
    g = np.zeros(m)
    H = np.zeros((m, m))
    fp = np.zeros(m)
    fm = np.zeros(m)
    for j in range(m):
        xp = x0.copy(); xp[j] += step
        xm = x0.copy(); xm[j] -= step
        fp[j], fm[j] = fn(xp), fn(xm)
        g[j] = (fp[j] - fm[j]) / (2.0 * step)
        H[j, j] = (fp[j] - 2.0 * f0 + fm[j]) / step**2
    for j in range(m):
        for k in range(j + 1, m):
            xpp = x0.copy(); xpp[[j, k]] += step
            xpm = x0.copy(); xpm[j] += step; xpm[k] -= step
            xmp = x0.copy(); xmp[j] -= step; xmp[k] += step
            xmm = x0.copy(); xmm[[j, k]] -= step
            H[j, k] = H[k, j] = (fn(xpp) - fn(xpm) - fn(xmp) + fn(xmm)) / (4.0 * step**2)
    return g, H


class DemoDerivatives:
    """Per-feature gradient (6, 2n) and Hessian (6, 2n, 2n) of one demo's
    raw aggregate features with respect to its (y, v) variables."""

    __slots__ = ("grad", "hess", "n_vars")

    def __init__(self, grad, hess):
        self.grad = grad
        self.hess = hess
        self.n_vars = grad.shape[1]


def _batch_eval(tpl, Y, V):
    F = rebuild_trajectory_features(Y, V, tpl)
    if not np.all(np.isfinite(F)):
        bad = np.argwhere(~np.isfinite(F))
        raise NumericalError(f"non-finite feature under perturbation at {bad[0]}")
    return F


def precompute_demo_derivatives(demo, net, cfg):
    """Central-difference per-feature derivatives of the reparameterized
    feature map, vectorized over perturbations."""
    tpl = TrajectoryTemplate(demo.traj, demo.ctx_seq, net)
    return feature_derivatives(tpl, tpl.y, tpl.v, cfg.fd_step)


def feature_derivatives(tpl, y0, v0, h):
    """Per-feature gradient (6, 2n) and Hessian (6, 2n, 2n) of the aggregate
    features at (y0, v0), by batched central differences."""
    n = tpl.n
    m = 2 * n

    def assemble(batch_idx, batch_sign):
        # Rows of (y, v) with single-variable perturbations applied.
        Y = np.tile(y0, (len(batch_idx), 1))
        V = np.tile(v0, (len(batch_idx), 1))
        for r, (j, sgn) in enumerate(zip(batch_idx, batch_sign)):
            if j < n:
                Y[r, j] += sgn * h
            else:
                V[r, j - n] += sgn * h
        return Y, V

    F0 = _batch_eval(tpl, y0, v0)

    idx = np.arange(m)
    Yp, Vp = assemble(idx, np.ones(m))
    Ym, Vm = assemble(idx, -np.ones(m))
    Fp = _batch_eval(tpl, Yp, Vp)  # (m, 6)
    Fm = _batch_eval(tpl, Ym, Vm)

    grad = (Fp - Fm).T / (2.0 * h)  # (6, m)
    hess = np.empty((N_FEATURES, m, m))
    diag = (Fp - 2.0 * F0[None, :] + Fm).T / h**2
    for i in range(N_FEATURES):
        np.fill_diagonal(hess[i], diag[i])

    pairs = [(j, k) for j in range(m) for k in range(j + 1, m)]
    chunk = 4096
    for lo in range(0, len(pairs), chunk):
        sub = pairs[lo:lo + chunk]
        js = np.array([p[0] for p in sub])
        ks = np.array([p[1] for p in sub])
        rows = np.arange(len(sub))
        acc = None
        for sj, sk in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
            Y = np.tile(y0, (len(sub), 1))
            V = np.tile(v0, (len(sub), 1))
            for ids, sgn in ((js, sj), (ks, sk)):
                in_y = ids < n
                Y[rows[in_y], ids[in_y]] += sgn * h
                V[rows[~in_y], ids[~in_y] - n] += sgn * h
            F = _batch_eval(tpl, Y, V)
            sign = 1.0 if sj == sk else -1.0
            acc = sign * F if acc is None else acc + sign * F
        vals = acc / (4.0 * h**2)
        for i in range(N_FEATURES):
            hess[i, js, ks] = vals[:, i]
            hess[i, ks, js] = vals[:, i]
    return DemoDerivatives(grad, hess)


def _assemble(dd, theta_arr, scaler, ridge, max_ridge):
    """(g, H, used_ridge) for one demo; H is symmetrized, ridged, PD."""
    c = theta_arr / np.asarray(scaler.std, dtype=float)
    g = dd.grad.T @ c
    H = np.tensordot(c, dd.hess, axes=1)
    H = 0.5 * (H + H.T)
    r = ridge
    eye = np.eye(dd.n_vars)
    while True:
        try:
            cf = cho_factor(H + r * eye, lower=True, check_finite=False)
            return g, H + r * eye, cf, r
        except np.linalg.LinAlgError:
            r *= 2.0
        except ValueError as exc:
            raise NumericalError(f"non-finite Hessian entries: {exc}") from exc
        if r > max_ridge:
            raise NumericalError(
                f"Hessian not positive definite up to ridge {max_ridge}"
            )


def trajectory_gradient_hessian(theta, demo, cfg, net=None, scaler=None, feature_fn=None):
    """Gradient and Hessian of the demo's cost in its (y, v) parameterization.

    With `feature_fn` given, the cost is theta . feature_fn(xi) evaluated by
    dense central differences (test hook for synthetic feature maps);
    otherwise the production feature map is used. H is symmetrized and ridged
    until positive definite.
    """
    theta_arr = theta.as_array() if isinstance(theta, CostWeights) else np.asarray(theta, float)
    scaler = scaler or FeatureScaler.identity()

    if feature_fn is not None:
        cols = demo.traj.arrays
        x0 = np.concatenate([cols["y"], cols["v_lon"]])

        def cost_fn(xi):
            return float(theta_arr @ np.atleast_1d(feature_fn(xi)))

        g, H = finite_diff_grad_hess(cost_fn, x0, cfg.fd_step)
        H = 0.5 * (H + H.T)
        r = cfg.hessian_ridge
        eye = np.eye(x0.size)
        while True:
            try:
                np.linalg.cholesky(H + r * eye)
                return g, H + r * eye
            except np.linalg.LinAlgError:
                r *= 2.0
            if r > cfg.max_ridge:
                raise NumericalError(
                    f"Hessian not positive definite up to ridge {cfg.max_ridge}"
                )

    if net is None:
        raise DomainError("net is required for the production feature map")
    dd = precompute_demo_derivatives(demo, net, cfg)
    g, H, _, _ = _assemble(dd, theta_arr, scaler, cfg.hessian_ridge, cfg.max_ridge)
    return g, H


def laplace_term(g, H_or_chol, flip_logdet=False):
    """1/2 g' H^-1 g - 1/2 log|H| through a Cholesky factorization."""
    if isinstance(H_or_chol, tuple):
        cf = H_or_chol
    else:
        cf = cho_factor(np.asarray(H_or_chol, float), lower=True, check_finite=False)
    sol = cho_solve(cf, g, check_finite=False)
    quad = 0.5 * float(g @ sol)
    logdet = 2.0 * float(np.sum(np.log(np.diag(cf[0]))))
    sign = 1.0 if flip_logdet else -1.0
    return quad + sign * 0.5 * logdet


def irl_objective(theta, demos, cfg, net, scaler=None, _pre=None):
    """Laplace-approximated negative log-likelihood over the demonstrations."""
    if not demos:
        raise DomainError("need at least one demonstration")
    theta_arr = theta.as_array() if isinstance(theta, CostWeights) else np.asarray(theta, float)
    scaler = scaler or FeatureScaler.identity()
    pre = _pre or [precompute_demo_derivatives(d, net, cfg) for d in demos]
    total = 0.0
    for dd in pre:
        g, H, cf, _ = _assemble(dd, theta_arr, scaler, cfg.hessian_ridge, cfg.max_ridge)
        total += laplace_term(g, cf, cfg.flip_logdet_sign)
    return total


def project_simplex(theta):
    """Clamp negatives to zero and renormalize to sum one."""
    th = np.maximum(np.asarray(theta, dtype=float), 0.0)
    s = th.sum()
    if s <= 0.0:
        return np.full(th.shape, 1.0 / th.size)
    return th / s


def objective_theta_gradient(theta, demos, cfg, net, scaler=None, _pre=None):
    """Central finite-difference gradient of irl_objective over theta.

    Coordinates at zero fall back to a one-sided difference so theta never
    goes negative.
    """
    th = theta.as_array() if isinstance(theta, CostWeights) else np.asarray(theta, float)
    scaler = scaler or FeatureScaler.identity()
    pre = _pre or [precompute_demo_derivatives(d, net, cfg) for d in demos]
    h = cfg.theta_fd_step
    g = np.zeros(N_FEATURES)
    for i in range(N_FEATURES):
        tp = th.copy(); tp[i] += h
        tm = th.copy(); tm[i] = max(tm[i] - h, 0.0)
        fp = irl_objective(tp, demos, cfg, net, scaler, _pre=pre)
        fm = irl_objective(tm, demos, cfg, net, scaler, _pre=pre)
        g[i] = (fp - fm) / (tp[i] - tm[i])
    return g


def train_irl(demos, maneuver, cfg=None, net=None, scaler=None, return_history=False):
    """Projected gradient descent on the simplex; best iterate over restarts.

    The gradient of the objective is taken by central finite differences over
    theta; steps are normalized to the simplex scale with backtracking, and
    the best objective over `n_restarts` seeded random starts wins.
    """
    cfg = cfg or IrlConfig()
    if net is None:
        raise DomainError("net is required")
    demos = [d for d in demos if d.label == maneuver]
    if not demos:
        raise DomainError(f"no demonstrations labeled {maneuver}")
    scaler = scaler or FeatureScaler.fit(
        [trajectory_features(d.traj, d.ctx_seq, net).as_array() for d in demos]
    )
    pre = [precompute_demo_derivatives(d, net, cfg) for d in demos]

    def objective(th):
        return irl_objective(th, demos, cfg, net, scaler, _pre=pre)

    rng = np.random.default_rng(cfg.seed)
    starts = [project_simplex(rng.dirichlet(np.ones(N_FEATURES)))
              for _ in range(max(cfg.n_restarts, 1))]

    best_theta, best_obj = None, math.inf
    history = []
    for start in starts:
        th = start
        f_th = objective(th)
        run_best_theta, run_best = th, f_th
        run_hist = [f_th]
        stale = 0
        for _ in range(cfg.max_iters):
            g = objective_theta_gradient(th, demos, cfg, net, scaler, _pre=pre)
            gmax = np.max(np.abs(g))
            if gmax < 1e-12:
                break
            step = cfg.learning_rate * g / gmax
            improved = False
            for _ in range(8):
                cand = project_simplex(th - step)
                f_cand = objective(cand)
                if f_cand < f_th - 1e-12:
                    th, f_th = cand, f_cand
                    improved = True
                    break
                step *= 0.5
            if f_th < run_best - 1e-10:
                run_best_theta, run_best = th, f_th
                stale = 0
            else:
                stale += 1
            run_hist.append(run_best)
            if not improved or stale >= cfg.patience:
                break
        history.append(run_hist)
        if run_best < best_obj:
            best_theta, best_obj = run_best_theta, run_best

    weights = CostWeights(tuple(project_simplex(best_theta)), maneuver)
    if return_history:
        return weights, history
    return weights


def cosine_similarity(a, b):
    a = a.as_array() if isinstance(a, CostWeights) else np.asarray(a, float)
    b = b.as_array() if isinstance(b, CostWeights) else np.asarray(b, float)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(a @ b / (na * nb))


# ---------------------------------------------------------------------------
# Candidate scoring.
# ---------------------------------------------------------------------------


def candidate_costs(theta, cands, ctx_seq, net, scaler=None):
    scaler = scaler or FeatureScaler.identity()
    th = theta.as_array() if isinstance(theta, CostWeights) else np.asarray(theta, float)
    return np.array(
        [
            float(th @ scaler.transform(trajectory_features(c.traj, ctx_seq, net).as_array()))
            for c in cands
        ]
    )


def softmax_probabilities(costs):
    """exp(-cost) normalized with a max shift; sums to one within 1e-12."""
    z = -np.asarray(costs, dtype=float)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def candidate_probabilities(theta, cands, ctx_seq, net, scaler=None):
    """Probability of each candidate trajectory under the cost weights."""
    if not cands:
        raise DomainError("need at least one candidate")
    return softmax_probabilities(candidate_costs(theta, cands, ctx_seq, net, scaler))


def lane_change_probability(probs, labels):
    """Sum of probabilities over Change-labeled candidates."""
    probs = np.asarray(probs, dtype=float)
    if len(probs) != len(labels):
        raise DomainError("probs/labels length mismatch")
    total = float(
        sum(p for p, lab in zip(probs, labels) if lab == ManeuverLabel.CHANGE)
    )
    return min(max(total, 0.0), 1.0)
