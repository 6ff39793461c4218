"""Lyapunov-Nets: |N(z)| + alpha_bar |z| with a one-hidden-layer RePU network.

Everything is numpy with hand-written gradients.  The loss involves grad_z V,
so its parameter gradient needs the second derivative of the activation.
"""
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .lyapunov import Box, PerturbationSampler


class TrainingAborted(RuntimeError):
    def __init__(self, msg, history):
        super().__init__(msg)
        self.history = history


@dataclass
class NetParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: float
    s: int = 2
    alpha_bar: float = 0.1

    def __post_init__(self):
        self.W1 = np.asarray(self.W1, float)
        self.b1 = np.asarray(self.b1, float)
        self.W2 = np.asarray(self.W2, float).ravel()
        self.b2 = float(self.b2)
        if self.alpha_bar <= 0:
            raise ValueError("alpha_bar must be positive")
        if self.s < 2:
            raise ValueError("RePU power must be >= 2")

    @property
    def dims(self):
        return self.W1.shape[1]

    @property
    def width(self):
        return self.W1.shape[0]

    def flat(self):
        return np.concatenate([self.W1.ravel(), self.b1, self.W2, [self.b2]])

    def with_flat(self, v):
        h, d = self.W1.shape
        i = h * d
        return NetParams(v[:i].reshape(h, d), v[i:i + h], v[i + h:i + 2 * h], v[-1], self.s, self.alpha_bar)

    @classmethod
    def random(cls, dims, width=64, seed=0, scale=0.5, s=2, alpha_bar=0.1):
        rng = np.random.default_rng(seed)
        u = lambda *shape: rng.uniform(-scale, scale, shape)
        return cls(u(width, dims), u(width), u(width), float(u(1)[0]), s, alpha_bar)

    def to_dict(self):
        return {"dims": self.dims, "width": self.width, "s": self.s, "alpha_bar": self.alpha_bar,
                "W1": self.W1.tolist(), "b1": self.b1.tolist(), "W2": self.W2.tolist(), "b2": self.b2}

    @classmethod
    def from_dict(cls, d):
        return cls(d["W1"], d["b1"], d["W2"], d["b2"], d["s"], d["alpha_bar"])


def _act(theta, z):
    u = z @ theta.W1.T + theta.b1
    r = np.maximum(u, 0.0)
    s = theta.s
    sig = r ** s
    d1 = s * r ** (s - 1)
    d2 = np.where(u > 0, s * (s - 1) * r ** (s - 2), 0.0)
    return sig, d1, d2


def net_eval(theta, z):
    """V and grad V at points z (N, d); subgradient 0 at N(z)=0 and z=0."""
    z = np.atleast_2d(np.asarray(z, float))
    sig, d1, _ = _act(theta, z)
    N = sig @ theta.W2 + theta.b2
    gN = (d1 * theta.W2) @ theta.W1
    nz = np.linalg.norm(z, axis=1)
    safe = np.where(nz > 0, nz, 1.0)
    V = np.abs(N) + theta.alpha_bar * nz
    grad = np.sign(N)[:, None] * gN + theta.alpha_bar * np.where(nz[:, None] > 0, z / safe[:, None], 0.0)
    return V, grad


def net_hessian_norm(theta, z):
    """Spectral norm of the Hessian of V away from the kinks."""
    z = np.atleast_2d(z)
    sig, _, d2 = _act(theta, z)
    N = sig @ theta.W2 + theta.b2
    H = np.einsum("nh,hi,hj->nij", d2 * theta.W2, theta.W1, theta.W1) * np.sign(N)[:, None, None]
    nz = np.linalg.norm(z, axis=1)
    safe = np.where(nz > 0, nz, 1.0)
    u = z / safe[:, None]
    d = z.shape[1]
    H += theta.alpha_bar * (np.eye(d) - u[:, :, None] * u[:, None, :]) / safe[:, None, None]
    return np.linalg.norm(H, ord=2, axis=(1, 2))


@dataclass(frozen=True)
class TrainConfig:
    delta_bar: float
    C_bar: float
    lam: float
    lr: float = 0.05
    max_iter: int = 5000
    tol: float = 1e-6
    min_lr: float = 1e-10
    grow: float = 1.2

    def __post_init__(self):
        if not (0 < self.delta_bar < 1):
            raise ValueError("delta_bar must lie in (0, 1)")
        if self.C_bar <= 0:
            raise ValueError("C_bar must be positive")


def default_targets(cert, eps):
    """(delta_bar, C_bar) = (delta/2, C_lambda + eps) from a reference certificate."""
    return cert.delta / 2.0, cert.C_lambda + eps


# ---------------------------------------------------------------- sampling

def covering_centers(box, eps0):
    """Centres of an axis-aligned cube cover whose cells sit inside eps0-balls.

    Cells have side at most 2 eps0/sqrt(d), so their diagonal is at most 2 eps0.
    """
    lo, hi = np.asarray(box.lower, float), np.asarray(box.upper, float)
    d = lo.size
    side = 2 * eps0 / math.sqrt(d)
    counts = np.ceil((hi - lo) / side).astype(int)
    axes = [lo[i] + (np.arange(counts[i]) + 0.5) * (hi[i] - lo[i]) / counts[i] for i in range(d)]
    centers = np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")], axis=-1)
    return centers


def p_min_box(box, eps0):
    """Lower bound on the uniform probability of any covering ball.

    Each cell lies inside its ball and inside the box (fraction 1/M).  When
    every side is at least 2 eps0 the inward orthant of the ball also lies in
    the box, giving the ball volume / 2^d.
    """
    lo, hi = np.asarray(box.lower, float), np.asarray(box.upper, float)
    d = lo.size
    M = len(covering_centers(box, eps0))
    best = 1.0 / M
    if np.all(hi - lo >= 2 * eps0):
        ball = math.pi ** (d / 2) / math.gamma(d / 2 + 1) * eps0 ** d
        best = max(best, ball / 2 ** d / box.volume)
    return min(best, 1.0)


def sample_size(box, eps0, rho, p_min=None):
    """Smallest m with 1 - M (1 - p_min)^m >= 1 - rho."""
    if box.volume <= 0:
        raise ValueError("degenerate domain")
    if not (0 < rho < 1):
        raise ValueError("rho must lie in (0, 1)")
    M = len(covering_centers(box, eps0))
    p = p_min_box(box, eps0) if p_min is None else p_min
    if not (0 < p < 1):
        return 1
    return max(1, math.ceil(math.log(M / rho) / -math.log1p(-p)))


def covering_success(samples, centers, eps0):
    """True iff every covering ball contains at least one sample."""
    from scipy.spatial import cKDTree
    dist, _ = cKDTree(samples).query(centers)
    return bool(np.all(dist <= eps0))


@dataclass(frozen=True)
class SamplePlan:
    lower: tuple
    upper: tuple
    eps0: float = 0.1
    rho: float = 0.05
    m_z: int | None = None
    m_psi: int = 16
    m_eta: int = 16
    seed: int = 0

    @property
    def box(self):
        return Box(self.lower, self.upper, 2)

    def draw(self, f, lam):
        """Fixed training set: z samples and every (I + psi_j) f(z_i + eta_k)."""
        m = self.m_z or sample_size(self.box, self.eps0, self.rho)
        rng = np.random.default_rng(self.seed)
        lo, hi = np.asarray(self.lower, float), np.asarray(self.upper, float)
        z = lo + (hi - lo) * rng.uniform(size=(m, lo.size))
        psi, eta = PerturbationSampler(lam, self.m_psi, self.m_eta, self.seed + 1).samples(lo.size)
        return TrainingSet(z, perturbed_fields(f, z, psi, eta))


def perturbed_fields(f, z, psi, eta):
    Fe = f(z[:, None, :] + eta[None, :, :])                      # (N, ne, d)
    d = z.shape[1]
    IP = np.eye(d)[None] + psi                                   # (np, d, d)
    out = np.einsum("jab,nkb->njka", IP, Fe)
    return out.reshape(len(z), -1, d)


@dataclass
class TrainingSet:
    z: np.ndarray
    F: np.ndarray          # (N, S, d) perturbed drift values


# ---------------------------------------------------------------- risk and training

def empirical_risk(theta, data, cfg, with_grad=False):
    """mean_i [max_s <grad V(z_i), F_is> + delta_bar V(z_i) - C_bar]_+^2.

    The gradient follows the maximising sample s only.
    """
    z, F = data.z, data.F
    V, G = net_eval(theta, z)
    M = np.einsum("nd,nsd->ns", G, F)
    act = np.argmax(M, axis=1)
    rows = np.arange(len(z))
    bracket = M[rows, act] + cfg.delta_bar * V - cfg.C_bar
    pos = np.maximum(bracket, 0.0)
    loss = float(np.mean(pos ** 2))
    if not with_grad:
        return loss, bracket
    Fa = F[rows, act]
    sig, d1, d2 = _act(theta, z)
    N = sig @ theta.W2 + theta.b2
    c = 2.0 * pos / len(z) * np.sign(N)
    proj = Fa @ theta.W1.T
    db = cfg.delta_bar
    gW2 = c @ (d1 * proj + db * sig)
    gb2 = float(c.sum() * db)
    inner = (d2 * proj + db * d1) * theta.W2                    # (N, h)
    gb1 = c @ inner
    gW1 = (c[:, None] * inner).T @ z + ((c[:, None] * d1 * theta.W2).T @ Fa)
    grad = np.concatenate([gW1.ravel(), gb1, gW2, [gb2]])
    return loss, bracket, grad


def train(theta, data, cfg):
    """Projected gradient descent with a monotone step rule.

    A step is kept only if the loss does not increase (then the step size
    grows by cfg.grow); otherwise the step size halves.  Weights are clamped
    to [-1, 1].  Raises TrainingAborted once the step size underflows min_lr.
    """
    lr = cfg.lr
    loss, _, g = empirical_risk(theta, data, cfg, with_grad=True)
    history = [loss]
    it = 0
    while loss > cfg.tol and it < cfg.max_iter:
        it += 1
        cand = theta.with_flat(np.clip(theta.flat() - lr * g, -1.0, 1.0))
        new_loss, _, new_g = empirical_risk(cand, data, cfg, with_grad=True)
        if new_loss <= loss:
            theta, loss, g = cand, new_loss, new_g
            lr *= cfg.grow
        else:
            lr *= 0.5
            if lr < cfg.min_lr:
                raise TrainingAborted(f"step size fell below {cfg.min_lr} at loss {loss:.3e}", history)
        history.append(loss)
    return theta, history


# ---------------------------------------------------------------- verification

@dataclass
class AccuracyReport:
    pass_rate: float
    worst_margin: float
    worst_point: list
    eps: float
    lipschitz_modulus: float
    certified_radius_min: float
    n_points: int
    margins: np.ndarray = field(repr=False, default=None)

    def to_dict(self):
        return {k: v for k, v in asdict(self).items() if k != "margins"}


def verify_accuracy(theta, drift, box, lam, cfg, eps, sampler=None, chunk=4000):
    """Dense-grid check of max-bracket <= C_bar + 2 eps - delta_bar V(z).

    The certified radius around a passing point is margin / L with
    L = sup(|grad V| + |hess V|) (1 + lam) (sup|f| + sup|Df|), the sups taken
    over the same grid.
    """
    sampler = sampler or PerturbationSampler(lam, 16, 16, seed=12345)
    psi, eta = sampler.samples(box.dim)
    pts = box.points()
    margins = np.empty(len(pts))
    gmax = 0.0
    for s in range(0, len(pts), chunk):
        z = pts[s:s + chunk]
        V, G = net_eval(theta, z)
        sup = np.einsum("nd,nsd->ns", G, perturbed_fields(drift.f, z, psi, eta)).max(axis=1)
        margins[s:s + chunk] = cfg.C_bar + 2 * eps - cfg.delta_bar * V - sup
        gmax = max(gmax, float((np.linalg.norm(G, axis=1) + net_hessian_norm(theta, z)).max()))
    fmax = float(np.linalg.norm(drift.f(pts), axis=1).max())
    Dfmax = float(np.linalg.norm(drift.Df(pts), ord=2, axis=(1, 2)).max()) if drift.Df else 0.0
    L = gmax * (1 + lam) * (fmax + Dfmax)
    w = int(np.argmin(margins))
    ok = margins >= 0
    rad = float((margins[ok] / L).min()) if ok.any() else 0.0
    return AccuracyReport(float(ok.mean()), float(margins[w]), pts[w].tolist(), eps, L, rad,
                          len(pts), margins)


def checkpoint_json(theta, cfg, history):
    return json.dumps({**theta.to_dict(), "train_config": asdict(cfg), "loss_history": history},
                      indent=1)
