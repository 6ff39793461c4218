"""Lyapunov functions, strong-condition certificates and their consequences."""
import json
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import minimize

from .rough_core import p_var_norm

PROVENANCES = ("derived-lipschitz", "derived-lipschitz2", "fhn-explicit", "checked-numerically")


class InfeasibleCertificate(ValueError):
    """Raised when the certificate formulas give delta <= 0 or C_lambda <= 0."""


@dataclass(frozen=True)
class LyapunovFn:
    V: Callable
    grad: Callable
    L_V: float
    alpha_fn: Callable | None = None
    beta_fn: Callable | None = None
    alpha_inv: Callable | None = None
    bound_class: str = "poly"
    # (C_kappa, rho_kappa) for alpha and beta when bound_class == "poly"
    poly_consts: dict = field(default_factory=dict)
    # (d1, d2) of <grad V, f> <= d1 - d2 V for the matching drift
    classical: tuple | None = None
    name: str = "custom"


@dataclass(frozen=True)
class StrongCert:
    lam: float
    C_lambda: float
    delta: float
    provenance: str = "checked-numerically"

    def __post_init__(self):
        if not (0 <= self.lam < 1):
            raise ValueError(f"lambda must lie in [0, 1), got {self.lam}")
        if self.C_lambda <= 0 or self.delta <= 0:
            raise ValueError("C_lambda and delta must be positive")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")


@dataclass(frozen=True)
class PerturbationSampler:
    """Fixed sample of perturbations psi (d x d, Frobenius norm <= lam) and eta (|eta| <= lam).

    Index 0 of each set is the zero perturbation.  Of the rest, half sit on
    the boundary sphere and half are uniform in the ball.
    """
    lam: float
    n_psi: int = 64
    n_eta: int = 64
    seed: int = 0

    def samples(self, d):
        rng = np.random.default_rng(self.seed)
        if self.lam == 0:
            return np.zeros((1, d, d)), np.zeros((1, d))
        psi = _ball_samples(rng, self.n_psi, d * d, self.lam).reshape(-1, d, d)
        eta = _ball_samples(rng, self.n_eta, d, self.lam)
        return psi, eta


def _ball_samples(rng, n, k, radius):
    out = np.zeros((n, k))
    rest = n - 1
    if rest <= 0:
        return out
    dirs = rng.standard_normal((rest, k))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    n_edge = (rest + 1) // 2
    r = np.ones(rest)
    r[n_edge:] = rng.uniform(size=rest - n_edge) ** (1.0 / k)
    out[1:] = radius * r[:, None] * dirs
    return out


@dataclass(frozen=True)
class Box:
    lower: tuple
    upper: tuple
    resolution: int = 200

    def __post_init__(self):
        lo, hi = np.asarray(self.lower, float), np.asarray(self.upper, float)
        if lo.shape != hi.shape or np.any(hi <= lo):
            raise ValueError("box needs lower < upper in every coordinate")
        if self.resolution < 2:
            raise ValueError("resolution must be >= 2")

    @property
    def dim(self):
        return len(self.lower)

    def points(self):
        """Grid points in lexicographic (row-major) order."""
        axes = [np.linspace(a, b, self.resolution) for a, b in zip(self.lower, self.upper)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    @property
    def volume(self):
        return float(np.prod(np.subtract(self.upper, self.lower)))


@dataclass
class StrongReport:
    pass_rate: float
    worst_margin: float
    worst_point: list
    passed: bool
    n_points: int
    n_flagged: int
    margins: np.ndarray = field(repr=False, default=None)

    def to_dict(self, box=None, cert=None, sampler=None):
        out = {k: v for k, v in asdict(self).items() if k != "margins"}
        if box is not None:
            out["domain"] = {"lower": list(box.lower), "upper": list(box.upper)}
            out["resolution"] = box.resolution
        if cert is not None:
            out["cert"] = asdict(cert)
        if sampler is not None:
            out["sampler"] = asdict(sampler)
            out["seed"] = sampler.seed
        return out


def strong_sup(grad_z, f, z, psi, eta, exact_psi=False):
    """sup over the sampled (psi, eta) of <grad_z, (I + psi) f(z + eta)> per point.

    With exact_psi the psi-sup is taken in closed form: for fixed eta the
    objective is linear in psi, so over the Frobenius ball it equals
    <g, F> + lam |g| |F|.
    """
    F = f(z[:, None, :] + eta[None, :, :])                    # (N, ne, d)
    base = np.einsum("nd,nkd->nk", grad_z, F)
    if exact_psi:
        lam = np.sqrt((psi ** 2).sum(axis=(1, 2))).max()
        extra = lam * np.linalg.norm(grad_z, axis=1)[:, None] * np.linalg.norm(F, axis=2)
        return (base + extra).max(axis=1)
    cross = np.einsum("nd,jde,nke->njk", grad_z, psi, F)      # (N, npsi, ne)
    return (base[:, None, :] + cross).max(axis=(1, 2))


def check_strong_condition(lyap, drift, box, cert, sampler, exact_psi=False, chunk=2000):
    """Sweep the box grid and test sup <grad V, (I+psi) f(z+eta)> <= C_lambda - delta V(z)."""
    d = box.dim
    psi, eta = sampler.samples(d)
    pts = box.points()
    margins = np.empty(len(pts))
    for s in range(0, len(pts), chunk):
        z = pts[s:s + chunk]
        with np.errstate(all="ignore"):
            sup = strong_sup(lyap.grad(z), drift.f, z, psi, eta, exact_psi)
            margins[s:s + chunk] = cert.C_lambda - cert.delta * lyap.V(z) - sup
    ok = np.isfinite(margins)
    n_flag = int((~ok).sum())
    if not ok.any():
        return StrongReport(0.0, float("nan"), [], False, len(pts), n_flag, margins)
    valid = np.where(ok, margins, np.inf)
    w = int(np.argmin(valid))  # first occurrence = lowest lexicographic index
    good = margins[ok] >= 0
    return StrongReport(float(good.mean()), float(margins[w]), pts[w].tolist(),
                        bool(good.all()), len(pts), n_flag, margins)


# ---------------------------------------------------------------- certificates

def derive_cert_lipschitz(d1, d2, L_V, C_f, f0_norm, alpha, C, lam):
    """Certificate for a globally Lipschitz drift when alpha |z| + C <= V(z)."""
    C_lam = d1 + L_V * lam * (2 * C_f * lam + f0_norm - (C / alpha) * C_f)
    delta = d2 - L_V * C_f * lam / alpha
    if delta <= 0 or C_lam <= 0:
        raise InfeasibleCertificate(f"lambda={lam}: C_lambda={C_lam:.6g}, delta={delta:.6g}")
    return StrongCert(lam, C_lam, delta, "derived-lipschitz")


def derive_cert_lipschitz2(d1, d2, L_V, C_f, K, C, lam):
    """Certificate for a Lipschitz drift when |f(z)|/K + C <= V(z)."""
    C_lam = d1 + L_V * lam * (K * L_V * lam - K * C + C_f)
    delta = d2 - K * L_V * lam
    if delta <= 0 or C_lam <= 0:
        raise InfeasibleCertificate(f"lambda={lam}: C_lambda={C_lam:.6g}, delta={delta:.6g}")
    return StrongCert(lam, C_lam, delta, "derived-lipschitz2")


def largest_feasible_lambda(derive, tol=1e-10, **consts):
    """Largest lambda in [0, 1) such that every smaller lambda is feasible.

    A coarse scan finds the first infeasible lambda, bisection refines it.
    """
    def feasible(lam):
        try:
            derive(lam=lam, **consts)
            return True
        except (InfeasibleCertificate, ValueError):
            return False

    if not feasible(0.0):
        raise InfeasibleCertificate("infeasible already at lambda = 0")
    grid = np.linspace(0.0, 1.0, 1001)[1:-1]
    lo, hi = 0.0, 1.0
    for lam in grid:
        if not feasible(lam):
            hi = lam
            break
        lo = lam
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            lo = mid
        else:
            hi = mid
    return lo


# ---------------------------------------------------------------- concrete V

def sqrt_lyapunov(a=1.0, b_norm=0.0):
    """V = sqrt(1 + |z|^2) for the linear drift -a z + b.

    <grad V, f> = (-a|z|^2 + z.b)/V <= a + |b| - a V.
    """
    def V(z):
        return np.sqrt(1.0 + (z * z).sum(axis=-1))

    def grad(z):
        return z / V(z)[..., None]

    return LyapunovFn(V, grad, 1.0, alpha_fn=lambda r: r, beta_fn=lambda r: 1.0 + r,
                      alpha_inv=lambda u: u, poly_consts={"alpha": (1.0, 1.0), "beta": (1.0, 1.0)},
                      classical=(a + b_norm, a), name="sqrt")


def pendulum_lyapunov(sigma=1.0, mu=0.5):
    s2 = sigma ** 2

    def V(z):
        v, w = z[..., 0], z[..., 1]
        return np.sqrt(1.0 + 0.5 * w * w + s2 * (1.0 - np.cos(v)))

    def grad(z):
        v, w = z[..., 0], z[..., 1]
        den = 2.0 * V(z)
        return np.stack([s2 * np.sin(v) / den, w / den], axis=-1)

    # only a local lower bound: 1 - cos v >= 2 v^2 / pi^2 on |v| <= pi gives
    # V^2 >= 1 + c |z|^2 there
    c = min(0.5, 2.0 * s2 / np.pi ** 2)
    return LyapunovFn(V, grad, 1.0 + s2, alpha_fn=lambda r: np.sqrt(1.0 + c * np.square(r)),
                      alpha_inv=lambda u: np.sqrt(np.maximum(np.square(u) - 1.0, 0.0) / c),
                      bound_class="tempered",
                      classical=(2 * mu * (1 + s2), 2 * mu), name="pendulum")


def pendulum_K(sigma, mu):
    """Growth constant with |f(z)| <= K V(z) for the pendulum."""
    return float(np.sqrt(max(2 + 16 * mu ** 2, 2 * sigma ** 4)))


@dataclass(frozen=True)
class FhnCertTemplate:
    B: float
    delta: float

    def cert(self, D, C_lambda):
        return StrongCert(1.0 / (12.0 * D), C_lambda, self.delta, "fhn-explicit")


def fhn_lyapunov(epsilon=0.08, mu=0.8):
    B = 6.0 / (epsilon * mu)
    delta = epsilon * mu / (12.0 * (2.0 + epsilon * mu))

    def V(z):
        v, w = z[..., 0], z[..., 1]
        return (1.0 + v ** 4 + B * w * w) ** 0.25

    def grad(z):
        v, w = z[..., 0], z[..., 1]
        den = 4.0 * (1.0 + v ** 4 + B * w * w) ** 0.75
        return np.stack([4.0 * v ** 3 / den, 2.0 * B * w / den], axis=-1)

    lo = min(2.0, B) ** 0.25
    hi = (1.0 + B / 2.0) ** 0.25
    # |v^3|/(..)^(3/4) <= 1 and |B w/2|/(1 + B w^2)^(3/4) <= sqrt(B/2)/3^(3/4)
    L_V = 1.0 + np.sqrt(B / 2.0) / 3.0 ** 0.75
    lyap = LyapunovFn(V, grad, float(L_V), alpha_fn=lambda r: lo * np.sqrt(r),
                      beta_fn=lambda r: hi * (1.0 + r), alpha_inv=lambda u: (u / lo) ** 2,
                      poly_consts={"alpha": (lo, 0.5), "beta": (2 * hi, 1.0)}, name="fhn")
    return lyap, FhnCertTemplate(B, delta)


def _fhn_remainder_poly(v, w, epsilon, mu, I, J, B):
    # P >= |R|/lam for lam <= 1, where R is the change in 4V^3 <grad V, (I+psi) f>
    # caused by the perturbation; v, w are absolute values
    e1 = v * v + v + 7.0 / 3.0
    F1 = v + v ** 3 / 3.0 + w + abs(I)
    F2 = epsilon * (v + mu * w + abs(J))
    e2 = epsilon * (1.0 + mu)
    return 4 * v ** 3 * (F1 + 2 * e1 + F2 + e2) + 2 * B * w * (F1 + e1 + F2 + 2 * e2)


def fhn_proof_constant(epsilon=0.08, mu=0.8, I=0.5, J=0.7):
    """D with P(v, w) <= D (v^6 + w^2 + 1), sup over a wide log grid plus 1 %."""
    B = 6.0 / (epsilon * mu)
    ax = np.concatenate([[0.0], np.logspace(-3, 6, 900)])
    v, w = np.meshgrid(ax, ax, indexing="ij")
    ratio = _fhn_remainder_poly(v, w, epsilon, mu, I, J, B) / (v ** 6 + w ** 2 + 1.0)
    return 1.01 * float(ratio.max())


def fhn_cert_constant(epsilon=0.08, mu=0.8, I=0.5, J=0.7):
    """C_lambda such that the perturbed condition holds when lam = 1/(12 D).

    With lam D = 1/12 the perturbed bracket satisfies
    4V^3 M <= U + (v^6 + w^2 + 1)/12, U the unperturbed bracket, so
    M <= C'/4 - delta V with C' = sup [U + (v^6+w^2+1)/12 + 4 delta V^4].
    """
    B = 6.0 / (epsilon * mu)
    delta = epsilon * mu / (12.0 * (2.0 + epsilon * mu))

    def phi(z):
        v, w = z[..., 0], z[..., 1]
        U = 4 * v ** 3 * (v - v ** 3 / 3 - w + I) + 2 * B * epsilon * w * (v - mu * w + J)
        return U + (v ** 6 + w * w + 1) / 12.0 + 4 * delta * (1 + v ** 4 + B * w * w)

    ax = np.linspace(-6, 6, 241)
    v, w = np.meshgrid(ax, ax, indexing="ij")
    vals = phi(np.stack([v, w], axis=-1))
    k = np.unravel_index(np.argmax(vals), vals.shape)
    res = minimize(lambda z: -phi(np.asarray(z)), x0=[v[k], w[k]], method="Nelder-Mead",
                   options={"xatol": 1e-12, "fatol": 1e-12, "maxiter": 10000})
    c_prime = max(float(-res.fun), float(vals.max()))
    return c_prime / 4.0


def fhn_certificate(epsilon=0.08, mu=0.8, I=0.5, J=0.7, D=None, C_lambda=None):
    """(LyapunovFn, StrongCert) with the documented defaults for D and C_lambda."""
    lyap, tmpl = fhn_lyapunov(epsilon, mu)
    D = fhn_proof_constant(epsilon, mu, I, J) if D is None else D
    C = fhn_cert_constant(epsilon, mu, I, J) if C_lambda is None else C_lambda
    return lyap, tmpl.cert(D, C)


# ---------------------------------------------------------------- consequences

def H_term(xi, lam, L_V, C_p, C_g, p):
    """H(xi) = L_V (16 C_p C_g)^p lam^(1-p) xi^p + 8 L_V C_p C_g xi."""
    xi = np.asarray(xi, dtype=float)
    if C_g == 0:
        return np.zeros_like(xi)
    with np.errstate(divide="ignore", invalid="ignore"):
        # lam = 0 with noise gives an infinite bound
        lead = L_V * (16 * C_p * C_g) ** p * np.float64(lam) ** (1 - p) * xi ** p
        lead = np.where(xi == 0, 0.0, lead)
    return lead + 8 * L_V * C_p * C_g * xi


def decay_envelope(V0, cert, t, xi, L_V, C_p, C_g, p):
    """e^(-delta t)(V0 - C/delta) + C/delta + H(xi)."""
    ratio = cert.C_lambda / cert.delta
    return np.exp(-cert.delta * np.asarray(t)) * (V0 - ratio) + ratio + H_term(xi, cert.lam, L_V, C_p, C_g, p)


@dataclass
class AbsorbingBall:
    R_bar: float
    radius: float
    tail_bound: float
    terms: list

    def to_dict(self):
        return asdict(self)


def absorbing_radius(rp, cert, L_V, C_p, C_g, K_trunc, params, alpha_inv=None, eps=1e-3):
    """Truncated series sum_k e^(-k delta) H(|||x|||_[-1-k, -k]) and the ball radius.

    rp must be two-sided and cover [-K_trunc-1, 0].  The radius is
    alpha^-1(C_lambda/delta + R_bar + eps) when alpha_inv is given.
    """
    grid = rp.grid
    if grid.t0 > -K_trunc - 1 + 1e-12 or grid.t_end < 0:
        raise ValueError(f"noise window [{grid.t0}, {grid.t_end}] does not cover [{-K_trunc - 1}, 0]")
    terms = []
    for k in range(K_trunc + 1):
        if C_g == 0:
            terms.append(0.0)
            continue
        xi = p_var_norm(rp, grid.index_of(-1.0 - k), grid.index_of(-float(k)), params)
        terms.append(float(H_term(xi, cert.lam, L_V, C_p, C_g, params.p)))
    weights = np.exp(-cert.delta * np.arange(K_trunc + 1))
    R_bar = float(np.dot(weights, terms))
    tail = float(np.exp(-K_trunc * cert.delta) / (1 - np.exp(-cert.delta)) * max(terms))
    radius = float("nan")
    if alpha_inv is not None:
        radius = float(alpha_inv(cert.C_lambda / cert.delta + R_bar + eps))
    return AbsorbingBall(R_bar, radius, tail, terms)


def report_json(report, **extra):
    d = report.to_dict(**extra) if hasattr(report, "to_dict") else dict(report)
    return json.dumps(d, indent=2, sort_keys=True, default=float)
