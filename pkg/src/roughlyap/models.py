"""Built-in drift/diffusion pairs.

All field functions act on arrays of shape (..., d) so whole point clouds
can be pushed through one call.
"""
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class DriftField:
    dim: int
    f: Callable
    Df: Callable | None = None
    lipschitz: float | None = None
    f0_norm: float = 0.0
    local_lipschitz: Callable | None = None
    # (d1, d2) with <z, f(z)> <= d1 - d2 |z|^2, when known
    dissipativity: tuple | None = None


@dataclass(frozen=True)
class DiffusionField:
    dim: int
    noise_dim: int
    g: Callable
    Dg: Callable
    C_g: float
    kind: str
    zero_at_origin: bool = False


@dataclass(frozen=True)
class SystemSpec:
    drift: DriftField
    diffusion: DiffusionField | None = None
    name: str = "custom"
    params: dict = field(default_factory=dict)

    @property
    def dim(self):
        return self.drift.dim

    @property
    def noise_dim(self):
        return 0 if self.diffusion is None else self.diffusion.noise_dim


def _spectral_norm(M):
    return float(np.linalg.norm(M, 2))


def make_fhn(epsilon=0.08, mu=0.8, I=0.5, J=0.7):
    if epsilon <= 0 or mu <= 0:
        raise ValueError("FitzHugh-Nagumo needs epsilon, mu > 0")

    def f(z):
        v, w = z[..., 0], z[..., 1]
        return np.stack([v - v ** 3 / 3.0 - w + I, epsilon * (v - mu * w + J)], axis=-1)

    def Df(z):
        v = z[..., 0]
        out = np.empty(z.shape[:-1] + (2, 2))
        out[..., 0, 0] = 1.0 - v * v
        out[..., 0, 1] = -1.0
        out[..., 1, 0] = epsilon
        out[..., 1, 1] = -epsilon * mu
        return out

    def local_lip(lower, upper):
        # the Jacobian is affine in s = v^2, so its norm peaks at an end of the s-range
        lo, hi = lower[0], upper[0]
        s_max = max(lo * lo, hi * hi)
        s_min = 0.0 if lo <= 0 <= hi else min(lo * lo, hi * hi)
        return max(_spectral_norm(np.array([[1 - s, -1.0], [epsilon, -epsilon * mu]]))
                   for s in (s_min, s_max))

    drift = DriftField(2, f, Df, None, float(np.hypot(I, epsilon * J)), local_lip)
    return SystemSpec(drift, None, "fhn", {"epsilon": epsilon, "mu": mu, "I": I, "J": J})


def make_pendulum(sigma=1.0, mu=0.5):
    if sigma <= 0 or mu <= 0:
        raise ValueError("pendulum needs sigma, mu > 0")

    def f(z):
        v, w = z[..., 0], z[..., 1]
        return np.stack([w, -sigma ** 2 * np.sin(v) - 2.0 * mu * w], axis=-1)

    def Df(z):
        v = z[..., 0]
        out = np.empty(z.shape[:-1] + (2, 2))
        out[..., 0, 0] = 0.0
        out[..., 0, 1] = 1.0
        out[..., 1, 0] = -sigma ** 2 * np.cos(v)
        out[..., 1, 1] = -2.0 * mu
        return out

    # Jacobian norm is convex in cos(v), so the sup sits at cos(v) = +-1
    C_f = max(_spectral_norm(np.array([[0.0, 1.0], [-sigma ** 2 * c, -2.0 * mu]])) for c in (-1.0, 1.0))
    drift = DriftField(2, f, Df, C_f, 0.0, lambda lower, upper: C_f)
    return SystemSpec(drift, None, "pendulum", {"sigma": sigma, "mu": mu})


def make_linear_dissipative(a=1.0, b=(0.0, 0.0)):
    if a <= 0:
        raise ValueError("linear dissipative system needs a > 0")
    b = np.asarray(b, dtype=float)
    d = b.size

    def f(z):
        return -a * z + b

    def Df(z):
        return np.broadcast_to(-a * np.eye(d), z.shape[:-1] + (d, d)).copy()

    bb = float(b @ b)
    drift = DriftField(d, f, Df, float(a), float(np.sqrt(bb)), lambda lower, upper: float(a),
                       dissipativity=(bb / (2 * a), a / 2.0))
    return SystemSpec(drift, None, "linear", {"a": a, "b": b.tolist()})


# Scalar profiles p(u) with the largest of sup|p|, |p'|, |p''|, |p'''| equal to 1,
# so C_g * p has the diffusion bound C_g.
def _bump(u):
    t = np.tanh(u)
    return 0.5 * (1.0 + t), 0.5 * (1.0 - t * t)


def _vanish(u):
    t = np.tanh(u)
    return 0.5 * t, 0.5 * (1.0 - t * t)


_PROFILES = {"linear-bump": _bump, "vanishing-at-zero": _vanish}


def attach_diffusion(spec, kind, C_g, noise_dim=None, channels=None):
    """Return `spec` with a C^3_b diffusion whose bound equals C_g.

    channels[i] names the noise channel driving state component i (None for
    no noise); the default drives component i by channel i.  Non-constant
    kinds scale each entry by a profile of its own state component.
    """
    if C_g < 0:
        raise ValueError("C_g must be non-negative")
    d = spec.dim
    m = d if noise_dim is None else int(noise_dim)
    if channels is None:
        channels = [i if i < m else None for i in range(d)]
    E = np.zeros((d, m))
    for i, c in enumerate(channels):
        if c is not None:
            E[i, c] = 1.0

    if kind == "constant":
        G = C_g * E

        def g(y):
            return np.broadcast_to(G, y.shape[:-1] + (d, m))

        def Dg(y):
            return np.zeros(y.shape[:-1] + (d, m, d))

        zero = C_g == 0
    elif kind in _PROFILES:
        prof = _PROFILES[kind]

        def g(y):
            p, _ = prof(y)
            return C_g * p[..., :, None] * E

        def Dg(y):
            _, dp = prof(y)
            out = np.zeros(y.shape[:-1] + (d, m, d))
            for i in range(d):
                out[..., i, :, i] = C_g * dp[..., i, None] * E[i]
            return out

        zero = kind == "vanishing-at-zero" or C_g == 0
    else:
        raise ValueError(f"unknown diffusion kind {kind!r}")
    diff = DiffusionField(d, m, g, Dg, float(C_g), kind, zero)
    return replace(spec, diffusion=diff)


MODELS = {"fhn": make_fhn, "pendulum": make_pendulum, "linear": make_linear_dissipative}


def build_system(name, params=None, diffusion=None):
    """Registry entry point: model name, parameter blob, optional diffusion blob."""
    if name not in MODELS:
        raise ValueError(f"unknown model {name!r}; known: {sorted(MODELS)}")
    spec = MODELS[name](**(params or {}))
    if diffusion:
        spec = attach_diffusion(spec, diffusion.get("kind", "constant"), diffusion.get("C_g", 0.0),
                                diffusion.get("noise_dim"), diffusion.get("channels"))
    return spec
