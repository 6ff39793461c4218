"""Rough paths on regular grids.

A rough path here is a pair of node values x and per-step level-2 terms
(the iterated integrals over each grid step).  Anything over a longer
interval is assembled from those two arrays by Chen's relation.
"""
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit
from scipy.linalg import cholesky, toeplitz

_ALIGN_TOL = 1e-9


@dataclass(frozen=True)
class Grid:
    t0: float
    dt: float
    n_steps: int

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError(f"n_steps must be a positive integer, got {self.n_steps}")

    @property
    def times(self):
        return self.t0 + self.dt * np.arange(self.n_steps + 1)

    @property
    def t_end(self):
        return self.t0 + self.dt * self.n_steps

    def index_of(self, t):
        """Node index of time t; raises if t is off-grid or outside the window."""
        k = (t - self.t0) / self.dt
        kr = int(round(k))
        if abs(k - kr) > _ALIGN_TOL * max(1.0, abs(k)):
            raise ValueError(f"time {t} is not aligned with grid step {self.dt}")
        if kr < 0 or kr > self.n_steps:
            raise ValueError(f"time {t} outside window [{self.t0}, {self.t_end}]")
        return kr

    def steps_for(self, h):
        """Number of grid steps spanned by a time offset h (must be aligned)."""
        k = h / self.dt
        kr = int(round(k))
        if abs(k - kr) > _ALIGN_TOL * max(1.0, abs(k)):
            raise ValueError(f"offset {h} is not a multiple of dt={self.dt}")
        return kr


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PathSample:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.shape[0] != self.grid.n_steps + 1:
            raise ValueError(f"expected {self.grid.n_steps + 1} nodes, got {v.shape[0]}")
        if not np.all(np.isfinite(v)):
            raise ValueError("path values must be finite")
        object.__setattr__(self, "values", _frozen(v))

    @property
    def dims(self):
        return self.values.shape[1]


@dataclass(frozen=True)
class RoughPathGrid:
    path: PathSample
    level2: np.ndarray
    hurst: float | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        L = np.asarray(self.level2, dtype=float)
        m = self.path.dims
        if L.shape != (self.path.grid.n_steps, m, m):
            raise ValueError(f"level2 shape {L.shape} does not match path ({self.path.grid.n_steps}, {m}, {m})")
        object.__setattr__(self, "level2", _frozen(L))

    @property
    def grid(self):
        return self.path.grid

    @property
    def values(self):
        return self.path.values

    @property
    def dims(self):
        return self.path.dims

    @property
    def increments(self):
        return np.diff(self.path.values, axis=0)


@dataclass(frozen=True)
class NormParams:
    """Variation exponent p in (2,3) with q = p/2; alpha = 1/p must sit below nu."""
    p: float
    nu: float = 0.5

    def __post_init__(self):
        a = 1.0 / self.p
        if not (1.0 / 3.0 < a < self.nu <= 0.5):
            raise ValueError(f"need 1/3 < 1/p < nu <= 1/2, got p={self.p}, nu={self.nu}")

    @property
    def q(self):
        return self.p / 2.0

    @property
    def alpha(self):
        return 1.0 / self.p

    @classmethod
    def from_hurst(cls, hurst):
        # alpha halfway between 1/3 and the path regularity
        alpha = 0.5 * (1.0 / 3.0 + hurst)
        return cls(p=1.0 / alpha, nu=hurst)


def sample_seed(master_seed, index):
    """Independent per-sample seed derived from (master seed, index)."""
    return int(np.random.SeedSequence([int(master_seed), int(index)]).generate_state(1, dtype=np.uint64)[0])


# ---------------------------------------------------------------- fBm

def _fgn_autocov(hurst, n):
    k = np.arange(n + 1, dtype=float)
    h2 = 2.0 * hurst
    return 0.5 * (np.abs(k + 1) ** h2 - 2.0 * k ** h2 + np.abs(k - 1) ** h2)


def _circulant_eigs(hurst, n):
    gam = _fgn_autocov(hurst, n)
    row = np.concatenate([gam, gam[-2:0:-1]])
    return np.fft.fft(row).real


def generate_fbm(hurst, dims, grid, seed):
    return _fbm(hurst, dims, grid, seed)[0]


def _fbm(hurst, dims, grid, seed):
    """m independent fBm components on `grid`, pinned to 0 at time 0.

    Increments are drawn as fractional Gaussian noise by circulant embedding
    (Davies-Harte).  If the embedding has a negative eigenvalue the exact
    Toeplitz Cholesky factor is used instead; meta records which one ran.
    When the window straddles t=0 the path is re-based there, which keeps the
    increments exact and gives a two-sided sample.
    """
    if not (1.0 / 3.0 < hurst <= 0.5):
        raise ValueError(f"Hurst index must lie in (1/3, 1/2], got {hurst}")
    if dims < 1:
        raise ValueError("dims must be >= 1")
    n = grid.n_steps
    rng = np.random.default_rng(seed)
    eig = _circulant_eigs(hurst, n)
    method = "circulant"
    if eig.min() < -1e-10 * eig.max():
        method = "cholesky"
    if method == "circulant":
        lam = np.sqrt(np.clip(eig, 0.0, None) / (2 * n))
        z = rng.standard_normal((dims, 2 * n)) + 1j * rng.standard_normal((dims, 2 * n))
        fgn = np.fft.fft(lam * z, axis=1).real[:, :n]
    else:
        chol = cholesky(toeplitz(_fgn_autocov(hurst, n - 1)), lower=True)
        fgn = (chol @ rng.standard_normal((n, dims))).T
    incr = fgn.T * grid.dt ** hurst
    values = np.vstack([np.zeros((1, dims)), np.cumsum(incr, axis=0)])
    if grid.t0 < 0 <= grid.t_end:
        values = values - values[grid.index_of(0.0)]
    return PathSample(grid, values), method


def fbm_rough_path(hurst, dims, grid, seed):
    """fBm sample with its canonical piecewise-linear lift."""
    path, method = _fbm(hurst, dims, grid, seed)
    rp = lift_piecewise_linear(path)
    meta = {"provenance": "fbm", "method": method, "seed": seed}
    return RoughPathGrid(rp.path, rp.level2, hurst=hurst, meta=meta)


# ---------------------------------------------------------------- lift and Chen

def lift_piecewise_linear(path):
    dx = np.diff(path.values, axis=0)
    level2 = 0.5 * dx[:, :, None] * dx[:, None, :]
    return RoughPathGrid(path, level2, meta={"provenance": "custom"})


def chen_merge(inc1, X1, inc2, X2):
    """Combine two adjacent (increment, level2) pairs."""
    return inc1 + inc2, X1 + X2 + np.outer(inc1, inc2)


def chen_combine(rp, i, j):
    """(x_{i,j}, X_{i,j}) by the Chen recursion over nodes i..j.

    The recursion X_{i,k+1} = X_{i,k} + L_k + x_{i,k} (x) dx_k is unrolled into
    one sum, so the cost is a single pass over the steps.
    """
    n = rp.grid.n_steps
    if not (0 <= i <= j <= n):
        raise ValueError(f"need 0 <= i <= j <= {n}, got ({i}, {j})")
    m = rp.dims
    if i == j:
        return np.zeros(m), np.zeros((m, m))
    v = rp.values
    rel = v[i:j] - v[i]
    dx = np.diff(v[i:j + 1], axis=0)
    X = rp.level2[i:j].sum(axis=0) + np.einsum("ka,kb->ab", rel, dx)
    return v[j] - v[i], X


def coarsen(rp, factor):
    """Restrict a rough path to every `factor`-th node, level-2 via Chen."""
    n = rp.grid.n_steps
    if factor < 1 or n % factor:
        raise ValueError(f"factor {factor} does not divide n_steps={n}")
    grid = Grid(rp.grid.t0, rp.grid.dt * factor, n // factor)
    L = np.stack([chen_combine(rp, k, k + factor)[1] for k in range(0, n, factor)])
    return RoughPathGrid(PathSample(grid, rp.values[::factor]), L, hurst=rp.hurst,
                         meta={**rp.meta, "coarsened": factor})


# ---------------------------------------------------------------- p-variation

@njit(cache=True)
def _pair_cost(seg, A, l, k, p, q):
    m = seg.shape[1]
    sx = 0.0
    for a in range(m):
        d = seg[k, a] - seg[l, a]
        sx += d * d
    sX = 0.0
    for a in range(m):
        for b in range(m):
            X = A[k, a, b] - A[l, a, b] - seg[l, a] * (seg[k, b] - seg[l, b])
            sX += X * X
    return np.sqrt(sx) ** p, np.sqrt(sX) ** q


_BLOCK = 32


@njit(cache=True)
def _block_stats(seg, A, size):
    # per block of left nodes anchored at its first node l0:
    # r[b] = max |x_{l0,l}|, R[b] = max |X_{l0,l}| over the block
    n1 = seg.shape[0]
    m = seg.shape[1]
    nb = (n1 + size - 1) // size
    r = np.zeros(nb)
    R = np.zeros(nb)
    for b in range(nb):
        l0 = b * size
        for l in range(l0, min(l0 + size, n1)):
            s = 0.0
            s2 = 0.0
            for a in range(m):
                d = seg[l, a] - seg[l0, a]
                s += d * d
                for c in range(m):
                    e = A[l, a, c] - A[l0, a, c] - seg[l0, a] * (seg[l, c] - seg[l0, c])
                    s2 += e * e
            r[b] = max(r[b], np.sqrt(s))
            R[b] = max(R[b], np.sqrt(s2))
    return r, R


@njit(cache=True)
def _prefix_dp(seg, A, p, q, stop_at):
    # best_x[k], best_X[k]: optimal partition sums on [0, k].
    # Blocks of left nodes l are skipped when an upper bound cannot beat the
    # running maximum.  With l0 the block's first node, Chen gives
    #   |x_{l,k}| <= |x_{l0,k}| + r,  |X_{l,k}| <= |X_{l0,k}| + R + r |x_{l,k}|
    # and best_* is nondecreasing, so the block's last entry bounds it.
    # The safety factor keeps rounding from ever pruning a true maximiser.
    # Stops once the combined norm at k exceeds stop_at.
    n = seg.shape[0] - 1
    m = seg.shape[1]
    size = _BLOCK
    r, R = _block_stats(seg, A, size)
    safety = 1.0 + 1e-9
    best_x = np.zeros(n + 1)
    best_X = np.zeros(n + 1)
    for k in range(1, n + 1):
        bx = -1.0
        bX = -1.0
        nb = (k + size - 1) // size
        for b in range(nb - 1, -1, -1):
            lo = b * size
            hi = min(lo + size, k)
            sx = 0.0
            sA = 0.0
            for a in range(m):
                d = seg[k, a] - seg[lo, a]
                sx += d * d
                for c in range(m):
                    e = A[k, a, c] - A[lo, a, c] - seg[lo, a] * _d_at(seg, k, lo, c)
                    sA += e * e
            ux = np.sqrt(sx) + r[b]
            uX = np.sqrt(sA) + R[b] + r[b] * ux
            need_x = (best_x[hi - 1] + ux ** p) * safety >= bx
            need_X = (best_X[hi - 1] + uX ** q) * safety >= bX
            if not (need_x or need_X):
                continue
            for l in range(lo, hi):
                c1, c2 = _pair_cost(seg, A, l, k, p, q)
                vx = best_x[l] + c1
                vX = best_X[l] + c2
                if vx > bx:
                    bx = vx
                if vX > bX:
                    bX = vX
        best_x[k] = bx
        best_X[k] = bX
        if (bx + bX) ** (1.0 / p) > stop_at:
            return best_x[:k + 1], best_X[:k + 1]
    return best_x, best_X


@njit(cache=True)
def _d_at(seg, k, l, c):
    return seg[k, c] - seg[l, c]


@njit(cache=True)
def _prefix_dp_plain(seg, A, p, q):
    n = seg.shape[0] - 1
    best_x = np.zeros(n + 1)
    best_X = np.zeros(n + 1)
    for k in range(1, n + 1):
        bx = -1.0
        bX = -1.0
        for l in range(k):
            c1, c2 = _pair_cost(seg, A, l, k, p, q)
            if best_x[l] + c1 > bx:
                bx = best_x[l] + c1
            if best_X[l] + c2 > bX:
                bX = best_X[l] + c2
        best_x[k] = bx
        best_X[k] = bX
    return best_x, best_X


def _segment(rp, i, j):
    # values re-based at the left node and the Chen prefix table
    # A_k = sum_{l<k} (L_l + x_l (x) dx_l), so X_{l,k} = A_k - A_l - x_l (x) x_{l,k}
    seg = rp.values[i:j + 1] - rp.values[i]
    dx = np.diff(seg, axis=0)
    terms = rp.level2[i:j] + seg[:-1, :, None] * dx[:, None, :]
    A = np.concatenate([np.zeros((1,) + terms.shape[1:]), np.cumsum(terms, axis=0)])
    return np.ascontiguousarray(seg), np.ascontiguousarray(A)


def interval_costs(rp, i, j, params):
    """Matrices of |x_{l,k}|^p and |X_{l,k}|^q for nodes of [i, j] (small grids only)."""
    seg, A = _segment(rp, i, j)
    n = j - i
    cx = np.zeros((n + 1, n + 1))
    cX = np.zeros((n + 1, n + 1))
    for k in range(1, n + 1):
        for l in range(k):
            cx[l, k], cX[l, k] = _pair_cost(seg, A, l, k, params.p, params.q)
    return cx, cX


def p_var_prefix(rp, i, j, params, stop_at=np.inf):
    """Rough-path p-variation norms on [i, k] for every k = i..j.

    One O(n^2) pass; the result is shorter than j-i+1 only if stop_at was hit.
    """
    n = rp.grid.n_steps
    if not (0 <= i <= j <= n):
        raise ValueError(f"need 0 <= i <= j <= {n}, got ({i}, {j})")
    seg, A = _segment(rp, i, j)
    bx, bX = _prefix_dp(seg, A, float(params.p), float(params.q), float(stop_at))
    out = (bx + bX) ** (1.0 / params.p)
    if not np.all(np.isfinite(out)):
        raise OverflowError("p-variation overflowed; increments are too large")
    return out


def p_var_norm(rp, i, j, params):
    if j <= i:
        return 0.0
    return float(p_var_prefix(rp, i, j, params)[-1])


def holder_norm(path, i, j, alpha):
    """max over node pairs s<t in [i, j] of |x_{s,t}| / (t-s)^alpha."""
    if not (0 < alpha < 1):
        raise ValueError("alpha must lie in (0, 1)")
    if j <= i:
        return 0.0
    v = path.values
    dt = path.grid.dt
    best = 0.0
    for k in range(i + 1, j + 1):
        d = v[k] - v[i:k]
        s = d[:, 0] * d[:, 0]
        for a in range(1, d.shape[1]):
            s = s + d[:, a] * d[:, a]
        r = np.sqrt(s) / ((k - np.arange(i, k)) * dt) ** alpha
        best = max(best, float(r.max()))
    return best


# ---------------------------------------------------------------- dyadic, shift

def dyadic_approx(path, level):
    """Linear interpolation of `path` through its values at nodes k/2^level.

    The result lives on the source grid, so it can drive the same solver at
    the same step; its lift is the canonical one of the interpolant.
    """
    if isinstance(path, RoughPathGrid):
        path = path.path
    grid = path.grid
    h = 2.0 ** (-level)
    ratio = h / grid.dt
    r = int(round(ratio))
    if ratio < 1 - _ALIGN_TOL:
        raise ValueError(f"level {level} is finer than the source step {grid.dt}")
    if abs(ratio - r) > _ALIGN_TOL * ratio:
        raise ValueError(f"dyadic step {h} is not a multiple of dt={grid.dt}")
    off = grid.t0 / h
    if abs(off - round(off)) > _ALIGN_TOL * max(1.0, abs(off)) or grid.n_steps % r:
        raise ValueError("grid window does not start and end on dyadic nodes")
    v = path.values
    k = np.arange(grid.n_steps + 1)
    base = (k // r) * r
    nxt = np.minimum(base + r, grid.n_steps)
    frac = ((k % r) / r)[:, None]
    vals = v[base] + frac * (v[nxt] - v[base])
    rp = lift_piecewise_linear(PathSample(grid, vals))
    return RoughPathGrid(rp.path, rp.level2, meta={"provenance": "dyadic", "level": level})


def shift(rp, h):
    """Wiener shift by h: times move by -h and the value at the new t=0 is zero."""
    s = rp.grid.steps_for(h)
    anchor = rp.grid.index_of(h)
    if s == 0:
        return rp
    grid = Grid(rp.grid.t0 - s * rp.grid.dt, rp.grid.dt, rp.grid.n_steps)
    vals = rp.values - rp.values[anchor]
    return RoughPathGrid(PathSample(grid, vals), rp.level2, hurst=rp.hurst,
                         meta={**rp.meta, "shift": h})


# ---------------------------------------------------------------- I/O

def write_path_csv(rp, csv_path, seed=None):
    """Path CSV with columns t, x1..xm, X11..Xmm plus a sidecar JSON."""
    csv_path = Path(csv_path)
    m = rp.dims
    head = ["t"] + [f"x{a + 1}" for a in range(m)]
    head += [f"X{a + 1}{b + 1}" for a in range(m) for b in range(m)]
    L = np.full((rp.grid.n_steps + 1, m * m), np.nan)
    L[:-1] = rp.level2.reshape(rp.grid.n_steps, m * m)
    table = np.column_stack([rp.grid.times, rp.values, L])
    np.savetxt(csv_path, table, delimiter=",", header=",".join(head), comments="", fmt="%.17g")
    side = {"H": rp.hurst, "seed": seed, "dt": rp.grid.dt, "t0": rp.grid.t0,
            "n_steps": rp.grid.n_steps, "dims": m,
            "provenance": rp.meta.get("provenance", "custom"), "meta": _jsonable(rp.meta)}
    csv_path.with_suffix(".json").write_text(json.dumps(side, indent=2, sort_keys=True))
    return csv_path


def read_path_csv(csv_path):
    csv_path = Path(csv_path)
    side = json.loads(csv_path.with_suffix(".json").read_text())
    table = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
    m = side["dims"]
    grid = Grid(side["t0"], side["dt"], side["n_steps"])
    vals = table[:, 1:1 + m]
    L = table[:-1, 1 + m:].reshape(-1, m, m)
    return RoughPathGrid(PathSample(grid, vals), L, hurst=side["H"], meta=side.get("meta", {}))


def _jsonable(d):
    out = {}
    for k, v in d.items():
        if isinstance(v, (np.floating, np.integer)):
            v = v.item()
        out[k] = v
    return out


@dataclass(frozen=True)
class NoiseConfig:
    """fBm noise on the two-sided window [-t_back, t_fwd] with step dt."""
    hurst: float = 0.4
    dt: float = 1e-3
    t_back: float = 0.0
    t_fwd: float = 1.0

    def grid(self):
        n = int(round((self.t_back + self.t_fwd) / self.dt))
        return Grid(-self.t_back, self.dt, n)

    def sample(self, dims, seed):
        return fbm_rough_path(self.hurst, dims, self.grid(), seed)
