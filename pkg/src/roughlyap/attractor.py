"""Pullback attractors as point clouds and the convergence experiments."""
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import root
from scipy.spatial import cKDTree

from .lyapunov import absorbing_radius
from .models import attach_diffusion
from .rough_core import NormParams, coarsen, dyadic_approx, sample_seed, shift
from .solver import config_hash, ode_solve, rough_euler


@dataclass
class PointCloud:
    points: np.ndarray
    label: str = ""

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, float))

    def __len__(self):
        return len(self.points)


def hausdorff_semi(A, B):
    """max over a in A of the Euclidean distance from a to B."""
    a = A.points if isinstance(A, PointCloud) else np.atleast_2d(A)
    b = B.points if isinstance(B, PointCloud) else np.atleast_2d(B)
    if a.size == 0 or b.size == 0:
        raise ValueError("Hausdorff semi-distance needs non-empty clouds")
    dist, _ = cKDTree(b).query(a)
    return float(dist.max())


def _thin(points, tol):
    # one representative per tol-sized cell keeps oracle clouds compact
    keys = np.floor(points / tol).astype(np.int64)
    _, idx = np.unique(keys, axis=0, return_index=True)
    return points[np.sort(idx)]


def find_equilibria(drift, lower, upper, n_starts=7):
    axes = [np.linspace(a, b, n_starts) for a, b in zip(lower, upper)]
    starts = np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")], axis=-1)
    found = []
    for s in starts:
        r = root(lambda z: drift.f(np.asarray(z)), s, jac=lambda z: drift.Df(np.asarray(z)))
        if r.success and np.all(np.asarray(lower) - 1 <= r.x) and np.all(r.x <= np.asarray(upper) + 1):
            if not any(np.linalg.norm(r.x - e) < 1e-6 for e in found):
                found.append(r.x)
    return found


def deterministic_attractor_oracle(drift, lower, upper, n_grid=9, T=200.0, dt=0.01, clip=None,
                                   ring=256, ring_radius=1e-5, thin=2e-3):
    """RK4 reference cloud for the attractor of dy = f(y) dt.

    Runs from an n_grid^d grid of starts over [lower, upper], drops the
    transient t < clip (default T/2) and merges.  The unstable manifolds
    of equilibria (rings or pairs of offsets along unstable eigen-directions,
    run without clipping) and the equilibria themselves are added, since
    clipped runs alone miss the interior of the attractor.
    """
    clip = T / 2 if clip is None else clip
    axes = [np.linspace(a, b, n_grid) for a, b in zip(lower, upper)]
    starts = np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")], axis=-1)
    traj = ode_solve(drift, starts, (0.0, T), dt)
    keep = traj.grid.times >= clip - 1e-12
    pts = [traj.states[keep].reshape(-1, starts.shape[1])]
    for eq in find_equilibria(drift, lower, upper):
        pts.append(eq[None])
        lam, vec = np.linalg.eig(drift.Df(eq))
        seeds = []
        for k in np.flatnonzero(lam.real > 0):
            if abs(lam[k].imag) > 1e-12:
                th = np.linspace(0, 2 * np.pi, ring, endpoint=False)
                u, v = vec[:, k].real, vec[:, k].imag
                seeds.append(eq + ring_radius * (np.outer(np.cos(th), u) + np.outer(np.sin(th), v)))
            else:
                u = vec[:, k].real
                seeds.append(eq + ring_radius * np.stack([u, -u]))
        if seeds:
            man = ode_solve(drift, np.concatenate(seeds), (0.0, T), dt)
            pts.append(man.states.reshape(-1, starts.shape[1]))
    allp = np.concatenate(pts)
    allp = allp[np.all(np.isfinite(allp), axis=1)]
    return PointCloud(_thin(allp, thin), "A0-oracle")


@dataclass
class AttractorEstimate:
    cloud: PointCloud
    pullback_horizon: float
    convergence_history: list
    radii: list
    n_flagged: int
    config_hash: str
    clouds: dict = field(default_factory=dict, repr=False)


def ball_cloud(radius, dim, resolution):
    """Uniform grid over the ball's bounding box, exterior points rejected."""
    ax = np.linspace(-radius, radius, resolution)
    pts = np.stack([m.ravel() for m in np.meshgrid(*([ax] * dim), indexing="ij")], axis=-1)
    return pts[np.linalg.norm(pts, axis=1) <= radius * (1 + 1e-12)]


def ball_radius(lyap, cert, noise, C_g, horizon, params, C_p=4.0, K_trunc=10, radius_cap=None):
    """Radius of the absorbing ball at theta_{-horizon} omega, optionally capped.

    The noise series is only evaluated if the noise-free part of the radius is
    below the cap; alpha^-1 is increasing so the cap would win anyway.
    """
    if lyap is None or lyap.alpha_inv is None:
        if radius_cap is None:
            raise ValueError("need a Lyapunov function with alpha_inv or an explicit radius_cap")
        return float(radius_cap)
    base = float(lyap.alpha_inv(cert.C_lambda / cert.delta + 1e-3))
    if radius_cap is not None and base >= radius_cap:
        return float(radius_cap)
    if C_g == 0:
        return base if radius_cap is None else min(base, radius_cap)
    ball = absorbing_radius(shift(noise, -horizon), cert, lyap.L_V, C_p, C_g, K_trunc, params,
                            alpha_inv=lyap.alpha_inv)
    if radius_cap is not None:
        return min(ball.radius, radius_cap)
    if not np.isfinite(ball.radius):
        raise ValueError("absorbing radius is infinite; set radius_cap")
    return ball.radius


def pullback_attractor(system, lyap, cert, noise_config, horizons, init_resolution=32, seed=0,
                       noise=None, C_p=4.0, params=None, K_trunc=10, radius_cap=None, keep_clouds=False):
    """Image at time 0 of the filled absorbing ball started at time -n, per horizon n.

    Every horizon uses the same noise realization, shifted by -n.  The
    estimate is the cloud at the largest horizon; the history holds
    d_H(cloud_k | cloud_{k+1}) for successive horizons.
    """
    horizons = list(horizons)
    if any(b <= a for a, b in zip(horizons, horizons[1:])):
        raise ValueError("horizons must be increasing")
    m = system.noise_dim or 1
    if noise is None:
        noise = noise_config.sample(m, seed)
    if noise.grid.t0 > -horizons[-1] + 1e-12:
        raise ValueError("noise window does not reach back to the largest horizon")
    C_g = 0.0 if system.diffusion is None else system.diffusion.C_g
    params = params or NormParams.from_hurst(noise.hurst or 0.4)
    clouds, radii, flagged = {}, [], 0
    for n in horizons:
        r = ball_radius(lyap, cert, noise, C_g, n, params, C_p, K_trunc, radius_cap)
        radii.append(r)
        start = ball_cloud(r, system.dim, init_resolution)
        th = shift(noise, -n)
        i0, i1 = th.grid.index_of(0.0), th.grid.index_of(float(n))
        tr = rough_euler(system, th, start, (i0, i1), save_every=0)
        end = tr.states[-1]
        ok = np.all(np.isfinite(end), axis=1)
        flagged += int((~ok).sum())
        clouds[n] = PointCloud(end[ok], f"horizon={n}")
    hist = [hausdorff_semi(clouds[a], clouds[b]) for a, b in zip(horizons, horizons[1:])]
    cfg = {"system": system.name, "params": system.params, "C_g": C_g, "seed": seed,
           "horizons": horizons, "resolution": init_resolution, "noise_meta": noise.meta}
    return AttractorEstimate(clouds[horizons[-1]], horizons[-1], hist, radii, flagged,
                             config_hash(cfg), clouds if keep_clouds else {})


def _row(param, values, flagged):
    v = np.asarray(values, float)
    se = float(v.std(ddof=1) / np.sqrt(len(v))) if len(v) > 1 else 0.0
    return {"parameter": param, "mean_dH": float(v.mean()), "stderr": se,
            "n_flagged": int(flagged), "values": v.tolist()}


def semicontinuity_experiment(system, lyap, cert, noise_config, C_g_list, horizon, seeds,
                              oracle, kind="linear-bump", master_seed=0, **kw):
    """Mean d_H(A_{C_g}(omega) | A0) over seeds for each C_g (same omega across C_g)."""
    if any(b >= a for a, b in zip(C_g_list, C_g_list[1:])):
        raise ValueError("C_g_list must be strictly decreasing")
    m = system.noise_dim or system.dim
    vals = {c: [] for c in C_g_list}
    flags = {c: 0 for c in C_g_list}
    for s in range(seeds):
        noise = noise_config.sample(m, sample_seed(master_seed, s))
        for c in C_g_list:
            sysc = attach_diffusion(system, kind, c, noise_dim=m)
            est = pullback_attractor(sysc, lyap, cert, noise_config, [horizon], noise=noise, **kw)
            vals[c].append(hausdorff_semi(est.cloud, oracle))
            flags[c] += est.n_flagged
    return [_row(c, vals[c], flags[c]) for c in C_g_list]


def stepsize_experiment(system, noise_config, Delta_list, horizon, seeds, lyap=None, cert=None,
                        master_seed=0, **kw):
    """d_H(A^Delta | A^Delta_min) with one noise draw per seed on the finest grid."""
    if any(b >= a for a, b in zip(Delta_list, Delta_list[1:])):
        raise ValueError("Delta_list must be strictly decreasing")
    fine = Delta_list[-1]
    factors = []
    for D in Delta_list:
        r = D / fine
        if abs(r - round(r)) > 1e-9:
            raise ValueError(f"step {D} is not a multiple of the finest step {fine}")
        factors.append(int(round(r)))
    cfg = type(noise_config)(noise_config.hurst, fine, noise_config.t_back, noise_config.t_fwd)
    m = system.noise_dim or 1
    vals = {D: [] for D in Delta_list}
    flags = {D: 0 for D in Delta_list}
    for s in range(seeds):
        noise = cfg.sample(m, sample_seed(master_seed, s))
        ref = pullback_attractor(system, lyap, cert, cfg, [horizon], noise=noise, **kw)
        for D, fac in zip(Delta_list, factors):
            if fac == 1:
                vals[D].append(0.0)
                continue
            est = pullback_attractor(system, lyap, cert, cfg, [horizon], noise=coarsen(noise, fac), **kw)
            vals[D].append(hausdorff_semi(est.cloud, ref.cloud))
            flags[D] += est.n_flagged
    return [_row(D, vals[D], flags[D]) for D in Delta_list]


def dyadic_experiment(system, lyap, cert, noise_config, levels, horizon, seeds, master_seed=0, **kw):
    """d_H(A(pi^(n) omega) | A(omega)) per dyadic level n, same draw per seed."""
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise ValueError("levels must be increasing")
    m = system.noise_dim or 1
    vals = {n: [] for n in levels}
    flags = {n: 0 for n in levels}
    for s in range(seeds):
        noise = noise_config.sample(m, sample_seed(master_seed, s))
        ref = pullback_attractor(system, lyap, cert, noise_config, [horizon], noise=noise, **kw)
        for n in levels:
            approx = dyadic_approx(noise, n)
            approx = type(noise)(approx.path, approx.level2, hurst=noise.hurst, meta=approx.meta)
            est = pullback_attractor(system, lyap, cert, noise_config, [horizon], noise=approx, **kw)
            vals[n].append(hausdorff_semi(est.cloud, ref.cloud))
            flags[n] += est.n_flagged
    return [_row(n, vals[n], flags[n]) for n in levels]


def linear_decay_rate(drift, dim):
    """Largest real part of the drift Jacobian's spectrum at the origin."""
    return float(np.linalg.eigvals(drift.Df(np.zeros(dim))).real.max())


def fit_log_slope(times, states, floor=1e-300):
    """Least-squares slope of log|y_t| against t; None when y vanishes identically."""
    norms = np.linalg.norm(states, axis=-1)
    if np.all(norms == 0):
        return None
    ok = norms > floor
    return float(np.polyfit(times[ok], np.log(norms[ok]), 1)[0])


def local_stability_experiment(system, C_g_list, y0_radii, T, seeds, noise_config,
                               kind="vanishing-at-zero", in_domain=None, master_seed=0,
                               direction=None):
    """Per C_g, mean fitted slope of log|y_t| over seeds and initial radii.

    Runs that leave the domain (in_domain false at some step) are counted as
    escaped and left out of the fit; y0 = 0 is counted as degenerate.
    """
    d = system.dim
    m = system.noise_dim or d
    u = np.ones(d) / np.sqrt(d) if direction is None else np.asarray(direction, float)
    u = u / np.linalg.norm(u)
    rows = []
    for c in C_g_list:
        sysc = attach_diffusion(system, kind, c, noise_dim=m) if c > 0 else system
        slopes, escaped, degenerate = [], 0, 0
        for s in range(seeds):
            noise = noise_config.sample(m, sample_seed(master_seed, s))
            i0 = noise.grid.index_of(0.0)
            i1 = noise.grid.index_of(float(T))
            for r in y0_radii:
                tr = rough_euler(sysc, noise, r * u, (i0, i1))
                if in_domain is not None and not np.all(in_domain(tr.states)):
                    escaped += 1
                    continue
                slope = fit_log_slope(tr.grid.times - tr.grid.t0, tr.states)
                if slope is None:
                    degenerate += 1
                    continue
                slopes.append(slope)
        v = np.asarray(slopes)
        se = float(v.std(ddof=1) / np.sqrt(len(v))) if len(v) > 1 else 0.0
        rows.append({"parameter": c, "mean_slope": float(v.mean()) if len(v) else float("nan"),
                     "stderr": se, "n_escaped": escaped, "n_degenerate": degenerate,
                     "values": v.tolist()})
    return rows
