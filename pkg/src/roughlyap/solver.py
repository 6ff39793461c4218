"""Rough Euler scheme, RK4 reference solver, ensembles and decay checks."""
import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .lyapunov import decay_envelope
from .rough_core import Grid, p_var_prefix, sample_seed


@dataclass
class Trajectory:
    grid: Grid
    states: np.ndarray          # (n+1, d) or (n+1, N, d)
    system: object = None
    noise: object = None
    # first step index producing a non-finite state, -1 if none (per trajectory for batches)
    blowup: object = -1


def _euler_steps(system, y, dX, L, dt, save_every=1):
    """Run the rough Euler recursion; dX is (n, ..., m) and L is (n, ..., m, m).

    y_{k+1} = y_k + f(y_k) dt + g(y_k) dx_k + sum_{j,c,l} d_l g_{ij} g_{lc} X^{cj}_k
    """
    f = system.drift.f
    diff = system.diffusion
    n = dX.shape[0]
    flat = y.ndim == 1
    yb = np.atleast_2d(y).astype(float)
    blow = np.full(yb.shape[0], -1)
    out = [yb.copy()] if save_every else []
    correct = diff is not None and diff.kind != "constant"
    for k in range(n):
        with np.errstate(all="ignore"):
            ynew = yb + f(yb) * dt
            if diff is not None:
                G = diff.g(yb)
                ynew = ynew + np.einsum("...im,...m->...i", G, dX[k])
                if correct:
                    ynew = ynew + np.einsum("...ijl,...lc,...cj->...i", diff.Dg(yb), G, L[k])
        bad = ~np.isfinite(ynew).all(axis=-1)
        if bad.any():
            fresh = bad & (blow < 0)
            blow[fresh] = k
        yb = ynew
        if save_every and (k + 1) % save_every == 0:
            out.append(yb.copy())
    states = np.stack(out) if save_every else yb[None]
    if flat:
        states = states[:, 0]
        blow = int(blow[0])
    return states, blow


def rough_euler(system, noise, y0, interval=None, save_every=1):
    """Integrate along `noise` between node indices interval=(i, j).

    y0 may be a single state (d,) or a cloud (N, d) sharing the noise.  A
    single trajectory that blows up is truncated after its last finite state.
    With save_every=0 only the final state is kept.
    """
    i, j = (0, noise.grid.n_steps) if interval is None else interval
    if not (0 <= i < j <= noise.grid.n_steps):
        raise ValueError(f"interval {interval} outside the noise grid")
    if system.diffusion is not None and system.diffusion.noise_dim != noise.dims:
        raise ValueError("noise dimension does not match the diffusion")
    dX = np.diff(noise.values[i:j + 1], axis=0)
    states, blow = _euler_steps(system, np.asarray(y0, float), dX, noise.level2[i:j],
                                noise.grid.dt, save_every)
    step = max(save_every, 1) * noise.grid.dt
    t0 = noise.grid.t0 + i * noise.grid.dt
    if np.ndim(y0) == 1 and blow >= 0 and save_every:
        states = states[:blow // save_every + 1]
    grid = Grid(t0, step if save_every else (j - i) * noise.grid.dt, max(len(states) - 1, 1))
    return Trajectory(grid, states, system, noise, blow)


def explicit_euler(drift, y0, dt, n_steps):
    """Plain explicit Euler y_{k+1} = y_k + f(y_k) dt (the zero-noise reference)."""
    y = np.asarray(y0, float)
    out = [y]
    for _ in range(n_steps):
        y = y + drift.f(y) * dt
        out.append(y)
    return np.stack(out)


def ode_solve(drift, y0, interval, dt, save_every=1):
    """Fixed-step RK4 on [t0, t1]; y0 may be a cloud (N, d)."""
    t0, t1 = interval
    n = int(round((t1 - t0) / dt))
    if n < 1 or not dt > 0:
        raise ValueError("need dt > 0 and t1 > t0")
    f = drift.f
    y = np.asarray(y0, float)
    out = [y] if save_every else []
    blow = -1
    for k in range(n):
        with np.errstate(all="ignore"):
            k1 = f(y)
            k2 = f(y + 0.5 * dt * k1)
            k3 = f(y + 0.5 * dt * k2)
            k4 = f(y + dt * k3)
            y = y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if blow < 0 and not np.all(np.isfinite(y)):
            blow = k
            if np.ndim(y0) == 1:
                break
        if save_every and (k + 1) % save_every == 0:
            out.append(y)
    states = np.stack(out) if save_every else y[None]
    step = dt * max(save_every, 1)
    return Trajectory(Grid(t0, step, max(len(states) - 1, 1)), states, None, None, blow)


def config_hash(obj):
    blob = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class EnsembleResult:
    times: np.ndarray
    V_quantiles: dict
    final_V: np.ndarray
    seeds: list
    blowups: int
    config_hash: str
    violations: int = 0
    flags: dict = field(default_factory=dict)

    def summary(self):
        return {"times": self.times.tolist(),
                "V_quantiles": {k: v.tolist() for k, v in self.V_quantiles.items()},
                "violations": self.violations, "flags": {"blowups": self.blowups, **self.flags},
                "seeds": self.seeds, "config_hash": self.config_hash}


def ensemble(system, noise_config, y0_set, interval, n_seeds, master_seed, lyap=None,
             save_every=10, check=None):
    """rough_euler for every (seed, y0); per-time quantiles of V(y_t).

    Noise for seed index s comes from sample_seed(master_seed, s).  If
    `check` is a dict of decay_bound arguments (cert, L_V, C_p, C_g, params)
    every run is also checked against the decay envelope.
    """
    y0_set = np.atleast_2d(np.asarray(y0_set, float))
    t0, t1 = interval
    seeds = [sample_seed(master_seed, s) for s in range(n_seeds)]
    Vs, blowups, violations = [], 0, 0
    times = None
    for seed in seeds:
        noise = noise_config.sample(system.noise_dim or 1, seed)
        i, j = noise.grid.index_of(t0), noise.grid.index_of(t1)
        traj = rough_euler(system, noise, y0_set, (i, j), save_every=save_every)
        blowups += int((np.asarray(traj.blowup) >= 0).sum())
        times = traj.grid.times
        if lyap is not None:
            Vs.append(lyap.V(traj.states))
        if check is not None:
            full = rough_euler(system, noise, y0_set, (i, j))
            violations += verify_decay_bound(full, lyap, noise=noise, interval=(i, j), **check)["violations"]
    cfg = {"system": system.name, "params": system.params, "noise": asdict(noise_config),
           "y0": y0_set.tolist(), "interval": list(interval), "n_seeds": n_seeds,
           "master_seed": master_seed,
           "C_g": None if system.diffusion is None else system.diffusion.C_g}
    quant, final = {}, np.empty(0)
    if Vs:
        allV = np.concatenate([v.reshape(v.shape[0], -1) for v in Vs], axis=1)
        quant = {f"p{int(q * 100):02d}": np.nanquantile(allV, q, axis=1) for q in (0.05, 0.5, 0.95)}
        final = np.stack([v[-1] for v in Vs])
    return EnsembleResult(times, quant, final, seeds, blowups, config_hash(cfg), violations)


def verify_decay_bound(traj, lyap, cert, noise, L_V, C_p, C_g, params, interval=None, rtol=1e-12):
    """Check V(y_t) <= decay envelope at every recorded grid time.

    traj must hold every step of `noise` over `interval` (node indices).  The
    p-variation over [t_i, t] comes from one prefix DP pass.  rtol absorbs
    rounding in the envelope's (V0 - C/delta) + C/delta at t=0.
    """
    i, j = (0, noise.grid.n_steps) if interval is None else interval
    xi = p_var_prefix(noise, i, j, params)
    states = traj.states
    n = min(len(states), len(xi))
    t = np.arange(n) * noise.grid.dt
    V = lyap.V(states[:n])
    V0 = V[0]
    shape = (n,) + (1,) * (V.ndim - 1)
    env = decay_envelope(V0, cert, t.reshape(shape), xi[:n].reshape(shape), L_V, C_p, C_g, params.p)
    excess = V - env
    tol = rtol * np.maximum(np.abs(env), 1.0)
    viol = int(np.sum(excess > tol))
    return {"violations": viol, "max_excess": float(np.nanmax(excess)), "n_checked": int(V.size)}
