"""Command-line runner: `roughlyap <subcommand> [--config F | --profile P] ...`.

Each run validates its JSON config, writes `resolved_config.json` into the
output directory, then writes CSV/JSON results.  `--figures` adds PNGs next
to the tables and `--gnuplot` adds a .gp script per table.

Exit codes: 0 pass, 1 verification failure, 2 computation failure, 3 config error.
"""
import argparse
import copy
import json
import os
import sys
from pathlib import Path

EXIT_OK, EXIT_FAIL, EXIT_COMPUTE, EXIT_CONFIG = 0, 1, 2, 3
ENV_PREFIX = "ROUGHLYAP_"
SUBCOMMANDS = ("fbm", "lift", "norms", "greedy", "simulate", "verify", "attractor", "train-net")


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------- schemas

_num = {"type": "number"}
_int = {"type": "integer"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_vec = {"type": "array", "items": _num, "minItems": 1}
_box = {"type": "object", "required": ["lower", "upper"], "additionalProperties": False,
        "properties": {"lower": _vec, "upper": _vec, "resolution": {"type": "integer", "minimum": 2}}}
_noise = {"type": "object", "additionalProperties": False,
          "properties": {"hurst": {"type": "number", "exclusiveMinimum": 1 / 3, "maximum": 0.5},
                         "dt": _pos, "t_back": {"type": "number", "minimum": 0},
                         "t_fwd": {"type": "number", "minimum": 0}}}
_diff = {"type": ["object", "null"], "additionalProperties": False,
         "properties": {"kind": {"enum": ["constant", "linear-bump", "vanishing-at-zero"]},
                        "C_g": {"type": "number", "minimum": 0}, "noise_dim": _int,
                        "channels": {"type": "array"}}}
_model = {"enum": ["fhn", "pendulum", "linear"]}
_path_src = {"hurst": {"type": "number"}, "dims": {"type": "integer", "minimum": 1}, "dt": _pos,
             "t0": _num, "n_steps": {"type": "integer", "minimum": 1}, "input": {"type": "string"}}

_BASE = {"seed": _int, "out": {"type": "string"}, "threads": {"type": "integer", "minimum": 1}}


def _schema(props, required=()):
    return {"type": "object", "additionalProperties": False, "required": list(required),
            "properties": {**_BASE, **props}}


SCHEMAS = {
    "fbm": _schema({**_path_src, "n_paths": {"type": "integer", "minimum": 1},
                    "summary": {"type": "boolean"}}),
    "lift": _schema(_path_src),
    "norms": _schema({**_path_src, "p": _num, "interval": {"type": "array", "items": _int},
                      "levels": {"type": "array", "items": _int}}),
    "greedy": _schema({**_path_src, "lam": _num, "C_g": _num, "C_p": _pos, "p": _num,
                       "interval": {"type": "array", "items": _int}}),
    "simulate": _schema({"model": _model, "params": {"type": "object"}, "diffusion": _diff,
                         "noise": _noise, "y0": {"type": "array"}, "interval": _vec,
                         "n_seeds": {"type": "integer", "minimum": 1}, "save_every": _int,
                         "check_decay": {"type": "boolean"}, "C_p": _pos}, ["model"]),
    "verify": _schema({"model": _model, "params": {"type": "object"}, "domain": _box,
                       "cert": {"type": "object"},
                       "sampler": {"type": "object", "additionalProperties": False,
                                   "properties": {"n_psi": _int, "n_eta": _int, "seed": _int}},
                       "exact_psi": {"type": "boolean"}, "net": {"type": "string"},
                       "net_eps": _pos, "pass_threshold": _num}, ["model"]),
    "attractor": _schema({"model": _model, "params": {"type": "object"}, "diffusion": _diff,
                          "noise": _noise,
                          "experiment": {"enum": ["pullback", "semicontinuity", "stepsize", "dyadic"]},
                          "horizons": _vec, "horizon": _pos, "seeds": {"type": "integer", "minimum": 1},
                          "C_g_list": _vec, "Delta_list": _vec, "levels": {"type": "array", "items": _int},
                          "init_resolution": {"type": "integer", "minimum": 2}, "radius_cap": _pos,
                          "oracle": {"type": "object"}}, ["model"]),
    "train-net": _schema({"model": _model, "params": {"type": "object"}, "domain": _box,
                          "plan": {"type": "object"}, "train": {"type": "object"}, "net": {"type": "object"},
                          "verify": {"type": "object"}}, ["model"]),
}


# ---------------------------------------------------------------- profiles

_FBM = {"hurst": 0.4, "dims": 2, "dt": 2 ** -10, "t0": 0.0, "n_steps": 1024}

PROFILES = {
    "fbm": {"default": {**_FBM, "n_paths": 1},
            "scaling": {**_FBM, "dims": 1, "n_paths": 10000, "summary": True}},
    "lift": {"default": dict(_FBM)},
    "norms": {"default": {**_FBM, "levels": [2, 4, 6, 8]}},
    "greedy": {"default": {**_FBM, "lam": 0.5, "C_g": 0.05, "C_p": 4.0}},
    "simulate": {"default": {"model": "fhn", "diffusion": {"kind": "linear-bump", "C_g": 0.05},
                             "noise": {"hurst": 0.4, "dt": 1e-3, "t_back": 0, "t_fwd": 10},
                             "y0": [[0.5, 0.5], [-2.0, 1.0], [2.5, -0.5]], "interval": [0, 10],
                             "n_seeds": 5, "save_every": 10, "check_decay": True}},
    "verify": {"default": {"model": "fhn", "domain": {"lower": [-3, -3], "upper": [3, 3], "resolution": 200},
                           "cert": {"kind": "fhn"}, "sampler": {"n_psi": 64, "n_eta": 64, "seed": 0}},
               "pendulum": {"model": "pendulum", "params": {"sigma": 1.0, "mu": 0.5},
                            "domain": {"lower": [-6, -6], "upper": [6, 6], "resolution": 200},
                            "cert": {"kind": "lipschitz2", "lam": 0.0, "C": 0.0}},
               "broken": {"model": "fhn", "domain": {"lower": [-3, -3], "upper": [3, 3], "resolution": 100},
                          "cert": {"kind": "fhn", "delta_scale": 1000.0},
                          "sampler": {"n_psi": 16, "n_eta": 16, "seed": 0}}},
    "attractor": {"default": {"model": "fhn", "experiment": "pullback", "horizons": [20, 40, 60, 80],
                              "noise": {"hurst": 0.4, "dt": 0.01, "t_back": 80, "t_fwd": 0},
                              "init_resolution": 96, "radius_cap": 3.0},
                  "semicontinuity": {"model": "fhn", "experiment": "semicontinuity", "horizon": 60,
                                     "C_g_list": [0.2, 0.1, 0.05, 0.01], "seeds": 20,
                                     "noise": {"hurst": 0.4, "dt": 0.01, "t_back": 60, "t_fwd": 0},
                                     "radius_cap": 3.0},
                  "stepsize": {"model": "fhn", "experiment": "stepsize", "horizon": 40,
                               "diffusion": {"kind": "linear-bump", "C_g": 0.05},
                               "Delta_list": [0.1, 0.025, 0.00625], "seeds": 10,
                               "noise": {"hurst": 0.4, "dt": 0.00625, "t_back": 40, "t_fwd": 0},
                               "radius_cap": 3.0},
                  "dyadic": {"model": "fhn", "experiment": "dyadic", "horizon": 20,
                             "diffusion": {"kind": "linear-bump", "C_g": 0.05},
                             "levels": [4, 6, 8], "seeds": 10,
                             "noise": {"hurst": 0.4, "dt": 2 ** -10, "t_back": 20, "t_fwd": 0},
                             "init_resolution": 24, "radius_cap": 3.0}},
    "train-net": {"default": {"model": "linear", "domain": {"lower": [-2, -2], "upper": [2, 2]},
                              "plan": {"eps0": 0.1, "rho": 0.05, "m_z": 2000, "m_psi": 8, "m_eta": 8},
                              "train": {"delta_bar": 0.5, "C_bar": 0.1, "lam": 0.05, "max_iter": 5000,
                                        "tol": 1e-6},
                              "net": {"width": 64, "s": 2, "alpha_bar": 0.1, "init": "random"},
                              "verify": {"resolution": 200, "eps": 0.01, "pass_threshold": 0.99}},
                  "perfect": {"model": "linear", "domain": {"lower": [-2, -2], "upper": [2, 2]},
                              "plan": {"eps0": 0.1, "rho": 0.05, "m_z": 500, "m_psi": 4, "m_eta": 4},
                              "train": {"delta_bar": 0.5, "C_bar": 0.1, "lam": 0.05, "max_iter": 0,
                                        "tol": 1e-6},
                              "net": {"width": 16, "s": 2, "alpha_bar": 0.1, "init": "zero"},
                              "verify": {"resolution": 50, "eps": 0.01, "pass_threshold": 0.99}}},
}


# ---------------------------------------------------------------- config plumbing

def _env_overrides(environ):
    out = {}
    for k, v in environ.items():
        if not k.startswith(ENV_PREFIX):
            continue
        key = k[len(ENV_PREFIX):].lower()
        try:
            out[key] = json.loads(v)
        except json.JSONDecodeError:
            out[key] = v
    return out


def resolve_config(sub, args, environ=None):
    """profile < config file < ROUGHLYAP_* env vars < command-line flags."""
    import jsonschema

    profiles = PROFILES[sub]
    name = args.profile or "default"
    if name not in profiles:
        raise ConfigError(f"unknown profile {name!r} for {sub}; known: {sorted(profiles)}")
    cfg = copy.deepcopy(profiles[name]) if not args.config else {}
    if args.config:
        try:
            cfg.update(json.loads(Path(args.config).read_text()))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {args.config}: {e}") from e
    cfg.update(_env_overrides(os.environ if environ is None else environ))
    for key in ("seed", "out", "threads"):
        val = getattr(args, key)
        if val is not None:
            cfg[key] = val
    cfg.setdefault("seed", 0)
    cfg.setdefault("out", "out")
    try:
        jsonschema.validate(cfg, SCHEMAS[sub])
    except jsonschema.ValidationError as e:
        raise ConfigError(f"config error at {list(e.absolute_path)}: {e.message}") from e
    return cfg


def _apply_threads(n):
    if not n:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS"):
        os.environ[var] = str(n)


class Output:
    def __init__(self, cfg, figures=False, gnuplot=False):
        self.dir = Path(cfg["out"])
        self.dir.mkdir(parents=True, exist_ok=True)
        self.figures = figures
        self.gnuplot = gnuplot
        self.written = []
        self.json("resolved_config.json", cfg)

    def path(self, name):
        p = self.dir / name
        self.written.append(str(p))
        return p

    def json(self, name, obj):
        self.path(name).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_default) + "\n")

    def csv(self, name, header, rows, gp=None):
        import numpy as np
        np.savetxt(self.path(name), np.asarray(rows, float), delimiter=",", header=",".join(header),
                   comments="", fmt="%.17g")
        if self.gnuplot and gp:
            from .plotting import gnuplot_script
            stem = Path(name).stem
            self.path(stem + ".gp").write_text(gnuplot_script(name, png=stem + "_gp.png", **gp))

    def figure(self, name, fn, *a, **kw):
        if self.figures:
            fn(*a, self.path(name), **kw)


def _default(o):
    import numpy as np
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    return str(o)


# ---------------------------------------------------------------- path sources

def _load_or_generate(cfg, lifted=True):
    from .rough_core import Grid, fbm_rough_path, generate_fbm, read_path_csv
    if "input" in cfg:
        try:
            return read_path_csv(cfg["input"])
        except (OSError, ValueError, KeyError) as e:
            raise ConfigError(f"cannot read path {cfg['input']}: {e}") from e
    try:
        grid = Grid(cfg.get("t0", 0.0), cfg.get("dt", 2 ** -10), cfg.get("n_steps", 1024))
        if lifted:
            return fbm_rough_path(cfg.get("hurst", 0.4), cfg.get("dims", 1), grid, cfg["seed"])
        return generate_fbm(cfg.get("hurst", 0.4), cfg.get("dims", 1), grid, cfg["seed"])
    except ValueError as e:
        raise ConfigError(str(e)) from e


def _params(cfg, rp):
    from .rough_core import NormParams
    try:
        if "p" in cfg:
            return NormParams(cfg["p"])
        return NormParams.from_hurst(rp.hurst or cfg.get("hurst", 0.4))
    except ValueError as e:
        raise ConfigError(str(e)) from e


def _system(cfg):
    from .models import build_system
    try:
        return build_system(cfg["model"], cfg.get("params"), cfg.get("diffusion"))
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad model config: {e}") from e


def _noise_config(cfg):
    from .rough_core import NoiseConfig
    try:
        return NoiseConfig(**cfg.get("noise", {}))
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad noise config: {e}") from e


# ---------------------------------------------------------------- commands

def cmd_fbm(cfg, out):
    import numpy as np
    from .plotting import plot_path, plot_table
    from .rough_core import Grid, generate_fbm, sample_seed, write_path_csv
    if not cfg.get("summary"):
        for k in range(cfg.get("n_paths", 1)):
            seed = cfg["seed"] if cfg.get("n_paths", 1) == 1 else sample_seed(cfg["seed"], k)
            rp = _load_or_generate({**cfg, "seed": seed})
            write_path_csv(rp, out.path(f"path_{k:04d}.csv"), seed=seed)
            out.path(f"path_{k:04d}.json")
            out.figure(f"path_{k:04d}.png", plot_path, rp)
        return EXIT_OK, {"n_paths": cfg.get("n_paths", 1)}
    # summary mode: second moments of x_{0,t} on dyadic lags and their log-log slope
    try:
        grid = Grid(cfg.get("t0", 0.0), cfg.get("dt", 2 ** -10), cfg.get("n_steps", 1024))
    except ValueError as e:
        raise ConfigError(str(e)) from e
    H = cfg.get("hurst", 0.4)
    lags = 2 ** np.arange(int(np.log2(grid.n_steps)) + 1)
    lags = lags[lags <= grid.n_steps]
    acc = np.zeros(len(lags))
    n = cfg.get("n_paths", 1)
    for k in range(n):
        v = generate_fbm(H, cfg.get("dims", 1), grid, sample_seed(cfg["seed"], k)).values
        acc += ((v[lags] - v[0]) ** 2).sum(axis=1)
    m2 = acc / (n * cfg.get("dims", 1))
    t = lags * grid.dt
    slope = float(np.polyfit(np.log(t), np.log(m2), 1)[0])
    rows = np.column_stack([t, m2, t ** (2 * H)])
    out.csv("fbm_scaling.csv", ["t", "second_moment", "exact"], rows,
            gp={"xcol": 1, "ycol": 2, "logx": True, "title": "second moment"})
    summary = {"hurst": H, "n_paths": n, "slope": slope, "target": 2 * H, "abs_error": abs(slope - 2 * H)}
    out.json("fbm_summary.json", summary)
    out.figure("fbm_scaling.png", plot_table,
               [{"t": a, "m2": b} for a, b in zip(t, m2)], xkey="t", ykey="m2", logx=True)
    return EXIT_OK, summary


def cmd_lift(cfg, out):
    from .plotting import plot_path
    from .rough_core import lift_piecewise_linear, write_path_csv
    src = _load_or_generate(cfg, lifted=False)
    path = src.path if hasattr(src, "path") else src
    rp = lift_piecewise_linear(path)
    write_path_csv(rp, out.path("lifted.csv"), seed=cfg["seed"])
    out.path("lifted.json")
    out.figure("lifted.png", plot_path, rp)
    return EXIT_OK, {"n_steps": rp.grid.n_steps, "dims": rp.dims}


def cmd_norms(cfg, out):
    from .plotting import plot_table
    from .rough_core import dyadic_approx, holder_norm, p_var_norm
    rp = _load_or_generate(cfg)
    params = _params(cfg, rp)
    i, j = cfg.get("interval", [0, rp.grid.n_steps])
    res = {"p": params.p, "q": params.q, "interval": [i, j],
           "p_var": p_var_norm(rp, i, j, params), "holder": holder_norm(rp.path, i, j, params.alpha)}
    rows = []
    for n in cfg.get("levels", []):
        try:
            d = dyadic_approx(rp, n)
        except ValueError as e:
            raise ConfigError(str(e)) from e
        rows.append([n, p_var_norm(d, i, j, params)])
    bound = 3 ** (1 - 1 / params.p) * res["p_var"]
    res["dyadic"] = [{"level": n, "p_var": v, "bound": bound, "ok": v <= bound} for n, v in rows]
    if rows:
        out.csv("dyadic_norms.csv", ["level", "p_var"], rows, gp={"xcol": 1, "ycol": 2, "title": "dyadic p-var"})
        out.figure("dyadic_norms.png", plot_table, [{"level": n, "p_var": v} for n, v in rows],
                   xkey="level", ykey="p_var")
    out.json("norms.json", res)
    ok = all(r["ok"] for r in res["dyadic"])
    return (EXIT_OK if ok else EXIT_FAIL), {"p_var": res["p_var"], "dyadic_ok": ok}


def cmd_greedy(cfg, out):
    from .greedy import GreedyConfig, count_bound_report, greedy_times
    from .plotting import plot_partition
    rp = _load_or_generate(cfg)
    params = _params(cfg, rp)
    try:
        gc = GreedyConfig(cfg.get("lam", 0.5), cfg.get("C_g", 0.05), params, cfg.get("C_p", 4.0))
    except ValueError as e:
        raise ConfigError(str(e)) from e
    interval = tuple(cfg.get("interval", [0, rp.grid.n_steps]))
    part = greedy_times(rp, interval, gc)
    rep = count_bound_report(part, rp, interval, gc)
    out.path("partition.json").write_text(part.to_json() + "\n")
    out.json("count_bound.json", rep)
    out.figure("partition.png", plot_partition, rp, part.nodes)
    return (EXIT_OK if rep["ok"] else EXIT_FAIL), rep


def cmd_simulate(cfg, out):
    import numpy as np
    from .plotting import plot_table, plot_trajectories
    from .rough_core import NormParams
    from .solver import ensemble, rough_euler
    system = _system(cfg)
    nc = _noise_config(cfg)
    lyap, cert = _reference_cert(system)
    y0 = np.atleast_2d(np.asarray(cfg.get("y0", [[0.5] * system.dim]), float))
    interval = tuple(cfg.get("interval", [0.0, nc.t_fwd]))
    check = None
    if cfg.get("check_decay") and lyap is not None:
        C_g = 0.0 if system.diffusion is None else system.diffusion.C_g
        check = {"cert": cert, "L_V": lyap.L_V, "C_p": cfg.get("C_p", 4.0), "C_g": C_g,
                 "params": NormParams.from_hurst(nc.hurst)}
    try:
        res = ensemble(system, nc, y0, interval, cfg.get("n_seeds", 1), cfg["seed"], lyap=lyap,
                       save_every=cfg.get("save_every", 10), check=check)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    summary = res.summary()
    out.json("ensemble.json", summary)
    if res.V_quantiles:
        cols = sorted(res.V_quantiles)
        rows = np.column_stack([res.times] + [res.V_quantiles[c] for c in cols])
        out.csv("V_quantiles.csv", ["t"] + cols, rows, gp={"xcol": 1, "ycol": 3, "title": "median V"})
        out.figure("V_quantiles.png", plot_table,
                   [{"t": t, "V": v} for t, v in zip(res.times, res.V_quantiles["p50"])],
                   xkey="t", ykey="V", errkey="none")
    if out.figures:
        noise = nc.sample(system.noise_dim or 1, cfg["seed"])
        i, j = noise.grid.index_of(interval[0]), noise.grid.index_of(interval[1])
        out.figure("trajectories.png", plot_trajectories, rough_euler(system, noise, y0, (i, j)))
    status = EXIT_OK if res.violations == 0 and res.blowups == 0 else EXIT_FAIL
    return status, {"violations": res.violations, "blowups": res.blowups}


def _reference_cert(system):
    """Lyapunov function and certificate that ship with each built-in model."""
    from .lyapunov import (StrongCert, derive_cert_lipschitz2, fhn_certificate, pendulum_K,
                           pendulum_lyapunov, sqrt_lyapunov)
    p = system.params
    if system.name == "fhn":
        return fhn_certificate(**p)
    if system.name == "pendulum":
        lyap = pendulum_lyapunov(p["sigma"], p["mu"])
        d1, d2 = lyap.classical
        return lyap, derive_cert_lipschitz2(d1, d2, lyap.L_V, system.drift.lipschitz,
                                            pendulum_K(p["sigma"], p["mu"]), 0.0, 0.05)
    if system.name == "linear":
        import numpy as np
        lyap = sqrt_lyapunov(p["a"], float(np.linalg.norm(p["b"])))
        d1, d2 = lyap.classical
        return lyap, StrongCert(0.0, d1, d2)
    return None, None


def _build_cert(cfg, system):
    from .lyapunov import (InfeasibleCertificate, StrongCert, derive_cert_lipschitz,
                           derive_cert_lipschitz2, fhn_certificate, pendulum_K, pendulum_lyapunov,
                           sqrt_lyapunov)
    spec = dict(cfg.get("cert", {}))
    kind = spec.get("kind", "fhn" if system.name == "fhn" else "lipschitz2")
    p = system.params
    try:
        if system.name == "fhn":
            lyap, cert = fhn_certificate(**p, D=spec.get("D"), C_lambda=spec.get("C_lambda"))
        elif system.name == "pendulum":
            lyap = pendulum_lyapunov(p["sigma"], p["mu"])
            d1, d2 = lyap.classical
            if kind != "lipschitz2":
                raise ConfigError("pendulum supports the lipschitz2 certificate only")
            cert = derive_cert_lipschitz2(d1, d2, lyap.L_V, system.drift.lipschitz,
                                          pendulum_K(p["sigma"], p["mu"]), spec.get("C", 0.0),
                                          spec.get("lam", 0.0))
        else:
            import numpy as np
            lyap = sqrt_lyapunov(p["a"], float(np.linalg.norm(p["b"])))
            d1, d2 = lyap.classical
            cert = derive_cert_lipschitz(d1, d2, lyap.L_V, system.drift.lipschitz, system.drift.f0_norm,
                                         1.0, spec.get("C", 0.0), spec.get("lam", 0.0))
    except InfeasibleCertificate as e:
        raise ConfigError(f"infeasible certificate: {e}") from e
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad certificate config: {e}") from e
    if "delta_scale" in spec:
        cert = StrongCert(cert.lam, cert.C_lambda, cert.delta * spec["delta_scale"], "checked-numerically")
    return lyap, cert


def cmd_verify(cfg, out):
    from .lyapunov import Box, PerturbationSampler, check_strong_condition
    from .plotting import plot_margins
    system = _system(cfg)
    try:
        d = cfg.get("domain", {"lower": [-3, -3], "upper": [3, 3]})
        box = Box(tuple(d["lower"]), tuple(d["upper"]), d.get("resolution", 200))
    except ValueError as e:
        raise ConfigError(str(e)) from e
    if "net" in cfg:
        return _verify_net(cfg, out, system, box)
    lyap, cert = _build_cert(cfg, system)
    sampler = PerturbationSampler(cert.lam, **cfg.get("sampler", {}))
    rep = check_strong_condition(lyap, system.drift, box, cert, sampler, cfg.get("exact_psi", False))
    out.json("verify_report.json", rep.to_dict(box, cert, sampler))
    out.figure("margins.png", plot_margins, box, rep.margins)
    summary = {"passed": rep.passed, "pass_rate": rep.pass_rate, "worst_margin": rep.worst_margin,
               "worst_point": rep.worst_point}
    return (EXIT_OK if rep.passed else EXIT_FAIL), summary


def _verify_net(cfg, out, system, box):
    from .lyapnet import NetParams, TrainConfig, verify_accuracy
    from .plotting import plot_margins
    try:
        ck = json.loads(Path(cfg["net"]).read_text())
        theta = NetParams.from_dict(ck)
        tc = TrainConfig(**ck["train_config"])
    except (OSError, KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"cannot load net checkpoint: {e}") from e
    rep = verify_accuracy(theta, system.drift, box, tc.lam, tc, cfg.get("net_eps", 0.01))
    out.json("verify_report.json", rep.to_dict())
    out.figure("margins.png", plot_margins, box, rep.margins)
    ok = rep.pass_rate >= cfg.get("pass_threshold", 0.99)
    return (EXIT_OK if ok else EXIT_FAIL), rep.to_dict()


def cmd_attractor(cfg, out):
    import numpy as np
    from .attractor import (deterministic_attractor_oracle, dyadic_experiment, hausdorff_semi,
                            pullback_attractor, semicontinuity_experiment, stepsize_experiment)
    from .plotting import plot_clouds, plot_table
    system = _system(cfg)
    nc = _noise_config(cfg)
    lyap, cert = _reference_cert(system)
    kw = {"radius_cap": cfg.get("radius_cap"), "init_resolution": cfg.get("init_resolution", 32)}
    exp = cfg.get("experiment", "pullback")
    seeds = cfg.get("seeds", 10)
    oc = {"lower": [-3, -3], "upper": [3, 3], "n_grid": 9, "T": 150.0, "dt": 0.01, **cfg.get("oracle", {})}

    def oracle():
        return deterministic_attractor_oracle(system.drift, oc["lower"], oc["upper"], oc["n_grid"],
                                              oc["T"], oc["dt"])

    header = ["parameter", "mean_dH", "stderr", "n_flagged"]
    try:
        if exp == "pullback":
            est = pullback_attractor(system, lyap, cert, nc, cfg.get("horizons", [20, 40, 60, 80]),
                                     seed=cfg["seed"], **kw)
            orc = oracle()
            dH = hausdorff_semi(est.cloud, orc)
            out.csv("cloud.csv", ["y1", "y2"][:system.dim] + [f"y{k}" for k in range(3, system.dim + 1)],
                    est.cloud.points)
            res = {"d_H_to_oracle": dH, "convergence_history": est.convergence_history,
                   "radii": est.radii, "n_flagged": est.n_flagged, "config_hash": est.config_hash}
            out.json("attractor.json", res)
            out.figure("cloud.png", plot_clouds, [est.cloud], oracle=orc)
            return EXIT_OK, res
        if exp == "semicontinuity":
            rows = semicontinuity_experiment(system, lyap, cert, nc, cfg.get("C_g_list", [0.2, 0.1, 0.05, 0.01]),
                                             cfg.get("horizon", 60), seeds, oracle(), master_seed=cfg["seed"], **kw)
            name, logx = "semicontinuity", True
        elif exp == "stepsize":
            rows = stepsize_experiment(system, nc, cfg.get("Delta_list", [0.1, 0.025, 0.00625]),
                                       cfg.get("horizon", 40), seeds, lyap, cert, master_seed=cfg["seed"], **kw)
            name, logx = "stepsize", True
        else:
            rows = dyadic_experiment(system, lyap, cert, nc, cfg.get("levels", [4, 6, 8]),
                                     cfg.get("horizon", 40), seeds, master_seed=cfg["seed"], **kw)
            name, logx = "dyadic", False
    except ValueError as e:
        raise ConfigError(str(e)) from e
    table = np.array([[r[h] for h in header] for r in rows], float)
    out.csv(f"{name}.csv", header, table, gp={"xcol": 1, "ycol": 2, "errcol": 3, "logx": logx, "title": name})
    out.json(f"{name}.json", {"rows": rows})
    out.figure(f"{name}.png", plot_table, rows, logx=logx)
    return EXIT_OK, {"means": [r["mean_dH"] for r in rows]}


def cmd_train_net(cfg, out):
    import numpy as np
    from .lyapnet import (NetParams, SamplePlan, TrainConfig, TrainingAborted, checkpoint_json, train,
                          verify_accuracy)
    from .lyapunov import Box
    from .plotting import plot_loss, plot_margins
    system = _system(cfg)
    d = cfg.get("domain", {"lower": [-2, -2], "upper": [2, 2]})
    nt, vt = cfg.get("net", {}), cfg.get("verify", {})
    try:
        plan = SamplePlan(tuple(d["lower"]), tuple(d["upper"]), seed=cfg["seed"], **cfg.get("plan", {}))
        tc = TrainConfig(**cfg.get("train", {"delta_bar": 0.5, "C_bar": 0.1, "lam": 0.05}))
        width, s, ab = nt.get("width", 64), nt.get("s", 2), nt.get("alpha_bar", 0.1)
        if nt.get("init", "random") == "zero":
            theta = NetParams(np.zeros((width, system.dim)), np.zeros(width), np.zeros(width), 0.0, s, ab)
        else:
            theta = NetParams.random(system.dim, width, cfg["seed"], nt.get("init_scale", 0.5), s, ab)
        box = Box(tuple(d["lower"]), tuple(d["upper"]), vt.get("resolution", 200))
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad train-net config: {e}") from e
    data = plan.draw(system.drift.f, tc.lam)
    try:
        theta, hist = train(theta, data, tc)
    except TrainingAborted as e:
        out.json("train_abort.json", {"error": str(e), "loss_history": e.history})
        return EXIT_COMPUTE, {"error": str(e), "final_loss": e.history[-1]}
    out.path("checkpoint.json").write_text(checkpoint_json(theta, tc, hist) + "\n")
    rep = verify_accuracy(theta, system.drift, box, tc.lam, tc, vt.get("eps", 0.01))
    out.json("net_report.json", {**rep.to_dict(), "final_loss": hist[-1], "iterations": len(hist) - 1})
    out.figure("loss.png", plot_loss, hist)
    out.figure("net_margins.png", plot_margins, box, rep.margins)
    ok = hist[-1] <= tc.tol and rep.pass_rate >= vt.get("pass_threshold", 0.99)
    return (EXIT_OK if ok else EXIT_FAIL), {"final_loss": hist[-1], "pass_rate": rep.pass_rate}


COMMANDS = {"fbm": cmd_fbm, "lift": cmd_lift, "norms": cmd_norms, "greedy": cmd_greedy,
            "simulate": cmd_simulate, "verify": cmd_verify, "attractor": cmd_attractor,
            "train-net": cmd_train_net}


def build_parser():
    ap = argparse.ArgumentParser(prog="roughlyap", description=__doc__.splitlines()[0])
    sp = ap.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sp.add_parser(name)
        p.add_argument("--config", help="JSON config file (replaces the profile)")
        p.add_argument("--profile", help=f"built-in config: {', '.join(sorted(PROFILES[name]))}")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--threads", type=int)
        p.add_argument("--figures", action="store_true", help="render PNG figures next to the tables")
        p.add_argument("--gnuplot", action="store_true", help="write a gnuplot script per table")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args.command, args)
        _apply_threads(cfg.get("threads"))
        out = Output(cfg, args.figures, args.gnuplot)
        code, summary = COMMANDS[args.command](cfg, out)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:  # noqa: BLE001 - any failure past validation is a computation failure
        print(f"computation failed: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_COMPUTE
    print(json.dumps({"command": args.command, "exit": code, **summary}, default=_default, sort_keys=True))
    return code


if __name__ == "__main__":
    sys.exit(main())
