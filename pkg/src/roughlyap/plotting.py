"""PNG figures for CLI reports plus gnuplot script text for the CSV tables."""
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return str(path)


def plot_path(rp, path):
    fig, ax = plt.subplots(figsize=(6, 3.5))
    t = rp.grid.times
    for i in range(rp.dims):
        ax.plot(t, rp.values[:, i], lw=0.8, label=f"x{i + 1}")
    ax.set_xlabel("t")
    ax.legend(loc="best", fontsize=8)
    return _save(fig, path)


def plot_partition(rp, nodes, path):
    fig, ax = plt.subplots(figsize=(6, 3.5))
    t = rp.grid.times
    ax.plot(t, rp.values[:, 0], lw=0.8, color="k")
    for n in nodes:
        ax.axvline(t[n], color="tab:red", lw=0.5, alpha=0.6)
    ax.set_xlabel("t")
    ax.set_title(f"{len(nodes) - 1} pieces")
    return _save(fig, path)


def plot_trajectories(traj, path, max_paths=50):
    s = traj.states
    fig, ax = plt.subplots(figsize=(5, 5))
    if s.ndim == 2:
        s = s[:, None, :]
    for k in range(min(s.shape[1], max_paths)):
        ax.plot(s[:, k, 0], s[:, k, 1], lw=0.6)
    ax.set_xlabel("y1")
    ax.set_ylabel("y2")
    return _save(fig, path)


def plot_margins(box, margins, path):
    n = box.resolution
    M = np.asarray(margins).reshape([n] * box.dim)
    fig, ax = plt.subplots(figsize=(5, 4.2))
    im = ax.imshow(M.T, origin="lower", extent=[box.lower[0], box.upper[0], box.lower[1], box.upper[1]],
                   aspect="auto", cmap="viridis")
    if (M < 0).any():
        ax.contour(np.linspace(box.lower[0], box.upper[0], n), np.linspace(box.lower[1], box.upper[1], n),
                   M.T, levels=[0.0], colors="r")
    fig.colorbar(im, ax=ax, label="margin")
    return _save(fig, path)


def plot_clouds(clouds, path, oracle=None):
    fig, ax = plt.subplots(figsize=(5, 5))
    if oracle is not None:
        ax.scatter(oracle.points[:, 0], oracle.points[:, 1], s=0.2, c="0.7", label=oracle.label)
    for c in clouds:
        ax.scatter(c.points[:, 0], c.points[:, 1], s=1.5, label=c.label)
    ax.legend(loc="best", fontsize=8, markerscale=4)
    return _save(fig, path)


def plot_table(rows, path, xkey="parameter", ykey="mean_dH", errkey="stderr", logx=False, xlabel=None):
    x = [r[xkey] for r in rows]
    y = [r[ykey] for r in rows]
    e = [r.get(errkey, 0.0) for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.errorbar(x, y, yerr=e, marker="o", capsize=3)
    if logx:
        ax.set_xscale("log")
    ax.set_xlabel(xlabel or xkey)
    ax.set_ylabel(ykey)
    return _save(fig, path)


def plot_loss(history, path):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    h = np.maximum(np.asarray(history, float), 1e-300)
    ax.semilogy(h)
    ax.set_xlabel("iteration")
    ax.set_ylabel("empirical risk")
    return _save(fig, path)


def gnuplot_script(csv_name, xcol, ycol, title="", errcol=None, logx=False, png=None):
    """Companion gnuplot text for a comma-separated table with a header row."""
    lines = ["set datafile separator ','", "set key autotitle columnhead"]
    if png:
        lines += ["set terminal pngcairo size 800,560", f"set output '{png}'"]
    if logx:
        lines.append("set logscale x")
    if title:
        lines.append(f"set title '{title}'")
    if errcol:
        lines.append(f"plot '{csv_name}' using {xcol}:{ycol}:{errcol} with yerrorlines")
    else:
        lines.append(f"plot '{csv_name}' using {xcol}:{ycol} with linespoints")
    return "\n".join(lines) + "\n"
