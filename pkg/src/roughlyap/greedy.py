"""Greedy stopping-time partitions of a rough path."""
import json
from dataclasses import dataclass, field

import numpy as np

from .rough_core import NormParams, p_var_norm, p_var_prefix


@dataclass(frozen=True)
class GreedyConfig:
    lam: float
    C_g: float
    params: NormParams
    C_p: float = 4.0

    def __post_init__(self):
        if not (0 < self.lam < 1):
            raise ValueError(f"lambda must lie in (0, 1), got {self.lam}")
        if self.C_p <= 0 or self.C_g < 0:
            raise ValueError("C_p must be positive and C_g non-negative")

    @property
    def threshold(self):
        if self.C_g == 0:
            return np.inf
        return self.lam / (16.0 * self.C_p * self.C_g)


@dataclass(frozen=True)
class GreedyPartition:
    threshold: float
    nodes: tuple
    norms: tuple
    degenerate: tuple = field(default=())

    @property
    def count(self):
        return len(self.nodes) - 1

    def to_json(self):
        thr = None if np.isinf(self.threshold) else self.threshold
        return json.dumps({"threshold": thr, "nodes": list(self.nodes),
                           "norms": list(self.norms), "degenerate_flags": list(self.degenerate)})


def greedy_times(rp, interval, cfg):
    """Greedy partition of [a, b]: each piece ends at the last node whose
    rough-path norm from the piece's start stays within the threshold.

    If even one grid step exceeds the threshold, that step is taken alone
    and flagged as degenerate.
    """
    a, b = interval
    if not (0 <= a < b <= rp.grid.n_steps):
        raise ValueError(f"bad interval {interval}")
    thr = cfg.threshold
    nodes, norms, flags = [a], [], []
    cur = a
    while cur < b:
        pre = p_var_prefix(rp, cur, b, cfg.params, stop_at=thr)
        ok = np.flatnonzero(pre <= thr)
        last = int(ok[-1])
        if last == 0:
            nxt, val, deg = cur + 1, float(pre[1]), True
        else:
            nxt, val, deg = cur + last, float(pre[last]), False
        nodes.append(nxt)
        norms.append(val)
        flags.append(deg)
        cur = nxt
    return GreedyPartition(thr, tuple(nodes), tuple(norms), tuple(flags))


def count_bound_report(partition, rp, interval, cfg):
    """Check N <= 1 + threshold^(-p) * |||x|||^p over the interval."""
    a, b = interval
    N = partition.count
    if np.isinf(partition.threshold):
        bound = 1.0
    else:
        total = p_var_norm(rp, a, b, cfg.params)
        bound = 1.0 + partition.threshold ** (-cfg.params.p) * total ** cfg.params.p
    return {"N": N, "bound": bound, "ok": N <= bound}
