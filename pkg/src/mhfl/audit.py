"""Independent feasibility checks of a decision against an instance.

Only the primitive cost formulas are reused; energies, route sums and the
routing rules are recomputed here from scratch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .costs import achievable_rate, train_energy, train_time, upload_time
from .network import NetworkInstance


@dataclass
class AuditReport:
    violations: list = field(default_factory=list)   # (constraint, round, node, amount)
    max_violation: float = 0.0
    latency: float = float("nan")

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, constraint, k, node, amount):
        self.violations.append((constraint, int(k), str(node), float(amount)))
        self.max_violation = max(self.max_violation, float(amount))


def _box(report, name, value, cap, tol):
    for k, i in np.argwhere(value < -tol * cap):
        report.add(f"{name} >= 0", k, i, -value[k, i] / cap[i])
    for k, i in np.argwhere(value > cap * (1 + tol)):
        report.add(f"{name} <= cap", k, i, value[k, i] / cap[i] - 1)


def audit(inst: NetworkInstance, v, latency: float | None = None, tol: float = 1e-8) -> AuditReport:
    """Check boxes, energy budgets, routing rules and (optionally) the reported latency."""
    rep = AuditReport()
    s, n0 = inst.payload_bits, inst.noise_psd
    lv, rv = inst.leaves, inst.relays
    K, N, R = inst.available.shape

    _box(rep, "leaf power", v.leaf_power, lv.max_power, tol)
    _box(rep, "leaf frequency", v.leaf_freq, lv.max_freq, tol)
    if N:
        _box(rep, "relay power", v.relay_power, rv.max_power, tol)
        _box(rep, "relay frequency", v.relay_freq, rv.max_freq, tol)

    # leaf budgets
    leaf_per_model = upload_time(s, achievable_rate(lv.bandwidth, v.leaf_power, inst.leaf_gain2, n0))
    e_leaf = (train_energy(lv.local_iters, lv.chip_coeff, lv.cycles, lv.samples, v.leaf_freq)
              + v.leaf_power * leaf_per_model)
    budget = np.broadcast_to(inst.leaf_energy_max, e_leaf.shape)
    for k, m in np.argwhere(~(e_leaf <= budget * (1 + tol))):
        rep.add("leaf energy", k, m, e_leaf[k, m] / budget[k, m] - 1)

    # routing: binary, inside the availability set, exactly one route when available
    d = np.asarray(v.delta, dtype=float)
    for k, n, r in np.argwhere(np.abs(d * (1 - d)) > tol):
        rep.add("routing binary", k, n, abs(d[k, n, r] * (1 - d[k, n, r])))
    for k, n, r in np.argwhere((d > tol) & ~inst.available):
        rep.add("routing availability", k, n, d[k, n, r])
    chosen = d.sum(axis=2)
    can = inst.available.any(axis=2)
    for k, n in np.argwhere(can & (np.abs(chosen - 1) > tol)):
        rep.add("routing assignment", k, n, abs(chosen[k, n] - 1))

    # relay budgets; a routed relay uploads its own model, forwards the leaf
    # model and forwards successors' models
    route_sum = np.zeros((K, R))
    if N:
        relay_per_model = upload_time(s, achievable_rate(rv.bandwidth, v.relay_power, inst.relay_gain2, n0))
        models = chosen * (2 + np.asarray(inst.relay_successors))[None, :]
        with np.errstate(invalid="ignore"):
            comm = np.where(models > 0, models * relay_per_model, 0.0)
        e_relay = train_energy(rv.local_iters, rv.chip_coeff, rv.cycles, rv.samples, v.relay_freq) \
            + np.where(comm > 0, v.relay_power * comm, 0.0)
        budget = inst.relay_energy_max
        for k, n in np.argwhere(~(e_relay <= budget * (1 + tol))):
            rep.add("relay energy", k, n, e_relay[k, n] / budget[k, n] - 1)
        relay_time = train_time(rv.local_iters, rv.cycles, rv.samples, v.relay_freq) \
            + (2 + np.asarray(inst.relay_successors))[None, :] * relay_per_model
        with np.errstate(invalid="ignore"):
            route_sum = np.where(d > 0, d * relay_time[:, :, None], 0.0).sum(axis=1)

    leaf_time = train_time(lv.local_iters, lv.cycles, lv.samples, v.leaf_freq) + leaf_per_model
    rep.latency = float((leaf_time + route_sum).max(axis=1).sum())
    if latency is not None and not abs(latency - rep.latency) <= tol * max(1.0, abs(rep.latency)):
        rep.add("reported latency", -1, "", abs(latency - rep.latency))
    return rep
