"""Builders for the routing, leaf and relay block subproblems.

Each builder stacks the K rounds of an instance into one batch; rounds never
share variables. Inside a round the max over routes is carried by an
epigraph slack ``t``. Powers and frequencies are normalised by their maxima
and every time-valued column by the current round latency, so all columns
are O(1).
"""

from __future__ import annotations

import numpy as np

from ..costs import (DecisionVars, achievable_rate, leaf_costs, relay_costs,
                     relay_route_weight, route_times, upload_time)
from ..network import NetworkInstance
from .barrier import ConvexSubproblem, SolveReport

LN2 = np.log(2.0)


class ExpansionPointError(ValueError):
    pass


def _round_scale(inst, v):
    tau = route_times(inst, v).max(axis=1)
    if not np.all(np.isfinite(tau)) or np.any(tau <= 0):
        raise ExpansionPointError("current iterate has a non-finite round latency")
    return tau


def _check_expansion(power, rate, what):
    if np.any(power <= 0) or np.any(rate <= 0):
        raise ExpansionPointError(
            f"{what} expansion point has zero power or rate; restore feasibility "
            "(e.g. with initial_point) before building the subproblem")


def _node_block(kind, inst, v, nodes, power, freq, gain2, e_max, payload_mult, route_coef,
                route_rhs, active_nodes, tau):
    """Shared layout of the leaf and relay blocks.

    ``route_coef[k, r, i]`` is the weight of node ``i`` in route ``r`` and
    ``payload_mult[k, i]`` the number of models node ``i`` uploads.
    """
    K = inst.n_rounds
    cnt = len(nodes)
    R = route_coef.shape[1]
    n = 3 * cnt + 1
    m = R + 2 * cnt
    col_p, col_f, col_s = (np.arange(cnt) * 3 + j for j in range(3))
    t = n - 1
    s = inst.payload_bits
    b = nodes.bandwidth
    P, F = nodes.max_power, nodes.max_freq
    rate_i = achievable_rate(b, power, gain2, inst.noise_psd)
    active = np.broadcast_to(active_nodes, (K, cnt))
    safe_rate = np.where(active, rate_i, 1.0)
    safe_power = np.where(active, power, 1.0)
    _check_expansion(safe_power, safe_rate, kind)
    slack_i = np.where(active, payload_mult * s / safe_rate, 1.0)    # seconds
    z_i = safe_power * gain2 / (b * inst.noise_psd)
    train_coef = nodes.workload / F                                  # seconds at f = F

    quad = np.zeros((K, m, n))
    recip = np.zeros((K, m, n))
    lin = np.zeros((K, m, n))
    rhs = np.zeros((K, m))
    act = np.ones((K, m), dtype=bool)
    tags, row_names = [], []

    # epigraph rows: route time <= t
    for r in range(R):
        w = route_coef[:, r, :]
        recip[:, r, col_f] = w * train_coef / tau[:, None]
        lin[:, r, col_s] = w
        lin[:, r, t] = -1.0
        rhs[:, r] = -route_rhs[:, r] / tau
        tags.append("epigraph")
        row_names.append(f"route{r}")

    # energy rows with the bilinear surrogate of slack * power
    e_train_coef = nodes.local_iters * nodes.chip_coeff * nodes.cycles * nodes.samples * F ** 2
    finite = np.isfinite(e_max)
    e_safe = np.where(finite, e_max, 1.0)
    for i in range(cnt):
        j = R + i
        on = active[:, i] & finite[:, i]
        quad[:, j, col_f[i]] = np.where(on, e_train_coef[i] / e_safe[:, i], 0.0)
        quad[:, j, col_s[i]] = np.where(on, 0.5 * safe_power[:, i] / slack_i[:, i] * tau ** 2 / e_safe[:, i], 0.0)
        quad[:, j, col_p[i]] = np.where(on, 0.5 * slack_i[:, i] / safe_power[:, i] * P[i] ** 2 / e_safe[:, i], 0.0)
        rhs[:, j] = 1.0
        act[:, j] = finite[:, i] & active[:, i]
        tags.append("convex-quadratic")
        row_names.append(f"energy{i}")

    # rate rows with the logarithmic lower bound
    for i in range(cnt):
        j = R + cnt + i
        on = active[:, i]
        bound = np.log1p(z_i[:, i]) + z_i[:, i] / (z_i[:, i] + 1.0)
        recip[:, j, col_s[i]] = np.where(on, payload_mult[:, i] * s * LN2 / (b[i] * tau) / bound, 0.0)
        coef_p = z_i[:, i] ** 2 / (z_i[:, i] + 1.0) * b[i] * inst.noise_psd / (gain2[:, i] * P[i])
        recip[:, j, col_p[i]] = np.where(on, coef_p / bound, 0.0)
        rhs[:, j] = 1.0
        act[:, j] = on
        tags.append("log-rate-lower-bound")
        row_names.append(f"rate{i}")

    lo = np.zeros((K, n))
    hi = np.ones((K, n))
    hi[:, col_s] = np.where(active, np.inf, 1.0)
    lo[:, t], hi[:, t] = -np.inf, np.inf
    c = np.zeros((K, n))
    c[:, t] = 1.0
    x0 = np.zeros((K, n))
    x0[:, col_p] = np.where(active, power / P, 0.5)
    x0[:, col_f] = np.where(active, freq / F, 0.5)
    x0[:, col_s] = np.where(active, slack_i / tau[:, None], 0.5)
    x0[:, t] = 1.0
    scale = np.ones((K, n))
    scale[:, col_p] = P
    scale[:, col_f] = F
    scale[:, col_s] = tau[:, None]
    scale[:, t] = tau
    sym = "x" if kind == "leaf" else "y"
    names = []
    for i in range(cnt):
        names += [f"p{i}", f"f{i}", f"{sym}{i}"]
    names.append("t")
    return ConvexSubproblem(
        kind=kind, names=names, c=c, lo=lo, hi=hi, quad=quad, recip=recip, lin=lin, rhs=rhs,
        tags=tags, row_names=row_names, x0=x0, scale=scale, active=act, epigraph_col=t,
        objective_scale=tau,
        expansion={"power": np.array(power), "slack": slack_i, "active": np.array(active)})


def build_leaf_subproblem(inst: NetworkInstance, v: DecisionVars, energy_max=None) -> ConvexSubproblem:
    """Leaf block with relay decisions and routing held fixed."""
    M = inst.n_leaves
    relay = relay_costs(inst, v)
    weight = relay_route_weight(inst, v, relay)
    relay_part = (v.delta * weight[:, :, None]).sum(axis=1)          # (K, R)
    route_coef = np.broadcast_to(np.eye(M), (inst.n_rounds, M, M))
    e_max = inst.leaf_energy_max if energy_max is None else np.broadcast_to(energy_max, (inst.n_rounds, M))
    tau = _round_scale(inst, v)
    return _node_block("leaf", inst, v, inst.leaves, v.leaf_power, v.leaf_freq, inst.leaf_gain2,
                       np.asarray(e_max, dtype=float), np.ones((inst.n_rounds, M)), route_coef,
                       relay_part, np.ones((inst.n_rounds, M), dtype=bool), tau)


def build_relay_subproblem(inst: NetworkInstance, v: DecisionVars, energy_max=None) -> ConvexSubproblem:
    """Relay block with leaf decisions and (binary) routing held fixed."""
    N = inst.n_relays
    leaf = leaf_costs(inst, v)
    routed = v.delta.sum(axis=2) > 0
    route_coef = np.transpose(v.delta, (0, 2, 1))                    # (K, R, N)
    e_max = inst.relay_energy_max if energy_max is None else np.broadcast_to(energy_max, (inst.n_rounds, N))
    payload = np.broadcast_to(inst.relay_successors + 2.0, (inst.n_rounds, N))
    tau = _round_scale(inst, v)
    return _node_block("relay", inst, v, inst.relays, v.relay_power, v.relay_freq, inst.relay_gain2,
                       np.asarray(e_max, dtype=float), payload, route_coef, leaf["T"], routed, tau)


def apply_node_solution(sub: ConvexSubproblem, report: SolveReport, v: DecisionVars) -> DecisionVars:
    """New decisions from a solved leaf/relay block; inactive nodes keep their values."""
    out = v.copy()
    cnt = (sub.n_vars - 1) // 3
    p = report.x[:, 0:3 * cnt:3]
    f = report.x[:, 1:3 * cnt:3]
    keep = ~sub.expansion["active"]
    ok = np.array([s == "optimal" for s in report.status])[:, None]
    if sub.kind == "leaf":
        out.leaf_power = np.where(ok & ~keep, p, v.leaf_power)
        out.leaf_freq = np.where(ok & ~keep, f, v.leaf_freq)
    else:
        out.relay_power = np.where(ok & ~keep, p, v.relay_power)
        out.relay_freq = np.where(ok & ~keep, f, v.relay_freq)
    return out


def slack_values(sub: ConvexSubproblem, report: SolveReport) -> np.ndarray:
    cnt = (sub.n_vars - 1) // 3
    return np.where(sub.expansion["active"], report.x[:, 2:3 * cnt:3], 0.0)


def build_routing_lp(inst: NetworkInstance, v: DecisionVars) -> ConvexSubproblem:
    """Relaxed routing block: linear in delta, with assignment rows sum_r delta = 1.

    Relays with a single valid route and relays in outage are pinned by
    equality rows, so every round shares one layout. Rounds without any relay
    that can choose between routes are marked in ``expansion["free_rounds"]``.
    """
    K, N, R = inst.available.shape
    n = N * R + 1
    t = n - 1
    leaf = leaf_costs(inst, v)
    weight = relay_route_weight(inst, v)                               # (K, N)
    tau = _round_scale(inst, v)
    avail = inst.available
    count = avail.sum(axis=2)                                          # (K, N)
    free = count >= 2

    lin = np.zeros((K, R, n))
    for r in range(R):
        lin[:, r, np.arange(N) * R + r] = weight / tau[:, None]
        lin[:, r, t] = -1.0
    rhs = -leaf["T"] / tau[:, None]
    zeros = np.zeros_like(lin)

    lo = np.zeros((K, n))
    hi = np.ones((K, n))
    lo[:, t], hi[:, t] = -np.inf, np.inf
    x0 = np.zeros((K, n))
    pinned_val = np.zeros((K, N, R))
    forced = (count == 1)[:, :, None] & avail
    pinned_val[forced] = 1.0
    pinned = ~(free[:, :, None] & avail)                              # (K, N, R)
    flat_pinned = pinned.reshape(K, N * R)
    flat_val = pinned_val.reshape(K, N * R)
    lo[:, :N * R] = np.where(flat_pinned, flat_val - 1.0, 0.0)
    hi[:, :N * R] = np.where(flat_pinned, flat_val + 1.0, 1.0)
    uniform = np.where(avail, 1.0 / np.maximum(count, 1)[:, :, None], 0.0).reshape(K, N * R)
    x0[:, :N * R] = np.where(flat_pinned, flat_val, uniform)

    p_rows = N * R + N
    a_eq = np.zeros((K, p_rows, n))
    b_eq = np.zeros((K, p_rows))
    pad = np.ones((K, p_rows), dtype=bool)
    for k in range(K):
        row = 0
        for j in np.flatnonzero(flat_pinned[k]):
            a_eq[k, row, j] = 1.0
            b_eq[k, row] = flat_val[k, j]
            pad[k, row] = False
            row += 1
        for nn in np.flatnonzero(free[k]):
            a_eq[k, row, nn * R + np.flatnonzero(avail[k, nn])] = 1.0
            b_eq[k, row] = 1.0
            pad[k, row] = False
            row += 1
    c = np.zeros((K, n))
    c[:, t] = 1.0
    scale = np.ones((K, n))
    scale[:, t] = tau
    names = [f"delta[{nn},{r}]" for nn in range(N) for r in range(R)] + ["t"]
    return ConvexSubproblem(
        kind="routing", names=names, c=c, lo=lo, hi=hi, quad=zeros, recip=zeros.copy(), lin=lin,
        rhs=rhs, tags=["epigraph"] * R, row_names=[f"route{r}" for r in range(R)], x0=x0,
        scale=scale, a_eq=a_eq, b_eq=b_eq, eq_pad=pad, epigraph_col=t, objective_scale=tau,
        expansion={"free_rounds": free.any(axis=1), "free": free})


def relaxed_routing(sub: ConvexSubproblem, report: SolveReport, shape) -> np.ndarray:
    K, N, R = shape
    return report.x[:, :N * R].reshape(K, N, R)


def round_routing(relaxed: np.ndarray, available: np.ndarray) -> np.ndarray:
    """Binary routing: each routed relay takes its largest relaxed share (ties -> lowest id)."""
    scores = np.where(available, relaxed, -np.inf)
    best = np.argmax(scores, axis=2)
    out = np.zeros(relaxed.shape)
    K, N, _ = relaxed.shape
    kk, nn = np.meshgrid(np.arange(K), np.arange(N), indexing="ij")
    out[kk, nn, best] = 1.0
    out[~available.any(axis=2)] = 0.0
    return out
