"""Block coordinate descent over routing, leaf and relay blocks, plus baselines."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np

from .convex import (INFEASIBLE, apply_node_solution, build_leaf_subproblem,
                     build_relay_subproblem, build_routing_lp, relaxed_routing,
                     round_routing, solve)
from .costs import (DecisionVars, leaf_costs, relay_costs, relay_route_weight, route_times,
                    total_latency, upload_time)
from .network import NetworkInstance

log = logging.getLogger(__name__)

ROUTING, LEAF, RELAY = "routing", "leaf", "relay"


class BaselineKind(str, enum.Enum):
    SCHEME1 = "scheme1"      # leaf nodes only
    SCHEME2 = "scheme2"      # relay nodes only
    SCHEME3 = "scheme3"      # leaf and relay nodes, routing frozen
    GREEDY = "greedy"
    PROPOSED = "proposed"


class InfeasibleProblemError(RuntimeError):
    def __init__(self, block, constraint, rounds):
        self.block, self.constraint, self.rounds = block, constraint, list(rounds)
        super().__init__(f"{block} block infeasible ({constraint}) in rounds {self.rounds[:10]}")


@dataclass
class BCDState:
    iteration: int
    vars: DecisionVars
    history: list
    x: np.ndarray | None = None
    y: np.ndarray | None = None
    block_history: list = field(default_factory=list)
    reports: list = field(default_factory=list)
    converged: bool = False

    @property
    def latency(self) -> float:
        return self.history[-1]


def node_energy(inst: NetworkInstance, v: DecisionVars):
    return leaf_costs(inst, v)["E"], relay_costs(inst, v)["E"]


def feasible_scaling(inst: NetworkInstance, v: DecisionVars, iters: int = 80) -> DecisionVars:
    """Scale each node's (f, p) by the largest gamma in (0, 1] meeting its energy budget."""
    out = v.copy()
    for kind in ("leaf", "relay"):
        if kind == "relay" and inst.n_relays == 0:
            continue
        e_max = inst.leaf_energy_max if kind == "leaf" else inst.relay_energy_max
        pw, fq = ("leaf_power", "leaf_freq") if kind == "leaf" else ("relay_power", "relay_freq")
        p0, f0 = getattr(v, pw), getattr(v, fq)

        def energy(gamma):
            trial = out.copy()
            setattr(trial, pw, gamma * p0)
            setattr(trial, fq, gamma * f0)
            return node_energy(inst, trial)[0 if kind == "leaf" else 1]

        full = energy(np.ones_like(p0)) <= e_max
        if full.all():
            continue
        if np.any(energy(np.full_like(p0, 1e-9)) > e_max):
            bad = np.argwhere(energy(np.full_like(p0, 1e-9)) > e_max)
            raise InfeasibleProblemError("initialization", f"{kind} energy budget", bad[:, 0])
        lo, hi = np.zeros_like(p0), np.ones_like(p0)
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            ok = energy(mid) <= e_max
            lo, hi = np.where(ok, mid, lo), np.where(ok, hi, mid)
        gamma = np.where(full, 1.0, np.maximum(lo, 1e-9))
        setattr(out, pw, gamma * p0)
        setattr(out, fq, gamma * f0)
    return out


def initial_point(inst: NetworkInstance) -> DecisionVars:
    """Half of every capability, home routing, scaled down where budgets demand."""
    return feasible_scaling(inst, DecisionVars.full(inst, 0.5, 0.5))


def greedy(inst: NetworkInstance) -> DecisionVars:
    """Full frequency and power at every node, scaled down only to meet its budget."""
    return feasible_scaling(inst, DecisionVars.full(inst, 1.0, 1.0))


def _energy_ok(inst, v, slack=0.0):
    e_leaf, e_relay = node_energy(inst, v)
    ok = (e_leaf <= inst.leaf_energy_max + slack).all(axis=1)
    if inst.n_relays:
        ok &= (e_relay <= inst.relay_energy_max + slack).all(axis=1)
    return ok


def _merge(old: DecisionVars, new: DecisionVars, take: np.ndarray) -> DecisionVars:
    out = old.copy()
    for name in ("leaf_power", "leaf_freq", "relay_power", "relay_freq", "delta"):
        a, b = getattr(old, name), getattr(new, name)
        mask = take.reshape((-1,) + (1,) * (a.ndim - 1))
        setattr(out, name, np.where(mask, b, a))
    return out


def _safeguard(inst, old, new):
    """Keep per round whichever of old/new is feasible and not slower."""
    t_old = route_times(inst, old).max(axis=1)
    t_new = route_times(inst, new).max(axis=1)
    take = (t_new <= t_old) & _energy_ok(inst, new)
    return _merge(old, new, take), take


def snap_to_caps(inst, v, kinds=("leaf", "relay"), rel=1.0):
    """Move powers and frequencies within ``rel`` of their cap onto it where the budget holds.

    Interior-point iterates approach an inactive cap only to within the
    barrier gap. Latency is decreasing in both, so snapping never hurts.
    """
    out = v.copy()
    for kind in kinds:
        nodes = inst.leaves if kind == "leaf" else inst.relays
        if kind == "relay" and inst.n_relays == 0:
            continue
        pw, fq = f"{kind}_power", f"{kind}_freq"
        p, f = getattr(out, pw), getattr(out, fq)
        near_p = p >= nodes.max_power * (1 - rel)
        near_f = f >= nodes.max_freq * (1 - rel)
        for use_p, use_f in ((True, True), (True, False), (False, True)):
            trial = out.copy()
            tp = np.where(near_p & use_p, nodes.max_power, getattr(out, pw))
            tf = np.where(near_f & use_f, nodes.max_freq, getattr(out, fq))
            setattr(trial, pw, tp)
            setattr(trial, fq, tf)
            e = node_energy(inst, trial)[0 if kind == "leaf" else 1]
            budget = inst.leaf_energy_max if kind == "leaf" else inst.relay_energy_max
            ok = e <= budget
            setattr(out, pw, np.where(ok, tp, getattr(out, pw)))
            setattr(out, fq, np.where(ok, tf, getattr(out, fq)))
    return out


def _check(block, report):
    bad = [k for k, s in enumerate(report.status) if s == INFEASIBLE]
    if bad:
        raise InfeasibleProblemError(block, "surrogate constraints", bad)


def improve_routing(inst, v, delta):
    """Single-relay moves that strictly lower each round's slowest route."""
    leaf_t = leaf_costs(inst, v)["T"]
    weight = relay_route_weight(inst, v)
    delta = np.array(delta)
    for k in range(inst.n_rounds):
        d = delta[k]
        routes = leaf_t[k] + weight[k] @ d
        improved = True
        while improved:
            improved = False
            for n in np.flatnonzero(d.sum(axis=1) > 0):
                cur = int(np.argmax(d[n]))
                for r in np.flatnonzero(inst.available[k, n]):
                    if r == cur:
                        continue
                    trial = routes.copy()
                    trial[cur] -= weight[k, n]
                    trial[r] += weight[k, n]
                    if trial.max() < routes.max() * (1 - 1e-12):
                        d[n, cur], d[n, r], routes, cur = 0.0, 1.0, trial, r
                        improved = True
    return delta


def routing_step(inst, v, **solver_kw):
    K, N, R = inst.available.shape
    if N == 0:
        return v, None
    sub = build_routing_lp(inst, v)
    free = sub.expansion["free_rounds"]
    if not free.any():
        return v, None
    rep = solve(sub, running=free, **solver_kw)
    _check(ROUTING, rep)
    rounded = round_routing(relaxed_routing(sub, rep, (K, N, R)), inst.available)
    # candidates: the rounded relaxation, the home routing and the current one,
    # each polished by single-relay moves; the safeguard keeps the best per round
    out = v
    for cand in (rounded, inst.home_assignment(), v.delta):
        new = v.copy()
        new.delta = np.where(free[:, None, None], improve_routing(inst, v, cand), v.delta)
        out, _ = _safeguard(inst, out, new)
    return out, rep


def leaf_step(inst, v, sca_steps=1, **solver_kw):
    rep = None
    for _ in range(sca_steps):
        sub = build_leaf_subproblem(inst, v)
        rep = solve(sub, **solver_kw)
        _check(LEAF, rep)
        v, _ = _safeguard(inst, v, snap_to_caps(inst, apply_node_solution(sub, rep, v), ("leaf",)))
    return v, rep


def relay_step(inst, v, sca_steps=1, **solver_kw):
    if inst.n_relays == 0 or not (v.delta.sum(axis=2) > 0).any():
        return v, None
    rep = None
    for _ in range(sca_steps):
        sub = build_relay_subproblem(inst, v)
        rep = solve(sub, **solver_kw)
        _check(RELAY, rep)
        v, _ = _safeguard(inst, v, snap_to_caps(inst, apply_node_solution(sub, rep, v), ("relay",)))
    return v, rep


_STEPS = {ROUTING: routing_step, LEAF: leaf_step, RELAY: relay_step}


def slacks(inst, v):
    """Tight slacks: leaf upload time and relay (n'+2)-model upload time."""
    x = upload_time(inst.payload_bits, leaf_costs(inst, v)["rate"])
    routed = v.delta.sum(axis=2)
    y = routed * (inst.relay_successors + 2) * upload_time(inst.payload_bits, relay_costs(inst, v)["rate"])
    return x, np.where(routed > 0, y, 0.0)


def bcd_optimize(inst: NetworkInstance, init: DecisionVars | None = None, tol: float = 1e-4,
                 max_iter: int = 30, blocks=(ROUTING, LEAF, RELAY), sca_steps: int = 1,
                 solver_kw: dict | None = None) -> BCDState:
    """Alternate the block subproblems until the relative latency change is below ``tol``."""
    v = initial_point(inst) if init is None else init.copy()
    if not _energy_ok(inst, v, slack=1e-12).all():
        raise InfeasibleProblemError("initialization", "energy budget", np.flatnonzero(~_energy_ok(inst, v)))
    solver_kw = solver_kw or {}
    history = [total_latency(inst, v).total]
    state = BCDState(0, v, history)
    for i in range(1, max_iter + 1):
        per_block = {}
        for block in blocks:
            kw = dict(solver_kw)
            if block != ROUTING:
                kw["sca_steps"] = sca_steps
            v, rep = _STEPS[block](inst, v, **kw)
            per_block[block] = total_latency(inst, v).total
            state.reports.append((i, block, rep))
        state.block_history.append(per_block)
        history.append(total_latency(inst, v).total)
        state.iteration, state.vars = i, v
        change = abs(history[-2] - history[-1]) / max(history[-2], 1e-300)
        log.debug("bcd iteration %d latency %.9g change %.3g", i, history[-1], change)
        if change < tol:
            state.converged = True
            break
    state.x, state.y = slacks(inst, v)
    return state


def run_baseline(kind, inst: NetworkInstance, init: DecisionVars | None = None, **kw) -> BCDState:
    kind = BaselineKind(kind)
    if kind is BaselineKind.GREEDY:
        v = greedy(inst)
        state = BCDState(0, v, [total_latency(inst, v).total], converged=True)
        state.x, state.y = slacks(inst, v)
        return state
    blocks = {
        BaselineKind.SCHEME1: (LEAF,),
        BaselineKind.SCHEME2: (RELAY,),
        BaselineKind.SCHEME3: (LEAF, RELAY),
        BaselineKind.PROPOSED: (ROUTING, LEAF, RELAY),
    }[kind]
    return bcd_optimize(inst, init, blocks=blocks, **kw)
