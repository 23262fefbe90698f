"""Latency and energy of local training, uploading and relaying."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .network import NetworkInstance


class InfeasibleTimeError(ValueError):
    pass


def train_time(L, C, D, f):
    work = np.asarray(L, dtype=float) * C * D
    f = np.asarray(f, dtype=float)
    if np.any((f <= 0) & (work > 0)):
        raise InfeasibleTimeError("zero CPU frequency with a positive training workload")
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(work > 0, work / np.where(f > 0, f, 1.0), 0.0)


def train_energy(L, zeta, C, D, f):
    return np.asarray(L, dtype=float) * zeta * C * D * np.asarray(f, dtype=float) ** 2


def achievable_rate(b, p, g2, n0):
    """Shannon rate in bit/s of a link with power gain ``g2``."""
    b = np.asarray(b, dtype=float)
    return b * np.log2(1.0 + np.asarray(p, dtype=float) * g2 / (b * n0))


def upload_time(bits, rate):
    """``bits / rate``; a zero rate with a positive payload costs ``inf``."""
    bits = np.asarray(bits, dtype=float)
    rate = np.asarray(rate, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(rate > 0, bits / np.where(rate > 0, rate, 1.0), np.inf)
    return np.where(bits == 0, 0.0, t)


@dataclass
class DecisionVars:
    """Per-round decisions; arrays are shaped (K, M), (K, N) and (K, N, R)."""

    leaf_power: np.ndarray
    leaf_freq: np.ndarray
    relay_power: np.ndarray
    relay_freq: np.ndarray
    delta: np.ndarray

    def copy(self) -> "DecisionVars":
        return DecisionVars(*(np.array(a, dtype=float) for a in (
            self.leaf_power, self.leaf_freq, self.relay_power, self.relay_freq, self.delta)))

    @classmethod
    def full(cls, inst: NetworkInstance, power_frac=1.0, freq_frac=1.0, delta=None):
        K = inst.n_rounds

        def tile(a, frac):
            return np.tile(np.asarray(a, dtype=float) * frac, (K, 1))
        return cls(tile(inst.leaves.max_power, power_frac), tile(inst.leaves.max_freq, freq_frac),
                   tile(inst.relays.max_power, power_frac), tile(inst.relays.max_freq, freq_frac),
                   inst.home_assignment() if delta is None else np.array(delta, dtype=float))


def node_costs(kind, L, C, D, zeta, f, p, b, g2, n0, s, delta=1.0, successors=0):
    """Cost entries of one node (or arrays of nodes).

    A leaf trains and uploads its own model. A routed relay additionally
    forwards one leaf model and ``successors`` relay models; all its
    communication terms are scaled by ``delta``.
    """
    t_train = train_time(L, C, D, f)
    e_train = train_energy(L, zeta, C, D, f)
    rate = achievable_rate(b, p, g2, n0)
    per_model = upload_time(s, rate)
    if kind == "leaf":
        t_up = per_model
        t_tx = np.zeros_like(t_up)
    else:
        delta = np.asarray(delta, dtype=float)
        with np.errstate(invalid="ignore"):
            t_up = np.where(delta > 0, delta * per_model, 0.0)
            t_tx = np.where(delta > 0, delta * (1 + np.asarray(successors)) * per_model, 0.0)
    with np.errstate(invalid="ignore"):
        e_up = np.where(t_up > 0, t_up * p, 0.0)
        e_tx = np.where(t_tx > 0, t_tx * p, 0.0)
    return {
        "T_train": t_train, "T_up": t_up, "T_tx": t_tx,
        "E_train": e_train, "E_up": e_up, "E_tx": e_tx,
        "T": t_train + t_up + t_tx, "E": e_train + e_up + e_tx, "rate": rate,
    }


@dataclass
class CostBreakdown:
    leaf: dict
    relay: dict
    route_time: np.ndarray    # (K, R)
    round_time: np.ndarray    # (K,)
    total: float

    @property
    def total_energy(self) -> float:
        return float(np.sum(self.leaf["E"]) + np.sum(self.relay["E"]))

    def rows(self):
        """(round, route, node, term, value) tuples; route is -1 for node terms."""
        out = []
        K = len(self.round_time)
        terms = ("T_train", "T_up", "T_tx", "E_train", "E_up", "E_tx")
        for k in range(K):
            for prefix, table in (("leaf", self.leaf), ("relay", self.relay)):
                for i in range(table["T"].shape[1]):
                    for term in terms:
                        out.append((k, -1, f"{prefix}{i}", term, float(table[term][k, i])))
            for r in range(self.route_time.shape[1]):
                out.append((k, r, "", "T_route", float(self.route_time[k, r])))
            out.append((k, -1, "", "T_round", float(self.round_time[k])))
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("round", "route", "node", "term", "value"))
        for row in self.rows():
            w.writerow(row[:4] + (repr(row[4]),))
        return buf.getvalue()


def leaf_costs(inst: NetworkInstance, v: DecisionVars) -> dict:
    lv = inst.leaves
    return node_costs("leaf", lv.local_iters, lv.cycles, lv.samples, lv.chip_coeff,
                      v.leaf_freq, v.leaf_power, lv.bandwidth, inst.leaf_gain2,
                      inst.noise_psd, inst.payload_bits)


def relay_costs(inst: NetworkInstance, v: DecisionVars) -> dict:
    rv = inst.relays
    routed = v.delta.sum(axis=2)
    return node_costs("relay", rv.local_iters, rv.cycles, rv.samples, rv.chip_coeff,
                      v.relay_freq, v.relay_power, rv.bandwidth, inst.relay_gain2,
                      inst.noise_psd, inst.payload_bits, delta=routed,
                      successors=inst.relay_successors)


def relay_route_weight(inst: NetworkInstance, v: DecisionVars, relay: dict | None = None) -> np.ndarray:
    """(K, N) time a relay adds to a route it serves: training plus (n'+2) model uploads."""
    relay = relay_costs(inst, v) if relay is None else relay
    per_model = upload_time(inst.payload_bits, relay["rate"])
    return relay["T_train"] + (inst.relay_successors + 2) * per_model


def route_times(inst: NetworkInstance, v: DecisionVars, leaf=None, relay=None) -> np.ndarray:
    leaf = leaf_costs(inst, v) if leaf is None else leaf
    weight = relay_route_weight(inst, v, relay)
    with np.errstate(invalid="ignore"):
        contrib = np.where(v.delta > 0, v.delta * weight[:, :, None], 0.0)
    # leaf m originates route m
    return leaf["T"] + contrib.sum(axis=1)


def total_latency(inst: NetworkInstance, v: DecisionVars) -> CostBreakdown:
    leaf = leaf_costs(inst, v)
    relay = relay_costs(inst, v)
    routes = route_times(inst, v, leaf, relay)
    per_round = routes.max(axis=1)
    return CostBreakdown(leaf, relay, routes, per_round, float(per_round.sum()))
