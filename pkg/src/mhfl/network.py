"""Multi-hop network model: topology, channels, availability and energy harvesting.

Every random quantity is drawn from its own seeded stream keyed by
``(seed, stream, node index)``, so instances that differ only in the number of
relays or in a deterministic parameter (maximum frequency, power budget) share
all draws for the nodes they have in common.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .units import dbm_per_hz_to_watt_per_hz, dbm_to_watt

SCHEMA = "mhfl.network-instance/1"
POWER_RANGE_DBM = (5.0, 25.0)

# stream identifiers for per-node generators
_LEAF_PARAMS, _RELAY_PARAMS = 1, 2
_LEAF_FADING, _RELAY_FADING, _EH_FADING = 3, 4, 5
_AVAILABILITY, _EH_PARAMS = 6, 7


def path_loss(ref_attenuation, distance, ref_distance, exponent):
    """Large-scale fading coefficient ``A * (d / d0) ** -alpha``."""
    ref_attenuation = np.asarray(ref_attenuation, dtype=float)
    distance = np.asarray(distance, dtype=float)
    ref_distance = np.asarray(ref_distance, dtype=float)
    exponent = np.asarray(exponent, dtype=float)
    if np.any(distance <= 0) or np.any(ref_distance <= 0):
        raise ValueError("path_loss: distances must be positive")
    if np.any(ref_attenuation <= 0) or np.any(exponent <= 0):
        raise ValueError("path_loss: attenuation and exponent must be positive")
    return ref_attenuation * (distance / ref_distance) ** (-exponent)


@dataclass(frozen=True)
class NodeParams:
    """Capabilities of one node. ``self_energy`` is the whole budget for a leaf."""

    id: int
    kind: str
    cycles_per_sample: float
    data_samples: float
    local_iters: float
    chip_coeff: float
    max_power: float
    max_freq: float
    bandwidth: float
    self_energy: float
    ps_ratio: float = 1.0
    conv_eff: float = 1.0

    def __post_init__(self):
        if self.kind not in ("leaf", "relay"):
            raise ValueError(f"unknown node kind {self.kind!r}")
        for name in ("cycles_per_sample", "data_samples", "local_iters",
                     "max_power", "max_freq", "bandwidth"):
            if not getattr(self, name) > 0:
                raise ValueError(f"NodeParams.{name} must be positive")
        if not (0 < self.ps_ratio <= 1 and 0 < self.conv_eff <= 1):
            raise ValueError("ps_ratio and conv_eff must lie in (0, 1]")


@dataclass(frozen=True)
class EHParams:
    """Energy-harvesting chain of one route in one round, ordered from the source."""

    source_energy: float
    conv_eff: np.ndarray
    ps_ratio: np.ndarray
    gain2: np.ndarray

    @property
    def hops(self) -> int:
        return len(self.gain2)

    @property
    def lam(self) -> np.ndarray:
        return np.cumprod(np.asarray(self.conv_eff) * np.asarray(self.gain2))


def harvested_energy(eh: EHParams, n: int) -> float:
    """Energy harvested at hop ``n`` (1-based): ``E0 * lambda_n * prod(rho_j, j <= n)``."""
    if not 1 <= n <= eh.hops:
        raise IndexError(f"hop index {n} outside chain of length {eh.hops}")
    lam = eh.lam[n - 1]
    return float(eh.source_energy * lam * np.prod(np.asarray(eh.ps_ratio)[:n]))


@dataclass(frozen=True)
class ChannelRealization:
    large_scale: float
    small_scale: float
    ref_attenuation: float
    distance: float
    ref_distance: float
    exponent: float

    @property
    def gain(self) -> float:
        return float(np.sqrt(self.large_scale) * self.small_scale)

    @property
    def gain2(self) -> float:
        return self.gain ** 2


@dataclass(frozen=True)
class RouteTopology:
    route: int
    leaf: int
    relays: tuple[int, ...]        # ordered from the server outward
    successors: tuple[int, ...]    # n' for each relay in ``relays``


@dataclass(frozen=True)
class InstanceConfig:
    """Shape and parameter ranges for :func:`generate_instance`."""

    n_routes: int = 3
    n_relays: int = 6
    n_rounds: int = 84
    cycles_range: tuple[float, float] = (1e4, 3e4)
    samples_range: tuple[int, int] = (50, 200)
    leaf_local_iters: int = 5
    relay_local_iters: int = 15
    chip_coeff: float = 1e-28
    leaf_max_freq: float = 2e9
    relay_max_freq: float = 2e9
    leaf_max_power_dbm: float = 25.0
    relay_max_power_dbm: float = 25.0
    leaf_energy_range: tuple[float, float] = (0.01, 0.03)
    relay_energy_range: tuple[float, float] = (0.02, 0.05)
    system_bandwidth: float = 20e6
    noise_dbm_hz: float = -174.0
    payload_bits: float = 5e5
    ref_attenuation: float = 1e-3
    ref_distance: float = 1.0
    pathloss_exp: float = 3.0
    distance_range: tuple[float, float] = (20.0, 80.0)
    rayleigh_scale: float = float(np.sqrt(0.5))
    fading_floor_db: float = -30.0     # deep fades on upload links are clipped to this power
    move_prob: float = 0.2
    outage_prob: float | tuple[float, ...] = 0.05
    eh_enabled: bool = True
    source_energy: float = 10.0
    conv_eff_range: tuple[float, float] = (0.5, 0.9)
    ps_ratio: float = 0.5
    eh_ref_attenuation: float = 1.0
    eh_pathloss_exp: float = 2.0
    eh_distance_range: tuple[float, float] = (1.0, 3.0)

    def validate(self) -> None:
        if self.n_routes < 1 or self.n_relays < 0 or self.n_rounds < 1:
            raise ValueError("need n_routes >= 1, n_relays >= 0, n_rounds >= 1")
        positive = ("chip_coeff", "leaf_max_freq", "relay_max_freq", "system_bandwidth",
                    "payload_bits", "ref_attenuation", "ref_distance", "pathloss_exp",
                    "rayleigh_scale", "source_energy", "eh_ref_attenuation",
                    "eh_pathloss_exp", "leaf_local_iters", "relay_local_iters")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)!r}")
        ranges = ("cycles_range", "samples_range", "leaf_energy_range", "relay_energy_range",
                  "distance_range", "conv_eff_range", "eh_distance_range")
        for name in ranges:
            lo, hi = getattr(self, name)
            if not (0 < lo <= hi):
                raise ValueError(f"{name} must satisfy 0 < low <= high, got {(lo, hi)!r}")
        lo, hi = POWER_RANGE_DBM
        for name in ("leaf_max_power_dbm", "relay_max_power_dbm"):
            if not lo <= getattr(self, name) <= hi:
                raise ValueError(f"{name} must lie in [{lo:g}, {hi:g}] dBm, got {getattr(self, name)!r}")
        if self.conv_eff_range[1] > 1:
            raise ValueError("conv_eff_range must lie in (0, 1]")
        if not 0 < self.ps_ratio <= 1:
            raise ValueError("ps_ratio must lie in (0, 1]")
        if not 0 <= self.move_prob <= 1:
            raise ValueError("move_prob must lie in [0, 1]")
        outage = np.atleast_1d(np.asarray(self.outage_prob, dtype=float))
        if outage.size not in (1, self.n_relays) and self.n_relays > 0:
            raise ValueError("outage_prob must be a scalar or one value per relay")
        if np.any(outage < 0) or np.any(outage > 1):
            raise ValueError("outage_prob must lie in [0, 1]")


def _frozen(a) -> np.ndarray:
    a = np.array(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class NodeArrays:
    """Vectorized node parameters for one node kind."""

    cycles: np.ndarray
    samples: np.ndarray
    local_iters: np.ndarray
    chip_coeff: np.ndarray
    max_power: np.ndarray
    max_freq: np.ndarray
    bandwidth: np.ndarray
    self_energy: np.ndarray
    distance: np.ndarray
    ps_ratio: np.ndarray
    conv_eff: np.ndarray

    def __post_init__(self):
        for f in dataclasses.fields(self):
            object.__setattr__(self, f.name, _frozen(np.asarray(getattr(self, f.name), dtype=float)))

    def __len__(self):
        return len(self.cycles)

    @property
    def workload(self) -> np.ndarray:
        """Cycles per round, ``L * C * D``."""
        return self.local_iters * self.cycles * self.samples

    def replace(self, **kw) -> "NodeArrays":
        return dataclasses.replace(self, **kw)


@dataclass(frozen=True)
class NetworkInstance:
    seed: int
    config: InstanceConfig
    leaves: NodeArrays
    relays: NodeArrays
    relay_route: np.ndarray        # (N,) home route
    relay_position: np.ndarray     # (N,) 1 = adjacent to the server
    relay_successors: np.ndarray   # (N,) n'
    leaf_fading: np.ndarray        # (K, M) Rayleigh magnitudes
    relay_fading: np.ndarray       # (K, N)
    eh_fading: np.ndarray          # (K, N)
    available: np.ndarray          # (K, N, R) bool
    noise_psd: float               # W/Hz
    payload_bits: float
    eh_enabled: bool = True
    source_energy: float = 10.0
    eh_distance: np.ndarray = field(default_factory=lambda: _frozen(np.zeros(0)))

    def __post_init__(self):
        for name in ("relay_route", "relay_position", "relay_successors"):
            object.__setattr__(self, name, _frozen(np.asarray(getattr(self, name), dtype=int)))
        for name in ("leaf_fading", "relay_fading", "eh_fading", "eh_distance"):
            object.__setattr__(self, name, _frozen(np.asarray(getattr(self, name), dtype=float)))
        object.__setattr__(self, "available", _frozen(np.asarray(self.available, dtype=bool)))

    # shape -----------------------------------------------------------------
    @property
    def n_routes(self) -> int:
        return self.available.shape[2] if self.available.size else len(self.leaves)

    @property
    def n_leaves(self) -> int:
        return len(self.leaves)

    @property
    def n_relays(self) -> int:
        return len(self.relays)

    @property
    def n_rounds(self) -> int:
        return self.leaf_fading.shape[0]

    # channels --------------------------------------------------------------
    def _large_scale(self, distance):
        c = self.config
        return path_loss(c.ref_attenuation, distance, c.ref_distance, c.pathloss_exp)

    @property
    def leaf_gain2(self) -> np.ndarray:
        """(K, M) channel power gains used in the rate expression."""
        return self._large_scale(self.leaves.distance)[None, :] * self.leaf_fading ** 2

    @property
    def relay_gain2(self) -> np.ndarray:
        if not self.n_relays:
            return np.zeros((self.n_rounds, 0))
        return self._large_scale(self.relays.distance)[None, :] * self.relay_fading ** 2

    @property
    def eh_gain2(self) -> np.ndarray:
        if not self.n_relays:
            return np.zeros((self.n_rounds, 0))
        c = self.config
        xi = path_loss(c.eh_ref_attenuation, self.eh_distance, c.ref_distance, c.eh_pathloss_exp)
        return xi[None, :] * self.eh_fading ** 2

    def channel(self, kind: str, node: int, k: int) -> ChannelRealization:
        c = self.config
        if kind == "leaf":
            d, mag = self.leaves.distance[node], self.leaf_fading[k, node]
        else:
            d, mag = self.relays.distance[node], self.relay_fading[k, node]
        xi = float(self._large_scale(d))
        return ChannelRealization(xi, float(mag), c.ref_attenuation, float(d),
                                  c.ref_distance, c.pathloss_exp)

    # topology ----------------------------------------------------------------
    def route(self, r: int) -> RouteTopology:
        members = np.flatnonzero(self.relay_route == r)
        members = members[np.argsort(self.relay_position[members], kind="stable")]
        return RouteTopology(r, r, tuple(int(n) for n in members),
                             tuple(int(self.relay_successors[n]) for n in members))

    def node(self, kind: str, i: int) -> NodeParams:
        arr = self.leaves if kind == "leaf" else self.relays
        return NodeParams(
            id=i, kind=kind, cycles_per_sample=float(arr.cycles[i]),
            data_samples=float(arr.samples[i]), local_iters=float(arr.local_iters[i]),
            chip_coeff=float(arr.chip_coeff[i]), max_power=float(arr.max_power[i]),
            max_freq=float(arr.max_freq[i]), bandwidth=float(arr.bandwidth[i]),
            self_energy=float(arr.self_energy[i]), ps_ratio=float(arr.ps_ratio[i]),
            conv_eff=float(arr.conv_eff[i]))

    @property
    def routed(self) -> np.ndarray:
        """(K, N) True where the relay has at least one valid route."""
        return self.available.any(axis=2)

    # energy ----------------------------------------------------------------
    def eh_params(self, r: int, k: int) -> EHParams:
        chain = list(self.route(r).relays)
        return EHParams(self.source_energy, self.relays.conv_eff[chain],
                        self.relays.ps_ratio[chain], self.eh_gain2[k, chain])

    @property
    def harvested(self) -> np.ndarray:
        """(K, N) harvested energy of every relay along its home chain."""
        out = np.zeros((self.n_rounds, self.n_relays))
        if not self.n_relays:
            return out
        factor = self.relays.conv_eff * self.relays.ps_ratio * self.eh_gain2
        for r in range(self.n_routes):
            chain = list(self.route(r).relays)
            if chain:
                out[:, chain] = self.source_energy * np.cumprod(factor[:, chain], axis=1)
        return out

    @property
    def leaf_energy_max(self) -> np.ndarray:
        return np.broadcast_to(self.leaves.self_energy, (self.n_rounds, self.n_leaves))

    @property
    def relay_energy_max(self) -> np.ndarray:
        base = np.broadcast_to(self.relays.self_energy, (self.n_rounds, self.n_relays))
        return base + self.harvested if self.eh_enabled else np.array(base)

    def home_assignment(self) -> np.ndarray:
        """(K, N, R) binary routing: home route when valid, else lowest valid id."""
        K, N, R = self.available.shape
        delta = np.zeros((K, N, R))
        for n in range(N):
            home = self.relay_route[n]
            for k in range(K):
                avail = np.flatnonzero(self.available[k, n])
                if avail.size == 0:
                    continue
                delta[k, n, home if self.available[k, n, home] else avail[0]] = 1.0
        return delta

    def replace(self, **kw) -> "NetworkInstance":
        return dataclasses.replace(self, **kw)

    # export ----------------------------------------------------------------
    def to_dict(self) -> dict:
        def arr(a):
            return np.asarray(a).tolist()
        cfg = dataclasses.asdict(self.config)
        return {
            "schema": SCHEMA,
            "seed": self.seed,
            "config": cfg,
            "leaves": {f.name: arr(getattr(self.leaves, f.name)) for f in dataclasses.fields(NodeArrays)},
            "relays": {f.name: arr(getattr(self.relays, f.name)) for f in dataclasses.fields(NodeArrays)},
            "relay_route": arr(self.relay_route),
            "relay_position": arr(self.relay_position),
            "relay_successors": arr(self.relay_successors),
            "leaf_fading": arr(self.leaf_fading),
            "relay_fading": arr(self.relay_fading),
            "eh_fading": arr(self.eh_fading),
            "eh_distance": arr(self.eh_distance),
            "available": arr(self.available.astype(int)),
            "noise_psd": self.noise_psd,
            "payload_bits": self.payload_bits,
            "eh_enabled": self.eh_enabled,
            "source_energy": self.source_energy,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkInstance":
        if d.get("schema") != SCHEMA:
            raise ValueError(f"unsupported instance schema {d.get('schema')!r}")
        cfg = dict(d["config"])
        for key, value in cfg.items():
            if isinstance(value, list):
                cfg[key] = tuple(value)
        K = len(d["leaf_fading"])
        R = cfg["n_routes"]
        N = len(d["relay_route"])

        def mat(key, shape):
            a = np.asarray(d[key], dtype=float)
            return a.reshape(shape)
        return cls(
            seed=d["seed"], config=InstanceConfig(**cfg),
            leaves=NodeArrays(**d["leaves"]), relays=NodeArrays(**d["relays"]),
            relay_route=d["relay_route"], relay_position=d["relay_position"],
            relay_successors=d["relay_successors"],
            leaf_fading=mat("leaf_fading", (K, -1)),
            relay_fading=mat("relay_fading", (K, N)),
            eh_fading=mat("eh_fading", (K, N)),
            eh_distance=d["eh_distance"],
            available=np.asarray(d["available"], dtype=bool).reshape(K, N, R),
            noise_psd=d["noise_psd"], payload_bits=d["payload_bits"],
            eh_enabled=d["eh_enabled"], source_energy=d["source_energy"])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "NetworkInstance":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _stream(seed: int, stream: int, index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), stream, index])


def generate_instance(seed: int, config: InstanceConfig | None = None, **overrides) -> NetworkInstance:
    """Draw a network instance; identical ``(seed, config)`` give identical instances."""
    config = dataclasses.replace(config or InstanceConfig(), **overrides)
    config.validate()
    R, N, K = config.n_routes, config.n_relays, config.n_rounds
    M = R
    bandwidth = config.system_bandwidth / (M + N)

    def draw_nodes(kind_stream, count, iters, max_freq, power_dbm, energy_range, relay):
        fields = {k: np.empty(count) for k in ("cycles", "samples", "self_energy",
                                                "distance", "conv_eff")}
        for i in range(count):
            rng = _stream(seed, kind_stream, i)
            fields["cycles"][i] = rng.uniform(*config.cycles_range)
            fields["samples"][i] = rng.integers(config.samples_range[0], config.samples_range[1] + 1)
            fields["self_energy"][i] = rng.uniform(*energy_range)
            fields["distance"][i] = rng.uniform(*config.distance_range)
            fields["conv_eff"][i] = rng.uniform(*config.conv_eff_range) if relay else 1.0
        return NodeArrays(
            local_iters=np.full(count, float(iters)),
            chip_coeff=np.full(count, config.chip_coeff),
            max_power=np.full(count, float(dbm_to_watt(power_dbm))),
            max_freq=np.full(count, float(max_freq)),
            bandwidth=np.full(count, bandwidth),
            ps_ratio=np.full(count, config.ps_ratio if relay else 1.0),
            **fields)

    leaves = draw_nodes(_LEAF_PARAMS, M, config.leaf_local_iters, config.leaf_max_freq,
                        config.leaf_max_power_dbm, config.leaf_energy_range, relay=False)
    relays = draw_nodes(_RELAY_PARAMS, N, config.relay_local_iters, config.relay_max_freq,
                        config.relay_max_power_dbm, config.relay_energy_range, relay=True)

    relay_route = np.arange(N) % R
    relay_position = np.arange(N) // R + 1
    per_route = np.bincount(relay_route, minlength=R)
    relay_successors = per_route[relay_route] - relay_position

    sigma = config.rayleigh_scale
    floor = np.sqrt(10.0 ** (config.fading_floor_db / 10.0))
    leaf_fading = np.column_stack([_stream(seed, _LEAF_FADING, m).rayleigh(sigma, K)
                                   for m in range(M)])
    leaf_fading = np.maximum(leaf_fading, floor)
    relay_fading = np.zeros((K, N))
    eh_fading = np.zeros((K, N))
    eh_distance = np.zeros(N)
    available = np.zeros((K, N, R), dtype=bool)
    outage = np.broadcast_to(np.atleast_1d(np.asarray(config.outage_prob, dtype=float)), (max(N, 1),))
    for n in range(N):
        relay_fading[:, n] = np.maximum(_stream(seed, _RELAY_FADING, n).rayleigh(sigma, K), floor)
        eh_rng = _stream(seed, _EH_FADING, n)
        eh_distance[n] = eh_rng.uniform(*config.eh_distance_range)
        eh_fading[:, n] = eh_rng.rayleigh(sigma, K)
        rng = _stream(seed, _AVAILABILITY, n)
        u_out, u_move, u_side = rng.random(K), rng.random(K), rng.random(K)
        home = relay_route[n]
        neighbours = [r for r in (home - 1, home + 1) if 0 <= r < R]
        for k in range(K):
            if u_out[k] < outage[n]:
                continue
            available[k, n, home] = True
            if neighbours and u_move[k] < config.move_prob:
                available[k, n, neighbours[int(u_side[k] * len(neighbours))]] = True

    return NetworkInstance(
        seed=seed, config=config, leaves=leaves, relays=relays,
        relay_route=relay_route, relay_position=relay_position,
        relay_successors=relay_successors, leaf_fading=leaf_fading,
        relay_fading=relay_fading, eh_fading=eh_fading, available=available,
        noise_psd=float(dbm_per_hz_to_watt_per_hz(config.noise_dbm_hz)),
        payload_bits=config.payload_bits, eh_enabled=config.eh_enabled,
        source_energy=config.source_energy, eh_distance=eh_distance)


def with_outage(instance: NetworkInstance, relays: Sequence[int]) -> NetworkInstance:
    """Copy of ``instance`` where the given relays are in outage in every round."""
    available = np.array(instance.available)
    available[:, list(relays), :] = False
    return instance.replace(available=available)
