"""Batched log-barrier interior point method for small separable convex programs.

A batch holds ``B`` independent problems of identical layout::

    minimize    c^T z
    subject to  sum_i quad[j,i] z_i**2 + recip[j,i] / z_i + lin[j,i] z_i <= rhs[j]
                lo < z < hi
                A_eq z = b_eq

with ``quad, recip >= 0`` (so every row is convex) and ``recip`` only on columns
with ``lo >= 0``. All row Hessians are diagonal, which keeps the Newton system
cheap. Rows and columns are expected to be scaled to O(1) by the caller.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import nnls

OPTIMAL, MAX_ITER, INFEASIBLE, SKIPPED = "optimal", "max-iter", "infeasible", "skipped"


@dataclass
class ConvexSubproblem:
    """Solver-neutral description of a batch of convex programs.

    Columns are the decision vector in scaled units (``physical = scale * z``).
    ``epigraph_col`` names the max-slack column, if any; rows tagged
    ``"epigraph"`` are the only rows it enters.
    """

    kind: str
    names: list
    c: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    quad: np.ndarray
    recip: np.ndarray
    lin: np.ndarray
    rhs: np.ndarray
    tags: list
    row_names: list
    x0: np.ndarray
    scale: np.ndarray
    active: np.ndarray | None = None       # (B, m) rows that carry a real constraint
    a_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    eq_pad: np.ndarray | None = None       # (B, p) True for padding rows
    epigraph_col: int | None = None
    objective_scale: np.ndarray | None = None
    expansion: dict = field(default_factory=dict)

    def __post_init__(self):
        B, m, n = self.quad.shape
        if self.active is None:
            self.active = np.ones((B, m), dtype=bool)
        if self.objective_scale is None:
            self.objective_scale = np.ones(B)
        if np.any(self.quad < 0) or np.any(self.recip < 0):
            raise ValueError("quadratic and reciprocal coefficients must be nonnegative")
        bad = (self.recip > 0).any(axis=1) & (self.lo < 0)
        if np.any(bad):
            raise ValueError("reciprocal terms need a nonnegative lower bound")

    @property
    def batch(self) -> int:
        return self.quad.shape[0]

    @property
    def n_vars(self) -> int:
        return self.quad.shape[2]

    def row_values(self, z: np.ndarray) -> np.ndarray:
        return _rows(self, z)[0]

    def dump(self, b: int = 0) -> str:
        """Plain-text canonical form of batch element ``b``."""
        lines = [f"problem {self.kind}", "variables"]
        for i, name in enumerate(self.names):
            lines.append(f"  {i} {name} scale={self.scale[b, i]!r} "
                         f"box=[{self.lo[b, i]!r}, {self.hi[b, i]!r}] c={self.c[b, i]!r}")
        lines.append("rows")
        for j, name in enumerate(self.row_names):
            if not self.active[b, j]:
                continue
            terms = []
            for i in range(self.n_vars):
                for coef, fmt in ((self.quad[b, j, i], "{c!r}*z{i}^2"),
                                  (self.recip[b, j, i], "{c!r}/z{i}"),
                                  (self.lin[b, j, i], "{c!r}*z{i}")):
                    if coef != 0:
                        terms.append(fmt.format(c=coef, i=i))
            lines.append(f"  [{self.tags[j]}] {name}: {' + '.join(terms) or '0'} <= {self.rhs[b, j]!r}")
        if self.a_eq is not None:
            lines.append("equalities")
            for j in range(self.a_eq.shape[1]):
                if self.eq_pad[b, j]:
                    continue
                terms = [f"{self.a_eq[b, j, i]!r}*z{i}" for i in range(self.n_vars) if self.a_eq[b, j, i]]
                lines.append(f"  {' + '.join(terms)} = {self.b_eq[b, j]!r}")
        return "\n".join(lines) + "\n"


@dataclass
class SolveReport:
    x: np.ndarray               # (B, n) physical units
    z: np.ndarray               # (B, n) scaled units
    objective: np.ndarray       # (B,) physical units
    violation: np.ndarray       # (B,) max scaled row/box violation
    stationarity: np.ndarray    # (B,) scaled KKT residual
    iterations: int
    status: list

    @property
    def ok(self) -> bool:
        return all(s in (OPTIMAL, SKIPPED) for s in self.status)


_BATCHED = ("c", "lo", "hi", "quad", "recip", "lin", "rhs", "x0", "scale", "active",
            "a_eq", "b_eq", "eq_pad", "objective_scale")


def _take(P, idx):
    """The sub-batch ``idx`` of ``P`` (arrays copied, metadata shared)."""
    kw = {name: (None if getattr(P, name) is None else getattr(P, name)[idx]) for name in _BATCHED}
    return dataclasses.replace(P, **kw)


def _rows(P, z):
    zz = z[:, None, :]
    inv = 1.0 / np.where(P.lo >= 0, np.maximum(z, 1e-300), 1.0)[:, None, :]
    g = (P.quad * zz ** 2 + P.recip * inv + P.lin * zz).sum(axis=2) - P.rhs
    return np.where(P.active, g, -1.0), zz, inv


def _box_slack(P, z):
    with np.errstate(invalid="ignore"):
        lo_s = np.where(np.isfinite(P.lo), z - P.lo, 1.0)
        hi_s = np.where(np.isfinite(P.hi), P.hi - z, 1.0)
    return lo_s, hi_s


def _feasible(P, z):
    g = _rows(P, z)[0]
    lo_s, hi_s = _box_slack(P, z)
    return (g < 0).all(axis=1) & (lo_s > 0).all(axis=1) & (hi_s > 0).all(axis=1)


def _barrier_delta(P, z, z_new, g, g_new):
    """phi(z_new) - phi(z), computed from ratios to avoid cancellation."""
    lo_s, hi_s = _box_slack(P, z)
    lo_n, hi_n = _box_slack(P, z_new)
    with np.errstate(divide="ignore", invalid="ignore"):
        d = -np.log(g_new / g).sum(axis=1)
        d -= np.log(lo_n / lo_s).sum(axis=1) + np.log(hi_n / hi_s).sum(axis=1)
    return d


def _newton_direction(P, z, mu, frozen):
    g, zz, inv = _rows(P, z)
    act = P.active[:, :, None]
    J = np.where(act, 2 * P.quad * zz - P.recip * inv ** 2 + P.lin, 0.0)
    Hd = np.where(act, 2 * P.quad + 2 * P.recip * inv ** 3, 0.0)
    w = 1.0 / (-g)
    lo_s, hi_s = _box_slack(P, z)
    fin_lo, fin_hi = np.isfinite(P.lo), np.isfinite(P.hi)
    grad = mu * P.c + np.matmul(w[:, None, :], J)[:, 0, :]
    grad += np.where(fin_lo, -1.0 / lo_s, 0.0) + np.where(fin_hi, 1.0 / hi_s, 0.0)
    Jw = J * w[:, :, None]
    H = np.matmul(np.transpose(Jw, (0, 2, 1)), Jw)
    diag = np.matmul(w[:, None, :], Hd)[:, 0, :]
    diag += np.where(fin_lo, 1.0 / lo_s ** 2, 0.0) + np.where(fin_hi, 1.0 / hi_s ** 2, 0.0)
    n = z.shape[1]
    idx = np.arange(n)
    H[:, idx, idx] += diag
    if frozen is not None:
        H[:, frozen, :] = 0.0
        H[:, :, frozen] = 0.0
        H[:, frozen, frozen] = 1.0
        grad[:, frozen] = 0.0
    if P.a_eq is not None:
        p = P.a_eq.shape[1]
        K = np.zeros((z.shape[0], n + p, n + p))
        K[:, :n, :n] = H
        K[:, :n, n:] = np.transpose(P.a_eq, (0, 2, 1))
        K[:, n:, :n] = P.a_eq
        pad = np.arange(p)
        K[:, n + pad, n + pad] = -P.eq_pad.astype(float)
        # infeasible-start Newton: the step also removes equality drift
        r_eq = np.where(P.eq_pad, 0.0, P.b_eq - np.einsum("bpn,bn->bp", P.a_eq, z))
        rhs = np.concatenate([-grad, r_eq], axis=1)
        sol = _solve(K, rhs)
        dz, nu = sol[:, :n], sol[:, n:]
    else:
        dz = _solve(H, -grad)
        nu = None
    return g, grad, dz, nu


def _solve(K, rhs):
    try:
        return np.linalg.solve(K, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError:
        out = np.empty_like(rhs)
        for b in range(K.shape[0]):
            out[b] = np.linalg.lstsq(K[b], rhs[b], rcond=None)[0]
        return out


def _max_step(P, z, dz):
    """Largest step in (0, 1] keeping the box strictly feasible (with margin)."""
    lo_s, hi_s = _box_slack(P, z)
    with np.errstate(divide="ignore", invalid="ignore"):
        s_lo = np.where(np.isfinite(P.lo) & (dz < 0), lo_s / -dz, np.inf)
        s_hi = np.where(np.isfinite(P.hi) & (dz > 0), hi_s / dz, np.inf)
    s = np.minimum(s_lo.min(axis=1), s_hi.min(axis=1))
    return np.minimum(1.0, 0.99 * s)


def _center(P, z, mu, running, max_steps, newton_tol=1e-9, frozen=None, stop=None):
    """Damped Newton centering; returns (z, steps, nu)."""
    B = z.shape[0]
    nu = np.zeros((B, 0 if P.a_eq is None else P.a_eq.shape[1]))
    steps = 0
    todo = running.copy()
    z = z.copy()
    while todo.any() and steps < max_steps:
        idx = np.flatnonzero(todo)
        Q = P if len(idx) == B else _take(P, idx)
        zq = z[idx]
        g, grad, dz, nu_new = _newton_direction(Q, zq, mu, frozen)
        if nu_new is not None:
            nu[idx] = nu_new
        dec = -(grad * dz).sum(axis=1)
        live = (dec / 2 > newton_tol) & np.isfinite(dec)
        if not live.any():
            todo[idx] = False
            break
        steps += 1
        s = _max_step(Q, zq, dz)
        slope = (grad * dz).sum(axis=1)
        pending = live.copy()
        for _ in range(80):
            z_try = np.where(pending[:, None], zq + s[:, None] * dz, zq)
            g_try = _rows(Q, z_try)[0]
            ok_dom = (g_try < 0).all(axis=1)
            delta = np.full(len(idx), np.inf)
            with np.errstate(invalid="ignore"):
                lin_part = mu * s * (Q.c * dz).sum(axis=1)
            delta[ok_dom] = lin_part[ok_dom] + _barrier_delta(Q, zq, z_try, g, g_try)[ok_dom]
            accept = pending & ok_dom & (delta <= 0.01 * s * slope + 1e-13 * np.abs(slope))
            zq = np.where(accept[:, None], z_try, zq)
            pending &= ~accept
            if not pending.any():
                break
            s = np.where(pending, 0.5 * s, s)
        z[idx] = zq
        # elements whose line search failed have reached numerical precision
        live &= ~pending
        if stop is not None:
            live &= ~stop(idx, zq)
        todo[idx] = live
    return z, steps, nu


def _interior_start(P, z):
    z = np.array(z, dtype=float)
    width = P.hi - P.lo
    fin_lo, fin_hi = np.isfinite(P.lo), np.isfinite(P.hi)
    both = fin_lo & fin_hi
    margin = np.where(both, 1e-6 * width, 1e-6 * np.maximum(1.0, np.abs(np.where(fin_lo, P.lo, 0))))
    z = np.where(fin_lo, np.maximum(z, P.lo + margin), z)
    margin_hi = np.where(both, 1e-6 * width, 1e-6 * np.maximum(1.0, np.abs(np.where(fin_hi, P.hi, 0))))
    z = np.where(fin_hi, np.minimum(z, P.hi - margin_hi), z)
    return z


def _lift_epigraph(P, z, margin=1e-2):
    """Place the epigraph column strictly above every epigraph row."""
    if P.epigraph_col is None:
        return z
    j = P.epigraph_col
    z = np.array(z)
    z_wo = np.array(z)
    z_wo[:, j] = 0.0
    g = _rows(P, z_wo)[0]
    epi = np.array([t == "epigraph" for t in P.tags])
    coef = -P.lin[:, :, j]             # t enters epigraph rows with coefficient -1 (scaled)
    need = np.where(epi[None, :] & P.active & (coef > 0), g / np.where(coef > 0, coef, 1.0), -np.inf)
    floor = need.max(axis=1)
    has = np.isfinite(floor)
    target = floor + margin * np.maximum(1.0, np.abs(floor))
    z[:, j] = np.where(has, np.maximum(z[:, j], target), z[:, j])
    return z


def _phase_one(P, z, running, max_steps, gap_tol):
    """Find strictly feasible points; returns (z, feasible mask, steps)."""
    B, m, n = P.quad.shape
    epi = np.array([t == "epigraph" for t in P.tags])
    keep = ~epi
    # augmented problem: min s  s.t. g_j(z) <= s over non-epigraph rows
    def app(a):
        return np.concatenate([a[:, keep, :], np.zeros((B, keep.sum(), 1))], axis=2)
    lin = app(P.lin)
    g0 = _rows(P, z)[0][:, keep]
    g0 = np.where(P.active[:, keep], g0, -1.0)
    s0 = np.maximum(g0.max(axis=1), 0.0) + 1.0
    Q = ConvexSubproblem(
        kind=P.kind + "/phase1", names=list(P.names) + ["s"],
        c=np.concatenate([np.zeros((B, n)), np.ones((B, 1))], axis=1),
        lo=np.concatenate([P.lo, -np.ones((B, 1))], axis=1),
        hi=np.concatenate([P.hi, np.full((B, 1), np.inf)], axis=1),
        quad=app(P.quad), recip=app(P.recip), lin=lin, rhs=P.rhs[:, keep],
        tags=[t for t, k in zip(P.tags, keep) if k],
        row_names=[r for r, k in zip(P.row_names, keep) if k],
        x0=np.concatenate([z, s0[:, None]], axis=1),
        scale=np.ones((B, n + 1)), active=P.active[:, keep],
        a_eq=None if P.a_eq is None else np.concatenate([P.a_eq, np.zeros((B, P.a_eq.shape[1], 1))], axis=2),
        b_eq=P.b_eq, eq_pad=P.eq_pad)
    # inactive rows stay the constant -1 and do not involve s
    Q.lin[:, :, -1] = np.where(Q.active, -1.0, 0.0)
    frozen = [] if P.epigraph_col is None else [P.epigraph_col]
    frozen = np.array(frozen, dtype=int) if frozen else None
    zq = np.concatenate([z, s0[:, None]], axis=1)

    def done(idx, zz):
        PP = _take(P, idx)
        g = _rows(PP, zz[:, :n])[0][:, keep]
        return (np.where(PP.active[:, keep], g, -1.0) < 0).all(axis=1)

    everyone = np.arange(B)
    feasible = done(everyone, zq) & running
    active = running & ~feasible
    m_eff = Q.active.sum(axis=1) + np.isfinite(Q.lo).sum(axis=1) + np.isfinite(Q.hi).sum(axis=1)
    mu, steps = 1.0, 0
    infeasible = np.zeros(B, dtype=bool)
    while active.any() and steps < max_steps:
        zq, k, _ = _center(Q, zq, mu, active, max_steps - steps, frozen=frozen, stop=done)
        steps += k
        now = done(everyone, zq)
        feasible |= now & active
        active &= ~now
        lower = zq[:, -1] - m_eff / mu
        infeasible |= active & (lower > 0)
        active &= ~infeasible
        if (m_eff / mu <= gap_tol).all():
            infeasible |= active & (zq[:, -1] >= 0)
            active &= ~infeasible
            break
        mu *= 10.0
    return zq[:, :n], feasible, steps


def _polish_equalities(P, z, sweeps=3):
    """Remove equality drift with a correction weighted by each variable's box slack."""
    if P.a_eq is None:
        return z
    A = np.where(P.eq_pad[:, :, None], 0.0, P.a_eq)
    for _ in range(sweeps):
        r = np.where(P.eq_pad, 0.0, P.b_eq - np.einsum("bpn,bn->bp", A, z))
        lo_s, hi_s = _box_slack(P, z)
        w = np.minimum(np.where(np.isfinite(P.lo), lo_s, 1.0), np.where(np.isfinite(P.hi), hi_s, 1.0))
        w = np.minimum(w, 1.0) ** 2
        AW = A * w[:, None, :]
        M = np.matmul(AW, np.transpose(A, (0, 2, 1)))
        idx = np.arange(M.shape[1])
        M[:, idx, idx] += np.where(P.eq_pad, 1.0, 0.0)
        y = _solve(M, r)
        z = z + np.einsum("bpn,bp->bn", AW, y)
    return z


def kkt_residual(P: ConvexSubproblem, z, act_tol=1e-5):
    """Scaled stationarity residual with multipliers fitted by nonnegative least squares.

    Rows and bounds within ``act_tol`` of binding may carry a multiplier;
    equality rows carry free multipliers. The residual is the infinity norm
    of the Lagrangian gradient relative to its largest term.
    """
    B, m, n = P.quad.shape
    g, zz, inv = _rows(P, z)
    J = np.where(P.active[:, :, None], 2 * P.quad * zz - P.recip * inv ** 2 + P.lin, 0.0)
    lo_s, hi_s = _box_slack(P, z)
    width = np.where(np.isfinite(P.hi - P.lo), np.maximum(P.hi - P.lo, 1.0), 1.0)
    use_row = P.active & (g >= -act_tol)
    use_lo = np.isfinite(P.lo) & (lo_s <= act_tol * width)
    use_hi = np.isfinite(P.hi) & (hi_s <= act_tol * width)
    eye = np.broadcast_to(np.eye(n), (B, n, n))
    blocks = [J * use_row[:, :, None], -eye * use_lo[:, :, None], eye * use_hi[:, :, None]]
    if P.a_eq is not None:
        a = P.a_eq * ~P.eq_pad[:, :, None]
        blocks += [a, -a]
    G = np.transpose(np.concatenate(blocks, axis=1), (0, 2, 1))     # (B, n, cols)
    scale = np.maximum(1.0, np.abs(P.c).max(axis=1))
    out = np.zeros(B)
    for b in range(B):
        lam, _ = nnls(G[b], -P.c[b], maxiter=50 * G.shape[2])
        r = P.c[b] + G[b] @ lam
        out[b] = np.abs(r).max() / max(scale[b], np.abs(G[b] * lam).max(initial=0.0))
    return out


def solve(P: ConvexSubproblem, mu0=1.0, mu_factor=10.0, gap_tol=1e-6,
          max_steps=400, running=None, stage_steps=60) -> SolveReport:
    """Barrier method with phase-one feasibility restoration.

    ``running`` masks which batch elements to solve; others are returned at
    their (interior-projected) start point with status ``skipped``.
    """
    B, m, n = P.quad.shape
    running = np.ones(B, dtype=bool) if running is None else np.asarray(running, dtype=bool).copy()
    z = _interior_start(P, P.x0)
    z = _lift_epigraph(P, z)
    status = np.where(running, OPTIMAL, SKIPPED).astype(object)
    need = running & ~_feasible(P, z)
    steps = 0
    if need.any():
        z_new, ok, steps = _phase_one(P, z, need, max_steps, gap_tol)
        z = np.where(need[:, None], z_new, z)
        z = _lift_epigraph(P, z)
        bad = need & ~ok
        status[bad] = INFEASIBLE
        running &= ~bad
    m_eff = P.active.sum(axis=1) + np.isfinite(P.lo).sum(axis=1) + np.isfinite(P.hi).sum(axis=1)
    mu = mu0
    active = running.copy()
    nu = np.zeros((B, 0 if P.a_eq is None else P.a_eq.shape[1]))
    while active.any():
        if steps >= max_steps:
            status[active] = MAX_ITER
            break
        z, k, nu_k = _center(P, z, mu, active, min(stage_steps, max_steps - steps))
        nu = np.where(active[:, None], nu_k, nu) if nu.size else nu
        steps += k
        active &= ~(m_eff / mu <= gap_tol)
        if active.any():
            mu *= mu_factor
    z = np.where(running[:, None], _lift_epigraph(P, _polish_equalities(P, z), margin=1e-15), z)
    g = _rows(P, z)[0]
    lo_s, hi_s = _box_slack(P, z)
    stationarity = np.where(running, kkt_residual(P, z), np.nan)
    viol = np.maximum(np.where(P.active, g, -np.inf).max(axis=1, initial=-np.inf), 0.0)
    viol = np.maximum(viol, np.maximum(-lo_s, 0).max(axis=1, initial=0.0))
    viol = np.maximum(viol, np.maximum(-hi_s, 0).max(axis=1, initial=0.0))
    if P.a_eq is not None:
        eq_res = np.abs(np.einsum("bpn,bn->bp", P.a_eq, z) - P.b_eq)
        viol = np.maximum(viol, np.where(P.eq_pad, 0.0, eq_res).max(axis=1, initial=0.0))
    obj = (P.c * z).sum(axis=1) * P.objective_scale
    return SolveReport(x=z * P.scale, z=z, objective=obj, violation=viol,
                       stationarity=stationarity, iterations=steps, status=list(status))
