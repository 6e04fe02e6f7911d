"""Exhaustive voltage-grid search for very small networks.

Every variable of the centralized problem is a function of the bus
voltages, so a dense grid over the voltages, with infeasible points
rejected, brackets the global optimum. The problem is invariant under a
common rotation of all voltages, so bus 0 is pinned to the positive real
axis and only its magnitude is gridded; every other bus gets a (v_re, v_im)
grid over the box around its voltage annulus.

A coarse pass over the full box is followed by zoom passes around the
incumbent, which brings the attained objective close to the continuous
optimum of the basin the coarse pass found.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .network import Network, build_admittance

MAX_BUSES = 3


class OracleSizeError(ValueError):
    pass


@dataclass
class OracleResult:
    objective: float
    v: np.ndarray  # stacked (re, im), length 2N
    pg: np.ndarray  # per unit
    qg: np.ndarray
    resolution: int
    passes: int
    spacing: float  # grid spacing of the final pass (p.u.)
    coarse_objective: float  # best value of the first, full-box pass
    evaluated: int
    feasible: int
    feas_tol: float
    seconds: float
    history: list = field(default_factory=list)
    base_mva: float = 100.0

    def to_dict(self) -> dict:
        return {
            "objective": self.objective, "v_re": self.v[: self.v.size // 2].tolist(),
            "v_im": self.v[self.v.size // 2:].tolist(), "pg_mw": (self.pg * self.base_mva).tolist(),
            "qg_mvar": (self.qg * self.base_mva).tolist(), "resolution": self.resolution, "passes": self.passes,
            "final_spacing": self.spacing, "coarse_objective": self.coarse_objective,
            "evaluated": self.evaluated, "feasible": self.feasible, "feasibility_tolerance": self.feas_tol,
            "seconds": self.seconds, "history": self.history,
        }


class _Evaluator:
    """Vectorised forward model: voltages -> injections, flows, cost, feasibility."""

    def __init__(self, net: Network, feas_tol: float):
        self.net = net
        y = build_admittance(net)
        self.G, self.B = y.G, y.B
        b = net.buses
        self.pd = np.array([x.pd for x in b])
        self.qd = np.array([x.qd for x in b])
        self.pg_lo = np.array([x.pg_min for x in b])
        self.pg_hi = np.array([x.pg_max for x in b])
        self.qg_lo = np.array([x.qg_min for x in b])
        self.qg_hi = np.array([x.qg_max for x in b])
        self.vmin = np.array([x.v_min for x in b])
        self.vmax = np.array([x.v_max for x in b])
        self.tol = feas_tol
        self.lines = net.lines

    def __call__(self, vr, vi):
        """``vr``, ``vi`` have shape (M, N). Returns (cost, feasible mask, pg, qg)."""
        ir = vr @ self.G.T - vi @ self.B.T
        ii = vr @ self.B.T + vi @ self.G.T
        p = vr * ir + vi * ii
        q = vi * ir - vr * ii
        pg = p + self.pd
        qg = q + self.qd
        t = self.tol
        ok = np.all((pg >= self.pg_lo - t) & (pg <= self.pg_hi + t)
                    & (qg >= self.qg_lo - t) & (qg <= self.qg_hi + t), axis=1)
        mag2 = vr * vr + vi * vi
        ok &= np.all((mag2 >= self.vmin ** 2 - t) & (mag2 <= self.vmax ** 2 + t), axis=1)
        for ln in self.lines:
            for l, s in ((ln.from_bus, ln.to_bus), (ln.to_bus, ln.from_bus)):
                dr, di = vr[:, l] - vr[:, s], vi[:, l] - vi[:, s]
                cr = ln.y.real * dr - ln.y.imag * di
                ci = ln.y.imag * dr + ln.y.real * di
                if ln.i_max is not None:
                    ok &= cr * cr + ci * ci <= ln.i_max ** 2 + t
                if ln.s_max is not None or ln.p_max is not None:
                    lp = vr[:, l] * cr + vi[:, l] * ci
                    lq = vi[:, l] * cr - vr[:, l] * ci
                    if ln.s_max is not None:
                        ok &= lp * lp + lq * lq <= ln.s_max ** 2 + t
                    if ln.p_max is not None:
                        ok &= np.abs(lp) <= ln.p_max + t
        cost = np.zeros(vr.shape[0])
        base = self.net.base_mva
        for bus in self.net.buses:
            if bus.cost is not None:
                cost += bus.cost(pg[:, bus.id] * base)
        return cost, ok, pg, qg


def _axes(net: Network, lo, hi, res):
    """Grid axes: bus 0 magnitude, then (re, im) for every other bus."""
    return [np.linspace(lo[j], hi[j], res) for j in range(len(lo))]


def _box(net: Network):
    lo, hi = [net.buses[0].v_min], [net.buses[0].v_max]
    for b in net.buses[1:]:
        lo += [-b.v_max, -b.v_max]
        hi += [b.v_max, b.v_max]
    return np.array(lo, dtype=float), np.array(hi, dtype=float)


def _to_voltages(coords, N):
    M = coords.shape[0]
    vr = np.empty((M, N))
    vi = np.empty((M, N))
    vr[:, 0] = coords[:, 0]
    vi[:, 0] = 0.0
    for k in range(1, N):
        vr[:, k] = coords[:, 2 * k - 1]
        vi[:, k] = coords[:, 2 * k]
    return vr, vi


def _scan(ev, axes, N, chunk):
    """Best feasible point over the tensor grid spanned by ``axes``."""
    best = (math.inf, None)
    evaluated = feasible = 0
    lead = axes[0]
    # per-bus (re, im) points, dropped early when outside the voltage annulus
    sets = []
    for k in range(1, N):
        re, im = np.meshgrid(axes[2 * k - 1], axes[2 * k], indexing="ij")
        pts = np.column_stack([re.ravel(), im.ravel()])
        m2 = np.einsum("ij,ij->i", pts, pts)
        t = ev.tol
        keep = (m2 >= ev.vmin[k] ** 2 - t) & (m2 <= ev.vmax[k] ** 2 + t)
        sets.append(pts[keep])
    if any(len(x) == 0 for x in sets):
        return best, 0, 0
    tail = np.zeros((1, 0))
    for pts in sets:
        tail = np.hstack([np.repeat(tail, len(pts), axis=0), np.tile(pts, (tail.shape[0], 1))])
    per = max(1, chunk // max(tail.shape[0], 1))
    for start in range(0, lead.size, per):
        block = lead[start:start + per]
        coords = np.empty((block.size * tail.shape[0], 1 + tail.shape[1]))
        coords[:, 0] = np.repeat(block, tail.shape[0])
        coords[:, 1:] = np.tile(tail, (block.size, 1))
        vr, vi = _to_voltages(coords, N)
        cost, ok, _, _ = ev(vr, vi)
        evaluated += cost.size
        feasible += int(ok.sum())
        if ok.any():
            c = np.where(ok, cost, np.inf)
            j = int(np.argmin(c))
            if c[j] < best[0]:
                best = (float(c[j]), coords[j].copy())
    return best, evaluated, feasible


def default_resolution(n_bus: int) -> int:
    return {1: 4001, 2: 400, 3: 40}.get(n_bus, 0)


def grid_oracle(net: Network, resolution: Optional[int] = None, refine_passes: int = 12,
                refine_resolution: int = 41, zoom: float = 4.0, feas_tol: float = 0.0,
                chunk: int = 400_000) -> OracleResult:
    """Brute-force minimum of the centralized problem over a voltage grid.

    ``resolution`` points per axis in the first pass (default 400 for two
    buses). Each zoom pass re-grids ``refine_resolution`` points per axis
    on a box of half-width ``zoom`` previous spacings around the incumbent.
    ``feas_tol`` loosens every inequality by that amount; the default of 0
    only accepts exactly feasible points, so the result is an upper bound
    on the true optimum.
    """
    N = net.n_bus
    if N > MAX_BUSES:
        raise OracleSizeError(f"the grid oracle handles at most {MAX_BUSES} buses, got {N}")
    t0 = time.perf_counter()
    res = resolution or default_resolution(N)
    ev = _Evaluator(net, feas_tol)
    lo, hi = _box(net)
    axes = _axes(net, lo, hi, res)
    (fbest, xbest), n_eval, n_feas = _scan(ev, axes, N, chunk)
    if xbest is None:
        raise RuntimeError(f"no feasible grid point at resolution {res}")
    spacing = np.array([a[1] - a[0] if a.size > 1 else 0.0 for a in axes])
    coarse = fbest
    history = [{"pass": 0, "objective": fbest, "spacing": float(spacing.max())}]
    passes = 1
    for _ in range(refine_passes):
        half = zoom * spacing
        plo = np.maximum(xbest - half, lo)
        phi = np.minimum(xbest + half, hi)
        axes = [np.unique(np.r_[np.linspace(plo[j], phi[j], refine_resolution), xbest[j]])
                for j in range(lo.size)]
        (f, x), ne, nf = _scan(ev, axes, N, chunk)
        n_eval += ne
        n_feas += nf
        passes += 1
        if x is not None and f <= fbest:
            fbest, xbest = f, x
        spacing = (phi - plo) / (refine_resolution - 1)
        history.append({"pass": passes - 1, "objective": fbest, "spacing": float(spacing.max())})
        if spacing.max() < 1e-12:
            break
    vr, vi = _to_voltages(xbest[None, :], N)
    cost, ok, pg, qg = ev(vr, vi)
    return OracleResult(float(cost[0]), np.concatenate([vr[0], vi[0]]), pg[0], qg[0], res, passes,
                        float(spacing.max()), coarse, n_eval, n_feas, feas_tol,
                        time.perf_counter() - t0, history, net.base_mva)
