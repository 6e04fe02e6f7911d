"""Consensus ADMM over simulated bus agents.

Each round every bus solves its own subproblem against the current net
voltages and its consensus dual, the coordinator recomputes the net
voltages from the local copies, and every bus takes a dual ascent step on
its consistency mismatch.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .diagnostics import KktReport, kkt_delta_epsilon, objective_value
from .local import (CONVERGED, MAX_ITER, SUB_INFEASIBLE, SubproblemBuilder,
                    initialize_zhat, make_circles, run_algorithm2)
from .network import Network, build_admittance, local_problems

log = logging.getLogger(__name__)

TRACE_FIELDS = ("iter", "objective", "delta", "epsilon", "worst_df",
                "sub_eps_stops", "sub_maxiter_stops", "sub_infeasible", "wall_ms")

NET_MODES = ("general", "average", "gossip")


class UnrecoverableSolveError(RuntimeError):
    """Every bus failed in the same round."""


@dataclass(frozen=True)
class StopRule:
    """``kind`` is "iters", "consensus" or "objective"; ``theta`` the threshold of the latter two."""

    kind: str = "iters"
    theta: float = 0.0

    def __post_init__(self):
        if self.kind not in ("iters", "consensus", "objective"):
            raise ValueError(f"unknown stop rule {self.kind!r}")
        if self.kind != "iters" and not self.theta > 0:
            raise ValueError("stop threshold must be positive")

    @classmethod
    def parse(cls, text: str) -> "StopRule":
        """Parse ``iters``, ``consensus:THETA`` or ``objective:THETA``."""
        kind, _, val = text.partition(":")
        if kind == "iters":
            if val:
                raise ValueError("the iters rule takes no threshold")
            return cls("iters")
        if not val:
            raise ValueError(f"stop rule {kind!r} needs a threshold, e.g. {kind}:1e-5")
        return cls(kind, float(val))

    def __str__(self):
        return self.kind if self.kind == "iters" else f"{self.kind}:{self.theta:g}"


@dataclass(frozen=True)
class AdmmConfig:
    rho: float = 1e6
    max_admm_iters: int = 1000
    eps_sub: float = 1e-10
    max_sub_iter: int = 20
    stop_rule: StopRule = field(default_factory=StopRule)
    net_update: str = "general"
    gossip_rounds: int = 200
    seed: int = 0
    timing: bool = True  # wall_ms column; off for byte-reproducible traces
    qp_tol: float = 1e-9

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if self.max_admm_iters < 1 or self.max_sub_iter < 1:
            raise ValueError("iteration budgets must be at least 1")
        if not self.eps_sub > 0:
            raise ValueError("eps_sub must be positive")
        if self.net_update not in NET_MODES:
            raise ValueError(f"net_update must be one of {NET_MODES}")
        if self.gossip_rounds < 1:
            raise ValueError("gossip_rounds must be at least 1")


@dataclass
class TraceRecord:
    iter: int
    objective: float
    delta: float
    epsilon: float
    worst_df: float
    sub_eps_stops: int
    sub_maxiter_stops: int
    sub_infeasible: int
    wall_ms: float

    def row(self) -> list:
        return [getattr(self, f) for f in TRACE_FIELDS]


@dataclass
class ConsensusState:
    """Net voltages, per-bus consensus duals and the latest local copies."""

    v: np.ndarray
    y: list
    copies: list

    @classmethod
    def flat(cls, lps) -> "ConsensusState":
        N = len(lps)
        v = np.concatenate([np.ones(N), np.zeros(N)])
        y = [np.zeros(2 * lp.size) for lp in lps]
        copies = [v[stacked_index(lp, N)] for lp in lps]
        return cls(v, y, copies)


def stacked_index(lp, N: int) -> np.ndarray:
    """Index array realising Ebar_k on a stacked (re, im) vector of length 2N."""
    return np.concatenate([lp.e_map, lp.e_map + N])


def dual_sum(lps, y, N: int) -> np.ndarray:
    """sum_k Ebar_k' y_k."""
    out = np.zeros(2 * N)
    for lp, yk in zip(lps, y):
        np.add.at(out, stacked_index(lp, N), yk)
    return out


# --------------------------------------------------------------------------
# net variable update

def _component_means(lps, parts, N: int) -> np.ndarray:
    """Per-component mean over holders of the summed ``parts``.

    ``parts`` is a list of per-bus vector lists; every entry a holder
    contributes is kept as a separate term and each component is summed
    exactly with ``math.fsum``, so the mean is rounded once or twice rather
    than once per holder. At rho = 1e6 each ulp of the mean shows up as
    rho * ulp in the dual sum, which is why the plain accumulation is not
    good enough here.
    """
    terms = [[] for _ in range(2 * N)]
    for k, lp in enumerate(lps):
        idx = stacked_index(lp, N)
        for part in parts:
            for i, x in zip(idx.tolist(), part[k].tolist()):
                terms[i].append(x)
    per = len(parts)
    return np.array([math.fsum(t) / (len(t) // per) if t else 0.0 for t in terms])


def net_update_general(lps, copies, y, rho: float, N: int) -> np.ndarray:
    """v = (sum Ebar'Ebar)^-1 sum Ebar'(v_k + y_k / rho)."""
    return _component_means(lps, [list(copies), [np.asarray(yk) / rho for yk in y]], N)


def net_update_average(lps, copies, N: int) -> np.ndarray:
    """Per-component mean of the copies held by the neighbours."""
    return _component_means(lps, [list(copies)], N)


class GossipPlan:
    """Holders and communication edges for every net component.

    The holders of component s are the buses whose neighbourhood contains s;
    they talk over the lines of the network that join two holders.
    """

    def __init__(self, net: Network, lps):
        N = net.n_bus
        self.N = N
        holders = [[] for _ in range(N)]
        for lp in lps:
            for pos, s in enumerate(lp.neighbors):
                holders[s].append((lp.k, pos))
        adj = {(min(f, t), max(f, t)) for f, t in ((ln.from_bus, ln.to_bus) for ln in net.lines)}
        self.holders = holders
        self.edges = []
        for s in range(N):
            local = {k: j for j, (k, _) in enumerate(holders[s])}
            e = sorted((local[a], local[b]) for a, b in adj if a in local and b in local)
            self.edges.append(np.array(e, dtype=int).reshape(-1, 2))

    def values(self, s, copies, n_by_bus):
        # (holders, 2) array of the re/im copies of component s
        out = np.empty((len(self.holders[s]), 2))
        for j, (k, pos) in enumerate(self.holders[s]):
            out[j, 0] = copies[k][pos]
            out[j, 1] = copies[k][n_by_bus[k] + pos]
        return out


def random_matching(edges: np.ndarray, n_nodes: int, rng: np.random.Generator) -> list:
    """Greedy maximal matching over ``edges`` visited in random order."""
    used = np.zeros(n_nodes, dtype=bool)
    out = []
    for e in rng.permutation(len(edges)):
        a, b = edges[e]
        if not (used[a] or used[b]):
            used[a] = used[b] = True
            out.append((a, b))
    return out


def gossip_average(values: np.ndarray, edges: np.ndarray, rounds: int, rng: np.random.Generator) -> np.ndarray:
    """Synchronous randomized pairwise averaging.

    Each round draws a random matching on ``edges`` and replaces both
    endpoints of every matched pair by their mean, which keeps the total
    unchanged.
    """
    if rounds < 1:
        raise ValueError("rounds must be at least 1")
    x = np.array(values, dtype=float, copy=True)
    n = x.shape[0]
    if len(edges) == 0:
        return x
    for _ in range(rounds):
        pairs = random_matching(edges, n, rng)
        if not pairs:
            continue
        a = np.array([p[0] for p in pairs])
        b = np.array([p[1] for p in pairs])
        m = 0.5 * (x[a] + x[b])
        x[a] = m
        x[b] = m
    return x


def net_update_gossip(plan: GossipPlan, lps, copies, rounds: int, rng) -> np.ndarray:
    """Gossip each component among its holders; the owning bus's estimate wins."""
    N = plan.N
    sizes = [lp.size for lp in lps]
    v = np.empty(2 * N)
    for s in range(N):
        vals = plan.values(s, copies, sizes)
        est = gossip_average(vals, plan.edges[s], rounds, rng)
        own = next(j for j, (k, _) in enumerate(plan.holders[s]) if k == s)
        v[s], v[N + s] = est[own]
    return v


def net_update(state: ConsensusState, lps, rho: float, mode: str, plan: Optional[GossipPlan] = None,
               rounds: int = 200, rng=None) -> np.ndarray:
    N = state.v.size // 2
    if mode == "general":
        return net_update_general(lps, state.copies, state.y, rho, N)
    if mode == "average":
        return net_update_average(lps, state.copies, N)
    if mode == "gossip":
        if plan is None or rng is None:
            raise ValueError("gossip mode needs a plan and a random generator")
        return net_update_gossip(plan, lps, state.copies, rounds, rng)
    raise ValueError(f"unknown net update mode {mode!r}")


def dual_update(y_k, v_k, w_k, rho: float) -> np.ndarray:
    """y_k + rho (v_k - Ebar_k v), with ``w_k`` = Ebar_k v."""
    return np.asarray(y_k) + rho * (np.asarray(v_k) - np.asarray(w_k))


# --------------------------------------------------------------------------
# stopping

def consensus_residual(lps, copies, v) -> float:
    N = v.size // 2
    return max(float(np.linalg.norm(c - v[stacked_index(lp, N)])) for lp, c in zip(lps, copies))


def check_stop(trace: Sequence[TraceRecord], cfg: AdmmConfig, consensus: Optional[float] = None) -> bool:
    if not trace:
        raise ValueError("trace is empty")
    n = trace[-1].iter
    if n >= cfg.max_admm_iters:
        return True
    rule = cfg.stop_rule
    if rule.kind == "consensus":
        return consensus is not None and consensus < rule.theta
    if rule.kind == "objective":
        return len(trace) >= 2 and abs(trace[-1].objective - trace[-2].objective) < rule.theta
    return False


# --------------------------------------------------------------------------
# driver

@dataclass
class CallStats:
    calls: int = 0
    eps_stops: int = 0
    maxiter_stops: int = 0
    infeasible: int = 0
    max_df: float = 0.0
    qp_solves: int = 0
    sca_iterations: int = 0

    @property
    def maxiter_fraction(self) -> float:
        return self.maxiter_stops / self.calls if self.calls else 0.0


@dataclass
class SolveReport:
    z: list
    v: np.ndarray
    u: list
    y: list
    trace: list
    status: str
    kkt: KktReport
    objective: float
    stats: CallStats
    iterations: int
    delta_internal: float = math.nan  # consensus residual accumulated by the coordinator

    @property
    def copies(self):
        return [z.v for z in self.z]


def _default_objective(net, z_list):
    return objective_value(net, np.array([float(z.pg) for z in z_list]))


def run_admm(net: Network, cfg: AdmmConfig, callback: Optional[Callable] = None,
             observer: Optional[Callable] = None) -> SolveReport:
    """Run ADMM from the flat start until the stop rule fires.

    ``callback(n, state, record)`` is invoked after every round; returning
    True from it stops the run early. ``observer(n, k, result)`` sees every
    subproblem result as it is produced.
    """
    ymat = build_admittance(net)
    lps = local_problems(net, ymat)
    N = net.n_bus
    idx = [stacked_index(lp, N) for lp in lps]
    state = ConsensusState.flat(lps)
    builders = [SubproblemBuilder(lp) for lp in lps]
    pools = [make_circles(lp) for lp in lps]
    z_list = [initialize_zhat(lp, state.v) for lp in lps]
    u_list = [None] * N
    plan = GossipPlan(net, lps) if cfg.net_update == "gossip" else None
    rng = np.random.default_rng(cfg.seed)
    stats = CallStats()
    trace: list = []
    status = "max_iters"
    kkt = kkt_delta_epsilon(lps, state.copies, state.v, cfg.rho)
    delta_internal = math.nan

    for n in range(1, cfg.max_admm_iters + 1):
        t0 = time.perf_counter()
        counts = {CONVERGED: 0, MAX_ITER: 0, SUB_INFEASIBLE: 0}
        ok = np.zeros(N, dtype=bool)
        worst_df = 0.0
        for k, lp in enumerate(lps):
            res = run_algorithm2(lp, state.v, state.y[k], cfg.rho, cfg.eps_sub, cfg.max_sub_iter,
                                 circles=pools[k], builder=builders[k], qp_tol=cfg.qp_tol)
            if observer is not None:
                observer(n, k, res)
            counts[res.status] += 1
            stats.calls += 1
            stats.qp_solves += res.qp_solves
            stats.sca_iterations += res.inner_iterations
            if res.status == SUB_INFEASIBLE:
                log.debug("iteration %d: bus %d subproblem infeasible, keeping previous point", n, k)
                continue
            ok[k] = True
            z_list[k], u_list[k] = res.z, res.u
            state.copies[k] = res.z.v.copy()
            worst_df = max(worst_df, res.df)
        stats.eps_stops += counts[CONVERGED]
        stats.maxiter_stops += counts[MAX_ITER]
        stats.infeasible += counts[SUB_INFEASIBLE]
        stats.max_df = max(stats.max_df, worst_df)
        if not ok.any():
            status = "failed"
            break

        state.v = net_update(state, lps, cfg.rho, cfg.net_update, plan, cfg.gossip_rounds, rng)
        dbar = 0.0
        for k in range(N):
            w = state.v[idx[k]]
            r = state.copies[k] - w
            dbar += float(r @ r)
            if ok[k]:
                state.y[k] = dual_update(state.y[k], state.copies[k], w, cfg.rho)
        delta_internal = dbar / kkt.a

        kkt = kkt_delta_epsilon(lps, state.copies, state.v, cfg.rho, [z.z.size for z in z_list])
        wall = (time.perf_counter() - t0) * 1e3 if cfg.timing else 0.0
        rec = TraceRecord(n, _default_objective(net, z_list), kkt.delta, kkt.epsilon, worst_df,
                          counts[CONVERGED], counts[MAX_ITER], counts[SUB_INFEASIBLE], wall)
        trace.append(rec)
        cons = math.sqrt(float(kkt.per_bus_delta.max())) if N else 0.0
        if callback is not None and callback(n, state, rec):
            status = "callback"
            break
        if check_stop(trace, cfg, cons):
            status = "max_iters" if n >= cfg.max_admm_iters else f"{cfg.stop_rule.kind}_rule"
            break

    return SolveReport(z_list, state.v.copy(), u_list, [yk.copy() for yk in state.y], trace, status, kkt,
                       _default_objective(net, z_list), stats, len(trace), delta_internal)


def solve(net: Network, cfg: AdmmConfig, **kw) -> SolveReport:
    """Like :func:`run_admm` but raises when every bus fails in one round."""
    rep = run_admm(net, cfg, **kw)
    if rep.status == "failed":
        raise UnrecoverableSolveError("every bus subproblem failed in the same round")
    return rep


# --------------------------------------------------------------------------
# trace output

def _fmt(x):
    if isinstance(x, float):
        return repr(x)
    return str(x)


def trace_csv(trace: Sequence[TraceRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_FIELDS)
    for rec in trace:
        w.writerow([_fmt(x) for x in rec.row()])
    return buf.getvalue()


def trace_jsonl(trace: Sequence[TraceRecord]) -> str:
    return "".join(json.dumps(asdict(r)) + "\n" for r in trace)


def read_trace_csv(text: str) -> list:
    rows = list(csv.DictReader(io.StringIO(text)))
    out = []
    for r in rows:
        out.append(TraceRecord(int(r["iter"]), float(r["objective"]), float(r["delta"]), float(r["epsilon"]),
                               float(r["worst_df"]), int(r["sub_eps_stops"]), int(r["sub_maxiter_stops"]),
                               int(r["sub_infeasible"]), float(r["wall_ms"])))
    return out
