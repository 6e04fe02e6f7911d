"""Optimality and feasibility metrics for a distributed OPF iterate.

The (delta, epsilon) pair measures how far the stacked ADMM output is from a
KKT point: delta is the mean squared consensus mismatch and epsilon the
stationarity floor it implies for the given penalty.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .network import AdmittanceMatrix, Network, build_admittance


@dataclass
class KktReport:
    delta: float
    epsilon: float
    a: int
    b: int
    delta_bar: float
    per_bus_delta: np.ndarray
    rho: float

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_bus_delta"] = [float(x) for x in self.per_bus_delta]
        return d


def consensus_mismatch(lp, v_copy, v_net) -> np.ndarray:
    """delta_k = v_k - Ebar_k v for one bus, stacked real then imaginary."""
    N = v_net.size // 2
    return np.asarray(v_copy) - np.concatenate([v_net[:N][lp.e_map], v_net[N:][lp.e_map]])


def kkt_delta_epsilon(lps: Sequence, copies: Sequence, v, rho: float,
                      z_lengths: Optional[Sequence[int]] = None) -> KktReport:
    """delta = delta_bar / a and epsilon = rho^2 delta_bar / b.

    ``copies[k]`` is the voltage part of z_k. ``a`` is the stacked length of
    all delta_k; ``b`` the stacked length of (z, v). When ``z_lengths`` is not
    given it is derived from the layout of each local vector.
    """
    v = np.asarray(v, dtype=float)
    per_bus = np.array([float(np.sum(consensus_mismatch(lp, c, v) ** 2)) for lp, c in zip(lps, copies)])
    delta_bar = float(per_bus.sum())
    a = int(sum(2 * lp.size for lp in lps))
    if z_lengths is None:
        z_lengths = [6 + 2 * lp.size + 4 * (lp.size - 1) for lp in lps]
    b = int(sum(z_lengths)) + v.size
    return KktReport(delta_bar / a, rho * rho * delta_bar / b, a, b, delta_bar, per_bus, float(rho))


# --------------------------------------------------------------------------
# objective

def objective_value(net: Network, pg, unit: str = "pu") -> float:
    """Total generation cost in $/h.

    ``pg`` is indexed by bus; ``unit`` says whether it is in per unit (the
    internal convention) or MW. Non-generator entries are ignored.
    """
    pg = np.asarray(pg, dtype=float)
    scale = net.base_mva if unit == "pu" else 1.0
    if unit not in ("pu", "mw"):
        raise ValueError(f"unknown unit {unit!r}")
    total = 0.0
    for bus in net.buses:
        if bus.cost is not None:
            total += bus.cost(pg[bus.id] * scale)
    return float(total)


def relative_objective(f: float, f_ref: float) -> float:
    if not f_ref > 0:
        raise ValueError("reference objective must be positive")
    return abs(f - f_ref) / f_ref


# --------------------------------------------------------------------------
# centralized feasibility

@dataclass
class CentralPoint:
    """All variables of the centralized problem, per unit.

    Line quantities are per directed pair (l, s), both directions of every
    line, in the order given by ``pairs``.
    """

    v_re: np.ndarray
    v_im: np.ndarray
    pg: np.ndarray
    qg: np.ndarray
    p: np.ndarray
    q: np.ndarray
    i_re: np.ndarray
    i_im: np.ndarray
    pairs: list
    li_re: np.ndarray
    li_im: np.ndarray
    lp: np.ndarray
    lq: np.ndarray


def directed_pairs(net: Network) -> list:
    out = []
    for j, ln in enumerate(net.lines):
        out.append((ln.from_bus, ln.to_bus, j))
        out.append((ln.to_bus, ln.from_bus, j))
    return out


def _line_flows(net, pairs, v_re, v_im):
    li_re = np.empty(len(pairs))
    li_im = np.empty(len(pairs))
    for r, (l, s, j) in enumerate(pairs):
        y = net.lines[j].y
        dv = complex(v_re[l] - v_re[s], v_im[l] - v_im[s])
        cur = y * dv
        li_re[r], li_im[r] = cur.real, cur.imag
    src = np.array([l for l, _, _ in pairs], dtype=int)
    lp = v_re[src] * li_re + v_im[src] * li_im
    lq = v_im[src] * li_re - v_re[src] * li_im
    return li_re, li_im, lp, lq


def point_from_voltages(net: Network, v, pg=None, qg=None, y: Optional[AdmittanceMatrix] = None) -> CentralPoint:
    """Forward-compute every physics variable from the voltage vector.

    ``pg``/``qg`` default to the values implied by power balance, in which
    case the physics equations hold exactly.
    """
    y = y or build_admittance(net)
    N = net.n_bus
    v = np.asarray(v, dtype=float)
    v_re, v_im = v[:N].copy(), v[N:].copy()
    i_re = y.G @ v_re - y.B @ v_im
    i_im = y.B @ v_re + y.G @ v_im
    p = v_re * i_re + v_im * i_im
    q = v_im * i_re - v_re * i_im
    pd = np.array([b.pd for b in net.buses])
    qd = np.array([b.qd for b in net.buses])
    pg = p + pd if pg is None else np.asarray(pg, dtype=float)
    qg = q + qd if qg is None else np.asarray(qg, dtype=float)
    pairs = directed_pairs(net)
    li_re, li_im, lp, lq = _line_flows(net, pairs, v_re, v_im)
    return CentralPoint(v_re, v_im, pg, qg, p, q, i_re, i_im, pairs, li_re, li_im, lp, lq)


@dataclass
class FeasibilityReport:
    """Infinity-norm violation of each constraint family of the centralized problem.

    Equation families hold absolute residuals. Inequality families hold the
    clamped excess in the units the constraint is written in, so the circle
    constraints are reported on squared magnitudes.
    """

    current_injection: float = 0.0
    power_balance: float = 0.0
    line_current: float = 0.0
    bus_power: float = 0.0
    line_power: float = 0.0
    pg_bounds: float = 0.0
    qg_bounds: float = 0.0
    line_current_limit: float = 0.0
    line_apparent_limit: float = 0.0
    line_real_limit: float = 0.0
    voltage_lower: float = 0.0
    voltage_upper: float = 0.0
    worst: dict = field(default_factory=dict)

    PHYSICS = ("current_injection", "power_balance", "line_current", "bus_power", "line_power")

    def families(self) -> dict:
        d = asdict(self)
        d.pop("worst")
        return d

    def max(self) -> float:
        return max(self.families().values())

    def physics_max(self) -> float:
        return max(getattr(self, f) for f in self.PHYSICS)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def _excess(x):
    x = np.asarray(x, dtype=float)
    return float(np.maximum(x, 0.0).max()) if x.size else 0.0


def _argworst(x):
    x = np.asarray(x, dtype=float)
    return int(np.argmax(x)) if x.size else -1


def evaluate_centralized_feasibility(net: Network, y: Optional[AdmittanceMatrix], pt: CentralPoint) -> FeasibilityReport:
    y = y or build_admittance(net)
    pd = np.array([b.pd for b in net.buses])
    qd = np.array([b.qd for b in net.buses])
    ci = np.concatenate([pt.i_re - (y.G @ pt.v_re - y.B @ pt.v_im),
                         pt.i_im - (y.B @ pt.v_re + y.G @ pt.v_im)])
    bal = np.concatenate([pt.p - (pt.pg - pd), pt.q - (pt.qg - qd)])
    li_re, li_im, _, _ = _line_flows(net, pt.pairs, pt.v_re, pt.v_im)
    lc = np.concatenate([pt.li_re - li_re, pt.li_im - li_im])
    bp = np.concatenate([pt.p - (pt.v_re * pt.i_re + pt.v_im * pt.i_im),
                         pt.q - (pt.v_im * pt.i_re - pt.v_re * pt.i_im)])
    src = np.array([l for l, _, _ in pt.pairs], dtype=int)
    lpw = np.concatenate([pt.lp - (pt.v_re[src] * pt.li_re + pt.v_im[src] * pt.li_im),
                          pt.lq - (pt.v_im[src] * pt.li_re - pt.v_re[src] * pt.li_im)])

    lo = lambda attr: np.array([getattr(b, attr) for b in net.buses])  # noqa: E731
    pg_v = np.maximum(lo("pg_min") - pt.pg, pt.pg - lo("pg_max"))
    qg_v = np.maximum(lo("qg_min") - pt.qg, pt.qg - lo("qg_max"))
    mag2 = pt.v_re ** 2 + pt.v_im ** 2
    vlo = lo("v_min") ** 2 - mag2
    vhi = mag2 - lo("v_max") ** 2

    def limit(attr):
        return np.array([getattr(net.lines[j], attr) if getattr(net.lines[j], attr) is not None else np.inf
                         for _, _, j in pt.pairs])

    imax, smax, pmax = limit("i_max"), limit("s_max"), limit("p_max")
    with np.errstate(invalid="ignore"):
        ilim = np.where(np.isfinite(imax), pt.li_re ** 2 + pt.li_im ** 2 - imax ** 2, 0.0)
        slim = np.where(np.isfinite(smax), pt.lp ** 2 + pt.lq ** 2 - smax ** 2, 0.0)
        plim = np.where(np.isfinite(pmax), np.abs(pt.lp) - pmax, 0.0)

    inf = lambda x: float(np.abs(x).max()) if x.size else 0.0  # noqa: E731
    rep = FeasibilityReport(
        current_injection=inf(ci), power_balance=inf(bal), line_current=inf(lc),
        bus_power=inf(bp), line_power=inf(lpw),
        pg_bounds=_excess(pg_v), qg_bounds=_excess(qg_v),
        line_current_limit=_excess(ilim), line_apparent_limit=_excess(slim), line_real_limit=_excess(plim),
        voltage_lower=_excess(vlo), voltage_upper=_excess(vhi),
    )
    rep.worst = {"power_balance_bus": _argworst(np.abs(bal)) % max(net.n_bus, 1),
                 "voltage_upper_bus": _argworst(vhi), "voltage_lower_bus": _argworst(vlo)}
    return rep


def assemble_point(net: Network, v, z_list, y: Optional[AdmittanceMatrix] = None) -> CentralPoint:
    """Global candidate point: net voltages plus each bus's own generation."""
    pg = np.array([float(z.pg) for z in z_list])
    qg = np.array([float(z.qg) for z in z_list])
    return point_from_voltages(net, v, pg, qg, y)


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def dumps(obj, indent: Optional[int] = 1) -> str:
    """JSON with numpy support; floats are written with repr precision."""
    return json.dumps(obj, indent=indent, default=_json_default, allow_nan=True)


def finite_or_none(x: float):
    return None if x is None or not math.isfinite(x) else float(x)
