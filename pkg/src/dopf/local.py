"""Per-bus nonconvex subproblem.

The subproblem is solved by sequential convex approximation: the bilinear
power equations are linearised at the previous iterate, the inner edge of
the voltage annulus is replaced by a tangent halfspace, and every convex
quadratic constraint (outer voltage circle, line current circle, line
apparent-power circle) is enforced through a pool of tangent cuts that is
refined until the QP solution satisfies the true circle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np

from .network import LocalProblem
from .qp import OPTIMAL, QpProblem, solve_qp

CONVERGED = "converged_eps"
MAX_ITER = "stopped_max_iter"
SUB_INFEASIBLE = "infeasible"

CIRCLE_TOL = 1e-8
MAX_CUT_ROUNDS = 50
ALIGN_TOL = 1e-11  # sine of the angle between binding cut multipliers and the circle radius
ACTIVE_TOL = 1e-6  # relative slack below which a circle counts as binding
POOL_SIZE = 32


# --------------------------------------------------------------------------
# variable layout

@dataclass(frozen=True)
class Layout:
    """Index map of the local vector z_k.

    Order: pg, qg, p, q, i_re, i_im, v_re (n), v_im (n), then for each of the
    n-1 lines: current real parts, current imaginary parts, real powers,
    reactive powers.
    """

    n: int

    PG = 0
    QG = 1
    P = 2
    Q = 3
    I_RE = 4
    I_IM = 5

    @property
    def m(self) -> int:
        return self.n - 1

    @property
    def size(self) -> int:
        return 6 + 2 * self.n + 4 * self.m

    @property
    def v_re(self) -> slice:
        return slice(6, 6 + self.n)

    @property
    def v_im(self) -> slice:
        return slice(6 + self.n, 6 + 2 * self.n)

    @property
    def v(self) -> slice:
        return slice(6, 6 + 2 * self.n)

    def _line(self, j) -> slice:
        start = 6 + 2 * self.n + j * self.m
        return slice(start, start + self.m)

    @property
    def li_re(self) -> slice:
        return self._line(0)

    @property
    def li_im(self) -> slice:
        return self._line(1)

    @property
    def lp(self) -> slice:
        return self._line(2)

    @property
    def lq(self) -> slice:
        return self._line(3)


class LocalVars:
    """Values of z_k with named accessors; ``z`` is the flat array."""

    __slots__ = ("z", "layout")

    def __init__(self, z, layout: Layout):
        self.z = np.asarray(z, dtype=float)
        self.layout = layout
        if self.z.shape != (layout.size,):
            raise ValueError(f"expected {layout.size} entries, got {self.z.shape}")

    @classmethod
    def zeros(cls, n):
        lay = Layout(n)
        return cls(np.zeros(lay.size), lay)

    def copy(self):
        return LocalVars(self.z.copy(), self.layout)

    pg = property(lambda s: s.z[Layout.PG])
    qg = property(lambda s: s.z[Layout.QG])
    p = property(lambda s: s.z[Layout.P])
    q = property(lambda s: s.z[Layout.Q])
    i_re = property(lambda s: s.z[Layout.I_RE])
    i_im = property(lambda s: s.z[Layout.I_IM])
    v_re = property(lambda s: s.z[s.layout.v_re])
    v_im = property(lambda s: s.z[s.layout.v_im])
    v = property(lambda s: s.z[s.layout.v])
    line_i_re = property(lambda s: s.z[s.layout.li_re])
    line_i_im = property(lambda s: s.z[s.layout.li_im])
    line_p = property(lambda s: s.z[s.layout.lp])
    line_q = property(lambda s: s.z[s.layout.lq])


@dataclass(frozen=True)
class Halfspace:
    """``a*x + b*y >= c`` when ``sense == ">="``, ``<= c`` otherwise."""

    a: float
    b: float
    c: float
    sense: str = "<="

    def __post_init__(self):
        if self.a == 0 and self.b == 0:
            raise ValueError("degenerate halfspace with zero normal")

    def contains(self, x, y, tol: float = 0.0):
        lhs = self.a * np.asarray(x) + self.b * np.asarray(y)
        if self.sense == ">=":
            return lhs >= self.c - tol
        return lhs <= self.c + tol

    def as_leq(self):
        """(normal, rhs) of the equivalent ``n . x <= rhs`` form."""
        if self.sense == ">=":
            return (-self.a, -self.b), -self.c
        return (self.a, self.b), self.c


# --------------------------------------------------------------------------
# physics of (6a)-(6e)

def _currents(lp: LocalProblem, v_re, v_im):
    i_re = lp.g @ v_re - lp.b @ v_im
    i_im = lp.b @ v_re + lp.g @ v_im
    li_re = lp.C @ v_re - lp.D @ v_im
    li_im = lp.D @ v_re + lp.C @ v_im
    return i_re, i_im, li_re, li_im


def initialize_zhat(lp: LocalProblem, v_net) -> LocalVars:
    """Complete a linearisation point from the net voltages seen by bus k."""
    v_net = np.asarray(v_net, dtype=float)
    N = v_net.size // 2
    v_re = v_net[:N][lp.e_map]
    v_im = v_net[N:][lp.e_map]
    return complete_from_voltages(lp, v_re, v_im)


def complete_from_voltages(lp: LocalProblem, v_re, v_im) -> LocalVars:
    lay = Layout(lp.size)
    z = np.empty(lay.size)
    i_re, i_im, li_re, li_im = _currents(lp, v_re, v_im)
    vr, vi = v_re[0], v_im[0]
    p = vr * i_re + vi * i_im
    q = vi * i_re - vr * i_im
    z[Layout.PG] = p + lp.pd
    z[Layout.QG] = q + lp.qd
    z[Layout.P] = p
    z[Layout.Q] = q
    z[Layout.I_RE] = i_re
    z[Layout.I_IM] = i_im
    z[lay.v_re] = v_re
    z[lay.v_im] = v_im
    z[lay.li_re] = li_re
    z[lay.li_im] = li_im
    z[lay.lp] = vr * li_re + vi * li_im
    z[lay.lq] = vi * li_re - vr * li_im
    return LocalVars(z, lay)


def physics_residuals(lp: LocalProblem, zv: LocalVars) -> dict:
    """Residuals of the affine block and of the two bilinear blocks."""
    i_re, i_im, li_re, li_im = _currents(lp, zv.v_re, zv.v_im)
    alpha = np.concatenate([
        [zv.i_re - i_re, zv.i_im - i_im, zv.p - zv.pg + lp.pd, zv.q - zv.qg + lp.qd],
        zv.line_i_re - li_re, zv.line_i_im - li_im,
    ])
    return {"alpha": alpha, "lambda": _bilinear_value(zv.z, *_power_forms(lp.size)[0]),
            "mu": _bilinear_value(zv.z, *_power_forms(lp.size)[1])}


# --------------------------------------------------------------------------
# bilinear forms h(z) = z[out] - sum_j s_j z[x_j] z[y_j]

@lru_cache(maxsize=None)
def _power_forms(n: int):
    lay = Layout(n)
    vr, vi = lay.v_re.start, lay.v_im.start
    lam = ([Layout.P, Layout.Q],
           [[(1.0, vr, Layout.I_RE), (1.0, vi, Layout.I_IM)],
            [(1.0, vi, Layout.I_RE), (-1.0, vr, Layout.I_IM)]])
    outs, terms = [], []
    for r in range(lay.m):
        lre, lim = lay.li_re.start + r, lay.li_im.start + r
        outs.append(lay.lp.start + r)
        terms.append([(1.0, vr, lre), (1.0, vi, lim)])
    for r in range(lay.m):
        lre, lim = lay.li_re.start + r, lay.li_im.start + r
        outs.append(lay.lq.start + r)
        terms.append([(1.0, vi, lre), (-1.0, vr, lim)])
    return _compile(lam, n), _compile((outs, terms), n)


def _compile(spec, n):
    outs, terms = spec
    rows = len(outs)
    out = np.array(outs, dtype=int)
    s = np.array([[t[0] for t in row] for row in terms]).reshape(rows, 2)
    xi = np.array([[t[1] for t in row] for row in terms], dtype=int).reshape(rows, 2)
    yi = np.array([[t[2] for t in row] for row in terms], dtype=int).reshape(rows, 2)
    return out, s, xi, yi, Layout(n).size


def _bilinear_value(z, out, s, xi, yi, size):
    return z[out] - np.sum(s * z[xi] * z[yi], axis=1)


def _bilinear_jacobian(z, out, s, xi, yi, size):
    rows = out.size
    J = np.zeros((rows, size))
    r = np.arange(rows)
    J[r, out] = 1.0
    for j in range(2):
        np.add.at(J, (r, xi[:, j]), -s[:, j] * z[yi[:, j]])
        np.add.at(J, (r, yi[:, j]), -s[:, j] * z[xi[:, j]])
    return J


def _bilinear_hessians(out, s, xi, yi, size):
    H = np.zeros((out.size, size, size))
    for r in range(out.size):
        for j in range(2):
            H[r, xi[r, j], yi[r, j]] -= s[r, j]
            H[r, yi[r, j], xi[r, j]] -= s[r, j]
    return H


@dataclass
class AffineRows:
    """Rows of an affine map ``z -> coef @ z + const``.

    When built as a Taylor expansion the map is evaluated in centred form
    ``value + coef @ (z - center)``, so it reproduces ``value`` exactly at
    the expansion point.
    """

    coef: np.ndarray
    const: np.ndarray
    center: Optional[np.ndarray] = None
    value: Optional[np.ndarray] = None

    def __call__(self, z):
        z = z.z if isinstance(z, LocalVars) else np.asarray(z)
        if self.center is not None:
            return self.value + self.coef @ (z - self.center)
        return self.coef @ z + self.const


def _linearize(form, zhat):
    zh = zhat.z if isinstance(zhat, LocalVars) else np.asarray(zhat, dtype=float)
    J = _bilinear_jacobian(zh, *form)
    h = _bilinear_value(zh, *form)
    return AffineRows(J, h - J @ zh, zh.copy(), h)


def linearize_power_injection(lp: LocalProblem, zhat) -> AffineRows:
    """First-order Taylor expansion of the bus power equations at ``zhat``."""
    return _linearize(_power_forms(lp.size)[0], zhat)


def linearize_line_power(lp: LocalProblem, zhat) -> AffineRows:
    """First-order Taylor expansion of the line power equations at ``zhat``."""
    return _linearize(_power_forms(lp.size)[1], zhat)


def power_injection_value(lp: LocalProblem, z):
    z = z.z if isinstance(z, LocalVars) else np.asarray(z)
    return _bilinear_value(z, *_power_forms(lp.size)[0])


def line_power_value(lp: LocalProblem, z):
    z = z.z if isinstance(z, LocalVars) else np.asarray(z)
    return _bilinear_value(z, *_power_forms(lp.size)[1])


def power_hessians(lp: LocalProblem):
    """Constant Hessians of the bus-power rows and the line-power rows."""
    lam, mu = _power_forms(lp.size)
    return _bilinear_hessians(*lam), _bilinear_hessians(*mu)


# --------------------------------------------------------------------------
# tangent halfspaces

def donut_halfspace(v_check, v_min: float) -> Halfspace:
    """Halfspace tangent to the inner circle at the radial projection of ``v_check``."""
    re, im = float(v_check[0]), float(v_check[1])
    if v_min <= 0:
        raise ValueError("v_min must be positive")
    if re == 0 and im == 0:
        raise ValueError("cannot build a tangent cut from the origin")
    if re != 0:
        t = im / re
        a = math.copysign(math.sqrt(v_min * v_min / (1.0 + t * t)), re)
        return Halfspace(a, a * t, v_min * v_min, ">=")
    return Halfspace(0.0, math.copysign(1.0, im), v_min, ">=")


def outer_cut(v_point, v_max: float) -> Halfspace:
    """Halfspace tangent to the circle of radius ``v_max`` at the radial projection of ``v_point``."""
    re, im = float(v_point[0]), float(v_point[1])
    if re == 0 and im == 0:
        raise ValueError("cannot build a tangent cut from the origin")
    if re != 0:
        t = im / re
        a = math.copysign(math.sqrt(v_max * v_max / (1.0 + t * t)), re)
        return Halfspace(a, a * t, v_max * v_max, "<=")
    return Halfspace(0.0, math.copysign(1.0, im), v_max, "<=")


def initial_octagon(v_max: float) -> list:
    """Regular octagon circumscribing the circle of radius ``v_max``."""
    cuts = []
    for j in range(8):
        c, s = math.cos(j * math.pi / 4), math.sin(j * math.pi / 4)
        if j % 2 == 0:
            c, s = round(c), round(s)
        cuts.append(Halfspace(v_max * c, v_max * s, v_max * v_max, "<="))
    return cuts


# --------------------------------------------------------------------------
# cut pools

@dataclass
class Circle:
    """A convex circle constraint x^2 + y^2 <= radius^2 on two entries of z."""

    kind: str  # "voltage", "current" or "power"
    r: int
    ix: int
    iy: int
    radius: float
    normals: np.ndarray = None  # (k, 2)
    rhs: np.ndarray = None
    n_fixed: int = 8

    def __post_init__(self):
        if self.normals is None:
            octo = initial_octagon(self.radius)
            self.normals = np.array([[c.a, c.b] for c in octo])
            self.rhs = np.array([c.c for c in octo])

    def violation(self, z) -> float:
        x, y = z[self.ix], z[self.iy]
        return x * x + y * y - self.radius * self.radius

    def add_cut(self, z, pool_size: int = POOL_SIZE) -> Halfspace:
        cut = outer_cut((z[self.ix], z[self.iy]), self.radius)
        self.normals = np.vstack([self.normals, [cut.a, cut.b]])
        self.rhs = np.append(self.rhs, cut.c)
        extra = self.rhs.size - self.n_fixed
        if extra > pool_size:
            # oldest refinements go first; the octagon is always kept
            keep = np.r_[np.arange(self.n_fixed), np.arange(self.rhs.size - pool_size, self.rhs.size)]
            self.normals, self.rhs = self.normals[keep], self.rhs[keep]
        return cut

    def has_tangent_along(self, z, tol: float) -> bool:
        """True when the pool already holds exactly one refinement cut and
        its normal points along ``z``; realigning again would change nothing."""
        if self.rhs.size != self.n_fixed + 1:
            return False
        a, b = self.normals[-1]
        x, y = z[self.ix], z[self.iy]
        return abs(a * y - b * x) <= tol * math.hypot(a, b) * math.hypot(x, y)

    def realign(self, z) -> Halfspace:
        """Drop the refinement cuts and keep a single tangent at the radial
        projection of ``z`` (plus the fixed octagon)."""
        self.normals, self.rhs = self.normals[:self.n_fixed], self.rhs[:self.n_fixed]
        return self.add_cut(z)

    @property
    def n_cuts(self) -> int:
        return self.rhs.size


def make_circles(lp: LocalProblem) -> list:
    lay = Layout(lp.size)
    circles = [Circle("voltage", r, lay.v_re.start + r, lay.v_im.start + r, float(lp.v_max[r]))
               for r in range(lp.size)]
    for r in range(lay.m):
        if np.isfinite(lp.i_max[r]):
            circles.append(Circle("current", r, lay.li_re.start + r, lay.li_im.start + r, float(lp.i_max[r])))
    for r in range(lay.m):
        if np.isfinite(lp.s_max[r]):
            circles.append(Circle("power", r, lay.lp.start + r, lay.lq.start + r, float(lp.s_max[r])))
    return circles


# --------------------------------------------------------------------------
# the convex subproblem as a QP

BLOCKS_EQ = ("alpha", "lambda", "mu", "beta_eq")
BLOCKS_INEQ = ("beta", "gamma_cuts", "donut", "voltage_cuts")


@dataclass
class ConvexSubproblem:
    """QP data for one linearisation, minus the circle cuts which live in ``circles``."""

    lp: LocalProblem
    P: np.ndarray
    q: np.ndarray
    const: float
    A: np.ndarray
    b: np.ndarray
    eq_blocks: dict
    G: np.ndarray  # beta rows then donut rows
    h: np.ndarray
    n_beta: int
    circles: list
    donut: list

    def to_qp(self):
        gamma = [c for c in self.circles if c.kind != "voltage"]
        volt = [c for c in self.circles if c.kind == "voltage"]
        rows, rhs = [self.G[:self.n_beta]], [self.h[:self.n_beta]]
        size = self.q.size
        blocks = {"beta": slice(0, self.n_beta)}
        start = self.n_beta
        owners = []
        for group, name in ((gamma, "gamma_cuts"), (None, "donut"), (volt, "voltage_cuts")):
            if name == "donut":
                rows.append(self.G[self.n_beta:])
                rhs.append(self.h[self.n_beta:])
                k = self.G.shape[0] - self.n_beta
                blocks[name] = slice(start, start + k)
                start += k
                continue
            begin = start
            for c in group:
                k = c.n_cuts
                M = np.zeros((k, size))
                M[:, c.ix] = c.normals[:, 0]
                M[:, c.iy] = c.normals[:, 1]
                rows.append(M)
                rhs.append(c.rhs)
                owners.append((c, slice(start, start + k)))
                start += k
            blocks[name] = slice(begin, start)
        Gm = np.vstack(rows)
        h = np.concatenate(rhs)
        return QpProblem(self.P, self.q, self.A, self.b, Gm, h), blocks, owners

    def objective(self, z) -> float:
        z = z.z if isinstance(z, LocalVars) else z
        return float(0.5 * z @ self.P @ z + self.q @ z + self.const)


class SubproblemBuilder:
    """Caches the parts of the bus QP that do not change between solves."""

    def __init__(self, lp: LocalProblem):
        self.lp = lp
        lay = self.layout = Layout(lp.size)
        n, m, size = lp.size, lay.m, lay.size
        B = lp.base_mva
        P = np.zeros((size, size))
        q0 = np.zeros(size)
        c0 = 0.0
        if lp.cost is not None:
            P[Layout.PG, Layout.PG] = 2.0 * lp.cost.c2 * B * B
            q0[Layout.PG] = lp.cost.c1 * B
            c0 = lp.cost.c0
        self.P_cost, self.q_cost, self.c_cost = P, q0, c0

        # affine block: bus current, power balance, line currents
        A = np.zeros((4 + 2 * m, size))
        b = np.zeros(4 + 2 * m)
        vr, vi = lay.v_re, lay.v_im
        A[0, Layout.I_RE] = 1.0
        A[0, vr] = -lp.g
        A[0, vi] = lp.b
        A[1, Layout.I_IM] = 1.0
        A[1, vr] = -lp.b
        A[1, vi] = -lp.g
        A[2, Layout.P], A[2, Layout.PG], b[2] = 1.0, -1.0, -lp.pd
        A[3, Layout.Q], A[3, Layout.QG], b[3] = 1.0, -1.0, -lp.qd
        for r in range(m):
            A[4 + r, lay.li_re.start + r] = 1.0
            A[4 + r, vr] = -lp.C[r]
            A[4 + r, vi] = lp.D[r]
            A[4 + m + r, lay.li_im.start + r] = 1.0
            A[4 + m + r, vr] = -lp.D[r]
            A[4 + m + r, vi] = -lp.C[r]
        self.A_alpha, self.b_alpha = A, b

        # generation bounds and |line p| limits; equal bounds become equalities
        eq_rows, eq_rhs, rows, rhs = [], [], [], []
        for idx, lo, hi in ((Layout.PG, lp.pg_min, lp.pg_max), (Layout.QG, lp.qg_min, lp.qg_max)):
            e = np.zeros(size)
            e[idx] = 1.0
            if lo == hi:
                eq_rows.append(e)
                eq_rhs.append(lo)
                continue
            if np.isfinite(hi):
                rows.append(e)
                rhs.append(hi)
            if np.isfinite(lo):
                rows.append(-e)
                rhs.append(-lo)
        for r in range(m):
            if np.isfinite(lp.p_max[r]):
                e = np.zeros(size)
                e[lay.lp.start + r] = 1.0
                rows += [e, -e]
                rhs += [lp.p_max[r], lp.p_max[r]]
        self.A_beq = np.array(eq_rows).reshape(-1, size)
        self.b_beq = np.array(eq_rhs, dtype=float)
        self.G_beta = np.array(rows).reshape(-1, size)
        self.h_beta = np.array(rhs, dtype=float)
        self.lam_form, self.mu_form = _power_forms(n)

    def build(self, zhat, w, y, rho, donut, circles) -> ConvexSubproblem:
        """Assemble the convex subproblem linearised at ``zhat``.

        ``w`` is E_k v (stacked real then imaginary parts), ``y`` the
        consensus dual of the bus, ``donut`` the inner-circle halfspaces.
        """
        lay, lp = self.layout, self.lp
        size = lay.size
        P = self.P_cost.copy()
        vs = lay.v
        idx = np.arange(vs.start, vs.stop)
        P[idx, idx] += rho
        q = self.q_cost.copy()
        q[vs] += y - rho * w
        const = self.c_cost - float(y @ w) + 0.5 * rho * float(w @ w)

        lam = _linearize(self.lam_form, zhat)
        mu = _linearize(self.mu_form, zhat)
        A = np.vstack([self.A_alpha, lam.coef, mu.coef, self.A_beq])
        b = np.concatenate([self.b_alpha, -lam.const, -mu.const, self.b_beq])
        na, nl, nm = self.A_alpha.shape[0], lam.coef.shape[0], mu.coef.shape[0]
        eq_blocks = {"alpha": slice(0, na), "lambda": slice(na, na + nl),
                     "mu": slice(na + nl, na + nl + nm),
                     "beta_eq": slice(na + nl + nm, A.shape[0])}

        D = np.zeros((len(donut), size))
        hd = np.zeros(len(donut))
        for r, hs in enumerate(donut):
            (na_, nb_), c = hs.as_leq()
            D[r, lay.v_re.start + r] = na_
            D[r, lay.v_im.start + r] = nb_
            hd[r] = c
        G = np.vstack([self.G_beta, D])
        h = np.concatenate([self.h_beta, hd])
        return ConvexSubproblem(lp, P, q, const, A, b, eq_blocks, G, h, self.G_beta.shape[0], circles, donut)


@dataclass
class InnerResult:
    z: Optional[LocalVars]
    u: Optional[np.ndarray]
    u_blocks: dict
    status: str
    rounds: int
    cuts_added: int
    qp: Optional[QpProblem] = None
    owners: list = field(default_factory=list)
    lam: Optional[np.ndarray] = None


def _misaligned(c: Circle, z, lam, tol: float, near: float = ACTIVE_TOL) -> bool:
    """True when ``z`` sits on the circle but the cuts binding there do not
    push along its radius, i.e. their multipliers do not map onto the
    circle's own."""
    if c.violation(z) < -near * c.radius * c.radius:
        return False
    agg = lam @ c.normals
    na = math.hypot(agg[0], agg[1])
    if na == 0.0:
        return False
    x, y = z[c.ix], z[c.iy]
    nz = math.hypot(x, y)
    return abs(agg[0] * y - agg[1] * x) > tol * na * nz


def solve_convex_inner(cs: ConvexSubproblem, lp: LocalProblem = None, tol: float = 1e-9,
                       circle_tol: float = CIRCLE_TOL, max_rounds: int = MAX_CUT_ROUNDS,
                       align_tol: Optional[float] = ALIGN_TOL) -> InnerResult:
    """Cutting-plane loop: QP over the polyhedral outer approximation, add a
    tangent cut for every violated circle, repeat.

    Once no circle is violated, a circle whose binding cuts meet the solution
    at an angle (a polygon vertex or an off-centre edge) gets one more
    tangent at the solution's radial projection, so the final multipliers
    line up with the true circle gradient. ``align_tol=None`` disables this
    and stops as soon as the circles are satisfied.
    """
    lay = Layout(cs.lp.size)
    added = 0
    for rnd in range(1, max_rounds + 1):
        qp, blocks, owners = cs.to_qp()
        sol = solve_qp(qp, tol=tol, check=False)
        if sol.status != OPTIMAL:
            return InnerResult(None, None, {}, SUB_INFEASIBLE, rnd, added)
        z = sol.x
        violated = [c for c in cs.circles if c.violation(z) > circle_tol]
        skewed = []
        if not violated and align_tol is not None and rnd < max_rounds:
            skewed = [c for c, sl in owners if _misaligned(c, z, sol.lam[sl], align_tol)
                      and not c.has_tangent_along(z, align_tol)]
        if not violated and not skewed:
            u, ublocks = _pack_duals(cs, sol, blocks)
            return InnerResult(LocalVars(z.copy(), lay), u, ublocks, OPTIMAL, rnd, added, qp, owners, sol.lam)
        for c in violated:
            c.add_cut(z)
            added += 1
        for c in skewed:
            c.realign(z)
            added += 1
    return InnerResult(LocalVars(z.copy(), lay), None, {}, "cut_cap", max_rounds, added)


def _pack_duals(cs, sol, blocks):
    parts, ublocks, start = [], {}, 0
    for name in BLOCKS_EQ:
        seg = sol.nu[cs.eq_blocks[name]]
        parts.append(seg)
        ublocks[name] = slice(start, start + seg.size)
        start += seg.size
    for name in BLOCKS_INEQ:
        seg = sol.lam[blocks[name]]
        parts.append(seg)
        ublocks[name] = slice(start, start + seg.size)
        start += seg.size
    return np.concatenate(parts), ublocks


# --------------------------------------------------------------------------
# sequential convex approximation

@dataclass
class SubproblemResult:
    z: Optional[LocalVars]
    u: Optional[np.ndarray]
    status: str
    inner_iterations: int
    df: float
    u_blocks: dict = field(default_factory=dict)
    qp_solves: int = 0
    cuts_added: int = 0
    decrement: float = math.inf
    inner: Optional[InnerResult] = None
    subproblem: Optional[ConvexSubproblem] = None


def donut_cuts(lp: LocalProblem, w) -> list:
    n = lp.size
    cuts = []
    for r in range(n):
        re, im = w[r], w[n + r]
        if re == 0 and im == 0:
            re = 1.0  # degenerate input: fall back to the cut at angle 0
        cuts.append(donut_halfspace((re, im), float(lp.v_min[r])))
    return cuts


def run_algorithm2(lp: LocalProblem, v_net, y_k, rho: float, eps_sub: float = 1e-10,
                   max_iter: int = 20, circles: Optional[list] = None,
                   builder: Optional[SubproblemBuilder] = None, qp_tol: float = 1e-9) -> SubproblemResult:
    """Sequential convex approximation for bus ``lp.k``.

    ``circles`` is the bus's cut pool; it is refined in place and may be
    passed again on the next call since every cut stays valid.
    """
    if eps_sub <= 0 or max_iter < 1:
        raise ValueError("eps_sub must be positive and max_iter at least 1")
    v_net = np.asarray(v_net, dtype=float)
    N = v_net.size // 2
    w = np.concatenate([v_net[:N][lp.e_map], v_net[N:][lp.e_map]])
    y_k = np.zeros(2 * lp.size) if y_k is None else np.asarray(y_k, dtype=float)
    builder = builder or SubproblemBuilder(lp)
    circles = make_circles(lp) if circles is None else circles
    donut = donut_cuts(lp, w)
    zhat = initialize_zhat(lp, v_net)
    vs = zhat.layout.v
    qps = cuts = 0
    inner = None
    for m in range(1, max_iter + 1):
        cs = builder.build(zhat, w, y_k, rho, donut, circles)
        inner = solve_convex_inner(cs, tol=qp_tol)
        qps += inner.rounds
        cuts += inner.cuts_added
        if inner.status != OPTIMAL:
            return SubproblemResult(None, None, SUB_INFEASIBLE, m, math.nan, qp_solves=qps, cuts_added=cuts)
        z = inner.z
        dec = float(np.linalg.norm(z.z[vs] - zhat.z[vs]))
        if dec < eps_sub or m >= max_iter:
            status = CONVERGED if dec < eps_sub else MAX_ITER
            return SubproblemResult(z, inner.u, status, m, degree_of_feasibility(lp, z), inner.u_blocks,
                                    qps, cuts, dec, inner, cs)
        zhat = z
    raise AssertionError("unreachable")


# --------------------------------------------------------------------------
# diagnostics on a single bus

def degree_of_feasibility(lp: LocalProblem, z: LocalVars, physical: bool = False) -> float:
    """Distance (MVA) from the bus injection to its feasible injection box.

    With ``physical=True`` the injection is recomputed from the voltages
    through the network equations instead of read from ``z``.
    """
    if physical:
        zz = complete_from_voltages(lp, z.v_re, z.v_im)
        p, q = zz.p, zz.q
    else:
        p, q = z.p, z.q
    p_lo, p_hi = lp.pg_min - lp.pd, lp.pg_max - lp.pd
    q_lo, q_hi = lp.qg_min - lp.qd, lp.qg_max - lp.qd
    dp = p - min(max(p, p_lo), p_hi)
    dq = q - min(max(q, q_lo), q_hi)
    return math.hypot(dp, dq) * lp.base_mva


def true_stationarity(lp: LocalProblem, result: SubproblemResult):
    """Gradient of the Lagrangian of the original nonconvex bus problem at
    the returned point, using the true constraint gradients.

    Returns ``(residual_inf_norm, scale)`` where ``scale`` is the largest
    magnitude among the summed terms.
    """
    cs, inner = result.subproblem, result.inner
    z = result.z.z
    u, ub = result.u, result.u_blocks
    terms = [cs.P @ z + cs.q]
    A_al = cs.A[cs.eq_blocks["alpha"]]
    terms.append(A_al.T @ u[ub["alpha"]])
    A_beq = cs.A[cs.eq_blocks["beta_eq"]]
    terms.append(A_beq.T @ u[ub["beta_eq"]])
    lam_form, mu_form = _power_forms(lp.size)
    terms.append(_bilinear_jacobian(z, *lam_form).T @ u[ub["lambda"]])
    terms.append(_bilinear_jacobian(z, *mu_form).T @ u[ub["mu"]])
    terms.append(cs.G[:cs.n_beta].T @ u[ub["beta"]])
    # inner-circle: dual of the tangent cut moved onto vmin^2 - |v|^2 <= 0
    lay = result.z.layout
    dn = u[ub["donut"]]
    g = np.zeros_like(z)
    for r, hs in enumerate(cs.donut):
        x, y = z[lay.v_re.start + r], z[lay.v_im.start + r]
        nrm = math.hypot(hs.a, hs.b)
        rad = math.hypot(x, y)
        mult = dn[r] * nrm / (2.0 * rad)
        g[lay.v_re.start + r] += -2.0 * x * mult
        g[lay.v_im.start + r] += -2.0 * y * mult
    terms.append(g)
    # circle cuts: aggregate their multipliers onto x^2 + y^2 - R^2 <= 0
    g = np.zeros_like(z)
    for c, sl in inner.owners:
        lam = inner.lam[sl]
        agg = lam @ c.normals
        x, y = z[c.ix], z[c.iy]
        r2 = x * x + y * y
        mult = (agg[0] * x + agg[1] * y) / (2.0 * r2)
        g[c.ix] += 2.0 * x * mult
        g[c.iy] += 2.0 * y * mult
    terms.append(g)
    total = np.sum(terms, axis=0)
    scale = max(float(np.abs(t).max()) for t in terms)
    return float(np.abs(total).max()), scale
