"""Dense convex QP solver.

Solves::

    minimize    0.5 x'Px + q'x
    subject to  Ax = b,  Gx <= h

with a primal-dual interior-point method (Mehrotra predictor-corrector) on
the reduced KKT system, factorised with LAPACK's symmetric-indefinite
routine. A final active-set polish re-solves the equality-constrained
problem on the detected active set, which brings the primal point to
machine accuracy when the active set is identified correctly.

The Lagrangian convention is ``L = f + nu'(Ax - b) + lam'(Gx - h)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import lapack

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
MAX_ITER = "max_iter"


@dataclass
class QpProblem:
    P: np.ndarray
    q: np.ndarray
    A: Optional[np.ndarray] = None
    b: Optional[np.ndarray] = None
    Gm: Optional[np.ndarray] = None
    h: Optional[np.ndarray] = None

    def __post_init__(self):
        self.P = np.atleast_2d(np.asarray(self.P, dtype=float))
        self.q = np.asarray(self.q, dtype=float).ravel()
        n = self.q.size
        if self.A is None:
            self.A, self.b = np.zeros((0, n)), np.zeros(0)
        if self.Gm is None:
            self.Gm, self.h = np.zeros((0, n)), np.zeros(0)
        self.A = np.asarray(self.A, dtype=float).reshape(-1, n)
        self.b = np.asarray(self.b, dtype=float).ravel()
        self.Gm = np.asarray(self.Gm, dtype=float).reshape(-1, n)
        self.h = np.asarray(self.h, dtype=float).ravel()

    @property
    def n(self) -> int:
        return self.q.size

    def check(self, psd_tol: float = 1e-9) -> None:
        n = self.n
        if self.P.shape != (n, n):
            raise ValueError(f"P has shape {self.P.shape}, expected {(n, n)}")
        if self.A.shape[0] != self.b.size:
            raise ValueError(f"A has {self.A.shape[0]} rows but b has {self.b.size} entries")
        if self.Gm.shape[0] != self.h.size:
            raise ValueError(f"G has {self.Gm.shape[0]} rows but h has {self.h.size} entries")
        if not np.allclose(self.P, self.P.T, rtol=0, atol=1e-12 * max(1.0, np.abs(self.P).max(initial=0))):
            raise ValueError("P is not symmetric")
        if n and np.any(self.P):
            scale = max(1.0, np.abs(self.P).max())
            if np.linalg.eigvalsh(self.P)[0] < -psd_tol * scale:
                raise ValueError("P is not positive semidefinite")

    def objective(self, x) -> float:
        return float(0.5 * x @ self.P @ x + self.q @ x)


@dataclass
class KktResiduals:
    stationarity: float
    primal_eq: float
    primal_ineq: float
    complementarity: float

    def max(self) -> float:
        return max(self.stationarity, self.primal_eq, self.primal_ineq, self.complementarity)


@dataclass
class QpSolution:
    x: np.ndarray
    nu: np.ndarray
    lam: np.ndarray
    status: str
    kkt: KktResiduals
    iterations: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


def kkt_residuals(p: QpProblem, s: QpSolution) -> KktResiduals:
    """Infinity-norm KKT residuals of ``s`` for ``p`` (absolute, unscaled)."""
    x, nu, lam = s.x, s.nu, s.lam
    grad = p.P @ x + p.q + p.A.T @ nu + p.Gm.T @ lam
    ineq = p.Gm @ x - p.h
    return KktResiduals(
        stationarity=_inf(grad),
        primal_eq=_inf(p.A @ x - p.b),
        primal_ineq=_inf(np.maximum(ineq, 0.0)),
        complementarity=_inf(lam * ineq),
    )


def _inf(v) -> float:
    return float(np.abs(v).max()) if v.size else 0.0


def _scaled_residuals(p, x, nu, lam, ineq=None):
    """Residuals divided by the magnitude of the terms that produce them."""
    Px = p.P @ x
    Atn = p.A.T @ nu
    Gtl = p.Gm.T @ lam
    Ax = p.A @ x
    Gx = p.Gm @ x
    ineq = Gx - p.h
    r = KktResiduals(
        stationarity=_inf(Px + p.q + Atn + Gtl) / (1.0 + max(_inf(Px), _inf(p.q), _inf(Atn), _inf(Gtl))),
        primal_eq=_inf(Ax - p.b) / (1.0 + max(_inf(Ax), _inf(p.b))),
        primal_ineq=_inf(np.maximum(ineq, 0.0)) / (1.0 + max(_inf(Gx), _inf(p.h))),
        complementarity=_inf(lam * ineq) / (1.0 + abs(0.5 * x @ Px + p.q @ x)),
    )
    return r


class _Factor:
    """Symmetric-indefinite factorisation of [[H, A'], [A, -reg I]]."""

    def __init__(self, H, A, reg=0.0):
        n, me = H.shape[0], A.shape[0]
        K = np.empty((n + me, n + me))
        K[:n, :n] = H
        K[n:, :n] = A
        K[:n, n:] = A.T
        K[n:, n:] = 0.0
        if reg:
            K[n:, n:] -= reg * np.eye(me)
        self.n = n
        self.lu, self.piv, info = lapack.dsytrf(K, lower=1)[:3]
        self.ok = info == 0 and np.all(np.isfinite(self.lu))
        if self.ok:
            # dsytrf reports exact singularity only; reject vanishing pivots as well.
            # Negative ipiv entries mark 2x2 blocks, whose diagonal may be zero.
            d = np.diag(self.lu)
            off = np.diag(self.lu, -1)
            k, m = 0, d.size
            while k < m:
                if self.piv[k] < 0 and k + 1 < m:
                    det = d[k] * d[k + 1] - off[k] * off[k]
                    if not abs(det) > 1e-300:
                        self.ok = False
                        break
                    k += 2
                else:
                    if not abs(d[k]) > 1e-300:
                        self.ok = False
                        break
                    k += 1

    def solve(self, rhs):
        x, info = lapack.dsytrs(self.lu, self.piv, rhs, lower=1)
        return x


def _eq_only(p: QpProblem, tol: float) -> QpSolution:
    n = p.n
    reg = 0.0
    for attempt in range(2):
        H = p.P + reg * np.eye(n)
        fac = _Factor(H, p.A)
        if fac.ok:
            sol = fac.solve(np.concatenate([-p.q, p.b]))
            if np.all(np.isfinite(sol)):
                x, nu = sol[:n], sol[n:]
                lam = np.zeros(0)
                r = _scaled_residuals(p, x, nu, lam)
                status = OPTIMAL if r.max() <= max(tol, 1e-12) * 10 else INFEASIBLE
                s = QpSolution(x, nu, lam, status, KktResiduals(0, 0, 0, 0), 1, {"regularized": reg > 0})
                s.kkt = kkt_residuals(p, s)
                s.meta["scaled"] = r
                return s
        reg = 1e-10
    x = np.zeros(n)
    s = QpSolution(x, np.zeros(p.A.shape[0]), np.zeros(0), INFEASIBLE, KktResiduals(0, 0, 0, 0), 1, {"regularized": True})
    s.kkt = kkt_residuals(p, s)
    return s


def _max_step(v, dv):
    neg = dv < 0
    if not np.any(neg):
        return np.inf
    return float(np.min(-v[neg] / dv[neg]))


def solve_qp(p: QpProblem, tol: float = 1e-9, max_iter: int = 100, polish: bool = True,
             check: bool = True) -> QpSolution:
    """Solve ``p`` to scaled KKT tolerance ``tol``.

    Each residual is compared against ``tol`` times one plus the magnitude of
    the terms it is built from, so problems with large data (penalty terms of
    order 1e6) are judged on relative accuracy.
    """
    if check:
        p.check()
    n, mi = p.n, p.Gm.shape[0]
    if mi == 0:
        return _eq_only(p, tol)

    P, q, A, b, G, h = p.P, p.q, p.A, p.b, p.Gm, p.h
    GT = G.T
    reg = 0.0
    meta = {"regularized": False}

    # starting point: least-squares primal, slacks shifted to be at least one
    fac = _Factor(P + GT @ G, A)
    if not fac.ok:
        reg = 1e-10
        meta["regularized"] = True
        fac = _Factor(P + GT @ G + reg * np.eye(n), A, reg)
    sol = fac.solve(np.concatenate([-q + GT @ h, b]))
    x = sol[:n]
    nu = sol[n:]
    s = h - G @ x
    smin = s.min()
    if smin < 1.0:
        s = s + (1.0 - smin)
    z = np.ones(mi)

    scale_q = _inf(q)
    scale_h = max(_inf(h), 1.0)
    status = MAX_ITER
    it = 0
    for it in range(1, max_iter + 1):
        Px = P @ x
        rd = Px + q + A.T @ nu + GT @ z
        rp = A @ x - b
        ri = G @ x + s - h
        mu = float(s @ z) / mi

        # convergence on scaled residuals of the current iterate
        Gx = G @ x
        sc_d = 1.0 + max(_inf(Px), scale_q, _inf(GT @ z))
        sc_p = 1.0 + max(_inf(A @ x), _inf(b))
        sc_i = 1.0 + max(_inf(Gx), scale_h)
        fval = 0.5 * x @ Px + q @ x
        gap = mi * mu
        if (_inf(rd) <= tol * sc_d and _inf(rp) <= tol * sc_p and _inf(ri) <= tol * sc_i
                and gap <= 1e-2 * tol * (1.0 + abs(fval))):
            status = OPTIMAL
            break
        # once the iterate is close, the active set is usually settled; an
        # accepted polish satisfies every KKT condition to tol on its own
        if polish and gap <= 1e-4 * (1.0 + abs(fval)) and _inf(rp) <= 1e-4 * sc_p and _inf(ri) <= 1e-4 * sc_i:
            pol = _polish(p, x, s, z, nu, tol, strict=True)
            if pol is not None:
                x, nu, z = pol
                status = OPTIMAL
                meta["polished"] = "early"
                break

        # infeasibility certificate: large duals whose combination nearly cancels
        zn = _inf(z) + _inf(nu)
        if zn > 1e10 * (1.0 + scale_q + _inf(Px)):
            cert = A.T @ nu + GT @ z
            lhs = b @ nu + h @ z
            if _inf(cert) <= 1e-6 * zn and lhs < -1e-8 * zn:
                status = INFEASIBLE
                break

        w = z / s
        H = P + (GT * w) @ G
        if reg:
            H = H + reg * np.eye(n)
        fac = _Factor(H, A, reg)
        if not fac.ok:
            reg = 1e-10 if reg == 0 else reg * 100
            meta["regularized"] = True
            if reg > 1e-4:
                break
            fac = _Factor(P + (GT * w) @ G + reg * np.eye(n), A, reg)
            if not fac.ok:
                continue

        def newton(rc):
            # rc is the complementarity residual s*z - target
            r1 = -rd - GT @ (w * ri - rc / s)
            sol = fac.solve(np.concatenate([r1, -rp]))
            dx, dnu = sol[:n], sol[n:]
            dz = w * (G @ dx + ri) - rc / s
            ds = -ri - G @ dx
            return dx, dnu, ds, dz

        # predictor
        dx, dnu, ds, dz = newton(s * z)
        a_aff = min(1.0, _max_step(s, ds), _max_step(z, dz))
        mu_aff = float((s + a_aff * ds) @ (z + a_aff * dz)) / mi
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
        # corrector
        dx, dnu, ds, dz = newton(s * z + ds * dz - sigma * mu)
        alpha = min(1.0, 0.99 * min(_max_step(s, ds), _max_step(z, dz)))
        if not np.all(np.isfinite(dx)):
            break
        x = x + alpha * dx
        nu = nu + alpha * dnu
        s = s + alpha * ds
        z = z + alpha * dz
        # keep iterates strictly interior
        s = np.maximum(s, 1e-300)
        z = np.maximum(z, 1e-300)

    lam = z
    out = QpSolution(x, nu, lam, status, KktResiduals(0, 0, 0, 0), it, meta)
    if polish and status in (OPTIMAL, MAX_ITER) and meta.get("polished") != "early":
        pol = _polish(p, x, s, z, nu, tol)
        if pol is not None:
            out = QpSolution(pol[0], pol[1], pol[2], OPTIMAL, KktResiduals(0, 0, 0, 0), it, meta)
            meta["polished"] = True
    if out.status == MAX_ITER:
        r = _scaled_residuals(p, out.x, out.nu, out.lam)
        if r.max() <= tol:
            out.status = OPTIMAL
    out.kkt = kkt_residuals(p, out)
    out.meta["scaled"] = _scaled_residuals(p, out.x, out.nu, out.lam)
    return out


def _polish(p: QpProblem, x, s, z, nu, tol, strict=False):
    """Re-solve on the active set; accept only if it improves every residual.

    With ``strict`` the result must meet ``tol`` outright instead of merely
    improving on the interior-point iterate.
    """
    n = p.n
    active = z > s
    Ga = p.Gm[active]
    Aa = np.vstack([p.A, Ga])
    ba = np.concatenate([p.b, p.h[active]])
    if Aa.shape[0] > n:
        return None
    fac = _Factor(p.P, Aa)
    if not fac.ok:
        return None
    sol = fac.solve(np.concatenate([-p.q, ba]))
    if not np.all(np.isfinite(sol)):
        return None
    xp = sol[:n]
    nup = sol[n:n + p.A.shape[0]]
    la = sol[n + p.A.shape[0]:]
    lam = np.zeros(p.Gm.shape[0])
    lam[active] = la
    if np.any(la < 0):
        return None
    r_new = _scaled_residuals(p, xp, nup, lam)
    if strict:
        return (xp, nup, lam) if r_new.max() <= 0.1 * tol else None
    r_old = _scaled_residuals(p, x, nu, z)
    if r_new.max() <= max(r_old.max(), tol) and r_new.primal_ineq <= max(r_old.primal_ineq, 1e-14):
        return xp, nup, lam
    return None
