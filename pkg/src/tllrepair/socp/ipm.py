r"""Primal-dual interior-point method for linear cone programs.

Solves

.. math::

    \min_x \; c^T x \quad \text{s.t.} \quad Ax = b,\; Gx + s = h,\; s \in K

where :math:`K` is a product of one nonnegative orthant and a list of
second-order cones :math:`Q^k = \{(t, u) : \|u\|_2 \le t\}`.

The iteration follows the homogeneous self-dual embedding with
Nesterov-Todd scaling and a Mehrotra predictor-corrector step, so the
same loop returns either an optimal pair or a Farkas-type certificate of
primal or dual infeasibility.  Linear algebra is dense; the programs this
package builds have at most a few thousand scalars.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

__all__ = ["ConeDims", "conelp"]


@dataclass(frozen=True)
class ConeDims:
    """Sizes of the orthant block and of each second-order cone block."""

    l: int = 0
    q: tuple[int, ...] = ()

    @property
    def size(self) -> int:
        return self.l + sum(self.q)

    @property
    def degree(self) -> int:
        return self.l + len(self.q)

    def soc_slices(self):
        start = self.l
        for k in self.q:
            yield slice(start, start + k)
            start += k


# ---------------------------------------------------------------------------
# Jordan algebra helpers


def _identity(dims: ConeDims) -> np.ndarray:
    e = np.zeros(dims.size)
    e[: dims.l] = 1.0
    for sl in dims.soc_slices():
        e[sl.start] = 1.0
    return e


def _jprod(u, v, dims):
    out = np.empty_like(u)
    out[: dims.l] = u[: dims.l] * v[: dims.l]
    for sl in dims.soc_slices():
        a, b = u[sl], v[sl]
        out[sl.start] = a @ b
        out[sl.start + 1 : sl.stop] = a[0] * b[1:] + b[0] * a[1:]
    return out


def _jdiv(lam, d, dims):
    """Solve ``lam o x = d`` for x."""
    out = np.empty_like(d)
    out[: dims.l] = d[: dims.l] / lam[: dims.l]
    for sl in dims.soc_slices():
        l0, l1 = lam[sl.start], lam[sl.start + 1 : sl.stop]
        d0, d1 = d[sl.start], d[sl.start + 1 : sl.stop]
        det = _jdet(l0, l1)
        x0 = (l0 * d0 - l1 @ d1) / det
        out[sl.start] = x0
        out[sl.start + 1 : sl.stop] = (d1 - x0 * l1) / l0
    return out


def _jdet(x0, x1):
    r = np.linalg.norm(x1)
    return (x0 - r) * (x0 + r)


def _max_step(x, dx, dims) -> float:
    """Largest alpha with ``x + alpha*dx`` in the cone (x interior)."""
    alpha = math.inf
    if dims.l:
        xs, ds = x[: dims.l], dx[: dims.l]
        neg = ds < 0
        if np.any(neg):
            alpha = min(alpha, float(np.min(-xs[neg] / ds[neg])))
    for sl in dims.soc_slices():
        u, d = x[sl], dx[sl]
        # q(a) = c + 2*b*a + qa*a^2 with the Lorentz form x0^2 - |x1|^2
        c = _jdet(u[0], u[1:])
        bb = u[0] * d[0] - u[1:] @ d[1:]
        qa = d[0] ** 2 - d[1:] @ d[1:]
        roots = []
        if abs(qa) < 1e-300:
            if bb < 0:
                roots.append(-c / (2 * bb))
        else:
            disc = bb * bb - qa * c
            if disc >= 0:
                sq = math.sqrt(disc)
                qq = -(bb + math.copysign(sq, bb))
                if qq != 0:
                    roots.extend([qq / qa, c / qq])
                else:
                    roots.append(0.0)
        pos = [r for r in roots if r > 0]
        if pos:
            alpha = min(alpha, min(pos))
        if d[0] < 0:
            alpha = min(alpha, -u[0] / d[0])
    return alpha


def _shift_into_cone(v, dims):
    """Return v moved strictly inside the cone along the identity."""
    worst = -math.inf
    if dims.l:
        worst = max(worst, float(np.max(-v[: dims.l])))
    for sl in dims.soc_slices():
        worst = max(worst, float(np.linalg.norm(v[sl][1:]) - v[sl][0]))
    if worst < 0:
        return v.copy()
    return v + (1.0 + worst) * _identity(dims)


class _Scaling:
    """Nesterov-Todd scaling ``W`` with ``W z = W^{-1} s = lam``."""

    def __init__(self, s, z, dims: ConeDims):
        self.dims = dims
        m = dims.size
        self.lam = np.empty(m)
        self.W2 = np.zeros((m, m))
        self._d = None
        self._blocks = []
        if dims.l:
            so, zo = s[: dims.l], z[: dims.l]
            self._d = np.sqrt(so / zo)
            self.lam[: dims.l] = np.sqrt(so * zo)
            idx = np.arange(dims.l)
            self.W2[idx, idx] = self._d**2
        for sl in dims.soc_slices():
            sb, zb = s[sl], z[sl]
            ns = math.sqrt(max(_jdet(sb[0], sb[1:]), 1e-300))
            nz = math.sqrt(max(_jdet(zb[0], zb[1:]), 1e-300))
            sn, zn = sb / ns, zb / nz
            gamma = math.sqrt(max((1.0 + sn @ zn) / 2.0, 1e-300))
            w0 = (sn[0] + zn[0]) / (2 * gamma)
            w1 = (sn[1:] - zn[1:]) / (2 * gamma)
            k = sl.stop - sl.start
            wbar = np.empty((k, k))
            wbar[0, 0] = w0
            wbar[0, 1:] = w1
            wbar[1:, 0] = w1
            wbar[1:, 1:] = np.eye(k - 1) + np.outer(w1, w1) / (1.0 + w0)
            eta = math.sqrt(ns / nz)
            W = eta * wbar
            J = np.ones(k)
            J[1:] = -1.0
            Winv = (J[:, None] * wbar * J[None, :]) / eta
            self._blocks.append((sl, W, Winv))
            self.W2[sl, sl] = W @ W
            self.lam[sl] = W @ z[sl]

    def apply(self, v):
        out = np.empty_like(v)
        if self._d is not None:
            out[: self.dims.l] = self._d * v[: self.dims.l]
        for sl, W, _ in self._blocks:
            out[sl] = W @ v[sl]
        return out

    def apply_inv(self, v):
        out = np.empty_like(v)
        if self._d is not None:
            out[: self.dims.l] = v[: self.dims.l] / self._d
        for sl, _, Winv in self._blocks:
            out[sl] = Winv @ v[sl]
        return out


class _Kkt:
    """Factorized linear system with light regularization and refinement."""

    def __init__(self, K: np.ndarray, n: int, p: int, delta: float = 1e-11):
        self.K = K
        reg = K.copy()
        idx = np.arange(n)
        reg[idx, idx] += delta
        idx = np.arange(n, n + p)
        reg[idx, idx] -= delta
        self.lu = sla.lu_factor(reg, check_finite=False)

    def solve(self, rhs, refine: int = 3):
        sol = sla.lu_solve(self.lu, rhs, check_finite=False)
        for _ in range(refine):
            res = rhs - self.K @ sol
            sol = sol + sla.lu_solve(self.lu, res, check_finite=False)
        return sol


def _initial_point(c, A, b, G, h, dims):
    n, p, m = c.size, b.size, h.size
    K = np.zeros((n + p + m, n + p + m))
    K[:n, n : n + p] = A.T
    K[:n, n + p :] = G.T
    K[n : n + p, :n] = A
    K[n + p :, :n] = G
    K[n + p :, n + p :] = -np.eye(m)
    kkt = _Kkt(K, n, p)
    sol = kkt.solve(np.concatenate([np.zeros(n), b, h]))
    x = sol[:n]
    s = _shift_into_cone(-sol[n + p :], dims)
    sol = kkt.solve(np.concatenate([-c, np.zeros(p), np.zeros(m)]))
    y = sol[n : n + p]
    z = _shift_into_cone(sol[n + p :], dims)
    return x, y, z, s


def conelp(c, G, h, dims: ConeDims, A=None, b=None, tol: float = 1e-8, max_iter: int = 100):
    """Solve a linear cone program.

    Parameters
    ----------
    c : (n,) array
    G : (m, n) array
    h : (m,) array
    dims : ConeDims
        Cone structure of the slack ``s = h - G x``.
    A, b : optional equality data, ``A x = b``.
    tol : float
        Absolute tolerance on the primal residual and relative tolerance on
        the dual residual and the duality gap.
    max_iter : int

    Returns
    -------
    dict
        ``status`` is one of ``optimal``, ``infeasible`` (primal),
        ``unbounded`` (dual infeasible) or ``max_iter``; ``x, y, z, s`` hold
        the final (normalized) iterate and ``iterations`` the count.
    """
    c = np.asarray(c, dtype=float)
    G = np.asarray(G, dtype=float).reshape(-1, c.size)
    h = np.asarray(h, dtype=float)
    n, m = c.size, h.size
    if A is None:
        A = np.zeros((0, n))
        b = np.zeros(0)
    A = np.asarray(A, dtype=float).reshape(-1, n)
    b = np.asarray(b, dtype=float)
    p = b.size
    if dims.size != m:
        raise ValueError("cone dimensions do not match h")

    x, y, z, s = _initial_point(c, A, b, G, h, dims)
    tau = kappa = 1.0
    e = _identity(dims)
    deg = dims.degree
    cnorm = 1.0 + np.max(np.abs(c), initial=0.0)

    status = "max_iter"
    it = 0
    for it in range(max_iter + 1):
        rx = A.T @ y + G.T @ z + c * tau
        ry = -A @ x + b * tau
        rz = -G @ x + h * tau - s
        rt = -c @ x - b @ y - h @ z - kappa
        mu = (s @ z + tau * kappa) / (deg + 1)

        xh, yh, zh, sh = x / tau, y / tau, z / tau, s / tau
        pres = max(
            np.max(np.abs(A @ xh - b), initial=0.0),
            np.max(np.abs(G @ xh + sh - h), initial=0.0),
        )
        dres = np.max(np.abs(A.T @ yh + G.T @ zh + c), initial=0.0) / cnorm
        pcost = c @ xh
        dcost = -b @ yh - h @ zh
        gap = sh @ zh
        relgap = gap / max(1.0, min(abs(pcost), abs(dcost)))
        if pres <= tol and dres <= tol and relgap <= tol:
            status = "optimal"
            break

        by_hz = b @ y + h @ z
        if by_hz < 0 and np.max(np.abs(A.T @ y + G.T @ z), initial=0.0) / -by_hz <= tol:
            status = "infeasible"
            break
        cx = c @ x
        if cx < 0:
            r = max(
                np.max(np.abs(A @ x), initial=0.0),
                np.max(np.abs(G @ x + s), initial=0.0),
            )
            if r / -cx <= tol:
                status = "unbounded"
                break
        if it == max_iter:
            break

        W = _Scaling(s, z, dims)
        lam = W.lam
        N = n + p + m + 1
        K = np.zeros((N, N))
        K[:n, n : n + p] = A.T
        K[:n, n + p : n + p + m] = G.T
        K[:n, -1] = c
        K[n : n + p, :n] = -A
        K[n : n + p, -1] = b
        K[n + p : n + p + m, :n] = -G
        K[n + p : n + p + m, n + p : n + p + m] = W.W2
        K[n + p : n + p + m, -1] = h
        K[-1, :n] = -c
        K[-1, n : n + p] = -b
        K[-1, n + p : n + p + m] = -h
        K[-1, -1] = kappa / tau
        kkt = _Kkt(K, n, p)

        def direction(ds, dk, factor):
            rhs = np.concatenate(
                [
                    -factor * rx,
                    -factor * ry,
                    -factor * rz + W.apply(_jdiv(lam, ds, dims)),
                    [-factor * rt + dk / tau],
                ]
            )
            sol = kkt.solve(rhs)
            dx, dy, dz, dt = sol[:n], sol[n : n + p], sol[n + p : n + p + m], sol[-1]
            dsv = W.apply(_jdiv(lam, ds, dims) - W.apply(dz))
            dkap = (dk - kappa * dt) / tau
            return dx, dy, dz, dsv, dt, dkap

        def step_len(dz, dsv, dt, dkap):
            a = min(_max_step(s, dsv, dims), _max_step(z, dz, dims))
            if dt < 0:
                a = min(a, -tau / dt)
            if dkap < 0:
                a = min(a, -kappa / dkap)
            return a

        lamsq = _jprod(lam, lam, dims)
        aff = direction(-lamsq, -tau * kappa, 1.0)
        a_aff = min(1.0, step_len(aff[2], aff[3], aff[4], aff[5]))
        sigma = min(1.0, max(0.0, 1.0 - a_aff)) ** 3

        corr = _jprod(W.apply_inv(aff[3]), W.apply(aff[2]), dims)
        ds = -lamsq - corr + sigma * mu * e
        dk = -tau * kappa - aff[4] * aff[5] + sigma * mu
        dx, dy, dz, dsv, dt, dkap = direction(ds, dk, 1.0 - sigma)
        alpha = min(1.0, 0.99 * step_len(dz, dsv, dt, dkap))
        if not np.isfinite(alpha) or alpha < 1e-12:
            break

        x = x + alpha * dx
        y = y + alpha * dy
        z = z + alpha * dz
        s = s + alpha * dsv
        tau = tau + alpha * dt
        kappa = kappa + alpha * dkap

    if status == "infeasible":
        scale = -(b @ y + h @ z)
        return dict(status=status, x=None, y=y / scale, z=z / scale, s=None, iterations=it)
    if status == "unbounded":
        scale = -(c @ x)
        return dict(status=status, x=x / scale, y=None, z=None, s=s / scale, iterations=it)
    return dict(status=status, x=x / tau, y=y / tau, z=z / tau, s=s / tau, iterations=it)
