"""Compiled rollout, cost, adjoint gradient and projected-gradient loop.

Packed parameter vector: [g, A_x, A_y, A_z, K_phi, K_theta, tau_phi, tau_theta].
These kernels mirror ``dynamics.euler_step`` exactly; the Python reference
path in ``mpc`` is kept as the independent check.
"""
import math

import numpy as np
from numba import njit

SOLVED = 0
MAX_ITER = 1
STALLED = 2
DIVERGED = 3


@njit(cache=True)
def _wrap(a):
    if -math.pi <= a <= math.pi:
        return a
    return (a + math.pi) % (2.0 * math.pi) - math.pi


@njit(cache=True)
def _step(x, u, prm, dt, out):
    phi = x[6]
    theta = x[7]
    cphi = math.cos(phi)
    thrust = u[0]
    out[0] = x[0] + dt * x[3]
    out[1] = x[1] + dt * x[4]
    out[2] = x[2] + dt * x[5]
    out[3] = x[3] + dt * (thrust * math.sin(theta) * cphi - prm[1] * x[3])
    out[4] = x[4] + dt * (-thrust * math.sin(phi) - prm[2] * x[4])
    out[5] = x[5] + dt * (thrust * math.cos(theta) * cphi - prm[0] - prm[3] * x[5])
    out[6] = _wrap(phi + dt * (prm[4] * u[1] - phi) / prm[6])
    out[7] = _wrap(theta + dt * (prm[5] * u[2] - theta) / prm[7])


@njit(cache=True)
def rollout(x0, U, prm, dt):
    n = U.shape[0]
    X = np.empty((n, 8))
    prev = x0
    for j in range(n):
        _step(prev, U[j], prm, dt, X[j])
        prev = X[j]
    return X


@njit(cache=True)
def _quad(Q, e):
    s = 0.0
    m = e.shape[0]
    for a in range(m):
        row = 0.0
        for b in range(m):
            row += Q[a, b] * e[b]
        s += e[a] * row
    return s


@njit(cache=True)
def _matvec_add(S, e, out, scale):
    m = e.shape[0]
    for a in range(m):
        s = 0.0
        for b in range(m):
            s += S[a, b] * e[b]
        out[a] += scale * s


@njit(cache=True)
def cost(x0, U, Xd, ud, uprev, Qx, Qu, Qdu, prm, dt):
    n = U.shape[0]
    x = x0.copy()
    nxt = np.empty(8)
    e8 = np.empty(8)
    e3 = np.empty(3)
    J = 0.0
    for j in range(n):
        _step(x, U[j], prm, dt, nxt)
        x, nxt = nxt, x
        for a in range(8):
            e8[a] = Xd[j, a] - x[a]
        J += _quad(Qx, e8)
        for a in range(3):
            e3[a] = ud[a] - U[j, a]
        J += _quad(Qu, e3)
        for a in range(3):
            e3[a] = U[j, a] - (uprev[a] if j == 0 else U[j - 1, a])
        J += _quad(Qdu, e3)
    return J


@njit(cache=True)
def cost_and_gradient(x0, U, Xd, ud, uprev, Qx, Qu, Qdu, prm, dt):
    """Cost and its gradient w.r.t. ``U`` by reverse accumulation."""
    n = U.shape[0]
    X = rollout(x0, U, prm, dt)
    Sx = Qx + Qx.T
    Su = Qu + Qu.T
    Sdu = Qdu + Qdu.T
    J = 0.0
    G = np.zeros((n, 3))
    du = np.empty((n, 3))
    eu = np.empty(3)
    ex = np.empty((n, 8))
    for j in range(n):
        for a in range(8):
            ex[j, a] = X[j, a] - Xd[j, a]
        J += _quad(Qx, ex[j])
        for a in range(3):
            eu[a] = U[j, a] - ud[a]
            du[j, a] = U[j, a] - (uprev[a] if j == 0 else U[j - 1, a])
        J += _quad(Qu, eu)
        J += _quad(Qdu, du[j])
        _matvec_add(Su, eu, G[j], 1.0)
        _matvec_add(Sdu, du[j], G[j], 1.0)
        if j > 0:
            _matvec_add(Sdu, du[j], G[j - 1], -1.0)
    # adjoint sweep: lam = dJ/dx_j (total); X[j] is produced by U[j] from X[j-1]
    lam = np.zeros(8)
    for j in range(n - 1, -1, -1):
        _matvec_add(Sx, ex[j], lam, 1.0)
        xp = x0 if j == 0 else X[j - 1]
        phi = xp[6]
        theta = xp[7]
        cphi = math.cos(phi)
        sphi = math.sin(phi)
        cth = math.cos(theta)
        sth = math.sin(theta)
        thrust = U[j, 0]
        G[j, 0] += dt * (lam[3] * sth * cphi - lam[4] * sphi + lam[5] * cth * cphi)
        G[j, 1] += dt * lam[6] * prm[4] / prm[6]
        G[j, 2] += dt * lam[7] * prm[5] / prm[7]
        # lam <- (dX[j]/dX[j-1])^T lam, in place (rows 6, 7 read rows 3..5 first)
        l3, l4, l5 = lam[3], lam[4], lam[5]
        lam[6] = lam[6] * (1.0 - dt / prm[6]) + dt * thrust * (-l3 * sth * sphi - l4 * cphi - l5 * cth * sphi)
        lam[7] = lam[7] * (1.0 - dt / prm[7]) + dt * thrust * (l3 * cth * cphi - l5 * sth * cphi)
        lam[3] = l3 * (1.0 - dt * prm[1]) + dt * lam[0]
        lam[4] = l4 * (1.0 - dt * prm[2]) + dt * lam[1]
        lam[5] = l5 * (1.0 - dt * prm[3]) + dt * lam[2]
    return J, G


@njit(cache=True)
def project(U, lo, hi):
    out = np.empty_like(U)
    for j in range(U.shape[0]):
        for c in range(U.shape[1]):
            out[j, c] = min(max(U[j, c], lo[c]), hi[c])
    return out


@njit(cache=True)
def _projected_norm(U, G, lo, hi):
    s = 0.0
    for j in range(U.shape[0]):
        for c in range(U.shape[1]):
            d = U[j, c] - min(max(U[j, c] - G[j, c], lo[c]), hi[c])
            s += d * d
    return math.sqrt(s)


@njit(cache=True)
def _descend(U, G, alpha, lo, hi, out):
    for j in range(U.shape[0]):
        for c in range(U.shape[1]):
            out[j, c] = min(max(U[j, c] - alpha * G[j, c], lo[c]), hi[c])


@njit(cache=True)
def solve(x0, U0, Xd, ud, uprev, Qx, Qu, Qdu, prm, dt, lo, hi, max_iter, step, tol, max_halvings):
    """Projected gradient descent with backtracking on a box.

    Returns (U, J_initial, J_final, iterations, projected_gradient_norm, status).
    The step restarts from ``step`` each iteration and is halved while the
    cost does not decrease.
    """
    U = project(U0, lo, hi)
    Un = np.empty_like(U)
    J, G = cost_and_gradient(x0, U, Xd, ud, uprev, Qx, Qu, Qdu, prm, dt)
    J0 = J
    if not math.isfinite(J):
        return U, J0, J, 0, np.inf, DIVERGED
    status = MAX_ITER
    it = 0
    pg = 0.0
    while True:
        pg = _projected_norm(U, G, lo, hi)
        if not math.isfinite(pg):
            return U, J0, J, it, pg, DIVERGED
        if pg <= tol:
            status = SOLVED
            break
        if it >= max_iter:
            break
        alpha = step
        accepted = False
        for _ in range(max_halvings + 1):
            _descend(U, G, alpha, lo, hi, Un)
            Jn = cost(x0, Un, Xd, ud, uprev, Qx, Qu, Qdu, prm, dt)
            if not math.isfinite(Jn):
                return U, J0, J, it, pg, DIVERGED
            if Jn <= J:
                accepted = True
                break
            alpha *= 0.5
        it += 1
        if not accepted:
            status = STALLED
            break
        U, Un = Un, U
        J, G = cost_and_gradient(x0, U, Xd, ud, uprev, Qx, Qu, Qdu, prm, dt)
        if not math.isfinite(J):
            return U, J0, J, it, pg, DIVERGED
    return U, J0, J, it, pg, status


def warmup():
    """Compile (or load cached) kernels ahead of the first real solve."""
    n = 2
    x0 = np.zeros(8)
    U = np.tile(np.array([9.81, 0.0, 0.0]), (n, 1))
    Xd = np.zeros((n, 8))
    eye8, eye3 = np.eye(8), np.eye(3)
    prm = np.array([9.81, 0.1, 0.1, 0.2, 1.0, 1.0, 0.5, 0.5])
    lo, hi = np.array([0.0, -0.4, -0.4]), np.array([20.0, 0.4, 0.4])
    solve(x0, U, Xd, U[0], U[0], eye8, eye3, eye3, prm, 0.02, lo, hi, 2, 1e-3, 1e-3, 2)
