"""Reference implementations used only by the tests.

Kept deliberately separate from the compiled kernels they check.
"""
import math

import numpy as np
from numba import njit

from edge_mpc.dynamics import euler_step


def reference_cost(x0, U, Xd, u_d, u_prev, Qx, Qu, Qdu, params, dt):
    """Horizon cost by iterating ``dynamics.euler_step`` term by term."""
    x = np.asarray(x0, dtype=float)
    prev = np.asarray(u_prev, dtype=float)
    J = 0.0
    for j in range(len(U)):
        u = np.asarray(U[j], dtype=float)
        x = euler_step(x, u, params, dt)
        e = np.asarray(Xd[j]) - x
        J += e @ Qx @ e
        J += (u_d - u) @ Qu @ (u_d - u)
        J += (u - prev) @ Qdu @ (u - prev)
        prev = u
    return float(J)


def central_difference(f, U, h=1e-6):
    U = np.asarray(U, dtype=float)
    G = np.zeros_like(U)
    for idx in np.ndindex(U.shape):
        up, dn = U.copy(), U.copy()
        up[idx] += h
        dn[idx] -= h
        G[idx] = (f(up) - f(dn)) / (2 * h)
    return G


@njit(cache=True)
def grid_search_n2(x0, Xd, ud, uprev, qx, qu, qdu, g, A, K, tau, dt, levels):
    """Exact minimum over a 2-step horizon with every input on the ``levels`` grid (3 x L).

    Weights are diagonals (``qx`` length 8, ``qu``/``qdu`` length 3). The model
    is written out here from the kinematic equations. With diagonal weights the
    second-step cost separates into thrust, roll and pitch parts given the
    first input, so the inner minimum is taken per component; the result is
    the same as enumerating all L**6 combinations.
    """
    L = levels.shape[1]
    best = np.inf
    best_u = np.zeros((2, 3))
    for i0 in range(L):
        T0 = levels[0, i0]
        # x1 velocity/position do not depend on the first attitude command
        sp, cp = math.sin(x0[6]), math.cos(x0[6])
        st, ct = math.sin(x0[7]), math.cos(x0[7])
        acc0 = (T0 * st * cp, -T0 * sp, T0 * ct * cp - g)
        p1 = np.empty(3)
        v1 = np.empty(3)
        cpv = qu[0] * (ud[0] - T0) ** 2 + qdu[0] * (T0 - uprev[0]) ** 2
        for i in range(3):
            p1[i] = x0[i] + dt * x0[3 + i]
            v1[i] = x0[3 + i] + dt * (acc0[i] - A[i] * x0[3 + i])
            cpv += qx[i] * (Xd[0, i] - p1[i]) ** 2 + qx[3 + i] * (Xd[0, 3 + i] - v1[i]) ** 2
        p2 = np.empty(3)
        for i in range(3):
            p2[i] = p1[i] + dt * v1[i]
        for j0 in range(L):
            a0 = levels[1, j0]
            phi1 = x0[6] + dt * (K[0] * a0 - x0[6]) / tau[0]
            ca = cpv + qx[6] * (Xd[0, 6] - phi1) ** 2 + qu[1] * (ud[1] - a0) ** 2 + qdu[1] * (a0 - uprev[1]) ** 2
            # roll part of step 2
            bestphi = np.inf
            for j1 in range(L):
                a1 = levels[1, j1]
                phi2 = phi1 + dt * (K[0] * a1 - phi1) / tau[0]
                c = qx[6] * (Xd[1, 6] - phi2) ** 2 + qu[1] * (ud[1] - a1) ** 2 + qdu[1] * (a1 - a0) ** 2
                if c < bestphi:
                    bestphi, arg_a1 = c, a1
            for k0 in range(L):
                b0 = levels[2, k0]
                th1 = x0[7] + dt * (K[1] * b0 - x0[7]) / tau[1]
                c1 = ca + qx[7] * (Xd[0, 7] - th1) ** 2 + qu[2] * (ud[2] - b0) ** 2 + qdu[2] * (b0 - uprev[2]) ** 2
                besttheta = np.inf
                for k1 in range(L):
                    b1 = levels[2, k1]
                    th2 = th1 + dt * (K[1] * b1 - th1) / tau[1]
                    c = qx[7] * (Xd[1, 7] - th2) ** 2 + qu[2] * (ud[2] - b1) ** 2 + qdu[2] * (b1 - b0) ** 2
                    if c < besttheta:
                        besttheta, arg_b1 = c, b1
                # thrust part of step 2, with attitude at x1
                s6, c6 = math.sin(phi1), math.cos(phi1)
                s7, c7 = math.sin(th1), math.cos(th1)
                bestT = np.inf
                for i1 in range(L):
                    T1 = levels[0, i1]
                    acc = (T1 * s7 * c6, -T1 * s6, T1 * c7 * c6 - g)
                    c = qu[0] * (ud[0] - T1) ** 2 + qdu[0] * (T1 - T0) ** 2
                    for i in range(3):
                        v2 = v1[i] + dt * (acc[i] - A[i] * v1[i])
                        c += qx[i] * (Xd[1, i] - p2[i]) ** 2 + qx[3 + i] * (Xd[1, 3 + i] - v2) ** 2
                    if c < bestT:
                        bestT, arg_T1 = c, T1
                total = c1 + bestphi + besttheta + bestT
                if total < best:
                    best = total
                    best_u[0, 0], best_u[0, 1], best_u[0, 2] = T0, a0, b0
                    best_u[1, 0], best_u[1, 1], best_u[1, 2] = arg_T1, arg_a1, arg_b1
    return best, best_u
