"""Compiled inner loops of the SMO solver.

The solver minimises ``0.5 a'Qa - e'a`` subject to ``y'a = 0`` and
``0 <= a <= C`` with ``Q_ij = y_i y_j K_ij``. Working pairs are chosen with
second-order information (maximal violating ``i``, then the ``j`` giving the
largest guaranteed objective decrease). The gradient is ``G = Qa - e``.
"""

import numpy as np
from numba import njit

TAU = 1e-12


@njit(cache=True, nogil=True)
def select_i(alpha, grad, y, c):
    """Index maximising ``-y_t G_t`` over the up set, and that value."""
    gmax = -np.inf
    best = -1
    for t in range(len(y)):
        if y[t] > 0:
            if alpha[t] < c and -grad[t] >= gmax:
                gmax = -grad[t]
                best = t
        else:
            if alpha[t] > 0 and grad[t] >= gmax:
                gmax = grad[t]
                best = t
    return best, gmax


@njit(cache=True, nogil=True)
def select_j(alpha, grad, y, c, kdiag, k_i, i, gmax):
    """Second-order choice of ``j``; also returns ``max_{low} y_t G_t`` for the stopping test."""
    gmax2 = -np.inf
    best = -1
    obj_min = np.inf
    for t in range(len(y)):
        if y[t] > 0:
            if alpha[t] > 0:
                diff = gmax + grad[t]
                if grad[t] >= gmax2:
                    gmax2 = grad[t]
                if diff > 0:
                    quad = kdiag[i] + kdiag[t] - 2.0 * k_i[t]
                    if quad <= 0:
                        quad = TAU
                    obj = -(diff * diff) / quad
                    if obj <= obj_min:
                        best = t
                        obj_min = obj
        else:
            if alpha[t] < c:
                diff = gmax - grad[t]
                if -grad[t] >= gmax2:
                    gmax2 = -grad[t]
                if diff > 0:
                    quad = kdiag[i] + kdiag[t] - 2.0 * k_i[t]
                    if quad <= 0:
                        quad = TAU
                    obj = -(diff * diff) / quad
                    if obj <= obj_min:
                        best = t
                        obj_min = obj
    return best, gmax2


@njit(cache=True, nogil=True)
def update_pair(alpha, grad, y, c, kdiag, k_i, k_j, i, j):
    """Analytic two-variable step with box clipping, then the gradient update."""
    yi, yj = y[i], y[j]
    q_ij = yi * yj * k_i[j]
    old_i, old_j = alpha[i], alpha[j]
    if yi != yj:
        quad = kdiag[i] + kdiag[j] + 2.0 * q_ij
        if quad <= 0:
            quad = TAU
        delta = (-grad[i] - grad[j]) / quad
        diff = alpha[i] - alpha[j]
        alpha[i] += delta
        alpha[j] += delta
        if diff > 0:
            if alpha[j] < 0:
                alpha[j] = 0.0
                alpha[i] = diff
        else:
            if alpha[i] < 0:
                alpha[i] = 0.0
                alpha[j] = -diff
        if diff > 0:
            if alpha[i] > c:
                alpha[i] = c
                alpha[j] = c - diff
        else:
            if alpha[j] > c:
                alpha[j] = c
                alpha[i] = c + diff
    else:
        quad = kdiag[i] + kdiag[j] - 2.0 * q_ij
        if quad <= 0:
            quad = TAU
        delta = (grad[i] - grad[j]) / quad
        total = alpha[i] + alpha[j]
        alpha[i] -= delta
        alpha[j] += delta
        if total > c:
            if alpha[i] > c:
                alpha[i] = c
                alpha[j] = total - c
        else:
            if alpha[j] < 0:
                alpha[j] = 0.0
                alpha[i] = total
        if total > c:
            if alpha[j] > c:
                alpha[j] = c
                alpha[i] = total - c
        else:
            if alpha[i] < 0:
                alpha[i] = 0.0
                alpha[j] = total
    d_i = (alpha[i] - old_i) * yi
    d_j = (alpha[j] - old_j) * yj
    for t in range(len(y)):
        grad[t] += y[t] * (k_i[t] * d_i + k_j[t] * d_j)


@njit(cache=True, nogil=True)
def solve_dense(kernel, y, c, eps, max_iter):
    """Run SMO on a precomputed kernel matrix.

    Returns ``(alpha, grad, iterations, converged)``.
    """
    n = len(y)
    alpha = np.zeros(n)
    grad = -np.ones(n)
    kdiag = np.empty(n)
    for t in range(n):
        kdiag[t] = kernel[t, t]
    it = 0
    while it < max_iter:
        i, gmax = select_i(alpha, grad, y, c)
        if i < 0:
            return alpha, grad, it, True
        j, gmax2 = select_j(alpha, grad, y, c, kdiag, kernel[i], i, gmax)
        if j < 0 or gmax + gmax2 < eps:
            return alpha, grad, it, True
        update_pair(alpha, grad, y, c, kdiag, kernel[i], kernel[j], i, j)
        it += 1
    return alpha, grad, it, False


@njit(cache=True, nogil=True)
def decision_bias(alpha, grad, y, c):
    """Bias ``b = -rho``: mean of ``y_t G_t`` over free vectors, else the feasible midpoint."""
    ub = np.inf
    lb = -np.inf
    total = 0.0
    n_free = 0
    for t in range(len(y)):
        yg = y[t] * grad[t]
        if alpha[t] >= c:
            if y[t] < 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        elif alpha[t] <= 0:
            if y[t] > 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        else:
            n_free += 1
            total += yg
    if n_free > 0:
        rho = total / n_free
    else:
        rho = (ub + lb) / 2.0
    return -rho
