"""Pure numpy implementations of the hot loops.

These are the reference versions of the routines in ``_ckernels.pyx``; both
must produce identical results up to floating-point reassociation.
"""

import numpy as np


def rk4_linear_terminal(a, g, y_terminal, dt):
    """Integrate ``-y' = a(s) y + g(s)`` backward from the last node.

    ``a`` and ``g`` are tabulated on the half-step grid (``2 n + 1`` points:
    even indices are nodes, odd indices are RK4 midpoints).  Returns the
    solution at the ``n + 1`` nodes.
    """
    a = np.ascontiguousarray(a, dtype=np.float64)
    g = np.ascontiguousarray(g, dtype=np.float64)
    n = (a.shape[0] - 1) // 2
    y = np.empty(n + 1)
    y[n] = y_terminal
    cur = float(y_terminal)
    half = 0.5 * dt
    for i in range(n - 1, -1, -1):
        hi, mid, lo = 2 * i + 2, 2 * i + 1, 2 * i
        k1 = a[hi] * cur + g[hi]
        k2 = a[mid] * (cur + half * k1) + g[mid]
        k3 = a[mid] * (cur + half * k2) + g[mid]
        k4 = a[lo] * (cur + dt * k3) + g[lo]
        cur = cur + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        y[i] = cur
    return y


def flows_euler(deb, dxb, dxxb, dxeb, deeb, sig, dxsig, comp, dxcomp, dW, J0, J1, dt):
    """Euler scheme for the first and second order flows on shared noise.

    Coefficient tables live on the ``n + 1`` nodes; ``dW``, ``J0`` (sum of
    ``gamma0`` over the jumps binned into each step) and ``J1`` (same for
    ``d_x gamma0``) have shape ``(paths, n)``.
    """
    dW = np.asarray(dW, dtype=np.float64)
    n_paths, n = dW.shape
    X1 = np.zeros((n_paths, n + 1))
    X2 = np.zeros((n_paths, n + 1))
    x1 = np.zeros(n_paths)
    x2 = np.zeros(n_paths)
    for i in range(n):
        nx1 = (x1 + (deb[i] + dxb[i] * x1) * dt + sig[i] * dW[:, i]
               + (J0[:, i] - comp[i] * dt))
        nx2 = (x2 + (dxb[i] * x2 + 0.5 * dxxb[i] * x1 * x1 + dxeb[i] * x1 + 0.5 * deeb[i]) * dt
               + dxsig[i] * x1 * dW[:, i] + x1 * (J1[:, i] - dxcomp[i] * dt))
        x1, x2 = nx1, nx2
        X1[:, i + 1] = x1
        X2[:, i + 1] = x2
    return X1, X2
