# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot loops in ``_pykernels``."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def rk4_linear_terminal(a, g, double y_terminal, double dt):
    cdef const double[::1] av = np.ascontiguousarray(a, dtype=np.float64)
    cdef const double[::1] gv = np.ascontiguousarray(g, dtype=np.float64)
    cdef Py_ssize_t n = (av.shape[0] - 1) // 2
    out = np.empty(n + 1)
    cdef double[::1] y = out
    cdef double cur = y_terminal, half = 0.5 * dt
    cdef double k1, k2, k3, k4
    cdef Py_ssize_t i, hi, mid, lo
    y[n] = cur
    for i in range(n - 1, -1, -1):
        hi = 2 * i + 2
        mid = 2 * i + 1
        lo = 2 * i
        k1 = av[hi] * cur + gv[hi]
        k2 = av[mid] * (cur + half * k1) + gv[mid]
        k3 = av[mid] * (cur + half * k2) + gv[mid]
        k4 = av[lo] * (cur + dt * k3) + gv[lo]
        cur = cur + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        y[i] = cur
    return out


def flows_euler(deb, dxb, dxxb, dxeb, deeb, sig, dxsig, comp, dxcomp, dW, J0, J1, double dt):
    cdef const double[::1] c_deb = np.ascontiguousarray(deb, dtype=np.float64)
    cdef const double[::1] c_dxb = np.ascontiguousarray(dxb, dtype=np.float64)
    cdef const double[::1] c_dxxb = np.ascontiguousarray(dxxb, dtype=np.float64)
    cdef const double[::1] c_dxeb = np.ascontiguousarray(dxeb, dtype=np.float64)
    cdef const double[::1] c_deeb = np.ascontiguousarray(deeb, dtype=np.float64)
    cdef const double[::1] c_sig = np.ascontiguousarray(sig, dtype=np.float64)
    cdef const double[::1] c_dxsig = np.ascontiguousarray(dxsig, dtype=np.float64)
    cdef const double[::1] c_comp = np.ascontiguousarray(comp, dtype=np.float64)
    cdef const double[::1] c_dxcomp = np.ascontiguousarray(dxcomp, dtype=np.float64)
    cdef const double[:, ::1] w = np.ascontiguousarray(dW, dtype=np.float64)
    cdef const double[:, ::1] j0 = np.ascontiguousarray(J0, dtype=np.float64)
    cdef const double[:, ::1] j1 = np.ascontiguousarray(J1, dtype=np.float64)
    cdef Py_ssize_t n_paths = w.shape[0], n = w.shape[1]
    X1_arr = np.zeros((n_paths, n + 1))
    X2_arr = np.zeros((n_paths, n + 1))
    cdef double[:, ::1] X1 = X1_arr
    cdef double[:, ::1] X2 = X2_arr
    cdef Py_ssize_t p, i
    cdef double x1, x2, nx1
    for p in range(n_paths):
        x1 = 0.0
        x2 = 0.0
        for i in range(n):
            nx1 = (x1 + (c_deb[i] + c_dxb[i] * x1) * dt + c_sig[i] * w[p, i]
                   + (j0[p, i] - c_comp[i] * dt))
            x2 = (x2 + (c_dxb[i] * x2 + 0.5 * c_dxxb[i] * x1 * x1 + c_dxeb[i] * x1
                        + 0.5 * c_deeb[i]) * dt
                  + c_dxsig[i] * x1 * w[p, i] + x1 * (j1[p, i] - c_dxcomp[i] * dt))
            x1 = nx1
            X1[p, i + 1] = x1
            X2[p, i + 1] = x2
    return X1_arr, X2_arr
