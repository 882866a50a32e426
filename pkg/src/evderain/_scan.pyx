# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled selective-scan recurrence (forward and adjoint).

Per step t, channel c, state n:

    abar       = exp(dt[t,c] * A[c,n])
    h[c,n]     = abar * h[c,n] + dt[t,c] * B[t,n] * x[t,c]
    y[t,c]     = sum_n Ct[t,n] * h[c,n] + D[c] * x[t,c]

State summation runs over ascending n so results are reproducible. The
Python-level dispatch (evderain.kernels) selects this extension when it is
importable and falls back to the numpy implementation otherwise.
"""

from libc.math cimport exp

import numpy as np

cimport numpy as cnp

cnp.import_array()


def scan_forward(double[:, ::1] x, double[:, ::1] dt,
                 double[:, ::1] B, double[:, ::1] Ct,
                 double[:, ::1] A, double[::1] D,
                 double[:, ::1] h, double[:, ::1] y,
                 double[:, :, ::1] hist, bint save_hist):
    """Run the recurrence over all steps; h is carried state, updated in place.

    y must be (L, C); hist must be (L, C, N) when save_hist else (1, 1, 1).
    """
    cdef Py_ssize_t L = x.shape[0]
    cdef Py_ssize_t C = x.shape[1]
    cdef Py_ssize_t N = A.shape[1]
    cdef Py_ssize_t t, c, n
    cdef double dtc, xtc, abar, hn, acc

    for t in range(L):
        for c in range(C):
            dtc = dt[t, c]
            xtc = x[t, c]
            acc = 0.0
            for n in range(N):
                abar = exp(dtc * A[c, n])
                hn = abar * h[c, n] + dtc * B[t, n] * xtc
                h[c, n] = hn
                acc += Ct[t, n] * hn
                if save_hist:
                    hist[t, c, n] = hn
            y[t, c] = acc + D[c] * xtc


def scan_backward(double[:, ::1] x, double[:, ::1] dt,
                  double[:, ::1] B, double[:, ::1] Ct,
                  double[:, ::1] A, double[::1] D,
                  double[:, ::1] h0, double[:, :, ::1] hist,
                  double[:, ::1] gy,
                  double[:, ::1] gx, double[:, ::1] gdt,
                  double[:, ::1] gB, double[:, ::1] gCt,
                  double[:, ::1] gA, double[::1] gD):
    """Adjoint of scan_forward; accumulates into the g* output buffers."""
    cdef Py_ssize_t L = x.shape[0]
    cdef Py_ssize_t C = x.shape[1]
    cdef Py_ssize_t N = A.shape[1]
    cdef Py_ssize_t t, c, n
    cdef double dtc, xtc, dyt, abar, hprev, ghn, gab
    cdef cnp.ndarray[double, ndim=2] gh_arr = np.zeros((C, N), dtype=np.float64)
    cdef double[:, ::1] gh = gh_arr

    for t in range(L - 1, -1, -1):
        for c in range(C):
            dtc = dt[t, c]
            xtc = x[t, c]
            dyt = gy[t, c]
            gD[c] += dyt * xtc
            gx[t, c] += dyt * D[c]
            for n in range(N):
                if t > 0:
                    hprev = hist[t - 1, c, n]
                else:
                    hprev = h0[c, n]
                gCt[t, n] += dyt * hist[t, c, n]
                ghn = gh[c, n] + dyt * Ct[t, n]
                abar = exp(dtc * A[c, n])
                gab = ghn * hprev
                gdt[t, c] += gab * A[c, n] * abar + ghn * B[t, n] * xtc
                gA[c, n] += gab * dtc * abar
                gB[t, n] += ghn * dtc * xtc
                gx[t, c] += ghn * dtc * B[t, n]
                gh[c, n] = ghn * abar
