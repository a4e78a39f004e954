# cython: boundscheck=False, wraparound=False, cdivision=True
# cython: language_level=3
"""Compiled twin of ``accmon.backend.kernels``.

Implements the identical kernel semantics: same dropout counter scheme, same
clamps, same Adam step accounting.  Matrix products go through BLAS dgemm;
activation, mask and optimizer passes are tight C loops.  Results differ
from the numpy fallback only by floating-point summation order.  No
-ffast-math: IEEE semantics are part of the determinism contract.
"""

from libc.math cimport exp, log, sqrt
from scipy.linalg.cython_blas cimport dgemm

import numpy as np

ctypedef unsigned long long u64

cdef double SCORE_EPS = 1e-12
cdef double UNIT53 = 1.0 / 9007199254740992.0


cdef inline u64 mix64(u64 x) noexcept nogil:
    cdef u64 z = x + <u64>0x9E3779B97F4A7C15
    z = (z ^ (z >> 30)) * <u64>0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * <u64>0x94D049BB133111EB
    return z ^ (z >> 31)


cdef inline double unit_from(u64 ctr) noexcept nogil:
    return <double>(mix64(ctr) >> 11) * UNIT53


def mix64_py(x):
    """Expose the mixer for cross-backend stream tests."""
    return int(mix64(<u64>(x & 0xFFFFFFFFFFFFFFFF)))


cdef void gather_rows(const double[:, ::1] x, const long long[::1] perm,
                      int start, int m, double[:, ::1] out) noexcept nogil:
    cdef int i, k, d = x.shape[1]
    for i in range(m):
        for k in range(d):
            out[i, k] = x[perm[start + i], k]


# BLAS takes Fortran-order operands; a row-major (p, q) array is its own
# column-major (q, p) transpose, so every product below is phrased on the
# transposed problem.

cdef void matmul(const double[:, ::1] a, const double[:, ::1] b,
                 double[:, ::1] c, int m) noexcept nogil:
    # c[:m] = a[:m] @ b for row-major operands
    cdef int k = b.shape[0], n = b.shape[1]
    cdef double alpha = 1.0, beta = 0.0
    if m == 0:
        return
    dgemm("N", "N", &n, &m, &k, &alpha, <double*>&b[0, 0], &n,
          <double*>&a[0, 0], &k, &beta, &c[0, 0], &n)


cdef void matmul_at_b(const double[:, ::1] a, const double[:, ::1] d,
                      double[:, ::1] c, int m) noexcept nogil:
    # c = a[:m].T @ d[:m] for row-major operands
    cdef int din = a.shape[1], dout = d.shape[1]
    cdef double alpha = 1.0, beta = 0.0
    if m == 0:
        return
    dgemm("N", "T", &dout, &din, &m, &alpha, <double*>&d[0, 0], &dout,
          <double*>&a[0, 0], &din, &beta, &c[0, 0], &dout)


cdef void matmul_a_bt(const double[:, ::1] d, const double[:, ::1] w,
                      double[:, ::1] c, int m) noexcept nogil:
    # c[:m] = d[:m] @ w.T for row-major operands
    cdef int din = w.shape[0], dout = w.shape[1]
    cdef double alpha = 1.0, beta = 0.0
    if m == 0:
        return
    dgemm("T", "N", &din, &m, &dout, &alpha, <double*>&w[0, 0], &dout,
          <double*>&d[0, 0], &dout, &beta, &c[0, 0], &din)


cdef void affine(const double[:, ::1] a, const double[:, ::1] w,
                 const double[::1] b, double[:, ::1] z, int m) noexcept nogil:
    cdef int dout = w.shape[1]
    cdef int i, j
    matmul(a, w, z, m)
    for i in range(m):
        for j in range(dout):
            z[i, j] += b[j]


cdef void relu_from(const double[:, ::1] z, double[:, ::1] a, int m) noexcept nogil:
    cdef int i, j, d = z.shape[1]
    for i in range(m):
        for j in range(d):
            a[i, j] = z[i, j] if z[i, j] > 0.0 else 0.0


cdef void dropout_forward(double[:, ::1] a, double[:, ::1] mask, int m,
                          u64 mask_base, int slot0, double rate) noexcept nogil:
    cdef int i, j, h = a.shape[1]
    cdef double inv_keep = 1.0 / (1.0 - rate)
    cdef u64 ctr
    for i in range(m):
        for j in range(h):
            ctr = mask_base + <u64>((slot0 + i) * h + j)
            if unit_from(ctr) >= rate:
                mask[i, j] = inv_keep
            else:
                mask[i, j] = 0.0
            a[i, j] *= mask[i, j]




cdef void relu_mask_back(double[:, ::1] d, const double[:, ::1] z,
                         const double[:, ::1] mask, bint use_mask, int m) noexcept nogil:
    cdef int i, j, h = d.shape[1]
    for i in range(m):
        for j in range(h):
            if use_mask:
                d[i, j] *= mask[i, j]
            if z[i, j] <= 0.0:
                d[i, j] = 0.0


cdef void grad_accum(const double[:, ::1] a, const double[:, ::1] d,
                     double[:, ::1] gw, double[::1] gb, int m) noexcept nogil:
    cdef int dout = d.shape[1]
    cdef int i, j
    matmul_at_b(a, d, gw, m)
    for j in range(dout):
        gb[j] = 0.0
    for i in range(m):
        for j in range(dout):
            gb[j] += d[i, j]


cdef void adam_2d(double[:, ::1] p, double[:, ::1] mo, double[:, ::1] ve,
                  const double[:, ::1] g, double lr, double b1, double b2,
                  double eps, double bc1, double bc2) noexcept nogil:
    cdef int i, j, r = p.shape[0], c = p.shape[1]
    for i in range(r):
        for j in range(c):
            mo[i, j] = b1 * mo[i, j] + (1.0 - b1) * g[i, j]
            ve[i, j] = b2 * ve[i, j] + (1.0 - b2) * g[i, j] * g[i, j]
            p[i, j] -= lr * (mo[i, j] / bc1) / (sqrt(ve[i, j] / bc2) + eps)


cdef void adam_1d(double[::1] p, double[::1] mo, double[::1] ve,
                  const double[::1] g, double lr, double b1, double b2,
                  double eps, double bc1, double bc2) noexcept nogil:
    cdef int j, c = p.shape[0]
    for j in range(c):
        mo[j] = b1 * mo[j] + (1.0 - b1) * g[j]
        ve[j] = b2 * ve[j] + (1.0 - b2) * g[j] * g[j]
        p[j] -= lr * (mo[j] / bc1) / (sqrt(ve[j] / bc2) + eps)


def batch_scores(list weights, list biases, x, double dropout_rate=0.0,
                 int dropout_layer=-1, mask_base=None):
    """Scores for every row of ``x``; see the fallback for the contract."""
    cdef double[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef int n = xv.shape[0], L = len(weights)
    cdef bint use_mask = dropout_rate > 0.0 and mask_base is not None
    cdef u64 mbase = 0
    if use_mask:
        mbase = <u64>(int(mask_base) & 0xFFFFFFFFFFFFFFFF)

    a_arr = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, ::1] a
    cdef double[:, ::1] z
    cdef double[:, ::1] w
    cdef double[::1] b
    cdef int l, i, j, h
    cdef double inv_keep
    cdef u64 ctr
    for l in range(L - 1):
        w = weights[l]
        b = biases[l]
        a = a_arr
        z_arr = np.empty((n, w.shape[1]), dtype=np.float64)
        z = z_arr
        affine(a, w, b, z, n)
        relu_from(z, z, n)
        if use_mask and l == dropout_layer:
            h = z.shape[1]
            inv_keep = 1.0 / (1.0 - dropout_rate)
            for i in range(n):
                for j in range(h):
                    ctr = mbase + <u64>(i * h + j)
                    if unit_from(ctr) >= dropout_rate:
                        z[i, j] *= inv_keep
                    else:
                        z[i, j] = 0.0
        a_arr = z_arr
    w = weights[L - 1]
    b = biases[L - 1]
    a = a_arr
    out_arr = np.empty((n, 1), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    affine(a, w, b, out, n)
    scores_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] scores = scores_arr
    cdef double s
    for i in range(n):
        s = 1.0 / (1.0 + exp(-out[i, 0]))
        if s < SCORE_EPS:
            s = SCORE_EPS
        elif s > 1.0 - SCORE_EPS:
            s = 1.0 - SCORE_EPS
        scores[i] = s
    return scores_arr


def run_train_epoch(list weights, list biases, list m_w, list v_w, list m_b,
                    list v_b, trainable, x, y, perm, int batch_size, double lr,
                    double beta1, double beta2, double eps, double dropout_rate,
                    int dropout_layer, mask_base, long long adam_step):
    """One epoch of mini-batch Adam; mirrors the fallback contract exactly."""
    cdef double[:, ::1] xv = x
    cdef double[::1] yv = y
    cdef long long[::1] permv = perm
    cdef int n = xv.shape[0], L = len(weights)
    cdef u64 mbase = <u64>(int(mask_base) & 0xFFFFFFFFFFFFFFFF)
    cdef long long t = adam_step
    cdef double loss_sum = 0.0

    trainable_arr = np.asarray(trainable, dtype=np.uint8)
    cdef unsigned char[::1] trainv = trainable_arr

    # Scratch buffers sized for a full batch; the final short batch uses the
    # leading rows only.
    acts = [np.empty((batch_size, xv.shape[1]), dtype=np.float64)]
    zs, deltas, gws, gbs = [], [], [], []
    cdef int l
    for l in range(L):
        dout = weights[l].shape[1]
        zs.append(np.empty((batch_size, dout), dtype=np.float64))
        acts.append(np.empty((batch_size, dout), dtype=np.float64))
        deltas.append(np.empty((batch_size, dout), dtype=np.float64))
        gws.append(np.empty_like(weights[l]))
        gbs.append(np.empty_like(biases[l]))
    maskbuf = None
    if dropout_rate > 0.0 and 0 <= dropout_layer < L - 1:
        maskbuf = np.empty((batch_size, weights[dropout_layer].shape[1]), dtype=np.float64)

    cdef int start, m, i
    cdef double bc1, bc2, s, cs, target
    cdef double[:, ::1] zv, dv
    for start in range(0, n, batch_size):
        m = min(batch_size, n - start)
        gather_rows(xv, permv, start, m, acts[0])
        for l in range(L - 1):
            affine(acts[l], weights[l], biases[l], zs[l], m)
            relu_from(zs[l], acts[l + 1], m)
            if maskbuf is not None and l == dropout_layer:
                dropout_forward(acts[l + 1], maskbuf, m, mbase, start, dropout_rate)
        affine(acts[L - 1], weights[L - 1], biases[L - 1], zs[L - 1], m)

        zv = zs[L - 1]
        dv = deltas[L - 1]
        for i in range(m):
            s = 1.0 / (1.0 + exp(-zv[i, 0]))
            cs = s
            if cs < SCORE_EPS:
                cs = SCORE_EPS
            elif cs > 1.0 - SCORE_EPS:
                cs = 1.0 - SCORE_EPS
            target = yv[permv[start + i]]
            loss_sum -= target * log(cs) + (1.0 - target) * log(1.0 - cs)
            dv[i, 0] = (s - target) / m

        for l in range(L - 1, -1, -1):
            grad_accum(acts[l], deltas[l], gws[l], gbs[l], m)
            if l > 0:
                matmul_a_bt(deltas[l], weights[l], deltas[l - 1], m)
                relu_mask_back(
                    deltas[l - 1], zs[l - 1],
                    maskbuf if (maskbuf is not None and l - 1 == dropout_layer) else deltas[l - 1],
                    maskbuf is not None and l - 1 == dropout_layer, m,
                )

        t += 1
        bc1 = 1.0 - beta1 ** t
        bc2 = 1.0 - beta2 ** t
        for l in range(L):
            if not trainv[l]:
                continue
            adam_2d(weights[l], m_w[l], v_w[l], gws[l], lr, beta1, beta2, eps, bc1, bc2)
            adam_1d(biases[l], m_b[l], v_b[l], gbs[l], lr, beta1, beta2, eps, bc1, bc2)
    return loss_sum, t
