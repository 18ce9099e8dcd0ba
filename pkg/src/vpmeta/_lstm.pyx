# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled LSTM forward / BPTT kernels.

Same array layout and results as ``vpmeta._lstm_py``; the per-timestep
matrix products go straight to BLAS so batch-1 calls avoid interpreter
overhead.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


cdef inline void _mm(char ta, char tb, int m, int n, int k, double alpha,
                     double* a, int lda, double* b, int ldb, double beta,
                     double* c, int ldc) noexcept nogil:
    # row-major C(m, n) = alpha * op(A)(m, k) @ op(B)(k, n) + beta * C
    dgemm(&tb, &ta, &n, &m, &k, &alpha, b, &ldb, a, &lda, &beta, c, &ldc)


cdef inline double _sig(double z) noexcept nogil:
    return 1.0 / (1.0 + exp(-z))


cdef inline double _tanh(double z) noexcept nogil:
    # glibc exp is roughly twice as fast as tanh
    return 1.0 - 2.0 / (1.0 + exp(2.0 * z))


def lstm_forward(const double[:, ::1] W, const double[:, ::1] V, const double[:, :, ::1] X):
    cdef int B = X.shape[0], S = X.shape[1], I = X.shape[2]
    cdef int H = V.shape[0] - 1, O = V.shape[1]
    cdef int K = I + H + 1, G = 4 * H
    cdef double[:, ::1] xh = np.zeros((B, K))
    cdef double[:, ::1] z = np.empty((B, G))
    cdef double[:, ::1] c = np.zeros((B, H))
    cdef double[:, ::1] out = np.empty((B, O))
    cdef int t, b, j
    cdef double ig, fg, gg, og
    with nogil:
        for b in range(B):
            xh[b, K - 1] = 1.0
        for t in range(S):
            for b in range(B):
                for j in range(I):
                    xh[b, j] = X[b, t, j]
            _mm(b'n', b'n', B, G, K, 1.0, &xh[0, 0], K, <double*>&W[0, 0], G, 0.0, &z[0, 0], G)
            for b in range(B):
                for j in range(H):
                    ig = _sig(z[b, j])
                    fg = _sig(z[b, H + j])
                    gg = _tanh(z[b, 2 * H + j])
                    og = _sig(z[b, 3 * H + j])
                    c[b, j] = fg * c[b, j] + ig * gg
                    xh[b, I + j] = og * _tanh(c[b, j])
        for b in range(B):
            for j in range(O):
                out[b, j] = V[H, j]
        _mm(b'n', b'n', B, O, H, 1.0, &xh[0, I], K, <double*>&V[0, 0], O, 1.0, &out[0, 0], O)
    return np.asarray(out)


def lstm_loss_grad(const double[:, ::1] W, const double[:, ::1] V,
                   const double[:, :, ::1] X, const double[:, ::1] Y):
    cdef int B = X.shape[0], S = X.shape[1], I = X.shape[2]
    cdef int H = V.shape[0] - 1, O = V.shape[1]
    cdef int K = I + H + 1, G = 4 * H
    cdef double[:, :, ::1] xh = np.zeros((S + 1, B, K))
    cdef double[:, :, ::1] acts = np.empty((S, B, G))
    cdef double[:, :, ::1] cs = np.zeros((S + 1, B, H))
    cdef double[:, :, ::1] tcs = np.empty((S, B, H))
    cdef double[:, ::1] z = np.empty((B, G))
    cdef double[:, ::1] r = np.empty((B, O))
    cdef double[:, ::1] dh = np.empty((B, H))
    cdef double[:, ::1] dc = np.zeros((B, H))
    cdef double[:, :, ::1] dz = np.empty((S, B, G))
    dW_arr = np.empty((K, G))
    dV_arr = np.empty((H + 1, O))
    cdef double[:, ::1] dW = dW_arr
    cdef double[:, ::1] dV = dV_arr
    cdef int t, b, j
    cdef double ig, fg, gg, og, tc, dcv, dhv, scale, loss = 0.0
    with nogil:
        for t in range(S + 1):
            for b in range(B):
                xh[t, b, K - 1] = 1.0
        # xh[t] holds [x_t, h_{t-1}, 1]; xh[S] carries h_{S-1} in its hidden slot
        for t in range(S):
            for b in range(B):
                for j in range(I):
                    xh[t, b, j] = X[b, t, j]
            _mm(b'n', b'n', B, G, K, 1.0, &xh[t, 0, 0], K, <double*>&W[0, 0], G, 0.0, &z[0, 0], G)
            for b in range(B):
                for j in range(H):
                    ig = _sig(z[b, j])
                    fg = _sig(z[b, H + j])
                    gg = _tanh(z[b, 2 * H + j])
                    og = _sig(z[b, 3 * H + j])
                    acts[t, b, j] = ig
                    acts[t, b, H + j] = fg
                    acts[t, b, 2 * H + j] = gg
                    acts[t, b, 3 * H + j] = og
                    cs[t + 1, b, j] = fg * cs[t, b, j] + ig * gg
                    tc = _tanh(cs[t + 1, b, j])
                    tcs[t, b, j] = tc
                    xh[t + 1, b, I + j] = og * tc

        for b in range(B):
            for j in range(O):
                r[b, j] = V[H, j]
        _mm(b'n', b'n', B, O, H, 1.0, &xh[S, 0, I], K, <double*>&V[0, 0], O, 1.0, &r[0, 0], O)
        scale = 2.0 / (B * O)
        for j in range(O):
            dV[H, j] = 0.0
        for b in range(B):
            for j in range(O):
                r[b, j] = r[b, j] - Y[b, j]
                loss = loss + r[b, j] * r[b, j]
                r[b, j] = scale * r[b, j]
                dV[H, j] = dV[H, j] + r[b, j]
        loss = loss / (B * O)
        # dV[:H] = h^T dy ; dh = dy V[:H]^T
        _mm(b't', b'n', H, O, B, 1.0, &xh[S, 0, I], K, &r[0, 0], O, 0.0, &dV[0, 0], O)
        _mm(b'n', b't', B, H, O, 1.0, &r[0, 0], O, <double*>&V[0, 0], O, 0.0, &dh[0, 0], H)

        for t in range(S - 1, -1, -1):
            for b in range(B):
                for j in range(H):
                    ig = acts[t, b, j]
                    fg = acts[t, b, H + j]
                    gg = acts[t, b, 2 * H + j]
                    og = acts[t, b, 3 * H + j]
                    tc = tcs[t, b, j]
                    dhv = dh[b, j]
                    dcv = dc[b, j] + dhv * og * (1.0 - tc * tc)
                    dz[t, b, j] = dcv * gg * ig * (1.0 - ig)
                    dz[t, b, H + j] = dcv * cs[t, b, j] * fg * (1.0 - fg)
                    dz[t, b, 2 * H + j] = dcv * ig * (1.0 - gg * gg)
                    dz[t, b, 3 * H + j] = dhv * tc * og * (1.0 - og)
                    dc[b, j] = dcv * fg
            if t > 0:
                _mm(b'n', b't', B, H, G, 1.0, &dz[t, 0, 0], G, <double*>&W[I, 0], G, 0.0, &dh[0, 0], H)
        # one product over all timesteps: dW = sum_t xh[t]^T dz[t]
        _mm(b't', b'n', K, G, S * B, 1.0, &xh[0, 0, 0], K, &dz[0, 0, 0], G, 0.0, &dW[0, 0], G)
    return loss, dW_arr, dV_arr
