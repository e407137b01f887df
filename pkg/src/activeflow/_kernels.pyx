# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled sampling kernels. Mirrors ``_kernels_py`` operation for operation."""
import numpy as np
from libc.math cimport exp

BACKEND = "cython"


cdef inline Py_ssize_t _draw(const double* p, Py_ssize_t k, double u) noexcept nogil:
    cdef double total = 0.0
    cdef double s = 0.0
    cdef double thr
    cdef Py_ssize_t j
    for j in range(k):
        total += p[j]
    thr = u * total
    for j in range(k):
        s += p[j]
        if s > thr:
            return j
    for j in range(k - 1, -1, -1):
        if p[j] > 0.0:
            return j
    return k - 1


def categorical(probs, u):
    shape = np.shape(probs)
    nd = len(shape)
    cdef double[:, ::1] p = np.ascontiguousarray(probs, dtype=np.float64).reshape(-1, shape[nd - 1])
    cdef double[::1] uu = np.ascontiguousarray(u, dtype=np.float64).ravel()
    cdef Py_ssize_t n = p.shape[0], k = p.shape[1], r
    out_arr = np.empty(n, dtype=np.int64)
    cdef long long[::1] out = out_arr
    if uu.shape[0] != n:
        raise ValueError("one uniform per row required")
    with nogil:
        for r in range(n):
            out[r] = _draw(&p[r, 0], k, uu[r])
    return out_arr.reshape(shape[:nd - 1])


cdef inline double _kernel_row(const double* post, Py_ssize_t n_data, Py_ssize_t n_slots,
                               Py_ssize_t cur, double scale, double* row) noexcept nogil:
    cdef Py_ssize_t j
    cdef double worst = 0.0
    for j in range(n_slots):
        if j < n_data:
            row[j] = scale * post[j]
        else:
            row[j] = 0.0
    row[cur] = row[cur] + (1.0 - scale)
    for j in range(n_slots):
        if row[j] < 0.0:
            if -row[j] > worst:
                worst = -row[j]
            row[j] = 0.0
        elif row[j] > 1.0:
            row[j] = 1.0
    return worst


def euler_sample(x, post, double scale, u, Py_ssize_t n_slots, double tol=1e-8):
    shape = np.shape(x)
    cdef long long[:, ::1] xx = np.ascontiguousarray(x, dtype=np.int64).reshape(-1, shape[len(shape) - 1])
    cdef Py_ssize_t n = xx.shape[0], L = xx.shape[1]
    cdef Py_ssize_t n_data = np.shape(post)[np.ndim(post) - 1]
    cdef double[:, :, ::1] pp = np.ascontiguousarray(post, dtype=np.float64).reshape(n, L, n_data)
    cdef double[:, ::1] uu = np.ascontiguousarray(u, dtype=np.float64).reshape(n, L)
    out_arr = np.empty((n, L), dtype=np.int64)
    cdef long long[:, ::1] out = out_arr
    row_arr = np.empty(n_slots)
    cdef double[::1] row = row_arr
    cdef Py_ssize_t a, i
    cdef double worst = 0.0, w
    with nogil:
        for a in range(n):
            for i in range(L):
                w = _kernel_row(&pp[a, i, 0], n_data, n_slots, xx[a, i], scale, &row[0])
                if w > worst:
                    worst = w
                out[a, i] = _draw(&row[0], n_slots, uu[a, i])
    if worst > tol:
        return np.array(x, dtype=np.int64), worst
    return out_arr.reshape(shape), worst


cdef inline void _softmax(const double* base, const double* w0, const double* w1,
                          const double* w2, double t, double k, Py_ssize_t n,
                          double* out) noexcept nogil:
    cdef Py_ssize_t j
    cdef double m = -1e300, s = 0.0
    for j in range(n):
        out[j] = base[j] + (t * w0[j] + (1.0 - t) * w1[j] + k * w2[j])
        if out[j] > m:
            m = out[j]
    for j in range(n):
        out[j] = exp(out[j] - m)
        s += out[j]
    for j in range(n):
        out[j] = out[j] / s


cdef inline void _softmax_raw(const double* base, const double* w0, const double* w1,
                              const double* w2, double t, double k, Py_ssize_t n,
                              double* out) noexcept nogil:
    # unnormalised: exp(z - max z)
    cdef Py_ssize_t j
    cdef double m = -1e300
    for j in range(n):
        out[j] = base[j] + (t * w0[j] + (1.0 - t) * w1[j] + k * w2[j])
        if out[j] > m:
            m = out[j]
    for j in range(n):
        out[j] = exp(out[j] - m)


def softmax_generate(w_tok, w_time, x0, times, kappas, scales, u, u_final,
                     Py_ssize_t n_data, Py_ssize_t mask_id, bint carry, bint force_unmask,
                     t_final_feat, double tol=1e-8):
    cdef double[:, :, ::1] W = np.ascontiguousarray(w_tok, dtype=np.float64)
    cdef double[:, ::1] WT = np.ascontiguousarray(w_time, dtype=np.float64)
    x_arr = np.array(x0, dtype=np.int64, order="C", copy=True)
    cdef long long[:, ::1] x = x_arr
    cdef double[::1] tt = np.ascontiguousarray(times, dtype=np.float64)
    cdef double[::1] kk = np.ascontiguousarray(kappas, dtype=np.float64)
    cdef double[::1] sc = np.ascontiguousarray(scales, dtype=np.float64)
    cdef double[:, :, ::1] U = np.ascontiguousarray(u, dtype=np.float64)
    cdef double[:, ::1] UF = np.ascontiguousarray(u_final, dtype=np.float64)
    cdef double[::1] TF = np.ascontiguousarray(t_final_feat, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0], L = x.shape[1], n_slots = W.shape[1]
    cdef Py_ssize_t D = L * n_data
    cdef Py_ssize_t n_steps = tt.shape[0]
    if W.shape[0] != L or W.shape[2] != D or WT.shape[1] != D:
        raise ValueError("weight shapes do not match the sequence batch")
    if U.shape[0] != n_steps or U.shape[1] != n or U.shape[2] != L:
        raise ValueError("uniforms must have shape (steps, n, L)")
    cdef double[::1] base = np.zeros(D)
    cdef double[::1] post = np.empty(n_data)
    cdef double[::1] row = np.empty(n_slots)
    cdef double[::1] tfin = np.empty(D)
    cdef long long[::1] nxt = np.empty(L, dtype=np.int64)
    cdef Py_ssize_t a, s, i, j, cur, new
    cdef double t, worst = 0.0, w, m, z
    with nogil:
        for j in range(D):
            tfin[j] = TF[0] * WT[0, j] + TF[1] * WT[1, j] + TF[2] * WT[2, j]
        for a in range(n):
            for j in range(D):
                base[j] = 0.0
            for i in range(L):
                for j in range(D):
                    base[j] += W[i, x[a, i], j]
            for s in range(n_steps):
                t = tt[s]
                for i in range(L):
                    cur = x[a, i]
                    nxt[i] = cur
                    if carry:
                        # masked slots leave with probability exactly `scale`; seen slots stay
                        if cur == mask_id and U[s, a, i] < sc[s]:
                            _softmax_raw(&base[i * n_data], &WT[0, i * n_data], &WT[1, i * n_data],
                                         &WT[2, i * n_data], t, kk[s], n_data, &post[0])
                            nxt[i] = _draw(&post[0], n_data, U[s, a, i] / sc[s])
                        continue
                    _softmax(&base[i * n_data], &WT[0, i * n_data], &WT[1, i * n_data],
                             &WT[2, i * n_data], t, kk[s], n_data, &post[0])
                    w = _kernel_row(&post[0], n_data, n_slots, cur, sc[s], &row[0])
                    if w > worst:
                        worst = w
                    nxt[i] = _draw(&row[0], n_slots, U[s, a, i])
                if worst > tol:
                    break
                # apply updates only after every position of this step was drawn
                for i in range(L):
                    new = nxt[i]
                    cur = x[a, i]
                    if new != cur:
                        for j in range(D):
                            base[j] += W[i, new, j] - W[i, cur, j]
                        x[a, i] = new
            if worst > tol:
                break
            if force_unmask:
                for i in range(L):
                    if x[a, i] == mask_id:
                        m = -1e300
                        for j in range(n_data):
                            z = base[i * n_data + j] + tfin[i * n_data + j]
                            if z > m:
                                m = z
                        for j in range(n_data):
                            post[j] = exp(base[i * n_data + j] + tfin[i * n_data + j] - m)
                        x[a, i] = _draw(&post[0], n_data, UF[a, i])
    return x_arr, worst
