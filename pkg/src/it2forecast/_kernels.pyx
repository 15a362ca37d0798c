# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-sample forward/backward/update loop.

Mirrors ``network.forward``, ``gradients.backward`` and ``gradients.project``
operation for operation; the pure-Python path in ``_fallback`` is the
reference these are tested against.
"""

import numpy as np
from libc.math cimport fabs, log, log1p

cdef double LOG_MIN = log(1e-12)
cdef double LOG_MAX = log1p(-1e-12)
cdef double SIGMA_MIN = 1e-3


cdef inline double _clamp(double v) noexcept nogil:
    if v < LOG_MIN:
        return LOG_MIN
    if v > LOG_MAX:
        return LOG_MAX
    return v


cdef inline bint _live(double v) noexcept nogil:
    return v > LOG_MIN and v < LOG_MAX


cdef inline double _clip01(double v) noexcept nogil:
    if v < 0.0:
        return 0.0
    if v > 1.0:
        return 1.0
    return v


cdef class _Net:
    cdef double[:, ::1] m1, m2, sg, cm, cs
    cdef double[:, :, ::1] c, s
    cdef double[::1] ql, qr, qo
    cdef public double l
    cdef bint use_co, use_link, shared
    cdef Py_ssize_t n, M, K, Kc
    # workspace
    cdef double[::1] sl, su, sc, yl, yr, yp, y, den, a, g
    cdef double[:, ::1] flo, fup, wl, wr
    # gradients
    cdef double[:, ::1] gm1, gm2, gsg, gcm, gcs
    cdef double[:, :, ::1] gc, gs
    cdef double[::1] gql, gqr, gqo, dsu, dsl, dsc
    cdef double gl

    def __init__(self, p):
        self.m1 = p.m1
        self.m2 = p.m2
        self.sg = p.sigma
        self.cm = p.co_m
        self.cs = p.co_sigma
        self.c = p.c
        self.s = p.s
        self.ql = p.q_l
        self.qr = p.q_r
        self.qo = p.q_o
        self.l = p.l
        self.use_co = p.use_co
        self.use_link = p.use_link
        self.shared = p.shared_consequent
        self.M = p.m1.shape[0]
        self.n = p.m1.shape[1]
        self.K = p.q_o.shape[0]
        self.Kc = p.c.shape[1]
        M, K, n, Kc = self.M, self.K, self.n, self.Kc
        self.sl = np.zeros(M)
        self.su = np.zeros(M)
        self.sc = np.zeros(K)
        self.yl = np.zeros(K)
        self.yr = np.zeros(K)
        self.yp = np.zeros(K)
        self.y = np.zeros(K)
        self.den = np.zeros(K)
        self.a = np.zeros(K)
        self.g = np.zeros(K)
        self.flo = np.zeros((M, K))
        self.fup = np.zeros((M, K))
        self.wl = np.zeros((M, K))
        self.wr = np.zeros((M, K))
        self.gm1 = np.zeros((M, n))
        self.gm2 = np.zeros((M, n))
        self.gsg = np.zeros((M, n))
        self.gcm = np.zeros((K, n))
        self.gcs = np.zeros((K, n))
        self.gc = np.zeros((M, Kc, n + 1))
        self.gs = np.zeros((M, Kc, n + 1))
        self.gql = np.zeros(K)
        self.gqr = np.zeros(K)
        self.gqo = np.zeros(K)
        self.dsu = np.zeros(M)
        self.dsl = np.zeros(M)
        self.dsc = np.zeros(K)

    cdef void forward(self, const double[::1] x) noexcept nogil:
        cdef Py_ssize_t i, j, k, kc
        cdef double xj, mid, d, lo, up, acc, centre, spread, prev
        for i in range(self.M):
            self.sl[i] = 0.0
            self.su[i] = 0.0
            for j in range(self.n):
                xj = x[j]
                mid = 0.5 * (self.m1[i, j] + self.m2[i, j])
                if xj <= mid:
                    d = (xj - self.m2[i, j]) / self.sg[i, j]
                else:
                    d = (xj - self.m1[i, j]) / self.sg[i, j]
                lo = -0.5 * d * d
                if xj < self.m1[i, j]:
                    d = (xj - self.m1[i, j]) / self.sg[i, j]
                    up = -0.5 * d * d
                elif xj > self.m2[i, j]:
                    d = (xj - self.m2[i, j]) / self.sg[i, j]
                    up = -0.5 * d * d
                else:
                    up = 0.0
                self.sl[i] += _clamp(lo)
                self.su[i] += _clamp(up)
        for k in range(self.K):
            acc = 0.0
            if self.use_co:
                for j in range(self.n):
                    d = (x[j] - self.cm[k, j]) / self.cs[k, j]
                    acc += _clamp(-0.5 * d * d)
            self.sc[k] = acc
        for i in range(self.M):
            for kc in range(self.Kc):
                centre = self.c[i, kc, 0]
                spread = self.s[i, kc, 0]
                for j in range(self.n):
                    centre += self.c[i, kc, j + 1] * x[j]
                    spread += self.s[i, kc, j + 1] * fabs(x[j])
                self.wl[i, kc] = centre - spread
                self.wr[i, kc] = centre + spread
            if self.shared:
                for k in range(1, self.K):
                    self.wl[i, k] = self.wl[i, 0]
                    self.wr[i, k] = self.wr[i, 0]
        for k in range(self.K):
            self.den[k] = 0.0
            lo = 0.0   # sum f_lower * w_l
            up = 0.0   # sum f_upper * w_l
            centre = 0.0  # sum f_lower * w_r
            spread = 0.0  # sum f_upper * w_r
            for i in range(self.M):
                self.flo[i, k] = -1.0 / (self.sl[i] + self.sc[k])
                self.fup[i, k] = -1.0 / (self.su[i] + self.sc[k])
                self.den[k] += self.flo[i, k] + self.fup[i, k]
                lo += self.flo[i, k] * self.wl[i, k]
                up += self.fup[i, k] * self.wl[i, k]
                centre += self.flo[i, k] * self.wr[i, k]
                spread += self.fup[i, k] * self.wr[i, k]
            self.yl[k] = ((1 - self.ql[k]) * lo + self.ql[k] * up) / self.den[k]
            self.yr[k] = ((1 - self.qr[k]) * centre + self.qr[k] * spread) / self.den[k]
            self.yp[k] = self.qo[k] * self.yl[k] + (1 - self.qo[k]) * self.yr[k]
        prev = x[self.n - 1]
        for k in range(self.K):
            prev = (1 - self.l) * self.yp[k] + self.l * prev
            self.y[k] = prev

    cdef void backward(self, const double[::1] x, const double[::1] t, bint stage2) noexcept nogil:
        cdef Py_ssize_t i, j, k, kc
        cdef double acc, prev, gl_k, gr_k, dfu, dfl, d1, d2, sig, xj, mid, raw, diff, sdu, sdl
        cdef double l = self.l
        acc = 0.0
        for k in range(self.K - 1, -1, -1):
            acc = (self.y[k] - t[k]) + l * acc
            self.a[k] = acc
            self.g[k] = (1 - l) * acc
        self.gl = 0.0
        if self.use_link:
            prev = x[self.n - 1]
            for k in range(self.K):
                self.gl += self.a[k] * (prev - self.yp[k])
                prev = self.y[k]
        for i in range(self.M):
            self.dsu[i] = 0.0
            self.dsl[i] = 0.0
            for kc in range(self.Kc):
                for j in range(self.n + 1):
                    self.gc[i, kc, j] = 0.0
                    self.gs[i, kc, j] = 0.0
        for k in range(self.K):
            self.dsc[k] = 0.0
            gl_k = self.g[k] * self.qo[k]
            gr_k = self.g[k] * (1 - self.qo[k])
            self.gqo[k] = self.g[k] * (self.yl[k] - self.yr[k])
            self.gql[k] = 0.0
            self.gqr[k] = 0.0
            kc = 0 if self.shared else k
            for i in range(self.M):
                self.gql[k] += (self.fup[i, k] - self.flo[i, k]) * self.wl[i, k]
                self.gqr[k] += (self.fup[i, k] - self.flo[i, k]) * self.wr[i, k]
                sdl = gl_k * ((1 - self.ql[k]) * self.flo[i, k] + self.ql[k] * self.fup[i, k]) / self.den[k]
                sdu = gr_k * ((1 - self.qr[k]) * self.flo[i, k] + self.qr[k] * self.fup[i, k]) / self.den[k]
                self.gc[i, kc, 0] += sdl + sdu
                self.gs[i, kc, 0] += sdu - sdl
                for j in range(self.n):
                    self.gc[i, kc, j + 1] += (sdl + sdu) * x[j]
                    self.gs[i, kc, j + 1] += (sdu - sdl) * fabs(x[j])
                dfu = (gl_k * (self.ql[k] * self.wl[i, k] - self.yl[k])
                       + gr_k * (self.qr[k] * self.wr[i, k] - self.yr[k])) / self.den[k]
                dfl = (gl_k * ((1 - self.ql[k]) * self.wl[i, k] - self.yl[k])
                       + gr_k * ((1 - self.qr[k]) * self.wr[i, k] - self.yr[k])) / self.den[k]
                dfu = dfu * self.fup[i, k] * self.fup[i, k]
                dfl = dfl * self.flo[i, k] * self.flo[i, k]
                self.dsu[i] += dfu
                self.dsl[i] += dfl
                self.dsc[k] += dfu + dfl
            self.gql[k] *= gl_k / self.den[k]
            self.gqr[k] *= gr_k / self.den[k]
        for k in range(self.K):
            for j in range(self.n):
                self.gcm[k, j] = 0.0
                self.gcs[k, j] = 0.0
                if self.use_co:
                    diff = x[j] - self.cm[k, j]
                    sig = self.cs[k, j]
                    raw = -0.5 * (diff / sig) * (diff / sig)
                    if _live(raw):
                        self.gcm[k, j] = self.dsc[k] * diff / (sig * sig)
                        self.gcs[k, j] = self.dsc[k] * diff * diff / (sig * sig * sig)
        for i in range(self.M):
            for j in range(self.n):
                self.gm1[i, j] = 0.0
                self.gm2[i, j] = 0.0
                self.gsg[i, j] = 0.0
                if not stage2:
                    continue
                xj = x[j]
                sig = self.sg[i, j]
                d1 = xj - self.m1[i, j]
                d2 = xj - self.m2[i, j]
                sdu = self.dsu[i]
                sdl = self.dsl[i]
                if xj < self.m1[i, j]:
                    if _live(-0.5 * (d1 / sig) * (d1 / sig)):
                        self.gm1[i, j] += sdu * d1 / (sig * sig)
                        self.gsg[i, j] += sdu * d1 * d1 / (sig * sig * sig)
                elif xj > self.m2[i, j]:
                    if _live(-0.5 * (d2 / sig) * (d2 / sig)):
                        self.gm2[i, j] += sdu * d2 / (sig * sig)
                        self.gsg[i, j] += sdu * d2 * d2 / (sig * sig * sig)
                mid = 0.5 * (self.m1[i, j] + self.m2[i, j])
                if xj <= mid:
                    if _live(-0.5 * (d2 / sig) * (d2 / sig)):
                        self.gm2[i, j] += sdl * d2 / (sig * sig)
                        self.gsg[i, j] += sdl * d2 * d2 / (sig * sig * sig)
                else:
                    if _live(-0.5 * (d1 / sig) * (d1 / sig)):
                        self.gm1[i, j] += sdl * d1 / (sig * sig)
                        self.gsg[i, j] += sdl * d1 * d1 / (sig * sig * sig)

    cdef void apply(self, double eta, bint stage2) noexcept nogil:
        cdef Py_ssize_t i, j, k, kc
        cdef double mid
        for i in range(self.M):
            for kc in range(self.Kc):
                for j in range(self.n + 1):
                    self.c[i, kc, j] -= eta * self.gc[i, kc, j]
                    self.s[i, kc, j] -= eta * self.gs[i, kc, j]
                    if self.s[i, kc, j] < 0.0:
                        self.s[i, kc, j] = 0.0
        for k in range(self.K):
            self.ql[k] = _clip01(self.ql[k] - eta * self.gql[k])
            self.qr[k] = _clip01(self.qr[k] - eta * self.gqr[k])
            self.qo[k] = _clip01(self.qo[k] - eta * self.gqo[k])
            if self.use_co:
                for j in range(self.n):
                    self.cm[k, j] -= eta * self.gcm[k, j]
                    self.cs[k, j] -= eta * self.gcs[k, j]
                    if self.cs[k, j] < SIGMA_MIN:
                        self.cs[k, j] = SIGMA_MIN
        if self.use_link:
            self.l = _clip01(self.l - eta * self.gl)
        if stage2:
            for i in range(self.M):
                for j in range(self.n):
                    self.m1[i, j] -= eta * self.gm1[i, j]
                    self.m2[i, j] -= eta * self.gm2[i, j]
                    self.sg[i, j] -= eta * self.gsg[i, j]
                    if self.sg[i, j] < SIGMA_MIN:
                        self.sg[i, j] = SIGMA_MIN
                    if self.m1[i, j] > self.m2[i, j]:
                        mid = 0.5 * (self.m1[i, j] + self.m2[i, j])
                        self.m1[i, j] = mid
                        self.m2[i, j] = mid

    def gradient_arrays(self):
        return dict(
            m1=np.asarray(self.gm1).copy(), m2=np.asarray(self.gm2).copy(),
            sigma=np.asarray(self.gsg).copy(), co_m=np.asarray(self.gcm).copy(),
            co_sigma=np.asarray(self.gcs).copy(), c=np.asarray(self.gc).copy(),
            s=np.asarray(self.gs).copy(), q_l=np.asarray(self.gql).copy(),
            q_r=np.asarray(self.gqr).copy(), q_o=np.asarray(self.gqo).copy(), l=self.gl,
        )


def predict_batch(p, const double[:, ::1] X):
    cdef _Net net = _Net(p)
    cdef Py_ssize_t r, k, N = X.shape[0]
    out = np.empty((N, net.K))
    cdef double[:, ::1] o = out
    with nogil:
        for r in range(N):
            net.forward(X[r])
            for k in range(net.K):
                o[r, k] = net.y[k]
    return out


def sample_gradient(p, const double[::1] x, const double[::1] t, bint stage2):
    cdef _Net net = _Net(p)
    net.forward(x)
    net.backward(x, t, stage2)
    return net.gradient_arrays()


def sgd_epoch(p, const double[:, ::1] X, const double[:, ::1] T, const long long[::1] order,
              double eta, bint stage2):
    """One pass of per-sample projected SGD, updating ``p``'s arrays in place."""
    cdef _Net net = _Net(p)
    cdef Py_ssize_t r, idx, N = order.shape[0]
    with nogil:
        for r in range(N):
            idx = order[r]
            net.forward(X[idx])
            net.backward(X[idx], T[idx], stage2)
            net.apply(eta, stage2)
    p.l = net.l
