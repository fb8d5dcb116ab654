# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels for the jump Ornstein-Uhlenbeck benchmark family.

Each kernel integrates a block of independent samples with the jump-adapted
Euler-Maruyama recursion used by ``slowfast._engine``; the floating-point
operation order matches the NumPy engine so both backends agree to rounding.
Noise is addressed through Philox4x32-10 exactly as in ``slowfast.randomness``.
"""

from libc.math cimport sin, cos, tanh, sqrt, log, fabs, isfinite, INFINITY
from libc.stdint cimport uint32_t, uint64_t

cdef double TWO_PI = 6.283185307179586
cdef double INV_2_53 = 1.0 / 9007199254740992.0
cdef double BLOWUP = 1e12


cdef inline void philox(uint32_t* c, uint32_t k0, uint32_t k1) noexcept nogil:
    cdef uint64_t p0, p1
    cdef uint32_t a0, a1, a2, a3
    cdef int r
    a0 = c[0]; a1 = c[1]; a2 = c[2]; a3 = c[3]
    for r in range(10):
        if r:
            k0 = k0 + 0x9E3779B9u
            k1 = k1 + 0xBB67AE85u
        p0 = <uint64_t>0xD2511F53u * a0
        p1 = <uint64_t>0xCD9E8D57u * a2
        a0, a1, a2, a3 = (<uint32_t>(p1 >> 32)) ^ a1 ^ k0, <uint32_t>p1, (<uint32_t>(p0 >> 32)) ^ a3 ^ k1, <uint32_t>p0
    c[0] = a0; c[1] = a1; c[2] = a2; c[3] = a3


cdef inline void uniforms(uint64_t key, uint64_t c0, uint64_t c1, uint64_t sample,
                          double* u1, double* u2) noexcept nogil:
    cdef uint32_t c[4]
    c[0] = <uint32_t>c0
    c[1] = <uint32_t>c1
    c[2] = <uint32_t>(sample & 0xFFFFFFFFu)
    c[3] = <uint32_t>(sample >> 32)
    philox(c, <uint32_t>(key & 0xFFFFFFFFu), <uint32_t>(key >> 32))
    u1[0] = <double>(((<uint64_t>c[0] >> 5) << 26) | (<uint64_t>c[1] >> 6)) * INV_2_53
    u2[0] = <double>(((<uint64_t>c[2] >> 5) << 26) | (<uint64_t>c[3] >> 6)) * INV_2_53


cdef inline double normal(uint64_t key, uint64_t step, uint64_t substep, uint64_t sample) noexcept nogil:
    cdef double u1, u2
    uniforms(key, step, substep << 8, sample, &u1, &u2)
    return sqrt(-2.0 * log(1.0 - u1)) * cos(TWO_PI * u2)


cdef inline double step_inc(uint64_t key, long k, int r, double h, uint64_t s) noexcept nogil:
    # whole-step increment on the dyadically refined lattice
    cdef double P, hp, left
    cdef long idx
    cdef int l
    if r == 0:
        return sqrt(h) * normal(key, k, 0, s)
    P = sqrt(h * <double>(1 << r)) * normal(key, k >> r, 0, s)
    for l in range(1, r + 1):
        hp = h * <double>(1 << (r - l + 1))
        idx = k >> (r - l)
        left = 0.5 * P + (0.5 * sqrt(hp)) * normal(key, idx >> 1, l, s)
        if idx & 1:
            P = P - left
        else:
            P = left
    return P


cdef inline double take(uint64_t key, long k, int r, uint64_t* j, double* u, double* R, double t_end,
                        double s_cut, uint64_t s) noexcept nogil:
    # Brownian-bridge cut of the remaining step increment at s_cut
    cdef double L, a, inc
    if s_cut >= t_end:
        inc = R[0]
        R[0] = 0.0
        u[0] = s_cut
        return inc
    L = t_end - u[0]
    a = s_cut - u[0]
    inc = (a / L) * R[0] + sqrt(a * (t_end - s_cut) / L) * normal(key, k, ((j[0] + 1) << 8) | <uint64_t>r, s)
    R[0] = R[0] - inc
    j[0] += 1
    u[0] = s_cut
    return inc


cdef inline double step_len(long k, double t1, double dt, int r) noexcept nogil:
    if r == 0:
        return t1 - k * dt
    return dt


cdef inline double expo(uint64_t key, uint64_t index, uint64_t sample) noexcept nogil:
    cdef double u1, u2
    uniforms(key, index, 0, sample, &u1, &u2)
    return -log(1.0 - u1)


cdef inline double read(double y, double gamma, bint bounded) noexcept nogil:
    if bounded:
        return gamma * tanh(y)
    return gamma * y


cdef inline bint bad(double v) noexcept nogil:
    return not isfinite(v) or fabs(v) > BLOWUP


cdef inline double step_end(long k, long K, double dt, double T) noexcept nogil:
    if k == K - 1:
        return T
    return (k + 1) * dt


def coupled(double gamma, double sigma, double kappa, double sigma_b, double c0, bint bounded,
            double lam1, double rate_n, double lam_kappa,
            double x0, double y0, double inv_eps, double inv_sqrt_eps,
            double T, double dt, long K,
            uint64_t key_b, uint64_t key_w, uint64_t key_p, uint64_t key_n,
            uint64_t start, double[::1] out_x, double[::1] out_y, double[::1] out_xb,
            bint want_bar, int refine):
    """Terminal states of the coupled system (and the averaged path) per sample.

    Returns ``(-1, 0.0)`` on success or ``(sample, time)`` of the first blow-up.
    """
    cdef Py_ssize_t n = out_x.shape[0], i
    cdef long k
    cdef uint64_t s, js, jf, ip, jn
    cdef double x, y, xb, tp, tn, t1, ts, u, s_next, f_next, tau, db, dw, a_left, cx, sx, xn, corr
    cdef double h, rb, rw, ub, uw
    cdef bint jump_p, jump_n, after
    cdef Py_ssize_t fail = -1
    cdef double fail_t = 0.0
    with nogil:
        for i in range(n):
            s = start + i
            x = x0; y = y0; xb = x0
            tp = INFINITY; tn = INFINITY; ip = 0; jn = 0
            if lam1 > 0:
                tp = expo(key_p, 0, s) / lam1
                ip = 1
            if rate_n > 0:
                tn = expo(key_n, 0, s) / rate_n
                jn = 1
            for k in range(K):
                t1 = step_end(k, K, dt, T)
                ts = k * dt
                h = step_len(k, t1, dt, refine)
                rb = step_inc(key_b, k, refine, h, s)
                rw = step_inc(key_w, k, refine, h, s)
                ub = ts
                uw = ts
                js = 0
                jf = 0
                while True:
                    jump_p = tp <= t1
                    s_next = tp if jump_p else t1
                    sx = sin(x)
                    a_left = sx + read(y, gamma, bounded)
                    cx = cos(x)
                    corr = 0.0
                    after = False
                    u = ts
                    while True:
                        jump_n = tn <= s_next
                        f_next = tn if jump_n else s_next
                        tau = f_next - u
                        if after:
                            corr = corr + ((sx + read(y, gamma, bounded)) - a_left) * tau
                        dw = take(key_w, k, refine, &jf, &uw, &rw, t1, f_next, s)
                        y = y + (inv_eps * (-(y - cx))) * tau + inv_sqrt_eps * (sigma * dw)
                        if not jump_n:
                            break
                        y = y + kappa
                        tn = tn + expo(key_n, jn, s) / rate_n
                        jn += 1
                        u = f_next
                        after = True
                    tau = s_next - ts
                    db = take(key_b, k, refine, &js, &ub, &rb, t1, s_next, s)
                    xn = x + a_left * tau + corr + sigma_b * db
                    if want_bar:
                        xb = xb + (sin(xb) + gamma * (cos(xb) + lam_kappa)) * tau + sigma_b * db
                    x = xn
                    if not jump_p:
                        break
                    x = x + c0
                    xb = xb + c0
                    tp = tp + expo(key_p, ip, s) / lam1
                    ip += 1
                    ts = s_next
                if bad(x) or bad(y) or (want_bar and bad(xb)):
                    fail = i
                    fail_t = t1
                    break
            if fail >= 0:
                break
            out_x[i] = x
            out_y[i] = y
            out_xb[i] = xb
    if fail >= 0:
        return start + fail, fail_t
    return -1, 0.0


def averaged(double gamma, double sigma_b, double c0, double lam1, double lam_kappa,
             double x0, double eta0, double T, double dt, long K,
             uint64_t key_b, uint64_t key_p, uint64_t start,
             double[::1] out_xb, double[::1] out_eta, bint want_eta, int refine):
    """Averaged path with analytic averaged drift, optionally with its first variation."""
    cdef Py_ssize_t n = out_xb.shape[0], i
    cdef long k
    cdef uint64_t s, js, ip
    cdef double xb, eta, tp, t1, ts, s_next, tau, db, dab, rb, ub
    cdef bint jump_p
    cdef Py_ssize_t fail = -1
    cdef double fail_t = 0.0
    with nogil:
        for i in range(n):
            s = start + i
            xb = x0; eta = eta0
            tp = INFINITY; ip = 0
            if lam1 > 0:
                tp = expo(key_p, 0, s) / lam1
                ip = 1
            for k in range(K):
                t1 = step_end(k, K, dt, T)
                ts = k * dt
                rb = step_inc(key_b, k, refine, step_len(k, t1, dt, refine), s)
                ub = ts
                js = 0
                while True:
                    jump_p = tp <= t1
                    s_next = tp if jump_p else t1
                    tau = s_next - ts
                    db = take(key_b, k, refine, &js, &ub, &rb, t1, s_next, s)
                    if want_eta:
                        dab = cos(xb) - gamma * sin(xb)
                        eta = eta + (dab * eta) * tau
                    xb = xb + (sin(xb) + gamma * (cos(xb) + lam_kappa)) * tau + sigma_b * db
                    if not jump_p:
                        break
                    xb = xb + c0
                    tp = tp + expo(key_p, ip, s) / lam1
                    ip += 1
                    ts = s_next
                if bad(xb) or (want_eta and bad(eta)):
                    fail = i
                    fail_t = t1
                    break
            if fail >= 0:
                break
            out_xb[i] = xb
            out_eta[i] = eta
    if fail >= 0:
        return start + fail, fail_t
    return -1, 0.0


def frozen(double gamma, double sigma, double kappa, bint bounded,
           double x, double y0, double T, double dt, long K,
           uint64_t key_w, uint64_t key_n, double rate_n, uint64_t start,
           long k_lo, long k_hi, long record_every,
           double[::1] out_y, double[:, ::1] out_int, double[:, ::1] out_rec, int refine):
    """Frozen fast process at fixed slow state ``x``.

    Accumulates the left-point integral of the slow drift ``a(x, Y)`` over
    uniform steps ``k_lo <= k < k_hi``, split into ``out_int.shape[1]`` equal
    bins of steps, and records ``Y`` after every ``record_every``-th step.
    """
    cdef Py_ssize_t n = out_y.shape[0], i, b
    cdef Py_ssize_t nbins = out_int.shape[1]
    cdef long k, r
    cdef uint64_t s, jf, jn
    cdef double y, tn, t1, u, f_next, tau, dw, sx, cx, acc, rw, uw
    cdef bint jump_n, inside
    cdef Py_ssize_t fail = -1
    cdef double fail_t = 0.0
    sx = sin(x)
    cx = cos(x)
    with nogil:
        for i in range(n):
            s = start + i
            y = y0
            for b in range(nbins):
                out_int[i, b] = 0.0
            tn = INFINITY; jn = 0
            if rate_n > 0:
                tn = expo(key_n, 0, s) / rate_n
                jn = 1
            r = 0
            for k in range(K):
                t1 = step_end(k, K, dt, T)
                u = k * dt
                rw = step_inc(key_w, k, refine, step_len(k, t1, dt, refine), s)
                uw = u
                jf = 0
                inside = k_lo <= k < k_hi
                if inside:
                    b = (k - k_lo) * nbins // (k_hi - k_lo)
                    acc = out_int[i, b]
                while True:
                    jump_n = tn <= t1
                    f_next = tn if jump_n else t1
                    tau = f_next - u
                    dw = take(key_w, k, refine, &jf, &uw, &rw, t1, f_next, s)
                    if inside:
                        acc = acc + (sx + read(y, gamma, bounded)) * tau
                    y = y + (1.0 * (-(y - cx))) * tau + 1.0 * (sigma * dw)
                    if not jump_n:
                        break
                    y = y + kappa
                    tn = tn + expo(key_n, jn, s) / rate_n
                    jn += 1
                    u = f_next
                if inside:
                    out_int[i, b] = acc
                if bad(y):
                    fail = i
                    fail_t = t1
                    break
                if record_every > 0 and (k + 1) % record_every == 0:
                    out_rec[i, r] = y
                    r += 1
            if fail >= 0:
                break
            out_y[i] = y
    if fail >= 0:
        return start + fail, fail_t
    return -1, 0.0
