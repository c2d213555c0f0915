# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled fixed-step kernel; mirrors ``_kernel_py`` operation for operation."""

from libc.math cimport sin, floor, fabs, fmod, isfinite, M_PI

cdef double TWO_PI_3 = 2.0 * M_PI / 3.0


cdef inline double triangle(double phase) nogil:
    return 1.0 - 4.0 * fabs(phase - 0.5)


cdef void control_update(double theta, double ia, double ib, double ic,
                         double u, double* ctrl, const double* par) nogil:
    cdef double e_pk = par[3]
    cdef double w0 = par[4]
    cdef double vdc_ref = par[5]
    cdef double kp_v = par[9]
    cdef double ki_v = par[10]
    cdef double i_max = par[11]
    cdef double kp_i = par[12]
    cdef double kr_i = par[13]
    cdef double wc = par[14]
    cdef double tc = par[15]
    cdef double u_floor = par[16]
    cdef double ev, vi, amp, ud, th, s, err, x1, x2, v, m
    cdef double cur[3]
    cdef int k

    ev = vdc_ref - u
    vi = ctrl[0] + ki_v * ev * tc
    if vi > i_max:
        vi = i_max
    elif vi < -i_max:
        vi = -i_max
    ctrl[0] = vi
    amp = kp_v * ev + vi
    if amp > i_max:
        amp = i_max
    elif amp < -i_max:
        amp = -i_max

    ud = u if u > u_floor else u_floor
    cur[0] = ia
    cur[1] = ib
    cur[2] = ic
    for k in range(3):
        th = theta - k * TWO_PI_3
        s = sin(th)
        err = amp * s - cur[k]
        x1 = ctrl[1 + k]
        x2 = ctrl[4 + k]
        x1 = x1 + tc * (err - 2.0 * wc * x1 - w0 * x2)
        x2 = x2 + tc * w0 * x1
        ctrl[1 + k] = x1
        ctrl[4 + k] = x2
        v = e_pk * s - (kp_i * err + 2.0 * wc * kr_i * x1)
        m = 2.0 * v / ud
        if m > 1.0:
            m = 1.0
        elif m < -1.0:
            m = -1.0
        ctrl[7 + k] = m


cdef int substep(long long n, double* st, double* ctrl, const double* par,
                 const double* onset, const double* clear,
                 double carrier_offset) nogil:
    cdef double L = par[0]
    cdef double C = par[1]
    cdef double R = par[2]
    cdef double e_pk = par[3]
    cdef double w0 = par[4]
    cdef double dt = par[6]
    cdef long long spc = <long long>par[7]
    cdef double spcar = par[8]
    cdef double t, theta, ph, tri, m, vn, acc, vimp, idc, x, s, corr, u, u_new
    cdef double cur[3]
    cdef double e[3]
    cdef double v[3]
    cdef double new[3]
    cdef int top[3]
    cdef int kind[3]
    cdef int mask = 0
    cdef int k, it, cnt, kmax, kmin, changed, nz
    cdef bint up_cmd, up_ok, lo_ok

    u = st[3]
    t = n * dt
    theta = w0 * t
    if n % spc == 0:
        control_update(theta, st[0], st[1], st[2], u, ctrl, par)

    ph = carrier_offset + (n + 0.5) / spcar
    ph = ph - floor(ph)
    tri = triangle(ph)

    for k in range(3):
        cur[k] = st[k]
        v[k] = 0.0
        top[k] = 0
        kind[k] = 0
        new[k] = 0.0
    for k in range(3):
        e[k] = e_pk * sin(theta - k * TWO_PI_3)
        m = ctrl[7 + k]
        up_cmd = m >= tri and m > -1.0
        up_ok = up_cmd and not (onset[2 * k] <= t and t < clear[2 * k])
        lo_ok = (not up_cmd) and not (onset[2 * k + 1] <= t and t < clear[2 * k + 1])
        if up_ok:
            mask |= 1 << (2 * k)
            kind[k] = 1
            v[k] = u
            top[k] = 1
        elif lo_ok:
            mask |= 1 << (2 * k + 1)
            kind[k] = 1
        elif cur[k] > 0.0:
            kind[k] = 2
            v[k] = u
            top[k] = 1
        elif cur[k] < 0.0:
            kind[k] = 2

    vn = 0.0
    for it in range(4):
        cnt = 0
        acc = 0.0
        for k in range(3):
            if kind[k] != 0:
                cnt += 1
                acc += v[k] - e[k]
        if cnt == 0:
            kmax = 0
            kmin = 0
            for k in range(1, 3):
                if e[k] > e[kmax]:
                    kmax = k
                if e[k] < e[kmin]:
                    kmin = k
            if e[kmax] - e[kmin] > u:
                kind[kmax] = 2
                v[kmax] = u
                top[kmax] = 1
                kind[kmin] = 2
                v[kmin] = 0.0
                top[kmin] = 0
                continue
            break
        vn = acc / cnt
        changed = 0
        for k in range(3):
            if kind[k] == 0:
                vimp = e[k] + vn
                if vimp > u:
                    kind[k] = 2
                    v[k] = u
                    top[k] = 1
                    changed = 1
                elif vimp < 0.0:
                    kind[k] = 2
                    v[k] = 0.0
                    top[k] = 0
                    changed = 1
        if not changed:
            break

    idc = 0.0
    for k in range(3):
        if top[k]:
            idc += cur[k]

    for k in range(3):
        if kind[k] == 0:
            continue
        x = cur[k] + dt * (e[k] - v[k] + vn) / L
        if kind[k] == 2:
            if top[k] and x < 0.0:
                x = 0.0
            elif not top[k] and x > 0.0:
                x = 0.0
        new[k] = x

    nz = 0
    s = 0.0
    for k in range(3):
        s += new[k]
        if new[k] != 0.0:
            nz += 1
    if nz > 0 and s != 0.0:
        corr = s / nz
        for k in range(3):
            if new[k] != 0.0:
                new[k] -= corr

    u_new = u + dt * (idc - u / R) / C
    if u_new < 0.0:
        u_new = 0.0
    st[0] = new[0]
    st[1] = new[1]
    st[2] = new[2]
    st[3] = u_new
    return mask


def run(long long n0, int n_records, double[::1] state, double[::1] ctrl,
        double[::1] par, double[::1] onset, double[::1] clear,
        double carrier_offset, double[::1] out_t, double[:, ::1] out_i,
        double[::1] out_u, double[::1] out_theta, unsigned char[::1] out_mask):
    """Same contract as ``_kernel_py.run``."""
    cdef double dt = par[6]
    cdef double w0 = par[4]
    cdef long long spc = <long long>par[7]
    cdef long long n = n0
    cdef double t
    cdef int r, s, mask
    cdef int status = 0
    cdef double st[4]
    cdef double c[10]
    cdef int k
    for k in range(4):
        st[k] = state[k]
    for k in range(10):
        c[k] = ctrl[k]
    with nogil:
        for r in range(n_records):
            t = n * dt
            out_t[r] = t
            out_i[r, 0] = st[0]
            out_i[r, 1] = st[1]
            out_i[r, 2] = st[2]
            out_u[r] = st[3]
            out_theta[r] = fmod(w0 * t, 2.0 * M_PI)
            for s in range(spc):
                mask = substep(n, st, c, &par[0], &onset[0], &clear[0],
                               carrier_offset)
                if s == 0:
                    out_mask[r] = <unsigned char>mask
                n += 1
            if not (isfinite(st[0]) and isfinite(st[1]) and isfinite(st[2])
                    and isfinite(st[3])):
                status = -1
                break
    for k in range(4):
        state[k] = st[k]
    for k in range(10):
        ctrl[k] = c[k]
    if status < 0:
        return -1
    return n
