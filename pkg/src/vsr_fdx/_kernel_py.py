"""Pure-Python fixed-step kernel for the rectifier simulator.

This is the reference implementation; ``_kernel.pyx`` mirrors it operation
for operation so both backends produce the same floating-point results.

Parameter tuple layout (``par``)::

    0 L, 1 C, 2 R, 3 E_pk, 4 omega, 5 vdc_ref, 6 dt, 7 steps_per_control,
    8 steps_per_carrier, 9 kp_v, 10 ki_v, 11 i_max, 12 kp_i, 13 kr_i,
    14 wc, 15 tc, 16 u_floor

Controller state layout (``ctrl``, 10 floats)::

    0 voltage integrator, 1-3 resonant x1 per phase,
    4-6 resonant x2 per phase, 7-9 held modulation per phase

Switch bit order in the permission mask: SaP, SaN, SbP, SbN, ScP, ScN
(bit 0 = SaP).
"""

import math

TWO_PI_3 = 2.0 * math.pi / 3.0


def triangle(phase):
    """Symmetric carrier: -1 at phase 0, +1 at phase 0.5."""
    return 1.0 - 4.0 * abs(phase - 0.5)


def control_update(theta, ia, ib, ic, u, ctrl, par):
    """Voltage PI + per-phase PR current loop. Mutates ``ctrl`` in place."""
    e_pk = par[3]
    w0 = par[4]
    vdc_ref = par[5]
    kp_v = par[9]
    ki_v = par[10]
    i_max = par[11]
    kp_i = par[12]
    kr_i = par[13]
    wc = par[14]
    tc = par[15]
    u_floor = par[16]

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
    cur = (ia, ib, ic)
    for k in range(3):
        th = theta - k * TWO_PI_3
        s = math.sin(th)
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


def substep(n, ia, ib, ic, u, ctrl, par, onset, clear, carrier_offset):
    """Advance one integration step starting at step index ``n``.

    Returns ``(ia, ib, ic, u, mask)`` where ``mask`` is the effective
    per-switch conduction permission applied during the step.
    """
    L = par[0]
    C = par[1]
    R = par[2]
    e_pk = par[3]
    w0 = par[4]
    dt = par[6]
    spc = int(par[7])
    spcar = par[8]

    t = n * dt
    theta = w0 * t
    if n % spc == 0:
        control_update(theta, ia, ib, ic, u, ctrl, par)

    ph = carrier_offset + (n + 0.5) / spcar
    ph = ph - math.floor(ph)
    tri = triangle(ph)

    cur = [ia, ib, ic]
    e = [0.0, 0.0, 0.0]
    v = [0.0, 0.0, 0.0]
    top = [0, 0, 0]
    # 0 floating diode leg, 1 voltage-source (switch on), 2 conducting diode leg
    kind = [0, 0, 0]
    mask = 0
    for k in range(3):
        e[k] = e_pk * math.sin(theta - k * TWO_PI_3)
        m = ctrl[7 + k]
        up_cmd = m >= tri and m > -1.0
        up_ok = up_cmd and not (onset[2 * k] <= t < clear[2 * k])
        lo_ok = (not up_cmd) and not (onset[2 * k + 1] <= t < clear[2 * k + 1])
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

    # resolve floating diode legs against the common-mode voltage
    vn = 0.0
    for _ in range(4):
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
        changed = False
        for k in range(3):
            if kind[k] == 0:
                vimp = e[k] + vn
                if vimp > u:
                    kind[k] = 2
                    v[k] = u
                    top[k] = 1
                    changed = True
                elif vimp < 0.0:
                    kind[k] = 2
                    v[k] = 0.0
                    top[k] = 0
                    changed = True
        if not changed:
            break

    idc = 0.0
    for k in range(3):
        if top[k]:
            idc += cur[k]

    new = [0.0, 0.0, 0.0]
    for k in range(3):
        if kind[k] == 0:
            continue
        x = cur[k] + dt * (e[k] - v[k] + vn) / L
        if kind[k] == 2:
            # ideal diode blocks reverse current
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
    return new[0], new[1], new[2], u_new, mask


def run(n0, n_records, state, ctrl, par, onset, clear, carrier_offset,
        out_t, out_i, out_u, out_theta, out_mask):
    """Integrate ``n_records`` control periods starting at step ``n0``.

    ``state`` (``[ia, ib, ic, u]``) and ``ctrl`` are float64 arrays updated in
    place. Output buffers are filled per record with the state sampled at the
    control instant and the permission mask of the first step of that
    period. Returns the final step index, or ``-1`` when the state became
    non-finite.
    """
    p = [float(x) for x in par]
    on = [float(x) for x in onset]
    cl = [float(x) for x in clear]
    c = [float(x) for x in ctrl]
    off = float(carrier_offset)
    dt = p[6]
    w0 = p[4]
    spc = int(p[7])
    ia, ib, ic, u = (float(x) for x in state)
    n = int(n0)
    status = 0
    for r in range(n_records):
        t = n * dt
        out_t[r] = t
        out_i[r, 0] = ia
        out_i[r, 1] = ib
        out_i[r, 2] = ic
        out_u[r] = u
        out_theta[r] = math.fmod(w0 * t, 2.0 * math.pi)
        for s in range(spc):
            ia, ib, ic, u, mask = substep(n, ia, ib, ic, u, c, p, on, cl, off)
            if s == 0:
                out_mask[r] = mask
            n += 1
        if not (math.isfinite(ia) and math.isfinite(ib) and math.isfinite(ic)
                and math.isfinite(u)):
            status = -1
            break
    state[0] = ia
    state[1] = ib
    state[2] = ic
    state[3] = u
    for k in range(10):
        ctrl[k] = c[k]
    return status if status < 0 else n
