"""Numba kernels for the planar finger/object simulator.

Everything here works on flat float64 arrays so that one compiled routine can
advance a whole batch of environments. The public, typed surface lives in
``dexgain.dynamics``.
"""

import math

import numpy as np
from numba import njit

SHAPE_DISK = 0
SHAPE_BOX = 1

STATUS_OK = 0
STATUS_DIVERGED = 1


@njit(cache=True)
def _finger_model(q, dq, i0, nl, bx, by, phi, lens, masses, arm, grav, out_M, out_bias, out_J, out_tip, out_vtip):
    """Mass matrix, Coriolis+gravity bias, tip Jacobian, tip position/velocity."""
    l1 = lens[0]
    m1 = masses[0]
    lc1 = 0.5 * l1
    i1 = m1 * l1 * l1 / 12.0
    a1 = phi + q[i0]
    c1 = math.cos(a1)
    s1 = math.sin(a1)
    if nl == 1:
        out_M[0, 0] = i1 + m1 * lc1 * lc1 + arm
        out_M[0, 1] = 0.0
        out_M[1, 0] = 0.0
        out_M[1, 1] = 1.0
        out_bias[0] = m1 * grav * lc1 * c1
        out_bias[1] = 0.0
        out_J[0, 0] = -l1 * s1
        out_J[1, 0] = l1 * c1
        out_J[0, 1] = 0.0
        out_J[1, 1] = 0.0
        out_tip[0] = bx + l1 * c1
        out_tip[1] = by + l1 * s1
        out_vtip[0] = out_J[0, 0] * dq[i0]
        out_vtip[1] = out_J[1, 0] * dq[i0]
        return
    l2 = lens[1]
    m2 = masses[1]
    lc2 = 0.5 * l2
    i2 = m2 * l2 * l2 / 12.0
    a12 = a1 + q[i0 + 1]
    c12 = math.cos(a12)
    s12 = math.sin(a12)
    cq2 = math.cos(q[i0 + 1])
    sq2 = math.sin(q[i0 + 1])
    d1 = dq[i0]
    d2 = dq[i0 + 1]
    out_M[0, 0] = i1 + m1 * lc1 * lc1 + i2 + m2 * (l1 * l1 + lc2 * lc2 + 2.0 * l1 * lc2 * cq2) + arm
    out_M[0, 1] = i2 + m2 * (lc2 * lc2 + l1 * lc2 * cq2)
    out_M[1, 0] = out_M[0, 1]
    out_M[1, 1] = i2 + m2 * lc2 * lc2 + arm
    h = m2 * l1 * lc2 * sq2
    out_bias[0] = -h * (2.0 * d1 * d2 + d2 * d2) + grav * (m1 * lc1 * c1 + m2 * (l1 * c1 + lc2 * c12))
    out_bias[1] = h * d1 * d1 + grav * m2 * lc2 * c12
    out_J[0, 0] = -l1 * s1 - l2 * s12
    out_J[0, 1] = -l2 * s12
    out_J[1, 0] = l1 * c1 + l2 * c12
    out_J[1, 1] = l2 * c12
    out_tip[0] = bx + l1 * c1 + l2 * c12
    out_tip[1] = by + l1 * s1 + l2 * s12
    out_vtip[0] = out_J[0, 0] * d1 + out_J[0, 1] * d2
    out_vtip[1] = out_J[1, 0] * d1 + out_J[1, 1] * d2


@njit(cache=True)
def _implicit_slip(v, a, eps):
    """Solve w = v - a*tanh(w/eps) for w (backward-Euler regularized Coulomb)."""
    if a <= 0.0 or v == 0.0:
        return v
    lo = 0.0
    hi = v
    if v < 0.0:
        lo = v
        hi = 0.0
    # linearized (stick) solution is exact when |w| << eps
    w = v * eps / (eps + a)
    for _ in range(30):
        th = math.tanh(w / eps)
        g = w - v + a * th
        if abs(g) < 1e-13 * (abs(v) + eps):
            break
        if g > 0.0:
            hi = w
        else:
            lo = w
        dg = 1.0 + a * (1.0 - th * th) / eps
        w_new = w - g / dg
        if w_new <= lo or w_new >= hi:
            w_new = 0.5 * (lo + hi)
        w = w_new
    return w


@njit(cache=True)
def _tip_vs_object(px, py, kind, ox, oy, oth, dims, tip_r, out):
    """Penetration depth, normal (object->tip) and lever arm for one fingertip.

    out = [depth, nx, ny, rx, ry]; depth <= 0 means no contact.
    """
    if kind == SHAPE_DISK:
        dx = px - ox
        dy = py - oy
        dist = math.sqrt(dx * dx + dy * dy)
        r = dims[0]
        out[0] = r + tip_r - dist
        if out[0] <= 0.0 or dist < 1e-12:
            out[0] = min(out[0], 0.0)
            return
        out[1] = dx / dist
        out[2] = dy / dist
        out[3] = out[1] * r
        out[4] = out[2] * r
        return
    ct = math.cos(oth)
    st = math.sin(oth)
    dx = px - ox
    dy = py - oy
    lx = ct * dx + st * dy
    ly = -st * dx + ct * dy
    hx = dims[0]
    hy = dims[1]
    cx = min(max(lx, -hx), hx)
    cy = min(max(ly, -hy), hy)
    ex = lx - cx
    ey = ly - cy
    dist = math.sqrt(ex * ex + ey * ey)
    if dist > 1e-12:
        out[0] = tip_r - dist
        if out[0] <= 0.0:
            return
        nlx = ex / dist
        nly = ey / dist
    else:
        # tip centre inside the box: push out through the nearest face
        gx = hx - abs(lx)
        gy = hy - abs(ly)
        if gx < gy:
            nlx = 1.0 if lx >= 0.0 else -1.0
            nly = 0.0
            cx = nlx * hx
            out[0] = tip_r + gx
        else:
            nlx = 0.0
            nly = 1.0 if ly >= 0.0 else -1.0
            cy = nly * hy
            out[0] = tip_r + gy
    out[1] = ct * nlx - st * nly
    out[2] = st * nlx + ct * nly
    out[3] = ct * cx - st * cy
    out[4] = st * cx + ct * cy


@njit(cache=True)
def _substep(
    q, dq, obj, objv, qdes, kp, kd, tau_ff, pd_on, fext,
    nf, nl, base, lens, masses, arm, damp, jlim, grav, tip_r,
    ground_on, ground_h, kind, dims, omass, oinertia, mu,
    kn, cn, eps, tau_max, dt,
    cont, gcont, tau_acc, M, bias, J, tip, vtip, geo, tau, new_dq,
):
    nj = nf * nl
    fobj_x = fext[0]
    fobj_y = fext[1] - omass * grav
    tobj = 0.0
    ox = obj[0]
    oy = obj[1]
    oth = obj[2]
    vx = objv[0]
    vy = objv[1]
    om = objv[2]

    for j in range(nj):
        if pd_on:
            t = kp[j] * (qdes[j] - q[j]) - kd[j] * dq[j]
            if t > tau_max:
                t = tau_max
            elif t < -tau_max:
                t = -tau_max
            tau[j] = t
        else:
            tau[j] = tau_ff[j]
        tau_acc[j] += tau[j]

    for f in range(nf):
        i0 = f * nl
        _finger_model(q, dq, i0, nl, base[f, 0], base[f, 1], base[f, 2], lens[f], masses[f],
                      arm, grav, M, bias, J, tip, vtip)
        ftx = 0.0
        fty = 0.0
        cont[f, 0] = 0.0
        cont[f, 1] = 0.0
        cont[f, 2] = 0.0
        for k in range(5):
            geo[k] = 0.0
        _tip_vs_object(tip[0], tip[1], kind, ox, oy, oth, dims, tip_r, geo)
        depth = geo[0]
        if depth > 0.0:
            nx = geo[1]
            ny = geo[2]
            rx = geo[3]
            ry = geo[4]
            tx = -ny
            ty = nx
            # object material point velocity at the contact
            vpx = vx - om * ry
            vpy = vy + om * rx
            relx = vtip[0] - vpx
            rely = vtip[1] - vpy
            ddepth = -(relx * nx + rely * ny)
            fn = kn * depth + cn * ddepth
            if fn < 0.0:
                fn = 0.0
            ft = 0.0
            if fn > 0.0 and mu > 0.0:
                # effective inverse mass along the tangent (object + finger)
                rxt = rx * ty - ry * tx
                inv_m = 1.0 / omass + rxt * rxt / oinertia
                det = M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
                jt0 = J[0, 0] * tx + J[1, 0] * ty
                jt1 = J[0, 1] * tx + J[1, 1] * ty
                if nl == 1:
                    inv_m += jt0 * jt0 / M[0, 0]
                else:
                    inv_m += (M[1, 1] * jt0 * jt0 - 2.0 * M[0, 1] * jt0 * jt1 + M[0, 0] * jt1 * jt1) / det
                vs = relx * tx + rely * ty
                w = _implicit_slip(vs, dt * mu * fn * inv_m, eps)
                ft = -mu * fn * math.tanh(w / eps)
            ftx = fn * nx + ft * tx
            fty = fn * ny + ft * ty
            fobj_x -= ftx
            fobj_y -= fty
            tobj -= rx * fty - ry * ftx
            if fn > 0.0:
                cont[f, 0] = 1.0
            cont[f, 1] = fn
            cont[f, 2] = ft
        # generalized forces; passive damping integrated implicitly
        r0 = tau[i0] - bias[0] + J[0, 0] * ftx + J[1, 0] * fty
        if nl == 1:
            denom = M[0, 0] + dt * damp
            new_dq[i0] = (M[0, 0] * dq[i0] + dt * r0) / denom
        else:
            r1 = tau[i0 + 1] - bias[1] + J[0, 1] * ftx + J[1, 1] * fty
            a00 = M[0, 0] + dt * damp
            a11 = M[1, 1] + dt * damp
            a01 = M[0, 1]
            b0 = M[0, 0] * dq[i0] + M[0, 1] * dq[i0 + 1] + dt * r0
            b1 = M[1, 0] * dq[i0] + M[1, 1] * dq[i0 + 1] + dt * r1
            det = a00 * a11 - a01 * a01
            new_dq[i0] = (a11 * b0 - a01 * b1) / det
            new_dq[i0 + 1] = (a00 * b1 - a01 * b0) / det

    # object vs ground
    if ground_on:
        nv = gcont.shape[0]
        for k in range(nv):
            gcont[k, 0] = 0.0
            gcont[k, 1] = 0.0
            gcont[k, 2] = 0.0
            if kind == SHAPE_DISK:
                rx = 0.0
                ry = -dims[0]
            else:
                sx = -1.0 if (k == 0 or k == 3) else 1.0
                sy = -1.0 if k < 2 else 1.0
                lx = sx * dims[0]
                ly = sy * dims[1]
                rx = math.cos(oth) * lx - math.sin(oth) * ly
                ry = math.sin(oth) * lx + math.cos(oth) * ly
            depth = ground_h - (oy + ry)
            if depth <= 0.0:
                continue
            vpx = vx - om * ry
            vpy = vy + om * rx
            fn = kn * depth - cn * vpy
            if fn < 0.0:
                fn = 0.0
            ft = 0.0
            if fn > 0.0 and mu > 0.0:
                inv_m = 1.0 / omass + ry * ry / oinertia
                w = _implicit_slip(vpx, dt * mu * fn * inv_m, eps)
                ft = -mu * fn * math.tanh(w / eps)
            fobj_x += ft
            fobj_y += fn
            tobj += rx * fn - ry * ft
            if fn > 0.0:
                gcont[k, 0] = 1.0
            gcont[k, 1] = fn
            gcont[k, 2] = ft

    # semi-implicit Euler: velocities first, then positions
    for j in range(nj):
        dq[j] = new_dq[j]
        q[j] += dt * dq[j]
        lo = jlim[j, 0]
        hi = jlim[j, 1]
        if q[j] < lo:
            q[j] = lo
            if dq[j] < 0.0:
                dq[j] = 0.0
        elif q[j] > hi:
            q[j] = hi
            if dq[j] > 0.0:
                dq[j] = 0.0
    objv[0] = vx + dt * fobj_x / omass
    objv[1] = vy + dt * fobj_y / omass
    objv[2] = om + dt * tobj / oinertia
    obj[0] = ox + dt * objv[0]
    obj[1] = oy + dt * objv[1]
    obj[2] = oth + dt * objv[2]


@njit(cache=True)
def advance(
    q, dq, obj, objv, qdes, kp, kd, tau_ff, pd_on, fext,
    nf, nl, base, lens, masses, arm, damp, jlim, grav, tip_r,
    ground_on, ground_h, kind, dims, omass, oinertia, mu,
    kn, cn, eps, tau_max, dt, nsub,
    cont, gcont, tau_mean,
):
    """Advance one environment by ``nsub`` substeps in place; returns a status code."""
    nj = nf * nl
    M = np.zeros((2, 2))
    bias = np.zeros(2)
    J = np.zeros((2, 2))
    tip = np.zeros(2)
    vtip = np.zeros(2)
    geo = np.zeros(5)
    tau = np.zeros(nj)
    new_dq = np.zeros(nj)
    for j in range(nj):
        tau_mean[j] = 0.0
    for _ in range(nsub):
        _substep(q, dq, obj, objv, qdes, kp, kd, tau_ff, pd_on, fext,
                 nf, nl, base, lens, masses, arm, damp, jlim, grav, tip_r,
                 ground_on, ground_h, kind, dims, omass, oinertia, mu,
                 kn, cn, eps, tau_max, dt, cont, gcont, tau_mean,
                 M, bias, J, tip, vtip, geo, tau, new_dq)
    for j in range(nj):
        tau_mean[j] /= nsub
    for j in range(nj):
        if not (math.isfinite(q[j]) and math.isfinite(dq[j])):
            return STATUS_DIVERGED
    for k in range(3):
        if not (math.isfinite(obj[k]) and math.isfinite(objv[k])):
            return STATUS_DIVERGED
    return STATUS_OK


@njit(cache=True)
def advance_batch(
    Q, DQ, OBJ, OBJV, QDES, KP, KD, TAU, pd_on, FEXT,
    nf, nl, base, lens, masses, arm, damp, jlim, grav, tip_r,
    ground_on, ground_h, kind, DIMS, OMASS, OINERTIA, MU,
    kn, cn, eps, tau_max, dt, nsub,
    CONT, GCONT, TAUMEAN, STATUS, active,
):
    for i in range(Q.shape[0]):
        if not active[i]:
            continue
        STATUS[i] = advance(
            Q[i], DQ[i], OBJ[i], OBJV[i], QDES[i], KP[i], KD[i], TAU[i], pd_on, FEXT[i],
            nf, nl, base, lens, masses, arm, damp, jlim, grav, tip_r,
            ground_on, ground_h, kind, DIMS[i], OMASS[i], OINERTIA[i], MU[i],
            kn, cn, eps, tau_max, dt, nsub,
            CONT[i], GCONT[i], TAUMEAN[i],
        )
