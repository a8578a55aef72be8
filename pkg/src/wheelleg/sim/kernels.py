"""Numba-compiled inner loop of the planar rigid-body simulator.

Maximal coordinates: 7 bodies (base + 2x thigh/calf/wheel), 6 revolute
joints, heightfield contacts. One call advances a single 5 ms substep:
external forces -> velocity-level sequential impulses (joints, joint
limits, contacts with Coulomb friction and Baumgarte bias) -> integration
-> positional projection of the joints.
"""

from __future__ import annotations

import numpy as np
from numba import njit

NUM_BODIES = 7
NUM_JOINTS = 6

CONTACT_SLOP = 2e-4
BAUMGARTE = 0.1
MAX_BIAS_VEL = 0.5
JOINT_ANGLE_SLOP = 1e-3


@njit(cache=True)
def _terrain_height(x, hf, hx0, hdx):
    n = hf.shape[0]
    u = (x - hx0) / hdx
    if u <= 0.0:
        return hf[0]
    if u >= n - 1:
        return hf[n - 1]
    i = int(u)
    f = u - i
    return hf[i] * (1.0 - f) + hf[i + 1] * f


@njit(cache=True)
def _circle_vs_terrain(cx, cz, r, hf, hx0, hdx):
    """Deepest contact of a circle against the heightfield polyline.

    Returns (found, px, pz, nx, nz, depth).
    """
    n = hf.shape[0]
    k_lo = int(np.floor((cx - r - hx0) / hdx))
    k_hi = int(np.ceil((cx + r - hx0) / hdx))
    if k_lo < 0:
        k_lo = 0
    if k_hi > n - 2:
        k_hi = n - 2
    best_depth = 0.0
    best_off2 = np.inf
    found = False
    bpx = bpz = bnx = bnz = 0.0
    for k in range(k_lo, k_hi + 1):
        x0 = hx0 + k * hdx
        z0 = hf[k]
        x1 = x0 + hdx
        z1 = hf[k + 1]
        dxs = x1 - x0
        dzs = z1 - z0
        if dzs == 0.0:
            # level segment: clamp the center x directly so that the contact
            # point under an interior center is exactly cx (keeps mirrored
            # worlds bit-for-bit symmetric on flat ground)
            px = cx
            if px < x0:
                px = x0
            elif px > x1:
                px = x1
            pz = z0
            snx = 0.0
            snz = 1.0
        else:
            seg_len2 = dxs * dxs + dzs * dzs
            t = ((cx - x0) * dxs + (cz - z0) * dzs) / seg_len2
            if t < 0.0:
                t = 0.0
            elif t > 1.0:
                t = 1.0
            px = x0 + t * dxs
            pz = z0 + t * dzs
            inv_len = 1.0 / np.sqrt(seg_len2)
            snx = -dzs * inv_len
            snz = dxs * inv_len
        dx_c = cx - px
        dz_c = cz - pz
        dist2 = dx_c * dx_c + dz_c * dz_c
        off2 = dx_c * dx_c
        side = dx_c * snx + dz_c * snz
        if side >= 0.0:
            if dist2 < r * r:
                dist = np.sqrt(dist2)
                depth = r - dist
                # equal depths (coplanar neighbors) break toward the contact
                # nearest the center, independent of scan direction
                if depth > best_depth or (depth == best_depth and found
                                          and off2 < best_off2):
                    best_depth = depth
                    best_off2 = off2
                    found = True
                    if dist > 1e-12:
                        bnx = dx_c / dist
                        bnz = dz_c / dist
                    else:
                        bnx = snx
                        bnz = snz
                    bpx = px
                    bpz = pz
        else:
            # center below the surface: push out along the segment normal
            depth = r - side
            if depth > best_depth or (depth == best_depth and found
                                      and off2 < best_off2):
                best_depth = depth
                best_off2 = off2
                found = True
                bnx = snx
                bnz = snz
                bpx = px
                bpz = pz
    # beyond either end the ground continues flat at the edge height,
    # matching the clamped height query, so nothing ever leaves the world
    # sideways and free-falls
    if cx < hx0 or cx > hx0 + (n - 1) * hdx:
        pz = hf[0] if cx < hx0 else hf[n - 1]
        depth = r - (cz - pz)
        if depth > best_depth:
            best_depth = depth
            found = True
            bnx = 0.0
            bnz = 1.0
            bpx = cx
            bpz = pz
    return found, bpx, bpz, bnx, bnz, best_depth


@njit(cache=True)
def step_kernel(
    pos, angle, vel, omega,
    inv_m, inv_i,
    jp, jc, anchor_p, anchor_c, jlim_lo, jlim_hi, jlimited,
    cand_body, cand_off, cand_r, cand_flag,
    torques, joint_damping, ext_fx, ext_fz,
    hf, hx0, hdx,
    mu_s, mu_d,
    dt, g, vel_iters, pos_iters,
):
    """Advance one physics substep in place.

    Returns (seg_flags[7], clearances[2], normal_impulses[n_cand],
    max_penetration, err_body). err_body >= 0 flags a non-finite state.
    """
    n_cand = cand_body.shape[0]

    # -- external forces ---------------------------------------------------
    acc = np.zeros((NUM_BODIES, 2))
    angacc = np.zeros(NUM_BODIES)
    for b in range(NUM_BODIES):
        acc[b, 1] = -g
    acc[0, 0] += ext_fx * inv_m[0]
    acc[0, 1] += ext_fz * inv_m[0]
    for j in range(NUM_JOINTS):
        angacc[jc[j]] += torques[j] * inv_i[jc[j]]
        angacc[jp[j]] -= torques[j] * inv_i[jp[j]]
    for b in range(NUM_BODIES):
        vel[b, 0] += acc[b, 0] * dt
        vel[b, 1] += acc[b, 1] * dt
        omega[b] += angacc[b] * dt

    # implicit viscous joint damping (unconditionally stable at any b)
    for j in range(NUM_JOINTS):
        b_d = joint_damping[j]
        if b_d > 0.0:
            a = jp[j]
            b = jc[j]
            k_ang = inv_i[a] + inv_i[b]
            wrel = omega[b] - omega[a]
            lam = -dt * b_d * wrel / (1.0 + dt * b_d * k_ang)
            omega[a] -= inv_i[a] * lam
            omega[b] += inv_i[b] * lam

    # -- joint precomputation ----------------------------------------------
    ra = np.zeros((NUM_JOINTS, 2))
    rb = np.zeros((NUM_JOINTS, 2))
    for j in range(NUM_JOINTS):
        a = jp[j]
        b = jc[j]
        ca = np.cos(angle[a]); sa = np.sin(angle[a])
        cb = np.cos(angle[b]); sb = np.sin(angle[b])
        ra[j, 0] = ca * anchor_p[j, 0] - sa * anchor_p[j, 1]
        ra[j, 1] = sa * anchor_p[j, 0] + ca * anchor_p[j, 1]
        rb[j, 0] = cb * anchor_c[j, 0] - sb * anchor_c[j, 1]
        rb[j, 1] = sb * anchor_c[j, 0] + cb * anchor_c[j, 1]

    # -- contact generation --------------------------------------------------
    c_active = np.zeros(n_cand, dtype=np.int64)
    c_nx = np.zeros(n_cand)
    c_nz = np.zeros(n_cand)
    c_rx = np.zeros(n_cand)
    c_rz = np.zeros(n_cand)
    c_depth = np.zeros(n_cand)
    c_pn = np.zeros(n_cand)
    c_pt = np.zeros(n_cand)
    max_pen = 0.0
    for k in range(n_cand):
        b = cand_body[k]
        cb_ = np.cos(angle[b]); sb_ = np.sin(angle[b])
        cx = pos[b, 0] + cb_ * cand_off[k, 0] - sb_ * cand_off[k, 1]
        cz = pos[b, 1] + sb_ * cand_off[k, 0] + cb_ * cand_off[k, 1]
        found, px, pz, nx, nz, depth = _circle_vs_terrain(
            cx, cz, cand_r[k], hf, hx0, hdx
        )
        if found:
            c_active[k] = 1
            c_nx[k] = nx
            c_nz[k] = nz
            c_rx[k] = px - pos[b, 0]
            c_rz[k] = pz - pos[b, 1]
            c_depth[k] = depth
            if depth > max_pen:
                max_pen = depth

    # -- sequential impulses (velocity) --------------------------------------
    for _ in range(vel_iters):
        # revolute joints
        for j in range(NUM_JOINTS):
            a = jp[j]
            b = jc[j]
            rax = ra[j, 0]; raz = ra[j, 1]
            rbx = rb[j, 0]; rbz = rb[j, 1]
            # relative velocity of anchor on child minus parent
            rvx = vel[b, 0] - omega[b] * rbz - (vel[a, 0] - omega[a] * raz)
            rvz = vel[b, 1] + omega[b] * rbx - (vel[a, 1] + omega[a] * rax)
            ma = inv_m[a]; mb = inv_m[b]
            ia = inv_i[a]; ib = inv_i[b]
            k11 = ma + mb + ia * raz * raz + ib * rbz * rbz
            k12 = -ia * rax * raz - ib * rbx * rbz
            k22 = ma + mb + ia * rax * rax + ib * rbx * rbx
            det = k11 * k22 - k12 * k12
            px_ = -(k22 * rvx - k12 * rvz) / det
            pz_ = -(-k12 * rvx + k11 * rvz) / det
            vel[a, 0] -= ma * px_
            vel[a, 1] -= ma * pz_
            omega[a] -= ia * (rax * pz_ - raz * px_)
            vel[b, 0] += mb * px_
            vel[b, 1] += mb * pz_
            omega[b] += ib * (rbx * pz_ - rbz * px_)

        # joint angle limits
        for j in range(NUM_JOINTS):
            if jlimited[j] == 0:
                continue
            a = jp[j]
            b = jc[j]
            q = angle[b] - angle[a]
            k_ang = inv_i[a] + inv_i[b]
            if q < jlim_lo[j]:
                wrel = omega[b] - omega[a]
                bias = BAUMGARTE / dt * (jlim_lo[j] - q)
                if bias > MAX_BIAS_VEL:
                    bias = MAX_BIAS_VEL
                lam = (bias - wrel) / k_ang
                if lam > 0.0:
                    omega[a] -= inv_i[a] * lam
                    omega[b] += inv_i[b] * lam
            elif q > jlim_hi[j]:
                wrel = omega[b] - omega[a]
                bias = BAUMGARTE / dt * (jlim_hi[j] - q)
                if bias < -MAX_BIAS_VEL:
                    bias = -MAX_BIAS_VEL
                lam = (bias - wrel) / k_ang
                if lam < 0.0:
                    omega[a] -= inv_i[a] * lam
                    omega[b] += inv_i[b] * lam

        # contacts
        for k in range(n_cand):
            if c_active[k] == 0:
                continue
            b = cand_body[k]
            nx = c_nx[k]; nz = c_nz[k]
            rx = c_rx[k]; rz = c_rz[k]
            mb = inv_m[b]; ib = inv_i[b]
            # normal
            vpx = vel[b, 0] - omega[b] * rz
            vpz = vel[b, 1] + omega[b] * rx
            vn = vpx * nx + vpz * nz
            rxn = rx * nz - rz * nx
            kn = mb + ib * rxn * rxn
            pen = c_depth[k] - CONTACT_SLOP
            bias = 0.0
            if pen > 0.0:
                bias = BAUMGARTE / dt * pen
                if bias > MAX_BIAS_VEL:
                    bias = MAX_BIAS_VEL
            lam = (bias - vn) / kn
            pn_new = c_pn[k] + lam
            if pn_new < 0.0:
                pn_new = 0.0
            dlam = pn_new - c_pn[k]
            c_pn[k] = pn_new
            vel[b, 0] += mb * dlam * nx
            vel[b, 1] += mb * dlam * nz
            omega[b] += ib * dlam * rxn
            # friction along the tangent
            tx = -nz
            tz = nx
            vpx = vel[b, 0] - omega[b] * rz
            vpz = vel[b, 1] + omega[b] * rx
            vt = vpx * tx + vpz * tz
            rxt = rx * tz - rz * tx
            kt = mb + ib * rxt * rxt
            lam_t = -vt / kt
            pt_new = c_pt[k] + lam_t
            hi_s = mu_s * c_pn[k]
            hi_d = mu_d * c_pn[k]
            if pt_new > hi_s:
                pt_new = hi_d
            elif pt_new < -hi_s:
                pt_new = -hi_d
            dlam_t = pt_new - c_pt[k]
            c_pt[k] = pt_new
            vel[b, 0] += mb * dlam_t * tx
            vel[b, 1] += mb * dlam_t * tz
            omega[b] += ib * dlam_t * rxt

    # -- integrate ------------------------------------------------------------
    # velocity-Verlet-style position update: exact for the smooth force part
    half_dt2 = 0.5 * dt * dt
    for b in range(NUM_BODIES):
        pos[b, 0] += vel[b, 0] * dt - acc[b, 0] * half_dt2
        pos[b, 1] += vel[b, 1] * dt - acc[b, 1] * half_dt2
        angle[b] += omega[b] * dt - angacc[b] * half_dt2

    # -- positional projection of joints ---------------------------------------
    for _ in range(pos_iters):
        for j in range(NUM_JOINTS):
            a = jp[j]
            b = jc[j]
            ca = np.cos(angle[a]); sa = np.sin(angle[a])
            cb2 = np.cos(angle[b]); sb2 = np.sin(angle[b])
            rax = ca * anchor_p[j, 0] - sa * anchor_p[j, 1]
            raz = sa * anchor_p[j, 0] + ca * anchor_p[j, 1]
            rbx = cb2 * anchor_c[j, 0] - sb2 * anchor_c[j, 1]
            rbz = sb2 * anchor_c[j, 0] + cb2 * anchor_c[j, 1]
            cx_err = pos[b, 0] + rbx - (pos[a, 0] + rax)
            cz_err = pos[b, 1] + rbz - (pos[a, 1] + raz)
            ma = inv_m[a]; mb = inv_m[b]
            ia = inv_i[a]; ib = inv_i[b]
            k11 = ma + mb + ia * raz * raz + ib * rbz * rbz
            k12 = -ia * rax * raz - ib * rbx * rbz
            k22 = ma + mb + ia * rax * rax + ib * rbx * rbx
            det = k11 * k22 - k12 * k12
            px_ = -(k22 * cx_err - k12 * cz_err) / det
            pz_ = -(-k12 * cx_err + k11 * cz_err) / det
            pos[a, 0] -= ma * px_
            pos[a, 1] -= ma * pz_
            angle[a] -= ia * (rax * pz_ - raz * px_)
            pos[b, 0] += mb * px_
            pos[b, 1] += mb * pz_
            angle[b] += ib * (rbx * pz_ - rbz * px_)

        # joint limit positional clamp
        for j in range(NUM_JOINTS):
            if jlimited[j] == 0:
                continue
            a = jp[j]
            b = jc[j]
            q = angle[b] - angle[a]
            corr = 0.0
            if q < jlim_lo[j] - JOINT_ANGLE_SLOP:
                corr = jlim_lo[j] - JOINT_ANGLE_SLOP - q
            elif q > jlim_hi[j] + JOINT_ANGLE_SLOP:
                corr = jlim_hi[j] + JOINT_ANGLE_SLOP - q
            if corr != 0.0:
                k_ang = inv_i[a] + inv_i[b]
                lam = corr / k_ang
                angle[a] -= inv_i[a] * lam
                angle[b] += inv_i[b] * lam

        # contact positional projection (split impulse: adds no kinetic energy)
        for k in range(n_cand):
            b = cand_body[k]
            cb_ = np.cos(angle[b]); sb_ = np.sin(angle[b])
            cx = pos[b, 0] + cb_ * cand_off[k, 0] - sb_ * cand_off[k, 1]
            cz = pos[b, 1] + sb_ * cand_off[k, 0] + cb_ * cand_off[k, 1]
            found, px, pz, nx, nz, depth = _circle_vs_terrain(
                cx, cz, cand_r[k], hf, hx0, hdx
            )
            if not found or depth <= CONTACT_SLOP:
                continue
            rx = px - pos[b, 0]
            rz = pz - pos[b, 1]
            rxn = rx * nz - rz * nx
            kn = inv_m[b] + inv_i[b] * rxn * rxn
            corr = 0.8 * (depth - CONTACT_SLOP)
            if corr > 0.05:
                corr = 0.05
            lam = corr / kn
            pos[b, 0] += inv_m[b] * lam * nx
            pos[b, 1] += inv_m[b] * lam * nz
            angle[b] += inv_i[b] * lam * rxn

    # final contacts-only sweep: the joint projection above can push supporting
    # bodies back into the ground, so resolve any leftover overlap in full here
    # (the sub-mm joint error it introduces is absorbed on the next step)
    for k in range(n_cand):
        b = cand_body[k]
        cb_ = np.cos(angle[b]); sb_ = np.sin(angle[b])
        cx = pos[b, 0] + cb_ * cand_off[k, 0] - sb_ * cand_off[k, 1]
        cz = pos[b, 1] + sb_ * cand_off[k, 0] + cb_ * cand_off[k, 1]
        found, px, pz, nx, nz, depth = _circle_vs_terrain(
            cx, cz, cand_r[k], hf, hx0, hdx
        )
        if not found or depth <= CONTACT_SLOP:
            continue
        rx = px - pos[b, 0]
        rz = pz - pos[b, 1]
        rxn = rx * nz - rz * nx
        kn = inv_m[b] + inv_i[b] * rxn * rxn
        corr = depth - CONTACT_SLOP
        if corr > 0.05:
            corr = 0.05
        lam = corr / kn
        pos[b, 0] += inv_m[b] * lam * nx
        pos[b, 1] += inv_m[b] * lam * nz
        angle[b] += inv_i[b] * lam * rxn

    # -- report -----------------------------------------------------------------
    # post-step penetration across all candidates
    max_pen = 0.0
    for k in range(n_cand):
        b = cand_body[k]
        cb_ = np.cos(angle[b]); sb_ = np.sin(angle[b])
        cx = pos[b, 0] + cb_ * cand_off[k, 0] - sb_ * cand_off[k, 1]
        cz = pos[b, 1] + sb_ * cand_off[k, 0] + cb_ * cand_off[k, 1]
        found, _, _, _, _, depth = _circle_vs_terrain(
            cx, cz, cand_r[k], hf, hx0, hdx
        )
        if found and depth > max_pen:
            max_pen = depth

    err_body = -1
    for b in range(NUM_BODIES):
        if not (
            np.isfinite(pos[b, 0]) and np.isfinite(pos[b, 1])
            and np.isfinite(angle[b])
            and np.isfinite(vel[b, 0]) and np.isfinite(vel[b, 1])
            and np.isfinite(omega[b])
        ):
            err_body = b
            break

    seg_flags = np.zeros(7, dtype=np.int64)
    for k in range(n_cand):
        if c_active[k] == 1 and c_pn[k] > 0.0:
            seg_flags[cand_flag[k]] = 1

    # wheel rim-bottom clearance, measured vertically (post-integration)
    clearances = np.zeros(2)
    wheel_r = cand_r[n_cand - 1]
    for i in range(2):
        wb = 3 if i == 0 else 6
        h = _terrain_height(pos[wb, 0], hf, hx0, hdx)
        u = pos[wb, 1] - wheel_r - h
        clearances[i] = u if u > 0.0 else 0.0
        if clearances[i] < 1e-4:
            seg_flags[5 + i] = 1

    return seg_flags, clearances, c_pn, c_pt, max_pen, err_body
