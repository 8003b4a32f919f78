"""Jitted frame loop for the scheduling simulator.

One call advances a whole reporting window.  All randomness is drawn by the
caller into per-window pools (per-user streams, so runs with different user
counts stay pairwise comparable); the kernel itself is deterministic, pure
float64, and fastmath-free, which keeps repeated runs bit-identical.

Utility curves are passed as per-class parameter rows:

    kind 0: sigmoid     params (x0, -, -)    f = sigma(r - x0)
    kind 1: log         params (c0, c1, c2)  f = c0*ln(c1*r + c2)
    kind 2: linear      params (a, -, -)     f = a*r

with an affine (scale, offset) applied on top.  The power solver works on
the scaled first derivative, so utilities scaled by a common factor give the
same powers with a scaled dual value.

Violation counters (fed back to the caller, which raises):
viol[0] power budget, viol[1] partition, viol[2] rng pool exhausted,
viol[3] queue ring overflow.
"""

import math

import numpy as np
from numba import njit

LN2 = math.log(2.0)
LN10_OVER_10 = math.log(10.0) / 10.0
PL_A = 38.4
PL_B = 20.0 / math.log(10.0)  # 20*log10(d) = PL_B * ln(d)


@njit(cache=True)
def _sig(z):
    if z >= 0.0:
        e = math.exp(-z)
        return 1.0 / (1.0 + e)
    e = math.exp(z)
    return e / (1.0 + e)


@njit(cache=True)
def _fp_raw(kind, q0, q1, q2, r):
    # first derivative of the raw (unscaled) utility at rate r
    if kind == 0:
        s = _sig(r - q0)
        return s * (1.0 - s)
    if kind == 1:
        return q0 * q1 / (q1 * r + q2)
    return q0


@njit(cache=True)
def _t_raw(kind, q0, q1, q2, r):
    # slack f' - f'' of the raw utility (nonnegative for these families)
    if kind == 0:
        s = _sig(r - q0)
        return 2.0 * s * s * (1.0 - s)
    if kind == 1:
        den = q1 * r + q2
        return q0 * q1 / den + q0 * q1 * q1 / (den * den)
    return q0


@njit(cache=True)
def _fval(kind, q0, q1, q2, scale, off, r):
    if kind == 0:
        return scale * _sig(r - q0) + off
    if kind == 1:
        return scale * q0 * math.log(q1 * r + q2) + off
    return scale * q0 * r + off


@njit(cache=True)
def _marginal(b, p, kind, q0, q1, q2, scale):
    den = 1.0 + b * p
    r = math.log(den)
    return b * scale * _fp_raw(kind, q0, q1, q2, r) / den


@njit(cache=True)
def _solve_power(b, nu, budget, kind, q0, q1, q2, scale, p_warm):
    """Power with marginal(p) = nu, capped to [0, budget]; marginal is
    non-increasing so a bracketed Newton iteration is safe."""
    if b <= 0.0:
        return 0.0
    m0 = b * scale * _fp_raw(kind, q0, q1, q2, 0.0)
    if m0 <= nu:
        return 0.0
    mb = _marginal(b, budget, kind, q0, q1, q2, scale)
    if mb > nu:
        return budget
    lo = 0.0
    hi = budget
    p = p_warm
    if not (lo < p < hi):
        p = 0.5 * budget
    for _ in range(60):
        den = 1.0 + b * p
        r = math.log(den)
        m = b * scale * _fp_raw(kind, q0, q1, q2, r) / den
        if abs(m - nu) <= 1e-12 * nu + 1e-300:
            break
        if m > nu:
            lo = p
        else:
            hi = p
        if hi - lo <= 1e-16 * budget:
            break
        t = scale * _t_raw(kind, q0, q1, q2, r)
        dm = -b * b * t / (den * den)
        pn = p - (m - nu) / dm if dm < 0.0 else -1.0
        if pn <= lo or pn >= hi:
            pn = 0.5 * (lo + hi)
        p = pn
    return p


@njit(cache=True)
def _allocate(beta, kcls, ukind, uprm, uscale, budget, tol, nu_state, powers):
    """Budget-constrained allocation by safeguarded Newton on the dual value.

    Warm-started from the previous frame's dual and powers; converges to the
    same point as the reference nested bisection.  Returns the dual value.
    """
    k = beta.shape[0]
    nu_hi = 0.0
    for j in range(k):
        c = kcls[j]
        m0 = beta[j] * uscale[c] * _fp_raw(
            ukind[c], uprm[c, 0], uprm[c, 1], uprm[c, 2], 0.0
        )
        if m0 > nu_hi:
            nu_hi = m0
    if nu_hi <= 0.0:
        for j in range(k):
            powers[j] = 0.0
        nu_state[0] = 0.0
        return 0.0

    lo = 0.0
    hi = nu_hi
    nu = nu_state[0]
    if not (lo < nu < hi):
        nu = 0.5 * nu_hi
    total = 0.0
    for _ in range(80):
        total = 0.0
        dtot = 0.0
        for j in range(k):
            c = kcls[j]
            pj = _solve_power(
                beta[j], nu, budget, ukind[c],
                uprm[c, 0], uprm[c, 1], uprm[c, 2], uscale[c], powers[j],
            )
            powers[j] = pj
            total += pj
            if 0.0 < pj < budget:
                den = 1.0 + beta[j] * pj
                r = math.log(den)
                t = uscale[c] * _t_raw(
                    ukind[c], uprm[c, 0], uprm[c, 1], uprm[c, 2], r
                )
                dm = beta[j] * beta[j] * t / (den * den)
                if dm > 0.0:
                    dtot += 1.0 / dm
        if abs(total - budget) <= tol:
            # reject the budget plateau created by capped subcarriers
            ok = True
            for j in range(k):
                if powers[j] >= budget:
                    c = kcls[j]
                    mb = _marginal(
                        beta[j], budget, ukind[c],
                        uprm[c, 0], uprm[c, 1], uprm[c, 2], uscale[c],
                    )
                    if mb > nu + 10.0 * tol:
                        ok = False
                        break
            if ok:
                break
        if total > budget:
            lo = nu
        else:
            hi = nu
            if total >= budget - tol and nu <= 1e-300:
                break  # even nu -> 0+ cannot spend the budget
        if hi - lo <= 1e-17 * nu_hi:
            break
        nu_new = nu + (total - budget) / dtot if dtot > 0.0 else -1.0
        if nu_new <= lo or nu_new >= hi:
            nu_new = 0.5 * (lo + hi)
        nu = nu_new

    if total > budget:
        f = budget / total
        for j in range(k):
            powers[j] *= f
    nu_state[0] = nu
    return nu


@njit(cache=True)
def _greedy_partition(gains, h2, cls, snr_coef, pbar,
                      ukind, uprm, uscale, uoff, owner):
    """Utility-aware greedy: subcarriers in descending best-beta order, each
    to the user whose utility climbs most at this pass's running rate."""
    n, k = h2.shape
    maxb = np.empty(k)
    for kk in range(k):
        best = -1.0
        for i in range(n):
            b = snr_coef * gains[i] * h2[i, kk]
            if b > best:
                best = b
        maxb[kk] = best
    order = np.argsort(-maxb, kind="mergesort")
    totals = np.zeros(n)
    current = np.empty(n)
    for i in range(n):
        c = cls[i]
        current[i] = _fval(
            ukind[c], uprm[c, 0], uprm[c, 1], uprm[c, 2],
            uscale[c], uoff[c], 0.0,
        )
    for idx in range(k):
        kk = order[idx]
        best_gain = -1e300
        best_user = 0
        for i in range(n):
            c = cls[i]
            b = snr_coef * gains[i] * h2[i, kk]
            r = math.log1p(b * pbar)
            fnew = _fval(
                ukind[c], uprm[c, 0], uprm[c, 1], uprm[c, 2],
                uscale[c], uoff[c], totals[i] + r,
            )
            gain = fnew - current[i]
            if gain > best_gain:
                best_gain = gain
                best_user = i
        owner[kk] = best_user
        c = cls[best_user]
        b = snr_coef * gains[best_user] * h2[best_user, kk]
        totals[best_user] += math.log1p(b * pbar)
        current[best_user] = _fval(
            ukind[c], uprm[c, 0], uprm[c, 1], uprm[c, 2],
            uscale[c], uoff[c], totals[best_user],
        )


@njit(cache=True)
def _best_channel_partition(gains, h2, owner):
    n, k = h2.shape
    for kk in range(k):
        best = -1.0
        bi = 0
        for i in range(n):
            b = gains[i] * h2[i, kk]
            if b > best:
                best = b
                bi = i
        owner[kk] = bi


@njit(cache=True)
def run_window(
    frame0, n_frames, frame_s,
    # channel / link
    stride_fad, stride_sched, cell_radius, snr_coef, delta_f,
    # mobility state (mutated)
    pos, dirv, speed, shadow_db, rho_sh, sh_scale, gains,
    # fading state (mutated)
    taps, tap_amp, rho_fad, fad_scale, dft, h2,
    shadow_z, fade_z, fad_idx,
    # users / utilities
    cls, ukind, uprm, uscale, uoff,
    # scheduling
    sched_mode, owner,
    # allocation
    budget, alloc_tol, p_prev, nu_state, beta_own, kcls,
    # link adaptation
    quantize, mcs_products,
    # traffic parameters
    t_on_mean, t_off_mean, t_rate_bps, t_voip_dl,
    v_state_mean_s, v_lo_kbps, v_span_kbps, v_lam, v_q, v_dl,
    # traffic state (mutated)
    phase_on, resid, vrate_bps, dur_pool, dur_cur, u_pool, u_cur,
    # queues (mutated)
    qbits, qdl, qhead, qlen,
    # outputs
    acc_offered, acc_served, acc_dropped, obj_sum, obj_cnt,
    report_objective, cap_bits, viol,
):
    n = cls.shape[0]
    k = owner.shape[0]
    ntaps = taps.shape[1]
    qcap = qbits.shape[1]
    pool_len = dur_pool.shape[1]
    mcs_n = mcs_products.shape[0]
    pbar = budget / k

    for f in range(n_frames):
        gframe = frame0 + f
        now = gframe * frame_s

        # ---- traffic generation ----
        for i in range(n):
            c = cls[i]
            if c == 2:
                continue
            bits = 0.0
            remaining = frame_s
            if c == 0:
                while remaining >= resid[i]:
                    if phase_on[i] == 1:
                        bits += t_rate_bps * resid[i]
                    remaining -= resid[i]
                    phase_on[i] = 1 - phase_on[i]
                    if dur_cur[i] >= pool_len:
                        viol[2] += 1
                        dur_cur[i] = pool_len - 1
                    d = dur_pool[i, dur_cur[i]]
                    dur_cur[i] += 1
                    resid[i] = d * (t_on_mean if phase_on[i] == 1 else t_off_mean)
                if phase_on[i] == 1:
                    bits += t_rate_bps * remaining
                resid[i] -= remaining
                dl = now + t_voip_dl
            else:
                while remaining >= resid[i]:
                    bits += vrate_bps[i] * resid[i]
                    remaining -= resid[i]
                    if u_cur[i] >= pool_len or dur_cur[i] >= pool_len:
                        viol[2] += 1
                        u_cur[i] = min(u_cur[i], pool_len - 1)
                        dur_cur[i] = min(dur_cur[i], pool_len - 1)
                    u = u_pool[i, u_cur[i]]
                    u_cur[i] += 1
                    if abs(v_lam) < 1e-12:
                        rate_kbps = v_lo_kbps + u * v_span_kbps
                    else:
                        rate_kbps = v_lo_kbps - math.log1p(-u * v_q) / v_lam
                    vrate_bps[i] = rate_kbps * 1000.0
                    d = dur_pool[i, dur_cur[i]]
                    dur_cur[i] += 1
                    resid[i] = d * v_state_mean_s
                bits += vrate_bps[i] * remaining
                resid[i] -= remaining
                dl = now + v_dl
            if bits > 0.0:
                if qlen[i] >= qcap:
                    viol[3] += 1
                    h = qhead[i]
                    acc_dropped[i] += qbits[i, h]
                    qhead[i] = (h + 1) % qcap
                    qlen[i] -= 1
                tail = (qhead[i] + qlen[i]) % qcap
                qbits[i, tail] = bits
                qdl[i, tail] = dl
                qlen[i] += 1
                acc_offered[i] += bits

        # ---- mobility, shadowing, path gain ----
        for i in range(n):
            step = speed[i] * frame_s
            px = pos[i, 0] + dirv[i, 0] * step
            py = pos[i, 1] + dirv[i, 1] * step
            r2 = math.sqrt(px * px + py * py)
            if r2 > cell_radius:
                fold = 2.0 * cell_radius - r2
                if fold < 0.0:
                    fold = 0.0
                if r2 > 0.0:
                    px *= fold / r2
                    py *= fold / r2
                rr = math.sqrt(px * px + py * py)
                if rr > cell_radius and rr > 0.0:
                    px *= cell_radius / rr
                    py *= cell_radius / rr
                    rr = cell_radius
                if rr > 0.0:
                    nx = px / rr
                    ny = py / rr
                    dot = dirv[i, 0] * nx + dirv[i, 1] * ny
                    dirv[i, 0] -= 2.0 * dot * nx
                    dirv[i, 1] -= 2.0 * dot * ny
            pos[i, 0] = px
            pos[i, 1] = py
            shadow_db[i] = (
                rho_sh[i] * shadow_db[i] + sh_scale[i] * shadow_z[f, i]
            )
            d = math.sqrt(px * px + py * py)
            if d < 1.0:
                d = 1.0
            g_db = -(PL_A + PL_B * math.log(d)) + shadow_db[i]
            gains[i] = math.exp(g_db * LN10_OVER_10)

        # ---- fading refresh ----
        if gframe % stride_fad == 0:
            jf = fad_idx[0]
            fad_idx[0] += 1
            for i in range(n):
                rho = rho_fad[i]
                sc = fad_scale[i]
                for l in range(ntaps):
                    re = taps[i, l].real * rho + sc * tap_amp[l] * fade_z[jf, i, l, 0]
                    im = taps[i, l].imag * rho + sc * tap_amp[l] * fade_z[jf, i, l, 1]
                    taps[i, l] = complex(re, im)
            for i in range(n):
                for kk in range(k):
                    acc = 0.0 + 0.0j
                    for l in range(ntaps):
                        acc += taps[i, l] * dft[l, kk]
                    h2[i, kk] = acc.real * acc.real + acc.imag * acc.imag

        # ---- partition refresh ----
        if gframe % stride_sched == 0:
            if sched_mode == 0:
                _best_channel_partition(gains, h2, owner)
            else:
                _greedy_partition(
                    gains, h2, cls, snr_coef, pbar,
                    ukind, uprm, uscale, uoff, owner,
                )

        # ---- per-frame SNR coefficients of the owners ----
        for kk in range(k):
            o = owner[kk]
            if o < 0 or o >= n:
                viol[1] += 1
                o = 0
                owner[kk] = 0
            kcls[kk] = cls[o]
            beta_own[kk] = snr_coef * gains[o] * h2[o, kk]

        # ---- power allocation ----
        _allocate(
            beta_own, kcls, ukind, uprm, uscale, budget, alloc_tol,
            nu_state, p_prev,
        )
        tot = 0.0
        for kk in range(k):
            tot += p_prev[kk]
        if tot > budget + 1e-9:
            viol[0] += 1

        # ---- rates, link adaptation, per-user capacity ----
        for i in range(n):
            cap_bits[i] = 0.0
        for kk in range(k):
            r = math.log1p(beta_own[kk] * p_prev[kk])
            eff = r / LN2
            if quantize == 1:
                if eff < mcs_products[0]:
                    eff = 0.0
                elif eff >= mcs_products[mcs_n - 1]:
                    eff = mcs_products[mcs_n - 1]
                else:
                    lo_i = 0
                    hi_i = mcs_n - 1
                    while hi_i - lo_i > 1:
                        mid = (lo_i + hi_i) // 2
                        if mcs_products[mid] <= eff:
                            lo_i = mid
                        else:
                            hi_i = mid
                    eff = mcs_products[lo_i]
            cap_bits[owner[kk]] += eff * delta_f * frame_s
            if report_objective == 1:
                c = kcls[kk]
                v = _fval(
                    ukind[c], uprm[c, 0], uprm[c, 1], uprm[c, 2],
                    uscale[c], uoff[c], r,
                )
                if v < 0.0:
                    v = 0.0
                elif v > 1.0:
                    v = 1.0
                obj_sum[c] += v
                obj_cnt[c] += 1

        # ---- queue service ----
        for i in range(n):
            c = cls[i]
            if c == 2:
                acc_offered[i] += cap_bits[i]
                acc_served[i] += cap_bits[i]
                continue
            while qlen[i] > 0:
                h = qhead[i]
                if qdl[i, h] < now:
                    acc_dropped[i] += qbits[i, h]
                    qhead[i] = (h + 1) % qcap
                    qlen[i] -= 1
                else:
                    break
            room = cap_bits[i]
            while qlen[i] > 0 and room > 0.0:
                h = qhead[i]
                take = qbits[i, h]
                if take > room:
                    take = room
                qbits[i, h] -= take
                room -= take
                acc_served[i] += take
                if qbits[i, h] <= 0.0:
                    qhead[i] = (h + 1) % qcap
                    qlen[i] -= 1
