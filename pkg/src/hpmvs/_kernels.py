"""Compiled per-pixel kernels for the PatchMatch engine.

Everything here is numba-compiled and operates on plain arrays packed by
`patchmatch`. Parallel passes write only the pixel they own and read
only opposite-parity pixels, so scheduling never changes results; all
randomness is counter-based via `_rng`.

Array conventions:
    ref_img            float32 (H, W)
    src_imgs           float32 (J, Hmax, Wmax), zero-padded
    src_dims           int64   (J, 2) as (height, width)
    A, b               float64 (J, 3, 3) / (J, 3): homography pieces,
                       A = K_src R_rel K_ref^-1, b = K_src t_rel
    Kinv               float64 (3, 3): inverse reference intrinsics
    depth, cost, photo float64 (H, W)
    normal             float64 (H, W, 3)
    percost            float64 (H, W, J): per-view costs of the incumbent
    weights            float64 (H, W, J)
    prior_*            prior depth/normal/valid at full resolution
    src_depth          float64 (J, Hmax, Wmax), NaN where invalid
"""

import math

import numpy as np
from numba import njit, prange

from ._rng import rand_uniform

MAX_COST = 2.0
VAR_EPS = 1e-8
DOFF_EPS = 1e-12
GRAZE_EPS = 1e-3


# ---------------------------------------------------------------------------
# Patch cost primitives


@njit(cache=True, inline="always")
def _bilinear(img, h, w, x, y):
    x0 = int(x)
    y0 = int(y)
    if x0 > w - 2:
        x0 = w - 2
    if y0 > h - 2:
        y0 = h - 2
    fx = x - x0
    fy = y - y0
    v00 = img[y0, x0]
    v01 = img[y0, x0 + 1]
    v10 = img[y0 + 1, x0]
    v11 = img[y0 + 1, x0 + 1]
    return ((1.0 - fy) * ((1.0 - fx) * v00 + fx * v01)
            + fy * ((1.0 - fx) * v10 + fx * v11))


@njit(cache=True)
def ref_patch(img, x, y, taps, spatial_w, sigma_r, vals, wts):
    """Fill reference tap values and bilateral weights; zero weight marks
    an out-of-bounds tap."""
    h, w = img.shape
    center = np.float64(img[y, x])
    inv2sr = 1.0 / (2.0 * sigma_r * sigma_r)
    for t in range(taps.shape[0]):
        tx = x + taps[t, 0]
        ty = y + taps[t, 1]
        if 0 <= tx < w and 0 <= ty < h:
            v = np.float64(img[ty, tx])
            d = v - center
            wts[t] = spatial_w[t] * math.exp(-d * d * inv2sr)
            vals[t] = v
        else:
            wts[t] = 0.0
            vals[t] = 0.0


@njit(cache=True)
def warp_ncc(src, sh, sw, x, y,
             h00, h01, h02, h10, h11, h12, h20, h21, h22,
             taps, rvals, rwts):
    """Bilaterally weighted 1-NCC between the reference patch and its
    homography warp; MAX_COST on degenerate or mostly-invalid overlaps."""
    ntaps = taps.shape[0]
    swt = 0.0
    s_r = 0.0
    s_s = 0.0
    s_rr = 0.0
    s_ss = 0.0
    s_rs = 0.0
    nv = 0
    for t in range(ntaps):
        wgt = rwts[t]
        if wgt <= 0.0:
            continue
        px = np.float64(x + taps[t, 0])
        py = np.float64(y + taps[t, 1])
        den = h20 * px + h21 * py + h22
        if abs(den) < 1e-12:
            continue
        sx = (h00 * px + h01 * py + h02) / den
        sy = (h10 * px + h11 * py + h12) / den
        if sx < 0.0 or sx > sw - 1 or sy < 0.0 or sy > sh - 1:
            continue
        v = np.float64(_bilinear(src, sh, sw, sx, sy))
        r = rvals[t]
        nv += 1
        swt += wgt
        s_r += wgt * r
        s_s += wgt * v
        s_rr += wgt * r * r
        s_ss += wgt * v * v
        s_rs += wgt * r * v
    if 2 * nv <= ntaps or swt <= 0.0:
        return MAX_COST
    mr = s_r / swt
    ms = s_s / swt
    var_r = s_rr / swt - mr * mr
    var_s = s_ss / swt - ms * ms
    if var_r < VAR_EPS or var_s < VAR_EPS:
        return MAX_COST
    ncc = (s_rs / swt - mr * ms) / math.sqrt(var_r * var_s)
    c = 1.0 - ncc
    if c < 0.0:
        c = 0.0
    elif c > MAX_COST:
        c = MAX_COST
    return c


@njit(cache=True, inline="always")
def _ray(Kinv, x, y):
    mx = Kinv[0, 0] * x + Kinv[0, 1] * y + Kinv[0, 2]
    my = Kinv[1, 1] * y + Kinv[1, 2]
    return mx, my


@njit(cache=True)
def score_row(src_imgs, src_dims, A, b, Kinv, x, y, d, n0, n1, n2,
              taps, rvals, rwts, row):
    """Per-view photometric costs of hypothesis (d, n) at pixel (x, y)."""
    nviews = A.shape[0]
    mx, my = _ray(Kinv, np.float64(x), np.float64(y))
    ndm = n0 * mx + n1 * my + n2
    doff = -d * ndm
    if doff < DOFF_EPS:
        for j in range(nviews):
            row[j] = MAX_COST
        return
    g0 = Kinv[0, 0] * n0
    g1 = Kinv[0, 1] * n0 + Kinv[1, 1] * n1
    g2 = Kinv[0, 2] * n0 + Kinv[1, 2] * n1 + n2
    for j in range(nviews):
        h00 = A[j, 0, 0] - b[j, 0] * g0 / doff
        h01 = A[j, 0, 1] - b[j, 0] * g1 / doff
        h02 = A[j, 0, 2] - b[j, 0] * g2 / doff
        h10 = A[j, 1, 0] - b[j, 1] * g0 / doff
        h11 = A[j, 1, 1] - b[j, 1] * g1 / doff
        h12 = A[j, 1, 2] - b[j, 1] * g2 / doff
        h20 = A[j, 2, 0] - b[j, 2] * g0 / doff
        h21 = A[j, 2, 1] - b[j, 2] * g1 / doff
        h22 = A[j, 2, 2] - b[j, 2] * g2 / doff
        row[j] = warp_ncc(src_imgs[j], src_dims[j, 0], src_dims[j, 1],
                          x, y, h00, h01, h02, h10, h11, h12, h20, h21, h22,
                          taps, rvals, rwts)


# ---------------------------------------------------------------------------
# View selection and aggregation


@njit(cache=True)
def column_weights(M, tau_good, tau_bad, beta, w_out):
    """Column-voting view selection over an n_rows x J cost matrix."""
    nrows, nviews = M.shape
    inv2b = 1.0 / (2.0 * beta * beta)
    any_selected = False
    best_j = 0
    best_min = np.inf
    for j in range(nviews):
        good = 0
        bad = 0
        cmin = np.inf
        for i in range(nrows):
            m = M[i, j]
            if m < tau_good:
                good += 1
            if m > tau_bad:
                bad += 1
            if m < cmin:
                cmin = m
        if cmin < best_min:
            best_min = cmin
            best_j = j
        if good >= 2 and bad <= 3:
            w_out[j] = math.exp(-cmin * cmin * inv2b)
            any_selected = True
        else:
            w_out[j] = 0.0
    if not any_selected:
        w_out[best_j] = math.exp(-best_min * best_min * inv2b)


@njit(cache=True, inline="always")
def _stacked_weights(row, tau_good, beta, w_out):
    """Weights when every matrix row is the same (rescore / init): the
    column rule collapses to selecting views with cost < tau_good."""
    nviews = row.shape[0]
    inv2b = 1.0 / (2.0 * beta * beta)
    any_selected = False
    best_j = 0
    best_min = np.inf
    for j in range(nviews):
        m = row[j]
        if m < best_min:
            best_min = m
            best_j = j
        if m < tau_good:
            w_out[j] = math.exp(-m * m * inv2b)
            any_selected = True
        else:
            w_out[j] = 0.0
    if not any_selected:
        w_out[best_j] = math.exp(-best_min * best_min * inv2b)


@njit(cache=True, inline="always")
def aggregate(row, w):
    swc = 0.0
    sw = 0.0
    for j in range(row.shape[0]):
        swc += w[j] * row[j]
        sw += w[j]
    if sw <= 0.0:
        return MAX_COST
    return swc / sw


# ---------------------------------------------------------------------------
# Objective extras: planar-prior bonus and geometric consistency


@njit(cache=True, inline="always")
def prior_term(d, n0, n1, n2, pd, pn0, pn1, pn2, eta, gamma, sigma_d, sigma_n):
    dd = (d - pd) / pd
    # Angle via atan2 of the chord/anti-chord lengths: acos(dot) is
    # ill-conditioned near 1, where rounding in the dot product turns
    # identical normals into a phantom angle of ~1e-8 rad; this form is
    # exactly zero for bitwise-equal normals.
    dx = n0 - pn0
    dy = n1 - pn1
    dz = n2 - pn2
    sx = n0 + pn0
    sy = n1 + pn1
    sz = n2 + pn2
    ang = 2.0 * math.atan2(math.sqrt(dx * dx + dy * dy + dz * dz),
                           math.sqrt(sx * sx + sy * sy + sz * sz))
    bonus = math.exp(-dd * dd / (2.0 * sigma_d * sigma_d)
                     - ang * ang / (2.0 * sigma_n * sigma_n))
    return -eta * math.log(gamma + bonus) + eta * math.log(gamma + 1.0)


@njit(cache=True)
def geo_error_one(x, y, d, j, A, b, Ksrc_inv, Rrel, trel, Kref, Kinv,
                  src_depth, src_dims, psi):
    """Forward-backward reprojection error against one source depth map,
    clamped to psi; invalid lookups cost the full clamp."""
    px = np.float64(x)
    py = np.float64(y)
    # Forward: homogeneous source pixel of the point at depth d.
    q0 = d * (A[j, 0, 0] * px + A[j, 0, 1] * py + A[j, 0, 2]) + b[j, 0]
    q1 = d * (A[j, 1, 0] * px + A[j, 1, 1] * py + A[j, 1, 2]) + b[j, 1]
    q2 = d * (A[j, 2, 0] * px + A[j, 2, 1] * py + A[j, 2, 2]) + b[j, 2]
    if q2 < 1e-9:
        return psi
    u = q0 / q2
    v = q1 / q2
    sh = src_dims[j, 0]
    sw = src_dims[j, 1]
    if u < 0.0 or u > sw - 1 or v < 0.0 or v > sh - 1:
        return psi
    # Bilinear depth lookup over the valid corners only.
    x0 = int(u)
    y0 = int(v)
    if x0 > sw - 2:
        x0 = sw - 2
    if y0 > sh - 2:
        y0 = sh - 2
    fx = u - x0
    fy = v - y0
    dsum = 0.0
    wsum = 0.0
    for cy in range(2):
        for cx in range(2):
            dv = src_depth[j, y0 + cy, x0 + cx]
            if dv > 0.0 and math.isfinite(dv):
                wgt = (fy if cy == 1 else 1.0 - fy) * (fx if cx == 1 else 1.0 - fx)
                dsum += wgt * dv
                wsum += wgt
    if wsum < 1e-12:
        return psi
    dl = dsum / wsum
    # Back: lift the source pixel at the looked-up depth, move to the
    # reference frame, project.
    sx = dl * (Ksrc_inv[j, 0, 0] * u + Ksrc_inv[j, 0, 1] * v + Ksrc_inv[j, 0, 2])
    sy = dl * (Ksrc_inv[j, 1, 1] * v + Ksrc_inv[j, 1, 2])
    sz = dl
    rx = sx - trel[j, 0]
    ry = sy - trel[j, 1]
    rz = sz - trel[j, 2]
    p0 = Rrel[j, 0, 0] * rx + Rrel[j, 1, 0] * ry + Rrel[j, 2, 0] * rz
    p1 = Rrel[j, 0, 1] * rx + Rrel[j, 1, 1] * ry + Rrel[j, 2, 1] * rz
    p2 = Rrel[j, 0, 2] * rx + Rrel[j, 1, 2] * ry + Rrel[j, 2, 2] * rz
    if p2 < 1e-9:
        return psi
    u2 = (Kref[0, 0] * p0 + Kref[0, 1] * p1 + Kref[0, 2] * p2) / p2
    v2 = (Kref[1, 1] * p1 + Kref[1, 2] * p2) / p2
    du = u2 - px
    dv2 = v2 - py
    err = math.sqrt(du * du + dv2 * dv2)
    if err > psi:
        return psi
    return err


@njit(cache=True, inline="always")
def _geo_aggregate(x, y, d, w, A, b, Ksrc_inv, Rrel, trel, Kref, Kinv,
                   src_depth, src_dims, psi):
    swc = 0.0
    sw = 0.0
    for j in range(w.shape[0]):
        if w[j] <= 0.0:
            continue
        e = geo_error_one(x, y, d, j, A, b, Ksrc_inv, Rrel, trel, Kref, Kinv,
                          src_depth, src_dims, psi)
        swc += w[j] * e
        sw += w[j]
    if sw <= 0.0:
        return psi
    return swc / sw


@njit(cache=True, inline="always")
def _objective(c_photo, x, y, d, n0, n1, n2, w,
               use_prior, prior_depth, prior_normal, prior_valid,
               eta, gamma, sigma_d, sigma_n,
               use_gc, A, b, Ksrc_inv, Rrel, trel, Kref, Kinv,
               src_depth, src_dims, lambda_geom, psi):
    obj = c_photo
    if use_prior and prior_valid[y, x]:
        obj += prior_term(d, n0, n1, n2,
                          prior_depth[y, x],
                          prior_normal[y, x, 0], prior_normal[y, x, 1],
                          prior_normal[y, x, 2],
                          eta, gamma, sigma_d, sigma_n)
    if use_gc:
        obj += lambda_geom * _geo_aggregate(x, y, d, w, A, b, Ksrc_inv,
                                            Rrel, trel, Kref, Kinv,
                                            src_depth, src_dims, psi)
    return obj


# ---------------------------------------------------------------------------
# Random hypothesis generation


@njit(cache=True, inline="always")
def _sphere_point(u0, u1):
    z = 1.0 - 2.0 * u0
    r = math.sqrt(max(0.0, 1.0 - z * z))
    phi = 2.0 * math.pi * u1
    return r * math.cos(phi), r * math.sin(phi), z


@njit(cache=True)
def random_facing_normal(seed, stream, cell, first_draw, mx, my):
    """Unit normal uniform on the hemisphere facing the camera along the
    pixel ray (mx, my, 1); grazing directions are resampled."""
    mnorm = math.sqrt(mx * mx + my * my + 1.0)
    draw = first_draw
    for _ in range(8):
        u0 = rand_uniform(seed, stream, cell, draw)
        u1 = rand_uniform(seed, stream, cell, draw + 1)
        draw += 2
        n0, n1, n2 = _sphere_point(u0, u1)
        dot = n0 * mx + n1 * my + n2
        if dot > 0.0:
            n0 = -n0
            n1 = -n1
            n2 = -n2
            dot = -dot
        if -dot > GRAZE_EPS * mnorm:
            return n0, n1, n2, draw
    return -mx / mnorm, -my / mnorm, -1.0 / mnorm, draw


@njit(cache=True, parallel=True)
def init_kernel(ref_img, src_imgs, src_dims, A, b, Kinv, dmin, dmax,
                taps, spatial_w, sigma_r, seed, stream, topk,
                tau_good, tau_bad, beta,
                depth, normal, cost, photo, percost, weights):
    h, w = ref_img.shape
    nviews = A.shape[0]
    ntaps = taps.shape[0]
    for y in prange(h):
        rvals = np.empty(ntaps, np.float64)
        rwts = np.empty(ntaps, np.float64)
        row = np.empty(nviews, np.float64)
        wbuf = np.empty(nviews, np.float64)
        sbuf = np.empty(nviews, np.float64)
        for x in range(w):
            cell = y * w + x
            u = rand_uniform(seed, stream, cell, 0)
            d = dmin + u * (dmax - dmin)
            mx, my = _ray(Kinv, np.float64(x), np.float64(y))
            n0, n1, n2, _ = random_facing_normal(seed, stream, cell, 1, mx, my)
            ref_patch(ref_img, x, y, taps, spatial_w, sigma_r, rvals, rwts)
            score_row(src_imgs, src_dims, A, b, Kinv, x, y, d, n0, n1, n2,
                      taps, rvals, rwts, row)
            # Mean of the k best per-view costs (all views if fewer).
            for j in range(nviews):
                sbuf[j] = row[j]
            sbuf.sort()
            kk = topk if topk < nviews else nviews
            acc = 0.0
            for j in range(kk):
                acc += sbuf[j]
            depth[y, x] = d
            normal[y, x, 0] = n0
            normal[y, x, 1] = n1
            normal[y, x, 2] = n2
            cost[y, x] = acc / kk
            _stacked_weights(row, tau_good, beta, wbuf)
            photo[y, x] = aggregate(row, wbuf)
            for j in range(nviews):
                percost[y, x, j] = row[j]
                weights[y, x, j] = wbuf[j]


# ---------------------------------------------------------------------------
# Stage-transition rescore


@njit(cache=True, parallel=True)
def rescore_kernel(depth, normal, cost, photo, percost, weights,
                   tau_good, tau_bad, beta,
                   use_prior, prior_depth, prior_normal, prior_valid,
                   eta, gamma, sigma_d, sigma_n,
                   use_gc, A, b, Ksrc_inv, Rrel, trel, Kref, Kinv,
                   src_depth, src_dims, lambda_geom, psi):
    h, w = depth.shape
    nviews = percost.shape[2]
    for y in prange(h):
        row = np.empty(nviews, np.float64)
        wbuf = np.empty(nviews, np.float64)
        for x in range(w):
            for j in range(nviews):
                row[j] = percost[y, x, j]
            _stacked_weights(row, tau_good, beta, wbuf)
            c_photo = aggregate(row, wbuf)
            obj = _objective(c_photo, x, y, depth[y, x],
                             normal[y, x, 0], normal[y, x, 1], normal[y, x, 2],
                             wbuf,
                             use_prior, prior_depth, prior_normal, prior_valid,
                             eta, gamma, sigma_d, sigma_n,
                             use_gc, A, b, Ksrc_inv, Rrel, trel, Kref, Kinv,
                             src_depth, src_dims, lambda_geom, psi)
            photo[y, x] = c_photo
            cost[y, x] = obj
            for j in range(nviews):
                weights[y, x, j] = wbuf[j]


# ---------------------------------------------------------------------------
# Propagation


@njit(cache=True, inline="always")
def _transport(Kinv, sx, sy, sd, n0, n1, n2, cx, cy, dmin, dmax):
    """Depth at (cx, cy) on the plane of the sample hypothesis at (sx, sy).
    Returns (depth, ok)."""
    smx, smy = _ray(Kinv, np.float64(sx), np.float64(sy))
    ndm_s = n0 * smx + n1 * smy + n2
    doff = -sd * ndm_s
    if doff < DOFF_EPS:
        return 0.0, False
    cmx, cmy = _ray(Kinv, np.float64(cx), np.float64(cy))
    ndm_c = n0 * cmx + n1 * cmy + n2
    if ndm_c > -DOFF_EPS:
        return 0.0, False
    z = doff / (-ndm_c)
    if z < dmin or z > dmax or not math.isfinite(z):
        return 0.0, False
    return z, True


@njit(cache=True, parallel=True)
def propagate_kernel(ref_img, src_imgs, src_dims, A, b, Kinv, dmin, dmax,
                     taps, spatial_w, sigma_r,
                     offsets, counts, t_iter, n_ext, alpha,
                     tau_good, tau_bad, n_good, n_bad, beta,
                     color,
                     depth, normal, cost, photo, percost, weights,
                     use_prior, prior_depth, prior_normal, prior_valid,
                     eta, gamma, sigma_d, sigma_n,
                     use_gc, Ksrc_inv, Rrel, trel, Kref,
                     src_depth, lambda_geom, psi):
    h, w = ref_img.shape
    nviews = A.shape[0]
    ntaps = taps.shape[0]
    for y in prange(h):
        rvals = np.empty(ntaps, np.float64)
        rwts = np.empty(ntaps, np.float64)
        M = np.empty((8, nviews), np.float64)
        cand_d = np.empty(8, np.float64)
        cand_n = np.empty((8, 3), np.float64)
        cand_ok = np.empty(8, np.bool_)
        wbuf = np.empty(nviews, np.float64)
        xstart = (color + y) % 2
        for x in range(xstart, w, 2):
            ref_patch(ref_img, x, y, taps, spatial_w, sigma_r, rvals, rwts)
            for r in range(8):
                cand_ok[r] = False
                # Best stored cost among the region's in-bounds samples,
                # extending the region while the vote stays unconvincing.
                t_ext = 0
                best_sx = -1
                best_sy = -1
                best_c = np.inf
                scanned = 0
                scored_sx = -2
                scored_sy = -2
                while True:
                    limit = counts[r, t_ext]
                    for s in range(scanned, limit):
                        sx = x + offsets[r, s, 0]
                        sy = y + offsets[r, s, 1]
                        if 0 <= sx < w and 0 <= sy < h:
                            sc = cost[sy, sx]
                            if sc < best_c:
                                best_c = sc
                                best_sx = sx
                                best_sy = sy
                    scanned = limit
                    if best_sx >= 0 and (best_sx != scored_sx or best_sy != scored_sy):
                        sd = depth[best_sy, best_sx]
                        n0 = normal[best_sy, best_sx, 0]
                        n1 = normal[best_sy, best_sx, 1]
                        n2 = normal[best_sy, best_sx, 2]
                        z, ok = _transport(Kinv, best_sx, best_sy, sd,
                                           n0, n1, n2, x, y, dmin, dmax)
                        if ok:
                            cand_ok[r] = True
                            cand_d[r] = z
                            cand_n[r, 0] = n0
                            cand_n[r, 1] = n1
                            cand_n[r, 2] = n2
                            score_row(src_imgs, src_dims, A, b, Kinv, x, y,
                                      z, n0, n1, n2, taps, rvals, rwts, M[r])
                        else:
                            cand_ok[r] = False
                            for j in range(nviews):
                                M[r, j] = MAX_COST
                        scored_sx = best_sx
                        scored_sy = best_sy
                    elif best_sx < 0:
                        for j in range(nviews):
                            M[r, j] = MAX_COST
                    # Vote on the refreshed row.
                    tau = tau_good * math.exp(
                        -(t_iter * t_iter) * np.float64(n_ext - t_ext) / alpha)
                    good = 0
                    bad = 0
                    for j in range(nviews):
                        if M[r, j] < tau:
                            good += 1
                        if M[r, j] > tau_bad:
                            bad += 1
                    if good >= n_good and bad <= n_bad:
                        break
                    if t_ext >= n_ext:
                        break
                    t_ext += 1
            column_weights(M, tau_good, tau_bad, beta, wbuf)
            best_obj = cost[y, x]
            best_r = -1
            best_photo = 0.0
            for r in range(8):
                if not cand_ok[r]:
                    continue
                c_photo = aggregate(M[r], wbuf)
                obj = _objective(c_photo, x, y, cand_d[r],
                                 cand_n[r, 0], cand_n[r, 1], cand_n[r, 2],
                                 wbuf,
                                 use_prior, prior_depth, prior_normal,
                                 prior_valid, eta, gamma, sigma_d, sigma_n,
                                 use_gc, A, b, Ksrc_inv, Rrel, trel, Kref,
                                 Kinv, src_depth, src_dims, lambda_geom, psi)
                if obj < best_obj:
                    best_obj = obj
                    best_r = r
                    best_photo = c_photo
            for j in range(nviews):
                weights[y, x, j] = wbuf[j]
            if best_r >= 0:
                depth[y, x] = cand_d[best_r]
                normal[y, x, 0] = cand_n[best_r, 0]
                normal[y, x, 1] = cand_n[best_r, 1]
                normal[y, x, 2] = cand_n[best_r, 2]
                cost[y, x] = best_obj
                photo[y, x] = best_photo
                for j in range(nviews):
                    percost[y, x, j] = M[best_r, j]
            else:
                acc = 0.0
                sw = 0.0
                for j in range(nviews):
                    acc += wbuf[j] * percost[y, x, j]
                    sw += wbuf[j]
                if sw > 0.0:
                    photo[y, x] = acc / sw
                else:
                    photo[y, x] = MAX_COST


# ---------------------------------------------------------------------------
# Refinement


@njit(cache=True, inline="always")
def _rotate(n0, n1, n2, u0, u1, u2, ang):
    """Rodrigues rotation of n about unit axis u by ang radians."""
    c = math.cos(ang)
    s = math.sin(ang)
    dot = u0 * n0 + u1 * n1 + u2 * n2
    cx = u1 * n2 - u2 * n1
    cy = u2 * n0 - u0 * n2
    cz = u0 * n1 - u1 * n0
    r0 = n0 * c + cx * s + u0 * dot * (1.0 - c)
    r1 = n1 * c + cy * s + u1 * dot * (1.0 - c)
    r2 = n2 * c + cz * s + u2 * dot * (1.0 - c)
    norm = math.sqrt(r0 * r0 + r1 * r1 + r2 * r2)
    return r0 / norm, r1 / norm, r2 / norm


@njit(cache=True, parallel=True)
def refine_kernel(ref_img, src_imgs, src_dims, A, b, Kinv, dmin, dmax,
                  taps, spatial_w, sigma_r, seed, stream,
                  delta_d, delta_n, color,
                  depth, normal, cost, photo, percost, weights,
                  use_prior, prior_depth, prior_normal, prior_valid,
                  eta, gamma, sigma_d, sigma_n,
                  use_gc, Ksrc_inv, Rrel, trel, Kref,
                  src_depth, lambda_geom, psi):
    h, w = ref_img.shape
    nviews = A.shape[0]
    ntaps = taps.shape[0]
    for y in prange(h):
        rvals = np.empty(ntaps, np.float64)
        rwts = np.empty(ntaps, np.float64)
        row = np.empty(nviews, np.float64)
        bestrow = np.empty(nviews, np.float64)
        wbuf = np.empty(nviews, np.float64)
        cd = np.empty(6, np.float64)
        cn = np.empty((6, 3), np.float64)
        xstart = (color + y) % 2
        for x in range(xstart, w, 2):
            cell = y * w + x
            d = depth[y, x]
            n0 = normal[y, x, 0]
            n1 = normal[y, x, 1]
            n2 = normal[y, x, 2]
            mx, my = _ray(Kinv, np.float64(x), np.float64(y))
            mnorm = math.sqrt(mx * mx + my * my + 1.0)
            # Perturbed depth.
            u = rand_uniform(seed, stream, cell, 0)
            dp = d * (1.0 - delta_d + 2.0 * delta_d * u)
            if dp < dmin:
                dp = dmin
            elif dp > dmax:
                dp = dmax
            # Perturbed normal: rotate about a random axis, re-face.
            a0, a1, a2 = _sphere_point(rand_uniform(seed, stream, cell, 1),
                                       rand_uniform(seed, stream, cell, 2))
            ang = delta_n * rand_uniform(seed, stream, cell, 3)
            p0, p1, p2 = _rotate(n0, n1, n2, a0, a1, a2, ang)
            pdot = p0 * mx + p1 * my + p2
            if pdot > 0.0:
                p0 = -p0
                p1 = -p1
                p2 = -p2
                pdot = -pdot
            if -pdot < 1e-12 * mnorm:
                p0 = n0
                p1 = n1
                p2 = n2
            # Fully random depth and normal.
            ur = rand_uniform(seed, stream, cell, 4)
            dr = dmin + ur * (dmax - dmin)
            r0, r1, r2, _ = random_facing_normal(seed, stream, cell, 5, mx, my)
            # Six fresh ensemble members; the seventh, the incumbent
            # [d, n], is compared at its stored cost.
            cd[0] = d
            cn[0, 0] = p0
            cn[0, 1] = p1
            cn[0, 2] = p2
            cd[1] = d
            cn[1, 0] = r0
            cn[1, 1] = r1
            cn[1, 2] = r2
            cd[2] = dr
            cn[2, 0] = n0
            cn[2, 1] = n1
            cn[2, 2] = n2
            cd[3] = dr
            cn[3, 0] = r0
            cn[3, 1] = r1
            cn[3, 2] = r2
            cd[4] = dp
            cn[4, 0] = n0
            cn[4, 1] = n1
            cn[4, 2] = n2
            cd[5] = dp
            cn[5, 0] = p0
            cn[5, 1] = p1
            cn[5, 2] = p2
            for j in range(nviews):
                wbuf[j] = weights[y, x, j]
            ref_patch(ref_img, x, y, taps, spatial_w, sigma_r, rvals, rwts)
            best_obj = cost[y, x]
            best_i = -1
            best_photo = 0.0
            for i in range(6):
                score_row(src_imgs, src_dims, A, b, Kinv, x, y,
                          cd[i], cn[i, 0], cn[i, 1], cn[i, 2],
                          taps, rvals, rwts, row)
                c_photo = aggregate(row, wbuf)
                obj = _objective(c_photo, x, y, cd[i],
                                 cn[i, 0], cn[i, 1], cn[i, 2], wbuf,
                                 use_prior, prior_depth, prior_normal,
                                 prior_valid, eta, gamma, sigma_d, sigma_n,
                                 use_gc, A, b, Ksrc_inv, Rrel, trel, Kref,
                                 Kinv, src_depth, src_dims, lambda_geom, psi)
                if obj < best_obj:
                    best_obj = obj
                    best_i = i
                    best_photo = c_photo
                    for j in range(nviews):
                        bestrow[j] = row[j]
            if best_i >= 0:
                depth[y, x] = cd[best_i]
                normal[y, x, 0] = cn[best_i, 0]
                normal[y, x, 1] = cn[best_i, 1]
                normal[y, x, 2] = cn[best_i, 2]
                cost[y, x] = best_obj
                photo[y, x] = best_photo
                for j in range(nviews):
                    percost[y, x, j] = bestrow[j]


@njit(cache=True, parallel=True)
def geo_min_kernel(depth, A, b, Ksrc_inv, Rrel, trel, Kref, Kinv,
                   src_depth, src_dims, psi, out):
    """Per-pixel minimum geometric error over all source views."""
    h, w = depth.shape
    nviews = A.shape[0]
    for y in prange(h):
        for x in range(w):
            best = psi
            d = depth[y, x]
            if d > 0.0 and math.isfinite(d):
                for j in range(nviews):
                    e = geo_error_one(x, y, d, j, A, b, Ksrc_inv, Rrel, trel,
                                      Kref, Kinv, src_depth, src_dims, psi)
                    if e < best:
                        best = e
            out[y, x] = best
