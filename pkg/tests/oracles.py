"""Brute-force reference implementations.

Plain Python loops over pixels; nothing here imports the vectorized code
paths it is used to check.
"""
import math

import numpy as np


def l1_loop(x, y):
    x, y = np.asarray(x, float).ravel(), np.asarray(y, float).ravel()
    s = 0.0
    for a, b in zip(x, y):
        s += abs(a - b)
    return s / len(x)


def sobel_loop(d):
    """d: H x W. Returns 2 x H x W responses with replicate padding."""
    d = np.asarray(d, float)
    H, W = d.shape
    kx = [[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]]
    out = np.zeros((2, H, W))
    for y in range(H):
        for x in range(W):
            gx = gy = 0.0
            for j in range(3):
                for i in range(3):
                    v = d[min(max(y + j - 1, 0), H - 1), min(max(x + i - 1, 0), W - 1)]
                    gx += kx[j][i] * v
                    gy += kx[i][j] * v
            out[0, y, x], out[1, y, x] = gx, gy
    return out


def depth_gradient_loop(D, D_o):
    """D, D_o: N x H x W."""
    tot, n = 0.0, 0
    for a, b in zip(D, D_o):
        sa, sb = sobel_loop(a), sobel_loop(b)
        for v1, v2 in zip(sa.ravel(), sb.ravel()):
            tot += abs(v1 - v2)
            n += 1
    return tot / n


def bilinear_resize_loop(img, H, W):
    """Half-pixel-centred bilinear resize of C x h x w (align_corners=False)."""
    C, h, w = img.shape
    out = np.zeros((C, H, W))
    for y in range(H):
        sy = max((y + 0.5) * h / H - 0.5, 0.0)
        y0 = min(int(math.floor(sy)), h - 1)
        y1 = min(y0 + 1, h - 1)
        fy = sy - y0
        for x in range(W):
            sx = max((x + 0.5) * w / W - 0.5, 0.0)
            x0 = min(int(math.floor(sx)), w - 1)
            x1 = min(x0 + 1, w - 1)
            fx = sx - x0
            for c in range(C):
                out[c, y, x] = ((1 - fy) * ((1 - fx) * img[c, y0, x0] + fx * img[c, y0, x1])
                                + fy * ((1 - fx) * img[c, y1, x0] + fx * img[c, y1, x1]))
    return out


def seg_ce_loop(logits_list, S):
    """logits_list: list of N x C x h x w arrays; S: N x H x W ids."""
    N, H, W = S.shape
    total = 0.0
    for logits in logits_list:
        acc = 0.0
        for n in range(N):
            up = bilinear_resize_loop(logits[n], H, W)
            for y in range(H):
                for x in range(W):
                    z = up[:, y, x]
                    m = max(z)
                    lse = m + math.log(sum(math.exp(v - m) for v in z))
                    acc += lse - z[S[n, y, x]]
        total += acc / (N * H * W)
    return total / len(logits_list)


def warp_loop(img, flow):
    """img: C x H x W, flow: H x W x 2 -> bilinear sample at (x+dx, y+dy), border-clamped."""
    C, H, W = img.shape
    out = np.zeros_like(img, dtype=float)
    for y in range(H):
        for x in range(W):
            sx = min(max(x + flow[y, x, 0], 0.0), W - 1.0)
            sy = min(max(y + flow[y, x, 1], 0.0), H - 1.0)
            x0, y0 = int(math.floor(sx)), int(math.floor(sy))
            x1, y1 = min(x0 + 1, W - 1), min(y0 + 1, H - 1)
            fx, fy = sx - x0, sy - y0
            for c in range(C):
                out[c, y, x] = ((1 - fy) * ((1 - fx) * img[c, y0, x0] + fx * img[c, y0, x1])
                                + fy * ((1 - fx) * img[c, y1, x0] + fx * img[c, y1, x1]))
    return out


def temporal_loop(outputs, flows_fwd, occl_fwd, flows_first, occl_first):
    """Single-sample clip: outputs C x H x W, flows H x W x 2, occlusion H x W."""
    def pair(cur, ref, flow, occ):
        w = warp_loop(ref, flow)
        C, H, W = cur.shape
        s = 0.0
        for c in range(C):
            for y in range(H):
                for x in range(W):
                    s += occ[y, x] * abs(cur[c, y, x] - w[c, y, x])
        return s / (C * H * W)

    T = len(outputs)
    st = sum(pair(outputs[t], outputs[t - 1], flows_fwd[t], occl_fwd[t]) for t in range(1, T))
    lt = sum(pair(outputs[t], outputs[0], flows_first[t], occl_first[t]) for t in range(2, T))
    return st, lt


def metrics_loop(I, I_o, D, D_o, mask, depth_scale):
    """Hole-region MAE/PSNR (peak 2) and depth RMSE in meters; arrays C x H x W / H x W."""
    se = ae = 0.0
    n = 0
    C, H, W = I.shape
    for c in range(C):
        for y in range(H):
            for x in range(W):
                if mask[y, x]:
                    d = I[c, y, x] - I_o[c, y, x]
                    se += d * d
                    ae += abs(d)
                    n += 1
    dse, dn = 0.0, 0
    for y in range(H):
        for x in range(W):
            if mask[y, x]:
                dse += ((D[y, x] - D_o[y, x]) * depth_scale) ** 2
                dn += 1
    mse = se / n
    return ae / n, 10 * math.log10(4.0 / mse), math.sqrt(dse / dn)


# --- geometry ------------------------------------------------------------------

def _box_faces(lo, hi):
    """Six axis-aligned rectangles as (axis, coordinate, bounds of the two other axes)."""
    faces = []
    for ax in range(3):
        others = [a for a in range(3) if a != ax]
        for coord in (lo[ax], hi[ax]):
            faces.append((ax, coord, others, [(lo[o], hi[o]) for o in others]))
    return faces


def ray_hits(origin, direction, faces, eps=1e-9):
    """Distances along the ray (parameter t) to every rectangle it crosses."""
    hits = []
    for ax, coord, others, bounds in faces:
        if abs(direction[ax]) < eps:
            continue
        t = (coord - origin[ax]) / direction[ax]
        if t <= eps:
            continue
        ok = True
        for o, (a, b) in zip(others, bounds):
            p = origin[o] + t * direction[o]
            if p < a - 1e-9 or p > b + 1e-9:
                ok = False
                break
        if ok:
            hits.append(t)
    return hits


def scene_faces(spec):
    faces = _box_faces((0.0, 0.0, 0.0), tuple(spec.room))
    for b in spec.boxes:
        faces += _box_faces(tuple(b.lo), tuple(b.hi))
    return faces


def camera_basis(position, look_at):
    """Independent re-derivation of the camera frame (x right, y down, z forward)."""
    f = [l - p for l, p in zip(look_at, position)]
    n = math.sqrt(sum(v * v for v in f))
    f = [v / n for v in f]
    up = (0.0, 1.0, 0.0)
    x = (up[1] * f[2] - up[2] * f[1], up[2] * f[0] - up[0] * f[2], up[0] * f[1] - up[1] * f[0])
    nx = math.sqrt(sum(v * v for v in x))
    x = [v / nx for v in x]
    upv = (f[1] * x[2] - f[2] * x[1], f[2] * x[0] - f[0] * x[2], f[0] * x[1] - f[1] * x[0])
    y = [-v for v in upv]
    return x, y, f


def raycast_depth(spec, pose, u, v):
    """Camera-z depth of the nearest surface through pixel (u, v)."""
    x, y, f = camera_basis(*pose)
    c = (spec.size - 1) / 2
    a, b = (u - c) / spec.focal, (v - c) / spec.focal
    d = [a * x[k] + b * y[k] + f[k] for k in range(3)]
    return min(ray_hits(pose[0], d, scene_faces(spec)))


def raycast_face(spec, pose, u, v):
    """Index of the nearest rectangle hit through pixel (u, v)."""
    x, y, f = camera_basis(*pose)
    c = (spec.size - 1) / 2
    a, b = (u - c) / spec.focal, (v - c) / spec.focal
    d = [a * x[k] + b * y[k] + f[k] for k in range(3)]
    best, idx = math.inf, -1
    for i, face in enumerate(scene_faces(spec)):
        h = ray_hits(pose[0], d, [face])
        if h and h[0] < best:
            best, idx = h[0], i
    return idx


def point_visible(spec, pose, X, rel_eps=1e-4):
    """True when nothing lies strictly between camera ``pose`` and world point X, and X projects inside."""
    x, y, f = camera_basis(*pose)
    C = pose[0]
    rel = [X[k] - C[k] for k in range(3)]
    z = sum(rel[k] * f[k] for k in range(3))
    if z <= 0:
        return False
    c = (spec.size - 1) / 2
    u = spec.focal * sum(rel[k] * x[k] for k in range(3)) / z + c
    v = spec.focal * sum(rel[k] * y[k] for k in range(3)) / z + c
    tol = 1e-6
    if not (-tol <= u <= spec.size - 1 + tol and -tol <= v <= spec.size - 1 + tol):
        return False
    hits = ray_hits(C, rel, scene_faces(spec))
    # X sits at t == 1 along ``rel``
    return all(t >= 1 - rel_eps for t in hits)


def frechet_gaussian(mu1, s1, mu2, s2):
    """Closed form for commuting (diagonal) covariances."""
    d1, d2 = np.diag(s1), np.diag(s2)
    return float(np.sum((mu1 - mu2) ** 2) + np.sum(d1 + d2 - 2 * np.sqrt(d1 * d2)))
