"""Measurement routines shared by the unit tests and the acceptance suite."""
import math

import numpy as np
import torch

import oracles
from deepdr.evaluation import mae, psnr, rmse_depth
from deepdr.losses import (FeatureExtractor, depth_gradient, hinge_d, hinge_g, perceptual, rec_l1,
                           seg_loss, style)
from deepdr.synth.render import correspondence, project, random_scene, render_frame
from deepdr.temporal import backward_warp, temporal_losses, to_flow_tensor


def fd_relative_error(fn, inputs, eps=1e-6):
    """max over inputs of ||autograd - central difference|| / ||central difference||.

    ``fn`` maps double tensors to a scalar.
    """
    inputs = [x.detach().clone().requires_grad_(True) for x in inputs]
    grads = torch.autograd.grad(fn(*inputs), inputs, allow_unused=True)
    grads = [torch.zeros_like(x) if gr is None else gr for x, gr in zip(inputs, grads)]
    worst = 0.0
    for k, x in enumerate(inputs):
        num = torch.zeros_like(x)
        flat, nflat = x.detach().view(-1), num.view(-1)
        for i in range(flat.numel()):
            args = [y.detach() for y in inputs]
            plus = [a.clone() for a in args]
            minus = [a.clone() for a in args]
            plus[k].view(-1)[i] += eps
            minus[k].view(-1)[i] -= eps
            with torch.no_grad():
                nflat[i] = (fn(*plus) - fn(*minus)) / (2 * eps)
        denom = max(num.norm().item(), 1e-12)
        worst = max(worst, (grads[k] - num).norm().item() / denom)
    return worst


def loss_gradient_errors(seed=0):
    """Relative finite-difference error of every differentiable loss, double precision."""
    g = torch.Generator().manual_seed(seed)
    r = lambda *s: torch.randn(*s, generator=g, dtype=torch.float64)
    fx = FeatureExtractor(channels=(4, 4)).double()
    I, I_o = r(2, 3, 6, 6), r(2, 3, 6, 6)
    D, D_o = r(2, 1, 6, 6), r(2, 1, 6, 6)
    mask = (torch.rand(2, 1, 6, 6, generator=g) > 0.5).double()
    S = torch.randint(0, 4, (2, 6, 6), generator=g)
    flow = r(2, 2, 6, 6) * 1.5
    occ = torch.rand(2, 1, 6, 6, generator=g, dtype=torch.float64)
    frames = [r(1, 3, 6, 6) for _ in range(3)]
    flows = [None] + [r(1, 2, 6, 6) for _ in range(2)]
    occls = [None] + [torch.rand(1, 1, 6, 6, generator=g, dtype=torch.float64) for _ in range(2)]
    return {
        "rec": fd_relative_error(lambda a: rec_l1(I, a), [I_o]),
        "rec_masked": fd_relative_error(lambda a: rec_l1(I, a, mask), [I_o]),
        "perceptual": fd_relative_error(lambda a: perceptual(I, a, fx), [I_o]),
        "style": fd_relative_error(lambda a: style(I, a, fx), [I_o]),
        "sobel_gradient": fd_relative_error(lambda a: depth_gradient(D, a), [D_o]),
        "seg_ce": fd_relative_error(lambda a, b: seg_loss([a, b], S), [r(2, 4, 3, 3), r(2, 4, 6, 6)]),
        "hinge_d": fd_relative_error(hinge_d, [r(2, 1, 4, 4), r(2, 1, 4, 4)]),
        "hinge_g": fd_relative_error(hinge_g, [r(2, 1, 4, 4)]),
        "temporal_st": fd_relative_error(
            lambda a, b, c: temporal_losses([a, b, c], flows, occls, long_term=False)[0], frames),
        "temporal_lt": fd_relative_error(
            lambda a, b, c: temporal_losses([a, b, c], flows, occls, flows, occls)[1], frames),
        "warp": fd_relative_error(lambda a: (backward_warp(a, flow) * occ).sum(), [r(2, 3, 6, 6)]),
    }


def oracle_errors(cases=20, seed=0):
    """Max absolute deviation from the brute-force loops over ``cases`` random inputs."""
    rng = np.random.default_rng(seed)
    err = {k: 0.0 for k in ("rec_l1", "depth_gradient", "seg_loss", "backward_warp", "temporal_losses",
                            "psnr", "mae", "rmse")}
    t = lambda a: torch.from_numpy(np.asarray(a, np.float64))
    for _ in range(cases):
        N, C = int(rng.integers(1, 3)), int(rng.integers(1, 4))
        H, W = int(rng.integers(3, 8)), int(rng.integers(3, 8))
        x, y = rng.normal(size=(N, C, H, W)), rng.normal(size=(N, C, H, W))
        err["rec_l1"] = max(err["rec_l1"], abs(float(rec_l1(t(x), t(y))) - oracles.l1_loop(x, y)))

        D, D_o = rng.uniform(size=(N, H, W)), rng.uniform(size=(N, H, W))
        v = float(depth_gradient(t(D)[:, None], t(D_o)[:, None]))
        err["depth_gradient"] = max(err["depth_gradient"], abs(v - oracles.depth_gradient_loop(D, D_o)))

        K = int(rng.integers(2, 5))
        S = rng.integers(0, K, size=(N, H, W))
        logits = [rng.normal(size=(N, K, max(H // s, 1), max(W // s, 1))) * 2 for s in (4, 2, 1)]
        v = float(seg_loss([t(l) for l in logits], torch.from_numpy(S)))
        err["seg_loss"] = max(err["seg_loss"], abs(v - oracles.seg_ce_loop(logits, S)))

        img = rng.normal(size=(C, H, W))
        flow = rng.uniform(-3, 3, size=(H, W, 2))
        w = backward_warp(t(img)[None], t(flow).permute(2, 0, 1)[None])[0].numpy()
        err["backward_warp"] = max(err["backward_warp"], float(np.abs(w - oracles.warp_loop(img, flow)).max()))

        T = int(rng.integers(2, 5))
        outs = [rng.normal(size=(C, H, W)) for _ in range(T)]
        ff = [None] + [rng.uniform(-2, 2, size=(H, W, 2)) for _ in range(1, T)]
        of = [None] + [rng.uniform(size=(H, W)) for _ in range(1, T)]
        f1 = [None] + [rng.uniform(-2, 2, size=(H, W, 2)) for _ in range(1, T)]
        o1 = [None] + [rng.uniform(size=(H, W)) for _ in range(1, T)]
        tf = lambda f: None if f is None else t(f).permute(2, 0, 1)[None]
        to = lambda o: None if o is None else t(o)[None, None]
        st, lt = temporal_losses([t(o)[None] for o in outs], [tf(f) for f in ff], [to(o) for o in of],
                                 [tf(f) for f in f1], [to(o) for o in o1])
        st_ref, lt_ref = oracles.temporal_loop(outs, ff, of, f1, o1)
        err["temporal_losses"] = max(err["temporal_losses"], abs(float(st) - st_ref), abs(float(lt) - lt_ref))

        I, I_o = rng.uniform(-1, 1, size=(3, H, W)), rng.uniform(-1, 1, size=(3, H, W))
        Dm, Dm_o = rng.uniform(size=(H, W)), rng.uniform(size=(H, W))
        m = rng.uniform(size=(H, W)) > 0.5
        m[0, 0] = True
        ref_mae, ref_psnr, ref_rmse = oracles.metrics_loop(I, I_o, Dm, Dm_o, m, 10.0)
        mt = t(m.astype(float))[None, None]
        err["mae"] = max(err["mae"], abs(mae(t(I)[None], t(I_o)[None], mt, "hole") - ref_mae))
        err["psnr"] = max(err["psnr"], abs(psnr(t(I)[None], t(I_o)[None], mt, "hole") - ref_psnr))
        err["rmse"] = max(err["rmse"], abs(rmse_depth(t(Dm)[None, None], t(Dm_o)[None, None], 10.0, mt, "hole")
                                          - ref_rmse))
    return err


def flow_warp_residual(seq):
    """(MAE in 8-bit units of prev frame warped by GT flow vs current, on valid pixels; valid fraction)."""
    errs, valid_frac = [], []
    for t in range(1, seq.num_frames):
        img = torch.from_numpy(seq.color[t - 1]).permute(2, 0, 1)[None].double()
        w = backward_warp(img, to_flow_tensor(seq.flow_fwd[t], dtype=torch.float64))[0].permute(1, 2, 0).numpy()
        valid = seq.occl_fwd[t] > 0.5
        errs.append(np.abs(w - seq.color[t])[valid])
        valid_frac.append(valid.mean())
    # colors live in [-1, 1]: one 8-bit step is 2/255
    return float(np.concatenate(errs).mean() * 127.5), float(np.mean(valid_frac))


def _footprint_single_face(spec, pose, u, v):
    if not (0 <= u <= spec.size - 1 and 0 <= v <= spec.size - 1):
        return True
    x0, y0 = int(math.floor(u)), int(math.floor(v))
    faces = {oracles.raycast_face(spec, pose, min(x0 + i, spec.size - 1), min(y0 + j, spec.size - 1))
             for i in (0, 1) for j in (0, 1)}
    return len(faces) == 1


def occlusion_agreement(n_pixels=1000, seed=123):
    """Compare exact_occlusion with ray-cast visibility of the frame-t surface point in frame x.

    Returns (overall agreement, disagreements whose bilinear footprint lies on a
    single surface, pixels marked valid that are not visible, samples).
    Footprints straddling a silhouette mix surfaces and are the only place the
    interpolated-depth test may differ.
    """
    rng = np.random.default_rng(seed)
    agree = off_edge_bad = false_valid = total = 0
    k = 0
    while total < n_pixels:
        spec = random_scene(np.random.default_rng(k), 5, 48, 8, seed=k, speed=0.15)
        frames = [render_frame(spec, p) for p in spec.poses]
        for t, x in ((1, 0), (4, 0), (3, 2)):
            _, occ = correspondence(spec, frames, t, x)
            u2, v2, _ = project(spec, spec.poses[x], frames[t].points)
            for _ in range(50):
                v, u = rng.integers(0, spec.size, 2)
                vis = oracles.point_visible(spec, spec.poses[x], frames[t].points[v, u])
                ok = vis == (occ[v, u] > 0.5)
                agree += ok
                false_valid += (occ[v, u] > 0.5) and not vis
                if not ok and _footprint_single_face(spec, spec.poses[x], u2[v, u], v2[v, u]):
                    off_edge_bad += 1
                total += 1
        k += 1
    return agree / total, off_edge_bad, false_valid, total
