"""Pixel metrics, warp error, FID-proxy and efficiency counters."""
from __future__ import annotations

import math
import statistics
import time

import numpy as np
import torch
from scipy import linalg

from .temporal import backward_warp

PSNR_CAP = 99.0


def _region_mean(t, mask, region):
    if region == "full" or mask is None:
        return t.mean()
    if region != "hole":
        raise ValueError(f"unknown region {region!r}")
    m = mask.expand_as(t).to(t.dtype)
    if m.sum() == 0:
        return t.new_tensor(float("nan"))
    return (t * m).sum() / m.sum()


def mae(I, I_o, mask=None, region="full"):
    return float(_region_mean((I - I_o).abs(), mask, region))


def psnr(I, I_o, mask=None, region="full", peak=2.0):
    """PSNR in dB for images in [-1, 1] (peak-to-peak 2). Identical inputs give ``inf``."""
    mse = float(_region_mean((I - I_o) ** 2, mask, region))
    if mse == 0:
        return math.inf
    return 10 * math.log10(peak ** 2 / mse)


def rmse_depth(D, D_o, depth_scale, mask=None, region="full"):
    """RMSE in meters for depth maps scaled to [0, 1] by ``depth_scale``."""
    return math.sqrt(float(_region_mean(((D - D_o) * depth_scale) ** 2, mask, region)))


def csv_psnr(value):
    return min(value, PSNR_CAP)


def warp_error(outputs, flows_fwd, occl_fwd):
    """Occlusion-weighted mean residual between consecutive warped outputs."""
    T = len(outputs)
    if T < 2:
        raise ValueError("warp error needs at least two frames")
    total = 0.0
    for t in range(1, T):
        warped = backward_warp(outputs[t - 1], flows_fwd[t])
        total += float((occl_fwd[t] * (outputs[t] - warped).abs()).mean())
    return total / (T - 1)


def pooled_features(frames, fx):
    """Global-average-pool every stage of ``fx`` and concatenate, one row per frame."""
    with torch.no_grad():
        feats = fx(frames)
    return torch.cat([f.mean((2, 3)) for f in feats], 1).double().cpu().numpy()


def frechet_distance(mu1, s1, mu2, s2, eps=1e-6):
    diff = mu1 - mu2
    with np.errstate(invalid="ignore", divide="ignore"):
        covmean, _ = linalg.sqrtm(s1 @ s2, disp=False)
    if not np.isfinite(covmean).all():
        off = np.eye(s1.shape[0]) * eps
        covmean = linalg.sqrtm((s1 + off) @ (s2 + off))
    covmean = covmean.real
    return float(diff @ diff + np.trace(s1) + np.trace(s2) - 2 * np.trace(covmean))


def fid_proxy(set_a, set_b, fx, eps=1e-6):
    """Frechet distance between pooled features of two frame sets.

    Never comparable to Inception FID: the number depends on ``fx``,
    whose ``provenance`` should be reported alongside.
    """
    if set_a.shape[0] < 2 or set_b.shape[0] < 2:
        raise ValueError("fid_proxy needs at least two frames per set")
    fa, fb = pooled_features(set_a, fx), pooled_features(set_b, fx)
    jitter = eps * np.eye(fa.shape[1])
    sa, sb = np.cov(fa, rowvar=False) + jitter, np.cov(fb, rowvar=False) + jitter
    return frechet_distance(fa.mean(0), sa, fb.mean(0), sb, eps)


def efficiency_report(cfg, frames=100, warmup=10, size=None, time_it=True):
    """Parameters by submodule, MADs at ``size`` (default 256) and median per-frame latency."""
    from .generator import Generator, count_mads, count_params

    size = size or 256
    from dataclasses import replace
    at_size = replace(cfg, size=size)
    rep = {"params": count_params(cfg, breakdown=True), "mads": count_mads(at_size, size)}
    rep["params_total"] = sum(rep["params"].values())
    if time_it:
        torch.manual_seed(0)
        gen = Generator(cfg).eval()
        x = torch.zeros(1, 3, cfg.size, cfg.size)
        d = torch.zeros(1, 1, cfg.size, cfg.size)
        m = torch.zeros(1, 1, cfg.size, cfg.size)
        times, state = [], None
        with torch.no_grad():
            for k in range(warmup + frames):
                t0 = time.perf_counter()
                _, state = gen(x, d, m, state, composite=False)
                if k >= warmup:
                    times.append(time.perf_counter() - t0)
        rep["seconds_per_frame"] = statistics.median(times)
        rep["timed_at"] = cfg.size
    return rep
