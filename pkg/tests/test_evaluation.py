import math

import numpy as np
import pytest
import torch

import oracles
from deepdr.evaluation import (PSNR_CAP, csv_psnr, efficiency_report, fid_proxy, frechet_distance, mae, psnr,
                               rmse_depth, warp_error)
from deepdr.generator import ModelConfig
from deepdr.losses import FeatureExtractor
from deepdr.training import SequenceTensors


def test_identical_metrics():
    x = torch.rand(1, 3, 5, 5)
    assert mae(x, x) == 0
    assert rmse_depth(x[:, :1], x[:, :1], 10.0) == 0
    assert psnr(x, x) == math.inf
    assert csv_psnr(psnr(x, x)) == PSNR_CAP


def test_uniform_depth_error():
    D = torch.rand(1, 1, 6, 6) * 0.5
    assert rmse_depth(D, D + 0.03, 10.0) == pytest.approx(0.3, rel=1e-5)


def test_psnr_peak_two():
    x = torch.zeros(1, 3, 4, 4)
    # MSE 1 with peak-to-peak 2 -> 10 log10(4)
    assert psnr(x, x + 1) == pytest.approx(10 * math.log10(4))


def test_hole_region_against_loop():
    rng = np.random.default_rng(3)
    I, I_o = rng.uniform(-1, 1, (3, 6, 7)), rng.uniform(-1, 1, (3, 6, 7))
    D, D_o = rng.uniform(size=(6, 7)), rng.uniform(size=(6, 7))
    m = rng.uniform(size=(6, 7)) > 0.4
    ref = oracles.metrics_loop(I, I_o, D, D_o, m, 10.0)
    mt = torch.from_numpy(m.astype(float))[None, None]
    t = lambda a: torch.from_numpy(a)[None]
    assert mae(t(I), t(I_o), mt, "hole") == pytest.approx(ref[0], abs=1e-9)
    assert psnr(t(I), t(I_o), mt, "hole") == pytest.approx(ref[1], abs=1e-9)
    assert rmse_depth(t(D)[None], t(D_o)[None], 10.0, mt, "hole") == pytest.approx(ref[2], abs=1e-9)


def test_warp_error_cases(small_seqs):
    static = [torch.ones(1, 3, 4, 4)] * 3
    zero = [None] + [torch.zeros(1, 2, 4, 4)] * 2
    ones = [None] + [torch.ones(1, 1, 4, 4)] * 2
    assert warp_error(static, zero, ones) == 0
    with pytest.raises(ValueError):
        warp_error(static[:1], zero, ones)
    st = SequenceTensors(small_seqs[0])
    copy = [(st.image[t:t + 1] * (1 - st.mask[t:t + 1])) for t in range(st.T)]
    flows = [None] + [f[None] for f in st.flow_fwd[1:]]
    occls = [None] + [o[None] for o in st.occl_fwd[1:]]
    assert warp_error(copy, flows, occls) > 0


def test_frechet_closed_form():
    rng = np.random.default_rng(0)
    mu1, mu2 = rng.normal(size=4), rng.normal(size=4)
    s1, s2 = np.diag(rng.uniform(0.5, 2, 4)), np.diag(rng.uniform(0.5, 2, 4))
    assert frechet_distance(mu1, s1, mu2, s2) == pytest.approx(oracles.frechet_gaussian(mu1, s1, mu2, s2), abs=1e-9)
    assert frechet_distance(mu1, s1, mu1, s1) == pytest.approx(0, abs=1e-6)


def test_frechet_singular():
    s = np.zeros((3, 3))
    assert frechet_distance(np.zeros(3), s, np.zeros(3), s) == pytest.approx(0, abs=1e-6)


def test_fid_proxy_sets():
    fx = FeatureExtractor()
    a = torch.rand(6, 3, 16, 16) * 2 - 1
    assert fid_proxy(a, a, fx) == pytest.approx(0, abs=1e-6)
    assert fid_proxy(a, -a, fx) > 0
    with pytest.raises(ValueError):
        fid_proxy(a[:1], a, fx)


def test_efficiency_report():
    tiny = ModelConfig(size=16, levels=3, width=4, coarse_width=4, spade_hidden=4, num_classes=8)
    rep = efficiency_report(tiny, frames=2, warmup=1, size=32)
    assert rep["params_total"] == sum(rep["params"].values())
    assert rep["mads"] > 0 and rep["seconds_per_frame"] > 0
    toy = efficiency_report(ModelConfig.toy(), time_it=False)
    full = efficiency_report(ModelConfig.full_scale(), time_it=False)
    assert toy["params_total"] < full["params_total"]


def test_warp_error_is_mean_short_term():
    from deepdr.temporal import temporal_losses
    T = 4
    outs = [torch.randn(1, 3, 5, 5) for _ in range(T)]
    flows = [None] + [torch.randn(1, 2, 5, 5) for _ in range(T - 1)]
    occls = [None] + [torch.rand(1, 1, 5, 5) for _ in range(T - 1)]
    st, _ = temporal_losses(outs, flows, occls, long_term=False)
    assert warp_error(outs, flows, occls) == pytest.approx(float(st) / (T - 1), rel=1e-6)


def test_fid_proxy_symmetric():
    fx = FeatureExtractor()
    a, b = torch.rand(5, 3, 16, 16), torch.rand(4, 3, 16, 16) * 0.5
    assert fid_proxy(a, b, fx) == pytest.approx(fid_proxy(b, a, fx), rel=1e-6)


def test_rmse_invariant_to_depth_max():
    D_m = torch.rand(1, 1, 6, 6) * 8
    D_o_m = D_m + torch.randn(1, 1, 6, 6) * 0.2
    a = rmse_depth(D_m / 10, D_o_m / 10, 10.0)
    b = rmse_depth(D_m / 25, D_o_m / 25, 25.0)
    assert a == pytest.approx(b, rel=1e-5)


def test_metrics_frame_permutation_invariant():
    I, I_o = torch.rand(4, 3, 5, 5), torch.rand(4, 3, 5, 5)
    p = torch.randperm(4)
    assert mae(I, I_o) == pytest.approx(mae(I[p], I_o[p]), rel=1e-6)
    assert psnr(I, I_o) == pytest.approx(psnr(I[p], I_o[p]), rel=1e-6)
