"""Flow-based warping, short/long-term temporal losses and flow providers."""
from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F


def to_flow_tensor(flow, device=None, dtype=torch.float32):
    """``H x W x 2`` (numpy) or ``N x H x W x 2`` -> ``N x 2 x H x W`` tensor."""
    f = torch.as_tensor(np.asarray(flow) if not torch.is_tensor(flow) else flow, dtype=dtype, device=device)
    if f.dim() == 3:
        f = f[None]
    return f.permute(0, 3, 1, 2).contiguous()


def backward_warp(img, flow):
    """Sample ``img`` at ``(x + dx, y + dy)`` bilinearly; out-of-range samples take border values.

    ``img`` is ``N x C x H x W``; ``flow`` is ``N x 2 x H x W`` in pixels.
    Gradients flow to ``img`` only.
    """
    n, _, h, w = img.shape
    flow = flow.detach().to(img.dtype)
    ys, xs = torch.meshgrid(torch.arange(h, dtype=img.dtype, device=img.device),
                            torch.arange(w, dtype=img.dtype, device=img.device), indexing="ij")
    x = xs + flow[:, 0]
    y = ys + flow[:, 1]
    gx = 2 * x / max(w - 1, 1) - 1
    gy = 2 * y / max(h - 1, 1) - 1
    grid = torch.stack([gx, gy], -1)
    return F.grid_sample(img, grid, mode="bilinear", padding_mode="border", align_corners=True)


def _pair_loss(cur, ref, flow, occl):
    warped = backward_warp(ref, flow)
    return (occl * (cur - warped).abs()).mean()


def temporal_losses(outputs, flows_fwd, occl_fwd, flows_first=None, occl_first=None, long_term=True):
    """Short- and long-term temporal losses over one clip (0-based frames).

    ``flows_fwd[t]`` maps frame t to t-1 and ``flows_first[t]`` maps frame t
    to frame 0, both ``N x 2 x H x W``; occlusions are ``N x 1 x H x W``.
    Index 0 of each list is unused. ``long_term=False`` skips the
    long-term sum (lt = 0) when no flow to frame 0 exists.
    """
    T = len(outputs)
    zero = outputs[0].new_zeros(())
    st, lt = zero, zero
    for t in range(1, T):
        if flows_fwd[t] is None or occl_fwd[t] is None:
            raise ValueError(f"missing flow/occlusion for frame pair {t}->{t - 1}")
        st = st + _pair_loss(outputs[t], outputs[t - 1], flows_fwd[t], occl_fwd[t])
    for t in range(2, T if long_term else 0):
        if flows_first is None or flows_first[t] is None or occl_first[t] is None:
            raise ValueError(f"missing flow/occlusion for frame pair {t}->0")
        lt = lt + _pair_loss(outputs[t], outputs[0], flows_first[t], occl_first[t])
    return st, lt


class FlowProviderError(RuntimeError):
    pass


class GroundTruthFlowProvider:
    """Serves the flow and occlusion stored with a synthetic sequence."""

    def __init__(self, sample):
        self.sample = sample

    def __call__(self, t, x):
        s = self.sample
        if x == t - 1 and s.flow_fwd and s.flow_fwd[t] is not None:
            return s.flow_fwd[t], s.occl_fwd[t]
        if x == 0 and s.flow_to_first and s.flow_to_first[t] is not None:
            return s.flow_to_first[t], s.occl_to_first[t]
        raise FlowProviderError(f"sequence has no stored flow for frame pair {t}->{x}")


_PROVIDERS = {"ground_truth": GroundTruthFlowProvider}


def register_flow_provider(name, factory):
    """Register an external estimator; ``factory(sample)`` must return ``provider(t, x)``."""
    _PROVIDERS[name] = factory


def flow_provider(sample, name="ground_truth"):
    if name not in _PROVIDERS:
        raise FlowProviderError(f"no flow provider registered under {name!r}")
    if name == "ground_truth" and not sample.flow_fwd:
        raise FlowProviderError("sequence carries no ground-truth flow and no estimator was requested")
    return _PROVIDERS[name](sample)
