"""Image, depth, segmentation and adversarial objectives and their weighted sum."""
from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .core_types import LossWeights

REPORT_KEYS = ("rec_I", "per", "sty", "adv_I", "rec_D", "grad", "adv_D", "seg", "st", "lt",
               "total_G", "total_D_I", "total_D_D")


class FeatureExtractor(nn.Module):
    """Frozen feature stages for perceptual/style losses.

    The default is a seeded fixed-random conv stack (``provenance='fixed-random'``);
    any list of modules can be plugged in instead, e.g. a pretrained backbone.
    """

    def __init__(self, stages=None, provenance="fixed-random", seed=1234, channels=(16, 32, 64), in_ch=3):
        super().__init__()
        if stages is None:
            gen = torch.Generator().manual_seed(seed)
            stages, c = [], in_ch
            for k, co in enumerate(channels):
                conv = nn.Conv2d(c, co, 3, padding=1)
                with torch.no_grad():
                    conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen) * (2.0 / (9 * c)) ** 0.5)
                    conv.bias.zero_()
                layers = [conv, nn.ReLU()] if k == 0 else [nn.AvgPool2d(2), conv, nn.ReLU()]
                stages.append(nn.Sequential(*layers))
                c = co
        self.stages = nn.ModuleList(stages)
        self.provenance = provenance
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    def train(self, mode=True):
        return super().train(False)

    def forward(self, x):
        feats = []
        for s in self.stages:
            x = s(x)
            feats.append(x)
        return feats


def _masked_mean(t, mask):
    if mask is None:
        return t.mean()
    m = mask.expand_as(t)
    return (t * m).sum() / m.sum().clamp_min(1.0)


def rec_l1(x, y, mask=None):
    """Mean absolute difference; ``mask`` restricts it to hole pixels."""
    return _masked_mean((x - y).abs(), mask)


def perceptual(I, I_o, fx: FeatureExtractor):
    return sum((a - b).abs().mean() for a, b in zip(fx(I), fx(I_o)))


def gram(feat):
    n, c, h, w = feat.shape
    f = feat.reshape(n, c, h * w)
    return f @ f.transpose(1, 2) / (c * h * w)


def style(I, I_o, fx: FeatureExtractor):
    return sum((gram(a) - gram(b)).abs().mean() for a, b in zip(fx(I), fx(I_o)))


_SOBEL_X = torch.tensor([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])


def sobel(d):
    """2-channel Sobel response (x, y) of ``N x 1 x H x W`` maps, replicate-padded."""
    k = torch.stack([_SOBEL_X, _SOBEL_X.t()])[:, None].to(d)
    return F.conv2d(F.pad(d, (1, 1, 1, 1), mode="replicate"), k)


def depth_gradient(D, D_o):
    return (sobel(D) - sobel(D_o)).abs().mean()


def seg_loss(seg_logits, S):
    """Mean over scales of pixel-mean cross-entropy after bilinear upsampling."""
    if not seg_logits:
        return S.new_zeros((), dtype=torch.float32)
    C = seg_logits[0].shape[1]
    if S.min() < 0 or S.max() >= C:
        raise ValueError(f"segmentation ids must lie in [0, {C})")
    size = S.shape[-2:]
    total = 0.0
    for logits in seg_logits:
        up = F.interpolate(logits, size=size, mode="bilinear", align_corners=False)
        total = total + F.cross_entropy(up, S.long())
    return total / len(seg_logits)


def hinge_d(real_scores, fake_scores):
    return F.relu(1 - real_scores).mean() + F.relu(1 + fake_scores).mean()


def hinge_g(fake_scores):
    return -fake_scores.mean()


_PART_KEYS = ("rec_I", "per", "sty", "adv_I", "rec_D", "grad", "adv_D", "seg", "st", "lt")


def combine(parts: dict, w: LossWeights = None, temporal_enabled=True, seg_enabled=True) -> dict:
    """Weighted generator objective plus pass-through of the components.

    Discriminator totals ``total_D_I``/``total_D_D`` are copied through when
    present. ``st``/``lt`` may be omitted when temporal terms are disabled,
    ``seg`` when the segmentation decoder is disabled.
    """
    w = w or LossWeights()
    parts = dict(parts)
    optional = set()
    if not temporal_enabled:
        optional |= {"st", "lt"}
    if not seg_enabled:
        optional |= {"seg"}
    missing = [k for k in _PART_KEYS if k not in parts and k not in optional]
    if missing:
        raise KeyError(f"missing loss components: {missing}")
    for k in optional:
        parts.setdefault(k, 0.0)
    L_I = w.rec * parts["rec_I"] + w.per * parts["per"] + w.sty * parts["sty"] + parts["adv_I"]
    L_D = w.rec * parts["rec_D"] + w.grad * parts["grad"] + parts["adv_D"]
    total = L_I + L_D
    if seg_enabled:
        total = total + w.seg * parts["seg"]
    if temporal_enabled:
        total = total + w.t * (parts["st"] + parts["lt"])
    report = {k: parts[k] for k in _PART_KEYS}
    report["total_G"] = total
    report["total_D_I"] = parts.get("total_D_I", 0.0)
    report["total_D_D"] = parts.get("total_D_D", 0.0)
    return report
