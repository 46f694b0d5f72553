import torch
import torch.nn as nn
import torch.nn.functional as F


def make_act(name: str) -> nn.Module:
    if name == "relu":
        return nn.ReLU()
    if name == "elu":
        return nn.ELU()
    if name == "lrelu":
        return nn.LeakyReLU(0.2)
    raise ValueError(f"unknown activation {name!r}")


class GatedConv2d(nn.Module):
    """Gated convolution: ``act(norm(feat(x))) * sigmoid(gate(x))``.

    Feature and gate branches share one convolution with ``2 * out_ch``
    filters, split along channels.
    """

    def __init__(self, in_ch, out_ch, kernel_size=3, stride=1, dilation=1,
                 act="relu", norm=True):
        super().__init__()
        self.in_ch, self.out_ch = in_ch, out_ch
        pad = dilation * (kernel_size - 1) // 2
        self.conv = nn.Conv2d(in_ch, 2 * out_ch, kernel_size, stride, pad, dilation)
        self.norm = nn.InstanceNorm2d(out_ch) if norm else nn.Identity()
        self.act = make_act(act)

    def forward(self, x):
        if x.shape[1] != self.in_ch:
            raise ValueError(f"expected {self.in_ch} input channels, got {x.shape[1]}")
        feat, gate = self.conv(x).chunk(2, dim=1)
        return self.act(self.norm(feat)) * torch.sigmoid(gate)


class DilatedBlock(nn.Sequential):
    """Four stride-1 gated convs with dilations 2, 4, 8, 16."""

    def __init__(self, ch, act="relu", norm=True, dilations=(2, 4, 8, 16)):
        super().__init__(*[GatedConv2d(ch, ch, 3, 1, d, act, norm) for d in dilations])


class ConvLSTMCell(nn.Module):
    """Convolutional LSTM cell: all four gates from one conv over ``[x, h]``."""

    def __init__(self, in_ch, hidden_ch, kernel_size=3):
        super().__init__()
        self.hidden_ch = hidden_ch
        self.conv = nn.Conv2d(in_ch + hidden_ch, 4 * hidden_ch, kernel_size, padding=kernel_size // 2)

    def init_state(self, x):
        n, _, h, w = x.shape
        z = x.new_zeros(n, self.hidden_ch, h, w)
        return z, z.clone()

    def forward(self, x, state=None):
        if state is None:
            state = self.init_state(x)
        h, c = state
        if h.shape[0] != x.shape[0] or h.shape[2:] != x.shape[2:] or h.shape[1] != self.hidden_ch:
            raise ValueError(f"state shape {tuple(h.shape)} incompatible with input {tuple(x.shape)}")
        i, f, o, g = self.conv(torch.cat([x, h], 1)).chunk(4, dim=1)
        c = torch.sigmoid(f) * c + torch.sigmoid(i) * torch.tanh(g)
        h = torch.sigmoid(o) * torch.tanh(c)
        return h, (h, c)


class PyramidPooling(nn.Module):
    """Segmentation head: pooled context at several bin sizes, then 1x1 logits."""

    def __init__(self, in_ch, num_classes, bins=(1, 2, 3, 6)):
        super().__init__()
        red = max(in_ch // 4, 1)
        self.bins = bins
        self.stages = nn.ModuleList(
            nn.Sequential(nn.Conv2d(in_ch, red, 1, bias=False), nn.ReLU()) for _ in bins
        )
        self.classifier = nn.Conv2d(in_ch + red * len(bins), num_classes, 1)

    def forward(self, x):
        size = x.shape[2:]
        feats = [x]
        for b, stage in zip(self.bins, self.stages):
            p = stage(F.adaptive_avg_pool2d(x, b))
            feats.append(F.interpolate(p, size=size, mode="bilinear", align_corners=False))
        return self.classifier(torch.cat(feats, 1))


def seg_embedding(logits, mode="softmax"):
    if mode == "softmax":
        return torch.softmax(logits, 1)
    if mode == "onehot":
        return F.one_hot(logits.argmax(1), logits.shape[1]).permute(0, 3, 1, 2).to(logits.dtype)
    if mode == "logits":
        return logits
    raise ValueError(f"unknown segmentation embedding {mode!r}")


class RGBDSpade(nn.Module):
    """Spatially-adaptive normalization applied with one parameter set to both streams.

    Each stream is instance-normalized without affine terms and modulated as
    ``gamma(S) * x_hat + beta(S)``; gamma/beta come from the same convs for
    image and depth features.
    """

    def __init__(self, norm_ch, label_ch, hidden=128):
        super().__init__()
        self.norm = nn.InstanceNorm2d(norm_ch, affine=False)
        self.shared = nn.Sequential(nn.Conv2d(label_ch, hidden, 3, padding=1), nn.ReLU())
        self.gamma = nn.Conv2d(hidden, norm_ch, 3, padding=1)
        self.beta = nn.Conv2d(hidden, norm_ch, 3, padding=1)

    def modulation(self, seg, size):
        if seg.shape[2:] != size:
            seg = F.interpolate(seg, size=size, mode="nearest")
        actv = self.shared(seg)
        return self.gamma(actv), self.beta(actv)

    def forward(self, i, d, seg):
        if i.shape != d.shape:
            raise ValueError(f"stream shapes differ: {tuple(i.shape)} vs {tuple(d.shape)}")
        gamma, beta = self.modulation(seg, i.shape[2:])
        return gamma * self.norm(i) + beta, gamma * self.norm(d) + beta


class UpBlock(nn.Module):
    """Residual 2x up block conditioned on a predicted segmentation.

    The block's weights serve both the image and the depth stream; only the
    segmentation is predicted from the image stream.
    """

    def __init__(self, in_ch, out_ch, num_classes, spade_hidden=128, seg_mode="softmax"):
        super().__init__()
        self.seg_mode = seg_mode
        self.ppm = PyramidPooling(in_ch, num_classes)
        self.spade0 = RGBDSpade(in_ch, num_classes, spade_hidden)
        self.conv0 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.spade1 = RGBDSpade(out_ch, num_classes, spade_hidden)
        self.conv1 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1, bias=False) if in_ch != out_ch else nn.Identity()
        self.act = nn.LeakyReLU(0.2)

    def forward(self, i, d):
        i = F.interpolate(i, scale_factor=2, mode="nearest")
        d = F.interpolate(d, scale_factor=2, mode="nearest")
        logits = self.ppm(i)
        seg = seg_embedding(logits, self.seg_mode)
        ri, rd = self.spade0(i, d, seg)
        ri, rd = self.conv0(self.act(ri)), self.conv0(self.act(rd))
        ri, rd = self.spade1(ri, rd, seg)
        ri, rd = self.conv1(self.act(ri)), self.conv1(self.act(rd))
        return self.skip(i) + ri, self.skip(d) + rd, logits


class PlainUpBlock(nn.Module):
    """Transposed-conv up block used when semantic conditioning is disabled."""

    def __init__(self, in_ch, out_ch, kernel_size=4):
        super().__init__()
        pad = (kernel_size - 1) // 2
        self.conv = nn.ConvTranspose2d(in_ch, out_ch, kernel_size, 2, pad, output_padding=kernel_size % 2)
        self.norm = nn.InstanceNorm2d(out_ch)
        self.act = nn.ReLU()

    def forward(self, i, d):
        return self.act(self.norm(self.conv(i))), self.act(self.norm(self.conv(d))), None
