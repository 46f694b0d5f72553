import torch
import torch.nn as nn
from torch.nn.utils.parametrizations import spectral_norm


class PatchDiscriminator(nn.Module):
    """Spectral-normalized patch critic: six stride-2 5x5 convs then a 1-channel score conv.

    Scores carry no final sigmoid (hinge loss operates on raw values).
    """

    def __init__(self, in_ch, widths=(64, 128, 256, 256, 256, 256)):
        super().__init__()
        self.in_ch = in_ch
        layers, c = [], in_ch
        for w in widths:
            layers += [spectral_norm(nn.Conv2d(c, w, 5, 2, 2)), nn.LeakyReLU(0.2)]
            c = w
        layers.append(spectral_norm(nn.Conv2d(c, 1, 3, 1, 1)))
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        if x.shape[1] != self.in_ch:
            raise ValueError(f"discriminator expects {self.in_ch} channels, got {x.shape[1]}")
        return self.net(x)

    def sn_convs(self):
        return [m for m in self.net if isinstance(m, nn.Conv2d)]


def make_discriminators(width_div=1):
    widths = tuple(max(w // width_div, 1) for w in (64, 128, 256, 256, 256, 256))
    return PatchDiscriminator(3, widths), PatchDiscriminator(1, widths)


def disc_forward(discs, x, which):
    d_img, d_dep = discs
    if which == "image":
        return d_img(x)
    if which == "depth":
        return d_dep(x)
    raise ValueError(f"unknown discriminator {which!r}")


def sigma_estimate(conv):
    """Current power-iteration estimate of the raw weight's largest singular value."""
    p = conv.parametrizations.weight[0]
    w = conv.parametrizations.weight.original.flatten(1)
    return torch.dot(p._u, torch.mv(w, p._v)).item()
