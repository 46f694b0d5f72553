"""The full RGB-D inpainting generator and its recurrent state."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import torch
import torch.nn as nn

from .core_types import check_size
from .nn_blocks import (ConvLSTMCell, DilatedBlock, GatedConv2d, PlainUpBlock, UpBlock)


@dataclass
class ModelConfig:
    size: int = 256
    levels: int = 3
    width: int = 64  # refinement base width; bottleneck has width * 2**levels channels
    coarse_width: int = 24
    spade_hidden: int = 64
    num_classes: int = 40
    act: str = "relu"
    seg_mode: str = "softmax"
    temporal_enabled: bool = True
    rgbd_spade_enabled: bool = True
    separate_encoders: bool = True
    plain_up_kernel: int = 3

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        check_size(self.size, max(self.levels, 2))
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")

    @classmethod
    def full_scale(cls, **kw) -> "ModelConfig":
        return cls(**kw)

    @classmethod
    def toy(cls, **kw) -> "ModelConfig":
        """64x64 input, every channel width divided by four."""
        base = dict(size=64, width=16, coarse_width=6, spade_hidden=16, num_classes=8)
        base.update(kw)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class GeneratorState:
    lstm: Optional[tuple]
    prev_inputs: tuple  # (I_m, D_m) of the previous step
    prev_outputs: tuple  # (I_o, D_o) of the previous step

    def detach(self) -> "GeneratorState":
        det = lambda t: None if t is None else tuple(x.detach() for x in t)
        return GeneratorState(det(self.lstm), det(self.prev_inputs), det(self.prev_outputs))


@dataclass
class GeneratorOutput:
    image: torch.Tensor
    depth: torch.Tensor
    coarse_image: torch.Tensor
    coarse_depth: torch.Tensor
    seg_logits: list = field(default_factory=list)
    composited_image: Optional[torch.Tensor] = None
    composited_depth: Optional[torch.Tensor] = None


def clamp01(x):
    """Hard clamp to [0, 1]; gradient passes inside the interval, zero outside."""
    return torch.clamp(x, 0.0, 1.0)


def compose_coarse(inp, coarse, mask):
    return mask * coarse + (1 - mask) * inp


class CoarseNet(nn.Module):
    """Gated coarse inpainting network with two internal 2x downsamplings."""

    def __init__(self, in_ch, out_ch, w=24, act="relu"):
        super().__init__()
        g = lambda i, o, k=3, s=1, d=1: GatedConv2d(i, o, k, s, d, act)
        self.in_ch = in_ch
        self.body = nn.Sequential(
            g(in_ch, w, 5), g(w, 2 * w, 3, 2), g(2 * w, 2 * w), g(2 * w, 4 * w, 3, 2), g(4 * w, 4 * w),
            g(4 * w, 4 * w, d=2), g(4 * w, 4 * w, d=4), g(4 * w, 4 * w, d=8), g(4 * w, 4 * w, d=16),
            g(4 * w, 4 * w), g(4 * w, 4 * w),
            nn.Upsample(scale_factor=2, mode="nearest"), g(4 * w, 2 * w), g(2 * w, 2 * w),
            nn.Upsample(scale_factor=2, mode="nearest"), g(2 * w, w), g(w, w // 2),
        )
        self.out = nn.Conv2d(w // 2, out_ch, 3, padding=1)

    def forward(self, x):
        if x.shape[-1] % 4 or x.shape[-2] % 4:
            raise ValueError("coarse network needs spatial size divisible by 4")
        return self.out(self.body(x))


class FineEncoder(nn.Sequential):
    def __init__(self, in_ch, w=64, levels=3, act="relu"):
        layers = [GatedConv2d(in_ch, w, 5, act=act)]
        c = w
        for l in range(levels):
            lw = w * 2 ** l
            layers += [GatedConv2d(c, lw, 3, 2, act=act), GatedConv2d(lw, 2 * lw, act=act)]
            c = 2 * lw
        super().__init__(*layers)
        self.in_ch, self.out_ch = in_ch, c

    def forward(self, x):
        if x.shape[1] != self.in_ch:
            raise ValueError(f"encoder expects {self.in_ch} channels, got {x.shape[1]}")
        return super().forward(x)


class Bottleneck(nn.Module):
    def __init__(self, in_ch, ch, temporal=True, act="relu"):
        super().__init__()
        self.fuse = GatedConv2d(in_ch, ch, act=act)
        self.dilated = DilatedBlock(ch, act)
        self.post = nn.Sequential(GatedConv2d(ch, ch, act=act), GatedConv2d(ch, ch, act=act))
        self.temporal = temporal
        self.lstm = ConvLSTMCell(ch, ch) if temporal else GatedConv2d(ch, ch, act=act)

    def forward(self, x, state=None):
        x = self.post(self.dilated(self.fuse(x)))
        if self.temporal:
            return self.lstm(x, state)
        return self.lstm(x), None


class Decoder(nn.Module):
    def __init__(self, cfg: ModelConfig, in_ch):
        super().__init__()
        chans = [in_ch] + [cfg.width * 2 ** (cfg.levels - l) for l in range(1, cfg.levels + 1)]
        if cfg.rgbd_spade_enabled:
            self.blocks = nn.ModuleList(
                UpBlock(chans[l], chans[l + 1], cfg.num_classes, cfg.spade_hidden, cfg.seg_mode)
                for l in range(cfg.levels))
        else:
            self.blocks = nn.ModuleList(
                PlainUpBlock(chans[l], chans[l + 1], cfg.plain_up_kernel) for l in range(cfg.levels))
        last, head = chans[-1], max(chans[-1] // 2, 1)
        self.image_head = nn.Sequential(nn.Conv2d(last, head, 3, padding=1), nn.ReLU(), nn.Conv2d(head, 3, 3, padding=1))
        self.depth_head = nn.Sequential(nn.Conv2d(last, head, 3, padding=1), nn.ReLU(), nn.Conv2d(head, 1, 3, padding=1))

    def forward(self, fused):
        i = d = fused
        segs = []
        for blk in self.blocks:
            i, d, logits = blk(i, d)
            if logits is not None:
                segs.append(logits)
        return torch.tanh(self.image_head(i)), clamp01(self.depth_head(d)), segs


class Generator(nn.Module):
    """Coarse nets, dual fine encoders, fused recurrent bottleneck, structure-aware decoder."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        a = cfg.act
        self.coarse_image = CoarseNet(4, 3, cfg.coarse_width, a)
        self.coarse_depth = CoarseNet(2, 1, cfg.coarse_width, a)
        # composed(3) + prev input(3) + prev output(3) + mask(1); depth mirrors with 1-channel maps
        img_in, dep_in = 10, 4
        if cfg.separate_encoders:
            self.enc_image = FineEncoder(img_in, cfg.width, cfg.levels, a)
            self.enc_depth = FineEncoder(dep_in, cfg.width, cfg.levels, a)
            enc_out = 2 * self.enc_image.out_ch
        else:
            self.enc_joint = FineEncoder(img_in + dep_in - 1, cfg.width, cfg.levels, a)
            enc_out = self.enc_joint.out_ch
        ch = cfg.width * 2 ** cfg.levels
        self.bottleneck = Bottleneck(enc_out, ch, cfg.temporal_enabled, a)
        self.decoder = Decoder(cfg, ch)

    def coarse_forward(self, masked_image, masked_depth, mask):
        ci = torch.tanh(self.coarse_image(torch.cat([masked_image, mask], 1)))
        cd = clamp01(self.coarse_depth(torch.cat([masked_depth, mask], 1)))
        return ci, cd

    def fine_encode(self, img_in, dep_in):
        if self.cfg.separate_encoders:
            return torch.cat([self.enc_image(img_in), self.enc_depth(dep_in)], 1)
        # one mask channel suffices for the joint stream
        return self.enc_joint(torch.cat([img_in, dep_in[:, :-1]], 1))

    def check_state(self, state: GeneratorState, image):
        n, _, h, w = image.shape
        pi, pd = state.prev_inputs
        if pi.shape != image.shape or pd.shape != (n, 1, h, w):
            raise ValueError("generator state does not match the input frame shape")
        if state.lstm is not None:
            ch = self.cfg.width * 2 ** self.cfg.levels
            s = 2 ** self.cfg.levels
            if state.lstm[0].shape != (n, ch, h // s, w // s):
                raise ValueError(f"ConvLSTM state {tuple(state.lstm[0].shape)} incompatible with config")

    def forward(self, masked_image, masked_depth, mask, state: Optional[GeneratorState] = None,
                composite=True, image=None, depth=None):
        """One time step. Inputs must already be hole-zeroed.

        ``image``/``depth`` (unmasked frames) are only used for compositing
        known pixels back into the result; the masked inputs are used when
        they are not given.
        """
        cfg = self.cfg
        if state is not None:
            self.check_state(state, masked_image)
        if state is None or not cfg.temporal_enabled:
            prev_in = (masked_image, masked_depth)
            prev_out = (masked_image, masked_depth)
            lstm_state = None
        else:
            prev_in, prev_out, lstm_state = state.prev_inputs, state.prev_outputs, state.lstm

        ci, cd = self.coarse_forward(masked_image, masked_depth, mask)
        comp_i = compose_coarse(masked_image, ci, mask)
        comp_d = compose_coarse(masked_depth, cd, mask)
        feat = self.fine_encode(torch.cat([comp_i, prev_in[0], prev_out[0], mask], 1),
                                torch.cat([comp_d, prev_in[1], prev_out[1], mask], 1))
        fused, lstm_state = self.bottleneck(feat, lstm_state)
        img, dep, segs = self.decoder(fused)

        out = GeneratorOutput(img, dep, ci, cd, segs)
        if composite:
            ref_i = masked_image if image is None else image
            ref_d = masked_depth if depth is None else depth
            out.composited_image = compose_coarse(ref_i, img, mask)
            out.composited_depth = compose_coarse(ref_d, dep, mask)
        new_state = GeneratorState(lstm_state, (masked_image, masked_depth), (img, dep))
        return out, new_state

    def param_breakdown(self) -> dict:
        groups = {"coarse": 0, "encoder": 0, "bottleneck": 0, "decoder": 0}
        for name, p in self.named_parameters():
            top = name.split(".")[0]
            if top.startswith("coarse"):
                groups["coarse"] += p.numel()
            elif top.startswith("enc"):
                groups["encoder"] += p.numel()
            else:
                groups[top] += p.numel()
        return groups


def generator_step(gen: Generator, I_m, D_m, mask, state=None, composite=True, image=None, depth=None):
    return gen(I_m, D_m, mask, state, composite, image, depth)


# --- efficiency accounting -------------------------------------------------

def _conv_mads(mod, inp, out):
    if isinstance(mod, nn.ConvTranspose2d):
        x = inp[0]
        per_in = mod.out_channels // mod.groups * mod.kernel_size[0] * mod.kernel_size[1]
        return x[0].numel() * per_in
    per_out = mod.in_channels // mod.groups * mod.kernel_size[0] * mod.kernel_size[1]
    return out[0].numel() * per_out


def count_mads_module(model: nn.Module, *inputs) -> int:
    """Multiply-adds of conv/linear layers for one sample, by shape propagation.

    ``inputs`` are normally meta tensors so nothing is actually computed.
    """
    total = [0]

    def hook(mod, inp, out):
        if isinstance(mod, (nn.Conv2d, nn.ConvTranspose2d)):
            total[0] += _conv_mads(mod, inp, out)
        elif isinstance(mod, nn.Linear):
            total[0] += out[0].numel() * mod.in_features

    handles = [m.register_forward_hook(hook) for m in model.modules()
               if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear))]
    try:
        with torch.no_grad():
            model(*inputs)
    finally:
        for h in handles:
            h.remove()
    return total[0]


def _meta_generator(cfg: ModelConfig) -> Generator:
    with torch.device("meta"):
        return Generator(cfg)


def count_params(cfg: ModelConfig, breakdown=False):
    gen = _meta_generator(cfg)
    if breakdown:
        return gen.param_breakdown()
    return sum(p.numel() for p in gen.parameters())


def count_mads(cfg: ModelConfig, size: Optional[int] = None) -> int:
    size = size or cfg.size
    gen = _meta_generator(cfg)
    x = lambda c: torch.empty(1, c, size, size, device="meta")
    return count_mads_module(gen, x(3), x(1), x(1), None, False)


def layer_schedule_params(schedule) -> int:
    """Closed-form parameter count of a list of ``(k, c_in, c_out)`` conv layers."""
    return sum(k * k * ci * co + co for k, ci, co in schedule)


def coarse_schedule(in_ch, out_ch, w=24):
    """Conv shapes of :class:`CoarseNet`; gated layers carry 2x filters."""
    g = lambda k, ci, co: (k, ci, 2 * co)
    return [g(5, in_ch, w), g(3, w, 2 * w), g(3, 2 * w, 2 * w), g(3, 2 * w, 4 * w)] + \
        [g(3, 4 * w, 4 * w)] * 7 + \
        [g(3, 4 * w, 2 * w), g(3, 2 * w, 2 * w), g(3, 2 * w, w), g(3, w, w // 2), (3, w // 2, out_ch)]


# --- checkpoint archive ------------------------------------------------------

CHECKPOINT_FORMAT = "deepdr-ckpt/1"


def config_json(cfg: ModelConfig) -> str:
    return json.dumps(cfg.to_dict(), sort_keys=True)
