"""Recurrent adversarial training with truncated backpropagation through time."""
from __future__ import annotations

import csv
import io
import json
import math
import time
import zipfile
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch

from .core_types import LossWeights
from .discriminators import make_discriminators
from .generator import CHECKPOINT_FORMAT, Generator, GeneratorState, ModelConfig
from .losses import (FeatureExtractor, combine, depth_gradient, hinge_d, hinge_g, perceptual,
                     rec_l1, seg_loss, style)
from .temporal import temporal_losses, to_flow_tensor


class NumericError(RuntimeError):
    pass


class CheckpointError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    total_iters: int = 20000
    batch_size: int = 4
    clip_len: int = 5
    lr: float = 2e-4
    lr_after_drop: float = 2e-5
    drop_fraction: float = 0.5
    betas: tuple = (0.0, 0.9)
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    disc_width_div: int = 4
    coarse_weight: float = 1.0
    hole_only: bool = False
    adv_on_composite: bool = False
    depth_temporal: bool = False
    log_every: int = 1
    ckpt_every: int = 0

    def __post_init__(self):
        if not 0 < self.drop_fraction < 1:
            raise ValueError("drop_fraction must lie in (0, 1)")
        if self.clip_len < 1:
            raise ValueError("clip_len must be >= 1")
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        self.betas = tuple(self.betas)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


def lr_schedule(it, cfg: TrainConfig):
    """Constant rate, dropped once at ``drop_fraction * total_iters`` (right-closed)."""
    return cfg.lr if it < cfg.drop_fraction * cfg.total_iters else cfg.lr_after_drop


# --- data ---------------------------------------------------------------------

class SequenceTensors:
    """Torch views of one :class:`SequenceSample`, channels first."""

    def __init__(self, s):
        self.T = s.num_frames
        self.image = torch.from_numpy(np.asarray(s.color, np.float32)).permute(0, 3, 1, 2).contiguous()
        self.depth = torch.from_numpy(np.asarray(s.depth, np.float32))[:, None]
        self.seg = torch.from_numpy(np.asarray(s.seg, np.int64))
        self.mask = torch.from_numpy(np.asarray(s.mask, np.float32))[:, None]
        self.depth_scale = s.depth_scale

        def flows(lst):
            return [None if f is None else to_flow_tensor(f)[0] for f in lst] if lst else [None] * self.T

        def occls(lst):
            return [None if o is None else torch.as_tensor(np.asarray(o), dtype=torch.float32)[None]
                    for o in lst] if lst else [None] * self.T

        self.flow_fwd, self.occl_fwd = flows(s.flow_fwd), occls(s.occl_fwd)
        self.flow_first, self.occl_first = flows(s.flow_to_first), occls(s.occl_to_first)


@dataclass
class Clip:
    image: torch.Tensor  # N x T x 3 x H x W
    depth: torch.Tensor
    seg: torch.Tensor
    mask: torch.Tensor
    flow_fwd: list
    occl_fwd: list
    flow_first: list
    occl_first: list
    reset: list  # per slot: clip starts a new sequence
    slots: list  # per slot (sequence index, start frame)


class ClipSampler:
    """Each batch slot walks through one sequence clip by clip.

    When a slot's sequence is exhausted it draws a new one and is flagged
    for a state reset.
    """

    def __init__(self, seqs, batch_size, clip_len, seed=0):
        self.seqs = seqs
        self.batch_size = batch_size
        self.clip_len = min(clip_len, min(s.T for s in seqs))
        self.rng = np.random.default_rng(seed)
        self.slots = [None] * batch_size

    def state_dict(self):
        return {"rng": self.rng.bit_generator.state, "slots": list(self.slots)}

    def load_state_dict(self, d):
        self.rng.bit_generator.state = d["rng"]
        self.slots = [None if s is None else tuple(s) for s in d["slots"]]

    def next(self) -> Clip:
        L = self.clip_len
        reset, picks = [], []
        for b in range(self.batch_size):
            cur = self.slots[b]
            if cur is not None and cur[1] + 2 * L <= self.seqs[cur[0]].T:
                nxt, r = (cur[0], cur[1] + L), False
            else:
                nxt, r = (int(self.rng.integers(len(self.seqs))), 0), True
            self.slots[b] = nxt
            reset.append(r)
            picks.append(nxt)
        return self._gather(picks, reset)

    def _gather(self, picks, reset):
        L = self.clip_len
        get = lambda attr: torch.stack([getattr(self.seqs[i], attr)[s:s + L] for i, s in picks])
        flow_fwd, occl_fwd, flow_first, occl_first = [None], [None], [None], [None]
        for t in range(1, L):
            flow_fwd.append(torch.stack([self.seqs[i].flow_fwd[s + t] for i, s in picks])
                            if all(self.seqs[i].flow_fwd[s + t] is not None for i, s in picks) else None)
            occl_fwd.append(torch.stack([self.seqs[i].occl_fwd[s + t] for i, s in picks])
                            if flow_fwd[-1] is not None else None)
            # long-term pairs exist only where the clip starts the sequence
            ok = all(s == 0 and self.seqs[i].flow_first[t] is not None for i, s in picks)
            flow_first.append(torch.stack([self.seqs[i].flow_first[t] for i, s in picks]) if ok else None)
            occl_first.append(torch.stack([self.seqs[i].occl_first[t] for i, s in picks]) if ok else None)
        return Clip(get("image"), get("depth"), get("seg"), get("mask"),
                    flow_fwd, occl_fwd, flow_first, occl_first, reset, picks)


# --- trainer --------------------------------------------------------------------

def _reset_slots(state: Optional[GeneratorState], reset, I_m, D_m):
    """Clear carried state for slots that start a new sequence."""
    if state is None or all(reset):
        return None
    keep = torch.tensor([not r for r in reset], dtype=torch.bool).view(-1, 1, 1, 1)
    lstm = None if state.lstm is None else tuple(torch.where(keep, s, torch.zeros_like(s)) for s in state.lstm)
    pin = (torch.where(keep, state.prev_inputs[0], I_m), torch.where(keep, state.prev_inputs[1], D_m))
    pout = (torch.where(keep, state.prev_outputs[0], I_m), torch.where(keep, state.prev_outputs[1], D_m))
    return GeneratorState(lstm, pin, pout)


class Trainer:
    def __init__(self, model_cfg: ModelConfig, cfg: TrainConfig, seqs, fx: Optional[FeatureExtractor] = None):
        self.model_cfg, self.cfg = model_cfg, cfg
        torch.manual_seed(cfg.seed)
        self.gen = Generator(model_cfg)
        self.d_img, self.d_dep = make_discriminators(cfg.disc_width_div)
        self.fx = fx or FeatureExtractor()
        self.opt_g = torch.optim.Adam(self.gen.parameters(), lr=cfg.lr, betas=cfg.betas)
        self.opt_di = torch.optim.Adam(self.d_img.parameters(), lr=cfg.lr, betas=cfg.betas)
        self.opt_dd = torch.optim.Adam(self.d_dep.parameters(), lr=cfg.lr, betas=cfg.betas)
        self.seqs = [s if isinstance(s, SequenceTensors) else SequenceTensors(s) for s in seqs]
        self.sampler = ClipSampler(self.seqs, cfg.batch_size, cfg.clip_len, cfg.seed)
        self.state: Optional[GeneratorState] = None
        self.iteration = 0
        self.state_hook: Optional[Callable] = None  # called with (state entering clip, reset flags)

    # one clip forward pass
    def unroll(self, clip: Clip):
        N, L = clip.image.shape[:2]
        state = _reset_slots(self.state, clip.reset, clip.image[:, 0] * (1 - clip.mask[:, 0]),
                             clip.depth[:, 0] * (1 - clip.mask[:, 0]))
        if self.state_hook is not None:
            self.state_hook(state, clip.reset)
        outs = []
        for t in range(L):
            m = clip.mask[:, t]
            I_m, D_m = clip.image[:, t] * (1 - m), clip.depth[:, t] * (1 - m)
            out, state = self.gen(I_m, D_m, m, state, composite=True, image=clip.image[:, t], depth=clip.depth[:, t])
            outs.append(out)
        return outs, state

    def _fake(self, out, which):
        if self.cfg.adv_on_composite:
            return out.composited_image if which == "image" else out.composited_depth
        return out.image if which == "image" else out.depth

    def train_step(self, clip: Optional[Clip] = None) -> dict:
        cfg, w = self.cfg, self.cfg.weights
        lr = lr_schedule(self.iteration, cfg)
        for opt in (self.opt_g, self.opt_di, self.opt_dd):
            for g in opt.param_groups:
                g["lr"] = lr
        clip = clip or self.sampler.next()
        L = clip.image.shape[1]
        outs, new_state = self.unroll(clip)

        # discriminator step on detached fakes
        for d in (self.d_img, self.d_dep):
            d.requires_grad_(True)
        self.opt_di.zero_grad(set_to_none=True)
        self.opt_dd.zero_grad(set_to_none=True)
        real_i = clip.image.flatten(0, 1)
        real_d = clip.depth.flatten(0, 1)
        fake_i = torch.stack([self._fake(o, "image") for o in outs], 1).flatten(0, 1).detach()
        fake_d = torch.stack([self._fake(o, "depth") for o in outs], 1).flatten(0, 1).detach()
        loss_di = hinge_d(self.d_img(real_i), self.d_img(fake_i))
        loss_dd = hinge_d(self.d_dep(real_d), self.d_dep(fake_d))
        (loss_di + loss_dd).backward()
        self.opt_di.step()
        self.opt_dd.step()

        # generator step; discriminators frozen
        for d in (self.d_img, self.d_dep):
            d.requires_grad_(False)
        self.opt_g.zero_grad(set_to_none=True)
        parts = {k: 0.0 for k in ("rec_I", "per", "sty", "adv_I", "rec_D", "grad", "adv_D", "seg", "rec_coarse")}
        for t, o in enumerate(outs):
            I, D, S, m = clip.image[:, t], clip.depth[:, t], clip.seg[:, t], clip.mask[:, t]
            hm = m if cfg.hole_only else None
            parts["rec_I"] = parts["rec_I"] + rec_l1(I, o.image, hm)
            parts["per"] = parts["per"] + perceptual(I, o.image, self.fx)
            parts["sty"] = parts["sty"] + style(I, o.image, self.fx)
            parts["adv_I"] = parts["adv_I"] + hinge_g(self.d_img(self._fake(o, "image")))
            parts["rec_D"] = parts["rec_D"] + rec_l1(D, o.depth, hm)
            parts["grad"] = parts["grad"] + depth_gradient(D, o.depth)
            parts["adv_D"] = parts["adv_D"] + hinge_g(self.d_dep(self._fake(o, "depth")))
            if self.model_cfg.rgbd_spade_enabled:
                parts["seg"] = parts["seg"] + seg_loss(o.seg_logits, S)
            parts["rec_coarse"] = parts["rec_coarse"] + rec_l1(I, o.coarse_image, hm) + rec_l1(D, o.coarse_depth, hm)
        temporal = self.model_cfg.temporal_enabled
        if temporal and L >= 2:
            st, lt = self._temporal([o.image for o in outs], clip)
            if cfg.depth_temporal:
                st_d, lt_d = self._temporal([o.depth for o in outs], clip)
                st, lt = st + st_d, lt + lt_d
            parts["st"], parts["lt"] = st, lt
        else:
            parts["st"], parts["lt"] = 0.0, 0.0
        report = combine(parts, w, temporal_enabled=temporal, seg_enabled=self.model_cfg.rgbd_spade_enabled)
        total = report["total_G"] + cfg.coarse_weight * w.rec * parts["rec_coarse"]
        report["rec_coarse"] = parts["rec_coarse"]
        report["total_G"] = total
        report["total_D_I"], report["total_D_D"] = loss_di, loss_dd

        scalars = {k: float(v.detach()) if torch.is_tensor(v) else float(v) for k, v in report.items()}
        if not all(math.isfinite(v) for v in scalars.values()):
            raise NumericError(f"non-finite loss at iteration {self.iteration}: {json.dumps(scalars)}")
        total.backward()
        self.opt_g.step()

        self.state = new_state.detach()
        self.iteration += 1
        scalars["lr"] = lr
        return scalars

    def _temporal(self, frames, clip):
        lt_ok = all(clip.flow_first[t] is not None for t in range(2, len(frames)))
        return temporal_losses(frames, clip.flow_fwd, clip.occl_fwd, clip.flow_first, clip.occl_first,
                               long_term=lt_ok)

    # --- checkpointing ----------------------------------------------------

    def save(self, path):
        sections = {
            "generator": self.gen.state_dict(),
            "disc_image": self.d_img.state_dict(),
            "disc_depth": self.d_dep.state_dict(),
            "optimizers": {"g": self.opt_g.state_dict(), "di": self.opt_di.state_dict(),
                           "dd": self.opt_dd.state_dict()},
            "rng": {"torch": torch.get_rng_state(), "sampler": self.sampler.state_dict()},
            "carry": {"state": None if self.state is None else asdict_state(self.state)},
        }
        meta = {"format": CHECKPOINT_FORMAT, "iteration": self.iteration,
                "model_config": self.model_cfg.to_dict(), "train_config": self.cfg.to_dict()}
        save_archive(path, meta, sections)

    def resume(self, path):
        meta, load = open_archive(path)
        if ModelConfig.from_dict(meta["model_config"]) != self.model_cfg:
            raise CheckpointError(f"checkpoint model config {meta['model_config']} does not match "
                                  f"{self.model_cfg.to_dict()}")
        self.gen.load_state_dict(load("generator"))
        self.d_img.load_state_dict(load("disc_image"))
        self.d_dep.load_state_dict(load("disc_depth"))
        opts = load("optimizers")
        self.opt_g.load_state_dict(opts["g"])
        self.opt_di.load_state_dict(opts["di"])
        self.opt_dd.load_state_dict(opts["dd"])
        rng = load("rng")
        torch.set_rng_state(rng["torch"])
        self.sampler.load_state_dict(rng["sampler"])
        carry = load("carry")["state"]
        self.state = None if carry is None else state_from_dict(carry)
        self.iteration = meta["iteration"]


def asdict_state(s: GeneratorState):
    return {"lstm": s.lstm, "prev_inputs": s.prev_inputs, "prev_outputs": s.prev_outputs}


def state_from_dict(d):
    return GeneratorState(d["lstm"], tuple(d["prev_inputs"]), tuple(d["prev_outputs"]))


# --- archive format ------------------------------------------------------------

def save_archive(path, meta, sections):
    """Zip archive: ``meta.json`` plus one torch-serialized entry per section."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with zipfile.ZipFile(tmp, "w") as zf:
        zf.writestr("meta.json", json.dumps(meta, sort_keys=True))
        for name, obj in sections.items():
            buf = io.BytesIO()
            torch.save(obj, buf)
            zf.writestr(f"{name}.pt", buf.getvalue())
    tmp.replace(path)


def open_archive(path):
    """Returns ``(meta, load)`` where ``load(section)`` deserializes one section."""
    try:
        zf = zipfile.ZipFile(path)
    except (zipfile.BadZipFile, OSError) as e:
        raise CheckpointError(f"{path}: not a readable checkpoint archive (section: archive): {e}") from e
    try:
        meta = json.loads(zf.read("meta.json"))
    except Exception as e:
        raise CheckpointError(f"{path}: corrupt section 'meta': {e}") from e
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: checkpoint format {meta.get('format')!r} is not supported "
                              f"(expected {CHECKPOINT_FORMAT!r})")

    def load(section):
        try:
            return torch.load(io.BytesIO(zf.read(f"{section}.pt")), weights_only=False)
        except Exception as e:
            raise CheckpointError(f"{path}: corrupt section {section!r}: {e}") from e

    return meta, load


def load_generator(path) -> Generator:
    meta, load = open_archive(path)
    gen = Generator(ModelConfig.from_dict(meta["model_config"]))
    gen.load_state_dict(load("generator"))
    return gen.eval()


# --- loop -------------------------------------------------------------------------

LOG_COLUMNS = ("iter", "rec_I", "per", "sty", "adv_I", "rec_D", "grad", "adv_D", "seg", "st", "lt",
               "rec_coarse", "total_G", "total_D_I", "total_D_D", "lr", "wall_clock")


def train(trainer: Trainer, iters, log_path=None, ckpt_path=None, callback=None):
    """Run ``iters`` steps, appending one CSV row per logged step."""
    cfg = trainer.cfg
    fh = writer = None
    if log_path is not None:
        log_path = Path(log_path)
        new = not log_path.exists()
        fh = open(log_path, "a", newline="")
        writer = csv.DictWriter(fh, LOG_COLUMNS, extrasaction="ignore")
        if new:
            writer.writeheader()
    t0 = time.time()
    reports = []
    try:
        for _ in range(iters):
            it = trainer.iteration
            rep = trainer.train_step()
            rep["iter"] = it
            rep["wall_clock"] = time.time() - t0
            reports.append(rep)
            if writer and cfg.log_every and it % cfg.log_every == 0:
                writer.writerow(rep)
            if ckpt_path and cfg.ckpt_every and trainer.iteration % cfg.ckpt_every == 0:
                trainer.save(ckpt_path)
            if callback:
                callback(trainer, rep)
    finally:
        if fh:
            fh.close()
    if ckpt_path:
        trainer.save(ckpt_path)
    return reports


@torch.no_grad()
def run_sequence(gen: Generator, seq: SequenceTensors):
    """Inpaint a whole sequence frame by frame, carrying the recurrent state."""
    state, outs = None, []
    for t in range(seq.T):
        m = seq.mask[t:t + 1]
        I, D = seq.image[t:t + 1], seq.depth[t:t + 1]
        out, state = gen(I * (1 - m), D * (1 - m), m, state, composite=True, image=I, depth=D)
        outs.append(out)
    return outs
