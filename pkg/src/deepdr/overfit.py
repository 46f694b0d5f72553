"""Desk-scale overfit experiment: train the toy model on a handful of synthetic sequences."""
from __future__ import annotations

import argparse
import hashlib
import json
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .evaluation import mae, psnr, rmse_depth, warp_error
from .generator import ModelConfig
from .synth.render import random_scene, render_sequence
from .training import SequenceTensors, Trainer, TrainConfig, run_sequence, train


def make_sequences(n=10, frames=5, size=64, num_classes=8, seed=0):
    return [render_sequence(random_scene(np.random.default_rng(seed + k), frames, size, num_classes,
                                         seed=seed + k)) for k in range(n)]


@torch.no_grad()
def evaluate_sequences(gen, seqs):
    """Hole-region metrics, baselines, warp error and per-scale segmentation accuracy."""
    gen.eval()
    rows = {k: [] for k in ("hole_l1", "hole_psnr", "copy_psnr", "hole_rmse", "meanfill_rmse")}
    warp, seg_hits, seg_total = [], None, 0
    for s in seqs:
        st = s if isinstance(s, SequenceTensors) else SequenceTensors(s)
        outs = run_sequence(gen, st)
        for t, o in enumerate(outs):
            I, D, m = st.image[t:t + 1], st.depth[t:t + 1], st.mask[t:t + 1]
            rows["hole_l1"].append(mae(I, o.image, m, "hole"))
            rows["hole_psnr"].append(psnr(I, o.image, m, "hole"))
            rows["copy_psnr"].append(psnr(I, I * (1 - m), m, "hole"))
            rows["hole_rmse"].append(rmse_depth(D, o.depth, st.depth_scale, m, "hole"))
            known = (1 - st.mask).bool()
            fill = st.depth[known].mean()
            rows["meanfill_rmse"].append(rmse_depth(D, torch.full_like(D, float(fill)), st.depth_scale, m, "hole"))
            if o.seg_logits:
                accs = []
                for logits in o.seg_logits:
                    up = F.interpolate(logits, size=I.shape[-2:], mode="bilinear", align_corners=False)
                    accs.append(float((up.argmax(1) == st.seg[t:t + 1]).float().sum()))
                seg_hits = accs if seg_hits is None else [a + b for a, b in zip(seg_hits, accs)]
                seg_total += st.seg[t].numel()
        if st.T >= 2:
            flows = [None] + [f[None] for f in st.flow_fwd[1:]]
            occls = [None] + [o[None] for o in st.occl_fwd[1:]]
            warp.append(warp_error([o.image for o in outs], flows, occls))
    res = {k: float(np.mean(v)) for k, v in rows.items()}
    res["warp_error"] = float(np.mean(warp)) if warp else float("nan")
    res["seg_acc"] = [h / seg_total for h in seg_hits] if seg_hits else []
    gen.train()
    return res


def run_overfit(model_cfg: ModelConfig, train_cfg: TrainConfig, seqs, iters, baseline_at=100,
                log_path=None, progress_every=0):
    trainer = Trainer(model_cfg, train_cfg, seqs)
    history = {}

    def cb(tr, rep):
        if tr.iteration == baseline_at:
            history["baseline"] = evaluate_sequences(tr.gen, trainer.seqs)
        if progress_every and tr.iteration % progress_every == 0:
            print(json.dumps({"iter": tr.iteration, **{k: round(rep[k], 4) for k in ("rec_I", "total_G", "st")}}),
                  flush=True)

    t0 = time.time()
    train(trainer, iters, log_path, callback=cb)
    final = evaluate_sequences(trainer.gen, trainer.seqs)
    return {"baseline": history.get("baseline"), "final": final, "iters": iters,
            "seconds": time.time() - t0, "model_config": model_cfg.to_dict()}


def overfit_configs(iters=5000, seed=0):
    model = ModelConfig.toy()
    train_cfg = TrainConfig(total_iters=iters, batch_size=1, clip_len=5, seed=seed, disc_width_div=4)
    return model, train_cfg


# modules whose behaviour feeds the experiment; cli and plotting do not
_FINGERPRINT_SKIP = {"cli.py", "plotting.py", "__init__.py"}


def fingerprint(iters, sequences):
    """Hash of the experiment settings and the library sources that produce its numbers."""
    h = hashlib.sha256(json.dumps([iters, sequences]).encode())
    root = Path(__file__).parent
    for p in sorted(root.rglob("*.py")):
        if p.name not in _FINGERPRINT_SKIP:
            h.update(p.relative_to(root).as_posix().encode())
            h.update(p.read_bytes())
    return h.hexdigest()[:16]


def main(argv=None):
    ap = argparse.ArgumentParser(description="toy overfit run: full model and no-temporal ablation")
    ap.add_argument("--iters", type=int, default=5000)
    ap.add_argument("--sequences", type=int, default=10)
    ap.add_argument("--out", default="overfit_results.json")
    ap.add_argument("--variants", default="full,no_temporal")
    ap.add_argument("--progress", type=int, default=250)
    args = ap.parse_args(argv)
    model, tcfg = overfit_configs(args.iters)
    out = Path(args.out)
    variants = args.variants.split(",")
    fp = fingerprint(args.iters, args.sequences)
    results = json.loads(out.read_text()) if out.exists() else {}
    if results.get("fingerprint") != fp:
        results = {"fingerprint": fp}
    seqs = None
    for v in variants:
        if v in results:
            continue
        if seqs is None:
            seqs = make_sequences(args.sequences)
        mcfg = model if v == "full" else replace(model, temporal_enabled=False)
        results[v] = run_overfit(mcfg, tcfg, seqs, args.iters, progress_every=args.progress,
                                 log_path=out.with_name(f"{out.stem}_{v}.csv"))
        out.write_text(json.dumps(results, indent=2))
    return results


if __name__ == "__main__":
    main()
