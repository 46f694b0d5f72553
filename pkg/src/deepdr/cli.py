"""Command line entry points.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import shutil
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from .core_types import denormalize_rgb
from .evaluation import csv_psnr, mae, psnr, rmse_depth, warp_error
from .generator import ModelConfig, count_mads, count_params
from .synth.dataset_io import DataFormatError, read_dataset, write_dataset
from .synth.render import random_scene, render_sequence
from .training import (CheckpointError, NumericError, SequenceTensors, Trainer, TrainConfig,
                       load_generator, run_sequence, train)

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4
log = logging.getLogger("deepdr")


class ConfigError(ValueError):
    pass


def _prepare_out(path, force):
    path = Path(path)
    occupied = any(path.iterdir()) if path.is_dir() else path.exists()
    if occupied:
        if not force:
            raise ConfigError(f"{path} already exists; pass --force to overwrite")
        shutil.rmtree(path) if path.is_dir() else path.unlink()
    path.mkdir(parents=True, exist_ok=True)
    return path


def _parse_value(v):
    try:
        return json.loads(v)
    except json.JSONDecodeError:
        return v


def load_experiment(path, overrides=()):
    """Read the single JSON experiment file and apply ``section.key=value`` overrides."""
    try:
        cfg = json.loads(Path(path).read_text())
    except FileNotFoundError as e:
        raise ConfigError(f"config file {path} not found") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON at offset {e.pos}: {e.msg}") from e
    for ov in overrides:
        if "=" not in ov:
            raise ConfigError(f"override {ov!r} must look like section.key=value")
        key, val = ov.split("=", 1)
        node = cfg
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = _parse_value(val)
    try:
        model = ModelConfig.from_dict(cfg.get("model", {}))
        tcfg = TrainConfig.from_dict(cfg.get("train", {}))
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path}: {e}") from e
    return cfg, model, tcfg


def cmd_generate_data(a):
    levels = a.levels
    if a.size <= 0 or a.size % (2 ** levels):
        raise ConfigError(f"--size {a.size} must be a positive multiple of 2^{levels}")
    if a.sequences < 1 or a.frames < 1:
        raise ConfigError("--sequences and --frames must be positive")
    out = _prepare_out(a.out, a.force)
    samples = []
    for k in range(a.sequences):
        rng = np.random.default_rng([a.seed, k])
        spec = random_scene(rng, a.frames, a.size, a.num_classes, seed=a.seed * 100003 + k)
        samples.append(render_sequence(spec, rng, include_shadow=a.shadow_masks, tracked_masks=a.tracked_masks))
    write_dataset(samples, out, a.size)
    print(f"wrote {a.sequences} sequences to {out}")


def cmd_train(a):
    cfg, model, tcfg = load_experiment(a.config, a.set)
    data = a.data or cfg.get("data")
    if not data:
        raise ConfigError("no dataset path in config or --data")
    out = Path(a.out or cfg.get("out", "run"))
    if a.resume is None:
        out = _prepare_out(out, a.force)
    else:
        out.mkdir(parents=True, exist_ok=True)
    man, seqs = read_dataset(data)
    if man.size != model.size or man.num_classes != model.num_classes:
        raise ConfigError(f"dataset (size {man.size}, {man.num_classes} classes) does not match model config "
                          f"(size {model.size}, {model.num_classes} classes)")
    trainer = Trainer(model, tcfg, seqs)
    if a.resume:
        trainer.resume(a.resume)
    iters = a.iters if a.iters is not None else tcfg.total_iters - trainer.iteration
    (out / "experiment.json").write_text(json.dumps(
        {"model": model.to_dict(), "train": tcfg.to_dict(), "data": str(data),
         "feature_extractor": trainer.fx.provenance}, indent=2))
    train(trainer, max(iters, 0), out / "train_log.csv", out / "checkpoint.zip")
    print(f"trained to iteration {trainer.iteration}; checkpoint at {out / 'checkpoint.zip'}")


def _save_rgb(path, img_chw):
    Image.fromarray(denormalize_rgb(img_chw.permute(1, 2, 0).numpy())).save(path)


def _save_depth(path, d):
    Image.fromarray(np.round(65535 * d.clamp(0, 1).numpy()).astype(np.uint16)).save(path)


def cmd_infer(a):
    gen = load_generator(a.ckpt)
    man, seqs = read_dataset(a.input)
    out = _prepare_out(a.out, a.force)
    for name, s in zip(man.sequences, seqs):
        st = SequenceTensors(s)
        outs = run_sequence(gen, st)
        d = out / name
        d.mkdir()
        for t, o in enumerate(outs):
            _save_rgb(d / f"frame_{t:04d}.inpainted.png", o.composited_image[0])
            _save_depth(d / f"frame_{t:04d}.inpainted_depth.png", o.composited_depth[0, 0])
            for l, logits in enumerate(o.seg_logits):
                Image.fromarray(logits[0].argmax(0).numpy().astype(np.uint8)).save(
                    d / f"frame_{t:04d}.seg_l{l + 1}.png")
    print(f"inpainted {len(seqs)} sequences into {out}")


def evaluate_dataset(gen, man, seqs):
    rows = []
    for name, s in zip(man.sequences, seqs):
        st = SequenceTensors(s)
        outs = run_sequence(gen, st)
        r = {"sequence": name, "frames": st.T}
        vals = {k: [] for k in ("hole_psnr", "hole_mae", "hole_rmse_m", "full_psnr", "full_mae", "full_rmse_m")}
        for t, o in enumerate(outs):
            I, D, m = st.image[t:t + 1], st.depth[t:t + 1], st.mask[t:t + 1]
            for region in ("hole", "full"):
                vals[f"{region}_psnr"].append(csv_psnr(psnr(I, o.image, m, region)))
                vals[f"{region}_mae"].append(mae(I, o.image, m, region))
                vals[f"{region}_rmse_m"].append(rmse_depth(D, o.depth, st.depth_scale, m, region))
        r.update({k: float(np.mean(v)) for k, v in vals.items()})
        if st.T >= 2 and st.flow_fwd[1] is not None:
            r["warp_error"] = warp_error([o.image for o in outs], [None] + [f[None] for f in st.flow_fwd[1:]],
                                         [None] + [x[None] for x in st.occl_fwd[1:]])
        else:
            r["warp_error"] = float("nan")
        rows.append((r, st, outs))
    return rows


def cmd_eval(a):
    from .plotting import image_grid

    gen = load_generator(a.ckpt)
    man, seqs = read_dataset(a.data)
    rows = evaluate_dataset(gen, man, seqs)
    report = Path(a.report)
    report.parent.mkdir(parents=True, exist_ok=True)
    table = [r for r, _, _ in rows]
    with open(report, "w", newline="") as f:
        w = csv.DictWriter(f, list(table[0].keys()))
        w.writeheader()
        w.writerows(table)
    keys = [k for k in table[0] if k not in ("sequence", "frames")]
    summary = {k: float(np.nanmean([r[k] for r in table])) for k in keys}
    summary["sequences"] = len(table)
    summary["primary_region"] = "hole"
    report.with_suffix(".json").write_text(json.dumps(summary, indent=2))
    fig_dir = report.parent / f"{report.stem}_figures"
    fig_dir.mkdir(exist_ok=True)
    for r, st, outs in rows[: a.max_figures]:
        t = 0
        m = st.mask[t, 0].numpy()
        grid = [[st.image[t].permute(1, 2, 0).numpy() * (1 - m[..., None]), outs[t].composited_image[0].permute(1, 2, 0).numpy(),
                 st.image[t].permute(1, 2, 0).numpy()],
                [st.depth[t, 0].numpy() * (1 - m), outs[t].composited_depth[0, 0].numpy(), st.depth[t, 0].numpy()]]
        image_grid(grid, fig_dir / f"{r['sequence']}.png", titles=["input", "inpainted", "ground truth"])
    print(json.dumps(summary, indent=2))


def cmd_count_params(a):
    if a.config:
        _, model, _ = load_experiment(a.config, a.set)
    else:
        model = ModelConfig()
    parts = count_params(model, breakdown=True)
    total = sum(parts.values())
    for k, v in parts.items():
        print(f"{k:12s} {v:>12,d}")
    print(f"{'total':12s} {total:>12,d}  ({total / 1e6:.1f} M)")
    print(f"{'MADs':12s} {count_mads(model, a.size or model.size) / 1e9:.1f} G at {a.size or model.size}x{a.size or model.size}")


def cmd_plot(a):
    from .plotting import plot_loss_curves

    out = Path(a.out)
    paths = plot_loss_curves(a.log, out)
    for p in paths:
        print(p)


def build_parser():
    ap = argparse.ArgumentParser(prog="deepdr", description="RGB-D inpainting toolkit")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate-data", help="render synthetic RGB-D sequences")
    g.add_argument("--out", required=True)
    g.add_argument("--sequences", type=int, default=10)
    g.add_argument("--frames", type=int, default=5)
    g.add_argument("--size", type=int, default=64)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--num-classes", type=int, default=8)
    g.add_argument("--levels", type=int, default=3)
    g.add_argument("--shadow-masks", action="store_true")
    g.add_argument("--tracked-masks", action="store_true")
    g.add_argument("--force", action="store_true")
    g.set_defaults(func=cmd_generate_data)

    t = sub.add_parser("train", help="train from a JSON experiment file")
    t.add_argument("--config", required=True)
    t.add_argument("--resume")
    t.add_argument("--data")
    t.add_argument("--out")
    t.add_argument("--iters", type=int)
    t.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    t.add_argument("--force", action="store_true")
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", help="inpaint every sequence of a dataset")
    i.add_argument("--ckpt", required=True)
    i.add_argument("--input", required=True)
    i.add_argument("--out", required=True)
    i.add_argument("--force", action="store_true")
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("eval", help="metrics CSV + JSON summary + figures")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--report", required=True)
    e.add_argument("--max-figures", type=int, default=4)
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("count-params", help="parameter breakdown and MADs")
    c.add_argument("--config")
    c.add_argument("--size", type=int)
    c.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    c.set_defaults(func=cmd_count_params)

    p = sub.add_parser("plot", help="render loss curves from a training log")
    p.add_argument("--log", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)
    return ap


def main(argv=None):
    ap = build_parser()
    a = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        a.func(a)
    except (ConfigError, CheckpointError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataFormatError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    return 0


if __name__ == "__main__":
    sys.exit(main())
