"""On-disk dataset layout.

One directory per sequence::

    frame_0000.color.png   8-bit RGB
    frame_0000.depth.png   16-bit gray, round(65535 * d)
    frame_0000.seg.png     8-bit class ids
    frame_0000.mask.png    8-bit, 255 = hole
    flow_0001_to_0000.flo  Middlebury flow
    occl_0001_to_0000.png  8-bit, 255 = valid

plus ``manifest.json`` at the dataset root.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from ..core_types import SequenceSample, denormalize_rgb, normalize_rgb

FLO_MAGIC = b"PIEH"  # float32 202021.25


class DataFormatError(ValueError):
    def __init__(self, path, offset, msg):
        self.path, self.offset = str(path), offset
        where = f" at byte offset {offset}" if offset is not None else ""
        super().__init__(f"{path}{where}: {msg}")


def write_flo(path, flow):
    flow = np.asarray(flow, dtype="<f4")
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise ValueError(f"flow must be H x W x 2, got {flow.shape}")
    h, w = flow.shape[:2]
    with open(path, "wb") as f:
        f.write(FLO_MAGIC)
        f.write(struct.pack("<ii", w, h))
        f.write(flow.tobytes(order="C"))


def read_flo(path):
    data = Path(path).read_bytes()
    if len(data) < 4 or data[:4] != FLO_MAGIC:
        raise DataFormatError(path, 0, f"bad .flo magic {data[:4]!r}, expected {FLO_MAGIC!r}")
    if len(data) < 12:
        raise DataFormatError(path, 4, "truncated header")
    w, h = struct.unpack_from("<ii", data, 4)
    if w <= 0 or h <= 0:
        raise DataFormatError(path, 4, f"invalid size {w}x{h}")
    need = 12 + 8 * w * h
    if len(data) != need:
        raise DataFormatError(path, min(len(data), need), f"expected {need} bytes, file has {len(data)}")
    return np.frombuffer(data, dtype="<f4", offset=12).reshape(h, w, 2).copy()


def _read_png(path, mode=None):
    path = Path(path)
    if not path.exists():
        raise DataFormatError(path, None, "file referenced by the dataset is missing")
    try:
        with Image.open(path) as im:
            im.load()
            if mode and im.mode != mode:
                im = im.convert(mode)
            return np.asarray(im)
    except (OSError, SyntaxError) as e:
        raise DataFormatError(path, 0, f"unreadable PNG: {e}") from e


def _write_png(path, arr):
    arr = np.ascontiguousarray(arr)
    Image.fromarray(arr).save(path)


@dataclass
class DatasetManifest:
    sequences: list
    depth_max: float
    num_classes: int
    background_ids: list
    size: int
    T: list = field(default_factory=list)
    root: str = ""

    def to_json(self):
        d = asdict(self)
        d.pop("root")
        return json.dumps(d, indent=2)


def flow_name(t, x):
    return f"flow_{t:04d}_to_{x:04d}.flo"


def occl_name(t, x):
    return f"occl_{t:04d}_to_{x:04d}.png"


def write_sequence(sample: SequenceSample, seq_dir):
    seq_dir = Path(seq_dir)
    seq_dir.mkdir(parents=True, exist_ok=True)
    for k in range(sample.num_frames):
        _write_png(seq_dir / f"frame_{k:04d}.color.png", denormalize_rgb(sample.color[k]))
        d = np.round(65535 * np.clip(sample.depth[k], 0, 1)).astype(np.uint16)
        _write_png(seq_dir / f"frame_{k:04d}.depth.png", d)
        _write_png(seq_dir / f"frame_{k:04d}.seg.png", sample.seg[k].astype(np.uint8))
        _write_png(seq_dir / f"frame_{k:04d}.mask.png", (255 * (sample.mask[k] > 0.5)).astype(np.uint8))
    for t in range(1, sample.num_frames):
        pairs = [(t, t - 1, sample.flow_fwd, sample.occl_fwd)]
        if t >= 2:
            pairs.append((t, 0, sample.flow_to_first, sample.occl_to_first))
        for a, b, flows, occls in pairs:
            if flows and flows[a] is not None:
                write_flo(seq_dir / flow_name(a, b), flows[a])
                _write_png(seq_dir / occl_name(a, b), np.round(255 * np.clip(occls[a], 0, 1)).astype(np.uint8))


def write_dataset(samples, out_dir, size=None) -> DatasetManifest:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    samples = list(samples)
    if not samples:
        raise ValueError("no samples to write")
    names = []
    for i, s in enumerate(samples):
        name = f"seq_{i:04d}"
        write_sequence(s, out_dir / name)
        names.append(name)
    first = samples[0]
    man = DatasetManifest(names, float(first.depth_scale), int(first.num_classes),
                          [int(b) for b in first.background_ids], int(size or first.size[0]),
                          [s.num_frames for s in samples], str(out_dir))
    (out_dir / "manifest.json").write_text(man.to_json())
    return man


def read_manifest(root) -> DatasetManifest:
    root = Path(root)
    path = root / "manifest.json"
    if not path.exists():
        raise DataFormatError(path, None, "manifest missing")
    try:
        d = json.loads(path.read_text())
        man = DatasetManifest(**d, root=str(root))
    except json.JSONDecodeError as e:
        raise DataFormatError(path, e.pos, f"invalid JSON: {e.msg}") from e
    except TypeError as e:
        raise DataFormatError(path, None, f"manifest fields: {e}") from e
    for name in man.sequences:
        if not (root / name).is_dir():
            raise DataFormatError(root / name, None, "sequence directory referenced by manifest is missing")
    return man


def _count_frames(seq_dir):
    return len(list(Path(seq_dir).glob("frame_*.color.png")))


def read_sequence(seq_dir, manifest: DatasetManifest, stride=1, T=None) -> SequenceSample:
    """Load one sequence; ``stride`` keeps every stride-th frame.

    Stored flows only connect consecutive frames and frame 0, so flow and
    occlusion are loaded only for ``stride == 1``.
    """
    seq_dir = Path(seq_dir)
    T = T if T is not None else _count_frames(seq_dir)
    idx = list(range(0, T, stride))
    color, depth, seg, mask = [], [], [], []
    for k in idx:
        color.append(normalize_rgb(_read_png(seq_dir / f"frame_{k:04d}.color.png", "RGB")))
        depth.append(_read_png(seq_dir / f"frame_{k:04d}.depth.png").astype(np.float64) / 65535.0)
        seg.append(_read_png(seq_dir / f"frame_{k:04d}.seg.png").astype(np.int64))
        mask.append((_read_png(seq_dir / f"frame_{k:04d}.mask.png") > 127).astype(np.float32))
    n = len(idx)
    flows = {"fwd": [None] * n, "ofwd": [None] * n, "first": [None] * n, "ofirst": [None] * n}
    if stride == 1:
        for t in range(1, n):
            if (seq_dir / flow_name(t, t - 1)).exists():
                flows["fwd"][t] = read_flo(seq_dir / flow_name(t, t - 1))
                flows["ofwd"][t] = _read_png(seq_dir / occl_name(t, t - 1)).astype(np.float64) / 255.0
            if t == 1:
                flows["first"][t], flows["ofirst"][t] = flows["fwd"][t], flows["ofwd"][t]
            elif (seq_dir / flow_name(t, 0)).exists():
                flows["first"][t] = read_flo(seq_dir / flow_name(t, 0))
                flows["ofirst"][t] = _read_png(seq_dir / occl_name(t, 0)).astype(np.float64) / 255.0
    has_flow = any(f is not None for f in flows["fwd"])
    return SequenceSample(
        color=np.stack(color).astype(np.float32), depth=np.stack(depth).astype(np.float32),
        seg=np.stack(seg), mask=np.stack(mask),
        flow_fwd=flows["fwd"] if has_flow else [], occl_fwd=flows["ofwd"] if has_flow else [],
        flow_to_first=flows["first"] if has_flow else [], occl_to_first=flows["ofirst"] if has_flow else [],
        depth_scale=manifest.depth_max, num_classes=manifest.num_classes,
        background_ids=tuple(manifest.background_ids))


def read_dataset(root, stride=1):
    man = read_manifest(root)
    seqs = []
    for i, name in enumerate(man.sequences):
        T = man.T[i] if man.T else None
        seqs.append(read_sequence(Path(root) / name, man, stride, T))
    return man, seqs
