"""Procedural RGB-D-segmentation sequences with exact flow and occlusion.

Scenes are an axis-aligned room (y up, floor at y=0) holding textured
axis-aligned boxes. Every pixel is ray-cast against the analytic geometry, so
depth is the exact z-buffer of the nearest surface, and flow between frames
comes from reprojecting each pixel's 3D hit point into the other camera.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..core_types import SequenceSample, normalize_rgb, scale_depth

WALL, FLOOR, CEILING = 0, 1, 2
BACKGROUND_IDS = (WALL, FLOOR, CEILING)
EPS = 1e-6


@dataclass
class Box:
    lo: tuple
    hi: tuple
    class_id: int
    color: tuple = (0.6, 0.4, 0.3)
    freq: float = 3.0
    phase: float = 0.0


@dataclass
class SceneSpec:
    room: tuple  # extents (sx, sy, sz) in meters
    boxes: list
    poses: list  # per frame (position, look_at)
    light_dir: tuple = (0.4, 1.0, 0.3)  # direction toward the light
    ambient: float = 0.45
    size: int = 64
    fov_deg: float = 60.0
    num_classes: int = 8
    depth_max: float = 10.0
    seed: int = 0
    wall_colors: dict = field(default_factory=lambda: {
        WALL: (0.75, 0.72, 0.65), FLOOR: (0.55, 0.45, 0.35), CEILING: (0.85, 0.85, 0.85)})

    def __post_init__(self):
        if len(self.poses) < 1:
            raise ValueError("scene needs at least one camera pose")
        if not any(b.class_id not in BACKGROUND_IDS for b in self.boxes):
            raise ValueError("scene needs at least one non-background object")
        room = np.asarray(self.room, dtype=float)
        for pos, _ in self.poses:
            p = np.asarray(pos, dtype=float)
            if np.any(p <= 0) or np.any(p >= room):
                raise ValueError(f"camera position {tuple(p)} is outside the room")
        for b in self.boxes:
            if not 0 <= b.class_id < self.num_classes:
                raise ValueError(f"box class {b.class_id} outside [0, {self.num_classes})")

    @property
    def focal(self) -> float:
        return 0.5 * (self.size - 1) / np.tan(np.radians(self.fov_deg) / 2)


def camera_axes(position, look_at):
    """Rows are the camera x (right), y (down) and z (forward) axes in world coordinates."""
    f = np.asarray(look_at, float) - np.asarray(position, float)
    n = np.linalg.norm(f)
    if n < EPS:
        raise ValueError("degenerate camera pose: zero view direction")
    f = f / n
    up = np.array([0.0, 1.0, 0.0])
    x = np.cross(up, f)
    if np.linalg.norm(x) < EPS:
        raise ValueError("degenerate camera pose: view direction parallel to up")
    x /= np.linalg.norm(x)
    y = np.cross(f, x)
    return np.stack([x, -y, f])


def pixel_grid(size):
    v, u = np.mgrid[0:size, 0:size].astype(np.float64)
    return u, v


def camera_rays(spec: SceneSpec, pose):
    """Ray directions scaled so that the camera-z component is 1 (t == depth)."""
    R = camera_axes(*pose)
    u, v = pixel_grid(spec.size)
    c = (spec.size - 1) / 2
    d_cam = np.stack([(u - c) / spec.focal, (v - c) / spec.focal, np.ones_like(u)], -1)
    return d_cam @ R, R


def project(spec: SceneSpec, pose, X):
    """World points -> (u, v, z) in the given camera."""
    R = camera_axes(*pose)
    Xc = (X - np.asarray(pose[0], float)) @ R.T
    c = (spec.size - 1) / 2
    z = Xc[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = spec.focal * Xc[..., 0] / z + c
        v = spec.focal * Xc[..., 1] / z + c
    return u, v, z


def _slab(origin, dirs, lo, hi):
    """Vectorized ray/box slab test. Returns (t_near, t_far, near_axis, far_axis)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / np.where(np.abs(dirs) < 1e-12, 1e-12, dirs)
    t1 = (np.asarray(lo) - origin) * inv
    t2 = (np.asarray(hi) - origin) * inv
    tmin, tmax = np.minimum(t1, t2), np.maximum(t1, t2)
    return tmin.max(-1), tmax.min(-1), tmin.argmax(-1), tmax.argmin(-1)


def trace(spec: SceneSpec, origin, dirs, skip_room=False):
    """Nearest hit along each ray.

    Returns t, normal, class id, instance id (-1 for room surfaces) and the
    hit point. Rays are ``... x 3`` arrays; ``origin`` broadcasts against them.
    """
    shape = dirs.shape[:-1]
    origin = np.broadcast_to(np.asarray(origin, float), dirs.shape)
    t = np.full(shape, np.inf)
    normal = np.zeros(dirs.shape)
    cls = np.full(shape, -1, dtype=np.int64)
    inst = np.full(shape, -1, dtype=np.int64)
    if not skip_room:
        room = np.asarray(spec.room, float)
        _, tfar, _, fax = _slab(origin, dirs, np.zeros(3), room)
        t = tfar
        sign = np.take_along_axis(np.sign(dirs), fax[..., None], -1)[..., 0]
        normal = -sign[..., None] * np.eye(3)[fax]
        cls = np.where(fax == 1, np.where(sign < 0, FLOOR, CEILING), WALL)
    for k, b in enumerate(spec.boxes):
        tn, tf, nax, _ = _slab(origin, dirs, b.lo, b.hi)
        hit = (tn <= tf) & (tn > EPS) & (tn < t)
        if not hit.any():
            continue
        t = np.where(hit, tn, t)
        sign = np.take_along_axis(np.sign(dirs), nax[..., None], -1)[..., 0]
        normal = np.where(hit[..., None], -sign[..., None] * np.eye(3)[nax], normal)
        cls = np.where(hit, b.class_id, cls)
        inst = np.where(hit, k, inst)
    X = origin + t[..., None] * dirs
    return t, normal, cls, inst, X


def _albedo(spec: SceneSpec, X, normal, cls, inst):
    out = np.zeros(X.shape)
    # in-plane coordinates: drop the axis along the normal
    ax = np.abs(normal).argmax(-1)
    a = np.where(ax == 0, X[..., 1], X[..., 0])
    b = np.where(ax == 2, X[..., 1], X[..., 2])
    for c, col in spec.wall_colors.items():
        sel = (inst < 0) & (cls == c)
        pat = 0.85 + 0.15 * np.sin(1.7 * a) * np.cos(1.3 * b)
        out[sel] = np.asarray(col) * pat[sel][:, None]
    for k, box in enumerate(spec.boxes):
        sel = inst == k
        pat = 0.8 + 0.2 * np.sin(box.freq * a + box.phase) * np.sin(box.freq * b)
        out[sel] = np.asarray(box.color) * pat[sel][:, None]
    return out


def shadow_casters(spec: SceneSpec, X, normal):
    """Index of the box blocking the light at each point, -1 when lit."""
    L = np.asarray(spec.light_dir, float)
    L = L / np.linalg.norm(L)
    origin = X + 1e-4 * normal
    dirs = np.broadcast_to(L, X.shape)
    t = np.full(X.shape[:-1], np.inf)
    caster = np.full(X.shape[:-1], -1, dtype=np.int64)
    lit_side = (normal @ L) > 0
    for k, b in enumerate(spec.boxes):
        tn, tf, _, _ = _slab(origin, dirs, b.lo, b.hi)
        hit = (tn <= tf) & (tf > EPS) & (np.maximum(tn, 0) < t) & lit_side
        t = np.where(hit, np.maximum(tn, 0), t)
        caster = np.where(hit, k, caster)
    return caster


@dataclass
class RenderedFrame:
    rgb: np.ndarray  # uint8 H x W x 3
    depth_m: np.ndarray  # camera-z meters
    seg: np.ndarray
    instance: np.ndarray
    shadow_caster: np.ndarray
    points: np.ndarray  # world hit points, H x W x 3


def render_frame(spec: SceneSpec, pose) -> RenderedFrame:
    dirs, _ = camera_rays(spec, pose)
    t, normal, cls, inst, X = trace(spec, pose[0], dirs)
    L = np.asarray(spec.light_dir, float)
    L = L / np.linalg.norm(L)
    caster = shadow_casters(spec, X, normal)
    diffuse = np.clip(normal @ L, 0, None) * (caster < 0)
    shade = spec.ambient + (1 - spec.ambient) * diffuse
    color = np.clip(_albedo(spec, X, normal, cls, inst) * shade[..., None], 0, 1)
    rgb = np.round(color * 255).astype(np.uint8)
    return RenderedFrame(rgb, t, cls, inst, caster, X)


def exact_occlusion(depth_t, depth_x, flow_t_to_x, reproj_depth=None, tau_abs=0.02, tau_rel=0.02):
    """Validity of the correspondence t -> x (1 = valid).

    A pixel is invalid when its reprojection falls outside frame x, or when
    the depth of frame x at the reprojected position differs from the
    reprojected depth by more than ``tau_abs + tau_rel * depth``. The lookup
    interpolates inverse depth bilinearly, which is exact on planar surfaces
    at any slant, while samples straddling a depth edge blend two surfaces
    and fail the test. ``reproj_depth`` is the depth of each pixel's 3D point
    as seen from camera x; ``depth_t`` stands in for it when camera poses are
    unknown. Depths must share one unit.
    """
    depth_t = np.asarray(depth_t, float)
    depth_x = np.asarray(depth_x, float)
    flow = np.asarray(flow_t_to_x, float)
    if depth_t.shape != depth_x.shape or flow.shape != depth_t.shape + (2,):
        raise ValueError("depth and flow shapes are not aligned")
    H, W = depth_t.shape
    z = depth_t if reproj_depth is None else np.asarray(reproj_depth, float)
    v, u = np.mgrid[0:H, 0:W].astype(float)
    x = u + flow[..., 0]
    y = v + flow[..., 1]
    inb = (x >= 0) & (x <= W - 1) & (y >= 0) & (y <= H - 1) & np.isfinite(z) & (z > 0)
    xc, yc = np.clip(x, 0, W - 1), np.clip(y, 0, H - 1)
    x0, y0 = np.floor(xc).astype(int), np.floor(yc).astype(int)
    x1, y1 = np.minimum(x0 + 1, W - 1), np.minimum(y0 + 1, H - 1)
    fx, fy = xc - x0, yc - y0
    with np.errstate(divide="ignore"):
        inv = np.where(depth_x > 0, 1.0 / depth_x, 0.0)
    inv_s = ((1 - fy) * ((1 - fx) * inv[y0, x0] + fx * inv[y0, x1])
             + fy * ((1 - fx) * inv[y1, x0] + fx * inv[y1, x1]))
    with np.errstate(divide="ignore"):
        z_s = np.where(inv_s > 0, 1.0 / np.where(inv_s > 0, inv_s, 1.0), np.inf)
    ok = inb & (np.abs(z_s - z) <= tau_abs + tau_rel * np.abs(z))
    return ok.astype(np.float64)


def correspondence(spec: SceneSpec, frames, t, x):
    """Flow t -> x, the reprojected depth and the exact occlusion mask."""
    X = frames[t].points
    u, v, z = project(spec, spec.poses[x], X)
    uu, vv = pixel_grid(spec.size)
    if np.array_equal(np.asarray(spec.poses[t], float), np.asarray(spec.poses[x], float)):
        flow = np.zeros(uu.shape + (2,))
    else:
        flow = np.stack([u - uu, v - vv], -1)
        flow = np.where(np.isfinite(flow), flow, 0.0)
    occl = exact_occlusion(frames[t].depth_m, frames[x].depth_m, flow, reproj_depth=z)
    return flow.astype(np.float32), occl


def render_sequence(spec: SceneSpec, rng=None, include_shadow=False, tracked_masks=False) -> SequenceSample:
    """Render every pose of ``spec`` and sample the inpaint mask.

    Mask sampling draws from ``rng`` (default: seeded from ``spec.seed``) so
    the output is fully determined by the scene description.
    """
    from .masks import sample_object_mask, tracked_mask

    frames = [render_frame(spec, p) for p in spec.poses]
    T = len(frames)
    flow_fwd, occl_fwd = [None] * T, [None] * T
    flow_first, occl_first = [None] * T, [None] * T
    for t in range(1, T):
        flow_fwd[t], occl_fwd[t] = correspondence(spec, frames, t, t - 1)
        if t >= 2:
            flow_first[t], occl_first[t] = correspondence(spec, frames, t, 0)
        else:
            flow_first[t], occl_first[t] = flow_fwd[t], occl_fwd[t]

    rng = np.random.default_rng(spec.seed) if rng is None else rng
    seg = np.stack([f.seg for f in frames])
    inst = np.stack([f.instance for f in frames])
    casters = np.stack([f.shadow_caster for f in frames])
    mask0, chosen = sample_object_mask(seg[0], rng, include_shadow, BACKGROUND_IDS,
                                       shadow_caster=casters[0], instance=inst[0], return_instances=True)
    if tracked_masks:
        masks = np.stack([tracked_mask(inst[k], chosen, casters[k] if include_shadow else None)
                          for k in range(T)])
    else:
        masks = np.repeat(mask0[None], T, 0)

    return SequenceSample(
        color=np.stack([normalize_rgb(f.rgb) for f in frames]).astype(np.float32),
        depth=np.stack([scale_depth(f.depth_m, spec.depth_max).data for f in frames]).astype(np.float32),
        seg=seg.astype(np.int64),
        mask=masks.astype(np.float32),
        flow_fwd=flow_fwd, occl_fwd=occl_fwd,
        flow_to_first=flow_first, occl_to_first=occl_first,
        depth_scale=spec.depth_max, num_classes=spec.num_classes,
        background_ids=BACKGROUND_IDS, shadow=casters >= 0,
    )


def random_scene(rng, frames=5, size=64, num_classes=8, n_objects=3, speed=0.06, seed=0) -> SceneSpec:
    """A random room with a few boxes and a smoothly moving camera."""
    room = (rng.uniform(4.5, 6.0), rng.uniform(2.6, 3.2), rng.uniform(4.5, 6.0))
    boxes = []
    for k in range(n_objects):
        w, h, d = rng.uniform(0.4, 1.1), rng.uniform(0.4, 1.4), rng.uniform(0.4, 1.1)
        x = rng.uniform(0.6, room[0] - 0.6 - w)
        z = rng.uniform(room[2] * 0.55, room[2] - 0.3 - d)
        boxes.append(Box((x, 0.0, z), (x + w, h, z + d), int(rng.integers(3, num_classes)),
                         tuple(rng.uniform(0.2, 0.95, 3)), float(rng.uniform(1.5, 4.0)),
                         float(rng.uniform(0, 2 * np.pi))))
    start = np.array([rng.uniform(1.5, room[0] - 1.5), rng.uniform(1.2, 1.7), rng.uniform(0.6, 1.2)])
    heading = rng.normal(size=3) * np.array([1, 0.2, 0.5])
    heading = speed * heading / np.linalg.norm(heading)
    target = np.array([room[0] / 2, 0.6, room[2] * 0.8])
    pan = rng.normal(size=3) * np.array([0.08, 0.02, 0.0])
    poses = [(tuple(start + k * heading), tuple(target + k * pan)) for k in range(frames)]
    return SceneSpec(room, boxes, poses, size=size, num_classes=num_classes, seed=seed)
