"""Object-mask sampling from segmentations."""
import numpy as np
from scipy import ndimage

from .render import BACKGROUND_IDS

_CROSS = ndimage.generate_binary_structure(2, 1)


def photometric_occlusion(I_t, warped_I_x, alpha=50.0):
    """Soft validity ``exp(-alpha * ||I_t - warped||^2)`` per pixel (channels last)."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    diff = np.asarray(I_t, float) - np.asarray(warped_I_x, float)
    return np.exp(-alpha * np.sum(diff ** 2, axis=-1))


def sample_object_mask(seg, rng, include_shadow=False, background_ids=BACKGROUND_IDS,
                       shadow_caster=None, instance=None, max_components=2, return_instances=False):
    """Union of randomly chosen connected non-background components (1 = hole).

    With ``include_shadow`` the shadow cast by the chosen objects (known
    exactly from the renderer via ``shadow_caster``) is added and the result
    dilated by one pixel.
    """
    seg = np.asarray(seg)
    fg = ~np.isin(seg, background_ids)
    if not fg.any():
        raise ValueError("segmentation has no non-background pixels to mask")
    labels, n = ndimage.label(fg, _CROSS)
    k = int(rng.integers(1, min(max_components, n) + 1))
    picked = rng.choice(np.arange(1, n + 1), size=k, replace=False)
    mask = np.isin(labels, picked)
    chosen = set()
    if instance is not None:
        chosen = set(np.unique(np.asarray(instance)[mask]).tolist()) - {-1}
    if include_shadow:
        if shadow_caster is None or instance is None:
            raise ValueError("shadow masks need the renderer's shadow-caster and instance maps")
        mask |= np.isin(shadow_caster, list(chosen))
        mask = ndimage.binary_dilation(mask, _CROSS)
    mask = mask.astype(np.float32)
    return (mask, sorted(chosen)) if return_instances else mask


def tracked_mask(instance, chosen, shadow_caster=None):
    """Mask following the chosen object instances in another frame."""
    mask = np.isin(instance, list(chosen))
    if shadow_caster is not None:
        mask |= np.isin(shadow_caster, list(chosen))
        mask = ndimage.binary_dilation(mask, _CROSS)
    return mask.astype(np.float32)
