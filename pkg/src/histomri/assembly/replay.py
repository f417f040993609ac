"""Resampling original section images through stored transforms.

A target point ``x`` is carried by the 3D chain into stack space
``(x_mm, y_mm, z_mm)``. Its depth selects the two bracketing sections; in each
the in-plane point goes through that section's stored 2D chain and the
original image is read there. The two reads are blended linearly in depth, so
every output sample comes from a single interpolation of the source pixels.
"""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from ..core.containers import Geometry, VoxelVolume
from ..core.interpolation import sample_index
from ..errors import ChannelGeometryMismatch, MissingTransform
from ..registration.transforms import map_points
from .stack import SliceStack


def _transform_for(transforms, k: int):
    try:
        chain = transforms[k]
    except (KeyError, IndexError):
        raise MissingTransform(k) from None
    if chain is None:
        raise MissingTransform(k)
    return chain


def _read(image: np.ndarray, spacing, points: np.ndarray, method: str) -> np.ndarray:
    """Sample a (H, W[, C]) array at (row, col)-ordered mm points, zero outside."""
    index = points / np.asarray(spacing) - 0.5
    shape = np.asarray(image.shape[:2])
    inside = np.all((index >= -0.5) & (index <= shape - 0.5), axis=-1)
    if image.ndim == 2:
        return np.where(inside, sample_index(image, index, method), 0.0)
    cols = [np.where(inside, sample_index(image[..., c], index, method), 0.0) for c in range(image.shape[2])]
    return np.stack(cols, axis=-1)


def replay_stack(
    images: Sequence[np.ndarray],
    image_spacing,
    transforms_2d,
    thickness: float,
    stack_spacing,
    target: Geometry,
    chain_3d=None,
    method: str = "linear",
    slab: int = 8,
) -> np.ndarray:
    """Sample a section series on ``target`` through 2D and 3D transforms.

    Parameters
    ----------
    images : sequence of ndarray
        Original sections, (H, W) or (H, W, C) in row/column order.
    image_spacing : (float, float)
        Pixel spacing the 2D transforms were estimated with.
    transforms_2d : sequence or mapping
        Per-section chain mapping the reference (blockface) frame to the
        section's own frame.
    thickness : float
        Section thickness (mm).
    stack_spacing : (float, float)
        In-plane ``(spacing_y, spacing_x)`` of the assembled stack (mm).
    target : Geometry
        Output grid.
    chain_3d : transform chain, optional
        Maps ``target`` points into stack space.
    method : "linear" or "nearest"
        ``"nearest"`` also picks the nearest section instead of blending.
    """
    if method not in ("linear", "nearest"):
        raise ValueError("replay supports 'linear' and 'nearest'")
    n = len(images)
    shapes = {img.shape for img in images}
    if len(shapes) != 1:
        raise ChannelGeometryMismatch(f"sections differ in shape: {sorted(shapes)}")
    chains = [_transform_for(transforms_2d, k) for k in range(n)]
    img_sp = np.asarray(image_spacing, float)
    to_frame = img_sp / np.asarray(stack_spacing, float)
    channels = images[0].shape[2] if images[0].ndim == 3 else 1
    out = np.zeros(tuple(target.shape) + ((channels,) if channels > 1 else ()))
    axes = [o + (np.arange(m) + 0.5) * s for m, s, o in zip(target.shape, target.spacing, target.origin)]
    for start in range(0, target.shape[0], slab):
        stop = min(start + slab, target.shape[0])
        pts = np.stack(np.meshgrid(axes[0][start:stop], *axes[1:], indexing="ij"), axis=-1).reshape(-1, 3)
        p = map_points(chain_3d, pts) if chain_3d else pts
        kc = p[:, 2] / thickness - 0.5
        # depths inside the stack box but beyond the outer section centres read
        # the outer section, as in-plane reads do at the image border
        in_z = (kc >= -0.5) & (kc <= n - 0.5)
        kc = np.clip(kc, 0, n - 1)
        if method == "nearest":
            picks = [(np.floor(kc + 0.5).astype(np.intp), in_z.astype(float))]
        else:
            k0 = np.floor(kc).astype(np.intp)
            frac = kc - k0
            picks = [(k0, np.where(in_z, 1.0 - frac, 0.0)), (k0 + 1, np.where(in_z, frac, 0.0))]
        acc = np.zeros((len(p),) + ((channels,) if channels > 1 else ()))
        inplane = np.stack([p[:, 1], p[:, 0]], axis=1) * to_frame
        for ks, w in picks:
            valid = (ks >= 0) & (ks < n) & (w > 0)
            order = np.argsort(ks[valid], kind="stable")
            idx = np.nonzero(valid)[0][order]
            kv = ks[idx]
            bounds = np.searchsorted(kv, np.arange(n + 1))
            for k in range(n):
                sel = idx[bounds[k]:bounds[k + 1]]
                if sel.size == 0:
                    continue
                q = map_points(chains[k], inplane[sel])
                vals = _read(images[k], img_sp, q, method)
                wk = w[sel] if channels == 1 else w[sel][:, None]
                acc[sel] += wk * vals
        out[start:stop] = acc.reshape(out[start:stop].shape)
    return out


def reconstruct_color(
    stack: SliceStack,
    transforms_2d: Sequence | Mapping,
    chain_3d=None,
    target: Geometry | None = None,
    image_spacing=None,
) -> VoxelVolume:
    """Colour volume by replaying stored transforms on each RGB channel.

    No registration is re-run: section ``k`` is read through
    ``transforms_2d[k]`` and the stack through ``chain_3d``. ``image_spacing``
    is the pixel spacing the 2D transforms were computed with (defaults to the
    stack spacing).

    Raises
    ------
    MissingTransform
        A section has no stored 2D transform.
    ChannelGeometryMismatch
        Sections differ in size or channel count.
    """
    if not len(stack):
        raise ChannelGeometryMismatch("empty stack")
    shapes = {s.data.shape for s in stack.slices}
    if len(shapes) != 1:
        raise ChannelGeometryMismatch(f"sections differ in shape: {sorted(shapes)}")
    sy, sx = stack.spacing
    h, w = stack.shape
    if target is None:
        target = Geometry((w, h, len(stack)), (sx, sy, stack.thickness))
    img_sp = stack.spacing if image_spacing is None else image_spacing
    # positions are mapped once; each channel is then read separately
    data = replay_stack([s.data for s in stack.slices], img_sp, transforms_2d, stack.thickness, stack.spacing,
                        target, chain_3d)
    return VoxelVolume(data, target.spacing, target.origin, stack.orientation)
