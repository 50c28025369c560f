"""Small synthetic fundus-like images with known vessel maps.

Used by the tests and the demos where real DRIVE/STARE data is not around:
an orange disc with radial shading, a branching tree of dark curvilinear
vessels of varying width, and mild sensor noise.
"""
import os

import numpy as np
from scipy import ndimage

from .netpbm import write_netpbm


def _vessel_tree(rng, h, w, n_roots=3, steps=None):
    """Rasterized widths of random branching curves (float map, 0 = background)."""
    steps = steps or 2 * max(h, w)
    width = np.zeros((h, w))
    cy, cx = h * rng.uniform(0.4, 0.6), w * rng.uniform(0.4, 0.6)
    stack = [(cy, cx, rng.uniform(0, 2 * np.pi), rng.uniform(1.6, 2.6), steps) for _ in range(n_roots)]
    while stack:
        y, x, angle, radius, budget = stack.pop()
        for _ in range(int(budget)):
            angle += rng.normal(0, 0.12)
            y, x = y + np.sin(angle), x + np.cos(angle)
            iy, ix = int(round(y)), int(round(x))
            if not (0 <= iy < h and 0 <= ix < w):
                break
            width[iy, ix] = max(width[iy, ix], radius)
            radius = max(0.6, radius * 0.997)
            if rng.uniform() < 0.02 and radius > 0.9:
                branch = angle + rng.choice([-1, 1]) * rng.uniform(0.4, 1.0)
                stack.append((y, x, branch, radius * 0.75, budget * 0.6))
    return width


def make_fundus(h=128, w=128, seed=0):
    """Return (image uint8 HxWx3, label uint8 HxW in {0,1}, fov mask uint8 HxW)."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w]
    r = np.hypot((yy - (h - 1) / 2) / (h / 2), (xx - (w - 1) / 2) / (w / 2))
    fov = (r < 0.95).astype(np.uint8)

    width = _vessel_tree(rng, h, w)
    # distance to the nearest centreline pixel vs. its radius gives the vessel body
    dist, (iy, ix) = ndimage.distance_transform_edt(width == 0, return_indices=True)
    label = ((dist <= width[iy, ix] * 0.5 + 0.25) & (width[iy, ix] > 0) & (fov > 0)).astype(np.uint8)

    shade = 1.0 - 0.35 * r ** 2
    base = np.stack([0.85 * shade, 0.42 * shade, 0.18 * shade], axis=-1)
    softened = ndimage.gaussian_filter(label.astype(float), 0.7)
    contrast = rng.uniform(0.45, 0.6)
    image = base * (1 - contrast * softened[..., None] * np.array([0.5, 1.0, 0.8]))
    image = image + rng.normal(0, 0.012, image.shape)
    image = np.clip(image, 0, 1) * fov[..., None]
    return np.floor(image * 255 + 0.5).astype(np.uint8), label, fov


def write_dataset(root, n=3, h=64, w=64, seed=0, masks=True):
    """Write ``n`` images under the images/labels/masks layout; returns the stems."""
    for sub in ("images", "labels") + (("masks",) if masks else ()):
        os.makedirs(os.path.join(root, sub), exist_ok=True)
    stems = []
    for i in range(n):
        stem = f"{i + 1:02d}"
        image, label, fov = make_fundus(h, w, seed=seed + i)
        write_netpbm(os.path.join(root, "images", f"{stem}.ppm"), image)
        write_netpbm(os.path.join(root, "labels", f"{stem}.pgm"), label * 255)
        if masks:
            write_netpbm(os.path.join(root, "masks", f"{stem}.pgm"), fov * 255)
        stems.append(stem)
    return stems
