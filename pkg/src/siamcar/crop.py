"""Square crops with bilinear resampling and mean-colour padding."""
import numpy as np
from scipy.ndimage import map_coordinates


def context_size(w, h, context=0.5):
    """Side of the square template window: object plus ``context * (w + h)`` margin."""
    pad = context * (w + h)
    return float(np.sqrt((w + pad) * (h + pad)))


def crop_and_resize(image, center, side, out_size, pad_value=None):
    """Sample a ``side``-px square centred on ``center`` into ``out_size`` px.

    ``image`` is channels-first (C×H×W). Pixels outside the image take the
    per-channel mean (or ``pad_value``).
    """
    img = np.asarray(image, dtype=np.float64)
    if pad_value is None:
        pad_value = img.mean(axis=(1, 2))
    cx, cy = center
    step = side / out_size
    offs = (np.arange(out_size) + 0.5 - out_size / 2.0) * step
    ys = cy + offs - 0.5
    xs = cx + offs - 0.5
    grid_y, grid_x = np.meshgrid(ys, xs, indexing="ij")
    coords = np.stack([grid_y, grid_x])
    out = np.empty((img.shape[0], out_size, out_size))
    for c in range(img.shape[0]):
        out[c] = map_coordinates(img[c], coords, order=1, mode="grid-constant", cval=float(pad_value[c]))
    return out
