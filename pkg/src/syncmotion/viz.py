"""Filter mosaics written as binary PGM (P5, maxval 255).

A mosaic has one row of tiles per filter and one tile per frame. Tiles are
``H x W`` and separated by `gap` pixels of black, so the image is
``rows*H + (rows-1)*gap`` high and ``cols*W + (cols-1)*gap`` wide.
Each filter is min-max scaled over all its frames; a constant filter maps to
mid-gray (128).
"""

import numpy as np

MID_GRAY = 128


def scale_filter(tiles):
    tiles = np.asarray(tiles, dtype=np.float64)
    lo, hi = tiles.min(), tiles.max()
    if not hi > lo:
        return np.full(tiles.shape, MID_GRAY, dtype=np.uint8)
    return np.rint((tiles - lo) / (hi - lo) * 255.0).astype(np.uint8)


def mosaic_shape(rows, cols, tile_h, tile_w, gap=1):
    return rows * tile_h + (rows - 1) * gap, cols * tile_w + (cols - 1) * gap


def mosaic(filters, tile_shape, gap=1):
    """`filters` is ``(rows, cols, tile_h*tile_w)``; each row is scaled on its own."""
    filters = np.asarray(filters, dtype=np.float64)
    rows, cols = filters.shape[:2]
    th, tw = tile_shape
    height, width = mosaic_shape(rows, cols, th, tw, gap)
    img = np.zeros((height, width), dtype=np.uint8)
    for r in range(rows):
        tiles = scale_filter(filters[r]).reshape(cols, th, tw)
        for c in range(cols):
            y, x = r * (th + gap), c * (tw + gap)
            img[y:y + th, x:x + tw] = tiles[c]
    return img


def tile_shape_for(n_pixels, frame_shape=None):
    if frame_shape is not None:
        return tuple(frame_shape)
    side = int(round(np.sqrt(n_pixels)))
    if side * side == n_pixels:
        return side, side
    return 1, n_pixels


def write_pgm(path, img):
    img = np.asarray(img, dtype=np.uint8)
    if img.ndim != 2:
        raise ValueError("PGM image must be 2-D")
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header + img.tobytes())


def read_pgm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise ValueError("only maxval 255 is supported")
    pixels = np.frombuffer(parts[4][: w * h], dtype=np.uint8)
    return pixels.reshape(h, w)


def grouping_mosaic(first_frame_filters, report, tile_shape, top=6, gap=1):
    """One row per pooling unit (report order) holding its `top` first-frame filters."""
    rows = []
    for entry in report:
        idx = list(entry["filters"][:top])
        rows.append(np.stack([first_frame_filters[q] for q in idx]))
    img_rows = np.zeros((len(rows), top, first_frame_filters.shape[1]))
    for r, tiles in enumerate(rows):
        img_rows[r, : len(tiles)] = tiles
    # each tile scaled on its own so weak filters stay visible
    height, width = mosaic_shape(len(rows), top, *tile_shape, gap)
    img = np.zeros((height, width), dtype=np.uint8)
    th, tw = tile_shape
    for r in range(len(rows)):
        for c in range(top):
            y, x = r * (th + gap), c * (tw + gap)
            img[y:y + th, x:x + tw] = scale_filter(img_rows[r, c]).reshape(th, tw)
    return img
