'Images: 8-bit PNG for inspection (pypng) and raw float .npy dumps for exact comparisons.'

import io

import numpy as np

from gsprune import gp, GSPrune, Path


@GSPrune.api
def open_png(gp, p):
    'Float RGB image in [0,1] (H x W x 3); alpha is dropped.'
    png = gp.importExternal('png', 'pypng')
    try:
        width, height, rows, info = png.Reader(bytes=p.read_bytes()).asRGBA8()
        pixels = np.array([np.frombuffer(bytes(row), dtype=np.uint8) for row in rows])
    except png.Error as e:
        gp.fail(f'{p.given}: cannot read PNG: {e}')
    return pixels.reshape(height, width, 4)[:, :, :3].astype(float) / 255


@GSPrune.api
def save_png(gp, p, image):
    'Clip *image* to [0,1] and write it as 8-bit RGB.'
    png = gp.importExternal('png', 'pypng')
    img = np.asarray(image, dtype=float)
    if img.ndim != 3 or img.shape[2] != 3:
        gp.fail(f'cannot save image of shape {img.shape} as PNG')
    h, w = img.shape[:2]
    rows = np.round(np.clip(img, 0, 1)*255).astype(np.uint8).reshape(h, w*3)
    buf = io.BytesIO()
    png.Writer(width=w, height=h, greyscale=False, bitdepth=8).write(buf, rows.tolist())
    p.write_atomic(buf.getvalue())


@GSPrune.api
def open_npy(gp, p):
    return np.load(str(p), allow_pickle=False)


@GSPrune.api
def save_npy(gp, p, arr):
    buf = io.BytesIO()
    np.save(buf, np.asarray(arr), allow_pickle=False)
    p.write_atomic(buf.getvalue())


@GSPrune.api
def saveImage(gp, p, image):
    'Write *image* as PNG at *p* plus a float dump next to it (same name, .npy).'
    p = Path(p)
    gp.save_png(p.with_name(p.name + '.png'), image)
    gp.save_npy(p.with_name(p.name + '.npy'), image)


@GSPrune.api
def openImage(gp, p):
    'Float image at *p* (extension optional); the .npy dump wins over the PNG when both exist.'
    p = Path(p)
    for ext in ('npy', 'png'):
        q = p.with_name(p.name + '.' + ext)
        if q.exists():
            return gp.openPath(q)
    gp.fail(f'no image at {p.given}')
