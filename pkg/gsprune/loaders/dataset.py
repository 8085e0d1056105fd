'''
Dataset directories:

    cameras.csv     one row per camera: index, split, intrinsics, 3x4 world-to-camera
    train/####.png  8-bit image, with ####.npy holding the exact float image
    test/####.png
    gt.ply          ground-truth cloud, if known
'''

import csv
import io

import numpy as np

from gsprune import gp, GSPrune, Path, Progress, fmtnum
from gsprune.core import Camera, TrainingView
from gsprune.data import Dataset


CAMERA_COLUMNS = (['index', 'split', 'width', 'height', 'fx', 'fy', 'cx', 'cy'] +
                  ['r%d%d' % (i, j) for i in range(3) for j in range(3)] + ['tx', 'ty', 'tz'])


def camera_row(i, split, cam):
    R, t = cam.R, cam.t
    return [i, split, cam.width, cam.height, cam.fx, cam.fy, cam.cx, cam.cy] + list(R.ravel()) + list(t)


def camera_from_row(row):
    W = np.eye(4)
    W[:3, :3] = np.array([float(row['r%d%d' % (i, j)]) for i in range(3) for j in range(3)]).reshape(3, 3)
    W[:3, 3] = [float(row[k]) for k in ('tx', 'ty', 'tz')]
    return Camera(float(row['fx']), float(row['fy']), float(row['cx']), float(row['cy']),
                  int(row['width']), int(row['height']), W).validate()


@GSPrune.api
def save_dataset(gp, p, ds):
    p = Path(p).ensureDir()
    views = sorted([(int(v.name), 'train', v) for v in ds.train] + [(int(v.name), 'test', v) for v in ds.test])

    out = io.StringIO()
    w = csv.writer(out, lineterminator='\n')
    w.writerow(CAMERA_COLUMNS)
    for i, split, v in views:
        w.writerow([fmtnum(x) if not isinstance(x, str) else x for x in camera_row(i, split, v.camera)])
    (p/'cameras.csv').write_atomic(out.getvalue())

    for split in ('train', 'test'):
        (p/split).ensureDir()
    for i, split, v in Progress(views, gerund='saving'):
        gp.saveImage(p/split/v.name, v.image)

    if ds.gt_cloud is not None:
        gp.save_ply(p/'gt.ply', ds.gt_cloud)


@GSPrune.api
def open_dataset(gp, p):
    p = Path(p)
    camfn = p/'cameras.csv'
    if not camfn.exists():
        gp.fail(f'{p.given}: not a dataset directory (no cameras.csv)')
    with open(camfn, newline='') as fp:
        rows = list(csv.DictReader(fp))
    if not rows or set(CAMERA_COLUMNS) - set(rows[0].keys()):
        gp.fail(f'{camfn}: expected columns {",".join(CAMERA_COLUMNS)}')

    train, test = [], []
    for row in Progress(rows, gerund='loading'):
        split = row['split']
        if split not in ('train', 'test'):
            gp.fail(f'{camfn}: unknown split "{split}"')
        name = '%04d' % int(row['index'])
        cam = camera_from_row(row)
        view = TrainingView(cam, gp.openImage(p/split/name), name=name)
        (train if split == 'train' else test).append(view)

    gt = gp.openPath(p/'gt.ply') if (p/'gt.ply').exists() else None
    return Dataset(train, test, gt)
