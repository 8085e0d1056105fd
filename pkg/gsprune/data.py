'''
Synthetic scenes and datasets: seeded Gaussian clouds, deliberately redundant copies of them,
orbit camera rigs, and ground-truth renders split into train and test views.
'''

import math

import numpy as np

from gsprune import gp, options, AttrDict, Progress, parseList
from gsprune.core import GaussianCloud, Camera, TrainingView, logit, quat_to_rotmat, rgb_to_sh_dc, sh_basis_count, sigmoid
from gsprune.render import render_image


gp.option('seed', 0, 'random seed')
gp.option('n_gaussians', 250, 'Gaussians in a synthetic scene before duplication')
gp.option('copies', 4, 'copies of every synthetic Gaussian')
gp.option('jitter', 0.5, 'copy position noise, in units of the Gaussian\'s own scale')
gp.option('box', 1.0, 'half-size of the cube synthetic Gaussians are placed in')
gp.option('scale_min', 0.04, 'smallest synthetic Gaussian scale')
gp.option('scale_max', 0.15, 'largest synthetic Gaussian scale')
gp.option('opacity_min', 0.6, 'smallest synthetic opacity')
gp.option('opacity_max', 0.95, 'largest synthetic opacity')
gp.option('color_min', 0.05, 'smallest synthetic color channel value')
gp.option('color_max', 0.95, 'largest synthetic color channel value')
gp.option('n_cameras', 24, 'orbit cameras in a synthetic dataset')
gp.option('image_size', 64, 'width and height of rendered images')
gp.option('fov', 50.0, 'horizontal field of view of orbit cameras (degrees)')
gp.option('orbit_radius', 3.5, 'distance of orbit cameras from the scene center')
gp.option('elevations', '15,-15', 'elevation of each orbit ring (degrees, comma-separated)')
gp.option('holdout_every', 8, 'every n-th camera goes to the test split')


class SceneSpec(AttrDict):
    'Parameters of a synthetic cloud.'

    @classmethod
    def from_options(cls, **kwargs):
        r = cls(n_gaussians=options.n_gaussians, box=options.box, center=(0.0, 0.0, 0.0),
                scale_range=(options.scale_min, options.scale_max),
                opacity_range=(options.opacity_min, options.opacity_max),
                color_range=(options.color_min, options.color_max),
                sh_degree=options.sh_degree, seed=options.seed)
        r.update(kwargs)
        return r.validate()

    def validate(self):
        if self.n_gaussians < 1:
            gp.fail('scene needs at least one gaussian')
        if not (math.isfinite(self.box) and self.box > 0):
            gp.fail('scene box must be finite and positive')
        lo, hi = self.scale_range
        if not 0 < lo <= hi:
            gp.fail('scale range must satisfy 0 < min <= max')
        lo, hi = self.opacity_range
        if not 0 < lo <= hi < 1:
            gp.fail('opacity range must lie inside (0, 1)')
        return self


class Dataset:
    'Train and test views, plus the ground-truth cloud they were rendered from (if known).'
    def __init__(self, train, test, gt_cloud=None, seed=None):
        self.train = list(train)
        self.test = list(test)
        self.gt_cloud = gt_cloud
        self.seed = seed

    @property
    def views(self):
        return self.train + self.test

    @property
    def cameras(self):
        'Cameras in their original order (view names are the camera indices).'
        return [v.camera for v in sorted(self.views, key=lambda v: int(v.name))]

    def __repr__(self):
        return f'<Dataset train={len(self.train)} test={len(self.test)}>'


def random_quaternions(rng, n):
    q = rng.standard_normal((n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return q


def make_synthetic_cloud(spec):
    'Seeded cloud: uniform positions in the box, log-uniform scales, random rotations, degree-0 colors.'
    spec = SceneSpec(spec).validate()
    rng = np.random.default_rng(spec.seed)
    n = spec.n_gaussians
    center = np.asarray(spec.center, dtype=float)

    positions = center + rng.uniform(-spec.box, spec.box, (n, 3))
    lo, hi = spec.scale_range
    log_scales = rng.uniform(math.log(lo), math.log(hi), (n, 3))
    rotations = random_quaternions(rng, n)
    opacity = rng.uniform(*spec.opacity_range, n)
    rgb = rng.uniform(*spec.color_range, (n, 3))

    sh = np.zeros((n, sh_basis_count(spec.sh_degree), 3))
    sh[:, 0] = rgb_to_sh_dc(rgb)
    return GaussianCloud(positions, log_scales, rotations, logit(opacity), sh)


def duplicate_with_jitter(cloud, copies, jitter, seed=0):
    '''Each Gaussian repeated *copies* times in a row, positions moved by jitter*scale along random local axes,
    opacity lowered to 1-(1-sigma)^(1/copies) so the stack composites to about the original opacity.'''
    if copies < 1:
        gp.fail('copies must be >= 1')
    if copies == 1:
        return cloud.copy()
    rng = np.random.default_rng([int(seed), 1])
    out = cloud.take(np.repeat(np.arange(len(cloud)), copies))
    R = quat_to_rotmat(out.rotations)[0]
    z = rng.standard_normal((len(out), 3)) * np.exp(out.log_scales.astype(float)) * jitter
    out.positions = (out.positions + np.einsum('kij,kj->ki', R, z)).astype(out.positions.dtype)
    sigma = 1 - (1 - sigmoid(out.opacity_logits.astype(float)))**(1/copies)
    out.opacity_logits = logit(sigma).astype(out.opacity_logits.dtype)
    return out


def look_at(position, target, up=(0.0, 0.0, 1.0)):
    'World-to-camera 4x4 for a camera at *position* looking at *target*; rows of R are right, down, forward.'
    position = np.asarray(position, dtype=float)
    forward = np.asarray(target, dtype=float) - position
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, up)
    if np.linalg.norm(right) < 1e-9:
        gp.fail('camera looks along the up axis')
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    W = np.eye(4)
    W[:3, :3] = np.stack([right, down, forward])
    W[:3, 3] = -W[:3, :3] @ position
    return W


def orbit_cameras(center, radius, count, image_size, fov, elevations=(0.0,)):
    '''*count* cameras at evenly spaced azimuths around *center*, alternating over the elevation rings,
    all looking at *center*.  *fov* is horizontal, in degrees.'''
    if count < 1:
        gp.fail('need at least one camera')
    elevations = parseList(elevations) if isinstance(elevations, str) else list(elevations) or [0.0]
    w = h = int(image_size)
    f = (w/2) / math.tan(math.radians(fov)/2)
    center = np.asarray(center, dtype=float)
    cams = []
    for i in range(count):
        az = 2*math.pi*i/count
        el = math.radians(elevations[i % len(elevations)])
        pos = center + radius*np.array([math.cos(el)*math.cos(az), math.cos(el)*math.sin(az), math.sin(el)])
        cams.append(Camera(f, f, w/2, h/2, w, h, look_at(pos, center)).validate())
    return cams


def scene_extent(cameras):
    'Radius of the sphere around the mean camera center that holds every camera.'
    centers = np.array([c.center for c in cameras])
    if len(centers) == 0:
        return 1.0
    r = float(np.linalg.norm(centers - centers.mean(axis=0), axis=1).max())
    return r if r > 0 else 1.0


def render_dataset(gt_cloud, cameras, holdout_every, seed=None):
    'Render *gt_cloud* from every camera; camera i is a test view when i % holdout_every == 0.'
    if len(cameras) < 2:
        gp.fail('a dataset needs at least two cameras')
    train, test = [], []
    for i, cam in enumerate(Progress(cameras, gerund='rendering')):
        img, _ = render_image(gt_cloud, cam)
        view = TrainingView(cam, np.clip(img, 0, 1), name='%04d' % i)
        (test if holdout_every and i % holdout_every == 0 else train).append(view)
    return Dataset(train, test, gt_cloud, seed)


def float32_rounded(cloud):
    'Copy of *cloud* with every parameter rounded through float32, as stored in a PLY file.'
    r = cloud.copy()
    for k in r.param_groups:
        setattr(r, k, getattr(r, k).astype(np.float32).astype(gp.floatType))
    return r


def synth_dataset(**kwargs):
    'The dataset the synth command writes, from the current options.'
    spec = SceneSpec.from_options(**kwargs)
    gt = duplicate_with_jitter(make_synthetic_cloud(spec), options.copies, options.jitter, spec.seed)
    gt = float32_rounded(gt)
    cams = orbit_cameras(spec.center, options.orbit_radius, options.n_cameras, options.image_size,
                         options.fov, options.elevations)
    return render_dataset(gt, cams, options.holdout_every, spec.seed)


gp.addGlobals({
    'Dataset': Dataset,
    'SceneSpec': SceneSpec,
})
