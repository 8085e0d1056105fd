'Gaussian scene representation, parameter activations, and spherical-harmonics color.'

import math

import numpy as np

from gsprune import gp, GSPrune, options


gp.option('sh_degree', 1, 'spherical-harmonics degree of new clouds (0-3)')
gp.option('dtype', 'float64', 'precision of the differentiable path (float64|float32)')

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
         -1.0925484305920792, 0.5462742152960396)
SH_C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
         0.3731763325901154, -0.4570457994644658, 1.445305721320277,
         -0.5900435899266435)

MAX_SH_DEGREE = 3


@GSPrune.property
def floatType(gp):
    return np.dtype(options.dtype)


def sigmoid(x):
    with np.errstate(over='ignore'):
        return 1.0 / (1.0 + np.exp(-x))


def logit(p):
    p = np.asarray(p, dtype=float)
    with np.errstate(divide='ignore'):
        return np.log(p) - np.log1p(-p)


def sh_basis_count(degree):
    return (degree+1)**2


def sh_degree_for(basis_count):
    'SH degree implied by *basis_count*; fails unless it is a perfect square of a supported degree.'
    degree = math.isqrt(basis_count) - 1 if basis_count > 0 else -1
    if degree < 0 or (degree+1)**2 != basis_count or degree > MAX_SH_DEGREE:
        gp.fail('malformed SH block')
    return degree


class GaussianCloud:
    'Column-oriented per-Gaussian parameters.  Row i of every array describes Gaussian i.'

    fields = ('positions', 'log_scales', 'rotations', 'opacity_logits', 'sh_coeffs', 'mask_params', 'scores')

    # optimizer parameter groups, in a fixed order
    param_groups = ('positions', 'log_scales', 'rotations', 'opacity_logits', 'sh_coeffs')

    def __init__(self, positions, log_scales, rotations, opacity_logits, sh_coeffs, mask_params=None, scores=None):
        dtype = gp.floatType
        self.positions = np.asarray(positions, dtype=dtype).reshape(-1, 3)
        n = len(self.positions)
        self.log_scales = np.asarray(log_scales, dtype=dtype).reshape(n, 3)
        self.rotations = np.asarray(rotations, dtype=dtype).reshape(n, 4)
        self.opacity_logits = np.asarray(opacity_logits, dtype=dtype).reshape(n)
        sh = np.asarray(sh_coeffs, dtype=dtype)
        if sh.ndim != 3 or sh.shape[0] != n or sh.shape[2] != 3:
            gp.fail('malformed SH block')
        sh_degree_for(sh.shape[1])
        self.sh_coeffs = sh
        self.mask_params = np.ones(n, dtype=dtype) if mask_params is None else np.asarray(mask_params, dtype=dtype).reshape(n)
        self.scores = np.zeros(n, dtype=dtype) if scores is None else np.asarray(scores, dtype=dtype).reshape(n)

    @classmethod
    def empty(cls, sh_degree=0):
        return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 4)), np.zeros(0),
                   np.zeros((0, sh_basis_count(sh_degree), 3)))

    def __len__(self):
        return len(self.positions)

    def __repr__(self):
        return f'<GaussianCloud n={len(self)} sh_degree={self.sh_degree}>'

    @property
    def sh_degree(self):
        return sh_degree_for(self.sh_coeffs.shape[1])

    @property
    def sigmas(self):
        return sigmoid(self.opacity_logits)

    @property
    def scales(self):
        return np.exp(self.log_scales)

    def copy(self):
        return GaussianCloud(**{k: getattr(self, k).copy() for k in self.fields})

    def take(self, idx):
        'Return a new cloud of rows *idx* (an index array or boolean mask), in that order.'
        return GaussianCloud(**{k: getattr(self, k)[idx] for k in self.fields})

    @classmethod
    def concat(cls, *clouds):
        if not clouds:
            return cls.empty()
        return cls(**{k: np.concatenate([getattr(c, k) for c in clouds]) for k in cls.fields})

    def with_sh_degree(self, degree):
        'Return a copy whose SH block is truncated or zero-padded to *degree*.'
        b = sh_basis_count(degree)
        sh = np.zeros((len(self), b, 3), dtype=self.sh_coeffs.dtype)
        keep = min(b, self.sh_coeffs.shape[1])
        sh[:, :keep] = self.sh_coeffs[:, :keep]
        r = self.copy()
        r.sh_coeffs = sh
        return r

    def checkFinite(self):
        'Fail naming the first Gaussian with a non-finite parameter.'
        for k in self.param_groups:
            gp.checkFinite(getattr(self, k), 'parameter ' + k)

    def __eq__(self, other):
        return (isinstance(other, GaussianCloud) and len(self) == len(other) and
                all(np.array_equal(getattr(self, k), getattr(other, k)) for k in self.fields))


class Camera:
    'Pinhole camera: intrinsics in pixels and a 4x4 rigid world-to-camera transform (x right, y down, z forward).'
    def __init__(self, fx, fy, cx, cy, width, height, world_to_camera):
        self.fx, self.fy, self.cx, self.cy = float(fx), float(fy), float(cx), float(cy)
        self.width, self.height = int(width), int(height)
        self.world_to_camera = np.asarray(world_to_camera, dtype=float).reshape(4, 4)

    @property
    def R(self):
        return self.world_to_camera[:3, :3]

    @property
    def t(self):
        return self.world_to_camera[:3, 3]

    @property
    def center(self):
        'Camera position in world coordinates.'
        return -self.R.T @ self.t

    def validate(self):
        R = self.R
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-6):
            gp.fail('camera rotation is not orthonormal')
        if not (self.fx > 0 and self.fy > 0):
            gp.fail('camera focal lengths must be positive')
        if not (self.width > 0 and self.height > 0):
            gp.fail('camera image size must be positive')
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            gp.fail('camera principal point outside image')
        return self

    def __repr__(self):
        return f'<Camera {self.width}x{self.height} f=({self.fx:.2f},{self.fy:.2f})>'

    def __eq__(self, other):
        return (isinstance(other, Camera) and
                (self.fx, self.fy, self.cx, self.cy, self.width, self.height) == (other.fx, other.fy, other.cx, other.cy, other.width, other.height) and
                np.array_equal(self.world_to_camera, other.world_to_camera))


class TrainingView:
    'A camera paired with its ground-truth image (H x W x 3, linear RGB).'
    def __init__(self, camera, image, name=''):
        self.camera = camera
        self.image = np.asarray(image, dtype=gp.floatType)
        self.name = name
        if self.image.shape != (camera.height, camera.width, 3):
            gp.fail(f'view {name}: image shape {self.image.shape} does not match camera {camera.height}x{camera.width}')

    def __repr__(self):
        return f'<TrainingView {self.name}>'


def quat_to_rotmat(q):
    'Rotation matrices (N,3,3) of normalized quaternions *q* (N,4), w first.  Returns (R, normalized q, norms).'
    q = np.asarray(q, dtype=float)
    norms = np.linalg.norm(q, axis=-1)
    if np.any(norms == 0):
        gp.fail('degenerate rotation')
    qn = q / norms[..., None]
    w, x, y, z = qn[..., 0], qn[..., 1], qn[..., 2], qn[..., 3]
    R = np.stack([
        1 - 2*(y*y + z*z), 2*(x*y - w*z),     2*(x*z + w*y),
        2*(x*y + w*z),     1 - 2*(x*x + z*z), 2*(y*z - w*x),
        2*(x*z - w*y),     2*(y*z + w*x),     1 - 2*(x*x + y*y),
    ], axis=-1).reshape(q.shape[:-1] + (3, 3))
    return R, qn, norms


def rotmat_jacobian(qn):
    'dR/dq at normalized quaternions *qn* (N,4): array (N,3,3,4).'
    w, x, y, z = qn[:, 0], qn[:, 1], qn[:, 2], qn[:, 3]
    o = np.zeros_like(w)
    dw = np.stack([o, -2*z, 2*y,   2*z, o, -2*x,   -2*y, 2*x, o], axis=-1)
    dx = np.stack([o, 2*y, 2*z,   2*y, -4*x, -2*w,   2*z, 2*w, -4*x], axis=-1)
    dy = np.stack([-4*y, 2*x, 2*w,   2*x, o, 2*z,   -2*w, 2*z, -4*y], axis=-1)
    dz = np.stack([-4*z, -2*w, 2*x,   2*w, -4*z, 2*y,   2*x, 2*y, o], axis=-1)
    return np.stack([dw, dx, dy, dz], axis=-1).reshape(len(qn), 3, 3, 4)


def covariances(log_scales, rotations, scale_mult=None):
    'Batched covariance_3d.  Returns (Sigma (N,3,3), M = R diag(s), R, qn, qnorms, s).'
    s = np.exp(np.asarray(log_scales, dtype=float))
    if scale_mult is not None:
        s = s * scale_mult[:, None]
    R, qn, norms = quat_to_rotmat(rotations)
    M = R * s[:, None, :]
    return M @ np.swapaxes(M, -1, -2), M, R, qn, norms, s


def covariance_3d(log_scale, rotation):
    'R diag(s)^2 R^T for one Gaussian, with s = exp(log_scale) and R from the normalized quaternion.'
    Sigma = covariances(np.reshape(log_scale, (1, 3)), np.reshape(rotation, (1, 4)))[0]
    return Sigma[0]


def activate_params(cloud, index):
    'Return (sigma, scale, R) of Gaussian *index*.'
    if not 0 <= index < len(cloud):
        gp.fail(f'gaussian index {index} out of range 0..{len(cloud)-1}')
    R = quat_to_rotmat(cloud.rotations[index:index+1])[0][0]
    return float(sigmoid(cloud.opacity_logits[index])), np.exp(cloud.log_scales[index]), R


def sh_basis(dirs, degree):
    'Real SH basis (N, (degree+1)^2) at unit directions *dirs* (N,3).'
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    cols = [np.full_like(x, SH_C0)]
    if degree >= 1:
        cols += [-SH_C1*y, SH_C1*z, -SH_C1*x]
    if degree >= 2:
        xx, yy, zz = x*x, y*y, z*z
        cols += [SH_C2[0]*x*y, SH_C2[1]*y*z, SH_C2[2]*(2*zz - xx - yy),
                 SH_C2[3]*x*z, SH_C2[4]*(xx - yy)]
    if degree >= 3:
        cols += [SH_C3[0]*y*(3*xx - yy), SH_C3[1]*x*y*z, SH_C3[2]*y*(4*zz - xx - yy),
                 SH_C3[3]*z*(2*zz - 3*xx - 3*yy), SH_C3[4]*x*(4*zz - xx - yy),
                 SH_C3[5]*z*(xx - yy), SH_C3[6]*x*(xx - 3*yy)]
    return np.stack(cols, axis=-1)


def sh_basis_grad(dirs, degree):
    'd(sh_basis)/d(dirs): (N, B, 3), treating the direction components as independent.'
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    o = np.zeros_like(x)
    rows = [(o, o, o)]
    if degree >= 1:
        rows += [(o, -SH_C1+o, o), (o, o, SH_C1+o), (-SH_C1+o, o, o)]
    if degree >= 2:
        xx, yy, zz = x*x, y*y, z*z
        rows += [(SH_C2[0]*y, SH_C2[0]*x, o),
                 (o, SH_C2[1]*z, SH_C2[1]*y),
                 (-2*SH_C2[2]*x, -2*SH_C2[2]*y, 4*SH_C2[2]*z),
                 (SH_C2[3]*z, o, SH_C2[3]*x),
                 (2*SH_C2[4]*x, -2*SH_C2[4]*y, o)]
    if degree >= 3:
        rows += [(SH_C3[0]*6*x*y, SH_C3[0]*(3*xx - 3*yy), o),
                 (SH_C3[1]*y*z, SH_C3[1]*x*z, SH_C3[1]*x*y),
                 (-2*SH_C3[2]*x*y, SH_C3[2]*(4*zz - xx - 3*yy), 8*SH_C3[2]*y*z),
                 (-6*SH_C3[3]*x*z, -6*SH_C3[3]*y*z, SH_C3[3]*(6*zz - 3*xx - 3*yy)),
                 (SH_C3[4]*(4*zz - 3*xx - yy), -2*SH_C3[4]*x*y, 8*SH_C3[4]*x*z),
                 (2*SH_C3[5]*x*z, -2*SH_C3[5]*y*z, SH_C3[5]*(xx - yy)),
                 (SH_C3[6]*(3*xx - 3*yy), -6*SH_C3[6]*x*y, o)]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=1)


def sh_to_rgb(sh_coeffs, dirs, degree=None):
    'Batched eval_sh: returns (clamped rgb (N,3), unclamped rgb (N,3), basis (N,B)).'
    b = sh_coeffs.shape[1]
    maxdeg = sh_degree_for(b)
    degree = maxdeg if degree is None else degree
    if degree > maxdeg:
        gp.fail(f'SH degree {degree} exceeds the {maxdeg} implied by {b} coefficients')
    basis = sh_basis(dirs, degree)
    nb = basis.shape[1]
    raw = np.einsum('nb,nbc->nc', basis, sh_coeffs[:, :nb]) + 0.5
    return np.maximum(raw, 0.0), raw, basis


def eval_sh(sh_coeffs, view_dir, degree):
    'Color of one Gaussian seen along unit *view_dir*: sum_b c_b Y_b(view_dir) + 0.5, clamped at 0.'
    sh = np.asarray(sh_coeffs, dtype=float)
    if sh.ndim != 2 or sh.shape[1] != 3:
        gp.fail('malformed SH block')
    rgb, raw, basis = sh_to_rgb(sh[None], np.asarray(view_dir, dtype=float).reshape(1, 3), degree)
    return rgb[0]


def rgb_to_sh_dc(rgb):
    'DC coefficient giving color *rgb* at degree 0.'
    return (np.asarray(rgb, dtype=float) - 0.5) / SH_C0


gp.addGlobals({
    'GaussianCloud': GaussianCloud,
    'Camera': Camera,
    'TrainingView': TrainingView,
})
