'''
Splat rasterizer: projection of 3D Gaussians, front-to-back compositing, and the analytic backward pass.

Every view is drawn with one global depth sort.  The image is cut into tiles only to
decide which splats can touch which pixels; the culling radius is wide enough that a
culled splat always has alpha < alpha_min, so culling never changes the image.
'''

import hashlib

import numpy as np

from gsprune import gp, GSPrune, options, namedlist
from gsprune.core import covariances, rotmat_jacobian, sh_basis_grad, sh_to_rgb, sigmoid


gp.option('dilation', 0.3, 'added to the diagonal of every 2D covariance (pixels^2)')
gp.option('alpha_min', 1/255, 'splats with alpha below this are skipped')
gp.option('alpha_max', 0.99, 'alpha is clamped to this')
gp.option('t_min', 1e-4, 'ray stops when transmittance would drop below this')
gp.option('near_clip', 0.01, 'splats at camera depth <= this are skipped')
gp.option('tile_size', 16, 'pixel tile edge used for culling and parallel work')
gp.option('background', 0.0, 'gray level of the background color')


ProjectedGaussian = namedlist('ProjectedGaussian', 'mean2d cov2d inv_cov2d depth rgb sigma_eff source_index'.split())
RayContribution = namedlist('RayContribution', 'source_index alpha transmittance weight'.split())
ViewContributions = namedlist('ViewContributions', 'max sum'.split())


def _background(background):
    if background is None:
        background = options.background
    return np.broadcast_to(np.asarray(background, dtype=float), (3,))


class Projection:
    'Projected splats of one view, sorted by depth (ties by index), with what the backward pass needs.'

    def __init__(self, camera, n, sh_degree):
        self.camera = camera
        self.n = n                  # size of the source cloud
        self.sh_degree = sh_degree
        self.index = np.zeros(0, dtype=np.int64)

    def __len__(self):
        return len(self.index)

    def _select(self, keep):
        for k, v in list(self.__dict__.items()):
            if isinstance(v, np.ndarray) and v.ndim and len(v) == len(keep):
                setattr(self, k, v[keep])

    def contributor(self, j):
        'The j-th sorted splat as a ProjectedGaussian.'
        A, B, C = self.conic[j]
        return ProjectedGaussian(mean2d=self.mean2d[j].copy(), cov2d=self.cov2d[j].copy(),
                                 inv_cov2d=np.array([[A, B], [B, C]]), depth=float(self.depth[j]),
                                 rgb=self.rgb[j].copy(), sigma_eff=float(self.sigma_eff[j]),
                                 source_index=int(self.index[j]))


def project(cloud, camera, gate=None, gate_scales=False, cull=True):
    '''Project every Gaussian of *cloud* into *camera*.  Returns a Projection holding only splats that can
    reach the image, sorted front to back.  *gate* multiplies opacity (and scales, if *gate_scales*).
    With cull=False every splat in front of the near plane is kept.'''
    n = len(cloud)
    proj = Projection(camera, n, cloud.sh_degree)
    cloud.checkFinite()
    if gate is not None:
        gate = np.asarray(gate, dtype=float)
        if gate.shape != (n,):
            gp.fail(f'mask gate has shape {gate.shape}, expected ({n},)')
        gp.checkFinite(gate, 'mask gate')

    Rw, tw = camera.R, camera.t
    fx, fy = camera.fx, camera.fy

    tcam = cloud.positions @ Rw.T + tw
    idx = np.nonzero(tcam[:, 2] > options.near_clip)[0]
    if gate is not None:
        idx = idx[gate[idx] > 0]

    tcam = tcam[idx]
    tx, ty, tz = tcam[:, 0], tcam[:, 1], tcam[:, 2]

    sigma = sigmoid(cloud.opacity_logits[idx].astype(float))
    g = gate[idx] if gate is not None else None
    sigma_eff = sigma * g if g is not None else sigma

    Sigma, M, R, qn, qnorm, s = covariances(cloud.log_scales[idx], cloud.rotations[idx],
                                            g if (g is not None and gate_scales) else None)

    J = np.zeros((len(idx), 2, 3))
    J[:, 0, 0] = fx / tz
    J[:, 0, 2] = -fx * tx / (tz*tz)
    J[:, 1, 1] = fy / tz
    J[:, 1, 2] = -fy * ty / (tz*tz)
    T = J @ Rw

    cov2d = T @ Sigma @ np.swapaxes(T, -1, -2)
    cov2d[:, 0, 0] += options.dilation
    cov2d[:, 1, 1] += options.dilation
    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    det = a*c - b*b
    conic = np.stack([c/det, -b/det, a/det], axis=-1)

    mean2d = np.stack([fx*tx/tz + camera.cx, fy*ty/tz + camera.cy], axis=-1)

    # culling radius: 3 sigma, or farther while sigma_eff * G can still reach alpha_min
    amin = options.alpha_min
    lam = 0.5*(a + c) + np.sqrt(np.maximum(0.25*(a - c)**2 + b*b, 0))
    with np.errstate(divide='ignore', invalid='ignore'):
        reach = np.sqrt(np.maximum(2*np.log(sigma_eff/amin), 9.0))
    radius = np.ceil(reach * np.sqrt(lam))
    xmin = np.ceil(mean2d[:, 0] - radius)
    xmax = np.floor(mean2d[:, 0] + radius)
    ymin = np.ceil(mean2d[:, 1] - radius)
    ymax = np.floor(mean2d[:, 1] + radius)

    visible = det > 0
    if cull:
        visible &= ((sigma_eff >= amin) &
                    (xmax >= 0) & (xmin <= camera.width-1) &
                    (ymax >= 0) & (ymin <= camera.height-1))

    dirs = cloud.positions[idx] - camera.center
    vnorm = np.linalg.norm(dirs, axis=-1)
    dirs = dirs / vnorm[:, None]
    rgb, raw_rgb, basis = sh_to_rgb(cloud.sh_coeffs[idx].astype(float), dirs)

    proj.__dict__.update(
        index=idx, tcam=tcam, depth=tz.copy(), J=J, T=T, Sigma=Sigma, M=M, R=R, qn=qn, qnorm=qnorm, s=s,
        sigma=sigma, gate=g, sigma_eff=sigma_eff, cov2d=cov2d, conic=conic, mean2d=mean2d,
        radius=radius, bbox=np.stack([xmin, xmax, ymin, ymax], axis=-1),
        dirs=dirs, vnorm=vnorm, rgb=rgb, raw_rgb=raw_rgb, basis=basis,
    )
    proj._select(visible)

    order = np.lexsort((proj.index, proj.depth))
    proj._select(order)
    proj.gate_scales = bool(gate_scales and gate is not None)
    return proj


def project_gaussian(cloud, index, camera):
    'Project Gaussian *index* of *cloud* into *camera*; None if it is clipped or misses the image.'
    proj = project(cloud.take([index]), camera)
    if len(proj) == 0:
        return None
    pg = proj.contributor(0)
    pg.source_index = index
    return pg


def _ray_weights(sorted_contributors, pixel, early_exit=True):
    '''Alpha and transmittance in front of each contributor of one ray, which contributors count,
    and the final transmittance.  Skipped and dropped contributors get alpha 0.'''
    k = len(sorted_contributors)
    if not k:
        return np.zeros(0), np.zeros(0), np.zeros(0, dtype=bool), 1.0
    mean = np.array([pg.mean2d for pg in sorted_contributors], dtype=float).reshape(k, 2)
    inv = np.array([pg.inv_cov2d for pg in sorted_contributors], dtype=float).reshape(k, 2, 2)
    sig = np.array([pg.sigma_eff for pg in sorted_contributors], dtype=float)
    d = np.asarray(pixel, dtype=float)[None, :] - mean
    alpha = np.minimum(sig * np.exp(-0.5*np.einsum('ki,kij,kj->k', d, inv, d)), options.alpha_max)
    live = alpha >= options.alpha_min
    a = np.where(live, alpha, 0.0)
    if early_exit:
        live &= np.cumprod(1 - a) >= options.t_min
        a = np.where(live, a, 0.0)
    Tcum = np.cumprod(1 - a)
    return a, np.concatenate([[1.0], Tcum[:-1]]), live, float(Tcum[-1])


def trace_ray(sorted_contributors, pixel, early_exit=True):
    '''Composite one ray front to back.  Returns (list of RayContribution, final transmittance).
    With *early_exit*, the ray stops before the contributor that would take T below t_min.'''
    a, T, live, Tf = _ray_weights(sorted_contributors, pixel, early_exit)
    return [RayContribution(source_index=sorted_contributors[j].source_index, alpha=float(a[j]),
                            transmittance=float(T[j]), weight=float(a[j]*T[j]))
                for j in np.nonzero(live)[0]], Tf


def composite_pixel(sorted_contributors, pixel, background=None):
    'Front-to-back color of *pixel* over contributors sorted by ascending depth.'
    bg = _background(background)
    a, T, _, Tf = _ray_weights(sorted_contributors, pixel)
    rgb = np.array([pg.rgb for pg in sorted_contributors], dtype=float).reshape(-1, 3)
    return (a*T) @ rgb + Tf*bg


def _tiles(camera):
    ts = max(1, options.tile_size)
    return [(x0, min(x0+ts, camera.width), y0, min(y0+ts, camera.height))
                for y0 in range(0, camera.height, ts)
                    for x0 in range(0, camera.width, ts)]


def _tile_members(proj, tile):
    x0, x1, y0, y1 = tile
    bb = proj.bbox
    return np.nonzero((bb[:, 0] <= x1-1) & (bb[:, 1] >= x0) & (bb[:, 2] <= y1-1) & (bb[:, 3] >= y0))[0]


class _TileState:
    'Per-tile compositing arrays, (pixels P) x (members K) in depth order.'
    def __init__(self, proj, tile):
        x0, x1, y0, y1 = tile
        self.tile = tile
        ys, xs = np.mgrid[y0:y1, x0:x1]
        self.px = xs.ravel().astype(float)
        self.py = ys.ravel().astype(float)
        self.mem = mem = _tile_members(proj, tile)

        self.dx = self.px[:, None] - proj.mean2d[mem, 0][None, :]
        self.dy = self.py[:, None] - proj.mean2d[mem, 1][None, :]
        A, B, C = proj.conic[mem, 0], proj.conic[mem, 1], proj.conic[mem, 2]
        power = -0.5*(A*self.dx*self.dx + C*self.dy*self.dy) - B*self.dx*self.dy
        self.G = np.exp(power)
        self.alpha_raw = proj.sigma_eff[mem][None, :] * self.G
        alpha = np.minimum(self.alpha_raw, options.alpha_max)
        valid = alpha >= options.alpha_min
        a = np.where(valid, alpha, 0.0)

        # contributors after the one that would take T below t_min are dropped; T is non-increasing so alive is a prefix
        alive = np.cumprod(1 - a, axis=1) >= options.t_min
        self.alpha = a * alive
        self.live = valid & alive

        Tcum = np.cumprod(1 - self.alpha, axis=1)
        self.T = np.concatenate([np.ones((len(self.px), 1)), Tcum[:, :-1]], axis=1)
        self.T_final = Tcum[:, -1] if len(mem) else np.ones(len(self.px))
        self.weights = self.alpha * self.T


def _render_tile(proj, tile, bg):
    st = _TileState(proj, tile)
    color = st.weights @ proj.rgb[st.mem] + st.T_final[:, None] * bg[None, :]
    return tile, color, st.T_final


class RenderAux:
    'What render_backward needs from the forward pass: the projection and the final transmittance per pixel.'
    def __init__(self, key, proj, T_final, background):
        self.key = key
        self.proj = proj
        self.T_final = T_final
        self.background = background


def _state_key(cloud, camera, gate, gate_scales):
    h = hashlib.blake2b(digest_size=16)
    for k in cloud.param_groups:
        h.update(np.ascontiguousarray(getattr(cloud, k)).tobytes())
    h.update(np.ascontiguousarray(camera.world_to_camera).tobytes())
    h.update(repr((camera.fx, camera.fy, camera.cx, camera.cy, camera.width, camera.height, bool(gate_scales))).encode())
    if gate is not None:
        h.update(np.ascontiguousarray(gate, dtype=float).tobytes())
    return h.hexdigest()


def render_image(cloud, camera, mask_gate=None, gate_scales=False, background=None):
    '''Render *cloud* from *camera*.  Returns (image H x W x 3, RenderAux).
    With *mask_gate*, the effective opacity of Gaussian i is sigma_i * gate_i.'''
    bg = _background(background)
    proj = project(cloud, camera, mask_gate, gate_scales)

    image = np.empty((camera.height, camera.width, 3))
    T_final = np.empty((camera.height, camera.width))
    for (x0, x1, y0, y1), color, Tf in gp.parallel_map(lambda tile: _render_tile(proj, tile, bg), _tiles(camera)):
        image[y0:y1, x0:x1] = color.reshape(y1-y0, x1-x0, 3)
        T_final[y0:y1, x0:x1] = Tf.reshape(y1-y0, x1-x0)

    return image, RenderAux(_state_key(cloud, camera, mask_gate, gate_scales), proj, T_final, bg)


class GradientBuffer:
    'Gradient accumulators shaped like the GaussianCloud parameter arrays, plus per-view screen-space statistics.'

    groups = ('positions', 'log_scales', 'rotations', 'opacity_logits', 'sh_coeffs', 'mask_params')

    def __init__(self, cloud):
        n = len(cloud)
        self.positions = np.zeros((n, 3))
        self.log_scales = np.zeros((n, 3))
        self.rotations = np.zeros((n, 4))
        self.opacity_logits = np.zeros(n)
        self.sh_coeffs = np.zeros(cloud.sh_coeffs.shape)
        self.mask_params = np.zeros(n)
        self.means2d = np.zeros((n, 2))   # dLoss/dmean2d in normalized device units
        self.visible = np.zeros(n, dtype=bool)

    def __len__(self):
        return len(self.positions)

    def add(self, other, weight=1.0):
        for k in self.groups + ('means2d',):
            getattr(self, k)[...] += weight * getattr(other, k)
        self.visible |= other.visible
        return self

    def checkFinite(self):
        for k in self.groups:
            gp.checkFinite(getattr(self, k), 'gradient ' + k)


def _backward_tile(proj, tile, up, T_final, bg):
    st = _TileState(proj, tile)
    mem = st.mem
    x0, x1, y0, y1 = tile
    up = up[y0:y1, x0:x1].reshape(-1, 3)
    Tf = T_final[y0:y1, x0:x1].ravel()
    rgb = proj.rgb[mem]

    # up . rgb per contributor, and up . (color behind contributor j), background included
    ur = up @ rgb.T
    wu = st.weights * ur
    behind = (wu.sum(axis=1) + Tf * (up @ bg))[:, None] - np.cumsum(wu, axis=1)

    dalpha = ur * st.T - behind / (1 - st.alpha)
    dalpha_raw = np.where(st.live & (st.alpha_raw < options.alpha_max), dalpha, 0.0)

    dsig = (dalpha_raw * st.G).sum(axis=0)
    dpower = dalpha_raw * st.alpha_raw
    A, B, C = proj.conic[mem, 0], proj.conic[mem, 1], proj.conic[mem, 2]
    px, py = dpower * st.dx, dpower * st.dy
    sx, sy = px.sum(axis=0), py.sum(axis=0)
    dconic = np.stack([-0.5*(px*st.dx).sum(axis=0), -(px*st.dy).sum(axis=0), -0.5*(py*st.dy).sum(axis=0)], axis=-1)
    dmean = np.stack([A*sx + B*sy, B*sx + C*sy], axis=-1)
    drgb = st.weights.T @ up
    return mem, dsig, dmean, dconic, drgb


def _backward_params(cloud, camera, proj, dsig, dmean, dconic, drgb):
    'Chain screen-space gradients of the visible splats back to the cloud parameters.'
    grads = GradientBuffer(cloud)
    if len(proj) == 0:
        return grads
    idx = proj.index
    fx, fy = camera.fx, camera.fy
    Rw = camera.R

    # color: SH coefficients and view direction
    draw = drgb * (proj.raw_rgb >= 0)
    nb = proj.basis.shape[1]
    dsh = np.zeros((len(idx),) + cloud.sh_coeffs.shape[1:])
    dsh[:, :nb] = proj.basis[:, :, None] * draw[:, None, :]
    wb = np.einsum('kbc,kc->kb', cloud.sh_coeffs[idx, :nb].astype(float), draw)
    ddir = np.einsum('kb,kbd->kd', wb, sh_basis_grad(proj.dirs, proj.sh_degree))
    dpos = (ddir - proj.dirs * np.sum(proj.dirs*ddir, axis=-1, keepdims=True)) / proj.vnorm[:, None]

    # conic -> 2D covariance -> 3D covariance and Jacobian
    A, B, C = proj.conic[:, 0], proj.conic[:, 1], proj.conic[:, 2]
    K = np.stack([np.stack([A, B], -1), np.stack([B, C], -1)], -2)
    GK = np.stack([np.stack([dconic[:, 0], 0.5*dconic[:, 1]], -1),
                   np.stack([0.5*dconic[:, 1], dconic[:, 2]], -1)], -2)
    G2 = -K @ GK @ K
    T = proj.T
    dSigma = np.swapaxes(T, -1, -2) @ G2 @ T
    dT = 2 * G2 @ T @ proj.Sigma
    dJ = dT @ Rw.T

    tx, ty, tz = proj.tcam[:, 0], proj.tcam[:, 1], proj.tcam[:, 2]
    du, dv = dmean[:, 0], dmean[:, 1]
    tz2, tz3 = tz*tz, tz*tz*tz
    dtx = dJ[:, 0, 2]*(-fx/tz2) + du*fx/tz
    dty = dJ[:, 1, 2]*(-fy/tz2) + dv*fy/tz
    dtz = (dJ[:, 0, 0]*(-fx/tz2) + dJ[:, 0, 2]*(2*fx*tx/tz3) +
           dJ[:, 1, 1]*(-fy/tz2) + dJ[:, 1, 2]*(2*fy*ty/tz3) +
           du*(-fx*tx/tz2) + dv*(-fy*ty/tz2))
    dpos += np.stack([dtx, dty, dtz], axis=-1) @ Rw

    # Sigma = M M^T, M = R diag(s)
    dM = 2 * dSigma @ proj.M
    ds = np.einsum('kij,kij->kj', proj.R, dM)
    dR = dM * proj.s[:, None, :]
    dqn = np.einsum('kij,kijq->kq', dR, rotmat_jacobian(proj.qn))
    dq = (dqn - proj.qn * np.sum(proj.qn*dqn, axis=-1, keepdims=True)) / proj.qnorm[:, None]

    sigma, g = proj.sigma, proj.gate
    dsigma = dsig * g if g is not None else dsig
    raw_s = np.exp(cloud.log_scales[idx].astype(float))

    grads.positions[idx] = dpos
    grads.log_scales[idx] = ds * proj.s
    grads.rotations[idx] = dq
    grads.opacity_logits[idx] = dsigma * sigma * (1 - sigma)
    grads.sh_coeffs[idx] = dsh
    if g is not None:
        dgate = dsig * sigma
        if proj.gate_scales:
            dgate = dgate + np.sum(ds * raw_s, axis=-1)
        grads.mask_params[idx] = dgate
    grads.means2d[idx] = dmean * np.array([0.5*camera.width, 0.5*camera.height])
    grads.visible[idx] = True
    return grads


def render_backward(cloud, camera, upstream, mask_gate=None, aux=None, gate_scales=False, background=None):
    '''Gradients of a loss wrt every parameter of *cloud*, given *upstream* = dLoss/dImage.
    *aux* is the RenderAux of the paired render_image call; without it the forward pass is re-run.
    When gated, GradientBuffer.mask_params holds dLoss/dgate.'''
    upstream = np.asarray(upstream, dtype=float)
    if upstream.shape != (camera.height, camera.width, 3):
        gp.fail(f'upstream gradient shape {upstream.shape} does not match image {camera.height}x{camera.width}x3')

    if aux is None:
        _, aux = render_image(cloud, camera, mask_gate, gate_scales, background)
    elif aux.key != _state_key(cloud, camera, mask_gate, gate_scales):
        gp.fail('render_backward state does not match the forward pass')

    proj = aux.proj
    k = len(proj)
    dsig, dmean, dconic, drgb = np.zeros(k), np.zeros((k, 2)), np.zeros((k, 3)), np.zeros((k, 3))
    if k:
        parts = gp.parallel_map(lambda tile: _backward_tile(proj, tile, upstream, aux.T_final, aux.background), _tiles(camera))
        for mem, s, m, c, r in parts:   # merged in tile order
            np.add.at(dsig, mem, s)
            np.add.at(dmean, mem, m)
            np.add.at(dconic, mem, c)
            np.add.at(drgb, mem, r)

    grads = _backward_params(cloud, camera, proj, dsig, dmean, dconic, drgb)
    grads.checkFinite()
    return grads


def _contrib_tile(proj, tile):
    st = _TileState(proj, tile)
    if len(st.mem) == 0:
        return st.mem, np.zeros(0), np.zeros(0)
    return st.mem, st.weights.max(axis=0), st.weights.sum(axis=0)


def render_with_contributions(cloud, camera, mask_gate=None, gate_scales=False):
    'Per-Gaussian maximum and sum of alpha*T over every ray of this view.  Returns ViewContributions(max, sum), each of length N.'
    n = len(cloud)
    vmax, vsum = np.zeros(n), np.zeros(n)
    proj = project(cloud, camera, mask_gate, gate_scales)
    if len(proj):
        for mem, m, s in gp.parallel_map(lambda tile: _contrib_tile(proj, tile), _tiles(camera)):
            np.maximum.at(vmax, proj.index[mem], m)
            np.add.at(vsum, proj.index[mem], s)
    return ViewContributions(max=vmax, sum=vsum)


def ray_contributions(cloud, camera, pixel, mask_gate=None, early_exit=True):
    'RayContribution list and final transmittance for the ray through *pixel*.'
    proj = project(cloud, camera, mask_gate)
    return trace_ray([proj.contributor(j) for j in range(len(proj))], pixel, early_exit=early_exit)


gp.addGlobals({
    'render_image': render_image,
    'render_backward': render_backward,
    'GradientBuffer': GradientBuffer,
})
