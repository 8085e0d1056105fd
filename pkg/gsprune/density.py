'''
Adaptive density control: clone small and split large Gaussians with high screen-space positional
gradient, drop nearly transparent ones, and periodically reset opacities.
'''

import numpy as np

from gsprune import gp, options, AttrDict
from gsprune.core import GaussianCloud, logit, quat_to_rotmat, sigmoid


gp.option('densify_from', 500, 'first iteration of densification')
gp.option('densify_until', 15000, 'densification stops at this iteration')
gp.option('densify_interval', 100, 'iterations between densification steps')
gp.option('grad_threshold', 2e-4, 'mean 2D positional gradient norm above which a Gaussian is densified')
gp.option('min_opacity', 0.005, 'Gaussians with opacity below this are removed at densification')
gp.option('opacity_reset_every', 3000, 'iterations between opacity resets (0 disables)')
gp.option('opacity_reset_value', 0.01, 'opacity ceiling after a reset')
gp.option('percent_dense', 0.01, 'fraction of the scene extent separating clone from split')
gp.option('split_children', 2, 'number of Gaussians a split produces')
gp.option('split_scale_div', 1.6, 'children scales are the parent scale divided by this')


class DensityStats:
    'Running sums of the 2D positional gradient norm and of view counts per Gaussian.'
    def __init__(self, n):
        self.grad_accum = np.zeros(n)
        self.denom = np.zeros(n)

    def __len__(self):
        return len(self.grad_accum)

    def add(self, grads):
        'Accumulate one view from a GradientBuffer; only Gaussians visible in the view count.'
        vis = grads.visible
        self.grad_accum[vis] += np.linalg.norm(grads.means2d[vis], axis=-1)
        self.denom[vis] += 1

    def mean_grad(self):
        with np.errstate(invalid='ignore', divide='ignore'):
            g = self.grad_accum / self.denom
        return np.nan_to_num(g, nan=0.0)

    def compact(self, idx):
        self.grad_accum = self.grad_accum[idx]
        self.denom = self.denom[idx]

    def grow(self, src_idx):
        n = len(src_idx)
        self.grad_accum = np.concatenate([self.grad_accum, np.zeros(n)])
        self.denom = np.concatenate([self.denom, np.zeros(n)])

    def copy(self):
        r = DensityStats(0)
        r.grad_accum, r.denom = self.grad_accum.copy(), self.denom.copy()
        return r


def _append(cloud, extra, *states):
    for st in states:
        if st is not None:
            st.grow(np.arange(len(extra)))
    return GaussianCloud.concat(cloud, extra)


def _split_children(cloud, idx, rng, nchildren, div):
    s = cloud.scales[idx].astype(float)
    R = quat_to_rotmat(cloud.rotations[idx])[0]
    rep = np.repeat(idx, nchildren)
    children = cloud.take(rep)
    z = rng.standard_normal((len(rep), 3)) * np.repeat(s, nchildren, axis=0)
    offsets = np.einsum('kij,kj->ki', np.repeat(R, nchildren, axis=0), z)
    children.positions = (children.positions + offsets).astype(children.positions.dtype)
    children.log_scales = np.log(np.repeat(s, nchildren, axis=0) / div).astype(children.log_scales.dtype)
    return children


def densify_and_prune(cloud, stats, extent, rng, adam=None, config=None):
    '''One densification step.  Returns (new cloud, new DensityStats, counts).

    Gaussians whose mean 2D gradient exceeds grad_threshold are cloned when their largest scale is at most
    percent_dense*extent, otherwise split into split_children samples with scales / split_scale_div.
    Gaussians with opacity below min_opacity are then removed.  *adam* rows follow the cloud.'''
    cfg = config or options
    n0 = len(cloud)
    grads = stats.mean_grad()
    big = cloud.scales.max(axis=1) > cfg.percent_dense * extent if n0 else np.zeros(0, dtype=bool)
    hot = grads > cfg.grad_threshold

    clone_idx = np.nonzero(hot & ~big)[0]
    split_idx = np.nonzero(hot & big)[0]

    cloud = _append(cloud, cloud.take(clone_idx), adam)
    children = _split_children(cloud, split_idx, rng, int(cfg.split_children), cfg.split_scale_div)
    cloud = _append(cloud, children, adam)

    keep = np.ones(len(cloud), dtype=bool)
    keep[split_idx] = False
    low = sigmoid(cloud.opacity_logits.astype(float)) < cfg.min_opacity
    removed = int((keep & low).sum())
    keep &= ~low
    if not keep.any():
        gp.fail('densification removed every gaussian')

    idx = np.nonzero(keep)[0]
    if adam is not None:
        adam.compact(idx)
    cloud = cloud.take(idx)
    counts = AttrDict(cloned=len(clone_idx), split=len(split_idx), removed=removed, n=len(cloud))
    return cloud, DensityStats(len(cloud)), counts


def reset_opacity(cloud, adam=None, value=None):
    'Clamp every opacity to at most *value* and zero the opacity moments.'
    value = options.opacity_reset_value if value is None else value
    ceiling = float(logit(value))
    np.minimum(cloud.opacity_logits, ceiling, out=cloud.opacity_logits)
    if adam is not None and 'opacity_logits' in adam:
        adam.reset_rows('opacity_logits')
    return cloud


def test_reset_opacity(gp):
    c = GaussianCloud(np.zeros((2, 3)), np.zeros((2, 3)), [[1, 0, 0, 0]]*2, [5.0, -9.0], np.zeros((2, 1, 3)))
    reset_opacity(c)
    assert np.allclose(sigmoid(c.opacity_logits), [0.01, sigmoid(-9.0)])
