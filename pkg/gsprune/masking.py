'''
Trainable pruning masks.

Gumbel-Sigmoid gates sigmoid((log x + g0 - g1)/tau), with x = m*S (score-modulated) or x = m (direct),
multiply each Gaussian's opacity during the mask window.  The STE baseline uses a hard indicator
forward and a sigmoid surrogate backward.  The hard-threshold baseline keeps Gaussians by score rank.
'''

import math

import numpy as np

from gsprune import gp, options
from gsprune.core import sigmoid


gp.option('mask', 'gumbel', 'trainable mask during the mask window (gumbel|ste|off)')
gp.option('mask_target', 'score', 'what the mask gates (score|opacity|opacity-scale)')
gp.option('tau', 0.5, 'Gumbel-Sigmoid temperature')
gp.option('ste_epsilon', 0.01, 'STE mask keeps a Gaussian while sigmoid(x) > this')
gp.option('gate_prune', 0.5, 'prune Gaussians whose deterministic gate is below this')
gp.option('m_floor', 1e-6, 'lower clamp of Gumbel mask values after each step')
gp.option('mask_init', 1.0, 'initial mask value')

MASK_KINDS = ('gumbel', 'ste', 'off')

MASK_TARGETS = {
    'score': 'score-modulated',
    'opacity': 'direct-opacity',
    'opacity-scale': 'direct-opacity-scale',
}

U_CLAMP = 1e-12


def mask_mode(target):
    if target in MASK_TARGETS.values():
        return target
    if target not in MASK_TARGETS:
        gp.fail(f'unknown mask target "{target}"; choose from {", ".join(MASK_TARGETS)}')
    return MASK_TARGETS[target]


class MaskState:
    'Per-Gaussian mask values m and the settings that turn them into gates.'
    def __init__(self, n, kind='gumbel', mode='score-modulated', tau=None, seed=0, epsilon=None, m=None):
        if kind not in ('gumbel', 'ste'):
            gp.fail(f'unknown mask kind "{kind}"')
        self.kind = kind
        self.mode = mask_mode(mode)
        self.tau = float(options.tau if tau is None else tau)
        if self.tau <= 0:
            gp.fail('tau must be > 0')
        self.epsilon = float(options.ste_epsilon if epsilon is None else epsilon)
        self.seed = int(seed)
        self.m = np.full(n, float(options.mask_init)) if m is None else np.asarray(m, dtype=float).copy()
        self.active = True

    def __len__(self):
        return len(self.m)

    def __repr__(self):
        return f'<MaskState {self.kind}/{self.mode} n={len(self)} tau={self.tau}>'

    @property
    def gates_scales(self):
        return self.mode == 'direct-opacity-scale'

    @property
    def needs_scores(self):
        return self.mode == 'score-modulated'

    def take(self, idx):
        r = MaskState(0, self.kind, self.mode, self.tau, self.seed, self.epsilon, m=self.m[idx])
        r.active = self.active
        return r

    def clamp(self, floor=None):
        'Keep Gumbel mask values >= m_floor so log(m*S) stays finite.'
        if self.kind == 'gumbel':
            np.maximum(self.m, options.m_floor if floor is None else floor, out=self.m)

    def rng(self, iteration, stream=0):
        'Noise source for one forward pass; draws depend only on (seed, iteration, stream).'
        return np.random.default_rng([self.seed, int(iteration), int(stream)])


def gumbel_from_uniform(u):
    u = np.clip(u, U_CLAMP, 1 - U_CLAMP)
    return -np.log(-np.log(u))


def sample_gumbel(rng, size=None):
    'Standard Gumbel draws, -log(-log(u)) with u uniform on (0,1).'
    return gumbel_from_uniform(rng.random(size))


def gumbel_sigmoid(x, tau, g0=0.0, g1=0.0):
    '''Return (value, d value/dx) of sigmoid((log x + g0 - g1)/tau), elementwise.
    At x = 0 both value and gradient are 0.'''
    if tau <= 0:
        gp.fail('tau must be > 0')
    x = np.asarray(x, dtype=float)
    pos = x > 0
    with np.errstate(divide='ignore'):
        z = (np.log(np.where(pos, x, 1.0)) + g0 - g1) / tau
    v = np.where(pos, sigmoid(z), 0.0)
    dv = np.where(pos, v*(1 - v) / (tau*np.where(pos, x, 1.0)), 0.0)
    if v.ndim == 0:
        return float(v), float(dv)
    return v, dv


def gate_open_threshold(tau, gate_prune):
    'Smallest gate argument x whose deterministic gate sigmoid(log(x)/tau) reaches *gate_prune*.'
    if not 0 < gate_prune < 1:
        gp.fail('gate_prune must lie in (0, 1)')
    return math.exp(tau * math.log(gate_prune / (1 - gate_prune)))


def gate_argument(mask, scores=None):
    'Return (x, dx/dm): m*S in score-modulated mode, m otherwise.'
    if mask.needs_scores:
        if scores is None:
            gp.fail('score-modulated mask needs importance scores')
        scores = np.asarray(scores, dtype=float)
        if len(scores) != len(mask):
            gp.fail(f'{len(scores)} scores for {len(mask)} mask values')
        return mask.m * scores, scores
    return mask.m.copy(), np.ones(len(mask))


def gate_forward(mask, scores=None, deterministic=False, iteration=0):
    '''Return (gate, dgate/dm) for every Gaussian.

    Gumbel: stochastic gates draw fresh noise from (seed, iteration); deterministic gates are
    sigmoid(log(x)/tau).  STE: the gate is 1[sigmoid(x) > epsilon] and the surrogate gradient
    is sigmoid'(x) dx/dm.'''
    x, dxdm = gate_argument(mask, scores)
    if mask.kind == 'ste':
        f = sigmoid(x)
        return (f > mask.epsilon).astype(float), f*(1 - f)*dxdm

    if deterministic:
        g0 = g1 = 0.0
    else:
        rng = mask.rng(iteration)
        g0 = sample_gumbel(rng, len(mask))
        g1 = sample_gumbel(rng, len(mask))
    v, dvdx = gumbel_sigmoid(x, mask.tau, g0, g1)
    return np.atleast_1d(v), np.atleast_1d(dvdx) * dxdm


def gate_values(mask, scores=None, deterministic=False, iteration=0):
    'Per-Gaussian gate in [0,1].'
    return gate_forward(mask, scores, deterministic, iteration)[0]


def gate_backward(mask, scores, dloss_dgate, iteration=0, deterministic=False):
    'dLoss/dm from dLoss/dgate, through the same noise as the forward pass.'
    return np.asarray(dloss_dgate, dtype=float) * gate_forward(mask, scores, deterministic, iteration)[1]


def ste_mask(m, epsilon):
    'Return (1 if sigmoid(m) > epsilon else 0, sigmoid\'(m)).'
    f = float(sigmoid(float(m)))
    return (1.0 if f > epsilon else 0.0), f*(1 - f)


def hard_threshold_keep(scores, t_prune):
    'Keep-mask: S >= t_prune.'
    return np.asarray(scores) >= t_prune


def _prune_count(ratio, n):
    if not 0 <= ratio < 1:
        gp.fail(f'pruning ratio {ratio} outside [0, 1)')
    return min(n, math.ceil(ratio*n - 1e-9))


def threshold_for_ratio(scores, ratio):
    '''Threshold t such that hard_threshold_keep(scores, t) prunes the ceil(ratio*N) smallest scores:
    the smallest score that is kept.'''
    scores = np.asarray(scores, dtype=float)
    if len(scores) < 1:
        gp.fail('no scores to threshold')
    k = _prune_count(ratio, len(scores))
    ordered = np.sort(scores, kind='stable')
    if k >= len(ordered):
        return float(np.nextafter(ordered[-1], np.inf))
    return float(ordered[k])


def ratio_keep_mask(scores, ratio):
    'Keep-mask pruning exactly ceil(ratio*N) Gaussians, smallest scores first, lower index first on ties.'
    scores = np.asarray(scores, dtype=float)
    k = _prune_count(ratio, len(scores))
    keep = np.ones(len(scores), dtype=bool)
    keep[np.argsort(scores, kind='stable')[:k]] = False
    return keep


def prune_keep_mask(mask, scores=None, gate_prune=None):
    'Keep-mask for the one-time prune: Gumbel keeps deterministic gate >= gate_prune, STE keeps gate 1.'
    gate = gate_values(mask, scores, deterministic=True)
    if mask.kind == 'ste':
        return gate > 0
    return gate >= (options.gate_prune if gate_prune is None else gate_prune)


def prune_rows(cloud, keep, *states):
    '''Return cloud restricted to *keep*; every per-Gaussian state in *states* (AdamState, DensityStats, ...)
    is compacted in place.  Fails if nothing is kept.'''
    keep = np.asarray(keep, dtype=bool)
    if len(keep) and not keep.any():
        gp.fail('empty model after prune')
    idx = np.nonzero(keep)[0]
    for st in states:
        if st is not None:
            st.compact(idx)
    return cloud.take(idx)


def prune_cloud(cloud, mask, scores=None, adam=None):
    'One-time prune of Gaussians whose gate is off.  Returns (pruned cloud, pruned_count).'
    keep = prune_keep_mask(mask, scores)
    pruned = prune_rows(cloud, keep, adam)
    pruned.mask_params = mask.m[keep].copy()
    return pruned, int(len(keep) - keep.sum())


def mask_l1(m):
    'Return (mean |m|, gradient).'
    m = np.asarray(m, dtype=float)
    if len(m) < 1:
        gp.fail('mask regularizer of an empty mask')
    return float(np.abs(m).mean()), np.sign(m) / len(m)


def mask_sigmoid_l1(m):
    'Return (mean sigmoid(m), gradient); the STE regularizer.'
    m = np.asarray(m, dtype=float)
    if len(m) < 1:
        gp.fail('mask regularizer of an empty mask')
    f = sigmoid(m)
    return float(f.mean()), f*(1 - f) / len(m)


def mask_regularizer(mask):
    return mask_sigmoid_l1(mask.m) if mask.kind == 'ste' else mask_l1(mask.m)


def gate_bimodality(gates, lo=0.05, hi=0.95):
    'Fraction of *gates* strictly inside (lo, hi).'
    gates = np.asarray(gates, dtype=float)
    if len(gates) == 0:
        return 0.0
    return float(np.mean((gates > lo) & (gates < hi)))


def gate_table(mask, scores=None, iteration=0):
    '''Columns for gates.csv: index, m, score, deterministic gate, one stochastic sample,
    and plain sigmoid of the gate argument.'''
    x, _ = gate_argument(mask, scores)
    return dict(
        index=np.arange(len(mask)),
        m=mask.m.copy(),
        score=np.zeros(len(mask)) if scores is None else np.asarray(scores, dtype=float),
        gate=gate_values(mask, scores, deterministic=True),
        gate_sample=gate_values(mask, scores, deterministic=False, iteration=iteration),
        sigmoid=sigmoid(x),
    )


def test_gumbel_zero(gp):
    assert gumbel_sigmoid(0.0, 0.5) == (0.0, 0.0)
    assert gumbel_sigmoid(1.0, 0.5)[0] == 0.5


def test_threshold_ties(gp):
    keep = ratio_keep_mask([0.3]*4, 0.5)
    assert list(keep) == [False, False, True, True]
