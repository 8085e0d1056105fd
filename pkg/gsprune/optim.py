'Adam over named parameter groups whose rows track the Gaussians through densification and pruning.'

import math

import numpy as np

from gsprune import gp, options


gp.option('lr_position', 1.6e-4, 'initial position learning rate (times scene extent)')
gp.option('lr_position_final', 1.6e-6, 'final position learning rate (times scene extent)')
gp.option('lr_opacity', 0.05, 'opacity-logit learning rate')
gp.option('lr_scale', 5e-3, 'log-scale learning rate')
gp.option('lr_rotation', 1e-3, 'quaternion learning rate')
gp.option('lr_sh', 2.5e-3, 'SH coefficient learning rate')
gp.option('lr_mask', 0.01, 'mask value learning rate')
gp.option('adam_beta1', 0.9, 'Adam first-moment decay')
gp.option('adam_beta2', 0.999, 'Adam second-moment decay')
gp.option('adam_eps', 1e-15, 'Adam denominator epsilon')

# cloud field -> learning-rate option
GROUP_LR = {
    'positions': 'lr_position',
    'log_scales': 'lr_scale',
    'rotations': 'lr_rotation',
    'opacity_logits': 'lr_opacity',
    'sh_coeffs': 'lr_sh',
    'mask_params': 'lr_mask',
}


def expon_lr(step, lr_init, lr_final, max_steps):
    'Log-linear interpolation from lr_init at step 0 to lr_final at max_steps.'
    if lr_init == lr_final or max_steps <= 0:
        return lr_init
    if lr_init <= 0 or lr_final <= 0:
        return 0.0
    t = min(max(step / max_steps, 0.0), 1.0)
    return math.exp(math.log(lr_init)*(1 - t) + math.log(lr_final)*t)


class AdamState:
    'First/second moments and a step counter per group.  Row i of every moment array belongs to Gaussian i.'
    def __init__(self, beta1=None, beta2=None, eps=None):
        self.beta1 = options.adam_beta1 if beta1 is None else beta1
        self.beta2 = options.adam_beta2 if beta2 is None else beta2
        self.eps = options.adam_eps if eps is None else eps
        self.m = {}
        self.v = {}
        self.step = {}

    @classmethod
    def for_cloud(cls, cloud, groups=None, config=None):
        r = cls(config['adam_beta1'], config['adam_beta2'], config['adam_eps']) if config else cls()
        for k in (groups or cloud.param_groups):
            r.add_group(k, getattr(cloud, k).shape)
        return r

    def __contains__(self, group):
        return group in self.m

    @property
    def groups(self):
        return list(self.m.keys())

    def add_group(self, name, shape):
        self.m[name] = np.zeros(shape)
        self.v[name] = np.zeros(shape)
        self.step[name] = 0

    def drop_group(self, name):
        for d in (self.m, self.v, self.step):
            d.pop(name, None)

    def compact(self, idx):
        'Keep only rows *idx* of every group.'
        for k in self.groups:
            self.m[k] = self.m[k][idx]
            self.v[k] = self.v[k][idx]

    def grow(self, src_idx):
        'Append one zero-moment row per entry of *src_idx* (rows for cloned or split Gaussians).'
        n = len(src_idx)
        for k in self.groups:
            self.m[k] = np.concatenate([self.m[k], np.zeros((n,) + self.m[k].shape[1:])])
            self.v[k] = np.concatenate([self.v[k], np.zeros((n,) + self.v[k].shape[1:])])

    def reset_rows(self, group):
        'Zero the moments of *group*, as after its parameters were overwritten.'
        self.m[group][...] = 0
        self.v[group][...] = 0

    def copy(self):
        r = AdamState(self.beta1, self.beta2, self.eps)
        r.m = {k: v.copy() for k, v in self.m.items()}
        r.v = {k: v.copy() for k, v in self.v.items()}
        r.step = dict(self.step)
        return r


def adam_step(params, grads, state, lr):
    '''Bias-corrected Adam update of every group in *grads*, in place.
    *params* and *grads* map group name to arrays; *lr* is a number or a mapping by group.'''
    for k, g in grads.items():
        g = np.asarray(g, dtype=float)
        if not np.all(np.isfinite(g)):
            gp.fail(f'non-finite gradient in group {k}')
        p = params[k]
        if g.shape != p.shape or state.m[k].shape != p.shape:
            gp.fail(f'group {k}: gradient {g.shape}, parameter {p.shape}, moments {state.m[k].shape}')
        rate = lr[k] if isinstance(lr, dict) else lr

        state.step[k] += 1
        t = state.step[k]
        m = state.m[k] = state.beta1*state.m[k] + (1 - state.beta1)*g
        v = state.v[k] = state.beta2*state.v[k] + (1 - state.beta2)*g*g
        mhat = m / (1 - state.beta1**t)
        vhat = v / (1 - state.beta2**t)
        p -= (rate * mhat / (np.sqrt(vhat) + state.eps)).astype(p.dtype, copy=False)
    return params


def group_learning_rates(step, total_steps, extent=1.0, config=None):
    '''Learning rate per group at *step*; positions decay exponentially and scale with the scene extent.
    Rates come from *config* (a TrainConfig) when given, else from options.'''
    cfg = config or options
    lrs = {k: cfg[opt] for k, opt in GROUP_LR.items()}
    lrs['positions'] = expon_lr(step, cfg['lr_position']*extent, cfg['lr_position_final']*extent, total_steps)
    return lrs


def test_adam_first_step(gp):
    p = {'x': np.array([1.0])}
    st = AdamState()
    st.add_group('x', (1,))
    adam_step(p, {'x': np.array([1.0])}, st, 0.01)
    assert abs(p['x'][0] - 0.99) < 1e-9
