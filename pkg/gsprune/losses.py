'Photometric losses with analytic gradients: L1, SSIM over an 11x11 Gaussian window, and the weighted total.'

import functools

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from gsprune import gp, options, AttrDict
from gsprune.masking import mask_regularizer


gp.option('lambda_ssim', 0.2, 'weight of the SSIM loss')
gp.option('lambda_m', 5e-4, 'weight of the mask regularizer')

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


@functools.lru_cache(maxsize=4)
def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    x = np.arange(size) - (size - 1) / 2
    w = np.exp(-x*x / (2*sigma*sigma))
    return w / w.sum()


def _check_pair(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        gp.fail(f'image shapes differ: {a.shape} vs {b.shape}')
    return a, b


def _filter(img):
    'Separable Gaussian filter, "valid" region only: (H, W, C) -> (H-10, W-10, C).'
    w = gaussian_window()
    r = sliding_window_view(img, len(w), axis=0) @ w
    return sliding_window_view(r, len(w), axis=1) @ w


def _filter_adjoint(g):
    'Transpose of _filter: zero-pad by the window radius*2 and filter again (the window is symmetric).'
    p = SSIM_WINDOW - 1
    return _filter(np.pad(g, ((p, p), (p, p), (0, 0))))


def _ssim_terms(x, y):
    if x.ndim != 3 or x.shape[0] < SSIM_WINDOW or x.shape[1] < SSIM_WINDOW:
        gp.fail(f'image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window')
    t = AttrDict()
    t.mx, t.my = _filter(x), _filter(y)
    t.fxx, t.fyy, t.fxy = _filter(x*x), _filter(y*y), _filter(x*y)
    t.A1 = 2*t.mx*t.my + SSIM_C1
    t.A2 = 2*(t.fxy - t.mx*t.my) + SSIM_C2
    t.B1 = t.mx*t.mx + t.my*t.my + SSIM_C1
    t.B2 = (t.fxx - t.mx*t.mx) + (t.fyy - t.my*t.my) + SSIM_C2
    t.map = (t.A1*t.A2) / (t.B1*t.B2)
    return t


def ssim_map(a, b):
    'Per-window, per-channel SSIM values.'
    a, b = _check_pair(a, b)
    return _ssim_terms(a, b).map


def ssim_value(a, b):
    return float(ssim_map(a, b).mean())


def loss_ssim(rendered, gt):
    'Return (1 - SSIM, dLoss/drendered).'
    x, y = _check_pair(rendered, gt)
    t = _ssim_terms(x, y)
    S = t.map
    dmx = S*(2*t.my/t.A1 - 2*t.my/t.A2 - 2*t.mx/t.B1 + 2*t.mx/t.B2)
    dfxx = -S/t.B2
    dfxy = 2*S/t.A2
    n = S.size
    grad = (_filter_adjoint(dmx) + 2*x*_filter_adjoint(dfxx) + y*_filter_adjoint(dfxy)) / n
    return 1.0 - float(S.mean()), -grad


def loss_l1(rendered, gt):
    'Return (mean |rendered - gt|, dLoss/drendered).'
    a, b = _check_pair(rendered, gt)
    d = a - b
    return float(np.abs(d).mean()), np.sign(d) / d.size


def total_loss(rendered, gt, mask=None, lambda_ssim=None, lambda_m=None):
    '''(1-lambda_ssim)*L1 + lambda_ssim*(1-SSIM) + lambda_m*R_mask, with R_mask counted only while *mask* is active.
    Returns AttrDict(loss, l1, ssim, ssim_loss, mask_l1, dimage, dmask); ssim is the SSIM value itself.'''
    lam_s = options.lambda_ssim if lambda_ssim is None else lambda_ssim
    lam_m = options.lambda_m if lambda_m is None else lambda_m

    l1, dl1 = loss_l1(rendered, gt)
    r = AttrDict(l1=l1, mask_l1=0.0, dmask=None)
    dimage = (1 - lam_s)*dl1
    if lam_s:
        ls, dls = loss_ssim(rendered, gt)
        dimage = dimage + lam_s*dls
    else:
        ls = 1.0 - ssim_value(rendered, gt) if min(np.shape(gt)[:2]) >= SSIM_WINDOW else 0.0
    r.ssim_loss = ls
    r.ssim = 1.0 - ls
    r.loss = (1 - lam_s)*l1 + lam_s*ls
    r.dimage = dimage

    if mask is not None and mask.active:
        reg, dreg = mask_regularizer(mask)
        r.mask_l1 = reg
        r.loss += lam_m*reg
        r.dmask = lam_m*dreg
    return r


def test_l1_basic(gp):
    z = np.zeros((4, 4, 3))
    assert loss_l1(z, z + 1)[0] == 1.0
