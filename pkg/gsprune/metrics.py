'Evaluation metrics and the per-view report.'

import time

import numpy as np

from gsprune import gp, options, AttrDict, Progress, fmtnum
from gsprune.losses import ssim_value, _check_pair
from gsprune.render import render_image


gp.option('psnr_cap', 100.0, 'PSNR reported for identical images (dB)')
gp.option('lpips_column', False, 'add an empty lpips column to eval reports for external joins')

REPORT_COLUMNS = ['view', 'psnr', 'ssim', 'n_gaussians', 'prune_ratio', 'seconds']


def psnr(a, b):
    'Peak signal-to-noise ratio on unit range, in dB; identical images give psnr_cap.'
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b)**2))
    if mse == 0:
        return float(options.psnr_cap)
    return 10*np.log10(1/mse)


def ssim_eval(a, b):
    'Mean SSIM, same window and constants as the training loss.'
    return ssim_value(a, b)


class EvalReport:
    def __init__(self, n_gaussians=0, prune_ratio=0.0):
        self.rows = []
        self.n_gaussians = n_gaussians
        self.prune_ratio = prune_ratio

    def __len__(self):
        return len(self.rows)

    def addRow(self, view, psnr, ssim, seconds):
        self.rows.append(AttrDict(view=view, psnr=psnr, ssim=ssim, seconds=seconds))

    def _mean(self, k):
        return float(np.mean([r[k] for r in self.rows])) if self.rows else float('nan')

    @property
    def mean_psnr(self):
        return self._mean('psnr')

    @property
    def mean_ssim(self):
        return self._mean('ssim')

    @property
    def seconds(self):
        return float(sum(r.seconds for r in self.rows))

    def to_csv(self, lpips_column=None):
        'CSV text: one row per view and a final "mean" row.'
        lpips = options.lpips_column if lpips_column is None else lpips_column
        cols = REPORT_COLUMNS + (['lpips'] if lpips else [])
        lines = [','.join(cols)]
        def _line(view, p, s, secs):
            vals = [str(view), fmtnum(p), fmtnum(s), fmtnum(self.n_gaussians), fmtnum(self.prune_ratio), fmtnum(secs)]
            return ','.join(vals + ([''] if lpips else []))
        for r in self.rows:
            lines.append(_line(r.view, r.psnr, r.ssim, r.seconds))
        lines.append(_line('mean', self.mean_psnr, self.mean_ssim, self._mean('seconds')))
        return '\n'.join(lines) + '\n'


def eval_model(cloud, test_views, gate=None, gate_scales=False, prune_ratio=0.0):
    '''Render every test view and score it against its image.  *gate* is the deterministic
    mask gate when a mask is still attached.'''
    if not test_views:
        gp.fail('no test views to evaluate')
    report = EvalReport(len(cloud), prune_ratio)
    for i, view in enumerate(Progress(test_views, gerund='evaluating')):
        t0 = time.perf_counter()
        img, _ = render_image(cloud, view.camera, gate, gate_scales)
        img = np.clip(img, 0, 1)
        report.addRow(view.name or str(i), psnr(img, view.image), ssim_eval(img, view.image), time.perf_counter() - t0)
    return report


def test_psnr_values(gp):
    a = np.zeros((2, 2, 3))
    assert psnr(a, a) == 100.0
    assert abs(psnr(a, a + 0.1) - 20.0) < 1e-9
