'Per-Gaussian importance scores: max (RadSplat) or sum (Mini-Splatting) of alpha*T over the rays of the training views.'

import numpy as np

from gsprune import gp, options, Progress
from gsprune.render import project, render_with_contributions, trace_ray


gp.option('score', 'radsplat', 'importance score (radsplat|minisplat)')

SCORE_MODES = {
    'radsplat': 'radsplat-max',
    'minisplat': 'minisplat-sum',
}


def score_mode(name):
    'Canonical accumulator mode for *name*, accepting both short and long spellings.'
    if name in SCORE_MODES.values():
        return name
    if name not in SCORE_MODES:
        gp.fail(f'unknown score mode "{name}"; choose from {", ".join(SCORE_MODES)}')
    return SCORE_MODES[name]


class ScoreAccumulator:
    def __init__(self, n, mode='radsplat-max'):
        self.mode = score_mode(mode)
        self.raw = np.zeros(n)
        self.views_seen = 0

    def __len__(self):
        return len(self.raw)

    def reset(self, n=None):
        self.raw = np.zeros(len(self.raw) if n is None else n)
        self.views_seen = 0


def accumulate_view(acc, view_stats):
    'Fold one view\'s ViewContributions into *acc*: running max or running sum.'
    vmax, vsum = (np.asarray(a, dtype=float) for a in view_stats)
    if len(vmax) != len(acc) or len(vsum) != len(acc):
        gp.fail(f'view statistics cover {len(vmax)} gaussians, accumulator has {len(acc)}')
    if acc.mode == 'radsplat-max':
        np.maximum(acc.raw, vmax, out=acc.raw)
    else:
        acc.raw += vsum
    acc.views_seen += 1
    return acc


def finalize_scores(acc):
    'Scores in [0,1].  Sums are divided by their maximum; all-zero stays zero.'
    if acc.views_seen < 1:
        gp.fail('no views accumulated into importance scores')
    if acc.mode == 'radsplat-max':
        return acc.raw.copy()
    top = acc.raw.max() if len(acc.raw) else 0.0
    if top <= 0:
        return np.zeros_like(acc.raw)
    return acc.raw / top


def compute_scores(cloud, views, mode=None, gate=None, gate_scales=False):
    'Return (scores, accumulator) for *cloud* over *views*, rendered with *gate* if given.'
    acc = ScoreAccumulator(len(cloud), mode or options.score)
    for view in Progress(views, gerund='scoring'):
        cam = getattr(view, 'camera', view)
        accumulate_view(acc, render_with_contributions(cloud, cam, gate, gate_scales))
    return finalize_scores(acc), acc


def score_oracle(cloud, views, mode=None, gate=None):
    '''Scores by brute force: every pixel against every splat in front of the camera, no culling and
    no early exit.  Slow; for checking compute_scores on small scenes.'''
    acc = ScoreAccumulator(len(cloud), mode or options.score)
    for view in views:
        cam = getattr(view, 'camera', view)
        proj = project(cloud, cam, gate, cull=False)
        contributors = [proj.contributor(j) for j in range(len(proj))]
        vmax, vsum = np.zeros(len(cloud)), np.zeros(len(cloud))
        for y in range(cam.height):
            for x in range(cam.width):
                for rc in trace_ray(contributors, (x, y), early_exit=False)[0]:
                    vmax[rc.source_index] = max(vmax[rc.source_index], rc.weight)
                    vsum[rc.source_index] += rc.weight
        accumulate_view(acc, (vmax, vsum))
    return finalize_scores(acc)


def score_table(acc):
    'Rows of (index, raw, normalized) for export.'
    S = finalize_scores(acc)
    return [(i, float(r), float(s)) for i, (r, s) in enumerate(zip(acc.raw, S))]


def test_score_modes(gp):
    assert score_mode('radsplat') == 'radsplat-max'
    assert score_mode('minisplat-sum') == 'minisplat-sum'
    acc = ScoreAccumulator(2, 'minisplat')
    accumulate_view(acc, ([0.5, 2.0], [2.0, 8.0]))
    assert list(finalize_scores(acc)) == [0.25, 1.0]
