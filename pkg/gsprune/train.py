'''
The training schedule: densify while the model grows, learn a pruning mask over a short window,
prune once at the end of the window, then fine-tune the survivors.

A Trainer holds every piece of mutable state, so a run can be checkpointed and resumed
bit-exactly, or copied at the start of the mask window and branched into several configurations.
'''

import copy
import time

import numpy as np

from gsprune import gp, options, AttrDict, Progress, fmtnum, Path
from gsprune.core import SH_C0
from gsprune.render import render_image, render_backward
from gsprune.importance import compute_scores, score_mode
from gsprune.masking import (MaskState, MASK_KINDS, MASK_TARGETS, gate_argument, gate_forward, gate_values, gate_table,
                             gate_bimodality, gate_open_threshold, prune_keep_mask, prune_rows, ratio_keep_mask)
from gsprune.losses import total_loss
from gsprune.optim import AdamState, adam_step, group_learning_rates
from gsprune.density import DensityStats, densify_and_prune, reset_opacity
from gsprune.metrics import eval_model, psnr
from gsprune.data import SceneSpec, make_synthetic_cloud, scene_extent
from gsprune.loaders.ckpt import save_checkpoint, load_checkpoint


gp.option('iters', 30000, 'total training iterations')
gp.option('mask_start', 19500, 'first iteration of the mask window')
gp.option('mask_end', 20000, 'mask window ends (exclusive); the one-time prune happens here')
gp.option('score_update_every', 20, 'iterations between importance-score refreshes in the mask window')
gp.option('score_views', 32, 'training views per score refresh (all views if fewer)')
gp.option('prune_ratio', 0.0, 'with --mask off: fraction of lowest-score Gaussians pruned at the window end')
gp.option('eval_every', 2500, 'iterations between held-out PSNR entries in the history')
gp.option('log_every', 100, 'iterations between status lines')
gp.option('checkpoint_every', 0, 'iterations between checkpoints (0: final only)')
gp.option('init', 'gt', 'initial cloud: perturbed ground truth (gt) or random points (random)')
gp.option('init_jitter', 0.5, 'gt init: position noise in units of each Gaussian\'s scale')
gp.option('init_color_noise', 0.1, 'gt init: color noise standard deviation')
gp.option('init_points', 1000, 'random init: number of Gaussians')
gp.option('init_box', 0.33, 'random init: half-size of the cube, as a fraction of the scene extent')
gp.option('out', '', 'output directory (or file, for render)')
gp.option('resume', '', 'checkpoint to resume training from')

# options captured in a TrainConfig, and so in every checkpoint
TRAIN_OPTIONS = '''
    iters mask_start mask_end score_update_every score_views prune_ratio eval_every log_every checkpoint_every
    score mask mask_target tau ste_epsilon gate_prune m_floor mask_init lambda_ssim lambda_m
    lr_position lr_position_final lr_opacity lr_scale lr_rotation lr_sh lr_mask adam_beta1 adam_beta2 adam_eps
    densify_from densify_until densify_interval grad_threshold min_opacity opacity_reset_every opacity_reset_value
    percent_dense split_children split_scale_div
    init init_jitter init_color_noise init_points init_box sh_degree background seed
'''.split()

HISTORY_COLUMNS = ['iter', 'loss', 'l1', 'ssim', 'mask_l1', 'n_gaussians', 'prune_ratio', 'psnr_holdout']


gp.addPreset('full')
gp.addPreset('desk',
    iters=3000, mask_start=1950, mask_end=2000,
    densify_from=50, densify_until=1500, opacity_reset_every=300,
    eval_every=250, log_every=100, lr_mask=0.1,
)


class TrainConfig(AttrDict):
    'Snapshot of the training options for one run.'

    @classmethod
    def from_options(cls, **overrides):
        r = cls({k: options[k] for k in TRAIN_OPTIONS})
        r.update(overrides)
        return r.validate()

    @property
    def mask_window(self):
        return (self['mask_start'], self['mask_end'])

    @property
    def has_window(self):
        'True when something happens in the window: a trainable mask, or a hard-threshold prune.'
        return self['mask_end'] > self['mask_start'] and (self['mask'] != 'off' or self['prune_ratio'] > 0)

    def branch(self, **overrides):
        r = TrainConfig(self)
        r.update(overrides)
        return r.validate()

    def validate(self):
        if self['iters'] < 1:
            gp.fail('iters must be >= 1')
        s, e = self.mask_window
        if not 0 <= s <= e <= self['iters']:
            gp.fail(f'mask window [{s}, {e}) must lie inside [0, {self["iters"]})')
        if e > s and self['densify_until'] > s:
            gp.fail(f'densify_until ({self["densify_until"]}) must not exceed mask_start ({s})')
        if self['tau'] <= 0:
            gp.fail('tau must be > 0')
        for k in self:
            if k.startswith('lr_') and self[k] < 0:
                gp.fail(f'{k} must be >= 0')
        score_mode(self['score'])
        if self['mask'] not in MASK_KINDS:
            gp.fail(f'unknown mask "{self["mask"]}"; choose from {", ".join(MASK_KINDS)}')
        if self['mask_target'] not in MASK_TARGETS:
            gp.fail(f'unknown mask target "{self["mask_target"]}"; choose from {", ".join(MASK_TARGETS)}')
        if not 0 <= self['prune_ratio'] < 1:
            gp.fail('prune_ratio must lie in [0, 1)')
        if self['init'] not in ('gt', 'random'):
            gp.fail(f'unknown init "{self["init"]}"')
        if self['score_update_every'] < 1 or self['score_views'] < 1:
            gp.fail('score_update_every and score_views must be >= 1')
        if not 0 < self['gate_prune'] < 1:
            gp.fail('gate_prune must lie in (0, 1)')
        if self['mask'] == 'gumbel' and e > s:
            self.check_mask_reach()
        return self

    def mask_reach(self):
        'Largest m the window can reach; Adam moves each m by about lr_mask per step.'
        s, e = self.mask_window
        return self['mask_init'] + self['lr_mask']*(e - s)

    def check_mask_reach(self, top_score=None):
        '''Warn and return False if no Gumbel gate can open by the window end, given the largest
        score *top_score* (default: the largest score the score mode can produce).'''
        if top_score is None:
            radsplat = self['mask_target'] == 'score' and score_mode(self['score']) == 'radsplat-max'
            top_score = options.alpha_max if radsplat else 1.0
        need = gate_open_threshold(self['tau'], self['gate_prune'])
        best = self.mask_reach() * top_score
        if best >= need:
            return True
        s, e = self.mask_window
        gp.warning(f'{e - s}-iteration mask window cannot open any gate: the gate argument reaches at most {best:.3g}, '
                   f'{need:.3g} is needed; lengthen the window or raise lr_mask or mask_init')
        return False

    def to_text(self):
        'key = value lines, loadable as a config file.'
        return ''.join('%s = %s\n' % (k, self[k]) for k in sorted(self))


class History:
    'One row per iteration, written as CSV with repr precision.'
    def __init__(self, rows=None):
        self.rows = list(rows or [])

    def __len__(self):
        return len(self.rows)

    def append(self, **row):
        self.rows.append([row.get(k) for k in HISTORY_COLUMNS])

    def column(self, name):
        i = HISTORY_COLUMNS.index(name)
        return [r[i] for r in self.rows]

    def to_csv(self):
        lines = [','.join(HISTORY_COLUMNS)]
        lines.extend(','.join(fmtnum(v) for v in r) for r in self.rows)
        return '\n'.join(lines) + '\n'


def initial_cloud(config, views, gt_cloud=None):
    '''Starting cloud: the ground-truth cloud with position and color noise (init=gt), or random
    Gaussians in a cube around the cameras' look-at region (init=random).'''
    rng = np.random.default_rng([int(config.seed), 2])
    if config.init == 'gt':
        if gt_cloud is None:
            gp.fail('dataset has no gt.ply; use --init random')
        c = gt_cloud.with_sh_degree(config.sh_degree)
        z = rng.standard_normal((len(c), 3)) * c.scales * config.init_jitter
        c.positions = (c.positions + z).astype(c.positions.dtype)
        c.sh_coeffs[:, 0] += (rng.standard_normal((len(c), 3)) * config.init_color_noise / SH_C0).astype(c.sh_coeffs.dtype)
        c.mask_params[:] = 1.0
        c.scores[:] = 0.0
        return c

    cams = [v.camera for v in views]
    centers = np.array([cam.center for cam in cams])
    spec = SceneSpec.from_options(n_gaussians=config.init_points, seed=int(config.seed) + 1,
                                  sh_degree=config.sh_degree,
                                  box=config.init_box * scene_extent(cams))
    spec.center = tuple(centers.mean(axis=0))
    return make_synthetic_cloud(spec)


class Trainer:
    def __init__(self, views, config, test_views=(), cloud=None, gt_cloud=None):
        if len(views) < 2:
            gp.fail('training needs at least two views')
        self.views = list(views)
        self.test_views = list(test_views)
        self.config = TrainConfig(config).validate()
        self.extent = scene_extent([v.camera for v in self.views])

        self.cloud = (cloud if cloud is not None else initial_cloud(self.config, self.views, gt_cloud)).copy()
        self.adam = AdamState.for_cloud(self.cloud, config=self.config)
        self.stats = DensityStats(len(self.cloud))
        self.rng = np.random.Generator(np.random.PCG64(int(self.config.seed)))
        self.order = []
        self.iteration = 0

        self.mask = None
        self.scores = None
        self.score_cursor = 0
        self.n_initial = len(self.cloud)
        self.n_before_prune = None
        self.pruned_count = 0
        self.prune_ratio = 0.0
        self.history = History()
        self.gates = None        # gate_table at the prune, for export
        self.bimodality = None
        self.seconds = 0.0

    def __repr__(self):
        return f'<Trainer iter={self.iteration}/{self.config.iters} n={len(self.cloud)}>'

    @property
    def done(self):
        return self.iteration >= self.config.iters

    def copy(self):
        'Independent copy for branching; views are shared.'
        views, test_views = self.views, self.test_views
        self.views = self.test_views = None
        try:
            r = copy.deepcopy(self)
        finally:
            self.views, self.test_views = views, test_views
        r.views, r.test_views = views, test_views
        return r

    def branch(self, **overrides):
        'Copy with config *overrides*; only valid before the mask window starts.'
        if self.iteration > self.config.mask_start:
            gp.fail('cannot branch a run past the mask window start')
        r = self.copy()
        r.config = self.config.branch(**overrides)
        return r

    def next_view(self):
        'Views in seeded random order, each view once per pass.'
        if not self.order:
            self.order = [int(i) for i in self.rng.permutation(len(self.views))]
        return self.views[self.order.pop()]

    @property
    def gating(self):
        return self.mask is not None and self.mask.active

    def _score_subset(self):
        n = self.config.score_views
        if len(self.views) <= n:
            return self.views
        idx = [(self.score_cursor + k) % len(self.views) for k in range(n)]
        self.score_cursor = (self.score_cursor + n) % len(self.views)
        return [self.views[i] for i in idx]

    def refresh_scores(self, gated=True):
        'Recompute importance scores, rendering with the deterministic gate when the mask is live.'
        gate = gate_values(self.mask, self.scores, deterministic=True) if (gated and self.gating) else None
        gate_scales = self.mask.gates_scales if gate is not None else False
        self.scores, _ = compute_scores(self.cloud, self._score_subset(), self.config.score, gate, gate_scales)
        self.cloud.scores = self.scores.copy()
        if self.gating and self.mask.needs_scores:
            nzero = int((self.scores == 0).sum())
            gp.status(f'iter {self.iteration}: scores refreshed, {nzero} gaussians at score 0 stay gated off')
        return self.scores

    def begin_window(self):
        cfg = self.config
        n = len(self.cloud)
        if cfg.mask != 'off':
            self.mask = MaskState(n, cfg.mask, cfg.mask_target, cfg.tau, cfg.seed, cfg.ste_epsilon)
            self.mask.m[:] = cfg.mask_init
            self.adam.add_group('mask_params', (n,))
        if cfg.mask == 'off' or self.mask.needs_scores:
            self.refresh_scores(gated=False)
        if cfg.mask == 'gumbel' and self.mask.needs_scores and n:
            cfg.check_mask_reach(float(self.scores.max()))
        gp.status(f'iter {self.iteration}: mask window opens with {n} gaussians ({cfg.mask}/{cfg.mask_target})')

    def end_window(self):
        cfg = self.config
        n = len(self.cloud)
        self.n_before_prune = n
        if self.mask is not None:
            self.gates = gate_table(self.mask, self.scores, iteration=self.iteration + 1)
            self.bimodality = AttrDict(gumbel=gate_bimodality(self.gates['gate_sample']),
                                       sigmoid=gate_bimodality(self.gates['sigmoid']))
            keep = prune_keep_mask(self.mask, self.scores, cfg.gate_prune)
            if n and not keep.any():
                self.closed_every_gate()
            self.cloud.mask_params = self.mask.m.copy()
            self.adam.drop_group('mask_params')
            self.mask.active = False
        else:
            keep = ratio_keep_mask(self.scores, cfg.prune_ratio)

        self.cloud = prune_rows(self.cloud, keep, self.adam, self.stats)
        if self.mask is not None:
            self.mask = self.mask.take(np.nonzero(keep)[0])
        self.pruned_count = int(n - len(self.cloud))
        self.prune_ratio = self.pruned_count / n
        msg = f'iter {self.iteration}: pruned {self.pruned_count} of {n} gaussians (ratio {self.prune_ratio:.3f})'
        if self.bimodality:
            msg += f', gates in (0.05, 0.95): {self.bimodality.gumbel:.3f} sampled vs {self.bimodality.sigmoid:.3f} sigmoid'
        gp.status(msg)

    def closed_every_gate(self):
        cfg = self.config
        s, e = cfg.mask_window
        x = gate_argument(self.mask, self.scores)[0]
        msg = f'mask window [{s}, {e}) closed every gate (largest gate argument {x.max():.3g}'
        if self.mask.kind == 'gumbel':
            msg += f', {gate_open_threshold(cfg.tau, cfg.gate_prune):.3g} keeps a gaussian'
        gp.error(msg + '); lengthen the window or raise lr_mask or mask_init')

    def step(self):
        'Run one training iteration.'
        cfg = self.config
        it = self.iteration
        s, e = cfg.mask_window

        if cfg.has_window and it == s:
            self.begin_window()
        elif self.gating and self.mask.needs_scores and (it - s) % cfg.score_update_every == 0:
            self.refresh_scores()

        view = self.next_view()
        gate = dgate_dm = None
        gate_scales = False
        if self.gating:
            gate, dgate_dm = gate_forward(self.mask, self.scores, deterministic=False, iteration=it)
            gate_scales = self.mask.gates_scales

        img, aux = render_image(self.cloud, view.camera, gate, gate_scales, cfg.background)
        terms = total_loss(img, view.image, self.mask if self.gating else None, cfg.lambda_ssim, cfg.lambda_m)
        grads = render_backward(self.cloud, view.camera, terms.dimage, gate, aux, gate_scales, cfg.background)

        n1 = it + 1
        if n1 <= cfg.densify_until:
            self.stats.add(grads)

        params = {k: getattr(self.cloud, k) for k in self.cloud.param_groups}
        gradmap = {k: getattr(grads, k) for k in self.cloud.param_groups}
        if self.gating:
            params['mask_params'] = self.mask.m
            gradmap['mask_params'] = grads.mask_params * dgate_dm + terms.dmask
        adam_step(params, gradmap, self.adam, group_learning_rates(it, cfg.iters, self.extent, cfg))
        if self.gating:
            self.mask.clamp(cfg.m_floor)

        if n1 < cfg.densify_until:
            if n1 > cfg.densify_from and n1 % cfg.densify_interval == 0:
                self.cloud, self.stats, counts = densify_and_prune(self.cloud, self.stats, self.extent,
                                                                  self.rng, self.adam, cfg)
                gp.debug(f'iter {n1}: cloned {counts.cloned}, split {counts.split}, removed {counts.removed}, n={counts.n}')
            if cfg.opacity_reset_every and n1 % cfg.opacity_reset_every == 0:
                reset_opacity(self.cloud, self.adam, cfg.opacity_reset_value)

        if cfg.has_window and it == e - 1:
            self.end_window()

        psnr_holdout = None
        if self.test_views and (n1 % cfg.eval_every == 0 or n1 == cfg.iters):
            psnr_holdout = self.holdout_psnr()

        self.history.append(**{'iter': n1, 'loss': terms.loss, 'l1': terms.l1, 'ssim': terms.ssim,
                               'mask_l1': terms.mask_l1, 'n_gaussians': len(self.cloud),
                               'prune_ratio': self.prune_ratio, 'psnr_holdout': psnr_holdout})
        if not np.isfinite(terms.loss):
            gp.fail(f'non-finite loss at iteration {n1}')
        if cfg.log_every and n1 % cfg.log_every == 0:
            gp.status(f'iter {n1}: loss {terms.loss:.5f}, n={len(self.cloud)}')
        self.iteration = n1

    def current_gate(self):
        'Deterministic gate while a mask is live, else None.'
        if not self.gating:
            return None
        return gate_values(self.mask, self.scores, deterministic=True)

    def holdout_psnr(self):
        gate = self.current_gate()
        gs = self.mask.gates_scales if gate is not None else False
        vals = []
        for v in self.test_views:
            img, _ = render_image(self.cloud, v.camera, gate, gs, self.config.background)
            vals.append(psnr(np.clip(img, 0, 1), v.image))
        return float(np.mean(vals))

    def run(self, until=None, checkpoint_path=None):
        'Train up to iteration *until* (default: the end).'
        until = self.config.iters if until is None else min(until, self.config.iters)
        every = self.config.checkpoint_every
        t0 = time.perf_counter()
        with Progress(gerund='training', total=until - self.iteration) as prog:
            while self.iteration < until:
                self.step()
                prog.addProgress(1)
                if checkpoint_path and every and self.iteration % every == 0:
                    self.save(checkpoint_path)
        self.seconds += time.perf_counter() - t0
        return self

    def evaluate(self, views=None):
        gate = self.current_gate()
        return eval_model(self.cloud, views if views is not None else self.test_views, gate,
                          self.mask.gates_scales if gate is not None else False, self.prune_ratio)

    def run_summary(self):
        return AttrDict(n_initial=self.n_initial,
                        n_before_prune=self.n_before_prune if self.n_before_prune is not None else len(self.cloud),
                        n_final=len(self.cloud), prune_ratio=self.prune_ratio,
                        train_seconds=self.seconds, peak_rss_mb=gp.peakMemoryMB())

    def save(self, path):
        arrays = {'stats.grad_accum': self.stats.grad_accum, 'stats.denom': self.stats.denom}
        if self.scores is not None:
            arrays['scores'] = self.scores
        for k, v in (self.gates or {}).items():
            arrays['gates.' + k] = v
        meta = dict(rng=self.rng.bit_generator.state, order=self.order, score_cursor=self.score_cursor,
                    n_initial=self.n_initial, n_before_prune=self.n_before_prune,
                    pruned_count=self.pruned_count, prune_ratio=self.prune_ratio,
                    history=self.history.rows, seconds=self.seconds,
                    bimodality=dict(self.bimodality) if self.bimodality else None)
        save_checkpoint(self.cloud, self.mask, self.adam, self.config, self.iteration, path, arrays, meta)

    @classmethod
    def load(cls, path, views, test_views=()):
        ck = load_checkpoint(path)
        config = TrainConfig(ck.config)
        r = cls(views, config, test_views, cloud=ck.cloud)
        r.cloud = ck.cloud
        r.adam = ck.adam
        r.mask = ck.mask
        r.iteration = ck.iteration
        r.stats = DensityStats(0)
        r.stats.grad_accum = ck.arrays['stats.grad_accum']
        r.stats.denom = ck.arrays['stats.denom']
        r.scores = ck.arrays.get('scores')
        r.gates = {k[len('gates.'):]: v for k, v in ck.arrays.items() if k.startswith('gates.')} or None
        m = ck.meta
        r.rng.bit_generator.state = m['rng']
        r.order = list(m['order'])
        r.score_cursor = m['score_cursor']
        r.n_initial = m['n_initial']
        r.n_before_prune = m['n_before_prune']
        r.pruned_count = m['pruned_count']
        r.prune_ratio = m['prune_ratio']
        r.history = History(m['history'])
        r.seconds = m['seconds']
        r.bimodality = AttrDict(m['bimodality']) if m.get('bimodality') else None
        return r


def train(views, config=None, score_mode=None, mask_mode=None, test_views=(), cloud=None, gt_cloud=None):
    '''Full schedule on *views*.  *score_mode* and *mask_mode* override config.score and config.mask.
    Returns (final cloud, History).'''
    config = TrainConfig(config) if config is not None else TrainConfig.from_options()
    if score_mode:
        config['score'] = score_mode
    if mask_mode:
        config['mask'] = mask_mode
    t = Trainer(views, config.validate(), test_views, cloud=cloud, gt_cloud=gt_cloud)
    t.run()
    return t.cloud, t.history


def write_table(path, columns, rows):
    'CSV of *rows* (sequences) under *columns*, numbers in repr precision.'
    lines = [','.join(columns)]
    lines.extend(','.join(v if isinstance(v, str) else fmtnum(v) for v in r) for r in rows)
    Path(path).write_atomic('\n'.join(lines) + '\n')


def write_run_outputs(trainer, outdir, report=None):
    'model.ply, model.ckpt, history.csv, run.csv, and gates.csv/masks.csv when a mask was trained.'
    outdir = Path(outdir).ensureDir()
    gp.save_ply(outdir/'model.ply', trainer.cloud)
    trainer.save(outdir/'model.ckpt')
    (outdir/'history.csv').write_atomic(trainer.history.to_csv())
    s = trainer.run_summary()
    cols = ['n_initial', 'n_before_prune', 'n_final', 'prune_ratio', 'train_seconds', 'peak_rss_mb']
    write_table(outdir/'run.csv', cols, [[s[k] for k in cols]])
    if trainer.gates is not None:
        g = trainer.gates
        cols = ['index', 'm', 'score', 'gate', 'gate_sample', 'sigmoid']
        write_table(outdir/'gates.csv', cols, list(zip(*[g[k] for k in cols])))
        write_table(outdir/'masks.csv', ['index', 'm', 'gate'], list(zip(g['index'], g['m'], g['gate'])))
    if report is not None:
        (outdir/'report.csv').write_atomic(report.to_csv())


gp.addGlobals({
    'TrainConfig': TrainConfig,
    'Trainer': Trainer,
})
