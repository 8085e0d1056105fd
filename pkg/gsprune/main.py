#
# Usage: gsprune <command> [<options>] ...
#        gsprune synth --n 250 --copies 4 --out data/
#        gsprune train data/ --mask gumbel --score radsplat --out run/

import argparse
import os
import sys

import gsprune
from gsprune import gp, options, AttrDict, Path, Progress, ExpectedException, addOptions
from gsprune.data import synth_dataset, orbit_cameras
from gsprune.importance import compute_scores, score_table
from gsprune.masking import MASK_KINDS, MASK_TARGETS, gate_values
from gsprune.metrics import eval_model
from gsprune.render import render_image
from gsprune.train import TRAIN_OPTIONS, TrainConfig, Trainer, write_run_outputs, write_table
from gsprune.loaders.ckpt import load_checkpoint

gp.version_info = gsprune.__version_info__


COMMON_OPTIONS = 'preset config seed threads quiet debug out'.split()
SCENE_OPTIONS = '''n_gaussians copies jitter box scale_min scale_max opacity_min opacity_max color_min color_max
    n_cameras image_size fov orbit_radius elevations holdout_every sh_degree'''.split()
RENDER_OPTIONS = 'dilation alpha_min alpha_max t_min near_clip tile_size background'.split()

OPTION_CHOICES = {
    'score': ['radsplat', 'minisplat'],
    'mask': list(MASK_KINDS),
    'mask_target': list(MASK_TARGETS),
    'init': ['gt', 'random'],
}

SWEEP_COLUMNS = ['method', 'ratio', 'psnr', 'ssim', 'n_gaussians']
COMPARE_COLUMNS = ['mask', 'target', 'psnr', 'ssim', 'n_gaussians', 'prune_ratio']


def build_parser():
    parser = argparse.ArgumentParser(prog='gsprune',
                                     description='learning-to-prune Gaussian splatting at desk scale')
    parser.add_argument('-v', '--version', action='version', version=gp.version_info)
    sub = parser.add_subparsers(dest='command', metavar='command', required=True)

    def command(name, helpstr, optnames):
        p = sub.add_parser(name, help=helpstr, description=helpstr)
        addOptions(p, COMMON_OPTIONS + optnames + RENDER_OPTIONS, dict(OPTION_CHOICES, preset=sorted(gp.presets)))
        return p

    p = command('synth', 'generate a synthetic dataset', SCENE_OPTIONS)
    p.add_argument('--n', dest='n_gaussians', metavar='INT', default=None, help='alias for --n-gaussians')

    p = command('train', 'train (and prune) a model on a dataset', TRAIN_OPTIONS)
    p.add_argument('dataset', help='dataset directory')
    addOptions(p, ['resume'])

    p = command('eval', 'evaluate a model on the test views of a dataset', ['lpips_column'])
    p.add_argument('model', help='model .ply or .ckpt')
    p.add_argument('dataset', help='dataset directory')

    p = command('render', 'render one view of a model', ['n_cameras', 'image_size', 'fov', 'orbit_radius', 'elevations'])
    p.add_argument('model', help='model .ply or .ckpt')
    p.add_argument('--camera', type=int, default=None, help='index of a dataset camera (needs --dataset)')
    p.add_argument('--dataset', default=None, help='dataset directory for --camera')
    p.add_argument('--orbit', type=int, default=None, help='index of an orbit camera position')

    p = command('sweep', 'hard-threshold pruning ratio sweep, plus the learned-mask point', TRAIN_OPTIONS)
    p.add_argument('dataset', help='dataset directory')
    p.add_argument('--ratios', default='0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9',
                   help='comma-separated pruning ratios in [0, 1) (default: %(default)s)')

    p = command('compare', 'mask kind x mask target grid from one shared pre-mask run', TRAIN_OPTIONS)
    p.add_argument('dataset', help='dataset directory')

    p = command('scores', 'export importance scores of a model over the training views', ['score'])
    p.add_argument('model', help='model .ply or .ckpt')
    p.add_argument('dataset', help='dataset directory')

    return parser


def load_model(path):
    'AttrDict(cloud, gate, gate_scales, prune_ratio) from a .ply or .ckpt file.'
    p = Path(path)
    if p.ext == 'ckpt':
        ck = load_checkpoint(p)
        gate, gate_scales = None, False
        if ck.mask is not None and ck.mask.active:
            gate = gate_values(ck.mask, ck.arrays.get('scores'), deterministic=True)
            gate_scales = ck.mask.gates_scales
        return AttrDict(cloud=ck.cloud, gate=gate, gate_scales=gate_scales,
                        prune_ratio=ck.meta.get('prune_ratio', 0.0))
    return AttrDict(cloud=gp.openPath(p), gate=None, gate_scales=False, prune_ratio=0.0)


def open_dataset(path, needs_test=False):
    ds = gp.openPath(path, filetype='dataset')
    if needs_test and not ds.test:
        gp.fail(f'{path}: dataset has no test views')
    return ds


def outdir():
    return Path(options.out).ensureDir()


def cmd_synth(args):
    ds = synth_dataset()
    out = outdir()
    gp.save_dataset(out, ds)
    gp.status(f'{len(ds.gt_cloud)} gaussians, {len(ds.train)} train and {len(ds.test)} test views in {out}')


def cmd_train(args):
    ds = open_dataset(args.dataset)
    out = outdir()
    if options.resume:
        trainer = Trainer.load(options.resume, ds.train, ds.test)
        gp.status(f'resuming at iteration {trainer.iteration} of {trainer.config.iters}')
    else:
        trainer = Trainer(ds.train, TrainConfig.from_options(), ds.test, gt_cloud=ds.gt_cloud)
    trainer.run(checkpoint_path=out/'model.ckpt')
    report = trainer.evaluate() if ds.test else None
    write_run_outputs(trainer, out, report)
    msg = f'{len(trainer.cloud)} gaussians, prune ratio {trainer.prune_ratio:.3f}'
    if report is not None:
        msg += f', psnr {report.mean_psnr:.2f}'
    gp.status(msg)


def cmd_eval(args):
    model = load_model(args.model)
    ds = open_dataset(args.dataset, needs_test=True)
    report = eval_model(model.cloud, ds.test, model.gate, model.gate_scales, model.prune_ratio)
    (outdir()/'report.csv').write_atomic(report.to_csv())
    gp.status(f'psnr {report.mean_psnr:.2f}, ssim {report.mean_ssim:.4f} over {len(report)} views')


def cmd_render(args):
    if (args.camera is None) == (args.orbit is None):
        gp.fail('give exactly one of --camera or --orbit')
    model = load_model(args.model)
    if args.camera is not None:
        if not args.dataset:
            gp.fail('--camera needs --dataset')
        cams = open_dataset(args.dataset).cameras
        idx = args.camera
    else:
        cams = orbit_cameras((0.0, 0.0, 0.0), options.orbit_radius, options.n_cameras, options.image_size,
                             options.fov, options.elevations)
        idx = args.orbit
    if not 0 <= idx < len(cams):
        gp.fail(f'camera {idx} out of range; valid cameras are 0..{len(cams)-1}')

    img, _ = render_image(model.cloud, cams[idx], model.gate, model.gate_scales)
    out = Path(options.out)
    if out.suffix == '.png':
        out = out.with_name(out.name)
    out.parent.ensureDir()
    gp.saveImage(out, img)


def _shared_trainer(ds, **overrides):
    'Trainer run up to the mask window start, ready to branch.'
    config = TrainConfig.from_options(**overrides)
    if config.mask_end <= config.mask_start:
        gp.fail('an empty mask window leaves nothing to compare')
    t = Trainer(ds.train, config, ds.test, gt_cloud=ds.gt_cloud)
    return t.run(until=config.mask_start)


def cmd_sweep(args):
    ratios = sorted(gsprune.parseList(args.ratios))
    if not ratios or not all(0 <= r < 1 for r in ratios):
        gp.fail('ratios must lie in [0, 1)')
    ds = open_dataset(args.dataset, needs_test=True)
    out = outdir()
    base = _shared_trainer(ds, mask='off', prune_ratio=0.0)

    rows = []
    for r in Progress(ratios, gerund='sweeping'):
        t = base.branch(mask='off', prune_ratio=r).run()
        rep = t.evaluate()
        rows.append(['threshold', r, rep.mean_psnr, rep.mean_ssim, len(t.cloud)])

    mask = options.mask if options.mask != 'off' else 'gumbel'
    t = base.branch(mask=mask, prune_ratio=0.0).run()
    rep = t.evaluate()
    rows.append(['lp3dgs', t.prune_ratio, rep.mean_psnr, rep.mean_ssim, len(t.cloud)])
    write_table(out/'sweep.csv', SWEEP_COLUMNS, rows)


def cmd_compare(args):
    ds = open_dataset(args.dataset, needs_test=True)
    out = outdir()
    direct = options.mask_target if options.mask_target != 'score' else 'opacity-scale'
    base = _shared_trainer(ds, mask='gumbel', mask_target='score')

    rows = []
    cells = [(kind, target) for kind in ('gumbel', 'ste') for target in ('score', direct)]
    for kind, target in Progress(cells, gerund='comparing'):
        t = base.branch(mask=kind, mask_target=target).run()
        rep = t.evaluate()
        write_run_outputs(t, out/f'{kind}-{target}', rep)
        rows.append([kind, target, rep.mean_psnr, rep.mean_ssim, len(t.cloud), t.prune_ratio])
    write_table(out/'compare.csv', COMPARE_COLUMNS, rows)


def cmd_scores(args):
    model = load_model(args.model)
    ds = open_dataset(args.dataset)
    _, acc = compute_scores(model.cloud, ds.train, options.score, model.gate, model.gate_scales)
    write_table(outdir()/'scores.csv', ['index', 'raw', 'normalized'], score_table(acc))


COMMANDS = {
    'synth': cmd_synth,
    'train': cmd_train,
    'eval': cmd_eval,
    'render': cmd_render,
    'sweep': cmd_sweep,
    'compare': cmd_compare,
    'scores': cmd_scores,
}


def main_gsprune(argv=None):
    'Run one command from *argv* (default sys.argv).  Returns the exit code; usage errors raise SystemExit(2).'
    gp.options.reset()
    gp.applyPreset(gp.options.getdefault('preset'))   # so --help shows preset values
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.command == 'synth' and args.n_gaussians is not None and int(args.n_gaussians) < 1:
        parser.error('--n must be >= 1')
    try:
        gp.resolveOptions(AttrDict(vars(args)))
    except ExpectedException as e:
        parser.error(str(e))
    if not options.out:
        parser.error(f'{args.command} needs --out')

    config = gp.resolvedConfig()
    print(config, end='')
    COMMANDS[args.command](args)
    if args.command != 'render':
        (Path(options.out)/'config.txt').write_atomic(config)
    return 0


def gsprune_cli():
    rc = 1
    try:
        rc = main_gsprune()
    except SystemExit as e:
        rc = e.code if isinstance(e.code, int) else 2
    except BrokenPipeError:
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
    except ExpectedException:
        rc = 1
    except Exception as e:
        gp.exceptionCaught(e)
        rc = 1
    sys.stderr.flush()
    sys.stdout.flush()
    os._exit(rc)
