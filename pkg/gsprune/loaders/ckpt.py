'''
Native checkpoints: 8 magic bytes, a little-endian uint32 format version, then an uncompressed
numpy .npz payload.  Arrays are stored as-is; everything else goes in one JSON document
under the "meta" key.  No pickling on either side.
'''

import io
import json
import struct

import numpy as np

import gsprune
from gsprune import gp, GSPrune, AttrDict
from gsprune.core import GaussianCloud
from gsprune.masking import MaskState
from gsprune.optim import AdamState


CKPT_MAGIC = b'GSPRCKPT'
CKPT_VERSION = 1


@GSPrune.api
def save_ckpt(gp, p, arrays, meta):
    'Write the named *arrays* and the JSON-serializable *meta* dict to *p*.'
    buf = io.BytesIO()
    buf.write(CKPT_MAGIC)
    buf.write(struct.pack('<I', CKPT_VERSION))
    payload = {k: np.asarray(v) for k, v in arrays.items()}
    payload['meta'] = np.array(json.dumps(meta, sort_keys=True))
    np.savez(buf, **payload)
    p.write_atomic(buf.getvalue())


@GSPrune.api
def open_ckpt(gp, p):
    'Return AttrDict(arrays=..., meta=...) from checkpoint *p*.'
    data = p.read_bytes()
    if data[:len(CKPT_MAGIC)] != CKPT_MAGIC:
        gp.fail(f'{p.given}: not a gsprune checkpoint (bad magic)')
    hdr = len(CKPT_MAGIC)
    if len(data) < hdr + 4:
        gp.fail(f'{p.given}: truncated checkpoint header')
    version, = struct.unpack('<I', data[hdr:hdr+4])
    if version != CKPT_VERSION:
        gp.fail(f'{p.given}: checkpoint format version {version}, expected {CKPT_VERSION}')
    try:
        with np.load(io.BytesIO(data[hdr+4:]), allow_pickle=False) as npz:
            arrays = {k: npz[k] for k in npz.files}
    except Exception as e:
        gp.fail(f'{p.given}: corrupt checkpoint payload: {e}')
    meta = json.loads(str(arrays.pop('meta')))
    return AttrDict(arrays=arrays, meta=meta)


def save_checkpoint(cloud, mask, adam_state, config, iteration, path, arrays=None, meta=None):
    '''Everything needed to resume: the cloud (all fields), mask state, Adam moments and step counts,
    the config, the iteration, plus caller *arrays* and *meta*.'''
    out = {'cloud.' + k: getattr(cloud, k) for k in GaussianCloud.fields}
    m = dict(meta or {}, iteration=int(iteration), config=dict(config or {}))
    if mask is not None:
        out['mask.m'] = mask.m
        m['mask'] = dict(kind=mask.kind, mode=mask.mode, tau=mask.tau, seed=mask.seed,
                         epsilon=mask.epsilon, active=mask.active)
    if adam_state is not None:
        for k in adam_state.groups:
            out['adam.m.' + k] = adam_state.m[k]
            out['adam.v.' + k] = adam_state.v[k]
        m['adam'] = dict(beta1=adam_state.beta1, beta2=adam_state.beta2, eps=adam_state.eps, step=adam_state.step)
    out.update(arrays or {})
    gp.save_ckpt(gsprune.Path(path), out, m)


def load_checkpoint(path):
    'Inverse of save_checkpoint.  Returns AttrDict(cloud, mask, adam, config, iteration, arrays, meta).'
    ck = gp.openPath(path, filetype='ckpt')
    arrays, meta = ck.arrays, ck.meta
    missing = [k for k in GaussianCloud.fields if 'cloud.' + k not in arrays]
    if missing:
        gp.fail(f'{path}: checkpoint lacks cloud fields {", ".join(missing)}')
    cloud = GaussianCloud(**{k: arrays.pop('cloud.' + k) for k in GaussianCloud.fields})

    mask = None
    if 'mask' in meta:
        mm = meta['mask']
        mask = MaskState(0, mm['kind'], mm['mode'], mm['tau'], mm['seed'], mm['epsilon'], m=arrays.pop('mask.m'))
        mask.active = mm['active']

    adam = None
    if 'adam' in meta:
        am = meta['adam']
        adam = AdamState(am['beta1'], am['beta2'], am['eps'])
        for k, step in am['step'].items():
            adam.m[k] = arrays.pop('adam.m.' + k)
            adam.v[k] = arrays.pop('adam.v.' + k)
            adam.step[k] = int(step)

    return AttrDict(cloud=cloud, mask=mask, adam=adam, config=AttrDict(meta.get('config', {})),
                    iteration=int(meta['iteration']), arrays=arrays, meta=meta)
