'''
Gaussian clouds as binary little-endian PLY, in the vertex layout shared by 3DGS tools:
x y z nx ny nz f_dc_0..2 f_rest_0..44 opacity scale_0..2 rot_0..3, all float32.
SH is always written at degree 3 (f_rest channel-major); the cloud's own degree is kept in a header comment.
'''

import io

import numpy as np

from gsprune import gp, GSPrune
from gsprune.core import GaussianCloud, MAX_SH_DEGREE, sh_basis_count, sh_degree_for


PLY_BASIS = sh_basis_count(MAX_SH_DEGREE)
PLY_REST = 3*(PLY_BASIS - 1)
PLY_PROPERTIES = (['x', 'y', 'z', 'nx', 'ny', 'nz'] +
                  ['f_dc_%d' % i for i in range(3)] +
                  ['f_rest_%d' % i for i in range(PLY_REST)] +
                  ['opacity'] +
                  ['scale_%d' % i for i in range(3)] +
                  ['rot_%d' % i for i in range(4)])


def cloud_to_vertices(cloud):
    n = len(cloud)
    sh = np.zeros((n, PLY_BASIS, 3))
    b = min(PLY_BASIS, cloud.sh_coeffs.shape[1])
    sh[:, :b] = cloud.sh_coeffs[:, :b]
    rest = np.transpose(sh[:, 1:], (0, 2, 1)).reshape(n, -1)    # channel-major

    cols = np.concatenate([cloud.positions, np.zeros((n, 3)), sh[:, 0], rest,
                           cloud.opacity_logits[:, None], cloud.log_scales, cloud.rotations], axis=1)
    vertices = np.empty(n, dtype=[(k, '<f4') for k in PLY_PROPERTIES])
    for i, k in enumerate(PLY_PROPERTIES):
        vertices[k] = cols[:, i]
    return vertices


@GSPrune.api
def save_ply(gp, p, cloud):
    plyfile = gp.importExternal('plyfile')
    el = plyfile.PlyElement.describe(cloud_to_vertices(cloud), 'vertex')
    ply = plyfile.PlyData([el], text=False, byte_order='<', comments=['sh_degree %d' % cloud.sh_degree])
    buf = io.BytesIO()
    ply.write(buf)
    p.write_atomic(buf.getvalue())


def _field(vertex, name, fn):
    if name not in vertex.data.dtype.names:
        gp.fail(f'{fn}: vertex element has no property "{name}"')
    return np.asarray(vertex[name], dtype=float)


@GSPrune.api
def open_ply(gp, p):
    'Load a Gaussian cloud; SH is truncated to the degree recorded in the header, if any.'
    plyfile = gp.importExternal('plyfile')
    try:
        ply = plyfile.PlyData.read(str(p))
    except Exception as e:
        gp.fail(f'{p.given}: cannot parse PLY: {e}')

    if 'vertex' not in [el.name for el in ply.elements]:
        gp.fail(f'{p.given}: no vertex element')
    vertex = ply['vertex']
    names = vertex.data.dtype.names

    f = lambda k: _field(vertex, k, p.given)
    positions = np.stack([f('x'), f('y'), f('z')], axis=1)
    nrest = len([k for k in names if k.startswith('f_rest_')])
    if nrest % 3:
        gp.fail(f'{p.given}: {nrest} f_rest properties is not a multiple of 3')
    basis = 1 + nrest // 3
    sh_degree_for(basis)
    n = len(positions)

    sh = np.zeros((n, basis, 3))
    sh[:, 0] = np.stack([f('f_dc_%d' % i) for i in range(3)], axis=1)
    if nrest:
        rest = np.stack([f('f_rest_%d' % i) for i in range(nrest)], axis=1)
        sh[:, 1:] = np.transpose(rest.reshape(n, 3, basis - 1), (0, 2, 1))

    degree = sh_degree_for(basis)
    for c in ply.comments:
        if c.startswith('sh_degree '):
            degree = min(degree, int(c.split()[1]))
    sh = sh[:, :sh_basis_count(degree)]

    return GaussianCloud(positions,
                         np.stack([f('scale_%d' % i) for i in range(3)], axis=1),
                         np.stack([f('rot_%d' % i) for i in range(4)], axis=1),
                         f('opacity'),
                         sh)
