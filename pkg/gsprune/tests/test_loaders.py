import numpy as np
import pytest

from gsprune import gp, ExpectedException, Path, AttrDict
from gsprune.data import orbit_cameras, render_dataset, float32_rounded
from gsprune.masking import MaskState
from gsprune.optim import AdamState
from gsprune.loaders.ckpt import save_checkpoint, load_checkpoint, CKPT_MAGIC
from gsprune.loaders.ply import PLY_PROPERTIES

from gsprune.tests.conftest import random_cloud


class TestPLY:
    @pytest.mark.parametrize('degree', [0, 1, 3])
    def test_roundtrip(self, tmp_path, degree):
        cloud = float32_rounded(random_cloud(degree, n=7, sh_degree=degree))
        gp.save_ply(Path(tmp_path/'c.ply'), cloud)
        back = gp.openPath(tmp_path/'c.ply')
        assert back.sh_degree == degree
        for k in cloud.param_groups:
            assert np.array_equal(getattr(back, k), getattr(cloud, k)), k

    def test_float32_layout(self, tmp_path):
        plyfile = pytest.importorskip('plyfile')
        gp.save_ply(Path(tmp_path/'c.ply'), random_cloud(0, n=3, sh_degree=1))
        ply = plyfile.PlyData.read(str(tmp_path/'c.ply'))
        names = ply['vertex'].data.dtype.names
        assert list(names) == PLY_PROPERTIES
        assert all(ply['vertex'].data.dtype[k] == np.dtype('<f4') for k in names)
        assert 'sh_degree 1' in ply.comments

    def test_missing_property(self, tmp_path):
        plyfile = pytest.importorskip('plyfile')
        v = np.zeros(2, dtype=[(k, '<f4') for k in ('x', 'y', 'z', 'f_dc_0', 'f_dc_1', 'f_dc_2', 'opacity')])
        plyfile.PlyData([plyfile.PlyElement.describe(v, 'vertex')]).write(str(tmp_path/'bad.ply'))
        with pytest.raises(ExpectedException, match='no property "scale_0"'):
            gp.openPath(tmp_path/'bad.ply')

    def test_not_a_ply(self, tmp_path):
        (tmp_path/'junk.ply').write_bytes(b'hello')
        with pytest.raises(ExpectedException, match='cannot parse PLY'):
            gp.openPath(tmp_path/'junk.ply')

    def test_missing_file(self, tmp_path):
        with pytest.raises(ExpectedException, match='does not exist'):
            gp.openPath(tmp_path/'nope.ply')


class TestImages:
    def test_png(self, tmp_path):
        img = np.random.default_rng(0).uniform(0, 1, (5, 7, 3))
        gp.save_png(Path(tmp_path/'a.png'), img)
        back = gp.openPath(tmp_path/'a.png')
        assert back.shape == (5, 7, 3)
        assert np.abs(back - img).max() <= 0.5/255 + 1e-12

    def test_npy_exact(self, tmp_path):
        img = np.random.default_rng(1).uniform(0, 1, (4, 4, 3))
        gp.saveImage(tmp_path/'v', img)
        assert (tmp_path/'v.png').exists()
        assert np.array_equal(gp.openImage(tmp_path/'v'), img)

    def test_png_fallback(self, tmp_path):
        gp.save_png(Path(tmp_path/'w.png'), np.ones((2, 2, 3)))
        assert np.array_equal(gp.openImage(tmp_path/'w'), np.ones((2, 2, 3)))

    def test_bad_shape(self, tmp_path):
        with pytest.raises(ExpectedException, match='cannot save image'):
            gp.save_png(Path(tmp_path/'x.png'), np.zeros((3, 3)))

    def test_no_image(self, tmp_path):
        with pytest.raises(ExpectedException, match='no image'):
            gp.openImage(tmp_path/'none')


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        cloud = random_cloud(2, n=4)
        cloud.mask_params[:] = [1, 2, 3, 4]
        mask = MaskState(4, 'ste', 'opacity-scale', tau=0.3, seed=9, epsilon=0.02, m=[0.5, 0.1, 2.0, 1.0])
        mask.active = False
        adam = AdamState.for_cloud(cloud)
        adam.m['positions'][:] = 0.25
        adam.step['positions'] = 7
        save_checkpoint(cloud, mask, adam, {'iters': 10, 'mask': 'ste'}, 5, tmp_path/'r.ckpt',
                        arrays={'scores': np.arange(4.0)}, meta={'note': 'x'})
        ck = load_checkpoint(tmp_path/'r.ckpt')
        assert ck.cloud == cloud
        assert (ck.mask.kind, ck.mask.mode, ck.mask.tau, ck.mask.seed, ck.mask.epsilon, ck.mask.active) == \
               ('ste', 'direct-opacity-scale', 0.3, 9, 0.02, False)
        assert list(ck.mask.m) == [0.5, 0.1, 2.0, 1.0]
        assert ck.adam.step['positions'] == 7 and ck.adam.step['sh_coeffs'] == 0
        assert np.all(ck.adam.m['positions'] == 0.25)
        assert ck.config == AttrDict(iters=10, mask='ste')
        assert ck.iteration == 5
        assert list(ck.arrays['scores']) == [0, 1, 2, 3]
        assert ck.meta['note'] == 'x'

    def test_without_mask(self, tmp_path):
        save_checkpoint(random_cloud(0, n=2), None, None, {}, 0, tmp_path/'s.ckpt')
        ck = load_checkpoint(tmp_path/'s.ckpt')
        assert ck.mask is None and ck.adam is None

    def test_bad_magic(self, tmp_path):
        (tmp_path/'b.ckpt').write_bytes(b'NOTACKPT' + b'\0'*16)
        with pytest.raises(ExpectedException, match='bad magic'):
            load_checkpoint(tmp_path/'b.ckpt')

    def test_version(self, tmp_path):
        (tmp_path/'v.ckpt').write_bytes(CKPT_MAGIC + (99).to_bytes(4, 'little') + b'\0'*16)
        with pytest.raises(ExpectedException, match='version 99'):
            load_checkpoint(tmp_path/'v.ckpt')

    def test_truncated(self, tmp_path):
        (tmp_path/'t.ckpt').write_bytes(CKPT_MAGIC + b'\1')
        with pytest.raises(ExpectedException, match='truncated'):
            load_checkpoint(tmp_path/'t.ckpt')


class TestDatasetDir:
    def test_roundtrip(self, tmp_path):
        gt = float32_rounded(random_cloud(3, n=5))
        ds = render_dataset(gt, orbit_cameras((0, 0, 0), 3.0, 6, 12, 50.0), 3)
        gp.save_dataset(tmp_path/'ds', ds)
        back = gp.openPath(tmp_path/'ds', filetype='dataset')
        assert [v.name for v in back.test] == ['0000', '0003']
        assert len(back.train) == 4
        assert back.gt_cloud == gt
        for a, b in zip(ds.views, back.views):
            assert np.array_equal(a.image, b.image)
            assert np.allclose(a.camera.world_to_camera, b.camera.world_to_camera, atol=1e-15)
            assert a.camera.fx == b.camera.fx

    def test_not_a_dataset(self, tmp_path):
        with pytest.raises(ExpectedException, match='not a dataset directory'):
            gp.openPath(tmp_path, filetype='dataset')
