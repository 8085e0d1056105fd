import math

import numpy as np
import pytest

from gsprune import options, ExpectedException, AttrDict
from gsprune.optim import AdamState, adam_step, expon_lr, group_learning_rates

from gsprune.tests.conftest import random_cloud


def single(value=1.0):
    st = AdamState()
    st.add_group('x', (1,))
    return {'x': np.array([value])}, st


class TestAdam:
    def test_first_step(self):
        p, st = single()
        adam_step(p, {'x': np.array([1.0])}, st, 0.01)
        assert p['x'][0] == pytest.approx(0.99, abs=1e-12)
        assert st.step['x'] == 1

    def test_first_step_sign_only(self):
        'the bias-corrected first step has magnitude lr whatever the gradient size'
        for g in (1e-3, 7.0, -250.0):
            p, st = single(0.0)
            adam_step(p, {'x': np.array([g])}, st, 0.01)
            assert p['x'][0] == pytest.approx(-0.01*math.copysign(1, g), rel=1e-9)

    def test_zero_gradient(self):
        p, st = single(0.5)
        for _ in range(3):
            adam_step(p, {'x': np.zeros(1)}, st, 0.1)
        assert p['x'][0] == 0.5

    def test_groups_independent(self):
        cloud = random_cloud(0, n=3)
        st = AdamState.for_cloud(cloud)
        before = cloud.log_scales.copy()
        params = {k: getattr(cloud, k) for k in cloud.param_groups}
        adam_step(params, {'positions': np.ones((3, 3))}, st, {'positions': 0.01})
        assert np.array_equal(cloud.log_scales, before)
        assert st.step == dict(positions=1, log_scales=0, rotations=0, opacity_logits=0, sh_coeffs=0)

    def test_nonfinite(self):
        p, st = single()
        with pytest.raises(ExpectedException, match='non-finite gradient in group x'):
            adam_step(p, {'x': np.array([np.nan])}, st, 0.01)

    def test_shape_mismatch(self):
        p, st = single()
        with pytest.raises(ExpectedException, match='group x'):
            adam_step(p, {'x': np.ones(2)}, st, 0.01)

    def test_compact_and_grow(self):
        st = AdamState()
        st.add_group('x', (3, 2))
        st.m['x'][:] = [[1, 1], [2, 2], [3, 3]]
        st.compact([0, 2])
        assert st.m['x'].tolist() == [[1, 1], [3, 3]]
        st.grow([1])
        assert st.m['x'].tolist() == [[1, 1], [3, 3], [0, 0]]
        assert st.v['x'].shape == (3, 2)

    def test_copy_independent(self):
        p, st = single()
        c = st.copy()
        adam_step(p, {'x': np.ones(1)}, st, 0.01)
        assert c.step['x'] == 0 and not c.m['x'].any()

    def test_config_betas(self):
        cfg = AttrDict(adam_beta1=0.5, adam_beta2=0.75, adam_eps=1e-8)
        st = AdamState.for_cloud(random_cloud(0, n=2), config=cfg)
        assert (st.beta1, st.beta2, st.eps) == (0.5, 0.75, 1e-8)
        options.adam_beta1 = 0.8
        assert AdamState().beta1 == 0.8


class TestSchedule:
    def test_endpoints(self):
        assert expon_lr(0, 1e-2, 1e-4, 100) == pytest.approx(1e-2)
        assert expon_lr(100, 1e-2, 1e-4, 100) == pytest.approx(1e-4)
        assert expon_lr(500, 1e-2, 1e-4, 100) == pytest.approx(1e-4)

    def test_log_linear(self):
        assert expon_lr(50, 1e-2, 1e-4, 100) == pytest.approx(1e-3)

    def test_constant(self):
        assert expon_lr(30, 0.05, 0.05, 100) == 0.05

    def test_group_rates(self):
        lrs = group_learning_rates(0, 100, extent=2.0)
        assert lrs['positions'] == pytest.approx(2*options.lr_position)
        assert lrs['opacity_logits'] == options.lr_opacity
        assert lrs['mask_params'] == options.lr_mask
        assert group_learning_rates(100, 100, 2.0)['positions'] == pytest.approx(2*options.lr_position_final)

    def test_config_rates(self):
        cfg = AttrDict({k: options[k] for k in ('lr_position', 'lr_position_final', 'lr_opacity', 'lr_scale',
                                                 'lr_rotation', 'lr_sh', 'lr_mask')})
        cfg.lr_mask = 0.25
        assert group_learning_rates(0, 10, config=cfg)['mask_params'] == 0.25
