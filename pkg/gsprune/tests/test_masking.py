import math

import numpy as np
import pytest

from gsprune import options, ExpectedException
from gsprune.masking import (MaskState, gumbel_from_uniform, sample_gumbel, gumbel_sigmoid, gate_values,
                             gate_forward, gate_backward, ste_mask, hard_threshold_keep, threshold_for_ratio,
                             ratio_keep_mask, prune_keep_mask, prune_cloud, mask_l1, mask_sigmoid_l1,
                             mask_regularizer, gate_bimodality, gate_table, mask_mode)
from gsprune.optim import AdamState
from gsprune.render import render_image

from gsprune.tests.conftest import random_cloud, small_cameras


EULER_GAMMA = 0.5772156649015329


class TestGumbel:
    def test_closed_form(self):
        assert gumbel_from_uniform(1/math.e) == pytest.approx(0.0, abs=1e-15)
        assert gumbel_from_uniform(math.exp(-math.e)) == pytest.approx(-1.0)

    def test_clamped(self):
        assert np.isfinite(gumbel_from_uniform(np.array([0.0, 1.0]))).all()

    def test_moments(self):
        g = sample_gumbel(np.random.default_rng(0), 400000)
        assert g.mean() == pytest.approx(EULER_GAMMA, abs=0.01)
        assert g.var() == pytest.approx(math.pi**2/6, abs=0.02)

    @pytest.mark.parametrize('x', [0.25, 1.0, 3.0])
    def test_logistic_difference(self, x):
        'P(gumbel_sigmoid > 1/2) = x/(1+x) for any tau'
        rng = np.random.default_rng(1)
        n = 200000
        v, _ = gumbel_sigmoid(np.full(n, x), 0.5, sample_gumbel(rng, n), sample_gumbel(rng, n))
        assert np.mean(v > 0.5) == pytest.approx(x/(1 + x), abs=0.005)

    def test_same_noise_same_draws(self):
        a = sample_gumbel(np.random.default_rng([3, 7, 0]), 5)
        b = sample_gumbel(np.random.default_rng([3, 7, 0]), 5)
        assert np.array_equal(a, b)


class TestGumbelSigmoid:
    def test_examples(self):
        assert gumbel_sigmoid(1.0, 0.5, 0.3, 0.3)[0] == 0.5
        assert gumbel_sigmoid(math.exp(0.5), 0.5)[0] == pytest.approx(0.731059, abs=1e-6)
        assert gumbel_sigmoid(0.0, 0.5, 1.0, -2.0) == (0.0, 0.0)

    def test_bad_tau(self):
        with pytest.raises(ExpectedException, match='tau'):
            gumbel_sigmoid(1.0, 0.0)

    @pytest.mark.parametrize('x,tau,g0,g1', [(0.3, 0.5, 0.1, -0.4), (2.0, 0.2, 0.0, 0.0), (1.1, 1.0, -1.0, 0.5)])
    def test_gradient(self, x, tau, g0, g1):
        h = 1e-6
        numeric = (gumbel_sigmoid(x+h, tau, g0, g1)[0] - gumbel_sigmoid(x-h, tau, g0, g1)[0]) / (2*h)
        assert gumbel_sigmoid(x, tau, g0, g1)[1] == pytest.approx(numeric, rel=1e-6)

    def test_vectorized(self):
        v, dv = gumbel_sigmoid(np.array([0.0, 1.0, 4.0]), 0.5)
        assert v[0] == 0 and dv[0] == 0
        assert v[1] == 0.5
        assert v[2] == pytest.approx(1/(1 + 4**-2))


class TestGates:
    def test_deterministic_examples(self):
        mask = MaskState(3, 'gumbel', 'score', tau=0.5)
        g = gate_values(mask, [1.0, 4.0, 0.0], deterministic=True)
        assert g[0] == 0.5
        assert g[1] == pytest.approx(0.941, abs=5e-4)
        assert g[2] == 0

    def test_zero_score_annihilates(self):
        mask = MaskState(2, 'gumbel', 'score', m=[5.0, 100.0])
        g = gate_values(mask, [0.0, 0.0], iteration=3)
        assert not g.any()

    def test_missing_scores(self):
        with pytest.raises(ExpectedException, match='needs importance scores'):
            gate_values(MaskState(2, 'gumbel', 'score'))

    def test_direct_ignores_scores(self):
        mask = MaskState(2, 'gumbel', 'opacity', m=[1.0, 1.0])
        assert list(gate_values(mask, deterministic=True)) == [0.5, 0.5]
        assert not MaskState(2, 'gumbel', 'opacity-scale').needs_scores
        assert MaskState(2, 'gumbel', 'opacity-scale').gates_scales

    def test_noise_repeatable(self):
        mask = MaskState(50, 'gumbel', 'opacity', seed=11)
        a = gate_values(mask, iteration=4)
        assert np.array_equal(a, gate_values(mask, iteration=4))
        assert not np.array_equal(a, gate_values(mask, iteration=5))

    def test_step_limit(self):
        'deterministic gates approach a step at m*S = 1 as tau shrinks'
        mask = MaskState(2, 'gumbel', 'score', tau=1e-3, m=[1.0, 1.0])
        g = gate_values(mask, [0.9, 1.1], deterministic=True)
        assert g[0] < 1e-6 and g[1] > 1 - 1e-6

    def test_backward_matches_differences(self):
        rng = np.random.default_rng(2)
        S = rng.uniform(0.1, 1, 6)
        mask = MaskState(6, 'gumbel', 'score', m=rng.uniform(0.5, 2, 6), seed=4)
        w = rng.normal(size=6)
        analytic = gate_backward(mask, S, w, iteration=9)
        h = 1e-6
        for i in range(6):
            mask.m[i] += h
            up = w @ gate_values(mask, S, iteration=9)
            mask.m[i] -= 2*h
            down = w @ gate_values(mask, S, iteration=9)
            mask.m[i] += h
            assert analytic[i] == pytest.approx((up - down)/(2*h), rel=1e-5, abs=1e-9)

    def test_unknown(self):
        with pytest.raises(ExpectedException):
            MaskState(2, 'concrete')
        with pytest.raises(ExpectedException, match='unknown mask target'):
            mask_mode('scale')
        with pytest.raises(ExpectedException, match='tau'):
            MaskState(2, tau=-1)


class TestSTE:
    def test_examples(self):
        fwd, grad = ste_mask(0.0, 0.01)
        assert (fwd, grad) == (1.0, 0.25)
        fwd, grad = ste_mask(-10.0, 0.5)
        assert fwd == 0.0
        assert grad == pytest.approx(4.5e-5, rel=0.01)

    def test_gate_surrogate(self):
        mask = MaskState(2, 'ste', 'opacity', m=[0.0, -10.0], epsilon=0.5)
        gate, dgate = gate_forward(mask)
        assert list(gate) == [0.0, 0.0]
        assert dgate[0] == 0.25
        mask.epsilon = 0.01
        assert list(gate_values(mask)) == [1.0, 0.0]

    def test_regularizer(self):
        val, grad = mask_sigmoid_l1([0.0, 0.0])
        assert val == 0.5
        assert list(grad) == [0.125, 0.125]
        assert mask_regularizer(MaskState(2, 'ste', m=[0.0, 0.0]))[0] == 0.5


class TestThreshold:
    def test_keep(self):
        assert list(hard_threshold_keep([0.1, 0.9], 0.5)) == [False, True]
        assert hard_threshold_keep([0.0, 0.3], 0).all()
        assert not hard_threshold_keep([0.2, 0.3], np.nextafter(0.3, 1)).any()

    def test_ratio(self):
        S = [0.3, 0.1, 0.4, 0.2]
        t = threshold_for_ratio(S, 0.5)
        assert list(hard_threshold_keep(S, t)) == [True, False, True, False]
        assert list(ratio_keep_mask(S, 0.5)) == [True, False, True, False]

    def test_ratio_zero(self):
        assert ratio_keep_mask([0.5, 0.1, 0.0], 0).all()
        assert hard_threshold_keep([0.5, 0.1, 0.0], threshold_for_ratio([0.5, 0.1, 0.0], 0)).all()

    @pytest.mark.parametrize('ratio,pruned', [(0.1, 1), (0.25, 2), (0.5, 4), (0.9, 8)])
    def test_ceil_count(self, ratio, pruned):
        keep = ratio_keep_mask(np.random.default_rng(0).uniform(size=8), ratio)
        assert (~keep).sum() == pruned

    def test_ties(self):
        keep = ratio_keep_mask([0.5]*6, 0.5)
        assert list(keep) == [False]*3 + [True]*3

    def test_bad_ratio(self):
        with pytest.raises(ExpectedException, match='outside'):
            ratio_keep_mask([0.1, 0.2], 1.0)


class TestPrune:
    def test_drops_closed_gate(self):
        cloud = random_cloud(0, n=2)
        mask = MaskState(2, 'gumbel', 'opacity', m=[50.0, 0.001])
        assert list(gate_values(mask, deterministic=True).round(2)) == [1.0, 0.0]
        pruned, count = prune_cloud(cloud, mask)
        assert count == 1
        assert len(pruned) == 1
        assert np.array_equal(pruned.positions, cloud.positions[:1])
        assert list(pruned.mask_params) == [50.0]

    def test_all_open(self):
        cloud = random_cloud(0, n=4)
        pruned, count = prune_cloud(cloud, MaskState(4, 'gumbel', 'opacity', m=np.full(4, 2.0)))
        assert count == 0
        assert np.array_equal(pruned.positions, cloud.positions)

    def test_empty_model(self):
        cloud = random_cloud(0, n=3)
        with pytest.raises(ExpectedException, match='empty model after prune'):
            prune_cloud(cloud, MaskState(3, 'gumbel', 'opacity', m=np.full(3, 1e-3)))

    def test_ste_keeps_open_gates(self):
        mask = MaskState(3, 'ste', 'opacity', m=[0.0, -10.0, 3.0])
        assert list(prune_keep_mask(mask)) == [True, False, True]

    def test_gate_prune_option(self):
        mask = MaskState(2, 'gumbel', 'opacity', m=[1.0, 2.0])
        assert list(prune_keep_mask(mask)) == [True, True]
        options.gate_prune = 0.6
        assert list(prune_keep_mask(mask)) == [False, True]

    def test_optimizer_compacted(self):
        cloud = random_cloud(0, n=3)
        adam = AdamState.for_cloud(cloud)
        adam.m['positions'][:] = np.arange(9.0).reshape(3, 3)
        pruned, count = prune_cloud(cloud, MaskState(3, 'gumbel', 'opacity', m=[2.0, 1e-3, 2.0]), adam=adam)
        assert count == 1 and len(pruned) == 2
        assert np.array_equal(adam.m['positions'], [[0, 1, 2], [6, 7, 8]])
        assert adam.v['rotations'].shape == (2, 4)

    @pytest.mark.parametrize('seed', range(4))
    def test_pruned_render_matches_gated(self, seed):
        'removing gates below 0.05 barely changes the gated image'
        rng = np.random.default_rng(seed)
        cloud = random_cloud(seed, n=8)
        closed = rng.permutation(8)[:2]
        m = rng.uniform(20, 100, 8)
        m[closed] = rng.uniform(0.05, 0.15, 2)
        mask = MaskState(8, 'gumbel', 'opacity', m=m)
        gate = gate_values(mask, deterministic=True)
        assert gate[closed].max() < 0.05
        pruned, count = prune_cloud(cloud, mask)
        assert count == 2
        for cam in small_cameras():
            gated, _ = render_image(cloud, cam, gate)
            plain, _ = render_image(pruned, cam)
            assert np.abs(gated - plain).mean() <= 1e-2


class TestRegularizer:
    def test_examples(self):
        assert mask_l1([1, 1, 1, 1])[0] == 1.0
        assert mask_l1([0, 2])[0] == 1.0
        assert list(mask_l1([0.5, 2])[1]) == [0.5, 0.5]

    def test_empty(self):
        with pytest.raises(ExpectedException, match='empty mask'):
            mask_l1([])


class TestDiagnostics:
    def test_bimodality(self):
        assert gate_bimodality([0.0, 0.01, 0.5, 0.99, 1.0]) == pytest.approx(0.2)
        assert gate_bimodality([]) == 0.0

    def test_gate_table(self):
        mask = MaskState(3, 'gumbel', 'score', m=[1.0, 1.0, 2.0], seed=1)
        t = gate_table(mask, [1.0, 0.5, 0.0], iteration=2)
        assert list(t['index']) == [0, 1, 2]
        assert t['gate'][0] == 0.5
        assert t['gate'][2] == 0 and t['gate_sample'][2] == 0
        assert t['sigmoid'][0] == pytest.approx(1/(1 + math.exp(-1)))

    def test_clamp(self):
        mask = MaskState(3, 'gumbel', m=[-1.0, 0.0, 2.0])
        mask.clamp()
        assert list(mask.m) == [options.m_floor, options.m_floor, 2.0]
        ste = MaskState(2, 'ste', m=[-3.0, 1.0])
        ste.clamp()
        assert list(ste.m) == [-3.0, 1.0]

    def test_take(self):
        mask = MaskState(4, 'ste', 'opacity', m=[1.0, 2.0, 3.0, 4.0], seed=5)
        t = mask.take([3, 1])
        assert list(t.m) == [4.0, 2.0]
        assert (t.kind, t.mode, t.seed) == ('ste', 'direct-opacity', 5)
