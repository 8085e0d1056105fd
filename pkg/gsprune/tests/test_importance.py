import numpy as np
import pytest

from gsprune import options, ExpectedException
from gsprune.core import GaussianCloud, rgb_to_sh_dc
from gsprune.importance import (ScoreAccumulator, accumulate_view, finalize_scores, compute_scores,
                                score_oracle, score_table, score_mode)

from gsprune.tests.conftest import random_cloud, small_cameras


class TestAccumulate:
    def test_running_max(self):
        acc = ScoreAccumulator(1, 'radsplat')
        acc.raw[0] = 0.4
        accumulate_view(acc, ([0.7], [0.9]))
        assert acc.raw[0] == 0.7
        accumulate_view(acc, ([0.2], [0.2]))
        assert acc.raw[0] == 0.7

    def test_running_sum(self):
        acc = ScoreAccumulator(1, 'minisplat')
        acc.raw[0] = 1.2
        accumulate_view(acc, ([0.1], [0.3]))
        assert acc.raw[0] == pytest.approx(1.5)

    def test_unseen_stays_zero(self):
        acc = ScoreAccumulator(3, 'radsplat-max')
        for v in range(4):
            accumulate_view(acc, ([0.1*v, 0, 0.5], [0.1*v, 0, 0.5]))
        assert acc.raw[1] == 0
        assert acc.views_seen == 4

    def test_length_mismatch(self):
        with pytest.raises(ExpectedException, match='accumulator has 2'):
            accumulate_view(ScoreAccumulator(2), ([0.1], [0.1]))

    def test_unknown_mode(self):
        with pytest.raises(ExpectedException, match='unknown score mode'):
            ScoreAccumulator(2, 'lightgaussian')

    def test_view_order_invariant(self):
        rng = np.random.default_rng(7)
        stats = [(rng.uniform(0, 1, 6), rng.uniform(0, 3, 6)) for _ in range(5)]
        for mode in ('radsplat', 'minisplat'):
            a, b = ScoreAccumulator(6, mode), ScoreAccumulator(6, mode)
            for s in stats:
                accumulate_view(a, s)
            for s in reversed(stats):
                accumulate_view(b, s)
            assert np.allclose(finalize_scores(a), finalize_scores(b), rtol=0, atol=1e-12)


class TestFinalize:
    def test_radsplat_identity(self):
        acc = ScoreAccumulator(2, 'radsplat')
        accumulate_view(acc, ([0.2, 0.9], [0.2, 0.9]))
        assert list(finalize_scores(acc)) == [0.2, 0.9]

    def test_minisplat_normalized(self):
        acc = ScoreAccumulator(2, 'minisplat')
        accumulate_view(acc, ([0, 0], [2.0, 8.0]))
        assert list(finalize_scores(acc)) == [0.25, 1.0]

    @pytest.mark.parametrize('mode', ['radsplat', 'minisplat'])
    def test_all_zero(self, mode):
        acc = ScoreAccumulator(3, mode)
        accumulate_view(acc, (np.zeros(3), np.zeros(3)))
        assert not finalize_scores(acc).any()

    def test_no_views(self):
        with pytest.raises(ExpectedException, match='no views'):
            finalize_scores(ScoreAccumulator(3))

    def test_table(self):
        acc = ScoreAccumulator(2, 'minisplat')
        accumulate_view(acc, ([0, 0], [1.0, 4.0]))
        assert score_table(acc) == [(0, 1.0, 0.25), (1, 4.0, 1.0)]


class TestScores:
    @pytest.mark.parametrize('mode', ['radsplat', 'minisplat'])
    @pytest.mark.parametrize('seed', range(3))
    def test_matches_oracle(self, mode, seed):
        'culled, tiled, early-exit scores agree with brute force over every pixel'
        cloud = random_cloud(seed, n=8, scale_range=(0.05, 0.25))
        views = small_cameras(count=3)
        options.tile_size = 4
        S, acc = compute_scores(cloud, views, mode)
        assert acc.views_seen == 3
        assert np.all((S >= 0) & (S <= 1))
        assert np.allclose(S, score_oracle(cloud, views, mode), atol=2e-3)

    def test_front_beats_occluded(self):
        def blob(z, scale, logit):
            return GaussianCloud([[0, 0, z]], np.log([[scale]*3]), [[1, 0, 0, 0]], [logit],
                                 rgb_to_sh_dc(np.full(3, 0.6))[None, None])
        cloud = GaussianCloud.concat(blob(0.0, 1.0, 20.0), blob(0.4, 0.2, 1.0), blob(-0.4, 0.2, 1.0))
        views = small_cameras(count=4, size=24)
        S = score_oracle(cloud, views, 'radsplat')
        assert S[0] >= S[1] and S[0] >= S[2]

    def test_gated_scores(self):
        'a closed gate removes a Gaussian from the scores'
        cloud = random_cloud(3, n=6)
        gate = np.ones(6)
        gate[2] = 0
        S, _ = compute_scores(cloud, small_cameras(count=2), 'radsplat', gate)
        assert S[2] == 0

    def test_empty_views(self):
        with pytest.raises(ExpectedException, match='no views'):
            compute_scores(random_cloud(0), [], 'radsplat')

    def test_option_default(self):
        options.score = 'minisplat'
        _, acc = compute_scores(random_cloud(0, n=3), small_cameras(count=1))
        assert acc.mode == score_mode('minisplat')
