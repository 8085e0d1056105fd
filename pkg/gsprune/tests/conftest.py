import numpy as np
import pytest

from gsprune import gp, options
from gsprune.core import GaussianCloud, rgb_to_sh_dc
from gsprune.data import orbit_cameras, random_quaternions


def pytest_addoption(parser):
    parser.addoption('--runslow', action='store_true', default=False, help='run slow benchmarks')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow'):
        return
    skip = pytest.mark.skip(reason='needs --runslow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip)


@pytest.fixture(autouse=True)
def reset_options():
    """Every test starts from declared option defaults, quietly."""
    gp.options.reset()
    options.quiet = True
    gp.statusHistory.clear()
    yield
    gp.options.reset()


@pytest.fixture
def smooth_raster():
    """No alpha_min skip and no early exit, so the renderer is smooth in every parameter."""
    options.alpha_min = 0.0
    options.t_min = 0.0


def random_cloud(seed, n=5, sh_degree=1, box=0.4, scale_range=(0.15, 0.4), opacity_range=(0.3, 0.85)):
    rng = np.random.default_rng(seed)
    nb = (sh_degree+1)**2
    sh = rng.normal(0, 0.05, (n, nb, 3))
    sh[:, 0] = rgb_to_sh_dc(rng.uniform(0.3, 0.8, (n, 3)))
    opacity = rng.uniform(*opacity_range, n)
    return GaussianCloud(rng.uniform(-box, box, (n, 3)),
                         np.log(rng.uniform(*scale_range, (n, 3))),
                         random_quaternions(rng, n) * rng.uniform(0.5, 2.0, (n, 1)),
                         np.log(opacity) - np.log1p(-opacity),
                         sh)


def small_cameras(count=4, size=16, radius=3.0, fov=50.0):
    return orbit_cameras((0.0, 0.0, 0.0), radius, count, size, fov, elevations=(20.0, -10.0))


@pytest.fixture
def cameras():
    return small_cameras()
