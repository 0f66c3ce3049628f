import numpy as np
import pytest

from mfcce.abatement import AbatementParams
from mfcce.grids import TimeGrid
from mfcce.model import InitialLaw, LQModelSpec
from mfcce.riccati import solve_mfc, solve_ne

# benchmark configuration used throughout: T=5, a=2, b=1, eps=1, nu1=0.1
BENCH = dict(a=2.0, b=1.0, eps=1.0, nu1=0.1, horizon=5.0)
BENCH_LAW = (0.6, 0.06)


@pytest.fixture(scope="session")
def bench_params():
    return AbatementParams(**BENCH)


@pytest.fixture(scope="session")
def bench_spec(bench_params):
    return bench_params.to_lq()


@pytest.fixture(scope="session")
def grid2000(bench_params):
    return TimeGrid(bench_params.horizon, 2000)


@pytest.fixture(scope="session")
def bench_ne(bench_spec, grid2000):
    return solve_ne(bench_spec, grid2000)


@pytest.fixture(scope="session")
def bench_mfc(bench_spec, grid2000):
    return solve_mfc(bench_spec, grid2000)


def make_random_spec(seed=0, d=2, k=2, horizon=1.0):
    """A validated multivariate model with every coefficient nonzero."""
    rng = np.random.default_rng(seed)

    def sym(scale):
        m = rng.normal(size=(d, d))
        return scale * 0.5 * (m + m.T)

    def psd(scale):
        m = rng.normal(size=(d, d))
        return scale * (m @ m.T) / d

    Q = np.eye(d) + psd(0.3)
    R = np.eye(k) + 0.3 * (lambda m: m @ m.T)(rng.normal(size=(k, k))) / k
    S = 0.25 * rng.normal(size=(k, d))  # |S|^2 well below d1*d2
    mean = rng.normal(size=d) * 0.5
    cov = psd(0.2)
    initial = InitialLaw.gaussian(mean, cov)
    return LQModelSpec.from_constants(
        horizon,
        initial,
        d=d,
        k=k,
        A=0.4 * rng.normal(size=(d, d)),
        B=rng.normal(size=(d, k)),
        sigma=0.5 * rng.normal(size=(d, d)),
        Q=Q,
        Q_bar=sym(0.4),
        Q_tilde=sym(0.4),
        R=R,
        S=S,
        L=rng.normal(size=d),
        q=0.5 * rng.normal(size=d),
        r=0.5 * rng.normal(size=k),
        H=psd(0.3),
        H_bar=psd(0.3),
        H_tilde=psd(0.3),
    )


@pytest.fixture(scope="session")
def random_spec():
    return make_random_spec(seed=7)


@pytest.fixture(scope="session")
def random_grid(random_spec):
    return TimeGrid(random_spec.horizon, 800)
