import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from hidalgo import Hidalgo, TwoNN
from hidalgo.synth import ManifoldSpec, generate, twonn_mle
from hidalgo.neighbors import DuplicatePointsError


@pytest.fixture(scope="module")
def cube():
    return generate(ManifoldSpec("hypercube", 400, 3, 5, None, 1.0, True, 4))[0].points


def test_params_and_clone():
    est = Hidalgo(n_components=4, prior="truncated", random_state=3)
    params = est.get_params()
    assert params["n_components"] == 4 and params["prior"] == "truncated"
    twin = clone(est)
    assert twin.get_params() == params and twin is not est


def test_fit_attributes(cube):
    est = Hidalgo(n_components=2, n_sweeps=200, burn_in=100, random_state=1).fit(cube)
    N = cube.shape[0]
    assert est.labels_.shape == est.id_median_.shape == (N,)
    assert est.psm_.shape == (N, N) and np.allclose(np.diag(est.psm_), 1)
    assert np.all(est.id_credible_[:, 0] <= est.id_credible_[:, 1])
    assert est.transform(cube).shape == (N, 1)
    assert np.isfinite(est.mean_log_posterior())


def test_refit_is_deterministic(cube):
    kw = dict(n_components=2, n_sweeps=100, burn_in=50, n_chains=2, random_state=9)
    a, b = Hidalgo(**kw).fit(cube), Hidalgo(**kw).fit(cube)
    assert [t.checksum() for t in a.traces_] == [t.checksum() for t in b.traces_]
    assert a.traces_[0].checksum() != a.traces_[1].checksum()
    assert len(a.trace_.sweeps) == 100


def test_threaded_chains_match_serial(cube):
    kw = dict(n_components=2, n_sweeps=60, burn_in=30, n_chains=3, random_state=2)
    a = Hidalgo(n_jobs=1, **kw).fit(cube)
    b = Hidalgo(n_jobs=3, **kw).fit(cube)
    assert [t.checksum() for t in a.traces_] == [t.checksum() for t in b.traces_]


def test_caps_with_truncated_prior(cube):
    est = Hidalgo(n_components=3, prior="truncated", n_sweeps=100, burn_in=50).fit(cube)
    assert est.trace_.d.max() <= cube.shape[1]


def test_duplicates_need_jitter():
    X = np.random.default_rng(0).random((50, 3))
    X[1] = X[0]
    with pytest.raises(DuplicatePointsError):
        Hidalgo(n_sweeps=20, burn_in=10).fit(X)
    est = Hidalgo(n_sweeps=20, burn_in=10, jitter=True).fit(X)
    assert est.labels_.shape == (50,)


def test_bad_loss(cube):
    with pytest.raises(ValueError, match="partition_loss"):
        Hidalgo(partition_loss="l2").fit(cube)


def test_not_fitted():
    with pytest.raises(NotFittedError):
        Hidalgo().transform(np.zeros((3, 2)))
    with pytest.raises(NotFittedError):
        TwoNN().dimension


class TestTwoNN:
    def test_matches_function(self, cube):
        est = TwoNN().fit(cube)
        assert est.dimension == twonn_mle(est.mu_)
        assert 2.5 < est.dimension < 3.5

    def test_linear(self, cube):
        assert abs(TwoNN(method="linear").fit(cube).dimension - 3) < 0.6

    def test_bad_method(self, cube):
        with pytest.raises(ValueError, match="method"):
            TwoNN(method="ols").fit(cube)
