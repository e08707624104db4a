import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gmrfsel.errors import ConfigurationError, InfeasibleError
from gmrfsel.sampler import (
    SampleBatch,
    batch_from_bytes,
    batch_from_csv,
    batch_to_bytes,
    batch_to_csv,
    derived_seed,
    read_batch,
    sample_field,
    scenario_theta,
    write_batch,
)
from gmrfsel.spectral import CovarianceModel, ThetaField, covariance_function

from conftest import random_positive_theta


def test_iid_variance():
    batch = sample_field(CovarianceModel(ThetaField.zeros(10), 1.0), 1000, seed=3)
    x = batch.data.ravel()
    assert x.size == 10**5
    assert abs(x.var() - 1.0) < 3 * np.sqrt(2 / x.size)
    assert abs(x.mean()) < 4 / np.sqrt(x.size)


def test_neighbour_covariance_matches():
    cov = CovarianceModel(scenario_theta("iso_m1", 8, a=0.15))
    X = sample_field(cov, 20000, seed=11).data
    prod = X[:, 0, 0] * X[:, 1, 0]
    se = prod.std() / np.sqrt(prod.size)
    assert abs(prod.mean() - covariance_function(cov)[1, 0]) < 3 * se


def test_stationarity_two_bases():
    cov = CovarianceModel(scenario_theta("iso_m1", 8, a=0.2))
    X = sample_field(cov, 20000, seed=5).data
    a = X[:, 0, 0] * X[:, 0, 1]
    b = X[:, 3, 5] * X[:, 3, 6]
    se = np.sqrt(a.var() / a.size + b.var() / b.size)
    assert abs(a.mean() - b.mean()) < 4 * se


def test_deterministic():
    cov = CovarianceModel(random_positive_theta(np.random.default_rng(0), 6))
    assert sample_field(cov, 4, 42) == sample_field(cov, 4, 42)
    assert sample_field(cov, 4, 42) != sample_field(cov, 4, 43)


@pytest.mark.parametrize("threads", [2, 3])
def test_threads_match_sequential(threads):
    cov = CovarianceModel(scenario_theta("iso_m1", 9, a=0.1))
    assert sample_field(cov, 7, 99, threads=threads) == sample_field(cov, 7, 99)


def test_replications_independent_of_n():
    cov = CovarianceModel(scenario_theta("iso_m1", 6, a=0.1))
    small = sample_field(cov, 3, 8).data
    large = sample_field(cov, 6, 8).data
    assert np.array_equal(small, large[:3])


def test_infeasible_rejected():
    with pytest.raises(InfeasibleError):
        sample_field(ThetaField.zeros(4), 1, 0)


@pytest.mark.parametrize("n", [0, -1, 1.5])
def test_bad_n(n):
    with pytest.raises(ConfigurationError):
        sample_field(CovarianceModel(ThetaField.zeros(4)), n, 0)


def test_derived_seed_stable():
    assert derived_seed(1, 2, 3) == derived_seed(1, 2, 3)
    assert derived_seed(1, 2, 3) != derived_seed(1, 3, 2)
    assert 0 <= derived_seed(2**64 - 1, 7) < 2**64


class TestPresets:
    def test_zero(self):
        assert ThetaField.zeros(10) == scenario_theta("zero", 10)

    def test_iso_m1(self):
        t = scenario_theta("iso-m1", 6, a=0.2)
        assert np.count_nonzero(t.coeffs) == 4
        assert t.l1_norm() == pytest.approx(0.8)
        assert {(1, 0), (5, 0), (0, 1), (0, 5)} == t.support()

    def test_hardcase(self):
        t = scenario_theta("hardcase", 8, alpha=0.1)
        assert t.support() == {(2, 2), (2, 6), (6, 2), (6, 6)}
        assert np.all(t.coeffs[t.coeffs != 0] == 0.1)

    @pytest.mark.parametrize(
        "name,p,params,exc",
        [
            ("iso_m1", 8, {"a": 0.3}, InfeasibleError),
            ("iso_m1", 8, {"a": -0.25}, InfeasibleError),
            ("hardcase", 10, {"alpha": 0.1}, ConfigurationError),
            ("hardcase", 8, {"alpha": 0.3}, InfeasibleError),
            ("bogus", 8, {}, ConfigurationError),
        ],
    )
    def test_errors(self, name, p, params, exc):
        with pytest.raises(exc):
            scenario_theta(name, p, **params)


class TestBatchFormat:
    def test_layout(self):
        b = SampleBatch(np.arange(2 * 9, dtype=float).reshape(2, 3, 3), seed=5)
        blob = batch_to_bytes(b)
        assert blob[:4] == b"GMRF"
        assert int.from_bytes(blob[4:8], "little") == 1
        assert int.from_bytes(blob[8:12], "little") == 3
        assert int.from_bytes(blob[12:16], "little") == 2
        assert int.from_bytes(blob[16:24], "little") == 5
        assert np.array_equal(np.frombuffer(blob[24:], "<f8"), np.arange(18.0))

    def test_round_trip(self, tmp_path):
        b = sample_field(CovarianceModel(scenario_theta("iso_m1", 5, a=0.1)), 3, 2**63 + 5)
        write_batch(b, tmp_path / "b.gmrf")
        assert read_batch(tmp_path / "b.gmrf") == b
        assert batch_from_csv(batch_to_csv(b), seed=b.seed) == b

    def test_csv_shape(self):
        b = sample_field(CovarianceModel(ThetaField.zeros(4)), 3, 1)
        rows = batch_to_csv(b).strip().split("\n")
        assert len(rows) == 3 and all(len(r.split(",")) == 16 for r in rows)

    @pytest.mark.parametrize(
        "mutate",
        [
            lambda blob: blob[:10],
            lambda blob: b"XXXX" + blob[4:],
            lambda blob: blob[:4] + (2).to_bytes(4, "little") + blob[8:],
            lambda blob: blob[:-8],
        ],
    )
    def test_rejects_corrupt(self, mutate):
        blob = batch_to_bytes(SampleBatch(np.zeros((1, 3, 3))))
        with pytest.raises(ConfigurationError):
            batch_from_bytes(mutate(blob))

    def test_validation(self):
        with pytest.raises(ConfigurationError):
            SampleBatch(np.zeros((2, 3, 4)))
        with pytest.raises(ConfigurationError):
            SampleBatch(np.full((1, 2, 2), np.inf))
        with pytest.raises(ConfigurationError):
            SampleBatch(np.zeros((1, 2, 2)), seed=-1)
        assert SampleBatch(np.zeros((3, 3))).n == 1


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**64 - 1), p=st.integers(2, 9), n=st.integers(1, 4))
def test_batch_bytes_round_trip(seed, p, n):
    cov = CovarianceModel(ThetaField.zeros(p), 1.0)
    b = sample_field(cov, n, seed)
    assert batch_from_bytes(batch_to_bytes(b)) == b
    assert np.all(np.isfinite(b.data))
