import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pwainv.errors import NoLocation, PlantError
from pwainv.ilc import (
    FilterPair,
    IlcSession,
    LiftedInverse,
    LiftedModel,
    LiftedSignal,
    Scheme,
    build_filters,
    exchange_matrix,
    gradient_learning_matrix,
    ilc_iterate,
    lowpass_impulse_response,
    nrmse,
    peak_error,
    ptype_learning_matrix,
    run_trials,
)
from pwainv.inversion import invert
from pwainv.pwa import PwaModel

from conftest import lti_stable_nmp, random_rd1_model


def small_filters(n, n_edge=2):
    h = lowpass_impulse_response(-1.31, 0.5, 0.093, n)
    return build_filters(h, n_edge, n, 1)


class TestMetrics:
    def test_perfect_tracking(self):
        r = np.linspace(0, 1, 10)
        assert nrmse(r, r) == 0.0
        assert peak_error(r, r) == 0.0

    def test_constant_reference(self):
        assert nrmse(np.full(7, 2.5), np.zeros(7)) == pytest.approx(1.0)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31), st.integers(2, 50))
    def test_direct_formula(self, seed, n):
        rng = np.random.default_rng(seed)
        r, y = rng.normal(size=n), rng.normal(size=n)
        expected = np.sqrt(np.sum((r - y) ** 2)) / (np.sqrt(n) * np.max(np.abs(r)))
        assert nrmse(r, y) == pytest.approx(expected, rel=1e-12)
        assert peak_error(r, y) == np.max(np.abs(r - y))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            nrmse(np.ones(3), np.ones(4))

    def test_lifted_signal(self):
        s = LiftedSignal(np.zeros(999), "output", 1)
        assert s.N == 999
        assert s.times[0] == 1 and s.times[-1] == 999
        with pytest.raises(ValueError):
            LiftedSignal([1.0], "sideways", 1)


class TestFilters:
    def test_identity_impulse(self):
        h = np.zeros(20)
        h[0] = 1.0
        f = build_filters(h, 0, 20, 1)
        np.testing.assert_array_equal(f.Q, np.eye(20))

    def test_edge_mask_count(self):
        f = build_filters(lowpass_impulse_response(-1.31, 0.5, 0.093, 1000), 35, 1000, 1)
        d = np.diag(f.E)
        assert d.sum() == 930
        assert np.all(d[:35] == 0) and np.all(d[-35:] == 0) and np.all(d[35:-35] == 1)

    def test_exchange_identity(self):
        f = small_filters(40)
        J = exchange_matrix(40)
        np.testing.assert_allclose(f.Q, J @ f.F_toeplitz @ J @ f.F_toeplitz, atol=1e-15)
        np.testing.assert_allclose(f.Q, f.Q.T, atol=1e-15)

    def test_unit_dc_gain(self):
        h = lowpass_impulse_response(-1.31, 0.5, 0.093, 500)
        assert h.sum() == pytest.approx(1.0, abs=1e-12)

    def test_zero_phase(self):
        n = 1000
        f = small_filters(n, 35)
        t = np.arange(n)
        s = np.sin(2 * np.pi * t / 100.0)
        q = f.Q @ s
        inner = slice(200, 800)
        lags = range(-10, 11)
        xc = [np.dot(q[inner], np.roll(s, lag)[inner]) for lag in lags]
        assert list(lags)[int(np.argmax(xc))] == 0

    def test_length_checks(self):
        with pytest.raises(ValueError):
            build_filters(np.ones(5), 1, 10, 1)
        with pytest.raises(ValueError):
            build_filters(np.ones(10), 6, 10, 1)


class TestLearningMatrices:
    def test_ptype(self):
        L = ptype_learning_matrix(27.0, 6)
        np.testing.assert_array_equal(L, 27.0 * np.eye(6))
        assert not np.any(ptype_learning_matrix(0.0, 4))

    def test_gradient_lti_markov(self):
        fwd = lti_stable_nmp()
        lm = LiftedModel(fwd, 1)
        m = fwd.matrices(0, 0)
        L = gradient_learning_matrix(lm, np.zeros(12), 3.0)
        for i in range(12):
            for j in range(12):
                g = m.C @ np.linalg.matrix_power(m.A, i - j) @ m.B if i >= j else 0.0
                assert L[j, i] == pytest.approx(3.0 * g, abs=1e-14)
        assert not np.any(gradient_learning_matrix(lm, np.zeros(12), 0.0))

    def test_gradient_structure_switching(self):
        m = random_rd1_model(np.random.default_rng(2))
        lm = LiftedModel(m, 1)
        u = np.random.default_rng(3).normal(size=30)
        L = gradient_learning_matrix(lm, u, 1.0)
        np.testing.assert_array_equal(L, np.triu(L))

    def test_model_jacobian_finite_differences(self):
        m = random_rd1_model(np.random.default_rng(8))
        lm = LiftedModel(m, 1)
        u = np.random.default_rng(9).normal(size=25)
        J = lm.jacobian(u)
        base = lm.simulate(u).locations
        h = 1e-7
        for j in (3, 12, 20):
            e = np.zeros_like(u)
            e[j] = h
            if not (np.array_equal(lm.simulate(u + e).locations, base)
                    and np.array_equal(lm.simulate(u - e).locations, base)):
                continue
            fd = (lm(u + e) - lm(u - e)) / (2 * h)
            np.testing.assert_allclose(J[:, j], fd, rtol=1e-6, atol=1e-9)

    def test_ililc_lti_inverse(self):
        fwd = lti_stable_nmp()
        inv = invert(fwd)
        li = LiftedInverse(inv)
        n = 120
        L = li.jacobian(np.zeros(n))
        G = LiftedModel(fwd, 1).jacobian(np.zeros(n))
        interior = slice(30, 90)
        np.testing.assert_allclose((L @ G)[interior], np.eye(n)[interior], atol=1e-6)
        np.testing.assert_allclose((G @ L)[interior], np.eye(n)[interior], atol=1e-6)


class TestIterate:
    def test_zero_learning(self):
        f = small_filters(20)
        u = np.random.default_rng(0).normal(size=20)
        out = ilc_iterate(u, np.zeros(20), np.ones(20), np.zeros((20, 20)), f)
        np.testing.assert_allclose(out, np.diag(f.E) * (f.Q @ u))

    def test_filtered_error_cancels(self):
        f = small_filters(20)
        rng = np.random.default_rng(1)
        u, y = rng.normal(size=20), rng.normal(size=20)
        r = f.Q @ y
        out = ilc_iterate(u, y, r, rng.normal(size=(20, 20)), f)
        np.testing.assert_allclose(out, f.mask * (f.Q @ u), atol=1e-14)

    def test_three_samples(self):
        Q = np.array([[1.0, 0.5, 0.0], [0.5, 1.0, 0.5], [0.0, 0.5, 1.0]])
        f = FilterPair(Q, np.diag([0.0, 1.0, 1.0]), np.eye(3), exchange_matrix(3), 1)
        u, y, r = np.array([1.0, 2.0, 3.0]), np.array([0.0, 1.0, 0.0]), np.array([1.0, 1.0, 1.0])
        L = np.diag([2.0, 2.0, 2.0])
        # Qy = [.5, 1, .5]; r - Qy = [.5, 0, .5]; u + L e = [2, 2, 4]; Q(...) = [3, 5, 5]
        np.testing.assert_array_equal(ilc_iterate(u, y, r, L, f), [0.0, 5.0, 5.0])

    def test_edges_zero(self):
        f = small_filters(50, 5)
        rng = np.random.default_rng(4)
        out = ilc_iterate(rng.normal(size=50), rng.normal(size=50), rng.normal(size=50), rng.normal(size=(50, 50)), f)
        assert np.all(out[:5] == 0.0) and np.all(out[-5:] == 0.0)

    def test_dimension_mismatch(self):
        f = small_filters(10)
        with pytest.raises(ValueError):
            ilc_iterate(np.zeros(9), np.zeros(10), np.zeros(10), np.zeros((10, 10)), f)


class TestTrials:
    def _session(self, scheme=Scheme.PTYPE, gain=0.5, plant=None):
        fwd = lti_stable_nmp()
        lm = LiftedModel(fwd, 1)
        f = small_filters(60, 3)
        return IlcSession(scheme, gain, f, plant or (lambda u, trial: lm(u)),
                          inverter=LiftedInverse(invert(fwd)), model=lm)

    def test_single_trial_is_feedback_only(self):
        s = self._session()
        hist = run_trials(s, np.ones(60), 1)
        assert len(hist) == 1
        assert not np.any(hist[0].u)

    def test_deterministic(self):
        r = np.sin(np.arange(60) / 8.0)
        a = [h.nrmse for h in run_trials(self._session(Scheme.ILILC, 0.5), r, 4)]
        b = [h.nrmse for h in run_trials(self._session(Scheme.ILILC, 0.5), r, 4)]
        assert a == b

    def test_ililc_converges_on_model(self):
        r = np.exp(-((np.arange(60) - 30) / 6.0) ** 2)
        hist = run_trials(self._session(Scheme.ILILC, 1.0), r, 5)
        assert hist[-1].nrmse < 0.1 * hist[0].nrmse

    def test_plant_failure_reports_trial(self):
        def plant(u, trial):
            if trial == 2:
                raise NoLocation("boom")
            return np.zeros_like(u)

        with pytest.raises(PlantError) as info:
            run_trials(self._session(plant=plant), np.ones(60), 5)
        assert info.value.details["trial"] == 2

    def test_non_finite_output(self):
        with pytest.raises(PlantError):
            run_trials(self._session(plant=lambda u, t: np.full_like(u, np.nan)), np.ones(60), 2)

    def test_scheme_requirements(self):
        with pytest.raises(ValueError):
            IlcSession("ililc", 1.0, small_filters(10), lambda u, t: u)
        with pytest.raises(ValueError):
            IlcSession("gradient", 1.0, small_filters(10), lambda u, t: u)
