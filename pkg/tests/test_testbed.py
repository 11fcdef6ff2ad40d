import numpy as np
import pytest
from scipy import optimize

from bayescal import testbed as tb

# hand trace of the pinned surrogate at the default noon input and reference theta
PV_NOON_GOLDEN = 1861.5260468095714


class TestPvSurrogate:
    def test_noon_golden(self):
        p = tb.pv_surrogate(tb.pv_noon_input(), tb.PV_REFERENCE_THETA)
        assert p == pytest.approx(PV_NOON_GOLDEN, rel=1e-12)

    def test_no_irradiance(self):
        x = tb.pv_noon_input(I_g=0.0, I_d=0.0)
        assert tb.pv_surrogate(x, tb.PV_REFERENCE_THETA) == 0.0

    def test_midnight(self):
        x = tb.pv_noon_input()
        x[0] += 12 * 3600.0
        assert tb.pv_surrogate(x, tb.PV_REFERENCE_THETA) == 0.0

    def test_monotone_in_global_irradiance(self):
        p = [tb.pv_surrogate(tb.pv_noon_input(I_g=g), tb.PV_REFERENCE_THETA) for g in np.linspace(150, 1000, 30)]
        assert np.all(np.diff(p) >= 0)

    def test_continuous_in_theta(self):
        x = tb.pv_noon_input()
        th = np.array(tb.PV_REFERENCE_THETA)
        a = tb.pv_surrogate(x, th)
        b = tb.pv_surrogate(x, th + 1e-9)
        assert abs(a - b) < 1e-4

    def test_six_parameter_form_at_defaults_matches_three(self):
        x = tb.pv_noon_input()
        cfg = tb.PvSurrogateConfig()
        six = [*tb.PV_REFERENCE_THETA, cfg.n_t, cfg.a_l, cfg.n_inc]
        assert tb.pv_surrogate(x, six) == tb.pv_surrogate(x, tb.PV_REFERENCE_THETA)

    def test_negative_irradiance_rejected_unless_clipped(self):
        X = np.array([[tb.pv_noon_input()[0], -5.0, 10.0, 25.0]])
        with pytest.raises(ValueError):
            tb.pv_simulator()(X, tb.PV_REFERENCE_THETA)
        assert np.isfinite(tb.pv_simulator(clip_irradiance=True)(X, tb.PV_REFERENCE_THETA)[0])


class TestAnalyticCodes:
    def test_constant(self):
        assert np.all(tb.analytic_codes("constant")(np.linspace(0, 1, 5), [2.5]) == 2.5)

    def test_linear_at_origin(self):
        assert tb.analytic_codes("linear")([0.0], [1.5, 7.0])[0] == 1.5

    def test_sine_at_quarter(self):
        assert tb.analytic_codes("sine")([0.25], [1.5, 0.5])[0] == pytest.approx(2.0)

    def test_unknown(self):
        with pytest.raises(ValueError):
            tb.analytic_codes("cubic")


class TestFieldData:
    def test_noiseless_equals_code(self):
        sim = tb.pv_simulator()
        data = tb.generate_field_data(tb.SyntheticScenario(n_days=3), sim)
        assert np.array_equal(data.y, sim(data.X, tb.PV_REFERENCE_THETA))

    def test_noise_variance(self):
        sim = tb.analytic_codes("sine")
        X = np.linspace(0, 1, 1000)[:, None]
        data = tb.generate_field_data(tb.SyntheticScenario((1.0, 0.0), sigma_err=0.5, X=X, seed=4), sim)
        r = data.y - sim(data.X, [1.0, 0.0])
        assert np.var(r, ddof=1) == pytest.approx(0.25, rel=0.2)

    def test_discrepancy_leaves_autocorrelated_residuals(self):
        sim = tb.pv_simulator()
        W = tb.synthetic_weather(20, seed=2)
        s = tb.noise_for_snr(sim, W, tb.PV_REFERENCE_THETA)
        daily = tb.Discrepancy("function", 100.0, function=lambda X: np.sin(2 * np.pi * X[:, 0] / 86400.0))
        data = tb.generate_field_data(tb.SyntheticScenario(sigma_err=s, discrepancy=daily, X=W, seed=2), sim)
        fit = optimize.least_squares(lambda th: sim(data.X, th) - data.y, tb.PV_REFERENCE_THETA)
        r = data.y - sim(data.X, fit.x)
        assert np.corrcoef(r[:-1], r[1:])[0, 1] > 0.3

    def test_same_seed_bit_identical(self):
        sc = tb.SyntheticScenario(sigma_err=20.0, discrepancy=tb.Discrepancy("gp", 50.0), n_days=4, seed=7)
        a = tb.generate_field_data(sc, tb.pv_simulator())
        b = tb.generate_field_data(sc, tb.pv_simulator())
        assert np.array_equal(a.X, b.X) and np.array_equal(a.y, b.y)

    def test_daylight_only(self):
        data = tb.generate_field_data(tb.SyntheticScenario(n_days=5, seed=1), tb.pv_simulator())
        assert np.all(data.y > 0)
        assert set(np.unique(data.days())) <= set(range(212, 217))

    def test_snr(self):
        sim = tb.pv_simulator()
        W = tb.synthetic_weather(5, seed=0)
        s = tb.noise_for_snr(sim, W, tb.PV_REFERENCE_THETA, 20.0)
        assert np.std(sim(W, tb.PV_REFERENCE_THETA)) / s == pytest.approx(20.0)

    def test_mismatched_lengths(self):
        with pytest.raises(ValueError):
            tb.FieldDataSet(np.zeros((3, 1)), np.zeros(2), ("x",))


class TestMorris:
    def test_linear_single_input(self):
        res = tb.morris_screening(lambda u: 3.0 * u[0], [[0, 1], [0, 1]], r=8, seed=0)
        assert np.allclose(res.effects[:, 0], 3.0)
        assert res.sigma[0] == pytest.approx(0.0, abs=1e-10)
        assert res.mu_star[1] == 0.0

    def test_additive_quadratic(self):
        res = tb.morris_screening(lambda u: u[0] + u[1] ** 2, [[0, 1], [0, 1]], r=20, seed=1)
        assert res.sigma[0] == pytest.approx(0.0, abs=1e-10)
        assert res.sigma[1] > 0

    def test_additive_linear_has_zero_spread(self):
        w = np.array([1.0, -2.0, 0.5, 4.0])
        res = tb.morris_screening(lambda u: float(w @ u), [[0, 2]] * 4, r=10, seed=3)
        assert np.all(np.abs(res.sigma) <= 1e-10)
        assert np.allclose(res.mu, 2 * w)

    @pytest.mark.parametrize("seed", range(5))
    def test_pv_ranking(self, seed):
        x = tb.pv_noon_input()
        ranges = [tb.PV_PARAMETER_RANGES[n] for n in tb.PV_ALL_THETA_NAMES]
        res = tb.morris_screening(lambda th: tb.pv_surrogate(x, th), ranges, seed=seed,
                                  names=tb.PV_ALL_THETA_NAMES)
        assert set(res.ranking()[:3]) == {"eta", "mu_t", "a_r"}

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            tb.morris_screening(lambda u: 0.0, [[0, 1]], r=1)
        with pytest.raises(ValueError):
            tb.morris_screening(lambda u: 0.0, [[0, 1]], levels=3)

    def test_failure_reports_trajectory(self):
        calls = []

        def f(u):
            calls.append(u)
            if len(calls) > 5:
                raise RuntimeError("boom")
            return 0.0

        with pytest.raises(tb.TrajectoryError) as e:
            tb.morris_screening(f, [[0, 1], [0, 1]], r=4)
        assert e.value.trajectory == 1
