import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bayescal import design as dz
from bayescal import testbed as tb


def assert_latin(U):
    N = U.shape[0]
    for col in U.T:
        assert sorted(np.floor(col * N).astype(int)) == list(range(N))


class TestMaximinLhs:
    def test_four_points_one_per_stratum(self):
        assert_latin(dz.maximin_lhs(4, 2, seed=0))

    def test_two_points_distinct_halves(self):
        U = dz.maximin_lhs(2, 1, seed=3)
        assert sorted((U[:, 0] >= 0.5).tolist()) == [False, True]

    def test_more_candidates_never_worse(self):
        a = dz.min_distance(dz.maximin_lhs(20, 3, seed=5, n_candidates=50))
        b = dz.min_distance(dz.maximin_lhs(20, 3, seed=5, n_candidates=1))
        assert a >= b

    def test_deterministic(self):
        assert np.array_equal(dz.maximin_lhs(10, 4, seed=2), dz.maximin_lhs(10, 4, seed=2))

    @settings(max_examples=25, deadline=None)
    @given(N=st.integers(2, 30), dim=st.integers(1, 6), seed=st.integers(0, 1000))
    def test_projection_property(self, N, dim, seed):
        U = dz.maximin_lhs(N, dim, seed=seed, n_candidates=5)
        assert U.shape == (N, dim) and np.all((U >= 0) & (U < 1))
        assert_latin(U)

    def test_bad_sizes(self):
        with pytest.raises(ValueError):
            dz.maximin_lhs(1, 2)
        with pytest.raises(ValueError):
            dz.maximin_lhs(5, 0)


class TestPca:
    def test_uncorrelated_gives_signed_permutation(self):
        rng = np.random.default_rng(0)
        G = rng.normal(size=(400, 3))
        Q, _ = np.linalg.qr(G - G.mean(axis=0))
        X = Q * np.sqrt(399) * [1.0, 5.0, 0.1] + [1.0, 2.0, 3.0]
        T = dz.pca_decorrelate(X).T
        assert np.allclose(np.abs(T) @ np.ones(3), 1.0, atol=1e-6)
        assert np.allclose(np.abs(T).max(axis=0), 1.0, atol=1e-6)

    def test_projection_uncorrelated(self):
        rng = np.random.default_rng(1)
        a = rng.normal(size=300)
        X = np.column_stack([a, 0.8 * a + 0.3 * rng.normal(size=300)])
        Z = dz.pca_decorrelate(X).project(X)
        assert abs(np.corrcoef(Z.T)[0, 1]) < 1e-10

    def test_one_dimension(self):
        tr = dz.pca_decorrelate(np.arange(10.0)[:, None])
        assert tr.T.shape == (1, 1) and abs(tr.T[0, 0]) == 1.0

    def test_round_trip(self):
        X = tb.synthetic_weather(5, seed=0)
        tr = dz.pca_decorrelate(X, tb.PV_INPUT_NAMES)
        assert np.allclose(tr.unproject(tr.project(X)), X)
        assert tr.names == tb.PV_INPUT_NAMES

    def test_constant_column(self):
        with pytest.raises(ValueError, match="constant"):
            dz.pca_decorrelate(np.column_stack([np.arange(5.0), np.ones(5)]))


class TestBuildDesign:
    def test_identity_equals_raw_lhs(self):
        tr = dz.PcaTransform.identity(2)
        D = dz.build_design(tr, [[0, 1]], 8, seed=4)
        assert np.allclose(D.points, dz.maximin_lhs(8, 3, seed=4))

    def test_pv_configuration(self):
        X = tb.synthetic_weather(10, seed=1)
        tr = dz.pca_decorrelate(X, tb.PV_INPUT_NAMES)
        ranges = [tb.PV_PARAMETER_RANGES[n] for n in tb.PV_THETA_NAMES]
        D = dz.build_design(tr, ranges, 50, seed=0, param_names=tb.PV_THETA_NAMES)
        assert D.points.shape == (50, 7) and D.n_inputs == 4
        assert D.names == (*tb.PV_INPUT_NAMES, *tb.PV_THETA_NAMES)
        Z = tr.project(D.x)
        assert np.all(Z >= tr.axis_min - 1e-9) and np.all(Z <= tr.axis_max + 1e-9)
        assert_latin((Z - tr.axis_min) / (tr.axis_max - tr.axis_min))
        assert np.all(D.tau >= [r[0] for r in ranges]) and np.all(D.tau <= [r[1] for r in ranges])

    def test_normalization_box_covers_observed(self):
        X = tb.synthetic_weather(4, seed=2)
        tr = dz.pca_decorrelate(X, tb.PV_INPUT_NAMES)
        D = dz.build_design(tr, [[0, 1]], 10, observed=X)
        U = D.normalized()
        assert np.all(U >= 0) and np.all(U <= 1)
        assert np.all(X >= D.lower[:4]) and np.all(X <= D.upper[:4])

    def test_deterministic(self):
        tr = dz.PcaTransform.identity(2)
        assert np.array_equal(dz.build_design(tr, [[0, 2]], 6, seed=9).points,
                              dz.build_design(tr, [[0, 2]], 6, seed=9).points)

    def test_bad_ranges(self):
        with pytest.raises(ValueError):
            dz.build_design(dz.PcaTransform.identity(1), [[1, 0]], 4)

    def test_csv_round_trip(self, tmp_path):
        D = dz.build_design(dz.PcaTransform.identity(2), [[0, 1]], 5, seed=1)
        D = D.append([0.5, 0.5], [0.5])
        D.to_csv(tmp_path / "d.csv")
        back = dz.Design.from_csv(tmp_path / "d.csv", 2, D.lower, D.upper)
        assert np.array_equal(back.points, D.points) and back.provenance == D.provenance


class TestRunDesign:
    def design_with_tau(self, tau):
        pts = np.column_stack([np.linspace(0, 1, len(tau)), tau])
        return dz.Design(pts, (dz.INITIAL,) * len(tau), np.zeros(2), np.ones(2), ("x", "theta1"), 1)

    def test_constant_code(self):
        D = self.design_with_tau([0.3, 0.3, 0.3])
        assert np.all(dz.run_design(tb.analytic_codes("constant"), D) == 0.3)

    def test_returns_tau_column(self):
        tau = np.array([0.1, 0.7, 0.4, 0.9])
        assert np.array_equal(dz.run_design(tb.analytic_codes("constant"), self.design_with_tau(tau)), tau)

    def test_pv_matches_manual_calls(self):
        X = tb.synthetic_weather(3, seed=0)
        tr = dz.pca_decorrelate(X, tb.PV_INPUT_NAMES)
        ranges = [tb.PV_PARAMETER_RANGES[n] for n in tb.PV_THETA_NAMES]
        D = dz.build_design(tr, ranges, 10, seed=1)
        sim = tb.pv_simulator(clip_irradiance=True)
        manual = [sim(D.x[i:i + 1], D.tau[i])[0] for i in range(10)]
        assert np.array_equal(dz.run_design(sim, D), manual)

    def test_failure_names_row(self):
        def bad(X, th):
            if th[0] > 0.5:
                raise RuntimeError("diverged")
            return th[:1]

        with pytest.raises(dz.SimulatorError) as e:
            dz.run_design(bad, self.design_with_tau([0.1, 0.9]))
        assert e.value.index == 1

    def test_non_finite_output(self):
        with pytest.raises(dz.SimulatorError):
            dz.run_design(lambda X, th: np.array([np.nan]), self.design_with_tau([0.1]))
