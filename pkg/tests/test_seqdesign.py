import numpy as np
import pytest
from scipy import integrate, stats

from bayescal import design as dz
from bayescal import inference as inf
from bayescal import models as md
from bayescal import priors as pr
from bayescal import seqdesign as sq
from bayescal import testbed as tb
from bayescal.gp import GpModel, KernelSpec, MeanBasis

# Phi(1) + phi(1) from a 30-digit mpmath evaluation
EI_AT_ONE = 1.08331547058768629838306273857


class TestExpectedImprovement:
    def test_zero_sd_above_best(self):
        assert sq.expected_improvement(2.0, 0.0, 1.0) == 0.0

    def test_zero_sd_below_best(self):
        assert sq.expected_improvement(0.25, 0.0, 1.0) == 0.75

    def test_at_best(self):
        assert sq.expected_improvement(1.0, 2.0, 1.0) == pytest.approx(2.0 / np.sqrt(2 * np.pi), rel=1e-14)

    def test_golden(self):
        assert sq.expected_improvement(-1.0, 1.0, 0.0) == pytest.approx(EI_AT_ONE, rel=1e-14)

    def test_vectorized_nonnegative_and_vanishing(self):
        m = np.linspace(-3, 3, 61)
        for s in (1.0, 1e-3, 1e-8):
            ei = sq.expected_improvement(m, np.full_like(m, s), 0.0)
            assert np.all(ei >= 0)
        assert np.all(sq.expected_improvement(m[m >= 0], np.full((m >= 0).sum(), 1e-12), 0.0) < 1e-12)

    def test_matches_integral(self):
        m, s, b = 0.3, 0.7, 0.5
        ref, _ = integrate.quad(lambda u: (b - u) * stats.norm.pdf(u, m, s), -np.inf, b)
        assert sq.expected_improvement(m, s, b) == pytest.approx(ref, rel=1e-9)

    def test_negative_sd(self):
        with pytest.raises(ValueError):
            sq.expected_improvement(0.0, -1.0, 0.0)


def constant_emulator(c):
    pts = np.array([[0.0, 0.0], [0.5, 0.5], [1.0, 1.0]])
    basis = MeanBasis.constant().with_coefficients([c])
    return GpModel(basis, KernelSpec("matern52", 0.3, 1.0, 1e-8), pts, np.full(3, c), np.zeros(2), np.ones(2))


class TestSse:
    def test_constant_emulator(self):
        y = np.array([1.0, 2.0, 4.0])
        data = tb.FieldDataSet(np.array([[0.1], [0.4], [0.8]]), y, ("x",))
        em = constant_emulator(2.0)
        assert sq.sse_criterion([0.5], em, data) == pytest.approx(np.mean((y - 2.0) ** 2), rel=1e-9)

    def test_matches_loop(self):
        rng = np.random.default_rng(0)
        pts = rng.uniform(size=(20, 2))
        design = dz.Design(pts, ("initial",) * 20, np.zeros(2), np.ones(2), ("x", "theta1"), 1)
        em = md.fit_emulator(design, np.sin(3 * pts[:, 0]) + pts[:, 1])
        X = rng.uniform(size=(6, 1))
        data = tb.FieldDataSet(X, rng.normal(size=6), ("x",))
        total = 0.0
        for i in range(6):
            mu, _ = em.predict(md.emulator_inputs(em, X[i:i + 1], [0.3]))
            total += (data.y[i] - mu[0]) ** 2
        assert sq.sse_criterion([0.3], em, data) == pytest.approx(total / 6, rel=1e-12)


class CountingSimulator:
    def __init__(self, sim):
        self.sim = sim
        self.calls = 0

    def __call__(self, X, theta):
        self.calls += 1
        return self.sim(X, theta)


def pv_problem(seed, n_days=8, N=30):
    sim = tb.pv_simulator()
    W = tb.synthetic_weather(n_days, seed=seed)
    s = tb.noise_for_snr(sim, W, tb.PV_REFERENCE_THETA)
    data = tb.generate_field_data(
        tb.SyntheticScenario(sigma_err=s, discrepancy=tb.Discrepancy("sine", 100.0), X=W, seed=seed), sim)
    tr = dz.pca_decorrelate(data.X, tb.PV_INPUT_NAMES)
    ranges = [tb.PV_PARAMETER_RANGES[n] for n in tb.PV_THETA_NAMES]
    design = dz.build_design(tr, ranges, N, seed=seed, param_names=tb.PV_THETA_NAMES, observed=data.X)
    clipped = tb.pv_simulator(clip_irradiance=True)
    return clipped, data, design, dz.run_design(clipped, design)


class TestAugmentDesign:
    def test_budget_prefix_and_trace(self):
        sim, data, design, y_c = pv_problem(0)
        counting = CountingSimulator(sim)
        d2, y2, em, trace = sq.augment_design(counting, design, y_c, data, budget=4, seed=1)
        assert counting.calls == 4 and trace.n_added == 4
        assert d2.N == design.N + 4
        assert np.array_equal(d2.points[: design.N], design.points)
        assert np.array_equal(y2[: design.N], y_c)
        assert d2.provenance[design.N:] == (dz.SEQUENTIAL,) * 4
        assert np.all(np.isfinite(trace.criterion))
        assert np.all(np.diff(trace.best_so_far()) <= 0)
        assert em.points.shape[0] == d2.N

    def test_added_points_inside_parameter_box_at_field_inputs(self):
        sim, data, design, y_c = pv_problem(1)
        d2, _, _, trace = sq.augment_design(sim, design, y_c, data, budget=3, seed=2)
        tau = d2.tau[design.N:]
        assert np.all(tau >= design.lower[4:]) and np.all(tau <= design.upper[4:])
        for x in d2.x[design.N:]:
            assert np.any(np.all(data.X == x, axis=1))

    def test_deterministic(self):
        sim, data, design, y_c = pv_problem(2)
        a = sq.augment_design(sim, design, y_c, data, budget=2, seed=5)
        b = sq.augment_design(sim, design, y_c, data, budget=2, seed=5)
        assert np.array_equal(a[0].points, b[0].points) and np.array_equal(a[1], b[1])

    def test_simulator_failure_keeps_partial_trace(self):
        sim, data, design, y_c = pv_problem(3)

        def flaky(X, theta, state={"n": 0}):
            state["n"] += 1
            if state["n"] == 3:
                raise RuntimeError("solver diverged")
            return sim(X, theta)

        with pytest.raises(sq.AugmentationError) as e:
            sq.augment_design(flaky, design, y_c, data, budget=5, seed=0)
        assert e.value.trace.n_added == 2

    def test_budget_must_be_positive(self):
        sim, data, design, y_c = pv_problem(0)
        with pytest.raises(ValueError):
            sq.augment_design(sim, design, y_c, data, budget=0)

    def test_trace_csv(self, tmp_path):
        sim, data, design, y_c = pv_problem(4)
        _, _, _, trace = sq.augment_design(sim, design, y_c, data, budget=2, seed=0)
        trace.to_csv(tmp_path / "trace.csv", design.names)
        lines = (tmp_path / "trace.csv").read_text().splitlines()
        assert len(lines) == 3 and lines[0].startswith("iteration,t,")

    @pytest.mark.slow
    def test_q2_does_not_degrade(self):
        drops = []
        for seed in range(10):
            sim, data, design, y_c = pv_problem(seed, N=50)
            _, _, _, trace = sq.augment_design(sim, design, y_c, data, budget=10, seed=seed)
            drops.append(trace.q2_before - trace.q2_after)
        assert max(drops) <= 0.02

    @pytest.mark.slow
    def test_posterior_sds_shrink(self):
        priors = dict(pr.default_priors())
        st = inf.McmcSettings(n_phase1=300, n_phase2=1200, burn_in=300)
        ratios = []
        for seed in range(10):
            sim, data, design, y_c = pv_problem(seed, N=50)
            m = md.CalibModel(md.M2, priors, None, None, tb.PV_THETA_NAMES).with_data_box(data.X)
            _, before, _ = inf.modular_calibrate(m, data, design, y_c, st)
            d2, y2, _, _ = sq.augment_design(sim, design, y_c, data, budget=10, seed=seed)
            _, after, _ = inf.modular_calibrate(m, data, d2, y2, st)
            ratios.append(np.median(after.sd[:3] / before.sd[:3]))
        assert np.median(ratios) < 1.0
