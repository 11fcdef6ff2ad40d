import numpy as np
import pytest
from scipy import stats

from bayescal import gp, models as md
from bayescal.design import Design
from bayescal.gp import KernelSpec, MeanBasis
from bayescal.models import CalibModel, LogPosterior
from bayescal.priors import Fixed, Gamma, Normal, Uniform
from bayescal.testbed import FieldDataSet, analytic_codes


def small_instance(rng, n=None, N=None):
    """A random emulator on (x, theta) in [0,1]^2 and a field data set."""
    n = n or int(rng.integers(1, 6))
    N = N or int(rng.integers(3, 9))
    pts = rng.uniform(size=(N, 2))
    basis = MeanBasis.linear(2).with_coefficients(rng.normal(size=3))
    k = KernelSpec(gp.MATERN52, rng.uniform(0.2, 0.8), rng.uniform(0.5, 2.0), 1e-8)
    em = gp.GpModel(basis, k, pts, rng.normal(size=N))
    X = rng.uniform(size=(n, 1))
    return em, FieldDataSet(X, rng.normal(size=n), ("x",))


def test_conditional_moments_match_joint_partition():
    rng = np.random.default_rng(0)
    for _ in range(20):
        em, data = small_instance(rng)
        theta = rng.uniform(size=1)
        H, m, V = md.joint_moments(theta, 0.0, data.X, em)
        n = data.n
        mu = m[:n] + V[:n, n:] @ np.linalg.solve(V[n:, n:], em.outputs - m[n:])
        S = V[:n, :n] - V[:n, n:] @ np.linalg.solve(V[n:, n:], V[n:, :n])
        cm, cS = md.conditional_moments(em, data.X, theta)
        assert np.allclose(cm, mu, rtol=1e-8, atol=1e-9)
        assert np.allclose(cS, S, rtol=1e-7, atol=1e-9)


@pytest.mark.parametrize("with_delta", [False, True])
def test_full_equals_partial_plus_conditional(with_delta):
    rng = np.random.default_rng(1)
    for _ in range(30):
        em, data = small_instance(rng)
        theta = rng.uniform(size=1)
        s2 = rng.uniform(0.05, 1.0)
        sd2, psi = (rng.uniform(0.1, 1.0), rng.uniform(0.1, 1.0)) if with_delta else (0.0, 1.0)
        full = md.loglik_full(theta, s2, data.X, data.y, em, sd2, psi)
        split = md.loglik_partial(em) + md.loglik_conditional(theta, s2, data.X, data.y, em, sd2, psi)
        assert full == pytest.approx(split, abs=1e-8)


def test_m1_matches_scipy_density():
    sim = analytic_codes("linear")
    rng = np.random.default_rng(2)
    X = rng.uniform(size=(7, 1))
    y = rng.normal(size=7)
    ll = md.loglik_m1([0.3, -1.0], 0.4, X, y, sim)
    ref = stats.norm.logpdf(y, 0.3 - X[:, 0], np.sqrt(0.4)).sum()
    assert ll == pytest.approx(ref, rel=1e-12)


def test_m3_nests_m1():
    sim = analytic_codes("sine")
    rng = np.random.default_rng(3)
    for _ in range(10):
        X = rng.uniform(size=(6, 1))
        y = rng.normal(size=6)
        th = rng.normal(size=2)
        a = md.loglik_m3(th, 1e-12, 0.3, 0.5, X, y, sim)
        assert a == pytest.approx(md.loglik_m1(th, 0.5, X, y, sim), abs=1e-6)


def test_m4_nests_m2():
    rng = np.random.default_rng(4)
    for _ in range(10):
        em, data = small_instance(rng)
        th = rng.uniform(size=1)
        a = md.loglik_conditional(th, 0.3, data.X, data.y, em, 1e-12, 0.4)
        b = md.loglik_conditional(th, 0.3, data.X, data.y, em)
        assert a == pytest.approx(b, abs=1e-6)


def test_m1_loglik_requires_positive_variance():
    with pytest.raises(ValueError):
        md.loglik_m1([1.0], 0.0, np.zeros((2, 1)), [1.0, 1.0], analytic_codes("constant"))


def _pv_like_model(variant, rng):
    sim = analytic_codes("sine")
    X = rng.uniform(size=(12, 1))
    y = sim(X, [1.0, 0.5]) + 0.1 * rng.normal(size=12)
    data = FieldDataSet(X, y, ("x",))
    priors = {"theta1": Normal(1.0, 0.25), "theta2": Normal(0.5, 0.25), "sigma2_err": Gamma(2.0, 0.01),
              "sigma2_delta": Gamma(2.0, 0.05), "psi_delta": Uniform(0.0, 1.0)}
    em = None
    if variant in (md.M2, md.M4):
        pts = np.column_stack([rng.uniform(size=20), rng.uniform(0.0, 2.0, 20), rng.uniform(0.0, 1.0, 20)])
        design = Design(pts, ("initial",) * 20, np.array([0.0, 0.0, 0.0]), np.array([1.0, 2.0, 1.0]),
                        ("x", "theta1", "theta2"), 1)
        em = md.fit_emulator(design, pts[:, 1] * np.sin(2 * np.pi * pts[:, 0]) + pts[:, 2])
    m = CalibModel(variant, priors, sim, em).with_data_box(X)
    return m, data


@pytest.mark.parametrize("variant", md.VARIANTS)
def test_cached_target_matches_model_posterior(variant):
    rng = np.random.default_rng(5)
    m, data = _pv_like_model(variant, rng)
    target = LogPosterior(m, data)
    for _ in range(5):
        v = m.default_init(data)
        v = {k: (x * np.exp(0.2 * rng.normal()) if md.is_positive(k) else x + 0.1 * rng.normal())
             for k, x in v.items()}
        v = {k: (min(x, 0.99) if k == "psi_delta" else x) for k, x in v.items()}
        z = target.to_z(v)
        jac = sum(np.log(v[n]) for n in target.names if md.is_positive(n))
        assert target(z) == pytest.approx(m.log_posterior(v, data) + jac, rel=1e-9, abs=1e-8)


def test_fixed_priors_are_not_sampled():
    rng = np.random.default_rng(6)
    m, data = _pv_like_model(md.M1, rng)
    m = m.replace(priors={**m.priors, "theta2": Fixed(0.5)})
    assert m.free_names == ("theta1", "sigma2_err")
    assert LogPosterior(m, data).names == ("theta1", "sigma2_err")


def test_prior_outside_support_short_circuits():
    rng = np.random.default_rng(7)
    m, data = _pv_like_model(md.M3, rng)
    t = LogPosterior(m, data)
    v = m.default_init(data)
    v["psi_delta"] = 1.5
    before = t.n_evals
    assert t(t.to_z(v)) == -np.inf
    assert t.n_evals == before


def test_full_mode_samples_emulator_parameters_only_with_priors():
    rng = np.random.default_rng(8)
    m, _ = _pv_like_model(md.M2, rng)
    assert m.replace(mode=md.FULL).nuisance_names == ("sigma2_err",)
    m2 = m.replace(mode=md.FULL, priors={**m.priors, "psi_S": Uniform(0.01, 3.0)})
    assert m2.nuisance_names == ("sigma2_err", "psi_S")


def test_full_mode_likelihood_is_joint():
    rng = np.random.default_rng(9)
    m, data = _pv_like_model(md.M2, rng)
    v = m.default_init(data)
    full = m.replace(mode=md.FULL).log_likelihood(v, data)
    cond = m.log_likelihood(v, data)
    assert full == pytest.approx(cond + md.loglik_partial(m.emulator), abs=1e-7)


def test_unknown_variant():
    with pytest.raises(ValueError):
        CalibModel("M5", {}, analytic_codes("constant"))


def test_emulated_variant_without_simulator_needs_names():
    with pytest.raises(ValueError):
        CalibModel(md.M2, {}, None, None)
