"""MCMC calibration and likelihood-based estimators.

Sampling runs in two phases: a Metropolis-within-Gibbs pass that updates
one coordinate at a time, whose samples give the covariance of the
random-walk proposal used by a second, full-vector Metropolis-Hastings pass.
"""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import linalg, optimize

from .design import Design
from .gp import GpModel
from .models import CalibModel, FieldDataSet, LogPosterior, M1, M2, M4, fit_emulator, is_positive
from .priors import Fixed, Normal, Uniform

logger = logging.getLogger(__name__)


class CalibrationError(RuntimeError):
    pass


# -------------------------------------------------------------------------
# chains
# -------------------------------------------------------------------------


@dataclass
class Chain:
    """Raw MCMC output; ``samples`` hold parameter values (not sampling-scale)."""

    names: tuple[str, ...]
    samples: np.ndarray
    log_post: np.ndarray
    accepted: np.ndarray  # (n_iter, n_blocks) bool
    burn_in: int = 0
    seed: int | None = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim == 1:
            self.samples = self.samples[:, None]
        self.accepted = np.asarray(self.accepted, dtype=bool)
        if self.accepted.ndim == 1:
            self.accepted = self.accepted[:, None]
        if not 0 <= self.burn_in < self.samples.shape[0]:
            raise ValueError("burn-in must leave at least one sample")

    @property
    def n_iter(self) -> int:
        return self.samples.shape[0]

    def kept(self) -> np.ndarray:
        return self.samples[self.burn_in:]

    def kept_log_post(self) -> np.ndarray:
        return self.log_post[self.burn_in:]

    def acceptance_rate(self) -> np.ndarray:
        return self.accepted.mean(axis=0)

    def column(self, name: str) -> np.ndarray:
        return self.kept()[:, self.names.index(name)]

    def to_csv(self, path) -> None:
        nb = self.accepted.shape[1]
        acc_names = [f"accepted_{n}" for n in self.names] if nb == len(self.names) else [f"accepted_{j}" for j in range(nb)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", *self.names, "log_posterior", *acc_names, "burn_in"])
            for i in range(self.n_iter):
                w.writerow([i, *(repr(float(v)) for v in self.samples[i]), repr(float(self.log_post[i])),
                            *(int(a) for a in self.accepted[i]), int(i < self.burn_in)])

    @classmethod
    def from_csv(cls, path) -> "Chain":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        lp_col = header.index("log_posterior")
        names = tuple(header[1:lp_col])
        arr = np.array([[float(v) for v in r] for r in body])
        burn = int(arr[:, -1].sum())
        return cls(names, arr[:, 1:lp_col], arr[:, lp_col], arr[:, lp_col + 1:-1].astype(bool), burn)


def effective_sample_size(x) -> float:
    """Autocorrelation ESS with Geyer's initial positive sequence."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    if n < 4:
        return float(n)
    xc = x - x.mean()
    v = xc @ xc / n
    if v == 0:
        return float(n)
    f = np.fft.rfft(xc, 2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n] / (n * v)
    s = 0.0
    for k in range(0, n - 1, 2):
        pair = acf[k] + acf[k + 1]
        if pair <= 0:
            break
        s += pair
    tau = max(2.0 * s - 1.0, 1e-12)
    return float(min(n / tau, n))


@dataclass
class PosteriorSummary:
    names: tuple[str, ...]
    map: np.ndarray
    mean: np.ndarray
    sd: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float
    corr: np.ndarray
    ess: np.ndarray
    n_samples: int

    def as_dict(self) -> dict[str, dict[str, float]]:
        return {
            n: dict(map=self.map[j], mean=self.mean[j], sd=self.sd[j], lower=self.lower[j],
                    upper=self.upper[j], ess=self.ess[j])
            for j, n in enumerate(self.names)
        }

    def mcse(self) -> np.ndarray:
        return self.sd / np.sqrt(np.maximum(self.ess, 1.0))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["parameter", "map", "mean", "sd", "lower", "upper", "level", "ess", "n_samples",
                        *(f"corr_{n}" for n in self.names)])
            for j, n in enumerate(self.names):
                w.writerow([n, *(repr(float(v)) for v in (self.map[j], self.mean[j], self.sd[j],
                                                         self.lower[j], self.upper[j], self.level, self.ess[j])),
                            self.n_samples, *(repr(float(c)) for c in self.corr[j])])


def posterior_summary(chain: Chain, level: float = 0.90, min_samples: int = 100) -> PosteriorSummary:
    """MAP sample, moments, equal-tailed intervals and pairwise correlations."""
    S = chain.kept()
    lp = chain.kept_log_post()
    if S.shape[0] < min_samples:
        raise ValueError(f"chain has {S.shape[0]} post-burn-in samples, need {min_samples}")
    a = 0.5 * (1.0 - level)
    sd = S.std(axis=0, ddof=1) if S.shape[0] > 1 else np.zeros(S.shape[1])
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = np.corrcoef(S, rowvar=False) if S.shape[0] > 1 else np.eye(S.shape[1])
    corr = np.atleast_2d(corr)
    bad = ~np.isfinite(corr)
    corr[bad] = 0.0
    np.fill_diagonal(corr, 1.0)
    corr = np.clip(corr, -1.0, 1.0)
    return PosteriorSummary(
        chain.names, S[int(np.argmax(lp))].copy(), S.mean(axis=0), sd,
        np.quantile(S, a, axis=0), np.quantile(S, 1.0 - a, axis=0), level, corr,
        np.array([effective_sample_size(S[:, j]) for j in range(S.shape[1])]), S.shape[0],
    )


# -------------------------------------------------------------------------
# samplers
# -------------------------------------------------------------------------


def metropolis_within_gibbs(
    log_post: Callable[[np.ndarray], float],
    init,
    proposal_sd,
    n_iter: int,
    seed: int = 0,
    adapt: bool = False,
    names: Sequence[str] | None = None,
    transform: Callable[[np.ndarray], np.ndarray] | None = None,
    batch: int = 50,
) -> Chain:
    """Single-coordinate Gaussian random-walk Metropolis sweeps.

    With ``adapt=True`` each coordinate's step size is nudged after every
    ``batch`` sweeps towards a 0.44 acceptance rate (the chain is then only
    asymptotically Markov; use it for tuning, not for final summaries).
    """
    z = np.array(init, dtype=float)
    d = z.size
    sd = np.broadcast_to(np.asarray(proposal_sd, dtype=float), (d,)).copy()
    lp = log_post(z)
    if not np.isfinite(lp):
        raise CalibrationError("initial point has zero posterior density")
    rng = np.random.default_rng(seed)
    tr = transform or (lambda v: v)
    out = np.empty((n_iter, d))
    lps = np.empty(n_iter)
    acc = np.zeros((n_iter, d), dtype=bool)
    for i in range(n_iter):
        for j in range(d):
            step = sd[j] * rng.standard_normal()
            u = rng.random()
            if step == 0.0:
                acc[i, j] = True
                continue
            prop = z.copy()
            prop[j] += step
            lp_new = log_post(prop)
            if np.log(u) < lp_new - lp:
                z, lp = prop, lp_new
                acc[i, j] = True
        out[i] = tr(z)
        lps[i] = lp
        if adapt and (i + 1) % batch == 0:
            rate = acc[i + 1 - batch: i + 1].mean(axis=0)
            delta = min(0.1, 1.0 / np.sqrt((i + 1) / batch))
            sd *= np.exp(np.where(rate > 0.44, delta, -delta))
    return Chain(tuple(names) if names else tuple(f"p{j}" for j in range(d)), out, lps, acc, 0, seed)


def _regularized_chol(cov: np.ndarray, jitter: float) -> np.ndarray:
    cov = 0.5 * (cov + cov.T)
    base = max(float(np.mean(np.abs(np.diag(cov)))), 1e-300)
    eps = jitter
    for _ in range(12):
        try:
            return linalg.cholesky(cov + eps * base * np.eye(cov.shape[0]), lower=True)
        except linalg.LinAlgError:
            eps = max(eps * 10.0, 1e-12)
    raise CalibrationError("proposal covariance cannot be regularized")


def adaptive_mh(
    log_post: Callable[[np.ndarray], float],
    init,
    cov,
    scale: float | None = None,
    n_iter: int = 10000,
    burn_in: int = 3000,
    seed: int = 0,
    jitter: float = 1e-10,
    names: Sequence[str] | None = None,
    transform: Callable[[np.ndarray], np.ndarray] | None = None,
) -> Chain:
    """Full-vector random-walk MH with proposal ``scale^2 (cov + jitter)``."""
    z = np.array(init, dtype=float)
    d = z.size
    scale = 2.38 / np.sqrt(d) if scale is None else scale
    L = _regularized_chol(np.atleast_2d(np.asarray(cov, dtype=float)), jitter)
    lp = log_post(z)
    if not np.isfinite(lp):
        raise CalibrationError("initial point has zero posterior density")
    rng = np.random.default_rng(seed)
    tr = transform or (lambda v: v)
    out = np.empty((n_iter, d))
    lps = np.empty(n_iter)
    acc = np.zeros((n_iter, 1), dtype=bool)
    for i in range(n_iter):
        prop = z + scale * (L @ rng.standard_normal(d))
        u = rng.random()
        lp_new = log_post(prop)
        if np.log(u) < lp_new - lp:
            z, lp = prop, lp_new
            acc[i, 0] = True
        out[i] = tr(z)
        lps[i] = lp
    return Chain(tuple(names) if names else tuple(f"p{j}" for j in range(d)), out, lps, acc, burn_in, seed)


# -------------------------------------------------------------------------
# calibration drivers
# -------------------------------------------------------------------------


@dataclass(frozen=True)
class McmcSettings:
    """Two-phase schedule; defaults follow the 3000 / 10000 (3000 burn-in) run."""

    n_phase1: int = 3000
    n_phase2: int = 10000
    burn_in: int = 3000
    seed: int = 0
    proposal_fraction: float = 0.05
    log_proposal_sd: float = 0.1
    scale: float | None = None
    adapt_phase1: bool = True
    optimize_init: bool = True
    level: float = 0.90
    init: Mapping[str, float] | None = None


def phase1_proposal_sds(model: CalibModel, target: LogPosterior, init_values, fraction=0.05, log_sd=0.1):
    sds = []
    for n in target.names:
        p = model.priors.get(n)
        if is_positive(n):
            sds.append(log_sd)
        elif isinstance(p, Normal):
            sds.append(fraction * p.sd)
        elif isinstance(p, Uniform):
            sds.append(fraction * (p.hi - p.lo))
        elif p is not None and p.sd > 0:
            sds.append(fraction * p.sd)
        else:
            sds.append(fraction * max(abs(init_values[n]), 1.0))
    return np.array(sds)


def _start_point(target: LogPosterior, model: CalibModel, data, settings: McmcSettings):
    init = dict(model.default_init(data))
    if settings.init:
        init.update({k: v for k, v in settings.init.items() if k in target.names})
    z0 = target.to_z(init)
    if not np.isfinite(target(z0)):
        raise CalibrationError("initial point has zero posterior density")
    if settings.optimize_init:
        res = optimize.minimize(lambda z: -target(z), z0, method="Nelder-Mead",
                                options={"maxfev": 300 * z0.size, "xatol": 1e-8, "fatol": 1e-8})
        if np.isfinite(res.fun) and res.fun < -target(z0):
            z0 = res.x
    return z0, init


def phase2_covariance(phase1: np.ndarray, fallback_sd) -> np.ndarray:
    """Empirical covariance of the phase-1 samples (first quarter dropped).

    A singular or non-finite estimate is replaced by its diagonal, with
    zero variances taken from ``fallback_sd ** 2``.
    """
    Z = phase1[phase1.shape[0] // 4:] if phase1.shape[0] >= 8 else phase1
    cov = np.atleast_2d(np.cov(Z, rowvar=False)) if Z.shape[0] > 1 else np.zeros((Z.shape[1],) * 2)
    var = np.diag(cov).copy()
    degenerate = not np.all(np.isfinite(cov)) or np.any(var <= 0)
    if not degenerate:
        try:
            linalg.cholesky(cov + 1e-12 * np.mean(var) * np.eye(len(var)), lower=True)
        except linalg.LinAlgError:
            degenerate = True
    if not degenerate:
        return cov
    logger.warning("phase-1 covariance is degenerate; falling back to its diagonal")
    fb = np.broadcast_to(np.asarray(fallback_sd, dtype=float) ** 2, var.shape)
    var = np.where(np.isfinite(var) & (var > 0), var, fb)
    return np.diag(np.where(var > 0, var, 1e-12))


def two_phase_calibrate(
    model: CalibModel, data: FieldDataSet, settings: McmcSettings | None = None,
) -> tuple[Chain, PosteriorSummary]:
    """Metropolis-within-Gibbs tuning run, then covariance-matched MH.

    Returns the phase-2 chain (burn-in flagged, still stored) and its summary.
    """
    s = settings or McmcSettings()
    target = model.target(data)
    z0, init = _start_point(target, model, data, s)
    sds = phase1_proposal_sds(model, target, init, s.proposal_fraction, s.log_proposal_sd)
    ss = np.random.SeedSequence(s.seed)
    seed1, seed2 = (int(c.generate_state(1)[0]) for c in ss.spawn(2))
    ch1 = metropolis_within_gibbs(target, z0, sds, s.n_phase1, seed1, adapt=s.adapt_phase1, names=target.names)
    cov = phase2_covariance(ch1.samples, sds)
    ch2 = adaptive_mh(target, ch1.samples[-1], cov, s.scale, s.n_phase2, s.burn_in, seed2,
                      names=target.names, transform=target.values_array)
    ch2.seed = s.seed
    min_samples = min(100, ch2.n_iter - ch2.burn_in)
    return ch2, posterior_summary(ch2, s.level, min_samples=min_samples)


@dataclass(frozen=True)
class EmulatorSettings:
    n_starts: int = 5
    seed: int = 0
    family: str = "matern52"


def modular_calibrate(
    model: CalibModel,
    data: FieldDataSet,
    design: Design,
    y_c,
    settings: McmcSettings | None = None,
    emulator_settings: EmulatorSettings | None = None,
) -> tuple[Chain, PosteriorSummary, GpModel]:
    """Fit the emulator on code runs alone, plug it in, then sample the rest."""
    if model.variant not in (M2, M4):
        raise ValueError("modularization applies to the emulated variants M2 and M4")
    em = emulator_step(design, y_c, emulator_settings)
    chain, summary = two_phase_calibrate(model.replace(emulator=em), data, settings)
    return chain, summary, em


def emulator_step(design: Design, y_c, emulator_settings: EmulatorSettings | None = None) -> GpModel:
    """Step 1 of modularization and SMLE; never sees field data."""
    es = emulator_settings or EmulatorSettings()
    try:
        em = fit_emulator(design, y_c, n_starts=es.n_starts, seed=es.seed, family=es.family)
    except linalg.LinAlgError as exc:
        raise CalibrationError(f"emulator fit failed: {exc}") from exc
    q2 = loo_q2(em)
    logger.info("emulator fitted: range=%.4g variance=%.4g LOO-Q2=%.3f",
                em.kernel.range, em.kernel.variance, q2)
    return em


def loo_q2(em: GpModel) -> float:
    """Leave-one-out Q2 of a GP at fixed hyperparameters."""
    from .gp import q2_from_predictions

    Kinv = linalg.cho_solve((em.chol, True), np.eye(em.points.shape[0]))
    resid = em._alpha / np.diag(Kinv)
    return q2_from_predictions(em.outputs - resid, em.outputs)


# -------------------------------------------------------------------------
# point estimators
# -------------------------------------------------------------------------


@dataclass
class PointEstimate:
    values: dict[str, float]
    log_likelihood: float
    n_starts: int
    history: list[float] = field(default_factory=list)

    def __getitem__(self, name):
        return self.values[name]


def _start_values(model: CalibModel, names, data, n_starts, seed):
    base = model.default_init(data)
    rng = np.random.default_rng(seed)
    starts = [dict(base)]
    for _ in range(n_starts - 1):
        s = dict(base)
        for n in names:
            p = model.priors.get(n)
            if n in model.theta_names and p is not None and not isinstance(p, Fixed):
                s[n] = float(p.sample(rng))
            elif is_positive(n):
                s[n] = base[n] * float(np.exp(rng.normal(0.0, 1.0)))
        starts.append(s)
    return starts


def _maximize(objective, starts_z, tol=1e-10):
    best = (-np.inf, None)
    history = []
    converged = False
    for z0 in starts_z:
        f0 = objective(z0)
        if not np.isfinite(f0):
            history.append(best[0])
            continue
        res = optimize.minimize(lambda z: -objective(z), z0, method="Nelder-Mead",
                                options={"xatol": tol, "fatol": tol, "maxiter": 20000, "maxfev": 20000})
        converged |= bool(res.success)
        z, val = (res.x, -res.fun) if -res.fun >= f0 else (z0, f0)
        res2 = optimize.minimize(lambda z: -objective(z), z, method="BFGS", options={"gtol": 1e-9})
        if np.isfinite(res2.fun) and -res2.fun > val:
            z, val = res2.x, -res2.fun
        if val > best[0]:
            best = (val, z)
        history.append(best[0])
    if best[1] is None:
        raise CalibrationError("no starting point gave a finite likelihood")
    if not converged:
        warnings.warn("no local search converged; returning the best point found", RuntimeWarning)
    return best, history


def full_mle(model: CalibModel, data: FieldDataSet, n_starts: int = 5, seed: int = 0) -> PointEstimate:
    """Maximize the full likelihood of M1 (code + noise) or M2 (joint with code runs).

    For M1 the noise variance is profiled out in closed form. For M2 the
    emulator variance and range are optimized too, and the trend
    coefficients are profiled by generalized least squares on the joint data.
    """
    if model.variant == M1:
        names = [n for n in model.theta_names if not isinstance(model.priors.get(n), Fixed)]
        fixed = model.fixed_values()

        def theta_of(z):
            v = {**fixed, **dict(zip(names, z))}
            return np.array([v[n] for n in model.theta_names])

        def prof(z):
            r = data.y - model.simulator(data.X, theta_of(z))
            s2 = float(r @ r) / data.n
            if not s2 > 0:
                return np.inf
            return -0.5 * data.n * (np.log(2 * np.pi * s2) + 1.0)

        starts = _start_values(model, names, data, n_starts, seed)
        (val, z), hist = _maximize(prof, [np.array([s[n] for n in names]) for s in starts])
        r = data.y - model.simulator(data.X, theta_of(z))
        vals = {**dict(zip(names, map(float, z))), "sigma2_err": float(r @ r) / data.n}
        return PointEstimate(vals, float(val), n_starts, hist)
    if model.variant != M2:
        raise ValueError("full MLE is provided for M1 and M2")
    from .models import joint_moments
    from .gp import KernelSpec, cholesky, gaussian_logpdf_chol, gls_beta

    em = model.emulator
    names = [n for n in model.theta_names if not isinstance(model.priors.get(n), Fixed)]
    fixed = model.fixed_values()
    yy = np.concatenate([data.y, em.outputs])
    ratio = em.kernel.nugget / em.kernel.variance

    def unpack(z):
        v = {**fixed, **dict(zip(names, z[: len(names)]))}
        theta = np.array([v[n] for n in model.theta_names])
        s2, s2S, psi = np.exp(np.clip(z[len(names):], -700, 700))
        return theta, s2, KernelSpec(em.kernel.family, psi, s2S, ratio * s2S)

    def obj(z):
        theta, s2, k = unpack(z)
        H, _, V = joint_moments(theta, s2, data.X, em, kernel=k)
        try:
            L = cholesky(V)
        except linalg.LinAlgError:
            return -np.inf
        beta = gls_beta(H, yy, L)
        return gaussian_logpdf_chol(yy - H @ beta, L)

    starts = _start_values(model, names, data, n_starts, seed)
    z0s = [np.concatenate([[s[n] for n in names],
                           np.log([s["sigma2_err"], em.kernel.variance, em.kernel.range])]) for s in starts]
    (val, z), hist = _maximize(obj, z0s, tol=1e-8)
    theta, s2, k = unpack(z)
    vals = {**dict(zip(names, map(float, z[: len(names)]))), "sigma2_err": float(s2),
            "sigma2_S": k.variance, "psi_S": k.range}
    return PointEstimate(vals, float(val), n_starts, hist)


def smle(
    model: CalibModel,
    data: FieldDataSet,
    design: Design,
    y_c,
    n_starts: int = 5,
    seed: int = 0,
    emulator_settings: EmulatorSettings | None = None,
) -> tuple[PointEstimate, GpModel]:
    """Separated MLE: emulator from code runs, then maximize the plugged conditional likelihood."""
    if model.variant not in (M2, M4):
        raise ValueError("SMLE applies to the emulated variants M2 and M4")
    em = emulator_step(design, y_c, emulator_settings)
    m = model.replace(emulator=em)
    target = LogPosterior(m, data, include_prior=False)
    starts = _start_values(m, target.names, data, n_starts, seed)
    (val, z), hist = _maximize(target, [target.to_z(s) for s in starts], tol=1e-8)
    return PointEstimate(target.to_values(z), float(val), n_starts, hist), em


# -------------------------------------------------------------------------
# two-step least squares
# -------------------------------------------------------------------------


@dataclass(frozen=True)
class KernelSmoother:
    """Nadaraya-Watson regression with a Gaussian kernel on box-normalized inputs."""

    X: np.ndarray
    y: np.ndarray
    bandwidth: float
    lower: np.ndarray
    upper: np.ndarray

    def _u(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return (X - self.lower) / (self.upper - self.lower)

    def __call__(self, X) -> np.ndarray:
        from .gp import pairwise_distances

        d = pairwise_distances(self._u(X), self._u(self.X))
        logw = -0.5 * (d / self.bandwidth) ** 2
        logw -= logw.max(axis=1, keepdims=True)
        w = np.exp(logw)
        return (w @ self.y) / w.sum(axis=1)


def loo_bandwidth(X, y, lower, upper, grid=None) -> float:
    from .gp import pairwise_distances

    U = (np.atleast_2d(X) - lower) / (upper - lower)
    D = pairwise_distances(U)
    grid = np.geomspace(0.01, 2.0, 40) if grid is None else grid
    best, best_h = np.inf, grid[0]
    for h in grid:
        logw = -0.5 * (D / h) ** 2
        np.fill_diagonal(logw, -np.inf)
        m = logw.max(axis=1, keepdims=True)
        w = np.exp(logw - m)
        pred = (w @ y) / w.sum(axis=1)
        err = float(np.mean((y - pred) ** 2))
        if err < best - 1e-15:
            best, best_h = err, h
    return float(best_h)


def sse_objective(predict, data: FieldDataSet):
    """``M_n(theta) = mean((y - F(X, theta))^2)``."""
    def mn(theta):
        r = data.y - predict(data.X, np.asarray(theta, dtype=float))
        return float(r @ r) / data.n
    return mn


def least_squares_calibrate(
    predict: Callable,
    data: FieldDataSet,
    theta_ranges,
    n_starts: int = 5,
    seed: int = 0,
) -> tuple[np.ndarray, KernelSmoother]:
    """Minimize the mean squared residual, then smooth the residuals.

    ``predict(X, theta)`` is the simulator or an emulator mean. Starts are
    the box center followed by uniform draws in ``theta_ranges`` (p x 2).
    """
    ranges = np.asarray(theta_ranges, dtype=float).reshape(-1, 2)
    rng = np.random.default_rng(seed)
    starts = [ranges.mean(axis=1)] + [rng.uniform(ranges[:, 0], ranges[:, 1]) for _ in range(n_starts - 1)]
    best, best_val, converged = None, np.inf, False
    for s in starts:
        res = optimize.least_squares(lambda th: data.y - predict(data.X, th), s,
                                     xtol=1e-12, ftol=1e-12, gtol=1e-12, max_nfev=2000)
        val = float(res.fun @ res.fun)
        converged |= bool(res.success)
        if val < best_val:
            best, best_val = res.x, val
    if best is None:
        raise CalibrationError("least squares failed from every start")
    if not converged:
        warnings.warn("least squares did not converge; returning the best point found", RuntimeWarning)
    resid = data.y - predict(data.X, best)
    lo, hi = data.X.min(axis=0), data.X.max(axis=0)
    hi = np.where(hi > lo, hi, lo + 1.0)
    h = loo_bandwidth(data.X, resid, lo, hi)
    return best, KernelSmoother(data.X.copy(), resid, h, lo, hi)
