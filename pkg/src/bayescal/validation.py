"""Predictive bands, coverage and RMSE, and day-block cross-validation."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Mapping, Protocol, Sequence

import numpy as np
from scipy import linalg

from .gp import cholesky
from .inference import Chain, McmcSettings, two_phase_calibrate
from .models import CalibModel, discrepancy_cov, emulator_inputs
from .priors import Prior
from .testbed import FieldDataSet


@dataclass(frozen=True)
class PredictiveBand:
    lower: np.ndarray
    median: np.ndarray
    upper: np.ndarray
    prediction: np.ndarray
    level: float

    def __post_init__(self):
        if not (np.all(self.lower <= self.median) and np.all(self.median <= self.upper)):
            raise ValueError("band must satisfy lower <= median <= upper")

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def to_csv(self, path, X=None, input_names: Sequence[str] = ()) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([*input_names, "lower", "median", "upper", "prediction", "level"])
            for i in range(self.lower.shape[0]):
                xs = [repr(float(v)) for v in X[i]] if X is not None else []
                w.writerow([*xs, *(repr(float(a[i])) for a in (self.lower, self.median, self.upper,
                                                             self.prediction)), repr(self.level)])


def band_from_draws(draws: np.ndarray, level: float = 0.90, prediction=None) -> PredictiveBand:
    """Pointwise equal-tailed band from a (n_draws x n_points) sample."""
    if not 0 < level <= 1:
        raise ValueError("level must be in (0, 1]")
    a = 0.5 * (1.0 - level)
    lo, med, hi = np.quantile(draws, [a, 0.5, 1.0 - a], axis=0)
    pred = draws.mean(axis=0) if prediction is None else np.asarray(prediction, dtype=float)
    # quantile interpolation can break the ordering by one ulp
    med = np.clip(med, lo, hi)
    return PredictiveBand(lo, med, hi, pred, level)


def coverage_rate(band: PredictiveBand, y) -> float:
    y = np.asarray(y, dtype=float)
    if y.shape != band.lower.shape:
        raise ValueError(f"band has {band.lower.shape[0]} points but y has {y.shape[0]}")
    return float(np.mean((band.lower <= y) & (y <= band.upper)))


def rmse(pred, y) -> float:
    pred, y = np.asarray(pred, dtype=float), np.asarray(y, dtype=float)
    if pred.shape != y.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {y.shape}")
    return float(np.sqrt(np.mean((pred - y) ** 2)))


def energy_integral(power, timestep: float) -> float:
    """Rectangle-rule energy in kWh of a power series (W) on a uniform grid (s)."""
    if timestep < 0:
        raise ValueError("timestep must be >= 0")
    return float(np.sum(np.asarray(power, dtype=float)) * timestep / 3.6e6)


# -------------------------------------------------------------------------
# prediction
# -------------------------------------------------------------------------


def _draw_indices(n_kept, draws, rng):
    if draws is None:
        return np.arange(n_kept)
    return rng.choice(n_kept, size=draws, replace=draws > n_kept)


def _conditioned_discrepancy(model: CalibModel, v, X_new, train: FieldDataSet, resid, extra_cov=None):
    """Mean and variance of delta(X_new) given training residuals."""
    fam, lo, hi = model.discrepancy_family, model.x_lower, model.x_upper
    s2d, psi = v["sigma2_delta"], v["psi_delta"]
    Xall = np.vstack([train.X, X_new])
    K = discrepancy_cov(Xall, s2d, psi, fam, lo, hi)
    n = train.n
    S = K[:n, :n].copy()
    if extra_cov is not None:
        S += extra_cov
    S[np.diag_indices_from(S)] += v["sigma2_err"]
    L = cholesky(S, "training covariance")
    Kx = K[n:, :n]
    W = linalg.solve_triangular(L, Kx.T, lower=True)
    mean = Kx @ linalg.cho_solve((L, True), resid)
    var = np.maximum(s2d - np.sum(W * W, axis=0), 0.0)
    return mean, var


def predictive_moments(
    model: CalibModel, values: Mapping[str, float], X_new, train: FieldDataSet | None = None,
    emulator_variance: bool = False,
):
    """Mean and variance of the latent field response (noise excluded) at one posterior draw.

    The code part is the simulator output or the emulator mean; the
    emulator's own variance at ``X_new`` is added only on request. M3 and
    M4 condition the discrepancy on the training residuals
    ``y - code_mean(X, theta)``, whose covariance for M4 includes the
    emulator's conditional covariance as in the likelihood.
    """
    v = {**model.fixed_values(), **values}
    X_new = np.atleast_2d(np.asarray(X_new, dtype=float))
    theta = np.array([v[n] for n in model.theta_names])
    if model.emulated:
        mean, var = model.emulator.predict(emulator_inputs(model.emulator, X_new, theta))
        if not emulator_variance:
            var = np.zeros_like(var)
    else:
        mean, var = model.simulator(X_new, theta), np.zeros(X_new.shape[0])
    if model.has_discrepancy and v["sigma2_delta"] > 0:
        if train is None:
            var = var + v["sigma2_delta"]
        else:
            extra = None
            if model.emulated:
                mu_t, extra = model.emulator.predict(emulator_inputs(model.emulator, train.X, theta), full_cov=True)
            else:
                mu_t = model.simulator(train.X, theta)
            dm, dv = _conditioned_discrepancy(model, v, X_new, train, train.y - mu_t, extra)
            mean, var = mean + dm, var + dv
    return mean, var


def posterior_predict(
    model: CalibModel,
    chain: Chain,
    X_new,
    level: float = 0.90,
    draws: int | None = None,
    seed: int = 0,
    train: FieldDataSet | None = None,
    noise: bool = True,
    emulator_variance: bool = False,
) -> PredictiveBand:
    """Posterior predictive band of new field observations at ``X_new``.

    One predictive sample per retained (or resampled, if ``draws`` is
    given) posterior draw: latent mean plus a Gaussian draw with the latent
    variance plus measurement noise.
    """
    rng = np.random.default_rng(seed)
    S = chain.kept()
    if S.shape[0] < 1:
        raise ValueError("chain has no post-burn-in samples")
    X_new = np.atleast_2d(np.asarray(X_new, dtype=float))
    idx = _draw_indices(S.shape[0], draws, rng)
    out = np.empty((idx.size, X_new.shape[0]))
    means = np.empty_like(out)
    for k, i in enumerate(idx):
        vals = dict(zip(chain.names, S[i]))
        mean, var = predictive_moments(model, vals, X_new, train, emulator_variance)
        if noise:
            var = var + {**model.fixed_values(), **vals}["sigma2_err"]
        out[k] = mean + np.sqrt(var) * rng.standard_normal(X_new.shape[0])
        means[k] = mean
    return band_from_draws(out, level, means.mean(axis=0))


def prior_predictive_band(
    simulator,
    priors: Mapping[str, Prior],
    X,
    n_draws: int = 100,
    level: float = 0.90,
    seed: int = 0,
    theta_names: Sequence[str] | None = None,
) -> PredictiveBand:
    """Code outputs under parameters drawn from their priors."""
    names = tuple(theta_names or simulator.theta_names)
    rng = np.random.default_rng(seed)
    draws = np.array([simulator(X, [float(priors[n].sample(rng)) for n in names]) for _ in range(n_draws)])
    return band_from_draws(draws, level)


# -------------------------------------------------------------------------
# cross-validation
# -------------------------------------------------------------------------


class Fitted(Protocol):
    def predict(self, X_new, level: float, seed: int) -> PredictiveBand: ...


@dataclass
class CalibrationSpec:
    """Calibrate ``model`` by two-phase MCMC on each training split.

    ``model`` must already carry its emulator and discrepancy box.
    """

    model: CalibModel
    settings: McmcSettings = field(default_factory=McmcSettings)
    draws: int | None = 500

    def fit(self, train: FieldDataSet, seed: int) -> "FittedCalibration":
        s = McmcSettings(**{**self.settings.__dict__, "seed": seed})
        chain, _ = two_phase_calibrate(self.model, train, s)
        return FittedCalibration(self.model, chain, train, self.draws)


@dataclass
class FittedCalibration:
    model: CalibModel
    chain: Chain
    train: FieldDataSet
    draws: int | None

    def predict(self, X_new, level: float = 0.90, seed: int = 0) -> PredictiveBand:
        return posterior_predict(self.model, self.chain, X_new, level, self.draws, seed, self.train)


@dataclass
class ValidationReport:
    coverage: np.ndarray
    rmse: np.ndarray
    holdout_days: list[tuple[int, ...]]
    level: float

    def __post_init__(self):
        self.coverage = np.asarray(self.coverage, dtype=float)
        self.rmse = np.asarray(self.rmse, dtype=float)

    @property
    def n_reps(self) -> int:
        return self.coverage.shape[0]

    @property
    def mean_coverage(self) -> float:
        return float(self.coverage.mean())

    @property
    def mean_rmse(self) -> float:
        return float(self.rmse.mean())

    @property
    def median_coverage(self) -> float:
        return float(np.median(self.coverage))

    @property
    def median_rmse(self) -> float:
        return float(np.median(self.rmse))

    def to_csv(self, path, label: str = "model") -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["model", "replicate", "holdout_days", "coverage", "rmse", "level"])
            for k in range(self.n_reps):
                w.writerow([label, k, " ".join(map(str, self.holdout_days[k])),
                            repr(float(self.coverage[k])), repr(float(self.rmse[k])), repr(self.level)])
            w.writerow([label, "mean", "", repr(self.mean_coverage), repr(self.mean_rmse), repr(self.level)])


def holdout_blocks(data: FieldDataSet, n_reps: int, n_days: int = 3, seed: int = 0) -> list[tuple[int, ...]]:
    """Random blocks of ``n_days`` consecutive observed days."""
    days = np.unique(data.days())
    if days.size < n_days + 1:
        raise ValueError(f"need at least {n_days + 1} observed days, got {days.size}")
    rng = np.random.default_rng(seed)
    starts = rng.integers(0, days.size - n_days + 1, size=n_reps)
    return [tuple(int(d) for d in days[s: s + n_days]) for s in starts]


def cross_validate(
    spec,
    data: FieldDataSet,
    n_reps: int = 100,
    holdout_days: int = 3,
    level: float = 0.90,
    seed: int = 0,
    single_point: bool = False,
) -> ValidationReport:
    """Hold out consecutive days, refit on the rest, score the held-out block.

    ``spec.fit(train, seed)`` must return an object with
    ``predict(X_new, level, seed) -> PredictiveBand``. Replicate seeds are
    spawned from ``seed``. With ``single_point`` each replicate holds out
    one random observation instead of a day block; the report then lists
    the held-out row index in place of the days.
    """
    if single_point:
        if data.n < 2:
            raise ValueError("need at least 2 observations")
        rows = np.random.default_rng(seed).integers(0, data.n, size=n_reps)
        blocks = [(int(r),) for r in rows]
    else:
        blocks = holdout_blocks(data, n_reps, holdout_days, seed)
    children = np.random.SeedSequence(seed).spawn(n_reps)
    day = data.days()
    cov, err = [], []
    for block, child in zip(blocks, children):
        fit_seed, pred_seed = (int(s) for s in child.generate_state(2))
        if single_point:
            test = np.zeros(data.n, dtype=bool)
            test[block[0]] = True
        else:
            test = np.isin(day, block)
        fitted = spec.fit(data.subset(~test), fit_seed)
        band = fitted.predict(data.X[test], level, pred_seed)
        cov.append(coverage_rate(band, data.y[test]))
        err.append(rmse(band.prediction, data.y[test]))
    return ValidationReport(np.array(cov), np.array(err), blocks, level)
