"""Calibration model structures and their likelihoods.

Four variants share one parameter vocabulary:

========  =====================================  ==========================
variant   field data model                       nuisance parameters
========  =====================================  ==========================
M1        code + noise                           sigma2_err
M2        emulated code + noise                  sigma2_err (+ emulator)
M3        code + discrepancy + noise             sigma2_err, sigma2_delta, psi_delta
M4        emulated code + discrepancy + noise    as M3 (+ emulator)
========  =====================================  ==========================

Measurement noise, emulator error and discrepancy are independent. The
discrepancy is a zero-mean GP on the observed inputs (normalized to the
field-data box); the emulator is a GP on normalized ``(x, theta)``. Every
log-likelihood here is a normalized Gaussian log-density, so the full
likelihood splits exactly into partial plus conditional terms.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np
from scipy import linalg

from . import gp
from .design import Design
from .gp import (
    LOG2PI, MATERN52, SQUARED_EXPONENTIAL, GpModel, KernelSpec, MeanBasis,
    cholesky, gaussian_logpdf, gaussian_logpdf_chol, kernel_correlation, pairwise_distances,
)
from .priors import Fixed, Prior, log_prior
from .testbed import FieldDataSet, Simulator

M1, M2, M3, M4 = "M1", "M2", "M3", "M4"
VARIANTS = (M1, M2, M3, M4)
MODULAR, FULL = "modular", "full"

_NUISANCE = {
    M1: ("sigma2_err",),
    M2: ("sigma2_err",),
    M3: ("sigma2_err", "sigma2_delta", "psi_delta"),
    M4: ("sigma2_err", "sigma2_delta", "psi_delta"),
}
EMULATOR_NUISANCE = ("sigma2_S", "psi_S")


def is_positive(name: str) -> bool:
    return name.startswith("sigma2_") or name.startswith("psi_")


# -------------------------------------------------------------------------
# building blocks
# -------------------------------------------------------------------------


def box_normalize(X, lower, upper) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if lower is None:
        return X
    return (X - lower) / (upper - lower)


def discrepancy_cov(X, sigma2_delta, psi_delta, family=SQUARED_EXPONENTIAL, lower=None, upper=None):
    """``sigma2_delta * r(||x_i - x_j||; psi_delta)`` on normalized inputs."""
    U = box_normalize(X, lower, upper)
    if sigma2_delta == 0:
        return np.zeros((U.shape[0], U.shape[0]))
    return sigma2_delta * kernel_correlation(family, pairwise_distances(U), psi_delta)


def emulator_inputs(emulator: GpModel, X, theta) -> np.ndarray:
    """Normalized joint inputs ``(x_i, theta)`` for every row of ``X``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    th = np.broadcast_to(np.asarray(theta, dtype=float), (X.shape[0], np.size(theta)))
    return emulator.normalize(np.hstack([X, th]))


def fit_emulator(
    design: Design,
    y_c,
    n_starts: int = 5,
    seed: int = 0,
    family: str = MATERN52,
    nugget_ratio: float = gp.DEFAULT_NUGGET_RATIO,
) -> GpModel:
    """Fit the code emulator by partial-likelihood maximization (code runs only).

    The trend is linear in every normalized coordinate of ``(x, theta)``.
    """
    U = design.normalized()
    basis = MeanBasis.linear(U.shape[1], design.names)
    return gp.fit_hyperparameters(
        U, y_c, basis, family, n_starts=n_starts, seed=seed, nugget_ratio=nugget_ratio,
        lower=design.lower, upper=design.upper,
    )


# -------------------------------------------------------------------------
# likelihoods
# -------------------------------------------------------------------------


def loglik_m1(theta, sigma2_err, X, y, simulator) -> float:
    """Code plus iid Gaussian noise."""
    if not sigma2_err > 0:
        raise ValueError("sigma2_err must be > 0")
    y = np.asarray(y, dtype=float)
    r = y - simulator(X, theta)
    n = y.shape[0]
    return float(-0.5 * n * LOG2PI - 0.5 * n * np.log(sigma2_err) - 0.5 * (r @ r) / sigma2_err)


def loglik_m3(
    theta, sigma2_delta, psi_delta, sigma2_err, X, y, simulator,
    family=SQUARED_EXPONENTIAL, lower=None, upper=None, disc_mean=None,
) -> float:
    """Code plus GP discrepancy plus noise; ``disc_mean(X)`` defaults to zero."""
    y = np.asarray(y, dtype=float)
    m = simulator(X, theta)
    if disc_mean is not None:
        m = m + disc_mean(X)
    V = discrepancy_cov(X, sigma2_delta, psi_delta, family, lower, upper)
    V[np.diag_indices_from(V)] += sigma2_err
    return gaussian_logpdf(y - m, V, "field-data covariance")


def loglik_partial(emulator: GpModel) -> float:
    """Log-density of the code runs under the emulator GP."""
    return gp.partial_loglik(emulator.points, emulator.outputs, emulator.mean, emulator.beta, emulator.kernel)


def conditional_moments(emulator: GpModel, X, theta):
    """Mean and covariance of the emulated code at ``(X, theta)`` given the code runs."""
    return emulator.predict(emulator_inputs(emulator, X, theta), full_cov=True)


def loglik_conditional(
    theta, sigma2_err, X, y, emulator: GpModel, sigma2_delta=0.0, psi_delta=1.0,
    family=SQUARED_EXPONENTIAL, lower=None, upper=None,
) -> float:
    """Field data given code runs, with the emulator hyperparameters plugged in."""
    mu, S = conditional_moments(emulator, X, theta)
    S = S + discrepancy_cov(X, sigma2_delta, psi_delta, family, lower, upper)
    S[np.diag_indices_from(S)] += sigma2_err
    return gaussian_logpdf(np.asarray(y, dtype=float) - mu, S, "conditional covariance")


def joint_moments(
    theta, sigma2_err, X, emulator: GpModel, sigma2_delta=0.0, psi_delta=1.0,
    family=SQUARED_EXPONENTIAL, lower=None, upper=None, beta=None, kernel=None,
):
    """Mean and covariance of ``(y_exp, y_c)`` jointly.

    ``beta``/``kernel`` override the emulator's fitted trend coefficients and
    covariance hyperparameters.
    """
    beta = emulator.beta if beta is None else np.asarray(beta, dtype=float)
    k = emulator.kernel if kernel is None else kernel
    Ue = emulator_inputs(emulator, X, theta)
    Uc = emulator.points
    H = np.vstack([emulator.mean.matrix(Ue), emulator.mean.matrix(Uc)])
    Kee = k.variance * gp.correlation_matrix(Ue, k)
    Kee += discrepancy_cov(X, sigma2_delta, psi_delta, family, lower, upper)
    Kee[np.diag_indices_from(Kee)] += sigma2_err
    Kec = k.variance * gp.correlation_matrix(Ue, k, Uc)
    Kcc = gp.covariance_matrix(Uc, k)
    V = np.block([[Kee, Kec], [Kec.T, Kcc]])
    return H, H @ beta, V


def loglik_full(
    theta, sigma2_err, X, y, emulator: GpModel, sigma2_delta=0.0, psi_delta=1.0,
    family=SQUARED_EXPONENTIAL, lower=None, upper=None, beta=None, kernel=None,
) -> float:
    """Joint log-density of field data and code runs."""
    _, m, V = joint_moments(theta, sigma2_err, X, emulator, sigma2_delta, psi_delta,
                            family, lower, upper, beta, kernel)
    yy = np.concatenate([np.asarray(y, dtype=float), emulator.outputs])
    return gaussian_logpdf(yy - m, V, "joint covariance")


# -------------------------------------------------------------------------
# model object
# -------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CalibModel:
    """One of the four calibration structures with its priors.

    ``x_lower``/``x_upper`` define the box that maps the observed inputs
    onto the unit cube for the discrepancy kernel. Priors of type
    :class:`~bayescal.priors.Fixed` pin a parameter; parameters with no
    prior at all are given a flat prior.
    """

    variant: str
    priors: Mapping[str, Prior]
    simulator: Simulator | None = None
    emulator: GpModel | None = None
    theta_names: tuple[str, ...] = ()
    discrepancy_family: str = SQUARED_EXPONENTIAL
    x_lower: np.ndarray | None = None
    x_upper: np.ndarray | None = None
    mode: str = MODULAR
    disc_mean: Callable | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown model variant {self.variant!r}")
        if self.mode not in (MODULAR, FULL):
            raise ValueError(f"unknown estimation mode {self.mode!r}")
        if self.simulator is None and self.variant in (M1, M3):
            raise ValueError(f"{self.variant} needs a simulator")
        if not self.theta_names:
            if self.simulator is None:
                raise ValueError("theta_names required when no simulator is bound")
            object.__setattr__(self, "theta_names", tuple(self.simulator.theta_names))
        object.__setattr__(self, "priors", dict(self.priors))
        for name in ("x_lower", "x_upper"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, np.asarray(v, dtype=float))

    @property
    def emulated(self) -> bool:
        return self.variant in (M2, M4)

    @property
    def has_discrepancy(self) -> bool:
        return self.variant in (M3, M4)

    @property
    def nuisance_names(self) -> tuple[str, ...]:
        names = _NUISANCE[self.variant]
        if self.emulated and self.mode == FULL:
            names = names + tuple(n for n in EMULATOR_NUISANCE if n in self.priors)
        return names

    @property
    def all_names(self) -> tuple[str, ...]:
        return tuple(self.theta_names) + self.nuisance_names

    @property
    def free_names(self) -> tuple[str, ...]:
        return tuple(n for n in self.all_names if not isinstance(self.priors.get(n), Fixed))

    def fixed_values(self) -> dict[str, float]:
        return {n: p.value for n, p in self.priors.items() if isinstance(p, Fixed) and n in self.all_names}

    def replace(self, **changes) -> "CalibModel":
        kw = {f: getattr(self, f) for f in self.__dataclass_fields__}
        kw.update(changes)
        return CalibModel(**kw)

    def with_data_box(self, X) -> "CalibModel":
        X = np.atleast_2d(np.asarray(X, dtype=float))
        lo, hi = X.min(axis=0), X.max(axis=0)
        return self.replace(x_lower=lo, x_upper=np.where(hi > lo, hi, lo + 1.0))

    def code_mean(self, X, theta) -> np.ndarray:
        """Code output, or emulator posterior mean, at ``(X, theta)``."""
        if self.emulated:
            mu, _ = self.emulator.predict(emulator_inputs(self.emulator, X, theta))
            return mu
        return self.simulator(X, theta)

    def _emulator_for(self, v):
        if self.emulated and self.mode == FULL and ("sigma2_S" in v or "psi_S" in v):
            k = self.emulator.kernel
            s2 = v.get("sigma2_S", k.variance)
            return KernelSpec(k.family, v.get("psi_S", k.range), s2, k.nugget / k.variance * s2)
        return None

    def log_likelihood(self, values: Mapping[str, float], data: FieldDataSet) -> float:
        v = {**self.fixed_values(), **values}
        theta = np.array([v[n] for n in self.theta_names])
        s2 = v["sigma2_err"]
        disc = dict(family=self.discrepancy_family, lower=self.x_lower, upper=self.x_upper)
        if self.variant == M1:
            return loglik_m1(theta, s2, data.X, data.y, self.simulator)
        if self.variant == M3:
            return loglik_m3(theta, v["sigma2_delta"], v["psi_delta"], s2, data.X, data.y,
                             self.simulator, disc_mean=self.disc_mean, **disc)
        sd2 = v.get("sigma2_delta", 0.0) if self.variant == M4 else 0.0
        pd = v.get("psi_delta", 1.0) if self.variant == M4 else 1.0
        if self.mode == FULL:
            return loglik_full(theta, s2, data.X, data.y, self.emulator, sd2, pd,
                               kernel=self._emulator_for(v), **disc)
        return loglik_conditional(theta, s2, data.X, data.y, self.emulator, sd2, pd, **disc)

    def log_prior(self, values: Mapping[str, float]) -> float:
        return log_prior(dict(values), {k: p for k, p in self.priors.items() if not isinstance(p, Fixed)})

    def log_posterior(self, values: Mapping[str, float], data: FieldDataSet) -> float:
        lp = self.log_prior(values)
        if not np.isfinite(lp):
            return -np.inf
        return lp + self.log_likelihood(values, data)

    def target(self, data: FieldDataSet) -> "LogPosterior":
        return LogPosterior(self, data)

    def default_init(self, data: FieldDataSet) -> dict[str, float]:
        """Prior means for theta; nuisance variances from the residual spread."""
        v = {}
        for n in self.theta_names:
            p = self.priors.get(n)
            v[n] = p.mean if p is not None else 0.0
        theta = np.array([v[n] for n in self.theta_names])
        r = data.y - self.code_mean(data.X, theta)
        rv = max(float(np.mean(r * r)), 1e-12 * max(float(np.mean(data.y ** 2)), 1e-300))
        guess = {"sigma2_err": rv, "sigma2_delta": 0.5 * rv, "psi_delta": 0.3}
        if self.has_discrepancy:
            guess["sigma2_err"] = 0.5 * rv
        if self.emulated:
            guess["sigma2_S"] = self.emulator.kernel.variance
            guess["psi_S"] = self.emulator.kernel.range
        for n in self.nuisance_names:
            p = self.priors.get(n)
            x = guess[n]
            if p is not None and not p.in_support(x):
                x = p.mean
            v[n] = x
        v.update(self.fixed_values())
        return {n: v[n] for n in self.free_names}


# -------------------------------------------------------------------------
# cached target for samplers and optimizers
# -------------------------------------------------------------------------


class LogPosterior:
    """Log-posterior on the unconstrained sampling scale.

    Positive nuisance parameters are sampled as logarithms; the log-Jacobian
    is included so the chain targets the posterior of the original values.
    Caches the factorization that does not depend on theta, which makes
    single-coordinate updates of theta cheap.
    """

    def __init__(self, model: CalibModel, data: FieldDataSet, include_prior: bool = True):
        self.model = model
        self.data = data
        self.include_prior = include_prior
        self.names = model.free_names
        self.log_scale = np.array([is_positive(n) for n in self.names])
        self._fixed = model.fixed_values()
        self._theta_idx = [model.theta_names.index(n) for n in model.theta_names]
        self.n_evals = 0
        self._key = None
        self._chol = None
        m = model
        if m.has_discrepancy:
            self._Dx = pairwise_distances(box_normalize(data.X, m.x_lower, m.x_upper))
        if m.emulated and m.mode == MODULAR:
            em = m.emulator
            q = data.X.shape[1]
            Ux = em.normalize(np.hstack([data.X, np.zeros((data.n, em.dim - q))]))[:, :q]
            self._q = q
            self._Ree = kernel_correlation(em.kernel.family, pairwise_distances(Ux), em.kernel.range)
            Dc = em.points
            self._Dx2_ec = pairwise_distances(Ux, Dc[:, :q]) ** 2
            self._Ux = Ux

    # -- conversions --------------------------------------------------------

    def to_values(self, z) -> dict[str, float]:
        z = np.asarray(z, dtype=float)
        x = np.where(self.log_scale, np.exp(np.clip(z, -700, 700)), z)
        out = dict(zip(self.names, (float(a) for a in x)))
        return out

    def values_array(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return np.where(self.log_scale, np.exp(np.clip(z, -700, 700)), z)

    def to_z(self, values: Mapping[str, float]) -> np.ndarray:
        x = np.array([values[n] for n in self.names], dtype=float)
        with np.errstate(divide="ignore"):
            return np.where(self.log_scale, np.log(np.where(self.log_scale, x, 1.0)), x)

    # -- evaluation ---------------------------------------------------------

    def __call__(self, z) -> float:
        z = np.asarray(z, dtype=float)
        if not np.all(np.isfinite(z)):
            return -np.inf
        v = {**self._fixed, **self.to_values(z)}
        lp = 0.0
        if self.include_prior:
            lp = self.model.log_prior({n: v[n] for n in self.names})
            if not np.isfinite(lp):
                return -np.inf
            lp += float(np.sum(z[self.log_scale]))
        self.n_evals += 1
        try:
            ll = self._loglik(v)
        except linalg.LinAlgError:
            return -np.inf
        return lp + ll if np.isfinite(ll) else -np.inf

    def log_likelihood(self, values: Mapping[str, float]) -> float:
        return self._loglik({**self._fixed, **values})

    def _loglik(self, v) -> float:
        m, data = self.model, self.data
        theta = np.array([v[n] for n in m.theta_names])
        s2 = v["sigma2_err"]
        if not s2 > 0:
            return -np.inf
        if m.variant == M1:
            r = data.y - m.simulator(data.X, theta)
            n = data.n
            return float(-0.5 * n * LOG2PI - 0.5 * n * np.log(s2) - 0.5 * (r @ r) / s2)
        if m.variant == M3:
            key = (v["sigma2_delta"], v["psi_delta"], s2)
            if key != self._key:
                V = v["sigma2_delta"] * kernel_correlation(m.discrepancy_family, self._Dx, v["psi_delta"])
                V[np.diag_indices_from(V)] += s2
                self._chol = cholesky(V, "field-data covariance")
                self._key = key
            r = data.y - m.simulator(data.X, theta)
            if m.disc_mean is not None:
                r = r - m.disc_mean(data.X)
            return gaussian_logpdf_chol(r, self._chol)
        if m.mode == FULL:
            return m.log_likelihood(v, data)
        return self._conditional(theta, v, s2)

    def _conditional(self, theta, v, s2) -> float:
        m, data = self.model, self.data
        em = m.emulator
        k = em.kernel
        q = self._q
        u_theta = em.normalize(np.concatenate([np.zeros(q), theta])[None, :])[0, q:]
        d2 = self._Dx2_ec + np.sum((em.points[:, q:] - u_theta) ** 2, axis=1)[None, :]
        Kec = k.variance * kernel_correlation(k.family, np.sqrt(d2), k.range)
        Ue = np.hstack([self._Ux, np.broadcast_to(u_theta, (data.n, u_theta.size))])
        mu = em.trend(Ue) + Kec @ em._alpha
        W = linalg.solve_triangular(em.chol, Kec.T, lower=True, check_finite=False)
        S = k.variance * self._Ree - W.T @ W
        if m.variant == M4:
            S += v["sigma2_delta"] * kernel_correlation(m.discrepancy_family, self._Dx, v["psi_delta"])
        S[np.diag_indices_from(S)] += s2
        L = cholesky(S, "conditional covariance")
        return gaussian_logpdf_chol(data.y - mu, L)
