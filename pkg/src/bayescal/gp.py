"""Gaussian-process regression with a linear trend.

Kernels, correlation matrices, conditioning (kriging / BLUP), partial
likelihood maximization and Q2 scoring. All inputs handed to the kernels
are expected to be normalized to the unit cube; :class:`GpModel` can carry
the raw-space bounds used for that mapping.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy import linalg, optimize

logger = logging.getLogger(__name__)

MATERN52 = "matern52"
SQUARED_EXPONENTIAL = "squared_exponential"
KERNEL_FAMILIES = (MATERN52, SQUARED_EXPONENTIAL)

DEFAULT_NUGGET_RATIO = 1e-8
LOG2PI = np.log(2.0 * np.pi)


class SingularCovarianceError(linalg.LinAlgError):
    """Raised when a covariance matrix cannot be Cholesky-factorized."""


class UndefinedScoreError(ValueError):
    """Raised when Q2 is requested on holdout outputs with zero variance."""


# -------------------------------------------------------------------------
# kernels
# -------------------------------------------------------------------------


def kernel_correlation(family: str, h, psi: float):
    """Isotropic correlation as a function of Euclidean distance.

    Parameters
    ----------
    family : {"matern52", "squared_exponential"}
    h : float or ndarray
        Nonnegative distance(s).
    psi : float
        Range parameter, strictly positive.

    Returns
    -------
    float or ndarray
        Correlation values in (0, 1].
    """
    if not np.isfinite(psi) or psi <= 0:
        raise ValueError(f"range parameter must be finite and > 0, got {psi!r}")
    h = np.asarray(h, dtype=float)
    if not np.all(np.isfinite(h)):
        raise ValueError("distances must be finite")
    if np.any(h < 0):
        raise ValueError("distances must be nonnegative")
    if family == MATERN52:
        s = np.sqrt(5.0) * h / psi
        out = (1.0 + s + s * s / 3.0) * np.exp(-s)
    elif family == SQUARED_EXPONENTIAL:
        out = np.exp(-0.5 * (h / psi) ** 2)
    else:
        raise ValueError(f"unknown kernel family {family!r}")
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class KernelSpec:
    """Stationary isotropic covariance ``variance * r(h; range) (+ nugget on the diagonal)``."""

    family: str = MATERN52
    range: float = 0.3
    variance: float = 1.0
    nugget: float = 0.0

    def __post_init__(self):
        if self.family not in KERNEL_FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        if not (np.isfinite(self.range) and self.range > 0):
            raise ValueError(f"kernel range must be > 0, got {self.range!r}")
        if not (np.isfinite(self.variance) and self.variance > 0):
            raise ValueError(f"kernel variance must be > 0, got {self.variance!r}")
        if not (np.isfinite(self.nugget) and self.nugget >= 0):
            raise ValueError(f"nugget must be >= 0, got {self.nugget!r}")

    def correlation(self, h):
        return kernel_correlation(self.family, h, self.range)


def _as_points(points) -> np.ndarray:
    p = np.asarray(points, dtype=float)
    if p.ndim == 1:
        p = p[:, None]
    return p


def pairwise_distances(a, b=None) -> np.ndarray:
    a = _as_points(a)
    b = a if b is None else _as_points(b)
    d2 = (
        np.sum(a * a, axis=1)[:, None]
        + np.sum(b * b, axis=1)[None, :]
        - 2.0 * a @ b.T
    )
    np.maximum(d2, 0.0, out=d2)
    d = np.sqrt(d2)
    if b is a:
        # exact zeros and symmetry on the diagonal block
        np.fill_diagonal(d, 0.0)
        d = 0.5 * (d + d.T)
    return d


def correlation_matrix(points, kernel: KernelSpec, other=None) -> np.ndarray:
    """Correlation matrix between point sets (unit diagonal, no nugget).

    With ``other=None`` the matrix is square and symmetric.
    """
    pts = _as_points(points)
    if not np.all(np.isfinite(pts)):
        raise ValueError("points must be finite")
    if other is None:
        return kernel.correlation(pairwise_distances(pts))
    return kernel.correlation(pairwise_distances(pts, _as_points(other)))


def covariance_matrix(points, kernel: KernelSpec, nugget: bool = True) -> np.ndarray:
    """``variance * R + nugget * I`` on a single point set."""
    k = kernel.variance * correlation_matrix(points, kernel)
    if nugget and kernel.nugget > 0:
        k[np.diag_indices_from(k)] += kernel.nugget
    return k


def cholesky(matrix: np.ndarray, what: str = "covariance") -> np.ndarray:
    """Lower Cholesky factor, raising :class:`SingularCovarianceError` with a hint."""
    try:
        return linalg.cholesky(matrix, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise SingularCovarianceError(
            f"{what} matrix is not positive definite; increase the nugget "
            "(diagonal jitter) or remove duplicated points"
        ) from exc


def gaussian_logpdf_chol(resid: np.ndarray, chol: np.ndarray) -> float:
    """Multivariate normal log-density of ``resid`` given the lower Cholesky factor."""
    z = linalg.solve_triangular(chol, resid, lower=True, check_finite=False)
    n = resid.shape[0]
    return float(-0.5 * n * LOG2PI - np.sum(np.log(np.diag(chol))) - 0.5 * z @ z)


def gaussian_logpdf(resid: np.ndarray, cov: np.ndarray, what: str = "covariance") -> float:
    return gaussian_logpdf_chol(np.asarray(resid, dtype=float), cholesky(cov, what))


# -------------------------------------------------------------------------
# trend
# -------------------------------------------------------------------------


@dataclass(frozen=True)
class MeanBasis:
    """Ordered regressors ``h(u) = (1, h_1(u), ..., h_M(u))`` and coefficients."""

    names: tuple[str, ...]
    functions: tuple[Callable[[np.ndarray], np.ndarray], ...]
    coefficients: np.ndarray | None = None

    def __post_init__(self):
        if len(self.names) != len(self.functions):
            raise ValueError("one name per regressor required")
        if not self.names or self.names[0] != "1":
            raise ValueError("the first regressor must be the constant '1'")
        if self.coefficients is not None and len(self.coefficients) != len(self.names):
            raise ValueError(
                f"{len(self.names)} regressors but {len(self.coefficients)} coefficients"
            )

    @property
    def size(self) -> int:
        return len(self.names)

    def matrix(self, points) -> np.ndarray:
        pts = _as_points(points)
        return np.column_stack([np.broadcast_to(f(pts), (pts.shape[0],)) for f in self.functions])

    def with_coefficients(self, beta) -> "MeanBasis":
        return replace(self, coefficients=np.asarray(beta, dtype=float))

    @classmethod
    def constant(cls) -> "MeanBasis":
        return cls(("1",), (_const,))

    @classmethod
    def linear(cls, dim: int, names: Sequence[str] | None = None) -> "MeanBasis":
        """Constant plus one linear term per input coordinate."""
        names = list(names) if names is not None else [f"u{j}" for j in range(dim)]
        if len(names) != dim:
            raise ValueError("one name per coordinate required")
        funcs = [_const] + [_Coordinate(j) for j in range(dim)]
        return cls(tuple(["1"] + names), tuple(funcs))


def _const(u):
    return np.ones(u.shape[0])


@dataclass(frozen=True)
class _Coordinate:
    index: int

    def __call__(self, u):
        return u[:, self.index]


# -------------------------------------------------------------------------
# model
# -------------------------------------------------------------------------


@dataclass(frozen=True)
class GpPosterior:
    mean: np.ndarray
    cov: np.ndarray

    @property
    def var(self) -> np.ndarray:
        return np.diag(self.cov).copy()


@dataclass(frozen=True, eq=False)
class GpModel:
    """A fitted (or fully specified) GP with linear trend on normalized inputs.

    ``lower``/``upper`` optionally record the raw-space box that maps onto
    the unit cube; :meth:`normalize` applies it.
    """

    mean: MeanBasis
    kernel: KernelSpec
    points: np.ndarray
    outputs: np.ndarray
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    log_likelihood: float | None = None
    _chol: np.ndarray = field(init=False, repr=False)
    _alpha: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        pts = _as_points(self.points)
        y = np.asarray(self.outputs, dtype=float).ravel()
        if pts.shape[0] != y.shape[0]:
            raise ValueError("points and outputs must have the same length")
        if self.mean.coefficients is None:
            raise ValueError("mean basis needs coefficients; use fit_hyperparameters or gls_beta")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "outputs", y)
        chol = cholesky(covariance_matrix(pts, self.kernel), "design covariance")
        resid = y - self.mean.matrix(pts) @ self.mean.coefficients
        alpha = linalg.cho_solve((chol, True), resid, check_finite=False)
        object.__setattr__(self, "_chol", chol)
        object.__setattr__(self, "_alpha", alpha)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def chol(self) -> np.ndarray:
        return self._chol

    @property
    def beta(self) -> np.ndarray:
        return self.mean.coefficients

    def normalize(self, raw) -> np.ndarray:
        raw = _as_points(raw)
        if self.lower is None:
            return raw
        return (raw - self.lower) / (self.upper - self.lower)

    def trend(self, u) -> np.ndarray:
        return self.mean.matrix(u) @ self.mean.coefficients

    def cross_cov(self, u) -> np.ndarray:
        """Covariance between query points ``u`` and the design (no nugget)."""
        return self.kernel.variance * correlation_matrix(u, self.kernel, self.points)

    def predict(self, u, full_cov: bool = False):
        """Posterior mean and variance (or covariance) at normalized points."""
        u = _as_points(u)
        k = self.cross_cov(u)
        mu = self.trend(u) + k @ self._alpha
        w = linalg.solve_triangular(self._chol, k.T, lower=True, check_finite=False)
        if full_cov:
            cov = self.kernel.variance * correlation_matrix(u, self.kernel) - w.T @ w
            return mu, 0.5 * (cov + cov.T)
        var = self.kernel.variance - np.sum(w * w, axis=0)
        return mu, np.maximum(var, 0.0)

    def predict_raw(self, raw, full_cov: bool = False):
        return self.predict(self.normalize(raw), full_cov=full_cov)

    def with_data(self, points, outputs) -> "GpModel":
        """Same hyperparameters, new conditioning data."""
        return replace(self, points=points, outputs=outputs)


def gp_condition(model: GpModel, queries) -> GpPosterior:
    """Condition the GP on its design data; mean is the BLUP."""
    mu, cov = model.predict(queries, full_cov=True)
    return GpPosterior(mu, cov)


# -------------------------------------------------------------------------
# fitting
# -------------------------------------------------------------------------


def gls_beta(H: np.ndarray, y: np.ndarray, chol: np.ndarray) -> np.ndarray:
    """Generalized least squares ``(H' V^-1 H)^-1 H' V^-1 y`` from ``chol(V)``."""
    Hw = linalg.solve_triangular(chol, H, lower=True, check_finite=False)
    yw = linalg.solve_triangular(chol, y, lower=True, check_finite=False)
    beta, *_ = np.linalg.lstsq(Hw, yw, rcond=None)
    return beta


def partial_loglik(points, outputs, basis: MeanBasis, beta, kernel: KernelSpec) -> float:
    """Gaussian log-density of the code outputs under the GP prior."""
    pts = _as_points(points)
    y = np.asarray(outputs, dtype=float)
    V = covariance_matrix(pts, kernel)
    return gaussian_logpdf(y - basis.matrix(pts) @ np.asarray(beta), V, "design covariance")


def _profile(R: np.ndarray, H: np.ndarray, y: np.ndarray, nugget_ratio: float, var_floor: float):
    """Profile out beta (GLS) and the variance for a fixed correlation matrix."""
    n = y.shape[0]
    Rn = R.copy()
    Rn[np.diag_indices_from(Rn)] += nugget_ratio
    L = linalg.cholesky(Rn, lower=True, check_finite=False)
    beta = gls_beta(H, y, L)
    z = linalg.solve_triangular(L, y - H @ beta, lower=True, check_finite=False)
    sigma2 = max(float(z @ z) / n, var_floor)
    logdet = 2.0 * np.sum(np.log(np.diag(L))) + n * np.log(sigma2)
    ll = -0.5 * (n * LOG2PI + logdet + float(z @ z) / sigma2)
    return ll, beta, sigma2


def fit_hyperparameters(
    points,
    outputs,
    basis: MeanBasis,
    family: str = MATERN52,
    n_starts: int = 5,
    seed: int = 0,
    nugget_ratio: float = DEFAULT_NUGGET_RATIO,
    range_bounds: tuple[float, float] = (1e-2, 3.0),
    lower=None,
    upper=None,
) -> GpModel:
    """Maximize the partial likelihood over (beta, variance, range).

    beta and the variance are profiled in closed form given the range, so
    the search is one-dimensional in log(range); it is restarted from
    log-uniform draws in ``range_bounds`` and the best restart is kept
    (ties go to the lowest restart index).
    """
    pts = _as_points(points)
    y = np.asarray(outputs, dtype=float).ravel()
    if not np.all(np.isfinite(y)):
        raise ValueError("outputs must be finite")
    N = pts.shape[0]
    if N < basis.size + 1:
        raise ValueError(f"need at least {basis.size + 1} design points for {basis.size} regressors")
    H = basis.matrix(pts)
    D = pairwise_distances(pts)
    var_floor = 1e-12 * max(float(np.var(y)), float(np.mean(y * y)), 1e-300)
    log_lo, log_hi = np.log(range_bounds[0]), np.log(range_bounds[1])
    log_min, log_max = np.log(1e-3), np.log(30.0)

    def objective(v):
        lp = float(np.clip(v[0], log_min, log_max))
        try:
            ll, _, _ = _profile(kernel_correlation(family, D, np.exp(lp)), H, y, nugget_ratio, var_floor)
        except linalg.LinAlgError:
            return np.inf
        # soft wall outside the admissible range
        return -ll + 1e3 * (v[0] - lp) ** 2

    rng = np.random.default_rng(seed)
    starts = rng.uniform(log_lo, log_hi, size=max(int(n_starts), 1))
    best = None
    improved = False
    for i, s in enumerate(starts):
        f0 = objective([s])
        res = optimize.minimize(
            objective, x0=[s], method="Nelder-Mead",
            options={"xatol": 1e-6, "fatol": 1e-10, "maxiter": 400},
        )
        val, x = (res.fun, res.x[0]) if res.fun <= f0 else (f0, s)
        if np.isfinite(val) and val < f0 - 1e-12:
            improved = True
        if best is None or val < best[0]:
            best = (val, x, i)
    if best is None or not np.isfinite(best[0]):
        raise SingularCovarianceError("no restart produced a factorizable design covariance; increase the nugget")
    if not improved:
        warnings.warn("hyperparameter search did not improve on any starting point", RuntimeWarning)
    psi = float(np.exp(np.clip(best[1], log_min, log_max)))
    ll, beta, sigma2 = _profile(kernel_correlation(family, D, psi), H, y, nugget_ratio, var_floor)
    logger.debug("GP fit: range=%.4g variance=%.4g loglik=%.6g (restart %d)", psi, sigma2, ll, best[2])
    kernel = KernelSpec(family, psi, sigma2, nugget_ratio * sigma2)
    return GpModel(
        basis.with_coefficients(beta), kernel, pts, y,
        lower=None if lower is None else np.asarray(lower, dtype=float),
        upper=None if upper is None else np.asarray(upper, dtype=float),
        log_likelihood=ll,
    )


def q2_score(model: GpModel, inputs, outputs, normalized: bool = True) -> float:
    """Predictive coefficient of determination on held-out code runs."""
    y = np.asarray(outputs, dtype=float).ravel()
    if y.shape[0] < 2:
        raise ValueError("Q2 needs at least two holdout points")
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        raise UndefinedScoreError("holdout outputs are constant; Q2 is undefined")
    u = inputs if normalized else model.normalize(inputs)
    mu, _ = model.predict(u)
    return q2_from_predictions(mu, y)


def q2_from_predictions(pred, y) -> float:
    y = np.asarray(y, dtype=float)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        raise UndefinedScoreError("holdout outputs are constant; Q2 is undefined")
    return 1.0 - float(np.sum((y - np.asarray(pred)) ** 2)) / ss_tot
