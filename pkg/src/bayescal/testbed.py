"""Simulators with known ground truth, synthetic field data and Morris screening.

The PV code used here is a stand-in built from textbook solar-geometry and
cell-temperature relations (Duffie & Beckman). It is not the proprietary
solver of any real plant; its formula is pinned so runs are reproducible:

    declination  d   = 23.45 deg * sin(2 pi (284 + day) / 365)
    hour angle   w   = 15 deg * (solar_hour - 12)
    cos_z            = sin L sin d + cos L cos d cos w   (horizontal panel)
    beam         I_b = max(I_g - I_d, 0)
    modifier     f   = clip(1 - a_r (1 / cos_z - 1), 0, 1)
    irradiance   G   = n_inc (f I_b + I_d) + 0.1 a_l I_g
    cell temp    T_c = T_e + I_g (n_t - 20) / 800
    power        P   = count * area * eta * G * (1 + mu_t / 100 (T_c - 25))

with ``P`` clipped at 0 and ``P = 0`` whenever ``cos_z <= 0``. ``t`` is UTC
seconds since Jan 1 00:00, ``day = floor(t / 86400) + 1`` and the solar hour
is the UTC hour plus ``longitude / 15`` (mean solar time, no equation of
time).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .gp import KernelSpec, cholesky, correlation_matrix

# reference values: the three active parameters at their expert prior means
PV_THETA_NAMES = ("eta", "mu_t", "a_r")
PV_ALL_THETA_NAMES = ("eta", "mu_t", "a_r", "n_t", "a_l", "n_inc")
PV_REFERENCE_THETA = (0.143, -0.4, 0.17)
PV_INPUT_NAMES = ("t", "I_g", "I_d", "T_e")

# screening box for the six code parameters; the first three are +-2 prior sd
PV_PARAMETER_RANGES = {
    "eta": (0.043, 0.243),
    "mu_t": (-0.6, -0.2),
    "a_r": (0.05, 0.29),
    "n_t": (43.0, 47.0),
    "a_l": (0.15, 0.25),
    "n_inc": (0.94, 0.96),
}


@dataclass(frozen=True)
class PvSurrogateConfig:
    panel_count: int = 12
    panel_area: float = 1.6
    n_t: float = 45.0
    a_l: float = 0.2
    n_inc: float = 0.95
    latitude: float = 45.0
    longitude: float = 5.0

    def __post_init__(self):
        if self.panel_count <= 0 or self.panel_area <= 0:
            raise ValueError("panel count and area must be positive")


def solar_cos_zenith(t, latitude: float, longitude: float):
    t = np.asarray(t, dtype=float)
    day = np.floor(t / 86400.0) + 1.0
    solar_hour = np.mod(t, 86400.0) / 3600.0 + longitude / 15.0
    decl = np.radians(23.45) * np.sin(2.0 * np.pi * (284.0 + day) / 365.0)
    omega = np.radians(15.0 * (solar_hour - 12.0))
    lat = np.radians(latitude)
    return np.sin(lat) * np.sin(decl) + np.cos(lat) * np.cos(decl) * np.cos(omega)


def pv_surrogate(x, theta, config: PvSurrogateConfig | None = None):
    """Power (W) of the PV stand.

    Parameters
    ----------
    x : array_like, shape (6,) or (n, 6)
        ``(t, L, l, I_g, I_d, T_e)``.
    theta : array_like
        ``(eta, mu_t, a_r)`` or ``(eta, mu_t, a_r, n_t, a_l, n_inc)``; the
        inactive three default to the config reference values.
    """
    cfg = config or PvSurrogateConfig()
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    t, L, l, Ig, Id, Te = (x[:, j] for j in range(6))
    th = np.asarray(theta, dtype=float).ravel()
    if th.size == 3:
        eta, mu_t, a_r = th
        n_t, a_l, n_inc = cfg.n_t, cfg.a_l, cfg.n_inc
    elif th.size == 6:
        eta, mu_t, a_r, n_t, a_l, n_inc = th
    else:
        raise ValueError("theta must have 3 or 6 components")
    p = _pv_power(t, L, l, Ig, Id, Te, eta, mu_t, a_r, n_t, a_l, n_inc, cfg)
    return float(p[0]) if single else p


def _pv_power(t, L, l, Ig, Id, Te, eta, mu_t, a_r, n_t, a_l, n_inc, cfg):
    if np.any(Ig < 0) or np.any(Id < 0):
        raise ValueError("irradiance inputs must be nonnegative")
    day = np.floor(t / 86400.0) + 1.0
    solar_hour = np.mod(t, 86400.0) / 3600.0 + l / 15.0
    decl = np.radians(23.45) * np.sin(2.0 * np.pi * (284.0 + day) / 365.0)
    omega = np.radians(15.0 * (solar_hour - 12.0))
    lat = np.radians(L)
    cos_z = np.sin(lat) * np.sin(decl) + np.cos(lat) * np.cos(decl) * np.cos(omega)
    up = cos_z > 0
    safe = np.where(up, cos_z, 1.0)
    beam = np.maximum(Ig - Id, 0.0)
    f = np.clip(1.0 - a_r * (1.0 / safe - 1.0), 0.0, 1.0)
    G = n_inc * (f * beam + Id) + 0.1 * a_l * Ig
    Tc = Te + Ig * (n_t - 20.0) / 800.0
    P = cfg.panel_count * cfg.panel_area * eta * G * (1.0 + mu_t / 100.0 * (Tc - 25.0))
    return np.where(up, np.maximum(P, 0.0), 0.0)


@dataclass(frozen=True)
class Simulator:
    """A vectorized code ``f(X, theta)`` with named inputs and parameters."""

    function: Callable[[np.ndarray, np.ndarray], np.ndarray]
    input_names: tuple[str, ...]
    theta_names: tuple[str, ...]
    name: str = "code"

    def __call__(self, X, theta) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None] if len(self.input_names) == 1 else X[None, :]
        return np.asarray(self.function(X, np.asarray(theta, dtype=float)), dtype=float).reshape(-1)


def pv_simulator(
    config: PvSurrogateConfig | None = None, theta_names=PV_THETA_NAMES, clip_irradiance: bool = False,
) -> Simulator:
    """The PV code over inputs ``(t, I_g, I_d, T_e)`` at the configured site.

    Design points rotated back from the decorrelated axes can carry negative
    irradiances; ``clip_irradiance=True`` reads those as zero instead of
    raising, which lets a design run keep every point.
    """
    cfg = config or PvSurrogateConfig()
    theta_names = tuple(theta_names)
    if theta_names not in (PV_THETA_NAMES, PV_ALL_THETA_NAMES):
        raise ValueError("theta_names must be the 3 active or all 6 PV parameters")

    def f(X, theta):
        n = X.shape[0]
        full = np.column_stack([X[:, 0], np.full(n, cfg.latitude), np.full(n, cfg.longitude), X[:, 1:4]])
        if clip_irradiance:
            full[:, 3:5] = np.maximum(full[:, 3:5], 0.0)
        return pv_surrogate(full, theta, cfg)

    return Simulator(f, PV_INPUT_NAMES, theta_names, "pv")


def _constant(X, th):
    return np.full(X.shape[0], th[0])


def _linear(X, th):
    return th[0] + th[1] * X[:, 0]


def _sine(X, th):
    return th[0] * np.sin(2.0 * np.pi * X[:, 0]) + th[1]


_ANALYTIC = {
    # f = theta1, identifiable from the data mean
    "constant": (_constant, ("theta1",)),
    # f = theta1 + theta2 x, identifiable from two distinct x
    "linear": (_linear, ("theta1", "theta2")),
    # f = theta1 sin(2 pi x) + theta2; identifiable unless every x is a multiple of 1/2
    "sine": (_sine, ("theta1", "theta2")),
}


def analytic_codes(name: str) -> Simulator:
    """Small analytic codes on a scalar input ``x``."""
    try:
        fn, names = _ANALYTIC[name]
    except KeyError:
        raise ValueError(f"unknown analytic code {name!r}; choose from {sorted(_ANALYTIC)}") from None
    return Simulator(fn, ("x",), names, name)


# -------------------------------------------------------------------------
# synthetic field data
# -------------------------------------------------------------------------


@dataclass(frozen=True)
class FieldDataSet:
    """Observed inputs ``X`` (n x d) and outputs ``y`` (n)."""

    X: np.ndarray
    y: np.ndarray
    input_names: tuple[str, ...] = PV_INPUT_NAMES

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        if X.shape[0] == 1 and len(self.input_names) == 1 and X.shape[1] != 1:
            X = X.T
        y = np.asarray(self.y, dtype=float).ravel()
        if X.shape[0] != y.shape[0]:
            raise ValueError(f"X has {X.shape[0]} rows but y has {y.shape[0]} values")
        if X.shape[1] != len(self.input_names):
            raise ValueError("one input name per column of X required")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("field data must be finite")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    def subset(self, idx) -> "FieldDataSet":
        return FieldDataSet(self.X[idx], self.y[idx], self.input_names)

    def days(self) -> np.ndarray:
        """Day index of each row (requires a ``t`` column in seconds)."""
        j = self.input_names.index("t")
        return np.floor(self.X[:, j] / 86400.0).astype(int)


def synthetic_weather(
    n_days: int,
    seed: int = 0,
    start_day: int = 213,
    config: PvSurrogateConfig | None = None,
    min_irradiance: float = 20.0,
) -> np.ndarray:
    """Hourly daylight inputs ``(t, I_g, I_d, T_e)`` for ``n_days`` days.

    Clear-sky irradiance is modulated by a daily clearness index and an
    hourly AR(1) cloud factor; diffuse share rises as the sky clouds over.
    Hours whose global irradiance is below ``min_irradiance`` are dropped.
    """
    cfg = config or PvSurrogateConfig()
    rng = np.random.default_rng(seed)
    rows = []
    for k in range(n_days):
        day0 = (start_day - 1 + k) * 86400.0
        clear = rng.beta(5.0, 1.5)
        t_off = rng.normal(0.0, 2.0)
        c = 0.0
        for h in range(24):
            t = day0 + (h + 0.5) * 3600.0
            cz = solar_cos_zenith(t, cfg.latitude, cfg.longitude)
            c = 0.6 * c + rng.normal(0.0, 0.08)
            if cz <= 0.05:
                continue
            k_t = float(np.clip(clear + c, 0.1, 1.0))
            Ig = 1000.0 * cz ** 1.2 * k_t
            if Ig < min_irradiance:
                continue
            frac = float(np.clip(0.12 + 0.8 * (1.0 - k_t) + rng.normal(0.0, 0.02), 0.08, 0.98))
            Id = Ig * frac
            sh = np.mod(t, 86400.0) / 3600.0 + cfg.longitude / 15.0
            Te = 20.0 + t_off + 6.0 * np.sin(2.0 * np.pi * (sh - 9.0) / 24.0) + 0.004 * Ig + rng.normal(0.0, 0.5)
            rows.append((t, Ig, Id, Te))
    return np.asarray(rows)


@dataclass(frozen=True)
class Discrepancy:
    """Injected structural error ``delta(x)``.

    ``kind="sine"``: ``amplitude * sin(pi * I_g / 1000)``, a smooth bump in
    irradiance (expects the PV input layout).
    ``kind="gp"``: a draw from a zero-mean GP with squared-exponential
    correlation on inputs normalized to their observed range (well-specified
    for the discrepancy GP of the calibration models).
    ``kind="function"``: ``amplitude * function(X)``.
    """

    kind: str = "sine"
    amplitude: float = 0.0
    range: float = 0.3
    function: Callable | None = None

    def __post_init__(self):
        if self.amplitude < 0:
            raise ValueError("discrepancy amplitude must be >= 0")
        if self.kind not in ("sine", "gp", "function"):
            raise ValueError(f"unknown discrepancy kind {self.kind!r}")

    def evaluate(self, X, rng: np.random.Generator, input_names=PV_INPUT_NAMES) -> np.ndarray:
        X = np.atleast_2d(X)
        if self.amplitude == 0:
            return np.zeros(X.shape[0])
        if self.kind == "sine":
            Ig = X[:, list(input_names).index("I_g")]
            return self.amplitude * np.sin(np.pi * Ig / 1000.0)
        if self.kind == "function":
            return self.amplitude * np.asarray(self.function(X), dtype=float)
        lo, hi = X.min(axis=0), X.max(axis=0)
        U = (X - lo) / np.where(hi > lo, hi - lo, 1.0)
        K = correlation_matrix(U, KernelSpec("squared_exponential", self.range))
        K[np.diag_indices_from(K)] += 1e-8
        return self.amplitude * (cholesky(K) @ rng.standard_normal(X.shape[0]))


@dataclass(frozen=True)
class SyntheticScenario:
    theta: Sequence[float] = PV_REFERENCE_THETA
    sigma_err: float = 0.0
    discrepancy: Discrepancy = field(default_factory=Discrepancy)
    n_days: int = 25
    start_day: int = 213
    seed: int = 0
    X: np.ndarray | None = None

    def time_grid(self, config: PvSurrogateConfig | None = None) -> np.ndarray:
        if self.X is not None:
            return np.asarray(self.X, dtype=float)
        return synthetic_weather(self.n_days, seed=self.seed, start_day=self.start_day, config=config)


def generate_field_data(scenario: SyntheticScenario, simulator: Simulator, config=None) -> FieldDataSet:
    """``y = f_c(X, theta*) + delta(X) + N(0, sigma_err^2)``; rows with zero code output are dropped."""
    X = scenario.time_grid(config)
    if "t" in simulator.input_names and X.shape[0] > 1:
        j = simulator.input_names.index("t")
        if np.any(np.diff(X[:, j]) <= 0):
            raise ValueError("time grid must be strictly increasing")
    f = simulator(X, scenario.theta)
    keep = f > 0 if simulator.name == "pv" else np.ones(X.shape[0], dtype=bool)
    X, f = X[keep], f[keep]
    rng = np.random.default_rng([scenario.seed, 1])
    delta = scenario.discrepancy.evaluate(X, rng, simulator.input_names)
    noise = scenario.sigma_err * rng.standard_normal(X.shape[0])
    return FieldDataSet(X, f + delta + noise, simulator.input_names)


def noise_for_snr(simulator: Simulator, X, theta, snr: float = 20.0) -> float:
    """Noise sd giving ``sd(f_c(X, theta)) / sigma_err = snr``."""
    return float(np.std(simulator(X, theta)) / snr)


# -------------------------------------------------------------------------
# Morris screening
# -------------------------------------------------------------------------


@dataclass(frozen=True)
class MorrisResult:
    names: tuple[str, ...]
    mu_star: np.ndarray
    sigma: np.ndarray
    mu: np.ndarray
    effects: np.ndarray  # (r, k) elementary effects in normalized units

    def ranking(self) -> list[str]:
        return [self.names[i] for i in np.argsort(-self.mu_star, kind="stable")]


class TrajectoryError(RuntimeError):
    def __init__(self, trajectory: int, cause: BaseException):
        super().__init__(f"simulator failed in Morris trajectory {trajectory}: {cause}")
        self.trajectory = trajectory


def morris_trajectories(k: int, r: int, levels: int, rng: np.random.Generator) -> np.ndarray:
    """``r`` one-at-a-time trajectories of ``k + 1`` points in the unit cube."""
    delta = levels / (2.0 * (levels - 1))
    grid = np.arange(levels // 2) / (levels - 1)
    B = np.tril(np.ones((k + 1, k)), -1)
    J = np.ones((k + 1, k))
    out = np.empty((r, k + 1, k))
    for m in range(r):
        x0 = rng.choice(grid, size=k)
        D = np.diag(rng.choice([-1.0, 1.0], size=k))
        P = np.eye(k)[rng.permutation(k)]
        out[m] = (J * x0 + 0.5 * delta * ((2.0 * B - J) @ D + J)) @ P
    return out


def morris_screening(
    function: Callable[[np.ndarray], float],
    ranges,
    r: int = 10,
    levels: int = 4,
    seed: int = 0,
    names: Sequence[str] | None = None,
) -> MorrisResult:
    """Elementary-effects screening of a scalar function of ``k`` inputs.

    ``ranges`` is (k, 2); effects are finite differences in the normalized
    cube. Returns ``mu_star = mean |EE|`` and ``sigma = sd(EE)`` per input.
    """
    ranges = np.asarray(ranges, dtype=float).reshape(-1, 2)
    k = ranges.shape[0]
    if r < 2:
        raise ValueError("Morris screening needs at least 2 trajectories")
    if levels < 2 or levels % 2:
        raise ValueError("the number of levels must be even")
    names = tuple(names) if names is not None else tuple(f"x{j}" for j in range(k))
    rng = np.random.default_rng(seed)
    traj = morris_trajectories(k, r, levels, rng)
    lo, width = ranges[:, 0], ranges[:, 1] - ranges[:, 0]
    ee = np.empty((r, k))
    for m in range(r):
        try:
            vals = np.array([float(function(lo + u * width)) for u in traj[m]])
        except Exception as exc:  # noqa: BLE001 - re-raised with the trajectory index
            raise TrajectoryError(m, exc) from exc
        steps = np.diff(traj[m], axis=0)
        for s in range(k):
            j = int(np.flatnonzero(steps[s])[0])
            ee[m, j] = (vals[s + 1] - vals[s]) / steps[s, j]
    return MorrisResult(names, np.abs(ee).mean(axis=0), ee.std(axis=0, ddof=1), ee.mean(axis=0), ee)


def pv_noon_input(day: int = 237, config: PvSurrogateConfig | None = None,
                  I_g: float = 800.0, I_d: float = 150.0, T_e: float = 25.0) -> np.ndarray:
    """A ``(t, L, l, I_g, I_d, T_e)`` row at local solar noon of ``day``."""
    cfg = config or PvSurrogateConfig()
    t = (day - 1) * 86400.0 + (12.0 - cfg.longitude / 15.0) * 3600.0
    return np.array([t, cfg.latitude, cfg.longitude, I_g, I_d, T_e])
