"""Prior distributions for calibration and nuisance parameters."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np
from scipy import special, stats


class Prior:
    """Base class; subclasses are frozen dataclasses."""

    positive = False

    def logpdf(self, x: float) -> float:
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, size=None):
        raise NotImplementedError

    def in_support(self, x: float) -> bool:
        return bool(np.isfinite(self.logpdf(x)))

    @property
    def mean(self) -> float:
        raise NotImplementedError

    @property
    def sd(self) -> float:
        raise NotImplementedError

    def scaled(self, factor: float) -> "Prior":
        """Same center, variance multiplied by ``factor``."""
        raise NotImplementedError


@dataclass(frozen=True)
class Normal(Prior):
    mu: float
    var: float

    def __post_init__(self):
        if not self.var > 0:
            raise ValueError(f"normal prior variance must be > 0, got {self.var}")

    def logpdf(self, x):
        return -0.5 * math.log(2.0 * math.pi * self.var) - 0.5 * (x - self.mu) ** 2 / self.var

    def sample(self, rng, size=None):
        return rng.normal(self.mu, math.sqrt(self.var), size=size)

    @property
    def mean(self):
        return self.mu

    @property
    def sd(self):
        return math.sqrt(self.var)

    def scaled(self, factor):
        return Normal(self.mu, self.var * factor)

    def __str__(self):
        return f"normal({self.mu!r}, {self.var!r})"


@dataclass(frozen=True)
class Gamma(Prior):
    """Shape-scale parameterization: mean ``shape * scale``."""

    shape: float
    scale: float
    positive = True

    def __post_init__(self):
        if not (self.shape > 0 and self.scale > 0):
            raise ValueError("gamma prior shape and scale must be > 0")

    def logpdf(self, x):
        if not x > 0:
            return -np.inf
        return float(
            (self.shape - 1.0) * math.log(x) - x / self.scale
            - special.gammaln(self.shape) - self.shape * math.log(self.scale)
        )

    def sample(self, rng, size=None):
        return rng.gamma(self.shape, self.scale, size=size)

    @property
    def mean(self):
        return self.shape * self.scale

    @property
    def sd(self):
        return math.sqrt(self.shape) * self.scale

    def scaled(self, factor):
        # keep the mean, multiply the variance
        return Gamma(self.shape / factor, self.scale * factor)

    def __str__(self):
        return f"gamma({self.shape!r}, {self.scale!r})"


@dataclass(frozen=True)
class Uniform(Prior):
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"uniform prior needs lo < hi, got ({self.lo}, {self.hi})")

    @property
    def positive(self):
        return self.lo >= 0

    def logpdf(self, x):
        if self.lo <= x <= self.hi:
            return -math.log(self.hi - self.lo)
        return -np.inf

    def sample(self, rng, size=None):
        return rng.uniform(self.lo, self.hi, size=size)

    @property
    def mean(self):
        return 0.5 * (self.lo + self.hi)

    @property
    def sd(self):
        return (self.hi - self.lo) / math.sqrt(12.0)

    def scaled(self, factor):
        half = 0.5 * (self.hi - self.lo) * math.sqrt(factor)
        return Uniform(self.mean - half, self.mean + half)

    def __str__(self):
        return f"uniform({self.lo!r}, {self.hi!r})"


@dataclass(frozen=True)
class Fixed(Prior):
    """Point mass; the parameter is held at ``value`` and never sampled."""

    value: float

    def logpdf(self, x):
        return 0.0 if x == self.value else -np.inf

    def sample(self, rng, size=None):
        return np.full(size, self.value) if size is not None else self.value

    @property
    def mean(self):
        return self.value

    @property
    def sd(self):
        return 0.0

    def scaled(self, factor):
        return self

    def __str__(self):
        return f"fixed({self.value!r})"


_PATTERN = re.compile(r"^\s*(normal|gamma|uniform|fixed)\s*\(([^)]*)\)\s*$", re.IGNORECASE)


def parse_prior(text: str) -> Prior:
    """Parse ``normal(mu, var)``, ``gamma(shape, scale)``, ``uniform(lo, hi)`` or ``fixed(v)``."""
    m = _PATTERN.match(text)
    if not m:
        raise ValueError(f"cannot parse prior {text!r}")
    kind = m.group(1).lower()
    try:
        args = [float(a) for a in m.group(2).split(",") if a.strip()]
    except ValueError:
        raise ValueError(f"non-numeric prior argument in {text!r}") from None
    expected = 1 if kind == "fixed" else 2
    if len(args) != expected:
        raise ValueError(f"{kind} prior takes {expected} arguments, got {len(args)}")
    return {"normal": Normal, "gamma": Gamma, "uniform": Uniform, "fixed": Fixed}[kind](*args)


def default_priors() -> dict[str, Prior]:
    """Expert priors of the PV application (variances for the normals)."""
    return {
        "eta": Normal(0.143, 2.5e-3),
        "mu_t": Normal(-0.4, 1e-2),
        "a_r": Normal(0.17, 3.6e-3),
        "sigma2_err": Gamma(2.0, 169.0),
        "sigma2_delta": Gamma(3.0, 1.0),
        "psi_delta": Uniform(0.0, 1.0),
    }


def log_prior(values: dict[str, float], priors: dict[str, Prior]) -> float:
    """Sum of marginal log-densities; parameters without a prior are flat."""
    total = 0.0
    for name, x in values.items():
        p = priors.get(name)
        if p is None:
            continue
        lp = p.logpdf(x)
        if not np.isfinite(lp):
            return -np.inf
        total += lp
    return float(total)


def normal_quantile_interval(prior: Prior, level: float = 0.95):
    """Central interval of a prior (used to size screening boxes)."""
    a = 0.5 * (1.0 - level)
    if isinstance(prior, Normal):
        z = stats.norm.ppf(1.0 - a)
        return prior.mu - z * prior.sd, prior.mu + z * prior.sd
    if isinstance(prior, Gamma):
        return stats.gamma.ppf(a, prior.shape, scale=prior.scale), stats.gamma.ppf(1 - a, prior.shape, scale=prior.scale)
    if isinstance(prior, Uniform):
        w = prior.hi - prior.lo
        return prior.lo + a * w, prior.hi - a * w
    return prior.mean, prior.mean
