"""Design of experiments over (observed inputs x, calibration parameters).

The observed inputs of a field campaign are strongly correlated (irradiance
follows time of day, temperature follows irradiance), so the space-filling
design is drawn on decorrelated principal axes and rotated back.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.spatial.distance import pdist

INITIAL = "initial"
SEQUENTIAL = "sequential"


class SimulatorError(RuntimeError):
    """A simulator call failed; ``index`` is the offending design row."""

    def __init__(self, index: int, cause: BaseException):
        super().__init__(f"simulator failed at design point {index}: {cause}")
        self.index = index


def _lhs(N: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    strata = np.column_stack([rng.permutation(N) for _ in range(dim)])
    return (strata + rng.uniform(size=(N, dim))) / N


def min_distance(points) -> float:
    pts = np.asarray(points, dtype=float)
    if pts.shape[0] < 2:
        return np.inf
    return float(pdist(pts).min())


def maximin_lhs(N: int, dim: int, seed: int = 0, n_candidates: int = 100) -> np.ndarray:
    """Best-of-``n_candidates`` random Latin hypercube in ``[0, 1]^dim``.

    Each column has exactly one point per stratum ``[k/N, (k+1)/N)``; the
    candidate with the largest minimum pairwise distance is returned.
    """
    if N < 2 or dim < 1:
        raise ValueError("maximin_lhs needs N >= 2 and dim >= 1")
    if n_candidates < 1:
        raise ValueError("n_candidates must be >= 1")
    rng = np.random.default_rng(seed)
    best, best_d = None, -np.inf
    for _ in range(n_candidates):
        cand = _lhs(N, dim, rng)
        d = min_distance(cand)
        if d > best_d:
            best, best_d = cand, d
    return best


@dataclass(frozen=True)
class PcaTransform:
    """Scaling plus orthonormal rotation onto uncorrelated axes.

    ``project(x) = ((x - mean) / scale) @ T``; ``T`` columns are the
    eigenvectors of the correlation matrix, by decreasing eigenvalue.
    """

    mean: np.ndarray
    scale: np.ndarray
    T: np.ndarray
    axis_min: np.ndarray
    axis_max: np.ndarray
    names: tuple[str, ...] = ()

    @property
    def dim(self) -> int:
        return self.T.shape[0]

    def project(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return ((X - self.mean) / self.scale) @ self.T

    def unproject(self, Z) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        return (Z @ self.T.T) * self.scale + self.mean

    @classmethod
    def identity(cls, dim: int, lower=None, upper=None) -> "PcaTransform":
        """No rotation or scaling; axis ranges default to the unit box."""
        lo = np.zeros(dim) if lower is None else np.asarray(lower, dtype=float)
        hi = np.ones(dim) if upper is None else np.asarray(upper, dtype=float)
        return cls(np.zeros(dim), np.ones(dim), np.eye(dim), lo, hi)


def pca_decorrelate(X, names: Sequence[str] | None = None) -> PcaTransform:
    """PCA on the centered, unit-variance columns of ``X`` (n x d)."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("X must be a 2-D array")
    n, d = X.shape
    if n <= d:
        raise ValueError(f"need more rows than columns, got {n} x {d}")
    names = tuple(names) if names is not None else tuple(f"x{j}" for j in range(d))
    mean = X.mean(axis=0)
    scale = X.std(axis=0, ddof=1)
    for j in range(d):
        if not scale[j] > 0:
            raise ValueError(f"column {names[j]!r} is constant; drop it before PCA")
    Z = (X - mean) / scale
    C = Z.T @ Z / (n - 1)
    # round-off correlations would otherwise rotate a degenerate eigenbasis arbitrarily
    C[np.abs(C) < 1e-12] = 0.0
    evals, evecs = np.linalg.eigh(C)
    order = np.argsort(evals)[::-1]
    T = evecs[:, order]
    # sign convention: largest-magnitude entry of each axis positive
    signs = np.sign(T[np.abs(T).argmax(axis=0), np.arange(d)])
    signs[signs == 0] = 1.0
    T = T * signs
    proj = Z @ T
    return PcaTransform(mean, scale, T, proj.min(axis=0), proj.max(axis=0), names)


@dataclass(frozen=True)
class Design:
    """N points over (x, tau) in raw units with provenance tags.

    ``lower``/``upper`` give the per-coordinate normalization box (the
    emulator maps it onto the unit cube).
    """

    points: np.ndarray
    provenance: tuple[str, ...]
    lower: np.ndarray
    upper: np.ndarray
    names: tuple[str, ...]
    n_inputs: int

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        object.__setattr__(self, "points", pts)
        if pts.shape[0] < 1:
            raise ValueError("a design needs at least one point")
        if len(self.provenance) != pts.shape[0]:
            raise ValueError("one provenance tag per point required")
        if len(self.names) != pts.shape[1]:
            raise ValueError("one name per coordinate required")

    @property
    def N(self) -> int:
        return self.points.shape[0]

    @property
    def x(self) -> np.ndarray:
        return self.points[:, : self.n_inputs]

    @property
    def tau(self) -> np.ndarray:
        return self.points[:, self.n_inputs:]

    def normalized(self) -> np.ndarray:
        return (self.points - self.lower) / (self.upper - self.lower)

    def append(self, x, tau, provenance: str = SEQUENTIAL) -> "Design":
        row = np.concatenate([np.ravel(x), np.ravel(tau)])[None, :]
        lo = np.minimum(self.lower, row[0])
        hi = np.maximum(self.upper, row[0])
        return Design(
            np.vstack([self.points, row]), self.provenance + (provenance,),
            lo, hi, self.names, self.n_inputs,
        )

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(list(self.names) + ["provenance"])
            for row, tag in zip(self.points, self.provenance):
                w.writerow([repr(float(v)) for v in row] + [tag])

    @classmethod
    def from_csv(cls, path, n_inputs: int, lower=None, upper=None) -> "Design":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        pts = np.array([[float(v) for v in r[:-1]] for r in body])
        lo = pts.min(axis=0) if lower is None else np.asarray(lower, dtype=float)
        hi = pts.max(axis=0) if upper is None else np.asarray(upper, dtype=float)
        return cls(pts, tuple(r[-1] for r in body), lo, hi, tuple(header[:-1]), n_inputs)


def build_design(
    transform: PcaTransform,
    param_ranges,
    N: int,
    seed: int = 0,
    n_candidates: int = 100,
    param_names: Sequence[str] | None = None,
    observed=None,
) -> Design:
    """Maximin LHS on (PCA axes, parameter box), mapped back to raw units.

    The first ``d`` unit-cube coordinates are stretched over the projected
    axis ranges, rotated back and unscaled; the last ``p`` are stretched
    over ``param_ranges``. Rotated-back points are kept even if they leave
    the physically meaningful region. ``observed`` (raw field inputs), if
    given, widens the stored normalization box so it covers them too.
    """
    ranges = np.asarray(param_ranges, dtype=float).reshape(-1, 2)
    d, p = transform.dim, ranges.shape[0]
    if d + p > 20:
        raise ValueError("design dimension above 20 is not supported")
    if not np.all(np.isfinite(ranges)) or np.any(ranges[:, 1] <= ranges[:, 0]):
        raise ValueError("parameter ranges must be finite with lo < hi")
    U = maximin_lhs(N, d + p, seed=seed, n_candidates=n_candidates)
    span = transform.axis_max - transform.axis_min
    Z = transform.axis_min + U[:, :d] * span
    X = transform.unproject(Z)
    tau = ranges[:, 0] + U[:, d:] * (ranges[:, 1] - ranges[:, 0])
    pts = np.hstack([X, tau])
    x_lo, x_hi = X.min(axis=0), X.max(axis=0)
    if observed is not None:
        obs = np.asarray(observed, dtype=float)
        x_lo = np.minimum(x_lo, obs.min(axis=0))
        x_hi = np.maximum(x_hi, obs.max(axis=0))
    lo = np.concatenate([x_lo, ranges[:, 0]])
    hi = np.concatenate([x_hi, ranges[:, 1]])
    hi = np.where(hi > lo, hi, lo + 1.0)
    names = list(transform.names) or [f"x{j}" for j in range(d)]
    names += list(param_names) if param_names is not None else [f"theta{j}" for j in range(p)]
    return Design(pts, (INITIAL,) * N, lo, hi, tuple(names), d)


def run_design(simulator: Callable, design: Design) -> np.ndarray:
    """Evaluate the simulator at every design point, order preserved.

    ``simulator(X, theta)`` takes an (m x d) input block and one parameter
    vector; points are evaluated one at a time so a failure names its row.
    """
    out = np.empty(design.N)
    for i in range(design.N):
        try:
            val = np.asarray(simulator(design.x[i : i + 1], design.tau[i]), dtype=float).ravel()
        except Exception as exc:  # noqa: BLE001 - re-raised with the row index
            raise SimulatorError(i, exc) from exc
        if val.shape != (1,) or not np.isfinite(val[0]):
            raise SimulatorError(i, ValueError(f"non-finite or malformed output {val!r}"))
        out[i] = val[0]
    return out
