"""Sequential augmentation of the code design, EGO style.

Each step fits a scalar GP to the mean squared misfit ``M_n(theta)``
(computed through the emulator mean) at probe parameters, picks the
parameter maximizing expected improvement over random candidates, runs
the code at that parameter and at the field input where the emulator is
least certain, and refits the emulator.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import gp
from .design import SEQUENTIAL, Design, SimulatorError, maximin_lhs
from .inference import EmulatorSettings, emulator_step, loo_q2
from .models import emulator_inputs
from .testbed import FieldDataSet


def sse_criterion(theta, emulator: gp.GpModel, data: FieldDataSet) -> float:
    """Mean squared residual of the field data against the emulator mean at ``theta``."""
    mu, _ = emulator.predict(emulator_inputs(emulator, data.X, theta))
    r = data.y - mu
    return float(r @ r) / data.n


def expected_improvement(m, s, best):
    """EI for minimization; vectorized over ``m`` and ``s``."""
    m = np.asarray(m, dtype=float)
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise ValueError("predictive sd must be >= 0")
    gain = best - m
    pos = s > 0
    safe = np.where(pos, s, 1.0)
    z = gain / safe
    ei = np.where(pos, gain * stats.norm.cdf(z) + safe * stats.norm.pdf(z), np.maximum(gain, 0.0))
    ei = np.maximum(ei, 0.0)
    return ei if ei.ndim else float(ei)


@dataclass
class AugmentationTrace:
    points: list[np.ndarray] = field(default_factory=list)
    criterion: list[float] = field(default_factory=list)
    expected_improvement: list[float] = field(default_factory=list)
    q2_before: float = np.nan
    q2_after: float = np.nan

    @property
    def n_added(self) -> int:
        return len(self.points)

    def best_so_far(self) -> np.ndarray:
        return np.minimum.accumulate(np.asarray(self.criterion, dtype=float))

    def to_csv(self, path, names=None) -> None:
        d = len(self.points[0]) if self.points else 0
        names = list(names) if names is not None else [f"c{j}" for j in range(d)]
        best = self.best_so_far()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", *names, "criterion", "best_so_far", "expected_improvement",
                        "q2_before", "q2_after"])
            for k, p in enumerate(self.points):
                w.writerow([k, *(repr(float(v)) for v in p), repr(self.criterion[k]), repr(float(best[k])),
                            repr(self.expected_improvement[k]), repr(self.q2_before), repr(self.q2_after)])


class AugmentationError(RuntimeError):
    """Simulator failure during augmentation; ``trace`` holds the completed steps."""

    def __init__(self, trace: AugmentationTrace, cause: BaseException):
        super().__init__(f"simulator failed after {trace.n_added} added points: {cause}")
        self.trace = trace


def _q2(em, holdout):
    if holdout is None:
        return loo_q2(em)
    X, y = holdout
    return gp.q2_score(em, X, y, normalized=False)


def augment_design(
    simulator,
    design: Design,
    y_c,
    data: FieldDataSet,
    budget: int = 10,
    seed: int = 0,
    n_probes: int | None = None,
    n_candidates: int = 512,
    emulator_settings: EmulatorSettings | None = None,
    holdout=None,
) -> tuple[Design, np.ndarray, gp.GpModel, AugmentationTrace]:
    """Add ``budget`` code runs chosen for calibration.

    ``holdout`` is an optional ``(raw points, outputs)`` pair of extra code
    runs used for Q2 before and after; without it the leave-one-out Q2 of
    the fitted emulator is reported. Returns the augmented design, its code
    outputs, the refitted emulator and the trace.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    es = emulator_settings or EmulatorSettings()
    y_c = np.asarray(y_c, dtype=float).copy()
    em = emulator_step(design, y_c, es)
    trace = AugmentationTrace(q2_before=_q2(em, holdout))
    d = design.n_inputs
    p = design.points.shape[1] - d
    q_lo, q_hi = design.lower[d:].copy(), design.upper[d:].copy()
    n_probes = n_probes or 10 * p
    rng = np.random.default_rng(seed)
    probes = list(q_lo + maximin_lhs(n_probes, p, seed=seed, n_candidates=20) * (q_hi - q_lo))
    for k in range(budget):
        values = np.array([sse_criterion(t, em, data) for t in probes])
        U = (np.array(probes) - q_lo) / (q_hi - q_lo)
        scale = values.std() or 1.0
        surrogate = gp.fit_hyperparameters(
            U, (values - values.mean()) / scale, gp.MeanBasis.constant(), gp.MATERN52,
            n_starts=3, seed=seed + k,
        )
        cand = rng.uniform(size=(n_candidates, p))
        m, v = surrogate.predict(cand)
        best = float((values.min() - values.mean()) / scale)
        ei = expected_improvement(m, np.sqrt(v), best)
        j = int(np.argmax(ei))
        theta = q_lo + cand[j] * (q_hi - q_lo)
        _, var = em.predict(emulator_inputs(em, data.X, theta))
        x = data.X[int(np.argmax(var))]
        try:
            out = np.asarray(simulator(x[None, :], theta), dtype=float).ravel()
            if out.shape != (1,) or not np.isfinite(out[0]):
                raise ValueError(f"non-finite or malformed output {out!r}")
        except Exception as exc:  # noqa: BLE001 - surfaced with the partial trace
            raise AugmentationError(trace, SimulatorError(design.N, exc)) from exc
        design = design.append(x, theta, SEQUENTIAL)
        y_c = np.append(y_c, out[0])
        em = emulator_step(design, y_c, es)
        probes.append(theta)
        trace.points.append(np.concatenate([x, theta]))
        trace.criterion.append(sse_criterion(theta, em, data))
        trace.expected_improvement.append(float(ei[j] * scale))
    trace.q2_after = _q2(em, holdout)
    return design, y_c, em, trace
