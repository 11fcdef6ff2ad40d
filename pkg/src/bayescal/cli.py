"""Command-line workbench: ``bayescal <subcommand> --config run.toml``.

Subcommands
-----------
generate   synthetic field data from the configured scenario -> field.csv
screen     Morris screening of the PV code at a noon input -> screening.csv
emulate    design, code runs, emulator fit (+ sequential points) -> design.csv, emulator.csv
calibrate  two-phase MCMC -> chain.csv, summary.csv, densities.csv (+ design.csv)
predict    calibrate, then predictive band at the field inputs -> band.csv
validate   day-block cross-validation of each listed variant -> report.csv
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import validation
from .config import PARAMETER_RANGES, ConfigError, RunConfig, load_config
from .design import build_design, pca_decorrelate, run_design
from .inference import (
    CalibrationError, EmulatorSettings, McmcSettings, emulator_step, loo_q2, two_phase_calibrate,
)
from .models import CalibModel
from .priors import Fixed, normal_quantile_interval
from .seqdesign import augment_design
from .testbed import (
    PV_ALL_THETA_NAMES, PV_INPUT_NAMES, PV_PARAMETER_RANGES, PV_THETA_NAMES, Discrepancy,
    FieldDataSet, SyntheticScenario, generate_field_data, morris_screening, noise_for_snr,
    pv_noon_input, pv_simulator, pv_surrogate,
)

logger = logging.getLogger("bayescal")

FIELD_COLUMNS = ("t", "I_g", "I_d", "T_e", "P")


def _f(v) -> str:
    return repr(float(v))


# -------------------------------------------------------------------------
# field data
# -------------------------------------------------------------------------


def ingest_field_data(path, aggregation: str = "hourly", positive_only: bool = True) -> FieldDataSet:
    """Read a raw field CSV and average it per UTC hour.

    Required columns: ``t, I_g, I_d, T_e, P`` (extra columns such as ``L``
    and ``l`` are ignored). Every column is averaged within
    ``floor(t / 3600)``; hours whose mean power is not strictly positive
    are dropped.
    """
    if aggregation not in ("hourly", "none"):
        raise ValueError("aggregation must be 'hourly' or 'none'")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        missing = [c for c in FIELD_COLUMNS if c not in header]
        if missing:
            raise ValueError(f"{path}: missing column(s) {', '.join(missing)}")
        idx = [header.index(c) for c in FIELD_COLUMNS]
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                vals = [float(row[j]) for j in idx]
            except (ValueError, IndexError):
                raise ValueError(f"{path}, line {lineno}: cannot parse {','.join(row)!r}") from None
            if not all(np.isfinite(vals)):
                raise ValueError(f"{path}, line {lineno}: non-finite value")
            rows.append(vals)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    A = np.array(rows)
    if aggregation == "hourly":
        hour = np.floor(A[:, 0] / 3600.0)
        keys, inv = np.unique(hour, return_inverse=True)
        sums = np.zeros((keys.size, A.shape[1]))
        np.add.at(sums, inv, A)
        A = sums / np.bincount(inv)[:, None]
    if positive_only:
        A = A[A[:, 4] > 0]
    logger.info("ingested %s: %d rows retained", path, A.shape[0])
    return FieldDataSet(A[:, :4], A[:, 4], PV_INPUT_NAMES)


def write_field_data(data: FieldDataSet, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(FIELD_COLUMNS)
        for x, y in zip(data.X, data.y):
            w.writerow([*(_f(v) for v in x), _f(y)])


def scenario_data(cfg: RunConfig) -> FieldDataSet:
    sc = cfg.scenario
    sim = pv_simulator()
    seed = cfg.seed_for("data")
    probe = SyntheticScenario(sc.theta, 0.0, Discrepancy(), sc.n_days, sc.start_day, seed)
    X = probe.time_grid()
    sigma = sc.sigma_err if sc.sigma_err is not None else noise_for_snr(sim, X, sc.theta, sc.snr)
    disc = Discrepancy("sine" if sc.discrepancy == "none" else sc.discrepancy,
                       sc.amplitude if sc.discrepancy != "none" else 0.0, sc.range)
    return generate_field_data(SyntheticScenario(sc.theta, sigma, disc, sc.n_days, sc.start_day, seed, X), sim)


def load_data(cfg: RunConfig) -> FieldDataSet:
    return ingest_field_data(cfg.data) if cfg.data is not None else scenario_data(cfg)


# -------------------------------------------------------------------------
# workflow pieces
# -------------------------------------------------------------------------


def build_emulator(cfg: RunConfig, data: FieldDataSet):
    """Design on decorrelated field inputs, code runs, fit, optional sequential points."""
    d = cfg.design
    tr = pca_decorrelate(data.X, PV_INPUT_NAMES)
    design = build_design(tr, PARAMETER_RANGES, d.N, seed=cfg.seed_for("design"),
                          n_candidates=d.n_candidates, param_names=PV_THETA_NAMES, observed=data.X)
    code = pv_simulator(clip_irradiance=True)
    y_c = run_design(code, design)
    es = EmulatorSettings(n_starts=d.n_starts, seed=cfg.seed_for("emulator"))
    if d.budget > 0:
        design, y_c, em, _ = augment_design(code, design, y_c, data, d.budget, cfg.seed_for("sequential"),
                                            emulator_settings=es)
    else:
        em = emulator_step(design, y_c, es)
    return design, y_c, em


def write_design(design, y_c, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([*design.names, "y_c", "provenance"])
        for row, y, tag in zip(design.points, y_c, design.provenance):
            w.writerow([*(_f(v) for v in row), _f(y), tag])


def write_emulator(em, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["quantity", "value"])
        w.writerow(["family", em.kernel.family])
        for k, v in (("range", em.kernel.range), ("variance", em.kernel.variance),
                     ("nugget", em.kernel.nugget), ("log_likelihood", em.log_likelihood),
                     ("loo_q2", loo_q2(em))):
            w.writerow([k, _f(v)])
        for name, b in zip(em.mean.names, em.beta):
            w.writerow([f"beta_{name}", _f(b)])


def make_model(cfg: RunConfig, variant: str, data: FieldDataSet, emulator=None) -> CalibModel:
    return CalibModel(variant, cfg.priors, pv_simulator(), emulator, PV_THETA_NAMES,
                      mode=cfg.mode).with_data_box(data.X)


def mcmc_settings(cfg: RunConfig, seed: int | None = None) -> McmcSettings:
    m = cfg.mcmc
    return McmcSettings(n_phase1=m.n_phase1, n_phase2=m.n_phase2, burn_in=m.burn_in,
                        seed=cfg.seed_for("mcmc") if seed is None else seed, level=m.level)


def write_densities(chain, model: CalibModel, path, bins: int = 30) -> None:
    """Prior and posterior density tables on a shared grid per parameter."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["parameter", "bin_left", "bin_right", "posterior_density", "prior_density"])
        for j, name in enumerate(chain.names):
            s = chain.kept()[:, j]
            prior = model.priors.get(name)
            lo, hi = float(s.min()), float(s.max())
            if prior is not None and not isinstance(prior, Fixed):
                a, b = normal_quantile_interval(prior, 0.99)
                lo, hi = min(lo, a), max(hi, b)
            if hi <= lo:
                hi = lo + 1.0
            edges = np.linspace(lo, hi, bins + 1)
            post, _ = np.histogram(s, bins=edges, density=True)
            mid = 0.5 * (edges[:-1] + edges[1:])
            for k in range(bins):
                pd = float(np.exp(prior.logpdf(mid[k]))) if prior is not None else float("nan")
                w.writerow([name, _f(edges[k]), _f(edges[k + 1]), _f(post[k]), _f(pd)])


def _calibrate(cfg: RunConfig, data: FieldDataSet, out: Path):
    em = None
    if cfg.variant in ("M2", "M4"):
        design, y_c, em = build_emulator(cfg, data)
        write_design(design, y_c, out / "design.csv")
    model = make_model(cfg, cfg.variant, data, em)
    chain, summary = two_phase_calibrate(model, data, mcmc_settings(cfg))
    chain.to_csv(out / "chain.csv")
    summary.to_csv(out / "summary.csv")
    write_densities(chain, model, out / "densities.csv")
    return model, chain, summary


# -------------------------------------------------------------------------
# subcommands
# -------------------------------------------------------------------------


def cmd_generate(cfg: RunConfig, out: Path) -> None:
    write_field_data(scenario_data(cfg), out / "field.csv")


def cmd_screen(cfg: RunConfig, out: Path) -> None:
    s = cfg.screen
    x = pv_noon_input(s.day, I_g=s.I_g, I_d=s.I_d, T_e=s.T_e)
    ranges = [PV_PARAMETER_RANGES[n] for n in PV_ALL_THETA_NAMES]
    res = morris_screening(lambda th: pv_surrogate(x, th), ranges, r=s.trajectories, levels=s.levels,
                           seed=cfg.seed_for("screen"), names=PV_ALL_THETA_NAMES)
    with open(out / "screening.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["parameter", "mu_star", "sigma", "mu", "rank"])
        order = res.ranking()
        for j, n in enumerate(res.names):
            w.writerow([n, _f(res.mu_star[j]), _f(res.sigma[j]), _f(res.mu[j]), order.index(n) + 1])


def cmd_emulate(cfg: RunConfig, out: Path) -> None:
    data = load_data(cfg)
    design, y_c, em = build_emulator(cfg, data)
    write_design(design, y_c, out / "design.csv")
    write_emulator(em, out / "emulator.csv")


def cmd_calibrate(cfg: RunConfig, out: Path) -> None:
    _calibrate(cfg, load_data(cfg), out)


def cmd_predict(cfg: RunConfig, out: Path) -> None:
    data = load_data(cfg)
    model, chain, _ = _calibrate(cfg, data, out)
    p = cfg.predict
    band = validation.posterior_predict(model, chain, data.X, p.level, p.draws, cfg.seed_for("predict"), data)
    band.to_csv(out / "band.csv", data.X, PV_INPUT_NAMES)


def cmd_validate(cfg: RunConfig, out: Path) -> None:
    data = load_data(cfg)
    v = cfg.validate
    em = None
    if any(m in ("M2", "M4") for m in v.variants):
        design, y_c, em = build_emulator(cfg, data)
        write_design(design, y_c, out / "design.csv")
    rows = []
    for variant in v.variants:
        model = make_model(cfg, variant, data, em if variant in ("M2", "M4") else None)
        spec = validation.CalibrationSpec(model, mcmc_settings(cfg), cfg.predict.draws)
        rep = validation.cross_validate(spec, data, v.n_reps, v.holdout_days, v.level, cfg.seed_for("validate"))
        rows.append((variant, rep))
        logger.info("%s: mean coverage %.3f, mean RMSE %.3f W", variant, rep.mean_coverage, rep.mean_rmse)
    with open(out / "report.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "replicate", "holdout_days", "coverage", "rmse", "level"])
        for variant, rep in rows:
            for k in range(rep.n_reps):
                w.writerow([variant, k, " ".join(map(str, rep.holdout_days[k])),
                            _f(rep.coverage[k]), _f(rep.rmse[k]), _f(rep.level)])
            w.writerow([variant, "mean", "", _f(rep.mean_coverage), _f(rep.mean_rmse), _f(rep.level)])


COMMANDS = {
    "generate": cmd_generate,
    "screen": cmd_screen,
    "emulate": cmd_emulate,
    "calibrate": cmd_calibrate,
    "predict": cmd_predict,
    "validate": cmd_validate,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bayescal", description="Bayesian calibration workbench.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, type=Path, help="TOML run configuration")
    p.add_argument("--seed", type=int, help="override [run] seed")
    p.add_argument("--out", type=Path, help="override [run] out directory")
    p.add_argument("--quiet", action="store_true", help="only report errors")
    return p


def run_workflow(cfg: RunConfig, command: str) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    COMMANDS[command](cfg, out)
    return out


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config, seed=args.seed, out=args.out)
        out = run_workflow(cfg, args.command)
    except (ConfigError, ValueError, CalibrationError, OSError, np.linalg.LinAlgError) as exc:
        print(f"bayescal {args.command}: error: {exc}", file=sys.stderr)
        return 1
    if not args.quiet:
        print(f"bayescal {args.command}: wrote {out}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
