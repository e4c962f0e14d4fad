"""Command-line entry point: ``collapse-lab --config run.cfg``.

Each experiment writes CSV tables (one header line, 17 significant digits)
plus ``manifest.json`` into the output directory. Exit codes: 0 success,
2 configuration error, 3 numeric failure, 4 precondition or regime violation.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone

import numpy as np

from . import __version__, master
from .config import RunConfig, load_config
from .errors import CollapseLabError, ConfigError
from .hilbert import HermitianOperator, StateVector, spectral_decompose
from .lattice import Lattice
from .mass import (PhysicalParams, SmearingKernel, reduction_rate_table, simulate_decay,
                   two_placement_model)
from .sde import EvolutionConfig, martingale_check, projection_rule_angles, run_ensemble
from .stuff import ParticleWorldline, discrimination_map, shattering_estimate, shattering_monte_carlo
from .surfaces import integrability_scan, localized_probe

log = logging.getLogger("collapse_lab")


@dataclass
class RunManifest:
    experiment: str
    config_hash: str
    seed: int
    version: str
    started: str
    finished: str = ""
    outputs: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def write(self, path: str):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True, default=_jsonable)
            fh.write("\n")


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, tuple):
        return list(x)
    raise TypeError(type(x))


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17g}"
    return str(x)


def write_csv(path: str, header: list, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _tridiagonal(d: int, hop: float) -> np.ndarray | None:
    if hop == 0.0:
        return None
    return hop * (np.eye(d, k=1) + np.eye(d, k=-1))


def _steps(horizon: float, dt: float) -> int:
    return max(1, int(round(horizon / dt)))


def _reduce(cfg: RunConfig, out: str, threads: int):
    p = cfg["reduce"]
    psi0 = StateVector.from_weights(p["weights"], p["phases"])
    d = psi0.dim
    eig = p["eigenvalues"] or ((1.0, -1.0) if d == 2 else tuple(float(k) for k in range(d)))
    A = np.diag(np.asarray(eig, dtype=float))
    H = _tridiagonal(d, p["hopping"])
    n_steps = _steps(p["horizon"], p["dt"])
    ec = EvolutionConfig(p["dt"], n_steps, (p["coupling"],))
    proj = spectral_decompose(HermitianOperator(A))
    stats = run_ensemble(psi0, ec, H, [A], p["n_traj"], cfg.seed, record_every=min(p["record_every"], n_steps),
                         projectors=proj, threshold=p["threshold"], max_doublings=p["max_doublings"],
                         workers=threads)
    k = len(proj)
    files = []
    f = os.path.join(out, "trajectories.csv")
    write_csv(f, ["trajectory", "outcome", "eigenvalue", "flagged"] + [f"final_weight_{i}" for i in range(k)],
              ([i, o, stats.eigenvalues[o], fl, *w] for i, (o, fl, w) in
               enumerate(zip(stats.outcomes, stats.flagged, stats.final_weights))))
    files.append(f)
    angles = projection_rule_angles(stats, psi0, proj) if H is None else {}
    sigma = stats.binomial_sigma()
    f = os.path.join(out, "summary.csv")
    write_csv(f, ["eigenvalue", "born_weight", "frequency", "count", "binomial_sigma", "max_projection_angle"],
              ([stats.eigenvalues[e], stats.born_weights[e], stats.outcome_frequencies[e], stats.outcome_counts[e],
                sigma[e], float(angles[e].max()) if e in angles and angles[e].size else float("nan")]
               for e in range(k)))
    files.append(f)
    se = stats.standard_error_series
    f = os.path.join(out, "martingale.csv")
    write_csv(f, ["time"] + [f"mean_weight_{i}" for i in range(k)] + [f"se_{i}" for i in range(k)] + ["spread"],
              ([t, *m, *s, sp] for t, m, s, sp in
               zip(stats.times, stats.mean_projection_weight_series, se, stats.spread_series)))
    files.append(f)
    mart = martingale_check(stats, psi0, proj)
    dev = np.abs(stats.outcome_frequencies - stats.born_weights)
    summary = {
        "born_max_deviation_sigma": float(np.max(dev / np.where(sigma > 0, sigma, np.inf))),
        "martingale_passed": mart.all_passed,
        "martingale_worst_ratio": mart.worst_ratio,
        "flagged": int(stats.flagged.sum()),
        "extensions": stats.extensions,
    }
    return files, summary


def _oracle_check(cfg: RunConfig, out: str, threads: int):
    p = cfg["oracle"]
    psi0 = StateVector.from_weights(p["weights"])
    d = psi0.dim
    ops = [np.diag(np.asarray(p["diag1"], dtype=float)), np.diag(np.asarray(p["diag2"], dtype=float))]
    H = _tridiagonal(d, p["hopping"])
    n_steps = _steps(p["horizon"], p["dt"])
    ec = EvolutionConfig(p["dt"], n_steps, tuple(p["couplings"]))
    stats = run_ensemble(psi0, ec, H, ops, p["n_traj"], cfg.seed, record_every=min(p["record_every"], n_steps),
                         record_density=True, keep_final_states=False, max_doublings=0, threshold=0.0,
                         workers=threads)
    exact = master.solve(master.pure_density(psi0), H if H is not None else np.zeros((d, d)), ops,
                         p["couplings"], stats.times)
    td = np.array([master.trace_distance(a, b) for a, b in zip(stats.density_series, exact)])
    bound = 5.0 / math.sqrt(p["n_traj"])
    f = os.path.join(out, "oracle.csv")
    write_csv(f, ["time", "trace_distance", "bound"], ([t, x, bound] for t, x in zip(stats.times, td)))
    return [f], {"max_trace_distance": float(td.max()), "bound": bound, "passed": bool(np.all(td <= bound))}


def _mass_sim(cfg: RunConfig, out: str, threads: int):
    ph, la, p = cfg["physics"], cfg["lattice"], cfg["mass"]
    params = PhysicalParams(ph["a"], ph["g0_sq"], ph["m0"])
    n = la["n_cells"]
    lat = Lattice((n, n, n), la["cell_size"])
    model = two_placement_model(lat, p["separation"] / lat.cell_size, p["n_particles"])
    kernel = SmearingKernel(p["kernel"], params.a)
    res = simulate_decay(model, lat, params, p["n_traj"], cfg.seed, horizon_gamma=p["horizon_gamma"],
                         n_steps=p["n_steps"], form=p["form"], kernel=kernel, workers=threads)
    files = []
    f = os.path.join(out, "decay.csv")
    write_csv(f, ["time_lattice", "time_s", "coherence", "coherence_oracle"],
              ([t, t * res.units.time, c, res.coherence[0] * math.exp(-res.gamma_oracle * t)]
               for t, c in zip(res.times, res.coherence)))
    files.append(f)
    seps = [s / lat.cell_size for s in p["table_separations"]]
    rows = reduction_rate_table(seps, p["table_particles"], params, lat, kernel=p["kernel"])
    f = os.path.join(out, "rates.csv")
    cols = ["separation_cells", "separation_a", "n_particles", "kernel", "gamma_per_s", "gamma_lattice"]
    write_csv(f, cols, ([r[c] for c in cols] for r in rows))
    files.append(f)
    summary = {
        "gamma_ensemble_lattice": res.gamma_ensemble,
        "gamma_oracle_lattice": res.gamma_oracle,
        "gamma_formula_lattice": res.gamma_formula,
        "gamma_oracle_per_s": res.gamma_oracle / res.units.time,
        "relative_error": res.relative_error,
        "lattice_time_unit_s": res.units.time,
        "active_cells": res.extra["active_cells"],
    }
    return files, summary


def _stuff_map(cfg: RunConfig, out: str, threads: int):
    p = cfg["stuff"]
    wls = [ParticleWorldline(r[0], r[1:4], r[4:7]) for r in p["particles"]]
    xs = np.linspace(p["x_min"], p["x_max"], p["n_x"])
    grid = np.stack([xs, np.full_like(xs, p["y"]), np.full_like(xs, p["z"])], axis=1)
    sample = discrimination_map(wls, grid, p["a"], p["t"])
    f = os.path.join(out, "stuff_map.csv")
    write_csv(f, ["x", "y", "z", "value"], ([*pt, v] for pt, v in zip(sample.points, sample.values)))
    return [f], {"max_stuff": float(np.max(sample.values)), "n_points": int(len(xs)), "t": sample.t}


def _shatter(cfg: RunConfig, out: str, threads: int):
    p = cfg["shatter"]
    rows = []
    for w in p["speeds"]:
        for alpha in p["alphas"]:
            est = shattering_estimate(p["amount"], p["a"], p["l"], w, alpha)
            mc = shattering_monte_carlo(p["amount"], p["a"], p["l"], w, alpha, p["n_directions"], cfg.seed,
                                        p["geometry"])
            rows.append([w, alpha, est, mc, mc / est])
    f = os.path.join(out, "shatter.csv")
    write_csv(f, ["w", "alpha", "estimate", "monte_carlo", "ratio"], rows)
    worst = max(abs(r[4] - 1.0) for r in rows)
    return [f], {"worst_relative_deviation": worst}


def _ts_check(cfg: RunConfig, out: str, threads: int):
    p = cfg["ts"]
    lat, ops = localized_probe(p["n_cells"], p["coupling"], p["omega"])
    pointer = StateVector.from_weights(p["weights"]).amplitudes
    if pointer.size != 2:
        raise ConfigError("ts-check weights must have two entries", key="weights")
    psi0 = np.kron(pointer, [1.0, 0.0])
    scan = integrability_scan(psi0, ops, lat, p["horizon"], p["dts"], cfg.seed, p["n_samples"], p["scheme"])
    f = os.path.join(out, "discrepancy.csv")
    write_csv(f, ["dt", "mean", "max", "n"], ([r["dt"], r["mean"], r["max"], r["n"]] for r in scan.rows()))
    return [f], {"slope": scan.slope, "monotone": scan.monotone}


RUNNERS = {
    "reduce": _reduce,
    "oracle-check": _oracle_check,
    "mass-sim": _mass_sim,
    "stuff-map": _stuff_map,
    "shatter": _shatter,
    "ts-check": _ts_check,
}


def run(cfg: RunConfig, out: str | None = None, threads: int | None = None) -> RunManifest:
    """Run one experiment and write its CSV files and manifest into ``out``."""
    out = out or cfg.out
    threads = threads or cfg.threads
    os.makedirs(out, exist_ok=True)
    manifest = RunManifest(cfg.experiment, cfg.hash(), cfg.seed, __version__,
                           datetime.now(timezone.utc).isoformat(timespec="seconds"))
    files, summary = RUNNERS[cfg.experiment](cfg, out, threads)
    manifest.outputs = [os.path.basename(f) for f in files]
    manifest.summary = summary
    manifest.finished = datetime.now(timezone.utc).isoformat(timespec="seconds")
    path = os.path.join(out, "manifest.json")
    manifest.write(path)
    log.info("wrote %s", ", ".join(manifest.outputs + ["manifest.json"]))
    return manifest


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="collapse-lab", description="Run a reduction-dynamics experiment from a config file")
    ap.add_argument("--config", required=True, help="path to the run configuration")
    ap.add_argument("--seed", type=int, default=None, help="override the base seed")
    ap.add_argument("--out", default=None, help="output directory (overrides [run] out)")
    ap.add_argument("--threads", type=int, default=None, help="worker threads for trajectory batches")
    ap.add_argument("--verbose", action="store_true", help="log progress to stderr")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        manifest = run(cfg, args.out, args.threads)
    except CollapseLabError as exc:
        print(f"collapse-lab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"collapse-lab: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(manifest.summary, sort_keys=True, default=_jsonable))
    return 0


if __name__ == "__main__":
    sys.exit(main())
