"""Config-driven experiment runner.

    sevastyanov <experiment> --config scenario.yaml [--seed S] [--reps R] [--workers W] [--out DIR]
    sevastyanov plot-data --out RUN_DIR

Experiments: simulate, certify, stationary, couple, converge, verify-drift.
Every run writes ``manifest.json`` (config hash, seed, versions, wall-clock)
next to its CSV/JSON outputs.  CSV and result JSON files depend only on the
config and the master seed.  Exit codes: 0 success, 2 validation error,
3 runtime error, 4 a check failed.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from . import arrivals as ar
from . import service_dist as sd
from .certificate import Certificate, InfeasibleCertificate, certificate_margins, revalidate, search_certificate
from .engine import MODES, Models, SystemState, simulate
from .lyapunov import LyapunovParams

log = logging.getLogger(__name__)

EXPERIMENTS = ("simulate", "certify", "stationary", "couple", "converge", "verify-drift")
OUT_ENV = "SEVASTYANOV_OUT"
EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_CHECK = 0, 2, 3, 4


class ConfigError(ValueError):
    def __init__(self, field: str, msg: str):
        super().__init__(f"{field}: {msg}")
        self.field = field


class CheckFailed(RuntimeError):
    pass


# config ---------------------------------------------------------------------------------


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            cfg = yaml.safe_load(fh)
    except OSError as e:
        raise ConfigError("config", str(e)) from e
    except yaml.YAMLError as e:
        raise ConfigError("config", f"not valid YAML: {e}") from e
    if not isinstance(cfg, dict):
        raise ConfigError("config", "top level must be a mapping")
    return cfg


def _field(fn, field):
    try:
        return fn()
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(field, str(e) or repr(e)) from e


def _as_N(v):
    if v is None or v in ("inf", "infinity", float("inf")):
        return math.inf
    if isinstance(v, float) and math.isinf(v):
        return math.inf
    if isinstance(v, bool) or int(v) != v or int(v) < 1:
        raise ConfigError("N", "must be a positive integer or 'inf'")
    return int(v)


def build_models(cfg: dict) -> Models:
    if "hazard" not in cfg:
        raise ConfigError("hazard", "missing")
    if "arrival" not in cfg:
        raise ConfigError("arrival", "missing")
    hz = _field(lambda: sd.from_spec(cfg["hazard"]), "hazard")
    arr = _field(lambda: ar.from_spec(cfg["arrival"]), "arrival")
    N = _as_N(cfg.get("N", "inf"))
    return _field(lambda: Models(hz, arr, N), "N")


def build_initial(cfg: dict) -> SystemState:
    el = cfg.get("initial", [])
    return _field(lambda: SystemState(tuple(float(v) for v in (el or []))), "initial")


def build_grid(spec, field="t_grid") -> np.ndarray:
    if spec is None:
        raise ConfigError(field, "missing")
    if isinstance(spec, dict):
        start, stop, num = float(spec["start"]), float(spec["stop"]), int(spec["num"])
        if spec.get("spacing", "linear") == "log":
            g = np.geomspace(start, stop, num)
        else:
            g = np.linspace(start, stop, num)
    else:
        g = np.asarray([float(v) for v in spec])
    if len(g) == 0 or np.any(np.diff(g) <= 0) or np.any(g < 0):
        raise ConfigError(field, "must be non-negative and strictly increasing")
    return g


def build_certificate(cfg: dict, models: Models) -> Certificate:
    c = dict(cfg.get("certificate", {}) or {})
    C0 = float(c.get("C0", models.hazard.floor_infimum()))
    Lam = float(c["Lambda"]) if "Lambda" in c else _field(lambda: ar.lambda_bar(models.arrival), "arrival")
    lam0 = float(c.get("lambda0", models.arrival.rate(0)))
    explicit = [k for k in ("m", "a", "k", "ell", "epsilon", "R") if k in c]
    if explicit:
        missing = {"m", "a", "k", "ell", "epsilon", "R"} - set(explicit)
        if missing:
            raise ConfigError("certificate", f"explicit certificate needs {sorted(missing)}")
        _field(lambda: LyapunovParams(float(c["m"]), float(c["a"]), float(c["k"])), "certificate")
        vals = {k: float(c[k]) for k in ("m", "a", "k", "ell", "epsilon", "R")}
        mg = certificate_margins(C0, Lam, lam0, **vals)
        cert = Certificate(C0, Lam, lam0, margins=mg, **vals)
        chk = revalidate(cert, models.arrival.allow_trivial)
        if not chk["passed"]:
            bad = [k for k, v in chk["margins"].items() if not v > 0]
            raise ConfigError("certificate", f"non-positive margins: {bad}")
        return cert
    target = c.get("target_k", "max")
    try:
        return search_certificate(C0, Lam, lam0, target, models.arrival.allow_trivial)
    except InfeasibleCertificate as e:
        raise ConfigError("certificate", str(e)) from e


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, default=str).encode()).hexdigest()


# writers --------------------------------------------------------------------------------


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, header, rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    return path


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return [_jsonable(v) for v in o.tolist()]
    if isinstance(o, (np.floating, float)):
        f = float(o)
        return f if math.isfinite(f) else str(f)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, np.bool_):
        return bool(o)
    return o


def write_json(path: Path, obj) -> Path:
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


# experiments ----------------------------------------------------------------------------


def _mode(cfg):
    mode = cfg.get("mode", "residual")
    if mode not in MODES:
        raise ConfigError("mode", f"must be one of {MODES}")
    return mode


def _horizon(cfg):
    h = cfg.get("horizon")
    if h is None or not float(h) > 0:
        raise ConfigError("horizon", "must be a positive number")
    return float(h)


def exp_simulate(cfg, out: Path, seed: int, reps: int, workers: int) -> dict:
    from .estimators import empirical_pmf, marginal_counts_grid
    from .stationary import time_average_counts

    models = build_models(cfg)
    x = build_initial(cfg)
    mode = _mode(cfg)
    horizon = _horizon(cfg)
    first = simulate(x, horizon, mode, models, seed, seed=seed)
    first.to_csv(out / "events.csv")
    finals = marginal_counts_grid([horizon], x, models, reps, seed, mode, workers)[:, 0]
    pmf = empirical_pmf(finals)
    write_csv(out / "final_counts.csv", ["n", "frequency"], enumerate(pmf))
    burn = float(cfg.get("burn_in", 0.0))
    occ = time_average_counts(first, burn) if burn < horizon else np.array([1.0])
    summary = {"events_first_path": len(first), "final_state_first_path": list(first.final.elapsed),
               "mean_final_count": float(np.mean(finals)), "time_average_pmf_first_path": occ.tolist(),
               "bookkeeping_ok": first.bookkeeping_ok()}
    write_json(out / "simulate.json", summary)
    return summary


def exp_certify(cfg, out: Path, seed: int, reps: int, workers: int) -> dict:
    models = None
    c = dict(cfg.get("certificate", {}) or {})
    if "hazard" in cfg or "arrival" in cfg:
        models = build_models(cfg)
    else:
        for k in ("C0", "Lambda", "lambda0"):
            if k not in c:
                raise ConfigError(f"certificate.{k}", "missing (or give hazard and arrival models)")
    if models is None:
        try:
            cert = search_certificate(float(c["C0"]), float(c["Lambda"]), float(c["lambda0"]),
                                      c.get("target_k", "max"), bool(c.get("allow_trivial", False)))
        except InfeasibleCertificate as e:
            raise ConfigError("certificate", str(e)) from e
    else:
        cert = build_certificate(cfg, models)
    chk = revalidate(cert, bool(c.get("allow_trivial", False)) or (models is not None and models.arrival.allow_trivial))
    write_json(out / "certificate.json", cert.to_dict())
    (out / "margins.txt").write_text(cert.margin_table() + "\n")
    print(cert.margin_table())
    if not chk["passed"]:
        raise CheckFailed("certificate failed re-validation")
    return cert.to_dict()


def exp_stationary(cfg, out: Path, seed: int, reps: int, workers: int) -> dict:
    from .stationary import count_pmf, insensitivity_report

    models = build_models(cfg)
    law = count_pmf(models.arrival, sd.mean_service(models.hazard), models.N)
    write_csv(out / "pmf.csv", ["n", "p"], enumerate(law.p))
    res = {"law": law.to_dict()}
    if "compare_hazard" in cfg:
        other = _field(lambda: sd.from_spec(cfg["compare_hazard"]), "compare_hazard")
        res["insensitivity"] = insensitivity_report(models.hazard, other, models.arrival, models.N,
                                                    simulate_reps=int(cfg.get("simulate_reps", 0)),
                                                    t=float(cfg.get("horizon", 60.0)), seed=seed)
    write_json(out / "stationary.json", res)
    return res


def exp_couple(cfg, out: Path, seed: int, reps: int, workers: int) -> dict:
    from .coupling import coupling_records, coupling_tail, estimate_meeting_params

    models = build_models(cfg)
    cert = build_certificate(cfg, models)
    x = build_initial(cfg)
    grid = build_grid(cfg.get("t_grid"))
    cap = float(cfg.get("cap", 1e3))
    if grid[-1] > cap:
        raise ConfigError("t_grid", "extends beyond the censoring cap")
    recs = coupling_records(x, cert, models, reps, seed, cap, _mode(cfg), workers)
    curve = coupling_tail(x, cert, models, grid, reps, seed, cap, records=recs)
    curve.to_csv(out / "coupling_survival.csv", "survival")
    T = np.array([r.T for r in recs])
    summary = {
        "certificate": cert.to_dict(),
        "pairs": reps,
        "cap": cap,
        "censored_frac": float(np.mean([r.censored for r in recs])),
        "mean_T": float(T.mean()),
        "mean_attempts": float(np.mean([r.attempts for r in recs])),
        "mean_tau_bar_0R": float(np.mean([r.tau_bar_0R for r in recs])),
        "mean_tau0_x": float(np.mean([r.tau0_x for r in recs])),
        "tau_bar_0R_le_tau_bar_0": bool(all(r.tau_bar_0R <= r.tau_bar_0 for r in recs)),
    }
    if cfg.get("meeting_reps"):
        mp = estimate_meeting_params(cert, models, int(cfg["meeting_reps"]), seed + 1, ceiling=cap, workers=workers)
        summary["meeting"] = mp.to_dict()
        summary["meeting"]["note"] = "stress set is a finite family of states on the level set; an under-approximation"
    write_json(out / "coupling.json", summary)
    return summary


def exp_converge(cfg, out: Path, seed: int, reps: int, workers: int) -> dict:
    from .estimators import (TailCurve, empirical_pmf, fit_polynomial_tail, marginal_counts_grid,
                             marginal_states_at, tv_binned_states, tv_counts, tv_noise_floor)
    from .stationary import count_pmf

    models = build_models(cfg)
    x = build_initial(cfg)
    grid = build_grid(cfg.get("t_grid"))
    law = count_pmf(models.arrival, sd.mean_service(models.hazard), models.N)
    counts = marginal_counts_grid(grid, x, models, reps, seed, _mode(cfg), workers)
    tvs = np.array([tv_counts(empirical_pmf(counts[:, j]), law.p) for j in range(len(grid))])
    floor = tv_noise_floor(law.p, reps)
    header = ["t", "tv", "noise_floor"]
    rows = [[t, v, floor] for t, v in zip(grid, tvs)]
    if cfg.get("state_tv"):
        width = float(cfg.get("bin_width", 0.25))
        header.append("state_tv")
        for j, t in enumerate(grid):
            st = marginal_states_at(float(t), x, models, reps, seed, _mode(cfg), workers)
            rows[j].append(tv_binned_states(st, law, models.hazard, width))
    write_csv(out / "tv.csv", header, rows)
    res = {"reps": reps, "noise_floor": floor, "law": law.to_dict()}
    keep = np.nonzero((tvs > 5 * floor))[0]
    if len(keep) >= 2:
        curve = TailCurve(grid, tvs, tvs, tvs, "tv", reps)
        fit = fit_polynomial_tail(curve, (int(keep[0]), int(keep[-1]) + 1))
        res["fit"] = fit.to_dict()
    try:
        cert = build_certificate(cfg, models)
        res["certificate"] = cert.to_dict()
    except ConfigError as e:
        res["certificate"] = None
        res["certificate_note"] = str(e)
    write_json(out / "converge.json", res)
    return res


def exp_verify_drift(cfg, out: Path, seed: int, reps: int, workers: int) -> dict:
    from .lyapunov import drift_suite, elementary_inequalities_check, i3_summed_partials, generator_terms, random_states
    from .rng import Stream

    models = build_models(cfg)
    ly = dict(cfg.get("lyapunov", {}) or {})
    if "m" not in ly or "a" not in ly:
        cert = build_certificate(cfg, models)
        ly.setdefault("m", cert.m)
        ly.setdefault("a", cert.a)
    params = _field(lambda: LyapunovParams(float(ly["m"]), float(ly["a"]), float(ly.get("k", 0.0))), "lyapunov")
    C0 = float(cfg.get("C0", models.hazard.floor_infimum()))
    Lam = float(cfg.get("Lambda", ar.lambda_bar(models.arrival)))
    states = random_states(reps, Stream.from_seed(seed, 0), int(cfg.get("n_max", 50)), float(cfg.get("scale", 1.0)))
    suite = drift_suite(params, C0, Lam, models.arrival, models.hazard, states)
    elem = elementary_inequalities_check(reps, Stream.from_seed(seed, 1))
    worst = 0.0
    for s in states[: min(len(states), 10**4)]:
        g = generator_terms(params, s, models.arrival, models.hazard)
        p = i3_summed_partials(params, s)
        worst = max(worst, abs(g.i3 - p) / abs(p))
    res = {"params": {"m": params.m, "a": params.a}, "C0": C0, "Lambda": Lam, "drift": suite,
           "elementary": elem.to_dict(), "i3_max_rel_diff": worst}
    write_json(out / "drift.json", res)
    if suite.get("reason"):
        raise CheckFailed(f"drift check not applicable: {suite['reason']}")
    if suite["drift_violations"] or suite["lemma3a_violations"] or elem.violations or worst > 1e-12:
        raise CheckFailed("drift or bound violations found")
    return res


RUNNERS = {
    "simulate": exp_simulate,
    "certify": exp_certify,
    "stationary": exp_stationary,
    "couple": exp_couple,
    "converge": exp_converge,
    "verify-drift": exp_verify_drift,
}


def _versions():
    import scipy

    return {"package": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__}


def run(config_path, experiment: str | None = None, seed: int | None = None, reps: int | None = None,
        workers: int = 1, out: str | None = None) -> tuple[int, Path | None]:
    """Execute one experiment; returns (exit code, output directory)."""
    try:
        cfg = load_config(config_path)
        experiment = experiment or cfg.get("experiment")
        if experiment not in RUNNERS:
            raise ConfigError("experiment", f"must be one of {EXPERIMENTS}")
        if seed is not None:
            cfg["seed"] = seed
        if reps is not None:
            cfg["reps"] = reps
        seed_v = _field(lambda: int(cfg.get("seed", 0)), "seed")
        reps_v = _field(lambda: int(cfg.get("reps", 1000)), "reps")
        if reps_v < 1:
            raise ConfigError("reps", "must be >= 1")
        if workers < 1:
            raise ConfigError("workers", "must be >= 1")
        root = out or cfg.get("output") or os.path.join(os.environ.get(OUT_ENV, "runs"),
                                                        f"{Path(config_path).stem}-{experiment}")
        outdir = Path(root)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG, None
    outdir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    code = EXIT_OK
    err = None
    try:
        RUNNERS[experiment](cfg, outdir, seed_v, reps_v, workers)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        code, err = EXIT_CONFIG, str(e)
    except CheckFailed as e:
        print(f"check failed: {e}", file=sys.stderr)
        code, err = EXIT_CHECK, str(e)
    except Exception as e:  # noqa: BLE001
        log.exception("run failed")
        print(f"runtime error: {e}", file=sys.stderr)
        code, err = EXIT_RUNTIME, f"{type(e).__name__}: {e}"
    manifest = {"experiment": experiment, "config": str(config_path), "config_hash": config_hash(cfg),
                "seed": seed_v, "reps": reps_v, "workers": workers, "versions": _versions(),
                "wall_clock_s": time.perf_counter() - t0, "exit_code": code, "error": err,
                "outputs": sorted(p.name for p in outdir.iterdir() if p.name != "manifest.json")}
    write_json(outdir / "manifest.json", manifest)
    return code, outdir


# plot data ------------------------------------------------------------------------------


def _read_csv(path: Path):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        rows = [[float(v) for v in row] for row in r]
    return header, np.array(rows)


def emit_plot_data(run_dir) -> list[Path]:
    """Whitespace-separated two-or-more-column files for plotting; raises FileNotFoundError when nothing applies."""
    d = Path(run_dir)
    if not d.is_dir():
        raise FileNotFoundError(f"{d} is not a directory")
    made = []
    if (d / "tv.csv").exists():
        _, a = _read_csv(d / "tv.csv")
        t, tv = a[:, 0], a[:, 1]
        k = None
        if (d / "converge.json").exists():
            info = json.loads((d / "converge.json").read_text())
            if info.get("certificate"):
                k = info["certificate"]["k"]
        pos = tv > 0
        if k is not None and pos.any():
            # tightest C with C (1+t)^-(k+1) above every positive point
            C = float(np.max(tv[pos] * (1 + t[pos]) ** (k + 1)))
            env = C * (1 + t) ** (-(k + 1))
        else:
            env = np.full_like(t, np.nan)
        p = d / "tv_plot.dat"
        with open(p, "w") as fh:
            fh.write("# t tv envelope\n")
            for row in zip(t, tv, env):
                fh.write(" ".join(repr(float(v)) for v in row) + "\n")
        made.append(p)
    if (d / "coupling_survival.csv").exists():
        _, a = _read_csv(d / "coupling_survival.csv")
        p = d / "coupling_plot.dat"
        with open(p, "w") as fh:
            fh.write("# t survival ci_lo ci_hi\n")
            for row in a:
                fh.write(" ".join(repr(float(v)) for v in row) + "\n")
        made.append(p)
    for name in ("pmf.csv", "final_counts.csv"):
        if (d / name).exists():
            _, a = _read_csv(d / name)
            p = d / (Path(name).stem + "_plot.dat")
            with open(p, "w") as fh:
                fh.write("# n p\n")
                for n, v in a:
                    fh.write(f"{int(n)} {v!r}\n")
            made.append(p)
    if not made:
        raise FileNotFoundError(f"no plottable artifacts in {d}")
    return made


# entry point ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sevastyanov", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True)
        s.add_argument("--seed", type=int)
        s.add_argument("--reps", type=int)
        s.add_argument("--workers", type=int, default=1)
        s.add_argument("--out")
    s = sub.add_parser("plot-data")
    s.add_argument("--out", required=True, help="run directory holding the artifacts")
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    if args.command == "plot-data":
        try:
            for p in emit_plot_data(args.out):
                print(p)
        except FileNotFoundError as e:
            print(f"runtime error: {e}", file=sys.stderr)
            return EXIT_RUNTIME
        return EXIT_OK
    code, outdir = run(args.config, args.command, args.seed, args.reps, args.workers, args.out)
    if outdir is not None:
        print(f"outputs in {outdir}")
    return code


if __name__ == "__main__":
    sys.exit(main())
