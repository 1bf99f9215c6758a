"""Experiment runner: configuration, synthetic data with seeded noise,
error metrics and report emission.

Every experiment is driven by a JSON config with a mandatory seed; all
randomness flows from one root generator per experiment, split
deterministically per component, so artifacts are reproducible from
(config, seed, build).  Wall-clock time is the one non-reproducible datum
and lives in a separate timing.json next to the deterministic summary.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import subprocess
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .grid import Grid, ScalarField, write_field, l2_norm
from .forward import Box, CoefficientModel, wave_solve
from .grid import BoundaryTrace
from . import qrm, carleman, globconv, inverse_source

SCHEMA_VERSION = 1

_KINDS = (
    "globconv",
    "qrm-rate",
    "tat",
    "parabolic-route",
    "verify-carleman",
    "verify-volterra",
)

_COEFF_PRESETS = ("background", "single_inclusion")
_INITIAL_PRESETS = ("two_bump", "bump")


class ConfigError(ValueError):
    pass


def _validate(config: dict) -> list:
    problems = []
    kind = config.get("kind")
    if kind not in _KINDS:
        problems.append(f"kind: expected one of {_KINDS}, got {kind!r}")
    if "seed" not in config:
        problems.append("seed: missing (mandatory for reproducibility)")
    elif not isinstance(config["seed"], int):
        problems.append(f"seed: expected integer, got {config['seed']!r}")
    params = config.get("params", {})
    if not isinstance(params, dict):
        problems.append("params: expected an object")
    preset = params.get("preset") if isinstance(params, dict) else None
    if kind == "globconv" and preset is not None and preset not in _COEFF_PRESETS:
        problems.append(f"params.preset: expected one of {_COEFF_PRESETS}, got {preset!r}")
    if kind in ("tat", "parabolic-route") and preset is not None and preset not in _INITIAL_PRESETS:
        problems.append(f"params.preset: expected one of {_INITIAL_PRESETS}, got {preset!r}")
    delta = config.get("delta", 0.0)
    if not isinstance(delta, (int, float)) or delta < 0:
        problems.append(f"delta: expected a nonnegative number, got {delta!r}")
    return problems


def load_config(path: str) -> dict:
    with open(path) as fp:
        config = json.load(fp)
    problems = _validate(config)
    if problems:
        raise ConfigError(
            "invalid config:\n" + "\n".join(f"  - {p}" for p in problems)
        )
    config.setdefault("delta", 0.0)
    config.setdefault("params", {})
    return config


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("BKINV_THREADS", "1")))
    except ValueError:
        return 1


def _build_id() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=10,
            cwd=os.path.dirname(os.path.abspath(__file__)),
        )
        if out.returncode == 0:
            return out.stdout.strip()
    except Exception:
        pass
    from importlib.metadata import version

    try:
        return "bkinv-" + version("bkinv")
    except Exception:
        return "bkinv-unknown"


# ---------------------------------------------------------------------------
# truth presets


def coefficient_truth(preset: str, grid: Grid, d: float, inline: dict | None = None):
    """Named coefficient presets plus inline tables ({'center', 'radius',
    'amplitude'})."""
    if preset == "background":
        return CoefficientModel.background(grid, d)
    if preset == "single_inclusion":
        spec = {"center": [0.1, -0.05][: grid.ndim], "radius": 0.2, "amplitude": 3.0}
        spec.update(inline or {})
        mesh = grid.meshgrid()
        r2 = np.zeros(grid.shape)
        for a in range(grid.ndim):
            r2 += (mesh[a] - spec["center"][a]) ** 2
        bump = np.clip(1.0 - r2 / spec["radius"] ** 2, 0.0, None) ** 2
        return CoefficientModel.from_values(grid, 1.0 + spec["amplitude"] * bump, d)
    raise ConfigError(f"unknown coefficient preset {preset!r}")


def initial_truth(preset: str, x: np.ndarray, inline: dict | None = None) -> np.ndarray:
    """Named initial-condition presets for source-recovery experiments."""
    def bump(c, r, a):
        return a * np.clip(1.0 - ((x - c) / r) ** 2, 0.0, None) ** 3

    if preset == "two_bump":
        return bump(-0.35, 0.25, 1.0) + bump(0.4, 0.2, 0.8)
    if preset == "bump":
        spec = {"center": 0.2, "radius": 0.1, "amplitude": 1.0}
        spec.update(inline or {})
        return bump(spec["center"], spec["radius"], spec["amplitude"])
    raise ConfigError(f"unknown initial-condition preset {preset!r}")


# ---------------------------------------------------------------------------
# experiment implementations


def _globconv_config(params: dict, seed: int) -> globconv.GlobconvConfig:
    dims = int(params.get("dims", 1))
    defaults_1d = dict(omega_lo=(-0.5,), omega_hi=(0.5,), n_omega=(101,),
                       x0=(-1.5,), s_min=1.0, s_max=8.0, N=14, pad=2.0)
    defaults_2d = dict(omega_lo=(-0.5, -0.5), omega_hi=(0.5, 0.5), n_omega=(41, 41),
                       x0=(-1.5, 0.0), s_min=2.0, s_max=8.0, N=12, pad=3.5)
    kw = defaults_1d if dims == 1 else defaults_2d
    kw.update(dict(d=5.0, lam=50.0, m=2 if dims == 2 else 3))
    for key in ("omega_lo", "omega_hi", "n_omega", "x0", "d", "s_min", "s_max",
                "N", "lam", "m", "eps_source", "stop_tol_c", "stop_tol_residual",
                "pad", "tail_route", "fine_factor"):
        if key in params:
            kw[key] = params[key]
    if "lambda" in params:  # config-file spelling of the weight parameter
        kw["lam"] = params["lambda"]
    kw["seed"] = seed
    return globconv.GlobconvConfig(**kw)


def run_globconv(config: dict, outdir: str) -> dict:
    params = config["params"]
    seed = config["seed"]
    delta = config["delta"]
    gc = _globconv_config(params, seed)
    pad_grid = gc.padded_grid()
    preset = params.get("preset", "background")
    c_true = coefficient_truth(preset, pad_grid, gc.d, params.get("inclusion"))
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
    data = globconv.synthesize_boundary_data(
        gc, c_true, route=params.get("data_route", "elliptic"),
        noise_delta=delta, rng=rng,
    )
    c_rec, log = globconv.run_reconstruction(data, gc)
    globconv.write_log_csv(log, os.path.join(outdir, "convergence_log.csv"))
    write_field(c_rec.field, os.path.join(outdir, "c_reconstructed"))

    g = c_rec.grid
    idx = []
    for a in range(g.ndim):
        i0 = int(round((g.lo[a] - pad_grid.lo[a]) / pad_grid.spacing[a]))
        idx.append(slice(i0, i0 + g.shape[a]))
    c_true_omega = c_true.field.values[tuple(idx)]
    diff = ScalarField(g, c_rec.field.values - c_true_omega)
    denom = l2_norm(ScalarField(g, c_true_omega))
    metrics = {
        "c_l2_error": l2_norm(diff) / denom,
        "c_max": float(c_rec.field.values.max()),
        "c_max_true": float(c_true_omega.max()),
        "iterations": len(log),
        "stopped_before_last_layer": bool(log and log[-1][0] < gc.N),
        "final_boundary_residual": float(log[-1][3]) if log else None,
    }
    return metrics


def run_qrm_rate(config: dict, outdir: str) -> dict:
    params = config["params"]
    fam_name = params.get("family", "hyperbolic")
    if fam_name == "hyperbolic":
        family = qrm.HyperbolicLateralFamily(**params.get("family_params", {}))
        deltas = params.get("deltas", [1e-2, 3e-3, 1e-3, 3e-4, 1e-4, 3e-5, 1e-5])
    elif fam_name == "elliptic":
        family = qrm.EllipticCauchyFamily(**params.get("family_params", {}))
        deltas = params.get("deltas", [1.0, 0.3, 0.1, 0.03, 0.01, 0.003, 0.001])
    else:
        raise ConfigError(f"unknown rate family {fam_name!r}")
    rows, slope = qrm.rate_experiment(
        family, deltas, seed=config["seed"],
        csv_path=os.path.join(outdir, "rate_table.csv"),
        repeats=int(params.get("repeats", 1)),
    )
    return {
        "family": fam_name,
        "fitted_slope": slope,
        "levels": len(rows),
        "error_region_last": rows[-1][2],
    }


def _tat_forward(params: dict, delta: float, rng):
    R = float(params.get("R", 1.0))
    T = float(params.get("T", 1.6))
    h = float(params.get("h_data", 0.01))
    pad = T + 0.2
    n = int(round(2 * (R + pad) / h)) + 1
    ng = Grid((-R - pad,), (R + pad,), (n,))
    f_true_full = initial_truth(params.get("preset", "two_bump"), ng.axis(0),
                                params.get("initial"))
    cbg = CoefficientModel.background(ng, 3.0)
    omega = Box((-R,), (R,))
    times, _, _, trace = wave_solve(cbg, f_true_full, np.zeros(ng.shape), T,
                                    omega=omega)
    values = {
        s: qrm.multiplicative_noise(trace.values[s], delta, rng)
        for s in trace.sides
    }
    noisy = BoundaryTrace(ng, trace.sides, trace.samples, values)
    return ng, noisy, R, T, h


def run_tat(config: dict, outdir: str) -> dict:
    params = config["params"]
    delta = config["delta"]
    rng = np.random.default_rng(np.random.SeedSequence(config["seed"]).spawn(1)[0])
    ng, trace, R, T, h = _tat_forward(params, delta, rng)
    nx = int(params.get("nx", 81))
    gx = Grid((-R,), (R,), (nx,))
    problem = inverse_source.TatProblem(gx, trace, T)
    gamma = float(params.get("gamma", 1e-10))
    f_rec, sol = inverse_source.tat_reconstruct(problem, gamma=gamma, h_ext=h)
    write_field(f_rec, os.path.join(outdir, "f_reconstructed"))
    f_true = initial_truth(params.get("preset", "two_bump"), gx.axis(0),
                           params.get("initial"))
    err = float(np.linalg.norm(f_rec.values - f_true) / np.linalg.norm(f_true))
    sidecar = {"gamma": gamma, "delta": delta,
               "error_metrics": {"relative_l2": err}}
    with open(os.path.join(outdir, "f_reconstructed_metrics.json"), "w") as fp:
        json.dump(sidecar, fp, indent=2, sort_keys=True)
        fp.write("\n")
    return {"relative_l2_error": err, "gamma": gamma,
            "residual": sol.residual, "iterations": sol.iterations}


def run_parabolic_route(config: dict, outdir: str) -> dict:
    params = config["params"]
    delta = config["delta"]
    rng = np.random.default_rng(np.random.SeedSequence(config["seed"]).spawn(1)[0])
    pr = inverse_source.ParabolicRouteConfig(
        **{k: params[k] for k in ("nx", "nt", "depth", "t_final") if k in params}
    )
    # forward wave trace at the face x = 0; source supported in (0, depth)
    h = float(params.get("h_data", 0.005))
    T_wave = float(params.get("T_wave", 15.0))
    lo = -T_wave / 2 - 0.5
    hi = pr.depth + T_wave / 2 + 0.5
    n = int(round((hi - lo) / h)) + 1
    ng = Grid((lo,), (lo + (n - 1) * h,), (n,))
    x = ng.axis(0)
    f_full = initial_truth(params.get("preset", "bump"), x, params.get("initial"))
    cbg = CoefficientModel.background(ng, 3.0)
    times, st, frames, _ = wave_solve(cbg, f_full, np.zeros(ng.shape), T_wave,
                                      store_every=1)
    iface = ng.nearest_index((0.0,))[0]
    trace = frames[:, iface]
    trace = qrm.multiplicative_noise(trace, delta, rng)
    gamma = float(params.get("gamma", 1e-10))
    f_rec, sol, _ = inverse_source.parabolic_route_reconstruct(st, trace, gamma, pr)
    write_field(f_rec, os.path.join(outdir, "f_reconstructed"))
    f_true = initial_truth(params.get("preset", "bump"), f_rec.grid.axis(0),
                           params.get("initial"))
    err = float(np.linalg.norm(f_rec.values - f_true) / np.linalg.norm(f_true))
    sidecar = {"gamma": gamma, "delta": delta,
               "error_metrics": {"relative_l2": err}}
    with open(os.path.join(outdir, "f_reconstructed_metrics.json"), "w") as fp:
        json.dump(sidecar, fp, indent=2, sort_keys=True)
        fp.write("\n")
    return {"relative_l2_error": err, "gamma": gamma, "iterations": sol.iterations}


def run_verify_carleman(config: dict, outdir: str) -> dict:
    params = config["params"]
    seed = config["seed"]
    n_train = int(params.get("n_train", 50))
    n_test = int(params.get("n_test", 50))
    which = params.get("which", "both")
    out = {}
    reports = []

    def sweep_and_validate(tag, make_ratio, make_report, lam_grid):
        lam_star, C, table = carleman.calibrate_constant(make_ratio, lam_grid)
        held = [make_report(lam_star * 2.0, j, C) for j in range(n_test)]
        ratios_by_lam = {
            lam: min(make_report(lam, j, C).ratio for j in range(n_test))
            for lam in (lam_star, 2 * lam_star, 4 * lam_star)
        }
        reports.extend(r.to_json() for r in held)
        out[tag] = {
            "lam_star": lam_star,
            "C": C,
            "holds_all_heldout": all(r.holds for r in held),
            "min_ratio_by_lam": {str(k): v for k, v in ratios_by_lam.items()},
            "sweep_table": {str(k): v for k, v in table.items()},
        }

    if which in ("parabolic", "both"):
        g = Grid((0.0, -1.3), (0.85, 1.3), (141, 161))
        base = carleman.ParabolicCWF(lam=2.0, nu=3.0, alpha=0.5, eta=0.95, T=1.0)
        mask = base.domain_mask(g)
        rng_train = np.random.default_rng(np.random.SeedSequence(seed).spawn(2)[0])
        rng_test = np.random.default_rng(np.random.SeedSequence(seed).spawn(2)[1])
        train = [carleman.random_bump_in_mask(g, mask, rng_train) for _ in range(n_train)]
        test = [carleman.random_bump_in_mask(g, mask, rng_test) for _ in range(n_test)]

        def ratio_fn(lam):
            cwf = base.with_lam(lam)
            return [carleman.verify_parabolic_estimate(1.0, u, cwf).ratio for u in train]

        def report_fn(lam, j, C):
            return carleman.verify_parabolic_estimate(1.0, test[j], base.with_lam(lam), C=C)

        sweep_and_validate("parabolic", ratio_fn, report_fn, [1.5, 3, 6, 12, 24])

    if which in ("hyperbolic", "both"):
        g = Grid((0.3, -1.2), (1.8, 1.2), (151, 161))
        base = carleman.HyperbolicCWF(lam=2.0, eta=0.5, x0=(0.0,), gamma=0.25)
        mask = base.domain_mask(g)
        rng_train = np.random.default_rng(np.random.SeedSequence(seed + 1).spawn(2)[0])
        rng_test = np.random.default_rng(np.random.SeedSequence(seed + 1).spawn(2)[1])
        train = [carleman.random_bump_in_mask(g, mask, rng_train) for _ in range(n_train)]
        test = [carleman.random_bump_in_mask(g, mask, rng_test) for _ in range(n_test)]

        def ratio_fn(lam):
            cwf = base.with_lam(lam)
            return [carleman.verify_hyperbolic_estimate(1.0, u, cwf, d=10.0).ratio for u in train]

        def report_fn(lam, j, C):
            return carleman.verify_hyperbolic_estimate(
                1.0, test[j], base.with_lam(lam), d=10.0, C=C)

        sweep_and_validate("hyperbolic", ratio_fn, report_fn, [1.5, 3, 6, 12, 24, 48])

    with open(os.path.join(outdir, "estimate_reports.jsonl"), "w") as fp:
        for line in reports:
            fp.write(line + "\n")
    return out


def run_verify_volterra(config: dict, outdir: str) -> dict:
    params = config["params"]
    seed = config["seed"]
    n_signals = int(params.get("n_signals", 100))
    lams = params.get("lams", [10.0, 50.0, 100.0])
    times = np.linspace(-1.0, 1.0, int(params.get("n_times", 4001)))
    rng = np.random.default_rng(seed)
    signals = [carleman.random_piecewise_signal(times, rng) for _ in range(n_signals)]
    phi = lambda z: -z

    def check(args):
        g, lam = args
        return carleman.volterra_weight_check(g, times, phi, lam, b=1.0)

    cells = [(g, lam) for lam in lams for g in signals]
    workers = _threads()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            reports = list(ex.map(check, cells))
    else:
        reports = [check(c) for c in cells]
    with open(os.path.join(outdir, "volterra_reports.jsonl"), "w") as fp:
        for r in reports:
            fp.write(r.to_json() + "\n")
    by_lam = {lam: [r for r in reports if r.lam == lam] for lam in lams}
    mean_ratio = {lam: float(np.mean([r.ratio for r in rs])) for lam, rs in by_lam.items()}
    return {
        "holds": bool(all(r.holds for r in reports)),
        "signals": n_signals,
        "mean_ratio_by_lam": {str(k): v for k, v in mean_ratio.items()},
        "ratio_decay_100_over_10": mean_ratio[lams[-1]] / mean_ratio[lams[0]],
    }


_RUNNERS = {
    "globconv": run_globconv,
    "qrm-rate": run_qrm_rate,
    "tat": run_tat,
    "parabolic-route": run_parabolic_route,
    "verify-carleman": run_verify_carleman,
    "verify-volterra": run_verify_volterra,
}


def run_experiment(config: dict, outdir: str) -> dict:
    os.makedirs(outdir, exist_ok=True)
    t0 = time.perf_counter()
    metrics = _RUNNERS[config["kind"]](config, outdir)
    wall = time.perf_counter() - t0
    summary = {
        "schema_version": SCHEMA_VERSION,
        "experiment": config["kind"],
        "config": config,
        "metrics": metrics,
        "build": _build_id(),
    }
    with open(os.path.join(outdir, "summary.json"), "w") as fp:
        json.dump(summary, fp, indent=2, sort_keys=True)
        fp.write("\n")
    # wall time is the one non-reproducible datum; it lives apart so the
    # deterministic artifacts stay byte-identical across reruns
    with open(os.path.join(outdir, "timing.json"), "w") as fp:
        json.dump({"wall_time_s": wall}, fp)
        fp.write("\n")
    return summary


# ---------------------------------------------------------------------------
# make-data


def make_synthetic(truth_path: str, delta: float, seed: int, outdir: str) -> dict:
    """Forward-solve a truth spec, perturb the traces with seeded noise and
    write data plus the truth for scoring."""
    with open(truth_path) as fp:
        truth = json.load(fp)
    kind = truth.get("kind")
    os.makedirs(outdir, exist_ok=True)
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
    if kind == "globconv":
        gc = _globconv_config(truth.get("params", {}), seed)
        pad_grid = gc.padded_grid()
        c_true = coefficient_truth(truth.get("preset", "background"), pad_grid,
                                   gc.d, truth.get("inclusion"))
        data = globconv.synthesize_boundary_data(
            gc, c_true, route=truth.get("data_route", "elliptic"),
            noise_delta=delta, rng=rng,
        )
        write_field(c_true.field, os.path.join(outdir, "c_truth"))
        np.savez(os.path.join(outdir, "boundary_data.npz"),
                 s_values=data.s_values, sides=np.array(data.sides),
                 **{f"side_{s}": data.values[s] for s in data.sides})
        meta = {"kind": kind, "delta": delta, "seed": seed,
                "sides": list(data.sides)}
    elif kind == "tat":
        ng, trace, R, T, h = _tat_forward(truth.get("params", {}), delta, rng)
        xg = ng.axis(0)
        f_true = initial_truth(truth.get("params", {}).get("preset", "two_bump"),
                               xg, truth.get("params", {}).get("initial"))
        write_field(ScalarField(ng, f_true), os.path.join(outdir, "f_truth"))
        np.savez(os.path.join(outdir, "trace_data.npz"),
                 samples=trace.samples,
                 **{f"side_{s}": trace.values[s] for s in trace.sides})
        meta = {"kind": kind, "delta": delta, "seed": seed,
                "sides": list(trace.sides), "T": T, "R": R, "h": h}
    else:
        raise ConfigError(f"make-data supports kinds 'globconv' and 'tat', got {kind!r}")
    with open(os.path.join(outdir, "data_meta.json"), "w") as fp:
        json.dump(meta, fp, indent=2, sort_keys=True)
        fp.write("\n")
    return meta


# ---------------------------------------------------------------------------
# report aggregation


def aggregate_report(rootdir: str):
    """Collect metric CSVs and summaries under a directory into one table."""
    rows = []
    for dirpath, _, files in sorted(os.walk(rootdir)):
        if "summary.json" in files:
            with open(os.path.join(dirpath, "summary.json")) as fp:
                s = json.load(fp)
            for key, val in sorted(s.get("metrics", {}).items()):
                if isinstance(val, (int, float, bool)):
                    rows.append((os.path.relpath(dirpath, rootdir),
                                 s.get("experiment", "?"), key, val))
    return rows


# ---------------------------------------------------------------------------
# entry point


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="bkinv",
        description="Inverse-problem experiment runner (quasi-reversibility, "
                    "layer stripping, source recovery, estimate verification)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment from a JSON config")
    p_run.add_argument("config", help="path to the experiment config JSON")
    p_run.add_argument("--out", default=None, help="output directory (default: config's outdir or '.')")

    p_data = sub.add_parser("make-data", help="generate synthetic data from a truth spec")
    p_data.add_argument("truth", help="path to the truth spec JSON")
    p_data.add_argument("--delta", type=float, default=0.0, help="relative noise level")
    p_data.add_argument("--seed", type=int, required=True, help="RNG seed")
    p_data.add_argument("--out", default="data", help="output directory")

    p_rep = sub.add_parser("report", help="aggregate experiment outputs into one table")
    p_rep.add_argument("dir", help="directory tree holding experiment outputs")

    args = parser.parse_args(argv)
    if args.command == "run":
        try:
            config = load_config(args.config)
        except ConfigError as e:
            print(str(e), file=sys.stderr)
            return 2
        outdir = args.out or config.get("outdir", ".")
        try:
            summary = run_experiment(config, outdir)
        except Exception as e:
            print(f"experiment {config.get('kind')} failed: {e}", file=sys.stderr)
            return 1
        print(json.dumps(summary["metrics"], indent=2, sort_keys=True))
        return 0
    if args.command == "make-data":
        try:
            meta = make_synthetic(args.truth, args.delta, args.seed, args.out)
        except ConfigError as e:
            print(str(e), file=sys.stderr)
            return 2
        print(json.dumps(meta, indent=2, sort_keys=True))
        return 0
    if args.command == "report":
        rows = aggregate_report(args.dir)
        wr = csv.writer(sys.stdout)
        wr.writerow(["run", "experiment", "metric", "value"])
        for r in rows:
            wr.writerow(r)
        return 0
    return 2


if __name__ == "__main__":
    sys.exit(main())
