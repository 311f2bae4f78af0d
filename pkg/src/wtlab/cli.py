"""Configuration-driven experiment runner.

Config files use INI sections parsed by :mod:`configparser`:

    [experiment]
    name = density            # one of density, stability-scan, flow-check,
    seed = 42                 #   integral-repr, local-law, eth
    output_dir = out

    [profile]
    symmetry = complex-hermitian
    a_blocks = 0.0, 0.0
    s_blocks = 1 2 ; 2 1      # matrix rows separated by ';'

    [parameters]
    n = 256
    eta_floor = 1e-4

Scalars parse as int, then float, then bool, then string; comma- or
whitespace-separated values parse as lists; ';'-separated rows parse as
matrices; '#' starts an inline comment.  All numeric fields are decimal.

Exit codes: 0 success, 1 acceptance-threshold failure, 2 invalid
configuration, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import os
import sys
import time
from dataclasses import dataclass

import numpy as np

from . import __version__, dyson, flow, harness, stability
from .dyson import DysonConvergenceError
from .ensemble import ProfileSpec, ProfileError, build_ensemble, sample_matrix

EXPERIMENTS = ("density", "stability-scan", "flow-check", "integral-repr", "local-law", "eth")
THREADS_ENV = "WTLAB_THREADS"

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_BAD_CONFIG = 2
EXIT_NUMERICAL = 3


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    profile: ProfileSpec
    experiment: str
    parameters: dict
    seed: int
    output_dir: str
    threads: int = 1


@dataclass(frozen=True)
class RunManifest:
    """Record of one run: config echo, artifact digests, timings, checks."""

    experiment: str
    config: dict
    artifacts: tuple
    timings: dict
    version: str
    checks: tuple

    @property
    def passed(self) -> bool:
        return all(ok for _, ok, _ in self.checks)


def _parse_scalar(text: str):
    text = text.strip()
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    return text


def _parse_value(text: str):
    text = text.strip()
    if ";" in text:
        return [
            [_parse_scalar(x) for x in row.replace(",", " ").split()]
            for row in text.split(";")
        ]
    if "," in text:
        return [_parse_scalar(x) for x in text.split(",")]
    return _parse_scalar(text)


def parse_config(path) -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    read = cp.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    if "experiment" not in cp or "profile" not in cp:
        raise ConfigError("config needs [experiment] and [profile] sections")
    exp = cp["experiment"]
    name = exp.get("name", "").strip()
    seed = int(exp.get("seed", "0"))
    out = exp.get("output_dir", "out").strip()
    threads = int(exp.get("threads", "0")) or None

    prof = cp["profile"]
    a_blocks = _parse_value(prof.get("a_blocks", "0.0"))
    if np.isscalar(a_blocks):
        a_blocks = [a_blocks]
    s_blocks = _parse_value(prof.get("s_blocks", "1.0"))
    if np.isscalar(s_blocks):
        s_blocks = [[s_blocks]]
    elif s_blocks and np.isscalar(s_blocks[0]):
        s_blocks = [s_blocks]
    t_raw = prof.get("t_blocks", "").strip()
    t_blocks = None
    if t_raw:
        t_blocks = _parse_value(t_raw)
        if t_blocks and np.isscalar(t_blocks[0]):
            t_blocks = [t_blocks]
    symmetry = prof.get("symmetry", "complex-hermitian").strip()
    try:
        profile = ProfileSpec(tuple(a_blocks), tuple(map(tuple, s_blocks)),
                              None if t_blocks is None else tuple(map(tuple, t_blocks)),
                              symmetry)
    except ProfileError as err:
        raise ConfigError(f"invalid profile: {err}") from err

    params = {}
    if "parameters" in cp:
        for key, raw in cp["parameters"].items():
            params[key] = _parse_value(raw)
    if threads is None:
        threads = int(os.environ.get(THREADS_ENV, "0")) or (os.cpu_count() or 1)
    return ExperimentConfig(profile, name, params, seed, out, threads)


def validate(config: ExperimentConfig) -> list:
    """Pure validation; an empty list means the run's preconditions hold."""
    diags = []
    if config.experiment not in EXPERIMENTS:
        diags.append(f"unknown experiment name {config.experiment!r}")
    if not 0 <= config.seed < 2**64:
        diags.append("seed must fit in 64 bits")
    p = config.parameters
    for key, val in p.items():
        if key.endswith("_tol") or key in ("tol", "eta_floor", "rho_min", "quad_tol"):
            if not (np.isscalar(val) and float(val) > 0):
                diags.append(f"parameter {key} must be a positive number")
    if config.experiment in ("local-law", "eth"):
        if config.experiment == "eth" and not p.get("n_list"):
            diags.append("eth experiment needs a nonempty n_list")
        if int(p.get("samples", 0)) <= 0:
            diags.append("Monte Carlo experiments need samples > 0")
    if config.experiment == "local-law" and p.get("kind", "eta-sweep") == "eta-sweep":
        n = int(p.get("n", 0))
        etas = p.get("eta_list") or []
        if np.isscalar(etas):
            etas = [etas]
        eps = float(p.get("eps", harness.DOMAIN_EPS))
        if n > 0:
            lo = n ** (-1.0 + eps)
            bad = [float(x) for x in etas if float(x) < lo]
            if bad:
                diags.append(
                    f"eta values {bad} violate the bulk-domain constraint "
                    f"eta >= N^(-1+eps) = {lo:.3e}"
                )
    return diags


# -- deterministic artifact writing -------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    return obj


def _write_json(path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        h.update(fh.read())
    return h.hexdigest()


def _config_echo(config: ExperimentConfig) -> dict:
    return {
        "experiment": config.experiment,
        "seed": config.seed,
        "output_dir": config.output_dir,
        "threads": config.threads,
        "profile": {
            "a_blocks": list(config.profile.a_blocks),
            "s_blocks": [list(r) for r in config.profile.s_blocks],
            "t_blocks": None
            if config.profile.t_blocks is None
            else [[{"re": complex(v).real, "im": complex(v).imag} for v in r] for r in config.profile.t_blocks],
            "symmetry": config.profile.symmetry,
        },
        "parameters": _jsonable(config.parameters),
    }


# -- experiments ---------------------------------------------------------------


def _exp_density(config, outdir):
    p = config.parameters
    n = int(p.get("n", 256))
    e = build_ensemble(config.profile, n)
    lo = float(p.get("grid_min", -3.0))
    hi = float(p.get("grid_max", 3.0))
    points = int(p.get("grid_points", 1201))
    eta_floor = float(p.get("eta_floor", 1e-4))
    grid = np.linspace(lo, hi, points)
    prof = dyson.density(e, grid, eta_floor)
    density_csv = os.path.join(outdir, "density.csv")
    _write_csv(density_csv, ("energy", "rho"), zip(prof.energies, prof.rho))
    quant_csv = os.path.join(outdir, "quantiles.csv")
    _write_csv(quant_csv, ("j", "gamma_j"), enumerate(prof.quantiles, start=1))
    summary = {
        "total_mass": prof.total_mass,
        "eta_floor": prof.eta_used,
        "notes": list(prof.notes),
    }
    summary_json = os.path.join(outdir, "summary.json")
    _write_json(summary_json, summary)
    mass_tol = float(p.get("mass_tol", 1e-4))
    checks = [
        ("total_mass", abs(prof.total_mass - 1.0) <= mass_tol,
         f"|mass-1| = {abs(prof.total_mass - 1.0):.3e} (tol {mass_tol:g})"),
        ("rho_nonnegative", bool(np.all(prof.rho >= 0)), "rho >= 0 on the grid"),
    ]
    return [density_csv, quant_csv, summary_json], checks


def _exp_stability_scan(config, outdir):
    p = config.parameters
    n = int(p.get("n", 128))
    e = build_ensemble(config.profile, n)
    energies = p.get("energies", [0.0])
    if np.isscalar(energies):
        energies = [energies]
    eta = float(p.get("eta", 1e-3))
    tol = float(p.get("tol", 1e-8))
    rows = []
    kappas = {}
    worst_proj = 0.0
    for energy in energies:
        z1 = complex(float(energy), -eta)
        z2 = complex(float(energy), eta)
        eig = stability.smallest_eig(stability.stability_matrix(e, z1, z2))
        pi = eig.projector()
        bmat = stability.stability_matrix(e, z1, z2)
        worst_proj = max(
            worst_proj,
            float(np.abs(pi @ pi - pi).max()),
            float(np.abs(bmat @ pi - eig.beta * pi).max()),
        )
        kappas[str(energy)] = stability.kappa(e, float(energy))
        rows.append(
            (z1.real, z1.imag, z2.real, z2.imag, eig.beta.real, eig.beta.imag,
             eig.gap, eig.isolated)
        )
    csv_path = os.path.join(outdir, "stability.csv")
    _write_csv(
        csv_path,
        ("re_z1", "im_z1", "re_z2", "im_z2", "re_beta", "im_beta", "gap", "isolated"),
        rows,
    )
    summary_json = os.path.join(outdir, "summary.json")
    _write_json(summary_json, {"kappa": kappas, "max_projector_residual": worst_proj})
    checks = [
        ("projector_residuals", worst_proj <= tol,
         f"max residual {worst_proj:.3e} (tol {tol:g})"),
    ]
    return [csv_path, summary_json], checks


def _exp_flow_check(config, outdir):
    p = config.parameters
    n = int(p.get("n", 64))
    e = build_ensemble(config.profile, n)
    big_t = float(p.get("t_terminal", 1.0))
    z = complex(float(p.get("re_z", 0.1)), float(p.get("im_z", 1e-3)))
    samples = int(p.get("samples", 33))
    traj = flow.eta_profile(e, z, big_t, samples)
    disc = max(
        flow.verify_m_scaling(e, z, t, big_t) for t in np.linspace(0, big_t, 5)
    )
    chart = flow.ConeChart(vertex=complex(z.real, abs(z.imag)) + 0.2j)
    vertex_err = abs(flow.psi(chart, 1j * chart.xi ** (1 / chart.aperture)) - chart.vertex)
    traj_csv = os.path.join(outdir, "trajectory.csv")
    _write_csv(
        traj_csv,
        ("t", "re_z_min", "re_z_max", "im_z_min", "im_z_max", "eta_t"),
        [
            (t, zs.real.min(), zs.real.max(), zs.imag.min(), zs.imag.max(), eta)
            for t, zs, eta in zip(traj.ts, traj.z_of_t, traj.eta_of_t)
        ],
    )
    summary = {
        "m_scaling_discrepancy": disc,
        "comparability_max": float(traj.comparability.max()),
        "eta_linear_ratio_range": [float(traj.eta_linear_ratio.min()),
                                   float(traj.eta_linear_ratio.max())],
        "psi_vertex_error": vertex_err,
    }
    summary_json = os.path.join(outdir, "summary.json")
    _write_json(summary_json, summary)
    checks = [
        ("m_scaling", disc <= float(p.get("scaling_tol", 1e-8)),
         f"discrepancy {disc:.3e}"),
        ("eta_comparability",
         0.1 <= summary["eta_linear_ratio_range"][0]
         and summary["eta_linear_ratio_range"][1] <= 10.0,
         f"ratio range {summary['eta_linear_ratio_range']}"),
        ("psi_vertex", vertex_err <= 1e-12, f"error {vertex_err:.3e}"),
    ]
    return [traj_csv, summary_json], checks


def _exp_integral_repr(config, outdir):
    p = config.parameters
    n = int(p.get("n", 8))
    e = build_ensemble(config.profile, n)
    h = sample_matrix(e, config.seed)
    z = complex(float(p.get("re_z", 0.1)), float(p.get("im_z", 0.2)))
    xi = float(p.get("xi", 1e-8))
    quad_tol = float(p.get("quad_tol", 1e-6))
    chart = flow.ConeChart(vertex=z, xi=xi)
    rep = flow.resolvent_integral_repr(h, e, z, chart, quad_tol)
    horiz = flow.resolvent_stieltjes_repr(h, z, xi=max(xi, 1e-10), quad_tol=quad_tol)
    chart_small = flow.ConeChart(vertex=z, xi=xi / 10)
    rep_small = flow.resolvent_integral_repr(h, e, z, chart_small, quad_tol)
    agreement = float(np.abs(rep.reconstruction - horiz.reconstruction).max())
    xi_drift = float(np.abs(rep.reconstruction - rep_small.reconstruction).max())
    summary = {
        "cone_error": rep.max_abs_error,
        "horizontal_error": horiz.max_abs_error,
        "cone_vs_horizontal": agreement,
        "xi_robustness": xi_drift,
        "evaluations": rep.evaluations,
    }
    summary_json = os.path.join(outdir, "summary.json")
    _write_json(summary_json, summary)
    tol = float(p.get("recon_tol", 1e-6))
    checks = [
        ("cone_reconstruction", rep.max_abs_error <= tol, f"{rep.max_abs_error:.3e}"),
        ("variant_agreement", agreement <= tol, f"{agreement:.3e}"),
        ("xi_robustness", xi_drift <= tol / 10, f"{xi_drift:.3e}"),
    ]
    return [summary_json], checks


def _exp_local_law(config, outdir):
    p = config.parameters
    kind = p.get("kind", "eta-sweep")
    samples = int(p.get("samples", 20))
    checks = []
    if kind == "eta-sweep":
        n = int(p.get("n", 256))
        etas = p.get("eta_list", [0.2, 0.1, 0.05])
        if np.isscalar(etas):
            etas = [etas]
        energy1 = float(p.get("e1", 0.0))
        energy2 = float(p.get("e2", 0.0))
        a1, a2 = harness.crossed_rank_one(n)
        fit = harness.eta_scaling_law(
            config.profile, energy1, energy2, a1, a2,
            etas, n, samples, config.seed, workers=config.threads,
        )
        rows = [(np.exp(x), np.exp(y)) for x, y in fit.points]
        csv_path = os.path.join(outdir, "locallaw.csv")
        _write_csv(csv_path, ("eta", "median_fluctuation"), rows)
    else:
        n_list = p.get("n_list", [128, 256, 512])
        if np.isscalar(n_list):
            n_list = [n_list]
        blocks = p.get("observable_blocks", [1.0, -1.0])
        z = complex(float(p.get("e1", 0.0)), float(p.get("eta", 0.1)))
        fit = harness.single_resolvent_law(
            config.profile, z, blocks, [int(x) for x in n_list],
            samples, config.seed, workers=config.threads,
        )
        rows = [(np.exp(x), np.exp(y)) for x, y in fit.points]
        csv_path = os.path.join(outdir, "locallaw.csv")
        _write_csv(csv_path, ("n", "median_fluctuation"), rows)
    payload = {
        "kind": kind,
        "exponent": fit.exponent,
        "stderr": fit.stderr,
        "intercept": fit.intercept,
        "r_squared": fit.r_squared,
    }
    fit_json = os.path.join(outdir, "fit.json")
    _write_json(fit_json, payload)
    if "expect_exponent" in p:
        target = float(p["expect_exponent"])
        tol = float(p.get("exponent_tol", 0.2))
        checks.append(
            ("exponent", abs(fit.exponent - target) <= tol,
             f"{fit.exponent:.3f} vs {target:+.3f} +/- {tol:g}")
        )
    return [csv_path, fit_json], checks


def _exp_eth(config, outdir):
    p = config.parameters
    n_list = [int(x) for x in p.get("n_list", [128, 256, 512])]
    samples = int(p.get("samples", 10))
    rho_min = float(p.get("rho_min", 0.1))
    blocks = p.get("observable_blocks", [1.0, -1.0])
    report = harness.eth_overlaps(
        config.profile, blocks, n_list, samples, rho_min, config.seed,
        workers=config.threads,
    )
    csv_path = os.path.join(outdir, "eth.csv")
    _write_csv(
        csv_path,
        ("n", "max_dev_median", "scaled_dev_median", "rigidity_median",
         "lambda_centered_dev_median", "bulk_size", "samples"),
        [
            (r.n, r.max_dev_median, r.scaled_dev_median, r.rigidity_median,
             r.lambda_centered_dev_median, r.bulk_size, r.samples)
            for r in report.per_n
        ],
    )
    payload = {
        "rho_min": rho_min,
        "observable_blocks": list(report.observable_blocks),
        "per_n": [
            {
                "n": r.n,
                "max_dev_median": r.max_dev_median,
                "max_dev_mean": r.max_dev_mean,
                "scaled_dev_median": r.scaled_dev_median,
                "rigidity_median": r.rigidity_median,
                "lambda_centered_dev_median": r.lambda_centered_dev_median,
                "bulk_size": r.bulk_size,
            }
            for r in report.per_n
        ],
        "fit": None
        if report.fit is None
        else {
            "exponent": report.fit.exponent,
            "stderr": report.fit.stderr,
            "intercept": report.fit.intercept,
            "r_squared": report.fit.r_squared,
        },
    }
    report_json = os.path.join(outdir, "report.json")
    _write_json(report_json, payload)
    checks = []
    if "expect_exponent" in p and report.fit is not None:
        target = float(p["expect_exponent"])
        tol = float(p.get("exponent_tol", 0.15))
        checks.append(
            ("exponent", abs(report.fit.exponent - target) <= tol,
             f"{report.fit.exponent:.3f} vs {target:+.3f} +/- {tol:g}")
        )
    if "rigidity_max" in p:
        cap = float(p["rigidity_max"])
        worst = max(r.rigidity_median for r in report.per_n)
        checks.append(("rigidity", worst <= cap, f"max median {worst:.2f} <= {cap:g}"))
    return [csv_path, report_json], checks


_RUNNERS = {
    "density": _exp_density,
    "stability-scan": _exp_stability_scan,
    "flow-check": _exp_flow_check,
    "integral-repr": _exp_integral_repr,
    "local-law": _exp_local_law,
    "eth": _exp_eth,
}


def run(config: ExperimentConfig) -> RunManifest:
    """Execute the configured experiment and write its artifacts and manifest.

    Raises ``ConfigError`` on validation failure; numerical errors propagate
    (the command-line wrapper maps them to exit codes).
    """
    diags = validate(config)
    if diags:
        raise ConfigError("; ".join(diags))
    os.makedirs(config.output_dir, exist_ok=True)
    t0 = time.time()
    artifacts, checks = _RUNNERS[config.experiment](config, config.output_dir)
    elapsed = time.time() - t0
    entries = tuple(
        {"path": os.path.basename(a), "sha256": _digest(a), "bytes": os.path.getsize(a)}
        for a in artifacts
    )
    manifest = RunManifest(
        experiment=config.experiment,
        config=_config_echo(config),
        artifacts=entries,
        timings={"total_seconds": elapsed},
        version=__version__,
        checks=tuple(checks),
    )
    _write_json(
        os.path.join(config.output_dir, "manifest.json"),
        {
            "experiment": manifest.experiment,
            "config": manifest.config,
            "artifacts": list(manifest.artifacts),
            "timings": manifest.timings,
            "version": manifest.version,
            "checks": [[name, ok, detail] for name, ok, detail in manifest.checks],
        },
    )
    return manifest


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="wtlab", description="Wigner-type ensemble experiments"
    )
    sub = parser.add_subparsers(dest="command")
    for name in EXPERIMENTS:
        sp = sub.add_parser(name, help=f"run the {name} experiment")
        sp.add_argument("--config", required=True, help="INI config file")
        sp.add_argument("--seed", type=int, default=None, help="override the seed")
        sp.add_argument("--out", default=None, help="override the output directory")
        sp.add_argument("--threads", type=int, default=None,
                        help=f"worker threads (default: ${THREADS_ENV} or CPU count)")
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return EXIT_BAD_CONFIG
    try:
        config = parse_config(args.config)
    except (ConfigError, OSError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    overrides = {"experiment": args.command}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["output_dir"] = args.out
    if args.threads is not None:
        overrides["threads"] = args.threads
    config = ExperimentConfig(
        profile=config.profile,
        experiment=overrides.get("experiment", config.experiment),
        parameters=config.parameters,
        seed=overrides.get("seed", config.seed),
        output_dir=overrides.get("output_dir", config.output_dir),
        threads=overrides.get("threads", config.threads),
    )
    try:
        manifest = run(config)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    except (DysonConvergenceError, np.linalg.LinAlgError, FloatingPointError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    for name, ok, detail in manifest.checks:
        print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    print(f"artifacts in {config.output_dir} ({len(manifest.artifacts)} files)")
    return EXIT_OK if manifest.passed else EXIT_CHECK_FAILED


if __name__ == "__main__":
    sys.exit(main())
