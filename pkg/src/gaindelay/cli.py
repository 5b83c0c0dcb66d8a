"""Command-line front end: ``gaindelay <subcommand> [--config PATH] [--seed N] ...``.

Every subcommand reads one JSON run configuration, writes its artifacts to
the output directory and finishes with ``manifest.json``.  Exit codes:
0 success, 2 configuration error, 3 malformed input data, 4 numerical
failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time
import warnings
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__, analysis, clicks, io, magnus, nlfit
from . import propagator as prop
from .errors import (ConfigError, ExtractionError, GainDelayError, InputDataError,
                     NumericalPrecisionError, SolverError)
from .interferometry import (DetectionChain, Interferogram, Marginal, _default_axis,
                             coincidence_density_attenuated, coincidence_density_pure,
                             synthesize_histogram, thermal_attenuation_params,
                             thermal_coincidence_density)
from .jsa import JsaGrid
from .model import CrystalParams, PumpParams, _require, _Serializable

SCHEMA_VERSION = 1
THREADS_ENV = "GAINDELAY_THREADS"
EXIT_OK, EXIT_CONFIG, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3, 4
INTERFEROGRAM_MODELS = ("attenuated", "thermal", "pure")


@dataclass(frozen=True)
class RunOptions(_Serializable):
    """Subcommand options that are not physical parameters.

    ``gains`` turns ``jsa`` into a sweep and lists the gains for
    ``dynamics``.  With ``scale_power_with_gain`` the pump peak power of
    each swept gain is rescaled as eps^2, anchored on ``pump.gain``.
    """

    gains: list = field(default_factory=list)
    scale_power_with_gain: bool = True
    phase_threshold: float = 1e-3
    interferogram_model: str = "attenuated"
    visibility: float = 1.0 / 3.0
    delay: float | None = None  # ps; model delay without the BBO offset
    total_counts: float = 1e6
    poisson: bool = True
    gain_method: str = "lsq"
    dynamics_nz: int = 41

    def __post_init__(self):
        _require(isinstance(self.gains, list) and all(
            isinstance(g, (int, float)) and not isinstance(g, bool) and g >= 0 for g in self.gains),
            "must be a list of non-negative numbers", "gains")
        _require(isinstance(self.scale_power_with_gain, bool), "must be true or false",
                 "scale_power_with_gain")
        _require(0 < self.phase_threshold < 1, "must lie in (0, 1)", "phase_threshold")
        _require(self.interferogram_model in INTERFEROGRAM_MODELS,
                 f"must be one of {INTERFEROGRAM_MODELS}", "interferogram_model")
        _require(0 <= self.visibility <= 1, "must lie in [0, 1]", "visibility")
        _require(self.delay is None or math.isfinite(self.delay), "must be a finite number",
                 "delay")
        _require(self.total_counts > 0, "must be > 0", "total_counts")
        _require(isinstance(self.poisson, bool), "must be true or false", "poisson")
        _require(self.gain_method in ("lsq", "mle"), "must be 'lsq' or 'mle'", "gain_method")
        _require(isinstance(self.dynamics_nz, int) and self.dynamics_nz >= 2,
                 "must be an integer >= 2", "dynamics_nz")


@dataclass(frozen=True)
class RunConfig:
    crystal: CrystalParams
    pump: PumpParams
    detection: DetectionChain
    solver: prop.SolverSettings
    run: RunOptions
    seed: int = 0
    output_dir: str = "gaindelay-out"
    description: str = ""

    SECTIONS = {"crystal": CrystalParams, "pump": PumpParams, "detection": DetectionChain,
                "solver": prop.SolverSettings, "run": RunOptions}

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a JSON object", "config")
        allowed = set(cls.SECTIONS) | {"schema_version", "seed", "output_dir", "description"}
        for key in data:
            if key not in allowed:
                raise ConfigError("unknown key", key)
        version = data.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema version {version!r} "
                              f"(this tool reads {SCHEMA_VERSION})", "schema_version")
        parts = {name: kind.from_dict(data.get(name, {}), name)
                 for name, kind in cls.SECTIONS.items()}
        seed = data.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
            raise ConfigError("must be a non-negative integer", "seed")
        out = data.get("output_dir", "gaindelay-out")
        if not isinstance(out, str) or not out:
            raise ConfigError("must be a non-empty string", "output_dir")
        cfg = cls(seed=seed, output_dir=out, description=str(data.get("description", "")),
                  **parts)
        cfg.validate()
        return cfg

    def validate(self):
        """Cross-section checks that need more than one section."""
        if self.pump.gain > 0 and self.solver.chi3 and self.crystal.gamma_p > 0:
            _require(self.pump.peak_power > 0,
                     "chi3 is enabled with gamma_p > 0 but the pump has no peak power",
                     "pump.peak_power")
        try:
            prop._System(self.crystal, self.pump, self.solver) if self.pump.gain > 0 else None
        except ConfigError as exc:
            if exc.path and not exc.path.startswith("solver"):
                raise ConfigError(exc.message, f"solver.{exc.path}") from None
            raise

    def to_dict(self) -> dict:
        d = {name: getattr(self, name).to_dict() for name in self.SECTIONS}
        return {"schema_version": SCHEMA_VERSION, **d, "seed": self.seed,
                "output_dir": self.output_dir, "description": self.description}

    def digest(self) -> str:
        return hashlib.sha256(io.dumps_json(self.to_dict()).encode()).hexdigest()

    def pump_at(self, gain: float) -> PumpParams:
        """Pump for another gain, rescaling the peak power as eps^2 when configured."""
        p = self.pump
        if self.run.scale_power_with_gain and p.gain > 0:
            return p.replace(gain=float(gain), peak_power=p.peak_power * (gain / p.gain) ** 2)
        return p.replace(gain=float(gain))


def bundled_config_path() -> Path:
    return Path(str(resources.files("gaindelay") / "data" / "table-s1.json"))


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Read a run configuration; ``None`` selects the bundled reference scenario."""
    path = bundled_config_path() if path is None else Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read configuration ({exc.strerror})", str(path)) from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}",
                          str(path)) from None
    if isinstance(data, dict) and overrides:
        data = {**data, **overrides}
    return RunConfig.from_dict(data)


class Run:
    """Book-keeping for one subcommand: outputs, inputs, residuals, manifest."""

    def __init__(self, command: str, cfg: RunConfig, out: Path):
        self.command, self.cfg, self.out = command, cfg, out
        self.inputs: list[Path] = []
        self.outputs: list[Path] = []
        self.residuals: dict = {}
        self.results: dict = {}
        self.t0 = time.perf_counter()
        out.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        return self.out / name

    def wrote(self, paths):
        self.outputs.extend([paths] if isinstance(paths, Path) else paths)

    def add_residuals(self, label: str, residuals: dict):
        self.residuals[label] = dict(residuals)

    def _rel(self, p: Path) -> str:
        try:
            return str(Path(p).resolve().relative_to(self.out.resolve()))
        except ValueError:
            return str(p)

    def finish(self) -> Path:
        manifest = {
            "tool": "gaindelay", "version": __version__, "command": self.command,
            "config_sha256": self.cfg.digest(), "seed": self.cfg.seed,
            "inputs": [{"path": str(p), "sha256": io.sha256_file(p)} for p in self.inputs],
            "outputs": [{"path": self._rel(p), "sha256": io.sha256_file(p)}
                        for p in sorted(set(self.outputs), key=str)],
            "invariant_residuals": self.residuals,
            "results": self.results,
            "wall_time_s": time.perf_counter() - self.t0,
        }
        return io.write_json(self.path("manifest.json"), manifest)


def _save_amp_phase(jsa: JsaGrid, prefix: Path) -> list:
    hdr = ["rows: signal detuning index, columns: idler detuning index"]
    paths = jsa.save(prefix)
    paths.append(io.write_matrix(f"{prefix}_abs.csv", np.abs(jsa.amplitude),
                                 hdr + ["units: |J| in ps"]))
    paths.append(io.write_matrix(f"{prefix}_arg.csv", np.angle(jsa.amplitude),
                                 hdr + ["units: arg J in rad"]))
    return paths


def _numeric_jsa(cfg: RunConfig, pump: PumpParams):
    tm = prop.propagate(cfg.crystal, pump, cfg.solver)
    return tm, prop.jsa_from_transfer(tm)


def _delay_record(dec, threshold) -> dict:
    if dec.mean_photons == 0:
        return {"defined": False, "reason": "zero JSA: no pairs generated"}
    est = analysis.extract_delay_phase(dec.jsa, threshold)
    return {"defined": True, **est.to_dict()}


def cmd_jsa(run: Run):
    cfg = run.cfg
    tau = cfg.pump.pulse_duration
    grid = cfg.solver.grid(tau)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", magnus.TruncationWarning)
        ana = magnus.jsa_total(grid, tau, cfg.pump.gain)
    ana = prop.lab_frame_phase(ana, cfg.crystal)
    run.wrote(_save_amp_phase(ana, run.path("jsa_analytic")))

    tm, dec = _numeric_jsa(cfg, cfg.pump)
    run.add_residuals(f"gain={cfg.pump.gain!r}", tm.residuals)
    run.wrote(_save_amp_phase(dec.jsa, run.path("jsa_numeric")))

    r = dec.r
    lam = r**2 / np.sum(r**2) if np.sum(r**2) > 0 else np.zeros_like(r)
    keep = max(1, int(np.sum(r > 1e-12 * max(r.max(), 1e-300))))
    run.wrote(io.write_csv(run.path("schmidt.csv"),
                           ((k, r[k], math.sinh(r[k]) ** 2, lam[k]) for k in range(min(keep, 50))),
                           ["squeezing parameters r_k of the numerical output state",
                            "lambda_k = r_k^2 / sum r^2"],
                           ["k", "r_k", "sinh2_r_k", "lambda_k"]))
    schmidt = {"mean_photons": dec.mean_photons,
               "schmidt_number": float(1 / np.sum(lam**2)) if lam.any() else None}

    analytic = magnus.delay_analytic(cfg.crystal, cfg.pump)
    record = {"gain": cfg.pump.gain,
              "analytic": {"T": analytic.T, "beta": analytic.beta, "beta0": analytic.beta0,
                           "valid": analytic.valid},
              "numeric": _delay_record(dec, cfg.run.phase_threshold),
              "schmidt": schmidt, "units": {"T": "ps", "beta": "ps", "beta0": "ps"}}
    run.wrote(io.write_json(run.path("delay.json"), record))
    run.results["delay"] = record

    if cfg.run.gains:
        rows = []
        for g in cfg.run.gains:
            pump = cfg.pump_at(g)
            a = magnus.delay_analytic(cfg.crystal, pump)
            tm_g, dec_g = _numeric_jsa(cfg, pump)
            run.add_residuals(f"gain={g!r}", tm_g.residuals)
            num = _delay_record(dec_g, cfg.run.phase_threshold)
            rows.append((g, a.T, num.get("T", float("nan")), num.get("uncertainty", float("nan")),
                         dec_g.mean_photons, pump.peak_power))
        run.wrote(io.write_csv(run.path("sweep.csv"), rows,
                               ["delays in ps; peak power in W",
                                "T_numeric is the phase-gradient estimate (nan when undefined)"],
                               ["gain", "T_analytic_ps", "T_numeric_ps", "T_numeric_err_ps",
                                "mean_photons", "peak_power_W"]))


def cmd_dynamics(run: Run):
    cfg = run.cfg
    gains = cfg.run.gains or [cfg.pump.gain]
    rows = []
    for g in gains:
        pump = cfg.pump_at(g)
        dm = prop.pulse_dynamics(cfg.crystal, pump, cfg.solver, n_z=cfg.run.dynamics_nz)
        run.add_residuals(f"gain={g!r}", dm.metadata["invariant_residuals"])
        run.wrote(dm.save(run.path(f"dynamics_gain{g:g}")))
        photons = float(dm.totals("signal")[-1])
        delay = dm.exit_delay() if photons > 0 else float("nan")
        rows.append((g, photons, delay, dm.metadata["beta0_ps"]))
    run.wrote(io.write_csv(run.path("dynamics_summary.csv"), rows,
                           ["exit delay: signal minus idler centroid at the exit facet (ps)"],
                           ["gain", "photons_signal", "exit_delay_ps", "beta0_ps"]))
    run.results["exit_delays"] = {f"{g:g}": d for g, _, d, _ in rows}


def _interferogram_density(cfg: RunConfig) -> Interferogram:
    o, tau = cfg.run, cfg.pump.pulse_duration
    T = o.delay if o.delay is not None else magnus.delay_analytic(cfg.crystal, cfg.pump).T
    axis = _default_axis(tau)
    if o.interferogram_model == "attenuated":
        return coincidence_density_attenuated(Marginal.gaussian(tau), T, o.visibility, axis)
    if o.interferogram_model == "thermal":
        p = thermal_attenuation_params(cfg.pump.gain, cfg.detection.efficiency)
        m = Marginal.gaussian(tau)
        return thermal_coincidence_density(m, m, T, p.lam, axis)
    if cfg.pump.gain == 0:
        raise ConfigError("the pure-state model needs a non-zero gain", "pump.gain")
    _, dec = _numeric_jsa(cfg, cfg.pump)
    return coincidence_density_pure(dec.jsa)


def cmd_interferogram(run: Run):
    cfg = run.cfg
    dens = _interferogram_density(cfg)
    hist = synthesize_histogram(dens, cfg.detection, cfg.run.total_counts, seed=cfg.seed,
                                poisson=cfg.run.poisson)
    run.wrote(hist.save(run.path("histogram")))
    run.results["density"] = dict(dens.metadata)


def cmd_extract(run: Run, source: Path):
    cfg = run.cfg
    run.inputs += [source.with_suffix(".csv"), source.with_suffix(".json")]
    hist = Interferogram.load(source)
    est = analysis.extract_delay_fft(hist, cfg.detection)
    vis = analysis.fit_visibility(hist, est.T, cfg.detection)
    record = {**est.to_dict(), "visibility_fit": vis.visibility,
              "visibility_fit_uncertainty": vis.uncertainty,
              "T_BBO_offset": cfg.detection.T_BBO_offset,
              "units": {"T": "ps", "uncertainty": "ps", "sideband_separation": "ps"}}
    run.wrote(io.write_json(run.path("delay.json"), record))
    run.results["delay"] = record


def cmd_gain(run: Run, source: Path):
    cfg = run.cfg
    run.inputs.append(source)
    obs = clicks.ClickStats.load(source)
    if obs.n_modes != 4:
        raise InputDataError(f"expected 4-detector patterns, found {obs.n_modes} bits", source)
    eta = cfg.detection.efficiency
    est = clicks.estimate_gain(obs, eta, method=cfg.run.gain_method)
    record = {"gain": est.eps, "residual": est.residual, "degenerate": est.degenerate,
              "method": est.method, "efficiency": eta, "shots": obs.shots,
              "mean_photons": float(magnus.mean_pairs(est.eps))}
    run.wrote(io.write_json(run.path("gain.json"), record))
    run.results["gain"] = record


def cmd_spmfit(run: Run, sources: list[Path]):
    cfg = run.cfg
    spectra = []
    for src in sources:
        run.inputs.append(src)
        spectra.append(nlfit.read_spectrum(src, cfg.pump.center_wavelength))
    res = nlfit.fit_gamma_p(spectra, cfg.pump, cfg.crystal)
    fitted = cfg.crystal.replace(gamma_p=res.gamma_p)
    pcr = nlfit.critical_power(fitted, cfg.pump)
    pmax = max(s.peak_power for s in spectra)
    zsf = nlfit.self_focusing_distance(fitted, cfg.pump, pmax)
    record = {**res.to_dict(), "critical_power_W": pcr.P_cr, "n2_m2_per_W": pcr.n2,
              "self_focusing_distance_mm": zsf.distance, "at_peak_power_W": pmax,
              "inputs": [str(s) for s in sources]}
    run.wrote(io.write_json(run.path("spmfit.json"), record))
    for (p, curve), s in zip(res.curves, spectra):
        lam = nlfit.detuning_to_wavelength(s.detunings, cfg.pump.center_wavelength)
        run.wrote(io.write_csv(run.path(f"spmfit_model_P{p:g}.csv"), zip(lam, curve),
                               [f"peak_power_W = {p!r}", "model intensity at the fitted gamma_p"],
                               ["wavelength_nm", "intensity"]))
    run.results["spmfit"] = {"gamma_p": res.gamma_p, "residual": res.residual}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None,
                        help="run configuration (JSON); default: bundled table-s1.json")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--out", type=Path, default=None, help="output directory")
    common.add_argument("--threads", type=int, default=None,
                        help=f"BLAS threads (default: ${THREADS_ENV} or library default)")
    ap = argparse.ArgumentParser(prog="gaindelay", parents=[common],
                                 description="High-gain SPDC group-delay simulation and analysis.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("jsa", parents=[common], help="analytic and numerical JSA, delays, sweep")
    sub.add_parser("dynamics", parents=[common], help="photon-density maps along the crystal")
    sub.add_parser("interferogram", parents=[common], help="synthetic coincidence histogram")
    p = sub.add_parser("extract", parents=[common], help="delay from a histogram")
    p.add_argument("input", type=Path, help="histogram prefix (or its .csv)")
    p = sub.add_parser("gain", parents=[common], help="gain from click statistics")
    p.add_argument("input", type=Path, help="click patterns (JSON or two-column CSV)")
    p = sub.add_parser("spmfit", parents=[common], help="gamma_p from pump spectra")
    p.add_argument("inputs", type=Path, nargs="+", help="spectrum CSV files")
    return ap


def _threads(flag) -> int | None:
    if flag is not None:
        if flag < 1:
            raise ConfigError("must be >= 1", "--threads")
        return flag
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"not an integer: {env!r}", THREADS_ENV) from None
        if n < 1:
            raise ConfigError("must be >= 1", THREADS_ENV)
        return n
    return None


def _dispatch(args, run: Run):
    cmd = args.command
    if cmd == "jsa":
        cmd_jsa(run)
    elif cmd == "dynamics":
        cmd_dynamics(run)
    elif cmd == "interferogram":
        cmd_interferogram(run)
    elif cmd == "extract":
        src = args.input.with_suffix("") if args.input.suffix == ".csv" else args.input
        cmd_extract(run, src)
    elif cmd == "gain":
        cmd_gain(run, args.input)
    elif cmd == "spmfit":
        cmd_spmfit(run, list(args.inputs))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        overrides = {} if args.seed is None else {"seed": args.seed}
        cfg = load_config(args.config, overrides)
        out = args.out if args.out is not None else Path(cfg.output_dir)
        threads = _threads(args.threads)
        run = Run(args.command, cfg, out)
        with threadpool_limits(limits=threads):
            _dispatch(args, run)
        run.finish()
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InputDataError as exc:
        print(f"input data error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (SolverError, NumericalPrecisionError, ExtractionError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except GainDelayError as exc:  # pragma: no cover - every subclass is mapped above
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
