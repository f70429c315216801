"""End-to-end pipelines behind the command-line interface."""
from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import analysis, csvio, lli, msgate, runner
from . import quantum as qc
from .config import PipelineConfig

log = logging.getLogger(__name__)

# published reference values the presets compare against
PAPER_TABLE_SIGMA = {"c_x_minus_y": 9.2e-19, "c_xy": 4.8e-19, "c_xz": 2.1e-19, "c_yz": 2.2e-19}
PAPER_TOTAL_SIGMA = 3.4e-3  # Hz
PAPER_ALLAN = {"entangled": 1.72, "mixed": 3.54}  # Hz sqrt(s)
PAPER_GATE_DROP = 0.025
PRESETS = ("paper-table", "paper-allan", "paper-gate")


@dataclass
class Comparison:
    quantity: str
    produced: float
    reference: float
    tolerance: str
    passed: bool

    def as_dict(self):
        return {"quantity": self.quantity, "produced": self.produced, "reference": self.reference,
                "tolerance": self.tolerance, "pass": bool(self.passed)}


# -- gate ----------------------------------------------------------------

def gate_dynamics(cfg: PipelineConfig, out: Path) -> dict:
    """Population dynamics of the calibrated gate; writes ``gate_dynamics.csv``."""
    gcfg = msgate.calibrate_gate(cfg.gate_config())
    traj = msgate.propagate(msgate.initial_ket(gcfg), gcfg, gcfg.gate_time, n_samples=cfg.gate.n_samples)
    rows = []
    for t, k in zip(traj.times, traj.states):
        p = msgate.gate_populations(k)
        rows.append((t * 1e6, p["SS"], p["SD"] + p["DS"], p["DD"]))
    csvio._write(out / "gate_dynamics.csv", ("time_us", "p_ss", "p_mix", "p_dd"), rows)
    exact = msgate.exact_state(msgate.initial_ket(gcfg), gcfg, gcfg.gate_time)
    final = msgate.gate_populations(traj.states[-1])
    return {"gate_config": gcfg, "p_ss": final["SS"], "p_dd": final["DD"],
            "transient": final["SD"] + final["DS"],
            "oracle_fidelity": qc.fidelity(exact, traj.states[-1]),
            "rows": rows}


def gate_noise_budget(gcfg: msgate.GateConfig, rms: float, shots: int, seed: int) -> dict:
    base = msgate.gate_fidelity(msgate.exact_state(msgate.initial_ket(gcfg), gcfg, gcfg.gate_time))
    noisy = msgate.intensity_noise_fidelity(gcfg, rms, shots=shots, rng_seed=seed)
    return {"noiseless": base.estimate, "noisy": noisy.estimate, "drop": base.estimate - noisy.estimate}


# -- campaign ------------------------------------------------------------

def simulate(cfg: PipelineConfig, out: Path, seed: int | None = None) -> runner.RunLog:
    seed = cfg.pipeline.seed if seed is None else seed
    rl = runner.run_campaign(cfg.run, cfg.tensor, cfg.frame, cfg.environment, seed)
    csvio.write_runlog(out, rl)
    return rl


@dataclass
class AnalysisResult:
    series: analysis.FrequencySeries
    corrected: analysis.FrequencySeries
    binned: analysis.BinnedSeries
    allan: analysis.AllanCurve
    fit: analysis.FitResult
    bounds: analysis.CmnBounds


def analyze_records(records, field_log, trap_log, cfg: PipelineConfig) -> AnalysisResult:
    a = cfg.analysis
    series = analysis.frequency_series(records, a.amplitude_window, cfg.environment.decay)
    corrected = analysis.correct_systematics(series, field_log, trap_log, cfg.environment.zeeman,
                                             cfg.environment.quadrupole, a.max_log_gap)
    allan = analysis.allan_deviation(corrected, overlapping=a.overlapping_allan)
    binned = analysis.bin_series(corrected, a.bin_width)
    fit = analysis.fit_sidereal(binned, cfg.frame)
    bounds = analysis.invert_to_cmn(fit, lli.design_matrix(cfg.frame))
    return AnalysisResult(series, corrected, binned, allan, fit, bounds)


def write_analysis(res: AnalysisResult, cfg: PipelineConfig, out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    csvio.write_series(out / "frequency_series.csv", res.corrected)
    csvio.write_series(out / "binned_series.csv", res.binned)
    csvio.write_allan(out / "allan.csv", res.allan)
    extra = {"allan_prefactor_hz_sqrt_s": res.allan.prefactor, "allan_exponent": res.allan.exponent,
             "n_blocks": len(res.series), "n_bins": len(res.binned),
             "skipped_blocks": len(res.series.skipped),
             "uncorrected_blocks": int(np.sum(~res.corrected.zeeman_corrected))}
    (out / "fit_report.json").write_text(
        analysis.fit_report(res.fit, res.bounds, cfg.frame, extra) + "\n", encoding="utf-8")
    (out / "cmn_table.txt").write_text(res.bounds.table() + "\n", encoding="utf-8")
    return extra


# -- presets -------------------------------------------------------------

def _within_factor(x, ref, k):
    return ref / k <= x <= ref * k


def preset_paper_table(cfg: PipelineConfig, out: Path, seed: int) -> list[Comparison]:
    """Zero-tensor campaign at the published total uncertainty, plus a C_XZ injection."""
    shots = runner.shots_for_total_uncertainty(PAPER_TOTAL_SIGMA, cfg.run, cfg.environment)
    run_cfg = replace(cfg.run, block=replace(cfg.run.block, shots_per_point=shots))
    cfg = replace(cfg, run=run_cfg)
    rl = runner.run_campaign(run_cfg, lli.CTensor(), cfg.frame, cfg.environment, seed)
    csvio.write_runlog(out / "zero_tensor", rl)
    res = analyze_records(rl.records, rl.field_log, rl.trap_log, cfg)
    write_analysis(res, cfg, out / "zero_tensor")
    comps = [Comparison("shots_per_point", shots, math.nan, "derived", True),
             Comparison("total_sigma_hz", float(res.fit.sigma[0]), PAPER_TOTAL_SIGMA, "x2",
                        _within_factor(res.fit.sigma[0], PAPER_TOTAL_SIGMA, 2))]
    for name, s in zip(lli.COMPONENTS, res.bounds.sigma):
        ref = PAPER_TABLE_SIGMA[name]
        comps.append(Comparison(f"sigma_{name}", float(s), ref, "x2", _within_factor(s, ref, 2)))
    inj = lli.CTensor(c_xz=1e-18)
    rl2 = runner.run_campaign(run_cfg, inj, cfg.frame, cfg.environment, seed + 1)
    res2 = analyze_records(rl2.records, rl2.field_log, rl2.trap_log, cfg)
    write_analysis(res2, cfg, out / "injected_cxz")
    i = lli.COMPONENTS.index("c_xz")
    v, s = res2.bounds.values[i], res2.bounds.sigma[i]
    comps.append(Comparison("injected_c_xz", float(v), 1e-18, "2 sigma", abs(v - 1e-18) <= 2 * s))
    return comps


def preset_paper_allan(cfg: PipelineConfig, out: Path, seed: int) -> list[Comparison]:
    prefs = {}
    for k, scheme in enumerate(("entangled", "mixed")):
        run_cfg = replace(cfg.run, scheme=scheme)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", runner.ServoHoldWarning)
            rl = runner.run_campaign(run_cfg, lli.CTensor(), cfg.frame, cfg.environment, seed + k)
        series = analysis.frequency_series(rl.records, cfg.analysis.amplitude_window, cfg.environment.decay)
        series = analysis.correct_systematics(series, rl.field_log, rl.trap_log, cfg.environment.zeeman,
                                              cfg.environment.quadrupole, cfg.analysis.max_log_gap)
        allan = analysis.allan_deviation(series, overlapping=cfg.analysis.overlapping_allan)
        csvio.write_allan(out / f"allan_{scheme}.csv", allan)
        prefs[scheme] = allan
    comps = []
    for scheme, curve in prefs.items():
        ref = PAPER_ALLAN[scheme]
        comps.append(Comparison(f"prefactor_{scheme}", curve.prefactor, ref, "15%",
                                abs(curve.prefactor / ref - 1) <= 0.15))
        comps.append(Comparison(f"exponent_{scheme}", curve.exponent, -0.5, "+-0.05",
                                abs(curve.exponent + 0.5) <= 0.05))
    ratio = prefs["mixed"].prefactor / prefs["entangled"].prefactor
    comps.append(Comparison("prefactor_ratio", ratio, 2.0, "+-0.2", abs(ratio - 2.0) <= 0.2))
    return comps


def preset_paper_gate(cfg: PipelineConfig, out: Path, seed: int) -> list[Comparison]:
    g = gate_dynamics(cfg, out)
    budget = gate_noise_budget(g["gate_config"], cfg.gate.intensity_rms, cfg.gate.noise_shots, seed)
    return [
        Comparison("p_ss_at_gate_time", g["p_ss"], 0.5, "+-0.01", abs(g["p_ss"] - 0.5) <= 0.01),
        Comparison("p_dd_at_gate_time", g["p_dd"], 0.5, "+-0.01", abs(g["p_dd"] - 0.5) <= 0.01),
        Comparison("transient_population", g["transient"], 0.0, "<=0.02", g["transient"] <= 0.02),
        Comparison("intensity_noise_fidelity_drop", budget["drop"], PAPER_GATE_DROP, "+-0.01",
                   abs(budget["drop"] - PAPER_GATE_DROP) <= 0.01),
    ]


def reproduce(preset: str, cfg: PipelineConfig, out: Path, seed: int | None = None) -> dict:
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
    seed = cfg.pipeline.seed if seed is None else seed
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    fn = {"paper-table": preset_paper_table, "paper-allan": preset_paper_allan,
          "paper-gate": preset_paper_gate}[preset]
    comps = fn(cfg, out, seed)
    log.info("preset %s finished in %.1f s", preset, time.perf_counter() - t0)
    summary = {"preset": preset, "seed": seed, "comparisons": [c.as_dict() for c in comps],
               "all_pass": all(c.passed for c in comps)}
    csvio.write_json(out / "summary.json", summary)
    return summary
