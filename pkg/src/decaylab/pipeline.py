"""Stage orchestration: modulus -> coefficient -> weights -> grid checks ->
evolution, with JSON/CSV artifacts and a deterministic summary.

summary.json is written with sorted keys and no timestamps, so identical
configs and seeds produce byte-identical output (the determinism contract
of the front end).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import carleman as carl
from .coefficients import (bump_kernel, coefficient_from_csv, coefficient_to_csv,
                           estimate_mollifier_constant, estimate_oscillation,
                           generate_coefficient, make_controls)
from .config import ExperimentConfig, config_to_dict
from .evolution import classify_decay, evolve, torus_frequencies, EvolutionProblem, h1_norm_sq
from .moduli import WeightBreakdown, osgood_classify, verify_modulus_axioms
from .weights import (ConstructionImpossible, build_bundle,
                      check_bundle_invariants, check_gain_ode)


@dataclass
class StageResult:
    name: str
    passed: bool
    detail: dict = field(default_factory=dict)


class PipelineState:
    """Mutable carrier of stage products (modulus, coefficient, bundles...)."""

    def __init__(self, cfg: ExperimentConfig, out_dir: Path):
        self.cfg = cfg
        self.out = out_dir
        self.mu = None
        self.coefficient = None
        self.controls = None
        self.mollifier_constant = None
        self.bundles = []
        self.results: list[StageResult] = []

    def record(self, result: StageResult):
        self.results.append(result)


def _coerce(obj):
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)!r}")


def _write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2, allow_nan=False,
                  default=_coerce)
        fh.write("\n")


def _finite(x):
    """JSON-safe float (summary files must stay parseable)."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------

def stage_modulus(state: PipelineState) -> StageResult:
    cfg = state.cfg
    state.mu = cfg.modulus.build()
    report = verify_modulus_axioms(state.mu, grid_size=256)
    verdict = osgood_classify(state.mu, depth=cfg.modulus.depth)
    _write_json(state.out / "modulus_verdict.json", {
        "family": state.mu.family,
        "axioms_passed": report.passed,
        "axioms": [{"name": c.name, "passed": c.passed,
                    "worst_violation": _finite(c.worst_violation)}
                   for c in report.checks],
        "verdict": {k: (_finite(v) if isinstance(v, float) else v)
                    for k, v in verdict.as_dict().items()
                    if k != "integral_table"},
        "integral_table": [[_finite(d), _finite(v)]
                           for d, v in verdict.integral_table],
    })
    ok = report.passed
    if cfg.strict and verdict.classification == "inconclusive":
        ok = False
    detail = {"classification": verdict.classification,
              "axioms_passed": report.passed,
              "growth_exponent": _finite(verdict.growth_exponent_estimate)}
    result = StageResult("modulus", ok, detail)
    state.record(result)
    return result


def stage_coefficient(state: PipelineState) -> StageResult:
    cfg = state.cfg
    cc = cfg.coefficient
    if cc.kind == "csv":
        a = coefficient_from_csv(cc.csv_path, cc.lambda0)
    else:
        a = generate_coefficient(state.mu, cc.lambda0, cfg.grid.t_max,
                                 cfg.seed, cc.levels, spacing=cc.spacing,
                                 amplitude=cc.amplitude,
                                 envelope_tau=cc.envelope_tau)
    state.coefficient = a
    psi_grid = np.linspace(0.0, cfg.grid.t_max,
                           int(round(cfg.grid.t_max / 1e-2)) + 1)
    psi = estimate_oscillation(a, state.mu, psi_grid)

    # smoothing constant on a finely sampled window
    if cc.kind == "csv":
        a_fine = a
    else:
        a_fine = generate_coefficient(state.mu, cc.lambda0, cc.fine_horizon,
                                      cfg.seed, cc.levels,
                                      spacing=cc.fine_spacing,
                                      amplitude=cc.amplitude,
                                      envelope_tau=cc.envelope_tau)
    stride = max(1, int(round(1e-3 / a_fine.spacing)))
    tg = a_fine.grid[::stride]
    psi_fine = estimate_oscillation(a_fine, state.mu, tg)
    scales = [e for e in cfg.carleman.mollifier_scales
              if e / a_fine.spacing >= 8.0]
    c0 = estimate_mollifier_constant(a_fine, state.mu, tg, psi_fine,
                                     bump_kernel(), scales)
    state.mollifier_constant = c0
    state.controls = make_controls(cfg.forcing.scale, cfg.forcing.rate,
                                   psi_grid, psi,
                                   tail_tau=cfg.forcing.oscillation_tail_tau,
                                   meta={"coefficient": a.meta.get("family")})
    coefficient_to_csv(a, state.out / "coefficient.csv")
    band_ok = (a.values.min() >= 1.0 / cc.lambda0 - 1e-12
               and a.values.max() <= cc.lambda0 + 1e-12)
    detail = {"band_ok": band_ok, "oscillation_sup": _finite(psi.max()),
              "oscillation_l1": _finite(state.controls.oscillation_l1),
              "mollifier_constant": _finite(c0)}
    result = StageResult("coefficient", band_ok, detail)
    state.record(result)
    return result


def stage_weights(state: PipelineState) -> StageResult:
    cfg = state.cfg
    try:
        bundles = [build_bundle(state.mu, state.controls,
                                cfg.coefficient.lambda0,
                                state.mollifier_constant, cfg.alpha,
                                t_max=cfg.grid.t_max, dt=cfg.grid.dt,
                                gamma_factor=f, xi_spacing=cfg.grid.xi_spacing)
                   for f in cfg.gamma_factors]
    except (WeightBreakdown, ConstructionImpossible) as exc:
        expected = cfg.expect == "breakdown"
        detail = {"breakdown": str(exc), "expected": expected}
        if isinstance(exc, WeightBreakdown):
            detail["sup_estimate"] = _finite(exc.sup_estimate)
        elif isinstance(exc.__cause__, WeightBreakdown):
            detail["sup_estimate"] = _finite(exc.__cause__.sup_estimate)
        result = StageResult("weights", expected, detail)
        state.record(result)
        return result
    if cfg.expect == "breakdown":
        result = StageResult("weights", False,
                             {"error": "breakdown expected but weights built"})
        state.record(result)
        return result
    state.bundles = bundles
    head = bundles[0]
    audit = check_bundle_invariants(head)
    ode_resid = check_gain_ode(head.gain, 1.0, min(10.0, cfg.grid.t_max),
                               dt=cfg.grid.dt, raise_above=math.inf)
    _write_json(state.out / "bundle.json", head.as_dict())
    ok = audit["passed"] and ode_resid <= 1e-3
    detail = {"gamma_floor": _finite(head.gamma_floor),
              "freq_cutoff": _finite(head.freq_cutoff),
              "gammas": [_finite(b.gamma) for b in bundles],
              "invariants_passed": audit["passed"],
              "gain_ode_residual": _finite(ode_resid)}
    result = StageResult("weights", ok, detail)
    state.record(result)
    return result


def stage_carleman(state: PipelineState) -> StageResult:
    cfg = state.cfg
    cl = cfg.carleman
    a = state.coefficient
    head = state.bundles[0]
    xi_vals = np.arange(0.0, cl.freq_span * head.freq_cutoff + cfg.grid.xi_spacing,
                        cfg.grid.xi_spacing)
    claim = carl.pointwise_claim_sweep(state.bundles, a, cl.claim_t_lo,
                                       cl.claim_t_hi, xi_vals,
                                       t_stride=cl.claim_stride)
    with open(state.out / "margins.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["gamma", "t", "xi", "margin_rel", "branch"])
        for row in claim.cells:
            writer.writerow([f"{row['gamma']:.9g}", f"{row['t']:.9g}",
                             f"{row['xi']:.9g}", f"{row['margin']:.6e}",
                             row["branch"]])

    lo, hi = cl.window
    grid = head.grid
    t_window = grid[(grid >= lo) & (grid <= hi)]
    fields = carl.random_test_fields(t_window, cfg.grid.length, cfg.grid.modes,
                                     cl.identity_fields, cfg.seed + 1)
    energy = [carl.energy_identity_residual(f, head, a) for f in fields]
    parts = [carl.parts_identity_residual(f, head) for f in fields]

    est_bundles = [b for b, f in zip(state.bundles, cfg.gamma_factors)
                   if f in cfg.estimate_gamma_factors]
    reports = carl.estimate_suite(est_bundles, a, t_window, cfg.grid.length,
                                  cfg.grid.modes, cl.estimate_fields,
                                  cfg.seed + 2, threads=cfg.threads)
    min_margin_rel = min(r.margin_rel for r in reports)
    all_passed = all(r.passed for r in reports)
    _write_json(state.out / "estimate_report.json", {
        "claim": {
            "min_margin_rel": _finite(claim.min_margin_rel),
            "branch_counts": claim.branch_counts,
            "certificate_failures": claim.certificate_failures,
            "gammas": [_finite(g) for g in claim.gamma_values],
            "worst_cell": {k: (_finite(v) if isinstance(v, float) else v)
                           for k, v in claim.worst_cell.items()},
        },
        "identities": {"energy_max": _finite(max(energy)),
                       "parts_max": _finite(max(parts))},
        "estimate": {"fields": cl.estimate_fields,
                     "min_margin_rel": _finite(min_margin_rel),
                     "all_passed": all_passed},
    })
    ok = (claim.min_margin_rel >= -carl.CLAIM_TOL
          and claim.certificate_failures == 0
          and max(energy) <= carl.IDENTITY_TOL
          and max(parts) <= carl.IDENTITY_TOL
          and all_passed)
    detail = {"claim_min_margin_rel": _finite(claim.min_margin_rel),
              "energy_residual_max": _finite(max(energy)),
              "parts_residual_max": _finite(max(parts)),
              "estimate_min_margin_rel": _finite(min_margin_rel),
              "estimate_all_passed": all_passed}
    result = StageResult("carleman", ok, detail)
    state.record(result)
    return result


def _random_low_mode_data(n_modes: int, length: float, rng) -> np.ndarray:
    # zero mode excluded: it carries no diffusion and would pin the rate at 0
    xi = torus_frequencies(length, n_modes)
    u0 = np.zeros(n_modes, dtype=complex)
    band = max(2, n_modes // 8)
    ks = rng.integers(1, band + 1, size=3) * rng.choice([-1, 1], size=3)
    u0[ks] = rng.normal(size=3) + 1j * rng.normal(size=3)
    norm = math.sqrt(h1_norm_sq(u0, xi, length))
    return u0 / norm


def stage_evolution(state: PipelineState) -> StageResult:
    cfg = state.cfg
    ev = cfg.evolution
    a = state.coefficient
    if a.horizon < ev.horizon:
        cc = cfg.coefficient
        if cc.kind == "csv":
            raise ValueError("csv coefficient shorter than the evolution horizon")
        a = generate_coefficient(state.mu, cc.lambda0, ev.horizon + 1.0,
                                 cfg.seed, cc.levels, spacing=cc.spacing,
                                 amplitude=cc.amplitude,
                                 envelope_tau=cc.envelope_tau)
    classifications = []
    first_report = None
    for i in range(ev.problems):
        rng = np.random.default_rng(cfg.seed + 100 + i)
        u0 = _random_low_mode_data(ev.modes, ev.length, rng)
        problem = EvolutionProblem(
            coefficient=a, initial_modes=u0, length=ev.length,
            forcing_budget=state.controls.forcing, policy=ev.policy,
            horizon=ev.horizon, seed=cfg.seed + 100 + i)
        report, _ = evolve(problem, ev.dt)
        classifications.append(classify_decay(report, ev.ladder))
        if first_report is None:
            first_report = report
    with open(state.out / "decay.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "h1_norm", "rate"])
        for t, h, r in zip(first_report.times, first_report.h1_norms,
                           first_report.rates):
            writer.writerow([f"{t:.9g}", f"{h:.9e}",
                             "nan" if math.isnan(r) else f"{r:.9e}"])
    if ev.plot:
        _write_decay_plot(state.out / "decay.svg", first_report)
    ok = all(c != "rapidly_decaying_suspect" for c in classifications)
    detail = {"classifications": classifications, "policy": ev.policy,
              "final_rate": _finite(first_report.rates[-1])}
    result = StageResult("evolution", ok, detail)
    state.record(result)
    return result


def _write_decay_plot(path: Path, report) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    with plt.rc_context({"svg.hashsalt": "decaylab"}):
        fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
        ax1.semilogy(report.times, np.maximum(report.h1_norms, 1e-320))
        ax1.set_ylabel("H1 norm")
        ax2.plot(report.times, report.rates)
        ax2.set_ylabel("decay rate")
        ax2.set_xlabel("t")
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------

_STAGES = {
    "modulus": stage_modulus,
    "coefficient": stage_coefficient,
    "weights": stage_weights,
    "carleman": stage_carleman,
    "evolution": stage_evolution,
}

_ORDER = ("modulus", "coefficient", "weights", "carleman", "evolution")


def run_pipeline(cfg: ExperimentConfig, out_dir) -> int:
    """Execute the enabled stages; 0 iff all enabled assertions pass
    (including an expected breakdown), partial artifacts retained on
    failure."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    state = PipelineState(cfg, out)
    failure = None
    breakdown_hit = False
    for name in _ORDER:
        if not cfg.stages.get(name, False):
            continue
        if breakdown_hit:
            break
        try:
            result = _STAGES[name](state)
        except Exception as exc:  # stage crash: retain artifacts, report cause
            state.record(StageResult(name, False, {"error": str(exc)}))
            failure = f"{name}: {exc}"
            break
        if name == "weights" and "breakdown" in result.detail:
            breakdown_hit = True
        if not result.passed:
            failure = f"{name}: assertions failed"
            break
    passed = failure is None
    summary = {
        "config": config_to_dict(cfg),
        "stages": {r.name: {"passed": r.passed, **r.detail}
                   for r in state.results},
        "passed": passed,
        "failure": failure,
    }
    _write_json(out / "summary.json", summary)
    return 0 if passed else 1
