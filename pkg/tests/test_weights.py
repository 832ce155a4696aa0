"""Weight bundle construction: damping, gain, exponent, thresholds."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from decaylab.coefficients import (ControlFunctions, exponential_forcing,
                                   make_controls)
from decaylab.moduli import (WeightBreakdown, linear_modulus, log_linear_modulus,
                             power_modulus)
from decaylab.weights import (ConstructionImpossible, GainFunction,
                              build_bundle, build_damping, build_exponent,
                              check_bundle_invariants, check_gain_ode,
                              compute_constants, gain_at_own_scale)


def controls_exp(phi_scale=2.0, phi_rate=1.0, psi_scale=1.0, psi_rate=1.0):
    """Closed-form controls phi, psi = scaled exponentials (exact norms)."""
    fn, cum, l1, unit = exponential_forcing(phi_scale, phi_rate)
    pf, pc, pl1, punit = exponential_forcing(psi_scale, psi_rate)
    return ControlFunctions(
        forcing=fn, oscillation=pf, forcing_l1=l1, forcing_unit=unit,
        oscillation_l1=pl1, oscillation_sup=psi_scale, oscillation_unit=punit,
        forcing_cumulative=cum, oscillation_cumulative=pc)


def demo_controls(osc_amp=0.035):
    grid = np.linspace(0.0, 12.0, 1201)
    return make_controls(2.36, 2.0, grid, osc_amp * np.exp(-grid), tail_tau=1.0)


# ---------------------------------------------------------------------------
# Damping
# ---------------------------------------------------------------------------

def test_damping_constant_forcing():
    # phi ~ 1 (rate -> 0 limit via tiny rate), alpha = 2: b = e^{-2t}
    ctrl = controls_exp(phi_scale=1.0, phi_rate=1e-9)
    grid = np.linspace(0.0, 3.0, 301)
    tab = build_damping(ctrl, 2.0, grid)
    assert np.max(np.abs(tab.damping - np.exp(-2.0 * grid))) <= 1e-7


def test_damping_exponential_forcing_closed_form():
    # phi = 2 e^{-t}, alpha = 2: b = exp(-4 (1 - e^{-t}))
    ctrl = controls_exp(2.0, 1.0)
    grid = np.arange(0, 5001) * 1e-3
    tab = build_damping(ctrl, 2.0, grid)
    for t in (0.0, 1.0, 5.0):
        i = int(round(t / 1e-3))
        assert abs(tab.damping[i] - math.exp(-4.0 * (1.0 - math.exp(-t)))) <= 1e-8


def test_damping_zero_alpha():
    ctrl = controls_exp()
    grid = np.linspace(0.0, 2.0, 201)
    tab = build_damping(ctrl, 1e-12, grid)
    assert np.max(np.abs(tab.damping - 1.0)) <= 1e-11
    assert tab.damping[0] == 1.0


def test_damping_monotone():
    ctrl = controls_exp()
    tab = build_damping(ctrl, 0.7, np.linspace(0.0, 4.0, 401))
    assert np.all(np.diff(tab.damping) < 0.0)


# ---------------------------------------------------------------------------
# Gain
# ---------------------------------------------------------------------------

def test_gain_at_zero_is_one():
    g = GainFunction(linear_modulus(), controls_exp(), gamma=4.0, t_max=5.0)
    assert g(0.0) == 1.0


def test_gain_closed_form_linear_modulus():
    # mu = s, psi = e^{-t}: gain(tau) = exp(gamma (1 - e^{-tau/gamma}))
    g = GainFunction(linear_modulus(), controls_exp(), gamma=4.0, t_max=5.0)
    tau = np.array([0.5, 1.0, 4.0, 10.0])
    exact = np.exp(4.0 * (1.0 - np.exp(-tau / 4.0)))
    assert np.max(np.abs(g(tau) - exact) / exact) <= 1e-6
    assert abs(g(4.0) - math.exp(4.0 * (1.0 - math.exp(-1.0)))) <= 1e-6


def test_gain_breakdown_sqrt_modulus():
    # gamma |psi|_L1 = 10 > sup = 2
    with pytest.raises(WeightBreakdown):
        GainFunction(power_modulus(0.5), controls_exp(), gamma=10.0, t_max=40.0)


def test_gain_breakdown_threshold_within_one_percent():
    # analytic threshold gamma |psi|_L1 = 2 for the sqrt modulus
    ctrl = controls_exp()   # psi = e^{-t}, |psi|_L1 = 1
    t_max = 45.0            # int_0^45 psi captures the full mass to 3e-20
    GainFunction(power_modulus(0.5), ctrl, gamma=1.98, t_max=t_max)  # builds
    with pytest.raises(WeightBreakdown) as exc:
        GainFunction(power_modulus(0.5), ctrl, gamma=2.02, t_max=t_max)
    assert abs(exc.value.sup_estimate - 2.0) <= 0.02


def test_gain_monotone_in_gamma():
    ctrl = demo_controls()
    mu = linear_modulus()
    t = np.linspace(1.0, 8.0, 30)
    prev = None
    for gamma in (10.0, 20.0, 40.0):
        vals = GainFunction(mu, ctrl, gamma, t_max=10.0).at_scaled(t)
        if prev is not None:
            assert np.all(vals >= prev)
        prev = vals


def test_gain_escapes_any_bound_for_divergent_modulus():
    # gain_gamma(gamma) -> inf: doubling search exceeds 1e3
    ctrl = controls_exp()
    mu = linear_modulus()
    gamma = 1.0
    while gain_at_own_scale(mu, ctrl, gamma) <= 1e3:
        gamma *= 2.0
        assert gamma < 2.0 ** 40
    assert gain_at_own_scale(mu, ctrl, gamma) > 1e3


@settings(max_examples=10, deadline=None)
@given(st.floats(min_value=0.5, max_value=30.0))
def test_gain_increasing_in_time(gamma):
    g = GainFunction(log_linear_modulus(), demo_controls(), gamma, t_max=10.0)
    vals = g.at_scaled(np.linspace(0.0, 10.0, 50))
    assert np.all(np.diff(vals) >= -1e-12)


# ---------------------------------------------------------------------------
# Exponent
# ---------------------------------------------------------------------------

def test_exponent_zero_at_origin():
    ctrl = controls_exp()
    grid = np.linspace(0.0, 2.0, 201)
    tab = build_damping(ctrl, 0.5, grid)
    expo, _ = build_exponent(tab, lambda t: np.ones_like(t))
    assert expo[0] == 0.0


def test_exponent_quadratic_surrogate():
    # phi ~ 1, b ~ 1, gain stub 1: exponent = t^2 / 2
    ctrl = controls_exp(phi_scale=1.0, phi_rate=1e-9)
    grid = np.arange(0, 1001) * 1e-3
    tab = build_damping(ctrl, 1e-12, grid)
    expo, rate = build_exponent(tab, lambda t: np.ones_like(t))
    assert np.max(np.abs(expo - grid ** 2 / 2.0)) <= 1e-6
    assert np.max(np.abs(rate - grid)) <= 1e-7


def test_exponent_linear_bound():
    # exponent <= gain_bound |phi| e^{alpha |phi|} t on the whole grid
    bundle = build_bundle(linear_modulus(), demo_controls(), lambda0=1.25,
                          mollifier_constant=1.0, alpha=0.2, t_max=12.0)
    audit = check_bundle_invariants(bundle)
    assert audit["passed"], audit


# ---------------------------------------------------------------------------
# Thresholds
# ---------------------------------------------------------------------------

def test_cutoff_matches_hand_computation():
    # mu = s, Lambda0 = 2, |psi|_inf = 1, C0 = 1, mu(1) = 1:
    # mu(1/xi^2) <= 1/32 forces xi >= sqrt(32)
    grid = np.linspace(0.0, 12.0, 1201)
    ctrl = make_controls(2.36, 2.0, grid, np.ones_like(grid), tail_tau=1.0)
    cst = compute_constants(linear_modulus(), ctrl, lambda0=2.0,
                            mollifier_constant=1.0, alpha=0.25)
    assert abs(cst.freq_cutoff_raw - math.sqrt(32.0)) <= 1e-9
    assert cst.freq_cutoff == max(cst.freq_cutoff_raw, cst.freq_floor)


def test_cutoff_floor_dominates_for_tiny_oscillation():
    # C0 -> floor and small psi: the dissipation condition is vacuous and
    # the explicit floor 2 Lambda0 |phi| e^{alpha |phi|} decides
    ctrl = demo_controls(osc_amp=1e-4)
    cst = compute_constants(linear_modulus(), ctrl, lambda0=1.25,
                            mollifier_constant=0.0, alpha=0.2)
    assert cst.freq_cutoff_raw == 1.0
    assert cst.freq_cutoff == cst.freq_floor


def test_constants_resubstitution():
    # the four defining inequalities hold verbatim at the returned values
    mu = linear_modulus()
    ctrl = demo_controls()
    lambda0, c0, alpha = 1.25, 1.0, 0.2
    cst = compute_constants(mu, ctrl, lambda0, c0, alpha)
    # dissipation condition at the cutoff (and monotone beyond it)
    assert mu(1.0 / cst.freq_cutoff ** 2) <= cst.cutoff_bound * (1.0 + 1e-12)
    for xi in (cst.freq_cutoff * 2.0, cst.freq_cutoff * 7.0):
        assert mu(1.0 / xi ** 2) <= cst.cutoff_bound
    # gain threshold condition at gamma_floor
    lhs = (mu(1.0) * cst.gamma_floor
           * gain_at_own_scale(mu, ctrl, cst.gamma_floor) * ctrl.forcing_unit)
    assert lhs >= cst.gamma_rhs * (1.0 - 1e-9)
    # the two explicit floors
    assert cst.freq_cutoff >= cst.freq_floor - 1e-12
    assert cst.gamma_floor >= cst.gamma_floor_requirement - 1e-12


def test_constants_rounding_up_to_grid():
    ctrl = demo_controls()
    cst = compute_constants(linear_modulus(), ctrl, 1.25, 1.0, 0.2,
                            xi_spacing=0.125)
    assert abs(cst.freq_cutoff / 0.125 - round(cst.freq_cutoff / 0.125)) <= 1e-9
    unrounded = compute_constants(linear_modulus(), ctrl, 1.25, 1.0, 0.2)
    assert cst.freq_cutoff >= unrounded.freq_cutoff - 1e-12


def test_construction_impossible_sqrt():
    grid = np.linspace(0.0, 12.0, 1201)
    ctrl = make_controls(2.36, 2.0, grid, np.ones_like(grid), tail_tau=1.0)
    with pytest.raises(ConstructionImpossible):
        compute_constants(power_modulus(0.5), ctrl, 2.0, 1.0, 0.25)


# ---------------------------------------------------------------------------
# Gain derivative identity
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("gamma", [4.0, 16.0])
def test_gain_ode_residual_linear_modulus(gamma):
    # mu = s, psi = e^{-t}: both sides have the closed form
    # gain'(gamma t) = gain(gamma t) e^{-t}; residual at dt = 1e-4
    g = GainFunction(linear_modulus(), controls_exp(), gamma, t_max=10.0)
    resid = check_gain_ode(g, 1.0, 10.0, dt=1e-4)
    assert resid <= 1e-4


def test_gain_ode_degenerate_floor():
    # constant-floor oscillation: gain ~ 1, both sides ~ 0
    grid = np.linspace(0.0, 12.0, 1201)
    ctrl = make_controls(2.36, 2.0, grid, np.zeros_like(grid), tail_tau=1.0)
    g = GainFunction(linear_modulus(), ctrl, gamma=4.0, t_max=10.0)
    resid = check_gain_ode(g, 1.0, 8.0, dt=1e-3)
    assert resid <= 1e-6


def test_gain_lower_bound_chain_strict():
    # derived chain rate >= mu(1) gain psi >= mu(1) gain(gamma) psi,
    # strict on [1, 10] at gamma = 2 gamma_floor
    bundle = build_bundle(linear_modulus(), demo_controls(), lambda0=1.25,
                          mollifier_constant=1.0, alpha=0.2, t_max=12.0,
                          gamma_factor=2.0)
    g = bundle.gain
    t = np.linspace(1.0, 10.0, 500)
    rate = g.rate_scaled(t)
    mu1 = 1.0
    lower1 = mu1 * g.at_scaled(t) * bundle.controls.oscillation(t)
    lower2 = mu1 * g.at_scaled(np.array([1.0]))[0] * bundle.controls.oscillation(t)
    assert np.all(rate > lower1 * (1.0 - 1e-12))
    assert np.all(lower1 > lower2 * (1.0 - 1e-12))


# ---------------------------------------------------------------------------
# Bundle assembly
# ---------------------------------------------------------------------------

def test_bundle_smoothing_scale():
    bundle = build_bundle(linear_modulus(), demo_controls(), lambda0=1.25,
                          mollifier_constant=1.0, alpha=0.2, t_max=12.0)
    xi0 = bundle.freq_cutoff
    assert bundle.smoothing_scale(0.0) == 1.0 / xi0 ** 2
    assert bundle.smoothing_scale(0.5 * xi0) == 1.0 / xi0 ** 2
    assert bundle.smoothing_scale(2.0 * xi0) == 1.0 / (2.0 * xi0) ** 2
    assert bundle.smoothing_scale(-2.0 * xi0) == 1.0 / (2.0 * xi0) ** 2


def test_bundle_serialization_roundtrip_fields():
    bundle = build_bundle(linear_modulus(), demo_controls(), lambda0=1.25,
                          mollifier_constant=1.0, alpha=0.2, t_max=12.0)
    d = bundle.as_dict()
    for key in ("alpha", "gamma", "freq_cutoff", "gamma_floor", "damping",
                "damped_forcing_cum", "exponent", "exponent_rate"):
        assert key in d
    assert len(d["damping"]) == len(bundle.grid)
