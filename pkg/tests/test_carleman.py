"""Spectral field machinery, identities, claim sweep, integral estimate."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from decaylab.carleman import (ClaimCounterexample, DiscretizationError,
                               EstimateReport, SpaceTimeField, apply_weight,
                               carleman_estimate_report, energy_identity_residual,
                               estimate_suite, l2_norm_sq_grid, l2_norm_sq_modes,
                               materialize_field, parts_identity_residual,
                               pointwise_claim_sweep, product_rule_residual,
                               random_field_spec, random_test_fields,
                               time_derivative, torus_modes)
from decaylab.coefficients import (bump_kernel, estimate_mollifier_constant,
                                   estimate_oscillation, generate_coefficient,
                                   make_controls)
from decaylab.moduli import linear_modulus
from decaylab.weights import build_bundle

L_TORUS = 2.0 * np.pi * 8.0
XI_SPACING = 0.125
NX = 512


@pytest.fixture(scope="module")
def demo():
    """The linear-modulus demo experiment shared by the heavier checks."""
    mu = linear_modulus()
    horizon = 12.0
    a = generate_coefficient(mu, lambda0=1.25, horizon=horizon, seed=42,
                             levels=10, spacing=1e-3, amplitude=0.05,
                             envelope_tau=1.0)
    psi_grid = np.linspace(0.0, horizon, 1201)
    psi = estimate_oscillation(a, mu, psi_grid)
    a_fine = generate_coefficient(mu, lambda0=1.25, horizon=2.5, seed=42,
                                  levels=10, spacing=2e-5, amplitude=0.05,
                                  envelope_tau=1.0)
    tg = a_fine.grid[::50]
    c0 = estimate_mollifier_constant(a_fine, mu, tg,
                                     estimate_oscillation(a_fine, mu, tg),
                                     bump_kernel(), [2.0 ** -p for p in range(4, 11)])
    controls = make_controls(2.36, 2.0, psi_grid, psi, tail_tau=1.0)
    bundle = build_bundle(mu, controls, 1.25, c0, alpha=0.2, t_max=horizon,
                          dt=1e-3, xi_spacing=XI_SPACING)
    return {"mu": mu, "a": a, "controls": controls, "bundle": bundle, "c0": c0}


def window(bundle, lo=1.0, hi=3.5):
    g = bundle.grid
    return g[(g >= lo) & (g <= hi)]


# ---------------------------------------------------------------------------
# Field container and spectra
# ---------------------------------------------------------------------------

def test_field_rejects_support_violation():
    t = 1.0 + np.arange(101) * 1e-2
    vals = np.ones((101, 8), dtype=complex)
    with pytest.raises(ValueError):
        SpaceTimeField(t=t, length=L_TORUS, values=vals, support=(1.2, 1.8))


def test_field_rejects_window_before_one():
    t = 0.5 + np.arange(101) * 1e-2
    vals = np.zeros((101, 8), dtype=complex)
    with pytest.raises(ValueError):
        SpaceTimeField(t=t, length=L_TORUS, values=vals, support=(0.7, 1.2))


def test_parseval_grid_vs_modes():
    t = 1.0 + np.arange(201) * 1e-2
    fields = random_test_fields(t, L_TORUS, NX, 3, seed=5)
    for f in fields:
        phys = l2_norm_sq_grid(f)
        spec = l2_norm_sq_modes(f.spectrum(), f.length)
        scale = max(phys.max(), 1e-30)
        assert np.max(np.abs(phys - spec)) <= 1e-10 * scale


def test_time_derivative_fourth_order():
    t = np.arange(401) * 5e-3
    f = np.sin(3.0 * t)[:, None].astype(complex)
    d = time_derivative(f, 5e-3)
    exact = 3.0 * np.cos(3.0 * t)
    err = np.abs(d[:, 0] - exact)[2:-2].max()
    assert err <= 3.0 ** 5 * 5e-3 ** 4  # c * dt^4 * |f^(5)|


def test_generated_fields_are_band_limited():
    t = 1.0 + np.arange(201) * 1e-2
    for f in random_test_fields(t, L_TORUS, NX, 4, seed=17):
        power = np.abs(f.spectrum()) ** 2
        k = np.abs(np.fft.fftfreq(NX) * NX)
        assert power[:, k > NX // 8].sum() <= 1e-25 * power.sum()


# ---------------------------------------------------------------------------
# Weighted substitution
# ---------------------------------------------------------------------------

def test_apply_weight_identity_for_zero_exponent(demo):
    bundle = demo["bundle"]
    t = window(bundle, 1.0, 2.0)
    f = random_test_fields(t, L_TORUS, 64, 1, seed=3)[0]
    z = apply_weight(f, bundle)
    rows = np.round(t / bundle.spacing).astype(int)
    expo = bundle.exponent[rows]
    assert np.allclose(z.values, f.values * np.exp(expo)[:, None])
    assert z.support == f.support  # multiplication by a positive weight


def test_apply_weight_overflow_guard(demo):
    bundle = build_bundle(demo["mu"], demo["controls"], 1.25, demo["c0"],
                          alpha=0.2, t_max=12.0, dt=1e-3, gamma_factor=4.0,
                          xi_spacing=XI_SPACING)
    t = window(bundle, 1.0, 11.5)
    f = random_test_fields(t, L_TORUS, 64, 1, seed=3)[0]
    with pytest.raises(OverflowError, match="gamma"):
        apply_weight(f, bundle)


# ---------------------------------------------------------------------------
# Energy identity
# ---------------------------------------------------------------------------

def test_energy_identity_zero_field(demo):
    bundle = demo["bundle"]
    t = window(bundle)
    vals = np.zeros((len(t), 64), dtype=complex)
    f = SpaceTimeField(t=t, length=L_TORUS, values=vals,
                       support=(float(t[3]), float(t[-4])))
    assert energy_identity_residual(f, bundle, demo["a"]) == 0.0


def test_energy_identity_single_mode_oracle(demo):
    # v = g(t) e^{i xi_1 x}: the weighted residual norm reduces to
    # L int b e^{2 Phi} |g' + a xi_1^2 g|^2 dt, computed here with the
    # analytic bump derivative as an independent oracle.
    bundle = demo["bundle"]
    a = demo["a"]
    t = window(bundle)
    ta, tb = float(t[10]), float(t[-11])
    k1 = 16
    xi1 = k1 * 2.0 * np.pi / L_TORUS
    s = (2.0 * t - (ta + tb)) / (tb - ta)
    inside = np.abs(s) < 1.0
    g = np.zeros_like(t)
    g[inside] = np.exp(-1.0 / (1.0 - s[inside] ** 2))
    gp = np.zeros_like(t)
    gp[inside] = g[inside] * (-2.0 * s[inside] / (1.0 - s[inside] ** 2) ** 2) \
        * (2.0 / (tb - ta))
    x = np.arange(NX) * (L_TORUS / NX)
    f = SpaceTimeField(t=t, length=L_TORUS,
                       values=np.outer(g, np.exp(1j * xi1 * x)),
                       support=(ta, tb))
    resid = energy_identity_residual(f, bundle, a)
    assert resid <= 1e-3

    rows = np.round(t / bundle.spacing).astype(int)
    b = bundle.damping[rows]
    expo = bundle.exponent[rows]
    a_vals = a(t)
    oracle = f.dt * L_TORUS * np.sum(b * np.exp(2.0 * expo)
                                     * np.abs(gp + a_vals * xi1 ** 2 * g) ** 2)
    dt = f.dt
    xi = f.modes
    coeffs = f.spectrum()
    v_t = time_derivative(f.values, dt)
    v_xx = np.fft.ifft(coeffs * (-xi ** 2)[None, :] * f.nx, axis=1)
    lhs = dt * float(np.sum(b * np.exp(2.0 * expo) * (L_TORUS / NX)
                            * np.sum(np.abs(v_t - a_vals[:, None] * v_xx) ** 2, axis=1)))
    assert abs(lhs - oracle) / oracle <= 1e-3


def test_energy_identity_random_fields(demo):
    bundle = demo["bundle"]
    t = window(bundle)
    for f in random_test_fields(t, L_TORUS, NX, 5, seed=11):
        assert energy_identity_residual(f, bundle, demo["a"]) <= 1e-3


def test_energy_identity_flags_unresolved_band(demo):
    bundle = demo["bundle"]
    t = window(bundle)
    nx = 32
    x = np.arange(nx) * (L_TORUS / nx)
    ta, tb = float(t[10]), float(t[-11])
    s = (2.0 * t - (ta + tb)) / (tb - ta)
    g = np.where(np.abs(s) < 1.0, np.exp(-1.0 / np.maximum(1.0 - s ** 2, 1e-12)), 0.0)
    h = np.exp(1j * (2.0 * np.pi * (nx // 2 - 1) / L_TORUS) * x)  # top band
    f = SpaceTimeField(t=t, length=L_TORUS, values=np.outer(g, h), support=(ta, tb))
    with pytest.raises(DiscretizationError):
        energy_identity_residual(f, bundle, demo["a"])


# ---------------------------------------------------------------------------
# Integration-by-parts identity
# ---------------------------------------------------------------------------

def test_parts_identity_zero_field(demo):
    bundle = demo["bundle"]
    t = window(bundle)
    f = SpaceTimeField(t=t, length=L_TORUS,
                       values=np.zeros((len(t), 64), dtype=complex),
                       support=(float(t[3]), float(t[-4])))
    assert parts_identity_residual(f, bundle) == 0.0


def test_parts_identity_random_fields(demo):
    bundle = demo["bundle"]
    t = window(bundle)
    for f in random_test_fields(t, L_TORUS, NX, 5, seed=13):
        assert parts_identity_residual(f, bundle) <= 1e-3


def test_product_rule_residual_refines(demo):
    # the expansion of (b * rate)' matches its centered difference at
    # O(dt^2): 1e-4 at dt = 1e-4. Smooth closed-form controls isolate the
    # scheme (the measured-psi interpolant has kinks that dominate
    # pointwise finite differences at its own sample nodes).
    from decaylab.coefficients import ControlFunctions, exponential_forcing
    fn, cum, l1, unit = exponential_forcing(2.36, 2.0)
    pf, pc, pl1, punit = exponential_forcing(0.05, 1.0)
    smooth = ControlFunctions(forcing=fn, oscillation=pf, forcing_l1=l1,
                              forcing_unit=unit, oscillation_l1=pl1,
                              oscillation_sup=0.05, oscillation_unit=punit,
                              forcing_cumulative=cum, oscillation_cumulative=pc)
    fine = build_bundle(demo["mu"], smooth, 1.25, demo["c0"], alpha=0.2,
                        t_max=10.0, dt=1e-4, xi_spacing=XI_SPACING)
    assert product_rule_residual(fine, 1.0, 9.5) <= 1e-4
    # on the measured-psi bundle the identity is exact away from the
    # psi-sample kinks
    rough = build_bundle(demo["mu"], demo["controls"], 1.25, demo["c0"],
                         alpha=0.2, t_max=10.0, dt=1e-4, xi_spacing=XI_SPACING)
    kink = np.abs((rough.grid % 0.01)) < 2e-4
    kink |= np.abs((rough.grid % 0.01) - 0.01) < 2e-4
    sel = (rough.grid >= 1.0) & (rough.grid <= 9.5) & ~kink
    idx = np.nonzero(sel)[0]
    brate = rough.damping * rough.exponent_rate
    fd = (brate[idx + 1] - brate[idx - 1]) / (2.0 * rough.spacing)
    t = rough.grid[idx]
    expand = (rough.gamma * rough.gain.rate_scaled(t)
              * rough.damped_forcing_cum[idx]
              + rough.gain.at_scaled(t) * rough.damping[idx]
              * rough.controls.forcing(t))
    assert np.max(np.abs(fd - expand) / (1.0 + np.abs(fd))) <= 1e-4


def test_identity_richardson_slope(demo):
    # residuals shrink at order >= 1.8 across dt, dt/2, dt/4
    mu, controls, c0, a = demo["mu"], demo["controls"], demo["c0"], demo["a"]
    rng = np.random.default_rng(23)
    spec = random_field_spec(rng, 1.1, 3.2, L_TORUS, NX)
    res_e, res_p = [], []
    for dt in (8e-3, 4e-3, 2e-3):
        bundle = build_bundle(mu, controls, 1.25, c0, alpha=0.2, t_max=4.0,
                              dt=dt, xi_spacing=XI_SPACING)
        t = bundle.grid[(bundle.grid >= 1.0) & (bundle.grid <= 3.5)]
        f = materialize_field(spec, t, NX)
        res_e.append(energy_identity_residual(f, bundle, a))
        res_p.append(parts_identity_residual(f, bundle))
    slope_e = 0.5 * math.log2(res_e[0] / res_e[2])
    slope_p = 0.5 * math.log2(res_p[0] / res_p[2])
    assert slope_e >= 1.8
    assert slope_p >= 1.8


# ---------------------------------------------------------------------------
# Pointwise claim
# ---------------------------------------------------------------------------

def test_claim_zero_frequency_cell(demo):
    # xi = 0: the subtracted term vanishes and A = b rate^2 + gain term >= 0
    bundle = demo["bundle"]
    rep = pointwise_claim_sweep([bundle], demo["a"], 1.0, 5.0,
                                np.array([0.0]), t_stride=10)
    assert rep.min_margin_rel >= 1.0 - 1e-12  # sub == 0, so A == scale


def test_claim_branch_partition(demo):
    bundle = demo["bundle"]
    xi_vals = np.arange(0, int(4 * bundle.freq_cutoff / XI_SPACING) + 1) * XI_SPACING
    rep = pointwise_claim_sweep([bundle], demo["a"], 1.0, 10.0, xi_vals,
                                t_stride=10)
    n_cells = len(rep.cells)
    assert sum(rep.branch_counts.values()) == n_cells
    # every cell above the cutoff carries exactly one of the two high tags
    high = rep.cells[np.abs(rep.cells["xi"]) > bundle.freq_cutoff]
    assert set(np.unique(high["branch"])) <= {"quad", "gain"}
    low = rep.cells[np.abs(rep.cells["xi"]) <= bundle.freq_cutoff]
    assert set(np.unique(low["branch"])) == {"low"}
    assert rep.certificate_failures == 0


def test_claim_full_grid_nonnegative(demo):
    bundle1 = demo["bundle"]
    bundle2 = build_bundle(demo["mu"], demo["controls"], 1.25, demo["c0"],
                           alpha=0.2, t_max=12.0, dt=1e-3, gamma_factor=2.0,
                           xi_spacing=XI_SPACING)
    xi_vals = np.arange(0, int(4 * bundle1.freq_cutoff / XI_SPACING) + 1) * XI_SPACING
    rep = pointwise_claim_sweep([bundle1, bundle2], demo["a"], 1.0, 10.0,
                                xi_vals, t_stride=25)
    assert rep.min_margin_rel >= -1e-8
    assert rep.certificate_failures == 0
    assert rep.branch_counts["quad"] > 0 and rep.branch_counts["gain"] > 0


# ---------------------------------------------------------------------------
# The integral estimate
# ---------------------------------------------------------------------------

def test_estimate_zero_field(demo):
    bundle = demo["bundle"]
    t = window(bundle)
    f = SpaceTimeField(t=t, length=L_TORUS,
                       values=np.zeros((len(t), 64), dtype=complex),
                       support=(float(t[3]), float(t[-4])))
    rep = carleman_estimate_report(f, bundle, demo["a"])
    assert rep.lhs == 0.0 and rep.margin == 0.0 and rep.passed


def test_estimate_random_fields(demo):
    bundle = demo["bundle"]
    t = window(bundle)
    reports = estimate_suite([bundle], demo["a"], t, L_TORUS, NX, count=10,
                             seed=101)
    assert all(r.passed for r in reports)
    assert all(r.margin >= -1e-6 * r.lhs for r in reports)


def test_estimate_threads_deterministic(demo):
    bundle = demo["bundle"]
    t = window(bundle)
    seq = estimate_suite([bundle], demo["a"], t, L_TORUS, NX, 6, seed=7, threads=1)
    par = estimate_suite([bundle], demo["a"], t, L_TORUS, NX, 6, seed=7, threads=4)
    assert [r.margin for r in seq] == [r.margin for r in par]


@settings(max_examples=10, deadline=None)
@given(st.complex_numbers(min_magnitude=1e-3, max_magnitude=1e3,
                          allow_nan=False, allow_infinity=False))
def test_estimate_scaling_covariance(demo, c):
    # replacing v by c v scales all three terms by |c|^2
    bundle = demo["bundle"]
    t = window(bundle)
    f = random_test_fields(t, L_TORUS, 128, 1, seed=29)[0]
    base = carleman_estimate_report(f, bundle, demo["a"])
    scaled_field = SpaceTimeField(t=f.t, length=f.length, values=c * f.values,
                                  support=f.support)
    scaled = carleman_estimate_report(scaled_field, bundle, demo["a"])
    factor = abs(c) ** 2
    assert math.isclose(scaled.lhs, factor * base.lhs, rel_tol=1e-9)
    assert math.isclose(scaled.rhs_gradient_term, factor * base.rhs_gradient_term,
                        rel_tol=1e-9)
    assert math.isclose(scaled.rhs_zero_order_term,
                        factor * base.rhs_zero_order_term, rel_tol=1e-9)
    assert scaled.passed == base.passed
