"""Reduced-size invariant suite behind ``omsqueeze selftest``.

Each check is a named function that raises AssertionError on failure. The
``perturb`` hook scales one module-level numeric constant for the duration of
the run, so a broken build can be simulated from the command line.
"""
from __future__ import annotations

import contextlib
import importlib
import time

import numpy as np
from scipy import constants

from . import budget, config, corrlab, homodyne, omcavity, qspace

CHECKS = []


def check(name):
    def deco(fn):
        CHECKS.append((name, fn))
        return fn
    return deco


def _close(a, b, tol, what):
    a, b = np.asarray(a), np.asarray(b)
    if not np.all(np.abs(a - b) <= tol):
        raise AssertionError(f"{what}: max deviation {np.max(np.abs(a - b)):.3g} exceeds {tol:.3g}")


def _random_psd_matrix(rng):
    a = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2)) * 0.1
    return qspace.SpectralMatrix(1.0, a @ a.conj().T + 0.01 * np.eye(2))


def _real_psd_matrix(rng):
    a = rng.normal(size=(2, 2))
    return qspace.SpectralMatrix(1.0, a @ a.T + 0.01 * np.eye(2))


# ---------------------------------------------------------------- qspace

@check("qspace.rotation_preserves_eigenvalues")
def _():
    rng = np.random.default_rng(1)
    for _ in range(50):
        s = _random_psd_matrix(rng)
        r = qspace.rotate(s, rng.uniform(-np.pi, np.pi))
        _close(np.linalg.eigvalsh(r.m), np.linalg.eigvalsh(s.m), 1e-10, "eigenvalues")


@check("qspace.projection_within_eigenvalues")
def _():
    rng = np.random.default_rng(2)
    for _ in range(50):
        s = _real_psd_matrix(rng)
        lo, hi = np.linalg.eigvalsh(s.m.real)
        p = qspace.project(s, rng.uniform(0, np.pi, 20))
        assert np.all(p >= lo - 1e-12) and np.all(p <= hi + 1e-12), "projection outside eigenvalue range"


@check("qspace.rotate_then_project_shifts_angle")
def _():
    rng = np.random.default_rng(3)
    for _ in range(50):
        s = _real_psd_matrix(rng)
        th, phi = rng.uniform(-np.pi, np.pi, 2)
        _close(qspace.project(qspace.rotate(s, th), phi), qspace.project(s, phi - th), 1e-10, "projection")


@check("qspace.extremal_recovers_rotation")
def _():
    rng = np.random.default_rng(4)
    for _ in range(50):
        a, b = np.sort(rng.uniform(0.1, 5, 2))
        if b - a < 1e-3:
            continue
        th = rng.uniform(0, np.pi)
        phi_min, p_min, _, _ = qspace.extremal_quadratures(qspace.rotate(qspace.diag(a, b), th))
        d = np.mod(phi_min - th + np.pi / 2, np.pi) - np.pi / 2
        _close(d, 0.0, 1e-9, "recovered angle")
        _close(p_min, a, 1e-12 * b, "minimum eigenvalue")


@check("qspace.db_round_trip")
def _():
    p = np.geomspace(1e-6, 1e6, 101)
    _close(qspace.db_to_psd(qspace.psd_to_db(p)) / p, 1.0, 1e-12, "round trip")


# ---------------------------------------------------------------- omcavity

FREQS = np.geomspace(1e3, 500e3, 200)


@check("omcavity.linewidth_closed_form")
def _():
    c = omcavity.CavityParams()
    finesse = 2 * np.pi / 550e-6
    _close(omcavity.linewidth_hwhm(c), constants.c / (4 * 0.01 * finesse), 1e-6, "HWHM linewidth")


@check("omcavity.escape_efficiency_table")
def _():
    _close(omcavity.escape_efficiency(omcavity.CavityParams()), 250 / 550, 1e-12, "escape efficiency")


@check("omcavity.purity_lossless")
def _():
    c = omcavity.CavityParams(t_in_ppm=0.0, loss_ppm=0.0)
    mode = omcavity.MechanicalMode(5e-11, 876.0, np.inf)
    s = omcavity.output_spectral_matrix(c, [mode], omcavity.EnvironmentParams(0.0), FREQS)
    _, lo, _, hi = qspace.extremal_quadratures_many(s)
    _close(lo * hi, 1.0, 1e-9, "uncertainty product")


@check("omcavity.heisenberg_bound_with_losses")
def _():
    c = omcavity.CavityParams()
    modes = config.defaults().mechanical_modes()
    s = omcavity.output_spectral_matrix(c, modes, omcavity.EnvironmentParams(0.0), FREQS)
    s.validate(rtol=1e-9, atol=1e-9)
    _, lo, _, hi = qspace.extremal_quadratures_many(s)
    assert np.all(lo * hi >= 1 - 1e-9), f"uncertainty product {np.min(lo * hi):.12g} below 1"


@check("omcavity.antisqueezing_grows_with_power")
def _():
    # above the optical-spring resonance of every power tested (171 kHz at 0.4 W);
    # below it the power-dependent spring stiffness dominates the response
    modes = config.defaults().mechanical_modes()
    env = omcavity.EnvironmentParams(0.0)
    maxima = []
    for p in (0.01, 0.05, 0.1, 0.2, 0.26, 0.4):
        s = omcavity.output_spectral_matrix(omcavity.CavityParams(p_circ=p), modes, env, 300e3)
        maxima.append(qspace.extremal_quadratures(s)[3])
    assert np.all(np.diff(maxima) > 0), f"antisqueezing not monotonic: {maxima}"


@check("omcavity.squeezing_before_detection")
def _():
    cfg = config.defaults()
    s = omcavity.output_spectral_matrix(cfg.cavity(), cfg.mechanical_modes(), cfg.environment(), 45e3)
    assert qspace.extremal_quadratures(s)[1] < 1, "no sub-shot quadrature at 45 kHz"


@check("omcavity.upper_crossing_stable")
def _():
    cfg = config.defaults()
    f = np.geomspace(10e3, 100e3, 60)
    s = omcavity.output_spectral_matrix(cfg.cavity(), cfg.mechanical_modes(), cfg.environment(), f)
    _, upper = omcavity.unit_crossings(s)
    assert np.all(np.isfinite(upper)), "squeezing missing somewhere in 10-100 kHz"
    span = np.degrees(np.ptp(upper))
    assert span < 2.0, f"upper unit crossing moves by {span:.3g} deg"


@check("omcavity.common_displacement_null")
def _():
    cfg = config.defaults()
    resp = omcavity.cavity_response(cfg.cavity(), cfg.mechanical_modes(), np.geomspace(10e3, 100e3, 40))
    null = np.degrees(resp.displacement_null())
    assert np.ptp(null) < 0.5, f"null quadrature drifts by {np.ptp(null):.3g} deg"
    th = resp.thermal_matrix(cfg.environment())
    at_null = qspace.project(th, np.radians(null.mean()))
    peak = np.max(qspace.project(th, np.radians(np.arange(0, 180, 2.0))), axis=0)
    assert np.all(at_null < 1e-2 * peak), "thermal noise not rejected at the null"


# ---------------------------------------------------------------- homodyne

BS2 = homodyne.BeamSplitter(0.035)


@check("homodyne.round_trip")
def _():
    rng = np.random.default_rng(5)
    for _ in range(50):
        e_s, e_lo, th = rng.uniform(0.1, 1), rng.uniform(0.1, 30), rng.uniform(0.05, 1.5)
        res = homodyne.resultant(homodyne.HomodyneGeometry(e_s, e_lo, th), BS2)
        lo_p, theta = homodyne.lo_power_for_quadrature(res.phi_s, res.detected_power, e_s, BS2, None)
        _close(lo_p, (BS2.r * e_lo) ** 2, 1e-8 * max(1.0, lo_p), "LO power")
        _close(theta, th, 1e-8, "LO angle")


@check("homodyne.shot_in_shot_out")
def _():
    eye = qspace.identity(np.array([1.0, 2.0]))
    for v in (0.0, 0.5, 0.93, 1.0):
        _close(homodyne.measured_psd_at(eye, np.linspace(0, np.pi, 7), BS2, v), 1.0, 1e-12, "shot level")


@check("homodyne.vacuum_floor_and_visibility")
def _():
    s = qspace.SpectralMatrix(1.0, np.diag([0.3, 4.0]))
    phis = np.linspace(0, np.pi, 13)
    full = homodyne.measured_psd_at(s, phis, BS2, 1.0)
    part = homodyne.measured_psd_at(s, phis, BS2, 0.8)
    assert np.all(full >= BS2.r**2), "below open-port floor"
    between = (np.minimum(full, 1) < part) & (part < np.maximum(full, 1))
    assert np.all(between | np.isclose(full, 1)), "reduced visibility not between ideal and shot"


@check("homodyne.quadrature_monotonic_in_theta")
def _():
    th = np.linspace(1e-3, np.pi / 2 - 1e-3, 200)
    phi = [homodyne.resultant(homodyne.HomodyneGeometry(0.008, 0.02, t), BS2).phi_s for t in th]
    assert np.all(np.diff(phi) > 0), "measurement quadrature not monotonic in LO angle"


@check("homodyne.shot_reference_closed_form")
def _():
    _close(homodyne.shot_noise_level(49e-6) / 1.829e-23, 1.0, 2e-3, "shot level at 49 uW")


# ---------------------------------------------------------------- budget

@check("budget.assemble_commutes")
def _():
    rng = np.random.default_rng(6)
    phis, freqs = np.radians([0.0, 10, 20]), np.array([1e4, 2e4])
    terms = [budget.NoiseTerm(str(i), phis, freqs, rng.uniform(0, 2, (3, 2))) for i in range(3)]
    a = budget.assemble(terms).grid
    b = budget.assemble(terms[::-1]).grid
    c = budget.assemble([budget.assemble(terms[:2], "ab"), terms[2]]).grid
    _close(a, b, 1e-12, "commutativity")
    _close(a, c, 1e-12, "associativity")


@check("budget.excess_loss_contraction")
def _():
    s = np.linspace(0.1, 5, 20)
    for eps in (0.0, 0.22, 0.7, 1.0):
        _close(np.abs(budget.apply_excess_loss(s, eps) - 1), (1 - eps) * np.abs(s - 1), 1e-12, "contraction")


@check("budget.loss_fit_exact")
def _():
    phis, freqs = np.radians(np.linspace(0, 30, 12)), np.geomspace(1e4, 1e5, 10)
    grid = 1 + 0.5 * np.sin(phis[:, None] - 0.2) ** 2 - 0.3 * np.cos(phis[:, None] - 0.2) ** 2 + 0 * freqs
    base = budget.NoiseTerm("b", phis, freqs, grid)
    for eps in (0.0, 0.22, 0.5, 0.8):
        got = budget.fit_excess_loss(budget.apply_excess_loss(base, eps), base)
        _close(got, eps, 1e-4, f"fitted loss for {eps}")


@check("budget.phase_noise_sin2")
def _():
    cfg = budget.BudgetConfig(np.radians([5.0, 12.3, 45.0, 90.0]), [1e4, 5e4],
                              phase_noise_ref=budget.PowerLaw(0.1, 3e4, -2.0))
    t = budget.phase_noise_term(cfg, cfg.phis)
    _close(t / t[-1], np.sin(cfg.phis)[:, None] ** 2 * np.ones((1, 2)), 1e-12, "sin^2 scaling")


@check("budget.contour_analytic")
def _():
    phis = np.radians(np.arange(-90, 90.01, 0.5))
    grid = 1 + 0.2 * np.sin(phis - 0.2) ** 2 - 0.1 * np.cos(phis - 0.2) ** 2
    term = budget.NoiseTerm("t", phis, [1e4], grid[:, None])
    con = budget.shot_noise_contour(term)
    d = np.arctan(np.sqrt(0.5))
    _close(np.degrees([con.lower[0], con.upper[0]]), np.degrees([0.2 - d, 0.2 + d]), 0.1, "crossings")


# ---------------------------------------------------------------- corrlab

@check("corrlab.c_r_round_trip")
def _():
    r = np.geomspace(1e-6, 1e6, 241)
    _close(corrlab.infer_relative_noise(corrlab.correlation_from_relative_noise(r)) / r, 1.0, 1e-12 * 1e6,
           "relative noise")
    c = np.linspace(-0.999, 0.999, 101)
    _close(corrlab.correlation_from_relative_noise(corrlab.infer_relative_noise(c)), c, 1e-12, "correlation")


@check("corrlab.efficiency_bounds")
def _():
    rng = np.random.default_rng(7)
    d = rng.uniform(0, 1, (2, 100))
    eta = corrlab.efficiency(d[0], d[1], rng.uniform(0, 4, 100))
    assert np.all((eta > 0) & (eta < 1)), "eta outside (0, 1) with dark noise"
    assert corrlab.efficiency(0.0, 0.0, 0.7) == 1.0, "eta != 1 without dark noise"


@check("corrlab.gain_independence_and_sign")
def _():
    cfg = corrlab.EstimatorConfig(segment_length=256)
    band = (lambda f: np.where((f > 20e3) & (f < 60e3), 0.5, 3.0))
    p = corrlab.synthesize_pair(band, 200e3, 256 * 400, seed=11)
    q = corrlab.TimeSeriesPair(p.fs, 3.7 * p.a, 0.2 * p.b)
    c1 = corrlab.correlate(p, cfg).c
    c2 = corrlab.correlate(q, cfg).c
    _close(c1, c2, 1e-9, "gain dependence")
    f = corrlab.welch_psd(p.a, p.fs, cfg)[0]
    inside = (f > 25e3) & (f < 55e3)
    outside = (f > 70e3) & (f < 95e3)
    assert np.mean(c1[inside] < 0) > 0.95 and np.mean(c1[outside] > 0) > 0.95, "sign test failed"


@check("corrlab.estimator_consistency")
def _():
    cfg = corrlab.EstimatorConfig(segment_length=128)
    for r in (0.5, 0.851, 1.0, 2.0, 4.0):
        cs = [np.mean(corrlab.correlate(corrlab.synthesize_pair(r, 1.0, 128 * 200, seed=s), cfg).c[2:-2])
              for s in range(10)]
        n_eff = 10 * 199 * 61
        err = (1 - ((r - 1) / (r + 1)) ** 2) / np.sqrt(n_eff)
        _close(np.mean(cs), (r - 1) / (r + 1), 3 * np.sqrt(2) * err + 1e-4, f"mean C at R={r}")


@check("config.round_trip")
def _():
    cfg = config.defaults()
    text = config.serialize(cfg)
    assert config.parse(text) == cfg and config.serialize(config.parse(text)) == text, "round trip differs"


# ---------------------------------------------------------------- runner

@contextlib.contextmanager
def perturbed(spec):
    """Scale ``module.NAME`` (in this package) by a factor, default 1.01."""
    if not spec:
        yield
        return
    target, _, factor = spec.partition("=")
    mod_name, _, attr = target.rpartition(".")
    mod = importlib.import_module(f"{__package__}.{mod_name}")
    old = getattr(mod, attr)
    setattr(mod, attr, old * float(factor or 1.01))
    try:
        yield
    finally:
        setattr(mod, attr, old)


def run(perturb=None, report=print):
    """Run every check; returns the list of failed check names."""
    failed = []
    start = time.perf_counter()
    with perturbed(perturb):
        for name, fn in CHECKS:
            t0 = time.perf_counter()
            try:
                fn()
            except Exception as exc:  # a crash is a failure of that invariant too
                failed.append(name)
                report(f"FAIL {name}: {exc}")
            else:
                report(f"pass {name} ({time.perf_counter() - t0:.2f} s)")
    report(f"{len(CHECKS) - len(failed)}/{len(CHECKS)} invariants hold in {time.perf_counter() - start:.1f} s")
    return failed
