"""Acceptance criteria, one test each, with a PASS/FAIL summary line per criterion.

Run with pytest (lines appear under "acceptance criteria" in the terminal
summary) or directly as a script.
"""

import math
import sys
import time

import numpy as np
import pytest
from scipy.linalg import null_space
from scipy.optimize import minimize

import conftest
from ftfsim import dynamics as dyn
from ftfsim.calibration import tune_up_pipeline
from ftfsim.circuit import build_composite, diagonalize_fluxonium
from ftfsim.pulses import FastDragSpec, band_matrix, gn_fourier, pulse_spectrum, solve_fast_drag
from ftfsim.spectrum import conditional_transitions, residual_zz, simulate_zz_ramsey, zz_sweep
from oracles import gn_quadrature, process_fidelity_grid


class _Criterion:
    """Collects sub-checks, times the block and records one summary line."""

    def __init__(self, number, title):
        self.number, self.title = number, title
        self.checks = []

    def check(self, name, ok, detail=""):
        self.checks.append((name, bool(ok), detail))

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.perf_counter() - self.start
        if exc_type is not None:
            self.checks.append(("no exception", False, f"{exc_type.__name__}: {exc}"))
        ok = all(c[1] for c in self.checks)
        line = f"[{'PASS' if ok else 'FAIL'}] {self.number}. {self.title} ({elapsed:.1f} s) | " + "; ".join(
            f"{'ok' if good else 'FAILED'} {n} ({d})" for n, good, d in self.checks)
        conftest.ACCEPTANCE_LINES.append(line)
        print(line)
        for n, good, d in self.checks:
            print(f"    {'ok  ' if good else 'FAIL'} {n}: {d}")
        return False

    def verdict(self):
        failed = [f"{n}: {d}" for n, good, d in self.checks if not good]
        assert not failed, "; ".join(failed)


# ---------------------------------------------------------------- 1

def test_criterion_1_spectrum_reproduction():
    with _Criterion(1, "spectrum reproduction") as c:
        t0 = time.perf_counter()
        sys_ = build_composite()
        tr = conditional_transitions(sys_)
        f01 = {}
        for name, p in (("F1", sys_.params["f1"]), ("F2", sys_.params["f2"])):
            e, _, _ = diagonalize_fluxonium(p)
            f01[name] = 1e3 * (e[1] - e[0])
        elapsed = time.perf_counter() - t0
        for name, target in (("F1", 98.95), ("F2", 144.0)):
            c.check(f"{name} f01 within 3 MHz of {target}", abs(f01[name] - target) <= 3.0,
                    f"{f01[name]:.2f} MHz")
        c.check("coupler f_11 within 50 MHz of 4.58 GHz", abs(tr.f_11 - 4.58) <= 0.05, f"{tr.f_11:.4f} GHz")
        vals = tr.as_dict()
        c.check("four transitions in [4.5, 4.9] GHz", all(4.5 <= v <= 4.9 for v in vals.values()),
                ", ".join(f"f_{k}={v:.4f}" for k, v in vals.items()))
        c.check("runtime < 10 s", elapsed < 10.0, f"{elapsed:.2f} s")
    c.verdict()


# ---------------------------------------------------------------- 2

def test_criterion_2_residual_zz():
    with _Criterion(2, "residual ZZ") as c:
        chi = residual_zz(build_composite())
        c.check("|chi_ZZ| < 0.1 kHz at device point", abs(chi) < 0.1, f"{chi * 1e3:.2f} Hz")
        t0 = time.perf_counter()
        res = zz_sweep(resolution=(20, 20))
        elapsed = time.perf_counter() - t0
        c.check("20x20 sweep shape", res.chi_zz.shape == (20, 20), str(res.chi_zz.shape))
        c.check("sweep < 5 min", elapsed < 300.0, f"{elapsed:.1f} s")
        c.check("zero-coupling corner exactly 0", res.chi_zz[0, 0] == 0.0, repr(float(res.chi_zz[0, 0])))
    c.verdict()


# ---------------------------------------------------------------- 3

def _random_spec(rng):
    # stop-bands within 120 MHz of the carrier, like the device transitions; a narrow band
    # constrains about one direction, so n_components <= n_bands + 1 keeps the system regular
    n_bands = int(rng.integers(1, 5))
    centres = np.sort(rng.choice(np.arange(-12, 12), n_bands, replace=False)) * 0.01 + rng.uniform(0, 0.002)
    widths = rng.uniform(0.002, 0.008, n_bands)
    bands = tuple((float(x - w / 2), float(x + w / 2)) for x, w in zip(centres, widths))
    weights = tuple(float(w) for w in rng.uniform(0.1, 2.0, n_bands))
    n_components = int(rng.integers(2, n_bands + 2))
    return FastDragSpec(bands, weights, n_components), float(rng.uniform(24.0, 96.0))


def _iterative_minimum(a, t_g, target):
    """SLSQP on the full coefficient vector with the equality constraint."""
    n = len(a)
    scale = np.trace(a)
    x0 = np.full(n, target / (n * t_g))
    res = minimize(lambda x: x @ a @ x / scale, x0, jac=lambda x: 2 * a @ x / scale, method="SLSQP",
                   constraints=[{"type": "eq", "fun": lambda x: t_g * x.sum() - target,
                                 "jac": lambda x: np.full(n, t_g)}],
                   options={"ftol": 1e-16, "maxiter": 1000})
    x = res.x
    # polish in the constraint null space
    z = null_space(np.ones((1, n)))
    x = x + (target - t_g * x.sum()) / (n * t_g)
    res2 = minimize(lambda y: (x + z @ y) @ a @ (x + z @ y) / scale, np.zeros(n - 1),
                    jac=lambda y: 2 * z.T @ a @ (x + z @ y) / scale, method="BFGS",
                    options={"gtol": 1e-14, "maxiter": 10000})
    return x + z @ res2.x


def test_criterion_3_fast_drag_solver():
    with _Criterion(3, "FAST-DRAG solver") as c:
        rng = np.random.default_rng(2024)
        worst_res, worst_rel, worst_time = 0.0, 0.0, 0.0
        for _ in range(10):
            spec, t_g = _random_spec(rng)
            t0 = time.perf_counter()
            coef = solve_fast_drag(spec, t_g)
            worst_time = max(worst_time, time.perf_counter() - t0)
            a = band_matrix(spec, t_g)
            worst_res = max(worst_res, abs(t_g * coef.sum() - spec.target_angle))
            it = _iterative_minimum(a, t_g, spec.target_angle)
            obj, obj_it = coef @ a @ coef, it @ a @ it
            worst_rel = max(worst_rel, (obj - obj_it) / obj_it)
        c.check("constraint residual < 1e-10", worst_res < 1e-10, f"max {worst_res:.1e}")
        c.check("objective within 1e-6 of iterative minimizer", worst_rel < 1e-6, f"max rel excess {worst_rel:.1e}")
        c.check("solve < 1 s", worst_time < 1.0, f"max {worst_time:.3f} s")

        device = build_composite()
        tr = conditional_transitions(device).as_dict()
        bands = {k: (tr[k] - 0.0025, tr[k] + 0.0025) for k in ("00", "01", "10")}
        spec = pulse_spectrum(dyn.gate_pulse(device, "fast_drag", 32.0), tr["11"], bands=bands,
                              reference=dyn.gate_pulse(device, "cosine", 32.0))
        db = spec.band_power_db
        detail = ", ".join(f"f_{k} {v:+.1f} dB" for k, v in db.items())
        c.check("f_01 and f_10 suppressed >= 20 dB vs cosine", db["01"] <= -20 and db["10"] <= -20, detail)
        c.check("f_00 less suppressed than f_01 and f_10", db["00"] > max(db["01"], db["10"]), detail)
    c.verdict()


# ---------------------------------------------------------------- 4

def test_criterion_4_analytic_fourier():
    with _Criterion(4, "analytic Fourier check") as c:
        freqs = np.linspace(-1, 1, 401)
        worst, worst_abs = 0.0, 0.0
        for t_g in (32.0, 64.0):
            for n in (1, 2, 3):
                closed = gn_fourier(n, t_g, freqs)
                ref = np.array([gn_quadrature(n, t_g, f) for f in freqs])
                scale = np.max(np.abs(ref))
                worst_abs = max(worst_abs, np.max(np.abs(closed - ref)) / scale)
                big = np.abs(ref) > 1e-3 * scale  # relative error is undefined at spectral nulls
                worst = max(worst, np.max(np.abs(closed - ref)[big] / np.abs(ref[big])))
        c.check("max relative error < 1e-6", worst < 1e-6, f"{worst:.1e} (off-null points)")
        c.check("max error / peak < 1e-6", worst_abs < 1e-6, f"{worst_abs:.1e}")
    c.verdict()


# ---------------------------------------------------------------- 5

SWEEP_T_G = (68.0, 80.0, 100.0, 120.0, 160.0)
SWEEP_ETA = (0.2, 0.6, 1.0)


def test_criterion_5_fidelity_bands():
    with _Criterion(5, "gate fidelity bands") as c:
        device = build_composite()
        t0 = time.perf_counter()
        rows = dyn.fidelity_sweep(device, ("cosine",), SWEEP_T_G, SWEEP_ETA, frame="lab")
        elapsed = time.perf_counter() - t0
        failures = [r.error for r in rows if r.error]
        c.check("all sweep points succeed", not failures, "; ".join(failures) or f"{len(rows)} points")
        bands = dyn.fidelity_bands(rows)
        lo, hi = bands[("cosine", 68.0)]
        c.check("68 ns band contains 98.9% within 0.5 points", lo - 0.005 <= 0.989 <= hi + 0.005,
                f"[{100 * lo:.2f}, {100 * hi:.2f}] %")
        c.check("eta_C spread <= 1 point", hi - lo <= 0.01, f"{100 * (hi - lo):.2f} points")
        errors = [1 - bands[("cosine", t)][1] for t in SWEEP_T_G if t >= 80.0]
        c.check("best error increases with t_g >= 80 ns", bool(np.all(np.diff(errors) > 0)),
                ", ".join(f"{100 * e:.2f}%" for e in errors))
        pulse = dyn.gate_pulse(device, "fast_drag", 40.0, eta_c=0.2)
        opt = dyn.optimize_drive(device, pulse, eta_c=0.2, noise=None, frame="lab")
        coherent = 1 - opt.report.average_gate_fidelity
        c.check("40 ns FAST-DRAG coherent error below the 1e-2 experimental scale", coherent < 1e-2, f"{coherent:.2e}")
        c.check("runtime < 30 min", elapsed < 1800.0, f"{elapsed:.0f} s for {len(rows)} points")
    c.verdict()


# ---------------------------------------------------------------- 6

def test_criterion_6_propagator_properties():
    with _Criterion(6, "propagator properties") as c:
        device = build_composite()
        f_11 = conditional_transitions(device).f_11
        rng = np.random.default_rng(6)
        worst_unit, worst_half = 0.0, 0.0
        for _ in range(5):
            kind = str(rng.choice(dyn.PULSE_KINDS))
            t_g = float(rng.uniform(30.0, 90.0))
            eta_c = float(rng.uniform(0.2, 1.0))
            pulse = dyn.gate_pulse(device, kind, t_g, eta_c)
            area = float(rng.uniform(0.5, 1.5)) * dyn.two_pi_area(device, eta_c)
            drive = dyn.DriveConfig(f_11 + float(rng.uniform(-0.03, 0.03)), pulse.scaled(area), eta_c)
            u = dyn.evolve(device, drive).unitary
            half = dyn.evolve(device, drive, dt=0.5 * dyn.DEFAULT_DT["lab"]).unitary
            worst_unit = max(worst_unit, np.max(np.abs(u.conj().T @ u - np.eye(device.dim))))
            worst_half = max(worst_half, np.max(np.abs(half - u)))
        c.check("unitarity < 1e-8", worst_unit < 1e-8, f"max {worst_unit:.1e}")
        c.check("step halving < 1e-7", worst_half < 1e-7, f"max {worst_half:.1e}")
    c.verdict()


# ---------------------------------------------------------------- 7

def test_criterion_7_calibration_pipeline():
    with _Criterion(7, "calibration pipeline") as c:
        device = build_composite()
        for kind in dyn.PULSE_KINDS:
            for t_g in (56.0, 64.0, 68.0):
                record, report, _ = tune_up_pipeline(device, kind, t_g, frame="rotating")
                opt = dyn.optimize_drive(device, dyn.gate_pulse(device, kind, t_g), frame="rotating")
                res5 = record.phase_residuals_deg[5]
                gap = report.average_gate_fidelity - opt.report.average_gate_fidelity
                c.check(f"{kind} {t_g:g} ns", abs(res5) <= 5.0 and abs(gap) <= 0.005,
                        f"5-rep residual {res5:+.2f} deg, F_g {100 * report.average_gate_fidelity:.2f}% "
                        f"vs direct {100 * opt.report.average_gate_fidelity:.2f}%")
    c.verdict()


# ---------------------------------------------------------------- 8

def test_criterion_8_oracle_equivalences():
    with _Criterion(8, "oracle equivalences") as c:
        rng = np.random.default_rng(8)
        worst_phase, worst_fp = 0.0, 0.0
        for _ in range(20):
            phases = rng.uniform(-np.pi, np.pi, 4)
            u = np.diag(np.exp(1j * phases))
            a1, a2, b1, b2 = rng.uniform(-np.pi, np.pi, 4)
            rotated = dyn.z_correction(a1, a2) @ u @ dyn.z_correction(b1, b2)
            diff = dyn.conditional_phase(rotated) - dyn.conditional_phase(u)
            worst_phase = max(worst_phase, abs(math.remainder(diff, 2 * math.pi)))
            worst_fp = max(worst_fp, abs(dyn.process_fidelity(u) - process_fidelity_grid(u)))
        c.check("conditional phase virtual-Z invariance 1e-10", worst_phase < 1e-10, f"{worst_phase:.1e}")
        c.check("process fidelity vs exhaustive grid 1e-6", worst_fp < 1e-6, f"{worst_fp:.1e}")

        device = build_composite()
        taus = np.linspace(0, 20000, 11)
        diff = simulate_zz_ramsey(device, taus, 0) - simulate_zz_ramsey(device, taus, 1)
        slope = np.polyfit(taus, diff, 1)[0] / (2 * np.pi) * 1e6
        chi = residual_zz(device)
        rel = abs(slope - chi) / abs(chi)
        c.check("Ramsey slope vs residual_zz 1e-6 relative", rel < 1e-6, f"{rel:.1e}")

        times = np.linspace(0, 60.0, 601)
        pops = {(i, j): np.zeros_like(times) for i in (0, 1) for j in (0, 1)}
        pops[(1, 1)] = np.ones_like(times)
        factors, _, _ = dyn.t1_corrected_fidelity(1.0, dyn.DEVICE_NOISE, pops, times)
        expected = 0.5 * (1 + math.exp(-0.060 / 1.19))
        err = abs(factors[(1, 1)] - expected)
        c.check("T1 factor F_p,11 spot check 1e-6", err < 1e-6 and abs(expected - 0.9754) < 1e-4,
                f"{factors[(1, 1)]:.6f}")
    c.verdict()


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-s"]))
