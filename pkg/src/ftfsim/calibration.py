"""Deterministic CZ tune-up emulated on the simulated device.

The pulse shape is fixed first. Then:

1. amplitude-frequency map: for each drive frequency, the amplitude that
   best returns |101> after one pulse, smoothed by a least-squares cubic spline;
2. conditional-phase root finding on 1, 3 and 5 back-to-back gates, with the
   amplitude always read from the map;
3. virtual-Z angles from the per-gate slope of the single-qubit phases.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import make_lsq_spline

from . import dynamics as dyn
from .circuit import CompositeSystem
from .pulses import PulseEnvelope
from .spectrum import conditional_transitions

TARGET = (1, 0, 1)


class CalibrationError(RuntimeError):
    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"[{stage}] {message}")


@dataclass(frozen=True, eq=False)
class AmplitudeFrequencyMap:
    frequencies: np.ndarray  # GHz
    amplitude_grid: np.ndarray  # coarse areas scanned (rad)
    return_population: np.ndarray  # (n_f, n_a) on the coarse grid
    recovery_amplitude: np.ndarray  # refined maximizer per frequency (nan if flagged)
    peak_population: np.ndarray
    valid: np.ndarray  # False where the maximum sits on the grid edge
    spline: object  # BSpline through the valid maxima
    fit_residual: float  # max |spline - maxima| over valid points

    def amplitude_at(self, f):
        return self.spline(np.asarray(f, dtype=float))

    @property
    def span(self):
        f = self.frequencies[self.valid]
        return float(f.min()), float(f.max())

    def rows(self):
        for a, f in enumerate(self.frequencies):
            for b, amp in enumerate(self.amplitude_grid):
                yield float(f), float(amp), float(self.return_population[a, b])


def _parabola_vertex(x, y):
    """Vertex of the parabola through three points (x, y)."""
    c = np.polyfit(x, y, 2)
    if c[0] >= 0:
        return x[int(np.argmax(y))]
    return -c[1] / (2 * c[0])


def _lsq_cubic(x, y, points_per_knot=3):
    k = 3
    n_interior = max(0, len(x) // points_per_knot - 1)
    n_interior = min(n_interior, len(x) - k - 1)
    interior = np.linspace(x[0], x[-1], n_interior + 2)[1:-1]
    t = np.r_[[x[0]] * (k + 1), interior, [x[-1]] * (k + 1)]
    return make_lsq_spline(x, y, t, k)


def return_populations(sys, pulse, points, eta_c=0.6, eta_f1=0.028, dt=None, frame="lab"):
    """Population of |101> after one pulse for each ``(f_d, area)``."""
    drives = [dyn.DriveConfig(f, pulse.scaled(a), eta_c, eta_f1) for f, a in points]
    out = np.empty(len(drives))
    k = sys.index(TARGET)
    # group by rotating-frame selection rule so batches stay homogeneous
    for start in range(0, len(drives), 64):
        evos = dyn.evolve_batch(sys, drives[start:start + 64], [TARGET], dt, frame)
        out[start:start + len(evos)] = [abs(e.unitary[k, 0]) ** 2 for e in evos]
    return out


def build_amplitude_map(sys: CompositeSystem, pulse: PulseEnvelope, f_grid, a_grid, eta_c=0.6,
                        eta_f1=0.028, dt=None, frame="lab", refine_points=5) -> AmplitudeFrequencyMap:
    """Scan (f_d, area), locate the return maximum per frequency and fit a spline.

    Each coarse maximum is refined on a finer local grid followed by a
    parabolic vertex fit. Maxima on the edge of ``a_grid`` are flagged.
    """
    f_grid = np.asarray(f_grid, dtype=float)
    a_grid = np.asarray(a_grid, dtype=float)
    if len(a_grid) < 3 or np.any(np.diff(a_grid) <= 0) or np.any(np.diff(f_grid) <= 0):
        raise ValueError("grids must be ascending with at least three amplitudes")
    pts = [(f, a) for f in f_grid for a in a_grid]
    pop = return_populations(sys, pulse, pts, eta_c, eta_f1, dt, frame).reshape(len(f_grid), len(a_grid))
    best = np.argmax(pop, axis=1)
    valid = (best > 0) & (best < len(a_grid) - 1)
    da = a_grid[1] - a_grid[0]
    fine_pts, fine_axes = [], []
    for i, f in enumerate(f_grid):
        centre = a_grid[best[i]]
        axis = centre + da * np.linspace(-0.5, 0.5, refine_points)
        fine_axes.append(axis)
        fine_pts += [(f, a) for a in axis]
    fine = return_populations(sys, pulse, fine_pts, eta_c, eta_f1, dt, frame).reshape(len(f_grid), refine_points)
    amp = np.full(len(f_grid), np.nan)
    peak = np.empty(len(f_grid))
    for i in range(len(f_grid)):
        j = int(np.argmax(fine[i]))
        j = min(max(j, 1), refine_points - 2)
        x, y = fine_axes[i][j - 1:j + 2], fine[i][j - 1:j + 2]
        peak[i] = fine[i].max()
        if valid[i]:
            amp[i] = float(np.clip(_parabola_vertex(x, y), x[0], x[-1]))
    if valid.sum() < 5:
        raise CalibrationError("map", f"only {int(valid.sum())} frequencies have an interior return maximum")
    # fit on the longest contiguous run of valid frequencies
    runs, cur = [], []
    for i, ok in enumerate(valid):
        if ok:
            cur.append(i)
        elif cur:
            runs.append(cur)
            cur = []
    if cur:
        runs.append(cur)
    keep = np.zeros_like(valid)
    keep[max(runs, key=len)] = True
    if keep.sum() < 5:
        raise CalibrationError("map", "fewer than five contiguous valid frequencies")
    spline = _lsq_cubic(f_grid[keep], amp[keep])
    resid = float(np.max(np.abs(spline(f_grid[keep]) - amp[keep])))
    return AmplitudeFrequencyMap(f_grid, a_grid, pop, amp, peak, keep, spline, resid)


def default_grids(sys, pulse, eta_c=0.6, eta_f1=0.028, span=0.03, n_f=13, n_a=13):
    """Frequency grid f_11 +- span and an area grid around the linear-response 2pi area."""
    f11 = conditional_transitions(sys).f_11
    a0 = dyn.two_pi_area(sys, eta_c, eta_f1)
    return np.linspace(f11 - span, f11 + span, n_f), a0 * np.linspace(0.55, 1.45, n_a)


# ---------------------------------------------------------------- phase root finding

def _block_indices(sys):
    """Coupler manifold over the computational fluxonium states."""
    labs = [lab for lab in sys.labels if lab[0] <= 1 and lab[2] <= 1]
    return [sys.index(lab) for lab in labs]


class _GateCache:
    """Gate propagators on the coupler manifold, cached by drive frequency."""

    def __init__(self, sys, pulse, amap, eta_c, eta_f1, dt, frame):
        self.sys, self.pulse, self.amap = sys, pulse, amap
        self.args = (eta_c, eta_f1, dt, frame)
        self.cols = _block_indices(sys)
        self.labels = [sys.labels[c] for c in self.cols]
        self.cache = {}

    def blocks(self, freqs):
        todo = [f for f in freqs if f not in self.cache]
        if todo:
            eta_c, eta_f1, dt, frame = self.args
            drives = [dyn.DriveConfig(f, self.pulse.scaled(float(self.amap.amplitude_at(f))), eta_c, eta_f1)
                      for f in todo]
            for f, e in zip(todo, dyn.evolve_batch(self.sys, drives, self.cols, dt, frame)):
                self.cache[f] = e.unitary[self.cols, :]
        return [self.cache[f] for f in freqs]

    def u4(self, f, n=1):
        u = np.linalg.matrix_power(self.blocks([f])[0], n)
        return dyn.truncate_to_computational(u, self.labels)


def _phase_residual(u4, n):
    """Wrapped deviation of the n-gate conditional phase from n*pi, radians."""
    phi = dyn.conditional_phase(u4)
    return float(dyn._wrap(phi - n * np.pi))


@dataclass(frozen=True)
class RootFindResult:
    f_d: float
    residuals_deg: dict  # repetitions -> residual of the n-gate phase at f_d
    stage_per_gate_deg: dict  # |n-gate residual|/n at the end of each stage
    evaluations: int
    bracket: tuple


def find_cz_frequency(sys, amap: AmplitudeFrequencyMap, pulse: PulseEnvelope, repetitions=(1, 3, 5),
                      eta_c=0.6, eta_f1=0.028, dt=None, frame="lab", tol_deg=5.0, stage_tol_deg=1.0,
                      phase_noise_deg=0.0,
                      seed=None, _cache=None) -> RootFindResult:
    """Bracketed bisection on the conditional-phase residual with growing repetition count.

    Each stage narrows the previous stage's bracket until the n-gate residual
    at the midpoint is below ``stage_tol_deg``, so the per-gate precision
    improves as 1/n. The final ``n_max``-gate residual must be within
    ``tol_deg``. A Gaussian
    phase error of ``phase_noise_deg`` (seeded) may be added to every phase
    reading to exercise robustness; by default readings are exact.
    """
    reps = sorted(set(int(r) for r in repetitions))
    if not reps or reps[0] < 1:
        raise ValueError("repetitions must be positive")
    rng = np.random.default_rng(seed)
    cache = _cache or _GateCache(sys, pulse, amap, eta_c, eta_f1, dt, frame)
    evals = 0

    def resid(f, n):
        nonlocal evals
        evals += 1
        try:
            r = _phase_residual(cache.u4(f, n), n)
        except dyn.PhaseRegimeError:
            return math.nan
        if phase_noise_deg:
            r = float(dyn._wrap(r + math.radians(rng.normal(0.0, phase_noise_deg))))
        return r

    lo, hi = amap.span
    scan = np.linspace(lo, hi, 4 * len(amap.frequencies[amap.valid]) + 1)
    cache.blocks(list(scan))
    r1 = np.array([resid(f, reps[0]) for f in scan])
    bracket = None
    for k in range(len(scan) - 1):
        a, b = r1[k], r1[k + 1]
        if np.isfinite(a) and np.isfinite(b) and a * b <= 0 and abs(a) + abs(b) < np.pi:
            if bracket is None or abs(a) + abs(b) < bracket[2]:
                bracket = (scan[k], scan[k + 1], abs(a) + abs(b))
    if bracket is None:
        raise CalibrationError("phase", f"no conditional-phase crossing of pi in [{lo:.6f}, {hi:.6f}] GHz")
    a, b = bracket[0], bracket[1]
    n_max = reps[-1]
    stage = {}
    prev = math.inf
    f_d = 0.5 * (a + b)
    for n in reps:
        ra, rb = resid(a, n), resid(b, n)
        for _ in range(6):
            # the n-gate root can sit just outside the previous bracket
            if not (np.isfinite(ra) and np.isfinite(rb)) or ra * rb <= 0:
                break
            half = b - a
            a, b = max(lo, a - half), min(hi, b + half)
            ra, rb = resid(a, n), resid(b, n)
        if np.isfinite(ra) and np.isfinite(rb) and ra * rb <= 0:
            for _ in range(60):
                m = 0.5 * (a + b)
                rm = resid(m, n)
                if not np.isfinite(rm):
                    break
                per_gate = abs(math.degrees(rm)) / n
                if (abs(math.degrees(rm)) <= stage_tol_deg and per_gate <= prev) or b - a < 1e-9:
                    break
                if ra * rm <= 0:
                    b, rb = m, rm
                else:
                    a, ra = m, rm
        # a stage whose bracket lost its sign change keeps the previous estimate
        cand = 0.5 * (a + b)
        per_gate = abs(math.degrees(_phase_residual(cache.u4(cand, n), n))) / n
        if per_gate <= prev or not stage:
            f_d = cand
        stage[n] = abs(math.degrees(_phase_residual(cache.u4(f_d, n), n))) / n
        prev = min(prev, stage[n])
    res = {n: math.degrees(_phase_residual(cache.u4(f_d, n), n)) for n in reps}
    if abs(res[n_max]) > tol_deg:
        raise CalibrationError("phase", f"{n_max}-gate residual {res[n_max]:.2f} deg exceeds {tol_deg} deg")
    return RootFindResult(float(f_d), res, stage, evals, (float(a), float(b)))


# ---------------------------------------------------------------- virtual Z

@dataclass(frozen=True)
class VirtualZFit:
    phase_per_gate: tuple  # (F1, F2) radians, wrapped
    correction: tuple  # virtual-Z angles (theta_1, theta_2) = -phase_per_gate
    fit_residual_deg: float
    warning: str | None = None


def fit_virtual_z(u_gate: np.ndarray, labels=None, repetitions=range(1, 8)) -> VirtualZFit:
    """Per-gate single-qubit phases from a linear fit over repeated gates.

    ``u_gate`` is either a 4x4 computational block or a larger block with
    ``labels``. The F1 (F2) phase is read with the other fluxonium in |0>.
    """
    reps = np.array(sorted(set(int(r) for r in repetitions)))
    if len(reps) < 2:
        raise ValueError("need at least two repetition counts")
    u_gate = np.asarray(u_gate)
    ph1, ph2 = [], []
    for n in reps:
        un = np.linalg.matrix_power(u_gate, int(n))
        u4 = un if labels is None else dyn.truncate_to_computational(un, labels)
        d = np.diag(u4)
        ph1.append(np.angle(d[2] / d[0]))
        ph2.append(np.angle(d[1] / d[0]))
    slopes, worst = [], 0.0
    for ph in (ph1, ph2):
        # unwrap in the repetition index assuming |phase per gate| < pi
        step = np.angle(np.exp(1j * np.diff(np.r_[0.0, ph])))
        acc = np.cumsum(step) if reps[0] == 1 and np.all(np.diff(reps) == 1) else np.unwrap(ph)
        design = np.column_stack([reps, np.ones(len(reps))])
        coef, *_ = np.linalg.lstsq(design, acc, rcond=None)
        worst = max(worst, float(np.max(np.abs(design @ coef - acc))))
        slopes.append(float(dyn._wrap(coef[0])))
    resid = math.degrees(worst)
    msg = None
    if resid > 5.0:
        msg = f"single-qubit phase accumulation is nonlinear (residual {resid:.2f} deg)"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    corr = tuple(float(dyn._wrap(-s)) for s in slopes)
    return VirtualZFit(tuple(slopes), corr, resid, msg)


# ---------------------------------------------------------------- pipeline

@dataclass(frozen=True, eq=False)
class CalibrationRecord:
    pulse_kind: str
    t_g: float
    eta_c: float
    f_d: float
    amplitude: float
    phase_residuals_deg: dict
    virtual_z: dict
    map_fit_residual: float
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "pulse_kind": self.pulse_kind,
            "t_g_ns": self.t_g,
            "eta_c": self.eta_c,
            "f_d_GHz": self.f_d,
            "amplitude_rad": self.amplitude,
            "phase_residuals_deg": {str(k): v for k, v in self.phase_residuals_deg.items()},
            "virtual_z_rad_per_gate": self.virtual_z,
            "map_fit_residual_rad": self.map_fit_residual,
            **self.extra,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def tune_up_pipeline(sys: CompositeSystem, pulse_kind: str, t_g: float, eta_c=0.6, eta_f1=0.028,
                     noise=dyn.DEVICE_NOISE, f_grid=None, a_grid=None, repetitions=(1, 3, 5), dt=None,
                     frame="lab", phase_noise_deg=0.0, seed=None):
    """Map -> phase root finding -> virtual-Z fit -> final report.

    Returns ``(CalibrationRecord, GateReport, AmplitudeFrequencyMap)``.
    """
    try:
        pulse = dyn.gate_pulse(sys, pulse_kind, t_g, eta_c, eta_f1)
    except Exception as exc:
        raise CalibrationError("pulse", str(exc)) from exc
    fg, ag = default_grids(sys, pulse, eta_c, eta_f1)
    f_grid = fg if f_grid is None else f_grid
    a_grid = ag if a_grid is None else a_grid
    amap = build_amplitude_map(sys, pulse, f_grid, a_grid, eta_c, eta_f1, dt, frame)
    cache = _GateCache(sys, pulse, amap, eta_c, eta_f1, dt, frame)
    root = find_cz_frequency(sys, amap, pulse, repetitions, eta_c, eta_f1, dt, frame,
                             phase_noise_deg=phase_noise_deg, seed=seed, _cache=cache)
    amp = float(amap.amplitude_at(root.f_d))
    try:
        vz = fit_virtual_z(cache.blocks([root.f_d])[0], cache.labels)
    except Exception as exc:
        raise CalibrationError("virtual-z", str(exc)) from exc
    try:
        report = dyn.simulate_gate(sys, pulse, root.f_d, amp, eta_c, eta_f1, noise, dt, frame, z_phases=vz.correction)
    except Exception as exc:
        raise CalibrationError("report", str(exc)) from exc
    record = CalibrationRecord(
        pulse_kind, float(t_g), float(eta_c), root.f_d, amp, root.residuals_deg,
        {"F1": vz.correction[0], "F2": vz.correction[1]}, amap.fit_residual,
        {"phase_evaluations": root.evaluations,
         "stage_per_gate_residual_deg": {str(k): v for k, v in root.stage_per_gate_deg.items()},
         "virtual_z_fit_residual_deg": vz.fit_residual_deg,
         "average_gate_fidelity": report.average_gate_fidelity},
    )
    return record, report, amap
