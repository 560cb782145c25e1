"""Driven time evolution of the composite system and CZ gate metrics.

The drive Hamiltonian is ``[I(t) cos(w_d t) - Q(t) sin(w_d t)] N`` with
``N = n_F2 + eta_c n_C + eta_f1 n_F1`` in the dressed basis. Energies enter as
angular frequencies (rad/ns), times in ns.

Two integrators share one fourth-order splitting (a triple-jump composition
of Strang steps):

* ``frame="lab"`` keeps the full carrier; the diagonal part and the drive
  part are exponentiated exactly, the drive through a one-time
  eigendecomposition of ``N``.
* ``frame="rotating"`` moves each dressed state to a frame rotating at
  ``m_k w_d`` with ``m_k = round(E_k / f_d)`` and keeps only drive terms with
  ``|m_k - m_l| = 1`` (rotating-wave approximation). Only the envelope is
  resolved, so steps can be much longer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .circuit import CompositeSystem
from .pulses import (PulseEnvelope, cosine_envelope, default_fast_drag_spec, drag_quadrature,
                     fast_drag_envelope, solve_fast_drag)
from .spectrum import conditional_transitions

COMPUTATIONAL = ((0, 0, 0), (0, 0, 1), (1, 0, 0), (1, 0, 1))
CZ_IDEAL = np.diag([1.0, 1.0, 1.0, -1.0]).astype(complex)

DEFAULT_DT = {"lab": 0.0025, "rotating": 0.02}

# triple-jump coefficients
_X1 = 1.0 / (2.0 - 2.0 ** (1.0 / 3.0))
_X0 = -(2.0 ** (1.0 / 3.0)) * _X1
_B_COEF = np.array([_X1, _X0, _X1])
_A_MID = (_X0 + _X1) / 2.0
_B_OFFSET = np.array([_X1 / 2.0, 0.5, 1.0 - _X1 / 2.0])


class IntegrationError(RuntimeError):
    pass


class PhaseRegimeError(ValueError):
    """The 4x4 block is not close enough to diagonal for a conditional phase."""


@dataclass(frozen=True, eq=False)
class DriveConfig:
    f_d: float
    envelope: PulseEnvelope
    eta_c: float = 0.6
    eta_f1: float = 0.028

    def __post_init__(self):
        if self.f_d <= 0:
            raise ValueError("drive frequency must be positive")
        if self.eta_c < 0 or self.eta_f1 < 0:
            raise ValueError("crosstalk ratios must be non-negative")


@dataclass(frozen=True)
class NoiseModel:
    """Coupler T1 in microseconds keyed by the fluxonium state (i, j)."""

    coupler_t1: dict = field(default_factory=lambda: {(0, 0): 0.54, (0, 1): 1.55, (1, 0): 1.05, (1, 1): 1.19})

    def __post_init__(self):
        if any(not t > 0 for t in self.coupler_t1.values()):
            raise ValueError("T1 values must be positive")


DEVICE_NOISE = NoiseModel()


@dataclass(frozen=True, eq=False)
class Evolution:
    unitary: np.ndarray  # (dim, n_columns)
    columns: tuple
    times: np.ndarray
    populations: np.ndarray | None  # (n_times, n_pairs)
    pairs: tuple


def _state_columns(sys, columns):
    if columns is None:
        return tuple(range(sys.dim))
    return tuple(sys.index(c) if isinstance(c, tuple) else int(c) for c in columns)


def _rotating_numbers(sys, f_d):
    e = np.asarray(sys.eigenvalues) - sys.eigenvalues[0]
    return np.rint(e / f_d).astype(int)


def evolve_batch(sys: CompositeSystem, drives, columns=None, dt: float | None = None,
                 frame: str = "lab", pairs=(), chunk: int | None = None):
    """Propagate several drives sharing ``sys``, duration and crosstalk.

    ``pairs`` lists ``(row_label, column_label)`` whose populations are
    recorded at every step. Returns a list of :class:`Evolution`.
    """
    drives = list(drives)
    if not drives:
        return []
    t_g = drives[0].envelope.t_g
    if not math.isfinite(t_g) or t_g <= 0:
        raise IntegrationError("envelope duration must be finite and positive")
    for d in drives:
        if abs(d.envelope.t_g - t_g) > 1e-12 or (d.eta_c, d.eta_f1) != (drives[0].eta_c, drives[0].eta_f1):
            raise ValueError("batched drives must share duration and crosstalk")
    if frame not in DEFAULT_DT:
        raise ValueError(f"unknown frame {frame!r}")
    dt = DEFAULT_DT[frame] if dt is None else dt
    cols = _state_columns(sys, columns)
    n_steps = max(1, int(math.ceil(t_g / dt - 1e-9)))
    h = t_g / n_steps
    k_runs, n_cols, dim = len(drives), len(cols), sys.dim

    omega = 2 * np.pi * np.asarray(sys.eigenvalues)
    n_op = sys.drive_operator(drives[0].eta_c, drives[0].eta_f1)
    pair_idx = [(sys.index(r) if isinstance(r, tuple) else r, cols.index(sys.index(c) if isinstance(c, tuple) else c))
                for r, c in pairs]
    rows = np.array([p[0] for p in pair_idx], dtype=int)
    pcol = np.array([p[1] for p in pair_idx], dtype=int)

    step_start = np.arange(n_steps) * h
    stage_t = step_start[:, None] + _B_OFFSET[None, :] * h  # (n_steps, 3)
    env = [d.envelope.evaluate(stage_t) for d in drives]
    psi = np.zeros((dim, k_runs, n_cols), complex)
    for j, c in enumerate(cols):
        psi[c, :, j] = 1.0
    pops = np.zeros((k_runs, n_steps + 1, len(pairs)))
    if len(pairs):
        pops[:, 0, :] = np.abs(psi[rows, :, pcol].T) ** 2

    if frame == "lab":
        lam, w = np.linalg.eigh(n_op)
        wh = w.conj().T
        fd = np.array([2 * np.pi * d.f_d for d in drives])
        drive_s = np.stack([i_v * np.cos(fd[k] * stage_t) - q_v * np.sin(fd[k] * stage_t)
                            for k, (i_v, q_v) in enumerate(env)], axis=-1)  # (n_steps, 3, K)

        def g_mat(a):
            return wh @ (np.exp(-1j * omega * a * h)[:, None] * w)

        g_first, g_mid, g_join = g_mat(_X1 / 2), g_mat(_A_MID), g_mat(_X1)
        if chunk is None:  # keep the phase buffer near 32 MB
            chunk = max(1, min(512, int(2e6 // (3 * dim * k_runs))))
        pop_map = (w @ g_first)[rows] if len(pairs) else None
        phi = (g_first @ (wh @ psi.reshape(dim, -1))).reshape(dim, k_runs, n_cols)
        for s0 in range(0, n_steps, chunk):
            s1 = min(n_steps, s0 + chunk)
            phase = np.exp(-1j * h * lam[None, None, :, None] * (_B_COEF[None, :, None, None]
                                                                 * drive_s[s0:s1, :, None, :]))
            for s in range(s0, s1):
                p = phase[s - s0]
                phi = p[0][:, :, None] * phi
                phi = (g_mid @ phi.reshape(dim, -1)).reshape(phi.shape)
                phi = p[1][:, :, None] * phi
                phi = (g_mid @ phi.reshape(dim, -1)).reshape(phi.shape)
                phi = p[2][:, :, None] * phi
                if len(pairs):
                    amp = (pop_map @ phi.reshape(dim, -1)).reshape(len(rows), k_runs, n_cols)
                    pops[:, s + 1, :] = np.abs(amp[np.arange(len(rows)), :, pcol].T) ** 2
                g_next = g_join if s < n_steps - 1 else g_first
                phi = (g_next @ phi.reshape(dim, -1)).reshape(phi.shape)
        psi = (w @ phi.reshape(dim, -1)).reshape(dim, k_runs, n_cols)
    else:
        psi = _rotating(sys, drives, omega, n_op, env, h, n_steps, psi, rows, pcol, pops, t_g)

    times = np.linspace(0.0, t_g, n_steps + 1)
    out = []
    for k in range(k_runs):
        out.append(Evolution(psi[:, k, :], cols, times, pops[k] if len(pairs) else None, tuple(pairs)))
    return out


def _rotating(sys, drives, omega, n_op, env, h, n_steps, psi, rows, pcol, pops, t_g):
    dim, k_runs, n_cols = psi.shape
    fds = np.array([d.f_d for d in drives])
    ms = np.stack([_rotating_numbers(sys, f) for f in fds], axis=-1)  # (dim, K)
    # the selection rule must be the same for every run in the batch
    if np.any(ms != ms[:, :1]):
        out = [None] * k_runs
        for k in range(k_runs):
            sub = _rotating(sys, [drives[k]], omega, n_op, [env[k]], h, n_steps, psi[:, k:k + 1, :].copy(),
                            rows, pcol, pops[k:k + 1], t_g)
            out[k] = sub[:, 0, :]
        return np.stack(out, axis=1)
    m = ms[:, 0]
    raising = np.where((m[:, None] - m[None, :]) == 1, n_op, 0.0)
    x_sym = 0.5 * (raising + raising.conj().T)
    lam, w = np.linalg.eigh(x_sym)
    wh = w.conj().T
    wd = 2 * np.pi * fds  # (K,)
    detuning = omega[:, None] - m[:, None] * wd[None, :]  # (dim, K)
    # complex envelope I + iQ at the stage times
    cplx = np.stack([i_v + 1j * q_v for i_v, q_v in env], axis=-1)  # (n_steps, 3, K)
    mag, arg = np.abs(cplx), np.angle(cplx)
    a_coef = [_X1 / 2, _A_MID, _A_MID]
    theta_prev = np.zeros(k_runs)
    for s in range(n_steps):
        for st in range(3):
            th = arg[s, st]
            # H_B = |Omega| e^{-i th M} X_sym e^{i th M}
            diag = np.exp(-1j * detuning * a_coef[st] * h) * np.exp(1j * (th - theta_prev)[None, :] * m[:, None])
            psi = diag[:, :, None] * psi
            psi = (wh @ psi.reshape(dim, -1)).reshape(psi.shape)
            psi = np.exp(-1j * h * _B_COEF[st] * lam[:, None] * mag[s, st][None, :])[:, :, None] * psi
            psi = (w @ psi.reshape(dim, -1)).reshape(psi.shape)
            theta_prev = th
        diag = np.exp(-1j * detuning * (_X1 / 2) * h) * np.exp(-1j * theta_prev[None, :] * m[:, None])
        psi = diag[:, :, None] * psi
        theta_prev = np.zeros(k_runs)
        if len(rows):
            pops[:, s + 1, :] = np.abs(psi[rows, :, pcol].T) ** 2
    # back to the lab frame at t_g
    back = np.exp(-1j * m[:, None] * wd[None, :] * t_g)
    return back[:, :, None] * psi


def evolve(sys, drive: DriveConfig, columns=None, dt=None, frame="lab", pairs=()) -> Evolution:
    return evolve_batch(sys, [drive], columns, dt, frame, pairs)[0]


def propagate(sys: CompositeSystem, drive: DriveConfig, dt: float | None = None, frame: str = "lab",
              tol: float | None = None) -> np.ndarray:
    """Full propagator U(t_g) over the kept space in the dressed basis.

    With ``tol`` the step is halved once and an :class:`IntegrationError`
    reports the achieved agreement if any element moves by more than ``tol``.
    """
    u = evolve(sys, drive, None, dt, frame).unitary
    if tol is None:
        return u
    half = evolve(sys, drive, None, 0.5 * (DEFAULT_DT[frame] if dt is None else dt), frame).unitary
    change = float(np.max(np.abs(half - u)))
    if change > tol:
        raise IntegrationError(f"step halving changed U by {change:.2e}, above tolerance {tol:.1e}")
    return half


def truncate_to_computational(u_full: np.ndarray, labels, columns=None) -> np.ndarray:
    """4x4 block on (|000>, |001>, |100>, |101>).

    ``labels`` is the dressed label tuple (or a CompositeSystem); ``columns``
    gives the state indices of ``u_full``'s columns when it is not square.
    """
    labels = getattr(labels, "labels", labels)
    index = {lab: k for k, lab in enumerate(labels)}
    missing = [lab for lab in COMPUTATIONAL if lab not in index]
    if missing:
        raise KeyError(f"missing computational labels {missing}")
    rows = [index[lab] for lab in COMPUTATIONAL]
    if columns is None:
        cols = rows
    else:
        columns = list(columns)
        cols = [columns.index(r) for r in rows]
    return np.asarray(u_full)[np.ix_(rows, cols)]


def _wrap(angle):
    """Wrap to (-pi, pi]."""
    out = -((-angle + np.pi) % (2 * np.pi) - np.pi)
    return out


def conditional_phase(u4: np.ndarray) -> float:
    d = np.diag(u4)
    if np.any(np.abs(d) <= 0.9):
        raise PhaseRegimeError(f"diagonal magnitudes {np.round(np.abs(d), 4)} below 0.9")
    ph = np.angle(d)
    return float(_wrap(ph[0] - ph[1] - ph[2] + ph[3]))


def optimal_z_phases(u4: np.ndarray):
    """Single-qubit Z angles ``(theta_1, theta_2)`` maximizing ``|Tr(CZ^dag Z U)|``.

    For fixed theta_1 the optimum over theta_2 is closed-form, leaving a
    one-dimensional search. Returns ``(theta_1, theta_2, |Tr|)``.
    """
    u = np.diag(u4)
    p, q, r, s = u[0], u[2], u[1], -u[3]

    def neg(t):
        y = np.exp(1j * t)
        return -(abs(p + y * q) + abs(r + y * s))

    grid, step = np.linspace(-np.pi, np.pi, 720, endpoint=False, retstep=True)
    vals = np.array([neg(t) for t in grid])
    k = int(np.argmin(vals))
    # neg is 2 pi periodic, so the grid neighbours always bracket the minimum
    try:
        res = minimize_scalar(neg, bracket=(grid[k] - step, grid[k], grid[k] + step), method="brent",
                              options={"xtol": 1e-12})
        t1 = res.x if res.fun <= vals[k] else grid[k]
    except ValueError:  # flat neighbourhood, grid point is already optimal
        t1 = grid[k]
    y = np.exp(1j * t1)
    t2 = np.angle(p + y * q) - np.angle(r + y * s)
    trace = abs(p + y * q) + abs(r + y * s)
    return float(_wrap(t1)), float(_wrap(t2)), float(trace)


def z_correction(theta_1: float, theta_2: float) -> np.ndarray:
    """diag(1, e^{i t2}, e^{i t1}, e^{i(t1+t2)}) on (00, 01, 10, 11)."""
    return np.diag(np.exp(1j * np.array([0.0, theta_2, theta_1, theta_1 + theta_2])))


def process_fidelity(u4: np.ndarray, single_qubit_phases_optimized: bool = True) -> float:
    """``|Tr(CZ^dag U)|^2 / 16``, optionally maximized over virtual-Z angles."""
    if single_qubit_phases_optimized:
        trace = optimal_z_phases(u4)[2]
    else:
        trace = abs(np.trace(CZ_IDEAL.conj().T @ u4))
    return float(trace**2 / 16.0)


def t1_corrected_fidelity(f_p: float, noise: NoiseModel | None, populations: dict, times, d: int = 4):
    """Ad-hoc coupler relaxation correction.

    ``populations`` maps ``(i, j)`` to samples of p_i1j(t) on ``times`` (ns).
    Each factor is ``(1 + exp(-int gamma_ij p dt))/2``. Returns
    ``(factors, F_P_total, F_g)``.
    """
    times = np.asarray(times, dtype=float)
    factors = {}
    for key, p in populations.items():
        if noise is None:
            factors[key] = 1.0
            continue
        t1 = noise.coupler_t1[key]
        if not t1 > 0:
            raise ValueError("T1 must be positive")
        integral = np.trapezoid(np.asarray(p, dtype=float), times) / (t1 * 1e3)
        factors[key] = 0.5 * (1.0 + math.exp(-integral))
    total = f_p * math.prod(factors.values())
    return factors, total, (d * total + 1) / (d + 1)


def conditional_rabi_rates(sys: CompositeSystem, eta_c: float = 0.6, eta_f1: float = 0.028) -> dict:
    """|<i1j| N |i0j>| for the four fluxonium states."""
    n_op = sys.drive_operator(eta_c, eta_f1)
    return {f"{i}{j}": float(abs(n_op[sys.index((i, 1, j)), sys.index((i, 0, j))]))
            for i in (0, 1) for j in (0, 1)}


@dataclass(frozen=True, eq=False)
class GateReport:
    u_computational: np.ndarray
    conditional_phase: float | None
    process_fidelity: float
    z_phases: tuple
    t1_factors: dict
    process_fidelity_total: float
    average_gate_fidelity: float
    coupler_population: dict
    info: dict = field(default_factory=dict)

    @property
    def coherent_average_fidelity(self) -> float:
        return (4 * self.process_fidelity + 1) / 5

    def to_dict(self) -> dict:
        u = self.u_computational
        return {
            "u_computational": {"re": u.real.tolist(), "im": u.imag.tolist()},
            "conditional_phase_rad": self.conditional_phase,
            "process_fidelity": self.process_fidelity,
            "z_phases_rad": list(self.z_phases),
            "t1_factors": {f"{i}{j}": v for (i, j), v in self.t1_factors.items()},
            "process_fidelity_total": self.process_fidelity_total,
            "average_gate_fidelity": self.average_gate_fidelity,
            "coupler_population": {f"{i}{j}": v for (i, j), v in self.coupler_population.items()},
            "info": self.info,
        }


def _pairs():
    return tuple(((i, 1, j), (i, 0, j)) for i in (0, 1) for j in (0, 1))


def gate_report(sys: CompositeSystem, evo: Evolution, noise: NoiseModel | None = DEVICE_NOISE,
                z_phases=None, info=None) -> GateReport:
    """Metrics from an evolution of the four computational columns.

    ``z_phases=None`` optimizes the virtual-Z angles; a pair of angles applies
    that fixed correction instead.
    """
    u4 = truncate_to_computational(evo.unitary, sys.labels, evo.columns)
    if z_phases is None:
        t1, t2, _ = optimal_z_phases(u4)
    else:
        t1, t2 = z_phases
    corrected = z_correction(t1, t2) @ u4
    f_p = process_fidelity(corrected, single_qubit_phases_optimized=False)
    try:
        phase = conditional_phase(u4)
    except PhaseRegimeError:
        phase = None
    pops = {}
    if evo.populations is not None:
        for k, (row, col) in enumerate(evo.pairs):
            pops[(row[0], row[2])] = evo.populations[:, k]
    factors, total, f_g = t1_corrected_fidelity(f_p, noise, pops, evo.times)
    excited = [k for k, lab in enumerate(sys.labels) if lab[1] >= 1]
    leak = {}
    for lab in COMPUTATIONAL:
        col = evo.columns.index(sys.index(lab))
        leak[(lab[0], lab[2])] = float(np.sum(np.abs(evo.unitary[excited, col]) ** 2))
    return GateReport(u4, phase, f_p, (t1, t2), factors, total, f_g, leak, dict(info or {}))


# ---------------------------------------------------------------- gate pulses

PULSE_KINDS = ("cosine", "drag", "fast_drag")


def gate_pulse(sys: CompositeSystem, kind: str, t_g: float, eta_c: float = 0.6, eta_f1: float = 0.028,
               f_nominal: float | None = None, sample_rate: float = 10.0) -> PulseEnvelope:
    """Unit-area (``int I dt = 1``) pulse of the given family.

    The shape is fixed at the nominal drive frequency (spectroscopic f_11 by
    default), as in the tune-up: DRAG nulls the f_10 sideband and FAST-DRAG
    suppresses windows around f_00, f_01, f_10. The drive amplitude is then a
    pure scale factor, equal to the in-phase pulse area in radians.
    """
    tr = conditional_transitions(sys)
    f0 = tr.f_11 if f_nominal is None else f_nominal
    # Q = -I'/Delta nulls the upper sideband at f_d - Delta/2pi for I cos - Q sin driving
    drag_delta = f0 - tr.f_10
    if kind == "cosine":
        env = cosine_envelope(t_g, 2.0 / t_g, sample_rate)
    elif kind == "drag":
        env = drag_quadrature(cosine_envelope(t_g, 2.0 / t_g, sample_rate), drag_delta)
    elif kind == "fast_drag":
        rates = conditional_rabi_rates(sys, eta_c, eta_f1)
        spec = default_fast_drag_spec(tr, f0, rates)
        c = solve_fast_drag(spec, t_g)
        env = fast_drag_envelope(c, t_g, 1.0 / spec.target_angle, sample_rate, delta=drag_delta)
    else:
        raise ValueError(f"unknown pulse kind {kind!r}; expected one of {PULSE_KINDS}")
    return env


def two_pi_area(sys: CompositeSystem, eta_c: float = 0.6, eta_f1: float = 0.028) -> float:
    """Linear-response in-phase area for a 2pi rotation on |101> <-> |111>."""
    return 2 * np.pi / conditional_rabi_rates(sys, eta_c, eta_f1)["11"]


def simulate_gate(sys, pulse: PulseEnvelope, f_d: float, area: float, eta_c=0.6, eta_f1=0.028,
                  noise=DEVICE_NOISE, dt=None, frame="lab", z_phases=None) -> GateReport:
    drive = DriveConfig(f_d, pulse.scaled(area), eta_c, eta_f1)
    evo = evolve(sys, drive, COMPUTATIONAL, dt, frame, _pairs())
    return gate_report(sys, evo, noise, z_phases,
                       {"f_d_GHz": f_d, "area_rad": area, "t_g_ns": pulse.t_g, "kind": pulse.shape_kind,
                        "eta_c": eta_c, "frame": frame})


def gate_reports_batch(sys, pulse, points, eta_c=0.6, eta_f1=0.028, noise=DEVICE_NOISE, dt=None, frame="lab"):
    """Reports for ``points = [(f_d, area), ...]`` evaluated in one batch."""
    drives = [DriveConfig(f, pulse.scaled(a), eta_c, eta_f1) for f, a in points]
    evos = evolve_batch(sys, drives, COMPUTATIONAL, dt, frame, _pairs())
    return [gate_report(sys, e, noise, None, {"f_d_GHz": f, "area_rad": a, "t_g_ns": pulse.t_g,
                                              "kind": pulse.shape_kind, "eta_c": eta_c, "frame": frame})
            for e, (f, a) in zip(evos, points)]


@dataclass(frozen=True, eq=False)
class OptimizedGate:
    f_d: float
    area: float
    report: GateReport
    evaluations: int
    converged: bool


def optimize_drive(sys, pulse: PulseEnvelope, eta_c=0.6, eta_f1=0.028, noise=DEVICE_NOISE,
                   f_seed=None, area_seed=None, df=0.002, da_rel=0.05, tol=1e-5, max_iter=25,
                   dt=None, frame="lab") -> OptimizedGate:
    """Maximize F_g over drive frequency and area with a batched 3x3 stencil search.

    Each iteration evaluates a stencil around the incumbent, fits a quadratic
    model and moves to its maximum when the model is concave (else to the
    best stencil point); the stencil shrinks when the incumbent survives.
    Stops once the best F_g improves by less than ``tol`` at the finest
    stencil.
    """
    f0 = conditional_transitions(sys).f_11 if f_seed is None else f_seed
    a0 = two_pi_area(sys, eta_c, eta_f1) if area_seed is None else area_seed
    step = np.array([df, da_rel * a0])
    best_x = np.array([f0, a0])
    best = gate_reports_batch(sys, pulse, [tuple(best_x)], eta_c, eta_f1, noise, dt, frame)[0]
    evals, converged = 1, False
    offsets = np.array([(i, j) for i in (-1, 0, 1) for j in (-1, 0, 1) if (i, j) != (0, 0)], float)
    for _ in range(max_iter):
        pts = best_x + offsets * step
        reports = gate_reports_batch(sys, pulse, [tuple(p) for p in pts], eta_c, eta_f1, noise, dt, frame)
        evals += len(pts)
        xs = np.vstack([best_x, pts])
        fs = np.array([best.average_gate_fidelity] + [r.average_gate_fidelity for r in reports])
        cand = _quadratic_peak(xs, fs, best_x, step)
        candidates = list(zip(pts, reports))
        if cand is not None:
            rep = gate_reports_batch(sys, pulse, [tuple(cand)], eta_c, eta_f1, noise, dt, frame)[0]
            evals += 1
            candidates.append((cand, rep))
        x_new, r_new = max(candidates, key=lambda c: c[1].average_gate_fidelity)
        gain = r_new.average_gate_fidelity - best.average_gate_fidelity
        if gain > 0:
            best_x, best = np.asarray(x_new), r_new
        if gain < tol:
            if np.all(step <= np.array([df, da_rel * a0]) / 16):
                converged = True
                break
            step = step / 2
    return OptimizedGate(float(best_x[0]), float(best_x[1]), best, evals, converged)


def _quadratic_peak(xs, fs, centre, step):
    """Maximum of a least-squares quadratic through the stencil, or None."""
    u = (xs - centre) / step
    design = np.column_stack([np.ones(len(u)), u[:, 0], u[:, 1], u[:, 0] ** 2, u[:, 0] * u[:, 1], u[:, 1] ** 2])
    coef, *_ = np.linalg.lstsq(design, fs, rcond=None)
    hess = np.array([[2 * coef[3], coef[4]], [coef[4], 2 * coef[5]]])
    if np.any(np.linalg.eigvalsh(hess) >= 0):
        return None
    peak = np.linalg.solve(hess, -coef[1:3])
    peak = np.clip(peak, -2, 2)
    return centre + peak * step


# ---------------------------------------------------------------- sweeps

@dataclass(frozen=True)
class SweepRow:
    t_g: float
    pulse_kind: str
    eta_c: float
    f_g: float
    f_p: float
    leakage: float  # mean residual coupler population over the four inputs
    f_d: float
    area: float
    converged: bool
    error: str | None = None


def _sweep_point(args):
    sys, kind, t_g, eta_c, eta_f1, noise, frame, dt = args
    try:
        pulse = gate_pulse(sys, kind, t_g, eta_c, eta_f1)
        opt = optimize_drive(sys, pulse, eta_c, eta_f1, noise, dt=dt, frame=frame)
        rep = opt.report
        leak = float(np.mean(list(rep.coupler_population.values())))
        return SweepRow(t_g, kind, eta_c, rep.average_gate_fidelity, rep.process_fidelity, leak,
                        opt.f_d, opt.area, opt.converged)
    except Exception as exc:  # reported per point, the sweep continues
        nan = float("nan")
        return SweepRow(t_g, kind, eta_c, nan, nan, nan, nan, nan, False, f"{type(exc).__name__}: {exc}")


def fidelity_sweep(sys: CompositeSystem, pulse_kinds=("cosine",), t_gs=(68.0,), eta_cs=(0.2, 0.6, 1.0),
                   eta_f1=0.028, noise=DEVICE_NOISE, frame="lab", dt=None, workers=1):
    """Optimized F_g for every (pulse kind, t_g, eta_c); rows in input order."""
    tasks = [(sys, k, float(t), float(e), eta_f1, noise, frame, dt) for k in pulse_kinds for t in t_gs for e in eta_cs]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as pool:
            return list(pool.map(_sweep_point, tasks))
    return [_sweep_point(t) for t in tasks]


def fidelity_bands(rows):
    """(kind, t_g) -> (min F_g, max F_g) over eta_c, ignoring failed points."""
    bands = {}
    for r in rows:
        if r.error is not None:
            continue
        lo, hi = bands.get((r.pulse_kind, r.t_g), (math.inf, -math.inf))
        bands[(r.pulse_kind, r.t_g)] = (min(lo, r.f_g), max(hi, r.f_g))
    return bands


# ---------------------------------------------------------------- conditional Rabi

@dataclass(frozen=True, eq=False)
class RabiResult:
    times: np.ndarray  # ns
    populations: dict  # "ij" -> coupler excitation p_i1j(t) for input |i0j>
    frequencies: dict  # "ij" -> dominant oscillation frequency in MHz


def _dominant_frequency(times, p):
    """Oscillation frequency of p(t) in GHz: FFT seed, then a cosine least-squares fit."""
    from scipy.optimize import curve_fit

    x = p - p.mean()
    h = times[1] - times[0]
    n = 64 * len(x)
    spec = np.abs(np.fft.rfft(x, n))
    nu0 = (int(np.argmax(spec[1:])) + 1) / (n * h)

    def model(t, a, b, c, nu):
        return a + b * np.cos(2 * np.pi * nu * t) + c * np.sin(2 * np.pi * nu * t)

    try:
        popt, _ = curve_fit(model, times, p, p0=[p.mean(), -np.ptp(p) / 2, 0.0, nu0], maxfev=5000)
        return abs(float(popt[3]))
    except RuntimeError:
        return float(nu0)


def conditional_rabi(sys: CompositeSystem, f_d: float | None = None, amplitude: float = 0.05, t_max: float = 400.0,
                     eta_c: float = 0.6, eta_f1: float = 0.028, dt=None, frame="rotating",
                     resonant: bool = False) -> RabiResult:
    """Constant-amplitude drive from each computational state; coupler excitation vs time.

    ``amplitude`` is the in-phase envelope in rad/ns. With ``resonant`` each
    input is driven at its own transition f_ij; otherwise all share ``f_d``
    (default: the spectroscopic f_11).
    """
    tr = conditional_transitions(sys).as_dict()
    f_common = tr["11"] if f_d is None else f_d
    n = max(2, int(round(t_max * 10)) + 1)
    env = PulseEnvelope(float(t_max), 10.0, np.full(n, float(amplitude)), np.zeros(n), "constant",
                        {"amplitude": float(amplitude)})
    pops, times = {}, None
    for key, pair in zip(("00", "01", "10", "11"), _pairs()):
        f = tr[key] if resonant else f_common
        evo = evolve(sys, DriveConfig(f, env, eta_c, eta_f1), [pair[1]], dt, frame, (pair,))
        pops[key], times = evo.populations[:, 0], evo.times
    freqs = {k: 1e3 * _dominant_frequency(times, p) for k, p in pops.items()}
    return RabiResult(times, pops, freqs)
