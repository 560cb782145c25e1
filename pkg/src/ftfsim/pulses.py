"""Drive envelopes (raised cosine, DRAG, FAST-DRAG) and their Fourier spectra.

Envelope amplitudes are angular frequencies (rad/ns); times are ns and
frequencies GHz. The Fourier convention is ``X(f) = int x(t) exp(-2 pi i f t) dt``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad_vec

SHAPES = ("cosine", "drag", "fast_drag")


@dataclass(frozen=True, eq=False)
class PulseEnvelope:
    """Sampled in-phase/quadrature envelope.

    Shapes built here are cosine series ``I(t) = sum_n a_n (1 - cos(2 pi n t / t_g))``
    with an optional DRAG quadrature; ``metadata['series']`` holds ``a_n`` and
    ``metadata['drag_delta']`` the angular DRAG detuning, which lets
    :meth:`evaluate` return exact values between samples.
    """

    t_g: float
    sample_rate: float
    i_samples: np.ndarray
    q_samples: np.ndarray
    shape_kind: str
    metadata: dict = field(default_factory=dict)

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.t_g, len(self.i_samples))

    @property
    def peak(self) -> float:
        return float(max(np.abs(self.i_samples).max(), np.abs(self.q_samples).max()))

    def evaluate(self, t):
        """``(I(t), Q(t))`` at arbitrary times; zero outside ``[0, t_g]``."""
        t = np.asarray(t, dtype=float)
        inside = (t >= 0) & (t <= self.t_g)
        series = self.metadata.get("series")
        if series is None:
            from scipy.interpolate import CubicSpline

            i_val = CubicSpline(self.times, self.i_samples)(t)
            q_val = CubicSpline(self.times, self.q_samples)(t)
        else:
            i_val, di = _series(series, self.t_g, t)
            delta = self.metadata.get("drag_delta")
            q_val = -di / delta if delta else np.zeros_like(i_val)
        return np.where(inside, i_val, 0.0), np.where(inside, q_val, 0.0)

    def scaled(self, factor: float) -> "PulseEnvelope":
        meta = dict(self.metadata)
        if "series" in meta:
            meta["series"] = tuple(factor * a for a in meta["series"])
        meta["amplitude_scale"] = factor * meta.get("amplitude_scale", 1.0)
        return PulseEnvelope(self.t_g, self.sample_rate, factor * self.i_samples,
                             factor * self.q_samples, self.shape_kind, meta)

    def area(self) -> float:
        series = self.metadata.get("series")
        if series is not None:
            return float(sum(series) * self.t_g)
        return float(np.trapezoid(self.i_samples, self.times))


def _series(series, t_g, t):
    """Value and time derivative of ``sum_n a_n (1 - cos(2 pi n t / t_g))``."""
    val = np.zeros_like(t, dtype=float)
    der = np.zeros_like(t, dtype=float)
    for n, a in enumerate(series, start=1):
        w = 2 * np.pi * n / t_g
        val += a * (1 - np.cos(w * t))
        der += a * w * np.sin(w * t)
    return val, der


def _n_samples(t_g, sample_rate):
    return int(round(t_g * sample_rate)) + 1


def _from_series(series, t_g, sample_rate, kind, drag_delta=None, **meta):
    t = np.linspace(0.0, t_g, _n_samples(t_g, sample_rate))
    i_val, di = _series(series, t_g, t)
    q_val = -di / drag_delta if drag_delta else np.zeros_like(i_val)
    # sin/cos rounding leaves ~1e-16 at the endpoints
    i_val[[0, -1]] = 0.0
    q_val[[0, -1]] = 0.0
    metadata = {"series": tuple(float(a) for a in series), **meta}
    if drag_delta:
        metadata["drag_delta"] = float(drag_delta)
    return PulseEnvelope(float(t_g), float(sample_rate), i_val, q_val, kind, metadata)


def cosine_envelope(t_g: float, amplitude: float, sample_rate: float = 10.0) -> PulseEnvelope:
    """Raised cosine ``(amplitude/2)(1 - cos(2 pi t/t_g))`` with no quadrature."""
    if t_g <= 0:
        raise ValueError("t_g must be positive")
    return _from_series([amplitude / 2], t_g, sample_rate, "cosine", amplitude=float(amplitude))


def drag_quadrature(envelope: PulseEnvelope, delta: float) -> PulseEnvelope:
    """Attach ``Q(t) = -(1/Delta) dI/dt`` with ``Delta = 2 pi * delta`` (delta in GHz).

    Known cosine-series shapes are differentiated analytically; arbitrary
    samples are differentiated spectrally.
    """
    if delta == 0:
        raise ValueError("DRAG detuning must be non-zero")
    omega = 2 * np.pi * delta
    meta = dict(envelope.metadata)
    kind = "drag" if envelope.shape_kind == "cosine" else envelope.shape_kind
    if "series" in meta:
        meta.pop("drag_delta", None)
        return _from_series(meta.pop("series"), envelope.t_g, envelope.sample_rate, kind,
                            drag_delta=omega, **meta)
    samples = envelope.i_samples
    dt = envelope.t_g / (len(samples) - 1)
    # spectral derivative on the periodic extension (envelopes vanish at both ends)
    body = samples[:-1]
    freqs = np.fft.fftfreq(len(body), dt)
    deriv = np.fft.ifft(2j * np.pi * freqs * np.fft.fft(body)).real
    deriv = np.append(deriv, deriv[0])
    meta["drag_delta"] = omega
    return PulseEnvelope(envelope.t_g, envelope.sample_rate, samples.copy(), -deriv / omega, kind, meta)


def gn_fourier(n: int, t_g: float, f):
    """Fourier transform of ``g_n(t) = 1 - cos(2 pi n t/t_g)`` on ``[0, t_g]``."""
    if n < 1 or t_g <= 0:
        raise ValueError("need n >= 1 and t_g > 0")
    f = np.asarray(f, dtype=float)
    x = f * t_g
    # np.sinc(u) = sin(pi u)/(pi u)
    main = np.exp(-1j * np.pi * x) * np.sinc(x)
    lower = np.exp(1j * np.pi * (n - x)) * np.sinc(n - x)
    upper = np.exp(-1j * np.pi * (n + x)) * np.sinc(n + x)
    return t_g * (main - 0.5 * lower - 0.5 * upper)


@dataclass(frozen=True)
class FastDragSpec:
    """Stop-bands (baseband detunings from the carrier, GHz) and their weights."""

    bands: tuple
    weights: tuple
    n_components: int = 3
    target_angle: float = np.pi

    def __post_init__(self):
        if self.n_components < 1:
            raise ValueError("n_components must be >= 1")
        if len(self.bands) != len(self.weights) or not self.bands:
            raise ValueError("one weight per band required")
        if any(w < 0 for w in self.weights):
            raise ValueError("weights must be non-negative")
        if not any(w > 0 for w in self.weights):
            raise ValueError("at least one weight must be positive")
        ordered = sorted(self.bands)
        for lo, hi in ordered:
            if hi <= lo:
                raise ValueError(f"band ({lo}, {hi}) is empty")
        for (lo1, hi1), (lo2, hi2) in zip(ordered, ordered[1:]):
            if lo2 < hi1:
                raise ValueError("bands overlap")


def default_fast_drag_spec(transitions, f_d: float, rabi_rates: dict, width: float = 0.005,
                           n_components: int = 3) -> FastDragSpec:
    """Windows of ``width`` GHz around f_00, f_01, f_10 weighted by squared Rabi rates.

    ``transitions`` is a ``ConditionalTransitions``; ``rabi_rates`` maps
    ``"00"``, ``"01"``, ``"10"`` to conditional drive matrix elements.
    """
    freqs = transitions.as_dict()
    bands, weights = [], []
    for key in ("00", "01", "10"):
        centre = freqs[key] - f_d
        bands.append((centre - width / 2, centre + width / 2))
        weights.append(float(abs(rabi_rates[key]) ** 2))
    return FastDragSpec(tuple(bands), tuple(weights), n_components)


def band_matrix(spec: FastDragSpec, t_g: float) -> np.ndarray:
    """``A_nm = sum_i w_i int_band_i Re(g_n(f) conj(g_m(f))) df``, symmetric."""
    n = np.arange(1, spec.n_components + 1)

    def integrand(f):
        g = np.array([gn_fourier(k, t_g, f) for k in n])
        return np.real(np.outer(g, g.conj()))

    mat = np.zeros((spec.n_components, spec.n_components))
    for (lo, hi), w in zip(spec.bands, spec.weights):
        if w == 0:
            continue
        val, _ = quad_vec(integrand, lo, hi, epsabs=1e-12 * t_g**2, epsrel=1e-12, quadrature="gk21")
        mat += w * val
    return 0.5 * (mat + mat.T)


def fast_drag_objective(coefficients, spec: FastDragSpec, t_g: float) -> float:
    c = np.asarray(coefficients, dtype=float)
    return float(c @ band_matrix(spec, t_g) @ c)


def solve_fast_drag(spec: FastDragSpec, t_g: float, matrix: np.ndarray | None = None) -> np.ndarray:
    """Coefficients minimizing the weighted stop-band power with ``sum(c) t_g = target_angle``.

    Solves the bordered Lagrange system
    ``[[A + A^T, -b], [b^T, 0]] (c, mu) = (0, target_angle)`` with ``b = t_g``.
    """
    a_mat = band_matrix(spec, t_g) if matrix is None else matrix
    n = spec.n_components
    b = np.full(n, float(t_g))
    kkt = np.zeros((n + 1, n + 1))
    kkt[:n, :n] = a_mat + a_mat.T
    kkt[:n, n] = -b
    kkt[n, :n] = b
    rhs = np.zeros(n + 1)
    rhs[n] = spec.target_angle
    if np.linalg.cond(kkt) > 1e15:
        raise np.linalg.LinAlgError("FAST-DRAG system is singular")
    sol = np.linalg.solve(kkt, rhs)
    c = sol[:n]
    # one Newton-style correction keeps the constraint residual at rounding level
    c = c + (spec.target_angle - b @ c) / (b @ b) * b
    return c


def fast_drag_envelope(coefficients, t_g: float, amplitude_scale: float = 1.0,
                       sample_rate: float = 10.0, delta: float | None = None) -> PulseEnvelope:
    """``I(t) = A sum_n c_n (1 - cos(2 pi n t/t_g))`` plus DRAG quadrature if ``delta`` (GHz) is given."""
    c = np.asarray(coefficients, dtype=float)
    env = _from_series(amplitude_scale * c, t_g, sample_rate, "fast_drag",
                       coefficients=tuple(map(float, c)), amplitude_scale=float(amplitude_scale))
    if delta is not None:
        env = drag_quadrature(env, delta)
    return env


def band_power(coefficients, t_g: float, band) -> float:
    """Exact ``int_band |sum_n c_n g_n(f)|^2 df`` of the in-phase series."""
    c = np.asarray(coefficients, dtype=float)

    def integrand(f):
        return abs(sum(ck * gn_fourier(k + 1, t_g, f) for k, ck in enumerate(c))) ** 2

    val, _ = quad_vec(integrand, band[0], band[1], epsabs=0.0, epsrel=1e-12)
    return float(val)


def cosine_reference(t_g: float, target_angle: float = np.pi) -> np.ndarray:
    """Single-component coefficients with the same constrained area."""
    return np.array([target_angle / t_g])


@dataclass(frozen=True, eq=False)
class PulseSpectrum:
    """Spectrum of the carrier-shifted complex envelope ``(I + iQ) exp(2 pi i f_d t)``."""

    frequencies: np.ndarray
    amplitude: np.ndarray
    amplitude_i: np.ndarray
    band_power_db: dict
    time_energy: float
    spectral_energy: float

    @property
    def parseval_error(self) -> float:
        return abs(self.spectral_energy - self.time_energy) / self.time_energy


def _dtft(envelope: PulseEnvelope, f_d: float, freqs, use_q=True):
    t = envelope.times
    dt = t[1] - t[0]
    z = envelope.i_samples + (1j * envelope.q_samples if use_q else 0)
    out = np.empty(len(freqs), complex)
    for start in range(0, len(freqs), 512):
        chunk = np.asarray(freqs[start:start + 512]) - f_d
        out[start:start + 512] = dt * np.exp(-2j * np.pi * np.outer(chunk, t)) @ z
    return out


def pulse_spectrum(envelope: PulseEnvelope, f_d: float, grid=None, bands=None,
                   reference: PulseEnvelope | None = None, points_per_band: int = 201) -> PulseSpectrum:
    """DTFT of the sampled complex envelope, shifted to the carrier ``f_d``.

    ``grid`` defaults to one Nyquist band around ``f_d`` at 1/(8 t_g)
    resolution. ``bands`` maps names to ``(f_low, f_high)`` in absolute GHz;
    their integrated power is reported in dB relative to ``reference`` (or
    in absolute units if no reference is given).
    """
    n = len(envelope.i_samples)
    dt = envelope.t_g / (n - 1)
    if grid is None:
        m = 8 * n
        grid = f_d + (np.arange(m) - m // 2) / (m * dt)
    grid = np.asarray(grid, dtype=float)
    full = _dtft(envelope, f_d, grid)
    in_phase = _dtft(envelope, f_d, grid, use_q=False)

    time_energy = float(np.sum(np.abs(envelope.i_samples + 1j * envelope.q_samples) ** 2) * dt)
    # Parseval over one period of the DTFT, sampled at its natural resolution
    m = 8 * n
    period = f_d + (np.arange(m) - m // 2) / (m * dt)
    spectral_energy = float(np.sum(np.abs(_dtft(envelope, f_d, period)) ** 2) / (m * dt))

    report = {}
    for name, (lo, hi) in (bands or {}).items():
        sub = np.linspace(lo, hi, points_per_band)
        power = np.trapezoid(np.abs(_dtft(envelope, f_d, sub)) ** 2, sub)
        if reference is not None:
            ref = np.trapezoid(np.abs(_dtft(reference, f_d, sub)) ** 2, sub)
            report[name] = float(10 * np.log10(power / ref))
        else:
            report[name] = float(10 * np.log10(power))
    return PulseSpectrum(grid, full, in_phase, report, time_energy, spectral_energy)
