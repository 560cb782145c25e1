"""Atomic CSV/JSON writers, run manifests and report figures."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import platform
import tempfile
from pathlib import Path

import numpy as np


def atomic_write_text(path, text: str) -> Path:
    """Write via a temporary file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    return obj


def to_json(obj) -> str:
    return json.dumps(_plain(obj), indent=2, sort_keys=True)


def write_json(path, obj) -> Path:
    return atomic_write_text(path, to_json(obj) + "\n")


def write_csv(path, header, rows) -> Path:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_cell(v) for v in row])
    return atomic_write_text(path, buf.getvalue())


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def inputs_hash(payload) -> str:
    return hashlib.sha256(json.dumps(_plain(payload), sort_keys=True).encode()).hexdigest()


def versions() -> dict:
    import matplotlib
    import scipy
    import yaml

    from . import __version__

    return {"ftfsim": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "matplotlib": matplotlib.__version__, "pyyaml": yaml.__version__}


# ---------------------------------------------------------------- figures

def _figure():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def save_figure(fig, path) -> Path:
    """Render to a temporary file then rename, like the data outputs."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.stem}.", suffix=path.suffix)
    os.close(fd)
    try:
        fig.savefig(tmp, dpi=120, bbox_inches="tight")
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)
        _figure().close(fig)
    return path


def plot_spectrum_peaks(tables: dict, path):
    """Lorentzian coupler peaks per flux setting; ``tables[flux] = {'00': f, ...}``."""
    plt = _figure()
    fig, ax = plt.subplots(figsize=(6, 3))
    lo = min(min(t.values()) for t in tables.values()) - 0.03
    hi = max(max(t.values()) for t in tables.values()) + 0.03
    f = np.linspace(lo, hi, 2000)
    for flux, table in tables.items():
        for state, f0 in table.items():
            line = 1.0 / (1 + ((f - f0) / 0.002) ** 2)
            ax.plot(f, line, lw=1)
            ax.annotate(state, (f0, 1.02), ha="center", fontsize=7)
    ax.set_xlabel("drive frequency (GHz)")
    ax.set_ylabel("coupler response (arb.)")
    ax.set_ylim(0, 1.15)
    return save_figure(fig, path)


def plot_zz_map(result, path, device_point=None):
    plt = _figure()
    fig, ax = plt.subplots(figsize=(5, 4))
    z = np.log10(np.maximum(np.abs(result.chi_zz), 1e-6))
    mesh = ax.pcolormesh(result.g_ic, result.g_12, z, shading="auto", cmap="viridis")
    fig.colorbar(mesh, ax=ax, label="log10 |chi_ZZ| (kHz)")
    if device_point is not None:
        ax.plot(device_point[1], device_point[0], "o", mfc="none", mec="r", ms=10)
    ax.set_xlabel("g_ic (MHz)")
    ax.set_ylabel("g_12 (MHz)")
    return save_figure(fig, path)


def plot_rabi(result, path):
    plt = _figure()
    fig, axes = plt.subplots(4, 1, figsize=(6, 6), sharex=True)
    for ax, (state, p) in zip(axes, result.populations.items()):
        ax.plot(result.times, p, lw=1)
        ax.set_ylabel(f"|{state}>")
    axes[-1].set_xlabel("time (ns)")
    return save_figure(fig, path)


def plot_envelope(env, path):
    plt = _figure()
    fig, ax = plt.subplots(figsize=(5, 3))
    peak = env.peak or 1.0
    ax.plot(env.times, env.i_samples / peak, label="I")
    ax.plot(env.times, env.q_samples / peak, label="Q")
    ax.set_xlabel("time (ns)")
    ax.set_ylabel("normalized amplitude")
    ax.legend()
    return save_figure(fig, path)


def plot_pulse_spectra(spectra: dict, markers: dict, path):
    plt = _figure()
    fig, ax = plt.subplots(figsize=(6, 3))
    for kind, spec in spectra.items():
        ax.semilogy(spec.frequencies, np.maximum(np.abs(spec.amplitude), 1e-12), label=kind, lw=1)
    for name, f in markers.items():
        ax.axvline(f, color="k", lw=0.5, ls=":")
        ax.annotate(name, (f, 1.0), xycoords=("data", "axes fraction"), ha="center", va="bottom", fontsize=7)
    ax.set_xlabel("frequency (GHz)")
    ax.set_ylabel("|Fourier amplitude|")
    ax.legend(fontsize=7)
    return save_figure(fig, path)


def plot_populations(times, populations: dict, path):
    plt = _figure()
    fig, ax = plt.subplots(figsize=(5, 3))
    for key, p in populations.items():
        ax.plot(times, p, label=f"p_{key[0]}1{key[1]}")
    ax.set_xlabel("time (ns)")
    ax.set_ylabel("coupler population")
    ax.legend(fontsize=7)
    return save_figure(fig, path)


def plot_amplitude_map(amap, f_d, amplitude, path):
    plt = _figure()
    fig, ax = plt.subplots(figsize=(5, 4))
    mesh = ax.pcolormesh(amap.frequencies, amap.amplitude_grid, amap.return_population.T, shading="auto")
    fig.colorbar(mesh, ax=ax, label="return population |101>")
    ok = amap.valid
    ax.plot(amap.frequencies[ok], amap.recovery_amplitude[ok], "wo", ms=3)
    f = np.linspace(*amap.span, 200)
    ax.plot(f, amap.amplitude_at(f), "w-", lw=1)
    ax.plot([f_d], [amplitude], "r*", ms=10)
    ax.set_xlabel("drive frequency (GHz)")
    ax.set_ylabel("pulse area (rad)")
    return save_figure(fig, path)


def plot_fidelity_bands(rows, path):
    plt = _figure()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    kinds = sorted({r.pulse_kind for r in rows})
    for kind in kinds:
        pts = {}
        for r in rows:
            if r.pulse_kind == kind and r.error is None:
                pts.setdefault(r.t_g, []).append(1 - r.f_g)
        if not pts:
            continue
        t = np.array(sorted(pts))
        lo = np.array([min(pts[x]) for x in t])
        hi = np.array([max(pts[x]) for x in t])
        ax.fill_between(t, lo, hi, alpha=0.3, label=kind)
    ax.axhline(0.01, color="k", ls="--", lw=0.8)
    ax.set_yscale("log")
    ax.set_xlabel("gate time (ns)")
    ax.set_ylabel("CZ infidelity")
    ax.legend(fontsize=7)
    return save_figure(fig, path)
