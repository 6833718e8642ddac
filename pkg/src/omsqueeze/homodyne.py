"""Single-photodiode (unbalanced) homodyne detection.

The signal couples to the detector with amplitude ``t`` and the local
oscillator with amplitude ``r``; the LO phasor sits at angle ``theta`` from the
signal carrier. The measured quadrature is the direction of the resultant
carrier, so it can be tuned with the LO power at fixed detected power.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import constants

from . import qspace
from .errors import DegenerateGeometryError, DomainError, QuadratureOutOfRange

H_PLANCK = constants.h
C_LIGHT = constants.c


@dataclass(frozen=True)
class BeamSplitter:
    """Power reflectivity R; the LO is reflected (weight r^2), the signal transmitted."""

    power_reflectivity: float

    def __post_init__(self):
        if not 0 <= self.power_reflectivity <= 1:
            raise DomainError("power reflectivity must lie in [0, 1]")

    @property
    def r(self):
        return float(np.sqrt(self.power_reflectivity))

    @property
    def t(self):
        return float(np.sqrt(1 - self.power_reflectivity))


@dataclass(frozen=True)
class HomodyneGeometry:
    e_s: float
    e_lo: float
    theta: float
    visibility: float = 1.0

    def __post_init__(self):
        if self.e_s < 0 or self.e_lo < 0:
            raise DomainError("carrier amplitudes must be non-negative")
        if not 0 <= self.visibility <= 1:
            raise DomainError("visibility must lie in [0, 1]")


@dataclass(frozen=True)
class DetectionResult:
    phi_s: float
    phi_lo: float
    e_sqz: float
    detected_power: float


def resultant(g: HomodyneGeometry, bs: BeamSplitter) -> DetectionResult:
    """Resultant carrier t*E_S + r*R(theta)*E_LO and the quadratures it selects."""
    sx = bs.t * g.e_s
    lx = bs.r * g.e_lo
    x = sx + lx * np.cos(g.theta)
    y = lx * np.sin(g.theta)
    e_sqz = float(np.hypot(x, y))
    if e_sqz <= 1e-15 * max(sx, lx, 1e-300):
        raise DegenerateGeometryError("signal and LO carriers cancel; measurement quadrature undefined")
    phi_s = qspace.normalize_angle(np.arctan2(y, x))
    phi_lo = float(np.arctan2(-sx * np.sin(g.theta), lx + sx * np.cos(g.theta)))
    return DetectionResult(phi_s, phi_lo, e_sqz, e_sqz**2)


def measured_psd_at(s_signal: qspace.SpectralMatrix, phi, bs: BeamSplitter, visibility=1.0):
    """Detected PSD (shot = 1) for the signal measured along ``phi``.

    Mode mismatch mixes the signal toward vacuum with weight 1 - V^2, then the
    combiner adds r^2 of shot-noise-limited LO.
    """
    v2 = visibility**2
    return bs.t**2 * (v2 * qspace.project(s_signal, phi) + (1 - v2)) + bs.r**2


def measured_psd(s_signal: qspace.SpectralMatrix, g: HomodyneGeometry, bs: BeamSplitter):
    res = resultant(g, bs)
    return measured_psd_at(s_signal, res.phi_s, bs, g.visibility)


def max_reachable_angle(detected_power, signal_power, max_lo_power):
    """Largest measurement quadrature reachable with LO power <= ``max_lo_power``.

    Powers are at the detector: ``signal_power`` = |t E_S|^2, LO = |r E_LO|^2.
    """
    if max_lo_power is None:
        return np.pi / 2
    num = detected_power + signal_power - max_lo_power
    den = 2 * np.sqrt(detected_power * signal_power)
    if den == 0:
        return 0.0
    cos_max = num / den
    if cos_max <= 0:
        return np.pi / 2
    if cos_max >= 1:
        return 0.0
    return float(np.arccos(cos_max))


def lo_power_for_quadrature(target_phi, detected_power, e_s, bs: BeamSplitter, max_lo_power=30e-6):
    """LO power and angle that select ``target_phi`` at fixed detected power.

    Returns (lo_power, theta) with lo_power = |r E_LO|^2, the LO power reaching
    the detector. The resultant is pinned to sqrt(P_det) along ``target_phi``;
    the LO phasor closes the triangle with the transmitted signal.
    """
    if not detected_power > 0:
        raise DomainError("detected power must be positive")
    phi = float(target_phi)
    # a quadrature and its pi-rotation are the same axis; pick the branch nearest the signal
    phi = np.mod(phi + np.pi / 2, np.pi) - np.pi / 2
    sx = bs.t * e_s
    ex = np.sqrt(detected_power) * np.cos(phi)
    ey = np.sqrt(detected_power) * np.sin(phi)
    lx, ly = ex - sx, ey
    lo_power = float(lx * lx + ly * ly)
    if max_lo_power is not None and lo_power > max_lo_power * (1 + 1e-12):
        raise QuadratureOutOfRange(float(target_phi), max_reachable_angle(detected_power, sx * sx, max_lo_power))
    theta = float(np.arctan2(ly, lx)) if lo_power > 0 else 0.0
    return lo_power, theta


def geometry_for_quadrature(target_phi, detected_power, signal_power, bs: BeamSplitter,
                            visibility=1.0, max_lo_power=30e-6) -> HomodyneGeometry:
    """Fixed-detected-power scan point; ``signal_power`` is |t E_S|^2 at the detector."""
    e_s = np.sqrt(signal_power) / bs.t
    lo_power, theta = lo_power_for_quadrature(target_phi, detected_power, e_s, bs, max_lo_power)
    e_lo = np.sqrt(lo_power) / bs.r if bs.r > 0 else 0.0
    return HomodyneGeometry(e_s, e_lo, theta, visibility)


def photon_energy(wavelength=1064e-9):
    return H_PLANCK * C_LIGHT / wavelength


def shot_noise_level(detected_power, wavelength=1064e-9):
    """Single-sided shot-noise PSD of optical power, 2 h nu P, in W^2/Hz."""
    if not detected_power > 0:
        raise DomainError("detected power must be positive")
    return 2 * photon_energy(wavelength) * detected_power


def synthesize_lo_only(detected_power, fs, n_samples, seed, wavelength=1064e-9, dark_psd=0.0):
    """White power fluctuations (W) of a shot-noise-limited beam plus optional dark noise."""
    psd = shot_noise_level(detected_power, wavelength) + dark_psd
    rng = np.random.default_rng(seed)
    return rng.standard_normal(n_samples) * np.sqrt(psd * fs / 2)


def shot_noise_reference(detected_power, wavelength=1064e-9, series=None, fs=None, band=None,
                         segment_length=4096):
    """The 0 dB normalization in W^2/Hz.

    Without ``series`` this is the analytic level. With an LO-only record it is
    the band-averaged Welch PSD of that record, as done on the bench.
    """
    if series is None:
        return shot_noise_level(detected_power, wavelength)
    from .corrlab import EstimatorConfig, welch_psd

    f, p = welch_psd(np.asarray(series, dtype=float), fs, EstimatorConfig(segment_length=segment_length))
    lo, hi = band if band is not None else (f[1], f[-2])
    sel = (f >= lo) & (f <= hi)
    if not np.any(sel):
        raise DomainError("averaging band contains no frequency bins")
    return float(np.mean(p[sel]))
