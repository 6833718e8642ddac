"""Linearized quantum-noise model of a detuned cavity with a movable end mirror.

Single optical mode, quadrature (two-photon) picture, full cavity response kept.
Three vacuum ports couple to the mode: input coupler, output coupler (the
cantilever mirror, whose transmission is the signal) and round-trip loss. The
mirror moves under radiation pressure, thermal force and the zero-point force
of its own mechanical bath.

Conventions: the intracavity carrier is real, so the amplitude quadrature of
the transmitted field is the first basis vector. Positive detuning is blue
(laser above cavity resonance), which stiffens the optical spring. Quadrature
PSDs are two-sided symmetrized with vacuum = 1; single-sided classical spectra
are halved on entry.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import constants, optimize

from . import qspace
from .errors import DomainError

HBAR = constants.hbar
C_LIGHT = constants.c
K_B = constants.k
PPM = 1e-6


class Damping(str, Enum):
    STRUCTURAL = "structural"
    VISCOUS = "viscous"


@dataclass(frozen=True)
class CavityParams:
    length: float = 0.01
    wavelength: float = 1064e-9
    t_in_ppm: float = 50.0
    t_out_ppm: float = 250.0
    loss_ppm: float = 250.0
    detuning: float = 0.33
    p_circ: float = 0.26

    def __post_init__(self):
        for name in ("t_in_ppm", "t_out_ppm", "loss_ppm"):
            v = getattr(self, name)
            if not 0 <= v < 1e4:
                raise DomainError(f"{name} must lie in [0, 1e4) ppm, got {v}")
        if not self.length > 0:
            raise DomainError("cavity length must be positive")
        if not self.wavelength > 0:
            raise DomainError("wavelength must be positive")
        if not self.p_circ >= 0:
            raise DomainError("circulating power must be non-negative")
        if not np.isfinite(self.detuning):
            raise DomainError("detuning must be finite")

    @property
    def round_trip_loss(self):
        return (self.t_in_ppm + self.t_out_ppm + self.loss_ppm) * PPM

    @property
    def finesse(self):
        if self.round_trip_loss <= 0:
            raise DomainError("zero total round-trip loss: finesse is unbounded")
        return 2 * np.pi / self.round_trip_loss

    @property
    def kappa(self):
        """HWHM amplitude decay rate in rad/s."""
        return 2 * np.pi * linewidth_hwhm(self)

    def port_rates(self):
        """Amplitude decay rates (rad/s) through input, output and loss ports."""
        scale = C_LIGHT / (4 * self.length) * PPM
        return self.t_in_ppm * scale, self.t_out_ppm * scale, self.loss_ppm * scale

    @property
    def omega_laser(self):
        return 2 * np.pi * C_LIGHT / self.wavelength

    @property
    def photon_number(self):
        return self.p_circ * 2 * self.length / (HBAR * self.omega_laser * C_LIGHT)

    @property
    def pull(self):
        """Cavity frequency shift per unit mirror displacement, rad/s/m."""
        return self.omega_laser / self.length


@dataclass(frozen=True)
class MechanicalMode:
    """Lumped mechanical mode; ``mass`` is the effective mass at the beam spot."""

    mass: float
    f0: float
    q: float
    damping_model: Damping = Damping.STRUCTURAL

    def __post_init__(self):
        if not self.mass > 0:
            raise DomainError("modal mass must be positive")
        if not self.f0 > 0:
            raise DomainError("resonance frequency must be positive")
        if not self.q > 1:
            raise DomainError("quality factor must exceed 1")
        object.__setattr__(self, "damping_model", Damping(self.damping_model))

    def dissipation(self, omega):
        """Imaginary part of m * (w0^2 - W^2 - i*damp), i.e. -Im(1/chi), in N/m."""
        w0 = 2 * np.pi * self.f0
        if np.isinf(self.q):
            return np.zeros_like(np.asarray(omega, dtype=float))
        if self.damping_model is Damping.STRUCTURAL:
            return self.mass * w0**2 / self.q * np.ones_like(np.asarray(omega, dtype=float))
        return self.mass * w0 * np.asarray(omega, dtype=float) / self.q

    def susceptibility(self, omega):
        """Displacement per force, m/N, at angular frequency ``omega``."""
        w0 = 2 * np.pi * self.f0
        omega = np.asarray(omega, dtype=float)
        return 1.0 / (self.mass * (w0**2 - omega**2) - 1j * self.dissipation(omega))


@dataclass(frozen=True)
class EnvironmentParams:
    temperature: float = 295.0

    def __post_init__(self):
        if not self.temperature >= 0:
            raise DomainError("temperature must be non-negative")


def linewidth_hwhm(c: CavityParams):
    """Cavity HWHM linewidth in Hz: c / (4 L F)."""
    return C_LIGHT / (4 * c.length * c.finesse)


def escape_efficiency(c: CavityParams):
    total = c.t_in_ppm + c.t_out_ppm + c.loss_ppm
    if total <= 0:
        raise DomainError("zero total round-trip loss")
    return c.t_out_ppm / total


def optical_spring(c: CavityParams, m: MechanicalMode | None, omega):
    """Complex optical stiffness K(f) in N/m at sideband frequency ``omega`` (Hz).

    K(W) = 2 hbar G^2 n Delta / ((kappa - iW)^2 + Delta^2). The mode argument
    is accepted for symmetry with the other mechanical helpers; the stiffness
    itself does not depend on it.
    """
    W = 2 * np.pi * np.asarray(omega, dtype=float)
    kap = c.kappa
    delta = c.detuning * kap
    coupling = 2 * HBAR * c.pull**2 * c.photon_number
    out = coupling * delta / ((kap - 1j * W) ** 2 + delta**2)
    return complex(out) if np.ndim(out) == 0 else out


def spring_resonance(c: CavityParams, m: MechanicalMode, f_max=None):
    """Frequency (Hz) where m(2 pi f)^2 = k_mech + Re K(f).

    Returns None when no crossing exists below ``f_max`` (default: the cavity
    linewidth times ten).
    """
    k_mech = m.mass * (2 * np.pi * m.f0) ** 2

    def g(f):
        return k_mech + optical_spring(c, m, f).real - m.mass * (2 * np.pi * f) ** 2

    f_hi = f_max if f_max is not None else 10 * linewidth_hwhm(c)
    grid = np.geomspace(1.0, f_hi, 2000)
    vals = g(grid)
    sign = np.nonzero(np.diff(np.sign(vals)) < 0)[0]
    if sign.size == 0:
        return None
    i = sign[0]
    return optimize.brentq(g, grid[i], grid[i + 1], xtol=1e-9, rtol=1e-12)


def thermal_force_psd(m: MechanicalMode, env: EnvironmentParams, omega):
    """Single-sided classical thermal force PSD in N^2/Hz at ``omega`` (Hz)."""
    f = np.asarray(omega, dtype=float)
    w0 = 2 * np.pi * m.f0
    if m.damping_model is Damping.STRUCTURAL:
        if np.any(f <= 0):
            raise DomainError("structural thermal force PSD needs a positive frequency")
        out = 4 * K_B * env.temperature * m.mass * w0**2 / (m.q * 2 * np.pi * f)
    else:
        out = 4 * K_B * env.temperature * m.mass * w0 / m.q * np.ones_like(f)
    return float(out) if out.ndim == 0 else out


def zero_point_force_psd(m: MechanicalMode, omega):
    """Single-sided zero-point force PSD of the mechanical bath, 2 hbar |Im chi^-1|."""
    return 2 * HBAR * m.dissipation(2 * np.pi * np.asarray(omega, dtype=float))


@dataclass(frozen=True)
class CavityResponse:
    """Frequency-resolved transfer functions of the optomechanical cavity.

    port_transfers: (3, N, 2, 2) vacuum-port to output-quadrature matrices in
    the order input, output, loss. displacement_transfer: (N, 2) output
    quadratures per metre of displacement-type perturbation (thermal motion,
    cavity-feedback noise). mode_chi: (M, N) per-mode susceptibilities.
    """

    freq: np.ndarray
    port_transfers: np.ndarray
    displacement_transfer: np.ndarray
    mode_chi: np.ndarray
    modes: tuple = field(default_factory=tuple)

    def quantum_matrix(self, include_zero_point=True) -> qspace.SpectralMatrix:
        t = self.port_transfers
        m = np.einsum("pnij,pnkj->nik", t, np.conj(t))
        if include_zero_point and self.modes:
            s_x = np.zeros(self.freq.shape)
            for mode, chi in zip(self.modes, self.mode_chi):
                s_x = s_x + np.abs(chi) ** 2 * zero_point_force_psd(mode, self.freq)
            m = m + self._displacement_outer(s_x)
        return qspace.SpectralMatrix(self.freq, m)

    def thermal_matrix(self, env: EnvironmentParams) -> qspace.SpectralMatrix:
        s_x = np.zeros(self.freq.shape)
        for mode, chi in zip(self.modes, self.mode_chi):
            s_x = s_x + np.abs(chi) ** 2 * thermal_force_psd(mode, env, self.freq)
        return qspace.SpectralMatrix(self.freq, self._displacement_outer(s_x))

    def displacement_matrix(self, s_x) -> qspace.SpectralMatrix:
        """Output spectral matrix for a single-sided displacement PSD ``s_x`` (m^2/Hz)."""
        s_x = np.broadcast_to(np.asarray(s_x, dtype=float), self.freq.shape)
        if np.any(s_x < 0):
            raise DomainError("displacement PSD must be non-negative")
        return qspace.SpectralMatrix(self.freq, self._displacement_outer(s_x))

    def _displacement_outer(self, s_x):
        v = self.displacement_transfer
        return 0.5 * s_x[:, None, None] * v[:, :, None] * np.conj(v[:, None, :])

    def displacement_null(self):
        """Quadrature (rad, per frequency) that best rejects displacement noise.

        The transfer vector is complex, so the rejection is exact only when its
        real and imaginary parts are parallel; otherwise this is the minimum.
        """
        v = self.displacement_transfer
        outer = qspace.SpectralMatrix(self.freq, v[:, :, None] * np.conj(v[:, None, :]))
        phi_min, _, _, _ = qspace.extremal_quadratures_many(outer)
        return phi_min


def cavity_response(c: CavityParams, modes, freq) -> CavityResponse:
    """Solve the linearized cavity + mirror equations on a frequency grid (Hz)."""
    f = np.atleast_1d(np.asarray(freq, dtype=float))
    if np.any(f <= 0):
        raise DomainError("sideband frequencies must be positive")
    modes = tuple(modes)
    W = 2 * np.pi * f
    kap = c.kappa
    delta = c.detuning * kap
    rates = c.port_rates()
    k_out = rates[1]

    mode_chi = np.array([mode.susceptibility(W) for mode in modes]) if modes else np.zeros((0, f.size), complex)
    chi = mode_chi.sum(axis=0) if modes else np.zeros(f.size, complex)
    # radiation-pressure back-action gain, X1 -> X2 through the mirror
    k = 2 * HBAR * c.pull**2 * c.photon_number * chi

    u = kap - 1j * W
    det = u * u + delta * (delta + k)
    ainv = np.empty((f.size, 2, 2), complex)
    ainv[:, 0, 0] = u / det
    ainv[:, 0, 1] = -delta / det
    ainv[:, 1, 0] = (delta + k) / det
    ainv[:, 1, 1] = u / det

    eye = np.eye(2)
    transfers = np.empty((3, f.size, 2, 2), complex)
    for p, rate in enumerate(rates):
        transfers[p] = 2 * np.sqrt(k_out * rate) * ainv
        if p == 1:
            transfers[p] -= eye

    amp = np.sqrt(c.photon_number)
    disp = np.sqrt(2 * k_out) * 2 * c.pull * amp * ainv[:, :, 1]
    return CavityResponse(f, transfers, disp, mode_chi, modes)


def output_spectral_matrix(c: CavityParams, modes, env: EnvironmentParams, omega) -> qspace.SpectralMatrix:
    """Transmitted-field spectral matrix: vacuum ports, back-action and thermal motion."""
    resp = cavity_response(c, modes, omega)
    out = resp.quantum_matrix() + resp.thermal_matrix(env)
    if np.ndim(omega) == 0:
        return qspace.SpectralMatrix(float(omega), out.m[0])
    return out


def unit_crossings(s: qspace.SpectralMatrix):
    """Quadratures (rad) where the projected PSD equals 1, per frequency.

    Returns (lower, upper) with NaN where the matrix has no sub-unity direction.
    For a squeezed matrix these bound the squeezed arc around ``phi_min``.
    """
    phi_min, p_min, phi_max, p_max = qspace.extremal_quadratures_many(s)
    p_min, p_max = np.atleast_1d(p_min), np.atleast_1d(p_max)
    ok = (p_min < 1) & (p_max > 1)
    mean = 0.5 * (p_min + p_max)
    half = 0.5 * (p_max - p_min)
    # mean - half*cos(2 d) = 1, with d the offset from phi_min
    with np.errstate(invalid="ignore", divide="ignore"):
        d = 0.5 * np.arccos(np.clip((mean - 1) / np.where(ok, half, 1.0), -1, 1))
    lower = np.where(ok, np.atleast_1d(phi_min) - d, np.nan)
    upper = np.where(ok, np.atleast_1d(phi_min) + d, np.nan)
    return lower, upper
