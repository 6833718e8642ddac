"""Quadrature-space linear algebra for 2x2 spectral matrices.

Basis ordering is (amplitude, phase). Shot noise is the identity matrix and a
positive angle rotates from the amplitude toward the phase quadrature.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError

HERMITIAN_RTOL = 1e-12
PSD_ATOL = 1e-12
DEGENERATE_TOL = 1e-12


@dataclass(frozen=True)
class SpectralMatrix:
    """Quadrature PSD matrix at one sideband frequency, or a stack of them.

    ``m`` has shape (2, 2) or (N, 2, 2); ``freq`` is a scalar or length-N array.
    """

    freq: float | np.ndarray
    m: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.m, dtype=complex)
        if m.shape[-2:] != (2, 2):
            raise DomainError(f"spectral matrix must be 2x2, got shape {m.shape}")
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "freq", np.asarray(self.freq, dtype=float) if np.ndim(self.freq) else float(self.freq))

    def validate(self, rtol=HERMITIAN_RTOL, atol=PSD_ATOL):
        """Raise DomainError unless Hermitian and positive semidefinite."""
        m = self.m
        scale = np.max(np.abs(m), axis=(-2, -1), keepdims=True) + 1e-300
        if np.any(np.abs(m - np.conj(np.swapaxes(m, -1, -2))) > rtol * scale):
            raise DomainError("spectral matrix is not Hermitian")
        herm = 0.5 * (m + np.conj(np.swapaxes(m, -1, -2)))
        if np.any(np.linalg.eigvalsh(herm) < -atol * np.maximum(scale[..., 0], 1.0)):
            raise DomainError("spectral matrix is not positive semidefinite")
        return self

    def __add__(self, other):
        if not isinstance(other, SpectralMatrix):
            return NotImplemented
        return SpectralMatrix(self.freq, self.m + other.m)

    def scaled(self, factor):
        return SpectralMatrix(self.freq, np.asarray(factor)[..., None, None] * self.m)

    def __getitem__(self, idx):
        if self.m.ndim == 2:
            raise IndexError("single spectral matrix is not indexable")
        return SpectralMatrix(np.asarray(self.freq)[idx], self.m[idx])

    def __len__(self):
        return 1 if self.m.ndim == 2 else self.m.shape[0]


def identity(freq=0.0):
    """Shot-noise (vacuum) spectral matrix, broadcast to ``freq``."""
    f = np.asarray(freq, dtype=float)
    m = np.broadcast_to(np.eye(2, dtype=complex), f.shape + (2, 2)).copy()
    return SpectralMatrix(freq, m)


def diag(a, b, freq=0.0):
    return SpectralMatrix(freq, np.diag([a, b]).astype(complex))


def normalize_angle(phi):
    """Map a quadrature angle onto [0, pi)."""
    out = np.mod(phi, np.pi)
    # mod can land exactly on pi for tiny negative inputs
    out = np.where(out >= np.pi, 0.0, out)
    return float(out) if np.ndim(out) == 0 else out


def rotation(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def unit(phi):
    """Unit vector U(phi) = (cos phi, sin phi); stacked along axis 0 for arrays."""
    return np.array([np.cos(phi), np.sin(phi)])


def rotate(s: SpectralMatrix, theta) -> SpectralMatrix:
    r = rotation(theta)
    return SpectralMatrix(s.freq, r @ s.m @ r.T)


def project(s: SpectralMatrix, phi):
    """PSD measured along quadrature ``phi``: U(phi)^T . m . U(phi).

    ``phi`` may be an array; the result then has shape ``phi.shape + m.shape[:-2]``.
    Only the real symmetric part of ``m`` contributes for a real unit vector.
    """
    phi = np.asarray(phi, dtype=float)
    re = s.m.real
    c, sn = np.cos(phi), np.sin(phi)
    # expand angles over the frequency axes of m
    extra = (None,) * (re.ndim - 2)
    c = c[(...,) + extra]
    sn = sn[(...,) + extra]
    a, b, d = re[..., 0, 0], 0.5 * (re[..., 0, 1] + re[..., 1, 0]), re[..., 1, 1]
    out = c * c * a + 2 * c * sn * b + sn * sn * d
    return float(out) if np.ndim(out) == 0 else out


def extremal_quadratures(s: SpectralMatrix):
    """Return (phi_min, psd_min, phi_max, psd_max) for a single spectral matrix.

    Extremes are taken over real quadrature angles, i.e. from the eigensystem of
    the real symmetric part. Equal eigenvalues give phi_min = 0 by convention.
    """
    if s.m.ndim != 2:
        raise DomainError("extremal_quadratures expects a single 2x2 matrix; use extremal_quadratures_many")
    re = 0.5 * (s.m.real + s.m.real.T)
    w, v = np.linalg.eigh(re)
    if abs(w[1] - w[0]) <= DEGENERATE_TOL * max(1.0, abs(w[1])):
        return 0.0, float(w[0]), np.pi / 2, float(w[1])
    phi_min = normalize_angle(np.arctan2(v[1, 0], v[0, 0]))
    phi_max = normalize_angle(phi_min + np.pi / 2)
    return phi_min, float(w[0]), phi_max, float(w[1])


def extremal_quadratures_many(s: SpectralMatrix):
    """Vectorized extremal_quadratures over a stack; returns four arrays."""
    re = s.m.real
    a, b, d = re[..., 0, 0], 0.5 * (re[..., 0, 1] + re[..., 1, 0]), re[..., 1, 1]
    mean = 0.5 * (a + d)
    half = np.hypot(0.5 * (a - d), b)
    psd_min, psd_max = mean - half, mean + half
    # projection is mean + half*cos(2(phi - phi_max)); minimum a quarter turn away
    phi_max = 0.5 * np.arctan2(2 * b, a - d)
    degenerate = half <= DEGENERATE_TOL * np.maximum(1.0, np.abs(psd_max))
    phi_min = np.where(degenerate, 0.0, normalize_angle(phi_max + np.pi / 2))
    phi_max = np.where(degenerate, np.pi / 2, normalize_angle(phi_max))
    return phi_min, psd_min, phi_max, psd_max


def psd_to_db(p):
    p = np.asarray(p, dtype=float)
    if np.any(~(p > 0)):
        raise DomainError("PSD must be strictly positive to convert to dB")
    out = 10.0 * np.log10(p)
    return float(out) if out.ndim == 0 else out


def db_to_psd(d):
    out = 10.0 ** (np.asarray(d, dtype=float) / 10.0)
    return float(out) if out.ndim == 0 else out


def frequency_grid(points):
    """Validate and return a strictly increasing array of positive frequencies."""
    f = np.asarray(points, dtype=float).ravel()
    if f.size == 0:
        raise DomainError("frequency grid is empty")
    if np.any(~np.isfinite(f)) or np.any(f <= 0):
        raise DomainError("frequency grid must contain finite positive values")
    if np.any(np.diff(f) <= 0):
        raise DomainError("frequency grid must be strictly increasing")
    return f


def log_grid(f_lo, f_hi, n):
    return frequency_grid(np.geomspace(f_lo, f_hi, n))
