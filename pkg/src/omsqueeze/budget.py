"""Noise budget over measurement quadrature and sideband frequency.

Every term is a PSD relative to shot noise on the squeezing detector. The
quantum term already contains the shot-noise floor; technical terms are excess
above zero, so the total is a plain sum.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize

from . import homodyne, omcavity, qspace
from .errors import ConfigError, DataError, DomainError, GridMismatchError

DARK_DEFAULT_DB = -12.0
DB_FLOOR_PSD = 1e-30


@dataclass(frozen=True)
class NoiseTerm:
    """Grid of PSD rel. shot; rows follow ``phis`` (rad), columns ``freqs`` (Hz)."""

    label: str
    phis: np.ndarray
    freqs: np.ndarray
    grid: np.ndarray

    def __post_init__(self):
        phis = np.atleast_1d(np.asarray(self.phis, dtype=float))
        freqs = np.atleast_1d(np.asarray(self.freqs, dtype=float))
        grid = np.asarray(self.grid, dtype=float)
        if grid.shape != (phis.size, freqs.size):
            raise GridMismatchError(
                f"{self.label}: grid shape {grid.shape} does not match ({phis.size}, {freqs.size})")
        if np.any(grid < 0):
            raise DomainError(f"{self.label}: PSD values must be non-negative")
        object.__setattr__(self, "phis", phis)
        object.__setattr__(self, "freqs", freqs)
        object.__setattr__(self, "grid", grid)

    def same_axes(self, other, rtol=1e-8):
        """Axes agree to ``rtol``, loose enough for grids read back from CSV."""
        return (self.phis.shape == other.phis.shape and self.freqs.shape == other.freqs.shape
                and np.allclose(self.phis, other.phis, rtol=rtol, atol=rtol * 1e-3)
                and np.allclose(self.freqs, other.freqs, rtol=rtol, atol=0))

    def at_quadrature(self, phi):
        """Spectrum along the grid row nearest ``phi`` (rad)."""
        i = int(np.argmin(np.abs(self.phis - phi)))
        return self.grid[i]

    def relabel(self, label):
        return replace(self, label=label)


@dataclass(frozen=True)
class ReferenceSpectrum:
    """Tabulated spectrum vs frequency, interpolated log-log (linear in value if any zero)."""

    freqs: np.ndarray
    values: np.ndarray

    def __call__(self, f):
        f = np.asarray(f, dtype=float)
        x, y = np.asarray(self.freqs, dtype=float), np.asarray(self.values, dtype=float)
        if np.all(y > 0):
            return np.exp(np.interp(np.log(f), np.log(x), np.log(y)))
        return np.interp(f, x, y)


@dataclass(frozen=True)
class PowerLaw:
    """level * (f / f_ref) ** exponent."""

    level: float
    f_ref: float
    exponent: float

    def __call__(self, f):
        return self.level * (np.asarray(f, dtype=float) / self.f_ref) ** self.exponent


@dataclass(frozen=True)
class RisingFloor:
    """Flat floor that rises as f^4 above a knee: level * (1 + (f / f_knee) ** 4)."""

    level: float
    f_knee: float

    def __call__(self, f):
        return self.level * (1 + (np.asarray(f, dtype=float) / self.f_knee) ** 4)


@dataclass(frozen=True)
class BudgetConfig:
    phis: np.ndarray
    freqs: np.ndarray
    excess_loss: float = 0.22
    phase_noise_quadrature: float = np.radians(17.0)
    phase_noise_ref: object = field(default_factory=lambda: PowerLaw(0.0, 1e4, -2.0))
    feedback_noise_ref: object = field(default_factory=lambda: RisingFloor(0.0, 1e5))
    rin_amplitude: float = 8e-9
    rin_coupling: float = 0.01
    dark_noise_rel_shot: float = 10 ** (DARK_DEFAULT_DB / 10)

    def __post_init__(self):
        object.__setattr__(self, "phis", np.atleast_1d(np.asarray(self.phis, dtype=float)))
        object.__setattr__(self, "freqs", qspace.frequency_grid(self.freqs))
        if np.any(np.diff(self.phis) <= 0):
            raise ConfigError("quadrature sweep must be strictly increasing")
        if not 0 <= self.excess_loss <= 1:
            raise ConfigError("excess_loss must lie in [0, 1]")
        if not 0 < self.phase_noise_quadrature <= np.pi / 2:
            raise ConfigError("phase-noise reference quadrature must lie in (0, pi/2]")
        for name in ("rin_amplitude", "rin_coupling", "dark_noise_rel_shot"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")


@dataclass(frozen=True)
class DetectionChain:
    """Losses between the cavity output and the squeezing detector."""

    bs1_transmission: float = 0.85
    bs2: homodyne.BeamSplitter = homodyne.BeamSplitter(0.035)
    visibility: float = 0.93
    detected_power: float = 49e-6
    wavelength: float = 1064e-9

    def efficiency(self, excess_loss=0.0):
        """Fraction of the cavity-output fluctuations reaching the detector."""
        return self.bs1_transmission * self.bs2.t**2 * self.visibility**2 * (1 - excess_loss)


@dataclass(frozen=True)
class ContourResult:
    freqs: np.ndarray
    lower: np.ndarray  # rad, NaN where absent
    upper: np.ndarray

    def present(self):
        return np.isfinite(self.lower) & np.isfinite(self.upper)


@dataclass(frozen=True)
class Budget:
    terms: dict
    total: NoiseTerm
    excess_loss: float

    def term(self, label):
        return self.terms[label]


# ---------------------------------------------------------------- elementary operations

def apply_excess_loss(s, eps):
    """Mix a PSD rel. shot toward 1: (1 - eps) s + eps."""
    if not 0 <= eps <= 1:
        raise DomainError(f"excess loss must lie in [0, 1], got {eps}")
    if isinstance(s, NoiseTerm):
        return replace(s, grid=(1 - eps) * s.grid + eps)
    out = (1 - eps) * np.asarray(s, dtype=float) + eps
    return float(out) if out.ndim == 0 else out


def phase_noise_term(cfg: BudgetConfig, phi):
    """Differential phase noise at quadrature ``phi`` (rad) vs cfg.freqs.

    The reference spectrum is what remains above shot at the reference
    quadrature; it scales as sin^2 and peaks at 90 degrees.
    """
    s_ref = np.sin(cfg.phase_noise_quadrature) ** 2
    if s_ref == 0:
        raise ConfigError("phase-noise reference quadrature of 0 cannot be scaled to 90 degrees")
    n_ref = np.asarray(cfg.phase_noise_ref(cfg.freqs), dtype=float)
    if np.any(n_ref < 0):
        raise DomainError("phase-noise reference spectrum must be non-negative")
    n90 = n_ref / s_ref
    phi = np.asarray(phi, dtype=float)
    return np.sin(phi)[..., None] ** 2 * n90


def displacement_noise_term(spectrum, response: omcavity.CavityResponse, phi, chain_efficiency=1.0):
    """Displacement-type noise (m^2/Hz, single-sided) seen at quadrature ``phi``.

    It passes through the same transfer as thermal motion, so every such term
    vanishes near the cavity's common displacement null.
    """
    s_x = np.asarray(spectrum(response.freq) if callable(spectrum) else spectrum, dtype=float)
    mat = response.displacement_matrix(s_x)
    return chain_efficiency * np.atleast_2d(qspace.project(mat, phi))


def rin_and_dark_terms(cfg: BudgetConfig, chain: DetectionChain):
    """Flat RIN and dark-noise terms (rel. shot) on the configured grid."""
    shot_rin = np.sqrt(2 * homodyne.photon_energy(chain.wavelength) / chain.detected_power)
    rin = cfg.rin_coupling * (cfg.rin_amplitude / shot_rin) ** 2
    shape = (cfg.phis.size, cfg.freqs.size)
    return (NoiseTerm("rin", cfg.phis, cfg.freqs, np.full(shape, rin)),
            NoiseTerm("dark", cfg.phis, cfg.freqs, np.full(shape, cfg.dark_noise_rel_shot)))


def assemble(terms, label="total") -> NoiseTerm:
    terms = list(terms)
    if not terms:
        raise GridMismatchError("nothing to assemble")
    first = terms[0]
    for t in terms[1:]:
        if not first.same_axes(t):
            raise GridMismatchError(f"term {t.label!r} is on a different grid than {first.label!r}")
    return NoiseTerm(label, first.phis, first.freqs, np.sum([t.grid for t in terms], axis=0))


def fit_excess_loss(measured: NoiseTerm, budget_without_loss: NoiseTerm, bounds=(0.0, 0.9)):
    """Scalar loss minimizing squared dB residuals over every (phi, f) cell.

    Dense scan at 1e-3 spacing, then bounded refinement around the best cell.
    """
    if not measured.same_axes(budget_without_loss):
        raise GridMismatchError("measured and budget grids differ")
    m, b = measured.grid, budget_without_loss.grid
    if not (np.all(np.isfinite(m)) and np.all(np.isfinite(b))):
        raise DataError("non-finite values in loss-fit inputs")
    if np.any(m <= 0) or np.any(b <= 0):
        raise DataError("loss fit needs strictly positive PSDs")
    log_m = np.log10(m)

    def cost(eps):
        return float(np.sum((np.log10((1 - eps) * b + eps) - log_m) ** 2))

    lo, hi = bounds
    scan = np.linspace(lo, hi, int(round((hi - lo) / 1e-3)) + 1)
    costs = np.array([cost(e) for e in scan])
    i = int(np.argmin(costs))
    a, z = scan[max(i - 1, 0)], scan[min(i + 1, scan.size - 1)]
    if a == z:
        return float(scan[i])
    res = optimize.minimize_scalar(cost, bounds=(a, z), method="bounded", options={"xatol": 1e-7})
    return float(res.x) if res.fun <= costs[i] else float(scan[i])


def shot_noise_contour(total: NoiseTerm) -> ContourResult:
    """Quadratures where the total crosses shot noise, per frequency.

    Within the sub-shot region around the per-frequency minimum, the lower
    crossing is where the total drops below 1 and the upper where it rises
    again; both are linearly interpolated. Absent (NaN) where min >= 1 or the
    region runs off the sweep.
    """
    phis = total.phis
    n_f = total.freqs.size
    lower = np.full(n_f, np.nan)
    upper = np.full(n_f, np.nan)
    excess = total.grid - 1.0
    for j in range(n_f):
        col = excess[:, j]
        k = int(np.argmin(col))
        if not col[k] < 0:
            continue
        lo = k
        while lo > 0 and col[lo - 1] < 0:
            lo -= 1
        hi = k
        while hi < col.size - 1 and col[hi + 1] < 0:
            hi += 1
        if lo > 0:
            a, b = col[lo - 1], col[lo]
            lower[j] = phis[lo - 1] + (phis[lo] - phis[lo - 1]) * a / (a - b)
        if hi < col.size - 1:
            a, b = col[hi], col[hi + 1]
            upper[j] = phis[hi] + (phis[hi + 1] - phis[hi]) * a / (a - b)
    return ContourResult(total.freqs, lower, upper)


# ---------------------------------------------------------------- full budget

@dataclass(frozen=True)
class Switches:
    """Which technical terms are on; the quantum and thermal terms always are."""

    phase: bool = True
    feedback: bool = True
    rin: bool = True
    dark: bool = True

    @classmethod
    def technical_off(cls):
        return cls(False, False, False, False)


def compute_budget(cavity: omcavity.CavityParams, modes, env: omcavity.EnvironmentParams,
                   chain: DetectionChain, cfg: BudgetConfig, switches: Switches = Switches(),
                   excess_loss=None) -> Budget:
    eps = cfg.excess_loss if excess_loss is None else excess_loss
    resp = omcavity.cavity_response(cavity, modes, cfg.freqs)
    phis = cfg.phis

    # after BS1 the signal is mixed with vacuum; the homodyne combiner and
    # visibility follow, then the fitted excess loss
    q_cav = resp.quantum_matrix()
    q_bs1 = qspace.SpectralMatrix(q_cav.freq, chain.bs1_transmission * q_cav.m
                                  + (1 - chain.bs1_transmission) * np.eye(2))
    det = homodyne.measured_psd_at(q_bs1, phis, chain.bs2, chain.visibility)
    quantum = NoiseTerm("quantum", phis, cfg.freqs, apply_excess_loss(np.atleast_2d(det), eps))

    gain = chain.efficiency(eps)
    thermal = NoiseTerm("thermal", phis, cfg.freqs,
                        gain * np.atleast_2d(qspace.project(resp.thermal_matrix(env), phis)))
    terms = {"quantum": quantum, "thermal": thermal}
    shape = (phis.size, cfg.freqs.size)
    zero = np.zeros(shape)

    fb = displacement_noise_term(cfg.feedback_noise_ref, resp, phis, gain) if switches.feedback else zero
    terms["feedback"] = NoiseTerm("feedback", phis, cfg.freqs, fb)
    ph = phase_noise_term(cfg, phis) if switches.phase else zero
    terms["phase"] = NoiseTerm("phase", phis, cfg.freqs, ph)
    rin, dark = rin_and_dark_terms(cfg, chain)
    terms["rin"] = rin if switches.rin else NoiseTerm("rin", phis, cfg.freqs, zero)
    terms["dark"] = dark if switches.dark else NoiseTerm("dark", phis, cfg.freqs, zero)
    total = assemble(terms.values())
    return Budget(terms, total, eps)


def scenario_expected(cavity, modes, env, chain, cfg: BudgetConfig, reduced_excess_loss=0.0) -> Budget:
    """Technical noises off and the excess loss lowered: the system's intrinsic limit."""
    return compute_budget(cavity, modes, env, chain, cfg, Switches.technical_off(), reduced_excess_loss)


def max_squeezing(total: NoiseTerm, f_range=None):
    """(squeezing dB as a positive number, phi rad, f Hz) at the grid minimum."""
    grid = total.grid
    sel = np.ones(total.freqs.size, bool)
    if f_range is not None:
        sel = (total.freqs >= f_range[0]) & (total.freqs <= f_range[1])
    sub = np.where(sel[None, :], grid, np.inf)
    i, j = np.unravel_index(np.argmin(sub), sub.shape)
    return -qspace.psd_to_db(grid[i, j]), float(total.phis[i]), float(total.freqs[j])


# ---------------------------------------------------------------- file formats

def _fmt(x):
    return format(float(x), ".9g")


def grid_csv(term: NoiseTerm) -> str:
    """First row: frequencies; first column: quadrature in degrees; cells in dB rel. shot.

    Exact zeros (a term switched off, phase noise at 0 degrees) are written at
    the -300 dB floor so every cell stays finite.
    """
    buf = io.StringIO()
    buf.write("phi_deg\\freq_hz," + ",".join(_fmt(f) for f in term.freqs) + "\n")
    db = 10 * np.log10(np.maximum(term.grid, DB_FLOOR_PSD))
    for i, phi in enumerate(term.phis):
        buf.write(_fmt(np.degrees(phi)) + "," + ",".join(_fmt(v) for v in db[i]) + "\n")
    return buf.getvalue()


def read_grid_csv(text, label="measured") -> NoiseTerm:
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if len(lines) < 2:
        raise DataError("grid CSV needs a header row and at least one data row")
    try:
        freqs = np.array([float(v) for v in lines[0].split(",")[1:]])
        rows = [[float(v) for v in ln.split(",")] for ln in lines[1:]]
    except ValueError as exc:
        raise DataError(f"grid CSV: {exc}") from exc
    if any(len(r) != freqs.size + 1 for r in rows):
        raise DataError("grid CSV rows have inconsistent lengths")
    arr = np.array(rows)
    return NoiseTerm(label, np.radians(arr[:, 0]), freqs, 10 ** (arr[:, 1:] / 10))


def contour_csv(contour: ContourResult) -> str:
    buf = io.StringIO()
    buf.write("freq_hz,lower_deg,upper_deg\n")
    for f, lo, hi in zip(contour.freqs, contour.lower, contour.upper):
        cells = [_fmt(f)] + ["" if not np.isfinite(v) else _fmt(np.degrees(v)) for v in (lo, hi)]
        buf.write(",".join(cells) + "\n")
    return buf.getvalue()


def read_reference_spectrum(path) -> ReferenceSpectrum:
    """Two whitespace-separated columns (Hz, PSD); '#' starts a comment."""
    xs, ys = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise DataError(f"{path}:{lineno}: expected 2 columns, got {len(parts)}")
            try:
                x, y = float(parts[0]), float(parts[1])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
            if not (np.isfinite(x) and np.isfinite(y)) or x <= 0 or y < 0:
                raise DataError(f"{path}:{lineno}: need positive frequency and non-negative PSD")
            xs.append(x)
            ys.append(y)
    if len(xs) < 2 or np.any(np.diff(xs) <= 0):
        raise DataError(f"{path}: need at least two strictly increasing frequencies")
    return ReferenceSpectrum(np.array(xs), np.array(ys))
