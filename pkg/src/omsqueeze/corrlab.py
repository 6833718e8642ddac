"""Calibration-free squeezing detection from two-detector photocurrent correlations.

A beam with total noise R (relative to its shot noise) is split 50/50 onto two
detectors. The sign-retaining averaged cross spectrum is negative only for
sub-shot-noise light, and C = <S_ab>/sqrt(S_a S_b) = (R - 1)/(R + 1) gives R
without knowing the shot-noise level or the detector gains.

Spectral units: the shot noise of the undivided beam has PSD ``shot_psd``; each
detector alone sees half of it. Dark noise is quoted relative to the shot noise
on that detector.
"""
from __future__ import annotations

import io
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import DataError, DivergenceError, DomainError


class Window(str, Enum):
    RECTANGULAR = "rectangular"
    HANN = "hann"


@dataclass(frozen=True)
class EstimatorConfig:
    segment_length: int = 4096
    overlap: float = 0.5
    window: Window = Window.HANN
    seed: int = 0

    def __post_init__(self):
        n = int(self.segment_length)
        if n < 64 or n & (n - 1):
            raise DomainError("segment_length must be a power of two >= 64")
        if not 0 <= self.overlap <= 0.9:
            raise DomainError("overlap must lie in [0, 0.9]")
        if not 0 <= int(self.seed) < 2**64:
            raise DomainError("seed must be an unsigned 64-bit integer")
        object.__setattr__(self, "segment_length", n)
        object.__setattr__(self, "window", Window(self.window))

    @property
    def step(self):
        return max(1, int(round(self.segment_length * (1 - self.overlap))))

    def taper(self):
        n = self.segment_length
        if self.window is Window.RECTANGULAR:
            return np.ones(n)
        # periodic Hann, the usual choice for spectral averaging
        return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


@dataclass(frozen=True)
class TimeSeriesPair:
    fs: float
    a: np.ndarray
    b: np.ndarray
    alpha: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        b = np.asarray(self.b, dtype=float)
        if a.ndim != 1 or a.shape != b.shape:
            raise DataError(f"channels must be 1-D and equal length, got {a.shape} and {b.shape}")
        if not self.fs > 0:
            raise DataError("sample rate must be positive")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    def __len__(self):
        return self.a.size


@dataclass(frozen=True)
class CrossSpectrum:
    freq: np.ndarray
    s_a: np.ndarray
    s_b: np.ndarray
    s_ab: np.ndarray
    n_averages: int


@dataclass(frozen=True)
class CorrelationResult:
    freq: np.ndarray
    s_a: np.ndarray
    s_b: np.ndarray
    s_ab: np.ndarray  # complex; only the real part enters C
    c: np.ndarray
    r_inferred: np.ndarray
    eta: np.ndarray
    n_averages: int
    stat_err_c: np.ndarray


# ---------------------------------------------------------------- synthesis

def _evaluate_spectrum(r_spectrum, f):
    if callable(r_spectrum):
        vals = np.asarray(r_spectrum(f), dtype=float)
        return np.broadcast_to(vals, f.shape).astype(float)
    if np.ndim(r_spectrum) == 0:
        return np.full(f.shape, float(r_spectrum))
    freqs, vals = r_spectrum
    return np.interp(f, np.asarray(freqs, dtype=float), np.asarray(vals, dtype=float))


def synthesize_pair(r_spectrum, fs, n_samples, alpha=1.0, beta=1.0, dark_a=0.0, dark_b=0.0,
                    seed=0, shot_psd=1.0) -> TimeSeriesPair:
    """Two detector records of a split beam whose noise relative to shot is R(f).

    ``r_spectrum`` is a scalar, a callable of frequency (Hz), or a (freqs, R)
    pair interpolated linearly. Per frequency the target cross-spectral matrix
    (units of ``shot_psd``) is [[R+1, R-1], [R-1, R+1]] / 2: a common mode with
    PSD R along (1, 1) and beamsplitter vacuum along (1, -1). Both eigenvalues
    are non-negative, so sub-shot R is realizable. Each detector's light PSD is
    (1 + R)/2; dark noise is white with PSD dark/2, so dark/light = dark/(1 + R)
    as in the efficiency formula. Dark noise is added before the gains.
    """
    n = int(n_samples)
    if n < 2:
        raise DataError("need at least two samples")
    f = np.fft.rfftfreq(n, 1.0 / fs)
    r = _evaluate_spectrum(r_spectrum, f)
    if np.any(~np.isfinite(r)) or np.any(r < 0):
        raise DomainError("relative noise spectrum must be finite and non-negative")
    if dark_a < 0 or dark_b < 0:
        raise DomainError("dark noise must be non-negative")

    rng = np.random.default_rng(seed)
    white = rng.standard_normal((4, n))
    # white N(0,1) has single-sided PSD 2/fs; rescale each mode to shot_psd
    gain = np.sqrt(shot_psd * fs / 2)
    common = np.fft.rfft(white[0]) * np.sqrt(r)
    vacuum = np.fft.rfft(white[1])
    x = np.fft.irfft(common, n) * gain
    y = np.fft.irfft(vacuum, n) * gain
    a = (x - y) / np.sqrt(2)
    b = (x + y) / np.sqrt(2)
    a = a + white[2] * gain * np.sqrt(dark_a / 2)
    b = b + white[3] * gain * np.sqrt(dark_b / 2)
    return TimeSeriesPair(fs, alpha * a, beta * b, alpha, beta)


# ---------------------------------------------------------------- estimation

def _segments(x, cfg: EstimatorConfig):
    n = cfg.segment_length
    if x.size < n:
        raise DataError(f"series of {x.size} samples is shorter than one segment ({n})")
    count = 1 + (x.size - n) // cfg.step
    view = np.lib.stride_tricks.sliding_window_view(x, n)[:: cfg.step][:count]
    return view - view.mean(axis=1, keepdims=True)


def _spectra(x, fs, cfg):
    w = cfg.taper()
    seg = np.fft.rfft(_segments(x, cfg) * w, axis=1)
    scale = 2.0 / (fs * np.sum(w * w))
    return seg, scale


def _onesided(p, n):
    # DC and Nyquist are not folded
    p[..., 0] *= 0.5
    if n % 2 == 0:
        p[..., -1] *= 0.5
    return p


def welch_psd(x, fs, cfg: EstimatorConfig):
    """Single-sided Welch PSD; white unit-variance input gives 2/fs."""
    seg, scale = _spectra(np.asarray(x, dtype=float), fs, cfg)
    p = _onesided(np.mean(np.abs(seg) ** 2, axis=0) * scale, cfg.segment_length)
    return np.fft.rfftfreq(cfg.segment_length, 1.0 / fs), p


def cross_spectrum(p: TimeSeriesPair, cfg: EstimatorConfig) -> CrossSpectrum:
    """Welch auto spectra and the complex averaged cross spectrum mean(conj(A) B).

    The cross spectrum is averaged as a complex number, never as a magnitude,
    so its sign survives.
    """
    sa, scale = _spectra(p.a, p.fs, cfg)
    sb, _ = _spectra(p.b, p.fs, cfg)
    n = cfg.segment_length
    s_a = _onesided(np.mean(np.abs(sa) ** 2, axis=0) * scale, n)
    s_b = _onesided(np.mean(np.abs(sb) ** 2, axis=0) * scale, n)
    s_ab = _onesided(np.mean(np.conj(sa) * sb, axis=0) * scale, n)
    return CrossSpectrum(np.fft.rfftfreq(n, 1.0 / p.fs), s_a, s_b, s_ab, sa.shape[0])


# ---------------------------------------------------------------- correlation algebra

def normalized_correlation(s_a, s_b, s_ab):
    s_a = np.asarray(s_a, dtype=float)
    s_b = np.asarray(s_b, dtype=float)
    if np.any(s_a <= 0) or np.any(s_b <= 0):
        raise DomainError("auto spectra must be positive")
    out = np.real(s_ab) / np.sqrt(s_a * s_b)
    return float(out) if np.ndim(out) == 0 else out


def infer_relative_noise(c):
    """R = (1 + C) / (1 - C), the inverse of C = (R - 1) / (R + 1)."""
    c = np.asarray(c, dtype=float)
    if np.any(~np.isfinite(c)):
        raise DataError("correlation must be finite")
    if np.any(c >= 1):
        raise DivergenceError("C >= 1: relative noise diverges")
    if np.any(c < -1):
        raise DataError("C < -1 is beyond the physical bound; estimator noise is too large")
    out = (1 + c) / (1 - c)
    return float(out) if out.ndim == 0 else out


def correlation_from_relative_noise(r):
    """C = (R-1)/(R+1); R = inf (classical noise) gives C = 1."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise DomainError("relative noise must be non-negative")
    with np.errstate(invalid="ignore"):
        out = np.where(np.isinf(r), 1.0, (r - 1) / (r + 1))
    return float(out) if out.ndim == 0 else out


def efficiency(s_da_rel, s_db_rel, r):
    """Effective efficiency eta with measured C = eta (R-1)/(R+1)."""
    s_da_rel = np.asarray(s_da_rel, dtype=float)
    s_db_rel = np.asarray(s_db_rel, dtype=float)
    if np.any(s_da_rel < 0) or np.any(s_db_rel < 0):
        raise DomainError("dark PSDs must be non-negative")
    r = np.asarray(r, dtype=float)
    out = ((1 + s_da_rel / (1 + r)) * (1 + s_db_rel / (1 + r))) ** -0.5
    return float(out) if out.ndim == 0 else out


def efficiency_from_dark(s_a, s_b, dark_a, dark_b):
    """Efficiency from measured auto spectra and dark-only spectra (same units).

    Needs no shot-noise calibration: dark/(S - dark) equals S_d/(1 + R).
    """
    s_a, s_b = np.asarray(s_a, dtype=float), np.asarray(s_b, dtype=float)
    dark_a, dark_b = np.asarray(dark_a, dtype=float), np.asarray(dark_b, dtype=float)
    if np.any(dark_a >= s_a) or np.any(dark_b >= s_b):
        raise DataError("dark spectrum reaches the light-on spectrum")
    return np.sqrt((s_a - dark_a) * (s_b - dark_b) / (s_a * s_b))


def efficiency_self_consistent(c, s_da_rel, s_db_rel, iterations=50):
    """Solve C = eta(R) (R-1)/(R+1) for eta when only relative dark levels are known."""
    c = np.asarray(c, dtype=float)
    eta = np.ones_like(c)
    for _ in range(iterations):
        r = (1 + np.clip(c / eta, -0.999999, 0.999999)) / (1 - np.clip(c / eta, -0.999999, 0.999999))
        eta = efficiency(s_da_rel, s_db_rel, r)
    return eta


def statistical_error(c, n_averages):
    if n_averages < 2:
        raise DomainError("need at least two averages")
    c = np.asarray(c, dtype=float)
    out = (1 - c * c) / np.sqrt(n_averages)
    return float(out) if out.ndim == 0 else out


def correlate(p: TimeSeriesPair, cfg: EstimatorConfig, dark: TimeSeriesPair | None = None,
              dark_a_rel=None, dark_b_rel=None) -> CorrelationResult:
    """Run the estimator and the correlation algebra on one record pair.

    Efficiency comes from a dark-only record pair when given, else from the
    relative dark levels, else it is 1.
    """
    xs = cross_spectrum(p, cfg)
    c = normalized_correlation(xs.s_a, xs.s_b, xs.s_ab)
    if dark is not None:
        _, da = welch_psd(dark.a, dark.fs, cfg)
        _, db = welch_psd(dark.b, dark.fs, cfg)
        eta = efficiency_from_dark(xs.s_a, xs.s_b, da, db)
    elif dark_a_rel is not None or dark_b_rel is not None:
        eta = efficiency_self_consistent(c, dark_a_rel or 0.0, dark_b_rel or 0.0)
    else:
        eta = np.ones_like(c)
    corrected = c / eta
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(np.abs(corrected) < 1, (1 + corrected) / (1 - corrected), np.nan)
    return CorrelationResult(xs.freq, xs.s_a, xs.s_b, xs.s_ab, c, r, eta, xs.n_averages,
                             statistical_error(c, xs.n_averages))


@dataclass(frozen=True)
class SqueezingSpectrum:
    freq: np.ndarray
    r_db: np.ndarray
    err_db_low: np.ndarray
    err_db_high: np.ndarray
    flagged: np.ndarray  # bins where |C/eta| >= 1


def squeezing_spectrum_from_correlation(result: CorrelationResult) -> SqueezingSpectrum:
    """R in dB per bin from C/eta with one-sigma bounds; unphysical bins flagged as NaN."""
    corrected = result.c / result.eta
    err = result.stat_err_c / result.eta
    flagged = ~(np.abs(corrected) < 1)

    def to_db(x):
        x = np.clip(x, -1 + 1e-15, 1 - 1e-15)
        return 10 * np.log10((1 + x) / (1 - x))

    with np.errstate(invalid="ignore"):
        r_db = np.where(flagged, np.nan, to_db(corrected))
        low = np.where(flagged, np.nan, r_db - to_db(corrected - err))
        high = np.where(flagged, np.nan, to_db(corrected + err) - r_db)
    return SqueezingSpectrum(result.freq, r_db, low, high, flagged)


def significant_band(result: CorrelationResult, n_sigma=3.0, f_min=None, f_max=None):
    """Contiguous frequency runs where C is negative by more than n_sigma errors.

    Returns a list of (f_lo, f_hi) tuples, widest first.
    """
    neg = result.c < -n_sigma * result.stat_err_c
    sel = np.ones_like(neg)
    if f_min is not None:
        sel &= result.freq >= f_min
    if f_max is not None:
        sel &= result.freq <= f_max
    sel[0] = False
    neg &= sel
    runs = []
    i = 0
    while i < neg.size:
        if neg[i]:
            j = i
            while j + 1 < neg.size and neg[j + 1]:
                j += 1
            runs.append((float(result.freq[i]), float(result.freq[j])))
            i = j + 1
        else:
            i += 1
    runs.sort(key=lambda ab: ab[0] - ab[1])
    return runs


# ---------------------------------------------------------------- I/O

def write_pair_binary(path, p: TimeSeriesPair):
    """One text header line, then little-endian float64 samples interleaved a, b."""
    header = f"fs={p.fs!r} n_samples={len(p)} alpha={p.alpha!r} beta={p.beta!r}\n"
    data = np.empty(2 * len(p), dtype="<f8")
    data[0::2] = p.a
    data[1::2] = p.b
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(data.tobytes())


def read_pair_binary(path) -> TimeSeriesPair:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise DataError(f"{path}: missing header line")
    try:
        fields = dict(tok.split("=", 1) for tok in raw[:nl].decode("ascii").split())
        fs = float(fields["fs"])
        n = int(fields["n_samples"])
        alpha = float(fields.get("alpha", 1.0))
        beta = float(fields.get("beta", 1.0))
    except (KeyError, ValueError, UnicodeDecodeError) as exc:
        raise DataError(f"{path}: bad header at byte 0: {exc}") from exc
    body = raw[nl + 1:]
    expected = 16 * n
    if len(body) != expected:
        raise DataError(f"{path}: payload at byte offset {nl + 1} has {len(body)} bytes, expected {expected}")
    data = np.frombuffer(body, dtype="<f8")
    return TimeSeriesPair(fs, data[0::2].copy(), data[1::2].copy(), alpha, beta)


def read_pair_text(path, fs, alpha=1.0, beta=1.0) -> TimeSeriesPair:
    """Two whitespace-separated columns (a, b); '#' starts a comment."""
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise DataError(f"{path}:{lineno}: expected 2 columns, got {len(parts)}")
            try:
                rows.append((float(parts[0]), float(parts[1])))
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
    arr = np.array(rows, dtype=float).reshape(-1, 2)
    return TimeSeriesPair(fs, arr[:, 0], arr[:, 1], alpha, beta)


def _fmt(x):
    return format(float(x), ".9g")


def correlation_csv(result: CorrelationResult) -> str:
    spec = squeezing_spectrum_from_correlation(result)
    buf = io.StringIO()
    buf.write("freq_hz,s_a,s_b,re_s_ab,im_s_ab,c,stat_err,r_db\n")
    for i in range(result.freq.size):
        row = (result.freq[i], result.s_a[i], result.s_b[i], result.s_ab[i].real,
               result.s_ab[i].imag, result.c[i], result.stat_err_c[i], spec.r_db[i])
        buf.write(",".join(_fmt(v) if np.isfinite(v) else "" for v in row) + "\n")
    return buf.getvalue()


def squeezing_csv(spec: SqueezingSpectrum) -> str:
    """R in dB with one-sigma bounds; flagged bins (|C/eta| >= 1) have empty cells."""
    buf = io.StringIO()
    buf.write("freq_hz,r_db,err_low_db,err_high_db,flagged\n")
    for i in range(spec.freq.size):
        cells = [_fmt(spec.freq[i])]
        cells += [_fmt(v) if np.isfinite(v) else "" for v in (spec.r_db[i], spec.err_db_low[i], spec.err_db_high[i])]
        cells.append("1" if spec.flagged[i] else "0")
        buf.write(",".join(cells) + "\n")
    return buf.getvalue()
