"""Run configuration: flat ``key = value`` text with ``[section]`` headers.

Grammar
-------
* ``[section]`` opens a section; ``[mode.<name>]`` declares one mechanical mode.
* ``key = value`` lines belong to the most recent section. Keys are
  case-sensitive; unknown sections or keys are rejected.
* ``#`` or ``;`` at the start of a line begins a comment. Blank lines are ignored.
* Floats accept any Python float literal; serialization uses ``repr`` so a
  parse -> serialize -> parse round trip is exact.
* Keys omitted from a file take their defaults; if no mode section is given the
  default mode list is used.
"""
from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import budget, corrlab, homodyne, omcavity
from .errors import ConfigError, OmsqueezeError

SCENARIOS = ("nominal", "expected", "technical-off")

# section -> ordered (key, type, default); type is float, int, str, or a tuple of choices
SCHEMA = {
    "cavity": [
        ("length_m", float, 0.01),
        ("wavelength_m", float, 1064e-9),
        ("t_in_ppm", float, 50.0),
        ("t_out_ppm", float, 250.0),
        ("loss_ppm", float, 250.0),
        ("detuning", float, 0.33),
        ("p_circ_w", float, 0.26),
    ],
    "environment": [
        ("temperature_k", float, 295.0),
    ],
    "detection": [
        ("bs1_transmission", float, 0.85),
        ("bs2_lo_weight", float, 0.035),
        ("visibility", float, 0.93),
        ("detected_power_w", float, 49e-6),
        ("signal_power_w", float, 58e-6),
        ("max_lo_power_w", float, 30e-6),
    ],
    "budget": [
        ("phi_min_deg", float, 0.0),
        ("phi_max_deg", float, 30.0),
        ("phi_count", int, 90),
        ("freq_min_hz", float, 10e3),
        ("freq_max_hz", float, 150e3),
        ("freq_count", int, 400),
        ("excess_loss", float, 0.22),
        ("expected_excess_loss", float, 0.0),
        ("phase_noise_quadrature_deg", float, 17.0),
        ("phase_noise_level", float, 0.05),
        ("phase_noise_f_ref_hz", float, 30e3),
        ("phase_noise_exponent", float, -2.0),
        ("phase_noise_file", str, ""),
        ("feedback_level_m2_hz", float, 4.4e-35),
        ("feedback_knee_hz", float, 50e3),
        ("feedback_file", str, ""),
        ("rin_amplitude", float, 8e-9),
        ("rin_coupling", float, 0.01),
        ("dark_noise_db", float, -12.0),
        ("measured_grid", str, ""),
    ],
    "estimator": [
        ("segment_length", int, 1024),
        ("overlap", float, 0.5),
        ("window", tuple(w.value for w in corrlab.Window), "hann"),
    ],
    "corr": [
        ("source", ("synthesize", "ingest"), "synthesize"),
        ("quadrature_deg", float, 12.3),
        ("fs_hz", float, 500e3),
        ("n_samples", int, 2**21),
        ("dark_db", float, -12.0),
        ("alpha", float, 1.0),
        ("beta", float, 1.0),
        ("input_file", str, ""),
        ("input_format", ("binary", "text"), "binary"),
        ("dark_file", str, ""),
        ("band_min_hz", float, 5e3),
        ("band_max_hz", float, 200e3),
        ("n_sigma", float, 3.0),
    ],
    "run": [
        ("scenario", SCENARIOS, "nominal"),
        ("seed", int, 0),
        ("out", str, "out"),
    ],
}

MODE_SCHEMA = [
    ("mass_kg", float, None),
    ("f0_hz", float, None),
    ("q", float, None),
    ("damping", tuple(d.value for d in omcavity.Damping), "structural"),
]

# fundamental: 50 ng, 876 Hz, Q 16000; 27 kHz: heavy and weakly coupled (see README)
DEFAULT_MODES = {
    "fundamental": {"mass_kg": 5e-11, "f0_hz": 876.0, "q": 16000.0, "damping": "structural"},
    "m27k": {"mass_kg": 1e-6, "f0_hz": 27e3, "q": 1e5, "damping": "structural"},
}

_KEY_RE = re.compile(r"^\s*([^=:#;\s][^=:]*?)\s*[=:]")
_SECTION_RE = re.compile(r"^\s*\[([^\]]+)\]")


@dataclass(frozen=True)
class RunConfig:
    """Typed values per section, plus the ordered mechanical-mode table."""

    sections: dict
    modes: dict = field(default_factory=lambda: {k: dict(v) for k, v in DEFAULT_MODES.items()})

    def __getitem__(self, section):
        return self.sections[section]

    def with_values(self, section, **values):
        new = {k: dict(v) for k, v in self.sections.items()}
        new[section].update(values)
        return validate(RunConfig(new, {k: dict(v) for k, v in self.modes.items()}))

    # -------------------------------------------------------------- domain objects
    def cavity(self):
        s = self["cavity"]
        return omcavity.CavityParams(
            length=s["length_m"], wavelength=s["wavelength_m"], t_in_ppm=s["t_in_ppm"],
            t_out_ppm=s["t_out_ppm"], loss_ppm=s["loss_ppm"], detuning=s["detuning"],
            p_circ=s["p_circ_w"])

    def mechanical_modes(self):
        return [omcavity.MechanicalMode(m["mass_kg"], m["f0_hz"], m["q"], omcavity.Damping(m["damping"]))
                for m in self.modes.values()]

    def environment(self):
        return omcavity.EnvironmentParams(self["environment"]["temperature_k"])

    def chain(self):
        d = self["detection"]
        return budget.DetectionChain(
            bs1_transmission=d["bs1_transmission"], bs2=homodyne.BeamSplitter(d["bs2_lo_weight"]),
            visibility=d["visibility"], detected_power=d["detected_power_w"],
            wavelength=self["cavity"]["wavelength_m"])

    def budget_config(self, base_dir=None):
        b = self["budget"]
        phis = np.radians(np.linspace(b["phi_min_deg"], b["phi_max_deg"], b["phi_count"]))
        freqs = np.geomspace(b["freq_min_hz"], b["freq_max_hz"], b["freq_count"])
        if b["phase_noise_file"]:
            phase = budget.read_reference_spectrum(_resolve(b["phase_noise_file"], base_dir))
        else:
            phase = budget.PowerLaw(b["phase_noise_level"], b["phase_noise_f_ref_hz"], b["phase_noise_exponent"])
        if b["feedback_file"]:
            feedback = budget.read_reference_spectrum(_resolve(b["feedback_file"], base_dir))
        else:
            feedback = budget.RisingFloor(b["feedback_level_m2_hz"], b["feedback_knee_hz"])
        return budget.BudgetConfig(
            phis=phis, freqs=freqs, excess_loss=b["excess_loss"],
            phase_noise_quadrature=np.radians(b["phase_noise_quadrature_deg"]),
            phase_noise_ref=phase, feedback_noise_ref=feedback,
            rin_amplitude=b["rin_amplitude"], rin_coupling=b["rin_coupling"],
            dark_noise_rel_shot=10 ** (b["dark_noise_db"] / 10))

    def estimator(self, seed=None):
        e = self["estimator"]
        return corrlab.EstimatorConfig(
            segment_length=e["segment_length"], overlap=e["overlap"], window=corrlab.Window(e["window"]),
            seed=self["run"]["seed"] if seed is None else seed)


def _resolve(path, base_dir):
    p = Path(path)
    return p if p.is_absolute() or base_dir is None else Path(base_dir) / p


def defaults() -> RunConfig:
    return RunConfig({sec: {k: d for k, _, d in keys} for sec, keys in SCHEMA.items()})


def _convert(kind, raw, where):
    try:
        if kind is float:
            val = float(raw)
            if not np.isfinite(val):
                raise ValueError("must be finite")
            return val
        if kind is int:
            return int(raw, 0)
        if kind is str:
            return raw
        if raw not in kind:
            raise ValueError(f"must be one of {', '.join(kind)}")
        return raw
    except ValueError as exc:
        raise ConfigError(f"{where}: invalid value {raw!r}: {exc}") from None


def _line_index(text):
    """Map (section, key) and section headers to 1-based line numbers."""
    lines = {}
    section = None
    for no, line in enumerate(text.splitlines(), 1):
        m = _SECTION_RE.match(line)
        if m:
            section = m.group(1).strip()
            lines.setdefault((section, None), no)
            continue
        k = _KEY_RE.match(line)
        if k and section is not None:
            lines.setdefault((section, k.group(1)), no)
    return lines


def parse(text, source="<config>") -> RunConfig:
    """Parse config text; errors name the file, line, section and key."""
    cp = configparser.ConfigParser(interpolation=None, strict=True, empty_lines_in_values=False,
                                   default_section="\x00none")
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"{source}:{exc.lineno}: [{exc.section}] {exc.option}: duplicate key") from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"{source}:{exc.lineno}: [{exc.section}]: duplicate section") from None
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError(f"{source}:{exc.lineno}: key outside any section") from None
    except configparser.ParsingError as exc:
        no, line = exc.errors[0]
        raise ConfigError(f"{source}:{no}: cannot parse {line.strip()!r}") from None
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    lines = _line_index(text)

    def where(section, key=None):
        no = lines.get((section, key)) or lines.get((section, None))
        loc = f"{source}:{no}" if no else source
        return f"{loc}: [{section}]" + (f" {key}" if key else "")

    cfg = defaults()
    sections = cfg.sections
    modes = {}
    for sec in cp.sections():
        if sec.startswith("mode."):
            name = sec[5:].strip()
            if not name:
                raise ConfigError(f"{where(sec)}: mode section needs a name")
            schema, target = MODE_SCHEMA, {}
            modes[name] = target
        elif sec in SCHEMA:
            schema, target = SCHEMA[sec], sections[sec]
        else:
            raise ConfigError(f"{where(sec)}: unknown section")
        known = {k: kind for k, kind, _ in schema}
        for key, raw in cp.items(sec):
            if key not in known:
                raise ConfigError(f"{where(sec, key)}: unknown key")
            target[key] = _convert(known[key], raw.strip(), where(sec, key))
        if schema is MODE_SCHEMA:
            for key, _, default in MODE_SCHEMA:
                if key not in target:
                    if default is None:
                        raise ConfigError(f"{where(sec)}: missing required key {key!r}")
                    target[key] = default
    if modes:
        cfg = RunConfig(sections, modes)
    try:
        return _validate(cfg)
    except ConfigError as exc:
        section, key, msg = exc.args if len(exc.args) == 3 else (None, None, str(exc))
        if section is None:
            raise ConfigError(f"{source}: {msg}") from None
        raise ConfigError(f"{where(section, key)}: {msg}") from None


def _check(cond, section, key, msg):
    if not cond:
        raise ConfigError(section, key, msg)


def validate(cfg: RunConfig) -> RunConfig:
    """Check every value against the invariants of the object it builds."""
    try:
        return _validate(cfg)
    except ConfigError as exc:
        if len(exc.args) != 3:
            raise
        section, key, msg = exc.args
        raise ConfigError(f"[{section}]" + (f" {key}" if key else "") + f": {msg}") from None


def _blame(values, schema, build):
    """First key whose reset to its default lets ``build`` succeed, else None."""
    for key, _, default in schema:
        if default is None or values.get(key) == default:
            continue
        try:
            build({**values, key: default})
        except (OmsqueezeError, ValueError):
            continue
        return key
    return None


def _validate(cfg: RunConfig) -> RunConfig:
    # raises ConfigError(section, key, message) so parse() can attach line numbers
    b, c, e, r = cfg["budget"], cfg["corr"], cfg["estimator"], cfg["run"]
    for section, builder in (("cavity", RunConfig.cavity), ("environment", RunConfig.environment),
                             ("detection", RunConfig.chain)):
        try:
            builder(cfg)
        except (OmsqueezeError, ValueError) as exc:
            key = _blame(cfg.sections[section], SCHEMA[section],
                         lambda vals: builder(RunConfig({**cfg.sections, section: vals}, cfg.modes)))
            raise ConfigError(section, key, str(exc)) from None
    for name, mode in cfg.modes.items():
        def build(m):
            return omcavity.MechanicalMode(m["mass_kg"], m["f0_hz"], m["q"], omcavity.Damping(m["damping"]))
        try:
            build(mode)
        except (OmsqueezeError, ValueError) as exc:
            raise ConfigError(f"mode.{name}", _blame(mode, MODE_SCHEMA, build), str(exc)) from None
    _check(b["phi_count"] >= 2, "budget", "phi_count", "need at least 2 quadratures")
    _check(b["freq_count"] >= 2, "budget", "freq_count", "need at least 2 frequencies")
    _check(b["phi_max_deg"] > b["phi_min_deg"], "budget", "phi_max_deg", "must exceed phi_min_deg")
    _check(0 < b["freq_min_hz"] < b["freq_max_hz"], "budget", "freq_max_hz",
           "need 0 < freq_min_hz < freq_max_hz")
    for key in ("excess_loss", "expected_excess_loss"):
        _check(0 <= b[key] <= 1, "budget", key, "must lie in [0, 1]")
    _check(0 < b["phase_noise_quadrature_deg"] <= 90, "budget", "phase_noise_quadrature_deg",
           "must lie in (0, 90]")
    for key in ("phase_noise_level", "phase_noise_f_ref_hz", "feedback_level_m2_hz", "feedback_knee_hz",
                "rin_amplitude", "rin_coupling"):
        _check(b[key] >= 0, "budget", key, "must be non-negative")
    _check(b["phase_noise_f_ref_hz"] > 0, "budget", "phase_noise_f_ref_hz", "must be positive")
    _check(b["feedback_knee_hz"] > 0, "budget", "feedback_knee_hz", "must be positive")
    try:
        cfg.estimator()
    except (OmsqueezeError, ValueError) as exc:
        raise ConfigError("estimator", None, str(exc)) from None
    _check(c["fs_hz"] > 0, "corr", "fs_hz", "must be positive")
    _check(c["n_samples"] >= 2 * e["segment_length"], "corr", "n_samples",
           "need at least two estimator segments")
    _check(c["n_samples"] % e["segment_length"] == 0, "corr", "n_samples",
           "must be a multiple of the estimator segment length")
    _check(c["alpha"] > 0 and c["beta"] > 0, "corr", "alpha", "gains must be positive")
    _check(c["n_sigma"] > 0, "corr", "n_sigma", "must be positive")
    _check(c["band_max_hz"] > c["band_min_hz"] >= 0, "corr", "band_max_hz", "need 0 <= band_min_hz < band_max_hz")
    _check(c["source"] != "ingest" or c["input_file"], "corr", "input_file", "required when source = ingest")
    _check(0 <= r["seed"] < 2**64, "run", "seed", "must be an unsigned 64-bit integer")
    return cfg


def _format(value):
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize(cfg: RunConfig) -> str:
    out = []
    for sec, keys in SCHEMA.items():
        out.append(f"[{sec}]")
        out.extend(f"{k} = {_format(cfg[sec][k])}" for k, _, _ in keys)
        out.append("")
    for name, mode in cfg.modes.items():
        out.append(f"[mode.{name}]")
        out.extend(f"{k} = {_format(mode[k])}" for k, _, _ in MODE_SCHEMA)
        out.append("")
    return "\n".join(out)


def load(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return parse(text, str(path))


def default_config_path() -> Path:
    return Path(__file__).with_name("default.cfg")
