"""Command-line front end: ``omsqueeze budget | corr | selftest``."""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import budget, config, corrlab, omcavity, selftest
from .errors import OmsqueezeError

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _num(x):
    """JSON number at 9 significant digits; None for absent values."""
    if x is None or not math.isfinite(float(x)):
        return None
    return float(format(float(x), ".9g"))


def _write(out: Path, name, text, written):
    path = out / name
    path.write_text(text, encoding="ascii", newline="\n")
    written.append(path)


def _all_finite(paths):
    """True if no written cell is nan or inf (empty cells mark absent values)."""
    for p in paths:
        text = p.read_text()
        if p.suffix == ".json":
            if "NaN" in text or "Infinity" in text:
                return False
            continue
        for line in text.splitlines()[1:]:
            for cell in line.split(",")[1:]:
                if cell and not math.isfinite(float(cell)):
                    return False
    return True


def _log(args, msg):
    if not args.quiet:
        print(msg)


# ---------------------------------------------------------------- budget

def run_budget(cfg: config.RunConfig, scenario, base_dir=None):
    """Budget for a scenario; returns (Budget, fitted excess loss or None)."""
    cavity, modes, env, chain = cfg.cavity(), cfg.mechanical_modes(), cfg.environment(), cfg.chain()
    bcfg = cfg.budget_config(base_dir)
    b = cfg["budget"]
    if scenario == "expected":
        return budget.scenario_expected(cavity, modes, env, chain, bcfg, b["expected_excess_loss"]), None
    switches = budget.Switches.technical_off() if scenario == "technical-off" else budget.Switches()
    fitted = None
    eps = bcfg.excess_loss
    if b["measured_grid"]:
        path = config._resolve(b["measured_grid"], base_dir)
        measured = budget.read_grid_csv(Path(path).read_text())
        lossless = budget.compute_budget(cavity, modes, env, chain, bcfg, switches, 0.0)
        fitted = budget.fit_excess_loss(measured, lossless.total)
        eps = fitted
    return budget.compute_budget(cavity, modes, env, chain, bcfg, switches, eps), fitted


def cmd_budget(cfg, out: Path, scenario, args, base_dir=None):
    res, fitted = run_budget(cfg, scenario, base_dir)
    total = res.total
    written = []
    _write(out, "total.csv", budget.grid_csv(total), written)
    for label, term in res.terms.items():
        _write(out, f"term_{label}.csv", budget.grid_csv(term), written)
    contour = budget.shot_noise_contour(total)
    _write(out, "contour.csv", budget.contour_csv(contour), written)

    sq_db, phi, f = budget.max_squeezing(total)
    present = contour.present()
    sel = (contour.freqs >= 20e3) & (contour.freqs <= 100e3) & np.isfinite(contour.upper)
    cavity, modes = cfg.cavity(), cfg.mechanical_modes()
    null = omcavity.cavity_response(cavity, modes, [45e3]).displacement_null()[0]
    summary = {
        "scenario": scenario,
        "max_squeezing_db": _num(sq_db),
        "max_squeezing_quadrature_deg": _num(np.degrees(phi)),
        "max_squeezing_frequency_hz": _num(f),
        "excess_loss_applied": _num(res.excess_loss),
        "excess_loss_fitted": _num(fitted),
        "squeezed_band_hz": [_num(contour.freqs[present].min()), _num(contour.freqs[present].max())]
        if present.any() else None,
        "upper_crossing_std_deg_20_100khz": _num(np.degrees(np.std(contour.upper[sel]))) if sel.sum() > 1 else None,
        "displacement_null_deg_45khz": _num(np.degrees(null)),
        "spring_resonance_hz": _num(omcavity.spring_resonance(cavity, modes[0])) if modes else None,
        "grid_shape": [int(total.phis.size), int(total.freqs.size)],
    }
    _write(out, "summary.json", json.dumps(summary, indent=2) + "\n", written)
    _log(args, f"max squeezing {sq_db:.3f} dB at {np.degrees(phi):.2f} deg, {f / 1e3:.2f} kHz "
               f"(excess loss {res.excess_loss:.4g}); wrote {len(written)} files to {out}")
    return written


# ---------------------------------------------------------------- corr

def _relative_noise_at(total: budget.NoiseTerm, phi):
    """Row of ``total`` linearly interpolated in quadrature."""
    phis = total.phis
    i = int(np.clip(np.searchsorted(phis, phi) - 1, 0, phis.size - 2))
    w = float(np.clip((phi - phis[i]) / (phis[i + 1] - phis[i]), 0, 1))
    return (1 - w) * total.grid[i] + w * total.grid[i + 1]


def synthesis_target(cfg, scenario, base_dir=None):
    """(freqs, R) for the beam reaching the detectors: budget total without dark noise."""
    res, _ = run_budget(cfg, scenario, base_dir)
    beam = budget.assemble([t for label, t in res.terms.items() if label != "dark"], "beam")
    return beam.freqs, _relative_noise_at(beam, np.radians(cfg["corr"]["quadrature_deg"]))


def cmd_corr(cfg, out: Path, scenario, seed, args, base_dir=None):
    c = cfg["corr"]
    est = cfg.estimator(seed)
    dark_rel = 10 ** (c["dark_db"] / 10)
    if c["source"] == "synthesize":
        target = synthesis_target(cfg, scenario, base_dir)
        pair = corrlab.synthesize_pair(target, c["fs_hz"], c["n_samples"], c["alpha"], c["beta"],
                                       dark_rel, dark_rel, seed)
        result = corrlab.correlate(pair, est, dark_a_rel=dark_rel, dark_b_rel=dark_rel)
    else:
        path = config._resolve(c["input_file"], base_dir)
        if c["input_format"] == "binary":
            pair = corrlab.read_pair_binary(path)
        else:
            pair = corrlab.read_pair_text(path, c["fs_hz"], c["alpha"], c["beta"])
        dark = None
        if c["dark_file"]:
            dpath = config._resolve(c["dark_file"], base_dir)
            dark = (corrlab.read_pair_binary(dpath) if c["input_format"] == "binary"
                    else corrlab.read_pair_text(dpath, pair.fs))
            result = corrlab.correlate(pair, est, dark=dark)
        else:
            result = corrlab.correlate(pair, est, dark_a_rel=dark_rel, dark_b_rel=dark_rel)

    written = []
    _write(out, "correlation.csv", corrlab.correlation_csv(result), written)
    spec = corrlab.squeezing_spectrum_from_correlation(result)
    _write(out, "squeezing_spectrum.csv", corrlab.squeezing_csv(spec), written)
    bands = corrlab.significant_band(result, c["n_sigma"], c["band_min_hz"], c["band_max_hz"])
    sel = (result.freq >= c["band_min_hz"]) & (result.freq <= c["band_max_hz"])
    summary = {
        "source": c["source"],
        "seed": int(seed),
        "n_averages": int(result.n_averages),
        "bin_width_hz": _num(result.freq[1] - result.freq[0]),
        "n_sigma": _num(c["n_sigma"]),
        "significant_negative_band_hz": [_num(bands[0][0]), _num(bands[0][1])] if bands else None,
        "all_negative_runs_hz": [[_num(a), _num(b)] for a, b in bands],
        "min_r_db": _num(np.nanmin(spec.r_db[sel])) if np.any(np.isfinite(spec.r_db[sel])) else None,
        "mean_eta": _num(np.mean(result.eta[sel])),
    }
    _write(out, "summary.json", json.dumps(summary, indent=2) + "\n", written)
    if bands:
        _log(args, f"significant negative correlation: {bands[0][0] / 1e3:.2f}-{bands[0][1] / 1e3:.2f} kHz "
                   f"({result.n_averages} averages)")
    else:
        _log(args, f"significant negative correlation: none ({result.n_averages} averages)")
    return written


# ---------------------------------------------------------------- entry point

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="run configuration (default: shipped config)")
    common.add_argument("--out", type=Path, help="output directory (default: [run] out)")
    common.add_argument("--seed", type=int, help="unsigned 64-bit seed (default: [run] seed)")
    common.add_argument("--scenario", choices=config.SCENARIOS, help="budget scenario (default: [run] scenario)")
    common.add_argument("--quiet", action="store_true", help="print nothing on success")

    p = argparse.ArgumentParser(prog="omsqueeze", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("budget", parents=[common], help="noise budget grids, contour and summary")
    sub.add_parser("corr", parents=[common], help="correlation analysis of a two-detector record")
    st = sub.add_parser("selftest", parents=[common], help="run the invariant suite")
    st.add_argument("--perturb", help=argparse.SUPPRESS)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "selftest":
        failed = selftest.run(args.perturb, report=(lambda s: None) if args.quiet else print)
        return EXIT_FAIL if failed else EXIT_OK

    path = args.config or config.default_config_path()
    try:
        cfg = config.load(path)
        seed = cfg["run"]["seed"] if args.seed is None else args.seed
        if not 0 <= seed < 2**64:
            raise OmsqueezeError(f"--seed {seed} is not an unsigned 64-bit integer")
    except OmsqueezeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    scenario = args.scenario or cfg["run"]["scenario"]
    out = Path(args.out or cfg["run"]["out"])
    base_dir = Path(path).parent
    try:
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "budget":
            written = cmd_budget(cfg, out, scenario, args, base_dir)
        else:
            written = cmd_corr(cfg, out, scenario, seed, args, base_dir)
    except (OmsqueezeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    if not _all_finite(written):
        print("error: non-finite values in outputs", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
