"""Command-line entry point: ``qcpgm <subcommand> [options]``.

Exit codes: 0 success, 2 configuration error, 3 file error, 4 numerical
failure. Errors are also reported on stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import coincidence, io, recon
from .config import PipelineConfig, dump_config, from_dict, load_config, load_preset, preset_names
from .errors import ConfigError, EmptyDistributionError, FileFormatError, InvalidParameterError, NumericalError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


# --- helpers -----------------------------------------------------------------


def _config(args) -> PipelineConfig:
    if getattr(args, "config", None) and getattr(args, "preset", None):
        raise ConfigError("use either --config or --preset, not both")
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    elif getattr(args, "preset", None):
        cfg = load_preset(args.preset)
    else:
        cfg = from_dict({})
    # command-line flags override the document
    if getattr(args, "seed", None) is not None:
        cfg.seeds = dataclasses.replace(cfg.seeds, measured=args.seed)
    if getattr(args, "window_ns", None) is not None:
        cfg.coincidence = dataclasses.replace(cfg.coincidence, window_ns=args.window_ns)
    if getattr(args, "shift_ns", None) is not None:
        cfg.coincidence = dataclasses.replace(cfg.coincidence, shift_ns=args.shift_ns)
    if getattr(args, "no_background_correction", False):
        cfg.coincidence = dataclasses.replace(cfg.coincidence, background_correction=False)
    return cfg.validate()


def _out(args, cfg=None) -> Path:
    out = Path(args.out if getattr(args, "out", None) else (cfg.output if cfg else "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _inputs_exist(*paths):
    for p in paths:
        if p is not None and not Path(p).exists():
            raise FileNotFoundError(f"input file not found: {p}")


def _config_inputs(args):
    return [args.config] if getattr(args, "config", None) else []


def _grid_outputs(out: Path, name: str, array, pitch, render=True):
    paths = [out / f"{name}.csv"]
    io.write_grid(paths[0], array, pitch)
    if render:
        paths.append(out / f"{name}.pgm")
        io.write_pgm(paths[1], array)
        paths.append(out / f"{name}.pgm.json")
    return paths


# --- subcommands -------------------------------------------------------------


def cmd_gen_target(args) -> list:
    cfg = _config(args)
    out = _out(args, cfg)
    target = cfg.build_target()
    truth = cfg.truth_on_nf_grid()
    outputs = []
    outputs += _grid_outputs(out, "target_phase", target.phase, target.pitch)
    outputs += _grid_outputs(out, "target_amplitude", target.amplitude, target.pitch, render=False)
    outputs += _grid_outputs(out, "truth_phase", truth.phase, truth.pitch)
    (out / "config.yaml").write_text(dump_config(cfg))
    outputs.append(out / "config.yaml")
    io.write_manifest(out, "gen-target", None, _config_inputs(args), outputs, cfg.to_dict())
    return outputs


def _event_paths(out: Path, run: str, fmt: str):
    ext = "csv" if fmt == "csv" else "qcpg"
    return out / f"{run}_nf.{ext}", out / f"{run}_ff.{ext}"


def cmd_simulate(args) -> list:
    from .optics import compute_far_field
    from .pipeline import acquire

    cfg = _config(args)
    out = _out(args, cfg)
    params, geo = cfg.biphoton(), cfg.optical_geometry()
    mode = cfg.target.envelope_mode
    outputs, report = [], {}
    runs = [("measured", cfg.build_target(), cfg.seeds.measured, cfg.seeds.background)]
    ref_bg = cfg.seeds.background + 1 if cfg.background.in_reference else None
    runs.append(("reference", cfg.flat_target(), cfg.seeds.reference, ref_bg))
    for name, target, seed, bg_seed in runs:
        model = compute_far_field(target, params, geo, mode)
        data = acquire(cfg, model, seed, bg_seed if cfg.background.enabled else None)
        nf_path, ff_path = _event_paths(out, name, args.format)
        io.write_events(nf_path, data.nf)
        io.write_events(ff_path, data.ff)
        outputs += [nf_path, ff_path]
        for k, v in data.metadata.items():
            if not isinstance(v, (list, dict)):
                report[f"{name}.{k}"] = v
        report[f"{name}.nf_events"] = int(data.nf.size)
        report[f"{name}.ff_events"] = int(data.ff.size)
    outputs += list(io.write_report(out / "simulate_report", report))
    io.write_manifest(out, "simulate", cfg.seeds.measured, _config_inputs(args), outputs, cfg.to_dict())
    return outputs


def cmd_coincidences(args) -> list:
    _inputs_exist(args.nf, args.ff)
    cfg = _config(args)
    out = _out(args, cfg)
    nf = io.read_events(args.nf)
    ff = io.read_events(args.ff)
    win = cfg.window()
    pairs = coincidence.find_coincidences(nf, ff, win)
    bg = coincidence.accidental_coincidences(nf, ff, win, shift=cfg.coincidence.shift_ns)
    hist = coincidence.dt_histogram(nf, ff, cfg.coincidence.histogram_bin_ns, cfg.coincidence.histogram_range_ns)
    p = args.prefix
    outputs = [out / f"{p}_pairs.csv", out / f"{p}_background_pairs.csv", out / f"{p}_dt_histogram.csv"]
    io.write_pairs(outputs[0], pairs.pairs, pairs.tag)
    io.write_pairs(outputs[1], bg.pairs, bg.tag)
    io.write_histogram(outputs[2], hist)
    report = {
        "pairs": len(pairs),
        "background_pairs": len(bg),
        "window_ns": win.width,
        "offset_ns": win.offset,
        "shift_ns": cfg.coincidence.shift_ns,
        "effective_gate_ns": coincidence.effective_gate(win, cfg.detector.time_quantum),
    }
    outputs += list(io.write_report(out / f"{p}_coincidence_report", report))
    io.write_manifest(out, f"coincidences_{p}", None, [args.nf, args.ff, *_config_inputs(args)], outputs)
    return outputs


def _centroid_map(cfg, pairs_path, bg_path, correct):
    geo = cfg.optical_geometry()
    pairs, _ = io.read_pairs(pairs_path)
    if correct:
        if bg_path is None:
            raise ConfigError("background correction needs --background-pairs (or --no-background-correction)")
        bg, _ = io.read_pairs(bg_path)
        return recon.background_corrected_centroids(pairs, bg, geo)
    return recon.centroid_map(pairs, geo)


def cmd_centroids(args) -> list:
    _inputs_exist(args.pairs, args.background_pairs)
    cfg = _config(args)
    out = _out(args, cfg)
    cm = _centroid_map(cfg, args.pairs, args.background_pairs, cfg.coincidence.background_correction)
    outputs = []
    outputs += _grid_outputs(out, f"{args.prefix}_centroid_u", cm.U, cm.pitch, render=False)
    outputs += _grid_outputs(out, f"{args.prefix}_centroid_v", cm.V, cm.pitch, render=False)
    outputs += _grid_outputs(out, f"{args.prefix}_counts", cm.count, cm.pitch, render=False)
    inputs = [args.pairs, args.background_pairs, *_config_inputs(args)]
    io.write_manifest(out, f"centroids_{args.prefix}", None, [p for p in inputs if p], outputs)
    return outputs


def cmd_reconstruct(args) -> list:
    paths = [args.pairs, args.background_pairs, args.reference_pairs, args.reference_background_pairs]
    _inputs_exist(*paths)
    cfg = _config(args)
    out = _out(args, cfg)
    correct = cfg.coincidence.background_correction
    m = _centroid_map(cfg, args.pairs, args.background_pairs, correct)
    r = _centroid_map(cfg, args.reference_pairs, args.reference_background_pairs, correct)
    grad = recon.gradient_from_centroids(m, r)
    phase = recon.frankot_chellappa(grad)
    amp = recon.amplitude_image(np.clip(m.count, 0, None), np.clip(r.count, 0, None), "coincidence")
    outputs = []
    outputs += _grid_outputs(out, "gradient_x", grad.p, grad.pitch)
    outputs += _grid_outputs(out, "gradient_y", grad.q, grad.pitch)
    outputs += _grid_outputs(out, "phase", phase.phase, phase.pitch)
    outputs += _grid_outputs(out, "amplitude", amp, phase.pitch)
    inputs = [p for p in paths if p] + _config_inputs(args)
    io.write_manifest(out, "reconstruct", None, inputs, outputs, {"background_correction": correct})
    return outputs


def cmd_evaluate(args) -> list:
    _inputs_exist(args.phase, args.truth)
    cfg = _config(args)
    out = _out(args, cfg)
    phase, _ = io.read_grid(args.phase)
    truth, _ = io.read_grid(args.truth)
    if args.step is not None:
        cfg.target = dataclasses.replace(cfg.target, step_phase=args.step, height=None)
    from .pipeline import evaluate

    report = evaluate(cfg, phase, truth)
    outputs = list(io.write_report(out / "metrics", report))
    io.write_manifest(out, "evaluate", None, [args.phase, args.truth, *_config_inputs(args)], outputs)
    return outputs


def cmd_compare_sh(args) -> list:
    from . import shcompare

    cfg = _config(args)
    out = _out(args, cfg)
    comp = cfg.comparison()
    seed = cfg.seeds.measured
    result = shcompare.run_comparison(comp, seed)
    path = out / "sh_comparison.csv"
    path.write_text(shcompare.sweep_csv(result))
    report = {}
    for method in shcompare.METHODS:
        n, v = result.curve(method)
        try:
            report[f"{method}.knee_ff_pixels"] = shcompare.find_knee(n, v)
        except InvalidParameterError:
            report[f"{method}.knee_ff_pixels"] = None
    try:
        report["uncertainty_ratio_sh11_qcpgm100"] = shcompare.uncertainty_ratio(result)
    except KeyError:
        report["uncertainty_ratio_sh11_qcpgm100"] = None
    outputs = [path, *io.write_report(out / "sh_comparison_report", report)]
    io.write_manifest(out, "compare-sh", seed, _config_inputs(args), outputs, dataclasses.asdict(cfg.compare_sh))
    return outputs


def cmd_pipeline(args) -> list:
    from .pipeline import background_mitigation, run_pipeline

    cfg = _config(args)
    out = _out(args, cfg)
    res = run_pipeline(cfg)
    if cfg.background.enabled:
        # the four-way comparison: baseline, corrected, coincidence only, singles
        for k, v in background_mitigation(cfg, cfg.seeds.measured).items():
            res.report[f"mitigation.{k}"] = v
    fmt = args.format
    outputs = []
    for name, run in (("measured", res.measured), ("reference", res.reference)):
        nf_path, ff_path = _event_paths(out, name, fmt)
        io.write_events(nf_path, run.nf)
        io.write_events(ff_path, run.ff)
        pp, bp = out / f"{name}_pairs.csv", out / f"{name}_background_pairs.csv"
        io.write_pairs(pp, run.pairs.pairs, run.pairs.tag)
        io.write_pairs(bp, run.background.pairs, run.background.tag)
        outputs += [nf_path, ff_path, pp, bp]
    outputs += _grid_outputs(out, "gradient_x", res.gradient.p, res.gradient.pitch)
    outputs += _grid_outputs(out, "gradient_y", res.gradient.q, res.gradient.pitch)
    outputs += _grid_outputs(out, "phase", res.phase.phase, res.phase.pitch)
    outputs += _grid_outputs(out, "amplitude", res.amplitude, res.phase.pitch)
    outputs += _grid_outputs(out, "truth_phase", res.truth, res.phase.pitch)
    outputs += list(io.write_report(out / "metrics", res.report))
    (out / "config.yaml").write_text(dump_config(cfg))
    outputs.append(out / "config.yaml")
    io.write_manifest(out, "pipeline", cfg.seeds.measured, _config_inputs(args), outputs, cfg.to_dict())
    return outputs


# --- parser ------------------------------------------------------------------


def _common(p, config=True):
    if config:
        p.add_argument("--config", help="YAML configuration document")
        p.add_argument("--preset", help=f"built-in configuration ({', '.join(preset_names())})")
    p.add_argument("--seed", type=int, help="seed of the measured run")
    p.add_argument("--out", help="output directory")
    p.add_argument("--window-ns", type=float, dest="window_ns", help="coincidence window width (ns)")
    p.add_argument("--shift-ns", type=float, dest="shift_ns", help="offset of the accidental window (ns)")
    p.add_argument(
        "--no-background-correction",
        action="store_true",
        dest="no_background_correction",
        help="use raw coincidence centroids",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qcpgm", description="Quantum correlation phase gradient microscopy simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-target", help="write the target and its NF-grid truth")
    _common(p)
    p.set_defaults(func=cmd_gen_target)

    p = sub.add_parser("simulate", help="simulate measured and reference event streams")
    _common(p)
    p.add_argument("--format", choices=("binary", "csv"), default="binary")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("coincidences", help="pair NF and FF events")
    _common(p)
    p.add_argument("--nf", required=True, help="NF event file")
    p.add_argument("--ff", required=True, help="FF event file")
    p.add_argument("--prefix", default="measured")
    p.set_defaults(func=cmd_coincidences)

    p = sub.add_parser("centroids", help="per-pixel FF centroids from pair files")
    _common(p)
    p.add_argument("--pairs", required=True)
    p.add_argument("--background-pairs", dest="background_pairs")
    p.add_argument("--prefix", default="measured")
    p.set_defaults(func=cmd_centroids)

    p = sub.add_parser("reconstruct", help="gradient, phase and amplitude from pair files")
    _common(p)
    p.add_argument("--pairs", required=True)
    p.add_argument("--background-pairs", dest="background_pairs")
    p.add_argument("--reference-pairs", dest="reference_pairs", required=True)
    p.add_argument("--reference-background-pairs", dest="reference_background_pairs")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("evaluate", help="score a phase grid against a truth grid")
    _common(p)
    p.add_argument("--phase", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--step", type=float, help="true phase step (rad) for step scoring")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare-sh", help="1-D QCPGM vs Shack-Hartmann sweep")
    _common(p)
    p.set_defaults(func=cmd_compare_sh)

    p = sub.add_parser("pipeline", help="simulate, pair, reconstruct and evaluate")
    _common(p)
    p.add_argument("--format", choices=("binary", "csv"), default="binary")
    p.set_defaults(func=cmd_pipeline)
    return parser


def _fail(exc, code) -> int:
    doc = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    print(json.dumps(doc, sort_keys=True), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        outputs = args.func(args)
    except (ConfigError, InvalidParameterError) as exc:
        return _fail(exc, EXIT_CONFIG)
    except (FileNotFoundError, FileFormatError, OSError) as exc:
        return _fail(exc, EXIT_IO)
    except (NumericalError, EmptyDistributionError, FloatingPointError) as exc:
        return _fail(exc, EXIT_NUMERIC)
    for p in outputs:
        print(p)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
