"""``hydemic`` command-line entry point.

Exit codes: 0 success, 2 bad arguments, 3 data error, 4 training diverged.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import DataError, LabelLookupError, TrainingDivergedError
from .metrics import evaluation_report
from .model import MineralMap, ModelConfig, build_model, load_model, predict_pixelwise, save_model
from .render import (class_palette, svg_class_map, svg_confidence_scatter, svg_density_histograms,
                     svg_summary_bars, write_ppm)
from .scene import generate_scene, load_scene_spec, read_cube, write_cube
from .spectra import load_spectral_library
from .training import TrainConfig, train

EXIT_OK, EXIT_ARGS, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4


class UsageError(ValueError):
    pass


def _existing(path, what):
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} not found: {path}")
    return p


def _write_manifest(primary_out, command, config, inputs, outputs, seeds, started, extra=None):
    manifest = {
        "command": command,
        "config": config,
        "inputs": {k: str(v) for k, v in inputs.items()},
        "outputs": {k: str(v) for k, v in outputs.items()},
        "seeds": seeds,
        "tool_version": __version__,
        "duration_s": round(time.perf_counter() - started, 6),
    }
    if extra:
        manifest.update(extra)
    path = Path(str(primary_out) + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _read_json(path, what):
    try:
        return json.loads(_existing(path, what).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise UsageError(f"{what} is not valid JSON: {exc}") from None


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_train(args):
    started = time.perf_counter()
    lib_path = _existing(args.library, "library")
    raw = _read_json(args.config, "training config") if args.config else {}
    raw = dict(raw)
    model_opts = raw.pop("model", {})
    init_seed = int(raw.pop("init_seed", 0))
    try:
        tcfg = TrainConfig.from_dict(raw)
    except TypeError as exc:
        raise UsageError(f"invalid training config: {exc}") from None

    library = load_spectral_library(lib_path, args.format)
    n_bands = library.spectra[0].n_bands if library.spectra else 224
    try:
        mcfg = ModelConfig(**{"n_bands": n_bands, "n_classes": len(library.codec), **model_opts})
    except TypeError as exc:
        raise UsageError(f"invalid model config: {exc}") from None
    model = build_model(mcfg, init_seed, class_names=library.codec.names)
    model, history = train(model, library, tcfg)
    save_model(model, args.out)
    outputs = {"model": args.out}
    if args.history:
        history.to_csv(args.history)
        outputs["history"] = args.history
    _write_manifest(args.out, "train",
                    {"train": tcfg.to_dict(), "model": mcfg.to_dict(), "init_seed": init_seed},
                    {"library": lib_path, "config": args.config or ""}, outputs,
                    {"init_seed": init_seed, "train_seed": tcfg.seed}, started,
                    {"epochs_completed": len(history)})
    return EXIT_OK


def cmd_gen_scene(args):
    started = time.perf_counter()
    spec = load_scene_spec(_existing(args.scene, "scene spec"))
    library = load_spectral_library(_existing(args.library, "library"), args.format)
    cube = generate_scene(spec, library)
    write_cube(cube, args.out)
    _write_manifest(args.out, "gen-scene", spec.to_dict(),
                    {"scene": args.scene, "library": args.library}, {"cube": args.out},
                    {"noise_seed": spec.seed}, started)
    return EXIT_OK


def _map_rows(model, mineral_map):
    h, w = mineral_map.classes.shape
    for y in range(h):
        for x in range(w):
            c = int(mineral_map.classes[y, x])
            yield [y * w + x, y, x, c, model.class_names[c], repr(float(mineral_map.confidence[y, x]))]


def cmd_predict(args):
    started = time.perf_counter()
    model = load_model(_existing(args.model, "model"))
    cube = read_cube(_existing(args.cube, "cube"))
    mineral_map = predict_pixelwise(model, cube)
    palette = class_palette(model.class_names)
    outputs = {}
    if args.out_csv:
        with open(args.out_csv, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["pixel_index", "y", "x", "class_index", "class_name", "confidence"])
            wr.writerows(_map_rows(model, mineral_map))
        outputs["csv"] = args.out_csv
    if args.out_map:
        write_ppm(mineral_map.classes, palette, args.out_map)
        outputs["ppm"] = args.out_map
    if not outputs:
        raise UsageError("give --out-map and/or --out-csv")
    primary = args.out_csv or args.out_map
    _write_manifest(primary, "predict", {"n_classes": model.config.n_classes},
                    {"model": args.model, "cube": args.cube}, outputs, {}, started,
                    {"palette": {n: list(c) for n, c in zip(model.class_names, palette)}})
    return EXIT_OK


def read_map_csv(path, height, width):
    """Parse a prediction CSV into ``(MineralMap, {index: name})``."""
    classes = np.full(height * width, -1, dtype=np.int64)
    conf = np.zeros(height * width)
    names = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        try:
            for row in reader:
                i = int(row["pixel_index"])
                if not 0 <= i < height * width:
                    raise DataError(f"pixel index {i} outside a {height}x{width} grid")
                classes[i] = int(row["class_index"])
                conf[i] = float(row["confidence"])
                names[classes[i]] = row["class_name"]
        except (KeyError, ValueError, TypeError) as exc:
            if isinstance(exc, DataError):
                raise
            raise DataError(f"malformed prediction CSV: {exc}") from None
    if np.any(classes < 0):
        raise DataError(f"prediction CSV does not cover all {height * width} pixels")
    return MineralMap(classes.reshape(height, width), conf.reshape(height, width)), names


def _report_names(names, n):
    return tuple(names.get(i, f"class_{i}") for i in range(n))


def cmd_evaluate(args):
    started = time.perf_counter()
    cube = read_cube(_existing(args.truth, "truth cube"))
    if cube.truth is None:
        raise DataError("cube carries no truth grid")
    mineral_map, names = read_map_csv(_existing(args.pred, "prediction CSV"), cube.height, cube.width)
    n = int(max(mineral_map.classes.max(), cube.truth.max())) + 1
    class_names = _report_names(names, n)
    report = evaluation_report(mineral_map, cube.truth, n, class_names)
    report.write_json(args.report)
    outputs = {"report": args.report}
    palette = class_palette(class_names)
    if args.plots:
        plots = Path(args.plots)
        report.write_csvs(plots)
        svg_class_map(mineral_map.classes, palette, plots / "class_map.svg")
        svg_summary_bars(report.n_correct, report.n_incorrect, plots / "summary.svg")
        svg_confidence_scatter(report.records, plots / "confidence_scatter.svg")
        svg_density_histograms([report.hist_correct, report.hist_incorrect], plots / "confidence_density.svg")
        outputs["plots"] = args.plots
    _write_manifest(args.report, "evaluate", {"n_classes": n},
                    {"pred": args.pred, "truth": args.truth}, outputs, {}, started,
                    {"palette": {nm: list(c) for nm, c in zip(class_names, palette)}})
    return EXIT_OK


def _levels(text):
    try:
        levels = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid noise levels {text!r}") from None
    return levels


def noise_sweep(model, spec, library, levels):
    """One ``(level, report)`` pair per noise level; all levels share the template seed."""
    rows = []
    for level in levels:
        cube = generate_scene(spec.with_noise(level), library)
        mineral_map = predict_pixelwise(model, cube)
        rows.append((level, evaluation_report(mineral_map, cube.truth, model.config.n_classes)))
    return rows


def cmd_noise_sweep(args):
    started = time.perf_counter()
    if not args.levels:
        raise UsageError("no noise levels given")
    if any(lv < 0 or lv > 1 for lv in args.levels):
        raise UsageError("noise levels must lie in [0, 1]")
    model = load_model(_existing(args.model, "model"))
    spec = load_scene_spec(_existing(args.scene_template, "scene template"))
    library = load_spectral_library(_existing(args.library, "library"), args.format)
    rows = noise_sweep(model, spec, library, args.levels)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["noise_level", "mcc", "tpr", "mean_pc", "median_pc"])
        for level, rep in rows:
            wr.writerow([repr(level), repr(rep.mcc), repr(rep.tpr),
                         repr(rep.mean_confidence), repr(rep.median_confidence)])
    _write_manifest(args.out, "noise-sweep", {"levels": args.levels, "scene": spec.to_dict()},
                    {"model": args.model, "scene_template": args.scene_template,
                     "library": args.library}, {"table": args.out}, {"noise_seed": spec.seed}, started)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_ARGS)


def build_parser():
    p = _Parser(prog="hydemic", description="Hyperspectral mineral classification with a 1D CNN.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    fmt = dict(choices=["csv", "usgs_ascii"], default="csv")

    t = sub.add_parser("train", help="train a model on a spectral library")
    t.add_argument("--library", required=True)
    t.add_argument("--format", **fmt)
    t.add_argument("--out", required=True, help="output HDM1 model file")
    t.add_argument("--config", help="training JSON (TrainConfig fields, optional 'model' and 'init_seed')")
    t.add_argument("--history", help="per-epoch loss CSV")
    t.set_defaults(func=cmd_train)

    g = sub.add_parser("gen-scene", help="render a synthetic noisy cube from a scene JSON")
    g.add_argument("--scene", required=True)
    g.add_argument("--library", required=True)
    g.add_argument("--format", **fmt)
    g.add_argument("--out", required=True, help="output HCUB1 cube")
    g.set_defaults(func=cmd_gen_scene)

    pr = sub.add_parser("predict", help="classify every pixel of a cube")
    pr.add_argument("--model", required=True)
    pr.add_argument("--cube", required=True)
    pr.add_argument("--out-map", help="PPM image of the class map")
    pr.add_argument("--out-csv", help="per-pixel class and confidence CSV")
    pr.set_defaults(func=cmd_predict)

    e = sub.add_parser("evaluate", help="score a prediction CSV against a cube's truth grid")
    e.add_argument("--pred", required=True)
    e.add_argument("--truth", required=True)
    e.add_argument("--report", required=True)
    e.add_argument("--plots", help="directory for plot CSVs and SVG panels")
    e.set_defaults(func=cmd_evaluate)

    n = sub.add_parser("noise-sweep", help="MCC/TPR/confidence table over noise levels")
    n.add_argument("--model", required=True)
    n.add_argument("--scene-template", required=True)
    n.add_argument("--library", required=True)
    n.add_argument("--format", **fmt)
    n.add_argument("--levels", type=_levels, default=[0.0, 0.01, 0.02, 0.05, 0.10])
    n.add_argument("--out", required=True)
    n.set_defaults(func=cmd_noise_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except TrainingDivergedError as exc:
        code, msg = EXIT_DIVERGED, str(exc)
    except (DataError, LabelLookupError, OSError) as exc:
        code, msg = EXIT_DATA, str(exc)
    except ValueError as exc:
        code, msg = EXIT_ARGS, str(exc)
    print(f"hydemic {args.command}: error: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
