"""Train the classifier on a synthetic library and map a copper scene.

The default run is a quick one: twelve minerals and a narrower network train
in well under a minute.  ``--full`` switches to the full-size setting (115
minerals with four spectra each, the full network, up to 2000 epochs), which
takes roughly half an hour on one core.

    python demos/02_train_and_map.py --out demo_out
    python demos/02_train_and_map.py --full --out demo_out_full
"""
import argparse
import logging
from pathlib import Path

from hydemic import ModelConfig, build_model, copper_scene_spec, generate_scene, predict_pixelwise, save_model
from hydemic.metrics import evaluation_report
from hydemic.render import class_palette, svg_class_map, svg_density_histograms, write_ppm
from hydemic.spectra import generate_synthetic_library
from hydemic.training import TrainConfig, train

MINERALS = ["Cuprite", "Malachite", "Chalcopyrite"]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--full", action="store_true")
    ap.add_argument("--out", default="demo_out")
    ap.add_argument("--noise", type=float, default=0.05)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.full:
        library = generate_synthetic_library(115, 4, seed=1, names=MINERALS)
        mcfg = ModelConfig(n_classes=len(library.codec))
        tcfg = TrainConfig(epochs=2000, seed=0, stop_train_loss=0.05, stop_val_loss=0.05)
    else:
        library = generate_synthetic_library(12, 20, seed=1, names=MINERALS)
        mcfg = ModelConfig(n_classes=len(library.codec), conv_filters=(16, 32), dense_units=(64, 32))
        tcfg = TrainConfig(epochs=60, seed=0, early_report_interval=10)
    print(f"library: {len(library)} spectra, {len(library.codec)} classes including ground")

    model = build_model(mcfg, init_seed=0, class_names=library.codec.names)
    model, history = train(model, library, tcfg)
    history.to_csv(out / "history.csv")
    save_model(model, out / "model.hdm1")
    print(f"trained {len(history)} epochs: final train loss {history.train_loss[-1]:.4f}, "
          f"best val loss {min(history.val_loss):.2e} at epoch {history.best_epoch_val + 1}")

    # the same three-polygon scene, clean and noisy
    palette = class_palette(model.class_names)
    for level in (0.0, args.noise):
        cube = generate_scene(copper_scene_spec(noise_level=level, seed=3), library)
        mineral_map = predict_pixelwise(model, cube)
        report = evaluation_report(mineral_map, cube.truth, mcfg.n_classes, model.class_names)
        tag = f"noise{level:g}"
        write_ppm(mineral_map.classes, palette, out / f"map_{tag}.ppm")
        svg_class_map(mineral_map.classes, palette, out / f"map_{tag}.svg", title=f"noise {level:.0%}")
        svg_density_histograms([report.hist_correct, report.hist_incorrect], out / f"confidence_{tag}.svg")
        print(f"noise {level:5.0%}: MCC {report.mcc:.4f}  TPR {report.tpr:.4f}  "
              f"mean confidence {report.mean_confidence:.2f}%  errors {report.n_incorrect}")
    print(f"outputs in {out}/")


if __name__ == "__main__":
    main()
