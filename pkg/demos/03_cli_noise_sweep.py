"""The command-line workflow end to end, followed by a noise sweep.

Each step is the same call the ``hydemic`` console script makes, so the
files written here are exactly what the shell commands would produce:

    hydemic train --library lib.csv --out model.hdm1 --config train.json
    hydemic gen-scene --scene scene.json --library lib.csv --out cube.hcub
    hydemic predict --model model.hdm1 --cube cube.hcub --out-csv map.csv --out-map map.ppm
    hydemic evaluate --pred map.csv --truth cube.hcub --report report.json --plots plots
    hydemic noise-sweep --model model.hdm1 --scene-template scene.json --library lib.csv --out sweep.csv
"""
import json
import sys
from pathlib import Path

from hydemic.cli import main as hydemic
from hydemic.scene import copper_scene_spec, save_scene_spec
from hydemic.spectra import generate_synthetic_library, write_library


def run(*argv):
    argv = [str(a) for a in argv]
    print("$ hydemic " + " ".join(argv))
    code = hydemic(argv)
    if code:
        sys.exit(f"command failed with exit code {code}")


def main(out="demo_cli"):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_library(generate_synthetic_library(6, 20, seed=4, names=["Cuprite", "Malachite", "Chalcopyrite"]),
                  out / "lib.csv")
    save_scene_spec(copper_scene_spec(noise_level=0.10, seed=7), out / "scene.json")
    (out / "train.json").write_text(json.dumps({
        "epochs": 40, "seed": 0, "early_report_interval": 0,
        "model": {"conv_filters": [16, 32], "dense_units": [32, 16]},
    }))

    run("train", "--library", out / "lib.csv", "--out", out / "model.hdm1",
        "--config", out / "train.json", "--history", out / "history.csv")
    run("gen-scene", "--scene", out / "scene.json", "--library", out / "lib.csv", "--out", out / "cube.hcub")
    run("predict", "--model", out / "model.hdm1", "--cube", out / "cube.hcub",
        "--out-csv", out / "map.csv", "--out-map", out / "map.ppm")
    run("evaluate", "--pred", out / "map.csv", "--truth", out / "cube.hcub",
        "--report", out / "report.json", "--plots", out / "plots")
    report = json.loads((out / "report.json").read_text())
    print(f"10% noise: MCC {report['mcc']:.4f}, TPR {report['tpr']:.4f}")

    run("noise-sweep", "--model", out / "model.hdm1", "--scene-template", out / "scene.json",
        "--library", out / "lib.csv", "--levels", "0,0.01,0.02,0.05,0.10,0.20", "--out", out / "sweep.csv")
    print((out / "sweep.csv").read_text())


if __name__ == "__main__":
    main(*sys.argv[1:])
