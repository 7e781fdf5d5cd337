import csv
import json

import numpy as np
import pytest

from hydemic.cli import main, read_map_csv
from hydemic.model import build_model, load_model, model_to_bytes, ModelConfig
from hydemic.scene import HyperCube, RegionSpec, SceneSpec, build_scene, read_cube, save_scene_spec, write_cube
from hydemic.spectra import generate_synthetic_library, load_spectral_library, write_library

SMALL_MODEL = {"conv_filters": [8, 16], "dense_units": [16, 8]}


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    lib = generate_synthetic_library(2, 25, seed=4, names=["Cuprite", "Malachite"])
    write_library(lib, d / "lib.csv")
    spec = SceneSpec(20, 16, [RegionSpec("Cuprite", [(1, 1), (9, 1), (9, 14), (1, 14)], 1),
                              RegionSpec("Malachite", [(11, 2), (19, 2), (19, 13), (11, 13)], 1)],
                     noise_level=0.01, seed=5)
    save_scene_spec(spec, d / "scene.json")
    (d / "train.json").write_text(json.dumps({"epochs": 50, "seed": 1, "early_report_interval": 0,
                                              "model": SMALL_MODEL}))
    assert main(["train", "--library", str(d / "lib.csv"), "--out", str(d / "m.hdm1"),
                 "--config", str(d / "train.json"), "--history", str(d / "hist.csv")]) == 0
    assert main(["gen-scene", "--scene", str(d / "scene.json"), "--library", str(d / "lib.csv"),
                 "--out", str(d / "c.hcub")]) == 0
    assert main(["predict", "--model", str(d / "m.hdm1"), "--cube", str(d / "c.hcub"),
                 "--out-csv", str(d / "map.csv"), "--out-map", str(d / "map.ppm")]) == 0
    return d


def test_train_outputs(work):
    model = load_model(work / "m.hdm1")
    assert model.class_names == ("Cuprite", "Malachite", "ground")
    assert model.config.conv_filters == (8, 16)
    rows = (work / "hist.csv").read_text().splitlines()
    assert len(rows) == 51
    manifest = json.loads((work / "m.hdm1.manifest.json").read_text())
    assert manifest["command"] == "train" and manifest["epochs_completed"] == 50
    assert {"config", "inputs", "outputs", "seeds", "tool_version", "duration_s"} <= set(manifest)


def test_gen_scene_and_predict_outputs(work):
    assert (work / "c.hcub").read_bytes().startswith(b"HCUB1 16 20 224 1\n")
    with open(work / "map.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["pixel_index", "y", "x", "class_index", "class_name", "confidence"]
    assert len(rows) == 1 + 16 * 20
    assert rows[1][:3] == ["0", "0", "0"] and rows[1][4] == "ground"
    assert (work / "map.ppm").read_bytes().startswith(b"P6\n20 16\n255\n")
    assert (work / "map.csv.manifest.json").exists()
    cube = read_cube(work / "c.hcub")
    mm, _ = read_map_csv(work / "map.csv", 16, 20)
    assert np.mean(mm.classes == cube.truth) > 0.95


def test_evaluate(work, tmp_path):
    plots = tmp_path / "plots"
    assert main(["evaluate", "--pred", str(work / "map.csv"), "--truth", str(work / "c.hcub"),
                 "--report", str(tmp_path / "r.json"), "--plots", str(plots)]) == 0
    rep = json.loads((tmp_path / "r.json").read_text())
    assert rep["n_pixels"] == 320 and 0 <= rep["tpr"] <= 1
    assert rep["class_names"] == ["Cuprite", "Malachite", "ground"]
    for name in ("confidence_scatter.csv", "hist_correct.csv", "hist_incorrect.csv", "class_map.svg",
                 "summary.svg", "confidence_scatter.svg", "confidence_density.svg"):
        assert (plots / name).exists()


def test_perfect_prediction_report(tmp_path):
    lib = generate_synthetic_library(2, 1, seed=0)
    write_library(lib, tmp_path / "lib.csv")
    save_scene_spec(SceneSpec(4, 3, [RegionSpec(lib.codec.names[0], [(0, 0), (2, 0), (2, 3), (0, 3)])]),
                    tmp_path / "s.json")
    assert main(["gen-scene", "--scene", str(tmp_path / "s.json"), "--library", str(tmp_path / "lib.csv"),
                 "--out", str(tmp_path / "c.hcub")]) == 0
    truth = read_cube(tmp_path / "c.hcub").truth
    with open(tmp_path / "p.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["pixel_index", "y", "x", "class_index", "class_name", "confidence"])
        for i, c in enumerate(truth.reshape(-1)):
            w.writerow([i, i // 4, i % 4, c, lib.codec.names[c], 99.5])
    assert main(["evaluate", "--pred", str(tmp_path / "p.csv"), "--truth", str(tmp_path / "c.hcub"),
                 "--report", str(tmp_path / "r.json")]) == 0
    rep = json.loads((tmp_path / "r.json").read_text())
    assert rep["mcc"] == 1.0 and rep["tpr"] == 1.0


def test_noise_sweep(work, tmp_path):
    out = tmp_path / "sweep.csv"
    assert main(["noise-sweep", "--model", str(work / "m.hdm1"), "--scene-template", str(work / "scene.json"),
                 "--library", str(work / "lib.csv"), "--levels", "0,0.01,0.02,0.05,0.10",
                 "--out", str(out)]) == 0
    rows = out.read_text().splitlines()
    assert rows[0] == "noise_level,mcc,tpr,mean_pc,median_pc" and len(rows) == 6
    assert main(["noise-sweep", "--model", str(work / "m.hdm1"), "--scene-template", str(work / "scene.json"),
                 "--library", str(work / "lib.csv"), "--levels", "", "--out", str(out)]) == 2


def test_commands_are_bitwise_idempotent(work, tmp_path):
    assert main(["train", "--library", str(work / "lib.csv"), "--out", str(tmp_path / "m.hdm1"),
                 "--config", str(work / "train.json")]) == 0
    assert (tmp_path / "m.hdm1").read_bytes() == (work / "m.hdm1").read_bytes()
    assert main(["gen-scene", "--scene", str(work / "scene.json"), "--library", str(work / "lib.csv"),
                 "--out", str(tmp_path / "c.hcub")]) == 0
    assert (tmp_path / "c.hcub").read_bytes() == (work / "c.hcub").read_bytes()
    assert main(["predict", "--model", str(work / "m.hdm1"), "--cube", str(work / "c.hcub"),
                 "--out-csv", str(tmp_path / "map.csv"), "--out-map", str(tmp_path / "map.ppm")]) == 0
    assert (tmp_path / "map.csv").read_bytes() == (work / "map.csv").read_bytes()
    assert (tmp_path / "map.ppm").read_bytes() == (work / "map.ppm").read_bytes()


def test_zero_epoch_config_persists_initial_model(work, tmp_path):
    (tmp_path / "t.json").write_text(json.dumps({"epochs": 0, "init_seed": 3, "model": SMALL_MODEL}))
    assert main(["train", "--library", str(work / "lib.csv"), "--out", str(tmp_path / "m.hdm1"),
                 "--config", str(tmp_path / "t.json")]) == 0
    lib = load_spectral_library(work / "lib.csv")
    fresh = build_model(ModelConfig(n_classes=3, **SMALL_MODEL), 3, class_names=lib.codec.names)
    saved = load_model(tmp_path / "m.hdm1")
    for (k1, a), (k2, b) in zip(fresh.arrays(), saved.arrays()):
        assert k1 == k2 and a.tobytes() == b.tobytes()


# --- exit codes ------------------------------------------------------------------------

def test_bad_arguments_exit_2(work, tmp_path, capsys):
    assert main([]) == 2
    assert main(["train", "--out", "x"]) == 2
    assert main(["train", "--library", str(tmp_path / "missing.csv"), "--out", str(tmp_path / "m")]) == 2
    (tmp_path / "bad.json").write_text(json.dumps({"epochs": 5, "learning_rate": 1}))
    assert main(["train", "--library", str(work / "lib.csv"), "--out", str(tmp_path / "m"),
                 "--config", str(tmp_path / "bad.json")]) == 2
    spec = json.loads((work / "scene.json").read_text())
    spec["regions"][0]["polygon"] = [[0, 0], [5, 5]]
    (tmp_path / "s.json").write_text(json.dumps(spec))
    assert main(["gen-scene", "--scene", str(tmp_path / "s.json"), "--library", str(work / "lib.csv"),
                 "--out", str(tmp_path / "c.hcub")]) == 2
    assert "error" in capsys.readouterr().err


def test_data_errors_exit_3(work, tmp_path):
    spec = json.loads((work / "scene.json").read_text())
    spec["regions"][0]["class_name"] = "Unobtainium"
    (tmp_path / "s.json").write_text(json.dumps(spec))
    assert main(["gen-scene", "--scene", str(tmp_path / "s.json"), "--library", str(work / "lib.csv"),
                 "--out", str(tmp_path / "c.hcub")]) == 3

    # band mismatch between model and cube
    narrow = SceneSpec(3, 3)
    lib = generate_synthetic_library(2, 1, n_bands=100, seed=0)
    write_cube(build_scene(narrow, lib), tmp_path / "narrow.hcub")
    assert main(["predict", "--model", str(work / "m.hdm1"), "--cube", str(tmp_path / "narrow.hcub"),
                 "--out-csv", str(tmp_path / "p.csv")]) == 3

    # prediction grid smaller than the truth grid
    assert main(["evaluate", "--pred", str(work / "map.csv"), "--truth", str(tmp_path / "narrow.hcub"),
                 "--report", str(tmp_path / "r.json")]) == 3

    # cube without truth
    cube = read_cube(work / "c.hcub")
    write_cube(HyperCube(cube.data), tmp_path / "notruth.hcub")
    assert main(["evaluate", "--pred", str(work / "map.csv"), "--truth", str(tmp_path / "notruth.hcub"),
                 "--report", str(tmp_path / "r.json")]) == 3

    # corrupted model file
    blob = bytearray((work / "m.hdm1").read_bytes())
    blob[200] ^= 0xFF
    (tmp_path / "bad.hdm1").write_bytes(bytes(blob))
    assert main(["predict", "--model", str(tmp_path / "bad.hdm1"), "--cube", str(work / "c.hcub"),
                 "--out-csv", str(tmp_path / "p.csv")]) == 3

    # malformed library row
    lines = (work / "lib.csv").read_text().splitlines()
    lines[2] = lines[2].replace(",", ",x", 3)
    (tmp_path / "bad.csv").write_text("\n".join(lines) + "\n")
    assert main(["train", "--library", str(tmp_path / "bad.csv"), "--out", str(tmp_path / "m")]) == 3


def test_divergence_exit_4(work, tmp_path):
    (tmp_path / "t.json").write_text(json.dumps({"epochs": 3, "lr_max": 1e300, "model": SMALL_MODEL,
                                                 "early_report_interval": 0}))
    assert main(["train", "--library", str(work / "lib.csv"), "--out", str(tmp_path / "m.hdm1"),
                 "--config", str(tmp_path / "t.json")]) == 4
    assert not (tmp_path / "m.hdm1").exists()


def test_inputs_are_not_mutated(work):
    before = {p.name: p.read_bytes() for p in (work / "lib.csv", work / "scene.json", work / "m.hdm1")}
    main(["predict", "--model", str(work / "m.hdm1"), "--cube", str(work / "c.hcub"),
          "--out-csv", str(work / "map2.csv")])
    for name, data in before.items():
        assert (work / name).read_bytes() == data
    assert model_to_bytes(load_model(work / "m.hdm1")) == before["m.hdm1"]
