import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hydemic.errors import DimensionError, DuplicateRecordError, LabelLookupError, ParseError
from hydemic.spectra import (
    GROUND, N_BANDS, SENTINEL, LabelCodec, SpectralLibrary, Spectrum, decode_label, encode_label,
    generate_synthetic_library, impute_masked, load_spectral_library, validate_spectrum,
    write_library,
)

HEADER = "mineral_name,spectrum_id," + ",".join(f"b{i:03d}" for i in range(N_BANDS))


def row(name, sid, values):
    return f"{name},{sid}," + ",".join(repr(float(v)) for v in values)


def write_csv(path, rows, newline="\n"):
    path.write_text(newline.join([HEADER] + rows) + newline, encoding="utf-8")
    return path


@pytest.fixture
def fixture_rows():
    t = np.linspace(0, 1, N_BANDS)
    return [row("Cuprite", "c1", 0.3 + 0.2 * t), row("Malachite", "m1", 0.6 - 0.1 * t),
            row("Cuprite", "c2", 0.31 + 0.2 * t)]


def test_load_fixture(tmp_path, fixture_rows):
    lib = load_spectral_library(write_csv(tmp_path / "lib.csv", fixture_rows))
    assert len(lib) == 3
    assert lib.codec.names == ("Cuprite", "Malachite", GROUND)
    assert [s.class_index for s in lib.spectra] == [0, 1, 0]
    assert lib.spectra[1].reflectance[0] == pytest.approx(0.6, abs=1e-15)


def test_load_crlf(tmp_path, fixture_rows):
    lib = load_spectral_library(write_csv(tmp_path / "lib.csv", fixture_rows, newline="\r\n"))
    assert len(lib) == 3


def test_sentinel_is_masked(tmp_path):
    v = np.full(N_BANDS, 0.4)
    v[10] = SENTINEL
    lib = load_spectral_library(write_csv(tmp_path / "lib.csv", [row("Cuprite", "c1", v)]))
    s = lib.spectra[0]
    assert not s.band_valid[10]
    assert s.band_valid.sum() == N_BANDS - 1
    np.testing.assert_array_equal(s.reflectance[np.arange(N_BANDS) != 10], 0.4)
    assert validate_spectrum(s).n_sentinel_masked == 1


def test_load_errors(tmp_path):
    good = np.full(N_BANDS, 0.5)
    with pytest.raises(DimensionError):
        load_spectral_library(write_csv(tmp_path / "a.csv", [row("X", "1", good[:-1])]))
    with pytest.raises(DuplicateRecordError):
        load_spectral_library(write_csv(tmp_path / "b.csv", [row("X", "1", good), row("X", "1", good)]))
    with pytest.raises(ParseError) as exc:
        load_spectral_library(write_csv(tmp_path / "c.csv", [row("X", "1", good), "X,2,abc" + ",0.5" * 223]))
    assert exc.value.line == 3
    bad = good.copy()
    bad[3] = 1.7
    with pytest.raises(ParseError):
        load_spectral_library(write_csv(tmp_path / "d.csv", [row("X", "1", bad)]))
    with pytest.raises(ValueError):
        load_spectral_library(tmp_path / "a.csv", format="envi")


def test_values_above_one_warn(tmp_path, caplog):
    v = np.full(N_BANDS, 0.5)
    v[:2] = 1.2
    with caplog.at_level(logging.WARNING, logger="hydemic.spectra"):
        lib = load_spectral_library(write_csv(tmp_path / "lib.csv", [row("X", "1", v)]))
    assert "above" in caplog.text
    assert validate_spectrum(lib.spectra[0]).n_above_one == 2


def test_usgs_ascii_manifest(tmp_path):
    t = np.linspace(0, 1, N_BANDS)
    for i, name in enumerate(["Cuprite", "Kaolinite"]):
        body = [f"{name} GDS{i} splice"] + [repr(float(v)) for v in 0.2 + 0.1 * i + 0.3 * t]
        (tmp_path / f"s{i}.txt").write_text("\n".join(body) + "\n")
    (tmp_path / "manifest.txt").write_text("# path,mineral\ns0.txt,Cuprite\ns1.txt,Kaolinite\n")
    lib = load_spectral_library(tmp_path / "manifest.txt", format="usgs_ascii")
    assert lib.codec.names == ("Cuprite", "Kaolinite", GROUND)
    assert [s.spectrum_id for s in lib.spectra] == ["s0", "s1"]
    assert lib.spectra[1].reflectance[-1] == pytest.approx(0.6)


def test_library_round_trip(tmp_path):
    lib = generate_synthetic_library(4, 3, seed=5)
    x = np.array(lib.spectra[2].reflectance)
    valid = np.ones(N_BANDS, bool)
    valid[[0, 50, 51]] = False
    masked = Spectrum(lib.spectra[2].mineral_name, lib.spectra[2].class_index, x, valid, "masked")
    lib = SpectralLibrary(lib.spectra + (masked,), lib.codec)

    write_library(lib, tmp_path / "out.csv")
    back = load_spectral_library(tmp_path / "out.csv")
    assert back.codec == lib.codec
    for a, b in zip(lib.spectra, back.spectra):
        assert (a.mineral_name, a.spectrum_id) == (b.mineral_name, b.spectrum_id)
        np.testing.assert_array_equal(a.band_valid, b.band_valid)
        np.testing.assert_allclose(a.reflectance[a.band_valid], b.reflectance[b.band_valid], atol=1e-12)


# --- validation ----------------------------------------------------------------

def test_validate_examples():
    ones = np.ones(N_BANDS, bool)
    rep = validate_spectrum(Spectrum("X", 0, np.full(N_BANDS, 0.5), ones))
    assert rep.ok and (rep.n_sentinel_masked, rep.n_out_of_range, rep.n_nonfinite) == (0, 0, 0)
    r = np.full(N_BANDS, 0.5)
    r[7] = np.nan
    rep = validate_spectrum(Spectrum("X", 0, r, ones))
    assert rep.n_nonfinite == 1 and not rep.ok


def test_spectrum_invariants():
    with pytest.raises(DimensionError):
        Spectrum("X", 0, np.zeros(4), np.ones(3, bool))
    with pytest.raises(ValueError):
        Spectrum("X", 0, np.zeros(3), np.ones(3, bool), wavelengths_um=np.array([1.0, 1.0, 2.0]))
    s = Spectrum("X", 0, np.zeros(3), np.ones(3, bool))
    with pytest.raises(ValueError):
        s.reflectance[0] = 1.0


def test_impute_masked():
    r = np.array([9.0, 1.0, 9.0, 3.0, 9.0])
    valid = np.array([False, True, False, True, False])
    np.testing.assert_array_equal(impute_masked(r, valid), [1.0, 1.0, 2.0, 3.0, 3.0])


# --- codec ------------------------------------------------------------------------

def test_codec_examples():
    lib = generate_synthetic_library(115, 1, seed=1)
    codec = lib.codec
    assert len(codec) == 116
    assert encode_label(codec, "ground") == 115 and decode_label(codec, 115) == "ground"
    assert all(codec.decode(codec.encode(n)) == n for n in codec.names)
    with pytest.raises(LabelLookupError):
        encode_label(codec, "NotAMineral")
    with pytest.raises(LabelLookupError):
        decode_label(codec, 116)
    with pytest.raises(ValueError):
        LabelCodec(("a", "ground", "b"))


@settings(max_examples=100, deadline=None)
@given(st.permutations([f"m{i}" for i in range(12)]))
def test_codec_bijection_property(names):
    codec = LabelCodec.from_minerals(names)
    assert codec.names[:-1] == tuple(names)
    assert [codec.encode(codec.decode(i)) for i in range(len(codec))] == list(range(len(codec)))


# --- synthetic library ---------------------------------------------------------------

def test_synthetic_determinism_and_counts():
    a = generate_synthetic_library(2, 1, 224, seed=7)
    b = generate_synthetic_library(2, 1, 224, seed=7)
    for s, t in zip(a.spectra, b.spectra):
        assert s.reflectance.tobytes() == t.reflectance.tobytes()
    big = generate_synthetic_library(115, 4, 224, seed=1)
    assert len(big) == 460 and len(big.codec) == 116
    x, _ = big.arrays()
    assert x.min() >= 0.0 and x.max() <= 1.0


def test_synthetic_copies_differ_but_stay_close():
    lib = generate_synthetic_library(3, 4, seed=2)
    for name in lib.codec.names[:-1]:
        copies = np.stack([s.reflectance for s in lib.by_class(name)])
        assert np.all(np.abs(copies[1:] - copies[0]).max(axis=1) > 0)
        assert np.all(np.abs(copies[1:] - copies[0]).mean(axis=1) < 0.05)


def test_synthetic_errors():
    with pytest.raises(ValueError):
        generate_synthetic_library(1, 1)
    with pytest.raises(ValueError):
        generate_synthetic_library(2, 1, n_bands=8)
    with pytest.raises(ValueError):
        generate_synthetic_library(2, 1, names=["ground"])
