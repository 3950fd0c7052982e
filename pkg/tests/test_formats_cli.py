import shutil

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lovtomo import formats
from lovtomo.cli import (
    FIDELITY_FILES,
    HISTOGRAM_FILE,
    SUMMARY_FILE,
    TOMO_FILENAME,
    main,
)
from lovtomo.lattice import CountFrame, GridGeometry, canonical_settings
from lovtomo.tomography import TomographyMap

from conftest import random_density_matrix
from test_imaging import parse_pnm


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def error_line(err):
    lines = [ln for ln in err.splitlines() if ln.startswith("lovtomo-error:")]
    assert len(lines) == 1, err
    return lines[0]


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "sim.cfg"
    path.write_text("# small grid\nwidth = 20\nheight = 16\nmean_total_counts = 2e6  # per setting\n"
                    "background_rate = 1.5\nseed = 11\n"
                    f"output_dir = {tmp_path / 'frames'}\n")
    return path


# -- config ------------------------------------------------------------------

def test_config_roundtrip_default():
    cfg = formats.default_config()
    assert formats.parse_config(formats.format_config(cfg)) == cfg
    assert cfg.width == 140 and cfg.noise == "poisson"


def test_config_derived_defaults():
    cfg = formats.parse_config("width = 41\nheight = 21\n")
    g = cfg.grid()
    assert (cfg.origin_x0, cfg.origin_y0) == g.center()
    assert cfg.mean_total_counts == 1e6 * 41 * 21


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-7, 1e-2), st.floats(-1, 1), st.integers(0, 2**40), st.floats(0, 1e12))
def test_config_roundtrip_lossless(pitch, x0, seed, total):
    cfg = formats.default_config(pixel_pitch=pitch, origin_x0=x0, seed=seed, mean_total_counts=total)
    assert formats.parse_config(formats.format_config(cfg)) == cfg


@pytest.mark.parametrize("text, key", [
    ("colour = red", "colour"),
    ("seed = 1\nseed = 2", "seed"),
    ("width = ten", "width"),
    ("waist = -1", "waist"),
    ("delta_n = 0", "delta_n"),
    ("noise = gaussian", "noise"),
    ("mean_total_counts = -5", "mean_total_counts"),
    ("n_passes = 0", "n_passes"),
    ("height = 0", "height"),
])
def test_config_errors_name_key(text, key):
    with pytest.raises(formats.ConfigError) as exc:
        formats.parse_config(text)
    assert exc.value.key == key
    assert str(exc.value).startswith(key)


# -- FRAME / TOMO / CSV --------------------------------------------------------

def test_frame_roundtrip(rng):
    g = GridGeometry(5, 3, 1.3e-5, 4.0)
    fr = CountFrame("D", "R", g, rng.integers(0, 1000, (3, 5)), exposures=2000, seed=7)
    text = formats.format_frame(fr)
    assert text.startswith("FRAME 1\nwidth 5\nheight 3\nsignal D\nidler R\nexposures 2000\nseed 7\n")
    back = formats.parse_frame(text)
    assert np.array_equal(back.counts, fr.counts) and back.grid == g
    assert (back.signal_setting, back.idler_setting, back.exposures, back.seed) == ("D", "R", 2000, 7)
    assert formats.format_frame(back) == text


@pytest.mark.parametrize("mutate, match", [
    (lambda t: t.replace("FRAME 1", "FRAME 2"), "header"),
    (lambda t: t.rsplit("\n", 2)[0] + "\n", "expected 6 counts"),
    (lambda t: t.replace("signal H", "signal X"), "label"),
    (lambda t: t + "1.5\n", "integers"),
    (lambda t: t.replace("seed 0\n", ""), "seed"),
    (lambda t: t.replace("seed 0\n", "seed 0\ncolour red\n"), "unknown"),
])
def test_frame_errors(mutate, match):
    fr = CountFrame("H", "V", GridGeometry(3, 2, 1e-5), np.arange(6).reshape(2, 3))
    with pytest.raises(formats.FormatError, match=match):
        formats.parse_frame(mutate(formats.format_frame(fr)))


def test_frame_negative_counts_rejected():
    text = "FRAME 1\nwidth 1\nheight 1\nsignal H\nidler H\nexposures 1\nseed 0\ndata\n-3\n"
    with pytest.raises(formats.FormatError, match="nonnegative"):
        formats.parse_frame(text)


def test_frame_optional_geometry_defaults():
    text = "FRAME 1\nwidth 1\nheight 1\nsignal H\nidler H\nexposures 1\nseed 0\ndata\n3\n"
    fr = formats.parse_frame(text)
    assert fr.grid.pixel_pitch == 13e-6 and fr.grid.magnification == 1.0


def test_tomo_roundtrip_bit_exact(rng):
    h, w = 3, 4
    rho = np.array([random_density_matrix(rng) for _ in range(h * w)]).reshape(h, w, 4, 4)
    status = rng.integers(0, 3, (h, w)).astype(np.int8)
    tmap = TomographyMap(GridGeometry(w, h, 1.3e-5, 4.0), rho, np.zeros((h, w)),
                         np.zeros((h, w), dtype=np.int32), np.ones((h, w)), status)
    back = formats.parse_tomo(formats.format_tomo(tmap))
    assert back.grid == tmap.grid
    assert np.array_equal(back.status, status)
    # lower triangle is rebuilt as the conjugate of the stored upper triangle
    herm = 0.5 * (rho + np.conj(np.swapaxes(rho, -1, -2)))
    assert np.max(np.abs(back.rho - herm)) <= 1e-16
    assert formats.format_tomo(back) == formats.format_tomo(tmap)


def test_tomo_corrupt():
    g = GridGeometry(1, 1, 1e-5)
    tmap = TomographyMap(g, (np.eye(4) / 4).reshape(1, 1, 4, 4).astype(complex), np.zeros((1, 1)),
                         np.zeros((1, 1), dtype=np.int32), np.ones((1, 1)),
                         np.zeros((1, 1), dtype=np.int8))
    text = formats.format_tomo(tmap)
    for bad, match in [(text.replace("TOMO 1", "TOMO"), "header"),
                       (text.replace("height 1", "height 2"), "expected 2"),
                       (text.rstrip("\n") + " 9\n", "17 numbers"),
                       (text.rstrip("\n")[:-1] + "7\n", "status")]:
        with pytest.raises(formats.FormatError, match=match):
            formats.parse_tomo(bad)


def test_csv_roundtrip(rng):
    g = GridGeometry(6, 4, 1.3e-5)
    v = rng.normal(size=(4, 6))
    text = formats.format_csv(v, g, "intensity_DD")
    assert text.splitlines()[0] == "# width=6,height=4,pixel_pitch=1.3e-05,quantity=intensity_DD"
    back, g2, q = formats.parse_csv(text)
    assert np.array_equal(back, v) and g2 == g and q == "intensity_DD"
    ints = formats.format_csv(np.arange(24).reshape(4, 6), g, "labels")
    assert ints.splitlines()[1] == "0,1,2,3,4,5"
    with pytest.raises(formats.FormatError):
        formats.parse_csv(text.replace("height=4", "height=5"))


# -- CLI -----------------------------------------------------------------------

def test_simulate_writes_frames_and_maps(small_config, tmp_path, capsys):
    code, _, _ = run(capsys, "simulate", small_config)
    assert code == 0
    out = tmp_path / "frames"
    for s, i in canonical_settings():
        fr = formats.read_frame(out / f"frame_{s}{i}.txt")
        assert fr.counts.shape == (16, 20) and fr.seed == 11
        vals, grid, _ = formats.read_csv(out / f"intensity_{s}{i}.csv")
        assert vals.shape == (16, 20)
    assert formats.read_config(out / "config.txt") == formats.read_config(small_config)


def test_simulate_deterministic(small_config, tmp_path, capsys):
    run(capsys, "simulate", small_config, "--out", tmp_path / "a")
    run(capsys, "simulate", small_config, "--out", tmp_path / "b")
    for p in sorted((tmp_path / "a").iterdir()):
        assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes()


def test_simulate_zero_counts(tmp_path, capsys):
    cfg = tmp_path / "z.cfg"
    cfg.write_text(f"width = 9\nmean_total_counts = 0\noutput_dir = {tmp_path / 'z'}\n")
    assert run(capsys, "simulate", cfg)[0] == 0
    for p in (tmp_path / "z").glob("frame_*.txt"):
        assert not formats.read_frame(p).counts.any()


def test_simulate_bad_config(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("width = 10\nshutter = open\n")
    code, _, err = run(capsys, "simulate", cfg)
    assert code != 0
    assert error_line(err) == "lovtomo-error: config: shutter: unknown key (line 2)"


def test_full_small_pipeline(small_config, tmp_path, capsys):
    run(capsys, "simulate", small_config)
    frames = tmp_path / "frames"
    code, _, err = run(capsys, "reconstruct", frames)
    assert code == 0 and "converged" in err
    tomo = frames / TOMO_FILENAME
    assert formats.read_tomo(tomo).rho.shape == (16, 20, 4, 4)
    code, out, _ = run(capsys, "analyze", tomo, "--out", tmp_path / "an", "--bins", 20)
    assert code == 0 and out.startswith("pixels 320\n")
    an = tmp_path / "an"
    for name in FIDELITY_FILES.values():
        assert formats.read_csv(an / name)[0].shape == (16, 20)
    hist = np.loadtxt(an / HISTOGRAM_FILE, delimiter=",", skiprows=1)
    assert hist.shape == (20, 3) and hist[:, 2].sum() == 320
    assert (an / SUMMARY_FILE).read_text() == out
    code, _, _ = run(capsys, "render", frames / "frame_DD.txt", "-o", tmp_path / "dd.pgm")
    assert code == 0
    magic, arr = parse_pnm((tmp_path / "dd.pgm").read_bytes())
    assert magic == "P5" and arr.shape == (16, 20) and arr.max() == 255


@pytest.mark.parametrize("backend", ["python"])
def test_reconstruct_backend_flag(small_config, tmp_path, capsys, backend):
    run(capsys, "simulate", small_config)
    frames = tmp_path / "frames"
    out = tmp_path / "t.tomo"
    code, _, err = run(capsys, "reconstruct", frames, "-o", out, "--backend", backend)
    assert code == 0 and f"{backend} backend" in err


def test_reconstruct_missing_and_mismatched(small_config, tmp_path, capsys):
    run(capsys, "simulate", small_config)
    frames = tmp_path / "frames"
    (frames / "frame_RD.txt").unlink()
    code, _, err = run(capsys, "reconstruct", frames)
    assert code == 1 and "missing frames for settings RD" in error_line(err)
    shutil.copy(frames / "frame_RR.txt", frames / "frame_RD.txt")
    code, _, err = run(capsys, "reconstruct", frames)
    assert "duplicate frame for setting RR" in error_line(err)
    odd = CountFrame("R", "D", GridGeometry(3, 3, 1e-5), np.zeros((3, 3), dtype=np.int64))
    formats.write_frame(frames / "frame_RD.txt", odd)
    code, _, err = run(capsys, "reconstruct", frames)
    assert code == 1 and "shape" in error_line(err)


def test_analyze_mixed_and_corrupt(tmp_path, capsys):
    g = GridGeometry(3, 2, 1e-5)
    rho = np.broadcast_to(np.eye(4) / 4, (2, 3, 4, 4)).astype(complex)
    tmap = TomographyMap(g, rho, np.zeros((2, 3)), np.zeros((2, 3), dtype=np.int32),
                         np.ones((2, 3)), np.zeros((2, 3), dtype=np.int8))
    formats.write_tomo(tmp_path / "m.tomo", tmap)
    code, out, _ = run(capsys, "analyze", tmp_path / "m.tomo")
    assert code == 0 and "entangled_fraction 0.0\n" in out
    (tmp_path / "bad.tomo").write_text("TOMO 1\nwidth 3\n")
    code, _, err = run(capsys, "analyze", tmp_path / "bad.tomo")
    assert code == 1 and error_line(err).startswith("lovtomo-error: format:")


def test_render_usage_and_degenerate(tmp_path, capsys):
    g = GridGeometry(10, 10, 1e-5)
    formats.write_csv(tmp_path / "c.csv", np.full((10, 10), 2.0), g, "flat")
    code, _, err = run(capsys, "render", tmp_path / "c.csv", "--sigma", 1, "--adaptive")
    assert code == 2 and error_line(err).startswith("lovtomo-error: usage:")
    code, _, err = run(capsys, "render", tmp_path / "c.csv")
    assert code == 1 and error_line(err).startswith("lovtomo-error: degenerate-image:")
    code, _, err = run(capsys, "render", tmp_path / "c.csv", "--no-background", "--colormap", "hot")
    assert code == 0
    magic, arr = parse_pnm((tmp_path / "c.ppm").read_bytes())
    assert magic == "P6" and np.all(arr == 255)


def test_render_deterministic(tmp_path, capsys, rng):
    g = GridGeometry(12, 12, 1e-5)
    formats.write_csv(tmp_path / "r.csv", rng.poisson(20, (12, 12)).astype(float), g, "x")
    for name in ("a.pgm", "b.pgm"):
        run(capsys, "render", tmp_path / "r.csv", "-o", tmp_path / name, "--ascii")
    a = (tmp_path / "a.pgm").read_bytes()
    assert a == (tmp_path / "b.pgm").read_bytes() and a.startswith(b"P2\n12 12\n255\n")


def test_usage_errors(capsys):
    code, _, err = run(capsys)
    assert code == 2 and error_line(err).startswith("lovtomo-error: usage:")
    code, _, err = run(capsys, "render", "x.csv", "--sigma", "0")
    assert code == 2
    code, _, err = run(capsys, "reconstruct", "/nonexistent/dir")
    assert code == 1


def test_default_config_command(tmp_path, capsys):
    code, out, _ = run(capsys, "default-config")
    assert code == 0 and formats.parse_config(out) == formats.default_config()
