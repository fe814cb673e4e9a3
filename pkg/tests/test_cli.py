import numpy as np
import pytest
from PIL import Image

from pgikit.cli import build_parser, main
from pgikit.fitter import FitConfig, config_fields
from pgikit.geometry import chamfer, compare, read_cloud, sample_synthetic, write_xyz
from pgikit.geometry.cloud import NormMeta
from pgikit.pgi import Pgi, load_pgi, save_pgi

FAST = ["-m", "8", "--iters", "3", "--feature-dim", "8", "--seed", "7"]


@pytest.fixture
def cloud_file(tmp_path):
    path = tmp_path / "sphere.xyz"
    write_xyz(sample_synthetic("sphere", 40, seed=1).points, path)
    return path


def _fit_args(args):
    return build_parser().parse_args(["fit", "x.xyz", *args])


def test_every_config_field_has_a_flag_with_matching_default():
    ns = _fit_args([])
    defaults = FitConfig()
    for name in config_fields():
        assert getattr(ns, name) == getattr(defaults, name)


def test_flags_map_to_fields():
    ns = _fit_args(["--learning-rate", "0.01", "--tau-init", "0.1", "--recon-weight", "2",
                    "--iterations", "9", "--aux-warmup", "3", "-m", "16"])
    assert (ns.learning_rate, ns.tau_init, ns.recon_weight) == (0.01, 0.1, 2.0)
    assert (ns.iterations, ns.aux_warmup, ns.m) == (9, 3, 16)
    assert _fit_args(["--iters", "4"]).iterations == 4


def test_fit_writes_outputs(cloud_file, tmp_path, capsys):
    out = tmp_path / "s"
    assert main(["fit", str(cloud_file), *FAST, "-o", str(out)]) == 0
    for suffix in (".pgi", ".pnw", ".report"):
        assert (tmp_path / f"s{suffix}").is_file()
    line = capsys.readouterr().out.strip()
    assert line.startswith("coverage=") and "chamfer=" in line and "hausdorff=" in line
    assert load_pgi(tmp_path / "s.pgi").m == 8


def test_fit_missing_file(tmp_path, capsys):
    missing = tmp_path / "nope.xyz"
    assert main(["fit", str(missing)]) == 1
    assert str(missing) in capsys.readouterr().err


def test_fit_bad_resolution(cloud_file, capsys):
    assert main(["fit", str(cloud_file), "-m", "1"]) == 2
    assert "m must be ≥ 2" in capsys.readouterr().err


def test_unknown_flag_is_usage_error(cloud_file):
    assert main(["fit", str(cloud_file), "--bogus"]) == 2


def test_fit_divergence_exit_code(cloud_file, monkeypatch):
    from pgikit import cli
    from pgikit.fitter import DivergenceError

    def boom(*_args, **_kw):
        raise DivergenceError(0, "non-finite loss")

    monkeypatch.setattr(cli, "fit_on_io", boom)
    assert main(["fit", str(cloud_file)]) == 3


def test_fit_is_byte_identical(cloud_file, tmp_path):
    for name in ("a", "b"):
        assert main(["fit", str(cloud_file), *FAST, "-o", str(tmp_path / name)]) == 0
    assert (tmp_path / "a.pgi").read_bytes() == (tmp_path / "b.pgi").read_bytes()
    assert (tmp_path / "a.pnw").read_bytes() == (tmp_path / "b.pnw").read_bytes()


def test_decode_full_and_dedupe(cloud_file, tmp_path):
    main(["fit", str(cloud_file), *FAST, "-o", str(tmp_path / "s")])
    assert main(["decode", str(tmp_path / "s.pgi"), "-o", str(tmp_path / "all.xyz")]) == 0
    assert len((tmp_path / "all.xyz").read_text().splitlines()) == 64
    assert main(["decode", str(tmp_path / "s.pgi"), "--dedupe", "-o", str(tmp_path / "d.xyz")]) == 0
    pgi = load_pgi(tmp_path / "s.pgi")
    kept = read_cloud(tmp_path / "d.xyz").points
    assert len(kept) == len(np.unique(pgi.index_map))
    source = read_cloud(cloud_file).points
    assert np.max(np.abs(kept - source[np.unique(pgi.index_map)])) < 1e-6


def test_decode_dedupe_without_index_map(tmp_path):
    path = tmp_path / "soft.pgi"
    save_pgi(Pgi(4, np.zeros((4, 4, 3)), NormMeta(np.zeros(3), 1.0), 5), path)
    assert main(["decode", str(path), "--dedupe"]) == 2
    assert main(["decode", str(path), "-o", str(tmp_path / "x.xyz")]) == 0


def test_decode_bad_file(tmp_path):
    path = tmp_path / "junk.pgi"
    path.write_bytes(b"not a pgi")
    assert main(["decode", str(path)]) == 1


def test_metrics_examples(tmp_path, capsys):
    a, b = tmp_path / "a.xyz", tmp_path / "b.xyz"
    write_xyz([[0.0, 0.0, 0.0]], a)
    write_xyz([[1.0, 0.0, 0.0]], b)
    assert main(["metrics", str(a), str(a)]) == 0
    assert capsys.readouterr().out.strip() == "chamfer=0 hausdorff=0"
    assert main(["metrics", str(a), str(b)]) == 0
    assert capsys.readouterr().out.strip() == "chamfer=1 hausdorff=1"


@pytest.mark.parametrize("seed", range(3))
def test_metrics_match_library(tmp_path, capsys, seed):
    rng = np.random.default_rng(seed)
    a, b = tmp_path / "a.xyz", tmp_path / "b.xyz"
    write_xyz(rng.normal(size=(30, 3)), a)
    write_xyz(rng.normal(size=(25, 3)), b)
    main(["metrics", str(a), str(b)])
    assert capsys.readouterr().out.strip() == compare(read_cloud(a), read_cloud(b)).line()


def test_metrics_missing_file(tmp_path):
    assert main(["metrics", str(tmp_path / "a.xyz"), str(tmp_path / "b.xyz")]) == 1


def test_preview_sizes_and_colors(tmp_path):
    pixels = np.zeros((128, 128, 3))
    pixels[0, 0] = [1.0, -1.0, 1.0]
    path = tmp_path / "p.pgi"
    save_pgi(Pgi(128, pixels, NormMeta(np.zeros(3), 1.0), 1), path)
    assert main(["preview", str(path), "-o", str(tmp_path / "p.png")]) == 0
    img = np.asarray(Image.open(tmp_path / "p.png"))
    assert img.shape == (128, 128, 3)
    assert img[0, 0].tolist() == [255, 0, 255]
    assert np.all(img[1:] == 128)


def test_preview_bad_input(tmp_path):
    assert main(["preview", str(tmp_path / "missing.pgi")]) == 1


def test_embed_dumps_uv(cloud_file, tmp_path):
    main(["fit", str(cloud_file), *FAST, "-o", str(tmp_path / "s")])
    out = tmp_path / "s.uv"
    assert main(["embed", str(cloud_file), "--params", str(tmp_path / "s.pnw"), "-o", str(out)]) == 0
    uv = np.loadtxt(out)
    assert uv.shape == (40, 2) and np.all((uv >= 0) & (uv <= 1))


def test_fit_set_over_directory(tmp_path, capsys):
    data = tmp_path / "data"
    data.mkdir()
    for i, kind in enumerate(["sphere", "torus"]):
        write_xyz(sample_synthetic(kind, 30, seed=i).points, data / f"{kind}.xyz")
    (data / "notes.txt").write_text("ignored")
    out = tmp_path / "out"
    assert main(["fit-set", str(data), *FAST, "-o", str(out)]) == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == ["model.pnw", "sphere.pgi", "sphere.report", "torus.pgi", "torus.report"]
    assert len(capsys.readouterr().out.strip().splitlines()) == 2


def test_fit_set_empty_directory(tmp_path):
    assert main(["fit-set", str(tmp_path)]) == 1


def test_dedupe_restores_lossless_fit(tmp_path):
    # few points on a fine grid: the fitted PGI keeps every point
    path = tmp_path / "c.xyz"
    source = sample_synthetic("sphere", 12, seed=5).points * 3.0 + 1.0
    write_xyz(source, path)
    args = ["-m", "64", "--iters", "40", "--feature-dim", "8", "--learning-rate", "1e-2"]
    assert main(["fit", str(path), *args, "-o", str(tmp_path / "c")]) == 0
    assert load_pgi(tmp_path / "c.pgi").coverage == 1.0
    assert main(["decode", str(tmp_path / "c.pgi"), "--dedupe", "-o", str(tmp_path / "r.xyz")]) == 0
    restored = read_cloud(tmp_path / "r.xyz").points
    assert np.max(np.abs(restored - source)) <= 1e-6
    assert chamfer(restored, source) < 1e-12
