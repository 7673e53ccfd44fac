from __future__ import annotations

import json

import numpy as np
import pytest

from tofmap.classify import TofClass
from tofmap.errors import ConfigError, ParameterError, PipelineError
from tofmap.fixtures import FOUR_SHAPE_SCENE, analytic_class, four_shape_scene, generate_fixture
from tofmap.geojson import read_features
from tofmap.pipeline import PipelineConfig, load_config, process_scene, run_pipeline, save_config, worker_count
from tofmap.raster import read_raster, write_raster


def _write_scene(tmp_path, scene, seed=0, name="scene"):
    ndsm, dop, labels, meta = generate_fixture(scene, seed)
    d = tmp_path / name
    write_raster(d / "ndsm.tif", ndsm)
    write_raster(d / "dop.tif", dop)
    return d, labels, meta


# ---------------------------------------------------------------------------
# fixtures
# ---------------------------------------------------------------------------


def test_forest_square_rendered_analytically():
    scene = {"extent": [500, 500], "shapes": [{"kind": "block", "at": [10, 10], "size": [80, 80]}]}
    ndsm, dop, labels, meta = generate_fixture(scene)
    lab = labels.data[0]
    # 80 m at 0.2 m is 400 px starting at pixel 50
    assert (lab[50:450, 50:450] == int(TofClass.FOREST)).all()
    assert lab.sum() == 400 * 400 * int(TofClass.FOREST)
    assert meta["shapes"][0]["class_name"] == "Forest"
    assert (ndsm.data[0][50:450, 50:450] == 10.0).all()


def test_empty_scene_is_background():
    ndsm, dop, labels, meta = generate_fixture({})
    assert labels.data.max() == 0 and ndsm.data.max() == 0
    assert meta["shapes"] == [] and meta["overlaps"] == []


def test_fixture_determinism():
    a = generate_fixture(four_shape_scene(0.05), seed=3)
    b = generate_fixture(four_shape_scene(0.05), seed=3)
    c = generate_fixture(four_shape_scene(0.05), seed=4)
    for x, y in zip(a[:3], b[:3]):
        assert x.data.tobytes() == y.data.tobytes()
    assert a[1].data.tobytes() != c[1].data.tobytes()


def test_fixture_ndvi_matches_configured_value():
    _, dop, _, _ = generate_fixture(four_shape_scene())
    r, nir = dop.data[0, 60, 60].astype(float), dop.data[3, 60, 60].astype(float)
    assert (nir - r) / (nir + r) == pytest.approx(0.6, abs=0.01)


def test_overlap_layering_reported():
    scene = {"extent": [200, 200], "shapes": [
        {"kind": "block", "at": [0, 0], "size": [20, 20]},
        {"kind": "disk", "center": [10, 10], "radius": 3, "woody": False},
    ]}
    _, _, labels, meta = generate_fixture(scene)
    assert meta["overlaps"] == [[1, 0]]
    assert labels.data[0, 50, 50] == 0


def test_shape_outside_scene_rejected():
    with pytest.raises(ParameterError):
        generate_fixture({"extent": [100, 100], "shapes": [{"kind": "disk", "center": [5, 5], "radius": 10}]})


def test_four_shape_scene_covers_every_class():
    classes = [analytic_class(s) for s in FOUR_SHAPE_SCENE["shapes"]]
    assert classes == [TofClass.FOREST, TofClass.LINEAR, TofClass.PATCH, TofClass.TREE, TofClass.BACKGROUND]


# ---------------------------------------------------------------------------
# config
# ---------------------------------------------------------------------------


def test_config_round_trip(tmp_path):
    cfg = PipelineConfig(ndsm="a.tif", dop="b.tif", dp_tolerance=0.5, linear_first=True,
                         mask={"height_threshold": 2.5, "closing_window": [3, 3]})
    back = load_config(save_config(cfg, tmp_path / "c.yaml"))
    assert back == cfg
    assert PipelineConfig.from_dict(cfg.to_dict()) == cfg


def test_config_validation():
    with pytest.raises(ConfigError):
        PipelineConfig(stride=0)
    with pytest.raises(ConfigError):
        PipelineConfig(kmeans_scope="global")
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({"nonsense": 1})
    with pytest.raises(ConfigError):
        PipelineConfig(mask={"height_threshold": -1})


def test_config_precedence(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("dp_tolerance: 0.6\nmask:\n  height_threshold: 4.0\n")
    cfg = load_config(path)
    assert cfg.dp_tolerance == 0.6 and cfg.mask.height_threshold == 4.0
    assert cfg.min_hole_area == 1.0  # default
    over = cfg.updated(dp_tolerance=0.3, mask_height_threshold=None, workers=None)
    assert over.dp_tolerance == 0.3 and over.mask.height_threshold == 4.0 and over.workers == 1


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv("TOFMAP_THREADS", "2")
    assert worker_count(8) == 2
    monkeypatch.setenv("TOFMAP_THREADS", "many")
    with pytest.raises(ConfigError):
        worker_count(8)
    monkeypatch.delenv("TOFMAP_THREADS")
    assert worker_count(3) == 3


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------


def test_run_on_fixture(tmp_path):
    d, truth, _ = _write_scene(tmp_path, four_shape_scene())
    report = run_pipeline(PipelineConfig(ndsm=str(d / "ndsm.tif"), dop=str(d / "dop.tif"), out_dir=str(tmp_path / "o")))
    assert report["class_counts"] == {"Forest": 1, "Patch": 1, "Linear": 1, "Tree": 1}
    assert {"build-mask", "vectorize", "classify", "rasterize", "read"} <= set(report["timings_s"])
    saved = json.loads((tmp_path / "o" / "run_report.json").read_text())
    assert saved["class_counts"] == report["class_counts"]
    labels = read_raster(tmp_path / "o" / "labels.tif").data[0]
    assert np.array_equal(labels, truth.data[0])
    feats, crs = read_features(tmp_path / "o" / "tof.geojson", keep_descriptors=True)
    assert len(feats) == 4 and crs == "EPSG:25832"


def test_end_to_end_determinism(tmp_path):
    d, _, _ = _write_scene(tmp_path, four_shape_scene(0.05), seed=1)
    outs = []
    for k in range(2):
        out = tmp_path / f"o{k}"
        run_pipeline(PipelineConfig(ndsm=str(d / "ndsm.tif"), dop=str(d / "dop.tif"), out_dir=str(out)))
        outs.append(out)
    for name in ("mask.tif", "labels.tif", "tof.geojson"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_empty_mask_scene(tmp_path):
    d, _, _ = _write_scene(tmp_path, {"extent": [100, 100]})
    report = run_pipeline(PipelineConfig(ndsm=str(d / "ndsm.tif"), dop=str(d / "dop.tif"), out_dir=str(tmp_path / "o")))
    assert report["features"] == 0
    assert read_raster(tmp_path / "o" / "labels.tif").data.max() == 0
    fc = json.loads((tmp_path / "o" / "tof.geojson").read_text())
    assert fc["type"] == "FeatureCollection" and fc["features"] == []


def test_missing_ndsm_fails_before_compute(tmp_path):
    out = tmp_path / "o"
    with pytest.raises(ConfigError):
        run_pipeline(PipelineConfig(ndsm=str(tmp_path / "nope.tif"), dop=str(tmp_path / "nope2.tif"), out_dir=str(out)))
    assert not out.exists()
    with pytest.raises(ConfigError):
        run_pipeline(PipelineConfig(out_dir=str(out)))


def _tile_dirs(tmp_path, n=2):
    nd, dp = tmp_path / "ndsm", tmp_path / "dop"
    for i in range(n):
        scene = {"extent": [300, 300], "shapes": [{"kind": "block", "at": [5 + 5 * i, 5], "size": [30, 20]}]}
        ndsm, dop, _, _ = generate_fixture(scene)
        write_raster(nd / f"SH_{i}.tif", ndsm)
        write_raster(dp / f"SH_{i}.tif", dop)
    return nd, dp


def test_tiled_run_and_thread_cap(tmp_path, monkeypatch):
    nd, dp = _tile_dirs(tmp_path)
    serial = run_pipeline(PipelineConfig(ndsm=str(nd), dop=str(dp), out_dir=str(tmp_path / "s")))
    monkeypatch.setenv("TOFMAP_THREADS", "2")
    par = run_pipeline(PipelineConfig(ndsm=str(nd), dop=str(dp), out_dir=str(tmp_path / "p"), workers=4))
    assert set(serial["tiles"]) == {"SH_0", "SH_1"}
    assert serial["class_counts"] == par["class_counts"] == {"Forest": 0, "Patch": 2, "Linear": 0, "Tree": 0}
    assert "kmeans-fit" in serial["timings_s"]
    for t in ("SH_0", "SH_1"):
        assert (tmp_path / "s" / t / "labels.tif").read_bytes() == (tmp_path / "p" / t / "labels.tif").read_bytes()


def test_stage_failure_keeps_artifacts(tmp_path, monkeypatch):
    nd, dp = _tile_dirs(tmp_path)
    import tofmap.pipeline as pl

    real = pl.write_features
    calls = []

    def flaky(path, *a, **k):
        calls.append(path)
        if len(calls) == 2:
            raise OSError("disk full")
        return real(path, *a, **k)

    monkeypatch.setattr(pl, "write_features", flaky)
    with pytest.raises(PipelineError) as exc:
        run_pipeline(PipelineConfig(ndsm=str(nd), dop=str(dp), out_dir=str(tmp_path / "o"), kmeans_scope="tile",
                                    kmeans_tile_size=300))
    err = exc.value
    assert err.stage == "write"
    arts = err.artifacts
    assert arts["SH_0/labels"].endswith("SH_0/labels.tif")
    assert arts["SH_1/mask"].endswith("SH_1/mask.tif")
    assert "SH_1/labels" not in arts
    assert err.to_dict()["stage"] == "write"


def test_process_scene_wraps_stage_errors():
    ndsm, dop, _, _ = generate_fixture({"extent": [50, 50]})
    bad = type(dop)(dop.data[:3], dop.transform, dop.nodata[:3], dop.crs)
    ndsm2, _, _, _ = generate_fixture({"extent": [50, 50], "shapes": [{"kind": "block", "at": [1, 1], "size": [5, 5]}]})
    with pytest.raises(PipelineError) as exc:
        process_scene(ndsm2, bad, PipelineConfig())
    assert exc.value.stage == "build-mask"


def test_top_level_api(tmp_path, monkeypatch):
    import tofmap

    assert all(hasattr(tofmap, n) for n in tofmap.__all__)
    monkeypatch.chdir(tmp_path)
    ndsm, dop, _, _ = tofmap.generate_fixture(tofmap.four_shape_scene(), seed=0)
    tofmap.write_raster("ndsm.tif", ndsm)
    tofmap.write_raster("dop.tif", dop)
    report = tofmap.run_pipeline(tofmap.PipelineConfig(ndsm="ndsm.tif", dop="dop.tif", out_dir="out"))
    assert report["class_counts"] == {"Forest": 1, "Patch": 1, "Linear": 1, "Tree": 1}
