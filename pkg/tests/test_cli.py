import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from conftest import scenario, write_config
from lanecarto.cli import EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION, main
from lanecarto.export import ExportFormatError, export, read_lanelets, to_geojson, to_lanelets
from lanecarto.pipeline import HDMapDocument, truth_to_document


@pytest.fixture(scope="module")
def built(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    spec = d / "spec.json"
    spec.write_text(json.dumps({"layout": "straight", "rng_seed": 42}))
    assert main(["gen", str(spec), "-o", str(d / "bundle")]) == EXIT_OK
    cfg = write_config(d / "bundle")
    assert main(["build", "-c", cfg]) == EXIT_OK
    return d, d / "bundle" / "out" / "map.json"


def test_gen_writes_five_files(built, capsys):
    d, _ = built
    assert sorted(p.name for p in (d / "bundle").iterdir() if p.is_file()) == [
        "bev.png", "camera.txt", "config.toml", "poses.csv", "skeleton.json", "truth.json"]


def test_build_and_eval(built, tmp_path):
    d, map_path = built
    rep_path = tmp_path / "r.json"
    code = main(["eval", str(map_path), str(d / "bundle" / "truth.json"), "-o", str(rep_path)])
    assert code == EXIT_OK
    rep = json.loads(rep_path.read_text())
    assert rep["aggregate"]["recall"] == 1.0 and rep["gate"] == {"iou": 0.7, "rms": 0.2}


def test_seed_env_override(built, monkeypatch, tmp_path):
    d, map_path = built
    monkeypatch.setenv("LANECARTO_SEED", "7")
    out = tmp_path / "m.json"
    assert main(["build", "-c", str(d / "bundle" / "config.toml"), "-o", str(out)]) == EXIT_OK
    doc = json.loads(out.read_text())
    assert doc["provenance"]["seed"] == 7
    assert doc["provenance"]["config_hash"] != json.loads(map_path.read_text())["provenance"]["config_hash"]
    monkeypatch.setenv("LANECARTO_SEED", "seven")
    assert main(["build", "-c", str(d / "bundle" / "config.toml"), "-o", str(out)]) == EXIT_VALIDATION


def test_eval_refuses_without_provenance(built, tmp_path):
    d, map_path = built
    doc = json.loads(map_path.read_text())
    doc["provenance"] = None
    bare = tmp_path / "bare.json"
    bare.write_text(json.dumps(doc))
    truth = str(d / "bundle" / "truth.json")
    assert main(["eval", str(bare), truth]) == EXIT_VALIDATION
    assert main(["eval", str(bare), truth, "--force", "-o", str(tmp_path / "r.json")]) == EXIT_OK


def test_exit_codes(built, tmp_path, capsys):
    d, map_path = built
    assert main([]) == EXIT_VALIDATION
    assert main(["export", str(map_path), "--format", "kml"]) == EXIT_VALIDATION
    assert main(["build", "-c", str(tmp_path / "none.toml")]) == EXIT_VALIDATION
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"layout": "hexagon"}))
    assert main(["gen", str(bad), "-o", str(tmp_path / "x")]) == EXIT_VALIDATION
    cfg = tmp_path / "mesh.toml"
    cfg.write_text((d / "bundle" / "config.toml").read_text().replace('"flat"', '"mesh"'))
    (tmp_path / "skeleton.json").write_text("{}")
    assert main(["build", "-c", str(cfg)]) == EXIT_VALIDATION
    # a corrupt raster is a runtime failure, not a validation error
    broken = tmp_path / "broken"
    broken.mkdir()
    for name in ("skeleton.json", "poses.csv"):
        (broken / name).write_bytes((d / "bundle" / name).read_bytes())
    (broken / "bev.png").write_bytes(b"not a png")
    assert main(["build", "-c", write_config(broken), "-o", str(tmp_path / "o.json")]) == EXIT_RUNTIME


def test_export_formats(built, tmp_path):
    _, map_path = built
    for fmt in ("geojson", "lanelet-json", "svg"):
        out = tmp_path / f"m.{fmt}"
        assert main(["export", str(map_path), "--format", fmt, "-o", str(out)]) == EXIT_OK
    gj = json.loads((tmp_path / "m.geojson").read_text())
    roles = sorted(f["properties"]["role"] for f in gj["features"])
    assert roles == ["center_line", "lane_area"]
    root = ET.fromstring((tmp_path / "m.svg").read_text())
    classes = [el.get("class") for el in root.iter() if el.get("class")]
    assert classes.count("lane_area") == 1 and classes.count("boundary") == 2


def test_export_empty_document():
    b = scenario("straight")
    doc = HDMapDocument(b.skeleton)
    assert to_geojson(doc) == {"type": "FeatureCollection", "features": []}
    assert to_lanelets(doc)["lanelets"] == []
    ET.fromstring(export(doc, "svg"))
    with pytest.raises(ExportFormatError):
        export(doc, "kml")


def test_lanelet_round_trip_and_relations():
    b = scenario("grid4")
    doc = truth_to_document(b.truth, b.skeleton)
    lanelets = read_lanelets(export(doc, "lanelet-json"))
    n = sum(r.K for r in doc.roads.values())
    assert len(lanelets) == n
    for eid, road in doc.roads.items():
        for k, lane in enumerate(road.lanes):
            ll = lanelets[f"{eid}#{k}"]
            assert np.max(np.abs(ll.left - lane.bounds.B_left)) <= 1e-9
            assert np.max(np.abs(ll.right - lane.bounds.B_right)) <= 1e-9
            assert np.max(np.abs(ll.centerline - lane.center.waypoints)) <= 1e-9
    n_succ = sum(len(ll.successors) for ll in lanelets.values())
    assert n_succ == len(b.truth.connections)
    gj = to_geojson(doc)
    assert sum(f["properties"]["role"] == "connection" for f in gj["features"]) == len(b.truth.connections)
    for f in gj["features"]:
        if f["geometry"]["type"] == "Polygon":
            ring = f["geometry"]["coordinates"][0]
            assert ring[0] == ring[-1]
