import json

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from lanecarto.skeleton import RawRoadNetwork, Way, build_skeleton

settings.register_profile("repo", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


def make_net(nodes: dict, ways: list) -> RawRoadNetwork:
    """``ways`` entries are (id, node ids, oneway)."""
    net = RawRoadNetwork(nodes={k: tuple(map(float, v)) for k, v in nodes.items()},
                         ways=[Way(w[0], list(w[1]), bool(w[2]) if len(w) > 2 else False) for w in ways])
    net.validate()
    return net


def net_json(nodes: dict, ways: list) -> str:
    return json.dumps({
        "nodes": [{"id": k, "x": v[0], "y": v[1]} for k, v in nodes.items()],
        "ways": [{"id": w[0], "nodes": list(w[1]), "oneway": bool(w[2]) if len(w) > 2 else False} for w in ways],
    })


@pytest.fixture
def cross_map():
    """Two two-way roads crossing at "c", adjacent nodes 10 m out, ends 50 m out."""
    nodes = {"c": (0, 0), "e1": (10, 0), "e2": (50, 0), "w1": (-10, 0), "w2": (-50, 0),
             "n1": (0, 10), "n2": (0, 50), "s1": (0, -10), "s2": (0, -50)}
    ways = [("h", ["w2", "w1", "c", "e1", "e2"]), ("v", ["s2", "s1", "c", "n1", "n2"])]
    return build_skeleton(make_net(nodes, ways))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_SCENARIOS = {}


def scenario(layout: str, **kw):
    """Generated synthetic bundle, cached per parameter set for the whole session."""
    from lanecarto.synthetic import ScenarioSpec, generate

    key = (layout, tuple(sorted(kw.items())))
    if key not in _SCENARIOS:
        _SCENARIOS[key] = generate(ScenarioSpec.from_dict({"layout": layout, "rng_seed": 42, **kw}))
    return _SCENARIOS[key]


def first_edge_start(bundle, edge_id):
    """First pose on ``edge_id`` and the edge's target ROI."""
    from lanecarto.skeleton import locate

    smap = bundle.skeleton
    for p in bundle.poses:
        ref = locate(smap, p)
        if ref.kind == "on-edge" and ref.element_id == edge_id:
            return p, smap.rois()[smap.edges[edge_id].target]
    raise LookupError(edge_id)


def write_config(bundle_dir, mode: str = "flat", frames: bool = False, seed: int = 42, extra: str = "") -> str:
    """Pipeline config for a bundle written to ``bundle_dir``; returns the config path."""
    lines = [f"seed = {seed}", "", "[paths]", 'skeleton = "skeleton.json"', 'poses = "poses.csv"', 'output = "out"']
    if frames:
        lines += ['frames = "frames"', 'camera = "camera.txt"', 'clouds = "clouds"']
    else:
        lines += ['bev = "bev.png"']
    lines += ["", "[projection]", f'mode = "{mode}"', "", extra]
    path = bundle_dir / "config.toml"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return str(path)
