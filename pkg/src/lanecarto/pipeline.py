"""End-to-end map building: configuration, per-road exploration, map document."""

from __future__ import annotations

import hashlib
import json
import math
import sys
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .bev_projection import SYNC_TOLERANCE, BEVMap, CameraModel, Pose, project_flat, project_mesh
from .delaunay import DegenerateInputError, build_ground_mesh
from .evaluation import Gate, evaluate
from .intersection import Intersection, LaneConnection, build_intersection
from .io import load_bev, read_camera, read_cloud, read_frame, read_poses
from .lane_explorer import ExplorationConfig, ExtinctionError, explore
from .lane_regressor import (
    AtomicRoad,
    CenterLine,
    Lane,
    LaneBoundarySamples,
    RegressionConfig,
    RoadFrame,
    build_atomic_road,
    probe_offsets,
)
from .semantics import IS_DRIVABLE_AREA
from .skeleton import SkeletonLookupError, SkeletonMap, build_skeleton, load_network, locate
from .truth import GroundTruth

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib


class ConfigError(ValueError):
    pass


PROJECTION_MODES = ("flat", "mesh")
CROP_MARGIN = 30.0
DEFAULT_ENTRY_WIDTH = 3.0


@dataclass
class PipelineConfig:
    skeleton: Path
    poses: Path
    bev: Path | None = None
    frames: Path | None = None
    clouds: Path | None = None
    camera: Path | None = None
    output: Path | None = None
    mode: str = "flat"
    exploration: ExplorationConfig = field(default_factory=ExplorationConfig)
    regression: RegressionConfig = field(default_factory=RegressionConfig)
    gate_iou: float = 0.7
    gate_rms: float = 0.2
    seed: int = 0

    @property
    def uses_frames(self) -> bool:
        return self.frames is not None

    def validate(self, check_paths: bool = True) -> None:
        if self.mode not in PROJECTION_MODES:
            raise ConfigError(f"projection mode must be one of {', '.join(PROJECTION_MODES)}")
        required = [("skeleton", self.skeleton), ("poses", self.poses)]
        if self.frames is None and self.bev is None:
            raise ConfigError("either paths.bev or paths.frames is required")
        if self.frames is not None:
            required += [("frames", self.frames)]
            if self.camera is None:
                raise ConfigError("paths.camera is required with frames")
            required.append(("camera", self.camera))
            if self.mode == "mesh":
                if self.clouds is None:
                    raise ConfigError("mode = 'mesh' requires paths.clouds")
                required.append(("clouds", self.clouds))
        else:
            required.append(("bev", self.bev))
            if self.mode == "mesh":
                raise ConfigError("mode = 'mesh' requires frames and point clouds, not a BEV raster")
        if not check_paths:
            return
        missing = [f"{k}={p}" for k, p in required if not Path(p).exists()]
        if missing:
            raise ConfigError("missing input paths: " + ", ".join(missing))

    def canonical(self) -> dict:
        """Settings that determine the output (paths by name only)."""
        return {
            "inputs": {k: (Path(v).name if v is not None else None)
                       for k, v in (("skeleton", self.skeleton), ("poses", self.poses), ("bev", self.bev),
                                    ("frames", self.frames), ("clouds", self.clouds), ("camera", self.camera))},
            "mode": self.mode,
            "exploration": asdict(self.exploration),
            "regression": asdict(self.regression),
            "gate": {"iou": self.gate_iou, "rms": self.gate_rms},
            "seed": self.seed,
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


_SECTIONS = {
    "paths": {"skeleton", "poses", "bev", "frames", "clouds", "camera", "output"},
    "projection": {"mode"},
    "exploration": {"n_particles", "v_range", "omega_range", "dt", "length", "width", "max_steps",
                    "kill_threshold", "stop_threshold"},
    "regression": {"eps", "min_pts", "lam", "max_breaks", "spacing", "probe_max", "probe_run", "grid",
                   "min_segment", "roi_extend", "knot_spacing"},
    "gate": {"iou", "rms"},
}


def config_from_dict(data: dict, base: Path | None = None, seed_override: int | None = None) -> PipelineConfig:
    base = Path(base) if base is not None else Path(".")
    unknown = sorted(set(data) - set(_SECTIONS) - {"seed"})
    if unknown:
        raise ConfigError(f"unknown config sections: {', '.join(unknown)}")
    for sec, keys in _SECTIONS.items():
        extra = sorted(set(data.get(sec, {})) - keys)
        if extra:
            raise ConfigError(f"unknown keys in [{sec}]: {', '.join(extra)}")
    paths = data.get("paths", {})

    def p(key):
        v = paths.get(key)
        return None if v is None else (base / v)

    if "skeleton" not in paths or "poses" not in paths:
        raise ConfigError("paths.skeleton and paths.poses are required")
    seed = int(data.get("seed", 0)) if seed_override is None else int(seed_override)
    try:
        exp = ExplorationConfig(**data.get("exploration", {}), rng_seed=seed)
        reg = RegressionConfig(**data.get("regression", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    gate = data.get("gate", {})
    cfg = PipelineConfig(
        skeleton=p("skeleton"), poses=p("poses"), bev=p("bev"), frames=p("frames"), clouds=p("clouds"),
        camera=p("camera"), output=p("output"), mode=data.get("projection", {}).get("mode", "flat"),
        exploration=exp, regression=reg, gate_iou=float(gate.get("iou", 0.7)),
        gate_rms=float(gate.get("rms", 0.2)), seed=seed,
    )
    cfg.validate(check_paths=False)
    return cfg


def load_config(path, seed_override: int | None = None) -> PipelineConfig:
    path = Path(path)
    try:
        data = tomllib.loads(path.read_text(encoding="utf-8"))
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return config_from_dict(data, path.parent, seed_override)


# ---------------------------------------------------------------- document


@dataclass
class HDMapDocument:
    skeleton: SkeletonMap
    roads: dict[str, AtomicRoad] = field(default_factory=dict)
    intersections: dict[str, Intersection] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    provenance: dict | None = None

    def validate(self) -> None:
        bad = [r for r in self.roads if r not in self.skeleton.edges]
        bad += [i for i in self.intersections if i not in self.skeleton.intersections]
        if bad:
            raise ConfigError(f"document ids not in skeleton: {', '.join(sorted(bad))}")

    def to_dict(self) -> dict:
        return {
            "skeleton": self.skeleton.to_dict(),
            "roads": {k: self.roads[k].to_dict() for k in sorted(self.roads)},
            "intersections": {k: self.intersections[k].to_dict() for k in sorted(self.intersections)},
            "warnings": list(self.warnings),
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HDMapDocument":
        doc = cls(
            SkeletonMap.from_dict(d["skeleton"]),
            {k: AtomicRoad.from_dict(v) for k, v in d.get("roads", {}).items()},
            {k: Intersection.from_dict(v) for k, v in d.get("intersections", {}).items()},
            list(d.get("warnings", [])),
            d.get("provenance"),
        )
        doc.validate()
        return doc

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def loads(cls, text: str) -> "HDMapDocument":
        return cls.from_dict(json.loads(text))

    def save(self, path) -> None:
        Path(path).write_text(self.dumps() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "HDMapDocument":
        return cls.loads(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------- build


def road_seed(seed: int, edge_id: str) -> int:
    """Per-road RNG seed, independent of processing order."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, zlib.crc32(edge_id.encode("utf-8"))])
    return int(ss.generate_state(1)[0])


def segment_poses(smap: SkeletonMap, poses: list[Pose]) -> list[tuple[str, str]]:
    """(kind, element id) per pose; poses that cannot be located get ("none", "")."""
    out = []
    for p in poses:
        try:
            ref = locate(smap, p)
            out.append((ref.kind, ref.element_id))
        except SkeletonLookupError:
            out.append(("none", ""))
    return out


def _edge_pose_indices(smap, loc, edge_id) -> tuple[list[int], list[int]]:
    """Pose indices on the edge and the run of source-ROI poses right before it."""
    on = [i for i, (k, e) in enumerate(loc) if k == "on-edge" and e == edge_id]
    lead = []
    if on:
        src = smap.edges[edge_id].source
        j = on[0] - 1
        while j >= 0 and loc[j] == ("in-intersection", src):
            lead.append(j)
            j -= 1
    return on, lead[::-1]


def _frame_index(frames_dir: Path) -> list[Path]:
    return sorted(Path(frames_dir).glob("*.png"))


class FrameSource:
    """Semantic frames (and clouds) matched to poses by timestamp."""

    def __init__(self, cfg: PipelineConfig, poses: list[Pose]):
        self.cfg = cfg
        self.poses = poses
        self.camera = read_camera(cfg.camera)
        files = _frame_index(cfg.frames)
        self.frames = [read_frame(f) for f in files]
        self.cloud_files = []
        if cfg.mode == "mesh":
            for f in files:
                cp = Path(cfg.clouds) / f"cloud_{f.stem}.bin"
                if not cp.exists():
                    raise ConfigError(f"missing point cloud {cp}")
                self.cloud_files.append(cp)
        ts = np.array([p.timestamp for p in poses])
        self.by_pose: dict[int, int] = {}
        for k, fr in enumerate(self.frames):
            i = int(np.argmin(np.abs(ts - fr.timestamp))) if len(ts) else -1
            if i >= 0 and abs(ts[i] - fr.timestamp) <= SYNC_TOLERANCE:
                self.by_pose[i] = k

    def accumulate(self, pose_ids, cell_size: float) -> BEVMap:
        bev = BEVMap(cell_size)
        for i in pose_ids:
            k = self.by_pose.get(i)
            if k is None:
                continue
            frame, pose = self.frames[k], self.poses[i]
            if self.cfg.mode == "mesh":
                try:
                    mesh = build_ground_mesh(read_cloud(self.cloud_files[k]), region=(-5.0, 50.0, -20.0, 20.0))
                except DegenerateInputError:
                    bev.accumulate(project_flat(frame, self.camera, pose, cell_size))
                    continue
                bev.accumulate(project_mesh(frame, self.camera, pose, mesh, cell_size))
            else:
                bev.accumulate(project_flat(frame, self.camera, pose, cell_size))
        return bev


def entry_start(bev: BEVMap, pose: Pose, max_offset: float = 8.0) -> tuple[Pose, float | None]:
    """Re-center the start pose across the drivable span it sits in.

    Returns the shifted pose and the span width, or (pose, None) when the
    pose is not on a drivable cell.
    """
    here = bev.lookup([[pose.x, pose.y]])[0]
    if not IS_DRIVABLE_AREA[int(here[0])]:
        return pose, None
    n = np.array([-math.sin(pose.yaw), math.cos(pose.yaw)])
    P = np.array([[pose.x, pose.y]] * 2)
    off, found, _ = probe_offsets(bev, P, np.vstack([n, -n]), own=np.repeat(here, 2), max_offset=max_offset)
    left, right = float(off[0]), float(off[1])
    width = left + right
    if width < 1.0 or not found.all():
        return pose, None
    shift = 0.5 * (left - right)
    return Pose(pose.timestamp, pose.x + shift * n[0], pose.y + shift * n[1], pose.z,
                pose.yaw, pose.pitch, pose.roll), width


def build_road(edge, bev: BEVMap, start: Pose, rois, cfg: PipelineConfig, warnings: list[str]) -> AtomicRoad:
    """Explore and regress one atomic road; ``rois`` maps node ids to region polygons."""
    target_roi = rois[edge.target]
    start2, width = entry_start(bev, start)
    if width is None:
        warnings.append(f"{edge.id}: start pose not on a drivable cell; using default entry width")
        width = DEFAULT_ENTRY_WIDTH
    ecfg = ExplorationConfig(**{**asdict(cfg.exploration), "rng_seed": road_seed(cfg.seed, edge.id)})
    road_len = edge.length
    try:
        hist = explore(bev, start2, target_roi, ecfg, road_entry_width=width, road_length=road_len)
    except ExtinctionError as exc:
        warnings.append(f"{edge.id}: exploration failed ({exc}); road left empty")
        return AtomicRoad(edge.id)
    if hist.note:
        warnings.append(f"{edge.id}: {hist.note}")
    ends = (rois[edge.source].points, target_roi.points)
    return build_atomic_road(hist, bev, edge, cfg.regression, edge_id=edge.id, rois=ends)


def run_build(cfg: PipelineConfig, cell_size: float | None = None) -> HDMapDocument:
    cfg.validate()
    smap = build_skeleton(load_network(cfg.skeleton))
    poses = read_poses(cfg.poses)
    rois = smap.rois()
    loc = segment_poses(smap, poses)
    warnings: list[str] = []

    global_bev = frames = None
    if cfg.uses_frames:
        frames = FrameSource(cfg, poses)
        cs = cell_size or 0.1
    else:
        global_bev = load_bev(cfg.bev)
        cs = global_bev.cell_size

    roads: dict[str, AtomicRoad] = {}
    for eid in sorted(smap.edges):
        edge = smap.edges[eid]
        on, lead = _edge_pose_indices(smap, loc, eid)
        if not on:
            continue
        if frames is not None:
            bev = frames.accumulate(lead + on, cs)
        else:
            pts = np.vstack([edge.points, rois[edge.source].points, rois[edge.target].points])
            lo, hi = pts.min(axis=0) - CROP_MARGIN, pts.max(axis=0) + CROP_MARGIN
            bev = global_bev.crop(lo[0], hi[0], lo[1], hi[1])
        roads[eid] = build_road(edge, bev, poses[on[0]], rois, cfg, warnings)

    inters: dict[str, Intersection] = {}
    for iid, stub in smap.intersections.items():
        inc = [roads[e] for e in stub.incoming if e in roads]
        out = [roads[e] for e in stub.outgoing if e in roads]
        if not inc and not out:
            continue
        inters[iid] = build_intersection(iid, inc, out, smap)

    prov = {"config_hash": cfg.config_hash(), "seed": cfg.seed, "version": __version__}
    return HDMapDocument(smap, roads, inters, warnings, prov)


# ---------------------------------------------------------------- truth as a map


def _lane_from_polylines(center, left, right) -> Lane:
    center = np.asarray(center, dtype=float)
    frame = RoadFrame.from_polyline(center)
    s, d = frame.to_local(center)
    keep = np.concatenate([[True], np.diff(s) > 1e-9])
    knots, values = s[keep], d[keep]
    if len(knots) < 2:
        knots, values = np.array([0.0, 1e-6]), np.zeros(2)
    cl = CenterLine(frame, knots, values, s, center)
    dl = np.hypot(*(np.asarray(left) - center).T)
    dr = np.hypot(*(np.asarray(right) - center).T)
    m = len(center)
    bounds = LaneBoundarySamples(dl, dr, np.zeros(m, bool), np.zeros(m, bool), np.full(m, -1), np.full(m, -1),
                                 np.asarray(left, dtype=float), np.asarray(right, dtype=float))
    return Lane(cl, bounds)


def truth_to_document(truth: GroundTruth, skeleton: SkeletonMap) -> HDMapDocument:
    """Ground truth expressed as a map document (self-evaluation reference)."""
    roads = {eid: AtomicRoad(eid, [_lane_from_polylines(l.center, l.left, l.right) for l in lanes])
             for eid, lanes in truth.roads.items() if lanes}
    inters: dict[str, Intersection] = {}
    for c in truth.connections:
        it = inters.setdefault(c.intersection, Intersection(c.intersection))
        mid = c.curve[len(c.curve) // 2]
        it.connections.append(LaneConnection(c.in_edge, c.in_lane, c.out_edge, c.out_lane,
                                             c.curve[0].copy(), mid.copy(), c.curve[-1].copy(), False,
                                             c.curve.copy()))
    prov = {"config_hash": "truth", "seed": None, "version": __version__}
    return HDMapDocument(skeleton, roads, inters, [], prov)


# ---------------------------------------------------------------- evaluation


class ProvenanceError(ValueError):
    pass


def run_eval(doc: HDMapDocument, truth: GroundTruth, gate: Gate = Gate(), rectify_map: bool = False,
             force: bool = False) -> dict:
    """Metrics report for a map document; documents without provenance need ``force``."""
    prov = doc.provenance or {}
    if not force and not ("config_hash" in prov and "seed" in prov):
        raise ProvenanceError("map document has no provenance block (use --force to evaluate anyway)")
    report = evaluate(doc.roads, doc.intersections, truth, gate, rectify_map)
    report["warnings"] = list(doc.warnings)
    report["provenance"] = doc.provenance
    return report
