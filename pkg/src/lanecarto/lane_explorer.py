"""Sequential Monte Carlo lane exploration over a semantic BEV map.

Sedan-sized particles are launched as a strip across the road at the start
pose and driven forward with noisy speed and yaw rate. Each step a particle
is weighted by how much of its footprint sits on drivable cells; touching a
solid line or curb kills it. Survivors are resampled until the population has
reached the target intersection ROI.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .bev_projection import BEVMap
from .geometry import points_in_polygon, wrap_angle
from .semantics import IS_BOUNDARY, IS_TRAVERSABLE, SemanticClass

ALIVE = 0
TERMINATED_BOUNDARY = 1
TERMINATED_STOP = 2
TERMINAL = 3

STATUS_NAMES = {
    ALIVE: "alive",
    TERMINATED_BOUNDARY: "terminated-boundary",
    TERMINATED_STOP: "terminated-stop",
    TERMINAL: "terminal",
}


class ExtinctionError(RuntimeError):
    """Every particle died before any reached the target ROI."""

    def __init__(self, message: str, history: "ParticleHistory"):
        super().__init__(message)
        self.history = history


@dataclass
class ExplorationConfig:
    n_particles: int = 500
    v_range: tuple[float, float] = (0.9, 1.1)
    omega_range: tuple[float, float] = (-0.2, 0.2)
    dt: float = 0.5
    length: float = 3.0
    width: float = 1.5
    max_steps: int | None = None
    rng_seed: int = 0
    kill_threshold: float = 0.05
    stop_threshold: float = 0.3

    def __post_init__(self):
        self.v_range = tuple(float(v) for v in self.v_range)
        self.omega_range = tuple(float(v) for v in self.omega_range)
        if self.n_particles < 1:
            raise ValueError("n_particles must be >= 1")
        if self.v_range[0] > self.v_range[1] or self.omega_range[0] > self.omega_range[1]:
            raise ValueError("range bounds are reversed")
        if self.dt <= 0:
            raise ValueError("dt must be positive")

    def default_max_steps(self, road_length: float) -> int:
        v_mid = 0.5 * (self.v_range[0] + self.v_range[1])
        return max(int(math.ceil(4.0 * road_length / (v_mid * self.dt))), 1)


@dataclass(frozen=True)
class Particle:
    x: float
    y: float
    phi: float

    def __post_init__(self):
        object.__setattr__(self, "phi", wrap_angle(self.phi))


@dataclass
class ParticleSet:
    x: np.ndarray
    y: np.ndarray
    phi: np.ndarray
    weights: np.ndarray
    parents: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.x)

    def particle(self, i: int) -> Particle:
        return Particle(float(self.x[i]), float(self.y[i]), float(self.phi[i]))


def init_particles(start, cfg: ExplorationConfig, road_entry_width: float) -> ParticleSet:
    """Strip of ``N`` particles across the road, perpendicular to the start yaw."""
    if road_entry_width <= 0:
        raise ValueError("road_entry_width must be positive")
    n = cfg.n_particles
    off = np.linspace(-0.5 * road_entry_width, 0.5 * road_entry_width, n) if n > 1 else np.zeros(1)
    nx, ny = -math.sin(start.yaw), math.cos(start.yaw)
    x = start.x + off * nx
    y = start.y + off * ny
    phi = np.full(n, wrap_angle(start.yaw))
    return ParticleSet(x, y, phi, np.full(n, 1.0 / n))


def predict(p: Particle, v: float, omega: float, dt: float) -> Particle:
    """One motion step: heading advance ``phi + omega`` then yaw integration."""
    return Particle(
        p.x + math.cos(p.phi + omega) * v * dt,
        p.y + math.sin(p.phi + omega) * v * dt,
        p.phi + omega * dt,
    )


def predict_many(x, y, phi, v, omega, dt):
    return (
        x + np.cos(phi + omega) * v * dt,
        y + np.sin(phi + omega) * v * dt,
        wrap_angle(phi + omega * dt),
    )


def footprint_offsets(length: float, width: float, spacing: float) -> np.ndarray:
    """Body-frame sample points (x forward, y left), one per footprint cell."""
    nl = max(int(round(length / spacing)), 1)
    nw = max(int(round(width / spacing)), 1)
    ox = (np.arange(nl) + 0.5) * (length / nl) - 0.5 * length
    oy = (np.arange(nw) + 0.5) * (width / nw) - 0.5 * width
    OX, OY = np.meshgrid(ox, oy, indexing="ij")
    return np.column_stack([OX.ravel(), OY.ravel()])


def weigh_many(x, y, phi, bev: BEVMap, cfg: ExplorationConfig, prev_weight=None):
    """Weights and statuses for a batch of particles."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    off = footprint_offsets(cfg.length, cfg.width, bev.cell_size)
    k = len(off)
    c, s = np.cos(phi)[:, None], np.sin(phi)[:, None]
    px = x[:, None] + c * off[:, 0] - s * off[:, 1]
    py = y[:, None] + s * off[:, 0] + c * off[:, 1]
    labels, inside = bev.lookup(np.column_stack([px.ravel(), py.ravel()]))
    labels = labels.reshape(len(x), k)
    inside = inside.reshape(len(x), k)
    f_boundary = IS_BOUNDARY[labels].sum(axis=1) / k
    f_drivable = IS_TRAVERSABLE[labels].sum(axis=1) / k
    f_stop = (labels == SemanticClass.STOPLINE).sum(axis=1) / k

    penalty = np.clip(1.0 - f_boundary / cfg.kill_threshold, 0.0, 1.0)
    w = f_drivable * penalty
    status = np.full(len(x), ALIVE, dtype=np.int8)
    stop = f_stop > cfg.stop_threshold
    status[stop] = TERMINATED_STOP
    if prev_weight is not None:
        w = np.where(stop, np.asarray(prev_weight, dtype=float), w)
    dead = (f_boundary > cfg.kill_threshold) | ~inside.any(axis=1)
    w[dead] = 0.0
    status[dead] = TERMINATED_BOUNDARY
    return w, status


def weigh(p: Particle, bev: BEVMap, cfg: ExplorationConfig, prev_weight: float = 1.0) -> tuple[float, str]:
    w, st = weigh_many([p.x], [p.y], [p.phi], bev, cfg, prev_weight=[prev_weight])
    return float(w[0]), STATUS_NAMES[int(st[0])]


def systematic_resample(weights, n: int, rng: np.random.Generator) -> np.ndarray:
    """Low-variance resampling: ``n`` evenly spaced pointers with one random offset."""
    w = np.asarray(weights, dtype=float)
    total = w.sum()
    if not total > 0:
        raise ValueError("all weights are zero")
    cum = np.cumsum(w / total)
    cum[-1] = 1.0
    positions = (np.arange(n) + rng.random()) / n
    return np.searchsorted(cum, positions, side="right")


def resample(pset: ParticleSet, rng: np.random.Generator, n: int | None = None) -> ParticleSet:
    n = len(pset) if n is None else n
    try:
        idx = systematic_resample(pset.weights, n, rng)
    except ValueError:
        raise ExtinctionError("all particle weights are zero", ParticleHistory()) from None
    return ParticleSet(pset.x[idx], pset.y[idx], pset.phi[idx], np.full(n, 1.0 / n), idx)


@dataclass
class StepRecord:
    x: np.ndarray
    y: np.ndarray
    phi: np.ndarray
    weight: np.ndarray
    parent: np.ndarray
    status: np.ndarray


@dataclass
class ParticleHistory:
    """Every predicted particle at every step with its parent index.

    ``steps[t].parent[j]`` indexes ``steps[t-1]``; step 0 parents are -1.
    Terminal particles (inside the target ROI) carry status ``TERMINAL``.
    """

    steps: list[StepRecord] = field(default_factory=list)
    n_particles: int = 0
    completed: bool = False
    note: str = ""

    @property
    def n_steps(self) -> int:
        return len(self.steps)

    def terminal_refs(self) -> list[tuple[int, int]]:
        refs = []
        for t, rec in enumerate(self.steps):
            refs.extend((t, int(j)) for j in np.flatnonzero(rec.status == TERMINAL))
        return refs

    def terminal_points(self) -> np.ndarray:
        refs = self.terminal_refs()
        return np.array([[self.steps[t].x[j], self.steps[t].y[j]] for t, j in refs]).reshape(-1, 2)

    def ancestor_masks(self, refs) -> list[np.ndarray]:
        masks = [np.zeros(len(rec.x), dtype=bool) for rec in self.steps]
        for t, j in refs:
            masks[t][j] = True
        for t in range(len(self.steps) - 1, 0, -1):
            par = self.steps[t].parent[masks[t]]
            masks[t - 1][par] = True
        return masks

    def pooled_points(self, refs) -> np.ndarray:
        """(x, y) of every distinct ancestor of the given particles, themselves included."""
        masks = self.ancestor_masks(refs)
        xs = [rec.x[m] for rec, m in zip(self.steps, masks)]
        ys = [rec.y[m] for rec, m in zip(self.steps, masks)]
        if not xs:
            return np.zeros((0, 2))
        return np.column_stack([np.concatenate(xs), np.concatenate(ys)])

    def to_json(self) -> str:
        return json.dumps(
            {
                "n_particles": self.n_particles,
                "completed": self.completed,
                "note": self.note,
                "steps": [
                    {k: np.asarray(v).tolist() for k, v in asdict(rec).items()} for rec in self.steps
                ],
            }
        )


def explore(
    bev: BEVMap,
    start,
    target_roi,
    cfg: ExplorationConfig,
    road_entry_width: float = 3.0,
    road_length: float | None = None,
) -> ParticleHistory:
    """Run the exploration from ``start`` until the population reaches ``target_roi``.

    The population size is held at ``N``: particles that enter the ROI leave
    the active set and the rest are resampled back up to ``N`` minus the
    number already terminal.
    """
    rng = np.random.default_rng(cfg.rng_seed)
    n = cfg.n_particles
    poly = np.asarray(target_roi.polygon if hasattr(target_roi, "polygon") else target_roi, dtype=float)
    if road_length is None:
        road_length = float(np.hypot(*(poly.mean(axis=0) - [start.x, start.y])))
    max_steps = cfg.max_steps or cfg.default_max_steps(road_length)

    ps = init_particles(start, cfg, road_entry_width)
    in_roi = points_in_polygon(np.column_stack([ps.x, ps.y]), poly)
    status0 = np.where(in_roi, TERMINAL, ALIVE).astype(np.int8)
    hist = ParticleHistory(n_particles=n)
    hist.steps.append(StepRecord(ps.x, ps.y, ps.phi, ps.weights.copy(), np.full(n, -1), status0))
    n_term = int(in_roi.sum())
    active = np.flatnonzero(~in_roi)
    if n_term == n:
        hist.completed = True
        return hist

    lo_v, hi_v = cfg.v_range
    lo_w, hi_w = cfg.omega_range
    for _ in range(max_steps):
        prev = hist.steps[-1]
        m = len(active)
        v = rng.uniform(lo_v, hi_v, m)
        om = rng.uniform(lo_w, hi_w, m)
        x, y, phi = predict_many(prev.x[active], prev.y[active], prev.phi[active], v, om, cfg.dt)
        w, status = weigh_many(x, y, phi, bev, cfg, prev_weight=prev.weight[active])
        arrived = (status != TERMINATED_BOUNDARY) & points_in_polygon(np.column_stack([x, y]), poly)
        status[arrived] = TERMINAL
        hist.steps.append(StepRecord(x, y, phi, w, active.copy(), status))
        n_term += int(arrived.sum())
        need = n - n_term
        if need == 0:
            hist.completed = True
            return hist
        cand = np.flatnonzero(((status == ALIVE) | (status == TERMINATED_STOP)) & (w > 0))
        if cand.size == 0:
            if n_term > 0:
                hist.note = "population died out after partial arrival"
                hist.completed = True
                return hist
            raise ExtinctionError(f"extinction at step {hist.n_steps - 1}", hist)
        active = cand[systematic_resample(w[cand], need, rng)]

    hist.note = f"max_steps={max_steps} reached"
    if n_term == 0:
        raise ExtinctionError("no particle reached the target ROI", hist)
    return hist
