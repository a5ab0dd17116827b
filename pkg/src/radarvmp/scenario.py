"""Ground-truth scenes: trajectories, RCS fluctuation and the benchmark layouts."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .config import DEFAULT_CONFIG, ModelConfig
from .signal import RadarNode, facing, object_amplitude

CROSSING_CENTER = np.array([-100.0, 50.0])
CROSSING_RADIUS = 60.0
CROSSING_SPEED = 6.0
CROSSING_BIRTH_WINDOW_S = 2.0
CROSSING_PROCESS_PRECISION = 6.25
CROSSING_RADARS = np.array([[-100.0, 160.0], [10.0, 50.0], [-100.0, -60.0], [-210.0, 50.0]])

PARALLEL_STARTS = np.array([[-129.0, 57.0], [-129.0, 42.0]])
PARALLEL_VX = 3.0
PARALLEL_ACCEL = 2.71
# |vy| is set to the maneuver's velocity change so the tracks end up parallel
PARALLEL_VY = PARALLEL_ACCEL * 1.0
PARALLEL_MANEUVERS = ((2.0, 3.0, 1.0), (17.0, 18.0, -1.0))  # (start s, stop s, sign)

HANDOVER_START = np.array([319.0, 75.0])
HANDOVER_VELOCITY = np.array([-8.75, 0.0])
HANDOVER_STEPS = 600

SCENE_DURATION_S = 20.0
OBSERVATION_SNR_DB = -20.0   # mean single-sensor SNR at which a radar counts as observing


class RcsModel(str, Enum):
    SWERLING_0 = "swerling0"
    SWERLING_3 = "swerling3"

    @classmethod
    def from_case(cls, case) -> "RcsModel":
        if isinstance(case, RcsModel):
            return case
        key = str(case).lower().replace("-", "").replace("_", "")
        table = {"0": cls.SWERLING_0, "swerling0": cls.SWERLING_0,
                 "3": cls.SWERLING_3, "iii": cls.SWERLING_3,
                 "swerling3": cls.SWERLING_3, "swerlingiii": cls.SWERLING_3}
        if key not in table:
            raise ValueError(f"unknown RCS model {case!r}")
        return table[key]


def transition_matrices(dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Constant-velocity ``T`` and noise-gain ``G`` for state [x, y, vx, vy]."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    T = np.eye(4)
    T[0, 2] = T[1, 3] = dt
    G = np.diag([dt * dt / 2.0, dt * dt / 2.0, dt, dt])
    return T, G


def cv_step(phi, dt: float, accel=None) -> np.ndarray:
    """One constant-velocity step ``T phi + G a``.

    ``accel`` is either a 4-vector used verbatim or a 2-D acceleration
    (m/s^2), which drives both position and velocity rows.
    """
    T, G = transition_matrices(dt)
    out = T @ np.asarray(phi, dtype=float)
    if accel is not None:
        a = np.asarray(accel, dtype=float)
        if a.shape == (2,):
            a = np.concatenate([a, a])
        out = out + G @ a
    return out


def process_noise(rng: np.random.Generator, precision: float) -> np.ndarray:
    return rng.standard_normal(4) / math.sqrt(precision)


def sample_rcs(model, mean_rcs: float, rng: np.random.Generator | None = None, size=None):
    """Draw a radar cross section (m^2).

    Swerling-0 is constant.  Swerling-III follows
    ``p(s) = 4 s / m^2 exp(-2 s / m)``, a Gamma(2, m/2) law.
    """
    if not mean_rcs > 0:
        raise ValueError("mean_rcs must be positive")
    model = RcsModel.from_case(model)
    if model is RcsModel.SWERLING_0:
        return mean_rcs if size is None else np.full(size, mean_rcs)
    if rng is None:
        raise ValueError("Swerling-III draws need an rng")
    return rng.gamma(2.0, mean_rcs / 2.0, size=size)


@dataclass
class Trajectory:
    states: np.ndarray   # (death - birth + 1, 4)
    birth_index: int
    death_index: int

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float).reshape(-1, 4)
        if self.death_index - self.birth_index + 1 != len(self.states):
            raise ValueError("trajectory length does not match [birth, death]")

    def exists(self, n: int) -> bool:
        return self.birth_index <= n <= self.death_index

    def state_at(self, n: int) -> np.ndarray:
        if not self.exists(n):
            raise IndexError(f"object does not exist at n={n}")
        return self.states[n - self.birth_index]


@dataclass
class Scene:
    trajectories: list[Trajectory]
    radars: list[RadarNode]
    dt: float
    n_steps: int
    rcs_model: RcsModel = RcsModel.SWERLING_0
    mean_rcs: float = 0.05
    noise_variance: float = 1e-6
    name: str = "custom"
    drops: list[tuple[int, int, int]] = field(default_factory=list)  # (node, start, stop)

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        self.rcs_model = RcsModel.from_case(self.rcs_model)

    @property
    def duration(self) -> float:
        return self.n_steps * self.dt

    def truth_at(self, n: int) -> list[np.ndarray]:
        return [t.state_at(n) for t in self.trajectories if t.exists(n)]

    def positions_at(self, n: int) -> np.ndarray:
        pts = [s[:2] for s in self.truth_at(n)]
        return np.array(pts).reshape(-1, 2)

    def dropped_at(self, n: int) -> set[int]:
        return {node for node, start, stop in self.drops if start <= n <= stop}

    def covered(self) -> bool:
        """Every object state is inside the unambiguous range of some radar."""
        for t in self.trajectories:
            for s in t.states:
                if not any(np.hypot(*(s[:2] - r.position)) <= r.r_max for r in self.radars):
                    return False
        return True

    def observers(self, n: int, cfg: ModelConfig = DEFAULT_CONFIG,
                  snr_floor_db: float = OBSERVATION_SNR_DB) -> list[set[int]]:
        """Radars whose mean-RCS single-sensor SNR of each object is above the floor."""
        return [observing_radars(s[:2], self.radars, cfg, snr_floor_db) for s in self.truth_at(n)]

    # serialisation

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "dt": self.dt,
            "n_steps": self.n_steps,
            "rcs_model": self.rcs_model.value,
            "mean_rcs": self.mean_rcs,
            "noise_variance": self.noise_variance,
            "radars": [{"position": r.position.tolist(), "orientation": r.orientation}
                       for r in self.radars],
            "objects": [{"birth_index": t.birth_index, "death_index": t.death_index,
                         "states": t.states.tolist()} for t in self.trajectories],
            "drops": [{"node": a, "start": b, "stop": c} for a, b, c in self.drops],
        }

    @classmethod
    def from_dict(cls, data: dict, cfg: ModelConfig = DEFAULT_CONFIG) -> "Scene":
        radars = [RadarNode.from_config(r["position"], cfg, orientation=r.get("orientation", 0.0),
                                        radar_id=i) for i, r in enumerate(data["radars"])]
        objs = [Trajectory(np.array(o["states"]), o["birth_index"], o["death_index"])
                for o in data.get("objects", [])]
        drops = [(d["node"], d["start"], d["stop"]) for d in data.get("drops", [])]
        return cls(objs, radars, dt=data["dt"], n_steps=data["n_steps"],
                   rcs_model=data.get("rcs_model", "swerling0"),
                   mean_rcs=data.get("mean_rcs", cfg.mean_rcs),
                   noise_variance=data.get("noise_variance", cfg.noise_variance),
                   name=data.get("name", "custom"), drops=drops)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path, cfg: ModelConfig = DEFAULT_CONFIG) -> "Scene":
        return cls.from_dict(json.loads(Path(path).read_text()), cfg)


def observing_radars(position, radars, cfg: ModelConfig = DEFAULT_CONFIG,
                     snr_floor_db: float = OBSERVATION_SNR_DB) -> set[int]:
    """Ids of the radars seeing a mean-RCS object at ``position`` above ``snr_floor_db``.

    Every steering vector has ``|S|^2 = N_Z``, so the single-sensor SNR is
    ``|alpha|^2 / noise_variance``.
    """
    out = set()
    for r in radars:
        if np.hypot(*(np.asarray(position[:2]) - r.position)) > r.r_max:
            continue
        amp = object_amplitude(r, position[:2], cfg.mean_rcs, cfg)
        if 10 * math.log10(amp**2 / cfg.noise_variance) >= snr_floor_db:
            out.add(r.radar_id)
    return out


def _ring_radars(cfg: ModelConfig) -> list[RadarNode]:
    return [RadarNode.from_config(p, cfg, orientation=facing(p, CROSSING_CENTER), radar_id=i)
            for i, p in enumerate(CROSSING_RADARS)]


def _n_steps(cfg: ModelConfig) -> int:
    return int(round(SCENE_DURATION_S * cfg.prf))


def make_crossing_scene(rng: np.random.Generator, cfg: ModelConfig = DEFAULT_CONFIG,
                        rcs_model=RcsModel.SWERLING_0) -> Scene:
    """Three objects born on separate thirds of a circle, heading for its centre."""
    dt, n_steps = cfg.dt, _n_steps(cfg)
    last_birth = int(round(CROSSING_BIRTH_WINDOW_S / dt))
    trajectories = []
    for third in range(3):
        angle = (third + rng.random()) * 2.0 * math.pi / 3.0
        birth = int(rng.integers(0, last_birth + 1))
        direction = np.array([math.cos(angle), math.sin(angle)])
        pos = CROSSING_CENTER + CROSSING_RADIUS * direction
        state = np.concatenate([pos, -CROSSING_SPEED * direction])
        states = [state]
        for _ in range(birth + 1, n_steps):
            state = cv_step(state, dt, process_noise(rng, CROSSING_PROCESS_PRECISION))
            states.append(state)
        trajectories.append(Trajectory(np.array(states), birth, n_steps - 1))
    return Scene(trajectories, _ring_radars(cfg), dt, n_steps, rcs_model,
                 cfg.mean_rcs, cfg.noise_variance, name="crossing")


def make_parallel_scene(cfg: ModelConfig = DEFAULT_CONFIG, rcs_model=RcsModel.SWERLING_3) -> Scene:
    """Two objects on a collision course that swerve into 1.5 m-spaced parallel tracks."""
    dt, n_steps = cfg.dt, _n_steps(cfg)
    trajectories = []
    for start, sign in zip(PARALLEL_STARTS, (-1.0, 1.0)):
        state = np.array([start[0], start[1], PARALLEL_VX, sign * PARALLEL_VY])
        states = [state]
        for n in range(1, n_steps):
            t = (n - 1) * dt
            accel = np.zeros(2)
            for t0, t1, direction in PARALLEL_MANEUVERS:
                if t0 - 1e-9 <= t < t1 - 1e-9:
                    accel = np.array([0.0, -sign * direction * PARALLEL_ACCEL])
            state = cv_step(state, dt, accel)
            states.append(state)
        trajectories.append(Trajectory(np.array(states), 0, n_steps - 1))
    return Scene(trajectories, _ring_radars(cfg), dt, n_steps, rcs_model,
                 cfg.mean_rcs, cfg.noise_variance, name="parallel")


def make_handover_scene(cfg: ModelConfig = DEFAULT_CONFIG, rcs_model=RcsModel.SWERLING_3,
                        n_steps: int = HANDOVER_STEPS) -> Scene:
    """One object flying past a line of four radars at constant velocity."""
    dt = cfg.dt
    radars = [RadarNode.from_config([-100.0 + i * 110.0, 0.0], cfg, orientation=0.0, radar_id=i)
              for i in range(4)]
    state = np.concatenate([HANDOVER_START, HANDOVER_VELOCITY])
    states = [state]
    for _ in range(1, n_steps):
        state = cv_step(state, dt)
        states.append(state)
    traj = Trajectory(np.array(states), 0, n_steps - 1)
    return Scene([traj], radars, dt, n_steps, rcs_model, cfg.mean_rcs,
                 cfg.noise_variance, name="handover")


def make_empty_scene(cfg: ModelConfig = DEFAULT_CONFIG, n_steps: int = 100) -> Scene:
    return Scene([], _ring_radars(cfg), cfg.dt, n_steps, RcsModel.SWERLING_0,
                 cfg.mean_rcs, cfg.noise_variance, name="empty")


SCENES = {
    "crossing": lambda rng, cfg, rcs: make_crossing_scene(rng, cfg, rcs),
    "parallel": lambda rng, cfg, rcs: make_parallel_scene(cfg, rcs),
    "handover": lambda rng, cfg, rcs: make_handover_scene(cfg, rcs),
    "empty": lambda rng, cfg, rcs: make_empty_scene(cfg),
}
