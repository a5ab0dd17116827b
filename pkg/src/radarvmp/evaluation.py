"""OSPA evaluation, run simulation and Monte-Carlo aggregation."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .config import DEFAULT_CONFIG, ModelConfig
from .scenario import Scene, sample_rcs
from .signal import Snapshot, complex_noise, object_amplitude, steering_vector
from .tracker import VMPTracker

log = logging.getLogger(__name__)

CSV_COLUMNS = ["timeindex", "meanVMP", "stdVMP", "meanLoc", "meanCard"]


@dataclass(frozen=True)
class OspaConfig:
    cutoff_m: float = 5.0
    order: float = 2.0

    def __post_init__(self):
        if not self.cutoff_m > 0 or not self.order >= 1:
            raise ValueError("OSPA needs cutoff > 0 and order >= 1")


def ospa(truth, est, cfg: OspaConfig = OspaConfig()) -> tuple[float, float, float]:
    """OSPA distance between two finite sets of 2-D points.

    Returns ``(total, localisation, cardinality)`` where
    ``total**p = localisation**p + cardinality**p``.
    """
    X = np.asarray(truth, dtype=float).reshape(-1, 2)
    Y = np.asarray(est, dtype=float).reshape(-1, 2)
    m, n = len(X), len(Y)
    if m == 0 and n == 0:
        return 0.0, 0.0, 0.0
    c, p = cfg.cutoff_m, cfg.order
    big = max(m, n)
    if m == 0 or n == 0:
        return c, 0.0, c
    d = np.minimum(np.linalg.norm(X[:, None] - Y[None], axis=2), c) ** p
    rows, cols = linear_sum_assignment(d)
    loc = d[rows, cols].sum() / big
    card = c**p * abs(m - n) / big
    return (loc + card) ** (1 / p), loc ** (1 / p), card ** (1 / p)


# --------------------------------------------------------------------------
# simulation

@dataclass
class RunRecord:
    ospa: np.ndarray
    loc: np.ndarray
    card: np.ndarray
    n_est: np.ndarray
    n_truth: np.ndarray
    step_time: np.ndarray
    seed: int | None = None
    beliefs: list[dict] = field(default_factory=list)

    def __len__(self):
        return len(self.ospa)

    def to_dict(self) -> dict:
        return {"seed": self.seed, "ospa": self.ospa.tolist(), "loc": self.loc.tolist(),
                "card": self.card.tolist(), "n_est": self.n_est.tolist(),
                "n_truth": self.n_truth.tolist(), "step_time": self.step_time.tolist(),
                "beliefs": self.beliefs}


def generate_snapshots(scene: Scene, n: int, rng: np.random.Generator,
                       cfg: ModelConfig = DEFAULT_CONFIG) -> dict[int, Snapshot]:
    """One noisy snapshot per radar for time index ``n``.

    Each object gets an independent RCS draw and a uniform random phase per
    radar.
    """
    truth = scene.truth_at(n)
    out = {}
    for radar in scene.radars:
        z = complex_noise(rng, radar.n_z, scene.noise_variance)
        for phi in truth:
            sv = steering_vector(radar, phi)
            if not sv.visible:
                continue
            rcs = sample_rcs(scene.rcs_model, scene.mean_rcs, rng)
            amp = object_amplitude(radar, phi[:2], rcs, cfg)
            z += amp * np.exp(2j * np.pi * rng.random()) * sv.s
        out[radar.radar_id] = Snapshot(radar.radar_id, n, z)
    return out


def simulate_run(scene: Scene, seed: int, cfg: ModelConfig = DEFAULT_CONFIG, *,
                 ospa_cfg: OspaConfig = OspaConfig(), record_beliefs: bool = False,
                 drops: Sequence[tuple[int, int, int]] | None = None,
                 tracker_factory: Callable[..., VMPTracker] | None = None) -> RunRecord:
    """Run the tracker over a scene with measurement noise seeded by ``seed``."""
    rng = np.random.default_rng(seed)
    factory = tracker_factory or VMPTracker
    tracker = factory(scene.radars, cfg)
    tracker.record_history = record_beliefs
    drops = list(scene.drops if drops is None else drops)
    n_steps = scene.n_steps
    rec = {k: np.zeros(n_steps) for k in ("ospa", "loc", "card", "n_est", "n_truth", "time")}
    for n in range(n_steps):
        snaps = generate_snapshots(scene, n, rng, cfg)
        dropped = {node for node, a, b in drops if a <= n <= b}
        res = tracker.step(snaps, n, dropped=dropped)
        truth = scene.positions_at(n)
        est = res.estimates[:, :2]
        total, loc, card = ospa(truth, est, ospa_cfg)
        if not np.all(np.isfinite(res.estimates)):
            raise FloatingPointError(f"non-finite state estimate at n={n}")
        rec["ospa"][n], rec["loc"][n], rec["card"][n] = total, loc, card
        rec["n_est"][n], rec["n_truth"][n] = len(est), len(truth)
        rec["time"][n] = res.runtime_s
    return RunRecord(rec["ospa"], rec["loc"], rec["card"], rec["n_est"], rec["n_truth"],
                     rec["time"], seed, tracker.history if record_beliefs else [])


@dataclass
class MonteCarloResult:
    runs: list[RunRecord]
    failures: list[tuple[int, str]]

    def _stack(self, name: str) -> np.ndarray:
        if not self.runs:
            raise ValueError("no successful runs")
        return np.vstack([getattr(r, name) for r in self.runs])

    @property
    def mean_ospa(self) -> np.ndarray:
        return self._stack("ospa").mean(axis=0)

    @property
    def std_ospa(self) -> np.ndarray:
        return self._stack("ospa").std(axis=0)

    @property
    def mean_loc(self) -> np.ndarray:
        return self._stack("loc").mean(axis=0)

    @property
    def mean_card(self) -> np.ndarray:
        return self._stack("card").mean(axis=0)

    @property
    def mean_n_est(self) -> np.ndarray:
        return self._stack("n_est").mean(axis=0)

    def runtime_stats(self) -> dict:
        t = self._stack("step_time").ravel()
        return {"mean": float(t.mean()), "std": float(t.std()), "min": float(t.min()),
                "max": float(t.max()), "calls": int(t.size)}

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for n, row in enumerate(zip(self.mean_ospa, self.std_ospa, self.mean_loc, self.mean_card)):
                w.writerow([n] + [f"{v:.6f}" for v in row])


def monte_carlo(scene_factory: Callable[[np.random.Generator], Scene], runs: int, seed: int = 0,
                cfg: ModelConfig = DEFAULT_CONFIG, **kwargs) -> MonteCarloResult:
    """Independent runs; run ``i`` uses child seed ``i`` of ``seed`` for both truth and noise."""
    if runs < 1:
        raise ValueError("runs must be >= 1")
    children = np.random.SeedSequence(seed).spawn(runs)
    out, failures = [], []
    for i, child in enumerate(children):
        truth_seed, noise_seed = (int(s.generate_state(1)[0]) for s in child.spawn(2))
        try:
            scene = scene_factory(np.random.default_rng(truth_seed))
            out.append(simulate_run(scene, noise_seed, cfg, **kwargs))
        except (ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
            log.warning("run %d failed and is excluded: %s", i, exc)
            failures.append((i, str(exc)))
    return MonteCarloResult(out, failures)


def read_csv(path) -> dict[str, np.ndarray]:
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return {c: np.array([float(r[c]) for r in rows]) for c in CSV_COLUMNS}


def steady_state(values: np.ndarray, start: int, stop: int) -> float:
    return float(np.mean(values[start:stop + 1]))


__all__ = ["OspaConfig", "ospa", "RunRecord", "generate_snapshots", "simulate_run",
           "MonteCarloResult", "monte_carlo", "read_csv", "steady_state", "CSV_COLUMNS"]
