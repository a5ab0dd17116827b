"""Command line runner: ``radarvmp run`` and ``radarvmp validate``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ALGORITHM_CONSTANTS, DEFAULT_CONFIG, RADAR_CONSTANTS, ModelConfig, constant_names
from .evaluation import monte_carlo
from .scenario import SCENES, RcsModel, Scene

log = logging.getLogger("radarvmp")

EXIT_OK, EXIT_FAILURE, EXIT_BAD_CONFIG = 0, 1, 2
RUN_KEYS = ("scenario", "runs", "seed", "swerling", "output_dir")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    scenario: str = "crossing"
    runs: int = 1
    seed: int = 0
    swerling: int = 0
    overrides: dict = field(default_factory=dict)
    output_dir: Path = Path("out")
    drops: list[tuple[int, int, int]] = field(default_factory=list)

    def __post_init__(self):
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if self.swerling not in (0, 3):
            raise ConfigError("swerling must be 0 or 3")
        if self.scenario not in SCENES and not self.scenario.startswith("file:"):
            raise ConfigError(f"unknown scenario {self.scenario!r} "
                              f"(expected one of {sorted(SCENES)} or file:<path>)")
        self.output_dir = Path(self.output_dir)

    @property
    def rcs_model(self) -> RcsModel:
        return RcsModel.from_case(self.swerling)


# --------------------------------------------------------------------------
# config files

def read_config_file(path) -> dict:
    """Parse a flat JSON object; parse errors are reported with line/column."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read ({exc.strerror})") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return data


def split_config(data: dict) -> tuple[dict, dict]:
    """Separate run settings from model-constant overrides."""
    data = dict(data)
    nested = data.pop("overrides", {})
    if not isinstance(nested, dict):
        raise ConfigError("'overrides' must be an object")
    run = {k: data.pop(k) for k in RUN_KEYS if k in data}
    overrides = {**data, **nested}
    unknown = sorted(set(overrides) - set(constant_names()))
    if unknown:
        raise ConfigError(f"unknown constant(s): {', '.join(unknown)}")
    return run, overrides


def build_model_config(overrides: dict) -> ModelConfig:
    try:
        cfg = DEFAULT_CONFIG.replace(**overrides)
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(str(exc).strip("'\"")) from None
    if cfg.r_max > cfg.max_unambiguous_range * (1 + 1e-9):
        raise ConfigError(f"r_max = {cfg.r_max} m exceeds the unambiguous range "
                          f"{cfg.max_unambiguous_range:.4g} m of the waveform")
    return cfg


def validate_report(data: dict) -> tuple[bool, list[str]]:
    """Schema and physical sanity check; lists every effective constant."""
    lines = []
    try:
        run, overrides = split_config(data)
        cfg = build_model_config(overrides)
        if run:
            RunConfig(**run)
    except ConfigError as exc:
        return False, [f"invalid: {exc}"]
    lines.append("valid")

    def row(name):
        value = getattr(cfg, name)
        origin = "override" if name in overrides else "default"
        return f"  {name:<26} {value!r:<14} {origin}"

    lines.append(f"radar constants ({len(RADAR_CONSTANTS)}):")
    lines += [row(n) + f"  [{RADAR_CONSTANTS[n][1]}]" for n in RADAR_CONSTANTS]
    lines.append(f"algorithm constants ({len(ALGORITHM_CONSTANTS)}):")
    lines += [row(n) for n in ALGORITHM_CONSTANTS]
    rest = [n for n in constant_names() if n not in RADAR_CONSTANTS and n not in ALGORITHM_CONSTANTS]
    lines.append(f"other constants ({len(rest)}):")
    lines += [row(n) for n in rest]
    lines.append("derived:")
    lines.append(f"  range_resolution           {cfg.range_resolution:.6g} m")
    lines.append(f"  max_unambiguous_range      {cfg.max_unambiguous_range:.6g} m")
    lines.append(f"  n_samples                  {cfg.n_samples}")
    lines.append(f"  dt                         {cfg.dt:.6g} s")
    for k, v in run.items():
        lines.append(f"run setting {k} = {v!r}")
    return True, lines


# --------------------------------------------------------------------------
# run

def parse_drop(text: str) -> tuple[int, int, int]:
    """``id:start-stop`` (inclusive time indices); ``id:start`` drops until the end."""
    try:
        node, span = text.split(":")
        if "-" in span:
            a, b = span.split("-")
            start, stop = int(a), int(b)
        else:
            start, stop = int(span), sys.maxsize
        node = int(node)
    except ValueError:
        raise ConfigError(f"bad --drop-node value {text!r}; expected id:start-stop") from None
    if start < 0 or stop < start:
        raise ConfigError(f"bad --drop-node range in {text!r}")
    return node, start, stop


def make_scene_factory(rc: RunConfig, cfg: ModelConfig):
    if rc.scenario.startswith("file:"):
        path = rc.scenario[5:]
        try:
            scene = Scene.load(path, cfg)
        except (OSError, KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"cannot load scene {path}: {exc}") from None
        return lambda rng: scene
    build = SCENES[rc.scenario]
    return lambda rng: build(rng, cfg, rc.rcs_model)


PLOT_TEMPLATE = """\
# gnuplot script for the OSPA curves in {csv}
set datafile separator ','
set key top right
set xlabel 'time index n'
set ylabel 'OSPA [m]'
set grid
set yrange [0:5.5]
set title '{title}'
plot '{csv}' using 1:2 skip 1 with lines lw 2 title 'mean OSPA', \\
     '' using 1:($2-$3):($2+$3) skip 1 with filledcurves fs transparent solid 0.2 notitle, \\
     '' using 1:4 skip 1 with lines dt 2 title 'localisation', \\
     '' using 1:5 skip 1 with lines dt 3 title 'cardinality'
pause mouse close
"""


def run(rc: RunConfig, cfg: ModelConfig, *, smoother: str = "joint") -> int:
    factory = make_scene_factory(rc, cfg)
    probe = factory(np.random.default_rng(0))
    ids = {r.radar_id for r in probe.radars}
    for node, _, _ in rc.drops:
        if node not in ids:
            raise ConfigError(f"--drop-node refers to unknown radar {node} (radars: {sorted(ids)})")
    rc.output_dir.mkdir(parents=True, exist_ok=True)

    from .tracker import VMPTracker

    def tracker_factory(radars, c):
        return VMPTracker(radars, c, smoother=smoother)

    t0 = time.perf_counter()
    result = monte_carlo(factory, rc.runs, rc.seed, cfg, record_beliefs=True,
                         drops=rc.drops or None, tracker_factory=tracker_factory)
    wall = time.perf_counter() - t0
    for i, msg in result.failures:
        print(f"run {i} failed: {msg}", file=sys.stderr)
    if not result.runs:
        return EXIT_FAILURE

    csv_path = rc.output_dir / "ospa.csv"
    result.write_csv(csv_path)
    tracks = [{"run": i, "seed": r.seed, "beliefs": r.beliefs} for i, r in enumerate(result.runs)]
    (rc.output_dir / "tracks.json").write_text(json.dumps(tracks))
    runtime = {"per_step_s": result.runtime_stats(), "wall_s": wall,
               "runs": len(result.runs), "failures": [m for _, m in result.failures],
               "scenario": rc.scenario, "seed": rc.seed, "swerling": rc.swerling,
               "config": cfg.to_dict()}
    (rc.output_dir / "runtime.json").write_text(json.dumps(runtime, indent=2))
    (rc.output_dir / "plot.gp").write_text(PLOT_TEMPLATE.format(
        csv=csv_path.name, title=f"{probe.name}, {len(result.runs)} run(s)"))
    stats = result.runtime_stats()
    print(f"{len(result.runs)} run(s), {len(result.mean_ospa)} time indices, "
          f"mean OSPA {float(np.mean(result.mean_ospa)):.3f} m, "
          f"{1000 * stats['mean']:.1f} ms/step; results in {rc.output_dir}")
    return EXIT_FAILURE if result.failures else EXIT_OK


# --------------------------------------------------------------------------
# argument parsing

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="radarvmp", description="Signal-level multi-radar tracking simulator")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate a scenario and evaluate the tracker")
    r.add_argument("--scenario", help="crossing, parallel, handover, empty or file:<scene.json>")
    r.add_argument("--runs", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--swerling", type=int, choices=(0, 3))
    r.add_argument("--config", help="JSON file with constant overrides and run settings")
    r.add_argument("--out", help="output directory (default: out)")
    r.add_argument("--full-smoothing", action="store_true",
                   help="smooth over the whole track history instead of the last 50 steps")
    r.add_argument("--sweep", action="store_true",
                   help="one forward/backward pass per smoothing iteration instead of the joint solve")
    r.add_argument("--drop-node", action="append", default=[], metavar="ID:START-STOP")

    v = sub.add_parser("validate", help="check a config file and print the effective constants")
    v.add_argument("config")
    return p


def _run_config(args) -> tuple[RunConfig, ModelConfig]:
    file_run, overrides = ({}, {})
    if args.config:
        file_run, overrides = split_config(read_config_file(args.config))
    if args.full_smoothing:
        overrides["smoothing_window"] = None
    settings = dict(file_run)
    for key, value in (("scenario", args.scenario), ("runs", args.runs), ("seed", args.seed),
                       ("swerling", args.swerling), ("output_dir", args.out)):
        if value is not None:
            settings[key] = value
    cfg = build_model_config(overrides)
    try:
        rc = RunConfig(**settings, overrides=overrides, drops=[parse_drop(d) for d in args.drop_node])
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    return rc, cfg


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_BAD_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "validate":
        try:
            data = read_config_file(args.config)
        except ConfigError as exc:
            print(f"invalid: {exc}")
            return EXIT_BAD_CONFIG
        ok, lines = validate_report(data)
        print("\n".join(lines))
        return EXIT_OK if ok else EXIT_BAD_CONFIG
    try:
        rc, cfg = _run_config(args)
        return run(rc, cfg, smoother="sweep" if args.sweep else "joint")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    except (FloatingPointError, np.linalg.LinAlgError, RuntimeError, OSError) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
