"""``roadmcl`` command line: build-field, run, project, gen-scenario.

Exit status is 0 on success, 1 on a runtime failure and 2 when the input or
configuration is invalid. Every file written embeds (or sits next to a JSON
file that embeds) the configuration and seed that produced it.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from roadmcl import __version__
from roadmcl.distance_field import (
    DEFAULT_CELL_BUDGET,
    DEFAULT_CELL_SIZE,
    DistanceField,
    build_distance_field,
    field_bounds,
    load_field,
    save_field,
)
from roadmcl.errors import ConfigError, EmptyMapError, MapStructureError, OsmParseError, ResourceError, RoadMCLError
from roadmcl.map_model import RoadGraph, load_osm
from roadmcl.measurement_model import KIND_LABELS, KINDS, DistanceFunctionSpec
from roadmcl.motion_model import MotionNoise, Pose
from roadmcl.particle_filter import ESTIMATORS, InitSpec, Replay, Trace, run_scenario
from roadmcl.range_projection import SensorFov, backproject_labels, flatten, project, read_cloud, read_pgm, write_pgm_triplet
from roadmcl.scenario_sim import ScenarioConfig, build_scenario, load_replay, save_scenario
from roadmcl.scenario_sim import write_cloud_csv as write_segmented_csv

log = logging.getLogger("roadmcl")

EXIT_OK, EXIT_RUNTIME, EXIT_INVALID = 0, 1, 2
TRACE_COLUMNS = ("step", "est_e", "est_n", "est_theta", "gt_e", "gt_n", "gt_theta", "error_m", "spread_m", "resampled")


# --- configuration ----------------------------------------------------------


def _sub(d: dict, key: str) -> dict:
    v = d.get(key, {})
    if v is None:
        return {}
    if not isinstance(v, dict):
        raise ConfigError(key, "must be an object")
    return v


def _reject_unknown(d: dict, known: set[str], prefix: str) -> None:
    for k in sorted(set(d) - known):
        raise ConfigError(f"{prefix}{k}", "unknown field")


def _number(d: dict, key: str, default, prefix: str, kind=float):
    v = d.get(key, default)
    if v is None:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(prefix + key, f"must be a number, got {v!r}")
    if kind is int and v != int(v):
        raise ConfigError(prefix + key, f"must be an integer, got {v!r}")
    return kind(v)


@dataclass(frozen=True)
class RunConfig:
    """Parsed ``run`` configuration. Relative paths resolve against ``base_dir``."""

    map: Path
    scenario_dir: Path | None
    scenario: ScenarioConfig | None
    field: Path | None
    cell_size: float
    field_margin: float
    init: InitSpec
    kinds: tuple[str, ...]
    spec_params: dict
    noise: MotionNoise
    resample_interval: int
    voxel: float | None
    estimator: str
    spread_threshold: float
    hold_steps: int
    seed: int
    workers: int
    output_dir: Path
    raw: dict = field(repr=False, default_factory=dict)

    KEYS = {
        "map", "field", "cell_size", "field_margin", "scenario", "init", "distance_function",
        "motion_noise", "resample_interval", "voxel", "estimator", "convergence", "seed",
        "workers", "output_dir",
    }

    @classmethod
    def from_dict(cls, d: dict, base_dir: str | Path = ".") -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config", "must be a JSON object")
        base = Path(base_dir)
        _reject_unknown(d, cls.KEYS, "")

        def path(key, value):
            if not isinstance(value, str) or not value:
                raise ConfigError(key, "must be a non-empty path string")
            return base / value

        if "map" not in d:
            raise ConfigError("map", "required")
        seed = _number(d, "seed", 0, "", int)
        if seed < 0:
            raise ConfigError("seed", "must be non-negative")

        sc = d.get("scenario")
        if not isinstance(sc, dict):
            raise ConfigError("scenario", "must be an object with 'dir' or 'generate'")
        _reject_unknown(sc, {"dir", "generate"}, "scenario.")
        if ("dir" in sc) == ("generate" in sc):
            raise ConfigError("scenario", "give exactly one of 'dir' or 'generate'")
        scenario_dir, scenario = None, None
        if "dir" in sc:
            scenario_dir = path("scenario.dir", sc["dir"])
        else:
            gen = sc["generate"]
            if not isinstance(gen, dict):
                raise ConfigError("scenario.generate", "must be an object")
            try:
                scenario = ScenarioConfig.from_dict({"seed": seed, **gen})
            except ConfigError as exc:
                raise ConfigError(f"scenario.generate.{exc.field}", str(exc).split(": ", 1)[-1]) from None

        init_d = _sub(d, "init")
        _reject_unknown(init_d, {"mode", "count", "radius", "center", "rect"}, "init.")
        mode = init_d.get("mode", "tracking")
        if mode not in ("tracking", "global"):
            raise ConfigError("init.mode", f"must be 'tracking' or 'global', got {mode!r}")
        count = _number(init_d, "count", 10_000 if mode == "tracking" else 100_000, "init.", int)
        if count <= 0:
            raise ConfigError("init.count", "must be positive")
        radius = _number(init_d, "radius", 200.0, "init.")
        if not radius > 0:
            raise ConfigError("init.radius", "must be positive")
        center = init_d.get("center")
        if center is not None:
            if not (isinstance(center, list) and len(center) == 3):
                raise ConfigError("init.center", "must be [e, n, theta]")
            center = Pose(*map(float, center))
        rect = init_d.get("rect")
        if rect is not None:
            if not (isinstance(rect, list) and len(rect) == 4):
                raise ConfigError("init.rect", "must be [min_e, min_n, max_e, max_n]")
            rect = tuple(map(float, rect))
            if not (rect[2] > rect[0] and rect[3] > rect[1]):
                raise ConfigError("init.rect", "rectangle is degenerate")
        init = InitSpec(mode, count, center, radius, rect)

        df = _sub(d, "distance_function")
        _reject_unknown(df, {"kind", "kinds", "sigma", "tau", "d_max", "epsilon"}, "distance_function.")
        if "kind" in df and "kinds" in df:
            raise ConfigError("distance_function", "give 'kind' or 'kinds', not both")
        kinds = df.get("kinds", [df.get("kind", "gaussian")])
        if kinds == "all":
            kinds = list(KINDS)
        if not isinstance(kinds, list) or not kinds:
            raise ConfigError("distance_function.kinds", "must be a non-empty list or 'all'")
        for k in kinds:
            if k not in KINDS:
                raise ConfigError("distance_function.kind", f"unknown kind {k!r}; expected one of {KINDS}")
        params = {}
        for key in ("sigma", "tau", "d_max", "epsilon"):
            if key in df:
                params[key] = _number(df, key, None, "distance_function.")
        try:
            DistanceFunctionSpec(kinds[0], **params)
        except ValueError as exc:
            raise ConfigError("distance_function", str(exc)) from None

        mn = _sub(d, "motion_noise")
        _reject_unknown(mn, {"sigma_pos", "sigma_theta_deg"}, "motion_noise.")
        sp = _number(mn, "sigma_pos", 0.1, "motion_noise.")
        st = _number(mn, "sigma_theta_deg", 3.0, "motion_noise.")
        if sp < 0 or st < 0:
            raise ConfigError("motion_noise", "standard deviations must be non-negative")
        noise = MotionNoise(sp, math.radians(st))

        interval = _number(d, "resample_interval", 20, "", int)
        if interval < 1:
            raise ConfigError("resample_interval", "must be at least 1")
        voxel = _number(d, "voxel", 2.0, "")
        if voxel is not None and not voxel > 0:
            raise ConfigError("voxel", "must be positive or null")
        estimator = d.get("estimator", "weighted_mean")
        if estimator not in ESTIMATORS:
            raise ConfigError("estimator", f"must be one of {ESTIMATORS}")
        conv = _sub(d, "convergence")
        _reject_unknown(conv, {"spread_threshold", "hold_steps"}, "convergence.")
        thr = _number(conv, "spread_threshold", 25.0, "convergence.")
        hold = _number(conv, "hold_steps", 10, "convergence.", int)
        if not thr > 0 or hold < 1:
            raise ConfigError("convergence", "spread_threshold must be positive and hold_steps at least 1")
        workers = _number(d, "workers", 1, "", int)
        if workers < 1:
            raise ConfigError("workers", "must be at least 1")
        cell_size = _number(d, "cell_size", DEFAULT_CELL_SIZE, "")
        if not cell_size > 0:
            raise ConfigError("cell_size", "must be positive")
        margin = _number(d, "field_margin", 100.0, "")
        if margin < 0:
            raise ConfigError("field_margin", "must be non-negative")

        return cls(
            map=path("map", d["map"]),
            scenario_dir=scenario_dir,
            scenario=scenario,
            field=path("field", d["field"]) if d.get("field") else None,
            cell_size=cell_size,
            field_margin=margin,
            init=init,
            kinds=tuple(kinds),
            spec_params=params,
            noise=noise,
            resample_interval=interval,
            voxel=voxel,
            estimator=estimator,
            spread_threshold=thr,
            hold_steps=hold,
            seed=seed,
            workers=workers,
            output_dir=path("output_dir", d.get("output_dir", "out")),
            raw=d,
        )

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        try:
            d = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(d, path.parent)

    def spec(self, kind: str) -> DistanceFunctionSpec:
        return DistanceFunctionSpec(kind, **self.spec_params)

    def echo(self) -> dict:
        """Effective settings, defaults filled in, for embedding in outputs."""
        return {
            "map": str(self.raw.get("map")),
            "field": self.raw.get("field"),
            "cell_size": self.cell_size,
            "field_margin": self.field_margin,
            "scenario": ({"dir": self.raw["scenario"]["dir"]} if self.scenario_dir is not None
                         else {"generate": self.scenario.to_dict()}),
            "init": {"mode": self.init.mode, "count": self.init.count, "radius": self.init.radius,
                     "center": None if self.init.center is None else list(self.init.center),
                     "rect": None if self.init.rect is None else list(self.init.rect)},
            "distance_function": {"kinds": list(self.kinds),
                                  **{k: v for k, v in asdict(self.spec(self.kinds[0])).items() if k != "kind"}},
            "motion_noise": {"sigma_pos": self.noise.sigma_pos,
                             "sigma_theta_deg": math.degrees(self.noise.sigma_theta)},
            "resample_interval": self.resample_interval,
            "voxel": self.voxel,
            "estimator": self.estimator,
            "convergence": {"spread_threshold": self.spread_threshold, "hold_steps": self.hold_steps},
            "seed": self.seed,
        }


# --- shared steps ---------------------------------------------------------


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def obtain_field(cfg: RunConfig, g: RoadGraph) -> DistanceField:
    if cfg.field is not None and cfg.field.exists():
        return load_field(cfg.field)
    return build_distance_field(g, field_bounds(g, cfg.field_margin), cfg.cell_size, workers=cfg.workers)


def obtain_replay(cfg: RunConfig, g: RoadGraph) -> Replay:
    if cfg.scenario_dir is not None:
        if not (cfg.scenario_dir / "scenario.json").exists():
            raise ConfigError("scenario.dir", f"{cfg.scenario_dir} is not a scenario directory")
        return load_replay(cfg.scenario_dir)
    return build_scenario(g, cfg.scenario).to_replay()


def run_kind(cfg: RunConfig, g: RoadGraph, f: DistanceField, replay: Replay, kind: str, workers: int | None = None) -> Trace:
    return run_scenario(
        g, f, replay, cfg.spec(kind), cfg.init,
        noise=cfg.noise, resample_interval=cfg.resample_interval, voxel=cfg.voxel,
        seed=cfg.seed, workers=cfg.workers if workers is None else workers, estimator=cfg.estimator,
        spread_threshold=cfg.spread_threshold, hold_steps=cfg.hold_steps,
    )


def write_trace_csv(tr: Trace, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for k in range(len(tr.step)):
            w.writerow([int(tr.step[k]), *(repr(float(v)) for v in tr.estimate[k]),
                        *(repr(float(v)) for v in tr.gt[k]), repr(float(tr.error[k])),
                        repr(float(tr.spread[k])), int(tr.resampled[k])])


def format_table(rows: list[tuple[str, dict]]) -> str:
    """One line per distance function: mean error and convergence step."""
    lines = [f"{'Distance function':<18}{'Mean Error (meters)':>21}{'Convergence (steps)':>21}"]
    for kind, s in rows:
        err = s["mean_error_post_convergence"]
        conv = s["convergence_step"]
        lines.append(f"{KIND_LABELS[kind]:<18}{'n/a' if err is None else f'{err:.2f}':>21}"
                     f"{'n/a' if conv is None else conv:>21}")
    return "\n".join(lines) + "\n"


# --- commands -------------------------------------------------------------


def cmd_build_field(args) -> int:
    map_path = Path(args.map)
    g = load_osm(map_path)
    bounds = tuple(args.bounds) if args.bounds else field_bounds(g, args.margin)
    t0 = time.perf_counter()
    f = build_distance_field(g, bounds, args.cell_size, args.cell_budget, workers=args.workers)
    elapsed = time.perf_counter() - t0
    out = Path(args.out)
    save_field(f, out)
    sidecar = {
        "tool": f"roadmcl {__version__}",
        "map": str(args.map),
        "map_sha256": _sha256(map_path),
        "origin_geo": list(g.origin),
        "bounds": list(map(float, bounds)),
        "cell_size": f.cell_size,
        "width": f.width,
        "height": f.height,
        "seed": None,
    }
    _write_json(out.with_name(out.name + ".json"), sidecar)
    print(f"{out}: {f.width} x {f.height} cells of {f.cell_size:g} m, built in {elapsed:.2f} s")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = RunConfig.load(args.config)
    if args.workers is not None:
        cfg = RunConfig.from_dict({**cfg.raw, "workers": args.workers}, Path(args.config).parent)
    if args.output_dir is not None:
        cfg = RunConfig.from_dict({**cfg.raw, "output_dir": str(Path(args.output_dir).resolve())},
                                  Path(args.config).parent)
    g = load_osm(cfg.map)
    f = obtain_field(cfg, g)
    replay = obtain_replay(cfg, g)
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    echo = cfg.echo()
    rows = []
    sweep = len(cfg.kinds) > 1
    for kind in cfg.kinds:
        t0 = time.perf_counter()
        tr = run_kind(cfg, g, f, replay, kind)
        log.info("%s: %d steps in %.1f s", kind, len(replay), time.perf_counter() - t0)
        stem = f"_{kind}" if sweep else ""
        write_trace_csv(tr, out / f"trace{stem}.csv")
        summary = {"kind": kind, "trace": f"trace{stem}.csv", **tr.summary(), "seed": cfg.seed, "config": echo}
        _write_json(out / f"summary{stem}.json", summary)
        rows.append((kind, summary))
    table = format_table(rows)
    if sweep:
        _write_json(out / "summary.json", {
            "runs": {k: {key: s[key] for key in ("convergence_step", "mean_error_post_convergence",
                                                  "convergence_step_error_based", "final_error")}
                     for k, s in rows},
            "seed": cfg.seed, "config": echo,
        })
        (out / "table.txt").write_text(f"# seed {cfg.seed}, init {cfg.init.mode}\n" + table)
    sys.stdout.write(table)
    return EXIT_OK


def _load_fov(path: str | None) -> SensorFov:
    if path is None:
        return SensorFov()
    d = json.loads(Path(path).read_text())
    known = {f.name for f in fields(SensorFov)}
    for k in sorted(set(d) - known):
        raise ConfigError(f"fov.{k}", "unknown field")
    try:
        return SensorFov(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError("fov", str(exc)) from None


def cmd_project(args) -> int:
    fov = _load_fov(args.fov)
    cloud = read_cloud(args.cloud)
    img = project(cloud, fov)
    prefix = Path(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    meta = {"cloud": str(args.cloud), "cloud_sha256": _sha256(Path(args.cloud)), "seed": None}
    write_pgm_triplet(img, prefix, meta)
    report = {
        "points": int(cloud.shape[0]),
        "occupancy": img.occupancy,
        "occupancy_fraction": img.occupancy / (fov.rows * fov.cols),
        "fov": fov.to_dict(),
        **meta,
    }
    if args.mask:
        mask, _ = read_pgm(args.mask)
        labels = backproject_labels(img, mask, cloud.shape[0])
        seg = prefix.with_name(prefix.name + "_segmented.csv")
        write_segmented_csv(flatten(cloud, labels), seg)
        report["mask"] = str(args.mask)
        report["road_points"] = int(labels.sum())
    _write_json(prefix.with_name(prefix.name + "_report.json"), report)
    print(f"occupancy {img.occupancy} of {fov.rows * fov.cols} pixels ({cloud.shape[0]} points)")
    return EXIT_OK


def cmd_gen_scenario(args) -> int:
    d = {}
    if args.config:
        d = json.loads(Path(args.config).read_text())
        if not isinstance(d, dict):
            raise ConfigError("config", "must be a JSON object")
    if args.seed is not None:
        d["seed"] = args.seed
    cfg = ScenarioConfig.from_dict(d)
    g = load_osm(args.map)
    sc = build_scenario(g, cfg)
    save_scenario(sc, args.out, {"map": str(args.map), "map_sha256": _sha256(Path(args.map))})
    print(f"{args.out}: {len(sc.truth)} steps, {sc.truth.arc_length():.0f} m")
    return EXIT_OK


# --- entry point ----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="roadmcl", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"roadmcl {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build-field", help="precompute the distance field of a map")
    b.add_argument("map")
    b.add_argument("--out", required=True, help="MCDF output path; a .json sidecar is written next to it")
    b.add_argument("--cell-size", type=float, default=DEFAULT_CELL_SIZE)
    b.add_argument("--margin", type=float, default=100.0, help="padding around the map extent (m)")
    b.add_argument("--bounds", type=float, nargs=4, metavar=("MIN_E", "MIN_N", "MAX_E", "MAX_N"))
    b.add_argument("--cell-budget", type=int, default=DEFAULT_CELL_BUDGET)
    b.add_argument("--workers", type=int, default=1)
    b.set_defaults(func=cmd_build_field)

    r = sub.add_parser("run", help="run the filter over a scenario")
    r.add_argument("config")
    r.add_argument("--workers", type=int)
    r.add_argument("--output-dir")
    r.set_defaults(func=cmd_run)

    j = sub.add_parser("project", help="project a 3D cloud to range images")
    j.add_argument("cloud", help="CSV (x,y,z,intensity,reflectivity) or binary cloud")
    j.add_argument("--out", required=True, help="output prefix for the PGM triplet and report")
    j.add_argument("--fov", help="JSON file overriding the sensor geometry")
    j.add_argument("--mask", help="PGM road mask to back-project onto the points")
    j.set_defaults(func=cmd_project)

    s = sub.add_parser("gen-scenario", help="simulate a drive and write a replay directory")
    s.add_argument("map")
    s.add_argument("--out", required=True)
    s.add_argument("--config", help="JSON file of scenario settings")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_gen_scenario)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"roadmcl: invalid config: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (OsmParseError, MapStructureError, EmptyMapError, ResourceError, ValueError, FileNotFoundError) as exc:
        print(f"roadmcl: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (RoadMCLError, OSError, RuntimeError) as exc:
        print(f"roadmcl: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
