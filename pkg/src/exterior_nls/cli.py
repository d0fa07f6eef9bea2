"""Command-line driver: configuration files, experiment pipeline, outputs.

Configuration is flat ``key = value`` text with dotted section keys, for
example::

    d = 2
    p = 5
    obstacle.kind = ball
    obstacle.radius = 1
    grid.h = 0.0625
    initial_data.kind = gaussian-bump
    initial_data.center = 2, 2

Lists are comma separated and ``none`` stands for an unset value.  A JSON
object (nested or with dotted keys) is accepted as well.  Every run writes
``series.csv``, ``verdict.json``, ``criteria.json`` and
``virial_report.json`` into the output directory; the environment variable
``EXTERIOR_NLS_OUTPUT`` overrides the directory named in the config.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import math
import os
import sys
import typing
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import criteria as crit
from . import evolution as evo
from . import field as fld
from . import virial as vir
from .errors import ExteriorNLSError, InvalidInputError
from .field import SymmetryClass
from .geometry import build_grid, make_obstacle
from .ground_state import solve_ground_state

logger = logging.getLogger(__name__)

OUTPUT_ENV = "EXTERIOR_NLS_OUTPUT"
OUTPUT_FILES = ("series.csv", "verdict.json", "criteria.json", "virial_report.json")
DATA_KINDS = ("gaussian-bump", "ring-bump", "incoming-ring", "pseudoconformal")
THEOREMS = (crit.THM_BALL, crit.THM_CONVEX, crit.THM_SYM, crit.THM_THRESHOLD)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2


class ConfigError(InvalidInputError):
    """The configuration text or values are invalid."""


# -- configuration -------------------------------------------------------------


@dataclass
class ObstacleConfig:
    kind: str = "ball"
    radius: float | None = 1.0
    semi_axes: tuple[float, ...] | None = None


@dataclass
class GridConfig:
    R_out: float = 8.0
    h: float = 0.0625
    annulus_width: float = 2.0


@dataclass
class TimeConfig:
    dt: float = 1e-3
    t_end: float = 0.5
    record_every: int = 10
    dt_min: float | None = None
    grad_factor: float = 10.0


@dataclass
class InitialDataConfig:
    kind: str = "gaussian-bump"
    amplitude: float = 1.0
    center: tuple[float, ...] | None = (2.0, 2.0)
    width: float = 0.5
    radius: float | None = None
    wavenumber: float = 0.0
    mode: int = 0
    clearance: tuple[float, ...] | None = None
    symmetry: str = "none"
    T: float | None = None
    t0: float = 0.0
    cutoff: tuple[float, ...] | None = None


@dataclass
class ExperimentConfig:
    d: int = 2
    p: float = 3.0
    obstacle: ObstacleConfig = field(default_factory=ObstacleConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    time: TimeConfig = field(default_factory=TimeConfig)
    initial_data: InitialDataConfig = field(default_factory=InitialDataConfig)
    ground_state_tol: float = 1e-14
    C: str = "auto"
    theorem: str | None = None
    output_dir: str = "output"
    seed: int = 0

    # -- serialisation -----------------------------------------------------

    def to_flat(self) -> dict:
        """Ordered ``dotted key -> value`` mapping."""
        return _flatten(self)

    def to_text(self) -> str:
        return "".join(f"{k} = {_format_value(v)}\n" for k, v in self.to_flat().items())

    def to_json(self) -> str:
        return json.dumps(self.to_flat(), indent=2) + "\n"

    @classmethod
    def from_flat(cls, flat: dict) -> "ExperimentConfig":
        cfg = cls()
        for key, raw in flat.items():
            _assign(cfg, key, raw)
        cfg.validate()
        return cfg

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        stripped = text.lstrip()
        if stripped.startswith("{"):
            try:
                data = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"bad JSON config: {exc}") from None
            return cls.from_flat(_flatten_json(data))
        flat = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            if key in flat:
                raise ConfigError(f"line {lineno}: duplicate key {key!r}")
            flat[key] = value
        return cls.from_flat(flat)

    @classmethod
    def load(cls, source: str) -> "ExperimentConfig":
        """Read a config file, or a canned config by name."""
        path = Path(source)
        if path.is_file():
            return cls.from_text(path.read_text())
        if source in canned_names():
            return cls.from_text(canned_text(source))
        raise ConfigError(f"no config file or canned config named {source!r}")

    # -- checks ------------------------------------------------------------

    def validate(self) -> None:
        def positive(name, value):
            if value is None or not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise ConfigError(f"{name} must be positive, got {value!r}")

        if self.d not in (2, 3):
            raise ConfigError(f"d must be 2 or 3, got {self.d}")
        if not self.p > 1:
            raise ConfigError(f"p must exceed 1, got {self.p}")
        ob = self.obstacle
        if ob.kind == "ball":
            positive("obstacle.radius", ob.radius)
        elif ob.kind == "ellipsoid":
            if ob.semi_axes is None or len(ob.semi_axes) != self.d:
                raise ConfigError(f"obstacle.semi_axes needs {self.d} entries")
            for a in ob.semi_axes:
                positive("obstacle.semi_axes", a)
        else:
            raise ConfigError(f"obstacle.kind must be ball or ellipsoid, got {ob.kind!r}")
        positive("grid.h", self.grid.h)
        positive("grid.R_out", self.grid.R_out)
        positive("grid.annulus_width", self.grid.annulus_width)
        if self.grid.annulus_width >= self.grid.R_out:
            raise ConfigError("grid.annulus_width must be smaller than grid.R_out")
        tm = self.time
        positive("time.dt", tm.dt)
        positive("time.t_end", tm.t_end)
        positive("time.record_every", tm.record_every)
        positive("time.grad_factor", tm.grad_factor)
        if tm.dt_min is not None:
            positive("time.dt_min", tm.dt_min)
        n = tm.t_end / tm.dt
        if abs(n - round(n)) > 1e-9 * n:
            raise ConfigError("time.t_end must be a multiple of time.dt")
        ic = self.initial_data
        if ic.kind not in DATA_KINDS:
            raise ConfigError(f"initial_data.kind must be one of {DATA_KINDS}, got {ic.kind!r}")
        positive("initial_data.width", ic.width)
        if not math.isfinite(ic.amplitude):
            raise ConfigError("initial_data.amplitude must be finite")
        if ic.kind == "gaussian-bump" and (ic.center is None or len(ic.center) != self.d):
            raise ConfigError(f"initial_data.center needs {self.d} entries")
        if ic.kind in ("ring-bump", "incoming-ring"):
            positive("initial_data.radius", ic.radius)
        if ic.kind == "pseudoconformal":
            positive("initial_data.T", ic.T)
            if ic.cutoff is None or len(ic.cutoff) != 2:
                raise ConfigError("initial_data.cutoff needs two radii")
            for r in ic.cutoff:
                positive("initial_data.cutoff", r)
        if ic.clearance is not None and len(ic.clearance) != 2:
            raise ConfigError("initial_data.clearance needs two radii")
        self.symmetry_class()
        if self.C != "auto":
            try:
                c = float(self.C)
            except ValueError:
                raise ConfigError(f"C must be 'auto' or a number, got {self.C!r}") from None
            positive("C", c)
        if self.theorem is not None and self.theorem not in THEOREMS:
            raise ConfigError(f"theorem must be one of {THEOREMS} or none, got {self.theorem!r}")
        positive("ground_state_tol", self.ground_state_tol)

    def symmetry_class(self) -> SymmetryClass | None:
        s = self.initial_data.symmetry.strip().lower()
        if s == "none":
            return None
        if s == "full":
            return SymmetryClass.full(self.d)
        try:
            axes = tuple(int(a) for a in s.replace(",", " ").split())
        except ValueError:
            raise ConfigError(f"initial_data.symmetry must be none, full or axis indices, got {s!r}") from None
        if not axes or any(not 0 <= a < self.d for a in axes):
            raise ConfigError(f"symmetry axes {axes} out of range for d={self.d}")
        return SymmetryClass(axes)

    def with_changes(self, **flat) -> "ExperimentConfig":
        """Copy with some dotted keys replaced (``grid__h=...`` style names)."""
        data = self.to_flat()
        for key, value in flat.items():
            data[key.replace("__", ".")] = value
        return ExperimentConfig.from_flat(data)


def _flatten(obj, prefix="") -> dict:
    out = {}
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        key = prefix + f.name
        if dataclasses.is_dataclass(value):
            out.update(_flatten(value, key + "."))
        else:
            out[key] = value
    return out


def _flatten_json(data, prefix="") -> dict:
    if not isinstance(data, dict):
        raise ConfigError("JSON config must be an object")
    out = {}
    for k, v in data.items():
        if isinstance(v, dict):
            out.update(_flatten_json(v, prefix + k + "."))
        else:
            out[prefix + k] = v
    return out


def _format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, (tuple, list)):
        return ", ".join(_format_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _convert(raw, hint, key):
    """Coerce a text or JSON value to the annotated field type."""
    args = typing.get_args(hint)
    optional = type(None) in args
    if optional:
        inner = [a for a in args if a is not type(None)]
        hint = inner[0]
        if raw is None or (isinstance(raw, str) and raw.strip().lower() == "none"):
            return None
    elif raw is None:
        raise ConfigError(f"{key} may not be none")
    origin = typing.get_origin(hint)
    try:
        if origin is tuple:
            items = raw.split(",") if isinstance(raw, str) else list(raw)
            return tuple(float(x) for x in items)
        if hint is bool:
            return raw if isinstance(raw, bool) else str(raw).strip().lower() in ("1", "true", "yes")
        if hint is int:
            if isinstance(raw, float) and not raw.is_integer():
                raise ValueError(raw)
            return int(raw) if not isinstance(raw, str) else int(raw.strip())
        if hint is float:
            return float(raw)
        if hint is str:
            return str(raw).strip()
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot read {raw!r} as {getattr(hint, '__name__', hint)}") from None
    raise ConfigError(f"{key}: unsupported type")


def _assign(cfg, key, raw):
    target = cfg
    parts = key.split(".")
    for part in parts[:-1]:
        sub = getattr(target, part, None)
        if not dataclasses.is_dataclass(sub):
            raise ConfigError(f"unknown config key {key!r}")
        target = sub
    name = parts[-1]
    hints = typing.get_type_hints(type(target))
    if name not in hints or dataclasses.is_dataclass(getattr(target, name)):
        raise ConfigError(f"unknown config key {key!r}")
    setattr(target, name, _convert(raw, hints[name], key))


def canned_names() -> list[str]:
    root = resources.files("exterior_nls") / "configs"
    return sorted(p.name[: -len(".cfg")] for p in root.iterdir() if p.name.endswith(".cfg"))


def canned_text(name: str) -> str:
    return (resources.files("exterior_nls") / "configs" / f"{name}.cfg").read_text()


# -- pipeline ------------------------------------------------------------------


def output_dir(config: ExperimentConfig, override=None) -> Path:
    return Path(override or os.environ.get(OUTPUT_ENV) or config.output_dir)


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default, allow_nan=True) + "\n"


def _write(path: Path, text: str):
    with open(path, "w", newline="") as fh:
        fh.write(text)


def build_obstacle(config: ExperimentConfig):
    ob = config.obstacle
    if ob.kind == "ball":
        return make_obstacle("ball", radius=ob.radius, dim=config.d)
    return make_obstacle("ellipsoid", semi_axes=ob.semi_axes)


def needs_profile(config: ExperimentConfig) -> bool:
    return config.theorem == crit.THM_THRESHOLD or config.initial_data.kind == "pseudoconformal"


def build_initial_data(config: ExperimentConfig, grid, profile=None):
    ic = config.initial_data
    sym = config.symmetry_class()
    if ic.kind == "gaussian-bump":
        u = fld.gaussian_bump(grid, ic.center, ic.width, ic.amplitude, clearance=ic.clearance)
    elif ic.kind == "ring-bump":
        u = fld.ring_bump(grid, ic.radius, ic.width, ic.amplitude, mode=ic.mode, clearance=ic.clearance)
    elif ic.kind == "incoming-ring":
        return fld.incoming_ring(grid, ic.radius, ic.width, ic.wavenumber, ic.amplitude, symmetry=sym)
    else:
        center = ic.center if ic.center is not None else (0.0,) * config.d
        u = fld.pseudoconformal_ansatz(grid, profile, ic.T, ic.t0, center, ic.cutoff)
        u = u.replace(values=ic.amplitude * u.values, time=0.0)
    if sym is not None:
        u = fld.symmetrize(u, sym)
    return u


def resolve_C(config: ExperimentConfig, grid) -> float:
    return vir.recommended_C(grid) if config.C == "auto" else float(config.C)


def evaluate_criteria(config: ExperimentConfig, u0, obstacle, profile=None):
    """Hypothesis report for the configured theorem, or None."""
    d, p = config.d, config.p
    if config.theorem is None:
        return None
    if config.theorem == crit.THM_BALL:
        return crit.check_thm_ball(u0, obstacle.radius if obstacle.kind == "ball" else obstacle.M, d, p)
    if config.theorem == crit.THM_CONVEX:
        return crit.check_thm_convex(u0, obstacle, d, p)
    if config.theorem == crit.THM_SYM:
        return crit.check_thm_sym(u0, config.symmetry_class(), d, p)
    return crit.check_threshold(u0, profile, d, p)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    series: evo.DiagnosticsSeries
    verdict: evo.BlowupVerdict
    criteria: dict
    virial: vir.VirialReport
    outputs: dict


def simulate(config: ExperimentConfig) -> ExperimentResult:
    """Run the pipeline in memory; nothing is written."""
    config.validate()
    np.random.seed(config.seed)
    profile = solve_ground_state(config.d, config.p, config.ground_state_tol) if needs_profile(config) else None
    obstacle = build_obstacle(config)
    grid = build_grid(obstacle, config.grid.R_out, config.grid.h)
    u0 = build_initial_data(config, grid, profile)
    C = resolve_C(config, grid)
    pre = evaluate_criteria(config, u0, obstacle, profile)

    tm = config.time
    series, verdict = evo.run(
        u0,
        tm.t_end,
        tm.dt,
        config.p,
        record_every=tm.record_every,
        dt_min=tm.dt_min,
        grad_factor=tm.grad_factor,
        C=C,
        annulus_width=config.grid.annulus_width,
    )
    sym = config.symmetry_class()
    symmetric = sym is not None and sym.is_full(config.d) and grid.reflection_invariant
    report = vir.verify_identities(series, obstacle, symmetric, field_snapshot=u0) if len(series) >= 3 else vir.VirialReport()

    crit_doc = {"theorem": config.theorem, "C": C, "pre_check": pre.to_dict() if pre is not None else None}
    if profile is not None and config.theorem == crit.THM_THRESHOLD:
        t_stop = verdict.t_detect if verdict.status == evo.BLOWUP_DETECTED else None
        trace = crit.threshold_trace(series, profile, t_stop)
        crit_doc["threshold_monitor"] = {
            "holds": bool(trace["holds"]),
            "first_failure": trace["first_failure"],
            "bound": trace["bound"],
            "rows": [[float(t), float(v)] for t, v in zip(trace["t"], trace["value"])],
        }
    outputs = {
        "series.csv": series.to_csv(),
        "verdict.json": dump_json(verdict.to_dict()),
        "criteria.json": dump_json(crit_doc),
        "virial_report.json": dump_json(report.to_dict()),
    }
    return ExperimentResult(config, series, verdict, crit_doc, report, outputs)


def write_outputs(outputs: dict, directory: Path) -> list[Path]:
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, text in outputs.items():
        path = directory / name
        _write(path, text)
        paths.append(path)
    return paths


def _error_record(stage: str, exc: BaseException) -> dict:
    return {"status": "error", "stage": stage, "type": type(exc).__name__, "message": str(exc)}


def run_experiment(config, out=None) -> int:
    """Run a config end to end and write the four output files.

    Returns the exit status.  An invalid config writes nothing; a failure
    later in the pipeline writes ``error.json`` next to the outputs.
    """
    try:
        if not isinstance(config, ExperimentConfig):
            config = ExperimentConfig.load(str(config))
        config.validate()
    except ExteriorNLSError as exc:
        _report_error(_error_record("config", exc))
        return EXIT_CONFIG
    directory = output_dir(config, out)
    try:
        result = simulate(config)
    except (ExteriorNLSError, ArithmeticError, ValueError) as exc:
        record = _error_record("simulate", exc)
        directory.mkdir(parents=True, exist_ok=True)
        _write(directory / "error.json", dump_json(record))
        _report_error(record)
        return EXIT_FAILURE
    write_outputs(result.outputs, directory)
    print(dump_json({"status": "ok", "verdict": result.verdict.to_dict(), "outputs": sorted(result.outputs)}), end="")
    return EXIT_OK


def _report_error(record: dict):
    sys.stderr.write(dump_json(record))


# -- convergence study ---------------------------------------------------------


def convergence_study(config: ExperimentConfig, levels: int = 2) -> list[dict]:
    """Rerun a config with ``(h, dt)`` halved ``levels - 1`` times.

    Record spacing halves with ``dt``.  Each row holds the worst relative
    closure error of one identity at one resolution and the improvement
    factor over the previous resolution.
    """
    if levels < 2:
        raise InvalidInputError("a convergence study needs at least two levels")
    rows = []
    previous = {}
    for level in range(levels):
        scale = 2.0**-level
        cfg = config.with_changes(grid__h=config.grid.h * scale, time__dt=config.time.dt * scale)
        result = simulate(cfg)
        for rec in result.virial.records:
            factor = previous[rec.name] / rec.rel_residual if rec.name in previous and rec.rel_residual > 0 else None
            rows.append(
                {
                    "identity": rec.name,
                    "h": cfg.grid.h,
                    "dt": cfg.time.dt,
                    "rel_error": rec.rel_residual,
                    "abs_error": rec.abs_residual,
                    "factor": factor,
                    "status": result.verdict.status,
                    "t_final": result.verdict.t_final,
                }
            )
            previous[rec.name] = rec.rel_residual
    return rows


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    if not rows:
        return ""
    cols = list(rows[0])
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow(["" if r[c] is None else (format(r[c], ".17g") if isinstance(r[c], float) else r[c]) for c in cols])
    return buf.getvalue()


def closure_tables(series, obstacle, symmetric: bool) -> dict:
    """One CSV per time identity: ``t, finite_difference, formula``."""
    out = {}
    for name, (col, rhs_col, order) in vir.series_identities(series.d, obstacle, symmetric).items():
        c = series.closure(col, rhs_col, order=order)
        rows = [{"t": float(t), "finite_difference": float(a), "formula": float(b)} for t, a, b in zip(c["t"], c["fd"], c["rhs"])]
        out[f"closure_{name}.csv"] = rows_to_csv(rows)
    return out


# -- argument handling ---------------------------------------------------------


def _cmd_groundstate(args) -> int:
    profile = solve_ground_state(args.d, args.p, args.tol)
    doc = profile.to_dict()
    try:
        from .ground_state import threshold_quantities

        doc["threshold"] = threshold_quantities(profile)
    except InvalidInputError:
        doc["threshold"] = None
    print(dump_json(doc), end="")
    return EXIT_OK


def _load(args) -> ExperimentConfig:
    return ExperimentConfig.load(args.config)


def _cmd_simulate(args) -> int:
    return run_experiment(args.config, args.out)


def _cmd_criteria(args) -> int:
    config = _load(args)
    if args.theorem:
        config.theorem = args.theorem
        config.validate()
    if config.theorem is None:
        raise ConfigError("no theorem given (use --theorem or set theorem in the config)")
    profile = solve_ground_state(config.d, config.p, config.ground_state_tol) if needs_profile(config) else None
    obstacle = build_obstacle(config)
    grid = build_grid(obstacle, config.grid.R_out, config.grid.h)
    u0 = build_initial_data(config, grid, profile)
    report = evaluate_criteria(config, u0, obstacle, profile)
    print(dump_json(report.to_dict()), end="")
    return EXIT_OK


def _cmd_verify(args) -> int:
    config = _load(args)
    directory = output_dir(config, args.out)
    result = simulate(config)
    obstacle = build_obstacle(config)
    sym = config.symmetry_class()
    symmetric = sym is not None and sym.is_full(config.d) and obstacle.reflection_invariant
    files = {"virial_report.json": result.outputs["virial_report.json"]}
    files.update(closure_tables(result.series, obstacle, symmetric))
    write_outputs(files, directory)
    print(result.outputs["virial_report.json"], end="")
    return EXIT_OK


def _cmd_convergence(args) -> int:
    config = _load(args)
    directory = output_dir(config, args.out)
    rows = convergence_study(config, args.levels)
    write_outputs({"convergence.csv": rows_to_csv(rows), "convergence.json": dump_json(rows)}, directory)
    print(rows_to_csv(rows), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="exterior-nls", description="Focusing NLS outside an obstacle.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("groundstate", help="compute the ground state and print its constants as JSON")
    g.add_argument("--d", type=int, required=True)
    g.add_argument("--p", type=float, required=True)
    g.add_argument("--tol", type=float, default=1e-14)
    g.set_defaults(func=_cmd_groundstate)

    s = sub.add_parser("simulate", help="run a config and write series.csv and the JSON reports")
    s.add_argument("config", help="config file or canned config name")
    s.add_argument("--out", help="output directory (overrides config and environment)")
    s.set_defaults(func=_cmd_simulate)

    c = sub.add_parser("criteria", help="check theorem hypotheses on the initial data of a config")
    c.add_argument("config")
    c.add_argument("--theorem", choices=THEOREMS)
    c.set_defaults(func=_cmd_criteria)

    v = sub.add_parser("verify-identities", help="run a config and check every identity on the record")
    v.add_argument("config")
    v.add_argument("--out")
    v.set_defaults(func=_cmd_verify)

    k = sub.add_parser("convergence", help="rerun a config with (h, dt) halved and tabulate closure errors")
    k.add_argument("config")
    k.add_argument("--levels", type=int, default=2)
    k.add_argument("--out")
    k.set_defaults(func=_cmd_convergence)

    sub.add_parser("list-configs", help="print the names of the canned configs").set_defaults(
        func=lambda args: print("\n".join(canned_names())) or EXIT_OK
    )
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    if args.command == "simulate":
        return args.func(args)
    try:
        return args.func(args)
    except ConfigError as exc:
        _report_error(_error_record("config", exc))
        return EXIT_CONFIG
    except (ExteriorNLSError, ArithmeticError, ValueError) as exc:
        _report_error(_error_record(args.command, exc))
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
