"""Command-line driver: ``ellreg run`` and ``ellreg sweep``.

Configs are flat ``key = value`` files with dotted section prefixes; see the
README for the schema.  Every run writes CSV files plus a ``meta.txt`` that
holds the canonical config, so any output directory can be re-run.
"""
from __future__ import annotations

import argparse
import hashlib
import math
import os
import sys
from dataclasses import dataclass
from typing import Any, Callable

import numpy as np

from . import coeff, fundsol, functionals as fn, partitions, rescale, solver
from .coeff import EllipticityError
from .io import FormatError, fmt, write_csv, write_scalar_binary, write_scalar_csv
from .mesh import Grid, ScalarField
from .partitions import BracketError, OptimizerStall
from .solver import AssemblyError, ConvergenceError

EXPERIMENTS = ("solve", "acf", "weighted", "decay", "partition", "fundsol", "homogenize", "growth", "probe")
NEEDS_GRID = set(EXPERIMENTS) - {"partition"}


class ConfigError(ValueError):
    pass


def _floats(s: str) -> tuple:
    return tuple(float(t) for t in s.split(",") if t.strip())


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


# key -> (parser, default); None default means "experiment decides"
SCHEMA: dict[str, tuple[Callable, Any]] = {
    "experiment": (str, None),
    "grid.n": (int, 2),
    "grid.m": (int, 64),
    "field.kind": (str, "constant"),
    "field.lambda": (float, 1.0),
    "field.L": (float, 1.0),
    "field.eps": (float, None),
    "field.axis": (int, 0),
    "field.angle": (str, "radial"),
    "field.file": (str, None),
    "solver.tol": (float, 1e-10),
    "boundary.kind": (str, "auto"),
    "boundary.value": (float, 1.0),
    "radii.values": (_floats, None),
    "acf.phases": (int, 2),
    "acf.source": (str, "exact"),
    "growth.phases": (int, 2),
    "growth.source": (str, "exact"),
    "fundsol.closure": (str, "zero"),
    "fundsol.annulus": (_floats, (0.15, 0.35)),
    "homogenize.eps": (_floats, (0.25, 0.125, 0.0625)),
    "partition.n": (int, 2),
    "partition.m": (int, 2),
    "probe.profile": (str, "auto"),
    "check.samples": (int, 10_000),
    "output.field": (_bool, False),
}

DEFAULT_RADII = {
    "acf": tuple(round(0.1 * k, 10) for k in range(2, 9)),
    "decay": tuple(round(0.1 * k, 10) for k in range(2, 9)),
    "weighted": (0.25, 0.3, 0.35, 0.4, 0.45, 0.5),
    "growth": tuple(2.0 ** -j for j in range(5, 0, -1)),
    "probe": rescale.PROBE_WINDOW,
}


@dataclass
class ExperimentConfig:
    values: dict
    text: str  # canonical form, used for the hash and meta.txt
    explicit: frozenset = frozenset()  # keys given in the file

    def __getitem__(self, key):
        return self.values[key]

    @property
    def experiment(self) -> str:
        return self.values["experiment"]

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.text.encode()).hexdigest()


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        if "=" not in s:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line.strip()!r}")
        key, val = (t.strip() for t in s.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        raw[key] = val
    return raw


def _canonical(raw: dict[str, str]) -> str:
    return "".join(f"{k} = {raw[k]}\n" for k in sorted(raw))


def build_config(raw: dict[str, str]) -> ExperimentConfig:
    vals = {}
    for key, (parse, default) in SCHEMA.items():
        if key in raw:
            try:
                vals[key] = parse(raw[key])
            except ValueError as exc:
                raise ConfigError(f"{key}: cannot parse {raw[key]!r} ({exc})") from None
        else:
            vals[key] = default
    exp = vals["experiment"]
    if exp is None:
        raise ConfigError("experiment: missing")
    if exp not in EXPERIMENTS:
        raise ConfigError(f"experiment: unknown experiment {exp!r} (choose from {', '.join(EXPERIMENTS)})")
    if exp in NEEDS_GRID:
        m = vals["grid.m"]
        if m < 16 or m > 512 or m & (m - 1):
            raise ConfigError(f"grid.m: must be a power of two between 16 and 512, got {m}")
        if vals["grid.n"] not in (2, 3):
            raise ConfigError(f"grid.n: must be 2 or 3, got {vals['grid.n']}")
        if not vals["solver.tol"] > 0:
            raise ConfigError("solver.tol: must be positive")
        if vals["field.kind"] not in coeff.KINDS:
            raise ConfigError(f"field.kind: unknown kind {vals['field.kind']!r}")
    if vals["radii.values"] is None:
        vals["radii.values"] = DEFAULT_RADII.get(exp, ())
    return ExperimentConfig(vals, _canonical(raw), frozenset(raw))


def load_config(path: str) -> tuple[dict[str, str], ExperimentConfig]:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    raw = parse_config_text(text, path)
    return raw, build_config(raw)


# -- experiment helpers ------------------------------------------------------------

def _field(cfg: ExperimentConfig):
    flat = {k: str(v) for k, v in cfg.values.items() if k.startswith("field.") and v is not None}
    try:
        return coeff.field_from_config(flat, cfg["grid.n"])
    except KeyError as exc:
        raise ConfigError(f"{exc.args[0]}: required for field.kind = {cfg['field.kind']}") from None


def _boundary(cfg: ExperimentConfig, field, default: str):
    kind = cfg["boundary.kind"]
    if kind == "auto":
        kind = default
    if kind == "exact":
        if field.kind != "meyers":
            raise ConfigError("boundary.kind: 'exact' needs field.kind = meyers")
        return solver.BoundaryData.from_exact(lambda x: solver.meyers_solution(field.lam, field.upper, x)), True
    if kind == "linear":
        return solver.BoundaryData(lambda x: x[..., 0]), False
    if kind == "constant":
        return solver.BoundaryData.constant(cfg["boundary.value"]), False
    raise ConfigError(f"boundary.kind: unknown kind {kind!r}")


def _need(cond: bool, msg: str):
    if not cond:
        raise ConfigError(msg)


class Runner:
    def __init__(self, cfg: ExperimentConfig, out: str, threads: int, seed: int, quiet: bool):
        self.cfg, self.out, self.threads, self.seed, self.quiet = cfg, out, threads, seed, quiet
        self.grid = Grid(cfg["grid.n"], cfg["grid.m"]) if cfg.experiment in NEEDS_GRID else None

    def say(self, msg: str):
        if not self.quiet:
            print(msg)

    def path(self, name: str) -> str:
        return os.path.join(self.out, name)

    def checked_field(self):
        field = _field(self.cfg)
        rep = coeff.verify_ellipticity(field, self.cfg["check.samples"], seed=self.seed)
        if not rep.ok:
            raise EllipticityError(
                f"field: eigenvalues [{rep.min_eig:.6g}, {rep.max_eig:.6g}] leave the declared bounds")
        return field

    def fit_radii(self):
        """Configured radii; the default dyadic window loses balls under 2h."""
        radii = self.cfg["radii.values"]
        if "radii.values" in self.cfg.explicit:
            return radii
        return fn.resolved_window(self.grid, radii)

    def solve(self, field, g):
        u, report = solver.solve_dirichlet(field, self.grid, g, tol=self.cfg["solver.tol"], workers=self.threads)
        self.say(f"solve: {report.csv_row()}")
        return u, report

    def trace_csv(self, name: str, traces):
        rows = [r for t in traces for r in t.csv_rows()]
        write_csv(self.path(name), "radius,value,label", rows)

    def exponent_csv(self, name: str, rep, extra: str = ""):
        header = "exponent,residual,r_min,r_max" + (",verdict" if extra else "")
        write_csv(self.path(name), header, [rep.csv_row() + ("," + extra if extra else "")])

    # -- experiments --------------------------------------------------------------

    def run_solve(self):
        field = self.checked_field()
        g, exact = _boundary(self.cfg, field, "exact" if field.kind == "meyers" else "linear")
        u, report = self.solve(field, g)
        err = solver.l2_error(u, lambda x: solver.meyers_solution(field.lam, field.upper, x)) if exact else math.nan
        write_csv(self.path("solve.csv"), "iters,residual,l2_error",
                  [f"{report.iterations},{fmt(report.residual)},{fmt(err)}"])
        if self.cfg["output.field"]:
            write_scalar_csv(self.path("solution.csv"), u)
            write_scalar_binary(self.path("solution.bin"), u)
        return {"l2_error": err}

    def _sector_phases(self, field, m: int, source: str):
        lam, big = field.lam, field.upper
        if source == "exact":
            return solver.sector_solutions(lam, big, m, self.grid), True
        _need(source == "solved", f"source: unknown value {source!r}")
        _need(m % 2 == 0, "acf.phases: the solved variant needs an even number of phases")
        beta = 0.5 * m * math.sqrt(lam / big)

        def signed(x):
            r = np.hypot(x[..., 0], x[..., 1])
            th = np.arctan2(x[..., 1], x[..., 0])
            return r ** beta * np.sin(0.5 * m * th)

        u, _ = self.solve(field, solver.BoundaryData.from_exact(signed))
        th = np.mod(np.arctan2(self.grid.node_coords()[..., 1], self.grid.node_coords()[..., 0]), 2 * np.pi)
        sector = np.minimum(np.floor(th * m / (2 * np.pi)).astype(int), m - 1)
        phases = []
        for i in range(m):
            part = np.maximum(u.values if i % 2 == 0 else -u.values, 0.0)
            phases.append(u.with_values(np.where(sector == i, part, 0.0), f"phase-{i + 1}"))
        return phases, False

    def run_acf(self):
        _need(self.cfg["grid.n"] == 2, "grid.n: acf runs in the plane")
        field = self.checked_field()
        _need(field.kind == "meyers", "field.kind: acf needs the meyers field")
        m = self.cfg["acf.phases"]
        _need(m >= 2, "acf.phases: need at least two phases")
        phases, exact = self._sector_phases(field, m, self.cfg["acf.source"])
        tails = solver.sector_origin_energies(field.lam, field.upper, m, self.grid.h) if exact else None
        trace = fn.acf_product(phases, field, self.cfg["radii.values"], origin_energies=tails)
        mono = fn.check_monotone(trace, 0.02)
        self.trace_csv("phi.csv", [trace])
        self.say(f"acf: monotone={mono.is_monotone} worst={mono.worst_violation:.3e}")
        return {"phi_last": trace.values[-1], "monotone": float(mono.is_monotone)}

    def run_growth(self):
        _need(self.cfg["grid.n"] == 2, "grid.n: growth runs in the plane")
        field = self.checked_field()
        _need(field.kind == "meyers", "field.kind: growth needs the meyers field")
        m = self.cfg["growth.phases"]
        _need(m >= 2, "growth.phases: need at least two phases")
        phases, _ = self._sector_phases(field, m, self.cfg["growth.source"])
        total = phases[0].with_values(sum(p.values for p in phases), "solution")
        trace = fn.supnorm_trace(total, self.fit_radii())
        rep = fn.growth_exponent(trace)
        self.trace_csv("growth.csv", [trace])
        self.exponent_csv("exponent.csv", rep)
        return {"exponent": rep.exponent}

    def run_decay(self):
        _need(self.cfg["grid.n"] == 3, "grid.n: decay runs in three dimensions")
        field = self.checked_field()
        u, _ = self.solve(field, solver.BoundaryData(lambda x: x[..., 2]))
        traces = []
        worst = 0.0
        for i, p in enumerate((u.positive_part("phase-1"), u.negative_part("phase-2"))):
            tr = fn.decay_trace(p, field, self.cfg["radii.values"])
            tr = fn.RadialTrace(tr.radii, tr.values, f"phase-{i + 1}")
            worst = min(worst, fn.check_monotone(tr, 0.02).worst_violation)
            traces.append(tr)
        self.trace_csv("decay.csv", traces)
        return {"worst_violation": worst, "monotone": float(worst >= -0.02)}

    def run_weighted(self):
        _need(self.cfg["grid.n"] == 3, "grid.n: weighted runs in three dimensions")
        field = self.checked_field()
        g, _ = _boundary(self.cfg, field, "exact" if field.kind == "meyers" else "linear")
        u, report = self.solve(field, g)
        gamma = fundsol.compute_fundamental(field, self.grid, tol=self.cfg["solver.tol"], workers=self.threads)
        trace = fn.weighted_trace(u, field, gamma, self.cfg["radii.values"])
        rep = fn.holder_from_decay(trace)
        self.trace_csv("weighted.csv", [trace])
        self.exponent_csv("exponent.csv", rep)
        return {"alpha": rep.exponent}

    def run_fundsol(self):
        _need(self.cfg["grid.n"] == 3, "grid.n: fundsol runs in three dimensions")
        field = self.checked_field()
        closure = self.cfg["fundsol.closure"]
        _need(closure in ("zero", "free-space"), f"fundsol.closure: unknown closure {closure!r}")
        ann = self.cfg["fundsol.annulus"]
        _need(len(ann) == 2, "fundsol.annulus: need two radii")
        gamma = fundsol.compute_fundamental(field, self.grid, closure=closure, tol=self.cfg["solver.tol"],
                                            workers=self.threads)
        rep = fundsol.bounds_ratio(gamma, tuple(ann))
        write_csv(self.path("bounds.csv"), "C1,C2,r_in,r_out,m", [rep.csv_row()])
        if self.cfg["output.field"]:
            write_scalar_binary(self.path("gamma.bin"), gamma.field)
        self.say(f"fundsol: C1={rep.c1:.6g} C2={rep.c2:.6g} flagged={gamma.flagged}")
        return {"ratio": rep.ratio}

    def run_homogenize(self):
        _need(self.cfg["grid.n"] == 2, "grid.n: homogenize runs in the plane")
        lam, big = self.cfg["field.lambda"], self.cfg["field.L"]
        axis = self.cfg["field.axis"]
        eps = self.cfg["homogenize.eps"]
        _need(len(eps) > 0, "homogenize.eps: empty list")
        g, _ = _boundary(self.cfg, coeff.constant(np.eye(2)), "linear")
        rep = rescale.gconv_experiment(lam, big, eps, g, self.grid, axis=axis, tol=self.cfg["solver.tol"],
                                       workers=self.threads)
        write_csv(self.path("homogenization.csv"), "eps,l2_distance", rep.csv_rows())
        t = rep.tensor.matrix
        write_csv(self.path("tensor.csv"), "a11,a12,a22", [f"{fmt(t[0, 0])},{fmt(t[0, 1])},{fmt(t[1, 1])}"])
        return {"final_distance": rep.distances[-1]}

    def run_probe(self):
        field = self.checked_field()
        profile = self.cfg["probe.profile"]
        if profile == "auto":
            profile = "angular" if field.kind == "meyers" else "linear"
        n = self.cfg["grid.n"]

        def angular(x):
            r = np.linalg.norm(x, axis=-1)
            return x[..., -1] / np.where(r > 0, r, 1.0)

        def sector4(x):
            q = np.sum(x * x, axis=-1)
            return 2 * x[..., 0] * x[..., 1] / np.where(q > 0, q, 1.0)

        profiles = {"angular": angular, "sector4": sector4, "linear": lambda x: x[..., 0]}
        _need(profile in profiles, f"probe.profile: unknown profile {profile!r}")
        _need(profile != "sector4" or n == 2, "probe.profile: sector4 is planar")
        rep = rescale.liouville_probe(field, profiles[profile], self.grid, self.fit_radii(),
                                      tol=self.cfg["solver.tol"])
        write_csv(self.path("probe.csv"), "scale,supnorm,theta", rep.csv_rows())
        self.exponent_csv("exponent.csv", rep.report, rep.verdict)
        self.say(f"probe: exponent={rep.report.exponent:.6g} verdict={rep.verdict}")
        return {"exponent": rep.report.exponent}

    def run_partition(self):
        n, m = self.cfg["partition.n"], self.cfg["partition.m"]
        res = partitions.optimize_partition(n, m)
        write_csv(self.path("partition.csv"), "m,value,parts", [res.csv_row()])
        self.say(f"partition: {res.csv_row()}")
        return {"value": res.value}

    def execute(self) -> dict:
        os.makedirs(self.out, exist_ok=True)
        result = getattr(self, f"run_{self.cfg.experiment}")()
        self.write_meta()
        return result

    def write_meta(self):
        cfg = self.cfg
        lines = [
            f"experiment = {cfg.experiment}",
            f"config_sha256 = {cfg.digest}",
            f"grid = n={cfg['grid.n']} m={cfg['grid.m']}" if self.grid else "grid = none",
            f"solver.tol = {fmt(cfg['solver.tol'])}",
            f"seed = {self.seed}",
            "",
            "# config (re-run with: ellreg run --config <this section saved to a file>)",
            cfg.text.rstrip("\n"),
        ]
        with open(self.path("meta.txt"), "w", newline="\n", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")


# -- entry points ------------------------------------------------------------------

NUMERICAL = (ConvergenceError, OptimizerStall, BracketError, FloatingPointError, np.linalg.LinAlgError)


def _dispatch(action: Callable[[], int]) -> int:
    try:
        return action()
    except NUMERICAL as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, EllipticityError, AssemblyError, FormatError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _out_dir(args) -> str:
    out = args.out or os.environ.get("ELLREG_OUT")
    if not out:
        raise ConfigError("no output directory: pass --out or set ELLREG_OUT")
    return out


def cmd_run(args) -> int:
    def action():
        _, cfg = load_config(args.config)
        Runner(cfg, _out_dir(args), args.threads, args.seed, args.quiet).execute()
        return 0
    return _dispatch(action)


def cmd_sweep(args) -> int:
    def action():
        raw, _ = load_config(args.config)
        if args.param not in SCHEMA or args.param == "experiment":
            raise ConfigError(f"{args.param}: not a sweepable config field")
        values = [v.strip() for v in args.values.split(",") if v.strip()]
        if not values:
            raise ConfigError(f"{args.param}: empty value list")
        out = _out_dir(args)
        cfgs = []
        for v in values:
            cfgs.append(build_config({**raw, args.param: v}))  # validate every point first
        rows, header = [], None
        for v, cfg in zip(values, cfgs):
            sub = os.path.join(out, f"{args.param}-{v}")
            result = Runner(cfg, sub, args.threads, args.seed, args.quiet).execute()
            header = header or list(result)
            rows.append(",".join([v] + [fmt(result[k]) for k in header]))
        write_csv(os.path.join(out, "sweep.csv"), ",".join([args.param] + header), rows)
        return 0
    return _dispatch(action)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ellreg", description="Regularity experiments for divergence-form equations.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="flat key = value config file")
    common.add_argument("--out", help="output directory (default: $ELLREG_OUT)")
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker threads")
    common.add_argument("--seed", type=int, default=0, help="seed for the ellipticity sampling check")
    common.add_argument("--quiet", action="store_true", help="suppress progress output")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", parents=[common], help="run one experiment")
    run.set_defaults(func=cmd_run)
    sw = sub.add_parser("sweep", parents=[common], help="run one experiment per parameter value")
    sw.add_argument("--param", required=True, help="config key to vary, e.g. grid.m")
    sw.add_argument("--values", required=True, help="comma-separated values")
    sw.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return 1
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
