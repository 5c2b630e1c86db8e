import dataclasses
import inspect
import math
import sys
from typing import Any, Dict

import fire
import pandas as pd
import parse
from fire.core import FireExit
from rich_logger import RichTableLogger

from neumannlab.asymptotics import case1_rate, case2_ratio, decay_ladder, identity_ladder, inverse_epsilon_schedule
from neumannlab.base import AssumptionViolation, ConfigError, DomainError, PreconditionError, SolverError, write_frame, write_json
from neumannlab.mismatch import scan
from neumannlab.nonlinearity import check_assumptions, parse_terms
from neumannlab.registry import get_family, get_instance, registry
from neumannlab.rstar import estimate_rstar, root_trace, trace_frame
from neumannlab.solver import GRADINGS, MeshSpec, Problem, solve_dirichlet

SUBCOMMANDS = ("solve", "scan", "asym", "rstar", "trace", "check")
ASYM_MODES = ("identity", "case1", "case2", "decay")
LAMBDA_SCHEDULES = ("inv-eps", "constant")

EXIT_OK = 0
EXIT_SOLVER = 2
EXIT_INVALID = 3
EXIT_ASSUMPTION = 4


def _as_float(value):
    if isinstance(value, bool):
        raise ValueError(f"expected a number, got {value!r}")
    return float(value)


def _as_int(value):
    if isinstance(value, bool):
        raise ValueError(f"expected an integer, got {value!r}")
    if isinstance(value, float):
        if not value.is_integer():
            raise ValueError(f"expected an integer, got {value!r}")
        return int(value)
    return int(str(value).strip())


def _as_str(value):
    if isinstance(value, (list, tuple)):
        return ",".join(str(item) for item in value)
    return str(value).strip()


def _as_float_list(value):
    if isinstance(value, (list, tuple)):
        items = list(value)
    else:
        items = [item for item in str(value).replace(" ", "").split(",") if item]
    if not items:
        raise ValueError("expected a comma separated list of numbers")
    return [_as_float(item) for item in items]


def _choice(options):
    def convert(value):
        value = _as_str(value)
        if value not in options:
            raise ValueError(f"expected one of {list(options)}, got {value!r}")
        return value

    return convert


def _terms(value):
    value = _as_str(value)
    parse_terms(value)
    return value


KEYS = {
    "dimension": _as_int,
    "epsilon": _as_float,
    "radius": _as_float,
    "f.family": _as_str,
    "f.c": _as_float,
    "f.p": _as_float,
    "f.terms": _terms,
    "g.family": _as_str,
    "g.c": _as_float,
    "g.a": _as_float,
    "g.b": _as_float,
    "g.sigma": _as_float,
    "g.delta": _as_float,
    "g.terms": _terms,
    "check.t_max": _as_float,
    "check.n_points": _as_int,
    "check.tail_T": _as_float,
    "mesh.n": _as_int,
    "mesh.grading": _choice(GRADINGS),
    "mesh.width": _as_float,
    "mesh.fraction": _as_float,
    "solver.tol": _as_float,
    "solve.lambda": _as_float,
    "scan.lambda_min": _as_float,
    "scan.lambda_max": _as_float,
    "scan.samples": _as_int,
    "scan.refine_tol": _as_float,
    "scan.workers": _as_int,
    "asym.mode": _choice(ASYM_MODES),
    "asym.eps_ladder": _as_float_list,
    "asym.lambda": _as_float,
    "asym.lambda_schedule": _choice(LAMBDA_SCHEDULES),
    "asym.M": _as_float,
    "rstar.r_min": _as_float,
    "rstar.r_max": _as_float,
    "rstar.bisect_tol": _as_float,
    "rstar.r_ladder": _as_float_list,
}

DEFAULTS = {
    "check.t_max": 50.,
    "check.n_points": 2001,
    "mesh.n": 512,
    "mesh.grading": "layer",
    "mesh.fraction": 0.5,
    "solver.tol": 1e-10,
    "scan.lambda_min": -10.,
    "scan.lambda_max": 10.,
    "scan.samples": 201,
    "scan.refine_tol": 1e-8,
    "scan.workers": 1,
    "asym.lambda_schedule": "inv-eps",
    "rstar.r_min": 0.5,
    "rstar.r_max": 20.,
}

REQUIRED = {
    "solve": ("dimension", "f.family", "solve.lambda"),
    "scan": ("dimension", "f.family", "g.family"),
    "asym": ("dimension", "f.family", "asym.mode", "asym.eps_ladder"),
    "rstar": ("dimension", "f.family", "g.family"),
    "trace": ("dimension", "f.family", "g.family", "rstar.r_ladder"),
    "check": ("f.family", "g.family"),
}

DEFAULT_OUTPUTS = {
    "solve": ("sol.csv", None),
    "scan": ("curve.csv", "report.json"),
    "asym": ("rates.csv", None),
    "rstar": ("rstar.json", None),
    "trace": ("trace.csv", None),
    "check": ("check.json", None),
}

FLAG_ALIASES = {
    "grading": "mesh.grading",
    "tol": "solver.tol",
    "lambda_min": "scan.lambda_min",
    "lambda_max": "scan.lambda_max",
    "samples": "scan.samples",
    "refine_tol": "scan.refine_tol",
    "workers": "scan.workers",
    "mode": "asym.mode",
    "eps_ladder": "asym.eps_ladder",
    "lambda_schedule": "asym.lambda_schedule",
    "M": "asym.M",
    "m": "asym.M",
    "r_min": "rstar.r_min",
    "r_max": "rstar.r_max",
    "bisect_tol": "rstar.bisect_tol",
    "r_ladder": "rstar.r_ladder",
    "t_max": "check.t_max",
    "n_points": "check.n_points",
    "tail_T": "check.tail_T",
}
LAMBDA_FLAG = {"solve": "solve.lambda", "asym": "asym.lambda"}


@dataclasses.dataclass
class RunConfig:
    """
    Flat key=value run configuration. `values` only holds the keys that were set,
    defaults are resolved by `get`.
    """
    values: Dict[str, Any] = dataclasses.field(default_factory=dict)
    lines: Dict[str, Any] = dataclasses.field(default_factory=dict, compare=False, repr=False)

    def get(self, key, default=None):
        if key in self.values:
            return self.values[key]
        return DEFAULTS.get(key, default)

    def require(self, command):
        for key in REQUIRED[command]:
            if key not in self.values:
                raise ConfigError(f"missing required key {key!r} for {command}")
        if command in ("solve", "scan") and "epsilon" not in self.values and "radius" not in self.values:
            raise ConfigError(f"missing required key 'epsilon' (or 'radius') for {command}")

    @property
    def epsilon(self):
        if "epsilon" in self.values:
            return self.values["epsilon"]
        if "radius" in self.values:
            radius = self.values["radius"]
            if not radius > 0:
                raise ConfigError(f"radius must be positive, got {radius}", self.lines.get("radius"))
            return 1. / radius
        raise ConfigError("missing required key 'epsilon' (or 'radius')")

    def _params(self, prefix, kind):
        family = self.values[prefix + ".family"]
        accepted = inspect.signature(get_family(family, kind).__init__).parameters
        params = {}
        for key, value in self.values.items():
            if not key.startswith(prefix + ".") or key == prefix + ".family":
                continue
            name = key.split(".", 1)[1]
            if name not in accepted or name == "reaction":
                raise ConfigError(f"{key} is not a parameter of the {kind} family {family!r}", self.lines.get(key))
            params[name] = parse_terms(value) if name == "terms" else value
        return family, params

    def reaction(self):
        family, params = self._params("f", "reaction")
        return get_instance({"family": family, **params}, "reaction")

    def flux(self, reaction=None):
        family, params = self._params("g", "flux")
        if "reaction" in inspect.signature(get_family(family, "flux").__init__).parameters:
            params["reaction"] = reaction if reaction is not None else self.reaction()
        return get_instance({"family": family, **params}, "flux")

    def problem(self):
        return Problem(self.values["dimension"], self.epsilon, self.reaction())

    def mesh_spec(self, default_grading=None):
        grading = self.values.get("mesh.grading", default_grading or DEFAULTS["mesh.grading"])
        return MeshSpec(n=self.get("mesh.n"), grading=grading, width=self.get("mesh.width"), fraction=self.get("mesh.fraction"))

    def to_text(self):
        lines = []
        for key in KEYS:
            if key not in self.values:
                continue
            value = self.values[key]
            if isinstance(value, list):
                text = ",".join(repr(float(item)) for item in value)
            elif isinstance(value, float):
                text = repr(value)
            else:
                text = str(value)
            lines.append(f"{key}={text}")
        return "\n".join(lines) + "\n"


def _set(values, lines, key, raw, line):
    if key not in KEYS:
        raise ConfigError(f"unknown key {key!r}", line)
    try:
        value = KEYS[key](raw)
    except ValueError as e:
        raise ConfigError(f"invalid value for {key}: {e}", line)
    if key.endswith(".family"):
        kind = "reaction" if key == "f.family" else "flux"
        if value not in registry[kind]:
            raise ConfigError(f"unknown {kind} family {value!r}, expected one of {sorted(registry[kind])}", line)
    values[key] = value
    lines[key] = line


def parse_config(text, overrides=None):
    """
    Parses key=value lines (`#` starts a comment line, blank lines are skipped),
    then applies `overrides` (flag values) on top.

    Parameters
    ----------
    text: str
    overrides: dict
        key -> value, values may already be typed

    Returns
    -------
    RunConfig
    """
    values = {}
    lines = {}
    for number, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue
        match = parse.parse("{key}={value}", line)
        if match is None:
            raise ConfigError(f"expected key=value, got {line!r}", number)
        key = match["key"].strip()
        if key in values:
            raise ConfigError(f"duplicate key {key!r}", number)
        _set(values, lines, key, match["value"].strip(), number)
        if "epsilon" in values and "radius" in values:
            raise ConfigError("epsilon and radius are mutually exclusive", number)

    overrides = dict(overrides or {})
    if "epsilon" in overrides and "radius" in overrides:
        raise ConfigError("--epsilon and --radius are mutually exclusive")
    for key, raw in overrides.items():
        if key in ("epsilon", "radius"):
            for other in ("epsilon", "radius"):
                values.pop(other, None)
                lines.pop(other, None)
        try:
            _set(values, lines, key, raw, None)
        except ConfigError as e:
            raise ConfigError(f"flag --{key.replace('.', '-')}: {e}")
    return RunConfig(values=values, lines=lines)


def flags_to_overrides(command, flags):
    """Maps normalized flag names (`mesh_n`, `f_family`, `lambda` ...) onto config keys"""
    by_flag = {key.replace(".", "_"): key for key in KEYS}
    overrides = {}
    for flag, value in flags.items():
        if flag == "lambda":
            if command not in LAMBDA_FLAG:
                raise ConfigError(f"--lambda is not an option of {command}")
            key = LAMBDA_FLAG[command]
        elif flag in FLAG_ALIASES:
            key = FLAG_ALIASES[flag]
        elif flag in by_flag:
            key = by_flag[flag]
        else:
            raise ConfigError(f"unknown flag --{flag.replace('_', '-')}")
        overrides[key] = value
    return overrides


def _log(message, quiet=False):
    if not quiet:
        print(message, file=sys.stderr)


def _display(frame, quiet):
    if not quiet:
        print(frame.to_string(index=False), file=sys.stderr)


def _table(rows, key, fields, quiet):
    if quiet:
        return
    logger = RichTableLogger(key=key, fields=fields)
    for step, row in enumerate(rows):
        logger.log_metrics(row, step=step)
    logger.finalize(True)


def _run_solve(config, out, report, quiet):
    problem = config.problem()
    solution = solve_dirichlet(problem, config.values["solve.lambda"], mesh=config.mesh_spec(), tol=config.get("solver.tol"))
    write_frame(out, solution.to_frame())
    _display(pd.DataFrame([{
        "lambda": solution.lam,
        "eps_dU1": solution.boundary_derivative,
        "residual": solution.interior_residual_norm,
        "iterations": solution.newton_iterations,
        "strategy": solution.strategy,
    }]), quiet)


def _run_scan(config, out, report, quiet):
    problem = config.problem()
    curve = scan(
        problem,
        config.flux(problem.reaction),
        config.get("scan.lambda_min"),
        config.get("scan.lambda_max"),
        config.get("scan.samples"),
        mesh=config.mesh_spec(),
        tol=config.get("solver.tol"),
        refine_tol=config.get("scan.refine_tol"),
        workers=config.get("scan.workers"),
        progress=not quiet,
    )
    existence = curve.report()
    write_frame(out, curve.to_frame())
    write_json(report, existence)
    _log(f"{existence.n_roots} root(s), pattern {existence.phi_sign_pattern}, min |phi| = {existence.min_abs_phi:.6g}", quiet)
    if existence.roots:
        _display(pd.DataFrame([root.to_dict() for root in existence.roots]), quiet)


def _run_asym(config, out, report, quiet):
    reaction = config.reaction()
    dimension = config.values["dimension"]
    mode = config.values["asym.mode"]
    epsilons = config.values["asym.eps_ladder"]
    tol = config.get("solver.tol")
    M = config.get("asym.M")

    def fixed_lambda():
        if "asym.lambda" not in config.values:
            raise ConfigError(f"missing required key 'asym.lambda' for asym mode {mode}")
        return config.values["asym.lambda"]

    if mode == "identity":
        residuals, failed = identity_ladder(reaction, dimension, fixed_lambda(), epsilons, mesh=config.mesh_spec(), tol=tol, progress=not quiet)
        frame = pd.DataFrame([residual.to_dict() for residual in residuals],
                             columns=["epsilon", "lambda", "lhs", "integral_term", "origin_term", "residual"])
        write_frame(out, frame)
        _table(frame.to_dict("records"), "epsilon", {
            "epsilon": {"format": "{:.4g}"},
            "lambda": {"format": "{:.4g}"},
            "(lhs|integral_term|origin_term|residual)": {"format": "{:.3e}"},
        }, quiet)
        return

    if mode == "case1":
        fit = case1_rate(reaction, dimension, fixed_lambda(), epsilons, M=M, mesh=config.mesh_spec(), tol=tol, progress=not quiet)
    elif mode == "case2":
        if config.get("asym.lambda_schedule") == "constant":
            schedule = fixed_lambda()
        else:
            schedule = inverse_epsilon_schedule()
        fit = case2_ratio(reaction, dimension, epsilons, schedule=schedule, M=M, mesh=config.mesh_spec("geometric"), tol=tol, progress=not quiet)
    else:
        fit = decay_ladder(reaction, dimension, fixed_lambda(), epsilons, M=M, mesh=config.mesh_spec(), tol=tol, progress=not quiet)
    frame = fit.to_frame()
    write_frame(out, frame)
    _table(frame.to_dict("records"), "epsilon", {
        "epsilon": {"format": "{:.4g}"},
        "lambda": {"format": "{:.4g}"},
        "quantity": {"format": "{:.6e}"},
        "bound": {"format": "{:.6e}"},
    }, quiet)
    slope = "" if math.isnan(fit.fitted_slope) else f", fitted slope {fit.fitted_slope:.3f}"
    _log(f"{mode}: " + ", ".join(f"{name}={value}" for name, value in fit.checks.items()) + slope, quiet)


def _run_rstar(config, out, report, quiet):
    reaction = config.reaction()
    estimate = estimate_rstar(
        reaction,
        config.flux(reaction),
        scan_window=(config.get("scan.lambda_min"), config.get("scan.lambda_max")),
        r_min=config.get("rstar.r_min"),
        r_max=config.get("rstar.r_max"),
        bisect_tol=config.get("rstar.bisect_tol"),
        dimension=config.values["dimension"],
        n_samples=config.get("scan.samples"),
        mesh=config.mesh_spec(),
        tol=config.get("solver.tol"),
        refine_tol=config.get("scan.refine_tol"),
        trace_ladder=config.get("rstar.r_ladder"),
        workers=config.get("scan.workers"),
        progress=not quiet,
    )
    write_json(out, estimate)
    _log(f"status {estimate.status}: r_low={estimate.r_low}, r_high={estimate.r_high} after {estimate.iterations} scan(s)", quiet)


def _run_trace(config, out, report, quiet):
    reaction = config.reaction()
    rows = root_trace(
        reaction,
        config.flux(reaction),
        config.values["rstar.r_ladder"],
        scan_window=(config.get("scan.lambda_min"), config.get("scan.lambda_max")),
        dimension=config.values["dimension"],
        n_samples=config.get("scan.samples"),
        mesh=config.mesh_spec(),
        tol=config.get("solver.tol"),
        refine_tol=config.get("scan.refine_tol"),
        workers=config.get("scan.workers"),
        progress=not quiet,
    )
    frame = trace_frame(rows)
    write_frame(out, frame)
    _table([{"R": row.R, "n_roots": row.n_roots if row.n_roots is not None else -1, "roots": ";".join("%.6g" % r for r in row.roots)}
            for row in rows], "R", {"R": {"format": "{:.4g}"}, "n_roots": {}, "roots": {}}, quiet)


def _run_check(config, out, report, quiet):
    reaction = config.reaction()
    result = check_assumptions(
        reaction,
        config.flux(reaction),
        t_max=config.get("check.t_max"),
        n_points=config.get("check.n_points"),
        tail_T=config.get("check.tail_T"),
    )
    write_json(out, result)
    _log(f"gap_min={result.gap_min:.6g}, crossings={result.gap_sign_changes}, ratio at infinity={result.ratio_at_infinity_estimate:.6g}", quiet)
    if not result.as_g_holds:
        raise AssumptionViolation(result)


RUNNERS = {
    "solve": _run_solve,
    "scan": _run_scan,
    "asym": _run_asym,
    "rstar": _run_rstar,
    "trace": _run_trace,
    "check": _run_check,
}


def run(config, subcommand, out=None, report=None, quiet=False):
    """
    Runs one subcommand and maps failures onto exit codes:
    0 success, 2 solver non-convergence, 3 invalid input or overflow, 4 (as-g) violated.
    """
    if subcommand not in RUNNERS:
        print(f"error: unknown subcommand {subcommand!r}, expected one of {list(SUBCOMMANDS)}", file=sys.stderr)
        return EXIT_INVALID
    default_out, default_report = DEFAULT_OUTPUTS[subcommand]
    try:
        config.require(subcommand)
        RUNNERS[subcommand](config, out or default_out, report or default_report, quiet)
    except SolverError as e:
        print(f"error: {e} (residual {e.residual_norm:.3e})", file=sys.stderr)
        return EXIT_SOLVER
    except AssumptionViolation as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ASSUMPTION
    except (ConfigError, PreconditionError, DomainError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


def execute(subcommand, flags):
    """Runs a subcommand from raw flags: global options, `--out`, `--report` and config overrides"""
    flags = {str(key).replace("-", "_"): value for key, value in flags.items()}
    out = flags.pop("out", None)
    report = flags.pop("report", None)
    quiet = bool(flags.pop("quiet", False))
    print_config = bool(flags.pop("print_config", False))
    flags.pop("seed", None)
    config_path = flags.pop("config", None)
    try:
        text = ""
        if config_path is not None:
            with open(str(config_path), encoding="utf-8") as file:
                text = file.read()
        config = parse_config(text, flags_to_overrides(subcommand, flags))
    except (ConfigError, PreconditionError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as e:
        print(f"error: cannot read config: {e}", file=sys.stderr)
        return EXIT_INVALID
    if print_config:
        print(config.to_text(), end="")
        return EXIT_OK
    return run(config, subcommand, out=out, report=report, quiet=quiet)


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    codes = []

    def command(name):
        def fn(**flags):
            codes.append(execute(name, flags))

        fn.__name__ = name
        fn.__doc__ = f"neumannlab {name}: see README for the flags"
        return fn

    try:
        fire.Fire({name: command(name) for name in SUBCOMMANDS}, command=argv, name="neumannlab")
    except FireExit as e:
        return EXIT_OK if e.code == 0 else EXIT_INVALID
    if not codes:
        print(f"error: expected a subcommand among {list(SUBCOMMANDS)}", file=sys.stderr)
        return EXIT_INVALID
    return codes[-1]


if __name__ == "__main__":
    sys.exit(main())
