"""Run configuration files.

Configs are INI files (flat ``[section]`` blocks of ``key = value`` lines,
``#`` or ``;`` comments) read with :mod:`configparser`. Every key is listed
in :data:`SCHEMA` with its type, default and constraint; unknown keys and
sections are rejected with the line they appear on.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import MFGCError

REQUIRED = object()


class ConfigError(MFGCError, ValueError):
    """Bad configuration file; ``line`` is 1-based when known."""

    def __init__(self, message, line=None, column=None, key=None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line
        self.column = column
        self.key = key


def _floats(text):
    return tuple(float(v) for v in str(text).replace(",", " ").split())


def _bool(text):
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _inf_float(text):
    return math.inf if str(text).strip().lower() in ("inf", "infinity") else float(text)


def _choice(*options):
    def check(v):
        return v in options, "one of " + ", ".join(str(o) for o in options)

    return check


def _cmp(name, op, bound):
    ops = {">": lambda v: v > bound, ">=": lambda v: v >= bound, "<=": lambda v: v <= bound}

    def check(v):
        return ops[op](v), f"{name} {op.replace('>=', '≥').replace('<=', '≤')} {bound:g}"

    return check


def _between(name, lo, hi, open_lo=False):
    def check(v):
        ok = (lo < v if open_lo else lo <= v) and v <= hi
        return ok, f"{lo:g} {'<' if open_lo else '≤'} {name} ≤ {hi:g}"

    return check


def _schedule_ok(v):
    ok = len(v) > 0 and all(0 <= x <= 1 for x in v) and all(a <= b for a, b in zip(v, v[1:]))
    return ok, "schedule nondecreasing in [0, 1]"


# section -> key -> (parser, default, check)
SCHEMA = {
    "model": {
        "name": (str, REQUIRED, _choice("exhaustible_linear", "exhaustible_general", "crowd", "power")),
        "epsilon": (float, 0.5, _cmp("epsilon", ">=", 0)),
        "q_prime": (float, 2.0, _cmp("q_prime", ">", 1)),
        "kappa": (float, 2.0, _cmp("kappa", ">", 0)),
        "beta": (float, 0.0, None),
        "strength": (float, 1.0, _cmp("strength", ">=", 0)),
        "psi_c": (float, 0.0, _cmp("psi_c", ">=", 0)),
        "lam": (float, 1.0, _cmp("lam", ">=", 0)),
        "theta_mix": (float, 1.0, _between("theta_mix", 0, 1)),
        "a_prime": (float, 2.0, _cmp("a_prime", ">", 1)),
        "kernel": (str, "constant", _choice("constant", "gaussian")),
        "kernel_width": (float, 1.0, _cmp("kernel_width", ">", 0)),
        "q1": (_inf_float, 2.0, _cmp("q1", ">=", 1)),
        "pbar": (float, 0.0, None),
    },
    "domain": {
        "dim": (int, REQUIRED, _choice(1, 2)),
        "radius": (float, REQUIRED, _cmp("radius", ">", 0)),
        "points": (int, REQUIRED, _cmp("points", ">=", 3)),
    },
    "time": {
        "horizon": (float, REQUIRED, _cmp("horizon", ">", 0)),
        "steps": (int, REQUIRED, _cmp("steps", ">=", 1)),
    },
    "dynamics": {
        "nu": (float, REQUIRED, _cmp("nu", ">", 0)),
    },
    "initial": {
        "kind": (str, "gaussian", _choice("gaussian", "uniform")),
        "center": (float, 0.0, None),
        "width": (float, 0.3, _cmp("width", ">", 0)),
    },
    "costs": {
        "terminal": (str, "smoothed_density", _choice("zero", "smoothed_density", "cosine")),
        "terminal_amplitude": (float, -0.5, None),
        "terminal_width": (float, 0.4, _cmp("terminal_width", ">", 0)),
        "terminal_eta": (float, 0.2, None),
        "terminal_sigma": (float, 0.3, _cmp("terminal_sigma", ">", 0)),
        "running": (str, "zero", _choice("zero", "smoothed_density", "cosine")),
        "running_amplitude": (float, 0.0, None),
        "running_width": (float, 0.4, _cmp("running_width", ">", 0)),
        "running_eta": (float, 0.0, None),
        "running_sigma": (float, 0.3, _cmp("running_sigma", ">", 0)),
    },
    "drift": {
        "kind": (str, "identity", _choice("identity", "linear", "saturating", "cubic")),
        "coeffs": (_floats, (1.0,), None),
        "exponent": (float, 0.5, _between("exponent", 0, 1)),
    },
    "solver": {
        "strategy": (str, "picard", _choice("picard", "fictitious_play")),
        "damping": (float, 0.5, _between("damping", 0, 1, open_lo=True)),
        "tol": (float, 1e-7, _cmp("tol", ">", 0)),
        "max_iter": (int, 200, _cmp("max_iter", ">=", 1)),
        "schedule": (_floats, (0.0, 0.25, 0.5, 0.75, 1.0), _schedule_ok),
        "fallback": (_bool, True, None),
        "inner_damping": (float, 0.5, _between("inner_damping", 0, 1, open_lo=True)),
        "inner_tol": (float, 1e-11, _cmp("inner_tol", ">", 0)),
        "inner_max_iter": (int, 500, _cmp("inner_max_iter", ">=", 1)),
        "gradient": (str, "central", _choice("central", "upwind")),
        "negativity": (str, "error", _choice("error", "clamp")),
        "legendre": (str, "auto", _choice("auto", "closed_form", "numeric")),
        "legendre_tol": (float, 1e-10, _cmp("legendre_tol", ">", 0)),
    },
    "output": {
        "directory": (str, "out", None),
    },
    "probe": {
        "seed": (int, 0, None),
        "inits": (int, 3, _cmp("inits", ">=", 1)),
        "amplitude": (float, 1.0, _cmp("amplitude", ">=", 0)),
    },
}


def required_keys():
    return [f"{sec}.{key}" for sec, keys in SCHEMA.items() for key, spec in keys.items() if spec[1] is REQUIRED]


@dataclass
class RunConfig:
    """Validated configuration with every default filled in."""

    values: dict
    source: str | None = None
    explicit: set = field(default_factory=set)

    def __getitem__(self, section):
        return self.values[section]

    def get(self, dotted):
        sec, key = dotted.split(".")
        return self.values[sec][key]

    def echo(self) -> dict:
        def plain(v):
            if isinstance(v, tuple):
                return [plain(x) for x in v]
            if isinstance(v, float) and math.isinf(v):
                return "inf"
            return v

        return {sec: {k: plain(v) for k, v in keys.items()} for sec, keys in self.values.items()}


def _line_index(text):
    """``(section, key) -> line`` and ``section -> line`` from the raw text."""
    keys, sections = {}, {}
    section = None
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            sections.setdefault(section, i)
            continue
        for sep in ("=", ":"):
            if sep in line:
                keys.setdefault((section, line.split(sep, 1)[0].strip().lower()), i)
                break
    return keys, sections


def parse_config_text(text: str, source=None) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=source or "<config>")
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("key outside of any [section]", line=exc.lineno, column=1) from None
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"duplicate key {exc.section}.{exc.option}", line=exc.lineno,
                          key=f"{exc.section}.{exc.option}") from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"duplicate section [{exc.section}]", line=exc.lineno) from None
    except configparser.ParsingError as exc:
        lineno, raw = exc.errors[0]
        raise ConfigError(f"cannot parse {raw.strip()!r}", line=lineno, column=1) from None

    key_lines, section_lines = _line_index(text)
    values, explicit, missing = {}, set(), []
    for sec in parser.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]", line=section_lines.get(sec))
        for key in parser[sec]:
            if key not in SCHEMA[sec]:
                raise ConfigError(f"unknown key {key!r} in [{sec}]", line=key_lines.get((sec, key)),
                                  column=1, key=f"{sec}.{key}")
    for sec, keys in SCHEMA.items():
        values[sec] = {}
        for key, (conv, default, check) in keys.items():
            if parser.has_option(sec, key):
                raw = parser.get(sec, key)
                line = key_lines.get((sec, key))
                try:
                    val = conv(raw)
                except (TypeError, ValueError):
                    raise ConfigError(f"{sec}.{key}: cannot read {raw!r} as {getattr(conv, '__name__', 'value')}",
                                      line=line, key=f"{sec}.{key}") from None
                explicit.add(f"{sec}.{key}")
            elif default is REQUIRED:
                missing.append(f"{sec}.{key}")
                continue
            else:
                val, line = default, None
            if check is not None:
                ok, desc = check(val)
                if not ok:
                    raise ConfigError(f"{sec}.{key} = {val!r} violates {desc}", line=line, key=f"{sec}.{key}")
            values[sec][key] = val
    if missing:
        raise ConfigError("missing required keys: " + ", ".join(missing))
    cfg = RunConfig(values, source, explicit)
    _cross_checks(cfg, key_lines)
    return cfg


def _cross_checks(cfg: RunConfig, key_lines):
    model, dim = cfg["model"]["name"], cfg["domain"]["dim"]
    if model == "exhaustible_linear" and dim != 1:
        raise ConfigError("model.name = exhaustible_linear requires domain.dim = 1",
                          line=key_lines.get(("domain", "dim")), key="domain.dim")
    mc = cfg["model"]
    if model == "exhaustible_general" and mc["psi_c"] > 0 and mc["q_prime"] < 2:
        raise ConfigError("model.psi_c > 0 requires model.q_prime ≥ 2",
                          line=key_lines.get(("model", "psi_c")), key="model.psi_c")
    coeffs = cfg["drift"]["coeffs"]
    if cfg["drift"]["kind"] == "linear" and len(coeffs) not in (1, dim):
        raise ConfigError(f"drift.coeffs needs 1 or {dim} values", line=key_lines.get(("drift", "coeffs")),
                          key="drift.coeffs")
    if len(cfg["drift"]["coeffs"]) and any(c == 0 for c in coeffs):
        raise ConfigError("drift.coeffs violates c_i ≠ 0", line=key_lines.get(("drift", "coeffs")),
                          key="drift.coeffs")


def parse_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return parse_config_text(text, source=str(path))


# ---------------------------------------------------------------------------
# building solver objects


def build_model(cfg: RunConfig):
    from .models import (
        CrowdMotionModel, CrowdMotionParams, ExhaustibleGeneralModel, ExhaustibleLinearModel,
        ExhaustibleResourceParams, PowerLagrangian, bump,
    )

    mc, dim = cfg["model"], cfg["domain"]["dim"]
    name = mc["name"]
    if name == "exhaustible_linear":
        return ExhaustibleLinearModel(mc["epsilon"])
    if name == "exhaustible_general":
        return ExhaustibleGeneralModel(ExhaustibleResourceParams(
            epsilon=mc["epsilon"], form="general", dim=dim, q_prime=mc["q_prime"], kappa=mc["kappa"],
            beta=mc["beta"], strength=mc["strength"], psi_c=mc["psi_c"]))
    if name == "crowd":
        kernel = None if mc["kernel"] == "constant" else bump(1.0, mc["kernel_width"])
        return CrowdMotionModel(CrowdMotionParams(lam=mc["lam"], theta_mix=mc["theta_mix"],
                                                  a_prime=mc["a_prime"], kernel=kernel, q1=mc["q1"], dim=dim))
    return PowerLagrangian(dim, mc["q_prime"], kappa=mc["kappa"], pbar=mc["pbar"])


def _cost(kind, amplitude, width, eta, sigma, radius):
    from .models import SmoothedDensityCost, ZeroCoupling, bump, torus_cosine

    if kind == "zero":
        return ZeroCoupling()
    g0 = torus_cosine(amplitude, radius) if kind == "cosine" else bump(amplitude, width)
    return SmoothedDensityCost(g0, eta, sigma)


def build_problem(cfg: RunConfig):
    from .coupler import ProblemSpec
    from .drift import make_drift
    from .grid import TimeGrid, TorusGrid

    d = cfg["domain"]
    grid = TorusGrid(d["dim"], d["radius"], d["points"])
    tg = TimeGrid(cfg["time"]["horizon"], cfg["time"]["steps"])
    ini = cfg["initial"]
    if ini["kind"] == "uniform":
        m0 = grid.uniform_density()
    else:
        r2 = np.sum((grid.coords - ini["center"]) ** 2, axis=-1)
        m0 = grid.normalize(np.exp(-r2 / (2 * ini["width"] ** 2)))
    c = cfg["costs"]
    terminal = _cost(c["terminal"], c["terminal_amplitude"], c["terminal_width"], c["terminal_eta"],
                     c["terminal_sigma"], d["radius"])
    running = _cost(c["running"], c["running_amplitude"], c["running_width"], c["running_eta"],
                    c["running_sigma"], d["radius"])
    dr = cfg["drift"]
    drift = None if dr["kind"] == "identity" else make_drift(dr["kind"], d["dim"], dr["coeffs"], dr["exponent"])
    s = cfg["solver"]
    return ProblemSpec(grid, tg, cfg["dynamics"]["nu"], build_model(cfg), m0, coupling=running,
                       terminal=terminal, drift=drift, legendre_mode=s["legendre"],
                       legendre_tol=s["legendre_tol"])


def build_options(cfg: RunConfig):
    from .coupler import OuterOptions
    from .fixed_point import FixedPointOptions
    from .pde import FpkOptions, HjbOptions

    s = cfg["solver"]
    return OuterOptions(
        strategy=s["strategy"], damping=s["damping"], tol=s["tol"], max_iter=s["max_iter"],
        schedule=tuple(s["schedule"]), fallback=s["fallback"],
        inner=FixedPointOptions(damping=s["inner_damping"], tol=s["inner_tol"], max_iter=s["inner_max_iter"]),
        hjb=HjbOptions(gradient=s["gradient"]), fpk=FpkOptions(negativity=s["negativity"]),
    )
