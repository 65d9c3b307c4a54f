"""Batch experiment runner tying the exact and numerical routes together.

One invocation runs one named pipeline, writes its artifacts (CSV and
JSON, plus a manifest with input echo, versions, seed, and wall time)
into the output directory, and reports verification through the exit
status: 0 when every check passed, 1 when a verification check failed,
2 on a configuration error (unknown key, bad value, missing command).

Configuration comes from command-line flags and an optional INI-style
file of flat key = value pairs grouped in sections; the full schema is
printed by --help and --print-config-schema and shipped as
config_schema.txt next to this module.  Flags override the file, the
file overrides built-in defaults.  Artifact files are written once,
atomically (temp file then rename), contain no timestamps, and are
reproducible bit for bit from the manifest's configuration echo.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import io
import json
import math
import os
import platform
import sys
import tempfile
import time
from contextlib import contextmanager
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Sequence, Tuple

import numpy as np

from . import __version__, simulation
from .combinatorics import catalan, cumulants_from_moments, projection_cumulants
from .moments import (
    JacobiParams,
    MomentVector,
    complement_moments,
    integrate_moments,
    integrate_w_moments,
    moments_at,
    mp_limit_check,
    stationary_density,
    stationary_moments_derivative_poly,
    stationary_moments_catalan,
)
from .series import (
    CharacteristicState,
    characteristic_trace,
    eta_t2,
    extract_rho_moments,
    involution,
    k2_characteristic,
    lambda_tilde,
    mgf_relation_check,
    moment_row_from_rho,
    pde0_residual,
    rho0_from_closed_form,
    w_sequence,
)
from .simulation import SimConfig, SpectralSample, samples_to_csv, simulate_compressed_jacobi
from .words import (
    dump_k_triangle_csv,
    jacobi_power_tables,
    knj_closed_form,
    knj_from_table,
    stationary_from_words,
)

COMMANDS = (
    "moments",
    "stationary",
    "expansion-verify",
    "cumulants",
    "mgf-check",
    "characteristics",
    "simulate",
    "full-verify",
)

EXIT_PASS = 0
EXIT_VERIFICATION_FAILURE = 1
EXIT_CONFIG_ERROR = 2

# Statistical checks compare Monte Carlo means against closed-form or ODE
# values at this many standard errors unless --tolerance overrides it.
SE_MULTIPLIER = 4.0


class ConfigError(Exception):
    """Invalid configuration: unknown key, unparsable value, bad combination."""


@contextmanager
def _config_errors(what: str):
    try:
        yield
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"{what}: {exc}") from exc


# ---------------------------------------------------------------------------
# Key registry: one source of truth for config keys, CLI flags, defaults,
# the schema text, and the manifest echo.

@dataclass(frozen=True)
class _Key:
    name: str
    kind: str
    default: object
    help: str


def _parse_u64(s: str) -> int:
    v = int(s)
    if not 0 <= v < 2**64:
        raise ValueError("seed must fit in an unsigned 64-bit integer")
    return v


def _parse_int(s: str) -> int:
    return int(s)


def _parse_float(s: str) -> float:
    v = float(s)
    if not math.isfinite(v):
        raise ValueError("value must be finite")
    return v


def _parse_fraction(s: str) -> Fraction:
    v = Fraction(s)
    if not 0 < v <= 1:
        raise ValueError("projection trace must lie in (0, 1]")
    return v


def _parse_complex(s: str) -> complex:
    v = complex(s)
    if not (math.isfinite(v.real) and math.isfinite(v.imag)):
        raise ValueError("value must be finite")
    return v


def _parse_alphas(s: str) -> Tuple[Fraction, ...]:
    parts = [p.strip() for p in s.split(",") if p.strip()]
    if not parts:
        raise ValueError("need at least one fraction")
    out = []
    for p in parts:
        a = Fraction(p)
        if not 0 < a < 1:
            raise ValueError(f"projection trace {p} must lie in (0, 1)")
        out.append(a)
    return tuple(out)


_PARSERS: Dict[str, Callable[[str], object]] = {
    "int": _parse_int,
    "u64": _parse_u64,
    "float": _parse_float,
    "str": str,
    "fraction": _parse_fraction,
    "complex": _parse_complex,
    "alphas": _parse_alphas,
}

_KIND_HINT = {
    "int": "<integer>",
    "u64": "<integer in [0, 2^64)>",
    "float": "<float>",
    "str": "<string>",
    "fraction": "<fraction, e.g. 1/3>",
    "complex": "<complex, e.g. 0.05 or 0.1j>",
    "alphas": "<comma-separated fractions>",
}

_RUN_KEYS: Tuple[_Key, ...] = (
    _Key("command", "str", None,
         "pipeline to run; optional when given on the command line"),
    _Key("seed", "u64", 0, "base seed for every Monte Carlo trajectory"),
    _Key("out", "str", "freejacobi-out",
         "directory receiving artifacts and the manifest"),
    _Key("tolerance", "float", None,
         "override of the command's default verification tolerance; for the "
         "statistical checks of simulate it is the standard-error multiplier; "
         "the exact commands ignore it"),
    _Key("threads", "int", None,
         "worker threads for Monte Carlo trajectories (default: one per cpu)"),
)

_COMMAND_KEYS: Dict[str, Tuple[_Key, ...]] = {
    "moments": (
        _Key("k", "int", 3, "number of independent unitary Brownian motions"),
        _Key("n_max", "int", 8, "highest moment order integrated"),
        _Key("t_end", "float", 5.0, "end of the integration window"),
        _Key("dt_out", "float", 0.05, "output grid spacing"),
    ),
    "stationary": (
        _Key("k", "int", 3, "number of independent unitary Brownian motions"),
        _Key("n_max", "int", 12, "highest stationary moment tabulated"),
    ),
    "expansion-verify": (
        _Key("n_max", "int", 12,
             "highest word power expanded (closed-form triangle check)"),
    ),
    "cumulants": (
        _Key("n_max", "int", 12, "highest cumulant order compared"),
        _Key("alphas", "alphas", ("1/2", "1/3", "2/5"),
             "projection traces checked, each in (0, 1)"),
    ),
    "mgf-check": (
        _Key("k", "int", 3, "number of independent unitary Brownian motions"),
        _Key("n_max", "int", 16, "series truncation order"),
        _Key("t_end", "float", 1.0, "end of the integration window"),
        _Key("dt_out", "float", 0.25, "output grid spacing"),
    ),
    "characteristics": (
        _Key("k", "int", 3, "number of independent unitary Brownian motions"),
        _Key("n_max", "int", 24, "series truncation order"),
        _Key("z0", "complex", "0.05", "starting point of the traced curve"),
        _Key("t_end", "float", 0.5, "end of the traced window"),
        _Key("dt_out", "float", 0.00125,
             "moment grid spacing; the tracer steps by twice this value, so "
             "t_end must be an even number of grid intervals"),
    ),
    "simulate": (
        _Key("n", "int", 60, "matrix dimension N"),
        _Key("k", "int", 3, "number of independent unitary Brownian motions"),
        _Key("t_end", "float", 0.5, "simulated time horizon"),
        _Key("dt", "float", 0.001, "Euler step of the unitary integrator"),
        _Key("trajectories", "int", 8, "independent Monte Carlo repetitions"),
        _Key("n_moments", "int", 3, "moment orders compared against the ODE"),
        _Key("rank_p", "fraction", None,
             "trace of the left projection for the compressed observable; "
             "needs rank_q too and rank_p*n, rank_q*n integer"),
        _Key("rank_q", "fraction", None,
             "trace of the right projection; must equal rank_p"),
        _Key("bins", "int", 40, "histogram bin count for the eigenvalue plot data"),
    ),
    "full-verify": (
        _Key("k", "int", 3, "number of independent unitary Brownian motions"),
        _Key("n_max", "int", 8, "moment order for the exact and ODE checks"),
        _Key("t_end", "float", 5.0, "ODE integration window"),
        _Key("mc_n", "int", 60, "matrix dimension of the Monte Carlo check"),
        _Key("mc_trajectories", "int", 8, "Monte Carlo repetitions"),
        _Key("mc_dt", "float", 0.001, "Monte Carlo Euler step"),
        _Key("mc_t_end", "float", 0.3, "Monte Carlo time horizon"),
    ),
}

_DEFAULT_TOLERANCE: Dict[str, float | None] = {
    "moments": 1e-9,
    "stationary": None,
    "expansion-verify": None,
    "cumulants": None,
    "mgf-check": 1e-6,
    "characteristics": 1e-6,
    "simulate": SE_MULTIPLIER,
    "full-verify": 1e-9,
}


def _key_owners() -> Dict[str, List[str]]:
    owners: Dict[str, List[str]] = {}
    for command, keys in _COMMAND_KEYS.items():
        for key in keys:
            owners.setdefault(key.name, []).append(command)
    return owners


def _union_keys() -> Dict[str, _Key]:
    seen: Dict[str, _Key] = {}
    for keys in _COMMAND_KEYS.values():
        for key in keys:
            if key.name in seen and seen[key.name].kind != key.kind:
                raise AssertionError(f"conflicting kinds for key {key.name}")
            seen.setdefault(key.name, key)
    return seen


def _default_str(default: object) -> str:
    if default is None:
        return "unset"
    if isinstance(default, tuple):
        return ",".join(str(d) for d in default)
    return str(default)


def _build_schema() -> str:
    lines = [
        "freejacobi configuration schema",
        "",
        "Flat key = value pairs in an INI-style file, grouped in sections.",
        "Unknown sections or keys are rejected with exit status 2.  Values",
        "given as command-line flags (--key, with '-' for '_') override the",
        "file; the file overrides the defaults listed here.  The [run]",
        "section applies to every command; each command reads exactly one",
        "further section named after it.",
        "",
        "Default verification tolerances by command:",
    ]
    for command in COMMANDS:
        tol = _DEFAULT_TOLERANCE[command]
        label = "exact (tolerance ignored)" if tol is None else repr(tol)
        if command == "simulate":
            label += " standard errors"
        lines.append(f"  {command}: {label}")
    lines.append("")
    sections: List[Tuple[str, Tuple[_Key, ...]]] = [("run", _RUN_KEYS)]
    sections += [(c, _COMMAND_KEYS[c]) for c in COMMANDS]
    for section, keys in sections:
        lines.append(f"[{section}]")
        for key in keys:
            left = f"{key.name} = {_KIND_HINT[key.kind]}"
            lines.append(f"{left:<46s}# default {_default_str(key.default)}; {key.help}")
        lines.append("")
    return "\n".join(lines)


CONFIG_SCHEMA = _build_schema()


# ---------------------------------------------------------------------------
# Configuration loading and resolution.

def _load_config(path: str | None) -> Dict[str, Dict[str, str]]:
    """Read and validate the key = value file; values stay strings here."""
    if path is None:
        return {}
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config file {path}: {exc}") from exc
    known = {"run": {k.name for k in _RUN_KEYS}}
    known.update({c: {k.name for k in keys} for c, keys in _COMMAND_KEYS.items()})
    out: Dict[str, Dict[str, str]] = {}
    for section in parser.sections():
        if section not in known:
            raise ConfigError(f"unknown config section [{section}]")
        for name, value in parser.items(section):
            if name not in known[section]:
                raise ConfigError(f"unknown config key {name!r} in [{section}]")
            out.setdefault(section, {})[name] = value
    return out


def _parse_value(section: str, key: _Key, raw: str) -> object:
    try:
        return _PARSERS[key.kind](raw)
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"bad value for {section}.{key.name}: {raw!r} ({exc})") from exc


def _resolve_key(section: str, key: _Key, cli_raw: str | None,
                 config: Dict[str, Dict[str, str]]) -> object:
    if cli_raw is not None:
        return _parse_value(section, key, cli_raw)
    raw = config.get(section, {}).get(key.name)
    if raw is not None:
        return _parse_value(section, key, raw)
    if isinstance(key.default, tuple):
        return _parse_value(section, key, ",".join(key.default))
    return key.default


@dataclass(frozen=True)
class ExperimentSpec:
    """One resolved run: the command, its parameters, and the run context."""

    command: str
    params: Dict[str, object]
    output_dir: Path
    seed: int
    tolerance: float | None = None
    threads: int | None = None

    def config_echo(self) -> Dict[str, Dict[str, object]]:
        def enc(v: object) -> object:
            if v is None or isinstance(v, (int, float, str)):
                return v
            if isinstance(v, tuple):
                return [str(x) for x in v]
            return str(v)

        return {
            "run": {
                "command": self.command,
                "seed": self.seed,
                "out": str(self.output_dir),
                "tolerance": self.tolerance,
                "threads": self.threads,
            },
            self.command: {name: enc(v) for name, v in self.params.items()},
        }


# ---------------------------------------------------------------------------
# Artifact persistence: atomic writes, sha256 ledger, deterministic bytes.

def _json_text(obj: object) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


class _ArtifactSink:
    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self.hashes: Dict[str, str] = {}

    def write_text(self, name: str, text: str) -> None:
        fd, tmp = tempfile.mkstemp(dir=self.out_dir, prefix=name + ".", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
            os.replace(tmp, self.out_dir / name)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        self.hashes[name] = hashlib.sha256(text.encode("utf-8")).hexdigest()

    def write_with(self, name: str, writer: Callable[[Path], None]) -> None:
        """Route a path-taking library writer through the same temp-then-rename."""
        fd, tmp = tempfile.mkstemp(dir=self.out_dir, prefix=name + ".", suffix=".tmp")
        os.close(fd)
        try:
            writer(Path(tmp))
            digest = hashlib.sha256(Path(tmp).read_bytes()).hexdigest()
            os.replace(tmp, self.out_dir / name)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        self.hashes[name] = digest


# ---------------------------------------------------------------------------
# Plot-data emission: tidy CSV text, no plotting engine.

def emit_plot_data(kind: str, inputs: Mapping[str, object]) -> str:
    """Build one tidy CSV for an external plotting tool.

    kind 'histogram': inputs eigenvalues (sequence), k (int), bins (int);
    adds the closed-form stationary density at the bin midpoints.
    kind 'moment-vs-t': inputs ode (MomentVector), optional mc (dict with
    t, mean, se); Monte Carlo columns stay empty off the sampled time.
    kind 'residual': inputs residual (sequence, per series coefficient).
    kind 'characteristic': inputs state (CharacteristicState); the path in
    both coordinates plus the conserved-quantity drift per point.
    """
    buf = io.StringIO()
    writer = csv.writer(buf)
    if kind == "histogram":
        try:
            eigenvalues = np.asarray(inputs["eigenvalues"], dtype=float)
            k = int(inputs["k"])
            bins = int(inputs["bins"])
        except KeyError as exc:
            raise ValueError(f"histogram inputs need {exc}") from exc
        if bins < 1 or eigenvalues.size == 0:
            raise ValueError("histogram needs bins >= 1 and nonempty eigenvalues")
        top = 4 * (k - 1) / k**2
        hi = max(top, float(eigenvalues.max()))
        edges = np.linspace(0.0, hi, bins + 1)
        counts, _ = np.histogram(eigenvalues, edges)
        width = edges[1] - edges[0]
        mids = (edges[:-1] + edges[1:]) / 2
        overlay = stationary_density(k, mids)
        writer.writerow(["bin_left", "bin_right", "count",
                         "empirical_density", "stationary_density"])
        for i in range(bins):
            writer.writerow([repr(float(edges[i])), repr(float(edges[i + 1])),
                             int(counts[i]),
                             repr(float(counts[i] / (eigenvalues.size * width))),
                             repr(float(overlay[i]))])
    elif kind == "moment-vs-t":
        try:
            ode: MomentVector = inputs["ode"]  # type: ignore[assignment]
        except KeyError as exc:
            raise ValueError(f"moment-vs-t inputs need {exc}") from exc
        mc = inputs.get("mc")
        n_max = ode.params.n_max
        header = ["t"] + [f"{ode.tag}_{n}" for n in range(1, n_max + 1)]
        if mc is not None:
            header += [f"mc_mean_{n}" for n in range(1, n_max + 1)]
            header += [f"mc_se_{n}" for n in range(1, n_max + 1)]
        writer.writerow(header)
        for t, row in zip(ode.t_grid, ode.values):
            out = [repr(float(t))] + [repr(float(v)) for v in row[1:]]
            if mc is not None:
                if abs(float(t) - float(mc["t"])) < 1e-12:
                    out += [repr(float(v)) for v in mc["mean"]]
                    out += [repr(float(v)) for v in mc["se"]]
                else:
                    out += [""] * (2 * n_max)
            writer.writerow(out)
    elif kind == "residual":
        try:
            residual = [float(v) for v in inputs["residual"]]  # type: ignore[arg-type]
        except KeyError as exc:
            raise ValueError(f"residual inputs need {exc}") from exc
        writer.writerow(["coefficient", "residual"])
        for i, v in enumerate(residual):
            writer.writerow([i, repr(v)])
    elif kind == "characteristic":
        try:
            state: CharacteristicState = inputs["state"]  # type: ignore[assignment]
        except KeyError as exc:
            raise ValueError(f"characteristic inputs need {exc}") from exc
        writer.writerow(["t", "re_z", "im_z", "re_y", "im_y",
                         "re_f", "im_f", "drift"])
        for t, y, f in zip(state.t_grid, state.y_path, state.f_path):
            z = involution(y)
            g = lambda_tilde(state.k, y) * f * f + f
            writer.writerow([repr(t), repr(z.real), repr(z.imag),
                             repr(y.real), repr(y.imag),
                             repr(f.real), repr(f.imag),
                             repr(abs(g - state.g0))])
    else:
        raise ValueError(f"unknown plot data kind {kind!r}")
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Verification checks.

@dataclass
class Check:
    name: str
    passed: bool
    value: object
    budget: object

    def row(self) -> dict:
        return {"name": self.name, "pass": self.passed,
                "value": self.value, "budget": self.budget}


def _guarded(name: str, fn: Callable[[], List[Check]]) -> List[Check]:
    """Run one sub-verification; a crash counts as a failed check."""
    try:
        return fn()
    except Exception as exc:  # noqa: BLE001 - report, do not mask siblings
        return [Check(name, False, f"error: {type(exc).__name__}: {exc}", "-")]


def _first_moment_closed_form(k: int, t_grid: np.ndarray) -> np.ndarray:
    return 1.0 / k + (1.0 - 1.0 / k) * np.exp(-np.asarray(t_grid, dtype=float))


# ---------------------------------------------------------------------------
# Command implementations.  Each returns (checks, results) and registers its
# artifacts with the sink; run() adds summary.json and manifest.json.

def _tolerance(spec: ExperimentSpec) -> float | None:
    if spec.tolerance is not None:
        return spec.tolerance
    return _DEFAULT_TOLERANCE[spec.command]


def _cmd_moments(spec: ExperimentSpec, sink: _ArtifactSink):
    p = spec.params
    tol = _tolerance(spec)
    with _config_errors("moments parameters"):
        params = JacobiParams.for_k(p["k"], p["n_max"])
        if p["t_end"] <= 0 or p["dt_out"] <= 0:
            raise ValueError("t_end and dt_out must be positive")
    res = integrate_w_moments(p["k"], p["n_max"], p["t_end"],
                              dt_out=p["dt_out"], tol=1e-12)
    direct = integrate_moments(params, p["t_end"], dt_out=p["dt_out"], tol=1e-12)
    gap = float(np.max(np.abs(res.r.values - direct.values)))
    m1_gap = float(np.max(np.abs(
        direct.values[:, 1] - _first_moment_closed_form(p["k"], direct.t_grid))))
    checks = [
        Check("raw vs rescaled moment route max gap", gap < tol, gap, tol),
        Check("first moment closed form", m1_gap < 1e-10, m1_gap, 1e-10),
    ]

    buf = io.StringIO()
    writer = csv.writer(buf)
    n_max = p["n_max"]
    writer.writerow(["t"] + [f"m_{n}" for n in range(n_max + 1)]
                    + [f"r_{n}" for n in range(n_max + 1)])
    for t, mrow, rrow in zip(direct.t_grid, direct.values, res.r.values):
        writer.writerow([repr(float(t))] + [repr(float(v)) for v in mrow]
                        + [repr(float(v)) for v in rrow])
    sink.write_text("moments.csv", buf.getvalue())
    sink.write_text("moment_vs_t.csv", emit_plot_data("moment-vs-t", {"ode": direct}))

    results = {"k": p["k"], "n_max": n_max, "t_end": p["t_end"],
               "grid_points": int(direct.t_grid.size),
               "dual_route_gap": gap, "first_moment_gap": m1_gap,
               "rescaled_vector_field_residual": res.rescaled_residual}
    return checks, results


def _cmd_stationary(spec: ExperimentSpec, sink: _ArtifactSink):
    p = spec.params
    with _config_errors("stationary parameters"):
        if p["k"] < 2 or p["n_max"] < 1:
            raise ValueError("need k >= 2 and n_max >= 1")
        cat = stationary_moments_catalan(p["k"], p["n_max"])
        app = stationary_moments_derivative_poly(p["k"], p["n_max"])
        words = [stationary_from_words(n, p["k"]) for n in range(1, p["n_max"] + 1)]
    route_mismatches = sum(1 for n in range(p["n_max"] + 1) if cat[n] != app[n])
    word_mismatches = sum(1 for n in range(1, p["n_max"] + 1)
                          if cat[n] != words[n - 1])
    k = p["k"]
    diff_mismatches = sum(
        1 for n in range(p["n_max"])
        if cat[n] - cat[n + 1] != Fraction((k - 1) ** (n + 1) * catalan(n),
                                           k ** (2 * n + 1)))
    checks = [
        Check("catalan route vs derivative-polynomial route (mismatches)",
              route_mismatches == 0, route_mismatches, 0),
        Check("word-algebra route (mismatches)",
              word_mismatches == 0, word_mismatches, 0),
        Check("telescoping catalan difference law (mismatches)",
              diff_mismatches == 0, diff_mismatches, 0),
    ]

    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["n", "m_catalan", "m_derivative_poly", "m_words", "m_float"])
    for n in range(p["n_max"] + 1):
        word = str(words[n - 1]) if n >= 1 else str(cat[0])
        writer.writerow([n, str(cat[n]), str(app[n]), word, repr(float(cat[n]))])
    sink.write_text("stationary.csv", buf.getvalue())

    results = {"k": k, "n_max": p["n_max"],
               "m_inf": [str(v) for v in cat]}
    return checks, results


def _cmd_expansion_verify(spec: ExperimentSpec, sink: _ArtifactSink):
    p = spec.params
    with _config_errors("expansion-verify parameters"):
        tables = jacobi_power_tables(p["n_max"])
    mismatches = 0
    entries = 0
    for table in tables:
        knj = knj_from_table(table)
        for j in range(table.n + 1):
            entries += 1
            if knj[j] != knj_closed_form(table.n, j):
                mismatches += 1
    checks = [Check("triangle entries vs closed form (mismatches)",
                    mismatches == 0, mismatches, 0)]
    sink.write_with("k_triangle.csv", lambda path: dump_k_triangle_csv(tables, path))
    results = {"n_max": p["n_max"], "entries_checked": entries}
    return checks, results


def _cmd_cumulants(spec: ExperimentSpec, sink: _ArtifactSink):
    p = spec.params
    n_max = p["n_max"]
    with _config_errors("cumulants parameters"):
        if n_max < 1:
            raise ValueError("n_max must be >= 1")
        alphas: Tuple[Fraction, ...] = p["alphas"]
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["alpha", "n", "kappa_legendre", "kappa_moebius", "equal"])
    checks = []
    for alpha in alphas:
        table = projection_cumulants(alpha, n_max)
        oracle = cumulants_from_moments([Fraction(1)] + [alpha] * n_max, n_max)
        mismatches = 0
        for n in range(1, n_max + 1):
            same = table[n] == oracle[n]
            mismatches += 0 if same else 1
            writer.writerow([str(alpha), n, str(table[n]), str(oracle[n]),
                             int(same)])
        checks.append(Check(f"alpha={alpha} legendre vs moebius (mismatches)",
                            mismatches == 0, mismatches, 0))
    sink.write_text("cumulants.csv", buf.getvalue())
    results = {"n_max": n_max, "alphas": [str(a) for a in alphas]}
    return checks, results


_MGF_SAMPLES = (0.1, -0.1, 0.05 + 0.05j)


def _cmd_mgf_check(spec: ExperimentSpec, sink: _ArtifactSink):
    p = spec.params
    tol = _tolerance(spec)
    with _config_errors("mgf-check parameters"):
        params = JacobiParams.for_k(p["k"], p["n_max"])
        if p["t_end"] <= 0 or p["dt_out"] <= 0:
            raise ValueError("t_end and dt_out must be positive")
    vec = integrate_moments(params, p["t_end"], dt_out=p["dt_out"], tol=1e-12)
    gap = mgf_relation_check(vec, p["k"], _MGF_SAMPLES)
    checks = [Check("stationary-plus-correction relation max gap",
                    gap < tol, gap, tol)]
    results = {"k": p["k"], "n_max": p["n_max"], "t_end": p["t_end"],
               "grid_points": int(vec.t_grid.size),
               "z_samples": [str(z) for z in _MGF_SAMPLES], "max_gap": gap}
    return checks, results


def _cmd_characteristics(spec: ExperimentSpec, sink: _ArtifactSink):
    p = spec.params
    tol = _tolerance(spec)
    with _config_errors("characteristics parameters"):
        params = JacobiParams.for_k(p["k"], p["n_max"])
        if p["t_end"] <= 0 or p["dt_out"] <= 0:
            raise ValueError("t_end and dt_out must be positive")
    vec = integrate_moments(params, p["t_end"], dt_out=p["dt_out"], tol=1e-12)
    with _config_errors("characteristics grid"):
        state = characteristic_trace(p["k"], p["z0"], p["t_end"], vec)
    checks = [Check("conserved quantity max drift", state.drift < tol,
                    state.drift, tol)]
    if p["k"] == 2:
        curve_gap = max(
            abs(z - k2_characteristic(complex(p["z0"]), t))
            for t, z in zip(state.t_grid, state.z_path()))
        checks.append(Check("explicit k=2 curve max gap",
                            curve_gap < 1e-8, curve_gap, 1e-8))
    sink.write_text("characteristic.csv",
                    emit_plot_data("characteristic", {"state": state}))
    results = {"k": p["k"], "z0": str(p["z0"]), "t_end": p["t_end"],
               "points": len(state.t_grid), "drift": state.drift,
               "branch_crossed": state.branch_crossed,
               "traced_until": state.t_grid[-1]}
    return checks, results


def _radial_study(cfg: SimConfig, n_moments: int, threads: int | None):
    """One pass per trajectory collecting spectra, moments, and traces."""

    def one(trajectory: int):
        rng = simulation._trajectory_rng(cfg.seed, trajectory)
        us = [simulation.ubm_endpoint(cfg.N, cfg.dt, cfg.steps, rng)
              for _ in range(cfg.k)]
        trace_u = [float(np.trace(u).real) / cfg.N for u in us]
        g = np.sum(us, axis=0)
        w = g @ g.conj().T
        gram = float(np.trace(w).real) / cfg.N
        vals = np.sort(np.linalg.eigvalsh(w)) / cfg.k**2
        sample = SpectralSample(eigenvalues=vals, N=cfg.N, k=cfg.k,
                                t=cfg.t_end, trajectory=trajectory,
                                seed=cfg.seed, kind="radial")
        sample.validate()
        r = [float(np.mean(vals**j)) for j in range(1, n_moments + 1)]
        return sample, r, trace_u, gram

    rows = simulation._map_trajectories(one, cfg.trajectories, threads)
    samples = [row[0] for row in rows]
    r = np.array([row[1] for row in rows])
    trace_u = np.array([tr for row in rows for tr in row[2]])
    gram = np.array([row[3] for row in rows])
    r_mean, r_se = simulation._mean_se(r)
    tu_mean, tu_se = simulation._mean_se(trace_u)
    return samples, r_mean, r_se, float(tu_mean), float(tu_se), gram


def _cmd_simulate(spec: ExperimentSpec, sink: _ArtifactSink):
    p = spec.params
    mult = _tolerance(spec)
    with _config_errors("simulate parameters"):
        cfg = SimConfig(N=p["n"], k=p["k"], t_end=p["t_end"], dt=p["dt"],
                        trajectories=p["trajectories"], seed=spec.seed)
        if p["n_moments"] < 1 or p["bins"] < 1:
            raise ValueError("n_moments and bins must be >= 1")
        if (p["rank_p"] is None) != (p["rank_q"] is None):
            raise ValueError("rank_p and rank_q must be given together")
        if p["rank_p"] is not None:
            if p["rank_p"] != p["rank_q"]:
                raise ValueError("only equal projection traces are supported")
            simulation._projection_rank(p["rank_p"], cfg.N)
        if mult <= 0:
            raise ValueError("the standard-error multiplier must be positive")

    samples, r_mean, r_se, tu_mean, tu_se, gram = _radial_study(
        cfg, p["n_moments"], spec.threads)
    grid = np.linspace(0.0, cfg.t_end, 51)
    ode = integrate_w_moments(cfg.k, p["n_moments"], cfg.t_end,
                              t_grid=grid, tol=1e-12)
    r_ode = ode.r.at(cfg.t_end)[1:]

    checks = []
    for j in range(p["n_moments"]):
        gap = abs(float(r_mean[j]) - float(r_ode[j]))
        checks.append(Check(
            f"radial moment r_{j + 1} within {mult:g} standard errors",
            gap <= mult * float(r_se[j]), gap, mult * float(r_se[j])))
    trace_target = math.exp(-cfg.t_end / 2)
    trace_gap = abs(tu_mean - trace_target)
    checks.append(Check(
        f"unitary trace within {mult:g} standard errors of exp(-t/2)",
        trace_gap <= mult * tu_se, trace_gap, mult * tu_se))

    results = {
        "N": cfg.N, "k": cfg.k, "t_end": cfg.t_end, "dt": cfg.dt,
        "trajectories": cfg.trajectories, "seed": cfg.seed,
        "r_mean": [float(v) for v in r_mean],
        "r_se": [float(v) for v in r_se],
        "r_ode": [float(v) for v in r_ode],
        "trace_u_mean": tu_mean, "trace_u_se": tu_se,
        "trace_u_target": trace_target,
        "gram_mean": float(gram.mean()),
    }

    all_samples: List[SpectralSample] = list(samples)
    if p["rank_p"] is not None:
        csamples = list(simulate_compressed_jacobi(cfg, p["rank_p"], p["rank_q"]))
        rows = np.array([[float(np.mean(s.eigenvalues**j))
                          for j in range(1, p["n_moments"] + 1)]
                         for s in csamples])
        c_mean, c_se = simulation._mean_se(rows)
        cparams = JacobiParams(theta=p["rank_q"], lam=Fraction(1),
                               n_max=p["n_moments"],
                               init=(1.0,) * (p["n_moments"] + 1), k=None)
        c_ode = moments_at(cparams, [cfg.t_end], tol=1e-12).at(cfg.t_end)[1:]
        for j in range(p["n_moments"]):
            gap = abs(float(c_mean[j]) - float(c_ode[j]))
            checks.append(Check(
                f"compressed moment m_{j + 1} within {mult:g} standard errors",
                gap <= mult * float(c_se[j]), gap, mult * float(c_se[j])))
        results["compressed"] = {
            "rank": str(p["rank_p"]),
            "m_mean": [float(v) for v in c_mean],
            "m_se": [float(v) for v in c_se],
            "m_ode": [float(v) for v in c_ode],
        }
        all_samples += csamples

    sink.write_with("samples.csv", lambda path: samples_to_csv(all_samples, path))
    pooled = np.concatenate([s.eigenvalues for s in samples])
    sink.write_text("histogram.csv", emit_plot_data(
        "histogram", {"eigenvalues": pooled, "k": cfg.k, "bins": p["bins"]}))
    sink.write_text("moment_vs_t.csv", emit_plot_data(
        "moment-vs-t",
        {"ode": ode.r,
         "mc": {"t": cfg.t_end,
                "mean": [float(v) for v in r_mean],
                "se": [float(v) for v in r_se]}}))
    return checks, results


def _cmd_full_verify(spec: ExperimentSpec, sink: _ArtifactSink):
    p = spec.params
    k = p["k"]
    n_max = p["n_max"]
    t_end = p["t_end"]
    tol_ode = _tolerance(spec)
    with _config_errors("full-verify parameters"):
        params = JacobiParams.for_k(k, n_max)
        if t_end <= 0:
            raise ValueError("t_end must be positive")
        mc_cfg = SimConfig(N=p["mc_n"], k=k, t_end=p["mc_t_end"], dt=p["mc_dt"],
                           trajectories=p["mc_trajectories"], seed=spec.seed)

    checks: List[Check] = []

    def triangle() -> List[Check]:
        tables = jacobi_power_tables(min(n_max + 4, 12))
        bad = sum(1 for t in tables for j in range(t.n + 1)
                  if knj_from_table(t)[j] != knj_closed_form(t.n, j))
        return [Check("word triangle closed form (mismatches)", bad == 0, bad, 0)]

    def stationary_routes() -> List[Check]:
        cat = stationary_moments_catalan(k, n_max)
        app = stationary_moments_derivative_poly(k, n_max)
        bad = sum(1 for n in range(n_max + 1) if cat[n] != app[n])
        bad += sum(1 for n in range(1, n_max + 1)
                   if cat[n] != stationary_from_words(n, k))
        bad += sum(1 for n in range(n_max)
                   if cat[n] - cat[n + 1] != Fraction(
                       (k - 1) ** (n + 1) * catalan(n), k ** (2 * n + 1)))
        return [Check("stationary routes and difference law (mismatches)",
                      bad == 0, bad, 0)]

    def ode_routes() -> List[Check]:
        res = integrate_w_moments(k, n_max, t_end, dt_out=0.05, tol=1e-12)
        direct = integrate_moments(params, t_end, dt_out=0.05, tol=1e-12)
        gap = float(np.max(np.abs(res.r.values - direct.values)))
        m1 = float(np.max(np.abs(
            direct.values[:, 1] - _first_moment_closed_form(k, direct.t_grid))))
        return [Check("raw vs rescaled moment route max gap", gap < tol_ode,
                      gap, tol_ode),
                Check("first moment closed form", m1 < 1e-10, m1, 1e-10)]

    def inversion() -> List[Check]:
        horizon = min(t_end, 2.0)
        vec = integrate_moments(JacobiParams.for_k(k, 8), horizon,
                                dt_out=horizon / 8, tol=1e-12)
        rhos = extract_rho_moments(vec, k)
        round_gap = 0.0
        w1_gap = 0.0
        for t, row, rho in zip(vec.t_grid, vec.values, rhos):
            back = moment_row_from_rho(rho, k)
            round_gap = max(round_gap, max(
                abs(float(b) - float(v)) for b, v in zip(back, row)))
            w1 = w_sequence(rho, k)[1]
            w1_gap = max(w1_gap, abs(float(w1) - (k - 1) * math.exp(-float(t))))
        rho0_gap = max(
            abs(float(a) - float(b))
            for a, b in zip(rhos[0].coeffs, rho0_from_closed_form(k, 8).coeffs))
        out = [
            Check("triangular inversion roundtrip max gap",
                  round_gap < 1e-9, round_gap, 1e-9),
            Check("first word trace w_1 = (k-1)exp(-t)",
                  w1_gap < 1e-8, w1_gap, 1e-8),
            Check("inversion at t=0 vs closed-form series",
                  rho0_gap < 1e-7, rho0_gap, 1e-7),
        ]
        if k == 2:
            lag_gap = 0.0
            for t, rho in zip(vec.t_grid[1:], rhos[1:]):
                eta = eta_t2(float(t), 8)
                for j in range(1, 9):
                    lag_gap = max(lag_gap, abs(
                        float(rho.coeffs[j])
                        - math.exp(-j * float(t)) * float(eta.coeffs[j])))
            out.append(Check("k=2 inversion vs laguerre series",
                             lag_gap < 1e-7, lag_gap, 1e-7))
        return out

    def pde_residual() -> List[Check]:
        dt = 1e-3
        center = 0.5
        times = [center + i * dt for i in (-2, -1, 0, 1, 2)]
        vec = moments_at(JacobiParams.for_k(k, 8), times, tol=1e-12)
        snaps = extract_rho_moments(vec, k)[1:]
        residual = pde0_residual(snaps, dt, k)
        worst = float(np.max(residual))
        sink.write_text("pde0_residual.csv",
                        emit_plot_data("residual", {"residual": residual}))
        return [Check("transport equation coefficient residual",
                      worst < 1e-5, worst, 1e-5)]

    def characteristic() -> List[Check]:
        vec = integrate_moments(JacobiParams.for_k(k, 24), 0.5,
                                dt_out=0.00125, tol=1e-12)
        state = characteristic_trace(k, 0.05, 0.5, vec)
        out = [Check("characteristic conserved drift", state.drift < 1e-6,
                     state.drift, 1e-6)]
        if k == 2:
            curve = max(abs(z - k2_characteristic(0.05, t))
                        for t, z in zip(state.t_grid, state.z_path()))
            out.append(Check("explicit k=2 curve max gap",
                             curve < 1e-8, curve, 1e-8))
        return out

    def mgf() -> List[Check]:
        vec = integrate_moments(JacobiParams.for_k(k, 16), 1.0,
                                dt_out=0.25, tol=1e-12)
        gap = mgf_relation_check(vec, k, _MGF_SAMPLES)
        return [Check("generating function relation max gap",
                      gap < 1e-6, gap, 1e-6)]

    def cumulant_routes() -> List[Check]:
        alpha = Fraction(1, k)
        table = projection_cumulants(alpha, 10)
        oracle = cumulants_from_moments([Fraction(1)] + [alpha] * 10, 10)
        bad = sum(1 for n in range(1, 11) if table[n] != oracle[n])
        return [Check("projection cumulants dual route (mismatches)",
                      bad == 0, bad, 0)]

    def mp_identity() -> List[Check]:
        ok = mp_limit_check(12)["identity_exact"]
        return [Check("catalan factorial identity exact", bool(ok),
                      int(not ok), 0)]

    def complement() -> List[Check]:
        base = integrate_moments(JacobiParams.for_k(k, 6), 2.0,
                                 dt_out=0.25, tol=1e-12)
        transformed = complement_moments(base)
        direct = integrate_moments(
            JacobiParams(theta=Fraction(k - 1, k), lam=Fraction(1),
                         n_max=6, init=(1.0,) * 7, k=k),
            2.0, dt_out=0.25, tol=1e-12)
        gap = float(np.max(np.abs(transformed.values - direct.values)))
        return [Check("complement projection duality max gap",
                      gap < 1e-8, gap, 1e-8)]

    def monte_carlo() -> List[Check]:
        study = simulation.w_moment_study(mc_cfg, n_max=3, threads=spec.threads)
        ode = integrate_w_moments(k, 3, mc_cfg.t_end,
                                  t_grid=[0.0, mc_cfg.t_end], tol=1e-12)
        target = ode.r.at(mc_cfg.t_end)[1:]
        worst = max(abs(study["r_mean"][j] - float(target[j]))
                    / study["r_se"][j] for j in range(3))
        trace_ratio = (abs(study["trace_u_mean"] - math.exp(-mc_cfg.t_end / 2))
                       / study["trace_u_se"])
        return [
            Check("monte carlo radial moments (max gap / standard error)",
                  worst <= SE_MULTIPLIER, worst, SE_MULTIPLIER),
            Check("monte carlo unitary trace (gap / standard error)",
                  trace_ratio <= SE_MULTIPLIER, trace_ratio, SE_MULTIPLIER),
        ]

    blocks = [
        ("word triangle", triangle),
        ("stationary routes", stationary_routes),
        ("ode routes", ode_routes),
        ("inversion", inversion),
        ("pde residual", pde_residual),
        ("characteristic", characteristic),
        ("generating function relation", mgf),
        ("cumulants", cumulant_routes),
        ("catalan identity", mp_identity),
        ("complement duality", complement),
        ("monte carlo", monte_carlo),
    ]
    for name, fn in blocks:
        checks.extend(_guarded(name, fn))

    results = {"k": k, "n_max": n_max, "t_end": t_end,
               "monte_carlo": {"N": mc_cfg.N, "t_end": mc_cfg.t_end,
                               "dt": mc_cfg.dt,
                               "trajectories": mc_cfg.trajectories}}
    return checks, results


_HANDLERS = {
    "moments": _cmd_moments,
    "stationary": _cmd_stationary,
    "expansion-verify": _cmd_expansion_verify,
    "cumulants": _cmd_cumulants,
    "mgf-check": _cmd_mgf_check,
    "characteristics": _cmd_characteristics,
    "simulate": _cmd_simulate,
    "full-verify": _cmd_full_verify,
}


def run(spec: ExperimentSpec) -> int:
    """Execute one resolved experiment; returns the process exit status."""
    if spec.command not in _HANDLERS:
        raise ConfigError(f"unknown command {spec.command!r}")
    try:
        spec.output_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory: {exc}") from exc
    sink = _ArtifactSink(spec.output_dir)
    started = time.perf_counter()
    checks, results = _HANDLERS[spec.command](spec, sink)
    passed = all(c.passed for c in checks)
    summary = {
        "command": spec.command,
        "pass": passed,
        "checks": [c.row() for c in checks],
        "results": results,
    }
    sink.write_text("summary.json", _json_text(summary))
    manifest = {
        "command": spec.command,
        "seed": spec.seed,
        "config": spec.config_echo(),
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "freejacobi": __version__,
        },
        "wall_time_s": round(time.perf_counter() - started, 3),
        "artifacts": dict(sorted(sink.hashes.items())),
        "status": "pass" if passed else "fail",
    }
    sink.write_text("manifest.json", _json_text(manifest))
    for check in checks:
        flag = "PASS" if check.passed else "FAIL"
        print(f"[{flag}] {check.name}: value {check.value} budget {check.budget}")
    n_ok = sum(1 for c in checks if c.passed)
    print(f"{spec.command}: {'PASS' if passed else 'FAIL'} "
          f"({n_ok}/{len(checks)} checks) -> {spec.output_dir}")
    return EXIT_PASS if passed else EXIT_VERIFICATION_FAILURE


# ---------------------------------------------------------------------------
# Command line front end.

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="freejacobi",
        description=(
            "Verification runner for the free Jacobi process toolkit. "
            "Exit status: 0 all checks passed, 1 verification failure, "
            "2 configuration error."),
        epilog=CONFIG_SCHEMA,
        formatter_class=argparse.RawDescriptionHelpFormatter,
        allow_abbrev=False,
    )
    parser.add_argument("command", nargs="?", choices=COMMANDS,
                        help="pipeline to run (or set run.command in the config)")
    parser.add_argument("--config", metavar="FILE",
                        help="INI-style key = value configuration file")
    parser.add_argument("--print-config-schema", action="store_true",
                        help="print the configuration schema and exit")
    for key in _RUN_KEYS:
        if key.name == "command":
            continue
        parser.add_argument(f"--{key.name}", type=str, default=None,
                            metavar=key.kind.upper(), help=key.help)
    owners = _key_owners()
    for name, key in _union_keys().items():
        flag = "--" + name.replace("_", "-")
        parser.add_argument(flag, dest=name, type=str, default=None,
                            metavar=key.kind.upper(),
                            help=f"[{', '.join(owners[name])}] {key.help}")
    return parser


def build_spec(args: argparse.Namespace) -> ExperimentSpec:
    config = _load_config(args.config)
    command = args.command
    if command is None:
        raw = config.get("run", {}).get("command")
        if raw is None:
            raise ConfigError("no command given on the command line or in [run]")
        if raw not in COMMANDS:
            raise ConfigError(f"unknown command {raw!r} in [run]")
        command = raw
    owners = _key_owners()
    for name in _union_keys():
        if getattr(args, name, None) is not None and command not in owners[name]:
            raise ConfigError(
                f"--{name.replace('_', '-')} is not a parameter of {command}")
    run_values = {}
    for key in _RUN_KEYS:
        if key.name == "command":
            continue
        run_values[key.name] = _resolve_key(
            "run", key, getattr(args, key.name), config)
    if run_values["threads"] is not None and run_values["threads"] < 1:
        raise ConfigError("threads must be >= 1")
    params = {}
    for key in _COMMAND_KEYS[command]:
        params[key.name] = _resolve_key(
            command, key, getattr(args, key.name), config)
    return ExperimentSpec(
        command=command,
        params=params,
        output_dir=Path(run_values["out"]),
        seed=run_values["seed"],
        tolerance=run_values["tolerance"],
        threads=run_values["threads"],
    )


def main(argv: Sequence[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.print_config_schema:
        print(CONFIG_SCHEMA)
        return EXIT_PASS
    try:
        spec = build_spec(args)
        return run(spec)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR


if __name__ == "__main__":
    sys.exit(main())
