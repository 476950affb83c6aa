"""TOML experiment configuration: parsing, defaults and validation.

Sections: ``[grid]``, ``[system]``, ``[potential]``, ``[initial_state]``,
``[shift]``, ``[solver]`` and ``[output]`` plus the optional ``[lapse]`` and
``[sampler]``.  Every violation is collected before raising, so a single
:class:`ValidationError` lists all of them.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .core import GridSpec, ParticleSystem, ShiftVelocity, MAX_CONFIG_DIM
from .errors import BoundaryLeak, ConfigError, ParseError, UnresolvableWidth, ValidationError
from .evolution import LapseProfile, SolverParams, normalize_backend
from .observables import FAMILIES, PotentialSpec

POLICIES = ("fixed", "best-match-translation", "best-match-rotation", "best-match-both")
FACTORIES = ("gaussian", "vortex", "harmonic-ground", "corotating-pair")
LAPSE_KINDS = ("constant", "sine", "tabulated")

DEFAULTS: dict[str, dict[str, Any]] = {
    "grid": {"spatial_dim": 1, "particle_count": 1, "points_per_axis": 128, "axis_length": 32.0},
    "system": {"masses": [1.0], "hbar": 1.0, "eta": None},
    "potential": {"family": "free", "spring_constant": 1.0, "depth": 1.0, "width": 1.0, "trap_frequency": 1.0},
    "initial_state": {
        "factory": "gaussian",
        "centers": 0.0,
        "widths": 1.0,
        "wavevectors": 0.0,
        "width": 1.0,
        "charge": 1,
        "omega": 1.0,
        "zeta": 0.5,
        "center_frame": False,
    },
    "shift": {"policy": "fixed", "lambda_dot": None, "zeta_dot": None},
    "solver": {
        "dt": 0.01,
        "steps": 100,
        "backend": "split-step",
        "tolerance": 1e-13,
        "record_stride": 1,
        "checkpoint_stride": 0,
    },
    "output": {"directory": "ed-output"},
}
OPTIONAL_DEFAULTS = {
    "lapse": {
        "kind": "constant",
        "start": 0.0,
        "end": 1.0,
        "value": 1.0,
        "amplitude": 0.0,
        "frequency": 1.0,
        "phase": 0.0,
        "table_x": [],
        "table_beta": [],
        "label_steps": 100,
    },
    "sampler": {"chains": 100000, "seed": 0, "record_stride": 0, "noise_eta": None, "min_expected": 100.0},
}


@dataclass
class SamplerConfig:
    chains: int
    seed: int
    record_stride: int
    noise_eta: float | None
    min_expected: float


@dataclass
class ExperimentConfig:
    grid: GridSpec
    system: ParticleSystem
    potential: PotentialSpec
    initial_state: dict
    policy: str
    fixed_shift: ShiftVelocity
    solver: SolverParams
    checkpoint_stride: int
    output_dir: Path
    lapse: LapseProfile | None = None
    label_steps: int = 0
    sampler: SamplerConfig | None = None
    resolved: dict = field(default_factory=dict)
    source: Path | None = None

    @property
    def rotational(self) -> bool:
        return self.policy in ("best-match-rotation", "best-match-both")


def _merge(raw: dict) -> dict:
    out = copy.deepcopy(DEFAULTS)
    for name, block in OPTIONAL_DEFAULTS.items():
        if name in raw:
            out[name] = copy.deepcopy(block)
    for section, values in raw.items():
        if section not in out:
            out[section] = values
            continue
        if not isinstance(values, dict):
            out[section] = values
            continue
        out[section].update(values)
    return out


class _Collector:
    def __init__(self):
        self.violations: list[tuple[str, str]] = []

    def add(self, name, message):
        self.violations.append((name, message))

    def number(self, section, key, value, positive=False, nonneg=False, integer=False):
        name = f"{section}.{key}"
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.add(name, f"expected a number, got {value!r}")
            return None
        if integer and not float(value).is_integer():
            self.add(name, "expected an integer")
            return None
        if not math.isfinite(value):
            self.add(name, "must be finite")
            return None
        if positive and not value > 0:
            self.add(name, "must be positive")
            return None
        if nonneg and value < 0:
            self.add(name, "must be nonnegative")
            return None
        return int(value) if integer else float(value)

    def numbers(self, section, key, value, positive=False, allow_scalar=True):
        name = f"{section}.{key}"
        items = value if isinstance(value, list) else ([value] if allow_scalar else None)
        if items is None:
            self.add(name, "expected a list of numbers")
            return None
        out = []
        for i, v in enumerate(items):
            if isinstance(v, list):
                sub = self.numbers(section, f"{key}[{i}]", v, positive)
                if sub is None:
                    return None
                out.extend(sub)
                continue
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                self.add(name, f"entry {i} is not a finite number")
                return None
            if positive and not v > 0:
                self.add(name, f"entry {i} must be positive")
                return None
            out.append(float(v))
        return out


def _check_unknown(c: _Collector, merged: dict):
    known = set(DEFAULTS) | set(OPTIONAL_DEFAULTS)
    for section, block in merged.items():
        if section not in known:
            c.add(section, "unknown section")
            continue
        if not isinstance(block, dict):
            c.add(section, "expected a table")
            continue
        allowed = DEFAULTS.get(section) or OPTIONAL_DEFAULTS[section]
        for key in block:
            if key not in allowed:
                c.add(f"{section}.{key}", "unknown key")


def validate(raw: dict, source: Path | None = None) -> ExperimentConfig:
    merged = _merge(raw)
    c = _Collector()
    _check_unknown(c, merged)
    if c.violations:
        raise ValidationError(c.violations)

    g = merged["grid"]
    d = c.number("grid", "spatial_dim", g["spatial_dim"], integer=True)
    n = c.number("grid", "particle_count", g["particle_count"], integer=True)
    if d is not None and d not in (1, 2, 3):
        c.add("grid.spatial_dim", "must be 1, 2 or 3")
        d = None
    if n is not None and n < 1:
        c.add("grid.particle_count", "must be >= 1")
        n = None
    if d is not None and n is not None and d * n > MAX_CONFIG_DIM:
        c.add("grid", f"configuration dimension {d * n} exceeds {MAX_CONFIG_DIM}")
    pts = c.numbers("grid", "points_per_axis", g["points_per_axis"])
    if pts is not None and any(p < 8 or not float(p).is_integer() for p in pts):
        c.add("grid.points_per_axis", "every entry must be an integer >= 8")
    lengths = c.numbers("grid", "axis_length", g["axis_length"], positive=True)

    s = merged["system"]
    masses = c.numbers("system", "masses", s["masses"], positive=True)
    hbar = c.number("system", "hbar", s["hbar"], positive=True)
    eta = None if s["eta"] is None else c.number("system", "eta", s["eta"], positive=True)
    if masses is not None and n is not None and len(masses) not in (1, n):
        c.add("system.masses", f"expected 1 or {n} masses, got {len(masses)}")

    p = merged["potential"]
    family = p["family"]
    if family not in FAMILIES:
        c.add("potential.family", f"must be one of {', '.join(FAMILIES)}")
    for key in ("spring_constant", "depth", "trap_frequency"):
        c.number("potential", key, p[key])
    c.number("potential", "width", p["width"], positive=True)

    init = merged["initial_state"]
    factory = init["factory"]
    if factory not in FACTORIES:
        c.add("initial_state.factory", f"must be one of {', '.join(FACTORIES)}")
    if factory in ("vortex", "corotating-pair") and d is not None and d < 2:
        c.add("initial_state.factory", f"{factory} needs spatial_dim >= 2")
    if factory == "corotating-pair" and (d != 2 or n != 2):
        c.add("initial_state.factory", "corotating-pair needs two particles in two dimensions")
    if not isinstance(init["center_frame"], bool):
        c.add("initial_state.center_frame", "expected true or false")

    sh = merged["shift"]
    policy = sh["policy"]
    if policy not in POLICIES:
        c.add("shift.policy", f"must be one of {', '.join(POLICIES)}")
    rotational = policy in ("best-match-rotation", "best-match-both")
    if d == 1:
        if rotational:
            c.add("shift.zeta_dot", f"policy {policy} needs rotations, which are undefined for spatial_dim 1")
        elif sh["zeta_dot"] is not None:
            c.add("shift.zeta_dot", "rotation rate is undefined for spatial_dim 1")
    lam = None
    if sh["lambda_dot"] is not None:
        lam = c.numbers("shift", "lambda_dot", sh["lambda_dot"])
        if lam is not None and d is not None and len(lam) != d:
            c.add("shift.lambda_dot", f"expected {d} components")
            lam = None
    zeta = None
    if sh["zeta_dot"] is not None and d in (2, 3):
        zeta = c.numbers("shift", "zeta_dot", sh["zeta_dot"])
        if zeta is not None and len(zeta) != (1 if d == 2 else 3):
            c.add("shift.zeta_dot", f"expected {'1' if d == 2 else '3'} components for spatial_dim {d}")
            zeta = None
    if policy != "fixed" and (sh["lambda_dot"] is not None or sh["zeta_dot"] is not None):
        c.add("shift", f"policy {policy} computes the shift; remove lambda_dot and zeta_dot")

    so = merged["solver"]
    dt = c.number("solver", "dt", so["dt"], positive=True)
    steps = c.number("solver", "steps", so["steps"], nonneg=True, integer=True)
    tol = c.number("solver", "tolerance", so["tolerance"], positive=True)
    stride = c.number("solver", "record_stride", so["record_stride"], positive=True, integer=True)
    ck = c.number("solver", "checkpoint_stride", so["checkpoint_stride"], nonneg=True, integer=True)
    backend = None
    try:
        backend = normalize_backend(so["backend"])
    except (ValueError, TypeError):
        c.add("solver.backend", "must be split-step or crank-nicolson")

    lapse = None
    label_steps = 0
    if "lapse" in merged:
        la = merged["lapse"]
        if la["kind"] not in LAPSE_KINDS:
            c.add("lapse.kind", f"must be one of {', '.join(LAPSE_KINDS)}")
        label_steps = c.number("lapse", "label_steps", la["label_steps"], positive=True, integer=True) or 0
        vals = {k: la[k] for k in ("start", "end", "value", "amplitude", "frequency", "phase")}
        ok = all(c.number("lapse", k, v) is not None for k, v in vals.items())
        if ok and la["kind"] in LAPSE_KINDS:
            try:
                lapse = LapseProfile(kind=la["kind"], table_x=la["table_x"], table_beta=la["table_beta"], **vals)
            except (ValueError, TypeError) as exc:
                c.add("lapse", str(exc))

    sampler = None
    if "sampler" in merged:
        sa = merged["sampler"]
        chains = c.number("sampler", "chains", sa["chains"], positive=True, integer=True)
        seed = c.number("sampler", "seed", sa["seed"], nonneg=True, integer=True)
        rs = c.number("sampler", "record_stride", sa["record_stride"], nonneg=True, integer=True)
        ne = None if sa["noise_eta"] is None else c.number("sampler", "noise_eta", sa["noise_eta"], positive=True)
        me = c.number("sampler", "min_expected", sa["min_expected"], positive=True)
        if None not in (chains, seed, rs, me):
            sampler = SamplerConfig(chains, seed, rs, ne, me)

    out = merged["output"]
    if not isinstance(out["directory"], str) or not out["directory"]:
        c.add("output.directory", "expected a nonempty path string")

    if c.violations:
        raise ValidationError(c.violations)

    try:
        grid = GridSpec(d, n, [int(v) for v in pts], lengths)
    except ValueError as exc:
        raise ValidationError([("grid", str(exc))]) from None
    if len(masses) == 1:
        masses = masses * n
    system = ParticleSystem(masses, hbar, eta)
    potential = PotentialSpec(family, float(p["spring_constant"]), float(p["depth"]), float(p["width"]), float(p["trap_frequency"]))
    if policy == "fixed":
        if d == 1:
            fixed = ShiftVelocity(lam if lam is not None else [0.0])
        else:
            z = zeta[0] if (zeta is not None and d == 2) else zeta
            fixed = ShiftVelocity(lam if lam is not None else [0.0] * d, z)
    else:
        fixed = ShiftVelocity.zero(d)
    solver = SolverParams(dt, backend, steps, tol, stride)
    resolved = copy.deepcopy(merged)
    resolved["system"]["masses"] = list(system.masses)
    resolved["system"]["eta"] = system.eta
    resolved["solver"]["backend"] = backend
    return ExperimentConfig(
        grid=grid,
        system=system,
        potential=potential,
        initial_state=dict(init),
        policy=policy,
        fixed_shift=fixed,
        solver=solver,
        checkpoint_stride=ck,
        output_dir=Path(out["directory"]),
        lapse=lapse,
        label_steps=label_steps,
        sampler=sampler,
        resolved=resolved,
        source=source,
    )


def parse_config_text(text: str, source: Path | None = None) -> ExperimentConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ParseError(getattr(exc, "msg", str(exc)), getattr(exc, "lineno", None), getattr(exc, "colno", None)) from None
    return validate(raw, source)


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        line = data[: exc.start].count(b"\n") + 1
        col = exc.start - (data.rfind(b"\n", 0, exc.start) + 1) + 1
        raise ParseError("file is not valid UTF-8", line, col) from None
    return parse_config_text(text, path)


def build_initial_state(config: ExperimentConfig):
    """Construct the initial wave function; factory failures become ValidationError.

    Returns ``(psi, potential)``; the corotating pair fixes its own spring
    constant, which overrides the configured one.
    """
    from .best_matching import center_state, corotating_pair_state
    from .core import gaussian_packet, harmonic_ground_state, vortex_state

    init = config.initial_state
    g, s = config.grid, config.system
    potential = config.potential
    factory = init["factory"]
    try:
        if factory == "gaussian":
            psi = gaussian_packet(g, s, init["centers"], init["widths"], init["wavevectors"])
        elif factory == "harmonic-ground":
            psi = harmonic_ground_state(g, s, float(init["omega"]))
        elif factory == "vortex":
            psi = vortex_state(g, float(init["width"]), int(init["charge"]))
        else:
            psi, spring = corotating_pair_state(g, s, float(init["zeta"]))
            potential = PotentialSpec("pair-spring", spring_constant=spring)
    except (UnresolvableWidth, BoundaryLeak, ValueError) as exc:
        raise ValidationError([("initial_state", str(exc))]) from None
    if init["center_frame"]:
        psi = center_state(psi, s)
    return psi, potential
