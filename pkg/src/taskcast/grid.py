"""Power-system data model: generators, lines, load split, dispatch constraints.

Conventions used throughout the package:

* A dispatch schedule is an array of shape ``(T, n_gen)``; its flattened
  form ``vec(P)`` is hour-major (``reshape(-1)`` in C order), i.e. entry
  ``t * n_gen + g``.
* All inequality constraints are written ``G @ vec(P) <= h``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

LOAD_FACTOR_TOL = 1e-9
LOAD_FACTOR_RENORM_TOL = 1e-6


class SystemValidationError(ValueError):
    """Raised when a system description violates one or more invariants.

    Carries the full list of violations in ``problems``.
    """

    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass(frozen=True)
class Generator:
    """A thermal unit with quadratic cost a*P^2 + b*P + c ($/h, P in MW)."""

    id: str
    bus: str
    a: float
    b: float
    c: float
    p_min: float
    p_max: float
    ramp_up: float
    ramp_down: float
    p_initial: float | None = None


@dataclass(frozen=True)
class Line:
    """A transmission corridor described by per-bus shift factors.

    ``flow = sum_m shift_factors[m] * (generation at m - load at m)``,
    limited to ``|flow| <= flow_limit``.
    """

    id: str
    shift_factors: tuple[float, ...]
    flow_limit: float


@dataclass(frozen=True)
class SystemConfig:
    """Validated static description of the dispatched system.

    ``load_factors`` splits the (scalar) system load across buses and must
    sum to one.  ``lambda_s``/``lambda_e``/``lambda_l`` price generation
    shortage, excess, and line-limit violations in $/MWh.
    """

    buses: tuple[str, ...]
    generators: tuple[Generator, ...]
    lines: tuple[Line, ...]
    load_factors: tuple[float, ...]
    lambda_s: float
    lambda_e: float
    lambda_l: float
    horizon: int = 24

    @property
    def n_gen(self) -> int:
        return len(self.generators)

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    def bus_index(self, bus: str) -> int:
        return self.buses.index(bus)

    def gen_bus_incidence(self) -> np.ndarray:
        """(n_bus, n_gen) 0/1 matrix mapping generator outputs to bus injections."""
        inc = np.zeros((self.n_bus, self.n_gen))
        for g, gen in enumerate(self.generators):
            inc[self.bus_index(gen.bus), g] = 1.0
        return inc

    def line_gamma(self, line: Line) -> float:
        """Net load sensitivity of a line: sum_m shift_factor[m] * load_factor[m]."""
        return float(np.dot(line.shift_factors, self.load_factors))

    def flow_matrix(self) -> np.ndarray:
        """(n_line, n_gen) matrix mapping a dispatch hour to the generation
        part of each line flow."""
        gamma_rows = np.array([ln.shift_factors for ln in self.lines])
        return gamma_rows @ self.gen_bus_incidence()


@dataclass(frozen=True)
class ConstraintSet:
    """Stacked linear inequalities ``g_matrix @ vec(P) <= h_vector``.

    Row order: ramp-up rows (generator-major, hour ascending), ramp-down
    rows (same grouping), upper box rows in vec order, lower box rows in
    vec order.  Hour-1 ramp rows exist only for generators with an initial
    output.
    """

    g_matrix: np.ndarray
    h_vector: np.ndarray


def validate_system(raw: SystemConfig) -> SystemConfig:
    """Check every invariant of a system description, reporting all failures.

    Load factors are renormalized only when their sum is within 1e-6 of one
    but outside the 1e-9 acceptance band, which makes validation idempotent.
    """
    problems: list[str] = []
    if len(set(raw.buses)) != len(raw.buses):
        problems.append("duplicate bus identifiers")
    if raw.horizon < 1:
        problems.append(f"horizon must be >= 1, got {raw.horizon}")

    for gen in raw.generators:
        if gen.bus not in raw.buses:
            problems.append(f"generator {gen.id}: unknown bus {gen.bus!r}")
        if gen.p_min > gen.p_max:
            problems.append(
                f"generator {gen.id}: bounds inverted (p_min={gen.p_min} > p_max={gen.p_max})"
            )
        if gen.ramp_up <= 0 or gen.ramp_down <= 0:
            problems.append(f"generator {gen.id}: ramp limits must be positive")
        if gen.a < 0:
            problems.append(f"generator {gen.id}: negative quadratic cost coefficient")

    if len(raw.load_factors) != len(raw.buses):
        problems.append(
            f"load_factors has {len(raw.load_factors)} entries for {len(raw.buses)} buses"
        )
        factors = None
    else:
        factors = np.asarray(raw.load_factors, dtype=float)
        total = factors.sum()
        if abs(total - 1.0) <= LOAD_FACTOR_TOL:
            pass
        elif abs(total - 1.0) <= LOAD_FACTOR_RENORM_TOL:
            factors = factors / total
        else:
            problems.append(f"load_factors sum to {total!r}, expected 1")

    for lam_name in ("lambda_s", "lambda_e", "lambda_l"):
        if getattr(raw, lam_name) < 0:
            problems.append(f"negative penalty coefficient {lam_name}")

    for line in raw.lines:
        if line.flow_limit <= 0:
            problems.append(f"line {line.id}: flow_limit must be positive")
        if len(line.shift_factors) != len(raw.buses):
            problems.append(
                f"line {line.id}: {len(line.shift_factors)} shift factors for "
                f"{len(raw.buses)} buses"
            )
        elif factors is not None:
            gamma = float(np.dot(line.shift_factors, factors))
            scale = max(1.0, float(np.abs(line.shift_factors).max()))
            if abs(gamma) <= 1e-12 * scale:
                problems.append(
                    f"line {line.id}: degenerate line coefficient "
                    "(shift factors orthogonal to load split)"
                )

    if problems:
        raise SystemValidationError(problems)

    assert factors is not None
    return replace(raw, load_factors=tuple(float(f) for f in factors))


def line_flow(p_hour: np.ndarray, y: float, system: SystemConfig, line: Line) -> float:
    """Flow on ``line`` for one hour of dispatch against realized load ``y``."""
    p_hour = np.asarray(p_hour, dtype=float)
    if p_hour.shape != (system.n_gen,):
        raise ValueError(f"expected {system.n_gen} generator outputs, got {p_hour.shape}")
    inc = system.gen_bus_incidence()
    injections = inc @ p_hour - np.asarray(system.load_factors) * y
    return float(np.dot(line.shift_factors, injections))


def build_constraints(system: SystemConfig) -> ConstraintSet:
    """Assemble ramp and box constraints as a single ``G p <= h`` stack."""
    t_hours = system.horizon
    n_gen = system.n_gen
    n_var = t_hours * n_gen

    def var(t: int, g: int) -> int:
        return t * n_gen + g

    rows: list[np.ndarray] = []
    rhs: list[float] = []

    # Ramp-up: P[t] - P[t-1] <= ramp_up; hour-1 row only with an initial output.
    for g, gen in enumerate(system.generators):
        if gen.p_initial is not None:
            row = np.zeros(n_var)
            row[var(0, g)] = 1.0
            rows.append(row)
            rhs.append(gen.ramp_up + gen.p_initial)
        for t in range(1, t_hours):
            row = np.zeros(n_var)
            row[var(t, g)] = 1.0
            row[var(t - 1, g)] = -1.0
            rows.append(row)
            rhs.append(gen.ramp_up)

    # Ramp-down: P[t-1] - P[t] <= ramp_down.
    for g, gen in enumerate(system.generators):
        if gen.p_initial is not None:
            row = np.zeros(n_var)
            row[var(0, g)] = -1.0
            rows.append(row)
            rhs.append(gen.ramp_down - gen.p_initial)
        for t in range(1, t_hours):
            row = np.zeros(n_var)
            row[var(t, g)] = -1.0
            row[var(t - 1, g)] = 1.0
            rows.append(row)
            rhs.append(gen.ramp_down)

    # Boxes, in vec order: upper bounds then lower bounds.
    eye = np.eye(n_var)
    p_max = np.array([gen.p_max for gen in system.generators])
    p_min = np.array([gen.p_min for gen in system.generators])
    g_matrix = np.vstack(rows + [eye, -eye]) if rows else np.vstack([eye, -eye])
    h_vector = np.concatenate(
        [np.array(rhs), np.tile(p_max, t_hours), -np.tile(p_min, t_hours)]
    )
    g_matrix.flags.writeable = False
    h_vector.flags.writeable = False
    return ConstraintSet(g_matrix=g_matrix, h_vector=h_vector)


def system_from_json(path) -> SystemConfig:
    """Read and validate a system description from a JSON document.

    Expected top-level keys: ``buses``, ``generators``, ``lines``,
    ``load_factors`` (per-bus list, bus-name mapping, or a scalar for a
    uniform split), ``penalties`` with ``lambda_s``/``lambda_e``/``lambda_l``,
    and optional ``horizon``.
    """
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return system_from_dict(doc)


def system_from_dict(doc: dict) -> SystemConfig:
    buses = tuple(str(b) for b in doc["buses"])
    gens = tuple(
        Generator(
            id=str(g["id"]),
            bus=str(g["bus"]),
            a=float(g["a"]),
            b=float(g["b"]),
            c=float(g["c"]),
            p_min=float(g["p_min"]),
            p_max=float(g["p_max"]),
            ramp_up=float(g["ramp_up"]),
            ramp_down=float(g["ramp_down"]),
            p_initial=None if g.get("p_initial") is None else float(g["p_initial"]),
        )
        for g in doc["generators"]
    )
    lines = tuple(
        Line(
            id=str(ln["id"]),
            shift_factors=tuple(float(s) for s in ln["shift_factors"]),
            flow_limit=float(ln["flow_limit"]),
        )
        for ln in doc["lines"]
    )
    raw_factors = doc["load_factors"]
    if isinstance(raw_factors, (int, float)):
        load_factors = tuple(1.0 / len(buses) for _ in buses)
    elif isinstance(raw_factors, dict):
        load_factors = tuple(float(raw_factors[b]) for b in buses)
    else:
        load_factors = tuple(float(f) for f in raw_factors)
    pen = doc["penalties"]
    config = SystemConfig(
        buses=buses,
        generators=gens,
        lines=lines,
        load_factors=load_factors,
        lambda_s=float(pen["lambda_s"]),
        lambda_e=float(pen["lambda_e"]),
        lambda_l=float(pen["lambda_l"]),
        horizon=int(doc.get("horizon", 24)),
    )
    return validate_system(config)


def system_to_dict(system: SystemConfig) -> dict:
    return {
        "buses": list(system.buses),
        "generators": [
            {
                "id": g.id,
                "bus": g.bus,
                "a": g.a,
                "b": g.b,
                "c": g.c,
                "p_min": g.p_min,
                "p_max": g.p_max,
                "ramp_up": g.ramp_up,
                "ramp_down": g.ramp_down,
                "p_initial": g.p_initial,
            }
            for g in system.generators
        ],
        "lines": [
            {
                "id": ln.id,
                "shift_factors": list(ln.shift_factors),
                "flow_limit": ln.flow_limit,
            }
            for ln in system.lines
        ],
        "load_factors": list(system.load_factors),
        "penalties": {
            "lambda_s": system.lambda_s,
            "lambda_e": system.lambda_e,
            "lambda_l": system.lambda_l,
        },
        "horizon": system.horizon,
    }
