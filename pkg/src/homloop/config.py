"""Experiment configuration: flat sectioned key-value text.

The format is INI-style (configparser dialect) with JSON array literals for
grids and semicolon-separated "i j coeff" triples for inline polynomial
fields, so system definitions stay declarative and diffable.
"""
from __future__ import annotations

import configparser
import io
import json
from dataclasses import dataclass, field
from typing import Optional

from .fields import Perturbation, PolyField, PolyScalar, TimeFactor
from .psys import PiecewiseSystem, builtin_perturbation, builtin_system, make_system


class ConfigParse(ValueError):
    """Malformed experiment configuration."""


@dataclass
class ExperimentConfig:
    system_name: str = "duffing"
    perturbation: Optional[str] = None
    epsilon: float = 0.0
    mu: Optional[float] = None
    beta: Optional[float] = None
    varpi: Optional[float] = None
    d_grid: list[float] = field(default_factory=lambda: [1e-2, 3e-3, 1e-3, 3e-4, 1e-4])
    tau_grid: list[float] = field(default_factory=lambda: [0.0])
    alpha_grid_n: int = 64
    alpha_span: list[float] = field(default_factory=lambda: [0.0, 6.283185307179586])
    directions: list[str] = field(default_factory=lambda: ["fwd", "bwd"])
    eps_grid: list[float] = field(default_factory=list)
    n_loops: int = 6
    seed: int = 0
    rtol: float = 3e-14
    atol: float = 1e-16
    crossing_tol: float = 1e-12
    transversality_floor: float = 1e-8
    inline_system: Optional[dict] = None

    def validate(self) -> None:
        if not self.d_grid or any(d <= 0 for d in self.d_grid):
            raise ConfigParse("d_grid must be nonempty with positive entries")
        if self.epsilon < 0:
            raise ConfigParse("epsilon must be nonnegative")
        if self.mu is not None and self.mu <= 0:
            raise ConfigParse("mu must be positive")
        if not self.tau_grid:
            raise ConfigParse("tau_grid must be nonempty")

    def build_system(self, epsilon: Optional[float] = None) -> PiecewiseSystem:
        eps = self.epsilon if epsilon is None else epsilon
        if self.inline_system is not None:
            return _system_from_inline(self.inline_system, self.perturbation, eps)
        pert = self.perturbation
        return builtin_system(self.system_name, epsilon=eps, perturbation=pert)


def _parse_coeffs(text: str) -> dict[tuple[int, int], float]:
    out: dict[tuple[int, int], float] = {}
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        parts = chunk.split()
        if len(parts) != 3:
            raise ConfigParse(f"coefficient entry {chunk!r} is not 'i j value'")
        i, j, c = int(parts[0]), int(parts[1]), float(parts[2])
        out[(i, j)] = out.get((i, j), 0.0) + c
    return out


def _field_from_section(sec) -> PolyField:
    return PolyField(
        f1=_parse_coeffs(sec.get("x1", "")),
        f2=_parse_coeffs(sec.get("x2", "")),
    )


def _system_from_inline(inline: dict, pert_name: Optional[str], eps: float) -> PiecewiseSystem:
    f_plus = inline["f_plus"]
    f_minus = inline.get("f_minus", f_plus)
    G = inline["G"]
    pert = inline.get("g")
    if pert is None and pert_name:
        pert = builtin_perturbation(pert_name)
    return make_system(
        f_plus, f_minus, G, perturbation=pert, epsilon=eps,
        name=inline.get("name", "inline"),
    )


def _get_list(raw: str, what: str) -> list:
    try:
        val = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigParse(f"{what}: expected a JSON array literal, got {raw!r}") from exc
    if not isinstance(val, list):
        raise ConfigParse(f"{what}: expected an array")
    return val


def load_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigParse(str(exc)) from exc

    cfg = ExperimentConfig()
    if cp.has_section("system"):
        sec = cp["system"]
        cfg.system_name = sec.get("name", cfg.system_name)
        cfg.perturbation = sec.get("perturbation", cfg.perturbation) or None
        cfg.epsilon = sec.getfloat("epsilon", cfg.epsilon)
    inline: dict = {}
    if cp.has_section("system.f_plus"):
        inline["f_plus"] = _field_from_section(cp["system.f_plus"])
    if cp.has_section("system.f_minus"):
        inline["f_minus"] = _field_from_section(cp["system.f_minus"])
    if cp.has_section("system.G"):
        inline["G"] = PolyScalar(c=_parse_coeffs(cp["system.G"].get("c", "")))
    if cp.has_section("system.g"):
        sec = cp["system.g"]
        inline["g"] = Perturbation(
            spatial=_field_from_section(sec),
            time_factor=TimeFactor(
                a_cos=sec.getfloat("a_cos", 0.0),
                b_sin=sec.getfloat("b_sin", 0.0),
                const=sec.getfloat("const", 0.0),
                omega=sec.getfloat("omega", 1.0),
            ),
        )
    if inline:
        if "f_plus" not in inline or "G" not in inline:
            raise ConfigParse("inline systems need at least [system.f_plus] and [system.G]")
        inline["name"] = cfg.system_name
        cfg.inline_system = inline

    if cp.has_section("params"):
        sec = cp["params"]
        for key in ("mu", "beta", "varpi"):
            if sec.get(key):
                setattr(cfg, key, sec.getfloat(key))
        if sec.get("d_grid"):
            cfg.d_grid = [float(x) for x in _get_list(sec["d_grid"], "d_grid")]
        if sec.get("tau_grid"):
            cfg.tau_grid = [float(x) for x in _get_list(sec["tau_grid"], "tau_grid")]
        if sec.get("eps_grid"):
            cfg.eps_grid = [float(x) for x in _get_list(sec["eps_grid"], "eps_grid")]
        if sec.get("directions"):
            cfg.directions = [str(x) for x in _get_list(sec["directions"], "directions")]
        cfg.alpha_grid_n = sec.getint("alpha_grid_n", cfg.alpha_grid_n)
        if sec.get("alpha_span"):
            cfg.alpha_span = [float(x) for x in _get_list(sec["alpha_span"], "alpha_span")]
        cfg.n_loops = sec.getint("n_loops", cfg.n_loops)
        cfg.seed = sec.getint("seed", cfg.seed)

    if cp.has_section("tolerances"):
        sec = cp["tolerances"]
        cfg.rtol = sec.getfloat("rtol", cfg.rtol)
        cfg.atol = sec.getfloat("atol", cfg.atol)
        cfg.crossing_tol = sec.getfloat("crossing", cfg.crossing_tol)
        cfg.transversality_floor = sec.getfloat(
            "transversality_floor", cfg.transversality_floor
        )

    cfg.validate()
    return cfg


def load_config_file(path: str) -> ExperimentConfig:
    with io.open(path, "r", encoding="utf-8") as fh:
        return load_config(fh.read())
