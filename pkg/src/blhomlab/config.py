"""Strict experiment configuration files.

Configs are JSON objects; unknown keys are rejected at every level. Errors
are reported with the line of the offending key in the source file.
"""

from __future__ import annotations

import json
import math
import re
from pathlib import Path
from typing import Annotated, Literal, Union

from pydantic import BaseModel, ConfigDict, Field, TypeAdapter, ValidationError, model_validator

from .blsolver import FourierBoundaryData
from .cell import NAMED_COEFFICIENTS, PeriodicCoefficients, named_coefficients
from .geometry import NormalFrame, axis_frame, build_frame, golden_frame, liouville_direction


class ConfigError(ValueError):
    """Invalid configuration; ``str()`` is the line-anchored message."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class FrameSpec(_Strict):
    named: Literal["axis", "golden", "liouville"] | None = None
    normal: list[float] | None = None
    levels: int = 3
    offset: float = 0.0

    @model_validator(mode="after")
    def _one_of(self):
        if (self.named is None) == (self.normal is None):
            raise ValueError("give exactly one of 'named' or 'normal'")
        return self

    def build(self) -> NormalFrame:
        if self.normal is not None:
            return build_frame(self.normal, self.offset)
        if self.named == "axis":
            return axis_frame(2, self.offset)
        if self.named == "golden":
            return golden_frame(self.offset)
        return liouville_direction(self.levels, self.offset)


class CoefficientSpec(_Strict):
    name: Literal[NAMED_COEFFICIENTS] = "identity"  # type: ignore[valid-type]
    grid: int = 64

    def build(self) -> PeriodicCoefficients:
        return named_coefficients(self.name, self.grid)


class Term(_Strict):
    kind: Literal["cos", "sin", "const"]
    xi: tuple[int, int] = (0, 0)
    amplitude: float = 1.0


class Mode(_Strict):
    xi: tuple[int, int]
    re: float
    im: float = 0.0


class DataSpec(_Strict):
    terms: list[Term] = []
    modes: list[Mode] = []
    named: Literal["twenty_modes"] | None = None

    def build(self) -> FourierBoundaryData:
        out = FourierBoundaryData.constant(0.0)
        if self.named == "twenty_modes":
            out = out + twenty_modes()
        for t in self.terms:
            if t.kind == "cos":
                out = out + FourierBoundaryData.cosine(t.xi, t.amplitude)
            elif t.kind == "sin":
                out = out + FourierBoundaryData.sine(t.xi, t.amplitude)
            else:
                out = out + FourierBoundaryData.constant(t.amplitude)
        if self.modes:
            out = out + FourierBoundaryData.from_modes([(m.xi, complex(m.re, m.im)) for m in self.modes])
        return out


def twenty_modes() -> FourierBoundaryData:
    """The 20 modes with ``0 < |xi|^2 <= 5`` and ``vhat(xi) = exp(-|xi|^2)``."""
    modes = {}
    for a in range(-2, 3):
        for b in range(-2, 3):
            n2 = a * a + b * b
            if 0 < n2 <= 5:
                modes[(a, b)] = math.exp(-n2)
    return FourierBoundaryData.from_modes(modes)


class GridSpec(_Strict):
    n_theta: int = Field(64, ge=4)
    nt: int = Field(512, ge=2)
    T: float = Field(6.0, gt=0)


class _Base(_Strict):
    output: str | None = None
    tolerance: float = Field(1e-7, gt=0)


class E1Config(_Base):
    experiment: Literal["E1"]
    frame: FrameSpec = FrameSpec(named="axis")
    coefficients: CoefficientSpec = CoefficientSpec()
    data: DataSpec = DataSpec(terms=[Term(kind="sin", xi=(1, 0))])
    grid: GridSpec = GridSpec()
    sup_tolerance: float = 1e-4
    kappa_rel_tolerance: float = 0.05
    tail_tolerance: float = 1e-4


class E2Config(_Base):
    experiment: Literal["E2"]
    frame: FrameSpec = FrameSpec(named="golden")
    data: DataSpec = DataSpec(named="twenty_modes")
    m_list: list[int] = [1, 2, 3, 4]
    t_min: float = 1.0
    t_max: float = 50.0
    t_samples: int = Field(2000, ge=20)
    parseval_grid: int = 128
    parseval_tolerance: float = 1e-10
    scan_radius: int = 100


class E3Config(_Base):
    experiment: Literal["E3"]
    frame: FrameSpec = FrameSpec(named="liouville", levels=3)
    l_list: list[float] = [1.0, 2.0]
    M_max: int = Field(3, ge=1)
    search_radius: int = Field(10_000, ge=1)
    variant: Literal["L2", "Linf"] = "L2"
    R: float = 1.0


class E4Config(_Base):
    experiment: Literal["E4"]
    frame: FrameSpec = FrameSpec(named="golden")
    data: DataSpec = DataSpec(terms=[Term(kind="cos", xi=(1, 0)), Term(kind="cos", xi=(0, 1), amplitude=0.5),
                                     Term(kind="const", amplitude=0.2)])
    offsets: list[float] = [0.0, 0.3, 0.7]
    grid: GridSpec = GridSpec(n_theta=32, nt=256, T=8.0)
    spread_factor: float = 5.0
    rational_frame: FrameSpec = FrameSpec(named="axis")
    rational_data: DataSpec = DataSpec(terms=[Term(kind="cos", xi=(0, 1))])
    rational_offsets: list[float] = [0.0, 0.25]
    rational_expected_difference: float = 1.0


class E5Config(_Base):
    experiment: Literal["E5"]
    coefficients: CoefficientSpec = CoefficientSpec(name="layered", grid=256)
    a0_tolerance: float = 1e-6
    residual_tolerance: float = 1e-8


class E6Config(_Base):
    experiment: Literal["E6"]
    coefficients: CoefficientSpec = CoefficientSpec(name="layered", grid=64)
    eps_list: list[float] = [0.125, 0.0625, 0.03125]
    L: float = 1.0
    min_slope: float = 0.8


ExperimentConfig = Annotated[Union[E1Config, E2Config, E3Config, E4Config, E5Config, E6Config],
                             Field(discriminator="experiment")]
_ADAPTER = TypeAdapter(ExperimentConfig)


def _line_of(text: str, loc: tuple) -> int:
    """Line of the deepest key in ``loc`` found in order in ``text``."""
    pos = 0
    line_pos = 0
    for part in loc:
        if not isinstance(part, str) or part in ("E1", "E2", "E3", "E4", "E5", "E6"):
            continue
        m = re.compile(r'"' + re.escape(part) + r'"\s*:').search(text, pos)
        if m is None:
            break
        pos = line_pos = m.start()
    return text.count("\n", 0, line_pos) + 1


def parse_config(text: str, source: str = "<config>"):
    """Parse and validate a config; raises :class:`ConfigError` with ``source:line: message``."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{source}:{e.lineno}: invalid JSON: {e.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}:1: config must be a JSON object")
    if "experiment" not in raw:
        raise ConfigError(f"{source}:1: missing key 'experiment'")
    try:
        return _ADAPTER.validate_python(raw)
    except ValidationError as e:
        err = e.errors()[0]
        loc = tuple(err["loc"])
        where = ".".join(str(p) for p in loc if p not in ("E1", "E2", "E3", "E4", "E5", "E6"))
        msg = err["msg"]
        if err["type"] == "extra_forbidden":
            msg = "unknown key"
        elif err["type"] == "union_tag_invalid":
            msg = "unknown experiment; expected E1..E6"
        raise ConfigError(f"{source}:{_line_of(text, loc)}: {where or 'config'}: {msg}") from None


def load_config(path: str | Path):
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise ConfigError(f"{p}:0: cannot read config: {e.strerror}") from None
    return parse_config(text, str(p))


def config_dict(cfg) -> dict:
    return json.loads(cfg.model_dump_json())
