"""Run configuration: TOML files validated with pydantic, overridable by flags."""

from __future__ import annotations

import sys
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - depends on the interpreter
    import tomli as tomllib

from .errors import ContractViolation

__all__ = ["RunConfig", "BenchConfig", "SweepConfig", "ConfigError", "load_config"]


class ConfigError(ContractViolation):
    """Invalid configuration; the message lists every offending field."""


def _open01(name, default=None):
    return Field(default=default, gt=0.0, lt=1.0, description=f"{name} in the open interval (0, 1)")


class _Base(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class PriorConfig(_Base):
    w: Optional[float] = _open01("inclusion probability")
    p0: Optional[float] = Field(default=None, gt=0.0, description="prior expected model size; w = p0 / p")
    sigma2: float = Field(default=10.0, gt=0.0)
    mu: float = 0.0

    @model_validator(mode="after")
    def _one_of(self):
        if self.w is not None and self.p0 is not None:
            raise ValueError("give either w or p0, not both")
        return self

    def weight(self, p):
        if self.w is not None:
            return self.w
        w = (self.p0 if self.p0 is not None else 0.5 * p) / p
        if not 0.0 < w < 1.0:
            raise ConfigError(f"p0 / p = {w} must lie in (0, 1)")
        return w


class RunConfig(_Base):
    """One chain.

    ``sampler`` is a PDMP family or ``"gibbs"``.  PDMP runs need ``T`` or
    ``max_events``; Gibbs runs need ``n_iter``.
    """

    sampler: Literal["zigzag", "bps_gauss", "bps_sphere", "gibbs"] = "zigzag"
    target: Literal["logistic", "robust", "gaussian"] = "logistic"
    data: Optional[Path] = None
    holdout: Optional[Path] = None
    p: Optional[int] = Field(default=None, ge=1, description="dimension of the analytic target")
    prior: PriorConfig = PriorConfig()
    p_jump: float = _open01("p_jump", 0.6)
    lambda_refresh: float = Field(default=0.1, ge=0.0)
    reversible_jump: bool = True
    T: Optional[float] = Field(default=None, ge=0.0)
    max_events: Optional[int] = Field(default=None, ge=1)
    n_iter: Optional[int] = Field(default=None, ge=0)
    seed: int = Field(default=0, ge=0, lt=2**64)
    subsample: Literal["none", "global", "cv"] = "none"
    model_ref: Optional[list[int]] = None
    init: Literal["full", "empty", "mode", "prior"] = "full"
    burn_in: float = Field(default=0.1, ge=0.0, lt=1.0)
    checkpoint_interval: Optional[float] = Field(default=None, gt=0.0)
    stride: Optional[float] = Field(default=None, gt=0.0, description="grid spacing for predictive MSE")
    output: Path = Path("out")

    @model_validator(mode="after")
    def _consistent(self):
        if self.target == "gaussian":
            if self.p is None:
                raise ValueError("the gaussian target needs p")
        elif self.data is None:
            raise ValueError(f"the {self.target} target needs a data file")
        for f in (self.data, self.holdout):
            if f is not None and not Path(f).is_file():
                raise ValueError(f"file not found: {f}")
        if self.sampler == "gibbs":
            if self.target != "logistic":
                raise ValueError("the Gibbs sampler supports the logistic target only")
            if self.n_iter is None:
                raise ValueError("gibbs runs need n_iter")
            if self.subsample != "none":
                raise ValueError("subsampling applies to PDMP samplers only")
        else:
            if self.T is None and self.max_events is None:
                raise ValueError("PDMP runs need T or max_events")
        if self.subsample != "none" and self.target == "gaussian":
            raise ValueError("subsampling needs a data-based target")
        if self.init == "prior" and self.target != "gaussian":
            raise ValueError("init = 'prior' is only available for the gaussian target")
        return self


class BenchConfig(_Base):
    grid: list[tuple[Literal[1, 2, 3], int, int]] = Field(min_length=1)
    samplers: list[Literal["zigzag", "bps_gauss", "bps_sphere"]] = ["zigzag", "bps_gauss", "bps_sphere"]
    R: int = Field(default=10, ge=2)
    T: Optional[float] = Field(default=None, gt=0.0)
    max_events: Optional[int] = Field(default=None, ge=1)
    gibbs_iter: int = Field(default=1000, ge=1)
    ref_iter: int = Field(default=20000, ge=1)
    w: Optional[float] = _open01("inclusion probability")
    sigma2: float = Field(default=10.0, gt=0.0)
    p_jump: float = Field(default=0.6, gt=0.0, lt=1.0)
    lambda_refresh: float = Field(default=0.1, ge=0.0)
    burn_in: float = Field(default=0.1, ge=0.0, lt=1.0)
    seed: int = Field(default=0, ge=0, lt=2**64)
    output: Path = Path("bench")

    @model_validator(mode="after")
    def _budget(self):
        if self.T is None and self.max_events is None:
            raise ValueError("give T or max_events for the PDMP samplers")
        return self


class SweepConfig(_Base):
    p_jumps: list[float] = Field(default=[0.6], min_length=1)
    refresh_rates: list[float] = Field(default=[0.1], min_length=1)
    families: list[Literal["zigzag", "bps_gauss", "bps_sphere"]] = Field(default=["zigzag"], min_length=1)
    p: int = Field(default=100, ge=1)
    R: int = Field(default=10, ge=2)
    max_events: int = Field(default=10000, ge=1)
    seed: int = Field(default=0, ge=0, lt=2**64)
    output: Path = Path("sweep.csv")

    @model_validator(mode="after")
    def _domains(self):
        bad = [x for x in self.p_jumps if not 0.0 < x < 1.0]
        if bad:
            raise ValueError(f"p_jumps must lie in (0, 1); got {bad}")
        if any(x < 0 for x in self.refresh_rates):
            raise ValueError("refresh rates must be nonnegative")
        return self


def _format(err):
    lines = []
    for e in err.errors():
        loc = ".".join(str(x) for x in e["loc"]) or "config"
        lines.append(f"  {loc}: {e['msg']}")
    return "invalid configuration:\n" + "\n".join(lines)


def load_config(model, path=None, overrides=None):
    """Build ``model`` from a TOML file and flag overrides (flags win).

    ``None`` overrides are ignored, so unset flags keep the file's values.
    Raises :class:`ConfigError` with one line per invalid field.
    """
    values = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                values = tomllib.load(fh)
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        if "." in key:
            head, tail = key.split(".", 1)
            values.setdefault(head, {})[tail] = val
        else:
            values[key] = val
    try:
        return model.model_validate(values)
    except ValidationError as err:
        raise ConfigError(_format(err)) from None
