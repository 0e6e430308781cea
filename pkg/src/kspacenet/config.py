"""Experiment configuration: TOML files validated by pydantic models.

Every section rejects unknown keys. Environment variables prefixed with
``KSDL_`` override single values before validation, using ``__`` as the
section separator with TOML value syntax::

    KSDL_TRAIN__EPOCHS=5  KSDL_RECON__ENGINE=aloha  KSDL_PHANTOM__SEED=3

Bare words that are not valid TOML values are taken as strings.
"""

import os
import sys

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .errors import MissingFile, SchemaError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = ["ExperimentConfig", "PhantomConfig", "ScheduleConfig", "ReconConfig", "GrappaConfig",
           "AlohaSection", "NetworkSection", "TrainSection", "EvalConfig", "load_config",
           "config_from_dict", "ENV_PREFIX"]

ENV_PREFIX = "KSDL_"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class PhantomConfig(_Section):
    nx: int = Field(64, gt=0)
    ny: int = Field(64, gt=0)
    coils: int = Field(4, ge=1)
    k_support: int = Field(5, ge=1)
    num_frames: int = Field(10, ge=1)
    onset: float = 2.0
    rise: float = Field(3.0, gt=0)
    vessel_peak: float = 2.0
    jitter: float = Field(0.0, ge=0)
    noise_std: float = Field(0.0, ge=0)
    seed: int = 0


class ScheduleConfig(_Section):
    num_interleaves: int = Field(5, ge=2)
    rx: int = Field(3, ge=1)
    ry: int = Field(2, ge=1)
    a_half_width: tuple[int, int] = (8, 8)
    acs_size: tuple[int, int] = (16, 16)


class GrappaConfig(_Section):
    kernel: tuple[int, int] = (3, 2)
    lam: float | None = None
    shifts: str = "all"


class AlohaSection(_Section):
    filter: tuple[int, int] = (13, 5)
    rank: int | str = "auto"
    mu: float = Field(0.1, gt=0)
    tol: float = Field(1e-4, gt=0)
    max_outer: int = Field(200, ge=1)
    levels: int = 1


class NetworkSection(_Section):
    preset: str = "desk"
    checkpoint: str | None = None
    consistency: bool = True
    padding: str = "zero"
    base_channels: int | None = None
    stages: int | None = None


class TrainSection(_Section):
    num_slices: int = Field(8, ge=1)
    slice_seed: int = 100
    jitter: float = Field(0.05, ge=0)
    vs_input: int = Field(2, ge=1)
    vs_label: int = Field(5, ge=1)
    epochs: int | None = None
    batch_size: int | None = None
    lr: float | None = None
    seed: int | None = None


class ReconConfig(_Section):
    engine: str = "grappa"
    vs: int = Field(2, ge=1)
    frames: list[int] | None = None
    input_dir: str | None = None

    @field_validator("engine")
    @classmethod
    def _engine(cls, v):
        if v not in ("zero", "grappa", "aloha", "network"):
            raise ValueError(f"unknown engine {v!r}; use zero, grappa, aloha or network")
        return v


class EvalConfig(_Section):
    vs: list[int] = [2, 3, 5]
    test_seed: int = 999
    test_frame: int = 5
    reference: str = "phantom"
    baseline_frame: int = 0

    @field_validator("reference")
    @classmethod
    def _reference(cls, v):
        if v not in ("phantom", "grappa"):
            raise ValueError(f"reference must be phantom or grappa, got {v!r}")
        return v


class ExperimentConfig(_Section):
    threads: int = Field(1, ge=1)
    out: str = "out"
    phantom: PhantomConfig = PhantomConfig()
    schedule: ScheduleConfig = ScheduleConfig()
    recon: ReconConfig = ReconConfig()
    grappa: GrappaConfig = GrappaConfig()
    aloha: AlohaSection = AlohaSection()
    network: NetworkSection = NetworkSection()
    train: TrainSection = TrainSection()
    eval: EvalConfig = EvalConfig()


def _parse_env_value(raw):
    try:
        return tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        return raw


def apply_env(data, environ=None):
    """Return a copy of ``data`` with ``KSDL_`` overrides applied."""
    environ = os.environ if environ is None else environ
    out = {k: (dict(v) if isinstance(v, dict) else v) for k, v in data.items()}
    for key in sorted(environ):
        if not key.startswith(ENV_PREFIX):
            continue
        path = key[len(ENV_PREFIX):].lower().split("__")
        node = out
        for part in path[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise SchemaError(f"{key}: {part} is not a section")
        node[path[-1]] = _parse_env_value(environ[key])
    return out


def config_from_dict(data, environ=None):
    try:
        return ExperimentConfig.model_validate(apply_env(data, environ))
    except ValidationError as exc:
        raise SchemaError(f"invalid configuration: {exc}") from exc


def load_config(path=None, environ=None):
    """Load and validate a TOML config (defaults when ``path`` is None)."""
    data = {}
    if path is not None:
        if not os.path.exists(path):
            raise MissingFile(f"config {path} not found")
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise SchemaError(f"{path}: {exc}") from exc
    return config_from_dict(data, environ)
