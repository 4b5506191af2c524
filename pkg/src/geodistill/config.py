"""Pipeline configuration: a flat key=value file plus flag overrides.

Only the credential lives in the environment (TEACHER_API_KEY); everything
else is explicit so runs are reproducible from the config alone.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path


class ConfigError(Exception):
    """Invalid configuration; the message names the offending key."""


@dataclass
class PipelineConfig:
    endpoint_url: str = ""
    model: str = "teacher-model"
    n_votes: int = 8
    threshold: int = 8
    questions_per_seed: int = 5
    vote_temperature: float = 1.0
    eval_temperature: float = 0.0
    rel_tol: float = 1e-6
    parallelism: int = 8
    gen_max_tokens: int = 4096
    eval_max_tokens: int = 2048
    rate_limit_rps: float = 2.0
    timeout_s: float = 120.0
    retries_per_seed: int = 0
    fixtures: str = ""  # replay fixture path; set -> offline replay backend

    def validate(self) -> None:
        if self.n_votes < 1:
            raise ConfigError("n_votes: must be >= 1")
        if not 1 <= self.threshold <= self.n_votes:
            raise ConfigError(f"threshold: must be in 1..n_votes, got {self.threshold}")
        if self.questions_per_seed < 1:
            raise ConfigError("questions_per_seed: must be >= 1")
        if self.rel_tol < 0:
            raise ConfigError("rel_tol: must be >= 0")
        if self.parallelism < 1:
            raise ConfigError("parallelism: must be >= 1")
        if self.gen_max_tokens < 1 or self.eval_max_tokens < 1:
            raise ConfigError("gen_max_tokens/eval_max_tokens: must be >= 1")
        if self.vote_temperature < 0 or self.eval_temperature < 0:
            raise ConfigError("vote_temperature/eval_temperature: must be >= 0")
        if self.retries_per_seed < 0:
            raise ConfigError("retries_per_seed: must be >= 0")


_FIELD_TYPES = {f.name: f.type for f in fields(PipelineConfig)}


def _coerce(key: str, raw: str):
    ftype = _FIELD_TYPES[key]
    try:
        if ftype == "int":
            return int(raw)
        if ftype == "float":
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {ftype}") from exc


def load_config(path: str | Path) -> PipelineConfig:
    """Parse `key = value` lines; # starts a comment; unknown keys error."""
    cfg = PipelineConfig()
    for i, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{i}: expected key = value, got {line!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(f"{path}:{i}: unknown key {key!r}")
        setattr(cfg, key, _coerce(key, raw))
    cfg.validate()
    return cfg


def apply_overrides(cfg: PipelineConfig, overrides: dict) -> PipelineConfig:
    for key, value in overrides.items():
        if value is None:
            continue
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown key {key!r}")
        setattr(cfg, key, value)
    cfg.validate()
    return cfg
