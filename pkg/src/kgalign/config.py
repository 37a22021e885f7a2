"""Flat pipeline configuration with ``key=value`` file loading and seed derivation."""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

from .landmark import DEFAULT_DECAY, DEFAULT_ETA, DEFAULT_FLOOR
from .train import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    # data: an OpenEA-style directory, or empty for the synthetic generator
    dataset: str = ""
    synth_entities: int = 1000
    synth_relations: int = 10
    synth_degree: float = 4.0
    synth_overlap: float = 1.0
    split_train: float = 0.3
    split_valid: float = 0.1
    # merging, partitioning and landmark recall
    n_partitions: int = 5
    epsilon: float = 0.05
    eta: float = DEFAULT_ETA
    floor: float = DEFAULT_FLOOR
    lam: float = DEFAULT_DECAY
    budget: int = 7500
    # encoder training
    dim: int = 128
    alpha: float = 15.0
    beta: float = 0.7
    n_proxies: int = 64
    n_layers: int = 3
    n_cross: int = 256
    w_align: float = 1.0
    w_cross: float = 0.1
    w_rec: float = 0.1
    lr: float = 0.01
    epochs: int = 50
    align_form: str = "dual"
    cross_form: str = "literal"
    # inference
    infer_k: int = 5
    search_mode: str = "exact"
    one_to_one: bool = True
    n_lists: int = 0
    n_probe: int = 0
    seed: int = 0
    out: str = "run"

    def __post_init__(self) -> None:
        if not 0 < self.split_train < 1 or not 0 < self.split_valid < 1:
            raise ConfigError("split fractions must lie in (0, 1)")
        if self.split_train + self.split_valid >= 1:
            raise ConfigError("split_train + split_valid must be below 1")
        if self.n_partitions < 1:
            raise ConfigError("n_partitions must be at least 1")
        if self.epsilon < 0:
            raise ConfigError("epsilon must be non-negative")
        if self.budget < 0:
            raise ConfigError("budget must be non-negative")
        if self.eta <= 0 or not 0 < self.lam <= 1:
            raise ConfigError("eta must be positive and lam in (0, 1]")
        if self.infer_k < 1:
            raise ConfigError("infer_k must be at least 1")
        if self.search_mode not in ("exact", "approximate"):
            raise ConfigError(f"unknown search_mode {self.search_mode!r}")
        try:
            self.train_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def train_config(self, seed: int | None = None) -> TrainConfig:
        names = {f.name for f in dataclasses.fields(TrainConfig)} - {"seed"}
        kwargs = {n: getattr(self, n) for n in names}
        return TrainConfig(seed=self.seed if seed is None else seed, **kwargs)

    def resolved(self) -> dict[str, Any]:
        """Every key except the output directory, for the metrics echo."""
        return {k: v for k, v in dataclasses.asdict(self).items() if k != "out"}


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def field_types() -> dict[str, type]:
    return {f.name: type(f.default) for f in dataclasses.fields(PipelineConfig)}


def coerce(key: str, raw: str) -> Any:
    types = field_types()
    if key not in types:
        raise ConfigError(f"unknown configuration key {key!r}")
    kind = types[key]
    raw = raw.strip()
    try:
        if kind is bool:
            low = raw.lower()
            if low not in _TRUE | _FALSE:
                raise ValueError(raw)
            return low in _TRUE
        return kind(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind.__name__}") from None


def read_config_file(path: str | Path) -> dict[str, Any]:
    values: dict[str, Any] = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, raw = (part.strip() for part in line.split("=", 1))
        try:
            values[key] = coerce(key, raw)
        except ConfigError as exc:
            raise ConfigError(f"{path}:{lineno}: {exc}") from None
    return values


def load_config(path: str | Path | None = None, overrides: Mapping[str, Any] | None = None) -> PipelineConfig:
    """File values first, then ``overrides`` (already typed or raw strings)."""
    values = read_config_file(path) if path else {}
    for key, value in (overrides or {}).items():
        values[key] = coerce(key, value) if isinstance(value, str) else value
    unknown = set(values) - set(field_types())
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(sorted(unknown))}")
    return PipelineConfig(**values)


def write_config(cfg: PipelineConfig, path: str | Path) -> None:
    lines = [f"{k}={v}" for k, v in dataclasses.asdict(cfg).items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def derive_seed(seed: int, stage: str) -> int:
    """Stage-specific 32-bit seed from the global seed and the stage name."""
    digest = hashlib.sha256(f"{seed}:{stage}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


__all__ = [
    "ConfigError",
    "PipelineConfig",
    "coerce",
    "derive_seed",
    "field_types",
    "load_config",
    "read_config_file",
    "write_config",
]
