"""Flat ``key = value`` run configuration.

One file per run. Lines are ``key = value``; ``#`` starts a comment. Unknown
keys are rejected, and every parse error names the offending line.
"""

import dataclasses
from dataclasses import dataclass, field, fields
from typing import Optional, Tuple


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    seed: int = 0

    # data generation
    patch_dims: Tuple[int, int, int] = (10, 16, 16)
    patch_count: int = 50000
    max_shift: int = 1
    source_images: int = 16
    source_size: int = 96
    source_path: str = ""
    source_blur: float = 1.0  # Gaussian blur sigma of synthetic sources, pixels
    sinusoid_n: int = 64
    sinusoid_freq: float = 0.0625
    sinusoid_phase: float = 0.0
    sinusoid_max_shift: int = 8
    clip_dims: Tuple[int, int, int] = (10, 16, 16)
    clips_per_class: int = 500
    clip_speed: int = 1

    # whitening
    retained_dims: int = 0  # 0: keep `retained_variance`
    retained_variance: float = 0.99
    eigenvalue_floor: float = 1e-8  # relative to the largest eigenvalue
    contrast_epsilon: float = 1e-8

    # models
    mode: str = "sequence"
    units: int = 300
    train_samples: int = 200000
    tied: bool = True
    eta: float = 0.01
    eta_decay: float = 0.95
    epochs: int = 10
    normalize_every: int = 1000
    sae_lambda: float = 0.5
    learning_rate: float = 0.002
    momentum: float = 0.9
    batch_size: int = 128
    sae_epochs: int = 20
    use_bias: bool = False

    # descriptor pipeline
    super_dims: Tuple[int, int, int] = (14, 20, 20)
    sub_dims: Tuple[int, int, int] = (10, 16, 16)
    sub_stride: int = 4
    overlap_fraction: float = 0.5
    descriptor_pca_dims: int = 100
    vocab_size: int = 3000
    vocab_iterations: int = 50
    vocab_samples: int = 500000
    pooling_centroids: int = 500
    use_pooling: bool = False
    fit_codebook: bool = True
    codebook: str = ""

    # evaluation
    knn_k: int = 5
    chi2_epsilon: float = 1e-10
    chi2_gamma: float = 0.0  # 0: mean pairwise training distance

    # visualization
    viz_gap: int = 1
    viz_max_filters: int = 0  # 0: all

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _parse_value(name, raw, lineno):
    ftype = _FIELDS[name].type
    raw = raw.strip()
    try:
        if ftype is bool or ftype == "bool":
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(f"expected a boolean, got {raw!r}")
        if ftype is int:
            return int(raw)
        if ftype is float:
            return float(raw)
        if ftype is str:
            return raw
        # Tuple[int, int, int]
        parts = [p.strip() for p in raw.split(",")]
        if len(parts) != 3:
            raise ValueError(f"expected three comma-separated integers, got {raw!r}")
        return tuple(int(p) for p in parts)
    except ValueError as exc:
        raise ConfigError(f"line {lineno}: bad value for {name!r}: {exc}") from None


def parse(text, base: Optional[RunConfig] = None) -> RunConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line.strip()!r}")
        key, raw = body.split("=", 1)
        key = key.strip()
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _parse_value(key, raw, lineno)
    cfg = dataclasses.replace(base or RunConfig(), **values)
    validate(cfg)
    return cfg


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize(cfg: RunConfig) -> str:
    return "".join(f"{f.name} = {_fmt(getattr(cfg, f.name))}\n" for f in fields(cfg))


def load(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse(fh.read())


def save(path, cfg: RunConfig):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize(cfg))


def validate(cfg: RunConfig):
    if cfg.mode not in ("sequence", "pair"):
        raise ConfigError(f"mode must be 'sequence' or 'pair', got {cfg.mode!r}")
    for name in ("patch_dims", "clip_dims", "super_dims", "sub_dims"):
        if min(getattr(cfg, name)) < 1:
            raise ConfigError(f"{name} entries must be >= 1")
    if cfg.eta < 0 or cfg.learning_rate < 0:
        raise ConfigError("learning rates must be non-negative")
    if cfg.epochs < 1 or cfg.sae_epochs < 1:
        raise ConfigError("epochs must be >= 1")
    if not 0.0 < cfg.retained_variance <= 1.0:
        raise ConfigError("retained_variance must be in (0, 1]")
    if not 0.0 <= cfg.overlap_fraction < 1.0:
        raise ConfigError("overlap_fraction must be in [0, 1)")
    if cfg.sae_lambda < 0:
        raise ConfigError("sae_lambda must be >= 0")
