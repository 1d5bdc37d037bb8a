"""Plain-text key-value run configuration.

A config file holds ``key = value`` lines (``#`` comments allowed) mirroring
the model, schedule, and fine-tuning settings plus codec, embedder, seed, and
masking. Unknown keys are rejected so typos cannot silently fall back to
defaults; every run logs its fully resolved configuration.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .backbone import ModelConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # model
    preset: str = "mini"
    layers: int = 0          # 0: take from preset
    hidden: int = 0
    heads: int = 0
    dropout: float = 0.1
    bins: int = 32
    text_dim: int = 384
    # pre-training schedule
    peak_lr: float = 3e-4
    warmup_fraction: float = 0.05
    batch_size: int = 4096
    micro_batch_size: int = 64
    epochs: int = 30
    mask_prob: float = 0.30
    valid_rows_per_table: int = 0
    # fine-tuning
    max_epochs: int = 100
    patience: int = 20
    pooling: str = "first_token"
    head_dropout: float = 0.1
    finetune_lr: float = 1e-4
    finetune_batch_size: int = 64
    valid_fraction: float = 0.1
    codec: str = "scalar_L2"
    bag: int = 1
    # shared
    seed: int = 0
    embedder: str = "fallback"

    def model_config(self) -> ModelConfig:
        cfg = ModelConfig.from_preset(self.preset, dropout=self.dropout,
                                      num_bins=self.bins, text_dim=self.text_dim)
        if self.layers:
            cfg.layers = self.layers
        if self.hidden:
            cfg.hidden = self.hidden
            cfg.heads = self.heads or max(1, self.hidden // 64)
            cfg.preset = "custom"
        if self.heads:
            cfg.heads = self.heads
        if cfg.hidden % cfg.heads:
            raise ConfigError(f"hidden {cfg.hidden} not divisible by heads {cfg.heads}")
        return cfg

    def resolved(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _parse_value(key: str, raw: str):
    ftype = _FIELD_TYPES[key]
    raw = raw.strip()
    try:
        if ftype == "int":
            return int(raw)
        if ftype == "float":
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc


def load_run_config(path: str | None, overrides: dict | None = None) -> RunConfig:
    """Read a config file and apply explicit overrides (flags win over the file)."""
    config = RunConfig()
    if path is not None:
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                stripped = line.split("#", 1)[0].strip()
                if not stripped:
                    continue
                if "=" not in stripped:
                    raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line.rstrip()!r}")
                key, _, raw = stripped.partition("=")
                key = key.strip()
                if key not in _FIELD_TYPES:
                    raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
                setattr(config, key, _parse_value(key, raw))
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(config, key, value)
    return config
