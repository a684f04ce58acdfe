"""Flat `key = value` run configuration.

UTF-8 text, one assignment per line, `#` starts a comment. Unknown keys
are rejected; required keys must be present. CLI `--set key=value`
overrides beat file values, which beat built-in defaults.
"""

from __future__ import annotations

from dataclasses import dataclass

from .exitpolicy import ExitPolicyConfig
from .model import ModelConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


def _bool(s: str) -> bool:
    if s.lower() in ("true", "1", "yes"):
        return True
    if s.lower() in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _float_list(s: str) -> list[float]:
    return [float(x) for x in s.split(",") if x.strip()]


# key -> (parser, default); default REQUIRED means the key must be supplied
REQUIRED = object()

SCHEMA: dict[str, tuple] = {
    "model.n_enc_layers": (int, 6),
    "model.n_dec_layers": (int, 6),
    "model.d_model": (int, 64),
    "model.n_heads": (int, 4),
    "model.vocab_size": (int, 64),
    "model.grid_side": (int, 4),
    "model.max_text_len": (int, 8),
    "model.max_gen_len": (int, 16),
    "model.rel_bucket_count": (int, 16),
    "model.tie_output_head": (_bool, True),
    "model.init_seed": (int, 0),
    "train.learning_rate": (float, 3e-4),
    "train.steps": (int, 200),
    "train.batch_size": (int, 8),
    "train.seed": (int, 0),
    "train.layerwise_loss": (_bool, True),
    "train.optimizer": (str, "adam"),
    "train.max_grad_norm": (float, 1.0),
    "train.adam_beta1": (float, 0.9),
    "train.adam_beta2": (float, 0.999),
    "train.adam_eps": (float, 1e-8),
    "exit.kind": (str, "never"),
    "exit.theta": (float, 0.95),
    "exit.theta_image": (float, 0.9),
    "exit.theta_text": (float, 0.95),
    "exit.beta": (float, 0.95),
    "exit.tau": (float, 1.0),
    "exit.patience": (int, 2),
    "exit.confidence_level": (float, 0.9),
    "data.path": (str, REQUIRED),
    "data.task": (str, "entail"),
    "data.seed": (int, 0),
    "data.count": (int, 1000),
    "output.checkpoint": (str, "model.ckpt"),
    "output.loss_csv": (str, "loss.csv"),
    "output.bench_csv": (str, "bench.csv"),
    "output.profile_csv": (str, "profile.csv"),
    "bench.theta_grid": (_float_list,
                         [0.0, 0.1, 0.2, 0.3, 0.4, 0.5,
                          0.6, 0.7, 0.8, 0.9, 1.0]),
    "bench.policy": (str, "static"),
    "bench.measure_wall": (_bool, False),
    "bench.encoder_weighting": (str, "mean"),
    "profile.samples": (int, 50),
    "infer.record_signals": (_bool, False),
}


@dataclass
class RunConfig:
    values: dict

    def __getitem__(self, key: str):
        return self.values[key]

    def model_config(self) -> ModelConfig:
        v = self.values
        return ModelConfig(
            n_enc_layers=v["model.n_enc_layers"],
            n_dec_layers=v["model.n_dec_layers"],
            d_model=v["model.d_model"],
            n_heads=v["model.n_heads"],
            vocab_size=v["model.vocab_size"],
            grid_side=v["model.grid_side"],
            max_text_len=v["model.max_text_len"],
            max_gen_len=v["model.max_gen_len"],
            rel_bucket_count=v["model.rel_bucket_count"],
            tie_output_head=v["model.tie_output_head"])

    def train_config(self) -> TrainConfig:
        v = self.values
        return TrainConfig(
            learning_rate=v["train.learning_rate"],
            steps=v["train.steps"],
            batch_size=v["train.batch_size"],
            seed=v["train.seed"],
            layerwise_loss=v["train.layerwise_loss"],
            optimizer=v["train.optimizer"],
            max_grad_norm=v["train.max_grad_norm"],
            adam_beta1=v["train.adam_beta1"],
            adam_beta2=v["train.adam_beta2"],
            adam_eps=v["train.adam_eps"])

    def exit_policy(self) -> ExitPolicyConfig:
        v = self.values
        return ExitPolicyConfig(
            kind=v["exit.kind"],
            theta=v["exit.theta"],
            theta_image=v["exit.theta_image"],
            theta_text=v["exit.theta_text"],
            beta=v["exit.beta"],
            tau=v["exit.tau"],
            total_steps=v["model.max_gen_len"],
            confidence_level=v["exit.confidence_level"],
            patience=v["exit.patience"])


def parse_assignments(lines, source: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected `key = value`")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def load_config(path: str | None, overrides: list[str] | None = None
                ) -> RunConfig:
    """Merge defaults, config-file values, and --set overrides."""
    raw: dict[str, str] = {}
    if path is not None:
        with open(path, encoding="utf-8") as f:
            raw.update(parse_assignments(f, path))
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = (s.strip() for s in item.split("=", 1))
        raw[key] = value
    values: dict = {}
    for key, text in raw.items():
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        parser, _ = SCHEMA[key]
        try:
            values[key] = parser(text)
        except (ValueError, TypeError) as e:
            raise ConfigError(f"bad value for {key!r}: {e}") from e
    for key, (parser, default) in SCHEMA.items():
        if key in values:
            continue
        if default is REQUIRED:
            raise ConfigError(f"missing required config key {key!r}")
        values[key] = default
    return RunConfig(values)
