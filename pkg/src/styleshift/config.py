"""Flat ``key = value`` experiment configuration with ``#`` comments."""
from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import get_type_hints

from .corpus import NoiseConfig, SynthSpec
from .transfer import ModelConfig, TrainConfig


class ConfigError(ValueError):
    """Malformed configuration text or values."""


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    preset: str = "desk"  # "paper" switches the model to d_h = 512
    corpus_dir: str = ""  # train.tsv / valid.tsv / test.tsv; empty means synthetic

    # synthetic corpus
    num_labels: int = 8
    content_vocab_size: int = 300
    markers_per_label: int = 5
    marker_purity: float = 0.9
    min_len: int = 5
    max_len: int = 12
    examples_per_label: int = 6000
    valid_per_label: int = 150
    test_per_label: int = 150

    # noise
    word_drop: float = 0.1
    shuffle_window: int = 3

    # classifiers
    clf_steps: int = 3000
    clf_batch_size: int = 64
    clf_learning_rate: float = 0.5
    n_buckets: int = 65536
    d_a: int = 8
    eval_hidden_dim: int = 64

    # language model
    lm_hidden_dim: int = 64
    lm_steps: int = 2000
    lm_learning_rate: float = 5.0

    # transfer model
    d_h: int = 64
    init_scale: float = 0.3
    lam: float = 0.5
    lambda_sweep: str = "0.2,0.5,0.8"
    steps: int = 8000
    batch_size: int = 32
    learning_rate: float = 5.0
    gradient_clip_norm: float = 5.0
    source_embedding: str = "example"
    inclusive_sampling: bool = False

    # evaluation
    cap: int = 900

    # held-out experiment
    holdout: str = "hopeful,shocked"

    # new-space experiment
    new_num_labels: int = 6
    new_content_share: float = 0.6
    new_aliased: int = 3
    new_examples_per_label: int = 240
    new_test_per_label: int = 100
    new_steps: int = 1500
    map_iters: int = 2000

    def __post_init__(self):
        if self.preset not in ("desk", "paper"):
            raise ConfigError(f"preset must be 'desk' or 'paper', got {self.preset!r}")
        try:
            self.noise
            self.synth_spec
            self.train_config()
            self.model_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.cap < 1:
            raise ConfigError("cap must be positive")
        if not 0 < self.new_content_share <= 1:
            raise ConfigError("new_content_share must lie in (0, 1]")

    # ------------------------------------------------------------ views

    @property
    def noise(self) -> NoiseConfig:
        return NoiseConfig(self.word_drop, self.shuffle_window)

    @property
    def synth_spec(self) -> SynthSpec:
        return SynthSpec(num_labels=self.num_labels, content_vocab_size=self.content_vocab_size,
                         markers_per_label=self.markers_per_label, marker_purity=self.marker_purity,
                         min_len=self.min_len, max_len=self.max_len,
                         examples_per_label=self.examples_per_label, valid_per_label=self.valid_per_label,
                         test_per_label=self.test_per_label)

    def model_config(self) -> ModelConfig:
        if self.preset == "paper":
            return ModelConfig(d_h=512, d_a=self.d_a, init_scale=0.1)
        return ModelConfig(d_h=self.d_h, d_a=self.d_a, init_scale=self.init_scale)

    def train_config(self, **overrides) -> TrainConfig:
        cfg = TrainConfig(lam=self.lam, steps=self.steps, batch_size=self.batch_size,
                          learning_rate=self.learning_rate, gradient_clip_norm=self.gradient_clip_norm,
                          noise=self.noise, source_embedding=self.source_embedding,
                          inclusive_sampling=self.inclusive_sampling, seed=self.seed)
        return replace(cfg, **overrides)

    @property
    def holdout_labels(self) -> list[str]:
        return parse_list(self.holdout)

    @property
    def lambdas(self) -> list[float]:
        try:
            return [float(v) for v in parse_list(self.lambda_sweep)]
        except ValueError:
            raise ConfigError(f"lambda_sweep must be comma-separated numbers, got {self.lambda_sweep!r}") from None

    def with_overrides(self, **values) -> "ExperimentConfig":
        return replace(self, **values)

    def to_dict(self) -> dict:
        return {f.name: _render(getattr(self, f.name)) for f in fields(self)}

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.to_dict().items())


def parse_list(text: str) -> list[str]:
    return [p.strip() for p in text.split(",") if p.strip()]


def _render(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def _convert(key: str, raw: str, kind):
    try:
        if kind is bool:
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError
            return low in ("true", "1", "yes")
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind.__name__}") from None


def parse_config(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Parse ``key = value`` lines on top of ``base`` (defaults when None)."""
    hints = get_type_hints(ExperimentConfig)
    values = {}
    bad = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            bad.append(f"line {lineno}: expected 'key = value'")
        elif key not in hints:
            bad.append(f"line {lineno}: unknown key {key!r}")
        else:
            values[key] = _convert(key, value, hints[key])
    if bad:
        raise ConfigError("malformed config:\n  " + "\n  ".join(bad))
    return replace(base or ExperimentConfig(), **values)


def load_config(path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    cfg = parse_config(text, base)
    if cfg.corpus_dir and not Path(cfg.corpus_dir).is_dir():
        raise ConfigError(f"corpus_dir {cfg.corpus_dir!r} does not exist")
    return cfg
