"""Flat ``key = value`` run configuration shared by the CLI and checkpoints.

Keys are ``section.field`` for the train / disc / gen / data dataclasses plus a
few top-level keys.  Mel bins and vocabulary size are set once, under
``data.``, and copied into the generator and discriminator configs.  Every key
has a default; unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any, Mapping

from .data import CorpusConfig
from .discriminators import VARIANTS, DiscriminatorConfig
from .generator import GeneratorConfig
from .trainer import TrainConfig


class RunConfigError(ValueError):
    pass


_SECTIONS = {"train": TrainConfig, "disc": DiscriminatorConfig, "gen": GeneratorConfig, "data": CorpusConfig}
_DERIVED = {("disc", "n_mels"), ("gen", "n_mels"), ("gen", "vocab_size"), ("train", "seed")}
_TOP = {"seed": 0, "out_dir": "run", "checkpoint_every": 100}
_OPTIONAL_FLOATS = {("train", "lambda_a"), ("train", "lambda_f")}


def _section_fields(section: str):
    for f in dataclasses.fields(_SECTIONS[section]):
        if (section, f.name) not in _DERIVED:
            yield f


def _defaults() -> dict[str, Any]:
    out: dict[str, Any] = dict(_TOP)
    for section, cls in _SECTIONS.items():
        inst = cls() if cls is not DiscriminatorConfig else cls(n_mels=CorpusConfig().n_mels)
        for f in _section_fields(section):
            out[f"{section}.{f.name}"] = getattr(inst, f.name)
    return out


DEFAULTS = _defaults()


def _format(val: Any) -> str:
    if val is None:
        return "auto"
    if isinstance(val, bool):
        return "true" if val else "false"
    if isinstance(val, (tuple, list)):
        return ",".join(str(v) for v in val)
    return repr(val) if isinstance(val, float) else str(val)


def _parse(key: str, text: str) -> Any:
    default = DEFAULTS[key]
    text = text.strip()
    section, _, name = key.partition(".")
    try:
        if (section, name) in _OPTIONAL_FLOATS:
            return None if text.lower() in ("auto", "none", "") else float(text)
        if isinstance(default, bool):
            if text.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return text.lower() in ("true", "1", "yes")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(int(v) for v in text.split(",") if v.strip())
        return text
    except ValueError:
        raise RunConfigError(f"bad value for {key}: {text!r}") from None


@dataclass
class RunConfig:
    values: dict[str, Any] = field(default_factory=lambda: dict(DEFAULTS))

    @classmethod
    def from_mapping(cls, entries: Mapping[str, str]) -> "RunConfig":
        cfg = cls()
        cfg.update(entries)
        return cfg

    @classmethod
    def from_file(cls, path: str) -> "RunConfig":
        entries: dict[str, str] = {}
        try:
            fh = open(path)
        except OSError as exc:
            raise RunConfigError(f"cannot read config {path}: {exc.strerror}") from None
        with fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                key, sep, val = line.partition("=")
                if not sep:
                    raise RunConfigError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
                key = key.strip()
                if key in entries:
                    raise RunConfigError(f"{path}:{lineno}: duplicate key {key}")
                entries[key] = val
        return cls.from_mapping(entries)

    def update(self, entries: Mapping[str, Any]) -> None:
        unknown = sorted(k for k in entries if k not in DEFAULTS)
        if unknown:
            raise RunConfigError(f"unknown config key(s): {', '.join(unknown)}")
        for key, val in entries.items():
            self.values[key] = _parse(key, val) if isinstance(val, str) else val
        self.validate()

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def to_flat(self) -> dict[str, str]:
        return {k: _format(v) for k, v in self.values.items()}

    def dumps(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.to_flat().items())

    # -- typed views ------------------------------------------------------------
    def _section(self, section: str) -> dict[str, Any]:
        return {f.name: self.values[f"{section}.{f.name}"] for f in _section_fields(section)}

    @property
    def variant(self) -> str:
        return str(self.values["disc.variant"]).lower()

    @property
    def seed(self) -> int:
        return int(self.values["seed"])

    def corpus(self) -> CorpusConfig:
        return CorpusConfig(**self._section("data"))

    def discriminator(self) -> DiscriminatorConfig:
        return DiscriminatorConfig(n_mels=self.values["data.n_mels"], **self._section("disc"))

    def generator(self) -> GeneratorConfig:
        return GeneratorConfig(n_mels=self.values["data.n_mels"], vocab_size=self.values["data.vocab_size"],
                               **self._section("gen"))

    def train(self) -> TrainConfig:
        return TrainConfig(seed=self.seed, **self._section("train")).resolved(self.variant)

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise RunConfigError(f"disc.variant must be one of {', '.join(VARIANTS)}, got {self.variant!r}")
        if int(self.values["checkpoint_every"]) < 1:
            raise RunConfigError("checkpoint_every must be >= 1")
        try:
            self.corpus()
            self.discriminator()
            self.generator()
            cfg = self.train()
        except (TypeError, ValueError) as exc:
            raise RunConfigError(str(exc)) from None
        if cfg.batch_size > self.values["data.samples"]:
            raise RunConfigError("train.batch_size cannot exceed data.samples")
