"""Flat ``key = value`` configuration with sections.

Every key has a default below; a config file may set any subset and the
command line may override any key with ``--key-name value``.  Key names are
unique across sections so an override never needs the section name.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field
from typing import Any

from .adversarial import AdversarialConfig, NetConfig
from .datasets import ToyShiftConfig
from .errors import ConfigurationError
from .pose_synth import DEFAULT_POSE_GRID, PoseSpec


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in str(text).replace(" ", "").split(",") if v)


def _bool(text: str) -> bool:
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_poses(text: str) -> tuple[PoseSpec, ...]:
    """``"yaw,pitch,roll; yaw,pitch,roll; ..."``"""
    return tuple(PoseSpec.parse(chunk) for chunk in str(text).split(";") if chunk.strip())


def format_poses(poses) -> str:
    return "; ".join(f"{p.yaw:g},{p.pitch:g},{p.roll:g}" for p in poses)


# section -> key -> (default, parser, help)
SCHEMA: dict[str, dict[str, tuple[Any, Any, str]]] = {
    "run": {
        "seed": (0, int, "seed for data generation, splits and training"),
    },
    "data": {
        "classes": (10, int, "number of identities in the toy"),
        "source_per_class": (1, int, "source samples per class (1 = single sample per person)"),
        "target_per_class": (200, int, "target samples per class"),
        "shift_rotation": (35.0, float, "latent rotation of the target domain, degrees"),
        "noise_sigma": (0.3, float, "additive target feature noise"),
        "blur_kernel_width": (3, int, "moving-average width across target features (1 = none)"),
        "k_labels": (3, int, "labeled target samples per class revealed to semi-supervised modes"),
        "test_fraction": (0.33, float, "share of the remaining labeled target pool held out for testing"),
        "virtual": (True, _bool, "render toy pose views of every source sample into S_v"),
    },
    "network": {
        "feature_dims": ("64,32", _ints, "feature extractor widths"),
        "discriminator_hidden": ("64,64", _ints, "domain discriminator hidden widths"),
    },
    "adversarial": {
        "lambda_mode": ("scheduled", str, "fixed or scheduled"),
        "lambda_value": (1.0, float, "fixed lambda, or the ceiling of the schedule"),
        "schedule_gamma": (10.0, float, "steepness of the lambda schedule"),
        "lr": (0.01, float, "learning rate"),
        "momentum": (0.9, float, "SGD momentum"),
        "batch_size": (64, int, "rows per step, half source and half target"),
        "epochs": (100, int, "training epochs"),
        "steps_per_epoch": (20, int, "optimizer steps per epoch"),
        "update_scheme": ("grl", str, "grl (single pass) or alternating"),
        "labeled_target_fraction": (0.25, float, "share of the target half drawn from T_l in semi modes"),
    },
    "synth": {
        "poses": (format_poses(DEFAULT_POSE_GRID), parse_poses, "pose grid as 'yaw,pitch,roll; ...'"),
        "max_residual": (5.0, float, "abort synthesis above this landmark fit RMS (pixels)"),
        "model": ("", str, "3D landmark model file (empty = bundled model)"),
    },
}

KEY_SECTION = {key: section for section, keys in SCHEMA.items() for key in keys}


@dataclass
class CliConfig:
    raw: dict[str, dict[str, str]] = field(default_factory=lambda: {
        s: {k: str(v[0]) for k, v in keys.items()} for s, keys in SCHEMA.items()})

    def get(self, key: str):
        section = KEY_SECTION[key]
        _, parse, _ = SCHEMA[section][key]
        text = self.raw[section][key]
        try:
            return parse(text)
        except (ValueError, TypeError) as exc:
            raise ConfigurationError(f"bad value for {key}: {text!r} ({exc})") from None

    def set(self, key: str, value) -> None:
        if key not in KEY_SECTION:
            raise ConfigurationError(f"unknown configuration key {key!r}")
        self.raw[KEY_SECTION[key]][key] = str(value)

    def validate(self) -> None:
        for key in KEY_SECTION:
            self.get(key)
        self.adversarial_config()
        self.toy_config()

    def toy_config(self) -> ToyShiftConfig:
        return ToyShiftConfig(num_classes=self.get("classes"), samples_per_class_source=self.get("source_per_class"),
                              samples_per_class_target=self.get("target_per_class"),
                              shift_rotation=self.get("shift_rotation"), noise_sigma=self.get("noise_sigma"),
                              blur_kernel_width=self.get("blur_kernel_width"), seed=self.get("seed"))

    def net_config(self) -> NetConfig:
        return NetConfig(self.get("feature_dims"), self.get("discriminator_hidden"))

    def adversarial_config(self) -> AdversarialConfig:
        keys = SCHEMA["adversarial"]
        return AdversarialConfig(**{k: self.get(k) for k in keys})

    def to_text(self) -> str:
        parser = configparser.ConfigParser(interpolation=None)
        for section, values in self.raw.items():
            parser[section] = values
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()


def load_config(path=None, overrides: dict[str, Any] | None = None) -> CliConfig:
    """Defaults, then the file at ``path``, then ``overrides``; unknown keys are rejected."""
    cfg = CliConfig()
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from None
        except configparser.Error as exc:
            raise ConfigurationError(f"malformed config {path}: {exc}") from None
        for section in parser.sections():
            if section not in SCHEMA:
                raise ConfigurationError(f"unknown config section [{section}]")
            for key, value in parser[section].items():
                if key not in SCHEMA[section]:
                    raise ConfigurationError(f"unknown key {key!r} in section [{section}]")
                cfg.raw[section][key] = value
    for key, value in (overrides or {}).items():
        if value is not None:
            cfg.set(key, value)
    cfg.validate()
    return cfg
