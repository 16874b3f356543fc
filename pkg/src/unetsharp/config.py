"""Flat key=value run configuration with documented defaults.

Unknown keys are hard errors so typos never silently fall back to defaults.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

from .errors import ConfigError
from .grid import ArchConfig
from .losses import LossWeights
from .train import TrainConfig


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_channels(raw: str) -> tuple[int, ...]:
    return tuple(int(p) for p in raw.split(",") if p.strip())


# key -> (default, parser, doc)
SCHEMA: dict[str, tuple] = {
    "arch.channels": ((32, 64, 128, 256, 512), _parse_channels, "per-level channel widths, comma separated"),
    "arch.convs_per_node": (2, int, "conv-norm-relu stages per node"),
    "arch.upsample_mode": ("bilinear", str, "bilinear | nearest"),
    "arch.input_size": (64, int, "square input extent, multiple of 2^(depth-1)"),
    "arch.input_channels": (1, int, "image channels (1 grayscale, 3 RGB)"),
    "loss.alpha": (0.25, float, "focal loss class-balance weight"),
    "loss.beta": (2.0, float, "focal loss focusing exponent"),
    "loss.w_focal": (0.5, float, "focal term weight in the mixed loss"),
    "loss.w_dice": (1.0, float, "dice term weight in the mixed loss"),
    "loss.w_lovasz": (0.5, float, "hinge term weight in the mixed loss"),
    "loss.focal_positive_only": (False, _parse_bool, "drop the label term (literal one-sided focal)"),
    "loss.cgm_weight": (0.25, float, "presence-BCE weight against the segmentation loss"),
    "train.lr0": (1e-3, float, "initial learning rate (cosine-annealed)"),
    "train.weight_decay": (1e-4, float, "decoupled weight decay"),
    "train.epochs": (30, int, "training passes (desk default; reference recipe used 100)"),
    "train.batch": (8, int, "mini-batch size (desk default; reference recipe used 128)"),
    "train.seed": (0, int, "master seed for init, split, shuffling, augmentation"),
    "train.augment": (True, _parse_bool, "rotate90/flip + photometric jitter"),
    "train.cgm": (True, _parse_bool, "train the presence classifiers"),
    "train.deep_supervision": (True, _parse_bool, "supervise all branches (off: output branch only)"),
    "data.dir": ("data", str, "dataset root with images/ and masks/"),
    "data.split_seed": (0, int, "seed of the train/validation shuffle"),
}


@dataclasses.dataclass
class RunConfig:
    arch: ArchConfig
    loss: LossWeights
    train: TrainConfig
    cgm_weight: float
    data_dir: str
    split_seed: int

    def to_dict(self) -> dict:
        return {
            "arch": dataclasses.asdict(self.arch),
            "loss": dataclasses.asdict(self.loss),
            "train": dataclasses.asdict(self.train),
            "cgm_weight": self.cgm_weight,
            "data_dir": self.data_dir,
            "split_seed": self.split_seed,
        }


def _build(values: dict) -> RunConfig:
    channels = values["arch.channels"]
    try:
        arch = ArchConfig(
            depth=len(channels),
            channels=channels,
            convs_per_node=values["arch.convs_per_node"],
            upsample_mode=values["arch.upsample_mode"],
            input_channels=values["arch.input_channels"],
            input_size=values["arch.input_size"],
        )
        loss = LossWeights(
            w_focal=values["loss.w_focal"],
            w_dice=values["loss.w_dice"],
            w_lovasz=values["loss.w_lovasz"],
            alpha=values["loss.alpha"],
            beta=values["loss.beta"],
            focal_positive_only=values["loss.focal_positive_only"],
        )
        train = TrainConfig(
            lr0=values["train.lr0"],
            weight_decay=values["train.weight_decay"],
            epochs=values["train.epochs"],
            batch_size=values["train.batch"],
            seed=values["train.seed"],
            augment=values["train.augment"],
            cgm=values["train.cgm"],
            deep_supervision=values["train.deep_supervision"],
            cgm_weight=values["loss.cgm_weight"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(arch, loss, train, values["loss.cgm_weight"], values["data.dir"], values["data.split_seed"])


def default_config() -> RunConfig:
    return _build({k: v[0] for k, v in SCHEMA.items()})


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    values = {k: v[0] for k, v in SCHEMA.items()}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        parser = SCHEMA[key][1]
        try:
            values[key] = parser(val.strip())
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from exc
    return _build(values)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, source=str(path))


def describe_defaults() -> str:
    lines = ["# run configuration keys (key = default  # doc)"]
    for key, (default, _, doc) in SCHEMA.items():
        if isinstance(default, tuple):
            default = ",".join(str(v) for v in default)
        lines.append(f"{key} = {default}  # {doc}")
    return "\n".join(lines)
