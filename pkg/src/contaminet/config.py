"""Run configuration: TOML or JSON in, one normalized JSON copy out.

Every recipe constant has its standard default here (250x333 resize, 234x311
crop, +-10 degree rotation, batch 64, 12 epochs, warm fraction 0.3, divisors
25/2000, group divisors 9/3/1, TTA 5, 10,000 bootstrap resamples at level
0.95), so an empty file is a valid config apart from the data paths.  A copy
of the normalized config is written into each run directory; re-running from
that copy reproduces the run bit for bit.
"""

import dataclasses
import json
import sys
from dataclasses import dataclass, field

from .data import DESK_CROP, DESK_RESIZE, AugmentPolicy
from .errors import ConfigError
from .model import ModelConfig
from .optim import GroupLrPolicy
from .train import TrainConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


def _typed(section, key, value, kind):
    where = f"{section}.{key}" if section else key
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if kind is int and isinstance(value, bool):
        raise ConfigError(f"{where}: expected {kind.__name__}, got bool")
    if not isinstance(value, kind):
        raise ConfigError(f"{where}: expected {kind.__name__}, got {type(value).__name__}")
    return value


def _take(raw, section, key, default, kind):
    if key not in raw:
        return default
    value = raw.pop(key)
    if value is None:
        return None
    return _typed(section, key, value, kind)


def _no_leftovers(raw, section):
    if raw:
        raise ConfigError(f"unknown key(s) in [{section or 'top level'}]: {sorted(raw)}")


@dataclass(frozen=True)
class DataSection:
    manifest: str = ""
    images_dir: str = None  # default: the manifest's directory
    raters: str = None
    label_min_count: int = 0
    cache_images: bool = True
    skip_bad_images: bool = False

    @classmethod
    def from_dict(cls, raw):
        raw = dict(raw)
        out = cls(
            manifest=_take(raw, "data", "manifest", "", str),
            images_dir=_take(raw, "data", "images_dir", None, str),
            raters=_take(raw, "data", "raters", None, str),
            label_min_count=_take(raw, "data", "label_min_count", 0, int),
            cache_images=_take(raw, "data", "cache_images", True, bool),
            skip_bad_images=_take(raw, "data", "skip_bad_images", False, bool),
        )
        _no_leftovers(raw, "data")
        return out


@dataclass(frozen=True)
class ModelSection:
    conv_blocks: tuple = ((8, 3, 2), (16, 3, 2), (32, 3, 2))
    hidden_units: int = 64
    group_split: int = None

    @classmethod
    def from_dict(cls, raw):
        raw = dict(raw)
        blocks = raw.pop("conv_blocks", None)
        if blocks is None:
            blocks = cls.conv_blocks
        else:
            try:
                blocks = tuple(tuple(int(v) for v in b) for b in blocks)
            except (TypeError, ValueError):
                raise ConfigError("model.conv_blocks: expected a list of [filters, kernel, pool] triples")
        out = cls(
            conv_blocks=blocks,
            hidden_units=_take(raw, "model", "hidden_units", 64, int),
            group_split=_take(raw, "model", "group_split", None, int),
        )
        _no_leftovers(raw, "model")
        return out

    def to_model_config(self, head_outputs, crop_to) -> ModelConfig:
        return ModelConfig(
            head_outputs=head_outputs,
            conv_blocks=self.conv_blocks,
            hidden_units=self.hidden_units,
            input_shape=(3, crop_to[0], crop_to[1]),
            group_split=self.group_split,
        )


@dataclass(frozen=True)
class AugmentSection:
    desk_scale: bool = False
    resize_to: tuple = (250, 333)
    crop_to: tuple = (234, 311)
    rotation_deg: float = 10.0
    hflip_prob: float = 0.5
    random_crop: bool = True
    mean: tuple = (0.485, 0.456, 0.406)
    std: tuple = (0.229, 0.224, 0.225)

    @classmethod
    def from_dict(cls, raw):
        raw = dict(raw)

        def pair(key, default):
            v = raw.pop(key, None)
            if v is None:
                return default
            try:
                h, w = (int(x) for x in v)
            except (TypeError, ValueError):
                raise ConfigError(f"augment.{key}: expected [height, width]")
            return (h, w)

        def triple(key, default):
            v = raw.pop(key, None)
            if v is None:
                return default
            try:
                a, b, c = (float(x) for x in v)
            except (TypeError, ValueError):
                raise ConfigError(f"augment.{key}: expected 3 floats")
            return (a, b, c)

        out = cls(
            desk_scale=_take(raw, "augment", "desk_scale", False, bool),
            resize_to=pair("resize_to", cls.resize_to),
            crop_to=pair("crop_to", cls.crop_to),
            rotation_deg=_take(raw, "augment", "rotation_deg", 10.0, float),
            hflip_prob=_take(raw, "augment", "hflip_prob", 0.5, float),
            random_crop=_take(raw, "augment", "random_crop", True, bool),
            mean=triple("mean", cls.mean),
            std=triple("std", cls.std),
        )
        _no_leftovers(raw, "augment")
        return out

    def to_policy(self) -> AugmentPolicy:
        resize, crop = self.resize_to, self.crop_to
        if self.desk_scale:
            resize, crop = DESK_RESIZE, DESK_CROP
        return AugmentPolicy(
            resize_to=resize,
            crop_to=crop,
            rotation_deg=self.rotation_deg,
            hflip_prob=self.hflip_prob,
            random_crop=self.random_crop,
            mean=self.mean,
            std=self.std,
        )


@dataclass(frozen=True)
class TrainSection:
    epochs: int = 12
    batch_size: int = 64
    max_lr: float = 3e-3
    warm_frac: float = 0.3
    start_div: float = 25.0
    final_div: float = 2000.0
    literal_decay_segment: bool = False
    scheduler: str = "one_cycle"
    group_lr_divisors: tuple = (9.0, 3.0, 1.0)
    plateau_drop: float = 10.0
    plateau_tolerance: float = 0.0
    nan_guard: bool = True

    @classmethod
    def from_dict(cls, raw):
        raw = dict(raw)
        divisors = raw.pop("group_lr_divisors", None)
        if divisors is None:
            divisors = cls.group_lr_divisors
        else:
            try:
                divisors = tuple(float(d) for d in divisors)
            except (TypeError, ValueError):
                raise ConfigError("train.group_lr_divisors: expected 3 numbers")
        out = cls(
            epochs=_take(raw, "train", "epochs", 12, int),
            batch_size=_take(raw, "train", "batch_size", 64, int),
            max_lr=_take(raw, "train", "max_lr", 3e-3, float),
            warm_frac=_take(raw, "train", "warm_frac", 0.3, float),
            start_div=_take(raw, "train", "start_div", 25.0, float),
            final_div=_take(raw, "train", "final_div", 2000.0, float),
            literal_decay_segment=_take(raw, "train", "literal_decay_segment", False, bool),
            scheduler=_take(raw, "train", "scheduler", "one_cycle", str),
            group_lr_divisors=divisors,
            plateau_drop=_take(raw, "train", "plateau_drop", 10.0, float),
            plateau_tolerance=_take(raw, "train", "plateau_tolerance", 0.0, float),
            nan_guard=_take(raw, "train", "nan_guard", True, bool),
        )
        _no_leftovers(raw, "train")
        return out

    def to_train_config(self, seed) -> TrainConfig:
        if len(self.group_lr_divisors) != 3 or any(d <= 0 for d in self.group_lr_divisors):
            raise ConfigError("train.group_lr_divisors: need 3 positive numbers")
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            max_lr=self.max_lr,
            warm_frac=self.warm_frac,
            start_div=self.start_div,
            final_div=self.final_div,
            literal_decay_segment=self.literal_decay_segment,
            group_policy=GroupLrPolicy(tuple(1.0 / d for d in self.group_lr_divisors)),
            scheduler=self.scheduler,
            plateau_drop=self.plateau_drop,
            plateau_tolerance=self.plateau_tolerance,
            seed=seed,
            nan_guard=self.nan_guard,
        )


@dataclass(frozen=True)
class EvalSection:
    tta: int = 5
    resamples: int = 10000
    level: float = 0.95
    aggregation: str = "macro"

    @classmethod
    def from_dict(cls, raw):
        raw = dict(raw)
        out = cls(
            tta=_take(raw, "eval", "tta", 5, int),
            resamples=_take(raw, "eval", "resamples", 10000, int),
            level=_take(raw, "eval", "level", 0.95, float),
            aggregation=_take(raw, "eval", "aggregation", "macro", str),
        )
        _no_leftovers(raw, "eval")
        if out.aggregation not in ("macro", "micro"):
            raise ConfigError(f"eval.aggregation: must be macro or micro, got {out.aggregation!r}")
        return out


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out_dir: str = None
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    augment: AugmentSection = field(default_factory=AugmentSection)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)

    @classmethod
    def from_dict(cls, raw):
        raw = dict(raw)
        seed = _take(raw, "", "seed", 0, int)
        if seed < 0:
            raise ConfigError(f"seed must be >= 0, got {seed}")
        out_dir = _take(raw, "", "out_dir", None, str)
        sections = {}
        for name, section_cls in (
            ("data", DataSection),
            ("model", ModelSection),
            ("augment", AugmentSection),
            ("train", TrainSection),
            ("eval", EvalSection),
        ):
            sub = raw.pop(name, {})
            if not isinstance(sub, dict):
                raise ConfigError(f"[{name}] must be a table/object")
            sections[name] = section_cls.from_dict(sub)
        _no_leftovers(raw, "")
        return cls(seed=seed, out_dir=out_dir, **sections)

    @classmethod
    def from_file(cls, path):
        try:
            with open(path, "rb") as fh:
                blob = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        text = blob.decode("utf-8")
        if str(path).endswith(".json") or text.lstrip()[:1] == "{":
            try:
                raw = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
        else:
            try:
                raw = tomllib.loads(text)
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"{path}: invalid TOML: {exc}") from exc
        return cls.from_dict(raw)

    def to_dict(self):
        def plain(obj):
            if dataclasses.is_dataclass(obj):
                return plain(dataclasses.asdict(obj))
            if isinstance(obj, dict):
                return {k: plain(v) for k, v in obj.items()}
            if isinstance(obj, (list, tuple)):
                return [plain(v) for v in obj]
            return obj

        return plain(self)

    def write_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")
