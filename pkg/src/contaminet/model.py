"""Small configurable CNN with a replaceable sigmoid head and three layer
groups for discriminative fine-tuning.

Architecture: ``conv_blocks`` repetitions of conv(3x3-ish, stride 1, pad k//2)
-> relu -> maxpool, then flatten, one hidden dense + relu, and a K-output
dense head (probabilities come from a downstream sigmoid).  Group 1 holds the
conv blocks nearest the image, group 2 the remaining conv blocks plus the
hidden dense, group 3 exactly the head.

Checkpoints are a versioned binary: magic, version, JSON header (config,
parameter manifest, optional vocabulary + its hash), raw little-endian
float64 payload, then a SHA-256 of header+payload.
"""

import dataclasses
import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .data import LabelVocabulary
from .errors import CheckpointError, ConfigError, ShapeError

CHECKPOINT_MAGIC = b"CNCK"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    head_outputs: int
    conv_blocks: tuple = ((8, 3, 2), (16, 3, 2), (32, 3, 2))  # (filters, kernel, pool)
    hidden_units: int = 64
    input_shape: tuple = (3, 36, 47)
    group_split: int = None  # conv blocks in group 1; default: first half

    def __post_init__(self):
        if self.head_outputs < 1:
            raise ConfigError(f"head_outputs must be >= 1, got {self.head_outputs}")
        if self.hidden_units < 1:
            raise ConfigError(f"hidden_units must be >= 1, got {self.hidden_units}")
        if len(self.input_shape) != 3 or any(d < 1 for d in self.input_shape):
            raise ConfigError(f"input_shape must be (C,H,W) positive, got {self.input_shape}")
        for blk in self.conv_blocks:
            if len(blk) != 3 or any(int(v) < 1 for v in blk):
                raise ConfigError(f"conv block must be (filters, kernel, pool) >= 1, got {blk}")
        self.feature_shape()  # raises on spatial underflow
        split = self.split_point()
        if not 0 <= split <= len(self.conv_blocks):
            raise ConfigError(f"group_split {split} outside [0, {len(self.conv_blocks)}]")

    def split_point(self) -> int:
        if self.group_split is not None:
            return self.group_split
        return len(self.conv_blocks) // 2

    def feature_shape(self):
        """(channels, h, w) entering the flatten, checking spatial underflow."""
        c, h, w = self.input_shape
        for filters, kernel, pool in self.conv_blocks:
            h = h + 2 * (kernel // 2) - kernel + 1
            w = w + 2 * (kernel // 2) - kernel + 1
            if h < pool or w < pool:
                raise ConfigError(
                    f"conv block (f={filters},k={kernel},p={pool}) pools {h}x{w} below 1x1"
                )
            h = (h - pool) // pool + 1
            w = (w - pool) // pool + 1
            c = filters
        return c, h, w

    def flat_features(self) -> int:
        c, h, w = self.feature_shape()
        return c * h * w

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["conv_blocks"] = [list(b) for b in self.conv_blocks]
        d["input_shape"] = list(self.input_shape)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(
            head_outputs=int(d["head_outputs"]),
            conv_blocks=tuple(tuple(int(v) for v in b) for b in d["conv_blocks"]),
            hidden_units=int(d["hidden_units"]),
            input_shape=tuple(int(v) for v in d["input_shape"]),
            group_split=d.get("group_split"),
        )


@dataclass(frozen=True)
class LayerGroups:
    """Disjoint, exhaustive partition of the named parameters."""

    group1: tuple
    group2: tuple
    group3: tuple

    def all_params(self):
        return self.group1 + self.group2 + self.group3


def _uniform_init(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _init_head(config, rng):
    fan_in = config.hidden_units
    w = ad.Tensor(_uniform_init(rng, (config.head_outputs, fan_in), fan_in), requires_grad=True)
    b = ad.Tensor(_uniform_init(rng, (config.head_outputs,), fan_in), requires_grad=True)
    return w, b


class Model:
    """Parameter container plus the forward graph builder."""

    def __init__(self, config: ModelConfig, params):
        self.config = config
        self._params = dict(params)

    def named_parameters(self):
        return list(self._params.items())

    def parameters(self):
        return list(self._params.values())

    def zero_grad(self):
        for p in self._params.values():
            p.zero_grad()

    def forward(self, x) -> ad.Tensor:
        """Logits for a batch (N,C,H,W); a single (C,H,W) image is promoted
        to a batch of one."""
        arr = x.data if isinstance(x, ad.Tensor) else np.asarray(x, dtype=np.float64)
        if arr.ndim == 3:
            arr = arr[None]
        if arr.ndim != 4 or arr.shape[1:] != tuple(self.config.input_shape):
            raise ShapeError(
                f"forward: expected batch of {self.config.input_shape}, got {arr.shape}"
            )
        t = ad.Tensor(arr)
        for i, (_, kernel, pool) in enumerate(self.config.conv_blocks):
            t = ad.conv2d(t, self._params[f"conv{i}.weight"], self._params[f"conv{i}.bias"], stride=1, padding=kernel // 2)
            t = ad.relu(t)
            t = ad.max_pool2d(t, pool)
        t = t.reshape(arr.shape[0], self.config.flat_features())
        t = ad.relu(ad.dense(t, self._params["hidden.weight"], self._params["hidden.bias"]))
        return ad.dense(t, self._params["head.weight"], self._params["head.bias"])

    def layer_groups(self) -> LayerGroups:
        split = self.config.split_point()
        g1, g2 = [], []
        for i in range(len(self.config.conv_blocks)):
            target = g1 if i < split else g2
            target.append((f"conv{i}.weight", self._params[f"conv{i}.weight"]))
            target.append((f"conv{i}.bias", self._params[f"conv{i}.bias"]))
        g2.append(("hidden.weight", self._params["hidden.weight"]))
        g2.append(("hidden.bias", self._params["hidden.bias"]))
        g3 = [("head.weight", self._params["head.weight"]), ("head.bias", self._params["head.bias"])]
        return LayerGroups(group1=tuple(g1), group2=tuple(g2), group3=tuple(g3))


def build_model(config: ModelConfig, rng) -> Model:
    """Fan-in-scaled uniform initialization from a seeded generator; the seed
    fully determines every parameter."""
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    params = {}
    c_in = config.input_shape[0]
    for i, (filters, kernel, _) in enumerate(config.conv_blocks):
        fan_in = c_in * kernel * kernel
        params[f"conv{i}.weight"] = ad.Tensor(
            _uniform_init(rng, (filters, c_in, kernel, kernel), fan_in), requires_grad=True
        )
        params[f"conv{i}.bias"] = ad.Tensor(_uniform_init(rng, (filters,), fan_in), requires_grad=True)
        c_in = filters
    flat = config.flat_features()
    params["hidden.weight"] = ad.Tensor(
        _uniform_init(rng, (config.hidden_units, flat), flat), requires_grad=True
    )
    params["hidden.bias"] = ad.Tensor(_uniform_init(rng, (config.hidden_units,), flat), requires_grad=True)
    head_w, head_b = _init_head(config, rng)
    params["head.weight"] = head_w
    params["head.bias"] = head_b
    return Model(config, params)


def replace_head(model: Model, new_outputs: int, rng) -> Model:
    """Swap in a freshly initialized K-output head; every other parameter
    keeps its identity (and therefore its bits)."""
    if new_outputs < 1:
        raise ConfigError(f"replace_head: new_outputs must be >= 1, got {new_outputs}")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    model.config = dataclasses.replace(model.config, head_outputs=new_outputs)
    head_w, head_b = _init_head(model.config, rng)
    model._params["head.weight"] = head_w
    model._params["head.bias"] = head_b
    return model


def save_checkpoint(model: Model, path, vocab: LabelVocabulary = None):
    names = sorted(model._params)
    header = {
        "format_version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "params": [{"name": n, "shape": list(model._params[n].data.shape)} for n in names],
        "vocabulary": [[n, c] for n, c in vocab.entries] if vocab is not None else None,
        "vocab_sha256": vocab.digest() if vocab is not None else None,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = b"".join(
        np.ascontiguousarray(model._params[n].data, dtype="<f8").tobytes() for n in names
    )
    digest = hashlib.sha256(header_bytes + payload).digest()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)
        fh.write(digest)


def load_checkpoint(path):
    """Rebuild (model, vocabulary-or-None) from a checkpoint file."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    fixed = len(CHECKPOINT_MAGIC) + struct.calcsize("<IQ")
    if len(blob) < fixed or blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, header_len = struct.unpack("<IQ", blob[4:fixed])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: version {version}, expected {CHECKPOINT_VERSION}")
    header_end = fixed + header_len
    if len(blob) < header_end + 32:
        raise CheckpointError(f"{path}: truncated checkpoint")
    header_bytes = blob[fixed:header_end]
    payload = blob[header_end:-32]
    if hashlib.sha256(header_bytes + payload).digest() != blob[-32:]:
        raise CheckpointError(f"{path}: checksum mismatch (corrupt checkpoint)")
    header = json.loads(header_bytes.decode("utf-8"))
    config = ModelConfig.from_dict(header["config"])
    params = {}
    offset = 0
    for spec_item in header["params"]:
        shape = tuple(spec_item["shape"])
        count = int(np.prod(shape)) if shape else 1
        size = count * 8
        if offset + size > len(payload):
            raise CheckpointError(f"{path}: payload shorter than parameter manifest")
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=offset).reshape(shape)
        params[spec_item["name"]] = ad.Tensor(arr.copy(), requires_grad=True)
        offset += size
    if offset != len(payload):
        raise CheckpointError(f"{path}: payload longer than parameter manifest")
    vocab = None
    if header.get("vocabulary") is not None:
        vocab = LabelVocabulary(header["vocabulary"])
        if header.get("vocab_sha256") not in (None, vocab.digest()):
            raise CheckpointError(f"{path}: vocabulary hash mismatch")
    return Model(config, params), vocab
