"""Manifest/label ingestion, vocabulary thresholding, and image preprocessing.

File formats
------------
Manifest CSV (UTF-8, header row)::

    image_path,split,labels[,stream]

``labels`` is a ``;``-separated list of label names (empty allowed = clean
bin); ``split`` is one of train/valid/test; the optional ``stream`` column is
carried through but unused by the model.  Rater CSV::

    image_path,rater_id,labels

with ``rater_id`` in 1..R.  Vocabularies persist as an ordered JSON array of
``{"name": ..., "frequency": ...}``.

Every random choice is drawn from a generator derived from (seed, epoch,
record index), so the emitted tensors are a pure function of (manifest, seed,
config) and records can be augmented in parallel without changing results.
"""

import csv
import hashlib
import json
import math
import os
from collections import Counter
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError

from . import kernels
from .errors import (
    EmptyVocabularyError,
    ImageDecodeError,
    ManifestError,
    ShapeError,
    ValidationError,
)

SPLITS = ("train", "valid", "test")

# Desk-scale geometry: same aspect ratio and crop-margin ratios as the full
# 250x333 -> 234x311 recipe, small enough for finite-difference checks.
DESK_RESIZE = (40, 53)
DESK_CROP = (36, 47)


def derive_rng(seed, *key) -> np.random.Generator:
    """Independent substream for (seed, key...); stable across runs."""
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.default_rng(seq)


@dataclass(frozen=True)
class ManifestRecord:
    image_path: str
    split: str
    labels: frozenset
    stream: str = ""


@dataclass(frozen=True)
class RaterRecord:
    image_path: str
    rater_id: int
    labels: frozenset


class LabelVocabulary:
    """Ordered label names with training-split frequencies.

    The order is fixed at construction and defines the index of each entry in
    every label vector derived from the vocabulary.
    """

    def __init__(self, entries):
        entries = tuple((str(n), int(c)) for n, c in entries)
        names = [n for n, _ in entries]
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise ValidationError(f"duplicate vocabulary names: {dupes}")
        if any(c < 0 for _, c in entries):
            raise ValidationError("vocabulary frequencies must be non-negative")
        self.entries = entries
        self._index = {n: i for i, (n, _) in enumerate(entries)}

    @classmethod
    def from_counts(cls, counts):
        """Order by descending frequency, name as the tie-break."""
        ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        return cls(ordered)

    @property
    def names(self):
        return tuple(n for n, _ in self.entries)

    @property
    def frequencies(self):
        return tuple(c for _, c in self.entries)

    def __len__(self):
        return len(self.entries)

    def __contains__(self, name):
        return name in self._index

    def __eq__(self, other):
        return isinstance(other, LabelVocabulary) and self.entries == other.entries

    def index_of(self, name) -> int:
        return self._index[name]

    def digest(self) -> str:
        blob = json.dumps([[n, c] for n, c in self.entries], separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def save_vocabulary(vocab: LabelVocabulary, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(
            [{"name": n, "frequency": c} for n, c in vocab.entries],
            fh,
            indent=2,
        )
        fh.write("\n")


def load_vocabulary(path) -> LabelVocabulary:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    try:
        return LabelVocabulary((item["name"], item["frequency"]) for item in raw)
    except (TypeError, KeyError) as exc:
        raise ValidationError(f"malformed vocabulary file {path}: {exc}") from exc


def _parse_label_cell(cell: str) -> frozenset:
    return frozenset(tok.strip() for tok in cell.split(";") if tok.strip())


def _open_csv(path):
    try:
        return open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise ManifestError(f"cannot open {path}: {exc}") from exc


def load_manifest(path, check_images=False, images_dir=None):
    """Read a manifest CSV into records plus the master vocabulary.

    The vocabulary holds every label name seen in any split; frequencies count
    training records only.  Errors carry the offending line number.
    """
    records = []
    seen_paths = set()
    with _open_csv(path) as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ManifestError(f"{path}: empty manifest")
        required = ["image_path", "split", "labels"]
        if header[: len(required)] != required or len(header) > 4 or (
            len(header) == 4 and header[3] != "stream"
        ):
            raise ManifestError(
                f"{path}: line 1: header must be image_path,split,labels[,stream], got {header}"
            )
        base = images_dir if images_dir is not None else os.path.dirname(os.path.abspath(path))
        for row in reader:
            line = reader.line_num
            if len(row) != len(header):
                raise ManifestError(f"{path}: line {line}: expected {len(header)} fields, got {len(row)}")
            image_path, split, labels = row[0].strip(), row[1].strip(), row[2]
            stream = row[3].strip() if len(row) == 4 else ""
            if not image_path:
                raise ManifestError(f"{path}: line {line}: empty image_path")
            if split not in SPLITS:
                raise ManifestError(f"{path}: line {line}: unknown split {split!r}")
            if image_path in seen_paths:
                raise ManifestError(f"{path}: line {line}: duplicate image_path {image_path!r}")
            seen_paths.add(image_path)
            if check_images and not os.path.exists(os.path.join(base, image_path)):
                raise ManifestError(f"{path}: line {line}: image not found: {image_path}")
            records.append(
                ManifestRecord(image_path=image_path, split=split, labels=_parse_label_cell(labels), stream=stream)
            )
    counts = Counter()
    all_names = set()
    for rec in records:
        all_names.update(rec.labels)
        if rec.split == "train":
            counts.update(rec.labels)
    vocab = LabelVocabulary.from_counts({name: counts.get(name, 0) for name in all_names})
    return records, vocab


def load_rater_file(path):
    """Read a rater CSV into records; one row per (image, rater) pair."""
    records = []
    seen = set()
    with _open_csv(path) as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ManifestError(f"{path}: empty rater file")
        if header != ["image_path", "rater_id", "labels"]:
            raise ManifestError(
                f"{path}: line 1: header must be image_path,rater_id,labels, got {header}"
            )
        for row in reader:
            line = reader.line_num
            if len(row) != 3:
                raise ManifestError(f"{path}: line {line}: expected 3 fields, got {len(row)}")
            image_path = row[0].strip()
            if not image_path:
                raise ManifestError(f"{path}: line {line}: empty image_path")
            try:
                rater_id = int(row[1])
            except ValueError:
                raise ManifestError(f"{path}: line {line}: rater_id must be an integer, got {row[1]!r}")
            if rater_id < 1:
                raise ManifestError(f"{path}: line {line}: rater_id must be >= 1, got {rater_id}")
            if (image_path, rater_id) in seen:
                raise ManifestError(f"{path}: line {line}: duplicate (image_path, rater_id) pair")
            seen.add((image_path, rater_id))
            records.append(RaterRecord(image_path=image_path, rater_id=rater_id, labels=_parse_label_cell(row[2])))
    return records


@dataclass(frozen=True)
class ThresholdReport:
    min_count: int
    labels_before: int
    labels_after: int
    # fraction of training records that still carry >= 1 kept label
    retained_record_fraction: float = None
    # fraction of training label occurrences that fall on kept labels
    retained_occurrence_fraction: float = None

    def as_dict(self):
        return {
            "min_count": self.min_count,
            "labels_before": self.labels_before,
            "labels_after": self.labels_after,
            "retained_record_fraction": self.retained_record_fraction,
            "retained_occurrence_fraction": self.retained_occurrence_fraction,
        }


def apply_label_threshold(vocab: LabelVocabulary, min_count: int, train_records=None):
    """Keep labels whose training frequency is >= min_count (inclusive).

    Returns the filtered vocabulary plus a retention report; the two retained
    fractions are computed only when training records are supplied ("retained
    observations" is ambiguous between records and label occurrences, so both
    are reported).
    """
    if min_count < 0:
        raise ValidationError(f"min_count must be >= 0, got {min_count}")
    kept = [(n, c) for n, c in vocab.entries if c >= min_count]
    if not kept:
        raise EmptyVocabularyError(
            f"min_count={min_count} removes all {len(vocab)} labels"
        )
    filtered = LabelVocabulary(kept)
    rec_frac = occ_frac = None
    if train_records is not None:
        train = [r for r in train_records if r.split == "train"]
        kept_names = set(filtered.names)
        full_names = set(vocab.names)
        if train:
            with_kept = sum(1 for r in train if r.labels & kept_names)
            rec_frac = with_kept / len(train)
            total_occ = sum(len(r.labels & full_names) for r in train)
            kept_occ = sum(len(r.labels & kept_names) for r in train)
            occ_frac = kept_occ / total_occ if total_occ else 1.0
    report = ThresholdReport(
        min_count=min_count,
        labels_before=len(vocab),
        labels_after=len(filtered),
        retained_record_fraction=rec_frac,
        retained_occurrence_fraction=occ_frac,
    )
    return filtered, report


def encode_labels(record_or_labels, vocab: LabelVocabulary) -> np.ndarray:
    """Binary vector over the active vocabulary; labels thresholded out of the
    vocabulary are silently dropped."""
    labels = record_or_labels.labels if isinstance(record_or_labels, (ManifestRecord, RaterRecord)) else record_or_labels
    y = np.zeros(len(vocab), dtype=np.float64)
    for name in labels:
        idx = vocab._index.get(name)
        if idx is not None:
            y[idx] = 1.0
    return y


@dataclass(frozen=True)
class AugmentPolicy:
    """Geometry and normalization applied to every image.

    Training order: resize -> rotate (uniform in +-rotation_deg) -> crop
    (random offset, or centered when random_crop is off) -> horizontal flip
    with hflip_prob -> scale to [0,1] -> per-channel normalize.  Evaluation
    uses the deterministic subset: resize -> center crop -> normalize.
    """

    resize_to: tuple = (250, 333)
    crop_to: tuple = (234, 311)
    rotation_deg: float = 10.0
    hflip_prob: float = 0.5
    random_crop: bool = True
    # per-channel normalization constants (RGB), the widely used large-corpus
    # defaults; configurable because nothing downstream depends on the values
    mean: tuple = (0.485, 0.456, 0.406)
    std: tuple = (0.229, 0.224, 0.225)

    def __post_init__(self):
        rh, rw = self.resize_to
        ch, cw = self.crop_to
        if rh < 1 or rw < 1 or ch < 1 or cw < 1:
            raise ValidationError(f"resize/crop dims must be positive: {self.resize_to}, {self.crop_to}")
        if ch > rh or cw > rw:
            raise ValidationError(f"crop {self.crop_to} does not fit inside resize {self.resize_to}")
        if not 0.0 <= self.hflip_prob <= 1.0:
            raise ValidationError(f"hflip_prob must be in [0,1], got {self.hflip_prob}")
        if self.rotation_deg < 0:
            raise ValidationError(f"rotation_deg must be >= 0, got {self.rotation_deg}")
        if len(self.mean) != 3 or len(self.std) != 3 or any(s <= 0 for s in self.std):
            raise ValidationError("mean/std must be 3 channels with positive std")

    def eval_only(self) -> "AugmentPolicy":
        """The deterministic variant used for degenerate TTA."""
        return AugmentPolicy(
            resize_to=self.resize_to,
            crop_to=self.crop_to,
            rotation_deg=0.0,
            hflip_prob=0.0,
            random_crop=False,
            mean=self.mean,
            std=self.std,
        )


def desk_policy(**overrides) -> AugmentPolicy:
    kwargs = {"resize_to": DESK_RESIZE, "crop_to": DESK_CROP}
    kwargs.update(overrides)
    return AugmentPolicy(**kwargs)


def _as_float_image(image) -> np.ndarray:
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeError(f"expected an (H,W,3) image, got shape {arr.shape}")
    return np.ascontiguousarray(arr, dtype=np.float64)


def _finish(img, policy) -> np.ndarray:
    img = img / 255.0
    img = (img - np.asarray(policy.mean)) / np.asarray(policy.std)
    return np.ascontiguousarray(img.transpose(2, 0, 1))


def _center_offsets(policy):
    return (
        (policy.resize_to[0] - policy.crop_to[0]) // 2,
        (policy.resize_to[1] - policy.crop_to[1]) // 2,
    )


def preprocess_train(image, policy: AugmentPolicy, rng: np.random.Generator) -> np.ndarray:
    """Augmented training view of one image, shape (3, crop_h, crop_w).

    Random draws happen in a fixed order (angle, crop row, crop col, flip)
    and only for transforms that are enabled, so a policy with augmentation
    switched off reproduces the evaluation path bit for bit.
    """
    img = _as_float_image(image)
    img = kernels.resize_bilinear(img, *policy.resize_to)
    if policy.rotation_deg > 0:
        angle = rng.uniform(-policy.rotation_deg, policy.rotation_deg)
        img = kernels.rotate_bilinear(img, math.radians(angle))
    ch, cw = policy.crop_to
    if policy.random_crop:
        oy = int(rng.integers(0, policy.resize_to[0] - ch + 1))
        ox = int(rng.integers(0, policy.resize_to[1] - cw + 1))
    else:
        oy, ox = _center_offsets(policy)
    img = img[oy : oy + ch, ox : ox + cw]
    if policy.hflip_prob > 0 and rng.random() < policy.hflip_prob:
        img = img[:, ::-1]
    return _finish(img, policy)


def preprocess_eval(image, policy: AugmentPolicy) -> np.ndarray:
    """Deterministic view: resize, center crop, normalize."""
    img = _as_float_image(image)
    img = kernels.resize_bilinear(img, *policy.resize_to)
    oy, ox = _center_offsets(policy)
    ch, cw = policy.crop_to
    img = img[oy : oy + ch, ox : ox + cw]
    return _finish(img, policy)


def tta_views(image, policy: AugmentPolicy, n: int = 5, rng=None):
    """``n`` independently augmented views of one test image."""
    if n < 1:
        raise ValidationError(f"tta_views: n must be >= 1, got {n}")
    rng = np.random.default_rng(0) if rng is None else rng
    return [preprocess_train(image, policy, rng) for _ in range(n)]


class ImageStore:
    """Decodes manifest-relative PNG/JPEG files, with an optional in-memory
    cache of the raw uint8 arrays (decoded pixels are reused every epoch)."""

    def __init__(self, base_dir, cache=True):
        self.base_dir = base_dir
        self._cache = {} if cache else None

    def get(self, image_path) -> np.ndarray:
        if self._cache is not None and image_path in self._cache:
            return self._cache[image_path]
        full = os.path.join(self.base_dir, image_path)
        try:
            with Image.open(full) as im:
                arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
        except (OSError, UnidentifiedImageError, ValueError) as exc:
            raise ImageDecodeError(f"cannot decode {full}: {exc}") from exc
        if self._cache is not None:
            self._cache[image_path] = arr
        return arr


def drop_undecodable(records, store: ImageStore, log=None):
    """Filter records whose image fails to decode; used when the run is
    configured to skip rather than abort on bad files."""
    kept = []
    for rec in records:
        try:
            store.get(rec.image_path)
        except ImageDecodeError as exc:
            if log is not None:
                log(f"skipping {rec.image_path}: {exc}")
            continue
        kept.append(rec)
    return kept


def batch_iter(records, vocab, policy, batch_size, store, seed, epoch=0, train=True):
    """Yield (images, targets) mini-batches covering every record once.

    Shuffle order comes from (seed, epoch); each record's augmentation stream
    comes from (seed, epoch, record index), independent of its shuffle
    position.  The final short batch is emitted.
    """
    if not records:
        raise ValidationError("batch_iter: no records")
    if batch_size < 1:
        raise ValidationError(f"batch_iter: batch_size must be >= 1, got {batch_size}")
    n = len(records)
    if train:
        order = derive_rng(seed, epoch, 0).permutation(n)
    else:
        order = np.arange(n)
    for start in range(0, n, batch_size):
        chunk = order[start : start + batch_size]
        xs, ys = [], []
        for idx in chunk:
            rec = records[int(idx)]
            raw = store.get(rec.image_path)
            if train:
                x = preprocess_train(raw, policy, derive_rng(seed, epoch, 1, int(idx)))
            else:
                x = preprocess_eval(raw, policy)
            xs.append(x)
            ys.append(encode_labels(rec, vocab))
        yield np.stack(xs), np.stack(ys)
