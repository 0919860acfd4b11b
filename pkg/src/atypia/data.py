"""Manifest ingestion, stratified fold planning, and per-fold training views
under real-only or synthetically balanced mixing.

A manifest is a CSV with header ``id,path,label,domain,provenance,origin_fold``;
labels are ``normal``/``atypical`` (mapped to 0/1), provenance is
``real``/``synthetic``, and ``origin_fold`` is set only on synthetic rows.
"""
from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np
from PIL import Image

from .errors import ValidationError

__all__ = [
    "IMAGE_SIDE",
    "PatchRecord",
    "Manifest",
    "FoldPlan",
    "MixPolicy",
    "decode_image",
    "load_manifest",
    "save_manifest",
    "stratified_kfold",
    "save_fold_plan",
    "load_fold_plan",
    "training_view",
    "class_counts",
]

IMAGE_SIDE = 128

MANIFEST_HEADER = ["id", "path", "label", "domain", "provenance", "origin_fold"]
LABEL_TOKENS = {"normal": 0, "atypical": 1}
LABEL_NAMES = {0: "normal", 1: "atypical"}


@dataclass(frozen=True)
class PatchRecord:
    """One labeled 128x128 crop with domain tag and real/synthetic provenance."""

    id: str
    image_ref: Path
    label: int
    domain: str
    provenance: str
    origin_fold: Optional[int] = None

    def __post_init__(self) -> None:
        if self.label not in (0, 1):
            raise ValidationError(f"record {self.id!r}: label must be 0 or 1, got {self.label}")
        if self.provenance not in ("real", "synthetic"):
            raise ValidationError(f"record {self.id!r}: unknown provenance {self.provenance!r}")
        if self.provenance == "synthetic":
            if self.origin_fold is None or self.origin_fold < 0:
                raise ValidationError(f"record {self.id!r}: synthetic row needs a non-negative origin_fold")
        elif self.origin_fold is not None:
            raise ValidationError(f"record {self.id!r}: real row must not carry an origin_fold")


class Manifest:
    """Ordered, validated list of patch records with cached class counts.

    Immutable after construction; all operations return new manifests.
    """

    def __init__(self, records: Sequence[PatchRecord]):
        records = tuple(records)
        seen = set()
        for rec in records:
            if rec.id in seen:
                raise ValidationError(f"duplicate record id {rec.id!r}")
            seen.add(rec.id)
        counts: dict = {}
        for rec in records:
            key = (rec.label, rec.provenance)
            counts[key] = counts.get(key, 0) + 1
        self._records = records
        self._counts = counts

    @property
    def records(self) -> tuple:
        return self._records

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[PatchRecord]:
        return iter(self._records)

    def count(self, label: int, provenance: str) -> int:
        return self._counts.get((label, provenance), 0)

    @property
    def is_real_only(self) -> bool:
        return all(r.provenance == "real" for r in self._records)

    @property
    def is_synthetic_only(self) -> bool:
        return all(r.provenance == "synthetic" for r in self._records)

    def ids(self) -> tuple:
        return tuple(r.id for r in self._records)


def decode_image(path: Path) -> np.ndarray:
    """Decode an image file to a HxWx3 uint8 array, rejecting wrong shapes."""
    try:
        with Image.open(path) as img:
            arr = np.array(img.convert("RGB"), dtype=np.uint8)
    except (OSError, ValueError) as exc:
        raise ValidationError(f"cannot decode image {path}: {exc}") from exc
    if arr.shape != (IMAGE_SIDE, IMAGE_SIDE, 3):
        raise ValidationError(
            f"image {path} has shape {arr.shape}, expected ({IMAGE_SIDE}, {IMAGE_SIDE}, 3)"
        )
    return arr


def _parse_row(row: dict, line_no: int, base_dir: Path) -> PatchRecord:
    missing = [c for c in MANIFEST_HEADER if row.get(c) is None]
    if missing or any(v is None for v in row.values()):
        raise ValidationError(f"manifest line {line_no}: malformed row")
    label_token = row["label"].strip()
    if label_token not in LABEL_TOKENS:
        raise ValidationError(f"manifest line {line_no}: unknown label token {label_token!r}")
    provenance = row["provenance"].strip()
    origin_raw = (row["origin_fold"] or "").strip()
    origin_fold: Optional[int] = None
    if provenance == "synthetic":
        if not origin_raw:
            raise ValidationError(f"manifest line {line_no}: synthetic row missing origin_fold")
        try:
            origin_fold = int(origin_raw)
        except ValueError as exc:
            raise ValidationError(f"manifest line {line_no}: bad origin_fold {origin_raw!r}") from exc
    elif origin_raw:
        raise ValidationError(f"manifest line {line_no}: real row must leave origin_fold empty")
    path = Path(row["path"])
    if not path.is_absolute():
        path = base_dir / path
    return PatchRecord(
        id=row["id"].strip(),
        image_ref=path,
        label=LABEL_TOKENS[label_token],
        domain=row["domain"].strip(),
        provenance=provenance,
        origin_fold=origin_fold,
    )


def load_manifest(path, validate_images: bool = True) -> Manifest:
    """Load and validate a manifest file.

    With ``validate_images`` (the default) every referenced image is decoded
    and shape-checked up front, so bad rows fail here rather than mid-training.
    Relative image paths resolve against the manifest's directory.
    """
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"manifest file not found: {path}")
    records = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ValidationError(f"manifest {path}: no records")
        if [c.strip() for c in reader.fieldnames] != MANIFEST_HEADER:
            raise ValidationError(
                f"manifest {path}: header must be {','.join(MANIFEST_HEADER)}"
            )
        for line_no, row in enumerate(reader, start=2):
            if None in row or any(v is None for v in row.values()):
                raise ValidationError(f"manifest line {line_no}: malformed row")
            records.append(_parse_row(row, line_no, path.parent))
    if not records:
        raise ValidationError(f"manifest {path}: no records")
    manifest = Manifest(records)
    if validate_images:
        for rec in manifest:
            decode_image(rec.image_ref)
    return manifest


def save_manifest(manifest: Manifest, path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_HEADER)
        for rec in manifest:
            writer.writerow(
                [
                    rec.id,
                    str(rec.image_ref),
                    LABEL_NAMES[rec.label],
                    rec.domain,
                    rec.provenance,
                    "" if rec.origin_fold is None else rec.origin_fold,
                ]
            )
    return path


@dataclass(frozen=True)
class FoldPlan:
    """Assignment of every real record id to one of k folds."""

    k: int
    assignment: dict
    seed: int

    def fold_ids(self, fold: int) -> tuple:
        return tuple(rid for rid, f in self.assignment.items() if f == fold)

    def fingerprint(self) -> str:
        payload = f"k={self.k};seed={self.seed};" + ";".join(
            f"{rid}:{f}" for rid, f in sorted(self.assignment.items())
        )
        return hashlib.sha256(payload.encode()).hexdigest()


def stratified_kfold(manifest: Manifest, k: int, seed: int) -> FoldPlan:
    """Label-stratified k-fold assignment of real records.

    Deterministic given (manifest order, k, seed); per-class fold sizes
    differ by at most one, extras going to the lowest fold indices.
    """
    if k < 1:
        raise ValidationError(f"fold count must be positive, got {k}")
    if seed < 0:
        raise ValidationError(f"seed must be non-negative, got {seed}")
    if not manifest.is_real_only:
        raise ValidationError("fold planning expects a real-only manifest")
    rng = np.random.default_rng(seed)
    assignment: dict = {}
    for label in (0, 1):
        indices = [i for i, rec in enumerate(manifest) if rec.label == label]
        if len(indices) < k:
            raise ValidationError(
                f"class {LABEL_NAMES[label]} has {len(indices)} members, fewer than k={k}"
            )
        order = rng.permutation(len(indices))
        base, rem = divmod(len(indices), k)
        cursor = 0
        for fold in range(k):
            size = base + (1 if fold < rem else 0)
            for j in order[cursor : cursor + size]:
                assignment[manifest.records[indices[j]].id] = fold
            cursor += size
    return FoldPlan(k=k, assignment=assignment, seed=seed)


def save_fold_plan(plan: FoldPlan, path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "fold"])
        for rid, fold in plan.assignment.items():
            writer.writerow([rid, fold])
    return path


def load_fold_plan(path, k: int, seed: int = 0) -> FoldPlan:
    """Read an ``id,fold`` plan file.

    The file format carries no seed; pass the plan's original seed when the
    plan will drive seed-dependent synthetic sampling.
    """
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"fold plan file not found: {path}")
    assignment: dict = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [c.strip() for c in reader.fieldnames] != ["id", "fold"]:
            raise ValidationError(f"fold plan {path}: header must be id,fold")
        for row in reader:
            fold = int(row["fold"])
            if not 0 <= fold < k:
                raise ValidationError(f"fold plan {path}: fold {fold} outside [0, {k})")
            if row["id"] in assignment:
                raise ValidationError(f"fold plan {path}: duplicate id {row['id']!r}")
            assignment[row["id"]] = fold
    return FoldPlan(k=k, assignment=assignment, seed=seed)


@dataclass(frozen=True)
class MixPolicy:
    """How synthetic records are mixed into each fold's training view."""

    regime: str = "real_only"
    synth_pos_per_fold: int = 7667
    synth_neg_per_fold: int = 0

    def __post_init__(self) -> None:
        if self.regime not in ("real_only", "synth_balanced"):
            raise ValidationError(f"unknown regime {self.regime!r}")
        if self.synth_pos_per_fold < 0 or self.synth_neg_per_fold < 0:
            raise ValidationError("synthetic per-fold counts must be non-negative")


def training_view(
    manifest: Manifest,
    plan: FoldPlan,
    fold: int,
    policy: MixPolicy,
    synth_pool: Optional[Manifest] = None,
) -> tuple:
    """Build one fold's (train, val) manifests.

    Validation is always the fold's real records. Training is the remaining
    real records plus, under ``synth_balanced``, a seed-deterministic sample
    of synthetic records whose ``origin_fold`` matches the fold.
    """
    if not 0 <= fold < plan.k:
        raise ValidationError(f"fold {fold} outside [0, {plan.k})")
    if not manifest.is_real_only:
        raise ValidationError("training_view expects a real-only base manifest")
    unplanned = [r.id for r in manifest if r.id not in plan.assignment]
    if unplanned:
        raise ValidationError(f"fold plan does not cover record {unplanned[0]!r}")
    val_records = [r for r in manifest if plan.assignment[r.id] == fold]
    train_records = [r for r in manifest if plan.assignment[r.id] != fold]
    if policy.regime == "real_only":
        return Manifest(train_records), Manifest(val_records)

    if synth_pool is None:
        raise ValidationError("synth_balanced regime requires a synthetic pool")
    if not synth_pool.is_synthetic_only:
        raise ValidationError("synthetic pool must contain only synthetic records")
    bad = [r.id for r in synth_pool if not 0 <= r.origin_fold < plan.k]
    if bad:
        raise ValidationError(f"synthetic record {bad[0]!r}: origin_fold outside [0, {plan.k})")
    rng = np.random.default_rng([plan.seed, fold])
    synth_records = []
    for label, want in ((1, policy.synth_pos_per_fold), (0, policy.synth_neg_per_fold)):
        candidates = [r for r in synth_pool if r.origin_fold == fold and r.label == label]
        if len(candidates) < want:
            raise ValidationError(
                f"synthetic pool too small for fold {fold}: need {want} "
                f"{LABEL_NAMES[label]} records, have {len(candidates)}"
            )
        chosen = rng.choice(len(candidates), size=want, replace=False)
        synth_records.extend(candidates[i] for i in chosen)
    return Manifest(train_records + synth_records), Manifest(val_records)


def class_counts(manifest: Manifest) -> tuple:
    """(n_neg, n_pos, prevalence) of a non-empty manifest."""
    if len(manifest) == 0:
        raise ValidationError("class counts undefined on an empty manifest")
    n_pos = manifest.count(1, "real") + manifest.count(1, "synthetic")
    n_neg = manifest.count(0, "real") + manifest.count(0, "synthetic")
    return n_neg, n_pos, n_pos / (n_pos + n_neg)
