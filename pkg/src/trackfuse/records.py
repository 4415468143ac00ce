"""Canonical records and on-disk formats.

A dataset lives in a directory with a JSON manifest:

    {"n_views": int, "h": int, "w": int, "dim": int,
     "detections": "<path>", "embeddings": "<path>",
     "descriptions": "<path optional>", "tracks": "<path optional>"}

Detections are line-delimited JSON ({view, label, conf, mask{h,w,counts},
track?}), embeddings a JSON map label -> [float, ...], descriptions
line-delimited ({track, keyframe, category, referrals: [{text, vec}]}).
Paths are resolved relative to the manifest. Serialization is canonical
(sorted keys, repr floats), so save followed by load is the identity and
re-serialization is byte-stable.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import SchemaError
from .rle import RleMask

UNIT_NORM_TOL = 1e-6


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(obj) -> str:
    """sha256 of the canonical JSON serialization of ``obj``."""
    return hashlib.sha256(_dumps(obj).encode("utf-8")).hexdigest()


def text_embedding(text: str, dim: int) -> np.ndarray:
    """Deterministic unit vector for a piece of text.

    Seeded from sha256(text), so identical text always maps to the same
    direction and distinct texts are near-orthogonal at moderate dim.
    """
    seed = int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big")
    vec = np.random.default_rng(seed).standard_normal(dim)
    return vec / np.linalg.norm(vec)


@dataclass
class Detection:
    """One per-view observation: mask, raw label, confidence, optional track."""

    view: int
    mask: RleMask
    raw_label: str
    confidence: float
    track_id: int | None = None
    resolved_label: str | None = None

    def __post_init__(self) -> None:
        if self.view < 0:
            raise SchemaError(f"view index must be nonnegative, got {self.view}")
        if not self.raw_label:
            raise SchemaError("raw_label must be non-empty")
        if not 0.0 <= self.confidence <= 1.0:
            raise SchemaError(f"confidence must be in [0, 1], got {self.confidence}")
        if self.track_id is not None and self.track_id < 0:
            raise SchemaError(f"track_id must be nonnegative, got {self.track_id}")

    def to_json(self) -> dict:
        obj = {
            "view": self.view,
            "label": self.raw_label,
            "conf": self.confidence,
            "mask": self.mask.to_json(),
        }
        if self.track_id is not None:
            obj["track"] = self.track_id
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "Detection":
        try:
            return cls(
                view=int(obj["view"]),
                mask=RleMask.from_json(obj["mask"]),
                raw_label=str(obj["label"]),
                confidence=float(obj["conf"]),
                track_id=int(obj["track"]) if "track" in obj else None,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"malformed detection record: {exc}") from exc


@dataclass(frozen=True)
class Trajectory:
    """Detections of one physical object: (view, detection index) members."""

    track_id: int
    members: tuple[tuple[int, int], ...]

    def __post_init__(self) -> None:
        if not self.members:
            raise SchemaError(f"trajectory {self.track_id} has no members")
        views = [v for v, _ in self.members]
        if any(b <= a for a, b in zip(views, views[1:])):
            raise SchemaError(
                f"trajectory {self.track_id} member views must be strictly increasing"
            )

    @property
    def views(self) -> tuple[int, ...]:
        return tuple(v for v, _ in self.members)


@dataclass(frozen=True)
class LabelEmbedding:
    label: str
    vector: np.ndarray

    def __post_init__(self) -> None:
        norm = float(np.linalg.norm(self.vector))
        if abs(norm - 1.0) > UNIT_NORM_TOL:
            raise SchemaError(
                f"embedding for {self.label!r} must be unit-norm, got |v| = {norm}"
            )


@dataclass
class DescriptionSet:
    """Per-track category plus graded referring texts with their embeddings."""

    track_id: int
    category: str
    referrals: list[tuple[str, np.ndarray]] = field(default_factory=list)
    keyframe: int | None = None

    def __post_init__(self) -> None:
        if not self.category:
            raise SchemaError(f"description set for track {self.track_id} lacks a category")

    def to_json(self) -> dict:
        obj = {
            "track": self.track_id,
            "category": self.category,
            "referrals": [{"text": t, "vec": v.tolist()} for t, v in self.referrals],
        }
        if self.keyframe is not None:
            obj["keyframe"] = self.keyframe
        return obj

    @classmethod
    def from_json(cls, obj: dict, dim: int | None = None) -> "DescriptionSet":
        try:
            refs = []
            for r in obj["referrals"]:
                vec = np.asarray(r["vec"], dtype=float)
                if dim is not None and vec.shape != (dim,):
                    raise SchemaError(
                        f"referral vector has dim {vec.shape}, expected ({dim},)"
                    )
                refs.append((str(r["text"]), vec))
            return cls(
                track_id=int(obj["track"]),
                category=str(obj["category"]),
                referrals=refs,
                keyframe=int(obj["keyframe"]) if "keyframe" in obj else None,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"malformed description record: {exc}") from exc


@dataclass
class SceneDataset:
    """All per-view detections of one scene plus the label-embedding table."""

    n_views: int
    height: int
    width: int
    dim: int
    detections: list[list[Detection]]
    embeddings: dict[str, LabelEmbedding]
    descriptions: list[DescriptionSet] | None = None

    def __post_init__(self) -> None:
        if len(self.detections) != self.n_views:
            raise SchemaError(
                f"expected {self.n_views} per-view detection lists, got {len(self.detections)}"
            )
        for per_view in self.detections:
            for det in per_view:
                self._check_detection(det)
        for emb in self.embeddings.values():
            if emb.vector.shape != (self.dim,):
                raise SchemaError(
                    f"embedding for {emb.label!r} has dim {emb.vector.shape}, "
                    f"expected ({self.dim},)"
                )

    def _check_detection(self, det: Detection) -> None:
        if det.view >= self.n_views:
            raise SchemaError(f"detection view {det.view} >= n_views {self.n_views}")
        if (det.mask.height, det.mask.width) != (self.height, self.width):
            raise SchemaError(
                f"detection mask is {det.mask.height}x{det.mask.width}, "
                f"dataset is {self.height}x{self.width}"
            )

    def all_detections(self):
        """Yield (view, index, detection) in deterministic order."""
        for view, per_view in enumerate(self.detections):
            for idx, det in enumerate(per_view):
                yield view, idx, det

    def detection(self, view: int, idx: int) -> Detection:
        return self.detections[view][idx]

    def embedding(self, label: str) -> np.ndarray:
        try:
            return self.embeddings[label].vector
        except KeyError:
            raise SchemaError(f"no embedding for label {label!r}") from None


def save_dataset(ds: SceneDataset, out_dir: str | Path) -> Path:
    """Write manifest + detections + embeddings (+ descriptions). Returns manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    det_lines = []
    for _, _, det in ds.all_detections():
        det_lines.append(_dumps(det.to_json()))
    (out / "detections.jsonl").write_text("\n".join(det_lines) + ("\n" if det_lines else ""))

    emb_obj = {label: emb.vector.tolist() for label, emb in sorted(ds.embeddings.items())}
    (out / "embeddings.json").write_text(_dumps(emb_obj) + "\n")

    manifest = {
        "n_views": ds.n_views,
        "h": ds.height,
        "w": ds.width,
        "dim": ds.dim,
        "detections": "detections.jsonl",
        "embeddings": "embeddings.json",
    }
    if ds.descriptions is not None:
        desc_lines = [_dumps(d.to_json()) for d in ds.descriptions]
        (out / "descriptions.jsonl").write_text(
            "\n".join(desc_lines) + ("\n" if desc_lines else "")
        )
        manifest["descriptions"] = "descriptions.jsonl"
    manifest_path = out / "manifest.json"
    manifest_path.write_text(_dumps(manifest) + "\n")
    return manifest_path


def load_descriptions(path: str | Path, dim: int | None = None) -> list[DescriptionSet]:
    sets = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
        try:
            sets.append(DescriptionSet.from_json(obj, dim=dim))
        except SchemaError as exc:
            raise SchemaError(f"{path}:{lineno}: {exc}") from exc
    return sets


def save_descriptions(sets: list[DescriptionSet], path: str | Path) -> None:
    lines = [_dumps(d.to_json()) for d in sets]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def load_dataset(path: str | Path) -> SceneDataset:
    """Load from a manifest file (or a directory containing manifest.json)."""
    path = Path(path)
    manifest_path = path / "manifest.json" if path.is_dir() else path
    if not manifest_path.exists():
        raise SchemaError(f"manifest not found: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{manifest_path}: invalid JSON: {exc}") from exc
    for key in ("n_views", "h", "w", "dim", "detections", "embeddings"):
        if key not in manifest:
            raise SchemaError(f"{manifest_path}: manifest missing key {key!r}")
    base = manifest_path.parent
    n_views = int(manifest["n_views"])
    height, width, dim = int(manifest["h"]), int(manifest["w"]), int(manifest["dim"])

    detections: list[list[Detection]] = [[] for _ in range(n_views)]
    det_path = base / manifest["detections"]
    for lineno, line in enumerate(det_path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{det_path}:{lineno}: invalid JSON: {exc}") from exc
        try:
            det = Detection.from_json(obj)
            if det.view >= n_views:
                raise SchemaError(f"view {det.view} >= n_views {n_views}")
            if (det.mask.height, det.mask.width) != (height, width):
                raise SchemaError(
                    f"mask is {det.mask.height}x{det.mask.width}, dataset is {height}x{width}"
                )
        except SchemaError as exc:
            raise SchemaError(f"{det_path}:{lineno}: {exc}") from exc
        detections[det.view].append(det)

    emb_path = base / manifest["embeddings"]
    try:
        emb_obj = json.loads(emb_path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{emb_path}: invalid JSON: {exc}") from exc
    embeddings = {}
    for label in sorted(emb_obj):
        vec = np.asarray(emb_obj[label], dtype=float)
        if vec.shape != (dim,):
            raise SchemaError(f"{emb_path}: embedding {label!r} has shape {vec.shape}, expected ({dim},)")
        embeddings[label] = LabelEmbedding(label, vec)

    descriptions = None
    if "descriptions" in manifest:
        descriptions = load_descriptions(base / manifest["descriptions"], dim=dim)

    return SceneDataset(
        n_views=n_views,
        height=height,
        width=width,
        dim=dim,
        detections=detections,
        embeddings=embeddings,
        descriptions=descriptions,
    )
