"""Seeded synthetic multi-view scenes with ground truth and noise models.

Objects are axis-aligned ellipses/rectangles gliding linearly across the
views. Each visible object yields one detection per view, labeled with its
group's canonical word at confidence 1 and track_id = object id. The
corruption pass then reproduces the two per-view failure modes the
consensus stage exists to fix: label drift (synonym swaps and outright
wrong labels) and unreliable masks (dilation/erosion jitter, dropout).

Vocabulary embeddings are constructed, not learned: each synonym group
sits on its own coordinate axis with a small tangential perturbation per
word, which guarantees within-group cosine >= 0.9 and cross-group
cosine <= 0.5 so clustering thresholds have a crisp ground truth.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import SchemaError
from .records import Detection, LabelEmbedding, SceneDataset
from .rle import RleMask, rle_decode, rle_encode

_PERTURB = 0.2  # in-group tangential jitter; cos >= (1 - _PERTURB^2) / (1 + _PERTURB^2)


@dataclass(frozen=True)
class SynonymGroup:
    canonical: str
    synonyms: tuple[str, ...]

    @property
    def words(self) -> tuple[str, ...]:
        return (self.canonical,) + self.synonyms


DEFAULT_VOCABULARY = (
    SynonymGroup("cup", ("coffee cup", "small cup")),
    SynonymGroup("bowl", ("soup bowl", "ramen bowl")),
    SynonymGroup("plate", ("dinner plate", "white plate")),
    SynonymGroup("pot", ("cooking pot", "metal pot")),
    SynonymGroup("book", ("thick book", "heavy book")),
    SynonymGroup("mug", ("beer mug", "tall mug")),
)


@dataclass(frozen=True)
class NoiseSpec:
    synonym_rate: float = 0.0
    wrong_label_rate: float = 0.0
    dropout_rate: float = 0.0
    mask_jitter: int = 0
    strip_track_ids: bool = False

    def __post_init__(self) -> None:
        for name in ("synonym_rate", "wrong_label_rate", "dropout_rate"):
            rate = getattr(self, name)
            if not 0.0 <= rate <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {rate}")
        if self.mask_jitter < 0:
            raise ValueError(f"mask_jitter must be >= 0, got {self.mask_jitter}")


@dataclass(frozen=True)
class SynthConfig:
    n_views: int = 8
    height: int = 64
    width: int = 64
    n_objects: int = 3
    vocabulary: tuple[SynonymGroup, ...] = DEFAULT_VOCABULARY
    dim: int = 32
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_views <= 0 or self.n_objects <= 0:
            raise ValueError("n_views and n_objects must be positive")
        if self.dim < len(self.vocabulary):
            raise ValueError(
                f"dim {self.dim} too small for {len(self.vocabulary)} synonym groups"
            )

    @classmethod
    def from_json(cls, obj: dict) -> "SynthConfig":
        kwargs = dict(obj)
        if "vocabulary" in kwargs:
            kwargs["vocabulary"] = tuple(
                SynonymGroup(g["canonical"], tuple(g["synonyms"])) for g in kwargs["vocabulary"]
            )
        if "noise" in kwargs:
            kwargs["noise"] = NoiseSpec(**kwargs["noise"])
        return cls(**kwargs)


@dataclass
class GtObject:
    object_id: int
    identity: str
    masks: list[RleMask]
    visible: list[bool]
    centers: list[tuple[float, float]]
    radii: tuple[float, float]
    shape: str


@dataclass
class GroundTruth:
    objects: list[GtObject]

    def to_json(self) -> dict:
        return {
            "objects": [
                {
                    "id": o.object_id,
                    "identity": o.identity,
                    "masks": [m.to_json() for m in o.masks],
                    "visible": o.visible,
                    "centers": [[x, y] for x, y in o.centers],
                    "radii": list(o.radii),
                    "shape": o.shape,
                }
                for o in self.objects
            ]
        }

    @classmethod
    def from_json(cls, obj: dict) -> "GroundTruth":
        objects = []
        for o in obj["objects"]:
            objects.append(
                GtObject(
                    object_id=int(o["id"]),
                    identity=str(o["identity"]),
                    masks=[RleMask.from_json(m) for m in o["masks"]],
                    visible=[bool(v) for v in o["visible"]],
                    centers=[(float(x), float(y)) for x, y in o["centers"]],
                    radii=(float(o["radii"][0]), float(o["radii"][1])),
                    shape=str(o["shape"]),
                )
            )
        return cls(objects)


def save_ground_truth(gt: GroundTruth, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(gt.to_json(), sort_keys=True, separators=(",", ":")) + "\n"
    )


def load_ground_truth(path: str | Path) -> GroundTruth:
    try:
        return GroundTruth.from_json(json.loads(Path(path).read_text()))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"{path}: malformed ground truth: {exc}") from exc


def build_vocabulary_embeddings(
    vocabulary: tuple[SynonymGroup, ...], dim: int, seed: int
) -> dict[str, LabelEmbedding]:
    """One axis per group, small orthogonal jitter per word, renormalized."""
    rng = np.random.default_rng([seed, 7])
    out: dict[str, LabelEmbedding] = {}
    for g, group in enumerate(vocabulary):
        base = np.zeros(dim)
        base[g] = 1.0
        for word in group.words:
            z = rng.standard_normal(dim)
            z[g] = 0.0
            norm = np.linalg.norm(z)
            if norm > 0:
                z /= norm
            vec = base + _PERTURB * z
            vec /= np.linalg.norm(vec)
            out[word] = LabelEmbedding(word, vec)
    return out


def _render(shape: str, cx: float, cy: float, rx: float, ry: float, h: int, w: int) -> np.ndarray:
    ys, xs = np.mgrid[0:h, 0:w]
    if shape == "ellipse":
        return ((xs - cx) / rx) ** 2 + ((ys - cy) / ry) ** 2 <= 1.0
    return (np.abs(xs - cx) <= rx) & (np.abs(ys - cy) <= ry)


def generate_scene(cfg: SynthConfig) -> tuple[SceneDataset, GroundTruth]:
    """Deterministic scene; raises if any object never renders visible."""
    rng = np.random.default_rng([cfg.seed, 0])
    h, w = cfg.height, cfg.width
    embeddings = build_vocabulary_embeddings(cfg.vocabulary, cfg.dim, cfg.seed)

    n_groups = len(cfg.vocabulary)
    if cfg.n_objects <= n_groups:
        group_ids = rng.permutation(n_groups)[: cfg.n_objects]
    else:
        group_ids = rng.integers(0, n_groups, size=cfg.n_objects)

    objects: list[GtObject] = []
    placed_grids: list[list[np.ndarray]] = []
    for oid in range(cfg.n_objects):
        group = cfg.vocabulary[int(group_ids[oid])]
        shape = "ellipse" if oid % 2 == 0 else "rectangle"

        # Resample paths that overlap existing objects too much: distinct
        # objects must stay distinguishable (occlusion is modeled as
        # detection dropout, not as coinciding masks).
        best = None
        for _ in range(50):
            rx = float(rng.uniform(h / 10.0, h / 6.0))
            ry = float(rng.uniform(h / 10.0, h / 6.0))
            margin_x, margin_y = rx + 1.0, ry + 1.0
            x0 = float(rng.uniform(margin_x, w - margin_x))
            y0 = float(rng.uniform(margin_y, h - margin_y))
            x1 = float(rng.uniform(margin_x, w - margin_x))
            y1 = float(rng.uniform(margin_y, h - margin_y))

            grids, centers = [], []
            worst_overlap = 0.0
            for v in range(cfg.n_views):
                t = v / max(cfg.n_views - 1, 1)
                cx = x0 + (x1 - x0) * t
                cy = y0 + (y1 - y0) * t
                grid = _render(shape, cx, cy, rx, ry, h, w)
                for prev in placed_grids:
                    union = int(np.count_nonzero(grid | prev[v]))
                    if union:
                        inter = int(np.count_nonzero(grid & prev[v]))
                        worst_overlap = max(worst_overlap, inter / union)
                grids.append(grid)
                centers.append((cx, cy))
            candidate = (worst_overlap, grids, centers, (rx, ry))
            if best is None or worst_overlap < best[0]:
                best = candidate
            if worst_overlap <= 0.3:
                break

        _, grids, centers, radii = best
        visible = [bool(g.any()) for g in grids]
        if not any(visible):
            raise ValueError(f"object {oid} is never visible; rejecting config")
        placed_grids.append(grids)
        objects.append(
            GtObject(
                object_id=oid,
                identity=group.canonical,
                masks=[rle_encode(g) for g in grids],
                visible=visible,
                centers=centers,
                radii=radii,
                shape=shape,
            )
        )

    detections: list[list[Detection]] = [[] for _ in range(cfg.n_views)]
    for v in range(cfg.n_views):
        for obj in objects:
            if not obj.visible[v]:
                continue
            detections[v].append(
                Detection(
                    view=v,
                    mask=obj.masks[v],
                    raw_label=obj.identity,
                    confidence=1.0,
                    track_id=obj.object_id,
                )
            )

    ds = SceneDataset(
        n_views=cfg.n_views,
        height=h,
        width=w,
        dim=cfg.dim,
        detections=detections,
        embeddings=embeddings,
    )
    return ds, GroundTruth(objects)


def _shift(grid: np.ndarray, dy: int, dx: int) -> np.ndarray:
    out = np.zeros_like(grid)
    h, w = grid.shape
    ys0, ys1 = max(dy, 0), h + min(dy, 0)
    xs0, xs1 = max(dx, 0), w + min(dx, 0)
    out[ys0:ys1, xs0:xs1] = grid[ys0 - dy : ys1 - dy, xs0 - dx : xs1 - dx]
    return out


def _dilate(grid: np.ndarray, steps: int) -> np.ndarray:
    for _ in range(steps):
        acc = grid.copy()
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if dy or dx:
                    acc |= _shift(grid, dy, dx)
        grid = acc
    return grid


def _erode(grid: np.ndarray, steps: int) -> np.ndarray:
    return ~_dilate(~grid, steps)


def corrupt(ds: SceneDataset, gt: GroundTruth, cfg: SynthConfig) -> SceneDataset:
    """Apply per-detection label/mask/dropout noise; view indices unchanged."""
    rng = np.random.default_rng([cfg.seed, 1])
    noise = cfg.noise
    group_of = {
        word: gi for gi, group in enumerate(cfg.vocabulary) for word in group.words
    }

    out: list[list[Detection]] = [[] for _ in range(ds.n_views)]
    for view, _, det in ds.all_detections():
        u_drop, u_wrong, u_syn = rng.uniform(size=3)
        jitter_amount = int(rng.integers(0, noise.mask_jitter + 1)) if noise.mask_jitter else 0
        jitter_grow = bool(rng.integers(0, 2)) if noise.mask_jitter else False
        wrong_pick = rng.integers(0, 1 << 30)
        syn_pick = rng.integers(0, 1 << 30)
        if u_drop < noise.dropout_rate:
            continue

        label = det.raw_label
        gi = group_of.get(label)
        if gi is not None and u_wrong < noise.wrong_label_rate:
            others = [g for g in range(len(cfg.vocabulary)) if g != gi]
            other = cfg.vocabulary[others[int(wrong_pick) % len(others)]]
            label = other.words[int(syn_pick) % len(other.words)]
        elif gi is not None and u_syn < noise.synonym_rate:
            group = cfg.vocabulary[gi]
            if group.synonyms:
                label = group.synonyms[int(syn_pick) % len(group.synonyms)]

        mask = det.mask
        if jitter_amount > 0:
            grid = rle_decode(mask)
            grid = _dilate(grid, jitter_amount) if jitter_grow else _erode(grid, jitter_amount)
            mask = rle_encode(grid)

        out[view].append(
            Detection(
                view=view,
                mask=mask,
                raw_label=label,
                confidence=det.confidence,
                track_id=None if noise.strip_track_ids else det.track_id,
            )
        )

    return replace(ds, detections=out, descriptions=None)
