"""Replayable scene datasets: record types, loading and eager validation.

On-disk layout (see ``docs/FORMATS.md``)::

    manifest.json       scalars, terrain class table, ground truth, zones
    frames.jsonl        one frame record per line
    embeddings.jsonl    {"id": ..., "values": [...]} per line
    lidar/*.bin         little-endian float32 (x, y, z) triples, sensor frame
"""

from __future__ import annotations

import json
import math
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from shapely.geometry import Polygon

from terrain_sg.boxes import OrientedBox
from terrain_sg.core import CameraIntrinsics, Pose, TerrainClass
from terrain_sg.errors import (
    DanglingReferenceError,
    DatasetError,
    EmbeddingDimensionError,
    MaskOverlapError,
    MissingFileError,
    MonotonicityError,
    SchemaError,
)

SCENE_FORMAT_VERSION = 1
MAX_MASK_OVERLAP = 0.01


@dataclass(frozen=True)
class MaskRecord:
    polygon: tuple[tuple[float, float], ...]
    embedding_id: str
    terrain: int | None = None

    @property
    def is_terrain(self) -> bool:
        return self.terrain is not None

    def to_dict(self) -> dict:
        return {
            "polygon": [list(p) for p in self.polygon],
            "terrain": self.terrain,
            "embedding_id": self.embedding_id,
        }


@dataclass(frozen=True)
class FrameRecord:
    timestamp: float
    pose: Pose
    intrinsics: CameraIntrinsics
    lidar_file: str
    masks: tuple[MaskRecord, ...] = ()
    image_embedding_id: str | None = None

    def to_dict(self) -> dict:
        return {
            "timestamp": self.timestamp,
            "pose": {"translation": list(self.pose.translation), "rotation": list(self.pose.rotation)},
            "intrinsics": self.intrinsics.to_dict(),
            "lidar_file": self.lidar_file,
            "image_embedding_id": self.image_embedding_id,
            "masks": [m.to_dict() for m in self.masks],
        }


@dataclass(frozen=True)
class GroundTruthObject:
    label: str
    query_embedding_id: str
    obb: OrientedBox

    def to_dict(self) -> dict:
        return {"label": self.label, "query_embedding_id": self.query_embedding_id, "obb": self.obb.to_dict()}


@dataclass(frozen=True)
class Zone:
    """Labelled planar region used to score region monitoring."""

    label: str
    polygon: tuple[tuple[float, float], ...]
    query_embedding_id: str

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "polygon": [list(p) for p in self.polygon],
            "query_embedding_id": self.query_embedding_id,
        }


@dataclass
class SceneDataset:
    embedding_dim: int
    terrain_classes: list[TerrainClass]
    terrain_embedding_ids: dict[int, str]
    frames: list[FrameRecord]
    embeddings: dict[str, np.ndarray]
    ground_truth: list[GroundTruthObject] = field(default_factory=list)
    zones: list[Zone] = field(default_factory=list)
    max_range: float = 100.0
    root: Path | None = None

    @property
    def terrain_class_embeddings(self) -> dict[int, np.ndarray]:
        return {tid: self.embeddings[eid] for tid, eid in self.terrain_embedding_ids.items()}

    def terrain_by_id(self, tid: int) -> TerrainClass:
        for t in self.terrain_classes:
            if t.id == tid:
                return t
        raise KeyError(tid)

    def terrain_by_name(self, name: str) -> TerrainClass:
        for t in self.terrain_classes:
            if t.name == name:
                return t
        raise KeyError(name)

    def embedding(self, eid: str) -> np.ndarray:
        return self.embeddings[eid]

    def load_points(self, frame: FrameRecord) -> np.ndarray:
        if self.root is None:
            raise MissingFileError("dataset has no root directory", frame.lidar_file)
        return read_points(self.root / frame.lidar_file)


def read_points(path: Path) -> np.ndarray:
    raw = np.fromfile(path, dtype="<f4")
    if raw.size % 3:
        raise SchemaError("point file size is not a multiple of 12 bytes", str(path))
    return raw.reshape(-1, 3).astype(np.float64)


def write_points(path: Path, points: np.ndarray) -> None:
    np.asarray(points, dtype="<f4").reshape(-1, 3).tofile(path)


@contextmanager
def _record(record: str):
    """Report malformed values inside one record as a SchemaError naming it."""
    try:
        yield
    except DatasetError:
        raise
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise SchemaError(f"malformed record ({exc})", record) from exc


def _require(d: dict, key: str, record: str):
    if not isinstance(d, dict) or key not in d:
        raise SchemaError(f"missing field {key!r}", record)
    return d[key]


def _list_field(manifest: dict, key: str) -> list:
    value = manifest.get(key) or []
    if not isinstance(value, list):
        raise SchemaError(f"{key} must be a list", "manifest.json")
    return value


def _read_jsonl(path: Path) -> list[tuple[int, dict]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rows.append((lineno, json.loads(line)))
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid JSON ({exc.msg})", f"{path.name}:{lineno}") from exc
    return rows


def _parse_polygon(raw, record: str, width: int, height: int) -> tuple[tuple[float, float], ...]:
    if not isinstance(raw, list) or len(raw) < 3:
        raise SchemaError("polygon needs at least 3 vertices", record)
    try:
        poly = tuple((float(u), float(v)) for u, v in raw)
    except (TypeError, ValueError) as exc:
        raise SchemaError("polygon vertices must be (u, v) pairs", record) from exc
    for u, v in poly:
        if not (math.isfinite(u) and math.isfinite(v) and 0 <= u <= width and 0 <= v <= height):
            raise SchemaError(f"vertex ({u}, {v}) outside image bounds", record)
    shape = Polygon(poly)
    if not shape.is_valid or shape.area <= 0:
        raise SchemaError("polygon is not simple", record)
    return poly


def _check_overlap(masks: list[MaskRecord], record: str) -> None:
    terrain = [(i, Polygon(m.polygon)) for i, m in enumerate(masks) if m.is_terrain]
    objects = [(i, Polygon(m.polygon)) for i, m in enumerate(masks) if not m.is_terrain]
    for ti, tp in terrain:
        for oi, op in objects:
            if not tp.intersects(op):
                continue
            inter = tp.intersection(op).area
            if inter >= MAX_MASK_OVERLAP * tp.area or inter >= MAX_MASK_OVERLAP * op.area:
                raise MaskOverlapError(f"terrain mask {ti} overlaps object mask {oi}", record)


def _parse_frame(row: dict, record: str, root: Path, terrain_ids: set[int]) -> FrameRecord:
    try:
        ts = float(_require(row, "timestamp", record))
        if not math.isfinite(ts):
            raise SchemaError("timestamp must be finite", record)
        pose_raw = _require(row, "pose", record)
        pose = Pose(tuple(_require(pose_raw, "translation", record)), tuple(_require(pose_raw, "rotation", record)))
        intr_raw = _require(row, "intrinsics", record)
        intr = CameraIntrinsics(
            float(intr_raw["fx"]),
            float(intr_raw["fy"]),
            float(intr_raw["cx"]),
            float(intr_raw["cy"]),
            int(intr_raw["width"]),
            int(intr_raw["height"]),
        )
    except SchemaError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed frame ({exc})", record) from exc
    lidar_file = _require(row, "lidar_file", record)
    lidar_path = root / lidar_file
    if not lidar_path.is_file():
        raise MissingFileError(f"LiDAR file {lidar_file} not found", record)
    if lidar_path.stat().st_size % 12:
        raise SchemaError(f"LiDAR file {lidar_file} is not a whole number of float32 triples", record)
    masks = []
    for k, m in enumerate(row.get("masks") or []):
        mrec = f"{record} mask {k}"
        poly = _parse_polygon(_require(m, "polygon", mrec), mrec, intr.width, intr.height)
        terrain = m.get("terrain")
        if terrain is not None:
            if not isinstance(terrain, int) or terrain not in terrain_ids:
                raise DanglingReferenceError(f"unknown terrain class {terrain!r}", mrec)
        eid = _require(m, "embedding_id", mrec)
        if not isinstance(eid, str):
            raise SchemaError("embedding_id must be a string", mrec)
        masks.append(MaskRecord(poly, eid, terrain))
    _check_overlap(masks, record)
    return FrameRecord(ts, pose, intr, lidar_file, tuple(masks), row.get("image_embedding_id"))


def load_scene(root_dir) -> SceneDataset:
    """Load and eagerly validate a scene directory.

    Raises:
        MissingFileError, SchemaError, DanglingReferenceError,
        EmbeddingDimensionError, MonotonicityError, MaskOverlapError: each names
        the offending record.
    """
    root = Path(root_dir)
    for name in ("manifest.json", "frames.jsonl", "embeddings.jsonl"):
        if not (root / name).is_file():
            raise MissingFileError(f"{name} not found in {root}", name)
    try:
        manifest = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON ({exc.msg})", "manifest.json") from exc

    if not isinstance(manifest, dict):
        raise SchemaError("manifest must be a JSON object", "manifest.json")
    version = manifest.get("format_version", SCENE_FORMAT_VERSION)
    if version != SCENE_FORMAT_VERSION:
        raise SchemaError(f"unsupported format_version {version}", "manifest.json")
    dim = _require(manifest, "embedding_dim", "manifest.json")
    if not isinstance(dim, int) or isinstance(dim, bool) or dim <= 0:
        raise SchemaError("embedding_dim must be a positive integer", "manifest.json")

    embeddings: dict[str, np.ndarray] = {}
    for lineno, row in _read_jsonl(root / "embeddings.jsonl"):
        rec = f"embeddings.jsonl:{lineno}"
        eid = _require(row, "id", rec)
        values = _require(row, "values", rec)
        if not isinstance(eid, str):
            raise SchemaError("embedding id must be a string", rec)
        if not isinstance(values, list):
            raise SchemaError("values must be a list", rec)
        with _record(rec):
            vec = np.asarray(values, dtype=np.float64)
        if vec.ndim != 1 or vec.shape[0] != dim:
            raise EmbeddingDimensionError(
                f"embedding {eid!r} has dimension {vec.size}, expected {dim}", f"embedding {eid}"
            )
        if not np.all(np.isfinite(vec)):
            raise SchemaError(f"embedding {eid!r} has non-finite entries", f"embedding {eid}")
        if eid in embeddings:
            raise SchemaError(f"duplicate embedding id {eid!r}", rec)
        embeddings[eid] = vec

    terrain_classes = []
    terrain_embedding_ids: dict[int, str] = {}
    raw_classes = _require(manifest, "terrain_classes", "manifest.json")
    if not isinstance(raw_classes, list):
        raise SchemaError("terrain_classes must be a list", "manifest.json")
    for k, t in enumerate(raw_classes):
        rec = f"manifest.json terrain_classes[{k}]"
        tid, name = _require(t, "id", rec), _require(t, "name", rec)
        if not isinstance(tid, int) or isinstance(tid, bool) or tid in terrain_embedding_ids:
            raise SchemaError(f"terrain id {tid!r} is not a unique integer", rec)
        if not isinstance(name, str) or not name:
            raise SchemaError("terrain name must be a nonempty string", rec)
        eid = _require(t, "embedding_id", rec)
        if not isinstance(eid, str) or eid not in embeddings:
            raise DanglingReferenceError(f"terrain embedding {eid!r} not in embedding table", rec)
        terrain_classes.append(TerrainClass(name, tid))
        terrain_embedding_ids[tid] = eid

    frames: list[FrameRecord] = []
    for lineno, row in _read_jsonl(root / "frames.jsonl"):
        rec = f"frames.jsonl:{lineno}"
        with _record(rec):
            frame = _parse_frame(row, rec, root, set(terrain_embedding_ids))
        if frames and not frame.timestamp > frames[-1].timestamp:
            raise MonotonicityError(
                f"timestamp {frame.timestamp} does not increase past {frames[-1].timestamp}", rec
            )
        refs = [m.embedding_id for m in frame.masks]
        if frame.image_embedding_id is not None:
            refs.append(frame.image_embedding_id)
        for eid in refs:
            if not isinstance(eid, str) or eid not in embeddings:
                raise DanglingReferenceError(f"embedding {eid!r} not in embedding table", rec)
        frames.append(frame)

    ground_truth = []
    for k, g in enumerate(_list_field(manifest, "ground_truth")):
        rec = f"manifest.json ground_truth[{k}]"
        qid = _require(g, "query_embedding_id", rec)
        if not isinstance(qid, str) or qid not in embeddings:
            raise DanglingReferenceError(f"query embedding {qid!r} not in embedding table", rec)
        with _record(rec):
            obb = OrientedBox.from_dict(_require(g, "obb", rec))
        ground_truth.append(GroundTruthObject(str(_require(g, "label", rec)), qid, obb))

    zones = []
    for k, z in enumerate(_list_field(manifest, "zones")):
        rec = f"manifest.json zones[{k}]"
        qid = _require(z, "query_embedding_id", rec)
        if not isinstance(qid, str) or qid not in embeddings:
            raise DanglingReferenceError(f"query embedding {qid!r} not in embedding table", rec)
        with _record(rec):
            poly = tuple((float(x), float(y)) for x, y in _require(z, "polygon", rec))
        zones.append(Zone(str(_require(z, "label", rec)), poly, qid))

    with _record("manifest.json"):
        max_range = float(manifest.get("max_range", 100.0))
    if not max_range > 0:
        raise SchemaError("max_range must be positive", "manifest.json")
    return SceneDataset(
        embedding_dim=dim,
        terrain_classes=terrain_classes,
        terrain_embedding_ids=terrain_embedding_ids,
        frames=frames,
        embeddings=embeddings,
        ground_truth=ground_truth,
        zones=zones,
        max_range=max_range,
        root=root,
    )


def write_scene(
    root_dir,
    *,
    embedding_dim: int,
    terrain_classes: list[TerrainClass],
    terrain_embedding_ids: dict[int, str],
    frames: list[tuple[FrameRecord, np.ndarray]],
    embeddings: dict[str, np.ndarray],
    ground_truth: list[GroundTruthObject] = (),
    zones: list[Zone] = (),
    max_range: float = 100.0,
) -> Path:
    """Write a dataset directory; ``frames`` pairs each record with its sensor-frame points."""
    root = Path(root_dir)
    (root / "lidar").mkdir(parents=True, exist_ok=True)
    manifest = {
        "format_version": SCENE_FORMAT_VERSION,
        "embedding_dim": embedding_dim,
        "max_range": max_range,
        "terrain_classes": [
            {"id": t.id, "name": t.name, "embedding_id": terrain_embedding_ids[t.id]} for t in terrain_classes
        ],
        "ground_truth": [g.to_dict() for g in ground_truth],
        "zones": [z.to_dict() for z in zones],
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    with open(root / "embeddings.jsonl", "w", encoding="utf-8") as fh:
        for eid, vec in embeddings.items():
            fh.write(json.dumps({"id": eid, "values": [float(v) for v in vec]}) + "\n")
    with open(root / "frames.jsonl", "w", encoding="utf-8") as fh:
        for rec, points in frames:
            write_points(root / rec.lidar_file, points)
            fh.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")
    return root
