"""Procedural scenes: terrain layout, box objects, camera path, masks, embeddings.

World points live on fixed lattices: ground samples at voxel-cell centers
just below z = 0 and object samples on box surfaces. Each frame keeps the
points that fall inside the camera frustum and range, expressed in the
camera optical frame (x right, y down, z forward). Masks are exact image
projections of terrain regions and object boxes.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import shapely
from shapely.geometry import LineString, MultiPoint, Polygon, box
from shapely.geometry.base import BaseGeometry
from shapely.ops import transform, unary_union

from terrain_sg.boxes import OrientedBox
from terrain_sg.core import CameraIntrinsics, Pose, TerrainClass
from terrain_sg.dataset import FrameRecord, GroundTruthObject, MaskRecord, Zone, write_scene
from terrain_sg.errors import ConfigError
from terrain_sg.geometry import box_corners_2d

GROUND_Z = -0.05
NEAR = 0.1
OBJECT_MASK_PAD = 0.25  # px, outward pad on object masks
OCCLUDER_PAD = 0.5  # px, clearance cut from masks behind an object
MIN_OBJECT_POINTS = 10
MIN_PIECE_AREA = 1e-3  # px^2
BASE_CLEARANCE = 0.05


@dataclass
class PatchSpec:
    """Terrain patch: ``rect`` (x0, y0, x1, y1), ``corridor`` polyline + width, or ``polygon``."""

    terrain: str
    kind: str
    coords: list
    width: float = 0.0

    def geometry(self) -> BaseGeometry:
        if self.kind == "rect":
            x0, y0, x1, y1 = self.coords
            return box(x0, y0, x1, y1)
        if self.kind == "corridor":
            if not self.width > 0:
                raise ConfigError("corridor patch needs a positive width")
            return LineString(self.coords).buffer(self.width / 2, cap_style="flat", join_style="mitre")
        if self.kind == "polygon":
            return Polygon(self.coords)
        raise ConfigError(f"unknown patch kind {self.kind!r}")


@dataclass
class ObjectSpec:
    label: str
    position: tuple[float, float]
    footprint: tuple[float, float]  # full side lengths
    height: float
    yaw: float = 0.0

    def obb(self) -> OrientedBox:
        w, l = self.footprint
        x, y = self.position
        return OrientedBox((x, y, self.height / 2), (w / 2, l / 2, self.height / 2), self.yaw)

    def footprint_polygon(self) -> Polygon:
        w, l = self.footprint
        return Polygon(box_corners_2d(self.position, (w / 2, l / 2), self.yaw))


@dataclass
class ZoneSpec:
    label: str
    polygon: list


@dataclass
class SceneSpec:
    seed: int = 0
    extent: tuple[float, float] = (40.0, 40.0)
    embedding_dim: int = 64
    terrain_classes: list[str] = field(default_factory=lambda: ["sidewalk", "grass", "asphalt"])
    terrain_patches: list[PatchSpec] = field(default_factory=list)
    objects: list[ObjectSpec] = field(default_factory=list)
    trajectory: list[list[tuple[float, float]]] = field(default_factory=list)
    frame_spacing: float = 2.0
    margin: float = 0.1
    noise: float = 0.05
    zones: list[ZoneSpec] = field(default_factory=list)
    camera_height: float = 1.5
    max_range: float = 30.0
    image_size: tuple[int, int] = (640, 480)
    focal: float = 320.0
    ground_spacing: float = 0.5
    surface_spacing: float = 0.25

    def __post_init__(self):
        self.terrain_patches = [p if isinstance(p, PatchSpec) else PatchSpec(**p) for p in self.terrain_patches]
        self.objects = [o if isinstance(o, ObjectSpec) else ObjectSpec(**o) for o in self.objects]
        self.zones = [z if isinstance(z, ZoneSpec) else ZoneSpec(**z) for z in self.zones]
        self.extent = tuple(float(v) for v in self.extent)
        self.image_size = tuple(int(v) for v in self.image_size)

    def validate(self) -> None:
        W, H = self.extent
        if W <= 0 or H <= 0:
            raise ConfigError("extent must be positive")
        if not 0.0 <= self.margin <= 1.0:
            raise ConfigError("margin must lie in [0, 1]")
        if len(set(self.terrain_classes)) != len(self.terrain_classes) or not all(self.terrain_classes):
            raise ConfigError("terrain class names must be unique and nonempty")
        world = box(0, 0, W, H).buffer(1e-9)
        for k, p in enumerate(self.terrain_patches):
            if p.terrain not in self.terrain_classes:
                raise ConfigError(f"patch {k} uses undeclared terrain {p.terrain!r}")
            if not world.contains(p.geometry()):
                raise ConfigError(f"patch {k} leaves the scene extent")
        ground = unary_union([p.geometry() for p in self.terrain_patches]) if self.terrain_patches else Polygon()
        labels = [o.label for o in self.objects]
        if len(set(labels)) != len(labels):
            raise ConfigError("object labels must be unique")
        for o in self.objects:
            if min(o.footprint) <= 0 or o.height <= 0:
                raise ConfigError(f"object {o.label!r} needs positive size")
            if not ground.contains(shapely.Point(o.position)):
                raise ConfigError(f"object {o.label!r} is not on any terrain patch")
        needed = len(self.objects) + len(self.terrain_classes) + len(self.zones)
        if needed > self.embedding_dim:
            raise ConfigError(f"embedding_dim {self.embedding_dim} too small for {needed} basis directions")
        if self.frame_spacing <= 0 or self.max_range <= 0 or self.focal <= 0:
            raise ConfigError("frame_spacing, max_range and focal must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SceneSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown scene spec keys: {sorted(unknown)}")
        return cls(**data)


# -- embeddings ---------------------------------------------------------------


@dataclass
class EmbeddingBook:
    basis: np.ndarray  # (D, D) orthonormal rows
    objects: list[np.ndarray]
    queries: list[np.ndarray]
    terrains: list[np.ndarray]
    zones: list[np.ndarray]


def make_embeddings(spec: SceneSpec, rng: np.random.Generator) -> EmbeddingBook:
    """Orthonormal directions; object i leans toward its cyclic neighbour by ``margin``."""
    d = spec.embedding_dim
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    basis = q.T
    n = len(spec.objects)
    m = spec.margin
    objects, queries = [], []
    for i in range(n):
        queries.append(basis[i].copy())
        if n == 1:
            objects.append(basis[i].copy())
        else:
            v = math.sqrt(1.0 - m * m) * basis[i] + m * basis[(i + 1) % n]
            objects.append(v / np.linalg.norm(v))
    t0 = n
    terrains = [basis[t0 + k].copy() for k in range(len(spec.terrain_classes))]
    z0 = t0 + len(terrains)
    zones = [basis[z0 + k].copy() for k in range(len(spec.zones))]
    return EmbeddingBook(basis, objects, queries, terrains, zones)


def _noisy(v: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    if sigma <= 0:
        return v.copy()
    w = v + sigma * rng.standard_normal(len(v)) / math.sqrt(len(v))
    return w / np.linalg.norm(w)


# -- world sampling -----------------------------------------------------------


def terrain_regions(spec: SceneSpec) -> dict[str, BaseGeometry]:
    """Painted terrain per class; later patches cover earlier ones."""
    regions: dict[str, BaseGeometry] = {name: Polygon() for name in spec.terrain_classes}
    painted = [p.geometry() for p in spec.terrain_patches]
    for k, (p, geom) in enumerate(zip(spec.terrain_patches, painted)):
        above = unary_union(painted[k + 1 :]) if k + 1 < len(painted) else Polygon()
        visible = geom.difference(above)
        regions[p.terrain] = regions[p.terrain].union(visible)
    return regions


def ground_points(spec: SceneSpec) -> tuple[np.ndarray, np.ndarray]:
    """Lattice samples with terrain index; none under object footprints."""
    W, H = spec.extent
    s = spec.ground_spacing
    xs = np.arange(s / 2, W, s)
    ys = np.arange(s / 2, H, s)
    gx, gy = np.meshgrid(xs, ys, indexing="xy")
    gx, gy = gx.ravel(), gy.ravel()
    label = np.full(len(gx), -1, dtype=np.int64)
    names = {n: i for i, n in enumerate(spec.terrain_classes)}
    for p in spec.terrain_patches:
        inside = shapely.contains_xy(p.geometry(), gx, gy)
        label[inside] = names[p.terrain]
    keep = label >= 0
    for o in spec.objects:
        keep &= ~shapely.intersects_xy(o.footprint_polygon(), gx, gy)
    pts = np.column_stack([gx[keep], gy[keep], np.full(int(keep.sum()), GROUND_Z)])
    return pts, label[keep]


def _grid(length: float, step: float) -> np.ndarray:
    n = max(1, int(math.ceil(length / step)))
    return np.linspace(0.0, length, n + 1)


def object_points(o: ObjectSpec, step: float) -> np.ndarray:
    """Samples on the top face and four side faces of the box."""
    w, l = o.footprint
    h = o.height
    # Keep the lowest samples clear of the ground voxel layer.
    z0 = min(BASE_CLEARANCE, h / 2)
    xs, ys, zs = _grid(w, step) - w / 2, _grid(l, step) - l / 2, _grid(h - z0, step) + z0
    faces = []
    tx, ty = np.meshgrid(xs, ys, indexing="ij")
    faces.append(np.column_stack([tx.ravel(), ty.ravel(), np.full(tx.size, h)]))
    for y in (-l / 2, l / 2):
        fx, fz = np.meshgrid(xs, zs, indexing="ij")
        faces.append(np.column_stack([fx.ravel(), np.full(fx.size, y), fz.ravel()]))
    for x in (-w / 2, w / 2):
        fy, fz = np.meshgrid(ys, zs, indexing="ij")
        faces.append(np.column_stack([np.full(fy.size, x), fy.ravel(), fz.ravel()]))
    local = np.unique(np.round(np.vstack(faces), 9), axis=0)
    c, s = math.cos(o.yaw), math.sin(o.yaw)
    world = np.empty_like(local)
    world[:, 0] = o.position[0] + c * local[:, 0] - s * local[:, 1]
    world[:, 1] = o.position[1] + s * local[:, 0] + c * local[:, 1]
    world[:, 2] = local[:, 2]
    return world


# -- camera -------------------------------------------------------------------


def camera_rotation(heading: float) -> np.ndarray:
    """Columns are the optical x (right), y (down), z (forward) axes in world."""
    f = np.array([math.cos(heading), math.sin(heading), 0.0])
    r = np.array([math.sin(heading), -math.cos(heading), 0.0])
    d = np.array([0.0, 0.0, -1.0])
    return np.column_stack([r, d, f])


def sample_trajectory(paths, spacing: float) -> list[tuple[float, float, float]]:
    """``(x, y, heading)`` every ``spacing`` meters along each polyline."""
    out = []
    for path in paths:
        pts = np.asarray(path, dtype=np.float64).reshape(-1, 2)
        if len(pts) < 2:
            continue
        seg = np.diff(pts, axis=0)
        lens = np.linalg.norm(seg, axis=1)
        cum = np.concatenate([[0.0], np.cumsum(lens)])
        closed = np.allclose(pts[0], pts[-1])
        total = cum[-1]
        n = int(math.floor(total / spacing + 1e-9)) + (0 if closed else 1)
        for k in range(n):
            s = min(k * spacing, total)
            j = min(int(np.searchsorted(cum, s, side="right")) - 1, len(seg) - 1)
            while lens[j] == 0 and j > 0:
                j -= 1
            t = (s - cum[j]) / lens[j] if lens[j] > 0 else 0.0
            p = pts[j] + t * seg[j]
            out.append((float(p[0]), float(p[1]), math.atan2(seg[j, 1], seg[j, 0])))
    return out


@dataclass
class Camera:
    rotation: np.ndarray
    position: np.ndarray
    intr: CameraIntrinsics

    def to_camera(self, world: np.ndarray) -> np.ndarray:
        return (np.asarray(world, dtype=np.float64) - self.position) @ self.rotation

    def project(self, cam: np.ndarray) -> np.ndarray:
        return np.column_stack(
            [self.intr.fx * cam[:, 0] / cam[:, 2] + self.intr.cx, self.intr.fy * cam[:, 1] / cam[:, 2] + self.intr.cy]
        )

    def visible(self, cam: np.ndarray, max_range: float) -> np.ndarray:
        ok = cam[:, 2] > NEAR
        ok &= np.linalg.norm(cam, axis=1) <= max_range
        uv = np.full((len(cam), 2), -1.0)
        uv[ok] = self.project(cam[ok])
        ok &= (uv[:, 0] >= 0) & (uv[:, 0] < self.intr.width) & (uv[:, 1] >= 0) & (uv[:, 1] < self.intr.height)
        return ok

    def ground_band(self, max_range: float) -> Polygon:
        """Planar region seen at depths in [NEAR, max_range], slightly wider than the FOV."""
        f = self.rotation[:2, 2]
        r = self.rotation[:2, 0]
        tan = math.tan(self.intr.half_fov) * 1.05
        c = self.position[:2]
        pts = [c + d * f + side * d * tan * r for d, side in ((NEAR, -1), (max_range, -1), (max_range, 1), (NEAR, 1))]
        return Polygon(pts)

    def project_ground(self, geom: BaseGeometry) -> BaseGeometry:
        def fn(x, y, z=None):
            cam = self.to_camera(np.column_stack([x, y, np.full(len(np.atleast_1d(x)), GROUND_Z)]))
            uv = self.project(cam)
            return uv[:, 0], uv[:, 1]

        return transform(fn, geom)

    def box_hull(self, o: ObjectSpec) -> Polygon | None:
        """Image hull of the box after clipping it by the near plane."""
        w, l = o.footprint
        corners2 = box_corners_2d(o.position, (w / 2, l / 2), o.yaw)
        corners = np.array([[x, y, z] for z in (0.0, o.height) for x, y in corners2])
        cam = self.to_camera(corners)
        edges = [(0, 1), (1, 2), (2, 3), (3, 0), (4, 5), (5, 6), (6, 7), (7, 4), (0, 4), (1, 5), (2, 6), (3, 7)]
        kept = [c for c in cam if c[2] >= NEAR]
        for a, b in edges:
            za, zb = cam[a, 2], cam[b, 2]
            if (za - NEAR) * (zb - NEAR) < 0:
                t = (NEAR - za) / (zb - za)
                kept.append(cam[a] + t * (cam[b] - cam[a]))
        if len(kept) < 3:
            return None
        hull = MultiPoint([tuple(p) for p in self.project(np.array(kept))]).convex_hull
        return hull if isinstance(hull, Polygon) and hull.area > 0 else None


def hole_free_pieces(geom: BaseGeometry) -> list[Polygon]:
    """Split into simple polygons: holes are cut out with vertical strips."""
    polys = []
    if isinstance(geom, Polygon):
        polys = [geom]
    elif hasattr(geom, "geoms"):
        for g in geom.geoms:
            polys += hole_free_pieces(g)
        return polys
    out = []
    for p in polys:
        if p.is_empty or p.area <= MIN_PIECE_AREA:
            continue
        if not p.interiors:
            out.append(p)
            continue
        minx, miny, maxx, maxy = p.bounds
        cuts = sorted({minx, maxx} | {c for h in p.interiors for c in (min(h.xy[0]), max(h.xy[0]))})
        for a, b in zip(cuts, cuts[1:]):
            if b - a <= 1e-9:
                continue
            out += hole_free_pieces(p.intersection(box(a, miny - 1, b, maxy + 1)))
    return out


def _clean_ring(p: Polygon, width: int, height: int) -> list[tuple[float, float]] | None:
    coords = np.asarray(p.exterior.coords)[:-1]
    coords[:, 0] = np.clip(coords[:, 0], 0.0, float(width))
    coords[:, 1] = np.clip(coords[:, 1], 0.0, float(height))
    ring = [(float(u), float(v)) for u, v in coords]
    if len(ring) < 3:
        return None
    shape = Polygon(ring)
    if not shape.is_valid or shape.area <= MIN_PIECE_AREA:
        return None
    return ring


# -- generation ---------------------------------------------------------------


@dataclass
class GeneratedScene:
    root: Path
    spec: SceneSpec
    n_frames: int
    n_points: int


def generate_scene(spec: SceneSpec, out_dir) -> GeneratedScene:
    """Write a dataset for ``spec`` under ``out_dir``; deterministic per seed."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    book = make_embeddings(spec, rng)
    W_img, H_img = spec.image_size
    intr = CameraIntrinsics(spec.focal, spec.focal, W_img / 2, H_img / 2, W_img, H_img)
    classes = [TerrainClass(name, i) for i, name in enumerate(spec.terrain_classes)]
    terrain_ids = {c.id: f"terrain:{c.name}" for c in classes}

    embeddings: dict[str, np.ndarray] = {}
    for c in classes:
        embeddings[terrain_ids[c.id]] = book.terrains[c.id]
    for o, qv in zip(spec.objects, book.queries):
        embeddings[f"query:{o.label}"] = qv
    for z, zv in zip(spec.zones, book.zones):
        embeddings[f"zone:{z.label}"] = zv

    regions = terrain_regions(spec)
    ground, ground_label = ground_points(spec)
    obj_pts = [object_points(o, spec.surface_spacing) for o in spec.objects]
    zone_polys = [Polygon(z.polygon) for z in spec.zones]
    img_rect = box(0, 0, W_img, H_img)

    frames = []
    total_points = 0
    for n, (x, y, heading) in enumerate(sample_trajectory(spec.trajectory, spec.frame_spacing)):
        cam = Camera(camera_rotation(heading), np.array([x, y, spec.camera_height]), intr)
        band = cam.ground_band(spec.max_range)

        # Objects nearest first; farther ones lose whatever nearer ones cover.
        order = sorted(range(len(spec.objects)), key=lambda k: math.dist((x, y), spec.objects[k].position))
        masks: list[MaskRecord] = []
        point_sets: list[np.ndarray] = []
        covers: list[BaseGeometry] = []
        seen_objects = []
        for k in order:
            o = spec.objects[k]
            c_pts = cam.to_camera(obj_pts[k])
            vis = cam.visible(c_pts, spec.max_range)
            if vis.sum() < MIN_OBJECT_POINTS:
                continue
            hull = cam.box_hull(o)
            if hull is None:
                continue
            occluder = unary_union(covers) if covers else Polygon()
            pts = c_pts[vis]
            if covers:
                uv = cam.project(pts)
                pts = pts[~shapely.intersects_xy(occluder, uv[:, 0], uv[:, 1])]
            region = hull.buffer(OBJECT_MASK_PAD, join_style="mitre").intersection(img_rect).difference(occluder)
            covers.append(hull.buffer(OCCLUDER_PAD, join_style="mitre"))
            if len(pts) == 0:
                continue
            emb = _noisy(book.objects[k], spec.noise, rng)
            eid = f"obj:{o.label}:{n}" if spec.noise > 0 else f"obj:{o.label}"
            embeddings[eid] = emb
            added = False
            for piece in hole_free_pieces(region):
                ring = _clean_ring(piece, W_img, H_img)
                if ring is not None:
                    masks.append(MaskRecord(tuple(ring), eid))
                    added = True
            if added:
                point_sets.append(pts)
                seen_objects.append(k)

        occluder = unary_union(covers) if covers else Polygon()
        g_cam = cam.to_camera(ground)
        g_vis = cam.visible(g_cam, spec.max_range)
        g_pts = g_cam[g_vis]
        if covers and len(g_pts):
            uv = cam.project(g_pts)
            g_pts = g_pts[~shapely.intersects_xy(occluder, uv[:, 0], uv[:, 1])]
        seen_terrain = []
        for c in classes:
            area = regions[c.name].intersection(band)
            if area.is_empty:
                continue
            img = cam.project_ground(area).intersection(img_rect).difference(occluder)
            added = False
            for piece in hole_free_pieces(img):
                ring = _clean_ring(piece, W_img, H_img)
                if ring is not None:
                    masks.append(MaskRecord(tuple(ring), terrain_ids[c.id], c.id))
                    added = True
            if added:
                seen_terrain.append(c.id)

        # Whole-image embedding: zone share of the visible ground plus the mean visible entity.
        img_vec = np.zeros(spec.embedding_dim)
        if zone_polys and band.area > 0:
            for zp, zv in zip(zone_polys, book.zones):
                img_vec += (zp.intersection(band).area / band.area) * zv
        entities = [book.objects[k] for k in seen_objects] + [book.terrains[t] for t in seen_terrain]
        if entities:
            img_vec += np.mean(entities, axis=0)
        if not np.any(img_vec):
            img_vec = book.basis[-1].copy()
        img_vec = _noisy(img_vec / np.linalg.norm(img_vec), spec.noise, rng)
        img_id = f"img:{n}"
        embeddings[img_id] = img_vec

        points = np.vstack([g_pts] + point_sets) if point_sets else g_pts
        total_points += len(points)
        rec = FrameRecord(
            timestamp=0.5 * n,
            pose=Pose.from_matrix(cam.rotation, cam.position),
            intrinsics=intr,
            lidar_file=f"lidar/{n:06d}.bin",
            masks=tuple(masks),
            image_embedding_id=img_id,
        )
        frames.append((rec, points.astype(np.float32)))

    gt = [GroundTruthObject(o.label, f"query:{o.label}", o.obb()) for o in spec.objects]
    zones = [Zone(z.label, tuple((float(a), float(b)) for a, b in z.polygon), f"zone:{z.label}") for z in spec.zones]
    root = write_scene(
        out_dir,
        embedding_dim=spec.embedding_dim,
        terrain_classes=classes,
        terrain_embedding_ids=terrain_ids,
        frames=frames,
        embeddings=embeddings,
        ground_truth=gt,
        zones=zones,
        max_range=spec.max_range,
    )
    (Path(root) / "spec.json").write_text(json.dumps(spec.to_dict(), sort_keys=True, indent=1) + "\n", encoding="utf-8")
    return GeneratedScene(Path(root), spec, len(frames), total_points)
