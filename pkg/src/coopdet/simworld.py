"""Synthetic two-observer scenes, 2D ray-cast LIDAR and the on-disk dataset format.

Dataset directory layout::

    manifest.json              format version, split, seed, sensor and scene
                               parameters, and one record per frame (poses,
                               scene objects, ground truth, cloud file names)
    clouds/<id>_ego.bin        float32 little-endian (x, y, z) triples in the
    clouds/<id>_coop.bin       observer's sensor frame
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .detect import GroundTruth
from .sensing import GridSpec, Pose2D, to_sensor_frame

FORMAT_VERSION = 1

VEHICLE, PEDESTRIAN = 0, 1
FOOTPRINTS = {VEHICLE: (4.5, 2.0), PEDESTRIAN: (0.5, 0.5)}
HEIGHTS = {VEHICLE: (-1.0, 0.6), PEDESTRIAN: (-1.0, 0.2)}
WALL_HEIGHT = (-1.0, 4.0)
WALL_THICKNESS = 0.3


class DatasetError(Exception):
    pass


class MissingFile(DatasetError):
    pass


class LengthMismatch(DatasetError):
    pass


class VersionMismatch(DatasetError):
    pass


class PlacementError(RuntimeError):
    pass


@dataclass(frozen=True)
class Rect:
    """Oriented rectangle: ``length`` along ``yaw``, ``width`` across it."""

    cx: float
    cy: float
    length: float
    width: float
    yaw: float = 0.0
    z_lo: float = -1.0
    z_hi: float = 1.0

    def corners(self) -> np.ndarray:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        hl, hw = self.length / 2, self.width / 2
        local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.array([self.cx, self.cy])

    def aabb(self) -> tuple[float, float, float, float]:
        pts = self.corners()
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        return ((lo[0] + hi[0]) / 2, (lo[1] + hi[1]) / 2, hi[0] - lo[0], hi[1] - lo[1])

    def inflated(self, margin: float) -> "Rect":
        return Rect(self.cx, self.cy, self.length + 2 * margin, self.width + 2 * margin, self.yaw, self.z_lo, self.z_hi)

    def contains(self, x, y, tol: float = 1e-9) -> np.ndarray:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        dx, dy = np.asarray(x) - self.cx, np.asarray(y) - self.cy
        u = dx * c + dy * s
        v = -dx * s + dy * c
        return (np.abs(u) <= self.length / 2 + tol) & (np.abs(v) <= self.width / 2 + tol)


def rects_overlap(a: Rect, b: Rect) -> bool:
    """Separating-axis test for two oriented rectangles."""
    pa, pb = a.corners(), b.corners()
    for poly in (pa, pb):
        for i in range(4):
            edge = poly[(i + 1) % 4] - poly[i]
            axis = np.array([-edge[1], edge[0]])
            ra, rb = pa @ axis, pb @ axis
            if ra.max() < rb.min() or rb.max() < ra.min():
                return False
    return True


@dataclass(frozen=True)
class Target:
    cls: int
    rect: Rect

    def ground_truth(self) -> GroundTruth:
        cx, cy, w, h = self.rect.aabb()
        return GroundTruth(self.cls, cx, cy, w, h)


@dataclass
class Scene:
    ego: Pose2D
    coop: Pose2D
    targets: list[Target] = field(default_factory=list)
    occluders: list[Rect] = field(default_factory=list)
    occluded: list[int] = field(default_factory=list)  # targets hidden from ego by construction

    def objects(self) -> list[Rect]:
        return [t.rect for t in self.targets] + list(self.occluders)


@dataclass(frozen=True)
class SceneParams:
    grid: GridSpec = field(default_factory=GridSpec.tiny)
    vehicles: tuple[int, int] = (2, 3)
    pedestrians: tuple[int, int] = (1, 3)
    occlusion: bool = True
    occluded_targets: int = 1
    extra_occluders: tuple[int, int] = (0, 1)
    coop_distance: tuple[float, float] = (5.0, 9.0)
    ego_jitter: float = 3.0
    edge_margin: float = 2.0
    ray_count: int = 720
    samples_per_hit: int = 5
    max_range: float = 40.0
    max_retries: int = 200

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid"] = {"resolution": self.grid.resolution, "range": self.grid.range,
                     "width_px": self.grid.width_px, "height_px": self.grid.height_px}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneParams":
        d = dict(d)
        d["grid"] = GridSpec(**d["grid"])
        for key in ("vehicles", "pedestrians", "extra_occluders", "coop_distance"):
            d[key] = tuple(d[key])
        return cls(**d)


@dataclass
class Frame:
    index: int
    scene: Scene
    ego_cloud: np.ndarray  # (N, 3) float32, ego sensor frame
    coop_cloud: np.ndarray
    ground_truth: list[GroundTruth]


# --------------------------------------------------------------------------- ray casting

def _edges(objects: list[Rect]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if not objects:
        return np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0, dtype=np.int64)
    starts, ends, owner = [], [], []
    for i, r in enumerate(objects):
        c = r.corners()
        starts.append(c)
        ends.append(np.roll(c, -1, axis=0))
        owner.extend([i] * 4)
    return np.concatenate(starts), np.concatenate(ends), np.asarray(owner)


def cast_rays(objects: list[Rect], origin: tuple[float, float], angles: np.ndarray, max_range: float):
    """Nearest edge hit per ray. Returns (distance, owner index or -1, hit xy)."""
    angles = np.asarray(angles, dtype=np.float64)
    d = np.stack([np.cos(angles), np.sin(angles)], axis=1)  # (R, 2)
    p, q, owner = _edges(objects)
    dist = np.full(len(angles), np.inf)
    hit = np.full(len(angles), -1, dtype=np.int64)
    if len(p):
        e = q - p  # (E, 2)
        w = p - np.asarray(origin)  # (E, 2)
        denom = d[:, 0:1] * e[None, :, 1] - d[:, 1:2] * e[None, :, 0]  # cross(d, e)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (w[None, :, 0] * e[None, :, 1] - w[None, :, 1] * e[None, :, 0]) / denom
            s = (w[None, :, 0] * d[:, 1:2] - w[None, :, 1] * d[:, 0:1]) / denom
        valid = (np.abs(denom) > 1e-12) & (t > 1e-9) & (s >= 0.0) & (s <= 1.0) & (t <= max_range)
        t = np.where(valid, t, np.inf)
        best = t.argmin(axis=1)
        dist = t[np.arange(len(angles)), best]
        hit = np.where(np.isfinite(dist), owner[best], -1)
    pts = np.asarray(origin) + d * np.where(np.isfinite(dist), dist, 0.0)[:, None]
    return dist, hit, pts


def ray_angles(pose: Pose2D, ray_count: int) -> np.ndarray:
    return pose.heading + 2.0 * np.pi * np.arange(ray_count) / ray_count


def simulate_lidar(scene: Scene, pose: Pose2D, ray_count: int = 720, max_range: float = 40.0,
                   samples_per_hit: int = 5, rng: np.random.Generator | None = None,
                   return_hits: bool = False):
    """Sensor-frame point cloud (float32) of everything the rays hit first.

    Each hit produces ``samples_per_hit`` points stacked vertically with heights
    drawn uniformly from the hit object's height extent.
    """
    if ray_count < 1:
        raise ValueError("ray_count must be >= 1")
    rng = rng if rng is not None else np.random.default_rng(0)
    objects = scene.objects()
    _, hit, pts = cast_rays(objects, (pose.x, pose.y), ray_angles(pose, ray_count), max_range)
    rows = np.flatnonzero(hit >= 0)
    owners = np.repeat(hit[rows], samples_per_hit)
    xy = np.repeat(pts[rows], samples_per_hit, axis=0)
    lo = np.array([objects[i].z_lo for i in owners]) if len(owners) else np.zeros(0)
    hi = np.array([objects[i].z_hi for i in owners]) if len(owners) else np.zeros(0)
    z = lo + (hi - lo) * rng.random(len(owners))
    global_pts = np.column_stack([xy, z]) if len(owners) else np.zeros((0, 3))
    cloud = to_sensor_frame(global_pts, pose).astype(np.float32)
    if return_hits:
        return cloud, owners, global_pts
    return cloud


def hits_per_object(scene: Scene, pose: Pose2D, ray_count: int, max_range: float) -> np.ndarray:
    objects = scene.objects()
    _, hit, _ = cast_rays(objects, (pose.x, pose.y), ray_angles(pose, ray_count), max_range)
    return np.bincount(hit[hit >= 0], minlength=len(objects))


# --------------------------------------------------------------------------- scene generation

def _free(rect: Rect, placed: list[Rect], observers: list[Pose2D], margin: float, observer_clearance: float) -> bool:
    big = rect.inflated(margin)
    if any(rects_overlap(big, r) for r in placed):
        return False
    return not any(bool(rect.inflated(observer_clearance).contains(o.x, o.y)) for o in observers)


def _place_targets(rng, params: SceneParams, ego: Pose2D, coop: Pose2D) -> list[Target] | None:
    half = params.grid.range - params.edge_margin
    counts = [(VEHICLE, int(rng.integers(params.vehicles[0], params.vehicles[1] + 1))),
              (PEDESTRIAN, int(rng.integers(params.pedestrians[0], params.pedestrians[1] + 1)))]
    targets: list[Target] = []
    for cls, n in counts:
        for _ in range(n):
            for _attempt in range(50):
                cx = ego.x + rng.uniform(-half, half)
                cy = ego.y + rng.uniform(-half, half)
                yaw = float(rng.integers(0, 2)) * (math.pi / 2)
                length, width = FOOTPRINTS[cls]
                rect = Rect(cx, cy, length, width, yaw, *HEIGHTS[cls])
                if _free(rect, [t.rect for t in targets], [ego, coop], 1.0, 2.5):
                    targets.append(Target(cls, rect))
                    break
            else:
                return None
    return targets


def _wall_between(rng, ego: Pose2D, target: Target) -> Rect:
    dx, dy = target.rect.cx - ego.x, target.rect.cy - ego.y
    dist = math.hypot(dx, dy)
    frac = rng.uniform(0.45, 0.6)
    radius = math.hypot(target.rect.length, target.rect.width) / 2
    half_len = frac * radius * 1.3 + 0.4
    return Rect(ego.x + dx * frac, ego.y + dy * frac, 2 * half_len, WALL_THICKNESS,
                math.atan2(dy, dx) + math.pi / 2, *WALL_HEIGHT)


def generate_scene(seed, params: SceneParams | None = None) -> Scene:
    """Deterministic scene for ``seed`` (an int or a numpy Generator).

    With occlusion enabled, ``params.occluded_targets`` targets get a wall that
    hides them from the ego observer while the cooperative observer still sees
    them; this is verified by ray casting before the scene is accepted.
    """
    params = params or SceneParams()
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    for _ in range(params.max_retries):
        ego = Pose2D(rng.uniform(-params.ego_jitter, params.ego_jitter),
                     rng.uniform(-params.ego_jitter, params.ego_jitter), rng.uniform(-math.pi, math.pi))
        dist = rng.uniform(*params.coop_distance)
        bearing = rng.uniform(-math.pi, math.pi)
        coop = Pose2D(ego.x + dist * math.cos(bearing), ego.y + dist * math.sin(bearing),
                      rng.uniform(-math.pi, math.pi))
        targets = _place_targets(rng, params, ego, coop)
        if targets is None:
            continue
        scene = Scene(ego, coop, targets)
        if params.occlusion and not _add_occluders(rng, scene, params):
            continue
        return scene
    raise PlacementError(f"could not place a valid scene in {params.max_retries} attempts")


def _add_occluders(rng, scene: Scene, params: SceneParams) -> bool:
    ego, coop = scene.ego, scene.coop
    far = [i for i, t in enumerate(scene.targets) if math.hypot(t.rect.cx - ego.x, t.rect.cy - ego.y) >= 5.0]
    want = min(params.occluded_targets, len(scene.targets))
    if len(far) < want:
        return False
    chosen = sorted(int(i) for i in rng.choice(far, size=want, replace=False))
    target_rects = [t.rect for t in scene.targets]
    walls: list[Rect] = []
    for i in chosen:
        wall = _wall_between(rng, ego, scene.targets[i])
        if not _free(wall, target_rects + walls, [ego, coop], 0.3, 1.5):
            return False
        walls.append(wall)
    half = params.grid.range - params.edge_margin
    for _ in range(int(rng.integers(params.extra_occluders[0], params.extra_occluders[1] + 1))):
        wall = Rect(ego.x + rng.uniform(-half, half), ego.y + rng.uniform(-half, half),
                    rng.uniform(2.0, 5.0), WALL_THICKNESS, rng.uniform(0, math.pi), *WALL_HEIGHT)
        if _free(wall, target_rects + walls, [ego, coop], 0.3, 1.5):
            walls.append(wall)
    scene.occluders = walls
    scene.occluded = chosen
    ego_hits = hits_per_object(scene, ego, params.ray_count, params.max_range)
    coop_hits = hits_per_object(scene, coop, params.ray_count, params.max_range)
    return all(ego_hits[i] == 0 and coop_hits[i] > 0 for i in chosen)


def ground_truth(scene: Scene, grid: GridSpec) -> list[GroundTruth]:
    """Targets whose centre lies inside the ego image footprint."""
    x_lo, x_hi = scene.ego.x - grid.range, scene.ego.x + grid.range
    y_lo, y_hi = scene.ego.y - grid.range, scene.ego.y + grid.range
    out = []
    for t in scene.targets:
        g = t.ground_truth()
        if x_lo <= g.cx < x_hi and y_lo <= g.cy < y_hi:
            out.append(g)
    return out


def make_frame(seed: int, index: int, params: SceneParams) -> Frame:
    ss = np.random.SeedSequence([seed, index])
    scene_rng, ego_rng, coop_rng = (np.random.default_rng(s) for s in ss.spawn(3))
    scene = generate_scene(scene_rng, params)
    kw = dict(ray_count=params.ray_count, max_range=params.max_range, samples_per_hit=params.samples_per_hit)
    ego_cloud = simulate_lidar(scene, scene.ego, rng=ego_rng, **kw)
    coop_cloud = simulate_lidar(scene, scene.coop, rng=coop_rng, **kw)
    return Frame(index, scene, ego_cloud, coop_cloud, ground_truth(scene, params.grid))


def _make_frame_args(args):
    return make_frame(*args)


def generate_frames(seed: int, count: int, params: SceneParams | None = None, workers: int = 1) -> list[Frame]:
    """Frames 0..count-1; each frame's randomness derives only from (seed, index)."""
    params = params or SceneParams()
    jobs = [(seed, i, params) for i in range(count)]
    if workers <= 1:
        return [make_frame(*j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_make_frame_args, jobs, chunksize=max(1, count // (4 * workers))))


# --------------------------------------------------------------------------- persistence

@dataclass
class DatasetManifest:
    split: str
    seed: int
    frame_count: int
    params: SceneParams
    records: list[dict]
    version: int = FORMAT_VERSION


def _rect_dict(r: Rect) -> dict:
    return asdict(r)


def _pose_dict(p: Pose2D) -> dict:
    return {"x": p.x, "y": p.y, "heading": p.heading}


def _write_cloud(path: Path, cloud: np.ndarray) -> None:
    path.write_bytes(np.ascontiguousarray(cloud, dtype="<f4").tobytes())


def _read_cloud(path: Path, expected_points: int) -> np.ndarray:
    if not path.exists():
        raise MissingFile(f"missing point cloud file {path}")
    raw = path.read_bytes()
    if len(raw) != 12 * expected_points:
        raise LengthMismatch(f"{path.name}: {len(raw)} bytes, manifest expects {12 * expected_points}")
    return np.frombuffer(raw, dtype="<f4").reshape(-1, 3).astype(np.float32)


def write_dataset(path, frames: list[Frame], seed: int, params: SceneParams, split: str = "train") -> DatasetManifest:
    root = Path(path)
    (root / "clouds").mkdir(parents=True, exist_ok=True)
    records = []
    for f in frames:
        stem = f"{f.index:06d}"
        files = {}
        for obs, cloud in (("ego", f.ego_cloud), ("coop", f.coop_cloud)):
            name = f"clouds/{stem}_{obs}.bin"
            _write_cloud(root / name, cloud)
            files[obs] = {"file": name, "points": int(len(cloud))}
        records.append({
            "id": f.index,
            "ego_pose": _pose_dict(f.scene.ego),
            "coop_pose": _pose_dict(f.scene.coop),
            "clouds": files,
            "targets": [{"class": t.cls, **_rect_dict(t.rect)} for t in f.scene.targets],
            "occluders": [_rect_dict(r) for r in f.scene.occluders],
            "occluded": list(f.scene.occluded),
            "ground_truth": [{"class": g.cls, "cx": g.cx, "cy": g.cy, "w": g.w, "h": g.h} for g in f.ground_truth],
        })
    manifest = DatasetManifest(split, seed, len(frames), params, records)
    doc = {
        "format_version": FORMAT_VERSION,
        "split": split,
        "seed": seed,
        "frame_count": len(frames),
        "sensor": {"resolution": params.grid.resolution, "range": params.grid.range,
                   "width_px": params.grid.width_px, "height_px": params.grid.height_px,
                   "ray_count": params.ray_count, "samples_per_hit": params.samples_per_hit,
                   "max_range": params.max_range},
        "scene_params": params.to_dict(),
        "frames": records,
    }
    (root / "manifest.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return manifest


def read_manifest(path) -> DatasetManifest:
    root = Path(path)
    mpath = root / "manifest.json"
    if not mpath.exists():
        raise MissingFile(f"no manifest.json in {root}")
    try:
        doc = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetError(f"unreadable manifest: {exc}") from None
    if doc.get("format_version") != FORMAT_VERSION:
        raise VersionMismatch(f"dataset format {doc.get('format_version')} != supported {FORMAT_VERSION}")
    if doc["frame_count"] != len(doc["frames"]):
        raise LengthMismatch(f"manifest lists {len(doc['frames'])} frames but frame_count is {doc['frame_count']}")
    return DatasetManifest(doc["split"], doc["seed"], doc["frame_count"],
                           SceneParams.from_dict(doc["scene_params"]), doc["frames"], doc["format_version"])


def read_dataset(path) -> tuple[DatasetManifest, list[Frame]]:
    root = Path(path)
    manifest = read_manifest(root)
    frames = []
    for rec in manifest.records:
        scene = Scene(
            Pose2D(**rec["ego_pose"]), Pose2D(**rec["coop_pose"]),
            [Target(t["class"], Rect(**{k: v for k, v in t.items() if k != "class"})) for t in rec["targets"]],
            [Rect(**r) for r in rec["occluders"]],
            list(rec["occluded"]),
        )
        ego = _read_cloud(root / rec["clouds"]["ego"]["file"], rec["clouds"]["ego"]["points"])
        coop = _read_cloud(root / rec["clouds"]["coop"]["file"], rec["clouds"]["coop"]["points"])
        gts = [GroundTruth(g["class"], g["cx"], g["cy"], g["w"], g["h"]) for g in rec["ground_truth"]]
        frames.append(Frame(rec["id"], scene, ego, coop, gts))
    return manifest, frames
