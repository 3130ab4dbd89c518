"""Ground-truth semantic segmentation maps and per-concept masks.

A pinhole camera with a per-pixel depth test rasterizes the scene
primitives (sky background, building facades, ground/road/sidewalk/
roadline, vehicle boxes) into an H x W grid of concept indices. Concepts
the simulator cannot produce (pedestrian, water, ...) still exist in the
catalog so the feature-selection search can consider and reject them.
"""

from dataclasses import dataclass

import numpy as np

from .scene import CameraPose, ConfigError, Frame, SceneConfig

CONCEPT_NAMES = (
    "building", "fence", "pedestrian", "pole", "roadline",
    "sidewalk", "vegetation", "vehicle", "wall", "trafficsign",
    "sky", "ground", "bridge", "railtrack", "trafficlight",
    "static", "dynamic", "water", "terrain", "unlabeled",
)


@dataclass(frozen=True)
class ConceptCatalog:
    names: tuple = CONCEPT_NAMES

    @property
    def M_con(self):
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)


CATALOG = ConceptCatalog()

BUILDING = CATALOG.index("building")
ROADLINE = CATALOG.index("roadline")
SIDEWALK = CATALOG.index("sidewalk")
VEHICLE = CATALOG.index("vehicle")
SKY = CATALOG.index("sky")
GROUND = CATALOG.index("ground")
TERRAIN = CATALOG.index("terrain")
# the catalog has no dedicated "road" concept: the drivable surface is
# labeled "ground" and unpaved ground-level area is labeled "terrain"
ROAD = GROUND


@dataclass(frozen=True)
class SemanticMap:
    camera_id: int
    labels: np.ndarray  # (H, W) uint8 of concept indices

    @property
    def shape(self):
        return self.labels.shape


@dataclass(frozen=True)
class ConceptMask:
    concept: int
    mask: np.ndarray  # (H, W) uint8 in {0, 1}


_ROADLINE_HALF_WIDTH = 0.12  # meters, painted stripe half width


def _pixel_rays(camera: CameraPose, H, W):
    if camera.hfov <= 0:
        raise ConfigError("degenerate camera: field of view must be positive")
    fwd, right, up = camera.basis()
    focal = (W / 2) / np.tan(camera.hfov / 2)
    us = np.arange(W) - (W - 1) / 2
    vs = (H - 1) / 2 - np.arange(H)
    du, dv = np.meshgrid(us, vs)
    dirs = (fwd[None, None, :] * focal
            + right[None, None, :] * du[..., None]
            + up[None, None, :] * dv[..., None])
    return dirs  # (H, W, 3), unnormalized


def _ground_labels(x, y, config: SceneConfig):
    """Classify ground-plane hit points into road/roadline/sidewalk/ground."""
    lab = np.full(x.shape, TERRAIN, dtype=np.uint8)
    in_street = (x >= 0) & (x <= config.street_length_m)
    rh = config.road_half_width
    on_road = in_street & (np.abs(y) <= rh)
    lab[on_road] = ROAD
    # lane boundary stripes, including the road edges
    boundaries = -rh + config.lane_width_m * np.arange(config.lane_count + 1)
    on_line = np.zeros(x.shape, dtype=bool)
    for b in boundaries:
        on_line |= np.abs(y - b) <= _ROADLINE_HALF_WIDTH
    lab[on_road & on_line] = ROADLINE
    on_sidewalk = in_street & (np.abs(y) > rh) & (np.abs(y) <= rh + config.sidewalk_width_m)
    lab[on_sidewalk] = SIDEWALK
    return lab


def render_semantic_map(frame: Frame, camera: CameraPose, config: SceneConfig,
                        resolution, camera_id=0) -> SemanticMap:
    """Rasterize the frame from one camera into a label grid.

    Deterministic per-pixel depth test over: ground composite, the two
    facade planes, and every vehicle box. Sky is the background label.
    """
    H, W = resolution
    if H < 16 or W < 16:
        raise ConfigError("render resolution must be at least 16x16")
    pos = np.asarray(camera.position, dtype=float)
    dirs = _pixel_rays(camera, H, W)

    labels = np.full((H, W), SKY, dtype=np.uint8)
    depth = np.full((H, W), np.inf)

    # ground plane z = 0
    dz = dirs[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = -pos[2] / dz
    hit = (dz < 0) & (t > 0)
    gx = pos[0] + t * dirs[..., 0]
    gy = pos[1] + t * dirs[..., 1]
    glab = _ground_labels(gx, gy, config)
    take = hit & (t < depth)
    labels[take] = glab[take]
    depth[take] = t[take]

    # building facades at y = +-facade_y, 0 <= x <= L, 0 <= z <= height
    for yf in (config.facade_y, -config.facade_y):
        dy = dirs[..., 1]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (yf - pos[1]) / dy
        fx = pos[0] + t * dirs[..., 0]
        fz = pos[2] + t * dirs[..., 2]
        hit = (np.abs(dy) > 0) & (t > 0) \
            & (fx >= 0) & (fx <= config.street_length_m) \
            & (fz >= 0) & (fz <= config.building_height_m)
        take = hit & (t < depth)
        labels[take] = BUILDING
        depth[take] = t[take]

    # vehicle boxes (axis-aligned; headings are along the lane axis).
    # Each box is tested only inside the pixel bounding rectangle of its
    # projected corners; with all corners in front of the camera the image
    # of a convex box lies inside the hull of the corner images.
    inv = np.where(dirs != 0, 1.0 / dirs, np.inf)
    fwd, right, up = camera.basis()
    focal = (W / 2) / np.tan(camera.hfov / 2)
    for v in frame.vehicles:
        lo, hi = v.box3d()
        corners = np.array([[x, y, z] for x in (lo[0], hi[0])
                            for y in (lo[1], hi[1])
                            for z in (lo[2], hi[2])]) - pos
        f = corners @ fwd
        if np.all(f <= 0):
            continue
        if np.any(f <= 1e-9):
            r0, r1, c0, c1 = 0, H, 0, W  # straddles the image plane
        else:
            cols = focal * (corners @ right) / f + (W - 1) / 2
            rows = (H - 1) / 2 - focal * (corners @ up) / f
            c0 = max(int(np.floor(cols.min())), 0)
            c1 = min(int(np.ceil(cols.max())) + 1, W)
            r0 = max(int(np.floor(rows.min())), 0)
            r1 = min(int(np.ceil(rows.max())) + 1, H)
            if r0 >= r1 or c0 >= c1:
                continue
        sub = np.s_[r0:r1, c0:c1]
        t1 = (lo[None, None, :] - pos) * inv[sub]
        t2 = (hi[None, None, :] - pos) * inv[sub]
        tnear = np.minimum(t1, t2).max(axis=-1)
        tfar = np.maximum(t1, t2).min(axis=-1)
        hit = (tnear <= tfar) & (tfar > 0)
        t = np.where(tnear > 0, tnear, tfar)
        take = hit & (t < depth[sub])
        labels[sub][take] = VEHICLE
        depth[sub][take] = t[take]

    return SemanticMap(camera_id=camera_id, labels=labels)


def render_frame(frame: Frame, config: SceneConfig, resolution):
    """All per-camera maps of a frame, in camera order."""
    return [render_semantic_map(frame, cam, config, resolution, camera_id=i)
            for i, cam in enumerate(config.camera_poses)]


def extract_mask(smap: SemanticMap, concept: int) -> ConceptMask:
    """Binary zero-mask isolating one concept from the segmentation map."""
    if not 0 <= concept < CATALOG.M_con:
        raise IndexError(f"concept index {concept} out of range 0..{CATALOG.M_con - 1}")
    return ConceptMask(concept=concept, mask=(smap.labels == concept).astype(np.uint8))


def corrupt_map(smap: SemanticMap, p: float, rng: np.random.Generator) -> SemanticMap:
    """Resample each pixel uniformly over all labels with probability p.

    Stands in for segmentation error of a learned extractor; p = 0 is the
    identity. The uniform resample may re-draw the original label, so the
    expected pixel accuracy against the input is 1 - p * (M_con - 1) / M_con.
    """
    if not 0 <= p <= 1:
        raise ValueError("corruption probability must be in [0, 1]")
    if p == 0:
        return smap
    labels = smap.labels.copy()
    flip = rng.random(labels.shape) < p
    labels[flip] = rng.integers(0, CATALOG.M_con, size=int(flip.sum()), dtype=np.uint8)
    return SemanticMap(camera_id=smap.camera_id, labels=labels)


def pixel_accuracy(pred, truth) -> float:
    """Fraction of pixels whose predicted label matches the truth,
    averaged over all pixels of all maps."""
    if len(pred) != len(truth):
        raise ValueError("prediction and truth map counts differ")
    correct = 0
    total = 0
    for p, t in zip(pred, truth):
        if p.labels.shape != t.labels.shape:
            raise ValueError("map shapes differ")
        correct += int((p.labels == t.labels).sum())
        total += p.labels.size
    return correct / total
