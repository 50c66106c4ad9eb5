"""Synthetic observations: orthographic silhouette+depth renders and the
random-crop corruption used to stress multi-view fusion.

Views are sphere-traced against the analytic shape SDF (which never
overestimates distance, so plain distance stepping is safe).  Raster layout
is (H, W, 2): channel 0 silhouette in {0, 1}, channel 1 depth normalized to
(0, 1] on hits and exactly 0 on background.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .kernels import sphere_trace_kernel
from .shapes import ShapeSpec

DEFAULT_RESOLUTION = 32
VIEW_SPAN = 1.6          # world units covered by the image plane
CAMERA_DISTANCE = 2.0
RAY_T_MAX = 4.0
HIT_EPS = 1e-3
MAX_STEPS = 64

CORRUPTION_NONE = "none"
CORRUPTION_RANDOM_CROP = "random_crop"


@dataclass(frozen=True)
class CorruptionRecord:
    kind: str = CORRUPTION_NONE
    min_scale: float = 1.0
    realized_scale: float = 1.0
    crop_origin: tuple[int, int] = (0, 0)
    crop_size: int = 0


@dataclass
class ViewObservation:
    raster: np.ndarray                 # (H, W, 2) float64
    azimuth: float                     # radians
    elevation: float                   # radians
    instance_id: int
    corruption: CorruptionRecord = CorruptionRecord()

    @property
    def resolution(self) -> int:
        return self.raster.shape[0]

    @property
    def silhouette(self) -> np.ndarray:
        return self.raster[:, :, 0]

    @property
    def depth(self) -> np.ndarray:
        return self.raster[:, :, 1]


def camera_basis(azimuth: float, elevation: float
                 ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(eye, right, up) for a camera at CAMERA_DISTANCE looking at origin.

    ``right`` stays horizontal for every elevation, so there is no roll.
    """
    ca, sa = np.cos(azimuth), np.sin(azimuth)
    ce, se = np.cos(elevation), np.sin(elevation)
    eye = CAMERA_DISTANCE * np.array([ce * ca, ce * sa, se])
    direction = -eye / np.linalg.norm(eye)
    right = np.array([-sa, ca, 0.0])
    up = np.cross(right, direction)
    return eye, right, up


def render_view(spec: ShapeSpec, azimuth: float, elevation: float,
                resolution: int = DEFAULT_RESOLUTION) -> ViewObservation:
    """Orthographic sphere-traced silhouette+depth raster."""
    eye, right, up = camera_basis(azimuth, elevation)
    direction = -eye / np.linalg.norm(eye)

    px = VIEW_SPAN / resolution
    # pixel centers, row 0 at top (+up), column 0 at left (-right)
    cols = (np.arange(resolution) + 0.5 - resolution / 2) * px
    rows = (resolution / 2 - np.arange(resolution) - 0.5) * px
    v, u = np.meshgrid(rows, cols, indexing="ij")
    origins = (eye[None, :]
               + u.reshape(-1, 1) * right[None, :]
               + v.reshape(-1, 1) * up[None, :])

    hx, hy, hz = spec.half_extents
    hit, t = sphere_trace_kernel(origins, direction, hx, hy, hz,
                                 spec.exponent, RAY_T_MAX, HIT_EPS, MAX_STEPS)
    sil = hit.reshape(resolution, resolution).astype(np.float64)
    depth = np.where(hit, (RAY_T_MAX - t) / RAY_T_MAX, 0.0)
    raster = np.stack([sil, depth.reshape(resolution, resolution)], axis=2)
    return ViewObservation(raster, azimuth, elevation, spec.instance_id)


def hit_points(view: ViewObservation) -> np.ndarray:
    """Reconstruct the 3D hit point of every silhouette pixel."""
    res = view.resolution
    eye, right, up = camera_basis(view.azimuth, view.elevation)
    direction = -eye / np.linalg.norm(eye)
    px = VIEW_SPAN / res
    cols = (np.arange(res) + 0.5 - res / 2) * px
    rows = (res / 2 - np.arange(res) - 0.5) * px
    v, u = np.meshgrid(rows, cols, indexing="ij")
    mask = view.silhouette > 0.5
    t = RAY_T_MAX * (1.0 - view.depth[mask])
    origins = (eye[None, :]
               + u[mask].reshape(-1, 1) * right[None, :]
               + v[mask].reshape(-1, 1) * up[None, :])
    return origins + t[:, None] * direction


def corrupt_crop(view: ViewObservation, min_scale: float, seed: int
                 ) -> ViewObservation:
    """Keep a random square region (side fraction drawn uniformly from
    [min_scale, 1]) and resample it back to full resolution with nearest
    neighbour."""
    if not 0.0 < min_scale <= 1.0:
        raise ValueError(f"min_scale {min_scale} outside (0, 1]")
    res = view.resolution
    rng = np.random.default_rng(seed)
    scale = float(rng.uniform(min_scale, 1.0))
    size = max(1, int(round(scale * res)))
    if size >= res:
        record = CorruptionRecord(CORRUPTION_RANDOM_CROP, min_scale, 1.0,
                                  (0, 0), res)
        return replace(view, raster=view.raster.copy(), corruption=record)
    oy = int(rng.integers(0, res - size + 1))
    ox = int(rng.integers(0, res - size + 1))
    cropped = view.raster[oy:oy + size, ox:ox + size, :]
    src = np.minimum(((np.arange(res) + 0.5) * size / res).astype(np.intp),
                     size - 1)
    raster = cropped[np.ix_(src, src)]
    record = CorruptionRecord(CORRUPTION_RANDOM_CROP, min_scale,
                              size / res, (oy, ox), size)
    return replace(view, raster=np.ascontiguousarray(raster),
                   corruption=record)


def retained_silhouette_fraction(original: ViewObservation,
                                 record: CorruptionRecord) -> float:
    """Fraction of the original silhouette pixels inside the crop window
    (the pre-resample information content of the corrupted view)."""
    total = original.silhouette.sum()
    if total == 0:
        return 0.0
    if record.crop_size == 0 or record.realized_scale >= 1.0:
        return 1.0
    oy, ox = record.crop_origin
    kept = original.silhouette[oy:oy + record.crop_size,
                               ox:ox + record.crop_size].sum()
    return float(kept / total)


def flip_horizontal(view: ViewObservation) -> ViewObservation:
    return replace(view, raster=np.ascontiguousarray(view.raster[:, ::-1, :]))


def camera_ring(n_views: int, seed: int, base_elevation: float = 0.35,
                elevation_jitter: float = 0.15) -> list[tuple[float, float]]:
    """Evenly spaced azimuths with seeded per-view elevation jitter."""
    rng = np.random.default_rng(seed)
    azimuths = 2.0 * np.pi * np.arange(n_views) / n_views
    jitter = rng.uniform(-elevation_jitter, elevation_jitter, size=n_views)
    return [(float(a), float(base_elevation + j))
            for a, j in zip(azimuths, jitter)]


@dataclass
class ViewDataset:
    views: list[ViewObservation]
    codes: list[np.ndarray]            # gt code per view (empty array if none)
    resolution: int
    seed: int

    def __len__(self) -> int:
        return len(self.views)


def make_view_dataset(specs: list[ShapeSpec], codebook,
                      views_per_instance: int = 10, seed: int = 0,
                      resolution: int = DEFAULT_RESOLUTION) -> ViewDataset:
    """Balanced per-instance view sets with deterministic cameras.

    ``codebook`` maps instance_id -> code; pass None for evaluation-only
    datasets without regression targets.
    """
    views, codes = [], []
    for spec in sorted(specs, key=lambda s: s.instance_id):
        if codebook is not None and spec.instance_id not in codebook:
            raise KeyError(f"instance {spec.instance_id} missing from codebook")
        ring = camera_ring(views_per_instance,
                           seed=seed * 100003 + spec.instance_id)
        for az, el in ring:
            views.append(render_view(spec, az, el, resolution))
            codes.append(np.asarray(codebook[spec.instance_id], dtype=np.float64)
                         if codebook is not None else np.zeros(0))
    return ViewDataset(views, codes, resolution, seed)


def save_view_dataset(directory, dataset: ViewDataset) -> None:
    """Directory of flat binary rasters plus a text manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = [f"# shapeuq-views 1 resolution={dataset.resolution} "
             f"seed={dataset.seed} count={len(dataset)}",
             "# file instance_id azimuth elevation kind min_scale "
             "realized_scale crop_y crop_x crop_size code..."]
    for i, (view, code) in enumerate(zip(dataset.views, dataset.codes)):
        name = f"view_{i:05d}.bin"
        with open(directory / name, "wb") as f:
            f.write(np.ascontiguousarray(view.raster, dtype="<f8").tobytes())
        c = view.corruption
        code_txt = " ".join(repr(float(x)) for x in code)
        lines.append(f"{name} {view.instance_id} {view.azimuth!r} "
                     f"{view.elevation!r} {c.kind} {c.min_scale!r} "
                     f"{c.realized_scale!r} {c.crop_origin[0]} "
                     f"{c.crop_origin[1]} {c.crop_size} {code_txt}".rstrip())
    (directory / "manifest.txt").write_text("\n".join(lines) + "\n",
                                            encoding="utf-8")


def load_view_dataset(directory) -> ViewDataset:
    directory = Path(directory)
    text = (directory / "manifest.txt").read_text(encoding="utf-8")
    lines = text.splitlines()
    head = dict(kv.split("=") for kv in lines[0].split()[3:])
    resolution = int(head["resolution"])
    seed = int(head["seed"])
    views, codes = [], []
    for line in lines[2:]:
        parts = line.split()
        name, iid, az, el, kind, mscale, rscale, cy, cx, csize = parts[:10]
        raster = np.frombuffer((directory / name).read_bytes(), dtype="<f8")
        raster = raster.reshape(resolution, resolution, 2).astype(np.float64)
        record = CorruptionRecord(kind, float(mscale), float(rscale),
                                  (int(cy), int(cx)), int(csize))
        views.append(ViewObservation(raster, float(az), float(el), int(iid),
                                     record))
        codes.append(np.array([float(x) for x in parts[10:]]))
    return ViewDataset(views, codes, resolution, seed)
