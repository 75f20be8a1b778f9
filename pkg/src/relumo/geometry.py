"""Pinhole cameras and depth-based cross-projection between views.

Camera convention: right-handed, x right, y down, z forward; pose is
world-to-camera (X_cam = R X_world + t); pixel centres sit at integer
coordinates; depth is the camera-space z in meters, 0 marking invalid.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .imaging import ColorSpace, Image, Mask, load_image

DEPTH_CONSISTENCY_REL = 0.01


@dataclass(frozen=True)
class CameraView:
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray  # world-to-camera, 3x3
    translation: np.ndarray  # 3-vector, meters
    depth: Image | None = None  # Scalar, meters, 0 = invalid

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        R = np.array(self.rotation, dtype=np.float64)
        if R.shape != (3, 3) or np.abs(R @ R.T - np.eye(3)).max() > 1e-6:
            raise ValueError("pose rotation must be 3x3 orthonormal")
        if np.linalg.det(R) < 0:
            raise ValueError("pose rotation must have determinant +1")
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if self.depth is not None:
            if self.depth.channels != 1:
                raise ValueError("depth must be single channel")
            if self.depth.data.min() < 0:
                raise ValueError("depth must be nonnegative")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    def with_depth(self, depth: Image) -> "CameraView":
        return CameraView(self.fx, self.fy, self.cx, self.cy, self.rotation, self.translation, depth)

    def unproject(self) -> tuple[np.ndarray, np.ndarray]:
        """Camera-space 3D point of every valid-depth pixel.

        Returns (points (h, w, 3), valid (h, w) bool).
        """
        if self.depth is None:
            raise ValueError("camera has no depth map")
        z = self.depth.data[..., 0]
        h, w = z.shape
        u, v = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
        pts = np.stack([(u - self.cx) / self.fx * z, (v - self.cy) / self.fy * z, z], axis=-1)
        return pts, z > 0

    def project(self, pts_cam: np.ndarray) -> np.ndarray:
        """Camera-space points (..., 3) -> pixel coordinates (..., 2); z <= 0 maps to nan."""
        z = pts_cam[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.fx * pts_cam[..., 0] / z + self.cx
            v = self.fy * pts_cam[..., 1] / z + self.cy
        bad = z <= 0
        u = np.where(bad, np.nan, u)
        v = np.where(bad, np.nan, v)
        return np.stack([u, v], axis=-1)

    def camera_to_world(self, pts_cam: np.ndarray) -> np.ndarray:
        return (pts_cam - self.translation) @ self.rotation

    def world_to_camera(self, pts_world: np.ndarray) -> np.ndarray:
        return pts_world @ self.rotation.T + self.translation


def relative_rotation(a: CameraView, b: CameraView) -> np.ndarray:
    """Rotation taking camera-b-frame directions into camera-a-frame."""
    return a.rotation @ b.rotation.T


def bilinear_sample(data: np.ndarray, u: np.ndarray, v: np.ndarray):
    """Bilinear sample (h, w, c) data at float pixel coords; returns
    (values (N, c), inbounds (N,) bool). Out-of-bounds samples are zero."""
    h, w = data.shape[:2]
    inb = (u >= 0) & (u <= w - 1) & (v >= 0) & (v <= h - 1)
    inb &= np.isfinite(u) & np.isfinite(v)
    uc = np.where(inb, u, 0.0)
    vc = np.where(inb, v, 0.0)
    u0 = np.clip(np.floor(uc).astype(int), 0, w - 2) if w > 1 else np.zeros_like(uc, int)
    v0 = np.clip(np.floor(vc).astype(int), 0, h - 2) if h > 1 else np.zeros_like(vc, int)
    du = (uc - u0)[:, None]
    dv = (vc - v0)[:, None]
    u1 = np.minimum(u0 + 1, w - 1)
    v1 = np.minimum(v0 + 1, h - 1)
    out = (
        data[v0, u0] * (1 - du) * (1 - dv)
        + data[v0, u1] * du * (1 - dv)
        + data[v1, u0] * (1 - du) * dv
        + data[v1, u1] * du * dv
    )
    out[~inb] = 0.0
    return out, inb


class CrossProjector:
    """Backward warp of src-view rasters into the dst view's pixel grid.

    The warp geometry (sample coordinates and validity) is fixed by the two
    cameras, so it is precomputed once and reused for every raster.
    """

    def __init__(self, src_cam: CameraView, dst_cam: CameraView,
                 depth_tolerance: float = DEPTH_CONSISTENCY_REL):
        if dst_cam.depth is None:
            raise ValueError("cross projection needs depth for the destination view")
        self.src_cam = src_cam
        self.dst_cam = dst_cam
        pts_dst, valid = dst_cam.unproject()
        h, w = valid.shape
        self.shape = (h, w)
        pts_world = dst_cam.camera_to_world(pts_dst.reshape(-1, 3))
        pts_src = src_cam.world_to_camera(pts_world)
        uv = src_cam.project(pts_src)
        self.u = uv[..., 0]
        self.v = uv[..., 1]
        mask = valid.reshape(-1).copy()
        mask &= np.isfinite(self.u) & np.isfinite(self.v)
        # occlusion gate: reprojected depth must agree with the src depth map
        if src_cam.depth is not None:
            src_z, src_in = bilinear_sample(src_cam.depth.data, self.u, self.v)
            src_z = src_z[:, 0]
            z = pts_src[:, 2]
            with np.errstate(invalid="ignore"):
                consistent = np.abs(z - src_z) <= depth_tolerance * np.maximum(src_z, 1e-12)
            mask &= np.where(src_in & (src_z > 0), consistent, False)
        self.valid = mask

    def warp(self, src: Image) -> tuple[Image, Mask]:
        vals, inb = bilinear_sample(src.data, self.u, self.v)
        h, w = self.shape
        mask = self.valid & inb
        vals[~mask] = 0.0
        return (
            Image(vals.reshape(h, w, src.channels), src.space),
            Mask(mask.reshape(h, w)),
        )


def cross_project(src: Image, src_cam: CameraView, dst_cam: CameraView) -> tuple[Image, Mask]:
    """Warp the src view's image into dst's pixel grid using dst's depth.

    Each destination pixel with valid depth is unprojected, transformed and
    bilinearly sampled in src; the mask marks in-bounds samples that pass
    the relative depth-consistency gate (when src carries depth).
    """
    return CrossProjector(src_cam, dst_cam).warp(src)


def make_gt_relit(target_views, dst_cam: CameraView):
    """Average the cross-projections of several same-lighting views into dst.

    Returns (mean image, union-of-validity mask, per-pixel contributor
    counts).
    """
    if not target_views:
        raise ValueError("no target views supplied")
    acc = None
    count = None
    space = None
    for img, cam in target_views:
        warped, mask = cross_project(img, cam, dst_cam)
        if acc is None:
            acc = np.zeros_like(warped.data)
            count = np.zeros(acc.shape[:2])
            space = warped.space
        acc += warped.data * mask.values[:, :, None]
        count += mask.values
    if not (count > 0).any():
        raise ValueError("no view overlaps the destination camera")
    out = np.zeros_like(acc)
    hit = count > 0
    out[hit] = acc[hit] / count[hit][:, None]
    return Image(out, space), Mask(hit), count


# ---------------------------------------------------------------------------
# Scene camera files


@dataclass(frozen=True)
class CameraRecord:
    image_file: str
    view: CameraView
    condition: int | None = None
    depth_file: str | None = None


def load_cameras(path) -> list[CameraRecord]:
    """Read a cameras.json: a list of {image, fx, fy, cx, cy, R, t,
    depth_file, [condition]} entries. Depth files resolve relative to the
    JSON file."""
    path = Path(path)
    doc = json.loads(path.read_text())
    entries = doc["views"] if isinstance(doc, dict) else doc
    records = []
    for e in entries:
        R = np.array(e["R"], dtype=np.float64).reshape(3, 3)
        depth = None
        if e.get("depth_file"):
            depth = load_image(path.parent / e["depth_file"])
        view = CameraView(e["fx"], e["fy"], e["cx"], e["cy"], R, np.array(e["t"]), depth)
        records.append(CameraRecord(e["image"], view, e.get("condition"), e.get("depth_file")))
    return records


def save_cameras(records, path):
    entries = []
    path = Path(path)
    for r in records:
        entries.append(
            {
                "image": r.image_file,
                "fx": r.view.fx,
                "fy": r.view.fy,
                "cx": r.view.cx,
                "cy": r.view.cy,
                "R": r.view.rotation.reshape(9).tolist(),
                "t": r.view.translation.tolist(),
                "depth_file": r.depth_file,
                "condition": r.condition,
            }
        )
    path.write_text(json.dumps(entries, indent=1))
