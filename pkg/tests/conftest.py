import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from relumo import CameraView, ColorSpace, Image, Mask, ShLighting, shade
from relumo.decompose import stereo_to_normals


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_unit_normals(rng, h, w, spread=0.8):
    """Forward-facing unit normal field with decent angular spread."""
    uv = rng.uniform(-spread, spread, size=(h, w, 2))
    return stereo_to_normals(uv)


def random_lighting(rng, scale=0.3):
    """Random lighting with a positive ambient term so shading stays positive."""
    coeffs = rng.uniform(-scale, scale, size=(3, 9))
    coeffs[:, 0] = rng.uniform(0.8, 1.2, size=3)
    return ShLighting(coeffs)


def make_lambertian_scene(rng, h=16, w=16, shadow=None, normalize_lighting=True):
    """Noiseless image i = s * albedo * (L b(n)) with everything returned.

    Lighting is scaled so mean foreground shading luminance is 1 and the
    model stays inside (0, 1), keeping min(1, i/s) inactive.
    """
    albedo_data = rng.uniform(0.15, 0.7, size=(h, w, 3))
    normals_data = random_unit_normals(rng, h, w)
    normals = Image(normals_data, ColorSpace.SCALAR)
    lighting = random_lighting(rng)
    mask = Mask(np.ones((h, w), dtype=bool))

    shading = shade(normals, lighting).data
    if normalize_lighting:
        lum = shading @ np.array([0.2126, 0.7152, 0.0722])
        lighting = ShLighting(lighting.coeffs / lum.mean())
        shading = shade(normals, lighting).data
    # keep the model strictly below 1 so min(1, i/s) never clips
    peak = float((albedo_data * shading).max())
    if peak > 0.95:
        albedo_data = albedo_data * (0.95 / peak)
    if shadow is None:
        s = np.ones((h, w, 1))
    else:
        s = np.asarray(shadow, dtype=np.float64).reshape(h, w, 1)
    img = Image(s * albedo_data * shading, ColorSpace.LINEAR_RGB)
    return {
        "image": img,
        "albedo": Image(albedo_data, ColorSpace.LINEAR_RGB),
        "normals": normals,
        "shadow": Image(s, ColorSpace.SCALAR),
        "lighting": lighting,
        "mask": mask,
    }


def make_plane_camera(h=24, w=32, depth_value=2.0, fx=40.0, fy=40.0,
                      R=np.eye(3), t=np.zeros(3)):
    """Camera looking at a fronto-parallel plane of constant depth."""
    depth = Image(np.full((h, w, 1), depth_value), ColorSpace.SCALAR)
    return CameraView(fx, fy, (w - 1) / 2.0, (h - 1) / 2.0, R, t, depth)


def two_view_plane_scene(rng, h=16, w=16, depth=2.0, fx=16.0, yaw_deg=0.0,
                         baseline=0.15, ramp=0.25):
    """Two calibrated views of a textured fronto-parallel plane under one
    world lighting. World frame = camera-a frame; plane at z = depth with
    normal (0, 0, -1)."""
    from relumo import CameraView, rotate_lighting
    from relumo.shlight import ShLighting
    from relumo import shade as _shade

    cam_a = make_plane_camera(h=h, w=w, depth_value=depth, fx=fx, fy=fx)
    Rb = yaw_rotation(np.radians(yaw_deg))
    t_b = np.array([-baseline, 0.0, 0.0])
    u, v = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
    dirs = np.stack([(u - cam_a.cx) / fx, (v - cam_a.cy) / fx, np.ones_like(u)], -1)
    zb = (depth + (Rb.T @ t_b)[2]) / (dirs @ Rb)[..., 2]
    cam_b = CameraView(fx, fx, cam_a.cx, cam_a.cy, Rb, t_b,
                       Image(zb[..., None], ColorSpace.SCALAR))

    L_w = ShLighting(
        np.concatenate([np.full((3, 1), 1.0), rng.uniform(-0.1, 0.1, (3, 8))], axis=1)
    )

    def render(cam):
        pts, _ = cam.unproject()
        Xw = cam.camera_to_world(pts.reshape(-1, 3)).reshape(h, w, 3)
        alb = np.stack(
            [0.3 + ramp * Xw[..., 0], np.full((h, w), 0.4), 0.5 - 0.2 * ramp * Xw[..., 0]],
            axis=-1,
        )
        alb = np.clip(alb, 0.05, 0.9)
        n_cam = np.tile([0.0, 0.0, -1.0], (h, w, 1)) @ cam.rotation.T
        L_cam = rotate_lighting(L_w, cam.rotation)
        sh = _shade(Image(n_cam, ColorSpace.SCALAR), L_cam)
        return {
            "image": Image(alb * sh.data),
            "albedo": Image(alb),
            "normals": Image(n_cam, ColorSpace.SCALAR),
            "lighting": L_cam,
            "camera": cam,
        }

    return {"a": render(cam_a), "b": render(cam_b), "world_lighting": L_w,
            "mask": Mask(np.ones((h, w), dtype=bool))}


def yaw_rotation(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def axis_rotation(axis, angle):
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    K = np.array(
        [[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]]
    )
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * (K @ K)
