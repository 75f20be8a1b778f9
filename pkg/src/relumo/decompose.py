"""Per-image inverse rendering by direct loss minimization.

A photograph is explained as i = s * albedo * (L b(n)) per pixel (shadow
times albedo times SH shading); the appearance loss is evaluated in
shadow-free space, sum_p || min(1, i/s) - albedo * L b(n) ||^2, and
minimized with first-order adaptive-moment gradient descent over
unconstrained parameters:

  * albedo: free per-pixel RGB
  * normals: two stereographic coordinates per pixel (always unit length)
  * shadow: logistic of a free map, clamped to [1e-3, 1]
  * lighting: the raw 3x9 matrix

All gradients are analytic; a residual map computed last makes the
reconstruction identity exact at every pixel.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imaging import (
    ColorSpace,
    Image,
    Mask,
    downscale_masked,
    lab_from_linear,
    lab_jacobian,
    load_image,
    load_mask,
    load_scalar_png,
    luminance,
    save_mask,
    save_pfm,
    save_png,
    srgb_decode,
    srgb_encode,
)
from .geometry import CameraView, CrossProjector, relative_rotation
from .shlight import (
    ShLighting,
    _sh_basis_unchecked,
    estimate_lighting,
    rotate_lighting,
    shade,
    sh_basis_gradient,
)

SHADOW_FLOOR = 1e-3
_LOGIT_CAP = 40.0  # sigmoid(40) rounds to exactly 1.0 in float64


class DivergenceError(RuntimeError):
    """Raised when the optimization loss turns non-finite."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


@dataclass
class OptimizerConfig:
    iterations: int = 2000
    step_size: float = 1e-2
    decay_every: int = 500
    decay_factor: float = 0.5
    w_appearance: float = 1.0
    w_albedo_consistency: float = 0.5
    w_cross_render: float = 0.5
    lambda_albedo: float = 0.0  # albedo smoothness
    lambda_shadow: float = 0.0  # shadow-toward-1 prior
    tolerance: float = 0.0  # stop when accepted loss stalls by less than this
    neighbor_refresh: int = 250
    fit_albedo: bool = True
    fit_normals: bool = True
    fit_shadow: bool = True
    fit_lighting: bool = True

    def __post_init__(self):
        weights = (
            self.w_appearance,
            self.w_albedo_consistency,
            self.w_cross_render,
            self.lambda_albedo,
            self.lambda_shadow,
        )
        if any(w < 0 for w in weights):
            raise ValueError("loss weights must be nonnegative")
        if self.iterations < 0 or self.step_size <= 0:
            raise ValueError("bad optimizer schedule")


@dataclass(frozen=True)
class Decomposition:
    """Albedo, normals, shadow, lighting and residual for one image."""

    albedo: Image
    normals: Image
    shadow: Image
    lighting: ShLighting
    residual: Image
    mask: Mask
    trace: tuple = ()

    def reconstruct(self) -> Image:
        """s * albedo * shading + residual; equals the input bit-exactly."""
        shading = shade(self.normals, self.lighting)
        data = (
            self.shadow.data * self.albedo.data * shading.data + self.residual.data
        )
        return Image(data, ColorSpace.LINEAR_RGB)


@dataclass
class DecomposeInit:
    camera: CameraView | None = None
    normals: Image | None = None
    lighting: ShLighting | None = None
    albedo: Image | None = None
    shadow: Image | None = None


# ---------------------------------------------------------------------------
# Stereographic normal parameterization (pole at the away-facing +z)


def stereo_to_normals(uv: np.ndarray) -> np.ndarray:
    u, v = uv[..., 0], uv[..., 1]
    d = 1.0 + u * u + v * v
    return np.stack([2 * u / d, 2 * v / d, (u * u + v * v - 1.0) / d], axis=-1)


def normals_to_stereo(n: np.ndarray) -> np.ndarray:
    denom = np.maximum(1.0 - n[..., 2], 1e-9)
    return np.stack([n[..., 0] / denom, n[..., 1] / denom], axis=-1)


def stereo_jacobian(uv: np.ndarray) -> np.ndarray:
    """dn/d(u,v) as (..., 3, 2)."""
    u, v = uv[..., 0], uv[..., 1]
    d2 = (1.0 + u * u + v * v) ** 2
    dndu = np.stack([2 * (1 - u * u + v * v), -4 * u * v, 4 * u], axis=-1) / d2[..., None]
    dndv = np.stack([-4 * u * v, 2 * (1 + u * u - v * v), 4 * v], axis=-1) / d2[..., None]
    return np.stack([dndu, dndv], axis=-1)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _logit(s):
    s = np.clip(s, 1e-12, 1.0 - 1e-16)
    return np.clip(np.log(s) - np.log1p(-s), -_LOGIT_CAP, _LOGIT_CAP)


def _shadow_from_logit(us):
    return np.clip(_sigmoid(us), SHADOW_FLOOR, 1.0)


# ---------------------------------------------------------------------------
# Appearance loss (Eq. of the shadow-free self-supervision)


def _appearance_terms(i_data, mask_f, A, n, s, L):
    """Loss and gradients w.r.t. albedo A, normals n, shadow s, lighting L.

    s must already be clamped away from zero. Gradients carry the mask.
    """
    B = _sh_basis_unchecked(n)  # (h, w, 9)
    shading = B @ L.T  # (h, w, 3)
    model = A * shading
    ratio = i_data / s[..., None]
    t = np.minimum(1.0, ratio)
    r = (t - model) * mask_f[..., None]
    loss = float((r * r).sum())

    dA = -2.0 * r * shading
    rA = r * A
    dL = -2.0 * np.einsum("hwc,hwq->cq", rA, B)
    T = np.einsum("hwc,cq->hwq", -2.0 * rA, L)
    G = sh_basis_gradient(n)  # (h, w, 3, 9)
    dn = np.einsum("hwq,hwkq->hwk", T, G)
    gate = ratio < 1.0
    ds = (2.0 * r * (-i_data / (s * s)[..., None]) * gate).sum(axis=-1)
    return loss, dA, dn, ds, dL


def appearance_loss(img: Image, d: Decomposition):
    """Shadow-free appearance loss over the decomposition's mask.

    Returns (loss, gradients) with gradients w.r.t. the albedo map, the
    stereographic normal coordinates, the shadow map and the lighting
    matrix, keyed "albedo", "normal_uv", "shadow", "lighting".
    """
    if not d.mask.values.any():
        raise ValueError("empty mask")
    if (img.height, img.width) != (d.albedo.height, d.albedo.width):
        raise ValueError("image and decomposition dimensions differ")
    mask_f = d.mask.values.astype(np.float64)
    uv = normals_to_stereo(d.normals.data)
    n = stereo_to_normals(uv)
    s = np.clip(d.shadow.data[..., 0], SHADOW_FLOOR, 1.0)
    loss, dA, dn, ds, dL = _appearance_terms(
        img.data, mask_f, d.albedo.data, n, s, d.lighting.coeffs
    )
    J = stereo_jacobian(uv)
    duv = np.einsum("hwk,hwkj->hwj", dn, J)
    return loss, {"albedo": dA, "normal_uv": duv, "shadow": ds, "lighting": dL}


# ---------------------------------------------------------------------------
# Regularizers


def _smoothness_terms(A, mask):
    """Squared-difference smoothness over in-mask neighbor pairs."""
    loss = 0.0
    grad = np.zeros_like(A)
    pair_h = mask[:, 1:] & mask[:, :-1]
    dh = (A[:, 1:] - A[:, :-1]) * pair_h[..., None]
    loss += float((dh * dh).sum())
    grad[:, 1:] += 2.0 * dh
    grad[:, :-1] -= 2.0 * dh
    pair_v = mask[1:, :] & mask[:-1, :]
    dv = (A[1:, :] - A[:-1, :]) * pair_v[..., None]
    loss += float((dv * dv).sum())
    grad[1:, :] += 2.0 * dv
    grad[:-1, :] -= 2.0 * dv
    return loss, grad


def _shadow_prior_terms(s, mask_f):
    d = (1.0 - s) * mask_f
    return float((d * d).sum()), -2.0 * d


# ---------------------------------------------------------------------------
# Multi-view losses


def _lab_sq_distance_grad(render_lin, target_lab, valid, count):
    """Mean squared LAB distance over `valid` pixels and its gradient
    w.r.t. the linear-RGB render."""
    lab = lab_from_linear(render_lin)
    delta = (lab - target_lab) * valid[..., None]
    loss = float((delta * delta).sum()) / count
    J = lab_jacobian(render_lin)  # (..., 3, 3): d(lab_i)/d(rgb_j)
    grad = 2.0 / count * np.einsum("...i,...ij->...j", delta, J)
    return loss, grad


def cross_render_loss(
    d_a: Decomposition,
    view_b_img: Image,
    L_b: ShLighting,
    R_ab: np.ndarray,
    projector: CrossProjector,
    shadow_b: Image | None = None,
) -> float:
    """Compare view a relit with view b's (rotated) lighting against the
    shadow-free cross-projection of view b, in LAB after a factor-4
    downscale, over co-visible pixels."""
    warped, vis = projector.warp(view_b_img)
    target = warped.data
    if shadow_b is not None:
        ws, _ = projector.warp(shadow_b)
        target = target / np.clip(ws.data, SHADOW_FLOOR, 1.0)
    target = np.minimum(1.0, target)
    covis = Mask(vis.values & d_a.mask.values)
    if not covis.values.any():
        raise ValueError("no co-visible pixels")
    L_ab = rotate_lighting(L_b, R_ab)
    render = d_a.albedo.data * shade(d_a.normals, L_ab).data
    render_ds, m_ds = downscale_masked(Image(render), covis, 4)
    target_ds, _ = downscale_masked(Image(target), covis, 4)
    if not m_ds.values.any():
        raise ValueError("no co-visible pixels after downscale")
    count = m_ds.count
    dl = lab_from_linear(render_ds.data) - lab_from_linear(target_ds.data)
    dl = dl * m_ds.values[..., None]
    return float((dl * dl).sum()) / count


def albedo_consistency_loss(
    d_a: Decomposition, d_b: Decomposition, projector: CrossProjector
) -> float:
    """Mean squared LAB distance between view a's albedo and the warped
    albedo of view b over co-visible pixels."""
    warped, vis = projector.warp(d_b.albedo)
    wmask, _ = projector.warp(Image(d_b.mask.values.astype(np.float64)[..., None], ColorSpace.SCALAR))
    covis = vis.values & d_a.mask.values & (wmask.data[..., 0] > 0.999)
    if not covis.any():
        raise ValueError("no co-visible pixels")
    dl = lab_from_linear(d_a.albedo.data) - lab_from_linear(warped.data)
    dl = dl * covis[..., None]
    return float((dl * dl).sum()) / int(covis.sum())


class _NeighborContext:
    """Fixed warp of one neighbor into the reference view, plus its
    periodically refreshed lighting estimate."""

    def __init__(self, img_b: Image, cam_b: CameraView, cam_a: CameraView, mask_a: Mask):
        self.projector = CrossProjector(cam_b, cam_a)
        warped, vis = self.projector.warp(img_b)
        self.covis = Mask(vis.values & mask_a.values)
        if not self.covis.values.any():
            raise ValueError("neighbor view has no co-visible pixels")
        self.target = np.minimum(1.0, warped.data)
        self.R_ab = relative_rotation(cam_a, cam_b)
        self.L_ab = None  # estimated against current albedo/normals
        self.target_lab_ds = None
        self.albedo_target_lab = None

    def refresh(self, albedo, normals, mask):
        covis = self.covis
        try:
            # min-norm solve: planar patches make the normal system deficient
            self.L_ab = estimate_lighting(
                Image(self.target), Image(albedo), Image(normals, ColorSpace.SCALAR),
                None, covis, cond_limit=None,
            )
        except ValueError:
            self.L_ab = None
            return
        target_ds, _ = downscale_masked(Image(self.target), covis, 4)
        self.target_lab_ds = lab_from_linear(target_ds.data)
        shading = np.maximum(_sh_basis_unchecked(normals) @ self.L_ab.coeffs.T, 0.0)
        pseudo = np.clip(self.target / np.maximum(shading, 0.05), 0.0, 1.0)
        self.albedo_target_lab = lab_from_linear(pseudo)


# ---------------------------------------------------------------------------
# Initialization


def normals_from_depth(cam: CameraView) -> Image:
    """Surface normals from depth-map gradients, oriented toward the camera;
    invalid-depth pixels get the camera-facing default (0, 0, -1)."""
    pts, valid = cam.unproject()
    dpdv = np.gradient(pts, axis=0)
    dpdu = np.gradient(pts, axis=1)
    n = np.cross(dpdv, dpdu)
    toward = (n * pts).sum(axis=-1)
    n = np.where(toward[..., None] > 0, -n, n)
    norms = np.linalg.norm(n, axis=-1, keepdims=True)
    ok = valid & (norms[..., 0] > 1e-12)
    n = np.where(ok[..., None], n / np.maximum(norms, 1e-300), [0.0, 0.0, -1.0])
    return Image(n, ColorSpace.SCALAR)


def _default_init(img: Image, mask: Mask, init: DecomposeInit):
    h, w = img.height, img.width
    if init.normals is not None:
        n0 = init.normals.data
    elif init.camera is not None and init.camera.depth is not None:
        n0 = normals_from_depth(init.camera).data
    else:
        n0 = np.tile([0.0, 0.0, -1.0], (h, w, 1))
    normals = Image(n0, ColorSpace.SCALAR)

    if init.lighting is not None:
        L0 = init.lighting
    else:
        gray = Image(np.full((h, w, 3), 0.5))
        try:
            L0 = estimate_lighting(img, gray, normals, None, mask, cond_limit=1e8)
        except ValueError:
            # constant-normal init has no angular information: ambient fit
            coeffs = np.zeros((3, 9))
            coeffs[:, 0] = img.data[mask.values].mean(axis=0) / 0.5
            L0 = ShLighting(coeffs)

    if init.albedo is not None:
        a0 = init.albedo.data
    else:
        shading = shade(normals, L0).data
        a0 = np.clip(img.data / np.maximum(shading, 0.05), 0.0, 1.0)

    if init.shadow is not None:
        us0 = _logit(np.clip(init.shadow.data[..., 0], SHADOW_FLOOR, 1.0))
    else:
        # nominally shadow-free; 0.995 keeps the logistic responsive where
        # exact 1.0 would freeze the channel
        us0 = np.full((h, w), _logit(np.array(0.995)))
    return np.array(a0), normals_to_stereo(n0), us0, np.array(L0.coeffs)


# ---------------------------------------------------------------------------
# The optimizer


def _objective(img_data, mask, cfg, contexts, A, UV, US, L):
    """Weighted total loss and gradients over the raw parameter arrays."""
    mask_f = mask.values.astype(np.float64)
    n = stereo_to_normals(UV)
    s_raw = _sigmoid(US)
    s = np.clip(s_raw, SHADOW_FLOOR, 1.0)
    loss, dA, dn, ds, dL = _appearance_terms(img_data, mask_f, A, n, s, L)
    pieces = [cfg.w_appearance * loss]
    dA = dA * cfg.w_appearance
    dn = dn * cfg.w_appearance
    ds = ds * cfg.w_appearance
    dL = dL * cfg.w_appearance

    if cfg.lambda_albedo > 0:
        l_sm, g_sm = _smoothness_terms(A, mask.values)
        pieces.append(cfg.lambda_albedo * l_sm)
        dA += cfg.lambda_albedo * g_sm
    if cfg.lambda_shadow > 0:
        l_sp, g_sp = _shadow_prior_terms(s, mask_f)
        pieces.append(cfg.lambda_shadow * l_sp)
        ds += cfg.lambda_shadow * g_sp

    for ctx in contexts:
        if ctx.L_ab is None:
            continue
        Lab_ = ctx.L_ab.coeffs
        B = _sh_basis_unchecked(n)
        raw_shading = B @ Lab_.T
        shading_ab = np.maximum(raw_shading, 0.0)
        act = raw_shading > 0.0
        if cfg.w_cross_render > 0:
            render = A * shading_ab
            r_img, m_ds = downscale_masked(Image(render), ctx.covis, 4)
            if m_ds.values.any():
                cnt = m_ds.count
                l_cr, g_ds = _lab_sq_distance_grad(
                    r_img.data, ctx.target_lab_ds, m_ds.values, cnt
                )
                pieces.append(cfg.w_cross_render * l_cr)
                g_px = _upsample_masked_grad(g_ds, ctx.covis.values, 4, render.shape)
                g_px *= cfg.w_cross_render
                dA += g_px * shading_ab
                w = g_px * A * act
                T = np.einsum("hwc,cq->hwq", w, Lab_)
                dn += np.einsum("hwq,hwkq->hwk", T, sh_basis_gradient(n))
        if cfg.w_albedo_consistency > 0 and ctx.albedo_target_lab is not None:
            cnt = ctx.covis.count
            l_ac, g_ac = _lab_sq_distance_grad(
                A, ctx.albedo_target_lab, ctx.covis.values, cnt
            )
            pieces.append(cfg.w_albedo_consistency * l_ac)
            dA += cfg.w_albedo_consistency * g_ac

    J = stereo_jacobian(UV)
    dUV = np.einsum("hwk,hwkj->hwj", dn, J)
    dsdus = np.where((s_raw > SHADOW_FLOOR) & (s_raw < 1.0), s_raw * (1 - s_raw), 0.0)
    dUS = ds * dsdus
    # fsum keeps the reported loss invariant to neighbor ordering
    return math.fsum(pieces), {"A": dA, "UV": dUV, "US": dUS, "L": dL}


def decompose(
    img: Image,
    mask: Mask,
    init: DecomposeInit | None = None,
    cfg: OptimizerConfig | None = None,
    neighbors=None,
) -> Decomposition:
    """Minimize the weighted loss and return the full decomposition.

    `neighbors` is an optional list of (Image, CameraView) overlapping
    views; the reference view's own camera (with depth) must then be given
    through `init.camera`. Inputs are expected in linear RGB with values
    nominally in [0, 1].
    """
    cfg = cfg or OptimizerConfig()
    init = init or DecomposeInit()
    if (mask.height, mask.width) != (img.height, img.width):
        raise ValueError("mask dimensions do not match the image")
    if not mask.values.any():
        raise ValueError("empty mask")
    if img.channels != 3 or img.space is not ColorSpace.LINEAR_RGB:
        raise ValueError("decompose expects a 3-channel linear-RGB image")

    A, UV, US, L = _default_init(img, mask, init)

    contexts = []
    if neighbors:
        if init.camera is None or init.camera.depth is None:
            raise ValueError("multi-view decomposition needs init.camera with depth")
        for img_b, cam_b in neighbors:
            contexts.append(_NeighborContext(img_b, cam_b, init.camera, mask))

    params = {"A": A, "UV": UV, "US": US, "L": L}
    live = {
        "A": cfg.fit_albedo,
        "UV": cfg.fit_normals,
        "US": cfg.fit_shadow,
        "L": cfg.fit_lighting,
    }
    m_state = {k: np.zeros_like(v) for k, v in params.items()}
    v_state = {k: np.zeros_like(v) for k, v in params.items()}
    beta1, beta2, eps = 0.9, 0.999, 1e-8

    for ctx in contexts:
        ctx.refresh(params["A"], stereo_to_normals(params["UV"]), mask)

    trace = []
    best_loss = np.inf
    best = {k: v.copy() for k, v in params.items()}
    last_best_iter = 0
    for it in range(cfg.iterations + 1):
        loss, grads = _objective(
            img.data, mask, cfg, contexts,
            params["A"], params["UV"], params["US"], params["L"],
        )
        if not np.isfinite(loss):
            raise DivergenceError(f"loss diverged at iteration {it}", trace)
        if loss < best_loss - 1e-300:
            if best_loss - loss > cfg.tolerance * max(best_loss, 1e-30):
                last_best_iter = it
            best_loss = loss
            best = {k: v.copy() for k, v in params.items()}
            trace.append((it, loss))
        if it == cfg.iterations:
            break
        if cfg.tolerance > 0 and it - last_best_iter > 200:
            break
        lr = cfg.step_size * cfg.decay_factor ** (it // max(cfg.decay_every, 1))
        tcount = it + 1
        for k in params:
            if not live[k]:
                continue
            g = grads[k]
            m_state[k] = beta1 * m_state[k] + (1 - beta1) * g
            v_state[k] = beta2 * v_state[k] + (1 - beta2) * g * g
            mh = m_state[k] / (1 - beta1**tcount)
            vh = v_state[k] / (1 - beta2**tcount)
            params[k] = params[k] - lr * mh / (np.sqrt(vh) + eps)
        if contexts and cfg.neighbor_refresh > 0 and (it + 1) % cfg.neighbor_refresh == 0:
            for ctx in contexts:
                ctx.refresh(params["A"], stereo_to_normals(params["UV"]), mask)

    A, UV, US, L = best["A"], best["UV"], best["US"], best["L"]
    normals = Image(stereo_to_normals(UV), ColorSpace.SCALAR)
    lighting = ShLighting(L)

    # fix the albedo/lighting scale: mean foreground shading luminance -> 1
    # (skipped when the caller pinned the lighting)
    if cfg.fit_lighting:
        shading = shade(normals, lighting)
        mlum = float(luminance(shading)[mask.values].mean())
        if mlum > 1e-9:
            lighting = lighting.scaled(1.0 / mlum)
            A = A * mlum
    albedo = Image(np.clip(A, 0.0, 1.0))
    shadow = Image(_shadow_from_logit(US)[..., None], ColorSpace.SCALAR)

    shading = shade(normals, lighting)
    recon = shadow.data * albedo.data * shading.data
    residual = Image(img.data - recon)
    return Decomposition(
        albedo=albedo,
        normals=normals,
        shadow=shadow,
        lighting=lighting,
        residual=residual,
        mask=mask,
        trace=tuple(trace),
    )


def _upsample_masked_grad(g_ds, covis, factor, full_shape):
    """Adjoint of the masked box downscale: spread each block gradient over
    its valid contributors."""
    h, w, c = full_shape
    hb = (h // factor) * factor
    wb = (w // factor) * factor
    m = covis[:hb, :wb].astype(np.float64)
    counts = m.reshape(hb // factor, factor, wb // factor, factor).sum(axis=(1, 3))
    scale = np.zeros_like(counts)
    nz = counts > 0
    scale[nz] = 1.0 / counts[nz]
    g = g_ds * scale[..., None]
    up = np.repeat(np.repeat(g, factor, axis=0), factor, axis=1)
    out = np.zeros(full_shape)
    out[:hb, :wb] = up * m[..., None]
    return out


# ---------------------------------------------------------------------------
# Persistence

_FILES = (
    "albedo.png",
    "normals.pfm",
    "shadow.png",
    "residual.pfm",
    "lighting.json",
    "mask.png",
    "manifest.json",
)


def save_decomposition(d: Decomposition, outdir, manifest: dict | None = None):
    """Write the seven-file decomposition directory.

    The residual on disk is recomputed against the quantized albedo/shadow
    and float32 normals so that reconstruction from disk reproduces the
    source image to float32 rounding.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    save_png(d.albedo, outdir / "albedo.png", bits=16)
    n_store = (d.normals.data * np.array([1.0, 1.0, -1.0])).astype(np.float32)
    save_pfm(Image(n_store, ColorSpace.SCALAR), outdir / "normals.pfm")
    save_png(d.shadow, outdir / "shadow.png", bits=16)
    save_mask(d.mask, outdir / "mask.png")
    (outdir / "lighting.json").write_text(d.lighting.to_json())

    a_q = srgb_decode(np.round(srgb_encode(d.albedo.data) * 65535.0) / 65535.0)
    s_q = np.round(np.clip(d.shadow.data, 0.0, 1.0) * 65535.0) / 65535.0
    n_q = n_store.astype(np.float64) * np.array([1.0, 1.0, -1.0])
    shading = shade(Image(n_q, ColorSpace.SCALAR), d.lighting)
    source = d.reconstruct()
    resid = (source.data - s_q * a_q * shading.data).astype(np.float32)
    save_pfm(Image(resid, ColorSpace.LINEAR_RGB), outdir / "residual.pfm")

    doc = {"final_loss": d.trace[-1][1] if d.trace else None,
           "loss_trace": [[int(i), float(l)] for i, l in d.trace]}
    if manifest:
        doc.update(manifest)
    (outdir / "manifest.json").write_text(json.dumps(doc, indent=1, sort_keys=True))


def load_decomposition(path) -> Decomposition:
    path = Path(path)
    missing = [name for name in _FILES if not (path / name).is_file()]
    if missing:
        raise FileNotFoundError(
            f"decomposition directory {path} is missing {', '.join(missing)}"
        )
    albedo = load_image(path / "albedo.png")
    n_store = load_image(path / "normals.pfm")
    normals = Image(n_store.data * np.array([1.0, 1.0, -1.0]), ColorSpace.SCALAR)
    shadow = load_scalar_png(path / "shadow.png")
    residual = load_image(path / "residual.pfm")
    mask = load_mask(path / "mask.png")
    lighting = ShLighting.from_json((path / "lighting.json").read_text())
    trace = ()
    mf = path / "manifest.json"
    if mf.is_file():
        doc = json.loads(mf.read_text())
        trace = tuple((int(i), float(l)) for i, l in doc.get("loss_trace", []))
    return Decomposition(albedo, normals, shadow, lighting, residual, mask, trace)
