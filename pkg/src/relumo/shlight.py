"""Order-2 spherical-harmonics illumination.

Lighting is a 3x9 coefficient matrix L (rows R,G,B) over the unnormalized
polynomial basis

    b(n) = [1, y, z, x, xy, yz, 3z^2 - 1, xz, x^2 - y^2]

with all normalization constants absorbed into L, so diffuse shading is
simply L @ b(n) per pixel.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .imaging import ColorSpace, Image, Mask

SH_DIM = 9
SH_CONVENTION = "poly-v1"

LUMA_WEIGHTS = np.array([0.2126, 0.7152, 0.0722])

# basis column index of each linear monomial
_COL_Y, _COL_Z, _COL_X = 1, 2, 3


def sh_basis(n: np.ndarray) -> np.ndarray:
    """Evaluate the 9 basis polynomials for unit normals of shape (..., 3)."""
    n = np.asarray(n, dtype=np.float64)
    norms = np.linalg.norm(n, axis=-1)
    if not np.allclose(norms, 1.0, atol=1e-6):
        worst = float(np.abs(norms - 1.0).max())
        raise ValueError(f"sh_basis requires unit normals (max |norm-1| = {worst:.2e})")
    return _sh_basis_unchecked(n)


def _sh_basis_unchecked(n: np.ndarray) -> np.ndarray:
    x, y, z = n[..., 0], n[..., 1], n[..., 2]
    return np.stack(
        [np.ones_like(x), y, z, x, x * y, y * z, 3 * z * z - 1, x * z, x * x - y * y],
        axis=-1,
    )


def sh_basis_gradient(n: np.ndarray) -> np.ndarray:
    """db/dn as an (..., 3, 9) array (rows: d/dx, d/dy, d/dz)."""
    n = np.asarray(n, dtype=np.float64)
    x, y, z = n[..., 0], n[..., 1], n[..., 2]
    zero = np.zeros_like(x)
    one = np.ones_like(x)
    ddx = np.stack([zero, zero, zero, one, y, zero, zero, z, 2 * x], axis=-1)
    ddy = np.stack([zero, one, zero, zero, x, z, zero, zero, -2 * y], axis=-1)
    ddz = np.stack([zero, zero, one, zero, zero, y, 6 * z, x, zero], axis=-1)
    return np.stack([ddx, ddy, ddz], axis=-2)


def fibonacci_directions(count: int) -> np.ndarray:
    """Deterministic, well-spread unit directions (spherical Fibonacci lattice)."""
    i = np.arange(count, dtype=np.float64) + 0.5
    z = 1.0 - 2.0 * i / count
    phi = np.pi * (1.0 + np.sqrt(5.0)) * i
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)


def _check_rotation(R: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3):
        raise ValueError(f"rotation must be 3x3, got {R.shape}")
    if np.abs(R @ R.T - np.eye(3)).max() > tol or np.linalg.det(R) < 0:
        raise ValueError("matrix is not a proper rotation")
    return R


@dataclass(frozen=True)
class ShLighting:
    """3x9 lighting coefficients in linear radiance units."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=np.float64, copy=True)
        if c.shape != (3, SH_DIM):
            raise ValueError(f"lighting coefficients must be 3x9, got {c.shape}")
        if not np.isfinite(c).all():
            raise ValueError("lighting coefficients must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls) -> "ShLighting":
        return cls(np.zeros((3, SH_DIM)))

    @classmethod
    def from_flat(cls, flat) -> "ShLighting":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (27,):
            raise ValueError(f"flat lighting must have 27 entries, got {flat.shape}")
        return cls(flat.reshape(3, SH_DIM))

    def to_flat(self) -> np.ndarray:
        return self.coeffs.reshape(27).copy()

    def to_json(self) -> str:
        return json.dumps({"sh": self.to_flat().tolist(), "convention": SH_CONVENTION})

    @classmethod
    def from_json(cls, text: str) -> "ShLighting":
        doc = json.loads(text)
        conv = doc.get("convention", SH_CONVENTION)
        if conv != SH_CONVENTION:
            raise ValueError(f"unknown lighting convention {conv!r}")
        return cls.from_flat(doc["sh"])

    def scaled(self, factor: float) -> "ShLighting":
        return ShLighting(self.coeffs * factor)


@dataclass(frozen=True)
class ShSubspace:
    """Affine statistical subspace of flattened 27-vector lightings."""

    mean: np.ndarray
    basis: np.ndarray  # 27 x k, orthonormal columns
    explained: np.ndarray = field(default=None)

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64).reshape(27)
        basis = np.asarray(self.basis, dtype=np.float64)
        if basis.ndim != 2 or basis.shape[0] != 27 or basis.shape[1] > 27:
            raise ValueError(f"subspace basis must be 27 x k, got {basis.shape}")
        gram = basis.T @ basis
        if np.abs(gram - np.eye(basis.shape[1])).max() > 1e-8:
            raise ValueError("subspace basis columns must be orthonormal")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "basis", basis)
        if self.explained is None:
            object.__setattr__(self, "explained", np.zeros(basis.shape[1]))

    @property
    def k(self) -> int:
        return self.basis.shape[1]

    def project(self, lighting: ShLighting) -> ShLighting:
        w = self.basis.T @ (lighting.to_flat() - self.mean)
        return ShLighting.from_flat(self.mean + self.basis @ w)

    @classmethod
    def identity(cls) -> "ShSubspace":
        return cls(np.zeros(27), np.eye(27))


@dataclass(frozen=True)
class EnvMap:
    """Equirectangular HDR radiance map plus alignment to a reference camera.

    Texel (row v, col u) looks along direction
        d = (sin(theta) cos(phi), cos(theta), sin(theta) sin(phi))
    with theta = pi (v + .5) / h (polar angle from +y) and
    phi = 2 pi (u + .5) / w. `alignment` takes env-frame directions into the
    reference camera frame.
    """

    radiance: Image
    alignment: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        if self.radiance.channels != 3:
            raise ValueError("environment map must have 3 channels")
        if self.radiance.width != 2 * self.radiance.height:
            raise ValueError(
                "equirectangular map needs width = 2 x height, got "
                f"{self.radiance.width} x {self.radiance.height}"
            )
        A = _check_rotation(self.alignment)
        A = A.copy()
        A.setflags(write=False)
        object.__setattr__(self, "alignment", A)


def envmap_directions(height: int, width: int) -> np.ndarray:
    """(h, w, 3) unit direction of every texel centre."""
    theta = np.pi * (np.arange(height) + 0.5) / height
    phi = 2 * np.pi * (np.arange(width) + 0.5) / width
    st, ct = np.sin(theta), np.cos(theta)
    cp, sp = np.cos(phi), np.sin(phi)
    d = np.empty((height, width, 3))
    d[..., 0] = st[:, None] * cp[None, :]
    d[..., 1] = ct[:, None] * np.ones_like(cp)[None, :]
    d[..., 2] = st[:, None] * sp[None, :]
    return d


def _envmap_solid_angles(height: int, width: int) -> np.ndarray:
    theta = np.pi * (np.arange(height) + 0.5) / height
    return np.sin(theta) * (np.pi / height) * (2 * np.pi / width)


# ---------------------------------------------------------------------------
# Shading and estimation


def shade(normals: Image, lighting: ShLighting, mask: Mask | None = None) -> Image:
    """Per-pixel diffuse shading L @ b(n), clamped at zero from below.

    Pixels outside the mask shade to zero; masked pixels must hold unit
    normals.
    """
    if normals.channels != 3:
        raise ValueError("normals image must have 3 channels")
    n = normals.data
    if mask is not None:
        if (mask.height, mask.width) != (normals.height, normals.width):
            raise ValueError("mask dimensions do not match the normal map")
        m = mask.values
    else:
        m = np.ones(n.shape[:2], dtype=bool)
    norms = np.linalg.norm(n[m], axis=-1)
    if m.any() and not np.allclose(norms, 1.0, atol=1e-4):
        raise ValueError("normals must be unit length at foreground pixels")
    b = _sh_basis_unchecked(n)
    s = np.maximum(b @ lighting.coeffs.T, 0.0)
    s[~m] = 0.0
    return Image(s, ColorSpace.LINEAR_RGB)


def estimate_lighting(
    img: Image,
    albedo: Image,
    normals: Image,
    shadow: Image | None,
    mask: Mask,
    subspace: ShSubspace | None = None,
    cond_limit: float | None = 1e12,
) -> ShLighting:
    """Least-squares lighting over foreground pixels, in shadow-free space.

    Minimizes sum_p || min(1, i/s) - albedo * L b(n) ||^2. With a subspace
    the solution is hard-constrained to mean + basis @ w. A too-degenerate
    normal spread raises (reporting the condition number) unless
    cond_limit=None, which accepts the minimum-norm solution.
    """
    shapes = {(x.height, x.width) for x in (img, albedo, normals)}
    shapes.add((mask.height, mask.width))
    if len(shapes) != 1:
        raise ValueError("image, albedo, normals and mask dimensions differ")
    m = mask.values
    npix = int(m.sum())
    if npix == 0:
        raise ValueError("empty mask")
    if npix < SH_DIM:
        raise ValueError(f"need >= {SH_DIM} foreground pixels, got {npix}")

    i = img.data[m]
    a = albedo.data[m]
    if shadow is not None:
        s = np.clip(shadow.data[m], 1e-3, 1.0)
        target = np.minimum(1.0, i / s)
    else:
        target = i
    b = sh_basis(normals.data[m])  # (N, 9)

    if cond_limit is not None:
        cond = np.linalg.cond(b)
        if not np.isfinite(cond) or cond > cond_limit:
            raise ValueError(
                f"rank-deficient normal system (condition number {cond:.3e}); "
                "foreground normals are too degenerate"
            )

    if subspace is None:
        L = np.empty((3, SH_DIM))
        for c in range(3):
            A = a[:, c : c + 1] * b
            L[c], *_ = np.linalg.lstsq(A, target[:, c], rcond=None)
        return ShLighting(L)

    # stacked 3N x 27 design, channel blocks in R,G,B order
    N = b.shape[0]
    G = np.zeros((3 * N, 27))
    y = np.empty(3 * N)
    for c in range(3):
        G[c * N : (c + 1) * N, c * SH_DIM : (c + 1) * SH_DIM] = a[:, c : c + 1] * b
        y[c * N : (c + 1) * N] = target[:, c]
    GV = G @ subspace.basis
    w, *_ = np.linalg.lstsq(GV, y - G @ subspace.mean, rcond=None)
    return ShLighting.from_flat(subspace.mean + subspace.basis @ w)


# ---------------------------------------------------------------------------
# Rotation

_ROTATION_SAMPLES = fibonacci_directions(64)


def lighting_rotation_matrix(R: np.ndarray) -> np.ndarray:
    """9x9 operator M with M^T b(n) = b(R^-1 n) for every unit n.

    Built numerically by least squares over well-spread sample normals;
    exact for this polynomial basis since each band is rotation-closed.
    Satisfies M(R1 R2) = M(R1) M(R2).
    """
    R = _check_rotation(R)
    B = sh_basis(_ROTATION_SAMPLES)  # (K, 9)
    B_rot = sh_basis(_ROTATION_SAMPLES @ R)  # b(R^-1 n) row-wise
    # solve B X = B_rot, i.e. X^T b(n_i) = b(R^-1 n_i), so M = X
    X, *_ = np.linalg.lstsq(B, B_rot, rcond=None)
    return X


def rotate_lighting(lighting: ShLighting, R: np.ndarray) -> ShLighting:
    """Lighting L' with L' b(n) = L b(R^-1 n): the same light field expressed
    in a frame rotated by R."""
    M = lighting_rotation_matrix(R)
    return ShLighting(lighting.coeffs @ M.T)


def rotate_envmap(env: EnvMap, R: np.ndarray) -> EnvMap:
    """Resample so output(theta, phi) = input(R^-1 dir(theta, phi)), bilinear."""
    R = _check_rotation(R)
    h, w = env.radiance.height, env.radiance.width
    d = envmap_directions(h, w).reshape(-1, 3) @ R  # rows R^-1 d
    theta = np.arccos(np.clip(d[:, 1], -1.0, 1.0))
    phi = np.mod(np.arctan2(d[:, 2], d[:, 0]), 2 * np.pi)
    vf = theta / np.pi * h - 0.5
    uf = phi / (2 * np.pi) * w - 0.5
    out = _bilinear_wrap(env.radiance.data, uf, vf).reshape(h, w, 3)
    alignment = env.alignment @ R.T
    return EnvMap(Image(out, env.radiance.space), alignment)


def _bilinear_wrap(data: np.ndarray, uf: np.ndarray, vf: np.ndarray) -> np.ndarray:
    """Bilinear sample with horizontal wrap and vertical clamp (pole rows)."""
    h, w = data.shape[:2]
    u0 = np.floor(uf).astype(int)
    v0 = np.floor(vf).astype(int)
    du = (uf - u0)[:, None]
    dv = (vf - v0)[:, None]
    u0w, u1w = u0 % w, (u0 + 1) % w
    v0c = np.clip(v0, 0, h - 1)
    v1c = np.clip(v0 + 1, 0, h - 1)
    top = data[v0c, u0w] * (1 - du) + data[v0c, u1w] * du
    bot = data[v1c, u0w] * (1 - du) + data[v1c, u1w] * du
    return top * (1 - dv) + bot * dv


# ---------------------------------------------------------------------------
# Environment-map fitting

_FIT_SAMPLES = 2048


def fit_envmap_lighting(env: EnvMap, samples: int = _FIT_SAMPLES) -> ShLighting:
    """Fit L so that L b(n) approximates the clamped-cosine irradiance of the
    environment, by least squares over uniformly sampled normals.

    Irradiance is a direct sum over texels with solid-angle weights
    sin(theta) dtheta dphi.
    """
    rad = env.radiance.data
    if not np.isfinite(rad).all() or rad.min() < 0:
        raise ValueError("environment radiance must be finite and nonnegative")
    h, w = env.radiance.height, env.radiance.width
    if samples < SH_DIM:
        raise ValueError("need at least 9 sample normals")
    dirs = envmap_directions(h, w).reshape(-1, 3)
    weights = np.repeat(_envmap_solid_angles(h, w), w)
    weighted = rad.reshape(-1, 3) * weights[:, None]

    normals = fibonacci_directions(samples)
    cosines = np.maximum(normals @ dirs.T, 0.0)  # (S, T)
    irradiance = cosines @ weighted  # (S, 3)

    B = sh_basis(normals)
    L, *_ = np.linalg.lstsq(B, irradiance, rcond=None)
    return ShLighting(L.T)


def directional_lighting(
    direction,
    intensity: float = 1.0,
    color=(1.0, 1.0, 1.0),
    ambient: float = 0.0,
) -> ShLighting:
    """Closed-form least-squares projection of a clamped-cosine directional
    light (plus a flat ambient term) onto the basis.

    `direction` points toward the light. The sphere-uniform LSQ fit of
    max(0, n.d) is 1/4 + (n.d)/2 + 5/32 (3(n.d)^2 - 1).
    """
    d = np.asarray(direction, dtype=np.float64)
    nrm = np.linalg.norm(d)
    if nrm < 1e-12:
        raise ValueError("light direction must be nonzero")
    d = d / nrm
    dx, dy, dz = d
    row = np.zeros(SH_DIM)
    row[0] = 0.25
    row[_COL_Y], row[_COL_Z], row[_COL_X] = 0.5 * dy, 0.5 * dz, 0.5 * dx
    # 5/32 (3 t^2 - 1) expanded over the quadratic basis columns
    row[4] = 15.0 / 16.0 * dx * dy
    row[5] = 15.0 / 16.0 * dy * dz
    row[6] = 5.0 / 64.0 * (3 * dz * dz - 1.0)
    row[7] = 15.0 / 16.0 * dx * dz
    row[8] = 15.0 / 64.0 * (dx * dx - dy * dy)
    coeffs = np.outer(np.asarray(color, dtype=np.float64) * intensity, row)
    coeffs[:, 0] += ambient
    return ShLighting(coeffs)


def dominant_light_direction(lighting: ShLighting) -> np.ndarray:
    """Luminance-weighted direction of the linear band, normalized."""
    L = lighting.coeffs
    v = LUMA_WEIGHTS @ L[:, [_COL_X, _COL_Y, _COL_Z]]
    nrm = np.linalg.norm(v)
    scale = max(np.abs(L).max(), 1.0)
    if nrm <= 1e-12 * scale:
        raise ValueError("no directional component in lighting")
    return v / nrm


# ---------------------------------------------------------------------------
# Statistical subspace


def build_subspace(samples, k: int) -> ShSubspace:
    """Mean + top-k principal directions of flattened lighting samples."""
    flats = np.stack([s.to_flat() for s in samples])
    if k > flats.shape[0]:
        raise ValueError(f"k={k} exceeds sample count {flats.shape[0]}")
    if k > 27:
        raise ValueError("k cannot exceed 27")
    mean = flats.mean(axis=0)
    centered = flats - mean
    _, sing, vt = np.linalg.svd(centered, full_matrices=False)
    variances = sing**2 / max(flats.shape[0] - 1, 1)
    # variances at float-noise level (identical samples) count as zero
    cutoff = (np.finfo(float).eps * max(1.0, np.abs(flats).max()) * max(flats.shape)) ** 2
    variances = np.where(variances > cutoff, variances, 0.0)
    total = variances.sum()
    basis = vt[:k].T
    explained = variances[:k] / total if total > 0 else np.zeros(k)
    return ShSubspace(mean, basis, explained)
