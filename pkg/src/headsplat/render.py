"""Differentiable CPU splatting.

Two stages, matching the scheduler contract: ``preprocess`` projects world
Gaussians into screen-space splats, ``rasterize`` composites them front to
back. Projection is vectorized numpy; compositing and its adjoint are
compiled per-splat scatter kernels that release the GIL, so batch items
parallelize across worker threads.

Conventions (shared with the scalar reference oracle in the tests):
  * pixel (row r, col c) has center (c + 0.5, r + 0.5),
  * a splat touches a pixel iff |dx| <= radius and |dy| <= radius and its
    alpha there is at least 1/255; everything else contributes exactly zero,
  * splats are composited in ascending depth, ties broken by input index,
  * the background enters as C += T_final * background.

Once a pixel's transmittance drops below TERMINATION_EPS the remaining
(strictly farther) splats are skipped there; their combined contribution is
bounded by the transmittance itself, i.e. below 1e-14. The forward pass
records where each pixel stopped so the backward pass walks exactly the same
pairs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .gaussians import GaussianGrad, GaussianSet
from .quatmath import quat_to_matrix, quat_to_matrix_backward

NEAR_PLANE = 0.01
MIN_RADIUS = 0.3
ALPHA_CUTOFF = 1.0 / 255.0
TERMINATION_EPS = 1e-14


@dataclass
class Camera:
    """Pinhole camera with a world-to-camera rigid transform."""

    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray     # (3, 3) world-to-camera
    translation: np.ndarray  # (3,)
    width: int
    height: int

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.translation = np.asarray(self.translation, dtype=np.float64)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if np.max(np.abs(self.rotation @ self.rotation.T - np.eye(3))) > 1e-9:
            raise ValueError("camera rotation is not orthonormal")

    def to_dict(self) -> dict:
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "rotation": self.rotation.tolist(), "translation": self.translation.tolist(),
            "width": self.width, "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        return cls(d["fx"], d["fy"], d["cx"], d["cy"],
                   np.asarray(d["rotation"]), np.asarray(d["translation"]),
                   int(d["width"]), int(d["height"]))

    @classmethod
    def frontal(cls, image_size: int, distance: float = 3.2, focal_factor: float = 1.2,
                yaw: float = 0.0) -> "Camera":
        """Camera on a y-axis orbit of the origin, looking at it."""
        c, s = np.cos(yaw), np.sin(yaw)
        orbit = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
        rot = orbit.T
        translation = np.array([0.0, 0.0, distance])
        f = focal_factor * image_size
        return cls(f, f, image_size / 2.0, image_size / 2.0, rot, translation,
                   image_size, image_size)


@dataclass
class ProjectedSplats:
    """Screen-space splats for one (GaussianSet, Camera) pair.

    Arrays are aligned and ordered by original Gaussian index over the kept
    (un-culled) subset; ``index`` maps back into the input set.
    """

    index: np.ndarray     # (M,) indices into the source GaussianSet
    mean2d: np.ndarray    # (M, 2) pixels
    conic: np.ndarray     # (M, 3) packed inverse 2D covariance (a, b, c)
    depth: np.ndarray     # (M,) camera-space z
    color: np.ndarray     # (M, 3)
    opacity: np.ndarray   # (M,)
    radius: np.ndarray    # (M,) pixels, 3-sigma bound
    source_count: int
    # retained for the backward pass
    x_cam: np.ndarray = field(repr=False, default=None)
    cov_cam: np.ndarray = field(repr=False, default=None)
    world: GaussianSet = field(repr=False, default=None)
    camera: Camera = field(repr=False, default=None)
    sort_order: np.ndarray = field(repr=False, default=None)

    def __len__(self) -> int:
        return self.index.shape[0]


@dataclass
class RenderAux:
    """Forward-pass byproducts needed for color estimation and backward.

    ``max_weight`` is each source Gaussian's largest per-pixel blend weight
    alpha * G * T; ``transmittance`` is the per-pixel final T; ``stop`` is the
    per-pixel count of depth-sorted splats processed before the transmittance
    cutoff. The splats reference lets consumers re-derive the full per-pixel
    weight tables.
    """

    transmittance: np.ndarray   # (H, W)
    max_weight: np.ndarray      # (source_count,)
    splats: ProjectedSplats
    background: np.ndarray      # (3,)
    stop: np.ndarray = None     # (H, W) int64


@njit(cache=True, nogil=True)
def _project_kernel(position, rotation, scale, rc, tc, fx, fy, cx, cy,
                    x_cam, cov_cam, mean2d, conic, radius, valid):
    n = position.shape[0]
    for i in range(n):
        px = position[i, 0]; py = position[i, 1]; pz = position[i, 2]
        xc = rc[0, 0] * px + rc[0, 1] * py + rc[0, 2] * pz + tc[0]
        yc = rc[1, 0] * px + rc[1, 1] * py + rc[1, 2] * pz + tc[1]
        zc = rc[2, 0] * px + rc[2, 1] * py + rc[2, 2] * pz + tc[2]
        x_cam[i, 0] = xc; x_cam[i, 1] = yc; x_cam[i, 2] = zc
        if zc <= NEAR_PLANE:
            valid[i] = 0
            continue
        w = rotation[i, 0]; x = rotation[i, 1]; y = rotation[i, 2]; z = rotation[i, 3]
        r00 = 1.0 - 2.0 * (y * y + z * z); r01 = 2.0 * (x * y - w * z); r02 = 2.0 * (x * z + w * y)
        r10 = 2.0 * (x * y + w * z); r11 = 1.0 - 2.0 * (x * x + z * z); r12 = 2.0 * (y * z - w * x)
        r20 = 2.0 * (x * z - w * y); r21 = 2.0 * (y * z + w * x); r22 = 1.0 - 2.0 * (x * x + y * y)
        # m = rc @ r_quat: columns of m are the scaled principal axes in camera frame
        m00 = rc[0, 0] * r00 + rc[0, 1] * r10 + rc[0, 2] * r20
        m01 = rc[0, 0] * r01 + rc[0, 1] * r11 + rc[0, 2] * r21
        m02 = rc[0, 0] * r02 + rc[0, 1] * r12 + rc[0, 2] * r22
        m10 = rc[1, 0] * r00 + rc[1, 1] * r10 + rc[1, 2] * r20
        m11 = rc[1, 0] * r01 + rc[1, 1] * r11 + rc[1, 2] * r21
        m12 = rc[1, 0] * r02 + rc[1, 1] * r12 + rc[1, 2] * r22
        m20 = rc[2, 0] * r00 + rc[2, 1] * r10 + rc[2, 2] * r20
        m21 = rc[2, 0] * r01 + rc[2, 1] * r11 + rc[2, 2] * r21
        m22 = rc[2, 0] * r02 + rc[2, 1] * r12 + rc[2, 2] * r22
        s0 = scale[i, 0] * scale[i, 0]
        s1 = scale[i, 1] * scale[i, 1]
        s2 = scale[i, 2] * scale[i, 2]
        c00 = s0 * m00 * m00 + s1 * m01 * m01 + s2 * m02 * m02
        c01 = s0 * m00 * m10 + s1 * m01 * m11 + s2 * m02 * m12
        c02 = s0 * m00 * m20 + s1 * m01 * m21 + s2 * m02 * m22
        c11 = s0 * m10 * m10 + s1 * m11 * m11 + s2 * m12 * m12
        c12 = s0 * m10 * m20 + s1 * m11 * m21 + s2 * m12 * m22
        c22 = s0 * m20 * m20 + s1 * m21 * m21 + s2 * m22 * m22
        cov_cam[i, 0, 0] = c00; cov_cam[i, 0, 1] = c01; cov_cam[i, 0, 2] = c02
        cov_cam[i, 1, 0] = c01; cov_cam[i, 1, 1] = c11; cov_cam[i, 1, 2] = c12
        cov_cam[i, 2, 0] = c02; cov_cam[i, 2, 1] = c12; cov_cam[i, 2, 2] = c22

        inv_z = 1.0 / zc
        j00 = fx * inv_z
        j02 = -fx * xc * inv_z * inv_z
        j11 = fy * inv_z
        j12 = -fy * yc * inv_z * inv_z
        s00 = j00 * (j00 * c00 + j02 * c02) + j02 * (j00 * c02 + j02 * c22)
        s01 = j11 * (j00 * c01 + j02 * c12) + j12 * (j00 * c02 + j02 * c22)
        s11 = j11 * (j11 * c11 + j12 * c12) + j12 * (j11 * c12 + j12 * c22)

        det = s00 * s11 - s01 * s01
        mid = 0.5 * (s00 + s11)
        disc = mid * mid - det
        if disc < 0.0:
            disc = 0.0
        lam_max = mid + math.sqrt(disc)
        rad = 3.0 * math.sqrt(lam_max) if lam_max > 0.0 else 0.0
        if det <= 0.0 or rad < MIN_RADIUS:
            valid[i] = 0
            continue
        inv_det = 1.0 / det
        conic[i, 0] = s11 * inv_det
        conic[i, 1] = -s01 * inv_det
        conic[i, 2] = s00 * inv_det
        radius[i] = rad
        mean2d[i, 0] = fx * xc / zc + cx
        mean2d[i, 1] = fy * yc / zc + cy
        valid[i] = 1


def preprocess(world: GaussianSet, camera: Camera) -> ProjectedSplats:
    """Project activated world Gaussians to screen space, culling those behind
    the near plane or smaller than MIN_RADIUS pixels on screen."""
    for name in ("position", "rotation", "scale", "opacity", "color"):
        arr = getattr(world, name)
        if not np.all(np.isfinite(arr)):
            bad = int(np.flatnonzero(~np.all(np.isfinite(arr.reshape(arr.shape[0], -1)), axis=1))[0])
            raise FloatingPointError(f"non-finite {name} at Gaussian index {bad}")

    n = world.count
    x_cam = np.empty((n, 3))
    cov_cam = np.empty((n, 3, 3))
    mean2d = np.empty((n, 2))
    conic = np.empty((n, 3))
    radius = np.empty(n)
    valid = np.ones(n, dtype=np.uint8)
    _project_kernel(world.position, world.rotation, world.scale,
                    camera.rotation, camera.translation,
                    camera.fx, camera.fy, camera.cx, camera.cy,
                    x_cam, cov_cam, mean2d, conic, radius, valid)
    idx = np.flatnonzero(valid)
    z = x_cam[idx, 2]
    order = np.argsort(z, kind="stable")

    return ProjectedSplats(
        index=idx, mean2d=mean2d[idx], conic=conic[idx], depth=z,
        color=world.color[idx], opacity=world.opacity[idx], radius=radius[idx],
        source_count=world.count, x_cam=x_cam[idx], cov_cam=cov_cam[idx],
        world=world, camera=camera, sort_order=order,
    )


@njit(cache=True, nogil=True)
def _composite_kernel(mean2d, conic, opacity, color, radius, h, w,
                      image, trans, stop, maxw):
    m = mean2d.shape[0]
    for s in range(m):
        op = opacity[s]
        if op < ALPHA_CUTOFF:
            continue
        qmax = 2.0 * math.log(op * 255.0) + 1e-9
        mx = mean2d[s, 0]
        my = mean2d[s, 1]
        rad = radius[s]
        a = conic[s, 0]
        b = conic[s, 1]
        c = conic[s, 2]
        r_lo = max(0, int(math.ceil(my - rad - 0.5)))
        r_hi = min(h - 1, int(math.floor(my + rad - 0.5)))
        c_lo = max(0, int(math.ceil(mx - rad - 0.5)))
        c_hi = min(w - 1, int(math.floor(mx + rad - 0.5)))
        for r in range(r_lo, r_hi + 1):
            dy = r + 0.5 - my
            for cc in range(c_lo, c_hi + 1):
                t = trans[r, cc]
                if t < TERMINATION_EPS:
                    if stop[r, cc] > s:
                        stop[r, cc] = s
                    continue
                dx = cc + 0.5 - mx
                q = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy
                if q > qmax:
                    continue
                alpha = op * math.exp(-0.5 * q)
                if alpha < ALPHA_CUTOFF:
                    continue
                wgt = alpha * t
                image[r, cc, 0] += wgt * color[s, 0]
                image[r, cc, 1] += wgt * color[s, 1]
                image[r, cc, 2] += wgt * color[s, 2]
                if wgt > maxw[s]:
                    maxw[s] = wgt
                trans[r, cc] = t * (1.0 - alpha)


@njit(cache=True, nogil=True)
def _backward_kernel(mean2d, conic, opacity, color, radius, h, w,
                     trans_final, stop, grad_image, background,
                     g_mean, g_conic, g_opacity, g_color):
    m = mean2d.shape[0]
    t_rev = trans_final.copy()
    suffix = np.empty((h, w))
    for r in range(h):
        for cc in range(w):
            suffix[r, cc] = trans_final[r, cc] * (
                grad_image[r, cc, 0] * background[0]
                + grad_image[r, cc, 1] * background[1]
                + grad_image[r, cc, 2] * background[2]
            )
    for s in range(m - 1, -1, -1):
        op = opacity[s]
        if op < ALPHA_CUTOFF:
            continue
        qmax = 2.0 * math.log(op * 255.0) + 1e-9
        mx = mean2d[s, 0]
        my = mean2d[s, 1]
        rad = radius[s]
        a = conic[s, 0]
        b = conic[s, 1]
        c = conic[s, 2]
        r_lo = max(0, int(math.ceil(my - rad - 0.5)))
        r_hi = min(h - 1, int(math.floor(my + rad - 0.5)))
        c_lo = max(0, int(math.ceil(mx - rad - 0.5)))
        c_hi = min(w - 1, int(math.floor(mx + rad - 0.5)))
        for r in range(r_lo, r_hi + 1):
            dy = r + 0.5 - my
            for cc in range(c_lo, c_hi + 1):
                if s >= stop[r, cc]:
                    continue
                dx = cc + 0.5 - mx
                q = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy
                if q > qmax:
                    continue
                g = math.exp(-0.5 * q)
                alpha = op * g
                if alpha < ALPHA_CUTOFF:
                    continue
                one_m = 1.0 - alpha
                t_prior = t_rev[r, cc] / one_m
                gw = (grad_image[r, cc, 0] * color[s, 0]
                      + grad_image[r, cc, 1] * color[s, 1]
                      + grad_image[r, cc, 2] * color[s, 2])
                wgt = alpha * t_prior
                g_color[s, 0] += wgt * grad_image[r, cc, 0]
                g_color[s, 1] += wgt * grad_image[r, cc, 1]
                g_color[s, 2] += wgt * grad_image[r, cc, 2]
                d_alpha = t_prior * gw - suffix[r, cc] / one_m
                g_opacity[s] += g * d_alpha
                dq = -0.5 * alpha * d_alpha
                g_conic[s, 0] += dq * dx * dx
                g_conic[s, 1] += 2.0 * dq * dx * dy
                g_conic[s, 2] += dq * dy * dy
                g_mean[s, 0] += -2.0 * dq * (a * dx + b * dy)
                g_mean[s, 1] += -2.0 * dq * (b * dx + c * dy)
                suffix[r, cc] += wgt * gw
                t_rev[r, cc] = t_prior


@njit(cache=True, nogil=True)
def _weight_sums_kernel(mean2d, conic, opacity, color, radius, h, w,
                        image, num, den):
    m = mean2d.shape[0]
    trans = np.ones((h, w))
    for s in range(m):
        op = opacity[s]
        if op < ALPHA_CUTOFF:
            continue
        qmax = 2.0 * math.log(op * 255.0) + 1e-9
        mx = mean2d[s, 0]
        my = mean2d[s, 1]
        rad = radius[s]
        a = conic[s, 0]
        b = conic[s, 1]
        c = conic[s, 2]
        r_lo = max(0, int(math.ceil(my - rad - 0.5)))
        r_hi = min(h - 1, int(math.floor(my + rad - 0.5)))
        c_lo = max(0, int(math.ceil(mx - rad - 0.5)))
        c_hi = min(w - 1, int(math.floor(mx + rad - 0.5)))
        for r in range(r_lo, r_hi + 1):
            dy = r + 0.5 - my
            for cc in range(c_lo, c_hi + 1):
                t = trans[r, cc]
                if t < TERMINATION_EPS:
                    continue
                dx = cc + 0.5 - mx
                q = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy
                if q > qmax:
                    continue
                alpha = op * math.exp(-0.5 * q)
                if alpha < ALPHA_CUTOFF:
                    continue
                wgt = alpha * t
                num[s, 0] += wgt * image[r, cc, 0]
                num[s, 1] += wgt * image[r, cc, 1]
                num[s, 2] += wgt * image[r, cc, 2]
                den[s] += wgt
                trans[r, cc] = t * (1.0 - alpha)


def _sorted_arrays(splats):
    order = splats.sort_order
    return (np.ascontiguousarray(splats.mean2d[order]),
            np.ascontiguousarray(splats.conic[order]),
            np.ascontiguousarray(splats.opacity[order]),
            np.ascontiguousarray(splats.color[order]),
            np.ascontiguousarray(splats.radius[order]))


def rasterize(splats: ProjectedSplats, camera: Camera, background):
    """Front-to-back alpha compositing of projected splats over a background.

    Returns (image (H, W, 3), RenderAux).
    """
    background = np.asarray(background, dtype=np.float64)
    h, w = camera.height, camera.width
    image = np.zeros((h, w, 3))
    trans = np.ones((h, w))
    stop = np.full((h, w), len(splats), dtype=np.int64)
    maxw_sorted = np.zeros(len(splats))
    if len(splats):
        _composite_kernel(*_sorted_arrays(splats), h, w, image, trans, stop, maxw_sorted)
    image += trans[:, :, None] * background[None, None, :]

    max_weight = np.zeros(splats.source_count)
    if len(splats):
        max_weight[splats.index[splats.sort_order]] = maxw_sorted
    return image, RenderAux(trans, max_weight, splats, background, stop)


def render_backward(splats: ProjectedSplats, aux: RenderAux, grad_image) -> GaussianGrad:
    """Adjoint of preprocess + rasterize w.r.t. the world GaussianSet."""
    grad_image = np.ascontiguousarray(grad_image, dtype=np.float64)
    camera = splats.camera
    h, w = camera.height, camera.width
    m = len(splats)
    gs_mean = np.zeros((m, 2))
    gs_conic = np.zeros((m, 3))
    gs_opacity = np.zeros(m)
    gs_color = np.zeros((m, 3))
    if m:
        _backward_kernel(*_sorted_arrays(splats), h, w,
                         aux.transmittance, aux.stop, grad_image, aux.background,
                         gs_mean, gs_conic, gs_opacity, gs_color)
    order = splats.sort_order
    g_mean = np.zeros((m, 2)); g_mean[order] = gs_mean
    g_conic = np.zeros((m, 3)); g_conic[order] = gs_conic
    g_opacity = np.zeros(m); g_opacity[order] = gs_opacity
    g_color = np.zeros((m, 3)); g_color[order] = gs_color
    return _preprocess_backward(splats, g_mean, g_conic, g_opacity, g_color)


def _preprocess_backward(splats: ProjectedSplats, g_mean, g_conic, g_opacity, g_color) -> GaussianGrad:
    world = splats.world
    camera = splats.camera
    grad = GaussianGrad.zeros(world.count)
    if len(splats) == 0:
        return grad
    idx = splats.index
    x_cam = splats.x_cam
    z = x_cam[:, 2]
    inv_z = 1.0 / z
    fx, fy = camera.fx, camera.fy

    # conic = inv(sigma2d): g_sigma2d = -C Gc C with Gc the symmetric unpacking
    ca, cb, cc = splats.conic[:, 0], splats.conic[:, 1], splats.conic[:, 2]
    ga, gb, gc = g_conic[:, 0], 0.5 * g_conic[:, 1], g_conic[:, 2]
    gs00 = -(ca * (ca * ga + cb * gb) + cb * (ca * gb + cb * gc))
    gs01 = -(ca * (cb * ga + cc * gb) + cb * (cb * gb + cc * gc))
    gs11 = -(cb * (cb * ga + cc * gb) + cc * (cb * gb + cc * gc))

    g_sigma2d = np.empty((len(splats), 2, 2))
    g_sigma2d[:, 0, 0] = gs00
    g_sigma2d[:, 0, 1] = gs01
    g_sigma2d[:, 1, 0] = gs01
    g_sigma2d[:, 1, 1] = gs11

    jmat = np.zeros((len(splats), 2, 3))
    jmat[:, 0, 0] = fx * inv_z
    jmat[:, 0, 2] = -fx * x_cam[:, 0] * inv_z * inv_z
    jmat[:, 1, 1] = fy * inv_z
    jmat[:, 1, 2] = -fy * x_cam[:, 1] * inv_z * inv_z

    g_cov_cam = np.einsum("nji,njk,nkl->nil", jmat, g_sigma2d, jmat)
    g_j = np.einsum("nij,njk,nkl->nil", g_sigma2d + np.swapaxes(g_sigma2d, 1, 2),
                    jmat, splats.cov_cam)

    rc = camera.rotation
    g_cov_world = np.einsum("ji,njk,kl->nil", rc, g_cov_cam, rc)

    rot = quat_to_matrix(world.rotation[idx])
    s = world.scale[idx]
    g_plus = g_cov_world + np.swapaxes(g_cov_world, 1, 2)
    g_rot = np.einsum("nij,njk->nik", g_plus, rot * (s * s)[:, None, :])
    rtgr = np.einsum("nji,njk,nkl->nil", rot, g_cov_world, rot)
    g_scale = 2.0 * s * np.einsum("nii->ni", rtgr)
    g_quat = quat_to_matrix_backward(world.rotation[idx], g_rot)

    # mean2d and the Jacobian both reach x_cam
    gx = g_mean[:, 0] * fx * inv_z + g_j[:, 0, 2] * (-fx * inv_z * inv_z)
    gy = g_mean[:, 1] * fy * inv_z + g_j[:, 1, 2] * (-fy * inv_z * inv_z)
    gz = (
        -g_mean[:, 0] * fx * x_cam[:, 0] * inv_z * inv_z
        - g_mean[:, 1] * fy * x_cam[:, 1] * inv_z * inv_z
        + g_j[:, 0, 0] * (-fx * inv_z * inv_z)
        + g_j[:, 0, 2] * (2.0 * fx * x_cam[:, 0] * inv_z ** 3)
        + g_j[:, 1, 1] * (-fy * inv_z * inv_z)
        + g_j[:, 1, 2] * (2.0 * fy * x_cam[:, 1] * inv_z ** 3)
    )
    g_x_cam = np.stack([gx, gy, gz], axis=-1)
    g_pos = g_x_cam @ rc

    grad.position[idx] = g_pos
    grad.rotation[idx] = g_quat
    grad.scale[idx] = g_scale
    grad.opacity[idx] = g_opacity
    grad.color[idx] = g_color
    return grad


def splat_weight_sums(aux: RenderAux, image) -> tuple[np.ndarray, np.ndarray]:
    """Per-source-Gaussian (sum of w_ij * I_ij, sum of w_ij) over all pixels.

    Recomputes the forward weight run; values match the forward pass exactly
    because the operations and order are identical.
    """
    image = np.ascontiguousarray(image, dtype=np.float64)
    splats = aux.splats
    camera = splats.camera
    h, w = camera.height, camera.width
    m = len(splats)
    num_sorted = np.zeros((m, 3))
    den_sorted = np.zeros(m)
    if m:
        _weight_sums_kernel(*_sorted_arrays(splats), h, w, image, num_sorted, den_sorted)
    num = np.zeros((splats.source_count, 3))
    den = np.zeros(splats.source_count)
    if m:
        src = splats.index[splats.sort_order]
        num[src] = num_sorted
        den[src] = den_sorted
    return num, den
