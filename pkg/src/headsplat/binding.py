"""Binding Gaussians to mesh triangles and carrying them through deformation.

Each Gaussian is pinned, once, to a triangle and a barycentric point inside
it (found by scanning the rig's UV map). At render time the per-triangle
tangent frame of the deformed mesh turns tangent-space Gaussians into world
ones. Bindings never change after initialization.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .gaussians import GaussianGrad, GaussianSet
from .quatmath import matrix_to_quat, quat_multiply, quat_multiply_backward_right, quat_normalize_backward
from .rig import ParametricHeadRig


class DegenerateTriangleError(ValueError):
    pass


@dataclass
class GaussianBindings:
    triangle_index: np.ndarray   # (N,) int
    barycentric: np.ndarray      # (N, 3), non-negative, sums to 1

    def __post_init__(self):
        self.triangle_index = np.asarray(self.triangle_index, dtype=np.int64)
        self.barycentric = np.asarray(self.barycentric, dtype=np.float64)
        if self.barycentric.shape != (self.triangle_index.shape[0], 3):
            raise ValueError("barycentric must be (N, 3)")

    @property
    def count(self) -> int:
        return self.triangle_index.shape[0]

    def checksum(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.triangle_index).tobytes())
        h.update(np.ascontiguousarray(self.barycentric).tobytes())
        return h.hexdigest()


@dataclass
class MeshFrames:
    """Per-triangle tangent frames of one deformed mesh."""

    rotation: np.ndarray       # (F, 3, 3), columns T, B, N
    quat: np.ndarray           # (F, 4), quaternion of rotation (not normalized)
    tri_vertices: np.ndarray   # (F, 3, 3), deformed vertex positions per face


def tbn(v0, v1, v2, uv0, uv1, uv2) -> np.ndarray:
    """Tangent frame of a single triangle; returns the 3x3 matrix [T B N].

    T and B solve the tangent system exactly (no orthonormalization), N is
    the unit face normal.
    """
    verts = np.asarray([v0, v1, v2], dtype=np.float64)[None]
    uvs = np.asarray([uv0, uv1, uv2], dtype=np.float64)[None]
    return _tbn_batch(verts, uvs, face_ids=np.array([0]))[0]


def mesh_frames(rig: ParametricHeadRig, vertices: np.ndarray) -> MeshFrames:
    """Tangent frames for every face of a deformed mesh.

    The quaternion used for rotation composition comes from the polar
    rotation factor of the (generally non-orthonormal) TBN matrix; that is
    the only extraction that commutes with rigid motions of the mesh.
    """
    tri = vertices[rig.faces]                    # (F, 3, 3)
    tri_uv = rig.uv_coords[rig.faces]            # (F, 3, 2)
    rot = _tbn_batch(tri, tri_uv, face_ids=np.arange(rig.num_faces))
    return MeshFrames(rotation=rot, quat=matrix_to_quat(polar_rotation(rot)), tri_vertices=tri)


def polar_rotation(m):
    """Rotation factor of the polar decomposition of (F, 3, 3) matrices."""
    u, _, vt = np.linalg.svd(m)
    r = u @ vt
    det = np.linalg.det(r)
    flip = det < 0
    if np.any(flip):
        u = u.copy()
        u[flip, :, 2] *= -1.0
        r = u @ vt
    return r


def _tbn_batch(tri, tri_uv, face_ids):
    e1 = tri[:, 1] - tri[:, 0]
    e2 = tri[:, 2] - tri[:, 0]
    cross = np.cross(e1, e2)
    cross_norm = np.linalg.norm(cross, axis=-1)
    du1 = tri_uv[:, 1, 0] - tri_uv[:, 0, 0]
    du2 = tri_uv[:, 2, 0] - tri_uv[:, 0, 0]
    dv1 = tri_uv[:, 1, 1] - tri_uv[:, 0, 1]
    dv2 = tri_uv[:, 2, 1] - tri_uv[:, 0, 1]
    det = du1 * dv2 - du2 * dv1

    bad = np.flatnonzero(np.abs(det) < 1e-12)
    if bad.size:
        raise DegenerateTriangleError(f"degenerate UV triangle at face {face_ids[bad[0]]}")
    bad = np.flatnonzero(cross_norm < 1e-12)
    if bad.size:
        raise DegenerateTriangleError(f"degenerate 3D triangle at face {face_ids[bad[0]]}")

    normal = cross / cross_norm[:, None]
    inv_det = 1.0 / det
    t_vec = (dv2[:, None] * e1 - dv1[:, None] * e2) * inv_det[:, None]
    b_vec = (-du2[:, None] * e1 + du1[:, None] * e2) * inv_det[:, None]
    return np.stack([t_vec, b_vec, normal], axis=-1)


def bind_gaussians(rig: ParametricHeadRig, uv_resolution: int):
    """One Gaussian per UV texel center covered by a face.

    Texel centers sit at ((i+0.5)/res, (j+0.5)/res). A texel covered by
    several faces (seams) binds to the first covering face in face order.
    Returns (GaussianBindings, tangent positions), the latter all zeros:
    fresh Gaussians sit exactly at their barycentric surface point.
    """
    if uv_resolution < 1:
        raise ValueError(f"uv_resolution must be >= 1, got {uv_resolution}")
    res = int(uv_resolution)
    centers = (np.arange(res) + 0.5) / res
    tri_uv = rig.uv_coords[rig.faces]           # (F, 3, 2)

    owner = np.full((res, res), -1, dtype=np.int64)
    bary_grid = np.zeros((res, res, 3))
    for f in range(rig.num_faces):
        uv = tri_uv[f]
        lo = uv.min(axis=0)
        hi = uv.max(axis=0)
        ui = np.flatnonzero((centers >= lo[0] - 0.5 / res) & (centers <= hi[0] + 0.5 / res))
        vi = np.flatnonzero((centers >= lo[1] - 0.5 / res) & (centers <= hi[1] + 0.5 / res))
        if ui.size == 0 or vi.size == 0:
            continue
        uu, vv = np.meshgrid(centers[ui], centers[vi], indexing="ij")
        b = uv_barycentric(uv, np.stack([uu.ravel(), vv.ravel()], axis=-1))
        inside = np.all(b >= -1e-12, axis=-1).reshape(uu.shape)
        gi, gj = np.meshgrid(ui, vi, indexing="ij")
        free = inside & (owner[gi, gj] < 0)
        owner[gi[free], gj[free]] = f
        bary_grid[gi[free], gj[free]] = b.reshape(uu.shape + (3,))[free]

    sel_i, sel_j = np.nonzero(owner >= 0)
    if sel_i.size == 0:
        raise ValueError("rig UV layout covers no texel at this resolution")
    order = np.lexsort((sel_j, sel_i))
    sel_i, sel_j = sel_i[order], sel_j[order]
    bindings = GaussianBindings(owner[sel_i, sel_j], bary_grid[sel_i, sel_j])
    return bindings, np.zeros((sel_i.size, 3))


def uv_barycentric(tri_uv, points):
    """Barycentric coordinates of 2D points w.r.t. one UV triangle.

    tri_uv: (3, 2); points: (P, 2). Returns (P, 3) with b2 = 1 - b0 - b1.
    """
    a, b, c = tri_uv
    v0 = b - a
    v1 = c - a
    den = v0[0] * v1[1] - v1[0] * v0[1]
    d = points - a
    b1 = (d[:, 0] * v1[1] - v1[0] * d[:, 1]) / den
    b2 = (v0[0] * d[:, 1] - d[:, 0] * v0[1]) / den
    return np.stack([1.0 - b1 - b2, b1, b2], axis=-1)


def transform_to_deformed(tangent: GaussianSet, frames: MeshFrames,
                          bindings: GaussianBindings) -> GaussianSet:
    """Tangent-space Gaussians into the deformed mesh's world space.

    Position: R x + t with t the barycentric point on the deformed triangle.
    Rotation: triangle-frame quaternion composed onto the Gaussian's own,
    renormalized. Scale, opacity and color pass through.
    """
    idx = bindings.triangle_index
    rot = frames.rotation[idx]                            # (N, 3, 3)
    t = np.einsum("nk,nkj->nj", bindings.barycentric, frames.tri_vertices[idx])
    pos = np.einsum("nij,nj->ni", rot, tangent.position) + t
    q_raw = quat_multiply(frames.quat[idx], tangent.rotation)
    q = q_raw / np.linalg.norm(q_raw, axis=-1, keepdims=True)
    return GaussianSet(pos, q, tangent.scale.copy(), tangent.opacity.copy(), tangent.color.copy())


def transform_backward(tangent: GaussianSet, frames: MeshFrames, bindings: GaussianBindings,
                       grad_world: GaussianGrad) -> GaussianGrad:
    """Adjoint of transform_to_deformed. The mesh is a constant."""
    idx = bindings.triangle_index
    rot = frames.rotation[idx]
    grad_pos = np.einsum("nji,nj->ni", rot, grad_world.position)
    frame_q = frames.quat[idx]
    q_raw = quat_multiply(frame_q, tangent.rotation)
    grad_q_raw = quat_normalize_backward(q_raw, grad_world.rotation)
    grad_rot = quat_multiply_backward_right(frame_q, grad_q_raw)
    return GaussianGrad(
        grad_pos, grad_rot, grad_world.scale.copy(),
        grad_world.opacity.copy(), grad_world.color.copy(),
    )
