"""Synthetic parametric head rig.

Stands in for a tracked 3DMM: a fixed-topology mesh with per-vertex
expression offset bases and a global axis-angle pose. The rig parameter
vector theta concatenates E expression coefficients with 3 pose values,
so H = E + 3.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .quatmath import axis_angle_to_matrix


@dataclass
class ParametricHeadRig:
    base_vertices: np.ndarray   # (V, 3)
    faces: np.ndarray           # (F, 3) int
    uv_coords: np.ndarray       # (V, 2) in [0, 1]
    expr_bases: np.ndarray      # (E, V, 3)

    pose_dim: int = 3

    def __post_init__(self):
        self.base_vertices = np.asarray(self.base_vertices, dtype=np.float64)
        self.faces = np.asarray(self.faces, dtype=np.int64)
        self.uv_coords = np.asarray(self.uv_coords, dtype=np.float64)
        self.expr_bases = np.asarray(self.expr_bases, dtype=np.float64)
        v = self.base_vertices.shape[0]
        if self.faces.min() < 0 or self.faces.max() >= v:
            raise ValueError("faces index out-of-range vertices")
        if self.uv_coords.shape != (v, 2):
            raise ValueError("uv_coords shape mismatch")
        if self.expr_bases.ndim != 3 or self.expr_bases.shape[1:] != (v, 3):
            raise ValueError("expr_bases must be (E, V, 3)")

    @property
    def num_vertices(self) -> int:
        return self.base_vertices.shape[0]

    @property
    def num_faces(self) -> int:
        return self.faces.shape[0]

    @property
    def num_expressions(self) -> int:
        return self.expr_bases.shape[0]

    @property
    def param_dim(self) -> int:
        return self.num_expressions + self.pose_dim


def rig_evaluate(rig: ParametricHeadRig, theta: np.ndarray) -> np.ndarray:
    """Deformed vertices for parameters theta = (expressions..., pose axis-angle)."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (rig.param_dim,):
        raise ValueError(f"theta has shape {theta.shape}, rig expects ({rig.param_dim},)")
    expr = theta[: rig.num_expressions]
    pose = theta[rig.num_expressions:]
    verts = rig.base_vertices + np.tensordot(expr, rig.expr_bases, axes=(0, 0))
    rot = axis_angle_to_matrix(pose)
    return verts @ rot.T


def build_head_rig(rows: int = 16, cols: int = 32, num_expressions: int = 10,
                   seed: int = 7) -> ParametricHeadRig:
    """Default desk-scale head: a spherical band (poles excluded so every face
    has proper UV area), slightly egg-shaped, with smooth sinusoidal
    expression fields. The UV seam column is duplicated so UVs tile [0,1]^2
    cleanly; V = (rows+1)*(cols+1), F = 2*rows*cols.
    """
    lat = np.linspace(np.radians(-75.0), np.radians(75.0), rows + 1)
    lon = np.linspace(0.0, 2.0 * np.pi, cols + 1)
    lat_g, lon_g = np.meshgrid(lat, lon, indexing="ij")
    x = np.cos(lat_g) * np.cos(lon_g)
    y = np.sin(lat_g) * 1.15          # taller than wide, vaguely head-like
    z = np.cos(lat_g) * np.sin(lon_g) * 0.9
    verts = np.stack([x.ravel(), y.ravel(), z.ravel()], axis=-1)

    u = (lon_g / (2.0 * np.pi)).ravel()
    v = ((lat_g - lat[0]) / (lat[-1] - lat[0])).ravel()
    uv = np.stack([u, v], axis=-1)

    faces = []
    stride = cols + 1
    for i in range(rows):
        for j in range(cols):
            a = i * stride + j
            b = a + 1
            c = a + stride
            d = c + 1
            faces.append((a, b, d))
            faces.append((a, d, c))
    faces = np.asarray(faces, dtype=np.int64)

    # Smooth directional offset fields; amplitudes small enough that no
    # realistic coefficient combination degenerates a triangle.
    rng = np.random.default_rng(seed)
    bases = np.empty((num_expressions, verts.shape[0], 3))
    radial = verts / np.linalg.norm(verts, axis=-1, keepdims=True)
    for e in range(num_expressions):
        fu = rng.integers(1, 4)
        fv = rng.integers(1, 4)
        phase_u = rng.uniform(0.0, 2.0 * np.pi)
        phase_v = rng.uniform(0.0, np.pi)
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        amp = 0.05 * np.sin(2.0 * np.pi * fu * u + phase_u) * np.sin(np.pi * fv * v + phase_v)
        bases[e] = amp[:, None] * (0.6 * radial + 0.4 * direction)
    return ParametricHeadRig(verts, faces, uv, bases)
