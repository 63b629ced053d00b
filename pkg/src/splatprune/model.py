"""Gaussian primitives, scenes, cameras and the pointwise math defined on them.

Storage follows the community 3DGS checkpoint convention: scales are natural
logs, opacity is a logit and rotations are unnormalized (w, x, y, z)
quaternions. Nothing here mutates stored fields.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

SH_DEGREE = 3
SH_COEFFS = (SH_DEGREE + 1) ** 2
PARAMS_PER_PRIMITIVE = 3 + 3 + 4 + 1 + SH_COEFFS * 3

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)

_MIN_QUAT_NORM = 1e-12
_ORTHO_TOL = 1e-6


class DegenerateRotationError(ValueError):
    """Raised when a quaternion is too close to zero to define a rotation."""


def _frozen(a, dtype=np.float64, shape=None):
    arr = np.array(a, dtype=dtype, copy=True)
    if shape is not None:
        arr = arr.reshape(shape)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class GaussianPrimitive:
    """One anisotropic 3D Gaussian in checkpoint storage form."""

    position: np.ndarray
    log_scale: np.ndarray
    rotation: np.ndarray
    opacity_logit: float
    sh_coeffs: np.ndarray = field(default_factory=lambda: np.zeros((SH_COEFFS, 3)))

    def __post_init__(self):
        object.__setattr__(self, "position", _frozen(self.position, shape=(3,)))
        object.__setattr__(self, "log_scale", _frozen(self.log_scale, shape=(3,)))
        object.__setattr__(self, "rotation", _frozen(self.rotation, shape=(4,)))
        object.__setattr__(self, "opacity_logit", float(self.opacity_logit))
        object.__setattr__(self, "sh_coeffs", _frozen(self.sh_coeffs, shape=(SH_COEFFS, 3)))
        values = np.concatenate(
            [self.position, self.log_scale, self.rotation, [self.opacity_logit], self.sh_coeffs.ravel()]
        )
        if not np.all(np.isfinite(values)):
            raise ValueError("GaussianPrimitive fields must be finite")
        if np.linalg.norm(self.rotation) <= 0:
            raise DegenerateRotationError("rotation quaternion has zero norm")

    @property
    def n_params(self) -> int:
        return PARAMS_PER_PRIMITIVE


class Scene:
    """An ordered, immutable set of Gaussian primitives stored column-wise.

    The row index of each primitive is its canonical id.
    """

    def __init__(
        self,
        positions,
        log_scales,
        rotations,
        opacity_logits,
        sh_coeffs=None,
        source_tag: str = "",
        *,
        validate: bool = True,
    ):
        positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        n = positions.shape[0]
        if sh_coeffs is None:
            sh_coeffs = np.zeros((n, SH_COEFFS, 3))
        self.positions = _frozen(positions)
        self.log_scales = _frozen(log_scales, shape=(n, 3))
        self.rotations = _frozen(rotations, shape=(n, 4))
        self.opacity_logits = _frozen(opacity_logits, shape=(n,))
        self.sh_coeffs = _frozen(sh_coeffs, shape=(n, SH_COEFFS, 3))
        self.source_tag = str(source_tag)
        if validate:
            self._validate()

    def _validate(self):
        for name in ("positions", "log_scales", "rotations", "opacity_logits", "sh_coeffs"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"Scene.{name} contains non-finite values")
        if len(self) and np.min(np.linalg.norm(self.rotations, axis=1)) <= 0:
            raise DegenerateRotationError("Scene contains a zero-norm rotation quaternion")

    @classmethod
    def empty(cls, source_tag: str = "") -> "Scene":
        return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 4)), np.zeros(0), source_tag=source_tag)

    @classmethod
    def from_primitives(cls, primitives: Iterable[GaussianPrimitive], source_tag: str = "") -> "Scene":
        prims = list(primitives)
        if not prims:
            return cls.empty(source_tag)
        return cls(
            np.stack([p.position for p in prims]),
            np.stack([p.log_scale for p in prims]),
            np.stack([p.rotation for p in prims]),
            np.array([p.opacity_logit for p in prims]),
            np.stack([p.sh_coeffs for p in prims]),
            source_tag=source_tag,
        )

    def __len__(self) -> int:
        return self.positions.shape[0]

    def __getitem__(self, i: int) -> GaussianPrimitive:
        return GaussianPrimitive(
            self.positions[i], self.log_scales[i], self.rotations[i], self.opacity_logits[i], self.sh_coeffs[i]
        )

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def __repr__(self):
        return f"Scene(n={len(self)}, source_tag={self.source_tag!r})"

    def subset(self, index, source_tag: Optional[str] = None) -> "Scene":
        """Rows selected by ``index`` (boolean mask or integer ids), order preserved."""
        return Scene(
            self.positions[index],
            self.log_scales[index],
            self.rotations[index],
            self.opacity_logits[index],
            self.sh_coeffs[index],
            source_tag=self.source_tag if source_tag is None else source_tag,
            validate=False,
        )

    def translated(self, offset) -> "Scene":
        return Scene(
            self.positions + np.asarray(offset, dtype=np.float64),
            self.log_scales,
            self.rotations,
            self.opacity_logits,
            self.sh_coeffs,
            source_tag=self.source_tag,
            validate=False,
        )

    @property
    def opacities(self) -> np.ndarray:
        return activate_opacity(self.opacity_logits)

    @property
    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales)


@dataclass(frozen=True)
class CameraView:
    """Pinhole camera with a rigid world-to-camera transform.

    Camera axes follow the COLMAP convention: +x right, +y down, +z forward.
    """

    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray
    translation: np.ndarray
    ground_truth: Optional[np.ndarray] = None
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "rotation", _frozen(self.rotation, shape=(3, 3)))
        object.__setattr__(self, "translation", _frozen(self.translation, shape=(3,)))
        if self.width < 1 or self.height < 1:
            raise ValueError(f"camera size must be positive, got {self.width}x{self.height}")
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        err = np.max(np.abs(self.rotation @ self.rotation.T - np.eye(3)))
        if err > _ORTHO_TOL or np.linalg.det(self.rotation) < 0:
            raise ValueError(f"camera rotation is not a proper orthonormal matrix (error {err:.2e})")
        if self.ground_truth is not None:
            gt = _frozen(self.ground_truth)
            if gt.shape != (self.height, self.width, 3):
                raise ValueError(
                    f"ground truth shape {gt.shape} does not match camera {(self.height, self.width, 3)}"
                )
            object.__setattr__(self, "ground_truth", gt)

    @classmethod
    def from_camera_pose(cls, width, height, fx, fy, position, cam_to_world, cx=None, cy=None, **kw):
        """Build from a camera centre and camera-to-world rotation."""
        c2w = np.asarray(cam_to_world, dtype=np.float64).reshape(3, 3)
        rot = c2w.T
        trans = -rot @ np.asarray(position, dtype=np.float64)
        return cls(
            int(width),
            int(height),
            float(fx),
            float(fy),
            width / 2.0 if cx is None else float(cx),
            height / 2.0 if cy is None else float(cy),
            rot,
            trans,
            **kw,
        )

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    def with_ground_truth(self, image) -> "CameraView":
        return CameraView(
            self.width, self.height, self.fx, self.fy, self.cx, self.cy,
            self.rotation, self.translation, ground_truth=image, name=self.name,
        )

    def translated(self, offset) -> "CameraView":
        """Same camera after moving the world by ``offset``."""
        t = self.translation - self.rotation @ np.asarray(offset, dtype=np.float64)
        return CameraView(
            self.width, self.height, self.fx, self.fy, self.cx, self.cy,
            self.rotation, t, ground_truth=self.ground_truth, name=self.name,
        )


def activate_opacity(opacity_logit):
    """Sigmoid activation of stored opacity logits."""
    o = np.asarray(opacity_logit, dtype=np.float64)
    out = np.empty_like(o)
    pos = o >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-o[pos]))
    e = np.exp(o[~pos])
    out[~pos] = e / (1.0 + e)
    return out if out.ndim else float(out)


def quaternion_to_matrix(q) -> np.ndarray:
    """Rotation matrices for (..., 4) quaternions in (w, x, y, z) order, normalizing first."""
    q = np.asarray(q, dtype=np.float64)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norm < _MIN_QUAT_NORM):
        raise DegenerateRotationError("quaternion norm below 1e-12")
    w, x, y, z = np.moveaxis(q / norm, -1, 0)
    return np.stack(
        [
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
            np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
            np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
        ],
        -2,
    )


def covariance_from_params(log_scales, rotations) -> np.ndarray:
    """Batched R S S^T R^T for (..., 3) log-scales and (..., 4) quaternions."""
    R = quaternion_to_matrix(rotations)
    M = R * np.exp(np.asarray(log_scales, dtype=np.float64))[..., None, :]
    cov = M @ np.swapaxes(M, -1, -2)
    # exact symmetry; the product is symmetric only up to rounding
    return 0.5 * (cov + np.swapaxes(cov, -1, -2))


def build_covariance_3d(prim: GaussianPrimitive) -> np.ndarray:
    return covariance_from_params(prim.log_scale, prim.rotation)


def sh_basis(dirs) -> np.ndarray:
    """Real SH basis up to degree 3 evaluated at unit directions, shape (..., 16)."""
    d = np.asarray(dirs, dtype=np.float64)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    xx, yy, zz = x * x, y * y, z * z
    xy, yz, xz = x * y, y * z, x * z
    return np.stack(
        [
            np.full_like(x, SH_C0),
            -SH_C1 * y,
            SH_C1 * z,
            -SH_C1 * x,
            SH_C2[0] * xy,
            SH_C2[1] * yz,
            SH_C2[2] * (2 * zz - xx - yy),
            SH_C2[3] * xz,
            SH_C2[4] * (xx - yy),
            SH_C3[0] * y * (3 * xx - yy),
            SH_C3[1] * xy * z,
            SH_C3[2] * y * (4 * zz - xx - yy),
            SH_C3[3] * z * (2 * zz - 3 * xx - 3 * yy),
            SH_C3[4] * x * (4 * zz - xx - yy),
            SH_C3[5] * z * (xx - yy),
            SH_C3[6] * x * (xx - 3 * yy),
        ],
        axis=-1,
    )


def evaluate_sh(coeffs, view_dir) -> np.ndarray:
    """View-dependent RGB from (..., 16, 3) coefficients.

    Adds the 0.5 offset and clamps at zero from below; there is no upper clamp.
    """
    coeffs = np.asarray(coeffs, dtype=np.float64)
    basis = sh_basis(view_dir)
    rgb = np.einsum("...k,...kc->...c", basis, coeffs) + 0.5
    return np.maximum(rgb, 0.0)

