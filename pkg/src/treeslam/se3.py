"""Rigid body transformations in SE(3).

Transforms are stored as a rotation matrix and a translation vector and act on
column points, ``x' = R x + p``. The module provides composition, inversion,
the rotation logarithm, the Rodrigues exponential and the matrix power
``tau**u`` evaluated in closed form on the basis ``{I, [w], [w]^2}``.

Numerical policy:
    TAYLOR_SWITCH = 1e-3 rad: below it the 0/0 coefficients of the gain product
    are replaced by their Taylor expansions (truncation error ~1e-12).
    PURE_TRANSLATION = 1e-15 rad: rotations smaller than this are treated as
    exactly zero, which makes pure translations scale exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from treeslam.errors import NonOrthonormalInput, NonUnitAxis

TAYLOR_SWITCH = 1e-3
PURE_TRANSLATION = 1e-15
ORTHONORMAL_TOL = 1e-6
NEAR_PI = 1e-3


def skew(w: np.ndarray) -> np.ndarray:
    """Skew matrix ``[w]`` with ``[w] a = w x a``."""
    return np.array(
        [[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]], dtype=float
    )


def vee(m: np.ndarray) -> np.ndarray:
    return np.array([m[2, 1], m[0, 2], m[1, 0]], dtype=float)


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """A rotation followed by a translation, ``x -> R x + p``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        r = np.array(self.rotation, dtype=float).reshape(3, 3)
        p = np.array(self.translation, dtype=float).reshape(3)
        r.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", p)

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_translation(cls, p: Iterable[float]) -> RigidTransform:
        return cls(np.eye(3), np.asarray(p, dtype=float))

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> RigidTransform:
        m = np.asarray(m, dtype=float)
        return cls(m[:3, :3], m[:3, 3])

    @classmethod
    def from_axis_angle(
        cls, axis: Iterable[float], angle: float, translation: Iterable[float] = (0, 0, 0)
    ) -> RigidTransform:
        return cls(rodrigues(np.asarray(axis, dtype=float), angle), np.asarray(translation, dtype=float))

    @classmethod
    def from_yaw(cls, yaw: float, translation: Iterable[float] = (0, 0, 0)) -> RigidTransform:
        return cls.from_axis_angle((0.0, 0.0, 1.0), yaw, translation)

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map an ``(N, 3)`` array of row points."""
        return np.asarray(points, dtype=float) @ self.rotation.T + self.translation

    def inverse(self) -> RigidTransform:
        return inverse(self)

    def __matmul__(self, other: RigidTransform) -> RigidTransform:
        return compose(self, other)

    def __pow__(self, u: float) -> RigidTransform:
        return power(self, u)

    @property
    def yaw(self) -> float:
        """Heading of the local x axis in the horizontal plane."""
        return math.atan2(self.rotation[1, 0], self.rotation[0, 0])

    def is_valid(self, tol: float = 1e-9) -> bool:
        r = self.rotation
        return (
            np.linalg.norm(r.T @ r - np.eye(3)) <= tol
            and abs(np.linalg.det(r) - 1.0) <= tol
            and bool(np.all(np.isfinite(self.translation)))
        )

    def orthonormalized(self) -> RigidTransform:
        """Nearest proper rotation (polar factor) with the same translation."""
        u, _, vt = np.linalg.svd(self.rotation)
        return RigidTransform(u @ vt, self.translation)

    def to_row(self) -> list[float]:
        """Nine row-major rotation entries followed by the translation."""
        return [*self.rotation.reshape(-1).tolist(), *self.translation.tolist()]

    @classmethod
    def from_row(cls, values: Iterable[float]) -> RigidTransform:
        v = np.asarray(list(values), dtype=float)
        if v.shape != (12,):
            raise ValueError(f"expected 12 values, got {v.size}")
        return cls(v[:9].reshape(3, 3), v[9:])

    def __repr__(self) -> str:
        axis, angle = rotation_log(self.rotation)
        return (
            f"RigidTransform(axis={np.round(axis, 6).tolist()}, angle={angle:.6g}, "
            f"translation={np.round(self.translation, 6).tolist()})"
        )


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """``a @ b``: apply ``b`` first, then ``a``."""
    return RigidTransform(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def inverse(t: RigidTransform) -> RigidTransform:
    rt = t.rotation.T
    return RigidTransform(rt, -rt @ t.translation)


def rodrigues(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rotation ``I + sin(a)[w] + (1 - cos(a))[w]^2`` about a unit axis."""
    if angle == 0.0:
        return np.eye(3)
    axis = np.asarray(axis, dtype=float)
    if abs(np.linalg.norm(axis) - 1.0) > 1e-9:
        raise NonUnitAxis(f"axis norm {np.linalg.norm(axis):.3g} is not 1")
    w = skew(axis)
    return np.eye(3) + math.sin(angle) * w + (1.0 - math.cos(angle)) * (w @ w)


def rotation_log(r: np.ndarray) -> tuple[np.ndarray, float]:
    """Axis and angle of a rotation matrix, angle in ``[0, pi]``.

    A zero rotation returns the zero vector as its (unconstrained) axis.
    Near ``pi`` the axis comes from the symmetric part of ``R``, which keeps
    full precision where ``sin`` vanishes; the sign follows the skew part.
    """
    r = np.asarray(r, dtype=float)
    if np.linalg.norm(r.T @ r - np.eye(3)) > ORTHONORMAL_TOL or np.linalg.det(r) < 0:
        raise NonOrthonormalInput("matrix is not a proper rotation")
    s_vec = 0.5 * vee(r - r.T)
    s = float(np.linalg.norm(s_vec))
    c = 0.5 * (float(np.trace(r)) - 1.0)
    angle = math.atan2(s, c)
    if angle < PURE_TRANSLATION:
        return np.zeros(3), 0.0
    if angle < 0.75 * math.pi:
        return s_vec / s, angle
    # (R + R^T)/2 = I + (1 - c)[w]^2  =>  w w^T = ((R + R^T)/2 - c I) / (1 - c)
    outer = (0.5 * (r + r.T) - c * np.eye(3)) / (1.0 - c)
    k = int(np.argmax(np.diag(outer)))
    axis = outer[:, k] / math.sqrt(outer[k, k])
    axis /= np.linalg.norm(axis)
    if float(axis @ s_vec) < 0.0:
        axis = -axis
    return axis, angle


def twist_gain(angle: float, w: np.ndarray) -> np.ndarray:
    """``G(a) = I a + (1 - cos a)[w] + (a - sin a)[w]^2``."""
    return angle * np.eye(3) + (1.0 - math.cos(angle)) * w + (angle - math.sin(angle)) * (w @ w)


def twist_gain_inverse(angle: float, w: np.ndarray) -> np.ndarray:
    """Closed-form inverse of :func:`twist_gain`; singular at zero angle."""
    k = 1.0 / angle - 0.5 / math.tan(0.5 * angle)
    return np.eye(3) / angle - 0.5 * w + k * (w @ w)


def gain_coefficients(angle: float, u: float, taylor: bool | None = None) -> tuple[float, float, float]:
    """Coefficients of ``G(a u) G^-1(a)`` on the basis ``{I, [w], [w]^2}``.

    ``taylor`` forces one branch; by default the expansion is used below
    ``TAYLOR_SWITCH``.
    """
    au = angle * u
    if taylor is None:
        taylor = angle < TAYLOR_SWITCH
    if taylor:
        a2 = angle * angle
        big_a = 0.5 * u * u * angle - (u * u + u**4) * angle * a2 / 24.0
        big_b = u - (u / 12.0 + u**3 / 6.0) * a2
    else:
        half_tan = 2.0 * math.tan(0.5 * angle)
        big_a = (1.0 - math.cos(au)) / half_tan
        big_b = math.sin(au) / half_tan
    return u, big_a - 0.5 * math.sin(au), u - 0.5 * (1.0 - math.cos(au)) - big_b


def gain_product(angle: float, u: float, w: np.ndarray, taylor: bool | None = None) -> np.ndarray:
    """The matrix ``G(a u) G^-1(a)`` that maps ``p`` to ``p_u``."""
    c0, c1, c2 = gain_coefficients(angle, u, taylor)
    return c0 * np.eye(3) + c1 * w + c2 * (w @ w)


@dataclass(frozen=True, eq=False)
class InterpolationPrecompute:
    """The constant screw data of a base transform, reused for many powers."""

    axis: np.ndarray
    angle: float
    w: np.ndarray
    w2: np.ndarray
    translation: np.ndarray

    @classmethod
    def of(cls, t: RigidTransform) -> InterpolationPrecompute:
        axis, angle = rotation_log(t.rotation)
        w = skew(axis)
        return cls(axis, angle, w, w @ w, t.translation.copy())

    @property
    def pure_translation(self) -> bool:
        return self.angle == 0.0

    def at(self, u: float) -> RigidTransform:
        if self.pure_translation:
            return RigidTransform(np.eye(3), self.translation * u)
        au = self.angle * u
        rot = np.eye(3) + math.sin(au) * self.w + (1.0 - math.cos(au)) * self.w2
        c0, c1, c2 = gain_coefficients(self.angle, u)
        p = c0 * self.translation + c1 * (self.w @ self.translation) + c2 * (self.w2 @ self.translation)
        return RigidTransform(rot, p)


def power(t: RigidTransform, u: float) -> RigidTransform:
    """The matrix power ``t**u`` along the screw motion of ``t``.

    ``u`` outside ``[0, 1]`` is allowed; the rotation angle ``a u`` is not
    wrapped, so callers keep ``|a u| <= pi``.
    """
    if u == 0.0:
        return RigidTransform.identity()
    if u == 1.0:
        return t
    return InterpolationPrecompute.of(t).at(u)


def interpolate(a: RigidTransform, b: RigidTransform, u: float) -> RigidTransform:
    """``a**(1 - u) @ b**u``; returns ``a`` at ``u = 0`` and ``b`` at ``u = 1``."""
    return compose(power(a, 1.0 - u), power(b, u))


def angle_of(t: RigidTransform) -> float:
    return rotation_log(t.rotation)[1]


def near_half_turn(t: RigidTransform) -> bool:
    """Rotation within ``NEAR_PI`` of pi, where the log axis sign is ambiguous."""
    return angle_of(t) > math.pi - NEAR_PI


def frobenius_distance(a: RigidTransform, b: RigidTransform) -> float:
    return float(np.linalg.norm(a.as_matrix() - b.as_matrix()))
