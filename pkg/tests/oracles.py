"""Independent reference computations used only by the tests."""

from __future__ import annotations

import math

import numpy as np


def qmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def qconj(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_from_axis_angle(axis, angle) -> np.ndarray:
    axis = np.asarray(axis, float)
    return np.array([math.cos(angle / 2), *(math.sin(angle / 2) * axis)])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_from_matrix(r: np.ndarray) -> np.ndarray:
    """Shepperd's method."""
    tr = np.trace(r)
    cands = [tr, r[0, 0], r[1, 1], r[2, 2]]
    k = int(np.argmax(cands))
    if k == 0:
        s = math.sqrt(1 + tr) * 2
        q = [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
    elif k == 1:
        s = math.sqrt(1 + r[0, 0] - r[1, 1] - r[2, 2]) * 2
        q = [(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s]
    elif k == 2:
        s = math.sqrt(1 + r[1, 1] - r[0, 0] - r[2, 2]) * 2
        q = [(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s]
    else:
        s = math.sqrt(1 + r[2, 2] - r[0, 0] - r[1, 1]) * 2
        q = [(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s]
    q = np.array(q)
    return q if q[0] >= 0 else -q


class DualQuat:
    """Unit dual quaternion ``real + eps * dual`` for a rigid transform."""

    def __init__(self, real: np.ndarray, dual: np.ndarray) -> None:
        self.real = real
        self.dual = dual

    @classmethod
    def from_rt(cls, r: np.ndarray, t: np.ndarray) -> DualQuat:
        q = quat_from_matrix(r)
        return cls(q, 0.5 * qmul(np.array([0.0, *t]), q))

    def to_rt(self) -> tuple[np.ndarray, np.ndarray]:
        t = 2.0 * qmul(self.dual, qconj(self.real))
        return quat_to_matrix(self.real), t[1:]

    def __mul__(self, other: DualQuat) -> DualQuat:
        return DualQuat(
            qmul(self.real, other.real),
            qmul(self.real, other.dual) + qmul(self.dual, other.real),
        )

    def power(self, u: float) -> DualQuat:
        """Screw-parameter power (Pluecker line, angle, pitch)."""
        r, d = self.real, self.dual
        half = math.atan2(np.linalg.norm(r[1:]), r[0])
        s = math.sin(half)
        if abs(s) < 1e-12:
            t = 2.0 * qmul(d, qconj(r))[1:]
            return DualQuat(np.array([1.0, 0, 0, 0]), 0.5 * np.array([0.0, *(u * t)]))
        line = r[1:] / s
        pitch = -2.0 * d[0] / s
        moment = (d[1:] - line * 0.5 * pitch * math.cos(half)) / s
        h2, p2 = u * half, u * pitch
        real = np.array([math.cos(h2), *(math.sin(h2) * line)])
        dual = np.array([-0.5 * p2 * math.sin(h2), *(math.sin(h2) * moment + 0.5 * p2 * math.cos(h2) * line)])
        return DualQuat(real, dual)


def dq_interpolate(ra, ta, rb, tb, u):
    """``a**(1 - u) * b**u`` evaluated with dual quaternions."""
    a = DualQuat.from_rt(ra, ta)
    b = DualQuat.from_rt(rb, tb)
    return (a.power(1.0 - u) * b.power(u)).to_rt()


def random_axis(rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)
