"""SE(3)/SO(3) arithmetic.

Two layers live here:

* ``Rotation`` and ``Pose``: small immutable value types used by the
  manager, the simulator and the file formats.  Quaternions are stored in
  ``(qx, qy, qz, qw)`` order everywhere.
* Batched array functions (``so3_exp``, ``se3_log``, ``se3_right_jacobian_inv``
  ...) operating on stacks of rotation matrices / twists.  The solver works
  on these directly.

Twists are ordered ``[rho, phi]`` (translation first).  Pose increments are
applied on the right: ``P <- P o exp(delta)``.
"""
from __future__ import annotations

import math
import warnings

import numpy as np
from scipy.spatial.transform import Rotation as _ScipyRotation

# below this angle the exp/log coefficients switch to Taylor series
SMALL_ANGLE = 1e-8
# Jacobian coefficients lose precision much earlier than sin(x)/x does
_JAC_SMALL_ANGLE = 1e-2
# log() warns past this angle: the rotation axis is no longer unique
DEGENERATE_ANGLE = math.pi - 1e-6


class DegenerateRotationWarning(RuntimeWarning):
    """Logarithm requested for a rotation angle too close to pi."""


# ---------------------------------------------------------------------------
# batched helpers
# ---------------------------------------------------------------------------

def hat(v):
    """Skew-symmetric matrix of ``v`` (shape ``(..., 3)`` -> ``(..., 3, 3)``)."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def _angle(phi):
    return np.sqrt(np.einsum("...i,...i->...", phi, phi))


def _coeffs_exp(theta):
    """sin(t)/t and (1-cos t)/t^2."""
    small = theta < SMALL_ANGLE
    t = np.where(small, 1.0, theta)
    a = np.where(small, 1.0 - theta**2 / 6.0, np.sin(t) / t)
    b = np.where(small, 0.5 - theta**2 / 24.0, (1.0 - np.cos(t)) / t**2)
    return a, b


def _coeff_c(theta):
    """(t - sin t)/t^3."""
    small = theta < _JAC_SMALL_ANGLE
    t = np.where(small, 1.0, theta)
    th2 = theta**2
    return np.where(small, 1.0 / 6.0 - th2 / 120.0 + th2**2 / 5040.0,
                    (t - np.sin(t)) / t**3)


def _coeff_d(theta):
    """1/t^2 - (1 + cos t)/(2 t sin t), the Jl^-1 quadratic coefficient."""
    small = theta < _JAC_SMALL_ANGLE
    t = np.where(small, 1.0, theta)
    th2 = theta**2
    return np.where(small, 1.0 / 12.0 + th2 / 720.0 + th2**2 / 30240.0,
                    1.0 / t**2 - (1.0 + np.cos(t)) / (2.0 * t * np.sin(t)))


def so3_exp(phi):
    phi = np.asarray(phi, dtype=float)
    theta = _angle(phi)
    a, b = _coeffs_exp(theta)
    K = hat(phi)
    return np.eye(3) + a[..., None, None] * K + b[..., None, None] * (K @ K)


def matrix_to_quat(R):
    return _ScipyRotation.from_matrix(np.asarray(R, dtype=float)).as_quat()


def quat_to_matrix(q):
    return _ScipyRotation.from_quat(np.asarray(q, dtype=float)).as_matrix()


def quat_log(q):
    """Rotation vector of unit quaternion(s); robust up to and including pi."""
    q = np.asarray(q, dtype=float)
    w = q[..., 3]
    v = q[..., :3] * np.where(w < 0, -1.0, 1.0)[..., None]
    w = np.abs(w)
    n = np.sqrt(np.einsum("...i,...i->...", v, v))
    theta = 2.0 * np.arctan2(n, w)
    small = n < 0.5 * SMALL_ANGLE
    safe_n = np.where(small, 1.0, n)
    # theta / n -> 2/w for small n
    scale = np.where(small, 2.0 / np.where(w == 0, 1.0, w), theta / safe_n)
    return v * scale[..., None]


def so3_log(R):
    """Rotation vector(s) of rotation matrices.

    Uses the skew part directly; rotations within ~0.45 rad of pi go through
    the quaternion, where the skew part loses precision.
    """
    R = np.asarray(R, dtype=float)
    v = 0.5 * np.stack([R[..., 2, 1] - R[..., 1, 2],
                        R[..., 0, 2] - R[..., 2, 0],
                        R[..., 1, 0] - R[..., 0, 1]], axis=-1)
    c = 0.5 * (R[..., 0, 0] + R[..., 1, 1] + R[..., 2, 2] - 1.0)
    s = np.sqrt(np.einsum("...i,...i->...", v, v))
    theta = np.arctan2(s, c)
    small = theta < 1e-4
    th2 = theta * theta
    scale = np.where(small, 1.0 + th2 / 6.0 + 7.0 * th2 * th2 / 360.0,
                     theta / np.where(small, 1.0, s))
    out = v * scale[..., None]
    far = c < -0.9
    if np.any(far):
        out[far] = quat_log(matrix_to_quat(R[far]))
    return out


def so3_left_jacobian(phi):
    phi = np.asarray(phi, dtype=float)
    theta = _angle(phi)
    _, b = _coeffs_exp(theta)
    c = _coeff_c(theta)
    K = hat(phi)
    return np.eye(3) + b[..., None, None] * K + c[..., None, None] * (K @ K)


def so3_left_jacobian_inv(phi):
    phi = np.asarray(phi, dtype=float)
    theta = _angle(phi)
    d = _coeff_d(theta)
    K = hat(phi)
    return np.eye(3) - 0.5 * K + d[..., None, None] * (K @ K)


def se3_exp(xi):
    """Twist(s) ``[rho, phi]`` -> ``(R, t)``."""
    xi = np.asarray(xi, dtype=float)
    rho, phi = xi[..., :3], xi[..., 3:]
    R = so3_exp(phi)
    t = np.einsum("...ij,...j->...i", so3_left_jacobian(phi), rho)
    return R, t


def se3_log(R, t):
    phi = so3_log(R)
    rho = np.einsum("...ij,...j->...i", so3_left_jacobian_inv(phi), np.asarray(t, dtype=float))
    return np.concatenate([rho, phi], axis=-1)


def _q_matrix(xi):
    """Off-diagonal block of the SE(3) left Jacobian."""
    rho, phi = xi[..., :3], xi[..., 3:]
    theta = _angle(phi)
    small = theta < _JAC_SMALL_ANGLE
    t = np.where(small, 1.0, theta)
    th2 = theta**2
    c1 = _coeff_c(theta)
    c2 = np.where(small, 1.0 / 24.0 - th2 / 720.0 + th2**2 / 40320.0,
                  (t**2 + 2.0 * np.cos(t) - 2.0) / (2.0 * t**4))
    c3 = np.where(small, 1.0 / 120.0 - th2 / 2520.0 + th2**2 / 120960.0,
                  (2.0 * t - 3.0 * np.sin(t) + t * np.cos(t)) / (2.0 * t**5))
    P = hat(phi)
    Rh = hat(rho)
    PR = P @ Rh
    RP = Rh @ P
    PRP = PR @ P
    PP = P @ P
    return (0.5 * Rh
            + c1[..., None, None] * (PR + RP + PRP)
            + c2[..., None, None] * (PP @ Rh + RP @ P - 3.0 * PRP)
            + c3[..., None, None] * (PRP @ P + P @ PRP))


def se3_left_jacobian_inv(xi):
    xi = np.asarray(xi, dtype=float)
    Jinv = so3_left_jacobian_inv(xi[..., 3:])
    Q = _q_matrix(xi)
    out = np.zeros(xi.shape[:-1] + (6, 6))
    out[..., :3, :3] = Jinv
    out[..., 3:, 3:] = Jinv
    out[..., :3, 3:] = -Jinv @ Q @ Jinv
    return out


def se3_right_jacobian_inv(xi):
    return se3_left_jacobian_inv(-np.asarray(xi, dtype=float))


def se3_adjoint(R, t):
    R = np.asarray(R, dtype=float)
    out = np.zeros(R.shape[:-2] + (6, 6))
    out[..., :3, :3] = R
    out[..., 3:, 3:] = R
    out[..., :3, 3:] = hat(t) @ R
    return out


# ---------------------------------------------------------------------------
# value types
# ---------------------------------------------------------------------------

def _quat_mul(a, b):
    ax, ay, az, aw = a
    bx, by, bz, bw = b
    return (
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
        aw * bw - ax * bx - ay * by - az * bz,
    )


def _normalized(q):
    n = math.sqrt(sum(c * c for c in q))
    if not math.isfinite(n) or n == 0.0:
        raise ValueError(f"cannot normalize quaternion {q!r}")
    # already unit: keep the bits so that parse/serialize round trips are exact
    if abs(n - 1.0) <= 1e-15:
        return tuple(map(float, q))
    return tuple(float(c) / n for c in q)


class Rotation:
    """Unit quaternion rotation, ``(qx, qy, qz, qw)``."""

    __slots__ = ("_q", "_R")

    def __init__(self, q=(0.0, 0.0, 0.0, 1.0)):
        if type(q) is not tuple or len(q) != 4:
            q = tuple(np.asarray(q, dtype=float).reshape(4).tolist())
        self._q = _normalized(q)
        self._R = None

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def from_matrix(cls, R):
        return cls(matrix_to_quat(R))

    @classmethod
    def from_rotvec(cls, phi):
        phi = np.asarray(phi, dtype=float)
        theta = float(np.linalg.norm(phi))
        if theta < SMALL_ANGLE:
            half = 0.5 - theta**2 / 48.0
            w = 1.0 - theta**2 / 8.0
        else:
            half = math.sin(0.5 * theta) / theta
            w = math.cos(0.5 * theta)
        return cls((phi[0] * half, phi[1] * half, phi[2] * half, w))

    @classmethod
    def about_z(cls, yaw):
        return cls((0.0, 0.0, math.sin(0.5 * yaw), math.cos(0.5 * yaw)))

    @property
    def quat(self):
        return np.array(self._q)

    @property
    def matrix(self):
        if self._R is None:
            self._R = quat_to_matrix(self._q)
            self._R.flags.writeable = False
        return self._R

    def inverse(self):
        x, y, z, w = self._q
        return Rotation((-x, -y, -z, w))

    def __mul__(self, other):
        if not isinstance(other, Rotation):
            return NotImplemented
        return Rotation(_quat_mul(self._q, other._q))

    def apply(self, v):
        return self.matrix @ np.asarray(v, dtype=float)

    def log(self):
        return quat_log(np.array(self._q))

    def angle(self):
        x, y, z, w = self._q
        return 2.0 * math.atan2(math.sqrt(x * x + y * y + z * z), abs(w))

    def yaw(self):
        """Heading of the body x axis projected on the horizontal plane."""
        R = self.matrix
        return math.atan2(R[1, 0], R[0, 0])

    def __eq__(self, other):
        if not isinstance(other, Rotation):
            return NotImplemented
        return rotational_distance(self, other) < 1e-12

    __hash__ = None

    def __repr__(self):
        return "Rotation(({:.6g}, {:.6g}, {:.6g}, {:.6g}))".format(*self._q)


class Pose:
    """Rigid transform ``x -> R x + t``."""

    __slots__ = ("rotation", "_t")

    def __init__(self, rotation=None, translation=(0.0, 0.0, 0.0)):
        if rotation is None:
            rotation = Rotation()
        elif not isinstance(rotation, Rotation):
            rotation = Rotation(rotation)
        t = np.array(translation, dtype=float).reshape(3)
        t.flags.writeable = False
        self.rotation = rotation
        self._t = t

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def from_matrix(cls, T):
        T = np.asarray(T, dtype=float)
        return cls(Rotation.from_matrix(T[:3, :3]), T[:3, 3])

    @classmethod
    def from_rt(cls, R, t):
        return cls(Rotation.from_matrix(R), t)

    @classmethod
    def from_array(cls, arr):
        """``[x, y, z, qx, qy, qz, qw]``."""
        arr = np.asarray(arr, dtype=float)
        return cls(Rotation(arr[3:7]), arr[:3])

    @property
    def translation(self):
        return self._t

    @property
    def quat(self):
        return self.rotation.quat

    def to_array(self):
        return np.concatenate([self._t, self.rotation.quat])

    def matrix(self):
        T = np.eye(4)
        T[:3, :3] = self.rotation.matrix
        T[:3, 3] = self._t
        return T

    def inverse(self):
        rinv = self.rotation.inverse()
        return Pose(rinv, -rinv.apply(self._t))

    def __matmul__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return compose(self, other)

    def __repr__(self):
        t = self._t
        return f"Pose(t=[{t[0]:.6g}, {t[1]:.6g}, {t[2]:.6g}], {self.rotation!r})"


def compose(a: Pose, b: Pose) -> Pose:
    return Pose(a.rotation * b.rotation, a.rotation.apply(b.translation) + a.translation)


def inverse(p: Pose) -> Pose:
    return p.inverse()


def relative(a: Pose, b: Pose) -> Pose:
    """``inverse(a) o b``: ``b`` expressed in the frame of ``a``."""
    rinv = a.rotation.inverse()
    return Pose(rinv * b.rotation, rinv.apply(b.translation - a.translation))


def transform_point(p: Pose, x) -> np.ndarray:
    return p.rotation.apply(x) + p.translation


def exp(xi) -> Pose:
    xi = np.asarray(xi, dtype=float).reshape(6)
    rot = Rotation.from_rotvec(xi[3:])
    t = so3_left_jacobian(xi[3:]) @ xi[:3]
    return Pose(rot, t)


def log(p: Pose) -> np.ndarray:
    """Twist of ``p``.

    Warns with :class:`DegenerateRotationWarning` when the rotation angle is
    within 1e-6 of pi; the returned value is still finite (the quaternion
    branch picks one of the two axes).
    """
    phi = p.rotation.log()
    if float(np.linalg.norm(phi)) > DEGENERATE_ANGLE:
        warnings.warn("rotation angle close to pi; log axis is ambiguous",
                      DegenerateRotationWarning, stacklevel=2)
    rho = so3_left_jacobian_inv(phi) @ p.translation
    return np.concatenate([rho, phi])


def rotational_distance(a: Rotation, b: Rotation) -> float:
    """Geodesic angle between two rotations, in ``[0, pi]``."""
    if isinstance(a, Pose):
        a = a.rotation
    if isinstance(b, Pose):
        b = b.rotation
    return (a.inverse() * b).angle()


def translational_distance(a: Pose, b: Pose) -> float:
    return float(np.linalg.norm(a.translation - b.translation))


def stack(poses):
    """Rotation matrices ``(N, 3, 3)`` and translations ``(N, 3)`` of ``poses``."""
    if not poses:
        return np.zeros((0, 3, 3)), np.zeros((0, 3))
    q = np.array([p.rotation._q for p in poses])
    t = np.array([p.translation for p in poses])
    return quat_to_matrix(q), t


def unstack(R, t):
    if not len(R):
        return []
    q = matrix_to_quat(R)
    q /= np.linalg.norm(q, axis=1)[:, None]
    t = np.array(t, dtype=float)
    t.flags.writeable = False
    out = []
    for qi, ti in zip(q.tolist(), t):
        rot = Rotation.__new__(Rotation)
        rot._q, rot._R = tuple(qi), None
        pose = Pose.__new__(Pose)
        pose.rotation, pose._t = rot, ti
        out.append(pose)
    return out
