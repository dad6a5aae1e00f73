"""Rigid-body dynamics of planar 1-DOF and 2-DOF arms.

Joint angles are measured from the downward vertical, so ``q = 0`` is the
stable hanging equilibrium.  All functions broadcast over leading batch
dimensions: ``q`` has shape ``(..., n_dof)``.

Two parameterizations are used:

* *standard* parameters, 10 per link ``[XX, XY, XZ, YY, YZ, ZZ, MX, MY, MZ, M]``
  expressed in the joint frame, followed by Coulomb/viscous coefficients
  ``[fc_1, fv_1, ..., fc_n, fv_n]``.
* *lumped* parameters, the closed-form regrouping that the simulators and
  the probabilistic model use:

  - 1 DOF: ``[ZZ, MX, MY]``
  - 2 DOF: ``[ZZ1 + m2 l1^2, MX1 + l1 m2, MY1, ZZ2, MX2, MY2]``
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg

from .errors import NumericalError, ParameterError, SamplingError

STANDARD_NAMES = ("XX", "XY", "XZ", "YY", "YZ", "ZZ", "MX", "MY", "MZ", "M")
MAX_CONDITION = 1e12


@dataclass(frozen=True)
class LinkInertialParams:
    """Inertial description of one link.

    ``com`` is the center of mass in the link frame (x along the link),
    ``inertia`` holds ``(Ixx, Iyy, Izz, Ixy, Ixz, Iyz)`` about the center of mass.
    """

    mass: float
    length: float
    com: tuple = (0.0, 0.0, 0.0)
    inertia: tuple = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    axis: tuple = (0.0, 0.0, 1.0)

    def __post_init__(self):
        if not self.mass > 0:
            raise ParameterError(f"link mass must be positive, got {self.mass}")
        if not self.length >= 0:
            raise ParameterError(f"link length must be non-negative, got {self.length}")
        eig = np.linalg.eigvalsh(self.inertia_tensor())
        if eig.min() < -1e-12 * max(1.0, abs(eig).max()):
            raise ParameterError("inertia tensor is not positive semidefinite")
        if not np.allclose(self.axis, (0.0, 0.0, 1.0)):
            raise ParameterError("only planar arms with joint axes along z are supported")

    def inertia_tensor(self) -> np.ndarray:
        ixx, iyy, izz, ixy, ixz, iyz = self.inertia
        return np.array([[ixx, ixy, ixz], [ixy, iyy, iyz], [ixz, iyz, izz]], dtype=float)

    def standard(self) -> np.ndarray:
        """Standard parameters about the joint frame (parallel-axis theorem)."""
        m = self.mass
        r = np.asarray(self.com, dtype=float)
        j = self.inertia_tensor() + m * (r @ r * np.eye(3) - np.outer(r, r))
        return np.array([j[0, 0], j[0, 1], j[0, 2], j[1, 1], j[1, 2], j[2, 2],
                         m * r[0], m * r[1], m * r[2], m])


@dataclass
class PlanarArm:
    """A planar serial arm with one or two revolute joints."""

    links: Sequence[LinkInertialParams]
    gravity: float = 9.81
    lumped: np.ndarray = field(init=False)

    def __post_init__(self):
        self.links = tuple(self.links)
        if len(self.links) not in (1, 2):
            raise ParameterError("only 1-DOF and 2-DOF arms are supported")
        self.lumped = lumped_from_links(self.links)

    @property
    def n_dof(self) -> int:
        return len(self.links)

    @property
    def l1(self) -> float:
        return float(self.links[0].length)

    @property
    def n_lumped(self) -> int:
        return 3 if self.n_dof == 1 else 6

    def _theta(self, theta):
        return self.lumped if theta is None else np.asarray(theta, dtype=float)

    def mass_matrix(self, q, theta=None) -> np.ndarray:
        th = self._theta(theta)
        q = np.asarray(q, dtype=float)
        if self.n_dof == 1:
            if th[0] <= 0:
                raise ParameterError("lumped inertia must be positive")
            return np.broadcast_to(th[0], q.shape[:-1] + (1, 1)).copy()
        p = self.l1 * (th[4] * np.cos(q[..., 1]) - th[5] * np.sin(q[..., 1]))
        m = np.empty(q.shape[:-1] + (2, 2))
        m[..., 0, 0] = th[0] + th[3] + 2.0 * p
        m[..., 0, 1] = m[..., 1, 0] = th[3] + p
        m[..., 1, 1] = th[3]
        return m

    def bias_and_gravity(self, q, qd, theta=None):
        """Return ``(c, g)``: Coriolis/centrifugal and gravity torques."""
        th = self._theta(theta)
        q = np.asarray(q, dtype=float)
        qd = np.asarray(qd, dtype=float)
        g0 = self.gravity
        if self.n_dof == 1:
            c = np.zeros_like(qd)
            g = g0 * (th[1] * np.sin(q) + th[2] * np.cos(q))
            return c, g
        q1, q2 = q[..., 0], q[..., 1]
        d1, d2 = qd[..., 0], qd[..., 1]
        phi = q1 + q2
        h = -self.l1 * (th[4] * np.sin(q2) + th[5] * np.cos(q2))
        c = np.stack([h * (2.0 * d1 * d2 + d2 * d2), -h * d1 * d1], axis=-1)
        g2 = g0 * (th[4] * np.sin(phi) + th[5] * np.cos(phi))
        g1 = g0 * (th[1] * np.sin(q1) + th[2] * np.cos(q1)) + g2
        return c, np.stack([g1, g2], axis=-1)

    def coriolis_matrix(self, q, qd, theta=None) -> np.ndarray:
        """Christoffel-symbol factorization ``C(q, qd)`` with ``c = C qd``."""
        th = self._theta(theta)
        q = np.asarray(q, dtype=float)
        qd = np.asarray(qd, dtype=float)
        cm = np.zeros(q.shape[:-1] + (self.n_dof, self.n_dof))
        if self.n_dof == 2:
            h = -self.l1 * (th[4] * np.sin(q[..., 1]) + th[5] * np.cos(q[..., 1]))
            cm[..., 0, 0] = h * qd[..., 1]
            cm[..., 0, 1] = h * (qd[..., 0] + qd[..., 1])
            cm[..., 1, 0] = -h * qd[..., 0]
        return cm

    def inverse_dynamics(self, q, qd, qdd, tau_f=0.0, theta=None) -> np.ndarray:
        m = self.mass_matrix(q, theta)
        c, g = self.bias_and_gravity(q, qd, theta)
        return np.einsum("...ij,...j->...i", m, np.asarray(qdd, dtype=float)) + c + g + tau_f

    def forward_dynamics(self, q, qd, tau_m, tau_f=0.0, theta=None) -> np.ndarray:
        m = self.mass_matrix(q, theta)
        c, g = self.bias_and_gravity(q, qd, theta)
        rhs = np.asarray(tau_m, dtype=float) - c - g - tau_f
        return solve_mass(m, rhs)

    def lumped_regressor(self, q, qd, qdd) -> np.ndarray:
        """``L(q, qd, qdd)`` with ``inverse_dynamics = L @ lumped``."""
        q = np.asarray(q, dtype=float)
        qd = np.asarray(qd, dtype=float)
        qdd = np.asarray(qdd, dtype=float)
        g0 = self.gravity
        if self.n_dof == 1:
            out = np.stack([qdd[..., 0], g0 * np.sin(q[..., 0]), g0 * np.cos(q[..., 0])], axis=-1)
            return out[..., None, :]
        l1 = self.l1
        q1, q2 = q[..., 0], q[..., 1]
        d1, d2 = qd[..., 0], qd[..., 1]
        a1, a2 = qdd[..., 0], qdd[..., 1]
        phi = q1 + q2
        s2, c2 = np.sin(q2), np.cos(q2)
        sp, cp = np.sin(phi), np.cos(phi)
        vel1 = 2.0 * d1 * d2 + d2 * d2
        acc1 = 2.0 * a1 + a2
        zero = np.zeros_like(q1)
        row1 = [a1, g0 * np.sin(q1), g0 * np.cos(q1), a1 + a2,
                l1 * c2 * acc1 - l1 * s2 * vel1 + g0 * sp,
                -l1 * s2 * acc1 - l1 * c2 * vel1 + g0 * cp]
        row2 = [zero, zero, zero, a1 + a2,
                l1 * c2 * a1 + l1 * s2 * d1 * d1 + g0 * sp,
                -l1 * s2 * a1 + l1 * c2 * d1 * d1 + g0 * cp]
        return np.stack([np.stack(row1, axis=-1), np.stack(row2, axis=-1)], axis=-2)

    def inverse_dynamics_jacobians(self, q, qd, qdd, theta=None):
        """Partial derivatives of ``M qdd + c + g`` w.r.t. ``q`` and ``qd``.

        Returns arrays of shape ``(..., n, n)`` indexed ``[torque, coordinate]``.
        """
        th = self._theta(theta)
        q = np.asarray(q, dtype=float)
        qd = np.asarray(qd, dtype=float)
        qdd = np.asarray(qdd, dtype=float)
        g0 = self.gravity
        n = self.n_dof
        jq = np.zeros(q.shape[:-1] + (n, n))
        jqd = np.zeros(q.shape[:-1] + (n, n))
        if n == 1:
            jq[..., 0, 0] = g0 * (th[1] * np.cos(q[..., 0]) - th[2] * np.sin(q[..., 0]))
            return jq, jqd
        l1 = self.l1
        q1, q2 = q[..., 0], q[..., 1]
        d1, d2 = qd[..., 0], qd[..., 1]
        a1, a2 = qdd[..., 0], qdd[..., 1]
        phi = q1 + q2
        p = th[4] * np.cos(q2) - th[5] * np.sin(q2)
        dp = -th[4] * np.sin(q2) - th[5] * np.cos(q2)
        gphi = g0 * (th[4] * np.cos(phi) - th[5] * np.sin(phi))
        jq[..., 0, 0] = g0 * (th[1] * np.cos(q1) - th[2] * np.sin(q1)) + gphi
        jq[..., 0, 1] = l1 * dp * (2.0 * a1 + a2) - l1 * p * (2.0 * d1 * d2 + d2 * d2) + gphi
        jq[..., 1, 0] = gphi
        jq[..., 1, 1] = l1 * dp * a1 + l1 * p * d1 * d1 + gphi
        jqd[..., 0, 0] = 2.0 * l1 * dp * d2
        jqd[..., 0, 1] = 2.0 * l1 * dp * (d1 + d2)
        jqd[..., 1, 0] = -2.0 * l1 * dp * d1
        return jq, jqd

    def regressor(self, q, qd, qdd) -> np.ndarray:
        """Standard-parameter regressor with Coulomb/viscous friction columns.

        Shape ``(..., n, 10 n + 2 n)``; multiply by :meth:`standard_vector`.
        """
        q = np.asarray(q, dtype=float)
        qd = np.asarray(qd, dtype=float)
        lump = self.lumped_regressor(q, qd, qdd)
        n = self.n_dof
        y = np.zeros(q.shape[:-1] + (n, 12 * n))
        zz, mx, my, mm = 5, 6, 7, 9
        if n == 1:
            y[..., 0, zz] = lump[..., 0, 0]
            y[..., 0, mx] = lump[..., 0, 1]
            y[..., 0, my] = lump[..., 0, 2]
        else:
            l1 = self.l1
            y[..., :, zz] = lump[..., :, 0]
            y[..., :, mx] = lump[..., :, 1]
            y[..., :, my] = lump[..., :, 2]
            y[..., :, 10 + mm] = l1 * l1 * lump[..., :, 0] + l1 * lump[..., :, 1]
            y[..., :, 10 + zz] = lump[..., :, 3]
            y[..., :, 10 + mx] = lump[..., :, 4]
            y[..., :, 10 + my] = lump[..., :, 5]
        for j in range(n):
            y[..., j, 10 * n + 2 * j] = np.sign(qd[..., j])
            y[..., j, 10 * n + 2 * j + 1] = qd[..., j]
        return y

    def standard_vector(self, coulomb=None, viscous=None) -> np.ndarray:
        n = self.n_dof
        fr = np.zeros(2 * n)
        if coulomb is not None:
            fr[0::2] = coulomb
        if viscous is not None:
            fr[1::2] = viscous
        return np.concatenate([lk.standard() for lk in self.links] + [fr])

    def standard_names(self) -> list:
        names = [f"{s}{j + 1}" for j in range(self.n_dof) for s in STANDARD_NAMES]
        for j in range(self.n_dof):
            names += [f"fc{j + 1}", f"fv{j + 1}"]
        return names

    def sample_states(self, n_samples, seed, q_range=np.pi, qd_range=3.0, qdd_range=10.0):
        rng = np.random.default_rng(seed)
        shape = (n_samples, self.n_dof)
        return (rng.uniform(-q_range, q_range, shape), rng.uniform(-qd_range, qd_range, shape),
                rng.uniform(-qdd_range, qdd_range, shape))

    def kinetic_energy(self, q, qd, theta=None):
        m = self.mass_matrix(q, theta)
        qd = np.asarray(qd, dtype=float)
        return 0.5 * np.einsum("...i,...ij,...j->...", qd, m, qd)

    def potential_energy(self, q, theta=None):
        th = self._theta(theta)
        q = np.asarray(q, dtype=float)
        g0 = self.gravity
        if self.n_dof == 1:
            return g0 * (-th[1] * np.cos(q[..., 0]) + th[2] * np.sin(q[..., 0]))
        phi = q[..., 0] + q[..., 1]
        return g0 * (-th[1] * np.cos(q[..., 0]) + th[2] * np.sin(q[..., 0])
                     - th[4] * np.cos(phi) + th[5] * np.sin(phi))


def lumped_from_links(links) -> np.ndarray:
    std = [lk.standard() for lk in links]
    if len(links) == 1:
        return std[0][[5, 6, 7]]
    l1 = links[0].length
    m2 = std[1][9]
    return np.array([std[0][5] + m2 * l1 * l1, std[0][6] + l1 * m2, std[0][7],
                     std[1][5], std[1][6], std[1][7]])


def solve_mass(m, rhs) -> np.ndarray:
    """Batched ``M^{-1} rhs`` for 1x1 and 2x2 mass matrices."""
    n = m.shape[-1]
    if n == 1:
        return rhs / m[..., 0, :]
    a, b, d = m[..., 0, 0], m[..., 0, 1], m[..., 1, 1]
    det = a * d - b * b
    tr = a + d
    # eigenvalue ratio of a symmetric 2x2 matrix
    disc = np.sqrt(np.maximum(tr * tr / 4.0 - det, 0.0))
    lo = tr / 2.0 - disc
    hi = tr / 2.0 + disc
    if np.any(lo <= 0) or np.any(hi > MAX_CONDITION * lo):
        raise NumericalError("mass matrix is singular or ill-conditioned")
    x0 = (d * rhs[..., 0] - b * rhs[..., 1]) / det
    x1 = (a * rhs[..., 1] - b * rhs[..., 0]) / det
    return np.stack([x0, x1], axis=-1)


@dataclass
class BaseParamMapping:
    """Numerical regrouping of standard parameters into base parameters.

    ``theta_base = theta_std[independent] + regroup @ theta_std[dependent]``
    and ``Y_base = Y[..., independent]``.
    """

    independent: np.ndarray
    dependent: np.ndarray
    regroup: np.ndarray
    rank: int
    seed: int | None = None

    def reduce_regressor(self, y) -> np.ndarray:
        return np.asarray(y)[..., self.independent]

    def base_from_standard(self, theta_std) -> np.ndarray:
        theta_std = np.asarray(theta_std, dtype=float)
        return theta_std[self.independent] + self.regroup @ theta_std[self.dependent]


def base_param_reduction(stacked, rel_tol=1e-9, seed=None) -> BaseParamMapping:
    """Find a maximal set of independent regressor columns by pivoted QR.

    ``stacked`` is a 2-D array of regressor rows sampled at random states.
    """
    y = np.asarray(stacked, dtype=float)
    if y.ndim != 2:
        y = y.reshape(-1, y.shape[-1])
    rows, cols = y.shape
    if rows < 10 * cols:
        raise SamplingError(f"need at least {10 * cols} sampled rows, got {rows}")
    _, r, perm = scipy.linalg.qr(y, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    if diag[0] == 0:
        raise SamplingError("sampled regressor is identically zero")
    rank = int(np.sum(diag > rel_tol * diag[0]))
    indep = np.sort(perm[:rank])
    dep = np.sort(perm[rank:])
    # regroup so that Y_dep = Y_indep @ K exactly on the sampled data
    k, *_ = np.linalg.lstsq(y[:, indep], y[:, dep], rcond=None)
    reduced = y[:, indep]
    s = np.linalg.svd(reduced, compute_uv=False)
    if s[-1] <= rel_tol * s[0]:
        raise SamplingError("reduced regressor is still rank deficient")
    return BaseParamMapping(indep, dep, k, rank, seed)


def sampled_regressor(plant: PlanarArm, n_samples=500, seed=0) -> np.ndarray:
    q, qd, qdd = plant.sample_states(n_samples, seed)
    y = plant.regressor(q, qd, qdd)
    return y.reshape(-1, y.shape[-1])
