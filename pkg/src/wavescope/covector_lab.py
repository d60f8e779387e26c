"""Lightlike covector frames in 3+1 Minkowski space and the interaction coefficients built from them.

All frames live in the Minkowski tangent frame of a base point, with the dual metric ``diag(-1, 1, 1, 1)``.
Denominators ``|zeta^a + zeta^b|^2`` are Minkowski norms of sums of frame covectors ``zeta^j = alpha_j zhat^j``.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from wavescope.base import (
    DegenerateFrameError,
    InvalidInputError,
    RankDeficiencyError,
    SingularConstructionError,
    SingularDenominatorError,
)

module_logger = logging.getLogger(__name__)

MINKOWSKI_DUAL = np.array([-1.0, 1.0, 1.0, 1.0])
FRAME_TOL = 1e-12
SINGULAR_TOL = 1e-12


def minkowski_norm2(zeta: np.ndarray) -> np.ndarray:
    """``-zeta_0^2 + |zeta'|^2`` along the last axis."""
    zeta = np.asarray(zeta, dtype=float)
    return np.sum(MINKOWSKI_DUAL * zeta**2, axis=-1)


def minkowski_pairing(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sum(MINKOWSKI_DUAL * np.asarray(a, dtype=float) * np.asarray(b, dtype=float), axis=-1)


def lightlike_gram(members: np.ndarray) -> np.ndarray:
    """Pairings ``-a_0 b_0 (1 - sgn(a_0 b_0) ahat . bhat)`` of the lightlike rows of ``members``.

    ``1 - cos`` is taken as half the squared chord between the spatial directions, which keeps nearly parallel
    rows accurate.
    """
    members = np.asarray(members, dtype=float)
    time = members[:, 0]
    directions = members[:, 1:] / np.linalg.norm(members[:, 1:], axis=1, keepdims=True)
    products = np.outer(time, time)
    chords = directions[:, None, :] - np.sign(products)[..., None] * directions[None, :, :]
    return -products * np.sum(chords**2, axis=-1) / 2


# region CovectorFrame


@dataclass(kw_only=True)
class CovectorFrame:
    kind: str
    """One of 'three', 'i3', 'four'."""
    members: np.ndarray
    """Normalized members zhat^1..zhat^J, shape (J, 4)."""
    weights: np.ndarray
    """Decomposition weights alpha_1..alpha_J."""
    target: np.ndarray
    """The decomposed covector (or vector for the three-frame)."""
    scale: float = 1.0
    """Factor lambda in ``lambda * target = sum_j alpha_j zhat^j``."""
    base_point: np.ndarray = field(default_factory=lambda: np.zeros(4))
    parameters: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("three", "i3", "four"):
            raise InvalidInputError(f"Unknown frame kind {self.kind!r}")
        self.members = np.asarray(self.members, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        self.target = np.asarray(self.target, dtype=float)
        self.base_point = np.asarray(self.base_point, dtype=float)
        n = self.members.shape[0]
        if n not in (3, 4) or self.members.shape != (n, 4):
            raise InvalidInputError(f"A frame has 3 or 4 members in 3+1 dimensions, got shape {self.members.shape}")
        if self.weights.shape != (n,) or self.target.shape != (4,):
            raise InvalidInputError("Weights and target do not match the members.")

    @property
    def size(self) -> int:
        return self.members.shape[0]

    @property
    def covectors(self) -> np.ndarray:
        """The weighted members ``zeta^j = alpha_j zhat^j``."""
        return self.weights[:, None] * self.members

    def residual(self) -> float:
        """``max |lambda * target - sum_j alpha_j zhat^j|``."""
        return float(np.max(np.abs(self.scale * self.target - self.covectors.sum(axis=0))))

    def rank(self) -> int:
        return int(np.linalg.matrix_rank(self.members))

    def null_defect(self) -> float:
        """Largest ``|zhat^j|^2``; zero for lightlike members."""
        return float(np.max(np.abs(minkowski_norm2(self.members))))

    def as_dict(self) -> dict:
        return dict(
            kind=self.kind,
            members=self.members,
            weights=self.weights,
            target=self.target,
            scale=self.scale,
            base_point=self.base_point,
            parameters=self.parameters,
            residual=self.residual(),
        )


def build_three_frame(r0: float, s: float) -> CovectorFrame:
    """Three lightlike members spanning a given lightlike w.

    ``theta_1 = (-1, 1, 0, 0)``, ``theta_{2,3} = (-1, sqrt(1 - s^2), +-s, 0)`` and
    ``w = (1, sqrt(1 - r0^2), -r0, 0)``. The weights solve the first three rows of ``sum alpha_j theta_j = w`` in
    closed form, with ``1 - sqrt(1 - s^2) = s^2 / (1 + sqrt(1 - s^2))``; the last row is verified.
    """
    if not -1.0 <= r0 <= 1.0:
        raise InvalidInputError(f"r0 must lie in [-1, 1], got {r0}")
    if not 0.0 < abs(s) < 1.0:
        raise DegenerateFrameError(f"The three-frame needs 0 < |s| < 1, got s={s} (members coincide at s=0)")
    root = math.sqrt(1.0 - s * s)
    members = np.array(
        [
            [-1.0, 1.0, 0.0, 0.0],
            [-1.0, root, s, 0.0],
            [-1.0, root, -s, 0.0],
        ]
    )
    q = math.sqrt(1.0 - r0 * r0)
    target = np.array([1.0, q, -r0, 0.0])
    inverse_gap = (1.0 + root) / (s * s)
    pair = -(1.0 + q) * inverse_gap
    weights = np.array([(q + root) * inverse_gap, (pair - r0 / s) / 2, (pair + r0 / s) / 2])
    frame = CovectorFrame(kind="three", members=members, weights=weights, target=target, parameters=dict(r0=r0, s=s))
    residual = frame.residual()
    if residual > 1e-10 * max(1.0, float(np.max(np.abs(weights)))):
        raise DegenerateFrameError(f"w does not lie in the span of the three-frame (residual {residual:.3g})")
    return frame


def build_i3_frame(phi: float, theta: float, tol: float = SINGULAR_TOL) -> CovectorFrame:
    """The frame used by the time-independence argument.

    Members ``(-1, 1, 0, 0)``, ``(-1, cos theta, +-sin theta, 0)`` decompose the target
    ``zhat = (-1, -cos phi, sin phi, 0)`` as ``lambda zhat = sum alpha_j zhat^j`` with
    ``lambda = 2 sin theta (1 - cos theta)``, ``alpha_1 = -2 sin theta (cos phi + cos theta)`` and
    ``alpha_{2,3} = sin theta (1 + cos phi) +- (1 - cos theta) sin phi``.
    """
    cp, sp, ct, st = math.cos(phi), math.sin(phi), math.cos(theta), math.sin(theta)
    if abs(cp + ct) < tol:
        raise SingularConstructionError(f"cos(phi) + cos(theta) vanishes for phi={phi}, theta={theta}")
    scale = 2.0 * st * (1.0 - ct)
    weights = np.array(
        [
            -2.0 * st * (cp + ct),
            st * (1.0 + cp) + (1.0 - ct) * sp,
            st * (1.0 + cp) - (1.0 - ct) * sp,
        ]
    )
    if abs(scale) < tol or np.any(np.abs(weights) < tol):
        raise DegenerateFrameError(f"Vanishing weight in the I3-frame for phi={phi}, theta={theta}: {weights}")
    members = np.array(
        [
            [-1.0, 1.0, 0.0, 0.0],
            [-1.0, ct, st, 0.0],
            [-1.0, ct, -st, 0.0],
        ]
    )
    target = np.array([-1.0, -cp, sp, 0.0])
    return CovectorFrame(
        kind="i3", members=members, weights=weights, target=target, scale=scale, parameters=dict(phi=phi, theta=theta)
    )


def build_four_frame(phi: float, theta: float) -> CovectorFrame:
    """Four lightlike members collapsing onto ``(-1, 1, 0, 0)`` as theta -> 0, decomposing
    ``zeta = (-1, 0, cos phi, sin phi)``; the weights come from a 4x4 solve."""
    ct, st, cp, sp = math.cos(theta), math.sin(theta), math.cos(phi), math.sin(phi)
    members = np.array(
        [
            [-1.0, 1.0, 0.0, 0.0],
            [-1.0, ct, st * sp, -st * cp],
            [-1.0, ct, -st * sp, st * cp],
            [-1.0, ct, st * cp, st * sp],
        ]
    )
    target = np.array([-1.0, 0.0, cp, sp])
    if np.linalg.matrix_rank(members, tol=1e-13) < 4:
        raise RankDeficiencyError(f"The four-frame is rank deficient for theta={theta}")
    weights = np.linalg.solve(members.T, target)
    frame = CovectorFrame(
        kind="four", members=members, weights=weights, target=target, parameters=dict(phi=phi, theta=theta)
    )
    residual = frame.residual()
    if residual > 1e-9 * max(1.0, float(np.max(np.abs(weights)))):
        raise RankDeficiencyError(f"The four-frame solve is inaccurate for theta={theta} (residual {residual:.3g})")
    return frame


def probe_directions(dim: int = 3) -> np.ndarray:
    """``dim + 1`` future lightlike Minkowski covectors with ``zeta_0 = -1/2`` whose velocities
    ``(1, n_k)`` are linearly independent."""
    if dim == 1:
        normals = [np.array([1.0]), np.array([-1.0])]
    else:
        normals = [np.eye(dim)[k] for k in range(dim)] + [-np.ones(dim) / math.sqrt(dim)]
    return np.array([np.concatenate([[-0.5], 0.5 * n]) for n in normals])


# endregion CovectorFrame
# region interaction coefficients


@dataclass(kw_only=True)
class InteractionCoefficients:
    C: Optional[float] = None
    D: Optional[float] = None
    curly_c: Optional[float] = None
    """``C beta2^3 + D beta2 beta3 + beta4``."""
    I3: Optional[float] = None
    I3_closed_form: Optional[float] = None
    sum_identity: Optional[float] = None

    def as_dict(self, verbose: bool = False) -> dict:
        values = dict(
            C=self.C,
            D=self.D,
            curly_c=self.curly_c,
            I3=self.I3,
            I3_closed_form=self.I3_closed_form,
            sum_identity=self.sum_identity,
        )
        if verbose:
            return values
        return {key: value for key, value in values.items() if value is not None}


class _Quotients:
    """Caches ``(sum zeta_0)^2 / |sum zeta|^2`` over index subsets of a frame.

    Norms of sums are expanded in the weights over the member pairings, which :func:`lightlike_gram` supplies for
    lightlike frames.
    """

    def __init__(self, frame: CovectorFrame, tol: float):
        self.covectors = frame.covectors
        self.weights = frame.weights
        members = frame.members
        if frame.null_defect() <= FRAME_TOL:
            self.gram = lightlike_gram(members)
        else:
            self.gram = minkowski_pairing(members[:, None, :], members[None, :, :])
        self.tol = tol
        self._cache: dict[frozenset, float] = {}

    def denominator(self, indices: Sequence[int]) -> float:
        indices = list(indices)
        total = self.covectors[indices].sum(axis=0)
        weights = self.weights[indices]
        norm2 = float(weights @ self.gram[np.ix_(indices, indices)] @ weights)
        if abs(norm2) <= self.tol * float(np.dot(total, total)):
            raise SingularDenominatorError(f"|zeta^{list(indices)} sum|^2 is null", indices)
        return norm2

    def __call__(self, *indices: int) -> float:
        key = frozenset(indices)
        if key not in self._cache:
            zeta0 = float(self.covectors[list(indices), 0].sum())
            self._cache[key] = zeta0 * zeta0 / self.denominator(indices)
        return self._cache[key]


def i3_closed_form(phi: float, theta: float) -> float:
    return (2.0 * math.cos(theta) + 1.0) / (2.0 * (math.cos(phi) + math.cos(theta)))


def interaction_sums(
    frame: CovectorFrame,
    beta2: float = 0.0,
    beta3: float = 0.0,
    beta4: float = 0.0,
    tol: float = SINGULAR_TOL,
) -> InteractionCoefficients:
    """Permutation sums over the weighted frame covectors.

    For four members, ``C = sum (4 T(i,j,k) + T(i,l)) T(j,k)`` and ``D = sum (3 T(k,l) + 2 T(i,j,k))`` over all
    ordered permutations ``(i,j,k,l)``, with ``T(a,...) = (sum zeta_0)^2 / |sum zeta|^2``; the coefficient is
    ``C beta2^3 + D beta2 beta3 + beta4``.

    For three members, the sum identity ``sum_cyc T(j,k)`` (which equals -1) and
    ``I3 = -sum_cyc (zeta_0^i + zeta_0^j + zeta_0^k)(zeta_0^j + zeta_0^k) / |zeta^j + zeta^k|^2``; I3 frames also
    report the closed form ``(2 cos theta + 1) / (2 (cos phi + cos theta))``.

    Raises:
        SingularDenominatorError: naming the index set whose sum is null.
    """
    if not isinstance(frame, CovectorFrame):
        raise TypeError(f"frame must be a CovectorFrame, got {type(frame)!r}")
    covectors = frame.covectors
    quotient = _Quotients(frame, tol)
    if frame.size == 4:
        C = D = 0.0
        for i, j, k, l in itertools.permutations(range(4)):
            C += (4.0 * quotient(i, j, k) + quotient(i, l)) * quotient(j, k)
            D += 3.0 * quotient(k, l) + 2.0 * quotient(i, j, k)
        return InteractionCoefficients(C=C, D=D, curly_c=C * beta2**3 + D * beta2 * beta3 + beta4)

    total0 = float(covectors[:, 0].sum())
    identity = 0.0
    i3 = 0.0
    for i in range(3):
        j, k = (idx for idx in range(3) if idx != i)
        pair0 = float(covectors[j, 0] + covectors[k, 0])
        denominator = quotient.denominator((j, k))
        identity += pair0 * pair0 / denominator
        i3 -= total0 * pair0 / denominator
    closed = None
    if frame.kind == "i3":
        closed = i3_closed_form(frame.parameters["phi"], frame.parameters["theta"])
    return InteractionCoefficients(I3=i3, I3_closed_form=closed, sum_identity=identity)


# endregion interaction coefficients
# region Laurent fits


@dataclass(kw_only=True)
class LaurentFit:
    orders: tuple[int, ...]
    coefficients: np.ndarray
    residual: float
    """Root mean square of the fit residual."""

    def coefficient(self, order: int) -> float:
        return float(self.coefficients[self.orders.index(order)])

    def __call__(self, s: float | np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        return sum(c * s**k for k, c in zip(self.orders, self.coefficients))

    def as_dict(self) -> dict:
        return dict(orders=list(self.orders), coefficients=self.coefficients, residual=self.residual)


def fit_laurent(
    samples: Sequence[tuple[float, float]],
    orders: Sequence[int] = (-3, -2, -1, 0),
) -> LaurentFit:
    """Least-squares fit of ``sum_k c_k s^k``.

    Columns are normalized before solving so that negative powers at small s do not dominate the conditioning.

    Raises:
        InvalidInputError: If there are fewer distinct nonzero s values than orders.
        RankDeficiencyError: If the design matrix is rank deficient.
    """
    orders = tuple(int(k) for k in orders)
    data = np.asarray(samples, dtype=float)
    if data.ndim != 2 or data.shape[1] != 2:
        raise InvalidInputError(f"samples must be (s, value) pairs, got shape {data.shape}")
    s, values = data[:, 0], data[:, 1]
    if np.any(s == 0) and min(orders) < 0:
        raise InvalidInputError("s = 0 cannot be used with negative orders.")
    if np.unique(s).size < len(orders):
        raise InvalidInputError(f"Need at least {len(orders)} distinct s values, got {np.unique(s).size}")
    design = np.column_stack([s**k for k in orders])
    norms = np.linalg.norm(design, axis=0)
    scaled, _, rank, _ = np.linalg.lstsq(design / norms, values, rcond=None)
    if rank < len(orders):
        raise RankDeficiencyError(f"Laurent design matrix has rank {rank} < {len(orders)}")
    coefficients = scaled / norms
    residual = float(np.sqrt(np.mean((design @ coefficients - values) ** 2)))
    return LaurentFit(orders=orders, coefficients=coefficients, residual=residual)


def four_frame_expansion_variable(theta: float) -> float:
    """Expansion variable ``s = sin(theta / 2)`` of the collapsing four-frame (``1 - cos theta = 2 s^2``)."""
    return math.sin(theta / 2.0)


def four_frame_theta(s: float) -> float:
    return 2.0 * math.asin(s)


def leading_laurent_model(s: float | np.ndarray, beta2: float, beta3: float) -> np.ndarray:
    """Singular part of the four-frame coefficient predicted from the C and D expansions."""
    s = np.asarray(s, dtype=float)
    main = 4.0 * beta2**3 - 3.0 * beta2 * beta3
    sub = 40.0 * beta2**3 - 9.0 * beta2 * beta3
    return -main / (2.0 * s**3) + 7.0 * main / (2.0 * s**2) + sub / (4.0 * s)


def sweep_four_frame(
    phi: float,
    s_values: Sequence[float],
    beta2: float = 0.0,
    beta3: float = 0.0,
    beta4: float = 0.0,
) -> list[tuple[float, InteractionCoefficients]]:
    """Interaction sums of four-frames along a sequence of expansion variables."""
    return [
        (float(s), interaction_sums(build_four_frame(phi, four_frame_theta(s)), beta2, beta3, beta4))
        for s in s_values
    ]


# endregion Laurent fits
