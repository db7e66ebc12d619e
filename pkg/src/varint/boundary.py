"""Boundary maps, discrete Lagrangian, and the constraint projection.

A bias (alpha-, alpha+) with alpha+ - alpha- = 1 places the two ends of the
curve segment attached to a state w at times h*alpha-+ of the standard
layer.  The q components of those ends are the raw boundary maps; the
difference of the accumulated actions is the discrete Lagrangian L_h.  Since
a numerical standard layer leaves the constraint manifold, the raw maps are
composed with the orthogonal projection P that follows the fibers

    iota(q, theta) = q + Dg(q)^T theta

back to g = 0.  The transpose of DP, needed to pull multipliers back through
the projection, is applied by solving the bordered system

    [[1 + D2(theta^T g)(q), Dg(q)^T], [Dg(q), 0]] (lhat^T, z) = (l^T, 0)

rather than ever forming DP.  (The bordered matrix is symmetric, so the same
solve also applies DP itself to tangent vectors.)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model, saddle
from .errors import NonConvergence
from .model import ProblemSpec, State
from .standard_layer import LayerLike, as_layer


@dataclass(frozen=True)
class Bias:
    alpha_minus: float
    alpha_plus: float

    def __post_init__(self):
        if abs(self.alpha_plus - self.alpha_minus - 1.0) > 1e-12:
            raise ValueError("bias must satisfy alpha+ - alpha- = 1")
        if not (-1.0 <= self.alpha_minus <= 0.0) or not (0.0 <= self.alpha_plus <= 1.0):
            raise ValueError("bias must satisfy -1 <= alpha- <= 0 <= alpha+ <= 1")

    def reversed(self) -> "Bias":
        """Bias of the time-reversed layer (roles of the two ends swapped)."""
        return Bias(-self.alpha_plus, -self.alpha_minus)


@dataclass(frozen=True)
class BoundaryData:
    """Raw boundary points, discrete Lagrangian, and their derivatives at one state."""

    hat_minus: np.ndarray       # q component of the layer at h*alpha-
    hat_plus: np.ndarray        # q component of the layer at h*alpha+
    L_h: float
    D_hat_minus: np.ndarray     # N x 2N
    D_hat_plus: np.ndarray      # N x 2N
    D_Lh: np.ndarray            # length 2N

    @property
    def n(self) -> int:
        return self.hat_minus.size

    # q/v blocks of the derivatives, in the (q, v) ordering of the jet.
    @property
    def Dq_hat_minus(self):
        return self.D_hat_minus[:, : self.n]

    @property
    def Dv_hat_minus(self):
        return self.D_hat_minus[:, self.n :]

    @property
    def Dq_hat_plus(self):
        return self.D_hat_plus[:, : self.n]

    @property
    def Dv_hat_plus(self):
        return self.D_hat_plus[:, self.n :]

    @property
    def Dq_Lh(self):
        return self.D_Lh[: self.n]

    @property
    def Dv_Lh(self):
        return self.D_Lh[self.n :]


def boundary_data(
    layer: LayerLike,
    spec: ProblemSpec,
    w: State,
    h: float,
    bias: Bias,
    substeps: int = 1,
) -> BoundaryData:
    """Evaluate both segment ends and L_h with exact derivatives from the jets."""
    lay = as_layer(layer)
    n = spec.N
    jm = lay.minus.flow_jet(spec, w, h * bias.alpha_minus, substeps)
    jp = lay.plus.flow_jet(spec, w, h * bias.alpha_plus, substeps)
    return BoundaryData(
        hat_minus=jm.q,
        hat_plus=jp.q,
        L_h=jp.S - jm.S,
        D_hat_minus=jm.jac[:n],
        D_hat_plus=jp.jac[:n],
        D_Lh=jp.S_bar - jm.S_bar,
    )


def iota(spec: ProblemSpec, q, theta) -> np.ndarray:
    """Leave the constraint set along the normal fibers: q + Dg(q)^T theta."""
    q = np.asarray(q, float)
    theta = np.atleast_1d(np.asarray(theta, float))
    return q + spec.d_constraint(q).T @ theta


_EYE_CACHE: dict = {}


def _eye(n: int) -> np.ndarray:
    if n not in _EYE_CACHE:
        _EYE_CACHE[n] = np.eye(n)
    return _EYE_CACHE[n]


def _projection_matrix(spec: ProblemSpec, q, theta) -> saddle.SaddleFactorization:
    top = _eye(spec.N) + model.weighted_constraint_hessian(spec, q, theta)
    return saddle.factor(saddle.SaddleSystem(top, spec.d_constraint(q), "plus"))


def project(
    spec: ProblemSpec,
    q_hat,
    q_guess=None,
    tol: float = 1e-13,
    max_iter: int = 30,
):
    """Invert iota: find (q, theta) with q_hat = iota(q, theta) and g(q) = 0.

    Full Newton iteration on the pair, seeded at q_guess (default q_hat) and
    the least-squares fiber coordinate.  Requires q_hat in the projection's
    basin, i.e. near the constraint set.
    """
    q_hat = np.asarray(q_hat, float)
    q = q_hat.copy() if q_guess is None else np.asarray(q_guess, float).copy()
    g_mat = spec.d_constraint(q)
    theta = np.linalg.solve(g_mat @ g_mat.T, g_mat @ (q_hat - q))
    for _ in range(max_iter):
        res_top = q + spec.d_constraint(q).T @ theta - q_hat
        res_bot = spec.constraint(q)
        if max(np.max(np.abs(res_top)), np.max(np.abs(res_bot))) <= tol:
            return q, theta
        fact = _projection_matrix(spec, q, theta)
        dq, dtheta = fact.solve(-res_top, -res_bot)
        q = q + dq
        theta = theta + dtheta
    raise NonConvergence(
        "constraint projection did not converge "
        f"(last residual {max(np.max(np.abs(res_top)), np.max(np.abs(res_bot))):.3e})",
        iterations=max_iter,
        residual=float(max(np.max(np.abs(res_top)), np.max(np.abs(res_bot)))),
    )


def project_state(
    spec: ProblemSpec, q, v, q_guess=None, tol: float = 1e-13, max_iter: int = 30
) -> State:
    """Retract (q, v) onto TQ: project q, then remove the normal part of v."""
    q2, _ = project(spec, q, q_guess, tol, max_iter)
    fact = saddle.factor(
        saddle.SaddleSystem(np.eye(spec.N), spec.d_constraint(q2), "plus")
    )
    v2, _ = fact.solve(np.asarray(v, float), np.zeros(spec.d))
    return State(q2, v2)


def dproject_transpose(spec: ProblemSpec, q, theta, lam) -> np.ndarray:
    """Pull the covector lam back through the projection at the pair (q, theta).

    Solves the bordered system above and discards the auxiliary block.
    """
    lam = np.asarray(lam, float)
    fact = _projection_matrix(spec, q, theta)
    lam_hat, _ = fact.solve(lam, np.zeros(spec.d))
    return lam_hat


def dproject_columns(spec: ProblemSpec, q, theta, columns) -> np.ndarray:
    """Apply the (symmetric) projection derivative to several columns at once."""
    columns = np.asarray(columns, float)
    fact = _projection_matrix(spec, q, theta)
    out, _ = fact.solve_columns(columns, np.zeros((spec.d, columns.shape[1])))
    return out
