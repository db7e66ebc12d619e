"""Geometric diagnostics for the symplectic layer.

Everything here verifies structure rather than producing it: the splitting
of TTQ induced by the two boundary maps, the discrete Lagrange one-form and
the two-form obtained from it by numerical exterior differentiation, the
discrete momentum attached to a symmetry generator, a multiplier-free check
that a step actually solves the underlying variational problem, and energy.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from . import boundary as bnd
from . import del_solver, model
from .boundary import Bias
from .errors import GeneratorNotTangent, RankLoss
from .model import ProblemSpec, State, TangentVector
from .standard_layer import LayerLike, as_layer

_RANK_RTOL = 1e-9


@dataclass(frozen=True)
class GroupActionSpec:
    """Linear symmetry action: one N x N generator matrix per algebra element.

    A generator X acts infinitesimally by q -> X q, lifted to (q, v) ->
    (X q, X v); it must be tangent to the constraint set, Dg(q) X q = 0 on
    g = 0.
    """

    generators: tuple
    labels: tuple

    def __post_init__(self):
        object.__setattr__(
            self, "generators", tuple(np.asarray(g, float) for g in self.generators)
        )
        object.__setattr__(self, "labels", tuple(self.labels))
        if len(self.generators) != len(self.labels):
            raise ValueError("one label per generator required")


@dataclass
class VariationBasis:
    """Orthonormal basis of T_wTTQ split by the boundary-map kernels.

    Columns of ``plus`` span ker D(P o hat_minus) within TTQ, columns of
    ``minus`` span ker D(P o hat_plus); together they span the whole space.
    """

    w: State
    ttq: np.ndarray                 # 2N x 2(N-d)
    plus: np.ndarray                # 2N x (N-d)
    minus: np.ndarray               # 2N x (N-d)
    bd: bnd.BoundaryData
    d_minus_map: np.ndarray         # N x 2N, derivative of the projected minus map
    d_plus_map: np.ndarray
    pair_minus: tuple               # (q, theta) projection pair of hat_minus
    pair_plus: tuple

    @property
    def dim(self) -> int:
        return self.ttq.shape[1]


def ttq_basis(spec: ProblemSpec, w: State) -> np.ndarray:
    """Orthonormal basis of the tangent space of TQ at w (columns)."""
    n, d = spec.N, spec.d
    dg = spec.d_constraint(w.q)
    mixed = spec.d2_constraint_contract(w.q, w.v)
    cond = np.zeros((2 * d, 2 * n))
    cond[:d, :n] = dg
    cond[d:, :n] = mixed
    cond[d:, n:] = dg
    basis = scipy.linalg.null_space(cond)
    if basis.shape[1] != 2 * (n - d):
        raise RankLoss(
            f"TTQ dimension {basis.shape[1]}, expected {2 * (n - d)} (Dg rank loss?)"
        )
    return basis


def variation_basis(
    layer: LayerLike,
    spec: ProblemSpec,
    w: State,
    h: float,
    bias: Bias,
    substeps: int = 1,
    project_tol: float = 1e-13,
) -> VariationBasis:
    """Split T_wTTQ by the kernels of the projected boundary-map derivatives."""
    lay = as_layer(layer)
    bd = bnd.boundary_data(lay, spec, w, h, bias, substeps)
    qm, thm = bnd.project(spec, bd.hat_minus, w.q, project_tol)
    qp, thp = bnd.project(spec, bd.hat_plus, w.q, project_tol)
    d_minus = bnd.dproject_columns(spec, qm, thm, bd.D_hat_minus)
    d_plus = bnd.dproject_columns(spec, qp, thp, bd.D_hat_plus)

    big = ttq_basis(spec, w)

    def sub_basis(constraint_map):
        reduced = constraint_map @ big
        null = scipy.linalg.null_space(reduced, rcond=_RANK_RTOL)
        if null.shape[1] != spec.N - spec.d:
            raise RankLoss(
                f"boundary-kernel dimension {null.shape[1]}, expected {spec.N - spec.d}"
            )
        vectors, _ = np.linalg.qr(big @ null)
        return vectors

    plus = sub_basis(d_minus)
    minus = sub_basis(d_plus)
    joint = np.hstack([plus, minus])
    sing = np.linalg.svd(joint, compute_uv=False)
    # The splitting is oblique: its conditioning degrades like 1/h, which is
    # fine; only genuine degeneracy is an error.
    if sing[-1] <= _RANK_RTOL * sing[0]:
        raise RankLoss("boundary-kernel sub-bases do not jointly span TTQ")
    return VariationBasis(
        w=w,
        ttq=big,
        plus=plus,
        minus=minus,
        bd=bd,
        d_minus_map=d_minus,
        d_plus_map=d_plus,
        pair_minus=(qm, thm),
        pair_plus=(qp, thp),
    )


def _as_delta(dw) -> np.ndarray:
    if isinstance(dw, TangentVector):
        return np.concatenate([dw.dq, dw.dv])
    return np.asarray(dw, float)


def split_variation(basis: VariationBasis, dw):
    """Decompose dw = dw_plus + dw_minus along the two kernel sub-bases."""
    delta = _as_delta(dw)
    joint = np.hstack([basis.plus, basis.minus])
    coeff, *_ = np.linalg.lstsq(joint, delta, rcond=None)
    k = basis.plus.shape[1]
    return basis.plus @ coeff[:k], basis.minus @ coeff[k:]


def one_form(
    layer: LayerLike,
    spec: ProblemSpec,
    w: State,
    h: float,
    bias: Bias,
    dw,
    basis: Optional[VariationBasis] = None,
    substeps: int = 1,
) -> float:
    """Discrete Lagrange one-form: -DL_h(w) applied to the minus part of dw."""
    if basis is None:
        basis = variation_basis(layer, spec, w, h, bias, substeps)
    _, d_minus = split_variation(basis, dw)
    return float(-basis.bd.D_Lh @ d_minus)


def discrete_momentum(
    layer: LayerLike,
    spec: ProblemSpec,
    w: State,
    h: float,
    bias: Bias,
    action: GroupActionSpec,
    xi_index: int,
    basis: Optional[VariationBasis] = None,
    substeps: int = 1,
    tangency_tol: float = 1e-8,
) -> float:
    """Momentum of one symmetry generator: minus the one-form on its lift."""
    gen = action.generators[xi_index]
    gen_q = gen @ w.q
    defect = np.max(np.abs(spec.d_constraint(w.q) @ gen_q), initial=0.0)
    scale = max(1.0, float(np.max(np.abs(gen_q), initial=0.0)))
    if defect > tangency_tol * scale:
        raise GeneratorNotTangent(
            f"generator {action.labels[xi_index]!r} is not tangent to g=0 "
            f"(|Dg Xq| = {defect:.3e})"
        )
    delta = np.concatenate([gen_q, gen @ w.v])
    return -one_form(layer, spec, w, h, bias, delta, basis=basis, substeps=substeps)


def continuous_momentum(spec: ProblemSpec, w: State, action: GroupActionSpec, xi_index: int) -> float:
    """Legendre-paired momentum D_vL . (X q) of the continuous system."""
    gen = action.generators[xi_index]
    _, dv_l = model.d_lagrangian(spec, w.q, w.v)
    return float(dv_l @ (gen @ w.q))


def two_form(
    layer: LayerLike,
    spec: ProblemSpec,
    w: State,
    h: float,
    bias: Bias,
    d1,
    d2,
    fd_step: float = 1e-5,
    substeps: int = 1,
) -> float:
    """Two-form -d(theta-) by central differencing in an orthogonal chart of TQ.

    The chart moves w along its TTQ basis and retracts back onto the
    constraint; d1, d2 are extended to the constant coordinate fields of
    that chart, for which the bracket term of the exterior derivative
    vanishes.
    """
    lay = as_layer(layer)
    base = ttq_basis(spec, w)
    n = spec.N
    wvec = np.concatenate([w.q, w.v])

    def chart(s):
        point = wvec + base @ s
        return bnd.project_state(spec, point[:n], point[n:], w.q)

    def field(s, c):
        ws_p = chart(s + fd_step * c)
        ws_m = chart(s - fd_step * c)
        plus = np.concatenate([ws_p.q, ws_p.v])
        minus = np.concatenate([ws_m.q, ws_m.v])
        return (plus - minus) / (2.0 * fd_step)

    def theta_on_field(s, c):
        ws = chart(s)
        return one_form(lay, spec, ws, h, bias, field(s, c), substeps=substeps)

    c1 = base.T @ _as_delta(d1)
    c2 = base.T @ _as_delta(d2)
    d_theta = (
        theta_on_field(fd_step * c1, c2) - theta_on_field(-fd_step * c1, c2)
    ) / (2.0 * fd_step) - (
        theta_on_field(fd_step * c2, c1) - theta_on_field(-fd_step * c2, c1)
    ) / (2.0 * fd_step)
    return -d_theta


def symplecticity_defect(
    spec: ProblemSpec,
    config: del_solver.StepConfig,
    w1: State,
    fd_step: float = 1e-5,
    step_fn: Optional[Callable] = None,
) -> float:
    """Max violation of omega(DF ., DF .) = omega(., .) over TTQ basis pairs.

    ``step_fn`` defaults to the symplectic-layer step; passing the raw
    standard-layer map instead gives the negative control.
    """
    layer = config.layer()
    h, bias = config.h, config.bias
    if step_fn is None:
        step_fn = lambda w: del_solver.step(spec, config, w)[0]

    basis1 = variation_basis(layer, spec, w1, h, bias, config.substeps)
    w2 = step_fn(w1)
    w2 = bnd.project_state(spec, w2.q, w2.v, w2.q)
    base2 = ttq_basis(spec, w2)
    n = spec.N
    w1vec = np.concatenate([w1.q, w1.v])

    pushed = []
    for k in range(basis1.dim):
        delta = basis1.ttq[:, k]
        wp = w1vec + fd_step * delta
        wm = w1vec - fd_step * delta
        sp = step_fn(bnd.project_state(spec, wp[:n], wp[n:], w1.q))
        sm = step_fn(bnd.project_state(spec, wm[:n], wm[n:], w1.q))
        diff = (np.concatenate([sp.q, sp.v]) - np.concatenate([sm.q, sm.v])) / (
            2.0 * fd_step
        )
        pushed.append(base2 @ (base2.T @ diff))

    defect = 0.0
    for i in range(basis1.dim):
        for j in range(i + 1, basis1.dim):
            w1_val = two_form(
                layer, spec, w1, h, bias, basis1.ttq[:, i], basis1.ttq[:, j], fd_step,
                config.substeps,
            )
            w2_val = two_form(
                layer, spec, w2, h, bias, pushed[i], pushed[j], fd_step, config.substeps
            )
            defect = max(defect, abs(w2_val - w1_val))
    return defect


def del_residual_check(
    spec: ProblemSpec, config: del_solver.StepConfig, w1: State, w2: State
) -> float:
    """Multiplier-free discrete Euler-Lagrange residual of a purported step.

    For a basis of variations annihilated by the minus map at w1, matches
    them through the connection to variations annihilated by the plus map at
    w2 and measures the stationarity defect of the discrete action, together
    with the connection gap itself.  Both are returned as one max, the first
    normalized by the size of DL_h.
    """
    layer = config.layer()
    h, bias = config.h, config.bias
    b1 = variation_basis(layer, spec, w1, h, bias, config.substeps)
    b2 = variation_basis(layer, spec, w2, h, bias, config.substeps)

    scale = max(
        float(np.max(np.abs(b1.bd.D_Lh), initial=0.0)),
        float(np.max(np.abs(b2.bd.D_Lh), initial=0.0)),
        1e-300,
    )
    match_mat = b2.d_minus_map @ b2.minus          # N x (N-d)
    worst = 0.0
    for k in range(b1.plus.shape[1]):
        dw1 = b1.plus[:, k]
        rhs = b1.d_plus_map @ dw1
        coeff, *_ = np.linalg.lstsq(match_mat, rhs, rcond=None)
        if np.max(np.abs(match_mat @ coeff - rhs)) > 1e-8 * max(
            1.0, np.max(np.abs(rhs))
        ):
            raise RankLoss("connection matching system is rank deficient")
        dw2 = b2.minus @ coeff
        worst = max(worst, abs(b1.bd.D_Lh @ dw1 + b2.bd.D_Lh @ dw2) / scale)

    connection_gap = float(np.max(np.abs(b1.pair_plus[0] - b2.pair_minus[0])))
    return max(worst, connection_gap)


def energy(spec: ProblemSpec, w: State) -> float:
    """Legendre energy D_vL . v - L = v^T m v / 2 + V (the one-form cancels)."""
    return float(0.5 * w.v @ spec.mass(w.q) @ w.v + spec.potential(w.q))


def boundary_equivariance_defect(
    layer: LayerLike,
    spec: ProblemSpec,
    w: State,
    h: float,
    bias: Bias,
    action: GroupActionSpec,
    xi_index: int,
    eps: float,
    substeps: int = 1,
) -> float:
    """How far the projected boundary maps are from commuting with exp(eps X).

    For an equivariant layer the defect is O(eps^2), the size of the group
    element's second-order terms entering through the finite rotation.
    """
    lay = as_layer(layer)
    rot = scipy.linalg.expm(eps * action.generators[xi_index])
    moved = bnd.project_state(spec, rot @ w.q, rot @ w.v, rot @ w.q)

    worst = 0.0
    bd_w = bnd.boundary_data(lay, spec, w, h, bias, substeps)
    bd_m = bnd.boundary_data(lay, spec, moved, h, bias, substeps)
    for raw_w, raw_m in ((bd_w.hat_minus, bd_m.hat_minus), (bd_w.hat_plus, bd_m.hat_plus)):
        pw, _ = bnd.project(spec, raw_w, w.q)
        pm, _ = bnd.project(spec, raw_m, moved.q)
        worst = max(worst, float(np.max(np.abs(pm - rot @ pw))))
    return worst
