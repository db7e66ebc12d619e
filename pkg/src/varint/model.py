"""Constrained Lagrangian systems with configuration-dependent coefficients.

A problem is the quadratic Lagrangian

    L(q, v) = 1/2 v^T m(q) v + a(q).v - V(q)

restricted to the level set Q = {g(q) = 0} of a holonomic constraint with
full-rank Jacobian Dg.  This module evaluates L and its derivatives, the
constrained acceleration field A(q, v) with its multiplier, the derivatives
of A needed to propagate first variations, and membership tests for the
tangent spaces

    TQ  = {(q, v)       : Dg(q) v = 0}
    TTQ = {(dq, dv) at w: Dg(q) dq = 0,  v^T D2g(q) dq + Dg(q) dv = 0}.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import _fd, saddle


@dataclass(frozen=True)
class State:
    """Point (q, v) of velocity phase space."""

    q: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float))


@dataclass(frozen=True)
class TangentVector:
    """Variation (dq, dv) attached to some base state."""

    dq: np.ndarray
    dv: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "dq", np.asarray(self.dq, dtype=float))
        object.__setattr__(self, "dv", np.asarray(self.dv, dtype=float))


@dataclass(frozen=True)
class ProblemSpec:
    """Evaluation functions for one constrained Lagrangian system.

    Index conventions for the derivative tensors:

      d_mass(q)[i, j, k]        = dm_ij / dq^k
      d2_mass(q)[i, j, k, l]    = d^2 m_ij / dq^k dq^l
      d_one_form(q)[i, j]       = da_i / dq^j
      d2_one_form(q)[i, j, k]   = d^2 a_i / dq^j dq^k
      d_constraint(q)[a, j]     = dg^a / dq^j
      d2_constraint_contract(q, u)[a, j]     = u^i d^2 g^a / dq^i dq^j
      d3_constraint_contract(q, u, w)[a, m]  = u^i w^j d^3 g^a / dq^i dq^j dq^m

    Derivative fields left as None can be filled by
    :func:`with_fd_derivatives`.  Evaluation functions must be pure; a spec
    is immutable and safe to share between threads.
    """

    N: int
    d: int
    mass: Callable
    one_form: Callable
    potential: Callable
    constraint: Callable
    d_mass: Optional[Callable] = None
    d2_mass: Optional[Callable] = None
    d_one_form: Optional[Callable] = None
    d2_one_form: Optional[Callable] = None
    d_potential: Optional[Callable] = None
    d2_potential: Optional[Callable] = None
    d_constraint: Optional[Callable] = None
    d2_constraint_contract: Optional[Callable] = None
    d3_constraint_contract: Optional[Callable] = None

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("at least one constraint is required (d >= 1)")
        if self.d > self.N:
            raise ValueError("cannot have more constraints than coordinates")


def with_fd_derivatives(spec: ProblemSpec, step: float = 1e-6) -> ProblemSpec:
    """Fill missing derivative callables with central finite differences.

    First derivatives difference the user functions; second derivatives
    difference the (possibly already finite-difference) first derivatives,
    with the usual loss of accuracy for nested differencing.
    """
    fills = {}

    def have(name):
        return getattr(spec, name) is not None or name in fills

    def get(name):
        return fills.get(name) or getattr(spec, name)

    if not have("d_mass"):
        fills["d_mass"] = lambda q, f=spec.mass: _fd.jacobian(f, q, step)
    if not have("d2_mass"):
        fills["d2_mass"] = lambda q, f=get("d_mass"): _fd.jacobian(f, q, step)
    if not have("d_one_form"):
        fills["d_one_form"] = lambda q, f=spec.one_form: _fd.jacobian(f, q, step)
    if not have("d2_one_form"):
        fills["d2_one_form"] = lambda q, f=get("d_one_form"): _fd.jacobian(f, q, step)
    if not have("d_potential"):
        fills["d_potential"] = lambda q, f=spec.potential: _fd.jacobian(f, q, step)
    if not have("d2_potential"):
        fills["d2_potential"] = lambda q, f=get("d_potential"): _fd.jacobian(f, q, step)
    if not have("d_constraint"):
        fills["d_constraint"] = lambda q, f=spec.constraint: _fd.jacobian(f, q, step)
    if not have("d2_constraint_contract"):
        fills["d2_constraint_contract"] = lambda q, u, f=get("d_constraint"): _fd.directional(
            f, q, u, step
        )
    if not have("d3_constraint_contract"):
        fills["d3_constraint_contract"] = lambda q, u, w, f=get("d_constraint"): _fd.directional2(
            f, q, u, w, max(step, 1e-5)
        )
    return dataclasses.replace(spec, **fills) if fills else spec


def lagrangian(spec: ProblemSpec, q, v) -> float:
    q, v = np.asarray(q, float), np.asarray(v, float)
    return float(0.5 * v @ spec.mass(q) @ v + spec.one_form(q) @ v - spec.potential(q))


def d_lagrangian(spec: ProblemSpec, q, v):
    """Partials (D_q L, D_v L) as length-N covectors."""
    q, v = np.asarray(q, float), np.asarray(v, float)
    dm = spec.d_mass(q)
    da = spec.d_one_form(q)
    dq_l = da.T @ v - spec.d_potential(q)
    if dm.any():
        dq_l = dq_l + 0.5 * np.einsum("ijk,i,j->k", dm, v, v)
    dv_l = spec.mass(q) @ v + spec.one_form(q)
    return dq_l, dv_l


def christoffel(spec: ProblemSpec, q) -> np.ndarray:
    """Gamma[i, k, l] = (dm_il/dq^k + dm_ik/dq^l - dm_kl/dq^i) / 2."""
    dm = spec.d_mass(np.asarray(q, float))
    if not dm.any():
        return dm
    return 0.5 * (np.transpose(dm, (0, 2, 1)) + dm - np.transpose(dm, (2, 0, 1)))


def magnetic(spec: ProblemSpec, q) -> np.ndarray:
    """b[i, j] = da_i/dq^j - da_j/dq^i (exactly antisymmetric)."""
    da = spec.d_one_form(np.asarray(q, float))
    if not da.any():
        return da
    return da - da.T


def weighted_constraint_hessian(spec: ProblemSpec, q, weights) -> np.ndarray:
    """N x N matrix sum_a weights_a D2 g^a(q), built from the contraction."""
    q = np.asarray(q, float)
    weights = np.asarray(weights, float)
    n = spec.N
    out = np.empty((n, n))
    eye = np.eye(n)
    for i in range(n):
        out[i] = weights @ spec.d2_constraint_contract(q, eye[i])
    return 0.5 * (out + out.T)


def _el_rhs(spec: ProblemSpec, q, v, gamma, b):
    top = -spec.d_potential(q)
    if gamma.any():
        top = top - np.einsum("ikl,k,l->i", gamma, v, v)
    if b.any():
        top = top - b @ v
    bottom = spec.d2_constraint_contract(q, v) @ v
    return top, bottom


def el_field(spec: ProblemSpec, q, v):
    """Constrained acceleration A(q, v) and its multiplier.

    (A, lambda) solve the linear system

        m(q) A - Dg(q)^T lambda = -Gamma:vv - b v - DV
              -Dg(q) A          = v^T D2g(q) v

    so that the flow of (dq = v, dv = A) stays tangent to the constraint.
    """
    q, v = np.asarray(q, float), np.asarray(v, float)
    fact = saddle.factor(saddle.SaddleSystem(spec.mass(q), spec.d_constraint(q), "minus"))
    top, bottom = _el_rhs(spec, q, v, christoffel(spec, q), magnetic(spec, q))
    return fact.solve(top, bottom)


def el_field_jacobian(spec: ProblemSpec, q, v, A, lam):
    """Partial derivatives of (A, lambda) with respect to q and v.

    Returns (dA/dq, dA/dv, dlam/dq, dlam/dv); one factorization of the
    saddle matrix serves all 2N right-hand-side columns.
    """
    q, v = np.asarray(q, float), np.asarray(v, float)
    fact = saddle.factor(saddle.SaddleSystem(spec.mass(q), spec.d_constraint(q), "minus"))
    gamma, b = christoffel(spec, q), magnetic(spec, q)
    return _el_jacobian_from_fact(
        spec, fact, q, v, np.asarray(A, float), np.asarray(lam, float), gamma, b
    )


def _el_jacobian_from_fact(spec, fact, q, v, A, lam, gamma, b):
    n = spec.N
    dm = spec.d_mass(q)
    d2m = spec.d2_mass(q)
    d2a = spec.d2_one_form(q)

    # Differentiating the defining system in q^m moves the lam D2g term to
    # the right-hand side with a plus sign, and adds the D3g + D2g.A pair in
    # the constraint rows.
    top_q = -spec.d2_potential(q) + weighted_constraint_hessian(spec, q, lam)
    if d2m.any():
        top_q -= np.einsum("iklm,k,l->im", d2m, v, v) - 0.5 * np.einsum(
            "klim,k,l->im", d2m, v, v
        )
    if d2a.any():
        top_q -= np.einsum("ijm,j->im", d2a, v) - np.einsum("jim,j->im", d2a, v)
    if dm.any():
        top_q -= np.einsum("ijm,j->im", dm, A)
        top_v = -2.0 * np.einsum("ikm,k->im", gamma, v) - b
    else:
        top_v = -b if b.any() else np.zeros((n, n))
    bot_q = spec.d3_constraint_contract(q, v, v) + spec.d2_constraint_contract(q, A)
    bot_v = 2.0 * spec.d2_constraint_contract(q, v)

    sols, duals = fact.solve_columns(
        np.concatenate([top_q, top_v], axis=1), np.concatenate([bot_q, bot_v], axis=1)
    )
    return sols[:, :n], sols[:, n:], duals[:, :n], duals[:, n:]


def el_field_with_jacobian(spec: ProblemSpec, q, v):
    """(A, lambda) together with their q/v derivatives, sharing one factorization."""
    q, v = np.asarray(q, float), np.asarray(v, float)
    fact = saddle.factor(saddle.SaddleSystem(spec.mass(q), spec.d_constraint(q), "minus"))
    gamma, b = christoffel(spec, q), magnetic(spec, q)
    top, bottom = _el_rhs(spec, q, v, gamma, b)
    A, lam = fact.solve(top, bottom)
    return (A, lam) + _el_jacobian_from_fact(spec, fact, q, v, A, lam, gamma, b)


def tq_membership(spec: ProblemSpec, w: State, tol: float) -> bool:
    g = spec.constraint(w.q)
    gv = spec.d_constraint(w.q) @ w.v
    return bool(np.max(np.abs(g)) <= tol and np.max(np.abs(gv)) <= tol)


def ttq_membership(spec: ProblemSpec, w: State, dw: TangentVector, tol: float) -> bool:
    gq = spec.d_constraint(w.q) @ dw.dq
    mixed = spec.d2_constraint_contract(w.q, w.v) @ dw.dq + spec.d_constraint(w.q) @ dw.dv
    return bool(np.max(np.abs(gq)) <= tol and np.max(np.abs(mixed)) <= tol)


def check_derivatives(spec: ProblemSpec, q_samples, step: float = 1e-6, rng=None):
    """Compare user derivatives with central differences of the level below.

    Returns a dict of max relative errors keyed by derivative name; the
    caller decides the acceptable threshold (1e-5 for the built-ins).
    """
    rng = rng or np.random.default_rng(0)
    errs = {}

    def record(name, approx, exact):
        errs[name] = max(errs.get(name, 0.0), _fd.rel_error(approx, exact))

    for q in q_samples:
        q = np.asarray(q, float)
        u = rng.standard_normal(spec.N)
        w = rng.standard_normal(spec.N)
        record("d_mass", _fd.jacobian(spec.mass, q, step), spec.d_mass(q))
        record("d2_mass", _fd.jacobian(spec.d_mass, q, step), spec.d2_mass(q))
        record("d_one_form", _fd.jacobian(spec.one_form, q, step), spec.d_one_form(q))
        record("d2_one_form", _fd.jacobian(spec.d_one_form, q, step), spec.d2_one_form(q))
        record("d_potential", _fd.jacobian(spec.potential, q, step), spec.d_potential(q))
        record("d2_potential", _fd.jacobian(spec.d_potential, q, step), spec.d2_potential(q))
        record("d_constraint", _fd.jacobian(spec.constraint, q, step), spec.d_constraint(q))
        record(
            "d2_constraint_contract",
            _fd.directional(spec.d_constraint, q, u, step),
            spec.d2_constraint_contract(q, u),
        )
        record(
            "d3_constraint_contract",
            _fd.directional2(spec.d_constraint, q, u, w, 1e-4),
            spec.d3_constraint_contract(q, u, w),
        )
    return errs
