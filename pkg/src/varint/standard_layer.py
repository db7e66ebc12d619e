"""One-step integration of the extended system and its first variations.

The "standard layer" advances the extended state (q, v, S) under

    dq/dt = v,   dv/dt = A(q, v),   dS/dt = L(q, v),   S(0) = 0,

with an explicit Runge-Kutta method, for positive or negative durations.
The jet variant integrates the linear variational equations alongside with
the same tableau, which yields the exact derivative of the discrete map
(the derivative of an RK step is that RK step applied to the equations of
first variation).  The adjoint flow inverts the time-reversed map by Newton
iteration and is available as an alternative boundary provider, giving
self-adjoint compositions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from . import model
from .errors import NonConvergence
from .model import ProblemSpec, State


@dataclass(frozen=True)
class ButcherTableau:
    name: str
    a: np.ndarray           # stage matrix, s x s
    b: np.ndarray           # weights
    c: np.ndarray           # nodes
    order: int              # declared classical order
    explicit: bool = True

    def __post_init__(self):
        object.__setattr__(self, "a", np.asarray(self.a, dtype=float))
        object.__setattr__(self, "b", np.asarray(self.b, dtype=float))
        object.__setattr__(self, "c", np.asarray(self.c, dtype=float))
        s = self.b.size
        if self.a.shape != (s, s) or self.c.size != s:
            raise ValueError("inconsistent tableau dimensions")
        if abs(self.b.sum() - 1.0) > 1e-12:
            raise ValueError("tableau weights must sum to 1")
        if self.explicit and np.any(np.abs(np.triu(self.a)) > 0):
            raise ValueError("explicit tableau must be strictly lower triangular")

    @property
    def stages(self) -> int:
        return self.b.size


TABLEAUX = {
    "euler": ButcherTableau("euler", [[0.0]], [1.0], [0.0], order=1),
    "midpoint": ButcherTableau(
        "midpoint", [[0.0, 0.0], [0.5, 0.0]], [0.0, 1.0], [0.0, 0.5], order=2
    ),
    "heun": ButcherTableau(
        "heun", [[0.0, 0.0], [1.0, 0.0]], [0.5, 0.5], [0.0, 1.0], order=2
    ),
    "rk4": ButcherTableau(
        "rk4",
        [
            [0.0, 0.0, 0.0, 0.0],
            [0.5, 0.0, 0.0, 0.0],
            [0.0, 0.5, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
        ],
        [1 / 6, 1 / 3, 1 / 3, 1 / 6],
        [0.0, 0.5, 0.5, 1.0],
        order=4,
    ),
}


def get_tableau(name: str) -> ButcherTableau:
    try:
        return TABLEAUX[name]
    except KeyError:
        raise KeyError(f"unknown tableau {name!r}; choose from {sorted(TABLEAUX)}") from None


@dataclass(frozen=True)
class ExtendedState:
    """State (q, v) together with the accumulated action S."""

    q: np.ndarray
    v: np.ndarray
    S: float

    @property
    def state(self) -> State:
        return State(self.q, self.v)


@dataclass(frozen=True)
class JetState:
    """Extended state plus its sensitivity to the initial (q0, v0).

    ``jac`` is the 2N x 2N block d(q, v)/d(q0, v0); ``S_bar`` the length-2N
    covector dS/d(q0, v0).
    """

    q: np.ndarray
    v: np.ndarray
    S: float
    jac: np.ndarray
    S_bar: np.ndarray

    @property
    def state(self) -> State:
        return State(self.q, self.v)


def _identity_jet(w: State) -> JetState:
    n = w.q.size
    return JetState(w.q.copy(), w.v.copy(), 0.0, np.eye(2 * n), np.zeros(2 * n))


def rk_flow(
    tableau: ButcherTableau, spec: ProblemSpec, w: State, t: float, substeps: int = 1
) -> ExtendedState:
    """Compose ``substeps`` equal RK steps of size t/substeps from (q, v, 0).

    ``t`` may be negative; the tableau is applied with a signed step.
    """
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    if t == 0.0:
        return ExtendedState(w.q.copy(), w.v.copy(), 0.0)
    h = t / substeps
    q, v, S = w.q.copy(), w.v.copy(), 0.0
    s = tableau.stages
    a, b = tableau.a, tableau.b
    for _ in range(substeps):
        kq = np.empty((s, q.size))
        kv = np.empty((s, q.size))
        ks = np.empty(s)
        for i in range(s):
            qi = q + h * (a[i, :i] @ kq[:i]) if i else q
            vi = v + h * (a[i, :i] @ kv[:i]) if i else v
            A, _ = model.el_field(spec, qi, vi)
            kq[i] = vi
            kv[i] = A
            ks[i] = model.lagrangian(spec, qi, vi)
        q = q + h * (b @ kq)
        v = v + h * (b @ kv)
        S = S + h * (b @ ks)
    return ExtendedState(q, v, S)


def rk_flow_jet(
    tableau: ButcherTableau, spec: ProblemSpec, w: State, t: float, substeps: int = 1
) -> JetState:
    """rk_flow together with the variational system, same tableau and steps."""
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    n = w.q.size
    if t == 0.0:
        return _identity_jet(w)
    h = t / substeps
    q, v, S = w.q.copy(), w.v.copy(), 0.0
    jac = np.eye(2 * n)
    s_bar = np.zeros(2 * n)
    s = tableau.stages
    a, b = tableau.a, tableau.b
    for _ in range(substeps):
        kq = np.empty((s, n))
        kv = np.empty((s, n))
        ks = np.empty(s)
        kj = np.empty((s, 2 * n, 2 * n))
        kbar = np.empty((s, 2 * n))
        for i in range(s):
            if i:
                qi = q + h * (a[i, :i] @ kq[:i])
                vi = v + h * (a[i, :i] @ kv[:i])
                ji = jac + h * (a[i, :i] @ kj[:i].reshape(i, -1)).reshape(2 * n, 2 * n)
            else:
                qi, vi, ji = q, v, jac
            A, lam, da_dq, da_dv, _, _ = model.el_field_with_jacobian(spec, qi, vi)
            dq_l, dv_l = model.d_lagrangian(spec, qi, vi)
            kq[i] = vi
            kv[i] = A
            ks[i] = model.lagrangian(spec, qi, vi)
            # Variational right-hand side: d(dq) = dv, d(dv) = A_q dq + A_v dv.
            kj[i, :n] = ji[n:]
            kj[i, n:] = da_dq @ ji[:n] + da_dv @ ji[n:]
            kbar[i] = dq_l @ ji[:n] + dv_l @ ji[n:]
        q = q + h * (b @ kq)
        v = v + h * (b @ kv)
        S = S + h * (b @ ks)
        jac = jac + h * (b @ kj.reshape(s, -1)).reshape(2 * n, 2 * n)
        s_bar = s_bar + h * (b @ kbar)
    return JetState(q, v, S, jac, s_bar)


def adjoint_flow(
    tableau: ButcherTableau,
    spec: ProblemSpec,
    w: State,
    t: float,
    substeps: int = 1,
    tol: float = 1e-13,
    max_iter: int = 25,
) -> ExtendedState:
    """Adjoint of the RK map: the state w' with rk_flow(w', -t) = w.

    The action of the adjoint step is S' = -R^S_{-t}(w'), consistent with
    accumulating dS = L along the same segment traversed forward.
    """
    if t == 0.0:
        return ExtendedState(w.q.copy(), w.v.copy(), 0.0)
    w_prime, s_back = _adjoint_solve(tableau, spec, w, t, substeps, tol, max_iter)
    return ExtendedState(w_prime.q, w_prime.v, -s_back)


def adjoint_flow_jet(
    tableau: ButcherTableau,
    spec: ProblemSpec,
    w: State,
    t: float,
    substeps: int = 1,
    tol: float = 1e-13,
    max_iter: int = 25,
) -> JetState:
    """Jet of :func:`adjoint_flow` via the implicit function theorem."""
    if t == 0.0:
        return _identity_jet(w)
    w_prime, _ = _adjoint_solve(tableau, spec, w, t, substeps, tol, max_iter)
    jet_back = rk_flow_jet(tableau, spec, w_prime, -t, substeps)
    jac = np.linalg.inv(jet_back.jac)
    return JetState(w_prime.q, w_prime.v, -jet_back.S, jac, -(jet_back.S_bar @ jac))


def _adjoint_solve(tableau, spec, w, t, substeps, tol, max_iter):
    n = w.q.size
    target = np.concatenate([w.q, w.v])
    guess = rk_flow(tableau, spec, w, t, substeps)
    x = np.concatenate([guess.q, guess.v])
    for _ in range(max_iter):
        jet = rk_flow_jet(tableau, spec, State(x[:n], x[n:]), -t, substeps)
        r = np.concatenate([jet.q, jet.v]) - target
        if np.max(np.abs(r)) <= tol:
            return State(x[:n], x[n:]), jet.S
        x = x - np.linalg.solve(jet.jac, r)
    raise NonConvergence(
        f"adjoint flow did not converge in {max_iter} iterations",
        iterations=max_iter,
        residual=float(np.max(np.abs(r))),
    )


class RKProvider:
    """Boundary-flow provider backed directly by an explicit tableau."""

    def __init__(self, tableau: ButcherTableau):
        self.tableau = tableau

    def flow(self, spec, w, t, substeps=1):
        return rk_flow(self.tableau, spec, w, t, substeps)

    def flow_jet(self, spec, w, t, substeps=1):
        return rk_flow_jet(self.tableau, spec, w, t, substeps)


class AdjointProvider:
    """Boundary-flow provider running the adjoint of a tableau."""

    def __init__(self, tableau: ButcherTableau, tol: float = 1e-13, max_iter: int = 25):
        self.tableau = tableau
        self.tol = tol
        self.max_iter = max_iter

    def flow(self, spec, w, t, substeps=1):
        return adjoint_flow(self.tableau, spec, w, t, substeps, self.tol, self.max_iter)

    def flow_jet(self, spec, w, t, substeps=1):
        return adjoint_flow_jet(self.tableau, spec, w, t, substeps, self.tol, self.max_iter)


@dataclass(frozen=True)
class StandardLayer:
    """Pair of flow providers for the backward (minus) and forward (plus) ends.

    Usually both are the same method; placing the adjoint on one side gives
    the self-adjoint composition.
    """

    minus: object
    plus: object

    def swapped(self) -> "StandardLayer":
        return StandardLayer(minus=self.plus, plus=self.minus)


LayerLike = Union[StandardLayer, ButcherTableau, str]


def as_layer(layer: LayerLike, adjoint_side: Optional[str] = None) -> StandardLayer:
    """Normalize a tableau, tableau name, or layer into a StandardLayer."""
    if isinstance(layer, StandardLayer):
        return layer
    tableau = get_tableau(layer) if isinstance(layer, str) else layer
    base = RKProvider(tableau)
    if adjoint_side is None:
        return StandardLayer(minus=base, plus=base)
    adj = AdjointProvider(tableau)
    if adjoint_side == "minus":
        return StandardLayer(minus=adj, plus=base)
    if adjoint_side == "plus":
        return StandardLayer(minus=base, plus=adj)
    raise ValueError(f"adjoint_side must be 'minus', 'plus' or None, got {adjoint_side!r}")
