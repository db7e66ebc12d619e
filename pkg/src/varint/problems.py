"""Built-in constrained systems with analytic derivatives.

All constraints are written with squared norms (|q|^2 - 1 rather than
|q| - 1) so their Hessians are constant and third derivatives vanish; the
quartic curve exists specifically to exercise a nonzero third derivative.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import boundary as bnd
from .geometry import GroupActionSpec
from .model import ProblemSpec, State
from .standard_layer import get_tableau, rk_flow


@dataclass(frozen=True)
class NamedProblem:
    name: str
    spec: ProblemSpec
    default_state: State
    action: Optional[GroupActionSpec] = None
    facts: dict = field(default_factory=dict)


def _const(value):
    # Shared arrays: results of built-in evaluation functions are read-only.
    value = np.asarray(value, float)
    return lambda q: value


def _zeros_nnn(n):
    z = np.zeros((n, n, n))
    return lambda q: z


def _zeros_nnnn(n):
    z = np.zeros((n, n, n, n))
    return lambda q: z


def _sphere_constraint(n):
    """g = |q|^2 - 1 on R^n."""
    return dict(
        constraint=lambda q: np.array([q @ q - 1.0]),
        d_constraint=lambda q: 2.0 * q[None, :],
        d2_constraint_contract=lambda q, u: 2.0 * np.asarray(u, float)[None, :],
        d3_constraint_contract=lambda q, u, w: np.zeros((1, n)),
    )


def _identity_mass(n):
    return dict(
        mass=_const(np.eye(n)),
        d_mass=_zeros_nnn(n),
        d2_mass=_zeros_nnnn(n),
    )


def _no_one_form(n):
    return dict(
        one_form=_const(np.zeros(n)),
        d_one_form=_const(np.zeros((n, n))),
        d2_one_form=_zeros_nnn(n),
    )


def _linear_potential(grad):
    grad = np.asarray(grad, float)
    n = grad.size
    return dict(
        potential=lambda q: float(grad @ q),
        d_potential=_const(grad),
        d2_potential=_const(np.zeros((n, n))),
    )


def _zero_potential(n):
    return _linear_potential(np.zeros(n))


def _rotation_z(n_copies=1):
    block = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    out = np.zeros((3 * n_copies, 3 * n_copies))
    for k in range(n_copies):
        out[3 * k : 3 * k + 3, 3 * k : 3 * k + 3] = block
    return out


def _circle() -> NamedProblem:
    n = 2
    spec = ProblemSpec(
        N=n, d=1, **_identity_mass(n), **_no_one_form(n), **_zero_potential(n),
        **_sphere_constraint(n),
    )
    rot = np.array([[0.0, -1.0], [1.0, 0.0]])

    def closed_form(w0: State, t: float) -> State:
        angle = w0.q[0] * w0.v[1] - w0.q[1] * w0.v[0]
        c, s = np.cos(angle * t), np.sin(angle * t)
        mat = np.array([[c, -s], [s, c]])
        return State(mat @ w0.q, mat @ w0.v)

    return NamedProblem(
        name="circle",
        spec=spec,
        default_state=State([1.0, 0.0], [0.0, 1.0]),
        action=GroupActionSpec(generators=(rot,), labels=("rotation",)),
        facts={"closed_form": closed_form},
    )


def _sphere_pendulum() -> NamedProblem:
    n = 3
    spec = ProblemSpec(
        N=n, d=1, **_identity_mass(n), **_no_one_form(n),
        **_linear_potential([0.0, 0.0, 1.0]), **_sphere_constraint(n),
    )
    return NamedProblem(
        name="sphere-pendulum",
        spec=spec,
        default_state=State([1.0, 0.0, 0.0], [0.0, 0.5, 0.0]),
        action=GroupActionSpec(generators=(_rotation_z(),), labels=("rotation_z",)),
        facts={"equilibria": (State([0.0, 0.0, -1.0], [0.0, 0.0, 0.0]),)},
    )


def _double_sphere_pendulum() -> NamedProblem:
    n = 6

    def constraint(q):
        a, b = q[:3], q[3:]
        return np.array([a @ a - 1.0, (b - a) @ (b - a) - 1.0])

    def d_constraint(q):
        a, b = q[:3], q[3:]
        out = np.zeros((2, 6))
        out[0, :3] = 2.0 * a
        out[1, :3] = -2.0 * (b - a)
        out[1, 3:] = 2.0 * (b - a)
        return out

    def d2_contract(q, u):
        u = np.asarray(u, float)
        out = np.zeros((2, 6))
        out[0, :3] = 2.0 * u[:3]
        rel = u[3:] - u[:3]
        out[1, :3] = -2.0 * rel
        out[1, 3:] = 2.0 * rel
        return out

    spec = ProblemSpec(
        N=n, d=2, **_identity_mass(n), **_no_one_form(n),
        **_linear_potential([0, 0, 1, 0, 0, 1]),
        constraint=constraint,
        d_constraint=d_constraint,
        d2_constraint_contract=d2_contract,
        d3_constraint_contract=lambda q, u, w: np.zeros((2, 6)),
    )
    return NamedProblem(
        name="double-sphere-pendulum",
        spec=spec,
        default_state=State(
            [1.0, 0.0, 0.0, 1.0, 0.0, -1.0], [0.0, 0.5, 0.0, 0.0, -0.3, 0.0]
        ),
        action=GroupActionSpec(generators=(_rotation_z(2),), labels=("rotation_z",)),
    )


def _magnetic_sphere(kappa: float = 1.0) -> NamedProblem:
    n = 3
    da = kappa * np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    spec = ProblemSpec(
        N=n, d=1, **_identity_mass(n),
        one_form=lambda q: kappa * np.array([-q[1], q[0], 0.0]),
        d_one_form=_const(da),
        d2_one_form=_zeros_nnn(n),
        **_linear_potential([0.0, 0.0, 1.0]), **_sphere_constraint(n),
    )
    return NamedProblem(
        name="magnetic-sphere",
        spec=spec,
        default_state=State([1.0, 0.0, 0.0], [0.0, 0.5, 0.0]),
        action=GroupActionSpec(generators=(_rotation_z(),), labels=("rotation_z",)),
        facts={"kappa": kappa},
    )


def _curved_mass_circle() -> NamedProblem:
    n = 2
    eye = np.eye(n)

    def mass(q):
        return (1.0 + 0.5 * q[0] ** 2) * eye

    def d_mass(q):
        out = np.zeros((n, n, n))
        out[:, :, 0] = q[0] * eye
        return out

    def d2_mass(q):
        out = np.zeros((n, n, n, n))
        out[:, :, 0, 0] = eye
        return out

    spec = ProblemSpec(
        N=n, d=1, mass=mass, d_mass=d_mass, d2_mass=d2_mass,
        **_no_one_form(n), **_zero_potential(n), **_sphere_constraint(n),
    )
    return NamedProblem(
        name="curved-mass-circle",
        spec=spec,
        default_state=State([1.0, 0.0], [0.0, 0.8]),
    )


def _quartic_curve() -> NamedProblem:
    n = 2

    def constraint(q):
        return np.array([q[0] ** 4 + q[1] ** 2 - 1.0])

    def d_constraint(q):
        return np.array([[4.0 * q[0] ** 3, 2.0 * q[1]]])

    def d2_contract(q, u):
        return np.array([[12.0 * q[0] ** 2 * u[0], 2.0 * u[1]]])

    def d3_contract(q, u, w):
        return np.array([[24.0 * q[0] * u[0] * w[0], 0.0]])

    spec = ProblemSpec(
        N=n, d=1, **_identity_mass(n), **_no_one_form(n),
        **_linear_potential([0.0, 1.0]),
        constraint=constraint,
        d_constraint=d_constraint,
        d2_constraint_contract=d2_contract,
        d3_constraint_contract=d3_contract,
    )
    return NamedProblem(
        name="quartic-curve",
        spec=spec,
        default_state=State([0.0, 1.0], [0.5, 0.0]),
    )


def catalog() -> list:
    """All built-in problems; entries are immutable and safe to share."""
    return [
        _circle(),
        _sphere_pendulum(),
        _double_sphere_pendulum(),
        _magnetic_sphere(),
        _curved_mass_circle(),
        _quartic_curve(),
    ]


def get(name: str) -> NamedProblem:
    for problem in catalog():
        if problem.name == name:
            return problem
    raise KeyError(f"unknown problem {name!r}; choose from {[p.name for p in catalog()]}")


def reference_solution(problem: NamedProblem, w0: State, T: float, fine_h: float) -> State:
    """High-resolution rk4 end state at time T, retracted onto the constraint."""
    if T == 0.0:
        return w0
    substeps = max(1, int(round(abs(T) / fine_h)))
    ext = rk_flow(get_tableau("rk4"), problem.spec, w0, T, substeps)
    return bnd.project_state(problem.spec, ext.q, ext.v, ext.q)
