"""The symplectic layer: one step of the constrained discrete Euler-Lagrange system.

Advancing w1 -> w2 means solving a 12N + 5d nonlinear system coupling the
new state (q2, v2), three auxiliary configurations (projections of the
segment endpoints), one fiber coordinate theta+, and eleven multipliers:
stationarity of the discrete action in q and v at both states, the
disambiguation rows pinning the state multipliers to the constraint tangent
spaces, the pullback relations tying hatted multipliers to plain ones
through the projection derivative, the connection equation joining the two
segments, and the constraint itself.

The system is solved with the split f = f0 - (f0 - f): the exact residual f
is evaluated anew each sweep, while f0 is an affine "approximate" whose
coefficients are frozen at the start of the step (constraint Jacobian G0,
mass M0, one-form a0 at the freeze configuration, boundary maps replaced by
q + h*alpha*v, discrete Lagrangian by h*L).  Each sweep solves f0(x_{i+1}) =
r_{i+1} where r accumulates r_{i+1} = r_i - f(x_i); the frozen structure
makes every sub-solve reuse one of just two saddle factorizations
(identity-type and mass-type).  Iteration stops when the (q2, v2) update and
the constraint-force products nu.Dg settle below tolerance; raw nu
multipliers are never used as a convergence gauge since their scale follows
the arbitrary scaling of g.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import boundary as bnd
from . import model, saddle
from .boundary import Bias
from .errors import NonConvergence
from .model import ProblemSpec, State
from .standard_layer import StandardLayer, as_layer

_VARIANTS = ("as-printed", "alpha-corrected")
_WARM_FIELDS = (
    "theta_plus", "lambda_minus", "lambda_plus", "mu",
    "lambda_hat_minus", "lambda_hat_plus", "mu_hat_1", "mu_hat_2",
    "nu1_minus", "nu2_minus", "nu1_plus", "nu2_plus",
)
_FREEZE_POINTS = ("q1", "q_bar")


@dataclass(frozen=True)
class StepConfig:
    """Parameters of one symplectic-layer step.

    ``h`` may be negative (a reversed step); it must be nonzero.  The
    ``approximate_variant`` switch only changes the frozen approximate f0,
    never the residual, so both settings converge to the same solution.
    """

    h: float
    bias: Bias = Bias(0.0, 1.0)
    tableau: str = "rk4"
    substeps: int = 1
    adjoint_side: Optional[str] = None
    tol_fixed_point: float = 1e-12
    max_iter: int = 50
    freeze_point: str = "q1"
    approximate_variant: str = "alpha-corrected"
    tol_constraint: float = 1e-10
    project_tol: float = 1e-13
    project_max_iter: int = 30

    def __post_init__(self):
        if self.h == 0.0:
            raise ValueError("h must be nonzero")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")
        if min(self.tol_fixed_point, self.tol_constraint, self.project_tol) <= 0.0:
            raise ValueError("tolerances must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.freeze_point not in _FREEZE_POINTS:
            raise ValueError(f"freeze_point must be one of {_FREEZE_POINTS}")
        if self.approximate_variant not in _VARIANTS:
            raise ValueError(f"approximate_variant must be one of {_VARIANTS}")

    def layer(self) -> StandardLayer:
        return as_layer(self.tableau, self.adjoint_side)

    def time_reversed(self) -> "StepConfig":
        """Configuration whose step map is the exact inverse of this one.

        Negates h, mirrors the bias, and swaps the roles of the two boundary
        providers; for a single-method layer with symmetric bias this is
        just h -> -h.
        """
        swap = {None: None, "minus": "plus", "plus": "minus"}
        return dataclasses.replace(
            self,
            h=-self.h,
            bias=self.bias.reversed(),
            adjoint_side=swap[self.adjoint_side],
        )


@dataclass
class Stage4Variables:
    """All unknowns of one symplectic-layer step (12N + 5d numbers)."""

    q2: np.ndarray
    v2: np.ndarray
    q1_minus: np.ndarray
    q_bar: np.ndarray
    q2_plus: np.ndarray
    theta_plus: np.ndarray
    lambda_minus: np.ndarray
    lambda_plus: np.ndarray
    mu: np.ndarray
    lambda_hat_minus: np.ndarray
    lambda_hat_plus: np.ndarray
    mu_hat_1: np.ndarray
    mu_hat_2: np.ndarray
    nu1_minus: np.ndarray
    nu2_minus: np.ndarray
    nu1_plus: np.ndarray
    nu2_plus: np.ndarray

    _N_FIELDS = (
        "q2", "v2", "q1_minus", "q_bar", "q2_plus",
        "lambda_minus", "lambda_plus", "mu",
        "lambda_hat_minus", "lambda_hat_plus", "mu_hat_1", "mu_hat_2",
    )
    _D_FIELDS = ("theta_plus", "nu1_minus", "nu2_minus", "nu1_plus", "nu2_plus")
    _ORDER = (
        "q2", "v2", "q1_minus", "q_bar", "q2_plus", "theta_plus",
        "lambda_minus", "lambda_plus", "mu",
        "lambda_hat_minus", "lambda_hat_plus", "mu_hat_1", "mu_hat_2",
        "nu1_minus", "nu2_minus", "nu1_plus", "nu2_plus",
    )

    @classmethod
    def zeros(cls, n: int, d: int) -> "Stage4Variables":
        kw = {name: np.zeros(n) for name in cls._N_FIELDS}
        kw.update({name: np.zeros(d) for name in cls._D_FIELDS})
        return cls(**kw)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([getattr(self, name) for name in self._ORDER])

    @classmethod
    def from_vector(cls, vec, n: int, d: int) -> "Stage4Variables":
        kw = {}
        pos = 0
        for name in cls._ORDER:
            size = n if name in cls._N_FIELDS else d
            kw[name] = np.asarray(vec[pos : pos + size], dtype=float)
            pos += size
        return cls(**kw)

    def copy(self) -> "Stage4Variables":
        return Stage4Variables(**{k: getattr(self, k).copy() for k in self._ORDER})


_RESIDUAL_BLOCKS = (
    ("s1", "N"), ("s2", "N"),
    ("s3a", "N"), ("s3b", "d"), ("s3c", "N"),
    ("s4a", "N"), ("s4b", "d"), ("s4c", "N"),
    ("s5a", "N"), ("s5b", "d"), ("s5c", "N"),
    ("s6a", "N"), ("s6b", "d"), ("s6c", "N"),
    ("s7a", "N"), ("s7b", "d"),
    ("s8", "N"),
)


@dataclass
class Stage4Residual:
    """Residual of the step equations, one named block per equation group."""

    s1: np.ndarray
    s2: np.ndarray
    s3a: np.ndarray
    s3b: np.ndarray
    s3c: np.ndarray
    s4a: np.ndarray
    s4b: np.ndarray
    s4c: np.ndarray
    s5a: np.ndarray
    s5b: np.ndarray
    s5c: np.ndarray
    s6a: np.ndarray
    s6b: np.ndarray
    s6c: np.ndarray
    s7a: np.ndarray
    s7b: np.ndarray
    s8: np.ndarray

    def to_vector(self) -> np.ndarray:
        return np.concatenate([getattr(self, name) for name, _ in _RESIDUAL_BLOCKS])

    @classmethod
    def from_vector(cls, vec, n: int, d: int) -> "Stage4Residual":
        kw = {}
        pos = 0
        for name, kind in _RESIDUAL_BLOCKS:
            size = n if kind == "N" else d
            kw[name] = np.asarray(vec[pos : pos + size], dtype=float)
            pos += size
        return cls(**kw)

    def block_norms(self) -> dict:
        return {
            name: float(np.max(np.abs(getattr(self, name)), initial=0.0))
            for name, _ in _RESIDUAL_BLOCKS
        }

    def max_norm(self) -> float:
        return max(self.block_norms().values())


@dataclass
class StepDiagnostics:
    iterations: int
    converged: bool
    residual_norms: dict
    constraint_violation: float
    tangency_violation: float
    force_products: dict
    update_norms: list


@dataclass
class Trajectory:
    states: list
    diagnostics: list
    times: np.ndarray


@dataclass
class _EndpointData:
    """Boundary data of one state plus the projection pairs of its two ends."""

    bd: bnd.BoundaryData
    q_minus: np.ndarray
    theta_minus: np.ndarray
    fact_minus: saddle.SaddleFactorization
    q_plus: np.ndarray
    theta_plus: np.ndarray
    fact_plus: saddle.SaddleFactorization


class _StepWorkspace:
    """Per-step cache: frozen approximate data and endpoint evaluations."""

    def __init__(self, spec: ProblemSpec, config: StepConfig, w1: State, w1data=None):
        self.spec = spec
        self.config = config
        self.w1 = w1
        self.layer = config.layer()
        self.n, self.d = spec.N, spec.d
        self.h = config.h
        self.a_m = config.bias.alpha_minus
        self.a_p = config.bias.alpha_plus

        self.dg1 = spec.d_constraint(w1.q)
        self.c1 = spec.d2_constraint_contract(w1.q, w1.v)
        self.dq_l1 = model.d_lagrangian(spec, w1.q, w1.v)[0]

        self.w1data = w1data if w1data is not None else self._endpoint_data(w1, w1.q, None)

        if config.freeze_point == "q1":
            q_f = w1.q
        else:
            q_f = self.w1data.q_plus
        self.g0 = spec.d_constraint(q_f)
        self.m0 = spec.mass(q_f)
        self.a0 = spec.one_form(q_f)
        self.fact_identity = saddle.factor(
            saddle.SaddleSystem(np.eye(self.n), self.g0, "plus")
        )
        self.fact_mass = saddle.factor(saddle.SaddleSystem(self.m0, self.g0, "minus"))
        self._lp_bottom = self.g0 @ w1.q
        self._zero_d = np.zeros(self.d)

        self._w2_key = None
        self.w2data: Optional[_EndpointData] = None

    # -- endpoint evaluation ------------------------------------------------

    def _endpoint_data(self, w: State, q_guess_minus, q_guess_plus) -> _EndpointData:
        cfg = self.config
        bd = bnd.boundary_data(self.layer, self.spec, w, self.h, cfg.bias, cfg.substeps)
        qm, thm = bnd.project(
            self.spec, bd.hat_minus, q_guess_minus, cfg.project_tol, cfg.project_max_iter
        )
        qp, thp = bnd.project(
            self.spec,
            bd.hat_plus,
            q_guess_plus if q_guess_plus is not None else q_guess_minus,
            cfg.project_tol,
            cfg.project_max_iter,
        )
        return _EndpointData(
            bd=bd,
            q_minus=qm,
            theta_minus=thm,
            fact_minus=bnd._projection_matrix(self.spec, qm, thm),
            q_plus=qp,
            theta_plus=thp,
            fact_plus=bnd._projection_matrix(self.spec, qp, thp),
        )

    def ensure_w2(self, vars: Stage4Variables) -> _EndpointData:
        key = (vars.q2.tobytes(), vars.v2.tobytes())
        if key != self._w2_key:
            self.w2data = self._endpoint_data(
                State(vars.q2, vars.v2), vars.q_bar, vars.q2_plus
            )
            self._w2_key = key
        return self.w2data

    # -- frozen linear maps --------------------------------------------------

    def lin_project(self, q_hat) -> np.ndarray:
        """Frozen linearized constraint projection (affine in q_hat)."""
        x, _ = self.fact_identity.solve_raw(q_hat, self._lp_bottom)
        return x

    def pullback0(self, lam) -> np.ndarray:
        """Frozen multiplier pullback: top block of [[1, G0^T], [G0, 0]]^-1 (lam, 0)."""
        x, _ = self.fact_identity.solve_raw(lam, self._zero_d)
        return x

    def _variant_coeffs(self):
        # The multiplier coefficients in the v2 block are always the
        # h-scaled ones consistent with D_v of the boundary maps; unit
        # coefficients there make the sweep diverge at practical h.  The
        # variant switch only moves the v2 coefficient of the connection
        # block between the two segment ends.
        kp, km = self.h * self.a_p, self.h * self.a_m
        a_star = self.a_p if self.config.approximate_variant == "as-printed" else self.a_m
        return kp, km, a_star

    # -- the exact residual ---------------------------------------------------

    def residual(self, vars: Stage4Variables) -> Stage4Residual:
        spec, w1 = self.spec, self.w1
        d1 = self.w1data
        d2 = self.ensure_w2(vars)
        bd1, bd2 = d1.bd, d2.bd
        dg1 = self.dg1
        dg2 = spec.d_constraint(vars.q2)
        dg_bar = spec.d_constraint(vars.q_bar)
        c2 = spec.d2_constraint_contract(vars.q2, vars.v2)

        def pull(fact, lam):
            out, _ = fact.solve_raw(lam, self._zero_d)
            return out

        return Stage4Residual(
            s1=vars.q1_minus - d1.q_minus,
            s2=vars.q_bar - d1.q_plus,
            s3a=(
                vars.lambda_hat_minus @ bd1.Dq_hat_minus
                + vars.nu1_minus @ dg1
                + vars.mu_hat_1 @ bd1.Dq_hat_plus
                + vars.nu2_minus @ self.c1
                - bd1.Dq_Lh
            ),
            s3b=spec.d_constraint(vars.q1_minus) @ vars.lambda_minus,
            s3c=vars.lambda_hat_minus - pull(d1.fact_minus, vars.lambda_minus),
            s4a=(
                vars.mu_hat_1 @ bd1.Dv_hat_plus
                + vars.nu2_minus @ dg1
                + vars.lambda_hat_minus @ bd1.Dv_hat_minus
                - bd1.Dv_Lh
            ),
            s4b=dg_bar @ vars.mu,
            s4c=vars.mu_hat_1 - pull(d1.fact_plus, vars.mu),
            s5a=(
                vars.lambda_hat_plus @ bd2.Dq_hat_plus
                + vars.nu1_plus @ dg2
                - vars.mu_hat_2 @ bd2.Dq_hat_minus
                + vars.nu2_plus @ c2
                - bd2.Dq_Lh
            ),
            s5b=spec.d_constraint(vars.q2_plus) @ vars.lambda_plus,
            s5c=vars.lambda_hat_plus - pull(d2.fact_plus, vars.lambda_plus),
            s6a=(
                bd2.Dv_Lh
                - vars.nu2_plus @ dg2
                - vars.lambda_hat_plus @ bd2.Dv_hat_plus
                + vars.mu_hat_2 @ bd2.Dv_hat_minus
            ),
            s6b=dg2 @ vars.v2,
            s6c=vars.mu_hat_2 - pull(d2.fact_minus, vars.mu),
            s7a=bd2.hat_minus - vars.q_bar - dg_bar.T @ vars.theta_plus,
            s7b=spec.constraint(vars.q2),
            s8=vars.q2_plus - d2.q_plus,
        )

    # -- the frozen approximate ----------------------------------------------

    def f0(self, vars: Stage4Variables) -> Stage4Residual:
        """Evaluate the affine approximate at ``vars``."""
        h, a_m, a_p = self.h, self.a_m, self.a_p
        kp, km, a_star = self._variant_coeffs()
        g0, m0, a0 = self.g0, self.m0, self.a0
        w1 = self.w1
        bd1 = self.w1data.bd
        return Stage4Residual(
            s1=vars.q1_minus - self.lin_project(bd1.hat_minus),
            s2=vars.q_bar - self.lin_project(bd1.hat_plus),
            s3a=(
                (vars.lambda_minus + vars.mu)
                + vars.nu1_minus @ g0
                + vars.nu2_minus @ self.c1
                - h * self.dq_l1
            ),
            s3b=g0 @ vars.lambda_minus,
            s3c=vars.lambda_hat_minus - self.pullback0(vars.lambda_minus),
            s4a=(
                h * a_m * vars.lambda_minus
                + h * a_p * vars.mu
                + vars.nu2_minus @ g0
                - h * (m0 @ w1.v)
                - h * a0
            ),
            s4b=g0 @ vars.mu,
            s4c=vars.mu_hat_1 - self.pullback0(vars.mu),
            s5a=(
                (vars.lambda_plus - vars.mu)
                + vars.nu1_plus @ g0
                + vars.nu2_minus @ self.c1
                - h * self.dq_l1
            ),
            s5b=g0 @ vars.lambda_plus,
            s5c=vars.lambda_hat_plus - self.pullback0(vars.lambda_plus),
            s6a=(
                h * (m0 @ vars.v2)
                - vars.nu2_plus @ g0
                + h * a0
                - kp * vars.lambda_plus
                + km * vars.mu
            ),
            s6b=g0 @ vars.v2,
            s6c=vars.mu_hat_2 - self.pullback0(vars.mu),
            s7a=(vars.q2 - vars.q_bar) - g0.T @ vars.theta_plus + h * a_star * vars.v2,
            s7b=g0 @ (vars.q2 - vars.q_bar),
            s8=vars.q2_plus - self.lin_project(vars.q2 + h * a_p * vars.v2),
        )

    def approximate_solve(self, rhs: Stage4Residual) -> Stage4Variables:
        """Solve f0(x) = rhs by the sequential elimination the frozen structure allows.

        Every linear solve reuses the identity-type factorization except the
        (v2, nu2+) block, which reuses the mass-type one.
        """
        h, a_m, a_p = self.h, self.a_m, self.a_p
        kp, km, a_star = self._variant_coeffs()
        g0, m0, a0 = self.g0, self.m0, self.a0
        w1 = self.w1
        bd1 = self.w1data.bd
        kid = self.fact_identity

        # (i) combined multiplier u = (a- lam- + a+ mu)^T and nu2-.
        c_top = (rhs.s4a + h * (m0 @ w1.v) + h * a0) / h
        u, y = kid.solve_raw(c_top, a_m * rhs.s3b + a_p * rhs.s4b)
        nu2_minus = h * y

        # (ii) s = (lam- + mu)^T and nu1-; then split lam-, mu.
        c_top = rhs.s3a + h * self.dq_l1 - self.c1.T @ nu2_minus
        s, nu1_minus = kid.solve_raw(c_top, rhs.s3b + rhs.s4b)
        lambda_minus = a_p * s - u
        mu = u - a_m * s

        # (iii) t = (lam+ - mu)^T and nu1+.
        c_top = rhs.s5a + h * self.dq_l1 - self.c1.T @ nu2_minus
        t, nu1_plus = kid.solve_raw(c_top, rhs.s5b - rhs.s4b)
        lambda_plus = t + mu

        # (iv) v2 and nu2+ from the mass-type block.
        c_top = (rhs.s6a - h * a0 + kp * lambda_plus - km * mu) / h
        v2, y = self.fact_mass.solve_raw(c_top, -rhs.s6b)
        nu2_plus = h * y

        # (v) endpoint projections of the known state.
        q1_minus = self.lin_project(bd1.hat_minus) + rhs.s1
        q_bar = self.lin_project(bd1.hat_plus) + rhs.s2

        # (vi) q2 and theta+ (theta sign flips to reuse the plus layout).
        c_top = rhs.s7a + q_bar - h * a_star * v2
        q2, w = kid.solve_raw(c_top, rhs.s7b + g0 @ q_bar)
        theta_plus = -w

        # (vii) hatted multipliers through the frozen pullback.
        lambda_hat_minus = self.pullback0(lambda_minus) + rhs.s3c
        mu_hat_1 = self.pullback0(mu) + rhs.s4c
        lambda_hat_plus = self.pullback0(lambda_plus) + rhs.s5c
        mu_hat_2 = self.pullback0(mu) + rhs.s6c

        # (viii) projection of the advanced endpoint.
        q2_plus = self.lin_project(q2 + h * a_p * v2) + rhs.s8

        return Stage4Variables(
            q2=q2,
            v2=v2,
            q1_minus=q1_minus,
            q_bar=q_bar,
            q2_plus=q2_plus,
            theta_plus=theta_plus,
            lambda_minus=lambda_minus,
            lambda_plus=lambda_plus,
            mu=mu,
            lambda_hat_minus=lambda_hat_minus,
            lambda_hat_plus=lambda_hat_plus,
            mu_hat_1=mu_hat_1,
            mu_hat_2=mu_hat_2,
            nu1_minus=nu1_minus,
            nu2_minus=nu2_minus,
            nu1_plus=nu1_plus,
            nu2_plus=nu2_plus,
        )

    # -- seeding ---------------------------------------------------------------

    def initialize(self) -> Stage4Variables:
        """Seed: flow the state one step, project it back to TQ, zero multipliers."""
        spec, cfg = self.spec, self.config
        ext = self.layer.plus.flow(spec, self.w1, self.h, cfg.substeps)
        seed = bnd.project_state(
            spec, ext.q, ext.v, ext.q, cfg.project_tol, cfg.project_max_iter
        )

        vars = Stage4Variables.zeros(self.n, self.d)
        vars.q2 = seed.q
        vars.v2 = seed.v
        vars.q1_minus = self.w1data.q_minus.copy()
        vars.q_bar = self.w1data.q_plus.copy()
        vars.q2_plus = seed.q.copy()
        d2 = self.ensure_w2(vars)
        vars.q2_plus = d2.q_plus.copy()
        return vars

    # -- force products and the step driver -------------------------------------

    def force_products(self, vars: Stage4Variables) -> dict:
        dg2 = self.spec.d_constraint(vars.q2)
        return {
            "nu1_minus": vars.nu1_minus @ self.dg1,
            "nu2_minus": vars.nu2_minus @ self.dg1,
            "nu1_plus": vars.nu1_plus @ dg2,
            "nu2_plus": vars.nu2_plus @ dg2,
        }

    def run(self, warm_from: Optional[Stage4Variables] = None):
        cfg = self.config
        vars = self.initialize()
        if warm_from is not None:
            # Multipliers vary smoothly along a trajectory; seeding them from
            # the previous converged step skips the population sweeps.
            for name in _WARM_FIELDS:
                setattr(vars, name, getattr(warm_from, name).copy())
        r = self.f0(vars).to_vector()
        forces = self.force_products(vars)
        update_norms = []
        res_norm_history = []
        last_residual = None
        converged = False
        iterations = 0

        for iterations in range(1, cfg.max_iter + 1):
            f = self.residual(vars)
            last_residual = f
            fnorm = f.max_norm()
            res_norm_history.append(fnorm)
            if len(res_norm_history) >= 4 and all(
                res_norm_history[-k] > res_norm_history[-k - 1] for k in (1, 2, 3)
            ):
                raise NonConvergence(
                    "fixed-point iteration diverging (residual grew for 3 sweeps); "
                    "reduce h or refresh the freeze point",
                    iterations=iterations,
                    residual=fnorm,
                )
            r = r - f.to_vector()
            new_vars = self.approximate_solve(Stage4Residual.from_vector(r, self.n, self.d))
            new_forces = self.force_products(new_vars)
            delta_state = max(
                float(np.max(np.abs(new_vars.q2 - vars.q2), initial=0.0)),
                float(np.max(np.abs(new_vars.v2 - vars.v2), initial=0.0)),
            )
            delta_force = max(
                float(np.max(np.abs(new_forces[k] - forces[k]), initial=0.0))
                for k in new_forces
            )
            update_norms.append(max(delta_state, delta_force))
            vars, forces = new_vars, new_forces
            if update_norms[-1] <= cfg.tol_fixed_point:
                converged = True
                break

        if not converged:
            raise NonConvergence(
                f"step did not converge in {cfg.max_iter} iterations "
                f"(last update {update_norms[-1]:.3e})",
                iterations=cfg.max_iter,
                residual=update_norms[-1],
            )

        g_norm = float(np.max(np.abs(self.spec.constraint(vars.q2))))
        dgv_norm = float(np.max(np.abs(self.spec.d_constraint(vars.q2) @ vars.v2)))
        if max(g_norm, dgv_norm) > cfg.tol_constraint:
            raise NonConvergence(
                f"converged point violates the constraint (|g| = {g_norm:.3e}, "
                f"|Dg v| = {dgv_norm:.3e})",
                iterations=iterations,
                residual=max(g_norm, dgv_norm),
            )
        diag = StepDiagnostics(
            iterations=iterations,
            converged=True,
            residual_norms=last_residual.block_norms(),
            constraint_violation=g_norm,
            tangency_violation=dgv_norm,
            force_products=forces,
            update_norms=update_norms,
        )
        return vars, diag


# -- public, stateless entry points ------------------------------------------


def residual(spec: ProblemSpec, config: StepConfig, w1: State, vars: Stage4Variables):
    """Evaluate the full nonlinear residual at ``vars`` (fresh workspace)."""
    _require_on_tq(spec, config, w1)
    return _StepWorkspace(spec, config, w1).residual(vars)


def approximate_solve(spec: ProblemSpec, config: StepConfig, rhs: Stage4Residual, w1: State):
    """Solve the frozen approximate f0(x) = rhs (fresh workspace)."""
    return _StepWorkspace(spec, config, w1).approximate_solve(rhs)


def initialize(spec: ProblemSpec, config: StepConfig, w1: State) -> Stage4Variables:
    _require_on_tq(spec, config, w1)
    return _StepWorkspace(spec, config, w1).initialize()


def step(spec: ProblemSpec, config: StepConfig, w1: State):
    """Advance one step; returns (w2, diagnostics)."""
    _require_on_tq(spec, config, w1)
    vars, diag = _StepWorkspace(spec, config, w1).run()
    return State(vars.q2, vars.v2), diag


def simulate(spec: ProblemSpec, config: StepConfig, w0: State, n_steps: int) -> Trajectory:
    """Chain ``n_steps`` steps, reusing each step's advanced-endpoint data.

    On the first non-convergent step, raises NonConvergence with the partial
    trajectory attached as ``exc.trajectory``.
    """
    _require_on_tq(spec, config, w0)
    states = [w0]
    diagnostics = []
    w1data = None
    history = []
    w = w0
    for k in range(n_steps):
        # Extrapolate the multiplier block along the run (quadratic once
        # three converged steps are available); saves population sweeps.
        warm = history[-1] if history else None
        if len(history) >= 2:
            warm = history[-1].copy()
            for name in _WARM_FIELDS:
                a, b = getattr(history[-1], name), getattr(history[-2], name)
                if len(history) >= 3:
                    c = getattr(history[-3], name)
                    setattr(warm, name, 3.0 * a - 3.0 * b + c)
                else:
                    setattr(warm, name, 2.0 * a - b)
        try:
            ws = _StepWorkspace(spec, config, w, w1data=w1data)
            vars, diag = ws.run(warm_from=warm)
        except NonConvergence as exc:
            exc.trajectory = Trajectory(
                states=states,
                diagnostics=diagnostics,
                times=config.h * np.arange(len(states)),
            )
            raise
        w = State(vars.q2, vars.v2)
        states.append(w)
        diagnostics.append(diag)
        w1data = ws.w2data
        history.append(vars)
        if len(history) > 3:
            history.pop(0)
    return Trajectory(
        states=states, diagnostics=diagnostics, times=config.h * np.arange(n_steps + 1)
    )


def _require_on_tq(spec, config, w):
    if not model.tq_membership(spec, w, config.tol_constraint):
        raise ValueError(
            "initial state is not on the constraint tangent bundle to tolerance"
        )
