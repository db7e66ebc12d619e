"""Dense symmetric saddle-point ("KKT") systems.

Every multiplier solve in this package leads to a block system in one of two
sign layouts,

    minus:  [[M, -G^T], [-G, 0]]        plus:  [[B, G^T], [G, 0]]

with a symmetric top block (mass matrix or identity-plus-correction) and a
full-row-rank coupling block G (d x N, d <= N).  Both layouts are handled by
one factorization behind an orientation flag; they are interchangeable up to
signs.

The factorization eliminates the top block first (Schur complement on the
d x d block G M^-1 G^T), which is cheap because d is small in the target
problems.  If the top block is not positive definite or the Schur complement
looks ill-conditioned (estimate > 1e12), a dense LU of the assembled matrix
is used instead.  Factorizations are immutable and reusable across many
right-hand sides.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import DimensionMismatch, SingularSystem

# Relative pivot threshold below which a factorization is declared singular.
PIVOT_RTOL = 1e-13

# Schur-complement condition estimate above which the dense path takes over.
SCHUR_COND_LIMIT = 1e12

_POTRF, _POTRS = scipy.linalg.get_lapack_funcs(
    ("potrf", "potrs"), (np.empty((1, 1), dtype=np.float64),)
)


def _chol(mat: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor via LAPACK; raises LinAlgError on non-PD input."""
    factor_, info = _POTRF(mat, lower=True, overwrite_a=False, clean=False)
    if info != 0:
        raise scipy.linalg.LinAlgError(f"potrf failed with info={info}")
    return factor_


def _chol_solve(factor_: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    sol, info = _POTRS(factor_, rhs, lower=True)
    if info != 0:
        raise scipy.linalg.LinAlgError(f"potrs failed with info={info}")
    return sol


@dataclass(frozen=True)
class SaddleSystem:
    """Symmetric saddle system defined by its top block, coupling and layout.

    orientation "minus" assembles [[M, -G^T], [-G, 0]]; "plus" assembles
    [[B, G^T], [G, 0]].
    """

    top_block: np.ndarray
    coupling: np.ndarray
    orientation: str = "minus"

    def __post_init__(self):
        top = np.asarray(self.top_block, dtype=float)
        coup = np.atleast_2d(np.asarray(self.coupling, dtype=float))
        object.__setattr__(self, "top_block", top)
        object.__setattr__(self, "coupling", coup)
        if top.ndim != 2 or top.shape[0] != top.shape[1]:
            raise DimensionMismatch(f"top block must be square, got {top.shape}")
        n = top.shape[0]
        d = coup.shape[0]
        if coup.shape[1] != n:
            raise DimensionMismatch(
                f"coupling has {coup.shape[1]} columns, expected {n}"
            )
        if not 1 <= d <= n:
            raise DimensionMismatch(f"need 1 <= d <= N, got d={d}, N={n}")
        if self.orientation not in ("minus", "plus"):
            raise ValueError(f"unknown orientation {self.orientation!r}")

    @property
    def n(self) -> int:
        return self.top_block.shape[0]

    @property
    def d(self) -> int:
        return self.coupling.shape[0]


def assemble(system: SaddleSystem) -> np.ndarray:
    """Assembled (N+d) x (N+d) matrix, mainly for tests and the dense path."""
    n, d = system.n, system.d
    sign = -1.0 if system.orientation == "minus" else 1.0
    full = np.zeros((n + d, n + d))
    full[:n, :n] = system.top_block
    full[:n, n:] = sign * system.coupling.T
    full[n:, :n] = sign * system.coupling
    return full


@dataclass(frozen=True)
class SaddleFactorization:
    """Opaque reusable factorization of a :class:`SaddleSystem`."""

    system: SaddleSystem
    condition_estimate: float
    _mode: str = field(repr=False)          # "schur" or "dense"
    _top_chol: np.ndarray = field(repr=False, default=None)
    _schur_chol: np.ndarray = field(repr=False, default=None)
    _ginv: np.ndarray = field(repr=False, default=None)   # M^-1 G^T
    _lu: tuple = field(repr=False, default=None)

    @property
    def n(self) -> int:
        return self.system.n

    @property
    def d(self) -> int:
        return self.system.d

    def solve(self, rhs_top, rhs_bottom):
        return solve(self, rhs_top, rhs_bottom)

    def solve_raw(self, rhs_top, rhs_bottom):
        """Solve without input validation; shapes must already be correct."""
        return _solve_raw(self, rhs_top, rhs_bottom)

    def solve_columns(self, rhs_top, rhs_bottom):
        """Solve for several right-hand sides stacked as columns."""
        x, y = _solve_raw(self, np.atleast_2d(rhs_top.T).T, np.atleast_2d(rhs_bottom.T).T)
        return x, y


def _cholesky_cond(chol: np.ndarray) -> float:
    diag = np.abs(np.diag(chol))
    lo = diag.min()
    if lo == 0.0:
        return np.inf
    return (diag.max() / lo) ** 2


def factor(system: SaddleSystem) -> SaddleFactorization:
    """Factor a saddle system, detecting rank deficiency.

    Raises SingularSystem when the coupling is rank deficient or the top
    block is degenerate on the kernel of the coupling.
    """
    try:
        top_chol = _chol(system.top_block)
        ginv = _chol_solve(top_chol, system.coupling.T)
        schur = system.coupling @ ginv
        schur_chol = _chol(0.5 * (schur + schur.T))
        cond = _cholesky_cond(top_chol) * _cholesky_cond(schur_chol)
        if np.isfinite(cond) and cond <= SCHUR_COND_LIMIT:
            return SaddleFactorization(
                system=system,
                condition_estimate=cond,
                _mode="schur",
                _top_chol=top_chol,
                _schur_chol=schur_chol,
                _ginv=ginv,
            )
    except scipy.linalg.LinAlgError:
        pass

    # Dense symmetric-indefinite fallback via LU with a pivot-ratio check.
    full = assemble(system)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(full, check_finite=False)
    pivots = np.abs(np.diag(lu))
    largest = pivots.max(initial=0.0)
    if largest == 0.0 or pivots.min() < PIVOT_RTOL * largest:
        raise SingularSystem(
            "saddle system is singular (rank-deficient coupling or "
            "degenerate top block on ker G)"
        )
    return SaddleFactorization(
        system=system,
        condition_estimate=largest / pivots.min(),
        _mode="dense",
        _lu=(lu, piv),
    )


def _solve_raw(fact: SaddleFactorization, rhs_top, rhs_bottom):
    system = fact.system
    sign = -1.0 if system.orientation == "minus" else 1.0
    if fact._mode == "schur":
        # Layout [[M, sG^T], [sG, 0]] with s = +-1:
        #   M x + s G^T y = r,  s G x = b
        # eliminate x = M^-1 (r - s G^T y):
        #   s G M^-1 r - G M^-1 G^T y = b  =>  S y = s G M^-1 r - b
        minv_r = _chol_solve(fact._top_chol, rhs_top)
        y = _chol_solve(
            fact._schur_chol, sign * (system.coupling @ minv_r) - rhs_bottom
        )
        x = minv_r - sign * (fact._ginv @ y)
        return x, y
    lu, piv = fact._lu
    n = system.n
    stacked = np.concatenate([rhs_top, rhs_bottom], axis=0)
    sol = scipy.linalg.lu_solve((lu, piv), stacked, check_finite=False)
    return sol[:n], sol[n:]


def solve(fact: SaddleFactorization, rhs_top, rhs_bottom):
    """Solve the factored system for one right-hand side (vectors)."""
    rhs_top = np.asarray(rhs_top, dtype=float)
    rhs_bottom = np.atleast_1d(np.asarray(rhs_bottom, dtype=float))
    if rhs_top.shape != (fact.n,):
        raise DimensionMismatch(f"rhs_top has shape {rhs_top.shape}, expected ({fact.n},)")
    if rhs_bottom.shape != (fact.d,):
        raise DimensionMismatch(
            f"rhs_bottom has shape {rhs_bottom.shape}, expected ({fact.d},)"
        )
    return _solve_raw(fact, rhs_top, rhs_bottom)
