"""Method-of-lines test problems on the unit square.

Grids use ``M`` interior points per direction at ``x_i = i / (M + 1)`` and
row-major ordering ``(U_11, U_12, ..., U_1M, ..., U_MM)``, so the x-derivative
is ``D (x) I_M`` and the y-derivative ``I_M (x) D``.

Allen-Cahn
    ``u_t = Lap u + u - u^3 + s(t)`` with homogeneous Dirichlet data and the
    manufactured solution ``u = exp(t) sin(pi x) sin(pi y)``.  The grid
    function of ``sin(pi x) sin(pi y)`` is an eigenvector of the discrete
    Laplacian with eigenvalue ``-lam_h``, ``lam_h = 8 (M+1)^2 sin^2(pi / (2 (M+1)))``,
    so the source ``s = lam_h u + u^3`` makes the sampled exact solution an
    exact solution of the semi-discrete system.  (``lam_h -> 2 pi^2``; the
    continuous source ``2 pi^2 u + u^3`` would leave an ``O(dx^2)`` residual.)

Brusselator
    ``u_t = 1 + u^2 v - (B+1) u + alpha Lap u``, ``v_t = B u - u^2 v + alpha Lap v``
    with zero-flux boundaries (mirrored ghost values).  The two species are
    stacked, ``y = (u, v)``.  The two-way splitting puts only diffusion in the
    linear part; the three-way splitting adds the pointwise reaction Jacobian
    frozen at the start of each step.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .integrator import SemiLinearProblem
from .operators import GeneralSparse, Kronecker, PointwiseBlocks, StructuredOperator, Tridiagonal

__all__ = [
    "GridSpec",
    "ProblemBuild",
    "build_allen_cahn",
    "build_brusselator",
    "dominant_eigenvalue",
    "BRUSSELATOR_CASES",
    "CASE2_GRID_SIZES",
]

BRUSSELATOR_CASES = {
    1: {"alpha": 0.001, "B": 3.0},
    2: {"alpha": 0.1, "B": 3.4},
}
# full-size grids of the stiff case; tests run scaled-down grids
CASE2_GRID_SIZES = {"two-way": 199, "three-way": 127}


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid of ``M x M`` interior points on the unit square."""

    M: int
    bc: str = "dirichlet"

    def __post_init__(self):
        if self.M < 2:
            raise ValueError("M must be at least 2")
        if self.bc not in ("dirichlet", "neumann"):
            raise ValueError(f"unknown boundary condition {self.bc!r}")

    @property
    def spacing(self) -> float:
        return 1.0 / (self.M + 1)

    @property
    def points(self) -> np.ndarray:
        return np.arange(1, self.M + 1) * self.spacing

    def mesh(self):
        """``(X, Y)`` flattened in row-major order (y varies fastest)."""
        X, Y = np.meshgrid(self.points, self.points, indexing="ij")
        return X.ravel(), Y.ravel()

    def second_difference(self, scale: float = 1.0) -> Tridiagonal:
        """1-D second-difference operator scaled by ``scale / dx^2``."""
        factor = scale / self.spacing**2
        if self.bc == "dirichlet":
            return Tridiagonal.stencil(self.M, factor)
        return Tridiagonal.neumann_stencil(self.M, factor)


@dataclass(eq=False)
class ProblemBuild:
    problem: SemiLinearProblem
    grid: GridSpec
    splitting: str
    metadata: dict = field(default_factory=dict)


def _assembled_laplacian(grid: GridSpec, species: int, scale: float) -> GeneralSparse:
    # independent 5-point assembly, used to cross-check the Kronecker splitting
    D = grid.second_difference(scale).tosparse()
    I = sp.identity(grid.M)
    lap = sp.kron(D, I) + sp.kron(I, D)
    return GeneralSparse(sp.kron(sp.identity(species), lap))


def build_allen_cahn(M: int, t_end: float = 1.0, forcing: str = "discrete") -> ProblemBuild:
    """Allen-Cahn problem with manufactured solution on an ``M x M`` grid.

    Parameters
    ----------
    M : int
        Interior points per direction.
    t_end : float
        Final time.
    forcing : {"discrete", "continuum"}
        ``"discrete"`` uses the discrete Laplacian eigenvalue in the source so
        the sampled solution is exact for the semi-discrete system;
        ``"continuum"`` uses ``2 pi^2`` and leaves an ``O(dx^2)`` residual.

    The source is checked at build time by evaluating the residual of the
    sampled solution in the semi-discrete system; it is stored as
    ``metadata["manufactured_residual"]``.
    """
    if forcing not in ("discrete", "continuum"):
        raise ValueError(f"unknown forcing {forcing!r}")
    grid = GridSpec(M, "dirichlet")
    D = grid.second_difference()
    Lx = Kronecker(D, inner=M)
    Ly = Kronecker(D, outer=M)
    X, Y = grid.mesh()
    shape = np.sin(np.pi * X) * np.sin(np.pi * Y)
    lam_h = 8.0 / grid.spacing**2 * np.sin(np.pi * grid.spacing / 2.0) ** 2
    lam = lam_h if forcing == "discrete" else 2.0 * np.pi**2
    # sin(pi x) sin(pi y) vanishes on the whole boundary of the unit square
    boundary = np.zeros_like(shape)

    def exact(t):
        return np.exp(t) * shape

    def source(t):
        u = exact(t)
        return lam * u + u**3

    def nonlinear(y, t):
        return y - y**3 + source(t) + boundary

    problem = SemiLinearProblem(
        linear_parts=[Lx, Ly],
        nonlinear=nonlinear,
        initial=exact(0.0),
        tspan=(0.0, t_end),
        reference=exact,
        full_operator=_assembled_laplacian(grid, 1, 1.0),
        name="allen-cahn",
    )
    # u' = u for the manufactured solution
    u0 = exact(0.0)
    residual = float(np.linalg.norm(u0 - problem.rhs(u0, 0.0)) / np.linalg.norm(u0))
    if forcing == "discrete" and residual > 1e-10:
        raise RuntimeError(f"manufactured source inconsistent: residual {residual:.3e}")
    meta = {
        "forcing": forcing,
        "manufactured_residual": residual,
        "laplacian_eigenvalue": lam_h,
        "continuum_eigenvalue": 2.0 * np.pi**2,
        "boundary": boundary,
    }
    return ProblemBuild(problem, grid, "two-way", meta)


def manufactured_residual(build: ProblemBuild, t: float, dt: float = 1e-6) -> float:
    """Relative residual ``||u' - (L u + f(u, t))|| / ||u'||`` of the exact solution.

    ``u'`` is taken by central differences of the reference solution.
    """
    p = build.problem
    du = (p.reference(t + dt) - p.reference(t - dt)) / (2 * dt)
    return float(np.linalg.norm(du - p.rhs(p.reference(t), t)) / np.linalg.norm(du))


def brusselator_reaction(y, B):
    n = y.size // 2
    u, v = y[:n], y[n:]
    u2v = u * u * v
    return np.concatenate([1.0 + u2v - (B + 1.0) * u, B * u - u2v])


def brusselator_jacobian_blocks(y, B) -> np.ndarray:
    """Pointwise ``2 x 2`` Jacobians of the reaction terms, shape ``(M^2, 2, 2)``."""
    n = y.size // 2
    u, v = y[:n], y[n:]
    blocks = np.empty((n, 2, 2))
    blocks[:, 0, 0] = 2.0 * u * v - (B + 1.0)
    blocks[:, 0, 1] = u * u
    blocks[:, 1, 0] = B - 2.0 * u * v
    blocks[:, 1, 1] = -u * u
    return blocks


def brusselator_initial(grid: GridSpec, case: int) -> np.ndarray:
    X, Y = grid.mesh()
    if case == 1:
        u, v = 0.5 + Y, 1.0 + 5.0 * X
    elif case == 2:
        u = 22.0 * Y * (1.0 - Y) ** 1.5
        v = 22.0 * X * (1.0 - X) ** 1.5
    else:
        raise ValueError(f"unknown Brusselator case {case!r}")
    return np.concatenate([u, v])


def build_brusselator(
    M: int,
    alpha: float | None = None,
    B: float | None = None,
    case: int = 1,
    splitting: str = "two-way",
    t_end: float = 1.0,
) -> ProblemBuild:
    """2-D Brusselator on an ``M x M`` grid; ``alpha`` and ``B`` default to the case values."""
    if case not in BRUSSELATOR_CASES:
        raise ValueError(f"unknown Brusselator case {case!r}")
    if splitting not in ("two-way", "three-way"):
        raise ValueError(f"unknown splitting {splitting!r}")
    params = dict(BRUSSELATOR_CASES[case])
    if alpha is not None:
        params["alpha"] = float(alpha)
    if B is not None:
        params["B"] = float(B)
    alpha, B = params["alpha"], params["B"]
    if alpha <= 0:
        raise ValueError("alpha must be positive")

    grid = GridSpec(M, "neumann")
    D = grid.second_difference(alpha)
    Lx = Kronecker(D, outer=2, inner=M)
    Ly = Kronecker(D, outer=2 * M)
    y0 = brusselator_initial(grid, case)
    full = _assembled_laplacian(grid, 2, alpha)

    def reaction(y, t):
        return brusselator_reaction(y, B)

    relinearize = None
    parts: list[StructuredOperator] = [Lx, Ly]
    if splitting == "three-way":

        def relinearize(y, t):
            Lrea = PointwiseBlocks.stacked(brusselator_jacobian_blocks(y, B))

            def remainder(z, s):
                return brusselator_reaction(z, B) - Lrea.matvec(z)

            return [Lx, Ly, Lrea], remainder

        parts, nonlinear = relinearize(y0, 0.0)
        full = None
    else:
        nonlinear = reaction

    problem = SemiLinearProblem(
        linear_parts=parts,
        nonlinear=nonlinear,
        initial=y0,
        tspan=(0.0, t_end),
        full_operator=full,
        relinearize=relinearize,
        name=f"brusselator-{case}",
    )
    meta = {"alpha": alpha, "B": B, "case": case, "diffusion": [Lx, Ly]}
    return ProblemBuild(problem, grid, splitting, meta)


class ConvergenceWarning(UserWarning):
    pass


def dominant_eigenvalue(
    op: StructuredOperator,
    iterations: int = 20000,
    tol: float = 1e-6,
    return_info: bool = False,
):
    """Estimate ``max |lambda|`` of ``op`` by power iteration.

    The start vector is drawn from a fixed seed, so the result is
    deterministic.  Iteration stops once successive estimates of
    ``||A x|| / ||x||`` agree to ``tol`` (relative).

    Returns
    -------
    float, or ``(float, bool)`` with the convergence flag if ``return_info``.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    x = np.random.default_rng(0).standard_normal(op.dim)
    x /= np.linalg.norm(x)
    estimate = 0.0
    converged = False
    for _ in range(iterations):
        y = op.matvec(x)
        norm = np.linalg.norm(y)
        if norm == 0.0:
            estimate, converged = 0.0, True
            break
        if abs(norm - estimate) <= tol * norm:
            estimate, converged = norm, True
            break
        estimate = norm
        x = y / norm
    if not converged:
        warnings.warn(
            f"power iteration did not converge in {iterations} iterations",
            ConvergenceWarning,
            stacklevel=2,
        )
    if return_info:
        return estimate, converged
    return estimate
