"""LIRK time stepping for semi-linear systems ``y' = L y + f(y, t)``.

Three ways of handling the stage systems ``(I - h gamma L) Y_i = l_i`` are
provided:

``exact``
    a direct factorization of ``I - h gamma L``;
``amf`` with ``k`` refinements
    the approximate factorization ``prod_r (I - h gamma L_r)`` followed by
    ``k`` simplified Newton corrections whose residuals use the exact ``L``.
    Stage right-hand sides and the step update always use the exact ``L``;
``amf-calvo``
    the LIRK method applied with ``Ltilde`` in place of ``L`` throughout,
    plus a step correction built from the defect ``(L - Ltilde) y_n``.
    Writing ``P = I - h gamma Ltilde``, the available corrections are

    ``"damped"`` (default)
        ``h P^{-1} (L - Ltilde) P^{-1} y_n``
    ``"single"``
        ``h P^{-1} (L - Ltilde) y_n``
    ``"scaled"``
        ``h^2 gamma P^{-1} (L - Ltilde) y_n``

    Since ``L - Ltilde = h gamma L_1 L_2 + ...`` is itself ``O(h)``, the
    perturbed scheme has an ``O(h^2)`` local defect.  Only the first two
    forms cancel it (second order); ``"scaled"`` adds an ``O(h^3)`` term and
    leaves the scheme first order.  ``"single"`` amplifies stiff modes by
    up to ``1/gamma`` and is unstable unless ``h ||L_r||`` is small; the
    second solve in ``"damped"`` removes that growth.

The first stage of every shipped tableau is explicit (``ahat_11 = 0``) and is
never passed through a solver.
"""

from __future__ import annotations

import logging
import re
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .operators import (
    AmfResolvent,
    Resolvent,
    SingularFactorError,
    StructuredOperator,
    SumOperator,
)
from .tableaus import ImexTableau

__all__ = [
    "SemiLinearProblem",
    "Strategy",
    "RunReport",
    "DivergenceError",
    "LirkStepper",
    "step_exact",
    "step_amf",
    "step_amf_calvo",
    "calvo_correction",
    "integrate",
    "relative_error",
]

logger = logging.getLogger(__name__)

MAX_REFINEMENTS = 8
DIVERGENCE_FACTOR = 1e8
CALVO_CORRECTIONS = ("damped", "single", "scaled")

Nonlinear = Callable[[np.ndarray, float], np.ndarray]


class DivergenceError(FloatingPointError):
    """A stage or step value became non-finite or blew up."""


@dataclass(eq=False)
class SemiLinearProblem:
    """``y' = (L_1 + ... + L_R) y + f(y, t)`` on ``tspan`` from ``initial``.

    Parameters
    ----------
    linear_parts : list of StructuredOperator
        The splitting of the stiff linear term.
    nonlinear : callable ``f(y, t)``
        The non-stiff remainder.
    initial : ndarray
        State at ``tspan[0]``.
    tspan : (float, float)
    reference : callable ``t -> y``, optional
        Exact (or reference) solution.
    full_operator : StructuredOperator, optional
        ``L`` itself, checked against the sum of the parts on random vectors.
    relinearize : callable ``(y, t) -> (parts, f)``, optional
        When set, the linear parts depend on the state and are re-assembled at
        the start of every step; the returned ``f`` must complete the same
        right-hand side.
    """

    linear_parts: list
    nonlinear: Nonlinear
    initial: np.ndarray
    tspan: tuple = (0.0, 1.0)
    reference: Optional[Callable[[float], np.ndarray]] = None
    full_operator: Optional[StructuredOperator] = None
    relinearize: Optional[Callable] = None
    name: str = "semilinear"

    def __post_init__(self):
        self.linear_parts = list(self.linear_parts)
        self.initial = np.asarray(self.initial, dtype=float)
        if not self.linear_parts:
            raise ValueError("at least one linear part is required")
        for part in self.linear_parts:
            if part.dim != self.dim:
                raise ValueError(f"linear part {part!r} does not match dim {self.dim}")
        if self.full_operator is not None:
            check_splitting(self.linear_parts, self.full_operator)

    @property
    def dim(self) -> int:
        return self.initial.size

    @property
    def time_dependent(self) -> bool:
        return self.relinearize is not None

    def rhs(self, y, t):
        """Full right-hand side ``L y + f(y, t)``."""
        return sum(p.matvec(y) for p in self.linear_parts) + self.nonlinear(y, t)

    def frozen(self, y, t):
        """Linear parts and nonlinear term to use for a step starting at ``(y, t)``."""
        if self.relinearize is None:
            return self.linear_parts, self.nonlinear
        return self.relinearize(y, t)


def check_splitting(parts, full, trials: int = 10, rtol: float = 1e-12, seed: int = 0):
    """Raise ``ValueError`` unless ``sum(parts) @ x == full @ x`` on random ``x``."""
    rng = np.random.default_rng(seed)
    for _ in range(trials):
        x = rng.standard_normal(full.dim)
        lhs = sum(p.matvec(x) for p in parts)
        rhs = full.matvec(x)
        scale = max(np.linalg.norm(rhs), np.linalg.norm(x))
        if np.linalg.norm(lhs - rhs) > rtol * scale:
            raise ValueError("linear parts do not sum to the full operator")


@dataclass(frozen=True)
class Strategy:
    """How stage systems are solved: ``exact``, ``amf`` (with refinements) or ``amf-calvo``."""

    kind: str = "exact"
    refinements: int = 0
    correction: str = "damped"

    def __post_init__(self):
        if self.kind not in ("exact", "amf", "amf-calvo"):
            raise ValueError(f"unknown strategy kind {self.kind!r}")
        if not 0 <= self.refinements <= MAX_REFINEMENTS:
            raise ValueError(f"refinements must lie in [0, {MAX_REFINEMENTS}]")
        if self.kind != "amf" and self.refinements:
            raise ValueError("refinements only apply to the amf strategy")
        if self.correction not in CALVO_CORRECTIONS:
            raise ValueError(f"unknown correction {self.correction!r}")

    @classmethod
    def parse(cls, name: str) -> "Strategy":
        """``exact``, ``amf``, ``amfr1``, ``amfr2``, ... or ``amf-calvo``."""
        name = name.strip().lower()
        if name in ("exact", "amf-calvo"):
            return cls(name)
        m = re.fullmatch(r"amf(?:r(\d+))?", name)
        if m is None:
            raise ValueError(f"unknown strategy {name!r}")
        return cls("amf", int(m.group(1) or 0))

    @property
    def label(self) -> str:
        if self.kind == "amf" and self.refinements:
            return f"amfr{self.refinements}"
        return self.kind


@dataclass
class RunReport:
    steps: int
    h: float
    error: Optional[float] = None
    estimated_order: Optional[float] = None
    diverged: bool = False
    cpu_seconds: float = 0.0
    counts: Counter = field(default_factory=Counter, repr=False)


class LirkStepper:
    """Fixed-step LIRK stepper bound to a problem, tableau, strategy and step size.

    Factorizations of linear parts that do not change between steps are
    computed once and reused.
    """

    def __init__(self, problem: SemiLinearProblem, tableau: ImexTableau, strategy: Strategy, h: float):
        if h <= 0:
            raise ValueError("step size must be positive")
        diag = np.diag(tableau.Ahat)
        implicit = diag != 0.0
        if np.any(implicit & ~np.isclose(diag, tableau.gamma, rtol=0, atol=1e-14)):
            raise ValueError("implicit diagonal must be constant (gamma)")
        self.problem = problem
        self.tableau = tableau
        self.strategy = strategy
        self.h = float(h)
        self._implicit = implicit
        self._static = {id(p): p for p in problem.linear_parts}
        self._resolvents: dict[int, Resolvent] = {}
        self._static_full = None
        self.counts: Counter = Counter()

    # -- solver assembly -------------------------------------------------

    def _resolvent(self, op: StructuredOperator) -> Resolvent:
        key = id(op)
        if key in self._static:
            if key not in self._resolvents:
                self._resolvents[key] = Resolvent(op, self.h, self.tableau.gamma)
            return self._resolvents[key]
        return Resolvent(op, self.h, self.tableau.gamma)

    def _amf(self, parts) -> AmfResolvent:
        resolvents = []
        for r, part in enumerate(parts):
            try:
                resolvents.append(self._resolvent(part))
            except SingularFactorError as exc:
                raise SingularFactorError(str(exc), index=r) from None
        return AmfResolvent(parts, self.h, self.tableau.gamma, resolvents=resolvents)

    def _full(self, parts):
        if len(parts) == 1:
            return parts[0]
        if self.problem.time_dependent:
            return SumOperator(parts)
        if self._static_full is None:
            self._static_full = self.problem.full_operator or SumOperator(parts)
            self._static[id(self._static_full)] = self._static_full
        return self._static_full

    # -- stepping --------------------------------------------------------

    def _stages(self, y, t, f, lin_apply, stage_solve):
        tab, h = self.tableau, self.h
        s = tab.s
        F = [None] * s
        LY = [None] * s
        for i in range(s):
            ell = y.copy()
            for j in range(i):
                if tab.A[i, j]:
                    ell += (h * tab.A[i, j]) * F[j]
                if tab.Ahat[i, j]:
                    ell += (h * tab.Ahat[i, j]) * LY[j]
            Yi = stage_solve(ell) if self._implicit[i] else ell
            if not np.all(np.isfinite(Yi)):
                raise DivergenceError(f"non-finite value in stage {i + 1}")
            F[i] = f(Yi, t + tab.c[i] * h)
            LY[i] = lin_apply(Yi)
        y_next = y.copy()
        for j in range(s):
            if tab.b[j]:
                y_next += (h * tab.b[j]) * F[j]
            if tab.bhat[j]:
                y_next += (h * tab.bhat[j]) * LY[j]
        return y_next

    def step(self, y, t):
        """Advance ``y`` from ``t`` to ``t + h``."""
        y = np.asarray(y, dtype=float)
        parts, f = self.problem.frozen(y, t)
        kind = self.strategy.kind
        if kind == "exact":
            full = self._full(parts)
            res = self._resolvent(full)

            def lin_apply(x):
                self.counts["full_apply"] += 1
                return full.matvec(x)

            def stage_solve(rhs):
                self.counts["exact_solve"] += 1
                return res.solve(rhs)

            y_next = self._stages(y, t, f, lin_apply, stage_solve)
        else:
            amf = self._amf(parts)
            if kind == "amf":
                k = self.strategy.refinements

                def stage_solve(rhs):
                    Yi = amf.solve(rhs)
                    for _ in range(k):
                        Yi = amf.refine(Yi, rhs)
                    return Yi

                y_next = self._stages(y, t, f, amf.full_matvec, stage_solve)
            else:
                y_next = self._stages(y, t, f, amf.ltilde_matvec, amf.solve)
                y_next = y_next + self._calvo_correction(amf, y)
            self.counts.update(amf.counts)
        self.counts["steps"] += 1
        return y_next


    def _calvo_correction(self, amf: AmfResolvent, y):
        form = self.strategy.correction
        x = amf.solve(y) if form == "damped" else y
        defect = amf.full_matvec(x) - amf.ltilde_matvec(x)
        coeff = self.h**2 * self.tableau.gamma if form == "scaled" else self.h
        return coeff * amf.solve(defect)


def _one_step(p, t, y_n, t_n, h, strategy):
    return LirkStepper(p, t, strategy, h).step(y_n, t_n)


def step_exact(p: SemiLinearProblem, t: ImexTableau, y_n, t_n: float, h: float):
    """One LIRK step with exact stage solves."""
    return _one_step(p, t, y_n, t_n, h, Strategy("exact"))


def step_amf(p: SemiLinearProblem, t: ImexTableau, y_n, t_n: float, h: float, k: int = 0):
    """One LIRK step with AMF stage solves and ``k`` refinements per stage."""
    return _one_step(p, t, y_n, t_n, h, Strategy("amf", k))


def step_amf_calvo(
    p: SemiLinearProblem, t: ImexTableau, y_n, t_n: float, h: float, correction: str = "damped"
):
    """One step of the fully perturbed AMF scheme plus the defect correction."""
    return _one_step(p, t, y_n, t_n, h, Strategy("amf-calvo", correction=correction))


def calvo_correction(p: SemiLinearProblem, t: ImexTableau, y_n, t_n: float, h: float, correction: str = "damped"):
    """The correction term alone, as added by :func:`step_amf_calvo`."""
    stepper = LirkStepper(p, t, Strategy("amf-calvo", correction=correction), h)
    parts, _ = p.frozen(np.asarray(y_n, dtype=float), t_n)
    return stepper._calvo_correction(stepper._amf(parts), np.asarray(y_n, dtype=float))


def relative_error(u, u_ref) -> float:
    """``||u - u_ref||_2 / ||u_ref||_2``."""
    u = np.asarray(u)
    u_ref = np.asarray(u_ref)
    if u.shape != u_ref.shape:
        raise ValueError(f"shape mismatch {u.shape} vs {u_ref.shape}")
    denom = np.linalg.norm(u_ref)
    if denom == 0.0:
        raise ValueError("reference has zero norm")
    return float(np.linalg.norm(u - u_ref) / denom)


def integrate(
    p: SemiLinearProblem,
    t: ImexTableau,
    strategy: Strategy | str,
    steps: int,
    reference: Optional[np.ndarray] = None,
):
    """Integrate ``p`` over its ``tspan`` with ``steps`` equal steps.

    The error is measured against ``reference`` (a terminal state) when
    given, otherwise against ``p.reference(t_end)`` when available.
    Divergence (non-finite values, growth beyond ``1e8 * ||y0||`` or a
    singular stage matrix) is recorded in the report rather than raised.

    Returns
    -------
    y : ndarray or None
        Terminal state, ``None`` when the run diverged.
    report : RunReport
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if isinstance(strategy, str):
        strategy = Strategy.parse(strategy)
    t0, t_end = p.tspan
    h = (t_end - t0) / steps
    report = RunReport(steps=steps, h=h)
    y0_norm = np.linalg.norm(p.initial)
    limit = DIVERGENCE_FACTOR * (y0_norm if y0_norm > 0 else 1.0)

    stepper = LirkStepper(p, t, strategy, h)
    y = p.initial.copy()
    start = time.perf_counter()
    try:
        # overflow on the way to divergence is detected below, not warned about
        with np.errstate(over="ignore", invalid="ignore"):
            for n in range(steps):
                y = stepper.step(y, t0 + n * h)
                norm = np.linalg.norm(y)
                if not np.isfinite(norm) or norm > limit:
                    raise DivergenceError(f"state norm {norm:.3e} at step {n + 1}")
    except (DivergenceError, SingularFactorError, FloatingPointError) as exc:
        logger.info("run with %d steps diverged: %s", steps, exc)
        report.diverged = True
        y = None
    report.cpu_seconds = time.perf_counter() - start
    report.counts = stepper.counts

    if y is not None:
        if reference is None and p.reference is not None:
            reference = p.reference(t_end)
        if reference is not None:
            report.error = relative_error(y, reference)
    return y, report
