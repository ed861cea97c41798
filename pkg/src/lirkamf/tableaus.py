"""IMEX Butcher tableaus for linearly implicit Runge-Kutta (LIRK) methods.

A LIRK pair treats the stiff linear term with the diagonally implicit
coefficients ``Ahat`` and the nonlinear term with the explicit coefficients
``A``.  Both shipped methods share the weights (``b == bhat``), have an
explicit first stage and a stiffly accurate implicit part.

LIRK3 free parameter
--------------------
The third-order method fixes ``gamma`` and ``a32`` but leaves ``a43`` free.
With ``c = (0, gamma, (1 + gamma)/2, 1)``, ``c1 = 0``, ``a41 = 0`` and
``a42 = 1 - a43``, the only third-order condition that involves the explicit
coefficients beyond ``b`` and ``c`` is ``b^T A c = 1/6``::

    b3 a32 c2 + b4 ((1 - a43) c2 + a43 c3) = 1/6

so that ``a43 = (1/6 - b3 a32 gamma - gamma**2) / (gamma (c3 - gamma))``
(``b4 = gamma``), about ``0.6099288726``.  The remaining conditions
(``b^T 1 = 1``, ``b^T c = 1/2``, ``b^T c^2 = 1/3``, ``b^T Ahat c = 1/6``) hold
independently of ``a43``; :func:`order_conditions` evaluates all of them.
The explicit entry ``a31`` is ``c3 - a32`` so that the row sums of ``A`` match
the implicit abscissae.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction as Fr

import numpy as np

__all__ = ["ImexTableau", "ValidationReport", "lirk3", "lirk4", "validate", "order_conditions"]


@dataclass(frozen=True, eq=False)
class ImexTableau:
    """Paired explicit/implicit Butcher coefficients.

    Attributes
    ----------
    A, Ahat : ndarray, shape (s, s)
        Explicit (strictly lower) and implicit (lower) stage coefficients.
    b, bhat : ndarray, shape (s,)
        Step weights.
    c, chat : ndarray, shape (s,)
        Abscissae of the explicit and implicit parts.
    gamma : float
        Common diagonal of the implicit part.
    """

    name: str
    A: np.ndarray
    Ahat: np.ndarray
    b: np.ndarray
    bhat: np.ndarray
    c: np.ndarray
    chat: np.ndarray
    gamma: float
    order: int = 0

    def __post_init__(self):
        for attr in ("A", "Ahat", "b", "bhat", "c", "chat"):
            arr = np.array(getattr(self, attr), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, attr, arr)
        s = self.b.size
        if self.A.shape != (s, s) or self.Ahat.shape != (s, s):
            raise ValueError("coefficient matrices must be s x s")
        if not (self.bhat.size == self.c.size == self.chat.size == s):
            raise ValueError("weights and abscissae must have length s")

    @property
    def s(self) -> int:
        return self.b.size

    def with_weights(self, b=None, bhat=None) -> "ImexTableau":
        """Copy with replaced weights (handy for injecting defects)."""
        return ImexTableau(
            self.name,
            self.A,
            self.Ahat,
            self.b if b is None else b,
            self.bhat if bhat is None else bhat,
            self.c,
            self.chat,
            self.gamma,
            self.order,
        )


def _to_float(rows):
    return np.array([[float(v) for v in row] for row in rows])


LIRK3_GAMMA = 0.435866521508459
LIRK3_A32 = 0.35


def lirk3() -> ImexTableau:
    """Four-stage third-order LIRK pair with ``gamma = 0.435866521508459``."""
    g = LIRK3_GAMMA
    b2 = -1.5 * g**2 + 4.0 * g - 0.25
    b3 = 1.5 * g**2 - 5.0 * g + 1.25
    c3 = (1.0 + g) / 2.0
    a32 = LIRK3_A32
    a43 = (1.0 / 6.0 - b3 * a32 * g - g * g) / (g * (c3 - g))
    Ahat = [
        [0, 0, 0, 0],
        [0, g, 0, 0],
        [0, (1 - g) / 2, g, 0],
        [0, b2, b3, g],
    ]
    A = [
        [0, 0, 0, 0],
        [g, 0, 0, 0],
        [c3 - a32, a32, 0, 0],
        [0, 1 - a43, a43, 0],
    ]
    b = [0, b2, b3, g]
    c = [0, g, c3, 1]
    return ImexTableau("lirk3", _to_float(A), _to_float(Ahat), b, b, c, c, g, order=3)


def lirk4() -> ImexTableau:
    """Six-stage fourth-order LIRK pair with ``gamma = 1/4`` (exact rationals)."""
    q = Fr(1, 4)
    b = [0, Fr(25, 24), Fr(-49, 48), Fr(125, 16), Fr(-85, 12), q]
    Ahat = [
        [0, 0, 0, 0, 0, 0],
        [0, q, 0, 0, 0, 0],
        [0, Fr(1, 2), q, 0, 0, 0],
        [0, Fr(17, 50), Fr(-1, 25), q, 0, 0],
        [0, Fr(371, 1360), Fr(-137, 2720), Fr(15, 544), q, 0],
        b,
    ]
    A = [
        [0, 0, 0, 0, 0, 0],
        [q, 0, 0, 0, 0, 0],
        [Fr(-1, 4), 1, 0, 0, 0, 0],
        [Fr(-13, 100), Fr(43, 75), Fr(8, 75), 0, 0, 0],
        [Fr(-6, 85), Fr(42, 85), Fr(179, 1360), Fr(-15, 272), 0, 0],
        [0, Fr(79, 24), Fr(-5, 8), Fr(25, 2), Fr(-85, 6), 0],
    ]
    c = [0, q, Fr(3, 4), Fr(11, 20), Fr(1, 2), 1]
    bf = [float(v) for v in b]
    cf = [float(v) for v in c]
    return ImexTableau("lirk4", _to_float(A), _to_float(Ahat), bf, bf, cf, cf, 0.25, order=4)


LIRK4_RATIONAL_WEIGHTS = (0, Fr(25, 24), Fr(-49, 48), Fr(125, 16), Fr(-85, 12), Fr(1, 4))


@dataclass
class ValidationReport:
    """Outcome of :func:`validate`: one boolean per named check."""

    checks: dict[str, bool] = field(default_factory=dict)
    messages: dict[str, str] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(self.checks.values())

    @property
    def failures(self) -> list[str]:
        return [self.messages[k] for k, passed in self.checks.items() if not passed]

    def __bool__(self):
        return self.ok


def validate(t: ImexTableau, atol: float = 1e-12) -> ValidationReport:
    """Check the structural invariants of an IMEX tableau."""
    report = ValidationReport()

    def check(name, passed, message):
        report.checks[name] = bool(passed)
        report.messages[name] = message

    s = t.s
    diag = np.diag(t.Ahat)
    expected_diag = np.r_[0.0, np.full(s - 1, t.gamma)]
    check(
        "explicit_strictly_lower",
        np.allclose(np.triu(t.A), 0.0, atol=atol, rtol=0),
        "explicit matrix A is not strictly lower triangular",
    )
    check(
        "implicit_lower",
        np.allclose(np.triu(t.Ahat, 1), 0.0, atol=atol, rtol=0),
        "implicit matrix Ahat is not lower triangular",
    )
    check(
        "implicit_diagonal",
        np.allclose(diag, expected_diag, atol=atol, rtol=0),
        f"diag(Ahat) = {diag} differs from (0, gamma, ..., gamma)",
    )
    check(
        "weights_match",
        np.allclose(t.b, t.bhat, atol=atol, rtol=0),
        "weights mismatch b != bhat",
    )
    check(
        "stiffly_accurate",
        np.allclose(t.bhat, t.Ahat[-1], atol=atol, rtol=0),
        "bhat differs from the last row of Ahat (not stiffly accurate)",
    )
    check(
        "explicit_row_sums",
        np.allclose(t.A.sum(axis=1), t.c, atol=atol, rtol=0),
        "row sums of A differ from c",
    )
    check(
        "implicit_row_sums",
        np.allclose(t.Ahat.sum(axis=1), t.chat, atol=atol, rtol=0),
        "row sums of Ahat differ from chat",
    )
    check(
        "consistency",
        abs(t.b.sum() - 1.0) <= atol,
        f"sum(b) = {t.b.sum()!r} is not 1",
    )
    return report


def order_conditions(t: ImexTableau) -> dict[str, float]:
    """Residuals of the order-3 conditions (and the order-4 ones for ``s >= 5``).

    Only conditions that survive for a linear implicit term and ``b == bhat``,
    ``c == chat`` are listed; each value should vanish up to roundoff.
    """
    b, A, Ah, c = t.b, t.A, t.Ahat, t.c
    res = {
        "b.1 = 1": b.sum() - 1.0,
        "b.c = 1/2": b @ c - 0.5,
        "b.c^2 = 1/3": b @ c**2 - 1.0 / 3.0,
        "b.A.c = 1/6": b @ A @ c - 1.0 / 6.0,
        "b.Ahat.c = 1/6": b @ Ah @ c - 1.0 / 6.0,
    }
    if t.order >= 4:
        res.update(
            {
                "b.c^3 = 1/4": b @ c**3 - 0.25,
                "b.(c*A.c) = 1/8": b @ (c * (A @ c)) - 0.125,
                "b.A.c^2 = 1/12": b @ A @ c**2 - 1.0 / 12.0,
                "b.A.A.c = 1/24": b @ A @ A @ c - 1.0 / 24.0,
                "b.Ahat.Ahat.c = 1/24": b @ Ah @ Ah @ c - 1.0 / 24.0,
                "b.A.Ahat.c = 1/24": b @ A @ Ah @ c - 1.0 / 24.0,
                "b.Ahat.A.c = 1/24": b @ Ah @ A @ c - 1.0 / 24.0,
                "b.Ahat.c^2 = 1/12": b @ Ah @ c**2 - 1.0 / 12.0,
                "b.(c*Ahat.c) = 1/8": b @ (c * (Ah @ c)) - 0.125,
            }
        )
    return res
