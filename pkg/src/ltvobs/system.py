"""Plant description: the time-varying quadruple (A, F, D, C).

The model is

    dx/dt = A(t) x + F(t) u + D(t) w,      y = C(t) x,

with x in R^n, known input u in R^q, unknown input w in R^m bounded by
``w_bound`` in the max norm, and measured output y in R^r.
"""

from dataclasses import dataclass

import numpy as np

from .expr import MatrixExpr

__all__ = ["LtvSystem", "as_matrix_expr"]


def as_matrix_expr(value):
    """Coerce a MatrixExpr, numeric array, or grid of strings to MatrixExpr."""
    if isinstance(value, MatrixExpr):
        return value
    arr = np.asarray(value)
    if arr.dtype.kind in "fiub":
        return MatrixExpr.constant(arr)
    if arr.ndim == 1:
        value = [[cell] for cell in value]
    return MatrixExpr.from_strings(value)


@dataclass(frozen=True)
class LtvSystem:
    """System matrices plus the unknown-input bound.

    ``d`` columns are the unknown-input channels; ``w_bound`` bounds each
    component of w.  Column vectors may be given as flat sequences.
    """

    a: MatrixExpr
    f: MatrixExpr
    d: MatrixExpr
    c: MatrixExpr
    w_bound: float = 0.0

    def __post_init__(self):
        for name in ("a", "f", "d", "c"):
            object.__setattr__(self, name, as_matrix_expr(getattr(self, name)))
        n = self.a.rows
        if self.a.cols != n:
            raise ValueError(f"A must be square, got {self.a.shape}")
        for name, expected_rows in (("f", n), ("d", n)):
            m = getattr(self, name)
            if m.rows != expected_rows:
                raise ValueError(
                    f"{name.upper()} must have {expected_rows} rows, got {m.rows}"
                )
        if self.c.cols != n:
            raise ValueError(f"C must have {n} columns, got {self.c.cols}")
        if not (np.isfinite(self.w_bound) and self.w_bound >= 0.0):
            raise ValueError(f"w_bound must be finite and >= 0, got {self.w_bound}")

    @property
    def n(self):
        return self.a.rows

    @property
    def q(self):
        return self.f.cols

    @property
    def m(self):
        return self.d.cols

    @property
    def r(self):
        return self.c.rows
