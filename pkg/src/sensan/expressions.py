"""Whitelisted symbolic expressions.

Config files and moment specifications name functions as strings. The
admissible language is deliberately small: the declared variables,
numeric constants, sums, products, and integer powers up to 4. That is
enough for every bundled functional and moment condition while keeping
exact symbolic derivatives trivially available, which the GMM influence
formulas (theta Jacobians and Hessians) and chart partials require.
"""

from __future__ import annotations

import re

import numpy as np
import sympy as sp

from .errors import SensanError

__all__ = ["parse_whitelisted", "as_array_function", "symbol", "MAX_POWER"]

MAX_POWER = 4


def symbol(name: str) -> sp.Symbol:
    """The symbol convention used by the whitelist (real-valued).

    Derivatives must be taken with respect to symbols carrying the same
    assumptions, or sympy treats them as unrelated."""
    return sp.Symbol(name, real=True)

_TOKEN_RE = re.compile(r"^[\sA-Za-z0-9_+\-*/().]*$")


def parse_whitelisted(text: str, variables: tuple[str, ...]) -> sp.Expr:
    """Parse `text` into a sympy expression over `variables`.

    Rejects anything that is not a polynomial with per-variable degree at
    most MAX_POWER and rational coefficients."""
    if not isinstance(text, str) or not text.strip():
        raise SensanError("expression must be a nonempty string")
    if not _TOKEN_RE.match(text):
        raise SensanError(f"expression {text!r} contains forbidden characters")
    if "**" in text.replace(" ", "") and re.search(r"\*\*\s*-", text):
        raise SensanError(f"expression {text!r} uses a negative power")
    syms = {name: symbol(name) for name in variables}
    try:
        expr = sp.sympify(text, locals=dict(syms), rational=True)
    except (sp.SympifyError, SyntaxError, TypeError) as exc:
        raise SensanError(f"cannot parse expression {text!r}: {exc}") from None
    free = expr.free_symbols
    allowed = set(syms.values())
    if not free <= allowed:
        extra = ", ".join(sorted(str(s) for s in free - allowed))
        raise SensanError(f"expression {text!r} uses unknown symbols: {extra}")
    expr = sp.expand(expr)
    if free and not expr.is_polynomial(*sorted(free, key=str)):
        raise SensanError(f"expression {text!r} is not in the polynomial whitelist")
    for s in free:
        if sp.degree(expr, s) > MAX_POWER:
            raise SensanError(
                f"expression {text!r} exceeds the power limit {MAX_POWER} in {s}")
    return expr


def as_array_function(expr: sp.Expr, variables: tuple[str, ...]):
    """Compile an expression to a numpy-broadcasting callable of the
    declared variables, constant expressions included."""
    syms = [symbol(name) for name in variables]
    fn = sp.lambdify(syms, expr, modules="numpy")

    def wrapped(*args):
        out = fn(*args)
        return np.broadcast_to(np.asarray(out, dtype=float),
                               np.broadcast_shapes(*(np.shape(a) for a in args)))

    return wrapped
