"""Safe parser for polynomial expressions in x.

Grammar (Python syntax subset)::

    expr   := term (('+' | '-') term)*
    term   := factor (('*' | '/') factor)*      # division by constants only
    factor := ('+' | '-') factor | power
    power  := atom ('**' | '^') non-negative integer
    atom   := number | 'x' | '(' expr ')'

Examples: ``"0"``, ``"x"``, ``"0.5*x**2"``, ``"1 - 0.2*x^3"``.
"""

from __future__ import annotations

import ast

from numpy.polynomial import Polynomial


class ExpressionError(ValueError):
    pass


def _eval(node) -> Polynomial:
    if isinstance(node, ast.Expression):
        return _eval(node.body)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
        return Polynomial([float(node.value)])
    if isinstance(node, ast.Name):
        if node.id != "x":
            raise ExpressionError(f"unknown variable {node.id!r}; only x is allowed")
        return Polynomial([0.0, 1.0])
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.UAdd, ast.USub)):
        val = _eval(node.operand)
        return -val if isinstance(node.op, ast.USub) else val
    if isinstance(node, ast.BinOp):
        left = _eval(node.left)
        if isinstance(node.op, ast.Pow):
            right = node.right
            if isinstance(right, ast.Constant) and isinstance(right.value, int) and right.value >= 0:
                return left**right.value
            raise ExpressionError("exponents must be non-negative integer literals")
        right = _eval(node.right)
        if isinstance(node.op, ast.Add):
            return left + right
        if isinstance(node.op, ast.Sub):
            return left - right
        if isinstance(node.op, ast.Mult):
            return left * right
        if isinstance(node.op, ast.Div):
            if right.degree() > 0 or right.coef[0] == 0:
                raise ExpressionError("division only by non-zero constants")
            return left / right.coef[0]
    raise ExpressionError(f"unsupported syntax: {ast.dump(node)}")


def parse_polynomial(text: str) -> Polynomial:
    """Parse ``text`` into a numpy Polynomial in x."""
    if not isinstance(text, str) or not text.strip():
        raise ExpressionError("empty expression")
    try:
        tree = ast.parse(text.replace("^", "**"), mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"cannot parse {text!r}: {exc.msg}") from None
    return _eval(tree).trim()
