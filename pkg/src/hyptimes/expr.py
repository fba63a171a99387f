"""Whitelisted arithmetic expressions over coordinates and parameters.

Expressions are parsed with :mod:`ast`, checked against a small grammar
(numbers, names, ``+ - * / **``, unary minus and the functions
``sin cos exp log pow``) and compiled once.
"""

from __future__ import annotations

import ast
import math

FUNCTIONS = {
    "sin": math.sin,
    "cos": math.cos,
    "exp": math.exp,
    "log": math.log,
    "pow": math.pow,
}
CONSTANTS = {"pi": math.pi, "e": math.e}
_BINOPS = (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow)
_UNARY = (ast.USub, ast.UAdd)


class ExpressionError(ValueError):
    """Malformed expression or unknown symbol; carries the offending token
    and its column (0-based)."""

    def __init__(self, message: str, source: str, column: int | None = None, token: str | None = None):
        where = "" if column is None else f" at column {column}"
        tok = "" if token is None else f" near {token!r}"
        super().__init__(f"{message}{where}{tok} in {source!r}")
        self.source = source
        self.column = column
        self.token = token


def _token_at(source: str, col: int) -> str:
    rest = source[col:].lstrip()
    if not rest:
        return "<end>"
    j = 1
    if rest[0].isalnum() or rest[0] in "_.":
        while j < len(rest) and (rest[j].isalnum() or rest[j] in "_."):
            j += 1
    return rest[:j]


def _check(node: ast.AST, names: set[str], source: str) -> None:
    if isinstance(node, ast.Expression):
        _check(node.body, names, source)
    elif isinstance(node, ast.Constant):
        if not isinstance(node.value, (int, float)) or isinstance(node.value, bool):
            raise ExpressionError("only numeric literals are allowed", source,
                                  node.col_offset, repr(node.value))
    elif isinstance(node, ast.Name):
        if node.id not in names:
            raise ExpressionError(f"undefined symbol {node.id!r}", source, node.col_offset, node.id)
    elif isinstance(node, ast.BinOp):
        if not isinstance(node.op, _BINOPS):
            raise ExpressionError("operator not allowed", source, node.col_offset,
                                  type(node.op).__name__)
        _check(node.left, names, source)
        _check(node.right, names, source)
    elif isinstance(node, ast.UnaryOp):
        if not isinstance(node.op, _UNARY):
            raise ExpressionError("operator not allowed", source, node.col_offset,
                                  type(node.op).__name__)
        _check(node.operand, names, source)
    elif isinstance(node, ast.Call):
        fn = node.func
        if not isinstance(fn, ast.Name) or fn.id not in FUNCTIONS:
            tok = fn.id if isinstance(fn, ast.Name) else _token_at(source, node.col_offset)
            raise ExpressionError(f"unknown function {tok!r}", source, node.col_offset, tok)
        if node.keywords:
            raise ExpressionError("keyword arguments not allowed", source, node.col_offset, fn.id)
        arity = 2 if fn.id == "pow" else 1
        if len(node.args) != arity:
            raise ExpressionError(f"{fn.id} takes {arity} argument(s)", source, node.col_offset, fn.id)
        for a in node.args:
            _check(a, names, source)
    else:
        col = getattr(node, "col_offset", None)
        raise ExpressionError(f"construct {type(node).__name__} not allowed", source, col,
                              None if col is None else _token_at(source, col))


def _parse(source: str, allowed: set[str]) -> ast.expr:
    text = str(source).strip()
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        col = max((exc.offset or 1) - 1, 0)
        raise ExpressionError("syntax error", text, col, _token_at(text, col)) from None
    _check(tree, allowed, text)
    return tree.body


def compile_expressions(sources, variables, params: dict | None = None):
    """Compile expressions into one function ``f(*values) -> tuple``.

    ``values`` are passed positionally in the order of ``variables``.

    Raises
    ------
    ExpressionError
        On syntax errors (with column) or undefined symbols (with name).
    """
    params = {k: float(v) for k, v in (params or {}).items()}
    variables = list(variables)
    allowed = set(variables) | set(params) | set(CONSTANTS) | set(FUNCTIONS)
    bodies = [_parse(s, allowed) for s in sources]
    args = ast.arguments(posonlyargs=[], args=[ast.arg(arg=v) for v in variables],
                         kwonlyargs=[], kw_defaults=[], defaults=[])
    lam = ast.Expression(ast.Lambda(args=args, body=ast.Tuple(elts=bodies, ctx=ast.Load())))
    ast.fix_missing_locations(lam)
    namespace = {"__builtins__": {}, **FUNCTIONS, **CONSTANTS, **params}
    return eval(compile(lam, "<expr>", "eval"), namespace)


def compile_expression(source: str, variables, params: dict | None = None):
    """Single-expression form of :func:`compile_expressions`; the result
    takes one sequence of values and returns a float."""
    f = compile_expressions([source], variables, params)
    return lambda values: float(f(*values)[0])


def coordinate_names(d: int) -> list[list[str]]:
    """Accepted names per coordinate: ``x1..xd`` always, plus ``x, y, z``
    for ``d <= 3``."""
    names = [[f"x{i + 1}"] for i in range(d)]
    if d <= 3:
        for i, a in enumerate("xyz"[:d]):
            names[i].append(a)
    return names
