"""
Tiny expression grammar for analytic bounds and targets.

Accepted: numbers, the variables ``x1``, ``x2`` (aliases ``x``, ``y``),
the constant ``pi``, ``+ - * / **``, parentheses and the calls ``sin``,
``cos``, ``exp``, ``abs``. Anything else is rejected at parse time.
"""

import ast

import numpy as np

_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "abs": np.abs}
_NAMES = {"x1", "x2", "x", "y", "pi"}
_BINOPS = {
    ast.Add: np.add, ast.Sub: np.subtract, ast.Mult: np.multiply,
    ast.Div: np.divide, ast.Pow: np.power,
}


class FormulaError(ValueError):
    pass


class Formula:
    """A parsed expression ``f(x1, x2)`` evaluated on numpy arrays."""

    def __init__(self, text):
        self.text = str(text).strip()
        try:
            tree = ast.parse(self.text, mode="eval")
        except SyntaxError as exc:
            raise FormulaError(f"cannot parse {self.text!r}: {exc.msg}") from None
        self._check(tree.body)
        self._tree = tree.body

    def __repr__(self):
        return f"Formula({self.text!r})"

    def __eq__(self, other):
        return isinstance(other, Formula) and other.text == self.text

    def __hash__(self):
        return hash(self.text)

    def _check(self, node):
        if isinstance(node, ast.Constant):
            if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
                raise FormulaError(f"only numeric constants allowed in {self.text!r}")
        elif isinstance(node, ast.Name):
            if node.id not in _NAMES:
                raise FormulaError(f"unknown name {node.id!r} in {self.text!r}")
        elif isinstance(node, ast.BinOp):
            if type(node.op) not in _BINOPS:
                raise FormulaError(f"operator not allowed in {self.text!r}")
            self._check(node.left)
            self._check(node.right)
        elif isinstance(node, ast.UnaryOp):
            if not isinstance(node.op, (ast.USub, ast.UAdd)):
                raise FormulaError(f"operator not allowed in {self.text!r}")
            self._check(node.operand)
        elif isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS:
                raise FormulaError(f"function not allowed in {self.text!r}")
            if len(node.args) != 1 or node.keywords:
                raise FormulaError(f"functions take one argument in {self.text!r}")
            self._check(node.args[0])
        else:
            raise FormulaError(f"unsupported syntax in {self.text!r}")

    def __call__(self, x1, x2):
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        env = {"x1": x1, "x2": x2, "x": x1, "y": x2, "pi": np.pi}
        out = self._eval(self._tree, env)
        return np.broadcast_to(np.asarray(out, dtype=float), np.broadcast(x1, x2).shape)

    def _eval(self, node, env):
        if isinstance(node, ast.Constant):
            return float(node.value)
        if isinstance(node, ast.Name):
            return env[node.id]
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](self._eval(node.left, env), self._eval(node.right, env))
        if isinstance(node, ast.UnaryOp):
            val = self._eval(node.operand, env)
            return -val if isinstance(node.op, ast.USub) else val
        return _FUNCS[node.func.id](self._eval(node.args[0], env))
