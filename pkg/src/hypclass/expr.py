"""Immutable expression trees over phase-space variables.

Variables are ``x0 .. xn`` and ``xi0 .. xin``; ``xin``/``xn`` name the last
index and are resolved once the dimension is known (see :func:`bind`).
Nodes are hash-consed, so structurally identical trees are the same object
and derivatives, brackets and compiled evaluators can be cached per node.
"""

from __future__ import annotations

import math
import re
import threading
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "Expr", "Const", "Var", "Add", "Mul", "Div", "Pow", "Sqrt", "Neg",
    "ExprSyntaxError", "DomainError", "PhasePoint",
    "const", "x", "xi", "as_expr", "sqrt", "parse", "to_text", "diff",
    "poisson", "evaluate", "hamilton_field", "bind", "substitute",
    "free_vars", "compile_exprs", "gradient",
]


class ExprSyntaxError(ValueError):
    """Raised by :func:`parse`; ``position`` is the 0-based character offset."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.message = message
        self.position = position


class DomainError(ArithmeticError):
    """Division by zero or square root of a negative number during evaluation."""


_TABLE: dict = {}
_LOCK = threading.Lock()


def _intern(cls, key, init):
    k = (cls, key)
    node = _TABLE.get(k)
    if node is None:
        with _LOCK:
            node = _TABLE.get(k)
            if node is None:
                node = object.__new__(cls)
                node._deriv = {}
                node._free = None
                init(node)
                _TABLE[k] = node
    return node


class Expr:
    """Base node. Instances are immutable and interned; compare with ``is``."""

    __slots__ = ("_deriv", "_free", "__weakref__")
    children: tuple = ()

    def __new__(cls, *args, **kwargs):
        raise TypeError("use the module-level constructors (const, x, xi, ...)")

    # arithmetic sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, as_expr(other))

    def __radd__(self, other):
        return add(as_expr(other), self)

    def __sub__(self, other):
        return add(self, neg(as_expr(other)))

    def __rsub__(self, other):
        return add(as_expr(other), neg(self))

    def __mul__(self, other):
        return mul(self, as_expr(other))

    def __rmul__(self, other):
        return mul(as_expr(other), self)

    def __truediv__(self, other):
        return div(self, as_expr(other))

    def __rtruediv__(self, other):
        return div(as_expr(other), self)

    def __pow__(self, k):
        return power(self, k)

    def __neg__(self):
        return neg(self)

    def __pos__(self):
        return self

    def __repr__(self):
        return f"Expr({to_text(self)!r})"

    def __str__(self):
        return to_text(self)

    def __reduce__(self):
        # interned nodes are rebuilt through the parser on unpickling
        return (_from_text, (to_text(self),))

    def diff(self, v):
        return diff(self, v)

    def eval(self, point):
        return evaluate(self, point)


class Const(Expr):
    __slots__ = ("value",)


class Var(Expr):
    """``kind`` is ``"x"`` or ``"xi"``; ``index`` is an int or ``"n"``."""

    __slots__ = ("kind", "index")


class Add(Expr):
    __slots__ = ("children",)


class Mul(Expr):
    __slots__ = ("children",)


class Div(Expr):
    __slots__ = ("children",)


class Pow(Expr):
    __slots__ = ("children", "exponent")


class Sqrt(Expr):
    __slots__ = ("children",)


class Neg(Expr):
    __slots__ = ("children",)


def _from_text(text):
    return parse(text)


# constructors with light simplification -------------------------------

def const(value: float) -> Const:
    v = float(value)
    if math.isnan(v):
        raise ValueError("NaN constants are not allowed")
    if v == 0.0:
        v = 0.0  # fold -0.0

    def init(node):
        node.value = v

    return _intern(Const, v, init)


ZERO = None  # filled below
ONE = None


def _var(kind: str, index) -> Var:
    if kind not in ("x", "xi"):
        raise ValueError(f"unknown variable kind {kind!r}")
    if index != "n" and (not isinstance(index, (int, np.integer)) or index < 0):
        raise ValueError(f"bad variable index {index!r}")
    index = index if index == "n" else int(index)

    def init(node):
        node.kind = kind
        node.index = index

    return _intern(Var, (kind, index), init)


def x(i) -> Var:
    """Position variable x_i (``i`` may be ``"n"``)."""
    return _var("x", i)


def xi(i) -> Var:
    """Dual variable xi_i (``i`` may be ``"n"``)."""
    return _var("xi", i)


def as_expr(obj) -> Expr:
    if isinstance(obj, Expr):
        return obj
    if isinstance(obj, (int, float, np.integer, np.floating)):
        return const(obj)
    raise TypeError(f"cannot convert {type(obj).__name__} to Expr")


def _is_const(e, value=None):
    return isinstance(e, Const) and (value is None or e.value == value)


def _binary(cls, a, b):
    def init(node):
        node.children = (a, b)

    return _intern(cls, (a, b), init)


def _unary(cls, a):
    def init(node):
        node.children = (a,)

    return _intern(cls, a, init)


def add(a: Expr, b: Expr) -> Expr:
    if _is_const(a) and _is_const(b):
        return const(a.value + b.value)
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    return _binary(Add, a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if _is_const(a) and _is_const(b):
        return const(a.value * b.value)
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return const(0.0)
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    if _is_const(a, -1.0):
        return neg(b)
    if _is_const(b, -1.0):
        return neg(a)
    return _binary(Mul, a, b)


def div(a: Expr, b: Expr) -> Expr:
    if _is_const(b, 0.0):
        raise DomainError("division by the constant 0")
    if _is_const(a) and _is_const(b):
        return const(a.value / b.value)
    if _is_const(a, 0.0):
        return const(0.0)
    if _is_const(b, 1.0):
        return a
    return _binary(Div, a, b)


def neg(a: Expr) -> Expr:
    if isinstance(a, Const):
        return const(-a.value)
    if isinstance(a, Neg):
        return a.children[0]
    return _unary(Neg, a)


def power(a: Expr, k) -> Expr:
    if isinstance(k, float) and k.is_integer():
        k = int(k)
    if not isinstance(k, (int, np.integer)) or k < 0:
        raise ValueError(f"exponent must be a nonnegative integer, got {k!r}")
    k = int(k)
    a = as_expr(a)
    if k == 0:
        return const(1.0)
    if k == 1:
        return a
    if isinstance(a, Const):
        return const(a.value ** k)

    def init(node):
        node.children = (a,)
        node.exponent = k

    return _intern(Pow, (a, k), init)


def sqrt(a) -> Expr:
    a = as_expr(a)
    if isinstance(a, Const):
        if a.value < 0:
            raise DomainError("sqrt of a negative constant")
        return const(math.sqrt(a.value))
    return _unary(Sqrt, a)


ZERO = const(0.0)
ONE = const(1.0)


def _sum(terms: Iterable[Expr]) -> Expr:
    out = ZERO
    for t in terms:
        out = add(out, t)
    return out


# traversal -----------------------------------------------------------

def _postorder(roots: Sequence[Expr]) -> list[Expr]:
    """Unique nodes reachable from ``roots``, children before parents."""
    seen: set[int] = set()
    order: list[Expr] = []
    for root in roots:
        if id(root) in seen:
            continue
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                if id(node) not in seen:
                    seen.add(id(node))
                    order.append(node)
                continue
            if id(node) in seen:
                continue
            stack.append((node, True))
            for c in reversed(node.children):
                if id(c) not in seen:
                    stack.append((c, False))
    return order


def free_vars(e: Expr) -> frozenset:
    """Set of ``(kind, index)`` pairs occurring in ``e``."""
    if e._free is None:
        for node in _postorder([e]):
            if node._free is not None:
                continue
            if isinstance(node, Var):
                node._free = frozenset([(node.kind, node.index)])
            elif isinstance(node, Const):
                node._free = frozenset()
            else:
                acc = frozenset()
                for c in node.children:
                    acc = acc | c._free
                node._free = acc
    return e._free


def _rebuild(node: Expr, kids: Sequence[Expr]) -> Expr:
    if isinstance(node, Add):
        return add(*kids)
    if isinstance(node, Mul):
        return mul(*kids)
    if isinstance(node, Div):
        return div(*kids)
    if isinstance(node, Neg):
        return neg(kids[0])
    if isinstance(node, Sqrt):
        return sqrt(kids[0])
    if isinstance(node, Pow):
        return power(kids[0], node.exponent)
    return node


def substitute(e: Expr, mapping: Mapping[Expr, Expr]) -> Expr:
    """Replace leaf nodes (variables) by expressions."""
    done: dict[int, Expr] = {}
    for node in _postorder([e]):
        if node in mapping:
            done[id(node)] = as_expr(mapping[node])
        elif node.children:
            done[id(node)] = _rebuild(node, [done[id(c)] for c in node.children])
        else:
            done[id(node)] = node
    return done[id(e)]


def bind(e: Expr, n: int) -> Expr:
    """Resolve ``xin``/``xn`` to the concrete last index ``n``."""
    fv = free_vars(e)
    if ("x", "n") not in fv and ("xi", "n") not in fv:
        return e
    return substitute(e, {x("n"): x(n), xi("n"): xi(n)})


# differentiation ------------------------------------------------------

def _as_var(v) -> Var:
    if isinstance(v, Var):
        return v
    if isinstance(v, str):
        e = parse(v)
        if isinstance(e, Var):
            return e
    if isinstance(v, tuple) and len(v) == 2:
        return _var(*v)
    raise ValueError(f"not a variable: {v!r}")


def diff(e: Expr, v) -> Expr:
    """Exact derivative of ``e`` with respect to the variable ``v``."""
    v = _as_var(v)
    key = (v.kind, v.index)
    if key not in free_vars(e):
        return ZERO
    cached = e._deriv.get(v)
    if cached is not None:
        return cached
    for node in _postorder([e]):
        if v in node._deriv:
            continue
        if key not in free_vars(node):
            node._deriv[v] = ZERO
            continue
        d = [c._deriv[v] for c in node.children]
        if isinstance(node, Var):
            out = ONE
        elif isinstance(node, Add):
            out = add(d[0], d[1])
        elif isinstance(node, Neg):
            out = neg(d[0])
        elif isinstance(node, Mul):
            a, b = node.children
            out = add(mul(d[0], b), mul(a, d[1]))
        elif isinstance(node, Div):
            a, b = node.children
            out = add(div(d[0], b), neg(div(mul(a, d[1]), power(b, 2))))
        elif isinstance(node, Pow):
            (a,), k = node.children, node.exponent
            out = mul(mul(const(k), power(a, k - 1)), d[0])
        elif isinstance(node, Sqrt):
            out = div(d[0], mul(const(2.0), node))
        else:  # pragma: no cover
            raise TypeError(type(node))
        node._deriv[v] = out
    return e._deriv[v]


def _indices(exprs: Iterable[Expr]) -> list:
    idx = set()
    for e in exprs:
        for _, i in free_vars(e):
            idx.add(i)
    ints = sorted(i for i in idx if i != "n")
    return ints + (["n"] if "n" in idx else [])


def poisson(f: Expr, g: Expr) -> Expr:
    """{f,g} = sum_j (df/dxi_j * dg/dx_j - df/dx_j * dg/dxi_j)."""
    f, g = as_expr(f), as_expr(g)
    terms = []
    for j in _indices([f, g]):
        terms.append(add(mul(diff(f, xi(j)), diff(g, x(j))),
                         neg(mul(diff(f, x(j)), diff(g, xi(j))))))
    return _sum(terms)


def hamilton_field(f: Expr, n: int) -> list[Expr]:
    """Components (df/dxi_0..df/dxi_n, -df/dx_0..-df/dx_n)."""
    f = bind(as_expr(f), n)
    return [diff(f, xi(i)) for i in range(n + 1)] + [neg(diff(f, x(i))) for i in range(n + 1)]


def gradient(f: Expr, n: int) -> list[Expr]:
    """(df/dx_0..df/dx_n, df/dxi_0..df/dxi_n)."""
    f = bind(as_expr(f), n)
    return [diff(f, x(i)) for i in range(n + 1)] + [diff(f, xi(i)) for i in range(n + 1)]


# points -----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PhasePoint:
    """A point (x, xi) with x, xi of length n+1 and xi' = (xi_1..xi_n) != 0."""

    x: np.ndarray
    xi: np.ndarray

    def __post_init__(self):
        xa = np.array(self.x, dtype=float).reshape(-1)
        xa.setflags(write=False)
        xia = np.array(self.xi, dtype=float).reshape(-1)
        xia.setflags(write=False)
        if xa.shape != xia.shape or xa.size < 2:
            raise ValueError("x and xi must have the same length n+1 >= 2")
        if not np.all(np.isfinite(xa)) or not np.all(np.isfinite(xia)):
            raise ValueError("phase point has non-finite coordinates")
        if not np.any(xia[1:]):
            raise ValueError("xi' must be nonzero")
        object.__setattr__(self, "x", xa)
        object.__setattr__(self, "xi", xia)

    @property
    def n(self) -> int:
        return self.x.size - 1

    @classmethod
    def base(cls, n: int) -> "PhasePoint":
        """The point (0, e_n)."""
        e = np.zeros(n + 1)
        e[n] = 1.0
        return cls(np.zeros(n + 1), e)

    @classmethod
    def from_vector(cls, z) -> "PhasePoint":
        z = np.asarray(z, dtype=float)
        m = z.size // 2
        return cls(z[:m], z[m:])

    def vector(self) -> np.ndarray:
        return np.concatenate([self.x, self.xi])

    def xi_prime_norm(self) -> float:
        return float(np.linalg.norm(self.xi[1:]))

    def normalized(self) -> "PhasePoint":
        """Conic representative with |xi'| = 1."""
        return PhasePoint(self.x, self.xi / self.xi_prime_norm())

    def __eq__(self, other):
        return (isinstance(other, PhasePoint) and np.array_equal(self.x, other.x)
                and np.array_equal(self.xi, other.xi))

    __hash__ = None

    def __repr__(self):
        return f"PhasePoint(x={self.x.tolist()}, xi={self.xi.tolist()})"


# compilation / evaluation ---------------------------------------------

def _safe_div(a, b):
    try:
        return a / b
    except ZeroDivisionError:
        raise DomainError("division by zero") from None


def _safe_sqrt(a):
    if a < 0:
        raise DomainError(f"sqrt of negative value {a!r}")
    return math.sqrt(a)


def _emit(roots: Sequence[Expr], vectorized: bool) -> str:
    lines = ["def _f(x, xi):"]
    name: dict[int, str] = {}
    for k, node in enumerate(_postorder(roots)):
        t = f"t{k}"
        name[id(node)] = t
        if isinstance(node, Const):
            rhs = repr(node.value)
        elif isinstance(node, Var):
            idx = "-1" if node.index == "n" else str(node.index)
            rhs = f"{node.kind}[{idx}]"
        else:
            c = [name[id(ch)] for ch in node.children]
            if isinstance(node, Add):
                rhs = f"{c[0]} + {c[1]}"
            elif isinstance(node, Mul):
                rhs = f"{c[0]} * {c[1]}"
            elif isinstance(node, Div):
                rhs = f"{c[0]} / {c[1]}" if vectorized else f"_div({c[0]}, {c[1]})"
            elif isinstance(node, Neg):
                rhs = f"-{c[0]}"
            elif isinstance(node, Pow):
                rhs = f"{c[0]} ** {node.exponent}"
            else:
                rhs = f"_sqrt({c[0]})"
        lines.append(f"    {t} = {rhs}")
    lines.append("    return (" + "".join(name[id(r)] + ", " for r in roots) + ")")
    return "\n".join(lines)


_COMPILED: dict = {}


def compile_exprs(exprs: Sequence[Expr], vectorized: bool = False) -> Callable:
    """Compile expressions into ``f(x, xi) -> tuple`` sharing common subtrees.

    With ``vectorized=True`` the arguments may be 2-d arrays (one column per
    point) and numpy semantics apply (inf/nan instead of exceptions).
    """
    exprs = tuple(as_expr(e) for e in exprs)
    key = (exprs, vectorized)
    fn = _COMPILED.get(key)
    if fn is None:
        src = _emit(exprs, vectorized)
        env = {"_div": _safe_div, "_sqrt": np.sqrt if vectorized else _safe_sqrt}
        exec(compile(src, "<hypclass.expr>", "exec"), env)
        fn = env["_f"]
        _COMPILED[key] = fn
    return fn


def _coords(point):
    if isinstance(point, PhasePoint):
        return point.x, point.xi
    xs, xis = point
    return np.asarray(xs, dtype=float), np.asarray(xis, dtype=float)


def evaluate(e: Expr, point) -> float:
    """Value of ``e`` at ``point`` (a PhasePoint or an ``(x, xi)`` pair)."""
    xs, xis = _coords(point)
    fn = compile_exprs((as_expr(e),))
    try:
        val = fn(xs.tolist(), xis.tolist())[0]
    except IndexError:
        raise ValueError("expression uses a variable index beyond the point dimension") from None
    except OverflowError as exc:
        raise DomainError(str(exc)) from None
    return float(val)


# printing -------------------------------------------------------------

_PREC = {Add: 1, Neg: 2, Mul: 3, Div: 3, Pow: 4}


def _prec(e: Expr) -> int:
    if isinstance(e, Const):
        return 2 if e.value < 0 else 5
    return _PREC.get(type(e), 5)


def _num(v: float) -> str:
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def to_text(e: Expr) -> str:
    """Render ``e`` in the parser's grammar; ``parse(to_text(e)) is e``."""
    out: dict[int, str] = {}
    for node in _postorder([e]):
        if isinstance(node, Const):
            s = _num(node.value)
        elif isinstance(node, Var):
            s = f"{node.kind}{node.index}"
        elif isinstance(node, Add):
            a, b = node.children
            sa = out[id(a)]
            if isinstance(b, Neg):
                inner = b.children[0]
                sb = out[id(inner)]
                if _prec(inner) <= 2:
                    sb = f"({sb})"
                s = f"{sa} - {sb}"
            elif isinstance(b, Const) and b.value < 0:
                s = f"{sa} - {_num(-b.value)}"
            else:
                sb = out[id(b)]
                if _prec(b) <= 1:
                    sb = f"({sb})"
                s = f"{sa} + {sb}"
        elif isinstance(node, Neg):
            a = node.children[0]
            sa = out[id(a)]
            if _prec(a) <= 3:
                sa = f"({sa})"
            s = f"-{sa}"
        elif isinstance(node, (Mul, Div)):
            a, b = node.children
            sa, sb = out[id(a)], out[id(b)]
            if _prec(a) <= 1:
                sa = f"({sa})"
            if _prec(b) <= 3:
                sb = f"({sb})"
            op = "*" if isinstance(node, Mul) else "/"
            s = f"{sa}{op}{sb}"
        elif isinstance(node, Pow):
            a = node.children[0]
            sa = out[id(a)]
            if _prec(a) <= 4:
                sa = f"({sa})"
            s = f"{sa}^{node.exponent}"
        else:
            s = f"sqrt({out[id(node.children[0])]})"
        out[id(node)] = s
    return out[id(e)]


# parsing --------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^()]))"
)
_VARNAME = re.compile(r"^(x|xi)(\d+|n)$")


def _tokenize(text: str):
    pos = 0
    toks = []
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            start = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
            raise ExprSyntaxError(f"unexpected character {text[start]!r}", start)
        kind = m.lastgroup
        start = m.start(kind)
        toks.append((kind, m.group(kind), start))
        pos = m.end()
    toks.append(("end", "", len(text)))
    return toks


class _Parser:
    def __init__(self, text, params, n):
        self.toks = _tokenize(text)
        self.i = 0
        self.params = params
        self.n = n

    def peek(self):
        return self.toks[self.i]

    def take(self):
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        tok = self.take()
        if tok[1] != value:
            raise ExprSyntaxError(f"expected {value!r}, found {tok[1] or 'end of input'!r}", tok[2])
        return tok

    def parse(self):
        e = self.expr()
        tok = self.peek()
        if tok[0] != "end":
            raise ExprSyntaxError(f"unexpected token {tok[1]!r}", tok[2])
        return e

    def expr(self):
        e = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.term()
            e = add(e, rhs) if op == "+" else add(e, neg(rhs))
        return e

    def term(self):
        e = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            _, op, pos = self.take()
            rhs = self.unary()
            if op == "*":
                e = mul(e, rhs)
            else:
                if _is_const(rhs, 0.0):
                    raise ExprSyntaxError("division by the constant 0", pos)
                e = div(e, rhs)
        return e

    def unary(self):
        tok = self.peek()
        if tok[0] == "op" and tok[1] == "-":
            self.take()
            return neg(self.unary())
        if tok[0] == "op" and tok[1] == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        tok = self.peek()
        if tok[0] == "op" and tok[1] == "^":
            self.take()
            pos = self.peek()[2]
            ex = self.atom()
            if not isinstance(ex, Const) or not ex.value.is_integer() or ex.value < 0:
                raise ExprSyntaxError("exponent must be a nonnegative integer constant", pos)
            if self.peek()[1] == "^":
                raise ExprSyntaxError("chained exponents need parentheses", self.peek()[2])
            return power(base, int(ex.value))
        return base

    def atom(self):
        kind, val, pos = self.take()
        if kind == "num":
            return const(float(val))
        if kind == "name":
            if val == "sqrt":
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                if isinstance(arg, Const) and arg.value < 0:
                    raise ExprSyntaxError("sqrt of a negative constant", pos)
                return sqrt(arg)
            m = _VARNAME.match(val)
            if m:
                kindv, idx = m.group(1), m.group(2)
                if idx == "n":
                    idx = self.n if self.n is not None else "n"
                else:
                    idx = int(idx)
                    if self.n is not None and idx > self.n:
                        raise ExprSyntaxError(f"variable {val} exceeds dimension n={self.n}", pos)
                return _var(kindv, idx)
            if val in self.params:
                return const(self.params[val])
            raise ExprSyntaxError(f"unknown identifier {val!r}", pos)
        if kind == "op" and val == "(":
            e = self.expr()
            self.expect(")")
            return e
        raise ExprSyntaxError(f"unexpected {val or 'end of input'!r}", pos)


def parse(text: str, params: Mapping[str, float] | None = None, n: int | None = None) -> Expr:
    """Parse ``text``; declared ``params`` are substituted as constants.

    When ``n`` is given, ``xin``/``xn`` resolve to index ``n`` immediately.
    """
    return _Parser(text, dict(params or {}), n).parse()
