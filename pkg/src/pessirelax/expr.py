"""Expression trees, a small infix parser and order-3 forward-mode derivatives.

Grammar (``^`` binds tighter than unary minus, exponents are integer literals)::

    expr   = term   { ("+" | "-") term } ;
    term   = unary  { ("*" | "/") unary } ;
    unary  = ("-" | "+") unary | power ;
    power  = atom [ "^" INTEGER ] ;
    atom   = NUMBER | VARIABLE | FUNC "(" expr ")" | "(" expr ")" ;
    FUNC   = "sin" | "cos" | "exp" | "log" | "sqrt" ;
    VARIABLE = ("x" | "y") INTEGER ;      (1-based)
"""

from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np

__all__ = [
    "Expr", "Const", "Var", "Unary", "Binary", "Pow",
    "ExprSyntaxError", "ExprDomainError",
    "parse", "to_text", "evaluate", "Jet3", "eval_jet", "check_derivatives",
    "variables",
]

UNARY_FUNCS = ("sin", "cos", "exp", "log", "sqrt")


class ExprSyntaxError(ValueError):
    """Raised for malformed expression text; ``pos`` is the 0-based column."""

    def __init__(self, msg: str, pos: int, text: str = ""):
        self.pos = pos
        self.text = text
        super().__init__(f"{msg} at position {pos}" + (f" in {text!r}" if text else ""))


class ExprDomainError(ArithmeticError):
    """A non-finite value appeared while evaluating an expression."""


# -- AST ----------------------------------------------------------------------

@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    group: str  # "x" or "y"
    index: int  # 0-based


@dataclass(frozen=True)
class Unary:
    op: str  # neg or one of UNARY_FUNCS
    arg: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str  # add, sub, mul, div
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Pow:
    base: "Expr"
    exponent: int

    def __post_init__(self):
        if self.exponent < 0:
            raise ValueError("integer power exponent must be >= 0")


Expr = Union[Const, Var, Unary, Binary, Pow]


def variables(e: Expr) -> set[tuple[str, int]]:
    """Set of (group, index) pairs occurring in ``e``."""
    out: set[tuple[str, int]] = set()
    stack = [e]
    while stack:
        node = stack.pop()
        if isinstance(node, Var):
            out.add((node.group, node.index))
        elif isinstance(node, Unary):
            stack.append(node.arg)
        elif isinstance(node, Binary):
            stack.extend((node.left, node.right))
        elif isinstance(node, Pow):
            stack.append(node.base)
    return out


# -- parser -------------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()]))"
)
_VAR = re.compile(r"([xy])([1-9][0-9]*)$")


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    toks = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            j = pos
            while j < len(text) and text[j].isspace():
                j += 1
            raise ExprSyntaxError(f"unexpected character {text[j]!r}", j, text)
        kind = m.lastgroup
        toks.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    toks.append(("end", "", len(text)))
    return toks


class _Parser:
    def __init__(self, text: str, dims: tuple[int, int]):
        self.text = text
        self.dims = dims
        self.toks = _tokenize(text)
        self.k = 0

    def peek(self):
        return self.toks[self.k]

    def take(self):
        tok = self.toks[self.k]
        self.k += 1
        return tok

    def fail(self, msg, tok=None):
        tok = tok or self.peek()
        raise ExprSyntaxError(msg, tok[2], self.text)

    def expect(self, value):
        tok = self.peek()
        if tok[1] != value or tok[0] not in ("op",):
            self.fail(f"expected {value!r}")
        return self.take()

    def parse(self) -> Expr:
        if self.peek()[0] == "end":
            self.fail("empty expression")
        node = self.expr()
        if self.peek()[0] != "end":
            self.fail(f"unexpected token {self.peek()[1]!r}")
        return node

    def expr(self):
        node = self.term()
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            op = self.take()[1]
            node = Binary("add" if op == "+" else "sub", node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[0] == "op" and self.peek()[1] in "*/":
            op = self.take()[1]
            node = Binary("mul" if op == "*" else "div", node, self.unary())
        return node

    def unary(self):
        tok = self.peek()
        if tok[0] == "op" and tok[1] == "-":
            self.take()
            return Unary("neg", self.unary())
        if tok[0] == "op" and tok[1] == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            tok = self.take()
            if tok[0] != "num" or not tok[1].isdigit():
                self.fail("exponent must be a nonnegative integer literal", tok)
            base = Pow(base, int(tok[1]))
        return base

    def atom(self):
        tok = self.take()
        kind, val, pos = tok
        if kind == "num":
            return Const(float(val))
        if kind == "name":
            if val in UNARY_FUNCS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Unary(val, arg)
            m = _VAR.match(val)
            if m is None:
                raise ExprSyntaxError(f"unknown identifier {val!r}", pos, self.text)
            group, idx = m.group(1), int(m.group(2))
            limit = self.dims[0] if group == "x" else self.dims[1]
            if idx > limit:
                raise ExprSyntaxError(
                    f"variable {val} out of range (declared {group}1..{group}{limit})", pos, self.text)
            return Var(group, idx - 1)
        if kind == "op" and val == "(":
            node = self.expr()
            self.expect(")")
            return node
        self.fail("unexpected " + (repr(val) if val else "end of input"), tok)


def parse(text: str, dims: tuple[int, int]) -> Expr:
    """Parse ``text`` with ``dims = (n, m)`` bounding the variable indices."""
    return _Parser(text, dims).parse()


# -- printer ------------------------------------------------------------------

_PREC = {"add": 1, "sub": 1, "mul": 2, "div": 2}


def _fmt_const(v: float) -> str:
    if v < 0 or math.copysign(1.0, v) < 0:
        return f"(-{_fmt_const(-v)})" if v != 0 else "(-0.0)"
    if not math.isfinite(v):
        raise ValueError("cannot print non-finite constant")
    return repr(float(v))


def to_text(e: Expr) -> str:
    """Render ``e`` so that ``parse(to_text(e))`` rebuilds the same tree."""
    return _show(e, 0)


def _show(e: Expr, ctx: int) -> str:
    # ctx: 0 top, 1 additive, 2 multiplicative, 3 unary operand, 4 power base
    if isinstance(e, Const):
        return _fmt_const(e.value)
    if isinstance(e, Var):
        return f"{e.group}{e.index + 1}"
    if isinstance(e, Pow):
        s = f"{_show(e.base, 4)}^{e.exponent}"
        return f"({s})" if ctx >= 4 else s
    if isinstance(e, Unary):
        if e.op == "neg":
            s = "-" + _show(e.arg, 3)
            return f"({s})" if ctx >= 4 else s
        return f"{e.op}({_show(e.arg, 0)})"
    prec = _PREC[e.op]
    left = _show(e.left, prec)
    # right operand needs stricter binding because +,-,*,/ are left-assoc
    right = _show(e.right, prec + 1)
    s = f"{left} {'+-*/'['add sub mul div'.split().index(e.op)]} {right}"
    return f"({s})" if ctx > prec else s


# -- plain evaluation -----------------------------------------------------------

def _check(v, what):
    if not np.all(np.isfinite(v)):
        raise ExprDomainError(f"non-finite value in {what}")
    return v


def evaluate(e: Expr, x, y):
    """Evaluate ``e``; ``x``/``y`` may carry trailing batch axes (shape (n, ...))."""
    with np.errstate(all="ignore"):
        return _check(_ev(e, x, y), "evaluation")


_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "log": np.log, "sqrt": np.sqrt}


def _ev(e, x, y):
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        return (x if e.group == "x" else y)[e.index]
    if isinstance(e, Pow):
        return _check(_ev(e.base, x, y) ** e.exponent, "power")
    if isinstance(e, Unary):
        a = _ev(e.arg, x, y)
        if e.op == "neg":
            return -a
        if e.op == "log" and np.any(np.asarray(a) <= 0):
            raise ExprDomainError("log of nonpositive value")
        if e.op == "sqrt" and np.any(np.asarray(a) < 0):
            raise ExprDomainError("sqrt of negative value")
        return _check(_FUNCS[e.op](a), e.op)
    a = _ev(e.left, x, y)
    b = _ev(e.right, x, y)
    if e.op == "add":
        return a + b
    if e.op == "sub":
        return a - b
    if e.op == "mul":
        return _check(a * b, "product")
    if np.any(np.asarray(b) == 0):
        raise ExprDomainError("division by zero")
    return _check(a / b, "quotient")


# -- jets -----------------------------------------------------------------------

class Jet3:
    """Truncated Taylor expansion: value, gradient, Hessian, third derivatives.

    Arrays carry leading batch axes; derivative axes are trailing.
    """

    __slots__ = ("value", "grad", "hess", "third", "order")

    def __init__(self, value, grad, hess=None, third=None, order=3):
        self.value = value
        self.grad = grad
        self.hess = hess
        self.third = third
        self.order = order

    @classmethod
    def constant(cls, c, k, order, shape=()):
        v = np.broadcast_to(np.asarray(c, dtype=float), shape).copy()
        return cls(v, np.zeros(shape + (k,)),
                   np.zeros(shape + (k, k)) if order >= 2 else None,
                   np.zeros(shape + (k, k, k)) if order >= 3 else None, order)

    @classmethod
    def variable(cls, value, slot, k, order):
        v = np.asarray(value, dtype=float)
        g = np.zeros(v.shape + (k,))
        g[..., slot] = 1.0
        return cls(v, g,
                   np.zeros(v.shape + (k, k)) if order >= 2 else None,
                   np.zeros(v.shape + (k, k, k)) if order >= 3 else None, order)

    def __repr__(self):
        return f"Jet3(value={self.value!r}, grad={self.grad!r})"

    def __neg__(self):
        return Jet3(-self.value, -self.grad,
                    None if self.hess is None else -self.hess,
                    None if self.third is None else -self.third, self.order)

    def __add__(self, o: "Jet3"):
        return Jet3(self.value + o.value, self.grad + o.grad,
                    None if self.hess is None else self.hess + o.hess,
                    None if self.third is None else self.third + o.third, self.order)

    def __sub__(self, o: "Jet3"):
        return self + (-o)

    def __mul__(self, o: "Jet3"):
        a0, a1, b0, b1 = self.value, self.grad, o.value, o.grad
        v = a0 * b0
        g = a0[..., None] * b1 + b0[..., None] * a1
        h = t = None
        if self.order >= 2:
            a2, b2 = self.hess, o.hess
            cross = np.einsum("...i,...j->...ij", a1, b1)
            h = a0[..., None, None] * b2 + b0[..., None, None] * a2 + cross + np.swapaxes(cross, -1, -2)
        if self.order >= 3:
            a3, b3 = self.third, o.third
            t = a0[..., None, None, None] * b3 + b0[..., None, None, None] * a3
            t = t + _sym3(a1, b2) + _sym3(b1, a2)
        return Jet3(v, g, h, t, self.order)

    def compose(self, d0, d1, d2=None, d3=None):
        """Chain rule for a scalar function with derivatives d0..d3 at ``self.value``."""
        a1 = self.grad
        g = d1[..., None] * a1
        h = t = None
        if self.order >= 2:
            a2 = self.hess
            h = d1[..., None, None] * a2 + d2[..., None, None] * np.einsum("...i,...j->...ij", a1, a1)
        if self.order >= 3:
            t = (d1[..., None, None, None] * self.third
                 + d2[..., None, None, None] * _sym3(a1, a2)
                 + d3[..., None, None, None] * np.einsum("...i,...j,...k->...ijk", a1, a1, a1))
        return Jet3(d0, g, h, t, self.order)


def _sym3(a1, b2):
    # a_i b_jk + a_j b_ik + a_k b_ij
    t = np.einsum("...i,...jk->...ijk", a1, b2)
    return t + np.einsum("...ijk->...jik", t) + np.einsum("...ijk->...kji", t)


def _unary_derivs(op, a, order):
    if op == "sin":
        s, c = np.sin(a), np.cos(a)
        return s, c, -s, -c
    if op == "cos":
        s, c = np.sin(a), np.cos(a)
        return c, -s, -c, s
    if op == "exp":
        e = np.exp(a)
        return e, e, e, e
    if op == "log":
        if np.any(a <= 0):
            raise ExprDomainError("log of nonpositive value")
        r = 1.0 / a
        return np.log(a), r, -r * r, 2 * r ** 3
    if op == "sqrt":
        if np.any(a < 0) or (order >= 1 and np.any(a == 0)):
            raise ExprDomainError("sqrt not differentiable at nonpositive value")
        s = np.sqrt(a)
        return s, 0.5 / s, -0.25 / (s * a), 0.375 / (s * a * a)
    if op == "recip":
        if np.any(a == 0):
            raise ExprDomainError("division by zero")
        r = 1.0 / a
        return r, -r * r, 2 * r ** 3, -6 * r ** 4
    raise ValueError(op)


def _pow_derivs(a, n):
    out = []
    for k in range(4):
        if n - k < 0:
            out.append(np.zeros_like(a))
        else:
            out.append(math.perm(n, k) * a ** (n - k))
    return out


def _jet(e, env, k, order, shape):
    if isinstance(e, Const):
        return Jet3.constant(e.value, k, order, shape)
    if isinstance(e, Var):
        return env[(e.group, e.index)]
    if isinstance(e, Pow):
        a = _jet(e.base, env, k, order, shape)
        return a.compose(*_pow_derivs(a.value, e.exponent))
    if isinstance(e, Unary):
        a = _jet(e.arg, env, k, order, shape)
        if e.op == "neg":
            return -a
        return a.compose(*_unary_derivs(e.op, a.value, order))
    a = _jet(e.left, env, k, order, shape)
    b = _jet(e.right, env, k, order, shape)
    if e.op == "add":
        return a + b
    if e.op == "sub":
        return a - b
    if e.op == "mul":
        return a * b
    return a * b.compose(*_unary_derivs("recip", b.value, order))


def _default_wrt(n, m):
    return [("x", i) for i in range(n)] + [("y", j) for j in range(m)]


def eval_jet(e: Expr, x, y, order: int = 3,
             wrt: Sequence[tuple[str, int]] | None = None) -> Jet3:
    """Value and partials of ``e`` up to ``order`` w.r.t. ``wrt`` (default: all x then all y).

    ``x`` has shape (n, ...) and ``y`` shape (m, ...); trailing axes are batch axes.
    """
    if order not in (1, 2, 3):
        raise ValueError("order must be 1, 2 or 3")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if wrt is None:
        wrt = _default_wrt(x.shape[0], y.shape[0])
    shape = x.shape[1:] if x.shape[0] else y.shape[1:]
    k = len(wrt)
    slots = {v: s for s, v in enumerate(wrt)}
    env = {}
    for grp, arr in (("x", x), ("y", y)):
        for i in range(arr.shape[0]):
            if (grp, i) in slots:
                env[(grp, i)] = Jet3.variable(arr[i], slots[(grp, i)], k, order)
            else:
                env[(grp, i)] = Jet3.constant(arr[i], k, order, shape)
    with np.errstate(all="ignore"):
        j = _jet(e, env, k, order, shape)
        for part in (j.value, j.grad, j.hess, j.third):
            if part is not None:
                _check(part, "derivative evaluation")
    return j


def check_derivatives(e: Expr, point: tuple[Iterable[float], Iterable[float]], h: float = 1e-5) -> float:
    """Max relative error of AD first/second partials against central differences.

    First partials are compared with differences of values, second partials
    with differences of AD gradients.
    """
    x = np.asarray(point[0], dtype=float)
    y = np.asarray(point[1], dtype=float)
    n = x.size
    z = np.concatenate([x, y])
    k = z.size
    jet = eval_jet(e, x, y, order=2)

    def split(v):
        return v[:n], v[n:]

    err = 0.0
    for i in range(k):
        dz = np.zeros(k)
        dz[i] = h
        fp = evaluate(e, *split(z + dz))
        fm = evaluate(e, *split(z - dz))
        fd = (fp - fm) / (2 * h)
        err = max(err, abs(jet.grad[i] - fd) / max(1.0, abs(jet.grad[i])))
        gp = eval_jet(e, *split(z + dz), order=1).grad
        gm = eval_jet(e, *split(z - dz), order=1).grad
        fd2 = (gp - gm) / (2 * h)
        ad2 = jet.hess[i]
        err = max(err, float(np.max(np.abs(ad2 - fd2) / np.maximum(1.0, np.abs(ad2)))))
    return float(err)


# -- compiled jets ----------------------------------------------------------------
#
# The same recurrences as Jet3, unrolled into straight-line float code for one
# point.  Structurally zero partials are pruned while generating.

def _prod(*fs):
    if any(f is None for f in fs):
        return None
    fs = [f for f in fs if f != "1.0"]
    return "*".join(fs) if fs else "1.0"


def _sum(*ts):
    ts = [t for t in ts if t is not None]
    if not ts:
        return None
    return ts[0] if len(ts) == 1 else "(" + " + ".join(ts) + ")"


class _Gen:
    def __init__(self, k, order):
        self.k = k
        self.order = order
        self.lines = []
        self.count = 0
        self.pairs = [(i, j) for i in range(k) for j in range(i, k)]
        self.triples = [(i, j, l) for i in range(k) for j in range(i, k) for l in range(j, k)]

    def bind(self, expr):
        if expr is None:
            return None
        if re.fullmatch(r"[A-Za-z_][A-Za-z_0-9]*|-?[0-9.]+(e-?[0-9]+)?", expr):
            return expr
        self.count += 1
        name = f"t{self.count}"
        self.lines.append(f"    {name} = {expr}")
        return name

    def node(self, v, g, h, t):
        g = [self.bind(e) for e in g]
        h = {p: self.bind(e) for p, e in h.items()}
        t = {p: self.bind(e) for p, e in t.items()}
        return (self.bind(v), g, h, t)

    def const(self, c):
        return (repr(float(c)), [None] * self.k, {p: None for p in self.pairs}, {p: None for p in self.triples})

    def var(self, src, slot):
        g = [None] * self.k
        if slot is not None:
            g[slot] = "1.0"
        return (self.bind(src), g, {p: None for p in self.pairs}, {p: None for p in self.triples})

    def add(self, a, b, sign="+"):
        def comb(x, y):
            if sign == "+":
                return _sum(x, y)
            if y is None:
                return x
            return f"{x} - {y}" if x is not None else f"-{y}"
        return self.node(comb(a[0], b[0]),
                         [comb(x, y) for x, y in zip(a[1], b[1])],
                         {p: comb(a[2][p], b[2][p]) for p in self.pairs} if self.order >= 2 else {},
                         {p: comb(a[3][p], b[3][p]) for p in self.triples} if self.order >= 3 else {})

    def neg(self, a):
        ng = lambda e: None if e is None else f"-{e}"
        return self.node(ng(a[0]), [ng(e) for e in a[1]],
                         {p: ng(e) for p, e in a[2].items()}, {p: ng(e) for p, e in a[3].items()})

    def _h(self, a, i, j):
        return a[2][(min(i, j), max(i, j))]

    def mul(self, a, b):
        av, ag = a[0], a[1]
        bv, bg = b[0], b[1]
        v = _prod(av, bv)
        g = [_sum(_prod(av, bg[i]), _prod(bv, ag[i])) for i in range(self.k)]
        h, t = {}, {}
        if self.order >= 2:
            for (i, j) in self.pairs:
                h[(i, j)] = _sum(_prod(av, b[2][(i, j)]), _prod(bv, a[2][(i, j)]),
                                 _prod(ag[i], bg[j]), _prod(ag[j], bg[i]))
        if self.order >= 3:
            for (i, j, l) in self.triples:
                terms = [_prod(av, b[3][(i, j, l)]), _prod(bv, a[3][(i, j, l)])]
                for p, (r, s) in ((i, (j, l)), (j, (i, l)), (l, (i, j))):
                    terms += [_prod(ag[p], self._h(b, r, s)), _prod(bg[p], self._h(a, r, s))]
                t[(i, j, l)] = _sum(*terms)
        return self.node(v, g, h, t)

    def compose(self, a, d0, d1, d2, d3):
        d1, d2, d3 = self.bind(d1), self.bind(d2), self.bind(d3)
        ag = a[1]
        g = [_prod(d1, ag[i]) for i in range(self.k)]
        h, t = {}, {}
        if self.order >= 2:
            for (i, j) in self.pairs:
                h[(i, j)] = _sum(_prod(d1, a[2][(i, j)]), _prod(d2, ag[i], ag[j]))
        if self.order >= 3:
            for (i, j, l) in self.triples:
                t[(i, j, l)] = _sum(
                    _prod(d1, a[3][(i, j, l)]),
                    _prod(d2, _sum(_prod(ag[i], self._h(a, j, l)), _prod(ag[j], self._h(a, i, l)),
                                   _prod(ag[l], self._h(a, i, j)))),
                    _prod(d3, ag[i], ag[j], ag[l]))
        return self.node(d0, g, h, t)


def _wrap(e):
    return None if e is None else f"({e})"


def _gen(e, G: _Gen, slots):
    if isinstance(e, Const):
        return G.const(e.value)
    if isinstance(e, Var):
        return G.var(f"{e.group}[{e.index}]", slots.get((e.group, e.index)))
    if isinstance(e, Unary):
        a = _gen(e.arg, G, slots)
        if e.op == "neg":
            return G.neg(a)
        v = a[0]
        if e.op == "sin":
            s, c = G.bind(f"_sin({v})"), G.bind(f"_cos({v})")
            return G.compose(a, s, c, f"-{s}", f"-{c}")
        if e.op == "cos":
            s, c = G.bind(f"_sin({v})"), G.bind(f"_cos({v})")
            return G.compose(a, c, f"-{s}", f"-{c}", s)
        if e.op == "exp":
            x = G.bind(f"_exp({v})")
            return G.compose(a, x, x, x, x)
        if e.op == "log":
            r = G.bind(f"_recip({v})")
            return G.compose(a, f"_log({v})", r, f"-{r}*{r}", f"2.0*{r}*{r}*{r}")
        if e.op == "sqrt":
            s = G.bind(f"_sqrtd({v})")
            return G.compose(a, s, f"0.5/{s}", f"-0.25/({s}*{v})", f"0.375/({s}*{v}*{v})")
        raise ValueError(e.op)
    if isinstance(e, Pow):
        a = _gen(e.base, G, slots)
        n = e.exponent
        if n == 0:
            return G.const(1.0)
        if n == 1:
            return a
        v = _wrap(a[0])
        d = []
        for kk in range(4):
            if n - kk < 0:
                d.append(None)
            else:
                c = float(math.perm(n, kk))
                p = n - kk
                base = "1.0" if p == 0 else (v if p == 1 else f"{v}**{p}")
                d.append(base if c == 1.0 else f"{c!r}*{base}")
        return G.compose(a, *d)
    a = _gen(e.left, G, slots)
    b = _gen(e.right, G, slots)
    if e.op == "add":
        return G.add(a, b)
    if e.op == "sub":
        return G.add(a, b, "-")
    if e.op == "mul":
        return G.mul(a, b)
    r = G.bind(f"_recip({b[0]})")
    rb = G.compose(b, r, f"-{r}*{r}", f"2.0*{r}*{r}*{r}", f"-6.0*{r}*{r}*{r}*{r}")
    return G.mul(a, rb)


def _recip(v):
    if v == 0.0:
        raise ExprDomainError("division by zero")
    return 1.0 / v


def _log(v):
    if v <= 0.0:
        raise ExprDomainError("log of nonpositive value")
    return math.log(v)


def _sqrtd(v):
    if v <= 0.0:
        raise ExprDomainError("sqrt not differentiable at nonpositive value")
    return math.sqrt(v)


_GLOBALS = {"_sin": math.sin, "_cos": math.cos, "_exp": math.exp, "_log": _log,
            "_sqrtd": _sqrtd, "_recip": _recip}


class CompiledJet:
    """Scalar-point jets of a list of expressions via generated straight-line code.

    Calling returns (values[r], grads[r, k], hessians[r, k, k] or None, thirds or None).
    """

    def __init__(self, exprs: Sequence[Expr], wrt: Sequence[tuple[str, int]], order: int = 3):
        if order not in (1, 2, 3):
            raise ValueError("order must be 1, 2 or 3")
        self.order = order
        self.k = k = len(wrt)
        self.r = len(exprs)
        slots = {v: s for s, v in enumerate(wrt)}
        G = _Gen(k, order)
        outs = [_gen(e, G, slots) for e in exprs]
        flat = []
        for v, g, h, t in outs:
            flat.append(v)
            flat += g
            if order >= 2:
                flat += [h[p] for p in G.pairs]
            if order >= 3:
                flat += [t[p] for p in G.triples]
        body = "\n".join(G.lines) or "    pass"
        src = "def _jet(x, y):\n" + body + "\n    return [" + ", ".join(
            "0.0" if f is None else f for f in flat) + "]\n"
        self.source = src
        ns = dict(_GLOBALS)
        exec(compile(src, "<compiled-jet>", "exec"), ns)
        self._fn = ns["_jet"]
        # index maps from compressed storage to full symmetric arrays
        per = 1 + k + (len(G.pairs) if order >= 2 else 0) + (len(G.triples) if order >= 3 else 0)
        self._per = per
        hidx = np.zeros((k, k), dtype=int)
        for c, (i, j) in enumerate(G.pairs):
            hidx[i, j] = hidx[j, i] = c
        tidx = np.zeros((k, k, k), dtype=int)
        for c, (i, j, l) in enumerate(G.triples):
            for a, b, cc in itertools.permutations((i, j, l)):
                tidx[a, b, cc] = c
        self._hidx = hidx
        self._tidx = tidx
        self._npairs = len(G.pairs)

    def __call__(self, x, y):
        try:
            vals = self._fn(x, y)
        except (OverflowError, ZeroDivisionError, ValueError) as exc:
            raise ExprDomainError(str(exc)) from None
        a = np.asarray(vals, dtype=float).reshape(self.r, self._per)
        if not np.all(np.isfinite(a)):
            raise ExprDomainError("non-finite value in compiled jet")
        k = self.k
        v = a[:, 0]
        g = a[:, 1:1 + k]
        h = t = None
        if self.order >= 2:
            hp = a[:, 1 + k:1 + k + self._npairs]
            h = hp[:, self._hidx]
        if self.order >= 3:
            tp = a[:, 1 + k + self._npairs:]
            t = tp[:, self._tidx]
        return v, g, h, t
