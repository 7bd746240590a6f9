"""Expression language for generating functions, evaluated as order-3 jets.

Expressions are parsed into a small immutable AST and evaluated by forward-mode
truncated Taylor arithmetic: every node carries its value, gradient, Hessian
and third-derivative tensor with respect to the bound variables.  Evaluation is
vectorised: a batch of points of shape ``(..., n)`` yields jets whose fields
carry the same leading batch shape.
"""
from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Sequence

import numpy as np

__all__ = [
    "Expression", "Num", "Var", "Neg", "BinOp", "Pow", "Call",
    "ExprSyntaxError", "UnknownFunction", "UnknownVariable", "DomainError",
    "Jet3", "parse", "to_source", "variables_of", "substitute",
    "eval_jet3", "eval_value", "eval_jet3_fd_oracle", "default_variables",
]

FUNCTIONS = ("exp", "log", "sqrt", "sin", "cos")


class ExprSyntaxError(ValueError):
    def __init__(self, offset: int, expected: Sequence[str], src: str = ""):
        self.offset = offset
        self.expected = tuple(expected)
        super().__init__(f"syntax error at byte {offset}: expected one of {', '.join(self.expected)}"
                         + (f" in {src!r}" if src else ""))


class UnknownFunction(ValueError):
    def __init__(self, name: str, offset: int = -1):
        self.name = name
        self.offset = offset
        super().__init__(f"unknown function {name!r} (allowed: {', '.join(FUNCTIONS)})")


class UnknownVariable(KeyError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"variable {name!r} is not bound")


class DomainError(ArithmeticError):
    def __init__(self, message: str, subexpression: "Expression | None" = None):
        self.subexpression = subexpression
        where = f" in {to_source(subexpression)!r}" if subexpression is not None else ""
        super().__init__(message + where)


# ---------------------------------------------------------------------------
# AST


class Expression:
    """Base class of AST nodes (all nodes are frozen dataclasses)."""

    def __str__(self) -> str:
        return to_source(self)


@dataclass(frozen=True)
class Num(Expression):
    value: float


@dataclass(frozen=True)
class Var(Expression):
    name: str


@dataclass(frozen=True)
class Neg(Expression):
    operand: Expression


@dataclass(frozen=True)
class BinOp(Expression):
    op: str  # one of + - * /
    left: Expression
    right: Expression


@dataclass(frozen=True)
class Pow(Expression):
    base: Expression
    exponent: Fraction


@dataclass(frozen=True)
class Call(Expression):
    func: str
    arg: Expression


def Add(a, b):
    return BinOp("+", a, b)


def Sub(a, b):
    return BinOp("-", a, b)


def Mul(a, b):
    return BinOp("*", a, b)


def Div(a, b):
    return BinOp("/", a, b)


# ---------------------------------------------------------------------------
# Parser (recursive descent over a regex tokenizer; offsets are byte offsets)

_TOKEN = re.compile(r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>[-+*/^()])
""", re.VERBOSE)


@dataclass
class _Tok:
    kind: str
    text: str
    offset: int


def _tokenize(src: str) -> list[_Tok]:
    raw = src.encode("utf-8")
    toks = []
    pos = 0
    while pos < len(src):
        m = _TOKEN.match(src, pos)
        if m is None:
            raise ExprSyntaxError(len(src[:pos].encode("utf-8")), ["number", "identifier", "operator"], src)
        if m.lastgroup != "ws":
            toks.append(_Tok(m.lastgroup, m.group(), len(src[:pos].encode("utf-8"))))
        pos = m.end()
    toks.append(_Tok("end", "", len(raw)))
    return toks


class _Parser:
    def __init__(self, src: str):
        self.src = src
        self.toks = _tokenize(src)
        self.i = 0

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def fail(self, expected):
        raise ExprSyntaxError(self.tok.offset, expected, self.src)

    def eat(self, text: str) -> bool:
        if self.tok.kind == "op" and self.tok.text == text:
            self.i += 1
            return True
        return False

    def expect(self, text: str):
        if not self.eat(text):
            self.fail([repr(text)])

    def parse(self) -> Expression:
        e = self.expr()
        if self.tok.kind != "end":
            self.fail(["'+'", "'-'", "'*'", "'/'", "'^'", "end of input"])
        return e

    def expr(self) -> Expression:
        e = self.term()
        while True:
            if self.eat("+"):
                e = BinOp("+", e, self.term())
            elif self.eat("-"):
                e = BinOp("-", e, self.term())
            else:
                return e

    def term(self) -> Expression:
        e = self.factor()
        while True:
            if self.eat("*"):
                e = BinOp("*", e, self.factor())
            elif self.eat("/"):
                e = BinOp("/", e, self.factor())
            else:
                return e

    def factor(self) -> Expression:
        # unary minus binds looser than '^', so -x^2 == -(x^2)
        if self.eat("-"):
            return Neg(self.factor())
        base = self.atom()
        if self.eat("^"):
            return Pow(base, self.rational())
        return base

    def rational(self) -> Fraction:
        if self.eat("("):
            q = self.signed_ratio()
            self.expect(")")
            return q
        sign = -1 if self.eat("-") else 1
        return sign * self.number_fraction()

    def signed_ratio(self) -> Fraction:
        sign = -1 if self.eat("-") else 1
        q = self.number_fraction()
        if self.eat("/"):
            den = self.number_fraction()
            if den == 0:
                raise ExprSyntaxError(self.toks[self.i - 1].offset, ["nonzero denominator"], self.src)
            q = q / den
        return sign * q

    def number_fraction(self) -> Fraction:
        if self.tok.kind != "num":
            self.fail(["number"])
        q = Fraction(self.tok.text)
        self.i += 1
        return q

    def atom(self) -> Expression:
        t = self.tok
        if t.kind == "num":
            self.i += 1
            return Num(float(t.text))
        if t.kind == "ident":
            self.i += 1
            nxt = self.tok
            if nxt.kind == "op" and nxt.text == "(":
                if t.text not in FUNCTIONS:
                    raise UnknownFunction(t.text, t.offset)
                self.i += 1
                arg = self.expr()
                self.expect(")")
                return Call(t.text, arg)
            if t.text in FUNCTIONS:
                self.fail(["'('"])
            return Var(t.text)
        if self.eat("("):
            e = self.expr()
            self.expect(")")
            return e
        self.fail(["number", "identifier", "'('", "'-'"])


def parse(src: str) -> Expression:
    """Parse ``src`` into an :class:`Expression`.

    >>> parse("x1^3/3 + x2^2/2") == Add(Div(Pow(Var("x1"), Fraction(3)), Num(3.0)),
    ...                                 Div(Pow(Var("x2"), Fraction(2)), Num(2.0)))
    True
    """
    if not src or not src.strip():
        raise ExprSyntaxError(0, ["expression"], src)
    return _Parser(src).parse()


_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def to_source(e: Expression) -> str:
    """Pretty-print; ``parse(to_source(e)) == e`` for every parsed AST."""
    return _show(e, 0)


def _show(e: Expression, ctx: int) -> str:
    # ctx: 0 expr, 1 right operand of +/-, 2 operand of */, 3 right of / or *, 4 power base
    if isinstance(e, Num):
        s = repr(float(e.value))
        if "inf" in s or "nan" in s:
            raise ValueError(f"cannot print non-finite literal {s}")
        return f"({s})" if s.startswith("-") and ctx > 0 else s
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Call):
        return f"{e.func}({_show(e.arg, 0)})"
    if isinstance(e, Pow):
        q = e.exponent
        ex = str(q.numerator) if q.denominator == 1 and q >= 0 else f"({q.numerator}/{q.denominator})"
        s = f"{_show(e.base, 4)}^{ex}"
        return f"({s})" if ctx == 4 else s
    if isinstance(e, Neg):
        s = "-" + _show(e.operand, 5)
        return f"({s})" if ctx > 2 else s
    if isinstance(e, BinOp):
        p = _PREC[e.op]
        left = _show(e.left, 0 if p == 1 else 2)
        right = _show(e.right, 1 if p == 1 else 3)
        s = f"{left} {e.op} {right}"
        need = (p == 1 and ctx >= 1) or (p == 2 and ctx >= 3)
        return f"({s})" if need else s
    raise TypeError(f"not an expression: {e!r}")


def variables_of(e: Expression) -> set[str]:
    if isinstance(e, Var):
        return {e.name}
    if isinstance(e, Num):
        return set()
    if isinstance(e, (Neg,)):
        return variables_of(e.operand)
    if isinstance(e, Pow):
        return variables_of(e.base)
    if isinstance(e, Call):
        return variables_of(e.arg)
    if isinstance(e, BinOp):
        return variables_of(e.left) | variables_of(e.right)
    raise TypeError(e)


def substitute(e: Expression, mapping: dict[str, Expression]) -> Expression:
    """Replace variables by expressions (no simplification)."""
    if isinstance(e, Var):
        return mapping.get(e.name, e)
    if isinstance(e, Num):
        return e
    if isinstance(e, Neg):
        return Neg(substitute(e.operand, mapping))
    if isinstance(e, Pow):
        return Pow(substitute(e.base, mapping), e.exponent)
    if isinstance(e, Call):
        return Call(e.func, substitute(e.arg, mapping))
    if isinstance(e, BinOp):
        return BinOp(e.op, substitute(e.left, mapping), substitute(e.right, mapping))
    raise TypeError(e)


_VAR_INDEX = re.compile(r"^([xp])(\d+)$")


def default_variables(e: Expression, n: int | None = None) -> list[str]:
    """``x1..xn`` ordering used when no chart binds the variables."""
    names = variables_of(e)
    if n is None:
        n = max([int(m.group(2)) for v in names if (m := _VAR_INDEX.match(v)) and m.group(1) == "x"] or [0])
    return [f"x{i}" for i in range(1, n + 1)]


# ---------------------------------------------------------------------------
# Jets


@lru_cache(maxsize=None)
def _sym3_index(n: int):
    idx = np.empty((3, n, n, n), dtype=np.intp)
    for i, j, k in itertools.product(range(n), repeat=3):
        idx[:, i, j, k] = sorted((i, j, k))
    return tuple(idx)


def _canon_h(H: np.ndarray) -> np.ndarray:
    upper = np.triu(H)
    return upper + np.swapaxes(np.triu(H, 1), -1, -2)


def _canon_t(T: np.ndarray) -> np.ndarray:
    n = T.shape[-1]
    i, j, k = _sym3_index(n)
    return T[..., i, j, k]


@dataclass(frozen=True)
class Jet3:
    """Value and partial derivatives up to order three.

    ``H`` and ``T`` are canonicalised on construction: each distinct entry is
    taken from its sorted-index position and mirrored, so the symmetries hold
    bit for bit.  Arithmetic skips this step (see :meth:`symmetrized`).
    """

    v: np.ndarray
    g: np.ndarray
    H: np.ndarray
    T: np.ndarray
    canonical: bool = field(default=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.canonical:
            object.__setattr__(self, "H", _canon_h(np.asarray(self.H, dtype=float)))
            object.__setattr__(self, "T", _canon_t(np.asarray(self.T, dtype=float)))
            object.__setattr__(self, "canonical", True)

    @property
    def n(self) -> int:
        return self.g.shape[-1]

    @property
    def batch_shape(self) -> tuple:
        return np.shape(self.v)

    @classmethod
    def constant(cls, c, n: int, batch_shape=()) -> "Jet3":
        v = np.broadcast_to(np.asarray(c, dtype=float), batch_shape).copy()
        z = np.zeros(batch_shape + (n,))
        return cls(v, z, np.zeros(batch_shape + (n, n)), np.zeros(batch_shape + (n, n, n)), canonical=True)

    @classmethod
    def variable(cls, u, i: int, n: int) -> "Jet3":
        u = np.asarray(u, dtype=float)
        bs = u.shape
        g = np.zeros(bs + (n,))
        g[..., i] = 1.0
        return cls(u.copy(), g, np.zeros(bs + (n, n)), np.zeros(bs + (n, n, n)), canonical=True)

    def __getitem__(self, key) -> "Jet3":
        """Index the batch dimensions."""
        return Jet3(self.v[key], self.g[key], self.H[key], self.T[key], canonical=True)

    # arithmetic -----------------------------------------------------------

    def __add__(self, o):
        if np.isscalar(o):
            return Jet3(self.v + o, self.g, self.H, self.T, canonical=True)
        o = _lift(o, self)
        return Jet3(self.v + o.v, self.g + o.g, self.H + o.H, self.T + o.T, canonical=True)

    __radd__ = __add__

    def __neg__(self):
        return Jet3(-self.v, -self.g, -self.H, -self.T, canonical=True)

    def __sub__(self, o):
        return self + (-o if np.isscalar(o) else -_lift(o, self))

    def __rsub__(self, o):
        return (-self) + o

    def __mul__(self, o):
        if np.isscalar(o):
            return Jet3(o * self.v, o * self.g, o * self.H, o * self.T, canonical=True)
        o = _lift(o, self)
        a, b = self, o
        av, bv = a.v[..., None], b.v[..., None]
        g = av * b.g + bv * a.g
        gg = a.g[..., :, None] * b.g[..., None, :]
        H = av[..., None] * b.H + bv[..., None] * a.H + gg + np.swapaxes(gg, -1, -2)
        T = (av[..., None, None] * b.T + bv[..., None, None] * a.T
             + _sym_gh(a.g, b.H) + _sym_gh(b.g, a.H))
        return Jet3(a.v * b.v, g, H, T, canonical=True)

    __rmul__ = __mul__

    def __truediv__(self, o):
        if np.isscalar(o):
            return self * (1.0 / o)
        return self * _lift(o, self).reciprocal()

    def __rtruediv__(self, o):
        return self.reciprocal() * o

    def compose(self, d0, d1, d2, d3) -> "Jet3":
        """Chain rule for a scalar function with derivatives d0..d3 at ``self.v``."""
        d1e, d2e, d3e = (np.asarray(d)[..., None] for d in (d1, d2, d3))
        g = d1e * self.g
        H = d1e[..., None] * self.H + d2e[..., None] * (self.g[..., :, None] * self.g[..., None, :])
        ggg = self.g[..., :, None, None] * self.g[..., None, :, None] * self.g[..., None, None, :]
        T = d1e[..., None, None] * self.T + d2e[..., None, None] * _sym_gh(self.g, self.H) \
            + d3e[..., None, None] * ggg
        return Jet3(np.asarray(d0, dtype=float), g, H, T, canonical=True)

    def reciprocal(self) -> "Jet3":
        x = self.v
        with np.errstate(divide="ignore", invalid="ignore"):
            r = 1.0 / x
            return self.compose(r, -r ** 2, 2 * r ** 3, -6 * r ** 4)

    def pow(self, q: Fraction) -> "Jet3":
        x = self.v
        if q.denominator == 1 and q >= 0:
            k = int(q)
            coeff = [1.0, float(k), float(k * (k - 1)), float(k * (k - 1) * (k - 2))]
            ds = [coeff[m] * x ** (k - m) if k >= m else np.zeros_like(x) for m in range(4)]
            return self.compose(*ds)
        r = float(q)
        with np.errstate(divide="ignore", invalid="ignore"):
            if q.denominator == 1:
                base = x
            else:
                base = np.where(x > 0, x, np.nan)
            ds = [base ** r, r * base ** (r - 1), r * (r - 1) * base ** (r - 2),
                  r * (r - 1) * (r - 2) * base ** (r - 3)]
        return self.compose(*ds)

    def symmetrized(self) -> "Jet3":
        """Copy with ``H`` and ``T`` made exactly symmetric.

        Products and compositions are symmetric only up to rounding;
        :func:`eval_jet3` applies this once to its result.
        """
        return Jet3(self.v, self.g, self.H, self.T)

    def as_dict(self) -> dict:
        return {"v": self.v.tolist(), "g": self.g.tolist(), "H": self.H.tolist(), "T": self.T.tolist()}


def _sym_gh(g: np.ndarray, H: np.ndarray) -> np.ndarray:
    """g_i H_jk + g_j H_ik + g_k H_ij (symmetrised outer product)."""
    a = g[..., :, None, None] * H[..., None, :, :]
    return a + np.swapaxes(a, -3, -2) + np.moveaxis(a, -3, -1)


def _lift(o, like: Jet3) -> Jet3:
    if isinstance(o, Jet3):
        return o
    return Jet3.constant(o, like.n, like.batch_shape)


_UNARY = {
    "exp": lambda x: (np.exp(x),) * 4,
    "log": lambda x: (np.log(x), 1 / x, -1 / x ** 2, 2 / x ** 3),
    "sqrt": lambda x: (np.sqrt(x), 0.5 * x ** -0.5, -0.25 * x ** -1.5, 0.375 * x ** -2.5),
    "sin": lambda x: (np.sin(x), np.cos(x), -np.sin(x), -np.cos(x)),
    "cos": lambda x: (np.cos(x), -np.sin(x), -np.cos(x), np.sin(x)),
}


class _Evaluator:
    """Shared recursion for jet and value evaluation with domain tracking.

    With ``strict`` the first invalid subexpression raises :class:`DomainError`;
    otherwise invalid batch entries become NaN and are collected in ``bad``.
    """

    def __init__(self, env: dict, strict: bool, make_const, n=None, shape=()):
        self.env = env
        self.strict = strict
        self.make_const = make_const
        self.bad = None

    def flag(self, mask, e, msg):
        mask = np.asarray(mask)
        if not mask.any():
            return
        if self.strict:
            raise DomainError(msg, e)
        self.bad = mask if self.bad is None else (self.bad | mask)

    def __call__(self, e):
        if isinstance(e, Num):
            return self.make_const(e.value)
        if isinstance(e, Var):
            try:
                return self.env[e.name]
            except KeyError:
                raise UnknownVariable(e.name) from None
        if isinstance(e, Neg):
            return -self(e.operand)
        if isinstance(e, BinOp):
            a, b = self(e.left), self(e.right)
            if e.op == "+":
                return a + b
            if e.op == "-":
                return a - b
            if e.op == "*":
                return a * b
            self.flag(_val(b) == 0, e, "division by zero")
            with np.errstate(divide="ignore", invalid="ignore"):
                return a / b
        if isinstance(e, Pow):
            a = self(e.base)
            q = e.exponent
            av = _val(a)
            if q.denominator != 1:
                self.flag(~(av > 0), e, "fractional power of non-positive argument")
            elif q < 0:
                self.flag(av == 0, e, "negative power of zero")
            with np.errstate(divide="ignore", invalid="ignore"):
                return _pow(a, q)
        if isinstance(e, Call):
            a = self(e.arg)
            av = _val(a)
            if e.func in ("log", "sqrt"):
                self.flag(~(av > 0), e, f"{e.func} of non-positive argument")
            with np.errstate(divide="ignore", invalid="ignore"):
                if isinstance(a, Jet3):
                    return a.compose(*_UNARY[e.func](np.where(av > 0, av, np.nan)
                                                     if e.func in ("log", "sqrt") else av))
                return _UNARY[e.func](np.where(av > 0, av, np.nan) if e.func in ("log", "sqrt") else av)[0]
        raise TypeError(e)


def _val(a):
    return a.v if isinstance(a, Jet3) else a


def _pow(a, q: Fraction):
    if isinstance(a, Jet3):
        return a.pow(q)
    if q.denominator == 1 and q >= 0:
        return a ** int(q)
    base = a if q.denominator == 1 else np.where(a > 0, a, np.nan)
    return base ** float(q)


def _bind(e: Expression, u, variables):
    u = np.asarray(u, dtype=float)
    if variables is None:
        variables = default_variables(e, u.shape[-1] if u.ndim else 1)
    variables = list(variables)
    if u.ndim == 0:
        u = u[None]
    if u.shape[-1] != len(variables):
        raise ValueError(f"point has {u.shape[-1]} coordinates but {len(variables)} variables are bound")
    missing = variables_of(e) - set(variables)
    if missing:
        raise UnknownVariable(sorted(missing)[0])
    return u, variables


def eval_jet3(e: Expression, u, variables: Sequence[str] | None = None, strict: bool = True) -> Jet3:
    """Evaluate ``e`` and its derivatives up to order three at ``u``.

    ``variables`` names the coordinates of ``u`` in order (default ``x1..xn``).
    ``u`` may carry leading batch dimensions.  With ``strict=False`` invalid
    batch entries come back as NaN instead of raising.
    """
    u, variables = _bind(e, u, variables)
    n = len(variables)
    bs = u.shape[:-1]
    env = {name: Jet3.variable(u[..., i], i, n) for i, name in enumerate(variables)}
    ev = _Evaluator(env, strict, np.float64)
    out = ev(e)
    out = Jet3.constant(out, n, bs) if not isinstance(out, Jet3) else out.symmetrized()
    if ev.bad is not None:
        bad = np.broadcast_to(ev.bad, bs)
        out = Jet3(np.where(bad, np.nan, out.v), np.where(bad[..., None], np.nan, out.g),
                   np.where(bad[..., None, None], np.nan, out.H),
                   np.where(bad[..., None, None, None], np.nan, out.T), canonical=True)
    return out


def eval_value(e: Expression, u, variables: Sequence[str] | None = None, strict: bool = True):
    """Value-only evaluation (plain floating point, no derivative propagation)."""
    u, variables = _bind(e, u, variables)
    env = {name: u[..., i] for i, name in enumerate(variables)}
    ev = _Evaluator(env, strict, lambda c: np.float64(c))
    out = np.broadcast_to(ev(e), u.shape[:-1]).astype(float)
    if ev.bad is not None:
        out = np.where(np.broadcast_to(ev.bad, out.shape), np.nan, out)
    return out[()] if out.ndim == 0 else out


def eval_jet3_fd_oracle(e: Expression, u, step: float = 1e-3,
                        variables: Sequence[str] | None = None) -> Jet3:
    """Central finite-difference estimate of the jet from value-only evaluations.

    Each derivative is a product stencil with one Richardson level combining
    spacings ``step`` and ``2*step``.  Test oracle only.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    u = np.asarray(u, dtype=float)
    if u.ndim != 1:
        raise ValueError("the oracle evaluates one point at a time")
    _, variables = _bind(e, u, variables)
    n = len(variables)
    f = lambda pts: eval_value(e, pts, variables)
    eye = np.eye(n)

    def stencil(dirs, h):
        signs = np.array(list(itertools.product((1.0, -1.0), repeat=len(dirs))))
        offs = signs @ eye[list(dirs)]
        vals = f(u + h * offs)
        return float(np.prod(signs, axis=1) @ vals) / (2 * h) ** len(dirs)

    def rich(dirs):
        return (4 * stencil(dirs, step) - stencil(dirs, 2 * step)) / 3

    g = np.array([rich((i,)) for i in range(n)])
    H = np.zeros((n, n))
    for i, j in itertools.combinations_with_replacement(range(n), 2):
        H[i, j] = rich((i, j))
    T = np.zeros((n, n, n))
    for i, j, k in itertools.combinations_with_replacement(range(n), 3):
        T[i, j, k] = rich((i, j, k))
    T = _canon_t(T)
    return Jet3(np.asarray(f(u), dtype=float), g, _canon_h(H), T, canonical=True)
