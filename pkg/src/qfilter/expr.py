"""Small operator-expression language used in model files.

Grammar (see docs/model_format.md for the full EBNF)::

    expr    := term (("+" | "-") term)*
    term    := unary (("*" | "/") unary)*
    unary   := ("-" | "+") unary | power
    power   := postfix ("^" INTEGER)?
    postfix := atom ("'")*
    atom    := NUMBER | IMAG | NAME call? index? | "(" expr ")"
    call    := "(" expr ("," expr)* ")"
    index   := "[" INTEGER "]"

``*`` between two operators is the matrix product, ``'`` is the adjoint and
``name[k]`` places a primitive on subsystem ``k`` of a tensor product.
"""

import cmath
import math
import re

import numpy as np

from . import hilbert
from .errors import ParseError

MAX_POWER = 64
MAX_DEPTH = 200

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?[ij]?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^'()\[\],])
    """,
    re.VERBOSE,
)

PRIMITIVES = ("identity", "annihilator", "creator", "number", "sigma_x", "sigma_y", "sigma_z", "sigma_plus", "sigma_minus")
FUNCTIONS = {"sqrt": cmath.sqrt, "exp": cmath.exp, "cos": cmath.cos, "sin": cmath.sin, "conj": lambda z: z.conjugate()}
CONSTANTS = {"pi": math.pi, "i": 1j, "j": 1j}
_LADDER = ("annihilator", "creator", "number")


def _tokenize(text):
    pos = 0
    out = []
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", column=pos + 1)
        kind = m.lastgroup
        if kind != "ws":
            out.append((kind, m.group(), pos + 1))
        pos = m.end()
    out.append(("end", "", len(text) + 1))
    return out


def _primitive(name, d):
    if name == "identity":
        return np.eye(d, dtype=complex)
    if name in _LADDER:
        a = hilbert.annihilation_op(d)
        return {"annihilator": a, "creator": hilbert.dag(a), "number": hilbert.dag(a) @ a}[name]
    if d != 2:
        raise ValueError(f"{name} needs a two-level subsystem, got dimension {d}")
    return hilbert.pauli(name[len("sigma_") :])


def _projector(k, d):
    if not (isinstance(k, complex) and k.imag == 0 and k.real == int(k.real)) or not 0 <= int(k.real) < d:
        raise ValueError(f"proj index must be an integer in [0, {d})")
    out = np.zeros((d, d), dtype=complex)
    out[int(k.real), int(k.real)] = 1
    return out


class _Parser:
    def __init__(self, text, dims):
        self.tokens = _tokenize(text)
        self.i = 0
        self.dims = tuple(dims)
        self.d = int(np.prod(self.dims))
        self.depth = 0
        self.ladder_subsystems = set()

    # -- helpers
    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        tok = self.take()
        if tok[1] != value:
            found = "end of input" if tok[0] == "end" else repr(tok[1])
            raise ParseError(f"expected {value!r}, found {found}", column=tok[2])
        return tok

    def fail(self, msg, tok):
        raise ParseError(msg, column=tok[2])

    def as_operator(self, val):
        return val if isinstance(val, np.ndarray) else val * np.eye(self.d, dtype=complex)

    # -- grammar
    def parse(self):
        val = self.expr()
        tok = self.peek()
        if tok[0] != "end":
            self.fail(f"unexpected {tok[1]!r}", tok)
        return val

    def expr(self):
        self.depth += 1
        if self.depth > MAX_DEPTH:
            self.fail("expression nested too deeply", self.peek())
        val = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            rhs = self.term()
            if isinstance(val, np.ndarray) or isinstance(rhs, np.ndarray):
                val, rhs = self.as_operator(val), self.as_operator(rhs)
            val = val + rhs if op == "+" else val - rhs
        self.depth -= 1
        return val

    def term(self):
        val = self.unary()
        while self.peek()[1] in ("*", "/"):
            tok = self.take()
            rhs = self.unary()
            if tok[1] == "*":
                val = val @ rhs if isinstance(val, np.ndarray) and isinstance(rhs, np.ndarray) else val * rhs
            else:
                if isinstance(rhs, np.ndarray):
                    self.fail("division by an operator is not supported", tok)
                if rhs == 0:
                    self.fail("division by zero", tok)
                val = val / rhs
        return val

    def unary(self):
        tok = self.peek()
        if tok[1] in ("-", "+"):
            self.take()
            self.depth += 1
            if self.depth > MAX_DEPTH:
                self.fail("expression nested too deeply", tok)
            val = self.unary()
            self.depth -= 1
            return -val if tok[1] == "-" else val
        return self.power()

    def power(self):
        val = self.postfix()
        if self.peek()[1] == "^":
            tok = self.take()
            sign = 1
            if self.peek()[1] == "-":
                self.take()
                sign = -1
            ntok = self.take()
            if ntok[0] != "number" or not ntok[1].isdigit():
                self.fail("exponent must be an integer literal", ntok)
            k = sign * int(ntok[1])
            if abs(k) > MAX_POWER:
                self.fail(f"exponent magnitude above {MAX_POWER}", ntok)
            if isinstance(val, np.ndarray):
                if k < 0:
                    self.fail("negative powers of operators are not supported", tok)
                return np.linalg.matrix_power(val, k)
            if val == 0 and k < 0:
                self.fail("division by zero", tok)
            return val**k
        return val

    def postfix(self):
        val = self.atom()
        while self.peek()[1] == "'":
            self.take()
            val = hilbert.dag(val) if isinstance(val, np.ndarray) else val.conjugate()
        return val

    def atom(self):
        tok = self.take()
        kind, text, col = tok
        if kind == "number":
            if text[-1] in "ij":
                return complex(0, float(text[:-1]))
            return complex(float(text))
        if text == "(":
            val = self.expr()
            self.expect(")")
            return val
        if kind == "name":
            return self.named(tok)
        self.fail("unexpected end of expression" if kind == "end" else f"unexpected {text!r}", tok)

    def args(self):
        self.expect("(")
        vals = [self.expr()]
        while self.peek()[1] == ",":
            self.take()
            vals.append(self.expr())
        self.expect(")")
        return vals

    def subsystem(self):
        if self.peek()[1] != "[":
            return None
        self.take()
        tok = self.take()
        if tok[0] != "number" or not tok[1].isdigit():
            self.fail("subsystem index must be a non-negative integer", tok)
        self.expect("]")
        k = int(tok[1])
        if k >= len(self.dims):
            self.fail(f"subsystem index {k} out of range for dims {list(self.dims)}", tok)
        return k

    def named(self, tok):
        name = tok[1]
        if name in CONSTANTS:
            return complex(CONSTANTS[name])
        if name in FUNCTIONS:
            vals = self.args()
            if len(vals) != 1 or isinstance(vals[0], np.ndarray):
                self.fail(f"{name}() takes one scalar argument", tok)
            try:
                out = complex(FUNCTIONS[name](vals[0]))
            except (OverflowError, ValueError) as exc:
                self.fail(f"{name}(): {exc}", tok)
            return out
        if name == "proj":
            vals = self.args()
            if len(vals) != 1 or isinstance(vals[0], np.ndarray):
                self.fail("proj() takes one integer argument", tok)
            return self.place(lambda dk: _projector(vals[0], dk), tok)
        if name in PRIMITIVES:
            return self.place(lambda dk: _primitive(name, dk), tok, ladder=name in _LADDER)
        self.fail(f"unknown name {name!r}", tok)

    def place(self, build, tok, ladder=False):
        k = self.subsystem()
        if k is None:
            if len(self.dims) > 1 and tok[1] != "identity":
                self.fail(f"{tok[1]} needs a subsystem index on a composite space, e.g. {tok[1]}[0]", tok)
            k = 0
        if tok[1] == "identity":
            return np.eye(self.d, dtype=complex)
        try:
            local = build(self.dims[k])
        except ValueError as exc:
            self.fail(str(exc), tok)
        if ladder:
            self.ladder_subsystems.add(k)
        return hilbert.embed(local, k, self.dims) if len(self.dims) > 1 else local


def parse_operator_expr(text, dims, with_info=False):
    """Evaluate an operator expression to a ``d x d`` matrix.

    ``dims`` is the Hilbert-space dimension or a list of subsystem
    dimensions.  A scalar result is promoted to a multiple of the identity.
    """
    if isinstance(dims, (int, np.integer)):
        dims = (int(dims),)
    dims = tuple(int(x) for x in dims)
    if not dims or any(x < 1 for x in dims):
        raise ParseError(f"invalid dimensions {list(dims)}")
    if not isinstance(text, str):
        text = str(text)
    parser = _Parser(text, dims)
    try:
        val = parser.parse()
    except RecursionError:
        raise ParseError("expression nested too deeply") from None
    except (ValueError, ArithmeticError) as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(str(exc)) from None
    out = parser.as_operator(val)
    if not np.all(np.isfinite(out)):
        raise ParseError("expression evaluates to non-finite entries")
    if with_info:
        return out, sorted(parser.ladder_subsystems)
    return out


def parse_scalar_expr(text):
    """Evaluate a scalar-only expression such as ``"0.5+0.2i"`` or ``"exp(i*pi/5)"``."""
    parser = _Parser(str(text), (1,))
    try:
        val = parser.parse()
    except RecursionError:
        raise ParseError("expression nested too deeply") from None
    except ParseError:
        raise
    except (ValueError, ArithmeticError) as exc:
        raise ParseError(str(exc)) from None
    if isinstance(val, np.ndarray):
        raise ParseError(f"{text!r} is not a scalar")
    if not cmath.isfinite(val):
        raise ParseError(f"{text!r} is not finite")
    return complex(val)
