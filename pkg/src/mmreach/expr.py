"""A small arithmetic expression language for vector-field components.

Grammar (precedence climbing, lowest first):

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := '-' unary | power
    power   := atom ('^' signed_integer)?
    atom    := NUMBER
             | IDENT                          -- x1..xn, w1..wm, xh1.., wh1..
             | IDENT '(' expr (',' expr)? ')' -- abs,min,max,sin,cos,exp
             | '(' expr ')'

Exponents are integer literals only, so cubing a negative base stays total;
`min`/`max` are binary. Two evaluation routes exist on purpose: the
recursive `evaluate` walks the tree with numpy broadcasting (the oracle
path), while `compile_program` flattens to a postfix program executed by
the selected kernel backend (the fast path). Tests hold the routes to
agree.
"""
from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from typing import Mapping

import numpy as np

__all__ = [
    "Expr",
    "ExprError",
    "const",
    "var",
    "parse_expr",
    "to_string",
    "evaluate",
    "free_vars",
    "compile_program",
    "Program",
    "VAR_KINDS",
    "FUNCTIONS",
]

VAR_KINDS = ("x", "w", "xh", "wh")
FUNCTIONS = {"abs": 1, "min": 2, "max": 2, "sin": 1, "cos": 1, "exp": 1}
_BINARY_OPS = {"add", "sub", "mul", "div", "min", "max"}
_UNARY_OPS = {"neg", "abs", "sin", "cos", "exp"}


class ExprError(ValueError):
    """Parse or evaluation failure; carries the source position when known."""

    def __init__(self, message: str, pos: int | None = None):
        self.pos = pos
        super().__init__(message if pos is None else f"{message} (at column {pos + 1})")


@dataclass(frozen=True, slots=True)
class Expr:
    """One AST node.

    op is 'const' (value set), a variable kind from VAR_KINDS (index set,
    1-based), 'pow' (value holds the integer exponent), or an operator /
    function name with children in args.
    """

    op: str
    args: tuple["Expr", ...] = ()
    value: float | int | None = None
    index: int | None = None


def const(v: float) -> Expr:
    return Expr("const", value=float(v))


def var(kind: str, index: int) -> Expr:
    if kind not in VAR_KINDS:
        raise ExprError(f"unknown variable kind {kind!r}")
    if index < 1:
        raise ExprError(f"variable index must be >= 1, got {index}")
    return Expr(kind, index=index)


# --------------------------------------------------------------------------
#   Tokenizer
# --------------------------------------------------------------------------

class TokenId(enum.Enum):
    NUMBER = enum.auto()
    IDENT = enum.auto()
    PLUS = enum.auto()
    MINUS = enum.auto()
    STAR = enum.auto()
    SLASH = enum.auto()
    CARET = enum.auto()
    LPAREN = enum.auto()
    RPAREN = enum.auto()
    COMMA = enum.auto()
    END = enum.auto()


_TOKEN_RE = re.compile(r"""
    (?P<ws>\s+)
  | (?P<number>(\d+\.\d*|\.\d+|\d+)([eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[+\-*/^(),])
""", re.VERBOSE)

_OP_IDS = {"+": TokenId.PLUS, "-": TokenId.MINUS, "*": TokenId.STAR,
           "/": TokenId.SLASH, "^": TokenId.CARET, "(": TokenId.LPAREN,
           ")": TokenId.RPAREN, ",": TokenId.COMMA}


@dataclass(frozen=True, slots=True)
class _Token:
    id: TokenId
    text: str
    pos: int


def _tokenize(text: str) -> list[_Token]:
    out, pos = [], 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ExprError(f"unexpected character {text[pos]!r}", pos)
        if m.lastgroup != "ws":
            if m.lastgroup == "number":
                tid = TokenId.NUMBER
            elif m.lastgroup == "ident":
                tid = TokenId.IDENT
            else:
                tid = _OP_IDS[m.group()]
            out.append(_Token(tid, m.group(), pos))
        pos = m.end()
    out.append(_Token(TokenId.END, "", len(text)))
    return out


# --------------------------------------------------------------------------
#   Parser
# --------------------------------------------------------------------------

_VAR_RE = re.compile(r"^(xh|wh|x|w)(\d+)$")


class _Parser:
    def __init__(self, text: str, n: int, m: int, allow_hat: bool):
        self.tokens = _tokenize(text)
        self.i = 0
        self.n, self.m, self.allow_hat = n, m, allow_hat

    def peek(self) -> _Token:
        return self.tokens[self.i]

    def next(self) -> _Token:
        t = self.tokens[self.i]
        self.i += 1
        return t

    def expect(self, tid: TokenId, what: str) -> _Token:
        t = self.next()
        if t.id is not tid:
            raise ExprError(f"expected {what}, got {t.text or 'end of input'!r}", t.pos)
        return t

    def parse(self) -> Expr:
        e = self.expr()
        t = self.peek()
        if t.id is not TokenId.END:
            raise ExprError(f"unexpected trailing input {t.text!r}", t.pos)
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.peek().id in (TokenId.PLUS, TokenId.MINUS):
            op = self.next()
            rhs = self.term()
            e = Expr("add" if op.id is TokenId.PLUS else "sub", (e, rhs))
        return e

    def term(self) -> Expr:
        e = self.unary()
        while self.peek().id in (TokenId.STAR, TokenId.SLASH):
            op = self.next()
            rhs = self.unary()
            e = Expr("mul" if op.id is TokenId.STAR else "div", (e, rhs))
        return e

    def unary(self) -> Expr:
        if self.peek().id is TokenId.MINUS:
            self.next()
            return Expr("neg", (self.unary(),))
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.peek().id is TokenId.CARET:
            t = self.next()
            sign = 1
            if self.peek().id is TokenId.MINUS:
                self.next()
                sign = -1
            num = self.expect(TokenId.NUMBER, "an integer exponent")
            if not num.text.isdigit():
                raise ExprError(f"exponent must be an integer, got {num.text!r}", num.pos)
            return Expr("pow", (base,), value=sign * int(num.text))
        return base

    def atom(self) -> Expr:
        t = self.next()
        if t.id is TokenId.NUMBER:
            return const(float(t.text))
        if t.id is TokenId.LPAREN:
            e = self.expr()
            self.expect(TokenId.RPAREN, "')'")
            return e
        if t.id is TokenId.IDENT:
            if self.peek().id is TokenId.LPAREN:
                return self.call(t)
            return self.variable(t)
        raise ExprError(f"expected a number, variable or '(', got "
                        f"{t.text or 'end of input'!r}", t.pos)

    def call(self, name: _Token) -> Expr:
        if name.text not in FUNCTIONS:
            raise ExprError(f"unknown function {name.text!r}", name.pos)
        arity = FUNCTIONS[name.text]
        self.expect(TokenId.LPAREN, "'('")
        args = [self.expr()]
        while self.peek().id is TokenId.COMMA:
            self.next()
            args.append(self.expr())
        self.expect(TokenId.RPAREN, "')'")
        if len(args) != arity:
            raise ExprError(f"{name.text} takes {arity} argument(s), got {len(args)}",
                            name.pos)
        return Expr(name.text, tuple(args))

    def variable(self, t: _Token) -> Expr:
        m = _VAR_RE.match(t.text)
        if m is None:
            raise ExprError(f"unknown identifier {t.text!r}", t.pos)
        kind, idx = m.group(1), int(m.group(2))
        if kind in ("xh", "wh") and not self.allow_hat:
            raise ExprError(f"{t.text!r}: hatted variables are only allowed in "
                            "decomposition expressions", t.pos)
        limit = self.n if kind in ("x", "xh") else self.m
        if not 1 <= idx <= limit:
            raise ExprError(f"{t.text!r}: index out of range 1..{limit}", t.pos)
        return var(kind, idx)


def parse_expr(text: str, n: int, m: int, allow_hat: bool = False) -> Expr:
    """Parse one component expression over x1..xn, w1..wm (and xh*/wh* when
    allow_hat is set, for user-supplied decomposition functions)."""
    return _Parser(text, n, m, allow_hat).parse()


# --------------------------------------------------------------------------
#   Printing
# --------------------------------------------------------------------------

_PRECEDENCE = {"add": 1, "sub": 1, "mul": 2, "div": 2, "neg": 3, "pow": 4}


def to_string(e: Expr) -> str:
    """Pretty-print with minimal parentheses; parse_expr(to_string(e))
    evaluates identically to e."""
    return _print(e, 0)


def _print(e: Expr, parent_prec: int) -> str:
    if e.op == "const":
        s = f"{e.value:g}"
        return f"({s})" if e.value < 0 and parent_prec >= 3 else s
    if e.op in VAR_KINDS:
        return f"{e.op}{e.index}"
    if e.op in FUNCTIONS:
        return f"{e.op}({', '.join(_print(a, 0) for a in e.args)})"
    if e.op == "neg":
        inner = _print(e.args[0], _PRECEDENCE["neg"])
        s = f"-{inner}"
        return f"({s})" if parent_prec >= _PRECEDENCE["neg"] else s
    if e.op == "pow":
        base = _print(e.args[0], _PRECEDENCE["pow"] + 1)
        exp = e.value if e.value >= 0 else f"-{-e.value}"
        s = f"{base}^{exp}"
        return f"({s})" if parent_prec > _PRECEDENCE["pow"] else s
    sym = {"add": " + ", "sub": " - ", "mul": "*", "div": "/"}[e.op]
    prec = _PRECEDENCE[e.op]
    lhs = _print(e.args[0], prec - 1)
    # -, / are left associative: the right child needs the tighter context
    rhs = _print(e.args[1], prec if e.op in ("sub", "div") else prec - 1)
    s = f"{lhs}{sym}{rhs}"
    return f"({s})" if parent_prec >= prec else s


# --------------------------------------------------------------------------
#   Recursive evaluation (numpy broadcasting; the oracle route)
# --------------------------------------------------------------------------

def evaluate(e: Expr, env: Mapping[tuple[str, int], np.ndarray | float]):
    """Evaluate with env[(kind, index)] giving the value of each variable.

    Values may be scalars or broadcast-compatible arrays, so a dense grid
    can assign each free axis an orthogonal shape and never materialize the
    full product until the arithmetic requires it.
    """
    if e.op == "const":
        return e.value
    if e.op in VAR_KINDS:
        try:
            return env[(e.op, e.index)]
        except KeyError:
            raise ExprError(f"no value bound for {e.op}{e.index}") from None
    if e.op == "pow":
        return _int_pow(evaluate(e.args[0], env), e.value)
    vals = [evaluate(a, env) for a in e.args]
    if e.op == "add":
        return vals[0] + vals[1]
    if e.op == "sub":
        return vals[0] - vals[1]
    if e.op == "mul":
        return vals[0] * vals[1]
    if e.op == "div":
        # np.divide keeps IEEE semantics for scalars too (1/0 -> inf, not
        # a ZeroDivisionError), matching the compiled kernels.
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.divide(vals[0], vals[1])
    if e.op == "neg":
        return -vals[0]
    if e.op == "abs":
        return np.abs(vals[0])
    if e.op == "min":
        return np.minimum(vals[0], vals[1])
    if e.op == "max":
        return np.maximum(vals[0], vals[1])
    if e.op == "sin":
        return np.sin(vals[0])
    if e.op == "cos":
        return np.cos(vals[0])
    if e.op == "exp":
        return np.exp(vals[0])
    raise ExprError(f"unknown operator {e.op!r}")


def _int_pow(base, k: int):
    """base**k by binary exponentiation; total on negative bases, and the
    same multiplication sequence both backends use."""
    if k == 0:
        return np.ones_like(base) if isinstance(base, np.ndarray) else 1.0
    neg = k < 0
    k = -k if neg else k
    acc = None
    sq = base
    while k:
        if k & 1:
            acc = sq if acc is None else acc * sq
        k >>= 1
        if k:
            sq = sq * sq
    if neg:
        with np.errstate(divide="ignore"):
            return 1.0 / acc
    return acc


def free_vars(e: Expr) -> set[tuple[str, int]]:
    """All (kind, index) pairs appearing in the tree."""
    if e.op in VAR_KINDS:
        return {(e.op, e.index)}
    out: set[tuple[str, int]] = set()
    for a in e.args:
        out |= free_vars(a)
    return out


# --------------------------------------------------------------------------
#   Postfix compilation (the kernel route)
# --------------------------------------------------------------------------

# Opcode values shared with the compiled kernel; keep in sync with
# _kernels.pyx and _kernels_py.py.
OP_CONST, OP_VAR, OP_ADD, OP_SUB, OP_MUL, OP_DIV, OP_NEG, OP_POW, OP_ABS, \
    OP_MIN, OP_MAX, OP_SIN, OP_COS, OP_EXP = range(14)

_OPCODES = {"add": OP_ADD, "sub": OP_SUB, "mul": OP_MUL, "div": OP_DIV,
            "neg": OP_NEG, "abs": OP_ABS, "min": OP_MIN, "max": OP_MAX,
            "sin": OP_SIN, "cos": OP_COS, "exp": OP_EXP}


@dataclass(frozen=True, slots=True)
class Program:
    """A postfix stack program over a flat variable vector.

    Variable slots follow the layout [x (n), w (m), xh (n), wh (m)];
    `slot_of` maps (kind, index) to its position. `stack_need` is the
    exact evaluation stack depth.
    """

    ops: np.ndarray        # int32 opcodes
    iargs: np.ndarray      # int32 operand per op (const table index, slot, exponent)
    consts: np.ndarray     # float64 constant table
    nvars: int
    stack_need: int

    @staticmethod
    def slot_of(kind: str, index: int, n: int, m: int) -> int:
        base = {"x": 0, "w": n, "xh": n + m, "wh": 2 * n + m}[kind]
        return base + index - 1


def compile_program(e: Expr, n: int, m: int) -> Program:
    """Flatten to postfix; variables address the [x, w, xh, wh] layout."""
    ops: list[int] = []
    iargs: list[int] = []
    consts: list[float] = []

    def emit(node: Expr) -> int:
        if node.op == "const":
            ops.append(OP_CONST)
            iargs.append(len(consts))
            consts.append(float(node.value))
            return 1
        if node.op in VAR_KINDS:
            ops.append(OP_VAR)
            iargs.append(Program.slot_of(node.op, node.index, n, m))
            return 1
        if node.op == "pow":
            depth = emit(node.args[0])
            ops.append(OP_POW)
            iargs.append(int(node.value))
            return depth
        if node.op in _BINARY_OPS:
            d1 = emit(node.args[0])
            d2 = emit(node.args[1])
            ops.append(_OPCODES[node.op])
            iargs.append(0)
            return max(d1, d2 + 1)
        depth = emit(node.args[0])
        ops.append(_OPCODES[node.op])
        iargs.append(0)
        return depth

    need = emit(e)
    return Program(ops=np.asarray(ops, dtype=np.int32),
                   iargs=np.asarray(iargs, dtype=np.int32),
                   consts=np.asarray(consts, dtype=np.float64),
                   nvars=2 * (n + m), stack_need=need)
