"""Kernel IR: a small statement tree executed by the simulator and printed by the emitter."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

# expressions --------------------------------------------------------------------

_PREC = {"||": 1, "&&": 2, "==": 3, "!=": 3, "<": 4, "<=": 4, ">": 4, ">=": 4,
         "+": 5, "-": 5, "*": 6, "/": 6, "%": 6}


class E:
    """Integer expression. ``/`` and ``%`` are floor division / modulo (operands are non-negative)."""

    def __add__(self, o):
        return _bin("+", self, o)

    def __radd__(self, o):
        return _bin("+", o, self)

    def __sub__(self, o):
        return _bin("-", self, o)

    def __rsub__(self, o):
        return _bin("-", o, self)

    def __mul__(self, o):
        return _bin("*", self, o)

    def __rmul__(self, o):
        return _bin("*", o, self)

    def __floordiv__(self, o):
        return _bin("/", self, o)

    def __mod__(self, o):
        return _bin("%", self, o)

    def ge(self, o):
        return _bin(">=", self, o)

    def lt(self, o):
        return _bin("<", self, o)

    def eq(self, o):
        return _bin("==", self, o)


@dataclass(frozen=True, eq=True)
class Var(E):
    name: str

    def c(self, parent_prec: int = 0) -> str:
        return self.name

    def eval(self, env):
        return env[self.name]

    def vars(self):
        return {self.name}


@dataclass(frozen=True, eq=True)
class Const(E):
    value: int

    def c(self, parent_prec: int = 0) -> str:
        return str(self.value) if self.value >= 0 or parent_prec == 0 else f"({self.value})"

    def eval(self, env):
        return self.value

    def vars(self):
        return set()


@dataclass(frozen=True, eq=True)
class BinOp(E):
    op: str
    a: E
    b: E

    def c(self, parent_prec: int = 0) -> str:
        p = _PREC[self.op]
        # the right operand needs parentheses at equal precedence unless the op is associative
        same = isinstance(self.b, BinOp) and self.b.op == self.op and self.op in ("+", "*", "&&", "||")
        rp = p if same else p + 1
        s = f"{self.a.c(p)} {self.op} {self.b.c(rp)}"
        return f"({s})" if p < parent_prec else s

    def eval(self, env):
        a, b = self.a.eval(env), self.b.eval(env)
        o = self.op
        if o == "+":
            return a + b
        if o == "-":
            return a - b
        if o == "*":
            return a * b
        if o == "/":
            return a // b
        if o == "%":
            return a % b
        if o == "<":
            return a < b
        if o == "<=":
            return a <= b
        if o == ">":
            return a > b
        if o == ">=":
            return a >= b
        if o == "==":
            return a == b
        if o == "!=":
            return a != b
        if o == "&&":
            return np.logical_and(a, b)
        if o == "||":
            return np.logical_or(a, b)
        raise ValueError(o)

    def vars(self):
        return self.a.vars() | self.b.vars()


def lift(x) -> E:
    if isinstance(x, E):
        return x
    if isinstance(x, (int, np.integer)):
        return Const(int(x))
    if isinstance(x, str):
        return Var(x)
    raise TypeError(f"cannot lift {x!r}")


def _bin(op, a, b) -> E:
    a, b = lift(a), lift(b)
    if op in ("+", "-") and isinstance(b, Const) and b.value == 0:
        return a
    if op == "+" and isinstance(a, Const) and a.value == 0:
        return b
    if op == "*":
        if isinstance(a, Const) and a.value == 1:
            return b
        if isinstance(b, Const) and b.value == 1:
            return a
        if (isinstance(a, Const) and a.value == 0) or (isinstance(b, Const) and b.value == 0):
            return Const(0)
    if isinstance(a, Const) and isinstance(b, Const) and op in ("+", "-", "*"):
        return Const(BinOp(op, a, b).eval({}))
    return BinOp(op, a, b)


def linear(terms: list[tuple[int, E | str]], const: int = 0) -> E:
    """Sum of coef*term in the given order, then the constant."""
    out: E = Const(0)
    for c, t in terms:
        if c == 0:
            continue
        t = lift(t)
        out = out + (lift(c) * t if c != 1 else t)
    return out + const if const else out


def all_of(*conds: E) -> E:
    out = lift(conds[0])
    for c in conds[1:]:
        out = _bin("&&", out, c)
    return out


# statements ---------------------------------------------------------------------

@dataclass(frozen=True)
class Ref:
    """``buffer[index...]`` reference, printed as ``&buf[i][j][0]...`` or ``buf[i]``."""

    buffer: str
    index: tuple[E, ...] = ()
    trailing: int = 0  # number of trailing [0] subscripts when taking an address

    def c(self, addr: bool = True) -> str:
        subs = "".join(f"[({i.c()})]" if not isinstance(i, Const) else f"[{i.c()}]" for i in self.index)
        subs += "[0]" * self.trailing
        return f"&{self.buffer}{subs}" if addr else f"{self.buffer}{subs}"


@dataclass(frozen=True)
class GlobalRef:
    """Element address ``base[(row) * ld + (col)]`` of a global tensor."""

    tensor: str
    row: E
    col: E
    ld: E

    def c(self) -> str:
        return f"&{self.tensor}[({self.row.c()}) * {self.ld.c(6)} + ({self.col.c()})]"


Arg = Union[E, Ref, GlobalRef]


@dataclass
class Let:
    var: str
    expr: E
    ctype: str = "int"


@dataclass
class Loop:
    var: str
    lo: E
    hi: E
    cmp: str
    step: int
    body: list
    unroll: bool = False
    comment: str = ""


@dataclass
class Guard:
    cond: E
    body: list
    comment: str = ""


@dataclass
class Barrier:
    pass


@dataclass
class Call:
    helper: str
    args: tuple
    comment: str = ""
    tag: E | None = None  # k-tile a shared store publishes / a shared load expects (not printed)


@dataclass
class VectorCopy:
    """Register staging of one 128-bit vector: ``dst[...] = src[row*ld + col]``."""

    dst: Ref
    src: GlobalRef
    width: int = 8
    comment: str = ""


Stmt = Union[Let, Loop, Guard, Barrier, Call, VectorCopy]


@dataclass(frozen=True)
class SharedDecl:
    name: str
    halves: int
    offset: int  # in halves, within the block's shared arena


@dataclass(frozen=True)
class RegDecl:
    name: str
    shape: tuple[int, ...]
    dtype: str  # "half" or "float"


@dataclass(frozen=True)
class HelperSpec:
    """Semantics key for a helper: ``kind`` selects the implementation, ``params`` configures it."""

    name: str
    kind: str
    params: tuple = ()

    def p(self) -> dict:
        return dict(self.params)


@dataclass
class Kernel:
    name: str
    params: list[tuple[str, str]]  # (ctype, name)
    shared: list[SharedDecl]
    regs: list[RegDecl]
    helpers: dict[str, HelperSpec]
    body: list
    launch_bounds: int
    meta: dict = field(default_factory=dict)

    def shared_bytes(self) -> int:
        return 2 * sum(s.halves for s in self.shared)


def walk_stmts(body):
    for s in body:
        yield s
        if isinstance(s, (Loop, Guard)):
            yield from walk_stmts(s.body)


def dump(kernel: Kernel) -> str:
    """Indented structural dump of the IR (the ``.ir.txt`` artifact)."""
    out = [f"kernel {kernel.name} launch_bounds={kernel.launch_bounds}"]
    for p in kernel.params:
        out.append(f"  param {p[0]} {p[1]}")
    for s in kernel.shared:
        out.append(f"  shared {s.name} halves={s.halves} offset={s.offset}")
    for r in kernel.regs:
        out.append(f"  reg {r.dtype} {r.name}{list(r.shape)}")
    for h in kernel.helpers.values():
        out.append(f"  helper {h.name} kind={h.kind} " + " ".join(f"{k}={v}" for k, v in h.params))

    def rec(body, d):
        pad = "  " * d
        for s in body:
            if isinstance(s, Let):
                out.append(f"{pad}let {s.var} = {s.expr.c()}")
            elif isinstance(s, Loop):
                out.append(f"{pad}loop {s.var} = {s.lo.c()}; {s.var} {s.cmp} {s.hi.c()}; +{s.step}"
                           + (" unroll" if s.unroll else ""))
                rec(s.body, d + 1)
            elif isinstance(s, Guard):
                out.append(f"{pad}guard {s.cond.c()}")
                rec(s.body, d + 1)
            elif isinstance(s, Barrier):
                out.append(f"{pad}barrier")
            elif isinstance(s, Call):
                out.append(f"{pad}call {s.helper}(" + ", ".join(_arg_c(a) for a in s.args) + ")")
            elif isinstance(s, VectorCopy):
                out.append(f"{pad}vcopy {s.dst.c(False)} <- {s.src.c()} x{s.width}")

    rec(kernel.body, 1)
    return "\n".join(out) + "\n"


def _arg_c(a) -> str:
    if isinstance(a, (Ref,)):
        return a.c(True)
    if isinstance(a, GlobalRef):
        return a.c()
    return f"({a.c()})" if isinstance(a, BinOp) else a.c()
