"""Statement expression trees: access leaves under op nodes."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Union

UNARY_OPS = ("relu", "sigmoid", "tanh")
BINARY_OPS = ("add", "sub")
POINTWISE_OPS = UNARY_OPS + BINARY_OPS


@dataclass(frozen=True)
class Access:
    tensor: str
    index: tuple[str, ...]

    def render(self) -> str:
        return f"{self.tensor}[{', '.join(self.index)}]"


@dataclass(frozen=True)
class Expr:
    """``op`` applied to ``args``; ``attrs`` carries op parameters (e.g. macro shape)."""

    op: str
    args: tuple["Node", ...]
    attrs: tuple = ()

    def leaves(self) -> list[Access]:
        out: list[Access] = []
        for a in self.args:
            if isinstance(a, Access):
                out.append(a)
            else:
                out.extend(a.leaves())
        return out

    def render(self) -> str:
        name = compound_name(self)
        if name is not None and self.op in POINTWISE_OPS:
            return f"{name}({', '.join(a.render() for a in self.leaves())})"
        head = self.op
        if self.attrs:
            head += "<" + ",".join(str(a) for a in self.attrs) + ">"
        return f"{head}({', '.join(a.render() for a in self.args)})"


Node = Union[Expr, Access]


def compound_name(e: Node) -> str | None:
    """Name for a chain of unary ops over one op with leaf-only arguments, e.g. relu_add."""
    names = []
    cur = e
    while isinstance(cur, Expr) and cur.op in UNARY_OPS and isinstance(cur.args[0], Expr):
        names.append(cur.op)
        cur = cur.args[0]
    if not isinstance(cur, Expr) or not all(isinstance(a, Access) for a in cur.args):
        return None
    names.append(cur.op)
    return "_".join(names)


def apply_pointwise(e: Node, env, fn_table):
    """Evaluate a pointwise tree; ``env`` maps tensor name to value, ``fn_table`` maps op to callable."""
    if isinstance(e, Access):
        return env[e.tensor]
    vals = [apply_pointwise(a, env, fn_table) for a in e.args]
    return fn_table[e.op](*vals)


def split_compound(name: str) -> list[str]:
    """'relu_add' -> ['relu', 'add'] (outermost first); validates each part."""
    parts = name.split("_")
    for p in parts:
        if p not in POINTWISE_OPS:
            raise ValueError(f"unknown op kind {p!r} in {name!r}")
    for p in parts[:-1]:
        if p not in UNARY_OPS:
            raise ValueError(f"only unary ops may wrap another op in a compound name: {name!r}")
    return parts
