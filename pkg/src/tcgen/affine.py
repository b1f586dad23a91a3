"""Quasi-affine expressions with constant floor divisors.

Only the fragment of Presburger arithmetic used by tiled GEMM schedules is
supported: integer linear terms plus ``coef * floor(inner / divisor)`` terms,
nested at most two levels deep.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from math import gcd
from typing import Iterable, Mapping, Sequence

MAX_FLOOR_DEPTH = 2


@dataclass(frozen=True, order=True)
class Floor:
    inner: "Aff"
    divisor: int

    def __post_init__(self):
        if self.divisor <= 0:
            raise ValueError(f"floor divisor must be positive, got {self.divisor}")


@dataclass(frozen=True, order=True)
class Aff:
    """``const + sum(coef * var) + sum(coef * floor(inner / d))`` in canonical form."""

    const: int = 0
    terms: tuple[tuple[str, int], ...] = ()
    floors: tuple[tuple[Floor, int], ...] = field(default=())

    # construction ---------------------------------------------------------
    @staticmethod
    def var(name: str) -> "Aff":
        return Aff(0, ((name, 1),), ())

    @staticmethod
    def const_(value: int) -> "Aff":
        return Aff(int(value), (), ())

    @staticmethod
    def lift(x: "Aff | int | str") -> "Aff":
        if isinstance(x, Aff):
            return x
        if isinstance(x, str):
            return Aff.var(x)
        return Aff.const_(x)

    @staticmethod
    def _make(const: int, terms: Mapping[str, int], floors: Mapping[Floor, int]) -> "Aff":
        t = tuple(sorted((k, v) for k, v in terms.items() if v != 0))
        f = tuple(sorted((k, v) for k, v in floors.items() if v != 0))
        return Aff(int(const), t, f)

    # arithmetic -----------------------------------------------------------
    def __add__(self, other: "Aff | int | str") -> "Aff":
        o = Aff.lift(other)
        terms = dict(self.terms)
        for k, v in o.terms:
            terms[k] = terms.get(k, 0) + v
        floors = dict(self.floors)
        for k, v in o.floors:
            floors[k] = floors.get(k, 0) + v
        return Aff._make(self.const + o.const, terms, floors)

    __radd__ = __add__

    def __neg__(self) -> "Aff":
        return self * -1

    def __sub__(self, other: "Aff | int | str") -> "Aff":
        return self + (-Aff.lift(other))

    def __rsub__(self, other: "Aff | int | str") -> "Aff":
        return Aff.lift(other) - self

    def __mul__(self, k: int) -> "Aff":
        if not isinstance(k, int):
            return NotImplemented
        return Aff._make(
            self.const * k,
            {n: c * k for n, c in self.terms},
            {f: c * k for f, c in self.floors},
        )

    __rmul__ = __mul__

    def floordiv(self, d: int) -> "Aff":
        """``floor(self / d)``, simplified where exact.

        Floor terms whose coefficients are multiples of ``d`` are integers
        after division and can be pulled out of the floor.
        """
        if d <= 0:
            raise ValueError(f"divisor must be positive, got {d}")
        if d == 1:
            return self
        pulled: dict[Floor, int] = {}
        kept: dict[Floor, int] = {}
        for f, c in self.floors:
            if c % d == 0:
                pulled[f] = c // d
            else:
                kept[f] = c
        terms_out: dict[str, int] = {}
        terms_in: dict[str, int] = {}
        for n, c in self.terms:
            if c % d == 0:
                terms_out[n] = c // d
            else:
                terms_in[n] = c
        const_out, const_in = divmod(self.const, d)
        rest = Aff._make(const_in, terms_in, kept)
        base = Aff._make(const_out, terms_out, pulled)
        if rest.is_zero():
            return base
        # floor(a/d) where a = d*q + r; nested floors inside r are allowed
        # only up to the depth limit.
        inner = rest
        if inner.floors and len(inner.terms) == 0 and inner.const == 0 and len(inner.floors) == 1:
            (f, c), = inner.floors
            if c == 1:
                # floor(floor(x/a)/b) == floor(x/(a*b))
                return base + Aff._make(0, {}, {Floor(f.inner, f.divisor * d): 1})
        nested = Aff._make(0, {}, {Floor(inner, d): 1})
        if nested.depth() > MAX_FLOOR_DEPTH:
            raise ValueError(f"floor nesting deeper than {MAX_FLOOR_DEPTH}: {inner} / {d}")
        return base + nested

    def mod(self, d: int) -> "Aff":
        return self - self.floordiv(d) * d

    # inspection -----------------------------------------------------------
    def is_zero(self) -> bool:
        return self.const == 0 and not self.terms and not self.floors

    def depth(self) -> int:
        return max((1 + f.inner.depth() for f, _ in self.floors), default=0)

    def variables(self) -> set[str]:
        out = {n for n, _ in self.terms}
        for f, _ in self.floors:
            out |= f.inner.variables()
        return out

    def is_constant(self) -> bool:
        return not self.terms and not self.floors

    def evaluate(self, env: Mapping[str, object]):
        """Evaluate with Python floor semantics; ``env`` values may be numpy arrays."""
        total = self.const
        for n, c in self.terms:
            total = total + c * env[n]
        for f, c in self.floors:
            total = total + c * (f.inner.evaluate(env) // f.divisor)
        return total

    def substitute(self, mapping: Mapping[str, "Aff | int | str"]) -> "Aff":
        out = Aff.const_(self.const)
        for n, c in self.terms:
            out = out + Aff.lift(mapping[n]) * c if n in mapping else out + Aff.var(n) * c
        for f, c in self.floors:
            out = out + f.inner.substitute(mapping).floordiv(f.divisor) * c
        return out

    def exact_linear(self, multiples: Mapping[str, int]) -> dict[str, Fraction] | None:
        """Rewrite as a rational linear form assuming each ``multiples[p]`` divides ``p``.

        Returns ``{name: coef, "": const}`` or None when some floor cannot be
        removed under the assumptions.
        """
        out: dict[str, Fraction] = {"": Fraction(self.const)}
        for n, c in self.terms:
            out[n] = out.get(n, Fraction(0)) + c
        for f, c in self.floors:
            inner = f.inner.exact_linear(multiples)
            if inner is None:
                return None
            # exact when every term of inner/d is an integer for all admissible values
            for n, coef in inner.items():
                q = coef / f.divisor
                if n == "":
                    if q.denominator != 1:
                        return None
                else:
                    step = multiples.get(n)
                    if step is None or (q * step).denominator != 1:
                        return None
            for n, coef in inner.items():
                out[n] = out.get(n, Fraction(0)) + c * coef / f.divisor
        return {k: v for k, v in out.items() if v != 0 or k == ""}

    # rendering ------------------------------------------------------------
    def render(self, order: Sequence[str] = ()) -> str:
        rank = {n: i for i, n in enumerate(order)}

        def key_var(n: str):
            return (rank.get(n, len(rank)), n)

        groups: dict[str, list[tuple[int, int, str]]] = {}
        for n, c in self.terms:
            groups.setdefault(n, []).append((0, 0, c, Aff.var(n), None))
        for f, c in self.floors:
            lead = min(f.inner.variables(), key=key_var, default="")
            groups.setdefault(lead, []).append((1, f.divisor, c, f.inner, f.divisor))
        pieces: list[tuple[int, str]] = []
        for lead in sorted(groups, key=key_var):
            for _, _, c, inner, div in sorted(groups[lead], key=lambda t: (t[0], t[1])):
                if div is None:
                    body = lead
                else:
                    ib = inner.render(order)
                    if not (len(inner.terms) == 1 and not inner.floors and inner.const == 0
                            and inner.terms[0][1] == 1):
                        ib = f"({ib})"
                    body = f"⌊{ib}/{div}⌋"
                pieces.append((c, body))
        if self.const != 0 or not pieces:
            pieces.append((self.const, ""))
        out = []
        for idx, (c, body) in enumerate(pieces):
            mag = abs(c)
            txt = body if (mag == 1 and body) else f"{mag}{body}"
            if idx == 0:
                out.append(("-" if c < 0 else "") + txt)
            else:
                out.append((" - " if c < 0 else " + ") + txt)
        return "".join(out)

    def __str__(self) -> str:
        return self.render()


def value_range(expr: Aff, var: str, period: int, stride: int = 1, env: Mapping[str, int] | None = None):
    """(min, max, step) of ``expr`` as ``var`` sweeps one period on a stride lattice."""
    env = dict(env or {})
    values = set()
    for v in range(0, period, stride):
        env[var] = v
        values.add(int(expr.evaluate(env)))
    vs = sorted(values)
    step = 0
    for a, b in zip(vs, vs[1:]):
        step = gcd(step, b - a)
    return vs[0], vs[-1], step or 1


def divisors_of(expr: Aff) -> list[int]:
    out = []
    for f, _ in expr.floors:
        out.append(f.divisor)
        out.extend(divisors_of(f.inner))
    return out


def lcm_all(values: Iterable[int]) -> int:
    r = 1
    for v in values:
        r = r * v // gcd(r, v)
    return r
