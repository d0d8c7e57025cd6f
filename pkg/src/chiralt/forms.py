"""Exact exterior calculus on a coordinate patch.

Forms have rational coefficients, polynomial dependence on the base
coordinates, an exterior word in dx^1..dx^m, and an integer circle-phase
index n (a factor e^{n theta} on the total space).  Everything is exact;
equality is literal equality of canonical term dictionaries.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Iterable, Iterator, Mapping, Sequence, Tuple, Union

Scalar = Union[int, Fraction]

# term key: (exponents, dx indices strictly increasing, phase)
Key = Tuple[Tuple[int, ...], Tuple[int, ...], int]


class BasePatch:
    """A coordinate patch: base coordinate names, optionally a circle factor."""

    def __init__(self, coords: Sequence[str], circle: bool = False):
        coords = tuple(coords)
        if not coords:
            raise ValueError("patch needs at least one coordinate")
        if len(set(coords)) != len(coords):
            raise ValueError("coordinate names must be distinct")
        self.coords = coords
        self.dim = len(coords)
        self.circle = circle

    def coord_index(self, name: str) -> int:
        try:
            return self.coords.index(name)
        except ValueError:
            raise KeyError(f"unknown coordinate {name!r}") from None

    def __repr__(self):
        extra = " x T" if self.circle else ""
        return f"BasePatch({', '.join(self.coords)}{extra})"


def _merge_dx(a: Tuple[int, ...], b: Tuple[int, ...]):
    """Merge two strictly increasing dx words; return (sign, merged) or None."""
    if not a:
        return 1, b
    if not b:
        return 1, a
    out = []
    i = j = 0
    sign = 1
    while i < len(a) and j < len(b):
        if a[i] == b[j]:
            return None
        if a[i] < b[j]:
            out.append(a[i])
            i += 1
        else:
            # b[j] jumps over the remaining len(a)-i letters of a
            if (len(a) - i) % 2:
                sign = -sign
            out.append(b[j])
            j += 1
    out.extend(a[i:])
    out.extend(b[j:])
    return sign, tuple(out)


class Form:
    """A differential form with polynomial coefficients and phase indices.

    Immutable.  The zero form has an empty term dict.
    """

    __slots__ = ("dim", "_terms", "_key")

    def __init__(self, dim: int, terms: Mapping[Key, Fraction] | None = None):
        self.dim = dim
        t = {}
        if terms:
            for k, c in terms.items():
                c = Fraction(c)
                if c:
                    t[k] = c
        self._terms = t
        self._key = None

    # -- constructors -------------------------------------------------

    @staticmethod
    def zero(dim: int) -> "Form":
        return Form(dim)

    @staticmethod
    def const(dim: int, c: Scalar = 1) -> "Form":
        return Form(dim, {((0,) * dim, (), 0): Fraction(c)})

    @staticmethod
    def coord(dim: int, i: int) -> "Form":
        e = [0] * dim
        e[i] = 1
        return Form(dim, {(tuple(e), (), 0): Fraction(1)})

    @staticmethod
    def dx(dim: int, i: int) -> "Form":
        return Form(dim, {((0,) * dim, (i,), 0): Fraction(1)})

    @staticmethod
    def phase(dim: int, n: int) -> "Form":
        return Form(dim, {((0,) * dim, (), n): Fraction(1)})

    # -- basic structure ----------------------------------------------

    def terms(self) -> Iterator[Tuple[Key, Fraction]]:
        return iter(self._terms.items())

    def is_zero(self) -> bool:
        return not self._terms

    def key(self):
        """Canonical hashable key (used for caching)."""
        if self._key is None:
            self._key = tuple(sorted(self._terms.items()))
        return self._key

    def __eq__(self, other):
        return isinstance(other, Form) and self.dim == other.dim and self._terms == other._terms

    def __hash__(self):
        return hash((self.dim, self.key()))

    def __bool__(self):
        return bool(self._terms)

    # -- ring operations ----------------------------------------------

    def __add__(self, other: "Form") -> "Form":
        t = dict(self._terms)
        for k, c in other._terms.items():
            v = t.get(k, 0) + c
            if v:
                t[k] = v
            else:
                t.pop(k, None)
        return Form(self.dim, t)

    def __neg__(self) -> "Form":
        return Form(self.dim, {k: -c for k, c in self._terms.items()})

    def __sub__(self, other: "Form") -> "Form":
        return self + (-other)

    def scale(self, c: Scalar) -> "Form":
        c = Fraction(c)
        if not c:
            return Form(self.dim)
        return Form(self.dim, {k: v * c for k, v in self._terms.items()})

    def __rmul__(self, c):
        if isinstance(c, (int, Fraction)):
            return self.scale(c)
        return NotImplemented

    def wedge(self, other: "Form") -> "Form":
        """Exterior product; phase indices add."""
        out: dict = {}
        for (e1, w1, n1), c1 in self._terms.items():
            for (e2, w2, n2), c2 in other._terms.items():
                m = _merge_dx(w1, w2)
                if m is None:
                    continue
                sign, w = m
                e = tuple(a + b for a, b in zip(e1, e2))
                k = (e, w, n1 + n2)
                v = out.get(k, 0) + sign * c1 * c2
                if v:
                    out[k] = v
                else:
                    out.pop(k, None)
        return Form(self.dim, out)

    def __mul__(self, other):
        if isinstance(other, Form):
            return self.wedge(other)
        if isinstance(other, (int, Fraction)):
            return self.scale(other)
        return NotImplemented

    # -- gradings -------------------------------------------------------

    def form_degrees(self):
        return {len(w) for (_, w, _) in self._terms}

    def parity(self):
        """Z2 parity of the exterior degree; None if mixed."""
        ps = {len(w) % 2 for (_, w, _) in self._terms}
        if not ps:
            return 0
        if len(ps) > 1:
            return None
        return ps.pop()

    def phases(self):
        return {n for (_, _, n) in self._terms}

    def max_poly_degree(self) -> int:
        return max((sum(e) for (e, _, _) in self._terms), default=0)

    def is_scalar(self) -> bool:
        """True if a rational multiple of 1 (no coords, no dx, no phase)."""
        if not self._terms:
            return True
        if len(self._terms) != 1:
            return False
        (e, w, n), _ = next(iter(self._terms.items()))
        return not any(e) and not w and n == 0

    def scalar_value(self) -> Fraction:
        if not self._terms:
            return Fraction(0)
        return next(iter(self._terms.values()))

    def is_basic(self) -> bool:
        return all(n == 0 for (_, _, n) in self._terms)

    # -- calculus -------------------------------------------------------

    def partial(self, i: int) -> "Form":
        """Coefficient-wise d/dx^i (phases untouched)."""
        out = {}
        for (e, w, n), c in self._terms.items():
            if e[i] == 0:
                continue
            e2 = list(e)
            e2[i] -= 1
            k = (tuple(e2), w, n)
            v = out.get(k, 0) + c * e[i]
            if v:
                out[k] = v
            else:
                out.pop(k, None)
        return Form(self.dim, out)

    def phase_scaled(self) -> "Form":
        """Each term multiplied by its own phase index (the theta-derivative)."""
        return Form(self.dim, {k: c * k[2] for k, c in self._terms.items() if k[2]})

    def d(self) -> "Form":
        """Exterior derivative.  Defined for basic (phase-zero) forms only;
        the circle direction is handled at the state level."""
        if not self.is_basic():
            raise ValueError("d of a phase-carrying form is not a Form")
        out = Form(self.dim)
        for i in range(self.dim):
            out = out + Form.dx(self.dim, i).wedge(self.partial(i))
        return out

    def contract(self, i: int) -> "Form":
        """Interior product with d/dx^i."""
        out = {}
        for (e, w, n), c in self._terms.items():
            if i not in w:
                continue
            pos = w.index(i)
            w2 = w[:pos] + w[pos + 1:]
            sign = -1 if pos % 2 else 1
            k = (e, w2, n)
            v = out.get(k, 0) + sign * c
            if v:
                out[k] = v
            else:
                out.pop(k, None)
        return Form(self.dim, out)

    def phase_split(self):
        """Split into {n: basic form}, factoring out each phase."""
        parts: dict = {}
        for (e, w, n), c in self._terms.items():
            parts.setdefault(n, {})[(e, w, 0)] = c
        return {n: Form(self.dim, t) for n, t in parts.items()}

    def phase_reflect(self) -> "Form":
        """Negate every phase index (sector n goes to sector -n)."""
        return Form(self.dim, {(e, w, -n): c for (e, w, n), c in self._terms.items()})

    # -- printing -------------------------------------------------------

    def render(self, coords: Sequence[str]) -> str:
        if not self._terms:
            return "0"
        bits = []
        for (e, w, n), c in sorted(self._terms.items()):
            factors = []
            if c != 1 or (not any(e) and not w and n == 0):
                factors.append(str(c))
            for i, p in enumerate(e):
                if p == 1:
                    factors.append(coords[i])
                elif p > 1:
                    factors.append(f"{coords[i]}^{p}")
            for i in w:
                factors.append(f"d{coords[i]}")
            if n:
                factors.append(f"ph({n})")
            bits.append("*".join(factors) if factors else "1")
        return " + ".join(bits).replace("+ -", "- ")

    def __repr__(self):
        return f"Form<{self.render([f'x{i+1}' for i in range(self.dim)])}>"


class VectorField:
    """Polynomial vector field: horizontal components plus a vertical one.

    Components are 0-forms without phase.  Contraction with dx^i gives the
    i-th component; contraction with a connection form gives the vertical
    component.
    """

    __slots__ = ("dim", "components", "vertical")

    def __init__(self, dim: int, components: Sequence[Form], vertical: Form | None = None):
        if len(components) != dim:
            raise ValueError("one component per base coordinate")
        for f in list(components) + ([vertical] if vertical is not None else []):
            if f.form_degrees() - {0}:
                raise ValueError("vector field components must be 0-forms")
            if not f.is_basic():
                raise ValueError("vector field components must be phase-free")
        self.dim = dim
        self.components = tuple(components)
        self.vertical = vertical if vertical is not None else Form.zero(dim)

    @staticmethod
    def coordinate(dim: int, i: int) -> "VectorField":
        comps = [Form.zero(dim)] * dim
        comps[i] = Form.const(dim)
        return VectorField(dim, comps)

    @staticmethod
    def vertical_unit(dim: int) -> "VectorField":
        return VectorField(dim, [Form.zero(dim)] * dim, Form.const(dim))

    def __add__(self, other):
        return VectorField(
            self.dim,
            [a + b for a, b in zip(self.components, other.components)],
            self.vertical + other.vertical,
        )

    def __sub__(self, other):
        return self + other.scale(-1)

    def scale(self, c: Scalar):
        return VectorField(self.dim, [f.scale(c) for f in self.components], self.vertical.scale(c))

    def mul(self, g: Form):
        return VectorField(self.dim, [g.wedge(f) for f in self.components], g.wedge(self.vertical))

    def __eq__(self, other):
        return (
            isinstance(other, VectorField)
            and self.components == other.components
            and self.vertical == other.vertical
        )

    def is_zero(self):
        return all(f.is_zero() for f in self.components) and self.vertical.is_zero()

    def apply(self, f: Form) -> Form:
        """Derivative of a function/form coefficient-wise: sum_i X^i d/dx^i
        plus the vertical component acting as the theta-derivative (phase)."""
        out = Form.zero(self.dim)
        for i, c in enumerate(self.components):
            if c:
                out = out + c.wedge(f.partial(i))
        if self.vertical:
            out = out + self.vertical.wedge(f.phase_scaled())
        return out


def d(w: Form) -> Form:
    return w.d()


def wedge(a: Form, b: Form) -> Form:
    return a.wedge(b)


def contract(X: VectorField, w: Form) -> Form:
    """Interior product; the vertical part of X sees no dx, so only the
    horizontal components act on plain forms."""
    out = Form.zero(w.dim)
    for i, c in enumerate(X.components):
        if c:
            out = out + c.wedge(w.contract(i))
    return out


def lie(X: VectorField, w: Form) -> Form:
    """Lie derivative, computed term by term (independent of the Cartan
    identity, which the tests check against d and contract)."""
    dim = w.dim
    out = Form.zero(dim)
    for (e, wd, n), c in w.terms():
        base = Form(dim, {(e, (), n): c})
        # X acting on the coefficient (including phase via the vertical part)
        lead = X.apply(base)
        dxw = Form(dim, {((0,) * dim, wd, 0): Fraction(1)})
        out = out + lead.wedge(dxw)
        # Leibniz over the dx factors: dx^i -> d(X^i) in place, no sign
        for pos, i in enumerate(wd):
            dXi = X.components[i].d()
            pre = Form(dim, {((0,) * dim, wd[:pos], 0): Fraction(1)})
            post = Form(dim, {((0,) * dim, wd[pos + 1:], 0): Fraction(1)})
            out = out + base.wedge(pre).wedge(dXi).wedge(post)
    return out


def bracket(X: VectorField, Y: VectorField) -> VectorField:
    comps = [X.apply(Yc) - Y.apply(Xc) for Xc, Yc in zip(X.components, Y.components)]
    vert = X.apply(Y.vertical) - Y.apply(X.vertical)
    return VectorField(X.dim, comps, vert)


def contract2(w: Form, i: int, j: int) -> Form:
    """iota_{d/dx^i} iota_{d/dx^j} w."""
    return w.contract(j).contract(i)
