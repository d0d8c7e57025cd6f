"""Vertex-superalgebra engine over a presented OPE table.

States are finite sums  coefficient * :d^{k1}g1 (d^{k2}g2 (... d^{km}gm)):
with Form coefficients and right-nested normally ordered words.  The word
letters are drawn from a fixed generator set; the canonical form keeps the
whole coefficient leftmost and the letters sorted by (class, index,
derivative count), with Koszul signs and Wick corrections inserted by the
reordering rules.  All products a_(k)b route through:

  * the stored singular parts for ordered generator pairs,
  * pole-one contraction rules of generators against coefficient forms,
  * skew-symmetry        a_(n)b = (-1)^{|a||b|} sum_j (-1)^{n+j+1} d^j(b_(n+j)a)/j!,
  * the non-commutative Wick formula
        a_(n)(:xY:) = sum_{j<=n} C(n,j) (a_(j)x)_(n-j-1)Y + (-1)^{|a||x|} :x(a_(n)Y):,
  * mode expansion of a composite acting on a state
        (:xY:)_(n)c = sum_{j<=-1} x_(j)(Y_(n-1-j)c)
                      + (-1)^{|x||Y|} sum_{j>=0} Y_(n-1-j)(x_(j)c),
  * quasi-associativity
        (:xY:)_(-1)c = :x(:Yc:): + sum_{i>=0} [ x_(-2-i)(Y_(i)c)
                      + (-1)^{|x||Y|} Y_(-2-i)(x_(i)c) ],
  * quasi-commutativity for adjacent word factors
        :u(vB): = (-1)^{|u||v|} :v(uB): + sum_j (-1)^j (u_(j)v)_(-2-j)B.

Nothing is ever truncated: coefficients are exact rationals and two states
are equal in the algebra iff their canonical dictionaries coincide.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from math import comb, factorial
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

from .forms import Form

Word = Tuple[Tuple[int, int], ...]
Factor = Union[Form, Tuple[int, int]]


class EngineError(Exception):
    """Base class for engine failures."""


class UnknownPairError(EngineError):
    """A generator pair is missing from the OPE table."""


class CapExceededError(EngineError):
    """A computation produced a term beyond the configured caps."""


@dataclass(frozen=True)
class Gen:
    gid: int
    name: str
    cls: int
    idx: int
    parity: int
    weight: int
    degree: int
    min_deriv: int = 0
    formlike: Optional[Form] = None

    @property
    def sort_key(self):
        return (self.cls, self.idx)


@dataclass
class Caps:
    weight: int = 60
    fourier: int = 30
    poly: int = 200


class State:
    """Immutable canonical element of an Algebra."""

    __slots__ = ("alg", "_terms", "_key")

    def __init__(self, alg: "Algebra", terms: Dict[Word, Form]):
        self.alg = alg
        self._terms = terms
        self._key = None

    def terms(self):
        return self._terms.items()

    def is_zero(self):
        return not self._terms

    def __bool__(self):
        return bool(self._terms)

    def key(self):
        if self._key is None:
            self._key = tuple(sorted((w, f.key()) for w, f in self._terms.items()))
        return self._key

    def __eq__(self, other):
        return isinstance(other, State) and self.alg is other.alg and self._terms == other._terms

    def __hash__(self):
        return hash(self.key())

    def __add__(self, other: "State") -> "State":
        t = dict(self._terms)
        for w, f in other._terms.items():
            g = t.get(w)
            g = f if g is None else g + f
            if g:
                t[w] = g
            else:
                t.pop(w, None)
        return State(self.alg, t)

    def __neg__(self):
        return self.scale(-1)

    def __sub__(self, other):
        return self + other.scale(-1)

    def scale(self, c) -> "State":
        c = Fraction(c)
        if not c:
            return State(self.alg, {})
        return State(self.alg, {w: f.scale(c) for w, f in self._terms.items()})

    def __rmul__(self, c):
        if isinstance(c, (int, Fraction)):
            return self.scale(c)
        return NotImplemented

    def parity(self):
        """Z2 parity; None if inhomogeneous."""
        ps = set()
        for w, f in self._terms.items():
            fp = f.parity()
            if fp is None:
                return None
            ps.add((fp + sum(self.alg.gens[g].parity for g, _ in w)) % 2)
        if not ps:
            return 0
        return ps.pop() if len(ps) == 1 else None

    def weight_bound(self):
        """Maximum term weight (letter weights plus derivative counts)."""
        alg = self.alg
        return max(
            (sum(alg.gens[g].weight + d for g, d in w) for w in self._terms), default=0
        )

    def weights(self):
        alg = self.alg
        return {sum(alg.gens[g].weight + d for g, d in w) for w in self._terms}

    def degree(self):
        """J0-style integer degree; None if inhomogeneous."""
        out = set()
        for w, f in self._terms.items():
            degs = {len(k[1]) for k, _ in f.terms()}
            if len(degs) != 1:
                return None
            out.add(degs.pop() + sum(self.alg.gens[g].degree for g, _ in w))
        if not out:
            return 0
        return out.pop() if len(out) == 1 else None

    def phases(self):
        ns = set()
        for _, f in self._terms.items():
            ns |= f.phases()
        return ns

    def phase_select(self, n: int) -> "State":
        t = {}
        for w, f in self._terms.items():
            part = Form(f.dim, {k: c for k, c in f.terms() if k[2] == n})
            if part:
                t[w] = part
        return State(self.alg, t)

    def render(self) -> str:
        return self.alg.render_state(self)

    def __repr__(self):
        return f"State<{self.render()}>"


class Algebra:
    """A vertex superalgebra presented by generators and an OPE table."""

    def __init__(self, patch, caps: Caps | None = None, name: str = "",
                 strict_pairs: bool = True):
        self.patch = patch
        self.dim = patch.dim
        self.caps = caps or Caps()
        self.name = name
        self.strict_pairs = strict_pairs
        self.gens: List[Gen] = []
        self.by_name: Dict[str, int] = {}
        self.table: Dict[Tuple[int, int], Dict[int, State]] = {}
        self.form_rules: Dict[int, Callable[[Form], "State"]] = {}
        self.phase_rule: Optional[Callable[[int], "State"]] = None
        self.coord_gids: List[int] = []
        self.dcoord_gids: List[int] = []
        self.clear_caches()

    def clear_caches(self):
        self._c_single: Dict = {}
        self._c_formope: Dict = {}
        self._c_insert: Dict = {}
        self._c_pos: Dict = {}
        self._c_nprod: Dict = {}
        self._c_trans: Dict = {}
        self._c_transform: Dict = {}

    # -- construction ---------------------------------------------------

    def add_gen(self, name, cls, idx, parity, weight, degree,
                min_deriv=0, formlike=None) -> int:
        gid = len(self.gens)
        self.gens.append(Gen(gid, name, cls, idx, parity, weight, degree,
                             min_deriv, formlike))
        self.by_name[name] = gid
        return gid

    def declare(self, g: int, h: int, poles: Dict[int, "State"]):
        """Singular part of g(z)h(w): pole p maps to the state at (z-w)^-p."""
        self.table[(g, h)] = {p: s for p, s in poles.items() if s}

    def set_form_rule(self, gid: int, fn):
        self.form_rules[gid] = fn

    # -- state constructors ----------------------------------------------

    def zero(self) -> State:
        return State(self, {})

    def vacuum(self, c=1) -> State:
        return self.form_state(Form.const(self.dim, c))

    def form_state(self, f: Form) -> State:
        if not f:
            return self.zero()
        self._cap_check((), f)
        return State(self, {(): f})

    def gen_state(self, gid: int, d: int = 0) -> State:
        g = self.gens[gid]
        if d < g.min_deriv:
            if g.formlike is None:
                raise EngineError(f"{g.name} needs at least {g.min_deriv} derivatives")
            return self.translate_state(self.form_state(g.formlike), d)
        w = ((gid, d),)
        self._cap_check(w, None)
        return State(self, {w: Form.const(self.dim)})

    def named(self, name: str, d: int = 0) -> State:
        return self.gen_state(self.by_name[name], d)

    def term_state(self, f: Form, word: Word) -> State:
        if not f:
            return self.zero()
        if not self._word_canonical(word):
            raise EngineError(f"word {word} is not canonical")
        self._cap_check(word, f)
        return State(self, {word: f})

    def sum(self, states: Iterable[State]) -> State:
        out = self.zero()
        for s in states:
            out = out + s
        return out

    # -- bookkeeping -------------------------------------------------------

    def word_weight(self, w: Word) -> int:
        return sum(self.gens[g].weight + d for g, d in w)

    def word_parity(self, w: Word) -> int:
        return sum(self.gens[g].parity for g, _ in w) % 2

    def _word_canonical(self, w: Word) -> bool:
        for (g1, d1), (g2, d2) in zip(w, w[1:]):
            k1 = (*self.gens[g1].sort_key, d1)
            k2 = (*self.gens[g2].sort_key, d2)
            if k1 > k2:
                return False
            if k1 == k2 and self.gens[g1].parity:
                return False
        return True

    def _cap_check(self, word: Word, f: Optional[Form]):
        if self.word_weight(word) > self.caps.weight:
            raise CapExceededError(f"weight cap {self.caps.weight} exceeded")
        if f is not None:
            if f.max_poly_degree() > self.caps.poly:
                raise CapExceededError(f"polynomial cap {self.caps.poly} exceeded")
            for n in f.phases():
                if abs(n) > self.caps.fourier:
                    raise CapExceededError(f"Fourier cap {self.caps.fourier} exceeded")

    def _factor_parity(self, x: Factor) -> int:
        if isinstance(x, Form):
            p = x.parity()
            if p is None:
                raise EngineError("factor form must be parity-homogeneous")
            return p
        return self.gens[x[0]].parity

    def _factor_weight(self, x: Factor) -> int:
        if isinstance(x, Form):
            return 0
        g, d = x
        return self.gens[g].weight + d

    def _factor_state(self, x: Factor) -> State:
        if isinstance(x, Form):
            return self.form_state(x)
        return self.gen_state(*x)

    def _term_factors(self, f: Form, w: Word):
        """(scalar, [factors]) with the coefficient as head factor unless scalar."""
        if f.is_scalar():
            return f.scalar_value(), [ (g, d) for g, d in w ]
        return Fraction(1), [f] + [(g, d) for g, d in w]

    @staticmethod
    def _homog(f: Form):
        """Split a form into parity-homogeneous parts."""
        ev = {k: c for k, c in f.terms() if len(k[1]) % 2 == 0}
        od = {k: c for k, c in f.terms() if len(k[1]) % 2 == 1}
        out = []
        if ev:
            out.append(Form(f.dim, ev))
        if od:
            out.append(Form(f.dim, od))
        return out

    def homog_terms(self, s: State):
        for w, f in s.terms():
            for part in self._homog(f):
                yield part, w

    def _pole_bound(self, wa: int, wb: int) -> int:
        return wa + wb + 1

    # -- single-factor products --------------------------------------------

    def letter_form_ope(self, gid: int, f: Form, n: int) -> State:
        if n != 0:
            return self.zero()
        rule = self.form_rules.get(gid)
        if rule is None:
            return self.zero()
        key = (gid, f.key())
        hit = self._c_formope.get(key)
        if hit is None:
            hit = rule(f)
            self._c_formope[key] = hit
        return hit

    def _flip(self, b: Factor, a: Factor, n: int) -> State:
        """a_(n)b computed by skew-symmetry from b_(m)a products (m >= n)."""
        pa, pb = self._factor_parity(a), self._factor_parity(b)
        sgn0 = -1 if pa and pb else 1
        bound = self._pole_bound(self._factor_weight(a), self._factor_weight(b))
        out = self.zero()
        for j in range(0, bound - n + 1):
            inner = self.single_prod(b, a, n + j)
            if not inner:
                continue
            c = Fraction(sgn0 * (-1) ** ((n + j + 1) % 2), factorial(j))
            out = out + self.translate_state(inner, j).scale(c)
        return out

    def _flip_pair(self, h: int, g: int, n: int) -> State:
        """g_(n)h from the stored (h, g) entry, by skew-symmetry."""
        gh, gg = self.gens[h], self.gens[g]
        sgn0 = -1 if gh.parity and gg.parity else 1
        bound = self._pole_bound(gg.weight, gh.weight)
        out = self.zero()
        entry = self.table[(h, g)]
        for j in range(0, bound - n + 1):
            inner = entry.get(n + j + 1)
            if not inner:
                continue
            c = Fraction(sgn0 * (-1) ** ((n + j + 1) % 2), factorial(j))
            out = out + self.translate_state(inner, j).scale(c)
        return out

    def single_prod(self, a: Factor, b: Factor, n: int) -> State:
        """Product a_(n)b of two single factors (letters with derivatives or
        parity-homogeneous forms)."""
        key = (
            a if isinstance(a, tuple) else ("f", a.key()),
            b if isinstance(b, tuple) else ("f", b.key()),
            n,
        )
        hit = self._c_single.get(key)
        if hit is not None:
            return hit
        out = self._single_prod_raw(a, b, n)
        self._c_single[key] = out
        return out

    def _single_prod_raw(self, a: Factor, b: Factor, n: int) -> State:
        if isinstance(a, tuple) and a[1] > 0:
            # (da)_(n)b = -n a_(n-1)b
            if n == 0:
                return self.zero()
            inner = self.single_prod((a[0], a[1] - 1), b, n - 1)
            return inner.scale(-n)
        if isinstance(b, tuple) and b[1] > 0:
            down = (b[0], b[1] - 1)
            inner = self.single_prod(a, down, n)
            out = self.translate_state(inner)
            if n:
                out = out + self.single_prod(a, down, n - 1).scale(n)
            return out
        # base factors
        if n < 0:
            d = -n - 1
            left = self._factor_state(a)
            if d:
                left = self.translate_state(left, d).scale(Fraction(1, factorial(d)))
            return self.nprod(left, self._factor_state(b))
        # replace formlike letters at derivative zero by their forms
        if isinstance(a, tuple) and self.gens[a[0]].formlike is not None:
            a = self.gens[a[0]].formlike
        if isinstance(b, tuple) and self.gens[b[0]].formlike is not None:
            b = self.gens[b[0]].formlike
        if isinstance(a, Form) and isinstance(b, Form):
            return self.zero()
        if isinstance(a, tuple) and isinstance(b, Form):
            return self.letter_form_ope(a[0], b, n)
        if isinstance(a, Form):
            return self._flip(b, a, n)
        g, h = a[0], b[0]
        entry = self.table.get((g, h))
        if entry is not None:
            return entry.get(n + 1, self.zero())
        if (h, g) in self.table:
            return self._flip_pair(h, g, n)
        if self.strict_pairs:
            raise UnknownPairError(
                f"no OPE declared for ({self.gens[g].name}, {self.gens[h].name})")
        return self.zero()

    # -- canonical insertion -------------------------------------------------

    def _creation_apply(self, x: Factor, j: int, s: State) -> State:
        """x_(j)s for j <= -1."""
        if j == -1:
            return self.prepend_factor(x, s)
        d = -j - 1
        xs = self.translate_state(self._factor_state(x), d).scale(Fraction(1, factorial(d)))
        return self.nprod(xs, s)

    def insert_letter(self, x: Tuple[int, int], w: Word) -> State:
        """Canonical form of :x(w...): for a letter factor x and canonical w."""
        key = (x, w)
        hit = self._c_insert.get(key)
        if hit is not None:
            return hit
        out = self._insert_letter_raw(x, w)
        self._c_insert[key] = out
        return out

    def _insert_letter_raw(self, x, w: Word) -> State:
        g, d = x
        gen = self.gens[g]
        if d < gen.min_deriv:
            if gen.formlike is None:
                raise EngineError(f"virtual letter {gen.name}@{d} in a word")
            # the letter at this derivative is really a coefficient form
            wstate = State(self, {w: Form.const(self.dim)})
            if d == 0:
                return self.prepend_factor(gen.formlike, wstate)
            return self.nprod(
                self.translate_state(self.form_state(gen.formlike), d), wstate)
        if not w:
            word = ((g, d),)
            self._cap_check(word, None)
            return State(self, {word: Form.const(self.dim)})
        y = w[0]
        rest = w[1:]
        kx = (*gen.sort_key, d)
        gy = self.gens[y[0]]
        ky = (*gy.sort_key, y[1])
        if kx < ky or (kx == ky and not gen.parity):
            word = ((g, d),) + w
            self._cap_check(word, None)
            return State(self, {word: Form.const(self.dim)})
        rest_state = State(self, {rest: Form.const(self.dim)})
        if kx == ky:
            # equal odd letters: 2:x(xB): = sum_j (-1)^j (x_(j)x)_(-2-j)B
            out = self.zero()
            bound = self._pole_bound(self._factor_weight(x), self._factor_weight(x))
            for j in range(0, bound + 1):
                c = self.single_prod(x, x, j)
                if not c:
                    continue
                piece = self._neg_mode(c, j, rest_state)
                out = out + piece.scale(Fraction((-1) ** (j % 2), 2))
            return out
        # swap x past y
        sgn = -1 if gen.parity and gy.parity else 1
        out = self.prepend_factor(y, self.insert_letter(x, rest)).scale(sgn)
        bound = self._pole_bound(self._factor_weight(x), self._factor_weight(y))
        for j in range(0, bound + 1):
            c = self.single_prod(x, y, j)
            if not c:
                continue
            out = out + self._neg_mode(c, j, rest_state).scale((-1) ** (j % 2))
        return out

    def _neg_mode(self, cstate: State, j: int, s: State) -> State:
        """(c)_(-2-j)(s) = :(d^{j+1}c)s:/(j+1)!"""
        return self.nprod(
            self.translate_state(cstate, j + 1), s
        ).scale(Fraction(1, factorial(j + 1)))

    def prepend_factor(self, x: Factor, s: State) -> State:
        """Canonical form of :x(s): for a single factor x."""
        if isinstance(x, Form):
            out = self.zero()
            for xp in self._homog(x):
                for w, f in s.terms():
                    for fp in self._homog(f):
                        out = out + self._prepend_form_term(xp, fp, w)
            return out
        out = self.zero()
        for w, f in s.terms():
            for fp in self._homog(f):
                out = out + self._prepend_letter_term(x, fp, w)
        return out

    def _prepend_form_term(self, x: Form, psi: Form, w: Word) -> State:
        # :x(:psi(w):): = :(x^psi)(w): - sum_i [ x_(-2-i)(psi_(i)W)
        #                + (-1)^{|x||psi|} psi_(-2-i)(x_(i)W) ]
        merged = x.wedge(psi)
        out = self.zero()
        if merged:
            self._cap_check(w, merged)
            out = State(self, {w: merged})
        if not w:
            return out
        Wstate = State(self, {w: Form.const(self.dim)})
        ww = self.word_weight(w)
        sgn = -1 if (x.parity() and psi.parity()) else 1
        for i in range(0, self._pole_bound(0, ww) + 1):
            s1 = self.pos_prod(self.form_state(psi), Wstate, i)
            if s1:
                out = out - self._neg_mode(self.form_state(x), i, s1)
            s2 = self.pos_prod(self.form_state(x), Wstate, i)
            if s2:
                out = out - self._neg_mode(self.form_state(psi), i, s2).scale(sgn)
        return out

    def _prepend_letter_term(self, x: Tuple[int, int], psi: Form, w: Word) -> State:
        # :x(:psi(w):): swap the letter past the coefficient, then insert
        if psi.is_scalar():
            return self.insert_letter(x, w).scale(psi.scalar_value())
        gen = self.gens[x[0]]
        sgn = -1 if (gen.parity and psi.parity()) else 1
        out = self.prepend_factor(psi, self.insert_letter(x, w)).scale(sgn)
        rest_state = State(self, {w: Form.const(self.dim)})
        for j in range(0, x[1] + 2):
            c = self.single_prod(x, psi, j)
            if not c:
                continue
            out = out + self._neg_mode(c, j, rest_state).scale((-1) ** (j % 2))
        return out

    def normalize_factors(self, factors: Sequence[Factor], scalar=1) -> State:
        out = self.vacuum()
        for x in reversed(list(factors)):
            out = self.prepend_factor(x, out)
        return out.scale(scalar) if scalar != 1 else out

    def normalize(self, s: State) -> State:
        out = self.zero()
        for f, w in self.homog_terms(s):
            sc, factors = self._term_factors(f, w)
            out = out + self.normalize_factors(factors, sc)
        return out

    # -- translation -----------------------------------------------------

    def translate_form(self, f: Form) -> State:
        """d/dz of a coefficient form, as a state (chain rule into word
        letters; phase sectors via the algebra's phase rule)."""
        key = f.key()
        hit = self._c_transform.get(key)
        if hit is not None:
            return hit
        dim = self.dim
        out = self.zero()
        for (e, dxw, n), c in f.terms():
            # polynomial part
            for i in range(dim):
                if not e[i]:
                    continue
                e2 = list(e)
                e2[i] -= 1
                coeff = Form(dim, {(tuple(e2), dxw, n): c * e[i]})
                out = out + self.term_state(coeff, ((self.coord_gid(i), 1),))
            # exterior part: d(dx^i) exits the wedge word with a Koszul sign
            for pos, i in enumerate(dxw):
                w2 = dxw[:pos] + dxw[pos + 1:]
                sgn = (-1) ** ((len(dxw) - 1 - pos) % 2)
                coeff = Form(dim, {(e, w2, n): c * sgn})
                out = out + self.term_state(coeff, ((self.dcoord_gid(i), 1),))
            # phase part
            if n:
                if self.phase_rule is None:
                    raise EngineError("algebra has no phase derivative rule")
                base = Form(dim, {(e, dxw, 0): c})
                out = out + self.prepend_factor(base, self.phase_rule(n))
        self._c_transform[key] = out
        return out

    def coord_gid(self, i: int) -> int:
        return self.coord_gids[i]

    def dcoord_gid(self, i: int) -> int:
        return self.dcoord_gids[i]

    def translate_state(self, s: State, times: int = 1) -> State:
        for _ in range(times):
            out = self.zero()
            for w, f in s.terms():
                out = out + self._translate_term(f, w)
            s = out
        return s

    def _translate_term(self, f: Form, w: Word) -> State:
        key = (f.key(), w)
        hit = self._c_trans.get(key)
        if hit is not None:
            return hit
        out = self.nprod(self.translate_form(f), State(self, {w: Form.const(self.dim)}))
        for pos, (g, d) in enumerate(w):
            bumped = w[:pos] + ((g, d + 1),) + w[pos + 1:]
            if self._word_canonical(bumped):
                out = out + self.term_state(f, bumped)
            else:
                sc, factors = self._term_factors(f, bumped)
                out = out + self.normalize_factors(factors, sc)
        self._c_trans[key] = out
        return out

    # -- products ----------------------------------------------------------

    def product(self, a: State, b: State, k: int) -> State:
        """The k-th product a_(k)b."""
        if k >= 0:
            return self.pos_prod(a, b, k)
        if k == -1:
            return self.nprod(a, b)
        d = -k - 1
        return self.nprod(
            self.translate_state(a, d).scale(Fraction(1, factorial(d))), b)

    def nprod(self, a: State, b: State) -> State:
        out = self.zero()
        for fa, wa in self.homog_terms(a):
            for fb, wb in self.homog_terms(b):
                out = out + self._nprod_term(fa, wa, fb, wb)
        return out

    def _nprod_term(self, fa: Form, wa: Word, fb: Form, wb: Word) -> State:
        key = (fa.key(), wa, fb.key(), wb)
        hit = self._c_nprod.get(key)
        if hit is not None:
            return hit
        out = self._nprod_term_raw(fa, wa, fb, wb)
        self._c_nprod[key] = out
        return out

    def _nprod_term_raw(self, fa, wa, fb, wb) -> State:
        bstate = State(self, {wb: fb})
        sc, factors = self._term_factors(fa, wa)
        if not factors:
            return bstate.scale(sc)
        if len(factors) == 1:
            return self.prepend_factor(factors[0], bstate).scale(sc)
        # the tail of a canonical term is itself canonical
        x = factors[0]
        yfactors = factors[1:]
        yword = wa if isinstance(x, Form) else wa[1:]
        ystate = State(self, {yword: Form.const(self.dim)})
        # quasi-associativity: (:xY:)_(-1)b
        out = self.prepend_factor(x, self.nprod(ystate, bstate))
        px = self._factor_parity(x)
        py = (self.word_parity(wa) + (fa.parity() or 0) + px) % 2
        sgn = -1 if px and py else 1
        wY = sum(self._factor_weight(t) for t in yfactors)
        wb_ = self.word_weight(wb)
        for i in range(0, self._pole_bound(wY, wb_) + 1):
            s1 = self.pos_prod(ystate, bstate, i)
            if s1:
                out = out + self._neg_mode(self._factor_state(x), i, s1)
        for i in range(0, self._pole_bound(self._factor_weight(x), wb_) + 1):
            s2 = self.pos_prod(self._factor_state(x), bstate, i)
            if s2:
                out = out + self._neg_mode(ystate, i, s2).scale(sgn)
        return out.scale(sc)

    def pos_prod(self, a: State, b: State, k: int) -> State:
        if k < 0:
            raise EngineError("pos_prod needs k >= 0")
        out = self.zero()
        for fa, wa in self.homog_terms(a):
            for fb, wb in self.homog_terms(b):
                out = out + self._pos_term(fa, wa, fb, wb, k)
        return out

    def _pos_term(self, fa, wa, fb, wb, k) -> State:
        key = (fa.key(), wa, fb.key(), wb, k)
        hit = self._c_pos.get(key)
        if hit is not None:
            return hit
        out = self._pos_term_raw(fa, wa, fb, wb, k)
        self._c_pos[key] = out
        return out

    def _pos_term_raw(self, fa, wa, fb, wb, k) -> State:
        sa, factors_a = self._term_factors(fa, wa)
        sb, factors_b = self._term_factors(fb, wb)
        if not factors_a or not factors_b:
            return self.zero()
        # the right term (fb, wb) is always passed intact below, so only the
        # left scalar is factored out here
        scale = sa
        if len(factors_a) == 1:
            x = factors_a[0]
            if isinstance(x, Form):
                if len(factors_b) == 1 and isinstance(factors_b[0], Form):
                    return self.zero()
                return self._flip_term(x, fb, wb, k).scale(scale)
            return self._wick_right(x, fb, wb, k).scale(scale)
        # composite left: mode expansion of (:x Y:)_(k) acting on b
        x = factors_a[0]
        yfactors = factors_a[1:]
        yword = wa if isinstance(x, Form) else wa[1:]
        ystate = State(self, {yword: Form.const(self.dim)})
        bterm = State(self, {wb: fb})
        px = self._factor_parity(x)
        py = sum(self._factor_parity(t) for t in yfactors) % 2
        sgn = -1 if px and py else 1
        wY = sum(self._factor_weight(t) for t in yfactors)
        wx = self._factor_weight(x)
        wb_ = self.word_weight(wb)
        out = self.zero()
        for q in range(k, self._pole_bound(wY, wb_) + 1):
            inner = self.pos_prod(ystate, bterm, q)
            if not inner:
                continue
            out = out + self._creation_apply(x, k - 1 - q, inner)
        for j in range(0, self._pole_bound(wx, wb_) + 1):
            inner = self.pos_prod(self._factor_state(x), bterm, j)
            if not inner:
                continue
            out = out + self.product(ystate, inner, k - 1 - j).scale(sgn)
        return out.scale(scale)

    def _flip_term(self, x: Form, fb, wb, k) -> State:
        """x_(k)(b-term) for a pure form x, by skew-symmetry."""
        px = x.parity()
        pb = (self.word_parity(wb) + (fb.parity() or 0)) % 2
        sgn0 = -1 if px and pb else 1
        bound = self._pole_bound(0, self.word_weight(wb))
        xstate = self.form_state(x)
        out = self.zero()
        for j in range(0, bound - k + 1):
            inner = self.pos_prod(State(self, {wb: fb}), xstate, k + j)
            if not inner:
                continue
            c = Fraction(sgn0 * (-1) ** ((k + j + 1) % 2), factorial(j))
            out = out + self.translate_state(inner, j).scale(c)
        return out

    def _wick_right(self, a: Tuple[int, int], fb, wb, k) -> State:
        """Letter a at product index k against a term, by the Wick formula."""
        sc, factors_b = self._term_factors(fb, wb)
        if len(factors_b) == 1:
            return self.single_prod(a, factors_b[0], k).scale(sc)
        x = factors_b[0]
        if isinstance(x, Form):
            ystate = State(self, {wb: Form.const(self.dim)})
        else:
            ystate = State(self, {wb[1:]: Form.const(self.dim)})
        pa = self.gens[a[0]].parity
        pxf = self._factor_parity(x)
        sgn = -1 if pa and pxf else 1
        out = self.zero()
        for j in range(0, k + 1):
            c = self.single_prod(a, x, j)
            if not c:
                continue
            out = out + self.product(c, ystate, k - j - 1).scale(comb(k, j))
        inner = self.pos_prod(self.gen_state(*a), ystate, k)
        if inner:
            out = out + self.prepend_factor(x, inner).scale(sgn)
        return out.scale(sc)

    # -- reports -----------------------------------------------------------

    def skew_check(self, a: Factor, b: Factor, window=4) -> Optional[str]:
        """Verify a_(n)b equals the skew-symmetry flip of b_(n)a."""
        for n in range(-2, window):
            direct = self.single_prod(a, b, n)
            flipped = self._flip(b, a, n) if n >= 0 else None
            if flipped is not None and direct != flipped:
                return f"skew mismatch at n={n}"
        return None

    def commutator_check(self, a: State, b: State, c: State,
                         m: int, n: int) -> bool:
        """Borcherds commutator identity
        a_(m)(b_(n)c) - (-1)^{|a||b|} b_(n)(a_(m)c)
            = sum_j C(m,j) (a_(j)b)_(m+n-j) c,   m >= 0."""
        pa, pb = a.parity(), b.parity()
        sgn = -1 if pa and pb else 1
        lhs = self.product(a, self.product(b, c, n), m) \
            - self.product(b, self.product(a, c, m), n).scale(sgn)
        rhs = self.zero()
        for j in range(0, m + 1):
            ab = self.product(a, b, j)
            if not ab:
                continue
            rhs = rhs + self.product(ab, c, m + n - j).scale(comb(m, j))
        return lhs == rhs

    def letter_states(self):
        """States of every letter that may stand alone in a word."""
        out = []
        for g in self.gens:
            if g.min_deriv == 0:
                out.append(self.gen_state(g.gid))
        return out

    def check_consistency(self, extra_samples=(), max_m=2, n_range=(-2, 2),
                          relations=(), pair_window=4):
        """Verify skew-symmetry, derivative covariance and the Borcherds
        commutator identity over the presented generators, and that every
        declared relation normalizes to zero.  Returns a list of
        (check name, ok, witness) triples sorted by name."""
        results = []
        letters = self.letter_states()
        samples = list(letters) + list(extra_samples)

        bad = None
        for a in samples:
            for b in samples:
                for n in range(0, pair_window):
                    direct = self.pos_prod(a, b, n)
                    pa, pb = a.parity(), b.parity()
                    sgn0 = -1 if pa and pb else 1
                    bound = a.weight_bound() + b.weight_bound() + 1
                    flip = self.zero()
                    for j in range(0, bound - n + 1):
                        inner = self.pos_prod(b, a, n + j)
                        if not inner:
                            continue
                        c = Fraction(sgn0 * (-1) ** ((n + j + 1) % 2),
                                     factorial(j))
                        flip = flip + self.translate_state(inner, j).scale(c)
                    if direct != flip:
                        bad = f"pair ({a.render()}, {b.render()}) at n={n}"
                        break
                if bad:
                    break
            if bad:
                break
        results.append(("skew_symmetry", bad is None, bad or ""))

        bad = None
        for a in samples:
            for b in samples:
                for n in range(n_range[0], n_range[1] + 1):
                    ab = self.product(a, b, n)
                    lhs = self.translate_state(ab)
                    rhs = self.product(self.translate_state(a), b, n) \
                        + self.product(a, self.translate_state(b), n)
                    if lhs != rhs:
                        bad = f"d({a.render()}_({n}){b.render()})"
                        break
                if bad:
                    break
            if bad:
                break
        results.append(("derivative_covariance", bad is None, bad or ""))

        bad = None
        for a in samples:
            for b in samples:
                for c in samples:
                    for m in range(0, max_m + 1):
                        for n in range(n_range[0], n_range[1] + 1):
                            if not self.commutator_check(a, b, c, m, n):
                                bad = (f"triple ({a.render()}, {b.render()}, "
                                       f"{c.render()}) at m={m}, n={n}")
                                break
                        if bad:
                            break
                    if bad:
                        break
                if bad:
                    break
            if bad:
                break
        results.append(("commutator_identity", bad is None, bad or ""))

        bad = None
        for name, st in relations:
            if not st.is_zero():
                bad = f"relation {name} = {st.render()}"
                break
        results.append(("relations_vanish", bad is None, bad or ""))
        return sorted(results)

    # -- homomorphisms -------------------------------------------------------

    def hom_to(self, dst: "Algebra", letter_images: Dict[int, "State"],
               form_map: Callable[[Form], Form]) -> "VertexHom":
        return VertexHom(self, dst, letter_images, form_map)

    # -- rendering -----------------------------------------------------------

    def render_word(self, w: Word) -> str:
        bits = []
        for g, d in w:
            nm = self.gens[g].name
            bits.append(nm if d == 0 else (f"d({nm})" if d == 1 else f"d^{d}({nm})"))
        return " ".join(bits)

    def render_state(self, s: State) -> str:
        if s.is_zero():
            return "0"
        coords = self.patch.coords
        bits = []
        for w in sorted(s._terms, key=lambda w: (len(w), w)):
            f = s._terms[w]
            coef = f.render(coords)
            if w:
                if coef == "1":
                    bits.append(f":{self.render_word(w)}:")
                else:
                    bits.append(f"({coef})*:{self.render_word(w)}:")
            else:
                bits.append(f"({coef})" if "+" in coef or "-" in coef[1:] else coef)
        return " + ".join(bits)


class VertexHom:
    """A vertex algebra homomorphism given by images of the generator
    letters and a map of coefficient forms.  Applied multiplicatively over
    the right-nested normally ordered presentation."""

    def __init__(self, src: Algebra, dst: Algebra,
                 letter_images: Dict[int, State],
                 form_map: Callable[[Form], Form]):
        self.src = src
        self.dst = dst
        self.letter_images = dict(letter_images)
        self.form_map = form_map
        self._img_cache: Dict[Tuple[int, int], State] = {}

    def letter_image(self, g: int, d: int) -> State:
        key = (g, d)
        hit = self._img_cache.get(key)
        if hit is None:
            base = self.letter_images.get(g)
            if base is None:
                gen = self.src.gens[g]
                if gen.formlike is None:
                    raise EngineError(f"homomorphism has no image for {gen.name}")
                base = self.dst.form_state(self.form_map(gen.formlike))
            hit = self.dst.translate_state(base, d)
            self._img_cache[key] = hit
        return hit

    def __call__(self, s: State) -> State:
        dst = self.dst
        out = dst.zero()
        for w, f in s.terms():
            cur = dst.vacuum()
            for g, d in reversed(w):
                cur = dst.nprod(self.letter_image(g, d), cur)
            img_f = self.form_map(f)
            if img_f:
                cur = dst.nprod(dst.form_state(img_f), cur)
            else:
                cur = dst.zero()
            out = out + cur
        return out

    def check_opes(self, pairs, max_pole=4):
        """Verify the images satisfy the same singular products."""
        bad = []
        for a, b in pairs:
            ia, ib = self(a), self(b)
            bound = a.weight_bound() + b.weight_bound() + 1
            for n in range(0, min(bound, max_pole) + 1):
                lhs = self(self.src.product(a, b, n))
                rhs = self.dst.product(ia, ib, n)
                if lhs != rhs:
                    bad.append((a, b, n, lhs, rhs))
        return bad
