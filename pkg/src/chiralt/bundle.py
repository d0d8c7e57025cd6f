"""Twisted chiral de Rham algebra on a circle-bundle patch.

A BundleScene fixes the basic connection forms of the bundle and its dual,
A_bas and Ahat_bas, plus a basic 3-form flux component H3.  The curvature
conventions are

    H2    = d Ahat_bas     (fiberwise flux of the dual bundle),
    Hhat2 = d A_bas        (curvature of this side),
    H     = H3 + A ^ H2,   closed iff  d H3 + Hhat2 ^ H2 = 0.

The twisted algebra is presented abstractly on the letters
iota_i, L_i (horizontal lifts of the coordinate fields), A, iota_A, L_A,
Gamma_A, with coefficient forms and phase sectors e^{n theta}.  The state
xi_A entering the L_X Gamma_A singular part is not postulated: it is
computed in the concrete free-field model of the patch as
d/dz(A) - D(G_(0) A) and imported.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Dict, List, Optional

from .algebra import Algebra, Caps, EngineError, State, VertexHom
from .forms import BasePatch, Form, contract2
from .patch import (CLS_A, CLS_GAMMAA, CLS_IA, CLS_IOTA, CLS_LA, CLS_LIE,
                    CdrPatch, register_coord_letters)


class SceneNotClosedError(EngineError):
    """The total flux of the scene is not closed."""


class SceneNotTrivialError(EngineError):
    """An operation restricted to trivial scenes got a nontrivial one."""


class BundleScene:
    def __init__(self, patch: BasePatch, a_bas: Form, ahat_bas: Form,
                 h3: Form, caps: Optional[Caps] = None):
        if patch.circle:
            raise EngineError("scene base patch must not carry the circle")
        dim = patch.dim
        for f, deg in ((a_bas, 1), (ahat_bas, 1), (h3, 3)):
            if not f.is_basic():
                raise SceneNotClosedError("scene data must be basic forms")
            if f.form_degrees() - {deg}:
                raise SceneNotClosedError("scene form of wrong degree")
            if f.dim != dim:
                raise EngineError("scene form on wrong patch")
        self.patch = patch
        self.a_bas = a_bas
        self.ahat_bas = ahat_bas
        self.h3 = h3
        self.h2 = ahat_bas.d()
        self.hhat2 = a_bas.d()
        self.caps = caps or Caps()
        if self.h3.d() + self.hhat2.wedge(self.h2):
            raise SceneNotClosedError("dH3 + Hhat2 ^ H2 != 0")

    def swapped(self) -> "BundleScene":
        """The T-dual scene, with the two connections exchanged."""
        return BundleScene(self.patch, self.ahat_bas, self.a_bas, self.h3, self.caps)

    def untwisted(self) -> "BundleScene":
        """Same bundle, zero flux (H3 = 0 and flat dual connection)."""
        z = Form.zero(self.patch.dim)
        return BundleScene(self.patch, self.a_bas, z, z, self.caps)

    def is_trivial(self) -> bool:
        return (self.a_bas.is_zero() and self.ahat_bas.is_zero()
                and self.h3.is_zero())

    def a_component(self, i: int) -> Form:
        return self.a_bas.contract(i)


def std2d(caps: Optional[Caps] = None) -> BundleScene:
    """The bundled reference scene: dim-2 base, A_bas = x dy,
    Ahat_bas = -y dx, H3 = 0; both curvatures equal dx^dy."""
    patch = BasePatch(["x", "y"])
    a = Form.coord(2, 0) * Form.dx(2, 1)
    ahat = (Form.coord(2, 1) * Form.dx(2, 0)).scale(-1)
    return BundleScene(patch, a, ahat, Form.zero(2), caps)


def trivial2d(caps: Optional[Caps] = None) -> BundleScene:
    patch = BasePatch(["x", "y"])
    z = Form.zero(2)
    return BundleScene(patch, z, z, z, caps)


# -- derivations -------------------------------------------------------------


def apply_derivation(alg: Algebra, dletter, dform, s: State) -> State:
    """Apply an odd derivation given by dletter(gid) -> State on underived
    letters and dform(Form) -> State on coefficients."""
    out = alg.zero()
    for w, f in s.terms():
        for part in alg._homog(f):
            out = out + _derive_term(alg, dletter, dform, part, w)
    return out


def _derive_term(alg: Algebra, dletter, dform, f: Form, w) -> State:
    word_state = State(alg, {w: Form.const(alg.dim)})
    out = alg.zero()
    img = dform(f)
    if img:
        out = out + alg.nprod(img, word_state)
    parity = f.parity()
    for pos, (g, d) in enumerate(w):
        base = dletter(g)
        if base is None:
            raise EngineError(f"derivation undefined on {alg.gens[g].name}")
        piece = alg.nprod(alg.translate_state(base, d),
                          State(alg, {w[pos + 1:]: Form.const(alg.dim)}))
        for gg, dd in reversed(w[:pos]):
            piece = alg.prepend_factor((gg, dd), piece)
        piece = alg.prepend_factor(f, piece)
        if parity % 2:
            piece = piece.scale(-1)
        out = out + piece
        parity += alg.gens[g].parity
    return out


# -- the twisted patch --------------------------------------------------------


class TwistedPatch:
    """The H-twisted chiral de Rham algebra of the patch, presented by its
    invariant OPE table, with phase sectors e^{n theta}."""

    def __init__(self, scene: BundleScene, caps: Optional[Caps] = None):
        self.scene = scene
        dim = scene.patch.dim
        alg = Algebra(scene.patch, caps or scene.caps, name="twisted")
        self.alg = alg
        self.iota = [alg.add_gen(f"i{nm}", CLS_IOTA, i, 1, 1, -1)
                     for i, nm in enumerate(scene.patch.coords)]
        self.lie = [alg.add_gen(f"L{nm}", CLS_LIE, i, 0, 1, 0)
                    for i, nm in enumerate(scene.patch.coords)]
        self.ia = alg.add_gen("iA", CLS_IA, 0, 1, 1, -1)
        self.a = alg.add_gen("A", CLS_A, 0, 1, 0, 1)
        self.la = alg.add_gen("LA", CLS_LA, 0, 0, 1, 0)
        self.gamma_a = alg.add_gen("GammaA", CLS_GAMMAA, 0, 0, 1, 0)
        register_coord_letters(alg, scene.patch.coords)

        for i, gid in enumerate(self.iota):
            alg.set_form_rule(gid, lambda f, i=i: alg.form_state(f.contract(i)))
        for i, gid in enumerate(self.lie):
            ai = scene.a_component(i)
            alg.set_form_rule(
                gid,
                lambda f, i=i, ai=ai: alg.form_state(
                    f.partial(i) - ai.wedge(f.phase_scaled())))
        alg.set_form_rule(self.la, lambda f: alg.form_state(f.phase_scaled()))
        alg.phase_rule = self._phase_rule

        self.xi = compute_xi(scene, alg)
        self._declare_table()
        self.h_state = self._flux_state()

    # -- construction helpers ------------------------------------------------

    def _phase_rule(self, n: int) -> State:
        # d/dz e^{n theta} = n :(GammaA - Gamma_{A_bas}) e^{n theta}:
        alg = self.alg
        dim = alg.dim
        ph = Form.phase(dim, n)
        out = alg.term_state(ph.scale(n), ((self.gamma_a, 0),))
        for j in range(dim):
            aj = self.scene.a_component(j)
            if aj:
                out = out - alg.term_state(aj.wedge(ph).scale(n),
                                           ((alg.coord_gid(j), 1),))
        return out

    def gamma_of(self, omega: Form) -> State:
        """The weight-one field sum_j omega_j :d x^j: of a basic 1-form."""
        alg = self.alg
        out = alg.zero()
        for j in range(alg.dim):
            comp = omega.contract(j)
            if comp:
                out = out + alg.term_state(comp, ((alg.coord_gid(j), 1),))
        return out

    def xi_contract(self, i: int) -> State:
        alg = self.alg
        t = {}
        for w, f in self.xi.terms():
            g = f.contract(i)
            if g:
                t[w] = g
        return State(alg, t)

    def _flux_state(self) -> State:
        alg = self.alg
        return alg.form_state(self.scene.h3) + \
            alg.nprod(alg.gen_state(self.a), alg.form_state(self.scene.h2))

    def _declare_table(self):
        alg = self.alg
        sc = self.scene
        dim = alg.dim
        fs = alg.form_state
        A = alg.gen_state(self.a)
        IA = alg.gen_state(self.ia)
        LA = alg.gen_state(self.la)
        for i in range(dim):
            for j in range(dim):
                val = fs(contract2(sc.h3, i, j)) \
                    + alg.nprod(A, fs(contract2(sc.h2, i, j))) \
                    + alg.nprod(fs(contract2(sc.hhat2, i, j)), IA)
                alg.declare(self.lie[i], self.iota[j], {1: val})
                lij = fs(sc.h3.contract(j).partial(i)
                         - sc.h3.partial(j).contract(i)
                         + sc.hhat2.wedge(contract2(sc.h2, i, j))) \
                    - alg.nprod(A, fs(sc.h2.contract(j).partial(i))) \
                    + alg.nprod(A, fs(sc.h2.partial(j).contract(i))) \
                    + alg.nprod(fs(sc.hhat2.contract(j).partial(i)), IA) \
                    - alg.nprod(fs(sc.hhat2.partial(j).contract(i)), IA) \
                    + alg.nprod(LA, fs(contract2(sc.hhat2, i, j)))
                alg.declare(self.lie[i], self.lie[j], {1: lij})
        for i in range(dim):
            alg.declare(self.lie[i], self.a, {1: fs(sc.hhat2.contract(i))})
            alg.declare(self.lie[i], self.ia, {1: fs(sc.h2.contract(i))})
            alg.declare(self.la, self.iota[i], {1: fs(sc.h2.contract(i)).scale(-1)})
            alg.declare(self.la, self.lie[i],
                        {1: fs(sc.h2.partial(i)).scale(-1)})
            alg.declare(self.lie[i], self.gamma_a, {1: self.xi_contract(i).scale(-1)})
        alg.declare(self.la, self.gamma_a, {2: alg.vacuum()})
        alg.declare(self.ia, self.a, {1: alg.vacuum()})
        # every remaining pair is regular
        plain = self.iota + self.lie + [self.ia, self.a, self.la, self.gamma_a]
        for g in plain:
            for h in plain:
                if g <= h and (g, h) not in alg.table and (h, g) not in alg.table:
                    alg.declare(g, h, {})

    # -- operations ------------------------------------------------------------

    def sector(self, n: int) -> State:
        return self.alg.form_state(Form.phase(self.alg.dim, n))

    def fourier_project(self, a: State, n: int) -> State:
        if abs(n) > self.alg.caps.fourier:
            from .algebra import CapExceededError
            raise CapExceededError("sector beyond the Fourier cap")
        return a.phase_select(n)

    def diff_images(self) -> Dict[int, State]:
        """Generator values of the chiral de Rham differential."""
        alg, sc = self.alg, self.scene
        fs = alg.form_state
        A = alg.gen_state(self.a)
        img: Dict[int, State] = {}
        for i in range(alg.dim):
            img[self.iota[i]] = alg.gen_state(self.lie[i]) \
                - fs(sc.h3.contract(i)) \
                + alg.nprod(A, fs(sc.h2.contract(i)))
            img[self.lie[i]] = fs(sc.h3.partial(i)
                                  + sc.h2.wedge(sc.hhat2.contract(i))) \
                + alg.nprod(A, fs(sc.h2.partial(i)))
        img[self.ia] = alg.gen_state(self.la) - fs(sc.h2)
        img[self.a] = fs(sc.hhat2)
        img[self.la] = alg.zero()
        img[self.gamma_a] = alg.translate_state(A) - self.xi
        for i in range(alg.dim):
            img[alg.coord_gid(i)] = fs(Form.dx(alg.dim, i))
            img[alg.dcoord_gid(i)] = alg.zero()
        return img

    def _dform(self, f: Form) -> State:
        """Differential of a coefficient: d on the basic part and
        D(e^{n theta}) = n :(A - A_bas) e^{n theta}: on the phase."""
        alg, sc = self.alg, self.scene
        out = alg.zero()
        for n, whole in f.phase_split().items():
            ph = Form.phase(alg.dim, n)
            out = out + alg.form_state(whole.d().wedge(ph))
            if n:
                vert = alg.term_state(ph, ((self.a, 0),)) \
                    - alg.form_state(sc.a_bas.wedge(ph))
                for part in alg._homog(whole):
                    sgn = -1 if part.parity() else 1
                    out = out + alg.nprod(alg.form_state(part),
                                          vert).scale(n * sgn)
        return out

    def cdr_diff(self, a: State) -> State:
        """The square-zero chiral de Rham derivation of the twisted patch."""
        img = self.diff_images()
        return apply_derivation(self.alg, lambda g: img.get(g), self._dform, a)

    def d_h(self, a: State) -> State:
        """The twisted differential D_H(a) = D(a) + :H a:."""
        return self.cdr_diff(a) + self.alg.nprod(self.h_state, a)

    def la_eigenvalue(self, a: State):
        """Return n if (L_A)_0 a = n a, else None."""
        la0 = self.alg.product(self.alg.gen_state(self.la), a, 0)
        for n in sorted(a.phases() | {0}):
            if la0 == a.scale(n):
                return n
        return None


# -- xi via the free-field model ------------------------------------------------


def compute_xi(scene: BundleScene, target: Algebra) -> State:
    """xi_A = d/dz(A) - D(G_(0)A) computed in the concrete circle patch and
    imported into the target algebra's coordinate letters."""
    circle = BasePatch(scene.patch.coords, circle=True)
    P = CdrPatch(circle, target.caps)
    alg = P.alg
    a_state = alg.form_state(scene.a_bas) + alg.gen_state(P.c_theta)
    gamma = alg.product(P.quadruple()[2], a_state, 0)  # G_(0) A
    xi = alg.translate_state(a_state) - P.diff(gamma)
    return import_base_words(P, target, xi)


def import_base_words(src: CdrPatch, dst: Algebra, s: State) -> State:
    """Carry a state of the concrete patch that lives in the base-form
    subalgebra (only coordinate letters) into another algebra."""
    gid_map = {}
    for i in range(src.patch.dim):
        gid_map[src.gamma[i]] = dst.coord_gids[i]
        gid_map[src.c[i]] = dst.dcoord_gids[i]
    out = {}
    for w, f in s.terms():
        try:
            word = tuple((gid_map[g], d) for g, d in w)
        except KeyError:
            raise EngineError("state does not lie in the base subalgebra")
        out[word] = f
    return State(dst, out)


def untwist_hom(source: TwistedPatch, target: TwistedPatch) -> VertexHom:
    """The untwisting isomorphism from the zero-flux patch onto the twisted
    one: identity on forms, contractions and the torus letters, with
    L_X -> L_X - iota_X H3 + :A (iota_X H2):  and  L_A -> L_A - H2."""
    if not (source.scene.h3.is_zero() and source.scene.h2.is_zero()):
        raise EngineError("untwist source must have zero flux")
    alg = target.alg
    sc = target.scene
    fs = alg.form_state
    A = alg.gen_state(target.a)
    images = {}
    for i in range(alg.dim):
        images[source.iota[i]] = alg.gen_state(target.iota[i])
        images[source.lie[i]] = alg.gen_state(target.lie[i]) \
            - fs(sc.h3.contract(i)) + alg.nprod(A, fs(sc.h2.contract(i)))
    images[source.ia] = alg.gen_state(target.ia)
    images[source.a] = alg.gen_state(target.a)
    images[source.la] = alg.gen_state(target.la) - fs(sc.h2)
    images[source.gamma_a] = alg.gen_state(target.gamma_a)
    return VertexHom(source.alg, alg, images, lambda f: f)
