"""Chiral de Rham complex on a coordinate patch, in free-field letters.

Each base coordinate x^i carries four letters: the odd contraction b^i and
one-form c^i (= dx^i at derivative zero), the even vector field beta^i and
the derivatives of the coordinate function gamma^i.  On a patch with a
circle factor the theta letters are added, with dtheta an honest letter
since the coefficient ring carries no dtheta slot.

The nontrivial singular products are
    b^i(z)c^j(w) ~ delta_ij (z-w)^-1,
    beta^i(z)f(w) ~ (df/dx^i)(w)(z-w)^-1,
and the theta-derivative of a phase term e^{n theta} is n e^{n theta}.
"""

from __future__ import annotations

from fractions import Fraction
from typing import List, Optional, Sequence

from .algebra import Algebra, Caps, State, VertexHom, EngineError
from .forms import BasePatch, Form, VectorField

# letter class ranks shared by every algebra in the package
CLS_IOTA = 0
CLS_IA = 1
CLS_IAHAT = 2
CLS_DCOORD = 3
CLS_A = 4
CLS_AHAT = 5
CLS_LIE = 6
CLS_LA = 7
CLS_COORD = 8
CLS_GAMMAA = 9


def register_coord_letters(alg: Algebra, names: Sequence[str]):
    """Register the d^k(x^i) and d^k(dx^i) letters every algebra needs."""
    dim = len(names)
    for i, nm in enumerate(names):
        gid = alg.add_gen(f"{nm}'", CLS_COORD, i, parity=0, weight=0, degree=0,
                          min_deriv=1, formlike=Form.coord(dim, i))
        alg.coord_gids.append(gid)
    for i, nm in enumerate(names):
        gid = alg.add_gen(f"d{nm}'", CLS_DCOORD, i, parity=1, weight=0, degree=1,
                          min_deriv=1, formlike=Form.dx(dim, i))
        alg.dcoord_gids.append(gid)


class CdrPatch:
    """The chiral de Rham algebra of a patch, with its topological quadruple."""

    def __init__(self, patch: BasePatch, caps: Optional[Caps] = None):
        self.patch = patch
        dim = patch.dim
        alg = Algebra(patch, caps, name="cdr")
        self.alg = alg

        self.b = [alg.add_gen(f"b{i+1}", CLS_IOTA, i, 1, 1, -1) for i in range(dim)]
        self.beta = [alg.add_gen(f"beta{i+1}", CLS_LIE, i, 0, 1, 0) for i in range(dim)]
        register_coord_letters(alg, patch.coords)
        self.c = list(alg.dcoord_gids)
        self.gamma = list(alg.coord_gids)

        if patch.circle:
            th = dim
            self.b_theta = alg.add_gen("btheta", CLS_IOTA, th, 1, 1, -1)
            self.beta_theta = alg.add_gen("betatheta", CLS_LIE, th, 0, 1, 0)
            self.c_theta = alg.add_gen("ctheta", CLS_DCOORD, th, 1, 0, 1, min_deriv=0)
            self.gamma_theta = alg.add_gen("gammatheta", CLS_COORD, th, 0, 0, 0,
                                           min_deriv=1)
        else:
            self.b_theta = self.beta_theta = self.c_theta = self.gamma_theta = None

        for i, gid in enumerate(self.b):
            alg.set_form_rule(gid, lambda f, i=i: alg.form_state(f.contract(i)))
        for i, gid in enumerate(self.beta):
            alg.set_form_rule(gid, lambda f, i=i: alg.form_state(f.partial(i)))
        if patch.circle:
            alg.set_form_rule(self.beta_theta,
                              lambda f: alg.form_state(f.phase_scaled()))
            alg.phase_rule = self._phase_rule

        # every pair of non-form letters is declared, almost all of them zero
        plain = self.b + self.beta
        if patch.circle:
            plain += [self.b_theta, self.beta_theta, self.c_theta, self.gamma_theta]
        for g in plain:
            for h in plain:
                if g <= h:
                    alg.declare(g, h, {})
        if patch.circle:
            alg.declare(self.b_theta, self.c_theta, {1: alg.vacuum()})
            alg.declare(self.beta_theta, self.gamma_theta, {1: alg.vacuum()})

        self._quadruple = None

    def _phase_rule(self, n: int) -> State:
        # d/dz of e^{n theta} = n :e^{n theta} (d theta'):
        f = Form.phase(self.patch.dim, n)
        return self.alg.term_state(f.scale(n), ((self.gamma_theta, 1),))

    # -- states ----------------------------------------------------------

    def coordinates(self) -> List[int]:
        out = list(range(self.patch.dim))
        if self.patch.circle:
            out.append(self.patch.dim)
        return out

    def b_state(self, i: int) -> State:
        if i == self.patch.dim:
            return self.alg.gen_state(self.b_theta)
        return self.alg.gen_state(self.b[i])

    def beta_state(self, i: int) -> State:
        if i == self.patch.dim:
            return self.alg.gen_state(self.beta_theta)
        return self.alg.gen_state(self.beta[i])

    def c_state(self, i: int, d: int = 0) -> State:
        if i == self.patch.dim:
            return self.alg.gen_state(self.c_theta, d)
        return self.alg.gen_state(self.c[i], d) if d else \
            self.alg.form_state(Form.dx(self.patch.dim, i))

    def dgamma_state(self, i: int, d: int = 1) -> State:
        if i == self.patch.dim:
            return self.alg.gen_state(self.gamma_theta, d)
        return self.alg.gen_state(self.gamma[i], d)

    # -- topological quadruple --------------------------------------------

    def quadruple(self):
        """The fields (L, J, G, Q) of the patch."""
        if self._quadruple is None:
            alg = self.alg
            J = alg.zero()
            Q = alg.zero()
            G = alg.zero()
            L = alg.zero()
            for i in self.coordinates():
                # degree current oriented so J_0(c) = +c and Q_(1)G = J
                J = J + alg.nprod(self.c_state(i), self.b_state(i))
                Q = Q + alg.nprod(self.beta_state(i), self.c_state(i))
                G = G + alg.nprod(self.b_state(i), self.dgamma_state(i))
                L = L + alg.nprod(self.beta_state(i), self.dgamma_state(i)) \
                      - alg.nprod(self.b_state(i), self.c_state(i, 1))
            self._quadruple = (L, J, G, Q)
        return self._quadruple

    def diff(self, a: State) -> State:
        """The differential, the zero mode of Q."""
        L, J, G, Q = self.quadruple()
        return self.alg.product(Q, a, 0)

    def homotopy(self, a: State) -> State:
        """G_0, the contracting homotopy for the differential."""
        L, J, G, Q = self.quadruple()
        return self.alg.product(G, a, 1)

    def weight_op(self, a: State) -> State:
        L, J, G, Q = self.quadruple()
        return self.alg.product(L, a, 1)

    def degree_op(self, a: State) -> State:
        L, J, G, Q = self.quadruple()
        return self.alg.product(J, a, 0)

    # -- geometric states ----------------------------------------------------

    def iota(self, X: VectorField) -> State:
        """iota_X = sum_i :X^i b^i: (+ the vertical part against btheta)."""
        alg = self.alg
        out = alg.zero()
        for i, comp in enumerate(X.components):
            if comp:
                out = out + alg.nprod(alg.form_state(comp), self.b_state(i))
        if X.vertical:
            if not self.patch.circle:
                raise EngineError("vertical component on a patch without circle")
            out = out + alg.nprod(alg.form_state(X.vertical),
                                  self.b_state(self.patch.dim))
        return out

    def lieop(self, X: VectorField) -> State:
        """L_X, the image of iota_X under the differential."""
        return self.diff(self.iota(X))

    def form_embed(self, f: Form) -> State:
        return self.alg.form_state(f)


def coordinate_change(src: CdrPatch, dst: CdrPatch,
                      fwd: Sequence[Form], inv: Sequence[Form]) -> VertexHom:
    """The isomorphism induced by the polynomial diffeomorphism
    x~^i = fwd_i(x) with polynomial inverse x^i = inv_i(x~).

    Maps the dst-patch letters into the src algebra:
        c~^i    -> :(d fwd^i/dx^j) c^j:
        b~^i    -> :(d inv^j/dx~^i)(fwd(x)) b^j:
        beta~^i -> :beta^j (d inv^j/dx~^i)(fwd(x)):
                   + :(d^2 inv^k/dx~^i dx~^l)(fwd(x)) (d fwd^l/dx^r) c^r b^k:
    and pulls coefficient functions back through fwd.
    """
    if src.patch.circle or dst.patch.circle:
        raise EngineError("coordinate changes are for plain patches")
    dim = src.patch.dim
    if len(fwd) != dim or len(inv) != dim:
        raise EngineError("need one polynomial per coordinate")

    def subst(f: Form, maps: Sequence[Form], dmaps) -> Form:
        # substitute x^i -> maps[i], dx^i -> dmaps[i]
        out = Form.zero(dim)
        for (e, w, n), cval in f.terms():
            piece = Form.const(dim, cval) * Form.phase(dim, n)
            for i, p in enumerate(e):
                for _ in range(p):
                    piece = piece * maps[i]
            for i in w:
                piece = piece * dmaps[i]
            out = out + piece
        return out

    # check the inverse really inverts
    for i in range(dim):
        back = subst(inv[i], fwd, [Form.dx(dim, j) for j in range(dim)])
        if back != Form.coord(dim, i):
            raise NotInvertibleError(
                f"inverse data does not invert coordinate {i}")

    dfwd = [[fwd[i].partial(j) for j in range(dim)] for i in range(dim)]
    dmaps = [sum((dfwd[i][j] * Form.dx(dim, j) for j in range(dim)),
                 Form.zero(dim)) for i in range(dim)]

    def pullback(f: Form) -> Form:
        return subst(f, fwd, dmaps)

    alg = src.alg
    images = {}
    for i in range(dim):
        # c~ and gamma~ letters are formlike, handled by the pullback itself
        bi = alg.zero()
        for j in range(dim):
            coef = pullback(inv[j].partial(i))
            if coef:
                bi = bi + alg.nprod(alg.form_state(coef), src.b_state(j))
        images[dst.b[i]] = bi
        bt = alg.zero()
        for j in range(dim):
            coef = pullback(inv[j].partial(i))
            if coef:
                bt = bt + alg.nprod(src.beta_state(j), alg.form_state(coef))
        for k in range(dim):
            for l in range(dim):
                second = pullback(inv[k].partial(i).partial(l))
                if not second:
                    continue
                for r in range(dim):
                    coef = second * dfwd[l][r]
                    if coef:
                        word = alg.nprod(src.c_state(r), src.b_state(k))
                        bt = bt + alg.nprod(alg.form_state(coef), word)
        images[dst.beta[i]] = bt

    return VertexHom(dst.alg, alg, images, pullback)


class NotInvertibleError(EngineError):
    """Coordinate change data whose claimed inverse fails."""
