"""Exotic twisted chiral de Rham algebra of the dual patch.

Generators: iota_X, L_X for horizontal lifts, the dual connection letters
Ahat and iota_Ahat, the vertical Lie field L_A, the weight-one field
Gamma_A, coefficient forms, and the sector markers s^n (phase slots of the
coefficients).  The algebra is presented purely by its OPE table; there is
no free-field model behind it, so every product routes through the generic
rewriter and table consistency is checked, not assumed.

The differential splits into eight parts,

    D_full = D_Z + D0 + ... + D6,
    D0 = -(:Ahat Hhat2:)_(0),  D1 = (:H2 iAhat:)_(0),  D2 = -(:iAhat LA:)_(0),
    D3 = (H3)_(0),             D4 = (:iAhat LA:)_(1),  D5 = (:H2 iAhat:)_(1),
    D6 = (H3 + :Ahat Hhat2:)_(-1),

with D_Z a derivation given on generators.  D4 and D5 are first modes and
fail to be derivations; D6 is left normally ordered multiplication and
keeps every quasi-associativity correction.
"""

from __future__ import annotations

from typing import Dict, Optional, Tuple

from .algebra import Algebra, Caps, EngineError, State
from .bundle import BundleScene, apply_derivation, compute_xi
from .forms import Form, contract2
from .patch import (CLS_AHAT, CLS_GAMMAA, CLS_IAHAT, CLS_IOTA, CLS_LA,
                    CLS_LIE, register_coord_letters)

COMPONENTS = ("DZ", "D0", "D1", "D2", "D3", "D4", "D5", "D6")


class ExoticPatch:
    def __init__(self, scene: BundleScene, caps: Optional[Caps] = None):
        self.scene = scene
        alg = Algebra(scene.patch, caps or scene.caps, name="exotic")
        self.alg = alg
        self.iota = [alg.add_gen(f"i{nm}", CLS_IOTA, i, 1, 1, -1)
                     for i, nm in enumerate(scene.patch.coords)]
        self.lie = [alg.add_gen(f"L{nm}", CLS_LIE, i, 0, 1, 0)
                    for i, nm in enumerate(scene.patch.coords)]
        self.iahat = alg.add_gen("iAhat", CLS_IAHAT, 0, 1, 1, -1)
        self.ahat = alg.add_gen("Ahat", CLS_AHAT, 0, 1, 0, 1)
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
                    f.partial(i) + ai.wedge(f.phase_scaled())))
        alg.set_form_rule(self.la,
                          lambda f: alg.form_state(f.phase_scaled().scale(-1)))
        alg.phase_rule = self._phase_rule

        self.xi = compute_xi(scene, alg)
        self._declare_table()
        self._fields = None
        self._dz_images = None

    # -- presentation ---------------------------------------------------------

    def _phase_rule(self, n: int) -> State:
        # d/dz s^n = -n :(GammaA - Gamma_{A_bas}) s^n:
        alg = self.alg
        ph = Form.phase(alg.dim, n)
        out = alg.term_state(ph.scale(-n), ((self.gamma_a, 0),))
        for j in range(alg.dim):
            aj = self.scene.a_component(j)
            if aj:
                out = out + alg.term_state(aj.wedge(ph).scale(n),
                                           ((alg.coord_gid(j), 1),))
        return out

    def xi_contract(self, i: int) -> State:
        t = {}
        for w, f in self.xi.terms():
            g = f.contract(i)
            if g:
                t[w] = g
        return State(self.alg, t)

    def _declare_table(self):
        alg = self.alg
        sc = self.scene
        dim = alg.dim
        fs = alg.form_state
        AH = alg.gen_state(self.ahat)
        LA = alg.gen_state(self.la)
        for i in range(dim):
            for j in range(dim):
                val = fs(contract2(sc.h3, i, j)) \
                    + alg.nprod(AH, fs(contract2(sc.hhat2, i, j)))
                alg.declare(self.lie[i], self.iota[j], {1: val})
                # for horizontal lifts of the coordinate fields the bracket
                # terms and the curvature cross-terms of the invariant table
                # cancel; what survives is the H3 part, the Ahat corrections
                # and the vertical L_A correction
                lij = fs(sc.h3.contract(j).partial(i)
                         - sc.h3.partial(j).contract(i)) \
                    + alg.nprod(fs(sc.hhat2.contract(j).partial(i)), AH) \
                    - alg.nprod(fs(sc.hhat2.partial(j).contract(i)), AH) \
                    + alg.nprod(LA, fs(contract2(sc.hhat2, i, j)))
                alg.declare(self.lie[i], self.lie[j], {1: lij})
        for i in range(dim):
            alg.declare(self.lie[i], self.ahat, {})
            alg.declare(self.lie[i], self.iahat, {1: fs(sc.hhat2.contract(i))})
            alg.declare(self.la, self.iota[i], {})
            alg.declare(self.la, self.lie[i], {})
            alg.declare(self.lie[i], self.gamma_a,
                        {1: self.xi_contract(i).scale(-1)})
        alg.declare(self.la, self.gamma_a, {2: alg.vacuum()})
        alg.declare(self.iahat, self.ahat, {1: alg.vacuum()})
        plain = self.iota + self.lie + [self.iahat, self.ahat, self.la,
                                        self.gamma_a]
        for g in plain:
            for h in plain:
                if g <= h and (g, h) not in alg.table and (h, g) not in alg.table:
                    alg.declare(g, h, {})

    # -- states ---------------------------------------------------------------

    def sector(self, n: int) -> State:
        return self.alg.form_state(Form.phase(self.alg.dim, n))

    def iota_field(self, comps) -> State:
        """iota of the horizontal field sum_i comps[i] * (lift of d/dx^i)."""
        alg = self.alg
        out = alg.zero()
        for i, f in enumerate(comps):
            if f:
                out = out + alg.nprod(alg.form_state(f),
                                      alg.gen_state(self.iota[i]))
        return out

    def lie_field(self, comps) -> State:
        alg = self.alg
        out = alg.zero()
        for i, f in enumerate(comps):
            if f:
                out = out + alg.nprod(alg.form_state(f),
                                      alg.gen_state(self.lie[i])) \
                    + alg.nprod(alg.form_state(f.d()),
                                alg.gen_state(self.iota[i]))
        return out

    def fields(self) -> Dict[str, State]:
        """The mode fields entering the differential components."""
        if self._fields is None:
            alg, sc = self.alg, self.scene
            ah_hh2 = alg.nprod(alg.gen_state(self.ahat), alg.form_state(sc.hhat2))
            h2_iah = alg.nprod(alg.form_state(sc.h2), alg.gen_state(self.iahat))
            iah_la = alg.nprod(alg.gen_state(self.iahat), alg.gen_state(self.la))
            self._fields = {
                "ahat_hhat2": ah_hh2,
                "h2_iahat": h2_iah,
                "iahat_la": iah_la,
                "h3": alg.form_state(sc.h3),
                "flux": alg.form_state(sc.h3) + ah_hh2,
            }
        return self._fields

    # -- the transported differential ------------------------------------------

    def dz_images(self) -> Dict[int, State]:
        if self._dz_images is None:
            alg, sc = self.alg, self.scene
            fs = alg.form_state
            img: Dict[int, State] = {}
            for i in range(alg.dim):
                img[self.iota[i]] = alg.gen_state(self.lie[i]) \
                    - fs(sc.h3.contract(i))
                img[self.lie[i]] = fs(sc.h3.partial(i)
                                      + sc.h2.wedge(sc.hhat2.contract(i))
                                      + sc.hhat2.wedge(sc.h2.contract(i)))
                img[alg.coord_gid(i)] = fs(Form.dx(alg.dim, i))
                img[alg.dcoord_gid(i)] = alg.zero()
            img[self.iahat] = fs(sc.hhat2)
            img[self.ahat] = alg.gen_state(self.la)
            img[self.la] = alg.zero()
            img[self.gamma_a] = alg.translate_state(
                alg.gen_state(self.iahat)) - self.xi
            self._dz_images = img
        return self._dz_images

    def _dz_form(self, f: Form) -> State:
        """D_Z on a coefficient: d on basic parts,
        D_Z(s^n) = -n :iAhat s^n: + n :A_bas s^n: on the phase."""
        alg, sc = self.alg, self.scene
        out = alg.zero()
        for n, whole in f.phase_split().items():
            ph = Form.phase(alg.dim, n)
            out = out + alg.form_state(whole.d().wedge(ph))
            if n:
                vert = alg.form_state(sc.a_bas.wedge(ph)) \
                    - alg.term_state(ph, ((self.iahat, 0),))
                for part in alg._homog(whole):
                    sgn = -1 if part.parity() else 1
                    out = out + alg.nprod(alg.form_state(part),
                                          vert).scale(n * sgn)
        return out

    def apply_dz(self, a: State) -> State:
        img = self.dz_images()
        return apply_derivation(self.alg, lambda g: img.get(g), self._dz_form, a)

    # -- mode components ---------------------------------------------------------

    def apply_component(self, a: State, which: str) -> State:
        alg = self.alg
        F = self.fields()
        if which == "DZ":
            return self.apply_dz(a)
        if which == "D0":
            return alg.product(F["ahat_hhat2"], a, 0).scale(-1)
        if which == "D1":
            return alg.product(F["h2_iahat"], a, 0)
        if which == "D2":
            return alg.product(F["iahat_la"], a, 0).scale(-1)
        if which == "D3":
            return alg.product(F["h3"], a, 0)
        if which == "D4":
            return alg.product(F["iahat_la"], a, 1)
        if which == "D5":
            return alg.product(F["h2_iahat"], a, 1)
        if which == "D6":
            return alg.nprod(F["flux"], a)
        raise EngineError(f"unknown component {which}")

    def apply_der(self, a: State) -> State:
        """The derivation part D_Z + D0 + D1 + D2 + D3."""
        out = self.apply_dz(a)
        for which in ("D0", "D1", "D2", "D3"):
            out = out + self.apply_component(a, which)
        return out

    def apply_nder(self, a: State) -> State:
        """The first-mode part D4 + D5 (not a derivation)."""
        return self.apply_component(a, "D4") + self.apply_component(a, "D5")

    def apply_flux(self, a: State) -> State:
        """D6, left multiplication by the dual flux."""
        return self.apply_component(a, "D6")

    def apply_full(self, a: State) -> State:
        out = self.apply_dz(a)
        for which in COMPONENTS[1:]:
            out = out + self.apply_component(a, which)
        return out

    # -- weight filtration ---------------------------------------------------------

    def weight_bound(self, a: State) -> int:
        return a.weight_bound()

    def weight_zero_part(self, a: State) -> State:
        t = {w: f for w, f in a.terms()
             if self.alg.word_weight(w) == 0}
        return State(self.alg, t)

    # -- weight-zero classical complex -----------------------------------------------

    def pair_state(self, omega0: Form, omega1: Form, n: int) -> State:
        """The weight-zero element :(omega0 + Ahat omega1) s^n:."""
        alg = self.alg
        ph = Form.phase(alg.dim, n)
        out = alg.form_state(omega0.wedge(ph))
        if omega1:
            out = out + alg.nprod(alg.gen_state(self.ahat),
                                  alg.form_state(omega1.wedge(ph)))
        return out

    def hm_differential(self, omega0: Form, omega1: Form,
                        n: int) -> Tuple[Form, Form]:
        """The classical exotic differential on pairs (omega0, omega1)
        standing for omega0 + Ahat ^ omega1 twisted by the n-th power of the
        dual line bundle:
            (nabla^(n) - n iota_vert + H3 + Ahat Hhat2) (omega0 + Ahat omega1).
        """
        sc = self.scene
        for f in (omega0, omega1):
            if not f.is_basic():
                raise EngineError("classical pairs take basic forms")
        a = sc.a_bas
        out0 = omega0.d() + a.wedge(omega0).scale(n) + sc.h2.wedge(omega1) \
            - omega1.scale(n) + sc.h3.wedge(omega0)
        out1 = omega1.d().scale(-1) - a.wedge(omega1).scale(n) \
            - sc.h3.wedge(omega1) + sc.hhat2.wedge(omega0)
        return out0, out1
