"""Seeded random states for property sweeps.

All sampling is driven by an explicit random.Random instance so reports are
reproducible byte for byte.
"""

from __future__ import annotations

import random
from fractions import Fraction
from typing import Optional, Sequence

from .algebra import Algebra, State
from .forms import Form


def random_form(alg: Algebra, rng: random.Random, max_poly: int = 2,
                max_dx: int = 1, phases: Sequence[int] = (0,)) -> Form:
    dim = alg.dim
    f = Form.const(dim, rng.choice([1, 1, 2, -1, Fraction(1, 2)]))
    for _ in range(rng.randint(0, max_poly)):
        f = f * Form.coord(dim, rng.randrange(dim))
    dxs = rng.sample(range(dim), k=min(dim, rng.randint(0, max_dx)))
    for i in sorted(dxs):
        f = f * Form.dx(dim, i)
    n = rng.choice(list(phases))
    if n:
        f = f * Form.phase(dim, n)
    return f


def random_monomial(alg: Algebra, rng: random.Random, max_len: int = 3,
                    max_weight: int = 3, phases: Sequence[int] = (0,),
                    letter_pool: Optional[Sequence[int]] = None) -> State:
    """One normally ordered word with a random coefficient, weight-capped."""
    if letter_pool is None:
        letter_pool = [g.gid for g in alg.gens if g.min_deriv == 0] \
            + [g.gid for g in alg.gens if g.min_deriv == 1]
    for _ in range(40):
        coeff = random_form(alg, rng, phases=phases)
        letters = []
        weight = 0
        for _ in range(rng.randint(0, max_len)):
            g = rng.choice(letter_pool)
            gen = alg.gens[g]
            d = rng.randint(gen.min_deriv, gen.min_deriv + 1) \
                if rng.random() < 0.25 else gen.min_deriv
            if weight + gen.weight + d > max_weight:
                continue
            letters.append((g, d))
            weight += gen.weight + d
        out = alg.normalize_factors([coeff] + letters)
        if out and out.weight_bound() <= max_weight:
            return out
    return alg.vacuum()


def random_states(alg: Algebra, rng: random.Random, count: int,
                  max_len: int = 3, max_weight: int = 3,
                  phases: Sequence[int] = (0,),
                  letter_pool: Optional[Sequence[int]] = None):
    return [random_monomial(alg, rng, max_len, max_weight, phases, letter_pool)
            for _ in range(count)]
