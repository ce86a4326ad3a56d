"""Two-level boolean logic: DNF representation, exact minimisation, equivalence.

Text format: terms joined by " + ", literals by "·", negation "¬", e.g.
``S0·¬S1 + ¬S0·OBS``. The constant true function is written ``1`` and the
constant false function ``0``.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product
from typing import Iterable, Mapping, Sequence

MAX_EXACT_VARS = 24

Literal = tuple[str, bool]
Term = tuple[Literal, ...]


class LogicError(ValueError):
    pass


@dataclass(frozen=True)
class BooleanDNF:
    """Disjunction of conjunctions over an ordered variable universe.

    Terms are stored canonically: literals in universe order, terms sorted and
    deduplicated. No terms means FALSE; a term without literals means TRUE.
    """

    universe: tuple[str, ...]
    terms: tuple[Term, ...] = ()

    def __post_init__(self):
        universe = tuple(self.universe)
        if len(set(universe)) != len(universe):
            raise LogicError(f"duplicate variables in universe {universe}")
        pos = {v: i for i, v in enumerate(universe)}
        canon = set()
        for term in self.terms:
            lits: dict[str, bool] = {}
            for name, pol in term:
                if name not in pos:
                    raise LogicError(f"variable {name!r} not in universe")
                if name in lits and lits[name] != bool(pol):
                    raise LogicError(f"term assigns both polarities to {name!r}")
                lits[name] = bool(pol)
            canon.add(tuple(sorted(lits.items(), key=lambda kv: pos[kv[0]])))
        object.__setattr__(self, "universe", universe)
        object.__setattr__(self, "terms", tuple(sorted(canon, key=lambda t: _term_key(t, pos))))

    @classmethod
    def false(cls, universe: Sequence[str]) -> "BooleanDNF":
        return cls(tuple(universe), ())

    @classmethod
    def true(cls, universe: Sequence[str]) -> "BooleanDNF":
        return cls(tuple(universe), ((),))

    @classmethod
    def from_mappings(cls, universe: Sequence[str], terms: Iterable[Mapping[str, bool]]) -> "BooleanDNF":
        return cls(tuple(universe), tuple(tuple(t.items()) for t in terms))

    @classmethod
    def parse(cls, text: str, universe: Sequence[str]) -> "BooleanDNF":
        text = text.strip()
        if text == "0":
            return cls.false(universe)
        if text == "1":
            return cls.true(universe)
        terms = []
        for chunk in text.split("+"):
            chunk = chunk.strip()
            if not chunk:
                raise LogicError(f"empty term in {text!r}")
            lits = []
            for lit in chunk.split("·"):
                lit = lit.strip()
                neg = lit.startswith("¬")
                name = lit[1:].strip() if neg else lit
                if not name:
                    raise LogicError(f"empty literal in {text!r}")
                lits.append((name, not neg))
            terms.append(tuple(lits))
        return cls(tuple(universe), tuple(terms))

    @property
    def is_false(self) -> bool:
        return not self.terms

    @property
    def is_true(self) -> bool:
        return () in self.terms

    def evaluate(self, assignment: Mapping[str, bool]) -> bool:
        return any(all(bool(assignment[n]) == p for n, p in term) for term in self.terms)

    def __str__(self) -> str:
        if not self.terms:
            return "0"
        if self.is_true:
            return "1"
        return " + ".join("·".join(n if p else f"¬{n}" for n, p in t) for t in self.terms)

    def __len__(self) -> int:
        return len(self.terms)


def _term_key(term: Term, pos: Mapping[str, int]):
    # by variable position, positive literal before negative
    return [(pos[n], not p) for n, p in term]


def term_satisfied(term: Term, assignment: Mapping[str, bool]) -> bool:
    return all(bool(assignment[n]) == p for n, p in term)


def assignments(universe: Sequence[str]):
    """All 2^n full assignments, in binary counting order with the first variable most significant."""
    for bits in product((False, True), repeat=len(universe)):
        yield dict(zip(universe, bits))


def equivalent(a: BooleanDNF, b: BooleanDNF) -> bool:
    """Exhaustive equivalence check over the shared universe."""
    if a.universe != b.universe:
        raise LogicError(f"universe mismatch: {a.universe} vs {b.universe}")
    if len(a.universe) > MAX_EXACT_VARS:
        raise LogicError(f"universe of {len(a.universe)} variables is too large for exhaustive checking")
    return all(a.evaluate(x) == b.evaluate(x) for x in assignments(a.universe))


# Cubes are (value, care) bit masks; bit i corresponds to universe[i].


def _term_to_cube(term: Term, pos: Mapping[str, int]) -> tuple[int, int]:
    value = care = 0
    for name, pol in term:
        bit = 1 << pos[name]
        care |= bit
        if pol:
            value |= bit
    return value, care


def _cube_to_term(cube: tuple[int, int], universe: Sequence[str]) -> Term:
    value, care = cube
    return tuple((v, bool(value >> i & 1)) for i, v in enumerate(universe) if care >> i & 1)


def _expand(cube: tuple[int, int], n: int) -> list[int]:
    value, care = cube
    free = [i for i in range(n) if not care >> i & 1]
    out = []
    for bits in range(1 << len(free)):
        m = value
        for k, i in enumerate(free):
            if bits >> k & 1:
                m |= 1 << i
        out.append(m)
    return out


def _minterms(dnf: BooleanDNF) -> set[int]:
    pos = {v: i for i, v in enumerate(dnf.universe)}
    out: set[int] = set()
    for term in dnf.terms:
        out.update(_expand(_term_to_cube(term, pos), len(dnf.universe)))
    return out


def _prime_implicants(cover: set[int], n: int) -> list[tuple[int, int]]:
    full = (1 << n) - 1
    current = {(m, full) for m in cover}
    primes: set[tuple[int, int]] = set()
    while current:
        merged: set[tuple[int, int]] = set()
        used: set[tuple[int, int]] = set()
        by_care: dict[int, list[tuple[int, int]]] = {}
        for c in current:
            by_care.setdefault(c[1], []).append(c)
        for care, group in by_care.items():
            values = {v for v, _ in group}
            for v in values:
                for i in range(n):
                    bit = 1 << i
                    if care & bit and not v & bit and (v | bit) in values:
                        merged.add((v, care & ~bit))
                        used.add((v, care))
                        used.add((v | bit, care))
        primes.update(current - used)
        current = merged
    return sorted(primes, key=lambda c: (-_popcount(~c[1] & full), c[1], c[0]))


def _popcount(x: int) -> int:
    return bin(x).count("1")


def _covers(cube: tuple[int, int], m: int) -> bool:
    value, care = cube
    return (m & care) == value


def _min_cover(primes: list[tuple[int, int]], on: list[int], n: int) -> list[tuple[int, int]]:
    """Exact minimum cover (fewest terms, then fewest literals) with deterministic ties.

    Essential implicants are taken first; the rest is an exhaustive branch-and-bound
    search over Petrick's product, which is small for the feature counts used here.
    """
    covering = {m: [i for i, p in enumerate(primes) if _covers(p, m)] for m in on}
    chosen: set[int] = set()
    remaining = set(on)
    for m in on:
        if len(covering[m]) == 1:
            chosen.add(covering[m][0])
    for i in chosen:
        remaining -= {m for m in remaining if _covers(primes[i], m)}

    lits = [_popcount(p[1]) for p in primes]
    best: list = [None]

    def cost(sel):
        return (len(sel), sum(lits[i] for i in sel), sorted(sel))

    def search(rem: frozenset, sel: tuple):
        if best[0] is not None and len(sel) > len(best[0]):
            return
        if not rem:
            if best[0] is None or cost(sel) < cost(best[0]):
                best[0] = sel
            return
        if best[0] is not None and len(sel) + 1 > len(best[0]):
            return
        # branch on the hardest-to-cover minterm
        m = min(rem, key=lambda x: (len(covering[x]), x))
        for i in covering[m]:
            search(frozenset(x for x in rem if not _covers(primes[i], x)), tuple(sorted(sel + (i,))))

    search(frozenset(remaining), tuple(sorted(chosen)))
    return [primes[i] for i in best[0]]


def _greedy(dnf: BooleanDNF) -> BooleanDNF:
    """Absorption and adjacency merging only; sound for any universe size, not minimal."""
    terms = {frozenset(t) for t in dnf.terms}
    changed = True
    while changed:
        changed = False
        for a in sorted(terms, key=lambda t: (len(t), sorted(t))):
            for b in list(terms):
                if a is not b and a < b:
                    terms.discard(b)
                    changed = True
        for a in sorted(terms, key=lambda t: (len(t), sorted(t))):
            for b in sorted(terms, key=lambda t: (len(t), sorted(t))):
                diff = a ^ b
                if len(a) == len(b) and len(diff) == 2:
                    (n1, p1), (n2, p2) = sorted(diff)
                    if n1 == n2 and p1 != p2:
                        terms -= {a, b}
                        terms.add(a & b)
                        changed = True
                        break
            if changed:
                break
    return BooleanDNF(dnf.universe, tuple(tuple(t) for t in terms))


def minimize(
    dnf: BooleanDNF,
    dont_cares: BooleanDNF | None = None,
    method: str = "exact",
) -> BooleanDNF:
    """Minimise a DNF with Quine-McCluskey prime generation and an exact Petrick cover.

    ``dont_cares`` (same universe) lists assignments whose output is free.
    ``method="greedy"`` skips enumeration and is the only option above 24 variables.
    """
    if method == "greedy":
        return _greedy(dnf)
    if method != "exact":
        raise LogicError(f"unknown minimisation method {method!r}")
    n = len(dnf.universe)
    if n > MAX_EXACT_VARS:
        raise LogicError(
            f"{n} variables exceed the exact limit of {MAX_EXACT_VARS}; use method='greedy'"
        )
    on = _minterms(dnf)
    dc: set[int] = set()
    if dont_cares is not None:
        if dont_cares.universe != dnf.universe:
            raise LogicError("don't-care set uses a different universe")
        dc = _minterms(dont_cares) - on
    if not on:
        return BooleanDNF.false(dnf.universe)
    if len(on | dc) == 1 << n:
        return BooleanDNF.true(dnf.universe)
    primes = _prime_implicants(on | dc, n)
    primes = [p for p in primes if any(_covers(p, m) for m in on)]
    cover = _min_cover(primes, sorted(on), n)
    return BooleanDNF(dnf.universe, tuple(_cube_to_term(c, dnf.universe) for c in cover))
