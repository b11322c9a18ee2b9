"""Exact integer/rational verification of the closed-form index bounds.

Everything here runs in exact arithmetic (ints and fractions).  The central
computation enumerates the possible failures of the degree bound
ind_S >= (d-1)/2 for even harmonic maps: combining the derived lower bound
on ind_S with the nullity constraints produces a finite case list, and the
enumeration re-derives both the m <= 6 search cutoff and the exceptional
set {(2,3), (2,4), (4,10)} from scratch.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction

from .errors import ValidationError

# Exact rational carrier: reduced by construction, positive denominator,
# arbitrary-precision integer parts.
RationalBound = Fraction


def ceil_int(x: Fraction | int) -> int:
    """Smallest integer >= x, exact."""
    return math.ceil(Fraction(x))


def _check_positive_int(value, name: str) -> int:
    if not isinstance(value, int) or isinstance(value, bool) or value < 1:
        raise ValidationError(f"{name} must be a positive integer, got {value!r}")
    return value


@dataclass(frozen=True)
class CaseTriple:
    """A candidate (m, d, nu) in the enumeration of degree-bound failures."""

    m: int
    d: int
    nu: int

    def __post_init__(self):
        _check_positive_int(self.m, "m")
        _check_positive_int(self.d, "d")
        _check_positive_int(self.nu, "nu")
        if self.m % 2 or self.m < 2:
            raise ValidationError("m must be even and >= 2")
        if self.nu % 2 == 0:
            raise ValidationError("nullity candidate nu must be odd")
        if self.nu < 2 * self.m + 1:
            raise ValidationError("linearly full maps have nullity >= 2m+1")
        if self.d < self.m * (self.m + 1) // 2:
            raise ValidationError("degree below the minimal-area floor m(m+1)/2")


# ---------------------------------------------------------------------------
# closed-form bounds

def odd_floor_sqrt(x: int) -> int:
    """Largest odd k with k*k <= x."""
    _check_positive_int(x, "x")
    r = math.isqrt(x)
    return r if r % 2 else r - 1


def ind_E_lower_bound(m: int, d: int) -> int:
    """Energy-index floor 2(m-1)(2d - [sqrt(8d+1)]_odd + 2)."""
    _check_positive_int(m, "m")
    _check_positive_int(d, "d")
    if d < m * (m + 1) // 2:
        raise ValidationError(f"degree {d} below the minimal-area floor "
                              f"{m * (m + 1) // 2} for m = {m}")
    return 2 * (m - 1) * (2 * d - odd_floor_sqrt(8 * d + 1) + 2)


def ind_S_lower_bound(m: int, d: int, nu: int) -> Fraction:
    """Spectral-index floor ((2d - nu + 2)(m-1) + 2d - m - m^2) / (2m+1).

    Exact rational; callers apply integrality (ceil) separately.  Inputs are
    only sanity-checked so the m = 1 degeneration remains inspectable.
    """
    _check_positive_int(m, "m")
    _check_positive_int(d, "d")
    _check_positive_int(nu, "nu")
    return Fraction((2 * d - nu + 2) * (m - 1) + 2 * d - m - m * m, 2 * m + 1)


def veronese_closed_forms(m: int, include_projective: bool | None = None):
    """(degree, spectral index on the sphere, spectral index on the quotient).

    The quotient value exists only for even m; it is None for odd m unless
    explicitly requested, which is an error.
    """
    _check_positive_int(m, "m")
    if include_projective and m % 2:
        raise ValidationError(f"m = {m} is odd: the map does not descend to "
                              "the projective plane")
    rp2 = m * (m - 1) // 2 if m % 2 == 0 else None
    return (m * (m + 1) // 2, m * m, rp2)


# ---------------------------------------------------------------------------
# enumeration of degree-bound failures

ENUMERATION_CONSTRAINTS = frozenset({"even_m", "nullity_floor", "area_floor"})


def _failure_window(m: int, nu: int, area_floor: bool) -> tuple[int, int]:
    """Degree interval [d_lo, d_hi] compatible with a failure at (m, nu).

    d_hi comes from the failure condition
        (2m-2) nu + 2m^2 + 3 - 4m >= (2m-1) d,
    d_lo from the nullity-degree inequality 8d >= nu^2 - 1 and (optionally)
    the minimal-area floor d >= m(m+1)/2.
    """
    d_lo = ceil_int(Fraction(nu * nu - 1, 8))
    d_lo = max(d_lo, 1)
    if area_floor:
        d_lo = max(d_lo, m * (m + 1) // 2)
    d_hi = ((2 * m - 2) * nu + 2 * m * m + 3 - 4 * m) // (2 * m - 1)
    return d_lo, d_hi


def enumerate_exceptions(drop: frozenset | set = frozenset(),
                         m_max: int = 64) -> set[tuple[int, int]]:
    """All (m, d) where the degree bound ind_S >= (d-1)/2 can possibly fail.

    Brute force in exact integers over m <= m_max (far above the re-derived
    cutoff, so the ceiling is verified rather than assumed).  `drop` names
    constraints to omit for negative controls: 'even_m', 'nullity_floor',
    'area_floor'.  Removing constraints can only enlarge the output.
    """
    drop = frozenset(drop)
    unknown = drop - ENUMERATION_CONSTRAINTS
    if unknown:
        raise ValidationError(f"unknown constraints {sorted(unknown)}; "
                              f"known: {sorted(ENUMERATION_CONSTRAINTS)}")
    out: set[tuple[int, int]] = set()
    for m in range(2, m_max + 1):
        if "even_m" not in drop and m % 2:
            continue
        nu = 1 if "nullity_floor" in drop else 2 * m + 1
        # any feasible nu satisfies nu + m >= d >= (nu^2-1)/8, hence
        # nu^2 - 8 nu - (8m+1) <= 0
        nu_cap = 4 + math.isqrt(8 * m + 17)
        while nu <= nu_cap:
            d_lo, d_hi = _failure_window(m, nu, "area_floor" not in drop)
            out.update((m, d) for d in range(d_lo, d_hi + 1))
            nu += 2
    return out


def max_feasible_nullity(m: int) -> int | None:
    """Largest odd nu admitting any degree in the failure system at this m.

    Uses only the failure condition and the nullity-degree inequality (no
    floors), mirroring the per-m elimination: when the result is below
    2m+1, the linear-fullness floor rules the whole m out.
    """
    _check_positive_int(m, "m")
    if m < 2:
        raise ValidationError("per-m elimination applies for m >= 2")
    best = None
    nu = 1
    nu_cap = 4 + math.isqrt(8 * m + 17)
    while nu <= nu_cap:
        d_lo, d_hi = _failure_window(m, nu, area_floor=False)
        if d_lo <= d_hi:
            best = nu
        nu += 2
    return best


def derived_search_cutoff(m_max: int = 200) -> int:
    """Largest m consistent with the coarse failure chain, in exact integers.

    Chaining nu + m >= d, 8d >= nu^2 - 1 and the area floor d >= m(m+1)/2
    gives 8 + sqrt(8m+1) >= m(m-1)/2; the returned value is the largest
    integer m >= 2 satisfying it (expected: 6).
    """
    best = None
    for m in range(2, m_max + 1):
        lhs = m * (m - 1) // 2 - 8
        if lhs <= 0 or lhs * lhs <= 8 * m + 1:
            best = m
    return best


# ---------------------------------------------------------------------------
# induction-step contradiction chains

@dataclass(frozen=True)
class TraceStep:
    inequality_name: str
    lhs: Fraction
    rhs: Fraction
    relation: str               # ">", ">=", "<="
    source_citation: str
    holds: bool


@dataclass(frozen=True)
class ProofTrace:
    name: str
    steps: tuple
    contradiction: bool

    def to_json(self) -> str:
        return json.dumps({
            "name": self.name,
            "contradiction": self.contradiction,
            "steps": [{
                "inequality_name": s.inequality_name,
                "lhs": str(s.lhs),
                "rhs": str(s.rhs),
                "relation": s.relation,
                "source_citation": s.source_citation,
                "holds": s.holds,
            } for s in self.steps],
        }, indent=2)


def _step(name: str, lhs, rhs, relation: str, source: str) -> TraceStep:
    lhs, rhs = Fraction(lhs), Fraction(rhs)
    holds = {"": lhs > rhs, ">": lhs > rhs, ">=": lhs >= rhs,
             "<=": lhs <= rhs}[relation]
    return TraceStep(name, lhs, rhs, relation, source, holds)


def verify_induction_step(k: int, *, strict_degree: bool = True) -> dict:
    """Replay the two contradiction chains of the k -> k+1 induction.

    Gap chain: if the (k+1)-st normalized eigenvalue supremum exceeded the
    conjectured value plus one bubble, the extremal map would have degree
    d > 2k+3 yet spectral index at most k+1 — impossible by the degree
    bound.  Equality chain (k >= 2): an attaining metric forces d = 2k+1 > 3
    where the degree bound is strict, again impossible.  `strict_degree`
    False tampers the gap premise (d = 2k+3 instead of > 2k+3); the chain
    must then fail to close, which is the negative control.
    """
    _check_positive_int(k, "k")
    # Gap chain: premise forces degree d > 2k+3 (so d >= 2k+4 for integer d)
    # while the extremal map has ind_S <= k+1.  The degree bound gives
    # ind_S >= (d-1)/2, so the chain closes iff (d-1)/2 > k+1.
    d_gap = 2 * k + 4 if strict_degree else 2 * k + 3
    gap_steps = (
        _step("degree_window", d_gap, 2 * k + 3,
              ">" if strict_degree else ">=", "premise:gap-violation-degree"),
        _step("index_floor_exceeds_cap", Fraction(d_gap - 1, 2), k + 1, ">",
              "bound:projective-degree vs premise:extremal-index-cap"),
    )
    gap = ProofTrace(name="gap_chain", steps=gap_steps,
                     contradiction=all(s.holds for s in gap_steps))
    out = {"gap_chain": gap}
    if k >= 2:
        # Equality chain: an attaining metric forces d = 2k+1, which exceeds
        # 3 exactly when k >= 2; above degree 3 the degree bound is strict,
        # so ind_S > (d-1)/2 = k while the cap says ind_S <= k.
        d_eq = 2 * k + 1
        eq_steps = (
            _step("degree_above_three", d_eq, 3, ">",
                  "premise:equality-attainment-degree"),
            _step("strict_floor_meets_cap", Fraction(d_eq - 1, 2), k, ">=",
                  "bound:projective-degree-strict vs "
                  "premise:extremal-index-cap"),
        )
        out["equality_chain"] = ProofTrace(
            name="equality_chain", steps=eq_steps,
            contradiction=all(s.holds for s in eq_steps))
    return out


# ---------------------------------------------------------------------------
# disjoint-union eigenvalue limits

def composite_limit(k: int, include_projective: bool = True) -> Fraction:
    """Normalized k-th eigenvalue of the limit union, as a multiple of pi.

    The union holds k-1 round spheres (normalized first eigenvalue 8*pi)
    and, if requested, one projective plane (12*pi), with areas in ratio
    2 : ... : 2 : 3 so every piece shares the same first eigenvalue; k
    components contribute k locally-constant functions, so the union's k-th
    eigenvalue is that shared value.  Returns the exact coefficient of pi.
    """
    _check_positive_int(k, "k")
    pieces = [(Fraction(2), Fraction(8))] * (k - 1 if include_projective else k)
    if include_projective:
        pieces.append((Fraction(3), Fraction(12)))
    rates = {normalized / area for area, normalized in pieces}
    if len(rates) != 1:
        raise ValidationError("component areas are not tuned to a common "
                              "first eigenvalue")
    lam = rates.pop()
    total_area = sum(area for area, _ in pieces)
    return lam * total_area
