"""Masking in the exponent of a prime-order group, for reusable setups.

Shares are wrapped as pk_j^x = G^(sk_j * x) so the dealer never ships bare
exponents; holders unwrap with sk_j^-1 mod q. Reconstruction happens in the
exponent (products of powers with Lagrange coefficients), verification checks
c2^s * c1 == G^(sum of PRG(k_i, label)), and the aggregate comes back as
G^(sum of inputs), decoded by baby-step giant-step while the sum stays below a
known bound. The point of the exercise: Setup can run once and be reused,
because nothing round-specific ever leaves the exponent except the fresh
round keys s_i.

Exponent arithmetic lives in Z_q, so this module reuses the scalar masking
math with q as the field modulus and lifts the results through G^x.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from math import isqrt
from typing import Sequence

from .algebra import PrimeModulus, is_probable_prime, lagrange_coeffs_at
from .errors import LabelMismatch, NotFound, ZeroAuthKey
from .maskmac import RoundLabel, label_coeff

__all__ = [
    "GroupParams",
    "KeyPair",
    "GroupMaskedPair",
    "TOY_GROUP",
    "DEFAULT_GROUP",
    "wrap_share",
    "unwrap_share",
    "exp_lagrange_at",
    "exp_lagrange_at_zero",
    "group_mask_vector",
    "group_aggregate",
    "combine_key_lifts",
    "group_verify",
    "group_unmask",
    "bsgs",
]


class GroupParams:
    """A prime-order-q subgroup of Z_P^*, generated by g."""

    __slots__ = ("p", "q", "g")

    def __init__(self, p: int, q: int, g: int):
        if not is_probable_prime(p):
            raise ValueError(f"group modulus {p} is not prime")
        if not is_probable_prime(q):
            raise ValueError(f"subgroup order {q} is not prime")
        if (p - 1) % q != 0:
            raise ValueError("q must divide p - 1")
        g %= p
        if g in (0, 1) or pow(g, q, p) != 1:
            raise ValueError("g does not generate an order-q subgroup")
        self.p = p
        self.q = q
        self.g = g

    def exponent_field(self) -> PrimeModulus:
        """Z_q, where all share/key arithmetic for this variant happens."""
        return PrimeModulus(self.q)

    def lift(self, x: int) -> int:
        """G^x for an exponent x (reduced mod q)."""
        return pow(self.g, x % self.q, self.p)

    def mul(self, a: int, b: int) -> int:
        return (a * b) % self.p

    def exp(self, base: int, e: int) -> int:
        return pow(base, e % self.q, self.p)

    def inv(self, a: int) -> int:
        return pow(a, self.p - 2, self.p)

    def __repr__(self) -> str:
        return f"GroupParams(p={self.p}, q={self.q}, g={self.g})"


# 61-bit-order toy group: P = 2q + 1 is a safe prime, g = 4 = 2^2 lands in the
# order-q quadratic-residue subgroup. Big enough for 2^32 BSGS bounds, small
# enough to keep exhaustive tests quick.
TOY_GROUP = GroupParams(
    p=4611686018427377339,
    q=2305843009213688669,
    g=4,
)

# 256-bit-order safe-prime group for realistic runs (generated once, pinned).
DEFAULT_GROUP = GroupParams(
    p=115792089237316195423570985008687907853269984665640564039457584007913129870127,
    q=57896044618658097711785492504343953926634992332820282019728792003956564935063,
    g=4,
)


@dataclass(frozen=True)
class KeyPair:
    """Unwrapping keypair: sk in [1, q-1], pk = G^sk."""

    sk: int
    pk: int

    @classmethod
    def generate(cls, params: GroupParams, rng: random.Random) -> KeyPair:
        sk = 1 + rng.randrange(params.q - 1)
        return cls(sk=sk, pk=params.lift(sk))


def wrap_share(exponent_value: int, recipient_pk: int, params: GroupParams) -> int:
    """pk_j^x = G^(sk_j * x): dealt form of a share destined for holder j."""
    return pow(recipient_pk, exponent_value % params.q, params.p)


def unwrap_share(wrapped: int, sk: int, params: GroupParams) -> int:
    """Strip the holder's key: (G^(sk*x))^(sk^-1 mod q) = G^x."""
    sk_inv = pow(sk, params.q - 2, params.q)
    return pow(wrapped, sk_inv, params.p)


def exp_lagrange_at(
    points: Sequence[tuple[int, int]], x0: int, t: int, params: GroupParams
) -> int:
    """Interpolate in the exponent: product of Y_j^(lambda_j) over t points.

    points are (share id, G^(f(id))) pairs; the result is G^(f(x0)).
    """
    if len(points) < t:
        from .errors import InsufficientShares

        raise InsufficientShares(f"need {t} points, got {len(points)}")
    use = list(points[:t])
    xs = [x for x, _ in use]
    lams = lagrange_coeffs_at(xs, x0 % params.q, params.q)
    acc = 1
    for (_, y), lam in zip(use, lams):
        acc = (acc * pow(y, lam, params.p)) % params.p
    return acc


def exp_lagrange_at_zero(
    points: Sequence[tuple[int, int]], t: int, params: GroupParams
) -> int:
    """G^(f(0)) from t wrapped-then-unwrapped shares G^(f(id))."""
    if any(x % params.q == 0 for x, _ in points[:t]):
        raise ValueError("x = 0 is reserved for the secret")
    return exp_lagrange_at(points, 0, t, params)


# ---- masking in the exponent -------------------------------------------------------

@dataclass(frozen=True)
class GroupMaskedPair:
    """(G^c1, G^c2) for one element, bound to one label."""

    c1: int
    c2: int
    round: int
    index: int

    @property
    def label(self) -> RoundLabel:
        return RoundLabel(self.round, self.index)


def group_mask_vector(
    values: Sequence[int],
    masking_secret: int,
    self_key: int,
    s: int,
    round_no: int,
    params: GroupParams,
) -> list[GroupMaskedPair]:
    """Compute the scalar (c1, c2) in Z_q, then lift both into the group.

    The contributor knows all its exponents, so the scalar math runs locally;
    only group elements go on the wire.
    """
    q = params.q
    if s % q == 0:
        raise ZeroAuthKey("round authentication key is zero; resample the round")
    s_inv = pow(s, q - 2, q)
    out = []
    for idx, w in enumerate(values):
        h = label_coeff(RoundLabel(round_no, idx), q)
        c1 = (masking_secret * h + w) % q
        c2 = ((self_key * h - c1) * s_inv) % q
        out.append(
            GroupMaskedPair(
                c1=params.lift(c1), c2=params.lift(c2), round=round_no, index=idx
            )
        )
    return out


def group_aggregate(
    vectors: Sequence[Sequence[GroupMaskedPair]], params: GroupParams
) -> list[GroupMaskedPair]:
    """Componentwise product: multiplying lifts adds the hidden exponents."""
    if not vectors:
        raise ValueError("nothing to aggregate")
    length = len(vectors[0])
    for v in vectors:
        if len(v) != length:
            raise LabelMismatch("vectors of different lengths")
    out = []
    for i in range(length):
        first = vectors[0][i]
        c1, c2 = first.c1, first.c2
        for v in vectors[1:]:
            pair = v[i]
            if pair.label != first.label:
                raise LabelMismatch(f"label {pair.label} != {first.label}")
            c1 = (c1 * pair.c1) % params.p
            c2 = (c2 * pair.c2) % params.p
        out.append(GroupMaskedPair(c1=c1, c2=c2, round=first.round, index=first.index))
    return out


def combine_key_lifts(key_lifts: Sequence[int], params: GroupParams) -> int:
    """Product of G^(k_i) values -> G^k, the verification base."""
    acc = 1
    for y in key_lifts:
        acc = (acc * y) % params.p
    return acc


def group_verify(
    agg: Sequence[GroupMaskedPair],
    g_k: int,
    s: int,
    round_no: int,
    params: GroupParams,
) -> bool:
    """Check c2^s * c1 == G^(sum of PRG(k_i, label)) for every element.

    The right side is (G^k)^H(label): the label coefficient is public, so the
    verifier only needs the recovered lift of the combined key.
    """
    for idx, pair in enumerate(agg):
        if pair.label != RoundLabel(round_no, idx):
            raise LabelMismatch(f"aggregate label {pair.label} out of order")
        h = label_coeff(RoundLabel(round_no, idx), params.q)
        lhs = (pow(pair.c2, s % params.q, params.p) * pair.c1) % params.p
        if lhs != pow(g_k, h, params.p):
            return False
    return True


def group_unmask(
    agg: Sequence[GroupMaskedPair],
    g_pad_base: int,
    round_no: int,
    params: GroupParams,
) -> list[int]:
    """Strip the pad: G^(sum w) = c1 / (G^(sum V_i(0)))^H(label), per element."""
    out = []
    for idx, pair in enumerate(agg):
        if pair.label != RoundLabel(round_no, idx):
            raise LabelMismatch(f"aggregate label {pair.label} out of order")
        h = label_coeff(RoundLabel(round_no, idx), params.q)
        pad = pow(g_pad_base, h, params.p)
        out.append((pair.c1 * params.inv(pad)) % params.p)
    return out


def bsgs(h: int, bound: int, params: GroupParams) -> int:
    """Discrete log of h base G, assuming it lies in [0, bound).

    Classic baby-step giant-step: O(sqrt(bound)) time and memory. Raises
    NotFound when no exponent below the bound matches.
    """
    if bound < 1:
        raise ValueError("bound must be >= 1")
    if bound > (1 << 32):
        raise ValueError("bound above 2^32; dense decode would be impractical")
    m = isqrt(bound - 1) + 1
    table: dict[int, int] = {}
    e = 1
    for j in range(m):
        table.setdefault(e, j)
        e = (e * params.g) % params.p
    # factor = G^(-m)
    factor = params.inv(pow(params.g, m, params.p))
    gamma = h % params.p
    for i in range(m):
        j = table.get(gamma)
        if j is not None:
            x = i * m + j
            if x < bound:
                return x
        gamma = (gamma * factor) % params.p
    raise NotFound(f"no exponent below {bound} matches")
