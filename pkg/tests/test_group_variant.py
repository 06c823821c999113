"""Exponent-carried shares and masking: wrap/unwrap, interpolation in the
exponent, group masking pipeline, BSGS decoding, cross-checks against the
scalar pipeline as oracle.
"""

from __future__ import annotations

import random
import time

import pytest

from secel.algebra import PrimeModulus, is_probable_prime
from secel.errors import InsufficientShares, LabelMismatch, NotFound, ZeroAuthKey
from secel.group_variant import (
    DEFAULT_GROUP,
    TOY_GROUP,
    GroupMaskedPair,
    GroupParams,
    KeyPair,
    bsgs,
    combine_key_lifts,
    exp_lagrange_at,
    exp_lagrange_at_zero,
    group_aggregate,
    group_mask_vector,
    group_unmask,
    group_verify,
    unwrap_share,
    wrap_share,
)
from secel.maskmac import (
    RoundLabel,
    aggregate_vectors,
    label_coeff,
    mask_vector,
    sum_auth_keys,
    unmask_vector,
    verify_vector,
)

# order-101 subgroup of Z_607^* for hand-checkable examples
G101 = GroupParams(p=607, q=101, g=122)


# ---- parameters --------------------------------------------------------------------


def test_pinned_groups_are_safe_prime_subgroups():
    for params in (TOY_GROUP, DEFAULT_GROUP):
        assert is_probable_prime(params.p)
        assert is_probable_prime(params.q)
        assert params.p == 2 * params.q + 1
        assert pow(params.g, params.q, params.p) == 1
        assert params.g != 1
    assert TOY_GROUP.q.bit_length() == 61
    assert DEFAULT_GROUP.q.bit_length() == 256


def test_group_params_validation():
    with pytest.raises(ValueError):
        GroupParams(p=607, q=100, g=122)  # composite order
    with pytest.raises(ValueError):
        GroupParams(p=608, q=101, g=122)  # composite modulus
    with pytest.raises(ValueError):
        GroupParams(p=607, q=103, g=122)  # order does not divide p-1
    with pytest.raises(ValueError):
        GroupParams(p=607, q=101, g=606)  # element of order 2, not q


def test_exponent_field_matches_order():
    assert G101.exponent_field().p == 101
    assert G101.lift(6) == pow(122, 6, 607)


# ---- wrap / unwrap ------------------------------------------------------------------


def test_wrap_unwrap_examples():
    # x=0 wraps to the identity and unwraps to the identity
    kp = KeyPair.generate(G101, random.Random(20))
    assert wrap_share(0, kp.pk, G101) == 1
    assert unwrap_share(1, kp.sk, G101) == 1

    # x=17, sk=5: wrap = G^85, unwrap = G^17
    pk5 = G101.lift(5)
    wrapped = wrap_share(17, pk5, G101)
    assert wrapped == G101.lift(85)
    assert unwrap_share(wrapped, 5, G101) == G101.lift(17)


def test_wrap_is_bound_to_the_recipient_key():
    rng = random.Random(21)
    a = KeyPair.generate(TOY_GROUP, rng)
    b = KeyPair.generate(TOY_GROUP, rng)
    assert a.sk != b.sk
    for _ in range(20):
        x = rng.randrange(1, TOY_GROUP.q)
        wrapped = wrap_share(x, a.pk, TOY_GROUP)
        assert unwrap_share(wrapped, a.sk, TOY_GROUP) == TOY_GROUP.lift(x)
        assert unwrap_share(wrapped, b.sk, TOY_GROUP) != TOY_GROUP.lift(x)


def test_keypair_relation():
    rng = random.Random(22)
    for _ in range(10):
        kp = KeyPair.generate(TOY_GROUP, rng)
        assert 1 <= kp.sk < TOY_GROUP.q
        assert kp.pk == TOY_GROUP.lift(kp.sk)


# ---- interpolation in the exponent -------------------------------------------------


def test_exp_lagrange_examples():
    # t=1: the single lifted value is the answer
    assert exp_lagrange_at_zero([(3, G101.lift(9))], 1, G101) == G101.lift(9)
    # f = 4 + 2x in the exponent: {(1, G^6), (2, G^8)} -> G^4
    pts = [(1, G101.lift(6)), (2, G101.lift(8))]
    assert exp_lagrange_at_zero(pts, 2, G101) == G101.lift(4)
    with pytest.raises(InsufficientShares):
        exp_lagrange_at_zero(pts, 3, G101)
    with pytest.raises(ValueError):
        exp_lagrange_at_zero([(0, G101.lift(6)), (2, G101.lift(8))], 2, G101)


def test_exp_lagrange_matches_scalar_oracle():
    from secel.algebra import UniPoly, lagrange_at

    rng = random.Random(23)
    F = PrimeModulus(TOY_GROUP.q)
    for _ in range(50):
        t = rng.randrange(1, 5)
        f = UniPoly.random(t - 1, F, rng)
        ids = rng.sample(range(1, 10), t)
        pts = [(i, TOY_GROUP.lift(f.eval(i).value)) for i in ids]
        assert exp_lagrange_at_zero(pts, t, TOY_GROUP) == TOY_GROUP.lift(
            f.eval(0).value
        )
        x0 = rng.randrange(10, 20)
        scalar = lagrange_at([(F.element(i), f.eval(i)) for i in ids], x0, t)
        assert exp_lagrange_at(pts, x0, t, TOY_GROUP) == TOY_GROUP.lift(scalar.value)


# ---- masking pipeline ----------------------------------------------------------------


def _scalar_pipeline(field, grads, vs, ks, s, rnd):
    vectors = [mask_vector(g, v, k, s, rnd) for g, v, k in zip(grads, vs, ks)]
    return aggregate_vectors(vectors)


def test_group_verify_mirrors_scalar_tag_example():
    # one party, lifted: same identity c2^s * c1 == (G^k)^H(label)
    rng = random.Random(24)
    q = TOY_GROUP.q
    v0, ki = rng.randrange(q), rng.randrange(q)
    s = rng.randrange(1, q)
    w = rng.randrange(1024)
    pairs = group_mask_vector([w], v0, ki, s, round_no=1, params=TOY_GROUP)
    g_k = TOY_GROUP.lift(ki)
    assert group_verify(pairs, g_k, s, 1, TOY_GROUP)
    # nudging c1 by one factor of G breaks it
    bad = [
        GroupMaskedPair(
            c1=(pairs[0].c1 * TOY_GROUP.g) % TOY_GROUP.p,
            c2=pairs[0].c2,
            round=1,
            index=0,
        )
    ]
    assert not group_verify(bad, g_k, s, 1, TOY_GROUP)
    # decode: unmask then discrete-log
    out = group_unmask(pairs, TOY_GROUP.lift(v0), 1, TOY_GROUP)
    assert bsgs(out[0], 1 << 11, TOY_GROUP) == w


def test_group_pipeline_commutes_with_scalar_pipeline():
    # 500 trials: every group output is the exponent-lift of the scalar output
    rng = random.Random(25)
    F = PrimeModulus(TOY_GROUP.q)
    for trial in range(500):
        m = rng.randrange(1, 6)
        l = rng.randrange(1, 5)
        rnd = rng.randrange(100)
        vs = [F.random_element(rng) for _ in range(m)]
        ks = [F.random_element(rng) for _ in range(m)]
        s = sum_auth_keys([F.random_nonzero(rng) for _ in range(m)])
        grads = [[F.random_element(rng) for _ in range(l)] for _ in range(m)]

        scalar_agg = _scalar_pipeline(F, grads, vs, ks, s, rnd)
        group_vecs = [
            group_mask_vector(
                [g.value for g in grads[i]], vs[i].value, ks[i].value, s.value, rnd, TOY_GROUP
            )
            for i in range(m)
        ]
        group_agg = group_aggregate(group_vecs, TOY_GROUP)

        for sc, gr in zip(scalar_agg, group_agg):
            assert gr.c1 == TOY_GROUP.lift(sc.c1.value)
            assert gr.c2 == TOY_GROUP.lift(sc.c2.value)

        k_sum = ks[0]
        v_sum = vs[0]
        for k in ks[1:]:
            k_sum = k_sum + k
        for v in vs[1:]:
            v_sum = v_sum + v
        g_k = combine_key_lifts([TOY_GROUP.lift(k.value) for k in ks], TOY_GROUP)
        assert g_k == TOY_GROUP.lift(k_sum.value)
        assert verify_vector(scalar_agg, k_sum, s, rnd)
        assert group_verify(group_agg, g_k, s.value, rnd, TOY_GROUP)

        scalar_out = unmask_vector(scalar_agg, v_sum, rnd)
        group_out = group_unmask(group_agg, TOY_GROUP.lift(v_sum.value), rnd, TOY_GROUP)
        for so, go in zip(scalar_out, group_out):
            assert go == TOY_GROUP.lift(so.value)


def test_group_aggregate_label_guards():
    pairs = group_mask_vector([1, 2], 3, 4, 5, 0, TOY_GROUP)
    other = group_mask_vector([1], 3, 4, 5, 0, TOY_GROUP)
    with pytest.raises(LabelMismatch):
        group_aggregate([pairs, other], TOY_GROUP)
    with pytest.raises(ValueError):
        group_aggregate([], TOY_GROUP)
    with pytest.raises(ZeroAuthKey):
        group_mask_vector([1], 3, 4, TOY_GROUP.q, 0, TOY_GROUP)


def test_setup_reuse_across_ten_rounds():
    # fixed masking/authentication secrets from one Setup; only s_i is fresh
    rng = random.Random(26)
    q = TOY_GROUP.q
    m, l = 4, 3
    vs = [rng.randrange(q) for _ in range(m)]
    ks = [rng.randrange(q) for _ in range(m)]
    g_k = combine_key_lifts([TOY_GROUP.lift(k) for k in ks], TOY_GROUP)
    g_v = TOY_GROUP.lift(sum(vs) % q)
    for rnd in range(10):
        s = sum(rng.randrange(1, q) for _ in range(m)) % q
        if s == 0:
            s = 1
        ws = [[rng.randrange(256) for _ in range(l)] for _ in range(m)]
        vecs = [
            group_mask_vector(ws[i], vs[i], ks[i], s, rnd, TOY_GROUP) for i in range(m)
        ]
        agg = group_aggregate(vecs, TOY_GROUP)
        assert group_verify(agg, g_k, s, rnd, TOY_GROUP)
        out = group_unmask(agg, g_v, rnd, TOY_GROUP)
        for idx in range(l):
            total = sum(ws[i][idx] for i in range(m))
            assert bsgs(out[idx], 1 << 11, TOY_GROUP) == total


# ---- bsgs -----------------------------------------------------------------------------


def test_bsgs_examples():
    assert bsgs(1, 1 << 10, TOY_GROUP) == 0  # identity
    assert bsgs(G101.lift(17), 1 << 10, G101) == 17
    with pytest.raises(NotFound):
        bound = 1 << 10
        bsgs(TOY_GROUP.lift(bound + 5), bound, TOY_GROUP)
    with pytest.raises(ValueError):
        bsgs(TOY_GROUP.lift(3), (1 << 32) + 1, TOY_GROUP)
    with pytest.raises(ValueError):
        bsgs(TOY_GROUP.lift(3), 0, TOY_GROUP)


def test_bsgs_random_and_edges():
    rng = random.Random(27)
    for bound in (1, 2, 1000):
        for x in {0, bound - 1}:
            assert bsgs(TOY_GROUP.lift(x), bound, TOY_GROUP) == x
    for _ in range(100):
        x = rng.randrange(1 << 20)
        assert bsgs(TOY_GROUP.lift(x), 1 << 20, TOY_GROUP) == x


def test_bsgs_runtime_scales_as_square_root():
    # worst-case decodes at three bounds; each 16x bound step ~ 4x work
    def cost(bound, reps=30):
        h = TOY_GROUP.lift(bound - 1)
        best = float("inf")
        for _ in range(5):
            t0 = time.perf_counter()
            for _ in range(reps):
                assert bsgs(h, bound, TOY_GROUP) == bound - 1
            best = min(best, time.perf_counter() - t0)
        return best

    c10, c14, c18 = cost(1 << 10), cost(1 << 14), cost(1 << 18, reps=10) * 3
    # generous envelope: ratios should sit near 4, far from O(1) or O(bound)=16
    assert 1.5 < c14 / c10 < 12
    assert 1.5 < c18 / c14 < 12
