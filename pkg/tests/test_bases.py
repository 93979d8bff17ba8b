"""Equivariant linear-map catalogs against independent combinatorial oracles.

The dimension of the space of permutation-equivariant linear maps from
order-k to order-l tensors equals the number of orbits of index patterns
(tuples in [m]^{k+l}) under the group's diagonal relabeling action, provided
m is at least k+l. Counting those orbits by brute force gives an oracle for
every catalog size that shares no code with the catalogs themselves; the
rank checks then certify that the catalogs actually span.
"""

import itertools

import numpy as np
import pytest

from zznet.bases import (ADJOINT_SM11, ADJOINT_SM22, ADJOINT_ST11, SM22_NAMES,
                         SM_SIZES, STAB0_SIZES, SpaceTag, catalog_hash,
                         catalog_sm, catalog_stab0, check_equivariance,
                         evaluation_matrix, fused_first_layer, rank_pivoted,
                         span_rank, xi_isomorphism)
from zznet.cloud import enumerate_sm, enumerate_stab0, gram, permute_array

from conftest import cx


def count_orbits(m: int, order: int, perms) -> int:
    """Orbits of [m]^order under simultaneous relabeling by the given maps."""
    reps = set()
    for tup in itertools.product(range(m), repeat=order):
        canon = min(tuple(p.mapping[i] for i in tup) for p in perms)
        reps.add(canon)
    return len(reps)


# ---------------------------------------------------------------------------
# sizes: catalog length == orbit count == span rank


@pytest.mark.parametrize("k,l", sorted(STAB0_SIZES))
def test_stab0_catalog_size_matches_orbit_count(k, l):
    m = 5
    want = count_orbits(m, k + l, enumerate_stab0(m))
    assert STAB0_SIZES[(k, l)] == want
    assert len(catalog_stab0(k, l, m)) == want


@pytest.mark.parametrize("k,l", sorted(SM_SIZES))
def test_sm_catalog_size_matches_orbit_count(k, l):
    m = 5
    want = count_orbits(m, k + l, enumerate_sm(m))
    assert SM_SIZES[(k, l)] == want
    assert len(catalog_sm(k, l, m)) == want


@pytest.mark.parametrize("k,l,want", [(2, 1, 15), (2, 2, 52)])
def test_stab0_catalogs_span(k, l, want):
    assert span_rank(catalog_stab0(k, l, 5), k, 5) == want


def test_sm_matrix_catalog_spans():
    assert span_rank(catalog_sm(2, 2, 5), 2, 5) == 15


def test_unknown_orders_rejected():
    with pytest.raises(ValueError):
        catalog_stab0(3, 0, 4)
    with pytest.raises(ValueError):
        catalog_sm(1, 0, 4)
    with pytest.raises(ValueError):
        catalog_sm(2, 2, 1)


# ---------------------------------------------------------------------------
# equivariance of every catalog element, exhaustively over the group


@pytest.mark.parametrize("m", [4, 5])
def test_all_catalog_elements_equivariant(m, rng):
    catalogs = [catalog_stab0(k, l, m) for (k, l) in sorted(STAB0_SIZES)]
    catalogs += [catalog_sm(k, l, m) for (k, l) in sorted(SM_SIZES)]
    for maps in catalogs:
        for bm in maps:
            rep = check_equivariance(bm.apply, bm.tag, m, trials=2, rng=rng,
                                     name=bm.name)
            assert rep.max_deviation <= 1e-10, bm.name


def test_check_equivariance_flags_a_broken_map():
    # position-dependent scaling is not permutation equivariant
    broken = lambda v: v * np.arange(len(v))
    rep = check_equivariance(broken, SpaceTag("sm", 1, 1), m=4)
    assert rep.max_deviation > 0.1
    assert not rep.passed(1e-10)


# ---------------------------------------------------------------------------
# adjoint tables


def frob(a, b):
    return np.vdot(a, b)


def test_sm22_adjoint_table(rng):
    m = 5
    maps = catalog_sm(2, 2, m)
    T, S = cx(rng, m, m), cx(rng, m, m)
    for i, j in enumerate(ADJOINT_SM22):
        assert ADJOINT_SM22[j] == i  # pairing is an involution
        lhs = frob(maps[i].apply(T), S)
        rhs = frob(T, maps[j].apply(S))
        assert abs(lhs - rhs) < 1e-9, SM22_NAMES[i]


def test_st11_and_sm11_adjoint_tables(rng):
    m = 5
    v, w = cx(rng, m), cx(rng, m)
    for maps, table in ((catalog_stab0(1, 1, m), ADJOINT_ST11),
                        (catalog_sm(1, 1, m), ADJOINT_SM11)):
        for i, j in enumerate(table):
            assert table[j] == i
            assert abs(frob(maps[i].apply(v), w) - frob(v, maps[j].apply(w))) < 1e-9


def test_sm22_names_align_with_catalog():
    got = tuple(bm.name.split("_", 1)[1] for bm in catalog_sm(2, 2, 4))
    assert got == SM22_NAMES


# ---------------------------------------------------------------------------
# the fused first layer


@pytest.mark.parametrize("m", [3, 5, 9])
def test_fused_first_layer_matches_explicit_catalog(m, rng):
    z = cx(rng, 4, m)
    got = fused_first_layer(z)
    assert got.shape == (4, 15, m)
    maps = catalog_stab0(2, 1, m)
    for b in range(4):
        T = gram(z[b]).values
        explicit = np.stack([bm.apply(T) for bm in maps])
        np.testing.assert_allclose(got[b], explicit, atol=1e-12, rtol=1e-12)


def test_fused_first_layer_channel_axis(rng):
    z = cx(rng, 2, 3, 6)  # batch of multichannel clouds
    out = fused_first_layer(z)
    assert out.shape == (2, 3, 15, 6)
    np.testing.assert_allclose(out[1, 2], fused_first_layer(z[1, 2]), atol=1e-14)


# ---------------------------------------------------------------------------
# the lifting construction


def test_lift_of_entry0_is_the_identity(rng):
    m = 5
    entry0 = catalog_stab0(1, 0, m)[0]
    lifted = xi_isomorphism(entry0, m)
    v = cx(rng, m)
    np.testing.assert_allclose(lifted.apply(v), v, atol=1e-14)


def test_lift_of_sum_is_sum_broadcast(rng):
    m = 5
    total = catalog_stab0(1, 0, m)[1]
    lifted = xi_isomorphism(total, m)
    v = cx(rng, m)
    np.testing.assert_allclose(lifted.apply(v), np.full(m, v.sum()), atol=1e-12)


def test_lifted_maps_are_sm_equivariant(rng):
    m = 4
    for (k, l) in ((2, 1), (1, 0)):
        for bm in catalog_stab0(k, l, m):
            lifted = xi_isomorphism(bm, m)
            assert lifted.tag.group == "sm"
            assert (lifted.tag.k, lifted.tag.l) == (k, l + 1)
            rep = check_equivariance(lifted.apply, lifted.tag, m, trials=2,
                                     rng=rng, name=lifted.name)
            assert rep.max_deviation <= 1e-10, lifted.name


def test_lift_rejects_sm_input():
    with pytest.raises(ValueError):
        xi_isomorphism(catalog_sm(1, 1, 4)[0], 4)


# ---------------------------------------------------------------------------
# rank machinery


def test_rank_pivoted_known_values(rng):
    assert rank_pivoted(np.eye(4)) == 4
    assert rank_pivoted(np.zeros((3, 5))) == 0
    v = cx(rng, 6)
    assert rank_pivoted(np.outer(v, v.conj())) == 1
    A = cx(rng, 3, 7)
    assert rank_pivoted(np.vstack([A, A.sum(axis=0)])) == 3


def test_evaluation_matrix_needs_enough_samples():
    # five independent scalar functionals times one fixed output direction
    # are indistinguishable from fewer on too few sample inputs
    maps = catalog_stab0(2, 1, 5)
    rich = rank_pivoted(evaluation_matrix(maps, 2, 5, samples=8))
    starved = rank_pivoted(evaluation_matrix(maps, 2, 5, samples=1))
    assert rich == 15
    assert starved < 15


def test_catalog_hash_is_stable():
    assert catalog_hash() == catalog_hash()
    assert len(catalog_hash()) == 32
