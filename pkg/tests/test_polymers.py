import numpy as np
import pytest

from phi4rg.errors import CapacityError, DomainError, PreconditionError
from phi4rg.lattice import TorusSpec
from phi4rg.polymers import (BlockLattice, PolymerFunctional, blocks_and_nesting, circle_product,
                             circle_table_direct, circle_table_ranked, factorization_check,
                             identity_suite, non_touching_pairs, top_scale_collapse, touching)


@pytest.fixture
def lat1():
    return BlockLattice(TorusSpec(2, 3, 1), 0)


def test_nesting():
    blocks, parent = blocks_and_nesting(TorusSpec(2, 3, 2), 1)
    assert len(blocks) == 16
    counts = np.bincount(np.asarray(list(parent.values()) if isinstance(parent, dict) else parent))
    assert np.all(counts == 4)
    with pytest.raises(DomainError):
        blocks_and_nesting(TorusSpec(2, 2, 1), 2)


def test_touching_wraps_around(lat1):
    a, b, c = lat1.polymer([0]), lat1.polymer([7]), lat1.polymer([3])
    assert touching(a, b)  # neighbours across the periodic boundary
    assert not touching(a, c)
    assert touching(a, a | c)


def test_polymer_set_operations(lat1):
    X = lat1.polymer([0, 1, 4])
    Y = lat1.polymer([1, 2])
    assert (X | Y).indices() == [0, 1, 2, 4]
    assert (X - Y).indices() == [0, 4]
    assert len(X.components()) == 2
    assert sum(1 for _ in X.subpolymers()) == 8


def test_circle_product_against_tables(lat1, rng):
    F = PolymerFunctional.random(lat1, rng)
    G = PolymerFunctional.random(lat1, rng)
    fg = circle_table_direct(F.table(), G.table())
    X = lat1.polymer([0, 2, 5])
    assert circle_product(F, G, X) == pytest.approx(fg[X.mask], rel=1e-13)
    assert np.allclose(circle_table_ranked(F.table(), G.table()), fg, rtol=1e-9, atol=1e-9)


def test_factorization(lat1):
    K = PolymerFunctional.multiplicative(lat1, np.linspace(0.5, 1.5, 8))
    X, Y = lat1.polymer([0]), lat1.polymer([3, 4])
    assert factorization_check(K, X, Y) < 1e-14
    with pytest.raises(PreconditionError):
        factorization_check(K, X, lat1.polymer([1]))
    pairs = list(non_touching_pairs(lat1))
    assert all(not (x & y) for x, y in pairs)


@pytest.mark.parametrize("torus,j", [(TorusSpec(2, 3, 1), 0), (TorusSpec(2, 3, 1), 1), (TorusSpec(2, 2, 2), 1)])
def test_identity_suite(torus, j):
    rep = identity_suite(torus, j, seed=3)
    assert all(v["passed"] for v in rep.values()), rep


def test_top_scale_collapse():
    assert top_scale_collapse(TorusSpec(2, 2, 2)) < 1e-14


def test_capacity_guard():
    lat = BlockLattice(TorusSpec(2, 5, 1), 0)  # 32 blocks
    F = PolymerFunctional.unit(lat)
    with pytest.raises(CapacityError):
        circle_product(F, F, lat.polymer(range(32)))
