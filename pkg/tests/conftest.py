import itertools
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hamconc import (
    DiscreteMeasure,
    MixtureRepresentation,
    ProductSpace,
    mix,
)
from hamconc.measures import product_measure


def make_measure(alphabet, n, atoms):
    return DiscreteMeasure(ProductSpace(alphabet, n), atoms)


def biased_product(n, p):
    """p-biased product law on the n-cube."""
    return product_measure(ProductSpace(2, n), [[1.0 - p, p]])


def product_mix(n, p, q, weight=0.5):
    """Even mixture of two biased product laws."""
    a = biased_product(n, p)
    b = biased_product(n, q)
    return mix(MixtureRepresentation((weight, 1.0 - weight), (a, b)))


def two_cluster(n, mass=0.5):
    """Two antipodal atoms on the n-cube."""
    sp = ProductSpace(2, n)
    return DiscreteMeasure(sp, {(0,) * n: mass, (1,) * n: 1.0 - mass})


def subgroup_measure(q, n):
    """Uniform law on the zero-sum subgroup of (Z/qZ)^n."""
    words = [w for w in itertools.product(range(q), repeat=n)
             if sum(w) % q == 0]
    return DiscreteMeasure.uniform_on(ProductSpace(q, n), words)


def diagonal_code(n):
    """Pushforward of the uniform diagonal pair law to the n-cube (n even)."""
    assert n % 2 == 0
    words = []
    for half in itertools.product(range(2), repeat=n // 2):
        w = []
        for s in half:
            w.extend([s, s])
        words.append(tuple(w))
    return DiscreteMeasure.uniform_on(ProductSpace(2, n), words)


def random_measure(rng, alphabet, n, max_support):
    from oracles import random_sparse_measure
    atoms = random_sparse_measure(rng, alphabet, n, max_support)
    return DiscreteMeasure(ProductSpace(alphabet, n), atoms)


@pytest.fixture
def rng():
    return np.random.default_rng(20260810)
