"""
Test cases for interlaced and non-interlaced target shuffles
"""

import numpy as np
import pytest

from cmixer_workbench.errors import ConfigurationError, ValidationError
from cmixer_workbench.shuffle import (
    ShuffleMode,
    ShuffleSpec,
    interlaced_shuffle,
    inverse_permutation,
    non_interlaced_shuffle,
)


def _complex(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def _matrix(perm):
    """P with P[perm[k], k] = 1, so (P x)[perm[k]] = x[k]."""
    p = np.zeros((len(perm), len(perm)))
    p[perm, np.arange(len(perm))] = 1
    return p


def test_interlaced_identity(rng):
    """Test that identity permutations leave H unchanged."""
    h = _complex(rng, 4, 5)
    np.testing.assert_array_equal(interlaced_shuffle(h, np.arange(4), np.arange(5)), h)


def test_interlaced_inverse_recovers(rng):
    """Test that the inverse permutations undo the shuffle."""
    h = _complex(rng, 4, 5)
    rows, cols = rng.permutation(4), rng.permutation(5)
    shuffled = interlaced_shuffle(h, rows, cols)
    restored = interlaced_shuffle(shuffled, inverse_permutation(rows), inverse_permutation(cols))
    np.testing.assert_array_equal(restored, h)


def test_interlaced_matches_matrix_product(rng):
    """Test P_t H P_c against explicit permutation matrices."""
    h = _complex(rng, 4, 5)
    rows, cols = rng.permutation(4), rng.permutation(5)
    expected = _matrix(rows) @ h @ _matrix(cols).T
    np.testing.assert_array_equal(interlaced_shuffle(h, rows, cols), expected)
    for i in range(4):
        for j in range(5):
            assert interlaced_shuffle(h, rows, cols)[rows[i], cols[j]] == h[i, j]


def test_interlaced_rejects_non_permutation(rng):
    """Test that a repeated index raises ValidationError."""
    with pytest.raises(ValidationError, match="not a permutation"):
        interlaced_shuffle(_complex(rng, 3, 3), [0, 0, 1], [0, 1, 2])
    with pytest.raises(ValidationError, match="length"):
        interlaced_shuffle(_complex(rng, 3, 3), [0, 1], [0, 1, 2])


def test_non_interlaced_identity(rng):
    """Test that the identity permutation leaves H unchanged."""
    h = _complex(rng, 3, 4)
    np.testing.assert_array_equal(non_interlaced_shuffle(h, np.arange(12)), h)


def test_non_interlaced_matches_vec_oracle(rng):
    """Test a 3x4 shuffle against column-stacking index arithmetic."""
    h = _complex(rng, 3, 4)
    perm = rng.permutation(12)
    vec = np.array([h[k % 3, k // 3] for k in range(12)])
    moved = np.empty(12, dtype=complex)
    for k in range(12):
        moved[perm[k]] = vec[k]
    expected = np.empty((3, 4), dtype=complex)
    for k in range(12):
        expected[k % 3, k // 3] = moved[k]
    np.testing.assert_array_equal(non_interlaced_shuffle(h, perm), expected)


def test_shuffles_preserve_entries(rng):
    """Test that both shuffles keep the multiset of entries."""
    h = _complex(rng, 6, 5)
    outputs = [interlaced_shuffle(h, rng.permutation(6), rng.permutation(5)),
               non_interlaced_shuffle(h, rng.permutation(30))]
    for out in outputs:
        np.testing.assert_array_equal(np.sort_complex(out.ravel()), np.sort_complex(h.ravel()))


def test_shuffles_apply_per_sample(rng):
    """Test that a batch is shuffled sample by sample with the same permutation."""
    batch = _complex(rng, 3, 4, 5)
    perm = rng.permutation(20)
    shuffled = non_interlaced_shuffle(batch, perm)
    for s in range(3):
        np.testing.assert_array_equal(shuffled[s], non_interlaced_shuffle(batch[s], perm))


def test_shuffle_spec_random_and_identity(rng):
    """Test seeded specs are reproducible and identity specs are no-ops."""
    first = ShuffleSpec.random(ShuffleMode.INTERLACED, 4, 5, seed=3)
    assert first == ShuffleSpec.random('interlaced', 4, 5, seed=3)
    h = _complex(rng, 2, 4, 5)
    for mode in ShuffleMode:
        np.testing.assert_array_equal(ShuffleSpec.identity(mode, 4, 5).apply(h), h)
    assert ShuffleSpec.from_dict(first.to_dict()) == first


def test_shuffle_spec_requires_permutations():
    """Test that a shuffled mode without permutations is rejected."""
    with pytest.raises(ConfigurationError, match="flat_perm"):
        ShuffleSpec(ShuffleMode.NON_INTERLACED)
