import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ddmd.errors import InvalidArgument, SimulationDiverged
from ddmd.numerics import Rng, eig, lstsq, pinv, rk4_step


def _rel(x, ref):
    return np.linalg.norm(x - ref) / max(np.linalg.norm(ref), 1e-300)


# ---------------------------------------------------------------- pinv


def test_pinv_identity():
    assert np.allclose(pinv(np.eye(3)), np.eye(3), atol=1e-15)


def test_pinv_rank_deficient_diagonal():
    np.testing.assert_allclose(pinv(np.diag([2.0, 0.0])), np.diag([0.5, 0.0]), atol=1e-15)


def test_pinv_penrose_on_tall_matrix():
    a = Rng(1).normal((5, 3))
    x = pinv(a)
    assert np.abs(x @ a @ x - x).max() < 1e-10


@settings(max_examples=40, deadline=None)
@given(rows=st.integers(1, 50), cols=st.integers(1, 50), rank=st.integers(1, 50), seed=st.integers(0, 2**32))
def test_pinv_penrose_conditions(rows, cols, rank, seed):
    rng = Rng(seed)
    r = min(rank, rows, cols)
    a = rng.normal((rows, r)) @ rng.normal((r, cols))
    x = pinv(a)
    assert _rel(a @ x @ a, a) < 1e-8
    assert _rel(x @ a @ x, x) < 1e-8
    assert _rel((a @ x).T, a @ x) < 1e-8
    assert _rel((x @ a).T, x @ a) < 1e-8


def test_pinv_rejects_bad_input():
    with pytest.raises(InvalidArgument):
        pinv(np.array([[1.0, np.nan]]))
    with pytest.raises(InvalidArgument):
        pinv(np.eye(2), tol=-1.0)


# ---------------------------------------------------------------- lstsq


def test_lstsq_identity():
    b = Rng(2).normal((4, 2))
    np.testing.assert_allclose(lstsq(np.eye(4), b), b, atol=1e-15)


def test_lstsq_consistent_overdetermined():
    rng = Rng(3)
    a = rng.normal((12, 4))
    x_true = rng.normal((4, 3))
    assert np.abs(lstsq(a, a @ x_true) - x_true).max() < 1e-10


def test_lstsq_residual_orthogonal_to_range():
    rng = Rng(4)
    a = rng.normal((20, 5))
    b = rng.normal(20)
    r = b - a @ lstsq(a, b)
    assert np.abs(a.T @ r).max() < 1e-8 * np.linalg.norm(b)


def test_lstsq_row_mismatch():
    with pytest.raises(InvalidArgument):
        lstsq(np.eye(3), np.ones(4))


# ---------------------------------------------------------------- eig


def test_eig_diagonal():
    spec = eig(np.diag([3.0, 1.0]))
    np.testing.assert_allclose(spec.eigenvalues, [3.0, 1.0], atol=1e-14)


def test_eig_rotation():
    th = 0.3
    r = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    lam = eig(r).eigenvalues
    expected = [np.exp(1j * th), np.exp(-1j * th)]
    np.testing.assert_allclose(lam, expected, atol=1e-12)


def test_eig_trace_identity():
    a = Rng(5).normal((6, 6))
    lam = eig(a).eigenvalues
    assert abs(lam.sum() - np.trace(a)) <= 1e-8 * max(abs(np.trace(a)), 1.0)


@pytest.mark.parametrize("seed", range(10))
def test_eig_reconstruction(seed):
    rng = Rng(seed)
    n = 2 + seed
    a = rng.normal((n, n))
    spec = eig(a)
    v = spec.right_eigenvectors
    recon = v @ np.diag(spec.eigenvalues) @ np.linalg.inv(v)
    assert np.linalg.norm(recon - a) <= 1e-6 * np.linalg.norm(a)
    assert np.abs(recon.imag).max() < 1e-8
    assert not spec.degraded


def test_eig_left_vectors():
    a = Rng(9).normal((5, 5))
    spec = eig(a)
    for lam, w in zip(spec.eigenvalues, spec.left_eigenvectors):
        assert np.linalg.norm(w @ a - lam * w) < 1e-8 * np.linalg.norm(a)


def test_eig_conjugate_pairs():
    lam = eig(Rng(10).normal((7, 7))).eigenvalues
    complex_part = sorted(lam[np.abs(lam.imag) > 1e-12], key=lambda z: (round(z.real, 8), z.imag))
    for z in complex_part:
        assert np.min(np.abs(lam - np.conj(z))) < 1e-10


def test_eig_defective_flagged():
    assert eig(np.array([[1.0, 1.0], [0.0, 1.0]])).degraded


def test_eig_needs_square():
    with pytest.raises(InvalidArgument):
        eig(np.ones((2, 3)))


# ---------------------------------------------------------------- rk4


def test_rk4_exponential_decay():
    x = rk4_step(lambda x: -x, np.array([1.0]), 0.1)
    assert abs(x[0] - 0.9048375) < 1e-6
    assert abs(x[0] - np.exp(-0.1)) < 1e-6


def test_rk4_zero_field():
    c = np.array([1.5, -2.0])
    np.testing.assert_array_equal(rk4_step(lambda x: np.zeros_like(x), c, 0.3), c)


def test_rk4_harmonic_energy():
    f = lambda x: np.array([x[1], -x[0]])
    x = np.array([1.0, 0.0])
    for _ in range(1000):
        x = rk4_step(f, x, 0.01)
    assert abs(0.5 * (x @ x) - 0.5) / 0.5 < 1e-6


def test_rk4_fourth_order_convergence():
    def global_error(n):
        x = np.array([1.0])
        for _ in range(n):
            x = rk4_step(lambda x: -x, x, 1.0 / n)
        return abs(x[0] - np.exp(-1.0))

    errs = [global_error(n) for n in (5, 10, 20, 40)]
    ratios = [errs[i] / errs[i + 1] for i in range(3)]
    assert min(ratios) >= 12.0


def test_rk4_divergence_reports_step():
    with pytest.raises(SimulationDiverged) as info:
        rk4_step(lambda x: np.full_like(x, np.nan), np.array([1.0]), 0.1, step=17)
    assert info.value.step == 17


def test_rk4_rejects_nonpositive_step():
    with pytest.raises(InvalidArgument):
        rk4_step(lambda x: x, np.ones(1), 0.0)


# ---------------------------------------------------------------- rng


def test_rng_reproducible_million():
    a = Rng(12345).next_u64(1_000_000)
    b = Rng(12345).next_u64(1_000_000)
    assert np.array_equal(a, b)


def test_rng_block_size_does_not_matter():
    r = Rng(7)
    chunks = np.concatenate([r.next_u64(3), r.next_u64(10), r.next_u64(1)])
    assert np.array_equal(chunks, Rng(7).next_u64(14))


def test_rng_reference_values():
    # scalar SplitMix64 recurrence written out with Python integers
    mask = (1 << 64) - 1

    def ref(seed, n):
        out, state = [], seed
        for _ in range(n):
            state = (state + 0x9E3779B97F4A7C15) & mask
            z = state
            z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
            z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
            out.append(z ^ (z >> 31))
        return out

    for seed in (0, 1, 2**63 + 5):
        assert [int(v) for v in Rng(seed).next_u64(5)] == ref(seed, 5)


def test_rng_children_are_independent():
    root = Rng(3)
    a = root.child("system").uniform(1000)
    b = root.child("ics").uniform(1000)
    assert not np.array_equal(a, b)
    assert np.array_equal(a, Rng(3).child("system").uniform(1000))
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.1


def test_rng_distribution_moments():
    r = Rng(11)
    u = r.uniform(200_000)
    z = r.normal(200_000)
    assert 0.0 <= u.min() and u.max() < 1.0
    assert abs(u.mean() - 0.5) < 0.005
    assert abs(z.mean()) < 0.01 and abs(z.std() - 1.0) < 0.01


def test_rng_permutation():
    p = Rng(4).permutation(50)
    assert sorted(p.tolist()) == list(range(50))
