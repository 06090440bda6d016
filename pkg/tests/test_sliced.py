import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from epswae import sliced
from epswae.sliced import (KINDS, RandomTransform, SliceEnsemble, apply_nonlinearity, bench_nonlinearity,
                           make_ensemble, nsw_distance, nsw_gradient, nsw_value_and_grad,
                           sample_sphere_directions, sliced_wasserstein, wasserstein_1d)
from oracles import (central_difference, monomials_loop, push_loop, rel_error, sliced_loop,
                     w1d_brute)


def nsw_loop(mu, nu, ens):
    vals = []
    for l in range(ens.L):
        args = (ens.zeta[l], ens.gamma[l], ens.center[l], ens.scale[l], ens.coeffs[l])
        a = push_loop(ens.kind, mu, *args)
        b = push_loop(ens.kind, nu, *args)
        vals.append(sliced_loop(a, b, ens.directions[l], ens.p))
    return float(np.mean(vals))


# -- 1-D ---------------------------------------------------------------------

def test_w1d_same_multiset_is_zero():
    for p in (1, 2):
        assert wasserstein_1d([0, 1], [1, 0], p) == 0.0


def test_w1d_single_pair():
    assert wasserstein_1d([0], [1], 2) == 1.0


def test_w1d_matches_brute_force_hand_case():
    assert wasserstein_1d([0, 2, 5], [1, 3, 7], 1) == pytest.approx(w1d_brute([0, 2, 5], [1, 3, 7], 1), abs=1e-12)


def test_w1d_rejects_bad_lengths():
    with pytest.raises(ValueError):
        wasserstein_1d([1, 2], [1])
    with pytest.raises(ValueError):
        wasserstein_1d([], [])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=8), st.sampled_from([1, 2]), st.randoms())
def test_w1d_symmetric_and_zero_iff_equal(xs, p, rnd):
    ys = list(xs)
    rnd.shuffle(ys)
    assert wasserstein_1d(xs, ys, p) == 0.0
    zs = [x + 1.0 for x in xs]
    assert wasserstein_1d(xs, zs, p) == wasserstein_1d(zs, xs, p) > 0


# -- directions --------------------------------------------------------------

def test_directions_in_one_dimension_are_signs():
    v = sample_sphere_directions(1, 50, np.random.default_rng(0))
    assert set(np.abs(v).ravel()) == {1.0}


def test_directions_are_unit_and_centered():
    v = sample_sphere_directions(3, 1000, np.random.default_rng(0))
    assert np.all(np.abs(np.linalg.norm(v, axis=1) - 1.0) < 1e-12)
    assert np.linalg.norm(v.mean(axis=0)) < 0.1


# -- linear sliced -----------------------------------------------------------

def test_sliced_of_identical_clouds_is_zero():
    mu = np.random.default_rng(0).standard_normal((10, 3))
    assert sliced_wasserstein(mu, mu.copy(), rng=np.random.default_rng(1)) == 0.0


def test_sliced_in_one_dimension_reduces_to_w1d():
    rng = np.random.default_rng(2)
    for _ in range(20):
        x, y = rng.standard_normal(7), rng.standard_normal(7)
        for p in (1, 2):
            for sign in (1.0, -1.0):
                got = sliced_wasserstein(x, y, p, directions=np.array([[sign]]))
                assert got == pytest.approx(wasserstein_1d(x, y, p), rel=1e-13, abs=0)


def test_sliced_matches_loop_oracle():
    rng = np.random.default_rng(3)
    mu, nu = rng.standard_normal((4, 2)), rng.standard_normal((4, 2))
    dirs = sample_sphere_directions(2, 25, rng)
    for p in (1, 2):
        assert abs(sliced_wasserstein(mu, nu, p, directions=dirs) - sliced_loop(mu, nu, dirs, p)) < 1e-12


def test_sliced_dimension_mismatch():
    with pytest.raises(ValueError):
        sliced_wasserstein(np.zeros((3, 2)), np.zeros((3, 3)), rng=np.random.default_rng(0))


# -- transforms --------------------------------------------------------------

def test_identity_transform_is_noop():
    x = np.random.default_rng(0).standard_normal((5, 3))
    t = RandomTransform("identity", np.ones(3), np.ones(3))
    assert np.array_equal(apply_nonlinearity(t, x), x)


def test_sine_shear_zero_gamma_is_noop():
    x = np.random.default_rng(0).standard_normal((5, 3))
    t = RandomTransform("sine_shear", np.array([0.3, -1.0, 2.0]), np.zeros(3))
    assert np.array_equal(apply_nonlinearity(t, x), x)


def test_sine_shear_hand_value():
    t = RandomTransform("sine_shear", np.array([1.0, 0.0]), np.array([0.0, 1.0]))
    y = apply_nonlinearity(t, np.array([[np.pi / 2, 0.0]]))
    assert np.allclose(y, [[np.pi / 2, 1.0]], atol=1e-15)


def test_sine_shear_is_bounded_shift():
    rng = np.random.default_rng(4)
    x = 100 * rng.standard_normal((50, 3))
    g = rng.standard_normal(3)
    y = apply_nonlinearity(RandomTransform("sine_shear", rng.standard_normal(3), g), x)
    assert np.all(np.abs(y - x) <= np.abs(g) + 1e-12)


@pytest.mark.parametrize("kind", ["sine_shear", "cubic", "quintic"])
def test_transforms_match_pointwise_oracle(kind):
    rng = np.random.default_rng(5)
    x = rng.standard_normal((6, 3))
    zeta, gamma = rng.standard_normal(3), rng.standard_normal(3)
    center, scale = rng.standard_normal(3), rng.uniform(0.5, 2, 3)
    coeffs = rng.standard_normal((3, 2))
    if kind == "cubic":
        coeffs[:, 1] = 0
    t = RandomTransform(kind, zeta, gamma, center, scale, coeffs)
    assert np.allclose(apply_nonlinearity(t, x), push_loop(kind, x, zeta, gamma, center, scale, coeffs),
                       rtol=1e-13, atol=1e-13)


@pytest.mark.parametrize("kind,degree", [("cubic", 3), ("quintic", 5)])
def test_full_basis_lists_every_monomial(kind, degree):
    rng = np.random.default_rng(6)
    x = rng.standard_normal((4, 3))
    center, scale = rng.standard_normal(3), rng.uniform(0.5, 2, 3)
    t = RandomTransform(kind, np.ones(3), np.ones(3), center, scale, full_basis=True)
    got = apply_nonlinearity(t, x)
    want = monomials_loop((x - center) / scale, degree)
    assert got.shape[1] == sliced.basis_size(3, degree)
    # same set of features; compare as sorted columns per row
    assert np.allclose(np.sort(got, axis=1), np.sort(want, axis=1), rtol=1e-12, atol=1e-12)


def test_full_basis_feature_cap():
    with pytest.raises(ValueError):
        make_ensemble(np.zeros((3, 40)) + np.arange(40), "quintic", full_basis=True,
                      rng=np.random.default_rng(0))


def test_transform_dimension_checked():
    with pytest.raises(ValueError):
        apply_nonlinearity(RandomTransform("sine_shear", np.ones(2), np.ones(2)), np.zeros((3, 3)))


# -- NSW ---------------------------------------------------------------------

def clouds(seed, n=8, d=3):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, d)), rng.standard_normal((n, d)) + 0.3, rng


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("p", [1, 2])
def test_nsw_matches_loop_oracle(kind, p):
    mu, nu, rng = clouds(10)
    ens = make_ensemble(mu, kind, L=3, M=7, p=p, rng=rng)
    assert abs(nsw_distance(mu, nu, ens) - nsw_loop(mu, nu, ens)) < 1e-12


@pytest.mark.parametrize("kind", KINDS)
def test_nsw_self_distance_zero_and_symmetric(kind):
    mu, nu, rng = clouds(11)
    ens = make_ensemble(mu, kind, rng=rng)
    assert nsw_distance(mu, mu.copy(), ens) == 0.0
    assert nsw_distance(mu, nu, ens) == nsw_distance(nu, mu, ens)


def test_identity_ensemble_is_mean_of_sliced():
    mu, nu, rng = clouds(12)
    ens = make_ensemble(mu, "identity", L=4, M=9, rng=rng)
    want = np.mean([sliced_wasserstein(mu, nu, directions=ens.directions[l]) for l in range(4)])
    assert abs(nsw_distance(mu, nu, ens) - want) < 1e-12


def test_default_ensemble_size():
    mu, _, rng = clouds(13)
    ens = make_ensemble(mu, rng=rng)
    assert (ens.L, ens.M, ens.p) == (5, 50, 2)
    assert np.all(np.abs(np.linalg.norm(ens.directions, axis=-1) - 1) < 1e-12)


def test_nsw_dimension_mismatch():
    mu, nu, rng = clouds(14)
    ens = make_ensemble(mu, rng=rng)
    with pytest.raises(ValueError):
        nsw_distance(mu[:, :2], nu[:, :2], ens)
    with pytest.raises(ValueError):
        nsw_distance(mu, nu[:5], ens)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (6, 2), elements=st.floats(-50, 50)),
       arrays(np.float64, (6, 2), elements=st.floats(-50, 50)),
       st.sampled_from(KINDS), st.integers(0, 2**32 - 1))
def test_nsw_nonnegative_and_symmetric(mu, nu, kind, seed):
    ens = make_ensemble(np.vstack([mu, nu]), kind, L=2, M=5, rng=np.random.default_rng(seed))
    d = nsw_distance(mu, nu, ens)
    assert d >= 0.0
    assert d == nsw_distance(nu, mu, ens)


# -- gradients ---------------------------------------------------------------

def test_gradient_zero_at_identical_clouds():
    mu, _, rng = clouds(20)
    ens = make_ensemble(mu, rng=rng)
    g_mu, g_nu = nsw_gradient(mu, mu.copy(), ens)
    assert not g_mu.any() and not g_nu.any()


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("p", [1, 2])
@pytest.mark.parametrize("full_basis", [False, True])
def test_gradient_finite_differences(kind, p, full_basis):
    mu, nu, rng = clouds(21)
    ens = make_ensemble(mu, kind, L=3, M=10, p=p, rng=rng, full_basis=full_basis)
    g_mu, g_nu = nsw_gradient(mu, nu, ens)
    assert rel_error(g_mu, central_difference(lambda m: nsw_distance(m, nu, ens), mu, 1e-6)) < 1e-4
    assert rel_error(g_nu, central_difference(lambda n: nsw_distance(mu, n, ens), nu, 1e-6)) < 1e-4


def test_value_and_grad_partial_requests_agree():
    mu, nu, rng = clouds(22)
    ens = make_ensemble(mu, rng=rng)
    v, g_mu, g_nu = nsw_value_and_grad(mu, nu, ens)
    v1, g1, none1 = nsw_value_and_grad(mu, nu, ens, wrt="mu")
    v2, none2, g2 = nsw_value_and_grad(mu, nu, ens, wrt="nu")
    assert v == v1 == v2 == nsw_distance(mu, nu, ens)
    assert none1 is None and none2 is None
    assert np.array_equal(g1, g_mu) and np.array_equal(g2, g_nu)


def test_gradient_unchanged_by_common_translation():
    mu, nu, _ = clouds(23)
    shift = np.array([5.0, -3.0, 12.0])
    e0 = make_ensemble(mu, "sine_shear", rng=np.random.default_rng(9))
    e1 = make_ensemble(mu + shift, "sine_shear", rng=np.random.default_rng(9))
    g0 = nsw_gradient(mu, nu, e0)
    g1 = nsw_gradient(mu + shift, nu + shift, e1)
    assert np.allclose(g0[0], g1[0], rtol=1e-9, atol=1e-12)
    assert np.allclose(g0[1], g1[1], rtol=1e-9, atol=1e-12)


def test_ties_sorted_by_value_then_index():
    a = np.array([[[2.0, 1.0, 2.0, 1.0]]])
    s, idx = sliced._sorted_with_index(a)
    assert s.tolist() == [[1.0, 1.0, 2.0, 2.0]]
    assert idx.tolist() == [[1, 3, 0, 2]]


def test_tied_gradients_are_deterministic():
    mu = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 1.0], [1.0, 1.0]])
    nu = mu + 0.5
    ens = make_ensemble(mu, rng=np.random.default_rng(0))
    a = nsw_gradient(mu, nu, ens)
    b = nsw_gradient(mu.copy(), nu.copy(), ens)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_ensemble_validation():
    with pytest.raises(ValueError):
        make_ensemble(np.zeros((3, 2)), "tanh")
    with pytest.raises(ValueError):
        make_ensemble(np.zeros((3, 2)), L=0)
    ens = make_ensemble(np.random.default_rng(0).standard_normal((3, 2)), rng=np.random.default_rng(0))
    with pytest.raises(ValueError):
        SliceEnsemble(ens.kind, ens.zeta, ens.gamma, ens.center, ens.scale, ens.coeffs, ens.directions, p=3)


def test_from_transforms_round_trip():
    ens = make_ensemble(np.random.default_rng(0).standard_normal((6, 3)), "cubic", L=2, M=3,
                        rng=np.random.default_rng(1))
    back = SliceEnsemble.from_transforms(ens.transforms, ens.directions, ens.p)
    mu, nu, _ = clouds(30, n=6)
    assert nsw_distance(mu, nu, back) == nsw_distance(mu, nu, ens)


# -- timing ------------------------------------------------------------------

def test_bench_single_rep_has_zero_std():
    r = bench_nonlinearity("sine_shear", 3, 20, 1, np.random.default_rng(0))
    assert r.std_seconds == 0.0 and r.mean_seconds > 0
    assert list(r.row())[:7] == ["kind", "d", "N", "L", "M", "mean_seconds", "std_seconds"]


def test_bench_rejects_zero_reps():
    with pytest.raises(ValueError):
        bench_nonlinearity("cubic", 3, 10, 0, np.random.default_rng(0))
