import numpy as np
import pytest

from lincde.features import (
    FeatureTensor,
    SeededInit,
    feature_tensor,
    fit_readout,
    kernel_goursat,
    mc_kernel_estimate,
    sample_lecun,
)
from lincde.paths import DomainError, from_values, identity_path
from lincde.signature import num_words, signature


def random_path(rng, L=4, d=2, scale=0.3):
    inc = rng.normal(0.0, scale / np.sqrt(L), size=(L, d))
    return from_values(np.vstack([np.zeros((1, d)), np.cumsum(inc, axis=0)]))


def test_sample_lecun_deterministic():
    init = SeededInit(seed=7, N=5, d_0=1, d_omega=2, d_xi=2)
    a = sample_lecun(init)
    b = sample_lecun(init)
    np.testing.assert_array_equal(a.A, b.A)
    np.testing.assert_array_equal(a.B, b.B)
    np.testing.assert_array_equal(a.C, b.C)
    c = sample_lecun(SeededInit(seed=8, N=5, d_0=1, d_omega=2, d_xi=2))
    assert not np.array_equal(a.A, c.A)
    with pytest.raises(DomainError):
        SeededInit(seed=0, N=0, d_0=1, d_omega=1, d_xi=1)


def test_sample_lecun_scaling():
    init = SeededInit(seed=3, N=400, d_0=1, d_omega=1, d_xi=1)
    params = sample_lecun(init)
    assert np.std(params.A) == pytest.approx(1.0 / 20.0, rel=0.05)
    assert np.std(params.B) == pytest.approx(1.0, rel=0.2)


def test_feature_tensor_entries(rng):
    omega = random_path(rng, L=4, d=2)
    xi = random_path(rng, L=4, d=1)
    x0 = np.array([2.0, -1.0])
    ft = feature_tensor(omega, xi, x0, 1.0, 3)
    sig = signature(omega, 0.0, 1.0, 3)
    assert ft.entry_init(1, (1, 2)) == pytest.approx(2.0 * sig.at((1, 2)), abs=1e-13)
    assert ft.entry_init(2, ()) == pytest.approx(-1.0)
    # empty-word xi entry is the xi value itself
    assert ft.entry_xi((), 1) == pytest.approx(xi.values[-1, 0])
    with pytest.raises(DomainError):
        ft.entry_init(3, ())
    with pytest.raises(DomainError):
        ft.entry_xi((), 2)


def test_feature_tensor_functional(rng):
    omega = random_path(rng, L=4, d=2)
    xi = random_path(rng, L=4, d=1)
    ft = feature_tensor(omega, xi, np.array([1.0]), 1.0, 2)
    alpha = {(1, (1,)): 2.0}
    beta = {(1, (2,)): -1.0}
    expected = 2.0 * ft.entry_init(1, (1,)) - ft.entry_xi((2,), 1)
    assert ft.functional(alpha, beta) == pytest.approx(expected)


def test_inner_shape_mismatch(rng):
    omega = random_path(rng, L=4, d=2)
    xi = random_path(rng, L=4, d=1)
    a = feature_tensor(omega, xi, np.ones(1), 1.0, 2)
    b = feature_tensor(omega, xi, np.ones(1), 1.0, 3)
    with pytest.raises(DomainError):
        a.inner(b)


def test_goursat_matches_feature_inner(rng):
    # short, small paths: depth-8 truncation is far below the tolerance
    ox, oy = random_path(rng, L=3, d=2, scale=0.2), random_path(rng, L=3, d=2, scale=0.2)
    xx, xy = random_path(rng, L=3, d=1, scale=0.2), random_path(rng, L=3, d=1, scale=0.2)
    x0x, x0y = np.array([1.0]), np.array([1.0])
    exact = feature_tensor(ox, xx, x0x, 1.0, 8).inner(
        feature_tensor(oy, xy, x0y, 1.0, 8)
    )
    K = kernel_goursat(ox, xx, x0x, oy, xy, x0y, refinement=32)
    assert K[-1, -1] == pytest.approx(exact, abs=1e-6)


def test_goursat_second_order(rng):
    ox, oy = random_path(rng, L=3, d=2), random_path(rng, L=3, d=2)
    xx, xy = random_path(rng, L=3, d=1), random_path(rng, L=3, d=1)
    truth = kernel_goursat(ox, xx, np.ones(1), oy, xy, np.ones(1), refinement=256)[
        -1, -1
    ]
    errs = [
        abs(
            kernel_goursat(ox, xx, np.ones(1), oy, xy, np.ones(1), refinement=r)[-1, -1]
            - truth
        )
        for r in (2, 4, 8)
    ]
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.4)
    assert errs[1] / errs[2] == pytest.approx(4.0, rel=0.4)


def test_goursat_time_marginal(rng):
    # the surface restricted to the x-diagonal endpoint grows along y nodes
    ox = identity_path(4)
    oy = identity_path(4)
    xi = from_values(np.zeros((5, 1)))
    K = kernel_goursat(ox, xi, np.ones(1), oy, xi, np.ones(1))
    assert K.shape == (5, 5)
    assert K[0, 0] == pytest.approx(1.0)
    assert np.all(np.diff(K[-1]) > 0)  # positive driver correlation accumulates


def test_mc_kernel_deterministic(rng):
    ox, oy = random_path(rng, L=3, d=2), random_path(rng, L=3, d=2)
    xx, xy = random_path(rng, L=3, d=1), random_path(rng, L=3, d=1)
    a = mc_kernel_estimate(ox, xx, np.ones(1), oy, xy, np.ones(1), N=32, seed=5)
    b = mc_kernel_estimate(ox, xx, np.ones(1), oy, xy, np.ones(1), N=32, seed=5)
    assert a == b
    c = mc_kernel_estimate(ox, xx, np.ones(1), oy, xy, np.ones(1), N=32, seed=6)
    assert a != c


def test_fit_readout_recovers_exact(rng):
    S = rng.normal(size=(50, 6))
    v_true = rng.normal(size=6)
    y = S @ v_true
    v = fit_readout(S, y, lam=0.0)
    np.testing.assert_allclose(v, v_true, atol=1e-10)
    v_ridge, info = fit_readout(S, y, return_info=True)
    assert info["lam"] > 0
    assert info["residual"] < 1e-8


def test_fit_readout_rank_deficient(rng):
    S = np.hstack([rng.normal(size=(20, 3))] * 2)  # duplicated columns
    y = S[:, 0]
    v, info = fit_readout(S, y, lam=0.0, return_info=True)
    assert info["rank_deficient"]
    assert info["rank"] == 3
    np.testing.assert_allclose(S @ v, y, atol=1e-10)


def test_fit_readout_validation(rng):
    with pytest.raises(DomainError):
        fit_readout(np.zeros((4, 2)), np.zeros(5))
