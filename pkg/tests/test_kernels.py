import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, special

from qwiener.kernels import (KERNEL_KINDS, KernelFunction, deep_kernel_reference,
                             double_convolution, finite_reservoir_cov, kernel_table,
                             kernel_table_csv, normalize_features, quantum_limit_kernel,
                             quantum_limit_mean, quantum_second_moment, readout_kernel,
                             sample_tc_bank, se_time_kernel, tc_kernel, uniform_exp_moment,
                             von_mises_moments)
from qwiener.reservoirs import HqWConfig, sample_hqw_params


def oscillator_terms(params, t):
    """Per-oscillator smooth impulse responses, shape (n_c,)."""
    a2, w = params.alpha_sq, params.omega
    return a2 * np.exp(-0.5 * a2 * t) * (-params.s1 * np.cos(w * t) + params.s2 * np.sin(w * t))


@pytest.fixture(scope="module")
def oscillator_draws():
    return sample_hqw_params(HqWConfig(n_c=10_000, d=1, a_m=1.0, a_M=2.0, kappa=2.0),
                             np.random.default_rng(11))[0]


# --- moments -------------------------------------------------------------


@pytest.mark.parametrize("p", [0, 1, 2])
@pytest.mark.parametrize("tau", [0.0, 5e-5, 1e-3, 0.7, 30.0])
def test_uniform_exp_moment_matches_quadrature(p, tau):
    a, b = 0.01, 20.0
    ref = integrate.quad(lambda x: x ** p * math.exp(-x * tau), a, b, epsabs=0,
                         epsrel=1e-13)[0] / (b - a)
    assert uniform_exp_moment(p, np.array([tau]), a, b)[0] == pytest.approx(ref, rel=1e-10)


def test_uniform_exp_moment_continuous_at_switch():
    lo, hi = uniform_exp_moment(2, np.array([1e-4 * (1 - 1e-9), 1e-4]), 1.0, 2.0)
    assert abs(lo - hi) < 1e-12
    with pytest.raises(ValueError):
        uniform_exp_moment(0, np.array([-1.0]), 1, 2)


# --- classical kernels ---------------------------------------------------


def test_tc_kernel_examples():
    assert tc_kernel(1, 1, 1, 2) == pytest.approx(math.exp(-1) - math.exp(-2), abs=1e-12)
    assert tc_kernel(1, 1, 1, 2) == pytest.approx(0.232544, abs=1e-6)
    assert tc_kernel(0, 0, 1, 2) == pytest.approx(1.0, abs=1e-14)
    assert tc_kernel(0.3, 1.0, 1, 2) == tc_kernel(1.0, 0.3, 1, 2)
    with pytest.raises(ValueError):
        tc_kernel(1, 1, 2, 1)


def test_tc_kernel_matches_monte_carlo():
    alpha, omega = sample_tc_bank(10_000, 1.0, 2.0, np.random.default_rng(5))
    for t, s in [(1.0, 1.0), (0.5, 1.0), (0.1, 0.1)]:
        vals = np.exp(-alpha * (t + s)) * np.cos(omega * (t - s))
        se = vals.std(ddof=1) / math.sqrt(vals.size)
        assert abs(vals.mean() - tc_kernel(t, s, 1.0, 2.0)) < 3 * se


def test_finite_reservoir_cov_examples():
    assert finite_reservoir_cov([0.3, 2.0], [1.0, 5.0], 0, 0) == pytest.approx(1.0)
    assert finite_reservoir_cov([1.0], [0.0], 0.5, 0.5) == pytest.approx(0.367879, abs=1e-6)


def test_se_time_kernel_examples():
    assert se_time_kernel(2.0, 2.0, 0.7) == 1.0
    assert se_time_kernel(1.5, 0.0, 1.5) == pytest.approx(0.606531, abs=1e-6)
    assert se_time_kernel(1.0, 0.0, 1e9, math.pi) == pytest.approx(-1.0, abs=1e-12)
    with pytest.raises(ValueError):
        se_time_kernel(0, 0, 0.0)


# --- Von Mises -------------------------------------------------------------


def test_von_mises_examples():
    vm = von_mises_moments(0.0)
    assert vm.r1 == 0 and vm.r2 == 0
    np.testing.assert_allclose(vm.second_moment(), 0.5 * np.eye(2))
    assert von_mises_moments(2.0).r1 == pytest.approx(0.697775, abs=1e-6)
    big = von_mises_moments(1e6)
    assert 1 - big.r1 < 1e-5 and 1 - big.r2 < 1e-5
    m = big.direction
    np.testing.assert_allclose(big.second_moment(), np.outer(m, m), atol=1e-5)
    with pytest.raises(ValueError):
        von_mises_moments(-0.1)


def test_von_mises_matches_bessel_series():
    def series(n, k):
        return sum((k / 2) ** (2 * j + n) / (math.factorial(j) * math.factorial(j + n))
                   for j in range(80))
    for k in [0.5, 2.0, 7.0, 20.0]:
        vm = von_mises_moments(k)
        assert vm.r1 == pytest.approx(series(1, k) / series(0, k), rel=1e-12)
        assert vm.r2 == pytest.approx(series(2, k) / series(0, k), rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 1e4))
def test_von_mises_ratio_ordering(kappa):
    vm = von_mises_moments(kappa)
    assert 0 <= vm.r2 <= vm.r1 <= 1


@pytest.mark.parametrize("kappa", [0.0, 1.0, 2.0, 10.0])
def test_sampled_phases_match_von_mises_moments(kappa):
    p = sample_hqw_params(HqWConfig(n_c=100_000, d=1, kappa=kappa), np.random.default_rng(3))[0]
    s = np.column_stack([p.s1, p.s2])
    vm = von_mises_moments(kappa)
    se = s.std(axis=0, ddof=1) / math.sqrt(len(s))
    assert np.all(np.abs(s.mean(axis=0) - vm.mean()) <= 4 * se + 1e-12)
    outer = s[:, :, None] * s[:, None, :]
    se2 = outer.std(axis=0, ddof=1) / math.sqrt(len(s))
    assert np.all(np.abs(outer.mean(axis=0) - vm.second_moment()) <= 4 * se2 + 1e-12)


# --- quantum limit kernel ------------------------------------------------


def test_quantum_limit_mean_examples():
    a_m, a_M = 0.01, 20.0
    kappa = 1.0
    r1 = von_mises_moments(kappa).r1
    expect = -r1 * (a_M + a_m) / (2 * math.sqrt(2))
    assert quantum_limit_mean(0.0, a_m, a_M, kappa) == pytest.approx(expect, rel=1e-12)
    # with r1 = 0.5 the limit is -3.53731
    assert -0.5 * (a_M + a_m) / (2 * math.sqrt(2)) == pytest.approx(-3.53731, abs=1e-5)
    assert quantum_limit_mean(0.7, a_m, a_M, 0.0) == 0.0
    t = 0.4
    closed = -(r1 / math.sqrt(2)) * ((1 + a_m * t) * math.exp(-a_m * t)
                                     - (1 + a_M * t) * math.exp(-a_M * t)) / (t * t * (a_M - a_m))
    assert quantum_limit_mean(t, a_m, a_M, kappa) == pytest.approx(closed, rel=1e-10)


def test_quantum_limit_kernel_examples():
    assert quantum_limit_kernel(1, 1, 1, 2, 0.0) == pytest.approx(0.243022, abs=1e-6)
    ref = 0.5 * integrate.quad(lambda x: x * x * math.exp(-x), 1, 2)[0]
    assert quantum_second_moment(1, 1, 1, 2) == pytest.approx(ref, rel=1e-12)
    assert quantum_limit_kernel(0.2, 0.9, 1, 2, 3.0) == quantum_limit_kernel(0.9, 0.2, 1, 2, 3.0)


def test_quantum_over_tc_ratio_stabilizes():
    tau = np.linspace(5, 10, 11)
    ratio = quantum_second_moment(tau, tau, 1, 2) / tc_kernel(tau, tau, 1, 2)
    steps = np.abs(np.diff(ratio))
    assert np.all(np.diff(steps) < 0)
    far = quantum_second_moment(500.0, 500.0, 1, 2) / tc_kernel(500.0, 500.0, 1, 2)
    assert far == pytest.approx(0.5, rel=5e-3)


def test_quantum_mean_matches_monte_carlo(oscillator_draws):
    g = oscillator_terms(oscillator_draws, 0.5)
    se = g.std(ddof=1) / math.sqrt(g.size)
    assert abs(g.mean() - quantum_limit_mean(0.5, 1.0, 2.0, 2.0)) < 3 * se


@pytest.mark.parametrize("t,t2", [(0.1, 0.1), (0.5, 1.0), (2.0, 2.0)])
def test_quantum_kernel_matches_monte_carlo(oscillator_draws, t, t2):
    g1, g2 = oscillator_terms(oscillator_draws, t), oscillator_terms(oscillator_draws, t2)
    prod = (g1 - g1.mean()) * (g2 - g2.mean())
    se = prod.std(ddof=1) / math.sqrt(prod.size)
    assert abs(prod.mean() - quantum_limit_kernel(t, t2, 1.0, 2.0, 2.0)) < 3 * se


def test_monte_carlo_error_scales_as_inverse_sqrt():
    rng = np.random.default_rng(21)
    sizes = np.array([250, 1000, 4000])
    target = quantum_second_moment(0.5, 0.5, 1.0, 2.0)
    errs = []
    for n in sizes:
        e = []
        for _ in range(60):
            p = sample_hqw_params(HqWConfig(n_c=int(n), d=1, a_m=1.0, a_M=2.0), rng)[0]
            e.append(np.mean(oscillator_terms(p, 0.5) ** 2) - target)
        errs.append(math.sqrt(np.mean(np.square(e))))
    slope = np.polyfit(np.log(sizes), np.log(errs), 1)[0]
    assert -0.6 <= slope <= -0.4


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 50), st.floats(0.01, 5), st.floats(0, 20))
def test_second_moment_nonnegative(t, a_m, kappa):
    k = quantum_limit_kernel(t, t, a_m, a_m + 3, kappa)
    assert k + quantum_limit_mean(t, a_m, a_m + 3, kappa) ** 2 >= 0


# --- readout and deep kernels --------------------------------------------


def test_readout_kernel_examples():
    y = np.array([0.3, -1.2, 2.0])
    assert readout_kernel(y, y, "se", sigma_f=1.7, ell=0.3) == pytest.approx(1.7 ** 2)
    y2 = np.array([1.0, 0.5, -0.25])
    assert readout_kernel(y, y2, "poly", sigma_f=2.0, c=0.0, deg=1) == pytest.approx(4 * y @ y2)
    assert readout_kernel([1, 0], [0, 1], "poly", c=1.0, deg=2) == 1.0
    with pytest.raises(ValueError):
        readout_kernel([1, 0], [1, 0, 0])
    with pytest.raises(ValueError):
        readout_kernel([1], [1], "rbf")


def test_deep_kernel_trivial_cases():
    base = KernelFunction("quantum-tc", {"a_m": 1.0, "a_M": 2.0})
    u = np.zeros(50)
    assert deep_kernel_reference(u, 0.3, 0.4, base, "poly", sigma_f=1.5, c=2.0, deg=3) \
        == pytest.approx(1.5 ** 2 * 8)
    assert deep_kernel_reference(u, 0.3, 0.4, base, "se", sigma_f=1.5) == pytest.approx(2.25)
    u = np.random.default_rng(0).uniform(size=50)
    assert deep_kernel_reference(u, 0.3, 0.3, base, "se", sigma_f=0.8) == pytest.approx(0.64)
    with pytest.raises(ValueError, match="horizon"):
        deep_kernel_reference(u, 0.6, 0.3, base)


def test_double_convolution_constant_kernel():
    # K = 1 reduces to (int u)(int u)
    u = np.array([1.0, 2.0, -1.0, 0.5])
    got = double_convolution(lambda a, b: np.ones(np.broadcast(a, b).shape), u, 0.04, 0.03, 0.01)
    assert got == pytest.approx(0.01 * 2.5 * 0.01 * 2.0)


def test_normalize_features_examples():
    np.testing.assert_array_equal(normalize_features(np.ones((4, 3)), 8), np.zeros((4, 3)))
    np.testing.assert_allclose(normalize_features([[3.0], [1.0]], 1).ravel(),
                               [1 / math.sqrt(2), -1 / math.sqrt(2)])
    with pytest.raises(ValueError):
        normalize_features([[1.0, 2.0]], 4)


# --- KernelFunction ------------------------------------------------------


def _inputs(kind, rng):
    if kind in ("poly-readout", "se-readout"):
        return rng.normal(size=(50, 3))
    return rng.uniform(0, 3, 50)


TIME_AND_READOUT = [k for k in KERNEL_KINDS if not k.startswith("deep")]


@pytest.mark.parametrize("kind", TIME_AND_READOUT)
def test_gram_psd_and_symmetric(kind):
    rng = np.random.default_rng(len(kind))
    params = {"a_m": 0.5, "a_M": 3.0} if "tc" in kind else {}
    k = KernelFunction(kind, params)
    X = _inputs(kind, rng)
    G = k.gram(X)
    np.testing.assert_array_equal(G, G.T)
    assert np.linalg.eigvalsh(G).min() >= -1e-8 * max(1.0, np.abs(G).max())


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(TIME_AND_READOUT), st.integers(0, 2 ** 32 - 1))
def test_kernel_symmetry_property(kind, seed):
    rng = np.random.default_rng(seed)
    k = KernelFunction(kind)
    a, b = _inputs(kind, rng)[:2]
    assert np.all(k(a, b) == k(b, a))


def test_deep_kernel_function_symmetric_and_psd():
    u = np.random.default_rng(2).uniform(size=40)
    for kind in ("deep-poly", "deep-se"):
        k = KernelFunction(kind, {"a_m": 1.0, "a_M": 4.0}, u=u)
        t = np.arange(1, 9) * 0.05
        G = k.gram(t)
        np.testing.assert_allclose(G, G.T, rtol=1e-12)
        assert np.linalg.eigvalsh(G).min() >= -1e-8 * np.abs(G).max()


def test_kernel_function_validation():
    with pytest.raises(ValueError, match="unknown kernel"):
        KernelFunction("matern")
    with pytest.raises(ValueError):
        KernelFunction("tc", {"a_m": 2.0, "a_M": 1.0})
    with pytest.raises(ValueError):
        KernelFunction("se-readout", {"ell": -1.0})
    with pytest.raises(ValueError):
        KernelFunction("poly-readout", {"deg": 1.5})
    with pytest.raises(ValueError, match="input path"):
        KernelFunction("deep-se")
    with pytest.raises(ValueError, match="unknown parameters"):
        KernelFunction("tc", {"ell": 1.0})


def test_kernel_table_csv_roundtrip():
    k = KernelFunction("quantum-tc")
    t = np.arange(0, 1.0001, 0.25)
    table = kernel_table(k, t, t[::-1])
    text = kernel_table_csv(table)
    assert text.splitlines()[0] == "t,t_prime,K"
    back = np.loadtxt(text.splitlines()[1:], delimiter=",")
    np.testing.assert_array_equal(back, table)
    np.testing.assert_array_equal(table[:, 2], table[::-1, 2])


def test_quantum_mean_kind_is_rank_one():
    k = KernelFunction("quantum-tc-mean", {"kappa": 2.0})
    G = k.gram(np.linspace(0, 2, 12))
    ev = np.linalg.eigvalsh(G)
    assert ev[-2] < 1e-10 * ev[-1]


def test_von_mises_large_kappa_no_overflow():
    assert np.isinf(special.iv(0, 1e4))
    vm = von_mises_moments(1e4)
    assert vm.r1 == pytest.approx(1 - 0.5 / 1e4, abs=1e-7)
