import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import crandn, waterfill_capacity
from coprimary.allocation import GALE_SHAPLEY, allocate_two_stage
from coprimary.channel import DEDICATED, SHARED, Topology, build_channel_set
from coprimary.linalg import frob_norm_sq, hermitian, identity, log2_det_hpd
from coprimary.wmmse import (
    CellProblem,
    WmmseSettings,
    bisect_power,
    cell_problem,
    init_precoders,
    interference_plus_noise,
    mmse_mse,
    mmse_receiver,
    mse_matrix,
    precoder_system,
    precoder_update,
    update_receivers,
    user_rate,
    weight_update,
    weighted_sum_rate,
    wmse_objective,
    wmmse_solve,
)

seeds = st.integers(0, 2**32 - 1)


def make_problem(H, T, bands=None, subcarriers=None, Hx=None, cell=0, p_max=10.0, mu=None, noise=1.0):
    H = np.asarray(H, dtype=complex)
    T = np.asarray(T, dtype=complex)
    n = len(H)
    return CellProblem(
        cell=cell,
        p_max=p_max,
        noise_variance=noise,
        users=np.arange(n),
        bands=np.array(bands if bands is not None else [DEDICATED] * n),
        subcarriers=np.array(subcarriers if subcarriers is not None else [0] * n),
        H=H,
        H_cross=np.zeros((n, H.shape[1], 1), complex) if Hx is None else np.asarray(Hx, dtype=complex),
        mu=np.ones(n) if mu is None else np.asarray(mu, dtype=float),
        T=T,
    )


def two_cell_sample(seed, users=6, dedicated=2, shared=1, snr_db=10.0, tx=4, rx=2):
    topo = Topology.symmetric(users, dedicated, shared, tx=tx, rx=rx)
    cs = build_channel_set(topo, 1.0, seed, 0)
    rng = np.random.default_rng(seed)
    problems = []
    for c in range(2):
        asg = allocate_two_stage(cs, c, GALE_SHAPLEY)
        p = cell_problem(cs, c, asg.links(), 10 ** (snr_db / 10))
        init_precoders(p, rng)
        problems.append(p)
    return cs, problems


def random_link(rng, nr=2, nt=4, a=2, interferers=2):
    H = crandn(rng, nr, nt)
    T = crandn(rng, nt, a)
    J = identity(nr)
    for _ in range(interferers):
        g = crandn(rng, nr, nt) @ crandn(rng, nt, a)
        J = J + g @ hermitian(g)
    return H, T, J


# --- interference ------------------------------------------------------------


def test_interference_sole_user_is_noise():
    p = make_problem(crandn(np.random.default_rng(0), 1, 2, 4), crandn(np.random.default_rng(1), 1, 4, 2), noise=0.7)
    assert np.allclose(interference_plus_noise(p), 0.7 * identity(2))


def test_interference_two_coscheduled_users(rng):
    H, T = crandn(rng, 2, 2, 4), crandn(rng, 2, 4, 2)
    p = make_problem(H, T)
    J = interference_plus_noise(p)
    expected0 = H[0] @ T[1] @ hermitian(T[1]) @ hermitian(H[0]) + identity(2)
    expected1 = H[1] @ T[0] @ hermitian(T[0]) @ hermitian(H[1]) + identity(2)
    assert np.allclose(J[0], expected0, atol=1e-12)
    assert np.allclose(J[1], expected1, atol=1e-12)


def test_interference_ignores_other_subcarriers(rng):
    p = make_problem(crandn(rng, 2, 2, 4), crandn(rng, 2, 4, 2), subcarriers=[0, 1])
    assert np.allclose(interference_plus_noise(p), identity(2))


def test_interference_shared_subcarrier_both_terms(rng):
    H, T, Hx = crandn(rng, 2, 2, 4), crandn(rng, 2, 4, 2), crandn(rng, 2, 2, 4)
    mine = make_problem(H, T, bands=[SHARED, SHARED], subcarriers=[0, 0], Hx=Hx)
    Ho, To = crandn(rng, 2, 2, 4), crandn(rng, 2, 4, 2)
    # other cell: one link on shared subcarrier 0, one on its dedicated subcarrier 0
    theirs = make_problem(Ho, To, bands=[SHARED, DEDICATED], subcarriers=[0, 0], Hx=crandn(rng, 2, 2, 4), cell=1)
    J = interference_plus_noise(mine, theirs)
    expected = (
        H[0] @ T[1] @ hermitian(T[1]) @ hermitian(H[0])
        + Hx[0] @ To[0] @ hermitian(To[0]) @ hermitian(Hx[0])
        + identity(2)
    )
    assert np.allclose(J[0], expected, atol=1e-12)


def test_dedicated_links_never_see_other_cell(rng):
    mine = make_problem(crandn(rng, 1, 2, 4), crandn(rng, 1, 4, 2), Hx=crandn(rng, 1, 2, 4))
    theirs = make_problem(crandn(rng, 1, 2, 4), crandn(rng, 1, 4, 2), cell=1)
    assert np.allclose(interference_plus_noise(mine, theirs), identity(2))


# --- receiver, MSE, weight, rate ---------------------------------------------


def test_receiver_zero_signal():
    U = mmse_receiver(crandn(np.random.default_rng(0), 2, 4), np.zeros((4, 2)), identity(2))
    assert np.array_equal(U, np.zeros((2, 2)))


def test_receiver_scalar():
    p, s2 = 3.0, 0.5
    U = mmse_receiver(np.array([[1.0]]), np.array([[np.sqrt(p)]]), np.array([[s2]]))
    assert U[0, 0] == pytest.approx(np.sqrt(p) / (p + s2), abs=1e-15)


def test_receiver_matches_least_squares_oracle(rng):
    H, T, J = random_link(rng)
    # y = H T x + J^{1/2} z with white x, z: the MSE is ||[I 0] - U^H [HT, J^{1/2}]||_F^2
    G = np.hstack([H @ T, np.linalg.cholesky(J)])
    target = np.hstack([identity(2), np.zeros((2, 2))])
    U_ls = np.linalg.lstsq(hermitian(G), hermitian(target), rcond=None)[0]
    assert np.max(np.abs(mmse_receiver(H, T, J) - U_ls)) <= 1e-9


def test_mse_no_signal():
    E = mse_matrix(np.ones((2, 4)), np.zeros((4, 2)), np.zeros((2, 2)), identity(2), 1.0)
    assert np.allclose(E, identity(2))


def test_mse_scalar():
    p, s2 = 2.0, 0.25
    H, T, J = np.array([[1.0]]), np.array([[np.sqrt(p)]]), np.array([[s2]])
    E = mse_matrix(H, T, mmse_receiver(H, T, J), J, s2)
    assert E[0, 0].real == pytest.approx(s2 / (p + s2), abs=1e-15)


@given(seeds)
def test_mse_two_formulas_agree(seed):
    H, T, J = random_link(np.random.default_rng(seed))
    U = mmse_receiver(H, T, J)
    direct = mse_matrix(H, T, U, J, 1.0)
    assert np.max(np.abs(direct - mmse_mse(H, T, J))) <= 1e-9
    # at the MMSE receiver the error covariance is also I - U^H H T
    assert np.max(np.abs(direct - (identity(2) - hermitian(U) @ H @ T))) <= 1e-9


@given(seeds, st.integers(1, 2))
def test_mse_spectrum_in_unit_interval(seed, a):
    H, T, J = random_link(np.random.default_rng(seed), a=a)
    ev = np.linalg.eigvalsh(mmse_mse(H, T, J))
    assert ev.min() > 0 and ev.max() <= 1 + 1e-10


def test_weight_identity_and_diagonal():
    assert np.allclose(weight_update(identity(2)), identity(2))
    assert np.allclose(weight_update(np.diag([0.5, 0.25])), np.diag([2.0, 4.0]))


@given(seeds)
def test_rate_weight_duality(seed):
    H, T, J = random_link(np.random.default_rng(seed))
    W = weight_update(mmse_mse(H, T, J))
    assert abs(log2_det_hpd(W) - user_rate(H, T, J)) <= 1e-9
    assert np.linalg.eigvalsh(W).min() >= 1 - 1e-12


def test_rate_zero_signal_and_scalar():
    assert user_rate(np.ones((2, 4)), np.zeros((4, 2)), identity(2)) == 0.0
    p = 9.0
    assert user_rate(np.array([[1.0]]), np.array([[3.0]]), np.array([[1.0]])) == pytest.approx(np.log2(1 + p))


def test_unmatched_user_has_no_link():
    topo = Topology.symmetric(18, 3, 0)
    cs = build_channel_set(topo, 1.0, 0, 0)
    asg = allocate_two_stage(cs, 0, GALE_SHAPLEY)
    p = cell_problem(cs, 0, asg.links(), 10.0)
    assert set(p.users).isdisjoint(asg.unmatched)
    assert p.n_links == 12


# --- precoder update ---------------------------------------------------------


def scalar_problem(h=1.3, u=0.4, w=2.5, mu=1.7, p_max=0.5):
    p = make_problem([[[h]]], [[[1.0]]], mu=[mu], p_max=p_max)
    p.U = np.array([[[u]]], dtype=complex)
    p.W = np.array([[[w]]], dtype=complex)
    return p


def test_precoder_scalar_closed_form():
    h, u, w, mu, lam = 1.3, 0.4, 2.5, 1.7, 0.3
    T = precoder_update(scalar_problem(h, u, w, mu), None, lam)
    assert T[0, 0, 0].real == pytest.approx(mu * h * u * w / (mu * h**2 * u**2 * w + lam), abs=1e-14)


def test_precoder_power_vanishes_monotonically():
    cs, problems = two_cell_sample(3)
    update_receivers(problems)
    powers = [np.sum(frob_norm_sq(precoder_update(problems[0], problems[1], lam))) for lam in 10.0 ** np.arange(-3, 7)]
    assert all(b < a for a, b in zip(powers, powers[1:]))
    assert powers[-1] < 1e-8


def lagrangian(T0, problems, lam):
    # WMSE objective of both cells with cell 0 using T0, plus lambda ||T0||^2
    p0, p1 = problems
    p0 = p0.copy()
    p0.T = T0
    total = 0.0
    for p, o in ((p0, p1), (p1, p0)):
        J = interference_plus_noise(p, o)
        E = mse_matrix(p.H, p.T, p.U, J, p.noise_variance)
        total += np.sum(p.mu * np.trace(p.W @ E, axis1=-2, axis2=-1).real)
    return total + lam * np.sum(frob_norm_sq(T0))


def fd_gradient(T, problems, lam, step=1e-6):
    grad = np.zeros(T.shape + (2,))
    for idx in np.ndindex(T.shape):
        for k, d in enumerate((1.0, 1j)):
            hi, lo = T.copy(), T.copy()
            hi[idx] += step * d
            lo[idx] -= step * d
            grad[idx + (k,)] = (lagrangian(hi, problems, lam) - lagrangian(lo, problems, lam)) / (2 * step)
    return grad


@pytest.mark.parametrize("seed", [1, 2, 5])
def test_precoder_is_stationary(seed):
    cs, problems = two_cell_sample(seed, users=5, dedicated=1, shared=1)
    update_receivers(problems)
    lam = 0.37
    T = precoder_update(problems[0], problems[1], lam)
    assert np.linalg.norm(fd_gradient(T, problems, lam)) <= 1e-7
    # a nearby non-stationary point shows the check can fail
    assert np.linalg.norm(fd_gradient(T + 0.01, problems, lam)) > 1e-3


def test_precoder_system_includes_self_and_leakage(rng):
    H, Hx = crandn(rng, 1, 2, 4), crandn(rng, 1, 2, 4)
    mine = make_problem(H, crandn(rng, 1, 4, 2), bands=[SHARED], Hx=crandn(rng, 1, 2, 4))
    theirs = make_problem(crandn(rng, 1, 2, 4), crandn(rng, 1, 4, 2), bands=[SHARED], Hx=Hx, cell=1, mu=[2.0])
    for p in (mine, theirs):
        p.U, p.W = crandn(rng, 1, 2, 2), np.eye(2)[None] * 1.5
    A, B = precoder_system(mine, theirs)
    own = hermitian(H[0]) @ mine.U[0] @ mine.W[0] @ hermitian(mine.U[0]) @ H[0]
    leak = 2.0 * hermitian(Hx[0]) @ theirs.U[0] @ theirs.W[0] @ hermitian(theirs.U[0]) @ Hx[0]
    assert np.allclose(A[0], own + leak, atol=1e-12)
    assert np.allclose(B[0], hermitian(H[0]) @ mine.U[0] @ mine.W[0], atol=1e-12)


# --- bisection ---------------------------------------------------------------


def test_bisect_inactive_constraint():
    cs, problems = two_cell_sample(4)
    update_receivers(problems)
    problems[0].p_max = 1e6
    assert bisect_power(problems[0], problems[1], WmmseSettings()) == 0.0


def test_bisect_scalar_root():
    h, u, w, mu, p_max = 1.3, 0.4, 2.5, 1.7, 0.5
    lam = bisect_power(scalar_problem(h, u, w, mu, p_max), None, WmmseSettings(bisection_tolerance=1e-12))
    closed = mu * h * u * w / np.sqrt(p_max) - mu * h**2 * u**2 * w
    assert closed > 0
    assert lam == pytest.approx(closed, rel=1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_bisect_kkt_residuals(seed):
    cs, problems = two_cell_sample(seed, snr_db=20.0)
    update_receivers(problems)
    p, o = problems
    settings = WmmseSettings(bisection_tolerance=1e-6)
    lam = bisect_power(p, o, settings)
    power = np.sum(frob_norm_sq(precoder_update(p, o, lam)))
    if lam > 0:
        assert abs(power - p.p_max) <= 1e-6
    assert power <= p.p_max + 1e-6
    assert abs(lam * (power - p.p_max)) <= 1e-5


# --- full iteration ----------------------------------------------------------


@pytest.mark.parametrize("snr_db", [0.0, 10.0, 20.0])
def test_point_to_point_reaches_waterfilling(snr_db):
    rng = np.random.default_rng(int(snr_db) + 7)
    H = crandn(rng, 1, 2, 4)
    p_max = 10 ** (snr_db / 10)
    p = make_problem(H, np.zeros((1, 4, 2)), p_max=p_max)
    init_precoders(p, rng)
    result = wmmse_solve([p], WmmseSettings(epsilon=1e-6, max_iterations=5000))
    assert result.converged
    assert abs(result.trace[-1] - waterfill_capacity(H[0], p_max)) <= 1e-3


def test_single_link_example_power_ten():
    rng = np.random.default_rng(99)
    H = crandn(rng, 1, 2, 4)
    p = make_problem(H, np.zeros((1, 4, 2)), p_max=10.0)
    init_precoders(p, rng)
    result = wmmse_solve([p], WmmseSettings(epsilon=1e-6, max_iterations=5000))
    assert abs(result.trace[-1] - waterfill_capacity(H[0], 10.0)) <= 1e-3
    assert np.sum(frob_norm_sq(result.problems[0].T)) <= 10.0 + 1e-6


def test_zero_power_converges_immediately():
    cs, problems = two_cell_sample(0)
    for p in problems:
        p.p_max = 0.0
    result = wmmse_solve(problems)
    assert result.iterations == 1 and result.converged
    assert result.trace == [0.0, 0.0]
    assert all(np.all(p.rate == 0) for p in result.problems)


def test_solve_does_not_mutate_inputs():
    cs, problems = two_cell_sample(2)
    before = [p.T.copy() for p in problems]
    wmmse_solve(problems, WmmseSettings(max_iterations=3))
    assert all(np.array_equal(b, p.T) for b, p in zip(before, problems))


def test_rates_equal_log_det_of_weights():
    cs, problems = two_cell_sample(6)
    result = wmmse_solve(problems, WmmseSettings(max_iterations=5))
    for p, o in zip(result.problems, reversed(result.problems)):
        J = interference_plus_noise(p, o)
        assert np.allclose(p.rate, user_rate(p.H, p.T, J), atol=1e-9)
        assert np.allclose(p.rate, log2_det_hpd(p.W), atol=1e-9)
    assert weighted_sum_rate(result.problems) == pytest.approx(result.trace[-1])


def test_weights_scale_rates():
    cs, problems = two_cell_sample(6)
    result = wmmse_solve(problems, WmmseSettings(max_iterations=1))
    for p in result.problems:
        p.mu = np.full(p.n_links, 2.0)
    assert weighted_sum_rate(result.problems) == pytest.approx(2 * result.trace[-1])


@given(seeds, st.sampled_from([0.0, 10.0, 20.0]), st.integers(0, 2))
def test_monotone_wsr_objective_and_power(seed, snr_db, shared):
    cs, problems = two_cell_sample(seed % 10_000, users=5, dedicated=1, shared=shared, snr_db=snr_db)
    powers = []
    result = wmmse_solve(
        problems,
        WmmseSettings(max_iterations=25),
        track_objective=True,
        callback=lambda b, ps: powers.append([p.power() - p.p_max for p in ps]),
    )
    assert np.min(np.diff(result.trace)) >= -1e-8
    assert np.max(np.diff(result.objective)) <= 1e-8
    assert np.max(powers) <= 1e-6
    assert all(np.all(p.rate >= 0) for p in result.problems)


@given(seeds, st.floats(0.1, 10.0))
def test_scale_covariance(seed, c):
    # scaling every channel by c and the noise by c^2 leaves the precoders unchanged
    cs, problems = two_cell_sample(seed % 10_000, users=5, dedicated=1, shared=1)
    scaled = []
    for p in problems:
        q = p.copy()
        q.H, q.H_cross, q.noise_variance = c * p.H, c * p.H_cross, c**2 * p.noise_variance
        scaled.append(q)
    settings = WmmseSettings(max_iterations=5)
    a = wmmse_solve(problems, settings)
    b = wmmse_solve(scaled, settings)
    for p, q in zip(a.problems, b.problems):
        assert np.max(np.abs(p.T - q.T)) <= 1e-8
    assert abs(a.trace[-1] - b.trace[-1]) <= 1e-8


def test_wmse_objective_matches_rates_at_mmse():
    # at the MMSE receiver with W = E^{-1}, Tr(W E) = a, so the objective is sum mu (a - R)
    cs, problems = two_cell_sample(8)
    result = wmmse_solve(problems, WmmseSettings(max_iterations=2))
    expected = sum(np.sum(p.mu * (p.streams - p.rate)) for p in result.problems)
    assert wmse_objective(result.problems) == pytest.approx(expected, abs=1e-9)


def test_settings_validation():
    with pytest.raises(ValueError):
        WmmseSettings(epsilon=0)
    with pytest.raises(ValueError):
        WmmseSettings(max_iterations=0)
    with pytest.raises(ValueError):
        WmmseSettings(bisection_tolerance=-1)


def test_precoders_initialized_with_equal_power(rng):
    cs, problems = two_cell_sample(1)
    for p in problems:
        assert np.allclose(frob_norm_sq(p.T), p.p_max / p.n_links)
        assert p.power() == pytest.approx(p.p_max)


def test_link_snapshot():
    cs, problems = two_cell_sample(1)
    link = problems[0].link(0)
    assert link.band == DEDICATED and link.T.shape == (4, 2) and link.mu == 1.0
