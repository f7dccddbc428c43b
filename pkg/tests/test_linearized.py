import numpy as np
import pytest

from ncsol import linearized as lin
from ncsol import rank_one as ro
from ncsol import soliton as sol
from ncsol.errors import NumericalError
from ncsol.lattice import matrix_vector


@pytest.fixture(scope="module")
def p20():
    return sol.solve(20.0, 1)


@pytest.fixture(scope="module")
def p50():
    return sol.solve(50.0, 1)


def test_apply_h_matches_dense(p20):
    rng = np.random.default_rng(2)
    n = p20.alpha.values.size - 1 + 30
    u = rng.standard_normal(n + 1)
    w = rng.standard_normal(n + 1)
    for which in lin.WHICH:
        ou, ow = lin.apply_h_arrays(which, u, w, 20.0, 1, p20)
        m = lin.dense_h(which, n, 20.0, 1, p20)
        ref = m @ np.concatenate([u, w])
        got = np.concatenate([ou, ow])
        assert np.max(np.abs(got - ref)) < 1e-9, which


def test_potentials_are_q_constants(p20):
    L2 = lin.LinearizedOperator(20.0, 1, p20, "H2")
    assert L2.q1 == pytest.approx(2 * p20.rho**2, rel=1e-15)
    assert L2.q2 == pytest.approx(p20.rho**2, rel=1e-15)
    assert L2.q1 > 0 and L2.q2 > 0 and np.isfinite(L2.m_mu)


def test_kernel_identities(p20, p50):
    for p in (p20, p50):
        k = lin.kernel_identities(p)
        assert k["phase_residual"] <= 1e-10 * k["phase_scale"]
        assert k["scaling_residual"] <= 1e-5 * k["rho"]


def test_u_localization_and_norm(p20):
    # U = H - H2 kills anything supported at site 0 and is bounded by m(mu)
    L = lin.LinearizedOperator(20.0, 1, p20, "H")
    n = p20.alpha.values.size + 20
    v0 = np.zeros(n + 1)
    v0[0] = 1.0
    hu, hw = lin.apply_h_arrays("H", v0, 2 * v0, 20.0, 1, p20)
    h2u, h2w = lin.apply_h_arrays("H2", v0, 2 * v0, 20.0, 1, p20)
    assert np.max(np.abs(hu - h2u)) < 1e-14
    assert np.max(np.abs(hw - h2w)) < 1e-14
    assert L.u_norm_exact() <= L.m_mu
    # and the potential difference vanishes at site 0 for any input
    rng = np.random.default_rng(0)
    u, w = rng.standard_normal(n + 1), rng.standard_normal(n + 1)
    du = lin.apply_h_arrays("H", u, w, 20.0, 1, p20)[0] - lin.apply_h_arrays("H2", u, w, 20.0, 1, p20)[0]
    assert abs(du[0]) < 1e-14


def test_h_origin_ratio_ladder():
    # h(0) sigma mu^{2s+2}/2 = 1 - 6(sigma+1)/mu + O(mu^-2); the coefficient
    # follows from the subleading term of the off-peak overlap and is pinned
    # by the ladder below
    for sg, cap in [(1, 100.0)]:
        devs = {}
        for mu in (50.0, 100.0, 200.0):
            p = sol.solve(mu, sg)
            df = lin.DispersionFunction.from_profile(p)
            devs[mu] = (df.h_origin_ratio() - 1.0) * mu
        for mu, d in devs.items():
            assert -6 * (sg + 1) - 3 <= d <= -6 * (sg + 1) + 3, (sg, mu, d)
        assert abs(devs[200.0] + 6 * (sg + 1)) < abs(devs[50.0] + 6 * (sg + 1))


def test_h_origin_product_form_identity(p50):
    df = lin.DispersionFunction.from_profile(p50)
    assert df.h_origin() == pytest.approx(df.h_origin_alt(), rel=1e-10)
    assert df.h_origin() > 0


def test_h_factorized_identity(p50):
    df = lin.DispersionFunction.from_profile(p50)
    assert df.c2 == pytest.approx(p50.sigma**2 / ((2 * p50.sigma + 1) ** 2 * p50.rho ** (4 * p50.sigma)), rel=1e-12)
    assert df.c2 > 0
    for z in [0.0 + 0j, 10.0 + 0j, 0.02j, -30.0 + 0j]:
        a, b = df.h(z), df.h_alt_form(z)
        assert abs(a - b) <= 1e-10 * max(1.0, abs(a))


def test_h_pure_imaginary_reality(p50):
    df = lin.DispersionFunction.from_profile(p50)
    for b in [1e-3, 0.02, 1.0, 10.0]:
        val = df.h(1j * b)
        assert abs(val.imag) <= 1e-12 * max(1.0, abs(val.real))


def test_threshold_limit_sigma1():
    # lim_{a->mu} h(a) = mu/2 + 1/4 + O(1/mu); the sign of the 1/4 is fixed
    # by direct evaluation of h just below the threshold
    for mu in (50.0, 100.0, 200.0):
        p = sol.solve(mu, 1)
        df = lin.DispersionFunction.from_profile(p)
        tl = df.threshold_limit()
        assert abs(tl - (mu / 2 + 0.25)) <= 5.0 / mu, mu
        # direct approach agrees with the closed-form limit (log-slow)
        assert abs(np.real(df.h(mu - 1e-8)) - tl) < 0.1
        assert tl > 0


def test_threshold_limit_sigma_above_one():
    # mu^0 coefficient (sigma^2-1)^{-1}; the mu^-1 term comes out with a
    # minus sign (the statement/proof disagree; the fit decides)
    for sg in (2, 3):
        c = sg**2 / ((sg + 1) * (sg - 1) ** 2)
        slopes = []
        for mu in (100.0, 200.0, 400.0):
            p = sol.solve(mu, sg)
            df = lin.DispersionFunction.from_profile(p)
            tl = df.threshold_limit()
            assert abs(tl - 1.0 / (sg**2 - 1)) <= 3.0 / mu, (sg, mu)
            slopes.append((tl - 1.0 / (sg**2 - 1)) * mu)
        assert all(s < 0 for s in slopes)
        assert abs(slopes[-1] + c) < 0.2 * c


def test_imaginary_roots_ladder():
    for sg in (1, 2):
        for mu in (50.0, 100.0, 200.0):
            p = sol.solve(mu, sg)
            df = lin.DispersionFunction.from_profile(p)
            b, seed = lin.find_imaginary_roots(df)
            assert abs(b / seed - 1.0) <= 10.0 / mu, (sg, mu)


def test_imaginary_root_scaling_law():
    bs = {}
    for mu in (50.0, 100.0, 200.0):
        p = sol.solve(mu, 1)
        bs[mu] = lin.find_imaginary_roots(lin.DispersionFunction.from_profile(p))[0]
    assert bs[100.0] / bs[50.0] == pytest.approx(0.5, abs=0.03)
    assert bs[200.0] / bs[100.0] == pytest.approx(0.5, abs=0.02)


def test_curvature_at_origin():
    for mu in (50.0, 100.0):
        p = sol.solve(mu, 1)
        df = lin.DispersionFunction.from_profile(p)
        ratio = df.curvature_origin() * mu**2 / 2.0
        assert 1.0 - 4.0 / mu <= ratio <= 1.0 + 1.0 / mu


def test_real_axis_scan(p50):
    df = lin.DispersionFunction.from_profile(p50)
    scan = lin.real_axis_scan(df, n_base=3000)
    assert scan["all_positive"]
    assert scan["min_h"] > 0
    assert scan["n_points"] >= 3000
    # r2/(mu+sigma) -> 1/(sigma+1) (sigma = 1 here)
    assert abs(scan["r2_normalized"] - 1.0) <= 5.0 / p50.mu
    assert scan["r1"] == pytest.approx(-scan["r2"], rel=1e-12)
    # interior h1 model deviation is O(10/mu)
    assert scan["h1_interior_rel_dev"] < 0.5


def test_r2_normalization_sigma2():
    # for sigma > 1 the self-consistent root location is sigma(mu+1)/(sigma+1),
    # which the scan reports alongside the (mu+sigma)/(sigma+1) form
    p = sol.solve(100.0, 2)
    df = lin.DispersionFunction.from_profile(p)
    scan = lin.real_axis_scan(df, n_base=500)
    assert abs(scan["r2_normalized_selfconsistent"] - 1.0) <= 5.0 / p.mu
    assert abs(scan["r2_normalized"] - 1.0) > 0.5  # the (mu+s)/(s+1) form is off by ~2x


def test_eigenvalue_report(p50):
    rep = lin.eigenvalue_report(p50)
    assert rep.lambda_minus == np.conj(rep.lambda_plus)
    assert rep.lambda_plus.real == 0.0
    assert rep.verdicts["real_axis_positive"]
    js = rep.to_json()
    assert "lambda_plus" in js


def test_imaginary_root_bracket_failure_reported():
    p = sol.solve(50.0, 1)
    df = lin.DispersionFunction(mu=50.0, sigma=1, q1=p.rho**2 * 2, q2=p.rho**2 * 1e-6)
    with pytest.raises(NumericalError):
        lin.find_imaginary_roots(df)


def test_dense_oracle_h2_gap(p20):
    eigs = lin.matrix_spectrum_oracle("H2", 400, p20)
    gap = lin.gap_eigenvalues(eigs, 20.0)
    assert gap.size == 2
    df = lin.DispersionFunction.from_profile(p20)
    b, _ = lin.find_imaginary_roots(df)
    assert np.allclose(sorted(np.abs(gap.imag)), [b, b], rtol=0.1)
    assert np.max(np.abs(gap.real)) < 1e-8


def test_dense_oracle_h_zero_cluster(p20):
    for n in (300, 500):
        eigs = lin.matrix_spectrum_oracle("H", n, p20)
        gap = lin.gap_eigenvalues(eigs, 20.0)
        assert gap.size == 2, n  # no spurious gap eigenvalues at any N
        assert np.max(np.abs(gap)) < 1e-4  # the zero cluster
    sv = lin.smallest_singular_values("H", 400, p20, k=2)
    assert sv[0] < 1e-8  # geometric kernel
    assert sv[1] > 0.5 * 20.0  # next singular value sits at the gap scale


@pytest.mark.xfail(
    reason="Jordan structure at 0: geometric multiplicity is 1, so only one "
    "singular value collapses; the stated two-small-singular-values form of "
    "the multiplicity-2 check cannot hold (the cluster is visible in the "
    "eigenvalues, asserted above)",
    strict=True,
)
def test_h_zero_cluster_two_singular_values(p20):
    sv = lin.smallest_singular_values("H", 400, p20, k=2)
    assert sv[1] < 1e-6


def test_resolvent_convergence_ladder_sigma1():
    rep = lin.resolvent_convergence_check(1, mus=(10.0, 20.0, 40.0), n=500)
    for r in rep["scaled_ratios"]:
        assert abs(r / rep["m_law_ratio"] - 1.0) <= 0.2
    for row in rep["rows"]:
        assert row["u_norm"] <= row["m_mu"]
        assert row["norm_diff"] <= row["m_mu"] * row["norm_rh"] / (0.5 * row["mu"]) * 2


def test_resolvent_convergence_sigma2_upper_bound_only():
    # the measured decay is strictly faster than the m(mu) law for sigma >= 2
    rep = lin.resolvent_convergence_check(2, mus=(10.0, 20.0, 40.0), n=400)
    for r in rep["scaled_ratios"]:
        assert r <= rep["m_law_ratio"] * 1.2


@pytest.mark.xfail(
    reason="||R^H_z|| <= [1-m/|z|]^{-1}/|z| presumes a normal operator; the "
    "badly scaled Jordan chain at 0 gives ||R^H|| ~ ||a||/||d_mu a|| / |z|^2, "
    "which exceeds the bound at z = i mu/2 for every mu (measured ~4x)",
    strict=True,
)
def test_resolvent_norm_bound_as_stated():
    rep = lin.resolvent_convergence_check(1, mus=(20.0,), n=400)
    assert rep["rows"][0]["rh_bound_ok"]


def test_u_zero_degenerate_case(p20):
    # with a site-0-only profile stand-in, H == H2 and the difference vanishes
    import dataclasses
    from ncsol.lattice import LatticeVector

    a = np.zeros(30)
    a[0] = p20.rho
    a[1:] = 1e-300  # keep positivity/monotonicity without affecting anything
    fake = dataclasses.replace(
        p20,
        alpha=LatticeVector(np.maximum(a, np.geomspace(1e-250, 1e-290, 30))),
    )
    rng = np.random.default_rng(1)
    u, w = rng.standard_normal(40), rng.standard_normal(40)
    du = np.concatenate(lin.apply_h_arrays("H", u, w, 20.0, 1, fake)) - np.concatenate(
        lin.apply_h_arrays("H2", u, w, 20.0, 1, fake)
    )
    assert np.max(np.abs(du)) < 1e-12


def test_h_dense_cross_check(p50):
    rep = lin.h_dense_cross_check(p50, 0.3 + 0.2j, n=4000)
    assert rep["dev"] <= 1e-7
