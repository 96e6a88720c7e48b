"""Joint visit-count law: transforms, per-excursion laws, and the pmf
oracle, cross-checked against each other and closed-form marginals."""

import math

import numpy as np
import pytest

from heavypoints.errors import OriginNotAllowed, OutOfDomain
from heavypoints.jointlaw import (
    JointSite,
    bare_sup,
    estimate_window,
    excursion_law,
    joint_pmf_oracle,
    k_gamma,
    log_phi_dev_bound,
    marginal_visit_law,
    phi,
    psi,
    psi_envelope,
    restricted_mgf,
    site_pack,
)

SITES = [(1, 0, 0), (1, 1, 0), (1, 1, 1), (2, 0, 0), (2, 1, 0)]


@pytest.fixture(scope="module")
def c_e1(dc3):
    return site_pack(dc3, (1, 0, 0))


def synthetic_site(gamma):
    """Exact site constants for the boundary case gamma_x = gamma."""
    q = (1.0 - gamma) / (2.0 - gamma)
    s = (1.0 - gamma) * (1.0 - q)
    m = (1.0 - gamma)
    return JointSite(gamma=gamma, gamma_x=gamma, q_x=q, s_x=s, m_x=m)


def test_site_pack_origin_rejected(dc3):
    with pytest.raises(OriginNotAllowed):
        site_pack(dc3, (0, 0, 0))


def test_site_pack_copies_constants(dc3):
    c = site_pack(dc3, (1, 1, 0))
    sc = dc3.site((1, 1, 0))
    assert c.gamma == dc3.gamma
    assert (c.gamma_x, c.q_x, c.s_x, c.m_x) == (sc.gamma_x, sc.q_x, sc.s_x,
                                                sc.m_x)


def test_domain_windows(dc3):
    g = dc3.gamma
    lo, hi = estimate_window(g)
    assert lo < 0.0 < hi < bare_sup(g)
    assert k_gamma(0.0, g) == pytest.approx(1.0 / (g * (1.0 - g)), rel=1e-14)
    # the constant blows up toward the window edge
    assert k_gamma(hi * 0.999, g) > 100.0 * k_gamma(0.0, g)
    with pytest.raises(OutOfDomain):
        k_gamma(hi + 1e-6, g)


def test_phi_psi_at_zero(dc3):
    for x in SITES:
        c = site_pack(dc3, x)
        assert phi(0.0, c) == pytest.approx(1.0, abs=1e-14)
        assert psi(0.0, c) == pytest.approx(1.0, abs=1e-14)


def test_phi_log_derivative_is_m(dc3):
    h = 1e-6
    for x in SITES:
        c = site_pack(dc3, x)
        dlog = (math.log(phi(h, c)) - math.log(phi(-h, c))) / (2.0 * h)
        assert dlog == pytest.approx(c.m_x, rel=1e-6)


def test_phi_deviation_bound(dc3):
    for x in SITES:
        c = site_pack(dc3, x)
        lo, hi = estimate_window(c.gamma)
        for v in np.linspace(0.9 * lo, 0.9 * hi, 41):
            v = float(v)
            if v == 0.0:
                continue
            dev = abs(math.log(phi(v, c, strict=True)) - c.m_x * v)
            assert dev <= log_phi_dev_bound(v, c) * (1.0 + 1e-12)


def test_psi_under_envelope(dc3):
    for x in SITES:
        c = site_pack(dc3, x)
        lo, hi = estimate_window(c.gamma)
        for v in np.linspace(0.9 * lo, 0.9 * hi, 41):
            v = float(v)
            assert psi(v, c, strict=True) <= psi_envelope(v, c.gamma) * (
                1.0 + 1e-12)
    with pytest.raises(OutOfDomain):
        psi_envelope(math.log(2.0), dc3.gamma)  # e^v - 1 = 1 > gamma


def test_psi_specialisation_at_gamma_boundary():
    # when gamma_x = gamma the escape MGF collapses to a pure geometric
    # transform 1/(1 - (1-gamma)(e^v - 1))
    c = synthetic_site(0.659463)
    for v in (-0.3, -0.1, 0.05, 0.2):
        closed = 1.0 / (1.0 - (1.0 - c.gamma) * math.expm1(v))
        assert psi(v, c) == pytest.approx(closed, rel=1e-13)


def test_psi_specialisation_near_boundary_site(dc3, gt3):
    # gamma_{e1} = gamma up to table error, so e1 sits within that
    # error of the collapsed form
    c = site_pack(dc3, (1, 0, 0))
    v = 0.1
    closed = 1.0 / (1.0 - (1.0 - c.gamma) * math.expm1(v))
    assert psi(v, c) == pytest.approx(closed, abs=1e-5)


def test_mgf_domain_errors(c_e1):
    with pytest.raises(OutOfDomain):
        restricted_mgf(bare_sup(c_e1.gamma) + 0.01, 2, c_e1)
    lo, hi = estimate_window(c_e1.gamma)
    with pytest.raises(OutOfDomain):
        phi(hi + 0.01, c_e1, strict=True)
    phi(hi + 0.01, c_e1, strict=False)  # bare domain is wider


def test_mgf_at_zero_is_row_mass(dc3):
    for x in SITES:
        c = site_pack(dc3, x)
        for k in range(0, 12):
            want = c.gamma * (1.0 - c.gamma) ** k
            assert restricted_mgf(0.0, k, c) == pytest.approx(want, rel=5e-14)


def test_mgf_forms_agree(dc3):
    for x in SITES:
        c = site_pack(dc3, x)
        for v in (-0.3, -0.1, 0.05, 0.1, 0.3):
            for k in range(0, 16):
                a = restricted_mgf(v, k, c, form="qs")
                b = restricted_mgf(v, k, c, form="phipsi")
                assert abs(a - b) <= 1e-12 * max(1.0, abs(a))
                # form="both" embeds the same cross-check
                assert restricted_mgf(v, k, c) == a


def test_mgf_deep_negative_v_isolates_atom(c_e1):
    # e^{v Z} -> 1{Z=0}: row 0 converges to P(no return, no visit)
    atom = 1.0 - c_e1.q_x - c_e1.s_x
    assert restricted_mgf(-40.0, 0, c_e1) == pytest.approx(atom, abs=1e-15)


def test_excursion_law_masses(dc3):
    for x in SITES:
        c = site_pack(dc3, x)
        law = excursion_law(c)
        assert law.mass_finite() == pytest.approx(1.0 - c.gamma, abs=1e-14)
        assert law.mass_infinite() == pytest.approx(c.gamma, abs=1e-14)
        # explicit sums against the closed-form masses
        s_fin = math.fsum(law.pmf_finite(j) for j in range(0, 400))
        s_inf = math.fsum(law.pmf_infinite(j) for j in range(0, 400))
        assert s_fin == pytest.approx(law.mass_finite(), abs=1e-14)
        assert s_inf == pytest.approx(law.mass_infinite(), abs=1e-14)


def test_marginal_visit_law(dc3):
    for x in SITES:
        c = site_pack(dc3, x)
        assert marginal_visit_law(0, c) == c.gamma_x
        J = 60
        tail = (1.0 - c.gamma_x) * (1.0 - c.gamma) ** J
        total = math.fsum(
            [marginal_visit_law(j, c) for j in range(0, J + 1)] + [tail])
        assert total == pytest.approx(1.0, abs=1e-14)


def test_joint_oracle_corner_cells(c_e1):
    law = joint_pmf_oracle(c_e1, K=10, J=10)
    atom = 1.0 - c_e1.q_x - c_e1.s_x
    assert law.pmf[0, 0] == pytest.approx(atom, rel=1e-13)
    assert law.pmf[0, 1] == pytest.approx(c_e1.s_x * atom, rel=1e-13)
    assert law.high_k_mass == pytest.approx((1.0 - c_e1.gamma) ** 11,
                                            rel=1e-13)


def test_joint_oracle_mass_and_rows(dc3):
    for x in [(1, 0, 0), (1, 1, 0)]:
        c = site_pack(dc3, x)
        law = joint_pmf_oracle(c, K=25, J=50)
        assert abs(law.total_mass() - 1.0) <= 1e-12
        for k in range(0, 26):
            want = c.gamma * (1.0 - c.gamma) ** k
            assert law.row_sum(k) == pytest.approx(want, rel=1e-12)


def test_joint_oracle_columns_match_marginal(c_e1):
    K, J = 60, 30
    law = joint_pmf_oracle(c_e1, K=K, J=J)
    # the k > K block is (1-gamma)^{K+1} ~ 1e-28, negligible per column
    for j in range(0, J + 1):
        col = math.fsum(float(v) for v in law.pmf[:, j])
        assert col == pytest.approx(marginal_visit_law(j, c_e1),
                                    abs=1e-10 + law.high_k_mass)


def test_joint_oracle_reproduces_mgf(dc3):
    # row transform of the pmf against the closed form; J large enough
    # that the dropped j-tail is ~ q^J, orders below the tolerance
    J = 80
    for x in [(1, 0, 0), (1, 1, 0)]:
        c = site_pack(dc3, x)
        law = joint_pmf_oracle(c, K=12, J=J)
        # true j > J mass is ~ q^J ~ 1e-48; the report only resolves it
        # down to subtraction dust, eps * row mass
        assert float(law.row_tail.max()) < 1e-15
        for v in (-0.2, -0.1, 0.05, 0.1):
            w = np.exp(v * np.arange(J + 1))
            for k in range(0, 13):
                got = float(law.pmf[k] @ w)
                want = restricted_mgf(v, k, c)
                assert abs(got - want) <= 1e-10
