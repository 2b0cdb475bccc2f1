import numpy as np
import pytest

from gmae import symexpr as sx
from gmae.model import (AlphaSystem, ChartError, GeneralGmas, JetPoint, OneForm, canonical_forms, constraint_plane,
                        contact_form, eta_factorization, exterior_d_contact, factorization_residual, reduced_derivative,
                        total_dx, wedge)
from gmae.symexpr import JET_VARS, evaluate, parse

ALPHAS = ["q", "p + q^2", "z - p*x - q*y", "(q - y)/x", "-z/(q*x) + 1/x + p/q", "x*y + sin(p*q)"]


def box_points(rng, n):
    return [dict(zip(JET_VARS, rng.uniform(1, 2, 5))) for _ in range(n)]


class TestForms:
    def test_psi_coefficients_alpha_q(self):
        _, psi = canonical_forms(AlphaSystem("q"))
        pt = JetPoint(1, 2, 3, 4, 5)
        np.testing.assert_array_equal(psi.at(pt), [0, 0, 0, 1, -5])

    def test_contact_annihilates_total_x_direction(self, rng):
        w0 = contact_form()
        for pt in box_points(rng, 20):
            assert w0(pt, [1, 0, pt["p"], 0, 0]) == pytest.approx(0, abs=1e-15)

    def test_alpha_zero(self):
        _, psi = canonical_forms(AlphaSystem("0"))
        np.testing.assert_array_equal(psi.at(JetPoint(1, 2, 3, 4, 5)), [0, 0, 0, 1, 0])

    def test_exterior_derivative_of_contact_form(self, rng):
        # oracle: dw = d(c_i) ^ dx_i assembled from symbolic partials of the coefficients
        w0 = contact_form()
        for _ in range(20):
            pt = dict(zip(JET_VARS, rng.normal(size=5)))
            u, v = rng.normal(size=5), rng.normal(size=5)
            total = 0.0
            for i, c in enumerate(w0.coefficients):
                grad = np.array([evaluate(sx.diff(c, k), pt) for k in JET_VARS])
                e_i = np.eye(5)[i]
                total += wedge(grad, e_i, u, v)
            assert exterior_d_contact(u, v) == pytest.approx(total, abs=1e-12)

    def test_oneform_rejects_foreign_variables(self):
        with pytest.raises(ValueError):
            OneForm(dx=parse("t"))

    def test_general_all_zero_rejected(self):
        with pytest.raises(ValueError):
            GeneralGmas(0, 0, 0, 0)


class TestReducedDerivative:
    def test_z_case_A(self):
        g = GeneralGmas(1, 0)
        f = reduced_derivative(parse("z"), g, "A", "x")
        assert evaluate(f, {"p": 2.5, "x": 0, "y": 0, "z": 0, "q": 0}) == 2.5

    def test_p_case_A_q_tag(self):
        g = GeneralGmas(parse("x + 2"), parse("y*q"))
        f = reduced_derivative(parse("p"), g, "A", "q")
        pt = {"x": 1.0, "y": 3.0, "z": 0.0, "p": 0.0, "q": 2.0}
        assert evaluate(f, pt) == pytest.approx(-6.0 / 3.0)

    def test_alpha_x_matches_fd(self, rng):
        # oracle: central differences of alpha along the total x direction
        alpha = parse("p + q^2 + z*x")
        g = GeneralGmas.from_alpha(alpha)
        f = reduced_derivative(alpha, g, "A", "x")
        h = 1e-6
        for pt in box_points(rng, 100):
            up, dn = dict(pt), dict(pt)
            up["x"] += h
            up["z"] += pt["p"] * h
            dn["x"] -= h
            dn["z"] -= pt["p"] * h
            fd = (evaluate(alpha, up) - evaluate(alpha, dn)) / (2 * h)
            assert evaluate(f, pt) == pytest.approx(fd, rel=1e-7, abs=1e-7)
            assert evaluate(f, pt) == pytest.approx(evaluate(total_dx(alpha), pt), rel=1e-13)

    def test_invalid_tag(self):
        with pytest.raises(ValueError):
            reduced_derivative(parse("p"), GeneralGmas(1, 0), "A", "p")


class TestEtaFactorization:
    def test_alpha_system_case_A(self):
        g = GeneralGmas.from_alpha(parse("q"))
        pt = JetPoint(1, 2, 3, 4, 5)
        eta1, eta2 = eta_factorization(g, "A", pt)
        np.testing.assert_allclose(eta1.at(pt), [5, 1, 0, 0, 0])
        np.testing.assert_allclose(eta2.at(pt), [0, 0, 0, 0, 1])

    def test_case_C_only(self):
        g = GeneralGmas(0, 0, 1, 0)
        pt = JetPoint(1, 2, 3, 4, 5)
        eta1, eta2 = eta_factorization(g, "C", pt)
        np.testing.assert_allclose(eta1.at(pt), [0, 1, 0, 0, 0])
        np.testing.assert_allclose(eta2.at(pt), [0, 0, 0, 0, 1])

    def test_case_B_where_B_vanishes(self):
        with pytest.raises(ChartError):
            eta_factorization(GeneralGmas(1, parse("q - 5")), "B", JetPoint(1, 2, 3, 4, 5))

    @pytest.mark.parametrize("case", ["A", "B", "C", "D"])
    def test_congruence_at_random_points(self, rng, case):
        g = GeneralGmas(parse("1 + x^2"), parse("q - 3"), parse("sin(y) + 2"), parse("p*z - 7"))
        for pt in box_points(rng, 100):
            eta1, eta2 = eta_factorization(g, case, pt)
            assert factorization_residual(g, eta1, eta2, pt) < 1e-9

    def test_constraint_plane_annihilated(self, rng):
        g = GeneralGmas.from_alpha(parse("x*y + p"))
        for pt in box_points(rng, 10):
            P = constraint_plane(g, pt)
            assert np.abs(contact_form().at(pt) @ P).max() < 1e-14
            assert np.abs(g.psi_form().at(pt) @ P).max() < 1e-14


class TestAlphaSystem:
    @pytest.mark.parametrize("alpha", ALPHAS)
    def test_rho_times_G(self, alpha, rng):
        sys = AlphaSystem(alpha)
        for pt in box_points(rng, 50):
            try:
                G = evaluate(sys.G, pt)
            except sx.DomainError:
                continue
            if abs(G) > 1e-6:
                assert evaluate(sys.rho, pt) * G == pytest.approx(1.0, rel=1e-13)

    @pytest.mark.parametrize("alpha", ALPHAS)
    def test_partials_against_fd(self, alpha, rng):
        sys = AlphaSystem(alpha)
        h = 1e-6
        for pt in box_points(rng, 10):
            for v in JET_VARS:
                up, dn = dict(pt), dict(pt)
                up[v] += h
                dn[v] -= h
                fd = (evaluate(sys.alpha, up) - evaluate(sys.alpha, dn)) / (2 * h)
                assert evaluate(sys.partial(v), pt) == pytest.approx(fd, rel=1e-6, abs=1e-7)

    def test_second_partials_symmetric_lookup(self):
        sys = AlphaSystem("x*y*q")
        assert sys.partial("q", "x") is sys.partial("x", "q")

    def test_field_lookup(self):
        sys = AlphaSystem("p + q^2")
        pt = {"x": 1, "y": 1, "z": 1, "p": 1, "q": 3}
        assert evaluate(sys.field("alpha_q"), pt) == 6
        assert evaluate(sys.field("K"), pt) == pytest.approx(1 * (6 + 10 * 1))

    def test_rejects_non_jet_variables(self):
        with pytest.raises(ValueError):
            AlphaSystem("q + t")

    def test_compiled_vectorized(self, rng):
        sys = AlphaSystem("(q - y)/x")
        pts = rng.uniform(1, 2, (20, 5))
        np.testing.assert_allclose(sys.compiled("beta", True)(*pts.T), pts[:, 4], rtol=1e-14)
