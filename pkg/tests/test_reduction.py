import numpy as np
import pytest

from gmae import symexpr as sx
from gmae.model import AlphaSystem, JetPoint, canonical_forms
from gmae.reduction import (ChartExitError, bar_eval, base_function_check, forward_jacobian, phi_forward,
                            phi_inverse, phi_inverse_batch, reduced_generators)
from gmae.symexpr import JET_VARS, parse

BOX = {v: (1.0, 2.0) for v in JET_VARS}
CASES = [("q", "generic"), ("p + q^2", "generic"), ("z - p*x - q*y", "generic"),
         ("(q - y)/x", "nongeneric"), ("-z/(q*x) + 1/x + p/q", "nongeneric")]


def closed_form_inverse(alpha, t):
    """Closed-form chart inverses for the three example systems."""
    x0, x1, x2, x3, x4 = t
    if alpha == "q":
        y = x1 - x4 * x0
    elif alpha == "p + q^2":
        y = x1 - (x3 + x4**2) * x0
    elif alpha == "(q - y)/x":
        y = x4 - x0 * x1
    return np.array([x0, y, x2 + x3 * x0 + x4 * y, x3, x4])


class TestForward:
    def test_generic_example(self):
        got = phi_forward(AlphaSystem("q"), "generic", JetPoint(1, 2, 3, 4, 5)).as_array()
        np.testing.assert_array_equal(got, [1, 7, -11, 4, 5])

    def test_nongeneric_example(self):
        got = phi_forward(AlphaSystem("(q - y)/x"), "nongeneric", JetPoint(1, 2, 3, 4, 5)).as_array()
        np.testing.assert_array_equal(got, [1, 3, -11, 4, 5])

    # the last case divides by q, so it is undefined where q = 0
    @pytest.mark.parametrize("alpha,mode", CASES[:4])
    def test_x2_is_z_when_slopes_vanish(self, alpha, mode):
        got = phi_forward(AlphaSystem(alpha), mode, JetPoint(1.3, 0.4, 2.7, 0, 0)).as_array()
        assert got[2] == 2.7

    def test_jacobian_matches_fd(self, rng):
        sys = AlphaSystem("p + q^2 + sin(y*z)")
        h = 1e-6
        for _ in range(20):
            pt = rng.uniform(1, 2, 5)
            J = forward_jacobian(sys, "generic", pt)
            for k in range(5):
                e = np.eye(5)[k] * h
                fd = (phi_forward(sys, "generic", pt + e).as_array() - phi_forward(sys, "generic", pt - e).as_array()) / (2 * h)
                np.testing.assert_allclose(J[:, k], fd, rtol=1e-6, atol=1e-7)


class TestInverse:
    def test_alpha_q_point(self):
        got = phi_inverse(AlphaSystem("q"), "generic", (1, 7, -11, 4, 5)).as_array()
        np.testing.assert_allclose(got, [1, 2, 3, 4, 5], atol=1e-12)

    @pytest.mark.parametrize("alpha,mode", [("q", "generic"), ("p + q^2", "generic"), ("(q - y)/x", "nongeneric")])
    def test_matches_closed_forms(self, alpha, mode, rng):
        sys = AlphaSystem(alpha)
        worst = 0.0
        for _ in range(1000):
            t = rng.uniform(-2, 2, 5)
            if mode == "nongeneric":
                t[0] = rng.uniform(1, 2)
            got = phi_inverse(sys, mode, t).as_array()
            worst = max(worst, np.abs(got - closed_form_inverse(alpha, t)).max())
        assert worst < 1e-10

    @pytest.mark.parametrize("alpha,mode", CASES)
    def test_round_trip(self, alpha, mode, rng):
        sys = AlphaSystem(alpha)
        pts = rng.uniform(1, 2, (1000, 5))
        targets = np.array([phi_forward(sys, mode, p).as_array() for p in pts])
        jets, ok = phi_inverse_batch(sys, mode, targets, guess_yz=pts[:, 1:3] + 0.05)
        assert ok.all()
        np.testing.assert_allclose(jets, pts, atol=1e-10)

    def test_batch_matches_scalar(self, rng):
        sys = AlphaSystem("p + q^2")
        targets = rng.uniform(-1, 1, (50, 5))
        jets, ok = phi_inverse_batch(sys, "generic", targets)
        assert ok.all()
        for t, j in zip(targets, jets):
            np.testing.assert_allclose(j, phi_inverse(sys, "generic", t).as_array(), atol=1e-12)

    def test_singular_chart_raises(self):
        # alpha = -y/x is non-generic, so the generic chart has a singular Jacobian
        with pytest.raises(ChartExitError):
            phi_inverse(AlphaSystem("-y/x"), "generic", (1, 0.5, 0.2, 0.1, 0.3))

    def test_batch_failures_are_nan(self):
        jets, ok = phi_inverse_batch(AlphaSystem("-y/x"), "generic", np.array([[1, 0.5, 0.2, 0.1, 0.3]]))
        assert not ok[0] and np.isnan(jets[0]).all()


class TestBarFunctions:
    def test_alpha_q(self, rng):
        sys = AlphaSystem("q")
        for t in rng.uniform(-2, 2, (10, 5)):
            assert bar_eval(sys, "generic", sys.alpha, t) == pytest.approx(t[4], abs=1e-14)

    def test_alpha_beaks(self, rng):
        sys = AlphaSystem("p + q^2")
        for t in rng.uniform(-2, 2, (10, 5)):
            assert bar_eval(sys, "generic", sys.alpha, t) == pytest.approx(t[3] + t[4] ** 2, abs=1e-12)

    def test_beta_nongeneric(self, rng):
        sys = AlphaSystem("(q - y)/x")
        for _ in range(100):
            t = rng.uniform(-2, 2, 5)
            t[0] = rng.uniform(1, 2)
            assert bar_eval(sys, "nongeneric", sys.beta, t) == pytest.approx(t[4], abs=1e-12)

    def test_base_function_checks(self):
        assert base_function_check(AlphaSystem("p + q^2"), "generic", "p + q^2")
        sys = AlphaSystem("(q - y)/x")
        assert base_function_check(sys, "nongeneric", sys.beta)
        assert not base_function_check(AlphaSystem("q"), "generic", "x")


class TestGenerators:
    def test_labels(self):
        assert str(reduced_generators(AlphaSystem("q"), "generic", BOX)) == "{dx2 + x1*dx4, dx3 - bar(q)*dx4}"
        assert "dx3 - x1*dx4" in str(reduced_generators(AlphaSystem("(q - y)/x"), "nongeneric", BOX))

    def test_coefficients(self, rng):
        gens = reduced_generators(AlphaSystem("p + q^2"), "generic", BOX)
        t = np.array([1.2, 0.3, -0.4, 0.7, 1.1])
        np.testing.assert_allclose(gens.xi2.coefficients(AlphaSystem("p + q^2"), "generic", t),
                                   [0, 0, 0, 1, -(0.7 + 1.21)], atol=1e-12)
        ng = AlphaSystem("(q - y)/x")
        gens = reduced_generators(ng, "nongeneric", BOX)
        np.testing.assert_allclose(gens.xi1.coefficients(ng, "nongeneric", t), [0, 0, 1, 0, 1.1], atol=1e-12)

    def test_mode_mismatch(self):
        with pytest.raises(ValueError):
            reduced_generators(AlphaSystem("q"), "nongeneric", BOX)

    @pytest.mark.parametrize("alpha,mode", CASES)
    def test_pullback_identities(self, alpha, mode, rng):
        sys = AlphaSystem(alpha)
        gens = reduced_generators(sys, mode, BOX)
        w0, psi = canonical_forms(sys)
        worst = 0.0
        for _ in range(100):
            pt = dict(zip(JET_VARS, rng.uniform(1, 2, 5)))
            v = rng.normal(size=5)
            want1 = w0(pt, v) - pt["x"] * psi(pt, v)
            worst = max(worst, abs(gens.xi1.pullback(sys, mode, pt) @ v - want1),
                        abs(gens.xi2.pullback(sys, mode, pt) @ v - psi(pt, v)))
        assert worst < 1e-8
