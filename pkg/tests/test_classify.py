import numpy as np
import pytest

from gmae import symexpr as sx
from gmae.classify import (GENERIC, MIXED, NO, NONGENERIC, POINTWISE, TYPE_23, TYPE_234, YES, PreconditionError,
                           cauchy_conditions, cauchy_dim_general, cauchy_dim_intrinsic, classify,
                           derived_type_generic, derived_type_nongeneric, genericity_test, involutive_test)
from gmae.model import AlphaSystem, GeneralGmas, JetPoint
from gmae.symexpr import JET_VARS, evaluate, parse

BOX = {v: (1.0, 2.0) for v in JET_VARS}
INVOLUTIVE = ["(z - p*x - q*y)*p", "(p*q - y)/x", "-z/(q*x) + 1/x + p/q"]


def points(n, seed=0, box=BOX):
    rng = np.random.default_rng(seed)
    return [sx.sample_point(box, rng) for _ in range(n)]


def exact_one_dim_system(F: str, lam: str) -> GeneralGmas:
    """Psi = lam dF modulo w0, which has a one-dimensional Cauchy system."""
    F, lam = parse(F), parse(lam)
    p, q = sx.var("p"), sx.var("q")
    return GeneralGmas(lam * sx.diff(F, "p"), lam * sx.diff(F, "q"),
                       lam * (sx.diff(F, "x") + p * sx.diff(F, "z")),
                       lam * (sx.diff(F, "y") + q * sx.diff(F, "z")))


class TestCauchyGeneral:
    def test_alpha_q_case_A_everywhere(self):
        g = GeneralGmas.from_alpha(parse("q"))
        for pt in points(100):
            assert cauchy_dim_general(g, "A", pt) == 1
            # direct evaluation of both case-A conditions
            c1, c2 = cauchy_conditions(g, "A")
            assert evaluate(c1, pt) == pytest.approx(0, abs=1e-12)
            assert evaluate(c2, pt) == pytest.approx(0, abs=1e-12)

    def test_alpha_x_trivial(self):
        g = GeneralGmas.from_alpha(parse("x"))
        sys = AlphaSystem("x")
        for pt in points(50):
            assert cauchy_dim_general(g, "A", pt) == 0
            assert evaluate(sys.E_inv, pt) == 1.0

    def test_pure_dp(self):
        g = GeneralGmas(1, 0, 0, 0)
        for pt in points(20):
            assert cauchy_dim_general(g, "A", pt) == 1

    def test_vanishing_coefficient_is_precondition(self):
        with pytest.raises(PreconditionError):
            cauchy_dim_general(GeneralGmas(1, 0), "B", JetPoint(1, 1, 1, 1, 1))

    @pytest.mark.parametrize("case", ["A", "B", "C", "D"])
    def test_agrees_with_intrinsic_oracle(self, case):
        systems = [
            exact_one_dim_system("p*x + q^2 + z*y", "1 + x*y"),
            exact_one_dim_system("sin(p) + q*z - x^2*y", "2 + cos(q)"),
            GeneralGmas(parse("1 + x^2"), parse("q - 3"), parse("sin(y) + 2"), parse("p*z - 7")),
            GeneralGmas(parse("p + y"), parse("x*q + 1"), parse("z + 2"), parse("q^2 + x")),
        ]
        expected_dims = [1, 1, None, None]
        for g, want in zip(systems, expected_dims):
            for pt in points(60, seed=3):
                oracle = cauchy_dim_intrinsic(g, pt)
                if want is not None:
                    assert oracle == want
                assert cauchy_dim_general(g, case, pt) == oracle


class TestInvolutive:
    @pytest.mark.parametrize("alpha", INVOLUTIVE)
    def test_families(self, alpha):
        sys = AlphaSystem(alpha)
        assert involutive_test(sys, BOX) == YES
        values = [abs(evaluate(sys.E_inv, pt)) for pt in points(200)]
        assert max(values) < 1e-9

    def test_alpha_x(self):
        assert involutive_test(AlphaSystem("x"), BOX) == NO

    def test_pointwise_only(self):
        # E_inv = 1 - y vanishes on y = 1 only
        sys = AlphaSystem("x - x*y")
        pin = [{"x": 1.5, "y": 1.0, "z": 0.3, "p": 0.2, "q": 0.7}]
        assert evaluate(sys.E_inv, pin[0]) == 0
        assert involutive_test(sys, BOX, pinned=pin) == POINTWISE
        assert involutive_test(sys, BOX, pinned=[{"x": 1.5, "y": 2.0, "z": 0, "p": 0, "q": 0}]) == NO


class TestGenericity:
    def test_alpha_q(self):
        sys = AlphaSystem("q")
        res = genericity_test(sys, BOX)
        assert res == GENERIC
        assert res.min_abs_G == 1.0

    def test_nongeneric(self):
        assert genericity_test(AlphaSystem("(q - y)/x"), BOX) == NONGENERIC

    def test_mixed(self):
        res = genericity_test(AlphaSystem("y"), {**BOX, "x": (-2.0, 0.0)})
        assert res == MIXED
        assert "positive" in res.witnesses and "negative" in res.witnesses

    def test_shrinking_box_keeps_generic_verdict(self):
        sys = AlphaSystem("p + q^2")
        for r in (0.5, 0.1, 0.01):
            box = {v: (1.5 - r, 1.5 + r) for v in JET_VARS}
            assert genericity_test(sys, box) == GENERIC


class TestDerivedType:
    def test_f_without_u(self):
        res = derived_type_generic(AlphaSystem("p + q^2"), BOX)
        assert res == TYPE_23
        assert max(res.discriminants.values()) < 1e-10

    def test_f_equal_u(self):
        res = derived_type_generic(AlphaSystem("z - p*x - q*y"), BOX)
        assert res == TYPE_234
        assert np.all(np.abs(res.values["D1"] + 1) < 1e-12)

    def test_alpha_q_discriminants(self):
        sys = AlphaSystem("q")
        for pt in points(100):
            assert evaluate(sys.D1, pt) == 0 and evaluate(sys.D2, pt) == 0
        assert derived_type_generic(sys, BOX) == TYPE_23

    @pytest.mark.parametrize("alpha,want", [("(q^2 - y)/x", TYPE_23), ("(p - y)/x", TYPE_234),
                                            ("-z/(q*x) + 1/x + p/q", TYPE_23)])
    def test_nongeneric_examples(self, alpha, want):
        assert derived_type_nongeneric(AlphaSystem(alpha), BOX) == want

    def test_wrong_branch_refused(self):
        with pytest.raises(PreconditionError):
            derived_type_nongeneric(AlphaSystem("q"), BOX)
        with pytest.raises(PreconditionError):
            derived_type_generic(AlphaSystem("x"), BOX)


class TestClassify:
    def test_report(self):
        rep = classify(AlphaSystem("p + q^2"), BOX)
        assert rep.involutive == YES and rep.genericity == GENERIC and rep.derived_type == TYPE_23
        assert set(rep.cauchy_dim_at.values()) == {1}

    def test_non_involutive_has_no_type(self):
        rep = classify(AlphaSystem("x"), BOX)
        assert rep.involutive == NO and rep.derived_type is None
