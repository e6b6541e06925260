import cmath
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cmrs.errors import (
    DomainError,
    EvaluationError,
    ModelSpecError,
    SingularMatrixError,
)
from cmrs.mixing import gamma_mixing, point_mass_mixing
from cmrs.models import (
    CommonShockCPSpec,
    EdfFrailtySpec,
    KatzCompoundSpec,
    LognormalPortfolioSpec,
    MatrixExpSpec,
    MixedExpFrailtySpec,
    build_common_shock_cp,
    build_edf_frailty,
    build_katz_compound,
    build_lognormal_portfolio,
    build_matrix_exp,
    build_mixed_exp_frailty,
    complex_solve,
    erlang_me_spec,
    exponential_me_spec,
    exponential_severity,
    is_phase_type,
    lognormal_lst,
    lognormal_lst_deriv,
)
from cmrs.transforms import diagonal_diagnostic, eval_aggregate


class TestComplexSolve:
    def test_recovers_known_solution(self):
        A = np.array([[2.0, 1.0], [1.0, 3.0 + 1.0j]], dtype=complex)
        x_true = np.array([1.5, -0.5j])
        x = complex_solve(A, A @ x_true)
        assert np.abs(x - x_true).max() < 1e-13

    def test_singular_matrix_rejected(self):
        with pytest.raises(SingularMatrixError, match="pivot"):
            complex_solve(np.array([[1.0, 2.0], [2.0, 4.0]]), np.array([1.0, 1.0]))

    def test_zero_matrix_rejected(self):
        with pytest.raises(SingularMatrixError):
            complex_solve(np.zeros((2, 2)), np.ones(2))

    def test_shape_mismatch(self):
        with pytest.raises(ModelSpecError, match="shape"):
            complex_solve(np.eye(3), np.ones(2))


class TestMixedExpFrailty:
    def test_aggregate_frozen_value(self):
        # independent quadrature of the Gamma(2) mixture gives 0.4619670665254553
        model = build_mixed_exp_frailty(MixedExpFrailtySpec((1.0, 0.5), gamma_mixing(2.0)))
        assert eval_aggregate(model, 1.0) == pytest.approx(0.4619670665254551, abs=1e-12)

    def test_batch_matches_scalar_exactly(self):
        model = build_mixed_exp_frailty(MixedExpFrailtySpec((1.0, 0.5, 2.0), gamma_mixing(1.3)))
        for z in (0.4, 1.0, 2.0 + 3.0j):
            batch = model.batch_allocation_transform(z)
            for i in range(3):
                assert model.allocation_transform(i, z) == complex(batch[i])

    def test_degenerate_mixing_reduces_to_independent_exponentials(self):
        # point mass at theta0 means risk j is Exp(theta0 / lambda_j)
        model = build_mixed_exp_frailty(MixedExpFrailtySpec((2.0, 0.5), point_mass_mixing(3.0)))
        r = (3.0 / 2.0, 3.0 / 0.5)
        for z in (0.3, 1.7, 4.0):
            want = r[0] / (r[0] + z) * r[1] / (r[1] + z)
            assert model.aggregate_transform(z) == pytest.approx(want, rel=1e-14)
            batch = model.batch_allocation_transform(z)
            assert complex(batch[0]) == pytest.approx(want / (r[0] + z), rel=1e-13)
            assert complex(batch[1]) == pytest.approx(want / (r[1] + z), rel=1e-13)

    def test_diagonal_identity_holds(self):
        model = build_mixed_exp_frailty(MixedExpFrailtySpec((1.0, 2.0), gamma_mixing(2.5)))
        report = diagonal_diagnostic(model, [0.1, 0.5, 1.0, 5.0, 20.0])
        assert report.all_passed

    def test_nonpositive_lambda_rejected(self):
        with pytest.raises(ModelSpecError):
            MixedExpFrailtySpec((1.0, 0.0), gamma_mixing(2.0))
        with pytest.raises(ModelSpecError):
            MixedExpFrailtySpec((), gamma_mixing(2.0))


def _exponential_edf_spec(lams, mixing, t_max=50.0):
    # exponential family in canonical form: kappa(eta) = -log(-eta),
    # canonical parameter eta_j = -theta / lambda_j, unit dispersion
    n = len(lams)
    return EdfFrailtySpec(
        cumulants=tuple((lambda e: -np.log(-e),) * n),
        cumulant_derivs=tuple((lambda e: -1.0 / e,) * n),
        canonical_maps=tuple((lambda t, l=l: -t / l) for l in lams),
        dispersions=(1.0,) * n,
        mixing=mixing,
        t_max=t_max,
    )


class TestEdfFrailty:
    def test_exponential_family_reduces_to_mixed_exp(self):
        mix = gamma_mixing(2.0)
        lams = (1.0, 0.5)
        edf = build_edf_frailty(_exponential_edf_spec(lams, mix))
        ref = build_mixed_exp_frailty(MixedExpFrailtySpec(lams, mix))
        for z in (0.3, 1.0, 2.0 + 1.5j, 5.0):
            assert abs(edf.aggregate_transform(z) - ref.aggregate_transform(z)) < 1e-14
            gap = np.abs(
                edf.batch_allocation_transform(z) - ref.batch_allocation_transform(z)
            ).max()
            assert gap < 1e-14

    def test_declared_domain_enforced(self):
        edf = build_edf_frailty(_exponential_edf_spec((1.0,), gamma_mixing(2.0), t_max=10.0))
        edf.aggregate_transform(9.5)
        with pytest.raises(DomainError, match="t_max"):
            edf.aggregate_transform(10.5)
        with pytest.raises(DomainError):
            edf.batch_allocation_transform(11.0 + 3.0j)

    def test_field_lengths_must_align(self):
        with pytest.raises(ModelSpecError, match="align"):
            EdfFrailtySpec(
                cumulants=(lambda e: e,),
                cumulant_derivs=(lambda e: 1.0, lambda e: 1.0),
                canonical_maps=(lambda t: t,),
                dispersions=(1.0,),
                mixing=gamma_mixing(2.0),
                t_max=1.0,
            )

    def test_t_max_must_be_positive(self):
        with pytest.raises(ModelSpecError, match="t_max"):
            _exponential_edf_spec((1.0,), gamma_mixing(2.0), t_max=0.0)


class TestMatrixExp:
    def test_erlang_plus_exponential_aggregate(self):
        # Erlang(2, 3) + Exp(3): L_S(1) = (3/4)^2 * (3/4) = 27/64
        model = build_matrix_exp([erlang_me_spec(2, 3.0), exponential_me_spec(3.0)])
        assert eval_aggregate(model, 1.0) == pytest.approx(27.0 / 64.0, rel=1e-14)

    def test_erlang_plus_exponential_allocations(self):
        model = build_matrix_exp([erlang_me_spec(2, 3.0), exponential_me_spec(3.0)])
        batch = model.batch_allocation_transform(1.0)
        # E[X1 e^{-S}] = 2 * 3^2 / 4^3 * 3/4, E[X2 e^{-S}] = (3/4)^2 * 3 / 4^2
        assert complex(batch[0]) == pytest.approx(0.2109375, rel=1e-14)
        assert complex(batch[1]) == pytest.approx(0.10546875, rel=1e-14)

    def test_erlang_one_stage_equals_exponential(self):
        e1 = erlang_me_spec(1, 2.5)
        ex = exponential_me_spec(2.5)
        for z in (0.5, 1.0 + 2.0j, 7.0):
            assert abs(e1.lst(z) - ex.lst(z)) < 1e-15
            assert abs(e1.mean_lst(z) - ex.mean_lst(z)) < 1e-15

    def test_phase_type_recognized(self):
        assert is_phase_type(erlang_me_spec(3, 2.0))
        assert is_phase_type(exponential_me_spec(1.0))

    def test_negative_off_diagonal_is_not_phase_type(self):
        spec = MatrixExpSpec(
            np.array([1.0, 0.0]),
            np.array([[-2.0, -0.5], [3.0, -2.0]]),
            np.array([2.5, -1.0]),
        )
        assert not is_phase_type(spec)

    def test_deficient_entry_vector_is_not_phase_type(self):
        spec = MatrixExpSpec(
            np.array([0.5, 0.0]),
            np.array([[-2.0, 1.0], [0.0, -2.0]]),
            np.array([1.0, 2.0]),
        )
        assert not is_phase_type(spec)

    def test_miswired_exit_vector_caught_by_probe(self):
        # doubling u doubles the transform; the unit-mass probe must refuse it
        bad = MatrixExpSpec(np.array([1.0]), np.array([[-2.0]]), np.array([4.0]))
        with pytest.raises(ModelSpecError, match="not in"):
            build_matrix_exp([bad])

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ModelSpecError, match="dimension"):
            MatrixExpSpec(np.array([1.0, 0.0]), np.array([[-1.0]]), np.array([1.0]))

    def test_bad_p0_rejected(self):
        with pytest.raises(ModelSpecError, match="p0"):
            MatrixExpSpec(np.array([1.0]), np.array([[-1.0]]), np.array([1.0]), p0=1.0)

    def test_zero_mass_forms_origin_atom(self):
        # S sits at 0 only when every component does, so the atom mass is the
        # product of the per-risk zero masses
        a = MatrixExpSpec(np.array([0.75]), np.array([[-1.0]]), np.array([1.0]), p0=0.25)
        b = MatrixExpSpec(np.array([0.5]), np.array([[-2.0]]), np.array([2.0]), p0=0.5)
        model = build_matrix_exp([a, b])
        assert model.atoms.locations == (0.0,)
        assert model.atoms.masses[0] == pytest.approx(0.125, rel=1e-15)
        continuous = build_matrix_exp([a, exponential_me_spec(1.0)])
        assert len(continuous.atoms) == 0

    def test_erlang_stage_count_validated(self):
        with pytest.raises(ModelSpecError):
            erlang_me_spec(0, 1.0)
        with pytest.raises(ModelSpecError):
            exponential_me_spec(-1.0)


class TestKatzCompound:
    def test_kind_classification(self):
        spec = KatzCompoundSpec(
            a=(0.0, 0.0, -1.0, 0.25),
            b=(0.0, 2.0, 3.0, 0.5),
            severities=(exponential_severity(1.0),) * 4,
        )
        assert spec.kinds == ("degenerate", "poisson", "binomial", "negbin")

    def test_invalid_frequency_pairs_rejected(self):
        sev = (exponential_severity(1.0),)
        with pytest.raises(ModelSpecError):
            KatzCompoundSpec(a=(0.0,), b=(-1.0,), severities=sev)
        with pytest.raises(ModelSpecError, match="positive integer"):
            KatzCompoundSpec(a=(-0.4,), b=(1.0,), severities=sev)
        with pytest.raises(ModelSpecError):
            KatzCompoundSpec(a=(0.5,), b=(-0.5,), severities=sev)
        with pytest.raises(ModelSpecError, match="a must be < 1"):
            KatzCompoundSpec(a=(1.5,), b=(0.0,), severities=sev)

    def test_count_mean(self):
        spec = KatzCompoundSpec(
            a=(0.0, 0.25), b=(1.5, 0.5), severities=(exponential_severity(1.0),) * 2
        )
        assert spec.count_mean(0) == pytest.approx(1.5)
        assert spec.count_mean(1) == pytest.approx(1.0)

    def test_aggregate_frozen_value(self):
        # Poisson(1.5)/Exp(2) + NegBin(a=0.25, b=0.5)/Exp(1):
        # exp(1.5 (2/3 - 1)) * (0.75 / (1 - 0.25 * 0.5))^3 at z = 1
        model = build_katz_compound(
            KatzCompoundSpec(
                a=(0.0, 0.25),
                b=(1.5, 0.5),
                severities=(exponential_severity(2.0), exponential_severity(1.0)),
            )
        )
        assert eval_aggregate(model, 1.0) == pytest.approx(0.3819551676324455, rel=1e-14)

    def test_atom_mass_is_probability_of_no_claims(self):
        model = build_katz_compound(
            KatzCompoundSpec(
                a=(0.0, 0.25),
                b=(1.5, 0.5),
                severities=(exponential_severity(2.0), exponential_severity(1.0)),
            )
        )
        want = math.exp(-1.5) * (0.75 / (1.0 - 0.0)) ** 3
        assert model.atoms.locations == (0.0,)
        assert model.atoms.masses[0] == pytest.approx(want, rel=1e-14)

    def test_means_from_count_and_severity(self):
        model = build_katz_compound(
            KatzCompoundSpec(
                a=(0.0, 0.25),
                b=(1.5, 0.5),
                severities=(exponential_severity(2.0), exponential_severity(1.0)),
            )
        )
        assert model.means == pytest.approx((0.75, 1.0))

    def test_degenerate_component_contributes_nothing(self):
        model = build_katz_compound(
            KatzCompoundSpec(
                a=(0.0, 0.0),
                b=(2.0, 0.0),
                severities=(exponential_severity(1.0),) * 2,
            )
        )
        batch = model.batch_allocation_transform(1.0)
        assert batch[1] == 0.0
        only = build_katz_compound(
            KatzCompoundSpec(a=(0.0,), b=(2.0,), severities=(exponential_severity(1.0),))
        )
        assert model.aggregate_transform(1.3) == pytest.approx(
            only.aggregate_transform(1.3), rel=1e-15
        )

    def test_pgf_pole_guarded(self):
        from cmrs.models import _katz_pgf

        with pytest.raises(EvaluationError, match="too close to 1"):
            _katz_pgf("negbin", 0.5, 0.5, 2.0)

    def test_severity_rate_validated(self):
        with pytest.raises(ModelSpecError):
            exponential_severity(0.0)
        with pytest.raises(ModelSpecError):
            exponential_severity(math.inf)


CS_531 = dict(
    lambda0=1.5,
    lambdas=(0.8, 1.1, 0.6),
    beta0=0.9,
    betas=(1.4, 0.7, 1.9),
    weights=(0.2, 0.3, 0.5),
)


class TestCommonShockCP:
    def test_aggregate_frozen_value(self):
        model = build_common_shock_cp(CommonShockCPSpec(**CS_531))
        assert eval_aggregate(model, 1.0) == pytest.approx(0.1385169756774438, rel=1e-14)

    def test_atom_mass_equals_total_rate_exponential(self):
        model = build_common_shock_cp(CommonShockCPSpec(**CS_531))
        assert model.atoms.locations == (0.0,)
        assert abs(model.atoms.masses[0] - math.exp(-4.0)) < 1e-15

    def test_batch_matches_scalar_exactly(self):
        model = build_common_shock_cp(CommonShockCPSpec(**CS_531))
        for z in (0.2, 1.0, 3.0 + 2.0j):
            batch = model.batch_allocation_transform(z)
            for i in range(3):
                assert model.allocation_transform(i, z) == complex(batch[i])

    def test_means(self):
        model = build_common_shock_cp(CommonShockCPSpec(**CS_531))
        want = tuple(
            1.5 * p / 0.9 + lam / bet
            for p, lam, bet in zip((0.2, 0.3, 0.5), (0.8, 1.1, 0.6), (1.4, 0.7, 1.9))
        )
        assert model.means == pytest.approx(want, rel=1e-14)

    def test_stripped_remainder_vanishes_in_deep_tail(self):
        # with all atomic mass removed the transform must decay; at the
        # reference parameter scale the t = 1e4 remainder sits near 8e-6
        model = build_common_shock_cp(CommonShockCPSpec(**CS_531))
        rem = eval_aggregate(model, 1.0e4) - model.atoms.aggregate_term(1.0e4).real
        assert abs(rem) < 1e-5

    def test_small_severity_scale_tightens_tail_remainder(self):
        spec = CommonShockCPSpec(
            lambda0=1.5,
            lambdas=(0.8, 1.1, 0.6),
            beta0=0.1,
            betas=(0.15, 0.05, 0.2),
            weights=(0.2, 0.3, 0.5),
        )
        model = build_common_shock_cp(spec)
        rem = eval_aggregate(model, 1.0e4) - model.atoms.aggregate_term(1.0e4).real
        assert abs(rem) < 1e-6

    def test_split_weights_must_sum_to_one(self):
        bad = dict(CS_531)
        bad["weights"] = (0.2, 0.3, 0.4)
        with pytest.raises(ModelSpecError, match="sum to 1"):
            CommonShockCPSpec(**bad)

    def test_negative_rates_rejected(self):
        bad = dict(CS_531)
        bad["lambdas"] = (0.8, -1.1, 0.6)
        with pytest.raises(ModelSpecError):
            CommonShockCPSpec(**bad)
        bad = dict(CS_531)
        bad["betas"] = (1.4, 0.0, 1.9)
        with pytest.raises(ModelSpecError):
            CommonShockCPSpec(**bad)

    def test_all_zero_claim_rates_rejected(self):
        with pytest.raises(ModelSpecError):
            CommonShockCPSpec(
                lambda0=0.0, lambdas=(0.0,), beta0=1.0, betas=(1.0,), weights=(1.0,)
            )


class TestLognormalTransform:
    def test_matches_adaptive_quadrature_on_real_axis(self):
        from scipy import integrate

        def integrand(x):
            return (
                math.exp(-0.5 * x * x)
                / math.sqrt(2.0 * math.pi)
                * math.exp(-1.3 * math.exp(0.5 * x))
            )

        want, _ = integrate.quad(integrand, -12.0, 12.0)
        assert lognormal_lst(0.0, 0.5, 1.3) == pytest.approx(want, rel=1e-12)

    def test_order_invariance_at_oscillatory_node(self):
        # far up the contour the kernel oscillates hard; doubling the rule
        # must leave the value unchanged well below inversion error
        z = 0.2 + 85.0j
        v64 = lognormal_lst(0.0, 0.5, z, 64)
        v128 = lognormal_lst(0.0, 0.5, z, 128)
        assert abs(v64 - v128) < 1e-12
        d64 = lognormal_lst_deriv(0.0, 0.5, z, 64)
        d128 = lognormal_lst_deriv(0.0, 0.5, z, 128)
        assert abs(d64 - d128) < 1e-12

    def test_oscillatory_node_frozen_value(self):
        v = lognormal_lst(0.0, 0.5, 0.2 + 85.0j, 64)
        assert v.real == pytest.approx(3.5697411354655694e-09, rel=1e-9)
        assert v.imag == pytest.approx(-8.661815158881136e-08, rel=1e-9)

    def test_near_degenerate_sigma_collapses_to_point_mass(self):
        # sigma -> 0 gives L(z) -> exp(-z e^mu); the complex case exercises
        # the direct-rule fallback branch
        assert lognormal_lst(0.3, 1e-8, 2.0) == pytest.approx(
            math.exp(-2.0 * math.exp(0.3)), rel=1e-10
        )
        z = 1.0 + 40.0j
        want = cmath.exp(-z * math.exp(0.3))
        assert abs(lognormal_lst(0.3, 1e-8, z) - want) < 1e-10

    def test_deriv_is_negated_mean_transform(self):
        from scipy import integrate

        def integrand(x):
            y = math.exp(0.2 + 0.6 * x)
            return math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi) * y * math.exp(-0.8 * y)

        want, _ = integrate.quad(integrand, -12.0, 12.0)
        assert lognormal_lst_deriv(0.2, 0.6, 0.8) == pytest.approx(-want, rel=1e-11)

    def test_left_half_plane_refused(self):
        with pytest.raises(DomainError, match="Re z >= 0"):
            lognormal_lst(0.0, 0.5, -0.1)
        with pytest.raises(DomainError):
            lognormal_lst(0.0, 0.5, 0.0 + 1.0j)

    def test_spec_validation(self):
        with pytest.raises(ModelSpecError, match="even"):
            LognormalPortfolioSpec((0.0,), (0.5,), gh_order=63)
        with pytest.raises(ModelSpecError, match="even"):
            LognormalPortfolioSpec((0.0,), (0.5,), gh_order=0)
        with pytest.raises(ModelSpecError):
            LognormalPortfolioSpec((0.0,), (-0.5,))
        with pytest.raises(ModelSpecError):
            LognormalPortfolioSpec((0.0, 1.0), (0.5,))

    def test_heavy_tail_sigma_warns(self):
        with pytest.warns(UserWarning, match="sigma"):
            LognormalPortfolioSpec((0.0,), (3.5,))

    def test_from_moments_round_trip(self):
        spec = LognormalPortfolioSpec.from_moments((2.0, 5.0), (1.0, 4.0))
        model = build_lognormal_portfolio(spec)
        assert model.means == pytest.approx((2.0, 5.0), rel=1e-14)
        sig2 = tuple(s * s for s in spec.sigma)
        var = tuple(
            (math.exp(s2) - 1.0) * math.exp(2.0 * m + s2) for m, s2 in zip(spec.mu, sig2)
        )
        assert var == pytest.approx((1.0, 4.0), rel=1e-13)

    def test_portfolio_aggregate_frozen_value(self):
        model = build_lognormal_portfolio(LognormalPortfolioSpec((0.0, 0.3), (0.4, 0.25)))
        assert eval_aggregate(model, 1.0) == pytest.approx(0.0970280019329332, rel=1e-12)

    def test_underflow_suppression_is_counted(self):
        model = build_lognormal_portfolio(LognormalPortfolioSpec((0.0,), (0.5,), gh_order=256))
        eval_aggregate(model, 30.0)
        assert model.stats.get("suppressed_terms", 0) > 0


class TestCrossFamilyReductions:
    @given(
        lam0=st.floats(0.3, 2.0),
        bet=st.floats(0.5, 2.5),
        z_im=st.floats(-20.0, 20.0),
    )
    def test_poisson_katz_equals_shockless_common_shock(self, lam0, bet, z_im):
        # a Poisson/Exp compound written either way must give one transform
        katz = build_katz_compound(
            KatzCompoundSpec(a=(0.0,), b=(lam0,), severities=(exponential_severity(bet),))
        )
        cscp = build_common_shock_cp(
            CommonShockCPSpec(
                lambda0=0.0, lambdas=(lam0,), beta0=1.0, betas=(bet,), weights=(1.0,)
            )
        )
        z = 0.7 + 1j * z_im
        assert abs(katz.aggregate_transform(z) - cscp.aggregate_transform(z)) < 1e-10
        gap = np.abs(
            katz.batch_allocation_transform(z) - cscp.batch_allocation_transform(z)
        ).max()
        assert gap < 1e-10

    @given(k=st.integers(1, 6), rate=st.floats(0.3, 4.0), t=st.floats(0.05, 8.0))
    def test_erlang_chain_equals_exponential_convolution(self, k, rate, t):
        chain = erlang_me_spec(k, rate)
        single = exponential_me_spec(rate)
        want = single.lst(t) ** k
        assert abs(chain.lst(t) - want) < 1e-12

    @given(alpha=st.floats(0.6, 5.0), t=st.floats(0.1, 10.0))
    def test_frailty_aggregate_equals_mixing_functional(self, alpha, t):
        # with a single unit-scale risk, L_S(t) is the mixing law's transform
        # of log(1 + t / theta) ... evaluated by the same quadrature; compare
        # against a direct nodewise sum
        mix = gamma_mixing(alpha)
        model = build_mixed_exp_frailty(MixedExpFrailtySpec((1.0,), mix))
        direct = float(np.dot(mix.weights, mix.nodes / (mix.nodes + t)))
        assert eval_aggregate(model, t) == pytest.approx(direct, rel=1e-12)
