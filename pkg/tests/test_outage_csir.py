import math

import numpy as np
import pytest
from scipy import special

from fso_outage.outage_csir import (CSIR, ExponentReport, InsufficientPointsError, OutageCurve, empirical_exponent,
                                    fmt, instantaneous_mi, local_slopes, outage_b1, outage_curve, outage_mc,
                                    snr_exponent, snr_exponent_lognormal_approx, snr_r)
from fso_outage.scintillation import ChannelConfig, ScintillationModel

EXP = ScintillationModel.exponential()
LN = ScintillationModel.lognormal(1.0)
GG = ScintillationModel.gamma_gamma(2.0, 3.0)


def cfg(model, MN=1, B=1, Q=2, Rc=0.5):
    return ChannelConfig(model, M=MN, N=1, B=B, Q=Q, Rc=Rc)


def exp_closed(MN, snr_db, sr):
    """Independent oracle: H is Gamma(MN, 1/sqrt(MN(MN+1))), so P(H < nu) is a regularised incomplete gamma."""
    nu = np.sqrt(sr / 10 ** (np.asarray(snr_db) / 10))
    return special.gammainc(MN, nu * math.sqrt(MN * (MN + 1)))


class TestInstantaneousMI:
    def test_single_block_at_snr_r(self, table2):
        sr = snr_r(cfg(EXP), table2)
        assert instantaneous_mi([sr], [1.0], 2, table2) == pytest.approx(0.5, abs=1e-6)
        assert 10 * math.log10(sr) == pytest.approx(10 * math.log10(2.0796), abs=0.05)

    def test_faded_block_contributes_nothing(self, table2):
        assert instantaneous_mi([1.0, 1.0], [0.0, 0.0], 2, table2) == 0.0
        assert instantaneous_mi([1e6, 1e6], [0.0, 1.0], 2, table2) == pytest.approx(0.5, abs=1e-9)

    def test_batch_shape(self, table2):
        h = np.ones((5, 3))
        out = instantaneous_mi(np.full(3, 2.0), h, 2, table2)
        assert out.shape == (5,)
        assert np.allclose(out, table2.mi(2.0))

    def test_errors(self, table2):
        with pytest.raises(ValueError):
            instantaneous_mi([1.0, 1.0], [1.0], 2, table2)
        with pytest.raises(ValueError):
            instantaneous_mi([-1.0], [1.0], 2, table2)
        with pytest.raises(ValueError):
            instantaneous_mi([1.0], [1.0], 4, table2)


class TestSingleBlock:
    def test_exponential_example(self, table2):
        assert outage_b1(cfg(EXP), 106.2, table2) == pytest.approx(1e-5, rel=0.05)

    def test_lognormal_example(self, table2):
        assert outage_b1(cfg(LN), 40.1, table2) == pytest.approx(1e-5, rel=0.05)

    @pytest.mark.parametrize("MN", [1, 2, 4])
    def test_exponential_matches_incomplete_gamma(self, table2, MN):
        c = cfg(EXP, MN)
        s = np.arange(0.0, 60.0, 5.0)
        assert np.allclose(outage_b1(c, s, table2), exp_closed(MN, s, snr_r(c, table2)), rtol=1e-12)

    @pytest.mark.parametrize("model", [EXP, LN, GG])
    def test_low_snr_limit(self, table2, model):
        assert outage_b1(cfg(model), -100.0, table2) == pytest.approx(1.0, abs=1e-6)

    @pytest.mark.parametrize("model", [EXP, LN, GG])
    def test_monotone_in_snr_and_mn(self, table2, model):
        s = np.arange(0.0, 60.0, 2.0)
        curves = [outage_b1(cfg(model, mn), s, table2) for mn in (1, 2, 3, 4)]
        for p in curves:
            assert np.all(np.diff(p) <= 1e-15)
            assert np.all((p >= 0) & (p <= 1))
        # diversity helps only in the tail; near the median a concentrated H can be worse
        for a, b in zip(curves, curves[1:]):
            tail = (a > 1e-12) & (a < 0.1)
            assert np.count_nonzero(tail) >= 5
            assert np.all(b[tail] <= a[tail] * (1 + 1e-9))

    def test_requires_one_block(self, table2):
        with pytest.raises(ValueError):
            outage_b1(cfg(EXP, B=2), 10.0, table2)


class TestMonteCarlo:
    @pytest.mark.parametrize("MN", [1, 2])
    def test_matches_closed_form(self, table2, MN):
        c = cfg(EXP, MN)
        s = np.array([10.0, 20.0, 30.0, 40.0])
        p, se = outage_mc(c, s, trials=2 * 10**5, seed=5, table=table2)
        exact = exp_closed(MN, s, snr_r(c, table2))
        sd = np.sqrt(exact * (1 - exact) / 2e5)
        assert np.all(np.abs(p - exact) <= 3 * sd + 1e-12)
        assert np.allclose(se, np.sqrt(p * (1 - p) / 2e5))

    def test_high_snr_vanishes(self, table2):
        p, _ = outage_mc(cfg(LN), 80.0, trials=10**4, seed=0, table=table2)
        assert p == 0.0

    def test_block_diversity_helps(self, table2):
        s = np.array([20.0, 25.0, 30.0])
        p1, _ = outage_mc(cfg(EXP, B=1), s, trials=10**5, seed=2, table=table2)
        p2, _ = outage_mc(cfg(EXP, B=2), s, trials=10**5, seed=2, table=table2)
        assert np.all(p2 < p1)

    def test_deterministic_and_validated(self, table2):
        a = outage_mc(cfg(GG, B=2), [10.0, 20.0], trials=5000, seed=9, table=table2)
        b = outage_mc(cfg(GG, B=2), [10.0, 20.0], trials=5000, seed=9, table=table2)
        assert np.array_equal(a[0], b[0])
        with pytest.raises(ValueError):
            outage_mc(cfg(EXP), 10.0, trials=999, table=table2)

    def test_common_random_numbers_give_monotone_counts(self, table2):
        p, _ = outage_mc(cfg(GG, MN=2, B=3), np.arange(0.0, 30.0, 1.0), trials=2 * 10**4, seed=1, table=table2)
        assert np.all(np.diff(p) <= 0)


class TestCurve:
    def test_validation(self):
        c = cfg(EXP)
        with pytest.raises(ValueError):
            OutageCurve(np.array([1.0, 0.0]), np.array([0.1, 0.2]), np.zeros(2), c)
        with pytest.raises(ValueError):
            OutageCurve(np.array([0.0, 1.0]), np.array([0.1]), np.zeros(2), c)
        with pytest.raises(ValueError):
            OutageCurve(np.array([0.0]), np.array([0.1]), np.zeros(1), c, csi_mode="bogus")
        with pytest.raises(ValueError):
            OutageCurve(np.array([0.0]), np.array([0.1]), np.zeros(1), c, method="bogus")

    def test_monotone_check_uses_standard_errors(self):
        c = cfg(EXP)
        s = np.array([0.0, 1.0, 2.0])
        assert OutageCurve(s, np.array([0.5, 0.51, 0.3]), np.array([0.01, 0.01, 0.01]), c, method="mc").is_monotone()
        assert not OutageCurve(s, np.array([0.5, 0.6, 0.3]), np.zeros(3), c).is_monotone()

    def test_csv(self, table2):
        curve = outage_curve(cfg(LN), [0.0, 10.0, 300.0], table=table2)
        text = curve.to_csv()
        lines = text.splitlines()
        head = [l for l in lines if l.startswith("#")]
        assert "# csi=csir" in head and "# method=closed" in head and "# B=1" in head
        body = [l for l in lines if not l.startswith("#")]
        assert body[0] == "snr_db,p_out,std_err,method"
        assert body[-1] == "300,0,0,closed"
        assert len(body) == 4

    def test_fmt(self):
        assert fmt(0.0) == "0"
        assert fmt(1 / 3) == "0.333333333333"

    def test_method_selection(self, table2):
        assert outage_curve(cfg(EXP, 3), [0.0], table=table2).method == "closed"
        assert outage_curve(cfg(GG, 1), [0.0], table=table2).method == "closed"
        assert outage_curve(cfg(LN, 2), [0.0], table=table2).method == "fft"
        c = outage_curve(cfg(EXP, B=2), [0.0, 5.0], trials=2000, table=table2)
        assert c.method == "mc" and c.csi_mode == CSIR
        with pytest.raises(ValueError):
            outage_curve(cfg(EXP, B=2), [0.0], method="closed", table=table2)


class TestExponents:
    def test_examples(self):
        assert snr_exponent(ChannelConfig(EXP, M=2, N=2, B=1, Q=2, Rc=0.5)).value == 2.0
        r = snr_exponent(ChannelConfig(GG, M=2, N=1, B=2, Q=4, Rc=0.5))
        assert r.value == 4.0 and r.singleton_factor == 2 and r.spatial_factor == 2 and r.channel_factor == 1.0
        r = snr_exponent(ChannelConfig(LN, M=1, N=1, B=1, Q=2, Rc=0.5))
        assert r.order_k == 2 and r.value == pytest.approx(0.18034, abs=1e-5)

    def test_symmetric_in_alpha_beta(self):
        a = snr_exponent(cfg(ScintillationModel.gamma_gamma(2.5, 4.0), 3, B=3, Rc=0.4))
        b = snr_exponent(cfg(ScintillationModel.gamma_gamma(4.0, 2.5), 3, B=3, Rc=0.4))
        assert a == b

    def test_singleton_staircase(self):
        B = 4
        vals = [snr_exponent(cfg(EXP, B=B, Rc=rc)).singleton_factor for rc in (0.25, 0.26, 0.5, 0.51, 0.75, 0.76, 1.0)]
        assert vals == [4, 3, 3, 2, 2, 1, 1]
        assert snr_exponent(cfg(EXP, B=2, Rc=0.5)).value > snr_exponent(cfg(EXP, B=2, Rc=0.5 + 1e-6)).value

    def test_report_invariant(self):
        with pytest.raises(ValueError):
            ExponentReport(1, 2.0, 1, 0.5, 1)

    def test_lognormal_approximation(self):
        c = cfg(ScintillationModel.lognormal(0.1), 4)
        exact = snr_exponent(c).value
        assert snr_exponent_lognormal_approx(c) == pytest.approx(exact, rel=0.05)
        c = cfg(LN, 2)
        assert snr_exponent(c).value == pytest.approx(0.3607, abs=1e-4)
        assert snr_exponent_lognormal_approx(c) == pytest.approx(0.3083, abs=1e-4)
        c = cfg(LN, 4)
        assert snr_exponent_lognormal_approx(c) == pytest.approx(0.5602, abs=1e-4)
        assert snr_exponent(c).value == pytest.approx(0.7213, abs=1e-4)
        with pytest.raises(ValueError):
            snr_exponent_lognormal_approx(cfg(EXP))


class TestEmpiricalExponent:
    @pytest.mark.parametrize("model,MN", [(EXP, 1), (EXP, 4), (GG, 1), (GG, 4)])
    def test_linear_tails(self, table2, model, MN):
        c = cfg(model, MN)
        curve = outage_curve(c, np.arange(60.0, 120.1, 2.0), table=table2)
        assert empirical_exponent(curve) == pytest.approx(snr_exponent(c).value, rel=0.05)

    def test_lognormal_quadratic(self, table2):
        c = cfg(LN)
        curve = outage_curve(c, np.arange(60.0, 120.1, 2.0), table=table2)
        assert empirical_exponent(curve, order_k=2) == pytest.approx(snr_exponent(c).value, rel=0.05)

    def test_accepts_pairs_and_ignores_zeros(self):
        s = np.arange(0.0, 100.0, 10.0)
        p = 10 ** (-0.7 * s / 10)
        p[-1] = 0.0
        assert empirical_exponent((s, p)) == pytest.approx(0.7, rel=1e-9)

    def test_too_few_points(self):
        s = np.array([0.0, 10.0, 20.0, 30.0])
        with pytest.raises(InsufficientPointsError):
            empirical_exponent((s, np.array([0.5, 0.1, 1e-4, 1e-5])))
        with pytest.raises(ValueError):
            empirical_exponent((s, s), order_k=3)

    def test_local_slopes(self, table2):
        s = np.arange(40.0, 200.1, 20.0)
        ln = local_slopes(outage_curve(cfg(LN), s, table=table2))
        assert np.all(np.diff(ln) > 0)
        ex = local_slopes(outage_curve(cfg(EXP, 2), s, table=table2))
        assert abs(ex[-1] - 1.0) < abs(ex[0] - 1.0) and ex[-1] == pytest.approx(1.0, rel=1e-3)
