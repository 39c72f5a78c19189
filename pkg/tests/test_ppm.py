import math

import numpy as np
import pytest

from fso_outage.numerics import integrate
from fso_outage.ppm import (InfoTable, MonteCarloSpec, default_rho_grid, get_table, inv_mi, inv_mmse, mc_terms,
                            mi_awgn, mmse_ppm)

SMALL = MonteCarloSpec(10**5, 3)


def binary_oracle(rho):
    """Q=2 quantities by one-dimensional quadrature over W = Z2 - Z1 ~ N(0, 2)."""
    phi = lambda w: math.exp(-w * w / 4) / math.sqrt(4 * math.pi)

    def e(w):
        return math.exp(-rho + math.sqrt(rho) * w)

    lo, hi = -40.0, 40.0
    log_term = integrate(lambda w: phi(w) * math.log1p(e(w)), lo, hi, tol=1e-13)
    mm = integrate(lambda w: phi(w) * (1 - (1 + e(w) ** 2) / (1 + e(w)) ** 2), lo, hi, tol=1e-13)
    return 1 - log_term / math.log(2), mm


def db(x):
    return 10 * math.log10(x)


class TestEstimators:
    def test_spec_validation(self):
        with pytest.raises(ValueError):
            MonteCarloSpec(999)
        with pytest.raises(ValueError):
            mi_awgn(1.0, 3, SMALL)
        with pytest.raises(ValueError):
            mi_awgn(-1.0, 2, SMALL)

    @pytest.mark.parametrize("Q", [2, 4, 16])
    def test_zero_snr(self, Q):
        assert mi_awgn(0.0, Q, SMALL).value == 0.0
        assert mmse_ppm(0.0, Q, SMALL).value == pytest.approx((Q - 1) / Q, abs=1e-15)

    @pytest.mark.parametrize("rho", [0.05, 0.5, 2.0796, 6.0, 20.0])
    def test_binary_against_quadrature(self, rho):
        mi, mm = binary_oracle(rho)
        est_i = mi_awgn(rho, 2, SMALL)
        est_m = mmse_ppm(rho, 2, SMALL)
        assert abs(est_i.value - mi) <= 4 * est_i.std_err + 1e-12
        assert abs(est_m.value - mm) <= 4 * est_m.std_err + 1e-12

    def test_binary_anchor(self):
        assert mi_awgn(2.0796, 2).value == pytest.approx(0.5, abs=0.002)

    def test_sixteen_ary_anchor(self):
        assert mi_awgn(3.5800, 16).value == pytest.approx(2.0, abs=0.005)

    def test_high_snr_mmse(self):
        assert mmse_ppm(10**4, 2, SMALL).value <= 1e-4
        assert mi_awgn(10**4, 8, SMALL).value == pytest.approx(3.0, abs=1e-12)

    def test_array_input(self):
        est = mi_awgn(np.array([0.5, 1.0]), 4, SMALL)
        assert est.value.shape == (2,)
        assert est.value[0] == pytest.approx(mi_awgn(0.5, 4, SMALL).value, abs=1e-15)

    def test_deterministic(self):
        assert mi_awgn(1.3, 4, SMALL) == mi_awgn(1.3, 4, SMALL)
        assert mi_awgn(1.3, 4, SMALL).value != mi_awgn(1.3, 4, MonteCarloSpec(10**5, 4)).value

    def test_standard_error_scaling(self):
        lo = mi_awgn(1.0, 4, MonteCarloSpec(10**4, 1)).std_err
        hi = mi_awgn(1.0, 4, MonteCarloSpec(10**6, 1)).std_err
        assert lo / hi == pytest.approx(10.0, rel=0.2)

    @pytest.mark.parametrize("Q", [2, 4])
    def test_monotone_on_grid(self, Q):
        rho = np.logspace(-2, 2, 30)
        i = mi_awgn(rho, Q, SMALL)
        m = mmse_ppm(rho, Q, SMALL)
        assert np.all(np.diff(i.value) >= -2 * np.hypot(i.std_err[1:], i.std_err[:-1]))
        assert np.all(np.diff(m.value) <= 2 * np.hypot(m.std_err[1:], m.std_err[:-1]))

    @pytest.mark.parametrize("rho", [0.1, 1.0, 4.0])
    def test_i_mmse_factor_from_quadrature(self, rho):
        # y = sqrt(rho) x + z with real unit-variance noise: dI/drho (nats) = mmse / 2
        d = 1e-4
        di = (binary_oracle(rho + d)[0] - binary_oracle(rho - d)[0]) / (2 * d)
        assert math.log(2) * di == pytest.approx(0.5 * binary_oracle(rho)[1], rel=1e-7)

    @pytest.mark.parametrize("Q", [2, 4])
    def test_i_mmse_monte_carlo(self, Q):
        rho, d = 1.0, 1e-3
        lp, _ = mc_terms(rho + d, Q)
        lm, _ = mc_terms(rho - d, Q)
        _, m = mc_terms(rho, Q)
        # log(2) dI/drho = -d E[log term]/drho; paired per-sample differences keep the error honest
        x = -(lp - lm) / (2 * d) - 0.5 * m
        assert abs(x.mean()) <= 3 * x.std() / math.sqrt(x.size)


class TestInfoTable:
    def test_invariants(self, table2, table4):
        for t in (table2, table4):
            assert t.rho[0] == 0.0
            assert t.mi_bits[0] == 0.0
            assert t.mmse[0] == pytest.approx(t.cap, abs=1e-15)
            assert np.all(np.diff(t.mi_bits) >= 0)
            assert np.all(np.diff(t.mmse) <= 0)
            assert t.mi_bits.min() >= 0 and t.mi_bits.max() <= t.max_bits
            assert t.mmse.min() >= 0 and t.mmse.max() <= t.cap
            assert t.flagged == ()
            assert t.rho.size == 401

    def test_grid_validation(self):
        with pytest.raises(ValueError):
            InfoTable(2, np.array([0.1, 1.0]), np.zeros(2), np.zeros(2), np.zeros(2), np.zeros(2))
        with pytest.raises(ValueError):
            InfoTable(2, np.array([0.0, 1.0]), np.zeros(3), np.zeros(2), np.zeros(2), np.zeros(2))

    def test_interpolation_reproduces_nodes(self, table2):
        assert np.allclose(table2.mi(table2.rho), table2.mi_bits, atol=1e-14)
        assert np.allclose(table2.mmse_at(table2.rho), table2.mmse, atol=1e-14)
        assert table2.mi(1e9) == table2.mi_bits[-1]

    def test_interpolation_accuracy(self, table2):
        for rho in (0.0123, 0.77, 3.3, 15.0):
            mi, mm = binary_oracle(rho)
            assert table2.mi(rho) == pytest.approx(mi, abs=3e-3)
            assert table2.mmse_at(rho) == pytest.approx(mm, abs=3e-3)

    @pytest.mark.parametrize("Q,R,ref_db", [(2, 0.5, 3.1821), (4, 0.5, 0.2169)])
    def test_inverse_mi_anchors(self, Q, R, ref_db, table2, table4):
        t = table2 if Q == 2 else table4
        assert db(inv_mi(R, Q, t)) == pytest.approx(ref_db, abs=0.05)

    def test_inverse_mi_monotone_and_consistent(self, table4):
        rates = np.linspace(0.05, 1.95, 40)
        rho = [table4.inv_mi(r) for r in rates]
        assert np.all(np.diff(rho) > 0)
        assert np.allclose(table4.mi(np.array(rho)), rates, atol=1e-10)

    def test_inverse_mi_domain(self, table2):
        for R in (0.0, 1.0, -0.1, 1.5):
            with pytest.raises(ValueError):
                inv_mi(R, 2, table2)

    def test_inverse_mmse_boundary(self, table2, table4):
        assert inv_mmse(0.5, 2, table2) == 0.0
        assert inv_mmse(0.75, 4, table4) == 0.0
        for u in (0.0, -0.1, 0.51):
            with pytest.raises(ValueError):
                inv_mmse(u, 2, table2)

    def test_inverse_mmse_round_trip(self, table2):
        u = mmse_ppm(5.0, 2, MonteCarloSpec(10**6, 11)).value
        assert inv_mmse(u, 2, table2) == pytest.approx(5.0, rel=0.01)

    def test_inverse_mmse_at_rate_anchor(self, table2):
        u = mmse_ppm(2.0796, 2).value
        assert inv_mmse(u, 2, table2) == pytest.approx(2.0796, rel=0.01)

    def test_vectorised_inverse_mmse(self, table2):
        u = np.geomspace(1e-12, 0.4999, 200)
        fast = table2.inv_mmse_array(u)
        slow = np.array([table2.inv_mmse(v) for v in u])
        assert np.allclose(fast, slow, rtol=1e-4)
        assert table2.inv_mmse_array(np.array([0.5]))[0] == 0.0

    def test_csv_round_trip(self, table2, tmp_path):
        path = tmp_path / "t.csv"
        text = table2.to_csv(path)
        assert text.splitlines()[4] == "rho,mi_bits,mmse,std_err,mmse_std_err"
        back = InfoTable.from_csv(path)
        assert back.Q == 2 and back.samples == table2.samples and back.seed == table2.seed
        assert np.allclose(back.mi_bits, table2.mi_bits, rtol=1e-11, atol=0)
        assert back.to_csv() == text

    def test_build_is_deterministic(self):
        rho = default_rho_grid(20)
        a = InfoTable.build(4, SMALL, rho).to_csv()
        b = InfoTable.build(4, SMALL, rho).to_csv()
        assert a == b

    def test_cache(self, tmp_path):
        mc = MonteCarloSpec(2000, 5)
        t = get_table(2, mc, cache_dir=str(tmp_path))
        assert get_table(2, mc) is t
        assert (tmp_path / "ppm_Q2_n2000_s5.csv").exists()
