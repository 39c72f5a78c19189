"""Power control with channel state known at the transmitter.

Short-term constraint: mercury-waterfilling per fading realisation,

    p_b = mmse^-1(min{(Q-1)/Q, eta / h_b^2}) / h_b^2,   mean(p) = P.

Long-term constraint: each realisation gets the least power ``wp`` meeting the
rate, and transmission is switched off when ``mean(wp)`` exceeds a threshold
``s`` chosen so that the average power equals the budget.  For one block
``wp = snr_R / h^2`` and

    gamma(s) = E[wp 1{wp <= s}] = snr_R * int_{sqrt(snr_R/s)}^inf f_H(h) / h^2 dh.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .numerics import find_root, find_root_vec
from .outage_csir import (CSIT_LT, DEFAULT_TRIALS, OutageCurve, db_to_lin, fmt, iter_block_fading, snr_exponent,
                          snr_r)
from .ppm import InfoTable, MonteCarloSpec, get_table
from .scintillation import EXPONENTIAL, LOGNORMAL, ChannelConfig, CombinedFadingDistribution, get_distribution

THRESHOLD_SAMPLES = 10**5
_THRESHOLD_STREAM = 21
_COUNT_STREAM = 22
_ETA_TOL = 1e-14


class BoundaryUndefinedError(ValueError):
    """Raised when the long-term exponent is requested exactly at ``d_st = 1``."""


@dataclass(frozen=True)
class PowerAllocation:
    powers: np.ndarray
    eta: float
    total: float

    def __post_init__(self):
        p = np.array(self.powers, dtype=float)
        if np.any(p < 0):
            raise ValueError("powers must be non-negative")
        p.setflags(write=False)
        object.__setattr__(self, "powers", p)


def _table(Q: int, table: InfoTable | None) -> InfoTable:
    table = table or get_table(Q)
    if table.Q != Q:
        raise ValueError(f"table is for Q={table.Q}, not {Q}")
    return table


def _check_h(h) -> np.ndarray:
    h = np.asarray(h, dtype=float)
    if h.ndim == 0 or h.shape[-1] == 0:
        raise ValueError("fading vector must have at least one block")
    if np.any(h < 0):
        raise ValueError("fading coefficients must be non-negative")
    return h


def _st_powers(table: InfoTable, h2: np.ndarray, eta) -> np.ndarray:
    with np.errstate(divide="ignore"):
        u = np.minimum(table.cap, np.asarray(eta)[..., None] / h2)
    rho = np.where(u >= table.cap, 0.0, table.inv_mmse_array(u))
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(rho > 0, rho / h2, 0.0)


def _weakest(h2: np.ndarray) -> np.ndarray:
    return np.where(h2 > 0, h2, np.inf).min(axis=-1)


def _st_bracket(table: InfoTable, h2: np.ndarray, P):
    """Log-eta bracket: at the top every block is off, at the bottom every live block saturates.

    Also returns the saturating powers and a mask of budgets that exceed them.
    """
    hi = np.log(table.cap * h2.max(axis=-1))
    floor = table.mmse[table.mmse > 0][-1]
    lo = np.log(floor * _weakest(h2))
    p_sat = _st_powers(table, h2, np.exp(lo))
    return lo, hi, p_sat, p_sat.mean(axis=-1) <= P


def _spread(p_sat: np.ndarray, P) -> np.ndarray:
    # beyond saturation extra power buys nothing; scale up so the budget is still met
    return p_sat * (np.asarray(P) / p_sat.mean(axis=-1))[..., None]


def st_allocation(h, P: float, Q: int, table: InfoTable | None = None) -> PowerAllocation:
    """Mercury-waterfilling under the per-codeword budget ``mean(p) = P``.

    When the budget exceeds what drives every live block to the top of the
    information table, the saturating powers are scaled up to meet it.
    """
    h = _check_h(h)
    if h.ndim != 1:
        raise ValueError("use st_allocation_batch for several fading vectors")
    if not P > 0:
        raise ValueError("budget must be positive")
    if not np.any(h > 0):
        raise ValueError("all blocks are faded to zero; no allocation is feasible")
    table = _table(Q, table)
    if h.size == 1:
        eta = float(table.mmse_at(P * h[0] ** 2)) * h[0] ** 2
        return PowerAllocation(np.array([P]), eta, P)
    h2 = h * h
    lo, hi, p_sat, sat = _st_bracket(table, h2, P)
    if sat:
        p = _spread(p_sat, P)
        return PowerAllocation(p, math.exp(lo), float(p.mean()))
    x = find_root(lambda x: _st_powers(table, h2, math.exp(x)).mean() - P, float(lo), float(hi), tol=_ETA_TOL)
    p = _st_powers(table, h2, math.exp(x))
    return PowerAllocation(p, math.exp(x), float(p.mean()))


def st_allocation_batch(h, P: float, Q: int, table: InfoTable | None = None) -> np.ndarray:
    """Short-term powers for each row of ``h`` (shape ``(n, B)``)."""
    h = _check_h(np.atleast_2d(h))
    table = _table(Q, table)
    if h.shape[1] == 1:
        return np.full(h.shape, float(P))
    if np.any(h.max(axis=1) <= 0):
        raise ValueError("a fading vector is zero in every block")
    h2 = h * h
    lo, hi, p_sat, sat = _st_bracket(table, h2, P)
    p = _spread(p_sat, P)
    live = ~sat
    if np.any(live):
        g2 = h2[live]
        x = find_root_vec(lambda x: _st_powers(table, g2, np.exp(x)).mean(axis=1) - P, lo[live], hi[live], tol=1e-12)
        p[live] = _st_powers(table, g2, np.exp(x))
    return p


def _lt_rho(table: InfoTable, h2: np.ndarray, eta) -> np.ndarray:
    with np.errstate(divide="ignore"):
        u = np.minimum(table.cap, 1.0 / (np.asarray(eta)[..., None] * h2))
    return np.where(u >= table.cap, 0.0, table.inv_mmse_array(u))


def _lt_bracket(table: InfoTable, h2: np.ndarray):
    # below lo every block is off; above hi every live block sits at the table's top
    hmax = h2.max(axis=-1)
    lo = np.log(1.0 / (table.cap * hmax))
    floor = table.mmse[table.mmse > 0][-1]
    return lo, np.log(1.0 / (floor * _weakest(h2)))


def lt_min_power(h, R: float, Q: int, table: InfoTable | None = None) -> PowerAllocation:
    """Least average power meeting rate ``R`` on the realisation ``h``.

    One block reduces to ``snr_R / h^2``; ``total`` is the mean over blocks.
    """
    h = _check_h(h)
    if h.ndim != 1:
        raise ValueError("use lt_min_power_batch for several fading vectors")
    if not 0 < R < math.log2(Q):
        raise ValueError(f"rate {R} is not achievable with {Q}-PPM")
    if not np.any(h > 0):
        raise ValueError("all blocks are faded to zero; the rate is infeasible")
    table = _table(Q, table)
    if h.size == 1:
        p = table.inv_mi(R) / h[0] ** 2
        eta = 1.0 / (float(table.mmse_at(p * h[0] ** 2)) * h[0] ** 2)
        return PowerAllocation(np.array([p]), eta, p)
    h2 = h * h
    lo, hi = _lt_bracket(table, h2)
    x = find_root(lambda x: float(np.mean(table.mi(_lt_rho(table, h2, math.exp(x))))) - R,
                  float(lo), float(hi), tol=_ETA_TOL)
    rho = _lt_rho(table, h2, math.exp(x))
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(rho > 0, rho / h2, 0.0)
    return PowerAllocation(p, math.exp(x), float(p.mean()))


def lt_min_power_batch(h, R: float, Q: int, table: InfoTable | None = None) -> np.ndarray:
    """Mean minimal power ``(1/B) sum_b wp_b`` for each row of ``h``."""
    h = _check_h(np.atleast_2d(h))
    table = _table(Q, table)
    if h.shape[1] == 1:
        with np.errstate(divide="ignore"):
            return table.inv_mi(R) / h[:, 0] ** 2
    h2 = h * h
    lo, hi = _lt_bracket(table, h2)
    x = find_root_vec(lambda x: table.mi(_lt_rho(table, h2, np.exp(x))).mean(axis=1) - R, lo, hi, tol=1e-12)
    rho = _lt_rho(table, h2, np.exp(x))
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(rho > 0, rho / h2, 0.0).mean(axis=1)


@dataclass(frozen=True)
class LongTermPolicy:
    """Transmit the minimal-power vector when its mean is at most ``s``, else stay silent."""

    s: float
    target_rate: float
    config: ChannelConfig
    budget: float = math.nan
    totals: np.ndarray = field(default=None, repr=False)

    def transmits(self, total) -> np.ndarray:
        return np.asarray(total) <= self.s

    def dump_csv(self, h: np.ndarray, totals: np.ndarray, path=None) -> str:
        """Audit table of sampled realisations, their minimal power and the on/off decision."""
        h = np.atleast_2d(h)
        buf = io.StringIO()
        for k, v in self.config.describe().items():
            buf.write(f"# {k}={v}\n")
        buf.write(f"# rate={fmt(self.target_rate)}\n# budget={fmt(self.budget)}\n# s={fmt(self.s)}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["id"] + [f"h{b + 1}" for b in range(h.shape[1])] + ["min_power", "transmit"])
        on = self.transmits(totals)
        for i, (row, t, o) in enumerate(zip(h, totals, on)):
            w.writerow([i] + [fmt(float(v)) for v in row] + [fmt(float(t)), int(o)])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def sample_min_power(config: ChannelConfig, samples: int, seed: int, stream: int = _THRESHOLD_STREAM,
                     table: InfoTable | None = None):
    """Sampled fading vectors and their mean minimal power."""
    table = _table(config.Q, table)
    hs, ts = [], []
    for h in iter_block_fading(config, samples, seed, stream=stream):
        hs.append(h)
        ts.append(lt_min_power_batch(h, config.rate, config.Q, table))
    return np.concatenate(hs), np.concatenate(ts)


def threshold_from_totals(totals, P: float) -> float:
    """Solve ``E[T 1{T <= s}] = P`` on an empirical sample of ``T``.

    Prefix sums over the sorted sample give the truncated mean at each order
    statistic; between them it is interpolated linearly, starting from the
    knot ``(0, 0)``.  Returns ``inf`` when the full sample mean is within budget.
    """
    if not P > 0:
        raise ValueError("budget must be positive")
    t = np.sort(np.asarray(totals, dtype=float))
    m = np.cumsum(t) / t.size
    if P >= m[-1]:
        return math.inf
    return float(np.interp(P, np.concatenate([[0.0], m]), np.concatenate([[0.0], t])))


def lt_policy(config: ChannelConfig, P: float, mc: MonteCarloSpec = MonteCarloSpec(THRESHOLD_SAMPLES),
              table: InfoTable | None = None) -> LongTermPolicy:
    """Threshold policy for budget ``P``.

    For one block ``s`` solves ``gamma(s) = P`` by quadrature, because the
    sampled mean of ``snr_R / h^2`` has infinite variance for the heavier
    tails (exponential ``MN <= 4``) and a single extreme draw can move it
    past the true threshold.  Otherwise ``s`` comes from the sampled totals.
    """
    if not P > 0:
        raise ValueError("budget must be positive")
    _, totals = sample_min_power(config, mc.samples, mc.seed, table=table)
    return LongTermPolicy(policy_threshold(config, P, totals, table), config.rate, config, P, np.sort(totals))


def policy_threshold(config: ChannelConfig, P: float, totals, table: InfoTable | None = None) -> float:
    """Threshold ``s`` for budget ``P``: by quadrature for one block, else from the sampled ``totals``."""
    return _b1_threshold(config, P, table) if config.B == 1 else threshold_from_totals(totals, P)


def _b1_threshold(config: ChannelConfig, P: float, table: InfoTable | None) -> float:
    dist = get_distribution(config)
    sr = snr_r(config, table)
    if P >= sr * dist.inv_second_moment():
        return math.inf
    return sr / _solve_nu(dist, sr, P) ** 2


def lt_threshold_s(config: ChannelConfig, P: float, mc: MonteCarloSpec = MonteCarloSpec(THRESHOLD_SAMPLES),
                   table: InfoTable | None = None) -> float:
    """Power threshold ``s`` of the long-term policy for budget ``P`` (``inf`` if never silent)."""
    return lt_policy(config, P, mc, table).s


def _require_b1(config: ChannelConfig):
    if config.B != 1:
        raise ValueError("this quantity is only defined here for B = 1")


def lt_snr_threshold(config: ChannelConfig, table: InfoTable | None = None,
                     dist: CombinedFadingDistribution | None = None) -> float:
    """Least long-term SNR (linear) at which outage can be driven to zero; may be ``inf``."""
    _require_b1(config)
    dist = dist or get_distribution(config)
    return snr_r(config, table) * dist.inv_second_moment()


def gamma_s(config: ChannelConfig, s: float, table: InfoTable | None = None,
            dist: CombinedFadingDistribution | None = None) -> float:
    """Average power spent by the one-block policy with threshold ``s``."""
    _require_b1(config)
    if s <= 0:
        return 0.0
    dist = dist or get_distribution(config)
    sr = snr_r(config, table)
    if math.isinf(s):
        return sr * dist.inv_second_moment()
    return sr * dist.tail_inv_second_moment(math.sqrt(sr / s))


def _solve_nu(dist: CombinedFadingDistribution, sr: float, snr: float) -> float:
    """Cut-off ``nu`` with ``sr * int_nu^inf f_H / h^2 = snr``; 0 when it lies below ``exp(-700)``."""
    target = math.log(snr / sr)

    def g(u):
        v = dist.tail_inv_second_moment(math.exp(u))
        return (math.log(v) if v > 0 else -1e300) - target

    lo, hi, step = -1.0, 1.0, 2.0
    while g(lo) < 0:
        hi, lo, step = lo, lo - step, 2.0 * step
        if lo < -700:
            # only reachable for a slowly diverging gamma(s); nu and the outage underflow
            if g(-700.0) < 0:
                return 0.0
            lo = -700.0
    step = 2.0
    while g(hi) > 0:
        lo, hi, step = hi, hi + step, 2.0 * step
    return math.exp(find_root(g, lo, hi, tol=1e-13))


def outage_csit_b1(config: ChannelConfig, snr_db, table: InfoTable | None = None,
                   dist: CombinedFadingDistribution | None = None):
    """One-block outage with long-term power control; exactly 0 above the threshold."""
    _require_b1(config)
    dist = dist or get_distribution(config)
    sr = snr_r(config, table)
    bar = sr * dist.inv_second_moment()
    out = []
    for s in np.atleast_1d(db_to_lin(snr_db)):
        if s >= bar:
            out.append(0.0)
        elif s <= 0:
            out.append(1.0)
        else:
            out.append(float(dist.cdf_at(_solve_nu(dist, sr, s))))
    return out[0] if np.ndim(snr_db) == 0 else np.array(out)


def csit_snr_at(config: ChannelConfig, p_out: float, table: InfoTable | None = None,
                dist: CombinedFadingDistribution | None = None) -> float:
    """Long-term SNR (linear) at which the one-block CSIT outage equals ``p_out``."""
    _require_b1(config)
    dist = dist or get_distribution(config)
    sr = snr_r(config, table)
    return sr * dist.tail_inv_second_moment(dist.quantile(p_out))


def outage_csit_mc(config: ChannelConfig, snr_db, trials: int = DEFAULT_TRIALS, seed: int = 0,
                   threshold: MonteCarloSpec | None = None, table: InfoTable | None = None):
    """Monte-Carlo long-term outage: fraction of realisations whose minimal power exceeds ``s``.

    The threshold ``s`` is estimated from an independent sample (``threshold``)
    so that the outage count is not biased by reuse.
    """
    if trials < 1000:
        raise ValueError("outage_csit_mc needs at least 1000 trials")
    table = _table(config.Q, table)
    threshold = threshold or MonteCarloSpec(THRESHOLD_SAMPLES, seed)
    _, ref = sample_min_power(config, threshold.samples, threshold.seed, table=table)
    _, totals = sample_min_power(config, trials, seed, stream=_COUNT_STREAM, table=table)
    snr = np.atleast_1d(db_to_lin(snr_db))
    p = np.empty(snr.size)
    for j, P in enumerate(snr):
        s = threshold_from_totals(ref, P)
        p[j] = np.count_nonzero(totals > s) / trials
    se = np.sqrt(p * (1.0 - p) / trials)
    if np.ndim(snr_db) == 0:
        return float(p[0]), float(se[0])
    return p, se


def outage_csit_st_mc(config: ChannelConfig, snr_db, trials: int = DEFAULT_TRIALS, seed: int = 0,
                      table: InfoTable | None = None):
    """Monte-Carlo outage with mercury-waterfilling under the per-codeword budget."""
    if trials < 1000:
        raise ValueError("outage_csit_st_mc needs at least 1000 trials")
    table = _table(config.Q, table)
    snr = np.atleast_1d(db_to_lin(snr_db))
    counts = np.zeros(snr.size)
    for h in iter_block_fading(config, trials, seed):
        h = np.maximum(h, 1e-300)
        for j, P in enumerate(snr):
            p = st_allocation_batch(h, P, config.Q, table)
            counts[j] += np.count_nonzero(table.mi(p * h * h).mean(axis=1) < config.rate)
    p = counts / trials
    se = np.sqrt(p * (1.0 - p) / trials)
    if np.ndim(snr_db) == 0:
        return float(p[0]), float(se[0])
    return p, se


def csit_lt_curve(config: ChannelConfig, snr_db, trials: int = DEFAULT_TRIALS, seed: int = 0,
                  table: InfoTable | None = None) -> OutageCurve:
    snr_db = np.asarray(snr_db, dtype=float)
    if config.B == 1:
        p = outage_csit_b1(config, snr_db, table)
        method = "closed" if config.model.kind == EXPONENTIAL or config.MN == 1 else "fft"
        bar = lt_snr_threshold(config, table)
        return OutageCurve(snr_db, p, np.zeros_like(p), config, CSIT_LT, method, {"snr_bar_db": _db(bar)})
    p, se = outage_csit_mc(config, snr_db, trials, seed, table=table)
    return OutageCurve(snr_db, p, se, config, CSIT_LT, "mc", {"trials": trials, "seed": seed})


def _db(x: float):
    return math.inf if math.isinf(x) else 10.0 * math.log10(x)


def delay_limited_capacity(config: ChannelConfig, snr_db: float, table: InfoTable | None = None,
                           dist: CombinedFadingDistribution | None = None) -> float:
    """Largest rate (bits) sustained with zero outage under long-term SNR ``snr_db``."""
    _require_b1(config)
    dist = dist or get_distribution(config)
    m2 = dist.inv_second_moment()
    if math.isinf(m2):
        return 0.0
    table = _table(config.Q, table)
    return float(table.mi(float(db_to_lin(snr_db)) / m2))


def lt_exponent(config: ChannelConfig) -> float:
    """Outage exponent under long-term power control.

    ``d/(1-d)`` for a short-term exponent ``d < 1``; infinite (zero outage
    above a finite SNR) when ``d > 1`` and for lognormal fading.
    """
    if config.model.kind == LOGNORMAL:
        return math.inf
    d = snr_exponent(config).value
    if math.isclose(d, 1.0, rel_tol=0, abs_tol=1e-12):
        raise BoundaryUndefinedError("the long-term exponent is undefined when the short-term exponent is 1")
    return d / (1.0 - d) if d < 1 else math.inf
