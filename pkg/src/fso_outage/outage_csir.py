"""Outage probability with channel state known at the receiver only.

With uniform power ``p_b = snr`` the codeword is in outage when

    (1/B) sum_b I_awgn(snr * h_b^2) < R.

For one block this is ``F_H(sqrt(snr_R / snr))`` where ``snr_R`` is the
SNR at which the PPM mutual information equals ``R``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .ppm import InfoTable, get_table
from .scintillation import (EXPONENTIAL, GAMMA_GAMMA, LOGNORMAL, ChannelConfig, CombinedFadingDistribution,
                            get_distribution, rng_stream, sample_single)

CSIR = "csir"
CSIT_ST = "csit-st"
CSIT_LT = "csit-lt"
CSI_MODES = (CSIR, CSIT_ST, CSIT_LT)
METHODS = ("mc", "closed", "fft")

ASYMPTOTIC_P = 1e-3
DEFAULT_TRIALS = 10**6
_TRIAL_CHUNK = 1 << 18
_BLOCK_STREAM = 11


class InsufficientPointsError(ValueError):
    """Raised when a curve has too few points in its asymptotic region for a slope fit."""


def db_to_lin(db):
    return np.power(10.0, np.asarray(db, dtype=float) / 10.0)


def lin_to_db(x):
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(x)


def fmt(v) -> str:
    """12 significant digits; exact zeros stay a literal ``0``."""
    if isinstance(v, str):
        return v
    if v == 0:
        return "0"
    return f"{v:.12g}"


@dataclass(frozen=True)
class OutageCurve:
    """Outage probability against SNR in dB for one configuration."""

    snr_db: np.ndarray
    p_out: np.ndarray
    std_err: np.ndarray
    config: ChannelConfig
    csi_mode: str = CSIR
    method: str = "closed"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        arrays = [np.array(getattr(self, k), dtype=float) for k in ("snr_db", "p_out", "std_err")]
        if len({a.shape for a in arrays}) != 1 or arrays[0].ndim != 1 or arrays[0].size == 0:
            raise ValueError("snr_db, p_out and std_err must be equal-length non-empty 1-D arrays")
        if np.any(np.diff(arrays[0]) <= 0):
            raise ValueError("snr_db must be strictly increasing")
        if self.csi_mode not in CSI_MODES:
            raise ValueError(f"unknown CSI mode {self.csi_mode!r}")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        for k, a in zip(("snr_db", "p_out", "std_err"), arrays):
            a.setflags(write=False)
            object.__setattr__(self, k, a)

    def __len__(self):
        return self.snr_db.size

    def is_monotone(self) -> bool:
        """Non-increasing within two standard errors."""
        slack = 2.0 * np.hypot(self.std_err[1:], self.std_err[:-1])
        return bool(np.all(np.diff(self.p_out) <= slack + 1e-15 * self.p_out[:-1]))

    def header(self) -> dict:
        h = dict(self.config.describe())
        h.update(csi=self.csi_mode, method=self.method)
        h.update(self.meta)
        return h

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        for k, v in self.header().items():
            buf.write(f"# {k}={fmt(v) if isinstance(v, float) else v}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["snr_db", "p_out", "std_err", "method"])
        for s, p, e in zip(self.snr_db, self.p_out, self.std_err):
            w.writerow([fmt(float(s)), fmt(float(p)), fmt(float(e)), self.method])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


@dataclass(frozen=True)
class ExponentReport:
    """Outage SNR exponent ``-log P_out ~ value * (log snr)^order_k``."""

    order_k: int
    value: float
    singleton_factor: int
    channel_factor: float
    spatial_factor: int

    def __post_init__(self):
        expect = self.channel_factor * self.spatial_factor * self.singleton_factor
        if not math.isclose(self.value, expect, rel_tol=1e-12):
            raise ValueError("value must equal channel_factor * spatial_factor * singleton_factor")


def snr_r(config: ChannelConfig, table: InfoTable | None = None) -> float:
    """Linear SNR at which the AWGN mutual information equals the target rate."""
    return (table or get_table(config.Q)).inv_mi(config.rate)


def instantaneous_mi(p, h, Q: int, table: InfoTable | None = None):
    """Mean over blocks of ``I_awgn(p_b h_b^2)`` in bits.

    ``p`` and ``h`` share their last axis (the ``B`` blocks); leading axes are
    evaluated independently.
    """
    p = np.asarray(p, dtype=float)
    h = np.asarray(h, dtype=float)
    if p.shape[-1:] != h.shape[-1:]:
        raise ValueError(f"power and fading vectors differ in length: {p.shape} vs {h.shape}")
    if np.any(p < 0):
        raise ValueError("powers must be non-negative")
    table = table or get_table(Q)
    if table.Q != Q:
        raise ValueError(f"table is for Q={table.Q}, not {Q}")
    mi = np.mean(table.mi(p * h * h), axis=-1)
    return float(mi) if np.ndim(mi) == 0 else mi


def iter_block_fading(config: ChannelConfig, trials: int, seed: int, stream: int = _BLOCK_STREAM,
                      chunk: int = _TRIAL_CHUNK):
    """Yield ``(m, B)`` arrays of i.i.d. block coefficients ``H``."""
    done = 0
    i = 0
    while done < trials:
        m = min(chunk, trials - done)
        ht = sample_single(config.model, (m, config.B, config.MN), rng_stream(seed, stream, i))
        yield config.scale * ht.sum(axis=2)
        done += m
        i += 1


def outage_mc(config: ChannelConfig, snr_db, trials: int = DEFAULT_TRIALS, seed: int = 0,
              table: InfoTable | None = None):
    """Monte-Carlo outage probability with uniform power over the blocks.

    The same fading draws serve every SNR in ``snr_db`` (common random
    numbers), so curves are smooth and deterministic for a fixed seed.
    Returns ``(p_out, std_err)`` with binomial standard errors.
    """
    if trials < 1000:
        raise ValueError("outage_mc needs at least 1000 trials")
    table = table or get_table(config.Q)
    snr = np.atleast_1d(db_to_lin(snr_db))
    R = config.rate
    counts = np.zeros(snr.size)
    for h in iter_block_fading(config, trials, seed):
        h2 = h * h
        for j, s in enumerate(snr):
            counts[j] += np.count_nonzero(np.mean(table.mi(s * h2), axis=1) < R)
    p = counts / trials
    se = np.sqrt(p * (1.0 - p) / trials)
    if np.ndim(snr_db) == 0:
        return float(p[0]), float(se[0])
    return p, se


def outage_b1(config: ChannelConfig, snr_db, table: InfoTable | None = None,
              dist: CombinedFadingDistribution | None = None):
    """Single-block outage ``F_H(sqrt(snr_R / snr))``.

    Exponential fading uses the regularised lower incomplete gamma function;
    the other models use the combined-coefficient cdf (closed form for one
    path).
    """
    if config.B != 1:
        raise ValueError("outage_b1 requires B = 1")
    snr = db_to_lin(snr_db)
    sr = snr_r(config, table)
    with np.errstate(divide="ignore"):
        nu = np.sqrt(sr / snr)
    if config.model.kind == EXPONENTIAL:
        n = config.MN
        with np.errstate(divide="ignore"):
            p = special.gammainc(n, np.sqrt(n * (1.0 + n) * sr / snr))
    else:
        dist = dist or get_distribution(config)
        p = np.where(np.isinf(nu), 1.0, dist.cdf_at(np.where(np.isinf(nu), 1.0, nu)))
    return float(p) if np.ndim(snr_db) == 0 else np.asarray(p, dtype=float)


def b1_method(config: ChannelConfig) -> str:
    if config.model.kind == EXPONENTIAL or config.MN == 1:
        return "closed"
    return "fft"


def outage_curve(config: ChannelConfig, snr_db, method: str | None = None, trials: int = DEFAULT_TRIALS,
                 seed: int = 0, table: InfoTable | None = None) -> OutageCurve:
    """CSIR outage curve; analytic for one block, Monte-Carlo otherwise."""
    snr_db = np.asarray(snr_db, dtype=float)
    if method is None:
        method = b1_method(config) if config.B == 1 else "mc"
    if method == "mc":
        p, se = outage_mc(config, snr_db, trials, seed, table)
        return OutageCurve(snr_db, p, se, config, CSIR, "mc", {"trials": trials, "seed": seed})
    if config.B != 1:
        raise ValueError(f"method {method!r} is only available for B = 1")
    p = outage_b1(config, snr_db, table)
    return OutageCurve(snr_db, p, np.zeros_like(p), config, CSIR, method)


def snr_exponent(config: ChannelConfig) -> ExponentReport:
    """Asymptotic outage exponent of the uniform-power CSIR scheme."""
    m = config.model
    if m.kind == LOGNORMAL:
        k, ch = 2, 1.0 / (8.0 * math.log1p(m.si2))
    elif m.kind == EXPONENTIAL:
        k, ch = 1, 0.5
    elif m.kind == GAMMA_GAMMA:
        k, ch = 1, 0.5 * min(m.alpha, m.beta)
    else:  # pragma: no cover
        raise ValueError(m.kind)
    sf = config.singleton
    return ExponentReport(k, ch * config.MN * sf, sf, ch, config.MN)


def snr_exponent_lognormal_approx(config: ChannelConfig) -> float:
    """Exponent obtained by approximating the lognormal path sum by one lognormal."""
    if config.model.kind != LOGNORMAL:
        raise ValueError("the lognormal approximation needs a lognormal model")
    return config.singleton / (8.0 * math.log1p(config.model.si2 / config.MN))


def empirical_exponent(curve, order_k: int = 1, p_max: float = ASYMPTOTIC_P, min_points: int = 4) -> float:
    """Fitted exponent of ``-log p_out`` in powers of ``log snr``.

    ``-log p`` is regressed on ``1, log snr, ..., (log snr)^k`` over the
    points with ``0 < p <= p_max`` and the leading coefficient is returned.
    For ``k = 1`` this is the ordinary log-log slope; for ``k = 2`` the
    linear term absorbs the sub-leading drift of lognormal tails.

    ``curve`` is an :class:`OutageCurve` or a ``(snr_db, p_out)`` pair.
    """
    if order_k not in (1, 2):
        raise ValueError("order_k must be 1 or 2")
    if isinstance(curve, OutageCurve):
        snr_db, p = curve.snr_db, curve.p_out
    else:
        snr_db, p = (np.asarray(a, dtype=float) for a in curve)
    keep = (p > 0) & (p <= p_max)
    if np.count_nonzero(keep) < max(min_points, order_k + 2):
        raise InsufficientPointsError(
            f"only {np.count_nonzero(keep)} points with 0 < p_out <= {p_max}; need {min_points}")
    x = np.log(10.0) * snr_db[keep] / 10.0
    y = -np.log(p[keep])
    coef = np.polynomial.polynomial.polyfit(x, y, order_k)
    return float(coef[order_k])


def local_slopes(curve: OutageCurve) -> np.ndarray:
    """Finite-difference slopes of ``-log p`` against ``log snr``."""
    x = np.log(10.0) * curve.snr_db / 10.0
    with np.errstate(divide="ignore"):
        y = -np.log(curve.p_out)
    return np.diff(y) / np.diff(x)
