"""Mutual information and MMSE of Q-ary PPM on the AWGN channel.

With the pulse in slot 1 the log-likelihood offsets of the other slots are
``-rho + sqrt(rho) * (Z_q - Z_1)``, so both quantities reduce to expectations
over ``W_q = Z_q - Z_1``::

    I(rho)    = log2 Q - E[log2(1 + sum_q exp(-rho + sqrt(rho) W_q))]
    mmse(rho) = 1 - E[(1 + sum_q e_q^2) / (1 + sum_q e_q)^2]

The second line is the squared norm of the posterior-mean estimate summed
over all slots.  Both describe ``y = sqrt(rho) x + z`` with real unit-variance
noise, for which ``d I / d rho = mmse / 2`` in nats.  Estimates use antithetic pairs ``(Z, -Z)``; every draw is
reused for all SNRs requested in one call (common random numbers).
"""

from __future__ import annotations

import csv
import io
import logging
import math
import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import isotonic_regression

from .numerics import find_root
from .scintillation import rng_stream

log = logging.getLogger(__name__)

LN2 = math.log(2.0)
DEFAULT_SAMPLES = 10**6
# exp(-50) is below double resolution next to the unit term
_NEGLIGIBLE_EXPONENT = -50.0
_PAIRS_PER_CHUNK = 1 << 15
_PPM_STREAM = 7


@dataclass(frozen=True)
class MonteCarloSpec:
    samples: int = DEFAULT_SAMPLES
    seed: int = 0

    def __post_init__(self):
        if self.samples < 1000:
            raise ValueError("Monte-Carlo estimates need at least 1000 samples")


class Estimate(NamedTuple):
    value: float | np.ndarray
    std_err: float | np.ndarray


def _check_q(Q: int):
    if Q < 2 or Q & (Q - 1):
        raise ValueError(f"Q must be a power of two >= 2, got {Q}")


def _chunks(Q: int, mc: MonteCarloSpec):
    """Yield ``W`` blocks of shape (Q-1, pairs); the antithetic partner is ``-W``."""
    pairs = max(1, mc.samples // 2)
    done = 0
    i = 0
    while done < pairs:
        m = min(_PAIRS_PER_CHUNK, pairs - done)
        z = rng_stream(mc.seed, _PPM_STREAM, Q, i).standard_normal((Q, m))
        yield z[1:] - z[0]
        done += m
        i += 1


def _terms(w: np.ndarray, rho: float, wmax: float):
    """Per-pair averages of the log term (nats) and the MMSE term."""
    if rho == 0.0:
        n = w.shape[1]
        q = w.shape[0] + 1
        return np.full(n, math.log(q)), np.full(n, (q - 1.0) / q)
    sr = math.sqrt(rho)
    if sr * wmax - rho < _NEGLIGIBLE_EXPONENT:
        n = w.shape[1]
        return np.zeros(n), np.zeros(n)
    l_acc = 0.0
    m_acc = 0.0
    for sign in (1.0, -1.0):
        e = np.exp((sign * sr) * w - rho)
        s1 = e.sum(axis=0)
        np.square(e, out=e)
        s2 = e.sum(axis=0)
        d = 1.0 + s1
        l_acc = l_acc + np.log1p(s1)
        m_acc = m_acc + (1.0 - (1.0 + s2) / (d * d))
    return 0.5 * l_acc, 0.5 * m_acc


def mc_terms(rho: float, Q: int, mc: MonteCarloSpec = MonteCarloSpec()):
    """Per-pair samples ``(log term in nats, mmse term)`` at one SNR.

    Exposed so that callers can form paired statistics (finite differences
    with common random numbers) with honest standard errors.
    """
    _check_q(Q)
    ls, ms = [], []
    for w in _chunks(Q, mc):
        l, m = _terms(w, float(rho), float(np.abs(w).max()))
        ls.append(l)
        ms.append(m)
    return np.concatenate(ls), np.concatenate(ms)


def _moments(rho: np.ndarray, Q: int, mc: MonteCarloSpec):
    rho = np.asarray(rho, dtype=float)
    if np.any(rho < 0):
        raise ValueError("SNR must be non-negative")
    k = rho.size
    sl = np.zeros(k)
    sl2 = np.zeros(k)
    sm = np.zeros(k)
    sm2 = np.zeros(k)
    n = 0
    flat = rho.ravel()
    for w in _chunks(Q, mc):
        wmax = float(np.abs(w).max())
        for j, r in enumerate(flat):
            l, m = _terms(w, float(r), wmax)
            sl[j] += l.sum()
            sl2[j] += np.dot(l, l)
            sm[j] += m.sum()
            sm2[j] += np.dot(m, m)
        n += w.shape[1]
    ml, mm = sl / n, sm / n
    se_l = np.sqrt(np.maximum(sl2 / n - ml * ml, 0.0) / n)
    se_m = np.sqrt(np.maximum(sm2 / n - mm * mm, 0.0) / n)
    mi = np.clip(math.log2(Q) - ml / LN2, 0.0, math.log2(Q))
    mmse = np.clip(mm, 0.0, (Q - 1.0) / Q)
    shape = rho.shape
    return mi.reshape(shape), (se_l / LN2).reshape(shape), mmse.reshape(shape), se_m.reshape(shape)


def _pack(v, se, scalar):
    return Estimate(float(v.ravel()[0]), float(se.ravel()[0])) if scalar else Estimate(v, se)


def mi_awgn(rho, Q: int, mc: MonteCarloSpec = MonteCarloSpec()) -> Estimate:
    """Mutual information in bits of Q-PPM at SNR ``rho`` (scalar or array)."""
    _check_q(Q)
    mi, se, _, _ = _moments(np.atleast_1d(rho), Q, mc)
    return _pack(mi, se, np.ndim(rho) == 0)


def mmse_ppm(rho, Q: int, mc: MonteCarloSpec = MonteCarloSpec()) -> Estimate:
    """MMSE of estimating the PPM symbol from its noisy observation."""
    _check_q(Q)
    _, _, mm, se = _moments(np.atleast_1d(rho), Q, mc)
    return _pack(mm, se, np.ndim(rho) == 0)


def default_rho_grid(points: int = 400, lo: float = 1e-3, hi: float = 1e4) -> np.ndarray:
    """Log-spaced SNR grid with an explicit leading zero."""
    return np.concatenate([[0.0], np.logspace(math.log10(lo), math.log10(hi), points)])


@dataclass(frozen=True)
class InfoTable:
    """Tabulated I(rho) and mmse(rho) with monotone interpolation.

    ``rho[0]`` must be 0; the remaining nodes are positive and increasing.
    Values are stored after isotonic projection; ``flagged`` lists nodes where
    the raw estimate broke monotonicity by more than two standard errors.
    """

    Q: int
    rho: np.ndarray = field(repr=False)
    mi_bits: np.ndarray = field(repr=False)
    mmse: np.ndarray = field(repr=False)
    mi_std_err: np.ndarray = field(repr=False)
    mmse_std_err: np.ndarray = field(repr=False)
    samples: int = DEFAULT_SAMPLES
    seed: int = 0
    flagged: tuple = ()

    def __post_init__(self):
        _check_q(self.Q)
        r = np.asarray(self.rho, dtype=float)
        if r[0] != 0.0 or np.any(np.diff(r) <= 0):
            raise ValueError("rho grid must start at 0 and increase strictly")
        for name in ("rho", "mi_bits", "mmse", "mi_std_err", "mmse_std_err"):
            a = np.array(getattr(self, name), dtype=float)
            if a.shape != r.shape:
                raise ValueError(f"{name} has shape {a.shape}, expected {r.shape}")
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @classmethod
    def build(cls, Q: int, mc: MonteCarloSpec = MonteCarloSpec(), rho=None) -> "InfoTable":
        _check_q(Q)
        rho = default_rho_grid() if rho is None else np.asarray(rho, dtype=float)
        mi, mi_se, mm, mm_se = _moments(rho, Q, mc)
        bad = _nonmonotone(mi, mi_se, rising=True) | _nonmonotone(mm, mm_se, rising=False)
        flagged = tuple(int(i) for i in np.flatnonzero(bad))
        if flagged:
            log.warning("Q=%d table: raw estimate non-monotone beyond noise at rho=%s", Q, rho[list(flagged)])
        mi = np.clip(isotonic_regression(mi, increasing=True).x, 0.0, math.log2(Q))
        mm = np.clip(isotonic_regression(mm, increasing=False).x, 0.0, (Q - 1.0) / Q)
        return cls(Q, rho, mi, mm, mi_se, mm_se, mc.samples, mc.seed, flagged)

    @property
    def max_bits(self) -> float:
        return math.log2(self.Q)

    @property
    def cap(self) -> float:
        """mmse(0) = (Q-1)/Q."""
        return (self.Q - 1.0) / self.Q

    @cached_property
    def _interp(self):
        x = np.log(self.rho[1:])
        return PchipInterpolator(x, self.mi_bits[1:]), PchipInterpolator(x, self.mmse[1:])

    def _eval(self, which: int, rho):
        r = np.asarray(rho, dtype=float)
        vals = self.mi_bits if which == 0 else self.mmse
        r1 = self.rho[1]
        with np.errstate(divide="ignore"):
            lr = np.log(np.clip(r, r1, self.rho[-1]))
        out = self._interp[which](lr)
        low = r < r1
        if np.any(low):
            out = np.where(low, vals[0] + (vals[1] - vals[0]) * np.clip(r, 0, None) / r1, out)
        return out if np.ndim(rho) else float(out)

    def mi(self, rho):
        """Interpolated I(rho) in bits."""
        return self._eval(0, rho)

    def mmse_at(self, rho):
        """Interpolated mmse(rho)."""
        return self._eval(1, rho)

    def inv_mi(self, R: float) -> float:
        """SNR at which the mutual information reaches ``R`` bits."""
        if not 0 < R < self.max_bits:
            raise ValueError(f"rate {R} outside (0, log2 Q = {self.max_bits})")
        if R > self.mi_bits[-1]:
            raise ValueError(f"rate {R} exceeds the tabulated maximum {self.mi_bits[-1]}")
        if R <= self.mi_bits[1]:
            return float(self.rho[1] * R / self.mi_bits[1])
        lo, hi = math.log(self.rho[1]), math.log(self.rho[-1])
        return math.exp(find_root(lambda x: self.mi(math.exp(x)) - R, lo, hi, tol=1e-15))

    def inv_mmse(self, u: float) -> float:
        """SNR at which the MMSE equals ``u``; ``u = (Q-1)/Q`` maps to 0."""
        if not 0 < u <= self.cap:
            raise ValueError(f"mmse value {u} outside (0, {self.cap}]")
        if u >= self.mmse[1]:
            return float(self.rho[1] * (self.cap - u) / (self.cap - self.mmse[1]))
        pos = self.mmse > 0
        floor = self.mmse[pos][-1]
        if u <= floor:
            return float(self.rho[pos][-1])
        lo, hi = math.log(self.rho[1]), math.log(self.rho[pos][-1])
        return math.exp(find_root(lambda x: self.mmse_at(math.exp(x)) - u, lo, hi, tol=1e-15))

    @cached_property
    def _dense_inverse(self):
        r = np.exp(np.linspace(math.log(self.rho[1]), math.log(self.rho[-1]), 16 * self.rho.size))
        u = self.mmse_at(r)
        keep = np.concatenate([[True], np.diff(u) < 0]) & (u > 0)
        return np.log(u[keep][::-1]), np.log(r[keep][::-1])

    def inv_mmse_array(self, u) -> np.ndarray:
        """Vectorised inverse MMSE (log-log interpolation on a dense table)."""
        u = np.asarray(u, dtype=float)
        lu, lr = self._dense_inverse
        u_first = self.mmse[1]
        with np.errstate(divide="ignore"):
            out = np.exp(np.interp(np.log(np.clip(u, 1e-300, None)), lu, lr))
        near_cap = u >= u_first
        out = np.where(near_cap, self.rho[1] * (self.cap - np.minimum(u, self.cap)) / (self.cap - u_first), out)
        return out

    # CSV round trip -----------------------------------------------------

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        buf.write(f"# Q={self.Q}\n# samples={self.samples}\n# seed={self.seed}\n")
        buf.write(f"# flagged={';'.join(str(i) for i in self.flagged)}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["rho", "mi_bits", "mmse", "std_err", "mmse_std_err"])
        for row in zip(self.rho, self.mi_bits, self.mmse, self.mi_std_err, self.mmse_std_err):
            w.writerow([f"{v:.12g}" for v in row])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path) -> "InfoTable":
        meta = {}
        rows = []
        with open(path, newline="") as fh:
            for line in fh:
                if line.startswith("#"):
                    k, _, v = line[1:].strip().partition("=")
                    meta[k.strip()] = v.strip()
                elif line.strip():
                    rows.append(line)
        reader = csv.DictReader(rows)
        cols = {k: [] for k in ("rho", "mi_bits", "mmse", "std_err", "mmse_std_err")}
        for rec in reader:
            for k in cols:
                cols[k].append(float(rec.get(k) or 0.0))
        flagged = tuple(int(i) for i in meta.get("flagged", "").split(";") if i)
        return cls(int(meta["Q"]), np.array(cols["rho"]), np.array(cols["mi_bits"]), np.array(cols["mmse"]),
                   np.array(cols["std_err"]), np.array(cols["mmse_std_err"]),
                   int(meta.get("samples", DEFAULT_SAMPLES)), int(meta.get("seed", 0)), flagged)


def _nonmonotone(v, se, rising: bool) -> np.ndarray:
    d = np.diff(v) if rising else -np.diff(v)
    slack = 2.0 * np.hypot(se[1:], se[:-1])
    bad = np.zeros(v.size, dtype=bool)
    bad[1:] = d < -slack - 1e-15
    return bad


_TABLES: dict = {}


def get_table(Q: int, mc: MonteCarloSpec = MonteCarloSpec(), cache_dir=None) -> InfoTable:
    """Process-wide table for ``(Q, samples, seed)``, optionally cached as CSV on disk."""
    key = (Q, mc.samples, mc.seed)
    if key in _TABLES:
        return _TABLES[key]
    cache_dir = cache_dir or os.environ.get("FSO_OUTAGE_CACHE")
    path = None
    if cache_dir:
        os.makedirs(cache_dir, exist_ok=True)
        path = os.path.join(cache_dir, f"ppm_Q{Q}_n{mc.samples}_s{mc.seed}.csv")
        if os.path.exists(path):
            _TABLES[key] = InfoTable.from_csv(path)
            return _TABLES[key]
    table = InfoTable.build(Q, mc)
    if path:
        table.to_csv(path)
    _TABLES[key] = table
    return table


def inv_mi(R: float, Q: int, table: InfoTable | None = None) -> float:
    """Linear SNR at which Q-PPM carries ``R`` bits per channel use."""
    if not 0 < R < math.log2(Q):
        raise ValueError(f"rate {R} outside (0, log2 Q)")
    return (table or get_table(Q)).inv_mi(R)


def inv_mmse(u: float, Q: int, table: InfoTable | None = None) -> float:
    """Linear SNR at which the Q-PPM MMSE equals ``u``."""
    if not 0 < u <= (Q - 1.0) / Q:
        raise ValueError(f"mmse value {u} outside (0, (Q-1)/Q]")
    return (table or get_table(Q)).inv_mmse(u)
