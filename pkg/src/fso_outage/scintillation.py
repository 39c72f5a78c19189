"""Scintillation models and the distribution of the combined fading coefficient.

Per-path coefficients ``Ht`` follow one of three laws (lognormal, exponential,
gamma-gamma).  With ``M`` lasers and ``N`` apertures under equal gain
combining the effective coefficient is

    H = c / (M N) * sum_{m,n} Ht[m, n],    c = 1 / (E[Ht] * sqrt(1 + si2 / (M N)))

which makes ``E[H^2] = 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Iterator

import numpy as np
from scipy import special, stats

from .numerics import GridFunction, find_root, integrate, lattice_power, nfold_convolve

LOGNORMAL = "lognormal"
EXPONENTIAL = "exponential"
GAMMA_GAMMA = "gamma-gamma"
KINDS = (LOGNORMAL, EXPONENTIAL, GAMMA_GAMMA)

FFT_POINTS = 1 << 20
TAIL_QUANTILE = 1e-12
# below this cdf level the FFT grid is replaced by a zoomed convolution
GRID_CDF_FLOOR = 1e-8
ZOOM_CELLS = 1 << 13
_EXACT_CELLS = 32
# the global grid is not trusted within this many cells of the origin
_ORIGIN_CELLS = 64
_GG_EXACT_BELOW = 1e-3

_SAMPLE_CHUNK = 1 << 20


@dataclass(frozen=True)
class ScintillationModel:
    """Law of a single laser-aperture fading coefficient.

    Build instances with :meth:`lognormal`, :meth:`exponential` or
    :meth:`gamma_gamma` rather than the raw constructor.
    """

    kind: str
    si2: float | None = None
    lam: float = 1.0
    alpha: float | None = None
    beta: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown scintillation model {self.kind!r}; expected one of {KINDS}")
        if self.kind == LOGNORMAL and not (self.si2 is not None and self.si2 > 0):
            raise ValueError("lognormal model needs si2 > 0")
        if self.kind == EXPONENTIAL and not self.lam > 0:
            raise ValueError("exponential model needs lam > 0")
        if self.kind == GAMMA_GAMMA and not (self.alpha and self.beta and self.alpha > 0 and self.beta > 0):
            raise ValueError("gamma-gamma model needs alpha > 0 and beta > 0")

    @classmethod
    def lognormal(cls, si2: float) -> "ScintillationModel":
        return cls(LOGNORMAL, si2=float(si2))

    @classmethod
    def exponential(cls, lam: float = 1.0) -> "ScintillationModel":
        return cls(EXPONENTIAL, lam=float(lam))

    @classmethod
    def gamma_gamma(cls, alpha: float, beta: float) -> "ScintillationModel":
        return cls(GAMMA_GAMMA, alpha=float(alpha), beta=float(beta))

    # lognormal parameters of log(Ht)
    @property
    def mu(self) -> float:
        return -math.log1p(self.si2)

    @property
    def sigma2(self) -> float:
        return math.log1p(self.si2)

    @property
    def mean(self) -> float:
        """E[Ht]."""
        if self.kind == LOGNORMAL:
            return math.exp(self.mu + 0.5 * self.sigma2)
        if self.kind == EXPONENTIAL:
            return 1.0 / self.lam
        return 1.0

    @property
    def min_shape(self) -> float:
        """Power-law order of the cdf near zero (``F ~ h**k``); inf for lognormal."""
        if self.kind == EXPONENTIAL:
            return 1.0
        if self.kind == GAMMA_GAMMA:
            return min(self.alpha, self.beta)
        return math.inf

    def describe(self) -> dict:
        d = {"model": self.kind}
        if self.kind == LOGNORMAL:
            d["si2"] = self.si2
        elif self.kind == GAMMA_GAMMA:
            d["alpha"], d["beta"] = self.alpha, self.beta
        return d


def scintillation_index(model: ScintillationModel) -> float:
    """Var(Ht) / E[Ht]^2 from the model's closed form."""
    if model.kind == LOGNORMAL:
        return math.expm1(model.sigma2)
    if model.kind == EXPONENTIAL:
        return 1.0
    a, b = model.alpha, model.beta
    return 1.0 / a + 1.0 / b + 1.0 / (a * b)


def _gg_logpdf(h, a, b):
    h = np.asarray(h, dtype=float)
    x = 2.0 * np.sqrt(a * b * h)
    with np.errstate(divide="ignore", invalid="ignore"):
        lk = np.log(special.kve(a - b, x))
        # kve breaks down for huge arguments where it tends to sqrt(pi / 2x)
        lk = np.where(np.isfinite(lk) | (x < 1e3), lk, 0.5 * np.log(np.pi / (2.0 * x)))
        return (math.log(2.0) + 0.5 * (a + b) * math.log(a * b) - special.gammaln(a) - special.gammaln(b)
                + (0.5 * (a + b) - 1.0) * np.log(h) + lk - x)


def single_pdf(model: ScintillationModel, h):
    """Density of a single per-path coefficient ``Ht`` at ``h >= 0``."""
    h_arr = np.asarray(h, dtype=float)
    if np.any(h_arr < 0):
        raise ValueError("fading coefficients are non-negative; got h < 0")
    if model.kind == EXPONENTIAL:
        out = model.lam * np.exp(-model.lam * h_arr)
    elif model.kind == LOGNORMAL:
        s = math.sqrt(model.sigma2)
        with np.errstate(divide="ignore"):
            out = np.where(h_arr > 0, stats.lognorm.pdf(h_arr, s, scale=math.exp(model.mu)), 0.0)
    else:
        pos = h_arr > 0
        out = np.exp(_gg_logpdf(np.where(pos, h_arr, 1.0), model.alpha, model.beta))
        out = np.where(pos, out, _gg_pdf_at_zero(model.alpha, model.beta))
    return out if np.ndim(h) else float(out)


def _gg_pdf_at_zero(a, b):
    k = min(a, b)
    if k > 1:
        return 0.0
    if k < 1 or a == b:
        return math.inf
    # f(h) ~ (ab)^k Gamma(|a-b|) / (Gamma(a) Gamma(b)) h^(k-1) as h -> 0
    return a * b * math.gamma(abs(a - b)) / (math.gamma(a) * math.gamma(b))


def _gg_cdf_scalar(h: float, a: float, b: float, upper: bool = False) -> float:
    """P(XY <= h) with X ~ Gamma(a, 1/a), Y ~ Gamma(b, 1/b), by quadrature over log X."""
    if h <= 0:
        return 1.0 if upper else 0.0
    lx = math.log(h)
    cond = special.gammaincc if upper else special.gammainc

    log_norm = a * math.log(a) - math.lgamma(a)

    def f(u):
        x = math.exp(u)
        # h / x in log space: x underflows long before the integrand vanishes
        return math.exp(log_norm + a * u - a * x) * cond(b, b * math.exp(min(lx - u, 700.0)))

    lo = min(lx, 0.0) * 2.0 - 60.0 / a
    hi = math.log(stats.gamma.isf(1e-300, a, scale=1.0 / a))
    pts = [p for p in (lx, math.log(h) - 2.0, 0.0) if lo < p < hi]
    val = integrate(f, lo, hi, tol=1e-13, points=sorted(set(pts)))
    return float(min(max(val, 0.0), 1.0))


def single_cdf(model: ScintillationModel, h):
    """Cdf of ``Ht``; the gamma-gamma law is integrated numerically."""
    h_arr = np.asarray(h, dtype=float)
    if model.kind == EXPONENTIAL:
        out = -np.expm1(-model.lam * np.clip(h_arr, 0, None))
    elif model.kind == LOGNORMAL:
        with np.errstate(divide="ignore"):
            z = (np.log(np.clip(h_arr, 0, None)) - model.mu) / math.sqrt(model.sigma2)
        out = special.ndtr(z)
    else:
        out = np.vectorize(lambda v: _gg_cdf_scalar(v, model.alpha, model.beta), otypes=[float])(h_arr)
    return out if np.ndim(h) else float(out)


def single_sf(model: ScintillationModel, h: float) -> float:
    if model.kind == EXPONENTIAL:
        return math.exp(-model.lam * h)
    if model.kind == LOGNORMAL:
        return float(special.ndtr(-(math.log(h) - model.mu) / math.sqrt(model.sigma2)))
    return _gg_cdf_scalar(h, model.alpha, model.beta, upper=True)


def single_isf(model: ScintillationModel, p: float) -> float:
    """Upper quantile: the ``h`` with ``P(Ht > h) = p``."""
    if model.kind == EXPONENTIAL:
        return -math.log(p) / model.lam
    if model.kind == LOGNORMAL:
        return math.exp(model.mu - math.sqrt(model.sigma2) * float(special.ndtri(p)))
    lp = math.log(p)
    hi = 10.0
    while math.log(max(single_sf(model, hi), 1e-320)) > lp:
        hi *= 2.0
    return math.exp(find_root(lambda u: math.log(max(single_sf(model, math.exp(u)), 1e-320)) - lp,
                              -5.0, math.log(hi), tol=1e-10))


@dataclass(frozen=True)
class ChannelConfig:
    """Geometry and rate of one experiment.

    ``M`` lasers, ``N`` apertures, ``B`` fading blocks per codeword, ``Q``-ary
    PPM and a binary code of rate ``Rc``.
    """

    model: ScintillationModel
    M: int = 1
    N: int = 1
    B: int = 1
    Q: int = 2
    Rc: float = 0.5

    def __post_init__(self):
        for name in ("M", "N", "B"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v}")
        if self.Q < 2 or self.Q & (self.Q - 1):
            raise ValueError(f"Q must be a power of two >= 2, got {self.Q}")
        if not 0 < self.Rc <= 1:
            raise ValueError(f"Rc must lie in (0, 1], got {self.Rc}")

    @property
    def MN(self) -> int:
        return self.M * self.N

    @property
    def rate(self) -> float:
        """Target rate R in bits per channel use."""
        return self.Rc * math.log2(self.Q)

    @property
    def c(self) -> float:
        si2 = scintillation_index(self.model)
        return 1.0 / (self.model.mean * math.sqrt(1.0 + si2 / self.MN))

    @property
    def scale(self) -> float:
        """Factor mapping the raw path sum onto ``H``."""
        return self.c / self.MN

    @property
    def singleton(self) -> int:
        """Block-diversity factor ``1 + floor(B (1 - Rc))``."""
        return 1 + math.floor(self.B * (1.0 - self.Rc) + 1e-9)

    def describe(self) -> dict:
        d = self.model.describe()
        d.update(M=self.M, N=self.N, B=self.B, Q=self.Q, Rc=self.Rc)
        return d


def rng_stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for ``(seed, key...)``; chunking never changes the draws."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key)))


def sample_single(model: ScintillationModel, size, rng: np.random.Generator) -> np.ndarray:
    if model.kind == EXPONENTIAL:
        return rng.exponential(1.0 / model.lam, size)
    if model.kind == LOGNORMAL:
        return np.exp(model.mu + math.sqrt(model.sigma2) * rng.standard_normal(size))
    a, b = model.alpha, model.beta
    return rng.gamma(a, 1.0 / a, size) * rng.gamma(b, 1.0 / b, size)


def iter_combined(config: ChannelConfig, count: int, seed: int, stream: int = 0,
                  chunk: int = _SAMPLE_CHUNK) -> Iterator[np.ndarray]:
    """Yield draws of ``H`` in chunks; chunk ``i`` uses stream ``(stream, i)``."""
    done = 0
    i = 0
    while done < count:
        m = min(chunk, count - done)
        rng = rng_stream(seed, stream, i)
        ht = sample_single(config.model, (m, config.MN), rng)
        yield config.scale * ht.sum(axis=1)
        done += m
        i += 1


def sample_combined(config: ChannelConfig, count: int, seed: int, stream: int = 0) -> np.ndarray:
    """``count`` i.i.d. draws of the normalised combined coefficient ``H``."""
    if count < 1:
        raise ValueError("count must be >= 1")
    return np.concatenate(list(iter_combined(config, count, seed, stream)))


def _cell_masses(model: ScintillationModel, dx: float, cells: int) -> np.ndarray:
    """Probability of each cell ``[k dx, (k+1) dx)`` for ``k < cells``."""
    if model.kind == GAMMA_GAMMA:
        mid = (np.arange(cells) + 0.5) * dx
        out = single_pdf(model, mid) * dx
        # midpoints misjudge the mass near an h^(k-1) singularity or zero; integrate the first cells exactly
        k = min(cells, _EXACT_CELLS)
        edges = np.arange(k + 1) * dx
        out[:k] = np.diff([_gg_cdf_scalar(e, model.alpha, model.beta) for e in edges])
        return out
    edges = np.arange(cells + 1) * dx
    return np.diff(single_cdf(model, edges))


def left_tail_cdf(config: ChannelConfig, h: float, cells: int = ZOOM_CELLS) -> float:
    """P(H <= h) from a convolution restricted to ``[0, h]``.

    Summands are non-negative, so only their law on ``[0, h]`` matters; a local
    grid there keeps full relative precision far below the FFT noise floor of
    the global grid.
    """
    if h <= 0:
        return 0.0
    n = config.MN
    s = h / config.scale
    if n == 1:
        return float(single_cdf(config.model, s))
    dx = s / cells
    m = _cell_masses(config.model, dx, cells)
    peak = m.max()
    if peak <= 0:
        return 0.0
    out = lattice_power(m / peak, n)
    # lattice point j sits at n*dx/2 + j*dx; spread it over one cell
    pos = n * 0.5 + np.arange(out.size)
    frac = np.clip(cells - (pos - 0.5), 0.0, 1.0)
    tot = float(np.dot(out, frac))
    if tot <= 0:
        return 0.0
    return math.exp(n * math.log(peak) + math.log(tot))


@dataclass(frozen=True)
class CombinedFadingDistribution:
    """Numerical pdf/cdf of ``H`` on a uniform grid plus exact tails where available."""

    pdf: GridFunction
    cdf: GridFunction
    model: ScintillationModel
    M: int
    N: int

    @property
    def config(self) -> ChannelConfig:
        return ChannelConfig(self.model, self.M, self.N)

    @property
    def MN(self) -> int:
        return self.M * self.N

    def second_moment(self) -> float:
        return self.pdf.moment(2)

    def _theta(self) -> float:
        # exponential case: H ~ Gamma(MN, theta)
        n = self.MN
        return 1.0 / math.sqrt(n * (n + 1.0))

    def _lognormal_h(self) -> tuple[float, float]:
        """(mu, sigma) of log H when MN = 1."""
        return self.model.mu + math.log(self.config.c), math.sqrt(self.model.sigma2)

    def cdf_at(self, h):
        """F_H(h), exact where a closed form exists and tail-accurate elsewhere."""
        scalar = np.ndim(h) == 0
        h = np.atleast_1d(np.asarray(h, dtype=float))
        out = np.empty_like(h)
        if self.model.kind == EXPONENTIAL:
            out[:] = special.gammainc(self.MN, np.clip(h, 0, None) / self._theta())
        elif self.model.kind == GAMMA_GAMMA and self.MN == 1:
            # quadrature per point is slow; keep it for the tail where the grid loses relative accuracy
            out[:] = self.cdf(h, left=0.0, right=1.0)
            tail = (out < _GG_EXACT_BELOW) & (h > 0)
            out[tail] = single_cdf(self.model, h[tail] / self.config.scale)
            out[h <= 0] = 0.0
        elif self.MN == 1:
            out[:] = single_cdf(self.model, np.clip(h, 0, None) / self.config.scale)
        else:
            out[:] = self.cdf(h, left=0.0, right=1.0)
            near_origin = h < self.cdf.x0 + _ORIGIN_CELLS * self.cdf.dx
            deep = ((out < GRID_CDF_FLOOR) | near_origin) & (h > 0)
            for i in np.flatnonzero(deep):
                out[i] = left_tail_cdf(self.config, float(h[i]))
        return float(out[0]) if scalar else out

    def quantile(self, p: float) -> float:
        """Smallest ``h`` with ``F_H(h) = p`` for ``0 < p < 1``."""
        if not 0 < p < 1:
            raise ValueError("p must lie in (0, 1)")
        if self.model.kind == EXPONENTIAL:
            return float(special.gammaincinv(self.MN, p)) * self._theta()
        if self.model.kind == LOGNORMAL and self.MN == 1:
            mu, s = self._lognormal_h()
            return math.exp(mu + s * float(special.ndtri(p)))
        lp = math.log(p)

        def g(u):
            v = self.cdf_at(math.exp(u))
            return (math.log(v) if v > 0 else -1e300) - lp

        hi = math.log(max(self.cdf.x_max, 1.0))
        lo = -2.0
        while g(lo) > 0:
            lo -= 2.0
        return math.exp(find_root(g, lo, hi, tol=1e-12))

    @cached_property
    def _tail_inv_sq(self) -> GridFunction:
        # reverse cumulative integral of f(h)/h^2 on the pdf nodes
        x = self.pdf.x
        g = self.pdf.values / x**2
        seg = 0.5 * (g[1:] + g[:-1]) * self.pdf.dx
        rev = np.concatenate([np.cumsum(seg[::-1])[::-1], [0.0]])
        return GridFunction(self.pdf.x0, self.pdf.dx, rev)

    def inv_second_moment_finite(self) -> bool:
        """Whether E[H^-2] < inf, decided from the small-h power law of the sum."""
        k = self.model.min_shape
        return math.isinf(k) or self.MN * k > 2

    def inv_second_moment(self) -> float:
        """E[H^-2], the integral of f_H(h)/h^2 over (0, inf)."""
        if not self.inv_second_moment_finite():
            return math.inf
        n = self.MN
        if self.model.kind == EXPONENTIAL:
            return n * (n + 1.0) / ((n - 1.0) * (n - 2.0))
        if n == 1 and self.model.kind == LOGNORMAL:
            mu, s = self._lognormal_h()
            return math.exp(-2.0 * mu + 2.0 * s * s)
        if n == 1:
            a, b = self.model.alpha, self.model.beta
            return (1.0 + scintillation_index(self.model)) * (a * b) ** 2 / ((a - 1) * (a - 2) * (b - 1) * (b - 2))
        g = self._tail_inv_sq
        x0 = self.pdf.x0
        return float(g.values[0] + 0.5 * self.pdf.values[0] / x0)

    def tail_inv_second_moment(self, nu: float) -> float:
        """Integral of f_H(h)/h^2 over (nu, inf)."""
        if nu <= 0:
            return self.inv_second_moment()
        n = self.MN
        kind = self.model.kind
        if kind == EXPONENTIAL:
            th = self._theta()
            x = nu / th
            if n > 2:
                tail = special.gammaincc(n - 2, x) / ((n - 1.0) * (n - 2.0))
            elif n == 2:
                tail = special.exp1(x)
            else:
                tail = special.expn(2, x) / x
            return float(tail / th**2)
        if n == 1 and kind == LOGNORMAL:
            mu, s = self._lognormal_h()
            z = (math.log(nu) - mu + 2.0 * s * s) / s
            return math.exp(-2.0 * mu + 2.0 * s * s) * float(special.ndtr(-z))
        if n == 1:
            sc = self.config.scale
            m = self.model

            def f(u):
                return float(single_pdf(m, math.exp(u) / sc)) / sc * math.exp(-u)

            lo = math.log(nu)
            # beyond the 1e-300 upper quantile the integrand is negligible
            hi = math.log(sc * single_isf(m, 1e-300))
            if lo >= hi:
                return 0.0
            return integrate(f, lo, hi, tol=1e-12)
        g = self._tail_inv_sq
        if nu < self.pdf.x0:
            return self.inv_second_moment() if self.inv_second_moment_finite() else float(g.values[0])
        return float(g(nu, right=0.0))


def _grid_upper(model: ScintillationModel) -> float:
    return single_isf(model, TAIL_QUANTILE)


def combined_distribution(config: ChannelConfig, points: int = FFT_POINTS) -> CombinedFadingDistribution:
    """Pdf and cdf of ``H`` for ``config.M`` x ``config.N`` paths.

    The single-path law is discretised into cell masses on ``[0, q]`` (``q`` its
    ``1 - 1e-12`` quantile), raised to the ``MN``-th power in the Fourier domain
    and rescaled by ``c / MN``.
    """
    n = config.MN
    q = _grid_upper(config.model)
    dx = n * q / points
    cells = max(2, points // n)
    masses = _cell_masses(config.model, dx, cells)
    single = GridFunction(0.5 * dx, dx, masses / dx)
    summed = nfold_convolve(single, n)
    sc = config.scale
    pdf = GridFunction(summed.x0 * sc, dx * sc, summed.values / sc)
    cum = np.concatenate([[0.0], np.cumsum(summed.values * dx)])
    cum = np.minimum(cum / cum[-1], 1.0)
    cdf = GridFunction((summed.x0 - 0.5 * dx) * sc, dx * sc, cum)
    return CombinedFadingDistribution(pdf=pdf, cdf=cdf, model=config.model, M=config.M, N=config.N)


@lru_cache(maxsize=32)
def _cached_distribution(model: ScintillationModel, M: int, N: int) -> CombinedFadingDistribution:
    return combined_distribution(ChannelConfig(model, M, N))


def get_distribution(config: ChannelConfig) -> CombinedFadingDistribution:
    """Memoised ``combined_distribution``; only the model and ``M``, ``N`` matter."""
    return _cached_distribution(config.model, config.M, config.N)
