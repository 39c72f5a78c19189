"""Numerical kernels: bracketed root finding, quadrature and FFT density convolution."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate as _spi
from scipy import optimize as _spo


class BracketError(ValueError):
    """Raised when a root finder is handed an interval without a sign change."""


class NonFiniteIntegrandError(ArithmeticError):
    """Raised when an integrand returns NaN or inf inside the integration range."""


class GridTooShortError(ValueError):
    """Raised when a convolution grid cannot hold enough of the output mass."""


@dataclass(frozen=True)
class GridFunction:
    """A function sampled on the uniform grid ``x0 + k * dx``.

    Used for pdfs and cdfs of fading coefficients and for anything else
    tabulated on an evenly spaced axis.
    """

    x0: float
    dx: float
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1 or vals.size == 0:
            raise ValueError("values must be a non-empty 1-D sequence")
        if not self.dx > 0:
            raise ValueError(f"dx must be positive, got {self.dx}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def x(self) -> np.ndarray:
        return self.x0 + self.dx * np.arange(self.values.size)

    @property
    def x_max(self) -> float:
        return self.x0 + self.dx * (self.values.size - 1)

    def __len__(self):
        return self.values.size

    def __call__(self, x, left=0.0, right=None):
        """Linear interpolation; ``left``/``right`` apply outside the grid."""
        right = self.values[-1] if right is None else right
        return np.interp(x, self.x, self.values, left=left, right=right)

    def trapz(self) -> float:
        return float(np.trapezoid(self.values, dx=self.dx))

    def moment(self, k: float) -> float:
        return float(np.trapezoid(self.values * self.x**k, dx=self.dx))

    def is_pdf(self, tol: float = 1e-4) -> bool:
        return bool(np.all(self.values >= 0) and abs(self.trapz() - 1.0) <= tol)

    def is_cdf(self, tol: float = 1e-6) -> bool:
        v = self.values
        return bool(np.all(np.diff(v) >= 0) and v[0] <= tol and v[-1] >= 1 - tol)


def find_root(f: Callable[[float], float], lo: float, hi: float, tol: float = 1e-12) -> float:
    """Root of ``f`` on ``[lo, hi]``.

    Brent's method: bisection steps with secant/inverse-quadratic acceleration.
    ``tol`` bounds the final bracket width relative to ``max(1, |x|)``.
    """
    flo, fhi = f(lo), f(hi)
    if flo == 0:
        return float(lo)
    if fhi == 0:
        return float(hi)
    if not (np.isfinite(flo) and np.isfinite(fhi)):
        raise BracketError(f"non-finite endpoint values f({lo})={flo}, f({hi})={fhi}")
    if np.sign(flo) == np.sign(fhi):
        raise BracketError(f"no sign change on [{lo}, {hi}]: f(lo)={flo:.6g}, f(hi)={fhi:.6g}")
    return float(_spo.brentq(f, lo, hi, xtol=tol, rtol=max(tol, 4 * np.finfo(float).eps), maxiter=500))


def find_root_vec(f: Callable[[np.ndarray], np.ndarray], lo, hi, tol: float = 1e-13, max_iter: int = 200) -> np.ndarray:
    """Elementwise bisection for a batch of independent monotone equations.

    ``f(x)[i]`` must change sign between ``lo[i]`` and ``hi[i]``.
    """
    lo = np.array(lo, dtype=float, copy=True)
    hi = np.array(hi, dtype=float, copy=True)
    lo, hi = np.broadcast_arrays(lo, hi)
    lo, hi = lo.copy(), hi.copy()
    flo = f(lo)
    fhi = f(hi)
    bad = np.sign(flo) * np.sign(fhi) > 0
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise BracketError(f"no sign change for element {i} on [{lo[i]}, {hi[i]}]")
    rising = fhi >= flo
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        go_right = (fm < 0) == rising
        lo = np.where(go_right, mid, lo)
        hi = np.where(go_right, hi, mid)
        if np.all(hi - lo <= tol * np.maximum(1.0, np.abs(mid))):
            break
    return 0.5 * (lo + hi)


def _checked(f):
    def g(x):
        y = f(x)
        if not math.isfinite(y):
            raise NonFiniteIntegrandError(f"integrand is {y} at x={x!r}")
        return y
    return g


def integrate(f: Callable[[float], float], a: float, b: float = math.inf, tol: float = 1e-10,
              points=None) -> float:
    """Adaptive quadrature of ``f`` over ``[a, b]``; ``b`` may be ``inf``.

    Semi-infinite ranges are mapped onto ``[0, 1)`` with ``x = a + t / (1 - t)``.
    """
    g = _checked(f)
    if math.isinf(b):
        def h(t):
            if t >= 1.0:
                return 0.0
            u = 1.0 - t
            return g(a + t / u) / (u * u)
        pts = None
        if points is not None:
            pts = [(p - a) / (1.0 + p - a) for p in points if p > a]
        val, _ = _spi.quad(h, 0.0, 1.0, epsabs=tol, epsrel=tol, limit=500, points=pts)
        return float(val)
    val, _ = _spi.quad(g, a, b, epsabs=tol, epsrel=tol, limit=500, points=points)
    return float(val)


def nfold_convolve(pdf: GridFunction, n: int, mass_tol: float = 1e-10) -> GridFunction:
    """Density of the sum of ``n`` i.i.d. variables with density ``pdf``.

    The input is treated as point masses ``values * dx`` at the grid nodes, so
    the output lives on a grid with origin ``n * x0`` and the same step.
    The characteristic function is taken to the ``n``-th power in one FFT pass.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    pmf = pdf.values * pdf.dx
    total = pmf.sum()
    # a density that has not decayed by the grid end has lost tail mass
    edge = max(1, pmf.size // 100)
    if n * pmf[-edge:].sum() / total > mass_tol:
        raise GridTooShortError(
            f"{pmf[-edge:].sum() / total:.3g} of the mass sits in the last {edge} cells; use a longer grid")
    if n == 1:
        return pdf
    out = lattice_power(pmf / total, n)
    return GridFunction(n * pdf.x0, pdf.dx, out / (out.sum() * pdf.dx))


def lattice_power(pmf: np.ndarray, n: int) -> np.ndarray:
    """``n``-fold self-convolution of a mass vector, full length ``n*(len-1)+1``."""
    pmf = np.asarray(pmf, dtype=float)
    if n == 1:
        return pmf.copy()
    out_len = n * (pmf.size - 1) + 1
    nfft = 1 << int(math.ceil(math.log2(out_len)))
    out = np.fft.irfft(np.fft.rfft(pmf, nfft) ** n, nfft)[:out_len]
    return np.clip(out, 0.0, None, out=out)
