"""Thermal physics of the height interface in its classical limit.

Everything here reduces to the symmetric transfer matrix V[s, s'] =
q^|s - s'| on heights s in {1..M} with q = exp(-2 J / T): its closed-form
eigensystem via root brackets, twisted boundary form factors, the
end-to-end kink correlator in the eigenbasis (log-domain weights so chains
of 10^5+ columns do not underflow), the small-q asymptotic law, and the
crossover temperature where the correlator crosses one half.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import bisect

from .timeseries import ScanResult


class RootBracketFailure(RuntimeError):
    """A seeded root bracket held no sign change after adaptive splitting."""


class NoBracket(RuntimeError):
    """The kink correlator does not cross 1/2 inside the temperature bounds."""


@dataclass(frozen=True)
class TransferSpec:
    """One classical evaluation point."""

    q: float
    m: int
    lx: int
    alpha: float

    def __post_init__(self):
        if not 0.0 <= self.q < 1.0:
            raise ValueError(f"q must lie in [0, 1), got {self.q}")
        if self.m < 2:
            raise ValueError("local dimension m must be at least 2")
        if self.lx < 2:
            raise ValueError("chain length lx must be at least 2")
        # reflection symmetry folds larger twists back onto [0, pi]
        if not 0.0 <= self.alpha <= np.pi:
            raise ValueError(f"twist angle must lie in [0, pi], got {self.alpha}")


@dataclass
class EigenSystem:
    """Closed-form spectrum of the transfer matrix at one (q, m)."""

    q: float
    m: int
    theta: np.ndarray     # root angles, strictly increasing in (0, pi)
    lam: np.ndarray       # eigenvalues, descending; lam[0] is the largest
    psi: np.ndarray       # psi[n, s-1], rows orthonormal
    f: np.ndarray         # lam / lam[0]
    raw_norms: np.ndarray  # norms of the unnormalized eigenvector formula


def transfer_matrix(q: float, m: int) -> np.ndarray:
    """Symmetric positive matrix q^|s - s'| on m heights."""
    s = np.arange(m)
    return np.power(float(q), np.abs(s[:, None] - s[None, :]))


def _phase_residual(theta, q, m, n):
    # the root condition is Im{e^(i m theta) h(theta)} = 0 with
    # h = e^(i theta) + q^2 e^(-i theta) - 2q; h runs along the upper half
    # of an ellipse enclosing the origin, so m*theta + arg h is strictly
    # increasing from 0 to (m+1)pi and the nth root solves it equal to n pi
    re = (1.0 + q * q) * np.cos(theta) - 2.0 * q
    im = (1.0 - q * q) * np.sin(theta)
    return m * theta + np.arctan2(im, re) - n * np.pi


def _bracketed_root(q, m, n, lo, hi):
    floor, ceil = 1e-12, np.pi - 1e-12
    width = hi - lo
    while np.sign(_phase_residual(lo, q, m, n)) == np.sign(
        _phase_residual(hi, q, m, n)
    ):
        if lo <= floor and hi >= ceil:
            raise RootBracketFailure(f"root {n} not bracketed for q={q}, m={m}")
        lo, hi = max(floor, lo - width), min(ceil, hi + width)
        width *= 2.0
    return bisect(_phase_residual, lo, hi, args=(q, m, n), xtol=1e-13)


def analytic_eigenpairs(q: float, m: int) -> EigenSystem:
    """Spectrum from the root condition of the equivalent hopping chain.

    Brackets are seeded around the free-chain angles n pi / (m+1) and
    widened when a root has drifted outside (large q pushes them toward
    the band edges); each root refines by bisection to 1e-13.  Eigenvalues
    come out descending because they decrease monotonically in the angle.
    """
    if not 0.0 < q < 1.0:
        raise ValueError(f"closed-form eigenpairs need 0 < q < 1, got {q}")
    half = 0.5 * np.pi / (m + 1)
    seeds = np.arange(1, m + 1) * np.pi / (m + 1)
    theta = np.array(
        [
            _bracketed_root(q, m, n, seed - half, seed + half)
            for n, seed in enumerate(seeds, start=1)
        ]
    )
    if np.any(np.diff(theta) <= 0):
        raise RootBracketFailure("root angles failed to come out increasing")
    s = np.arange(1, m + 1)
    psi = np.sin(s[None, :] * theta[:, None]) - q * np.sin(
        (s[None, :] - 1) * theta[:, None]
    )
    norms = np.linalg.norm(psi, axis=1)
    lam = (1.0 - q * q) / (1.0 + q * q - 2.0 * q * np.cos(theta))
    return EigenSystem(
        q=q,
        m=m,
        theta=theta,
        lam=lam,
        psi=psi / norms[:, None],
        f=lam / lam[0],
        raw_norms=norms,
    )


def _dirichlet(x, m):
    """sin(m x / 2) / sin(x / 2) with a series fallback near the poles."""
    x = np.asarray(x, dtype=float)
    y = np.mod(x + np.pi, 2.0 * np.pi) - np.pi
    k = np.rint((x - y) / (2.0 * np.pi))
    sign = np.where((k * (m - 1)) % 2 == 0, 1.0, -1.0)
    small = np.abs(y) < 1e-6
    safe = np.where(small, 1.0, y)
    out = np.where(
        small,
        m * (1.0 - (m * m - 1.0) * y * y / 24.0),
        np.sin(safe * m / 2.0) / np.sin(safe / 2.0),
    )
    return sign * out


def form_factors(sys: EigenSystem, alpha: float) -> np.ndarray:
    """|c_n(alpha)|^2 of the twisted boundary vector, per eigenstate.

    Uses the closed form from the finite geometric sum; the normalization
    of the eigenvector formula divides back out.  alpha = 0 is allowed (it
    feeds the untwisted partition sum).
    """
    th, q, m = sys.theta, sys.q, sys.m
    gp = _dirichlet(th + alpha, m)
    gm = _dirichlet(th - alpha, m)
    edge = (
        np.cos(th * (m + 1))
        + q * q * np.cos(th * (m - 1))
        - 2.0 * q * np.cos(th * m)
    )
    c2 = (gp**2 + gm**2) / 4.0 * (1.0 + q * q - 2.0 * q * np.cos(th)) - (
        gp * gm / 2.0
    ) * edge
    return c2 / sys.raw_norms**2


def _kink_from_system(sys: EigenSystem, lx: int, alpha: float) -> float:
    logf = np.log(sys.lam) - np.log(sys.lam[0])
    w = (lx - 1) * logf
    keep = w > -690.0  # e^w below 1e-300 contributes nothing
    weights = np.exp(w[keep])
    num = float(weights @ form_factors(sys, alpha)[keep])
    den = float(weights @ form_factors(sys, 0.0)[keep])
    return num / den


def kink_end_to_end(spec: TransferSpec) -> float:
    """Twisted-to-untwisted partition ratio across the whole chain."""
    if spec.alpha == 0.0:
        return 1.0
    if spec.q == 0.0:
        return 1.0  # identity transfer matrix: heights never move
    return _kink_from_system(
        analytic_eigenpairs(spec.q, spec.m), spec.lx, spec.alpha
    )


def asymptotic_kink(q: float, alpha: float, lx: int, prefactor: bool = False) -> float:
    """Small-q closed form of the end-to-end kink correlator.

    The bare form is exp(-2 q (1 - cos alpha) lx); with ``prefactor`` the
    subleading amplitude and the 1/(1 + q^2) rate correction are kept.
    """
    if q >= 0.2:
        warnings.warn(
            f"asymptotic kink expects small q (< 0.2); got q={q:g}",
            stacklevel=2,
        )
    drop = 1.0 - np.cos(alpha)
    if not prefactor:
        return float(np.exp(-2.0 * q * drop * lx))
    amp = (1.0 + q * q - 2.0 * q * np.cos(alpha)) / (1.0 - q) ** 2
    return float(amp * np.exp(-2.0 * q / (1.0 + q * q) * drop * lx))


def crossover_temperature(
    lx: int,
    alpha: float = 1.0,
    mode: str = "numeric",
    m: int = 200,
    j: float = 1.0,
    t_bounds: tuple[float, float] = (0.05, 20.0),
    tol: float = 1e-6,
) -> float:
    """Temperature where the end-to-end kink correlator crosses one half.

    Numeric mode bisects K(T) - 1/2, which decreases monotonically in T;
    analytic mode evaluates the perturbative log law.  Both return the
    temperature in units of the coupling.
    """
    if lx < 2:
        raise ValueError("chain length lx must be at least 2")
    if mode == "analytic":
        arg = 2.0 * (1.0 - np.cos(alpha)) * lx / np.log(2.0)
        if arg <= 1.0:
            raise ValueError("log law undefined: chain too short for this angle")
        return float(j * 2.0 / np.log(arg))
    if mode != "numeric":
        raise ValueError(f"mode must be numeric or analytic, got {mode!r}")

    def excess(t):
        q = float(np.exp(-2.0 * j / t))
        return kink_end_to_end(TransferSpec(q=q, m=m, lx=lx, alpha=alpha)) - 0.5

    lo, hi = t_bounds
    if excess(hi) > 0.0:
        raise NoBracket(f"kink still above 1/2 at the upper bound T={hi}")
    if excess(lo) < 0.0:
        raise NoBracket(f"kink already below 1/2 at the lower bound T={lo}")
    return float(bisect(excess, lo, hi, xtol=tol))


def kink_temperature_scan(
    m: int,
    alpha: float,
    lx_values,
    t_values,
    j: float = 1.0,
) -> ScanResult:
    """Kink-vs-temperature table per chain length, plus crossover points.

    Eigen systems are shared across chain lengths at fixed temperature.
    The half-resolution column check (same kink at m and m//2) lands in
    the meta as ``m_convergence_max_diff``.
    """
    lx_values = [int(v) for v in lx_values]
    t_values = np.asarray(sorted(t_values), dtype=float)
    if not lx_values or t_values.size == 0:
        raise ValueError("scan grid is empty")
    if m < 4:
        raise ValueError("the half-resolution check needs m of at least 4")
    if np.any(t_values <= 0):
        raise ValueError("temperatures must be positive")
    systems = []
    for t in t_values:
        q = float(np.exp(-2.0 * j / t))
        if q == 0.0:
            # temperature so low the Boltzmann ratio underflows: frozen chain
            systems.append((q, None, None))
        else:
            systems.append(
                (q, analytic_eigenpairs(q, m), analytic_eigenpairs(q, m // 2))
            )
    cols: dict[str, list] = {
        k: []
        for k in (
            "lx", "T", "q", "m", "alpha",
            "K_exact", "K_asymptotic", "T_R_numeric", "T_R_analytic",
        )
    }
    worst_m_diff = 0.0
    for lx in lx_values:
        t_r_num = crossover_temperature(lx, alpha, "numeric", m=m, j=j)
        t_r_ana = crossover_temperature(lx, alpha, "analytic", j=j)
        for t, (q, sys_full, sys_half) in zip(t_values, systems):
            if sys_full is None:
                k_full = k_half = 1.0
            else:
                k_full = _kink_from_system(sys_full, lx, alpha)
                k_half = _kink_from_system(sys_half, lx, alpha)
            worst_m_diff = max(worst_m_diff, abs(k_full - k_half))
            with warnings.catch_warnings():
                # the asymptote is tabulated on the whole grid on purpose
                warnings.simplefilter("ignore")
                k_asym = asymptotic_kink(q, alpha, lx)
            cols["lx"].append(lx)
            cols["T"].append(t)
            cols["q"].append(q)
            cols["m"].append(m)
            cols["alpha"].append(alpha)
            cols["K_exact"].append(k_full)
            cols["K_asymptotic"].append(k_asym)
            cols["T_R_numeric"].append(t_r_num)
            cols["T_R_analytic"].append(t_r_ana)
    table = {k: np.asarray(v, dtype=float) for k, v in cols.items()}
    return ScanResult(
        table,
        {"m": m, "alpha": alpha, "j": j, "m_convergence_max_diff": worst_m_diff},
    )
