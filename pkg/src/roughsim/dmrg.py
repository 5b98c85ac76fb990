"""Ground states of the height chain and the fits built on top of them.

Two-site sweeps over the chain-operator form from ``sos_mpo``, the vortex
correlator and kink order parameter on the optimized state, exponential
correlation-length extraction, and the essential-singularity fit that
locates the roughening field from a table of xi(g).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from .models import KinkSpec, SOSParams, kink_operator, sos_mpo
from .network import MPSState, mps_from_tensors
from .tensor_core import TruncationSpec, svd_split
from .timeseries import ScanResult

# below this size the effective two-site problem is assembled densely
_DENSE_EIG_CAP = 512


class NotConverged(RuntimeError):
    """Sweep budget exhausted; ``result`` still holds the best state."""

    def __init__(self, message: str, result: "GroundStateResult"):
        super().__init__(message)
        self.result = result


class FitDegenerate(ValueError):
    """The data cannot constrain the requested fit parameters."""


# -- operator environments -------------------------------------------------
#
# Chain tensors are kept as (left, phys, right); operator tensors as
# (left, right, out, in).  A left environment carries (w, bra, ket) for
# the block strictly left of a site, a right environment the mirror.


def _left_update(env, a, w):
    t = np.tensordot(env, a, [[2], [0]])
    t = np.tensordot(t, w, [[0, 2], [0, 3]])
    return np.tensordot(t, a.conj(), [[0, 3], [0, 1]]).transpose(1, 2, 0)


def _right_update(env, a, w):
    t = np.tensordot(a, env, [[2], [2]])
    t = np.tensordot(w, t, [[1, 3], [2, 1]])
    return np.tensordot(a.conj(), t, [[1, 2], [1, 3]]).transpose(1, 0, 2)


def _apply_two_site(theta, left, w1, w2, right):
    t = np.tensordot(left, theta, [[2], [0]])
    t = np.tensordot(t, w1, [[0, 2], [0, 3]])
    t = np.tensordot(t, w2, [[3, 1], [0, 3]])
    return np.tensordot(t, right, [[3, 1], [0, 2]])


def _dense_two_site(left, w1, w2, right):
    m1 = np.tensordot(left, w1, [[0], [0]])   # (bra, ket, wr, out, in)
    m2 = np.tensordot(w2, right, [[1], [0]])  # (wl, out, in, bra, ket)
    h = np.tensordot(m1, m2, [[2], [0]])      # (a, b, o1, i1, o2, i2, c, d)
    h = h.transpose(0, 2, 4, 6, 1, 3, 5, 7)
    n = h.shape[0] * h.shape[1] * h.shape[2] * h.shape[3]
    return h.reshape(n, n)


def _solve_local(theta, left, w1, w2, right, tol):
    if theta.size <= _DENSE_EIG_CAP:
        h = _dense_two_site(left, w1, w2, right)
        vals, vecs = np.linalg.eigh(h)
        return float(vals[0]), vecs[:, 0].reshape(theta.shape)
    shape = theta.shape

    def mv(x):
        return _apply_two_site(x.reshape(shape), left, w1, w2, right).ravel()

    op = spla.LinearOperator((theta.size, theta.size), matvec=mv, dtype=theta.dtype)
    vals, vecs = spla.eigsh(op, k=1, which="SA", v0=theta.ravel(), tol=tol)
    return float(vals[0]), vecs[:, 0].reshape(shape)


def _check_mpo(mpo):
    if len(mpo) < 2:
        raise ValueError("chain operator needs at least two sites")
    if mpo[0].shape[0] != 1 or mpo[-1].shape[1] != 1:
        raise ValueError("end operator tensors must carry dummy bonds of size 1")
    for i, w in enumerate(mpo):
        if w.ndim != 4 or w.shape[2] != w.shape[3]:
            raise ValueError(f"operator tensor {i} is not (left, right, out, in)")
        if i and mpo[i - 1].shape[1] != w.shape[0]:
            raise ValueError(f"operator bond mismatch between sites {i - 1} and {i}")


def _product_seed(dims):
    tensors = []
    for d in dims:
        vec = np.zeros(d)
        vec[d // 2] = 1.0
        tensors.append(vec.reshape(1, d, 1))
    return tensors


def _mpo_expectation(tensors, mpo):
    env = np.ones((1, 1, 1))
    for a, w in zip(tensors, mpo):
        env = _left_update(env, a, w)
    return float(np.real(env[0, 0, 0]))


def _mpo_square_expectation(tensors, mpo):
    env = np.ones((1, 1, 1, 1))  # (w top, w bottom, bra, ket)
    for a, w in zip(tensors, mpo):
        t = np.tensordot(env, a, [[3], [0]])
        t = np.tensordot(t, w, [[1, 3], [0, 3]])
        t = np.tensordot(t, w, [[0, 4], [0, 3]])
        env = np.tensordot(t, a.conj(), [[0, 4], [0, 1]]).transpose(2, 1, 3, 0)
    return float(np.real(env[0, 0, 0, 0]))


@dataclass
class GroundStateResult:
    """Variational ground state plus its convergence record."""

    state: MPSState
    energy: float
    energy_density: float
    kink: float
    variance: float
    energies: np.ndarray
    truncation_weights: np.ndarray
    converged: bool
    sweeps: int


def dmrg_ground_state(
    mpo,
    chi: int,
    max_sweeps: int = 16,
    energy_tol: float = 1e-10,
    seed=None,
    cutoff: float = 1e-12,
    kink: KinkSpec | None = None,
) -> GroundStateResult:
    """Two-site variational ground-state search over a chain operator.

    Sweeps alternate left-to-right and right-to-left; each bond solves the
    effective two-site eigenproblem (dense below 512, Lanczos above) and
    splits back with the bond cap ``chi``.  The sweep energy is the last
    local eigenvalue, so the history is variationally non-increasing up to
    truncation noise.  Raises NotConverged, with the result attached, when
    the inter-sweep change never drops below ``energy_tol``.

    Unseeded searches start from the middle-height product state, which
    pins the symmetric member of the degenerate zero-field manifold.
    """
    _check_mpo(mpo)
    dims = [w.shape[2] for w in mpo]
    n = len(dims)
    trunc = TruncationSpec(chi_max=chi, cutoff=cutoff)
    if seed is None:
        tensors = _product_seed(dims)
    else:
        tensors = [np.array(t, copy=True) for t in seed]
        if [t.shape[1] for t in tensors] != dims:
            raise ValueError("seed physical dimensions do not match the operator")
    # right-canonicalize the seed so the first sweep starts from site 0
    for i in range(n - 1, 0, -1):
        t = tensors[i]
        q, r = np.linalg.qr(t.reshape(t.shape[0], -1).T)
        tensors[i] = q.T.reshape(-1, t.shape[1], t.shape[2])
        tensors[i - 1] = np.tensordot(tensors[i - 1], r.T, [[2], [0]])
    tensors[0] /= np.linalg.norm(tensors[0])

    left = [None] * n
    right = [None] * n
    left[0] = np.ones((1, 1, 1))
    right[n - 1] = np.ones((1, 1, 1))
    for i in range(n - 1, 1, -1):
        right[i - 1] = _right_update(right[i], tensors[i], mpo[i])

    lanczos_tol = max(energy_tol * 1e-3, 1e-13)
    energies = []
    weights = []
    converged = False
    for sweep in range(1, max_sweeps + 1):
        worst = 0.0
        for i in range(n - 1):
            theta = np.tensordot(tensors[i], tensors[i + 1], [[2], [0]])
            e, theta = _solve_local(
                theta, left[i], mpo[i], mpo[i + 1], right[i + 1], lanczos_tol
            )
            u, s, vh, disc = svd_split(theta, (0, 1), trunc)
            worst = max(worst, disc)
            tensors[i] = u
            tensors[i + 1] = (s[:, None, None] / np.linalg.norm(s)) * vh
            left[i + 1] = _left_update(left[i], tensors[i], mpo[i])
        for i in range(n - 2, -1, -1):
            theta = np.tensordot(tensors[i], tensors[i + 1], [[2], [0]])
            e, theta = _solve_local(
                theta, left[i], mpo[i], mpo[i + 1], right[i + 1], lanczos_tol
            )
            u, s, vh, disc = svd_split(theta, (0, 1), trunc)
            worst = max(worst, disc)
            tensors[i + 1] = vh
            tensors[i] = u * (s / np.linalg.norm(s))
            right[i] = _right_update(right[i + 1], tensors[i + 1], mpo[i + 1])
        energies.append(e)
        weights.append(worst)
        if sweep > 1 and abs(energies[-1] - energies[-2]) < energy_tol:
            converged = True
            break

    energy = _mpo_expectation(tensors, mpo)
    variance = _mpo_square_expectation(tensors, mpo) - energy**2
    state = mps_from_tensors(tensors, 0)
    result = GroundStateResult(
        state=state,
        energy=energy,
        energy_density=energy / n,
        kink=kink_operator(state, kink or KinkSpec(), model="SOS"),
        variance=variance,
        energies=np.array(energies),
        truncation_weights=np.array(weights),
        converged=converged,
        sweeps=len(energies),
    )
    if not converged:
        delta = abs(energies[-1] - energies[-2]) if len(energies) > 1 else np.inf
        raise NotConverged(
            f"energy change {delta:.3e} above {energy_tol:g} "
            f"after {len(energies)} sweeps",
            result,
        )
    return result


# -- correlators ------------------------------------------------------------


def vortex_correlator(state: MPSState, l_values, base: int = 0) -> np.ndarray:
    """Height-phase correlator <exp(-i n_base) exp(i n_(base+l))> per distance."""
    out = np.empty(len(l_values), dtype=complex)
    for k, l in enumerate(l_values):
        site = base + int(l)
        if not 0 <= site < state.length or not 0 <= base < state.length:
            raise ValueError(f"distance {l} from column {base} leaves the chain")
        if l == 0:
            out[k] = 1.0
            continue
        minus = np.diag(np.exp(-1j * np.arange(state.dims[base])))
        plus = np.diag(np.exp(1j * np.arange(state.dims[site])))
        out[k] = state.expect_product({base: minus, site: plus})
    return out


def _damped_gauss_newton(residual_jac, p0, admissible, max_iter=200):
    p = np.asarray(p0, dtype=float)
    r, jac = residual_jac(p)
    cost = 0.5 * float(r @ r)
    lam = 1e-3
    for _ in range(max_iter):
        grad = jac.T @ r
        hess = jac.T @ jac
        scale = np.diag(np.maximum(np.diag(hess), 1e-300))
        taken = None
        for _ in range(60):
            try:
                step = np.linalg.solve(hess + lam * scale, -grad)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            trial = p + step
            if not admissible(trial):
                lam *= 10.0
                continue
            r_new, jac_new = residual_jac(trial)
            cost_new = 0.5 * float(r_new @ r_new)
            if cost_new <= cost * (1.0 + 1e-14):
                taken = step
                p, r, jac, cost = trial, r_new, jac_new, cost_new
                lam = max(lam * 0.3, 1e-12)
                break
            lam *= 10.0
        if taken is None:
            break
        if np.linalg.norm(taken) <= 1e-13 * (1.0 + np.linalg.norm(p)):
            break
    return p, r


@dataclass
class CorrFit:
    """Exponential-plus-offset fit of a correlator decay."""

    xi: float
    amplitude: float
    offset: float
    residual_norm: float
    window: tuple[float, float]


def fit_correlation_length(l_values, c_values, window=None) -> CorrFit:
    """Least squares of C(l) = A exp(-l/xi) + C_inf over the given window.

    Complex input is projected onto its real part; reflection-symmetric
    states give real correlators anyway.  Flat data (spread below 1e-12)
    raises FitDegenerate since xi is then undefined.
    """
    l = np.asarray(l_values, dtype=float)
    c = np.real(np.asarray(c_values))
    if window is not None:
        keep = (l >= window[0]) & (l <= window[1])
        l, c = l[keep], c[keep]
    order = np.argsort(l)
    l, c = l[order], c[order]
    if l.size < 6:
        raise ValueError(f"need at least 6 distances inside the window, got {l.size}")
    scale = max(1.0, float(np.max(np.abs(c))))
    if np.max(c) - np.min(c) <= 1e-12 * scale:
        raise FitDegenerate("flat correlator: xi is undefined and the offset is the data")

    off0 = c[-1]
    amp0 = c[0] - off0
    if amp0 == 0.0:
        amp0 = np.max(c) - np.min(c)
    mid = l.size // 2
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = (c[0] - off0) / (c[mid] - off0)
    if np.isfinite(ratio) and ratio > 1.0:
        xi0 = (l[mid] - l[0]) / np.log(ratio)
    else:
        xi0 = (l[-1] - l[0]) / 3.0
    if not np.isfinite(xi0) or xi0 <= 0:
        xi0 = (l[-1] - l[0]) / 3.0

    def rj(p):
        a, xi, off = p
        decay = np.exp(-l / xi)
        res = a * decay + off - c
        jac = np.stack([decay, a * decay * l / xi**2, np.ones_like(l)], axis=1)
        return res, jac

    p, res = _damped_gauss_newton(
        rj, [amp0, xi0, off0], lambda q: np.isfinite(q).all() and q[1] > 0
    )
    if not np.isfinite(p).all() or p[1] <= 0:
        raise FitDegenerate("correlation-length fit did not separate from zero")
    return CorrFit(
        xi=float(p[1]),
        amplitude=float(p[0]),
        offset=float(p[2]),
        residual_norm=float(np.linalg.norm(res)),
        window=(float(l[0]), float(l[-1])),
    )


@dataclass
class BKTFit:
    """Essential-singularity fit xi(g) = xi_0 exp(B / sqrt(g_r - g))."""

    g_r: float
    b: float
    xi_0: float
    window: tuple[float, float]
    residual_norm: float
    residuals: np.ndarray
    g: np.ndarray
    log_xi: np.ndarray
    x_linear: np.ndarray  # 1/sqrt(g_r - g); log xi is linear in it


def fit_bkt(g_values, xi_values, window=None) -> BKTFit:
    """Locate the divergence field from a table of correlation lengths.

    The full table seeds the initial guess (the grid point under the
    steepest rise of log xi); the window then restricts which points the
    damped Gauss-Newton refinement actually fits.  Needs at least five
    window points and a strictly increasing xi(g).
    """
    g = np.asarray(g_values, dtype=float)
    xi = np.asarray(xi_values, dtype=float)
    order = np.argsort(g)
    g, xi = g[order], xi[order]
    if np.any(xi <= 0) or not np.isfinite(xi).all():
        raise ValueError("correlation lengths must be positive and finite")
    if window is None:
        window = (float(g[0]), float(g[-1]))
    keep = (g >= window[0]) & (g <= window[1])
    gw, yw = g[keep], np.log(xi[keep])
    if gw.size < 5:
        raise ValueError(f"need at least 5 points inside the window, got {gw.size}")
    if np.any(np.diff(xi) <= 0):
        raise FitDegenerate("xi(g) must increase toward the divergence")

    slopes = np.diff(np.log(xi)) / np.diff(g)
    g_star = g[int(np.argmax(slopes)) + 1]
    top = gw[-1]
    if g_star <= top:
        g_star = top + 0.5 * (gw[-1] - gw[-2])
    x0 = (g_star - gw) ** -0.5
    design = np.stack([np.ones_like(x0), x0], axis=1)
    intercept, slope = np.linalg.lstsq(design, yw, rcond=None)[0]
    b0 = max(slope, 1e-6)

    def rj(p):
        logxi0, b, gr = p
        dg = gr - gw
        x = dg**-0.5
        res = logxi0 + b * x - yw
        jac = np.stack([np.ones_like(x), x, -0.5 * b * dg**-1.5], axis=1)
        return res, jac

    p, res = _damped_gauss_newton(
        rj,
        [intercept, b0, g_star],
        lambda q: np.isfinite(q).all() and q[1] > 0 and q[2] > top,
    )
    if not np.isfinite(p).all() or p[1] <= 0 or p[2] <= top:
        raise FitDegenerate("divergence fit collapsed onto the data window")
    return BKTFit(
        g_r=float(p[2]),
        b=float(p[1]),
        xi_0=float(np.exp(p[0])),
        window=(float(window[0]), float(window[1])),
        residual_norm=float(np.linalg.norm(res)),
        residuals=res,
        g=gw,
        log_xi=yw,
        x_linear=(p[2] - gw) ** -0.5,
    )


# -- field scans ------------------------------------------------------------


def kink_scan(
    lx: int,
    g_values,
    n_max_values,
    chi: int,
    j: float = 1.0,
    max_sweeps: int = 16,
    energy_tol: float = 1e-10,
    progress=None,
) -> ScanResult:
    """Ground-state kink, energy density, and correlation length over a grid.

    Points run in ascending g per height cutoff, each warm-started from the
    previous field so the sweep count stays low; the first point uses the
    flat seed.  Energy-density derivatives come from centered differences
    on the g grid.  Unconverged points keep their best state and are
    flagged in the `converged` column instead of aborting the scan.
    """
    g_values = np.asarray(sorted(g_values), dtype=float)
    if g_values.size == 0 or len(n_max_values) == 0:
        raise ValueError("scan grid is empty")
    base = lx // 4
    distances = np.arange(1, lx - 2 * base)
    cols: dict[str, list] = {
        k: []
        for k in (
            "g", "n_max", "energy", "dE_dg", "d2E_dg2",
            "K", "xi", "xi_residual", "converged", "max_truncation",
        )
    }
    for n_max in n_max_values:
        seed = None
        dens = []
        for g in g_values:
            mpo = sos_mpo(SOSParams(lx=lx, n_max=n_max, g=g, j=j))
            try:
                res = dmrg_ground_state(
                    mpo, chi, max_sweeps=max_sweeps, energy_tol=energy_tol, seed=seed
                )
            except NotConverged as exc:
                res = exc.result
            seed = _chain_tensors(res.state)
            xi, xi_res = np.nan, np.nan
            if distances.size >= 6:
                c = vortex_correlator(res.state, distances, base=base)
                try:
                    fit = fit_correlation_length(distances, c)
                    xi, xi_res = fit.xi, fit.residual_norm
                except FitDegenerate:
                    pass
            dens.append(res.energy_density)
            cols["g"].append(g)
            cols["n_max"].append(n_max)
            cols["energy"].append(res.energy_density)
            cols["K"].append(res.kink)
            cols["xi"].append(xi)
            cols["xi_residual"].append(xi_res)
            cols["converged"].append(float(res.converged))
            cols["max_truncation"].append(float(res.truncation_weights[-1]))
            if progress is not None:
                progress({"g": g, "n_max": n_max, "K": res.kink, "xi": xi})
        dens = np.asarray(dens)
        if g_values.size > 1:
            first = np.gradient(dens, g_values)
            second = np.gradient(first, g_values)
        else:
            first = second = np.full(1, np.nan)
        cols["dE_dg"].extend(first)
        cols["d2E_dg2"].extend(second)
    table = {k: np.asarray(v, dtype=float) for k, v in cols.items()}
    return ScanResult(table, {"lx": lx, "chi": chi, "j": j})


def _chain_tensors(state: MPSState) -> list[np.ndarray]:
    """Back out (left, phys, right) arrays from a chain state."""
    n = state.length
    out = []
    for i in range(n):
        t = state.tensors[i]
        if i == 0:
            out.append(t.T[None, :, :])  # stored as (right, phys)
        elif i == n - 1:
            out.append(t[:, :, None])
        else:
            out.append(t.transpose(0, 2, 1))
    return out
