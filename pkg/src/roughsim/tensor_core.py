"""Dense tensor primitives shared by every network backend.

Plain numpy arrays are the tensor carrier; this module owns the contraction,
factorization, truncation and Krylov-exponential kernels so the state and
evolution code never touches BLAS directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg


class ShapeMismatch(ValueError):
    """Contracted legs disagree in extent, or axes are out of range."""


class FactorizationError(RuntimeError):
    """QR/SVD failed to converge on both driver routes."""


class NoConvergence(RuntimeError):
    """Krylov exponential did not reach tolerance within m_max iterations."""


class TooLarge(ValueError):
    """Requested dense object exceeds the supported size."""


@dataclass(frozen=True)
class TruncationSpec:
    """Bond truncation policy.

    chi_max: hard cap on the kept rank (>= 1).
    cutoff: discarded-weight threshold, relative to the total spectral weight.
        0 drops only exact zeros.
    degeneracy_tol: relative gap below which neighbouring singular values are
        treated as one degenerate group; a cut never splits such a group
        (shrinks the kept rank instead, unless that would empty it).
    """

    chi_max: int
    cutoff: float = 0.0
    degeneracy_tol: float = 1e-12

    def __post_init__(self):
        if self.chi_max < 1:
            raise ValueError(f"chi_max must be >= 1, got {self.chi_max}")
        if self.cutoff < 0:
            raise ValueError(f"cutoff must be >= 0, got {self.cutoff}")


def contract(a: np.ndarray, b: np.ndarray, axes) -> np.ndarray:
    """tensordot with extent checking; axes = (axes_a, axes_b)."""
    axes_a, axes_b = axes
    axes_a = (axes_a,) if np.isscalar(axes_a) else tuple(axes_a)
    axes_b = (axes_b,) if np.isscalar(axes_b) else tuple(axes_b)
    if len(axes_a) != len(axes_b):
        raise ShapeMismatch(f"axis lists differ in length: {axes_a} vs {axes_b}")
    for ax_a, ax_b in zip(axes_a, axes_b):
        if not (-a.ndim <= ax_a < a.ndim) or not (-b.ndim <= ax_b < b.ndim):
            raise ShapeMismatch(f"axis out of range: {ax_a}/{a.ndim}, {ax_b}/{b.ndim}")
        if a.shape[ax_a] != b.shape[ax_b]:
            raise ShapeMismatch(
                f"leg extents differ: a.shape[{ax_a}]={a.shape[ax_a]} "
                f"b.shape[{ax_b}]={b.shape[ax_b]}"
            )
    return np.tensordot(a, b, (axes_a, axes_b))


def qr_isometrize(t: np.ndarray, kept_axes) -> tuple[np.ndarray, np.ndarray]:
    """Split t = Q . R with Q an isometry over the kept axes.

    Q carries the kept axes (original relative order) plus a new bond last;
    R carries (new bond, removed axes...). Q^dagger Q = identity on the bond.
    """
    kept_axes = tuple(ax % t.ndim for ax in kept_axes)
    if len(set(kept_axes)) != len(kept_axes):
        raise ShapeMismatch(f"duplicate axes in {kept_axes}")
    rest = tuple(ax for ax in range(t.ndim) if ax not in kept_axes)
    if not kept_axes or not rest:
        raise ValueError("qr_isometrize needs kept and removed axes on both sides")
    perm = kept_axes + rest
    kept_shape = tuple(t.shape[ax] for ax in kept_axes)
    rest_shape = tuple(t.shape[ax] for ax in rest)
    mat = t.transpose(perm).reshape(int(np.prod(kept_shape, dtype=np.int64)), -1)
    try:
        q, r = np.linalg.qr(mat, mode="reduced")
    except np.linalg.LinAlgError as exc:  # pragma: no cover - numpy qr is robust
        raise FactorizationError(f"qr failed: {exc}") from exc
    k = q.shape[1]
    return q.reshape(kept_shape + (k,)), r.reshape((k,) + rest_shape)


def _kept_rank(s: np.ndarray, spec: TruncationSpec) -> int:
    """Rank kept by cutoff + chi_max + degeneracy rules. s descending."""
    p = s.astype(float) ** 2
    total = p.sum()
    if total == 0.0:
        return 1
    # smallest rank whose discarded tail stays within the cutoff
    tail = np.concatenate([np.cumsum(p[::-1])[::-1][1:], [0.0]])  # tail[k-1] = sum p[k:]
    ok = np.nonzero(tail <= spec.cutoff * total)[0]
    k = int(ok[0]) + 1 if len(ok) else len(s)
    k = min(k, spec.chi_max, len(s))
    k0 = k
    scale = s[0] if s[0] > 0 else 1.0
    while 0 < k < len(s) and abs(s[k - 1] - s[k]) <= spec.degeneracy_tol * scale:
        k -= 1
    if k == 0:
        k = k0  # an all-degenerate front: the cap wins over the pair rule
    return k


def svd_split(
    t: np.ndarray, left_axes, spec: TruncationSpec
) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    """Truncated SVD of t over the given bipartition.

    Returns (U, s, Vh, discarded) with U legs (left..., bond), Vh legs
    (bond, right...), s the kept singular values and discarded the dropped
    spectral weight relative to the total.
    """
    left_axes = tuple(ax % t.ndim for ax in left_axes)
    right_axes = tuple(ax for ax in range(t.ndim) if ax not in left_axes)
    if not left_axes or not right_axes:
        raise ShapeMismatch("bipartition must leave legs on both sides")
    left_shape = tuple(t.shape[ax] for ax in left_axes)
    right_shape = tuple(t.shape[ax] for ax in right_axes)
    mat = t.transpose(left_axes + right_axes).reshape(
        int(np.prod(left_shape, dtype=np.int64)), -1
    )
    try:
        u, s, vh = np.linalg.svd(mat, full_matrices=False)
    except np.linalg.LinAlgError:
        try:
            u, s, vh = scipy.linalg.svd(mat, full_matrices=False, lapack_driver="gesvd")
        except Exception as exc:
            raise FactorizationError(f"svd failed on both drivers: {exc}") from exc
    k = _kept_rank(s, spec)
    p = s.astype(float) ** 2
    total = p.sum()
    discarded = float(p[k:].sum() / total) if total > 0 else 0.0
    return (
        u[:, :k].reshape(left_shape + (k,)),
        s[:k].copy(),
        vh[:k].reshape((k,) + right_shape),
        discarded,
    )


def entropy_from_spectrum(s: np.ndarray) -> float:
    """Von Neumann entropy (nats) of a Schmidt spectrum.

    The squared spectrum is renormalized, so mildly unnormalized inputs are
    accepted; exact zeros are skipped.
    """
    p = np.asarray(s, dtype=float) ** 2
    total = p.sum()
    if total <= 0:
        raise ValueError("spectrum has no weight")
    p = p[p > 0] / total
    return float(-np.sum(p * np.log(p)))


def krylov_expm_apply(
    matvec,
    v: np.ndarray,
    tau: complex,
    m_max: int = 30,
    tol: float = 1e-12,
) -> np.ndarray:
    """Return exp(tau * A) v for Hermitian A given as matvec.

    Lanczos with full reorthogonalization; the tridiagonal exponential is done
    per iteration and the run stops on the standard residual estimate plus a
    consecutive-agreement check. Purely imaginary tau preserves the norm of v
    exactly (unitary on the Krylov space). Like every Krylov exponential, the
    a-posteriori estimate assumes |tau| * spread(A) is moderate; callers that
    integrate stiff decay must substep. Raises NoConvergence if m_max
    iterations do not reach tol.
    """
    shape = v.shape
    v = np.ravel(v)
    norm0 = np.linalg.norm(v)
    if norm0 == 0:
        raise ValueError("zero starting vector")
    if tau == 0:
        return v.copy().reshape(shape)

    basis = [v / norm0]
    alphas: list[float] = []
    betas: list[float] = []
    w = np.ravel(matvec(basis[0].reshape(shape)))
    a = np.vdot(basis[0], w).real
    alphas.append(a)
    w = w - a * basis[0]
    for j in range(1, m_max + 1):
        b = np.linalg.norm(w)
        # invariant subspace: the exponential is exact in the current basis
        if b <= 1e-14 * max(1.0, abs(alphas[0])):
            y = _expm_tridiag(np.array(alphas), np.array(betas), tau)
            out = norm0 * np.asarray(basis).T @ y
            return out.reshape(shape)
        betas.append(b)
        vec = w / b
        # full reorthogonalization, cheap next to the matvec
        for u in basis:
            vec -= np.vdot(u, vec) * u
        vec /= np.linalg.norm(vec)
        basis.append(vec)
        w = np.ravel(matvec(vec.reshape(shape)))
        a = np.vdot(vec, w).real
        alphas.append(a)
        w = w - a * vec - b * basis[-2]
        y_prev = y if j > 1 else None
        y = _expm_tridiag(np.array(alphas), np.array(betas), tau)
        # the residual estimate can pass through accidental zeros, so also
        # require consecutive coefficient agreement before accepting
        if y_prev is not None:
            delta = np.linalg.norm(y[:-1] - y_prev) + abs(y[-1])
            if b * abs(y[-1]) <= tol and delta <= 10.0 * tol:
                out = norm0 * np.asarray(basis).T @ y
                return out.reshape(shape)
    raise NoConvergence(f"no convergence within m_max={m_max} (tol={tol})")


def _expm_tridiag(alphas: np.ndarray, betas: np.ndarray, tau: complex) -> np.ndarray:
    """exp(tau T) e1 for the real symmetric tridiagonal (alphas, betas)."""
    if len(alphas) == 1:
        return np.array([np.exp(tau * alphas[0])])
    lam, u = scipy.linalg.eigh_tridiagonal(alphas, betas)
    return u @ (np.exp(tau * lam) * u[0].conj())
