"""Geometry of symmetric positive definite (SPD) matrices.

Covariance matrices of full-rank multichannel signals live on the SPD
manifold.  Under the affine-invariant metric the distance between two
matrices is invariant to any congruence C -> A C A^T, which is what makes
it the natural geometry for comparing trial covariances recorded under
different (unknown) linear mixings.

All functions accept plain float64 numpy arrays.  Matrices are expected to
be symmetric; :func:`as_spd` is the validating constructor used at data
boundaries.  Stacked inputs of shape ``(n, d, d)`` are supported wherever
it is cheap to do so.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

from .exceptions import ConvergenceError, InputError, NumericalError, ValidationError

# Relative floor applied to eigenvalues before log / inverse powers, so a
# borderline-PD input (eigenvalue ~ rounding noise) does not blow up.
EIG_CLAMP_REL = 1e-14

# Construction-time symmetry tolerance, relative to the largest entry.
SYMMETRY_RTOL = 1e-12


def symmetrize(a: np.ndarray) -> np.ndarray:
    """(A + A^T)/2, also for stacks of matrices."""
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def as_spd(a, *, what: str = "matrix") -> np.ndarray:
    """Validate and return a float64 SPD matrix.

    The input is checked for symmetry (relative to its largest entry),
    symmetrized to absorb accumulated rounding, and its smallest eigenvalue
    must be strictly positive.  Raises :class:`ValidationError` otherwise.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValidationError(f"{what}: expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValidationError(f"{what}: non-finite entries")
    scale = np.abs(a).max()
    if scale == 0.0:
        raise ValidationError(f"{what}: zero matrix is not positive definite")
    asym = np.abs(a - a.T).max()
    if asym > SYMMETRY_RTOL * scale:
        raise ValidationError(
            f"{what}: asymmetric beyond tolerance (max |A-A^T| = {asym:.3e})"
        )
    a = symmetrize(a)
    w = np.linalg.eigvalsh(a)
    if w[0] <= 0.0:
        raise ValidationError(
            f"{what}: not positive definite (smallest eigenvalue {w[0]:.3e})"
        )
    return a


def _check_same_dim(c1: np.ndarray, c2: np.ndarray) -> None:
    if c1.shape[-1] != c2.shape[-1]:
        raise InputError(f"dimension mismatch: {c1.shape[-1]} vs {c2.shape[-1]}")


def _eigh(c: np.ndarray):
    try:
        w, u = np.linalg.eigh(c)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK breakdown
        raise NumericalError(f"eigendecomposition failed: {exc}") from exc
    return w, u


def spd_map(c: np.ndarray, fn, *, clamp: bool = False) -> np.ndarray:
    """Apply a scalar function to an SPD matrix through its eigenvalues.

    ``fn`` receives the eigenvalue array and must return an array of the
    same shape (e.g. ``np.log``, ``np.sqrt``, ``lambda w: w ** p``).  With
    ``clamp=True`` eigenvalues are floored at a small multiple of the trace
    first, which keeps log and inverse powers finite on borderline inputs.
    Works on stacks ``(n, d, d)`` as well.
    """
    c = np.asarray(c, dtype=np.float64)
    if not np.all(np.isfinite(c)):
        raise InputError("spd_map: non-finite entries in input")
    w, u = _eigh(c)
    if clamp:
        tr = np.trace(c, axis1=-2, axis2=-1)
        floor = EIG_CLAMP_REL * np.abs(tr)
        w = np.maximum(w, np.expand_dims(floor, -1) if c.ndim == 3 else floor)
    fw = fn(w)
    out = (u * fw[..., None, :]) @ np.swapaxes(u, -1, -2)
    return symmetrize(out)


def logm(c: np.ndarray) -> np.ndarray:
    return spd_map(c, np.log, clamp=True)


def expm(s: np.ndarray) -> np.ndarray:
    """Matrix exponential of a symmetric matrix (result is SPD)."""
    return spd_map(s, np.exp)


def sqrtm(c: np.ndarray) -> np.ndarray:
    return spd_map(c, np.sqrt)


def invsqrtm(c: np.ndarray) -> np.ndarray:
    return spd_map(c, lambda w: 1.0 / np.sqrt(w), clamp=True)


def powm(c: np.ndarray, p: float) -> np.ndarray:
    return spd_map(c, lambda w: w**p, clamp=p < 0)


def airm_distance(c1: np.ndarray, c2: np.ndarray) -> float:
    """Affine-invariant Riemannian distance ||log(C1^-1/2 C2 C1^-1/2)||_F.

    Computed through the generalized eigenvalues of (C2, C1), which is the
    same quantity without forming the matrix square roots.
    """
    c1 = np.asarray(c1, dtype=np.float64)
    c2 = np.asarray(c2, dtype=np.float64)
    _check_same_dim(c1, c2)
    if c1.shape != c2.shape:
        raise InputError(f"shape mismatch: {c1.shape} vs {c2.shape}")
    try:
        w = scipy.linalg.eigh(c2, c1, eigvals_only=True)
    except (scipy.linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"generalized eigenproblem failed: {exc}") from exc
    w = np.maximum(w, np.finfo(np.float64).tiny)
    return float(np.sqrt(np.sum(np.log(w) ** 2)))


def sq_dists_to(ref: np.ndarray, covs: np.ndarray) -> np.ndarray:
    """Squared AIRM distances from one reference matrix to a stack of covariances."""
    covs = np.asarray(covs, dtype=np.float64)
    _check_same_dim(ref, covs)
    w = invsqrtm(ref)
    inner = symmetrize(w @ covs @ w)
    vals = np.linalg.eigvalsh(inner)
    vals = np.maximum(vals, np.finfo(np.float64).tiny)
    return np.sum(np.log(vals) ** 2, axis=-1)


def geodesic(c1: np.ndarray, c2: np.ndarray, t: float) -> np.ndarray:
    """Point at parameter t on the geodesic from C1 to C2.

    C1^(1/2) (C1^(-1/2) C2 C1^(-1/2))^t C1^(1/2); t=0 gives C1, t=1 gives C2.
    """
    if not 0.0 <= t <= 1.0:
        raise InputError(f"geodesic parameter t={t} outside [0, 1]")
    _check_same_dim(c1, c2)
    s = sqrtm(c1)
    w = invsqrtm(c1)
    inner = symmetrize(w @ c2 @ w)
    return symmetrize(s @ powm(inner, t) @ s)


def karcher_mean(
    covs,
    tol: float = 1e-8,
    max_iter: int = 200,
    step: float = 1.0,
) -> np.ndarray:
    """Geometric (Karcher) mean of a set of SPD matrices.

    Fixed-point iteration: at the current estimate M, average the matrix
    logs of M^(-1/2) C_i M^(-1/2) and move along the exponential map.
    Converged when the Frobenius norm of that tangent-space average drops
    below ``tol``; stationarity at the returned mean therefore holds by
    construction.  Raises :class:`ConvergenceError` (carrying the last
    iterate and residual) after ``max_iter`` iterations.
    """
    covs = np.asarray(covs, dtype=np.float64)
    if covs.ndim == 2:
        covs = covs[None]
    if covs.ndim != 3 or covs.shape[0] == 0:
        raise InputError("karcher_mean: need a nonempty stack of square matrices")
    if covs.shape[0] == 1:
        return covs[0].copy()

    mean = symmetrize(covs.mean(axis=0))
    residual = np.inf
    for _ in range(max_iter):
        w = invsqrtm(mean)
        inner = symmetrize(w @ covs @ w)
        tangent = logm(inner).mean(axis=0)
        residual = float(np.linalg.norm(tangent))
        if residual < tol:
            return mean
        s = sqrtm(mean)
        mean = symmetrize(s @ expm(step * tangent) @ s)
    raise ConvergenceError(
        f"Karcher mean did not converge in {max_iter} iterations "
        f"(residual {residual:.3e}, tol {tol:.1e})",
        last_iterate=mean,
        residual=residual,
    )


def class_means(covs, labels, tol: float = 1e-8, max_iter: int = 200) -> dict:
    """Per-class Karcher mean, keyed by label (ascending label order)."""
    covs = np.asarray(covs, dtype=np.float64)
    labels = np.asarray(labels)
    if covs.shape[0] != labels.shape[0]:
        raise InputError("class_means: one label per covariance required")
    if covs.shape[0] == 0:
        raise InputError("class_means: empty trial set")
    means = {}
    for lab in np.unique(labels):
        members = covs[labels == lab]
        if members.shape[0] == 0:
            raise InputError(f"class_means: empty class {lab}")
        means[int(lab)] = karcher_mean(members, tol=tol, max_iter=max_iter)
    return means


def dispersion(covs, mean: np.ndarray) -> float:
    """Mean squared AIRM distance of a set about a reference matrix."""
    covs = np.asarray(covs, dtype=np.float64)
    if covs.ndim == 2:
        covs = covs[None]
    if covs.shape[0] == 0:
        raise InputError("dispersion: empty set")
    return float(sq_dists_to(mean, covs).mean())


def trial_covariance(x: np.ndarray, ridge: float | None = 1e-8) -> np.ndarray:
    """Sample covariance (1/s) X X^T of one trial's channels-by-samples data.

    When the smallest eigenvalue falls below 1e-10 of the trace, a ridge of
    ``ridge * trace/ch`` is added to keep the result usable as an SPD
    feature.  Pass ``ridge=None`` to disable; rank-deficient input (fewer
    samples than channels) is then rejected.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise InputError(f"trial_covariance: expected 2-d array, got shape {x.shape}")
    ch, s = x.shape
    if ridge is None and s < ch:
        raise InputError(
            f"trial_covariance: {s} samples < {ch} channels gives a singular "
            "covariance and ridging is disabled"
        )
    c = symmetrize((x @ x.T) / s)
    tr = float(np.trace(c))
    if tr <= 0 or not np.isfinite(tr):
        raise ValidationError("trial_covariance: degenerate input (zero/non-finite)")
    if ridge is not None:
        if np.linalg.eigvalsh(c)[0] < 1e-10 * tr:
            c = c + (ridge * tr / ch) * np.eye(ch)
    return c


def random_spd(rng: np.random.Generator, dim: int, scale: float = 1.0) -> np.ndarray:
    """Random SPD matrix exp(Z) for a Gaussian symmetric Z (test/benchmark helper)."""
    z = rng.standard_normal((dim, dim))
    return expm(scale * symmetrize(z))


def random_orthogonal(rng: np.random.Generator, dim: int) -> np.ndarray:
    """Haar-ish random orthogonal matrix from the QR of a Gaussian matrix."""
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    sign = np.sign(np.diag(r))
    sign[sign == 0] = 1.0
    return q * sign
