"""Complex-array numerics shared by all modules.

Images are plain ``numpy`` arrays of dtype complex128.  All routines work on
arbitrary shapes; 2D operations act on the trailing two axes so that stacks
(e.g. per-coil data) can pass through unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EPS = 1e-12


def as_complex_image(x, shape=None) -> np.ndarray:
    """Coerce to a finite complex128 array, optionally checking the shape."""
    out = np.asarray(x, dtype=np.complex128)
    if shape is not None and tuple(out.shape) != tuple(shape):
        raise ValueError(f"shape mismatch: got {out.shape}, expected {tuple(shape)}")
    if not np.all(np.isfinite(out)):
        raise ValueError("non-finite entries in complex image")
    return out


def inner(a: np.ndarray, b: np.ndarray) -> complex:
    """Inner product sum(conj(a) * b); shapes must match."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return complex(np.vdot(a, b))


def norm(a: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(a).ravel()))


def fft2(x: np.ndarray) -> np.ndarray:
    """Unitary 2D FFT over the trailing two axes (norm preserved)."""
    x = np.asarray(x, dtype=np.complex128)
    if x.ndim < 2:
        raise ValueError("fft2 requires at least a 2D array")
    return np.fft.fft2(x, axes=(-2, -1), norm="ortho")


def ifft2(x: np.ndarray) -> np.ndarray:
    """Inverse of :func:`fft2` (unitary)."""
    x = np.asarray(x, dtype=np.complex128)
    if x.ndim < 2:
        raise ValueError("ifft2 requires at least a 2D array")
    return np.fft.ifft2(x, axes=(-2, -1), norm="ortho")


def power_iteration(op, shape, iters=100, seed=0, dtype=np.complex128) -> float:
    """Largest eigenvalue of a self-adjoint PSD operator ``op`` by power iteration.

    ``op`` maps arrays of ``shape`` to arrays of the same shape.  Returns the
    Rayleigh quotient after ``iters`` steps.  Deterministic given ``seed``;
    reseeds internally if the start vector lands in the null space.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    rng = np.random.default_rng(seed)
    v = _random_like(rng, shape, dtype)
    lam = 0.0
    for _ in range(iters):
        w = op(v)
        nw = norm(w)
        if nw < EPS:
            # landed in the null space; deterministic reseed and continue
            v = _random_like(rng, shape, dtype)
            lam = 0.0
            continue
        lam = float(np.real(inner(v, w)) / max(np.real(inner(v, v)), EPS))
        v = w / nw
    return lam


def _random_like(rng, shape, dtype):
    v = rng.standard_normal(shape)
    if np.issubdtype(dtype, np.complexfloating):
        v = v + 1j * rng.standard_normal(shape)
    v = v.astype(dtype)
    n = norm(v)
    return v / n if n > 0 else v


@dataclass
class CGResult:
    x: np.ndarray
    converged: bool
    iterations: int
    relative_residual: float


def conjugate_gradient(op, rhs, x0=None, tol=1e-10, max_iter=200) -> CGResult:
    """Solve op(x) = rhs for a Hermitian positive definite ``op``.

    Terminates when ||op(x) - rhs|| / ||rhs|| <= tol, or flags
    ``converged=False`` after ``max_iter`` iterations.  Aborts on non-finite
    intermediates (indicates an indefinite or mis-specified operator).
    """
    rhs = np.asarray(rhs, dtype=np.complex128)
    rhs_norm = norm(rhs)
    if rhs_norm == 0.0:
        return CGResult(np.zeros_like(rhs), True, 0, 0.0)
    x = np.zeros_like(rhs) if x0 is None else np.array(x0, dtype=np.complex128)
    r = rhs - op(x)
    p = r.copy()
    rs = np.real(inner(r, r))
    rel = np.sqrt(max(rs, 0.0)) / rhs_norm
    k = 0
    while rel > tol and k < max_iter:
        ap = op(p)
        denom = np.real(inner(p, ap))
        if not np.isfinite(denom) or denom <= 0.0:
            raise FloatingPointError(
                f"conjugate_gradient: curvature {denom!r} at iteration {k}; "
                "operator is not positive definite or produced non-finite values"
            )
        alpha = rs / denom
        x = x + alpha * p
        r = r - alpha * ap
        rs_new = np.real(inner(r, r))
        if not np.isfinite(rs_new):
            raise FloatingPointError(f"conjugate_gradient: non-finite residual at iteration {k}")
        p = r + (rs_new / rs) * p
        rs = rs_new
        rel = np.sqrt(max(rs, 0.0)) / rhs_norm
        k += 1
    return CGResult(x, bool(rel <= tol), k, float(rel))
