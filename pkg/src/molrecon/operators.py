"""Linear measurement operators b = A x + n, with adjoints, the proximal map
of the quadratic data term, and spectral metadata for A^H A.

Supported kinds: identity, diagonal_mask (inpainting), masked_fourier
(single-coil Cartesian MRI), multicoil_sense (toy parallel MRI with synthetic
coil profiles), and blur_downsample (super-resolution).  Operators are
immutable after construction and all methods are reentrant.
"""

from __future__ import annotations

import numpy as np

from .numerics import (
    CGResult,
    as_complex_image,
    conjugate_gradient,
    fft2,
    ifft2,
    inner,
    norm,
    power_iteration,
)


class LinearOperator:
    """Base measurement operator.  Subclasses implement apply/adjoint.

    ``image_shape`` is the domain; ``measurement_shape`` the range.  The
    cached extremal eigenvalues of A^H A are available via ``mu_bounds()``.
    """

    kind = "abstract"

    def __init__(self, image_shape):
        self.image_shape = tuple(int(s) for s in image_shape)
        self._mu_bounds = None

    # -- core linear maps ---------------------------------------------------
    def apply(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    @property
    def measurement_shape(self):
        return self.image_shape

    def normal(self, x: np.ndarray) -> np.ndarray:
        """A^H A x."""
        return self.adjoint(self.apply(x))

    # -- data-term proximal map --------------------------------------------
    def prox_data(self, u, b, alpha, lam, tol=1e-10, max_iter=200) -> np.ndarray:
        """(I + alpha*lam*A^H A)^{-1} (u + alpha*lam*A^H b).

        Solved by conjugate gradient; subclasses override with closed forms
        where the normal operator diagonalizes.
        """
        if alpha < 0 or lam <= 0:
            raise ValueError("prox_data requires alpha >= 0 and lam > 0")
        u = as_complex_image(u, self.image_shape)
        if alpha == 0.0:
            return u
        rhs = u + alpha * lam * self.adjoint(b)
        res = self._solve_regularized_normal(rhs, alpha * lam, tol, max_iter)
        if not res.converged:
            raise RuntimeError(
                f"prox_data: CG did not reach tol={tol} within {max_iter} iterations "
                f"(relative residual {res.relative_residual:.3e})"
            )
        return res.x

    def solve_normal_plus_identity(self, rhs, weight, tol=1e-10, max_iter=200) -> np.ndarray:
        """(I + weight*A^H A)^{-1} rhs — the linear part of prox_data.

        Used by the fixed-point Jacobian (the prox is affine; this is its
        linear factor).
        """
        if weight == 0.0:
            return as_complex_image(rhs, self.image_shape)
        res = self._solve_regularized_normal(as_complex_image(rhs, self.image_shape), weight, tol, max_iter)
        if not res.converged:
            raise RuntimeError(
                f"solve_normal_plus_identity: CG did not converge (residual {res.relative_residual:.3e})"
            )
        return res.x

    def _solve_regularized_normal(self, rhs, weight, tol, max_iter) -> CGResult:
        def op(v):
            return v + weight * self.normal(v)

        return conjugate_gradient(op, rhs, tol=tol, max_iter=max_iter)

    # -- initialization and spectra ------------------------------------------
    def sense_init(self, b, lam0=100.0, tol=1e-10, max_iter=200) -> np.ndarray:
        """Regularized least-squares start: lam0*(I + lam0*A^H A)^{-1} A^H b."""
        if lam0 <= 0:
            raise ValueError("lam0 must be positive")
        zero = np.zeros(self.image_shape, dtype=np.complex128)
        return self.prox_data(zero, b, 1.0, lam0, tol=tol, max_iter=max_iter)

    def mu_bounds(self, iters=100, seed=0):
        """(mu_min, mu_max) of A^H A; mu_max by power iteration, cached."""
        if self._mu_bounds is None:
            mu_max = power_iteration(self.normal, self.image_shape, iters=iters, seed=seed)
            self._mu_bounds = (self._mu_min_analytic(), float(mu_max))
        return self._mu_bounds

    def _mu_min_analytic(self) -> float:
        return 0.0

    # -- serialization --------------------------------------------------------
    def descriptor(self) -> dict:
        """JSON-able description sufficient to rebuild the operator."""
        return {"kind": self.kind, "image_shape": list(self.image_shape)}

    def arrays(self) -> dict:
        """Named arrays (masks, coil maps, kernels) to persist alongside."""
        return {}


class Identity(LinearOperator):
    kind = "identity"

    def apply(self, x):
        return as_complex_image(x, self.image_shape)

    def adjoint(self, y):
        return as_complex_image(y, self.image_shape)

    def normal(self, x):
        return as_complex_image(x, self.image_shape)

    def prox_data(self, u, b, alpha, lam, tol=1e-10, max_iter=200):
        u = as_complex_image(u, self.image_shape)
        if alpha == 0.0:
            return u
        w = alpha * lam
        return (u + w * as_complex_image(b, self.image_shape)) / (1.0 + w)

    def solve_normal_plus_identity(self, rhs, weight, tol=1e-10, max_iter=200):
        return as_complex_image(rhs, self.image_shape) / (1.0 + weight)

    def _mu_min_analytic(self):
        return 1.0

    def mu_bounds(self, iters=100, seed=0):
        return (1.0, 1.0)


class DiagonalMask(LinearOperator):
    """Pointwise binary mask in the image domain (inpainting)."""

    kind = "diagonal_mask"

    def __init__(self, mask):
        mask = np.asarray(mask)
        _check_binary(mask)
        super().__init__(mask.shape)
        self.mask = mask.astype(np.float64)

    def apply(self, x):
        return self.mask * as_complex_image(x, self.image_shape)

    def adjoint(self, y):
        return self.mask * as_complex_image(y, self.image_shape)

    def normal(self, x):
        return self.mask * as_complex_image(x, self.image_shape)

    def _mu_min_analytic(self):
        return 1.0 if np.all(self.mask == 1.0) else 0.0

    def descriptor(self):
        d = super().descriptor()
        d["mask_array"] = "mask"
        return d

    def arrays(self):
        return {"mask": self.mask}


class MaskedFourier(LinearOperator):
    """Undersampled unitary 2D Fourier transform: A = M . F.

    The mask lives on the (unshifted) FFT grid.  A^H A diagonalizes in the
    Fourier domain, so the data prox has the closed form
    F^H diag(1/(1 + w*mask)) F; the CG path stays available for
    cross-checking.
    """

    kind = "masked_fourier"

    def __init__(self, mask):
        mask = np.asarray(mask)
        _check_binary(mask)
        if mask.ndim != 2:
            raise ValueError("masked_fourier expects a 2D mask")
        super().__init__(mask.shape)
        self.mask = mask.astype(np.float64)

    def apply(self, x):
        return self.mask * fft2(as_complex_image(x, self.image_shape))

    def adjoint(self, y):
        return ifft2(self.mask * as_complex_image(y, self.image_shape))

    def normal(self, x):
        return ifft2(self.mask * fft2(as_complex_image(x, self.image_shape)))

    def prox_data(self, u, b, alpha, lam, tol=1e-10, max_iter=200, use_cg=False):
        if use_cg:
            return super().prox_data(u, b, alpha, lam, tol=tol, max_iter=max_iter)
        u = as_complex_image(u, self.image_shape)
        if alpha == 0.0:
            return u
        w = alpha * lam
        rhs = u + w * self.adjoint(b)
        return ifft2(fft2(rhs) / (1.0 + w * self.mask))

    def solve_normal_plus_identity(self, rhs, weight, tol=1e-10, max_iter=200):
        return ifft2(fft2(as_complex_image(rhs, self.image_shape)) / (1.0 + weight * self.mask))

    def _mu_min_analytic(self):
        return 1.0 if np.all(self.mask == 1.0) else 0.0

    def descriptor(self):
        d = super().descriptor()
        d["mask_array"] = "mask"
        return d

    def arrays(self):
        return {"mask": self.mask}


class MulticoilSense(LinearOperator):
    """Toy parallel-MRI operator: per-coil sensitivity weighting, Fourier
    transform, and shared undersampling mask.

    Coil maps must satisfy sum_c |S_c|^2 = 1 pointwise (checked to 1e-6).
    """

    kind = "multicoil_sense"

    def __init__(self, mask, coil_maps):
        mask = np.asarray(mask)
        _check_binary(mask)
        coil_maps = np.asarray(coil_maps, dtype=np.complex128)
        if coil_maps.ndim != 3 or coil_maps.shape[1:] != mask.shape:
            raise ValueError("coil_maps must be [n_coils, H, W] matching the mask")
        ssos = np.sum(np.abs(coil_maps) ** 2, axis=0)
        if np.max(np.abs(ssos - 1.0)) > 1e-6:
            raise ValueError("coil sensitivities must be normalized: sum_c |S_c|^2 = 1")
        super().__init__(mask.shape)
        self.mask = mask.astype(np.float64)
        self.coil_maps = coil_maps

    @property
    def measurement_shape(self):
        return self.coil_maps.shape

    def apply(self, x):
        x = as_complex_image(x, self.image_shape)
        return self.mask[None] * fft2(self.coil_maps * x[None])

    def adjoint(self, y):
        y = as_complex_image(y, self.measurement_shape)
        return np.sum(np.conj(self.coil_maps) * ifft2(self.mask[None] * y), axis=0)

    def _mu_min_analytic(self):
        return 1.0 if np.all(self.mask == 1.0) else 0.0

    def descriptor(self):
        d = super().descriptor()
        d["mask_array"] = "mask"
        d["coil_maps_array"] = "coil_maps"
        return d

    def arrays(self):
        return {"mask": self.mask, "coil_maps": self.coil_maps}


class BlurDownsample(LinearOperator):
    """Super-resolution model: circular blur with a small kernel, then
    integer decimation.  Adjoint is zero-upsampling followed by correlation.
    """

    kind = "blur_downsample"

    def __init__(self, image_shape, kernel, factor):
        super().__init__(image_shape)
        self.kernel = np.asarray(kernel, dtype=np.float64)
        self.factor = int(factor)
        if self.factor < 1:
            raise ValueError("factor must be >= 1")
        if any(s % self.factor for s in self.image_shape):
            raise ValueError("image shape must be divisible by the decimation factor")
        # frequency response of the circular blur on the full grid
        kh, kw = self.kernel.shape
        padded = np.zeros(self.image_shape)
        padded[:kh, :kw] = self.kernel
        padded = np.roll(padded, (-(kh // 2), -(kw // 2)), axis=(0, 1))
        self._kernel_fft = np.fft.fft2(padded)

    @property
    def measurement_shape(self):
        return tuple(s // self.factor for s in self.image_shape)

    def _blur(self, x):
        return np.fft.ifft2(np.fft.fft2(x) * self._kernel_fft)

    def _blur_adjoint(self, x):
        return np.fft.ifft2(np.fft.fft2(x) * np.conj(self._kernel_fft))

    def apply(self, x):
        x = as_complex_image(x, self.image_shape)
        return self._blur(x)[:: self.factor, :: self.factor]

    def adjoint(self, y):
        y = as_complex_image(y, self.measurement_shape)
        up = np.zeros(self.image_shape, dtype=np.complex128)
        up[:: self.factor, :: self.factor] = y
        return self._blur_adjoint(up)

    def _mu_min_analytic(self):
        if self.factor > 1:
            return 0.0
        return float(np.min(np.abs(self._kernel_fft) ** 2))

    def descriptor(self):
        d = super().descriptor()
        d["factor"] = self.factor
        d["kernel_array"] = "kernel"
        return d

    def arrays(self):
        return {"kernel": self.kernel}


def _check_binary(mask):
    vals = np.unique(np.asarray(mask))
    if not np.all(np.isin(vals, (0, 1))):
        raise ValueError("mask entries must be 0 or 1")


# -- synthetic ingredients ----------------------------------------------------

def variable_density_mask(shape, acceleration, center_fraction=0.25, seed=0) -> np.ndarray:
    """Seeded variable-density undersampling mask with a fully sampled
    low-frequency center block, on the unshifted FFT grid.

    ``acceleration`` is the target undersampling factor (2 keeps ~half the
    samples).  The center block spans ``center_fraction`` of each axis.
    """
    h, w = shape
    if acceleration < 1:
        raise ValueError("acceleration must be >= 1")
    rng = np.random.default_rng(seed)
    fy = np.fft.fftfreq(h)  # in [-0.5, 0.5)
    fx = np.fft.fftfreq(w)
    ry, rx = np.meshgrid(fy, fx, indexing="ij")
    radius = np.sqrt(ry**2 + rx**2)

    mask = np.zeros(shape)
    # axis spans [-0.5, 0.5); |f| <= c/2 keeps a fraction c of each axis
    half = center_fraction / 2.0
    center = (np.abs(ry) <= half) & (np.abs(rx) <= half)
    mask[center] = 1.0

    target = int(round(h * w / acceleration))
    n_extra = max(target - int(mask.sum()), 0)
    # density decays with frequency radius; draw without replacement
    weights = np.exp(-(radius**2) / (2 * 0.15**2))
    weights[mask == 1.0] = 0.0
    flat = weights.ravel()
    if n_extra > 0 and flat.sum() > 0:
        p = flat / flat.sum()
        idx = rng.choice(flat.size, size=min(n_extra, int(np.count_nonzero(flat))), replace=False, p=p)
        mask.ravel()[idx] = 1.0
    return mask


def gaussian_coil_maps(shape, n_coils, seed=0) -> np.ndarray:
    """Smooth synthetic coil sensitivities normalized to sum |S_c|^2 = 1.

    Gaussian magnitude profiles centered around the image rim with slowly
    varying phase; mirrors SENSE structure without calibration data.
    """
    h, w = shape
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.linspace(-1, 1, h), np.linspace(-1, 1, w), indexing="ij")
    maps = np.zeros((n_coils, h, w), dtype=np.complex128)
    for c in range(n_coils):
        angle = 2 * np.pi * c / n_coils
        cy, cx = 0.9 * np.sin(angle), 0.9 * np.cos(angle)
        width = 1.0 + 0.2 * rng.standard_normal()
        mag = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / width**2)
        phase = 0.5 * (rng.standard_normal() * yy + rng.standard_normal() * xx)
        maps[c] = mag * np.exp(1j * phase)
    ssos = np.sqrt(np.sum(np.abs(maps) ** 2, axis=0))
    return maps / ssos[None]


def averaging_kernel(size=3) -> np.ndarray:
    return np.full((size, size), 1.0 / (size * size))


def make_operator(descriptor: dict, arrays: dict) -> LinearOperator:
    """Rebuild an operator from its descriptor plus named arrays."""
    kind = descriptor["kind"]
    if kind == "identity":
        return Identity(descriptor["image_shape"])
    if kind == "diagonal_mask":
        return DiagonalMask(arrays[descriptor["mask_array"]])
    if kind == "masked_fourier":
        return MaskedFourier(arrays[descriptor["mask_array"]])
    if kind == "multicoil_sense":
        return MulticoilSense(arrays[descriptor["mask_array"]], arrays[descriptor["coil_maps_array"]])
    if kind == "blur_downsample":
        return BlurDownsample(descriptor["image_shape"], arrays[descriptor["kernel_array"]], descriptor["factor"])
    raise ValueError(f"unknown operator kind: {kind!r}")
