"""Spectral utilities on the unit torus [0,1)^d.

Fields live on uniform grids t_i = i/n (n points per axis, endpoint excluded).
All derivatives are Fourier multipliers with integer wavenumbers, so they are
exact for trigonometric polynomials resolved by the grid.  Conventions:

* ``np.fft.fftn`` without normalization; normalized coefficients are
  ``fftn(v)/v.size``, and the zeroth coefficient equals the grid mean, which
  for periodic trapezoid quadrature is the integral over the cell.
* Real fields with even n carry a Nyquist mode; the derivative multiplier is
  zeroed there so spectral derivatives of real data stay real (the symmetric
  interpolant convention).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * np.pi


def grid1d(n: int) -> np.ndarray:
    """Uniform periodic grid on [0,1): i/n for i = 0..n-1."""
    return np.arange(n) / n


def grid_points(n: int, dim: int) -> np.ndarray:
    """All points of the tensor grid, shape (n**dim, dim), C-order."""
    axes = [grid1d(n)] * dim
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def wavenumbers(n: int) -> np.ndarray:
    """Integer frequencies in fft order: 0, 1, ..., -n//2, ..., -1."""
    return np.fft.fftfreq(n, d=1.0 / n)


def deriv_multiplier(n: int) -> np.ndarray:
    """2*pi*i*k with the Nyquist mode zeroed (even n)."""
    k = wavenumbers(n)
    if n % 2 == 0:
        k = k.copy()
        k[n // 2] = 0.0
    return TWO_PI * 1j * k


def spectral_derivative(values: np.ndarray, axis: int) -> np.ndarray:
    """d/dt along one torus axis of a real field; exact for resolved modes."""
    n = values.shape[axis]
    mult = deriv_multiplier(n)
    shape = [1] * values.ndim
    shape[axis] = n
    vhat = np.fft.fft(values, axis=axis)
    out = np.fft.ifft(vhat * mult.reshape(shape), axis=axis)
    return np.ascontiguousarray(out.real) if np.isrealobj(values) else out


def spectral_gradient(values: np.ndarray, axes: tuple[int, ...]) -> np.ndarray:
    """Stack of spectral derivatives along ``axes``; result shape (len(axes), *values.shape)."""
    return np.stack([spectral_derivative(values, ax) for ax in axes])


def _fold_axis(coeffs: np.ndarray, axis: int, m: int) -> np.ndarray:
    """Alias fft-ordered coefficients onto m bins (exact coarse-grid evaluation)."""
    n = coeffs.shape[axis]
    out_shape = list(coeffs.shape)
    out_shape[axis] = m
    out = np.zeros(out_shape, dtype=complex)
    idx = (np.round(wavenumbers(n)).astype(int)) % m
    np.add.at(out, tuple(slice(None) if a != axis else idx for a in range(coeffs.ndim)), coeffs)
    return out


def _pad_axis(coeffs: np.ndarray, axis: int, m: int) -> np.ndarray:
    """Zero-pad fft-ordered coefficients to length m, splitting the Nyquist mode."""
    n = coeffs.shape[axis]
    out_shape = list(coeffs.shape)
    out_shape[axis] = m
    out = np.zeros(out_shape, dtype=complex)

    def sl(arr, lo, hi):
        index = [slice(None)] * arr.ndim
        index[axis] = slice(lo, hi)
        return tuple(index)

    half = n // 2
    if n % 2 == 0 and m > n:
        out[sl(out, 0, half)] = coeffs[sl(coeffs, 0, half)]
        nyq = 0.5 * coeffs[sl(coeffs, half, half + 1)]
        out[sl(out, half, half + 1)] = nyq
        out[sl(out, m - half, m - half + 1)] = nyq
        out[sl(out, m - half + 1, m)] = coeffs[sl(coeffs, half + 1, n)]
    else:
        kept = (n + 1) // 2
        out[sl(out, 0, kept)] = coeffs[sl(coeffs, 0, kept)]
        out[sl(out, m - (n - kept), m)] = coeffs[sl(coeffs, kept, n)]
    return out


def resample_periodic(values: np.ndarray, new_shape: tuple[int, ...],
                      axes: tuple[int, ...] | None = None) -> np.ndarray:
    """Evaluate the trigonometric interpolant of ``values`` on a new uniform grid.

    Per axis: if the target size divides the source size the coarse points are
    grid points and the values are stride-sliced; if the target size is >= the
    source size the spectrum is zero-padded.  Other combinations are not needed
    by the pipelines and raise.
    """
    if axes is None:
        axes = tuple(range(values.ndim))
    if len(new_shape) != len(axes):
        raise ValueError("new_shape must match axes")
    out = values
    pad_axes = []
    for ax, m in zip(axes, new_shape):
        n = out.shape[ax]
        if m == n:
            continue
        if m < n and n % m == 0:
            index = [slice(None)] * out.ndim
            index[ax] = slice(None, None, n // m)
            out = out[tuple(index)]
        elif m > n:
            pad_axes.append((ax, m))
        else:
            raise ValueError(f"cannot resample axis of size {n} to {m}: "
                             "need a divisor (subsample) or a larger size (pad)")
    if pad_axes:
        real_in = np.isrealobj(values)
        coeffs = np.fft.fftn(out, axes=[ax for ax, _ in pad_axes]) / np.prod(
            [out.shape[ax] for ax, _ in pad_axes])
        for ax, m in pad_axes:
            coeffs = _pad_axis(coeffs, ax, m)
        scale = np.prod([m for _, m in pad_axes])
        out = np.fft.ifftn(coeffs * scale, axes=[ax for ax, _ in pad_axes]) / 1.0
        out = out.real if real_in else out
    return np.ascontiguousarray(out)


@dataclass
class TorusField:
    """Scalar/vector/matrix field sampled on a uniform periodic grid.

    ``values`` has shape ``component_shape + (n,)*dim``; the trailing ``dim``
    axes are the torus axes.  The spectral form is computed lazily and cached.
    """

    values: np.ndarray
    dim: int
    _spectral: np.ndarray | None = field(default=None, repr=False)

    @property
    def resolution(self) -> tuple[int, ...]:
        return self.values.shape[-self.dim:]

    @property
    def component_shape(self) -> tuple[int, ...]:
        return self.values.shape[:-self.dim]

    @property
    def grid_axes(self) -> tuple[int, ...]:
        return tuple(range(self.values.ndim - self.dim, self.values.ndim))

    @property
    def spectral(self) -> np.ndarray:
        """Normalized Fourier coefficients over the torus axes."""
        if self._spectral is None:
            npts = int(np.prod(self.resolution))
            self._spectral = np.fft.fftn(self.values, axes=self.grid_axes) / npts
        return self._spectral

    def mean(self) -> np.ndarray | float:
        out = self.values.mean(axis=self.grid_axes)
        return float(out) if np.ndim(out) == 0 else out

    def norm_l2(self) -> float:
        """L2 norm over the unit torus (trapezoid quadrature = grid mean)."""
        return float(np.sqrt(np.mean(np.abs(self.values) ** 2)))

    def norm_lp(self, p: float) -> float:
        return float(np.mean(np.abs(self.values) ** p) ** (1.0 / p))

    def derivative(self, axis: int) -> "TorusField":
        """Spectral derivative along torus axis ``axis`` (0-based among torus axes)."""
        return TorusField(spectral_derivative(self.values, self.grid_axes[axis]), self.dim)

    def gradient(self) -> "TorusField":
        g = np.stack([spectral_derivative(self.values, ax) for ax in self.grid_axes])
        return TorusField(g, self.dim)

    def conjugate_symmetry_defect(self) -> float:
        """Max |c(k) - conj(c(-k))|; zero for real-valued fields."""
        c = self.spectral
        rev = c
        for ax in self.grid_axes:
            rev = np.flip(np.roll(rev, -1, axis=ax), axis=ax)
        return float(np.max(np.abs(c - np.conj(rev))))

    def zeroth_coefficient(self) -> np.ndarray | float:
        idx = tuple([Ellipsis] + [0] * self.dim)
        out = self.spectral[idx]
        out = np.real_if_close(out, tol=1e6)
        return float(out.real) if np.ndim(out) == 0 else out
