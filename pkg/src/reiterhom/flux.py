"""Divergence-free flux discrepancies and their antisymmetric potentials.

Three mean-zero, divergence-free fields measure how far the corrected fluxes
sit from their averages:

    I1_ij(y,z) = -a_ij + a_ik dz_k chi_y^j + mean_Z(a_ij - a_ik dz_k chi_y^j)
    I2_ij(y)   = ahat_ij + mean_Z(a_ik dy_k chi^j - a_ik dz_k chi_y^l dy_l chi^j)
                 - mean_Z(a_ij - a_ik dz_k chi_y^j)
    I3_ij(y,z) = a_ik dy_k chi^j - a_ik dz_k chi_y^l dy_l chi^j - mean_Z(same)

Each admits a potential E_kij = d_k f_ij - d_i f_kj with f_ij the zero-mean
solution of Laplace(f_ij) = I_ij on its torus, built here directly in Fourier
space (f_hat = -I_hat / (4 pi^2 |k|^2)).  Antisymmetry E_kij = -E_ikj is exact
by construction and d_k E_kij reconstructs I_ij up to the divergence defect
inherited from the cell solves.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cell import CorrectorSet, _gradient_batch, _mean_over_grid
from .coefficients import CoefficientSpec
from .fourier import TWO_PI, deriv_multiplier, grid_points

DIV_FREE_PRE_TOL = 1e-8
RECONSTRUCT_TOL = 1e-10


class NonZeroMean(ValueError):
    """The flux has a nonvanishing mean, so no periodic potential exists."""


class DivergenceDefect(RuntimeError):
    """Flux fails the divergence-free pre-check: suspect the cell solves."""


@dataclass
class FluxField:
    """One of I1/I2/I3 on its torus; values[i, j, grid...]."""

    which: str
    dim: int
    values: np.ndarray
    y: np.ndarray | None = None
    _spectral: np.ndarray | None = field(default=None, repr=False)

    @property
    def grid_shape(self) -> tuple[int, ...]:
        return self.values.shape[2:]

    def mean(self) -> np.ndarray:
        return _mean_over_grid(self.values, self.dim)

    def fourier(self) -> np.ndarray:
        """Normalized coefficients over the grid axes (the hat-table of the field)."""
        if self._spectral is None:
            axes = tuple(range(2, 2 + self.dim))
            npts = int(np.prod(self.grid_shape))
            self._spectral = np.fft.fftn(self.values, axes=axes) / npts
        return self._spectral

    def divergence_residual(self) -> float:
        """max_j L2 norm of d_i values_ij (first index contracted)."""
        cols = np.moveaxis(self.values, 1, 0)    # (j, i, *grid)
        from .cell import _divergence_batch
        div = _divergence_batch(cols, self.dim)  # (j, *grid)
        axes = tuple(range(1, 1 + self.dim))
        return float(np.sqrt(np.mean(div ** 2, axis=axes)).max())

    def l2(self) -> float:
        return float(np.sqrt(np.mean(np.sum(self.values ** 2, axis=(0, 1)))))


@dataclass
class FluxPotential:
    """E_kij with its scalar potentials f_ij; values[k, i, j, grid...]."""

    which: str
    dim: int
    values: np.ndarray
    scalar: np.ndarray
    reconstruction_residual: float

    def antisymmetry_defect(self) -> float:
        return float(np.abs(self.values + np.swapaxes(self.values, 0, 1)).max())

    def l2(self) -> float:
        return float(np.sqrt(np.mean(np.sum(self.values ** 2, axis=(0, 1, 2)))))

    def h1(self) -> float:
        grad = _gradient_batch(self.values, self.dim)
        g2 = np.mean(np.sum(grad ** 2, axis=(0, 1, 2, 3)))
        return float(np.sqrt(np.mean(np.sum(self.values ** 2, axis=(0, 1, 2))) + g2))


def _y_index(cs: CorrectorSet, y) -> int:
    y = np.asarray(y, dtype=float).reshape(cs.dim)
    idx = np.mod(np.round(y * cs.n_y).astype(int), cs.n_y)
    if np.abs(y * cs.n_y - np.round(y * cs.n_y)).max() > 1e-9:
        raise ValueError(f"inner corrector not tabulated at y={y}; "
                         f"pick a point of the {cs.n_y}-grid")
    flat = 0
    for ax in range(cs.dim):
        flat = flat * cs.n_y + idx[ax]
    return int(flat)


def assemble_I1(spec: CoefficientSpec, cs: CorrectorSet, y) -> FluxField:
    """Inner-flux discrepancy at a tabulated y; mean-zero and z-divergence-free."""
    iy = _y_index(cs, y)
    dim = cs.dim
    ypt = cs.y_points()[iy]
    a = spec.eval_y_tensor_z(ypt[None], cs.n_z)[0]          # (d, d, *z)
    dz = _gradient_batch(cs.inner_flat()[iy], dim)          # (j, k, *z)
    corrected = a - np.einsum("ik...,jk...->ij...", a, dz)  # a_ij - a_ik dz_k chi^j
    b_here = cs.b_field.reshape(-1, dim, dim)[iy]
    vals = -corrected + b_here.reshape((dim, dim) + (1,) * dim)
    return FluxField("I1", dim, vals, y=ypt)


def assemble_I2(spec: CoefficientSpec, cs: CorrectorSet,
                chunk: int | None = None) -> FluxField:
    """Outer-flux discrepancy on the y-grid; its Y-mean vanishes by Eq-(1.6)
    consistency (same tables, same quadrature)."""
    dim = cs.dim
    total = cs.n_y ** dim
    if chunk is None:
        chunk = max(1, min(total, 2 ** 19 // max(cs.n_z ** dim, 1)))
    ypts = cs.y_points()
    douter = cs.outer_gradient_flat()                       # (y, k axis, j)
    inner_flat = cs.inner_flat()
    mid = np.empty((total, dim, dim))
    for start in range(0, total, chunk):
        sel = slice(start, min(start + chunk, total))
        a = spec.eval_y_tensor_z(ypts[sel], cs.n_z)
        dz = _gradient_batch(inner_flat[sel], dim)          # (B, l, k, *z)
        abar = _mean_over_grid(a, dim)                      # (B, i, k)
        t1 = np.einsum("bik,bkj->bij", abar, douter[sel])
        adz = _mean_over_grid(np.einsum("bik...,blk...->bil...", a, dz), dim)
        t2 = np.einsum("bil,blj->bij", adz, douter[sel])
        mid[sel] = t1 - t2
    b_flat = cs.b_field.reshape(total, dim, dim)
    vals = cs.a_hat[None] + mid - b_flat                    # (y, i, j)
    vals = np.moveaxis(vals, 0, -1).reshape((dim, dim) + cs.y_shape)
    return FluxField("I2", dim, np.ascontiguousarray(vals))


def assemble_I3(spec: CoefficientSpec, cs: CorrectorSet, y) -> FluxField:
    """Mixed-flux discrepancy at a tabulated y; mean-zero and z-divergence-free."""
    iy = _y_index(cs, y)
    dim = cs.dim
    ypt = cs.y_points()[iy]
    a = spec.eval_y_tensor_z(ypt[None], cs.n_z)[0]
    dz = _gradient_batch(cs.inner_flat()[iy], dim)          # (l, k, *z)
    douter = cs.outer_gradient_flat()[iy]                   # (k axis, j)
    t1 = np.einsum("ik...,kj->ij...", a, douter)
    t2 = np.einsum("ik...,lk...,lj->ij...", a, dz, douter)
    vals = t1 - t2
    mean = _mean_over_grid(vals, dim)
    vals = vals - mean.reshape((dim, dim) + (1,) * dim)
    return FluxField("I3", dim, vals, y=ypt)


def fourier_flux_potential(flux: FluxField, *, pre_tol: float = DIV_FREE_PRE_TOL,
                           post_tol: float = RECONSTRUCT_TOL,
                           check: bool = True) -> FluxPotential:
    """Potential E_kij = d_k f_ij - d_i f_kj with f = inverse-Laplacian of I.

    Pre-checks mean and divergence (a potential only exists for mean-zero,
    divergence-free fluxes); post-checks the reconstruction d_k E_kij = I_ij.
    """
    dim = flux.dim
    mean_mag = float(np.abs(flux.mean()).max())
    scale = max(flux.l2(), 1e-300)
    if check and mean_mag > pre_tol:
        raise NonZeroMean(f"flux mean {mean_mag:.3e} exceeds {pre_tol:.1e}")
    if check and flux.divergence_residual() > pre_tol:
        raise DivergenceDefect(f"divergence residual {flux.divergence_residual():.3e}")

    axes = tuple(range(2, 2 + dim))
    ihat = np.fft.fftn(flux.values, axes=axes)
    grid_shape = flux.grid_shape
    k2 = np.zeros(grid_shape)
    mults = []
    for ax, n in enumerate(grid_shape):
        shape = [1] * dim
        shape[ax] = n
        m = deriv_multiplier(n).reshape(shape)
        mults.append(m)
        k2 = k2 + ((m / (TWO_PI * 1j)).real) ** 2
    lap = -TWO_PI ** 2 * k2
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_lap = np.where(lap != 0, 1.0 / np.where(lap != 0, lap, 1.0), 0.0)
    fhat = ihat * inv_lap
    f = np.fft.ifftn(fhat, axes=axes).real

    df = np.stack([np.fft.ifftn(fhat * mults[ax], axes=axes).real
                   for ax in range(dim)])                   # (k, i, j, *grid)
    e_vals = df - np.swapaxes(df, 0, 1)                     # d_k f_ij - d_i f_kj

    div_e = np.zeros_like(flux.values)
    ehat = np.fft.fftn(e_vals, axes=tuple(range(3, 3 + dim)))
    for k in range(dim):
        div_e = div_e + np.fft.ifftn(ehat[k] * mults[k], axes=axes).real
    residual = float(np.sqrt(np.mean(np.sum((div_e - flux.values) ** 2, axis=(0, 1)))))
    rel = residual / max(scale, 1e-300) if scale > 1e-14 else residual
    pot = FluxPotential("E" + flux.which[1:], dim, e_vals, f, rel)
    if check and flux.l2() > 1e-13 and rel > post_tol:
        raise DivergenceDefect(f"reconstruction residual {rel:.3e} exceeds {post_tol:.1e}")
    return pot


def flux_identity_report(spec: CoefficientSpec, cs: CorrectorSet,
                         n_y_samples: int = 16) -> dict:
    """Max residuals of the Lemma-level identities over sampled y-grid points.

    y-samples are deterministic (evenly strided through the flat y-grid).
    I2 quantities are global (full y-grid).
    """
    total = cs.n_y ** cs.dim
    stride = max(1, total // n_y_samples)
    sample = list(range(0, total, stride))
    ypts = cs.y_points()

    rep = {"i1_mean": 0.0, "i1_div": 0.0, "i1_reconstruct": 0.0, "e1_antisym": 0.0,
           "i3_mean": 0.0, "i3_div": 0.0, "i3_reconstruct": 0.0, "e3_antisym": 0.0}
    for iy in sample:
        i1 = assemble_I1(spec, cs, ypts[iy])
        i3 = assemble_I3(spec, cs, ypts[iy])
        rep["i1_mean"] = max(rep["i1_mean"], float(np.abs(i1.mean()).max()))
        rep["i3_mean"] = max(rep["i3_mean"], float(np.abs(i3.mean()).max()))
        rep["i1_div"] = max(rep["i1_div"], i1.divergence_residual())
        rep["i3_div"] = max(rep["i3_div"], i3.divergence_residual())
        e1 = fourier_flux_potential(i1, check=False)
        e3 = fourier_flux_potential(i3, check=False)
        rep["i1_reconstruct"] = max(rep["i1_reconstruct"], e1.reconstruction_residual)
        rep["i3_reconstruct"] = max(rep["i3_reconstruct"], e3.reconstruction_residual)
        rep["e1_antisym"] = max(rep["e1_antisym"], e1.antisymmetry_defect())
        rep["e3_antisym"] = max(rep["e3_antisym"], e3.antisymmetry_defect())

    i2 = assemble_I2(spec, cs)
    rep["i2_mean"] = float(np.abs(i2.mean()).max())
    rep["i2_div"] = i2.divergence_residual()
    e2 = fourier_flux_potential(i2, check=False)
    rep["i2_reconstruct"] = e2.reconstruction_residual
    rep["e2_antisym"] = e2.antisymmetry_defect()
    rep["e2_h1"] = e2.h1()
    return rep


def e1_lipschitz_in_y(spec: CoefficientSpec, cs: CorrectorSet,
                      n_pairs: int = 8) -> dict:
    """Fitted constant for the y-Lipschitz bound on E1 differences.

    Samples neighboring y-grid pairs (the bound's constant is not
    constructive; only the fitted max ratio is reported).
    """
    total = cs.n_y ** cs.dim
    stride = max(1, total // n_pairs)
    ypts = cs.y_points()
    ratios = []
    for iy in range(0, total - 1, stride):
        ya, yb = ypts[iy], ypts[iy + 1]
        dist = np.linalg.norm(np.minimum(np.abs(ya - yb), 1 - np.abs(ya - yb)))
        if dist == 0:
            continue
        ea = fourier_flux_potential(assemble_I1(spec, cs, ya), check=False)
        eb = fourier_flux_potential(assemble_I1(spec, cs, yb), check=False)
        diff = ea.values - eb.values
        l2 = np.sqrt(np.mean(np.sum(diff ** 2, axis=(0, 1, 2))))
        grad = _gradient_batch(diff, cs.dim)
        h1 = np.sqrt(np.mean(np.sum(grad ** 2, axis=(0, 1, 2, 3))))
        ratios.append(float((l2 + h1) / dist))
    return {"fitted_c": max(ratios) if ratios else 0.0, "n_pairs": len(ratios)}


# ---------------------------------------------------------------------------
# Fourier table of the inner corrector in the fast variable
# ---------------------------------------------------------------------------

@dataclass
class CorrectorFourierTable:
    """chi^j(y, z) = sum_k chihat^j_k(y) e^{2 pi i k z}: per-mode y-fields.

    Eager coefficient array for small tables, per-mode extraction otherwise.
    """

    cs: CorrectorSet
    coeffs: np.ndarray | None          # (y_flat, j, *z_modes) or None when lazy

    @classmethod
    def build(cls, cs: CorrectorSet, eager_limit: int = 2 ** 22) -> "CorrectorFourierTable":
        flat = cs.inner_flat()
        if flat.size <= eager_limit:
            axes = tuple(range(2, flat.ndim))
            coeffs = np.fft.fftn(flat, axes=axes) / cs.n_z ** cs.dim
            return cls(cs, coeffs)
        return cls(cs, None)

    def mode_field(self, k: tuple[int, ...]) -> np.ndarray:
        """chihat^j_k on the y-grid: (j, *y_shape) complex."""
        cs = self.cs
        if self.coeffs is not None:
            idx = tuple(int(ki) % cs.n_z for ki in k)
            out = self.coeffs[(slice(None), slice(None)) + idx]
        else:
            flat = cs.inner_flat()
            z = np.arange(cs.n_z) / cs.n_z
            out = flat.astype(complex)
            for ki in k:
                phase = np.exp(-TWO_PI * 1j * int(ki) * z)
                out = np.tensordot(out, phase, axes=([2], [0])) / cs.n_z
        # (y_flat, j) -> (j, *y_shape)
        return np.ascontiguousarray(out.T).reshape((cs.dim,) + (cs.n_y,) * cs.dim)

    def plancherel_defect(self) -> float:
        """| sum_k ||chihat_k||^2_{L2(Y)} - ||chi||^2_{L2(YxZ)} | (Parseval)."""
        cs = self.cs
        flat = cs.inner_flat()
        phys = np.mean(flat ** 2)
        if self.coeffs is not None:
            spec_sum = np.mean(np.sum(np.abs(self.coeffs) ** 2,
                                      axis=tuple(range(2, self.coeffs.ndim))))
        else:
            axes = tuple(range(2, flat.ndim))
            co = np.fft.fftn(flat, axes=axes) / cs.n_z ** cs.dim
            spec_sum = np.mean(np.sum(np.abs(co) ** 2, axis=axes))
        return float(abs(phys - spec_sum))

    def weighted_gradient_sum(self) -> float:
        """sum_k (2 pi |k|)^2 ||grad_y chihat_k||^2 (= mixed dy-dz energy by Parseval)."""
        cs = self.cs
        total = 0.0
        for ax in range(cs.dim):
            dych = cs.inner_y_derivative(ax).reshape(cs.inner_flat().shape)
            dz = _gradient_batch(dych, cs.dim)
            total += float(np.mean(np.sum(dz ** 2, axis=(1, 2))))
        return total

    def shell_decay(self) -> list[tuple[int, float]]:
        """(|k|_inf, max coefficient magnitude) per shell, for decay checks."""
        cs = self.cs
        if self.coeffs is None:
            raise NotImplementedError("decay profile needs the eager table")
        freqs = np.fft.fftfreq(cs.n_z, 1.0 / cs.n_z).astype(int)
        mags = np.abs(self.coeffs)
        shells: dict[int, float] = {}
        it = np.nditer(np.zeros((cs.n_z,) * cs.dim), flags=["multi_index"])
        for _ in it:
            shell = int(max(abs(freqs[m]) for m in it.multi_index))
            block = mags[(slice(None), slice(None)) + it.multi_index]
            shells[shell] = max(shells.get(shell, 0.0), float(block.max()))
        return sorted(shells.items())


def fourier_corrector_table(cs: CorrectorSet) -> CorrectorFourierTable:
    return CorrectorFourierTable.build(cs)
