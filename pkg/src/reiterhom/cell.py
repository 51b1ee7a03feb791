"""Cell problems on the unit torus and the homogenized tensor.

Pipeline: for every point y of a uniform tabulation grid on Y, solve the
inner (fast-variable) cell problem

    -d/dz_i ( a_ij(y, z) d/dz_j (chi_y^k(z) - z_k) ) = 0,   mean_Z chi = 0,

average the corrected flux to b_ij(y), solve the outer cell problem with
coefficient b on Y, and assemble the constant effective matrix by
tensor-product trapezoid quadrature of

    a_ij - a_ik dz_k chi_y^j - a_ik dy_k chi^j + a_ik dz_k chi_y^l dy_l chi^j.

Discretization is Fourier collocation: derivatives act in spectral space,
variable-coefficient products in physical space.  The singular constant mode
is pinned (operators and right-hand sides are exactly mean-free), which
realizes the mean-zero side conditions bit-exactly.  Inner solves across
y-points are independent and run as batched Krylov iterations: preconditioned
CG when the coefficient matrix is symmetric, BiCGStab otherwise, with the
mean-coefficient inverse Laplacian as preconditioner.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .coefficients import CoefficientSpec, EllipticityViolation
from .fourier import (TWO_PI, TorusField, deriv_multiplier, grid_points,
                      resample_periodic)

DEFAULT_TOL = 1e-12


class SolverNonConvergence(RuntimeError):
    def __init__(self, residual: float, iterations: int):
        super().__init__(f"cell solver stalled at relative residual {residual:.3e} "
                         f"after {iterations} iterations")
        self.residual = residual
        self.iterations = iterations


def _axis_multipliers(grid_shape: tuple[int, ...], lead: int) -> list[np.ndarray]:
    """2*pi*i*k per grid axis, shaped to broadcast after ``lead`` leading dims."""
    mults = []
    for ax, n in enumerate(grid_shape):
        shape = [1] * (lead + len(grid_shape))
        shape[lead + ax] = n
        mults.append(deriv_multiplier(n).reshape(shape))
    return mults


def _gradient_batch(v: np.ndarray, dim: int) -> np.ndarray:
    """Spectral gradient over the trailing dim axes; (..., *grid) -> (..., d, *grid)."""
    axes = tuple(range(v.ndim - dim, v.ndim))
    vh = np.fft.fftn(v, axes=axes)
    mults = _axis_multipliers(v.shape[-dim:], v.ndim - dim)
    return np.stack([np.fft.ifftn(vh * m, axes=axes).real for m in mults], axis=-dim - 1)


def _divergence_batch(f: np.ndarray, dim: int) -> np.ndarray:
    """Spectral divergence; f (..., d, *grid) -> (..., *grid)."""
    comp_axis = f.ndim - dim - 1
    grid_axes = tuple(range(f.ndim - dim, f.ndim))
    out_axes = tuple(a - 1 for a in grid_axes)
    mults = _axis_multipliers(f.shape[-dim:], comp_axis)
    acc = None
    for i in range(dim):
        fh = np.fft.fftn(np.take(f, i, axis=comp_axis), axes=out_axes)
        term = fh * mults[i]
        acc = term if acc is None else acc + term
    return np.fft.ifftn(acc, axes=out_axes).real


def _dots(u: np.ndarray, v: np.ndarray, dim: int) -> np.ndarray:
    """Per-system grid inner products; inputs (B, m, *grid) -> (B, m)."""
    axes = tuple(range(u.ndim - dim, u.ndim))
    return np.sum(u * v, axis=axes)


def _rfft_shape(grid_shape: tuple[int, ...]) -> tuple[int, ...]:
    return grid_shape[:-1] + (grid_shape[-1] // 2 + 1,)


def _rfft_multipliers(grid_shape: tuple[int, ...], lead: int) -> list[np.ndarray]:
    """2*pi*i*k per axis in rfft layout (half last axis), Nyquist modes zeroed."""
    d = len(grid_shape)
    mults = []
    for ax, n in enumerate(grid_shape):
        if ax < d - 1:
            m = deriv_multiplier(n)
        else:
            k = np.arange(n // 2 + 1, dtype=float)
            if n % 2 == 0:
                k[-1] = 0.0
            m = TWO_PI * 1j * k
        shape = [1] * (lead + d)
        shape[lead + ax] = m.size
        mults.append(m.reshape(shape))
    return mults


def _rfft_weights(grid_shape: tuple[int, ...]) -> np.ndarray:
    """Parseval weights for the half spectrum: 2 for interior last-axis modes."""
    n = grid_shape[-1]
    w = np.full(n // 2 + 1, 2.0)
    w[0] = 1.0
    if n % 2 == 0:
        w[-1] = 1.0
    return w.reshape((1,) * (len(grid_shape) - 1) + (-1,))


class _SpectralSystem:
    """-div(a grad .) acting on rfft coefficients; products in physical space.

    The Krylov state stays spectral, so one operator application costs
    2*dim half-spectrum transforms and the mean-coefficient preconditioner is
    a pointwise multiply.
    """

    def __init__(self, a: np.ndarray, dim: int):
        self.a = a
        self.dim = dim
        self.grid_shape = a.shape[3:]
        self.axes = tuple(range(2, 2 + dim))  # grid axes of (B, m, *grid) arrays
        self.mults = _rfft_multipliers(self.grid_shape, lead=2)
        self.weights = _rfft_weights(self.grid_shape)

    def apply(self, v_hat: np.ndarray) -> np.ndarray:
        from scipy import fft as sfft
        g = np.empty(v_hat.shape[:2] + (self.dim,) + self.grid_shape)
        for i in range(self.dim):
            g[:, :, i] = sfft.irfftn(self.mults[i] * v_hat, s=self.grid_shape,
                                     axes=self.axes)
        flux = np.einsum("bij...,bmj...->bmi...", self.a, g)
        out = None
        for i in range(self.dim):
            fi = sfft.rfftn(flux[:, :, i], axes=self.axes)
            term = self.mults[i] * fi
            out = term if out is None else out + term
        return -out

    def dot(self, u_hat: np.ndarray, v_hat: np.ndarray) -> np.ndarray:
        """Weighted half-spectrum inner product == n_pts * physical grid dot."""
        prod = u_hat.real * v_hat.real + u_hat.imag * v_hat.imag
        return np.sum(self.weights * prod, axis=tuple(self.axes))

    def inv_mean_symbol(self) -> np.ndarray:
        """(B, 1, *rfft_shape) symbol of (-div(abar grad .))^-1, zero mode pinned."""
        abar = self.a.mean(axis=tuple(range(3, self.a.ndim)))
        abar = 0.5 * (abar + np.swapaxes(abar, 1, 2))
        q = np.zeros((self.a.shape[0], 1) + _rfft_shape(self.grid_shape))
        for i in range(self.dim):
            ki = (self.mults[i] / (TWO_PI * 1j)).real
            for j in range(self.dim):
                kj = (self.mults[j] / (TWO_PI * 1j)).real
                coef = abar[:, i, j].reshape((-1, 1) + (1,) * self.dim)
                q = q + TWO_PI ** 2 * coef * ki * kj
        with np.errstate(divide="ignore"):
            return np.where(q > 0, 1.0 / np.where(q > 0, q, 1.0), 0.0)

    def rhs_columns(self) -> np.ndarray:
        """Spectral -div_z(a e_k) for all k: (B, k, *rfft_shape)."""
        from scipy import fft as sfft
        cols = np.moveaxis(self.a, 2, 1)                  # (B, k, i, *grid)
        out = None
        for i in range(self.dim):
            fi = sfft.rfftn(np.take(cols, i, axis=2), axes=self.axes)
            term = self.mults[i] * fi
            out = term if out is None else out + term
        return -out


def solve_periodic_divform(a: np.ndarray, rhs: np.ndarray | None, *, symmetric: bool,
                           tol: float = DEFAULT_TOL, maxiter: int = 2000,
                           x0: np.ndarray | None = None
                           ) -> tuple[np.ndarray, np.ndarray, int]:
    """Solve -div(a grad u) = rhs on the torus with mean-zero u, batched.

    a: (B, d, d, *grid); rhs: (B, m, *grid) with every right side exactly
    mean-free, or None for the cell-problem loads -div(a e_k).  ``x0`` is an
    optional mean-zero warm start in physical space.  Returns (u, per-system
    relative residuals (B, m), iterations).  Raises SolverNonConvergence if
    any system misses ``tol`` within ``maxiter``.
    """
    from scipy import fft as sfft
    dim = a.shape[1]
    sys_ = _SpectralSystem(a, dim)
    if rhs is None:
        b_hat = sys_.rhs_columns()
    else:
        b_hat = sfft.rfftn(rhs, axes=sys_.axes)
    inv = sys_.inv_mean_symbol()
    norm_b = np.sqrt(sys_.dot(b_hat, b_hat))
    scale = np.where(norm_b > 0, norm_b, 1.0)
    x0_hat = None if x0 is None else sfft.rfftn(x0, axes=sys_.axes)
    solver = _pcg if symmetric else _bicgstab
    x_hat, res, iters = solver(sys_, inv, b_hat, scale, tol, maxiter, x0_hat)
    u = sfft.irfftn(x_hat, s=sys_.grid_shape, axes=sys_.axes)
    return u, res, iters


def _pcg(sys_: _SpectralSystem, inv, b, scale, tol, maxiter, x0=None):
    """Batched PCG with best-iterate tracking.

    Past its rounding floor CG can lose orthogonality and diverge, so the
    loop keeps the best iterate, restarts once from the true residual when
    progress stalls, and stops (rather than diverges) if the floor sits
    above ``tol``.  A floor more than 100x above ``tol`` raises.
    """
    dim = sys_.dim

    def ex(s):  # per-system scalars broadcast over spectral axes
        return s.reshape(s.shape + (1,) * dim)

    def seed(x):
        r = b - sys_.apply(x) if x is not None else b.copy()
        x = np.zeros_like(b) if x is None else x
        return x, r

    x, r = seed(x0)
    z = inv * r
    p = z.copy()
    rz = sys_.dot(r, z)
    best_x = x.copy()
    best = np.sqrt(sys_.dot(r, r)) / scale
    stall = 0
    restarts = 2
    it = 0
    for it in range(1, maxiter + 1):
        res = np.sqrt(sys_.dot(r, r)) / scale
        improved = res < best
        if improved.any():
            best_x = np.where(ex(improved), x, best_x)
            best = np.where(improved, res, best)
        if float(best.max()) <= tol:
            return best_x, best, it - 1
        stall = 0 if bool(improved.any()) else stall + 1
        if stall >= 6 or float(res.max()) > 100.0 * float(best.max()):
            if restarts > 0:
                restarts -= 1
                stall = 0
                x, r = seed(best_x.copy())
                z = inv * r
                p = z.copy()
                rz = sys_.dot(r, z)
                continue
            break
        ap = sys_.apply(p)
        pap = sys_.dot(p, ap)
        alpha = np.where(pap > 0, rz / np.where(pap > 0, pap, 1.0), 0.0)
        x = x + ex(alpha) * p
        r = r - ex(alpha) * ap
        z = inv * r
        rz_new = sys_.dot(r, z)
        beta = np.where(rz > 0, rz_new / np.where(rz > 0, rz, 1.0), 0.0)
        p = z + ex(beta) * p
        rz = rz_new
    if float(best.max()) > 100.0 * tol:
        raise SolverNonConvergence(float(best.max()), it)
    return best_x, best, it


def _bicgstab(sys_: _SpectralSystem, inv, b, scale, tol, maxiter, x0=None):
    """Batched BiCGStab with the same best-iterate safeguards as _pcg."""
    dim = sys_.dim

    def ex(s):
        return s.reshape(s.shape + (1,) * dim)

    def safe(d):
        return np.where(np.abs(d) > 0, d, 1.0)

    def seed(x):
        r = b - sys_.apply(x) if x is not None else b.copy()
        x = np.zeros_like(b) if x is None else x
        return x, r

    x, r = seed(x0)
    r_hat = r.copy()
    rho = np.ones(b.shape[:2])
    alpha = np.ones_like(rho)
    omega = np.ones_like(rho)
    v = np.zeros_like(b)
    p = np.zeros_like(b)
    best_x = x.copy()
    best = np.sqrt(sys_.dot(r, r)) / scale
    stall = 0
    restarts = 2
    it = 0
    for it in range(1, maxiter + 1):
        res = np.sqrt(sys_.dot(r, r)) / scale
        improved = res < best
        if improved.any():
            best_x = np.where(ex(improved), x, best_x)
            best = np.where(improved, res, best)
        if float(best.max()) <= tol:
            return best_x, best, it - 1
        stall = 0 if bool(improved.any()) else stall + 1
        if stall >= 6 or float(res.max()) > 100.0 * float(best.max()):
            if restarts > 0:
                restarts -= 1
                stall = 0
                x, r = seed(best_x.copy())
                r_hat = r.copy()
                rho = np.ones(b.shape[:2])
                alpha = np.ones_like(rho)
                omega = np.ones_like(rho)
                v = np.zeros_like(b)
                p = np.zeros_like(b)
                continue
            break
        live = res > tol
        rho_new = sys_.dot(r_hat, r)
        beta = np.where(live, (rho_new / safe(rho)) * (alpha / safe(omega)), 0.0)
        rho = np.where(live, rho_new, rho)
        p = r + ex(beta) * (p - ex(omega) * v)
        phat = inv * p
        v = sys_.apply(phat)
        alpha = np.where(live, rho / safe(sys_.dot(r_hat, v)), 0.0)
        s = r - ex(alpha) * v
        shat = inv * s
        t = sys_.apply(shat)
        tt = sys_.dot(t, t)
        omega = np.where(live & (tt > 0), sys_.dot(t, s) / safe(tt), 0.0)
        x = x + ex(alpha) * phat + ex(omega) * shat
        r = s - ex(omega) * t
    if float(best.max()) > 100.0 * tol:
        raise SolverNonConvergence(float(best.max()), it)
    return best_x, best, it


# ---------------------------------------------------------------------------
# corrector tabulation
# ---------------------------------------------------------------------------

@dataclass
class CorrectorSet:
    """Tabulated correctors; immutable once assembled.

    inner[y_index..., j, z_index...] holds chi_y^j on the z-grid at that
    y-grid point; outer[k, y_index...] holds chi^k on the y-grid.
    """

    dim: int
    n_y: int
    n_z: int
    spec_digest: str
    inner: np.ndarray      # (*(n_y,)*d, d, *(n_z,)*d)
    b_field: np.ndarray    # (*(n_y,)*d, d, d)
    outer: np.ndarray      # (d, *(n_y,)*d)
    a_hat: np.ndarray      # (d, d)
    inner_residual: float
    outer_residual: float
    tol: float

    @property
    def y_shape(self) -> tuple[int, ...]:
        return (self.n_y,) * self.dim

    @property
    def z_shape(self) -> tuple[int, ...]:
        return (self.n_z,) * self.dim

    def y_points(self) -> np.ndarray:
        return grid_points(self.n_y, self.dim)

    def inner_flat(self) -> np.ndarray:
        """View shaped (n_y**dim, d, *z_shape)."""
        return self.inner.reshape((self.n_y ** self.dim, self.dim) + self.z_shape)

    def inner_field(self, y_flat_index: int, k: int) -> TorusField:
        return TorusField(self.inner_flat()[y_flat_index, k].copy(), self.dim)

    def inner_z_gradient(self, y_sel=slice(None)) -> np.ndarray:
        """dz_k chi_y^j for flat y selection: (B, j, k, *z_shape)."""
        return _gradient_batch(self.inner_flat()[y_sel], self.dim)

    def inner_y_derivative(self, y_axis: int, chunk: int = 8) -> np.ndarray:
        """dy_axis chi^j on the full (y, z) grid, computed on demand.

        The transform runs over z-slabs so the complex transient stays at
        about 2/chunk of the table size.
        """
        out = np.empty_like(self.inner)
        mult = deriv_multiplier(self.n_y)
        shape = [1] * self.inner.ndim
        shape[y_axis] = self.n_y
        mult = mult.reshape(shape)
        zslab_axis = self.inner.ndim - 1
        n_last = self.inner.shape[zslab_axis]
        step = max(1, n_last // chunk)
        for s in range(0, n_last, step):
            sl = [slice(None)] * self.inner.ndim
            sl[zslab_axis] = slice(s, s + step)
            sl = tuple(sl)
            vh = np.fft.fft(self.inner[sl], axis=y_axis)
            out[sl] = np.fft.ifft(vh * mult, axis=y_axis).real
        return out

    def outer_gradient(self) -> np.ndarray:
        """dy_axis chi^k on the y-grid: (axis, k, *y_shape)."""
        return np.moveaxis(_gradient_batch(self.outer, self.dim), -self.dim - 1, 0)

    def outer_gradient_flat(self) -> np.ndarray:
        """(n_y**dim, axis, k) gather of outer_gradient over flat y indices."""
        g = self.outer_gradient()
        return g.reshape(self.dim, self.dim, -1).transpose(2, 0, 1)


def _mean_over_grid(v: np.ndarray, dim: int) -> np.ndarray:
    return v.mean(axis=tuple(range(v.ndim - dim, v.ndim)))


def inner_rhs(a: np.ndarray, dim: int) -> np.ndarray:
    """-div_z(a e_k) for all k: (B, k, *grid); exactly mean-free."""
    cols = np.moveaxis(a, 2, 1)  # (B, k, i, *grid): component axis now at position 2
    return -_divergence_batch(cols, dim)


def _check_resolution(spec: CoefficientSpec, n_z: int) -> None:
    if n_z < 4 or n_z & (n_z - 1) != 0:
        raise ValueError(f"n_z must be a power of two >= 4, got {n_z}")
    if n_z < 4 * max(spec.max_frequency(), 1):
        raise ValueError(f"n_z={n_z} under-resolves max frequency {spec.max_frequency()}")


def require_elliptic(spec: CoefficientSpec) -> float:
    """Cheap ellipticity certificate: declared alpha, else a coarse sampling."""
    if spec.alpha is not None:
        alpha = float(spec.alpha)
        if alpha <= 0:
            raise EllipticityViolation(alpha)
        return alpha
    from .coefficients import validate_conditions
    res = max(8, 4 * spec.max_frequency())
    return validate_conditions(spec, res, n_directions=32).alpha


def solve_inner_cell(spec: CoefficientSpec, y, n_z: int, tol: float = DEFAULT_TOL
                     ) -> tuple[list[TorusField], np.ndarray]:
    """Inner correctors chi_y^k at one y; returns (fields per k, residuals per k)."""
    _check_resolution(spec, n_z)
    require_elliptic(spec)
    y = np.asarray(y, dtype=float).reshape(1, spec.dim)
    a = spec.eval_y_tensor_z(y, n_z)
    u, res, _ = solve_periodic_divform(a, None, symmetric=spec.is_symmetric(), tol=tol)
    return [TorusField(u[0, k], spec.dim) for k in range(spec.dim)], res[0]


def average_inner(spec: CoefficientSpec, inner_fields: list[TorusField], y) -> np.ndarray:
    """b_ij(y) = mean_Z (a_ij - a_ik dz_k chi_y^j); asserts ellipticity of b."""
    dim = spec.dim
    y = np.asarray(y, dtype=float).reshape(1, dim)
    n_z = inner_fields[0].resolution[0]
    a = spec.eval_y_tensor_z(y, n_z)[0]
    chi = np.stack([f.values for f in inner_fields])           # (j, *z)
    dz = _gradient_batch(chi, dim)                             # (j, k, *z)
    corr = np.einsum("ik...,jk...->ij...", a, dz)
    b = _mean_over_grid(a - corr, dim)
    _assert_elliptic(b[None])
    return b


def _assert_elliptic(b: np.ndarray) -> None:
    """b: (..., d, d) matrices; raise when the symmetric part dips to <= 0."""
    sym = 0.5 * (b + np.swapaxes(b, -1, -2))
    amin = float(np.linalg.eigvalsh(sym).min())
    if amin <= 0:
        raise EllipticityViolation(amin)


def tabulate_inner(spec: CoefficientSpec, n_y: int, n_z: int, tol: float = DEFAULT_TOL,
                   chunk: int | None = None) -> tuple[np.ndarray, np.ndarray, float]:
    """Inner solves at every y-grid point.

    Returns (inner table, b_field, max relative residual).  ``chunk`` bounds
    how many y-points are in flight; the default keeps live arrays near 70 MB.
    Solves cascade up from a coarser z-grid: the prolonged coarse solution
    seeds the Krylov iteration, which only has to resolve the spectral tail.
    """
    _check_resolution(spec, n_z)
    require_elliptic(spec)
    dim = spec.dim
    ypts = grid_points(n_y, dim)
    total = ypts.shape[0]
    if chunk is None:
        # ~128 y-points in flight at 64^2 keeps every live array below ~70 MB
        chunk = max(1, min(total, 2 ** 19 // max(n_z ** dim, 1)))
    symmetric = spec.is_symmetric()

    coarse = None
    n_half = n_z // 2
    if dim > 1 and n_half >= max(16, 4 * spec.max_frequency()):
        coarse, _, _ = tabulate_inner(spec, n_y, n_half, tol=max(tol, 1e-11))
        coarse = coarse.reshape((total, dim) + (n_half,) * dim)

    inner = np.empty((total, dim) + (n_z,) * dim)
    b = np.empty((total, dim, dim))
    worst = 0.0
    for start in range(0, total, chunk):
        sel = slice(start, min(start + chunk, total))
        a = spec.eval_y_tensor_z(ypts[sel], n_z)
        x0 = None
        if coarse is not None:
            x0 = resample_periodic(coarse[sel], (n_z,) * dim,
                                   axes=tuple(range(2, 2 + dim)))
        u, res, _ = solve_periodic_divform(a, None, symmetric=symmetric, tol=tol, x0=x0)
        inner[sel] = u
        worst = max(worst, float(res.max()))
        dz = _gradient_batch(u, dim)                           # (B, j, k, *z)
        corr = np.einsum("bik...,bjk...->bij...", a, dz)
        b[sel] = _mean_over_grid(a - corr, dim)
    _assert_elliptic(b)
    return (inner.reshape((n_y,) * dim + (dim,) + (n_z,) * dim),
            b.reshape((n_y,) * dim + (dim, dim)), worst)


def solve_outer_cell(b_field: np.ndarray, tol: float = DEFAULT_TOL
                     ) -> tuple[np.ndarray, float]:
    """Outer correctors chi^k from b tabulated on the y-grid.

    b_field: (*(n_y,)*d, d, d) -> (outer (d, *(n_y,)*d), max relative residual).
    """
    dim = b_field.shape[-1]
    _assert_elliptic(b_field)
    grid_shape = b_field.shape[:-2]
    a = np.ascontiguousarray(np.moveaxis(b_field, (-2, -1), (0, 1))[None])  # (1,d,d,*y)
    symmetric = bool(np.allclose(b_field, np.swapaxes(b_field, -1, -2),
                                 rtol=0.0, atol=1e-13))
    u, res, _ = solve_periodic_divform(a, None, symmetric=symmetric, tol=tol)
    return u[0].reshape((dim,) + grid_shape), float(res.max())


def homogenized_tensor(spec: CoefficientSpec, inner: np.ndarray, outer: np.ndarray,
                       n_y: int, n_z: int, chunk: int | None = None) -> np.ndarray:
    """Effective matrix by trapezoid quadrature of the four-term integrand."""
    dim = spec.dim
    ypts = grid_points(n_y, dim)
    total = ypts.shape[0]
    if chunk is None:
        chunk = max(1, min(total, 2 ** 19 // max(n_z ** dim, 1)))
    inner_flat = inner.reshape((total, dim) + (n_z,) * dim)
    douter = np.moveaxis(_gradient_batch(outer, dim), -dim - 1, 0)  # (k axis, j, *y)
    douter_flat = douter.reshape(dim, dim, total)                   # [k, j, y]
    acc = np.zeros((dim, dim))
    for start in range(0, total, chunk):
        sel = slice(start, min(start + chunk, total))
        a = spec.eval_y_tensor_z(ypts[sel], n_z)
        dz = _gradient_batch(inner_flat[sel], dim)                  # (B, j, k, *z)
        dy = douter_flat[:, :, sel]                                 # (k, j, B)
        term2 = np.einsum("bik...,bjk...->bij...", a, dz)
        term3 = np.einsum("bik...,kjb->bij...", a, dy)
        term4 = np.einsum("bik...,blk...,ljb->bij...", a, dz, dy)
        integrand = a - term2 - term3 + term4
        acc += integrand.sum(axis=tuple([0] + list(range(3, integrand.ndim))))
    a_hat = acc / (total * n_z ** dim)
    _assert_elliptic(a_hat[None])
    return a_hat


def build_corrector_set(spec: CoefficientSpec, n_y: int, n_z: int,
                        tol: float = DEFAULT_TOL) -> CorrectorSet:
    """Full pipeline: inner tabulation, b field, outer solve, effective matrix."""
    inner, b_field, res_in = tabulate_inner(spec, n_y, n_z, tol)
    outer, res_out = solve_outer_cell(b_field, tol)
    a_hat = homogenized_tensor(spec, inner, outer, n_y, n_z)
    return CorrectorSet(dim=spec.dim, n_y=n_y, n_z=n_z, spec_digest=spec.digest(),
                        inner=inner, b_field=b_field, outer=outer, a_hat=a_hat,
                        inner_residual=res_in, outer_residual=res_out, tol=tol)


# ---------------------------------------------------------------------------
# diagnostics (fitted/measured constants only; the bounds are non-constructive)
# ---------------------------------------------------------------------------

def corrector_diagnostics(spec: CoefficientSpec, cs: CorrectorSet,
                          tau: float = 1.0, p_probes: tuple[int, ...] = (2, 4)) -> dict:
    """Corrector energy levels: inner W^{1,2}, mixed dy/dz-dy energies, the
    L^{2+tau} integrability probe of dz chi, and outer W^{2,p} surrogates.
    """
    dim = cs.dim
    report: dict[str, float] = {}
    chi_flat = cs.inner_flat()
    zaxes = tuple(range(2, chi_flat.ndim))
    dz = _gradient_batch(chi_flat, dim)
    dz_sq = np.sum(dz ** 2, axis=2)
    report["inner_l2_max"] = float(np.sqrt(np.mean(chi_flat ** 2, axis=zaxes)).max())
    report["inner_grad_l2_max"] = float(np.sqrt(np.mean(dz_sq, axis=zaxes)).max())
    report["inner_grad_l2ptau_max"] = float(
        np.mean(dz_sq ** ((2 + tau) / 2), axis=zaxes).max() ** (1 / (2 + tau)))

    grad_sq = 0.0
    mixed_sq = 0.0
    for ax in range(dim):
        dych = cs.inner_y_derivative(ax).reshape(chi_flat.shape)
        grad_sq = grad_sq + np.mean(dych ** 2, axis=zaxes)
        dzdy = _gradient_batch(dych, dim)
        mixed_sq = mixed_sq + np.mean(np.sum(dzdy ** 2, axis=2), axis=zaxes)
    report["inner_dy_energy_max"] = float(np.sqrt(grad_sq).max())
    report["inner_dydz_energy_max"] = float(np.sqrt(mixed_sq).max())

    douter = cs.outer_gradient()
    d2 = np.stack([np.moveaxis(_gradient_batch(douter[ax], dim), -dim - 1, 0)
                   for ax in range(dim)])
    for p in p_probes:
        report[f"outer_w2p{p}"] = float(
            (np.mean(np.abs(cs.outer) ** p)
             + np.mean(np.sum(douter ** 2, axis=0) ** (p / 2))
             + np.mean(np.sum(d2 ** 2, axis=(0, 1)) ** (p / 2))) ** (1 / p))
    report["outer_l2"] = float(np.sqrt(np.mean(cs.outer ** 2)))
    return report


# ---------------------------------------------------------------------------
# cache + export
# ---------------------------------------------------------------------------

def cache_key(spec: CoefficientSpec, n_y: int, n_z: int, tol: float) -> str:
    return f"{spec.digest()}_ny{n_y}_nz{n_z}_tol{tol:.1e}"


def save_corrector_set(cs: CorrectorSet, path) -> None:
    meta = dict(dim=cs.dim, n_y=cs.n_y, n_z=cs.n_z, spec_digest=cs.spec_digest,
                inner_residual=cs.inner_residual, outer_residual=cs.outer_residual,
                tol=cs.tol)
    np.savez(path, meta=json.dumps(meta), inner=cs.inner, b_field=cs.b_field,
             outer=cs.outer, a_hat=cs.a_hat)


def load_corrector_set(path) -> CorrectorSet:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        return CorrectorSet(dim=meta["dim"], n_y=meta["n_y"], n_z=meta["n_z"],
                            spec_digest=meta["spec_digest"], inner=data["inner"],
                            b_field=data["b_field"], outer=data["outer"],
                            a_hat=data["a_hat"], inner_residual=meta["inner_residual"],
                            outer_residual=meta["outer_residual"], tol=meta["tol"])


def export_corrector_csv(cs: CorrectorSet, path) -> None:
    """Text dump (y_index, k, z-mode multi-index, Re, Im); sized for 1-D/small tables."""
    flat = cs.inner_flat()
    coeffs = np.fft.fftn(flat, axes=tuple(range(2, flat.ndim))) / cs.n_z ** cs.dim
    freqs = np.fft.fftfreq(cs.n_z, 1.0 / cs.n_z).astype(int)
    header = ",".join(f"mode{ax + 1}" for ax in range(cs.dim))
    with open(path, "w") as fh:
        fh.write(f"y_index,k,{header},re,im\n")
        for iy in range(flat.shape[0]):
            for k in range(cs.dim):
                it = np.nditer(coeffs[iy, k], flags=["multi_index"])
                for val in it:
                    modes = ",".join(str(freqs[m]) for m in it.multi_index)
                    fh.write(f"{iy},{k + 1},{modes},{val.real!r},{val.imag!r}\n")
