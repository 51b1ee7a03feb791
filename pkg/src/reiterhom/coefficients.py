"""Y-Z periodic coefficient matrices A(y, z) as trigonometric polynomials.

Entries are finite sums of terms  c * prod cos/sin(2*pi*m*y_p) * prod
cos/sin(2*pi*k*z_q)  with integer frequencies, so periodicity on the unit
cells holds by construction and y-derivatives are exact.  A small DSL keeps
fixtures in config files:

    a11 = 2 + cos(2*pi*y1)*cos(2*pi*z1); a12 = 0.5*sin(2*pi*2*z2)

Statements are separated by semicolons or newlines; omitted entries default
to zero.  ``pi`` is reserved and only valid inside trig arguments, where the
argument must reduce to (2*pi*K) * var with integer K >= 1.
"""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass, field

import numpy as np

from .fourier import TWO_PI, grid1d

_VAR_RE = re.compile(r"^([yz])([12])$")
_NAME_RE = re.compile(r"[A-Za-z_][A-Za-z_0-9]*")
_NUM_RE = re.compile(r"\d+\.\d*([eE][+-]?\d+)?|\.\d+([eE][+-]?\d+)?|\d+([eE][+-]?\d+)?")


class DslError(ValueError):
    """Coefficient text rejected; carries the 1-based source location."""

    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"line {line}, col {col}: {message}")
        self.line = line
        self.col = col


class FrequencyError(DslError):
    """Trig argument is not an integer multiple of 2*pi (breaks unit-cell periodicity)."""


class DimensionError(DslError):
    """Entry or variable index inconsistent with the spatial dimension."""


class EllipticityViolation(Exception):
    """Sampled ellipticity lower bound is nonpositive; spec unusable downstream."""

    def __init__(self, alpha: float):
        super().__init__(f"coefficient is not elliptic: sampled min of xi.A xi = {alpha:.6g}")
        self.alpha = alpha


@dataclass(frozen=True, order=True)
class Factor:
    """One trig factor fn(2*pi*freq*slot_axis), slot 'y' or 'z', axis 0-based."""

    slot: str
    axis: int
    fn: str
    freq: int

    def __call__(self, t: np.ndarray) -> np.ndarray:
        op = np.cos if self.fn == "cos" else np.sin
        return op(TWO_PI * self.freq * t)

    def text(self) -> str:
        var = f"{self.slot}{self.axis + 1}"
        if self.freq == 1:
            return f"{self.fn}(2*pi*{var})"
        return f"{self.fn}(2*pi*{self.freq}*{var})"


@dataclass(frozen=True)
class Term:
    coeff: float
    factors: tuple[Factor, ...]

    def evaluate(self, y: np.ndarray, z: np.ndarray) -> np.ndarray:
        """y, z: arrays of shape (..., dim); broadcast product of all factors."""
        out = np.full(np.broadcast(y[..., 0], z[..., 0]).shape, self.coeff)
        for f in self.factors:
            coord = y[..., f.axis] if f.slot == "y" else z[..., f.axis]
            out = out * f(coord)
        return out


def _canonical_terms(terms: list[Term]) -> tuple[Term, ...]:
    acc: dict[tuple[Factor, ...], float] = {}
    for t in terms:
        key = tuple(sorted(t.factors))
        acc[key] = acc.get(key, 0.0) + t.coeff
    out = [Term(c, k) for k, c in sorted(acc.items(), key=lambda kv: kv[0]) if c != 0.0]
    return tuple(out)


def differentiate_terms(terms: tuple[Term, ...], slot: str, axis: int) -> tuple[Term, ...]:
    """Exact partial derivative of a term list w.r.t. one slot coordinate."""
    out: list[Term] = []
    for t in terms:
        for i, f in enumerate(t.factors):
            if f.slot != slot or f.axis != axis:
                continue
            rest = t.factors[:i] + t.factors[i + 1:]
            w = TWO_PI * f.freq
            if f.fn == "cos":
                out.append(Term(-t.coeff * w, rest + (Factor(slot, axis, "sin", f.freq),)))
            else:
                out.append(Term(t.coeff * w, rest + (Factor(slot, axis, "cos", f.freq),)))
    return _canonical_terms(out)


@dataclass(frozen=True)
class CoefficientSpec:
    """Immutable dim x dim matrix of trig-polynomial entries; evaluation is pure."""

    dim: int
    entries: tuple[tuple[tuple[Term, ...], ...], ...]  # [i][j] -> terms
    alpha: float | None = None
    beta: float | None = None
    m_lip: float | None = None

    def terms(self, i: int, j: int) -> tuple[Term, ...]:
        return self.entries[i][j]

    def evaluate(self, y, z) -> np.ndarray:
        """A(y, z) for y, z of shape (..., dim) (or (dim,)); returns (..., dim, dim)."""
        y = np.atleast_1d(np.asarray(y, dtype=float))
        z = np.atleast_1d(np.asarray(z, dtype=float))
        if y.shape[-1] != self.dim or z.shape[-1] != self.dim:
            raise ValueError(f"points must have trailing dim {self.dim}")
        base = np.broadcast(y[..., 0], z[..., 0]).shape
        out = np.zeros(base + (self.dim, self.dim))
        for i in range(self.dim):
            for j in range(self.dim):
                for t in self.entries[i][j]:
                    out[..., i, j] += t.evaluate(y, z)
        return out

    def eval_entry(self, i: int, j: int, y, z) -> np.ndarray:
        y = np.atleast_1d(np.asarray(y, dtype=float))
        z = np.atleast_1d(np.asarray(z, dtype=float))
        base = np.broadcast(y[..., 0], z[..., 0]).shape
        out = np.zeros(base)
        for t in self.entries[i][j]:
            out += t.evaluate(y, z)
        return out

    def eval_y_tensor_z(self, y_pts: np.ndarray, n_z: int) -> np.ndarray:
        """A at a batch of y points crossed with the full n_z z-grid.

        y_pts: (B, dim).  Returns (B, dim, dim, n_z, ..., n_z).  Terms factor
        into y-parts and z-parts, so the tensor never forms scattered points.
        """
        y_pts = np.asarray(y_pts, dtype=float).reshape(-1, self.dim)
        B = y_pts.shape[0]
        zshape = (n_z,) * self.dim
        t1 = grid1d(n_z)
        out = np.zeros((B, self.dim, self.dim) + zshape)
        for i in range(self.dim):
            for j in range(self.dim):
                for t in self.entries[i][j]:
                    fy = np.full(B, t.coeff)
                    fz = 1.0
                    for f in t.factors:
                        if f.slot == "y":
                            fy = fy * f(y_pts[:, f.axis])
                        else:
                            shape = [1] * self.dim
                            shape[f.axis] = n_z
                            vals = f(t1).reshape(shape)
                            fz = fz * vals
                    out[:, i, j] += fy.reshape((B,) + (1,) * self.dim) * fz
        return out

    def max_frequency(self) -> int:
        mf = 0
        for row in self.entries:
            for terms in row:
                for t in terms:
                    for f in t.factors:
                        mf = max(mf, f.freq)
        return mf

    def is_symmetric(self) -> bool:
        return all(self.entries[i][j] == self.entries[j][i]
                   for i in range(self.dim) for j in range(self.dim))

    def transpose(self) -> "CoefficientSpec":
        ent = tuple(tuple(self.entries[j][i] for j in range(self.dim)) for i in range(self.dim))
        return CoefficientSpec(self.dim, ent, self.alpha, self.beta, self.m_lip)

    def y_derivative_entry(self, i: int, j: int, axis: int) -> tuple[Term, ...]:
        return differentiate_terms(self.entries[i][j], "y", axis)

    def text(self) -> str:
        return format_coefficient(self)

    def digest(self) -> str:
        key = f"dim={self.dim}\n{format_coefficient(self)}"
        return hashlib.sha256(key.encode()).hexdigest()[:16]


def _fmt_float(x: float) -> str:
    if x == int(x) and abs(x) < 1e15:
        return str(int(x))
    return repr(x)


def format_coefficient(spec: CoefficientSpec) -> str:
    """Canonical DSL text; parse(format(spec)) evaluates identically."""
    stmts = []
    for i in range(spec.dim):
        for j in range(spec.dim):
            terms = spec.entries[i][j]
            if not terms:
                continue
            parts = []
            for t in terms:
                mag = abs(t.coeff)
                frag = "*".join(f.text() for f in t.factors)
                if not frag:
                    body = _fmt_float(mag)
                elif mag == 1.0:
                    body = frag
                else:
                    body = f"{_fmt_float(mag)}*{frag}"
                sign = "-" if t.coeff < 0 else "+"
                parts.append((sign, body))
            text = parts[0][1] if parts[0][0] == "+" else "-" + parts[0][1]
            for sign, body in parts[1:]:
                text += f" {sign} {body}"
            stmts.append(f"a{i + 1}{j + 1} = {text}")
    return "\n".join(stmts)


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

@dataclass
class _Token:
    kind: str  # NAME NUM OP END
    value: str
    line: int
    col: int


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    for ln, raw in enumerate(text.split("\n"), start=1):
        i = 0
        while i < len(raw):
            ch = raw[i]
            if ch in " \t\r":
                i += 1
                continue
            if ch == "#":
                break
            if ch in "+-*()=;":
                tokens.append(_Token("OP", ch, ln, i + 1))
                i += 1
                continue
            m = _NUM_RE.match(raw, i)
            if m:
                tokens.append(_Token("NUM", m.group(0), ln, i + 1))
                i = m.end()
                continue
            m = _NAME_RE.match(raw, i)
            if m:
                tokens.append(_Token("NAME", m.group(0), ln, i + 1))
                i = m.end()
                continue
            raise DslError(f"unexpected character {ch!r}", ln, i + 1)
        tokens.append(_Token("OP", ";", ln, len(raw) + 1))
    tokens.append(_Token("END", "", len(text.split(chr(10))) + 1, 1))
    return tokens


class _Parser:
    def __init__(self, tokens: list[_Token]):
        self.toks = tokens
        self.pos = 0

    def peek(self) -> _Token:
        return self.toks[self.pos]

    def take(self) -> _Token:
        tok = self.toks[self.pos]
        self.pos += 1
        return tok

    def expect_op(self, op: str) -> _Token:
        tok = self.peek()
        if tok.kind != "OP" or tok.value != op:
            raise DslError(f"expected {op!r}, found {tok.value!r}", tok.line, tok.col)
        return self.take()

    def parse_statements(self) -> dict[tuple[int, int], list[Term]]:
        entries: dict[tuple[int, int], list[Term]] = {}
        while self.peek().kind != "END":
            if self.peek().kind == "OP" and self.peek().value == ";":
                self.take()
                continue
            key, loc = self.parse_entry_name()
            if key in entries:
                raise DslError(f"entry a{key[0] + 1}{key[1] + 1} assigned twice", *loc)
            self.expect_op("=")
            entries[key] = self.parse_expr()
        return entries

    def parse_entry_name(self) -> tuple[tuple[int, int], tuple[int, int]]:
        tok = self.take()
        m = re.fullmatch(r"a([12])([12])", tok.value) if tok.kind == "NAME" else None
        if not m:
            raise DslError(f"expected an entry name like a11, found {tok.value!r}",
                           tok.line, tok.col)
        return (int(m.group(1)) - 1, int(m.group(2)) - 1), (tok.line, tok.col)

    def parse_expr(self) -> list[Term]:
        terms = []
        sign = 1.0
        tok = self.peek()
        if tok.kind == "OP" and tok.value in "+-":
            self.take()
            sign = -1.0 if tok.value == "-" else 1.0
        terms.append(self.parse_term(sign))
        while True:
            tok = self.peek()
            if tok.kind == "OP" and tok.value in "+-":
                self.take()
                terms.append(self.parse_term(-1.0 if tok.value == "-" else 1.0))
            else:
                break
        return terms

    def parse_term(self, sign: float) -> Term:
        coeff = sign
        factors: list[Factor] = []
        while True:
            tok = self.peek()
            if tok.kind == "NUM":
                self.take()
                coeff *= float(tok.value)
            elif tok.kind == "NAME" and tok.value in ("cos", "sin"):
                factors.append(self.parse_trig())
            elif tok.kind == "NAME" and tok.value == "pi":
                raise DslError("pi is only valid inside a trig argument", tok.line, tok.col)
            elif tok.kind == "NAME" and _VAR_RE.match(tok.value):
                raise DslError(f"bare variable {tok.value!r}: only trig factors are allowed",
                               tok.line, tok.col)
            else:
                raise DslError(f"expected a factor, found {tok.value!r}", tok.line, tok.col)
            nxt = self.peek()
            if nxt.kind == "OP" and nxt.value == "*":
                self.take()
                continue
            break
        return Term(coeff, tuple(factors))

    def parse_trig(self) -> Factor:
        fn_tok = self.take()
        self.expect_op("(")
        numeric = 1.0
        saw_pi = False
        var: tuple[str, int] | None = None
        var_loc = (fn_tok.line, fn_tok.col)
        while True:
            tok = self.take()
            if tok.kind == "NUM":
                numeric *= float(tok.value)
            elif tok.kind == "NAME" and tok.value == "pi":
                if saw_pi:
                    raise DslError("repeated pi in trig argument", tok.line, tok.col)
                saw_pi = True
            elif tok.kind == "NAME" and (m := _VAR_RE.match(tok.value)):
                if var is not None:
                    raise DslError("more than one variable in trig argument", tok.line, tok.col)
                var = (m.group(1), int(m.group(2)) - 1)
                var_loc = (tok.line, tok.col)
            else:
                raise DslError(f"unexpected {tok.value!r} in trig argument", tok.line, tok.col)
            nxt = self.peek()
            if nxt.kind == "OP" and nxt.value == "*":
                self.take()
                continue
            self.expect_op(")")
            break
        if var is None:
            raise DslError("trig argument must contain a variable y1/y2/z1/z2", *var_loc)
        if not saw_pi:
            raise FrequencyError("trig argument must be an integer multiple of 2*pi",
                                 *var_loc)
        freq = numeric / 2.0
        if abs(freq - round(freq)) > 1e-12 or round(freq) < 1:
            raise FrequencyError(
                f"frequency {numeric:g}*pi is not a positive multiple of 2*pi "
                "(period must divide the unit cell)", *var_loc)
        return Factor(var[0], var[1], fn_tok.value, int(round(freq)))


def parse_coefficient(text: str, dim: int | None = None) -> CoefficientSpec:
    """Parse DSL text into a spec; dim is inferred from indices when omitted."""
    raw = _Parser(_tokenize(text)).parse_statements()
    seen = 1
    for (i, j), terms in raw.items():
        seen = max(seen, i + 1, j + 1)
        for t in terms:
            for f in t.factors:
                seen = max(seen, f.axis + 1)
    if dim is None:
        dim = seen
    elif seen > dim:
        raise DimensionError(f"text uses indices up to {seen} but dim={dim}", 1, 1)
    entries = tuple(tuple(_canonical_terms(raw.get((i, j), [])) for j in range(dim))
                    for i in range(dim))
    return CoefficientSpec(dim=dim, entries=entries)


# ---------------------------------------------------------------------------
# built-in fixture families
# ---------------------------------------------------------------------------

def _const_terms(c: float) -> tuple[Term, ...]:
    return _canonical_terms([Term(float(c), ())])


def _product_terms(a0, a1, b0, b1, y_axis=0, z_axis=0) -> tuple[Term, ...]:
    """(a0 + a1 cos 2pi y) (b0 + b1 cos 2pi z), expanded."""
    cy = Factor("y", y_axis, "cos", 1)
    cz = Factor("z", z_axis, "cos", 1)
    return _canonical_terms([
        Term(a0 * b0, ()),
        Term(a0 * b1, (cz,)),
        Term(a1 * b0, (cy,)),
        Term(a1 * b1, (cy, cz)),
    ])


def builtin_family(name: str, params: list, dim: int | None = None) -> CoefficientSpec:
    """Ready-made specs used as fixtures and oracles.

    constant     params: scalar [c] (with dim), diagonal [d1, d2], or 2x2 nested rows
    trig_product params: [a0, a1, b0, b1] -> (a0 + a1 cos 2pi y1)(b0 + b1 cos 2pi z1) * Id
    laminate_x1  params: [a0, a1, b0, b1], dim 2, depends on (y1, z1) only
    trig_general params: [amp] (default 1), dim 2, full symmetric matrix, elliptic for amp < 1.5
    """
    if name == "constant":
        arr = np.asarray(params, dtype=float)
        if arr.ndim == 2:
            mat = arr
        elif arr.size == 1:
            d = dim or 1
            mat = float(arr.ravel()[0]) * np.eye(d)
        elif arr.size in (2, 4) and arr.ndim == 1:
            mat = np.diag(arr) if arr.size == 2 else arr.reshape(2, 2)
        else:
            raise ValueError(f"constant family: cannot interpret params of shape {arr.shape}")
        d = mat.shape[0]
        if mat.shape != (d, d) or d not in (1, 2):
            raise ValueError("constant family: matrix must be 1x1 or 2x2")
        entries = tuple(tuple(_const_terms(mat[i, j]) for j in range(d)) for i in range(d))
        sym = 0.5 * (mat + mat.T)
        eig = np.linalg.eigvalsh(sym)
        return CoefficientSpec(d, entries, alpha=float(eig.min()), beta=float(eig.max()),
                               m_lip=0.0)

    if name == "trig_product":
        a0, a1, b0, b1 = map(float, params)
        d = dim or 1
        prod = _product_terms(a0, a1, b0, b1)
        zero = _canonical_terms([])
        entries = tuple(tuple(prod if i == j else zero for j in range(d)) for i in range(d))
        lo = (a0 - abs(a1)) * (b0 - abs(b1))
        hi = (a0 + abs(a1)) * (b0 + abs(b1))
        m = TWO_PI * abs(a1) * (b0 + abs(b1))
        return CoefficientSpec(d, entries, alpha=lo, beta=hi, m_lip=m)

    if name == "laminate_x1":
        a0, a1, b0, b1 = map(float, params)
        prod = _product_terms(a0, a1, b0, b1)
        zero = _canonical_terms([])
        entries = ((prod, zero), (zero, prod))
        lo = (a0 - abs(a1)) * (b0 - abs(b1))
        hi = (a0 + abs(a1)) * (b0 + abs(b1))
        return CoefficientSpec(2, entries, alpha=lo, beta=hi,
                               m_lip=TWO_PI * abs(a1) * (b0 + abs(b1)))

    if name == "trig_general":
        amp = float(params[0]) if params else 1.0
        if not 0 <= amp < 1.5:
            raise ValueError("trig_general: amp must lie in [0, 1.5) to keep ellipticity")
        c = lambda slot, ax: Factor(slot, ax, "cos", 1)
        s = lambda slot, ax: Factor(slot, ax, "sin", 1)
        a11 = _canonical_terms([
            Term(3.0, ()),
            Term(amp, (c("y", 0), c("z", 0))),
            Term(0.5 * amp, (c("y", 1), c("z", 1))),
        ])
        a22 = _canonical_terms([
            Term(3.0, ()),
            Term(amp, (s("y", 0), s("z", 0))),
            Term(0.5 * amp, (s("y", 1), c("z", 0))),
        ])
        a12 = _canonical_terms([Term(0.5 * amp, (s("y", 0), s("z", 1)))])
        entries = ((a11, a12), (a12, a22))
        return CoefficientSpec(2, entries, alpha=3.0 - 2.0 * amp, beta=3.0 + 2.0 * amp)

    raise ValueError(f"unknown coefficient family {name!r}")


# ---------------------------------------------------------------------------
# structural-condition certificate
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConditionCertificate:
    """Sampled ellipticity/Lipschitz constants plus a gradient-based slack."""

    alpha: float
    beta: float
    m_lip: float
    resolution: int
    slack: float

    @property
    def alpha_certified(self) -> float:
        return self.alpha - self.slack


def _grad_sq_terms(spec: CoefficientSpec) -> list[tuple[int, int, str, int, tuple[Term, ...]]]:
    out = []
    for i in range(spec.dim):
        for j in range(spec.dim):
            for slot in ("y", "z"):
                for ax in range(spec.dim):
                    d = differentiate_terms(spec.entries[i][j], slot, ax)
                    if d:
                        out.append((i, j, slot, ax, d))
    return out


def validate_conditions(spec: CoefficientSpec, resolution: int = 32,
                        n_directions: int = 180) -> ConditionCertificate:
    """Sample the structural conditions on a (y, z) tensor grid.

    alpha/beta are the extremes of xi.A(y,z) xi over grid points and unit
    directions xi; m_lip is the sampled max of |grad_y a_ij| from the exact
    term derivatives.  The slack term bounds what dense sampling can miss:
    (max full-gradient norm) * (grid spacing) / 2.  Raises
    EllipticityViolation when the sampled alpha is nonpositive.
    """
    mf = spec.max_frequency()
    if resolution < max(4 * mf, 2):
        raise ValueError(f"resolution {resolution} < 4 * max frequency {mf}")
    d = spec.dim
    ygrid = grid1d(resolution)
    if d == 1:
        y = ygrid.reshape(-1, 1)
    else:
        yy = np.meshgrid(ygrid, ygrid, indexing="ij")
        y = np.stack([m.ravel() for m in yy], axis=-1)

    if d == 1:
        dirs = np.array([[1.0]])
    else:
        th = np.pi * np.arange(n_directions) / n_directions
        dirs = np.stack([np.cos(th), np.sin(th)], axis=-1)

    alpha = np.inf
    beta = -np.inf
    m_lip = 0.0
    grad_max_sq = 0.0
    all_grad = _grad_sq_terms(spec)

    chunk = max(1, 2 ** 20 // max(resolution ** d, 1))
    for start in range(0, y.shape[0], chunk):
        ypts = y[start:start + chunk]
        a = spec.eval_y_tensor_z(ypts, resolution)  # (B, d, d, *zgrid)
        for xi in dirs:
            q = np.einsum("i,bij...,j->b...", xi, a, xi)
            alpha = min(alpha, float(q.min()))
            beta = max(beta, float(q.max()))

        gsq_y: dict[tuple[int, int], np.ndarray] = {}
        gsq_all = np.zeros(a.shape[:1] + a.shape[3:])
        for i, j, slot, ax, terms in all_grad:
            tf = _eval_terms_y_tensor_z(terms, d, ypts, resolution)
            gsq_all = gsq_all + tf ** 2
            if slot == "y":
                gsq_y[(i, j)] = gsq_y.get((i, j), 0.0) + tf ** 2
        if gsq_y:
            m_lip = max(m_lip, max(float(np.sqrt(v).max()) for v in gsq_y.values()))
        grad_max_sq = max(grad_max_sq, float(gsq_all.max()))

    slack = 0.5 * math.sqrt(grad_max_sq) / resolution
    if alpha <= 0.0:
        raise EllipticityViolation(alpha)
    return ConditionCertificate(alpha=alpha, beta=beta, m_lip=m_lip,
                                resolution=resolution, slack=slack)


def _eval_terms_y_tensor_z(terms: tuple[Term, ...], dim: int, y_pts: np.ndarray,
                           n_z: int) -> np.ndarray:
    """Evaluate a bare term list on y_pts x z-grid; shape (B, n_z, ..., n_z)."""
    zero = _canonical_terms([])
    entries = tuple(tuple(terms if (i == 0 and j == 0) else zero for j in range(dim))
                    for i in range(dim))
    wrapped = CoefficientSpec(dim, entries)
    return wrapped.eval_y_tensor_z(y_pts, n_z)[:, 0, 0]
