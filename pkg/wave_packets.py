# wave_packets.py
"""
Extension operator for the paraboloid and wave-packet decomposition.

    Ef(x) = ∫_{B(0,1)} f(ξ) exp(i (x̄·ξ + x_n |ξ|²)) dξ

Frequency functions live on the grid ξ_i = -1 + i h of [-1, 1]^(n-1)
(zero outside the unit ball).  The decomposition works in the plane at the
scale grid h = 1/(10R):

* caps θ of width w = R^(-1/2), squared-cosine partition φ_θ with the two
  end caps clamped to 1 towards ±1;
* translates v = D l, D = 4π R^(1/2), for L = 5 R^(1/2) consecutive l
  (one full period 2π/h of the grid transform);
* f_{θ,v} = (f φ_θ) * K_v with K_v(ω) = (D/2π) cos²(πω/(2ρ)) e^(-iωv),
  |ω| <= ρ = w/2.

With these constants Σ_v f_{θ,v} = f φ_θ holds exactly on the grid, and
f_{θ,v} is supported in 3θ.  The packet Ef_{θ,v} concentrates on the tube
x̄ = v - 2 c_θ x_n.
"""
from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import fft as sfft
from scipy.integrate import trapezoid

from errors import CertificateError, ParameterError, PreconditionError
from refinement import dyadic_pigeonhole

logger = logging.getLogger(__name__)

TAU_QUAD = 1e-6
TAU_REC = 1e-3
TAU_TAIL = 1e-3
KAPPA_MAX = 10.0
MAX_R = 1 << 10
MIN_FFT = 4096
TAIL_RADII = 3.0
WEIGHT_POWER = 100
FIELD_MAGIC = b"FLAB"
CHUNK = 1 << 22


# ======================================================
# FREQUENCY FUNCTIONS
# ======================================================
class FrequencyFunction:
    """Samples of f on the uniform grid of [-1, 1]^(n-1) at spacing h (zero off the unit ball)."""

    def __init__(self, n: int, h: float, values, func=None):
        if n not in (2, 3):
            raise ParameterError(f"frequency functions live in n = 2, 3, got {n}")
        M = round(2.0 / h)
        if M < 2 or not math.isclose(M * h, 2.0, rel_tol=1e-12):
            raise ParameterError(f"spacing h={h} does not divide [-1, 1]")
        self.n, self.h, self.M = n, float(h), int(M)
        shape = (M + 1,) * (n - 1)
        vals = np.asarray(values, dtype=complex)
        if vals.shape != shape:
            raise ParameterError(f"values of shape {vals.shape}, expected {shape}")
        if n == 3:
            vals = np.where(self.radius2() <= 1.0 + 1e-12, vals, 0.0)
        self.values = vals
        self.func = func

    @property
    def xi(self) -> np.ndarray:
        return -1.0 + np.arange(self.M + 1) * self.h

    def radius2(self) -> np.ndarray:
        xi = self.xi
        if self.n == 2:
            return xi ** 2
        return xi[:, None] ** 2 + xi[None, :] ** 2

    @classmethod
    def from_callable(cls, func, n: int, h: float) -> "FrequencyFunction":
        M = round(2.0 / h)
        xi = -1.0 + np.arange(M + 1) * h
        if n == 2:
            vals = np.asarray(func(xi), dtype=complex) * np.ones_like(xi)
        else:
            X1, X2 = np.meshgrid(xi, xi, indexing="ij")
            vals = np.asarray(func(X1, X2), dtype=complex) * np.ones_like(X1)
        return cls(n, h, vals, func)

    @classmethod
    def zeros(cls, n: int, h: float) -> "FrequencyFunction":
        M = round(2.0 / h)
        return cls(n, h, np.zeros((M + 1,) * (n - 1), dtype=complex))

    def refined(self) -> "FrequencyFunction":
        if self.func is None:
            raise PreconditionError("refinement needs the generating callable")
        return FrequencyFunction.from_callable(self.func, self.n, self.h / 2)

    def l2_norm(self) -> float:
        a = np.abs(self.values) ** 2
        for _ in range(self.n - 1):
            a = trapezoid(a, dx=self.h, axis=0)
        return float(np.sqrt(a))

    def l1_norm(self) -> float:
        a = np.abs(self.values)
        for _ in range(self.n - 1):
            a = trapezoid(a, dx=self.h, axis=0)
        return float(a)

    def __repr__(self):
        return f"FrequencyFunction(n={self.n}, h={self.h:g}, M={self.M})"


def scale_grid(R: float) -> float:
    """The largest grid spacing resolving the oscillation at scale R."""
    return 1.0 / (10.0 * R)


def random_band_limited(R: int, seed: int, terms: int = 8, n: int = 2) -> FrequencyFunction:
    """
    Σ a_m e^(-i ξ·v_m) cos²(π|ξ|/2) with complex normal a_m and |v_m| <= R/4;
    smooth, vanishing at the boundary, with Ef(·, 0) concentrated in B_R.
    """
    rng = np.random.default_rng([int(seed), 0])
    a = rng.normal(size=terms) + 1j * rng.normal(size=terms)
    V = rng.uniform(-R / 4, R / 4, size=(terms, n - 1))

    if n == 2:
        def func(xi):
            win = np.cos(np.pi * xi / 2) ** 2
            return win * np.sum(a[:, None] * np.exp(-1j * V[:, 0, None] * xi[None, :]), axis=0)
    else:
        def func(x1, x2):
            r = np.sqrt(x1 ** 2 + x2 ** 2)
            win = np.where(r <= 1, np.cos(np.pi * np.minimum(r, 1) / 2) ** 2, 0.0)
            phase = np.exp(-1j * (V[:, 0, None, None] * x1[None] + V[:, 1, None, None] * x2[None]))
            return win * np.sum(a[:, None, None] * phase, axis=0)
    return FrequencyFunction.from_callable(func, n, scale_grid(R))


# ======================================================
# EXTENSION
# ======================================================
def extension(f: FrequencyFunction, X, R: float | None = None) -> np.ndarray:
    """Trapezoid-rule values of Ef at the points X (shape (m, n))."""
    X = np.asarray(X, dtype=float).reshape(-1, f.n)
    if R is None:
        R = max(1.0, float(np.abs(X).max()) if X.size else 1.0)
    if f.h > scale_grid(R) * (1 + 1e-9):
        raise PreconditionError(f"grid spacing h={f.h:g} too coarse for R={R:g}; need h <= {scale_grid(R):g}")
    if not X.size:
        return np.zeros(0, dtype=complex)
    xi = f.xi
    out = np.empty(len(X), dtype=complex)
    if f.n == 2:
        step = max(1, CHUNK // len(xi))
        for s in range(0, len(X), step):
            x = X[s:s + step]
            phase = x[:, :1] * xi[None, :] + x[:, 1:2] * xi[None, :] ** 2
            out[s:s + step] = trapezoid(f.values[None, :] * np.exp(1j * phase), dx=f.h, axis=1)
    else:
        r2 = f.radius2()
        for i, x in enumerate(X):
            phase = x[0] * xi[:, None] + x[1] * xi[None, :] + x[2] * r2
            inner = trapezoid(f.values * np.exp(1j * phase), dx=f.h, axis=1)
            out[i] = trapezoid(inner, dx=f.h)
    return out


def richardson_check(f: FrequencyFunction, X, R: float | None = None) -> dict:
    """Compare Ef at spacing h with Ef at h/2; the change is relative to ‖f‖_1."""
    coarse = extension(f, X, R)
    fine = extension(f.refined(), X, R)
    scale = max(f.l1_norm(), 1e-300)
    rel = float(np.abs(fine - coarse).max() / scale) if len(coarse) else 0.0
    return {"coarse": coarse, "fine": fine, "relative_change": rel, "ok": rel < TAU_QUAD}


# ======================================================
# GEOMETRY
# ======================================================
@dataclass(frozen=True)
class PacketGeometry:
    R: int

    @property
    def sqrtR(self) -> int:
        return math.isqrt(self.R)

    @property
    def h(self) -> float:
        return scale_grid(self.R)

    @property
    def M(self) -> int:
        return 20 * self.R

    @property
    def w(self) -> float:
        return 1.0 / self.sqrtR

    @property
    def J(self) -> int:
        return 2 * self.sqrtR

    @property
    def rho(self) -> float:
        return self.w / 2

    @property
    def band(self) -> int:
        return 5 * self.sqrtR

    @property
    def D(self) -> float:
        return 4 * math.pi * self.sqrtR

    @property
    def L(self) -> int:
        return 5 * self.sqrtR

    @property
    def ls(self) -> np.ndarray:
        return np.arange(self.L) - self.L // 2

    @property
    def period(self) -> float:
        return 2 * math.pi / self.h

    def centre(self, j: int) -> float:
        return -1.0 + (j + 0.5) * self.w

    def core(self, j: int, l: int, xn):
        """x̄ of the tube core at height x_n."""
        return self.D * l - 2.0 * self.centre(j) * np.asarray(xn, dtype=float)

    def fft_size(self) -> int:
        return max(MIN_FFT, 1 << (2 * (self.M + 1) - 1).bit_length())


def check_scale(R) -> int:
    R = int(R)
    s = math.isqrt(R)
    if R < 4 or s * s != R or s & (s - 1):
        raise ParameterError(f"R={R} must be a power of 4 (so R^1/2 is a power of 2)")
    if R > MAX_R:
        raise ParameterError(f"R={R} exceeds {MAX_R}")
    return R


def cap_partition(geo: PacketGeometry) -> np.ndarray:
    """φ_θ on the ξ-grid, one row per cap; rows sum to 1."""
    xi = -1.0 + np.arange(geo.M + 1) * geo.h
    centres = geo.centre(np.arange(geo.J))
    d = xi[None, :] - centres[:, None]
    phi = np.where(np.abs(d) < geo.w, np.cos(np.pi * d / (2 * geo.w)) ** 2, 0.0)
    phi[0, xi <= centres[0]] = 1.0
    phi[-1, xi >= centres[-1]] = 1.0
    return phi


def kernel(omega, geo: PacketGeometry) -> np.ndarray:
    omega = np.asarray(omega, dtype=float)
    return np.where(np.abs(omega) <= geo.rho,
                    geo.D / (2 * math.pi) * np.cos(np.pi * omega / (2 * geo.rho)) ** 2, 0.0)


# ======================================================
# DECOMPOSITION
# ======================================================
@dataclass
class Packet:
    j: int
    l: int
    start: int
    values: np.ndarray

    @property
    def key(self) -> tuple:
        return (self.j, self.l)

    def mass(self, h: float) -> float:
        return float(np.sum(np.abs(self.values) ** 2) * h)


@dataclass
class WavePacketSet:
    R: int
    geometry: PacketGeometry
    packets: list
    f: FrequencyFunction
    checks: dict = field(default_factory=dict)

    n = 2

    def __len__(self):
        return len(self.packets)

    def reconstruct(self) -> np.ndarray:
        out = np.zeros(self.geometry.M + 1, dtype=complex)
        for p in self.packets:
            out[p.start:p.start + len(p.values)] += p.values
        return out

    def masses(self) -> np.ndarray:
        return np.array([p.mass(self.geometry.h) for p in self.packets])

    def dominant(self) -> Packet:
        return self.packets[int(np.argmax(self.masses()))]

    def by_key(self, key) -> Packet:
        for p in self.packets:
            if p.key == tuple(key):
                return p
        raise KeyError(key)

    def cap(self, j: int) -> list:
        return [p for p in self.packets if p.j == j]

    def tube(self, p: Packet) -> dict:
        geo = self.geometry
        c = geo.centre(p.j)
        return {"centre": c, "v": geo.D * p.l, "direction": (-2.0 * c, 1.0), "radius": geo.sqrtR}


def decompose(f: FrequencyFunction, R: int, tau_tail: float = TAU_TAIL, tau_rec: float = TAU_REC,
              kappa_max: float = KAPPA_MAX, max_checked: int = 16, strict: bool = True) -> WavePacketSet:
    """
    Split f into packets f_{θ,v} and check reconstruction, support in 3θ,
    tail decay off the widened tube and the L^p/L^2 comparison on w_{B_R}
    for the ``max_checked`` heaviest packets.
    """
    if f.n != 2:
        raise ParameterError(f"wave-packet decomposition supports n = 2 only, got n = {f.n}; "
                             "the extension operator accepts n = 3")
    R = check_scale(R)
    geo = PacketGeometry(R)
    if not math.isclose(f.h, geo.h, rel_tol=1e-12):
        raise PreconditionError(f"f must be sampled at h = 1/(10R) = {geo.h:g}, got {f.h:g}")
    phi = cap_partition(geo)
    h, D = geo.h, geo.D
    packets = []
    for j in range(geo.J):
        supp = np.flatnonzero(phi[j] > 0)
        I = np.arange(supp[0], supp[-1] + 1)
        g = f.values[I] * phi[j, I]
        if not np.any(g):
            continue
        O = np.arange(max(0, I[0] - geo.band), min(geo.M, I[-1] + geo.band) + 1)
        Kmat = h * kernel((O[:, None] - I[None, :]) * h, geo)
        ls = geo.ls
        G = g[None, :] * np.exp(1j * h * D * ls[:, None] * I[None, :])
        F = (G @ Kmat.T) * np.exp(-1j * h * D * ls[:, None] * O[None, :])
        packets.extend(Packet(j, int(l), int(O[0]), F[i]) for i, l in enumerate(ls))
    pset = WavePacketSet(R, geo, packets, f)
    if not packets:
        pset.checks = {"reconstruction": 0.0, "support": True, "tail": 0.0, "kappa": 0.0, "checked": []}
        return pset

    scale = max(float(np.abs(f.values).max()), 1e-300)
    rec = float(np.abs(pset.reconstruct() - f.values).max() / scale)
    xi = f.xi
    bad_support = []
    for p in packets:
        xs = xi[p.start:p.start + len(p.values)]
        off = np.abs(xs - geo.centre(p.j)) > 1.5 * geo.w + h / 2
        if np.any(off & (np.abs(p.values) > 0)):
            bad_support.append(p.key)

    order = np.argsort(-pset.masses(), kind="stable")[:max_checked]
    checked = [packets[i] for i in order]
    tails = {p.key: packet_tail(pset, p) for p in checked}
    kappas = {p.key: packet_kappa(pset, p) for p in checked}
    pset.checks = {
        "reconstruction": rec,
        "support": not bad_support,
        "tail": max(tails.values()),
        "kappa": max(kappas.values()),
        "checked": [list(p.key) for p in checked],
    }
    failures = []
    if rec > tau_rec:
        failures.append(("reconstruction", rec))
    if bad_support:
        failures.append(("support", bad_support[:8]))
    failures.extend(("tail", k, t) for k, t in tails.items() if t > tau_tail)
    failures.extend(("kappa", k, v) for k, v in kappas.items() if v > kappa_max)
    pset.checks["failures"] = failures
    logger.info("decompose R=%d: %d packets, rec=%.2e tail=%.2e kappa=%.3g",
                R, len(packets), rec, pset.checks["tail"], pset.checks["kappa"])
    if failures and strict:
        raise CertificateError(f"wave-packet checks failed: {failures[:4]}", report=pset.checks)
    return pset


# ======================================================
# SPATIAL PROFILES
# ======================================================
def _trap_weights(M: int) -> np.ndarray:
    wts = np.ones(M + 1)
    wts[0] = wts[-1] = 0.5
    return wts


def profile(geo: PacketGeometry, values: np.ndarray, start: int, xn: float, N: int | None = None):
    """Ef(·, x_n) on the full-period x̄ grid of spacing 2π/(hN); returns (x̄, values)."""
    N = N or geo.fft_size()
    h = geo.h
    idx = start + np.arange(len(values))
    xi = -1.0 + idx * h
    c = np.zeros(N, dtype=complex)
    c[idx] = h * _trap_weights(geo.M)[idx] * values * np.exp(1j * xn * xi ** 2)
    m = np.arange(N)
    P = geo.period
    xbar = np.where(m < N // 2, m, m - N) * (P / N)
    return xbar, N * sfft.ifft(c) * np.exp(-1j * xbar)


def _periodic_distance(x, centre, P):
    return np.abs(np.mod(x - centre + P / 2, P) - P / 2)


def packet_tail(pset: WavePacketSet, p: Packet) -> float:
    """max over heights {-R, -R/2, 0, R/2, R} of the |Ef|² fraction beyond 3D of the core."""
    geo = pset.geometry
    worst = 0.0
    for xn in np.array([-1.0, -0.5, 0.0, 0.5, 1.0]) * geo.R:
        x, E = profile(geo, p.values, p.start, xn)
        dens = np.abs(E) ** 2
        total = dens.sum()
        if total <= 0:
            continue
        near = _periodic_distance(x, geo.core(p.j, p.l, xn), geo.period) <= TAIL_RADII * geo.D
        worst = max(worst, float((total - dens[near].sum()) / total))
    return worst


def weight_BR(x: np.ndarray, R: float) -> np.ndarray:
    """(1 + dist(x, B_R)/R)^-100: flat on B_R, rapidly decreasing outside."""
    r = np.linalg.norm(np.atleast_2d(x), axis=-1)
    return (1.0 + np.maximum(r - R, 0.0) / R) ** -WEIGHT_POWER


def _weighted_norms(pset: WavePacketSet, values, start, ps) -> dict:
    geo = pset.geometry
    dxn = geo.sqrtR / 2
    heights = np.arange(-2.5 * geo.sqrtR, 2.5 * geo.sqrtR + 1) * dxn
    acc = {p: 0.0 for p in ps}
    for xn in heights:
        x, E = profile(geo, values, start, xn)
        wgt = weight_BR(np.column_stack([x, np.full_like(x, xn)]), geo.R)
        a = np.abs(E)
        dx = x[1] - x[0]
        for p in ps:
            acc[p] += float(np.sum(wgt * a ** p) * dx * dxn)
    return acc


def packet_norms(pset: WavePacketSet, p_: Packet, p: float) -> tuple[float, float]:
    """(‖Ef_T‖_{L^p(w_BR)}, ‖Ef_T‖_{L^2(w_BR)})."""
    acc = _weighted_norms(pset, p_.values, p_.start, (p, 2))
    return acc[p] ** (1 / p), acc[2] ** 0.5


def packet_kappa(pset: WavePacketSet, pk: Packet) -> float:
    """κ in ‖Ef_T‖_p <= κ R^((1/p - 1/2)(n+1)/2) ‖Ef_T‖_2 at p = 2(n+1)/(n-1)."""
    n = pset.n
    p = 2 * (n + 1) / (n - 1)
    lp, l2 = packet_norms(pset, pk, p)
    if l2 == 0:
        return 0.0
    return lp / (pset.R ** ((1 / p - 0.5) * (n + 1) / 2) * l2)


# ======================================================
# ORTHOGONALITY AND PARSEVAL
# ======================================================
def packet_orthogonality(pset: WavePacketSet) -> dict:
    """κ₃(θ) = Σ_v ‖f_{θ,v}‖² / ‖f φ_θ‖² per cap (Plancherel at any fixed height)."""
    geo = pset.geometry
    phi = cap_partition(geo)
    out = {}
    for j in sorted({p.j for p in pset.packets}):
        g2 = float(np.sum(np.abs(pset.f.values * phi[j]) ** 2) * geo.h)
        s = sum(p.mass(geo.h) for p in pset.cap(j))
        out[j] = s / g2 if g2 else 0.0
    return {"per_cap": out, "kappa3": max(out.values()) if out else 0.0}


def parseval_ratio(f: FrequencyFunction, R: int) -> float:
    """‖Ef‖²_{L²(w_BR)} / (R ‖f‖₂²) for a planar f at the scale grid of R."""
    R = check_scale(R)
    if f.n != 2:
        raise ParameterError(f"parseval_ratio needs the n = 2 decomposition, got n = {f.n}")
    pset = WavePacketSet(R, PacketGeometry(R), [], f)
    if not math.isclose(f.h, pset.geometry.h, rel_tol=1e-12):
        raise PreconditionError("f must be sampled at the scale grid")
    norm2 = f.l2_norm() ** 2
    if norm2 == 0:
        return 0.0
    acc = _weighted_norms(pset, f.values, 0, (2,))
    return acc[2] / (R * norm2)


# ======================================================
# LOCAL L2 AND REFINED DECOUPLING
# ======================================================
def _height_grid(geo: PacketGeometry, q: int = 2) -> np.ndarray:
    s = geo.sqrtR
    return (np.arange(-s, s)[:, None] * s + (np.arange(q)[None, :] + 0.5) * s / q).ravel()


def tube_cells(pset: WavePacketSet, p: Packet, radius: float | None = None) -> set:
    """R^(1/2)-cells (i1, i2) of B_R-height whose centres lie within ``radius`` (default D) of the core."""
    geo = pset.geometry
    s = geo.sqrtR
    radius = geo.D if radius is None else radius
    rows = np.arange(-s, s)
    zc = (rows + 0.5) * s
    cells = set()
    for r, z in zip(rows, zc):
        core = geo.core(p.j, p.l, z)
        lo, hi = math.floor((core - radius) / s), math.floor((core + radius) / s)
        for i in range(lo, hi + 1):
            if abs((i + 0.5) * s - core) <= radius:
                cells.add((i, int(r)))
    return cells


def local_l2_ratio(pset: WavePacketSet, shading: dict, lam: float | None = None) -> float:
    """
    ∫ |Σ_T Ef_T 1_{Y(T)}|² / (λ R ‖f‖₂²) with Y(T) a set of R^(1/2)-cells
    (i1, i2) per packet key.  λ defaults to max #Y(T) / R^(1/2).
    """
    geo = pset.geometry
    s = geo.sqrtR
    shading = {tuple(k): set(map(tuple, v)) for k, v in shading.items() if v}
    if not shading:
        return 0.0
    for key, Y in shading.items():
        p = pset.by_key(key)
        allowed = tube_cells(pset, p, TAIL_RADII * geo.D)
        if not Y <= allowed:
            raise PreconditionError(f"shading of packet {key} leaves its tube")
    lam = max(len(Y) for Y in shading.values()) / s if lam is None else float(lam)
    if any(len(Y) > lam * s + 1e-9 for Y in shading.values()):
        raise PreconditionError(f"a shading holds more than λR^(1/2) = {lam * s:g} cells")
    f_norm2 = pset.f.l2_norm() ** 2
    if lam <= 0 or f_norm2 == 0:
        return 0.0
    heights = _height_grid(geo)
    rows = np.floor(heights / s).astype(np.int64)
    N = geo.fft_size()
    S = None
    for key, Y in shading.items():
        p = pset.by_key(key)
        by_row = {}
        for i1, i2 in Y:
            by_row.setdefault(i2, []).append(i1)
        for hi, (xn, r) in enumerate(zip(heights, rows)):
            if r not in by_row:
                continue
            x, E = profile(geo, p.values, p.start, xn, N)
            if S is None:
                S = np.zeros((len(heights), N), dtype=complex)
            mask = np.isin(np.floor(x / s).astype(np.int64), by_row[r])
            S[hi] += np.where(mask, E, 0.0)
    if S is None:
        return 0.0
    dx = geo.period / N
    integral = float(np.sum(np.abs(S) ** 2) * dx * (s / 2))
    return integral / (lam * geo.R * f_norm2)


def comparable_packets(pset: WavePacketSet, packets=None, p: float | None = None) -> list:
    """Packets whose ‖Ef_T‖_{L^p(w_BR)} share one dyadic band (the heaviest band by Σ norm^p)."""
    packets = list(pset.packets if packets is None else packets)
    p = p or 2 * (pset.n + 1) / (pset.n - 1)
    norms = [packet_norms(pset, q, p)[0] for q in packets]
    live = [i for i, v in enumerate(norms) if v > 0]
    if not live:
        return []
    ph = dyadic_pigeonhole(live, weight=[norms[i] ** p for i in live], key=[norms[i] for i in live])
    return [packets[i] for i in ph.items]


def refined_decoupling_ratio(pset: WavePacketSet, X=None, p: float | None = None, packets=None) -> dict:
    """
    ‖Ef‖_{L^p(X)}^p / (M^(2/(n-1)) Σ_T ‖Ef_T‖_{L^p(w_BR)}^p), f = Σ of ``packets``.

    X is a set of R^(1/2)-cells (default: the cells inside B_R); M is the
    largest number of tubes (radius D) meeting one cell of X.
    """
    geo = pset.geometry
    s = geo.sqrtR
    n = pset.n
    p = p or 2 * (n + 1) / (n - 1)
    packets = list(pset.packets if packets is None else packets)
    if X is None:
        X = {(i1, i2) for i1 in range(-s, s) for i2 in range(-s, s)
             if max(abs(i1), abs(i1 + 1)) ** 2 + max(abs(i2), abs(i2 + 1)) ** 2 <= s * s}
    X = set(map(tuple, X))
    if not packets or not X:
        return {"ratio": 0.0, "M": 0, "numerator": 0.0, "denominator": 0.0}
    norms = np.array([packet_norms(pset, q, p)[0] for q in packets])
    if not norms.any():
        return {"ratio": 0.0, "M": 0, "numerator": 0.0, "denominator": 0.0}
    live = norms[norms > 0]
    spread = float(live.max() / live.min())
    if spread > 2.0:
        raise PreconditionError(f"packet norms are not comparable: spread {spread:.3g} > 2")
    counts = {}
    for q in packets:
        for cell in tube_cells(pset, q) & X:
            counts[cell] = counts.get(cell, 0) + 1
    M = max(counts.values()) if counts else 1

    N = geo.fft_size()
    heights = _height_grid(geo)
    rows = np.floor(heights / s).astype(np.int64)
    cols_by_row = {}
    for i1, i2 in X:
        cols_by_row.setdefault(i2, []).append(i1)
    num = 0.0
    dx = geo.period / N
    for xn, r in zip(heights, rows):
        if r not in cols_by_row:
            continue
        total = np.zeros(N, dtype=complex)
        for q in packets:
            x, E = profile(geo, q.values, q.start, xn, N)
            total += E
        mask = np.isin(np.floor(x / s).astype(np.int64), cols_by_row[r])
        num += float(np.sum(np.abs(total[mask]) ** p) * dx * (s / 2))
    den = M ** (2 / (n - 1)) * float(np.sum(norms ** p))
    ratio = num / den if den else 0.0
    logger.info("refined decoupling R=%d: M=%d ratio=%.4g", geo.R, M, ratio)
    return {"ratio": ratio, "M": int(M), "numerator": num, "denominator": den, "spread": spread}


# ======================================================
# KHINTCHINE / KAKEYA
# ======================================================
def _tube_cell_counts(geo: PacketGeometry, tubes) -> dict:
    s = geo.sqrtR
    counts = {}
    for j, v in tubes:
        c = geo.centre(j)
        for r in range(-s, s):
            z = (r + 0.5) * s
            core = v - 2.0 * c * z
            for i in range(math.floor((core - s) / s), math.floor((core + s) / s) + 1):
                xc = (i + 0.5) * s
                if abs(xc - core) <= s and xc * xc + z * z <= geo.R ** 2:
                    counts[(i, r)] = counts.get((i, r), 0) + 1
    return counts


def khintchine_kakeya_experiment(R: int, p0, trials: int = 8, seed: int = 0, family="full",
                                 slack: float = 0.2) -> dict:
    """
    One packet per cap, f = Σ_θ a_θ f_θ with random signs and |Ef_θ| ~ R^-1 on
    its tube.  Reports the overlap integral ∫|Σ_T 1_T|^(p0/2) over R^(1/2)-cells,
    the square-function integral ∫(Σ|Ef_θ|²)^(p0/2) and the mean over trials
    of ∫|Ef|^(p0), all over B_R.

    ``family``: "full" (every cap, tubes through random points of B_{R/2}),
    "bush" (every cap, all tubes through the origin), or a list of (j, v).
    """
    R = check_scale(R)
    geo = PacketGeometry(R)
    p0 = float(p0)
    rng = np.random.default_rng([int(seed), 0])
    if family == "full":
        tubes = [(j, float(rng.uniform(-R / 2, R / 2))) for j in range(geo.J)]
    elif family == "bush":
        tubes = [(j, 0.0) for j in range(geo.J)]
    else:
        tubes = [(int(j), float(v)) for j, v in family]
    counts = _tube_cell_counts(geo, tubes)
    combinatorial = float(sum(c ** (p0 / 2) for c in counts.values()) * R)
    peak = max(counts, key=counts.get) if counts else None

    phi = cap_partition(geo)
    xi = -1.0 + np.arange(geo.M + 1) * geo.h
    N = geo.fft_size()
    heights = _height_grid(geo)
    fields = []
    for j, v in tubes:
        vals = phi[j] * np.exp(-1j * xi * v) / (geo.w * R)
        rows = []
        for xn in heights:
            x, E = profile(geo, vals, 0, xn, N)
            rows.append(E)
        fields.append(np.array(rows))
    fields = np.array(fields)
    inside = (x[None, :] ** 2 + heights[:, None] ** 2) <= R ** 2
    dA = (geo.period / N) * (geo.sqrtR / 2)
    square = float(np.sum(np.sum(np.abs(fields) ** 2, axis=0)[inside] ** (p0 / 2)) * dA)
    sums = []
    for t in range(trials):
        a = np.random.default_rng([int(seed), t + 1]).choice([-1.0, 1.0], size=len(tubes))
        Ef = np.tensordot(a, fields, axes=1)
        sums.append(float(np.sum(np.abs(Ef[inside]) ** p0) * dA))
    mean = float(np.mean(sums))
    bound = R ** p0 * R ** slack
    return {
        "R": R, "p0": p0, "tubes": len(tubes), "combinatorial": combinatorial,
        "combinatorial_bound": bound, "combinatorial_ok": combinatorial <= bound,
        "peak_cell": peak, "peak_multiplicity": counts.get(peak, 0) if peak else 0,
        "square_function": square, "square_function_scaled": square * R ** p0,
        "random_sign_mean": mean, "khintchine_ratio": mean / square if square else 0.0,
        "trials": sums,
    }


# ======================================================
# FIELD IO
# ======================================================
def save_field(path, values, n: int, R: float, h: float) -> Path:
    """Header (JSON: n, R, h, dims) then little-endian complex64, row-major."""
    arr = np.ascontiguousarray(np.asarray(values, dtype="<c8"))
    header = json.dumps({"n": int(n), "R": float(R), "h": float(h), "dims": list(arr.shape)},
                        sort_keys=True).encode()
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(FIELD_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(arr.tobytes(order="C"))
    return path


def load_field(path) -> tuple[dict, np.ndarray]:
    with open(path, "rb") as fh:
        if fh.read(4) != FIELD_MAGIC:
            raise ParameterError(f"{path} is not a field file")
        (size,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(size))
        data = np.frombuffer(fh.read(), dtype="<c8")
    return header, data.reshape(header["dims"])
