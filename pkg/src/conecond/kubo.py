"""Linear-response integrals and the eta -> 0 conductivity extraction.

All response functions are evaluated in the frequency domain: the time
integrals behind them are done analytically per spectral pair, so a k-point
contributes a closed sum over occupied/unoccupied band pairs.  For

    f_jl(eta) = (i/(2pi)^2) int dk int_{-inf}^0 dt e^{eta t}
                Tr(J_j(k) [P_mu(k), e^{iHt} J_l(k) e^{-iHt}])

inserting the eigenbasis and integrating e^{(eta + i Delta) t} gives, per k,

    sum_{q occ, p unocc} (2 Delta Re z - 2 eta Im z) / (eta^2 + Delta^2),
    z = (J_j)_{pq} (J_l)_{qp},   Delta = Lambda_q - Lambda_p < 0,

where the pair sum has already been reduced to a manifestly real form (the
imaginary parts of the two orderings cancel algebraically, so the "imaginary
residue" of the evaluation is identically zero).  The even extension
ftilde_jj and the two-band cone-neighborhood integrals f_sing and zeta are
separate code paths used to cross-validate f_jl and each other.

Conductivity extraction uses the pair estimator

    sigma_hat(eta) = (f(2 eta) - f(eta)) / eta,

which cancels the unknown f(0+) exactly; for f = f(0+) + sigma eta + c eta^2
it returns sigma + 3 c eta, so a final Richardson step over the sigma_hat
sequence removes the remaining linear term.  Both members of each pair are
evaluated on the same grid so that quadrature error largely cancels in the
difference.

k-sums are accumulated with a fixed-shape pairwise (tree) reduction, making
results bit-stable under any chunked evaluation order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bloch import HoppingModel
from .cones import (
    FermiPoint,
    characterize_cones,
    default_epsilon,
    neighborhoods_disjoint,
    EpsilonTooLarge,
)
from .lattice import KGrid, refined_grid, uniform_grid

__all__ = [
    "DegeneratePoint",
    "GridTooCoarse",
    "TwoBandIsolationFailed",
    "Gapless",
    "NotConverged",
    "KuboEstimate",
    "ConductivityReport",
    "GridPolicy",
    "default_eta_sequence",
    "fjl_eta",
    "ftilde_jj",
    "schwinger",
    "fjj_sing",
    "zeta_jj",
    "sigma_hat_sequence",
    "richardson_extrapolate",
    "sigma_kubo",
    "sigma_hall",
    "closed_form_report",
]

#: grid points with Fermi-level gap below this are rejected as degenerate
_DEGENERACY_FLOOR = 1e-12
#: finite-difference step for eigenvalue second derivatives (zeta integrand)
DEFAULT_FD_STEP = 1e-5
#: chunk size for batched eigen-decompositions (memory control)
_CHUNK = 8192
#: convergence of the sigma_hat sequence: 2% relative, with a small absolute
#: floor so that estimates decaying to zero (gapped models) can converge
_CONV_RTOL = 0.02
_CONV_ATOL = 1e-4


class DegeneratePoint(ValueError):
    """A grid point carries a Fermi-level band degeneracy; the occupied/
    unoccupied split is undefined there."""


class GridTooCoarse(ValueError):
    """Grid spacing near a cone cannot resolve the Lorentzian of width eta."""


class TwoBandIsolationFailed(ValueError):
    """A third band enters the sampled cone neighborhood; shrink eps."""


class Gapless(ValueError):
    """Operation requires a gapped model but cones/near-closures were found."""


class NotConverged(RuntimeError):
    """The sigma_hat sequence did not converge; the partial report is
    attached as the ``report`` attribute."""

    def __init__(self, message: str, report: "ConductivityReport"):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class KuboEstimate:
    """One evaluated response quantity at one eta.

    ``quantity`` tags which integral this is (f_jl | ftilde_jj | f_sing |
    zeta | schwinger), ``grid`` is a human-readable quadrature descriptor,
    and ``quad_error`` estimates the quadrature error from the difference
    against a coarsened companion evaluation (floored at roundoff scale when
    no companion was supplied).
    """

    value: float
    eta: float
    quantity: str
    grid: str
    quad_error: float

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise ValueError("estimate value must be finite")
        if not self.quad_error >= 0:
            raise ValueError("quad_error must be nonnegative")


@dataclass(frozen=True)
class ConductivityReport:
    """Conductivity result with its provenance.

    ``sigma`` maps direction pairs (j, l) to the final estimate;
    ``method`` is "closed_form" or "kubo_extrapolation".  Kubo reports carry
    the per-eta estimator sequence [(eta, sigma_hat, quad_error), ...] and a
    convergence flag per direction pair; closed-form reports carry per-cone
    contributions per direction.  ``diagnostics`` holds scan/grid metadata.
    """

    method: str
    sigma: dict
    converged: dict = field(default_factory=dict)
    per_eta: dict = field(default_factory=dict)
    per_cone: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.method == "closed_form":
            for (j, l), v in self.sigma.items():
                if j == l and v < 0:
                    raise ValueError(
                        "closed-form longitudinal conductivity must be "
                        f"nonnegative, got sigma_{j}{j} = {v}"
                    )


def _tree_sum(values: np.ndarray) -> float:
    """Pairwise summation with a fixed reduction tree (bit-stable)."""
    a = np.asarray(values, dtype=float).ravel()
    if a.size == 0:
        return 0.0
    while a.size > 1:
        if a.size % 2:
            a = np.append(a, 0.0)
        a = a[0::2] + a[1::2]
    return float(a[0])


def _max_current_norm(model: HoppingModel, nsample: int = 48) -> float:
    """max Frobenius norm of dH/dk_j over a coarse momentum sample (an upper
    bound on the operator norm, hence on the band slopes)."""
    f = (np.arange(nsample) + 0.5) / nsample - 0.5
    F1, F2 = np.meshgrid(f, f, indexing="ij")
    ks = np.column_stack([F1.ravel(), F2.ravel()]) @ model.lattice.dual_matrix.T
    out = 0.0
    for j in (1, 2):
        J = model.dh_batch(ks, j)
        out = max(out, float(np.sqrt((np.abs(J) ** 2).sum(axis=(1, 2)).max())))
    return out


def default_eta_sequence(model: HoppingModel, count: int = 5) -> list:
    """Halving eta sequence tied to the model energy scale:
    {0.2, 0.1, 0.05, ...} x (spectral radius / 10)."""
    scale = model.spectral_radius() / 10.0
    return [0.2 * scale / 2**i for i in range(count)]


@dataclass(frozen=True)
class GridPolicy:
    """Momentum-grid construction for Lorentzian-resolving integrals.

    A uniform ``base`` x ``base`` midpoint grid is refined around the cone
    locations by chained single-level quad-tree passes with shrinking radii
    R_level = max(R_outer / 2^level, R_core), where R_outer is
    ``outer_radius_factor`` times the smaller dual-basis norm and
    R_core = ``core_radius_slope`` * eta / sqrt(lambda*) is the region whose
    gap falls below ~8 eta.  Levels are added until the refined spacing
    satisfies spacing <= eta sqrt(lambda*) / (``spacing_slope`` * max|dH|),
    i.e. until the half-width-eta Lorentzian is resolved.  The graded shell
    of intermediate radii avoids a resolution cliff at the core boundary.

    ``grids_for`` also returns a coarsened companion (half the base
    subdivision, one fewer refinement level) whose difference against the
    fine result serves as the quadrature-error estimate.
    """

    base: int = 96
    outer_radius_factor: float = 0.35
    core_radius_slope: float = 8.0
    spacing_slope: float = 8.0
    max_levels: int = 18

    def _radii_schedule(self, model: HoppingModel, cones, eta: float) -> list:
        lat = model.lattice
        b1n = float(np.linalg.norm(lat.b1))
        b2n = float(np.linalg.norm(lat.b2))
        lam_sqrt = np.sqrt(min(c.lambda_star for c in cones))
        jmax = _max_current_norm(model)
        r_outer = self.outer_radius_factor * min(b1n, b2n)
        r_core = self.core_radius_slope * eta / lam_sqrt
        target = eta * lam_sqrt / (self.spacing_slope * jmax)
        spacing = max(b1n, b2n) / self.base
        radii = []
        level = 1
        while spacing > target and level <= self.max_levels:
            radii.append(max(r_outer / 2**level, r_core))
            spacing /= 2.0
            level += 1
        return radii

    def grids_for(self, model: HoppingModel, cones, eta: float):
        """(fine, companion) quadrature grids for the given eta."""
        lat = model.lattice
        fine = uniform_grid(lat, self.base, self.base)
        coarse = uniform_grid(lat, max(self.base // 2, 2), max(self.base // 2, 2))
        if not cones:
            return fine, coarse
        centers = [c.omega for c in cones]
        radii = self._radii_schedule(model, cones, eta)
        for r in radii:
            fine = refined_grid(lat, fine, centers, r, 1)
        for r in radii[:-1]:
            coarse = refined_grid(lat, coarse, centers, r, 1)
        return fine, coarse


# -- frequency-domain grid integrals ----------------------------------------

def _grid_spacing_cart(grid: KGrid) -> np.ndarray:
    """Per-point cartesian cell extent (max over the two cell edges)."""
    lat = grid.lattice
    return np.maximum(
        grid.size[:, 0] * np.linalg.norm(lat.b1),
        grid.size[:, 1] * np.linalg.norm(lat.b2),
    )


def _pair_sum_on_grid(model: HoppingModel, eta2: float, eta_odd: float,
                      j: int, l: int, grid: KGrid, gate_eta: float | None):
    """Per-point occupied/unoccupied pair sums of the Lorentzian-weighted
    current matrix elements; the workhorse behind f_jl and ftilde.

    Computes sum over (q occ, p unocc) of
        (2 Delta Re z - 2 eta_odd Im z) / (eta2 + Delta^2),
    z = (J_j)_{pq} (J_l)_{qp}, Delta = Lambda_q - Lambda_p, per grid point.
    ``eta2`` enters only squared quantities, so passing eta_odd = 0 yields a
    function exactly even in eta.  ``gate_eta`` enables the near-cone
    resolution check (GridTooCoarse) for that Lorentzian width.
    """
    mu = model.fermi_energy
    npts = len(grid)
    per_k = np.zeros(npts)
    spacing = _grid_spacing_cart(grid)
    jmax = 0.0
    worst_spacing = 0.0
    N = model.norbitals
    for lo in range(0, npts, _CHUNK):
        sl = slice(lo, min(lo + _CHUNK, npts))
        ks = grid.points[sl]
        w, V = np.linalg.eigh(model.h_batch(ks))
        counts = (w <= mu).sum(axis=1)
        inner = (counts > 0) & (counts < N)
        if inner.any():
            mm = counts[inner]
            idx = np.nonzero(inner)[0]
            gaps = w[idx, mm] - w[idx, mm - 1]
            if gaps.min() < _DEGENERACY_FLOOR:
                k_bad = ks[idx[gaps.argmin()]]
                raise DegeneratePoint(
                    f"Fermi-level degeneracy (gap {gaps.min():.3e}) at grid "
                    f"point k=({k_bad[0]:.6f}, {k_bad[1]:.6f})"
                )
            if gate_eta is not None:
                near = gaps < 4.0 * gate_eta
                if near.any():
                    worst_spacing = max(
                        worst_spacing, float(spacing[sl][idx[near]].max())
                    )
        Jj = model.dh_batch(ks, j)
        Jl = Jj if l == j else model.dh_batch(ks, l)
        for J in (Jj, Jl):
            jmax = max(jmax, float(np.sqrt((np.abs(J) ** 2).sum(axis=(1, 2)).max())))
        Vh = V.conj().transpose(0, 2, 1)
        Aj = Vh @ Jj @ V
        Al = Aj if l == j else Vh @ Jl @ V
        occ = np.arange(N)[None, :] < counts[:, None]
        pair = occ[:, :, None] & ~occ[:, None, :]          # (k, q, p)
        delta = w[:, :, None] - w[:, None, :]              # Lambda_q - Lambda_p
        z = Aj.transpose(0, 2, 1) * Al                     # (J_j)_{pq} (J_l)_{qp}
        num = 2.0 * delta * z.real - 2.0 * eta_odd * z.imag
        terms = np.where(pair, num / (eta2 + delta * delta), 0.0)
        per_k[sl] = terms.sum(axis=(1, 2))
    if gate_eta is not None and worst_spacing * jmax > gate_eta / 4.0:
        raise GridTooCoarse(
            f"near-cone spacing {worst_spacing:.3e} x slope {jmax:.3e} "
            f"exceeds eta/4 = {gate_eta / 4.0:.3e}; refine the grid"
        )
    return per_k


def _quad_floor(value: float) -> float:
    return 1e-14 * (1.0 + abs(value))


def fjl_eta(model: HoppingModel, eta: float, j: int, l: int, grid: KGrid,
            companion: KGrid | None = None, cones=None) -> KuboEstimate:
    """Current-current response f_jl(eta) on a quadrature grid.

    Frequency-domain evaluation of the damped time integral (see module
    docstring); requires eta > 0.  For j = l the per-point pair sum is
    manifestly nonpositive; that sign is checked on every evaluation.  The
    quadrature error is estimated against the ``companion`` grid when given.

    When ``cones`` is passed (the caller vouches the grid was built to
    resolve those crossings), the near-crossing resolution gate is armed:
    GridTooCoarse is raised if any point whose Fermi gap is below 4 eta
    sits in a cell too wide to resolve the eta-Lorentzian.  Without cone
    information the gate stays off, so method-vs-method comparisons on a
    shared coarse grid remain possible.  DegeneratePoint is raised on a
    Fermi-level band degeneracy regardless.
    """
    if eta <= 0:
        raise ValueError("eta must be positive (use ftilde_jj for eta -> 0)")
    if j not in (1, 2) or l not in (1, 2):
        raise ValueError("direction indices must be 1 or 2")

    def evaluate(g: KGrid, gate: bool) -> float:
        # the resolution gate protects the primary estimate; the companion
        # grid is deliberately coarser and serves only the error estimate
        per_k = _pair_sum_on_grid(model, eta * eta, eta, j, l, g,
                                  gate_eta=eta if gate else None)
        if j == l:
            tol = 1e-12 * max(1.0, float(np.abs(per_k).max(initial=0.0)))
            if per_k.max(initial=0.0) > tol:
                raise RuntimeError(
                    "longitudinal integrand lost its definite sign "
                    f"(max {per_k.max():.3e}); numerical failure"
                )
        return _tree_sum(per_k * g.weights) / (2.0 * np.pi) ** 2

    value = evaluate(grid, cones is not None)
    quad = abs(value - evaluate(companion, False)) if companion is not None else 0.0
    return KuboEstimate(
        value=value,
        eta=eta,
        quantity="f_jl",
        grid=grid.describe(),
        quad_error=max(quad, _quad_floor(value)),
    )


def ftilde_jj(model: HoppingModel, eta: float, j: int, grid: KGrid,
              companion: KGrid | None = None, cones=None) -> KuboEstimate:
    """Even-in-eta extension of the longitudinal response,

        ftilde_jj(eta) = (2/(2pi)^2) int dk sum_{q<=m<p}
                         (Lambda_q - Lambda_p) / (eta^2 + (Lambda_q-Lambda_p)^2)
                         |(J_j)_{pq}|^2.

    Deliberately a code path independent of fjl_eta — the pair sum is
    assembled from abs-squared matrix elements over the explicit
    occupied x unoccupied index sets, never from complex products — so the
    agreement fjl_eta(eta, j, j) = ftilde_jj(eta) is a genuine cross-check.
    eta enters only squared, making the function exactly even (bit-identical
    under eta -> -eta); eta = 0 is allowed for gapped models.  The
    near-crossing resolution gate (GridTooCoarse) is armed only when
    ``cones`` is passed, as in fjl_eta.
    """
    if j not in (1, 2):
        raise ValueError("direction index must be 1 or 2")
    mu = model.fermi_energy
    N = model.norbitals
    eta2 = eta * eta

    def evaluate(g: KGrid, gate: bool) -> float:
        npts = len(g)
        per_k = np.zeros(npts)
        spacing = _grid_spacing_cart(g)
        jmax = 0.0
        worst_spacing = 0.0
        for lo in range(0, npts, _CHUNK):
            sl = slice(lo, min(lo + _CHUNK, npts))
            ks = g.points[sl]
            w, V = np.linalg.eigh(model.h_batch(ks))
            counts = (w <= mu).sum(axis=1)
            inner = (counts > 0) & (counts < N)
            if inner.any():
                mm = counts[inner]
                idx = np.nonzero(inner)[0]
                gaps = w[idx, mm] - w[idx, mm - 1]
                if gaps.min() < _DEGENERACY_FLOOR:
                    raise DegeneratePoint(
                        f"Fermi-level degeneracy (gap {gaps.min():.3e}) on grid"
                    )
                if gate and eta != 0.0:
                    near = gaps < 4.0 * abs(eta)
                    if near.any():
                        worst_spacing = max(
                            worst_spacing, float(spacing[sl][idx[near]].max())
                        )
            Jj = model.dh_batch(ks, j)
            jmax = max(
                jmax, float(np.sqrt((np.abs(Jj) ** 2).sum(axis=(1, 2)).max()))
            )
            me2 = np.abs(V.conj().transpose(0, 2, 1) @ Jj @ V) ** 2
            band = np.arange(N)
            occ_q = band[None, :, None] < counts[:, None, None]
            unocc_p = band[None, None, :] >= counts[:, None, None]
            delta = w[:, :, None] - w[:, None, :]
            denom = eta2 + delta * delta
            # at eta = 0 the (excluded) diagonal would be 0/0; divide only
            # where the denominator is nonzero
            lorentz = np.divide(
                delta, denom, out=np.zeros_like(delta), where=denom > 0.0
            )
            # |(J_j)_{pq}|^2 = me2[p, q]; index as [q, p] via the transpose
            contrib = np.where(
                occ_q & unocc_p, lorentz * me2.transpose(0, 2, 1), 0.0
            )
            per_k[sl] = 2.0 * contrib.sum(axis=(1, 2))
        if gate and eta != 0.0 and worst_spacing * jmax > abs(eta) / 4.0:
            raise GridTooCoarse(
                f"near-cone spacing {worst_spacing:.3e} x slope {jmax:.3e} "
                f"exceeds eta/4 = {abs(eta) / 4.0:.3e}; refine the grid"
            )
        return _tree_sum(per_k * g.weights) / (2.0 * np.pi) ** 2

    value = evaluate(grid, cones is not None)
    quad = abs(value - evaluate(companion, False)) if companion is not None else 0.0
    return KuboEstimate(
        value=value,
        eta=float(eta),
        quantity="ftilde_jj",
        grid=grid.describe(),
        quad_error=max(quad, _quad_floor(value)),
    )


def schwinger(model: HoppingModel, j: int, l: int, grid: KGrid,
              companion: KGrid | None = None) -> KuboEstimate:
    """Schwinger term s_jl = (1/(2pi)^2) int dk Tr(d^2H/dk_j dk_l P_mu(k))."""
    if j not in (1, 2) or l not in (1, 2):
        raise ValueError("direction indices must be 1 or 2")
    mu = model.fermi_energy
    N = model.norbitals

    def evaluate(g: KGrid) -> float:
        npts = len(g)
        per_k = np.zeros(npts)
        imag_max = 0.0
        for lo in range(0, npts, _CHUNK):
            sl = slice(lo, min(lo + _CHUNK, npts))
            ks = g.points[sl]
            w, V = np.linalg.eigh(model.h_batch(ks))
            counts = (w <= mu).sum(axis=1)
            inner = (counts > 0) & (counts < N)
            if inner.any():
                mm = counts[inner]
                idx = np.nonzero(inner)[0]
                gaps = w[idx, mm] - w[idx, mm - 1]
                if gaps.min() < _DEGENERACY_FLOOR:
                    raise DegeneratePoint(
                        f"Fermi-level degeneracy (gap {gaps.min():.3e}) on grid"
                    )
            occ = np.arange(N)[None, :] < counts[:, None]
            P = (V * occ[:, None, :]) @ V.conj().transpose(0, 2, 1)
            D2 = model.d2h_batch(ks, j, l)
            tr = np.einsum("kab,kba->k", D2, P)
            imag_max = max(imag_max, float(np.abs(tr.imag).max(initial=0.0)))
            per_k[sl] = tr.real
        scale = max(1.0, float(np.abs(per_k).max(initial=0.0)))
        if imag_max > 1e-9 * scale:
            raise RuntimeError(
                f"trace of Hermitian product acquired imaginary part {imag_max:.3e}"
            )
        return _tree_sum(per_k * g.weights) / (2.0 * np.pi) ** 2

    value = evaluate(grid)
    quad = abs(value - evaluate(companion)) if companion is not None else 0.0
    return KuboEstimate(
        value=value,
        eta=0.0,
        quantity="schwinger",
        grid=grid.describe(),
        quad_error=max(quad, _quad_floor(value)),
    )


# -- cone-neighborhood (B_eps) integrals -------------------------------------

def _elliptic_polar_nodes(cone: FermiPoint, eps: float, eta: float,
                          ntheta: int, order: int):
    """Quadrature for int_{B_eps} dk: map k = omega + (eps/2) Q^{-1/2} u with
    u = rho (cos t, sin t), so B_eps is exactly rho < 1.

    Radial panels halve geometrically down to rho_core (the scale where the
    Lorentzian denominator saturates at eta), then one final panel spans
    [0, rho_core]; each panel carries Gauss-Legendre nodes, and the angle is
    a uniform midpoint rule (spectrally accurate for periodic integrands).
    Returns (offsets from omega, weights).
    """
    lam, U = np.linalg.eigh(cone.Q)
    q_inv_sqrt = (U / np.sqrt(lam)[None, :]) @ U.T
    jac = (eps / 2.0) ** 2 / np.sqrt(lam[0] * lam[1])

    rho_core = max(min(1.0, 8.0 * abs(eta) / eps) / 8.0, 1e-4)
    edges = [1.0]
    while edges[-1] / 2.0 > rho_core:
        edges.append(edges[-1] / 2.0)
    edges.append(rho_core)
    gl_x, gl_w = np.polynomial.legendre.leggauss(order)
    rho, wrho = [], []
    panels = [(edges[i + 1], edges[i]) for i in range(len(edges) - 1)]
    panels.append((0.0, rho_core))
    for a, b in panels:
        rho.append(0.5 * (b - a) * gl_x + 0.5 * (a + b))
        wrho.append(0.5 * (b - a) * gl_w)
    rho = np.concatenate(rho)
    wrho = np.concatenate(wrho)

    theta = 2.0 * np.pi * (np.arange(ntheta) + 0.5) / ntheta
    wtheta = 2.0 * np.pi / ntheta

    R, T = np.meshgrid(rho, theta, indexing="ij")
    u = R[..., None] * np.stack([np.cos(T), np.sin(T)], axis=-1)
    offsets = (eps / 2.0) * u.reshape(-1, 2) @ q_inv_sqrt.T
    weights = (jac * wtheta * (R * wrho[:, None])).ravel()
    return offsets, weights


def _two_band_data(model: HoppingModel, ks: np.ndarray):
    """Eigen-data of the straddling band pair on a batch: (lam_lo, lam_hi,
    band indices m-1/m per point, full (w, V), isolation margin)."""
    mu = model.fermi_energy
    w, V = np.linalg.eigh(model.h_batch(ks))
    N = w.shape[1]
    counts = np.clip((w <= mu).sum(axis=1), 1, N - 1)
    idx = np.arange(w.shape[0])
    lam_lo = w[idx, counts - 1]
    lam_hi = w[idx, counts]
    if N > 2:
        dist_all = np.abs(w - mu)
        dist_all[idx, counts - 1] = np.inf
        dist_all[idx, counts] = np.inf
        third = dist_all.min()
    else:
        third = np.inf
    return lam_lo, lam_hi, counts, w, V, third


def _check_isolation(third: float, lam_lo, lam_hi, mu: float) -> None:
    window = max(float(np.abs(lam_lo - mu).max()), float(np.abs(lam_hi - mu).max()))
    if third <= 2.0 * window:
        raise TwoBandIsolationFailed(
            f"third band comes within {third:.3e} of the Fermi level, not "
            f"more than twice the sampled cone window {window:.3e}; shrink eps"
        )


def _require_disjoint(model: HoppingModel, cones, eps: float) -> None:
    if eps <= 0:
        raise ValueError("eps must be positive")
    if cones and not neighborhoods_disjoint(cones, model.lattice, eps):
        raise EpsilonTooLarge(
            f"cone neighborhoods overlap at eps = {eps:.6g}; shrink eps"
        )


def fjj_sing(model: HoppingModel, cones, eta: float, j: int,
             eps: float | None = None, ntheta: int = 64,
             order: int = 12) -> KuboEstimate:
    """Singular (cone-neighborhood) part of the longitudinal response:

        (2/(2pi)^2) sum_l int_{B_eps^(l)} dk
            (Lambda_- - Lambda_+) / (eta^2 + (Lambda_- - Lambda_+)^2)
            |<lower| J_j |upper>|^2,

    restricted exactly to the two bands straddling the Fermi level.  Even in
    eta.  An empty cone list integrates over an empty domain (zero).  Raises
    EpsilonTooLarge / TwoBandIsolationFailed when eps is not admissible.
    """
    if j not in (1, 2):
        raise ValueError("direction index must be 1 or 2")
    if not cones:
        return KuboEstimate(0.0, float(eta), "f_sing", "empty domain", 0.0)
    if eps is None:
        eps = default_epsilon(cones, model.lattice)
    _require_disjoint(model, cones, eps)

    def evaluate(nt: int, og: int) -> float:
        total_terms = []
        for cone in cones:
            offsets, wq = _elliptic_polar_nodes(cone, eps, eta, nt, og)
            ks = cone.omega[None, :] + offsets
            lam_lo, lam_hi, counts, w, V, third = _two_band_data(model, ks)
            _check_isolation(third, lam_lo, lam_hi, model.fermi_energy)
            idx = np.arange(ks.shape[0])
            Jj = model.dh_batch(ks, j)
            A = V.conj().transpose(0, 2, 1) @ Jj @ V
            me2 = np.abs(A[idx, counts - 1, counts]) ** 2
            d = lam_hi - lam_lo
            integrand = -2.0 * d / (eta * eta + d * d) * me2 / (2.0 * np.pi) ** 2
            total_terms.append(integrand * wq)
        return _tree_sum(np.concatenate(total_terms))

    value = evaluate(ntheta, order)
    coarse = evaluate(max(8, ntheta // 2), max(4, order - 4))
    return KuboEstimate(
        value=value,
        eta=float(eta),
        quantity="f_sing",
        grid=f"elliptic-polar {ntheta} angles, GL{order} radial panels",
        quad_error=max(abs(value - coarse), _quad_floor(value)),
    )


def zeta_jj(model: HoppingModel, cones, eta: float, j: int,
            eps: float | None = None, ntheta: int = 64, order: int = 12,
            fd_step: float = DEFAULT_FD_STEP) -> KuboEstimate:
    """Eigenvalue-only counterpart of fjj_sing on the cone neighborhoods:

        (1/(2pi)^2) sum_l int_{B_eps^(l)} dk
            -(Lambda_+ - Lambda_-) / (eta^2 + (Lambda_+ - Lambda_-)^2)
            [ (1/2) d^2/dk_j^2 ((Lambda_+ - mu)^2 + (Lambda_- - mu)^2)
              - (dLambda_+/dk_j)^2 - (dLambda_-/dk_j)^2 ].

    First derivatives use the Hellmann-Feynman identity
    dLambda/dk_j = Re <band| dH/dk_j |band>; the second derivative of the
    squared distance-to-mu is a central finite difference (step ``fd_step``)
    of that identity.  Even in eta; independent of current matrix elements,
    which makes it a genuine cross-check of fjj_sing.
    """
    if j not in (1, 2):
        raise ValueError("direction index must be 1 or 2")
    if not cones:
        return KuboEstimate(0.0, float(eta), "zeta", "empty domain", 0.0)
    if eps is None:
        eps = default_epsilon(cones, model.lattice)
    _require_disjoint(model, cones, eps)
    mu = model.fermi_energy
    e_j = np.array([1.0, 0.0]) if j == 1 else np.array([0.0, 1.0])

    def band_pair_and_slopes(ks: np.ndarray):
        lam_lo, lam_hi, counts, w, V, third = _two_band_data(model, ks)
        _check_isolation(third, lam_lo, lam_hi, mu)
        idx = np.arange(ks.shape[0])
        A = V.conj().transpose(0, 2, 1) @ model.dh_batch(ks, j) @ V
        slope_lo = A[idx, counts - 1, counts - 1].real
        slope_hi = A[idx, counts, counts].real
        return lam_lo, lam_hi, slope_lo, slope_hi

    def evaluate(nt: int, og: int) -> float:
        total_terms = []
        for cone in cones:
            offsets, wq = _elliptic_polar_nodes(cone, eps, eta, nt, og)
            ks = cone.omega[None, :] + offsets
            lam_lo, lam_hi, slope_lo, slope_hi = band_pair_and_slopes(ks)
            lo_p, hi_p, slo_p, shi_p = band_pair_and_slopes(ks + fd_step * e_j)
            lo_m, hi_m, slo_m, shi_m = band_pair_and_slopes(ks - fd_step * e_j)
            # d/dk_j of (Lambda - mu)^2 evaluated at k +- fd_step
            dg_lo_p = 2.0 * (lo_p - mu) * slo_p
            dg_lo_m = 2.0 * (lo_m - mu) * slo_m
            dg_hi_p = 2.0 * (hi_p - mu) * shi_p
            dg_hi_m = 2.0 * (hi_m - mu) * shi_m
            d2g = (dg_lo_p - dg_lo_m + dg_hi_p - dg_hi_m) / (2.0 * fd_step)
            bracket = 0.5 * d2g - slope_lo**2 - slope_hi**2
            d = lam_hi - lam_lo
            integrand = -d / (eta * eta + d * d) * bracket / (2.0 * np.pi) ** 2
            total_terms.append(integrand * wq)
        return _tree_sum(np.concatenate(total_terms))

    value = evaluate(ntheta, order)
    coarse = evaluate(max(8, ntheta // 2), max(4, order - 4))
    return KuboEstimate(
        value=value,
        eta=float(eta),
        quantity="zeta",
        grid=f"elliptic-polar {ntheta} angles, GL{order} radial panels",
        quad_error=max(abs(value - coarse), _quad_floor(value)),
    )


# -- eta -> 0 extraction ------------------------------------------------------

def _validate_halving(eta_sequence) -> list:
    seq = [float(e) for e in eta_sequence]
    if len(seq) < 2:
        raise ValueError("need at least two eta values")
    if any(e <= 0 for e in seq):
        raise ValueError("eta values must be positive")
    for a, b in zip(seq, seq[1:]):
        if abs(a - 2.0 * b) > 1e-9 * a:
            raise ValueError(
                "eta sequence must descend by exact halving "
                f"(got consecutive values {a}, {b})"
            )
    return seq


def sigma_hat_sequence(eta_sequence, f_values) -> list:
    """Pair estimator sigma_hat(eta_i) = (f(eta_{i-1}) - f(eta_i)) / eta_i
    along a halving eta sequence (eta_{i-1} = 2 eta_i).

    Cancels f(0+) exactly; for f(eta) = f(0+) + sigma eta + c eta^2 the
    result is exactly sigma + 3 c eta (algebraic identity), so the returned
    sequence converges linearly in eta and is Richardson-extrapolable.
    """
    seq = _validate_halving(eta_sequence)
    f = [float(v) for v in f_values]
    if len(f) != len(seq):
        raise ValueError("need one f value per eta")
    return [(f[i - 1] - f[i]) / seq[i] for i in range(1, len(seq))]


def richardson_extrapolate(sigma_hats) -> float:
    """Eliminate the O(eta) term of the halving estimator sequence:
    2 sigma_hat(eta_min) - sigma_hat(2 eta_min)."""
    s = [float(v) for v in sigma_hats]
    if len(s) < 2:
        raise ValueError("need at least two estimator values")
    return 2.0 * s[-1] - s[-2]


def _converged(sigma_hats) -> bool:
    if len(sigma_hats) < 2:
        return False
    diff = abs(sigma_hats[-1] - sigma_hats[-2])
    return diff < max(_CONV_RTOL * abs(sigma_hats[-1]), _CONV_ATOL)


def sigma_kubo(model: HoppingModel, j: int, l: int, eta_sequence=None,
               grid_policy: GridPolicy | None = None, cones=None,
               ) -> ConductivityReport:
    """Conductivity sigma_jl by eta -> 0 extrapolation of the response.

    For each consecutive pair of the halving eta sequence, f_jl is evaluated
    at both 2*eta and eta on one shared grid built for the smaller eta (so
    quadrature error cancels in the difference), giving the estimator
    sequence sigma_hat(eta); the report carries the sequence, its Richardson
    extrapolation (the headline value), and a convergence flag (last two
    sigma_hat within 2%, with a small absolute floor for values decaying to
    zero).  Cone locations are detected automatically when not supplied.
    Raises NotConverged — with the report attached — when the flag is false.
    """
    if j not in (1, 2) or l not in (1, 2):
        raise ValueError("direction indices must be 1 or 2")
    if cones is None:
        cones = characterize_cones(model)
    if eta_sequence is None:
        eta_sequence = default_eta_sequence(model)
    seq = _validate_halving(eta_sequence)
    policy = grid_policy if grid_policy is not None else GridPolicy()

    per_eta = []
    sigma_hats = []
    f_cache: dict = {}
    grid_sizes = {}
    for i in range(1, len(seq)):
        eta = seq[i]
        fine, comp = policy.grids_for(model, cones, eta)
        grid_sizes[eta] = len(fine)
        f_hi = fjl_eta(model, seq[i - 1], j, l, fine, comp, cones=cones)
        f_lo = fjl_eta(model, eta, j, l, fine, comp, cones=cones)
        f_cache[seq[i - 1]] = f_hi
        f_cache[eta] = f_lo
        s_hat = (f_hi.value - f_lo.value) / eta
        s_err = (f_hi.quad_error + f_lo.quad_error) / eta
        sigma_hats.append(s_hat)
        per_eta.append((eta, s_hat, s_err))

    # with a single estimator value Richardson is not possible; report the
    # plain estimator (the convergence flag is necessarily False then)
    value = (
        richardson_extrapolate(sigma_hats)
        if len(sigma_hats) >= 2
        else sigma_hats[-1]
    )
    flag = _converged(sigma_hats)
    report = ConductivityReport(
        method="kubo_extrapolation",
        sigma={(j, l): value},
        converged={(j, l): flag},
        per_eta={(j, l): tuple(per_eta)},
        diagnostics={
            "eta_sequence": tuple(seq),
            "f_values": {e: f_cache[e].value for e in seq},
            "grid_points": grid_sizes,
            "cones": len(cones),
            "cone_residuals": tuple(c.residual for c in cones),
        },
    )
    if not flag:
        detail = (
            f"last change {abs(sigma_hats[-1] - sigma_hats[-2]):.3e}"
            if len(sigma_hats) >= 2
            else "only one estimator value"
        )
        raise NotConverged(
            f"sigma_hat sequence {sigma_hats} has not converged ({detail})",
            report,
        )
    return report


def sigma_hall(model: HoppingModel, eta_sequence=None,
               grid_policy: GridPolicy | None = None) -> ConductivityReport:
    """Off-diagonal (Hall) estimate sigma_12 for gapped models.

    Refuses gapless models: requires the minimum Fermi-level gap on the
    coarse scan grid to exceed 10x the largest eta (else Gapless).  Reports
    the estimator sequence and Richardson value, plus the distance of
    2 pi sigma_12 from its nearest integer as a diagnostic (no acceptance
    value is attached to it here).
    """
    if eta_sequence is None:
        eta_sequence = default_eta_sequence(model)
    seq = _validate_halving(eta_sequence)
    policy = grid_policy if grid_policy is not None else GridPolicy()

    n = policy.base
    fr = (np.arange(n) + 0.5) / n - 0.5
    F1, F2 = np.meshgrid(fr, fr, indexing="ij")
    ks = np.column_stack([F1.ravel(), F2.ravel()]) @ model.lattice.dual_matrix.T
    w = np.linalg.eigvalsh(model.h_batch(ks))
    counts = (w <= model.fermi_energy).sum(axis=1)
    inner = (counts > 0) & (counts < model.norbitals)
    if inner.any():
        idx = np.nonzero(inner)[0]
        gaps = w[idx, counts[idx]] - w[idx, counts[idx] - 1]
        min_gap = float(gaps.min())
    else:
        min_gap = float("inf")
    if min_gap <= 10.0 * max(seq):
        raise Gapless(
            f"minimum Fermi-level gap {min_gap:.6g} does not exceed 10x the "
            f"largest eta ({max(seq):.6g}); the Hall estimate needs a gapped model"
        )

    fine = uniform_grid(model.lattice, policy.base, policy.base)
    comp = uniform_grid(
        model.lattice, max(policy.base // 2, 2), max(policy.base // 2, 2)
    )
    f_values = [fjl_eta(model, e, 1, 2, fine, comp) for e in seq]
    sigma_hats = sigma_hat_sequence(seq, [f.value for f in f_values])
    value = richardson_extrapolate(sigma_hats)
    per_eta = tuple(
        (seq[i], sigma_hats[i - 1],
         (f_values[i - 1].quad_error + f_values[i].quad_error) / seq[i])
        for i in range(1, len(seq))
    )
    return ConductivityReport(
        method="kubo_extrapolation",
        sigma={(1, 2): value},
        converged={(1, 2): _converged(sigma_hats)},
        per_eta={(1, 2): per_eta},
        diagnostics={
            "eta_sequence": tuple(seq),
            "min_gap": min_gap,
            "hall_quantum_residue": abs(
                2.0 * np.pi * value - round(2.0 * np.pi * value)
            ),
        },
    )


def closed_form_report(cones, directions=((1, 1), (2, 2))) -> ConductivityReport:
    """Assemble a ConductivityReport from the closed-form cone formula."""
    from .cones import sigma_closed_form

    sigma = {}
    per_cone = {}
    for (j, l) in directions:
        if j != l:
            raise ValueError(
                "the closed form covers longitudinal directions only (j = l)"
            )
        total, parts = sigma_closed_form(cones, j)
        sigma[(j, l)] = total
        per_cone[j] = tuple(parts)
    return ConductivityReport(
        method="closed_form",
        sigma=sigma,
        per_cone=per_cone,
        diagnostics={
            "cones": len(cones),
            "cone_residuals": tuple(c.residual for c in cones),
            "max_gap_at_omega": max((c.gap_at_omega for c in cones), default=0.0),
        },
    )
