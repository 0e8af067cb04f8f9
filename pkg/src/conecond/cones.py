"""Fermi-point detection, cone-geometry fitting, and the closed-form
longitudinal conductivity.

A conical crossing at the Fermi level is described by

    Lambda_pm(k) = mu +- |S (k - omega)| + a . (k - omega) + o(|k - omega|),

and only Q = S^T S is identifiable from band data (|S d| depends on S through
Q alone), so cones are stored as (omega, Q, a).  The closed-form longitudinal
conductivity of a family of such cones is

    sigma_jj = (1/16) sum_l Q_{l,jj} / sqrt(det Q_l),

with each summand manifestly invariant under S -> O S for orthogonal O.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .bloch import HoppingModel, h_at
from .lattice import Lattice2D, wrap_fractional
from .spectra import AllBandsOnOneSide

__all__ = [
    "NoConvergence",
    "BandCrossingRegion",
    "NotConical",
    "EpsilonTooLarge",
    "FermiPoint",
    "FermiPointScan",
    "find_fermi_points",
    "fit_cone",
    "characterize_cones",
    "check_cone_condition",
    "is_quantizing",
    "sigma_closed_form",
    "b_epsilon_membership",
    "neighborhoods_disjoint",
    "fermi_point_separation",
    "default_epsilon",
]

#: default gap tolerance accepted at a Fermi point (absolute, energy units)
DEFAULT_GAP_TOL = 1e-7
#: two minima closer than this (cartesian, mod dual lattice) are one point
_DEDUP_RADIUS = 1e-6
_MAX_ISOLATED_POINTS = 16
#: quantizing test: relative deviation of Q from a multiple of the identity
_QUANTIZING_RTOL = 1e-9


class NoConvergence(RuntimeError):
    """Gap minimization plateaued above tolerance (gapped or near-critical)."""


class BandCrossingRegion(ValueError):
    """Bands cross the Fermi level on a positive-measure set, not at points."""


class NotConical(ValueError):
    """Band touching is not conical (fitted quadratic form is degenerate)."""


class EpsilonTooLarge(ValueError):
    """The cone neighborhoods B_eps overlap; shrink eps."""


@dataclass(frozen=True)
class FermiPoint:
    """A conical Fermi-level crossing: location and fitted local geometry.

    ``omega`` is the reduced momentum of the crossing, ``Q`` the symmetric
    positive-definite quadratic form of the half-gap (energy^2 per momentum^2),
    ``tilt`` the linear coefficient of the band-center, ``residual`` the
    relative fit error at the smallest sampling radius, and ``gap_at_omega``
    the verified gap at the located point (must fall below ``gap_tol``).
    Construction enforces positive-definiteness, the gap tolerance, and the
    cone condition sqrt(min eig Q) - |tilt| > 0.
    """

    omega: np.ndarray
    Q: np.ndarray
    tilt: np.ndarray
    residual: float
    gap_at_omega: float
    gap_tol: float = field(default=DEFAULT_GAP_TOL, compare=False)

    def __post_init__(self):
        omega = np.asarray(self.omega, dtype=float).reshape(2).copy()
        Q = np.asarray(self.Q, dtype=float).reshape(2, 2).copy()
        tilt = np.asarray(self.tilt, dtype=float).reshape(2).copy()
        if np.abs(Q - Q.T).max() > 1e-12 * max(1.0, np.abs(Q).max()):
            raise ValueError("Q must be symmetric")
        Q = 0.5 * (Q + Q.T)
        ev = np.linalg.eigvalsh(Q)
        if ev[0] <= 0:
            raise ValueError(f"Q must be positive-definite (eigenvalues {ev})")
        if not self.gap_at_omega < self.gap_tol:
            raise ValueError(
                f"gap {self.gap_at_omega:.3e} at omega exceeds tolerance "
                f"{self.gap_tol:.3e}"
            )
        margin = np.sqrt(ev[0]) - np.linalg.norm(tilt)
        if not margin > 0:
            raise ValueError(
                f"cone condition violated: sqrt(min eig Q) - |tilt| = {margin:.3e}"
            )
        for name, arr in (("omega", omega), ("Q", Q), ("tilt", tilt)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def lambda_star(self) -> float:
        """Smallest eigenvalue of Q."""
        return float(np.linalg.eigvalsh(self.Q)[0])


@dataclass(frozen=True)
class FermiPointScan:
    """Result of a Fermi-point search: reduced locations (sorted by
    fractional coordinates), the refined gap at each, the smallest gap seen
    anywhere (diagnostic, meaningful also when no point was found), and
    human-readable warnings for near-threshold minima."""

    locations: tuple
    gaps: tuple
    min_gap: float
    warnings: tuple = ()

    def __len__(self):
        return len(self.locations)

    def __iter__(self):
        return iter(self.locations)

    def __getitem__(self, i):
        return self.locations[i]


def _reduced_distance(lat: Lattice2D, k1, k2) -> float:
    """Cartesian distance between momenta modulo the dual lattice."""
    d = np.asarray(k1, dtype=float) - np.asarray(k2, dtype=float)
    shifts = np.array(
        [[i, j] for i in (-1, 0, 1) for j in (-1, 0, 1)], dtype=float
    ) @ lat.dual_matrix.T
    return float(np.linalg.norm(d + shifts, axis=1).min())


def _occupied_band_index(model: HoppingModel, w_grid: np.ndarray) -> int:
    """Constant occupied count on a grid, or BandCrossingRegion.

    A grid point may land exactly on a band-closure point, where the
    level-touching eigenvalues make the strict count deviate at that single
    point.  Such deviations are tolerated as long as every eigenvalue on the
    "wrong side" sits at the Fermi level to within numerical precision;
    genuinely detached counts mean a band crosses the Fermi level on a
    region, which is reported as BandCrossingRegion.
    """
    mu = model.fermi_energy
    counts = np.count_nonzero(w_grid <= mu, axis=1)
    m = int(np.bincount(counts).argmax())
    atol = 1e-12 * (1.0 + float(np.abs(w_grid).max()))
    for idx in np.nonzero(counts != m)[0]:
        c = int(counts[idx])
        straddlers = w_grid[idx, min(c, m): max(c, m)]
        if np.abs(straddlers - mu).max() > atol:
            raise BandCrossingRegion(
                "occupied count varies across the zone; a band crosses the "
                "Fermi level on a region rather than at isolated points"
            )
    if m == 0 or m == w_grid.shape[1]:
        raise AllBandsOnOneSide(
            "Fermi level lies outside the spectrum on the scan grid"
        )
    return m


def find_fermi_points(
    model: HoppingModel,
    coarse: int = 96,
    tol: float | None = None,
    strict: bool = False,
) -> FermiPointScan:
    """Locate conical band crossings at the Fermi level.

    Scans the gap across the Fermi level on a ``coarse`` x ``coarse``
    midpoint grid, then refines every local minimum below a slope-based seed
    threshold by derivative-free simplex minimization (the gap is non-smooth
    at a conical zero, so no derivatives are used) until the simplex step
    falls below 1e-12.  Minima with final gap below ``tol`` (default: 1e-7
    relative to the spectral radius) are accepted, deduplicated modulo the
    dual lattice, and returned sorted by fractional coordinates.

    Minima that plateau in (tol, 100*tol] produce warnings.  When nothing
    converges the scan is returned empty with the smallest gap seen as a
    diagnostic; with ``strict=True`` that case raises NoConvergence instead.
    Raises BandCrossingRegion when the gap is below tolerance on a
    positive-measure portion of the grid.
    """
    lat = model.lattice
    rho = model.spectral_radius()
    if tol is None:
        tol = DEFAULT_GAP_TOL * max(1.0, rho)
    n = int(coarse)
    fr = (np.arange(n) + 0.5) / n - 0.5
    F1, F2 = np.meshgrid(fr, fr, indexing="ij")
    ks = np.column_stack([F1.ravel(), F2.ravel()]) @ lat.dual_matrix.T
    w = np.linalg.eigvalsh(model.h_batch(ks))
    m = _occupied_band_index(model, w)
    gap = (w[:, m] - w[:, m - 1]).reshape(n, n)

    if np.count_nonzero(gap < tol) > max(4, 1e-3 * gap.size):
        raise BandCrossingRegion(
            f"gap below tolerance at {np.count_nonzero(gap < tol)} of "
            f"{gap.size} grid points"
        )

    # seed threshold: within one cell of a conical zero the gap is at most
    # about (local slope) * (cell diagonal); the slope is bounded by the
    # current-operator norms
    jnorm = 0.0
    for j in (1, 2):
        J = model.dh_batch(ks[:: max(1, ks.shape[0] // 512)], j)
        jnorm = max(jnorm, float(np.sqrt((np.abs(J) ** 2).sum(axis=(1, 2)).max())))
    spacing = max(np.linalg.norm(lat.b1), np.linalg.norm(lat.b2)) / n
    seed_threshold = 3.0 * jnorm * spacing

    neighbors_min = gap.copy()
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == 0 and dj == 0:
                continue
            neighbors_min = np.minimum(neighbors_min, np.roll(gap, (di, dj), (0, 1)))
    is_min = (gap <= neighbors_min) & (gap < seed_threshold)
    seeds = ks.reshape(n, n, 2)[is_min]

    def gap_fn(k):
        ww = np.linalg.eigvalsh(h_at(model, k))
        return ww[m] - ww[m - 1]

    candidates = []
    min_gap = float(gap.min())
    for k0 in seeds:
        simplex = np.array([k0, k0 + [spacing, 0.0], k0 + [0.0, spacing]])
        res = minimize(
            gap_fn,
            k0,
            method="Nelder-Mead",
            options=dict(
                initial_simplex=simplex,
                xatol=1e-13,
                fatol=1e-12 * max(1.0, rho),
                maxiter=4000,
                maxfev=8000,
            ),
        )
        candidates.append((float(res.fun), np.asarray(res.x, dtype=float)))
        min_gap = min(min_gap, float(res.fun))

    warnings = []
    accepted = []
    for g, k in sorted(candidates, key=lambda c: c[0]):
        if g < tol:
            if all(_reduced_distance(lat, k, k2) > _DEDUP_RADIUS for _, k2 in accepted):
                accepted.append((g, k))
        elif g <= 100.0 * tol:
            warnings.append(
                f"near-threshold gap minimum {g:.3e} at k=({k[0]:.6f}, {k[1]:.6f}) "
                f"not accepted (tolerance {tol:.3e})"
            )

    if len(accepted) > _MAX_ISOLATED_POINTS:
        # a curve of Fermi-level zeros yields a refined minimum in every
        # seeded cell along it, far more than any set of isolated crossings
        raise BandCrossingRegion(
            f"{len(accepted)} distinct gap zeros found; the Fermi level is "
            "crossed on a region rather than at isolated points"
        )

    if not accepted and strict:
        raise NoConvergence(
            f"no gap minimum reached tolerance {tol:.3e}; smallest gap seen "
            f"was {min_gap:.6e}"
        )

    reduced = []
    for g, k in accepted:
        frac = wrap_fractional(lat.to_fractional(k))
        reduced.append((frac, g, lat.from_fractional(frac)))
    reduced.sort(key=lambda t: (t[0][0], t[0][1]))
    locations = tuple(k for _, _, k in reduced)
    gaps = tuple(g for _, g, _ in reduced)
    return FermiPointScan(
        locations=locations, gaps=gaps, min_gap=min_gap, warnings=tuple(warnings)
    )


def _band_pair_at(model: HoppingModel, ks: np.ndarray, m: int):
    """Eigenvalues just below/above the Fermi level on a batch of momenta,
    plus the distance of every other band from the Fermi level."""
    w = np.linalg.eigvalsh(model.h_batch(ks))
    others = np.delete(w, [m - 1, m], axis=1)
    other_dist = (
        np.abs(others - model.fermi_energy).min(axis=1)
        if others.shape[1]
        else np.full(w.shape[0], np.inf)
    )
    return w[:, m - 1], w[:, m], other_dist


def fit_cone(
    model: HoppingModel,
    omega,
    radii=None,
    directions: int = 16,
):
    """Fit the local cone geometry (Q, tilt, residual) at a Fermi point.

    Samples the two Fermi-level bands on circles k = omega + r(cos t, sin t)
    over ``directions`` equispaced angles and each radius.  Per radius, the
    squared half-gap is fitted to the quadratic form d.Q d by linear least
    squares in (Q11, Q12, Q22); the per-radius results are then extrapolated
    linearly in r to r -> 0 from the two smallest radii, cancelling the
    leading contamination from the o(|k - omega|) remainder.  The tilt is
    fitted the same way from the band-center (Lambda+ + Lambda-)/2 - mu.

    Returns ``(Q, tilt, residual)`` where ``residual`` is the relative
    least-squares residual of the fit at the smallest radius.  Raises
    NotConical when the extrapolated Q is not positive-definite (quadratic
    or flat touching), and ValueError when the sampling radii are too large
    for the two-band local window.
    """
    lat = model.lattice
    omega = np.asarray(omega, dtype=float).reshape(2)
    if radii is None:
        bmin = min(np.linalg.norm(lat.b1), np.linalg.norm(lat.b2))
        radii = [2e-2 * bmin, 1e-2 * bmin, 5e-3 * bmin]
    radii = sorted(float(r) for r in radii)
    if len(radii) < 2:
        raise ValueError("need at least two radii for the r -> 0 extrapolation")
    if radii[0] <= 0:
        raise ValueError("radii must be positive")
    # half-offset angles around pi/4: no direction is axis-aligned, and the
    # set maps to itself under the coordinate swap k1 <-> k2 (theta ->
    # pi/2 - theta) and under inversion, so fitted cones inherit those
    # symmetries of the model exactly rather than only approximately
    theta = np.pi / 4.0 + 2.0 * np.pi * (np.arange(directions) + 0.5) / directions
    dirs = np.column_stack([np.cos(theta), np.sin(theta)])

    # the straddling band pair: at omega itself both bands sit numerically at
    # the Fermi level, so take the occupied count from an off-center probe
    mu = model.fermi_energy
    w_probe = np.linalg.eigvalsh(h_at(model, omega + radii[0] * dirs[0]))
    m = int(np.clip(np.count_nonzero(w_probe <= mu), 1, w_probe.size - 1))

    per_radius = []
    for r in radii:
        ks = omega[None, :] + r * dirs
        lam_lo, lam_hi, other_dist = _band_pair_at(model, ks, m)
        window = max(
            np.abs(lam_lo - mu).max(), np.abs(lam_hi - mu).max()
        )
        if other_dist.min() <= 10.0 * window:
            raise ValueError(
                f"radius {r:.3e} too large: another band comes within 10x of "
                "the sampled cone window"
            )
        x, y = r * dirs[:, 0], r * dirs[:, 1]
        design = np.column_stack([x * x, 2.0 * x * y, y * y])
        target = (0.5 * (lam_hi - lam_lo)) ** 2
        coef, *_ = np.linalg.lstsq(design, target, rcond=None)
        resid = np.linalg.norm(design @ coef - target) / np.linalg.norm(target)
        tilt_design = np.column_stack([x, y])
        tilt_target = 0.5 * (lam_hi + lam_lo) - mu
        tilt_coef, *_ = np.linalg.lstsq(tilt_design, tilt_target, rcond=None)
        per_radius.append((r, coef, tilt_coef, float(resid)))

    (r1, c1, t1, resid1), (r2, c2, t2, _) = per_radius[0], per_radius[1]
    coef0 = (c1 * r2 - c2 * r1) / (r2 - r1)
    tilt0 = (t1 * r2 - t2 * r1) / (r2 - r1)
    Q = np.array([[coef0[0], coef0[1]], [coef0[1], coef0[2]]])
    ev = np.linalg.eigvalsh(Q)
    if ev[0] <= 1e-10 * abs(ev[1]):
        raise NotConical(
            f"extrapolated quadratic form is not positive-definite "
            f"(eigenvalues {ev[0]:.3e}, {ev[1]:.3e}); band touching is not conical"
        )
    return Q, tilt0, resid1


def characterize_cones(
    model: HoppingModel,
    coarse: int = 96,
    tol: float | None = None,
    radii=None,
    directions: int = 16,
) -> list:
    """Find Fermi points and fit each cone; returns a list of FermiPoint."""
    scan = find_fermi_points(model, coarse=coarse, tol=tol)
    rho = model.spectral_radius()
    gap_tol = DEFAULT_GAP_TOL * max(1.0, rho) if tol is None else tol
    points = []
    for k, g in zip(scan.locations, scan.gaps):
        Q, tilt, resid = fit_cone(model, k, radii=radii, directions=directions)
        points.append(
            FermiPoint(
                omega=k,
                Q=Q,
                tilt=tilt,
                residual=resid,
                gap_at_omega=g,
                gap_tol=gap_tol,
            )
        )
    return points


def check_cone_condition(Q, a) -> tuple:
    """(condition holds, margin) with margin = sqrt(min eig Q) - |a|."""
    Q = np.asarray(Q, dtype=float).reshape(2, 2)
    if np.abs(Q - Q.T).max() > 1e-12 * max(1.0, np.abs(Q).max()):
        raise ValueError("Q must be symmetric")
    ev = np.linalg.eigvalsh(Q)
    if ev[0] <= 0:
        raise ValueError("Q must be positive-definite")
    margin = float(np.sqrt(ev[0]) - np.linalg.norm(np.asarray(a, dtype=float)))
    return margin > 0, margin


def is_quantizing(Q) -> bool:
    """True iff Q is (numerically) a positive multiple of the identity,
    i.e. the cone contributes exactly 1/16 to each longitudinal direction."""
    Q = np.asarray(Q, dtype=float).reshape(2, 2)
    tr = Q[0, 0] + Q[1, 1]
    return (
        abs(Q[0, 0] - Q[1, 1]) <= _QUANTIZING_RTOL * tr
        and abs(Q[0, 1]) <= _QUANTIZING_RTOL * tr
    )


def sigma_closed_form(cones, j: int):
    """Closed-form longitudinal conductivity sigma_jj of a cone family.

    Returns ``(sigma_jj, per_cone)`` with per-cone contributions
    Q_jj / (16 sqrt(det Q)).
    """
    if j not in (1, 2):
        raise ValueError("direction index j must be 1 or 2")
    per_cone = []
    for cone in cones:
        Q = cone.Q if isinstance(cone, FermiPoint) else np.asarray(cone, dtype=float)
        det = np.linalg.det(Q)
        if det <= 0 or np.linalg.eigvalsh(Q)[0] <= 0:
            raise ValueError("each cone's Q must be positive-definite")
        per_cone.append(float(Q[j - 1, j - 1] / (16.0 * np.sqrt(det))))
    return float(sum(per_cone)), per_cone


def neighborhoods_disjoint(cones, lat: Lattice2D, eps: float) -> bool:
    """Sufficient disjointness check for the B_eps neighborhoods: each
    B_eps^(l) lies in a cartesian ball of radius eps/(2 sqrt(min eig Q_l)),
    so the neighborhoods are verifiably pairwise disjoint (including each
    against its own periodic images) when those balls are."""
    n = len(cones)
    radii = [eps / (2.0 * np.sqrt(np.linalg.eigvalsh(c.Q)[0])) for c in cones]
    shifts = np.array(
        [[i, j] for i in (-1, 0, 1) for j in (-1, 0, 1)], dtype=float
    ) @ lat.dual_matrix.T
    for a in range(n):
        for b in range(a, n):
            d = cones[b].omega + shifts - cones[a].omega
            dist = np.linalg.norm(d, axis=1)
            if a == b:
                dist = dist[np.linalg.norm(shifts, axis=1) > 0]
                if dist.size == 0:
                    continue
            if dist.min() <= radii[a] + radii[b]:
                return False
    return True


def b_epsilon_membership(cones, k, eps: float, lat: Lattice2D):
    """Index of the cone whose neighborhood B_eps contains k, or None.

    Membership is 2 sqrt(d . Q_l d) < eps with d = k - omega_l reduced
    modulo the dual lattice.  Raises EpsilonTooLarge when the neighborhoods
    are not verifiably pairwise disjoint (including each one against its own
    periodic images).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if not neighborhoods_disjoint(cones, lat, eps):
        raise EpsilonTooLarge(
            f"B_eps neighborhoods overlap at eps={eps:.6g}; shrink eps"
        )
    k = np.asarray(k, dtype=float).reshape(2)
    shifts = np.array(
        [[i, j] for i in (-1, 0, 1) for j in (-1, 0, 1)], dtype=float
    ) @ lat.dual_matrix.T
    hit = None
    for idx, cone in enumerate(cones):
        d_frac = wrap_fractional(lat.to_fractional(k - cone.omega))
        # the canonical wrap need not be the nearest image in the cone
        # metric (skewed bases); minimize over the neighboring images
        d = lat.from_fractional(d_frac) + shifts
        if (2.0 * np.sqrt(np.einsum("si,ij,sj->s", d, cone.Q, d)).min() < eps):
            hit = idx if hit is None else hit
    return hit


def fermi_point_separation(cones, lat: Lattice2D) -> float:
    """Smallest cone-metric distance between distinct Fermi points (and
    between each point and its own periodic images): the scale d_F that
    bounds admissible eps from above."""
    if not cones:
        raise ValueError("need at least one cone")
    shifts = np.array(
        [[i, j] for i in (-1, 0, 1) for j in (-1, 0, 1)], dtype=float
    ) @ lat.dual_matrix.T
    nonzero = np.linalg.norm(shifts, axis=1) > 0
    best = np.inf
    for a, ca in enumerate(cones):
        for b, cb in enumerate(cones):
            d = cb.omega + shifts - ca.omega
            d = d[nonzero] if a == b else d
            for delta in d:
                qa = np.sqrt(delta @ ca.Q @ delta)
                qb = np.sqrt(delta @ cb.Q @ delta)
                best = min(best, qa, qb)
    return float(best)


def default_epsilon(cones, lat: Lattice2D) -> float:
    """Default cone-neighborhood size: 0.3 of the Fermi-point separation."""
    return 0.3 * fermi_point_separation(cones, lat)
