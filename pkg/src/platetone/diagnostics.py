"""Structural diagnostics for a computed (mask, eigenfield) pair.

These probes measure, on the discrete output of a run, the quantities the
theory reasons about: connectedness, the boundary doubling ratio, the
nondegeneracy rate of the gradient near the free boundary, local density
quotients, the split of the boundary into degenerate and nodal parts, and
the scaling/translation dichotomy for the final volume.  Nothing here is
assumed; everything is counted on the lattice.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from platetone.biharmonic import gradient_field
from platetone.constants import unit_ball_volume
from platetone.field_grid import (
    Grid,
    Mask,
    ScalarField,
    boundary_nodes,
    connected_components,
    mask_centroid,
    mask_volume,
    member_positions,
)


class Dichotomy(Enum):
    VOLUME_MET = "VolumeMet"
    SCALED_FITS_CONTRADICTION = "ScaledFits_Contradiction"
    SCALED_DOES_NOT_FIT = "ScaledDoesNotFit"


@dataclass(frozen=True)
class DiagnosticsReport:
    connected: bool
    component_count: int
    doubling_sigma: float
    nondegeneracy_c1: float
    density_c2_profile: tuple[tuple[float, float], ...]
    sigma0_count: int
    sigma1_count: int
    dichotomy: Dichotomy
    probe_radii: tuple[float, ...]


def check_connected(mask: Mask) -> tuple[bool, int]:
    """(is connected, component count); an empty mask is not connected."""
    count, _ = connected_components(mask)
    return count == 1, count


def _probe_positions(mask: Mask, cap: int = 512) -> np.ndarray:
    """Boundary-node coordinates, deterministically thinned to at most cap."""
    idx = np.argwhere(boundary_nodes(mask))
    if idx.shape[0] == 0:
        raise ValueError("mask has no boundary nodes")
    if idx.shape[0] > cap:
        stride = int(math.ceil(idx.shape[0] / cap))
        idx = idx[::stride]
    return idx * mask.grid.spacing - mask.grid.radius_B


def dyadic_radii(R0: float, r_min: float) -> tuple[float, ...]:
    """R0, R0/2, ... down to (and including the last value >=) r_min."""
    radii = []
    r = R0
    while r >= r_min * (1.0 - 1e-12):
        radii.append(r)
        r *= 0.5
    return tuple(radii)


def estimate_doubling_sigma(mask: Mask, R0: float,
                            r_min: float | None = None) -> float:
    """Worst doubling ratio |B_2R cap mask| / |B_R cap mask| over all boundary
    probes and dyadic radii R0, R0/2, ... >= r_min (default 4h).

    The probe node itself is excluded from both counts: it always lies in the
    mask, but a lone point carries no measure in the limit, and counting it
    would silently turn a degenerate probe (no other mass nearby) into a
    harmless ratio of one.  A probe whose inner ball captures nothing else
    therefore contributes +inf.
    """
    h = mask.grid.spacing
    if r_min is None:
        r_min = 4.0 * h
    if R0 < 4.0 * h:
        raise ValueError(f"R0 must be at least 4h = {4.0 * h}, got {R0}")
    probes = _probe_positions(mask)
    members = member_positions(mask)
    radii = dyadic_radii(R0, r_min)
    worst = 1.0
    for x0 in probes:
        d2 = np.sum((members - x0) ** 2, axis=1)
        for r in radii:
            inner = int(np.count_nonzero(d2 < r * r)) - 1   # minus the probe
            outer = int(np.count_nonzero(d2 < 4.0 * r * r)) - 1
            if inner <= 0:
                return math.inf
            worst = max(worst, outer / inner)
    return worst


def estimate_nondegeneracy_c1(mask: Mask, field: ScalarField, R0: float,
                              r_min: float | None = None) -> float:
    """Smallest value of sup_{B_R(x0)} |grad u| / R over boundary probes x0
    and dyadic radii; zero signals a degenerate (flat) eigenfield."""
    grid = mask.grid
    h = grid.spacing
    if r_min is None:
        r_min = 4.0 * h
    if R0 < 4.0 * h:
        raise ValueError(f"R0 must be at least 4h = {4.0 * h}, got {R0}")
    grad = gradient_field(grid, field)
    mag = np.sqrt(np.sum(grad * grad, axis=0))
    probes_idx = np.argwhere(boundary_nodes(mask))
    if probes_idx.shape[0] == 0:
        raise ValueError("mask has no boundary nodes")
    if probes_idx.shape[0] > 512:
        stride = int(math.ceil(probes_idx.shape[0] / 512))
        probes_idx = probes_idx[::stride]
    radii = dyadic_radii(R0, r_min)
    n = grid.nodes_per_side
    worst = math.inf
    for idx in probes_idx:
        span = int(math.ceil(R0 / h)) + 1
        lo = np.maximum(idx - span, 0)
        hi = np.minimum(idx + span + 1, n)
        window = tuple(slice(a, b) for a, b in zip(lo, hi))
        local = mag[window]
        coords = np.meshgrid(
            *[(np.arange(a, b) - c) * h for a, b, c in zip(lo, hi, idx)],
            indexing="ij", sparse=True,
        )
        d2 = sum(cc * cc for cc in coords)
        for r in radii:
            sup = float(local[d2 <= r * r].max(initial=0.0))
            worst = min(worst, sup / r)
    return worst


def density_quotient(mask: Mask, x0: tuple[int, ...], R: float) -> float:
    """Fraction of the lattice ball B_R around the boundary node x0 that the
    mask occupies (member count over node count, both in the open ball)."""
    grid = mask.grid
    h = grid.spacing
    if R < 2.0 * h:
        raise ValueError(f"R must be at least 2h = {2.0 * h}, got {R}")
    if not boundary_nodes(mask)[tuple(x0)]:
        raise ValueError(f"probe {x0} is not a boundary node")
    idx = np.asarray(x0)
    n = grid.nodes_per_side
    span = int(math.ceil(R / h)) + 1
    lo = np.maximum(idx - span, 0)
    hi = np.minimum(idx + span + 1, n)
    window = tuple(slice(a, b) for a, b in zip(lo, hi))
    coords = np.meshgrid(
        *[(np.arange(a, b) - c) * h for a, b, c in zip(lo, hi, idx)],
        indexing="ij", sparse=True,
    )
    d2 = sum(cc * cc for cc in coords)
    ball = d2 < R * R
    total = int(np.count_nonzero(ball))
    inside = int(np.count_nonzero(mask.inside[window] & ball))
    return inside / total


def classify_boundary(mask: Mask, field: ScalarField,
                      tol_grad: float | None = None
                      ) -> tuple[np.ndarray, np.ndarray]:
    """Split boundary nodes into the flat part (|grad u| <= tol_grad) and the
    nodal part (|grad u| > tol_grad).

    tol_grad defaults to 10 h max|grad u|: a sharp zero test is meaningless
    in floating point, and the gradient of a genuinely clamped field decays
    like h at the free boundary, so stability of the split under refinement
    is the meaningful check.
    """
    grid = mask.grid
    grad = gradient_field(grid, field)
    mag = np.sqrt(np.sum(grad * grad, axis=0))
    if tol_grad is None:
        tol_grad = 10.0 * grid.spacing * float(mag.max())
    boundary = boundary_nodes(mask)
    sigma0 = np.logical_and(boundary, mag <= tol_grad)
    sigma1 = np.logical_and(boundary, mag > tol_grad)
    return sigma0, sigma1


def default_vol_tol(grid: Grid, omega0: float) -> float:
    """One boundary layer of volume for a domain of volume omega0."""
    n = grid.dim
    r_eq = (omega0 / unit_ball_volume(n)) ** (1.0 / n)
    return 5.0 * grid.spacing * r_eq ** (n - 1)


def dichotomy_check(mask: Mask, omega0: float, grid: Grid,
                    vol_tol: float | None = None) -> Dichotomy:
    """Classify the final volume against the scaling/translation alternative.

    Volume within vol_tol of omega0 reports VOLUME_MET.  Otherwise the mask
    is rescaled about its centroid to volume omega0 and recentered.  If the
    scaled set fits strictly inside the reference ball (directly, or after an
    exhaustive lattice search of translations whenever the centroid-centered
    circumradius is within 2h of the ball radius) the case is
    SCALED_FITS_CONTRADICTION: the theory excludes a minimizer with this
    property, so observing it flags a search failure.  Otherwise the scaled
    set genuinely cannot be translated into the ball: SCALED_DOES_NOT_FIT.
    """
    if mask.is_empty:
        raise ValueError("dichotomy check on an empty mask")
    if vol_tol is None:
        vol_tol = default_vol_tol(grid, omega0)
    vol = mask_volume(mask)
    if abs(vol - omega0) <= vol_tol:
        return Dichotomy.VOLUME_MET

    t = (omega0 / vol) ** (1.0 / grid.dim)
    centroid = mask_centroid(mask)
    pts = t * (member_positions(mask) - centroid)   # recentred scaled set
    h = grid.spacing
    circum = float(np.linalg.norm(pts, axis=1).max())
    if circum < grid.radius_B - 2.0 * h:
        return Dichotomy.SCALED_FITS_CONTRADICTION
    if circum > grid.radius_B + 2.0 * h:
        return Dichotomy.SCALED_DOES_NOT_FIT

    # near-threshold: centroid centering may be suboptimal for asymmetric
    # sets, so search translations on the lattice
    lo = pts.max(axis=0) - grid.radius_B
    hi = pts.min(axis=0) + grid.radius_B
    if np.any(hi < lo):
        return Dichotomy.SCALED_DOES_NOT_FIT
    axes = [np.arange(a, b + h, h) for a, b in zip(lo, hi)]
    best = math.inf
    for shift in np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, grid.dim):
        r = float(np.linalg.norm(pts - shift, axis=1).max())
        best = min(best, r)
        if best < grid.radius_B:
            return Dichotomy.SCALED_FITS_CONTRADICTION
    return Dichotomy.SCALED_DOES_NOT_FIT


def default_probe_radius(grid: Grid, omega0: float) -> float:
    """Probe cap: local enough to stay boundary-scale, large enough to
    beat lattice noise."""
    n = grid.dim
    r_eq = (omega0 / unit_ball_volume(n)) ** (1.0 / n)
    return max(4.0 * grid.spacing, min(0.25 * r_eq, 32.0 * grid.spacing))


def run_diagnostics(grid: Grid, mask: Mask, field: ScalarField, omega0: float,
                    R0: float | None = None,
                    tol_grad: float | None = None) -> DiagnosticsReport:
    """Evaluate the full diagnostic bundle on a computed (mask, field) pair."""
    if mask.is_empty:
        raise ValueError("diagnostics on an empty mask")
    if R0 is None:
        R0 = default_probe_radius(grid, omega0)
    connected, count = check_connected(mask)
    sigma = estimate_doubling_sigma(mask, R0)
    c1 = estimate_nondegeneracy_c1(mask, field, R0)
    radii = dyadic_radii(R0, 4.0 * grid.spacing)
    probes = np.argwhere(boundary_nodes(mask))
    if probes.shape[0] > 128:
        stride = int(math.ceil(probes.shape[0] / 128))
        probes = probes[::stride]
    profile = []
    for r in radii:
        if r < 2.0 * grid.spacing:
            continue
        quotients = [density_quotient(mask, tuple(p), r) for p in probes]
        profile.append((r, min(quotients)))
    s0, s1 = classify_boundary(mask, field, tol_grad)
    return DiagnosticsReport(
        connected=connected,
        component_count=count,
        doubling_sigma=sigma,
        nondegeneracy_c1=c1,
        density_c2_profile=tuple(profile),
        sigma0_count=int(np.count_nonzero(s0)),
        sigma1_count=int(np.count_nonzero(s1)),
        dichotomy=dichotomy_check(mask, omega0, grid),
        probe_radii=radii,
    )
