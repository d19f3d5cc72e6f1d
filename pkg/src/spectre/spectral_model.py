"""Energy-resolved phantoms and the photon-counting measurement model.

Attenuation curves follow a two-term parametric model: a photoelectric
part falling as ``(E0/E)^3`` plus a Compton part following the total
Klein-Nishina cross section, both normalized so the coefficients are
the contributions in cm^-1 at the 25 keV reference energy.  Values are
qualitative stand-ins for tabulated data — steep decay at low energy,
slow convergence at high energy — not dosimetry-grade physics.

Ground-truth tensors hold attenuation per *pixel traversal length*
(``mu * pixel_size_cm``), matching the unit-pixel projector, so line
integrals come out dimensionless and counts follow
``y ~ Poisson(s_k * exp(-[A x_k]))``.

Sampling uses one counter-based RNG stream per (energy bin, ray),
derived by spawning from ``(seed, k, j)``, so simulated counts are
reproducible and independent of evaluation order or parallel schedule.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

__all__ = [
    "KEV_REFERENCE",
    "LAMBDA_MAX",
    "Material",
    "MATERIALS",
    "klein_nishina",
    "attenuation",
    "energy_grid",
    "Phantom",
    "build_phantom1",
    "build_phantom2",
    "MeasurementSet",
    "poisson_counts",
    "simulate_counts",
    "PWLSData",
    "pwls_transform",
]

KEV_REFERENCE = 25.0
ELECTRON_REST_KEV = 511.0
#: the Poisson sampler is validated for rates up to this ceiling
LAMBDA_MAX = 1.0e7


def klein_nishina(e_kev) -> np.ndarray:
    """Total Klein-Nishina cross-section shape versus photon energy.

    Units are arbitrary (the model only uses ratios); strictly
    decreasing with energy.
    """
    a = np.asarray(e_kev, dtype=float) / ELECTRON_REST_KEV
    if np.any(a <= 0):
        raise ValueError("photon energy must be positive")
    log_term = np.log1p(2.0 * a)
    return (
        (1.0 + a) / a**2 * (2.0 * (1.0 + a) / (1.0 + 2.0 * a) - log_term / a)
        + log_term / (2.0 * a)
        - (1.0 + 3.0 * a) / (1.0 + 2.0 * a) ** 2
    )


@dataclass(frozen=True)
class Material:
    """Two-term attenuation preset; coefficients are cm^-1 at 25 keV."""

    name: str
    photoelectric: float
    compton: float


#: bundled presets: four object materials spanning roughly 0.2 to 2.0
#: cm^-1 at 25 keV, plus water for the container and air for the
#: surround.
MATERIALS = {
    m.name: m
    for m in (
        Material("air", 0.0, 0.0),
        Material("water", 0.19, 0.36),
        Material("polyethylene", 0.03, 0.21),
        Material("delrin", 0.32, 0.48),
        Material("teflon", 0.66, 0.54),
        Material("aluminum", 1.35, 0.60),
    )
}


def attenuation(material: Material, e_kev) -> np.ndarray:
    """Linear attenuation (cm^-1) of ``material`` at energies ``e_kev``."""
    e = np.asarray(e_kev, dtype=float)
    pe = material.photoelectric * (KEV_REFERENCE / e) ** 3
    kn = material.compton * klein_nishina(e) / klein_nishina(KEV_REFERENCE)
    return pe + kn


def energy_grid(lo_kev: float = 25.0, hi_kev: float = 85.0, bins: int = 12):
    """Uniformly spaced energy bins, endpoints included."""
    if bins < 1:
        raise ValueError("bins must be positive")
    if bins == 1:
        return np.array([0.5 * (lo_kev + hi_kev)])
    if not lo_kev < hi_kev:
        raise ValueError("need lo_kev < hi_kev")
    return np.linspace(lo_kev, hi_kev, bins)


@dataclass
class Phantom:
    """Label map plus the energy-resolved ground-truth tensor."""

    labels: np.ndarray  # (N1, N2) int, indexes into materials
    materials: list  # label order
    energies: np.ndarray  # (N3,) keV
    chi: np.ndarray  # (N1, N2, N3), attenuation per pixel traversal
    pixel_size_cm: float


def _ellipse_mask(n1, n2, cy, cx, ry, rx):
    yy, xx = np.mgrid[0:n1, 0:n2]
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0


def build_phantom1(
    n1: int = 128,
    n2: int = 128,
    energies=None,
    pixel_size_cm: float = 0.13,
) -> Phantom:
    """Piecewise-constant phantom: a water container holding four shapes.

    Labels 0..5 are air, water, and the four object presets; the object
    shapes are disjoint disks/ellipses placed on the compass points of
    the container.  Every frontal slice is piecewise constant and the
    mode-3 unfolding has exact low rank (one attenuation curve per
    material, all drawn from a two-term model).
    """
    if energies is None:
        energies = energy_grid()
    energies = np.asarray(energies, dtype=float)
    mats = [
        MATERIALS["air"],
        MATERIALS["water"],
        MATERIALS["polyethylene"],
        MATERIALS["delrin"],
        MATERIALS["teflon"],
        MATERIALS["aluminum"],
    ]
    m = min(n1, n2)
    cy, cx = (n1 - 1) / 2.0, (n2 - 1) / 2.0
    labels = np.zeros((n1, n2), dtype=np.int64)
    labels[_ellipse_mask(n1, n2, cy, cx, 0.42 * m, 0.42 * m)] = 1
    d = 0.22 * m
    labels[_ellipse_mask(n1, n2, cy - d, cx, 0.11 * m, 0.11 * m)] = 2  # north
    labels[_ellipse_mask(n1, n2, cy, cx + d, 0.09 * m, 0.13 * m)] = 3  # east
    labels[_ellipse_mask(n1, n2, cy + d, cx, 0.11 * m, 0.11 * m)] = 4  # south
    labels[_ellipse_mask(n1, n2, cy, cx - d, 0.09 * m, 0.09 * m)] = 5  # west
    curves = np.stack([attenuation(mat, energies) for mat in mats])  # (6, N3)
    chi = pixel_size_cm * curves[labels]
    return Phantom(
        labels=labels,
        materials=mats,
        energies=energies,
        chi=chi,
        pixel_size_cm=pixel_size_cm,
    )


def build_phantom2(
    n1: int = 128,
    n2: int = 128,
    energies=None,
    pixel_size_cm: float = 0.13,
    seed: int = 0,
    texture_amplitude: float = 0.05,
    ramp_amplitude: float = 0.02,
) -> Phantom:
    """Textured variant of :func:`build_phantom1`.

    Object interiors are modulated by a seeded band-limited random
    texture (multiplicative, peak amplitude ``texture_amplitude``) that
    varies smoothly in all three tensor directions — so the mode-3
    unfolding is no longer exactly low rank — and the container gets a
    linear left-to-right ramp whose endpoints differ by
    ``ramp_amplitude`` of the nominal value.  Both amplitudes at zero
    reproduce Phantom 1 exactly.
    """
    base = build_phantom1(n1, n2, energies, pixel_size_cm)
    n3 = len(base.energies)
    chi = base.chi.copy()
    if texture_amplitude != 0.0:
        gen = np.random.Generator(
            np.random.Philox(np.random.SeedSequence(entropy=seed, spawn_key=(0,)))
        )
        noise = gen.normal(size=(n1, n2, n3))
        sigma_plane = max(2.0, min(n1, n2) / 16.0)
        tex = ndimage.gaussian_filter(
            noise, sigma=(sigma_plane, sigma_plane, 1.0), mode="nearest"
        )
        tex /= max(np.abs(tex).max(), np.finfo(float).tiny)
        mod = 1.0 + texture_amplitude * tex
        obj = base.labels >= 2
        chi[obj] *= mod[obj]
    if ramp_amplitude != 0.0:
        cols = (np.arange(n2) - (n2 - 1) / 2.0) / (n2 - 1)
        ramp = 1.0 + ramp_amplitude * cols  # endpoints differ by the amplitude
        container = base.labels == 1
        chi[container] *= ramp[np.where(container)[1]][:, None]
    return Phantom(
        labels=base.labels,
        materials=base.materials,
        energies=base.energies,
        chi=chi,
        pixel_size_cm=pixel_size_cm,
    )


# ----------------------------------------------------------- measurements


@dataclass
class MeasurementSet:
    """Photon counts per (energy bin, view, detector sample)."""

    counts: np.ndarray  # (N3, n_angles, n_det) int64
    photons: np.ndarray  # (N3,) source intensity per bin
    seed: int


def poisson_counts(lam: np.ndarray, seed: int) -> np.ndarray:
    """Poisson draws with one RNG stream per entry.

    ``lam`` has shape (bins, rays); entry ``(k, j)`` is drawn from a
    generator spawned from ``(seed, k, j)``, a counter-based scheme that
    makes results independent of evaluation order.  numpy's generator
    combines exact inversion for small rates with a transformed
    rejection sampler for large ones; rates must be within
    ``[0, LAMBDA_MAX]``.
    """
    lam = np.asarray(lam, dtype=float)
    if lam.ndim != 2:
        raise ValueError("lam must be 2D (bins, rays)")
    if np.any(~np.isfinite(lam)) or np.any(lam < 0) or np.any(lam > LAMBDA_MAX):
        raise ValueError(f"rates must lie in [0, {LAMBDA_MAX:.0e}]")
    out = np.empty(lam.shape, dtype=np.int64)
    for k in range(lam.shape[0]):
        for j in range(lam.shape[1]):
            gen = np.random.Generator(
                np.random.Philox(np.random.SeedSequence(entropy=seed, spawn_key=(k, j)))
            )
            out[k, j] = gen.poisson(lam[k, j])
    return out


def simulate_counts(phantom: Phantom, sm, photons, seed: int) -> MeasurementSet:
    """Forward-project the phantom and draw Poisson counts per bin.

    ``photons`` is a scalar or per-bin source intensity ``s_k``; the
    expected count on ray ``j`` of bin ``k`` is
    ``s_k * exp(-[A chi_k]_j)``.
    """
    n3 = len(phantom.energies)
    photons = np.broadcast_to(np.asarray(photons, dtype=float), (n3,)).copy()
    if np.any(photons <= 0) or np.any(photons > LAMBDA_MAX):
        raise ValueError(f"photons per bin must lie in (0, {LAMBDA_MAX:.0e}]")
    geom = sm.geometry
    lam = np.empty((n3, geom.n_rays))
    for k in range(n3):
        line = sm.matrix @ phantom.chi[:, :, k].ravel()
        lam[k] = photons[k] * np.exp(-line)
    counts = poisson_counts(lam, seed).reshape(n3, len(geom.angles), geom.n_det)
    return MeasurementSet(counts=counts, photons=photons, seed=seed)


@dataclass
class PWLSData:
    """Log-domain sinograms and statistical weights for weighted least squares."""

    sino: np.ndarray  # (N3, n_angles, n_det) estimated line integrals
    weights: np.ndarray  # (N3, n_angles, n_det) inverse-variance weights


def pwls_transform(meas: MeasurementSet) -> PWLSData:
    """Counts to (log sinogram, weight) pairs.

    Positive counts give ``m = log(s_k / y)`` with weight ``y`` (the
    inverse of the delta-method log-domain variance); zero-count rays
    carry no information and get ``m = 0`` with weight 0 rather than any
    clamped surrogate.
    """
    counts = np.asarray(meas.counts, dtype=float)
    sino = np.zeros_like(counts)
    weights = np.zeros_like(counts)
    pos = counts > 0
    s = np.broadcast_to(meas.photons[:, None, None], counts.shape)
    sino[pos] = np.log(s[pos] / counts[pos])
    weights[pos] = counts[pos]
    return PWLSData(sino=sino, weights=weights)
