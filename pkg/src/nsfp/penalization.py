"""Penalty and regularisation parameters, solid-region masks and the
penalised closures built on top of the constitutive relations.

Inside the fluid every mask equals one and the penalised quantities reduce to
the plain ones. In the solid the viscosities are damped by ``f_omega``, the
conductivity by ``nu`` and the radiation constant by ``xi``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import constitutive as cv
from .errors import ConfigError, DomainError


@dataclass(frozen=True)
class PenaltyParams:
    eps: float = 1e-3
    delta: float = 1e-3
    beta: float = 4.0
    lambda_: float = 0.35
    omega_: float = 0.35**3
    nu_: float = 0.35**3
    xi_: float = 0.35**6
    alpha: float = 6.5
    h: float | None = 0.35

    def __post_init__(self):
        if not self.eps > 0:
            raise DomainError(f"eps must be > 0, got {self.eps}")
        if not self.delta >= 0:
            raise DomainError(f"delta must be >= 0, got {self.delta}")
        if not self.beta >= 4:
            raise DomainError(f"beta must satisfy beta >= 4, got {self.beta}")
        if not 0 <= self.lambda_ <= 1:
            raise DomainError(f"lambda must lie in [0, 1], got {self.lambda_}")
        for name in ("omega_", "nu_", "xi_"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise DomainError(f"{name.rstrip('_')} must lie in (0, 1], got {v}")
        if not self.alpha > 6:
            raise DomainError(f"alpha must exceed 6, got {self.alpha}")
        if self.h is not None and not 0 < self.h <= 1:
            raise DomainError(f"h must lie in (0, 1], got {self.h}")

    @classmethod
    def from_schedule(cls, h, **fixed):
        return cls(**scaling_schedule(h), **fixed)

    def with_schedule(self, h):
        return replace(self, **scaling_schedule(h))

    @property
    def penalty_strength(self):
        return 1.0 / self.eps


def scaling_schedule(h):
    """Floors tied to a single scale: ``lambda = h``, ``nu = omega = h^3``, ``xi = h^6``."""
    if not 0 < h <= 1:
        raise DomainError(f"h must lie in (0, 1], got {h}")
    return {"h": h, "lambda_": h, "nu_": h**3, "omega_": h**3, "xi_": h**6}


@dataclass
class MaskFields:
    f_omega: np.ndarray
    chi_nu: np.ndarray
    chi_xi: np.ndarray
    fluid: np.ndarray

    @property
    def solid(self):
        return ~self.fluid


def cosine_ramp(s):
    """1 at s <= 0, 0 at s >= 1, half a cosine period in between."""
    s = np.clip(s, 0.0, 1.0)
    return 0.5 * (1.0 + np.cos(math.pi * s))


def build_masks(phi, params: PenaltyParams, dx, width=3):
    """Masks from a level set that is negative in the fluid.

    ``f_omega`` decays from 1 at the interface to ``omega`` at ``width`` cells
    into the solid; ``chi_nu`` and ``chi_xi`` jump sharply at the interface.
    """
    if width < 1:
        raise ConfigError(f"mask width must be at least one cell, got {width}")
    phi = np.asarray(phi, dtype=float)
    fluid = phi < 0
    s = np.where(fluid, 0.0, phi / (width * dx))
    om = params.omega_
    f_omega = np.where(fluid, 1.0, om + (1.0 - om) * cosine_ramp(s))
    chi_nu = np.where(fluid, 1.0, params.nu_)
    chi_xi = np.where(fluid, 1.0, params.xi_)
    return MaskFields(f_omega, chi_nu, chi_xi, fluid)


def solid_norm(masks: MaskFields, p, cell_volume):
    """Discrete ``L^p`` norm of ``f_omega`` over the solid cells."""
    vals = masks.f_omega[masks.solid]
    return float((np.sum(vals**p) * cell_volume) ** (1.0 / p))


def norm_exponent(alpha):
    return (alpha + 1.0) / (alpha - 1.0)


# ---------------------------------------------------------- penalised closures


def artificial_pressure(rho, params: PenaltyParams):
    return params.delta * np.asarray(rho, dtype=float) ** params.beta


def artificial_energy(rho, params: PenaltyParams):
    """Potential ``delta rho^beta / (beta - 1)`` whose density derivative gives the
    artificial pressure."""
    return params.delta * np.asarray(rho, dtype=float) ** params.beta / (params.beta - 1.0)


def thermal_pressure(state: cv.ThermoState, chi_xi, eos: cv.EosParams):
    """``p_M + chi_xi a theta^4 / 3``: the part of the pressure doing work on the
    internal energy."""
    return cv.molecular_pressure(state, eos) + cv.radiation_pressure(state.theta, eos, chi_xi)


def penalized_pressure(state: cv.ThermoState, chi_xi, params: PenaltyParams, eos: cv.EosParams):
    return thermal_pressure(state, chi_xi, eos) + artificial_pressure(state.rho, params)


def penalized_energy_entropy(state: cv.ThermoState, chi_xi, eos: cv.EosParams):
    """Specific ``(e_xi, s_xi)`` with the radiation constant scaled by ``chi_xi``."""
    rho = state.rho
    if np.any(~(np.asarray(rho) > 0)):
        raise DomainError("specific energy and entropy need rho > 0")
    E = cv.energy_density(state, eos, radiation_scale=chi_xi)
    S = cv.entropy_density(state, eos, radiation_scale=chi_xi)
    return E / rho, S / rho


def mollified_transport(theta, masks_or_fomega, chi_nu=None, tp: cv.TransportParams = cv.TransportParams()):
    """``(f_omega mu, f_omega eta, chi_nu kappa)``.

    Accepts either a :class:`MaskFields` or explicit ``f_omega`` and ``chi_nu``.
    """
    if isinstance(masks_or_fomega, MaskFields):
        f_omega, chi_nu = masks_or_fomega.f_omega, masks_or_fomega.chi_nu
    else:
        f_omega = masks_or_fomega
    mu, eta, kappa = cv.transport(theta, tp)
    return f_omega * mu, f_omega * eta, chi_nu * kappa
