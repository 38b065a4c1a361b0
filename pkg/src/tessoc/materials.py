"""Material and thermodynamic primitives for the phase-change storage model.

All temperatures are absolute kelvin. The latent heat of fusion is modeled
as a bump in the effective specific heat centered on the phase-change
temperature, so enthalpy and melt fraction follow from the same logistic
kernel. Exponentials are evaluated in overflow-safe forms (arguments
clamped at +/-500) so extreme temperatures return the correct limits.

Cell roles follow the storage-module cross section: one fluid layer at the
bottom, one metal plate layer above it, and composite-PCM (CPCM) layers on
top. State vectors are ordered fluid cells first (inlet to outlet), then
plate cells, then CPCM layers bottom to top.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .errors import InvalidConfigError, InvalidInputError

_EXP_CLAMP = 500.0

# Plausibility band for temperatures; violations warn but do not fail.
_T_PLAUSIBLE_LOW = 200.0
_T_PLAUSIBLE_HIGH = 400.0


class CellRole(IntEnum):
    FLUID = 0
    PLATE = 1
    CPCM = 2


@dataclass(frozen=True)
class PcmThermalParams:
    """Thermal properties of the composite phase-change material.

    cp_sol      solid specific heat [J/(kg*K)]
    cp_liq      liquid specific heat [J/(kg*K)]
    h_fus       specific enthalpy of fusion [J/kg]
    t_pc        phase-change temperature [K]
    delta_t_pc  width of the latent temperature band [K]

    The logistic width parameter is tied to the band width as
    ``alpha = 8 / delta_t_pc`` so that ~98% of the latent heat falls
    inside ``t_pc +/- delta_t_pc/2``.
    """

    cp_sol: float
    cp_liq: float
    h_fus: float
    t_pc: float
    delta_t_pc: float

    def __post_init__(self):
        for name in ("cp_sol", "cp_liq", "h_fus", "t_pc", "delta_t_pc"):
            v = getattr(self, name)
            if not np.isfinite(v) or v <= 0.0:
                raise InvalidConfigError(f"PcmThermalParams.{name} must be finite and > 0, got {v}")

    @property
    def alpha(self) -> float:
        """Logistic width parameter [1/K]."""
        return 8.0 / self.delta_t_pc


@dataclass(frozen=True)
class FluidParams:
    """Working-fluid properties.

    cp_f    specific heat [J/(kg*K)]
    u_conv  convective heat transfer coefficient fluid-to-plate [W/(m^2*K)]
    """

    cp_f: float
    u_conv: float

    def __post_init__(self):
        if not np.isfinite(self.cp_f) or self.cp_f <= 0.0:
            raise InvalidConfigError(f"FluidParams.cp_f must be finite and > 0, got {self.cp_f}")
        if not np.isfinite(self.u_conv) or self.u_conv <= 0.0:
            raise InvalidConfigError(f"FluidParams.u_conv must be finite and > 0, got {self.u_conv}")


@dataclass(frozen=True)
class GridSpec:
    """Control-volume lattice for one storage-module cross section.

    nx        number of columns along the flow direction
    ny        number of layers (1 fluid + 1 plate + (ny-2) CPCM)
    dx        column length along the flow direction [m]
    dy        per-layer heights, length ny [m]
    dz        module width [m]
    mass      per-cell mass, length nx*ny [kg]
    role      per-cell CellRole, length nx*ny
    kappa     per-cell thermal conductivity [W/(m*K)]
    cp_const  per-cell constant specific heat for fluid/plate cells
              [J/(kg*K)]; NaN for CPCM cells, whose specific heat is
              temperature-dependent

    Cell ``j = iy*nx + ix`` sits in column ``ix`` (0-based, inlet at 0)
    and layer ``iy`` (0-based, fluid layer at 0).
    """

    nx: int
    ny: int
    dx: float
    dy: np.ndarray
    dz: float
    mass: np.ndarray
    role: np.ndarray
    kappa: np.ndarray
    cp_const: np.ndarray

    def __post_init__(self):
        if self.nx < 1 or self.ny < 2:
            raise InvalidConfigError(f"grid needs nx >= 1 and ny >= 2, got {self.nx}x{self.ny}")
        n = self.nx * self.ny
        for name, length, dtype in (
            ("dy", self.ny, float),
            ("mass", n, float),
            ("role", n, np.int8),
            ("kappa", n, float),
            ("cp_const", n, float),
        ):
            a = np.array(getattr(self, name), dtype=dtype)
            if a.shape != (length,):
                raise InvalidConfigError(f"GridSpec.{name} must have shape ({length},), got {a.shape}")
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if not (self.dx > 0.0 and self.dz > 0.0 and np.all(self.dy > 0.0)):
            raise InvalidConfigError("grid dimensions must be positive")
        if not (np.all(self.mass > 0.0) and np.all(self.kappa > 0.0)):
            raise InvalidConfigError("cell masses and conductivities must be positive")
        expected = np.repeat(self._expected_layer_roles(), self.nx)
        if not np.array_equal(self.role, expected):
            raise InvalidConfigError("cell roles must be fluid layer, plate layer, then CPCM layers")
        non_cpcm = self.role != CellRole.CPCM
        if not np.all(np.isfinite(self.cp_const[non_cpcm])):
            raise InvalidConfigError("fluid and plate cells need a finite constant specific heat")

    def _expected_layer_roles(self) -> np.ndarray:
        roles = np.full(self.ny, CellRole.CPCM, dtype=np.int8)
        roles[0] = CellRole.FLUID
        roles[1] = CellRole.PLATE
        return roles

    @property
    def n(self) -> int:
        return self.nx * self.ny

    @property
    def n_cpcm_layers(self) -> int:
        return self.ny - 2

    def cell_index(self, ix: int, iy: int) -> int:
        if not (0 <= ix < self.nx and 0 <= iy < self.ny):
            raise InvalidInputError(f"cell ({ix}, {iy}) outside {self.nx}x{self.ny} grid")
        return iy * self.nx + ix

    def cell_coords(self, j: int) -> tuple[int, int]:
        if not (0 <= j < self.n):
            raise InvalidInputError(f"cell index {j} outside grid with {self.n} cells")
        return j % self.nx, j // self.nx

    def mask(self, role: CellRole) -> np.ndarray:
        return np.asarray(self.role) == role

    @classmethod
    def rectangular(
        cls,
        nx: int,
        ny: int,
        length: float,
        width: float,
        fluid_height: float,
        plate_height: float,
        cpcm_height: float,
        rho_fluid: float,
        rho_plate: float,
        rho_cpcm: float,
        kappa_fluid: float,
        kappa_plate: float,
        kappa_cpcm: float,
        cp_fluid: float,
        cp_plate: float,
    ) -> "GridSpec":
        """Build a uniform lattice: the CPCM stack is split into ny-2 equal layers."""
        if ny < 2:
            raise InvalidConfigError(f"rectangular grid needs ny >= 2, got {ny}")
        dx = length / nx
        dy = np.empty(ny)
        dy[0] = fluid_height
        dy[1] = plate_height
        if ny > 2:
            dy[2:] = cpcm_height / (ny - 2)

        layer_rho = np.empty(ny)
        layer_rho[0], layer_rho[1], layer_rho[2:] = rho_fluid, rho_plate, rho_cpcm
        layer_kappa = np.empty(ny)
        layer_kappa[0], layer_kappa[1], layer_kappa[2:] = kappa_fluid, kappa_plate, kappa_cpcm
        layer_cp = np.full(ny, np.nan)
        layer_cp[0], layer_cp[1] = cp_fluid, cp_plate

        roles = np.full(ny, CellRole.CPCM, dtype=np.int8)
        roles[0], roles[1] = CellRole.FLUID, CellRole.PLATE

        mass = np.repeat(layer_rho * dy, nx) * dx * width
        return cls(
            nx=nx,
            ny=ny,
            dx=dx,
            dy=dy,
            dz=width,
            mass=mass,
            role=np.repeat(roles, nx),
            kappa=np.repeat(layer_kappa, nx),
            cp_const=np.repeat(layer_cp, nx),
        )


@dataclass(frozen=True)
class SocParams:
    """Enthalpy bounds defining the state-of-charge mapping.

    Build through :meth:`from_temperatures` so the bounds are always the
    total enthalpy evaluated at the uniform minimum/maximum expected
    temperatures; setting them independently breaks the SOC convention
    (SOC 1 at minimum stored energy, 0 at maximum).
    """

    t_min: float
    t_max: float
    h_min: float
    h_max: float

    @classmethod
    def from_temperatures(
        cls, t_min: float, t_max: float, grid: GridSpec, pcm: PcmThermalParams
    ) -> "SocParams":
        if not (t_min < pcm.t_pc < t_max):
            raise InvalidConfigError(
                f"need t_min < t_pc < t_max, got {t_min} / {pcm.t_pc} / {t_max}"
            )
        n = grid.n
        h_min = total_enthalpy(np.full(n, float(t_min)), grid, pcm)
        h_max = total_enthalpy(np.full(n, float(t_max)), grid, pcm)
        if not h_min < h_max:
            raise InvalidConfigError(
                "enthalpy bounds are not ordered; grid has no CPCM cells to store energy"
                if not np.any(grid.mask(CellRole.CPCM))
                else f"enthalpy bounds are not ordered: {h_min} >= {h_max}"
            )
        return cls(t_min=float(t_min), t_max=float(t_max), h_min=h_min, h_max=h_max)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    """Logistic function evaluated without overflow on either tail."""
    z = np.clip(z, -_EXP_CLAMP, _EXP_CLAMP)
    out = np.empty_like(z)
    pos = z >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _as_temperature_array(T, name: str = "T") -> tuple[np.ndarray, bool]:
    arr = np.asarray(T, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} must be finite, got {T!r}")
    return arr, arr.ndim == 0


def effective_specific_heat(T, p: PcmThermalParams):
    """Effective CPCM specific heat [J/(kg*K)] at temperature T [K].

    Logistic blend of the solid and liquid specific heats plus a latent
    bump that integrates to the heat of fusion; strictly positive and
    smooth in T. Accepts scalars or arrays.
    """
    T, scalar = _as_temperature_array(T)
    f = _sigmoid(p.alpha * (T - p.t_pc))
    # f*(1-f) == 1/(2 + e^z + e^-z): the latent bump in a form that never overflows
    cp = p.cp_sol + (p.cp_liq - p.cp_sol) * f + p.h_fus * p.alpha * f * (1.0 - f)
    return float(cp) if scalar else cp


def melt_fraction(T, p: PcmThermalParams):
    """Liquid volume fraction of the CPCM at temperature T [K].

    The logistic kernel shared with :func:`effective_specific_heat`:
    0.5 at the phase-change temperature, 0/1 in the solid/liquid limits,
    strictly increasing in between.
    """
    T, scalar = _as_temperature_array(T)
    f = _sigmoid(p.alpha * (T - p.t_pc))
    return float(f) if scalar else f


def specific_enthalpy(T, p: PcmThermalParams):
    """CPCM specific enthalpy [J/kg], zero at the phase-change temperature.

    Closed-form antiderivative of :func:`effective_specific_heat`:
    d(specific_enthalpy)/dT == effective_specific_heat(T).
    """
    T, scalar = _as_temperature_array(T)
    z = p.alpha * (T - p.t_pc)
    # log((1 + e^z)/2) = softplus(z) - log 2, branch-free in both tails
    ln_term = np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z))) - np.log(2.0)
    h = (
        0.5 * p.h_fus * np.tanh(0.5 * z)
        + (T - p.t_pc) * p.cp_sol
        + (p.cp_liq - p.cp_sol) / p.alpha * ln_term
    )
    return float(h) if scalar else h


def total_enthalpy(x: np.ndarray, grid: GridSpec, p: PcmThermalParams) -> float:
    """Stored energy [J]: mass-weighted CPCM specific enthalpy, CPCM cells only."""
    x = np.asarray(x, dtype=float)
    if x.shape != (grid.n,):
        raise InvalidInputError(f"state vector must have shape ({grid.n},), got {x.shape}")
    mask = grid.mask(CellRole.CPCM)
    if not np.any(mask):
        return 0.0
    return float(np.dot(np.asarray(grid.mass)[mask], specific_enthalpy(x[mask], p)))


def state_of_charge(H: float, s: SocParams) -> float:
    """Piecewise-linear SOC: 1 below the minimum-energy bound, 0 above the maximum."""
    if not s.h_min < s.h_max:
        raise InvalidConfigError(f"SocParams bounds not ordered: {s.h_min} >= {s.h_max}")
    if H < s.h_min:
        return 1.0
    if H > s.h_max:
        return 0.0
    return (s.h_max - H) / (s.h_max - s.h_min)


def validate_state(x, grid: GridSpec) -> np.ndarray:
    """Check a temperature state vector against the grid; returns a float array.

    Length mismatches and non-finite entries are errors; temperatures
    outside the plausible 200-400 K band only warn.
    """
    arr = np.asarray(x, dtype=float)
    if arr.shape != (grid.n,):
        raise InvalidInputError(f"state vector must have shape ({grid.n},), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        bad = int(np.flatnonzero(~np.isfinite(arr))[0])
        raise InvalidInputError(f"state vector has non-finite entry at index {bad}")
    if np.any(arr < _T_PLAUSIBLE_LOW) or np.any(arr > _T_PLAUSIBLE_HIGH):
        warnings.warn(
            f"temperatures outside the plausible band [{_T_PLAUSIBLE_LOW}, {_T_PLAUSIBLE_HIGH}] K",
            stacklevel=2,
        )
    return arr
