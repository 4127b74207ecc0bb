"""Uniform 1-D grids (a line, or the radial section of R^N) and the discrete
operators of the regularized equation.

Control volumes are chosen so that the flux-form divergence telescopes:
``sum(volumes * divergence(F))`` equals the boundary flux exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class Geometry(str, Enum):
    LINE = "line"
    RADIAL = "radial"


STENCILS = ("face", "upwind", "centered")


def sphere_area(N: int) -> float:
    """Surface area of the unit sphere in R^N (2 for N=1, 2*pi for N=2)."""
    return 2.0 * math.pi ** (N / 2.0) / math.gamma(N / 2.0)


@dataclass(frozen=True)
class Grid:
    geometry: Geometry
    L: float
    M: int
    N: int = 1
    # derived arrays, filled in __post_init__
    x: np.ndarray = field(init=False, repr=False, compare=False)
    volumes: np.ndarray = field(init=False, repr=False, compare=False)
    face_areas: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        geom = Geometry(self.geometry)
        object.__setattr__(self, "geometry", geom)
        if not (isinstance(self.L, (int, float)) and math.isfinite(self.L) and self.L > 0):
            raise ValueError(f"grid L must be positive, got {self.L!r}")
        if isinstance(self.M, bool) or not isinstance(self.M, int) or self.M < 8:
            raise ValueError(f"grid M must be an integer >= 8, got {self.M!r}")
        if isinstance(self.N, bool) or not isinstance(self.N, int) or self.N < 1:
            raise ValueError(f"grid N must be an integer >= 1, got {self.N!r}")
        if geom is Geometry.LINE and self.N != 1:
            raise ValueError("line geometry is one-dimensional (N=1)")
        L, M, N = float(self.L), self.M, self.N
        object.__setattr__(self, "L", L)
        h = L / M
        if geom is Geometry.LINE:
            x = -L + h * np.arange(2 * M + 1)
            x[M] = 0.0
            vol = np.full(x.size, h)
            vol[0] = vol[-1] = 0.5 * h
            areas = np.ones(x.size - 1)
        else:
            x = h * np.arange(M + 1)
            w = sphere_area(N)
            vol = w * x ** (N - 1) * h
            vol[0] = w * (0.5 * h) ** N / N
            vol[-1] = 0.5 * w * L ** (N - 1) * h
            areas = w * (x[:-1] + 0.5 * h) ** (N - 1)
        for arr in (x, vol, areas):
            arr.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "volumes", vol)
        object.__setattr__(self, "face_areas", areas)

    @property
    def h(self) -> float:
        return self.L / self.M

    @property
    def n_nodes(self) -> int:
        return self.x.size

    @property
    def dim_factor(self) -> int:
        return 1 if self.geometry is Geometry.LINE else self.N

    def describe(self) -> dict:
        return {"geometry": self.geometry.value, "L": self.L, "M": self.M, "N": self.N}

    def same_shape(self, other: "Grid") -> bool:
        return self.describe() == other.describe()


@dataclass
class Field:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size != self.grid.n_nodes:
            raise ValueError(
                f"field has {v.size} values, grid expects {self.grid.n_nodes}"
            )
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        self.values = v


# -- regularized coefficients ------------------------------------------------

def a_eps(xi, p: float, eps: float):
    """Diffusivity (xi + eps^2)^{(p-2)/2}; bounded by eps^{p-2}."""
    return (np.asarray(xi) + eps * eps) ** (0.5 * (p - 2.0))


def b_eps(xi, q: float, eps: float):
    """Absorption (xi + eps^2)^{q/2} - eps^q; vanishes at xi = 0."""
    xi = np.asarray(xi, dtype=float)
    # (xi+e^2)^{q/2} - e^q = e^q * expm1((q/2) log1p(xi/e^2)), no cancellation
    return eps ** q * np.expm1(0.5 * q * np.log1p(xi / (eps * eps)))


def b_eps_slope(g, q: float, eps: float):
    """d/dg of b_eps(g^2): the characteristic speed of the absorption term."""
    g = np.asarray(g, dtype=float)
    return q * g * (g * g + eps * eps) ** (0.5 * q - 1.0)


# -- raw array kernels used by the solver ------------------------------------

def face_differences(u: np.ndarray, h: float) -> np.ndarray:
    return np.diff(u) / h


def divergence(grid: Grid, flux: np.ndarray) -> np.ndarray:
    """Discrete divergence of face fluxes with zero flux at both ends."""
    af = grid.face_areas * flux
    out = np.empty(grid.n_nodes)
    out[0] = af[0]
    out[1:-1] = af[1:] - af[:-1]
    out[-1] = -af[-1]
    return out / grid.volumes


def node_gradient_sq(grid: Grid, u: np.ndarray, stencil: str = "face") -> np.ndarray:
    """Squared gradient magnitude at the nodes.

    ``face``     mean of the squared adjacent face differences,
    ``upwind``   Godunov/Rouy-Tourin upwinding for a sink increasing in |grad u|,
    ``centered`` central difference, one-sided at the outer boundary.
    Missing faces at the ends are filled by even reflection (zero flux).
    """
    D = face_differences(u, grid.h)
    Dm = np.empty(u.size)
    Dp = np.empty(u.size)
    Dm[1:] = D
    Dp[:-1] = D
    Dm[0] = -D[0]
    Dp[-1] = -D[-1]
    if stencil == "face":
        return 0.5 * (Dm * Dm + Dp * Dp)
    if stencil == "upwind":
        g = np.maximum(np.maximum(Dm, -Dp), 0.0)
        return g * g
    if stencil == "centered":
        g = 0.5 * (Dm + Dp)
        g[-1] = D[-1]
        if grid.geometry is Geometry.LINE:
            g[0] = D[0]
        else:
            g[0] = 0.0
        return g * g
    raise ValueError(f"unknown stencil {stencil!r}; expected one of {STENCILS}")


def diffusion_fluxes(grid: Grid, u: np.ndarray, p: float, eps: float) -> np.ndarray:
    D = face_differences(u, grid.h)
    return a_eps(D * D, p, eps) * D


# -- Field-level operators ----------------------------------------------------

def gradient_magnitude(field: Field, stencil: str = "centered") -> Field:
    g2 = node_gradient_sq(field.grid, field.values, stencil)
    return Field(field.grid, np.sqrt(g2))


def p_laplacian_reg(field: Field, p: float, eps: float) -> Field:
    """div(a_eps(|grad u|^2) grad u) in conservative flux form."""
    F = diffusion_fluxes(field.grid, field.values, p, eps)
    return Field(field.grid, divergence(field.grid, F))


def hamilton_term_reg(field: Field, q: float, eps: float, stencil: str = "face") -> Field:
    """Nodewise b_eps(|grad u|^2)."""
    g2 = node_gradient_sq(field.grid, field.values, stencil)
    return Field(field.grid, b_eps(g2, q, eps))
