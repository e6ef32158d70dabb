"""Multistrain SIS model with superinfection on a network of patches.

Compartments per patch: one susceptible class S and n infected classes
T_1..T_n ordered by virulence (strain j takes over hosts of strain i
whenever i < j).  The flat state layout is patch-major:

    (S^1, T^1_1, ..., T^1_n, S^2, ..., S^p, T^p_1, ..., T^p_n)

Only the diagonal transmission rates beta_kk are free parameters; the
full rate matrix is derived from them (see :func:`full_beta`), which
makes the superinfection antisymmetry impossible to violate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ModelParameters",
    "StateVector",
    "Violation",
    "DimensionMismatchError",
    "full_beta",
    "validate",
    "rhs",
    "state_dim",
    "split_state",
    "join_state",
]


class DimensionMismatchError(ValueError):
    """State vector length does not match (n+1)*p for the parameters."""


@dataclass
class Violation:
    """One validation failure: which field, where, and why."""

    field: str
    index: tuple
    reason: str

    def __str__(self) -> str:
        where = "" if not self.index else str(list(self.index))
        return f"{self.field}{where}: {self.reason}"


@dataclass(eq=False)
class ModelParameters:
    """All rates of the model; the single source of truth for one instance.

    Attributes:
        patches: number of patches p (>= 1).
        strains: number of strains n (>= 1), ordered by virulence.
        birth: per-patch birth rates B, shape (p,), individuals/time.
        death: per-patch death rates b, shape (p,), 1/time.
        beta_diag: transmission rates beta_kk, shape (p, n),
            1/(individuals * time).  Strictly positive.
        theta: recovery rates, shape (p, n), 1/time.  Nonnegative.
        migration: travel rates, shape (p, p); migration[l][i] is the
            rate from patch i to patch l.  Diagonal must be zero.
    """

    patches: int
    strains: int
    birth: np.ndarray
    death: np.ndarray
    beta_diag: np.ndarray
    theta: np.ndarray
    migration: np.ndarray

    def __post_init__(self):
        self.patches = int(self.patches)
        self.strains = int(self.strains)
        for name in ("birth", "death", "beta_diag", "theta", "migration"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))

    def copy(self) -> "ModelParameters":
        return ModelParameters(
            self.patches,
            self.strains,
            self.birth.copy(),
            self.death.copy(),
            self.beta_diag.copy(),
            self.theta.copy(),
            self.migration.copy(),
        )

    def to_dict(self) -> dict:
        return {
            "patches": self.patches,
            "strains": self.strains,
            "birth": self.birth.tolist(),
            "death": self.death.tolist(),
            "beta_diag": self.beta_diag.tolist(),
            "theta": self.theta.tolist(),
            "migration": self.migration.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParameters":
        return cls(
            patches=d["patches"],
            strains=d["strains"],
            birth=d["birth"],
            death=d["death"],
            beta_diag=d["beta_diag"],
            theta=d["theta"],
            migration=d["migration"],
        )


@dataclass(eq=False)
class StateVector:
    """Structured view of one phase point in Gamma = R_+^{(n+1)p}."""

    susceptible: np.ndarray  # (p,)
    infected: np.ndarray     # (p, n)

    def __post_init__(self):
        self.susceptible = np.asarray(self.susceptible, dtype=np.float64)
        self.infected = np.atleast_2d(np.asarray(self.infected, dtype=np.float64))

    @classmethod
    def from_flat(cls, y: np.ndarray, patches: int, strains: int) -> "StateVector":
        s, t = split_state(np.asarray(y, dtype=np.float64), patches, strains)
        return cls(s, t)

    def to_flat(self) -> np.ndarray:
        return join_state(self.susceptible, self.infected)

    @property
    def nonnegative(self) -> bool:
        return bool(self.susceptible.min(initial=np.inf) >= 0.0
                    and self.infected.min(initial=np.inf) >= 0.0)


def state_dim(params: ModelParameters) -> int:
    return (params.strains + 1) * params.patches


def split_state(y: np.ndarray, patches: int, strains: int):
    """Flat state -> (S of shape (p,), T of shape (p, n))."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape != ((strains + 1) * patches,):
        raise DimensionMismatchError(
            f"state has shape {y.shape}, expected (({strains}+1)*{patches},)"
        )
    blocks = y.reshape(patches, strains + 1)
    return blocks[:, 0].copy(), blocks[:, 1:].copy()


def join_state(susceptible: np.ndarray, infected: np.ndarray) -> np.ndarray:
    """(S, T) -> flat patch-major state vector."""
    s = np.asarray(susceptible, dtype=np.float64)
    t = np.atleast_2d(np.asarray(infected, dtype=np.float64))
    return np.hstack([s[:, None], t]).ravel()


def full_beta(params: ModelParameters, patch: int) -> np.ndarray:
    """Full n x n transmission-rate matrix of one patch.

    Row k, column j (0-based) holds the rate at which strain k+1 infects
    hosts carrying strain j+1: beta_kk for j <= k and -beta_jj for j > k,
    so the off-diagonal part is exactly antisymmetric.
    """
    if not 0 <= patch < params.patches:
        raise IndexError(f"patch {patch} out of range [0, {params.patches})")
    d = params.beta_diag[patch]
    n = params.strains
    m = np.where(np.arange(n)[:, None] >= np.arange(n)[None, :],
                 d[:, None], -d[None, :])
    return m


def _check_array(violations, name, arr, shape):
    if arr.shape != shape:
        violations.append(Violation(name, (), f"shape {arr.shape}, expected {shape}"))
        return False
    bad = ~np.isfinite(arr)
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        violations.append(Violation(name, idx, "non-finite entry"))
        return False
    return True


def validate(params: ModelParameters) -> list[Violation]:
    """Check every structural invariant; empty list means admissible.

    Returns a structured violation list and never raises on finite
    inputs.  Checks sign constraints, shapes, the zero migration
    diagonal, and (for p > 1) strong connectivity of the migration
    graph, which the threshold theory requires.
    """
    v: list[Violation] = []
    p, n = params.patches, params.strains
    if p < 1:
        v.append(Violation("patches", (), f"must be >= 1, got {p}"))
    if n < 1:
        v.append(Violation("strains", (), f"must be >= 1, got {n}"))
    if v:
        return v

    ok_b = _check_array(v, "birth", params.birth, (p,))
    ok_d = _check_array(v, "death", params.death, (p,))
    ok_beta = _check_array(v, "beta_diag", params.beta_diag, (p, n))
    ok_th = _check_array(v, "theta", params.theta, (p, n))
    ok_m = _check_array(v, "migration", params.migration, (p, p))

    if ok_b:
        for l in np.nonzero(params.birth <= 0)[0]:
            v.append(Violation("birth", (int(l),), "must be > 0"))
    if ok_d:
        for l in np.nonzero(params.death <= 0)[0]:
            v.append(Violation("death", (int(l),), "must be > 0"))
    if ok_beta:
        for l, k in np.argwhere(params.beta_diag <= 0):
            v.append(Violation("beta_diag", (int(l), int(k)), "must be > 0"))
    if ok_th:
        for l, k in np.argwhere(params.theta < 0):
            v.append(Violation("theta", (int(l), int(k)), "must be >= 0"))
    if ok_m:
        for l, i in np.argwhere(params.migration < 0):
            v.append(Violation("migration", (int(l), int(i)), "must be >= 0"))
        for l in np.nonzero(np.diag(params.migration) != 0)[0]:
            v.append(Violation("migration", (int(l), int(l)), "diagonal must be exactly 0"))
        if p > 1 and not v:
            from .linalg import is_irreducible

            if not is_irreducible(params.migration):
                v.append(Violation(
                    "migration", (),
                    "reducible connectivity: migration graph is not strongly connected",
                ))
    return v


def rhs(params: ModelParameters, state) -> np.ndarray:
    """Exact time derivative of the full system at one state.

    Reference implementation built from :func:`full_beta`; pure, no
    state mutation.  The hot integration path lives in
    :mod:`strain_cascade.kernels` and is pinned to this function by
    tests.

    Args:
        params: admissible model parameters.
        state: flat state vector of length (n+1)*p, or a StateVector.

    Returns:
        Flat derivative vector, same layout as the state.
    """
    if isinstance(state, StateVector):
        y = state.to_flat()
    else:
        y = np.asarray(state, dtype=np.float64)
    p, n = params.patches, params.strains
    s, t = split_state(y, p, n)

    mig = params.migration
    outflow = mig.sum(axis=0)  # total rate of leaving each patch

    ds = (params.birth - params.death * s
          - s * (params.beta_diag * t).sum(axis=1)
          + (params.theta * t).sum(axis=1)
          + mig @ s - outflow * s)

    dt = np.empty((p, n))
    for l in range(p):
        interaction = full_beta(params, l) @ t[l]
        # the diagonal contribution beta_kk*T_k belongs to the S*beta term
        interaction -= params.beta_diag[l] * t[l]
        dt[l] = (s[l] * params.beta_diag[l] * t[l]
                 + t[l] * interaction
                 - (params.death[l] + params.theta[l]) * t[l])
    dt += mig @ t - outflow[:, None] * t

    return join_state(ds, dt)
