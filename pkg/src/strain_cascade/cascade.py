"""Iterative threshold cascade: predict the globally stable equilibrium.

Strains are eliminated from most to least virulent.  Each cycle q
(eliminating strain k = n - q):

  1. solve the linear total-population system for N*_k from the current
     effective birth/death rates,
  2. build the threshold matrix M_k = M + diag(c_k) with
     c_k^l = beta_kk^l N*_k^l - (b_(q)^l + theta_k^l),
  3. its stability modulus decides persistence: s(M_k) > 0 keeps the
     strain at the unique positive equilibrium of the reduced
     Lotka-Volterra system, s(M_k) <= 0 extinguishes it,
  4. fold the strain's level into the coefficients:
     b_(q+1) = b_(q) + beta_kk T*_k and B_(q+1) = B_(q) + theta_k T*_k.

After the last cycle the equilibrium is assembled bottom-up with
S-bar = N*_1 - T-bar_1.  The threshold sequence s(M_n), ..., s(M_1)
alone determines which strains persist.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import is_irreducible, solve_z, stability_modulus
from .model import ModelParameters, join_state, validate
from .simulate import IntegratorConfig, lv_integrate

__all__ = [
    "ReductionCoefficients",
    "StrainVerdict",
    "EquilibriumPoint",
    "CascadeReport",
    "CascadeError",
    "LVConvergenceError",
    "connectivity_matrix",
    "total_population_limit",
    "threshold_matrix",
    "lv_equilibrium",
    "run_cascade",
    "assemble_equilibrium",
]

NEAR_THRESHOLD_EPS = 1e-10   # |s| below this is flagged, sign still decides
WEAK_PERSISTENCE_EPS = 1e-12


class CascadeError(RuntimeError):
    """Numeric failure inside the cascade, tagged with the step."""

    def __init__(self, step: int, strain: int, cause: Exception):
        super().__init__(f"cascade step {step} (strain {strain}): {cause}")
        self.step = step
        self.strain = strain
        self.cause = cause


class LVConvergenceError(RuntimeError):
    """LV equilibrium solver failed; carries the best iterate found."""

    def __init__(self, best: np.ndarray, residual: float):
        super().__init__(
            f"LV equilibrium not found: best residual {residual:.3e}"
        )
        self.best = best
        self.residual = residual


@dataclass
class ReductionCoefficients:
    """Effective per-patch rates entering reduction step q."""

    step: int
    death_eff: np.ndarray   # b_(q), shape (p,)
    birth_eff: np.ndarray   # B_(q), shape (p,)

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "death_eff": self.death_eff.tolist(),
            "birth_eff": self.birth_eff.tolist(),
        }


@dataclass
class StrainVerdict:
    """Outcome of one cascade cycle for one strain."""

    strain: int                    # 1-based strain index
    threshold: float               # stability modulus s(M_strain)
    persists: bool
    levels: np.ndarray             # T*_strain per patch, zeros if extinct
    total_pop_limit: np.ndarray    # N*_strain per patch
    near_threshold: bool = False   # |s| < 1e-10: sign not numerically robust
    weak_persistence: bool = False  # persists but some level < 1e-12

    def to_dict(self) -> dict:
        return {
            "strain": self.strain,
            "threshold": self.threshold,
            "persists": self.persists,
            "levels": self.levels.tolist(),
            "total_pop_limit": self.total_pop_limit.tolist(),
            "near_threshold": self.near_threshold,
            "weak_persistence": self.weak_persistence,
        }


@dataclass
class EquilibriumPoint:
    """The predicted globally stable equilibrium, per patch and strain."""

    susceptible: np.ndarray   # (p,)
    infected: np.ndarray      # (p, n)

    def to_flat(self) -> np.ndarray:
        return join_state(self.susceptible, self.infected)

    def to_dict(self) -> dict:
        return {
            "susceptible": self.susceptible.tolist(),
            "infected": self.infected.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EquilibriumPoint":
        return cls(np.asarray(d["susceptible"], dtype=np.float64),
                   np.atleast_2d(np.asarray(d["infected"], dtype=np.float64)))


@dataclass
class CascadeReport:
    """Thresholds, verdicts, coefficient trail, and assembled equilibrium.

    verdicts are ordered by elimination (strain n first, strain 1 last).
    """

    verdicts: list[StrainVerdict]
    coefficients: list[ReductionCoefficients]
    equilibrium: EquilibriumPoint

    @property
    def thresholds(self) -> list[float]:
        """s(M_n), ..., s(M_1) in elimination order."""
        return [v.threshold for v in self.verdicts]

    @property
    def persistence_set(self) -> list[int]:
        """Sorted 1-based indices of strains present at equilibrium."""
        return sorted(v.strain for v in self.verdicts if v.persists)

    def verdict_for(self, strain: int) -> StrainVerdict:
        for v in self.verdicts:
            if v.strain == strain:
                return v
        raise KeyError(strain)

    def to_dict(self) -> dict:
        return {
            "thresholds": {f"s_M_{v.strain}": v.threshold for v in self.verdicts},
            "persistence_set": self.persistence_set,
            "verdicts": [v.to_dict() for v in self.verdicts],
            "coefficients": [c.to_dict() for c in self.coefficients],
            "equilibrium": self.equilibrium.to_dict(),
        }


def connectivity_matrix(migration: np.ndarray) -> np.ndarray:
    """Migration generator M: off-diagonal (l,i) = m_li, diagonal = -outflow.

    Column sums are zero, so s(M) = 0: the diagonal carries the total
    rate of leaving each patch, matching the outflow term of the ODEs.
    """
    mig = np.asarray(migration, dtype=np.float64)
    m = mig.copy()
    np.fill_diagonal(m, 0.0)
    m -= np.diag(m.sum(axis=0))
    return m


def total_population_limit(death_eff, birth_eff, migration) -> np.ndarray:
    """Unique positive N* with (diag(b_(q)) - M) N* = B_(q).

    The coefficient matrix is a strictly column-dominant Z-matrix with
    margin b_(q) > 0, so the solve is delegated to solve_z and the
    result is componentwise positive.
    """
    death_eff = np.asarray(death_eff, dtype=np.float64)
    birth_eff = np.asarray(birth_eff, dtype=np.float64)
    a = np.diag(death_eff) - connectivity_matrix(migration)
    return solve_z(a, birth_eff)


def threshold_matrix(params: ModelParameters, strain: int,
                     coeffs: ReductionCoefficients,
                     n_star: np.ndarray) -> np.ndarray:
    """Metzler matrix M_k whose stability modulus decides strain k.

    Diagonal: beta_kk^l N*^l - (b_(q)^l + theta_k^l) - outflow_l;
    off-diagonal (l,i): m_li.
    """
    if not 1 <= strain <= params.strains:
        raise IndexError(f"strain {strain} out of range [1, {params.strains}]")
    k = strain - 1
    c = (params.beta_diag[:, k] * n_star
         - (coeffs.death_eff + params.theta[:, k]))
    return connectivity_matrix(params.migration) + np.diag(c)


def _lv_residual(t, growth, beta, m):
    return t * (growth - beta * t) + m @ t


def lv_equilibrium(growth, beta, migration, tol: float = 1e-12,
                   modulus: float | None = None) -> np.ndarray:
    """Globally attracting equilibrium of the patch-structured LV system.

        T_l' = T_l (c_l - beta_l T_l) + sum_i (m_li T_i - m_il T_l)

    Returns zeros when the stability modulus of M + diag(c) is <= 0,
    else the unique strictly positive root, found by damped Newton from
    T_l = max(c_l, s)/beta_l with step halving (60 max); if Newton
    leaves the positive orthant or stalls, falls back to long-time
    integration (justified by global stability) plus a Newton polish.

    Raises:
        LVConvergenceError: residual above tol even after the fallback.
    """
    growth = np.asarray(growth, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    mig = np.asarray(migration, dtype=np.float64)
    p = growth.shape[0]
    m = connectivity_matrix(mig)

    if modulus is None:
        modulus = stability_modulus(m + np.diag(growth)).modulus
    if modulus <= 0.0:
        return np.zeros(p)

    guess = np.maximum(growth, modulus) / beta

    def newton(t0, iters):
        t = t0.copy()
        f = _lv_residual(t, growth, beta, m)
        nrm = np.abs(f).max()
        for _ in range(iters):
            if nrm <= tol:
                return t, nrm
            jac = m + np.diag(growth - 2.0 * beta * t)
            try:
                step = np.linalg.solve(jac, -f)
            except np.linalg.LinAlgError:
                return None
            accepted = False
            lam = 1.0
            for _ in range(60):
                t_try = t + lam * step
                if (t_try > 0).all():
                    f_try = _lv_residual(t_try, growth, beta, m)
                    nrm_try = np.abs(f_try).max()
                    if nrm_try < nrm:
                        t, f, nrm = t_try, f_try, nrm_try
                        accepted = True
                        break
                lam *= 0.5
            if not accepted:
                return None
        if nrm <= tol:
            return t, nrm
        return None

    result = newton(guess, 50)
    if result is not None:
        t, nrm = result
        if (t > 0).all():
            return t

    # fallback: the positive equilibrium is globally attracting from
    # any positive state, so integrate and polish
    cfg = IntegratorConfig(rel_tol=1e-12, abs_tol=1e-14, max_time=1e6,
                           max_steps=50_000_000,
                           convergence_eps=max(tol * 1e-2, 1e-14),
                           convergence_window=max(50.0, 10.0 / modulus))
    t_est = lv_integrate(growth, beta, mig, guess, cfg)
    t_est = np.maximum(t_est, 1e-300)
    result = newton(t_est, 25)
    if result is not None:
        t, nrm = result
        if (t > 0).all():
            return t
    resid = np.abs(_lv_residual(t_est, growth, beta, m)).max()
    if resid <= tol and (t_est > 0).all():
        return t_est
    raise LVConvergenceError(t_est, float(resid))


def run_cascade(params: ModelParameters) -> CascadeReport:
    """Execute all n reduction cycles and assemble the equilibrium.

    Requires validate(params) to pass.  Numeric failures are re-raised
    as CascadeError tagged with the failing step and strain.
    """
    bad = validate(params)
    if bad:
        raise ValueError("invalid parameters: " + "; ".join(map(str, bad)))

    p, n = params.patches, params.strains
    death_eff = params.death.copy()
    birth_eff = params.birth.copy()

    verdicts: list[StrainVerdict] = []
    trail: list[ReductionCoefficients] = []
    n_star_last = None

    for q in range(n):
        strain = n - q
        k = strain - 1
        coeffs = ReductionCoefficients(q, death_eff.copy(), birth_eff.copy())
        trail.append(coeffs)
        try:
            n_star = total_population_limit(death_eff, birth_eff,
                                            params.migration)
            m_k = threshold_matrix(params, strain, coeffs, n_star)
            s = stability_modulus(m_k).modulus
            c = (params.beta_diag[:, k] * n_star
                 - (death_eff + params.theta[:, k]))
            scale = max(1.0, float(np.abs(c).max() * n_star.max()))
            levels = lv_equilibrium(c, params.beta_diag[:, k],
                                    params.migration,
                                    tol=1e-13 * scale, modulus=s)
        except (ValueError, RuntimeError) as exc:
            raise CascadeError(q, strain, exc) from exc

        persists = s > 0.0
        verdicts.append(StrainVerdict(
            strain=strain,
            threshold=float(s),
            persists=persists,
            levels=levels,
            total_pop_limit=n_star,
            near_threshold=bool(abs(s) < NEAR_THRESHOLD_EPS),
            weak_persistence=bool(persists and levels.min() < WEAK_PERSISTENCE_EPS),
        ))
        death_eff = death_eff + params.beta_diag[:, k] * levels
        birth_eff = birth_eff + params.theta[:, k] * levels
        n_star_last = n_star

    equilibrium = assemble_equilibrium(p, n, verdicts, n_star_last)
    return CascadeReport(verdicts, trail, equilibrium)


def assemble_equilibrium(patches: int, strains: int,
                         verdicts: list[StrainVerdict],
                         n_star_final: np.ndarray) -> EquilibriumPoint:
    """Stack verdict levels and close the bookkeeping S-bar = N*_1 - T-bar_1.

    n_star_final is the total-population limit of the last cycle
    (strain 1).  A susceptible value below -1e-9 means the internal
    bookkeeping broke and is reported, never clamped.
    """
    if len(verdicts) != strains:
        raise ValueError(f"expected {strains} verdicts, got {len(verdicts)}")
    infected = np.zeros((patches, strains))
    for v in verdicts:
        infected[:, v.strain - 1] = v.levels
    susceptible = n_star_final - infected[:, 0]
    if (susceptible < -1e-9).any():
        l = int(np.argmin(susceptible))
        raise CascadeError(
            strains - 1, 1,
            RuntimeError(
                f"inconsistent assembly: susceptible[{l}] = {susceptible[l]!r}"
            ),
        )
    return EquilibriumPoint(susceptible, infected)
