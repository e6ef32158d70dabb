"""Single-patch reduction via reproduction numbers; oracle for p = 1.

Implements the scalar cascade independently of the general machinery:
each elimination step l computes

    R0 = B_(l) * beta_kk / (b_(l) * (b_(l) + theta_k)),    k = n - l,

keeps the strain at T*_k = B_(l)/b_(l) - (b_(l) + theta_k)/beta_kk when
R0 > 1 (updating B and b), and drops it otherwise.  At p = 1 the sign
of R0 - 1 agrees with the sign of the threshold matrix modulus, so this
module cross-checks the general cascade exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cascade import EquilibriumPoint
from .model import ModelParameters

__all__ = ["R0Sequence", "r0_cascade"]


@dataclass
class R0Sequence:
    """Reproduction numbers in elimination order (strain n first).

    coefficients holds the (birth_eff, death_eff) pair entering each
    step; both trails are nondecreasing.
    """

    values: list[float]
    coefficients: list[tuple[float, float]]

    def r0_for(self, strain: int) -> float:
        # values[0] belongs to strain n, values[-1] to strain 1
        return self.values[len(self.values) - strain]

    def to_dict(self) -> dict:
        n = len(self.values)
        return {
            "r0": {f"R0_{n - i}": v for i, v in enumerate(self.values)},
            "coefficients": [
                {"step": i, "birth_eff": b, "death_eff": d}
                for i, (b, d) in enumerate(self.coefficients)
            ],
        }


def r0_cascade(params: ModelParameters) -> tuple[R0Sequence, EquilibriumPoint]:
    """Run the scalar reduction; only defined for single-patch instances.

    Returns the reproduction-number sequence together with the
    equilibrium it implies: T*_k > 0 exactly when R0 for strain k
    exceeds 1, and the terminal susceptible level is B/b of the last
    step when strain 1 dies out, or (b + theta_1)/beta_11 when it
    persists.

    Raises:
        ValueError: params.patches != 1.
    """
    if params.patches != 1:
        raise ValueError(f"single-patch oracle requires p = 1, got {params.patches}")
    n = params.strains
    beta = params.beta_diag[0]
    theta = params.theta[0]

    birth = float(params.birth[0])
    death = float(params.death[0])

    values: list[float] = []
    coeffs: list[tuple[float, float]] = []
    levels = np.zeros(n)

    for step in range(n):
        k = n - step - 1  # 0-based strain index eliminated this cycle
        coeffs.append((birth, death))
        r0 = birth * beta[k] / (death * (death + theta[k]))
        values.append(r0)
        if r0 > 1.0:
            t_star = (birth * beta[k] - (death + theta[k]) * death) \
                / (beta[k] * death)
            levels[k] = t_star
            birth = birth + theta[k] * t_star
            death = death + beta[k] * t_star

    # terminal two-dimensional system: close out S and strain 1
    b_last, d_last = coeffs[-1]
    if values[-1] > 1.0:
        susceptible = (d_last + theta[0]) / beta[0]
        levels[0] = b_last / d_last - susceptible
    else:
        susceptible = b_last / d_last

    return (
        R0Sequence(values, coeffs),
        EquilibriumPoint(np.array([susceptible]), levels[None, :].copy()),
    )
