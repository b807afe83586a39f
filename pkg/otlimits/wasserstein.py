"""
Відстані Васерштейна, двоїста задача Канторовича-Рубінштейна та розрив двоїстості.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from otlimits.core import AtomicMeasure, GroundSpace, SignedMeasure
from otlimits.errors import ValidationError
from otlimits.solver import run_lp, solve_transportation

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class DualPotential:
    """Потенціал φ з кулі Ліпшиця (нормований φ(0) = 0) та значення Σ φ·λ."""
    phi: np.ndarray
    value: float

    def to_dict(self) -> dict:
        return {"phi": self.phi.tolist(), "value": self.value}


def wasserstein_p(space: GroundSpace, p: float, a: AtomicMeasure, b: AtomicMeasure) -> float:
    """W_p(a, b) = (min Σ D^p dπ)^(1/p)."""
    if not p >= 1:
        raise ValidationError(f"показник p має бути >= 1, отримано {p}")
    plan = solve_transportation(space.dist ** p, a, b)
    return max(plan.value, 0.0) ** (1.0 / p)


def _lipschitz_constraints(m: int) -> sparse.csr_matrix:
    # рядок (i, j): φ_i - φ_j <= metric[i][j] для всіх i != j
    i, j = np.nonzero(~np.eye(m, dtype=bool))
    k = np.arange(i.size)
    return sparse.csr_matrix(
        (np.concatenate([np.ones(k.size), -np.ones(k.size)]), (np.concatenate([k, k]), np.concatenate([i, j]))),
        shape=(k.size, m),
    )


def lipschitz_dual(metric, lam: SignedMeasure) -> DualPotential:
    """
    max Σ φ·(λ⁺ − λ⁻) при φ_i − φ_j <= metric[i][j].

    Метрика може бути несиметричною (наприклад D_E для моделі з дрейфом);
    тоді значення збігається з транспортною задачею з λ⁺ у рядках.
    """
    metric = np.asarray(metric, dtype=float)
    m = metric.shape[0]
    if lam.size != m:
        raise ValidationError(f"λ розміру {lam.size} не відповідає метриці {m}x{m}")
    A_ub = _lipschitz_constraints(m)
    b_ub = metric[~np.eye(m, dtype=bool)]
    bounds = [(0.0, 0.0)] + [(None, None)] * (m - 1)
    res = run_lp(-lam.net, None, None, what="двоїста задача Ліпшиця", bounds=bounds, A_ub=A_ub, b_ub=b_ub)
    phi = res.x - res.x[0]
    return DualPotential(phi=phi, value=float(phi @ lam.net))


def w1_dual(space: GroundSpace, lam: SignedMeasure) -> DualPotential:
    return lipschitz_dual(space.dist, lam)


def duality_gap(space: GroundSpace, lam: SignedMeasure) -> float:
    """|W₁ прямої ЛП − значення двоїстої ЛП|."""
    primal = wasserstein_p(space, 1.0, lam.pos, lam.neg)
    dual = w1_dual(space, lam).value
    gap = abs(primal - dual)
    logger.debug(f"W₁: пряма {primal:.12g}, двоїста {dual:.12g}, розрив {gap:.3e}")
    return gap
