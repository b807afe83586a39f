"""
Точні ядра лінійного програмування: транспортна задача, задача циркуляції
(однакові вільні маргінали) та спільна задача з вільною мірою μ.

Усі задачі розв'язуються двоїстим симплексом HiGHS, тому повертається
вершинний оптимум. Тести перевіряють значення, а не конкретний план.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from otlimits import config
from otlimits.core import AtomicMeasure, SignedMeasure
from otlimits.errors import SolverError, ValidationError

logger = logging.getLogger(__name__)

LP_METHOD = "highs-ds"


@dataclass(frozen=True, eq=False)
class TransportPlan:
    """
    Оптимальний план з двоїстими потенціалами.

    Двоїсті змінні задовольняють phi[j] - psi[i] <= cost[i][j],
    а dual_value = Σ phi·b - Σ psi·a.
    """
    plan: np.ndarray
    value: float
    phi: Optional[np.ndarray] = None
    psi: Optional[np.ndarray] = None
    dual_value: Optional[float] = None

    @property
    def source_marginal(self) -> np.ndarray:
        return self.plan.sum(axis=1)

    @property
    def target_marginal(self) -> np.ndarray:
        return self.plan.sum(axis=0)

    def to_dict(self) -> dict:
        return {"value": self.value, "plan": self.plan.tolist()}


@dataclass(frozen=True, eq=False)
class JointSolution:
    """Мінімізатор спільної задачі: μ, план між μ+ελ⁺ та μ+ελ⁻ і значення."""
    mu: AtomicMeasure
    plan: TransportPlan
    value: float
    eps: float

    def to_dict(self) -> dict:
        return {"value": self.value, "plan": self.plan.plan.tolist(), "mu": self.mu.weights.tolist()}


def _check_cost(cost) -> np.ndarray:
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValidationError(f"матриця вартості має бути квадратною, отримано {cost.shape}")
    if np.any(np.isnan(cost)):
        raise ValidationError("матриця вартості містить NaN")
    if not np.all(np.isfinite(cost)):
        raise ValidationError("матриця вартості містить нескінченні значення")
    return cost


def _weights(measure) -> np.ndarray:
    if isinstance(measure, AtomicMeasure):
        return measure.weights
    return AtomicMeasure(measure).weights


def _marginal_operators(rows: int, cols: int) -> Tuple[sparse.csr_matrix, sparse.csr_matrix]:
    """Оператори сум по рядках та по стовпцях для плану, розгорнутого по рядках."""
    row_sum = sparse.kron(sparse.identity(rows), np.ones((1, cols)), format="csr")
    col_sum = sparse.kron(np.ones((1, rows)), sparse.identity(cols), format="csr")
    return row_sum, col_sum


def run_lp(c, A_eq, b_eq, what: str, bounds=(0, None), A_ub=None, b_ub=None):
    res = linprog(
        c,
        A_ub=A_ub,
        b_ub=b_ub,
        A_eq=A_eq,
        b_eq=b_eq,
        bounds=bounds,
        method=LP_METHOD,
        options={
            "primal_feasibility_tolerance": config.FEASIBILITY_TOLERANCE,
            "dual_feasibility_tolerance": config.FEASIBILITY_TOLERANCE,
        },
    )
    if res.status != 0:
        raise SolverError(f"{what}: HiGHS повернув статус {res.status} ({res.message})")
    return res


def solve_transportation(cost, a, b) -> TransportPlan:
    """
    Транспортна задача min Σ cost·plan над 𝓟(a, b).

    ЛП будується лише на носіях a та b (нульові рядки плану примусово нульові),
    потенціали поза носіями добудовуються c-перетворенням.
    """
    cost = _check_cost(cost)
    a_w, b_w = _weights(a), _weights(b)
    m = cost.shape[0]
    if a_w.size != m or b_w.size != m:
        raise ValidationError(f"маргінали розміру {a_w.size}/{b_w.size} не відповідають вартості {m}x{m}")

    gap = a_w.sum() - b_w.sum()
    if abs(gap) > config.TOLERANCE:
        raise ValidationError(f"маси маргіналів не збігаються: розрив {gap:.3e}")
    if b_w.sum() > 0:
        b_w = b_w * (a_w.sum() / b_w.sum())

    rows = np.flatnonzero(a_w > 0)
    cols = np.flatnonzero(b_w > 0)
    plan = np.zeros((m, m))
    if rows.size == 0:
        zero = np.zeros(m)
        return TransportPlan(plan=plan, value=0.0, phi=cost.min(axis=0), psi=zero, dual_value=0.0)

    sub = cost[np.ix_(rows, cols)]
    row_sum, col_sum = _marginal_operators(rows.size, cols.size)
    res = run_lp(
        sub.ravel(),
        sparse.vstack([row_sum, col_sum], format="csr"),
        np.concatenate([a_w[rows], b_w[cols]]),
        what="транспортна задача",
    )
    plan[np.ix_(rows, cols)] = np.clip(res.x, 0, None).reshape(rows.size, cols.size)
    value = float(res.fun)

    # HiGHS: marginals = ∂value/∂b_eq, тобто u_i + v_j <= cost[i][j]
    duals = res.eqlin.marginals
    u = np.full(m, np.nan)
    v = np.full(m, np.nan)
    u[rows] = duals[:rows.size]
    v[cols] = duals[rows.size:]
    free_cols = np.setdiff1d(np.arange(m), cols)
    free_rows = np.setdiff1d(np.arange(m), rows)
    v[free_cols] = np.min(cost[np.ix_(rows, free_cols)] - u[rows, None], axis=0)
    u[free_rows] = np.min(cost[free_rows] - v[None, :], axis=1)
    phi, psi = v, -u
    dual_value = float(phi @ b_w - psi @ a_w)

    _certify(cost, plan, value, phi, psi, dual_value, "транспортна задача")
    logger.debug(f"Транспортна задача {rows.size}x{cols.size}: значення {value:.12g}")
    return TransportPlan(plan=plan, value=value, phi=phi, psi=psi, dual_value=dual_value)


def _certify(cost, plan, value, phi, psi, dual_value, what: str):
    """Сертифікат оптимальності: двоїста допустимість та нульовий розрив двоїстості."""
    scale = max(1.0, abs(value), float(np.abs(cost).max()))
    reduced = cost - (phi[None, :] - psi[:, None])
    if reduced.min() < -config.TOLERANCE * scale:
        logger.warning(f"{what}: порушення двоїстої допустимості {reduced.min():.3e}")
    slack = np.abs(reduced[plan > config.TOLERANCE])
    if slack.size and slack.max() > config.TOLERANCE * scale:
        logger.warning(f"{what}: порушення доповнювальної нежорсткості {slack.max():.3e}")
    if abs(value - dual_value) > config.TOLERANCE * scale:
        raise SolverError(
            f"{what}: розрив двоїстості {abs(value - dual_value):.3e} перевищує допуск"
        )


def solve_circulation(cost) -> Tuple[AtomicMeasure, TransportPlan]:
    """
    Задача циркуляції: min Σ cost·Λ при Λ >= 0, Σ Λ = 1 та однакових
    рядкових і стовпцевих маргіналах. Повертає (спільний маргінал, план).

    Двоїсті змінні плану: phi = psi, причому phi[j] - phi[i] <= cost[i][j] - value.
    """
    cost = _check_cost(cost)
    m = cost.shape[0]
    row_sum, col_sum = _marginal_operators(m, m)
    A_eq = sparse.vstack([row_sum - col_sum, np.ones((1, m * m))], format="csr")
    b_eq = np.concatenate([np.zeros(m), [1.0]])
    res = run_lp(cost.ravel(), A_eq, b_eq, what="задача циркуляції")

    plan = np.clip(res.x, 0, None).reshape(m, m)
    value = float(res.fun)
    w = res.eqlin.marginals[:m]
    mu = AtomicMeasure(plan.sum(axis=1))
    logger.debug(f"Задача циркуляції {m}x{m}: значення {value:.12g}")
    return mu, TransportPlan(plan=plan, value=value, phi=-w, psi=-w, dual_value=float(res.eqlin.marginals[m]))


def solve_joint_min_mu(cost, lam: SignedMeasure, eps: float) -> JointSolution:
    """
    min над ймовірнісними μ транспортного значення між μ+ελ⁺ та μ+ελ⁻,
    як одна ЛП у змінних (план, μ).
    """
    cost = _check_cost(cost)
    if not eps > 0:
        raise ValidationError(f"ε має бути додатним, отримано {eps}")
    m = cost.shape[0]
    if lam.size != m:
        raise ValidationError(f"λ розміру {lam.size} не відповідає вартості {m}x{m}")

    row_sum, col_sum = _marginal_operators(m, m)
    minus_mu = -sparse.identity(m, format="csr")
    A_eq = sparse.vstack(
        [
            sparse.hstack([row_sum, minus_mu]),
            sparse.hstack([col_sum, minus_mu]),
            sparse.hstack([sparse.csr_matrix((1, m * m)), np.ones((1, m))]),
        ],
        format="csr",
    )
    b_eq = np.concatenate([eps * lam.pos.weights, eps * lam.neg.weights, [1.0]])
    c = np.concatenate([cost.ravel(), np.zeros(m)])
    logger.info(f"Спільна ЛП: {m * m + m} змінних, {2 * m + 1} обмежень, ε = {eps:.6g}")
    res = run_lp(c, A_eq, b_eq, what="спільна задача з вільною μ")

    plan = np.clip(res.x[:m * m], 0, None).reshape(m, m)
    mu = AtomicMeasure(np.clip(res.x[m * m:], 0, None))
    value = float(res.fun)
    duals = res.eqlin.marginals
    phi, psi = duals[m:2 * m], -duals[:m]
    transport = TransportPlan(plan=plan, value=value, phi=phi, psi=psi)
    return JointSolution(mu=mu, plan=transport, value=value, eps=eps)
