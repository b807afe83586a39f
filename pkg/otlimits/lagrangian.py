"""
Лагранжеві вартості точок: дія C_T, метрика D_E = inf_T (C_T + ET),
енергія основного стану ūE з проєкцією міри Мазера та транспорт з вартістю D_E.
"""

import functools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.sparse import csgraph

from otlimits import config
from otlimits.core import AtomicMeasure, GroundSpace, SignedMeasure
from otlimits.errors import ValidationError
from otlimits.solver import solve_circulation, solve_transportation
from otlimits.wasserstein import DualPotential, lipschitz_dual

logger = logging.getLogger(__name__)

HOMOGENEOUS = "homogeneous"
MECHANICAL = "mechanical"
DRIFT = "drift"
MODEL_KINDS = (HOMOGENEOUS, MECHANICAL, DRIFT)

# елементів у блоці min-plus добутку (m * m * стовпці)
MIN_PLUS_BLOCK = 1 << 21


def _node_vector(values, space: GroundSpace, name: str) -> np.ndarray:
    arr = np.array(values, dtype=float).ravel()
    if arr.size != space.size:
        raise ValidationError(f"{name}: очікується {space.size} значень, отримано {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name}: значення мають бути скінченними")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class CostModel:
    """
    Правило вартості точок на просторі.

    homogeneous: l = |v|^p/(p−1)
    mechanical:  l = |v|²/2 − V(x)
    drift:       l = |v − W(x)|^p/(p−1)
    """
    kind: str
    space: GroundSpace
    p: float = 2.0
    V: Optional[np.ndarray] = None
    W: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValidationError(f"невідомий тип моделі '{self.kind}', допустимі: {', '.join(MODEL_KINDS)}")
        if self.kind == MECHANICAL:
            if self.V is None:
                raise ValidationError("механічна модель потребує потенціалу V")
            object.__setattr__(self, "V", _node_vector(self.V, self.space, "V"))
            object.__setattr__(self, "p", 2.0)
        elif not self.p > 1:
            raise ValidationError(f"показник p має бути > 1, отримано {self.p}")
        if self.kind == DRIFT:
            if self.W is None:
                raise ValidationError("модель з дрейфом потребує поля W")
            if self.space.kind not in ("torus", "interval"):
                raise ValidationError("модель з дрейфом потребує одновимірної сітки зі знаковими зміщеннями")
            object.__setattr__(self, "W", _node_vector(self.W, self.space, "W"))

    @property
    def q(self) -> float:
        return self.p / (self.p - 1.0)

    @property
    def potential(self) -> np.ndarray:
        """Частина гамільтоніана, що не залежить від ξ."""
        if self.kind == MECHANICAL:
            return self.V
        return np.zeros(self.space.size)

    def lagrangian(self, velocity: np.ndarray) -> np.ndarray:
        """l(x, v) для матриці швидкостей, рядок = вузол x."""
        if self.kind == MECHANICAL:
            return 0.5 * velocity ** 2 - self.V[:, None]
        if self.kind == DRIFT:
            velocity = velocity - self.W[:, None]
        return np.abs(velocity) ** self.p / (self.p - 1.0)

    def kinetic(self, xi: np.ndarray, width: float = 0.0) -> np.ndarray:
        """
        Залежна від ξ частина h(x, ξ) у кожному вузлі.

        width > 0 замінює |ξ|^q на (ξ² + width²)^(q/2) − width^q.
        """
        if self.kind == MECHANICAL:
            return 0.5 * xi ** 2
        q = self.q
        if width > 0:
            power = (xi ** 2 + width ** 2) ** (q / 2) - width ** q
        else:
            power = np.abs(xi) ** q
        value = q ** (-q) * power
        if self.kind == DRIFT:
            value = value + xi * self.W
        return value

    def kinetic_derivative(self, xi: np.ndarray, width: float = 0.0) -> np.ndarray:
        if self.kind == MECHANICAL:
            return xi
        q = self.q
        if width > 0:
            slope = q ** (1 - q) * xi * (xi ** 2 + width ** 2) ** (q / 2 - 1)
        else:
            slope = q ** (1 - q) * np.sign(xi) * np.abs(xi) ** (q - 1)
        if self.kind == DRIFT:
            slope = slope + self.W
        return slope

    def hamiltonian(self, xi: np.ndarray) -> np.ndarray:
        return self.kinetic(xi) + self.potential


def homogeneous(space: GroundSpace, p: float) -> CostModel:
    return CostModel(kind=HOMOGENEOUS, space=space, p=p)


def mechanical(space: GroundSpace, V: Sequence[float]) -> CostModel:
    return CostModel(kind=MECHANICAL, space=space, V=V)


def drift(space: GroundSpace, W: Sequence[float], p: float = 2.0) -> CostModel:
    return CostModel(kind=DRIFT, space=space, p=p, W=W)


@dataclass(frozen=True, eq=False)
class ActionTable:
    """C_T(x, y) на сітці; steps = 0 для замкненої формули."""
    T: float
    C: np.ndarray
    steps: int

    def to_dict(self) -> dict:
        return {"T": self.T, "steps": self.steps, "C": self.C.tolist()}


def _check_time(T: float):
    if not (T > 0 and np.isfinite(T)):
        raise ValidationError(f"час T має бути додатним, отримано {T}")


def _frozen(matrix: np.ndarray) -> np.ndarray:
    matrix.setflags(write=False)
    return matrix


def c_t_homogeneous(space: GroundSpace, p: float, T: float) -> ActionTable:
    """C_T = D^p / ((p−1) T^(p−1))."""
    _check_time(T)
    if not p > 1:
        raise ValidationError(f"показник p має бути > 1, отримано {p}")
    C = space.dist ** p / ((p - 1.0) * T ** (p - 1.0))
    return ActionTable(T=float(T), C=_frozen(C), steps=0)


def _displacements(space: GroundSpace) -> List[np.ndarray]:
    """Кандидати зміщень y ⊖ x: на торі всі три підйоми, на відрізку - різниця координат."""
    if space.kind not in ("torus", "interval"):
        return [space.dist]
    x = space.points[:, 0]
    raw = x[None, :] - x[:, None]
    if space.kind == "torus":
        return [raw - 1.0, raw, raw + 1.0]
    return [raw]


def one_step_cost(model: CostModel, dt: float) -> np.ndarray:
    """C⁽¹⁾(x, y) = δt · l(x, (y ⊖ x)/δt), найдешевший підйом на торі."""
    candidates = [dt * model.lagrangian(d / dt) for d in _displacements(model.space)]
    return np.minimum.reduce(candidates)


def _min_plus_columns(A: np.ndarray, B: np.ndarray, cols: np.ndarray) -> np.ndarray:
    return (A[:, :, None] + B[None, :, cols]).min(axis=1)


def min_plus(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """(A ⊗ B)(x, y) = min_z A(x, z) + B(z, y); блоки стовпців паралельно."""
    m = A.shape[0]
    block = max(1, MIN_PLUS_BLOCK // (m * m))
    chunks = [np.arange(s, min(s + block, B.shape[1])) for s in range(0, B.shape[1], block)]
    out = np.empty((m, B.shape[1]))
    if config.THREADS > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=config.THREADS) as executor:
            for cols, values in zip(chunks, executor.map(lambda c: _min_plus_columns(A, B, c), chunks)):
                out[:, cols] = values
    else:
        for cols in chunks:
            out[:, cols] = _min_plus_columns(A, B, cols)
    return out


def _min_plus_power(C1: np.ndarray, steps: int) -> np.ndarray:
    result = None
    base = C1
    while steps:
        if steps & 1:
            result = base if result is None else min_plus(result, base)
        steps >>= 1
        if steps:
            base = min_plus(base, base)
    return result


@functools.lru_cache(maxsize=64)
def c_t_bellman(model: CostModel, T: float, steps: int) -> ActionTable:
    """
    Дискретна ітерація цінності: C⁽ᵏ⁺¹⁾ = C⁽ᵏ⁾ ⊗ C⁽¹⁾ з кроком δt = T/K.

    Мін-плюс добуток асоціативний, тому K-й степінь рахується двійковим піднесенням.
    """
    _check_time(T)
    if int(steps) != steps or steps < 1:
        raise ValidationError(f"кількість кроків має бути цілим числом >= 1, отримано {steps}")
    steps = int(steps)
    C1 = one_step_cost(model, T / steps)
    C = _min_plus_power(C1, steps)
    logger.debug(f"C_T ({model.kind}, m = {model.space.size}, T = {T}, K = {steps}) обчислено")
    return ActionTable(T=float(T), C=_frozen(np.array(C)), steps=steps)


def bellman_row(model: CostModel, T: float, steps: int, i: int) -> np.ndarray:
    """Рядок x = i таблиці C_T: K множень вектора на C⁽¹⁾ замість степеня всієї матриці."""
    C1 = one_step_cost(model, T / steps)
    row = C1[i]
    for _ in range(steps - 1):
        row = (row[:, None] + C1).min(axis=0)
    return row


def action_table(model: CostModel, T: float, steps: Optional[int] = None) -> ActionTable:
    """Замкнена формула для однорідної моделі, інакше ітерація Беллмана (K = m за замовчуванням)."""
    if model.kind == HOMOGENEOUS:
        return c_t_homogeneous(model.space, model.p, T)
    return c_t_bellman(model, float(T), int(steps or model.space.size))


def _t_grid(T_grid: Iterable[float]) -> np.ndarray:
    grid = np.unique(np.asarray(list(T_grid), dtype=float))
    if grid.size == 0:
        raise ValidationError("сітка часів T порожня")
    if np.any(grid <= 0) or not np.all(np.isfinite(grid)):
        raise ValidationError("сітка часів T має містити лише додатні скінченні значення")
    return grid


def _homogeneous_d_e(dist: np.ndarray, p: float, E: float, grid: np.ndarray) -> np.ndarray:
    distances, inverse = np.unique(dist, return_inverse=True)
    best = np.zeros(distances.size)
    lo, hi = grid[0], grid[-1]
    for k, d in enumerate(distances):
        if d == 0:
            continue

        def objective(t, d=d):
            return d ** p / ((p - 1.0) * t ** (p - 1.0)) + E * t

        best[k] = min(objective(t) for t in grid)
        if hi > lo:
            res = minimize_scalar(objective, bounds=(lo, hi), method="bounded", options={"xatol": 1e-12 * hi})
            best[k] = min(best[k], float(res.fun))
    return best[inverse].reshape(dist.shape)


def _refine_bellman(model: CostModel, E: float, grid: np.ndarray, steps: int, stack: np.ndarray,
                    values: np.ndarray, pairs: Iterable[Tuple[int, int]]):
    """Уточнення T пошуком Брента між сусідами найкращого вузла сітки для заданих пар."""
    best = stack.argmin(axis=0)
    for i, j in pairs:
        if i == j:
            continue
        k = int(best[i, j])
        lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]
        res = minimize_scalar(
            lambda t: bellman_row(model, t, steps, i)[j] + E * t,
            bounds=(lo, hi), method="bounded", options={"xatol": 1e-8 * hi},
        )
        values[i, j] = min(values[i, j], float(res.fun))


def d_e(model: CostModel, E: float, T_grid: Iterable[float], steps: Optional[int] = None,
        pairs: Optional[Iterable[Tuple[int, int]]] = None) -> np.ndarray:
    """
    D_E(x, y) = min над T з сітки C_T(x, y) + E·T, замкнене найкоротшими шляхами.

    Для однорідної моделі мінімум уточнюється обмеженим пошуком Брента
    окремо для кожного значення відстані. Для моделей Беллмана уточнюються
    лише пари pairs (зазвичай носій λ⁺ × λ⁻). D_E(x, x) = 0.
    """
    grid = _t_grid(T_grid)
    if model.kind == HOMOGENEOUS:
        values = _homogeneous_d_e(model.space.dist, model.p, E, grid)
    else:
        steps = int(steps or model.space.size)
        stack = np.stack([action_table(model, T, steps).C + E * T for T in grid])
        values = stack.min(axis=0)
        if pairs is not None and grid.size > 1:
            _refine_bellman(model, E, grid, steps, stack, values, pairs)
    values = np.array(values)
    np.fill_diagonal(values, 0.0)

    floor = float(values.min())
    if floor < -config.TOLERANCE * max(1.0, float(np.abs(values).max())):
        raise ValidationError(f"D_E має від'ємні значення (min {floor:.3e}): енергія E = {E} нижча за ūE")
    values = np.clip(values, 0.0, None)
    closed = csgraph.shortest_path(csgraph.csgraph_from_dense(values, null_value=np.inf), directed=True)
    return closed


def ubar_and_mather(model: CostModel, T: float = 1.0, steps: Optional[int] = None) -> Tuple[float, AtomicMeasure]:
    """ūE = −(значення задачі циркуляції з вартістю C_T)/T та спільний маргінал оптимальної циркуляції."""
    table = action_table(model, T, steps)
    mu, plan = solve_circulation(table.C)
    ubar = -plan.value / T
    logger.info(f"ūE ({model.kind}, m = {model.space.size}, T = {T}): {ubar:.12g}")
    return ubar, mu


def effective_h_bound(model: CostModel, phi) -> float:
    """max по вузлах h(x, ∇φ): верхня оцінка ūE для даного φ."""
    phi = np.asarray(phi, dtype=float)
    if not np.all(np.isfinite(phi)):
        raise ValidationError("потенціал φ має бути скінченним")
    return float(np.max(model.hamiltonian(model.space.gradient(phi))))


def d_e_transport(space: GroundSpace, lam: SignedMeasure, d_e_matrix) -> float:
    """𝒟_E(λ): транспортна задача між λ⁺ та λ⁻ з вартістю D_E."""
    return solve_transportation(d_e_matrix, lam.pos, lam.neg).value


def d_e_dual(space: GroundSpace, lam: SignedMeasure, d_e_matrix) -> DualPotential:
    """𝒟_E(λ) як двоїста задача над D_E-ліпшицевими потенціалами."""
    return lipschitz_dual(d_e_matrix, lam)
