"""
Граничні об'єкти: модифікована дія ĈT трьома шляхами, умовна дія ĈT(λ‖μ),
умовні метрики W⁽ᵖ⁾(λ‖μ) та 𝒟_E(λ‖μ), ε-розгортки та транспортна міра.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from otlimits import config
from otlimits.core import AtomicMeasure, GroundSpace, SignedMeasure, support_indices, tv_distance
from otlimits.errors import ValidationError
from otlimits.lagrangian import (
    HOMOGENEOUS,
    CostModel,
    c_t_homogeneous,
    d_e,
    d_e_transport,
    homogeneous,
    ubar_and_mather,
)
from otlimits.solver import solve_joint_min_mu, solve_transportation
from otlimits.wasserstein import wasserstein_p

logger = logging.getLogger(__name__)

DEFAULT_T_GRID = tuple(np.geomspace(1.0 / 16, 16.0, 17))


def _check_time(T: float):
    if not (T > 0 and np.isfinite(T)):
        raise ValidationError(f"час T має бути додатним, отримано {T}")


def _check_probability(space: GroundSpace, mu: AtomicMeasure):
    if mu.size != space.size:
        raise ValidationError(f"μ розміру {mu.size} не відповідає простору розміру {space.size}")
    if abs(mu.mass - 1.0) > config.TOLERANCE:
        raise ValidationError(f"μ має бути ймовірнісною мірою, маса {mu.mass:.12g}")


def richardson(n1: int, v1: float, n2: int, v2: float) -> float:
    """Екстраполяція Річардсона для похибки першого порядку за 1/n."""
    return (n2 * v2 - n1 * v1) / (n2 - n1)


@dataclass(frozen=True, eq=False)
class SweepReport:
    n_values: List[int]
    scaled_values: List[float]
    extrapolated_limit: float
    observed_rate: float
    mu_trace: List[AtomicMeasure] = field(default_factory=list)

    @property
    def gaps(self) -> List[float]:
        values = self.scaled_values
        return [math.nan] + [b - a for a, b in zip(values, values[1:])]

    @property
    def rates(self) -> List[float]:
        gaps, n = self.gaps, self.n_values
        rates = [math.nan] * min(2, len(n))
        for k in range(2, len(n)):
            rates.append(_rate(gaps[k - 1], gaps[k], n[k - 1], n[k]))
        return rates

    def to_dict(self) -> dict:
        return {
            "n_values": list(self.n_values),
            "scaled_values": list(self.scaled_values),
            "extrapolated_limit": self.extrapolated_limit,
            "observed_rate": self.observed_rate,
            "mu_trace": [mu.weights.tolist() for mu in self.mu_trace],
        }


def _rate(previous_gap: float, gap: float, n_previous: int, n: int) -> float:
    if previous_gap == 0 or gap == 0 or math.isnan(previous_gap):
        return math.nan
    return math.log(abs(previous_gap) / abs(gap)) / math.log(n / n_previous)


def build_report(n_values: Sequence[int], values: Sequence[float],
                 mu_trace: Sequence[AtomicMeasure] = ()) -> SweepReport:
    n_values, values = list(n_values), list(values)
    if len(values) >= 2:
        limit = richardson(n_values[-2], values[-2], n_values[-1], values[-1])
    elif values:
        limit = values[0]
    else:
        limit = math.nan
    report = SweepReport(
        n_values=n_values,
        scaled_values=values,
        extrapolated_limit=limit,
        observed_rate=math.nan,
        mu_trace=list(mu_trace),
    )
    rate = report.rates[-1] if len(values) >= 3 else math.nan
    object.__setattr__(report, "observed_rate", rate)
    return report


@dataclass(frozen=True, eq=False)
class ConditionalSolution:
    phi: np.ndarray
    value: float
    converged: bool
    iterations: int
    gradient_norm: float = 0.0

    def to_dict(self) -> dict:
        return {
            "phi": self.phi.tolist(),
            "value": self.value,
            "converged": self.converged,
            "iterations": self.iterations,
            "gradient_norm": self.gradient_norm,
        }


# --- ĈT через енергію ---

def _homogeneous_t_grid(space: GroundSpace, p: float, E: float) -> np.ndarray:
    positive = space.dist[space.dist > 0]
    d_min, d_max = float(positive.min()), float(positive.max())
    if E > 0:
        scale = E ** (-1.0 / p)
        return np.geomspace(0.5 * d_min * scale, 2.0 * d_max * scale, 9)
    return np.geomspace(d_min, 1e3 * d_max, 9)


def _energy_objective(space, lam, T, model, T_grid, steps):
    pairs = [(i, j) for i in support_indices(lam.pos) for j in support_indices(lam.neg)]

    def objective(E: float) -> float:
        grid = T_grid if T_grid is not None else (
            _homogeneous_t_grid(space, model.p, E) if model.kind == HOMOGENEOUS else DEFAULT_T_GRID
        )
        return d_e_transport(space, lam, d_e(model, E, grid, steps, pairs)) - E * T
    return objective


def chat_T_energy(space: GroundSpace, lam: SignedMeasure, T: float, model: CostModel,
                  E_range: Iterable[float], T_grid: Optional[Sequence[float]] = None,
                  steps: Optional[int] = None) -> float:
    """
    ĈT(λ) = max над E >= ūE [𝒟_E(λ) − E·T].

    Спершу груба сітка E_range, далі обмежений пошук Брента навколо найкращого
    вузла (цільова функція увігнута за E).
    """
    _check_time(T)
    energies = np.unique(np.asarray(list(E_range), dtype=float))
    if energies.size == 0:
        raise ValidationError("діапазон енергій E порожній")
    objective = _energy_objective(space, lam, T, model, T_grid, steps)

    values = [objective(E) for E in energies]
    k = int(np.argmax(values))
    best = values[k]
    if energies.size > 1 and k == energies.size - 1:
        logger.warning(
            f"Максимум по E досягнуто на верхній межі діапазону ({energies[-1]:.6g}); розширте E_range"
        )
    if energies.size > 1:
        lo, hi = energies[max(k - 1, 0)], energies[min(k + 1, energies.size - 1)]
        res = minimize_scalar(
            lambda E: -objective(E), bounds=(lo, hi), method="bounded",
            options={"xatol": 1e-10 * max(1.0, abs(hi))},
        )
        best = max(best, -float(res.fun))
    logger.debug(f"ĈT({T}) через енергію: {best:.12g}")
    return best


def default_energy_range(space: GroundSpace, lam: SignedMeasure, p: float, T: float) -> np.ndarray:
    """Сітка E для однорідної моделі, що покриває оптимум E* = (W₁/T)^p."""
    w1 = wasserstein_p(space, 1.0, lam.pos, lam.neg)
    top = 4.0 * (w1 / T) ** p + 1.0
    return np.linspace(0.0, top, 41)


# --- умовна дія ĈT(λ‖μ) ---

def conditional_objective(space: GroundSpace, lam: SignedMeasure, mu: AtomicMeasure, T: float,
                          model: CostModel, phi, width: float = 0.0) -> Tuple[float, np.ndarray]:
    """Σ φ·λ − T·∫h(x, ∇φ) dμ та його градієнт за φ."""
    phi = np.asarray(phi, dtype=float)
    xi = space.gradient(phi)
    weights = space.edge_weights(mu.weights)
    value = phi @ lam.net - T * (weights @ model.kinetic(xi, width) + mu.weights @ model.potential)
    grad = lam.net - T * (space.gradient_operator.T @ (weights * model.kinetic_derivative(xi, width)))
    return float(value), grad


def is_unbounded(space: GroundSpace, lam: SignedMeasure, mu: AtomicMeasure) -> bool:
    """Чи розділяє носій μ незбалансовану масу λ (тоді ĈT(λ‖μ) = +∞)."""
    loaded = space.edge_weights(mu.weights) > 0
    n_components, labels = space.edge_components(loaded)
    imbalance = np.bincount(labels, weights=lam.net, minlength=n_components)
    return bool(np.any(np.abs(imbalance) > config.MASS_TOLERANCE))


def chat_conditional(space: GroundSpace, lam: SignedMeasure, mu: AtomicMeasure, T: float,
                     model: CostModel) -> ConditionalSolution:
    """
    ĈT(λ‖μ) = sup над φ [Σ φ·λ − T·∫h(x, ∇φ) dμ], калібрування φ(0) = 0.

    Увігнуте підняття L-BFGS-B на від'ємній цільовій функції. Для q < 2
    |ξ|^q згладжується, а значення рахується без згладжування, тому
    повертається гарантована нижня оцінка.
    """
    _check_time(T)
    _check_probability(space, mu)
    if lam.size != space.size:
        raise ValidationError(f"λ розміру {lam.size} не відповідає простору розміру {space.size}")
    m = space.size

    if is_unbounded(space, lam, mu):
        logger.info("ĈT(λ‖μ) = +∞: μ не має маси на ребрах між атомами λ")
        return ConditionalSolution(phi=np.zeros(m), value=math.inf, converged=True, iterations=0)

    width = config.HUBER_WIDTH if model.q < 2 else 0.0

    def negated(x):
        value, grad = conditional_objective(space, lam, mu, T, model, np.concatenate([[0.0], x]), width)
        return -value, -grad[1:]

    res = minimize(
        negated,
        np.zeros(m - 1),
        jac=True,
        method="L-BFGS-B",
        options={
            "maxiter": config.MAX_ASCENT_ITERATIONS,
            "maxfun": 2 * config.MAX_ASCENT_ITERATIONS,
            "maxcor": 30,
            "gtol": 1e-3 * config.GRADIENT_TOLERANCE,
            "ftol": 1e-15,
        },
    )
    phi = np.concatenate([[0.0], res.x])
    value, grad = conditional_objective(space, lam, mu, T, model, phi)
    gradient_norm = float(np.max(np.abs(grad[1:]))) if m > 1 else 0.0
    converged = gradient_norm <= config.GRADIENT_TOLERANCE
    if not converged:
        logger.warning(
            f"Підняття не збіглося за {res.nit} ітерацій: |∇| = {gradient_norm:.3e}; "
            f"значення {value:.12g} є нижньою оцінкою"
        )
    else:
        # неперервний оптимум має |∇φ| = 1 μ-м.с.; дискретно лише наближено
        loaded = space.edge_weights(mu.weights) > 0
        slopes = np.abs(space.gradient(phi))[loaded]
        if slopes.size:
            logger.debug(f"|∇φ| на носії μ: від {slopes.min():.4g} до {slopes.max():.4g}")
    return ConditionalSolution(
        phi=phi, value=value, converged=converged, iterations=int(res.nit), gradient_norm=gradient_norm
    )


def conditional_w1p(space: GroundSpace, lam: SignedMeasure, mu: AtomicMeasure, p: float, T: float = 1.0) -> float:
    """W⁽ᵖ⁾(λ‖μ) = [T^(1/(q−1))·ĈT(λ‖μ)/(q−1)]^(1/p) для однорідної моделі."""
    model = homogeneous(space, p)
    value = chat_conditional(space, lam, mu, T, model).value
    if math.isinf(value):
        return math.inf
    q = model.q
    return (T ** (1.0 / (q - 1.0)) * max(value, 0.0) / (q - 1.0)) ** (1.0 / p)


def d_e_conditional(space: GroundSpace, lam: SignedMeasure, mu: AtomicMeasure, model: CostModel,
                    E: float, T_bounds: Tuple[float, float] = (1e-3, 1e3)) -> float:
    """𝒟_E(λ‖μ) = inf над T > 0 [ĈT(λ‖μ) + E·T], пошук Брента по log T."""
    if model.kind == HOMOGENEOUS and E < 0:
        raise ValidationError(f"енергія E = {E} нижча за ūE = 0")
    if not np.any(lam.net):
        return 0.0

    def objective(log_t: float) -> float:
        t = math.exp(log_t)
        return chat_conditional(space, lam, mu, t, model).value + E * t

    probe = objective(0.0)
    if math.isinf(probe):
        return math.inf
    res = minimize_scalar(
        objective, bounds=(math.log(T_bounds[0]), math.log(T_bounds[1])), method="bounded",
        options={"xatol": 1e-8},
    )
    return float(min(probe, res.fun))


# --- ε-розгортки ---

def min_mu_scaled(space: GroundSpace, p: float, lam: SignedMeasure, n: int) -> Tuple[float, AtomicMeasure]:
    """n · (min над μ W_p^p(μ+λ⁺/n, μ+λ⁻/n))^(1/p) та мінімізатор μ."""
    if int(n) != n or n < 1:
        raise ValidationError(f"n має бути цілим числом >= 1, отримано {n}")
    n = int(n)
    solution = solve_joint_min_mu(space.dist ** p, lam, 1.0 / n)
    return n * max(solution.value, 0.0) ** (1.0 / p), solution.mu


def _check_increasing(n_values: Sequence[int]):
    if any(b <= a for a, b in zip(n_values, n_values[1:])):
        raise ValidationError(f"n_list має строго зростати, отримано {list(n_values)}")


def _warn_lattice(space: GroundSpace, lam: SignedMeasure, n_values: Sequence[int]):
    if lam.mass == 0 or not n_values:
        return
    threshold = wasserstein_p(space, 1.0, lam.pos, lam.neg) / space.spacing
    lattice = [n for n in n_values if n > threshold]
    if lattice:
        logger.warning(
            f"n = {lattice} перевищують W₁/h = {threshold:.4g}: ці точки розгортки визначає решітка"
        )


def epsilon_sweep(space: GroundSpace, p: float, lam: SignedMeasure, n_list: Iterable[int]) -> SweepReport:
    n_values = [int(n) for n in n_list]
    _check_increasing(n_values)
    _warn_lattice(space, lam, n_values)
    logger.info(f"ε-розгортка: m = {space.size}, p = {p}, n = {n_values}")

    with ThreadPoolExecutor(max_workers=config.THREADS) as executor:
        results = list(executor.map(lambda n: min_mu_scaled(space, p, lam, n), n_values))

    values = [value for value, _ in results]
    for n, value in zip(n_values, values):
        logger.info(f"  n = {n}: {value:.12g}")
    report = build_report(n_values, values, [mu for _, mu in results])
    logger.info(f"Екстрапольована границя {report.extrapolated_limit:.12g}, порядок {report.observed_rate:.3g}")
    return report


# --- Γ-збіжність ---

@dataclass(frozen=True)
class LiminfRow:
    n: int
    F_n: float
    lower_bound: float
    margin: float
    slack: float

    @property
    def holds(self) -> bool:
        return self.margin >= -self.slack

    def to_dict(self) -> dict:
        return {"n": self.n, "F_n": self.F_n, "lower_bound": self.lower_bound,
                "margin": self.margin, "slack": self.slack}


def gamma_liminf_check(space: GroundSpace, p: float, lam: SignedMeasure, mu: AtomicMeasure,
                       n_list: Iterable[int], T: float = 1.0) -> List[LiminfRow]:
    """
    F_n = n·𝒞_{T/n}(μ+λ⁺/n, μ+λ⁻/n) проти ĈT(λ‖μ).

    Допуск сітки: |ĈT(λ‖μ)|·(1/n + h).
    """
    _check_probability(space, mu)
    if np.any(mu.weights <= 0):
        raise ValidationError("μ має бути строго додатною в усіх вузлах сітки")
    n_values = [int(n) for n in n_list]
    _check_increasing(n_values)

    bound = chat_conditional(space, lam, mu, T, homogeneous(space, p)).value
    rows = []
    for n in n_values:
        cost = c_t_homogeneous(space, p, T / n).C
        plan = solve_transportation(cost, mu.weights + lam.pos.weights / n, mu.weights + lam.neg.weights / n)
        F_n = n * plan.value
        slack = abs(bound) * (1.0 / n + space.spacing) + config.TOLERANCE
        rows.append(LiminfRow(n=n, F_n=F_n, lower_bound=bound, margin=F_n - bound, slack=slack))
        if not rows[-1].holds:
            logger.warning(f"Γ-liminf: n = {n}, F_n = {F_n:.12g} < ĈT(λ‖μ) = {bound:.12g} поза допуском")
    return rows


# --- транспортна міра ---

@dataclass(frozen=True, eq=False)
class TransportMeasure:
    mu: AtomicMeasure
    n: int
    tv_gap: float
    report: SweepReport

    def to_dict(self) -> dict:
        return {"mu": self.mu.weights.tolist(), "n": self.n, "tv_gap": self.tv_gap}


def transport_measure(space: GroundSpace, lam: SignedMeasure, n_list: Iterable[int],
                      p: float = 2.0) -> TransportMeasure:
    """Мінімізатор μ при найбільшому n як наближення транспортної міри."""
    n_values = [int(n) for n in n_list]
    if not n_values:
        raise ValidationError("n_list порожній")
    report = epsilon_sweep(space, p, lam, n_values)
    trace = report.mu_trace
    tv_gap = tv_distance(trace[-2], trace[-1]) if len(trace) >= 2 else math.nan
    logger.info(f"Транспортна міра при n = {n_values[-1]}; TV між останніми мінімізаторами {tv_gap:.4g}")
    return TransportMeasure(mu=trace[-1], n=n_values[-1], tv_gap=tv_gap, report=report)


# --- вкладена мінімізація ---

@dataclass(frozen=True, eq=False)
class Th5Result:
    min_over_candidates: float
    unconditional: float
    candidate_values: List[float]
    slack: float
    d_e_min_over_candidates: Optional[float] = None
    d_e_unconditional: Optional[float] = None

    @property
    def holds(self) -> bool:
        ok = self.min_over_candidates >= self.unconditional - self.slack
        if self.d_e_unconditional is not None:
            ok = ok and self.d_e_min_over_candidates >= self.d_e_unconditional - self.slack
        return ok

    def to_dict(self) -> dict:
        return {
            "min_over_candidates": self.min_over_candidates,
            "unconditional": self.unconditional,
            "candidate_values": list(self.candidate_values),
            "d_e_min_over_candidates": self.d_e_min_over_candidates,
            "d_e_unconditional": self.d_e_unconditional,
        }


def th5_spotcheck(space: GroundSpace, lam: SignedMeasure, p: float, mu_candidates: Sequence[AtomicMeasure],
                  T: float = 1.0, E: Optional[float] = None,
                  E_range: Optional[Sequence[float]] = None) -> Th5Result:
    """
    min над кандидатами ĈT(λ‖μ) проти ĈT(λ); за заданої E також
    min над кандидатами 𝒟_E(λ‖μ) проти 𝒟_E(λ).
    """
    candidates = list(mu_candidates)
    if not candidates:
        raise ValidationError("список кандидатів μ порожній")
    model = homogeneous(space, p)
    values = [chat_conditional(space, lam, mu, T, model).value for mu in candidates]
    if E_range is None:
        E_range = default_energy_range(space, lam, p, T)
    unconditional = chat_T_energy(space, lam, T, model, E_range)
    slack = abs(unconditional) * space.spacing + config.TOLERANCE

    d_e_min = d_e_unc = None
    if E is not None:
        d_e_min = min(d_e_conditional(space, lam, mu, model, E) for mu in candidates)
        d_e_unc = d_e_transport(space, lam, d_e(model, E, _homogeneous_t_grid(space, p, E)))

    result = Th5Result(
        min_over_candidates=min(values),
        unconditional=unconditional,
        candidate_values=values,
        slack=slack,
        d_e_min_over_candidates=d_e_min,
        d_e_unconditional=d_e_unc,
    )
    if not result.holds:
        logger.warning(f"Вкладена мінімізація: кандидат нижче безумовного значення ({result.to_dict()})")
    return result


# --- афінне продовження ---

@dataclass(frozen=True, eq=False)
class ContinuationReport:
    T_values: List[float]
    values: List[float]
    ubar: float
    flat_from: Optional[float]
    monotone: bool

    def to_dict(self) -> dict:
        return {"T_values": list(self.T_values), "values": list(self.values), "ubar": self.ubar,
                "flat_from": self.flat_from, "monotone": self.monotone}


def affine_continuation(space: GroundSpace, lam: SignedMeasure, model: CostModel, T_values: Sequence[float],
                        E_range: Sequence[float], T_grid: Optional[Sequence[float]] = None,
                        steps: Optional[int] = None, tol: float = 1e-7) -> ContinuationReport:
    """
    ĈT(λ) + T·ūE на сітці T: незростає і з деякого T стає сталим.

    flat_from - перше T, починаючи з якого значення збігаються з останнім у межах tol.
    """
    T_values = sorted(float(t) for t in T_values)
    if not T_values:
        raise ValidationError("сітка T порожня")
    ubar, _ = ubar_and_mather(model, 1.0, steps)
    values = [chat_T_energy(space, lam, T, model, E_range, T_grid, steps) + T * ubar for T in T_values]

    scale = max(1.0, max(abs(v) for v in values))
    monotone = all(b <= a + tol * scale for a, b in zip(values, values[1:]))
    flat_index = len(values) - 1
    while flat_index > 0 and abs(values[flat_index - 1] - values[-1]) <= tol * scale:
        flat_index -= 1
    flat_from = T_values[flat_index] if flat_index < len(values) - 1 else None
    if not monotone:
        logger.warning("ĈT(λ) + T·ūE не є незростаючою на заданій сітці T")
    return ContinuationReport(T_values=T_values, values=values, ubar=ubar, flat_from=flat_from, monotone=monotone)
