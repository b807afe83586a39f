"""
Скінченні простори (дискретизовані многовиди) та атомні міри.

Усі об'єкти незмінні після створення: масиви позначені як read-only,
тому їх можна безпечно передавати між потоками.
"""

import functools
import logging
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from otlimits import config
from otlimits.errors import ValidationError

logger = logging.getLogger(__name__)

METRIC_TOLERANCE = 1e-12


def _frozen_array(values, ndim: int, name: str) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim != ndim:
        raise ValidationError(f"{name}: очікується масив розмірності {ndim}, отримано {arr.ndim}")
    arr.setflags(write=False)
    return arr


def check_metric(dist: np.ndarray, tol: float = METRIC_TOLERANCE) -> None:
    """
    Перевіряє аксіоми метрики: скінченність, невід'ємність, нульову діагональ,
    симетрію та нерівність трикутника (повний перебір трійок).
    """
    m = dist.shape[0]
    if dist.shape != (m, m):
        raise ValidationError(f"матриця відстаней має бути квадратною, отримано {dist.shape}")
    if not np.all(np.isfinite(dist)):
        raise ValidationError("матриця відстаней містить нескінченні або NaN значення")
    if np.any(dist < 0):
        raise ValidationError(f"від'ємна відстань: min = {dist.min():.3e}")
    if np.any(np.diag(dist) != 0):
        raise ValidationError("dist[i][i] має дорівнювати 0")
    if not np.array_equal(dist, dist.T):
        gap = np.max(np.abs(dist - dist.T))
        raise ValidationError(f"матриця відстаней несиметрична (розрив {gap:.3e})")

    slack = tol * max(1.0, float(dist.max()))
    for k in range(m):
        # dist[i][j] <= dist[i][k] + dist[k][j] для всіх i, j
        excess = dist - (dist[:, k:k + 1] + dist[k:k + 1, :])
        if np.any(excess > slack):
            i, j = np.unravel_index(np.argmax(excess), excess.shape)
            raise ValidationError(
                f"порушено нерівність трикутника: d({i},{j}) > d({i},{k}) + d({k},{j}) "
                f"на {excess[i, j]:.3e}"
            )


@dataclass(frozen=True, eq=False)
class GroundSpace:
    """Скінченна множина точок з матрицею геодезичних відстаней."""
    points: np.ndarray
    dist: np.ndarray
    kind: str = "graph"
    # (сусід, знакова відстань) для односторонньої різниці в кожному вузлі
    stencil: Optional[Tuple[Tuple[int, float], ...]] = None

    def __post_init__(self):
        points = np.array(self.points, dtype=float)
        if points.ndim == 1:
            points = points.reshape(-1, 1)
        points.setflags(write=False)
        dist = _frozen_array(self.dist, 2, "dist")
        check_metric(dist)
        if points.shape[0] != dist.shape[0]:
            raise ValidationError(
                f"кількість точок ({points.shape[0]}) не збігається з розміром матриці ({dist.shape[0]})"
            )
        if self.stencil is not None and len(self.stencil) != dist.shape[0]:
            raise ValidationError("шаблон різниць має містити по одному сусіду на вузол")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "dist", dist)

    @property
    def size(self) -> int:
        return self.dist.shape[0]

    @property
    def spacing(self) -> float:
        """Крок сітки (найменша ненульова відстань)."""
        positive = self.dist[self.dist > 0]
        return float(positive.min()) if positive.size else 0.0

    @property
    def has_stencil(self) -> bool:
        return self.stencil is not None

    @functools.cached_property
    def gradient_operator(self) -> sparse.csr_matrix:
        """
        Матриця дискретного градієнта: (Gφ)_i = (φ(n(i)) − φ(i)) / s(i).

        На торі - різниця вперед з обгортанням, на відрізку - вперед,
        а в правому кінці - назад. Спільна для ефективного гамільтоніана
        та умовної дії.
        """
        if self.stencil is None:
            raise ValidationError(f"простір типу '{self.kind}' не має сітки для дискретного градієнта")
        m = self.size
        rows = np.repeat(np.arange(m), 2)
        cols = np.empty(2 * m, dtype=int)
        vals = np.empty(2 * m)
        for i, (j, step) in enumerate(self.stencil):
            cols[2 * i], vals[2 * i] = i, -1.0 / step
            cols[2 * i + 1], vals[2 * i + 1] = j, 1.0 / step
        return sparse.csr_matrix((vals, (rows, cols)), shape=(m, m))

    def gradient(self, phi) -> np.ndarray:
        return self.gradient_operator @ np.asarray(phi, dtype=float)

    @functools.cached_property
    def stencil_heads(self) -> np.ndarray:
        if self.stencil is None:
            raise ValidationError(f"простір типу '{self.kind}' не має ребер сітки")
        heads = np.array([j for j, _ in self.stencil], dtype=int)
        heads.setflags(write=False)
        return heads

    def edge_weights(self, weights) -> np.ndarray:
        """Маса на ребрі шаблону вузла i: середнє ваг на двох його кінцях."""
        weights = np.asarray(weights, dtype=float)
        return 0.5 * (weights + weights[self.stencil_heads])

    def edge_components(self, edge_mask: np.ndarray) -> Tuple[int, np.ndarray]:
        """Компоненти зв'язності графа, утвореного ребрами шаблону з edge_mask."""
        m = self.size
        tails = np.flatnonzero(edge_mask)
        heads = self.stencil_heads[tails]
        graph = sparse.csr_matrix((np.ones(tails.size), (tails, heads)), shape=(m, m))
        return csgraph.connected_components(graph, directed=False)

    def nearest_index(self, x: float) -> int:
        """Індекс вузла сітки, найближчого до координати x."""
        coords = self.points[:, 0]
        delta = np.abs(coords - x)
        if self.kind == "torus":
            delta = np.minimum(delta % 1.0, 1.0 - delta % 1.0)
        return int(np.argmin(delta))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "points": self.points.tolist(),
            "dist": self.dist.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GroundSpace":
        kind = data.get("kind", "graph")
        m = len(data["dist"])
        if kind == "torus":
            return build_torus_1d(m)
        if kind == "interval":
            return build_interval(m)
        return cls(points=data["points"], dist=data["dist"], kind="graph")


@dataclass(frozen=True, eq=False)
class AtomicMeasure:
    """Невід'ємні ваги у вузлах простору."""
    weights: np.ndarray

    def __post_init__(self):
        weights = _frozen_array(self.weights, 1, "weights")
        if not np.all(np.isfinite(weights)):
            raise ValidationError("ваги міри мають бути скінченними")
        if np.any(weights < 0):
            raise ValidationError(f"від'ємна вага міри: min = {weights.min():.3e}")
        object.__setattr__(self, "weights", weights)

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    @property
    def size(self) -> int:
        return self.weights.size

    def to_dict(self) -> dict:
        return {"weights": self.weights.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "AtomicMeasure":
        return cls(weights=data["weights"])


@dataclass(frozen=True, eq=False)
class SignedMeasure:
    """Пара (λ⁺, λ⁻) рівної маси; λ = λ⁺ − λ⁻."""
    pos: AtomicMeasure
    neg: AtomicMeasure

    def __post_init__(self):
        if self.pos.size != self.neg.size:
            raise ValidationError(f"λ⁺ та λ⁻ задані на різних просторах ({self.pos.size} != {self.neg.size})")
        gap = self.pos.mass - self.neg.mass
        if abs(gap) > config.MASS_TOLERANCE:
            raise ValidationError(
                f"маси λ⁺ та λ⁻ не збігаються: розрив {gap:.3e} "
                f"(|λ⁺| = {self.pos.mass:.12g}, |λ⁻| = {self.neg.mass:.12g})"
            )

    @property
    def net(self) -> np.ndarray:
        return self.pos.weights - self.neg.weights

    @property
    def mass(self) -> float:
        return self.pos.mass

    @property
    def total_variation(self) -> float:
        return self.pos.mass + self.neg.mass

    @property
    def size(self) -> int:
        return self.pos.size

    def scaled(self, factor: float) -> "SignedMeasure":
        return SignedMeasure(
            AtomicMeasure(self.pos.weights * factor),
            AtomicMeasure(self.neg.weights * factor),
        )

    def to_dict(self) -> dict:
        return {"pos": self.pos.to_dict(), "neg": self.neg.to_dict()}

    @classmethod
    def from_dict(cls, data: dict) -> "SignedMeasure":
        return signed(AtomicMeasure.from_dict(data["pos"]), AtomicMeasure.from_dict(data["neg"]))


def _check_size(m: int):
    if int(m) != m or m < 2:
        raise ValidationError(f"розмір сітки має бути цілим числом >= 2, отримано {m}")


def build_torus_1d(m: int) -> GroundSpace:
    """Рівномірна сітка i/m на колі одиничної довжини."""
    _check_size(m)
    idx = np.arange(m)
    gap = np.abs(idx[:, None] - idx[None, :])
    dist = np.minimum(gap, m - gap) / m
    stencil = tuple(((i + 1) % m, 1.0 / m) for i in range(m))
    return GroundSpace(points=idx / m, dist=dist, kind="torus", stencil=stencil)


def build_interval(m: int) -> GroundSpace:
    """Рівномірна сітка i/(m−1) на відрізку [0, 1]."""
    _check_size(m)
    h = 1.0 / (m - 1)
    idx = np.arange(m)
    dist = np.abs(idx[:, None] - idx[None, :]) * h
    stencil = tuple((i + 1, h) for i in range(m - 1)) + ((m - 2, -h),)
    return GroundSpace(points=idx * h, dist=dist, kind="interval", stencil=stencil)


def metric_closure(edges: Iterable[Tuple[int, int, float]], m: Optional[int] = None) -> GroundSpace:
    """
    Метрика найкоротших шляхів зв'язного зваженого графа.

    Args:
        edges: трійки (i, j, вага) з вагою > 0
        m: кількість вузлів (за замовчуванням - найбільший індекс + 1)
    """
    edges = list(edges)
    if not edges:
        raise ValidationError("граф без ребер")
    size = m if m is not None else 1 + max(max(i, j) for i, j, _ in edges)
    dense = np.full((size, size), np.inf)
    for i, j, w in edges:
        if not (w > 0 and np.isfinite(w)):
            raise ValidationError(f"вага ребра ({i}, {j}) має бути додатною, отримано {w}")
        if i == j:
            continue
        dense[i, j] = dense[j, i] = min(dense[i, j], w)
    graph = csgraph.csgraph_from_dense(dense, null_value=np.inf)
    dist = csgraph.shortest_path(graph, directed=False)
    if np.any(np.isinf(dist)):
        n_components, _ = csgraph.connected_components(graph, directed=False)
        raise ValidationError(f"граф незв'язний ({n_components} компонент): нескінченна відстань")
    logger.debug(f"Метричне замикання графа: {size} вузлів, {len(edges)} ребер")
    return GroundSpace(points=np.arange(size, dtype=float), dist=dist, kind="graph")


def dirac(space: GroundSpace, i: int, mass: float = 1.0) -> AtomicMeasure:
    if not 0 <= i < space.size:
        raise ValidationError(f"індекс {i} поза межами простору розміру {space.size}")
    weights = np.zeros(space.size)
    weights[i] = mass
    return AtomicMeasure(weights)


def uniform(space: GroundSpace) -> AtomicMeasure:
    return AtomicMeasure(np.full(space.size, 1.0 / space.size))


def signed(pos: AtomicMeasure, neg: AtomicMeasure) -> SignedMeasure:
    return SignedMeasure(pos, neg)


def from_difference(net: Sequence[float]) -> SignedMeasure:
    """Розкладає збалансований вектор на додатну та від'ємну частини."""
    net = np.asarray(net, dtype=float)
    return signed(AtomicMeasure(np.clip(net, 0, None)), AtomicMeasure(np.clip(-net, 0, None)))


def from_atoms(space: GroundSpace, atoms: Dict[int, float]) -> SignedMeasure:
    """λ з іменованих атомів {індекс: знакова вага}; атоми в одному вузлі додаються."""
    net = np.zeros(space.size)
    for i, w in atoms.items():
        if not 0 <= i < space.size:
            raise ValidationError(f"атом з індексом {i} поза межами простору розміру {space.size}")
        net[i] += w
    return from_difference(net)


def probability(weights: Sequence[float]) -> AtomicMeasure:
    """Нормує невід'ємні ваги до ймовірнісної міри."""
    weights = np.asarray(weights, dtype=float)
    total = weights.sum()
    if not total > 0:
        raise ValidationError("неможливо нормувати міру нульової маси")
    return AtomicMeasure(weights / total)


def tv_distance(a: AtomicMeasure, b: AtomicMeasure) -> float:
    return 0.5 * float(np.abs(a.weights - b.weights).sum())


def cdf_distance(a: AtomicMeasure, b: AtomicMeasure) -> float:
    """Відстань Колмогорова між функціями розподілу (порядок вузлів - порядок сітки)."""
    return float(np.max(np.abs(np.cumsum(a.weights) - np.cumsum(b.weights))))


def ramp_measure(space: GroundSpace, lo: float, hi: float) -> AtomicMeasure:
    """Рівномірна міра на вузлах сітки з координатою в [lo, hi]."""
    coords = space.points[:, 0]
    mask = (coords >= lo - METRIC_TOLERANCE) & (coords <= hi + METRIC_TOLERANCE)
    return probability(mask.astype(float))


def random_measure(space: GroundSpace, rng: np.random.Generator, support: Optional[int] = None,
                   mass: float = 1.0) -> AtomicMeasure:
    """Випадкова міра заданої маси (на випадковому носії розміру support)."""
    weights = np.zeros(space.size)
    idx = np.arange(space.size) if support is None else rng.choice(space.size, size=support, replace=False)
    weights[idx] = rng.random(len(idx)) + 0.05
    return AtomicMeasure(weights * (mass / weights.sum()))


def support_indices(measure: AtomicMeasure, tol: float = 0.0) -> List[int]:
    return [int(i) for i in np.flatnonzero(measure.weights > tol)]
