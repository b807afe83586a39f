"""
Експерименти з конфігураційного файлу: розбір JSON-опису, запуск однієї з
підкоманд та запис результатів (JSON, CSV, дані для графіків).
"""

import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from otlimits import config
from otlimits.core import (
    AtomicMeasure,
    GroundSpace,
    SignedMeasure,
    build_interval,
    build_torus_1d,
    cdf_distance,
    dirac,
    from_atoms,
    probability,
    ramp_measure,
    random_measure,
    uniform,
)
from otlimits.errors import SolverError, ValidationError
from otlimits.formatters import emit_json, emit_plotdata, emit_record, emit_rows, emit_table, write_text
from otlimits.lagrangian import (
    DRIFT,
    HOMOGENEOUS,
    MECHANICAL,
    MODEL_KINDS,
    CostModel,
    effective_h_bound,
    homogeneous,
    ubar_and_mather,
)
from otlimits.limits import (
    affine_continuation,
    chat_conditional,
    chat_T_energy,
    conditional_w1p,
    d_e_conditional,
    default_energy_range,
    epsilon_sweep,
    gamma_liminf_check,
    th5_spotcheck,
    transport_measure,
)
from otlimits.wasserstein import duality_gap, w1_dual, wasserstein_p

logger = logging.getLogger(__name__)

MU_KINDS = ("uniform", "ramp", "dirac", "random", "transport")
TEST_POTENTIALS = 20


def _check_keys(data, allowed, where: str) -> dict:
    if not isinstance(data, dict):
        raise ValidationError(f"{where}: очікується об'єкт, отримано {type(data).__name__}")
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ValidationError(f"{where}: невідомі ключі {unknown}")
    return data


def _require(data: dict, key: str, where: str):
    if key not in data:
        raise ValidationError(f"{where}: відсутній обов'язковий ключ '{key}'")
    return data[key]


def potential_values(name: str, space: GroundSpace, amplitude: float = 1.0) -> np.ndarray:
    """Потенціал з каталогу у вузлах сітки."""
    x = space.points[:, 0]
    if name == "cosine":
        return amplitude * np.cos(2 * np.pi * x)
    if name == "constant":
        return np.full(space.size, float(amplitude))
    if name == "two_well":
        return amplitude * np.cos(4 * np.pi * x)
    raise ValidationError(f"невідомий потенціал '{name}', допустимі: {', '.join(config.POTENTIALS)}")


@dataclass(frozen=True)
class SpaceSpec:
    builder: str
    size: int

    def __post_init__(self):
        if self.builder not in config.BUILDERS:
            raise ValidationError(
                f"невідомий конструктор простору '{self.builder}', допустимі: {', '.join(config.BUILDERS)}"
            )

    def build(self) -> GroundSpace:
        if self.builder == "torus_1d":
            return build_torus_1d(self.size)
        return build_interval(self.size)

    def to_dict(self) -> dict:
        return {"builder": self.builder, "size": self.size}

    @classmethod
    def from_dict(cls, data) -> "SpaceSpec":
        _check_keys(data, ("builder", "size"), "space")
        return cls(builder=_require(data, "builder", "space"), size=int(_require(data, "size", "space")))


@dataclass(frozen=True)
class ModelSpec:
    """Модель вартості; potential задає V (mechanical) або W (drift)."""
    kind: str = HOMOGENEOUS
    p: float = 2.0
    potential: Optional[str] = None
    amplitude: float = 1.0

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValidationError(f"невідомий тип моделі '{self.kind}', допустимі: {', '.join(MODEL_KINDS)}")
        if self.kind != HOMOGENEOUS and self.potential is None:
            raise ValidationError(f"модель '{self.kind}' потребує потенціалу з каталогу")
        if self.potential is not None and self.potential not in config.POTENTIALS:
            raise ValidationError(
                f"невідомий потенціал '{self.potential}', допустимі: {', '.join(config.POTENTIALS)}"
            )

    def build(self, space: GroundSpace) -> CostModel:
        if self.kind == HOMOGENEOUS:
            return homogeneous(space, self.p)
        values = potential_values(self.potential, space, self.amplitude)
        if self.kind == MECHANICAL:
            return CostModel(kind=MECHANICAL, space=space, V=values)
        return CostModel(kind=DRIFT, space=space, p=self.p, W=values)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "p": self.p, "potential": self.potential, "amplitude": self.amplitude}

    @classmethod
    def from_dict(cls, data) -> "ModelSpec":
        _check_keys(data, ("kind", "p", "potential", "amplitude"), "model")
        return cls(
            kind=data.get("kind", HOMOGENEOUS),
            p=float(data.get("p", 2.0)),
            potential=data.get("potential"),
            amplitude=float(data.get("amplitude", 1.0)),
        )


@dataclass(frozen=True)
class Atom:
    x: float
    weight: float

    def to_dict(self) -> dict:
        return {"x": self.x, "weight": self.weight}

    @classmethod
    def from_dict(cls, data) -> "Atom":
        _check_keys(data, ("x", "weight"), "lambda")
        return cls(x=float(_require(data, "x", "lambda")), weight=float(_require(data, "weight", "lambda")))


def build_lambda(atoms: Tuple[Atom, ...], space: GroundSpace) -> SignedMeasure:
    """λ з атомів, прив'язаних до найближчих вузлів сітки."""
    if not atoms:
        raise ValidationError("λ не містить жодного атома")
    weights: Dict[int, float] = {}
    for atom in atoms:
        i = space.nearest_index(atom.x)
        weights[i] = weights.get(i, 0.0) + atom.weight
    return from_atoms(space, weights)


@dataclass(frozen=True)
class SweepSpec:
    n_list: Tuple[int, ...] = ()
    T: float = 1.0
    p: float = 2.0

    def to_dict(self) -> dict:
        return {"n_list": list(self.n_list), "T": self.T, "p": self.p}

    @classmethod
    def from_dict(cls, data) -> "SweepSpec":
        _check_keys(data, ("n_list", "T", "p"), "sweep")
        return cls(
            n_list=tuple(int(n) for n in data.get("n_list", ())),
            T=float(data.get("T", 1.0)),
            p=float(data.get("p", 2.0)),
        )


@dataclass(frozen=True)
class MuSpec:
    kind: str = "uniform"
    lo: Optional[float] = None
    hi: Optional[float] = None
    x: Optional[float] = None
    support: Optional[int] = None

    def __post_init__(self):
        if self.kind not in MU_KINDS:
            raise ValidationError(f"невідомий тип міри μ '{self.kind}', допустимі: {', '.join(MU_KINDS)}")
        if self.kind == "ramp" and (self.lo is None or self.hi is None):
            raise ValidationError("міра 'ramp' потребує меж lo та hi")
        if self.kind == "dirac" and self.x is None:
            raise ValidationError("міра 'dirac' потребує координати x")

    def to_dict(self) -> dict:
        data = {"kind": self.kind}
        for key in ("lo", "hi", "x", "support"):
            if getattr(self, key) is not None:
                data[key] = getattr(self, key)
        return data

    @classmethod
    def from_dict(cls, data) -> "MuSpec":
        _check_keys(data, ("kind", "lo", "hi", "x", "support"), "mu")
        return cls(
            kind=data.get("kind", "uniform"),
            lo=None if data.get("lo") is None else float(data["lo"]),
            hi=None if data.get("hi") is None else float(data["hi"]),
            x=None if data.get("x") is None else float(data["x"]),
            support=None if data.get("support") is None else int(data["support"]),
        )


@dataclass(frozen=True)
class EnergySpec:
    E: Optional[float] = None
    # [start, stop, num] для numpy.linspace
    E_range: Optional[Tuple[float, float, int]] = None

    def grid(self) -> Optional[np.ndarray]:
        if self.E_range is None:
            return None
        start, stop, num = self.E_range
        return np.linspace(start, stop, num)

    def to_dict(self) -> dict:
        return {"E": self.E, "E_range": None if self.E_range is None else list(self.E_range)}

    @classmethod
    def from_dict(cls, data) -> "EnergySpec":
        _check_keys(data, ("E", "E_range"), "energy")
        E_range = data.get("E_range")
        if E_range is not None:
            if len(E_range) != 3 or int(E_range[2]) < 1:
                raise ValidationError(f"energy.E_range: очікується [start, stop, num], отримано {E_range}")
            E_range = (float(E_range[0]), float(E_range[1]), int(E_range[2]))
        return cls(E=None if data.get("E") is None else float(data["E"]), E_range=E_range)


@dataclass(frozen=True)
class BellmanSpec:
    steps: Optional[int] = None
    T_values: Tuple[float, ...] = ()

    def to_dict(self) -> dict:
        return {"steps": self.steps, "T_values": list(self.T_values)}

    @classmethod
    def from_dict(cls, data) -> "BellmanSpec":
        _check_keys(data, ("steps", "T_values"), "bellman")
        return cls(
            steps=None if data.get("steps") is None else int(data["steps"]),
            T_values=tuple(float(t) for t in data.get("T_values", ())),
        )


@dataclass(frozen=True)
class OutputSpec:
    dir: Optional[str] = None
    stem: str = "result"

    def to_dict(self) -> dict:
        return {"dir": self.dir, "stem": self.stem}

    @classmethod
    def from_dict(cls, data) -> "OutputSpec":
        _check_keys(data, ("dir", "stem"), "output")
        return cls(dir=data.get("dir"), stem=data.get("stem", "result"))


CONFIG_KEYS = (
    "schema_version", "space", "model", "lambda", "sweep", "mu",
    "candidates", "energy", "bellman", "output",
)


@dataclass(frozen=True)
class ExperimentConfig:
    space: SpaceSpec
    lam: Tuple[Atom, ...]
    model: ModelSpec = field(default_factory=ModelSpec)
    sweep: SweepSpec = field(default_factory=SweepSpec)
    mu: MuSpec = field(default_factory=MuSpec)
    candidates: Tuple[MuSpec, ...] = ()
    energy: EnergySpec = field(default_factory=EnergySpec)
    bellman: BellmanSpec = field(default_factory=BellmanSpec)
    output: OutputSpec = field(default_factory=OutputSpec)

    def __post_init__(self):
        gap = sum(atom.weight for atom in self.lam)
        if abs(gap) > config.MASS_TOLERANCE:
            raise ValidationError(f"ваги λ не збалансовані: розрив {gap:.3e}")

    def to_dict(self) -> dict:
        return {
            "schema_version": config.SCHEMA_VERSION,
            "space": self.space.to_dict(),
            "model": self.model.to_dict(),
            "lambda": [atom.to_dict() for atom in self.lam],
            "sweep": self.sweep.to_dict(),
            "mu": self.mu.to_dict(),
            "candidates": [mu.to_dict() for mu in self.candidates],
            "energy": self.energy.to_dict(),
            "bellman": self.bellman.to_dict(),
            "output": self.output.to_dict(),
        }

    @classmethod
    def from_dict(cls, data) -> "ExperimentConfig":
        _check_keys(data, CONFIG_KEYS, "конфігурація")
        version = data.get("schema_version")
        if version != config.SCHEMA_VERSION:
            raise ValidationError(
                f"непідтримувана версія схеми {version!r}, очікується {config.SCHEMA_VERSION}"
            )
        try:
            return cls(
                space=SpaceSpec.from_dict(_require(data, "space", "конфігурація")),
                lam=tuple(Atom.from_dict(a) for a in _require(data, "lambda", "конфігурація")),
                model=ModelSpec.from_dict(data.get("model", {})),
                sweep=SweepSpec.from_dict(data.get("sweep", {})),
                mu=MuSpec.from_dict(data.get("mu", {})),
                candidates=tuple(MuSpec.from_dict(c) for c in data.get("candidates", ())),
                energy=EnergySpec.from_dict(data.get("energy", {})),
                bellman=BellmanSpec.from_dict(data.get("bellman", {})),
                output=OutputSpec.from_dict(data.get("output", {})),
            )
        except ValidationError:
            raise
        except (TypeError, ValueError) as e:
            raise ValidationError(f"некоректне значення у конфігурації: {e}") from e


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError as e:
        raise ValidationError(f"файл конфігурації {path} не знайдено") from e
    except json.JSONDecodeError as e:
        raise ValidationError(f"файл {path} не є коректним JSON: {e}") from e
    return ExperimentConfig.from_dict(data)


# --- побудова об'єктів з конфігурації ---

def build_mu(spec: MuSpec, space: GroundSpace, lam: SignedMeasure, sweep: SweepSpec,
             rng: np.random.Generator) -> AtomicMeasure:
    if spec.kind == "uniform":
        return uniform(space)
    if spec.kind == "ramp":
        return ramp_measure(space, spec.lo, spec.hi)
    if spec.kind == "dirac":
        return dirac(space, space.nearest_index(spec.x))
    if spec.kind == "random":
        return probability(random_measure(space, rng, spec.support).weights)
    if not sweep.n_list:
        raise ValidationError("міра 'transport' потребує непорожнього sweep.n_list")
    return transport_measure(space, lam, sweep.n_list, sweep.p).mu


def _smooth_potentials(space: GroundSpace, rng: np.random.Generator, count: int) -> List[np.ndarray]:
    """φ = 0 та count випадкових тригонометричних многочленів степеня ≤ 3."""
    x = space.points[:, 0]
    potentials = [np.zeros(space.size)]
    for _ in range(count):
        a, b = rng.normal(scale=0.1, size=(2, 3))
        k = np.arange(1, 4)[:, None]
        phi = (a[:, None] * np.cos(2 * np.pi * k * x) + b[:, None] * np.sin(2 * np.pi * k * x)).sum(axis=0)
        potentials.append(phi)
    return potentials


def _closed_form(w1: float, p: float, T: float) -> float:
    return w1 ** p / ((p - 1.0) * T ** (p - 1.0))


def _relative(value: float, reference: float) -> float:
    if reference == 0:
        return abs(value)
    return abs(value - reference) / abs(reference)


@dataclass
class Outcome:
    data: dict
    table: Optional[str] = None
    plotdata: Optional[str] = None


# --- підкоманди ---

def _run_w1(cfg, space, lam, rng) -> Outcome:
    dual = w1_dual(space, lam)
    value = wasserstein_p(space, 1.0, lam.pos, lam.neg)
    return Outcome({"value": value, "dual": dual.value, "gap": duality_gap(space, lam), "phi": dual.phi})


def _run_wp(cfg, space, lam, rng) -> Outcome:
    p = cfg.sweep.p
    return Outcome({"p": p, "value": wasserstein_p(space, p, lam.pos, lam.neg)})


def _run_sweep(cfg, space, lam, rng) -> Outcome:
    report = epsilon_sweep(space, cfg.sweep.p, lam, cfg.sweep.n_list)
    data = report.to_dict()
    data["w1"] = wasserstein_p(space, 1.0, lam.pos, lam.neg)
    return Outcome(data, table=emit_table(report), plotdata=emit_plotdata(report))


def _run_conditional(cfg, space, lam, rng) -> Outcome:
    model = cfg.model.build(space)
    mu = build_mu(cfg.mu, space, lam, cfg.sweep, rng)
    solution = chat_conditional(space, lam, mu, cfg.sweep.T, model)
    data = {"model": model.kind, "T": cfg.sweep.T, "solution": solution.to_dict(), "mu": mu.weights}
    if model.kind == HOMOGENEOUS:
        data["w1p"] = conditional_w1p(space, lam, mu, model.p, cfg.sweep.T)
    if cfg.energy.E is not None:
        data["E"] = cfg.energy.E
        data["d_e_conditional"] = d_e_conditional(space, lam, mu, model, cfg.energy.E)
    return Outcome(data)


def _run_weakkam(cfg, space, lam, rng) -> Outcome:
    model = cfg.model.build(space)
    T = cfg.sweep.T
    ubar, mather = ubar_and_mather(model, T, cfg.bellman.steps)
    bounds = [effective_h_bound(model, phi) for phi in _smooth_potentials(space, rng, TEST_POTENTIALS)]
    h_bound = min(bounds)
    # ūE лежить між оцінкою та h_bound; ширина цього проміжку - запас сітки
    E_floor = ubar + max(h_bound - ubar, 0.0)
    data = {
        "model": model.kind,
        "ubar": ubar,
        "mather": mather.weights,
        "h_bound": h_bound,
        "sandwiched": ubar <= h_bound + config.TOLERANCE,
        "E_floor": E_floor,
    }
    if cfg.bellman.T_values:
        E_range = cfg.energy.grid()
        if E_range is None:
            E_range = E_floor + default_energy_range(space, lam, model.p, min(cfg.bellman.T_values))
        continuation = affine_continuation(space, lam, model, cfg.bellman.T_values, E_range,
                                           steps=cfg.bellman.steps)
        data["continuation"] = continuation.to_dict()
    return Outcome(data)


def _single_pair(lam: SignedMeasure) -> Optional[Tuple[int, int]]:
    pos, neg = np.flatnonzero(lam.pos.weights), np.flatnonzero(lam.neg.weights)
    if pos.size == 1 and neg.size == 1:
        return int(pos[0]), int(neg[0])
    return None


def _run_transport_measure(cfg, space, lam, rng) -> Outcome:
    result = transport_measure(space, lam, cfg.sweep.n_list, cfg.sweep.p)
    data = result.to_dict()
    pair = _single_pair(lam)
    if pair is not None:
        lo, hi = sorted(space.points[list(pair), 0])
        data["ramp_cdf_gap"] = cdf_distance(result.mu, ramp_measure(space, lo, hi))
    return Outcome(data, table=emit_table(result.report), plotdata=emit_plotdata(result.report))


def _run_th1_check(cfg, space, lam, rng) -> Outcome:
    p, T = cfg.sweep.p, cfg.sweep.T
    model = homogeneous(space, p)
    closed = _closed_form(wasserstein_p(space, 1.0, lam.pos, lam.neg), p, T)
    E_range = cfg.energy.grid()
    if E_range is None:
        E_range = default_energy_range(space, lam, p, T)
    energy = chat_T_energy(space, lam, T, model, E_range)
    data = {
        "p": p,
        "T": T,
        "closed_form": closed,
        "energy": energy,
        "energy_deviation": _relative(energy, closed),
    }
    outcome = Outcome(data)
    if cfg.sweep.n_list:
        report = epsilon_sweep(space, p, lam, cfg.sweep.n_list)
        data["sweep"] = _closed_form(report.extrapolated_limit, p, T)
        data["sweep_deviation"] = _relative(data["sweep"], closed)
        outcome.table, outcome.plotdata = emit_table(report), emit_plotdata(report)
    if cfg.candidates:
        candidates = [build_mu(spec, space, lam, cfg.sweep, rng) for spec in cfg.candidates]
        data["saddle"] = min(chat_conditional(space, lam, mu, T, model).value for mu in candidates)
    return outcome


def _run_th5_check(cfg, space, lam, rng) -> Outcome:
    if not cfg.candidates:
        raise ValidationError("th5-check потребує непорожнього списку candidates")
    candidates = [build_mu(spec, space, lam, cfg.sweep, rng) for spec in cfg.candidates]
    result = th5_spotcheck(space, lam, cfg.sweep.p, candidates, cfg.sweep.T,
                           E=cfg.energy.E, E_range=cfg.energy.grid())
    data = result.to_dict()
    data["candidates"] = [spec.kind for spec in cfg.candidates]
    data["ratios"] = [v / result.unconditional if result.unconditional else math.nan
                      for v in result.candidate_values]
    data["holds"] = result.holds
    return Outcome(data)


def _run_liminf_check(cfg, space, lam, rng) -> Outcome:
    mu = build_mu(cfg.mu, space, lam, cfg.sweep, rng)
    rows = gamma_liminf_check(space, cfg.sweep.p, lam, mu, cfg.sweep.n_list, cfg.sweep.T)
    data = {
        "rows": [row.to_dict() for row in rows],
        "violations": sum(not row.holds for row in rows),
    }
    return Outcome(data, table=emit_rows(rows))


RUNNERS = {
    "w1": _run_w1,
    "wp": _run_wp,
    "sweep": _run_sweep,
    "conditional": _run_conditional,
    "weakkam": _run_weakkam,
    "transport-measure": _run_transport_measure,
    "th1-check": _run_th1_check,
    "th5-check": _run_th5_check,
    "liminf-check": _run_liminf_check,
}


def execute(subcommand: str, cfg: ExperimentConfig, seed: int = 0) -> Outcome:
    """Виконує підкоманду над розібраною конфігурацією."""
    if subcommand not in RUNNERS:
        raise ValidationError(f"невідома підкоманда '{subcommand}', допустимі: {', '.join(config.SUBCOMMANDS)}")
    space = cfg.space.build()
    lam = build_lambda(cfg.lam, space)
    rng = np.random.default_rng(seed)
    logger.info(f"Експеримент {subcommand}: {cfg.space.builder}({cfg.space.size}), seed {seed}")
    return RUNNERS[subcommand](cfg, space, lam, rng)


def run(subcommand: str, config_path: str, out_dir: Optional[str] = None, seed: int = 0) -> int:
    """
    Розбирає конфігурацію, виконує експеримент та записує <stem>.json і <stem>.csv
    (таблиця підкоманди або один рядок скалярних полів результату), а також
    <stem>.dat, якщо підкоманда дає дані для графіка.

    Повертає код виходу: 0 - успіх, 2 - помилка валідації, 3 - збій розв'язувача.
    """
    try:
        cfg = load_config(config_path)
        outcome = execute(subcommand, cfg, seed)
    except ValidationError as e:
        logger.error(f"Помилка валідації: {e}")
        return config.EXIT_VALIDATION
    except SolverError as e:
        logger.error(f"Збій розв'язувача: {e}")
        return config.EXIT_SOLVER

    directory = out_dir or cfg.output.dir or config.OUTPUT_DIR
    base = os.path.join(directory, cfg.output.stem)
    document = {
        "schema_version": config.SCHEMA_VERSION,
        "subcommand": subcommand,
        "seed": seed,
        "config": cfg.to_dict(),
        "result": outcome.data,
    }
    write_text(base + ".json", emit_json(document))
    table = outcome.table if outcome.table is not None else emit_record(outcome.data)
    write_text(base + ".csv", table)
    if outcome.plotdata is not None:
        write_text(base + ".dat", outcome.plotdata)
    logger.info(f"Експеримент {subcommand} завершено")
    return config.EXIT_OK
