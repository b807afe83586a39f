"""
Командний рядок: otlimits <підкоманда> --config <шлях> [--out <тека>] [--seed <u64>].
"""

import argparse
import logging

from otlimits import config
from otlimits.harness import run

logger = logging.getLogger(__name__)

SUBCOMMAND_HELP = {
    "w1": "W₁ прямою та двоїстою задачами",
    "wp": "W_p транспортною задачею",
    "sweep": "ε-розгортка n·min_μ W_p",
    "conditional": "умовна дія ĈT(λ‖μ) та W⁽ᵖ⁾(λ‖μ)",
    "weakkam": "енергія основного стану ūE та міра Мазера",
    "transport-measure": "наближення транспортної міри",
    "th1-check": "узгодженість трьох шляхів обчислення ĈT(λ)",
    "th5-check": "вкладена мінімізація за μ",
    "liminf-check": "нерівність Γ-liminf",
}


def _seed(raw: str) -> int:
    value = int(raw)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError(f"seed має бути в [0, 2^64), отримано {raw}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="otlimits", description="Граничні теореми оптимального транспорту")
    subparsers = parser.add_subparsers(dest="subcommand", required=True)
    for name in config.SUBCOMMANDS:
        sub = subparsers.add_parser(name, help=SUBCOMMAND_HELP[name])
        sub.add_argument("--config", required=True, help="JSON-опис експерименту")
        sub.add_argument("--out", default=None, help="тека для результатів")
        sub.add_argument("--seed", type=_seed, default=0, help="зерно генератора випадкових чисел")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    config.initialize()
    return run(args.subcommand, args.config, args.out, args.seed)
