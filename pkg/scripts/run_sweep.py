#!/usr/bin/env python3
"""
Скрипт для швидкого запуску ε-розгортки на колі.
Використання: python3 scripts/run_sweep.py [m] [n1 n2 ...]
"""

import os
import sys

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from otlimits.core import build_torus_1d, dirac, signed
from otlimits.limits import epsilon_sweep
from otlimits.wasserstein import wasserstein_p


def main():
    m = int(sys.argv[1]) if len(sys.argv) > 1 else 64
    n_list = [int(n) for n in sys.argv[2:]] or [4, 8, 16, 32]

    space = build_torus_1d(m)
    lam = signed(dirac(space, 0), dirac(space, m // 2))
    w1 = wasserstein_p(space, 1.0, lam.pos, lam.neg)

    print(f"Розгортка на колі з {m} вузлів, λ = δ0 − δ½...")
    report = epsilon_sweep(space, 2.0, lam, n_list)

    print()
    print("=" * 50)
    print("n · min_μ W₂")
    print("=" * 50)
    print()
    for n, value, gap in zip(report.n_values, report.scaled_values, report.gaps):
        print(f"n = {n:4d}: {value:.8f}   приріст {gap:.2e}")
    print()
    print(f"W₁ = {w1:.8f}")
    print(f"Екстраполяція Річардсона: {report.extrapolated_limit:.8f}")
    print(f"Відхилення: {abs(report.extrapolated_limit - w1) / w1 * 100:.2f}%")
    print()


if __name__ == '__main__':
    main()
