#!/usr/bin/env python3
"""
Скрипт для перевірки двоїстості W₁ на випадковому прикладі.
Використання: python3 scripts/check_duality.py [m] [seed]
"""

import os
import sys

import numpy as np

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from otlimits.core import build_torus_1d, random_measure, signed
from otlimits.wasserstein import w1_dual, wasserstein_p


def main():
    m = int(sys.argv[1]) if len(sys.argv) > 1 else 32
    seed = int(sys.argv[2]) if len(sys.argv) > 2 else 0
    if m < 2:
        print("Помилка: розмір сітки має бути не менше 2")
        sys.exit(1)

    rng = np.random.default_rng(seed)
    space = build_torus_1d(m)
    lam = signed(random_measure(space, rng), random_measure(space, rng))

    primal = wasserstein_p(space, 1.0, lam.pos, lam.neg)
    dual = w1_dual(space, lam)
    lipschitz = np.max(np.abs(dual.phi[:, None] - dual.phi[None, :]) - space.dist)

    print()
    print("=" * 50)
    print(f"ДВОЇСТІСТЬ W₁ (m = {m}, seed = {seed})")
    print("=" * 50)
    print()
    print(f"Пряма задача:   {primal:.12f}")
    print(f"Двоїста задача: {dual.value:.12f}")
    print(f"Розрив:         {abs(primal - dual.value):.2e}")
    print(f"Порушення умови Ліпшиця: {max(lipschitz, 0.0):.2e}")
    print()


if __name__ == '__main__':
    main()
