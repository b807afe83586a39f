#!/usr/bin/env python3
"""
OT Limits Lab - Entry Point.
Лабораторія граничних теорем оптимального транспорту на скінченних сітках.
"""

import sys

from otlimits.cli import main

if __name__ == "__main__":
    sys.exit(main())
