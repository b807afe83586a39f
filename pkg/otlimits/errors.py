"""
Винятки лабораторії.
"""


class ValidationError(ValueError):
    """Порушено передумову або інваріант вхідних даних."""


class SolverError(RuntimeError):
    """Розв'язувач не знайшов розв'язок або розв'язок не пройшов перевірку."""
