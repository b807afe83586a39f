"""
Конфігурація лабораторії та глобальні змінні.
"""

import configparser
import logging
import os

logging.basicConfig(
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s", level=logging.INFO
)
logger = logging.getLogger(__name__)

config = configparser.ConfigParser()

CONFIG_PATH = os.environ.get("OTLIMITS_CONFIG", "otlimits.ini")

# Допуски розв'язувача
TOLERANCE = 1e-9
FEASIBILITY_TOLERANCE = 1e-10
MASS_TOLERANCE = 1e-12
GRADIENT_TOLERANCE = 1e-7
MAX_ASCENT_ITERATIONS = 20000
HUBER_WIDTH = 1e-6

THREADS = 1
OUTPUT_DIR = "results"
LOG_LEVEL = "INFO"

SCHEMA_VERSION = 1

SUBCOMMANDS = (
    "w1", "wp", "sweep", "conditional", "weakkam",
    "transport-measure", "th1-check", "th5-check", "liminf-check",
)
POTENTIALS = ("cosine", "constant", "two_well")
BUILDERS = ("torus_1d", "interval")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_SOLVER = 3


def _read_threads(raw: str) -> int:
    threads = int(raw)
    if threads < 1:
        raise ValueError(f"кількість потоків має бути >= 1, отримано {threads}")
    return threads


def save_config(path: str = None):
    """Зберігає поточні налаштування у INI-файл."""
    for section in ("SOLVER", "RUNTIME", "OUTPUT", "LOGGING"):
        if not config.has_section(section):
            config.add_section(section)
    config["SOLVER"]["TOLERANCE"] = repr(TOLERANCE)
    config["SOLVER"]["FEASIBILITY_TOLERANCE"] = repr(FEASIBILITY_TOLERANCE)
    config["SOLVER"]["MAX_ASCENT_ITERATIONS"] = str(MAX_ASCENT_ITERATIONS)
    config["RUNTIME"]["THREADS"] = str(THREADS)
    config["OUTPUT"]["DIR"] = OUTPUT_DIR
    config["LOGGING"]["LEVEL"] = LOG_LEVEL
    with open(path or CONFIG_PATH, "w") as configfile:
        config.write(configfile)


def initialize(path: str = None):
    """
    Завантажує налаштування з INI-файлу (якщо він є) та змінних оточення.

    Відсутній файл не є помилкою: залишаються значення за замовчуванням.
    """
    global TOLERANCE, FEASIBILITY_TOLERANCE, MAX_ASCENT_ITERATIONS
    global THREADS, OUTPUT_DIR, LOG_LEVEL

    path = path or CONFIG_PATH
    if os.path.exists(path):
        try:
            config.read(path)
            solver = config["SOLVER"] if config.has_section("SOLVER") else {}
            TOLERANCE = float(solver.get("TOLERANCE", TOLERANCE))
            FEASIBILITY_TOLERANCE = float(solver.get("FEASIBILITY_TOLERANCE", FEASIBILITY_TOLERANCE))
            MAX_ASCENT_ITERATIONS = int(solver.get("MAX_ASCENT_ITERATIONS", MAX_ASCENT_ITERATIONS))
            if config.has_section("RUNTIME"):
                THREADS = _read_threads(config["RUNTIME"].get("THREADS", str(THREADS)))
            if config.has_section("OUTPUT"):
                OUTPUT_DIR = config["OUTPUT"].get("DIR", OUTPUT_DIR).strip()
            if config.has_section("LOGGING"):
                LOG_LEVEL = config["LOGGING"].get("LEVEL", LOG_LEVEL).strip().upper()
            logger.info(f"Налаштування завантажено з {path}")
        except (ValueError, configparser.Error) as e:
            logger.error(f"Некоректне значення у {path}: {e}. Використано значення за замовчуванням.")
    else:
        logger.debug(f"Файл {path} не знайдено, використано значення за замовчуванням.")

    threads_env = os.environ.get("OTLIMITS_THREADS")
    if threads_env:
        try:
            THREADS = _read_threads(threads_env)
        except ValueError as e:
            logger.warning(f"Ігнорую OTLIMITS_THREADS={threads_env!r}: {e}")

    logging.getLogger("otlimits").setLevel(LOG_LEVEL)
