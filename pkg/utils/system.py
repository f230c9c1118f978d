import os

import psutil

THREADS_ENV = "SPINBOSON_THREADS"


def default_threads():
    """Worker count used when neither --threads nor SPINBOSON_THREADS is given."""
    cores = psutil.cpu_count(logical=False) or psutil.cpu_count() or 1
    return max(1, int(cores))


def resolve_threads(requested=None):
    """
    Resolve the worker count.

    Args:
        requested: explicit value from the command line, or None

    Returns:
        A positive integer: the explicit value, else $SPINBOSON_THREADS,
        else the number of physical cores.
    """
    if requested:
        return max(1, int(requested))
    env_value = os.environ.get(THREADS_ENV, "").strip()
    if env_value:
        try:
            return max(1, int(env_value))
        except ValueError:
            pass
    return default_threads()


def available_memory_bytes():
    """Memory the OS reports as available for new allocations."""
    return int(psutil.virtual_memory().available)


def memory_budget_bytes(budget_mb=None):
    """Budget for a single operator assembly: explicit MB value or half the available RAM."""
    if budget_mb:
        return int(float(budget_mb) * 1024**2)
    return available_memory_bytes() // 2


def process_rss_mb():
    """Resident set size of this process in MB."""
    return psutil.Process().memory_info().rss / (1024**2)
