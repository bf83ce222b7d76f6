"""Small shared helpers."""

from __future__ import annotations

import os


def worker_count() -> int:
    """Intra-step parallelism cap from LGDN_THREADS (0 or unset = auto)."""
    raw = os.environ.get("LGDN_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n < 0:
        n = 0
    if n == 0:
        n = min(os.cpu_count() or 1, 8)
    return n
