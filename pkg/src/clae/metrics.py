"""Append-only line-delimited JSON metrics stream.

One object per line, flushed per record so a crashed run still leaves a
valid stream.  The `ts` field is the only nondeterministic part; consumers
comparing runs should drop it.
"""

from __future__ import annotations

import json
import math
import time

from .errors import ContractError


class MetricsWriter:
    def __init__(self, path, run_id: str):
        self.run_id = run_id
        self._f = open(path, "a", encoding="utf-8")

    def emit(self, record: dict) -> None:
        for key, value in record.items():
            if isinstance(value, float) and not math.isfinite(value):
                raise ContractError(f"non-finite metric value for {key!r}")
        line = dict(record)
        line["run_id"] = self.run_id
        line["ts"] = time.time()
        self._f.write(json.dumps(line, sort_keys=True) + "\n")
        self._f.flush()

    def __call__(self, record: dict) -> None:
        self.emit(record)

    def close(self) -> None:
        self._f.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_metrics(path) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records
