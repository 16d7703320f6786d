#!/usr/bin/env python3
"""Download and verify the canonical Adult census files.

Usage: python scripts/fetch_adult.py [target_dir]

Writes adult.data (32,561 rows) and adult.test (16,281 rows) to the target
directory (default data/adult/), verifying row and column counts of the
canonical UCI files. Needs outbound network access.
"""

import sys
import urllib.request
from pathlib import Path

BASE = "https://archive.ics.uci.edu/ml/machine-learning-databases/adult/"
FILES = {
    "adult.data": 32561,
    "adult.test": 16281,
}
COLUMNS = 15


def count_rows(text: str, name: str) -> int:
    rows = 0
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("|"):
            continue
        fields = line.split(",")
        if len(fields) != COLUMNS:
            raise ValueError(
                f"{name}:{lineno}: expected {COLUMNS} fields, got {len(fields)}"
            )
        rows += 1
    return rows


def fetch(target_dir: Path) -> int:
    target_dir.mkdir(parents=True, exist_ok=True)
    for name, expected_rows in FILES.items():
        dest = target_dir / name
        if dest.exists():
            try:
                rows = count_rows(dest.read_text("utf-8", "replace"), name)
            except ValueError as exc:
                print(f"{dest}: present but invalid ({exc}); re-downloading")
            else:
                if rows == expected_rows:
                    print(f"{dest}: already present, {rows} rows verified")
                    continue
                print(f"{dest}: has {rows} rows, expected {expected_rows}; "
                      f"re-downloading")
        url = BASE + name
        print(f"downloading {url}")
        with urllib.request.urlopen(url) as resp:
            payload = resp.read()
        text = payload.decode("utf-8", "replace")
        rows = count_rows(text, name)
        if rows != expected_rows:
            print(f"error: {name} has {rows} rows, expected {expected_rows}",
                  file=sys.stderr)
            return 1
        dest.write_bytes(payload)
        print(f"{dest}: {rows} data rows verified")
    return 0


if __name__ == "__main__":
    target = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("data/adult")
    sys.exit(fetch(target))
