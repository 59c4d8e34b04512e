"""Fetch the UCI Adult files into data/adult/ and write the preprocessed data/adult.csv.

Tries the UCI archive first; if that is unreachable, falls back to the copy
bundled in the ``responsibly`` wheel (fetched with ``pip download``).
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import subprocess
import sys
import tempfile
import urllib.request
import zipfile
from pathlib import Path

from anatknn.adult import prepare_adult

logger = logging.getLogger("fetch_adult")

UCI = "https://archive.ics.uci.edu/ml/machine-learning-databases/adult/"
MD5 = {"adult.data": "5d7c39d7b8804f071cdd1f2a7c460872", "adult.test": "35238206dfdf7f1fe215bbb874adecdc"}


def md5(path: Path) -> str:
    return hashlib.md5(path.read_bytes()).hexdigest()


def from_uci(dest: Path) -> None:
    for name in MD5:
        with urllib.request.urlopen(UCI + name, timeout=30) as resp:
            (dest / name).write_bytes(resp.read())


def from_wheel(dest: Path) -> None:
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            [sys.executable, "-m", "pip", "download", "--no-deps", "responsibly==0.1.2", "-d", tmp],
            check=True,
        )
        wheel = next(Path(tmp).glob("responsibly-*.whl"))
        with zipfile.ZipFile(wheel) as z:
            for name in MD5:
                (dest / name).write_bytes(z.read(f"responsibly/dataset/adult/{name}"))


def main() -> int:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--data-dir", type=Path, default=Path("data"))
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    raw = args.data_dir / "adult"
    raw.mkdir(parents=True, exist_ok=True)
    if not all((raw / n).exists() and md5(raw / n) == h for n, h in MD5.items()):
        try:
            from_uci(raw)
        except OSError as exc:
            logger.info("UCI download failed (%s); using the responsibly wheel", exc)
            from_wheel(raw)
    for name, h in MD5.items():
        if md5(raw / name) != h:
            logger.warning("%s checksum differs from the reference copy", name)
    n = prepare_adult(raw, args.data_dir / "adult.csv")
    logger.info("wrote %s with %d rows", args.data_dir / "adult.csv", n)
    return 0


if __name__ == "__main__":
    sys.exit(main())
