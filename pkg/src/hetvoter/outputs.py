"""All-or-nothing output directories.

Files are produced inside a private staging directory and moved into place
only once every one of them exists, so a failed run leaves the output
directory untouched. The manifest goes last.
"""
from __future__ import annotations

import hashlib
import json
import os
import shutil
import tempfile
from pathlib import Path

__all__ = ["Staging", "sha256", "dump_json"]


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def dump_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, allow_nan=False)
        fh.write("\n")


class Staging:
    """Context manager handing out staged paths for files of ``out_dir``.

    >>> with Staging(out) as st:
    ...     traj.to_csv(st.path("trajectory.csv"))
    ...     st.commit(manifest_fn)   # doctest: +SKIP
    """

    def __init__(self, out_dir):
        self.out_dir = Path(out_dir)
        self.names: list[str] = []
        self._tmp = None

    def __enter__(self):
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self._tmp = Path(tempfile.mkdtemp(prefix=".staging-", dir=self.out_dir))
        return self

    def path(self, name: str) -> Path:
        if name not in self.names:
            self.names.append(name)
        return self._tmp / name

    def commit(self, manifest) -> dict:
        """Move staged files into place, then write ``manifest(checksums)``
        as ``manifest.json``. Returns the checksums."""
        sums = {n: sha256(self._tmp / n) for n in self.names}
        for n in self.names:
            os.replace(self._tmp / n, self.out_dir / n)
        mpath = self._tmp / "manifest.json"
        dump_json(manifest(sums), mpath)
        os.replace(mpath, self.out_dir / "manifest.json")
        return sums

    def __exit__(self, *exc):
        shutil.rmtree(self._tmp, ignore_errors=True)
        return False
