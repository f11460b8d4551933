"""Byte-reproducible ``.npz`` archives.

``numpy.savez`` stamps members with the current time; these helpers write a
stored (uncompressed) zip with a fixed timestamp and sorted member order, so
equal contents always give equal bytes. Files stay readable by ``numpy.load``.
"""

from __future__ import annotations

import io
import zipfile

import numpy as np

_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


def npy_bytes(arr) -> bytes:
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.asarray(arr), allow_pickle=False)
    return buf.getvalue()


def write_archive(path, members: dict[str, bytes]) -> None:
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(members):
            info = zipfile.ZipInfo(name, date_time=_ZIP_DATE)
            info.external_attr = 0o644 << 16
            zf.writestr(info, members[name])


def write_npz(path, arrays: dict[str, np.ndarray], extra: dict[str, bytes] | None = None) -> None:
    members = {f"{k}.npy": npy_bytes(v) for k, v in arrays.items()}
    members.update(extra or {})
    write_archive(path, members)


def read_archive(path) -> tuple[dict[str, np.ndarray], dict[str, bytes]]:
    """Returns ``(arrays keyed without .npy, other members as raw bytes)``."""
    arrays, other = {}, {}
    with zipfile.ZipFile(path) as zf:
        for name in zf.namelist():
            raw = zf.read(name)
            if name.endswith(".npy"):
                arrays[name[:-4]] = np.lib.format.read_array(io.BytesIO(raw), allow_pickle=False)
            else:
                other[name] = raw
    return arrays, other
