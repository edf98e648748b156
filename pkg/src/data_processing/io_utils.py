import hashlib
import io
import json
import zipfile

import numpy as np
from packaging import version


# fixed member timestamp so identical arrays always give identical archive bytes
ZIP_DATE_TIME = (1980, 1, 1, 0, 0, 0)


def load_json(file):
    with open(file, "r", encoding="utf-8") as f:
        data = json.load(f)
    return data


def save_json(data, file):
    with open(file, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")


def file_fingerprint(file, chunk_size=1 << 20):
    """sha256 hex digest of the raw file bytes"""
    digest = hashlib.sha256()
    with open(file, "rb") as f:
        for chunk in iter(lambda: f.read(chunk_size), b""):
            digest.update(chunk)
    return digest.hexdigest()


def save_npz(file, arrays):
    """
        Write a dict of arrays as an uncompressed .npz archive readable by np.load.
        Unlike np.savez the output is byte-identical for identical inputs.
    """
    with zipfile.ZipFile(file, mode="w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asarray(arrays[name]), allow_pickle=False)
            info = zipfile.ZipInfo(f"{name}.npy", date_time=ZIP_DATE_TIME)
            info.external_attr = 0o644 << 16
            zf.writestr(info, buf.getvalue())


def load_npz(file):
    """Read every member eagerly so a damaged archive fails here and not later."""
    with np.load(file, allow_pickle=False) as data:
        return {k: data[k] for k in data.files}


def check_format_version(file, found, expected):
    """the major part of an archive's format version must match the one this code writes"""
    try:
        found_version = version.parse(found)
    except version.InvalidVersion:
        raise ValueError(f"{file}: unreadable format version '{found}', expected {expected}")
    if found_version.major != version.parse(expected).major:
        raise ValueError(f"{file}: format version {found} is not supported, expected {expected}")
