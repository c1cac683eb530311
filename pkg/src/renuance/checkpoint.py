"""Unified checkpoint files: named parameter sections + config header.

The container is a zip with pinned timestamps and sorted entries, so identical
contents produce identical bytes; reruns of a seeded experiment can be
verified by file checksum alone. Arrays are stored in .npy format, the config
as canonical JSON, and a sha256 over all parameter bytes is embedded and
verified on load.
"""

from __future__ import annotations

import hashlib
import io
import json
import zipfile
from pathlib import Path

import numpy as np

_FIXED_DATE = (1980, 1, 1, 0, 0, 0)


def params_checksum(sections: dict[str, dict[str, np.ndarray]]) -> str:
    digest = hashlib.sha256()
    for section in sorted(sections):
        for name in sorted(sections[section]):
            digest.update(f"{section}/{name}".encode())
            digest.update(np.ascontiguousarray(sections[section][name]).tobytes())
    return digest.hexdigest()


def _write_entry(zf: zipfile.ZipFile, name: str, payload: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_FIXED_DATE)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o600 << 16
    zf.writestr(info, payload)


def write_checkpoint(
    path: str | Path,
    sections: dict[str, dict[str, np.ndarray]],
    config: dict,
) -> str:
    """Write sections + config; returns the embedded parameter checksum."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    checksum = params_checksum(sections)
    header = dict(config)
    header["params_checksum"] = checksum
    entries: list[tuple[str, bytes]] = [
        ("config.json", json.dumps(header, sort_keys=True, indent=2).encode("utf-8"))
    ]
    for section in sorted(sections):
        for name in sorted(sections[section]):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(sections[section][name]))
            entries.append((f"params/{section}/{name}.npy", buf.getvalue()))
    with zipfile.ZipFile(path, "w") as zf:
        for name, payload in entries:
            _write_entry(zf, name, payload)
    return checksum


def read_checkpoint(path: str | Path) -> tuple[dict[str, dict[str, np.ndarray]], dict]:
    """Load sections + config header, verifying the embedded checksum."""
    path = Path(path)
    sections: dict[str, dict[str, np.ndarray]] = {}
    with zipfile.ZipFile(path, "r") as zf:
        config = json.loads(zf.read("config.json").decode("utf-8"))
        for name in zf.namelist():
            if not name.startswith("params/") or not name.endswith(".npy"):
                continue
            _, section, param = name[:-len(".npy")].split("/", 2)
            arr = np.lib.format.read_array(io.BytesIO(zf.read(name)))
            sections.setdefault(section, {})[param] = arr
    expected = config.get("params_checksum")
    actual = params_checksum(sections)
    if expected != actual:
        raise ValueError(f"checkpoint {path} failed checksum verification")
    return sections, config


def file_sha256(path: str | Path) -> str:
    digest = hashlib.sha256()
    digest.update(Path(path).read_bytes())
    return digest.hexdigest()
