"""Time-stamped, hash-locked run manifests.

A ``pre`` manifest records hashes of the configs (and optionally data
files) before anything is fitted. A ``post`` manifest copies the pre
manifest verbatim, adds the pre manifest's own hash, and the hashes of
every output file.
"""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
from pathlib import Path

ENGINE_VERSION = "mrp-engine 0.1.0"
PRE, POST = "pre", "post"


class ManifestError(Exception):
    pass


class StagingError(ManifestError):
    pass


class IntegrityError(ManifestError):
    pass


def canonical_json(obj) -> str:
    """Sorted keys, no whitespace variation, floats via repr."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True, allow_nan=False) + "\n"


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def utc_now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _is_file(item):
    try:
        return Path(item).is_file()
    except (OSError, ValueError):  # long or NUL-containing text
        return False


def _hash_entry(item):
    """A config is a path to a file or raw text/bytes."""
    if isinstance(item, (str, Path)) and _is_file(item):
        return {"path": Path(item).name, "sha256": sha256_file(item)}
    if isinstance(item, bytes):
        return {"sha256": sha256_bytes(item)}
    if isinstance(item, str):
        return {"sha256": sha256_bytes(item.encode("utf-8"))}
    raise StagingError(f"config {item!r} is neither an existing file nor text")


def write_manifest(stage, path, configs=None, outputs=None, pre_manifest=None, statement="",
                   data_files=None, timestamp=None, engine_version=ENGINE_VERSION):
    """Write a pre- or post-stage manifest to ``path`` and return it as a dict.

    ``configs``/``data_files``: name -> file path or text; ``outputs``: name ->
    file path; ``timestamp`` is injectable for reproducibility tests.
    """
    path = Path(path)
    stamp = timestamp or utc_now()
    if stage == PRE:
        if not configs:
            raise StagingError("pre-stage manifest needs at least one config")
        manifest = {
            "stage": PRE,
            "timestamp": stamp,
            "engine_version": engine_version,
            "engine_version_sha256": sha256_bytes(engine_version.encode("utf-8")),
            "configs": {k: _hash_entry(v) for k, v in sorted(configs.items())},
            "data": {k: _hash_entry(v) for k, v in sorted((data_files or {}).items())},
            "statement": statement,
        }
    elif stage == POST:
        if pre_manifest is None or not Path(pre_manifest).is_file():
            raise StagingError("post-stage manifest requires an existing pre-stage manifest")
        pre_bytes = Path(pre_manifest).read_bytes()
        pre = json.loads(pre_bytes)
        if pre.get("stage") != PRE:
            raise StagingError(f"{pre_manifest} is not a pre-stage manifest")
        manifest = {
            "stage": POST,
            "timestamp": stamp,
            "pre": pre,
            "pre_sha256": sha256_bytes(pre_bytes),
            "outputs": {k: {"path": Path(v).name, "sha256": sha256_file(v)} for k, v in sorted((outputs or {}).items())},
        }
    else:
        raise StagingError(f"stage must be 'pre' or 'post', not {stage!r}")
    path.write_text(canonical_json(manifest), encoding="utf-8")
    return manifest


def verify_manifest(path, configs=None, outputs=None, pre_manifest=None, data_files=None):
    """Re-hash the referenced inputs and raise IntegrityError on any mismatch.

    For a post manifest, ``pre_manifest`` (if given) must hash to the recorded
    value, and every file in ``outputs`` must match. ``configs`` are checked
    against the embedded pre manifest. Returns the list of checked names.
    """
    m = json.loads(Path(path).read_text(encoding="utf-8"))
    checked = []
    if m.get("stage") == POST:
        pre = m["pre"]
        if sha256_bytes(canonical_json(pre).encode("utf-8")) != m["pre_sha256"]:
            raise IntegrityError("embedded pre manifest does not match its recorded hash")
        if pre_manifest is not None:
            if sha256_file(pre_manifest) != m["pre_sha256"]:
                raise IntegrityError(f"pre manifest {pre_manifest} was modified after the run")
            checked.append("pre_manifest")
        for name, p in sorted((outputs or {}).items()):
            rec = m["outputs"].get(name)
            if rec is None:
                raise IntegrityError(f"output {name!r} not recorded in manifest")
            if sha256_file(p) != rec["sha256"]:
                raise IntegrityError(f"output {name!r} hash mismatch")
            checked.append(name)
    elif m.get("stage") == PRE:
        pre = m
    else:
        raise StagingError(f"{path} has no valid stage")
    for section, items in (("configs", configs), ("data", data_files)):
        for name, item in sorted((items or {}).items()):
            rec = pre[section].get(name)
            if rec is None:
                raise IntegrityError(f"{section[:-1] if section == 'configs' else 'data'} {name!r} not recorded")
            if _hash_entry(item)["sha256"] != rec["sha256"]:
                raise IntegrityError(f"{name!r} changed since the pre-stage manifest")
            checked.append(name)
    return checked
