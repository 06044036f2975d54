"""Directory bundles: a flat ``manifest.txt`` plus VTB arrays."""

import os

from . import vtb

MANIFEST = "manifest.txt"


class BundleError(ValueError):
    pass


def write_manifest(directory, entries):
    lines = []
    for key, value in entries.items():
        text = str(value)
        if "\n" in text or "=" in key:
            raise BundleError(f"manifest entry {key!r} cannot be written flat")
        lines.append(f"{key}={text}\n")
    with open(os.path.join(directory, MANIFEST), "w", encoding="utf-8") as fh:
        fh.writelines(lines)


def read_manifest(directory):
    path = os.path.join(directory, MANIFEST)
    if not os.path.isfile(path):
        raise BundleError(f"{directory}: no {MANIFEST} (not a bundle directory)")
    entries = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise BundleError(f"{path}:{lineno}: expected key=value")
            key, value = line.split("=", 1)
            entries[key] = value
    return entries


def save_arrays(directory, arrays):
    for name, arr in arrays.items():
        vtb.save(os.path.join(directory, f"{name}.vtb"), arr)


def load_array(directory, name):
    path = os.path.join(directory, f"{name}.vtb")
    if not os.path.isfile(path):
        raise BundleError(f"{directory}: missing array {name}.vtb")
    return vtb.load(path)


def dims(text):
    return tuple(int(v) for v in text.split(","))


def fmt_dims(d):
    return ",".join(str(int(v)) for v in d)
