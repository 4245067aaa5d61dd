#!/usr/bin/env python3
"""Fetch the UCI benchmark files and write them under data/.

The raw files are taken from PyPI wheels that bundle them, so only a
package index is needed:

    german      imbalanced_databases  german.data-numeric.txt   1 -> +1, 2 -> -1
    heart       keel_ds               heart.dat                 2 -> +1, 1 -> -1
    ionosphere  Orange3               ionosphere.tab            g -> +1, b -> -1
    satimage    imbalanced_databases  sat.trn.txt               raw classes, csv

Usage: scripts/prepare_datasets.py [--out data] [--wheels DIR]
"""

import argparse
import pathlib
import subprocess
import sys
import tempfile
import zipfile

SOURCES = {
    "imbalanced_databases": "imbalanced_databases==0.1.1",
    "keel_ds": "keel_ds==0.2.5",
    "orange3": "Orange3==3.39.0",
}


def wheel_member(wheels, package, suffix):
    for whl in sorted(wheels.glob("*.whl")):
        if not whl.name.lower().startswith(package):
            continue
        with zipfile.ZipFile(whl) as z:
            for name in z.namelist():
                if name.endswith(suffix):
                    return z.read(name).decode("utf-8")
    raise SystemExit(f"{suffix} not found in any {package} wheel under {wheels}")


def fetch(wheels):
    for package, req in SOURCES.items():
        if any(w.name.lower().startswith(package) for w in wheels.glob("*.whl")):
            continue
        subprocess.run(
            [sys.executable, "-m", "pip", "download", "--no-deps", "-d", str(wheels), req],
            check=True,
        )


def fmt(v):
    v = float(v)
    return str(int(v)) if v.is_integer() else repr(v)


def libsvm_line(label, values):
    feats = " ".join(f"{i}:{fmt(v)}" for i, v in enumerate(values, 1) if float(v) != 0.0)
    return f"{label} {feats}".rstrip()


def german(text):
    out = []
    for line in text.splitlines():
        cols = line.split()
        if cols:
            out.append(libsvm_line("+1" if cols[24] == "1" else "-1", cols[:24]))
    return out


def heart(text):
    out = []
    for line in text.splitlines():
        if not line.strip() or line.startswith("@"):
            continue
        cols = [c.strip() for c in line.split(",")]
        out.append(libsvm_line("+1" if cols[13] == "2" else "-1", cols[:13]))
    return out


def ionosphere(text):
    out = []
    for line in text.splitlines()[3:]:
        cols = line.rstrip("\n").split("\t")
        if len(cols) >= 35:
            out.append(libsvm_line("+1" if cols[34] == "g" else "-1", cols[:34]))
    return out


def satimage(text):
    rows = []
    for line in text.splitlines():
        cols = line.split()
        if cols:
            rows.append(",".join(cols))
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default=str(pathlib.Path(__file__).resolve().parent.parent / "data"))
    ap.add_argument("--wheels", help="directory of already downloaded wheels")
    args = ap.parse_args()

    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        wheels = pathlib.Path(args.wheels or tmp)
        fetch(wheels)
        files = {
            "german.libsvm": german(wheel_member(wheels, "imbalanced_databases", "german.data-numeric.txt")),
            "heart.libsvm": heart(wheel_member(wheels, "keel_ds", "balanced/raw/heart.dat")),
            "ionosphere.libsvm": ionosphere(wheel_member(wheels, "orange3", "datasets/ionosphere.tab")),
            "satimage.csv": satimage(wheel_member(wheels, "imbalanced_databases", "sat.trn.txt")),
        }
    for name, lines in files.items():
        (out / name).write_text("\n".join(lines) + "\n")
        print(f"{out / name}: {len(lines)} rows")


if __name__ == "__main__":
    main()
