"""Rebuild the files under data/ from published Python package archives.

The regression tables and the mushroom table ship inside these archives
(fetch them with ``pip download --no-deps <name>==<version> -d DIR``):

    mlxtend-0.24.0-py3-none-any.whl     boston_housing.csv, autompg.csv.gz
    pydataset-0.2.0.tar.gz              Ecdat/Clothing.csv, MASS/gilgais.csv
    scikit-learn (installed)            diabetes, unscaled
    xgboost-sys-0.1.2.crate (crates.io) agaricus-lepiota.data, copied verbatim

Usage: python scripts/prepare_data.py ARCHIVE_DIR [OUT_DIR]
"""

import csv
import gzip
import io
import sys
import tarfile
import zipfile
from pathlib import Path


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    print(f"{path}: {len(rows)} rows, {len(header)} columns")


def boston(whl, out):
    text = zipfile.ZipFile(whl).read("mlxtend/data/data/boston_housing.csv").decode()
    header = ["CRIM", "ZN", "INDUS", "CHAS", "NOX", "RM", "AGE", "DIS", "RAD", "TAX", "PTRATIO",
              "B", "LSTAT", "MEDV"]
    rows = [[repr(float(v)) for v in line.split(",")] for line in text.split("\n") if line.strip()]
    write_csv(out / "boston.csv", header, rows)


def autompg(whl, out):
    raw = gzip.decompress(zipfile.ZipFile(whl).read("mlxtend/data/data/autompg.csv.gz")).decode()
    header = ["cylinders", "displacement", "horsepower", "weight", "acceleration", "model_year",
              "origin", "mpg"]
    rows = []
    for rec in csv.reader(io.StringIO(raw)):
        if rec:
            rows.append(rec[:7] + [rec[8]])  # drop the car name
    write_csv(out / "autompg.csv", header, rows)


def pydataset_table(sdist, member, drop, target):
    outer = tarfile.open(sdist)
    res = outer.extractfile("pydataset-0.2.0/pydataset/resources.tar.gz")
    inner = tarfile.open(fileobj=res)
    recs = list(csv.reader(io.StringIO(inner.extractfile(member).read().decode())))
    header = recs[0][1:]
    body = [r[1:] for r in recs[1:]]
    keep = [i for i, h in enumerate(header) if h not in drop and h != target]
    t = header.index(target)
    return [header[i] for i in keep] + [target], [[r[i] for i in keep] + [r[t]] for r in body]


def diabetes(out):
    from sklearn.datasets import load_diabetes

    d = load_diabetes(scaled=False)
    header = list(d.feature_names) + ["progression"]
    rows = [[repr(float(v)) for v in x] + [repr(float(y))] for x, y in zip(d.data, d.target)]
    write_csv(out / "diabetes.csv", header, rows)


def mushroom(crate, out):
    member = "xgboost-sys-0.1.2/xgboost/demo/binary_classification/agaricus-lepiota.data"
    data = tarfile.open(crate).extractfile(member).read()
    (out / "mushroom.data").write_bytes(data)
    print(f"{out / 'mushroom.data'}: {len(data.splitlines())} rows")


def main():
    src = Path(sys.argv[1])
    out = Path(sys.argv[2]) if len(sys.argv) > 2 else Path(__file__).resolve().parents[1] / "data"
    (out / "uci").mkdir(parents=True, exist_ok=True)
    mlx = next(src.rglob("mlxtend-*.whl"))
    boston(mlx, out / "uci")
    autompg(mlx, out / "uci")
    sdist = next(src.rglob("pydataset-*.tar.gz"))
    h, r = pydataset_table(sdist, "resources/rdata/csv/Ecdat/Clothing.csv", {"sales"}, "tsales")
    write_csv(out / "uci" / "clothing.csv", h, r)
    h, r = pydataset_table(sdist, "resources/rdata/csv/MASS/gilgais.csv", set(), "c80")
    write_csv(out / "uci" / "gilgais.csv", h, r)
    diabetes(out / "uci")
    mushroom(next(src.rglob("xgboost-sys-*.crate")), out)


if __name__ == "__main__":
    main()
