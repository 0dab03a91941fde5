#!/usr/bin/env python3
"""Re-derive the numbers in report.json from the artifacts next to it.

usage: check_report.py OUT_DIR

Prints one line per check and exits 1 if any disagrees.
"""
import csv
import json
import sys
from collections import deque
from pathlib import Path

import numpy as np


def read_u(path):
    head, coeffs, in_coeffs = {}, [], False
    for line in path.read_text().splitlines()[1:]:
        if in_coeffs:
            re, im = line.split(",")
            coeffs.append(complex(float(re), float(im)))
        elif line == "coeffs":
            in_coeffs = True
        else:
            key, _, value = line.partition(" ")
            head[key] = value
    return head, np.array(coeffs)


def parse_descriptor(s):
    family, *fields = s.split()
    kv = dict(f.split("=", 1) for f in fields)
    center = np.array([float(c) for c in kv["center"].split(",")])
    return family, int(kv["n"]), float(kv["period"]), float(kv["gauss"]), center


def eval_dictionary(desc, x):
    family, n, period, gauss, center = parse_descriptor(desc)
    y = np.asarray(x, dtype=float) - center
    ks = np.arange(-(n - 1), n)
    grids = np.meshgrid(*([ks] * len(y)), indexing="ij")
    k = np.stack([g.ravel() for g in grids], axis=1)
    theta = 2 * np.pi * (k @ y) / period
    if family == "complex_fourier_nd":
        return np.exp(1j * theta)
    return np.cos(theta) * np.exp(-(y @ y) / gauss)


def read_csv(path):
    with path.open() as f:
        rows = list(csv.reader(f))
    return rows[0], np.array(rows[1:], dtype=float)


def flood(values, res, seed, c):
    inside = np.zeros(values.size, dtype=bool)
    shape = tuple(res)
    if values[seed] < c:
        return inside
    inside[seed] = True
    todo = deque([seed])
    while todo:
        idx = np.unravel_index(todo.popleft(), shape)
        for d in range(len(shape)):
            for step in (-1, 1):
                nb = list(idx)
                nb[d] += step
                if 0 <= nb[d] < shape[d]:
                    j = np.ravel_multi_index(nb, shape)
                    if not inside[j] and values[j] >= c:
                        inside[j] = True
                        todo.append(j)
    return inside


def main():
    out = Path(sys.argv[1])
    report = json.loads((out / "report.json").read_text())
    results = []

    def check(name, got, want, tol=1e-12):
        ok = got is not None and want is not None and abs(got - want) <= tol * max(1.0, abs(want))
        results.append(ok)
        print(f"{'ok  ' if ok else 'FAIL'} {name}: report {want}, artifacts {got}")

    head, coeffs = read_u(out / "u_zk.txt")
    residuals = [float(v) for v in head["residuals"].split()]
    check("iterations", int(head["iterations"]), report["iterations"], 0)
    check("final residual", residuals[-1], report["final_residual"])
    check("U at equilibrium", float(np.real(eval_dictionary(head["dictionary"], report["x_eq"]) @ coeffs)),
          report["u_at_equilibrium"], 1e-9)

    grid = json.loads((out / "grid.json").read_text())
    cols, mask_rows = read_csv(out / "mask.csv")
    n = report["dim"]
    values, mask = mask_rows[:, 2 * n], mask_rows[:, 2 * n + 1].astype(bool)
    check("volume fraction", float(mask.mean()), report["volume_fraction"])
    refill = flood(values, grid["resolution"], grid["seed"], grid["threshold"])
    check("flood fill cells", int(refill.sum()), int(mask.sum()), 0)

    fcols, field = read_csv(out / "field.csv")
    col = {name: i for i, name in enumerate(fcols)}
    u_re, u_im = field[:, col["u"]], field[:, col["u_imag"]]
    check("imaginary residue", float(np.abs(u_im).max() / np.abs(u_re).max()), report["imag_residue"])

    centers = field[:, :n]
    dist = np.linalg.norm(centers - np.array(report["x_eq"]), axis=1)
    eligible = field[:, col["mask"]].astype(bool) & (dist > report["exclusion_radius"])
    ok = eligible & (field[:, col["lie"]] > report["margin"])
    check("eligible cells", int(eligible.sum()), report["eligible_cells"], 0)
    check("verified cells", int(ok.sum()), report["verified_cells"], 0)
    if eligible.any():
        check("verified fraction", float(ok.sum() / eligible.sum()), report["verified_fraction"])
    if "lie_smooth" in col and report.get("smooth"):
        ok_s = eligible & (field[:, col["lie_smooth"]] > report["margin"])
        check("smooth verified fraction", float(ok_s.sum() / eligible.sum()), report["smooth"]["verified_fraction"])

    sys.exit(0 if all(results) else 1)


if __name__ == "__main__":
    main()
