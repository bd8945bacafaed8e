#!/usr/bin/env python3
"""Seeded generator for the synthetic trial files in this directory.

These are NOT field data. They mimic the shape of a two-year, five-location
melon trial and a single-season oat trial so the pipeline, CLI and service
can be exercised end to end. Rerunning reproduces the files byte for byte.
"""
import csv
import pathlib

import numpy as np

HERE = pathlib.Path(__file__).resolve().parent


def melon_like(rng):
    genotypes = [f"Gen{i}" for i in range(1, 11)]
    locations = ["FL", "TX", "CL", "KN", "SC"]
    years = ["2009", "2010"]
    g = rng.normal(0, 6, len(genotypes))
    g[2] += 12  # one clearly superior entry
    l = rng.normal(0, 10, len(locations))
    y = rng.normal(0, 2, len(years))
    gl = rng.normal(0, 3, (len(genotypes), len(locations)))
    gy = rng.normal(0, 1, (len(genotypes), len(years)))
    ly = rng.normal(0, 2, (len(locations), len(years)))
    gly = rng.normal(0, 1.5, (len(genotypes), len(locations), len(years)))
    rows = []
    for yi, yr in enumerate(years):
        for li, lc in enumerate(locations):
            reps = rng.normal(0, 1.5, 4)
            for r in range(4):
                for gi, gen in enumerate(genotypes):
                    v = 60 + g[gi] + l[li] + y[yi] + gl[gi, li] + gy[gi, yi] + ly[li, yi]
                    v += gly[gi, li, yi] + reps[r] + rng.normal(0, 4)
                    rows.append([yr, lc, r + 1, gen, f"{v:.2f}"])
    return ["YR", "LC", "RP", "CLT", "MY"], rows


def oats_like(rng):
    genotypes = [f"G{i:02d}" for i in range(1, 25)]
    envs = ["A1", "A2", "B1", "B2", "C1", "C2"]
    g = rng.normal(0, 8, len(genotypes))
    e = rng.normal(0, 15, len(envs))
    # two multiplicative terms plus noise
    a1, b1 = rng.normal(0, 1, len(genotypes)), rng.normal(0, 1, len(envs))
    a2, b2 = rng.normal(0, 1, len(genotypes)), rng.normal(0, 1, len(envs))
    rows = []
    for ei, env in enumerate(envs):
        reps = rng.normal(0, 3, 3)
        for r in range(3):
            for gi, gen in enumerate(genotypes):
                v = 90 + g[gi] + e[ei] + 6 * a1[gi] * b1[ei] + 3 * a2[gi] * b2[ei]
                v += reps[r] + rng.normal(0, 5)
                rows.append([env, r + 1, gen, f"{v:.1f}"])
    return ["LC", "RP", "CLT", "MY"], rows


def write(name, header, rows):
    with open(HERE / name, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


if __name__ == "__main__":
    write("melon_like.csv", *melon_like(np.random.default_rng(20240611)))
    write("oats_like.csv", *oats_like(np.random.default_rng(7)))
