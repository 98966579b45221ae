"""Smoke checks for the _nasaudit extension and the CLI binary."""

import json
import math
import os
import subprocess
import sys

import _nasaudit as na


def test_dataset_and_attacks():
    data = na.synthetic("blobs", n=200, dim=2, classes=2, seed=7, noise=1.0)
    assert data.n == 200 and data.dim == 2 and data.class_count == 2
    assert len(data.labels) == 200 and data.poison_count == 0

    flipped = na.rlf(data, 0.5, seed=11)
    assert flipped.poison_count == 100
    changed = sum(1 for a, b in zip(data.labels, flipped.labels) if a != b)
    assert changed == 100

    noisy = na.gaussian_noise(data, 0.1, sigma=16.0, epsilon=16.0, seed=3)
    assert noisy.poison_count == 20
    for i, tampered in enumerate(noisy.poison_mask):
        delta = max(abs(a - b) for a, b in zip(data.features[i], noisy.features[i]))
        assert delta <= 16.0 + 1e-9
        assert tampered == (delta > 0.0)


def test_stats():
    out = na.welch_one_sided([5.0, 5.1, 4.9, 5.2], [1.0, 1.1, 0.9, 1.2])
    assert out["p"] < 1e-4 and out["t"] > 0
    flags = na.bh_fdr([0.001, 0.2, 0.02, 0.9], alpha=0.05)
    assert flags == [True, False, True, False]
    assert abs(na.delta_imp(97.0, 96.5) - 0.5) < 1e-12
    assert abs(na.incomplete_beta(2.0, 3.0, 1.0) - 1.0) < 1e-12


def test_genotype_and_kmeans():
    text = na.random_genotype(seed=42)
    assert "normal:" in text and "reduction:" in text
    dot = na.genotype_dot(text, title="smoke")
    assert dot.startswith("digraph") and dot.count("{") == dot.count("}")

    pts = [[0.0, 0.0], [0.1, 0.0], [10.0, 10.0], [10.1, 10.0]]
    model = na.kmeans(pts, 2, seed=1)
    a = model["assignments"]
    assert a[0] == a[1] and a[2] == a[3] and a[0] != a[2]
    assert model["inertia"] < 0.1


def test_hashing():
    digest = na.sha256_hex("abc")
    assert digest == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
    base = json.dumps({"name": "x", "seeds": 2})
    spaced = json.dumps({"seeds": 2, "name": "x"}, indent=4)
    assert na.manifest_hash(base) == na.manifest_hash(spaced)
    assert len(na.manifest_hash(base)) == 64


def test_cli_help():
    cli = os.environ.get("NASAUDIT_CLI")
    if not cli:
        return
    out = subprocess.run([cli, "--help"], capture_output=True, text=True, timeout=60)
    assert out.returncode == 0
    assert "audit" in out.stdout and "sensitivity" in out.stdout


def main():
    tests = [v for k, v in sorted(globals().items()) if k.startswith("test_")]
    for test in tests:
        test()
        print(f"ok {test.__name__}")
    print(f"{len(tests)} smoke tests passed")


if __name__ == "__main__":
    main()
