#!/usr/bin/env python3
"""Writes the stiff hanging-chain benchmark scene.

The chain hangs from particle 0 along -z and starts swinging as a rigid
pendulum with angular speed W about the y axis. Spring extensions carry the
weight below them plus the centripetal load, so the initial state sits on the
slow motion and the fast axial modes start (nearly) at rest.
"""
import argparse
import json


def chain(n, k, rest, mass, g, w):
    r = [rest * p for p in range(n)]
    for _ in range(50):
        nr = [0.0] * n
        for p in range(1, n):
            tension = sum(mass * (g + w * w * r[q]) for q in range(p, n))
            nr[p] = nr[p - 1] + rest + tension / k
        r = nr
    particles = [
        {"mass": mass, "position": [0.0, 0.0, -r[p]], "velocity": [w * r[p], 0.0, 0.0],
         "fixed": p == 0}
        for p in range(n)
    ]
    springs = [{"i": p, "j": p + 1, "k": k, "rest_length": rest} for p in range(n - 1)]
    return particles, springs


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=100)
    ap.add_argument("--k", type=float, default=1e6)
    ap.add_argument("--rest", type=float, default=0.01)
    ap.add_argument("--mass", type=float, default=0.01)
    ap.add_argument("--omega", type=float, default=1.0, help="initial swing rate, rad/s")
    ap.add_argument("--name", default="chain100-stiff")
    ap.add_argument("out")
    a = ap.parse_args()
    g = 9.81
    particles, springs = chain(a.n, a.k, a.rest, a.mass, g, a.omega)
    scene = {"name": a.name, "particles": particles, "springs": springs,
             "external": {"gravity": [0.0, 0.0, -g], "drag": 0.0}}
    with open(a.out, "w") as f:
        json.dump(scene, f, indent=1)
        f.write("\n")


if __name__ == "__main__":
    main()
