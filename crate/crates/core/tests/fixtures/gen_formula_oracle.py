"""Recompute the closed-form quantities at 50 significant digits.

Writes formula_oracle.json next to this script. Inputs are drawn as
binary64 values and converted exactly, so the Rust side sees the same
numbers. Run: python3 gen_formula_oracle.py
"""
import json
import os
import random

import mpmath as mp

mp.mp.dps = 50
rng = random.Random(20240611)


def log_uniform(lo, hi):
    return 10 ** rng.uniform(lo, hi)


def tau_of(d):
    target = mp.sqrt(2) / 2
    f = lambda t: mp.gammainc(mp.mpf(d) / 2, 0, t / 2, regularized=True) - target
    return mp.findroot(f, (mp.mpf("1e-6"), mp.mpf(4 * d + 40)), solver="anderson")


cases = []
for _ in range(100):
    n = rng.randint(1, 5)
    h = rng.randint(2, 512)
    d = rng.randint(1, 3072)
    b = rng.uniform(0.5, 30.0)
    gamma = log_uniform(-3, 1)
    delta = log_uniform(-4, -0.5)
    m = rng.randint(2, 100000)
    spectral = [log_uniform(-1, 1) for _ in range(n)]
    frobenius = [s * rng.uniform(1.0, 10.0) for s in spectral]
    loss = rng.uniform(0.0, 1.0)
    pa = rng.uniform(0.5, 1.0)
    pb = rng.uniform(0.0, 1.0 - pa)
    sigma = log_uniform(-2, 0.5)

    N, H, D, B, G = mp.mpf(n), mp.mpf(h), mp.mpf(d), mp.mpf(b), mp.mpf(gamma)
    S = [mp.mpf(s) for s in spectral]
    F = [mp.mpf(f) for f in frobenius]
    tau = tau_of(d)
    prod = mp.fprod(s ** ((N - 1) / N) for s in S)
    inner = G / (256 * N * mp.sqrt(H * mp.log(8 * N * H)) * mp.sqrt(tau) * prod) + B**2 / (4 * tau)
    psi = (mp.sqrt(inner) - B / (2 * mp.sqrt(tau))) ** 2
    phi = mp.fsum((f / s) ** 2 for f, s in zip(F, S)) / (psi / mp.fprod(s**2 for s in S) ** (1 / N))
    kl = mp.fsum(f**2 for f in F) / (2 * psi)
    bound = mp.mpf(loss) + 4 * mp.sqrt((kl + mp.log(6 * m / mp.mpf(delta))) / (m - 1))
    gap = (mp.sqrt(mp.mpf(pa)) - mp.sqrt(mp.mpf(pb))) ** 2
    radius = mp.mpf(sigma) * mp.sqrt(-2 * mp.log(1 - gap))
    eps_x = -mp.log(1 - gap) * 2 * psi

    cases.append(
        {
            "inputs": {
                "gamma": gamma, "delta": delta, "m": m, "b": b, "n": n, "h": h, "d": d,
                "per_layer_spectral": spectral, "per_layer_frobenius": frobenius,
            },
            "empirical_margin_loss": loss,
            "pa": pa,
            "pb": pb,
            "sigma": sigma,
            "expected": {
                k: mp.nstr(v, 30)
                for k, v in [
                    ("tau", tau), ("psi", psi), ("phi", phi), ("kl", kl),
                    ("bound", bound), ("radius", radius), ("eps_x", eps_x),
                ]
            },
        }
    )

path = os.path.join(os.path.dirname(os.path.abspath(__file__)), "formula_oracle.json")
with open(path, "w") as fh:
    json.dump({"digits": 50, "cases": cases}, fh, indent=1)
    fh.write("\n")
print(f"wrote {len(cases)} cases to {path}")
