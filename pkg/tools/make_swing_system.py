"""Regenerate the bundled representative 10-machine reduced network.

Inertias use the generator H constants of the New England 39-bus case
(100 MVA base, 60 Hz). The Kron-reduced admittances are synthetic: a dense
symmetric susceptance pattern with weak transfer conductances. Mechanical
inputs are chosen so that the stored angles are an exact equilibrium.

    python tools/make_swing_system.py src/ddmd/data/ieee39_reduced.json
"""

import json
import sys

import numpy as np

from ddmd.numerics import Rng
from ddmd.systems import SwingParams, electrical_power, swing_rhs

H = np.array([500.0, 30.3, 35.8, 28.6, 26.0, 34.8, 26.4, 24.3, 34.5, 42.0])
OMEGA_S = 2 * np.pi * 60


def build(seed=39):
    rng = Rng(seed)
    n = H.size
    m = 2 * H / OMEGA_S
    d = 2.0 * np.sqrt(m) * 0.15
    d[0] = 2.0 * m[0]
    v = 1.0 + 0.05 * rng.uniform(n)
    b = np.zeros((n, n))
    g = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            bij = rng.uniform(low=0.3, high=2.0) if rng.uniform() < 0.6 else rng.uniform(low=0.02, high=0.1)
            b[i, j] = b[j, i] = bij
            g[i, j] = g[j, i] = 0.05 * bij * rng.uniform()
    g[np.diag_indices(n)] = 0.1 * rng.uniform(n)
    delta = np.concatenate([[0.0], rng.uniform(n - 1, -0.3, 0.3)])
    p_m = electrical_power(SwingParams(m, d, np.zeros(n), v, g, b), delta)
    params = SwingParams(m, d, p_m, v, g, b)
    params.meta = {
        "description": "Representative Kron-reduced 10-generator network with New England 39-bus inertias. "
        "Admittances are synthetic; not the published case data.",
        "units": "per unit, seconds, radians",
        "equilibrium": delta.tolist(),
    }
    return params, delta


def jacobian(params, x, eps=1e-7):
    f0 = swing_rhs(params, x)
    jac = np.empty((x.size, x.size))
    for k in range(x.size):
        dx = np.zeros_like(x)
        dx[k] = eps
        jac[:, k] = (swing_rhs(params, x + dx) - f0) / eps
    return jac


if __name__ == "__main__":
    params, delta = build()
    x = np.concatenate([delta, np.zeros(params.n_gen)])
    assert np.abs(swing_rhs(params, x)).max() < 1e-12
    ev = np.linalg.eigvals(jacobian(params, x))
    ev = ev[np.abs(ev) > 1e-6]
    print("max real part", ev.real.max(), "freqs Hz", np.sort(np.abs(ev.imag))[::2] / (2 * np.pi))
    if len(sys.argv) > 1:
        doc = params.to_dict()
        doc["equilibrium"] = doc["meta"].pop("equilibrium")
        with open(sys.argv[1], "w") as fh:
            json.dump(doc, fh, indent=1)
