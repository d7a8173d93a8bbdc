"""Regenerate ``tests/data/oracle_values.json`` from the brute-force oracles.

Run ``python3 tests/freeze_oracles.py``; takes a few minutes. Only geometry
from the library (initial mesh vertices/triangles) is used as input.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np

HERE = Path(__file__).parent
sys.path.insert(0, str(HERE))

from oracles import (  # noqa: E402
    polygon_operator_oracle,
    triangle_quadrature,
    vertex_graded_triangle_quadrature,
)


def random_polygon(seed=1, n=10):
    rng = np.random.default_rng(seed)
    ang = np.sort(rng.uniform(0, 2 * np.pi, n))
    rad = rng.uniform(0.15, 0.4, n)
    return np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=1)


def corner_grad(x, alpha=2 / 3):
    z = x[..., 0] + 1j * x[..., 1]
    arg = np.mod(np.angle(z), 2 * np.pi)
    dF = alpha * np.abs(z) ** (alpha - 1) * np.exp(1j * (alpha - 1) * arg)
    return np.stack([dF.imag, dF.real], axis=-1)


def corner_value(x, alpha=2 / 3):
    z = x[..., 0] + 1j * x[..., 1]
    arg = np.mod(np.angle(z), 2 * np.pi)
    return np.abs(z) ** alpha * np.sin(alpha * arg)


def h1_seminorm_oracle(vertices, triangles, U):
    total = 0.0
    for tri in triangles:
        p = vertices[tri]
        B = np.array([p[1] - p[0], p[2] - p[0]])
        gU = np.linalg.solve(B, np.array([U[tri[1]] - U[tri[0]], U[tri[2]] - U[tri[0]]]))

        def integrand(x, gU=gU):
            d = corner_grad(x) - gU
            return np.sum(d * d, axis=-1)

        hit = [k for k in range(3) if np.allclose(p[k], 0.0)]
        if hit:
            k = hit[0]
            order = [k, (k + 1) % 3, (k + 2) % 3]
            total += vertex_graded_triangle_quadrature(integrand, p[order])
        else:
            total += triangle_quadrature(integrand, p)
    return float(np.sqrt(total))


def main():
    sys.path.insert(0, str(HERE.parent / "src"))
    from fembem.mesh import build_initial

    out = {}
    P = random_polygon()
    V, K = polygon_operator_oracle(P)
    out["polygon"] = P.tolist()
    out["V"] = V.tolist()
    out["K"] = K.tolist()

    tri = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    # int_T x * eta_i with eta_i the barycentric hat of vertex i
    hats = [lambda x: 1 - x[..., 0] - x[..., 1], lambda x: x[..., 0], lambda x: x[..., 1]]
    out["load_f_x_unit_triangle"] = [triangle_quadrature(lambda x, h=h: x[..., 0] * h(x), tri) for h in hats]

    m = build_initial("LShape")
    U_int = corner_value(m.vertices)
    out["lshape_h1_semi_U0"] = h1_seminorm_oracle(m.vertices, m.triangles, np.zeros(m.n_vertices))
    out["lshape_h1_semi_interp"] = h1_seminorm_oracle(m.vertices, m.triangles, U_int)

    (HERE / "data").mkdir(exist_ok=True)
    (HERE / "data" / "oracle_values.json").write_text(json.dumps(out, indent=1))
    print("written", HERE / "data" / "oracle_values.json")


if __name__ == "__main__":
    main()
