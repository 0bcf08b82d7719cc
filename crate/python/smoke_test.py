"""Smoke test for the flexpd_py extension.

Build and install first:
    pip install --no-build-isolation ./crates/python
"""

import math

import flexpd_py as fp


def main():
    net = fp.Network("ring", 6)
    obj = fp.Objective.quadratic([1.0, 2.0, 3.0, 4.0, 5.0, 6.0], [[float(i)] for i in range(6)])
    print(net, "m =", obj.m, "L =", obj.l)

    x_star = fp.reference_solution(net, obj)
    avg = sum(c * b for c, b in zip(range(1, 7), range(6))) / 21.0
    assert all(abs(row[0] - avg) < 1e-12 for row in x_star)

    cert = fp.certify("C", net, obj, 3)
    assert cert.admissible and cert.alpha > 0 and cert.beta > 0
    cnet = cert.network(net)
    expected = fp.c_alpha_bound(obj.l, obj.m, cnet.rho_b, 3)
    print(cert)

    out = fp.solve("C", cnet, obj, cert.alpha, cert.beta, 3, epsilon=1e-6)
    assert out["converged_at"] is not None, "certified run did not converge"
    assert out["rel_error"][-1] <= 1e-6
    assert all(abs(row[0] - avg) < 1e-4 * max(1.0, abs(avg)) for row in out["x"])
    assert cert.alpha < expected * (1 + 1e-12)
    print("FlexPD-C(T=3) converged at iteration", out["converged_at"])

    try:
        fp.certify("F", net, obj, 2)
    except ValueError as e:
        print("F with T=2:", e)
    else:
        raise AssertionError("F certificate should be empty for T > 1")

    log = fp.Objective.logistic(5, kappa=0.01, samples=100, features=3)
    g = log.grad([[0.0] * 3 for _ in range(5)])
    assert len(g) == 5 and all(math.isfinite(v) for row in g for v in row)
    print("smoke test passed")


if __name__ == "__main__":
    main()
