"""Smoke test for the pyfwdvar extension module.

Build with `cargo build --release -p pyfwdvar`, copy
target/release/libpyfwdvar.so to python/pyfwdvar.so, then run this script.
"""

import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import pyfwdvar as fv


def main():
    print("pyfwdvar", fv.__version__)

    assert math.isclose(fv.kernel_eval("exponential", [2.0, 0.5], 1.0), 2.0 * math.exp(-0.5))
    g = fv.kernel_grad("exponential", [2.0, 0.5], 1.0)
    assert math.isclose(g[0], math.exp(-0.5)) and math.isclose(g[1], -2.0 * math.exp(-0.5))

    s = fv.simulate_surface("exponential", [1.0, -1.0], n=300, seed=7)
    assert (s.n, s.d) == (300, math.ceil(300 ** 0.95))
    assert s.validate(strict=True) == []
    again = fv.simulate_surface("exponential", [1.0, -1.0], n=300, seed=7)
    assert s.values() == again.values()

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "surface.csv")
        s.write(path)
        assert fv.Surface.read(path).values() == s.values()

    u0 = fv.contrast_u(s, "exponential", [1.0, -1.0])
    assert math.isfinite(u0)
    assert len(fv.sigma_hat(s, "exponential", [1.0, -1.0], 0)) == s.d

    est = fv.estimate(s, "exponential", [0.01, -3.0], [10.0, 3.0])
    print(est)
    assert est.converged
    assert est.contrast_value <= u0 + 1e-12

    inf = fv.infer(s, "exponential", est.theta, theta0=[1.0, -1.0])
    assert len(inf.gamma) == 2 and inf.condition_number_b >= 1.0
    for lo, th, hi in zip(inf.ci_lower, est.theta, inf.ci_upper):
        assert lo < th < hi
    print("CI:", list(zip(inf.ci_lower, inf.ci_upper)), "Z:", inf.z_marginal)

    fixed = fv.estimate(s, "exponential", [0.01, -3.0], [10.0, 3.0], fixed={0: 1.0})
    assert fixed.theta[0] == 1.0

    rows = fv.run_mc("exponential", [1.0, -1.0], n=200, replications=2, lower=[0.01, -3.0],
                     upper=[10.0, 3.0], d=50, seed=3)
    assert [r.name for r in rows] == ["eta", "xi"]
    for r in rows:
        print(r)

    try:
        fv.contrast_u(s, "exponential", [1.0, -1.0], epsilon=0.0)
    except ValueError as e:
        assert "ε > 0" in str(e)
    else:
        raise AssertionError("epsilon = 0 must be rejected")

    c = fv.black_scholes_price("C", 100.0, 100.0, 0.04)
    assert abs(c - 7.965567455405804) < 1e-9

    print("smoke test passed")


if __name__ == "__main__":
    main()
