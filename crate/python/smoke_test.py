"""Smoke test for the gatemod Python extension.

Build and install first:
    pip install --no-build-isolation ./crates/python
"""

import math

import gatemod_py as gm


def close(a, b, tol):
    return all(abs(x - y) <= tol for x, y in zip(a, b))


def main():
    s = gm.softmax([1.0, 2.0, 3.0])
    assert abs(sum(s) - 1.0) < 1e-12
    assert s[2] > s[1] > s[0]

    inst = gm.Instance([[0.9, 0.1], [0.1, 0.9]], 0.5)
    assert (inst.d_u, inst.n_pi) == (2, 2)
    w, residual, _ = inst.solve()
    assert close(w, [0.5, 0.5], 1e-10), w
    assert residual <= 1e-10

    skewed = gm.Instance([[0.9, 0.1], [0.1, 0.9]], 0.5, cost=[0.0, math.log(2.0)])
    w_star, _, _ = skewed.solve()
    times, traj, energy = skewed.flow([0.1, 0.9], tau=1.0, horizon=20.0)
    assert times[0] == 0.0 and len(traj) == len(energy)
    assert close(traj[-1], w_star, 1e-6)
    assert all(b <= a + 1e-8 for a, b in zip(energy, energy[1:]))

    one = gm.Instance([[0.3], [0.7]], 0.1)
    assert one.solve()[0] == [1.0]

    try:
        gm.Instance([[0.9, 0.1], [0.3, 0.9]], 0.5)
    except ValueError:
        pass
    else:
        raise AssertionError("non-stochastic columns were accepted")

    pol = gm.run_boids('{"n": 10, "steps": 20, "seed": 1}')
    assert len(pol) == 21 and all(0.0 <= p <= 1.0 + 1e-12 for p in pol)

    rows = gm.run_verify("flow", 0)
    names = {r[0] for r in rows}
    assert "contraction_ratio_over_bound" in names
    print("python smoke test passed")


if __name__ == "__main__":
    main()
