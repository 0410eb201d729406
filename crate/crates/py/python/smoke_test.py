"""Smoke test for the anchored_opt extension module."""

import math

import anchored_opt as ao


def main():
    p = ao.Problem.quadratic([[1.0, 0.0], [0.0, 0.0]])
    assert p.dim == 2 and p.lipschitz == 1.0
    assert p.gradient([2.0, 5.0]) == [2.0, 0.0]
    assert p.project([3.0, 4.0]) == [0.0, 4.0]

    sched = ao.Schedule.power_law(1.0, 0.9, 1.0, 0.6, n0=2)
    report = sched.validate(1.0)
    assert report["verdict"], report
    assert math.isclose(sched.alpha(0), 2.0 ** -0.9)

    res = ao.run(p, "halpern_gd", ao.Schedule.constant(0.5), [3.0, 4.0], 20000, x0=[5.0, -1.0])
    x = res["final"]
    assert abs(x[0]) < 1e-2 and abs(x[1] - 4.0) < 1e-2, x
    assert res["records"][-1]["n"] == 20000

    noisy = ao.run(p, "halpern_sgd", sched, [3.0, 4.0], 5000, noise="gaussian_iso", sigma=1.0, seed=7)
    again = ao.run(p, "halpern_sgd", sched, [3.0, 4.0], 5000, noise="gaussian_iso", sigma=1.0, seed=7)
    assert noisy == again

    try:
        ao.run(p, "halpern_sgd", ao.Schedule.power_law(1.0, 1.2, 1.0, 0.6, 2), [3.0, 4.0], 10)
    except ValueError as e:
        assert "precondition" in str(e)
    else:
        raise AssertionError("bad schedule accepted")

    print("smoke test ok:", p, sched, "final", [round(v, 4) for v in x])


if __name__ == "__main__":
    main()
