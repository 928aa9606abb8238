"""Exercises the bindings end to end: simulate, de-skew, weigh, register."""

import math

import skewreg


def main():
    p = skewreg.Pose([1.0, 2.0, 3.0], [0.0, 0.0, math.pi / 2])
    assert all(abs(a - b) < 1e-12 for a, b in zip(p.transform_point([1, 0, 0]), [1, 3, 3]))
    ident = p.compose(p.inverse())
    assert max(abs(x) for x in ident.translation) < 1e-12

    skewed, unskewed, _ = skewreg.simulate(index=3, seed=1)
    twists = skewreg.true_twists(index=3)
    fixed = skewreg.deskew(skewed, twists)
    worst = max(
        math.dist(a, b) for a, b in zip(fixed.positions(), unskewed.positions())
    )
    assert len(fixed) == len(unskewed) and worst < 0.02, worst

    weighted = skewreg.weigh(fixed, "vtw", twists)
    assert all(0.0 < w <= 1e4 for w in weighted.weights())

    reference, _, _ = skewreg.simulate(index=2, seed=1)
    reference = skewreg.deskew(reference, skewreg.true_twists(index=2)).with_normals()
    result = skewreg.register(weighted, reference)
    assert result["converged"], result
    print("registration:", result["pose"], "in", result["iterations"], "iterations")

    try:
        skewreg.weigh(fixed, "bogus")
    except ValueError as e:
        assert "[parameter]" in str(e)
    else:
        raise AssertionError("unknown model accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
