"""Smoke test for the bohmlab_py extension.

Build and install first:
    pip install maturin
    maturin develop -m crates/py/Cargo.toml --release
"""
import math

import bohmlab_py as bl


def main():
    sz = [[1, 0], [0, -1]]
    s = 1 / math.sqrt(2)
    dist = bl.born(sz, [s, s])
    assert [l for l, _ in dist] == [-1.0, 1.0], dist
    assert all(abs(p - 0.5) < 1e-12 for _, p in dist)

    # complex entries pass straight through
    sy = [[0, -1j], [1j, 0]]
    dist = bl.born(sy, [s, 1j * s])
    assert abs(dict(dist)[1.0] - 1.0) < 1e-12, dist

    third = 2 * math.pi / 3
    dirs = [[math.sin(k * third), 0.0, math.cos(k * third)] for k in range(3)]
    terms = bl.bell_terms(*dirs)
    assert abs(sum(terms) - 0.75) < 1e-12, terms
    cert = bl.bell_certificate(120.0)
    assert cert["feasible"] is False

    hardy = bl.hardy_search(16, 20_000)
    assert 0.085 <= hardy["best"]["p"] <= 0.095, hardy["best"]["p"]

    rec = bl.stern_gerlach(alpha2=1.0, n=50, seed=1)
    assert rec["n"] == 50 and rec["aborted"] == 0
    assert rec["frequencies"][0]["label"] == [1.0]

    try:
        bl.stern_gerlach(alpha2=2.0, n=10)
    except ValueError:
        pass
    else:
        raise AssertionError("alpha2 > 1 accepted")

    print("bohmlab_py", bl.__version__, "smoke test passed")


if __name__ == "__main__":
    main()
