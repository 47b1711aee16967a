"""Smoke test for the pydatalaw extension.

Build and run from the repository root:

    cargo build --release -p datalaw-py --features extension-module
    cp target/release/libpydatalaw.so python/pydatalaw.so
    python3 python/smoke_test.py
"""

import math
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import pydatalaw as dl

GRID = [2.0**k for k in range(10)]


def close(a, b, tol):
    assert abs(a - b) <= tol, f"{a} != {b} (tol {tol})"


def main():
    law = dl.PowerLaw(1.969, 0.057, 0.285)
    close(law.eval(1.0), 2.000355052632167, 1e-12)
    close(law.asymptote(), 0.8703021371692619, 1e-12)
    close(law.transition(), 17.54385964912281, 1e-9)
    close(law.marginal_value(1.0), 0.5393577956482192, 1e-12)
    assert len(law.gradient(4.0)) == 3
    assert dl.PowerLaw(1.0, 0.0, 0.5).transition() is None

    fit = dl.fit_single(GRID, [law.eval(d) for d in GRID], seed=1)
    assert fit["converged"]
    close(fit["law"].p, 0.285, 1e-6)

    no_filter = dl.PowerLaw(2.501, 0.034, 0.278)
    bicleaner = dl.PowerLaw(2.130, 0.064, 0.278)
    shared = dl.fit_shared(
        {
            "no_filter": (GRID, [no_filter.eval(d) for d in GRID]),
            "bicleaner": (GRID, [bicleaner.eval(d) for d in GRID]),
        }
    )
    close(shared["p"], 0.278, 1e-6)
    k = dl.equivalence_factor(shared["laws"]["no_filter"], shared["laws"]["bicleaner"])
    close(k, 1.7817306223371006, 1e-4)

    tail = dl.fit_tail(GRID, [law.eval(d) for d in GRID], 32.0)
    assert 0.8 <= tail["q"] <= 1.05, tail

    line = dl.fit_linear([1.0, 1.5, 2.0], [40.0, 30.0, 20.0])
    close(line["slope"], -20.0, 1e-12)

    mc = dl.mc_uncertainty(GRID, [law.eval(d) for d in GRID], n_reps=200, seed=7)
    assert 0.01 <= mc["std_p"] <= 0.04, mc

    joint = dl.JointLaw(2.0, 0.3, 0.5, 0.1, 0.1, 0.05)
    shapes = [(200_000_000, 200_000_000), (400_000_000, 100_000_000)]
    d, loss, n_enc, n_dec = [], [], [], []
    for ne, nd in shapes:
        for x in GRID:
            d.append(x)
            loss.append(joint.eval(ne, nd, x))
            n_enc.append(ne)
            n_dec.append(nd)
    jfit = dl.fit_joint(d, loss, n_enc, n_dec, beta=0.5, p_e=0.1, p_d=0.1, l_inf=0.05, hold_out=[shapes[1]])
    close(jfit["law"].alpha, 2.0, 1e-6)
    assert jfit["held_out_rms"] < 1e-6

    pairs = [(f"source sentence {i}", f"Zielsatz {i}") for i in range(500)]
    shuffled = dl.corrupt(pairs, "pair-shuffle", seed=3)
    assert sorted(t for _, t in shuffled) == sorted(t for _, t in pairs)
    assert shuffled == dl.corrupt(pairs, "pair-shuffle", seed=3)
    noisy = dl.corrupt(pairs, "char-noise", side="source", prob=0.2, seed=1)
    assert all(len(a) == len(b) for (a, _), (b, _) in zip(noisy, pairs))
    sample = dl.sample(pairs, 50, seed=9)
    assert len(sample) == 50 and sample == sorted(sample, key=pairs.index)
    scored = [(s, t, (i * 37 % 101) / 100) for i, (s, t) in enumerate(pairs)]
    assert len(dl.filter_top_fraction(scored, 0.1)) == 50
    assert all(x >= 0.5 for _, _, x in dl.filter_threshold(scored, 0.5))

    try:
        dl.PowerLaw(1.0, 0.1, 2.5)
    except ValueError:
        pass
    else:
        raise AssertionError("invalid exponent accepted")
    assert not math.isnan(law.eval(512.0))

    print(f"pydatalaw {dl.__version__}: all checks passed")


if __name__ == "__main__":
    main()
