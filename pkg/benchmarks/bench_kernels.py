"""Time the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from cramer_attack import _backend
from cramer_attack.victim.ctc import extend_with_blanks, log_softmax


def cases(rng):
    lp = log_softmax(rng.normal(size=(200, 28)))
    ext = extend_with_blanks(rng.integers(1, 28, size=30))
    r = np.correlate(x := rng.normal(size=480), x, "full")[479:490]
    ref, hyp = rng.integers(0, 50, size=300), rng.integers(0, 50, size=300)
    frames = rng.normal(size=(400, 400))
    return {
        "ctc_alpha_beta": (lambda k: k.ctc_alpha_beta(lp, ext)),
        "levinson_durbin": (lambda k: k.levinson_durbin(r, 10)),
        "edit_distance_table": (lambda k: k.edit_distance_table(ref, hyp)),
        "overlap_add": (lambda k: k.overlap_add(frames, 160, 400 * 160 + 240)),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    names = _backend.available()
    if "compiled" not in names:
        print("compiled extension not built; timing the fallback only")
    print(f"{'kernel':<22}" + "".join(f"{n:>14}" for n in names) + ("   speedup" if len(names) == 2 else ""))
    for kernel, fn in cases(np.random.default_rng(0)).items():
        best = []
        for name in names:
            mod = _backend.get(name)
            number = 3 if name == "python" else 50
            best.append(min(timeit.repeat(lambda: fn(mod), number=number, repeat=args.repeat)) / number)
        line = f"{kernel:<22}" + "".join(f"{t * 1e3:>12.3f}ms" for t in best)
        if len(best) == 2:
            line += f"  {best[1] / best[0]:>7.1f}x"
        print(line)


if __name__ == "__main__":
    main()
