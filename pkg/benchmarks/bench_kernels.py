"""Benchmark the compiled kernels against their pure-numpy twins.

Run from the repo root:

    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --frames 400 --labels 60 --repeat 50

Both backends are timed on identical inputs and their outputs are
compared before timing, so a speedup never hides a semantic drift.
"""

import argparse
import time

import numpy as np

from asrkit.ctc import ctc_prefix_initial
from asrkit.kernels import pure

try:
    from asrkit.kernels import _ctc_ext as compiled
except ImportError:
    compiled = None


def log_post_matrix(rng, t_len, v):
    logits = rng.normal(size=(t_len, v))
    return logits - np.logaddexp.reduce(logits, axis=1, keepdims=True)


def best_of(fn, args, repeat):
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - start)
    return best


def check_agreement(name, a, b):
    flat_a = np.concatenate([np.ravel(np.asarray(x, dtype=np.float64))
                             for x in (a if isinstance(a, tuple) else (a,))])
    flat_b = np.concatenate([np.ravel(np.asarray(x, dtype=np.float64))
                             for x in (b if isinstance(b, tuple) else (b,))])
    if flat_a.shape != flat_b.shape:
        raise SystemExit(f"{name}: backends disagree on output shapes")
    same = np.isclose(flat_a, flat_b, rtol=1e-10, atol=1e-12, equal_nan=True)
    both_neg_inf = np.isneginf(flat_a) & np.isneginf(flat_b)
    if not np.all(same | both_neg_inf):
        worst = np.nanmax(np.abs(flat_a - flat_b))
        raise SystemExit(f"{name}: backends disagree (max |diff| {worst:g})")


def main():
    parser = argparse.ArgumentParser(
        description="Time the pure and compiled kernel backends.")
    parser.add_argument("--frames", type=int, default=200,
                        help="CTC frames (default 200)")
    parser.add_argument("--vocab", type=int, default=50,
                        help="vocabulary size incl. blank (default 50)")
    parser.add_argument("--labels", type=int, default=30,
                        help="label length (default 30)")
    parser.add_argument("--units", type=int, default=200,
                        help="sequence length for edit counts (default 200)")
    parser.add_argument("--repeat", type=int, default=20,
                        help="timing repeats; best-of is reported")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    lp = log_post_matrix(rng, args.frames, args.vocab)
    labels = rng.integers(1, args.vocab, size=args.labels)
    state = ctc_prefix_initial(lp)
    ref = rng.integers(0, 20, size=args.units)
    hyp = ref.copy()
    flips = rng.choice(args.units, size=args.units // 5, replace=False)
    hyp[flips] = rng.integers(0, 20, size=flips.size)
    hyp = np.delete(hyp, rng.choice(args.units, size=args.units // 10,
                                    replace=False))

    workloads = [
        ("ctc_loss_grad", "ctc_loss_grad",
         (lp, labels),
         f"T={args.frames} V={args.vocab} U={args.labels}"),
        ("ctc_prefix_all", "ctc_prefix_all",
         (lp, state.last, state.r, state.empty),
         f"T={args.frames} V={args.vocab}"),
        ("edit_counts", "edit_counts",
         (ref, hyp),
         f"ref={len(ref)} hyp={len(hyp)}"),
    ]

    if compiled is None:
        print("compiled backend not importable; timing the pure backend only")
    header = (f"{'kernel':<16} {'workload':<24} {'pure ms':>10} "
              f"{'compiled ms':>12} {'speedup':>9}")
    print(header)
    print("-" * len(header))
    for name, attr, call_args, workload in workloads:
        fn_pure = getattr(pure, attr)
        t_pure = best_of(fn_pure, call_args, args.repeat)
        if compiled is None:
            print(f"{name:<16} {workload:<24} {1e3 * t_pure:>10.3f} "
                  f"{'-':>12} {'-':>9}")
            continue
        fn_comp = getattr(compiled, attr)
        check_agreement(name, fn_pure(*call_args), fn_comp(*call_args))
        t_comp = best_of(fn_comp, call_args, args.repeat)
        print(f"{name:<16} {workload:<24} {1e3 * t_pure:>10.3f} "
              f"{1e3 * t_comp:>12.3f} {t_pure / t_comp:>8.1f}x")


if __name__ == "__main__":
    main()
