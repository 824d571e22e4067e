"""Timing comparison of the numba kernels against the pure-numpy fallbacks.

Runs both variants in-process on identical inputs, then times the end-to-end
BM25 query path on a synthetic corpus. The active variant for package code is
chosen at import from VULNFUSE_NUMBA (default: numba when available); here we
call both explicitly.

Usage: python benchmarks/bench_kernels.py [--docs 2000] [--rounds 200]
"""

import argparse
import time

import numpy as np

from vulnfuse import _kernels
from vulnfuse._kernels import _bm25_accumulate_np, _sparse_accumulate_np
from vulnfuse.bm25 import build_bm25, tokenize
from vulnfuse.corpus import Contract, Dataset, LabelVector
from vulnfuse.synth import DEFAULT_TAXONOMY, generate_corpus


def records_to_dataset(records):
    contracts = tuple(
        Contract(id=r["id"], source=r["source"], labels=LabelVector(bits=tuple(r["labels"])))
        for r in records
    )
    return Dataset(contracts=contracts, taxonomy=DEFAULT_TAXONOMY,
                   split={c.id: "train" for c in contracts})


def timeit(fn, rounds):
    best = float("inf")
    for _ in range(max(3, rounds // 10)):
        start = time.perf_counter()
        for _ in range(rounds):
            fn()
        best = min(best, (time.perf_counter() - start) / rounds)
    return best


def bench_bm25_kernel(n_docs, n_terms, rounds):
    rng = np.random.default_rng(0)
    post_docs, post_counts, indptr = [], [], [0]
    for _ in range(n_terms):
        docs = np.sort(rng.choice(n_docs, size=n_docs // 4, replace=False))
        post_docs.extend(docs.tolist())
        post_counts.extend(rng.integers(1, 9, docs.size).tolist())
        indptr.append(len(post_docs))
    post_docs = np.array(post_docs, dtype=np.int64)
    post_counts = np.array(post_counts, dtype=np.float64)
    q = rng.choice(n_terms, size=16, replace=False)
    starts = np.array([indptr[t] for t in q], dtype=np.int64)
    ends = np.array([indptr[t + 1] for t in q], dtype=np.int64)
    weights = rng.uniform(0.1, 3.0, q.size)
    norms = rng.uniform(0.5, 3.0, n_docs)

    args = (post_docs, post_counts, starts, ends, weights, norms, 1.5)
    _kernels.bm25_accumulate(np.zeros(n_docs), *args)  # compile before timing
    t_numba = timeit(lambda: _kernels.bm25_accumulate(np.zeros(n_docs), *args), rounds)
    t_numpy = timeit(lambda: _bm25_accumulate_np(np.zeros(n_docs), *args), rounds)
    return t_numba, t_numpy


def bench_sparse_kernel(dim, n, alpha, rounds):
    rng = np.random.default_rng(1)
    k = int((1 - alpha) * dim * dim)
    flat = rng.choice(dim * dim, size=k, replace=False)
    rows = (flat // dim).astype(np.int64)
    cols = (flat % dim).astype(np.int64)
    vals = rng.normal(0, 1, k)
    x = rng.normal(0, 1, (n, dim))

    _kernels.sparse_accumulate(np.zeros((n, dim)), rows, cols, vals, x)
    t_numba = timeit(lambda: _kernels.sparse_accumulate(np.zeros((n, dim)), rows, cols, vals, x),
                     rounds)
    t_numpy = timeit(lambda: _sparse_accumulate_np(np.zeros((n, dim)), rows, cols, vals, x),
                     rounds)
    return t_numba, t_numpy


def bench_query_path(n_docs, rounds):
    records = generate_corpus(n_docs, seed=3)
    ds = records_to_dataset(records)
    index = build_bm25(ds)
    query_tokens = tokenize(records[0]["source"])
    index.score_all(query_tokens)
    return timeit(lambda: index.score_all(query_tokens), rounds)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--docs", type=int, default=2000)
    parser.add_argument("--rounds", type=int, default=200)
    args = parser.parse_args()

    active = "numba" if _kernels.HAS_NUMBA else "numpy (VULNFUSE_NUMBA=0 or numba missing)"
    print(f"active kernel path: {active}\n")

    t_sel, t_np = bench_bm25_kernel(args.docs, 400, args.rounds)
    print(f"bm25 postings accumulate ({args.docs} docs):")
    print(f"  selected   {t_sel * 1e6:9.1f} us")
    print(f"  numpy ref  {t_np * 1e6:9.1f} us   ({t_np / t_sel:.1f}x)")

    for dim, n, alpha in ((128, 8, 0.9), (256, 8, 0.99)):
        t_sel, t_np = bench_sparse_kernel(dim, n, alpha, args.rounds)
        print(f"sparse adapter matmul (d={dim}, n={n}, alpha={alpha}):")
        print(f"  selected   {t_sel * 1e6:9.1f} us")
        print(f"  numpy ref  {t_np * 1e6:9.1f} us   ({t_np / t_sel:.1f}x)")

    t_query = bench_query_path(min(args.docs, 500), max(20, args.rounds // 10))
    print(f"end-to-end BM25 score_all over {min(args.docs, 500)} contracts: "
          f"{t_query * 1e3:.3f} ms per query (active path)")


if __name__ == "__main__":
    main()
