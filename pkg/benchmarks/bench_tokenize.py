"""Tokenizer backend benchmark: compiled Cython kernel vs pure Python.

Builds a synthetic story corpus, then times encode throughput for both
backends at merges=0 (byte level) and with learned merges (where the BPE
merge loop dominates).

    python benchmarks/bench_tokenize.py [--users 800] [--merges 48]
"""
import argparse
import time

from storyrank._kernels import get_backend
from storyrank.datagen import WorldConfig, generate_world
from storyrank.grammar import serialize
from storyrank.vocab import build_vocabulary


def run(users: int, merges: int) -> None:
    cfg = WorldConfig(n_users=users, n_items=300, n_carousels=30, n_genres=8,
                      rng_seed=5)
    catalog, stories, _ = generate_world(cfg)
    texts = [serialize(s) for s in stories]
    total_mb = sum(len(t.encode()) for t in texts) / 1e6
    print(f"corpus: {len(texts)} stories, {total_mb:.1f} MB")

    sample = "\n".join(texts[:200])
    vocabularies = {0: build_vocabulary(catalog)}
    if merges > 0:
        vocabularies[merges] = build_vocabulary(catalog, merges=merges,
                                                merge_training_text=sample)

    results = {}
    for n_merges, vocab in vocabularies.items():
        data = [t.encode("utf-8") for t in texts]
        for backend_name in ("python", "cython"):
            try:
                backend = get_backend(backend_name)
            except (ImportError, ValueError):
                print(f"  {backend_name}: not available")
                continue
            started = time.perf_counter()
            n_tokens = 0
            for blob in data:
                n_tokens += len(backend.encode_text(
                    blob, vocab.domain_to_id, vocab._lengths, vocab._merge_ranks))
            elapsed = time.perf_counter() - started
            results[(n_merges, backend_name)] = (elapsed, total_mb / elapsed)
            print(f"  merges={n_merges:<3d} {backend_name:7s} "
                  f"{elapsed:7.3f}s  {total_mb / elapsed:7.1f} MB/s  "
                  f"({n_tokens} tokens)")
    for n_merges in vocabularies:
        py = results.get((n_merges, "python"))
        cy = results.get((n_merges, "cython"))
        if py and cy:
            print(f"speedup at merges={n_merges}: {py[0] / cy[0]:.1f}x")


if __name__ == "__main__":
    parser = argparse.ArgumentParser()
    parser.add_argument("--users", type=int, default=800)
    parser.add_argument("--merges", type=int, default=48)
    args = parser.parse_args()
    run(args.users, args.merges)
