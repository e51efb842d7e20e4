"""Time random filter queries on the fixture collection and check each view
against a brute-force scan of the raw definition files.

    python3 scripts/filter_benchmark.py --queries 500
"""
import argparse
import random
import sys
import tempfile
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))

from oracles import brute_force_view, random_spec, vocabulary  # noqa: E402

from scoremeta.corpus import open_corpus  # noqa: E402
from scoremeta.definitions import load_config  # noqa: E402
from scoremeta.synthetic import build_fixture_collection  # noqa: E402


def main() -> None:
    ap = argparse.ArgumentParser(description="filter query benchmark")
    ap.add_argument("--queries", type=int, default=500)
    ap.add_argument("--seed", type=int, default=2024)
    args = ap.parse_args()
    with tempfile.TemporaryDirectory() as tmp:
        paths = build_fixture_collection(Path(tmp))
        corpus = open_corpus(load_config(paths.config, [paths.definitions]))
        dirs = [paths.definitions]
        rng = random.Random(args.seed)
        specs = [random_spec(rng, vocabulary(dirs)) for _ in range(args.queries)]
        t0 = time.perf_counter()
        views = [[(r.dataset_name, r.song_index) for r in corpus.filter(**s).view] for s in specs]
        elapsed = time.perf_counter() - t0
        bad = sum(v != brute_force_view(dirs, s) for v, s in zip(views, specs))
    print(f"{args.queries} queries in {elapsed * 1e3:.1f} ms "
          f"({elapsed / args.queries * 1e6:.0f} us/query), {bad} mismatches")
    sys.exit(1 if bad else 0)


if __name__ == "__main__":
    main()
