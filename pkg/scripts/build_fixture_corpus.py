"""Write the small synthetic collection used by the test suite to a directory.

    python3 scripts/build_fixture_corpus.py /tmp/fixture
    scoremeta list --config /tmp/fixture/datasets.json --definitions /tmp/fixture/definitions
"""
import argparse

from scoremeta.corpus import open_corpus
from scoremeta.definitions import load_config
from scoremeta.synthetic import build_fixture_collection


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("root")
    args = ap.parse_args()
    paths = build_fixture_collection(args.root)
    corpus = open_corpus(load_config(paths.config, [paths.definitions]))
    print(f"config:      {paths.config}")
    print(f"definitions: {paths.definitions}")
    for rec in corpus.records():
        print(f"  {rec['dataset']}:{rec['index']}  {rec['composer']}  {', '.join(rec['instruments'])}")


if __name__ == "__main__":
    main()
