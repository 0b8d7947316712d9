"""Write a synthetic corpus to disk as WAV files plus a manifest.

The result can be used through ``corpus.manifest`` in a config, which
exercises the same loading path as recorded material.

    python scripts/export_corpus.py OUT_DIR [--sentences N] [--seed S]
"""

import argparse
from pathlib import Path

from fadesim.corpus import CorpusManifest, Voice, make_synthetic_spec, synthesize_corpus, write_manifest


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("out", type=Path)
    p.add_argument("--sentences", type=int, default=120, help="per effort")
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    entries, grammar = [], None
    for i, (effort, voice) in enumerate((("plain", Voice()), ("lombard", Voice(1.25, 1.05, 1.15, 3.0)))):
        spec = make_synthetic_spec(seed=args.seed, voice=voice)
        grammar = spec.grammar
        entries += synthesize_corpus(spec, args.sentences, args.seed * 10 + i, effort=effort).entries
    path = write_manifest(CorpusManifest(grammar, entries), args.out / "manifest.tsv")
    print(f"{len(entries)} utterances -> {path}")


if __name__ == "__main__":
    main()
