"""Rebuild the vendored triple files under ``src/kgad/data``.

Both sources are fetched through pip, so no direct network access is needed::

    pip download pykeen==1.11.1 --no-deps -d /tmp/src
    pip download wn==0.0.23 --no-deps -d /tmp/src
    python scripts/build_datasets.py --pykeen-wheel /tmp/src/pykeen-1.11.1-py3-none-any.whl \
        --wn-sdist /tmp/src/wn-0.0.23.tar.gz

Outputs
-------
kinship.tsv
    The Alyawarra kinship graph (train + valid + test of the PyKEEN copy, MIT).
wordnet_11rel_10k.tsv
    A 10,000-triple, neighbourhood-preserving sample of WordNet 3.0 restricted to
    the eleven relation types used by WN18RR.
"""
from __future__ import annotations

import argparse
import collections
import io
import tarfile
import zipfile
from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parents[1] / "src" / "kgad" / "data"

# WordNet pointer symbol -> WN18RR relation name
POINTERS = {
    "@": "_hypernym",
    "@i": "_instance_hypernym",
    "+": "_derivationally_related_form",
    "^": "_also_see",
    "%m": "_member_meronym",
    "%p": "_has_part",
    ";c": "_synset_domain_topic_of",
    ";u": "_member_of_domain_usage",
    ";r": "_member_of_domain_region",
    "$": "_verb_group",
    "&": "_similar_to",
}
POS_FILES = ("noun", "verb", "adj", "adv")
SAMPLE_SIZE = 10_000
SAMPLE_SEED = 20240517


def build_kinship(wheel: Path) -> list[tuple[str, str, str]]:
    rows = []
    with zipfile.ZipFile(wheel) as zf:
        for split in ("train", "valid", "test"):
            text = zf.read(f"pykeen/datasets/kinships/{split}.txt").decode("utf-8")
            rows.extend(tuple(line.split("\t")) for line in text.splitlines() if line.strip())
    return rows


def parse_wordnet(sdist: Path) -> list[tuple[str, str, str]]:
    triples = []
    with tarfile.open(sdist) as tf:
        for pos in POS_FILES:
            member = tf.getmember(f"wn-0.0.23/wn/data/wordnet-3.0/data.{pos}")
            handle = io.TextIOWrapper(tf.extractfile(member), encoding="utf-8")
            for line in handle:
                if line.startswith("  "):
                    continue
                fields = line.split("|", 1)[0].split()
                offset, ss_type = fields[0], fields[2]
                n_words = int(fields[3], 16)
                pos_ptr = 4 + 2 * n_words
                n_ptr = int(fields[pos_ptr])
                ptr_fields = fields[pos_ptr + 1 : pos_ptr + 1 + 4 * n_ptr]
                src = f"{offset}.{'a' if ss_type == 's' else ss_type}"
                for k in range(n_ptr):
                    sym, target, tpos = ptr_fields[4 * k : 4 * k + 3]
                    rel = POINTERS.get(sym)
                    if rel is None:
                        continue
                    dst = f"{target}.{'a' if tpos == 's' else tpos}"
                    if dst != src:
                        triples.append((src, rel, dst))
    return list(dict.fromkeys(triples))


def snowball_sample(triples, size, seed):
    """Induced subgraph over entities added in breadth-first order from a random seed entity."""
    adj = collections.defaultdict(list)
    for i, (h, _, t) in enumerate(triples):
        adj[h].append(i)
        adj[t].append(i)
    rng = np.random.default_rng(seed)
    entities = sorted(adj)
    kept: set[str] = set()
    chosen: list[int] = []
    seen_triples: set[int] = set()
    frontier = collections.deque()
    while len(chosen) < size:
        if not frontier:
            start = entities[int(rng.integers(len(entities)))]
            if start in kept:
                continue
            frontier.append(start)
            kept.add(start)
        ent = frontier.popleft()
        for i in adj[ent]:
            h, _, t = triples[i]
            other = t if h == ent else h
            if other in kept and i not in seen_triples:
                seen_triples.add(i)
                chosen.append(i)
                if len(chosen) == size:
                    break
            elif other not in kept:
                kept.add(other)
                frontier.append(other)
                # the triple itself is picked up when `other` is expanded
    return [triples[i] for i in sorted(chosen)]


def write_tsv(path: Path, rows) -> None:
    with path.open("w", encoding="utf-8") as fh:
        for h, r, t in rows:
            fh.write(f"{h}\t{r}\t{t}\n")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--pykeen-wheel", type=Path)
    ap.add_argument("--wn-sdist", type=Path)
    args = ap.parse_args()
    OUT.mkdir(parents=True, exist_ok=True)
    if args.pykeen_wheel:
        rows = build_kinship(args.pykeen_wheel)
        write_tsv(OUT / "kinship.tsv", rows)
        print(f"kinship: {len(rows)} triples")
    if args.wn_sdist:
        full = parse_wordnet(args.wn_sdist)
        sample = snowball_sample(full, SAMPLE_SIZE, SAMPLE_SEED)
        write_tsv(OUT / "wordnet_11rel_10k.tsv", sample)
        counts = collections.Counter(r for _, r, _ in sample)
        n_ent = len({h for h, _, _ in sample} | {t for _, _, t in sample})
        print(f"wordnet: {len(full)} triples total, sample {len(sample)} over {n_ent} entities")
        for rel, c in counts.most_common():
            print(f"  {rel}: {c}")


if __name__ == "__main__":
    main()
