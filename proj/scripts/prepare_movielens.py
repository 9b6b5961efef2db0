#!/usr/bin/env python3
"""Prepare MovieLens-100k relation files for the chest pipeline.

Takes the extracted ml-100k directory (u.data, u.item, u.user, u.occupation,
u.genre; https://grouplens.org/datasets/movielens/100k/) and writes the four
relation files plus schema.json into the output directory:

    user_movie.tsv       ratings binarized to interactions (UM)
    movie_movie.tsv      top-K cosine neighbors over co-rating vectors (MM)
    user_occupation.tsv  occupation memberships (UO)
    movie_genre.tsv      genre memberships, 'unknown' excluded (MG)

The MM relation mirrors the common preprocessing of this benchmark (each
movie linked to its most similar movies by rating co-occurrence); --knn
controls the neighborhood size.

Usage: prepare_movielens.py ML100K_DIR OUT_DIR [--knn 50]
"""

import argparse
import json
import pathlib
import sys

import numpy as np


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("ml100k_dir", type=pathlib.Path)
    ap.add_argument("out_dir", type=pathlib.Path)
    ap.add_argument("--knn", type=int, default=50,
                    help="similar movies linked per movie (default 50)")
    args = ap.parse_args()

    src = args.ml100k_dir
    out = args.out_dir
    for name in ("u.data", "u.item", "u.user", "u.occupation", "u.genre"):
        if not (src / name).exists():
            print(f"error: {src / name} not found", file=sys.stderr)
            return 1
    out.mkdir(parents=True, exist_ok=True)

    ratings = np.loadtxt(src / "u.data", dtype=np.int64, usecols=(0, 1))
    users = ratings[:, 0] - 1
    movies = ratings[:, 1] - 1
    n_users = int(users.max()) + 1
    n_movies = int(movies.max()) + 1

    with open(out / "user_movie.tsv", "w") as f:
        for u, m in zip(users, movies):
            f.write(f"{u}\t{m}\n")

    occupations = [line.strip() for line in
                   open(src / "u.occupation", encoding="latin-1")
                   if line.strip()]
    occ_index = {name: k for k, name in enumerate(occupations)}
    with open(src / "u.user", encoding="latin-1") as f, \
         open(out / "user_occupation.tsv", "w") as g:
        for line in f:
            fields = line.rstrip("\n").split("|")
            g.write(f"{int(fields[0]) - 1}\t{occ_index[fields[3]]}\n")

    genres = []
    for line in open(src / "u.genre", encoding="latin-1"):
        line = line.strip()
        if line:
            genres.append(line.split("|")[0])
    # genre 0 is 'unknown'; drop it so real genres index 0..17
    named = genres[1:]
    n_pairs = 0
    with open(src / "u.item", encoding="latin-1") as f, \
         open(out / "movie_genre.tsv", "w") as g:
        for line in f:
            fields = line.rstrip("\n").split("|")
            movie = int(fields[0]) - 1
            flags = [int(x) for x in fields[5:5 + len(genres)]]
            for k, flag in enumerate(flags[1:]):  # skip 'unknown'
                if flag:
                    g.write(f"{movie}\t{k}\n")
                    n_pairs += 1

    # movie-movie: top-K cosine similarity on user-incidence vectors
    incidence = np.zeros((n_movies, n_users), dtype=np.float32)
    incidence[movies, users] = 1.0
    norms = np.linalg.norm(incidence, axis=1)
    norms[norms == 0] = 1.0
    normalized = incidence / norms[:, None]
    edge_count = 0
    with open(out / "movie_movie.tsv", "w") as f:
        block = 128
        for lo in range(0, n_movies, block):
            sims = normalized[lo:lo + block] @ normalized.T
            for row in range(sims.shape[0]):
                movie = lo + row
                sims[row, movie] = -1.0  # no self link
                top = np.argpartition(-sims[row], args.knn)[:args.knn]
                top = top[sims[row, top] > 0]
                for other in sorted(int(t) for t in top):
                    f.write(f"{movie}\t{other}\n")
                    edge_count += 1

    schema = {
        "node_types": [
            {"name": "U", "count": n_users},
            {"name": "M", "count": n_movies},
            {"name": "O", "count": len(occupations)},
            {"name": "G", "count": len(named)},
        ],
        "edge_types": [
            {"name": "UM", "src": "U", "dst": "M", "symmetric": False,
             "file": "user_movie.tsv"},
            {"name": "MM", "src": "M", "dst": "M", "symmetric": True,
             "file": "movie_movie.tsv"},
            {"name": "UO", "src": "U", "dst": "O", "symmetric": False,
             "file": "user_occupation.tsv"},
            {"name": "MG", "src": "M", "dst": "G", "symmetric": False,
             "file": "movie_genre.tsv"},
        ],
        "interaction": "UM",
        "metapaths": ["UMUM", "UMMM", "UOUM", "UMGM"],
    }
    with open(out / "schema.json", "w") as f:
        json.dump(schema, f, indent=2)
        f.write("\n")

    print(f"{n_users} users, {n_movies} movies, {len(ratings)} interactions")
    print(f"{n_pairs} movie-genre pairs, {edge_count} directed movie-movie "
          f"links (knn={args.knn})")
    print(f"relation files and schema.json written to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
