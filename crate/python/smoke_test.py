"""Exercise the explore bindings end to end on a tiny synthetic corpus.

    maturin develop -m crates/py/Cargo.toml
    python python/smoke_test.py
"""

import math
import os
import random
import tempfile

import explore

HEADER = "song_id,title,artist,genre,danceability,energy,instrumentalness,liveness,duration_minutes"
GENRES = ["rock", "jazz", "pop", "folk"]


def song_row(rng, song_id, genre):
    g = float(genre)
    return "{},Title {},Artist {},{},{:.3f},{:.3f},{:.3f},{:.3f},{:.2f}".format(
        song_id, song_id, genre + 1, GENRES[genre],
        0.2 * g + rng.uniform(0, 0.2), 0.8 - 0.15 * g + rng.uniform(0, 0.15),
        rng.uniform(0, 1), rng.uniform(0, 0.5), 2.5 + g + rng.uniform(0, 1),
    )


def write_corpus(root, rng):
    songs = ["s%02d" % i for i in range(24)]
    with open(os.path.join(root, "catalog.csv"), "w") as f:
        f.write(HEADER + "\n")
        for i, s in enumerate(songs):
            f.write(song_row(rng, s, i % 4) + "\n")
    with open(os.path.join(root, "best.csv"), "w") as f:
        f.write(HEADER + "\n")
        for i in range(6):
            f.write(song_row(rng, "b%d" % i, i % 4) + "\n")
    seeds = HEADER + ",in_corpus_song_id\n"
    for i in range(5):
        seeds += song_row(rng, "new%d" % i, 1 if i < 3 else 2) + (",s01" if i == 0 else ",") + "\n"

    events = []
    start = 1609459200  # 2021-01-01
    for u in range(16):
        taste = u % 4
        for month in range(24):
            for _ in range(rng.randint(3, 7)):
                genre = taste if rng.random() < 0.8 else rng.randrange(4)
                song = songs[genre + 4 * rng.randrange(6)]
                ts = start + month * 30 * 86400 + rng.randrange(28 * 86400)
                events.append(("user%02d" % u, ts, song))
    with open(os.path.join(root, "events.tsv"), "w") as f:
        for user, ts, song in events:
            f.write("%s\t%d\t%s\n" % (user, ts, song))
    return events, seeds


def main():
    rng = random.Random(7)
    with tempfile.TemporaryDirectory() as root:
        events, seeds = write_corpus(root, rng)

        matrix, dropped = explore.build_ratings(events)
        from_file, _ = explore.build_ratings_from_file(os.path.join(root, "events.tsv"))
        assert matrix.n_users == 16 and not dropped, (matrix, dropped)
        assert from_file.nnz == matrix.nnz
        for _, r in matrix.row("user00"):
            assert 1.0 <= r <= 5.0

        path = os.path.join(root, "m.xplm")
        matrix.save(path)
        again = explore.RatingMatrix.load(path)
        assert again.row("user03") == matrix.row("user03")

        assert abs(explore.pearson([1, 2, 3], [2, 4, 6]) - 1.0) < 1e-12
        assert explore.pearson([1, 1, 1], [1, 2, 3]) is None
        near = explore.neighbors(matrix, "user00", k=5)
        assert near and all(abs(n["weight"]) <= abs(n["similarity"]) + 1e-12 for n in near)
        recs = explore.recommend_cf(matrix, "user00", n=5)
        assert len(recs) <= 5 and all(1.0 <= s <= 5.0 for _, s in recs)

        model = explore.FactorModel.train(matrix, dims=4, epochs=20)
        assert len(model.training_log) == 20 and model.training_log[-1] < model.training_log[0]
        assert len(model.user_factors("user01")) == 4
        p = model.predict("user01", "s02")
        assert math.isfinite(p)
        assert model.recommend("user01", n=3, ranking="rating")

        assert abs(explore.rmse([1, 2, 3], [1, 2, 5]) - math.sqrt(4 / 3)) < 1e-12
        assert explore.average_precision_at_k(["a", "b", "c"], {"a", "c"}, 3) == (1 + 2 / 3) / 2
        assert explore.ndcg_at_k([3, 2, 1], 3) == 1.0
        report = explore.evaluate(matrix, algorithm="cf", k=3)
        assert 0.0 <= report["map_at_k"] <= 1.0 and report["seed"] == 42

        snap = explore.Snapshot.build(
            matrix, os.path.join(root, "catalog.csv"),
            playlist_all_time=os.path.join(root, "best.csv"), dims=4, epochs=10,
        )
        playlist = snap.recommend("user02", k=4, ranges=[("energy", (0.0, 1.0))])
        assert len(playlist["entries"]) == 4, playlist
        crosswalk = snap.recommend("user02", k=3, source="best_of_all_time", algorithm="mf")
        assert all(e["source"] == "CROSSWALK" for e in crosswalk["entries"])

        song = playlist["entries"][0]["song_id"]
        why = snap.explain("user02", song)
        assert why, why

        grown, user_id = snap.cold_start(seeds, "newcomer")
        assert user_id.startswith("~cold:")
        assert grown.matrix.n_users > snap.matrix.n_users
        fresh = grown.recommend(user_id, k=3)
        assert len(fresh["entries"]) == 3

        snap_path = os.path.join(root, "model.xpls")
        grown.save(snap_path)
        loaded = explore.Snapshot.load(snap_path, grown.config_hash)
        assert loaded.recommend(user_id, k=3) == fresh

        for bad in (lambda: snap.recommend("nobody"), lambda: matrix.rating("user00", "zz")):
            try:
                bad()
            except KeyError:
                pass
            else:
                raise AssertionError("expected KeyError")
        try:
            snap.recommend("user02", ranges=[("energy", (0.9, 0.1))])
        except ValueError:
            pass
        else:
            raise AssertionError("expected ValueError")

    print("smoke test ok: %d ratings, MAP@3 %.3f" % (matrix.nnz, report["map_at_k"]))


if __name__ == "__main__":
    main()
