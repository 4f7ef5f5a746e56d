"""Smoke test for the fedrank_py extension.

Build and install first:
    maturin build --release -m crates/py/Cargo.toml -o dist && pip install dist/fedrank_py-*.whl
"""

import math
import tempfile
from pathlib import Path

import fedrank_py as fr


def main():
    ds = fr.Dataset.synth(seed=1, queries=12, topics=2, resources_per_topic=3)
    assert len(ds.query_ids()) == 12
    assert len(ds.resource_ids()) == 6
    emb = fr.Embeddings.synthetic(ds, dim=16, seed=1)
    assert emb.queries.dim == 16 and len(emb.documents) == 6 * 12

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        ds.save(str(tmp / "ds"))
        again = fr.Dataset.load(str(tmp / "ds"))
        assert again.query_ids() == ds.query_ids()
        emb.queries.write(str(tmp / "q.emb"))
        store = fr.EmbeddingStore.read(str(tmp / "q.emb"), "query")
        assert store.ids() == emb.queries.ids()

        config = fr.Config(epochs=20, folds=3, seed=1)
        graph, resources = fr.build_graph(ds, emb, config)
        n_res, n_q, n_qr, n_rr = graph.stats()
        assert (n_res, n_q) == (6, 12) and n_qr > 0 and n_rr <= 15
        graph.write(str(tmp / "g.bin"))
        assert fr.Graph.read(str(tmp / "g.bin")).stats() == graph.stats()

        model, losses = fr.train(ds, emb, config)
        assert len(losses) == 20 and all(math.isfinite(x) for x in losses)
        model.save(str(tmp / "m.ckpt"))
        model = fr.Model.load(str(tmp / "m.ckpt"))
        ranked = model.rank(emb.queries.get("Q0000"), resources)
        assert sorted(r for r, _ in ranked) == resources.ids()

    baseline = fr.fedbert_rank(resources.get(resources.ids()[0]), resources)
    assert baseline[0][0] == resources.ids()[0]

    assert abs(fr.evaluate("ndcg@2", ["a", "b", "c"], {"a": 3, "b": 1, "c": 2}) - 0.85810) < 1e-5

    for ranker in ("fedgnn", "fedbert", "random"):
        scores = fr.cross_validate(ds, emb, ranker, config, ["ndcg@10", "np@5"])
        assert set(scores) == {"nDCG@10", "nP@5"}
        assert all(0.0 <= v <= 1.0 for v in scores.values())
        print(ranker, {k: round(v, 4) for k, v in scores.items()})

    rows = fr.sweep_lambda(ds, emb, fr.Config(epochs=5, folds=3), [0.0, 1.0])
    assert len(rows) == 2 and rows[1][1] == 0

    try:
        fr.Config(lam=2.0)
    except ValueError:
        pass
    else:
        raise AssertionError("lambda outside [0, 1] accepted")
    print("ok")


if __name__ == "__main__":
    main()
