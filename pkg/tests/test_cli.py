import json

import numpy as np
import pytest

from lnpsnn.cli import SCHEMA, UsageError, load_config, main, summarize
from lnpsnn.data import load_csv, lorenz63
from lnpsnn.evaluate import EvalReport
from lnpsnn.network import Network
from lnpsnn.pruning import PruneTrace

SMALL = {
    "network": {"n": 30, "k": 4},
    "lnp": {"iterations": 1, "sim_steps": 600, "burn_in": 100, "lyap_steps": 20,
            "lyap_sequences": 1},
    "ap": {"max_iters": 2, "sim_steps": 50},
    "data": {"name": "lorenz63", "n": 1500, "n_train": 800, "n_val": 300, "n_test": 400},
    "eval": {"train_len": 400, "warmup": 40, "horizon": 10, "n_windows": 2, "substeps": 2},
}


@pytest.fixture
def small_cfg(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(SMALL))
    return str(p)


class TestConfig:
    def test_defaults(self):
        cfg = load_config()
        assert cfg["network"]["n"] == 200 and cfg["lnp"]["iterations"] == 10

    def test_merge_and_seed(self, small_cfg):
        cfg = load_config(small_cfg, seed=7)
        assert cfg["seed"] == 7 and cfg["network"]["n"] == 30 and cfg["network"]["beta"] == 0.1

    @pytest.mark.parametrize("doc", [{"bogus": 1}, {"network": {"n": "big"}},
                                     {"lnp": {"diagonal_mode": "off"}}, {"eval": {"substeps": 0}}])
    def test_rejects(self, tmp_path, doc):
        p = tmp_path / "c.json"
        p.write_text(json.dumps(doc))
        with pytest.raises(UsageError):
            load_config(p)

    def test_missing_and_malformed(self, tmp_path):
        with pytest.raises(UsageError):
            load_config(tmp_path / "none.json")
        p = tmp_path / "c.json"
        p.write_text("{not json")
        with pytest.raises(UsageError):
            load_config(p)

    def test_schema_closed(self):
        assert SCHEMA["additionalProperties"] is False


class TestExitCodes:
    def test_unknown_dataset(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["gen-data", "henon", "--out", str(tmp_path)])
        assert exc.value.code == 2

    def test_missing_network(self, tmp_path):
        assert main(["eval", "--network", str(tmp_path / "x.json"), "--out", str(tmp_path)]) == 2

    def test_csv_without_path(self, tmp_path):
        assert main(["gen-data", "csv", "--out", str(tmp_path)]) == 2

    def test_random_match_needs_reference(self, tmp_path, small_cfg):
        assert main(["init-net", "--config", small_cfg, "--out", str(tmp_path)]) == 0
        assert main(["prune", "--method", "random-match", "--network",
                     str(tmp_path / "network.json"), "--out", str(tmp_path)]) == 2

    def test_split_overflow_is_usage(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"data": {"n": 100}}))
        assert main(["pipeline", "--config", str(p), "--out", str(tmp_path)]) == 2


class TestGenData:
    def test_deterministic_bytes(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["gen-data", "lorenz63", "--out", str(a)]) == 0
        assert main(["gen-data", "lorenz63", "--out", str(b)]) == 0
        fa = sorted(a.glob("*.csv"))
        fb = sorted(b.glob("*.csv"))
        assert len(fa) == 1 and fa[0].name == fb[0].name
        assert fa[0].read_bytes() == fb[0].read_bytes()
        np.testing.assert_array_equal(load_csv(fa[0], 0.01).values, lorenz63().values)
        manifest = json.loads(fa[0].with_suffix(".json").read_text())
        assert manifest["rows"] == 20000 and "version" in manifest and "config" in manifest

    def test_ingest_csv(self, tmp_path):
        src = tmp_path / "in.csv"
        src.write_text("a,b\n1,2\n3,4\n")
        assert main(["gen-data", "csv", "--path", str(src), "--out", str(tmp_path / "o")]) == 0
        out = list((tmp_path / "o").glob("csv_*.csv"))
        np.testing.assert_array_equal(load_csv(out[0]).values, [[1, 2], [3, 4]])


class TestPipeline:
    def test_init_net_deterministic(self, tmp_path, small_cfg):
        for d in ("a", "b"):
            assert main(["init-net", "--config", small_cfg, "--out", str(tmp_path / d)]) == 0
        a = json.loads((tmp_path / "a" / "network.json").read_text())
        b = json.loads((tmp_path / "b" / "network.json").read_text())
        assert a == b and a["config"]["network"]["n"] == 30
        assert Network.from_json(tmp_path / "a" / "network.json").n == 30

    @pytest.mark.parametrize("method", ["lnp", "lyapunov", "ap"])
    def test_pipeline(self, tmp_path, small_cfg, method):
        assert main(["pipeline", "--config", small_cfg, "--method", method,
                     "--out", str(tmp_path)]) == 0
        rep = json.loads((tmp_path / "report.json").read_text())
        assert {"vpt", "total_sops", "sop_ratio", "efficiency", "config", "version"} <= set(rep)
        pruned = Network.from_json(tmp_path / f"pruned_{method}.json")
        assert pruned.n_alive < 30
        trace = PruneTrace.from_csv(tmp_path / f"trace_{method}.csv")
        assert trace.rows[-1].neurons == pruned.n_alive
        assert (tmp_path / "rmse.csv").read_bytes().startswith(b"step,rmse\r\n")

    def test_random_match(self, tmp_path, small_cfg):
        assert main(["pipeline", "--config", small_cfg, "--method", "lnp",
                     "--out", str(tmp_path)]) == 0
        ref = PruneTrace.from_csv(tmp_path / "trace_lnp.csv")
        assert main(["prune", "--config", small_cfg, "--method", "random-match",
                     "--network", str(tmp_path / "network.json"),
                     "--reference-trace", str(tmp_path / "trace_lnp.csv"),
                     "--out", str(tmp_path)]) == 0
        net = Network.from_json(tmp_path / "pruned_random-match.json")
        assert net.n_alive == ref.rows[-1].neurons
        assert net.n_edges == ref.rows[-1].edges


class TestSummarize:
    def test_mean_std(self):
        reps = [EvalReport(np.zeros(2), v, 10, 1.0, v / 10, {"mean_rmse": r})
                for v, r in ((2, 0.5), (4, 0.7))]
        doc = summarize(reps)
        assert doc["vpt_mean"] == 3.0 and doc["vpt_std"] == 1.0
        assert doc["mean_rmse_mean"] == pytest.approx(0.6) and doc["n_seeds"] == 2
