import json

import numpy as np
import pytest

from supcon_lab import runner
from supcon_lab.cli import main
from supcon_lab.config import config_from_dict, load_config
from supcon_lab.data import load_embeddings
from supcon_lab.errors import ConfigError

TINY = {
    "name": "tiny",
    "batch_size": 16,
    "max_epochs": 2,
    "stage2_max_epochs": 2,
    "target_frames": 6,
    "model": {"input_dim": 8, "hidden_dim": 8, "feature_dim": 8, "embed_dim": 16},
    "data": {"synthetic": {"dim": 8, "frames": 6, "n_train": 64, "n_dev": 32, "n_eval": 32, "seed": 5}},
}


def write_json(path, obj):
    path.write_text(json.dumps(obj))
    return path


@pytest.fixture
def tiny_cfg(tmp_path):
    return write_json(tmp_path / "tiny.json", TINY)


def test_unknown_keys_are_rejected(tmp_path, capsys):
    for bad in ({**TINY, "temprature": 0.3},
                {**TINY, "model": {**TINY["model"], "layers": 3}},
                {**TINY, "data": {"synthetic": {"dim": 8, "colour": 1}}}):
        path = write_json(tmp_path / "bad.json", bad)
        with pytest.raises(ConfigError, match="unknown key"):
            load_config(path)
        assert main(["train", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
        assert not (tmp_path / "o").exists()
    assert "unknown key" in capsys.readouterr().err


def test_config_round_trip(tmp_path):
    cfg = config_from_dict(TINY)
    from supcon_lab.config import save_config

    save_config(cfg, tmp_path / "c.json")
    assert load_config(tmp_path / "c.json") == cfg
    assert load_config(tmp_path / "c.json").config_hash() == cfg.config_hash()
    assert cfg.replace(seed=2).config_hash() != cfg.config_hash()


def test_invalid_values():
    with pytest.raises(ConfigError):
        config_from_dict({**TINY, "similarity": "euclid"})
    with pytest.raises(ConfigError):
        config_from_dict({**TINY, "data": {}})
    with pytest.raises(ConfigError):
        config_from_dict({**TINY, "model": {**TINY["model"], "input_dim": 4}})


def test_generate_data(tmp_path, tiny_cfg):
    assert main(["generate-data", "--config", str(tiny_cfg), "--out", str(tmp_path / "d")]) == 0
    manifest = json.loads((tmp_path / "d" / "manifest.json").read_text())
    assert manifest["splits"]["train"]["count"] == 64
    assert manifest["spec"]["seed"] == 5


def test_train_writes_artifacts_and_row(tmp_path, tiny_cfg):
    out = tmp_path / "run"
    assert main(["train", "--config", str(tiny_cfg), "--out", str(out)]) == 0
    for name in ("config.json", "train_log.jsonl", "stage1.ckpt.npz", "final.ckpt.npz", "result.json"):
        assert (out / name).exists(), name
    for split in ("eval_id", "eval_ood_wild", "eval_ood_df", "eval_ood_la"):
        assert len((out / "scores" / f"{split}.txt").read_text().splitlines()) == 32
    rows = runner.read_results(out / "results.csv")
    assert len(rows) == 1
    row = rows[0]
    assert (row["similarity"], row["tau"], row["queue_capacity"], row["e_start"], row["seed"]) == ("cosine", 0.3, 0, 6, 1337)
    assert row["status"] == "ok" and runner.is_finite_row(row)
    assert row["pooled_eer"] == pytest.approx(
        sum(row[f"eer_{r}"] for r in ("in_domain", "ood_wild", "ood_df", "ood_la")) / 4)
    log = [json.loads(line) for line in (out / "train_log.jsonl").read_text().splitlines()]
    assert {"epoch", "stage", "mean_loss", "dev_eer", "queue_len", "queue_enabled", "wall_time_s"} <= set(log[0])
    assert [r["stage"] for r in log] == ["stage1"] * 2 + ["stage2"] * 2


def test_staged_training_and_evaluate(tmp_path, tiny_cfg, capsys):
    out = tmp_path / "run"
    assert main(["train", "--config", str(tiny_cfg), "--out", str(out), "--stage", "1"]) == 0
    assert runner.read_results(out / "results.csv")[0]["status"] == "stage1-only"
    assert not (out / "final.ckpt.npz").exists()
    assert main(["evaluate", "--checkpoint", str(out / "stage1.ckpt.npz"), "--config", str(tiny_cfg),
                 "--out", str(tmp_path / "ev")]) == 2
    assert main(["train", "--config", str(tiny_cfg), "--out", str(tmp_path / "run2"), "--stage", "2",
                 "--checkpoint", str(out / "stage1.ckpt.npz")]) == 0
    capsys.readouterr()
    assert main(["evaluate", "--checkpoint", str(tmp_path / "run2" / "final.ckpt.npz"), "--config",
                 str(tiny_cfg), "--out", str(tmp_path / "ev")]) == 0
    summary = json.loads(capsys.readouterr().out)
    row = runner.read_results(tmp_path / "run2" / "results.csv")[0]
    for role in ("in_domain", "ood_wild", "ood_df", "ood_la"):
        assert summary[role] == row[f"eer_{role}"]


def test_baseline_row(tmp_path):
    cfg = write_json(tmp_path / "b.json", {**TINY, "mode": "baseline"})
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "b")]) == 0
    raw = (tmp_path / "b" / "results.csv").read_text().splitlines()[1].split(",")
    header = (tmp_path / "b" / "results.csv").read_text().splitlines()[0].split(",")
    row = dict(zip(header, raw))
    assert row["similarity"] == "none" and row["tau"] == "" and row["mode"] == "baseline"


def test_rerun_gives_identical_row_and_checkpoints(tmp_path, tiny_cfg):
    rows = []
    for k in range(2):
        main(["train", "--config", str(tiny_cfg), "--out", str(tmp_path / f"r{k}"),
              "--results", str(tmp_path / "all.csv")])
    rows = runner.read_results(tmp_path / "all.csv")
    strip = [{k: v for k, v in r.items() if k not in runner.VOLATILE_COLUMNS} for r in rows]
    assert strip[0] == strip[1] and rows[0]["run_id"] != rows[1]["run_id"]
    for ck in ("stage1.ckpt.npz", "final.ckpt.npz"):
        assert (tmp_path / "r0" / ck).read_bytes() == (tmp_path / "r1" / ck).read_bytes()


def test_seed_override(tmp_path, tiny_cfg):
    main(["train", "--config", str(tiny_cfg), "--out", str(tmp_path / "r"), "--seed", "9", "--stage", "1"])
    assert runner.read_results(tmp_path / "r" / "results.csv")[0]["seed"] == 9


def test_failure_leaves_marker_and_row(tmp_path):
    (tmp_path / "m.json").write_text(json.dumps({"format": "supcon-lab-dataset", "version": 1, "splits": {}}))
    cfg = write_json(tmp_path / "c.json", {**TINY, "data": {"manifest": "m.json"}})
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "run")]) == 2
    assert "not found" in (tmp_path / "run" / "FAILED").read_text()
    assert runner.read_results(tmp_path / "run" / "results.csv")[0]["status"] == "failed"


def sweep_file(tmp_path, **axes):
    return write_json(tmp_path / "sweep.json", {"base": TINY, "jobs": 0, **axes})


def test_temperature_sweep_rows(tmp_path):
    path = sweep_file(tmp_path, similarities=["cosine", "geodesic"], temperatures=[0.07, 0.1, 0.3, 0.6], jobs=2)
    assert main(["sweep", "--config", str(path), "--out", str(tmp_path / "s")]) == 0
    rows = runner.read_results(tmp_path / "s" / "results.csv")
    assert len(rows) == 8
    got = sorted((r["similarity"], r["tau"]) for r in rows)
    assert got == sorted((s, t) for s in ("cosine", "geodesic") for t in (0.07, 0.1, 0.3, 0.6))
    assert all(r["status"] == "ok" and runner.is_finite_row(r) for r in rows)


def test_queue_sweep_uses_best_temperatures(tmp_path):
    path = sweep_file(tmp_path, similarities=["cosine", "geodesic"], queue_capacities=[0, 128],
                      best_temperature={"cosine": 0.3, "geodesic": 0.07})
    spec = runner.load_sweep(path)
    names = [c.name for c in runner.expand_sweep(spec)]
    assert names == ["cosine-tau0.3-q0", "cosine-tau0.3-q128", "geodesic-tau0.07-q0", "geodesic-tau0.07-q128"]


def test_best_temperature_from_results(tmp_path):
    csv_path = tmp_path / "r.csv"
    for sim, tau, pooled in (("cosine", 0.1, 9.0), ("cosine", 0.3, 5.0), ("geodesic", 0.07, 4.0), ("geodesic", 0.6, 4.0)):
        runner.append_row(csv_path, {"mode": "supcon", "similarity": sim, "tau": tau, "queue_capacity": 0,
                                     "pooled_eer": pooled, "status": "ok"})
    assert runner.best_temperatures(csv_path) == {"cosine": 0.3, "geodesic": 0.07}
    path = sweep_file(tmp_path, similarities=["cosine", "geodesic"], queue_capacities=[0, 512], tau_from="r.csv")
    taus = {c.similarity: c.temperature for c in runner.expand_sweep(runner.load_sweep(path))}
    assert taus == {"cosine": 0.3, "geodesic": 0.07}


def test_sweep_with_baseline(tmp_path):
    path = sweep_file(tmp_path, similarities=["cosine"], temperatures=[0.3], include_baseline=True)
    configs = runner.expand_sweep(runner.load_sweep(path))
    assert [c.mode for c in configs] == ["baseline", "supcon"]


def test_empty_axis_is_rejected(tmp_path):
    path = sweep_file(tmp_path, similarities=["cosine"], temperatures=[])
    assert main(["sweep", "--config", str(path), "--out", str(tmp_path / "s")]) == 2
    assert not (tmp_path / "s").exists()
    with pytest.raises(ConfigError):
        runner.load_sweep(write_json(tmp_path / "x.json", {"base": TINY, "temperatures": [0.3], "grid": 1}))


def test_export_embeddings(tmp_path, tiny_cfg):
    out = tmp_path / "run"
    main(["train", "--config", str(tiny_cfg), "--out", str(out), "--stage", "1"])
    args = ["export-embeddings", "--checkpoint", str(out / "stage1.ckpt.npz"), "--config", str(tiny_cfg),
            "--split", "eval_ood_wild", "--target-frames", "6"]
    assert main(args + ["--out", str(tmp_path / "a.jsonl")]) == 0
    assert main(args + ["--out", str(tmp_path / "b.jsonl")]) == 0
    text = (tmp_path / "a.jsonl").read_text()
    assert len(text.splitlines()) == 32
    assert text == (tmp_path / "b.jsonl").read_text()
    for line in text.splitlines():
        v = np.array(json.loads(line)["vector"])
        assert abs(np.linalg.norm(v) - 1) < 1e-12
    assert main(args[:-2] + ["--split", "nope", "--out", str(tmp_path / "c.jsonl")]) == 2


def test_exported_embeddings_train_through_identity_encoder(tmp_path, tiny_cfg):
    out = tmp_path / "run"
    main(["train", "--config", str(tiny_cfg), "--out", str(out), "--stage", "1"])
    d = tmp_path / "emb"
    d.mkdir()
    splits = {}
    for split in ("train", "dev", "eval_id", "eval_ood_wild", "eval_ood_df", "eval_ood_la"):
        main(["export-embeddings", "--checkpoint", str(out / "stage1.ckpt.npz"), "--config", str(tiny_cfg),
              "--split", split, "--target-frames", "6", "--out", str(d / f"{split}.jsonl")])
        splits[split] = {"path": f"{split}.jsonl"}
    write_json(d / "manifest.json", {"format": "supcon-lab-dataset", "version": 1, "splits": splits})
    cfg = write_json(tmp_path / "e.json", {
        "name": "emb", "max_epochs": 2, "stage2_max_epochs": 3, "target_frames": 1, "batch_size": 16,
        "model": {"input_dim": 16, "embed_dim": 8, "encoder": "identity"},
        "data": {"manifest": "emb/manifest.json"},
    })
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "er")]) == 0
    assert runner.read_results(tmp_path / "er" / "results.csv")[0]["status"] == "ok"
    assert len(list(load_embeddings(d / "dev.jsonl"))) == 32


def test_score_verb(tmp_path, capsys):
    (tmp_path / "s.txt").write_text("a 0.9\nb 0.8\nc 0.4\nd 0.6\ne 0.2\nf 0.1\n")
    (tmp_path / "l.txt").write_text("a bonafide\nb bonafide\nc bonafide\nd spoof\ne spoof\nf spoof\n")
    assert main(["score", "--scores", str(tmp_path / "s.txt"), "--labels", str(tmp_path / "l.txt")]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["eer"] == pytest.approx(100 / 3)
    (tmp_path / "l.txt").write_text("a bonafide\n")
    assert main(["score", "--scores", str(tmp_path / "s.txt"), "--labels", str(tmp_path / "l.txt")]) == 2


def test_csv_round_trip(tmp_path):
    row = {k: None for k in runner.RESULT_COLUMNS}
    row.update(run_id="x-1", name="n", mode="supcon", similarity="geodesic", tau=0.07, queue_capacity=128,
               e_start=6, seed=1337, eer_in_domain=0.1 + 0.2, pooled_eer=1 / 3, status="ok", config_hash="h")
    runner.append_row(tmp_path / "r.csv", row)
    assert runner.read_results(tmp_path / "r.csv") == [row]
