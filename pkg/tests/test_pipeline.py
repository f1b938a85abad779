import json

import pytest

from seqextract import cli, pipeline, wire

TINY = {
    "run_id": "tiny",
    "seed": 3,
    "dataset": {"fixture_users": 30, "fixture_items": 25},
    "victim": {"dim": 8, "max_len": 8},
    "surrogate": {"dim": 8, "max_len": 8},
    "sampler": {"context_len": 4, "d_model": 8, "meta_dim": 8, "head_dim": 4, "pos_dim": 4},
    "generation": {"sequences": 20, "length": 5, "k": 5},
    "budget": {"attack": 20},
    "few_shot": {"ratio": 0.2},
    "training": {"victim_epochs": 2, "augmentor_epochs": 2, "distill_epochs": 2},
}


def test_empty_config_gives_fixture_defaults(tmp_path):
    f = tmp_path / "c.json"
    f.write_text("")
    cfg = pipeline.validate_config(f)
    assert cfg.dataset.tag == "fixture"
    assert (cfg.loss.rank_margin, cfg.loss.negative_margin) == (0.75, 1.5)
    assert cfg.victim.architecture == "SASRec" and cfg.victim.dim == 32
    assert cfg.generation.policy == "few-shot" and cfg.generation.k == 20 and cfg.generation.length == 20
    assert cfg.budget.attack == 1000 and cfg.budget.mode == "per-sequence"


def test_ml1m_profile():
    cfg = pipeline.validate_config({"dataset": {"tag": "ml-1m", "path": "ratings.dat", "format": "ml-ratings"}})
    assert (cfg.loss.rank_margin, cfg.loss.negative_margin) == (0.75, 1.5)
    assert cfg.victim.dim == 64 and cfg.generation.k == 100 and cfg.budget.attack == 5000


@pytest.mark.parametrize("tag,margins,dropout", [("steam", (0.5, 1.0), 0.2), ("beauty", (0.5, 0.5), 0.5)])
def test_other_profiles(tag, margins, dropout):
    cfg = pipeline.validate_config({"dataset": {"tag": tag, "path": "x.tsv"}})
    assert (cfg.loss.rank_margin, cfg.loss.negative_margin) == margins
    assert cfg.victim.dropout == dropout


def test_negative_margin_error_has_field_path():
    with pytest.raises(pipeline.ConfigError) as e:
        pipeline.validate_config({"loss": {"rank_margin": -1}})
    assert ("loss.rank_margin", "margins must be >= 0") in e.value.errors


def test_errors_are_aggregated():
    with pytest.raises(pipeline.ConfigError) as e:
        pipeline.validate_config(
            {"loss": {"rank_margin": -1}, "victim": {"dim": "big"}, "few_shot": {"ratio": 2}, "bogus": 1,
             "generation": {"policy": "nope"}}
        )
    paths = {p for p, _ in e.value.errors}
    assert {"loss.rank_margin", "victim.dim", "few_shot.ratio", "bogus", "generation.policy"} <= paths


def test_bert_gets_profile_mask_prob_and_narm_one_layer():
    cfg = pipeline.validate_config({"victim": {"architecture": "BERT4Rec"}, "surrogate": {"architecture": "NARM"}})
    assert cfg.victim.mask_prob == 0.2 and cfg.surrogate.mask_prob is None


def test_budget_must_cover_sequences():
    with pytest.raises(pipeline.ConfigError) as e:
        pipeline.validate_config({"generation": {"sequences": 2000}})
    assert e.value.errors[0][0] == "generation.sequences"


def test_env_budget_override(monkeypatch):
    cfg = pipeline.validate_config({})
    monkeypatch.setenv(pipeline.ATTACK_ENV, "7")
    assert cfg.budget.build().limits["attack"] == 7
    monkeypatch.setenv(pipeline.ATTACK_ENV, "none")
    assert cfg.budget.build().limits["attack"] is None


def test_stage_seeds_depend_only_on_name():
    assert pipeline.stage_seed(0, "generate") == pipeline.stage_seed(0, "generate")
    assert pipeline.stage_seed(0, "generate") != pipeline.stage_seed(0, "distill")
    assert pipeline.stage_seed(0, "generate") != pipeline.stage_seed(1, "generate")


def test_generate_without_augmentor_names_stage(tmp_path):
    pipe = pipeline.Pipeline(pipeline.validate_config(TINY), tmp_path)
    pipe.run(["prepare", "train-victim"])
    with pytest.raises(pipeline.StageError) as e:
        pipe.run(["generate"])
    assert e.value.needs == "train-augmentor"


def test_missing_data_names_prepare(tmp_path):
    with pytest.raises(pipeline.StageError, match="run stage 'prepare' first"):
        pipeline.run_pipeline(TINY, tmp_path, ["train-victim"])


def test_config_mismatch_in_existing_run_dir(tmp_path):
    pipeline.run_pipeline(TINY, tmp_path, ["prepare"])
    with pytest.raises(pipeline.StageError, match="different config"):
        pipeline.run_pipeline({**TINY, "seed": 4}, tmp_path, ["prepare"])


def test_tiny_pipeline_end_to_end_and_rerun(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    pipeline.run_pipeline(TINY, a)
    pipeline.run_pipeline(TINY, b)
    for rel in ("report.json", "report.csv", "report.md", "victim/params.bin", "surrogate/params.bin",
                "augmentor/params.bin", "corpus.jsonl", "config.json", "data/split.json"):
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel
    rep = json.loads((a / "report.json").read_text())["tiny"]
    assert set(rep["agreement"]) == {"Agr@1", "Agr@10"}
    assert (a / "report.csv").read_text().splitlines()[0] == "label,model,N@10,R@10,Agr@1,Agr@10"
    gen = json.loads((a / "generate_report.json").read_text())
    assert gen["budget"]["used"]["attack"] == 20 and gen["sequences"] == 20


def test_rerunning_a_stage_is_idempotent(tmp_path):
    pipeline.run_pipeline(TINY, tmp_path, ["prepare", "train-victim"])
    first = (tmp_path / "victim" / "params.bin").read_bytes()
    pipeline.run_pipeline(TINY, tmp_path, ["train-victim"])
    assert (tmp_path / "victim" / "params.bin").read_bytes() == first


def test_serve_stage_answers_over_wire(tmp_path):
    pipe = pipeline.Pipeline(pipeline.validate_config(TINY), tmp_path)
    pipe.run(["prepare", "train-victim"])
    server = pipe.stage_serve("127.0.0.1:0", ready=lambda s: None)
    try:
        c = wire.WireClient(*server.server_address[:2])
        token = c.open()
        assert len(c.topk([0, 1], 5, token=token)) == 5
        c.close()
    finally:
        server.shutdown()
        server.server_close()


def test_cli_config_error_json(tmp_path, capsys):
    f = tmp_path / "c.json"
    f.write_text(json.dumps({"loss": {"rank_margin": -1}}))
    code = cli.main(["prepare", "--config", str(f), "--run-dir", str(tmp_path / "run")])
    err = json.loads(capsys.readouterr().err)
    assert code == 2 and err["error"] == "config_invalid"
    assert {"path": "loss.rank_margin", "message": "margins must be >= 0"} in err["fields"]


def test_cli_stage_error_json(tmp_path, capsys):
    f = tmp_path / "c.json"
    f.write_text(json.dumps(TINY))
    code = cli.main(["distill", "--config", str(f), "--run-dir", str(tmp_path / "run")])
    err = json.loads(capsys.readouterr().err)
    assert code == 1 and err["error"] == "stage_failed" and err["run_first"] == "generate"


def test_cli_success_and_config_reuse(tmp_path):
    f = tmp_path / "c.json"
    f.write_text(json.dumps(TINY))
    run = tmp_path / "run"
    assert cli.main(["prepare", "--config", str(f), "--run-dir", str(run)]) == 0
    # later stages pick up the persisted config
    assert cli.main(["train-victim", "--run-dir", str(run)]) == 0
    assert (run / "victim" / "manifest.json").exists()


def test_cli_rejects_serve_in_batch(tmp_path, capsys):
    assert cli.main(["all", "--run-dir", str(tmp_path), "--stages", "prepare,serve"]) == 2
