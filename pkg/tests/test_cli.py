"""End-to-end command-line behaviour on a small synthetic corpus."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import pytest

from advframe.checkpoint import load_checkpoint
from advframe.cli import EXIT_INVALID, EXIT_OK, EXIT_RUNTIME, main
from advframe.config import RunConfig
from advframe.corpus import FrameLexicon, read_corpus
from advframe.metrics import sweep_delta
from advframe.tagger import Tagger

SMALL_SYNTH = """
[synth]
n_train_written = 80
n_train_spoken = 30
n_test = 25
[net]
hidden_size = 8
n_layers = 1
conv_channels = 4
embedding_dims = [8, 4, 4, 4]
[probe]
epochs = 2
[experiment]
seeds = [1, 2]
epochs = 2
figures = false
"""


def _sha(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _tree_hashes(root: Path) -> dict[str, str]:
    return {str(p.relative_to(root)): _sha(p) for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "small.toml").write_text(SMALL_SYNTH)
    assert main(["gen-synth", "--config", str(root / "small.toml"), "--out", str(root / "syn")]) == EXIT_OK
    syn = root / "syn"
    train_cfg = SMALL_SYNTH + f"""
[paths]
lexicon = "{syn / 'lexicon.json'}"
train = [{{path = "{syn / 'written.conll'}", domain = 0, split = "train"}},
         {{path = "{syn / 'spoken_asr.conll'}", domain = 1, split = "train"}}]
val = {{path = "{syn / 'spoken_asr.conll'}", domain = 1, split = "val"}}
[train]
epochs = 3
batch_size = 16
"""
    (root / "train.toml").write_text(train_cfg)
    assert main(["train", "--config", str(root / "train.toml"), "--out", str(root / "model"),
                 "--mode", "adversarial"]) == EXIT_OK
    return root


def _manifest(out: Path) -> dict:
    return json.loads((out / "manifest.json").read_text())


def test_gen_synth_outputs_and_manifest(work):
    syn = work / "syn"
    for name in ("written.conll", "spoken_gold.conll", "spoken_asr.conll", "lexicon.json", "stats.json"):
        assert (syn / name).is_file()
    m = _manifest(syn)
    assert m["command"] == "gen-synth" and m["seed"] == 7
    assert m["config_hash"] == RunConfig.from_dict(m["config"]).hash()
    assert m["outputs"]["lexicon.json"] == _sha(syn / "lexicon.json")
    assert set(m["versions"]) >= {"advframe", "numpy", "python"}
    stats = json.loads((syn / "stats.json").read_text())
    assert 0.05 <= stats["corpus_wer"] <= 0.25


def test_command_is_reproducible_from_manifest(work, tmp_path):
    m = _manifest(work / "syn")
    cfg = RunConfig.from_dict(m["config"])
    (tmp_path / "echo.toml").write_text(cfg.dumps())
    assert main(["gen-synth", "--config", str(tmp_path / "echo.toml"), "--seed", str(m["seed"]),
                 "--out", str(tmp_path / "again")]) == EXIT_OK
    assert _manifest(tmp_path / "again")["outputs"] == m["outputs"]


def test_train_writes_checkpoint_and_lambda_log(work):
    log = [json.loads(line) for line in (work / "model" / "train_log.jsonl").read_text().splitlines()]
    assert [r["epoch"] for r in log] == [0, 1, 2]
    assert log[0]["lambda"] == 0.0
    assert log[-1]["lambda"] == pytest.approx(0.9999, abs=1e-4)
    params, header = load_checkpoint(work / "model" / "model.ckpt")
    assert header["meta"]["tagger"]["labels"]
    assert _manifest(work / "model")["outputs"]["model.ckpt"] == _sha(work / "model" / "model.ckpt")


def test_train_rerun_gives_identical_checkpoint(work, tmp_path):
    assert main(["train", "--config", str(work / "train.toml"), "--out", str(tmp_path),
                 "--mode", "adversarial"]) == EXIT_OK
    assert _sha(tmp_path / "model.ckpt") == _sha(work / "model" / "model.ckpt")


def test_adversarial_single_domain_is_a_validation_error(work, tmp_path, capsys):
    syn = work / "syn"
    text = SMALL_SYNTH + f"""
[paths]
lexicon = "{syn / 'lexicon.json'}"
train = [{{path = "{syn / 'written.conll'}", domain = 0, split = "train"}}]
[train]
epochs = 1
"""
    (tmp_path / "one.toml").write_text(text)
    assert main(["train", "--config", str(tmp_path / "one.toml"), "--out", str(tmp_path / "a"),
                 "--mode", "adversarial"]) == EXIT_INVALID
    assert "two domains" in capsys.readouterr().err
    assert main(["train", "--config", str(tmp_path / "one.toml"), "--out", str(tmp_path / "b"),
                 "--mode", "baseline"]) == EXIT_OK


def test_predict_then_eval_gold_as_prediction_is_perfect(work, tmp_path, capsys):
    syn = work / "syn"
    gold = syn / "spoken_gold.conll"
    assert main(["eval", "--gold", str(gold), "--pred", str(gold), "--lexicon", str(syn / "lexicon.json"),
                 "--out", str(tmp_path / "perfect")]) == EXIT_OK
    report = json.loads((tmp_path / "perfect" / "report.json").read_text())
    assert report["fi"]["f1"] == 1.0 and report["ai"]["f1"] == 1.0
    assert (tmp_path / "perfect" / "pr_curve.png").stat().st_size > 0
    assert (tmp_path / "perfect" / "curve.tsv").read_text().startswith("delta\t")

    assert main(["predict", "--checkpoint", str(work / "model" / "model.ckpt"), "--lexicon",
                 str(syn / "lexicon.json"), "--input", str(gold), "--out", str(tmp_path / "pred")]) == EXIT_OK
    assert main(["eval", "--gold", str(gold), "--pred", str(tmp_path / "pred" / "predictions.conll"),
                 "--lexicon", str(syn / "lexicon.json"), "--out", str(tmp_path / "scored"),
                 "--no-figures"]) == EXIT_OK
    assert not (tmp_path / "scored" / "pr_curve.png").exists()
    assert "FI P=" in capsys.readouterr().out


def test_tune_delta_matches_library_sweep(work, tmp_path, capsys):
    syn = work / "syn"
    lexicon = FrameLexicon.load(syn / "lexicon.json")
    corpus = read_corpus(syn / "spoken_asr.conll", lexicon)
    args = ["tune-delta", "--checkpoint", str(work / "model" / "model.ckpt"), "--lexicon",
            str(syn / "lexicon.json"), "--corpus", str(syn / "spoken_asr.conll"), "--grid", "-0.4:0.4:0.1",
            "--out", str(tmp_path)]
    assert main(args) == EXIT_OK
    printed = capsys.readouterr().out
    params, header = load_checkpoint(work / "model" / "model.ckpt")
    tagger = Tagger.from_description(header["meta"]["tagger"])
    grid = [round(-0.4 + 0.1 * k, 10) for k in range(9)]
    expected = sweep_delta(tagger, params, corpus, lexicon, grid).fmax.delta
    assert f"fmax_delta={expected:g}" in printed
    assert json.loads((tmp_path / "tune.json").read_text())["fmax_delta"] == expected


def test_eval_with_checkpoint_sweeps(work, tmp_path):
    syn = work / "syn"
    assert main(["eval", "--gold", str(syn / "spoken_asr.conll"), "--checkpoint",
                 str(work / "model" / "model.ckpt"), "--lexicon", str(syn / "lexicon.json"),
                 "--grid", "-0.2,0,0.2", "--out", str(tmp_path)]) == EXIT_OK
    report = json.loads((tmp_path / "report.json").read_text())
    assert [pt["delta"] for pt in report["curve"]] == [-0.2, 0.0, 0.2]
    assert "wer" in report["breakdowns"]


def test_align_project_identity(work, tmp_path):
    syn = work / "syn"
    ref = syn / "written.conll"
    lexicon = FrameLexicon.load(syn / "lexicon.json")
    corpus = read_corpus(ref, lexicon)
    (tmp_path / "hyp.txt").write_text("".join(" ".join(t.surface for t in s.tokens) + "\n" for s in corpus))
    assert main(["align-project", "--ref", str(ref), "--hyp", str(tmp_path / "hyp.txt"), "--lexicon",
                 str(syn / "lexicon.json"), "--out", str(tmp_path / "out")]) == EXIT_OK
    stats = json.loads((tmp_path / "out" / "projection_stats.json").read_text())
    assert stats["corpus_wer"] == 0.0 and stats["excluded"] == []
    projected = read_corpus(tmp_path / "out" / "projected.conll", lexicon)
    assert [s.gold for s in projected] == [s.gold for s in corpus]
    assert [[t.surface for t in s.tokens] for s in projected] == [[t.surface for t in s.tokens] for s in corpus]


def test_commands_do_not_touch_inputs(work, tmp_path):
    before = _tree_hashes(work / "syn")
    syn = work / "syn"
    main(["predict", "--checkpoint", str(work / "model" / "model.ckpt"), "--lexicon", str(syn / "lexicon.json"),
          "--input", str(syn / "written.conll"), "--out", str(tmp_path / "p")])
    main(["eval", "--gold", str(syn / "written.conll"), "--pred", str(syn / "written.conll"),
          "--lexicon", str(syn / "lexicon.json"), "--out", str(tmp_path / "e"), "--no-figures"])
    assert _tree_hashes(work / "syn") == before


def test_experiment_with_zero_epochs_ties(work, tmp_path, capsys):
    assert main(["experiment", "--config", str(work / "small.toml"), "--data", str(work / "syn"),
                 "--epochs", "0", "--seeds", "3", "--out", str(tmp_path)]) == EXIT_OK
    report = json.loads((tmp_path / "report.json").read_text())
    rows = report["table"]
    assert rows["biGRU"] == rows["biGRU+adv"]
    header = (tmp_path / "table.tsv").read_text().splitlines()[0].split("\t")
    assert header == ["model", "FI GOLD", "FI ASR", "AI GOLD", "AI ASR", "probe_accuracy"]
    assert "asr_ai_adversarial_ge_baseline" in capsys.readouterr().out


# --- exit codes ------------------------------------------------------------------

def test_exit_codes_for_bad_invocations(tmp_path, capsys):
    assert main([]) == EXIT_INVALID
    assert main(["train"]) == EXIT_INVALID  # --out missing
    assert main(["train", "--out", str(tmp_path), "--config", str(tmp_path / "none.toml")]) == EXIT_INVALID
    (tmp_path / "bad.toml").write_text("[train]\nmode = 'both'\n")
    assert main(["train", "--out", str(tmp_path), "--config", str(tmp_path / "bad.toml")]) == EXIT_INVALID
    assert main(["train", "--out", str(tmp_path)]) == EXIT_INVALID  # no corpora configured
    err = capsys.readouterr().err
    assert "paths.lexicon" in err or "paths.train" in err


def test_bad_inputs_are_validation_errors(work, tmp_path):
    syn = work / "syn"
    (tmp_path / "broken.conll").write_text("#target 0 0\nx\tx\tN\tI-LU:Nope\n")
    assert main(["eval", "--gold", str(tmp_path / "broken.conll"), "--pred", str(tmp_path / "broken.conll"),
                 "--lexicon", str(syn / "lexicon.json"), "--out", str(tmp_path / "o")]) == EXIT_INVALID
    (tmp_path / "junk.ckpt").write_bytes(b"ADVFCKPT\x01")
    assert main(["predict", "--checkpoint", str(tmp_path / "junk.ckpt"), "--lexicon", str(syn / "lexicon.json"),
                 "--input", str(syn / "written.conll"), "--out", str(tmp_path / "o")]) == EXIT_INVALID
    assert main(["eval", "--gold", str(syn / "written.conll"), "--lexicon", str(syn / "lexicon.json"),
                 "--out", str(tmp_path / "o")]) == EXIT_INVALID
    assert main(["tune-delta", "--checkpoint", str(work / "model" / "model.ckpt"), "--lexicon",
                 str(syn / "lexicon.json"), "--corpus", str(syn / "written.conll"), "--grid", "0.5:0.1:0.1",
                 "--out", str(tmp_path / "o")]) == EXIT_INVALID


def test_checkpoint_against_other_lexicon_fails_fast(work, tmp_path, capsys):
    other = tmp_path / "other.json"
    FrameLexicon({"x": ["F"]}, {"F": {"A": True}}).save(other)
    assert main(["predict", "--checkpoint", str(work / "model" / "model.ckpt"), "--lexicon", str(other),
                 "--input", str(work / "syn" / "written.conll"), "--out", str(tmp_path / "o")]) == EXIT_INVALID
    assert "label space" in capsys.readouterr().err


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nan_training_is_a_runtime_failure(work, tmp_path):
    text = (work / "train.toml").read_text().replace("epochs = 3", "epochs = 2\nlearning_rate = 1e308")
    (tmp_path / "nan.toml").write_text(text)
    assert main(["train", "--config", str(tmp_path / "nan.toml"), "--out", str(tmp_path / "o")]) == EXIT_RUNTIME
    assert "aborted" in _manifest(tmp_path / "o")
