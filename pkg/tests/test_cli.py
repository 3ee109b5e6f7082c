import json

import numpy as np
import pytest

import oracles
from adk import cli
from adk.errors import InvariantViolation
from adk.io import FeatureCache, Kind, bank_from_cache, hand_from_cache, read_cache, write_cache


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def synth(capsys, out, **kw):
    opts = dict(n_classes=5, n_descriptions=6, dim=16, images_per_class=8, separation=0.9, noise=0.1, seed=7)
    opts.update(kw)
    argv = ["synth", "--out", out]
    for k, v in opts.items():
        argv += [f"--{k.replace('_', '-')}", v]
    assert run(capsys, *argv)[0] == 0
    code, _, _ = run(capsys, "build-knowledge", "--desc", out / "descriptions.adkf", "--hand", out / "hand.adkf",
                     "--out", out / "kb.json")
    assert code == 0
    return out


@pytest.fixture
def fixture_dir(tmp_path, capsys):
    return synth(capsys, tmp_path / "fx")


def common(d):
    return ["--images", d / "images.adkf", "--kb", d / "kb.json", "--desc", d / "descriptions.adkf"]


def test_build_knowledge_matches_oracle(fixture_dir):
    kb = json.loads((fixture_dir / "kb.json").read_text())
    names, _ = hand_from_cache(read_cache(fixture_dir / "hand.adkf"))
    bank = bank_from_cache(read_cache(fixture_dir / "descriptions.adkf"), names)
    for n in range(5):
        np.testing.assert_allclose(kb["comp"][n], oracles.mean_rows(bank.features[n].tolist()), atol=1e-12)


def test_build_knowledge_deterministic_and_summary(fixture_dir, capsys):
    first = (fixture_dir / "kb.json").read_bytes()
    code, out, _ = run(capsys, "build-knowledge", "--desc", fixture_dir / "descriptions.adkf",
                       "--hand", fixture_dir / "hand.adkf", "--out", fixture_dir / "kb.json")
    assert code == 0 and (fixture_dir / "kb.json").read_bytes() == first
    summary = json.loads(out)
    assert (summary["N"], summary["M"], summary["D"]) == (5, 6, 16)


def test_missing_file_exit_2(tmp_path, capsys):
    missing = tmp_path / "absent.adkf"
    code, _, err = run(capsys, "build-knowledge", "--desc", missing, "--hand", missing)
    assert code == 2
    assert str(missing) in json.loads(err)["message"]


def test_misaligned_classes_exit_2(fixture_dir, tmp_path, capsys):
    other = synth(capsys, tmp_path / "other", n_classes=4)
    code, _, err = run(capsys, "build-knowledge", "--desc", fixture_dir / "descriptions.adkf",
                       "--hand", other / "hand.adkf")
    assert code == 2 and json.loads(err)["error"] == "SchemaError"


def test_classify_zero_noise(tmp_path, capsys):
    d = synth(capsys, tmp_path / "z", noise=0.0)
    code, _, _ = run(capsys, "classify", *common(d), "--out", d / "c.jsonl")
    assert code == 0
    rows = [json.loads(line) for line in (d / "c.jsonl").read_text().splitlines()]
    assert len(rows) == 40
    assert all(r["predicted"] == r["label"] for r in rows)
    assert len(rows[0]["top_descriptions"]["top"]) == 4


def test_classify_deterministic(fixture_dir, capsys):
    run(capsys, "classify", *common(fixture_dir), "--out", fixture_dir / "a.jsonl")
    run(capsys, "classify", *common(fixture_dir), "--out", fixture_dir / "b.jsonl")
    assert (fixture_dir / "a.jsonl").read_bytes() == (fixture_dir / "b.jsonl").read_bytes()


def test_classify_m_keep_one(fixture_dir, capsys):
    code, out, _ = run(capsys, "classify", *common(fixture_dir), "--m-keep", "1")
    assert code == 0
    for line in out.splitlines():
        r = json.loads(line)
        assert r["p_comp"] == r["p_inst"]


def test_classify_dimension_mismatch(fixture_dir, tmp_path, capsys):
    bad = tmp_path / "bad.adkf"
    write_cache(FeatureCache(Kind.IMAGE, 3, ["x"], np.ones((1, 3)), [0], None), bad)
    code, _, _ = run(capsys, "classify", "--images", bad, "--kb", fixture_dir / "kb.json",
                     "--desc", fixture_dir / "descriptions.adkf")
    assert code == 2


def test_kb_from_other_bank_rejected(fixture_dir, tmp_path, capsys):
    other = synth(capsys, tmp_path / "other", seed=8)
    code, _, err = run(capsys, "classify", "--images", fixture_dir / "images.adkf", "--kb", other / "kb.json",
                       "--desc", fixture_dir / "descriptions.adkf")
    assert code == 2 and "different descriptor cache" in err


def test_eval_base_to_novel_consistency(fixture_dir, capsys):
    code, out, _ = run(capsys, "eval", *common(fixture_dir), "--manifest", fixture_dir / "base_to_novel.json")
    assert code == 0
    r = json.loads(out)
    a, b = r["base_acc"], r["novel_acc"]
    assert r["harmonic_mean"] == pytest.approx(2 * a * b / (a + b), abs=1e-12)
    assert r["display"]["harmonic_mean"] == f"{100 * r['harmonic_mean']:.1f}"


def test_diagnose_identical_prototypes(tmp_path, capsys):
    d = synth(capsys, tmp_path / "z", noise=0.0)
    code, out, _ = run(capsys, "diagnose", *common(d))
    assert code == 0
    r = json.loads(out)
    assert r["kld"]["hand"] == pytest.approx(0.0, abs=1e-12)
    assert len(r["attention"]) == 5


def test_cost_command(capsys):
    code, out, _ = run(capsys, "cost", "-N", 500, "-M", 20, "-D", 512, "--convention", "MAC")
    assert code == 0
    r = json.loads(out)
    assert r["delta_over_clip"]["ADK"] == pytest.approx(0.011, rel=0.2)
    assert r["table"] == {"CLIP": "33.946", "COCOOP": "2943.246", "ADK": "33.957"}


def test_internal_error_exit_3(monkeypatch, capsys):
    def boom(_):
        raise InvariantViolation("broken")
    monkeypatch.setattr(cli, "cmd_cost", boom)
    assert cli.main(["cost"]) == 3
    assert json.loads(capsys.readouterr().err)["exit_code"] == 3


def test_bad_tau_rejected(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["cost", "--tau", "-1"])
    assert exc.value.code == 2
