import json
import random
import shutil

import numpy as np
import pytest

from clampkit import cli, training
from clampkit.checkpoint import load_embeddings
from clampkit.numcore import NumericError

from helpers import FIXTURES

SMALL = {"d_v": 8, "conv_layers": 1, "d_m": 16, "text_layers": 1, "heads": 2, "d": 8, "max_len": 24,
         "cutoff": 5.0, "max_neighbors": 6, "gauss_step": 0.5, "batch_size": 8, "epochs": 1, "seed": 3,
         "val_fraction": 0.2}


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert cli.main(["synth", "--out", str(root / "data"), "--classes", "3", "--per-class", "12"]) == 0
    (root / "cfg.json").write_text(json.dumps(dict(SMALL, manifest="data/manifest.jsonl")))
    assert cli.main(["train", "--config", str(root / "cfg.json"), "--out", str(root / "run")]) == 0
    return root


def test_synth_is_silent(tmp_path, capsys):
    code, out, _ = run(capsys, "synth", "--out", tmp_path, "--classes", "2", "--per-class", "1")
    assert code == 0 and out == ""
    assert len((tmp_path / "manifest.jsonl").read_text().splitlines()) == 2


def test_train_outputs(trained):
    names = sorted(p.name for p in (trained / "run").iterdir())
    assert names == ["best.clmp", "final.clmp", "metrics.json", "timing.json"]
    report = json.loads((trained / "run" / "metrics.json").read_text())
    assert report["seed"] == 3 and len(report["epochs"]) == 1
    val = report["epochs"][0]["val"]
    assert 0 <= val["accuracy_crystal_to_text"] <= 1 and "recall@5_text_to_crystal" in val


def test_train_usage_and_data_errors(trained, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(dict(SMALL)))
    assert run(capsys, "train", "--config", cfg, "--out", tmp_path / "o")[0] == 1
    cfg.write_text(json.dumps(dict(SMALL, typo=1)))
    assert run(capsys, "train", "--config", cfg, "--manifest", trained / "data" / "manifest.jsonl",
               "--out", tmp_path / "o")[0] == 1
    cfg.write_text(json.dumps(dict(SMALL, batch_size=500)))
    code, out, err = run(capsys, "train", "--config", cfg, "--manifest", trained / "data" / "manifest.jsonl",
                         "--out", tmp_path / "o")
    assert code == 2 and out == "" and "batch size" in err
    assert run(capsys, "train", "--manifest", tmp_path / "none.jsonl", "--out", tmp_path / "o")[0] == 2


def test_train_numeric_failure(trained, tmp_path, capsys, monkeypatch):
    def boom(*a, **k):
        raise NumericError("non-finite training loss")
    monkeypatch.setattr(training, "train", boom)
    code, out, _ = run(capsys, "train", "--manifest", trained / "data" / "manifest.jsonl", "--out", tmp_path)
    assert code == 3 and out == ""


def test_validate(tmp_path, capsys):
    for n in ("rocksalt.cif", "partial.cif", "broken.cif"):
        shutil.copy(FIXTURES / n, tmp_path / n)

    def manifest(names):
        path = tmp_path / "m.jsonl"
        path.write_text("".join(json.dumps({"id": n, "cif": n, "text": "t " + n}) + "\n" for n in names))
        return path

    code, out, _ = run(capsys, "validate", "--manifest", manifest(["rocksalt.cif", "partial.cif"]))
    assert code == 0 and json.loads(out)["passed"] == 2
    assert run(capsys, "validate", "--manifest", tmp_path / "m.jsonl", "--exclude-partial")[0] == 2
    code, out, _ = run(capsys, "validate", "--manifest", manifest(["rocksalt.cif", "broken.cif"]),
                       "--out", tmp_path / "r.json")
    assert code == 2 and out == ""
    assert [f["id"] for f in json.loads((tmp_path / "r.json").read_text())["failures"]] == ["broken.cif"]
    assert run(capsys, "validate", "--manifest", tmp_path / "missing.jsonl")[0] == 2


def test_embed(trained, tmp_path, capsys):
    man = trained / "data" / "manifest.jsonl"
    ckpt = trained / "run" / "best.clmp"
    for modality in ("crystal", "text"):
        code, out, _ = run(capsys, "embed", "--ckpt", ckpt, "--manifest", man, "--out",
                           tmp_path / f"{modality}.clmp", "--modality", modality)
        assert code == 0 and out == ""
    ids_c, rows_c, mod_c = load_embeddings(tmp_path / "crystal.clmp")
    ids_t, rows_t, mod_t = load_embeddings(tmp_path / "text.clmp")
    assert ids_c == ids_t and len(ids_c) == 36 and (mod_c, mod_t) == ("crystal", "text")
    assert not np.array_equal(rows_c, rows_t)
    np.testing.assert_allclose(np.linalg.norm(rows_c.astype(np.float64), axis=1), 1, atol=1e-5)


def test_embed_strict_and_skip_bad(trained, tmp_path, capsys):
    lines = (trained / "data" / "manifest.jsonl").read_text().splitlines()[:2]
    shutil.copy(FIXTURES / "broken.cif", tmp_path / "broken.cif")
    lines.append(json.dumps({"id": "zz-bad", "cif": str(tmp_path / "broken.cif"), "text": "broken"}))
    fixed = [json.loads(x) for x in lines]
    for r in fixed[:2]:
        r["cif"] = str(trained / "data" / r["cif"])
    man = tmp_path / "m.jsonl"
    man.write_text("".join(json.dumps(r) + "\n" for r in fixed))
    ckpt = trained / "run" / "final.clmp"
    args = ["embed", "--ckpt", ckpt, "--manifest", man, "--out", tmp_path / "e.clmp", "--modality", "crystal"]
    assert run(capsys, *args)[0] == 2
    assert run(capsys, *args, "--skip-bad")[0] == 0
    assert len(load_embeddings(tmp_path / "e.clmp")[0]) == 2


def test_classify(trained, tmp_path, capsys):
    ckpt = trained / "run" / "final.clmp"
    cif = next((trained / "data" / "cif").iterdir())
    prompts = trained / "data" / "prompts.txt"
    code, out, _ = run(capsys, "classify", "--ckpt", ckpt, "--cif", cif, "--prompts", prompts)
    lines = out.splitlines()
    assert code == 0 and len(lines) == 3
    ranks, scores, texts = zip(*(ln.split("\t") for ln in lines))
    assert ranks == ("1", "2", "3")
    assert [float(s) for s in scores] == sorted((float(s) for s in scores), reverse=True)
    assert all(len(s.split(".")[1]) == 6 for s in scores)
    assert sorted(texts) == sorted(prompts.read_text().splitlines())
    one = tmp_path / "one.txt"
    one.write_text("just this\n")
    code, out, _ = run(capsys, "classify", "--ckpt", ckpt, "--cif", cif, "--prompts", one)
    assert code == 0 and out.startswith("1\t") and out.count("\n") == 1


def test_classify_errors(trained, tmp_path, capsys):
    ckpt = trained / "run" / "final.clmp"
    prompts = trained / "data" / "prompts.txt"
    empty = tmp_path / "empty.txt"
    empty.write_text("\n\n")
    cif = next((trained / "data" / "cif").iterdir())
    assert run(capsys, "classify", "--ckpt", ckpt, "--cif", cif, "--prompts", empty)[0] == 1
    for bad in ("broken.cif", "degenerate.cif", "bad_element.cif"):
        code, out, _ = run(capsys, "classify", "--ckpt", ckpt, "--cif", FIXTURES / bad, "--prompts", prompts)
        assert code == 2 and out == ""
    assert run(capsys, "classify", "--ckpt", tmp_path / "nope.clmp", "--cif", cif, "--prompts", prompts)[0] == 2
    corrupt = tmp_path / "c.clmp"
    data = bytearray(ckpt.read_bytes())
    data[len(data) // 2] ^= 0xFF
    corrupt.write_bytes(bytes(data))
    code, _, err = run(capsys, "classify", "--ckpt", corrupt, "--cif", cif, "--prompts", prompts)
    assert code == 2 and "checksum" in err


def test_eval(trained, tmp_path, capsys):
    data = trained / "data"
    ckpt = trained / "run" / "best.clmp"
    args = ["eval", "--ckpt", ckpt, "--prompts", data / "prompts.txt", "--labels", data / "labels.txt"]
    code, out, _ = run(capsys, *args, "--manifest", data / "manifest.jsonl")
    report = json.loads(out)
    assert code == 0 and report["n"] == 36 and report["zero_shot_classes"] == 3
    assert report["recall@10_crystal_to_text"] >= report["recall@1_crystal_to_text"]
    lines = (data / "manifest.jsonl").read_text().splitlines()
    random.Random(0).shuffle(lines)
    shuffled = data / "shuffled.jsonl"
    shuffled.write_text("\n".join(lines) + "\n")
    assert run(capsys, *args, "--manifest", shuffled)[1] == out
    single = data / "single.jsonl"
    single.write_text(lines[0] + "\n")
    report = json.loads(run(capsys, "eval", "--ckpt", ckpt, "--manifest", single)[1])
    assert all(v == 1.0 for k, v in report.items() if k != "n")


def test_eval_usage_errors(trained, capsys):
    data = trained / "data"
    ckpt = trained / "run" / "best.clmp"
    base = ["eval", "--ckpt", ckpt, "--manifest", data / "manifest.jsonl"]
    assert run(capsys, *base, "--prompts", data / "prompts.txt")[0] == 1
    assert run(capsys, *base, "--prompts", data / "prompts.txt", "--labels", data / "prompts.txt")[0] == 2


def test_usage_errors(capsys):
    assert run(capsys)[0] == 1
    assert run(capsys, "bogus")[0] == 1
    assert run(capsys, "classify", "--ckpt", "x")[0] == 1
    assert run(capsys, "synth", "--out", "x", "--threads", "0")[0] == 1
    code, out, _ = run(capsys, "--help")
    assert code == 0 and "usage" in out
