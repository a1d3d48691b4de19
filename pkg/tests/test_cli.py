import json

import pytest

from tblgen.cli import read_config, run


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert run(["synth", "--out", str(d / "train.jsonl"), "--n", "24", "--seed", "1"]) == 0
    assert run(["synth", "--out", str(d / "val.jsonl"), "--n", "6", "--seed", "2"]) == 0
    (d / "tiny.cfg").write_text("# tiny model\nd_model = 16\nn-heads = 2\nd_ff = 32\n"
                                "n_enc_layers = 1\nn_dec_layers = 1\nbatch_size = 8\nepochs = 3\n")
    args = ["train", "--train", str(d / "train.jsonl"), "--valid", str(d / "val.jsonl"), "--out",
            str(d / "m.ckpt"), "--config", str(d / "tiny.cfg"), "--epochs", "1", "--eval-limit", "2",
            "--manifest", str(d / "train.json")]
    assert run(args) == 0
    return d


def test_encode_decode_round_trip(workdir):
    d = workdir
    assert run(["encode", str(d / "train.jsonl"), "--out", str(d / "seq.jsonl"), "--vocab", str(d / "v.txt")]) == 0
    first = json.loads((d / "seq.jsonl").read_text().splitlines()[0])
    assert first["tokens"][0] == "<bos>" and first["tokens"][-1] == "<eos>"
    assert run(["decode", str(d / "seq.jsonl"), "--vocab", str(d / "v.txt"), "--out", str(d / "back.jsonl")]) == 0
    assert (d / "back.jsonl").read_bytes() == (d / "train.jsonl").read_bytes()


def test_stats(workdir, capsys):
    assert run(["stats", str(workdir / "train.jsonl")]) == 0
    assert json.loads(capsys.readouterr().out)["instances"] == 24


def test_config_precedence(workdir):
    man = json.loads((workdir / "train.json").read_text())
    assert man["model_config"]["d_model"] == 16        # from the file
    assert man["train_config"]["epochs"] == 1          # flag beats file
    assert man["train_config"]["lr"] == 2e-3           # default
    assert len(man["history"]) == 1 and man["seed"] == 0


def test_read_config(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("a = 1\nb-c = 2.5  # note\n\nname = hello\nflag = true\n")
    assert read_config(str(path)) == {"a": 1, "b_c": 2.5, "name": "hello", "flag": True}


def test_generate_and_evaluate(workdir, capsys):
    d = workdir
    base = ["generate", "--checkpoint", str(d / "m.ckpt"), "--data", str(d / "val.jsonl"), "--max-len", "40"]
    assert run(base + ["--out", str(d / "greedy.jsonl"), "--manifest", str(d / "gen.json")]) == 0
    gen_man = json.loads((d / "gen.json").read_text())
    assert gen_man["options"]["beam"] == 0 and gen_man["options"]["constraint"] and gen_man["malformed"] == 0
    assert run(base + ["--out", str(d / "beam1.jsonl"), "--beam", "1"]) == 0
    assert (d / "greedy.jsonl").read_bytes() == (d / "beam1.jsonl").read_bytes()
    assert run(base + ["--out", str(d / "jobs.jsonl"), "--jobs", "2"]) == 0
    assert (d / "greedy.jsonl").read_bytes() == (d / "jobs.jsonl").read_bytes()
    rows = [json.loads(x) for x in (d / "greedy.jsonl").read_text().splitlines()]
    assert len(rows) == 6 and all(r["well_formed"] for r in rows)
    assert set(rows[0]) == {"tokens", "well_formed", "tables"}
    capsys.readouterr()
    assert run(["evaluate", "--gold", str(d / "val.jsonl"), "--pred", str(d / "greedy.jsonl"),
                "--manifest", str(d / "eval.json")]) == 0
    from_file = json.loads(capsys.readouterr().out)
    assert from_file["error_rate"] == "0.00"
    assert run(["evaluate", "--gold", str(d / "val.jsonl"), "--checkpoint", str(d / "m.ckpt"), "--max-len", "40"]) == 0
    direct = json.loads(capsys.readouterr().out)
    assert direct == from_file
    assert json.loads((d / "eval.json").read_text())["metrics"] == from_file


def test_ablate_prints_four_rows(workdir, capsys):
    d = workdir
    args = ["ablate", "--train", str(d / "train.jsonl"), "--valid", str(d / "val.jsonl"), "--out-dir",
            str(d / "abl"), "--config", str(d / "tiny.cfg"), "--epochs", "1", "--eval-limit", "2",
            "--gen-max-len", "30"]
    assert run(args) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    table = lines[lines.index(next(x for x in lines if x.startswith("TC"))):]
    assert [row.split()[:2] for row in table[1:]] == [["off", "off"], ["on", "off"], ["off", "on"], ["on", "on"]]
    result = json.loads((d / "abl" / "ablation.json").read_text())
    assert len(result["rows"]) == 4
    assert all(r["error_rate"] == 0 for r in result["rows"] if r["tc"])


def test_exit_codes(tmp_path, capsys):
    assert run([]) == 1
    assert run(["frobnicate"]) == 1
    assert run(["train"]) == 1
    assert "usage" in capsys.readouterr().err
    assert run(["stats", str(tmp_path / "missing.jsonl")]) == 2
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{}\n")
    assert run(["stats", str(bad)]) == 2
    assert run(["evaluate", "--gold", str(bad)]) == 2
    junk = tmp_path / "junk.ckpt"
    junk.write_bytes(b"nope")
    good = tmp_path / "g.jsonl"
    assert run(["synth", "--out", str(good), "--n", "2"]) == 0
    assert run(["generate", "--checkpoint", str(junk), "--data", str(good), "--out", str(tmp_path / "o")]) == 2
    # a rate outside [0, 1] is a usage error
    assert run(["synth", "--out", str(good), "--n", "2", "--synonym-rate", "3"]) == 1
