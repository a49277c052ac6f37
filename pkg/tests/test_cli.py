import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from mnsga_nas.cli import main
from mnsga_nas.persistence import read_front_csv
from mnsga_nas.search_space import decode, default_space, random_genome
from mnsga_nas.weight_mapping import SupernetWeights, container_data_size, l1_channel_norms

TOY = {"max_slots": [2, 2, 1, 1, 1], "ops": ["GBe1", "GBe4", "Identity"],
       "channels": [[24, 32], [40, 48], [56, 96], [128], [152]]}


def write_config(path, **kw):
    cfg = {"population_size": 6, "generations": 3, "seed": 0, "space": TOY}
    cfg.update(kw)
    path.write_text(json.dumps(cfg))
    return path


@pytest.fixture
def cfg(tmp_path):
    return write_config(tmp_path / "cfg.json")


def test_search_deterministic(tmp_path, cfg):
    for d in ("a", "b"):
        assert main(["search", "--config", str(cfg), "--seed", "7", "--out", str(tmp_path / d)]) == 0
    for name in ("archive.json", "metrics.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert sorted(p.name for p in (tmp_path / "a").glob("gen_*.json")) == [f"gen_000{i}.json" for i in range(4)]
    header = json.loads((tmp_path / "a" / "run.json").read_text())
    assert header["seed"] == 7 and header["space_hash"] == default_space(
        max_slots=(2, 2, 1, 1, 1), ops=TOY["ops"], channels=TOY["channels"]).space_hash()


def test_search_refuses_overwrite(tmp_path, cfg, capsys):
    out = tmp_path / "run"
    assert main(["search", "--config", str(cfg), "--out", str(out)]) == 0
    assert main(["search", "--config", str(cfg), "--out", str(out)]) == 1
    assert "--force" in capsys.readouterr().err
    (out / "notes.txt").write_text("keep")
    assert main(["search", "--config", str(cfg), "--out", str(out), "--force"]) == 0
    assert (out / "notes.txt").read_text() == "keep"


def test_search_infeasible_exit_2(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", g1_max_macs=1000)
    assert main(["search", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "g1" in capsys.readouterr().err


def test_search_unknown_key_exit_1(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", populaton_size=3)
    assert main(["search", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    assert "populaton_size" in capsys.readouterr().err


def test_resume_continues_without_gap(tmp_path):
    cfg = write_config(tmp_path / "c.json", generations=5)
    full, res = tmp_path / "full", tmp_path / "res"
    assert main(["search", "--config", str(cfg), "--out", str(full)]) == 0
    assert main(["search", "--config", str(cfg), "--out", str(res), "--resume", str(full / "gen_0002.json")]) == 0
    assert (full / "archive.json").read_bytes() == (res / "archive.json").read_bytes()
    assert (full / "metrics.csv").read_bytes() == (res / "metrics.csv").read_bytes()
    gens = [int(line.split(",")[0]) for line in (res / "metrics.csv").read_text().splitlines()[1:]]
    assert gens == list(range(6))


def test_resume_rejects_other_config(tmp_path, capsys):
    a = write_config(tmp_path / "a.json")
    b = write_config(tmp_path / "b.json", mutation_prob=0.3)
    assert main(["search", "--config", str(a), "--out", str(tmp_path / "a")]) == 0
    assert main(["search", "--config", str(b), "--out", str(tmp_path / "b"),
                 "--resume", str(tmp_path / "a" / "gen_0001.json")]) == 1
    assert "config hash" in capsys.readouterr().err


def test_output_dir_env(tmp_path, monkeypatch):
    cfg = write_config(tmp_path / "c.json", generations=1)
    monkeypatch.setenv("MNSGA_NAS_OUTPUT_DIR", str(tmp_path / "env"))
    assert main(["search", "--config", str(cfg)]) == 0
    assert (tmp_path / "env" / "archive.json").exists()


def test_cost_text_and_json(tmp_path, ref_arch_text, capsys):
    arch = tmp_path / "a.txt"
    arch.write_text(ref_arch_text)
    assert main(["cost", "--arch", str(arch)]) == 0
    text = capsys.readouterr().out
    assert "K3GBe3" in text or "GBe3" in text
    assert main(["cost", "--arch", str(arch), "--json"]) == 0
    r320 = json.loads(capsys.readouterr().out)
    assert main(["cost", "--arch", str(arch), "--json", "--resolution", "640"]) == 0
    r640 = json.loads(capsys.readouterr().out)
    assert r640["macs"] == 4 * r320["macs"]
    assert r640["params"] == r320["params"]


def test_cost_genome(tmp_path, capsys):
    space = default_space()
    g = random_genome(space, np.random.default_rng(0))
    p = tmp_path / "g.json"
    p.write_text(json.dumps(g.to_dict()))
    assert main(["cost", "--genome", str(p), "--json"]) == 0
    from mnsga_nas.cost_model import genome_cost
    assert json.loads(capsys.readouterr().out)["macs"] == genome_cost(space, g)[0]


def test_cost_bad_op(tmp_path, ref_arch_text, capsys):
    lines = ref_arch_text.splitlines()
    idx = next(i for i, line in enumerate(lines) if line.split()[:1] == ["5"])
    lines[idx] = lines[idx].replace("GBe", "XBe", 1)
    arch = tmp_path / "bad.txt"
    arch.write_text("\n".join(lines) + "\n")
    assert main(["cost", "--arch", str(arch)]) == 1
    assert f"line {idx + 1}" in capsys.readouterr().err


@pytest.fixture
def supernet_file(tmp_path, cfg):
    path = tmp_path / "super.bin"
    assert main(["build-supernet", "--out", str(path), "--seed", "3", "--config", str(cfg)]) == 0
    return path


def test_map_weights_full_width(tmp_path, supernet_file):
    sn = SupernetWeights.load(supernet_file)
    space = sn.space
    g = {"op_genes": [["GBe4"] * s.max_slots for s in space.searched],
         "channel_genes": [len(s.allowed_channels) - 1 for s in space.searched],
         "space": TOY}
    gpath = tmp_path / "g.json"
    gpath.write_text(json.dumps(g))
    out = tmp_path / "mapped.bin"
    assert main(["map-weights", "--supernet", str(supernet_file), "--genome", str(gpath), "--out", str(out)]) == 0
    from mnsga_nas.search_space import Genome
    arch = decode(space, Genome.from_dict(g))
    expected = 4 * (16 * 3 * 9 + sum(l.c_out * l.c_in * 9 for _, l in arch.layers()))
    assert container_data_size(out) == expected
    side = json.loads((tmp_path / "mapped.bin.json").read_text())
    for layer in side["layers"][1:]:
        norms = l1_channel_norms(sn[layer["source"]])
        k = len(layer["out_indices"])
        oracle = sorted(sorted(range(len(norms)), key=lambda i: (-norms[i], i))[:k])
        assert layer["out_indices"] == oracle


def test_map_weights_hash_mismatch(tmp_path, supernet_file, capsys):
    g = random_genome(default_space(), np.random.default_rng(0)).to_dict()
    g["space"] = {}
    gpath = tmp_path / "g.json"
    gpath.write_text(json.dumps(g))
    assert main(["map-weights", "--supernet", str(supernet_file), "--genome", str(gpath),
                 "--out", str(tmp_path / "m.bin")]) == 1
    assert "space hash mismatch" in capsys.readouterr().err


def test_map_weights_declared_hash_mismatch(tmp_path, supernet_file, capsys):
    sn = SupernetWeights.load(supernet_file)
    g = random_genome(sn.space, np.random.default_rng(0)).to_dict()
    g["space_hash"] = "0" * 16
    gpath = tmp_path / "g.json"
    gpath.write_text(json.dumps(g))
    assert main(["map-weights", "--supernet", str(supernet_file), "--genome", str(gpath),
                 "--out", str(tmp_path / "m.bin")]) == 1
    assert "mismatch" in capsys.readouterr().err


def test_export_front(tmp_path, cfg):
    out = tmp_path / "run"
    assert main(["search", "--config", str(cfg), "--out", str(out)]) == 0
    rows = json.loads((out / "archive.json").read_text())
    assert main(["export-front", "--archive", str(out / "archive.json"), "--format", "csv",
                 "--out", str(tmp_path / "f.csv")]) == 0
    back = read_front_csv(tmp_path / "f.csv")
    assert back == [(r["objectives"]["loss"], r["objectives"]["macs"], r["objectives"]["params"],
                     r["generation"]) for r in rows]
    assert main(["export-front", "--archive", str(out / "archive.json"), "--format", "svg",
                 "--out", str(tmp_path / "f.svg")]) == 0
    root = ET.parse(tmp_path / "f.svg").getroot()
    markers = [e for e in root.iter() if e.get("class") == "marker"]
    assert len(markers) == len(rows)


def test_export_front_three_rows(tmp_path):
    rows = [{"genome": random_genome(default_space(), np.random.default_rng(i)).to_dict(),
             "objectives": {"loss": 0.1 * (i + 1), "macs": 100 - i, "params": 10 + i}, "generation": i}
            for i in range(3)]
    arch = tmp_path / "archive.json"
    arch.write_text(json.dumps(rows))
    assert main(["export-front", "--archive", str(arch), "--format", "csv"]) == 0
    text = (tmp_path / "archive.csv").read_text().splitlines()
    assert len(text) == 4 and text[0] == "loss,macs,params,generation"


def test_export_front_empty(tmp_path, capsys):
    arch = tmp_path / "archive.json"
    arch.write_text("[]")
    assert main(["export-front", "--archive", str(arch)]) == 1
    assert "empty" in capsys.readouterr().err
