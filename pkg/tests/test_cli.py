import json
import struct

import numpy as np
import pytest

from revelight.cli import (
    ExperimentSpec,
    load_csv,
    load_dataset,
    load_idx,
    load_libsvm,
    main,
    make_synthetic,
    parse_config,
    run_experiment,
    split_tenfold,
    synthetic_pair,
)
from revelight.errors import ConfigError, FormatError, ParseError
from revelight.models import PartitionedDataset


class TestLibsvm:
    def test_basic_line(self, tmp_path):
        p = tmp_path / "d.libsvm"
        p.write_text("+1 1:0.5 3:2\n-1 2:1\n")
        data = load_libsvm(p, n_features=3)
        assert data.n == 2 and data.total_features == 3
        assert np.array_equal(data.blocks[0][0], [0.5, 0.0, 2.0])
        assert list(data.labels) == [1, -1]

    def test_infers_dimension(self, tmp_path):
        p = tmp_path / "d.libsvm"
        p.write_text("+1 5:1\n-1 2:3\n")
        assert load_libsvm(p).total_features == 5

    def test_index_beyond_declared(self, tmp_path):
        p = tmp_path / "d.libsvm"
        p.write_text("+1 1:0.5\n-1 7:1\n")
        with pytest.raises(ParseError, match=":2:"):
            load_libsvm(p, n_features=3)

    def test_malformed_token(self, tmp_path):
        p = tmp_path / "d.libsvm"
        p.write_text("+1 1:0.5\n+1 oops\n")
        with pytest.raises(ParseError, match=":2:"):
            load_libsvm(p)

    def test_zero_one_labels_mapped(self, tmp_path):
        p = tmp_path / "d.libsvm"
        p.write_text("1 1:1\n0 1:2\n")
        assert set(load_libsvm(p).labels) == {-1, 1}


class TestCsv:
    def test_label_last_column(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("0.5,1.5,1\n0.25,-2,-1\n")
        data = load_csv(p)
        assert data.total_features == 2
        assert list(data.labels) == [1, -1]

    def test_bad_field(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("0.5,x,1\n")
        with pytest.raises(ParseError, match=":1:"):
            load_csv(p)


def _write_idx_pair(tmp_path, n=4, rows=3, cols=2):
    images = tmp_path / "train-images-idx3-ubyte"
    labels = tmp_path / "train-labels-idx1-ubyte"
    pix = np.arange(n * rows * cols, dtype=np.uint8)
    images.write_bytes(struct.pack(">IIII", 0x00000803, n, rows, cols) + pix.tobytes())
    labels.write_bytes(struct.pack(">II", 0x00000801, n) + bytes(range(n)))
    return images, labels


class TestIdx:
    def test_loads_pair_and_scales(self, tmp_path):
        images, _ = _write_idx_pair(tmp_path)
        data = load_idx(images)
        assert data.n == 4 and data.total_features == 6
        assert data.blocks[0].max() <= 1.0
        assert list(data.labels) == [0, 1, 2, 3]

    def test_magic_mismatch(self, tmp_path):
        bad = tmp_path / "bad-images-idx3-ubyte"
        bad.write_bytes(struct.pack(">IIII", 0x00000777, 1, 1, 1) + b"\x00")
        with pytest.raises(FormatError, match="magic"):
            load_idx(bad)

    def test_dispatch(self, tmp_path):
        images, _ = _write_idx_pair(tmp_path)
        assert load_dataset(images, "idx").n == 4


class TestSynthetic:
    def test_separable_margins(self):
        X, y = make_synthetic("separable", 200, 16, seed=0, margin=0.5)
        assert set(np.unique(y)) <= {-1, 1}

    def test_noisy_reproducible(self):
        a = make_synthetic("noisy", 50, 8, seed=3)
        b = make_synthetic("noisy", 50, 8, seed=3)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])

    def test_pair_shares_nothing_across_split(self):
        train, test = synthetic_pair("noisy", 100, 40, 12, 3, seed=1)
        assert train.n == 100 and test.n == 40
        assert train.block_dims == test.block_dims == [4, 4, 4]

    def test_tenfold_split(self):
        rng = np.random.default_rng(0)
        data = PartitionedDataset.from_matrix(
            rng.standard_normal((50, 6)), rng.choice([-1, 1], 50), [3, 3]
        )
        train, test = split_tenfold(data, seed=2)
        assert test.n == 5 and train.n == 45


CONFIG = """
# benchmark run
algorithm = asyrevel_gau
q = 4
T = 512
eta = 0.001
mu = 0.001
lam_eff = 0.00005
tau = 0
seed = 7
dataset = synthetic:noisy
n = 128
d = 16
n_test = 64
eval_every = 128
"""


class TestConfig:
    def test_parse_round_trip(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text(CONFIG)
        spec = ExperimentSpec.from_config(p)
        assert spec.cfg.algorithm == "asyrevel_gau"
        assert spec.cfg.q == 4 and spec.cfg.T == 512 and spec.cfg.seed == 7
        assert spec.n == 128 and spec.d == 16

    def test_seed_and_out_override(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text(CONFIG)
        spec = ExperimentSpec.from_config(p, seed_override=99, out_override=tmp_path / "o")
        assert spec.cfg.seed == 99
        assert spec.out_dir == tmp_path / "o"

    def test_unknown_key_rejected(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text(CONFIG + "bogus = 3\n")
        with pytest.raises(ConfigError, match="bogus"):
            ExperimentSpec.from_config(p)

    def test_missing_equals(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("algorithm asyrevel_gau\n")
        with pytest.raises(ConfigError, match=":1:"):
            parse_config(p)

    def test_p_and_straggler_parsing(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text(CONFIG + "p = 0.1,0.2,0.3,0.4\nstraggler = 2:1.4\n")
        spec = ExperimentSpec.from_config(p)
        assert spec.cfg.p == [0.1, 0.2, 0.3, 0.4]
        assert spec.cfg.straggler == (2, 1.4)


class TestRunExperiment:
    def test_writes_artifacts(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text(CONFIG)
        spec = ExperimentSpec.from_config(p, out_override=tmp_path / "out")
        result = run_experiment(spec)
        paths = result["paths"]
        assert paths["metrics"].exists() and paths["transcript"].exists()
        header = paths["metrics"].read_text().splitlines()[0]
        assert header == "t,vtime,wtime,loss,acc,bytes_up,bytes_down,staleness,gnorm2"
        with open(paths["transcript"]) as fh:
            first = json.loads(fh.readline())
        assert set(first) == {"time", "dir", "variant", "party", "sample", "seq", "payload", "bytes"}

    def test_nonfed_emits_no_transcript(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text(CONFIG.replace("asyrevel_gau", "nonfed"))
        spec = ExperimentSpec.from_config(p, out_override=tmp_path / "out")
        result = run_experiment(spec)
        assert "transcript" not in result["paths"]

    def test_deterministic_metrics_file(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text(CONFIG)
        blobs = []
        for run in range(2):
            spec = ExperimentSpec.from_config(p, out_override=tmp_path / f"o{run}")
            result = run_experiment(spec)
            blobs.append(result["paths"]["metrics"].read_bytes())
        assert blobs[0] == blobs[1]

    def test_stop_criterion_halts_before_budget(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text(
            CONFIG.replace("T = 512", "T = 8192")
            + "stop_loss = 0.67\ndataset = synthetic:separable\n"
        )
        spec = ExperimentSpec.from_config(p, out_override=tmp_path / "out")
        result = run_experiment(spec)
        m = result["metrics"]
        assert m.reached and m.rows[-1].t < 8192


class TestMainCli:
    def test_train_command(self, tmp_path, capsys):
        cfgp = tmp_path / "run.cfg"
        cfgp.write_text(CONFIG)
        rc = main(["train", "--config", str(cfgp), "--out", str(tmp_path / "out")])
        assert rc == 0
        out = capsys.readouterr().out.strip().splitlines()[-1]
        fields = out.split(",")
        assert fields[0] == "asyrevel_gau" and len(fields) == 6

    def test_train_missing_config(self, tmp_path, capsys):
        rc = main(["train", "--config", str(tmp_path / "nope.cfg")])
        assert rc == 2
        assert capsys.readouterr().err.startswith("error:")

    def test_audit_command_pass_and_fail(self, tmp_path, capsys):
        cfgp = tmp_path / "run.cfg"
        cfgp.write_text(CONFIG)
        main(["train", "--config", str(cfgp), "--out", str(tmp_path / "out")])
        transcript = tmp_path / "out" / "transcript_asyrevel_gau_7.jsonl"
        rc = main(["audit", "--transcript", str(transcript), "--dims", "4,4,4,4"])
        assert rc == 0
        bad = tmp_path / "bad.jsonl"
        lines = transcript.read_text().splitlines()
        lines.append(json.dumps({
            "time": 9.0, "dir": "up", "variant": "upload", "party": 1, "sample": 0,
            "seq": 99, "payload": [0.0] * 8, "bytes": 83,
        }))
        bad.write_text("\n".join(lines) + "\n")
        rc = main(["audit", "--transcript", str(bad), "--dims", "4,4,4,4"])
        assert rc == 1
        assert "error: audit violation" in capsys.readouterr().err

    def test_verify_command(self, tmp_path, capsys):
        rc = main(["verify", "--trials", "1", "--out", str(tmp_path)])
        assert rc == 0
        assert (tmp_path / "verify_report.csv").exists()
        assert "bound checks passed" in capsys.readouterr().out

    def test_bench_comm_command(self, capsys):
        rc = main(["bench-comm", "--blocks", "16,64", "--events", "64"])
        assert rc == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[0] == "block_dim,asy_bytes,tig_bytes,byte_ratio,cost_ratio"
        ratios = [float(line.split(",")[3]) for line in lines[1:]]
        assert all(r > 1 for r in ratios) and ratios == sorted(ratios)

    def test_speedup_command(self, capsys):
        rc = main(["speedup", "--parties", "1,2", "--events", "512", "--n", "64",
                   "--features", "16"])
        assert rc == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[0] == "q,time,speedup"
        speed = {int(l.split(",")[0]): float(l.split(",")[2]) for l in lines[1:]}
        assert speed[1] == 1.0 and speed[2] > 1.5
