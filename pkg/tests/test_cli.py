import subprocess
import sys
from dataclasses import replace

import numpy as np
import pytest

from effattn import bench, verify
from effattn.cli import main
from effattn.mechanisms import retnet

BENCH = ["bench", "--mechanisms", "sa,kda", "--lengths", "32,64,128,256", "--dim", "32", "--heads", "4",
         "--repeats", "3", "--warmup", "1", "--seed", "42"]


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


class TestHelp:
    @pytest.mark.parametrize("command", ["bench", "verify", "demo", "report"])
    def test_help_exits_zero_without_side_effects(self, capsys, tmp_path, monkeypatch, command):
        monkeypatch.chdir(tmp_path)
        code, out, _ = run(capsys, command, "--help")
        assert code == 0 and "usage:" in out
        assert list(tmp_path.iterdir()) == []

    def test_module_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "effattn", "--help"], capture_output=True, text=True)
        assert proc.returncode == 0 and "bench" in proc.stdout

    def test_unknown_flag(self, capsys):
        code, _, err = run(capsys, "demo", "--colour", "red")
        assert code == 2 and "usage:" in err

    def test_missing_subcommand(self, capsys):
        assert run(capsys)[0] == 2


class TestBench:
    def test_happy_path(self, capsys, tmp_path):
        out_csv = tmp_path / "results.csv"
        code, out, _ = run(capsys, *BENCH, "--out", str(out_csv))
        assert code == 0
        names = sorted(p.name for p in tmp_path.iterdir())
        assert names == ["results.csv", "results_fits.csv"] + [f"results_panel_{x}.dat" for x in "abcd"]
        assert "slope" in out and "KDA" in out
        assert len(bench.read_csv(out_csv)) == 2 * 4 * 3

    def test_rows_are_structurally_identical_across_runs(self, capsys, tmp_path):
        def structure(path):
            return [line.rsplit(",", 2)[0] for line in path.read_text().splitlines()]
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert run(capsys, *BENCH, "--out", str(a))[0] == 0
        assert run(capsys, *BENCH, "--out", str(b))[0] == 0
        assert structure(a) == structure(b)

    def test_non_ascending_lengths(self, capsys):
        code, _, err = run(capsys, "bench", "--lengths", "512,256")
        assert code == 2 and "--lengths" in err

    def test_unsupported_mode(self, capsys):
        code, _, err = run(capsys, "bench", "--mechanisms", "gsa", "--mode", "parallel", "--lengths", "8")
        assert code == 2 and "parallel" in err

    def test_unknown_mechanism(self, capsys):
        assert run(capsys, "bench", "--mechanisms", "sa,mamba")[0] == 2

    def test_config_file_with_flag_override(self, capsys, tmp_path):
        cfg = tmp_path / "sweep.cfg"
        cfg.write_text(f"mechanisms = retnet\nlengths = 8,16,32,64\ndim = 16\nrepeats = 3\nseed = 1\n"
                       f"out = {tmp_path / 'from_config.csv'}\n")
        code, _, _ = run(capsys, "bench", "--config", str(cfg), "--mechanisms", "lightnet")
        assert code == 0
        assert {r.mechanism for r in bench.read_csv(tmp_path / "from_config.csv")} == {"LightNet"}

    def test_unwritable_output(self, capsys, tmp_path):
        code, _, err = run(capsys, "bench", "--mechanisms", "kda", "--lengths", "8", "--dim", "16",
                           "--repeats", "3", "--out", str(tmp_path / "nope" / "r.csv"))
        assert code == 3 and "nope" in err


class TestReport:
    def test_reproduces_bench_fits(self, capsys, tmp_path):
        out_csv = tmp_path / "r.csv"
        run(capsys, *BENCH, "--out", str(out_csv))
        code, out, _ = run(capsys, "report", str(out_csv))
        assert code == 0
        written = {row.split(",")[0]: float(row.split(",")[2])
                   for row in (tmp_path / "r_fits.csv").read_text().splitlines()[1:]}
        recomputed = {f.mechanism: f.slope for f in bench.fits_from_records(bench.read_csv(out_csv))}
        for name, slope in recomputed.items():
            assert abs(bench.sig6(slope) - written[name]) <= 1e-9
            assert f"{slope:.3f}" in out
        assert "KDA" in out and "latency" in out

    def test_header_only(self, capsys, tmp_path):
        path = tmp_path / "empty.csv"
        bench.emit_csv([], [], path)
        code, out, _ = run(capsys, "report", str(path))
        assert code == 0 and "no records" in out

    def test_truncated_row(self, capsys, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text(",".join(bench.CSV_HEADER) + "\nSA,parallel,64,16,4,0,1.0,10\nSA,parallel,64,16\n")
        code, _, err = run(capsys, "report", str(path))
        assert code == 3 and ":3:" in err

    def test_missing_file(self, capsys, tmp_path):
        assert run(capsys, "report", str(tmp_path / "absent.csv"))[0] == 3

    def test_fox_divergence_note(self, capsys, tmp_path):
        recs = [bench.BenchRecord("FoX", "parallel", L, 16, 4, r, L * L / 1e4, 8 * L * L)
                for L in (64, 128, 256, 512) for r in range(3)]
        path = tmp_path / "fox.csv"
        bench.emit_csv(recs, [], path)
        code, out, _ = run(capsys, "report", str(path))
        assert code == 0 and "note:" in out and "fused" in out


class TestDemo:
    def test_contract(self, capsys):
        code, out, _ = run(capsys, "demo", "--mechanism", "sa", "--seed", "7", "--speech-len", "200",
                           "--text-len", "30", "--dim", "128")
        assert code == 0
        logits = np.array(next(l for l in out.splitlines() if l.startswith("logits")).split()[1:], dtype=float)
        label = int(next(l for l in out.splitlines() if l.startswith("class")).split()[1])
        assert logits.shape == (8,) and np.isfinite(logits).all() and 1 <= label <= 8
        assert "seed 7" in out

    def test_deterministic(self, capsys):
        argv = ["demo", "--mechanism", "kda", "--seed", "3", "--speech-len", "20", "--text-len", "5", "--dim", "32"]
        assert run(capsys, *argv)[1] == run(capsys, *argv)[1]

    def test_unsupported_mode(self, capsys):
        code, _, err = run(capsys, "demo", "--mechanism", "gsa", "--mode", "parallel")
        assert code == 2 and "does not support parallel" in err

    def test_invalid_dims(self, capsys):
        assert run(capsys, "demo", "--dim", "130", "--heads", "4")[0] == 2
        assert run(capsys, "demo", "--dim", "0")[0] == 2


class TestVerify:
    def test_scoped_run_passes(self, capsys):
        code, out, _ = run(capsys, "verify", "--mechanism", "lightnet")
        assert code == 0
        names = [line.split()[1].rstrip(":") for line in out.splitlines() if line[:4] in ("PASS", "FAIL", "SKIP")]
        assert "mechanisms/lightnet_convexity" in names
        assert "mechanisms/retnet_decay" not in names and "core_math/softmax_normalization" not in names

    def test_injected_fault_is_caught(self, capsys, monkeypatch):
        honest = retnet.retnet_parallel

        def perturbed(U, params, accountant=None):
            return honest(U, replace(params, gamma=params.gamma * 0.99))

        monkeypatch.setattr(retnet, "retnet_parallel", perturbed)
        code, out, _ = run(capsys, "verify", "--mechanism", "retnet")
        assert code == 1
        assert "FAIL mechanisms/dual_form_equivalence" in out

    def test_registry_is_complete(self):
        names = {p.name for p in verify.REGISTRY}
        assert {"softmax_normalization", "softmax_shift_invariance", "layer_norm_moments", "matmul_associativity",
                "gaussian_init_reproducible", "causality", "dual_form_equivalence", "fold_equivalence",
                "fox_sa_reduction", "bounded_state", "lightnet_convexity", "retnet_decay", "determinism",
                "pooling_convex_hull", "predict_invariance", "streaming_equals_batch",
                "length_adjust_no_fabrication", "end_to_end_determinism", "scaling_separation",
                "memory_bounded_vs_sa", "latency_ratio_sa_kda", "csv_determinism",
                "report_reproduces_fits"} <= names

    def test_timing_properties_skip_by_default(self):
        results = verify.run_properties("kda")
        timing = [r for r in results if r.name in ("scaling_separation", "latency_ratio_sa_kda")]
        assert timing and all(r.status == "SKIP" for r in timing)
        assert all(r.passed for r in results)

    def test_crashing_property_fails(self, monkeypatch):
        def boom(kinds, seed):
            raise RuntimeError("kaput")
        monkeypatch.setattr(verify, "REGISTRY", [verify.Property("boom", "x", None, boom)])
        (result,) = verify.run_properties()
        assert result.status == "FAIL" and "kaput" in result.detail


@pytest.mark.slow
def test_full_verify_passes(capsys):
    code, out, _ = run(capsys, "verify")
    assert code == 0, out
    assert "0 failed" in out
