"""Wire formats, lossless round trips, and the CLI surface."""
import json
import subprocess
import sys

import numpy as np
import pytest

from lipctx import serialize
from lipctx.certify import certify_model, random_clamped_model, sample_in_ball
from lipctx.cli import ERROR_PREFIX, run
from lipctx.constructions import minmax_gate
from lipctx.layers import AttentionLayer, MlpLayer
from lipctx.measure import DomainBall, new_empirical
from lipctx.transformer import evaluate


class TestFloatFormat:
    def test_seventeen_digit_round_trip(self):
        awkward = [0.1, 1 / 3, 2.0 ** -1074, 1.7976931348623157e308, -0.0,
                   np.pi, 1e-300, 123456789.123456789]
        for x in awkward:
            assert float(json.loads(serialize.dumps(x))) == x

    def test_rejects_non_finite(self):
        with pytest.raises(serialize.FormatError):
            serialize.dumps(float("nan"))

    def test_nested_structures(self):
        obj = {"a": [1, 2.5, None, True], "b": {"c": "text"}}
        assert json.loads(serialize.dumps(obj)) == obj


class TestMeasureFormat:
    def test_round_trip(self):
        mu = new_empirical([[0.1, 0.2], [0.3, -0.4]], weights=[0.25, 0.75])
        again = serialize.measure_from_json(serialize.measure_to_json(mu))
        np.testing.assert_array_equal(again.points, mu.points)
        np.testing.assert_array_equal(again.weights, mu.weights)

    def test_accepts_integer_literals(self):
        mu = serialize.measure_from_json({"points": [[0], [1]], "weights": [1, 3]})
        np.testing.assert_array_equal(mu.weights, [0.25, 0.75])

    def test_weights_optional(self):
        mu = serialize.measure_from_json({"points": [[0.0], [1.0]]})
        np.testing.assert_array_equal(mu.weights, [0.5, 0.5])


class TestLayerFormat:
    def test_mlp_round_trip(self):
        layer = MlpLayer(np.array([[0.5, -1.5]]), np.array([0.25]), 0.7)
        again = serialize.layer_from_json(serialize.layer_to_json(layer))
        np.testing.assert_array_equal(again.W, layer.W)
        np.testing.assert_array_equal(again.b, layer.b)
        assert again.tau == layer.tau

    def test_attention_round_trip(self):
        layer = AttentionLayer(
            np.array([[0.1, 0.2], [0.3, 0.4]]), 0.05,
            DomainBall(np.array([0.5, -0.5]), 1.25),
        )
        again = serialize.layer_from_json(serialize.layer_to_json(layer))
        np.testing.assert_array_equal(again.A, layer.A)
        assert again.eta == layer.eta
        assert again.domain.radius == layer.domain.radius

    def test_unclamped_parameters_survive(self):
        # loader must not re-clamp: round trips preserve exact parameters
        gate, _ = minmax_gate("min")
        again = serialize.layer_from_json(serialize.layer_to_json(gate))
        assert again.tau == 2.0

    def test_matrix_shape_validation(self):
        with pytest.raises(serialize.FormatError):
            serialize.matrix_from_json({"rows": 2, "cols": 2, "data": [1.0]})


class TestModelFormat:
    def test_bit_identical_evaluations(self):
        model = random_clamped_model(3, 6, 3, seed=21)
        again = serialize.model_from_json(serialize.model_to_json(model))
        rng = np.random.default_rng(0)
        for _ in range(10):
            mu = new_empirical(sample_in_ball(rng, model.input_domain, 5))
            x = sample_in_ball(rng, model.input_domain, 1)[0]
            assert evaluate(model, mu, x) == evaluate(again, mu, x)

    def test_format_field_checked(self):
        with pytest.raises(serialize.FormatError):
            serialize.model_from_json({"format": "something-else"})

    def test_hash_tracks_content(self):
        a = random_clamped_model(2, 4, 1, seed=1)
        b = random_clamped_model(2, 4, 1, seed=2)
        assert serialize.model_hash(a) != serialize.model_hash(b)
        assert serialize.model_hash(a) == serialize.model_hash(a)


class TestReportFormat:
    def test_round_trip(self):
        model = random_clamped_model(2, 4, 1, seed=3)
        report = certify_model(model, n_measures=2, n_pairs=20, seed=0,
                               context_anchors=1, context_pairs=3, fd_trials=2)
        again = serialize.report_from_json(serialize.report_to_json(report))
        assert again.model_hash == report.model_hash
        assert again.passed == report.passed
        for c1, c2 in zip(report.checks, again.checks):
            assert (c1.name, c1.stat, c1.bound, c1.passed, c1.n, c1.seed) == (
                c2.name, c2.stat, c2.bound, c2.passed, c2.n, c2.seed
            )


class TestCli:
    def _write_measure(self, path, points, weights=None):
        obj = {"points": points}
        if weights is not None:
            obj["weights"] = weights
        serialize.dump_file(obj, str(path))

    def test_make_model_then_certify(self, tmp_path, capsys):
        model_path = tmp_path / "m.json"
        assert run(["make-model", "--dim", "2", "--width", "5", "--blocks", "2",
                    "--seed", "4", "--out", str(model_path)]) == 0
        report_path = tmp_path / "r.json"
        code = run(["certify", "--model", str(model_path), "--pairs", "50",
                    "--measures", "4", "--seed", "7", "--out", str(report_path)])
        out = capsys.readouterr().out
        assert code == 0
        assert "query_lipschitz" in out and "PASS" in out
        report = serialize.report_from_json(serialize.load_file(str(report_path)))
        assert report.passed

    def test_w1_identical_files_prints_zero(self, tmp_path, capsys):
        path = tmp_path / "mu.json"
        self._write_measure(path, [[0.0], [1.0]])
        assert run(["w1", "--mu", str(path), "--nu", str(path)]) == 0
        assert capsys.readouterr().out.strip() == "0.0"

    def test_w1_exact_and_critic(self, tmp_path, capsys):
        a = tmp_path / "a.json"
        b = tmp_path / "b.json"
        self._write_measure(a, [[0.0]])
        self._write_measure(b, [[1.0]])
        assert run(["w1", "--mu", str(a), "--nu", str(b)]) == 0
        exact = float(capsys.readouterr().out.strip())
        assert exact == pytest.approx(1.0, abs=1e-12)
        assert run(["w1", "--mu", str(a), "--nu", str(b), "--method", "critic",
                    "--iterations", "500", "--depth", "0", "--width", "4"]) == 0
        est = float(capsys.readouterr().out.strip())
        assert est <= exact + 1e-9
        assert est >= 0.99

    def test_lattice_check(self, tmp_path, capsys):
        pa, pb, pc = tmp_path / "a.json", tmp_path / "b.json", tmp_path / "c.json"
        serialize.dump_file(
            serialize.model_to_json(random_clamped_model(2, 4, 1, seed=5)), str(pa)
        )
        serialize.dump_file(
            serialize.model_to_json(random_clamped_model(2, 5, 2, seed=6)), str(pb)
        )
        code = run(["lattice", "--a", str(pa), "--b", str(pb), "--op", "max",
                    "--check", "--samples", "40", "--seed", "1", "--out", str(pc)])
        assert code == 0
        assert "lattice-check" in capsys.readouterr().out
        combined = serialize.model_from_json(serialize.load_file(str(pc)))
        assert combined.width == 9

    def test_separate(self, tmp_path, capsys):
        rng = np.random.default_rng(8)
        a, b = tmp_path / "mu.json", tmp_path / "nu.json"
        self._write_measure(a, (rng.normal(size=(3, 2)) * 0.3).tolist())
        self._write_measure(b, (rng.normal(size=(3, 2)) * 0.3 + 1.0).tolist())
        code = run([
            "separate", "--mu", str(a), "--nu", str(b),
            "--x", "[0.5, 0.0]", "--xp", "[-0.5, 0.0]",
            "--target-a", "0.2", "--target-b", "-0.2",
            "--lipschitz-c", "1.5", "--iterations", "400",
            "--out", str(tmp_path / "sep.json"),
        ])
        assert code == 0
        assert "anchor errors" in capsys.readouterr().out

    def test_rsw_fit(self, tmp_path, capsys):
        rng = np.random.default_rng(9)
        samples = []
        for i in range(3):
            pts = (rng.normal(size=(2, 2)) * 0.4).tolist()
            x = rng.normal(size=2) * 0.4
            samples.append({
                "mu": {"points": pts},
                "x": x.tolist(),
                "target": float(0.3 * x[0]),
            })
        spath = tmp_path / "samples.json"
        serialize.dump_file({"samples": samples}, str(spath))
        code = run(["rsw-fit", "--samples-file", str(spath), "--lipschitz-c", "1.0",
                    "--iterations", "300", "--check",
                    "--out", str(tmp_path / "g.json")])
        assert code == 0
        assert "worst target error" in capsys.readouterr().out

    def test_usage_error_exit_2(self, capsys):
        assert run(["bogus"]) == 2
        assert ERROR_PREFIX in capsys.readouterr().err

    def test_missing_file_exit_2(self, tmp_path, capsys):
        assert run(["w1", "--mu", str(tmp_path / "x.json"),
                    "--nu", str(tmp_path / "y.json")]) == 2
        assert ERROR_PREFIX in capsys.readouterr().err

    def test_reports_identical_across_processes(self, tmp_path):
        model_path = tmp_path / "m.json"
        run(["make-model", "--dim", "2", "--width", "4", "--blocks", "1",
             "--seed", "11", "--out", str(model_path)])
        outs = []
        for name in ("r1.json", "r2.json"):
            rpath = tmp_path / name
            proc = subprocess.run(
                [sys.executable, "-m", "lipctx.cli", "certify",
                 "--model", str(model_path), "--pairs", "30", "--measures", "3",
                 "--seed", "5", "--out", str(rpath)],
                capture_output=True, text=True,
            )
            assert proc.returncode == 0, proc.stderr
            outs.append(rpath.read_text())
        assert outs[0] == outs[1]
