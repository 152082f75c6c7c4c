import io
import json

import numpy as np
import pytest

from conftest import random_kernels, random_tensor
from nhsim import netmodel, presets, refmodel
from nhsim.accel import HardwareConfig
from nhsim.cli import (
    compare_codecs_cmd,
    main,
    parse_sweep,
    print_report,
    run_network,
    selfcheck,
)
from nhsim.fxp import QFormat
from nhsim.netmodel import (
    DenseLayerDescriptor,
    KernelSet,
    LayerDescriptor,
    NetworkDescriptor,
    ValidationError,
)


def build_tiny_net(tmp_path, rng, with_fc=True):
    l1 = LayerDescriptor(
        n_in=1, n_out=4, h=8, w=8, k=3, pad=0, pool=True,
        weights_path=str(tmp_path / "w1.nhw"), name="conv1",
    )
    l2 = LayerDescriptor(
        n_in=4, n_out=6, h=3, w=3, k=1, pad=0, pool=False,
        weights_path=str(tmp_path / "w2.nhw"), name="conv2",
    )
    netmodel.save_weights(random_kernels(rng, 4, 1, 3, wmax=64), str(tmp_path / "w1.nhw"))
    netmodel.save_weights(random_kernels(rng, 6, 4, 1, wmax=64), str(tmp_path / "w2.nhw"))
    fc = []
    if with_fc:
        flat = 6 * 3 * 3
        kern = KernelSet(
            rng.integers(-30, 31, size=(4, flat, 1, 1)).astype(np.int16),
            rng.integers(-1000, 1000, size=4).astype(np.int32),
            QFormat(8),
        )
        netmodel.save_weights(kern, str(tmp_path / "fc.nhw"))
        fc = [DenseLayerDescriptor(n_in=flat, n_out=4, weights_path=str(tmp_path / "fc.nhw"))]
    return NetworkDescriptor([l1, l2], fc, name="tiny")


class TestRunNetwork:
    def test_real_run_chains_layers_and_fc(self, tmp_path, rng):
        net = build_tiny_net(tmp_path, rng)
        t = random_tensor(rng, 1, 8, 8, sparsity=0.3)
        report, final = run_network(net, t)
        assert len(report.layers) == 2
        assert final is not None and final.shape == (4,)
        # chained simulation must equal the golden model run end to end
        cur = t
        for layer in net.layers:
            kern = netmodel.load_weights(layer.weights_path)
            cur = refmodel.layer_forward(cur, layer, kern)
        vec = netmodel.stream_order_values(cur).astype(np.int64)
        fck = netmodel.load_weights(net.fc[0].weights_path)
        want = refmodel.dense_forward(
            vec, fck.weights.reshape(4, -1), fck.bias, 16, 8, True
        )
        assert np.array_equal(final, want)

    def test_totals_are_sums_of_layers(self, tmp_path, rng):
        net = build_tiny_net(tmp_path, rng, with_fc=False)
        t = random_tensor(rng, 1, 8, 8)
        report, _ = run_network(net, t)
        for key in ("cycles_total", "bytes_in", "bytes_out", "bytes_kernels"):
            assert report.totals[key] == sum(e[key] for e in report.layers)
        hw = HardwareConfig()
        assert report.totals["ms_per_frame"] == pytest.approx(
            1e3 * report.totals["cycles_total"] / hw.clock_hz
        )

    def test_gop_counts_dense_workload_regardless_of_sparsity(self, rng):
        net = presets.network("roshambo")
        t = random_tensor(rng, 1, 64, 64)
        r1, _ = run_network(net, t, synthetic_sparsity=0.5)
        r2, _ = run_network(net, t, synthetic_sparsity=0.9)
        assert r1.totals["gop_per_frame"] == r2.totals["gop_per_frame"]
        dense = sum(l.dense_macs for l in net.layers)
        assert r1.totals["gop_per_frame"] == pytest.approx(2 * dense / 1e9)
        # roshambo's dense conv workload is ~0.018 GOp/frame
        assert r1.totals["gop_per_frame"] == pytest.approx(0.018, rel=0.01)

    def test_efficiency_can_exceed_one_with_sparsity(self, rng):
        net = presets.network("roshambo")
        t = random_tensor(rng, 1, 64, 64)
        r, _ = run_network(net, t, synthetic_sparsity=0.9)
        assert r.totals["efficiency"] > 0.0
        assert r.totals["gop_per_s"] == pytest.approx(
            r.totals["gop_per_frame"] * r.totals["frames_per_s"]
        )

    def test_identity_single_layer(self, tmp_path, rng):
        w1 = str(tmp_path / "id.nhw")
        kern = KernelSet(
            np.array([[[[1 << 8]]]], dtype=np.int16),
            np.zeros(1, dtype=np.int32),
            QFormat(8),
        )
        netmodel.save_weights(kern, w1)
        layer = LayerDescriptor(n_in=1, n_out=1, h=6, w=6, k=1, weights_path=w1)
        net = NetworkDescriptor([layer], name="id")
        t = random_tensor(rng, 1, 6, 6, sparsity=0.0, lo=1, hi=50)
        report, _ = run_network(net, t)
        assert report.totals["efficiency"] <= 1.0

    def test_input_mismatch_rejected(self, rng):
        net = presets.network("roshambo")
        with pytest.raises(ValidationError):
            run_network(net, random_tensor(rng, 1, 32, 32), synthetic_sparsity=0.8)

    def test_real_mode_requires_weights(self, rng):
        net = presets.network("roshambo")
        with pytest.raises(ValidationError, match="synthetic"):
            run_network(net, random_tensor(rng, 1, 64, 64))

    def test_report_json_serializable(self, rng):
        net = presets.network("face_detector")
        t = random_tensor(rng, 1, 36, 36)
        report, _ = run_network(net, t, synthetic_sparsity=0.8)
        doc = json.loads(json.dumps(report.as_dict()))
        assert doc["totals"]["cycles_total"] == report.totals["cycles_total"]

    def test_giga1net_mixed_shapes_run(self, rng):
        # exercises 1x1/7x7/5x5/3x3 kernels, padding and pooling mixes
        net = presets.network("giga1net")
        t = random_tensor(rng, 3, 224, 224, sparsity=0.0, lo=0, hi=255)
        report, _ = run_network(net, t, synthetic_sparsity=0.82)
        assert len(report.layers) == 11
        assert report.totals["gop_per_frame"] == pytest.approx(1.04, abs=0.01)
        assert report.layers[0]["cluster_size"] == 8

    def test_print_report_shows_same_numbers(self, rng, capsys):
        net = presets.network("face_detector")
        t = random_tensor(rng, 1, 36, 36)
        report, _ = run_network(net, t, synthetic_sparsity=0.8)
        print_report(report)
        out = capsys.readouterr().out
        assert str(report.layers[0]["cycles_total"]) in out
        assert f"{report.totals['gop_per_frame']:.3f}" in out


class TestCliCommands:
    def test_encode_decode_roundtrip(self, tmp_path, rng):
        t = random_tensor(rng, 3, 9, 9, sparsity=0.6)
        src = str(tmp_path / "t.nht")
        enc = str(tmp_path / "t.nhc")
        dst = str(tmp_path / "back.nht")
        netmodel.save_tensor(t, src)
        assert main(["encode", "--in", src, "--out", enc]) == 0
        assert main(["decode", "--in", enc, "--out", dst]) == 0
        back = netmodel.load_tensor(dst)
        assert np.array_equal(back.values, t.values)
        assert back.qformat == t.qformat

    def test_run_command_with_report_and_trace(self, tmp_path, rng, capsys):
        net = build_tiny_net(tmp_path, rng, with_fc=False)
        netpath = str(tmp_path / "net.json")
        netmodel.save_network(net, netpath)
        t = random_tensor(rng, 1, 8, 8)
        inpath = str(tmp_path / "in.nht")
        netmodel.save_tensor(t, inpath)
        report_path = str(tmp_path / "report.json")
        trace_path = str(tmp_path / "trace.txt")
        rc = main([
            "run", "--net", netpath, "--input", inpath,
            "--report", report_path, "--trace", trace_path,
        ])
        assert rc == 0
        doc = json.load(open(report_path))
        assert doc["totals"]["cycles_total"] == sum(
            e["cycles_total"] for e in doc["layers"]
        )
        trace_lines = [l for l in open(trace_path) if not l.startswith("#")]
        assert len(trace_lines) == doc["totals"]["cycles_total"]

    def test_run_command_synthetic(self, tmp_path, rng, capsys):
        net = presets.network("face_detector")
        netpath = str(tmp_path / "net.json")
        netmodel.save_network(net, netpath)
        t = random_tensor(rng, 1, 36, 36, sparsity=0.0)
        inpath = str(tmp_path / "in.nht")
        netmodel.save_tensor(t, inpath)
        rc = main([
            "run", "--net", netpath, "--input", inpath, "--synthetic-sparsity",
        ])
        assert rc == 0
        out = capsys.readouterr().out
        assert "GOp/frame" in out

    def test_compare_codecs_command(self, capsys):
        rc = main([
            "compare-codecs", "--sparsity-sweep", "0.2:0.6:0.2",
            "--precision", "16", "--trials", "40", "--seed", "3",
        ])
        assert rc == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[0].startswith("sparsity")
        assert len(lines) == 4

    def test_selfcheck_command_passes(self, capsys):
        assert main(["selfcheck", "--seed", "1", "--trials", "25"]) == 0
        assert "25 trials passed" in capsys.readouterr().out

    def test_clock_flag_scales_time_not_cycles(self, tmp_path, rng):
        net = presets.network("face_detector")
        netpath = str(tmp_path / "net.json")
        netmodel.save_network(net, netpath)
        t = random_tensor(rng, 1, 36, 36)
        fast, _ = run_network(net, t, HardwareConfig(clock_hz=500e6),
                              synthetic_sparsity=0.8, seed=1)
        slow, _ = run_network(net, t, HardwareConfig(clock_hz=250e6),
                              synthetic_sparsity=0.8, seed=1)
        assert slow.totals["cycles_total"] == fast.totals["cycles_total"]
        assert slow.totals["ms_per_frame"] == pytest.approx(
            2 * fast.totals["ms_per_frame"]
        )
        assert slow.totals["gop_per_s"] == pytest.approx(
            fast.totals["gop_per_s"] / 2
        )


class TestCompareCodecs:
    def test_parse_sweep(self):
        assert parse_sweep("0.1:0.3:0.1") == [0.1, 0.2, 0.3]
        with pytest.raises(ValueError):
            parse_sweep("nope")
        with pytest.raises(ValueError):
            parse_sweep("0.5:0.1:0.1")

    def test_dense_corpus_expands_under_both_codecs(self, rng):
        corpus = [netmodel.synthetic_tensor(2, 8, 16, 0.0, rng) for _ in range(5)]
        rows = compare_codecs_cmd([], corpus=corpus, file=io.StringIO())
        assert rows[0]["sm_ratio"] > 1.0
        assert rows[0]["rl_ratio"] > 1.0

    def test_high_sparsity_ratio_follows_size_model(self, rng):
        rows = compare_codecs_cmd([0.9], trials=150, seed=9, file=io.StringIO())
        # size model at 0.9: (1 + 16*0.1)/16
        assert rows[0]["sm_ratio"] == pytest.approx(0.1625, abs=0.02)

    def test_half_sparsity_ratio_follows_size_model(self):
        rows = compare_codecs_cmd([0.5], trials=400, seed=4, file=io.StringIO())
        # size model at 0.5: (1 + 8)/16 plus alignment overhead
        assert rows[0]["sm_ratio"] == pytest.approx(9 / 16, abs=0.02)

    def test_sm_below_rl_at_moderate_sparsity(self):
        rows = compare_codecs_cmd(
            [0.3, 0.5, 0.7], trials=150, seed=5, file=io.StringIO()
        )
        for row in rows:
            assert row["sm_bits"] <= row["rl_bits"]


class TestSelfCheck:
    def test_zero_trials_vacuous_pass(self, capsys):
        result = selfcheck(seed=1, trials=0)
        assert result.passed
        assert "vacuous" in capsys.readouterr().out

    def test_passes_on_correct_build(self, capsys):
        result = selfcheck(seed=1, trials=40)
        assert result.passed
        assert result.trials == 40

    def test_injected_padding_fault_is_detected(self, monkeypatch, capsys):
        import dataclasses

        real = refmodel.layer_forward

        def off_by_one_padding(t, layer, kern):
            try:
                delta = 1 if layer.pad < 3 else -1
                wrong = dataclasses.replace(layer, pad=layer.pad + delta)
            except ValidationError:
                wrong = dataclasses.replace(layer, relu=not layer.relu)
            return real(t, wrong, kern)

        monkeypatch.setattr(refmodel, "layer_forward", off_by_one_padding)
        result = selfcheck(seed=7, trials=10)
        assert not result.passed
        # the failure report carries full reproduction parameters
        assert "k=" in result.failures[0]
        assert "pad=" in result.failures[0]
        assert "seed=7" in result.failures[0]
