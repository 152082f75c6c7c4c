import pytest

from nhsim import presets
from nhsim.accel import HardwareConfig, dense_input_stream_bytes, plan_layer
from nhsim.netmodel import LayerDescriptor, ValidationError

HW = HardwareConfig()


def layer(n_in, n_out, k, h=32, w=32, pad=0, **kw):
    return LayerDescriptor(n_in=n_in, n_out=n_out, k=k, h=h, w=w, pad=pad, **kw)


class TestPassRules:
    def test_one_to_one_mapping(self):
        s = plan_layer(layer(64, 128, 3), HW)
        assert s.n_passes == 1
        assert s.passes[0].chan_count == 128
        assert s.passes[0].cluster_size == 1
        assert s.passes[0].active_controllers == 1

    def test_256_outputs_two_passes(self):
        s = plan_layer(layer(64, 256, 3), HW)
        assert s.n_passes == 2
        assert [p.chan_count for p in s.passes] == [128, 128]
        assert [p.chan_start for p in s.passes] == [0, 128]

    def test_uneven_split_is_balanced(self):
        s = plan_layer(layer(8, 200, 3), HW)
        assert s.n_passes == 2
        assert [p.chan_count for p in s.passes] == [100, 100]
        assert all(p.cluster_size == 1 for p in s.passes)

    def test_16_outputs_cluster_of_8(self):
        s = plan_layer(layer(3, 16, 1, h=224, w=224), HW)
        assert s.n_passes == 1
        assert s.passes[0].cluster_size == 8
        assert s.passes[0].active_controllers == 8

    def test_kernel_bank_overflow_clusters_in_pairs(self):
        # 512 * 3 * 3 = 4608 values > 4096 per bank
        s = plan_layer(layer(512, 512, 3, h=14, w=14, pad=1), HW)
        assert s.passes[0].bank_group == 2
        assert all(p.chan_count == 64 for p in s.passes)
        assert s.n_passes == 8
        assert all(p.cluster_size == 2 for p in s.passes)
        assert s.values_per_bank <= HW.kernel_bank_values

    def test_controllers_capped(self):
        s = plan_layer(layer(3, 5, 3), HW)
        # 25 MACs cooperate per channel but only 8 controllers exist
        assert s.passes[0].cluster_size == 25
        assert s.passes[0].active_controllers == 8

    def test_channel_ranges_partition_output(self):
        for n_out in (5, 16, 100, 128, 200, 256, 500, 1024):
            s = plan_layer(layer(16, n_out, 3), HW)
            covered = []
            for p in s.passes:
                covered.extend(range(p.chan_start, p.chan_start + p.chan_count))
            assert covered == list(range(n_out))
            assert all(p.macs_used <= HW.macs for p in s.passes)

    def test_deterministic(self):
        l = layer(48, 96, 5)
        assert plan_layer(l, HW) == plan_layer(l, HW)

    def test_kernel_too_large_for_hw(self):
        small_hw = HardwareConfig(max_kernel=5)
        with pytest.raises(ValidationError):
            plan_layer(layer(4, 4, 7), small_hw)

    def test_huge_footprint_still_schedulable(self):
        # 1024 channels, k=7: 50176 values -> groups of 13 banks
        s = plan_layer(layer(1024, 16, 7, h=16, w=16), HW)
        assert s.passes[0].bank_group == 13
        assert s.values_per_bank <= HW.kernel_bank_values
        assert all(p.macs_used <= HW.macs for p in s.passes)


class TestVggShapes:
    def test_all_vgg19_layers_follow_the_rules(self):
        net = presets.network("vgg19")
        for l in net.layers:
            s = plan_layer(l, HW)
            footprint = l.n_in * l.k * l.k
            if footprint > HW.kernel_bank_values:
                assert s.passes[0].bank_group == 2
                assert s.passes[0].chan_count <= 64
            if l.n_out > HW.macs:
                assert s.n_passes >= 2
            else:
                if footprint <= HW.kernel_bank_values:
                    assert s.n_passes == 1
            assert s.values_per_bank <= HW.kernel_bank_values

    def test_early_vgg_layers_stream_once_even_when_input_is_big(self):
        net = presets.network("vgg19")
        second = net.layers[1]  # 64x224x224 input, far beyond pixel memory
        s = plan_layer(second, HW)
        # a single-pass layer never needs to re-stream, however big the input
        assert dense_input_stream_bytes(second) > HW.pixel_mem_bytes
        assert s.n_passes == 1
        assert s.input_reload is False

    def test_multi_pass_large_input_flags_reload(self):
        l = layer(64, 256, 3, h=224, w=224, pad=1)
        s = plan_layer(l, HW)
        assert s.n_passes == 2
        assert s.input_reload is True  # dense bound exceeds pixel memory

    def test_multi_pass_small_input_no_reload(self):
        l = layer(64, 256, 3, h=14, w=14, pad=1)
        s = plan_layer(l, HW)
        assert s.n_passes == 2
        assert s.input_reload is False


def test_controller_divides_macs_invariant():
    with pytest.raises(ValidationError):
        HardwareConfig(macs=100, controllers=8)
