import itertools

import numpy as np
import pytest

from diffcore.ops import add, negative_log_likelihood, sum_all
from diffcore.tensor import Graph, backward
from nets.mscmt_net import build_mscmt_net, forward_mscmt
from nets.network_config import (
    NetworkConfig,
    desk_main_config,
    desk_region_config,
    full_scale_config,
    parameter_count,
)
from nets.region_net import build_region_net, forward_region
from utils.errors import ConfigError, ShapeError


def _flag_combinations():
    for multiscale, cascade, multitask in itertools.product((False, True), ("none", "common", "full"), (False, True)):
        for aggregation in ((False, True) if multitask else (False,)):
            yield dict(multiscale=multiscale, cascade_level=cascade, multitask=multitask, aggregation=aggregation)
    yield dict(multiscale=True, cascade_level="full", multitask=True, aggregation=True, scaled_map_injection=True)


# ============================================================================
# Region net
# ============================================================================

class TestRegionNet:
    def test_desk_output_is_probability_map(self, rng):
        cfg = NetworkConfig(
            input_size=64, base_channels=(4, 8, 16, 32), multiscale=False, cascade_level="none",
            multitask=False, aggregation=False,
        )
        out = forward_region(build_region_net(cfg, seed=0), rng.random((64, 64)))
        assert out.shape == (1, 64, 64)
        assert np.all((out.values > 0) & (out.values < 1))

    def test_same_seed_same_weights(self, tiny_region_config):
        a = build_region_net(tiny_region_config, seed=7).state_dict()
        b = build_region_net(tiny_region_config, seed=7).state_dict()
        assert list(a) == list(b)
        for name in a:
            np.testing.assert_array_equal(a[name], b[name])

    def test_different_seed_different_weights(self, tiny_region_config):
        a = build_region_net(tiny_region_config, seed=0).state_dict()
        b = build_region_net(tiny_region_config, seed=1).state_dict()
        assert any(not np.array_equal(a[n], b[n]) for n in a)

    def test_parameter_count_closed_form(self, tiny_region_config):
        net = build_region_net(tiny_region_config)
        assert net.parameter_count() == parameter_count(tiny_region_config, "region")

    def test_wrong_input_extent(self, tiny_region_config):
        with pytest.raises(ShapeError):
            forward_region(build_region_net(tiny_region_config), np.zeros((32, 32)))

    def test_gradients_reach_stem(self, tiny_region_config, rng):
        net = build_region_net(tiny_region_config)
        with Graph() as graph:
            loss = sum_all(forward_region(net, rng.random((16, 16))))
        backward(graph, loss)
        assert np.any(net.parameters["stem.weight"].grad != 0)


# ============================================================================
# Multiscale cascaded multitask net
# ============================================================================

class TestMscmtNet:
    def test_full_config_outputs(self, tiny_main_config, rng):
        net = build_mscmt_net(tiny_main_config, seed=0)
        pair = forward_mscmt(net, rng.random((16, 16)), rng.random((16, 16)))
        assert pair.seg_map.shape == (1, 16, 16)
        assert np.all((pair.seg_map.values > 0) & (pair.seg_map.values < 1))
        assert pair.class_probs.shape == (3,)
        assert float(pair.class_probs.values.sum()) == pytest.approx(1.0, abs=1e-5)

    def test_single_task_has_no_class_probs(self, tiny_main_config, rng):
        cfg = tiny_main_config.with_flags(multitask=False, aggregation=False)
        pair = forward_mscmt(build_mscmt_net(cfg), rng.random((16, 16)), rng.random((16, 16)))
        assert pair.class_probs is None

    @pytest.mark.parametrize("flags", list(_flag_combinations()))
    def test_parameter_count_closed_form(self, tiny_main_config, flags):
        cfg = tiny_main_config.with_flags(**flags)
        assert build_mscmt_net(cfg).parameter_count() == parameter_count(cfg, "mscmt")

    @pytest.mark.parametrize("flags", list(_flag_combinations()))
    def test_output_contract(self, tiny_main_config, flags, rng):
        cfg = tiny_main_config.with_flags(**flags)
        pair = forward_mscmt(build_mscmt_net(cfg, seed=0), rng.random((16, 16)), rng.random((16, 16)))
        assert pair.seg_map.shape == (1, 16, 16)
        assert np.all((pair.seg_map.values > 0) & (pair.seg_map.values < 1))
        if cfg.multitask:
            assert pair.class_probs.shape == (3,)
            assert np.all(pair.class_probs.values >= 0)
            assert float(pair.class_probs.values.sum()) == pytest.approx(1.0, abs=1e-5)
        else:
            assert pair.class_probs is None

    @pytest.mark.parametrize(
        "base_flags, toggled, prefixes",
        [
            (dict(multiscale=False), dict(multiscale=True), ("enc2.sub1.", "enc3.sub1.", "enc4.sub1.")),
            (dict(cascade_level="none"), dict(cascade_level="common"), ("enc1.sub1.",)),
            (dict(cascade_level="common"), dict(cascade_level="full"), ("dec2.", "dec3.", "dec4.", "head.")),
            (dict(aggregation=False), dict(aggregation=True), ("cls.fc1.weight",)),
        ],
    )
    def test_switch_touches_only_its_component(self, tiny_main_config, base_flags, toggled, prefixes):
        off = build_mscmt_net(tiny_main_config.with_flags(**base_flags)).state_dict()
        on = build_mscmt_net(tiny_main_config.with_flags(**toggled)).state_dict()
        assert set(off) == set(on)
        reshaped = {name for name in on if on[name].shape != off[name].shape}
        assert reshaped and all(name.startswith(prefixes) for name in reshaped)

    def test_multitask_switch_adds_only_classifier(self, tiny_main_config):
        single = build_mscmt_net(tiny_main_config.with_flags(multitask=False, aggregation=False)).state_dict()
        multi = build_mscmt_net(tiny_main_config.with_flags(aggregation=False)).state_dict()
        assert set(multi) - set(single) == {"cls.fc1.weight", "cls.fc1.bias", "cls.fc2.weight", "cls.fc2.bias"}
        assert set(single) <= set(multi)
        assert all(single[name].shape == multi[name].shape for name in single)

    def test_no_cascade_ignores_map(self, tiny_main_config, rng):
        cfg = tiny_main_config.with_flags(cascade_level="none")
        net = build_mscmt_net(cfg, seed=3)
        image = rng.random((16, 16))
        a = forward_mscmt(net, image, np.zeros((16, 16)))
        b = forward_mscmt(net, image, np.ones((16, 16)))
        np.testing.assert_array_equal(a.seg_map.values, b.seg_map.values)
        np.testing.assert_array_equal(a.class_probs.values, b.class_probs.values)

    @pytest.mark.parametrize("level", ["common", "full"])
    def test_cascade_reads_map(self, tiny_main_config, rng, level):
        net = build_mscmt_net(tiny_main_config.with_flags(cascade_level=level), seed=3)
        image = rng.random((16, 16))
        a = forward_mscmt(net, image, np.zeros((16, 16)))
        b = forward_mscmt(net, image, np.ones((16, 16)))
        assert not np.array_equal(a.seg_map.values, b.seg_map.values)

    def test_missing_map_rejected(self, tiny_main_config, rng):
        with pytest.raises(ShapeError):
            forward_mscmt(build_mscmt_net(tiny_main_config), rng.random((16, 16)))

    def test_map_extent_checked(self, tiny_main_config, rng):
        with pytest.raises(ShapeError):
            forward_mscmt(build_mscmt_net(tiny_main_config), rng.random((16, 16)), np.zeros((8, 8)))

    def test_aggregation_widens_classifier(self, tiny_main_config):
        plain = build_mscmt_net(tiny_main_config.with_flags(aggregation=False))
        aggregated = build_mscmt_net(tiny_main_config)
        assert plain.classifier_width() == 8
        assert aggregated.classifier_width() == 8 + sum(tiny_main_config.base_channels)
        assert aggregated.parameters["cls.fc1.weight"].shape == (8, aggregated.classifier_width())

    def test_gradients_reach_both_heads_and_encoder(self, tiny_main_config, rng):
        net = build_mscmt_net(tiny_main_config.with_flags(dtype="float64"))
        with Graph() as graph:
            pair = forward_mscmt(net, rng.random((16, 16)), rng.random((16, 16)))
            loss = add(sum_all(pair.seg_map), negative_log_likelihood(pair.class_probs, 0))
        backward(graph, loss)
        for name in ("head.weight", "cls.fc1.weight", "cls.fc2.weight", "enc1.sub1.conv1.weight"):
            assert np.any(net.parameters[name].grad != 0), name

    def test_segmentation_loss_leaves_classifier_untouched(self, tiny_main_config, rng):
        net = build_mscmt_net(tiny_main_config.with_flags(dtype="float64"))
        with Graph() as graph:
            pair = forward_mscmt(net, rng.random((16, 16)), rng.random((16, 16)))
            loss = sum_all(pair.seg_map)
        backward(graph, loss)
        assert np.any(net.parameters["enc4.sub2.conv2.weight"].grad != 0)
        assert not np.any(net.parameters["cls.fc2.weight"].grad)

    def test_state_dict_round_trip(self, tiny_main_config, rng):
        source = build_mscmt_net(tiny_main_config, seed=1)
        target = build_mscmt_net(tiny_main_config, seed=2)
        target.load_state_dict(source.state_dict())
        image, prob_map = rng.random((16, 16)), rng.random((16, 16))
        np.testing.assert_array_equal(
            forward_mscmt(source, image, prob_map).seg_map.values,
            forward_mscmt(target, image, prob_map).seg_map.values,
        )

    def test_state_dict_shape_mismatch(self, tiny_main_config):
        net = build_mscmt_net(tiny_main_config)
        state = net.state_dict()
        state["head.bias"] = np.zeros(5)
        with pytest.raises(ShapeError):
            net.load_state_dict(state)


# ============================================================================
# NetworkConfig
# ============================================================================

class TestNetworkConfig:
    @pytest.mark.parametrize(
        "changes",
        [
            dict(aggregation=True, multitask=False),
            dict(input_size=40),
            dict(input_size=0),
            dict(cascade_level="partial"),
            dict(scaled_map_injection=True, cascade_level="none"),
            dict(base_channels=(4, 8, 16)),
            dict(dtype="float16"),
        ],
    )
    def test_invalid(self, changes):
        with pytest.raises(ConfigError):
            NetworkConfig(**changes).validate()

    def test_invalid_config_refused_at_build(self, tiny_main_config):
        with pytest.raises(ConfigError):
            build_mscmt_net(tiny_main_config.with_flags(multitask=False))

    def test_dict_round_trip(self, tiny_main_config):
        assert NetworkConfig.from_dict(tiny_main_config.to_dict()) == tiny_main_config

    def test_factories_validate(self):
        assert desk_main_config().uses_map
        assert not desk_region_config().uses_map
        assert full_scale_config().base_channels == (64, 128, 256, 512)
        assert full_scale_config().fc_hidden == 1024

    def test_full_scale_widths_exceed_desk(self):
        assert parameter_count(full_scale_config(), "mscmt") > parameter_count(desk_main_config(), "mscmt")

    def test_unknown_architecture(self, tiny_main_config):
        with pytest.raises(ConfigError):
            parameter_count(tiny_main_config, "unet")
