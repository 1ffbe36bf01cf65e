import math
import struct
from dataclasses import replace

import numpy as np
import pytest

from harness.checkpoint import Checkpoint, checkpoint_bytes, checkpoint_from_bytes, checkpoint_load, checkpoint_save
from harness.run_config import RunConfig, load_run_config, run_config_keys
from nets.region_net import build_region_net
from utils.errors import (
    EXIT_DATA,
    CheckpointCorruptError,
    CheckpointError,
    CheckpointFingerprintError,
    CheckpointVersionError,
    ConfigError,
)


def _write(path, text):
    path.write_text(text)
    return str(path)


def _checkpoint(cfg: RunConfig, epoch: int = 1) -> Checkpoint:
    net = build_region_net(cfg.region, seed=cfg.seed)
    for param in net.parameter_list():
        param.momentum_buffer[...] = 0.25
    return Checkpoint(
        stage="region",
        config=cfg.to_dict(include_paths=False),
        fingerprint=cfg.fingerprint(),
        epoch=epoch,
        parameters=net.state_dict(),
        momentum=net.momentum_dict(),
        rng_state=np.random.Generator(np.random.PCG64(cfg.seed)).bit_generator.state,
        loss_trace=[0.75, 0.5 + 1e-9][:epoch],
    )


# ============================================================================
# Run configuration
# ============================================================================

class TestRunConfig:
    def test_desk_defaults(self):
        cfg = RunConfig.desk()
        assert cfg.epochs == 30 and cfg.lr == 0.001 and cfg.momentum == 0.9
        assert cfg.network.input_size == 2 * cfg.half_window
        assert cfg.region.input_size == 128

    def test_full_scale_epochs(self):
        assert RunConfig().epochs == 150

    @pytest.mark.parametrize(
        "changes",
        [
            {"epochs": 0}, {"lr": 0.0}, {"momentum": 1.0}, {"batch_size": 0}, {"fold": 5},
            {"num_folds": 1}, {"crop_mode": "pad"}, {"empty_fallback": "skip"}, {"threshold": 1.0},
        ],
    )
    def test_invalid(self, changes):
        with pytest.raises(ConfigError):
            RunConfig.desk(**changes)

    def test_overrides_ignore_none(self):
        cfg = RunConfig.desk()
        assert cfg.with_overrides(seed=None, fold=None) is cfg
        assert cfg.with_overrides(seed=3).seed == 3

    def test_dict_round_trip(self, tiny_run_config):
        assert RunConfig.from_dict(tiny_run_config.to_dict()) == tiny_run_config

    def test_fingerprint_ignores_epochs_and_paths(self, tiny_run_config):
        base = tiny_run_config.fingerprint()
        assert replace(tiny_run_config, epochs=9).fingerprint() == base
        assert replace(tiny_run_config, out_dir="/elsewhere", manifest="m.csv").fingerprint() == base
        assert replace(tiny_run_config, lr=0.01).fingerprint() != base
        assert replace(tiny_run_config, seed=1).fingerprint() != base


class TestLoadRunConfig:
    def test_parses_every_section(self, tmp_path):
        path = _write(tmp_path / "run.cfg", "\n".join([
            "epochs=7",
            "lr=0.01",
            "patient_disjoint=yes",
            "base_channels=4,8,16,32",
            "cascade_level=common",
            "region_input_size=64",
            "alpha_cls=0",
            "clip_limit=inf",
            "clahe_tiles=4,4",
            "out_dir=runs/x",
        ]))
        cfg = load_run_config(path)
        assert cfg.epochs == 7 and cfg.lr == 0.01 and cfg.patient_disjoint
        assert cfg.network.base_channels == (4, 8, 16, 32)
        assert cfg.network.fc_hidden == 64
        assert cfg.network.cascade_level == "common"
        assert cfg.region.input_size == 64
        assert cfg.loss.alpha_cls == 0.0
        assert math.isinf(cfg.enhancement.clip_limit) and cfg.enhancement.tiles == (4, 4)
        assert cfg.out_dir == "runs/x"

    def test_dtype_applies_to_both_networks(self, tmp_path):
        cfg = load_run_config(_write(tmp_path / "run.cfg", "dtype=float64\n"))
        assert cfg.network.dtype == cfg.region.dtype == "float64"

    def test_unknown_key(self, tmp_path):
        with pytest.raises(ConfigError, match="learning_rate"):
            load_run_config(_write(tmp_path / "run.cfg", "learning_rate=0.1\n"))

    def test_bad_boolean(self, tmp_path):
        with pytest.raises(ConfigError):
            load_run_config(_write(tmp_path / "run.cfg", "multitask=maybe\n"))

    def test_bad_number(self, tmp_path):
        with pytest.raises(ConfigError):
            load_run_config(_write(tmp_path / "run.cfg", "epochs=many\n"))

    def test_invalid_combination(self, tmp_path):
        with pytest.raises(ConfigError):
            load_run_config(_write(tmp_path / "run.cfg", "multitask=false\naggregation=true\n"))

    @pytest.mark.parametrize(
        "line", ["median_k=4", "median_k=0", "clip_limit=0", "clip_limit=0.5", "clip_limit=nan",
                 "clahe_bins=100", "clahe_tiles=0,8", "clahe_tiles=8"],
    )
    def test_invalid_enhancement(self, tmp_path, line):
        with pytest.raises(ConfigError):
            load_run_config(_write(tmp_path / "run.cfg", line + "\n"))

    def test_enhancement_limits_accepted(self, tmp_path):
        cfg = load_run_config(_write(tmp_path / "run.cfg", "median_k=1\nclip_limit=1\nclahe_bins=65536\n"))
        assert (cfg.enhancement.median_k, cfg.enhancement.clip_limit, cfg.enhancement.bins) == (1, 1.0, 65536)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_run_config(str(tmp_path / "absent.cfg"))

    def test_documented_keys(self):
        keys = run_config_keys()
        assert {"epochs", "base_channels", "region_channels", "omega0", "clahe_bins", "manifest"} <= set(keys)


# ============================================================================
# Checkpoints
# ============================================================================

class TestCheckpoint:
    def test_bytes_round_trip(self, tiny_run_config):
        payload = checkpoint_bytes(_checkpoint(tiny_run_config, epoch=2))
        assert checkpoint_bytes(checkpoint_from_bytes(payload)) == payload

    def test_file_round_trip(self, tiny_run_config, tmp_path):
        ckpt = _checkpoint(tiny_run_config)
        path = checkpoint_save(ckpt, str(tmp_path / "ckpts" / "region.ckpt"))
        loaded = checkpoint_load(path, tiny_run_config.fingerprint())
        assert loaded.stage == "region" and loaded.epoch == 1 and loaded.loss_trace == [0.75]
        assert loaded.rng_state == ckpt.rng_state
        for name, values in ckpt.parameters.items():
            np.testing.assert_array_equal(loaded.parameters[name], values)
            assert loaded.parameters[name].dtype == values.dtype
        np.testing.assert_array_equal(next(iter(loaded.momentum.values())), 0.25)
        assert loaded.run_config.region == tiny_run_config.region

    def test_truncated(self, tiny_run_config):
        payload = checkpoint_bytes(_checkpoint(tiny_run_config))
        with pytest.raises(CheckpointCorruptError) as raised:
            checkpoint_from_bytes(payload[:-3])
        assert raised.value.code == "corrupt-length"
        assert raised.value.exit_code == EXIT_DATA

    def test_trailing_bytes(self, tiny_run_config):
        payload = checkpoint_bytes(_checkpoint(tiny_run_config))
        with pytest.raises(CheckpointCorruptError):
            checkpoint_from_bytes(payload + b"\x00")

    def test_bad_magic(self, tiny_run_config):
        payload = checkpoint_bytes(_checkpoint(tiny_run_config))
        with pytest.raises(CheckpointCorruptError):
            checkpoint_from_bytes(b"NOTACKPT" + payload[8:])

    def test_unsupported_version(self, tiny_run_config):
        payload = bytearray(checkpoint_bytes(_checkpoint(tiny_run_config)))
        payload[8:12] = struct.pack("<I", 99)
        with pytest.raises(CheckpointVersionError) as raised:
            checkpoint_from_bytes(bytes(payload))
        assert raised.value.code == "version"

    def test_fingerprint_mismatch(self, tiny_run_config):
        payload = checkpoint_bytes(_checkpoint(tiny_run_config))
        other = replace(tiny_run_config, lr=0.5).fingerprint()
        with pytest.raises(CheckpointFingerprintError) as raised:
            checkpoint_from_bytes(payload, other)
        assert raised.value.code == "fingerprint"

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            checkpoint_load(str(tmp_path / "absent.ckpt"))

    def test_unknown_stage(self, tiny_run_config):
        ckpt = replace(_checkpoint(tiny_run_config), stage="decoder")
        with pytest.raises(CheckpointError):
            checkpoint_bytes(ckpt)
