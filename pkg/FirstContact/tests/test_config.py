import json
import os
import shutil
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

from pydantic import ValidationError

from src.config import (
    AdcSpec,
    RunConfig,
    SynthSection,
    WindowSpec,
    apply_overrides,
    config_hash,
    load_run_config,
    samples_for,
)
from src.errors import ConfigError


class TestConfigModels(unittest.TestCase):
    """Test cases for the configuration models."""

    def test_defaults(self):
        """Test that the default models carry the documented constants."""
        cfg = RunConfig()
        self.assertEqual(cfg.seed, 7)
        self.assertEqual(cfg.window.detect_samples, 99)
        self.assertEqual(cfg.synth.synth.sample_rate_hz, 4936.0)
        self.assertIsNone(SynthSection().out_dir)

    def test_samples_for_rounds(self):
        """Test that durations round to the nearest whole sample."""
        self.assertEqual(samples_for(17.0, 4936.0), 84)
        self.assertEqual(samples_for(3.0, 4936.0), 15)
        self.assertEqual(samples_for(15.0, 4936.0), 74)

    def test_invalid_values(self):
        """Test that out-of-range values are rejected."""
        with self.assertRaises(ValidationError):
            WindowSpec(detect_new_ms=0.05)
        with self.assertRaises(ValidationError):
            AdcSpec(offset_v=4.0)
        with self.assertRaises(ValidationError):
            RunConfig.model_validate({"train": {"unknown": 1}})

    def test_hash_tracks_content(self):
        """Test that the config hash changes only when content changes."""
        a, b = RunConfig(), RunConfig()
        self.assertEqual(config_hash(a), config_hash(b))
        self.assertEqual(len(config_hash(a)), 64)
        b.train.kernel.c_penalty = 100.0
        self.assertNotEqual(config_hash(a), config_hash(b))


class TestLoadRunConfig(unittest.TestCase):
    """Test cases for loading configuration files and overrides."""

    def setUp(self):
        self.tmp = Path(tempfile.mkdtemp())
        self.path = self.tmp / "run.json"
        self.path.write_text(json.dumps({"seed": 11, "train": {"model": "svc", "kernel": {"c_penalty": 1.0}}}))

    def tearDown(self):
        shutil.rmtree(self.tmp)

    def test_overrides(self):
        """Test that dotted overrides replace nested fields."""
        cfg = load_run_config(None, ["train.kernel.c_penalty=100", "seed=3", "stream.detector=svm"])
        self.assertEqual(cfg.train.kernel.c_penalty, 100.0)
        self.assertEqual(cfg.seed, 3)
        self.assertEqual(cfg.stream.detector, "svm")

    def test_apply_overrides_parses_json(self):
        """Test that override values are parsed as JSON where possible."""
        data = apply_overrides({}, ["train.window_offsets=[0, 1]", "eval.out_dir=reports/x"])
        self.assertEqual(data, {"train": {"window_offsets": [0, 1]}, "eval": {"out_dir": "reports/x"}})

    def test_file_then_overrides(self):
        """Test that overrides apply on top of the config file."""
        cfg = load_run_config(str(self.path), ["seed=5"])
        self.assertEqual(cfg.seed, 5)
        self.assertEqual(cfg.train.model, "svc")
        self.assertEqual(cfg.train.kernel.c_penalty, 1.0)

    def test_environment_variable(self):
        """Test that FIRSTCONTACT_CONFIG is used when no path is given."""
        with patch.dict(os.environ, {"FIRSTCONTACT_CONFIG": str(self.path)}):
            self.assertEqual(load_run_config().seed, 11)

    def test_errors(self):
        """Test that bad overrides and unreadable files raise ConfigError."""
        with self.assertRaises(ConfigError):
            load_run_config(None, ["train.colour=red"])
        with self.assertRaises(ConfigError):
            load_run_config(None, ["seed"])
        with self.assertRaises(ConfigError):
            load_run_config(None, ["seed.value=1"])
        with self.assertRaises(ConfigError):
            load_run_config(str(self.tmp / "missing.json"))
        broken = self.tmp / "broken.json"
        broken.write_text("{")
        with self.assertRaises(ConfigError):
            load_run_config(str(broken))

    def test_config_error_exit_code(self):
        """Test that configuration errors carry exit code 2."""
        self.assertEqual(ConfigError("x").exit_code, 2)


if __name__ == "__main__":
    unittest.main()
