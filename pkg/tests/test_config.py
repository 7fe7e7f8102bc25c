"""
Tests for experiment configuration loading and validation
"""
import json

import pytest

from app.config import ExperimentConfig
from app.errors import ConfigurationError, ParseError


@pytest.mark.unit
class TestValidation:
    """Test cases for ExperimentConfig.validate"""

    def test_defaults_are_valid(self, tmp_path):
        ExperimentConfig(output_dir=str(tmp_path)).validate()

    def test_errors_are_collected(self, tmp_path):
        config = ExperimentConfig(output_dir=str(tmp_path), epsilons=[0.7], ks=[0, 5],
                                  svm_folds=1)
        with pytest.raises(ConfigurationError) as exc_info:
            config.validate()
        message = str(exc_info.value)
        assert 'epsilons' in message
        assert 'ks must lie in [1, 686]' in message
        assert 'svm_folds' in message

    def test_unknown_manipulation(self, tmp_path):
        with pytest.raises(ConfigurationError):
            ExperimentConfig(output_dir=str(tmp_path), manipulations=['blur']).validate()

    def test_theory_ks_bounded_by_n(self, tmp_path):
        config = ExperimentConfig(output_dir=str(tmp_path), theory_n=20, theory_ks=[1, 21],
                                  angle_ks=[5])
        with pytest.raises(ConfigurationError) as exc_info:
            config.validate()
        assert '[1, 20]' in str(exc_info.value)

    def test_missing_corpus(self, tmp_path):
        config = ExperimentConfig(output_dir=str(tmp_path), corpus_root=str(tmp_path / 'nope'))
        with pytest.raises(ConfigurationError):
            config.validate()
        config.validate(check_paths=False)


@pytest.mark.unit
class TestLoading:
    """Test cases for files and overrides"""

    def test_file_then_overrides(self, tmp_path):
        path = tmp_path / 'config.json'
        path.write_text(json.dumps({'schema_version': 1, 'master_seed': 3, 'maps_per_k': 7,
                                    'output_dir': str(tmp_path / 'out')}))
        config = ExperimentConfig.load(path, {'master_seed': 11, 'ks': None})
        assert config.master_seed == 11
        assert config.maps_per_k == 7
        assert config.ks == ExperimentConfig().ks

    def test_unknown_key_names_field(self, tmp_path):
        path = tmp_path / 'config.json'
        path.write_text(json.dumps({'maps_per_kk': 7}))
        with pytest.raises(ParseError) as exc_info:
            ExperimentConfig.load(path)
        assert exc_info.value.field == 'maps_per_kk'

    def test_future_schema(self):
        with pytest.raises(ParseError) as exc_info:
            ExperimentConfig.from_dict({'schema_version': 2})
        assert exc_info.value.field == 'schema_version'

    def test_invalid_json_offset(self, tmp_path):
        path = tmp_path / 'config.json'
        path.write_text('{"ks": [1, 2,]}')
        with pytest.raises(ParseError) as exc_info:
            ExperimentConfig.from_file(path)
        assert exc_info.value.offset is not None

    def test_non_object_json(self, tmp_path):
        path = tmp_path / 'config.json'
        path.write_text('[1, 2]')
        with pytest.raises(ParseError):
            ExperimentConfig.from_file(path)

    def test_unknown_override(self, tmp_path):
        with pytest.raises(ConfigurationError):
            ExperimentConfig.load(None, {'output_dir': str(tmp_path), 'colour': 'red'})

    def test_invalid_override_fails_validation(self, tmp_path):
        with pytest.raises(ConfigurationError):
            ExperimentConfig.load(None, {'output_dir': str(tmp_path), 'pixel_fraction': 0.0})

    def test_save_and_load(self, tmp_path):
        config = ExperimentConfig(output_dir=str(tmp_path / 'out'), master_seed=5, epsilons=[0.3])
        path = config.save(tmp_path / 'saved' / 'config.json')
        assert json.loads(path.read_text())['schema_version'] == 1
        assert ExperimentConfig.load(path) == config

    def test_summary_lines(self, desk_config):
        lines = desk_config.summary_lines()
        assert any('master seed: 0' in line for line in lines)
        assert lines[-1] == f"output: {desk_config.output_dir}"
