"""
Tests for dataset preparation and the feature extraction service
"""
from pathlib import Path

import numpy as np
import pytest

from app.errors import ConfigurationError, ParameterError
from app.imaging.feature_store import content_hash
from app.imaging.image_io import read_image, write_image
from app.imaging.manipulations import ManipulationKind, median_filter
from app.imaging.spam import SPAM_DIM, extract_spam
from app.services.batch_processor import TaskPool
from app.services.dataset import (MANIFEST_NAME, ORIGINAL, TEST, TRAIN, SplitManifest,
                                  manipulate_images, mirrored_target, prepare_dataset,
                                  split_indices)
from app.services.features import FeatureMatrix, FeatureService


@pytest.mark.unit
class TestSplitIndices:
    """Test cases for the seeded split"""

    def test_disjoint_and_sorted(self):
        train, test = split_indices(20, 12, 5, master_seed=3)
        assert len(train) == 12 and len(test) == 5
        assert not set(train) & set(test)
        assert train == sorted(train)

    def test_seed_changes_split(self):
        assert split_indices(50, 10, 10, 0) == split_indices(50, 10, 10, 0)
        assert split_indices(50, 10, 10, 0) != split_indices(50, 10, 10, 1)

    def test_too_large(self):
        with pytest.raises(ConfigurationError):
            split_indices(10, 8, 3, 0)


@pytest.mark.integration
class TestPrepareDataset:
    """Test cases for prepare_dataset over a synthetic corpus"""

    def test_split_and_variants(self, desk_config, tmp_path):
        root = tmp_path / 'dataset'
        manifest = prepare_dataset(desk_config, root)

        assert len(manifest.split(TRAIN)) == 8
        assert len(manifest.split(TEST)) == 4
        assert manifest.skipped[0]['path'] == 'broken.pgm'
        assert manifest.variants == [ORIGINAL, 'mf3']
        entry = manifest.split(TEST)[0]
        original = read_image(root / entry.relative_path(ORIGINAL))
        filtered = read_image(root / entry.relative_path('mf3'))
        assert original.shape == (32, 32)
        assert np.array_equal(filtered, median_filter(original, 3))
        assert entry.hashes['mf3'] == content_hash(filtered).hex()

    def test_deterministic(self, desk_config, tmp_path):
        a = prepare_dataset(desk_config, tmp_path / 'a', TaskPool(max_workers=1))
        b = prepare_dataset(desk_config, tmp_path / 'b', TaskPool(max_workers=4))
        assert a.to_dict() == b.to_dict()

    def test_manifest_round_trip(self, desk_config, tmp_path):
        manifest = prepare_dataset(desk_config, tmp_path / 'dataset')
        loaded = SplitManifest.load(tmp_path / 'dataset' / MANIFEST_NAME)
        assert loaded == manifest

    def test_split_larger_than_corpus(self, desk_config, tmp_path):
        desk_config.train_size = 10
        with pytest.raises(ConfigurationError) as exc_info:
            prepare_dataset(desk_config, tmp_path / 'dataset')
        assert exc_info.value.context['usable'] == 12

    def test_images_below_min_side_are_skipped(self, desk_config, tmp_path):
        desk_config.min_side = 64
        with pytest.raises(ConfigurationError):
            prepare_dataset(desk_config, tmp_path / 'dataset')

    def test_corpus_required(self, desk_config, tmp_path):
        desk_config.corpus_root = None
        with pytest.raises(ConfigurationError):
            prepare_dataset(desk_config, tmp_path / 'dataset')

    def test_unknown_split_name(self, desk_config, tmp_path):
        manifest = prepare_dataset(desk_config, tmp_path / 'dataset')
        with pytest.raises(ParameterError):
            manifest.split('validation')


@pytest.mark.integration
class TestManipulateImages:
    def test_writes_one_pgm_per_input(self, corpus_dir, tmp_path):
        paths = sorted(corpus_dir.glob('img_0[0-2].pgm'))
        written = manipulate_images(paths, ManipulationKind.MF5, tmp_path / 'mf5')
        assert [p.name for p in written] == ['img_00.pgm', 'img_01.pgm', 'img_02.pgm']
        assert np.array_equal(read_image(written[0]), median_filter(read_image(paths[0]), 5))

    def test_mirrors_directory_tree(self, tmp_path):
        root = tmp_path / 'in'
        for folder, value in (('dir1', 10), ('dir2', 200)):
            write_image(np.full((32, 32), value, dtype=np.uint8), root / folder / 'x.pgm')
        paths = sorted(root.rglob('*.pgm'))
        out = tmp_path / 'out'
        written = manipulate_images(paths, ManipulationKind.MF3, out, root=root)

        assert sorted(out.rglob('*.pgm')) == [out / 'dir1' / 'x.pgm', out / 'dir2' / 'x.pgm']
        assert written == [out / 'dir1' / 'x.pgm', out / 'dir2' / 'x.pgm']
        assert np.all(read_image(out / 'dir1' / 'x.pgm') == 10)
        assert np.all(read_image(out / 'dir2' / 'x.pgm') == 200)

    def test_same_stem_without_root_is_rejected(self, tmp_path):
        first = write_image(np.full((32, 32), 10, dtype=np.uint8), tmp_path / 'a' / 'x.pgm')
        second = write_image(np.full((32, 32), 200, dtype=np.uint8), tmp_path / 'b' / 'x.pgm')
        with pytest.raises(ParameterError):
            manipulate_images([first, second], ManipulationKind.MF3, tmp_path / 'out')
        assert not (tmp_path / 'out').exists()

    def test_path_outside_root_is_rejected(self, corpus_dir, tmp_path):
        path = corpus_dir / 'img_00.pgm'
        assert mirrored_target(path, corpus_dir) == Path('img_00.pgm')
        with pytest.raises(ParameterError):
            mirrored_target(path, tmp_path / 'elsewhere')


@pytest.mark.integration
class TestFeatureService:
    """Test cases for cached SPAM extraction"""

    def test_second_pass_hits_cache(self, corpus_dir, tmp_path):
        paths = sorted(corpus_dir.glob('img_*.pgm'))[:3]
        service = FeatureService(tmp_path / 'cache')
        first = service.extract(paths)
        assert first.shape == (3, SPAM_DIM)
        assert service.misses == 3

        second = service.extract(paths)
        assert service.hits == 3
        assert np.array_equal(first, second)
        assert np.array_equal(first[0], extract_spam(read_image(paths[0])))

    def test_changed_image_is_recomputed(self, corpus_dir, tmp_path):
        path = sorted(corpus_dir.glob('img_*.pgm'))[0]
        service = FeatureService(tmp_path / 'cache')
        service.features_for(path)
        changed = read_image(path)
        changed[0, 0] ^= 1
        values = service.features_for(path, changed)
        assert service.misses == 2
        assert np.array_equal(values, extract_spam(changed))

    def test_extract_split(self, desk_config, tmp_path):
        root = tmp_path / 'dataset'
        manifest = prepare_dataset(desk_config, root)
        matrix = FeatureService(tmp_path / 'cache').extract_split(manifest, root, 'mf3', TEST)
        assert matrix.names == [e.name for e in manifest.split(TEST)]
        assert matrix.values.shape == (4, SPAM_DIM)

        loaded = FeatureMatrix.load(matrix.save(tmp_path / 'features' / 'mf3_test.npz'))
        assert loaded.names == matrix.names
        assert loaded.variant == 'mf3' and loaded.split == TEST
        assert np.array_equal(loaded.values, matrix.values)

    def test_empty_input(self, tmp_path):
        assert FeatureService(tmp_path / 'cache').extract([]).shape == (0, SPAM_DIM)
