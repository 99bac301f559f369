import gzip

import numpy as np
import pytest

from scratchnet import datasets
from scratchnet.errors import ConfigError, DataError, ParseError
from scratchnet.tensor import SeededRng

from conftest import make_synthetic_cifar, make_synthetic_mnist


class TestIdx:
    def test_round_trip_byte_identical(self, tmp_path):
        rng = np.random.RandomState(0)
        arr = rng.randint(0, 256, size=(7, 5, 4)).astype(np.uint8)
        path = tmp_path / "arr.idx"
        datasets.write_idx(path, arr)
        back = datasets.read_idx(path)
        assert np.array_equal(back, arr)
        path2 = tmp_path / "again.idx"
        datasets.write_idx(path2, back)
        assert path.read_bytes() == path2.read_bytes()

    def test_gzip_transparent(self, tmp_path):
        arr = np.arange(24, dtype=np.uint8).reshape(2, 3, 4)
        plain = tmp_path / "a.idx"
        datasets.write_idx(plain, arr)
        gz = tmp_path / "b.idx.gz"
        gz.write_bytes(gzip.compress(plain.read_bytes()))
        assert np.array_equal(datasets.read_idx(gz), arr)

    def test_truncated_names_byte_counts(self, tmp_path):
        arr = np.zeros((10, 4, 3), dtype=np.uint8)
        path = tmp_path / "t.idx"
        datasets.write_idx(path, arr)
        full = path.read_bytes()
        path.write_bytes(full[:-7])
        with pytest.raises(ParseError, match=f"expected {len(full)}"):
            datasets.read_idx(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "m.idx"
        path.write_bytes(b"\xff\xff\xff\xff" + b"\x00" * 16)
        with pytest.raises(ParseError, match="magic"):
            datasets.read_idx(path)


class TestMnistLoader:
    def test_synthetic_files_load_and_normalize(self, tmp_path):
        make_synthetic_mnist(tmp_path, n_train=60, n_test=24)
        train, test = datasets.load_mnist(tmp_path)
        assert train.inputs.shape == (28, 28, 1, 60)
        assert test.inputs.shape == (28, 28, 1, 24)
        assert train.labels.min() >= 0 and train.labels.max() <= 9
        # pixels scaled to [0,1] then centered on the train mean
        assert abs(train.inputs.mean()) < 1e-6
        assert train.norm["source"] == "train"
        assert test.norm["mean"] == train.norm["mean"]  # no test leakage

    def test_count_mismatch(self, tmp_path):
        make_synthetic_mnist(tmp_path, n_train=60, n_test=24)
        labels = np.zeros(59, dtype=np.uint8)
        datasets.write_idx(tmp_path / datasets.MNIST_FILES["train_labels"], labels)
        with pytest.raises(ParseError, match="60 images but 59 labels"):
            datasets.load_mnist(tmp_path)

    def test_official_counts(self, mnist_dir):
        train, test = datasets.load_mnist(mnist_dir)
        assert train.size == 60000 and test.size == 10000
        assert train.inputs.shape[:3] == (28, 28, 1)

    def test_first_training_label_is_five(self, mnist_dir):
        # value read with an independent minimal IDX dump: offset 8 of the
        # label file holds the first label byte
        train, _ = datasets.load_mnist(mnist_dir)
        assert int(train.labels[0]) == 5


class TestCifarLoader:
    def test_synthetic_record_planes(self, tmp_path):
        # one crafted record: R plane all 10, G all 20, B all 30, label 7
        rec = np.empty(3073, dtype=np.uint8)
        rec[0] = 7
        rec[1:1025] = 10
        rec[1025:2049] = 20
        rec[2049:] = 30
        for name in datasets.CIFAR_TRAIN_FILES + [datasets.CIFAR_TEST_FILE]:
            (tmp_path / name).write_bytes(rec.tobytes())
        train, test = datasets.load_cifar10(tmp_path)
        assert train.labels[0] == 7
        assert train.inputs.shape == (32, 32, 3, 5)
        # per-channel means prove the R/G/B plane split decoded correctly
        want = [10 / 255, 20 / 255, 30 / 255]
        assert np.allclose(train.norm["mean"], want, atol=1e-6)

    def test_synthetic_standardization(self, tmp_path):
        make_synthetic_cifar(tmp_path, n_per_file=20)
        train, test = datasets.load_cifar10(tmp_path)
        assert train.size == 100 and test.size == 20
        for c in range(3):
            assert abs(train.inputs[:, :, c, :].mean()) < 1e-5
            assert train.inputs[:, :, c, :].std() == pytest.approx(1.0, abs=1e-4)
        assert test.norm == train.norm

    def test_misaligned_record_size(self, tmp_path):
        make_synthetic_cifar(tmp_path, n_per_file=4)
        path = tmp_path / datasets.CIFAR_TRAIN_FILES[0]
        path.write_bytes(path.read_bytes()[:-100])
        with pytest.raises(ParseError, match="3073"):
            datasets.load_cifar10(tmp_path)

    def test_official_counts(self, cifar_dir):
        train, test = datasets.load_cifar10(cifar_dir)
        assert train.size == 50000 and test.size == 10000
        assert train.inputs.shape[:3] == (32, 32, 3)


class TestBatches:
    def make_dataset(self, n=23):
        rng = SeededRng(1)
        return datasets.LabeledDataset(rng.normal((3, n), dtype=np.float32),
                                       np.arange(n, dtype=np.int64) % 4, 4)

    def test_single_batch_when_size_exceeds_n(self):
        data = self.make_dataset(10)
        out = list(datasets.batches(data, 64, SeededRng(2)))
        assert len(out) == 1
        assert out[0][0].shape == (3, 10)

    def test_coverage_multiset(self):
        data = self.make_dataset(23)
        seen = np.concatenate([lbl for _, lbl in
                               datasets.batches(data, 5, SeededRng(3))])
        assert np.array_equal(np.sort(seen), np.sort(data.labels))

    def test_same_seed_same_order(self):
        data = self.make_dataset(31)
        a = [lbl.tolist() for _, lbl in datasets.batches(data, 7, SeededRng(4))]
        b = [lbl.tolist() for _, lbl in datasets.batches(data, 7, SeededRng(4))]
        assert a == b

    def test_sequential_without_rng(self):
        data = self.make_dataset(9)
        labels = np.concatenate([lbl for _, lbl in datasets.batches(data, 4, None)])
        assert np.array_equal(labels, data.labels)

    def test_batch_size_validation(self):
        with pytest.raises(ConfigError):
            list(datasets.batches(self.make_dataset(), 0, None))

    def test_subset_after_seeded_shuffle(self):
        data = self.make_dataset(20)
        sub = datasets.subset(data, 8, SeededRng(5))
        assert sub.size == 8
        again = datasets.subset(data, 8, SeededRng(5))
        assert np.array_equal(sub.labels, again.labels)
        # subset items exist in the source
        assert set(sub.labels.tolist()) <= set(data.labels.tolist())

    def test_subset_noop_when_larger(self):
        data = self.make_dataset(6)
        assert datasets.subset(data, 100, SeededRng(6)) is data


class TestText:
    def test_load_text(self, tmp_path):
        path = tmp_path / "t.txt"
        path.write_text("hello world", encoding="utf-8")
        assert datasets.load_text(path) == "hello world"

    def test_empty_corpus(self, tmp_path):
        path = tmp_path / "e.txt"
        path.write_text("", encoding="utf-8")
        with pytest.raises(DataError):
            datasets.load_text(path)
