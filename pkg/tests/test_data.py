"""IDX parsing against hand-authored byte strings, annotation, blob corpus."""

import struct

import numpy as np
import pytest

from cbmlab import data


def make_idx_pair(tmp_path, images, labels, image_magic=data.IMAGE_MAGIC,
                  label_magic=data.LABEL_MAGIC, truncate_images=0,
                  truncate_labels=0):
    """Serialize uint8 images/labels to IDX files, byte by byte."""
    images = np.asarray(images, dtype=np.uint8)
    n, h, w = images.shape
    ibuf = struct.pack(">IIII", image_magic, n, h, w) + images.tobytes()
    lbuf = struct.pack(">II", label_magic, len(labels)) + bytes(labels)
    if truncate_images:
        ibuf = ibuf[:-truncate_images]
    if truncate_labels:
        lbuf = lbuf[:-truncate_labels]
    ip = tmp_path / "images.idx"
    lp = tmp_path / "labels.idx"
    ip.write_bytes(ibuf)
    lp.write_bytes(lbuf)
    return str(ip), str(lp)


class TestIdxParsing:
    def test_round_trip_values(self, tmp_path):
        imgs = np.arange(2 * 3 * 3, dtype=np.uint8).reshape(2, 3, 3) * 10
        ip, lp = make_idx_pair(tmp_path, imgs, [4, 9])
        out = data.parse_idx(ip, lp)
        assert len(out) == 2
        img0, lab0 = out[0]
        assert lab0 == 4 and out[1][1] == 9
        assert img0.shape == (3, 3)
        assert np.allclose(img0, imgs[0] / 255.0)
        assert img0.min() >= 0.0 and img0.max() <= 1.0

    def test_pixel_255_maps_to_one(self, tmp_path):
        ip, lp = make_idx_pair(tmp_path, np.full((1, 2, 2), 255, np.uint8), [0])
        img, _ = data.parse_idx(ip, lp)[0]
        assert np.all(img == 1.0)

    def test_bad_image_magic(self, tmp_path):
        ip, lp = make_idx_pair(tmp_path, np.zeros((1, 2, 2), np.uint8), [0],
                               image_magic=0x00000804)
        with pytest.raises(data.IdxMagicError):
            data.parse_idx(ip, lp)

    def test_bad_label_magic(self, tmp_path):
        ip, lp = make_idx_pair(tmp_path, np.zeros((1, 2, 2), np.uint8), [0],
                               label_magic=0x12345678)
        with pytest.raises(data.IdxMagicError):
            data.parse_idx(ip, lp)

    def test_truncated_pixels(self, tmp_path):
        ip, lp = make_idx_pair(tmp_path, np.zeros((2, 4, 4), np.uint8), [0, 1],
                               truncate_images=3)
        with pytest.raises(data.IdxTruncatedError):
            data.parse_idx(ip, lp)

    def test_truncated_labels(self, tmp_path):
        ip, lp = make_idx_pair(tmp_path, np.zeros((2, 4, 4), np.uint8), [0, 1],
                               truncate_labels=1)
        with pytest.raises(data.IdxTruncatedError):
            data.parse_idx(ip, lp)

    def test_count_mismatch(self, tmp_path):
        ip, lp = make_idx_pair(tmp_path, np.zeros((2, 4, 4), np.uint8), [0, 1, 2])
        with pytest.raises(data.IdxCountMismatchError):
            data.parse_idx(ip, lp)

    def test_errors_are_value_errors(self):
        assert issubclass(data.IdxMagicError, ValueError)
        assert issubclass(data.IdxTruncatedError, ValueError)
        assert issubclass(data.IdxCountMismatchError, ValueError)


class TestAnnotation:
    def test_one_hot_plus_shape_concepts(self):
        v = data.annotate_concept_mnist(3)
        assert v.shape == (12,)
        assert v[3] == 1.0 and v[:10].sum() == 1.0
        assert (v[10], v[11]) == data.DEFAULT_CURVED_STRAIGHT[3]

    def test_every_digit_consistent_with_table(self):
        for d in range(10):
            v = data.annotate_concept_mnist(d)
            assert (v[10], v[11]) == data.DEFAULT_CURVED_STRAIGHT[d]

    def test_label_out_of_range(self):
        with pytest.raises(ValueError):
            data.annotate_concept_mnist(10)

    def test_concept_table_override(self, tmp_path):
        p = tmp_path / "table.txt"
        p.write_text("# comment line\n7 1 1   # sevens with serifs curve\n\n")
        table = data.load_concept_table(str(p))
        assert table[7] == (1, 1)
        assert table[0] == data.DEFAULT_CURVED_STRAIGHT[0]
        v = data.annotate_concept_mnist(7, table)
        assert (v[10], v[11]) == (1, 1)

    def test_concept_names_schema(self):
        assert len(data.CONCEPT_NAMES) == 12
        assert data.CONCEPT_NAMES[0] == "isNum_0"
        assert data.CONCEPT_NAMES[10] == "CurvedLine:present"

    def test_concept_spec_validation(self):
        with pytest.raises(ValueError):
            data.ConceptSpec(names=("a", "a"))
        with pytest.raises(ValueError):
            data.ConceptSpec(names=("a",), kind="ternary")
        with pytest.raises(ValueError):
            data.ConceptSpec(names=("a",), relevance_threshold=1.5)


class TestBlobCorpus:
    def test_deterministic_per_seed(self):
        a = data.synth_blob_dataset(60, seed=5)
        b = data.synth_blob_dataset(60, seed=5)
        for sa, sb in zip(a.train, b.train):
            assert np.array_equal(sa.image, sb.image)
            assert sa.label == sb.label

    def test_different_seeds_differ(self):
        a = data.synth_blob_dataset(60, seed=5)
        b = data.synth_blob_dataset(60, seed=6)
        assert not np.array_equal(a.train[0].image, b.train[0].image)

    def test_shapes_and_ranges(self):
        split = data.synth_blob_dataset(50, seed=0)
        s = split.train[0]
        assert s.image.shape == (12, 12)
        assert s.image.min() >= 0.0 and s.image.max() <= 1.0
        assert s.concepts.shape == (12,)
        assert 0 <= s.label <= 9

    def test_all_classes_present(self):
        split = data.synth_blob_dataset(100, seed=1)
        labels = {s.label for part in (split.train, split.val, split.test)
                  for s in part}
        assert labels == set(range(10))

    def test_rejects_tiny_corpus(self):
        with pytest.raises(ValueError):
            data.synth_blob_dataset(10, seed=0)

    def test_class_signal_linearly_separable_enough(self):
        """A least-squares readout on raw pixels should beat 80% accuracy:
        the corpus carries class signal but is not trivial."""
        split = data.synth_blob_dataset(600, seed=3)
        x, _, y = data.stack(split.train)
        flat = x.reshape(len(y), -1)
        onehot = np.eye(10)[y]
        w, *_ = np.linalg.lstsq(
            np.hstack([flat, np.ones((len(y), 1))]), onehot, rcond=None)
        xv, _, yv = data.stack(split.val)
        flatv = np.hstack([xv.reshape(len(yv), -1), np.ones((len(yv), 1))])
        acc = (np.argmax(flatv @ w, axis=1) == yv).mean()
        assert acc > 0.8


class TestSplitsAndBatching:
    def test_split_sizes_and_disjointness(self):
        samples = [data.ConceptSample(np.full((2, 2), i / 100), i % 10,
                                      data.annotate_concept_mnist(i % 10))
                   for i in range(100)]
        split = data.split_dataset(samples, seed=0)
        assert (len(split.train), len(split.val), len(split.test)) == (80, 10, 10)
        ids = [s.image[0, 0] for part in (split.train, split.val, split.test)
               for s in part]
        assert len(set(ids)) == 100

    def test_batches_cover_every_sample_once(self):
        samples = [data.ConceptSample(np.full((2, 2), i), i % 10,
                                      data.annotate_concept_mnist(i % 10))
                   for i in range(23)]
        seen = []
        for x, c, y in data.batches(samples, batch_size=7, seed=0):
            assert x.shape[1:] == (1, 2, 2)
            seen.extend(x[:, 0, 0, 0].tolist())
        assert sorted(seen) == list(range(23))

    def test_batch_shuffle_varies_with_epoch_not_call(self):
        samples = [data.ConceptSample(np.full((2, 2), i), 0,
                                      data.annotate_concept_mnist(0))
                   for i in range(16)]
        e0a = [x[0, 0, 0, 0] for x, _, _ in data.batches(samples, 4, seed=1, epoch=0)]
        e0b = [x[0, 0, 0, 0] for x, _, _ in data.batches(samples, 4, seed=1, epoch=0)]
        e1 = [x[0, 0, 0, 0] for x, _, _ in data.batches(samples, 4, seed=1, epoch=1)]
        assert e0a == e0b
        assert e0a != e1

    def test_batch_size_validation(self):
        with pytest.raises(ValueError):
            list(data.batches([], 0, seed=0))
