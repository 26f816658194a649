"""Manifest/image IO, preprocessing, splits, and the synthetic generator."""

import numpy as np
import pytest
import torch
from PIL import Image

import cxrscore as cx
from cxrscore.data import SCORE_RANGES
from cxrscore.errors import ArgumentError, ConfigurationError, IngestError
from cxrscore.synth import OPACITY_THRESHOLD
from conftest import make_sample


def write_manifest(path, rows, header="image_path,score_total,score_left,score_right,score_kind"):
    lines = [header] + rows
    path.write_text("\n".join(lines) + "\n")


def write_png(path, value=128, size=(8, 8)):
    arr = np.full(size, value, dtype=np.uint8)
    Image.fromarray(arr, mode="L").save(path)


class TestManifestLoad:
    def test_happy_path(self, tmp_path):
        write_png(tmp_path / "a.png", value=51)
        write_manifest(tmp_path / "m.csv", ["a.png,3.0,2.0,1.0,GE"])
        samples = cx.load_manifest(str(tmp_path / "m.csv"))
        assert len(samples) == 1
        s = samples[0]
        assert (s.score_total, s.score_left, s.score_right) == (3.0, 2.0, 1.0)
        assert s.score_kind == "GE" and s.source_id == "a"
        assert s.image.shape == (8, 8, 1)
        assert s.image.dtype == np.float32
        assert np.all(s.image == np.float32(51 / 255))

    def test_total_only_row(self, tmp_path):
        write_png(tmp_path / "a.png")
        write_manifest(tmp_path / "m.csv", ["a.png,5.0,,,brixia"])
        s = cx.load_manifest(str(tmp_path / "m.csv"))[0]
        assert s.score_total == 5.0 and not s.has_lung_scores

    def test_out_of_range_total(self, tmp_path):
        write_png(tmp_path / "a.png")
        write_manifest(tmp_path / "m.csv", ["a.png,9.0,,,GE"])
        with pytest.raises(IngestError, match=r"line 2.*outside"):
            cx.load_manifest(str(tmp_path / "m.csv"))

    def test_lung_sum_mismatch(self, tmp_path):
        write_png(tmp_path / "a.png")
        write_manifest(tmp_path / "m.csv", ["a.png,3.0,2.0,1.5,GE"])
        with pytest.raises(IngestError, match="line 2"):
            cx.load_manifest(str(tmp_path / "m.csv"))

    def test_tiny_lung_sum_drift_reconciled(self, tmp_path):
        # within tolerance the loader reconciles the total so the in-memory
        # invariant total == left + right holds exactly
        write_png(tmp_path / "a.png")
        write_manifest(tmp_path / "m.csv", ["a.png,3.0000000001,2.0,1.0,GE"])
        s = cx.load_manifest(str(tmp_path / "m.csv"))[0]
        assert s.score_total == s.score_left + s.score_right == 3.0

    def test_unknown_kind(self, tmp_path):
        write_png(tmp_path / "a.png")
        write_manifest(tmp_path / "m.csv", ["a.png,3.0,,,mystery"])
        with pytest.raises(IngestError, match="score_kind"):
            cx.load_manifest(str(tmp_path / "m.csv"))

    def test_non_numeric_score(self, tmp_path):
        write_png(tmp_path / "a.png")
        write_manifest(tmp_path / "m.csv", ["a.png,abc,,,GE"])
        with pytest.raises(IngestError, match="not a number"):
            cx.load_manifest(str(tmp_path / "m.csv"))

    def test_non_finite_score(self, tmp_path):
        write_png(tmp_path / "a.png")
        write_manifest(tmp_path / "m.csv", ["a.png,nan,,,GE"])
        with pytest.raises(IngestError, match="not finite"):
            cx.load_manifest(str(tmp_path / "m.csv"))

    def test_missing_image(self, tmp_path):
        write_manifest(tmp_path / "m.csv", ["ghost.png,1.0,,,GE"])
        with pytest.raises(IngestError, match="image not found"):
            cx.load_manifest(str(tmp_path / "m.csv"))

    def test_bad_header(self, tmp_path):
        write_manifest(tmp_path / "m.csv", [], header="path,total")
        with pytest.raises(IngestError, match="line 1"):
            cx.load_manifest(str(tmp_path / "m.csv"))

    def test_empty_file(self, tmp_path):
        (tmp_path / "m.csv").write_text("")
        with pytest.raises(IngestError, match="empty"):
            cx.load_manifest(str(tmp_path / "m.csv"))

    def test_header_only(self, tmp_path):
        write_manifest(tmp_path / "m.csv", [])
        assert cx.load_manifest(str(tmp_path / "m.csv")) == []

    def test_wrong_field_count(self, tmp_path):
        write_manifest(tmp_path / "m.csv", ["a.png,1.0,GE"])
        with pytest.raises(IngestError, match="fields"):
            cx.load_manifest(str(tmp_path / "m.csv"))

    def test_missing_manifest_file(self, tmp_path):
        with pytest.raises(IngestError, match="cannot open"):
            cx.load_manifest(str(tmp_path / "none.csv"))


class TestRoundTrip:
    def test_save_then_load_preserves_fields(self, tmp_path):
        samples = cx.synth_dataset(6, (16, 16), seed=5)
        manifest = cx.save_dataset(samples, str(tmp_path))
        back = cx.load_manifest(manifest)
        assert len(back) == len(samples)
        for orig, got in zip(samples, back):
            assert got.source_id == orig.source_id
            assert got.score_total == orig.score_total
            assert got.score_left == orig.score_left
            assert got.score_right == orig.score_right
            assert got.score_kind == orig.score_kind
            assert got.image.shape == orig.image.shape

    def test_quantization_preserves_scores(self, tmp_path):
        # 8-bit PNG quantization moves pixel values but must never move a
        # pixel across the opacity threshold, so reloaded scores are exact
        samples = cx.synth_dataset(24, (32, 32), seed=11)
        manifest = cx.save_dataset(samples, str(tmp_path))
        for s in cx.load_manifest(manifest):
            half = s.image.shape[1] // 2
            area = s.image.shape[0] * half
            frac_l = float((s.image[:, :half, 0] > OPACITY_THRESHOLD).sum()) / area
            frac_r = float((s.image[:, half:, 0] > OPACITY_THRESHOLD).sum()) / area
            assert cx.score_from_coverage(frac_l) == s.score_left
            assert cx.score_from_coverage(frac_r) == s.score_right

    def test_duplicate_source_id_rejected(self, tmp_path):
        twice = [make_sample(1, 1, "dup"), make_sample(2, 2, "dup")]
        with pytest.raises(ArgumentError, match="duplicate"):
            cx.save_dataset(twice, str(tmp_path))


class TestImageIO:
    def test_gray_png_decodes_to_unit_range(self, tmp_path):
        write_png(tmp_path / "g.png", value=255, size=(4, 6))
        img = cx.load_image(str(tmp_path / "g.png"))
        assert img.shape == (4, 6, 1)
        assert img.max() == 1.0

    def test_rgb_png_keeps_three_channels(self, tmp_path):
        arr = np.zeros((4, 4, 3), dtype=np.uint8)
        arr[..., 0] = 255
        Image.fromarray(arr, mode="RGB").save(tmp_path / "c.png")
        img = cx.load_image(str(tmp_path / "c.png"))
        assert img.shape == (4, 4, 3)
        assert np.all(img[..., 0] == 1.0) and np.all(img[..., 1] == 0.0)

    def test_exact_eight_bit_values(self, tmp_path):
        for k in (0, 1, 127, 254):
            write_png(tmp_path / "v.png", value=k)
            assert np.all(cx.load_image(str(tmp_path / "v.png")) == np.float32(k / 255))

    def test_undecodable_file(self, tmp_path):
        (tmp_path / "junk.png").write_bytes(b"not a png at all")
        with pytest.raises(IngestError, match="cannot decode"):
            cx.load_image(str(tmp_path / "junk.png"))


class TestPreprocess:
    def test_gray_replicated_to_three_channels(self, pre32):
        s = make_sample(0, 0, "g", size=(32, 32), fill=0.75, channels=1)
        x = cx.preprocess(s, pre32)
        assert x.shape == (32, 32, 3)
        assert torch.equal(x[..., 0], x[..., 1])
        assert torch.equal(x[..., 0], x[..., 2])

    def test_mean_image_maps_to_zeros(self, pre32):
        s = make_sample(0, 0, "m", size=(32, 32), fill=0.5)
        assert torch.all(cx.preprocess(s, pre32) == 0.0)

    def test_identity_resize_is_exact(self, pre32):
        rng = np.random.default_rng(0)
        img = rng.random((32, 32, 3), dtype=np.float32)
        s = cx.CxrSample(image=img, score_total=0.0, score_kind="synthetic", source_id="r")
        x = cx.preprocess(s, pre32)
        expected = (img - 0.5) / 0.25
        assert np.allclose(x.numpy(), expected, atol=1e-6)

    def test_resize_shape(self):
        cfg = cx.PreprocessConfig(target_height=224, target_width=224)
        s = make_sample(0, 0, "big", size=(512, 512))
        assert cx.preprocess(s, cfg).shape == (224, 224, 3)

    def test_batch_matches_singles(self, pre32):
        rng = np.random.default_rng(3)
        samples = [
            cx.CxrSample(
                image=rng.random((32, 32, 1), dtype=np.float32),
                score_total=0.0, score_kind="synthetic", source_id=f"b{i}",
            )
            for i in range(4)
        ]
        batch = cx.preprocess_batch(samples, pre32)
        for i, s in enumerate(samples):
            assert torch.equal(batch[i], cx.preprocess(s, pre32))

    def test_empty_batch_rejected(self, pre32):
        with pytest.raises(ArgumentError):
            cx.preprocess_batch([], pre32)

    def test_mixed_shapes_rejected(self, pre32):
        with pytest.raises(ArgumentError, match="share a shape"):
            cx.preprocess_batch([make_sample(0, 0, "a"), make_sample(0, 0, "b", size=(8, 10))], pre32)

    def test_config_validation(self):
        with pytest.raises(ConfigurationError):
            cx.PreprocessConfig(target_height=0)
        with pytest.raises(ConfigurationError):
            cx.PreprocessConfig(std=(0.0, 0.25, 0.25))
        with pytest.raises(ConfigurationError):
            cx.PreprocessConfig(mean=(0.5, 0.5))


class TestSplitTrainVal:
    def test_disjoint_and_complete(self):
        samples = [make_sample(i % 5, 0, f"s{i}") for i in range(20)]
        train, val = cx.split_train_val(samples, 0.2, seed=0)
        assert len(train) == 16 and len(val) == 4
        ids = {s.source_id for s in train} | {s.source_id for s in val}
        assert ids == {s.source_id for s in samples}

    def test_deterministic_per_seed(self):
        samples = [make_sample(i % 5, 0, f"s{i}") for i in range(10)]
        a = cx.split_train_val(samples, 0.3, seed=4)
        b = cx.split_train_val(samples, 0.3, seed=4)
        assert [s.source_id for s in a[1]] == [s.source_id for s in b[1]]
        c = cx.split_train_val(samples, 0.3, seed=5)
        assert [s.source_id for s in a[1]] != [s.source_id for s in c[1]]

    def test_zero_fraction(self):
        samples = [make_sample(1, 0, f"s{i}") for i in range(3)]
        train, val = cx.split_train_val(samples, 0.0, seed=0)
        assert len(train) == 3 and val == []

    def test_small_fraction_still_gets_one(self):
        samples = [make_sample(1, 0, f"s{i}") for i in range(10)]
        _, val = cx.split_train_val(samples, 0.01, seed=0)
        assert len(val) == 1

    def test_bad_fraction(self):
        samples = [make_sample(1, 0, "s")]
        for f in (-0.1, 1.0, 1.5):
            with pytest.raises(ArgumentError):
                cx.split_train_val(samples, f, seed=0)


class TestScoreFromCoverage:
    def test_band_edges(self):
        assert cx.score_from_coverage(0.0) == 0
        assert cx.score_from_coverage(0.151) == 0
        assert cx.score_from_coverage(0.16) == 1
        assert cx.score_from_coverage(0.31) == 2
        assert cx.score_from_coverage(0.47) == 3
        assert cx.score_from_coverage(0.62) == 4
        assert cx.score_from_coverage(0.76) == 4
        assert cx.score_from_coverage(1.0) == 4

    def test_fraction_out_of_range(self):
        for f in (-0.1, 1.1):
            with pytest.raises(ArgumentError):
                cx.score_from_coverage(f)


class TestSynthDataset:
    def test_deterministic_regeneration(self):
        a = cx.synth_dataset(8, (16, 16), seed=13)
        b = cx.synth_dataset(8, (16, 16), seed=13)
        for x, y in zip(a, b):
            assert x.source_id == y.source_id
            assert x.score_total == y.score_total
            assert (x.image == y.image).all()

    def test_labels_match_pixel_oracle(self):
        for s in cx.synth_dataset(60, (32, 32), seed=21):
            half = s.image.shape[1] // 2
            area = s.image.shape[0] * half
            frac_l = float((s.image[:, :half, 0] > OPACITY_THRESHOLD).sum()) / area
            frac_r = float((s.image[:, half:, 0] > OPACITY_THRESHOLD).sum()) / area
            assert s.score_left == cx.score_from_coverage(frac_l)
            assert s.score_right == cx.score_from_coverage(frac_r)
            assert s.score_total == s.score_left + s.score_right

    def test_scores_span_full_range(self):
        totals = {s.score_total for s in cx.synth_dataset(300, (32, 32), seed=42)}
        assert totals == {float(t) for t in range(9)}

    def test_blob_free_sample_scores_zero(self):
        s = cx.directed_sample((32, 32), 0.0, 0.0, seed=3)
        assert s.score_total == 0.0
        assert float(s.image.max()) < OPACITY_THRESHOLD

    def test_directed_left_blob(self):
        # clipping and chunk overlap may land short of the requested target,
        # but the blob must stay confined to the left half and score high
        s = cx.directed_sample((64, 64), 0.65, 0.0, seed=123)
        assert s.score_left >= 3.0 and s.score_right == 0.0
        half = s.image.shape[1] // 2
        assert float((s.image[:, half:, 0] > OPACITY_THRESHOLD).sum()) == 0.0
        frac_l = float((s.image[:, :half, 0] > OPACITY_THRESHOLD).mean())
        assert frac_l > 0.4

    def test_directed_coverage_validation(self):
        with pytest.raises(ArgumentError):
            cx.directed_sample((16, 16), 1.5, 0.0, seed=0)

    def test_argument_validation(self):
        with pytest.raises(ArgumentError):
            cx.synth_dataset(0, (16, 16), seed=0)
        with pytest.raises(ArgumentError):
            cx.synth_dataset(4, (4, 16), seed=0)

    def test_kind_is_synthetic_with_unit_range_pixels(self):
        for s in cx.synth_dataset(10, (16, 16), seed=2):
            assert s.score_kind == "synthetic"
            assert s.image.dtype == np.float32
            assert 0.0 <= float(s.image.min()) and float(s.image.max()) <= 1.0


class TestScoreRanges:
    def test_known_rubrics(self):
        assert SCORE_RANGES["GE"] == (0.0, 8.0)
        assert SCORE_RANGES["LO"] == (0.0, 8.0)
        assert SCORE_RANGES["synthetic"] == (0.0, 8.0)
        assert SCORE_RANGES["brixia"] == (0.0, 18.0)
        assert SCORE_RANGES["covid"] == (0.0, 6.0)
