import math
import os

import numpy as np
import pytest

from gazefield.data import (
    DegenerateSample,
    GazeAnnotationRecord,
    SyntheticSceneSpec,
    bilinear_resize,
    generate_scene,
    generate_synthetic,
    load_annotations,
    load_dataset,
    load_image,
    make_sample,
    save_annotations,
    save_image,
    write_dataset,
)
from gazefield.errors import DataError
from gazefield.field import Direction, NormalizedPoint, field_value

# chi-square critical value, 7 degrees of freedom, alpha = 0.01
CHI2_7DOF_P01 = 18.475


def sample_record(**overrides):
    kwargs = dict(
        image="img.png", width=64, height=64,
        head_box=(0.4, 0.4, 0.2, 0.2), head_center=(0.5, 0.5),
        gaze=[(0.8, 0.3)], split="train",
    )
    kwargs.update(overrides)
    return GazeAnnotationRecord(**kwargs)


class TestAnnotations:
    def test_empty_file_is_empty_dataset(self, tmp_path):
        path = tmp_path / "ann.jsonl"
        path.write_text("")
        assert load_annotations(str(path)) == []

    def test_round_trip_identity(self, tmp_path):
        records = [sample_record(), sample_record(image="b.png", gaze=[(0.1, 0.2), (0.3, 0.4)], split="test")]
        path = str(tmp_path / "ann.jsonl")
        save_annotations(records, path)
        loaded = load_annotations(path)
        assert loaded == records

    def test_out_of_range_gaze_rejected_with_line(self, tmp_path):
        records = [sample_record(), sample_record(gaze=[(1.2, 0.5)])]
        path = str(tmp_path / "ann.jsonl")
        save_annotations(records, path)
        with pytest.raises(DataError, match=r"ann\.jsonl:3.*outside"):
            load_annotations(path)

    def test_malformed_row_names_line(self, tmp_path):
        path = tmp_path / "ann.jsonl"
        path.write_text('{"schema": "gaze-annotations", "version": 1}\nnot json\n')
        with pytest.raises(DataError, match=r":2"):
            load_annotations(str(path))

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "ann.jsonl"
        path.write_text('{"schema": "something-else", "version": 9}\n')
        with pytest.raises(DataError, match="schema"):
            load_annotations(str(path))

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(DataError, match="not found"):
            load_annotations(str(tmp_path / "nope.jsonl"))


class TestImages:
    def test_png_round_trip_quantized(self, tmp_path):
        rng = np.random.default_rng(0)
        img = rng.random((3, 16, 16))
        path = str(tmp_path / "img.png")
        save_image(path, img)
        loaded = load_image(path)
        assert loaded.shape == (3, 16, 16)
        assert np.max(np.abs(loaded - img)) <= 0.5 / 255 + 1e-12

    def test_csv_grid_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(1)
        img = rng.random((1, 8, 8))
        path = str(tmp_path / "img.csv")
        save_image(path, img)
        loaded = load_image(path)
        np.testing.assert_array_equal(loaded, img)

    def test_bilinear_constant_stays_constant(self):
        img = np.full((3, 10, 10), 0.37)
        out = bilinear_resize(img, 17, 23)
        np.testing.assert_allclose(out, 0.37, atol=1e-12)

    def test_bilinear_identity_at_same_size(self):
        rng = np.random.default_rng(2)
        img = rng.random((3, 9, 9))
        np.testing.assert_array_equal(bilinear_resize(img, 9, 9), img)


class TestMakeSample:
    def test_full_image_head_box_crop_equals_scene(self):
        rng = np.random.default_rng(3)
        img = rng.random((3, 32, 32))
        rec = sample_record(width=32, height=32, head_box=(0.0, 0.0, 1.0, 1.0),
                            head_center=(0.5, 0.5))
        s = make_sample(rec, img, scene_res=16, crop_res=16)
        np.testing.assert_allclose(s.head_crop, s.scene, atol=1e-12)

    def test_gaze_at_head_center_skipped(self):
        rec = sample_record(gaze=[(0.5, 0.5)])
        with pytest.raises(DegenerateSample):
            make_sample(rec, np.zeros((3, 64, 64)), 32, 16)

    def test_degenerate_box_rejected(self):
        rec = sample_record(head_box=(0.5, 0.5, 0.001, 0.001))
        with pytest.raises(DataError, match="degenerate"):
            make_sample(rec, np.zeros((3, 64, 64)), 32, 16)

    def test_direction_is_unit_toward_gaze(self):
        rec = sample_record(head_center=(0.5, 0.5), gaze=[(0.9, 0.5)])
        s = make_sample(rec, np.zeros((3, 64, 64)), 32, 16)
        np.testing.assert_allclose(s.direction, [1.0, 0.0], atol=1e-12)

    def test_grayscale_tiled_to_rgb(self):
        rec = sample_record()
        s = make_sample(rec, np.ones((1, 64, 64)) * 0.5, 32, 16)
        assert s.scene.shape == (3, 32, 32)


class TestGenerator:
    def test_same_seed_bit_identical(self):
        spec = SyntheticSceneSpec(seed=7)
        a_img, a_rec = generate_scene(spec, 3)
        b_img, b_rec = generate_scene(spec, 3)
        assert np.array_equal(a_img, b_img)
        assert a_rec == b_rec

    def test_different_index_differs(self):
        spec = SyntheticSceneSpec(seed=7)
        a_img, _ = generate_scene(spec, 0)
        b_img, _ = generate_scene(spec, 1)
        assert not np.array_equal(a_img, b_img)

    def test_gaze_on_wedge_axis(self):
        # the target blob is placed on the ray, so the field value there is 1
        spec = SyntheticSceneSpec(seed=1)
        for i in range(50):
            _, rec = generate_scene(spec, i)
            head = NormalizedPoint(*rec.head_center)
            gaze = NormalizedPoint(*rec.gaze[0])
            d = Direction(gaze.x - head.x, gaze.y - head.y)
            v = field_value(head, gaze, d)
            assert v >= math.cos(math.radians(spec.angle_tolerance_deg)) - 1e-9

    def test_single_blob_is_the_gaze(self):
        spec = SyntheticSceneSpec(seed=2, blob_count=1)
        img, rec = generate_scene(spec, 0)
        # green channel peak sits at the gaze blob (up to pixel quantization)
        r = spec.resolution
        flat = int(np.argmax(img[1] * (img[0] < 0.5)))  # mask out the wedge
        row, col = divmod(flat, r)
        peak = ((col + 0.5) / r, (row + 0.5) / r)
        assert math.hypot(peak[0] - rec.gaze[0][0], peak[1] - rec.gaze[0][1]) < 2.0 / r

    def test_coordinates_inside_unit_square(self):
        spec = SyntheticSceneSpec(seed=3)
        for i in range(100):
            _, rec = generate_scene(spec, i)
            rec.validate()

    def test_directions_uniform_chi_square(self):
        spec = SyntheticSceneSpec(seed=4)
        bins = np.zeros(8)
        n = 1000
        for i in range(n):
            _, rec = generate_scene(spec, i)
            dx = rec.gaze[0][0] - rec.head_center[0]
            dy = rec.gaze[0][1] - rec.head_center[1]
            phi = math.atan2(dy, dx) % (2 * math.pi)
            bins[int(phi / (2 * math.pi / 8)) % 8] += 1
        expected = n / 8.0
        stat = float(np.sum((bins - expected) ** 2 / expected))
        assert stat < CHI2_7DOF_P01, f"chi-square {stat:.2f}, bins {bins}"

    def test_generate_synthetic_deterministic(self):
        spec = SyntheticSceneSpec(seed=5)
        a = generate_synthetic(spec, 4, crop_res=16)
        b = generate_synthetic(spec, 4, crop_res=16)
        for sa, sb in zip(a, b):
            assert np.array_equal(sa.scene, sb.scene)
            assert np.array_equal(sa.head_crop, sb.head_crop)
            assert np.array_equal(sa.direction, sb.direction)


class TestDatasetFiles:
    def test_write_then_load(self, tmp_path):
        spec = SyntheticSceneSpec(seed=6, resolution=32)
        info = write_dataset(spec, n_train=4, n_test=2, out_dir=str(tmp_path))
        assert os.path.exists(info["annotations"])
        train, skipped = load_dataset(str(tmp_path), scene_res=32, crop_res=16, split="train")
        test, _ = load_dataset(str(tmp_path), scene_res=32, crop_res=16, split="test")
        assert len(train) == 4 and len(test) == 2 and skipped == 0
        assert train[0].scene.shape == (3, 32, 32)

    def test_rerun_byte_identical(self, tmp_path):
        spec = SyntheticSceneSpec(seed=8, resolution=24)
        d1, d2 = tmp_path / "a", tmp_path / "b"
        write_dataset(spec, 3, 1, str(d1))
        write_dataset(spec, 3, 1, str(d2))
        for name in sorted(os.listdir(d1 / "scenes")):
            b1 = (d1 / "scenes" / name).read_bytes()
            b2 = (d2 / "scenes" / name).read_bytes()
            assert b1 == b2, name
        assert (d1 / "annotations.jsonl").read_bytes() == (d2 / "annotations.jsonl").read_bytes()
