import numpy as np
import pytest

from spectrack.data import (BoundingBox, DataError, Frame, HSCube, RGBImage,
                            Sequence, SynthConfig, crop_search, crop_square,
                            crop_template, load_sequence, rgb_band_triplet,
                            rgb_from_cube, save_sequence, synth_sequence)


def make_frame(h=32, w=32, b=8, seed=0):
    rng = np.random.default_rng(seed)
    cube = HSCube(rng.uniform(0, 1, (h, w, b)).astype(np.float32))
    return Frame(cube, rgb_from_cube(cube))


class TestTypes:
    def test_cube_validation(self):
        with pytest.raises(ValueError):
            HSCube(np.zeros((4, 4)))
        with pytest.raises(ValueError):
            HSCube(np.full((4, 4, 2), np.nan))
        cube = HSCube(np.zeros((4, 5, 6)))
        assert cube.band_count == 6
        assert cube.shape == (4, 5, 6)

    def test_rgb_validation(self):
        with pytest.raises(ValueError):
            RGBImage(np.zeros((4, 4, 4)))
        with pytest.raises(ValueError):
            RGBImage(np.full((4, 4, 3), 1.5))
        RGBImage(np.zeros((4, 4, 3)))

    def test_box_validation(self):
        with pytest.raises(ValueError):
            BoundingBox(0, 0, -1, 5)
        with pytest.raises(ValueError):
            BoundingBox(0, 0, 3, 0)
        box = BoundingBox(2, 3, 4, 6)
        assert box.center == (4.0, 6.0)
        assert (box.x2, box.y2) == (6.0, 9.0)

    def test_sequence_count_mismatch(self):
        fr = make_frame()
        with pytest.raises(DataError):
            Sequence("s", [fr, fr], [BoundingBox(1, 1, 2, 2)])

    def test_sequence_shape_mismatch(self):
        a, b = make_frame(32, 32, 8), make_frame(32, 32, 4)
        with pytest.raises(DataError):
            Sequence("s", [a, b], [BoundingBox(1, 1, 2, 2)] * 2)


class TestSynth:
    def test_deterministic(self):
        cfg = SynthConfig(frames=20, seed=7)
        assert synth_sequence(cfg).equals(synth_sequence(cfg))

    def test_annotation_count_and_bands(self):
        seq = synth_sequence(SynthConfig(frames=5, bands=25))
        assert len(seq) == 5
        assert seq.band_count == 25
        assert all(a is not None for a in seq.annotations)

    def test_no_noise_object_equals_signature(self):
        sig = list(np.linspace(0.2, 0.9, 16))
        seq = synth_sequence(SynthConfig(noise=0.0, object_signature=sig))
        box = seq.annotations[0]
        patch = seq.frames[0].hs.data[
            int(box.y) : int(box.y2), int(box.x) : int(box.x2)
        ]
        assert np.allclose(patch, np.float32(sig), atol=1e-7)

    def test_distractor_same_rgb_different_spectra(self):
        seq = synth_sequence(SynthConfig(noise=0.0, distractor=True, seed=3))
        for k in range(len(seq)):
            box = seq.annotations[k]
            dx, dy, dw, dh = seq.meta["distractor_boxes"][k]
            sl_obj = np.s_[int(box.y) : int(box.y2), int(box.x) : int(box.x2)]
            sl_dis = np.s_[int(dy) : int(dy + dh), int(dx) : int(dx + dw)]
            rgb = seq.frames[k].rgb.data
            hs = seq.frames[k].hs.data
            assert np.array_equal(rgb[sl_obj], rgb[sl_dis])
            assert not np.array_equal(hs[sl_obj], hs[sl_dis])

    def test_distractor_never_overlaps_object(self):
        seq = synth_sequence(SynthConfig(frames=40, distractor=True, seed=11))
        from spectrack.metrics import iou

        for k in range(len(seq)):
            d = BoundingBox(*seq.meta["distractor_boxes"][k])
            assert iou(seq.annotations[k], d) == 0.0

    def test_object_larger_than_frame(self):
        with pytest.raises(ValueError):
            synth_sequence(SynthConfig(height=16, width=16, object_size=(20, 20)))

    def test_band_triplet(self):
        assert rgb_band_triplet(16) == (0, 8, 15)
        assert rgb_band_triplet(3) == (0, 1, 2)


class TestDiskFormat:
    def test_round_trip(self, tmp_path):
        seq = synth_sequence(SynthConfig(frames=4, seed=5, distractor=True))
        save_sequence(seq, tmp_path / "seq_a")
        loaded = load_sequence(tmp_path / "seq_a")
        assert loaded.name == "seq_a"
        assert loaded.equals(seq)

    def test_annotation_formats(self, tmp_path):
        d = tmp_path / "seq"
        d.mkdir()
        for i in range(3):
            np.save(d / f"{i + 1:04d}.npy", np.zeros((8, 8, 4), dtype=np.float32))
        (d / "groundtruth_rect.txt").write_text("1,2,3,4\n1.5\t2.5\t3.5\t4.5\n0,0,0,0\n")
        seq = load_sequence(d)
        assert seq.annotations[0].as_tuple() == (1.0, 2.0, 3.0, 4.0)
        assert seq.annotations[1].as_tuple() == (1.5, 2.5, 3.5, 4.5)
        assert seq.annotations[2] is None  # degenerate ground truth

    def test_missing_annotations(self, tmp_path):
        d = tmp_path / "seq"
        d.mkdir()
        np.save(d / "0001.npy", np.zeros((8, 8, 4), dtype=np.float32))
        with pytest.raises(DataError):
            load_sequence(d)

    def test_count_mismatch(self, tmp_path):
        d = tmp_path / "seq"
        d.mkdir()
        for i in range(3):
            np.save(d / f"{i + 1:04d}.npy", np.zeros((8, 8, 4), dtype=np.float32))
        (d / "groundtruth_rect.txt").write_text("1,1,2,2\n1,1,2,2\n")
        with pytest.raises(DataError):
            load_sequence(d)

    def test_inconsistent_bands(self, tmp_path):
        d = tmp_path / "seq"
        d.mkdir()
        np.save(d / "0001.npy", np.zeros((8, 8, 4), dtype=np.float32))
        np.save(d / "0002.npy", np.zeros((8, 8, 5), dtype=np.float32))
        (d / "groundtruth_rect.txt").write_text("1,1,2,2\n1,1,2,2\n")
        with pytest.raises(DataError):
            load_sequence(d)

    def test_paired_rgb(self, tmp_path):
        seq = synth_sequence(SynthConfig(frames=2, seed=1))
        seq.rgb_is_derived = False
        save_sequence(seq, tmp_path / "s")
        loaded = load_sequence(tmp_path / "s")
        assert not loaded.rgb_is_derived
        assert loaded.equals(seq)


class TestCrops:
    def test_identity_crop(self):
        # context 0.5 on a square box w=h makes the crop side 2w exactly
        frame = make_frame(40, 40, 6)
        box = BoundingBox(10, 10, 16, 16)
        crop = crop_template(frame, box, out_size=32, context=0.5)
        assert np.array_equal(crop.hs.data, frame.hs.data[2:34, 2:34])

    def test_corner_padding_uses_channel_means(self):
        frame = make_frame(40, 40, 6)
        box = BoundingBox(0, 0, 16, 16)
        crop = crop_template(frame, box, out_size=32, context=0.5)
        means = frame.hs.data.reshape(-1, 6).mean(axis=0)
        # crop is centered at (8, 8): the first 10 rows/cols are out of frame
        assert np.allclose(crop.hs.data[0, 0], means, atol=1e-6)
        assert np.allclose(crop.hs.data[:6, :6], means, atol=1e-6)

    def test_round_trip_mapping(self):
        frame = make_frame(64, 64, 4)
        gt = BoundingBox(20.0, 24.0, 10.0, 14.0)
        _, meta = crop_search(frame, gt.center, (gt.w, gt.h), 96, 48, 0.5)
        back = meta.box_to_frame(meta.box_to_crop(gt))
        assert abs(back.x - gt.x) < 0.5
        assert abs(back.y - gt.y) < 0.5
        assert abs(back.w - gt.w) < 0.5
        assert abs(back.h - gt.h) < 0.5

    def test_point_round_trip_exact(self):
        frame = make_frame(64, 64, 4)
        _, meta = crop_square(frame, (31.3, 40.2), 37.0, 96)
        x, y = meta.point_to_frame(*meta.point_to_crop(12.34, 56.78))
        assert abs(x - 12.34) < 1e-9
        assert abs(y - 56.78) < 1e-9

    def test_degenerate_prev_size(self):
        frame = make_frame()
        with pytest.raises(ValueError):
            crop_search(frame, (16, 16), (0.0, 5.0), 96, 48)

    def test_crop_shapes(self):
        frame = make_frame(50, 70, 5)
        crop = crop_template(frame, BoundingBox(5, 5, 9, 13), out_size=48)
        assert crop.hs.shape == (48, 48, 5)
        assert crop.rgb.shape == (48, 48, 3)

    def test_search_scales_with_template_ratio(self):
        frame = make_frame(64, 64, 4)
        _, meta = crop_search(frame, (32, 32), (12, 12), 128, 48, 0.5)
        # template side is 24 at context 0.5, so the search side is 64
        assert meta.side == 64
        assert meta.out_size == 128
