import numpy as np
import pytest

from boxgrade.crops import (
    PAD_VALUE,
    CropSpec,
    CropWindow,
    ImageStore,
    draw_marker,
    extract_window,
    load_image,
    plan_crop,
    render,
)

MAGENTA = np.array([255, 0, 255], dtype=np.uint8)


def gray(h, w):
    return np.full((h, w, 3), 100, dtype=np.uint8)


class TestPlanCrop:
    def test_side_and_containment(self):
        spec = CropSpec()
        rng = np.random.default_rng(0)
        box = (100, 100, 50, 30)
        for _ in range(1000):
            win = plan_crop(box, (1000, 1000), spec, rng)
            assert not win.edge_adjusted
            assert 1.2 <= win.side_factor <= 1.5
            assert win.side == pytest.approx(win.side_factor * 50)
            assert win.contains(box)

    def test_fixed_factor(self):
        win = plan_crop((100, 100, 50, 30), (1000, 1000), CropSpec(1.2, 1.2))
        assert win.side == pytest.approx(60)

    def test_corner_box_shifted_inward(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            win = plan_crop((0, 0, 40, 40), (300, 300), CropSpec(), rng)
            assert win.x >= 0 and win.y >= 0
            assert win.contains((0, 0, 40, 40), strict=False)
        assert any(plan_crop((0, 0, 40, 40), (300, 300), CropSpec(), np.random.default_rng(s)).edge_adjusted
                   for s in range(20))

    def test_no_jitter_centres_window(self):
        spec = CropSpec(center_jitter=False)
        win = plan_crop((200, 300, 80, 40), (1000, 1000), spec, np.random.default_rng(5))
        assert win.x + win.side / 2 == pytest.approx(240)
        assert win.y + win.side / 2 == pytest.approx(320)

    def test_jitter_varies_box_position(self):
        rng = np.random.default_rng(0)
        offsets = {round(plan_crop((200, 200, 60, 60), (800, 800), CropSpec(), rng).x, 6) for _ in range(50)}
        assert len(offsets) > 40

    def test_box_larger_than_image_is_capped(self):
        win = plan_crop((0, 0, 100, 60), (100, 60), CropSpec(), np.random.default_rng(0))
        assert win.edge_adjusted
        assert win.side == pytest.approx(100)

    def test_deterministic_without_rng(self):
        spec = CropSpec().deterministic()
        a = plan_crop((10, 20, 30, 40), (200, 200), spec)
        b = plan_crop((10, 20, 30, 40), (200, 200), spec)
        assert a == b and a.side_factor == pytest.approx(1.35)


class TestMarker:
    def test_frame_colour_on_gray(self):
        out = draw_marker(gray(50, 50), (10, 10, 20, 20))
        # thickness 3 straddles the boundary: rows 9, 10, 11 on the top edge
        for row in (9, 10, 11):
            assert (out[row, 12:28] == MAGENTA).all()
        assert (out[20, 20] == 100).all()
        assert (out[7, 20] == 100).all()

    def test_input_untouched(self):
        img = gray(20, 20)
        draw_marker(img, (2, 2, 10, 10))
        assert (img == 100).all()

    def test_clipped_at_edges(self):
        out = draw_marker(gray(30, 30), (0, 0, 30, 30))
        assert out.shape == (30, 30, 3)
        assert (out[0] == MAGENTA).all() and (out[:, -1] == MAGENTA).all()
        assert (out[15, 15] == 100).all()

    def test_box_outside_image_is_noop(self):
        out = draw_marker(gray(10, 10), (50, 50, 5, 5))
        assert (out == 100).all()


class TestRender:
    def test_padding(self):
        img = gray(20, 20)
        win = CropWindow(-5, -5, 10, 1.0)
        crop = extract_window(img, win)
        assert crop.shape == (10, 10, 3)
        assert (crop[:5, :5] == PAD_VALUE).all() and (crop[5:, 5:] == 100).all()

    def test_output_resolution(self):
        spec = CropSpec(output_resolution=32)
        win = plan_crop((40, 40, 30, 20), (120, 120), spec, np.random.default_rng(0))
        crop = render(gray(120, 120), (40, 40, 30, 20), win, spec, "ref")
        assert crop.pixels.shape == (32, 32, 3) and crop.pixels.dtype == np.uint8
        assert crop.sample_ref == "ref"
        assert (crop.pixels == MAGENTA).all(axis=-1).any()

    def test_byte_identical(self):
        rng = np.random.default_rng(0)
        img = rng.integers(0, 255, (90, 120, 3), dtype=np.uint8)
        spec = CropSpec(output_resolution=48)
        a = render(img, (30, 20, 40, 30), plan_crop((30, 20, 40, 30), (120, 90), spec, np.random.default_rng(9)), spec)
        b = render(img, (30, 20, 40, 30), plan_crop((30, 20, 40, 30), (120, 90), spec, np.random.default_rng(9)), spec)
        assert a.pixels.tobytes() == b.pixels.tobytes() and a.crop_window == b.crop_window

    def test_golden_without_resize(self):
        img = np.arange(12 * 12 * 3, dtype=np.uint8).reshape(12, 12, 3)
        spec = CropSpec(output_resolution=8, marker_thickness=1)
        crop = render(img, (2, 2, 4, 4), CropWindow(0, 0, 8, 2.0), spec)
        expected = img[:8, :8].copy()
        expected[2, 2:6] = expected[5, 2:6] = MAGENTA
        expected[2:6, 2] = expected[2:6, 5] = MAGENTA
        assert np.array_equal(crop.pixels, expected)


class TestImages:
    def test_missing_file_names_path(self, tmp_path):
        with pytest.raises(OSError, match="missing.png"):
            load_image(tmp_path / "missing.png")

    def test_store_caches_read_only(self, coco_on_disk):
        store = ImageStore(coco_on_disk.parent)
        a = store("a.png")
        assert a is store("a.png")
        assert a.shape == (160, 200, 3)
        with pytest.raises(ValueError):
            a[0, 0] = 0
