from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tinytarget.data import (
    AnnotationRecord,
    denormalize_boxes,
    generate_scene,
    generate_scenes,
    mask_to_boxes,
    normalize_boxes,
    parse_annotation_file,
    rasterize_boxes,
    read_annotations,
    read_mask_pgm,
    read_pgm,
    scene_to_uint8,
    write_annotations,
    write_pgm,
)
from tinytarget.errors import AnnotationParseError, GenerationError
from tinytarget.geometry import BBox


def components_oracle(mask):
    """Tight (left, top, right, bottom) spans of 8-connected components, via BFS."""
    h, w = mask.shape
    seen = np.zeros_like(mask, dtype=bool)
    spans = []
    for r in range(h):
        for c in range(w):
            if not mask[r, c] or seen[r, c]:
                continue
            seen[r, c] = True
            queue = deque([(r, c)])
            r0, c0, r1, c1 = r, c, r, c
            while queue:
                y, x = queue.popleft()
                r0, r1, c0, c1 = min(r0, y), max(r1, y), min(c0, x), max(c1, x)
                for dy in (-1, 0, 1):
                    for dx in (-1, 0, 1):
                        yy, xx = y + dy, x + dx
                        if 0 <= yy < h and 0 <= xx < w and mask[yy, xx] and not seen[yy, xx]:
                            seen[yy, xx] = True
                            queue.append((yy, xx))
            spans.append((r0, c0, r1 + 1, c1 + 1))
    return sorted(spans)


class TestMaskToBoxes:
    def test_empty(self):
        assert mask_to_boxes(np.zeros((8, 8), dtype=bool)) == []

    def test_single_pixel(self):
        mask = np.zeros((8, 8), dtype=bool)
        mask[3, 5] = True
        assert mask_to_boxes(mask) == [BBox(5.5, 3.5, 1.0, 1.0)]

    def test_diagonal_pair_is_one_component(self):
        mask = np.zeros((6, 6), dtype=bool)
        mask[1, 1] = mask[2, 2] = True
        assert mask_to_boxes(mask) == [BBox(2.0, 2.0, 2.0, 2.0)]

    def test_ordering(self):
        mask = np.zeros((10, 10), dtype=bool)
        mask[5, 1] = mask[1, 7] = mask[1, 2] = True
        tops_lefts = [(b.cy - b.h / 2, b.cx - b.w / 2) for b in mask_to_boxes(mask)]
        assert tops_lefts == [(1, 2), (1, 7), (5, 1)]

    def test_rejects_3d(self):
        with pytest.raises(ValueError):
            mask_to_boxes(np.zeros((2, 2, 2)))

    @settings(max_examples=60, deadline=None)
    @given(arrays(np.bool_, st.tuples(st.integers(1, 12), st.integers(1, 12))))
    def test_matches_bfs_oracle(self, mask):
        expected = [BBox.from_corners(c0, r0, c1, r1) for r0, c0, r1, c1 in components_oracle(mask)]
        assert mask_to_boxes(mask) == expected

    @settings(max_examples=60, deadline=None)
    @given(arrays(np.bool_, st.tuples(st.integers(1, 16), st.integers(1, 16))))
    def test_coverage(self, mask):
        covered = rasterize_boxes(mask_to_boxes(mask), mask.shape)
        assert np.all(covered[mask])


class TestScene:
    def test_no_targets(self):
        scene = generate_scene(n_targets=0, seed=1)
        assert scene.targets == () and not scene.mask.any()

    def test_deterministic(self):
        a, b = generate_scene(seed=42), generate_scene(seed=42)
        assert a.pixels.tobytes() == b.pixels.tobytes()
        assert a.targets == b.targets

    def test_seeds_differ(self):
        assert not np.array_equal(generate_scene(seed=1).pixels, generate_scene(seed=2).pixels)

    def test_imbalance(self):
        for seed in range(10):
            scene = generate_scene(64, 64, 3, (2, 5), seed=seed)
            assert len(scene.targets) == 3
            assert scene.positive_fraction < 0.01

    def test_pixel_range_and_bounds(self):
        scene = generate_scene(48, 40, 4, (1, 6), seed=3)
        assert scene.pixels.shape == (48, 40)
        assert scene.pixels.min() >= 0 and scene.pixels.max() <= 1
        for b in scene.targets:
            x0, y0, x1, y1 = b.corners()
            assert 0 <= x0 and x1 <= 40 and 0 <= y0 and y1 <= 48

    def test_mask_matches_targets(self):
        for seed in range(5):
            scene = generate_scene(seed=seed, n_targets=5)
            assert mask_to_boxes(scene.mask) == list(scene.targets)

    def test_argmax_inside_box(self):
        for seed in range(10):
            scene = generate_scene(seed=seed, noise_level=0.0, n_distractors=0)
            h, w = scene.shape
            for b in scene.targets:
                x0, y0, x1, y1 = (int(v) for v in b.corners())
                r0, c0 = max(y0 - 2, 0), max(x0 - 2, 0)
                window = scene.pixels[r0 : min(y1 + 2, h), c0 : min(x1 + 2, w)]
                r, c = np.unravel_index(np.argmax(window), window.shape)
                assert y0 <= r + r0 < y1 and x0 <= c + c0 < x1

    def test_placement_failure(self):
        with pytest.raises(GenerationError):
            generate_scene(8, 8, 50, (2, 2), seed=0, max_attempts=5)

    @pytest.mark.parametrize(
        "kwargs",
        [dict(h=4), dict(n_targets=-1), dict(target_size_range=(0, 2)), dict(target_size_range=(3, 20)), dict(noise_level=-1)],
    )
    def test_bad_arguments(self, kwargs):
        with pytest.raises(ValueError):
            generate_scene(**kwargs)

    def test_generate_scenes(self):
        a = generate_scenes(3, seed=9)
        b = generate_scenes(3, seed=9)
        assert len({s.seed for s in a}) == 3
        assert all(x.pixels.tobytes() == y.pixels.tobytes() for x, y in zip(a, b))


class TestPgm:
    @pytest.mark.parametrize("binary", [True, False])
    def test_round_trip(self, tmp_path, rng, binary):
        img = rng.integers(0, 256, size=(7, 11))
        write_pgm(tmp_path / "x.pgm", img, binary=binary)
        np.testing.assert_array_equal(read_pgm(tmp_path / "x.pgm"), img)

    def test_comments_and_maxval(self, tmp_path):
        (tmp_path / "c.pgm").write_bytes(b"P2\n# comment\n2 1\n# more\n15\n0 15\n")
        np.testing.assert_array_equal(read_pgm(tmp_path / "c.pgm"), [[0, 255]])

    def test_mask(self, tmp_path):
        write_pgm(tmp_path / "m.pgm", np.array([[0, 127, 128, 255]]))
        np.testing.assert_array_equal(read_mask_pgm(tmp_path / "m.pgm"), [[False, False, True, True]])

    def test_bad_magic(self, tmp_path):
        (tmp_path / "bad.pgm").write_bytes(b"P6\n1 1\n255\n\x00")
        with pytest.raises(ValueError):
            read_pgm(tmp_path / "bad.pgm")

    def test_scene_bytes(self, tmp_path):
        scene = generate_scene(seed=0)
        write_pgm(tmp_path / "s.pgm", scene_to_uint8(scene))
        np.testing.assert_array_equal(read_pgm(tmp_path / "s.pgm"), scene_to_uint8(scene))


class TestAnnotations:
    def test_centered_line(self, tmp_path):
        (tmp_path / "img.txt").write_text("0.5 0.5 0.1 0.1\n")
        record = parse_annotation_file(tmp_path / "img.txt")
        assert record.image_id == "img" and record.scores is None
        assert denormalize_boxes(record.boxes, 100, 100) == (BBox(50, 50, 10, 10),)

    @pytest.mark.parametrize(
        "line",
        ["0.5 0.5 -0.1 0.1", "0.5 0.5 0 0.1", "0.5 x 0.1 0.1", "0.5 0.5 0.1", "1.5 0.5 0.1 0.1", "0.5 0.5 0.1 0.1 1.5", "nan 0.5 0.1 0.1"],
    )
    def test_parse_errors(self, tmp_path, line):
        path = tmp_path / "bad.txt"
        path.write_text("0.2 0.2 0.1 0.1\n" + line + "\n")
        with pytest.raises(AnnotationParseError) as err:
            parse_annotation_file(path)
        assert err.value.line_no == 2
        assert str(err.value).startswith(f"{path}:2:")

    def test_mixed_columns(self, tmp_path):
        path = tmp_path / "m.txt"
        path.write_text("0.2 0.2 0.1 0.1 0.9\n0.2 0.2 0.1 0.1\n")
        with pytest.raises(AnnotationParseError):
            parse_annotation_file(path)

    def test_blank_lines_and_empty_file(self, tmp_path):
        (tmp_path / "a.txt").write_text("\n0.5 0.5 0.1 0.1\n\n")
        (tmp_path / "b.txt").write_text("")
        records = read_annotations(tmp_path)
        assert [r.image_id for r in records] == ["a", "b"]
        assert len(records[0].boxes) == 1 and records[1].boxes == ()

    def test_record_validation(self):
        with pytest.raises(ValueError):
            AnnotationRecord("x", (BBox(1.5, 0.5, 0.1, 0.1),))
        with pytest.raises(ValueError):
            AnnotationRecord("x", (BBox(0.5, 0.5, 0.1, 0.1),), scores=(0.1, 0.2))

    @settings(max_examples=40, deadline=None)
    @given(
        st.lists(
            st.tuples(*[st.integers(1, 999_999)] * 4, st.integers(0, 1_000_000)),
            max_size=6,
        ),
        st.booleans(),
    )
    def test_round_trip(self, tmp_path_factory, rows, with_scores):
        out = tmp_path_factory.mktemp("ann")
        boxes = tuple(BBox(*(v / 1e6 for v in row[:4])) for row in rows)
        scores = tuple(row[4] / 1e6 for row in rows) if with_scores else None
        record = AnnotationRecord("img_0", boxes, scores)
        write_annotations([record], out)
        assert read_annotations(out / "img_0.txt") == [record]

    def test_normalize_round_trip(self):
        boxes = (BBox(10, 20, 4, 6),)
        norm = normalize_boxes(boxes, 64, 32)
        assert norm == (BBox(10 / 64, 20 / 32, 4 / 64, 6 / 32),)
        assert denormalize_boxes(norm, 64, 32) == boxes
