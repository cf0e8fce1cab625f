"""Tests for the annotation data model, parsers, and writers."""

import math

import pytest

from scaleforge.annot import (
    BoxAnnotation,
    DatasetBundle,
    ImageRecord,
    PredictedPoint,
    PredictionSet,
    center_of,
    clamp_box,
    clamp_bundle,
    diagonal_of,
    parse_dataset,
    parse_predictions,
    pseudo_box,
    scale_of,
    validate_bundle,
    write_dataset,
    write_predictions,
)
from scaleforge.errors import ParseError, ValidationError


class TestBoxGeometry:
    def test_scale_is_area(self):
        assert scale_of(BoxAnnotation(0, 0, 3.0, 4.0)) == 12.0

    def test_diagonal(self):
        assert diagonal_of(BoxAnnotation(0, 0, 3.0, 4.0)) == 5.0

    def test_center(self):
        assert center_of(BoxAnnotation(10.0, 20.0, 4.0, 6.0)) == (12.0, 23.0)

    def test_pseudo_box_centered_square(self):
        box = pseudo_box(50.0, 60.0, side=16.0)
        assert center_of(box) == (50.0, 60.0)
        assert box.w == box.h == 16.0
        assert box.synthetic

    def test_pseudo_box_default_side(self):
        box = pseudo_box(0.0, 0.0)
        assert box.w == 16.0


class TestClampBox:
    def test_inside_box_untouched(self):
        box = BoxAnnotation(10, 10, 5, 5)
        clamped, changed = clamp_box(box, 100, 100)
        assert clamped is box
        assert not changed

    def test_straddling_box_clamped(self):
        clamped, changed = clamp_box(BoxAnnotation(-4.0, 90.0, 10.0, 20.0), 100, 100)
        assert changed
        assert (clamped.x, clamped.y, clamped.w, clamped.h) == (0.0, 90.0, 6.0, 10.0)

    def test_outside_box_degenerate(self):
        clamped, changed = clamp_box(BoxAnnotation(200.0, 200.0, 5.0, 5.0), 100, 100)
        assert changed
        assert clamped.w <= 0 or clamped.h <= 0

    def test_synthetic_flag_survives(self):
        box = pseudo_box(0.0, 0.0)
        clamped, _ = clamp_box(box, 100, 100)
        assert clamped.synthetic

    def test_clamp_bundle_counts(self):
        img = ImageRecord(id="a", width=100, height=100, boxes=[
            BoxAnnotation(10, 10, 5, 5),
            BoxAnnotation(-1, 0, 5, 5),
            BoxAnnotation(98, 98, 5, 5),
        ])
        bundle = DatasetBundle(name="t", images=[img])
        assert clamp_bundle(bundle) == 2
        for box in img.boxes:
            assert box.x >= 0 and box.x + box.w <= 100


class TestValidateBundle:
    def test_clean_bundle_passes(self):
        img = ImageRecord(id="a", width=10, height=10, boxes=[BoxAnnotation(1, 1, 2, 2)])
        assert validate_bundle(DatasetBundle(name="t", images=[img])) == []

    def test_duplicate_id_flagged(self):
        imgs = [ImageRecord(id="a", width=10, height=10),
                ImageRecord(id="a", width=10, height=10)]
        violations = validate_bundle(DatasetBundle(name="t", images=imgs))
        assert any(v.rule == "unique-id" for v in violations)

    def test_degenerate_box_flagged(self):
        img = ImageRecord(id="a", width=10, height=10, boxes=[BoxAnnotation(1, 1, 0, 2)])
        violations = validate_bundle(DatasetBundle(name="t", images=[img]))
        assert any(v.rule == "box-size" for v in violations)

    def test_out_of_frame_flagged(self):
        img = ImageRecord(id="a", width=10, height=10, boxes=[BoxAnnotation(8, 8, 5, 5)])
        violations = validate_bundle(DatasetBundle(name="t", images=[img]))
        assert any(v.rule == "box-bounds" for v in violations)

    def test_nonfinite_flagged(self):
        img = ImageRecord(id="a", width=10, height=10,
                          boxes=[BoxAnnotation(math.nan, 1, 2, 2)])
        violations = validate_bundle(DatasetBundle(name="t", images=[img]))
        assert any(v.rule == "finite" for v in violations)


class TestNativeJson:
    def test_round_trip(self, tmp_path):
        bundle = DatasetBundle(name="demo", images=[
            ImageRecord(id="i0", width=64, height=48,
                        boxes=[BoxAnnotation(1.0, 2.0, 3.0, 4.0)],
                        meta={"note": "x"}),
            ImageRecord(id="i1", width=64, height=48, boxes=[]),
        ])
        path = tmp_path / "demo.jsonl"
        write_dataset(bundle, path)
        back = parse_dataset(path, fmt="native-json")
        assert back.name == "demo"
        assert [img.id for img in back] == ["i0", "i1"]
        box = back.images[0].boxes[0]
        assert (box.x, box.y, box.w, box.h) == (1.0, 2.0, 3.0, 4.0)
        assert back.images[0].meta == {"note": "x"}

    def test_straddling_box_clamped_on_parse(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text(
            '{"id": "a", "width": 100, "height": 100,'
            ' "boxes": [{"x": -5, "y": 0, "w": 10, "h": 10}]}\n'
        )
        bundle = parse_dataset(path)
        assert bundle.images[0].boxes[0].x == 0.0
        assert bundle.images[0].boxes[0].w == 5.0

    def test_missing_field_rejected(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text('{"id": "a", "width": 100}\n')
        with pytest.raises(ParseError):
            parse_dataset(path)

    def test_bad_json_rejected(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text("{nope\n")
        with pytest.raises(ParseError) as err:
            parse_dataset(path)
        assert err.value.line == 1

    def test_validation_error_lists_violations(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text('{"id": "a", "width": -3, "height": 100, "boxes": []}\n')
        with pytest.raises(ValidationError) as err:
            parse_dataset(path)
        assert err.value.violations

    def test_validate_false_tolerates_violations(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text('{"id": "a", "width": -3, "height": 100, "boxes": []}\n')
        bundle = parse_dataset(path, validate=False)
        assert bundle.images[0].width == -3

    def test_unknown_format_rejected(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text("")
        with pytest.raises(ParseError):
            parse_dataset(path, fmt="parquet")


CSV_TEXT = """image_id,width,height,x,y,w,h
scene0,640,480,100,200,30,40
scene0,640,480,50,60,,
scene1,640,480,,,,
"""


class TestCsvPointsBoxes:
    def test_mixed_points_and_boxes(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_text(CSV_TEXT)
        bundle = parse_dataset(path, fmt="csv-points-boxes", point_box_side=8.0)
        by_id = {img.id: img for img in bundle}
        assert set(by_id) == {"scene0", "scene1"}
        full, point = by_id["scene0"].boxes
        assert not full.synthetic
        assert scale_of(full) == 1200.0
        assert point.synthetic
        assert point.w == 8.0
        assert center_of(point) == (50.0, 60.0)
        assert by_id["scene1"].boxes == []

    def test_missing_columns_rejected(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_text("image_id,x,y\na,1,2\n")
        with pytest.raises(ParseError):
            parse_dataset(path, fmt="csv-points-boxes")

    def test_empty_image_id_rejected(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_text("image_id,width,height,x,y,w,h\n,640,480,1,2,3,4\n")
        with pytest.raises(ParseError) as err:
            parse_dataset(path, fmt="csv-points-boxes")
        assert err.value.line == 2

    def test_bad_number_rejected(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_text("image_id,width,height,x,y,w,h\na,640,480,oops,2,3,4\n")
        with pytest.raises(ParseError):
            parse_dataset(path, fmt="csv-points-boxes")


class TestPredictions:
    def test_round_trip(self, tmp_path):
        preds = PredictionSet(name="model", points={
            "i0": [PredictedPoint(1.0, 2.0, 0.9), PredictedPoint(3.0, 4.0, 0.5)],
            "i1": [],
        })
        path = tmp_path / "preds.jsonl"
        write_predictions(preds, path)
        back = parse_predictions(path)
        assert back.name == "model"
        assert len(back.points["i0"]) == 2
        assert back.points["i0"][1].conf == 0.5
        assert back.points["i1"] == []

    def test_duplicate_id_rejected(self, tmp_path):
        path = tmp_path / "p.jsonl"
        path.write_text('{"id": "a", "points": []}\n{"id": "a", "points": []}\n')
        with pytest.raises(ParseError):
            parse_predictions(path)

    def test_bad_point_rejected(self, tmp_path):
        path = tmp_path / "p.jsonl"
        path.write_text('{"id": "a", "points": [{"x": 1, "y": 2}]}\n')
        with pytest.raises(ParseError):
            parse_predictions(path)

    def test_header_sets_name(self, tmp_path):
        path = tmp_path / "p.jsonl"
        path.write_text('{"kind": "predictions", "name": "runA", "schema_version": 1}\n'
                        '{"id": "a", "points": []}\n')
        assert parse_predictions(path).name == "runA"
