import json

import numpy as np
import pytest

from keepfit.data import (
    ClassSpec,
    ManifestError,
    ManifestRecord,
    load_classes,
    load_corpus,
    load_image,
    load_manifest,
    save_classes,
    save_manifest,
)


def test_record_roundtrip_preserves_fields():
    rec = ManifestRecord(
        image_ref="images/a.png", source="elite", caption="a lesion", category_id=3
    )
    back = ManifestRecord.from_json(rec.to_json())
    assert back == rec


def test_record_json_keys_are_sorted():
    rec = ManifestRecord(image_ref="x.png", source="categorical", category_id=0)
    keys = list(json.loads(rec.to_json()).keys())
    assert keys == sorted(keys)


def test_elite_requires_caption():
    rec = ManifestRecord(image_ref="x.png", source="elite", category_id=1)
    with pytest.raises(ManifestError, match="caption"):
        rec.validate()


def test_categorical_requires_category():
    rec = ManifestRecord(image_ref="x.png", source="categorical", caption="hi")
    with pytest.raises(ManifestError, match="category"):
        rec.validate()


def test_unknown_source_rejected():
    with pytest.raises(ManifestError, match="source"):
        ManifestRecord(image_ref="x.png", source="mystery", caption="hi").validate()


def test_unknown_json_fields_rejected():
    line = json.dumps(
        {"image_ref": "x.png", "source": "elite", "caption": "hi", "extra": 1}
    )
    with pytest.raises(ManifestError, match="extra"):
        ManifestRecord.from_json(line)


def test_load_manifest_reports_line_number(tmp_path):
    path = tmp_path / "manifest.jsonl"
    good = ManifestRecord(image_ref="a.png", source="elite", caption="ok").to_json()
    path.write_text(good + "\n" + "{not json}\n", encoding="utf-8")
    with pytest.raises(ManifestError, match=r"manifest\.jsonl:2:"):
        load_manifest(path)


def test_manifest_roundtrip(tmp_path):
    records = [
        ManifestRecord(image_ref=f"images/{i}.png", source="categorical", category_id=i)
        for i in range(5)
    ]
    path = tmp_path / "m.jsonl"
    save_manifest(records, path)
    assert load_manifest(path) == records


def test_classes_roundtrip(tmp_path):
    classes = [
        ClassSpec(class_id=0, name="amber ring", motif="ring", color="amber"),
        ClassSpec(class_id=1, name="crimson disk", motif="disk", color="crimson"),
    ]
    path = tmp_path / "classes.json"
    save_classes(classes, path)
    assert load_classes(path) == classes


def test_record_id_is_stable():
    rec = ManifestRecord(image_ref="images/elite_00001.png", source="elite", caption="x")
    assert rec.record_id == ManifestRecord.from_json(rec.to_json()).record_id


def test_load_corpus_and_image(tiny_corpus, tiny_spec):
    records, classes = load_corpus(tiny_corpus)
    assert len(records) == tiny_spec.n_elite + tiny_spec.n_categorical
    assert len(classes) == tiny_spec.n_classes
    img = load_image(records[0], tiny_corpus)
    assert img.shape == (tiny_spec.image_size, tiny_spec.image_size, 3)
    assert img.dtype == np.float32
    assert 0.0 <= img.min() and img.max() <= 1.0
