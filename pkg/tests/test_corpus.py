from __future__ import annotations

import re

import pytest
from hypothesis import given
from hypothesis import strategies as st

from chartforge.corpus import (
    CHARTX_LAYOUT,
    T2C31_LAYOUT,
    CategoryLabel,
    ChartTask,
    MalformedRecordError,
    MissingFieldError,
    TaskSet,
    category_of,
    get_layout,
    load_taskset,
    save_taskset,
)

from conftest import write_jsonl


def _record(task_id: str, category: str = "Pairwise Chart", **extra) -> dict:
    record = {
        "id": task_id,
        "description": f"A chart for {task_id}.",
        "category": category,
        "data_files": [],
        "reference_code": None,
        "reference_image_path": None,
    }
    record.update(extra)
    return record


class TestCategoryOf:
    @pytest.mark.parametrize(
        "raw,expected",
        [
            ("Pairwise Chart", CategoryLabel.PAIRWISE),
            ("Statistical Distribution Chart", CategoryLabel.STATISTICAL_DISTRIBUTION),
            ("statistical distribution chart", CategoryLabel.STATISTICAL_DISTRIBUTION),
            ("Gridded Chart", CategoryLabel.GRIDDED),
            ("Irregularly Gridded Chart", CategoryLabel.IRREGULARLY_GRIDDED),
            ("3D and Volumetric Chart", CategoryLabel.THREE_D_VOLUMETRIC),
            ("General Chart", CategoryLabel.GENERAL),
            ("Fine-Grained Chart", CategoryLabel.FINE_GRAINED),
            ("Specific Chart", CategoryLabel.SPECIFIC),
            ("", CategoryLabel.UNKNOWN),
            ("candlestick", CategoryLabel.UNKNOWN),
        ],
    )
    def test_known_labels(self, raw, expected):
        assert category_of(raw) is expected

    def test_case_folding_matches_independent_oracle(self):
        # Oracle: lowercase both sides and strip non-alphanumerics before compare.
        def oracle(raw: str) -> CategoryLabel:
            folded = re.sub(r"[^a-z0-9]+", "", raw.lower())
            table = {
                re.sub(r"[^a-z0-9]+", "", "statistical distribution chart"): (
                    CategoryLabel.STATISTICAL_DISTRIBUTION
                )
            }
            return table.get(folded, CategoryLabel.UNKNOWN)

        raw = "statistical distribution chart"
        assert category_of(raw) is oracle(raw)
        assert category_of("STATISTICAL-DISTRIBUTION   chart") is oracle(raw)

    @given(
        label=st.sampled_from(
            ["Pairwise Chart", "Gridded Chart", "3D and Volumetric Chart", "Specific Chart"]
        ),
        spaces=st.integers(min_value=0, max_value=3),
        upper=st.booleans(),
    )
    def test_idempotent_under_case_and_whitespace(self, label, spaces, upper):
        mangled = (" " * spaces) + (label.upper() if upper else label.lower()) + (" " * spaces)
        assert category_of(mangled) is category_of(label)


class TestLoadTaskset:
    def test_basic_load_preserves_order_and_files(self, tmp_path, tiny_png):
        image_path = tmp_path / "imgs" / "a.png"
        image_path.parent.mkdir()
        image_path.write_bytes(tiny_png)
        records = [
            _record(
                "a",
                data_files=[{"name": "sports_fanatics.csv", "content": "Country,P\nUS,45\n"}],
                reference_code="plot()",
                reference_image_path="imgs/a.png",
            ),
            _record("b", category="Gridded Chart"),
        ]
        path = write_jsonl(tmp_path / "split.jsonl", records)

        ts = load_taskset(path, T2C31_LAYOUT)

        assert [t.id for t in ts.tasks] == ["a", "b"]
        assert ts.tasks[0].data_files == (("sports_fanatics.csv", "Country,P\nUS,45\n"),)
        assert ts.tasks[0].reference_code == "plot()"
        assert ts.tasks[0].reference_image == tiny_png
        assert ts.tasks[1].category is CategoryLabel.GRIDDED

    def test_counts_match_recount(self, tmp_path):
        records = [_record(f"t{i}") for i in range(4)] + [
            _record("g", category="Gridded Chart")
        ]
        ts = load_taskset(write_jsonl(tmp_path / "s.jsonl", records))
        recount = {}
        for task in ts.tasks:
            recount[task.category] = recount.get(task.category, 0) + 1
        assert ts.counts_by_category == recount
        assert sum(ts.counts_by_category.values()) == len(ts)

    def test_synthetic_t2c31_split_counts(self, tmp_path):
        spec = [
            ("Pairwise Chart", 472),
            ("Statistical Distribution Chart", 452),
            ("Gridded Chart", 192),
            ("Irregularly Gridded Chart", 148),
            ("3D and Volumetric Chart", 159),
        ]
        records = []
        for category, count in spec:
            records.extend(
                _record(f"{category[:3]}-{i}", category=category) for i in range(count)
            )
        ts = load_taskset(write_jsonl(tmp_path / "t2c31.jsonl", records))
        assert len(ts) == 1423
        assert ts.counts_by_category[CategoryLabel.PAIRWISE] == 472

    def test_synthetic_chartx_split_counts(self, tmp_path):
        spec = [("General Chart", 500), ("Fine-Grained Chart", 500), ("Specific Chart", 152)]
        records = []
        for category, count in spec:
            records.extend(
                {
                    "imgname": f"{category[:4]}-{i}",
                    "description": "A chart.",
                    "type": category,
                    "csv_files": [],
                    "code": None,
                    "img_path": None,
                }
                for i in range(count)
            )
        ts = load_taskset(write_jsonl(tmp_path / "chartx.jsonl", records), CHARTX_LAYOUT)
        assert len(ts) == 1152
        assert ts.counts_by_category[CategoryLabel.SPECIFIC] == 152

    def test_chartx_unmapped_type_surfaces_raw_label(self, tmp_path):
        records = [
            {
                "imgname": "x1",
                "description": "A candlestick chart.",
                "type": "candlestick",
                "csv_files": [],
            }
        ]
        ts = load_taskset(write_jsonl(tmp_path / "c.jsonl", records), CHARTX_LAYOUT)
        assert ts.tasks[0].category is CategoryLabel.UNKNOWN
        assert ts.tasks[0].raw_category == "candlestick"

    def test_empty_file(self, tmp_path):
        ts = load_taskset(write_jsonl(tmp_path / "empty.jsonl", []))
        assert len(ts) == 0
        assert ts.counts_by_category == {}

    def test_missing_description_names_record(self, tmp_path):
        records = [_record("ok"), {"id": "broken", "category": "Pairwise Chart"}]
        path = write_jsonl(tmp_path / "s.jsonl", records)
        with pytest.raises(MissingFieldError) as excinfo:
            load_taskset(path)
        assert "broken" in str(excinfo.value)
        assert excinfo.value.field_name == "description"

    def test_malformed_line_names_line(self, tmp_path):
        path = tmp_path / "s.jsonl"
        path.write_text('{"id": "a", "description": "d"}\n{nope\n', encoding="utf-8")
        with pytest.raises(MalformedRecordError) as excinfo:
            load_taskset(path)
        assert excinfo.value.line_number == 2

    def test_duplicate_id_rejected(self, tmp_path):
        path = write_jsonl(tmp_path / "s.jsonl", [_record("same"), _record("same")])
        with pytest.raises(ValueError, match="duplicate"):
            load_taskset(path)

    def test_traversal_data_file_rejected(self, tmp_path):
        record = _record("evil", data_files=[{"name": "../x.csv", "content": "a"}])
        path = write_jsonl(tmp_path / "s.jsonl", [record])
        with pytest.raises(MalformedRecordError, match="traversal"):
            load_taskset(path)

    def test_unknown_layout_rejected(self):
        with pytest.raises(ValueError, match="unknown layout"):
            get_layout("excel")


class TestRoundTrip:
    def test_load_save_load_is_identity(self, tmp_path, tiny_png):
        image_path = tmp_path / "ref.png"
        image_path.write_bytes(tiny_png)
        records = [
            _record(
                "a",
                data_files=[{"name": "d.csv", "content": "x,y\n1,2\n"}],
                reference_code="plot()\n",
                reference_image_path="ref.png",
            ),
            _record("b", category="3D and Volumetric Chart"),
        ]
        first = load_taskset(write_jsonl(tmp_path / "one.jsonl", records))

        out = tmp_path / "round" / "two.jsonl"
        save_taskset(first, out)
        second = load_taskset(out)
        assert second.tasks == first.tasks

        save_taskset(second, tmp_path / "round" / "three.jsonl")
        third = load_taskset(tmp_path / "round" / "three.jsonl")
        assert third.tasks == second.tasks


class TestChartTaskInvariants:
    def test_empty_description_rejected(self):
        with pytest.raises(ValueError, match="description"):
            ChartTask(id="x", description="", category=CategoryLabel.UNKNOWN)

    def test_absolute_data_file_rejected(self):
        with pytest.raises(ValueError, match="relative"):
            ChartTask(
                id="x",
                description="d",
                category=CategoryLabel.UNKNOWN,
                data_files=(("/etc/passwd", "boom"),),
            )

    def test_duplicate_ids_rejected_in_taskset(self):
        task = ChartTask(id="x", description="d", category=CategoryLabel.UNKNOWN)
        with pytest.raises(ValueError, match="duplicate"):
            TaskSet(name="s", tasks=(task, task))
