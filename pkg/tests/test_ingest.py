import datetime

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from portal.cells import (
    MISSING,
    ColumnType,
    Date,
    ManifestError,
    Number,
    Row,
    TableManifest,
    Text,
    is_missing,
)
from portal.ingest import (
    ParseError,
    Table,
    emit_csv,
    emit_jsonl,
    infer_column_type,
    parse_table,
    sample_epoch_rows,
    split_train_test,
)


class TestInferColumnType:
    def test_all_numerals(self):
        assert infer_column_type(["1", "2.5", "-3e2"]) is ColumnType.NUMBER

    def test_all_iso_dates(self):
        assert infer_column_type(["2021-01-01", "1999-12-31"]) is ColumnType.DATE

    def test_ninety_percent_threshold(self):
        # 10 of 11 values parse: 90.9% >= 90%
        values = ["1", "apple"] + [str(i) for i in range(2, 11)]
        assert infer_column_type(values) is ColumnType.NUMBER

    def test_below_threshold_is_text(self):
        values = ["1", "apple", "pear"] + [str(i) for i in range(2, 10)]
        assert infer_column_type(values) is ColumnType.TEXT

    def test_missing_markers_excluded_from_vote(self):
        assert infer_column_type(["NA", "", "null", "3.5"]) is ColumnType.NUMBER

    def test_all_missing_is_text(self):
        assert infer_column_type(["NA", "", "None"]) is ColumnType.TEXT

    def test_datetime_values(self):
        assert infer_column_type(["2021-01-01T10:20:30"]) is ColumnType.DATE

    def test_ambiguous_locale_dates_are_text(self):
        assert infer_column_type(["01/02/03", "02/03/04"]) is ColumnType.TEXT

    def test_inf_and_nan_words_are_not_numerals(self):
        assert infer_column_type(["inf", "infinity", "hello"]) is ColumnType.TEXT

    @given(st.lists(st.sampled_from(["1", "2.5", "x", "2020-01-01", "NA", "-7e-2"]),
                    min_size=1, max_size=30),
           st.randoms())
    def test_permutation_invariant(self, values, rng):
        shuffled = list(values)
        rng.shuffle(shuffled)
        assert infer_column_type(values) is infer_column_type(shuffled)


class TestParseCsv:
    def test_simple(self):
        manifest, rows = parse_table(b"a,b\n1,x\n2,y", "csv")
        assert manifest.columns == [("a", ColumnType.NUMBER), ("b", ColumnType.TEXT)]
        assert rows[0].cells == [("a", Number(1.0)), ("b", Text("x"))]
        assert len(rows) == 2

    def test_cell_failing_column_type_becomes_missing(self):
        body = "a\n" + "\n".join([str(i) for i in range(1, 10)] + ["foo"])
        manifest, rows = parse_table(body.encode(), "csv")
        assert manifest.columns == [("a", ColumnType.NUMBER)]
        assert rows[-1].cells == [("a", MISSING)]
        assert rows[0].cells == [("a", Number(1.0))]

    def test_values_never_rescaled(self):
        _, rows = parse_table(b"v\n1e30\n0.5\n2\n", "csv")
        assert rows[0].cells[0][1] == Number(1e30)

    def test_duplicate_header(self):
        with pytest.raises(ManifestError):
            parse_table(b"a,a\n1,2", "csv")

    def test_malformed_quoting(self):
        with pytest.raises(ParseError):
            parse_table(b'a,b\n"x,1\ny"z,2', "csv")

    def test_empty_file(self):
        with pytest.raises(ParseError):
            parse_table(b"", "csv")

    def test_quoted_fields_roundtrip(self):
        manifest, rows = parse_table(b'a,b\n"1,5",x\n"2",y', "csv")
        assert rows[0].get("a") == Text("1,5")

    def test_explicit_manifest_overrides_inference(self):
        manifest = TableManifest(columns=[("a", ColumnType.TEXT)])
        _, rows = parse_table(b"a\n1\n2", "csv", manifest)
        assert rows[0].get("a") == Text("1")


class TestParseJsonl:
    def test_variable_length_rows(self):
        manifest, rows = parse_table(b'{"a": 1}\n{"b": "x"}\n', "jsonl")
        assert {name for name, _ in manifest.columns} == {"a", "b"}
        assert len(rows) == 2
        assert len(rows[0].cells) == 1
        assert is_missing(rows[1].get("a"))

    def test_null_is_missing(self):
        _, rows = parse_table(b'{"a": null}\n', "jsonl")
        assert is_missing(rows[0].get("a"))

    def test_invalid_json_carries_line_number(self):
        with pytest.raises(ParseError) as err:
            parse_table(b'{"a": 1}\n{oops\n', "jsonl")
        assert err.value.line == 2

    def test_nested_values_rejected(self):
        with pytest.raises(ParseError):
            parse_table(b'{"a": [1, 2]}\n', "jsonl")

    def test_dates_inferred(self):
        manifest, rows = parse_table(b'{"d": "2020-05-06"}\n', "jsonl")
        assert dict(manifest.columns)["d"] is ColumnType.DATE
        assert rows[0].get("d") == Date(datetime.date(2020, 5, 6))


finite_numbers = st.floats(allow_nan=False, allow_infinity=False,
                           min_value=-1e12, max_value=1e12)
# Control characters are outside RFC-4180 TEXTDATA, so they stay out of the
# round-trip property; quoting of commas/newlines is covered separately.
safe_text = st.text(
    alphabet=st.characters(codec="utf-8", exclude_characters='",\n\r\t\\',
                           exclude_categories=("Cs", "Cc")),
    min_size=1, max_size=10,
).filter(lambda s: s.strip() and not s.lower().strip() in {"na", "n/a", "nan", "null", "none"}
         and infer_column_type([s]) is ColumnType.TEXT)
cell_dates = st.dates(min_value=datetime.date(1000, 1, 1), max_value=datetime.date(9000, 12, 31))


@st.composite
def typed_table(draw):
    n_rows = draw(st.integers(min_value=1, max_value=6))
    spec = [("t", ColumnType.TEXT), ("n", ColumnType.NUMBER), ("d", ColumnType.DATE)]
    manifest = TableManifest(columns=spec)
    rows = []
    for _ in range(n_rows):
        cells = []
        for name, ctype in spec:
            if draw(st.booleans()):
                cells.append((name, MISSING))
            elif ctype is ColumnType.TEXT:
                cells.append((name, Text(draw(safe_text))))
            elif ctype is ColumnType.NUMBER:
                cells.append((name, Number(draw(finite_numbers))))
            else:
                cells.append((name, Date(draw(cell_dates))))
        rows.append(Row(cells))
    return manifest, rows


class TestRoundTrip:
    @given(typed_table())
    @settings(max_examples=60)
    def test_csv(self, table):
        manifest, rows = table
        emitted = emit_csv(manifest, rows)
        _, parsed = parse_table(emitted.encode(), "csv", manifest)
        assert parsed == rows

    @given(typed_table())
    @settings(max_examples=60)
    def test_jsonl(self, table):
        manifest, rows = table
        emitted = emit_jsonl(rows)
        _, parsed = parse_table(emitted.encode(), "jsonl", manifest)
        assert parsed == rows


def _tiny_tables(k: int, rows_per_table: int = 4) -> list[Table]:
    manifest = TableManifest(columns=[("v", ColumnType.NUMBER)])
    return [
        Table(f"t{i}", manifest, [Row([("v", Number(float(i * 100 + j)))]) for j in range(rows_per_table)])
        for i in range(k)
    ]


class TestSampleEpochRows:
    def test_one_row_per_table(self):
        tables = _tiny_tables(3)
        picked = sample_epoch_rows(tables, rng_seed=0)
        assert len(picked) == 3
        assert {t.name for t, _ in picked} == {"t0", "t1", "t2"}

    def test_single_row_tables_always_give_that_row(self):
        tables = _tiny_tables(2, rows_per_table=1)
        for seed in range(5):
            picked = sample_epoch_rows(tables, seed)
            assert sorted(r.get("v").value for _, r in picked) == [0.0, 100.0]

    def test_deterministic(self):
        tables = _tiny_tables(5)
        a = sample_epoch_rows(tables, 42)
        b = sample_epoch_rows(tables, 42)
        assert [(t.name, r.get("v").value) for t, r in a] == [(t.name, r.get("v").value) for t, r in b]

    def test_empty_input_rejected(self):
        with pytest.raises(ValueError):
            sample_epoch_rows([], 0)
        with pytest.raises(ValueError):
            sample_epoch_rows([Table("e", TableManifest(columns=[("v", ColumnType.NUMBER)]), [])], 0)


class TestSplitTrainTest:
    def test_80_20(self):
        rows = [Row([("v", Number(float(i)))]) for i in range(10)]
        train, test = split_train_test(rows, 0.8, seed=0)
        assert (len(train), len(test)) == (8, 2)

    def test_rounding(self):
        rows = [Row([("v", Number(float(i)))]) for i in range(5)]
        train, test = split_train_test(rows, 0.8, seed=0)
        assert (len(train), len(test)) == (4, 1)

    def test_disjoint_cover(self):
        rows = [Row([("v", Number(float(i)))]) for i in range(17)]
        train, test = split_train_test(rows, 0.66, seed=3)
        ids = sorted(id(r) for r in train + test)
        assert ids == sorted(id(r) for r in rows)

    def test_deterministic(self):
        rows = [Row([("v", Number(float(i)))]) for i in range(9)]
        assert split_train_test(rows, 0.5, 7) == split_train_test(rows, 0.5, 7)

    def test_errors(self):
        rows = [Row([("v", Number(1.0))])]
        with pytest.raises(ValueError):
            split_train_test(rows, 0.8, 0)
        with pytest.raises(ValueError):
            split_train_test(rows * 4, 1.0, 0)


class TestManifest:
    def test_json_roundtrip(self):
        manifest = TableManifest(columns=[("a", ColumnType.NUMBER), ("b", ColumnType.TEXT)],
                                 target="a", task="regression")
        assert TableManifest.from_json_dict(manifest.to_json_dict()) == manifest

    def test_target_must_exist(self):
        with pytest.raises(ManifestError):
            TableManifest(columns=[("a", ColumnType.NUMBER)], target="zz", task="regression")

    def test_empty_name_rejected(self):
        with pytest.raises(ManifestError):
            TableManifest(columns=[("", ColumnType.TEXT)])
