import json

import pytest
from hypothesis import given, settings, strategies as st

from gridforge.sources import (Dialect, DescriptorError, NumberParseError, RawTable, TableParseError,
                               descriptor_from_dict, load_descriptor, parse_number, parse_table, serialize_table)

GERMAN = Dialect(delimiter=";", decimal_separator=",", thousands_separator=".", encoding="latin-1",
                 na_tokens={"n/a", ""})


def write_desc(tmp_path, doc, name="d.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc), encoding="utf-8")
    return p


def test_minimal_descriptor(tmp_path):
    d = load_descriptor(write_desc(tmp_path, {"id": "de_tso_a", "origin": "a.csv", "dialect": {"delimiter": ";"}}))
    assert d.id == "de_tso_a"
    assert d.dialect.delimiter == ";"
    assert d.timezone == "UTC"
    assert d.resolve_origin() == str(tmp_path / "a.csv")


def test_delimiter_equals_decimal(tmp_path):
    p = write_desc(tmp_path, {"id": "x", "origin": "a", "dialect": {"delimiter": ",", "decimal_separator": ","}})
    with pytest.raises(DescriptorError, match="delimiter equals decimal separator"):
        load_descriptor(p)


def test_timezones(tmp_path):
    ok = load_descriptor(write_desc(tmp_path, {"id": "x", "origin": "a", "timezone": "Europe/Berlin"}))
    assert ok.timezone == "Europe/Berlin"
    with pytest.raises(DescriptorError, match="Mars/Olympus"):
        load_descriptor(write_desc(tmp_path, {"id": "x", "origin": "a", "timezone": "Mars/Olympus"}))


def test_unknown_keys_fatal(tmp_path):
    with pytest.raises(DescriptorError, match="unknown keys"):
        load_descriptor(write_desc(tmp_path, {"id": "x", "origin": "a", "colour": "red"}))
    with pytest.raises(DescriptorError, match="unknown keys"):
        load_descriptor(write_desc(tmp_path, {"id": "x", "origin": "a", "dialect": {"quote": "'"}}))


def test_syntax_error_has_line_context(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"id": "x",\n "origin": }', encoding="utf-8")
    with pytest.raises(DescriptorError, match="line 2"):
        load_descriptor(p)


def test_duplicate_canonical_columns():
    with pytest.raises(DescriptorError, match="duplicate canonical"):
        descriptor_from_dict({"id": "x", "origin": "a", "column_map": [["a", "load"], ["b", "load"]]})


def test_empty_id_rejected():
    with pytest.raises(DescriptorError):
        descriptor_from_dict({"id": "", "origin": "a"})


def test_thousands_equals_decimal():
    with pytest.raises(DescriptorError):
        Dialect(delimiter=";", decimal_separator=",", thousands_separator=",")


def test_unsupported_encoding():
    with pytest.raises(DescriptorError):
        Dialect(encoding="utf-16")


def test_parse_keeps_strings():
    t = parse_table(b"a;b\n1,5;2\n", Dialect(delimiter=";", decimal_separator=","))
    assert t.columns == ("a", "b")
    assert t.rows == [("1,5", "2")]


def test_na_tokens():
    t = parse_table(b"a;b\nn/a;0\n", GERMAN)
    assert t.rows == [(None, "0")]


def test_ragged_row_index():
    with pytest.raises(TableParseError) as err:
        parse_table(b"a,b,c\n1,2\n", Dialect())
    assert err.value.row == 1


def test_undecodable_offset():
    with pytest.raises(TableParseError) as err:
        parse_table(b"a,b\n1,\xff\n", Dialect())
    assert err.value.offset == 6


def test_column_map_renames_and_drops():
    t = parse_table(b"Zeit,Last,Kommentar\n1,2,x\n", Dialect(), [["Last", "load"], ["Zeit", "time"]])
    assert t.columns == ("load", "time")
    assert t.rows == [("2", "1")]


def test_mapped_column_missing():
    with pytest.raises(TableParseError, match="missing"):
        parse_table(b"a,b\n1,2\n", Dialect(), [["c", "x"]])


def test_preamble_rows():
    t = parse_table(b"Report 2017\na,b\n1,2\n", Dialect(header_rows=2))
    assert t.columns == ("a", "b") and len(t.rows) == 1


def test_no_header_positional():
    t = parse_table(b"1,2\n3,4\n", Dialect(header_rows=0))
    assert t.columns == ("0", "1") and len(t.rows) == 2


def test_latin1_header():
    data = "Übertragungsnetzlast;x\n1;2\n".encode("latin-1")
    t = parse_table(data, GERMAN)
    assert t.columns[0] == "Übertragungsnetzlast"


def test_raw_table_rectangular():
    with pytest.raises(TableParseError):
        RawTable(("a", "b"), [("1",)])


@pytest.mark.parametrize("cell,expected", [("1.234,5", 1234.5), ("0", 0.0), ("-3,25", -3.25), ("1.000.000", 1e6)])
def test_parse_number_german(cell, expected):
    assert parse_number(cell, GERMAN) == expected


def test_zero_is_not_na():
    assert parse_number("0", Dialect()) == 0.0
    assert parse_number(None, Dialect()) is None


@pytest.mark.parametrize("cell", ["12a", "", "1,5", "nan", "inf", "--1", "1e"])
def test_parse_number_errors(cell):
    with pytest.raises(NumberParseError) as err:
        parse_number(cell, Dialect())
    assert err.value.cell == cell


def test_dot_rejected_under_comma_decimal_without_thousands():
    with pytest.raises(NumberParseError):
        parse_number("1.5", Dialect(delimiter=";", decimal_separator=","))


# NUL cannot appear in CSV text at all
cells = st.one_of(st.none(), st.text(alphabet=st.characters(blacklist_categories=("Cs",), blacklist_characters="\x00"),
                                    max_size=6))


@st.composite
def tables(draw):
    width = draw(st.integers(1, 4))
    names = draw(st.lists(st.text(alphabet="abcxyz_", min_size=1, max_size=5), min_size=width, max_size=width,
                          unique=True))
    rows = draw(st.lists(st.tuples(*[cells] * width), max_size=6))
    return RawTable(tuple(names), rows)


@settings(max_examples=200)
@given(tables(), st.sampled_from([",", ";", "\t", "|"]))
def test_serialize_round_trip(table, delim):
    dialect = Dialect(delimiter=delim, na_tokens={"NA"})
    # "NA" is the NA token, so a literal "NA" cell cannot survive; blank-only rows are skipped on read
    rows = [r for r in table.rows if "NA" not in r]
    rows = [r for r in rows if not (len(r) == 1 and r[0] == "")]
    table = RawTable(table.columns, rows)
    back = parse_table(serialize_table(table, dialect), dialect)
    assert back.columns == table.columns
    assert back.rows == table.rows


@given(st.lists(st.tuples(st.integers(0, 10**6), st.integers(0, 99)), max_size=20))
def test_row_count_total(values):
    body = "\n".join(f"{a},{b}" for a, b in values)
    t = parse_table(("x,y\n" + body + ("\n" if body else "")).encode(), Dialect())
    assert len(t.rows) == len(values)


@given(st.floats(allow_nan=False, allow_infinity=False, width=64))
def test_number_round_trip_repr(x):
    assert parse_number(repr(x), Dialect()) == x
