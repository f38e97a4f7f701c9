import gzip
import os

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bulkscan.forensic_path import (
    ForensicPath,
    PathParseError,
    PathResolveError,
    format_path,
    hexdump,
    parse_path,
    path_print,
)

from helpers import gz, make_zip, zip_member_data_offset


def test_parse_two_segment_path():
    p = parse_path("456536-ZIP-1255117")
    assert p.segments == [(456536, "ZIP"), (1255117, None)]


def test_parse_root():
    assert parse_path("0").segments == [(0, None)]


def test_parse_nested_round_trip():
    p = parse_path("100-ZIP-7-GZIP-3")
    assert p.segments == [(100, "ZIP"), (7, "GZIP"), (3, None)]
    assert format_path(p) == "100-ZIP-7-GZIP-3"


def test_format_fig1_path():
    p = ForensicPath.from_segments([(456596, "ZIP"), (1255117, None)])
    assert format_path(p) == "456596-ZIP-1255117"
    assert format_path(ForensicPath.from_segments([(0, None)])) == "0"


@pytest.mark.parametrize(
    "text, position",
    [
        ("", 0),
        ("abc", 0),
        ("12-zip-3", 3),
        ("12-ZIP-", 6),
        ("12-ZIP", 3),
        ("007", 0),
        ("1-ZIP-01", 6),
        (" 1", 0),
        ("1--2", 2),
        ("1-Z!P-2", 2),
    ],
)
def test_parse_rejects_malformed(text, position):
    with pytest.raises(PathParseError) as ei:
        parse_path(text)
    assert ei.value.position == position


labels = st.from_regex(r"[A-Z][A-Z0-9]{0,6}", fullmatch=True)
paths = st.builds(
    lambda stream, off: ForensicPath(tuple(stream), off),
    st.lists(st.tuples(st.integers(0, 10**12), labels), max_size=7),
    st.integers(0, 10**12),
)


@settings(max_examples=1000)
@given(paths)
def test_parse_format_identity(p):
    assert parse_path(format_path(p)) == p


@given(paths)
def test_format_parse_is_canonical(p):
    text = format_path(p)
    assert format_path(parse_path(text)) == text


def test_extend_and_advance():
    p = ForensicPath().advance(456596).extend("ZIP").advance(1255117)
    assert str(p) == "456596-ZIP-1255117"
    assert p.depth == 1
    with pytest.raises(ValueError):
        p.extend("zip")


def test_print_plain(tmp_path):
    f = tmp_path / "img"
    f.write_bytes(b"abcdefghijklmnop")
    assert path_print(f, "0", 16) == b"abcdefghijklmnop"
    assert path_print(f, "10", 100) == b"klmnop"


def test_print_zip_member(tmp_path):
    archive = make_zip([("hello.txt", b"HELLO")])
    dataoff = zip_member_data_offset(archive, "hello.txt")
    f = tmp_path / "img"
    f.write_bytes(archive)
    assert path_print(f, f"{dataoff}-ZIP-0", 5) == b"HELLO"


def test_print_zip_stored_member(tmp_path):
    import zipfile

    archive = make_zip([("s.txt", b"HELLO stored")], method=zipfile.ZIP_STORED)
    dataoff = zip_member_data_offset(archive, "s.txt")
    f = tmp_path / "img"
    f.write_bytes(b"\x00" * 33 + archive)
    assert path_print(f, f"{dataoff + 33}-ZIP-6", 6) == b"stored"


def test_print_nested(tmp_path):
    inner = gz(b"0123456789 inner text")
    archive = make_zip([("in.gz", inner)])
    pre = os.urandom(0) + b"\x00" * 100
    f = tmp_path / "img"
    f.write_bytes(pre + archive)
    dataoff = 100 + zip_member_data_offset(archive, "in.gz")
    assert path_print(f, f"{dataoff}-ZIP-0-GZIP-11", 5) == b"inner"


def test_print_errors(tmp_path):
    f = tmp_path / "img"
    f.write_bytes(b"\x00" * 10 + gzip.compress(b"hello"))
    with pytest.raises(PathResolveError, match="unknown decoder"):
        path_print(f, "10-RAR-0", 4)
    with pytest.raises(PathResolveError, match="segment 0"):
        path_print(f, "3-GZIP-0", 4)
    with pytest.raises(PathResolveError, match="segment 1"):
        path_print(f, "10-GZIP-99", 4)
    with pytest.raises(PathResolveError):
        path_print(f, "5000", 4)
    assert path_print(f, "10-GZIP-1", 100) == b"ello"


def test_print_directory_evidence(tmp_path):
    d = tmp_path / "ev"
    (d / "a").mkdir(parents=True)
    (d / "a" / "x.img").write_bytes(b"first file")
    (d / "b.img").write_bytes(b"second")
    # files are laid end to end in sorted order: a/x.img then b.img
    assert path_print(d, "0", 5) == b"first"
    assert path_print(d, "10", 6) == b"second"
    assert path_print(d, "12", 100) == b"cond"


def test_hexdump_one_line():
    text = hexdump(b"abcdefghijklmnop")
    assert text.count("\n") == 0
    assert text.startswith("00000000  61 62 63 64 65 66 67 68  69 6a")
    assert text.endswith("|abcdefghijklmnop|")
