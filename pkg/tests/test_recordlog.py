"""Persistence substrate and canonical encodings."""

import secrets

import pytest

from agent_esim.errors import StorageFailure, WireFormatError
from agent_esim.recordlog import RecordLog, iter_records, read_frames, write_frames
from agent_esim.wire import (
    decode_fields,
    decode_timestamp,
    encode_fields,
    encode_timestamp,
    request_digest,
    scan_for_secrets,
)


def test_record_log_round_trip(tmp_path):
    log = RecordLog(tmp_path / "x.log", "TEST/1")
    log.append({"a": 1})
    log.append({"b": [1, 2]})
    assert list(log.records()) == [{"a": 1}, {"b": [1, 2]}]
    log.close()
    reopened = RecordLog(tmp_path / "x.log", "TEST/1")
    reopened.append({"c": None})
    assert len(list(reopened.records())) == 3
    reopened.close()


def test_record_log_rejects_wrong_header(tmp_path):
    log = RecordLog(tmp_path / "x.log", "TEST/1")
    log.close()
    with pytest.raises(StorageFailure):
        RecordLog(tmp_path / "x.log", "OTHER/9")


def test_record_log_append_after_close_fails(tmp_path):
    log = RecordLog(tmp_path / "x.log", "TEST/1")
    log.close()
    with pytest.raises(StorageFailure):
        log.append({"x": 1})


def test_frame_tools_round_trip(tmp_path):
    path = tmp_path / "y.log"
    write_frames(path, "TEST/1", [b"one", b"two"])
    header, frames = read_frames(path)
    assert header == "TEST/1" and frames == [b"one", b"two"]


def test_truncated_frame_detected(tmp_path):
    path = tmp_path / "z.log"
    write_frames(path, "TEST/1", [b"complete"])
    raw = path.read_bytes()
    path.write_bytes(raw[:-3])  # rip off part of the last frame
    with pytest.raises(StorageFailure):
        read_frames(path)


def test_iter_records_rejects_non_json(tmp_path):
    path = tmp_path / "w.log"
    write_frames(path, "TEST/1", [b"\xff\xfe"])
    with pytest.raises(StorageFailure):
        list(iter_records(path, "TEST/1"))


def test_field_framing_round_trip():
    fields = [b"", b"a", secrets.token_bytes(40)]
    assert decode_fields(encode_fields(*fields)) == fields
    assert decode_fields(encode_fields(*fields), expected=3) == fields
    with pytest.raises(WireFormatError):
        decode_fields(encode_fields(b"x"), expected=2)
    with pytest.raises(WireFormatError):
        decode_fields(b"\x00\x00\x00\x05ab")  # length overruns buffer


def test_timestamp_codec():
    assert decode_timestamp(encode_timestamp(1234.567891)) == pytest.approx(
        1234.567891, abs=1e-6
    )
    with pytest.raises(WireFormatError):
        decode_timestamp(b"\x00" * 7)
    with pytest.raises(WireFormatError):
        encode_timestamp(-1.0)


def test_request_digest_deterministic_and_order_insensitive():
    a = request_digest("sign", "p-1", {"x": b"1", "y": b"2"})
    b = request_digest("sign", "p-1", {"y": b"2", "x": b"1"})
    assert a == b and len(a) == 32
    assert request_digest("sign", "p-2", {"x": b"1", "y": b"2"}) != a
    assert request_digest("status", "p-1", {"x": b"1", "y": b"2"}) != a


def test_scan_for_secrets_finds_raw_and_hex():
    secret = secrets.token_bytes(16)
    assert scan_for_secrets(b"prefix" + secret + b"suffix", [secret]) == [secret]
    assert scan_for_secrets(secret.hex().encode(), [secret]) == [secret]
    assert scan_for_secrets(secret.hex().upper().encode(), [secret]) == [secret]
    assert scan_for_secrets(b"clean payload", [secret]) == []
