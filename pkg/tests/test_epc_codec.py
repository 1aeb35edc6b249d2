from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gimbal_twin.epc_codec import (
    ACK_LEN, EPC_BITS, EPC_REPLY_LEN, PC_SENSOR, QUERY_LEN, Ack, CrcMismatch, EpcReply,
    MalformedPayload, Query, QueryRep, Rn16Reply, SensorPayload, TruncatedFrame, UnknownOpcode,
    bits_to_hex, bits_to_int, bytes_to_bits, crc5, crc16, crc16_bitwise, decode_command,
    decode_reply, decode_sensor_epc, encode_command, encode_reply, encode_sensor_epc, format_vectors,
    hex_to_bits, int_to_bits, parse_vectors, sensor_reply)
from gimbal_twin.errors import CodecError

from .oracles import crc5_oracle, crc16_oracle

VECTORS = Path(__file__).resolve().parents[1] / "vectors" / "epc_vectors.txt"

bitstrings = st.lists(st.integers(0, 1), min_size=1, max_size=200).map(tuple)
codes12 = st.integers(-2048, 2047)
payloads = st.builds(SensorPayload, st.tuples(codes12, codes12, codes12),
                     st.tuples(codes12, codes12, codes12), st.integers(0, 255), st.integers(0, 255))


# ---- catalogue check values ----

def test_crc16_check_value():
    # CRC-16/GENIBUS catalogue entry: check("123456789") = 0xD64E
    assert crc16(bytes_to_bits(b"123456789")) == 0xD64E


def test_crc5_check_value():
    # CRC-5/EPC-C1G2 catalogue entry: check("123456789") = 0x00
    assert crc5(bytes_to_bits(b"123456789")) == 0x00


def test_crc16_appended_frame_leaves_residue():
    msg = bytes_to_bits(b"sensor")
    frame = msg + int_to_bits(crc16(msg), 16)
    # the complemented CRC leaves the fixed residue 0x1D0F in the register
    assert crc16(frame) ^ 0xFFFF == 0x1D0F


# ---- oracles ----

def test_crc_matches_long_division_on_random_messages():
    rng = np.random.default_rng(2024)
    for _ in range(2000):
        n = int(rng.integers(1, 160))
        bits = tuple(int(b) for b in rng.integers(0, 2, n))
        assert crc5(bits) == crc5_oracle(bits)
        assert crc16(bits) == crc16_oracle(bits)
        assert crc16_bitwise(bits) == crc16(bits)


@given(bitstrings)
def test_table_and_bitwise_crc16_agree(bits):
    assert crc16(bits) == crc16_bitwise(bits) == crc16_oracle(bits)


@given(bitstrings)
def test_crc5_oracle_property(bits):
    assert crc5(bits) == crc5_oracle(bits)


# ---- bit helpers ----

@given(st.integers(0, 2**64 - 1), st.integers(1, 64))
def test_int_bits_roundtrip(value, width):
    value &= (1 << width) - 1
    assert bits_to_int(int_to_bits(value, width)) == value
    assert len(int_to_bits(value, width)) == width


@given(st.lists(st.integers(0, 1), max_size=70).map(tuple))
def test_hex_token_roundtrip(bits):
    assert hex_to_bits(bits_to_hex(bits)) == bits


def test_hex_token_is_left_aligned():
    assert bits_to_hex((1, 0, 1)) == "3:a"
    assert bits_to_hex(int_to_bits(0xBEEF, 16)) == "16:beef"


# ---- payload ----

def test_payload_layout_known_bits():
    bits = encode_sensor_epc(SensorPayload(accel=(1, -1, 0)))
    assert bits_to_hex(bits) == "96:001fff000000000000000000"


def test_payload_full_scale_layout():
    p = SensorPayload(accel=(2047, -2048, 1024), mag=(-1, 5, -300), counter=255, status=3)
    assert bits_to_hex(encode_sensor_epc(p)) == "96:7ff800400fff005ed4ff0300"


@given(payloads)
def test_payload_roundtrip_property(p):
    bits = encode_sensor_epc(p)
    assert len(bits) == EPC_BITS
    assert decode_sensor_epc(bits) == p


def test_payload_roundtrip_bulk():
    rng = np.random.default_rng(7)
    codes = rng.integers(-2048, 2048, size=(100_000, 6))
    bytes_ = rng.integers(0, 256, size=(100_000, 2))
    for c, b in zip(codes, bytes_):
        p = SensorPayload(tuple(int(v) for v in c[:3]), tuple(int(v) for v in c[3:]), int(b[0]), int(b[1]))
        assert decode_sensor_epc(encode_sensor_epc(p)) == p


def test_payload_rejects_out_of_range_codes():
    with pytest.raises(ValueError):
        encode_sensor_epc(SensorPayload(accel=(2048, 0, 0)))
    with pytest.raises(ValueError):
        encode_sensor_epc(SensorPayload(counter=256))


def test_reserved_byte_must_be_zero():
    bits = list(encode_sensor_epc(SensorPayload()))
    bits[-1] = 1
    with pytest.raises(MalformedPayload):
        decode_sensor_epc(bits)


def test_short_payload_is_truncated():
    with pytest.raises(TruncatedFrame):
        decode_sensor_epc(encode_sensor_epc(SensorPayload())[:95])


# ---- commands ----

@given(st.integers(0, 15), st.integers(0, 1), st.integers(0, 3), st.integers(0, 1),
       st.integers(0, 3), st.integers(0, 3), st.integers(0, 1))
def test_query_roundtrip(q, dr, m, trext, sel, session, target):
    cmd = Query(q=q, dr=dr, m=m, trext=trext, sel=sel, session=session, target=target)
    bits = encode_command(cmd)
    assert len(bits) == QUERY_LEN
    assert decode_command(bits) == cmd
    assert crc5(bits[:17]) == bits_to_int(bits[17:])


@given(st.integers(0, 0xFFFF))
def test_ack_roundtrip(rn16):
    bits = encode_command(Ack(rn16))
    assert len(bits) == ACK_LEN
    assert decode_command(bits) == Ack(rn16)


def test_queryrep_roundtrip():
    assert decode_command(encode_command(QueryRep(session=2))) == QueryRep(session=2)


def test_query_rejects_bad_q():
    with pytest.raises(ValueError):
        Query(q=16)


def test_query_single_flip_never_decodes_as_a_query():
    bits = list(encode_command(Query(q=3)))
    for i in range(QUERY_LEN):
        flipped = bits.copy()
        flipped[i] ^= 1
        try:
            cmd = decode_command(flipped)
        except CodecError:
            continue
        # opcode flips can spell a shorter valid command, but never a Query
        assert not isinstance(cmd, Query)


def test_unknown_opcodes():
    with pytest.raises(UnknownOpcode):
        decode_command((1, 1, 0, 0))
    with pytest.raises(UnknownOpcode):
        decode_command((1, 0, 0, 1) + (0,) * 18)


def test_truncated_commands():
    with pytest.raises(TruncatedFrame):
        decode_command((1,))
    with pytest.raises(TruncatedFrame):
        decode_command(encode_command(Ack(5))[:10])
    with pytest.raises(TruncatedFrame):
        decode_command(encode_command(Query())[:20])


@given(st.lists(st.integers(0, 1), max_size=64))
def test_command_decoder_never_panics(bits):
    try:
        decode_command(bits)
    except CodecError:
        pass


# ---- replies ----

@given(payloads)
def test_epc_reply_roundtrip(p):
    bits = encode_reply(sensor_reply(p))
    assert len(bits) == EPC_REPLY_LEN
    r = decode_reply(bits, "epc")
    assert r.pc == PC_SENSOR
    assert decode_sensor_epc(r.epc) == p


def test_pc_word_encodes_six_words():
    assert PC_SENSOR >> 11 == 6
    assert PC_SENSOR == 0x3000


def test_rn16_reply_roundtrip():
    assert decode_reply(encode_reply(Rn16Reply(0xABCD)), "rn16") == Rn16Reply(0xABCD)


def test_epc_reply_trailing_bits_ignored():
    bits = encode_reply(sensor_reply(SensorPayload(counter=9)))
    assert decode_reply(bits + (1, 0, 1), "epc") == decode_reply(bits, "epc")


def test_epc_reply_length_mismatch_rejected():
    with pytest.raises(ValueError):
        encode_reply(EpcReply(epc=(0,) * 80))


def _decode_sensor_frame(bits):
    return decode_sensor_epc(decode_reply(bits, "epc").epc)


def test_single_bit_flip_detection():
    rng = np.random.default_rng(11)
    for _ in range(10_000):
        c = rng.integers(-2048, 2048, 6)
        p = SensorPayload(tuple(int(v) for v in c[:3]), tuple(int(v) for v in c[3:]),
                          int(rng.integers(0, 256)), int(rng.integers(0, 4)))
        bits = list(encode_reply(sensor_reply(p)))
        i = int(rng.integers(0, len(bits)))
        bits[i] ^= 1
        with pytest.raises(CodecError):
            _decode_sensor_frame(bits)


@given(st.lists(st.integers(0, 1), max_size=200))
def test_reply_decoder_never_panics(bits):
    for kind in ("rn16", "epc"):
        try:
            decode_reply(bits, kind)
        except CodecError:
            pass


# ---- golden vectors ----

def test_golden_vectors_file_is_byte_stable():
    assert VECTORS.read_text() == format_vectors()


def test_golden_vectors_parse_and_check():
    vectors = {name: (i, o) for name, i, o in parse_vectors(VECTORS.read_text())}
    i, o = vectors["crc16_check_123456789"]
    assert bits_to_int(o) == crc16_oracle(i) == 0xD64E
    i, o = vectors["query_q0"]
    assert o[:17] == i and bits_to_int(o[17:]) == crc5_oracle(i)
    i, o = vectors["epc_accel_p1_m1_0"]
    assert bits_to_int(o[-16:]) == crc16_oracle(o[:-16])
    assert decode_sensor_epc(decode_reply(o, "epc").epc) == SensorPayload(accel=(1, -1, 0))


def test_payload_bit_flip_is_a_crc_mismatch():
    bits = list(encode_reply(sensor_reply(SensorPayload(accel=(5, 6, 7)))))
    bits[40] ^= 1
    with pytest.raises(CrcMismatch):
        decode_reply(bits, "epc")
