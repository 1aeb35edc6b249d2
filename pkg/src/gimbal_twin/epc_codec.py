"""Bit-exact framing for the inventory exchange Query -> RN16 -> ACK -> PC/EPC/CRC-16.

Bit sequences are tuples of 0/1 ints, most significant bit first everywhere.
Integers packed into sequences are written MSB-first, and multi-field
layouts are concatenated in declaration order. The golden vectors file and
every encoder in this module follow that single convention.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

from .errors import CrcMismatch, MalformedPayload, TruncatedFrame, UnknownOpcode

Bits = tuple[int, ...]

CRC5_POLY = 0x09  # x^5 + x^3 + 1
CRC5_PRESET = 0b01001
CRC16_POLY = 0x1021  # x^16 + x^12 + x^5 + 1
CRC16_PRESET = 0xFFFF
# register value left after running a valid message plus its complemented CRC
CRC16_RESIDUE = 0x1D0F

QUERY_CODE = (1, 0, 0, 0)
QUERYREP_CODE = (0, 0)
ACK_CODE = (0, 1)

QUERY_LEN = 22
QUERYREP_LEN = 4
ACK_LEN = 18
RN16_LEN = 16

EPC_WORDS = 6
EPC_BITS = 16 * EPC_WORDS
PC_SENSOR = EPC_WORDS << 11  # length field in the top five bits, all flags clear
EPC_REPLY_LEN = 16 + EPC_BITS + 16


def int_to_bits(value: int, width: int) -> Bits:
    if width < 0:
        raise ValueError("width must be non-negative")
    if width == 0:
        return ()
    return tuple(map(int, format(value & ((1 << width) - 1), f"0{width}b")))


_ASCII_BITS = bytes.maketrans(b"\x00\x01", b"01")


def bits_to_int(bits: Iterable[int]) -> int:
    s = bytes(bits).translate(_ASCII_BITS)
    return int(s, 2) if s else 0


def bits_to_hex(bits: Sequence[int]) -> str:
    """``<nbits>:<hex>``; the value is left-aligned and zero-padded to a whole nibble."""
    n = len(bits)
    pad = (-n) % 4
    digits = (n + pad) // 4
    if digits == 0:
        return "0:"
    return f"{n}:{bits_to_int(tuple(bits) + (0,) * pad):0{digits}x}"


def hex_to_bits(token: str) -> Bits:
    n_str, _, hex_str = token.partition(":")
    n = int(n_str)
    if n == 0:
        return ()
    pad = (-n) % 4
    return int_to_bits(int(hex_str, 16), n + pad)[:n]


def bytes_to_bits(data: bytes) -> Bits:
    return tuple(b for byte in data for b in int_to_bits(byte, 8))


# -- CRCs ---------------------------------------------------------------------

def crc5(bits: Sequence[int]) -> int:
    """CRC-5 as used on Query: preset 01001, MSB first, no final complement."""
    reg = CRC5_PRESET
    for b in bits:
        fb = ((reg >> 4) & 1) ^ (b & 1)
        reg = (reg << 1) & 0x1F
        if fb:
            reg ^= CRC5_POLY
    return reg


def crc16_register(bits: Sequence[int], preset: int = CRC16_PRESET) -> int:
    """Raw CRC-16 shift register after clocking ``bits`` in, bit-serially."""
    reg = preset
    for b in bits:
        fb = ((reg >> 15) & 1) ^ (b & 1)
        reg = (reg << 1) & 0xFFFF
        if fb:
            reg ^= CRC16_POLY
    return reg


def crc16_bitwise(bits: Sequence[int]) -> int:
    return crc16_register(bits) ^ 0xFFFF


def _make_crc16_table() -> tuple[int, ...]:
    table = []
    for byte in range(256):
        reg = byte << 8
        for _ in range(8):
            reg = ((reg << 1) ^ CRC16_POLY) if reg & 0x8000 else (reg << 1)
            reg &= 0xFFFF
        table.append(reg)
    return tuple(table)


_CRC16_TABLE = _make_crc16_table()


def crc16_table_register(bits: Sequence[int], preset: int = CRC16_PRESET) -> int:
    """Same register as :func:`crc16_register`, a byte at a time through a table.

    A trailing partial byte is clocked bit by bit.
    """
    reg = preset
    n_full = len(bits) - len(bits) % 8
    if n_full:
        data = bits_to_int(bits[:n_full]).to_bytes(n_full // 8, "big")
        for byte in data:
            reg = ((reg << 8) & 0xFFFF) ^ _CRC16_TABLE[((reg >> 8) ^ byte) & 0xFF]
    return crc16_register(bits[n_full:], preset=reg)


def crc16(bits: Sequence[int]) -> int:
    """Ones-complemented CRC-16 (preset 0xFFFF, MSB first), table driven."""
    return crc16_table_register(bits) ^ 0xFFFF


# -- sensor payload -----------------------------------------------------------

def _to_twos(value: int, width: int) -> int:
    lo, hi = -(1 << (width - 1)), (1 << (width - 1)) - 1
    if not lo <= value <= hi:
        raise ValueError(f"{value} does not fit in {width}-bit two's complement")
    return value & ((1 << width) - 1)


def _from_twos(raw: int, width: int) -> int:
    return raw - (1 << width) if raw & (1 << (width - 1)) else raw


@dataclass(frozen=True)
class SensorPayload:
    """Accelerometer and magnetometer codes carried in the 96-bit EPC.

    Layout, MSB first: ax ay az mx my mz (12-bit two's complement each),
    counter, status, reserved (8 bits each).
    """

    accel: tuple[int, int, int] = (0, 0, 0)
    mag: tuple[int, int, int] = (0, 0, 0)
    counter: int = 0
    status: int = 0
    reserved: int = 0


def encode_sensor_epc(p: SensorPayload) -> Bits:
    out: list[int] = []
    for code in (*p.accel, *p.mag):
        out.extend(int_to_bits(_to_twos(int(code), 12), 12))
    for byte in (p.counter, p.status, p.reserved):
        if not 0 <= byte <= 0xFF:
            raise ValueError(f"byte field out of range: {byte}")
        out.extend(int_to_bits(byte, 8))
    return tuple(out)


def decode_sensor_epc(bits: Sequence[int]) -> SensorPayload:
    if len(bits) < EPC_BITS:
        raise TruncatedFrame(f"sensor EPC needs {EPC_BITS} bits, got {len(bits)}")
    codes = [_from_twos(bits_to_int(bits[12 * i:12 * i + 12]), 12) for i in range(6)]
    counter = bits_to_int(bits[72:80])
    status = bits_to_int(bits[80:88])
    reserved = bits_to_int(bits[88:96])
    if reserved != 0:
        raise MalformedPayload(f"reserved byte is {reserved:#04x}, expected 0")
    return SensorPayload(tuple(codes[:3]), tuple(codes[3:]), counter, status, 0)


# -- reader commands ----------------------------------------------------------

@dataclass(frozen=True)
class Query:
    q: int = 0
    dr: int = 0
    m: int = 0
    trext: int = 0
    sel: int = 0
    session: int = 0
    target: int = 0

    def __post_init__(self):
        if not 0 <= self.q <= 15:
            raise ValueError(f"Q must be in [0, 15], got {self.q}")


@dataclass(frozen=True)
class QueryRep:
    session: int = 0


@dataclass(frozen=True)
class Ack:
    rn16: int


ReaderCommand = Union[Query, QueryRep, Ack]


def _query_body(c: Query) -> Bits:
    return (QUERY_CODE + int_to_bits(c.dr, 1) + int_to_bits(c.m, 2)
            + int_to_bits(c.trext, 1) + int_to_bits(c.sel, 2)
            + int_to_bits(c.session, 2) + int_to_bits(c.target, 1)
            + int_to_bits(c.q, 4))


def encode_command(c: ReaderCommand) -> Bits:
    if isinstance(c, Query):
        body = _query_body(c)
        return body + int_to_bits(crc5(body), 5)
    if isinstance(c, QueryRep):
        return QUERYREP_CODE + int_to_bits(c.session, 2)
    if isinstance(c, Ack):
        return ACK_CODE + int_to_bits(c.rn16, 16)
    raise TypeError(f"not a reader command: {c!r}")


def _need(bits: Sequence[int], n: int, what: str) -> None:
    if len(bits) < n:
        raise TruncatedFrame(f"{what} needs {n} bits, got {len(bits)}")


def decode_command(bits: Sequence[int]) -> ReaderCommand:
    """Decode one command from the head of ``bits``; trailing bits are ignored."""
    bits = tuple(bits)
    _need(bits, 2, "command code")
    head = bits[:2]
    if head == QUERYREP_CODE:
        _need(bits, QUERYREP_LEN, "QueryRep")
        return QueryRep(session=bits_to_int(bits[2:4]))
    if head == ACK_CODE:
        _need(bits, ACK_LEN, "ACK")
        return Ack(rn16=bits_to_int(bits[2:18]))
    if head == (1, 0):
        _need(bits, 4, "command code")
        if bits[:4] != QUERY_CODE:
            raise UnknownOpcode(f"unsupported command code {''.join(map(str, bits[:4]))}")
        _need(bits, QUERY_LEN, "Query")
        body, crc = bits[:17], bits_to_int(bits[17:22])
        if crc5(body) != crc:
            raise CrcMismatch(f"Query CRC-5 {crc:#04x} != {crc5(body):#04x}")
        f = bits_to_int
        return Query(dr=f(body[4:5]), m=f(body[5:7]), trext=f(body[7:8]),
                     sel=f(body[8:10]), session=f(body[10:12]),
                     target=f(body[12:13]), q=f(body[13:17]))
    raise UnknownOpcode(f"unsupported command code prefix {''.join(map(str, head))}")


# -- tag replies --------------------------------------------------------------

@dataclass(frozen=True)
class Rn16Reply:
    rn16: int


@dataclass(frozen=True)
class EpcReply:
    epc: Bits
    pc: int = PC_SENSOR
    crc16: int = field(default=-1)

    def __post_init__(self):
        if self.crc16 < 0:
            object.__setattr__(self, "crc16", crc16(int_to_bits(self.pc, 16) + tuple(self.epc)))


TagReply = Union[Rn16Reply, EpcReply]


def encode_reply(r: TagReply) -> Bits:
    if isinstance(r, Rn16Reply):
        return int_to_bits(r.rn16, 16)
    if isinstance(r, EpcReply):
        words = r.pc >> 11
        if len(r.epc) != 16 * words:
            raise ValueError(f"PC declares {words} words but EPC has {len(r.epc)} bits")
        return int_to_bits(r.pc, 16) + tuple(r.epc) + int_to_bits(r.crc16, 16)
    raise TypeError(f"not a tag reply: {r!r}")


def decode_reply(bits: Sequence[int], expect: str) -> TagReply:
    """Decode a tag reply of the kind the reader is waiting for ("rn16" or "epc").

    Only the declared frame length is read; anything after it is ignored.
    """
    bits = tuple(bits)
    if expect == "rn16":
        _need(bits, RN16_LEN, "RN16")
        return Rn16Reply(bits_to_int(bits[:16]))
    if expect == "epc":
        _need(bits, 16, "PC word")
        pc = bits_to_int(bits[:16])
        n_epc = 16 * (pc >> 11)
        total = 16 + n_epc + 16
        _need(bits, total, "PC/EPC/CRC-16 block")
        crc = bits_to_int(bits[16 + n_epc:total])
        if crc16_table_register(bits[:total]) != CRC16_RESIDUE:
            raise CrcMismatch(f"EPC block CRC-16 {crc:#06x} does not check")
        return EpcReply(epc=bits[16:16 + n_epc], pc=pc, crc16=crc)
    raise ValueError(f"unknown reply kind {expect!r}")


def sensor_reply(p: SensorPayload) -> EpcReply:
    return EpcReply(epc=encode_sensor_epc(p))


# -- golden vectors -----------------------------------------------------------

def golden_vectors() -> list[tuple[str, Bits, Bits]]:
    """Named (input, output) pairs frozen into ``vectors/epc_vectors.txt``."""
    q0 = Query(q=0)
    q4 = Query(q=4, session=1)
    check = bytes_to_bits(b"123456789")
    zeros22 = (0,) * 22
    accel_pm = SensorPayload(accel=(1, -1, 0))
    full = SensorPayload(accel=(2047, -2048, 1024), mag=(-1, 5, -300), counter=255, status=3)
    vectors = [
        ("crc5_query_q0", _query_body(q0), int_to_bits(crc5(_query_body(q0)), 5)),
        ("crc5_zeros22", zeros22, int_to_bits(crc5(zeros22), 5)),
        ("crc16_check_123456789", check, int_to_bits(crc16(check), 16)),
        ("query_q0", _query_body(q0), encode_command(q0)),
        ("query_q4_s1", _query_body(q4), encode_command(q4)),
        ("queryrep_s0", QUERYREP_CODE + (0, 0), encode_command(QueryRep())),
        ("ack_beef", int_to_bits(0xBEEF, 16), encode_command(Ack(0xBEEF))),
        ("rn16_1234", int_to_bits(0x1234, 16), encode_reply(Rn16Reply(0x1234))),
        ("epc_zero_payload", encode_sensor_epc(SensorPayload()),
         encode_reply(sensor_reply(SensorPayload()))),
        ("epc_accel_p1_m1_0", encode_sensor_epc(accel_pm), encode_reply(sensor_reply(accel_pm))),
        ("epc_full_scale", encode_sensor_epc(full), encode_reply(sensor_reply(full))),
    ]
    return vectors


VECTORS_HEADER = """\
# EPC codec golden vectors.
# One vector per line: <name> <input> <output>
# Each bit field is written <nbits>:<hex>; bits are MSB first and the hex
# value is left-aligned, zero-padded on the right to a whole nibble.
"""


def format_vectors(vectors: Iterable[tuple[str, Bits, Bits]] | None = None) -> str:
    rows = golden_vectors() if vectors is None else vectors
    lines = [f"{name} {bits_to_hex(i)} {bits_to_hex(o)}" for name, i, o in rows]
    return VECTORS_HEADER + "\n".join(lines) + "\n"


def parse_vectors(text: str) -> list[tuple[str, Bits, Bits]]:
    out = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        name, a, b = line.split()
        out.append((name, hex_to_bits(a), hex_to_bits(b)))
    return out
