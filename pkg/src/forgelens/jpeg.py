"""Baseline JPEG codec (encode + decode) pinned for residual analysis.

Error-level analysis compares an image against its own recompression, so
the recompression step must be identical everywhere the library runs.
This module is that pinned codec: baseline sequential DCT (ITU-T T.81,
8-bit samples, Huffman entropy coding) with the Annex K quantization and
code tables, libjpeg-style quality scaling, and JFIF markers. Files it
writes decode in any ordinary JPEG viewer; bytes it produces for a given
(pixels, quality, subsampling) triple never depend on platform or
library versions, because every stage is plain integer/float64 numpy.

Supported on purpose: 3-channel RGB in, quality 1..100, 4:2:0 or 4:4:4
subsampling. Not supported: progressive scans, restart intervals,
arithmetic coding, 12-bit precision, grayscale.
"""

from __future__ import annotations

import numpy as np

from .exceptions import CodecError

__all__ = [
    "LUMA_QUANT_BASE", "CHROMA_QUANT_BASE", "ZIGZAG",
    "quant_tables", "encode_jpeg", "decode_jpeg", "roundtrip",
]

# ITU-T T.81 Annex K.1 / K.2 quantization tables, row-major.
LUMA_QUANT_BASE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.int64)

CHROMA_QUANT_BASE = np.array([
    [17, 18, 24, 47, 99, 99, 99, 99],
    [18, 21, 26, 66, 99, 99, 99, 99],
    [24, 26, 56, 99, 99, 99, 99, 99],
    [47, 66, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
], dtype=np.int64)

# Flat indices of an 8x8 block visited in zig-zag order.
ZIGZAG = np.array([
    0, 1, 8, 16, 9, 2, 3, 10, 17, 24, 32, 25, 18, 11, 4, 5,
    12, 19, 26, 33, 40, 48, 41, 34, 27, 20, 13, 6, 7, 14, 21, 28,
    35, 42, 49, 56, 57, 50, 43, 36, 29, 22, 15, 23, 30, 37, 44, 51,
    58, 59, 52, 45, 38, 31, 39, 46, 53, 60, 61, 54, 47, 55, 62, 63,
], dtype=np.int64)

_UNZIGZAG = np.argsort(ZIGZAG)

# Standard Huffman tables (T.81 Annex K.3): (BITS counts, HUFFVAL symbols).
_DC_LUMA_BITS = [0, 1, 5, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0]
_DC_LUMA_VALS = list(range(12))
_DC_CHROMA_BITS = [0, 3, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0]
_DC_CHROMA_VALS = list(range(12))
_AC_LUMA_BITS = [0, 2, 1, 3, 3, 2, 4, 3, 5, 5, 4, 4, 0, 0, 1, 125]
_AC_LUMA_VALS = [
    1, 2, 3, 0, 4, 17, 5, 18, 33, 49, 65, 6, 19, 81, 97, 7, 34, 113,
    20, 50, 129, 145, 161, 8, 35, 66, 177, 193, 21, 82, 209, 240, 36, 51, 98, 114,
    130, 9, 10, 22, 23, 24, 25, 26, 37, 38, 39, 40, 41, 42, 52, 53, 54, 55,
    56, 57, 58, 67, 68, 69, 70, 71, 72, 73, 74, 83, 84, 85, 86, 87, 88, 89,
    90, 99, 100, 101, 102, 103, 104, 105, 106, 115, 116, 117, 118, 119, 120, 121,
    122, 131, 132, 133, 134, 135, 136, 137, 138, 146, 147, 148, 149, 150, 151, 152,
    153, 154, 162, 163, 164, 165, 166, 167, 168, 169, 170, 178, 179, 180, 181, 182,
    183, 184, 185, 186, 194, 195, 196, 197, 198, 199, 200, 201, 202, 210, 211, 212,
    213, 214, 215, 216, 217, 218, 225, 226, 227, 228, 229, 230, 231, 232, 233, 234,
    241, 242, 243, 244, 245, 246, 247, 248, 249, 250,
]
_AC_CHROMA_BITS = [0, 2, 1, 2, 4, 4, 3, 4, 7, 5, 4, 4, 0, 1, 2, 119]
_AC_CHROMA_VALS = [
    0, 1, 2, 3, 17, 4, 5, 33, 49, 6, 18, 65, 81, 7, 97, 113, 19, 34,
    50, 129, 8, 20, 66, 145, 161, 177, 193, 9, 35, 51, 82, 240, 21, 98, 114, 209,
    10, 22, 36, 52, 225, 37, 241, 23, 24, 25, 26, 38, 39, 40, 41, 42, 53, 54,
    55, 56, 57, 58, 67, 68, 69, 70, 71, 72, 73, 74, 83, 84, 85, 86, 87, 88,
    89, 90, 99, 100, 101, 102, 103, 104, 105, 106, 115, 116, 117, 118, 119, 120,
    121, 122, 130, 131, 132, 133, 134, 135, 136, 137, 138, 146, 147, 148, 149, 150,
    151, 152, 153, 154, 162, 163, 164, 165, 166, 167, 168, 169, 170, 178, 179, 180,
    181, 182, 183, 184, 185, 186, 194, 195, 196, 197, 198, 199, 200, 201, 202, 210,
    211, 212, 213, 214, 215, 216, 217, 218, 226, 227, 228, 229, 230, 231, 232, 233,
    234, 242, 243, 244, 245, 246, 247, 248, 249, 250,
]

_KB, _KR = 0.114, 0.299  # CCIR 601 luma weights used by JFIF

SUBSAMPLINGS = ("4:2:0", "4:4:4")


def quant_tables(quality: int) -> tuple[np.ndarray, np.ndarray]:
    """Quality-scaled (luma, chroma) tables, values clamped to [1, 255].

    Scaling follows the widespread libjpeg convention so the tables match
    any conforming build at the same quality setting.
    """
    q = int(quality)
    if not 1 <= q <= 100:
        raise CodecError(f"quality must be in [1, 100], got {quality}")
    scale = 5000 // q if q < 50 else 200 - 2 * q
    luma = np.clip((LUMA_QUANT_BASE * scale + 50) // 100, 1, 255)
    chroma = np.clip((CHROMA_QUANT_BASE * scale + 50) // 100, 1, 255)
    return luma.astype(np.int64), chroma.astype(np.int64)


def _dct_matrix() -> np.ndarray:
    # Orthonormal DCT-II: forward C = M B M^T, inverse B = M^T C M.
    k = np.arange(8)
    m = np.cos((2 * k[None, :] + 1) * k[:, None] * np.pi / 16)
    m[0] *= np.sqrt(1.0 / 8.0)
    m[1:] *= np.sqrt(2.0 / 8.0)
    return m


_DCT_M = _dct_matrix()


def _to_blocks(plane: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    return plane.reshape(h // 8, 8, w // 8, 8).transpose(0, 2, 1, 3)


def _from_blocks(blocks: np.ndarray) -> np.ndarray:
    bh, bw = blocks.shape[:2]
    return blocks.transpose(0, 2, 1, 3).reshape(bh * 8, bw * 8)


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def _rgb_to_ycbcr(rgb: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    r = rgb[..., 0].astype(np.float64)
    g = rgb[..., 1].astype(np.float64)
    b = rgb[..., 2].astype(np.float64)
    y = _KR * r + (1.0 - _KR - _KB) * g + _KB * b
    cb = 128.0 + 0.5 * (b - y) / (1.0 - _KB)
    cr = 128.0 + 0.5 * (r - y) / (1.0 - _KR)
    return y, cb, cr


def _ycbcr_to_rgb(y: np.ndarray, cb: np.ndarray, cr: np.ndarray) -> np.ndarray:
    y = y.astype(np.float64)
    cbc = cb.astype(np.float64) - 128.0
    crc = cr.astype(np.float64) - 128.0
    r = y + 2.0 * (1.0 - _KR) * crc
    b = y + 2.0 * (1.0 - _KB) * cbc
    g = (y - _KR * r - _KB * b) / (1.0 - _KR - _KB)
    rgb = np.stack([r, g, b], axis=-1)
    return np.clip(np.floor(rgb + 0.5), 0, 255).astype(np.uint8)


def _pad_to_multiple(plane: np.ndarray, mult: int) -> np.ndarray:
    h, w = plane.shape
    ph = (-h) % mult
    pw = (-w) % mult
    if ph == 0 and pw == 0:
        return plane
    return np.pad(plane, ((0, ph), (0, pw)), mode="edge")


def _downsample2(plane: np.ndarray) -> np.ndarray:
    # 2x2 box mean; caller guarantees even dimensions.
    return (plane[0::2, 0::2] + plane[1::2, 0::2]
            + plane[0::2, 1::2] + plane[1::2, 1::2]) / 4.0


def _upsample2(plane: np.ndarray) -> np.ndarray:
    """Triangular 2x upsampling (integer 9:3:3:1 weighting, edges replicated).

    This is the usual conforming-decoder filter, so decodes here track
    mainstream codec builds to within IDCT rounding.
    """
    c = plane.astype(np.int64)
    up = np.arange(c.shape[0])
    down = np.minimum(up + 1, c.shape[0] - 1)
    top = np.maximum(up - 1, 0)
    vs = np.empty((c.shape[0] * 2, c.shape[1]), dtype=np.int64)
    vs[0::2] = 3 * c + c[top]
    vs[1::2] = 3 * c + c[down]
    left = np.maximum(np.arange(c.shape[1]) - 1, 0)
    right = np.minimum(np.arange(c.shape[1]) + 1, c.shape[1] - 1)
    out = np.empty((vs.shape[0], c.shape[1] * 2), dtype=np.int64)
    out[:, 0::2] = (3 * vs + vs[:, left] + 8) >> 4
    out[:, 1::2] = (3 * vs + vs[:, right] + 7) >> 4
    return out.astype(np.float64)


def _plane_to_quantized(plane: np.ndarray, qtable: np.ndarray) -> np.ndarray:
    """Level-shift, DCT, and quantize a plane into int32 coefficient blocks."""
    blocks = _to_blocks(plane - 128.0)
    coefs = np.einsum("ij,rcjk,lk->rcil", _DCT_M, blocks, _DCT_M)
    return _round_half_away(coefs / qtable).astype(np.int32)


def _quantized_to_plane(blocks: np.ndarray, qtable: np.ndarray) -> np.ndarray:
    coefs = blocks.astype(np.float64) * qtable
    spatial = np.einsum("ji,rcjk,kl->rcil", _DCT_M, coefs, _DCT_M)
    plane = _from_blocks(spatial) + 128.0
    return np.clip(np.floor(plane + 0.5), 0, 255)


# ---------------------------------------------------------------------------
# Huffman coding


def _build_encoder_table(bits, values) -> dict[int, tuple[int, int]]:
    table = {}
    code = 0
    i = 0
    for length in range(1, 17):
        for _ in range(bits[length - 1]):
            table[values[i]] = (code, length)
            code += 1
            i += 1
        code <<= 1
    return table


def _build_decoder_table(bits, values) -> dict[tuple[int, int], int]:
    table = {}
    code = 0
    i = 0
    for length in range(1, 17):
        for _ in range(bits[length - 1]):
            table[(length, code)] = values[i]
            code += 1
            i += 1
        code <<= 1
    return table


_ENC_DC = (_build_encoder_table(_DC_LUMA_BITS, _DC_LUMA_VALS),
           _build_encoder_table(_DC_CHROMA_BITS, _DC_CHROMA_VALS))
_ENC_AC = (_build_encoder_table(_AC_LUMA_BITS, _AC_LUMA_VALS),
           _build_encoder_table(_AC_CHROMA_BITS, _AC_CHROMA_VALS))


class _BitWriter:
    def __init__(self):
        self.out = bytearray()
        self.acc = 0
        self.nbits = 0

    def write(self, code: int, length: int) -> None:
        self.acc = (self.acc << length) | code
        self.nbits += length
        while self.nbits >= 8:
            self.nbits -= 8
            byte = (self.acc >> self.nbits) & 0xFF
            self.out.append(byte)
            if byte == 0xFF:  # stuff so entropy data never fakes a marker
                self.out.append(0x00)
        self.acc &= (1 << self.nbits) - 1

    def flush(self) -> bytes:
        if self.nbits:
            pad = 8 - self.nbits
            self.write((1 << pad) - 1, pad)
        return bytes(self.out)


class _BitReader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0
        self.acc = 0
        self.nbits = 0

    def _fill(self) -> None:
        if self.pos >= len(self.data):
            raise CodecError("entropy-coded segment ended early")
        byte = self.data[self.pos]
        self.pos += 1
        if byte == 0xFF:
            if self.pos >= len(self.data) or self.data[self.pos] != 0x00:
                raise CodecError("unexpected marker inside entropy-coded segment")
            self.pos += 1
        self.acc = (self.acc << 8) | byte
        self.nbits += 8

    def read(self, n: int) -> int:
        while self.nbits < n:
            self._fill()
        self.nbits -= n
        v = (self.acc >> self.nbits) & ((1 << n) - 1)
        self.acc &= (1 << self.nbits) - 1
        return v

    def read_code(self, table: dict[tuple[int, int], int]) -> int:
        code = 0
        for length in range(1, 17):
            code = (code << 1) | self.read(1)
            sym = table.get((length, code))
            if sym is not None:
                return sym
        raise CodecError("invalid Huffman code in entropy-coded segment")


def _bit_size(v: int) -> int:
    v = abs(v)
    n = 0
    while v:
        v >>= 1
        n += 1
    return n


def _extend(v: int, size: int) -> int:
    if size == 0:
        return 0
    if v < (1 << (size - 1)):
        return v - (1 << size) + 1
    return v


def _encode_block(writer: _BitWriter, coefs: np.ndarray, prev_dc: int,
                  dc_table, ac_table) -> int:
    zz = coefs.reshape(64)[ZIGZAG]
    dc = int(zz[0])
    diff = dc - prev_dc
    size = _bit_size(diff)
    code, length = dc_table[size]
    writer.write(code, length)
    if size:
        writer.write((diff if diff >= 0 else diff + (1 << size) - 1), size)

    run = 0
    last_nonzero = int(np.max(np.nonzero(zz)[0])) if np.any(zz[1:]) else 0
    for k in range(1, last_nonzero + 1):
        v = int(zz[k])
        if v == 0:
            run += 1
            continue
        while run >= 16:
            code, length = ac_table[0xF0]  # ZRL: sixteen zeros
            writer.write(code, length)
            run -= 16
        size = _bit_size(v)
        code, length = ac_table[(run << 4) | size]
        writer.write(code, length)
        writer.write((v if v >= 0 else v + (1 << size) - 1), size)
        run = 0
    if last_nonzero < 63:
        code, length = ac_table[0x00]  # EOB
        writer.write(code, length)
    return dc


def _decode_block(reader: _BitReader, prev_dc: int, dc_table, ac_table) -> tuple[np.ndarray, int]:
    zz = np.zeros(64, dtype=np.int32)
    size = reader.read_code(dc_table)
    dc = prev_dc + _extend(reader.read(size), size)
    zz[0] = dc
    k = 1
    while k < 64:
        rs = reader.read_code(ac_table)
        if rs == 0x00:
            break
        if rs == 0xF0:
            k += 16
            continue
        k += rs >> 4
        size = rs & 0x0F
        if k > 63 or size == 0:
            raise CodecError("corrupt AC coefficient run")
        zz[k] = _extend(reader.read(size), size)
        k += 1
    block = np.zeros(64, dtype=np.int32)
    block[ZIGZAG] = zz
    return block.reshape(8, 8), dc


# ---------------------------------------------------------------------------
# marker plumbing


def _seg(marker: int, payload: bytes) -> bytes:
    return bytes([0xFF, marker]) + (len(payload) + 2).to_bytes(2, "big") + payload


def _headers(width: int, height: int, luma_q: np.ndarray, chroma_q: np.ndarray,
             subsampling: str) -> bytes:
    out = bytearray(b"\xff\xd8")  # SOI
    out += _seg(0xE0, b"JFIF\x00" + bytes([1, 1, 0]) + (1).to_bytes(2, "big")
                + (1).to_bytes(2, "big") + bytes([0, 0]))
    out += _seg(0xDB, bytes([0]) + bytes(luma_q.reshape(64)[ZIGZAG].astype(np.uint8)))
    out += _seg(0xDB, bytes([1]) + bytes(chroma_q.reshape(64)[ZIGZAG].astype(np.uint8)))
    hv = 0x22 if subsampling == "4:2:0" else 0x11
    sof = bytes([8]) + height.to_bytes(2, "big") + width.to_bytes(2, "big") + bytes([
        3,
        1, hv, 0,      # Y: sampling factors, quant table 0
        2, 0x11, 1,    # Cb
        3, 0x11, 1,    # Cr
    ])
    out += _seg(0xC0, sof)
    for cls, tid, bits, vals in (
        (0, 0, _DC_LUMA_BITS, _DC_LUMA_VALS),
        (0, 1, _DC_CHROMA_BITS, _DC_CHROMA_VALS),
        (1, 0, _AC_LUMA_BITS, _AC_LUMA_VALS),
        (1, 1, _AC_CHROMA_BITS, _AC_CHROMA_VALS),
    ):
        out += _seg(0xC4, bytes([(cls << 4) | tid]) + bytes(bits) + bytes(vals))
    out += _seg(0xDA, bytes([3, 1, 0x00, 2, 0x11, 3, 0x11, 0, 63, 0]))
    return bytes(out)


def encode_jpeg(rgb: np.ndarray, quality: int = 90, subsampling: str = "4:2:0") -> bytes:
    """Encode an (H, W, 3) uint8 RGB array to baseline JFIF bytes."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise CodecError(f"expected (H, W, 3) RGB input, got shape {rgb.shape}")
    if rgb.shape[0] == 0 or rgb.shape[1] == 0:
        raise CodecError("image dimensions must be positive")
    if rgb.dtype != np.uint8:
        raise CodecError(f"expected uint8 samples, got {rgb.dtype}")
    if rgb.shape[0] > 65535 or rgb.shape[1] > 65535:
        raise CodecError("image dimensions exceed the 16-bit marker limit")
    if subsampling not in SUBSAMPLINGS:
        raise CodecError(f"subsampling must be one of {SUBSAMPLINGS}, got {subsampling!r}")

    height, width = rgb.shape[:2]
    luma_q, chroma_q = quant_tables(quality)
    y, cb, cr = _rgb_to_ycbcr(rgb)

    if subsampling == "4:2:0":
        mcu = 16
        y = _pad_to_multiple(y, mcu)
        cb = _downsample2(_pad_to_multiple(cb, mcu))
        cr = _downsample2(_pad_to_multiple(cr, mcu))
    else:
        mcu = 8
        y = _pad_to_multiple(y, mcu)
        cb = _pad_to_multiple(cb, mcu)
        cr = _pad_to_multiple(cr, mcu)

    yq = _plane_to_quantized(y, luma_q)
    cbq = _plane_to_quantized(cb, chroma_q)
    crq = _plane_to_quantized(cr, chroma_q)

    writer = _BitWriter()
    prev = [0, 0, 0]  # DC predictors: Y, Cb, Cr
    mcu_rows, mcu_cols = cbq.shape[0], cbq.shape[1]
    for r in range(mcu_rows):
        for c in range(mcu_cols):
            if subsampling == "4:2:0":
                for dy in (0, 1):
                    for dx in (0, 1):
                        prev[0] = _encode_block(writer, yq[2 * r + dy, 2 * c + dx],
                                                prev[0], _ENC_DC[0], _ENC_AC[0])
            else:
                prev[0] = _encode_block(writer, yq[r, c], prev[0], _ENC_DC[0], _ENC_AC[0])
            prev[1] = _encode_block(writer, cbq[r, c], prev[1], _ENC_DC[1], _ENC_AC[1])
            prev[2] = _encode_block(writer, crq[r, c], prev[2], _ENC_DC[1], _ENC_AC[1])

    return (_headers(width, height, luma_q, chroma_q, subsampling)
            + writer.flush() + b"\xff\xd9")


def _parse_segments(data: bytes):
    if data[:2] != b"\xff\xd8":
        raise CodecError("not a JPEG stream (missing SOI)")
    pos = 2
    while pos < len(data):
        if data[pos] != 0xFF:
            raise CodecError(f"expected marker at byte {pos}")
        marker = data[pos + 1]
        if marker == 0xD9:  # EOI
            return
        length = int.from_bytes(data[pos + 2:pos + 4], "big")
        payload = data[pos + 4:pos + 2 + length]
        if len(payload) != length - 2:
            raise CodecError("truncated marker segment")
        if marker == 0xDA:
            # Entropy-coded data runs from here to EOI.
            end = data.rfind(b"\xff\xd9")
            if end < 0:
                raise CodecError("missing EOI marker")
            yield marker, payload, data[pos + 2 + length:end]
            return
        yield marker, payload, b""
        pos += 2 + length
    raise CodecError("missing EOI marker")


def decode_jpeg(data: bytes) -> np.ndarray:
    """Decode baseline JFIF bytes produced by :func:`encode_jpeg`.

    Also accepts other conforming baseline streams with the same layout
    (3 components, 4:2:0 or 4:4:4, no restart intervals).
    """
    qtables: dict[int, np.ndarray] = {}
    htables: dict[tuple[int, int], dict] = {}
    frame = None
    scan = None
    entropy = b""

    for marker, payload, tail in _parse_segments(bytes(data)):
        if marker == 0xDB:
            p = 0
            while p < len(payload):
                pq, tq = payload[p] >> 4, payload[p] & 0x0F
                if pq != 0:
                    raise CodecError("only 8-bit quantization tables are supported")
                flat = np.frombuffer(payload[p + 1:p + 65], dtype=np.uint8).astype(np.int64)
                table = np.zeros(64, dtype=np.int64)
                table[ZIGZAG] = flat
                qtables[tq] = table.reshape(8, 8)
                p += 65
        elif marker == 0xC4:
            p = 0
            while p < len(payload):
                cls, tid = payload[p] >> 4, payload[p] & 0x0F
                bits = list(payload[p + 1:p + 17])
                count = sum(bits)
                vals = list(payload[p + 17:p + 17 + count])
                htables[(cls, tid)] = _build_decoder_table(bits, vals)
                p += 17 + count
        elif marker == 0xC0:
            precision = payload[0]
            if precision != 8:
                raise CodecError(f"unsupported sample precision {precision}")
            h = int.from_bytes(payload[1:3], "big")
            w = int.from_bytes(payload[3:5], "big")
            ncomp = payload[5]
            if ncomp != 3:
                raise CodecError(f"expected 3 components, got {ncomp}")
            comps = []
            for i in range(3):
                cid, hv, tq = payload[6 + 3 * i:9 + 3 * i]
                comps.append((cid, hv >> 4, hv & 0x0F, tq))
            frame = (h, w, comps)
        elif marker in (0xC1, 0xC2, 0xC3, 0xC5, 0xC6, 0xC7, 0xC9, 0xCA, 0xCB,
                        0xCD, 0xCE, 0xCF):
            raise CodecError("only baseline sequential DCT (SOF0) is supported")
        elif marker == 0xDD:
            raise CodecError("restart intervals are not supported")
        elif marker == 0xDA:
            ns = payload[0]
            if ns != 3:
                raise CodecError("expected a 3-component interleaved scan")
            scan = {payload[1 + 2 * i]: (payload[2 + 2 * i] >> 4, payload[2 + 2 * i] & 0x0F)
                    for i in range(3)}
            entropy = tail
        # APPn / COM segments are skipped.

    if frame is None or scan is None:
        raise CodecError("stream is missing SOF0 or SOS")
    height, width, comps = frame
    if height == 0 or width == 0:
        raise CodecError("image dimensions must be positive")

    samplings = [(hx, vx) for _, hx, vx, _ in comps]
    if samplings == [(2, 2), (1, 1), (1, 1)]:
        subsampling = "4:2:0"
    elif samplings == [(1, 1), (1, 1), (1, 1)]:
        subsampling = "4:4:4"
    else:
        raise CodecError(f"unsupported sampling layout {samplings}")

    mcu = 16 if subsampling == "4:2:0" else 8
    mcu_rows = -(-height // mcu)
    mcu_cols = -(-width // mcu)
    yscale = 2 if subsampling == "4:2:0" else 1
    yq = np.zeros((mcu_rows * yscale, mcu_cols * yscale, 8, 8), dtype=np.int32)
    cbq = np.zeros((mcu_rows, mcu_cols, 8, 8), dtype=np.int32)
    crq = np.zeros((mcu_rows, mcu_cols, 8, 8), dtype=np.int32)

    tables = []
    for cid, _, _, _ in comps:
        if cid not in scan:
            raise CodecError("scan does not cover every frame component")
        dc_id, ac_id = scan[cid]
        if (0, dc_id) not in htables or (1, ac_id) not in htables:
            raise CodecError("scan references an undefined Huffman table")
        tables.append((htables[(0, dc_id)], htables[(1, ac_id)]))

    reader = _BitReader(entropy)
    prev = [0, 0, 0]
    for r in range(mcu_rows):
        for c in range(mcu_cols):
            if subsampling == "4:2:0":
                for dy in (0, 1):
                    for dx in (0, 1):
                        block, prev[0] = _decode_block(reader, prev[0], *tables[0])
                        yq[2 * r + dy, 2 * c + dx] = block
            else:
                yq[r, c], prev[0] = _decode_block(reader, prev[0], *tables[0])
            cbq[r, c], prev[1] = _decode_block(reader, prev[1], *tables[1])
            crq[r, c], prev[2] = _decode_block(reader, prev[2], *tables[2])

    for _, _, _, tq in comps:
        if tq not in qtables:
            raise CodecError("frame references an undefined quantization table")
    y = _quantized_to_plane(yq, qtables[comps[0][3]])
    cb = _quantized_to_plane(cbq, qtables[comps[1][3]])
    cr = _quantized_to_plane(crq, qtables[comps[2][3]])
    if subsampling == "4:2:0":
        # Drop MCU padding before filtering so edge taps replicate real
        # samples, then interpolate back to full resolution.
        ch, cw = -(-height // 2), -(-width // 2)
        cb = _upsample2(cb[:ch, :cw])
        cr = _upsample2(cr[:ch, :cw])

    return _ycbcr_to_rgb(y[:height, :width], cb[:height, :width],
                         cr[:height, :width])


def roundtrip(rgb: np.ndarray, quality: int = 90, subsampling: str = "4:2:0") -> np.ndarray:
    """Encode then decode: the image as it survives one recompression."""
    return decode_jpeg(encode_jpeg(rgb, quality=quality, subsampling=subsampling))
