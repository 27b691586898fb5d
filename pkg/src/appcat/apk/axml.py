"""Android binary XML (AndroidManifest.xml) chunk parser.

The format is a sequence of chunks after an 8-byte file header: a string
pool (UTF-8 or UTF-16 variant), an optional resource map, and
namespace/element chunks. Only the pieces the toolkit needs are
decoded: element names and their attributes with string- or
reference-typed values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .parsing import ApkParseError, ByteReader

CHUNK_XML = 0x0003
CHUNK_STRING_POOL = 0x0001
CHUNK_RESOURCE_MAP = 0x0180
CHUNK_START_NAMESPACE = 0x0100
CHUNK_END_NAMESPACE = 0x0101
CHUNK_START_ELEMENT = 0x0102
CHUNK_END_ELEMENT = 0x0103
CHUNK_CDATA = 0x0104

UTF8_FLAG = 0x0100
NO_INDEX = 0xFFFFFFFF

TYPE_REFERENCE = 0x01
TYPE_STRING = 0x03

ANDROID_NS = "http://schemas.android.com/apk/res/android"


@dataclass(frozen=True)
class AxmlAttribute:
    namespace: str | None
    name: str
    data_type: int
    string_value: str | None  # set for TYPE_STRING
    data: int  # raw typed data word

    @property
    def is_reference(self) -> bool:
        return self.data_type == TYPE_REFERENCE


@dataclass(frozen=True)
class AxmlElement:
    name: str
    attributes: tuple[AxmlAttribute, ...]

    def attr(self, name: str, namespace: str | None = ANDROID_NS) -> AxmlAttribute | None:
        """Attribute by name, preferring the requested namespace.

        Falls back to a namespace-less match; some packers drop the
        android namespace on manifest attributes.
        """
        fallback = None
        for attribute in self.attributes:
            if attribute.name != name:
                continue
            if attribute.namespace == namespace:
                return attribute
            if fallback is None:
                fallback = attribute
        return fallback


@dataclass
class AxmlDocument:
    strings: list[str] = field(default_factory=list)
    elements: list[AxmlElement] = field(default_factory=list)


def _parse_string_pool(reader: ByteReader, start: int, size: int) -> list[str]:
    if size < 28:
        raise ApkParseError("string pool chunk shorter than its header", start)
    string_count = reader.u32(start + 8)
    style_count = reader.u32(start + 12)
    flags = reader.u32(start + 16)
    strings_start = reader.u32(start + 20)
    if 28 + 4 * (string_count + style_count) > size:
        raise ApkParseError(
            f"string pool declares {string_count} strings which do not fit", start
        )
    if strings_start > size:
        raise ApkParseError("string data offset outside chunk", start)
    is_utf8 = bool(flags & UTF8_FLAG)
    pool: list[str] = []
    for index in range(string_count):
        rel = reader.u32(start + 28 + 4 * index)
        offset = start + strings_start + rel
        if offset >= start + size:
            raise ApkParseError(f"string {index} offset outside chunk", offset)
        limit = start + size
        if is_utf8:
            pool.append(_read_utf8_entry(reader, offset, limit, index))
        else:
            pool.append(_read_utf16_entry(reader, offset, limit, index))
    return pool


def _read_utf16_entry(
    reader: ByteReader, offset: int, limit: int, index: int
) -> str:
    def word(at: int) -> int:
        if at + 2 > limit:
            raise ApkParseError(
                f"utf-16 string {index} length prefix past chunk end", at
            )
        return reader.u16(at)

    length = word(offset)
    offset += 2
    if length & 0x8000:
        length = ((length & 0x7FFF) << 16) | word(offset)
        offset += 2
    end = offset + 2 * length
    if end > limit:
        raise ApkParseError(f"utf-16 string {index} runs past chunk end", offset)
    raw = reader.bytes_at(offset, 2 * length)
    return raw.decode("utf-16-le", errors="replace")


def _read_utf8_entry(
    reader: ByteReader, offset: int, limit: int, index: int
) -> str:
    def byte(at: int) -> int:
        if at + 1 > limit:
            raise ApkParseError(
                f"utf-8 string {index} length prefix past chunk end", at
            )
        return reader.u8(at)

    # Two lengths: UTF-16 code-unit count (ignored), then byte count.
    first = byte(offset)
    offset += 1
    if first & 0x80:
        offset += 1
    byte_len = byte(offset)
    offset += 1
    if byte_len & 0x80:
        byte_len = ((byte_len & 0x7F) << 8) | byte(offset)
        offset += 1
    end = offset + byte_len
    if end > limit:
        raise ApkParseError(f"utf-8 string {index} runs past chunk end", offset)
    raw = reader.bytes_at(offset, byte_len)
    return raw.decode("utf-8", errors="replace")


def _pool_string(pool: list[str], index: int, offset: int) -> str:
    if index >= len(pool):
        raise ApkParseError(
            f"string index {index} outside pool of {len(pool)}", offset
        )
    return pool[index]


def _parse_start_element(
    reader: ByteReader, start: int, header_size: int, size: int, pool: list[str]
) -> AxmlElement:
    base = start + header_size  # skips line number / comment words
    if header_size + 20 > size:
        raise ApkParseError("start-element chunk too small for its body", start)
    ns_index = reader.u32(base)
    name_index = reader.u32(base + 4)
    attribute_start = reader.u16(base + 8)
    attribute_size = reader.u16(base + 10)
    attribute_count = reader.u16(base + 12)
    if attribute_size < 20:
        raise ApkParseError(
            f"attribute record size {attribute_size} below minimum 20", base + 10
        )
    name = _pool_string(pool, name_index, base + 4)
    del ns_index  # element namespace not needed for manifest facts
    attrs_base = base + attribute_start
    if attrs_base + attribute_size * attribute_count > start + size:
        raise ApkParseError(
            f"{attribute_count} attributes run past element chunk", attrs_base
        )
    attributes = []
    for i in range(attribute_count):
        at = attrs_base + i * attribute_size
        attr_ns = reader.u32(at)
        attr_name_index = reader.u32(at + 4)
        data_type = reader.u8(at + 15)
        data = reader.u32(at + 16)
        namespace = (
            None if attr_ns == NO_INDEX else _pool_string(pool, attr_ns, at)
        )
        attr_name = _pool_string(pool, attr_name_index, at + 4)
        string_value = None
        if data_type == TYPE_STRING:
            string_value = _pool_string(pool, data, at + 16)
        attributes.append(
            AxmlAttribute(
                namespace=namespace,
                name=attr_name,
                data_type=data_type,
                string_value=string_value,
                data=data,
            )
        )
    return AxmlElement(name=name, attributes=tuple(attributes))


def parse_axml(data: bytes) -> AxmlDocument:
    """Decode a binary-XML document into its elements.

    Raises ApkParseError (with a byte offset) on a bad file magic,
    inconsistent chunk lengths, or out-of-range string indices.
    """
    reader = ByteReader(data, context="binary xml")
    if len(data) < 8:
        raise ApkParseError("file too short for a binary-xml header", 0)
    file_type = reader.u16(0)
    header_size = reader.u16(2)
    file_size = reader.u32(4)
    if file_type != CHUNK_XML:
        raise ApkParseError(
            f"bad binary-xml magic {file_type:#06x} (expected {CHUNK_XML:#06x})", 0
        )
    if header_size != 8:
        raise ApkParseError(f"unexpected file header size {header_size}", 2)
    if file_size > len(data):
        raise ApkParseError(
            f"declared size {file_size} exceeds actual {len(data)}", 4
        )

    document = AxmlDocument()
    offset = 8
    while offset + 8 <= file_size:
        chunk_type = reader.u16(offset)
        chunk_header = reader.u16(offset + 2)
        chunk_size = reader.u32(offset + 4)
        if chunk_size < 8 or chunk_header < 8 or chunk_header > chunk_size:
            raise ApkParseError(
                f"inconsistent chunk header (size {chunk_size}, "
                f"header {chunk_header})",
                offset,
            )
        if offset + chunk_size > file_size:
            raise ApkParseError(
                f"chunk of size {chunk_size} runs past file end", offset
            )
        if chunk_type == CHUNK_STRING_POOL:
            document.strings = _parse_string_pool(reader, offset, chunk_size)
        elif chunk_type == CHUNK_START_ELEMENT:
            document.elements.append(
                _parse_start_element(
                    reader, offset, chunk_header, chunk_size, document.strings
                )
            )
        # Resource maps, namespaces, end elements, cdata, and vendor
        # chunks carry nothing we need; their length was validated above.
        offset += chunk_size
    return document
