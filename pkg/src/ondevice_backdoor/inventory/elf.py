"""Minimal ELF reader: just enough to pull named sections out of a shared
library (32/64-bit, either byte order)."""

from __future__ import annotations

import struct
from dataclasses import dataclass

from ..errors import MissingRodata, NotAnElf

ELF_MAGIC = b"\x7fELF"
ELFCLASS32 = 1
ELFCLASS64 = 2
ELFDATA2LSB = 1
ELFDATA2MSB = 2

SHT_NOBITS = 8


@dataclass(frozen=True)
class Section:
    name: str
    type: int
    flags: int
    offset: int
    size: int


def _header_layout(ei_class: int) -> tuple[str, str]:
    # (ELF header tail after e_ident, section header entry)
    if ei_class == ELFCLASS32:
        return "HHIIIIIHHHHHH", "IIIIIIIIII"
    return "HHIQQQIHHHHHH", "IIQQQQIIQQ"


def read_sections(data: bytes) -> list[Section]:
    """Parse the section header table and resolve names via shstrtab."""
    if len(data) < 16 or data[:4] != ELF_MAGIC:
        raise NotAnElf("magic mismatch")
    ei_class, ei_data = data[4], data[5]
    if ei_class not in (ELFCLASS32, ELFCLASS64) or ei_data not in (ELFDATA2LSB, ELFDATA2MSB):
        raise NotAnElf(f"unknown ELF class/encoding {ei_class}/{ei_data}")
    endian = "<" if ei_data == ELFDATA2LSB else ">"
    hdr_fmt, sh_fmt = _header_layout(ei_class)
    hdr_size = struct.calcsize(endian + hdr_fmt)
    if len(data) < 16 + hdr_size:
        raise NotAnElf("truncated ELF header")
    (_, _, _, _, _, e_shoff, _, _, _, _, e_shentsize, e_shnum, e_shstrndx) = struct.unpack_from(
        endian + hdr_fmt, data, 16
    )
    sh_size = struct.calcsize(endian + sh_fmt)
    if e_shoff == 0 or e_shnum == 0:
        return []
    if e_shentsize < sh_size or e_shoff + e_shnum * e_shentsize > len(data):
        raise NotAnElf("section header table out of bounds")

    raw = []
    for i in range(e_shnum):
        fields = struct.unpack_from(endian + sh_fmt, data, e_shoff + i * e_shentsize)
        sh_name, sh_type, sh_flags, _addr, sh_offset, sh_sz = fields[:6]
        raw.append((sh_name, sh_type, sh_flags, sh_offset, sh_sz))

    strtab = b""
    if e_shstrndx < len(raw):
        _, st_type, _, st_off, st_sz = raw[e_shstrndx]
        if st_type != SHT_NOBITS:
            strtab = data[st_off:st_off + st_sz]

    sections = []
    for sh_name, sh_type, sh_flags, sh_offset, sh_sz in raw:
        end = strtab.find(b"\0", sh_name)
        name = strtab[sh_name:end if end >= 0 else None].decode("ascii", "replace")
        sections.append(Section(name, sh_type, sh_flags, sh_offset, sh_sz))
    return sections


def section_bytes(data: bytes, section: Section) -> bytes:
    if section.type == SHT_NOBITS:
        return b""
    return data[section.offset:section.offset + section.size]


def read_rodata(data: bytes) -> bytes:
    """Concatenated contents of `.rodata` and any `.rodata.*` sections."""
    chunks = [
        section_bytes(data, s)
        for s in read_sections(data)
        if s.name == ".rodata" or s.name.startswith(".rodata.")
    ]
    if not chunks:
        raise MissingRodata("no .rodata section")
    return b"\0".join(chunks)


def build_elf(sections: dict[str, bytes], *, elf_class: int = ELFCLASS64,
              little_endian: bool = True, machine: int = 183) -> bytes:
    """Assemble a relocatable-free ELF shared object holding `sections`
    (PROGBITS) plus a shstrtab. Used to plant fixture native libraries;
    machine 183 is AArch64."""
    endian = "<" if little_endian else ">"
    hdr_fmt, sh_fmt = _header_layout(elf_class)
    ehsize = 16 + struct.calcsize(endian + hdr_fmt)
    shentsize = struct.calcsize(endian + sh_fmt)

    names = list(sections) + [".shstrtab"]
    shstrtab = b"\0"
    name_off = {}
    for n in names:
        name_off[n] = len(shstrtab)
        shstrtab += n.encode("ascii") + b"\0"

    body = b""
    offsets = {}
    for n in names:
        payload = shstrtab if n == ".shstrtab" else sections[n]
        while (ehsize + len(body)) % 8:
            body += b"\0"
        offsets[n] = ehsize + len(body)
        body += payload
    while (ehsize + len(body)) % 8:
        body += b"\0"
    shoff = ehsize + len(body)

    ident = ELF_MAGIC + bytes([elf_class, ELFDATA2LSB if little_endian else ELFDATA2MSB, 1, 0])
    ident += b"\0" * 8
    e_type_dyn = 3
    header = struct.pack(endian + hdr_fmt, e_type_dyn, machine, 1, 0, 0, shoff, 0,
                         ehsize, 0, 0, shentsize, len(names) + 1, len(names))

    shdrs = struct.pack(endian + sh_fmt, *([0] * 10))
    for n in names:
        payload_len = len(shstrtab) if n == ".shstrtab" else len(sections[n])
        sh_type = 3 if n == ".shstrtab" else 1
        flags = 0 if n == ".shstrtab" else 2  # SHF_ALLOC
        shdrs += struct.pack(endian + sh_fmt, name_off[n], sh_type, flags, 0,
                             offsets[n], payload_len, 0, 0, 1, 0)
    return ident + header + body + shdrs
