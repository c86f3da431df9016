#!/usr/bin/env python3
"""Builds the PE fixtures byte by byte and cross-checks them with pefile.

Run from this directory: python3 make_fixtures.py
The generated .exe files are committed; rerunning must reproduce them.
"""
import random
import struct
import sys

IMAGE_FILE_MACHINE_I386 = 0x14C
IMAGE_FILE_MACHINE_AMD64 = 0x8664
TEXT_FLAGS = 0x60000020   # code | execute | read
DATA_FLAGS = 0xC0000040   # initialized data | read | write
RDATA_FLAGS = 0x40000040  # initialized data | read
BSS_FLAGS = 0xC0000080    # uninitialized data | read | write

# Standard real-mode stub: prints the usual message and exits.
DOS_STUB = bytes.fromhex(
    "0e1fba0e00b409cd21b8014ccd21"
) + b"This program cannot be run in DOS mode.\r\r\n$" + b"\x00" * 7


def dos_header(e_lfanew):
    # e_magic, e_cblp, e_cp, e_crlc, e_cparhdr, e_minalloc, e_maxalloc,
    # e_ss, e_sp, e_csum, e_ip, e_cs, e_lfarlc, e_ovno
    h = struct.pack("<2s13H", b"MZ", 0x90, 3, 0, 4, 0, 0xFFFF, 0, 0xB8, 0, 0, 0, 0x40, 0)
    h += b"\x00" * 8           # e_res[4]
    h += struct.pack("<2H", 0, 0)  # e_oemid, e_oeminfo
    h += b"\x00" * 20          # e_res2[10]
    h += struct.pack("<I", e_lfanew)
    assert len(h) == 64
    return h


def coff_header(machine, nsections, opt_size, characteristics):
    # Machine, NumberOfSections, TimeDateStamp, PointerToSymbolTable,
    # NumberOfSymbols, SizeOfOptionalHeader, Characteristics
    return struct.pack("<HHIIIHH", machine, nsections, 0x5F000000, 0, 0, opt_size, characteristics)


def optional_header(plus, entry, image_base, sect_align, file_align, size_of_image, size_of_headers,
                    size_of_code, size_of_init):
    if plus:
        # Magic, linker ver, SizeOfCode, SizeOfInitializedData,
        # SizeOfUninitializedData, AddressOfEntryPoint, BaseOfCode, ImageBase(Q)
        h = struct.pack("<HBBIIIIIQ", 0x20B, 14, 0, size_of_code, size_of_init, 0, entry, 0x1000, image_base)
    else:
        # same, plus BaseOfData, ImageBase(I)
        h = struct.pack("<HBBIIIIIII", 0x10B, 14, 0, size_of_code, size_of_init, 0, entry, 0x1000, 0x2000,
                        image_base)
    # SectionAlignment @32, FileAlignment @36, OS/image/subsystem versions,
    # Win32VersionValue, SizeOfImage @56, SizeOfHeaders @60, CheckSum,
    # Subsystem, DllCharacteristics
    h += struct.pack("<IIHHHHHHIIIIHH", sect_align, file_align, 6, 0, 0, 0, 6, 0, 0, size_of_image,
                     size_of_headers, 0, 3, 0x8140)
    if plus:
        h += struct.pack("<QQQQII", 0x100000, 0x1000, 0x100000, 0x1000, 0, 16)
    else:
        h += struct.pack("<IIIIII", 0x100000, 0x1000, 0x100000, 0x1000, 0, 16)
    h += b"\x00" * (16 * 8)  # empty data directories
    assert len(h) == (240 if plus else 224)
    return h


def section_header(name, vsize, va, raw_size, raw_ptr, flags):
    return struct.pack("<8sIIIIIIHHI", name, vsize, va, raw_size, raw_ptr, 0, 0, 0, 0, flags)


def build(plus, sections, file_align=0x200, sect_align=0x1000, gaps=None, overlay=b"", seed=0):
    """sections: (name, vsize, raw_size, flags); raw data is packed in order
    after the headers, with gaps[i] filler bytes inserted before section i."""
    rng = random.Random(seed)
    gaps = gaps or {}
    e_lfanew = 0x80
    opt_size = 240 if plus else 224
    table_off = e_lfanew + 4 + 20 + opt_size
    table_end = table_off + 40 * len(sections)
    size_of_headers = (table_end + file_align - 1) // file_align * file_align

    raw_cursor = size_of_headers
    va_cursor = (size_of_headers + sect_align - 1) // sect_align * sect_align
    headers, bodies = [], []
    for i, (name, vsize, raw_size, flags) in enumerate(sections):
        filler = gaps.get(i, b"")
        if raw_size:
            bodies.append((raw_cursor, filler))
            raw_cursor += len(filler)
            ptr = raw_cursor
            # Section content: random bytes up to vsize, zero alignment slack.
            content = bytes(rng.randrange(256) for _ in range(min(vsize, raw_size)))
            content += b"\x00" * (raw_size - len(content))
            bodies.append((ptr, content))
            raw_cursor += raw_size
        else:
            ptr = 0
        headers.append(section_header(name, vsize, va_cursor, raw_size, ptr, flags))
        va_cursor += (max(vsize, raw_size) + sect_align - 1) // sect_align * sect_align

    size_of_code = sum(s[2] for s in sections if s[3] & 0x20)
    size_of_init = sum(s[2] for s in sections if s[3] & 0x40)
    machine = IMAGE_FILE_MACHINE_AMD64 if plus else IMAGE_FILE_MACHINE_I386
    chars = 0x0022 if plus else 0x0102  # executable | large-address-aware / 32-bit machine
    out = bytearray()
    out += dos_header(e_lfanew)
    out += DOS_STUB + b"\x00" * (e_lfanew - 64 - len(DOS_STUB))
    out += b"PE\x00\x00"
    out += coff_header(machine, len(sections), opt_size, chars)
    out += optional_header(plus, 0x1000, 0x140000000 if plus else 0x400000, sect_align, file_align,
                           va_cursor, size_of_headers, size_of_code, size_of_init)
    for h in headers:
        out += h
    out += b"\x00" * (size_of_headers - len(out))
    for ptr, body in bodies:
        assert len(out) == ptr
        out += body
    out += overlay
    return bytes(out)


FIXTURES = {
    # PE32, .text vsize 300 in a 512-byte raw block at 0x200, .data at 0x400.
    "two_section.exe": lambda: build(False, [
        (b".text", 300, 0x200, TEXT_FLAGS),
        (b".data", 0x100, 0x200, DATA_FLAGS),
    ], seed=1),
    # Every section's virtual size equals its raw size; no inter-section filler.
    "packed.exe": lambda: build(False, [
        (b".text", 0x200, 0x200, TEXT_FLAGS),
        (b".rdata", 0x400, 0x400, RDATA_FLAGS),
    ], seed=2),
    # PE32+ with a .bss section without raw data, 0x200 bytes of int3 filler
    # between .text and .data, and a 55-byte overlay.
    "pe32plus_gap_overlay.exe": lambda: build(True, [
        (b".text", 0x2F0, 0x400, TEXT_FLAGS),
        (b".bss", 0x800, 0, BSS_FLAGS),
        (b".data", 0x180, 0x200, DATA_FLAGS),
        (b".rsrc", 0x90, 0x200, RDATA_FLAGS),
    ], gaps={2: b"\xCC" * 0x200}, overlay=bytes(range(55)), seed=3),
    # File alignment equal to section alignment (4 KiB); five sections.
    "aligned4k.exe": lambda: build(False, [
        (b".text", 0x1000, 0x1000, TEXT_FLAGS),
        (b".rdata", 0x234, 0x1000, RDATA_FLAGS),
        (b".data", 0x10, 0x1000, DATA_FLAGS),
        (b".pdata", 0x1000, 0x1000, RDATA_FLAGS),
        (b".reloc", 0x44, 0x1000, RDATA_FLAGS),
    ], file_align=0x1000, sect_align=0x1000, seed=4),
}


def verify(name, data):
    import pefile

    pe = pefile.PE(data=data, fast_load=True)
    assert pe.DOS_HEADER.e_magic == 0x5A4D
    assert pe.NT_HEADERS.Signature == 0x4550
    secs = pe.sections
    assert len(secs) == pe.FILE_HEADER.NumberOfSections
    fa = pe.OPTIONAL_HEADER.FileAlignment
    sa = pe.OPTIONAL_HEADER.SectionAlignment
    for s in secs:
        assert s.VirtualAddress % sa == 0, name
        if s.SizeOfRawData:
            assert s.PointerToRawData % fa == 0, name
    last = max((s.PointerToRawData + s.SizeOfRawData for s in secs if s.SizeOfRawData), default=0)
    overlay = pe.get_overlay()
    assert len(data) - last == (len(overlay) if overlay else 0), name
    return pe


def main():
    check = "--check" in sys.argv
    ok = True
    for name, make in FIXTURES.items():
        data = make()
        pe = verify(name, data)
        if check:
            with open(name, "rb") as f:
                same = f.read() == data
            print(f"{name}: {'ok' if same else 'DIFFERS'}")
            ok &= same
        else:
            with open(name, "wb") as f:
                f.write(data)
            print(f"{name}: {len(data)} bytes, {len(pe.sections)} sections")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
