#!/usr/bin/env python3
"""Emits src/tokenizer/unicode_tables.inc from Python's unicodedata.

    python3 tools/gen_unicode_tables.py > src/tokenizer/unicode_tables.inc
"""
import sys
import unicodedata

MAX_CP = 0x110000


def ranges(pred):
    out, start = [], None
    for cp in range(MAX_CP):
        hit = pred(cp)
        if hit and start is None:
            start = cp
        elif not hit and start is not None:
            out.append((start, cp - 1))
            start = None
    if start is not None:
        out.append((start, MAX_CP - 1))
    return out


def cat(cp):
    return unicodedata.category(chr(cp))


def is_control(cp):
    return cp not in (9, 10, 13) and cat(cp).startswith("C")


def is_whitespace(cp):
    return cp in (32, 9, 10, 13) or cat(cp) == "Zs"


def is_punct(cp):
    if 33 <= cp <= 47 or 58 <= cp <= 64 or 91 <= cp <= 96 or 123 <= cp <= 126:
        return True
    return cat(cp).startswith("P")


def is_space(cp):
    return chr(cp).isspace()


def is_mn(cp):
    return cat(cp) == "Mn"


SIGMA = "Σ"


def is_cased(cp):
    if 0xD800 <= cp <= 0xDFFF:
        return False
    return (chr(cp) + SIGMA).lower().endswith("ς")


def is_case_ignorable(cp):
    if 0xD800 <= cp <= 0xDFFF or is_cased(cp):
        return False
    return ("A" + chr(cp) + SIGMA).lower().endswith("ς")


def emit_ranges(name, rs):
    print(f"inline constexpr CodepointRange {name}[] = {{")
    for lo, hi in rs:
        print(f"    {{0x{lo:X}, 0x{hi:X}}},")
    print("};")


def main():
    print("// Generated by tools/gen_unicode_tables.py from Unicode "
          f"{unicodedata.unidata_version}. Do not edit.")
    print("// NOLINTBEGIN")
    emit_ranges("kControl", ranges(is_control))
    emit_ranges("kWhitespace", ranges(is_whitespace))
    emit_ranges("kPunctuation", ranges(is_punct))
    emit_ranges("kSplitSpace", ranges(is_space))
    emit_ranges("kNonspacingMark", ranges(is_mn))
    emit_ranges("kCased", ranges(is_cased))
    emit_ranges("kCaseIgnorable", ranges(is_case_ignorable))

    lower = []
    for cp in range(MAX_CP):
        if 0xD800 <= cp <= 0xDFFF or cp == 0x3A3:
            continue
        low = chr(cp).lower()
        if low != chr(cp):
            assert len(low) <= 3
            lower.append((cp, [ord(c) for c in low]))
    print("inline constexpr CaseMapping kLowercase[] = {")
    for cp, outs in lower:
        padded = outs + [0] * (3 - len(outs))
        body = ", ".join(f"0x{o:X}" for o in padded)
        print(f"    {{0x{cp:X}, {{{body}}}, {len(outs)}}},")
    print("};")

    data, entries = [], []
    for cp in range(MAX_CP):
        if 0xD800 <= cp <= 0xDFFF or 0xAC00 <= cp <= 0xD7A3:
            continue
        d = unicodedata.normalize("NFD", chr(cp))
        if d != chr(cp):
            entries.append((cp, len(data), len(d)))
            data.extend(ord(c) for c in d)
    print("inline constexpr char32_t kDecompositionData[] = {")
    for i in range(0, len(data), 8):
        print("    " + ", ".join(f"0x{c:X}" for c in data[i:i + 8]) + ",")
    print("};")
    print("inline constexpr Decomposition kDecompositions[] = {")
    for cp, off, n in entries:
        print(f"    {{0x{cp:X}, {off}, {n}}},")
    print("};")

    ccc = []
    start, cur = None, 0
    for cp in range(MAX_CP + 1):
        v = unicodedata.combining(chr(cp)) if cp < MAX_CP and not (0xD800 <= cp <= 0xDFFF) else 0
        if v != cur:
            if cur != 0:
                ccc.append((start, cp - 1, cur))
            start, cur = cp, v
    print("inline constexpr CombiningClassRange kCombiningClass[] = {")
    for lo, hi, v in ccc:
        print(f"    {{0x{lo:X}, 0x{hi:X}, {v}}},")
    print("};")
    print("// NOLINTEND")


if __name__ == "__main__":
    sys.exit(main())
