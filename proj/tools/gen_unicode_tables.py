#!/usr/bin/env python3
"""Regenerates core/src/unicode_tables.inc.

Word characters are code points for which str.isalnum() holds; the lowercase
table is the simple (single code point) mapping from str.lower().
"""
import sys
import unicodedata

MAX_CP = 0x10FFFF


def alnum_ranges():
    ranges, start = [], None
    for cp in range(MAX_CP + 2):
        is_word = cp <= MAX_CP and chr(cp).isalnum()
        if is_word and start is None:
            start = cp
        elif not is_word and start is not None:
            ranges.append((start, cp - 1))
            start = None
    return ranges


def lower_pairs():
    pairs = []
    for cp in range(MAX_CP + 1):
        if 0xD800 <= cp <= 0xDFFF:
            continue
        low = chr(cp).lower()
        if len(low) == 1 and ord(low) != cp:
            pairs.append((cp, ord(low)))
        elif len(low) > 1:
            # Full mappings (e.g. U+0130) fall back to their first code point.
            pairs.append((cp, ord(low[0])))
    return pairs


def main(out_path):
    ranges = alnum_ranges()
    pairs = lower_pairs()
    with open(out_path, "w", encoding="utf-8") as out:
        out.write("// Generated by tools/gen_unicode_tables.py (unicodedata %s). Do not edit.\n"
                  % unicodedata.unidata_version)
        out.write("// NOLINTBEGIN\n")
        out.write("constexpr CodeRange kWordRanges[] = {\n")
        for lo, hi in ranges:
            out.write("    {0x%04X, 0x%04X},\n" % (lo, hi))
        out.write("};\n\n")
        out.write("constexpr CaseMapping kLowerMap[] = {\n")
        for src, dst in pairs:
            out.write("    {0x%04X, 0x%04X},\n" % (src, dst))
        out.write("};\n")
        out.write("// NOLINTEND\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "core/src/unicode_tables.inc")
