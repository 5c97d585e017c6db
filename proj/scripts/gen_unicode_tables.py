#!/usr/bin/env python3
"""Regenerates include/cam2/detail/unicode_tables.hpp from Python's unicodedata."""
import sys
import unicodedata


def ranges(pred):
    out, start = [], None
    for cp in range(0x110000):
        hit = pred(cp)
        if hit and start is None:
            start = cp
        elif not hit and start is not None:
            out.append((start, cp - 1))
            start = None
    if start is not None:
        out.append((start, 0x10FFFF))
    return out


def main():
    punct = ranges(lambda c: unicodedata.category(chr(c)).startswith("P"))
    digit = ranges(lambda c: unicodedata.category(chr(c)) == "Nd")
    fold = []
    for cp in range(0x110000):
        ch = chr(cp)
        name = unicodedata.name(ch, "")
        if "LATIN CAPITAL LETTER" not in name:
            continue
        low = ch.lower()
        if len(low) == 1 and low != ch:
            fold.append((cp, ord(low)))

    def emit(name, rows, kind):
        body = ",\n".join("    {0x%04X, 0x%04X}" % r for r in rows)
        return (f"inline constexpr std::array<{kind}, {len(rows)}> {name}{{{{\n"
                f"{body},\n}}}};\n")

    sys.stdout.write(
        "// Generated by scripts/gen_unicode_tables.py (Unicode "
        + unicodedata.unidata_version + "). Do not edit.\n"
        "#pragma once\n\n#include <array>\n#include <cstdint>\n\n"
        "namespace cam2::detail {\n\n"
        "struct CodeRange {\n  char32_t first;\n  char32_t last;\n};\n\n"
        "struct CaseFold {\n  char32_t upper;\n  char32_t lower;\n};\n\n"
        "// General category P*.\n" + emit("kPunctuation", punct, "CodeRange") + "\n"
        "// General category Nd.\n" + emit("kDecimalDigit", digit, "CodeRange") + "\n"
        "// Latin-script capitals with a single-code-point lowercase form.\n"
        + emit("kLatinFold", fold, "CaseFold") + "\n"
        "}  // namespace cam2::detail\n")


if __name__ == "__main__":
    main()
