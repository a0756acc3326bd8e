#!/usr/bin/env python3
"""Builds the tokenizer parity fixture and its reference trace.

The trace is produced with the pure-Python BasicTokenizer + WordpieceTokenizer
classes shipped with `transformers` (prophetnet copy of the BERT classes), which follow the original uncased
word-piece reference. Run once; the outputs are committed under tests/data/.

    python3 tools/make_tokenizer_fixture.py data/uncased_vocab.txt tests/data
"""
import importlib
import random
import sys
from pathlib import Path

from transformers.models.prophetnet.tokenization_prophetnet import (
    BasicTokenizer, WordpieceTokenizer, load_vocab)

MODULES = ["collections", "itertools", "functools", "json", "re", "os",
           "pathlib", "argparse", "logging", "random", "statistics", "string",
           "textwrap", "difflib", "heapq", "bisect", "datetime", "calendar",
           "decimal", "fractions", "csv", "shutil", "tempfile", "threading",
           "subprocess", "unittest", "typing", "dataclasses", "enum", "abc",
           "contextlib", "inspect", "pickle", "copy", "pprint", "email",
           "http.client", "urllib.parse", "socket", "zipfile", "tarfile",
           "gzip", "hashlib", "hmac", "secrets", "uuid", "locale", "gettext",
           "codecs", "unicodedata", "sqlite3", "asyncio", "queue", "sched",
           "io", "struct", "array", "weakref", "types", "operator", "math",
           "cmath", "numbers", "glob", "fnmatch", "linecache", "tokenize",
           "ast", "dis", "warnings", "traceback", "timeit", "trace", "doctest"]

EDGE_LINES = [
    "Hello, world!",
    "Café au lait, naïve résumé, coöperate, façade, jalapeño.",
    "Ünïcödé äccénts ÀÉÎÕÜ are stripped after lowercasing.",
    "ΟΔΥΣΣΕΥΣ and ΣΟΦΟΣ walked; σοφός ἄνθρωπος.",
    "Москва — столица России. Ёлка и ёж.",
    "北京是中国的首都。東京は日本の首都です。",
    "Mixed 中文English混合text with 한국어 글자 and ひらがな.",
    "Emoji test 😀😃 🎉 party 👍🏽 thumbs.",
    "Tabs\tand\tmultiple   spaces\t\tbetween words.",
    "Control\x07chars\x1bshould\x00vanish\x7fhere.",
    "Zero\u200bwidth\u200dspace and soft\u00adhyphen.",
    "Non breaking thin　ideographic spaces.",
    "Line separator and paragraph separator.",
    "Replacement \ufffd character gets dropped.",
    "Decomposed e\u0301 and a\u0308 and o\u0302 marks.",
    "Ligatures ﬁne ﬂow and fullwidth ＡＢＣ１２３ letters.",
    "Symbols: $100 + 50% = ~150 & (maybe) [brackets] {braces} <angles>.",
    "Quotes “curly” ‘single’ «guillemets» „low“ and ‘apostrophes’.",
    "Dashes - – — and ellipsis … and bullets • ·.",
    "Math ∑ ∫ √ ≈ ≠ ≤ ≥ ∞ π µ ° ± × ÷.",
    "Currency € £ ¥ ₹ ₩ ¢ symbols in 2024.",
    "URLs like https://example.com/path?query=1&x=2#frag are split.",
    "Emails such as first.last@example.org get punctuation splits.",
    "Numbers 3.14159 1,000,000 1e-5 0x1F 42nd 1990s.",
    "Hyphenated well-known state-of-the-art long-term plans.",
    "Contractions don't won't can't it's we're they'll I'd.",
    "ALL CAPS SENTENCE SHOULD BE LOWERCASED ENTIRELY.",
    "Arabic العربية and Hebrew עברית scripts.",
    "Devanagari हिन्दी and Thai ภาษาไทย and Tamil தமிழ்.",
    "Vietnamese Tiếng Việt có dấu rất nhiều.",
    "Turkish İstanbul ığdır ŞEHİR.",
    "German Straße Größe Äpfel Übermäßig.",
    "Polish Łódź Gdańsk Źdźbło.",
    "Icelandic Þórður Æsir Ðóra.",
    "Antidisestablishmentarianism floccinaucinihilipilification.",
    "Pneumonoultramicroscopicsilicovolcanoconiosis is long.",
    "x" * 201,
    "y" * 200,
    "unaffable untokenizable preprocessing transformers",
    "qzxqzxqzx zzzzqqqq jjjjxxxx",
    "",
    "   ",
    "\u0301\u0308 lone marks",
    "Private \ue000 use and unassigned \u0378 points.",
    "Final sigma ΣΑΣ, ΑΣ. and Σ alone, ΟΔΟΣ's end.",
    "a",
    "!",
    "...",
    "?!?!",
    "CJK compat 豈 更 and extension 𠀀 𠀁 characters.",
    "Box drawing ┌─┐ │ └─┘ and arrows ← → ↑ ↓.",
    "Music ♪ ♫ cards ♠ ♥ ♦ ♣ and stars ★ ☆.",
    "Superscripts x² y³ and fractions ½ ¼ ¾.",
    "Roman numerals Ⅰ Ⅱ Ⅲ Ⅳ and circled ① ② ③.",
    "Mixed-script tokens like café-北京-москва.",
    "Back\\slash and forward/slash and pipe|char and under_score.",
    "Annuities are rarely a good idea at the age 35 because of withdrawal restrictions",
    "Wanted: An investment that's as simple and secure as a certificate of deposit but offers a return worth getting excited about.",
    "Franklin Delano Roosevelt was born on January 30, 1882, in the Hudson Valley town of Hyde Park, New York.",
    "Roosevelt has also appeared on several U.S. Postage stamps.",
]


def docstring_lines():
    lines = []
    seen = set()
    for name in MODULES:
        try:
            mod = importlib.import_module(name)
        except Exception:
            continue
        docs = [mod.__doc__ or ""]
        for attr in sorted(dir(mod)):
            obj = getattr(mod, attr, None)
            doc = getattr(obj, "__doc__", None)
            if isinstance(doc, str):
                docs.append(doc)
        for doc in docs:
            for raw in doc.splitlines():
                line = raw.strip()
                if len(line) < 25 or line in seen:
                    continue
                seen.add(line)
                lines.append(line)
    return lines


def main():
    vocab_path, out_dir = sys.argv[1], Path(sys.argv[2])
    rng = random.Random(20201013)
    pool = docstring_lines()
    rng.shuffle(pool)
    lines = EDGE_LINES + pool[: 1000 - len(EDGE_LINES)]
    assert len(lines) == 1000

    vocab = load_vocab(vocab_path)
    basic = BasicTokenizer(do_lower_case=True, tokenize_chinese_chars=True)
    wordpiece = WordpieceTokenizer(vocab=vocab, unk_token="[UNK]",
                                   max_input_chars_per_word=200)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "tokenizer_fixture.txt", "w", encoding="utf-8",
              newline="\n") as fixture, \
         open(out_dir / "tokenizer_trace.txt", "w", encoding="utf-8",
              newline="\n") as trace:
        for line in lines:
            pieces = []
            for word in basic.tokenize(line):
                pieces.extend(wordpiece.tokenize(word))
            fixture.write(line + "\n")
            trace.write(" ".join(pieces) + "\n")


if __name__ == "__main__":
    main()
