#!/usr/bin/env python3
"""Builds data/standin_shakespeare.txt, an offline substitute for Tiny Shakespeare.

The text comes from the public-domain Project Gutenberg plays shipped in the
`shakespeare` sdist on PyPI. Speaker headings are rewritten to `NAME:`, stage
directions and act/scene headings are dropped, and every character is mapped
into the 65-character Tiny Shakespeare alphabet. Output is truncated to the
Tiny Shakespeare length (1,115,394 characters) at a paragraph boundary.
"""
import io
import re
import sys
import tarfile
import urllib.request

SDIST = ("https://files.pythonhosted.org/packages/a4/45/"
         "699c3869c2590579d0ef89df3cbd28b17eb77a14dd9f1841c51cd7d4dc1c/shakespeare-0.6.tar.gz")
PLAYS = [
    "coriolanus", "richard_iii", "romeo_and_juliet", "winters_tale",
    "henry_vi_part_3", "richard_ii", "measure_for_measure",
    "taming_of_the_shrew", "tempest", "henry_vi_part_2", "henry_vi_part_1",
]
ALPHABET = set("\n !$&',-.3:;?") | set("ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz")
TARGET_LEN = 1_115_394
SPEAKER = re.compile(r"^([A-Z][A-Z' ,.-]*[A-Z])\.$")
HEADING = re.compile(r"^(ACT [IVX]+|SCENE|PERSONS REPRESENTED|DRAMATIS PERSONAE|THE |by William)")


def clean_play(text: str) -> str:
    text = re.sub(r"\[[^\]]*\]", "", text, flags=re.S)
    out, started = [], False
    for raw in text.splitlines():
        line = raw.strip()
        if HEADING.match(line):
            started = started or line.startswith("ACT")
            continue
        if not started:
            continue
        m = SPEAKER.match(line)
        if m:
            if out and out[-1] != "":
                out.append("")
            out.append(m.group(1) + ":")
            continue
        line = line.replace('"', "'").replace("_", "")
        line = "".join(c for c in line if c in ALPHABET)
        if line == "":
            if out and out[-1] != "":
                out.append("")
            continue
        out.append(line)
    return "\n".join(out).strip() + "\n\n"


def main(dest: str) -> None:
    data = urllib.request.urlopen(SDIST, timeout=120).read()
    tar = tarfile.open(fileobj=io.BytesIO(data))
    corpus = ""
    for play in PLAYS:
        member = tar.extractfile(f"shakespeare-0.6/shksprdata/texts/{play}_gut.txt")
        corpus += clean_play(member.read().decode("utf-8", errors="replace"))
        if len(corpus) >= TARGET_LEN:
            break
    cut = corpus.rfind("\n\n", 0, TARGET_LEN)
    corpus = corpus[: cut + 1]
    with open(dest, "w", encoding="utf-8") as f:
        f.write(corpus)
    print(f"{dest}: {len(corpus)} chars, {len(set(corpus))} distinct")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "data/standin_shakespeare.txt")
