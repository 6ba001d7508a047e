"""Vocab-driven greedy longest-match tokenizer with byte fallback.

Default id layout (LLaMA-like)::

    0 <unk>   1 <s>   2 </s>   3 <image>   4..259 <0x00>..<0xFF>   260.. pieces

Vocab files are UTF-8 lines ``token<TAB>id``. ``<0xNN>`` names a byte token;
a leading ``▁`` in a piece stands for a space, as in SentencePiece vocabularies.
"""

from __future__ import annotations

import itertools
from pathlib import Path
from typing import Optional

UNK, BOS, EOS, IMAGE = "<unk>", "<s>", "</s>", "<image>"
_SPECIALS = (UNK, BOS, EOS, IMAGE)
_SPACE_MARK = "▁"
_FILL_ALPHABET = " etaoinsrhldcumfpgwyb"


def _byte_name(b: int) -> str:
    return f"<0x{b:02X}>"


class Tokenizer:
    def __init__(self, pieces: dict, byte_ids: list, unk: int, bos: int, eos: int,
                 image: Optional[int] = None):
        if len(byte_ids) != 256:
            raise ValueError(f"byte fallback table must cover 256 values, got {len(byte_ids)}")
        self.pieces = dict(pieces)  # bytes -> id
        self.byte_ids = list(byte_ids)
        self.unk, self.bos, self.eos, self.image = unk, bos, eos, image
        self.max_piece = max((len(p) for p in self.pieces), default=0)
        self._id_bytes = {i: p for p, i in self.pieces.items()}
        for b, i in enumerate(self.byte_ids):
            self._id_bytes[i] = bytes([b])
        for i in (unk, bos, eos):
            self._id_bytes[i] = b""
        if image is not None:
            self._id_bytes[image] = IMAGE.encode()

    @property
    def vocab_size(self) -> int:
        return max(self._id_bytes) + 1

    @classmethod
    def default(cls, vocab_size: int = 512) -> "Tokenizer":
        """Built-in vocabulary: specials, 256 byte tokens, then short letter pieces."""
        base = len(_SPECIALS) + 256
        if vocab_size < base:
            raise ValueError(f"vocab_size must be at least {base}")
        pieces = {}
        next_id = base

        def candidates():
            for length in itertools.count(1):
                for combo in itertools.product(_FILL_ALPHABET, repeat=length):
                    yield "".join(combo).encode()

        for piece in candidates():
            if next_id >= vocab_size:
                break
            pieces[piece] = next_id
            next_id += 1
        return cls(pieces, list(range(4, 260)), 0, 1, 2, 3)

    @classmethod
    def from_vocab_file(cls, path) -> "Tokenizer":
        specials = {}
        byte_ids = [None] * 256
        pieces = {}
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line:
                continue
            token, sep, idx = line.rpartition("\t")
            if not sep:
                raise ValueError(f"{path}:{lineno}: expected 'token<TAB>id'")
            idx = int(idx)
            if token in _SPECIALS:
                specials[token] = idx
            elif len(token) == 6 and token.startswith("<0x") and token.endswith(">"):
                byte_ids[int(token[3:5], 16)] = idx
            else:
                pieces[token.replace(_SPACE_MARK, " ").encode("utf-8")] = idx
        if None in byte_ids:
            raise ValueError(f"{path}: byte fallback tokens missing for {byte_ids.count(None)} byte values")
        for name in (UNK, BOS, EOS):
            if name not in specials:
                raise ValueError(f"{path}: special token {name} missing")
        return cls(pieces, byte_ids, specials[UNK], specials[BOS], specials[EOS], specials.get(IMAGE))

    def save_vocab(self, path) -> None:
        lines = [(UNK, self.unk), (BOS, self.bos), (EOS, self.eos)]
        if self.image is not None:
            lines.append((IMAGE, self.image))
        lines += [(_byte_name(b), i) for b, i in enumerate(self.byte_ids)]
        lines += [(p.decode("utf-8").replace(" ", _SPACE_MARK), i) for p, i in self.pieces.items()]
        Path(path).write_text("".join(f"{t}\t{i}\n" for t, i in lines), encoding="utf-8")

    def encode_bytes(self, data: bytes) -> list[int]:
        ids = []
        image = IMAGE.encode()
        i, n = 0, len(data)
        while i < n:
            if self.image is not None and data.startswith(image, i):
                ids.append(self.image)
                i += len(image)
                continue
            for length in range(min(self.max_piece, n - i), 0, -1):
                tok = self.pieces.get(data[i:i + length])
                if tok is not None:
                    ids.append(tok)
                    i += length
                    break
            else:
                ids.append(self.byte_ids[data[i]])
                i += 1
        return ids

    def decode_bytes(self, ids) -> bytes:
        return b"".join(self._id_bytes.get(int(i), b"") for i in ids)

    def tokenize(self, text: str) -> list[int]:
        return self.encode_bytes(text.encode("utf-8"))

    def detokenize(self, ids) -> str:
        return self.decode_bytes(ids).decode("utf-8", errors="replace")


def tokenize(text: str, tokenizer: Tokenizer) -> list[int]:
    return tokenizer.tokenize(text)


def detokenize(ids, tokenizer: Tokenizer) -> str:
    return tokenizer.detokenize(ids)
