"""Byte-level tokenizer with optional pair merges trained on the corpus.

Every byte value has its own token, so any text round-trips regardless of
what the merge training saw; merges learned from frequent adjacent pairs
shrink sequence lengths. Two specials exist: an end-of-sequence token and the
speech splice marker, which always encodes to a single id.
"""

from __future__ import annotations

from dataclasses import dataclass, field

EOS_TOKEN = "<eos>"
SPEECH_TOKEN = "<speech>"
_N_SPECIALS = 2
_BYTE_BASE = _N_SPECIALS  # byte b maps to id b + _BYTE_BASE
MAX_VOCAB = 4096


@dataclass
class ByteTokenizer:
    merges: list[tuple[int, int]] = field(default_factory=list)

    EOS_ID = 0
    SPEECH_ID = 1

    @property
    def vocab_size(self) -> int:
        return _N_SPECIALS + 256 + len(self.merges)

    # -- training --------------------------------------------------------

    @staticmethod
    def train(texts: list[str], vocab_size: int = 512) -> "ByteTokenizer":
        """Learn pair merges greedily from raw text until vocab_size is reached.

        Ties on pair frequency break toward the smallest (left, right) id pair,
        so training is deterministic for a given corpus.
        """
        if vocab_size > MAX_VOCAB:
            raise ValueError(f"vocab_size {vocab_size} exceeds cap {MAX_VOCAB}")
        tok = ByteTokenizer()
        sequences = [[b + _BYTE_BASE for b in text.encode("utf-8")] for text in texts if text]
        next_id = _N_SPECIALS + 256
        while next_id < vocab_size:
            counts: dict[tuple[int, int], int] = {}
            for seq in sequences:
                for pair in zip(seq, seq[1:]):
                    counts[pair] = counts.get(pair, 0) + 1
            if not counts:
                break
            best = min(counts, key=lambda p: (-counts[p], p))
            if counts[best] < 2:
                break
            tok.merges.append(best)
            sequences = [_apply_merge(seq, best, next_id) for seq in sequences]
            next_id += 1
        return tok

    # -- encode / decode ---------------------------------------------------

    def encode(self, text: str, add_eos: bool = False) -> list[int]:
        ids: list[int] = []
        remaining = text
        while True:
            marker = remaining.find(SPEECH_TOKEN)
            if marker < 0:
                ids.extend(self._encode_segment(remaining))
                break
            ids.extend(self._encode_segment(remaining[:marker]))
            ids.append(self.SPEECH_ID)
            remaining = remaining[marker + len(SPEECH_TOKEN):]
        if add_eos:
            ids.append(self.EOS_ID)
        return ids

    def _encode_segment(self, text: str) -> list[int]:
        seq = [b + _BYTE_BASE for b in text.encode("utf-8")]
        ranks = {pair: i for i, pair in enumerate(self.merges)}
        while len(seq) > 1:
            best_rank = None
            for pair in zip(seq, seq[1:]):
                rank = ranks.get(pair)
                if rank is not None and (best_rank is None or rank < best_rank):
                    best_rank = rank
            if best_rank is None:
                break
            pair = self.merges[best_rank]
            seq = _apply_merge(seq, pair, _N_SPECIALS + 256 + best_rank)
        return seq

    def decode(self, ids: list[int]) -> str:
        table = self._byte_table()
        out = bytearray()
        for token_id in ids:
            if token_id == self.EOS_ID:
                continue
            if token_id == self.SPEECH_ID:
                out.extend(SPEECH_TOKEN.encode("utf-8"))
                continue
            out.extend(table[token_id])
        return out.decode("utf-8", errors="replace")

    def _byte_table(self) -> dict[int, bytes]:
        table = {b + _BYTE_BASE: bytes([b]) for b in range(256)}
        for i, (left, right) in enumerate(self.merges):
            table[_N_SPECIALS + 256 + i] = table[left] + table[right]
        return table

    # -- persistence --------------------------------------------------------

    def to_json(self) -> dict:
        return {"merges": [list(pair) for pair in self.merges]}

    @staticmethod
    def from_json(obj: dict) -> "ByteTokenizer":
        return ByteTokenizer(merges=[(int(a), int(b)) for a, b in obj["merges"]])


def _apply_merge(seq: list[int], pair: tuple[int, int], new_id: int) -> list[int]:
    out: list[int] = []
    i = 0
    while i < len(seq):
        if i + 1 < len(seq) and seq[i] == pair[0] and seq[i + 1] == pair[1]:
            out.append(new_id)
            i += 2
        else:
            out.append(seq[i])
            i += 1
    return out
