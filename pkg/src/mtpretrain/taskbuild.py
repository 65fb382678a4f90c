"""Training example construction and fixed-shape batch assembly.

A batch is built in stages, each rewriting a per-row list of token slots:

1. topology: draw text spans per row. Sets containing qt/fs use the
   continuation layout (row i + B/2 holds the exact token continuation of
   row i); sets with a pair task draw [CLS] A [SEP] B [SEP] rows; anything
   else gets single-segment rows.
2. corruption (tcp/scp): insert/replace/permute within each segment, then
   trim back to the segment's original length so row shapes stay fixed.
3. trigram shuffle (tgs): permute one uniformly chosen trigram per row.
4. masking (mlm/sbo): hide 15% of content positions with the 80/10/10
   replacement split, recording targets against the visible (post-stage-3)
   stream.

Each stage sees the previous stage's output as ground truth, so jointly
scheduled tasks stay mutually consistent. All randomness flows from one
generator seeded by (seed, step), making batches pure functions of those.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .corpus import FLAG_CAPITALIZED
from .tasks import (CONTINUATION_TASKS, CORRUPTION_TASKS, MASKING_TASKS,
                    PAIR_TASKS, TaskError, canonical_task,
                    validate_compatibility)

MLM_RATE = 0.15
MASK_SPLIT = (0.8, 0.1, 0.1)  # [MASK] / random id / keep
CORRUPTION_RATE = 0.10
MAX_DRAW_TRIES = 200

# the six trigram permutations in lexicographic one-line order
TRIGRAM_PERMS = list(itertools.permutations(range(3)))


class TaskBuildError(ValueError):
    pass


@dataclass
class TokenSlot:
    input_id: int
    orig_id: int
    special: bool = False
    seg: int = 0
    from_source: bool = True
    capitalized: bool = False
    tf: float = 0.0
    tfidf: float = 0.0
    corrupted: bool = False
    masked: bool = False
    mask_target: int = -1


@dataclass
class MaskedSequence:
    input_ids: "list[int]"
    mlm_targets: "dict[int, int]"
    mask_positions: "list[int]"


@dataclass
class SegmentPair:
    tokens_a: "list[int]"
    tokens_b: "list[int]"
    pair_label: int
    pair_mode: str


@dataclass
class CorruptionRecord:
    corrupted_ids: "list[int]"
    token_labels: "list[bool]"
    sentence_label: bool


@dataclass
class TrigramShuffle:
    ids: "list[int]"
    start: int
    perm_class: int


@dataclass
class RowMeta:
    doc_index: int = -1
    token_start: int = -1
    token_end: int = -1
    b_doc_index: int = -1
    b_token_start: int = -1
    b_token_end: int = -1


@dataclass
class TrainingBatch:
    input_ids: np.ndarray
    type_ids: np.ndarray
    attention_mask: np.ndarray
    special_mask: np.ndarray
    task_id: int
    task_set: "tuple[str, ...]"
    continuation_paired: bool
    labels: dict = field(default_factory=dict)
    meta: "list[RowMeta]" = field(default_factory=list)

    @property
    def batch_size(self) -> int:
        return self.input_ids.shape[0]

    @property
    def seq_len(self) -> int:
        return self.input_ids.shape[1]


# ------------------------------------------------------------- slot stages

def _mask_slots(slots: "list[TokenSlot]", rng, vocab) -> None:
    maskable = [i for i, s in enumerate(slots) if not s.special]
    if not maskable:
        return
    draws = rng.random(len(maskable))
    chosen = [i for i, r in zip(maskable, draws) if r < MLM_RATE]
    if not chosen:
        chosen = [maskable[int(rng.integers(len(maskable)))]]
    for i in chosen:
        slot = slots[i]
        slot.masked = True
        slot.mask_target = slot.orig_id
        r = rng.random()
        if r < MASK_SPLIT[0]:
            slot.input_id = vocab.mask_id
        elif r < MASK_SPLIT[0] + MASK_SPLIT[1]:
            slot.input_id = int(vocab.random_regular_id(rng))
        # else: keep the original id, target still recorded


def _replacement_slot(seg: int, new_id: int) -> TokenSlot:
    return TokenSlot(input_id=new_id, orig_id=new_id, seg=seg,
                     from_source=False, corrupted=True)


def _corrupt_slots(segment: "list[TokenSlot]", rng, vocab,
                   rate: float, trim_to: "int | None") -> "list[TokenSlot]":
    if not 0 < rate <= 0.5:
        raise TaskBuildError(f"corruption rate {rate} outside (0, 0.5]")
    n = len(segment)
    draws = rng.random(n)
    selected = [i for i in range(n)
                if draws[i] < rate and not segment[i].special]
    ops = {i: ("insert", "replace", "permute")[int(rng.integers(3))]
           for i in selected}
    work = list(segment)
    for i in selected:
        if ops[i] != "permute":
            continue
        candidates = [j for j in selected if j != i]
        for j in (i - 1, i + 1):
            if 0 <= j < n and not work[j].special and j not in candidates:
                candidates.append(j)
        if not candidates:
            ops[i] = "replace"
            continue
        j = candidates[int(rng.integers(len(candidates)))]
        work[i], work[j] = work[j], work[i]
        work[i].corrupted = True
        work[j].corrupted = True
    out = []
    for i, slot in enumerate(work):
        op = ops.get(i)
        if op == "replace":
            slot = _replacement_slot(slot.seg, int(vocab.random_regular_id(rng)))
        out.append(slot)
        if op == "insert":
            out.append(_replacement_slot(slot.seg,
                                         int(vocab.random_regular_id(rng))))
    if trim_to is not None:
        out = out[:trim_to]
    return out


def _shuffle_trigram_slots(slots: "list[TokenSlot]", rng):
    starts = [i for i in range(len(slots) - 2)
              if not (slots[i].special or slots[i + 1].special
                      or slots[i + 2].special)]
    if not starts:
        return None
    s = starts[int(rng.integers(len(starts)))]
    klass = int(rng.integers(6))
    perm = TRIGRAM_PERMS[klass]
    original = [slots[s], slots[s + 1], slots[s + 2]]
    for offset in range(3):
        slots[s + offset] = original[perm[offset]]
    return s, klass


# ---------------------------------------------------------- public wrappers

def _slots_from_ids(ids, vocab) -> "list[TokenSlot]":
    return [TokenSlot(input_id=int(i), orig_id=int(i),
                      special=int(i) in vocab.special_ids) for i in ids]


def apply_mlm_mask(ids, rng, vocab) -> MaskedSequence:
    """Mask a raw id sequence (specials included) per the 15% protocol."""
    slots = _slots_from_ids(ids, vocab)
    _mask_slots(slots, rng, vocab)
    targets = {i: s.mask_target for i, s in enumerate(slots) if s.masked}
    return MaskedSequence(input_ids=[s.input_id for s in slots],
                          mlm_targets=targets,
                          mask_positions=sorted(targets))


def corrupt_tokens(ids, rng, vocab, rate: float = CORRUPTION_RATE,
                   max_len: "int | None" = None) -> CorruptionRecord:
    slots = _corrupt_slots(_slots_from_ids(ids, vocab), rng, vocab, rate,
                           trim_to=max_len)
    labels = [s.corrupted for s in slots]
    return CorruptionRecord(corrupted_ids=[s.input_id for s in slots],
                            token_labels=labels, sentence_label=any(labels))


def shuffle_trigram(ids, rng, vocab) -> "TrigramShuffle | None":
    slots = _slots_from_ids(ids, vocab)
    hit = _shuffle_trigram_slots(slots, rng)
    if hit is None:
        return None
    start, klass = hit
    return TrigramShuffle(ids=[s.input_id for s in slots], start=start,
                          perm_class=klass)


# ------------------------------------------------------------ span drawing

def _sentence_counts(doc) -> np.ndarray:
    return np.diff(doc.sentence_offsets)


def _run_forward(doc, s0: int, budget: int, max_sentence_end: "int | None" = None):
    """Greedy whole-sentence run from s0; mid-sentence truncation fallback.

    Returns (token_start, token_end, sentence_end). token_end - token_start
    is at most budget and at least min(budget, 1)."""
    off = doc.sentence_offsets
    limit = doc.n_sentences if max_sentence_end is None else max_sentence_end
    start = int(off[s0])
    s = s0
    total = 0
    while s < limit and total + (off[s + 1] - off[s]) <= budget:
        total += int(off[s + 1] - off[s])
        s += 1
    if s == s0:
        return start, start + max(1, min(budget, int(off[s0 + 1]) - start)), s0 + 1
    return start, start + total, s


def _run_backward(doc, s_end: int, budget: int):
    """Greedy run of whole sentences ending exactly at sentence s_end."""
    off = doc.sentence_offsets
    end = int(off[s_end])
    s = s_end
    total = 0
    while s > 0 and total + (off[s] - off[s - 1]) <= budget:
        total += int(off[s] - off[s - 1])
        s -= 1
    if s == s_end:
        start = max(int(off[s_end - 1]), end - max(1, budget))
        return start, end, s_end - 1
    return end - total, end, s


def _pick_other_doc(reader, rng, exclude: int) -> int:
    n = len(reader.documents)
    if n < 2:
        raise TaskBuildError(
            "task needs a segment from a different document but the corpus "
            "has a single document")
    j = int(rng.integers(n - 1))
    return j if j < exclude else j + 1


@dataclass
class _PairDraw:
    a_doc: int
    a_span: "tuple[int, int]"
    b_doc: int
    b_span: "tuple[int, int]"
    label: int
    mode: str


def _draw_pair(reader, mode: str, rng, max_seq_len: int) -> _PairDraw:
    total_budget = max_seq_len - 3
    if total_budget < 2:
        raise TaskBuildError(f"max_seq_len {max_seq_len} too small for pairs")
    budget_a = total_budget // 2
    docs = reader.documents
    for _ in range(MAX_DRAW_TRIES):
        di = int(rng.integers(len(docs)))
        doc = docs[di]
        n = doc.n_sentences
        if mode == "nsp":
            label = int(rng.random() < 0.5)
            s0 = int(rng.integers(n - 1))
            a0, a1, a_end = _run_forward(doc, s0, budget_a,
                                         max_sentence_end=n - 1)
            budget_b = total_budget - (a1 - a0)
            if label == 1:
                b0, b1, _ = _run_forward(doc, a_end, budget_b)
                return _PairDraw(di, (a0, a1), di, (b0, b1), 1, mode)
            dj = _pick_other_doc(reader, rng, di)
            other = docs[dj]
            b0, b1, _ = _run_forward(other, int(rng.integers(other.n_sentences)),
                                     budget_b)
            return _PairDraw(di, (a0, a1), dj, (b0, b1), 0, mode)
        if mode == "asp":
            label = int(rng.integers(3))
            if label == 0:
                s0 = int(rng.integers(n - 1))
                a0, a1, a_end = _run_forward(doc, s0, budget_a,
                                             max_sentence_end=n - 1)
                b0, b1, _ = _run_forward(doc, a_end, total_budget - (a1 - a0))
                return _PairDraw(di, (a0, a1), di, (b0, b1), 0, mode)
            if label == 1:
                s0 = 1 + int(rng.integers(n - 1))
                a0, a1, _ = _run_forward(doc, s0, budget_a)
                b0, b1, _ = _run_backward(doc, s0, total_budget - (a1 - a0))
                return _PairDraw(di, (a0, a1), di, (b0, b1), 1, mode)
            s0 = int(rng.integers(n))
            a0, a1, _ = _run_forward(doc, s0, budget_a)
            dj = _pick_other_doc(reader, rng, di)
            other = docs[dj]
            b0, b1, _ = _run_forward(other, int(rng.integers(other.n_sentences)),
                                     total_budget - (a1 - a0))
            return _PairDraw(di, (a0, a1), dj, (b0, b1), 2, mode)
        if mode == "so":
            s0 = int(rng.integers(n - 1))
            a0, a1, a_end = _run_forward(doc, s0, budget_a,
                                         max_sentence_end=n - 1)
            b0, b1, _ = _run_forward(doc, a_end, total_budget - (a1 - a0))
            swapped = int(rng.random() < 0.5)
            if swapped:
                return _PairDraw(di, (b0, b1), di, (a0, a1), 1, mode)
            return _PairDraw(di, (a0, a1), di, (b0, b1), 0, mode)
        if mode == "sdp":
            label = int(rng.integers(3))
            if label == 0:
                s0 = int(rng.integers(n - 1))
                a0, a1, a_end = _run_forward(doc, s0, budget_a,
                                             max_sentence_end=n - 1)
                b0, b1, _ = _run_forward(doc, a_end, total_budget - (a1 - a0))
                return _PairDraw(di, (a0, a1), di, (b0, b1), 0, mode)
            if label == 1:
                if n < 3:
                    continue
                s0 = int(rng.integers(n - 2))
                a0, a1, a_end = _run_forward(doc, s0, budget_a,
                                             max_sentence_end=n - 2)
                if a_end + 1 >= n:
                    continue
                b_start = a_end + 1 + int(rng.integers(n - a_end - 1))
                b0, b1, _ = _run_forward(doc, b_start,
                                         total_budget - (a1 - a0))
                return _PairDraw(di, (a0, a1), di, (b0, b1), 1, mode)
            s0 = int(rng.integers(n))
            a0, a1, _ = _run_forward(doc, s0, budget_a)
            dj = _pick_other_doc(reader, rng, di)
            other = docs[dj]
            b0, b1, _ = _run_forward(other, int(rng.integers(other.n_sentences)),
                                     total_budget - (a1 - a0))
            return _PairDraw(di, (a0, a1), dj, (b0, b1), 2, mode)
        raise TaskError(f"unknown pair mode {mode!r}")
    raise TaskBuildError(f"could not draw a {mode} pair after "
                         f"{MAX_DRAW_TRIES} attempts")


def build_sentence_pair(reader, mode: str, rng, max_seq_len: int = 128) -> SegmentPair:
    draw = _draw_pair(reader, mode, rng, max_seq_len)
    docs = reader.documents
    a = docs[draw.a_doc].token_ids[draw.a_span[0]:draw.a_span[1]]
    b = docs[draw.b_doc].token_ids[draw.b_span[0]:draw.b_span[1]]
    return SegmentPair(tokens_a=[int(t) for t in a], tokens_b=[int(t) for t in b],
                       pair_label=draw.label, pair_mode=mode)


@dataclass
class _ContinuationDraw:
    doc: int
    # token spans of the two rows; row 2 starts exactly where row 1 ends
    row1: "tuple[int, int]"
    row2: "tuple[int, int]"
    # sentence index ranges when rows are whole-sentence runs, else None
    row1_sents: "tuple[int, int] | None"
    row2_sents: "tuple[int, int] | None"


def _draw_continuation(reader, rng, capacity: int,
                       min_sentences: int) -> _ContinuationDraw:
    docs = reader.documents
    for _ in range(MAX_DRAW_TRIES):
        di = int(rng.integers(len(docs)))
        doc = docs[di]
        off = doc.sentence_offsets
        n = doc.n_sentences
        if n < 2 * min_sentences:
            continue
        s0 = int(rng.integers(n - 2 * min_sentences + 1))
        a_end = s0
        total = 0
        while a_end < n - min_sentences \
                and total + (off[a_end + 1] - off[a_end]) <= capacity:
            total += int(off[a_end + 1] - off[a_end])
            a_end += 1
        if a_end - s0 < min_sentences:
            continue
        b_end = a_end
        total = 0
        while b_end < n and total + (off[b_end + 1] - off[b_end]) <= capacity:
            total += int(off[b_end + 1] - off[b_end])
            b_end += 1
        if b_end - a_end < min_sentences:
            continue
        return _ContinuationDraw(
            di, (int(off[s0]), int(off[a_end])),
            (int(off[a_end]), int(off[b_end])),
            (s0, a_end), (a_end, b_end))
    if min_sentences > 1:
        raise TaskBuildError(
            "no document supports continuation pairing with a sentence-"
            f"boundary split at capacity {capacity}")
    # mid-sentence fallback: exact token spans without sentence alignment
    for _ in range(MAX_DRAW_TRIES):
        di = int(rng.integers(len(docs)))
        doc = docs[di]
        if doc.n_tokens < 2:
            continue
        half = min(capacity, max(1, doc.n_tokens // 2))
        t0 = int(rng.integers(max(1, doc.n_tokens - 2 * half + 1)))
        mid = t0 + half
        end = min(doc.n_tokens, mid + half)
        if mid <= t0 or end <= mid:
            continue
        return _ContinuationDraw(di, (t0, mid), (mid, end), None, None)
    raise TaskBuildError("no document long enough for continuation pairing")


# ------------------------------------------------------------ row assembly

def _slots_from_span(doc, start: int, end: int, seg: int) -> "list[TokenSlot]":
    ids = doc.token_ids[start:end]
    tf = doc.tf[start:end]
    tfidf = doc.tfidf[start:end]
    flags = doc.flags[start:end]
    return [TokenSlot(input_id=int(t), orig_id=int(t), seg=seg,
                      capitalized=bool(flags[k] & FLAG_CAPITALIZED),
                      tf=float(tf[k]), tfidf=float(tfidf[k]))
            for k, t in enumerate(ids)]


def _special_slot(token_id: int, seg: int) -> TokenSlot:
    return TokenSlot(input_id=token_id, orig_id=token_id, special=True, seg=seg)


def _assemble_row(segments: "list[list[TokenSlot]]", vocab) -> "list[TokenSlot]":
    row = [_special_slot(vocab.cls_id, 0)]
    for seg_index, seg in enumerate(segments):
        for slot in seg:
            slot.seg = seg_index
        row.extend(seg)
        row.append(_special_slot(vocab.sep_id, seg_index))
    return row


class _RowDraft:
    __slots__ = ("segments", "meta", "labels", "row", "tgs_start", "tgs_class")

    def __init__(self, segments, meta):
        self.segments = segments
        self.meta = meta
        self.labels: dict = {}
        self.row: "list[TokenSlot]" = []
        self.tgs_start = -1
        self.tgs_class = -1


def _draw_rows(reader, names, rng, batch_size, max_seq_len):
    """Stage 1: choose text and build per-row segment lists."""
    continuation = bool(CONTINUATION_TASKS & set(names))
    pair_mode = next((t for t in ("nsp", "asp", "sdp", "so") if t in names), None)
    docs = reader.documents
    rows: "list[_RowDraft]" = []

    if continuation:
        if batch_size % 2 != 0:
            raise TaskBuildError(
                f"continuation pairing needs an even batch size, got {batch_size}")
        with_so = "so" in names
        capacity = max_seq_len - (3 if with_so else 2)
        min_sentences = 2 if with_so else 1
        firsts: "list[_RowDraft]" = []
        seconds: "list[_RowDraft]" = []
        for _ in range(batch_size // 2):
            draw = _draw_continuation(reader, rng, capacity, min_sentences)
            doc = docs[draw.doc]
            for span, sents, bucket in ((draw.row1, draw.row1_sents, firsts),
                                        (draw.row2, draw.row2_sents, seconds)):
                meta = RowMeta(doc_index=draw.doc, token_start=span[0],
                               token_end=span[1])
                if with_so:
                    s_lo, s_hi = sents
                    split = s_lo + 1 + int(rng.integers(s_hi - s_lo - 1))
                    cut = int(doc.sentence_offsets[split])
                    seg_a = _slots_from_span(doc, span[0], cut, 0)
                    seg_b = _slots_from_span(doc, cut, span[1], 1)
                    swapped = int(rng.random() < 0.5)
                    segments = [seg_b, seg_a] if swapped else [seg_a, seg_b]
                    draft = _RowDraft(segments, meta)
                    draft.labels["so"] = swapped
                else:
                    draft = _RowDraft([_slots_from_span(doc, span[0], span[1], 0)],
                                      meta)
                bucket.append(draft)
        rows = firsts + seconds
        return rows, True

    if pair_mode is not None:
        for _ in range(batch_size):
            draw = _draw_pair(reader, pair_mode, rng, max_seq_len)
            seg_a = _slots_from_span(docs[draw.a_doc], *draw.a_span, 0)
            seg_b = _slots_from_span(docs[draw.b_doc], *draw.b_span, 1)
            meta = RowMeta(doc_index=draw.a_doc, token_start=draw.a_span[0],
                           token_end=draw.a_span[1], b_doc_index=draw.b_doc,
                           b_token_start=draw.b_span[0],
                           b_token_end=draw.b_span[1])
            draft = _RowDraft([seg_a, seg_b], meta)
            draft.labels[pair_mode] = draw.label
            rows.append(draft)
        return rows, False

    budget = max_seq_len - 2
    for _ in range(batch_size):
        di = int(rng.integers(len(docs)))
        doc = docs[di]
        s0 = int(rng.integers(doc.n_sentences))
        a0, a1, _ = _run_forward(doc, s0, budget)
        meta = RowMeta(doc_index=di, token_start=a0, token_end=a1)
        rows.append(_RowDraft([_slots_from_span(doc, a0, a1, 0)], meta))
    return rows, False


def assemble_batch(reader, vocab, task_set, batch_size: int, max_seq_len: int,
                   seed: int = 0, step: int = 0, task_id: int = 0,
                   rng=None) -> TrainingBatch:
    """Build one fixed-shape batch for the given task set.

    Deterministic given (seed, step); the rng argument overrides that
    derivation when a caller manages its own stream.
    """
    names = [canonical_task(t) for t in task_set]
    validate_compatibility(names)
    if rng is None:
        rng = np.random.default_rng([abs(int(seed)), int(step), 11])
    name_set = set(names)

    rows, continuation = _draw_rows(reader, name_set, rng, batch_size,
                                    max_seq_len)

    corrupt = bool(CORRUPTION_TASKS & name_set)
    for draft in rows:
        if corrupt:
            draft.segments = [
                _corrupt_slots(seg, rng, vocab, CORRUPTION_RATE,
                               trim_to=len(seg))
                for seg in draft.segments]
        draft.row = _assemble_row(draft.segments, vocab)
        if "tgs" in name_set:
            hit = _shuffle_trigram_slots(draft.row, rng)
            if hit is not None:
                draft.tgs_start, draft.tgs_class = hit
        if MASKING_TASKS & name_set:
            _mask_slots(draft.row, rng, vocab)

    b, seq = batch_size, max_seq_len
    input_ids = np.full((b, seq), vocab.pad_id, dtype=np.int64)
    type_ids = np.zeros((b, seq), dtype=np.int64)
    attention = np.zeros((b, seq), dtype=bool)
    special = np.ones((b, seq), dtype=bool)
    for r, draft in enumerate(rows):
        if len(draft.row) > seq:
            raise TaskBuildError(
                f"row length {len(draft.row)} exceeds max_seq_len {seq}")
        for c, slot in enumerate(draft.row):
            input_ids[r, c] = slot.input_id
            type_ids[r, c] = slot.seg
            attention[r, c] = True
            special[r, c] = slot.special

    labels: dict = {}
    if MASKING_TASKS & name_set:
        positions, targets = [], []
        for r, draft in enumerate(rows):
            for c, slot in enumerate(draft.row):
                if slot.masked:
                    positions.append((r, c))
                    targets.append(slot.mask_target)
        positions = np.asarray(positions, dtype=np.int64).reshape(-1, 2)
        labels["mlm"] = {
            "positions": positions,
            "targets": np.asarray(targets, dtype=np.int64),
            "left": positions - np.array([0, 1], dtype=np.int64),
            "right": positions + np.array([0, 1], dtype=np.int64),
        }
    for task in ("tf", "tfidf", "tlp"):
        if task not in name_set:
            continue
        values = np.zeros((b, seq))
        weights = np.zeros((b, seq))
        for r, draft in enumerate(rows):
            for c, slot in enumerate(draft.row):
                if slot.special or not slot.from_source:
                    continue
                weights[r, c] = 1.0
                if task == "tf":
                    values[r, c] = slot.tf
                elif task == "tfidf":
                    values[r, c] = slot.tfidf
                else:
                    values[r, c] = float(vocab.piece_char_lengths[slot.orig_id])
        labels[task] = {"values": values, "weights": weights}
    if "cap" in name_set:
        grid = np.zeros((b, seq), dtype=np.int64)
        weights = np.zeros((b, seq))
        for r, draft in enumerate(rows):
            for c, slot in enumerate(draft.row):
                if not slot.special and slot.from_source:
                    weights[r, c] = 1.0
                    grid[r, c] = int(slot.capitalized)
        labels["cap"] = {"labels": grid, "weights": weights}
    if "tcp" in name_set:
        grid = np.zeros((b, seq), dtype=np.int64)
        weights = np.zeros((b, seq))
        for r, draft in enumerate(rows):
            for c, slot in enumerate(draft.row):
                if not slot.special:
                    weights[r, c] = 1.0
                    grid[r, c] = int(slot.corrupted)
        labels["tcp"] = {"labels": grid, "weights": weights}
    if "scp" in name_set:
        labels["scp"] = np.asarray(
            [int(any(s.corrupted for s in draft.row)) for draft in rows],
            dtype=np.int64)
    if "tgs" in name_set:
        labels["tgs"] = {
            "starts": np.asarray([d.tgs_start for d in rows], dtype=np.int64),
            "labels": np.asarray([d.tgs_class for d in rows], dtype=np.int64),
        }
    for task in PAIR_TASKS:
        if task in name_set:
            labels[task] = np.asarray(
                [draft.labels[task] for draft in rows], dtype=np.int64)

    return TrainingBatch(input_ids=input_ids, type_ids=type_ids,
                         attention_mask=attention, special_mask=special,
                         task_id=task_id, task_set=tuple(names),
                         continuation_paired=continuation, labels=labels,
                         meta=[draft.meta for draft in rows])
