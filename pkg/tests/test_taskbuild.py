import itertools
import math

import numpy as np
import pytest

from mtpretrain import taskbuild as tb
from mtpretrain.corpus import FLAG_CAPITALIZED


def content_mask(batch):
    return batch.attention_mask & ~batch.special_mask


def doc_tokens(reader, meta):
    return reader.documents[meta.doc_index].token_ids[
        meta.token_start:meta.token_end]


# ---------------------------------------------------------------- masking

def test_masking_statistics_three_sigma(small_reader, word_vocab):
    n_content = 0
    n_selected = 0
    bucket_mask = 0
    bucket_keep = 0
    for step in range(20):
        batch = tb.assemble_batch(small_reader, word_vocab, ("mlm",), 32, 64,
                                  seed=100, step=step)
        content = content_mask(batch)
        n_content += int(content.sum())
        lab = batch.labels["mlm"]
        pos = lab["positions"]
        n_selected += pos.shape[0]
        inputs = batch.input_ids[pos[:, 0], pos[:, 1]]
        bucket_mask += int((inputs == word_vocab.mask_id).sum())
        bucket_keep += int((inputs == lab["targets"]).sum())
    assert n_content > 10_000
    sigma = math.sqrt(n_content * tb.MLM_RATE * (1 - tb.MLM_RATE))
    assert abs(n_selected - tb.MLM_RATE * n_content) < 3 * sigma

    sigma = math.sqrt(n_selected * 0.8 * 0.2)
    assert abs(bucket_mask - 0.8 * n_selected) < 3 * sigma
    # a random replacement can coincide with the original id, so the
    # observed keep rate is 10% plus 10%/|regular vocab|
    p_keep = 0.1 + 0.1 / len(word_vocab.sampleable_ids)
    sigma = math.sqrt(n_selected * p_keep * (1 - p_keep))
    assert abs(bucket_keep - p_keep * n_selected) < 3 * sigma


def test_every_row_gets_at_least_one_mask(small_reader, word_vocab):
    for step in range(5):
        batch = tb.assemble_batch(small_reader, word_vocab, ("mlm",), 16, 24,
                                  seed=4, step=step)
        rows_hit = set(batch.labels["mlm"]["positions"][:, 0].tolist())
        assert rows_hit == set(range(16))


def test_mask_targets_match_source_document(small_reader, word_vocab):
    batch = tb.assemble_batch(small_reader, word_vocab, ("mlm",), 8, 48,
                              seed=5, step=0)
    lab = batch.labels["mlm"]
    for (r, c), target in zip(lab["positions"], lab["targets"]):
        meta = batch.meta[r]
        src = doc_tokens(small_reader, meta)
        assert target == src[c - 1]  # column 0 is the [CLS] slot


def test_masked_positions_never_special(small_reader, word_vocab):
    batch = tb.assemble_batch(small_reader, word_vocab, ("mlm",), 8, 32,
                              seed=6, step=0)
    pos = batch.labels["mlm"]["positions"]
    assert not batch.special_mask[pos[:, 0], pos[:, 1]].any()
    left, right = batch.labels["mlm"]["left"], batch.labels["mlm"]["right"]
    assert np.array_equal(left, pos - np.array([0, 1]))
    assert np.array_equal(right, pos + np.array([0, 1]))


def test_random_replacements_are_regular_tokens(small_reader, word_vocab):
    replaced = []
    for step in range(20):
        batch = tb.assemble_batch(small_reader, word_vocab, ("mlm",), 16, 48,
                                  seed=7, step=step)
        lab = batch.labels["mlm"]
        pos = lab["positions"]
        inputs = batch.input_ids[pos[:, 0], pos[:, 1]]
        rand = (inputs != word_vocab.mask_id) & (inputs != lab["targets"])
        replaced.extend(inputs[rand].tolist())
    assert replaced
    special = set(word_vocab.special_ids)
    assert not (set(replaced) & special)


def test_apply_mlm_mask_wrapper(word_vocab):
    ids = [word_vocab.cls_id] + list(word_vocab.sampleable_ids[:20]) \
        + [word_vocab.sep_id]
    out = tb.apply_mlm_mask(ids, np.random.default_rng(0), word_vocab)
    assert len(out.input_ids) == len(ids)
    assert out.mask_positions
    for pos in out.mask_positions:
        assert 0 < pos < len(ids) - 1
        assert out.mlm_targets[pos] == ids[pos]


# ------------------------------------------------------------- determinism

def test_batches_deterministic_in_seed_and_step(small_reader, word_vocab):
    a = tb.assemble_batch(small_reader, word_vocab, ("mlm", "tfidf"), 8, 32,
                          seed=9, step=3)
    b = tb.assemble_batch(small_reader, word_vocab, ("mlm", "tfidf"), 8, 32,
                          seed=9, step=3)
    c = tb.assemble_batch(small_reader, word_vocab, ("mlm", "tfidf"), 8, 32,
                          seed=9, step=4)
    assert np.array_equal(a.input_ids, b.input_ids)
    assert np.array_equal(a.labels["mlm"]["positions"],
                          b.labels["mlm"]["positions"])
    assert not np.array_equal(a.input_ids, c.input_ids)


def test_explicit_rng_matches_seed_step_derivation(small_reader, word_vocab):
    a = tb.assemble_batch(small_reader, word_vocab, ("mlm",), 4, 32,
                          seed=9, step=3)
    b = tb.assemble_batch(small_reader, word_vocab, ("mlm",), 4, 32,
                          rng=np.random.default_rng([9, 3, 11]))
    assert np.array_equal(a.input_ids, b.input_ids)


# ------------------------------------------------------------ token labels

def test_tf_tfidf_values_copied_from_store(small_reader, word_vocab):
    batch = tb.assemble_batch(small_reader, word_vocab, ("tf", "tfidf"),
                              8, 40, seed=11, step=0)
    content = content_mask(batch)
    for task in ("tf", "tfidf"):
        lab = batch.labels[task]
        assert np.array_equal(lab["weights"] > 0, content)
        for r in range(8):
            meta = batch.meta[r]
            doc = small_reader.documents[meta.doc_index]
            stored = getattr(doc, task)[meta.token_start:meta.token_end]
            cols = np.nonzero(content[r])[0]
            assert np.allclose(lab["values"][r, cols],
                               stored.astype(np.float64))


def test_tlp_values_are_piece_character_lengths(small_reader, word_vocab):
    batch = tb.assemble_batch(small_reader, word_vocab, ("tlp",), 8, 40,
                              seed=12, step=0)
    lab = batch.labels["tlp"]
    content = content_mask(batch)
    lengths = np.asarray(word_vocab.piece_char_lengths)
    for r in range(8):
        cols = np.nonzero(content[r])[0]
        assert np.array_equal(lab["values"][r, cols],
                              lengths[batch.input_ids[r, cols]])


def test_cap_labels_match_store_flags(small_reader, word_vocab):
    batch = tb.assemble_batch(small_reader, word_vocab, ("cap",), 8, 40,
                              seed=13, step=0)
    lab = batch.labels["cap"]
    content = content_mask(batch)
    assert np.array_equal(lab["weights"] > 0, content)
    for r in range(8):
        meta = batch.meta[r]
        doc = small_reader.documents[meta.doc_index]
        flags = doc.flags[meta.token_start:meta.token_end]
        want = (flags & FLAG_CAPITALIZED) > 0
        cols = np.nonzero(content[r])[0]
        assert np.array_equal(lab["labels"][r, cols].astype(bool), want)
        assert lab["labels"][r].sum() > 0  # sentence-initial words


# -------------------------------------------------------------- corruption

def test_corruption_labels_and_sentence_flag(small_reader, word_vocab):
    n_content = 0
    n_corrupt = 0
    for step in range(10):
        batch = tb.assemble_batch(small_reader, word_vocab,
                                  ("tf", "tcp", "scp"), 16, 40,
                                  seed=14, step=step)
        tcp = batch.labels["tcp"]
        content = content_mask(batch)
        assert np.array_equal(tcp["weights"] > 0, content)
        row_any = (tcp["labels"] * (tcp["weights"] > 0)).any(axis=1)
        assert np.array_equal(batch.labels["scp"].astype(bool), row_any)
        # inserted/replaced tokens score for corruption detection but are
        # excluded from the source-grounded regressions
        synthetic = content & (batch.labels["tf"]["weights"] == 0)
        assert np.all(tcp["labels"][synthetic] == 1)
        n_content += int(content.sum())
        n_corrupt += int(tcp["labels"][content].sum())
    rate = n_corrupt / n_content
    assert 0.05 < rate < 0.30


def test_corruption_preserves_shapes_and_determinism(small_reader, word_vocab):
    a = tb.assemble_batch(small_reader, word_vocab, ("tcp", "scp"), 8, 32,
                          seed=15, step=2)
    b = tb.assemble_batch(small_reader, word_vocab, ("tcp", "scp"), 8, 32,
                          seed=15, step=2)
    assert a.input_ids.shape == (8, 32)
    assert np.array_equal(a.input_ids, b.input_ids)
    assert np.array_equal(a.labels["scp"], b.labels["scp"])


def test_corrupt_tokens_wrapper_trims_to_length(word_vocab):
    ids = list(word_vocab.sampleable_ids[:30])
    rec = tb.corrupt_tokens(ids, np.random.default_rng(3), word_vocab,
                            max_len=30)
    assert len(rec.corrupted_ids) == 30
    assert rec.sentence_label == any(rec.token_labels)


def test_uncorrupted_rows_get_label_zero(small_reader, word_vocab):
    labels = []
    for step in range(10):
        batch = tb.assemble_batch(small_reader, word_vocab, ("scp",), 16, 40,
                                  seed=16, step=step)
        labels.extend(batch.labels["scp"].tolist())
    assert 0 in labels and 1 in labels


# ---------------------------------------------------------- trigram shuffle

def test_trigram_shuffle_matches_permutation_table(small_reader, word_vocab):
    for step in range(6):
        batch = tb.assemble_batch(small_reader, word_vocab, ("tgs",), 16, 40,
                                  seed=17, step=step)
        lab = batch.labels["tgs"]
        for r in range(16):
            start, klass = int(lab["starts"][r]), int(lab["labels"][r])
            if start < 0:
                continue
            perm = tb.TRIGRAM_PERMS[klass]
            src = doc_tokens(small_reader, batch.meta[r])
            origin = start - 1  # visible column 1 is the first content token
            visible = batch.input_ids[r, start:start + 3]
            expect = [src[origin + perm[i]] for i in range(3)]
            assert visible.tolist() == expect


def test_trigram_classes_roughly_uniform(small_reader, word_vocab):
    counts = np.zeros(6, dtype=int)
    for step in range(40):
        batch = tb.assemble_batch(small_reader, word_vocab, ("tgs",), 16, 40,
                                  seed=18, step=step)
        lab = batch.labels["tgs"]
        for klass in lab["labels"][lab["starts"] >= 0]:
            counts[klass] += 1
    n = counts.sum()
    sigma = math.sqrt(n * (1 / 6) * (5 / 6))
    assert np.all(np.abs(counts - n / 6) < 4 * sigma)


def test_trigram_too_short_rows_flagged_invalid(small_reader, word_vocab):
    # two content slots per row: no trigram fits anywhere
    batch = tb.assemble_batch(small_reader, word_vocab, ("tgs",), 8, 4,
                              seed=19, step=0)
    lab = batch.labels["tgs"]
    assert np.all(lab["starts"] == -1)
    assert np.all(lab["labels"] == -1)


def test_shuffle_trigram_wrapper(word_vocab):
    ids = list(word_vocab.sampleable_ids[:10])
    out = tb.shuffle_trigram(list(ids), np.random.default_rng(5), word_vocab)
    assert out is not None
    perm = tb.TRIGRAM_PERMS[out.perm_class]
    s = out.start
    assert out.ids[s:s + 3] == [ids[s + perm[i]] for i in range(3)]
    assert tb.shuffle_trigram([word_vocab.cls_id] * 4,
                              np.random.default_rng(0), word_vocab) is None


# -------------------------------------------------------------- pair tasks

def pair_batches(reader, vocab, mode, n=25, batch_size=16, seq=32, seed=20):
    for step in range(n):
        yield tb.assemble_batch(reader, vocab, (mode,), batch_size, seq,
                                seed=seed, step=step)


def test_pair_row_layout(small_reader, word_vocab):
    batch = tb.assemble_batch(small_reader, word_vocab, ("nsp",), 16, 32,
                              seed=21, step=0)
    budget_a = (32 - 3) // 2
    for r in range(16):
        row = batch.input_ids[r]
        att = batch.attention_mask[r]
        n = int(att.sum())
        assert row[0] == word_vocab.cls_id
        seps = np.nonzero(row[:n] == word_vocab.sep_id)[0]
        assert len(seps) == 2 and seps[1] == n - 1
        assert np.all(row[n:] == word_vocab.pad_id)
        # type 0 through the first separator, type 1 after it
        assert np.all(batch.type_ids[r, :seps[0] + 1] == 0)
        assert np.all(batch.type_ids[r, seps[0] + 1:n] == 1)
        assert seps[0] - 1 <= budget_a
        # specials are exactly [CLS], the two [SEP]s, and padding
        specials = np.nonzero(batch.special_mask[r])[0]
        assert set(specials.tolist()) == {0, *seps.tolist(),
                                          *range(n, 32)}


def test_nsp_labels_and_provenance(small_reader, word_vocab):
    ones = 0
    total = 0
    for batch in pair_batches(small_reader, word_vocab, "nsp"):
        for r, label in enumerate(batch.labels["nsp"]):
            m = batch.meta[r]
            if label == 1:
                assert m.b_doc_index == m.doc_index
                assert m.b_token_start == m.token_end
            else:
                assert m.b_doc_index != m.doc_index
            ones += int(label)
            total += 1
    sigma = math.sqrt(total * 0.25)
    assert abs(ones - total / 2) < 3 * sigma


def test_asp_three_way_labels(small_reader, word_vocab):
    counts = np.zeros(3, dtype=int)
    for batch in pair_batches(small_reader, word_vocab, "asp"):
        for r, label in enumerate(batch.labels["asp"]):
            m = batch.meta[r]
            if label == 0:       # B continues A
                assert m.b_doc_index == m.doc_index
                assert m.b_token_start == m.token_end
            elif label == 1:     # B immediately precedes A
                assert m.b_doc_index == m.doc_index
                assert m.b_token_end == m.token_start
            else:                # B foreign
                assert m.b_doc_index != m.doc_index
            counts[label] += 1
    n = counts.sum()
    sigma = math.sqrt(n * (1 / 3) * (2 / 3))
    assert np.all(np.abs(counts - n / 3) < 4 * sigma)


def test_sdp_three_way_labels(small_reader, word_vocab):
    counts = np.zeros(3, dtype=int)
    for batch in pair_batches(small_reader, word_vocab, "sdp"):
        for r, label in enumerate(batch.labels["sdp"]):
            m = batch.meta[r]
            if label == 0:
                assert m.b_doc_index == m.doc_index
                assert m.b_token_start == m.token_end
            elif label == 1:     # same document, at least one sentence apart
                assert m.b_doc_index == m.doc_index
                assert m.b_token_start > m.token_end
            else:
                assert m.b_doc_index != m.doc_index
            counts[label] += 1
    n = counts.sum()
    sigma = math.sqrt(n * (1 / 3) * (2 / 3))
    assert np.all(np.abs(counts - n / 3) < 4 * sigma)


def test_so_standalone_swap_semantics(small_reader, word_vocab):
    ones = 0
    total = 0
    for batch in pair_batches(small_reader, word_vocab, "so"):
        for r, label in enumerate(batch.labels["so"]):
            m = batch.meta[r]
            assert m.b_doc_index == m.doc_index
            if label == 1:       # swapped: visible A is really the later run
                assert m.token_start == m.b_token_end
            else:
                assert m.b_token_start == m.token_end
            ones += int(label)
            total += 1
    sigma = math.sqrt(total * 0.25)
    assert abs(ones - total / 2) < 3 * sigma


def test_foreign_segment_needs_second_document(small_reader, word_vocab):
    single = small_reader.subset([0])
    with pytest.raises(tb.TaskBuildError):
        tb.assemble_batch(single, word_vocab, ("nsp",), 4, 32, seed=1)


# ------------------------------------------------------------ continuation

def test_continuation_rows_contiguous(small_reader, word_vocab):
    for task_set in (("qt",), ("fs",), ("qt", "fs"), ("mlm", "qt")):
        batch = tb.assemble_batch(small_reader, word_vocab, task_set, 16, 32,
                                  seed=23, step=1)
        assert batch.continuation_paired
        for i in range(8):
            a, b = batch.meta[i], batch.meta[i + 8]
            assert a.doc_index == b.doc_index
            assert a.token_end == b.token_start


def test_continuation_visible_tokens_match_corpus(small_reader, word_vocab):
    batch = tb.assemble_batch(small_reader, word_vocab, ("qt", "fs"), 8, 32,
                              seed=24, step=0)
    content = content_mask(batch)
    for r in range(8):
        cols = np.nonzero(content[r])[0]
        visible = batch.input_ids[r, cols]
        assert np.array_equal(visible, doc_tokens(small_reader, batch.meta[r]))


def test_continuation_odd_batch_rejected(small_reader, word_vocab):
    with pytest.raises(tb.TaskBuildError):
        tb.assemble_batch(small_reader, word_vocab, ("qt",), 7, 32)


def test_so_within_continuation_unswap_restores_corpus(small_reader,
                                                       word_vocab):
    for step in range(10):
        batch = tb.assemble_batch(small_reader, word_vocab,
                                  ("mlm", "so", "qt"), 16, 40,
                                  seed=25, step=step)
        stream = batch.input_ids.copy()
        lab = batch.labels["mlm"]
        stream[lab["positions"][:, 0], lab["positions"][:, 1]] = lab["targets"]
        for r in range(16):
            types = batch.type_ids[r]
            content = content_mask(batch)[r]
            seg_a = stream[r][(types == 0) & content]
            seg_b = stream[r][(types == 1) & content]
            if batch.labels["so"][r] == 1:
                restored = np.concatenate([seg_b, seg_a])
            else:
                restored = np.concatenate([seg_a, seg_b])
            assert np.array_equal(restored,
                                  doc_tokens(small_reader, batch.meta[r]))
        for i in range(8):
            a, b = batch.meta[i], batch.meta[i + 8]
            assert a.doc_index == b.doc_index and a.token_end == b.token_start


def test_so_in_continuation_has_two_visible_segments(small_reader, word_vocab):
    batch = tb.assemble_batch(small_reader, word_vocab, ("so", "qt"), 8, 40,
                              seed=26, step=0)
    for r in range(8):
        att = batch.attention_mask[r]
        assert set(batch.type_ids[r][att].tolist()) == {0, 1}
    assert batch.labels["so"].shape == (8,)


# ------------------------------------------------------------ batch schema

def test_final_set_schema(small_reader, word_vocab):
    batch = tb.assemble_batch(small_reader, word_vocab,
                              ("mlm", "qt", "so", "tfidf"), 8, 40,
                              seed=27, step=0)
    assert batch.task_set == ("mlm", "qt", "so", "tfidf")
    assert batch.input_ids.shape == (8, 40)
    assert batch.input_ids.dtype == np.int64
    assert batch.type_ids.shape == (8, 40)
    assert batch.attention_mask.dtype == np.bool_
    assert batch.special_mask.dtype == np.bool_
    lab = batch.labels
    assert set(lab) == {"mlm", "so", "tfidf"}
    n_masked = lab["mlm"]["positions"].shape[0]
    assert lab["mlm"]["positions"].shape == (n_masked, 2)
    assert lab["mlm"]["targets"].shape == (n_masked,)
    assert lab["tfidf"]["values"].shape == (8, 40)
    assert lab["tfidf"]["weights"].shape == (8, 40)
    assert lab["so"].dtype == np.int64
    assert len(batch.meta) == 8


def test_task_id_passes_through(small_reader, word_vocab):
    batch = tb.assemble_batch(small_reader, word_vocab, ("mlm",), 4, 24,
                              seed=28, step=0, task_id=5)
    assert batch.task_id == 5


def test_incompatible_set_rejected(small_reader, word_vocab):
    with pytest.raises(Exception):
        tb.assemble_batch(small_reader, word_vocab, ("so", "nsp"), 4, 24)


def test_padding_rows_marked_special_and_unattended(small_reader, word_vocab):
    batch = tb.assemble_batch(small_reader, word_vocab, ("mlm",), 8, 60,
                              seed=29, step=0)
    pad = ~batch.attention_mask
    assert pad.any()
    assert batch.special_mask[pad].all()
    assert np.all(batch.input_ids[pad] == word_vocab.pad_id)
