import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from contextual.corpus import (
    ClinicalNote,
    detokenize,
    flatten_note,
    load_corpus,
    token_id,
    tokenize,
    write_corpus,
)
from contextual.errors import DuplicateNoteId, ParseError, UnknownTag

TABLE5_INPUT = (
    "<SEX> M, <SERVICE> MEDICINE, <ALLERGIES> ibuprofen, <CHIEF COMPLAINT> Fever, altered mental status. "
    "This is a middle-aged male with a past medical history significant for ruptured AVM, status post "
    "craniotomy, and prior intracranial abscess, who is presenting today to the emergency department with "
    "fever and altered mental status. On admission, he was noted to be febrile and somewhat confused. A "
    "non-contrast CT scan of the head was performed which showed no acute intracranial abnormalities. "
    "Laboratory workup revealed elevated CRP and thrombocytosis. The patient was subsequently diagnosed "
    "with a urinary tract infection due to Klebsiella species and prostatitis. He was started on "
    "broad-spectrum antibiotics. Neurology and infectious disease teams were consulted for further "
    "management. A PET scan was obtained which was suggestive of prostatitis."
)


def _write_lines(path, lines):
    path.write_text("\n".join(lines), encoding="utf-8")
    return path


def _rec(note_id, **extra):
    return json.dumps({"note_id": note_id, "patient_id": "P1", "text": "t", "tags": {}, **extra})


class TestLoadCorpus:
    def test_three_lines_in_order(self, tmp_path):
        path = _write_lines(tmp_path / "n.jsonl", [_rec("a"), _rec("b"), _rec("c")])
        assert [n.note_id for n in load_corpus(path)] == ["a", "b", "c"]

    def test_missing_note_id_reports_line(self, tmp_path):
        bad = json.dumps({"patient_id": "P1", "text": "t"})
        path = _write_lines(tmp_path / "n.jsonl", [_rec("a"), bad, _rec("c")])
        with pytest.raises(ParseError) as err:
            load_corpus(path)
        assert (err.value.line, err.value.reason) == (2, "missing note_id")

    def test_all_bad_lines_are_listed(self, tmp_path):
        path = _write_lines(tmp_path / "n.jsonl", ["{oops", _rec("a"), json.dumps({"text": "x"})])
        with pytest.raises(ParseError) as err:
            load_corpus(path)
        assert [ln for ln, _ in err.value.problems] == [1, 3]

    def test_empty_file(self, tmp_path):
        path = tmp_path / "n.jsonl"
        path.write_text("")
        assert load_corpus(path) == []

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_corpus(tmp_path / "absent.jsonl")

    def test_duplicate_ids(self, tmp_path):
        path = _write_lines(tmp_path / "n.jsonl", [_rec("a"), _rec("a")])
        with pytest.raises(DuplicateNoteId):
            load_corpus(path)

    def test_round_trip(self, tmp_path, data_dir):
        notes = load_corpus(data_dir / "fixture_notes.jsonl")
        write_corpus(notes, tmp_path / "copy.jsonl")
        again = load_corpus(tmp_path / "copy.jsonl")
        assert again == notes
        assert [list(n.tags) for n in again] == [list(n.tags) for n in notes]

    def test_trailing_newline_optional(self, tmp_path):
        path = tmp_path / "n.jsonl"
        path.write_text(_rec("a") + "\n" + _rec("b") + "\n")
        assert len(load_corpus(path)) == 2


class TestTokenize:
    def test_empty(self):
        seq = tokenize("")
        assert len(seq) == 0 and seq.positions == () and seq.vocab_ids == ()

    def test_punctuation_split(self):
        seq = tokenize("Fever, altered mental status.")
        assert seq.tokens == ("Fever", ",", "altered", "mental", "status", ".")
        assert seq.positions == tuple(range(6))

    def test_tags_stay_whole(self):
        seq = tokenize("<CHIEF COMPLAINT> Fever <SEX> M")
        assert seq.tokens == ("<CHIEF COMPLAINT>", "Fever", "<SEX>", "M")

    def test_internal_punctuation_kept(self):
        assert tokenize("non-contrast (CT).").tokens == ("non-contrast", "(", "CT", ")", ".")

    def test_vocab_id_is_truncated_fnv1a(self):
        # FNV-1a 64-bit of "a" is 0xaf63dc4c8601ec8c; low 32 bits:
        assert token_id("a") == 0x8601EC8C
        assert token_id("") == 0xCBF29CE484222325 & 0xFFFFFFFF

    def test_lengths_and_ids_agree(self):
        seq = tokenize("<SEX> F, fever; cough!")
        assert len(seq.tokens) == len(seq.positions) == len(seq.vocab_ids)
        assert seq.vocab_ids == tuple(token_id(t) for t in seq.tokens)

    def test_detokenize_normalized_text_is_identity(self):
        text = "A B <SEX> M c , d"
        assert detokenize(tokenize(text).tokens) == text

    @given(st.text(max_size=80))
    @settings(max_examples=300)
    def test_idempotent(self, text):
        once = tokenize(text)
        assert tokenize(detokenize(once.tokens)) == once

    @given(st.text(alphabet=st.sampled_from("ab <>CHIEFSX,.-\n\t"), max_size=60))
    @settings(max_examples=300)
    def test_idempotent_tag_heavy(self, text):
        once = tokenize(text)
        assert tokenize(detokenize(once.tokens)) == once
        assert list(once.positions) == list(range(len(once)))


class TestFlatten:
    def test_single_tag(self):
        assert flatten_note(ClinicalNote("n", "p", "b", {"SEX": "M"})) == "<SEX> M b"

    def test_no_tags(self):
        assert flatten_note(ClinicalNote("n", "p", "x")) == "x"

    def test_tag_order_override(self):
        note = ClinicalNote("n", "p", "b", {"SEX": "M", "SERVICE": "MED"})
        assert flatten_note(note, ["SERVICE", "SEX"]) == "<SERVICE> MED, <SEX> M b"

    def test_unknown_tag(self):
        with pytest.raises(UnknownTag):
            flatten_note(ClinicalNote("n", "p", "b", {"SEX": "M"}), ["SERVICE"])

    def test_worked_example_input(self, data_dir):
        (note,) = load_corpus(data_dir / "worked_example_note.jsonl")
        assert flatten_note(note) == TABLE5_INPUT
