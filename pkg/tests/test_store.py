from __future__ import annotations

import json
import threading
import warnings

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from soatest.errors import CorruptJournal, StoreUnavailable, UnknownCase
from soatest.registry import OperationSignature, Protocol, ServerAddress, ServiceDescriptor
from soatest.store import Journal, ResultRecord, State, load_all, successful_cases
from soatest.testgen import CaseStatus, ExpectedSource, TestCase
from soatest.values import TypedValue, ValueType

ADD = OperationSignature("add", (("x", ValueType.INT), ("y", ValueType.INT)), ValueType.INT)


def service(sid: int) -> dict:
    return ServiceDescriptor(
        sid, f"s{sid}", Protocol.REST, (ServerAddress("127.0.0.1", 1000 + sid, "/"),), (ADD,)
    ).to_dict()


def case(cid: str, sid: int = 5, x: int = 1) -> dict:
    return TestCase(cid, sid, "add", (TypedValue.int(x), TypedValue.int(2)), ExpectedSource.oracle()).to_dict()


def result(cid: str, run: str, ok: bool, sid: int = 5) -> dict:
    return ResultRecord(cid, run, sid, ok, None if ok else "MISMATCH", TypedValue.int(3), TypedValue.int(3 if ok else 4)).to_dict()


def seed(j: Journal) -> None:
    j.append("SERVICE", service(5))
    j.append("CASE", case("c1"))
    j.append("CASE", case("c2", x=7))
    j.append("RUN", {"run_id": "r1", "phase": "start", "kind": "full", "config": {}, "at": "t0"})
    j.append("RESULT", result("c1", "r1", True))
    j.append("RESULT", result("c2", "r1", False))
    j.append("RUN", {"run_id": "r1", "phase": "end", "at": "t1", "duration_s": 0.5})
    j.append("BASELINE", {"case_id": "c2", "value": TypedValue.int(9).to_dict()})


def test_append_assigns_contiguous_seq(journal):
    seqs = [journal.append("CASE", case(f"c{i}")) for i in range(5)]
    assert seqs == [1, 2, 3, 4, 5]
    lines = journal.path.read_text().splitlines()
    assert [json.loads(l)["seq"] for l in lines] == seqs
    assert list(json.loads(lines[0])) == ["seq", "type", "written_at", "payload"]


def test_fold_contents(journal):
    seed(journal)
    s = journal.state
    assert s.last_seq == 8
    assert s.cases["c1"].status is CaseStatus.SUCCESSFUL
    assert s.cases["c2"].status is CaseStatus.UNSUCCESSFUL
    assert s.runs["r1"].duration_s == 0.5
    assert s.baselines["c2"] == TypedValue.int(9)
    assert [r.case_id for r in journal.results_for_run("r1")] == ["c1", "c2"]


def test_reopen_reproduces_state(journal_path):
    with Journal(journal_path) as j:
        seed(j)
        before = j.snapshot()
    with Journal(journal_path) as j:
        assert j.state == before
    assert load_all(journal_path) == before


ops = st.lists(
    st.one_of(
        st.tuples(st.just("case"), st.integers(0, 5), st.integers(-5, 5)),
        st.tuples(st.just("result"), st.integers(0, 5), st.booleans()),
        st.tuples(st.just("baseline"), st.integers(0, 5), st.integers(-5, 5)),
    ),
    max_size=30,
)


@settings(max_examples=60)
@given(ops)
def test_replay_equals_live_state(tmp_path_factory, script):
    path = tmp_path_factory.mktemp("j") / "journal.jsonl"
    with Journal(path, durable=False) as j:
        j.append("SERVICE", service(5))
        for kind, n, arg in script:
            cid = f"c{n}"
            if kind == "case":
                j.append("CASE", case(cid, x=arg))
            elif kind == "result" and cid in j.state.cases:
                j.append("RESULT", result(cid, "r", arg))
            elif kind == "baseline":
                j.append("BASELINE", {"case_id": cid, "value": TypedValue.int(arg).to_dict()})
        live = j.snapshot()
    assert load_all(path) == live


def test_truncated_final_line(journal_path):
    with Journal(journal_path) as j:
        seed(j)
        expected = j.snapshot()
        j.append("CASE", case("c9"))
    data = journal_path.read_bytes()
    journal_path.write_bytes(data[: len(data) - 15])
    with pytest.warns(CorruptJournal) as rec:
        state = load_all(journal_path)
    assert state == expected
    warning = rec[0].message
    assert warning.last_valid_seq == 8
    assert warning.line_no == 9


def test_reopen_truncates_corrupt_tail_and_continues(journal_path):
    with Journal(journal_path) as j:
        seed(j)
    with open(journal_path, "ab") as fh:
        fh.write(b'{"seq": 9, "type": "CA')
    with pytest.warns(CorruptJournal):
        j = Journal(journal_path)
    with j:
        assert j.append("CASE", case("c3")) == 9
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        state = load_all(journal_path)
    assert "c3" in state.cases and state.last_seq == 9


def test_missing_final_newline_is_repaired(journal_path):
    with Journal(journal_path) as j:
        j.append("CASE", case("c1"))
    journal_path.write_bytes(journal_path.read_bytes().rstrip(b"\n"))
    with Journal(journal_path) as j:
        j.append("CASE", case("c2"))
    assert set(load_all(journal_path).cases) == {"c1", "c2"}


@pytest.mark.parametrize(
    "bad_line",
    [
        b"not json\n",
        b'{"seq": 1, "type": "CASE", "payload": {}}\n',
        b'{"seq": 0, "type": "CASE", "payload": {}}\n',
        b'{"seq": 3, "type": "CASE", "payload": []}\n',
        b'{"seq": 3, "type": "RESULT", "payload": {"case_id": "ghost", "run_id": "r", "service_id": 5, "successful": true}}\n',
        b"\xff\xfe\n",
    ],
)
def test_corrupt_middle_line_loads_prefix(journal_path, bad_line):
    with Journal(journal_path) as j:
        j.append("SERVICE", service(5))
        j.append("CASE", case("c1"))
    good = journal_path.read_bytes()
    journal_path.write_bytes(good + bad_line + b'{"seq": 9, "type": "CASE", "payload": ' + json.dumps(case("c2")).encode() + b"}\n")
    with pytest.warns(CorruptJournal) as rec:
        state = load_all(journal_path)
    assert set(state.cases) == {"c1"}
    assert rec[0].message.last_valid_seq == 2


def test_unknown_record_type_skipped(journal_path):
    journal_path.write_text(
        json.dumps({"seq": 1, "type": "CASE", "written_at": "t", "payload": case("c1")}) + "\n"
        + json.dumps({"seq": 2, "type": "COMMENT", "written_at": "t", "payload": {"text": "hi"}}) + "\n"
        + json.dumps({"seq": 3, "type": "CASE", "written_at": "t", "payload": case("c2")}) + "\n"
    )
    with pytest.warns(UserWarning, match="unknown record type"):
        state = load_all(journal_path)
    assert set(state.cases) == {"c1", "c2"} and state.last_seq == 3


def test_invalid_append_never_reaches_disk(journal):
    journal.append("CASE", case("c1"))
    size = journal.path.stat().st_size
    with pytest.raises(ValueError):
        journal.append("RESULT", result("ghost", "r", True))
    with pytest.raises(ValueError):
        journal.append("CASE", {"case_id": "x"})
    with pytest.raises(ValueError):
        journal.append("NOPE", {})
    assert journal.path.stat().st_size == size
    assert journal.state.last_seq == 1


def test_closed_journal_unavailable(journal_path):
    j = Journal(journal_path)
    j.close()
    j.close()
    with pytest.raises(StoreUnavailable):
        j.append("CASE", case("c1"))


def test_unopenable_path(tmp_path):
    with pytest.raises(StoreUnavailable):
        Journal(tmp_path)


def test_missing_file_is_empty_state(tmp_path):
    assert load_all(tmp_path / "none.jsonl") == State()


def test_lookups(journal):
    seed(journal)
    assert journal.case("c1").case_id == "c1"
    with pytest.raises(UnknownCase):
        journal.case("zz")
    assert [c.case_id for c in journal.cases_for(5)] == ["c1", "c2"]
    assert journal.baseline("c2") == TypedValue.int(9)
    assert journal.baseline("c1") is None


def test_successful_cases_matches_brute_force_scan(journal):
    journal.append("SERVICE", service(5))
    journal.append("SERVICE", service(7))
    for cid, sid in [("a", 5), ("b", 5), ("c", 7), ("d", 5)]:
        journal.append("CASE", case(cid, sid))
    for cid, sid, ok in [("a", 5, True), ("b", 5, False), ("c", 7, True), ("a", 5, False), ("a", 5, True), ("d", 5, True), ("d", 5, False)]:
        journal.append("RESULT", result(cid, "r", ok, sid))

    latest: dict[str, bool] = {}
    service_of: dict[str, int] = {}
    for line in journal.path.read_text().splitlines():
        rec = json.loads(line)
        if rec["type"] == "RESULT":
            latest[rec["payload"]["case_id"]] = rec["payload"]["successful"]
        if rec["type"] == "CASE":
            service_of[rec["payload"]["case_id"]] = rec["payload"]["service_id"]
    oracle = {cid for cid, ok in latest.items() if ok and service_of[cid] == 5}

    assert {c.case_id for c in journal.successful_cases_for(5)} == oracle == {"a"}
    assert {c.case_id for c in successful_cases(journal.state, 7)} == {"c"}


def test_concurrent_appends_are_serialized(journal):
    def worker(k):
        for i in range(25):
            journal.append("CASE", case(f"c{k}-{i}"))

    threads = [threading.Thread(target=worker, args=(k,)) for k in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    seqs = [json.loads(l)["seq"] for l in journal.path.read_text().splitlines()]
    assert seqs == list(range(1, 201))
    assert load_all(journal.path) == journal.snapshot()
