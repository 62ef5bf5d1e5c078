import json

import pytest
from hypothesis import given, settings, strategies as st

from redtwin.traces import (
    CountIndex,
    DigestMismatchError,
    TraceError,
    TraceHeader,
    TransitionRecord,
    load,
    open_writer,
    read_log,
    stats,
)

KEYS = ["EMPTY", "HostDiscovered:1:", "HostDiscovered:2:", "HandPresent:2:user"]

records_strategy = st.lists(
    st.builds(
        TransitionRecord,
        episode=st.integers(min_value=0, max_value=5),
        step=st.integers(min_value=0, max_value=79),
        o_key=st.sampled_from(KEYS),
        action_id=st.integers(min_value=0, max_value=3),
        o2_key=st.sampled_from(KEYS),
        reward=st.sampled_from([-8.0, -1.0, 99.0]),
        per_hand_executable=st.just((True,)),
        virtual_time_s=st.floats(min_value=0, max_value=1e6, allow_nan=False),
    ),
    max_size=60,
)


def header(digest="a" * 16, seed=1, by="test"):
    return TraceHeader(scenario_digest=digest, seed=seed, created_by=by)


def rec(episode=0, step=0, o="HostDiscovered:1:", a=0, o2="HostDiscovered:2:", r=-1.0):
    return TransitionRecord(episode, step, o, a, o2, r, (True,), 16.0)


def test_write_read_round_trip(tmp_path):
    path = tmp_path / "t.cgt"
    rows = [rec(step=i) for i in range(3)]
    with open_writer(path, header()) as w:
        for r in rows:
            w.append(r)
    got_header, got = read_log(path)
    assert got == rows
    assert got_header == header()


def test_header_line_format(tmp_path):
    path = tmp_path / "t.cgt"
    open_writer(path, header(digest="0123456789abcdef", seed=9, by="x")).close()
    first = path.read_text().splitlines()[0]
    assert first == '{"format_version":1,"scenario_digest":"0123456789abcdef","seed":9,"created_by":"x"}'


def test_record_field_order(tmp_path):
    path = tmp_path / "t.cgt"
    with open_writer(path, header()) as w:
        w.append(rec())
    line = path.read_text().splitlines()[1]
    assert list(json.loads(line).keys()) == [
        "episode", "step", "o_key", "action_id", "o2_key",
        "reward", "per_hand_executable", "virtual_time_s",
    ]


def test_append_to_existing_log(tmp_path):
    path = tmp_path / "t.cgt"
    with open_writer(path, header()) as w:
        w.append(rec(step=0))
    with open_writer(path, header()) as w:
        w.append(rec(step=1))
    _, got = read_log(path)
    assert [r.step for r in got] == [0, 1]


def test_append_digest_mismatch_rejected(tmp_path):
    path = tmp_path / "t.cgt"
    open_writer(path, header(digest="a" * 16)).close()
    with pytest.raises(DigestMismatchError):
        open_writer(path, header(digest="b" * 16))


def test_load_digest_mismatch_across_files(tmp_path):
    p1, p2 = tmp_path / "a.cgt", tmp_path / "b.cgt"
    open_writer(p1, header(digest="a" * 16)).close()
    open_writer(p2, header(digest="b" * 16)).close()
    with pytest.raises(DigestMismatchError):
        load([p1, p2])


def test_corrupt_record_reports_line_number(tmp_path):
    path = tmp_path / "t.cgt"
    with open_writer(path, header()) as w:
        w.append(rec())
    with path.open("a") as fh:
        fh.write('{"episode": "nope"}\n')
    with pytest.raises(TraceError, match=r"t\.cgt:3"):
        load([path])


def test_empty_log_is_empty_index(tmp_path):
    path = tmp_path / "t.cgt"
    open_writer(path, header()).close()
    idx = load([path])
    assert idx.record_count == 0
    assert not idx.counts


def test_duplicate_records_count_twice(tmp_path):
    path = tmp_path / "t.cgt"
    with open_writer(path, header()) as w:
        w.append(rec())
        w.append(rec())
    idx = load([path])
    assert idx.counts[("HostDiscovered:1:", 0)]["HostDiscovered:2:"] == 2


def test_load_additivity(tmp_path):
    p1, p2 = tmp_path / "a.cgt", tmp_path / "b.cgt"
    with open_writer(p1, header()) as w:
        w.append(rec())
        w.append(rec(o2="EMPTY"))
    with open_writer(p2, header()) as w:
        w.append(rec())
    merged = load([p1, p2])
    a, b = load([p1]), load([p2])
    for pair, outcomes in merged.counts.items():
        for o2, count in outcomes.items():
            assert count == a.counts.get(pair, {}).get(o2, 0) + b.counts.get(pair, {}).get(o2, 0)
    assert merged.record_count == a.record_count + b.record_count


@settings(max_examples=40, deadline=None)
@given(records=records_strategy)
def test_lossless_persistence(tmp_path_factory, records):
    path = tmp_path_factory.mktemp("traces") / "t.cgt"
    with open_writer(path, header()) as w:
        for r in records:
            w.append(r)
    direct = CountIndex.from_records(records)
    loaded = load([path])
    assert loaded.counts == direct.counts
    assert loaded.totals == direct.totals


def test_inconsistent_executability_is_corruption(tmp_path):
    path = tmp_path / "t.cgt"
    with open_writer(path, header()) as w:
        w.append(rec())
        w.append(
            TransitionRecord(0, 1, "HostDiscovered:1:", 0, "HostDiscovered:2:", -1.0, (False,), 32.0)
        )
    with pytest.raises(TraceError, match="per_hand_executable"):
        load([path])


def test_stats_counts():
    idx = CountIndex.from_records(
        [rec(step=i) for i in range(6)]
        + [rec(o="EMPTY", a=1, o2="HostDiscovered:1:"), rec(o="EMPTY", a=1, o2="EMPTY")]
    )
    got = stats(idx)
    assert got.total_transitions == 8
    assert got.distinct_pairs == 2
    assert got.branching_histogram == {1: 1, 2: 1}
    assert got.distinct_observations == 3


def test_index_dominates():
    small = CountIndex.from_records([rec()])
    big = CountIndex.from_records([rec(), rec(), rec(o2="EMPTY")])
    assert big.dominates(small)
    assert not small.dominates(big)


@pytest.mark.slow
def test_bulk_million_record_round_trip(tmp_path):
    path = tmp_path / "big.cgt"
    n = 1_000_000
    with open_writer(path, header()) as w:
        for i in range(n):
            w.append(
                TransitionRecord(
                    episode=i // 80,
                    step=i % 80,
                    o_key=KEYS[i % 3],
                    action_id=i % 4,
                    o2_key=KEYS[(i + 1) % 3],
                    reward=-1.0,
                    per_hand_executable=(True,),
                    virtual_time_s=16.0 * i,
                )
            )
    idx = load([path])
    assert idx.record_count == n
    assert sum(idx.totals.values()) == n
    # exact count reconstruction for one specific pair
    expected = sum(1 for i in range(n) if i % 3 == 0 and i % 4 == 0 and (i + 1) % 3 == 1)
    assert idx.counts[(KEYS[0], 0)][KEYS[1]] == expected
