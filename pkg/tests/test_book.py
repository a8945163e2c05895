import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lobpredict.book import (
    ASK,
    BID,
    BookError,
    BookState,
    TickGrid,
    iter_replay,
    reconcile,
    relative_tick_grid,
    replay,
    replay_reconcile,
    tick_grid,
)
from lobpredict.harness.synth import SynthSpec, synth_generate
from lobpredict.ingest import CANCEL, CROSS, DELETE, EXECUTE, EXECUTE_HIDDEN, HALT, MessageRecord, SnapshotRecord

from conftest import msg, snap

T = 40_000.0


def _book():
    return BookState.from_snapshot(snap([(1_000_200, 100)], [(1_000_000, 200)]))


def test_submit_new_best_bid():
    b = _book()
    b.apply(msg(T, 1, 7, 300, 1_000_100, BID))
    assert b.best_bid == 1_000_100
    assert b.queue(BID, 1_000_100) == [(7, 300)]


def test_execute_walks_fifo():
    b = BookState()
    b.apply(msg(T, 1, 1, 60, 1_000_200, ASK))
    b.apply(msg(T, 1, 2, 90, 1_000_200, ASK))
    b.apply(msg(T, EXECUTE, 1, 100, 1_000_200, ASK))
    assert b.queue(ASK, 1_000_200) == [(2, 50)]
    b.check_invariants()


def test_partial_cancel_keeps_priority():
    b = BookState()
    for oid in (1, 2, 3):
        b.apply(msg(T, 1, oid, 100, 1_000_200, ASK))
    b.apply(msg(T, CANCEL, 2, 40, 1_000_200, ASK))
    assert b.queue(ASK, 1_000_200) == [(1, 100), (2, 60), (3, 100)]
    b.apply(msg(T, DELETE, 1, 100, 1_000_200, ASK))
    assert b.queue(ASK, 1_000_200) == [(2, 60), (3, 100)]


def test_hidden_cross_halt_leave_book():
    b = _book()
    key = b.key()
    b.apply(msg(T, EXECUTE_HIDDEN, 0, 50, 1_000_100, BID))
    b.apply(msg(T, CROSS, 0, 0, 1_000_100, BID))
    b.apply(msg(T, HALT, 0, 0, -1, BID))
    assert b.key() == key
    assert b.flags == {"cross", "halt"}


def test_cancel_exceeding_size_raises():
    b = BookState()
    b.apply(msg(T, 1, 1, 60, 1_000_200, ASK))
    with pytest.raises(BookError):
        b.apply(msg(T, CANCEL, 1, 61, 1_000_200, ASK))


def test_execute_exceeding_liquidity_raises():
    b = BookState()
    b.apply(msg(T, 1, 1, 60, 1_000_200, ASK))
    with pytest.raises(BookError):
        b.apply(msg(T, EXECUTE, 1, 61, 1_000_200, ASK))


def test_unknown_order_at_untracked_price_raises():
    with pytest.raises(BookError):
        _book().apply(msg(T, DELETE, 99, 10, 1_000_500, ASK))


def test_unknown_order_in_synthetic_queue():
    b = _book()  # ask level seeded as one aggregated order
    b.apply(msg(T, CANCEL, 555, 30, 1_000_200, ASK))
    assert b.tick_volume(ASK, 1_000_200) == 70
    b.check_invariants()


def test_reentry_aggregates_snapshot_volume():
    levels = 2
    asks = [(1_000_200, 100), (1_000_300, 100)]
    bids = [(1_000_000, 100), (999_900, 100)]
    b = BookState.from_snapshot(SnapshotRecord(levels, tuple(asks), tuple(bids)))
    # the second ask level (100.03) goes and 100.04 re-enters with 450
    m = msg(T, DELETE, b.queue(ASK, 1_000_300)[0][0], 100, 1_000_300, ASK)
    after = SnapshotRecord(levels, ((1_000_200, 100), (1_000_400, 450)), tuple(bids))
    b.step(m, after)
    (oid, size), = b.queue(ASK, 1_000_400)
    assert oid < 0 and size == 450
    assert reconcile(b, after, levels).matched


def test_trim_beyond_tracked_levels():
    b = BookState.from_snapshot(snap([(1_000_200, 1)], [(1_000_000, 1), (999_900, 1)], levels=2), levels=2)
    m = msg(T, 1, 5, 10, 1_000_100, BID)
    after = SnapshotRecord(2, ((1_000_200, 1),), ((1_000_100, 10), (1_000_000, 1)))
    b.step(m, after)
    assert [p for p, _ in b.l2()[1]] == [1_000_100, 1_000_000]
    assert b.tick_volume(BID, 999_900) == 0


def test_tick_grid_off_grid_mid():
    bgrid, agrid = tick_grid(999_900, 1_000_200, 3, 100)  # 99.99 / 100.02, mid 100.005
    assert bgrid.tolist() == [1_000_000, 999_900, 999_800]
    assert agrid.tolist() == [1_000_100, 1_000_200, 1_000_300]


def test_tick_grid_on_grid_mid():
    bgrid, agrid = tick_grid(1_000_000, 1_000_200, 2, 100)
    assert bgrid[0] == agrid[0] == 1_000_100


@given(st.integers(4000, 6000), st.integers(1, 6), st.integers(1, 10))
def test_tick_grid_monotone(bid_ticks, spread, W):
    bid = bid_ticks * 100
    bgrid, agrid = tick_grid(bid, bid + spread * 100, W, 100)
    assert np.all(np.diff(bgrid) == -100) and np.all(np.diff(agrid) == 100)
    assert bgrid[0] <= agrid[0] and agrid[0] - bgrid[0] in (0, 100)


def test_relative_grid_one_sided_raises():
    b = BookState.from_snapshot(snap([(1_000_200, 100)], []))
    with pytest.raises(BookError):
        relative_tick_grid(b, 3)


def test_tick_grid_validation():
    with pytest.raises(ValueError):
        TickGrid(0)
    assert TickGrid(100).on_grid(1_000_100) and not TickGrid(100).on_grid(1_000_150)


def test_replay_reconciles_synth(synth_session):
    m, s = synth_session
    rep = replay_reconcile(m, s)
    assert rep.matched and rep.events == len(m)


def test_perturbation_found_at_index(synth_session):
    m, s = synth_session
    k = 321
    asks = list(s[k].asks)
    asks[0] = (asks[0][0], asks[0][1] + 1)
    bad = list(s)
    bad[k] = SnapshotRecord(s[k].levels, tuple(asks), s[k].bids)
    rep = replay_reconcile(m, bad)
    assert not rep.matched and rep.first_mismatch == k
    assert rep.diffs[0][:2] == ("ask", 1)


def test_empty_book_matches_sentinel_snapshot():
    assert reconcile(BookState(), SnapshotRecord(10, (), ())).matched


def test_replay_empty_raises():
    with pytest.raises(BookError):
        replay([], [])


def test_replay_deterministic(synth_session):
    m, s = synth_session
    a = [st.key() for _, st in iter_replay(m[:800], s[:800])]
    b = [st.key() for _, st in iter_replay(m[:800], s[:800])]
    assert a == b


def test_l3_to_l2_consistency(synth_session):
    m, s = synth_session
    for i, state in iter_replay(m[:2000], s[:2000]):
        if i % 50 == 0:
            state.check_invariants()
            for side in (BID, ASK):
                for p, v in (state.l2()[1] if side == BID else state.l2()[0]):
                    assert sum(q for _, q in state.queue(side, p)) == v


def _shift(m: MessageRecord, d: int) -> MessageRecord:
    return MessageRecord(m.time_ns, m.event_type, m.order_id, m.size, m.price + d if m.price > 1 else m.price,
                         m.direction)


def test_translation_equivariance():
    m, s = synth_generate(SynthSpec(event_rate=0.05, seed=3))
    d = 7 * 100
    m2 = [_shift(x, d) for x in m]
    s2 = [SnapshotRecord(x.levels, tuple((p + d, v) for p, v in x.asks), tuple((p + d, v) for p, v in x.bids)) for x in s]
    for (_, a), (_, b) in zip(iter_replay(m, s), iter_replay(m2, s2)):
        if a.best_bid is not None:
            assert b.best_bid == a.best_bid + d
        if a.best_ask is not None:
            assert b.best_ask == a.best_ask + d
        la, lb = a.l2(), b.l2()
        assert [v for _, v in la[0]] == [v for _, v in lb[0]]
        assert [p + d for p, _ in la[1]] == [p for p, _ in lb[1]]


@given(st.lists(st.tuples(st.integers(1, 4), st.integers(1, 50)), min_size=1, max_size=12), st.data())
@settings(max_examples=60, deadline=None)
def test_fifo_queue_against_list_oracle(orders, data):
    """Random submits/cancels/executions at one price against a plain list."""
    b = BookState()
    oracle: list[list[int]] = []
    price = 1_000_200
    next_id = 1
    for kind, size in orders:
        if kind == 1 or not oracle:
            b.apply(msg(T, 1, next_id, size, price, ASK))
            oracle.append([next_id, size])
            next_id += 1
        elif kind == 2:
            i = data.draw(st.integers(0, len(oracle) - 1))
            take = min(size, oracle[i][1])
            b.apply(msg(T, CANCEL, oracle[i][0], take, price, ASK))
            oracle[i][1] -= take
        elif kind == 3:
            total = sum(o[1] for o in oracle)
            take = min(size, total)
            b.apply(msg(T, EXECUTE, oracle[0][0], take, price, ASK))
            for o in oracle:
                t = min(o[1], take)
                o[1] -= t
                take -= t
        else:
            i = data.draw(st.integers(0, len(oracle) - 1))
            b.apply(msg(T, DELETE, oracle[i][0], oracle[i][1], price, ASK))
            oracle[i][1] = 0
        oracle = [o for o in oracle if o[1] > 0]
        assert b.queue(ASK, price) == [tuple(o) for o in oracle]
        b.check_invariants()
