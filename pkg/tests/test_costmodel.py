from __future__ import annotations

import pytest

from poe import costmodel
from poe.costmodel import CostParams, Poly

# [DERIVED] (rounds before execution, total rounds, total messages, per-replica maximum)
TABLE = {
    "PoE": (2, 3, "nC + 2n^2", "nC + n"),
    "Linear-PoE": (3, 5, "nC + 4n", "nC + n"),
    "Pbft": (3, 4, "nC + 3n^2", "nC + 2n"),
    "Zyzzyva-fast": (1, 1, "nC", "nC"),
    "Sbft": (4, 5, "nC + 4n + n^2[cp]", "nC + 3"),
    "HotStuff": (7, 8, "nC + 3n", "nC + 3"),
    "MinBFT": (2, 2, "nC + n^2", "nC + n"),
}


def test_every_row():
    rows = {r.protocol: r for r in costmodel.cost_table(4)}
    assert {name: row.as_tuple() for name, row in rows.items()} == TABLE
    assert rows["Sbft"].rounds_total_label == "5 + 1[cp]"


def test_counts_at_n4():
    rows = {r.protocol: r for r in costmodel.cost_table(4)}
    assert rows["PoE"].msgs_total_count == 4 + 32
    assert rows["Sbft"].msgs_total_count == 4 + 16 + 16
    assert rows["PoE"].exact_count == 27
    assert rows["Linear-PoE"].exact_with_recovery_count == 18


def test_request_size_equal_to_message_size():
    # with C = M every linear message weighs the same: 4(n-1) small messages plus the Propose
    for n in (4, 7, 31):
        params = CostParams(n=n, request_size=256, message_size=256)
        assert costmodel.primary_bandwidth(params) == 4 * (n - 1) * 256


def test_linear_saves_bandwidth_for_large_n():
    for n in (4, 31, 100):
        params = CostParams(n=n)
        assert costmodel.primary_bandwidth(params, linear=True) < costmodel.primary_bandwidth(params)


def test_throughput_vanishes_with_delay():
    assert costmodel.throughput(CostParams(delay=1e12)) == pytest.approx(0.0, abs=1e-9)
    assert costmodel.throughput(CostParams(delay=1e12), out_of_order=True) > 0


def test_poly_size_splits_request_and_small_messages():
    poly = Poly(nc=1, n2=2)
    assert poly.size(4, 1000, 10) == 4 * 1000 + 32 * 10
    assert Poly(n2_checkpoint=1).count(5, checkpoint=False) == 0


def test_backoff_bound_is_conservative():
    table = costmodel.backoff_table([7, 3, 5, 1], 30)
    assert [r.ceil_bound for r in table.rows] == [5, 10, 6, 30]
    assert all(r.first_sufficient <= r.ceil_bound for r in table.rows)


@pytest.mark.parametrize("kwargs", [{"n": 0}, {"request_size": 0}, {"delay": -1}, {"protocol": "Raft"}])
def test_rejects_bad_parameters(kwargs):
    with pytest.raises(ValueError):
        CostParams(**kwargs)


def test_exact_messages_only_for_poe_variants():
    with pytest.raises(ValueError):
        costmodel.exact_messages(4, "Pbft")


def test_report_text_mentions_unit_reading():
    text = costmodel.format_report(CostParams(n=31), include_throughput=True)
    assert "322.5 KiB" in text and "315.7 KiB" in text and "2.1%" in text
    assert "below 22.3" in text and "3028" in text and costmodel.UNIT_NOTE in text
