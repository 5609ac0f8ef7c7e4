import json
import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

import reference_table as ref
from oracles import half_up, mean_std
from vtseg.metrics import MetricRecord
from vtseg.report import (aggregate, emit_table, fmt, parse_csv, parse_json, read_records,
                          round_half_up)


def rec(vid, dice=0.5, hd=1.0, ssim=0.9, model="m", units="voxel", task=""):
    return MetricRecord(vid, task, dice, hd, units, ssim, model=model)


def test_aggregate_dice_example():
    values = [0.936, 0.936, 0.871, 0.899, 0.912, 0.929, 0.909, 0.775]
    row = aggregate([rec(str(i), dice=v) for i, v in enumerate(values)])
    assert str(round_half_up(row.dice.mean, 3)) == "0.896"
    assert str(round_half_up(row.dice.std, 2)) == "0.05"
    m, s = mean_std(values)
    assert math.isclose(row.dice.mean, m, rel_tol=1e-15) and math.isclose(row.dice.std, s,
                                                                           rel_tol=1e-12)


def test_aggregate_hd_example():
    values = [10.2, 8, 18, 13, 7, 2.8, 18.2, 13.5]
    row = aggregate([rec(str(i), hd=v) for i, v in enumerate(values)])
    assert str(round_half_up(row.hd.mean, 2)) == "11.34"  # true mean is 11.3375
    assert str(round_half_up(row.hd.std, 1)) == "5.4"
    assert math.isclose(row.hd.mean, 11.3375, rel_tol=1e-15)


def test_population_std_would_not_match():
    values = [10.2, 8, 18, 13, 7, 2.8, 18.2, 13.5]
    m = sum(values) / 8
    pop = math.sqrt(sum((v - m) ** 2 for v in values) / 8)
    assert str(half_up(pop, 1)) != "5.4"
    assert str(half_up(mean_std(values)[1], 1)) == "5.4"


def test_single_record_has_zero_std():
    row = aggregate([rec("1", dice=0.7, hd=3.0, ssim=0.8)])
    assert (row.dice.mean, row.dice.std, row.n) == (0.7, 0.0, 1)
    assert row.hd.std == 0.0 and row.ssim.std == 0.0


def test_aggregate_errors():
    with pytest.raises(ValueError):
        aggregate([])
    with pytest.raises(ValueError):
        aggregate([rec("1"), rec("2", units="mm")])


def test_undefined_hd_excluded_and_footnoted():
    rows = [rec("1", hd=2.0), rec("2", hd=None, dice=0.0), rec("3", hd=4.0)]
    agg = aggregate(rows)
    assert agg.hd.n == 2 and agg.hd.mean == 3.0 and agg.hd_excluded == ("2",)
    assert agg.dice.n == 3
    md = emit_table(None, rows)
    assert "n/a†" in md and "excluded from the HD average" in md


@given(st.permutations(range(8)), st.lists(st.floats(0, 1), min_size=8, max_size=8))
def test_aggregate_permutation_invariant(perm, values):
    rows = [rec(f"v{i}", dice=v, hd=10 * v, ssim=v) for i, v in enumerate(values)]
    assert aggregate(rows) == aggregate([rows[i] for i in perm])


@given(st.lists(st.tuples(st.floats(0, 1), st.one_of(st.none(), st.floats(0, 1e3)),
                          st.floats(-1, 1)), min_size=1, max_size=6))
def test_csv_and_json_roundtrip(values):
    rows = [MetricRecord(f"v{i}", "/a/", d, h, "mm", s, model=m)
            for i, (d, h, s) in enumerate(values) for m in ("a", "b")]
    canonical = sorted(rows, key=lambda r: (int(r.volume_id[1:]), r.model))
    back, averages = parse_csv(emit_table(None, rows, "csv"))
    assert back == canonical
    assert averages[("a", "mean")]["dice"] == aggregate([r for r in rows if r.model == "a"]).dice.mean
    back, aggs = parse_json(emit_table(None, rows, "json"))
    assert back == canonical
    assert aggs[0]["model"] == "a"


def test_output_independent_of_input_order():
    rows = ref.records()
    for fmt_name in ("csv", "json", "markdown"):
        assert emit_table(None, rows, fmt_name) == emit_table(None, rows[::-1], fmt_name)


def test_natural_volume_order():
    rows = [rec(v) for v in ("v10", "v2", "v1")]
    lines = emit_table(None, rows, "csv").splitlines()
    assert [ln.split(",")[0] for ln in lines[1:4]] == ["v1", "v2", "v10"]


def test_markdown_per_volume_cells_match_reference_table():
    md = emit_table(None, ref.records(), "markdown", models=ref.MODELS)
    lines = [ln for ln in md.splitlines() if ln.startswith("|")]
    body = {ln.split("|")[1].strip(): [c.strip() for c in ln.split("|")[2:-1]] for ln in lines[2:]}
    for (vid, task), printed in ref.cells().items():
        row = body[f"{vid}({task})"]
        for i, m in enumerate(ref.MODELS):
            for j, k in enumerate(ref.METRICS):
                ours = row[3 * i + j]
                # our cell is at least as precise; round it to the printed precision
                assert half_up(float(ours), ref.decimals(printed[(m, k)])) == half_up(
                    float(printed[(m, k)]), ref.decimals(printed[(m, k)]))


def test_markdown_layout():
    md = emit_table(None, ref.records(), "markdown", models=ref.MODELS)
    lines = md.splitlines()
    assert lines[0].startswith("| Volume (task) | 3D U-Net Dice | 3D U-Net HD | 3D U-Net SSIM")
    assert lines[2].startswith("| 1(/oe/) | 0.936 | 1.0 | 0.961 |")
    assert lines[10].startswith("| Average | 0.896 ± 0.05 |")
    assert "HD units: voxel" in md


def test_read_records(tmp_path):
    rows = [rec("1"), rec("2", hd=None)]
    (tmp_path / "m.csv").write_text(emit_table(None, rows, "csv"))
    (tmp_path / "m.json").write_text(emit_table(None, rows, "json"))
    assert read_records(tmp_path / "m.csv") == rows == read_records(tmp_path / "m.json")
    json.loads((tmp_path / "m.json").read_text())


def test_formatting():
    assert fmt(0.0005, 3) == "0.001"  # half-up, not banker's
    assert fmt(2.675, 2) == "2.68"  # decimal repr, not binary expansion
    assert fmt(None, 2) == "n/a"
    with pytest.raises(ValueError):
        emit_table(None, [rec("1")], "xml")
