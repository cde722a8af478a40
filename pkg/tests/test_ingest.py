import io

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import hold_scalar, interp_scalar
from semgsvm.errors import DomainError, OrderingError, ParseError, SchemaError
from semgsvm.ingest import (
    LabeledSignal,
    LabelTable,
    RawAcquisition,
    RelabelConfig,
    SignalTable,
    diagnose_file,
    format_label_rows,
    format_signal_rows,
    label_runs,
    parse_label_file,
    parse_signal_file,
    relabel,
    repetition_index,
    synchronize,
)


def _raw(t_sig, emg, t_lab, labels, acq=2):
    return RawAcquisition(acq, SignalTable(np.asarray(t_sig, float), np.asarray(emg, float)),
                          LabelTable(np.asarray(t_lab, float), np.asarray(labels, np.int64)))


# parsing ------------------------------------------------------------------


def test_signal_row_drops_tail_columns():
    values = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0]
    row = "0.00 " + " ".join(map(str, values)) + " 0.5 0.5 0 0 0 0\n"
    table = parse_signal_file(io.StringIO(row))
    assert table.times.tolist() == [0.0]
    assert table.emg.tolist() == [values]


def test_empty_signal_file_gives_empty_table():
    table = parse_signal_file(io.StringIO(""))
    assert len(table) == 0
    assert table.emg.shape == (0, 10)


def test_malformed_token_names_row():
    text = "0.00 " + " ".join(["1"] * 10) + "\n0.01 1 NaN? " + " ".join(["1"] * 8) + "\n"
    with pytest.raises(ParseError, match="row 2"):
        parse_signal_file(io.StringIO(text))


def test_nine_channel_row_is_schema_error():
    with pytest.raises(SchemaError, match="expected 10 EMG columns"):
        parse_signal_file(io.StringIO("0.00 " + " ".join(["1"] * 9) + "\n"))


def test_comma_separated_rows_parse():
    table = parse_signal_file(io.StringIO("0.0," + ",".join(["2"] * 10) + "\n"))
    assert table.emg[0, 9] == 2.0


def test_label_rows_transcribed():
    table = parse_label_file(io.StringIO("0.00 0\n5.00 3\n"))
    assert table.times.tolist() == [0.0, 5.0]
    assert table.labels.tolist() == [0, 3]


def test_label_out_of_range():
    with pytest.raises(DomainError, match="row 2"):
        parse_label_file(io.StringIO("0.00 0\n0.01 18\n"))


def test_duplicate_timestamp_is_ordering_error():
    with pytest.raises(OrderingError, match="row 2"):
        parse_label_file(io.StringIO("0.00 0\n0.00 1\n"))


def test_diagnose_collects_every_problem(tmp_path):
    p = tmp_path / "labels.txt"
    p.write_text("0.00 0\n0.01 18\n0.01 2\n0.02 abc\n", encoding="utf-8")
    d = diagnose_file(p, "labels")
    assert not d.ok
    assert any("row 2" in e and "18" in e for e in d.errors)
    assert any("row 3" in e and "increase" in e for e in d.errors)
    assert any("row 4" in e for e in d.errors)


@given(st.lists(st.lists(st.floats(-1e6, 1e6, allow_nan=False, width=64), min_size=10, max_size=10), min_size=1, max_size=20))
def test_format_parse_round_trip(rows):
    emg = np.array(rows)
    times = np.arange(len(rows)) * 0.01
    text = format_signal_rows(times, emg)
    table = parse_signal_file(io.StringIO(text))
    assert np.array_equal(table.emg, emg)
    assert np.array_equal(table.times, times)
    assert format_signal_rows(table.times, table.emg) == text


def test_label_format_round_trip():
    times, labels = np.array([0.0, 0.01, 5.0]), np.array([0, 3, 0])
    table = parse_label_file(io.StringIO(format_label_rows(times, labels)))
    assert table.labels.tolist() == labels.tolist()


# synchronization ----------------------------------------------------------


def test_midpoint_interpolation():
    emg = np.zeros((2, 10))
    emg[1] = 1.0
    sig = synchronize(_raw([0.0, 0.02], emg, [0.0], [0]))
    assert sig.channels[1, 0] == pytest.approx(0.5, abs=1e-15)


def test_zero_order_hold_labels():
    t = np.round(np.arange(0, 600) / 100, 2)
    sig = synchronize(_raw(t, np.zeros((len(t), 10)), [0.0, 5.0], [0, 3]))
    assert sig.labels[499] == 0  # t = 4.99
    assert sig.labels[500] == 3  # t = 5.00


def test_jittered_resampling_matches_scan_oracle():
    rng = np.random.default_rng(3)
    n = 400
    t = np.arange(n) / 100 + rng.uniform(-0.002, 0.002, n)
    t[0] = 0.0
    emg = rng.normal(size=(n, 10))
    lab_t = np.array([0.0, 1.234, 2.5])
    sig = synchronize(_raw(t, emg, lab_t, [0, 4, 0]))
    worst = 0.0
    for k, tk in enumerate(sig.times):
        for c in (0, 5, 9):
            worst = max(worst, abs(sig.channels[k, c] - interp_scalar(tk, t, emg[:, c])))
        assert sig.labels[k] == hold_scalar(tk, lab_t, [0, 4, 0])
    assert worst <= 1e-12


def test_uniform_input_is_fixed_point():
    rng = np.random.default_rng(5)
    t = np.round(np.arange(300) / 100, 2)
    emg = rng.normal(size=(300, 10))
    labels = np.repeat([0, 2, 0], 100)
    sig = synchronize(_raw(t, emg, t, labels))
    assert np.array_equal(sig.channels, emg)
    assert np.array_equal(sig.times, t)
    assert np.array_equal(sig.labels, labels)


def test_repetition_index_counts_runs():
    labels = np.array([0, 1, 1, 0, 2, 0, 1, 0])
    assert repetition_index(labels).tolist() == [0, 1, 1, 0, 1, 0, 2, 0]
    assert label_runs(labels)[1] == (1, 1, 3)


# relabeling ---------------------------------------------------------------


def _burst_signal(onset, nominal=300, length=500, n=1100, level=1.0):
    rng = np.random.default_rng(11)
    x = rng.normal(0, 0.01, (n, 10))
    x[onset : onset + length] = rng.normal(0, level, (length, 10))
    labels = np.zeros(n, dtype=np.int64)
    labels[nominal : nominal + length] = 5
    return LabeledSignal(x, labels, repetition_index(labels))


def _independent_onset(sig, cfg):
    """Scan for the first sample whose trailing mean activity tops the threshold."""
    w = int(round(cfg.envelope_window * 100))
    centred = sig.channels - np.median(sig.channels, axis=0)
    act = np.abs(centred).sum(axis=1)
    env = np.array([act[max(0, t - w + 1) : t + 1].mean() for t in range(len(act))])
    thr = cfg.onset_factor * np.median(env[sig.labels == 0])
    for t in range(1, len(env)):
        if env[t] >= thr > env[t - 1]:
            return t
    return None


def test_delayed_burst_moves_onset():
    cfg = RelabelConfig()
    sig = _burst_signal(onset=330)
    out = relabel(sig, cfg)
    new_onset = int(np.flatnonzero(out.labels == 5)[0])
    assert abs(new_onset - 330) <= 1
    assert new_onset == _independent_onset(sig, cfg)


def test_onset_at_nominal_boundary_is_unchanged():
    sig = _burst_signal(onset=300)
    out = relabel(sig)
    assert abs(int(np.flatnonzero(out.labels == 5)[0]) - 300) <= 1


def test_all_zero_signal_is_untouched():
    labels = np.repeat([0, 4, 0, 4, 0], 200)
    sig = LabeledSignal(np.zeros((1000, 10)), labels, repetition_index(labels))
    out = relabel(sig)
    assert np.array_equal(out.labels, labels)
    assert np.array_equal(out.repetition, sig.repetition)


def test_relabel_config_rejects_nonpositive():
    with pytest.raises(DomainError):
        RelabelConfig(envelope_window=0)


@given(st.integers(0, 2**31 - 1), st.integers(-80, 80), st.integers(-80, 80))
def test_relabel_preserves_label_set_and_bounds_shift(seed, d_on, d_off):
    rng = np.random.default_rng(seed)
    n, s, e = 1200, 400, 900
    x = rng.normal(0, 0.01, (n, 10))
    x[s + d_on : e + d_off] = rng.normal(0, rng.uniform(0.05, 2), (e + d_off - s - d_on, 10))
    labels = np.zeros(n, dtype=np.int64)
    labels[s:e] = 7
    sig = LabeledSignal(x, labels, repetition_index(labels))
    cfg = RelabelConfig()
    out = relabel(sig, cfg)
    assert set(np.unique(out.labels)) == set(np.unique(labels))
    max_move = 2 * cfg.max_shift * 100  # two boundaries
    assert abs(int(np.count_nonzero(out.labels)) - int(np.count_nonzero(labels))) <= max_move
