import numpy as np
import pytest

from oracles import wilder_rsi
from patternforge.errors import DomainError
from patternforge.ingest import ingest_csv, rsi_with_warmup

HEADER = "date,open,high,low,close,volume\n"


def write(tmp_path, body, header=HEADER, name="x.csv"):
    p = tmp_path / name
    p.write_text(header + body)
    return p


def rows(closes, start_day=1):
    return "".join(f"2020-01-{start_day + i:02d},1,2,0.5,{c},{1000 + i}\n" for i, c in enumerate(closes))


class TestIngest:
    def test_five_rows(self, tmp_path):
        s = ingest_csv(write(tmp_path, rows([10, 11, 10.5, 12, 11.5])))
        assert (len(s), s.n_channels) == (5, 3)
        assert s.channels == ("close", "volume", "rsi")
        np.testing.assert_array_equal(s.channel("close"), [10, 11, 10.5, 12, 11.5])

    def test_non_numeric_volume_names_line(self, tmp_path):
        body = rows([10, 11]) + "2020-01-03,1,2,0.5,12,lots\n"
        with pytest.raises(DomainError, match=r":4: non-numeric volume"):
            ingest_csv(write(tmp_path, body))

    def test_duplicate_date(self, tmp_path):
        body = rows([10, 11]) + "2020-01-02,1,2,0.5,12,5\n"
        with pytest.raises(DomainError, match=r":4: duplicate date"):
            ingest_csv(write(tmp_path, body))

    def test_out_of_order(self, tmp_path):
        body = rows([10, 11], start_day=5) + "2020-01-01,1,2,0.5,12,5\n"
        with pytest.raises(DomainError, match="out-of-order"):
            ingest_csv(write(tmp_path, body))

    def test_missing_field(self, tmp_path):
        with pytest.raises(DomainError, match=r":3: expected 6 fields"):
            ingest_csv(write(tmp_path, rows([10]) + "2020-01-02,1,2,0.5,12\n"))

    def test_empty_value_rejected(self, tmp_path):
        with pytest.raises(DomainError, match=r":2: non-numeric close"):
            ingest_csv(write(tmp_path, "2020-01-01,1,2,0.5,,7\n"))

    def test_empty_file(self, tmp_path):
        p = tmp_path / "e.csv"
        p.write_text("")
        with pytest.raises(DomainError, match="empty"):
            ingest_csv(p)

    def test_header_only(self, tmp_path):
        with pytest.raises(DomainError, match="no data rows"):
            ingest_csv(write(tmp_path, ""))

    def test_missing_column(self, tmp_path):
        with pytest.raises(DomainError, match="open"):
            ingest_csv(write(tmp_path, "2020-01-01,1,7\n", header="date,close,volume\n"))

    def test_column_order_free(self, tmp_path):
        p = write(tmp_path, "5,2020-01-01,3,1,2,0.5\n", header="volume,date,close,open,high,low\n")
        s = ingest_csv(p, ("close", "volume"))
        np.testing.assert_array_equal(s.values, [[3.0, 5.0]])

    def test_unknown_channel(self, tmp_path):
        with pytest.raises(DomainError, match="unknown channels"):
            ingest_csv(write(tmp_path, rows([1, 2])), ("close", "macd"))


class TestRsiWarmup:
    def test_matches_wilder_after_warmup(self):
        close = list(100 + np.random.default_rng(0).normal(0, 1, 60).cumsum())
        got = rsi_with_warmup(close, 14)
        want = wilder_rsi(close, 14)
        np.testing.assert_allclose(got[14:], want[14:], rtol=0, atol=1e-9)

    def test_warmup_values(self):
        got = rsi_with_warmup([1.0, 2.0, 1.0, 1.0], 14)
        # row 1: one gain of 1 -> 100; row 2: gain 1, loss 1 -> 50; row 3 adds a flat move
        np.testing.assert_allclose(got, [50.0, 100.0, 50.0, 50.0])

    def test_bounded(self):
        close = np.exp(np.random.default_rng(1).normal(0, 0.05, 200).cumsum())
        r = rsi_with_warmup(close, 14)
        assert np.isfinite(r).all() and r.min() >= 0 and r.max() <= 100
