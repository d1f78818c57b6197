import numpy as np
import pytest

from hybridfg.dataset import (DatasetParseError, LoopClosure, Odometry,
                              parse_dataset, square_loop_dataset,
                              square_loop_truth, write_dataset)
from hybridfg.nonlinear import between


class TestParseDataset:
    def test_single_hypothesis_line(self, tmp_path):
        p = tmp_path / "d.txt"
        p.write_text("ODOM 0 1 1 1.0 0.0 0.0 0.01 0.005\n")
        (e,) = parse_dataset(p)
        assert isinstance(e, Odometry)
        assert e.frm == 0 and e.to == 1
        assert e.hypotheses == ((1.0, 0.0, 0.0),)
        assert e.sigma_xy == 0.01 and e.sigma_theta == 0.005

    def test_two_hypothesis_line(self, tmp_path):
        p = tmp_path / "d.txt"
        p.write_text("ODOM 3 4 2 1 0 0 0 1 0 0.01 0.005\n")
        (e,) = parse_dataset(p)
        assert e.hypotheses == ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0))

    def test_loop_line(self, tmp_path):
        p = tmp_path / "d.txt"
        p.write_text("# comment\nLOOP 2 9 0.1 -0.2 0.05 0.01 0.005\n")
        (e,) = parse_dataset(p)
        assert isinstance(e, LoopClosure)
        assert (e.frm, e.to) == (2, 9)

    def test_malformed_line_reports_line_number(self, tmp_path):
        p = tmp_path / "d.txt"
        p.write_text("ODOM 0 1 1 1.0 0.0 0.0 0.01 0.005\nLOOP 1 2 oops\n")
        with pytest.raises(DatasetParseError, match=":2:"):
            parse_dataset(p)

    def test_nonpositive_hypothesis_count_rejected(self, tmp_path):
        p = tmp_path / "d.txt"
        p.write_text("ODOM 0 1 0 0.01 0.005\n")
        with pytest.raises(DatasetParseError, match="positive"):
            parse_dataset(p)

    def test_unknown_record_rejected(self, tmp_path):
        p = tmp_path / "d.txt"
        p.write_text("POSE 0 0 0 0\n")
        with pytest.raises(DatasetParseError, match="unknown record"):
            parse_dataset(p)

    def test_round_trip_identity(self, tmp_path):
        """write -> parse is the identity on random datasets."""
        rng = np.random.default_rng(0)
        for trial in range(100):
            entries = []
            for k in range(int(rng.integers(1, 8))):
                if rng.random() < 0.7:
                    n = int(rng.integers(1, 4))
                    hyps = tuple(tuple(rng.normal(size=3).round(9)) for _ in range(n))
                    entries.append(Odometry(k, k + 1, hyps,
                                            float(rng.uniform(0.001, 0.1)),
                                            float(rng.uniform(0.001, 0.1))))
                else:
                    entries.append(LoopClosure(k, k + 3, *rng.normal(size=3).round(9),
                                               float(rng.uniform(0.001, 0.1)),
                                               float(rng.uniform(0.001, 0.1))))
            p = tmp_path / f"d{trial}.txt"
            write_dataset(entries, p)
            assert parse_dataset(p) == entries


class TestEntryValidation:
    def test_loop_requires_from_before_to(self):
        with pytest.raises(ValueError):
            LoopClosure(5, 5, 0, 0, 0, 0.1, 0.1)

    def test_sigmas_positive(self):
        with pytest.raises(ValueError):
            Odometry(0, 1, ((0, 0, 0),), 0.0, 0.1)


class TestGenerator:
    def test_shape(self):
        entries, truth, true_modes = square_loop_dataset(seed=0)
        assert len(truth) == 100
        odo = [e for e in entries if isinstance(e, Odometry)]
        amb = [e for e in odo if len(e.hypotheses) > 1]
        loops = [e for e in entries if isinstance(e, LoopClosure)]
        assert len(odo) == 99
        assert len(amb) == 10
        assert len(loops) == 4
        assert len(true_modes) == 10

    def test_lap_alignment(self):
        truth = square_loop_truth(100)
        for k in range(50, 100):
            d = between(truth[k - 50], truth[k]).as_vector()
            np.testing.assert_allclose(d, [0.0, 0.0, 0.0], atol=1e-9)

    def test_true_mode_is_accurate_hypothesis(self):
        entries, truth, true_modes = square_loop_dataset(seed=3)
        order = 0
        for e in entries:
            if isinstance(e, Odometry) and len(e.hypotheses) > 1:
                rel = between(truth[e.frm], truth[e.to]).as_vector()
                errs = [np.hypot(h[0] - rel[0], h[1] - rel[1]) for h in e.hypotheses]
                assert int(np.argmin(errs)) == true_modes[order]
                # The decoy sits far outside the noise band.
                assert max(errs) >= 10 * e.sigma_xy
                order += 1

    def test_deterministic_for_seed(self):
        e1, t1, m1 = square_loop_dataset(seed=5)
        e2, t2, m2 = square_loop_dataset(seed=5)
        assert e1 == e2 and m1 == m2
