import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gkcmn.exceptions import DomainError
from gkcmn.metrics import GroundingResult, aggregate, frames_of, result_from_boxes, tiou, viou, viou_at_r
from gkcmn.spatial import BoundingBox
from gkcmn.temporal import TemporalInterval as I
from oracles import naive_tiou, naive_viou

B = BoundingBox(0, 0, 10, 10)


def result(gt, pred, gt_box=B, pred_box=B):
    return GroundingResult(
        I(*gt), I(*pred), {t: gt_box for t in frames_of(I(*gt))}, {t: pred_box for t in frames_of(I(*pred))}
    )


def test_tiou_examples():
    assert tiou(I(2, 6), I(2, 6)) == 1
    assert tiou(I(0, 2), I(3, 5)) == 0
    assert tiou(I(2, 6), I(4, 8)) == pytest.approx(1 / 3)


def test_viou_examples():
    assert viou(result((0, 4), (0, 4))) == 1
    assert viou(result((0, 4), (2, 6))) == pytest.approx(2 / 6)
    assert viou(result((0, 2), (4, 6))) == 0


def test_frames_round_out():
    assert list(frames_of(I(1.5, 3.2))) == [1, 2, 3]


def test_result_requires_exact_cover():
    with pytest.raises(DomainError):
        GroundingResult(I(0, 2), I(0, 2), {0: B}, {0: B, 1: B})
    with pytest.raises(DomainError):
        result_from_boxes(I(0, 2), {0: B, 1: B}, I(0, 3), {0: B, 1: B})


def test_viou_at_r_examples():
    rs = [result((0, 4), (0, 4))] * 3
    assert viou_at_r(rs, 0.5) == 1.0
    assert viou_at_r(rs, 1.0) == 0.0
    # vIoUs 0.2, 0.4, 0.6 built from overlap fractions
    mk = lambda k: result((0, 5), (0, 5), pred_box=BoundingBox(0, 0, 10 * k, 10))
    vs = [viou(mk(k)) for k in (0.2, 0.4, 0.6)]
    assert vs == pytest.approx([0.2, 0.4, 0.6])
    assert viou_at_r([mk(k) for k in (0.2, 0.4, 0.6)], 0.3) == pytest.approx(2 / 3)
    with pytest.raises(DomainError):
        viou_at_r([], 0.5)


def test_aggregate_examples():
    rep = aggregate([result((0, 4), (0, 4))])
    assert rep.to_dict() == {"m_tiou": 1.0, "m_viou": 1.0, "viou_at": {"0.3": 1.0, "0.5": 1.0}, "n_videos": 1}
    rep = aggregate([result((0, 4), (0, 4)), result((0, 2), (4, 6))])
    assert rep.m_tiou == 0.5
    with pytest.raises(DomainError):
        aggregate([])


def random_result(rng):
    def interval():
        s = float(rng.integers(0, 10)) + (rng.random() if rng.random() < 0.3 else 0.0)
        return s, s + float(rng.integers(1, 8)) + (rng.random() if rng.random() < 0.3 else 0.0)

    def boxes(iv):
        out = {}
        for t in frames_of(I(*iv)):
            x, y = rng.uniform(0, 50, 2)
            out[t] = (x, y, x + rng.uniform(1, 40), y + rng.uniform(1, 40))
        return out

    g, p = interval(), interval()
    gb, pb = boxes(g), boxes(p)
    r = GroundingResult(I(*g), I(*p), {t: BoundingBox(*b) for t, b in gb.items()}, {t: BoundingBox(*b) for t, b in pb.items()})
    return r, g, p, gb, pb


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6))
def test_against_naive_oracle(seed):
    r, g, p, gb, pb = random_result(np.random.default_rng(seed))
    assert abs(viou(r) - naive_viou(g, p, gb, pb)) <= 1e-9
    assert abs(tiou(r.pred_interval, r.gt_interval) - naive_tiou(p, g)) <= 1e-9
    assert tiou(r.pred_interval, r.gt_interval) == tiou(r.gt_interval, r.pred_interval)
    si = len(set(frames_of(r.gt_interval)) & set(frames_of(r.pred_interval)))
    su = len(set(frames_of(r.gt_interval)) | set(frames_of(r.pred_interval)))
    assert 0 <= viou(r) <= si / su + 1e-12


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6))
def test_viou_at_r_monotone(seed):
    rng = np.random.default_rng(seed)
    rs = [random_result(rng)[0] for _ in range(8)]
    vals = [viou_at_r(rs, R) for R in np.linspace(0, 1, 11)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))
