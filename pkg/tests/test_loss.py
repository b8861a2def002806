"""Masked L2 loss identities and the analytic gradient."""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from wbpose.encoder import AnnotatedScene, EncoderParams, Person, Visibility, encode
from wbpose.loss import loss_gradient, masked_l2, multitask_loss
from wbpose.skeleton import PartGroup


def rand_triple(rng, shape=(3, 4, 4)):
    pred = rng.normal(size=shape)
    gt = rng.normal(size=shape)
    mask = (rng.random(shape) < 0.7).astype(np.float64)
    return pred, gt, mask


def test_single_cell_hand_value():
    pred = np.array([[[0.75]]])
    gt = np.array([[[0.25]]])
    mask = np.ones((1, 1, 1))
    assert masked_l2(pred, gt, mask) == 0.25  # (0.5)^2


def test_perfect_prediction_is_zero():
    rng = np.random.default_rng(0)
    gt = rng.normal(size=(4, 5, 5))
    mask = (rng.random((4, 5, 5)) < 0.5).astype(np.float64)
    assert masked_l2(gt.copy(), gt, mask) == 0.0


def test_loss_zero_iff_equal_on_support():
    rng = np.random.default_rng(1)
    pred, gt, mask = rand_triple(rng)
    pred_on_support = np.where(mask > 0, gt, pred)
    assert masked_l2(pred_on_support, gt, mask) == 0.0
    # Any difference on the support makes it strictly positive.
    pred_on_support[tuple(np.argwhere(mask > 0)[0])] += 0.5
    assert masked_l2(pred_on_support, gt, mask) > 0.0


def test_masked_out_perturbation_bit_exact():
    rng = np.random.default_rng(2)
    pred, gt, mask = rand_triple(rng)
    base = masked_l2(pred, gt, mask)
    perturbed = pred.copy()
    perturbed[mask == 0] += rng.normal(size=int((mask == 0).sum())) * 100.0
    assert masked_l2(perturbed, gt, mask) == base  # same bits, same order


def test_gradient_matches_central_differences():
    rng = np.random.default_rng(3)
    pred, gt, mask = rand_triple(rng)
    grad = loss_gradient(pred, gt, mask)
    h = 1e-4
    fd = np.zeros_like(pred)
    for idx in np.ndindex(pred.shape):
        up, down = pred.copy(), pred.copy()
        up[idx] += h
        down[idx] -= h
        fd[idx] = (masked_l2(up, gt, mask) - masked_l2(down, gt, mask)) / (2 * h)
    rel = np.linalg.norm(grad - fd) / max(np.linalg.norm(grad), 1e-12)
    assert rel <= 1e-5
    assert not grad[mask == 0].any()


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_loss_nonnegative_and_symmetric_in_sign(seed):
    rng = np.random.default_rng(seed)
    pred, gt, mask = rand_triple(rng, shape=(2, 3, 3))
    v = masked_l2(pred, gt, mask)
    assert v >= 0.0
    # Mirrored residuals give the same loss (up to re-rounding of 2*gt - pred).
    assert np.isclose(masked_l2(2 * gt - pred, gt, mask), v, rtol=1e-12)


def encoded_target(tiny_topo):
    sc = AnnotatedScene(
        image_size=(64, 64),
        people=[Person({i: (12.0 + 8 * i, 16.0 + 6 * i, Visibility.LABELED) for i in range(5)})],
        coverage=frozenset(PartGroup),
    )
    return encode(sc, tiny_topo, EncoderParams(stride=8))


def test_multitask_totals_and_stage_doubling(tiny_topo):
    t = encoded_target(tiny_topo)
    rng = np.random.default_rng(4)
    paf_pred = rng.normal(size=t.l_star.shape)
    cm_pred = rng.normal(size=t.s_star.shape)

    one = multitask_loss([paf_pred], [cm_pred], t, tiny_topo)
    two = multitask_loss([paf_pred, paf_pred], [cm_pred], t, tiny_topo)
    assert two.f_l_per_stage == [one.f_l_per_stage[0]] * 2
    assert two.total == one.total + one.f_l_per_stage[0]
    assert one.total == sum(one.f_l_per_stage) + sum(one.f_s_per_stage)


def test_per_group_attribution_sums_to_total_without_background(tiny_topo):
    assert not tiny_topo.background_channel
    t = encoded_target(tiny_topo)
    rng = np.random.default_rng(5)
    breakdown = multitask_loss(
        [rng.normal(size=t.l_star.shape)], [rng.normal(size=t.s_star.shape)], t, tiny_topo
    )
    assert abs(sum(breakdown.per_group.values()) - breakdown.total) < 1e-9 * max(1.0, breakdown.total)


def test_per_group_attribution_below_total_with_background(topo):
    sc = AnnotatedScene(image_size=(80, 80), people=[], coverage=frozenset(), no_people=True)
    t = encode(sc, topo, EncoderParams(stride=8))
    rng = np.random.default_rng(6)
    breakdown = multitask_loss(
        [rng.normal(size=t.l_star.shape)], [rng.normal(size=t.s_star.shape)], t, topo
    )
    assert sum(breakdown.per_group.values()) < breakdown.total  # background mass excluded


def test_repeated_calls_bit_identical(tiny_topo):
    t = encoded_target(tiny_topo)
    rng = np.random.default_rng(7)
    paf_pred = rng.normal(size=t.l_star.shape)
    cm_pred = rng.normal(size=t.s_star.shape)
    a = multitask_loss([paf_pred], [cm_pred], t, tiny_topo)
    b = multitask_loss([paf_pred], [cm_pred], t, tiny_topo)
    assert a.total == b.total and a.f_l_per_stage == b.f_l_per_stage
