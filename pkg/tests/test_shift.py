"""Tests for the diversity and correlation shift measures."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scaleforge.errors import ContractError
from scaleforge.regularize import Patch
from scaleforge.shift import (
    LabeledScaleSamples,
    bootstrap_shift,
    correlation_shift,
    count_quartile_cuts,
    diversity_shift,
    labeled_pair_from_patches,
    object_scale_kl,
    quantize_counts,
    restricted_diversity_shift,
    shift_report,
)
from scaleforge.stats import histogram

EDGES = np.array([0.0, 1.0, 2.0, 3.0, 4.0])


def _labeled(name, scales, labels):
    return LabeledScaleSamples(name, np.asarray(scales, float), np.asarray(labels, int))


def _obj_patch(pid, scales):
    scales = np.asarray(scales, dtype=float)
    return Patch(pid=pid, image_id=pid.split("#")[0], component=0,
                 y_top=0.0, y_bottom=150.0,
                 object_indices=np.arange(scales.size),
                 scales=scales, heights=np.sqrt(scales))


class TestLabeledScaleSamples:
    def test_empty_rejected(self):
        with pytest.raises(ContractError):
            _labeled("d", [], [])

    def test_misaligned_rejected(self):
        with pytest.raises(ContractError):
            _labeled("d", [1.0, 2.0], [0])

    def test_negative_labels_rejected(self):
        with pytest.raises(ContractError):
            _labeled("d", [1.0], [-1])


class TestDiversityShift:
    def test_identical_is_zero(self):
        h = histogram([0.5, 1.5, 2.5], EDGES)
        assert diversity_shift(h, h) == 0.0

    def test_dyadic_hand_value_is_exact(self):
        # masses [0.75, 0.25, 0, 0] vs [0.25, 0.25, 0.5, 0]
        h1 = histogram([0.1, 0.2, 0.3, 1.5], EDGES)
        h2 = histogram([0.5, 1.5, 2.1, 2.9], EDGES)
        assert diversity_shift(h1, h2) == 0.5

    def test_disjoint_supports_give_exactly_one(self):
        h1 = histogram([0.25, 0.5, 0.75, 0.125], EDGES)
        h2 = histogram([2.5, 3.5, 3.25, 2.125], EDGES)
        assert diversity_shift(h1, h2) == 1.0

    def test_edge_mismatch_rejected(self):
        h1 = histogram([0.5], [0.0, 1.0])
        h2 = histogram([0.5], [0.0, 2.0])
        with pytest.raises(ContractError):
            diversity_shift(h1, h2)

    def test_restricted_variant_ignores_one_sided_bins(self):
        # shared support is bin 0 only: |0.5 - 0.25| / 2
        h1 = histogram([0.1, 0.2, 1.5, 1.6], EDGES)
        h2 = histogram([0.3, 2.5, 2.6, 3.5], EDGES)
        assert restricted_diversity_shift(h1, h2) == 0.125
        assert restricted_diversity_shift(h1, h2) <= diversity_shift(h1, h2)


class TestCorrelationShift:
    def test_identical_conditionals_give_zero(self):
        s1 = _labeled("a", [0.5, 1.5], [0, 1])
        s2 = _labeled("b", [0.5, 1.5], [0, 1])
        value, n_undef = correlation_shift(s1, s2, EDGES)
        assert value == 0.0
        assert n_undef == 0

    def test_hand_value_half(self):
        # identical marginals; conditionals flip in bin 0 and agree in bin 1:
        # 0.5 * sqrt(0.5 * 0.5) * 2 = 0.5
        s1 = _labeled("a", [0.5, 0.5, 1.5, 1.5], [0, 0, 1, 1])
        s2 = _labeled("b", [0.5, 0.5, 1.5, 1.5], [1, 1, 1, 1])
        value, n_undef = correlation_shift(s1, s2, EDGES)
        assert value == 0.5
        assert n_undef == 0

    def test_disjoint_supports_give_exactly_zero(self):
        s1 = _labeled("a", [0.5, 1.25], [0, 1])
        s2 = _labeled("b", [2.5, 3.5], [0, 1])
        value, n_undef = correlation_shift(s1, s2, EDGES)
        assert value == 0.0
        assert n_undef == 4

    def test_single_sided_bins_counted_not_scored(self):
        s1 = _labeled("a", [0.5, 1.5], [0, 0])
        s2 = _labeled("b", [0.5, 2.5], [0, 0])
        value, n_undef = correlation_shift(s1, s2, EDGES)
        assert value == 0.0
        assert n_undef == 2


class TestShiftReport:
    def test_complementary_pair(self):
        # same marginals (div_div 0) but flipped labels (div_cor > 0)
        s1 = _labeled("a", [0.5, 0.5, 1.5, 1.5], [0, 0, 1, 1])
        s2 = _labeled("b", [0.5, 0.5, 1.5, 1.5], [1, 1, 0, 0])
        rep = shift_report(s1, s2, edges=EDGES)
        assert rep.div_div == 0.0
        assert rep.div_cor == 1.0
        assert rep.name1 == "a" and rep.name2 == "b"
        assert rep.n1 == rep.n2 == 4
        assert rep.bins == 4

    def test_disjoint_pair_extremes(self):
        s1 = _labeled("a", [0.5, 0.25, 1.75, 1.125], [0, 1, 0, 1])
        s2 = _labeled("b", [2.5, 3.5, 2.25, 3.125], [0, 1, 0, 1])
        rep = shift_report(s1, s2, edges=EDGES)
        assert rep.div_div == 1.0
        assert rep.div_cor == 0.0
        assert rep.kl > 0.0
        assert rep.n_undefined_bins == 4

    def test_shared_tv_never_exceeds_tv(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            s1 = _labeled("a", rng.uniform(0, 4, 30), rng.integers(0, 4, 30))
            s2 = _labeled("b", rng.uniform(1, 5, 40), rng.integers(0, 4, 40))
            rep = shift_report(s1, s2, bins=16)
            assert rep.div_div_shared <= rep.div_div + 1e-12

    def test_record_keys_stable(self):
        s = _labeled("a", [0.5, 1.5], [0, 1])
        rec = shift_report(s, s, edges=EDGES).to_record()
        assert set(rec) == {
            "name1", "name2", "n1", "n2", "bins", "div_div", "div_cor", "kl",
            "div_div_shared", "n_undefined_bins", "label_proxy", "kl_objects",
        }

    @given(st.integers(min_value=0, max_value=2**32 - 1))
    @settings(max_examples=100, deadline=None)
    def test_measures_stay_in_unit_interval(self, seed):
        rng = np.random.default_rng(seed)
        n1, n2 = int(rng.integers(1, 60)), int(rng.integers(1, 60))
        s1 = _labeled("a", rng.lognormal(0, 1, n1), rng.integers(0, 4, n1))
        s2 = _labeled("b", rng.lognormal(rng.uniform(-1, 1), 1, n2),
                      rng.integers(0, 4, n2))
        rep = shift_report(s1, s2, bins=int(rng.integers(2, 64)))
        assert 0.0 <= rep.div_div <= 1.0
        assert 0.0 <= rep.div_cor <= 1.0
        assert rep.kl >= -1e-12


class TestCountLabels:
    def test_quartile_cuts(self):
        cuts = count_quartile_cuts([1.0, 2.0, 3.0, 4.0])
        assert cuts == pytest.approx([1.75, 2.5, 3.25])

    def test_empty_rejected(self):
        with pytest.raises(ContractError):
            count_quartile_cuts([])

    def test_quantize_boundaries_go_up(self):
        classes = quantize_counts([0.5, 1.0, 2.0, 2.5, 3.0, 9.0], [1.0, 2.0, 3.0])
        assert classes.tolist() == [0, 1, 2, 2, 3, 3]

    def test_labeled_pair_from_patches(self):
        p1 = [_obj_patch(f"a{i}#p0", np.full(i + 1, 100.0)) for i in range(4)]
        p2 = [_obj_patch(f"b{i}#p0", np.full(i + 5, 900.0)) for i in range(4)]
        s1, s2 = labeled_pair_from_patches(p1, p2, "left", "right")
        assert s1.name == "left" and s2.name == "right"
        assert np.all(s1.scales == 100.0)
        assert np.all(s2.scales == 900.0)
        labels = np.concatenate([s1.labels, s2.labels])
        assert labels.min() >= 0 and labels.max() <= 3
        # counts 1..4 vs 5..8: the pooled quartiles separate the two sides
        assert s1.labels.max() <= s2.labels.min()


class TestObjectScaleKl:
    def test_self_is_zero(self):
        patches = [_obj_patch("a#p0", [100.0, 200.0, 400.0])]
        assert object_scale_kl(patches, patches) == 0.0

    def test_lognormal_pair_matches_analytic(self):
        rng = np.random.default_rng(0)

        def mk(mu, n, pid):
            s = np.exp(rng.normal(mu, 0.5, n))
            return _obj_patch(pid, s)

        p1 = [mk(math.log(400.0), 25_000, "a#p0"), mk(math.log(400.0), 25_000, "a#p1")]
        p2 = [mk(math.log(800.0), 25_000, "b#p0"), mk(math.log(800.0), 25_000, "b#p1")]
        analytic = math.log(2.0) ** 2 / (2 * 0.25)
        assert object_scale_kl(p1, p2) == pytest.approx(analytic, abs=0.15)


class TestBootstrapShift:
    def test_deterministic_per_seed(self):
        rng = np.random.default_rng(1)
        s1 = _labeled("a", rng.lognormal(0, 0.4, 300), rng.integers(0, 4, 300))
        s2 = _labeled("b", rng.lognormal(0.5, 0.4, 300), rng.integers(0, 4, 300))
        r1 = bootstrap_shift(s1, s2, bins=32, n_boot=50, seed=9)
        r2 = bootstrap_shift(s1, s2, bins=32, n_boot=50, seed=9)
        assert r1.to_record() == r2.to_record()
        assert r1.div_div_se > 0.0
        assert r1.div_cor_se > 0.0

    def test_mean_tracks_point_estimate(self):
        rng = np.random.default_rng(2)
        s1 = _labeled("a", rng.lognormal(0, 0.4, 500), rng.integers(0, 4, 500))
        s2 = _labeled("b", rng.lognormal(0.9, 0.4, 500), rng.integers(0, 4, 500))
        rep = shift_report(s1, s2, bins=32)
        boot = bootstrap_shift(s1, s2, bins=32, n_boot=100, seed=0)
        assert boot.div_div_mean == pytest.approx(rep.div_div, abs=5 * boot.div_div_se)

    def test_n_boot_validated(self):
        s = _labeled("a", [1.0, 2.0], [0, 1])
        with pytest.raises(ContractError):
            bootstrap_shift(s, s, n_boot=1)
