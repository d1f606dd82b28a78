import io
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vqarobust import metrics as M
from vqarobust.metrics import EvaluationGrid, JoinedRecord

from . import oracle

# ViLT / shot noise errors, levels 0..5
VILT_SHOT = [0.287, 0.326, 0.374, 0.460, 0.526, 0.569]


def one_cell(errors, model="m", corruption="c"):
    return EvaluationGrid.from_errors([model], [corruption], [[errors]])


@st.composite
def grids(draw, max_models=3, max_corruptions=3):
    V = draw(st.integers(1, max_models))
    C = draw(st.integers(1, max_corruptions))
    unit = st.floats(0.01, 1.0, allow_nan=False)
    acc = np.empty((V, C, 6))
    for v in range(V):
        clean = draw(unit)
        for c in range(C):
            acc[v, c, 0] = clean
            acc[v, c, 1:] = [draw(unit) for _ in range(5)]
    return EvaluationGrid([f"m{i}" for i in range(V)], [f"c{j}" for j in range(C)], acc)


weight_vectors = st.lists(st.floats(0.0, 1.0), min_size=5, max_size=5).filter(lambda w: sum(w) > 1e-3).map(
    lambda w: np.array(w) / math.fsum(w))


class TestAnswers:
    @pytest.mark.parametrize("raw,norm", [("The Dog.", "dog"), ("two", "2"), ("  blue ", "blue"),
                                          ("A  red   Car!", "red car"), ("Ten", "10")])
    def test_normalize(self, raw, norm):
        assert M.normalize_answer(raw) == norm

    def test_accuracy_saturation(self):
        answers = ["yes"] * 3 + ["no"] * 7
        assert M.vqa_accuracy("yes", answers) == 1.0
        assert M.vqa_accuracy("yes", ["yes"] + ["no"] * 9) == pytest.approx(1 / 3)
        assert M.vqa_accuracy("maybe", answers) == 0.0
        assert M.vqa_accuracy("yes", ["yes"] * 10) == 1.0

    def test_normalization_flag(self):
        assert M.vqa_accuracy("Dog", ["dog"] * 3) == 1.0
        assert M.vqa_accuracy("Dog", ["dog"] * 3, normalize=False) == 0.0

    def test_needs_answers(self):
        with pytest.raises(ValueError):
            M.vqa_accuracy("x", [])


class TestGrid:
    def test_build_grid_mean(self):
        recs = [JoinedRecord("m", "c", lvl, q, ans, "a")
                for lvl in range(6) for q, ans in ((1, ("a",) * 10), (2, ("a",) + ("b",) * 9))]
        grid = M.build_grid(recs)
        assert np.all(grid.accuracy == 2 / 3)

    def test_perfect_predictions(self):
        recs = [JoinedRecord(m, c, lvl, q, ("x",) * 10, "x")
                for m in "ab" for c in "pq" for lvl in range(6) for q in range(4)]
        grid = M.build_grid(recs)
        assert np.all(grid.accuracy == 1.0) and np.all(grid.error == 0.0)

    def test_missing_cell(self):
        recs = [JoinedRecord("m", "c", lvl, 1, ("x",), "x") for lvl in range(5)]
        with pytest.raises(M.GridError, match=r"\(m, c, 5\)"):
            M.build_grid(recs)

    def test_coverage_mismatch(self):
        recs = [JoinedRecord("m", "c", lvl, 1, ("x",), "x") for lvl in range(6)]
        recs.append(JoinedRecord("m", "c", 3, 2, ("x",), "x"))
        with pytest.raises(M.GridError, match="different question set"):
            M.build_grid(recs)

    def test_validation(self):
        with pytest.raises(M.GridError):
            EvaluationGrid(["m"], ["c"], np.zeros((1, 1, 5)))
        with pytest.raises(M.GridError, match="level-0"):
            EvaluationGrid(["m"], ["c", "d"], np.array([[[0.5] * 6, [0.6] + [0.5] * 5]]))
        with pytest.raises(M.GridError):
            EvaluationGrid(["m"], ["c"], np.full((1, 1, 6), 1.5))

    def test_read_only(self):
        grid = M.benchmark_grid()
        with pytest.raises(ValueError):
            grid.accuracy[0, 0, 0] = 0.0

    def test_csv_round_trip_is_exact(self):
        gen = np.random.default_rng(0)
        acc = gen.random((2, 3, 6))
        acc[:, :, 0] = acc[:, :1, 0]
        grid = EvaluationGrid(["a", "b"], ["x", "y", "z"], acc)
        buf = io.StringIO()
        grid.to_csv(buf)
        assert buf.getvalue().splitlines()[0] == "model,corruption,level,accuracy,error"
        back = EvaluationGrid.from_csv(io.StringIO(buf.getvalue()))
        assert np.array_equal(back.accuracy, grid.accuracy)

    def test_benchmark_grid_shape(self):
        grid = M.benchmark_grid()
        assert grid.models == ("ViLT", "BLIP", "VLE", "PNP")
        assert len(grid.corruptions) == 14
        np.testing.assert_allclose(grid.error[0, 0], VILT_SHOT, atol=1e-12)

    @given(grids())
    def test_error_is_complement(self, grid):
        assert np.array_equal(grid.error, 1.0 - grid.accuracy)


class TestAccuracyMetrics:
    def test_vilt_shot_average(self):
        grid = M.benchmark_grid()
        assert round(M.average_accuracy(grid)[0, 0], 3) == 0.576

    def test_model_and_corruption_average(self):
        pair = M.average_accuracy(M.benchmark_grid())
        assert round(M.model_avg(pair)[0], 3) == 0.657
        assert round(M.corruption_avg(pair)[0], 3) == 0.547

    def test_relative_drop_zero_when_flat(self):
        grid = one_cell([0.3] * 6)
        pair, model, corr = M.relative_accuracy_drop(grid)
        assert pair[0, 0] == 0 and model[0] == 0 and corr[0] == 0

    def test_relative_drop_vilt(self):
        _, model, corr = M.relative_accuracy_drop(M.benchmark_grid())
        # (0.713 - 0.657) / 0.713 from the rounded table entries is 7.85 %
        assert (0.713 - 0.657) / 0.713 == pytest.approx(0.0785, abs=5e-5)
        assert 100 * model[0] == pytest.approx(7.80, abs=0.01)
        assert 100 * corr[0] == pytest.approx(24.93, abs=0.01)


class TestSubMetrics:
    def test_vilt_shot_examples(self):
        grid = one_cell(VILT_SHOT)
        assert M.first_drop(grid)[0, 0] == pytest.approx(0.1359, abs=5e-5)
        assert M.range_of_error(grid)[0, 0] == pytest.approx(0.983, abs=5e-4)
        # least-squares slope from numpy.polyfit over the same six points
        assert M.error_rate(grid)[0, 0] == pytest.approx(0.05988571428571424, abs=1e-12)
        assert M.average_error(grid)[0, 0] == pytest.approx(math.fsum(VILT_SHOT) / 6, abs=1e-15)

    def test_flat_error(self):
        grid = one_cell([0.4] * 6)
        for fn in (M.first_drop, M.range_of_error, M.error_rate, M.adce):
            assert fn(grid)[0, 0] == pytest.approx(0.0, abs=1e-15)

    def test_zero_error_grid(self):
        grid = one_cell([0.0] * 6)
        assert M.average_error(grid)[0, 0] == 0.0
        assert M.first_drop(grid)[0, 0] == 0.0
        assert M.range_of_error(grid)[0, 0] == 0.0

    def test_undefined_cells_are_masked_and_skipped(self):
        errs = [[[0.0, 0.1, 0.2, 0.2, 0.3, 0.3], [0.0] * 6]]
        grid = EvaluationGrid.from_errors(["m"], ["a", "b"], errs)
        fd = M.first_drop(grid)
        assert fd.mask[0, 0] and not fd.mask[0, 1]
        means, skipped = M.aggregate(fd, "model")
        assert means[0] == 0.0 and skipped[0] == 1
        rep = M.compute_report(grid)
        assert rep.skipped["first_drop"] == 1 and rep.skipped["range"] == 1

    def test_aggregated_examples(self):
        # published three-decimal values; the grid itself is rounded, hence +-0.002
        rep = M.compute_report(M.benchmark_grid())
        checks = [
            (rep.model_raw["average_error"][0], 0.343),
            (rep.model_raw["first_drop"][0], 0.054),
            (rep.model_raw["range"][0], 0.468),
            (rep.model_raw["error_rate"][0], 0.026),
            (rep.model_raw["adce"][0], 0.067),
            (rep.corruption_raw["error_rate"][0], 0.064),
            (rep.corruption_raw["average_error"][0], 0.453),
            (rep.corruption_raw["adce"][0], 0.218),
        ]
        for got, want in checks:
            assert abs(got - want) <= 0.002

    @given(grids())
    def test_mu_plus_accuracy_is_one(self, grid):
        assert np.all(M.average_error(grid) + M.average_accuracy(grid) == 1.0)


class TestScaling:
    def test_example(self):
        out = M.min_max_scale(np.ma.MaskedArray([[2.0, 4.0, 6.0]]))
        assert out.tolist() == [[0.0, 0.5, 1.0]]

    def test_degenerate(self):
        with pytest.warns(RuntimeWarning, match="degenerate"):
            out = M.min_max_scale(np.ma.MaskedArray([[3.0]]))
        assert out.tolist() == [[0.0]]

    @given(grids())
    def test_scaled_bounds(self, grid):
        subs = M.min_max_scale(M.sub_metrics(grid))
        for name in M.SUB_METRICS:
            raw, sc = subs.raw[name], subs.scaled[name]
            if sc.count() == 0:
                continue
            assert sc.compressed().min() >= 0 and sc.compressed().max() <= 1
            if raw.max() > raw.min():
                assert sc[np.unravel_index(np.ma.argmax(raw), raw.shape)] == 1.0
                assert sc[np.unravel_index(np.ma.argmin(raw), raw.shape)] == 0.0

    def test_single_corruption_aggregate_is_column(self):
        grid = M.benchmark_grid().select(corruptions=["snow"])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            subs = M.min_max_scale(M.sub_metrics(grid))
        for name in M.SUB_METRICS:
            means, _ = M.aggregate(subs.scaled[name], "model")
            assert np.array_equal(means, np.ma.filled(subs.scaled[name][:, 0]))

    def test_bad_axis(self):
        with pytest.raises(ValueError):
            M.aggregate(np.ma.MaskedArray([[1.0]]), "level")


class TestWeights:
    def test_equal_preferences(self):
        np.testing.assert_allclose(M.softmax_weights([0.3] * 5), [0.2] * 5, atol=1e-15)

    def test_unit_preference(self):
        w = M.softmax_weights([1, 0, 0, 0, 0])
        assert w[0] == pytest.approx(0.40460967519168967, abs=1e-12)
        np.testing.assert_allclose(w[1:], 0.14884758120207758, atol=1e-12)

    def test_mapping_and_aliases(self):
        w = M.softmax_weights({"mu": 1.0, "F": 0.5})
        assert w[M.SUB_METRICS.index("average_error")] > w[0] > w[1]
        with pytest.raises(KeyError):
            M.softmax_weights({"sigma": 1.0})

    def test_non_finite(self):
        with pytest.raises(ValueError):
            M.softmax_weights([np.inf, 0, 0, 0, 0])

    @given(st.lists(st.floats(-30, 30), min_size=5, max_size=5), st.floats(-50, 50))
    def test_softmax_properties(self, prefs, shift):
        w = M.softmax_weights(prefs)
        assert np.all(w > 0)
        assert abs(math.fsum(w) - 1.0) <= 1e-9
        np.testing.assert_allclose(M.softmax_weights(np.array(prefs) + shift), w, rtol=1e-9, atol=1e-15)

    @given(st.lists(st.floats(-5, 5), min_size=5, max_size=5), st.integers(0, 4), st.floats(0.01, 3))
    def test_softmax_monotone_in_own_score(self, prefs, i, bump):
        raised = list(prefs)
        raised[i] += bump
        assert M.softmax_weights(raised)[i] > M.softmax_weights(prefs)[i]

    @pytest.mark.parametrize("w", [[0.2, 0.2, 0.2, 0.2, 0.1], [0.5, 0.5, 0.1, 0.0, -0.1], [0.25] * 4])
    def test_invalid_weights(self, w):
        with pytest.raises(ValueError):
            M.check_weights(w)


class TestVre:
    def test_degenerate_weighting(self):
        subs = M.min_max_scale(M.sub_metrics(M.benchmark_grid()))
        v = M.vre(subs, [1, 0, 0, 0, 0], "model")
        assert np.array_equal(v, M.aggregate(subs.scaled["first_drop"], "model")[0])

    def test_requires_scaled(self):
        with pytest.raises(ValueError):
            M.vre(M.sub_metrics(M.benchmark_grid()))

    def test_ranking(self):
        rep = M.compute_report(M.benchmark_grid())
        assert [rep.models[i] for i in np.argsort(rep.model_vre)] == ["ViLT", "BLIP", "VLE", "PNP"]
        top2 = {rep.corruptions[i] for i in np.argsort(rep.corruption_vre)[-2:]}
        assert top2 == {"shot_noise", "zoom_blur"}

    @given(grids(), weight_vectors, weight_vectors, st.floats(0, 1))
    @settings(deadline=None)
    def test_linearity(self, grid, w1, w2, alpha):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            subs = M.min_max_scale(M.sub_metrics(grid))
        for axis in ("model", "corruption"):
            mixed = M.vre(subs, alpha * w1 + (1 - alpha) * w2, axis)
            combo = alpha * M.vre(subs, w1, axis) + (1 - alpha) * M.vre(subs, w2, axis)
            np.testing.assert_allclose(mixed, combo, rtol=1e-12, atol=1e-12)


class TestInvariance:
    @given(grids(), st.randoms())
    @settings(deadline=None)
    def test_permutation(self, grid, rnd):
        mo = list(grid.models)
        co = list(grid.corruptions)
        rnd.shuffle(mo)
        rnd.shuffle(co)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            a = M.compute_report(grid).to_dict(digits=None)
            b = M.compute_report(grid.select(mo, co)).to_dict(digits=None)
        assert a == b

    @given(grids())
    @settings(deadline=None)
    def test_brute_force_equivalence(self, grid):
        # expand each cell into per-question accuracies whose mean is the cell value
        per_q = [[[[float(a)] * 3 for a in levels] for levels in row] for row in grid.accuracy]
        w = [0.1, 0.3, 0.2, 0.25, 0.15]
        ref = oracle.report(per_q, w)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            rep = M.compute_report(EvaluationGrid(grid.models, grid.corruptions, ref["accuracy"]), w)
        assert oracle.compare_report(rep, ref) == []

    def test_brute_force_on_discrete_questions(self):
        gen = np.random.default_rng(17)
        V, C, Q = 3, 3, 7
        answers = {q: ("a",) * int(gen.integers(0, 4)) + ("b",) * 6 for q in range(Q)}
        answers[0] = ("a",) * 3 + ("b",) * 7
        preds = {}
        for v in range(V):
            clean = gen.choice(["a", "b", "c"], Q)
            clean[0] = "a"  # keeps every clean accuracy positive
            for c in range(C):
                preds[v, c, 0] = clean
                for lvl in range(1, 6):
                    preds[v, c, lvl] = gen.choice(["a", "b", "c"], Q)
        recs = [JoinedRecord(f"m{v}", f"c{c}", lvl, q, answers[q], str(preds[v, c, lvl][q]))
                for v in range(V) for c in range(C) for lvl in range(6) for q in range(Q)]
        per_q = [[[[oracle.vqa_acc(str(preds[v, c, lvl][q]), answers[q]) for q in range(Q)]
                   for lvl in range(6)] for c in range(C)] for v in range(V)]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            rep = M.compute_report(M.build_grid(recs), M.EQUAL_WEIGHTS)
        ref = oracle.report(per_q, list(M.EQUAL_WEIGHTS))
        assert oracle.compare_report(rep, ref) == []


class TestReport:
    def test_to_dict_rounding(self):
        rep = M.compute_report(M.benchmark_grid())
        d = rep.to_dict()
        assert d["models"]["ViLT"]["vre"] == round(float(rep.model_vre[0]), 3)
        assert set(d["weights"]) == set(M.SUB_METRICS)

    def test_weight_violation(self):
        with pytest.raises(ValueError):
            M.compute_report(M.benchmark_grid(), [0.2, 0.2, 0.2, 0.2, 0.1])
