import math

import numpy as np
import pytest
from scipy.optimize import minimize
from scipy.special import logsumexp

from nnlda.corpus import (
    Corpus, Document, SideSchema, SyntheticConfig, Vocabulary, generate_synthetic, split,
)
from nnlda.evaluation import (
    CSV_COLUMNS, EvalReport, LogisticRegression, comment_scores, cross_validate_features,
    elbo_ratio_report, generate_comment, grouping_from_assignments, grouping_metrics,
    log_perplexity, macro_f1, write_rows,
)
from nnlda.inference import ConfigurationError, train
from nnlda.model import DimensionMismatchError, FixedPrior, TopicModel, TrainConfig
from oracles import LOG_PI_OVER_4


@pytest.fixture(scope="module")
def synth():
    return generate_synthetic(SyntheticConfig(num_docs=400, seed=31))


@pytest.fixture(scope="module")
def lda(synth):
    return train(synth, 4, "lda", seed=0)


def fixed_model(beta, alpha=None, terms=None):
    beta = np.asarray(beta, dtype=np.float64)
    K, V = beta.shape
    terms = terms or tuple(f"w{i}" for i in range(V))
    alpha = np.ones(K) if alpha is None else np.asarray(alpha, dtype=np.float64)
    return TopicModel(beta, FixedPrior(alpha), Vocabulary(terms), SideSchema())


class TestGrouping:
    def test_hand_computed_six_docs(self):
        # contingency A:[2,1,0] B:[0,2,0] C:[0,0,1]; matching A-0, B-1, C-2
        r = grouping_from_assignments(list("AAABBC"), [0, 0, 1, 1, 1, 2], K=3)
        assert r.macro_precision == pytest.approx((1 + 2 / 3 + 1) / 3)
        assert r.macro_recall == pytest.approx((2 / 3 + 1 + 1) / 3)
        assert r.macro_f1 == pytest.approx((0.8 + 0.8 + 1.0) / 3)
        assert r.micro_f1 == pytest.approx(5 / 6)
        assert r.topic_to_class == {0: "A", 1: "B", 2: "C"}

    def test_unmatched_topic(self):
        r = grouping_from_assignments(list("AABB"), [0, 2, 1, 1], K=3)
        assert r.macro_precision == pytest.approx(1.0)
        assert r.macro_recall == pytest.approx(0.75)
        # pooled: tp 3, predicted 3, support 4
        assert r.micro_f1 == pytest.approx(6 / 7)
        assert r.confusion.shape == (2, 3)

    def test_perfect(self):
        r = grouping_from_assignments(list("ABCD"), [3, 1, 0, 2], K=4)
        assert r.metrics() == {"macro_precision": 1.0, "macro_recall": 1.0,
                               "macro_f1": 1.0, "micro_f1": 1.0}

    def test_permutation_invariant(self):
        rng = np.random.default_rng(0)
        groups = list(rng.choice(list("ABCD"), size=200))
        pred = rng.integers(5, size=200)
        base = grouping_from_assignments(groups, pred, K=5).metrics()
        for _ in range(5):
            perm = rng.permutation(5)
            assert grouping_from_assignments(groups, perm[pred], K=5).metrics() == \
                pytest.approx(base)

    def test_too_few_topics(self):
        with pytest.raises(ConfigurationError):
            grouping_from_assignments(list("ABC"), [0, 1, 0], K=2)

    def test_missing_groups(self, lda):
        vocab = lda.vocabulary
        c = Corpus(vocab, [Document.from_ids([0], side=np.zeros(lda.side_schema.dim))],
                   lda.side_schema)
        with pytest.raises(ConfigurationError):
            grouping_metrics(lda, c)


class TestLogisticRegression:
    def test_matches_reference_optimizer(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(60, 3))
        y = rng.integers(3, size=60)
        clf = LogisticRegression(l2=1e-2, tol=1e-12, max_iter=100000).fit(X, y)
        Xd = np.hstack([X, np.ones((60, 1))])
        Y = np.eye(3)[y]

        def loss(w):
            W = w.reshape(4, 3)
            z = Xd @ W
            return -(Y * (z - logsumexp(z, axis=1, keepdims=True))).sum() / 60 \
                + 0.005 * (W[:-1] ** 2).sum()

        ref = minimize(loss, np.zeros(12), method="BFGS", options={"gtol": 1e-10})
        assert loss(clf.weights.ravel()) == pytest.approx(ref.fun, abs=1e-9)

    def test_separable(self):
        rng = np.random.default_rng(2)
        y = np.repeat(["a", "b", "c"], 30)
        X = np.eye(3)[np.repeat([0, 1, 2], 30)] + rng.normal(scale=0.05, size=(90, 3))
        rep = cross_validate_features(X, y, num_folds=10, seed=0)
        assert rep.mean_macro_f1 == 1.0
        assert len(rep.fold_macro_f1) == 10

    def test_shuffled_labels_near_null(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(150, 2))
        y = X[:, 0] > 0
        y = np.where(y, "hi", "lo")
        null = [cross_validate_features(X, rng.permutation(y), num_folds=5, seed=s).mean_macro_f1
                for s in range(30)]
        observed = cross_validate_features(X, rng.permutation(y), num_folds=5, seed=99)
        mu, sd = np.mean(null), np.std(null, ddof=1)
        assert abs(observed.mean_macro_f1 - mu) <= 3 * sd
        # and the true labels are far from the null
        real = cross_validate_features(X, y, num_folds=5, seed=0).mean_macro_f1
        assert real > mu + 3 * sd


class TestMacroF1:
    def test_hand_values(self):
        # class a: tp1 fp0 fn1 -> 2/3; class b: tp2 fp1 fn0 -> 4/5
        assert macro_f1(["a", "a", "b", "b"], ["a", "b", "b", "b"]) == pytest.approx((2 / 3 + 0.8) / 2)

    def test_absent_predicted_class_ignored(self):
        assert macro_f1(["a", "a"], ["a", "z"]) == pytest.approx(2 / 3)


class TestPerplexity:
    @pytest.mark.parametrize("V", [3, 10, 40])
    def test_uniform_topics(self, V):
        # each one-word document contributes log V - log(pi/4) to the bound
        m = fixed_model(np.full((2, V), 1.0 / V))
        c = Corpus(m.vocabulary, [Document.from_ids([w]) for w in range(V)])
        lp = log_perplexity(m, c)
        assert lp >= math.log(V)
        assert lp == pytest.approx(math.log(V) - LOG_PI_OVER_4, abs=1e-10)

    def test_trained_beats_uniform(self, synth, lda):
        assert log_perplexity(lda, synth) <= math.log(synth.V) + 1e-9

    def test_held_out(self, synth):
        tr, te = split(synth, held_out_frac=0.1, seed=0)
        m = train(tr, 4, "lda", seed=0)
        assert math.isfinite(log_perplexity(m, te))

    def test_vocabulary_mismatch(self, lda):
        other = fixed_model(np.full((4, 3), 1 / 3))
        c = Corpus(other.vocabulary, [Document.from_ids([0])])
        with pytest.raises(DimensionMismatchError):
            log_perplexity(lda, c)


class TestComments:
    def test_single_topic(self):
        m = fixed_model([[0.1, 0.4, 0.2, 0.3]], alpha=[2.0])
        assert generate_comment(m, np.zeros(0), 2) == ["w1", "w3"]

    def test_symmetric_prior_is_mean(self):
        beta = np.random.default_rng(4).dirichlet(np.ones(6), size=3)
        m = fixed_model(beta, alpha=[0.7, 0.7, 0.7])
        np.testing.assert_allclose(comment_scores(m, np.zeros(0)), beta.mean(axis=0), rtol=1e-14)

    def test_ties_by_id(self):
        m = fixed_model([[0.25, 0.25, 0.25, 0.25]])
        assert generate_comment(m, np.zeros(0), 3) == ["w0", "w1", "w2"]

    def test_cap(self, caplog):
        m = fixed_model([[0.5, 0.5]])
        assert len(generate_comment(m, np.zeros(0), 5)) == 2
        assert "capped" in caplog.text

    def test_deterministic(self, synth):
        m = train(synth, 4, "nnlda", seed=0, config=TrainConfig(max_rounds=20))
        side = synth.side_schema.encode({"product": "TV", "description": "price"})
        assert generate_comment(m, side, 5) == generate_comment(m, side, 5)


class TestElboRatio:
    def test_self_is_zero(self, synth, lda):
        assert elbo_ratio_report(lda, lda, synth) == 0.0

    def test_antisymmetric(self, synth, lda):
        other = train(synth, 4, "lda-opt", seed=1)
        assert elbo_ratio_report(lda, other, synth) == -elbo_ratio_report(other, lda, synth)

    def test_mismatch(self, synth, lda):
        other = train(synth, 3, "lda", seed=1, config=TrainConfig(max_rounds=2))
        with pytest.raises(DimensionMismatchError):
            elbo_ratio_report(lda, other, synth)


class TestReports:
    def test_rows_and_csv(self, tmp_path):
        rep = EvalReport(model="lda", K=4, seed=1, log_perplexity=2.5)
        rep.comments.append(("product=TV", ["a", "b"]))
        path = tmp_path / "r.csv"
        write_rows(rep.rows(), path)
        write_rows(rep.rows(), path, append=True)
        lines = path.read_text().splitlines()
        assert lines[0] == ",".join(CSV_COLUMNS)
        assert lines[1] == "lda,4,1,log_perplexity,2.5"
        assert len(lines) == 5
