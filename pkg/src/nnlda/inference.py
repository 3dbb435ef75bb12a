"""Variational EM shared by LDA, DMR and nnLDA.

The variational family is q(theta | eta) q(z | phi) with the usual mean-field
coordinate updates. Documents are processed together in one vectorized
E-step; each document still runs its own coordinate ascent and stops on
its own convergence test, so results match a per-document loop exactly.

An EM round is: E-step (warm-started from the previous round), ELBO,
stopping test, exact beta update, then one pass of the prior update.
"""

from __future__ import annotations

import logging
from dataclasses import replace

import numpy as np
from scipy.optimize import minimize

from . import neural_prior as nprior
from .corpus import Corpus, Document, FlatCorpus
from .model import (
    FixedPrior, LogLinearPrior, NeuralPrior, Prior, TopicModel, TrainConfig,
    VariationalState,
)
from .numerics import digamma, dirichlet_expectation, lgamma

logger = logging.getLogger(__name__)


class ConfigurationError(ValueError):
    pass


def _segment_sum(values: np.ndarray, indptr: np.ndarray) -> np.ndarray:
    # every segment is non-empty (documents have >= 1 word)
    return np.add.reduceat(values, indptr[:-1], axis=0)


def _xlogx(p: np.ndarray) -> np.ndarray:
    return np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)


def document_elbos(flat: FlatCorpus, alpha: np.ndarray, log_beta: np.ndarray,
                   eta: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Per-document ELBO for given variational parameters.

    ``log_beta`` is the full K x V log topic-word matrix.
    """
    elog = dirichlet_expectation(eta)
    prior = lgamma(alpha.sum(axis=1)) - lgamma(alpha).sum(axis=1) \
        + ((alpha - 1.0) * elog).sum(axis=1)
    q_theta = lgamma(eta.sum(axis=1)) - lgamma(eta).sum(axis=1) \
        + ((eta - 1.0) * elog).sum(axis=1)
    lb_w = log_beta[:, flat.word_ids].T
    per_entry = (phi * (elog[flat.doc_of_entry] + lb_w)).sum(axis=1) - _xlogx(phi).sum(axis=1)
    words = _segment_sum(flat.counts * per_entry, flat.indptr)
    return prior - q_theta + words


def _raise_nonfinite(doc: int, it: int):
    raise FloatingPointError(f"non-finite variational parameter in document {doc} at iteration {it}")


def e_step(flat: FlatCorpus, alpha: np.ndarray, beta: np.ndarray, tol: float = 1e-6,
           max_iter: int = 100, eta0: np.ndarray | None = None, trace: bool = False,
           doc_offset: int = 0):
    """Coordinate ascent for every document of ``flat``.

    Each iteration sets phi from the current eta, then eta = alpha + counts
    @ phi. A document stops once the mean absolute change of its eta falls
    below ``tol``. Returns ``(VariationalState, iterations_per_doc)`` and,
    with ``trace=True``, also a list of per-document ELBO arrays, one per
    iteration.
    """
    M = flat.indptr.size - 1
    K = beta.shape[0]
    if alpha.shape != (M, K):
        raise ValueError(f"alpha shape {alpha.shape} != ({M}, {K})")
    log_beta = np.log(beta)
    lb_w = log_beta[:, flat.word_ids].T  # T x K
    sizes = np.diff(flat.indptr)
    lengths = _segment_sum(flat.counts, flat.indptr)

    if eta0 is None:
        eta = alpha + lengths[:, None] / K
    else:
        eta = np.array(eta0, dtype=np.float64, copy=True)
    phi = np.full((flat.word_ids.size, K), 1.0 / K)
    active = np.ones(M, dtype=bool)
    iters = np.zeros(M, dtype=np.int64)
    history = []

    for it in range(max_iter):
        act = np.flatnonzero(active)
        ent = np.flatnonzero(active[flat.doc_of_entry])
        sub_sizes = sizes[act]
        starts = np.concatenate([[0], np.cumsum(sub_sizes)])
        rep = np.repeat(np.arange(act.size), sub_sizes)

        bad_rows = ~(np.isfinite(eta[act]) & (eta[act] > 0)).all(axis=1)
        if bad_rows.any():
            _raise_nonfinite(act[np.flatnonzero(bad_rows)[0]] + doc_offset, it)
        logp = lb_w[ent] + dirichlet_expectation(eta[act])[rep]
        logp -= logp.max(axis=1, keepdims=True)
        p = np.exp(logp)
        p /= p.sum(axis=1, keepdims=True)
        new_eta = alpha[act] + _segment_sum(flat.counts[ent, None] * p, starts)
        if not np.all(np.isfinite(new_eta)):
            _raise_nonfinite(act[np.flatnonzero(~np.isfinite(new_eta).all(axis=1))[0]] + doc_offset,
                             it)
        change = np.abs(new_eta - eta[act]).mean(axis=1)
        eta[act] = new_eta
        phi[ent] = p
        iters[act] += 1
        active[act[change < tol]] = False
        if trace:
            history.append(document_elbos(flat, alpha, log_beta, eta, phi))
        if not active.any():
            break

    state = VariationalState(eta, phi)
    if trace:
        return state, iters, history
    return state, iters


def e_step_document(doc: Document, alpha, beta, tol: float = 1e-6, max_iter: int = 100,
                    trace: bool = False):
    """Single-document E-step. Returns ``(eta, phi, elbo)`` (plus the ELBO trace)."""
    flat = FlatCorpus.from_documents([doc])
    alpha = np.asarray(alpha, dtype=np.float64).reshape(1, -1)
    beta = np.asarray(beta, dtype=np.float64)
    out = e_step(flat, alpha, beta, tol, max_iter, trace=trace)
    state = out[0]
    elbo = float(document_elbos(flat, alpha, np.log(beta), state.eta, state.phi)[0])
    if trace:
        return state.eta[0], state.phi, elbo, [float(h[0]) for h in out[2]]
    return state.eta[0], state.phi, elbo


def _check_state(corpus: Corpus, K: int, state: VariationalState) -> None:
    T = corpus.flat.word_ids.size
    if state.eta.shape != (corpus.M, K) or state.phi.shape != (T, K):
        raise ValueError(
            f"state shapes eta{state.eta.shape} phi{state.phi.shape} do not match "
            f"corpus (M={corpus.M}, entries={T}) and K={K}"
        )


def compute_elbo(corpus: Corpus, model: TopicModel, state: VariationalState,
                 per_document: bool = False):
    _check_state(corpus, model.K, state)
    alpha = model.alphas(corpus)
    elbos = document_elbos(corpus.flat, alpha, np.log(model.beta), state.eta, state.phi)
    return elbos if per_document else float(elbos.sum())


def infer(model: TopicModel, corpus: Corpus, tol: float | None = None,
          max_iter: int | None = None) -> tuple[VariationalState, np.ndarray]:
    """Fresh E-step on ``corpus`` under the model; returns (state, per-document ELBO)."""
    cfg = model.config
    alpha = model.alphas(corpus)
    state, _ = e_step(corpus.flat, alpha, model.beta,
                      cfg.estep_tol if tol is None else tol,
                      cfg.estep_max_iter if max_iter is None else max_iter)
    elbos = document_elbos(corpus.flat, alpha, np.log(model.beta), state.eta, state.phi)
    return state, elbos


def m_step_beta(corpus: Corpus, state: VariationalState, K: int,
                floor: float = 1e-12) -> np.ndarray:
    """Maximum-likelihood topic-word matrix from expected counts.

    Rows with no responsibility mass are reset to uniform. Every entry is
    at least ``floor`` and rows sum to one.
    """
    _check_state(corpus, K, state)
    flat = corpus.flat
    V = corpus.V
    weighted = flat.counts[:, None] * state.phi
    stats = np.stack([np.bincount(flat.word_ids, weights=weighted[:, k], minlength=V)
                      for k in range(K)])
    totals = stats.sum(axis=1)
    empty = totals <= 0
    if empty.any():
        logger.warning("topics %s received no responsibility; reset to uniform",
                       np.flatnonzero(empty).tolist())
        stats[empty] = 1.0
        totals[empty] = V
    beta = stats / totals[:, None]
    return floor + (1.0 - V * floor) * beta


def prior_term(alpha: np.ndarray, eta: np.ndarray) -> np.ndarray:
    """E_q[log p(theta | alpha)] per document."""
    elog = dirichlet_expectation(eta)
    return lgamma(alpha.sum(axis=-1)) - lgamma(alpha).sum(axis=-1) \
        + ((alpha - 1.0) * elog).sum(axis=-1)


def alpha_gradient(alpha: np.ndarray, eta: np.ndarray) -> np.ndarray:
    """d prior_term / d alpha, row by row."""
    a_sum = alpha.sum(axis=-1, keepdims=True)
    e_sum = eta.sum(axis=-1, keepdims=True)
    return digamma(a_sum) - digamma(alpha) + digamma(eta) - digamma(e_sum)


def _update_shared_alpha(prior: FixedPrior, eta: np.ndarray) -> FixedPrior:
    """Maximize the summed prior term over one shared alpha (L-BFGS on log alpha)."""
    elog_sum = dirichlet_expectation(eta).sum(axis=0)
    M = eta.shape[0]

    def neg_objective(log_a):
        a = np.exp(log_a)
        f = M * (lgamma(a.sum()) - lgamma(a).sum()) + ((a - 1.0) * elog_sum).sum()
        g = (M * (digamma(a.sum()) - digamma(a)) + elog_sum) * a
        return -f / M, -g / M

    x0 = np.log(prior.alpha)
    res = minimize(neg_objective, x0, jac=True, method="L-BFGS-B",
                   bounds=[(-30.0, 30.0)] * x0.size, options={"gtol": 1e-10, "ftol": 1e-15})
    if not res.fun <= neg_objective(x0)[0]:
        return FixedPrior(prior.alpha.copy(), optimize=True)
    return FixedPrior(np.exp(res.x), optimize=True)


def _update_loglinear(prior: LogLinearPrior, side: np.ndarray, eta: np.ndarray) -> LogLinearPrior:
    x = LogLinearPrior.augment(side)
    alpha = prior.alphas(side)
    g = alpha_gradient(alpha, eta) * alpha
    grad = g.T @ x - prior.lam / prior.sigma2
    if not np.all(np.isfinite(grad)):
        logger.warning("non-finite DMR gradient; update skipped")
        return prior
    return replace(prior, lam=prior.lam + prior.step * grad)


def _update_neural(prior: NeuralPrior, side: np.ndarray, eta: np.ndarray, batch_size: int,
                   rng: np.random.Generator | None) -> NeuralPrior:
    net, opt = prior.net, prior.opt
    M = side.shape[0]
    order = np.arange(M) if rng is None else rng.permutation(M)
    for start in range(0, M, batch_size):
        idx = order[start:start + batch_size]
        alpha, cache = nprior.forward(net, side[idx])
        # Adam minimizes; ascend the prior term by descending its negative
        grads = nprior.backward(net, cache, -alpha_gradient(alpha, eta[idx]))
        try:
            net, opt = nprior.adam_step(net, grads, opt)
        except FloatingPointError as exc:
            logger.warning("minibatch at %d skipped: %s", start, exc)
    return NeuralPrior(net, opt)


def m_step_prior(prior: Prior, corpus: Corpus, state: VariationalState,
                 batch_size: int = 64, rng: np.random.Generator | None = None) -> Prior:
    """One update of the prior parameters against the ELBO prior term.

    Fixed priors are returned unchanged unless ``optimize`` is set. The
    neural prior takes one Adam step per minibatch over a (shuffled when
    ``rng`` is given) pass through the corpus.
    """
    if isinstance(prior, FixedPrior):
        if not prior.optimize:
            return prior
        return _update_shared_alpha(prior, state.eta)
    if isinstance(prior, LogLinearPrior):
        return _update_loglinear(prior, corpus.side_matrix, state.eta)
    if isinstance(prior, NeuralPrior):
        return _update_neural(prior, corpus.side_matrix, state.eta, batch_size, rng)
    raise TypeError(f"unknown prior type {type(prior).__name__}")


def init_prior(kind: str, K: int, q: int, cfg: TrainConfig, seed: int) -> Prior:
    if kind in ("lda", "lda-opt"):
        return FixedPrior(np.full(K, cfg.alpha0), optimize=(kind == "lda-opt"))
    if kind == "dmr":
        lam = np.zeros((K, q + 1))
        lam[:, -1] = np.log(cfg.alpha0)
        return LogLinearPrior(lam, cfg.dmr_sigma2, cfg.dmr_step)
    if kind == "nnlda":
        net = nprior.init_kaiming(q, cfg.hidden_dim, K, seed, alpha_floor=cfg.alpha_floor)
        opt = nprior.AdamState.for_net(net, learning_rate=cfg.learning_rate,
                                       weight_decay=cfg.weight_decay)
        return NeuralPrior(net, opt)
    raise ConfigurationError(f"unknown prior kind {kind!r}")


def init_beta(rng: np.random.Generator, K: int, V: int, floor: float = 1e-12) -> np.ndarray:
    """Near-uniform random topics: Gamma(100, 1/100) weights, row-normalized."""
    beta = rng.gamma(100.0, 0.01, size=(K, V))
    beta /= beta.sum(axis=1, keepdims=True)
    return floor + (1.0 - V * floor) * beta


def train(corpus: Corpus, K: int, prior_kind: str, seed: int,
          config: TrainConfig | None = None, init: TopicModel | None = None) -> TopicModel:
    """Fit a topic model by variational EM.

    Stops when the relative change of the corpus ELBO between consecutive
    rounds drops below ``config.tol`` or after ``config.max_rounds``.
    ``init`` warm-starts from an existing model (its beta, prior and, when
    present, its variational state). Without ``init``, dmr and nnlda take
    their starting beta from a plain-LDA fit with the same seed when
    ``config.beta_init == "lda"``; otherwise beta starts near uniform.
    """
    cfg = config or TrainConfig()
    if not 2 <= K <= 200:
        raise ConfigurationError(f"K={K} outside [2, 200]")
    if prior_kind not in ("lda", "lda-opt", "dmr", "nnlda"):
        raise ConfigurationError(f"unknown prior kind {prior_kind!r}")
    if prior_kind in ("dmr", "nnlda") and not corpus.has_side:
        raise ConfigurationError(f"{prior_kind} requires side data; the corpus has none")

    ss = np.random.SeedSequence(seed)
    rng_beta, rng_net, rng_batches = (np.random.default_rng(s) for s in ss.spawn(3))
    eta = None
    if cfg.beta_init not in ("lda", "random"):
        raise ConfigurationError(f"unknown beta_init {cfg.beta_init!r}")
    if init is None:
        if prior_kind in ("dmr", "nnlda") and cfg.beta_init == "lda":
            logger.info("fitting plain LDA for the initial beta")
            beta = train(corpus, K, "lda", seed, cfg).beta
        else:
            beta = init_beta(rng_beta, K, corpus.V, cfg.beta_floor)
        net_seed = int(rng_net.integers(2**63 - 1))
        prior = init_prior(prior_kind, K, corpus.q, cfg, net_seed)
    else:
        init.check_corpus(corpus)
        if init.K != K or init.kind != prior_kind:
            raise ConfigurationError(
                f"init model is {init.kind} with K={init.K}, requested {prior_kind} with K={K}"
            )
        beta, prior = init.beta.copy(), init.prior.copy()
        if init.state is not None and init.state.eta.shape == (corpus.M, K):
            eta = init.state.eta.copy()

    flat = corpus.flat
    side = corpus.side_matrix
    log: list[tuple[int, float]] = []
    state = None
    for rnd in range(cfg.max_rounds):
        alpha = prior.alphas(side)
        state, iters = e_step(flat, alpha, beta, cfg.estep_tol, cfg.estep_max_iter, eta0=eta)
        eta = state.eta
        elbo = float(document_elbos(flat, alpha, np.log(beta), state.eta, state.phi).sum())
        if not np.isfinite(elbo):
            raise FloatingPointError(f"non-finite ELBO at round {rnd}")
        log.append((rnd, elbo))
        logger.debug("round %d elbo %.6f (max E-step iters %d)", rnd, elbo, iters.max())
        if rnd > 0:
            prev = log[-2][1]
            if abs(elbo - prev) / abs(elbo) < cfg.tol:
                logger.info("%s K=%d seed=%s converged at round %d, elbo %.4f",
                            prior_kind, K, seed, rnd, elbo)
                break
        if rnd == cfg.max_rounds - 1:
            logger.info("%s K=%d seed=%s stopped at max_rounds=%d, elbo %.4f",
                        prior_kind, K, seed, cfg.max_rounds, elbo)
            break
        beta = m_step_beta(corpus, state, K, cfg.beta_floor)
        prior = m_step_prior(prior, corpus, state, cfg.batch_size, rng_batches)

    return TopicModel(beta, prior, corpus.vocabulary, corpus.side_schema, log, seed, cfg, state)


def warm_start_neural(model: TopicModel, hidden_dim: int | None = None,
                      seed: int = 0) -> TopicModel:
    """nnLDA model whose network emits ``model``'s fixed alpha for every input.

    beta and the variational state are copied, so the new model's ELBO at
    that state equals the source model's.
    """
    if not isinstance(model.prior, FixedPrior):
        raise ConfigurationError("warm start needs a model with a fixed alpha")
    cfg = replace(model.config)
    h = cfg.hidden_dim if hidden_dim is None else hidden_dim
    net = nprior.PriorNet.constant(model.side_schema.dim, model.prior.alpha, h,
                                   cfg.alpha_floor, seed)
    opt = nprior.AdamState.for_net(net, learning_rate=cfg.learning_rate,
                                   weight_decay=cfg.weight_decay)
    return TopicModel(model.beta.copy(), NeuralPrior(net, opt), model.vocabulary,
                      model.side_schema, [], model.seed, cfg,
                      None if model.state is None else model.state.copy())
