"""Variational EM for the presence-absence topic model.

Per-document mean field uses one factor per latent block: presence beliefs
``Delta`` (C,), word-to-class responsibilities ``delta`` (U, C),
word-to-topic responsibilities ``phi`` (U, T), and per-class-pair topic
posteriors ``gamma`` (C, 2, T).  One inner cycle updates them in the order
gamma, phi, delta, Delta; every update is an exact coordinate maximizer of
the bound given the others, so the bound never decreases.  After the inner
loop one trailing gamma refresh makes the returned state self-consistent
(gamma - alpha equals the presence-weighted responsibility sums of its own
delta/phi/Delta).

Rows are kept per distinct term and weighted by token count; tokens of the
same term provably share a row because no update depends on the token
beyond its vocabulary index.

Corpus-level coordinates: in smoothed mode the topic-word posterior ``chi``
is refreshed once per E-pass after all documents; the M-step then maximizes
each parameter block (xi, rho, beta or eta, alpha) given the E-states.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.special import gammaln, xlogy

from .model import (
    DELTA_CLAMP,
    PROB_CLAMP,
    Dimensions,
    DocVariational,
    Document,
    ModelParams,
    SmoothedTopicState,
    clamp_probability,
    init_doc_variational,
    init_params,
    init_smoothed_state,
    normalize_mode,
    validate_document,
)
from .numerics import dirichlet_expected_log, log_sum_exp, solve_dirichlet_newton

logger = logging.getLogger(__name__)

_LOG_FLOOR = 1e-300  # keeps log(prob) finite; never binds on trained parameters


class NumericalFailureError(RuntimeError):
    """A non-finite value appeared where the math guarantees finite ones."""


@dataclass
class TrainConfig:
    max_em_iters: int = 200
    em_rel_tol: float = 1e-6
    max_estep_iters: int = 100
    estep_tol: float = 1e-5
    mode: str = "no-crowd"
    smoothing: bool = False
    seed: int = 0

    def __post_init__(self):
        self.mode = normalize_mode(self.mode)
        if self.max_em_iters < 1 or self.max_estep_iters < 1:
            raise ValueError("iteration caps must be >= 1")
        if self.em_rel_tol < 0.0 or self.estep_tol < 0.0:
            raise ValueError("tolerances must be >= 0 (0 runs to the iteration cap)")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass
class ElboTrace:
    rows: list = field(default_factory=list)  # (iteration, elbo, max_param_change)
    converged: bool = False

    def to_csv(self) -> str:
        out = ["iteration,elbo,max_param_change"]
        for it, elbo, change in self.rows:
            out.append(f"{it},{elbo:.17g},{change:.17g}")
        return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# shared pieces
# ---------------------------------------------------------------------------


def expected_log_word_given_topic(params: ModelParams, topics: Optional[SmoothedTopicState]):
    """(T, V): log beta, or E[log beta] under the chi posterior when smoothing."""
    if topics is not None:
        return dirichlet_expected_log(topics.chi)
    return np.log(np.clip(params.beta, _LOG_FLOOR, None))


def _annotator_log_terms(doc: Document, params: ModelParams):
    """Per-class expected judgment log-likelihoods for lambda=1 and lambda=0."""
    C = params.alpha.shape[0]
    y = doc.crowd_labels
    if y is None or y.size == 0 or params.rho.size == 0:
        z = np.zeros(C)
        return z, z.copy()
    provided = y != -1
    yf = y.astype(np.float64)
    log_rho = np.log(np.clip(params.rho, _LOG_FLOOR, None))[:, None]
    log_mis = np.log(np.clip(1.0 - params.rho, _LOG_FLOOR, None))[:, None]
    ann1 = np.where(provided, yf * log_rho + (1.0 - yf) * log_mis, 0.0).sum(axis=0)
    ann0 = np.where(provided, (1.0 - yf) * log_rho + yf * log_mis, 0.0).sum(axis=0)
    return ann1, ann0


def _softmax_rows(logits):
    return np.exp(logits - log_sum_exp(logits, axis=1)[:, None])


def _presence_update(xi, ann1, ann0, elog, resp):
    """Exact coordinate update of the presence beliefs.

    ``resp`` is the (C, T) count-weighted responsibility matrix
    sum_n delta_ni phi_nt; ``elog`` the (C, 2, T) expected log topic
    probabilities.
    """
    xi = clamp_probability(xi, PROB_CLAMP)
    l1 = np.log(xi) + ann1 + (resp * elog[:, 1, :]).sum(axis=1)
    l0 = np.log(1.0 - xi) + ann0 + (resp * elog[:, 0, :]).sum(axis=1)
    norm = log_sum_exp(np.stack([l1, l0]), axis=0)
    return clamp_probability(np.exp(l1 - norm), DELTA_CLAMP)


def _gamma_from(alpha, Delta, resp):
    gamma = np.empty_like(alpha)
    gamma[:, 1, :] = alpha[:, 1, :] + Delta[:, None] * resp
    gamma[:, 0, :] = alpha[:, 0, :] + (1.0 - Delta)[:, None] * resp
    return gamma


# ---------------------------------------------------------------------------
# E-step
# ---------------------------------------------------------------------------


def e_step_document(
    doc: Document,
    params: ModelParams,
    topics: Optional[SmoothedTopicState],
    cfg: TrainConfig,
    state: Optional[DocVariational] = None,
    prediction: bool = False,
) -> DocVariational:
    """Coordinate-ascent inner loop for one document.

    Cycles gamma -> phi -> delta -> Delta until the largest change across
    delta, Delta and phi drops below ``cfg.estep_tol`` (or the inner cap is
    hit), warm-starting from ``state`` when given.  In no-crowd training the
    presence beliefs are the observed labels and stay pinned; in prediction
    both labels and judgments are ignored.
    """
    if state is None:
        state = init_doc_variational(doc, params, mode=cfg.mode, prediction=prediction)
    delta = state.delta.copy()
    phi = state.phi.copy()
    Delta = state.Delta.copy()

    counts = doc.counts.astype(np.float64)
    log_wt = expected_log_word_given_topic(params, topics)[:, doc.word_ids].T  # (U, T)
    pinned = cfg.mode == "no-crowd" and not prediction
    if pinned:
        lab = doc.true_labels
        if lab is None or not np.all(np.isin(lab, (0, 1))):
            raise ValueError(f"document {doc.doc_id}: no-crowd training needs fully known labels")
        Delta = clamp_probability(lab.astype(np.float64), DELTA_CLAMP)
    use_judgments = cfg.mode == "crowd" and not prediction
    if use_judgments:
        ann1, ann0 = _annotator_log_terms(doc, params)
    else:
        ann1 = ann0 = np.zeros(params.alpha.shape[0])

    try:
        resp = (delta * counts[:, None]).T @ phi  # (C, T)
        for _ in range(cfg.max_estep_iters):
            prev_delta, prev_phi, prev_Delta = delta, phi, Delta

            gamma = _gamma_from(params.alpha, Delta, resp)
            elog = dirichlet_expected_log(gamma)  # (C, 2, T)
            mix = Delta[:, None] * elog[:, 1, :] + (1.0 - Delta)[:, None] * elog[:, 0, :]

            phi = _softmax_rows(delta @ mix + log_wt)
            delta = _softmax_rows(phi @ mix.T)
            resp = (delta * counts[:, None]).T @ phi
            if not pinned:
                Delta = _presence_update(params.xi, ann1, ann0, elog, resp)

            change = max(
                np.abs(delta - prev_delta).max(),
                np.abs(phi - prev_phi).max(),
                np.abs(Delta - prev_Delta).max(),
            )
            if change < cfg.estep_tol:
                break

        gamma = _gamma_from(params.alpha, Delta, resp)
    except ValueError as exc:
        # shapes are fixed by construction, so a ValueError inside the cycle
        # means a non-finite value reached a checked routine
        raise NumericalFailureError(f"document {doc.doc_id}: {exc}") from exc
    for name, arr in (("delta", delta), ("phi", phi), ("Delta", Delta), ("gamma", gamma)):
        if not np.all(np.isfinite(arr)):
            raise NumericalFailureError(f"document {doc.doc_id}: non-finite {name}")
    return DocVariational(delta=delta, Delta=Delta, phi=phi, gamma=gamma)


# ---------------------------------------------------------------------------
# corpus statistics and M-step
# ---------------------------------------------------------------------------


@dataclass
class CorpusStats:
    n_docs: int
    sum_Delta: np.ndarray        # (C,)
    rho_num: np.ndarray          # (K,) expected agreements
    rho_cnt: np.ndarray          # (K,) provided-judgment counts
    topic_word: np.ndarray       # (T, V) count-weighted phi totals
    sum_log_theta: np.ndarray    # (C, 2, T) summed E[log theta]


def collect_stats(corpus, states, params: ModelParams, dims: Dimensions) -> CorpusStats:
    C, T, V, K = dims.C, dims.T, dims.V, dims.K
    sum_Delta = np.zeros(C)
    rho_num = np.zeros(K)
    rho_cnt = np.zeros(K)
    topic_word = np.zeros((T, V))
    sum_log_theta = np.zeros((C, 2, T))
    for doc, st in zip(corpus, states):
        sum_Delta += st.Delta
        topic_word[:, doc.word_ids] += (st.phi * doc.counts[:, None]).T
        sum_log_theta += dirichlet_expected_log(st.gamma)
        y = doc.crowd_labels
        if y is not None and K:
            provided = y != -1
            yf = y.astype(np.float64)
            agree = yf * st.Delta[None, :] + (1.0 - yf) * (1.0 - st.Delta)[None, :]
            rho_num += np.where(provided, agree, 0.0).sum(axis=1)
            rho_cnt += provided.sum(axis=1)
    return CorpusStats(
        n_docs=len(corpus),
        sum_Delta=sum_Delta,
        rho_num=rho_num,
        rho_cnt=rho_cnt,
        topic_word=topic_word,
        sum_log_theta=sum_log_theta,
    )


def m_step(
    stats: CorpusStats,
    params: ModelParams,
    cfg: TrainConfig,
    topics: Optional[SmoothedTopicState] = None,
) -> ModelParams:
    """Maximize each parameter block given the E-step statistics."""
    xi = clamp_probability(stats.sum_Delta / stats.n_docs, PROB_CLAMP)

    rho = params.rho.copy()
    if rho.size:
        labeled = stats.rho_cnt > 0
        if not np.all(labeled):
            idle = np.flatnonzero(~labeled)
            logger.warning(
                "annotators %s provided no judgments; their quality is left unchanged",
                idle.tolist(),
            )
        ratio = stats.rho_num[labeled] / stats.rho_cnt[labeled]
        rho[labeled] = clamp_probability(ratio, PROB_CLAMP)

    alpha = np.empty_like(params.alpha)
    C = alpha.shape[0]
    for i in range(C):
        for j in (0, 1):
            alpha[i, j] = solve_dirichlet_newton(
                params.alpha[i, j], stats.sum_log_theta[i, j], stats.n_docs
            )

    if params.eta is not None:
        if topics is None:
            raise ValueError("m_step: smoothed mode needs the chi state")
        elog_beta = dirichlet_expected_log(topics.chi)
        eta = np.empty_like(params.eta)
        for t in range(eta.shape[0]):
            eta[t] = solve_dirichlet_newton(params.eta[t], elog_beta[t], 1)
        return ModelParams(alpha=alpha, xi=xi, rho=rho, beta=None, eta=eta)

    row_sums = stats.topic_word.sum(axis=1, keepdims=True)
    if np.any(row_sums <= 0.0):
        raise NumericalFailureError("m_step: empty topic row in word statistics")
    beta = stats.topic_word / row_sums
    return ModelParams(alpha=alpha, xi=xi, rho=rho, beta=beta, eta=None)


# ---------------------------------------------------------------------------
# the bound
# ---------------------------------------------------------------------------


def _dirichlet_block(conc, elog):
    """sum over rows of log Dirichlet normalizer plus (conc-1) * E[log p]."""
    return float(
        (gammaln(conc.sum(-1)) - gammaln(conc).sum(-1) + ((conc - 1.0) * elog).sum(-1)).sum()
    )


def compute_elbo(corpus, params: ModelParams, states, topics: Optional[SmoothedTopicState] = None) -> float:
    """Evidence lower bound of the stored variational states.

    Includes every constant of the generative process (in particular the
    uniform word-to-class prior), so on tiny instances the value is directly
    comparable against the exact enumerated marginal.
    """
    C = params.alpha.shape[0]
    xi = clamp_probability(params.xi, PROB_CLAMP)
    log_xi, log_1mxi = np.log(xi), np.log(1.0 - xi)
    log_wt_full = expected_log_word_given_topic(params, topics)
    total = 0.0
    for doc, st in zip(corpus, states):
        counts = doc.counts.astype(np.float64)
        n = counts.sum()
        Delta = st.Delta
        elog = dirichlet_expected_log(st.gamma)

        total += float((Delta * log_xi + (1.0 - Delta) * log_1mxi).sum())
        if doc.crowd_labels is not None and params.rho.size:
            ann1, ann0 = _annotator_log_terms(doc, params)
            total += float((Delta * ann1 + (1.0 - Delta) * ann0).sum())

        total -= n * np.log(C)                                   # uniform class pick
        total -= float((counts[:, None] * xlogy(st.delta, st.delta)).sum())

        resp = (st.delta * counts[:, None]).T @ st.phi           # (C, T)
        mix = Delta[:, None] * elog[:, 1, :] + (1.0 - Delta)[:, None] * elog[:, 0, :]
        total += float((resp * mix).sum())

        log_wt = log_wt_full[:, doc.word_ids].T
        total += float((counts[:, None] * st.phi * log_wt).sum())
        total -= float((counts[:, None] * xlogy(st.phi, st.phi)).sum())

        total += _dirichlet_block(params.alpha, elog)
        total -= _dirichlet_block(st.gamma, elog)

        total -= float((xlogy(Delta, Delta) + xlogy(1.0 - Delta, 1.0 - Delta)).sum())

    if topics is not None:
        elog_beta = dirichlet_expected_log(topics.chi)
        total += _dirichlet_block(params.eta, elog_beta)
        total -= _dirichlet_block(topics.chi, elog_beta)

    if not np.isfinite(total):
        raise NumericalFailureError("compute_elbo: bound is not finite")
    return float(total)


# ---------------------------------------------------------------------------
# training / prediction
# ---------------------------------------------------------------------------


def _max_param_change(old: ModelParams, new: ModelParams) -> float:
    pieces = [(old.xi, new.xi), (old.alpha, new.alpha)]
    if old.rho.size:
        pieces.append((old.rho, new.rho))
    if old.beta is not None:
        pieces.append((old.beta, new.beta))
    if old.eta is not None:
        pieces.append((old.eta, new.eta))
    return max(float(np.abs(a - b).max()) for a, b in pieces)


def _check_training_corpus(corpus, dims: Dimensions, cfg: TrainConfig) -> None:
    if not corpus:
        raise ValueError("train: empty corpus")
    for doc in corpus:
        validate_document(doc, dims)
    if cfg.mode == "crowd":
        if dims.K < 1:
            raise ValueError("train: crowd mode requires K >= 1")
        seen = np.zeros(dims.K, dtype=np.int64)
        for doc in corpus:
            if doc.crowd_labels is not None:
                seen += (doc.crowd_labels != -1).sum(axis=1)
        if seen.sum() == 0:
            raise ValueError("train: crowd mode but no judgments at all")
        if np.any(seen == 0):
            logger.warning(
                "annotators %s never judged anything; their quality will stay at its start value",
                np.flatnonzero(seen == 0).tolist(),
            )
    else:
        for doc in corpus:
            if doc.true_labels is None or not np.all(np.isin(doc.true_labels, (0, 1))):
                raise ValueError(
                    f"train: no-crowd mode needs fully known labels (document {doc.doc_id})"
                )


def train(corpus, dims: Dimensions, cfg: TrainConfig, threads: int = 1):
    """Run variational EM; returns (params, smoothed_state_or_None, trace).

    The bound is evaluated after every E-pass (and chi refresh); because
    each E-step warm-starts from the previous state and every M-step block
    maximizes its own additive piece of the bound, the recorded ELBO series
    never decreases beyond float rounding.
    """
    _check_training_corpus(corpus, dims, cfg)
    params = init_params(dims, cfg.mode, cfg.smoothing, cfg.seed)
    topics = init_smoothed_state(params.eta, cfg.seed) if cfg.smoothing else None
    states = [None] * len(corpus)
    trace = ElboTrace()
    prev_elbo = None
    last_change = 0.0

    for iteration in range(1, cfg.max_em_iters + 1):
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                states = list(
                    pool.map(
                        lambda pair: e_step_document(pair[0], params, topics, cfg, state=pair[1]),
                        zip(corpus, states),
                    )
                )
        else:
            states = [
                e_step_document(doc, params, topics, cfg, state=st)
                for doc, st in zip(corpus, states)
            ]
        stats = collect_stats(corpus, states, params, dims)
        if cfg.smoothing:
            topics = SmoothedTopicState(chi=params.eta + stats.topic_word)

        elbo = compute_elbo(corpus, params, states, topics)
        trace.rows.append((iteration, elbo, last_change))
        if prev_elbo is not None and abs(elbo - prev_elbo) <= cfg.em_rel_tol * abs(prev_elbo):
            trace.converged = True
            break
        prev_elbo = elbo
        if iteration == cfg.max_em_iters:
            break

        new_params = m_step(stats, params, cfg, topics)
        last_change = _max_param_change(params, new_params)
        params = new_params

    return params, topics, trace


def predict(
    doc: Document,
    params: ModelParams,
    topics: Optional[SmoothedTopicState] = None,
    cfg: Optional[TrainConfig] = None,
    threshold: float = 0.5,
):
    """Presence beliefs and thresholded labels for one unlabeled document.

    Only the words and the trained parameters matter; any labels or
    judgments attached to the document are ignored.  Ties at the threshold
    predict "present".
    """
    if doc.counts.size == 0 or doc.counts.sum() < 1:
        raise ValueError(f"predict: document {doc.doc_id} has no words")
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("predict: threshold must be in [0, 1]")
    if cfg is None:
        cfg = TrainConfig()
    state = e_step_document(doc, params, topics, cfg, state=None, prediction=True)
    labels = (state.Delta >= threshold).astype(np.int64)
    return state.Delta.copy(), labels
