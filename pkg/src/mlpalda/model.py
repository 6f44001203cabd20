"""Model containers, seeded initialization, invariant checks, model files.

Shapes used throughout (C classes, T topics, V vocabulary terms, K annotators,
U distinct terms in one document):

* ``alpha``  (C, 2, T)  Dirichlet concentrations of the per-class topic
  distributions; index 1 of the middle axis is the "class present" row,
  index 0 the "class absent" row.
* ``xi``     (C,)       prior presence probabilities.
* ``rho``    (K,)       annotator quality (probability of reporting the truth).
* ``beta``   (T, V)     topic-word distributions (point estimate, unsmoothed).
* ``eta``    (T, V)     Dirichlet prior over topic rows (smoothed mode).
* ``chi``    (T, V)     variational posterior over topic rows (smoothed mode).
* per-document state: ``delta`` (U, C) word-to-class responsibilities,
  ``phi`` (U, T) word-to-topic responsibilities, ``Delta`` (C,) presence
  beliefs, ``gamma`` (C, 2, T) topic posteriors.  Rows are stored per
  distinct term; tokens of the same term share one row, which is exact
  because every word-level update depends on the token only through its
  vocabulary index.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

PROB_CLAMP = 1e-6   # xi, rho live in [PROB_CLAMP, 1 - PROB_CLAMP]
DELTA_CLAMP = 1e-9  # Delta lives in [DELTA_CLAMP, 1 - DELTA_CLAMP]
ROW_SUM_TOL = 1e-9

MODEL_FILE_HEADER = "mlpa-model v1"


def clamp_probability(x, eps):
    """Clip probabilities into [eps, 1 - eps] before any logarithm."""
    return np.clip(x, eps, 1.0 - eps)


def normalize_mode(mode: str) -> str:
    m = str(mode).strip().lower()
    if m in ("crowd",):
        return "crowd"
    if m in ("no-crowd", "nocrowd", "no_crowd"):
        return "no-crowd"
    raise ValueError(f"unknown mode {mode!r}: expected 'crowd' or 'no-crowd'")


@dataclass(frozen=True)
class Dimensions:
    D: int
    C: int
    T: int
    V: int
    K: int = 0

    def __post_init__(self):
        for name in ("D", "C", "T", "V"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"Dimensions.{name} must be >= 1")
        if int(self.K) < 0:
            raise ValueError("Dimensions.K must be >= 0")

    def with_topics(self, T: int) -> "Dimensions":
        return Dimensions(D=self.D, C=self.C, T=int(T), V=self.V, K=self.K)


@dataclass
class Document:
    """Sparse bag-of-words document.

    ``true_labels`` is None when the labels are unknown/erased, otherwise a
    C-vector over {0, 1, -1} (-1 = unknown for that class).  ``crowd_labels``
    is None or a (K, C) array over {0, 1, -1} (-1 = no judgment).
    """

    doc_id: str
    word_ids: np.ndarray
    counts: np.ndarray
    true_labels: Optional[np.ndarray] = None
    crowd_labels: Optional[np.ndarray] = None

    def __post_init__(self):
        self.word_ids = np.asarray(self.word_ids, dtype=np.int64)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.true_labels is not None:
            self.true_labels = np.asarray(self.true_labels, dtype=np.int64)
        if self.crowd_labels is not None:
            self.crowd_labels = np.asarray(self.crowd_labels, dtype=np.int64)

    @property
    def n_words(self) -> int:
        return int(self.counts.sum())


Corpus = list  # list[Document]


@dataclass
class ModelParams:
    alpha: np.ndarray
    xi: np.ndarray
    rho: np.ndarray
    beta: Optional[np.ndarray] = None
    eta: Optional[np.ndarray] = None

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        self.xi = np.asarray(self.xi, dtype=np.float64)
        self.rho = np.asarray(self.rho, dtype=np.float64)
        if self.beta is not None:
            self.beta = np.asarray(self.beta, dtype=np.float64)
        if self.eta is not None:
            self.eta = np.asarray(self.eta, dtype=np.float64)

    @property
    def smoothing(self) -> bool:
        return self.eta is not None


@dataclass
class DocVariational:
    delta: np.ndarray   # (U, C)
    Delta: np.ndarray   # (C,)
    phi: np.ndarray     # (U, T)
    gamma: np.ndarray   # (C, 2, T)


@dataclass
class SmoothedTopicState:
    chi: np.ndarray     # (T, V)


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------


def validate_document(doc: Document, dims: Dimensions) -> None:
    """Raise ValueError on any structural problem with one document."""
    if doc.word_ids.ndim != 1 or doc.word_ids.shape != doc.counts.shape:
        raise ValueError(f"document {doc.doc_id}: word_ids/counts must be equal-length vectors")
    if doc.word_ids.size == 0:
        raise ValueError(f"document {doc.doc_id}: has no words")
    if np.any(doc.word_ids < 0) or np.any(doc.word_ids >= dims.V):
        raise ValueError(f"document {doc.doc_id}: word index out of range [0, {dims.V})")
    if np.any(doc.counts < 1):
        raise ValueError(f"document {doc.doc_id}: word counts must be >= 1")
    if len(set(doc.word_ids.tolist())) != doc.word_ids.size:
        raise ValueError(f"document {doc.doc_id}: duplicate word index")
    if doc.true_labels is not None:
        if doc.true_labels.shape != (dims.C,):
            raise ValueError(f"document {doc.doc_id}: true_labels must have length {dims.C}")
        if not np.all(np.isin(doc.true_labels, (-1, 0, 1))):
            raise ValueError(f"document {doc.doc_id}: true labels must be 0, 1 or -1")
    if doc.crowd_labels is not None:
        if dims.K == 0:
            raise ValueError(f"document {doc.doc_id}: crowd labels present but K=0")
        if doc.crowd_labels.shape != (dims.K, dims.C):
            raise ValueError(f"document {doc.doc_id}: crowd labels must be K x C")
        if not np.all(np.isin(doc.crowd_labels, (-1, 0, 1))):
            raise ValueError(f"document {doc.doc_id}: crowd labels must be 0, 1 or -1")


def validate(
    params: ModelParams,
    dims: Dimensions,
    state: Optional[DocVariational] = None,
    smoothed: Optional[SmoothedTopicState] = None,
) -> list:
    """Collect invariant violations as human-readable strings (empty = clean)."""
    C, T, V = dims.C, dims.T, dims.V
    msgs = []

    if params.alpha.shape != (C, 2, T):
        msgs.append(f"alpha shape {params.alpha.shape} != {(C, 2, T)}")
    if not np.all(np.isfinite(params.alpha)) or np.any(params.alpha <= 0.0):
        msgs.append("alpha positivity violated")

    if params.xi.shape != (C,):
        msgs.append(f"xi shape {params.xi.shape} != {(C,)}")
    if np.any(params.xi < PROB_CLAMP) or np.any(params.xi > 1.0 - PROB_CLAMP):
        msgs.append("xi out of clamp range")

    if params.rho.size and (np.any(params.rho < PROB_CLAMP) or np.any(params.rho > 1.0 - PROB_CLAMP)):
        msgs.append("rho out of clamp range")

    if params.beta is None and params.eta is None:
        msgs.append("params carry neither beta nor eta")
    if params.beta is not None and params.eta is not None:
        msgs.append("params carry both beta and eta")

    if params.beta is not None:
        if params.beta.shape != (T, V):
            msgs.append(f"beta shape {params.beta.shape} != {(T, V)}")
        else:
            if np.any(params.beta < 0.0) or not np.all(np.isfinite(params.beta)):
                msgs.append("beta entries negative or non-finite")
            if np.any(np.abs(params.beta.sum(axis=1) - 1.0) > ROW_SUM_TOL):
                msgs.append("beta row not stochastic")

    if params.eta is not None:
        if params.eta.shape != (T, V):
            msgs.append(f"eta shape {params.eta.shape} != {(T, V)}")
        if not np.all(np.isfinite(params.eta)) or np.any(params.eta <= 0.0):
            msgs.append("eta positivity violated")

    if state is not None:
        for name, rows in (("delta", state.delta), ("phi", state.phi)):
            if np.any(rows < 0.0) or np.any(np.abs(rows.sum(axis=1) - 1.0) > ROW_SUM_TOL):
                msgs.append(f"{name} rows not stochastic")
        if np.any(state.Delta < DELTA_CLAMP) or np.any(state.Delta > 1.0 - DELTA_CLAMP):
            msgs.append("Delta out of clamp range")
        if state.gamma.shape != params.alpha.shape:
            msgs.append("gamma shape mismatch with alpha")
        elif np.any(state.gamma < params.alpha - 1e-12):
            msgs.append("gamma below alpha")
        for name, arr in (("delta", state.delta), ("phi", state.phi), ("gamma", state.gamma)):
            if not np.all(np.isfinite(arr)):
                msgs.append(f"{name} has non-finite entries")

    if smoothed is not None:
        if params.eta is None:
            msgs.append("smoothed state without eta")
        elif np.any(smoothed.chi < params.eta - 1e-12):
            msgs.append("chi below eta")

    return msgs


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------


def init_params(dims: Dimensions, mode: str, smoothing: bool, seed: int) -> ModelParams:
    """Deterministic starting point for EM.

    alpha starts at all-ones (uniform Dirichlet), xi at 0.5, rho at 0.7
    (above the 0.5 symmetry point, which keeps the crowd E-step pointed at
    the truthful labeling), and beta rows are drawn from a symmetric
    Dirichlet so topics are distinguishable from the first iteration.
    """
    mode = normalize_mode(mode)
    if mode == "crowd" and dims.K < 1:
        raise ValueError("crowd mode requires K >= 1")
    alpha = np.ones((dims.C, 2, dims.T))
    xi = np.full(dims.C, 0.5)
    rho = np.full(dims.K, 0.7) if mode == "crowd" else np.empty(0)
    if smoothing:
        return ModelParams(alpha=alpha, xi=xi, rho=rho, beta=None, eta=np.ones((dims.T, dims.V)))
    rng = np.random.default_rng(seed)
    beta = rng.dirichlet(np.ones(dims.V), size=dims.T)
    return ModelParams(alpha=alpha, xi=xi, rho=rho, beta=beta, eta=None)


def init_smoothed_state(eta: np.ndarray, seed: int) -> SmoothedTopicState:
    """Seeded chi start: eta plus a small positive jitter.

    Without the jitter every topic row is identical and the word-to-topic
    responsibilities stay exactly uniform forever.
    """
    rng = np.random.default_rng(seed)
    return SmoothedTopicState(chi=eta + 0.5 * rng.random(eta.shape))


def init_doc_variational(
    doc: Document,
    params: ModelParams,
    mode: str = "no-crowd",
    prediction: bool = False,
) -> DocVariational:
    """Starting per-document state: uniform responsibilities, prior-or-label
    presence beliefs, and gamma set by one update from that point."""
    mode = normalize_mode(mode)
    C, _, T = params.alpha.shape
    U = doc.word_ids.size
    delta = np.full((U, C), 1.0 / C)
    phi = np.full((U, T), 1.0 / T)

    if prediction:
        Delta = params.xi.astype(np.float64).copy()
    elif mode == "no-crowd":
        lab = doc.true_labels
        if lab is None or not np.all(np.isin(lab, (0, 1))):
            raise ValueError(
                f"document {doc.doc_id}: no-crowd training needs fully known labels"
            )
        Delta = lab.astype(np.float64)
    else:
        Delta = params.xi.astype(np.float64).copy()
        y = doc.crowd_labels
        if y is not None and y.size:
            provided = y != -1
            yf = y.astype(np.float64)
            rho = params.rho[:, None]
            mapped = yf * rho + (1.0 - yf) * (1.0 - rho)
            votes = provided.sum(axis=0)
            num = np.where(provided, mapped, 0.0).sum(axis=0)
            with np.errstate(invalid="ignore"):
                Delta = np.where(votes > 0, num / np.maximum(votes, 1), Delta)
    Delta = clamp_probability(Delta, DELTA_CLAMP)

    per_pair = doc.n_words / (C * T)
    gamma = np.empty_like(params.alpha)
    gamma[:, 1, :] = params.alpha[:, 1, :] + Delta[:, None] * per_pair
    gamma[:, 0, :] = params.alpha[:, 0, :] + (1.0 - Delta)[:, None] * per_pair
    return DocVariational(delta=delta, Delta=Delta, phi=phi, gamma=gamma)


# ---------------------------------------------------------------------------
# model files
# ---------------------------------------------------------------------------


def _format_array(arr: np.ndarray) -> str:
    return " ".join(format(float(v), ".17g") for v in np.asarray(arr, dtype=np.float64).ravel())


def save_model(path, params: ModelParams, dims: Dimensions, mode: str,
               smoothed: Optional[SmoothedTopicState] = None) -> None:
    """Write the versioned text model file (17 significant digits, row-major)."""
    mode = normalize_mode(mode)
    smoothing = params.eta is not None
    if smoothing and smoothed is None:
        raise ValueError("save_model: smoothed mode requires the chi state")
    arrays = [("alpha", params.alpha), ("xi", params.xi), ("rho", params.rho)]
    if smoothing:
        arrays += [("eta", params.eta), ("chi", smoothed.chi)]
    else:
        arrays += [("beta", params.beta)]
    lines = [
        MODEL_FILE_HEADER,
        f"dims D={dims.D} C={dims.C} T={dims.T} V={dims.V} K={dims.K}",
        f"mode {mode}",
        f"smoothing {'on' if smoothing else 'off'}",
    ]
    for name, arr in arrays:
        size = 0 if arr is None else arr.size
        lines.append(f"array {name} {size}")
        lines.append("" if arr is None else _format_array(arr))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_model(path):
    """Read a model file; returns (params, dims, smoothed_state_or_None, mode)."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != MODEL_FILE_HEADER:
        raise ValueError(f"model file {path}: missing '{MODEL_FILE_HEADER}' header")
    if len(lines) < 4:
        raise ValueError(f"model file {path}: truncated header block")

    try:
        fields = dict(part.split("=") for part in lines[1].split()[1:])
        dims = Dimensions(D=int(fields["D"]), C=int(fields["C"]), T=int(fields["T"]),
                          V=int(fields["V"]), K=int(fields["K"]))
    except (KeyError, ValueError, IndexError) as exc:
        raise ValueError(f"model file {path}: bad dims line: {lines[1]!r}") from exc
    if not lines[2].startswith("mode "):
        raise ValueError(f"model file {path}: bad mode line: {lines[2]!r}")
    mode = normalize_mode(lines[2].split(None, 1)[1])
    if lines[3] not in ("smoothing on", "smoothing off"):
        raise ValueError(f"model file {path}: bad smoothing line: {lines[3]!r}")
    smoothing = lines[3].endswith("on")

    arrays = {}
    i = 4
    while i < len(lines):
        if not lines[i].strip():
            i += 1
            continue
        head = lines[i].split()
        if len(head) != 3 or head[0] != "array":
            raise ValueError(f"model file {path}: line {i + 1}: expected 'array <name> <size>'")
        name, size = head[1], int(head[2])
        if i + 1 >= len(lines):
            raise ValueError(f"model file {path}: array {name}: missing values line")
        vals = np.array([float(t) for t in lines[i + 1].split()], dtype=np.float64)
        if vals.size != size:
            raise ValueError(f"model file {path}: array {name}: expected {size} values, got {vals.size}")
        arrays[name] = vals
        i += 2

    expected = {"alpha", "xi", "rho"} | ({"eta", "chi"} if smoothing else {"beta"})
    missing = expected - set(arrays)
    if missing:
        raise ValueError(f"model file {path}: missing arrays: {sorted(missing)}")

    alpha = arrays["alpha"].reshape(dims.C, 2, dims.T)
    xi = arrays["xi"].reshape(dims.C)
    rho = arrays["rho"].reshape(-1)
    if smoothing:
        eta = arrays["eta"].reshape(dims.T, dims.V)
        chi = arrays["chi"].reshape(dims.T, dims.V)
        params = ModelParams(alpha=alpha, xi=xi, rho=rho, beta=None, eta=eta)
        return params, dims, SmoothedTopicState(chi=chi), mode
    beta = arrays["beta"].reshape(dims.T, dims.V)
    params = ModelParams(alpha=alpha, xi=xi, rho=rho, beta=beta, eta=None)
    return params, dims, None, mode
